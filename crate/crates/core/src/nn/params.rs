use crate::tensor::{BatchStats, Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Optimized by gradient descent unless the store is frozen.
    Weight,
    /// Running statistics; updated outside the optimizer.
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub kind: ParamKind,
}

/// Named parameters of one model component, in creation order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T = f32> {
    entries: Vec<ParamEntry<T>>,
    frozen: bool,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            frozen: false,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>, kind: ParamKind) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            tensor,
            kind,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        !self.frozen && self.entries[id.0].kind == ParamKind::Weight
    }

    /// Number of scalars in `Weight` entries whose name starts with `prefix`.
    pub fn count_weights(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Weight && e.name.starts_with(prefix))
            .map(|e| e.tensor.numel())
            .sum()
    }

    pub fn total_weights(&self) -> usize {
        self.count_weights("")
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    tensor: e.tensor.cast(),
                    kind: e.kind,
                })
                .collect(),
            frozen: self.frozen,
        }
    }

    /// Replaces the tensors of `self` with those of `other`, which must have
    /// the same layout.
    pub fn copy_from(&mut self, other: &ParamStore<T>) -> crate::Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(crate::error::invalid("copy_from", "parameter count differs"));
        }
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(crate::error::invalid(
                    "copy_from",
                    format!("layout differs at {}", a.name),
                ));
            }
            a.tensor = b.tensor.clone();
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for batch norm, dropout active.
    Train,
    /// Running statistics, dropout disabled.
    Eval,
}

pub(crate) struct PendingStats<T> {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: BatchStats<T>,
    pub momentum: f64,
}

/// Binds a [`ParamStore`] onto a tape for one forward pass. Each parameter
/// becomes a single leaf, so repeated use accumulates gradient.
pub struct Bound<'s, T: Real> {
    store: &'s ParamStore<T>,
    vars: Vec<Option<Var>>,
    pub mode: Mode,
    grad: bool,
    pub(crate) pending: Vec<PendingStats<T>>,
}

impl<'s, T: Real> Bound<'s, T> {
    /// `grad = false` binds every parameter as a constant.
    pub fn new(store: &'s ParamStore<T>, mode: Mode, grad: bool) -> Self {
        Self {
            store,
            vars: vec![None; store.len()],
            mode,
            grad,
            pending: Vec::new(),
        }
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn var(&mut self, tape: &mut Tape<T>, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let requires = self.grad && self.store.is_trainable(id);
        let v = tape.leaf(self.store.get(id).clone(), requires);
        self.vars[id.0] = Some(v);
        v
    }

    /// Gradients of every bound trainable parameter after `tape.backward`.
    pub fn grads(&self, tape: &Tape<T>) -> Vec<(ParamId, Vec<T>)> {
        self.vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = (*v)?;
                tape.grad(v).map(|g| (ParamId(i), g.to_vec()))
            })
            .collect()
    }

    /// Running-statistic updates gathered from training-mode batch norms.
    pub fn take_stat_updates(&mut self) -> StatUpdates<T> {
        StatUpdates(std::mem::take(&mut self.pending))
    }
}

/// Deferred batch-norm running-average updates.
pub struct StatUpdates<T>(pub(crate) Vec<PendingStats<T>>);

impl<T: Real> StatUpdates<T> {
    pub fn apply(self, store: &mut ParamStore<T>) {
        for p in self.0 {
            let m = T::c(p.momentum);
            for (r, &b) in store.get_mut(p.mean).data_mut().iter_mut().zip(&p.stats.mean) {
                *r = (T::one() - m) * *r + m * b;
            }
            for (r, &b) in store.get_mut(p.var).data_mut().iter_mut().zip(&p.stats.var) {
                *r = (T::one() - m) * *r + m * b;
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}
