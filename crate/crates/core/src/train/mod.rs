//! Optimizer, checkpoints, classifier pretraining and end-to-end training.

mod checkpoint;
mod optim;

pub use checkpoint::{BlobInfo, Checkpoint, MAGIC, VERSION};
pub use optim::{adam_step, AdamConfig, AdamState};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::config::{PhaseConfig, RunConfig};
use crate::data::{augment_image, augment_sketch, flip_horizontal, split_dataset, AugmentSpec, ImageJitter, SketchSample};
use crate::error::{Error, Result};
use crate::eval::topk_accuracy;
use crate::loss::{self, LossKind};
use crate::models::{Classifier, Decoder, Encoder, EncoderHead, FeatureStack, TrunkHead};
use crate::nn::{Bound, Mode, ParamId, ParamStore};
use crate::rng::{self, Rng};
use crate::tensor::{Tape, Tensor, Var};

/// How classifier inputs are drawn from a sample.
#[derive(Clone, Copy, Debug)]
pub enum InputKind {
    Image { jitter: ImageJitter, flip: bool },
    Sketch(AugmentSpec),
}

/// `(sample index, sketch index)` pairs.
pub type Item = (usize, usize);

pub fn image_items(ids: &[usize]) -> Vec<Item> {
    ids.iter().map(|&i| (i, 0)).collect()
}

pub fn sketch_items(samples: &[SketchSample], ids: &[usize]) -> Vec<Item> {
    ids.iter()
        .flat_map(|&i| (0..samples[i].sketches.len()).map(move |k| (i, k)))
        .collect()
}

fn f64s(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn f32s(v: Vec<f64>) -> Vec<f32> {
    v.into_iter().map(|x| x as f32).collect()
}

/// Stacks the inputs for `items`, augmenting when `rng` is given.
pub fn assemble(samples: &[SketchSample], items: &[Item], kind: &InputKind, mut rng: Option<&mut Rng>) -> Result<(Tensor, Vec<usize>)> {
    let mut xs = Vec::with_capacity(items.len());
    let mut labels = Vec::with_capacity(items.len());
    for &(i, k) in items {
        let s = &samples[i];
        let size = s.size();
        let t = match (kind, rng.as_deref_mut()) {
            (InputKind::Image { .. }, None) => s.image.clone(),
            (InputKind::Sketch(_), None) => s.sketches[k].clone(),
            (InputKind::Image { jitter, flip }, Some(r)) => {
                let (img, _) = augment_image(&f64s(&s.image), size, jitter, *flip, r);
                Tensor::new([3, size, size], f32s(img))?
            }
            (InputKind::Sketch(spec), Some(r)) => {
                Tensor::new([1, size, size], f32s(augment_sketch(&f64s(&s.sketches[k]), size, spec, r)))?
            }
        };
        xs.push(t);
        labels.push(s.label);
    }
    Ok((Tensor::stack(&xs)?, labels))
}

/// A classifier split over one or more parameter stores.
pub trait ClassifierModel {
    fn stores(&self) -> Vec<&ParamStore>;
    fn stores_mut(&mut self) -> Vec<&mut ParamStore>;
    fn logits(&self, tape: &mut Tape, bounds: &mut [Bound<f32>], x: Var, rng: &mut Rng) -> Result<Var>;
}

/// Encoder with a temporary linear head.
pub struct ImageClassifier {
    pub encoder: Encoder,
    pub head: EncoderHead,
}

impl ClassifierModel for ImageClassifier {
    fn stores(&self) -> Vec<&ParamStore> {
        vec![&self.encoder.params, &self.head.params]
    }
    fn stores_mut(&mut self) -> Vec<&mut ParamStore> {
        vec![&mut self.encoder.params, &mut self.head.params]
    }
    fn logits(&self, tape: &mut Tape, bounds: &mut [Bound<f32>], x: Var, _: &mut Rng) -> Result<Var> {
        let (a, b) = bounds.split_at_mut(1);
        let out = self.encoder.forward(tape, &mut a[0], x)?;
        self.head.forward(tape, &mut b[0], out.bottleneck)
    }
}

/// Loss trunk with its fully-connected head.
pub struct SketchNet {
    pub trunk: FeatureStack,
    pub head: TrunkHead,
}

impl ClassifierModel for SketchNet {
    fn stores(&self) -> Vec<&ParamStore> {
        vec![&self.trunk.params, &self.head.params]
    }
    fn stores_mut(&mut self) -> Vec<&mut ParamStore> {
        vec![&mut self.trunk.params, &mut self.head.params]
    }
    fn logits(&self, tape: &mut Tape, bounds: &mut [Bound<f32>], x: Var, rng: &mut Rng) -> Result<Var> {
        let (a, b) = bounds.split_at_mut(1);
        let (_, pooled) = self.trunk.forward(tape, &mut a[0], x)?;
        self.head.forward(tape, &mut b[0], pooled, rng)
    }
}

impl ClassifierModel for Classifier {
    fn stores(&self) -> Vec<&ParamStore> {
        vec![&self.params]
    }
    fn stores_mut(&mut self) -> Vec<&mut ParamStore> {
        vec![&mut self.params]
    }
    fn logits(&self, tape: &mut Tape, bounds: &mut [Bound<f32>], x: Var, _: &mut Rng) -> Result<Var> {
        self.forward(tape, &mut bounds[0], x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub top1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub top1: f64,
    pub top5: f64,
}

/// Held-out `(top1, top5)` without augmentation.
pub fn classifier_accuracy<M: ClassifierModel>(model: &M, samples: &[SketchSample], items: &[Item], kind: &InputKind) -> Result<(f64, f64)> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut dummy = rng::stream(0, "unused", 0);
    let mut classes = 0;
    for chunk in items.chunks(64) {
        let (x, l) = assemble(samples, chunk, kind, None)?;
        let mut tape = Tape::new();
        let stores = model.stores();
        let mut bounds: Vec<_> = stores.iter().map(|s| Bound::new(*s, Mode::Eval, false)).collect();
        let xv = tape.constant(x);
        let y = model.logits(&mut tape, &mut bounds, xv, &mut dummy)?;
        classes = tape.shape(y)[1];
        scores.extend_from_slice(tape.value(y).data());
        labels.extend(l);
    }
    Ok((
        topk_accuracy(&scores, classes, &labels, 1)?,
        topk_accuracy(&scores, classes, &labels, 5.min(classes))?,
    ))
}

fn diverged(what: &str, epoch: usize, v: f64) -> Error {
    Error::Diverged(format!("{what}: loss became {v} in epoch {epoch}"))
}

/// Cross-entropy training with Adam and early stopping on held-out Top-1.
/// The parameters of the best epoch are restored at the end.
pub fn fit_classifier<M: ClassifierModel>(
    model: &mut M,
    samples: &[SketchSample],
    train: &[Item],
    test: &[Item],
    kind: &InputKind,
    phase: &PhaseConfig,
    tag: &str,
) -> Result<FitReport> {
    let mut adams: Vec<AdamState> = model.stores().iter().map(|s| AdamState::new(phase.adam, s)).collect();
    let mut best: Option<(f64, usize, Vec<ParamStore>)> = None;
    let mut history = Vec::new();
    for epoch in 0..phase.max_epochs {
        let mut r = rng::stream(phase.seed, tag, epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut r);
        let (mut total, mut batches) = (0.0, 0);
        for chunk in order.chunks(phase.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let items: Vec<Item> = chunk.iter().map(|&i| train[i]).collect();
            let (x, labels) = assemble(samples, &items, kind, Some(&mut r))?;
            let mut tape = Tape::new();
            let (grads, updates) = {
                let stores = model.stores();
                let mut bounds: Vec<_> = stores.iter().map(|s| Bound::new(*s, Mode::Train, true)).collect();
                let xv = tape.constant(x);
                let logits = model.logits(&mut tape, &mut bounds, xv, &mut r)?;
                let loss = tape.cross_entropy(logits, &labels)?;
                let lv = tape.value(loss).item() as f64;
                if !lv.is_finite() {
                    return Err(diverged(tag, epoch, lv));
                }
                total += lv;
                batches += 1;
                tape.backward(loss)?;
                let grads: Vec<_> = bounds.iter().map(|b| b.grads(&tape)).collect();
                let updates: Vec<_> = bounds.iter_mut().map(|b| b.take_stat_updates()).collect();
                (grads, updates)
            };
            for (((store, g), adam), upd) in model.stores_mut().into_iter().zip(grads).zip(&mut adams).zip(updates) {
                adam_step(store, &g, adam)?;
                upd.apply(store);
            }
        }
        let (top1, _) = classifier_accuracy(model, samples, test, kind)?;
        history.push(EpochRecord {
            epoch,
            loss: total / batches.max(1) as f64,
            top1,
        });
        match &best {
            Some((b, be, _)) if top1 <= *b => {
                if epoch - be >= phase.patience {
                    break;
                }
            }
            _ => best = Some((top1, epoch, model.stores().into_iter().cloned().collect())),
        }
    }
    let (_, best_epoch, snapshot) = best.ok_or_else(|| Error::Config(format!("{tag}: max_epochs must be positive")))?;
    for (store, saved) in model.stores_mut().into_iter().zip(&snapshot) {
        store.copy_from(saved)?;
    }
    let (top1, top5) = classifier_accuracy(model, samples, test, kind)?;
    Ok(FitReport {
        history,
        best_epoch,
        top1,
        top5,
    })
}

fn num_classes(samples: &[SketchSample]) -> usize {
    samples.iter().map(|s| s.label + 1).max().unwrap_or(0)
}

/// Trains the encoder as an image classifier, then freezes it.
pub fn pretrain_encoder(cfg: &RunConfig, samples: &[SketchSample]) -> Result<(Encoder, FitReport)> {
    let p = &cfg.encoder.pretrain;
    let split = split_dataset(&crate::data::labels(samples), p.train_ratio, p.seed, "encoder-split")?;
    let mut model = ImageClassifier {
        encoder: Encoder::build(&cfg.encoder.model, p.seed)?,
        head: EncoderHead::build(&cfg.encoder.model, num_classes(samples), p.seed)?,
    };
    let kind = InputKind::Image {
        jitter: cfg.train.jitter,
        flip: true,
    };
    let report = fit_classifier(&mut model, samples, &image_items(&split.train), &image_items(&split.test), &kind, p, "encoder")?;
    model.encoder.freeze();
    Ok((model.encoder, report))
}

/// Trains the loss network as a sketch classifier, then freezes the trunk.
pub fn pretrain_loss_network(cfg: &RunConfig, samples: &[SketchSample]) -> Result<(FeatureStack, TrunkHead, FitReport)> {
    let p = &cfg.loss.pretrain;
    let split = split_dataset(&crate::data::labels(samples), p.train_ratio, p.seed, "loss-split")?;
    let mut model = SketchNet {
        trunk: FeatureStack::build(&cfg.loss.trunk, p.seed)?,
        head: TrunkHead::build(&cfg.loss.trunk, num_classes(samples), p.seed)?,
    };
    let kind = InputKind::Sketch(cfg.loss.augment);
    let report = fit_classifier(
        &mut model,
        samples,
        &sketch_items(samples, &split.train),
        &sketch_items(samples, &split.test),
        &kind,
        p,
        "loss",
    )?;
    model.trunk.freeze();
    model.head.params.freeze();
    Ok((model.trunk, model.head, report))
}

/// Trains the independent scoring classifier on ground-truth sketches.
pub fn train_eval_classifier(cfg: &RunConfig, samples: &[SketchSample]) -> Result<(Classifier, FitReport)> {
    let p = &cfg.eval.pretrain;
    let split = split_dataset(&crate::data::labels(samples), p.train_ratio, p.seed, "eval-split")?;
    let mut model = Classifier::build(&cfg.eval.classifier, num_classes(samples), p.seed)?;
    let kind = InputKind::Sketch(cfg.eval.augment);
    let report = fit_classifier(
        &mut model,
        samples,
        &sketch_items(samples, &split.train),
        &sketch_items(samples, &split.test),
        &kind,
        p,
        "eval",
    )?;
    model.params.freeze();
    Ok((model, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub heldout_top1: Option<f64>,
}

/// Everything that changes during end-to-end training.
pub struct TrainState {
    pub decoder: Decoder,
    pub adam: AdamState,
    /// Next epoch to run.
    pub epoch: usize,
    pub history: Vec<EpochLog>,
    pub best_top1: Option<(f64, usize)>,
    pub stopped: bool,
}

impl TrainState {
    pub fn new(cfg: &RunConfig, classes: usize) -> Result<Self> {
        let decoder = Decoder::build(&cfg.encoder.model, &cfg.decoder.model, classes, cfg.decoder.seed)?;
        let adam = AdamState::new(cfg.train.adam, &decoder.params);
        Ok(Self {
            decoder,
            adam,
            epoch: 0,
            history: Vec::new(),
            best_top1: None,
            stopped: false,
        })
    }
}

impl TrainState {
    /// Decoder, optimizer moments, epoch counter and history. Every random
    /// stream is keyed by `(train.seed, epoch)`, so the epoch is the whole
    /// RNG state. The frozen encoder is stored alongside so inference needs
    /// only this file.
    pub fn to_checkpoint(&self, cfg: &RunConfig, encoder: &Encoder, classes: usize) -> Result<Checkpoint> {
        let meta = serde_json::json!({
            "kind": "end-to-end",
            "config": serde_json::to_value(cfg)?,
            "classes": classes,
            "epoch": self.epoch,
            "adam_step": self.adam.step,
            "history": serde_json::to_value(&self.history)?,
            "best_top1": serde_json::to_value(self.best_top1)?,
            "stopped": self.stopped,
            "rng": { "seed": cfg.train.seed, "next_epoch_stream": self.epoch },
        });
        let mut ck = Checkpoint::new(meta);
        ck.add_store("encoder", &encoder.params);
        ck.add_store("decoder", &self.decoder.params);
        ck.add_adam("adam", &self.adam);
        Ok(ck)
    }

    /// Inverse of [`TrainState::to_checkpoint`]; returns the state and the
    /// frozen encoder.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(RunConfig, Self, Encoder, usize)> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if ck.meta["kind"] != "end-to-end" {
            return Err(bad("not an end-to-end checkpoint"));
        }
        let cfg: RunConfig = serde_json::from_value(ck.meta["config"].clone())?;
        let classes = ck.meta["classes"].as_u64().ok_or_else(|| bad("missing classes"))? as usize;
        let mut state = TrainState::new(&cfg, classes)?;
        ck.load_store("decoder", &mut state.decoder.params)?;
        state.epoch = ck.meta["epoch"].as_u64().ok_or_else(|| bad("missing epoch"))? as usize;
        let step = ck.meta["adam_step"].as_u64().ok_or_else(|| bad("missing adam_step"))?;
        state.adam = ck.load_adam("adam", cfg.train.adam, step, state.decoder.params.len())?;
        state.history = serde_json::from_value(ck.meta["history"].clone())?;
        state.best_top1 = serde_json::from_value(ck.meta["best_top1"].clone())?;
        state.stopped = ck.meta["stopped"].as_bool().ok_or_else(|| bad("missing stopped"))?;
        let mut encoder = Encoder::build(&cfg.encoder.model, cfg.encoder.pretrain.seed)?;
        ck.load_store("encoder", &mut encoder.params)?;
        encoder.freeze();
        Ok((cfg, state, encoder, classes))
    }
}

/// Checkpoint of one pretrained component with its config and report.
pub fn component_checkpoint(kind: &str, cfg: &RunConfig, classes: usize, report: &FitReport, store: &ParamStore) -> Result<Checkpoint> {
    let meta = serde_json::json!({
        "kind": kind,
        "config": serde_json::to_value(cfg)?,
        "classes": classes,
        "report": serde_json::to_value(report)?,
    });
    let mut ck = Checkpoint::new(meta);
    ck.add_store(kind, store);
    Ok(ck)
}

fn component_meta(ck: &Checkpoint, kind: &str) -> Result<(RunConfig, usize)> {
    if ck.meta["kind"] != kind {
        return Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {}", ck.meta["kind"])));
    }
    let cfg: RunConfig = serde_json::from_value(ck.meta["config"].clone())?;
    let classes = ck.meta["classes"]
        .as_u64()
        .ok_or_else(|| Error::Checkpoint("missing classes".into()))? as usize;
    Ok((cfg, classes))
}

pub fn load_encoder(ck: &Checkpoint) -> Result<Encoder> {
    let (cfg, _) = component_meta(ck, "encoder")?;
    let mut e = Encoder::build(&cfg.encoder.model, cfg.encoder.pretrain.seed)?;
    ck.load_store("encoder", &mut e.params)?;
    e.freeze();
    Ok(e)
}

pub fn load_trunk(ck: &Checkpoint) -> Result<FeatureStack> {
    let (cfg, _) = component_meta(ck, "trunk")?;
    let mut t = FeatureStack::build(&cfg.loss.trunk, cfg.loss.pretrain.seed)?;
    ck.load_store("trunk", &mut t.params)?;
    t.freeze();
    Ok(t)
}

pub fn load_classifier(ck: &Checkpoint) -> Result<Classifier> {
    let (cfg, classes) = component_meta(ck, "classifier")?;
    let mut c = Classifier::build(&cfg.eval.classifier, classes, cfg.eval.pretrain.seed)?;
    ck.load_store("classifier", &mut c.params)?;
    c.params.freeze();
    Ok(c)
}

/// Frozen networks used by end-to-end training.
pub struct Frozen<'a> {
    pub encoder: &'a Encoder,
    pub trunk: Option<&'a FeatureStack>,
    /// Scores held-out generations after every epoch when present.
    pub classifier: Option<&'a Classifier>,
}

/// Image batch with paired flips, plus the sampled target sketches.
pub fn e2e_batch(cfg: &RunConfig, samples: &[SketchSample], ids: &[usize], r: &mut Rng) -> Result<(Tensor, Tensor, Vec<usize>)> {
    let mut imgs = Vec::with_capacity(ids.len());
    let mut targets = Vec::with_capacity(ids.len());
    let mut labels = Vec::with_capacity(ids.len());
    for &i in ids {
        let s = &samples[i];
        let size = s.size();
        let k = r.gen_range(0..s.sketches.len());
        let (img, flipped) = augment_image(&f64s(&s.image), size, &cfg.train.jitter, cfg.train.flip, r);
        let mut t = f64s(&s.sketches[k]);
        if flipped {
            flip_horizontal(&mut t, size);
        }
        imgs.push(Tensor::new([3, size, size], f32s(img))?);
        targets.push(Tensor::new([1, size, size], f32s(t))?);
        labels.push(s.label);
    }
    Ok((Tensor::stack(&imgs)?, Tensor::stack(&targets)?, labels))
}

/// One optimization step; returns the loss and the decoder gradients.
pub fn e2e_step(
    cfg: &RunConfig,
    frozen: &Frozen,
    state: &mut TrainState,
    images: Tensor,
    targets: Tensor,
    labels: &[usize],
) -> Result<(f64, Vec<(ParamId, Vec<f32>)>)> {
    let mut tape = Tape::new();
    let (lv, grads, updates) = {
        let x = tape.constant(images);
        let enc = frozen.encoder.encode(&mut tape, x)?;
        let mut b = Bound::new(&state.decoder.params, Mode::Train, true);
        let y = state.decoder.forward(&mut tape, &mut b, &enc, Some(labels))?;
        let t = tape.constant(targets);
        let l = loss::loss(&mut tape, cfg.loss.kind, frozen.trunk, y, t)?;
        let lv = tape.value(l).item() as f64;
        if !lv.is_finite() {
            return Err(diverged("train", state.epoch, lv));
        }
        tape.backward(l)?;
        (lv, b.grads(&tape), b.take_stat_updates())
    };
    adam_step(&mut state.decoder.params, &grads, &mut state.adam)?;
    updates.apply(&mut state.decoder.params);
    Ok((lv, grads))
}

/// Generated sketches `[1, H, W]` for the given samples, conditioned on
/// their true labels.
pub fn generate(encoder: &Encoder, decoder: &Decoder, samples: &[SketchSample], ids: &[usize]) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(32) {
        let imgs: Vec<Tensor> = chunk.iter().map(|&i| samples[i].image.clone()).collect();
        let labels: Vec<usize> = chunk.iter().map(|&i| samples[i].label).collect();
        out.extend(sketch_images(encoder, decoder, Tensor::stack(&imgs)?, &labels)?);
    }
    Ok(out)
}

/// Runs encoder and decoder in inference mode on `[N, 3, H, W]` images.
pub fn sketch_images(encoder: &Encoder, decoder: &Decoder, images: Tensor, labels: &[usize]) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let x = tape.constant(images);
    let enc = encoder.encode(&mut tape, x)?;
    let mut b = Bound::new(&decoder.params, Mode::Eval, false);
    let y = decoder.forward(&mut tape, &mut b, &enc, Some(labels))?;
    let v = tape.value(y);
    (0..v.shape()[0])
        .map(|i| v.index_outer(i))
        .collect()
}

/// Runs epochs until `max_epochs`, early stopping, or `until_epoch`.
pub fn train_end_to_end(
    cfg: &RunConfig,
    samples: &[SketchSample],
    train_ids: &[usize],
    test_ids: &[usize],
    frozen: &Frozen,
    state: &mut TrainState,
    until_epoch: Option<usize>,
) -> Result<()> {
    if cfg.loss.kind == LossKind::Psim && frozen.trunk.is_none() {
        return Err(Error::Config("perceptual loss needs a pretrained trunk".into()));
    }
    let end = until_epoch.unwrap_or(usize::MAX).min(cfg.train.max_epochs);
    while state.epoch < end && !state.stopped {
        let epoch = state.epoch;
        let mut r = rng::stream(cfg.train.seed, "e2e", epoch as u64);
        let mut order = train_ids.to_vec();
        order.shuffle(&mut r);
        let (mut total, mut batches) = (0.0, 0);
        for chunk in order.chunks(cfg.train.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let (x, t, labels) = e2e_batch(cfg, samples, chunk, &mut r)?;
            let (lv, _) = e2e_step(cfg, frozen, state, x, t, &labels)?;
            total += lv;
            batches += 1;
        }
        let heldout_top1 = match frozen.classifier {
            Some(c) if !test_ids.is_empty() => {
                let gen = generate(frozen.encoder, &state.decoder, samples, test_ids)?;
                let labels: Vec<usize> = test_ids.iter().map(|&i| samples[i].label).collect();
                Some(crate::eval::evaluate_topk(c, &gen, &labels, &[1])?[0])
            }
            _ => None,
        };
        state.history.push(EpochLog {
            epoch,
            train_loss: total / batches.max(1) as f64,
            heldout_top1,
        });
        state.epoch += 1;
        if let Some(top1) = heldout_top1 {
            match state.best_top1 {
                Some((b, be)) if top1 <= b => {
                    if epoch - be >= cfg.train.patience {
                        state.stopped = true;
                    }
                }
                _ => state.best_top1 = Some((top1, epoch)),
            }
        }
    }
    Ok(())
}

/// Metrics log, one row per epoch.
pub fn history_csv(history: &[EpochLog]) -> String {
    let mut s = String::from("epoch,train_loss,heldout_top1\n");
    for h in history {
        let top1 = h.heldout_top1.map_or(String::new(), |v| format!("{v}"));
        s.push_str(&format!("{},{},{}\n", h.epoch, h.train_loss, top1));
    }
    s
}

/// Directly optimizes a free image against every target at once under the
/// pixelwise loss, starting from mid-grey.
pub fn optimize_free_image(targets: &[Tensor<f64>], steps: usize, adam: AdamConfig) -> Result<Tensor<f64>> {
    let first = targets.first().ok_or_else(|| Error::Config("no targets".into()))?;
    let mut store = ParamStore::<f64>::new();
    let id = store.add("image", Tensor::full(first.shape().to_vec(), 0.5), crate::nn::ParamKind::Weight);
    let mut state = AdamState::new(adam, &store);
    for _ in 0..steps {
        let mut tape = Tape::new();
        let grads = {
            let mut b = Bound::new(&store, Mode::Train, true);
            let x = b.var(&mut tape, id);
            let mut total: Option<Var> = None;
            for t in targets {
                let tv = tape.constant(t.clone());
                let l = loss::mse(&mut tape, x, tv)?;
                total = Some(match total {
                    Some(s) => tape.add(s, l)?,
                    None => l,
                });
            }
            let l = tape.scale(total.expect("non-empty"), 1.0 / targets.len() as f64)?;
            tape.backward(l)?;
            b.grads(&tape)
        };
        adam_step(&mut store, &grads, &mut state)?;
    }
    Ok(store.get(id).clone())
}
