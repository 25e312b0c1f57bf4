//! Classifier-based scoring of generated sketches and the ablation harness.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{labels as labels_of, split_dataset, DatasetSplit, SketchSample};
use crate::error::{invalid, mismatch, Result};
use crate::loss::LossKind;
use crate::models::{ablation_variants, count_params, Classifier, Encoder, FeatureStack, ParamReport};
use crate::nn::{Bound, Mode};
use crate::tensor::{Tape, Tensor};
use crate::train::{
    generate, pretrain_encoder, pretrain_loss_network, train_eval_classifier, train_end_to_end, EpochLog, FitReport, Frozen, TrainState,
};

/// Fraction of rows whose true label is among the `k` highest scores. Ties
/// are broken towards the lower class index.
pub fn topk_accuracy(scores: &[f32], classes: usize, labels: &[usize], k: usize) -> Result<f64> {
    if labels.is_empty() {
        return Err(invalid("evaluate_topk", "no samples"));
    }
    if classes == 0 || scores.len() != labels.len() * classes {
        return Err(mismatch("evaluate_topk", &[labels.len(), classes], &[scores.len()]));
    }
    let mut hits = 0;
    for (row, &label) in scores.chunks(classes).zip(labels) {
        if label >= classes {
            return Err(invalid("evaluate_topk", format!("label {label} out of range")));
        }
        let s = row[label];
        let rank = row
            .iter()
            .enumerate()
            .filter(|&(j, &v)| v > s || (v == s && j < label))
            .count();
        if rank < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

/// Classifier scores `[N * classes]` for `[1, H, W]` sketches, in batches.
pub fn classify(classifier: &Classifier, sketches: &[Tensor], batch: usize) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(sketches.len() * classifier.classes());
    for chunk in sketches.chunks(batch.max(1)) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::stack(chunk)?);
        let mut b = Bound::new(&classifier.params, Mode::Eval, false);
        let y = classifier.forward(&mut tape, &mut b, x)?;
        out.extend_from_slice(tape.value(y).data());
    }
    Ok(out)
}

/// Top-k for each requested k.
pub fn evaluate_topk(classifier: &Classifier, sketches: &[Tensor], labels: &[usize], ks: &[usize]) -> Result<Vec<f64>> {
    if sketches.is_empty() {
        return Err(invalid("evaluate_topk", "no samples"));
    }
    let scores = classify(classifier, sketches, 64)?;
    ks.iter()
        .map(|&k| topk_accuracy(&scores, classifier.classes(), labels, k))
        .collect()
}

/// Rows of the ablation, in table order. Each adds one axis to the previous
/// psim method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "mse")]
    Mse,
    #[serde(rename = "psim")]
    Psim,
    #[serde(rename = "psim+flip")]
    PsimFlip,
    #[serde(rename = "psim+flip+adain")]
    PsimFlipAdain,
    #[serde(rename = "+skip1")]
    Skip1,
    #[serde(rename = "+skip")]
    Skip,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Mse,
        Method::Psim,
        Method::PsimFlip,
        Method::PsimFlipAdain,
        Method::Skip1,
        Method::Skip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mse => "mse",
            Method::Psim => "psim",
            Method::PsimFlip => "psim+flip",
            Method::PsimFlipAdain => "psim+flip+adain",
            Method::Skip1 => "+skip1",
            Method::Skip => "+skip",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }

    /// `base` with the loss, flip and decoder axes set for this method and
    /// the end-to-end seeds offset by `seed`.
    pub fn configure(self, base: &RunConfig, seed: u64) -> RunConfig {
        let mut cfg = base.clone();
        let (kind, flip, variant) = match self {
            Method::Mse => (LossKind::Mse, false, 0),
            Method::Psim => (LossKind::Psim, false, 0),
            Method::PsimFlip => (LossKind::Psim, true, 0),
            Method::PsimFlipAdain => (LossKind::Psim, true, 1),
            Method::Skip1 => (LossKind::Psim, true, 2),
            Method::Skip => (LossKind::Psim, true, 3),
        };
        cfg.loss.kind = kind;
        cfg.train.flip = flip;
        cfg.decoder.model = ablation_variants()[variant].1.clone();
        cfg.decoder.seed = base.decoder.seed.wrapping_add(seed);
        cfg.train.seed = base.train.seed.wrapping_add(seed);
        cfg
    }
}

/// Scores of one trained method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    /// `(k, accuracy)` for every requested k.
    pub topk: Vec<(usize, f64)>,
    pub samples: usize,
    pub config_hash: u32,
}

impl EvalReport {
    pub fn top(&self, k: usize) -> Option<f64> {
        self.topk.iter().find(|(kk, _)| *kk == k).map(|(_, v)| *v)
    }
}

/// Networks trained once and shared by every ablation cell.
pub struct Pretrained {
    pub encoder: Encoder,
    pub trunk: FeatureStack,
    pub classifier: Classifier,
    pub encoder_report: FitReport,
    pub trunk_report: FitReport,
    pub classifier_report: FitReport,
}

impl Pretrained {
    pub fn train(cfg: &RunConfig, samples: &[SketchSample]) -> Result<Self> {
        let (encoder, encoder_report) = pretrain_encoder(cfg, samples)?;
        let (trunk, _, trunk_report) = pretrain_loss_network(cfg, samples)?;
        let (classifier, classifier_report) = train_eval_classifier(cfg, samples)?;
        Ok(Self {
            encoder,
            trunk,
            classifier,
            encoder_report,
            trunk_report,
            classifier_report,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CellOutcome {
    Done(EvalReport),
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub method: Method,
    pub seed: u64,
    pub params: ParamReport,
    pub config_hash: u32,
    pub history: Vec<EpochLog>,
    pub outcome: CellOutcome,
}

impl AblationCell {
    pub fn top(&self, k: usize) -> Option<f64> {
        match &self.outcome {
            CellOutcome::Done(r) => r.top(k),
            CellOutcome::Failed(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationMatrix {
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub ks: Vec<usize>,
    pub cells: Vec<AblationCell>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

impl AblationMatrix {
    pub fn cells_of(&self, method: Method) -> impl Iterator<Item = &AblationCell> {
        self.cells.iter().filter(move |c| c.method == method)
    }

    /// Median over the seeds that completed.
    pub fn median(&self, method: Method, k: usize) -> Option<f64> {
        median(self.cells_of(method).filter_map(|c| c.top(k)).collect())
    }

    /// One row per `(method, seed)` and a `median` row per method.
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("failed".to_string(), |v| format!("{v:.6}"));
        let mut s = String::from("method,top1,top5,params_total,params_embeddings,params_skip,seed\n");
        for &m in &self.methods {
            let mut params = None;
            for c in self.cells_of(m) {
                params = Some(c.params);
                s.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    m.name(),
                    fmt(c.top(1)),
                    fmt(c.top(5)),
                    c.params.total,
                    c.params.embeddings,
                    c.params.skip,
                    c.seed
                ));
            }
            if let Some(p) = params {
                s.push_str(&format!(
                    "{},{},{},{},{},{},median\n",
                    m.name(),
                    fmt(self.median(m, 1)),
                    fmt(self.median(m, 5)),
                    p.total,
                    p.embeddings,
                    p.skip
                ));
            }
        }
        s
    }
}

/// Trains and scores one cell. Errors are returned to the caller, which
/// records them against the cell.
pub fn run_cell(cfg: &RunConfig, samples: &[SketchSample], split: &DatasetSplit, shared: &Pretrained) -> Result<(EvalReport, Vec<EpochLog>)> {
    let classes = shared.classifier.classes();
    let mut state = TrainState::new(cfg, classes)?;
    let frozen = Frozen {
        encoder: &shared.encoder,
        trunk: Some(&shared.trunk),
        classifier: Some(&shared.classifier),
    };
    train_end_to_end(cfg, samples, &split.train, &split.test, &frozen, &mut state, None)?;
    let generated = generate(&shared.encoder, &state.decoder, samples, &split.test)?;
    let labels: Vec<usize> = split.test.iter().map(|&i| samples[i].label).collect();
    let ks: Vec<usize> = cfg.eval.topk.iter().map(|&k| k.min(classes)).collect();
    let acc = evaluate_topk(&shared.classifier, &generated, &labels, &ks)?;
    let report = EvalReport {
        method: String::new(),
        topk: cfg.eval.topk.iter().copied().zip(acc).collect(),
        samples: labels.len(),
        config_hash: cfg.hash(),
    };
    Ok((report, state.history))
}

/// Trains every `(method, seed)` cell on one shared split and scores the
/// held-out generations. Cells run on up to `jobs` threads; results do not
/// depend on `jobs`.
pub fn run_ablation(
    base: &RunConfig,
    samples: &[SketchSample],
    shared: &Pretrained,
    methods: &[Method],
    seeds: &[u64],
    jobs: usize,
) -> Result<AblationMatrix> {
    if methods.is_empty() || seeds.is_empty() {
        return Err(invalid("run_ablation", "need at least one method and one seed"));
    }
    let split = split_dataset(&labels_of(samples), base.data.train_ratio, base.data.seed, "split")?;
    let classes = shared.classifier.classes();
    let plan: Vec<(Method, u64)> = methods.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    let run = |&(method, seed): &(Method, u64)| -> Result<AblationCell> {
        let cfg = method.configure(base, seed);
        let params = count_params(&cfg.encoder.model, &cfg.decoder.model, classes)?;
        let (outcome, history) = match run_cell(&cfg, samples, &split, shared) {
            Ok((mut r, history)) => {
                r.method = method.name().to_string();
                (CellOutcome::Done(r), history)
            }
            Err(e) => (CellOutcome::Failed(e.to_string()), Vec::new()),
        };
        Ok(AblationCell {
            method,
            seed,
            params,
            config_hash: cfg.hash(),
            history,
            outcome,
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| invalid("run_ablation", e.to_string()))?;
    let cells = pool.install(|| plan.par_iter().map(run).collect::<Result<Vec<_>>>())?;
    Ok(AblationMatrix {
        methods: methods.to_vec(),
        seeds: seeds.to_vec(),
        ks: base.eval.topk.clone(),
        cells,
    })
}
