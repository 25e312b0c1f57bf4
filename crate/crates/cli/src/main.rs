use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sketchgen::config::RunConfig;
use sketchgen::data::{self, netpbm, SketchSample, CLASS_NAMES};
use sketchgen::eval::{self, Method, Pretrained};
use sketchgen::models::{
    ablation_variants, count_params, reference_total, Conditioning, DecoderConfig, EncoderConfig, FULL_SCALE_CLASSES,
};
use sketchgen::train::{self, Checkpoint, FitReport, Frozen, TrainState};
use sketchgen::verify::gradient_suite;
use sketchgen::{Error, Tensor};

#[derive(Parser)]
#[command(name = "sketchgen", version, about = "Class-conditioned image-to-sketch synthesis")]
struct Cli {
    /// Resolve relative paths against this directory.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Phase {
    /// JSON config file or preset name (desk, desk-none, desk-adain, ...).
    #[arg(long)]
    config: String,
    /// Dataset directory written by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint; metrics go next to it with a .csv extension.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the phase seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic dataset.
    GenData {
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the loss network as a sketch classifier.
    PretrainLoss(Phase),
    /// Train the encoder as an image classifier.
    PretrainEncoder(Phase),
    /// Train the independent evaluation classifier.
    PretrainEval(Phase),
    /// End-to-end training of decoder and embeddings.
    Train {
        #[command(flatten)]
        phase: Phase,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        trunk: Option<PathBuf>,
        /// Scores held-out generations each epoch, enabling early stopping.
        #[arg(long)]
        classifier: Option<PathBuf>,
        /// Continue from an end-to-end checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Turn one PPM image into a PGM sketch.
    Sketch {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Class name or index; required for AdaIN checkpoints.
        #[arg(long)]
        class: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-k of the evaluation classifier on ground truth or generations.
    Eval {
        #[arg(long)]
        config: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        /// Score this model's held-out generations instead of ground truth.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and score every method over several seeds.
    Ablate {
        #[arg(long)]
        config: String,
        #[arg(long)]
        data: PathBuf,
        /// CSV output.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// Comma-separated subset of mse,psim,psim+flip,psim+flip+adain,+skip1,+skip.
        #[arg(long)]
        methods: Option<String>,
        /// Cells trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Decoder parameter report with the reference band check.
    ParamCount {
        /// JSON config, desk preset, or fullscale-{none,adain,skip1,skip}.
        #[arg(long)]
        config: String,
    },
    /// Finite-difference check of every differentiable layer.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: usize,
    },
}

enum Failure {
    Usage(String),
    Missing(String),
    Numeric(String),
    Verify(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Missing(_) => 3,
            Failure::Numeric(_) => 4,
            Failure::Verify(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Missing(m) | Failure::Numeric(m) | Failure::Verify(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Diverged(_) | Error::NonFinite(_) => Failure::Numeric(e.to_string()),
            Error::Io(ref io) if io.kind() == std::io::ErrorKind::NotFound => Failure::Missing(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn require(path: &Path, what: &str) -> Outcome {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Missing(format!("missing {what}: {}", path.display())))
    }
}

fn variant(name: &str) -> Option<DecoderConfig> {
    let idx = ["none", "adain", "skip1", "skip"].iter().position(|v| *v == name)?;
    Some(ablation_variants()[idx].1.clone())
}

fn load_config(arg: &str) -> Outcome<RunConfig> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{arg}: {e}")))?;
        return RunConfig::from_json(&text).map_err(|e| Failure::Usage(format!("{arg}: {e}")));
    }
    if arg == "desk" {
        return Ok(RunConfig::desk_scale());
    }
    if let Some(v) = arg.strip_prefix("desk-").and_then(variant) {
        let mut cfg = RunConfig::desk_scale();
        cfg.decoder.model = v;
        return Ok(cfg);
    }
    Err(Failure::Usage(format!("config {arg} is neither a file nor a known preset")))
}

fn load_data(dir: &Path, cfg: &mut RunConfig) -> Outcome<Vec<SketchSample>> {
    require(&dir.join("manifest.json"), "dataset manifest")?;
    let (data_cfg, samples) = data::load_dataset(dir)?;
    if data_cfg.size != cfg.data.size {
        return Err(Failure::Usage(format!(
            "dataset images are {0}x{0} but the config expects {1}x{1}",
            data_cfg.size, cfg.data.size
        )));
    }
    cfg.data = data_cfg;
    Ok(samples)
}

fn load_checkpoint(path: &Path, what: &str) -> Outcome<Checkpoint> {
    require(path, what)?;
    Ok(Checkpoint::load(path)?)
}

fn write(path: &Path, bytes: &[u8]) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Usage(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn fit_csv(report: &FitReport) -> String {
    let mut s = String::from("epoch,loss,heldout_top1\n");
    for h in &report.history {
        s.push_str(&format!("{},{},{}\n", h.epoch, h.loss, h.top1));
    }
    s
}

fn classes_of(samples: &[SketchSample]) -> usize {
    samples.iter().map(|s| s.label + 1).max().unwrap_or(0)
}

fn pretrain(kind: &str, p: &Phase) -> Outcome {
    let mut cfg = load_config(&p.config)?;
    if let Some(seed) = p.seed {
        match kind {
            "trunk" => cfg.loss.pretrain.seed = seed,
            "encoder" => cfg.encoder.pretrain.seed = seed,
            _ => cfg.eval.pretrain.seed = seed,
        }
    }
    let samples = load_data(&p.data, &mut cfg)?;
    let classes = classes_of(&samples);
    let (report, ck) = match kind {
        "trunk" => {
            let (trunk, _, r) = train::pretrain_loss_network(&cfg, &samples)?;
            let ck = train::component_checkpoint(kind, &cfg, classes, &r, &trunk.params)?;
            (r, ck)
        }
        "encoder" => {
            let (enc, r) = train::pretrain_encoder(&cfg, &samples)?;
            let ck = train::component_checkpoint(kind, &cfg, classes, &r, &enc.params)?;
            (r, ck)
        }
        _ => {
            let (clf, r) = train::train_eval_classifier(&cfg, &samples)?;
            let ck = train::component_checkpoint(kind, &cfg, classes, &r, &clf.params)?;
            (r, ck)
        }
    };
    write(&p.out, &ck.to_bytes()?)?;
    write(&p.out.with_extension("csv"), fit_csv(&report).as_bytes())?;
    println!(
        "{kind}: held-out top1 {:.4} top5 {:.4} (best epoch {}), wrote {}",
        report.top1,
        report.top5,
        report.best_epoch,
        p.out.display()
    );
    Ok(())
}

fn train_cmd(p: &Phase, encoder: &Path, trunk: Option<&Path>, classifier: Option<&Path>, resume: Option<&Path>) -> Outcome {
    let mut cfg = load_config(&p.config)?;
    if let Some(seed) = p.seed {
        cfg.train.seed = seed;
    }
    let encoder = train::load_encoder(&load_checkpoint(encoder, "encoder checkpoint")?)?;
    let trunk = match (cfg.loss.kind, trunk) {
        (sketchgen::loss::LossKind::Psim, None) => {
            return Err(Failure::Missing("missing trunk checkpoint: the perceptual loss needs --trunk".into()))
        }
        (_, Some(t)) => Some(train::load_trunk(&load_checkpoint(t, "trunk checkpoint")?)?),
        (_, None) => None,
    };
    let classifier = match classifier {
        Some(c) => Some(train::load_classifier(&load_checkpoint(c, "classifier checkpoint")?)?),
        None => None,
    };
    let samples = load_data(&p.data, &mut cfg)?;
    let classes = classes_of(&samples);
    let mut state = match resume {
        Some(r) => {
            let (saved, state, _, saved_classes) = TrainState::from_checkpoint(&load_checkpoint(r, "resume checkpoint")?)?;
            if saved != cfg || saved_classes != classes {
                return Err(Failure::Usage("resume checkpoint was written with a different config".into()));
            }
            state
        }
        None => TrainState::new(&cfg, classes)?,
    };
    let split = data::split_dataset(&data::labels(&samples), cfg.data.train_ratio, cfg.data.seed, "split")?;
    let frozen = Frozen {
        encoder: &encoder,
        trunk: trunk.as_ref(),
        classifier: classifier.as_ref(),
    };
    train::train_end_to_end(&cfg, &samples, &split.train, &split.test, &frozen, &mut state, None)?;
    write(&p.out, &state.to_checkpoint(&cfg, &encoder, classes)?.to_bytes()?)?;
    write(&p.out.with_extension("csv"), train::history_csv(&state.history).as_bytes())?;
    let last = state.history.last();
    println!(
        "trained {} epochs, final loss {:.5}, wrote {}",
        state.epoch,
        last.map_or(f64::NAN, |h| h.train_loss),
        p.out.display()
    );
    Ok(())
}

fn parse_class(arg: &str, classes: usize) -> Outcome<usize> {
    let idx = arg
        .parse::<usize>()
        .ok()
        .or_else(|| CLASS_NAMES.iter().position(|n| *n == arg));
    match idx {
        Some(i) if i < classes => Ok(i),
        _ => Err(Failure::Usage(format!(
            "unknown class {arg}; expected an index below {classes} or one of {}",
            CLASS_NAMES[..classes.min(CLASS_NAMES.len())].join(", ")
        ))),
    }
}

fn sketch_cmd(checkpoint: &Path, image: &Path, class: Option<&str>, out: &Path) -> Outcome {
    let (cfg, state, encoder, classes) = TrainState::from_checkpoint(&load_checkpoint(checkpoint, "checkpoint")?)?;
    require(image, "input image")?;
    let (w, h, px) = netpbm::decode_ppm(&netpbm::read_file(image)?)?;
    let size = cfg.data.size;
    if w != size || h != size {
        return Err(Failure::Usage(format!("image is {w}x{h}, the checkpoint expects {size}x{size}")));
    }
    let label = match (cfg.decoder.model.conditioning, class) {
        (Conditioning::Adain, None) => return Err(Failure::Usage("--class is required for AdaIN checkpoints".into())),
        (_, Some(c)) => parse_class(c, classes)?,
        (Conditioning::Batchnorm, None) => 0,
    };
    let x = Tensor::new([1, 3, size, size], px)?;
    let out_sketch = train::sketch_images(&encoder, &state.decoder, x, &[label])?;
    let dark_on_light: Vec<f32> = out_sketch[0].data().iter().map(|v| 1.0 - v).collect();
    write(out, &netpbm::encode_pgm(size, size, &dark_on_light)?)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn eval_cmd(config: &str, data_dir: &Path, classifier: &Path, checkpoint: Option<&Path>) -> Outcome {
    let mut cfg = load_config(config)?;
    let clf = train::load_classifier(&load_checkpoint(classifier, "classifier checkpoint")?)?;
    let samples = load_data(data_dir, &mut cfg)?;
    let ks: Vec<usize> = cfg.eval.topk.iter().map(|&k| k.min(clf.classes())).collect();
    let (what, sketches, labels) = match checkpoint {
        Some(c) => {
            let (model_cfg, state, encoder, _) = TrainState::from_checkpoint(&load_checkpoint(c, "checkpoint")?)?;
            let split = data::split_dataset(
                &data::labels(&samples),
                model_cfg.data.train_ratio,
                model_cfg.data.seed,
                "split",
            )?;
            let gen = train::generate(&encoder, &state.decoder, &samples, &split.test)?;
            let labels: Vec<usize> = split.test.iter().map(|&i| samples[i].label).collect();
            ("generated", gen, labels)
        }
        None => {
            let p = &cfg.eval.pretrain;
            let split = data::split_dataset(&data::labels(&samples), p.train_ratio, p.seed, "eval-split")?;
            let items = train::sketch_items(&samples, &split.test);
            let sketches: Vec<Tensor> = items.iter().map(|&(i, k)| samples[i].sketches[k].clone()).collect();
            let labels = items.iter().map(|&(i, _)| samples[i].label).collect();
            ("ground-truth", sketches, labels)
        }
    };
    let acc = eval::evaluate_topk(&clf, &sketches, &labels, &ks)?;
    let parts: Vec<String> = cfg.eval.topk.iter().zip(&acc).map(|(k, a)| format!("top{k} {a:.4}")).collect();
    println!("{what}: {} over {} sketches (config {:08x})", parts.join(" "), labels.len(), cfg.hash());
    Ok(())
}

fn ablate_cmd(config: &str, data_dir: &Path, out: &Path, seeds: u64, methods: Option<&str>, jobs: usize) -> Outcome {
    let mut cfg = load_config(config)?;
    let methods: Vec<Method> = match methods {
        Some(list) => list
            .split(',')
            .map(|m| Method::parse(m.trim()).ok_or_else(|| Failure::Usage(format!("unknown method {m}"))))
            .collect::<Outcome<_>>()?,
        None => Method::ALL.to_vec(),
    };
    if seeds == 0 {
        return Err(Failure::Usage("--seeds must be positive".into()));
    }
    let samples = load_data(data_dir, &mut cfg)?;
    let shared = Pretrained::train(&cfg, &samples)?;
    println!(
        "ground truth: eval classifier held-out top1 {:.4} top5 {:.4}",
        shared.classifier_report.top1, shared.classifier_report.top5
    );
    let seeds: Vec<u64> = (0..seeds).collect();
    let matrix = eval::run_ablation(&cfg, &samples, &shared, &methods, &seeds, jobs)?;
    let csv = matrix.to_csv();
    write(out, csv.as_bytes())?;
    print!("{csv}");
    for c in &matrix.cells {
        if let eval::CellOutcome::Failed(m) = &c.outcome {
            eprintln!("cell {} seed {} failed: {m}", c.method.name(), c.seed);
        }
    }
    Ok(())
}

fn param_count(config: &str) -> Outcome {
    let (encoder, decoder, classes) = match config.strip_prefix("fullscale-").map(variant) {
        Some(Some(v)) => (EncoderConfig::full_scale(), v, FULL_SCALE_CLASSES),
        Some(None) => return Err(Failure::Usage(format!("unknown preset {config}"))),
        None => {
            let cfg = load_config(config)?;
            (cfg.encoder.model, cfg.decoder.model, cfg.data.num_classes)
        }
    };
    let r = count_params(&encoder, &decoder, classes)?;
    println!("decoder convolutions {}", r.decoder_convs);
    println!("normalization        {}", r.norms);
    println!("class embeddings     {}", r.embeddings);
    println!("skip adapters        {}", r.skip);
    println!("total                {}", r.total);
    if config.starts_with("fullscale-") {
        let reference = reference_total(&decoder);
        let ok = (r.total as f64 - reference).abs() <= 0.15 * reference;
        println!(
            "band check: {:.2}M vs reference {:.1}M +/- 15%: {}",
            r.total as f64 / 1e6,
            reference / 1e6,
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            return Err(Failure::Verify("parameter total outside the reference band".into()));
        }
    }
    Ok(())
}

fn gradcheck(seeds: usize) -> Outcome {
    let cases = gradient_suite(seeds)?;
    let mut worst: f64 = 0.0;
    for c in &cases {
        worst = worst.max(c.max_rel_err);
        println!(
            "{:<20} {:.3e} {}",
            c.layer,
            c.max_rel_err,
            if c.passed() { "ok" } else { "FAIL" }
        );
    }
    if cases.iter().all(|c| c.passed()) {
        println!("PASS (max rel err = {worst:.3e})");
        Ok(())
    } else {
        println!("FAIL (max rel err = {worst:.3e})");
        Err(Failure::Verify("gradient check failed".into()))
    }
}

fn run(cli: Cli) -> Outcome {
    if let Some(dir) = &cli.workdir {
        std::env::set_current_dir(dir).map_err(|e| Failure::Usage(format!("--workdir {}: {e}", dir.display())))?;
    }
    match &cli.cmd {
        Cmd::GenData { config, out, seed } => {
            let mut cfg = load_config(config)?;
            if let Some(s) = seed {
                cfg.data.seed = *s;
            }
            let samples = data::generate_dataset(&cfg.data)?;
            std::fs::create_dir_all(out).map_err(|e| Failure::Usage(format!("{}: {e}", out.display())))?;
            let m = data::export_dataset(&cfg.data, &samples, out)?;
            println!("wrote {} samples to {}", m.samples.len(), out.display());
            Ok(())
        }
        Cmd::PretrainLoss(p) => pretrain("trunk", p),
        Cmd::PretrainEncoder(p) => pretrain("encoder", p),
        Cmd::PretrainEval(p) => pretrain("classifier", p),
        Cmd::Train {
            phase,
            encoder,
            trunk,
            classifier,
            resume,
        } => train_cmd(phase, encoder, trunk.as_deref(), classifier.as_deref(), resume.as_deref()),
        Cmd::Sketch {
            checkpoint,
            image,
            class,
            out,
        } => sketch_cmd(checkpoint, image, class.as_deref(), out),
        Cmd::Eval {
            config,
            data,
            classifier,
            checkpoint,
        } => eval_cmd(config, data, classifier, checkpoint.as_deref()),
        Cmd::Ablate {
            config,
            data,
            out,
            seeds,
            methods,
            jobs,
        } => ablate_cmd(config, data, out, *seeds, methods.as_deref(), *jobs),
        Cmd::ParamCount { config } => param_count(config),
        Cmd::Gradcheck { seeds } => gradcheck(*seeds),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("SKETCHGEN_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
