//! The `gcvit` command line.
//!
//! Exit codes: 0 on success, 1 when a command fails at runtime (including a
//! failed gradient check), 2 for usage errors such as unknown flags or missing
//! input files. Configuration is layered: built-in defaults, then the TOML
//! files given with `--config`, `--model-config` and `--policy`, then
//! individual flags.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::ModelConfig;
use crate::data::augment::{preprocess_eval, AugmentPolicy};
use crate::data::manifest::{load_dataset, write_class_names, DatasetManifest, CLASSES_FILE};
use crate::data::split::{stratified_split, SplitSpec};
use crate::data::synth::synth_dataset;
use crate::data::decode_all;
use crate::eval::{evaluate, export};
use crate::gradcheck::{self, GradcheckOptions};
use crate::image::ImageTensor;
use crate::model::{load_checkpoint, save_checkpoint, CheckpointMeta, GcVit, Parameters};
use crate::train::{fit, read_records, write_records, LabeledImages, Schedule, TrainConfig};

pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SPLIT_SUMMARY_FILE: &str = "split_summary.csv";

#[derive(Debug, Parser)]
#[command(name = "gcvit", version, about = "Train and evaluate a global-context vision transformer on the CPU")]
pub struct Cli {
    /// Run on a single worker thread so every output is bit-reproducible.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Worker threads (ignored with --deterministic).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic folder-per-class dataset.
    Synth(SynthArgs),
    /// Scan a dataset folder and write stratified train/val manifests.
    Prepare(PrepareArgs),
    /// Train a model from train/val manifests.
    Train(Box<TrainArgs>),
    /// Evaluate a checkpoint and export report tables.
    Eval(EvalArgs),
    /// Classify a single image.
    Predict(PredictArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 12)]
    pub classes: usize,
    #[arg(long, default_value_t = 8)]
    pub per_class: usize,
    /// Side length of the square images.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Dataset root laid out as `<root>/<class_name>/<image>`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Shuffle all samples together instead of splitting each class.
    #[arg(long)]
    pub no_stratify: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 64x64 input, patch 8, two stages of widths 32 and 64.
    DeskTiny,
    /// 224x224 input, patch 16, two stages of widths 64 and 128.
    Patch16,
    /// 224x224 input, patch 4, four stages of widths 64 to 512.
    FourStage224,
}

impl Preset {
    fn config(self, num_classes: usize) -> ModelConfig {
        match self {
            Preset::DeskTiny => ModelConfig::desk_tiny(num_classes),
            Preset::Patch16 => ModelConfig::patch16_224(num_classes),
            Preset::FourStage224 => ModelConfig::four_stage_224(num_classes),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleKind {
    Cosine,
    Step,
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| format!("cannot parse `{p}` in `{s}`")))
        .collect()
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = parse_list(s)?;
    v.try_into().map_err(|_| format!("expected three comma-separated values, got `{s}`"))
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    pub model: Option<Preset>,
    /// Full model configuration as TOML; `num_classes` is taken from the data.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// Square input side length.
    #[arg(long)]
    pub input_size: Option<usize>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub stem_channels: Option<usize>,
    /// Comma-separated widths; the first one is also the embedding width.
    #[arg(long, value_delimiter = ',')]
    pub stage_dims: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub stage_depths: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub num_heads: Option<Vec<usize>>,
    #[arg(long)]
    pub mlp_ratio: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct PolicyArgs {
    /// Augmentation policy TOML.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long)]
    pub crop_size: Option<usize>,
    #[arg(long)]
    pub scale_min: Option<f64>,
    #[arg(long)]
    pub scale_max: Option<f64>,
    /// Degrees.
    #[arg(long)]
    pub max_rotation: Option<f64>,
    #[arg(long)]
    pub hflip_prob: Option<f64>,
    #[arg(long)]
    pub brightness: Option<f64>,
    #[arg(long)]
    pub contrast: Option<f64>,
    #[arg(long)]
    pub saturation: Option<f64>,
    #[arg(long, value_parser = parse_triple)]
    pub norm_mean: Option<[f64; 3]>,
    #[arg(long, value_parser = parse_triple)]
    pub norm_std: Option<[f64; 3]>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Training configuration TOML.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from an existing checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub lr_max: Option<f64>,
    #[arg(long)]
    pub lr_min: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub label_smoothing: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Seeds initialization, shuffling and augmentation.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleKind>,
    /// Epoch indices at which the step schedule decays.
    #[arg(long, value_delimiter = ',')]
    pub milestones: Option<Vec<usize>>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Train on un-augmented images.
    #[arg(long)]
    pub no_augment: bool,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest CSV to evaluate.
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    pub manifest: Option<PathBuf>,
    /// Dataset folder to evaluate instead of a manifest.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Epoch log to copy into the exported curves.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Overrides the preprocessing stored in the checkpoint.
    #[arg(long)]
    pub policy: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub policy: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "desk-tiny")]
    pub model: Preset,
    #[arg(long, default_value_t = 12)]
    pub classes: usize,
    /// Random coordinates checked per tensor in the end-to-end check.
    #[arg(long, default_value_t = 3)]
    pub samples_per_tensor: usize,
    /// Perturb the analytic gradients; the check must then fail.
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

/// Separates bad invocations (exit 2) from runtime failures (exit 1).
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
    /// The command ran but its verification did not pass.
    Check,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<crate::Error> for Failure {
    fn from(e: crate::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

/// Writes to stdout, treating a closed pipe (`gcvit predict ... | head`) as success.
fn emit(text: &str) -> CliResult {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
            Err(Failure::Runtime(anyhow::Error::new(e).context("writing to stdout")))
        }
        _ => Ok(()),
    }
}

fn require_file(path: &Path, what: &str) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} {} does not exist", path.display())))
    }
}

fn require_dir(path: &Path, what: &str) -> CliResult {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} {} is not a directory", path.display())))
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn echo<T: Serialize>(title: &str, value: &T) {
    match toml::to_string(value) {
        Ok(text) => log::info!("effective {title} configuration\n{}", text.trim_end()),
        Err(e) => log::warn!("cannot render {title} configuration: {e}"),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn resolve_train_config(args: &TrainArgs) -> anyhow::Result<TrainConfig> {
    let mut cfg: TrainConfig = match &args.config {
        Some(p) => read_toml(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = args.$f { cfg.$f = v; } )* };
    }
    set!(batch_size, max_epochs, lr_max, lr_min, weight_decay, label_smoothing, patience, seed);
    if args.no_augment {
        cfg.augment = false;
    }
    match args.schedule {
        Some(ScheduleKind::Cosine) => cfg.schedule = Schedule::Cosine,
        Some(ScheduleKind::Step) if !matches!(cfg.schedule, Schedule::Step { .. }) => {
            cfg.schedule = Schedule::Step {
                milestones: vec![],
                gamma: 0.1,
            }
        }
        _ => {}
    }
    if args.milestones.is_some() || args.gamma.is_some() {
        match &mut cfg.schedule {
            Schedule::Step { milestones, gamma } => {
                if let Some(m) = &args.milestones {
                    *milestones = m.clone();
                }
                if let Some(g) = args.gamma {
                    *gamma = g;
                }
            }
            Schedule::Cosine => bail!("--milestones and --gamma need the step schedule"),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn resolve_model_config(args: &ModelArgs, num_classes: usize) -> anyhow::Result<ModelConfig> {
    let mut cfg = match (&args.model_config, args.model) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let mut table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            table.insert("num_classes".into(), toml::Value::Integer(num_classes as i64));
            table
                .try_into()
                .with_context(|| format!("parsing {}", p.display()))?
        }
        (None, preset) => preset.unwrap_or(Preset::DeskTiny).config(num_classes),
    };
    if let Some(s) = args.input_size {
        cfg.input_size = (s, s);
    }
    if let Some(p) = args.patch_size {
        cfg.patch_size = p;
    }
    if let Some(c) = args.stem_channels {
        cfg.stem_channels = c;
    }
    if let Some(d) = &args.stage_dims {
        cfg.stage_dims = d.clone();
        if let Some(&first) = d.first() {
            cfg.embed_dim = first;
        }
    }
    if let Some(d) = &args.stage_depths {
        cfg.stage_depths = d.clone();
    }
    if let Some(h) = &args.num_heads {
        cfg.num_heads = h.clone();
    }
    if let Some(r) = args.mlp_ratio {
        cfg.mlp_ratio = r;
    }
    cfg.num_classes = num_classes;
    cfg.validate()?;
    Ok(cfg)
}

/// The policy for a model: file values when given, otherwise the default
/// policy sized to the model input, then individual flags.
pub fn resolve_policy(args: &PolicyArgs, model: &ModelConfig) -> anyhow::Result<AugmentPolicy> {
    let mut p = match &args.policy {
        Some(path) => AugmentPolicy::load(path)?,
        None => AugmentPolicy::with_crop_size(model.input_size.0),
    };
    if let Some(v) = args.crop_size {
        p.crop_size = v;
    }
    if let Some(v) = args.scale_min {
        p.scale_range[0] = v;
    }
    if let Some(v) = args.scale_max {
        p.scale_range[1] = v;
    }
    if let Some(v) = args.max_rotation {
        p.max_rotation = v;
    }
    if let Some(v) = args.hflip_prob {
        p.hflip_prob = v;
    }
    if let Some(v) = args.brightness {
        p.jitter_limits.brightness = v;
    }
    if let Some(v) = args.contrast {
        p.jitter_limits.contrast = v;
    }
    if let Some(v) = args.saturation {
        p.jitter_limits.saturation = v;
    }
    if let Some(v) = args.norm_mean {
        p.normalization_mean = v;
    }
    if let Some(v) = args.norm_std {
        p.normalization_std = v;
    }
    p.validate()?;
    let (h, w) = model.input_size;
    if p.crop_size != h || p.crop_size != w {
        bail!(
            "policy crop size {} does not match the model input {h}x{w}",
            p.crop_size
        );
    }
    Ok(p)
}

fn cmd_synth(a: &SynthArgs) -> CliResult {
    let m = synth_dataset(&a.out, a.classes, a.per_class, a.size, a.seed)?;
    emit(&format!(
        "wrote {} images in {} classes to {}\n",
        m.len(),
        m.num_classes(),
        a.out.display()
    ))?;
    Ok(())
}

fn cmd_prepare(a: &PrepareArgs) -> CliResult {
    require_dir(&a.data, "dataset root")?;
    let spec = SplitSpec {
        train_fraction: a.train_fraction,
        seed: a.seed,
        stratified: !a.no_stratify,
    };
    echo("split", &spec);
    let root = a
        .data
        .canonicalize()
        .with_context(|| format!("resolving {}", a.data.display()))?;
    let manifest = load_dataset(&root)?;
    let (train, val) = stratified_split(&manifest, &spec)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    train.write_csv(&a.out.join("train.csv"), "train")?;
    val.write_csv(&a.out.join("val.csv"), "val")?;
    write_class_names(&a.out.join(CLASSES_FILE), &manifest.class_names)?;

    let summary = a.out.join(SPLIT_SUMMARY_FILE);
    let mut w = csv::Writer::from_path(&summary).map_err(|e| crate::Error::csv(&summary, e))?;
    let (tc, vc) = (train.counts(), val.counts());
    let rows = std::iter::once(["class_id".into(), "class_name".into(), "total".into(), "train".into(), "val".into()])
        .chain(manifest.class_names.iter().enumerate().map(|(c, name)| {
            [c.to_string(), name.clone(), (tc[c] + vc[c]).to_string(), tc[c].to_string(), vc[c].to_string()]
        }))
        .chain(std::iter::once([
            String::new(),
            "total".into(),
            manifest.len().to_string(),
            train.len().to_string(),
            val.len().to_string(),
        ]));
    for r in rows {
        w.write_record(&r).map_err(|e| crate::Error::csv(&summary, e))?;
    }
    w.flush().with_context(|| format!("writing {}", summary.display()))?;
    emit(&format!(
        "{} images in {} classes: {} train, {} val\n",
        manifest.len(),
        manifest.num_classes(),
        train.len(),
        val.len()
    ))?;
    Ok(())
}

fn read_manifest(path: &Path, what: &str) -> CliResult<DatasetManifest> {
    require_file(path, what)?;
    Ok(DatasetManifest::read_csv(path)?)
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    best_epoch: Option<usize>,
    best_val_accuracy: Option<f64>,
    epochs_run: usize,
    stopped_early: bool,
    num_parameters: usize,
    train_samples: usize,
    val_samples: usize,
}

fn cmd_train(a: &TrainArgs) -> CliResult {
    let train_m = read_manifest(&a.train, "training manifest")?;
    let val_m = read_manifest(&a.val, "validation manifest")?;
    for (p, what) in [(&a.config, "training config"), (&a.init, "initial checkpoint")] {
        if let Some(p) = p {
            require_file(p, what)?;
        }
    }
    if let Some(p) = &a.model.model_config {
        require_file(p, "model config")?;
    }
    if let Some(p) = &a.policy.policy {
        require_file(p, "policy file")?;
    }
    if train_m.class_names != val_m.class_names {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "training and validation manifests use different class lists"
        )));
    }
    let classes = train_m.num_classes();
    let cfg = resolve_train_config(a)?;
    let (model, model_cfg) = match &a.init {
        Some(p) => {
            let (m, meta) = load_checkpoint(p)?;
            if m.num_classes() != classes {
                return Err(Failure::Runtime(anyhow::anyhow!(
                    "{} has {} classes but the manifests have {classes}",
                    p.display(),
                    m.num_classes()
                )));
            }
            if !meta.class_names.is_empty() && meta.class_names != train_m.class_names {
                log::warn!("class names in {} differ from the manifests", p.display());
            }
            let c = m.config.clone();
            (m, c)
        }
        None => {
            let c = resolve_model_config(&a.model, classes)?;
            (GcVit::init(c.clone(), cfg.seed)?, c)
        }
    };
    let policy = resolve_policy(&a.policy, &model_cfg)?;
    echo("model", &model_cfg);
    echo("train", &cfg);
    echo("policy", &policy);
    log::info!("parameters: {}", model.num_parameters());

    let started = Instant::now();
    let train = LabeledImages::new(decode_all(&train_m)?, train_m.labels())?;
    let val = LabeledImages::new(decode_all(&val_m)?, val_m.labels())?;
    let outcome = fit(model, &train, &val, &policy, &cfg)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let meta = CheckpointMeta {
        class_names: train_m.class_names.clone(),
        best_epoch: outcome.best_epoch,
        best_val_accuracy: outcome.best_val_accuracy,
        train_config: Some(serde_json::to_value(&cfg).context("serializing the training config")?),
        policy: Some(policy),
    };
    save_checkpoint(&a.out.join(CHECKPOINT_FILE), &outcome.best, &meta)?;
    write_records(&a.out.join(TRAIN_LOG_FILE), &outcome.records)?;
    if outcome.records.is_empty() {
        crate::eval::export::write_curves(&a.out.join(TRAIN_LOG_FILE), &[])?;
    }
    let summary = TrainSummary {
        best_epoch: outcome.best_epoch,
        best_val_accuracy: outcome.best_val_accuracy,
        epochs_run: outcome.records.len(),
        stopped_early: outcome.stopped_early,
        num_parameters: outcome.best.num_parameters(),
        train_samples: train.len(),
        val_samples: val.len(),
    };
    write_json(&a.out.join(SUMMARY_FILE), &summary)?;
    log::info!("training took {:.1}s", started.elapsed().as_secs_f64());
    let line = match (summary.best_epoch, summary.best_val_accuracy) {
        (Some(e), Some(acc)) => format!(
            "best validation accuracy {acc:.4} at epoch {e} of {}; checkpoint {}\n",
            summary.epochs_run,
            a.out.join(CHECKPOINT_FILE).display()
        ),
        _ => format!("no epochs run; initial checkpoint {}\n", a.out.join(CHECKPOINT_FILE).display()),
    };
    emit(&line)
}

fn inference_policy(explicit: Option<&PathBuf>, meta: &CheckpointMeta, model: &GcVit) -> CliResult<AugmentPolicy> {
    let p = match (explicit, &meta.policy) {
        (Some(path), _) => AugmentPolicy::load(path)?,
        (None, Some(p)) => p.clone(),
        (None, None) => AugmentPolicy::with_crop_size(model.config.input_size.0),
    };
    if p.crop_size != model.config.input_size.0 {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "policy crop size {} does not match the model input {:?}",
            p.crop_size,
            model.config.input_size
        )));
    }
    Ok(p)
}

fn cmd_eval(a: &EvalArgs) -> CliResult {
    require_file(&a.checkpoint, "checkpoint")?;
    if let Some(p) = &a.policy {
        require_file(p, "policy file")?;
    }
    if let Some(p) = &a.log {
        require_file(p, "epoch log")?;
    }
    let manifest = match (&a.manifest, &a.data) {
        (Some(m), _) => read_manifest(m, "manifest")?,
        (None, Some(d)) => {
            require_dir(d, "dataset root")?;
            load_dataset(d)?
        }
        (None, None) => return Err(Failure::Usage("either --manifest or --data is required".into())),
    };
    let (model, meta) = load_checkpoint(&a.checkpoint)?;
    if manifest.num_classes() != model.num_classes() {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "checkpoint has {} classes but the manifest has {}",
            model.num_classes(),
            manifest.num_classes()
        )));
    }
    if !meta.class_names.is_empty() && meta.class_names != manifest.class_names {
        log::warn!("class names in the manifest differ from the checkpoint; using the manifest's");
    }
    let policy = inference_policy(a.policy.as_ref(), &meta, &model)?;
    let ev = evaluate(&model, &manifest, &policy)?;
    let records = match &a.log {
        Some(p) => read_records(p)?,
        None => Vec::new(),
    };
    export(&ev.report, &ev.matrix, &records, &a.out)?;
    emit(&format!("accuracy: {:.4}\n", ev.report.accuracy))?;
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> CliResult {
    require_file(&a.checkpoint, "checkpoint")?;
    require_file(&a.image, "image")?;
    let (model, meta) = load_checkpoint(&a.checkpoint)?;
    let policy = inference_policy(a.policy.as_ref(), &meta, &model)?;
    let image = ImageTensor::load(&a.image)?;
    let probs = model.forward(&preprocess_eval(&image, &policy)?)?;
    let name = |c: usize| {
        meta.class_names
            .get(c)
            .cloned()
            .unwrap_or_else(|| format!("class_{c}"))
    };
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&i, &j| probs[j].total_cmp(&probs[i]).then(i.cmp(&j)));
    let mut text = format!("prediction: {} ({:.4})\n", name(order[0]), probs[order[0]]);
    for c in order {
        text += &format!("{}\t{:.6}\n", name(c), probs[c]);
    }
    emit(&text)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> CliResult {
    let opts = GradcheckOptions {
        seed: a.seed,
        model: a.model.config(a.classes),
        samples_per_tensor: a.samples_per_tensor,
        corrupt: a.corrupt_gradient,
    };
    opts.model.validate()?;
    let started = Instant::now();
    let report = gradcheck::run(&opts)?;
    for c in &report.checks {
        emit(&format!(
            "{:<24} max rel error {:.3e}  threshold {:.0e}  worst {}  ({} coordinates)  {}\n",
            c.name,
            c.max_rel_error,
            c.threshold,
            c.worst_tensor,
            c.coordinates,
            if c.passed() { "PASS" } else { "FAIL" }
        ))?;
    }
    log::info!("gradient check took {:.1}s", started.elapsed().as_secs_f64());
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}

fn configure_threads(cli: &Cli) -> CliResult {
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(anyhow::anyhow!("configuring worker threads: {e}")))?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> CliResult {
    configure_threads(&cli)?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Prepare(a) => cmd_prepare(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            1
        }
        Err(Failure::Check) => {
            eprintln!("gradient check failed");
            1
        }
    }
}
