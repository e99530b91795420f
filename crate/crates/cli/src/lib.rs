//! Subcommands of the `ocnna` binary.
//!
//! [`run`] parses arguments and executes one subcommand, writing its
//! primary output to the given writer. Errors carry the process exit code
//! through [`CliError::exit_code`].

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ocnna_core::dataset::{split_dataset, LabeledDataset};
use ocnna_core::io::{load_dataset, load_model, save_dataset, save_model};
use ocnna_core::metrics::{evaluate_with_workers, MetricsReport};
use ocnna_core::model::{count_parameters, preset, ArchitectureSpec, ModelGraph};
use ocnna_core::parallel::default_workers;
use ocnna_core::pruner::{apply_prune, plan_prune, score_model, select_all, PruneConfig, PruneManifest};
use ocnna_core::scoring::check_percentile;
use ocnna_core::trainer::{make_texture_dataset, train, TrainConfig, SYNTHETIC_NOISE_STD};
use ocnna_core::{fixture, Error};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FORMAT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Clap(#[from] clap::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Clap(e) if !e.use_stderr() => 0,
            CliError::Clap(_) => EXIT_USAGE,
            CliError::Io { .. } => EXIT_FORMAT,
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            CliError::Core(e) if e.is_format() || matches!(e, Error::Io(_)) => EXIT_FORMAT,
            CliError::Core(_) => EXIT_USAGE,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "ocnna", version, about = "Filter-importance pruning for small CNNs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a preset, a JSON architecture, or an existing model file.
    Train(TrainArgs),
    /// Score every conv filter and print the importance reports as JSON.
    Score(ScoreArgs),
    /// Remove low-importance filters and write the smaller model.
    Prune(PruneArgs),
    /// Compare an original and a pruned model on a test set.
    Eval(EvalArgs),
    /// Prune at several percentiles and print a CSV of the results.
    Sweep(SweepArgs),
    /// Print a layer table with shapes and parameter counts.
    Info(InfoArgs),
    /// Generate a synthetic texture dataset.
    Synth(SynthArgs),
    /// Stratified split of a dataset into two files.
    Split(SplitArgs),
    /// Write the frozen desk-scale fixture (datasets and trained model).
    Fixture(FixtureArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Preset name, `.json` architecture spec, or `.ocnn` model to continue from.
    #[arg(long)]
    pub arch: String,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// Seeds both weight initialization and shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PoolArgs {
    /// Worker threads; defaults to the logical CPU count.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
}

impl PoolArgs {
    fn workers(&self) -> CliResult<usize> {
        match self.workers {
            Some(0) => Err(CliError::Usage("--workers must be positive".into())),
            Some(n) => Ok(n),
            None => Ok(default_workers()),
        }
        .and_then(|w| {
            if self.batch_size == 0 {
                Err(CliError::Usage("--batch-size must be positive".into()))
            } else {
                Ok(w)
            }
        })
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Held-out scoring dataset.
    #[arg(long)]
    pub dvar: PathBuf,
    #[arg(long, default_value_t = 40.0)]
    pub k: f64,
    #[command(flatten)]
    pub pool: PoolArgs,
    /// Write the JSON here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dvar: PathBuf,
    #[arg(long, default_value_t = 40.0)]
    pub k: f64,
    /// Per-layer override as `LAYER_INDEX=K`; may be repeated.
    #[arg(long = "layer-k", value_parser = parse_layer_k)]
    pub layer_k: Vec<(usize, f64)>,
    #[command(flatten)]
    pub pool: PoolArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path; defaults to the output path with a `.json` extension.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub original: PathBuf,
    #[arg(long)]
    pub pruned: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Also write the JSON report to this path.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[command(flatten)]
    pub pool: PoolArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dvar: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// `START..END:STEP` (END exclusive) or a comma-separated list.
    #[arg(long = "k-grid", default_value = "10..75:5", value_parser = parse_k_grid)]
    pub k_grid: KGrid,
    #[command(flatten)]
    pub pool: PoolArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = SYNTHETIC_NOISE_STD)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Share of every class that goes to `--first`.
    #[arg(long, default_value_t = 0.10)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub first: PathBuf,
    #[arg(long)]
    pub second: PathBuf,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Percentile grid for `sweep`.
#[derive(Debug, Clone, PartialEq)]
pub struct KGrid(pub Vec<f64>);

pub fn parse_k_grid(s: &str) -> Result<KGrid, String> {
    let s = s.trim();
    let values = if let Some((range, step)) = s.split_once(':') {
        let (start, end) = range
            .split_once("..")
            .ok_or_else(|| format!("expected START..END:STEP, got `{s}`"))?;
        let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
        let (start, end, step) = (num(start)?, num(end)?, num(step)?);
        if !(step > 0.0 && step.is_finite()) {
            return Err(format!("step must be positive, got {step}"));
        }
        let mut out = Vec::new();
        let mut i = 0u32;
        loop {
            let k = start + step * f64::from(i);
            if k >= end - 1e-9 {
                break;
            }
            out.push(k);
            i += 1;
        }
        out
    } else {
        s.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
            .collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() {
        return Err(format!("k grid `{s}` is empty"));
    }
    for &k in &values {
        check_percentile(k).map_err(|e| e.to_string())?;
    }
    Ok(KGrid(values))
}

fn parse_layer_k(s: &str) -> Result<(usize, f64), String> {
    let (layer, k) = s.split_once('=').ok_or_else(|| format!("expected LAYER=K, got `{s}`"))?;
    let layer = layer.trim().parse().map_err(|e| format!("layer `{layer}`: {e}"))?;
    let k = k.trim().parse().map_err(|e| format!("k `{k}`: {e}"))?;
    Ok((layer, k))
}

fn usage_k(k: f64) -> CliResult<()> {
    check_percentile(k).map_err(|e| CliError::Usage(e.to_string()))
}

fn check_path(flag: &str, p: &Path) -> CliResult<()> {
    if p.as_os_str().is_empty() {
        return Err(CliError::Usage(format!("{flag} must not be empty")));
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn emit(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes()).map_err(|source| CliError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    })
}

fn with_path(p: &Path) -> impl FnOnce(Error) -> CliError + '_ {
    move |e| match e {
        Error::Io(source) => CliError::Io {
            path: p.to_path_buf(),
            source,
        },
        other => CliError::Core(other),
    }
}

fn model_at(flag: &str, p: &Path) -> CliResult<ModelGraph> {
    check_path(flag, p)?;
    load_model(p).map_err(with_path(p))
}

fn data_at(flag: &str, p: &Path) -> CliResult<LabeledDataset> {
    check_path(flag, p)?;
    load_dataset(p).map_err(with_path(p))
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    match cli.command {
        Command::Train(a) => cmd_train(&a, out),
        Command::Score(a) => cmd_score(&a, out),
        Command::Prune(a) => cmd_prune(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Sweep(a) => cmd_sweep(&a, out),
        Command::Info(a) => cmd_info(&a, out),
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Split(a) => cmd_split(&a, out),
        Command::Fixture(a) => cmd_fixture(&a, out),
    }
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = TrainConfig {
        learning_rate: a.lr,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed: a.seed,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    check_path("--out", &a.out)?;
    let data = data_at("--data", &a.data)?;
    let [h, w, c] = data.image_shape();
    let model = if a.arch.ends_with(".ocnn") {
        model_at("--arch", Path::new(&a.arch))?
    } else if a.arch.ends_with(".json") {
        let text = fs::read_to_string(&a.arch).map_err(|source| CliError::Io {
            path: PathBuf::from(&a.arch),
            source,
        })?;
        let spec: ArchitectureSpec =
            serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", a.arch)))?;
        spec.build(a.seed)?
    } else {
        preset(&a.arch, [h, w, c], data.class_count())
            .map_err(|e| CliError::Usage(e.to_string()))?
            .build(a.seed)?
    };
    let (trained, history) = train(&model, &data, &cfg)?;
    save_model(&trained, &a.out)?;
    for (epoch, loss) in history.iter().enumerate() {
        emit(out, &format!("epoch {epoch}: loss {loss:.6}\n"))?;
    }
    Ok(())
}

pub fn cmd_score(a: &ScoreArgs, out: &mut dyn Write) -> CliResult<()> {
    usage_k(a.k)?;
    let workers = a.pool.workers()?;
    let model = model_at("--model", &a.model)?;
    let dvar = data_at("--dvar", &a.dvar)?;
    let scores = score_model(&model, &dvar, a.pool.batch_size, workers)?;
    let reports = select_all(&scores, &PruneConfig::new(a.k))?;
    let mut json = serde_json::to_string_pretty(&reports).expect("reports serialize");
    json.push('\n');
    match &a.out {
        Some(p) => write_text(p, &json),
        None => emit(out, &json),
    }
}

pub fn cmd_prune(a: &PruneArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg = PruneConfig::new(a.k);
    cfg.workers = a.pool.workers()?;
    cfg.batch_size = a.pool.batch_size;
    cfg.layer_k.extend(a.layer_k.iter().copied());
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    check_path("--out", &a.out)?;
    let model = model_at("--model", &a.model)?;
    let dvar = data_at("--dvar", &a.dvar)?;
    for layer in cfg.layer_k.keys() {
        if model.layers().get(*layer).and_then(|l| l.as_conv()).is_none() {
            return Err(CliError::Usage(format!("--layer-k: layer {layer} is not a conv layer")));
        }
    }
    let scores = score_model(&model, &dvar, cfg.batch_size, cfg.workers)?;
    let reports = select_all(&scores, &cfg)?;
    let pruned = apply_prune(&model, &plan_prune(&model, &reports)?)?;
    save_model(&pruned, &a.out)?;
    let manifest = PruneManifest::new(&model, &pruned, &reports, a.k)?;
    let manifest_path = a.manifest.clone().unwrap_or_else(|| a.out.with_extension("json"));
    write_text(
        &manifest_path,
        &(serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n"),
    )?;
    emit(
        out,
        &format!(
            "parameters {} -> {} (rpr {:.4})\n",
            manifest.np_original, manifest.np_pruned, manifest.rpr
        ),
    )
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let workers = a.pool.workers()?;
    let original = model_at("--original", &a.original)?;
    let pruned = model_at("--pruned", &a.pruned)?;
    let test = data_at("--test", &a.test)?;
    let report = evaluate_with_workers(&original, &pruned, &test, a.pool.batch_size, workers)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    if let Some(p) = &a.json {
        write_text(p, &json)?;
    }
    match a.format {
        Format::Table => emit(out, &report.to_table()),
        Format::Json => emit(out, &json),
    }
}

/// One CSV row per percentile. Scores are computed once on the original
/// model and reused for every `k`.
pub fn sweep_rows(model: &ModelGraph, dvar: &LabeledDataset, test: &LabeledDataset, grid: &[f64], batch_size: usize, workers: usize) -> CliResult<Vec<(f64, MetricsReport)>> {
    let scores = score_model(model, dvar, batch_size, workers)?;
    grid.iter()
        .map(|&k| {
            let reports = select_all(&scores, &PruneConfig::new(k))?;
            let pruned = apply_prune(model, &plan_prune(model, &reports)?)?;
            Ok((k, evaluate_with_workers(model, &pruned, test, batch_size, workers)?))
        })
        .collect()
}

pub fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> CliResult<()> {
    let workers = a.pool.workers()?;
    let model = model_at("--model", &a.model)?;
    let dvar = data_at("--dvar", &a.dvar)?;
    let test = data_at("--test", &a.test)?;
    let rows = sweep_rows(&model, &dvar, &test, &a.k_grid.0, a.pool.batch_size, workers)?;
    let mut csv = String::from("k,accuracy,params,rpr\n");
    for (k, r) in rows {
        csv.push_str(&format!("{k},{:.6},{},{:.6}\n", r.pruned_accuracy, r.np_pruned, r.rpr));
    }
    match &a.out {
        Some(p) => write_text(p, &csv),
        None => emit(out, &csv),
    }
}

pub fn cmd_info(a: &InfoArgs, out: &mut dyn Write) -> CliResult<()> {
    let model = model_at("--model", &a.model)?;
    let shapes = model.infer_shapes()?;
    let mut text = format!("model {} input {:?}\n", model.name(), model.input_shape());
    text.push_str(&format!("{:>5}  {:<10} {:>6}  {:<14} {:>10}\n", "index", "kind", "units", "output", "params"));
    for (i, layer) in model.layers().iter().enumerate() {
        let units = match layer {
            ocnna_core::Layer::Conv2d(c) => c.filters().to_string(),
            ocnna_core::Layer::Dense(d) => d.units().to_string(),
            _ => "-".into(),
        };
        text.push_str(&format!(
            "{:>5}  {:<10} {:>6}  {:<14} {:>10}\n",
            i,
            layer.kind(),
            units,
            shapes[i + 1].to_string(),
            layer.param_count()
        ));
    }
    text.push_str(&format!("total parameters: {}\n", count_parameters(&model)));
    emit(out, &text)
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> CliResult<()> {
    check_path("--out", &a.out)?;
    let d = make_texture_dataset(a.classes, a.per_class, a.size, a.noise, a.seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    save_dataset(&d, &a.out)?;
    emit(out, &format!("wrote {} images\n", d.len()))
}

pub fn cmd_split(a: &SplitArgs, out: &mut dyn Write) -> CliResult<()> {
    check_path("--first", &a.first)?;
    check_path("--second", &a.second)?;
    let d = data_at("--data", &a.data)?;
    let (first, second) = split_dataset(&d, a.fraction, a.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    save_dataset(&first, &a.first)?;
    save_dataset(&second, &a.second)?;
    emit(out, &format!("{} / {} images\n", first.len(), second.len()))
}

/// File names written by `fixture`.
pub const FIXTURE_FILES: [&str; 4] = ["train.ocnd", "test.ocnd", "dvar.ocnd", "model.ocnn"];

pub fn cmd_fixture(a: &FixtureArgs, out: &mut dyn Write) -> CliResult<()> {
    check_path("--out-dir", &a.out_dir)?;
    fs::create_dir_all(&a.out_dir).map_err(|source| CliError::Io {
        path: a.out_dir.clone(),
        source,
    })?;
    let fx = fixture::build()?;
    let [train_p, test_p, dvar_p, model_p] = FIXTURE_FILES.map(|f| a.out_dir.join(f));
    save_dataset(&fx.train, train_p)?;
    save_dataset(&fx.test, test_p)?;
    save_dataset(&fx.d_var, dvar_p)?;
    save_model(&fx.model, model_p)?;
    emit(out, &format!("wrote fixture to {}\n", a.out_dir.display()))
}
