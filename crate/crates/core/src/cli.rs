//! Command-line interface.
//!
//! Every command resolves its settings from flags, then an optional
//! `--config` key=value file, then built-in defaults (`seed` additionally
//! falls back to `MAGDC_SEED`). The resolved settings are printed and, where
//! the command has an output location, saved as a config echo that can be
//! passed back through `--config` to rerun the command.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::KvConfig;
use crate::data::{
    build_dataset, export_pgm, export_png, read_slice, write_slice, Dataset, DatasetConfig,
    SliceData,
};
use crate::error::Error;
use crate::eval::{evaluate, infer_image_with_mask};
use crate::gradcheck::{run_suite, TOLERANCE};
use crate::io::{read_text, write_atomic};
use crate::kspace::central_mask;
use crate::model::ModelConfig;
use crate::train::{train, Checkpoint, TrainConfig};

pub const SEED_ENV: &str = "MAGDC_SEED";
pub const RUN_CONFIG_FILE: &str = "run_config.txt";
pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "magdc", version, about = "Magnitude-image data-consistent MR super-resolution")]
pub struct Cli {
    /// key=value settings file; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic phantom dataset.
    GenData(GenDataArgs),
    /// Train a ResNet or an unrolled network.
    Train(TrainArgs),
    /// Evaluate the LR input and checkpoints on the test split.
    Eval(EvalArgs),
    /// Run one checkpoint on one LR slice.
    Infer(InferArgs),
    /// Export a slice magnitude as an 8-bit image.
    ExportPng(ExportArgs),
    /// Finite-difference check of every differentiable operation.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub phase_span_deg: Option<f64>,
    #[arg(long)]
    pub factor: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Resnet,
    Unrolled,
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        <Self as ValueEnum>::from_str(s, false)
    }
}

impl Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Resnet => "resnet",
            ModelKind::Unrolled => "unrolled",
        })
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Unrolled iterations N; required for `--model unrolled`.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub filters: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Accept iteration counts outside 1..=4.
    #[arg(long)]
    pub allow_any_n: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    pub checkpoints: Vec<PathBuf>,
    /// Method name the paired tests compare against.
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output slice; a PNG is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub factor: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// `.pgm` writes binary PGM, anything else PNG.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Merges flags with the config file and records what was used.
struct Resolver {
    file: KvConfig,
    resolved: KvConfig,
    allowed: Vec<&'static str>,
}

impl Resolver {
    fn new(file: KvConfig, command: &str) -> Self {
        let mut resolved = KvConfig::new();
        resolved.set("command", command);
        Self {
            file,
            resolved,
            allowed: vec!["command"],
        }
    }

    fn from_file<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        self.file.get_parsed(key).map_err(|e| usage(e.to_string()))
    }

    fn value<T: FromStr + Display>(&mut self, key: &'static str, flag: Option<T>, default: Option<T>) -> CliResult<T>
    where
        T::Err: Display,
    {
        self.allowed.push(key);
        let v = match flag {
            Some(v) => v,
            None => match self.from_file(key)? {
                Some(v) => v,
                None => default.ok_or_else(|| usage(format!("missing required setting --{}", key.replace('_', "-"))))?,
            },
        };
        self.resolved.set(key, &v);
        Ok(v)
    }

    fn optional<T: FromStr + Display>(&mut self, key: &'static str, flag: Option<T>) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        self.allowed.push(key);
        let v = match flag {
            Some(v) => Some(v),
            None => self.from_file(key)?,
        };
        if let Some(v) = &v {
            self.resolved.set(key, v);
        }
        Ok(v)
    }

    fn path(&mut self, key: &'static str, flag: Option<PathBuf>) -> CliResult<PathBuf> {
        self.allowed.push(key);
        let v = flag
            .or_else(|| self.file.get(key).map(PathBuf::from))
            .ok_or_else(|| usage(format!("missing required setting --{key}")))?;
        self.resolved.set(key, v.display());
        Ok(v)
    }

    fn seed(&mut self, flag: Option<u64>) -> CliResult<u64> {
        let env = match std::env::var(SEED_ENV) {
            Ok(s) => Some(
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| usage(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?,
            ),
            Err(_) => None,
        };
        let from_file = self.from_file::<u64>("seed")?;
        self.value("seed", flag.or(from_file), Some(env.unwrap_or(0)))
    }

    fn finish(self) -> CliResult<KvConfig> {
        if let Some(k) = self.file.keys().find(|k| !self.allowed.contains(k)) {
            return Err(usage(format!("unknown config key {k:?} for this command")));
        }
        if let Some(cmd) = self.file.get("command") {
            if Some(cmd) != self.resolved.get("command") {
                return Err(usage(format!("config file is for command {cmd:?}")));
            }
        }
        Ok(self.resolved)
    }
}

fn echo(cfg: &KvConfig, file: Option<&Path>) -> CliResult<()> {
    print!("{}", cfg.render());
    if let Some(f) = file {
        write_atomic(f, cfg.render().as_bytes())?;
    }
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn cmd_gen_data(a: GenDataArgs, file: KvConfig) -> CliResult<()> {
    let mut r = Resolver::new(file, "gen-data");
    let d = DatasetConfig::default();
    let cfg = DatasetConfig {
        n_slices: r.value("n", a.n, Some(d.n_slices))?,
        size: r.value("size", a.size, Some(d.size))?,
        phase_span_deg: r.value("phase_span_deg", a.phase_span_deg, Some(d.phase_span_deg))?,
        factor: r.value("factor", a.factor, Some(d.factor))?,
        seed: r.seed(a.seed)?,
    };
    let out = r.path("out", a.out)?;
    let resolved = r.finish()?;
    if cfg.n_slices < crate::data::dataset::MIN_SLICES {
        return Err(usage(format!(
            "--n must be at least {}, got {}",
            crate::data::dataset::MIN_SLICES,
            cfg.n_slices
        )));
    }
    if cfg.size < 16 {
        return Err(usage(format!("--size must be at least 16, got {}", cfg.size)));
    }
    if !(0.0..360.0).contains(&cfg.phase_span_deg) {
        return Err(usage("--phase-span-deg must lie in [0, 360)"));
    }
    if cfg.factor == 0 || cfg.factor > cfg.size {
        return Err(usage("--factor must lie in 1..=size"));
    }
    echo(&resolved, Some(&out.join(RUN_CONFIG_FILE)))?;
    let manifest = build_dataset(&cfg, &out)?;
    let c = manifest.counts();
    println!(
        "wrote {} slices to {}: train {} / val {} / test {}",
        manifest.entries.len(),
        out.display(),
        c.train,
        c.val,
        c.test
    );
    Ok(())
}

fn cmd_train(a: TrainArgs, file: KvConfig) -> CliResult<()> {
    let mut r = Resolver::new(file, "train");
    let defaults = TrainConfig::default();
    let dm = ModelConfig::default();
    let data = r.path("data", a.data)?;
    let kind: ModelKind = r.value("model", a.model, Some(ModelKind::Unrolled))?;
    let iterations = r.optional("iterations", a.iterations)?;
    let allow_any_n = r.value("allow_any_n", a.allow_any_n.then_some(true), Some(false))?;
    let n_iterations = match (kind, iterations) {
        (ModelKind::Resnet, None) => 0,
        (ModelKind::Resnet, Some(_)) => {
            return Err(usage("--iterations applies only to --model unrolled"))
        }
        (ModelKind::Unrolled, None) => {
            return Err(usage("--model unrolled requires --iterations"))
        }
        (ModelKind::Unrolled, Some(n)) => {
            if n == 0 || (!allow_any_n && n > 4) {
                return Err(usage(format!(
                    "--iterations must be in 1..=4 (got {n}); pass --allow-any-n to override"
                )));
            }
            n
        }
    };
    let cfg = TrainConfig {
        learning_rate: r.value("lr", a.lr, Some(defaults.learning_rate))?,
        epochs: r.value("epochs", a.epochs, Some(defaults.epochs))?,
        batch_size: r.value("batch_size", a.batch_size, Some(defaults.batch_size))?,
        model: ModelConfig {
            n_iterations,
            n_filters: r.value("filters", a.filters, Some(dm.n_filters))?,
            n_blocks: r.value("blocks", a.blocks, Some(dm.n_blocks))?,
        },
        seed: r.seed(a.seed)?,
        checkpoint_dir: None,
        ..defaults
    };
    let out = r.path("out", a.out)?;
    let resolved = r.finish()?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    echo(&resolved, Some(&out.join(RUN_CONFIG_FILE)))?;

    let dataset = Dataset::open(&data)?;
    let outcome = train(
        &dataset,
        &TrainConfig {
            checkpoint_dir: Some(out.clone()),
            ..cfg
        },
    )?;
    for e in &outcome.log {
        println!("epoch {:>3}  train_mae {:.6}  val_mae {:.6}", e.epoch, e.train_mae, e.val_mae);
    }
    println!(
        "final checkpoint {} (best validation at epoch {})",
        out.join(crate::train::FINAL_CHECKPOINT).display(),
        outcome.best_val_epoch
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs, file: KvConfig) -> CliResult<()> {
    let mut r = Resolver::new(file, "eval");
    let data = r.path("data", a.data)?;
    r.allowed.push("checkpoints");
    let checkpoints: Vec<PathBuf> = if a.checkpoints.is_empty() {
        r.file
            .get("checkpoints")
            .map(|s| s.split_whitespace().map(PathBuf::from).collect())
            .unwrap_or_default()
    } else {
        a.checkpoints
    };
    if checkpoints.iter().any(|p| p.to_string_lossy().contains(char::is_whitespace)) {
        return Err(usage("checkpoint paths must not contain whitespace"));
    }
    r.resolved.set(
        "checkpoints",
        checkpoints.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(" "),
    );
    let baseline = r.optional::<String>("baseline", a.baseline)?;
    let out = r.path("out", a.out)?;
    let resolved = r.finish()?;
    echo(&resolved, Some(&out.join(RUN_CONFIG_FILE)))?;

    let models = checkpoints
        .iter()
        .map(|p| Checkpoint::load(p).map(|c| c.model))
        .collect::<crate::Result<Vec<_>>>()?;
    let dataset = Dataset::open(&data)?;
    let (report, names) = evaluate(&dataset, &models, baseline.as_deref())?;
    write_atomic(&out.join("report.csv"), report.to_csv().as_bytes())?;
    write_atomic(&out.join("per_slice.csv"), report.per_slice_csv(&names).as_bytes())?;
    let table = report.render_table();
    write_atomic(&out.join("table.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

fn cmd_infer(a: InferArgs, file: KvConfig) -> CliResult<()> {
    let mut r = Resolver::new(file, "infer");
    let ckpt = r.path("checkpoint", a.checkpoint)?;
    let input = r.path("input", a.input)?;
    let out = r.path("out", a.out)?;
    let factor = r.value("factor", a.factor, Some(crate::data::dataset::DEFAULT_FACTOR))?;
    let resolved = r.finish()?;
    echo(&resolved, Some(&sibling(&out, ".config.txt")))?;

    let model = Checkpoint::load(&ckpt)?.model;
    let lr = read_slice(&input)?.magnitude();
    let (h, w) = lr.dims();
    let mask = central_mask(h, w, factor).map_err(|e| usage(e.to_string()))?;
    let sr = infer_image_with_mask(&model, &lr, &mask)?;
    write_slice(&out, &SliceData::Real(sr.clone()))?;
    let png = out.with_extension("png");
    export_png(&sr, &png)?;
    println!("wrote {} and {}", out.display(), png.display());
    Ok(())
}

fn cmd_export(a: ExportArgs, file: KvConfig) -> CliResult<()> {
    let mut r = Resolver::new(file, "export-png");
    let input = r.path("input", a.input)?;
    let out = r.path("out", a.out)?;
    let resolved = r.finish()?;
    echo(&resolved, None)?;
    let img = read_slice(&input)?.magnitude();
    if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
        export_pgm(&img, &out)?;
    } else {
        export_png(&img, &out)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs, file: KvConfig) -> CliResult<()> {
    let mut r = Resolver::new(file, "gradcheck");
    let seed = r.seed(a.seed)?;
    let resolved = r.finish()?;
    echo(&resolved, None)?;
    let reports = run_suite(seed)?;
    let mut ok = true;
    for rep in &reports {
        let pass = rep.passed(TOLERANCE);
        ok &= pass;
        println!(
            "{:<44} max_rel_err {:.3e}  ({} entries)  {}",
            rep.name,
            rep.max_rel_err,
            rep.n_checked,
            if pass { "ok" } else { "FAIL" }
        );
    }
    if ok {
        println!("all {} checks below {TOLERANCE:e}", reports.len());
        Ok(())
    } else {
        Err(CliError::Runtime(Error::InvalidArgument(format!(
            "gradient check exceeded tolerance {TOLERANCE:e}"
        ))))
    }
}

/// Run a parsed command.
pub fn run(cli: Cli) -> std::result::Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => KvConfig::parse(&read_text(p)?, p).map_err(|e| usage(e.to_string()))?,
        None => KvConfig::new(),
    };
    match cli.command {
        Command::GenData(a) => cmd_gen_data(a, file),
        Command::Train(a) => cmd_train(a, file),
        Command::Eval(a) => cmd_eval(a, file),
        Command::Infer(a) => cmd_infer(a, file),
        Command::ExportPng(a) => cmd_export(a, file),
        Command::Gradcheck(a) => cmd_gradcheck(a, file),
    }
}

/// Parse arguments, run, and map the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            match e {
                CliError::Usage(_) => EXIT_USAGE,
                CliError::Runtime(_) => EXIT_RUNTIME,
            }
        }
    }
}
