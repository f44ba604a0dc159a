//! Command-line front end. Exit codes: 0 success, 2 usage or configuration
//! error, 3 numeric failure, 4 I/O error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::checkpoint::{self, CheckpointError};
use crate::config::RunConfig;
use crate::data::{self, DataError, Dataset};
use crate::error::Error;
use crate::eval::{self, EvalOptions, ReportRow};
use crate::model::{build_model, FvaeModel};
use crate::objectives::LossBreakdown;
use crate::rng::SplitMix64;
use crate::train::train_with;
use crate::verify::{self, Scope};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "fvae", version, about = "Train and inspect flow-posterior VAEs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the dataset described by a config file.
    GenerateData {
        #[arg(long)]
        config: PathBuf,
        /// Binary dataset, or CSV when the name ends in `.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint, loss history and manifest.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw samples from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        /// Comma-separated temperatures; writes one file per value into `out`.
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file (`.csv` for 2-D models, `.pgm` for images), or a
        /// directory with `--sweep`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a straight line (or a 4-corner grid) between dataset points.
    Interpolate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Row indices: two for a line, four for a grid.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        rows: Vec<usize>,
        #[arg(long, default_value_t = 8)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bits per dimension, energy distance and 2-D normalization.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 64)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run self-check suites.
    Check {
        /// invertibility, logdet, gradients, reductions, normalization or all.
        #[arg(default_value = "all")]
        scope: String,
    },
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config { .. } | Error::Width { .. } | Error::WrongMode { .. } | Error::InvalidArgument(_) => EXIT_USAGE,
            Error::NonFinite { .. } | Error::Autodiff(_) => EXIT_NUMERIC,
            Error::Data(DataError::Parameter(_)) => EXIT_USAGE,
            Error::Data(_) | Error::Checkpoint(_) => EXIT_IO,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
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
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::GenerateData { config, out } => cmd_generate(&config, &out),
        Command::Train { config, out } => cmd_train(&config, out.as_deref()).map(|_| ()),
        Command::Sample {
            checkpoint,
            n,
            temperature,
            sweep,
            seed,
            out,
        } => cmd_sample(&checkpoint, n, temperature, sweep.as_deref(), seed, &out).map(|_| ()),
        Command::Interpolate {
            checkpoint,
            data,
            rows,
            steps,
            out,
        } => cmd_interpolate(&checkpoint, &data, &rows, steps, &out),
        Command::Eval {
            checkpoint,
            data,
            k,
            seed,
            out,
        } => cmd_eval(&checkpoint, &data, k, seed, &out),
        Command::Check { scope } => cmd_check(&scope),
    }
}

fn read_config(path: &Path) -> CliResult<RunConfig> {
    let text = RunConfig::load(path).map_err(|e| CliError::io(path, e))?;
    Ok(RunConfig::parse(&text)?)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn load_model(path: &Path) -> CliResult<FvaeModel> {
    checkpoint::load_checkpoint(path).map_err(|e| match e {
        Error::Checkpoint(c) => CliError::io(path, c),
        other => other.into(),
    })
}

fn load_data(path: &Path) -> CliResult<Dataset> {
    data::load_dataset(path).map_err(|e| CliError::io(path, e))
}

fn manifest(command: &str, lines: &[(&str, String)]) -> String {
    let mut s = format!("command = {command}\nversion = {}\n", env!("CARGO_PKG_VERSION"));
    for (k, v) in lines {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

pub fn cmd_generate(config: &Path, out: &Path) -> CliResult<()> {
    let cfg = read_config(config)?;
    let ds = cfg.data.generate()?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    data::save_dataset(&ds, out).map_err(|e| CliError::io(out, e))?;
    println!("wrote {} points of dimension {} to {}", ds.len(), ds.dim, out.display());
    Ok(())
}

pub fn history_csv(history: &[LossBreakdown], log_every: usize) -> String {
    let mut s = String::from("step");
    for t in LossBreakdown::TERMS {
        s.push(',');
        s.push_str(t);
    }
    s.push('\n');
    for (i, h) in history.iter().enumerate() {
        let _ = write!(s, "{}", i * log_every);
        for v in h.values() {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// Artifacts written by `train`.
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub manifest: PathBuf,
}

pub fn cmd_train(config: &Path, out: Option<&Path>) -> CliResult<TrainArtifacts> {
    let cfg = read_config(config)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.clone());
    let all = cfg.data.generate()?;
    // Tiny datasets can leave one side of the split empty; train on all of it then.
    let train_set = all.split(cfg.data.seed).map(|(t, _)| t).unwrap_or_else(|_| all.clone());
    let mut model = build_model(&cfg.model_config(all.dim))?;
    create_dir(&dir)?;

    let history = train_with(&mut model, &train_set, &cfg.train, |step, m| {
        let path = dir.join(format!("checkpoint-{step}.fvck"));
        checkpoint::save_checkpoint(m, path)
    })?;

    let art = TrainArtifacts {
        checkpoint: dir.join("checkpoint.fvck"),
        history: dir.join("history.csv"),
        manifest: dir.join("manifest.txt"),
        dir: dir.clone(),
    };
    checkpoint::save_checkpoint(&model, &art.checkpoint).map_err(|e| CliError::io(&art.checkpoint, e))?;
    write_file(&art.history, history_csv(&history, cfg.train.log_every))?;
    let text = manifest(
        "train",
        &[
            ("config_hash", cfg.hash()),
            ("train_seed", cfg.train.seed.to_string()),
            ("data_seed", cfg.data.seed.to_string()),
            ("model_seed", cfg.model.seed.to_string()),
            ("train_points", train_set.len().to_string()),
            ("checkpoint_sha256", sha256_file(&art.checkpoint)?),
        ],
    ) + "\n# effective configuration\n"
        + &cfg.canonical();
    write_file(&art.manifest, text)?;
    if let Some(last) = history.last() {
        println!("final logged loss {:.6}", last.total);
    }
    println!("wrote {}", dir.display());
    Ok(art)
}

/// Row-major tile grid of square images in `[-1, 1]` as binary PGM bytes.
pub fn pgm_grid(images: &Tensor, side: usize) -> Vec<u8> {
    let n = images.rows();
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let (w, h) = (cols * side, rows * side);
    let mut px = vec![0u8; w * h];
    for k in 0..n {
        let (tr, tc) = (k / cols, k % cols);
        for (p, v) in images.row(k).iter().enumerate() {
            let (y, x) = (tr * side + p / side, tc * side + p % side);
            px[y * w + x] = ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8;
        }
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(px);
    out
}

fn points_csv(points: &Tensor) -> String {
    let mut s = String::new();
    for i in 0..points.rows() {
        let row: Vec<String> = points.row(i).iter().map(f64::to_string).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn write_points(model: &FvaeModel, points: &Tensor, path: &Path) -> CliResult<()> {
    match model.config().image_side {
        Some(side) => write_file(path, pgm_grid(points, side)),
        None => write_file(path, points_csv(points)),
    }
}

fn extension(model: &FvaeModel) -> &'static str {
    if model.config().image_side.is_some() {
        "pgm"
    } else {
        "csv"
    }
}

pub fn cmd_sample(
    checkpoint: &Path,
    n: usize,
    temperature: f64,
    sweep: Option<&[f64]>,
    seed: u64,
    out: &Path,
) -> CliResult<Vec<PathBuf>> {
    let model = load_model(checkpoint)?;
    let temps: Vec<f64> = sweep.map(<[f64]>::to_vec).unwrap_or_else(|| vec![temperature]);
    if temps.iter().any(|t| !(*t >= 0.0)) {
        return Err(CliError::usage("temperatures must be >= 0"));
    }
    let mut written = Vec::new();
    if sweep.is_some() {
        create_dir(out)?;
    } else if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    for &t in &temps {
        let mut rng = SplitMix64::new(seed);
        let samples = model.sample(n, t, &mut rng)?;
        let path = if sweep.is_some() {
            out.join(format!("samples_T{t}.{}", extension(&model)))
        } else {
            out.to_path_buf()
        };
        write_points(&model, &samples, &path)?;
        written.push(path);
    }
    let dir = if sweep.is_some() { out.to_path_buf() } else { out.with_extension("manifest.txt") };
    let manifest_path = if sweep.is_some() { dir.join("manifest.txt") } else { dir };
    let temps_text: Vec<String> = temps.iter().map(f64::to_string).collect();
    write_file(
        &manifest_path,
        manifest(
            "sample",
            &[
                ("checkpoint_sha256", sha256_file(checkpoint)?),
                ("n", n.to_string()),
                ("temperatures", temps_text.join(",")),
                ("seed", seed.to_string()),
            ],
        ),
    )?;
    for p in &written {
        println!("wrote {}", p.display());
    }
    Ok(written)
}

pub fn cmd_interpolate(checkpoint: &Path, data_path: &Path, rows: &[usize], steps: usize, out: &Path) -> CliResult<()> {
    let model = load_model(checkpoint)?;
    let ds = load_data(data_path)?;
    if ds.dim != model.data_dim() {
        return Err(Error::Width {
            expected: model.data_dim(),
            got: ds.dim,
        }
        .into());
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= ds.len()) {
        return Err(CliError::usage(format!("row {bad} out of range for {} points", ds.len())));
    }
    let points = match rows.len() {
        2 => model.interpolate(ds.row(rows[0]), ds.row(rows[1]), steps)?,
        4 => model.interpolate_grid([ds.row(rows[0]), ds.row(rows[1]), ds.row(rows[2]), ds.row(rows[3])], steps)?,
        k => return Err(CliError::usage(format!("--rows needs 2 or 4 indices, got {k}"))),
    };
    write_points(&model, &points, out)?;
    let rows_text: Vec<String> = rows.iter().map(usize::to_string).collect();
    write_file(
        &out.with_extension("manifest.txt"),
        manifest(
            "interpolate",
            &[
                ("checkpoint_sha256", sha256_file(checkpoint)?),
                ("data_sha256", sha256_file(data_path)?),
                ("rows", rows_text.join(",")),
                ("steps", steps.to_string()),
            ],
        ),
    )?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn cmd_eval(checkpoint: &Path, data_path: &Path, k: usize, seed: u64, out: &Path) -> CliResult<()> {
    let model = load_model(checkpoint)?;
    let ds = load_data(data_path)?;
    let opts = EvalOptions {
        k,
        seed,
        ..EvalOptions::default()
    };
    let metrics = eval::evaluate(&model, &ds, &opts)?;
    let hash = checkpoint::config_hash(model.config());
    let rows: Vec<ReportRow> = metrics
        .into_iter()
        .map(|(metric, value)| ReportRow {
            metric,
            value,
            config_hash: hash.clone(),
        })
        .collect();
    let mut buf = Vec::new();
    eval::write_report(&rows, &mut buf).map_err(|e| CliError::io(out, e))?;
    write_file(out, &buf)?;
    for r in &rows {
        println!("{} = {}", r.metric, r.value);
    }
    Ok(())
}

pub fn cmd_check(scope: &str) -> CliResult<()> {
    let scope = Scope::parse(scope).ok_or_else(|| {
        CliError::usage(format!(
            "unknown scope {scope:?}; expected invertibility, logdet, gradients, reductions, normalization or all"
        ))
    })?;
    let reports = verify::run(scope)?;
    let mut failed = 0;
    for r in &reports {
        println!("{}:", r.suite.name());
        for c in &r.checks {
            println!("  {c}");
        }
        failed += r.failures().count();
    }
    if failed > 0 {
        return Err(CliError {
            code: EXIT_NUMERIC,
            message: format!("{failed} check(s) exceeded their tolerance"),
        });
    }
    Ok(())
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        Self {
            code: EXIT_IO,
            message: e.to_string(),
        }
    }
}
