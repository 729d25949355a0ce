//! Experiment driver: configuration files, subcommands and report files.
//!
//! Exit codes: 0 ok, 1 I/O or other runtime failure, 2 configuration,
//! 3 codebook target unreachable, 4 training divergence, 5 dimension mismatch.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{cdma_sweep, noma_sweep, rows_to_csv, BerRow};
use crate::channel::ChannelKind;
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::codebook::{generate_noc, pairwise_angles, save_codebook, Codebook, NocGenConfig};
use crate::error::{Error, Result};
use crate::losses::{LossBreakdown, LossWeights};
use crate::metrics::MetricsConfig;
use crate::optim::OptimizerKind;
use crate::trainer::{
    evaluate, mismatch_grid, train, EvalSpec, MetricsReport, MismatchEntry, ModelDims,
    ModelParameters, TrainConfig, TrainReport,
};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub kind: ChannelKind,
    /// SNR points for `eval`.
    pub snr_grid_db: Vec<f64>,
    #[serde(default = "default_mismatch_snr")]
    pub mismatch_snr_db: f64,
    #[serde(default = "default_power")]
    pub transmit_power: f64,
}

fn default_mismatch_snr() -> f64 {
    10.0
}

fn default_power() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    pub epochs: usize,
    #[serde(default = "default_steps")]
    pub steps_per_epoch: usize,
    pub num_users: usize,
    pub batch_size: usize,
    pub snr_range_db: [f64; 2],
    #[serde(default)]
    pub noiseless: bool,
    pub seed: u64,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default = "OptimizerKind::adam")]
    pub optimizer: OptimizerKind,
}

fn default_lr() -> f64 {
    1e-4
}

fn default_steps() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub num_batches: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            num_batches: 8,
            batch_size: 32,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub codebook: NocGenConfig,
    pub channel: ChannelSection,
    pub model: ModelDims,
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub metrics: MetricsConfig,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub codebook: u64,
    pub train: u64,
    pub eval: u64,
}

impl ExperimentConfig {
    /// Two users at 50°, a short run suitable for smoke tests.
    pub fn two_user_default() -> Self {
        use crate::nsm::NsmDims;
        use crate::semcodec::CodecDims;
        ExperimentConfig {
            version: CONFIG_VERSION,
            codebook: NocGenConfig::new(128, 2, 50.0),
            channel: ChannelSection {
                kind: ChannelKind::Awgn,
                snr_grid_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
                mismatch_snr_db: default_mismatch_snr(),
                transmit_power: 1.0,
            },
            model: ModelDims {
                codec: CodecDims {
                    pixels: 64,
                    hidden: 128,
                    feature: 64,
                },
                nsm: NsmDims {
                    channels: 64,
                    latent: 32,
                    code_len: 128,
                    depth: 10,
                    tokens: 1,
                },
            },
            train: TrainSection {
                learning_rate: 1e-3,
                epochs: 5,
                steps_per_epoch: 20,
                num_users: 2,
                batch_size: 32,
                snr_range_db: [0.0, 15.0],
                noiseless: false,
                seed: 7,
                weights: LossWeights::default(),
                optimizer: OptimizerKind::adam(),
            },
            eval: EvalSection::default(),
            metrics: MetricsConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config does not parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::InvalidConfig(format!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.codebook.validate()?;
        self.model.validate()?;
        self.metrics.validate()?;
        self.channel.kind.validate()?;
        if self.channel.snr_grid_db.is_empty()
            || self.channel.snr_grid_db.iter().any(|s| !s.is_finite())
        {
            return Err(Error::InvalidConfig(
                "channel.snr_grid_db must be a nonempty list of finite values".into(),
            ));
        }
        if self.model.nsm.code_len != self.codebook.length {
            return Err(Error::InvalidConfig(format!(
                "codebook length L = {} must equal model.nsm.code_len = {}",
                self.codebook.length, self.model.nsm.code_len
            )));
        }
        if self.train.num_users > self.codebook.num_users {
            return Err(Error::InvalidConfig(format!(
                "train.num_users N = {} exceeds codebook num_users K = {}",
                self.train.num_users, self.codebook.num_users
            )));
        }
        if self.eval.num_batches == 0 || self.eval.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "eval.num_batches and eval.batch_size must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            steps_per_epoch: t.steps_per_epoch,
            num_users: t.num_users,
            batch_size: t.batch_size,
            snr_range_db: t.snr_range_db,
            channel: self.channel.kind,
            noiseless: t.noiseless,
            transmit_power: self.channel.transmit_power,
            seed: t.seed,
            weights: t.weights,
            optimizer: t.optimizer,
            eval_batches: self.eval.num_batches,
        }
    }

    pub fn eval_spec(&self) -> EvalSpec {
        EvalSpec {
            num_users: self.train.num_users,
            snr_grid: self.channel.snr_grid_db.clone(),
            kind: self.channel.kind,
            num_batches: self.eval.num_batches,
            batch_size: self.eval.batch_size,
            power: self.channel.transmit_power,
            seed: self.eval.seed,
            metrics: self.metrics,
        }
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            codebook: self.codebook.seed,
            train: self.train.seed,
            eval: self.eval.seed,
        }
    }

    /// SHA-256 over the canonical JSON of every setting except `output_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        hash_of(&c)
    }
}

pub fn hash_of<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("value serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_)
        | Error::NonPowerOfTwo(_)
        | Error::TooManyUsers { .. }
        | Error::Format { .. } => 2,
        Error::TargetUnreachable { .. } => 3,
        Error::DivergenceDetected { .. } => 4,
        Error::DimMismatch(_) => 5,
        _ => 1,
    }
}

#[derive(Debug, Parser)]
#[command(name = "nocsim", version, about = "Multi-user semantic communication simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a fixed-angle codebook and report its pairwise angles.
    Codebook(CodebookArgs),
    /// Write a default two-user experiment config.
    InitConfig {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint, report and loss trace.
    Train(RunArgs),
    /// Evaluate a checkpoint over the configured SNR grid.
    Eval(RunArgs),
    /// Decode every user with every codeword.
    Mismatch(RunArgs),
    /// Classical multiple-access BER sweeps.
    Baseline(BaselineArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct CodebookArgs {
    #[arg(long)]
    pub length: usize,
    #[arg(long)]
    pub users: usize,
    #[arg(long)]
    pub angle: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, default_value_t = 2.0)]
    pub tolerance: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Defaults to `<output_dir>/checkpoint.json`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Walsh-spread CDMA, one row per user per SNR.
    Cdma,
    /// Two-user power-domain NOMA with SIC.
    Noma,
    /// Single-user unspread BPSK.
    Bpsk,
}

#[derive(Debug, Args, Serialize)]
pub struct BaselineArgs {
    #[arg(value_enum)]
    pub scheme: Scheme,
    #[arg(long, default_value_t = 2)]
    pub users: usize,
    /// `lo:step:hi` or a comma-separated list, in dB.
    #[arg(long, default_value = "0:2:10")]
    pub snr: String,
    #[arg(long, default_value_t = 100_000)]
    pub bits: usize,
    #[arg(long, default_value_t = 0.8)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

/// Parses `lo:step:hi` (inclusive) or `a,b,c`.
pub fn parse_snr_list(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidConfig(format!("cannot parse SNR list {spec:?}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let out = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let (lo, step, hi) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || hi < lo || !lo.is_finite() || !hi.is_finite() {
            return Err(bad());
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| lo + i as f64 * step).collect()
    } else {
        spec.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if out.is_empty() || out.iter().any(|v| !v.is_finite()) {
        return Err(bad());
    }
    Ok(out)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_preamble(hash: &str, seeds: &Seeds) -> String {
    format!(
        "# config_hash={hash} codebook_seed={} train_seed={} eval_seed={}\n",
        seeds.codebook, seeds.train, seeds.eval
    )
}

fn matrix_csv(preamble: &str, m: &[Vec<f64>]) -> String {
    let mut s = preamble.to_string();
    let header: Vec<String> = (1..=m.len()).map(|j| format!("user{j}")).collect();
    writeln!(s, "user,{}", header.join(",")).unwrap();
    for (i, row) in m.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(s, "{},{}", i + 1, cells.join(",")).unwrap();
    }
    s
}

pub fn loss_trace_csv(hash: &str, seeds: &Seeds, trace: &[LossBreakdown]) -> String {
    let mut s = csv_preamble(hash, seeds);
    s.push_str("epoch,recon,fair,orth,total\n");
    for (e, l) in trace.iter().enumerate() {
        writeln!(s, "{},{},{},{},{}", e + 1, l.recon, l.fair, l.orth, l.total).unwrap();
    }
    s
}

#[derive(Debug, Serialize)]
struct Stamped<'a, T> {
    config_hash: &'a str,
    seeds: Seeds,
    #[serde(flatten)]
    body: &'a T,
}

fn stamped_json<T: Serialize>(hash: &str, seeds: Seeds, body: &T) -> String {
    let mut s = serde_json::to_string_pretty(&Stamped {
        config_hash: hash,
        seeds,
        body,
    })
    .expect("report serializes");
    s.push('\n');
    s
}

fn output_dir(cfg: &ExperimentConfig, args: &RunArgs) -> Result<PathBuf> {
    let dir = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn build_codebook(cfg: &ExperimentConfig) -> Result<Codebook> {
    generate_noc(&cfg.codebook)
}

fn load_model(cfg: &ExperimentConfig, args: &RunArgs, dir: &Path) -> Result<ModelParameters> {
    let path = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| dir.join("checkpoint.json"));
    let (params, ck) = load_checkpoint(&path)?;
    if ck.dims != cfg.model {
        return Err(Error::DimMismatch(format!(
            "checkpoint {} has dims {:?}, config expects {:?}",
            path.display(),
            ck.dims,
            cfg.model
        )));
    }
    Ok(params)
}

pub fn cmd_codebook(args: &CodebookArgs) -> Result<Vec<Vec<f64>>> {
    let cfg = NocGenConfig {
        length: args.length,
        num_users: args.users,
        theta_deg: args.angle,
        iters: args.iters,
        tolerance: args.tolerance,
        seed: args.seed,
        rows: None,
    };
    let book = generate_noc(&cfg)?;
    save_codebook(&book, &args.out)?;
    let angles = pairwise_angles(&book);
    #[derive(Serialize)]
    struct Meta<'a> {
        config_hash: String,
        seed: u64,
        config: &'a NocGenConfig,
        dot_matrix: Vec<Vec<i64>>,
        angles_deg: &'a [Vec<f64>],
    }
    let meta = Meta {
        config_hash: hash_of(&cfg),
        seed: cfg.seed,
        config: &cfg,
        dot_matrix: book.dot_matrix(),
        angles_deg: &angles,
    };
    let mut meta_path = args.out.clone().into_os_string();
    meta_path.push(".meta.json");
    let mut text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    text.push('\n');
    write(Path::new(&meta_path), &text)?;
    Ok(angles)
}

pub fn cmd_train(args: &RunArgs) -> Result<TrainReport> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let dir = output_dir(&cfg, args)?;
    let hash = cfg.hash();
    let seeds = cfg.seeds();
    let book = build_codebook(&cfg)?;
    save_codebook(&book, dir.join("codebook.txt"))?;
    match train(&cfg.train_config(), &cfg.model, &book) {
        Ok((params, report)) => {
            save_checkpoint(&params, &hash, dir.join("checkpoint.json"))?;
            write(&dir.join("train_report.json"), &stamped_json(&hash, seeds, &report))?;
            write(
                &dir.join("loss_trace.csv"),
                &loss_trace_csv(&hash, &seeds, &report.trace),
            )?;
            Ok(report)
        }
        Err(Error::DivergenceDetected {
            epoch,
            loss,
            partial_trace,
        }) => {
            write(
                &dir.join("loss_trace.csv"),
                &loss_trace_csv(&hash, &seeds, &partial_trace),
            )?;
            Err(Error::DivergenceDetected {
                epoch,
                loss,
                partial_trace,
            })
        }
        Err(e) => Err(e),
    }
}

pub fn cmd_eval(args: &RunArgs) -> Result<MetricsReport> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let dir = output_dir(&cfg, args)?;
    let params = load_model(&cfg, args, &dir)?;
    let book = build_codebook(&cfg)?;
    let report = evaluate(&params, &book, &cfg.eval_spec())?;
    let hash = cfg.hash();
    let seeds = cfg.seeds();
    let pre = csv_preamble(&hash, &seeds);
    write(&dir.join("metrics.json"), &stamped_json(&hash, seeds, &report))?;
    let mut csv = pre.clone();
    csv.push_str("snr_db,user,mse,psnr_db\n");
    for p in &report.snr_points {
        for (u, (m, q)) in p.user_mse.iter().zip(&p.user_psnr).enumerate() {
            writeln!(csv, "{},{},{},{}", p.snr_db, u + 1, m, q).unwrap();
        }
    }
    write(&dir.join("metrics.csv"), &csv)?;
    write(&dir.join("cosine.csv"), &matrix_csv(&pre, &report.cosine_matrix))?;
    write(&dir.join("angles.csv"), &matrix_csv(&pre, &report.angle_matrix))?;
    write(
        &dir.join("projection.csv"),
        &matrix_csv(&pre, &report.projection_power),
    )?;
    Ok(report)
}

pub fn cmd_mismatch(args: &RunArgs) -> Result<Vec<Vec<MismatchEntry>>> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let dir = output_dir(&cfg, args)?;
    let params = load_model(&cfg, args, &dir)?;
    let book = build_codebook(&cfg)?;
    let grid = mismatch_grid(
        &params,
        &book,
        cfg.train.num_users,
        cfg.channel.mismatch_snr_db,
        cfg.channel.kind,
        cfg.eval.num_batches,
        cfg.eval.batch_size,
        cfg.eval.seed,
    )?;
    let hash = cfg.hash();
    let seeds = cfg.seeds();
    #[derive(Serialize)]
    struct Grid<'a> {
        snr_db: f64,
        entries: &'a [Vec<MismatchEntry>],
    }
    write(
        &dir.join("mismatch.json"),
        &stamped_json(
            &hash,
            seeds,
            &Grid {
                snr_db: cfg.channel.mismatch_snr_db,
                entries: &grid,
            },
        ),
    )?;
    let mut csv = csv_preamble(&hash, &seeds);
    csv.push_str("tx_user,rx_codeword,snr_db,mse,psnr_db\n");
    for e in grid.iter().flatten() {
        writeln!(
            csv,
            "{},{},{},{},{}",
            e.tx_user, e.rx_codeword, cfg.channel.mismatch_snr_db, e.mse, e.psnr
        )
        .unwrap();
    }
    write(&dir.join("mismatch.csv"), &csv)?;
    Ok(grid)
}

pub fn cmd_baseline(args: &BaselineArgs) -> Result<Vec<BerRow>> {
    let snrs = parse_snr_list(&args.snr)?;
    let rows = match args.scheme {
        Scheme::Cdma => cdma_sweep(args.users, &snrs, args.bits, args.seed)?,
        Scheme::Bpsk => {
            let mut rows = cdma_sweep(1, &snrs, args.bits, args.seed)?;
            rows.iter_mut().for_each(|r| r.scheme = "bpsk".into());
            rows
        }
        Scheme::Noma => {
            if args.users != 2 {
                return Err(Error::InvalidConfig(format!(
                    "NOMA baseline supports exactly 2 users, got {}",
                    args.users
                )));
            }
            noma_sweep(args.alpha, &snrs, args.bits, args.seed)?
        }
    };
    let mut text = format!("# config_hash={} seed={}\n", hash_of(args), args.seed);
    text.push_str(&rows_to_csv(&rows));
    match &args.out {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    Ok(rows)
}

fn fmt_matrix(m: &[Vec<f64>], prec: usize) -> String {
    m.iter()
        .map(|r| {
            r.iter()
                .map(|v| format!("{v:>8.prec$}"))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Runs one parsed command, printing a short summary to stdout.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Codebook(a) => {
            let angles = cmd_codebook(&a)?;
            println!("wrote {}", a.out.display());
            println!("pairwise angles (deg):\n{}", fmt_matrix(&angles, 3));
        }
        Command::InitConfig { out } => {
            let mut text = ExperimentConfig::two_user_default().to_json();
            text.push('\n');
            write(&out, &text)?;
            println!("wrote {}", out.display());
        }
        Command::Train(a) => {
            let r = cmd_train(&a)?;
            let last = r.trace.last().expect("at least one epoch");
            println!(
                "trained {} epochs: final total loss {:.6} (recon {:.6}, orth {:.4}); {:.1} s",
                r.trace.len(),
                last.total,
                last.recon,
                last.orth,
                r.wall_clock_secs
            );
            println!("feature angles (deg):\n{}", fmt_matrix(&r.angle_matrix, 2));
        }
        Command::Eval(a) => {
            let r = cmd_eval(&a)?;
            for p in &r.snr_points {
                println!("snr {:>5.1} dB: mean PSNR {:.2} dB", p.snr_db, p.mean_psnr);
            }
            println!("feature angles (deg):\n{}", fmt_matrix(&r.angle_matrix, 2));
        }
        Command::Mismatch(a) => {
            let g = cmd_mismatch(&a)?;
            let m: Vec<Vec<f64>> = g.iter().map(|r| r.iter().map(|e| e.psnr).collect()).collect();
            println!("PSNR (dB), row = transmitter, column = codeword used:\n{}", fmt_matrix(&m, 2));
        }
        Command::Baseline(a) => {
            let rows = cmd_baseline(&a)?;
            if a.out.is_some() {
                println!("wrote {} rows", rows.len());
            }
        }
    }
    Ok(())
}

/// Parses arguments, runs, and maps the outcome to a process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_lists() {
        assert_eq!(parse_snr_list("0:2:10").unwrap(), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(parse_snr_list("1, 3.5").unwrap(), vec![1.0, 3.5]);
        assert!(parse_snr_list("0:0:4").is_err());
        assert!(parse_snr_list("a").is_err());
        assert!(parse_snr_list("5:1:0").is_err());
    }

    #[test]
    fn default_config_round_trips_and_validates() {
        let c = ExperimentConfig::two_user_default();
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.hash(), back.hash());
        let mut moved = c.clone();
        moved.output_dir = "elsewhere".into();
        assert_eq!(c.hash(), moved.hash());
        let mut other = c.clone();
        other.train.seed += 1;
        assert_ne!(c.hash(), other.hash());
    }

    #[test]
    fn cross_section_violations_are_config_errors() {
        let mut c = ExperimentConfig::two_user_default();
        c.train.num_users = 3;
        let e = c.validate().unwrap_err();
        assert_eq!(exit_code(&e), 2);
        assert!(e.to_string().contains("num_users"));

        let mut c = ExperimentConfig::two_user_default();
        c.model.nsm.code_len = 64;
        assert!(c.validate().unwrap_err().to_string().contains("code_len"));

        let text = ExperimentConfig::two_user_default()
            .to_json()
            .replacen("\"version\"", "\"surprise\": 1, \"version\"", 1);
        assert!(ExperimentConfig::from_json(&text).is_err());
    }
}
