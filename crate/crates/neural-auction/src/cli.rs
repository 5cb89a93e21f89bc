//! Command-line front end: one thin binary over the library.
//!
//! Verbs: `gen-data`, `train`, `infer`, `eval`, `ic-eval`, `sweep`,
//! `export-embeddings`. Exit codes: 0 success, 1 usage, 2 data error,
//! 3 numerical failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::baselines::{GspAuction, UgfpAuction, UgspAuction, UgspWeights};
use crate::checkpoint::{self, Checkpoint, CheckpointError, Provenance};
use crate::config::{self, ConfigError};
use crate::data::{
    generate_dataset, read_all, read_dataset, write_dataset, DataError, GeneratorConfig, MetricId,
    ObjectiveSpec,
};
use crate::evaluation::{
    compute_metrics, ic_regret, matched_rpm_comparisons, pareto_sweep, EvalError, EvalMode,
    Mechanism, MechanismKind, PerturbationGrid, SweepConfig, SweepPoint,
};
use crate::model::{LearnedAuction, ModelError};
use crate::training::{self, TrainConfig, TrainError};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match &e {
            TrainError::NonFiniteLoss { .. } | TrainError::Diff(_) | TrainError::Sort(_) => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => CliError::Numerical(m.to_string()),
            EvalError::Train(inner) => CliError::from(*inner),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Records,
    Table,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "records" => Ok(OutputFormat::Records),
            "table" => Ok(OutputFormat::Table),
            other => Err(format!("unknown format `{other}` (expected records|table)")),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "neural-auction",
    version,
    about = "Learnable multi-slot ad auctions: data generation, training, inference, and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic auction dataset.
    GenData {
        /// Generator config (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Root seed; overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of auction instances.
        #[arg(long)]
        count: usize,
        /// Output dataset path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a dataset (optionally resuming a checkpoint).
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Train config (TOML). Without it, a default config with objective
        /// 0.5 revenue + 0.5 ctr is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Also write per-epoch records to this file (they always stream to
        /// stdout).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Continue from an existing checkpoint (same dataset required).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Allocate and price a dataset with a trained model (zero-temperature
    /// inference).
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output outcomes path (line-delimited records).
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate platform metrics for a mechanism over a dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        mechanism: MechanismArgs,
        /// realized | expected
        #[arg(long, default_value = "expected")]
        mode: EvalMode,
        #[arg(long)]
        out: Option<PathBuf>,
        /// records | table
        #[arg(long, default_value = "table")]
        format: OutputFormat,
    },
    /// Bid-perturbation incentive-compatibility regret for a mechanism.
    IcEval {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        mechanism: MechanismArgs,
        /// Number of multipliers in the perturbation grid.
        #[arg(long, default_value_t = 100)]
        grid_points: usize,
        /// Upper end of the multiplier range (grid spans [0, max]).
        #[arg(long, default_value_t = 2.0)]
        max_multiplier: f64,
        /// Evaluate only the first N auctions (0 = all).
        #[arg(long, default_value_t = 0)]
        limit: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "table")]
        format: OutputFormat,
    },
    /// Sweep preference weights per mechanism and compare the trade-off
    /// curves (trains the learned mechanism once per weight).
    Sweep {
        #[arg(long)]
        train_data: PathBuf,
        #[arg(long)]
        eval_data: PathBuf,
        /// Metric traded against revenue: ctr | cvr | gpm.
        #[arg(long, default_value = "ctr")]
        metric: String,
        /// Comma-separated preference weights for learned/ugsp/ugfp.
        #[arg(long, default_value = "0,0.25,0.5,0.75,1.0")]
        lambdas: String,
        /// Comma-separated squashing exponents for gsp.
        #[arg(long, default_value = "0.5,0.875,1.25,1.625,2.0")]
        sigmas: String,
        /// Comma-separated subset of learned,gsp,ugsp,ugfp.
        #[arg(long, default_value = "learned,gsp,ugsp,ugfp")]
        mechanisms: String,
        /// Train config (TOML) for the learned mechanism.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "records")]
        format: OutputFormat,
    },
    /// Write per-ad context embeddings with model rank labels.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct MechanismArgs {
    /// learned | gsp | ugsp | ugfp
    #[arg(long, default_value = "learned")]
    mechanism: String,
    /// Checkpoint for the learned mechanism.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Squashing exponent for gsp.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Revenue-term weight for ugsp/ugfp.
    #[arg(long, default_value_t = 0.8)]
    lambda: f64,
    /// Utility metric for ugsp/ugfp (ctr | cvr | gpm).
    #[arg(long, default_value = "ctr")]
    utility_metric: String,
}

impl MechanismArgs {
    fn build(&self) -> Result<Box<dyn Mechanism>, CliError> {
        let kind = MechanismKind::from_str(&self.mechanism).map_err(CliError::Usage)?;
        match kind {
            MechanismKind::Learned => {
                let path = self.checkpoint.as_ref().ok_or_else(|| {
                    CliError::Usage("--checkpoint is required for the learned mechanism".into())
                })?;
                let ckpt = checkpoint::load(path)?;
                Ok(Box::new(LearnedAuction::new(ckpt.model)))
            }
            MechanismKind::Gsp => {
                Ok(Box::new(GspAuction::new(self.sigma).map_err(CliError::Usage)?))
            }
            MechanismKind::Ugsp => {
                let metric = MetricId::from_str(&self.utility_metric)?;
                let weights = UgspWeights::sweep_mix(self.lambda, metric);
                Ok(Box::new(UgspAuction::new(weights).map_err(CliError::Usage)?))
            }
            MechanismKind::Ugfp => {
                let metric = MetricId::from_str(&self.utility_metric)?;
                let weights = UgspWeights::sweep_mix(self.lambda, metric);
                Ok(Box::new(UgfpAuction::new(weights).map_err(CliError::Usage)?))
            }
        }
    }
}

/// Parse and execute; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData { config, seed, count, out } => cmd_gen_data(config, seed, count, out),
        Command::Train { data, config, seed, out, report, resume } => {
            cmd_train(data, config, seed, out, report, resume)
        }
        Command::Infer { checkpoint, data, out } => cmd_infer(checkpoint, data, out),
        Command::Eval { data, mechanism, mode, out, format } => {
            cmd_eval(data, mechanism, mode, out, format)
        }
        Command::IcEval { data, mechanism, grid_points, max_multiplier, limit, out, format } => {
            cmd_ic_eval(data, mechanism, grid_points, max_multiplier, limit, out, format)
        }
        Command::Sweep {
            train_data,
            eval_data,
            metric,
            lambdas,
            sigmas,
            mechanisms,
            config,
            seed,
            out,
            format,
        } => cmd_sweep(train_data, eval_data, metric, lambdas, sigmas, mechanisms, config, seed, out, format),
        Command::ExportEmbeddings { checkpoint, data, out } => {
            cmd_export_embeddings(checkpoint, data, out)
        }
    }
}

// ---- output helpers ---------------------------------------------------------

/// Either a buffered file or stdout.
fn open_sink(out: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    match out {
        Some(path) => {
            let file = File::create(path)
                .map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))?;
            Ok(Box::new(BufWriter::new(file)))
        }
        None => Ok(Box::new(std::io::stdout().lock())),
    }
}

fn write_json_line<W: Write>(sink: &mut W, value: &impl Serialize) -> Result<(), CliError> {
    let line = serde_json::to_string(value)
        .map_err(|e| CliError::Data(format!("serialization failed: {e}")))?;
    writeln!(sink, "{line}").map_err(|e| CliError::Data(format!("write failed: {e}")))
}

fn parse_f64_list(text: &str, flag: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| CliError::Usage(format!("invalid value `{s}` in --{flag}: {e}")))
        })
        .collect()
}

// ---- commands ----------------------------------------------------------------

fn cmd_gen_data(
    config: Option<PathBuf>,
    seed: Option<u64>,
    count: usize,
    out: PathBuf,
) -> Result<(), CliError> {
    let mut cfg = match config {
        Some(path) => config::load_generator_config(path)?,
        None => GeneratorConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let written = write_dataset(&out, generate_dataset(&cfg, count)?)?;
    eprintln!("wrote {written} auctions to {}", out.display());
    Ok(())
}

fn default_objective() -> ObjectiveSpec {
    ObjectiveSpec::from_pairs(&[(MetricId::Revenue, 0.5), (MetricId::Ctr, 0.5)])
        .expect("default objective is valid")
}

fn cmd_train(
    data_path: PathBuf,
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: PathBuf,
    report: Option<PathBuf>,
    resume: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut cfg = match config {
        Some(path) => config::load_train_config(path)?,
        None => TrainConfig::new(default_objective()),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let data = read_all(&data_path)?;
    let fingerprint = checkpoint::file_fingerprint(&data_path)?;

    let mut report_sink: Option<BufWriter<File>> = match &report {
        Some(path) => Some(BufWriter::new(File::create(path).map_err(|e| {
            CliError::Data(format!("cannot create {}: {e}", path.display()))
        })?)),
        None => None,
    };
    let mut stdout = std::io::stdout().lock();
    let mut observer = |stats: &training::EpochStats| {
        let line = serde_json::to_string(stats).expect("epoch stats serialize");
        let _ = writeln!(stdout, "{line}");
        let _ = stdout.flush();
        if let Some(sink) = report_sink.as_mut() {
            let _ = writeln!(sink, "{line}");
        }
    };

    let result = match resume {
        Some(ckpt_path) => {
            let ckpt = checkpoint::load(&ckpt_path)?;
            if ckpt.provenance.data_fingerprint != fingerprint {
                return Err(CliError::Data(format!(
                    "resume dataset mismatch: checkpoint was trained on fingerprint {}, {} has {}",
                    ckpt.provenance.data_fingerprint,
                    data_path.display(),
                    fingerprint
                )));
            }
            training::resume(&data, &cfg, ckpt.model, ckpt.progress, &mut observer)
        }
        None => training::train_with_observer(&data, &cfg, &mut observer),
    };
    // The observer borrowed the sinks; its last use is above.
    if let Some(mut sink) = report_sink {
        let _ = sink.flush();
    }

    let outcome = match result {
        Ok(outcome) => outcome,
        Err(TrainError::NonFiniteLoss { epoch, step, pv_ids }) => {
            // Dump the offending batch next to the would-be checkpoint.
            let dump = out.with_extension("nan-batch.jsonl");
            let offenders: Vec<_> =
                data.iter().filter(|a| pv_ids.contains(&a.pv_id)).cloned().collect();
            let _ = write_dataset(&dump, offenders);
            return Err(CliError::Numerical(format!(
                "non-finite loss at epoch {epoch}, step {step}; offending batch dumped to {} (pv_ids {:?})",
                dump.display(),
                pv_ids
            )));
        }
        Err(e) => return Err(e.into()),
    };

    checkpoint::save(
        &out,
        &Checkpoint {
            model: outcome.model,
            progress: outcome.progress,
            provenance: Provenance { seed: cfg.seed, data_fingerprint: fingerprint },
        },
    )?;
    eprintln!(
        "trained {} epochs ({} train / {} holdout auctions, {} skipped); checkpoint: {}",
        outcome.report.epochs.len(),
        outcome.report.train_auctions,
        outcome.report.holdout_auctions,
        outcome.report.skipped_small_auctions,
        out.display()
    );
    Ok(())
}

fn cmd_infer(checkpoint_path: PathBuf, data: PathBuf, out: PathBuf) -> Result<(), CliError> {
    let ckpt = checkpoint::load(&checkpoint_path)?;
    let mechanism = LearnedAuction::new(ckpt.model);
    let mut sink = open_sink(Some(&out))?;
    let mut count = 0usize;
    for instance in read_dataset(&data)? {
        let auction = instance?;
        let outcome = mechanism.run(&auction)?;
        write_json_line(&mut sink, &outcome)?;
        count += 1;
    }
    sink.flush().map_err(|e| CliError::Data(format!("write failed: {e}")))?;
    eprintln!("wrote {count} outcomes to {}", out.display());
    Ok(())
}

fn cmd_eval(
    data: PathBuf,
    mechanism: MechanismArgs,
    mode: EvalMode,
    out: Option<PathBuf>,
    format: OutputFormat,
) -> Result<(), CliError> {
    let mech = mechanism.build()?;
    let auctions = read_all(&data)?;
    let outcomes: Vec<_> =
        auctions.iter().map(|a| mech.run(a)).collect::<Result<_, _>>().map_err(CliError::from)?;
    let report = compute_metrics(auctions.iter().zip(outcomes.iter()), mode)?;

    let mut sink = open_sink(out.as_deref())?;
    match format {
        OutputFormat::Records => write_json_line(&mut sink, &report)?,
        OutputFormat::Table => {
            let mut text = String::new();
            let _ = writeln!(text, "mechanism    {}", mech.name());
            let _ = writeln!(text, "mode         {mode:?}");
            let _ = writeln!(text, "impressions  {}", report.impressions);
            let _ = writeln!(text, "rpm          {:.6}", report.rpm);
            let _ = writeln!(text, "ctr          {:.6}", report.ctr);
            let _ = writeln!(text, "cvr          {:.6}", report.cvr);
            let _ = writeln!(text, "gpm          {:.6}", report.gpm);
            sink.write_all(text.as_bytes())
                .map_err(|e| CliError::Data(format!("write failed: {e}")))?;
        }
    }
    sink.flush().map_err(|e| CliError::Data(format!("write failed: {e}")))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_ic_eval(
    data: PathBuf,
    mechanism: MechanismArgs,
    grid_points: usize,
    max_multiplier: f64,
    limit: usize,
    out: Option<PathBuf>,
    format: OutputFormat,
) -> Result<(), CliError> {
    if grid_points < 2 {
        return Err(CliError::Usage("--grid-points must be at least 2".into()));
    }
    if max_multiplier <= 0.0 || max_multiplier.is_nan() {
        return Err(CliError::Usage("--max-multiplier must be > 0".into()));
    }
    let mech = mechanism.build()?;
    let mut auctions = read_all(&data)?;
    if limit > 0 && auctions.len() > limit {
        auctions.truncate(limit);
    }
    let grid = PerturbationGrid::uniform(grid_points, max_multiplier);
    let report = ic_regret(mech.as_ref(), &auctions, &grid)?;

    let mut sink = open_sink(out.as_deref())?;
    match format {
        OutputFormat::Records => write_json_line(&mut sink, &report)?,
        OutputFormat::Table => {
            let mut text = String::new();
            let _ = writeln!(text, "mechanism        {}", report.mechanism);
            let _ = writeln!(text, "grid             {}", report.grid);
            let _ = writeln!(text, "auctions         {}", auctions.len());
            let _ = writeln!(text, "advertisers      {}", report.advertisers);
            let _ = writeln!(text, "value regret     {:.6}", report.value_regret);
            let _ = writeln!(text, "payment regret   {:.6}", report.payment_regret);
            let _ = writeln!(text, "zero-pay skipped {}", report.zero_payment_excluded);
            sink.write_all(text.as_bytes())
                .map_err(|e| CliError::Data(format!("write failed: {e}")))?;
        }
    }
    sink.flush().map_err(|e| CliError::Data(format!("write failed: {e}")))?;
    Ok(())
}

#[derive(Serialize)]
struct SweepRecord<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    #[serde(flatten)]
    point: &'a SweepPoint,
}

#[derive(Serialize)]
struct DominanceRecord<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    curve: &'a str,
    baseline: &'a str,
    wins: usize,
    comparisons: Vec<crate::evaluation::MatchedRpmComparison>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    train_data: PathBuf,
    eval_data: PathBuf,
    metric: String,
    lambdas: String,
    sigmas: String,
    mechanisms: String,
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    format: OutputFormat,
) -> Result<(), CliError> {
    let metric = MetricId::from_str(&metric)?;
    let lambdas = parse_f64_list(&lambdas, "lambdas")?;
    let sigmas = parse_f64_list(&sigmas, "sigmas")?;
    let kinds: Vec<MechanismKind> = mechanisms
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| MechanismKind::from_str(s).map_err(CliError::Usage))
        .collect::<Result<_, _>>()?;

    let mut train_cfg = match config {
        Some(path) => config::load_train_config(path)?,
        None => TrainConfig::new(default_objective()),
    };
    if let Some(seed) = seed {
        train_cfg.seed = seed;
    }

    let train = read_all(&train_data)?;
    let holdout = read_all(&eval_data)?;
    let sweep_cfg = SweepConfig {
        metric,
        lambdas,
        gsp_sigmas: sigmas,
        mechanisms: kinds,
        mode: EvalMode::Expected,
    };
    let table = pareto_sweep(&train, &holdout, &sweep_cfg, &train_cfg)?;

    let mut sink = open_sink(out.as_deref())?;
    match format {
        OutputFormat::Records => {
            for point in &table.points {
                write_json_line(&mut sink, &SweepRecord { kind: "point", point })?;
            }
            let learned = owned_points(&table.points, "learned");
            if !learned.is_empty() {
                for baseline in ["gsp", "ugsp", "ugfp"] {
                    let base_points = prefix_points(&table.points, baseline);
                    if base_points.is_empty() {
                        continue;
                    }
                    let comparisons = matched_rpm_comparisons(&learned, &base_points);
                    let wins = comparisons.iter().filter(|c| c.curve_wins).count();
                    write_json_line(
                        &mut sink,
                        &DominanceRecord { kind: "matched_rpm", curve: "learned", baseline, wins, comparisons },
                    )?;
                }
            }
        }
        OutputFormat::Table => {
            let mut text = String::new();
            let _ = writeln!(text, "{:<16} {:>9} {:>14} {:>14}", "mechanism", "param", "rpm", metric.name());
            for p in &table.points {
                let _ = writeln!(
                    text,
                    "{:<16} {:>9.4} {:>14.6} {:>14.6}",
                    p.mechanism, p.parameter, p.rpm, p.metric_value
                );
            }
            let learned = owned_points(&table.points, "learned");
            if !learned.is_empty() {
                for baseline in ["gsp", "ugsp", "ugfp"] {
                    let base_points = prefix_points(&table.points, baseline);
                    if base_points.is_empty() {
                        continue;
                    }
                    let comparisons = matched_rpm_comparisons(&learned, &base_points);
                    let wins = comparisons.iter().filter(|c| c.curve_wins).count();
                    let _ = writeln!(
                        text,
                        "learned vs {baseline}: matches or beats {} of {} matched-rpm points",
                        wins,
                        comparisons.len()
                    );
                }
            }
            sink.write_all(text.as_bytes())
                .map_err(|e| CliError::Data(format!("write failed: {e}")))?;
        }
    }
    sink.flush().map_err(|e| CliError::Data(format!("write failed: {e}")))?;
    Ok(())
}

fn owned_points(points: &[SweepPoint], name: &str) -> Vec<SweepPoint> {
    points.iter().filter(|p| p.mechanism == name).cloned().collect()
}

fn prefix_points(points: &[SweepPoint], prefix: &str) -> Vec<SweepPoint> {
    points.iter().filter(|p| p.mechanism.starts_with(prefix)).cloned().collect()
}

#[derive(Serialize)]
struct EmbeddingRow<'a> {
    pv_id: &'a str,
    ad_id: &'a str,
    /// 1-based rank of the ad under the model's scores in its auction.
    rank: usize,
    embedding: &'a [f64],
}

fn cmd_export_embeddings(
    checkpoint_path: PathBuf,
    data: PathBuf,
    out: PathBuf,
) -> Result<(), CliError> {
    let ckpt = checkpoint::load(&checkpoint_path)?;
    let model = ckpt.model;
    let mut sink = open_sink(Some(&out))?;
    let mut rows = 0usize;
    for instance in read_dataset(&data)? {
        let auction = instance?;
        let scored = model.score_auction(&auction)?;
        for (i, cand) in auction.candidates.iter().enumerate() {
            let rank = scored.order.rank_of(i).expect("every ad is ranked") + 1;
            write_json_line(
                &mut sink,
                &EmbeddingRow {
                    pv_id: &auction.pv_id,
                    ad_id: &cand.ad_id,
                    rank,
                    embedding: &scored.embeddings[i],
                },
            )?;
            rows += 1;
        }
    }
    sink.flush().map_err(|e| CliError::Data(format!("write failed: {e}")))?;
    eprintln!("wrote {rows} embedding rows to {}", out.display());
    Ok(())
}
