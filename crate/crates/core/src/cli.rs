//! Command-line front end: `synth`, `ensemble`, `distill`, `evaluate` and
//! `sweep`. Stages communicate through files so each can be rerun alone.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::io;
use crate::metrics::GainMode;
use crate::pipeline::{self, EnsembleMethod, PipelineConfig, SweepParam, SweepRow};
use crate::student::{self, Architecture, TrainConfig};
use crate::synth::{self, DocsPerQuery, SynthConfig, TeacherMode};
use crate::types::{PairPolicy, PileConfig, StopPolicy};

pub const SEED_ENV: &str = "PILE_KD_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "pile-kd",
    version,
    about = "Label-supervised multi-teacher distillation for ranking"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with teacher logits.
    Synth(SynthArgs),
    /// Combine teacher logits into distillation targets.
    Ensemble(EnsembleArgs),
    /// Train a student, optionally distilling from an ensemble file.
    Distill(DistillArgs),
    /// Score a test set with a model and write a metric report.
    Evaluate(EvaluateArgs),
    /// Run the whole pipeline for each value of one parameter.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Trained,
    Perturbed,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub queries: u64,
    /// Documents per query, `20` or a range such as `10-30`.
    #[arg(long, default_value = "20")]
    pub docs: DocsPerQuery,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    pub dim: u64,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    pub teachers: u64,
    #[arg(long, value_enum, default_value = "trained")]
    pub mode: ModeArg,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.2)]
    pub label_noise: f64,
    /// Nonlinearity of the hidden scorer.
    #[arg(long, default_value_t = 1.0)]
    pub oracle_sharpness: f64,
    /// Query fraction seen by every teacher after the first (trained mode).
    #[arg(long, default_value_t = 0.8)]
    pub subset: f64,
    #[arg(long)]
    pub teacher_epochs: Option<usize>,
    /// Perturbed mode: Gaussian noise on every logit.
    #[arg(long, default_value_t = 0.1)]
    pub noise_sigma: f64,
    /// Perturbed mode: bias added on a teacher's biased queries.
    #[arg(long, default_value_t = 0.5)]
    pub bias: f64,
    #[arg(long, default_value_t = 0.3)]
    pub biased_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Held-out queries from the same hidden scorer.
    #[arg(long, default_value_t = 0)]
    pub test_queries: usize,
    #[arg(long, requires = "test_queries")]
    pub test_out: Option<PathBuf>,
    /// Where to store the hidden scorer; defaults to `<out>.oracle`.
    #[arg(long)]
    pub oracle_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MethodArg {
    Ae,
    Pile,
    Single,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum StopArg {
    Order,
    Fixedpoint,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PairsArg {
    Random,
    Sweep,
}

fn parse_lambda(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("update rate must lie in (0, 1], got {v}"))
    }
}

fn parse_positive(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("expected a positive number, got {v}"))
    }
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "pile")]
    pub method: MethodArg,
    /// Teacher index for `--method single`; defaults to the teacher with the
    /// best PNR on the input labels.
    #[arg(long)]
    pub teacher: Option<usize>,
    #[arg(long, default_value_t = 0.9, value_parser = parse_lambda)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value = "fixedpoint")]
    pub stop: StopArg,
    #[arg(long, default_value_t = 1e-4, value_parser = parse_positive)]
    pub eps: f64,
    #[arg(long, default_value_t = 1.5)]
    pub max_iters_exp: f64,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long, value_enum, default_value = "random")]
    pub pairs: PairsArg,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// `none` for label-only training, or an ensemble file.
    #[arg(long, default_value = "none")]
    pub targets: String,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// `linear` or `mlp:8` style hidden widths.
    #[arg(long, default_value = "linear")]
    pub arch: Architecture,
    /// Defaults to 1e-2 for linear and 1e-3 for MLP students.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_model: PathBuf,
    /// Defaults to `<out-model>.log`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Comma-separated: `pnr`, `dcg@K`.
    #[arg(long, default_value = "pnr")]
    pub metrics: String,
    #[arg(long, value_enum, default_value = "linear")]
    pub gain: GainArg,
    #[arg(long)]
    pub out_report: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum GainArg {
    Linear,
    Exp,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ParamArg {
    Lambda,
    Teachers,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub param: ParamArg,
    /// Comma-separated values, e.g. `0.1,0.5,0.9`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    /// JSON pipeline configuration; the default benchmark when absent.
    #[arg(long)]
    pub pipeline_config: Option<PathBuf>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub replicates: u64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Ensemble(a) => cmd_ensemble(&a, out),
        Command::Distill(a) => cmd_distill(&a, out),
        Command::Evaluate(a) => cmd_evaluate(&a, out),
        Command::Sweep(a) => cmd_sweep(&a, out),
    }
}

fn say(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn fmt_pnr(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let teacher_mode = match a.mode {
        ModeArg::Trained => {
            let TeacherMode::Trained { mut training, .. } = TeacherMode::trained_default() else {
                unreachable!()
            };
            if let Some(e) = a.teacher_epochs {
                training.epochs = e;
            }
            TeacherMode::Trained {
                subset_fraction: a.subset,
                training,
            }
        }
        ModeArg::Perturbed => TeacherMode::Perturbed {
            noise_sigma: a.noise_sigma,
            bias_magnitude: a.bias,
            biased_query_fraction: a.biased_fraction,
        },
    };
    let config = SynthConfig {
        num_queries: a.queries as usize,
        test_queries: if a.test_out.is_some() {
            a.test_queries
        } else {
            0
        },
        docs_per_query: a.docs,
        feature_dim: a.dim as usize,
        num_teachers: a.teachers as usize,
        teacher_mode,
        label_noise: a.label_noise,
        oracle_sharpness: a.oracle_sharpness,
        seed: a.seed,
    };
    let data = synth::generate(&config)?;
    io::write_groups(&data.train, &a.out)?;
    let oracle_path = a
        .oracle_out
        .clone()
        .unwrap_or_else(|| with_suffix(&a.out, ".oracle"));
    io::write_model(&data.oracle, &oracle_path)?;
    if let Some(test_out) = &a.test_out {
        io::write_groups(&data.test, test_out)?;
    }
    let h = synth::grade_histogram(&data.train);
    say(
        out,
        format_args!(
            "wrote {} groups, {} docs, {} teachers to {}",
            data.train.groups.len(),
            data.train.num_docs(),
            data.train.num_teachers,
            a.out.display()
        ),
    )?;
    say(out, format_args!("grade histogram 0..4: {h:?}"))?;
    if let Some(test_out) = &a.test_out {
        say(
            out,
            format_args!(
                "wrote {} held-out groups to {}",
                data.test.groups.len(),
                test_out.display()
            ),
        )?;
    }
    Ok(())
}

pub fn pile_config_from(a: &EnsembleArgs) -> PileConfig {
    PileConfig {
        lambda: a.lambda,
        max_iters_exponent: a.max_iters_exp,
        max_iters_override: a.max_iters,
        stop_policy: match a.stop {
            StopArg::Order => StopPolicy::OrderConsistent,
            StopArg::Fixedpoint => StopPolicy::FixedPoint { epsilon: a.eps },
        },
        pair_policy: match a.pairs {
            PairsArg::Random => PairPolicy::UniformRandom,
            PairsArg::Sweep => PairPolicy::Sweep,
        },
        seed: a.seed,
        trace: a.trace,
    }
}

pub fn cmd_ensemble(a: &EnsembleArgs, out: &mut dyn Write) -> Result<()> {
    let dataset = io::read_groups(&a.input)?;
    let method = match a.method {
        MethodArg::Ae => EnsembleMethod::Average,
        MethodArg::Pile => EnsembleMethod::Pile(pile_config_from(a)),
        MethodArg::Single => EnsembleMethod::Single(match a.teacher {
            Some(t) => t,
            None => pipeline::best_teacher(&dataset)?,
        }),
    };
    let records = pipeline::ensemble_dataset(&dataset, &method)?;
    io::write_ensemble(&records, &a.out)?;

    let scores: Vec<Vec<f64>> = records.iter().map(|r| r.logits()).collect();
    let report = pipeline::score_report(&dataset, &scores)?;
    let iterations: usize = records.iter().map(|r| r.iterations_used).sum();
    let converged = records.iter().filter(|r| r.converged).count();
    say(
        out,
        format_args!(
            "{}: {} groups, mean PNR {} ({} skipped), mean iterations {:.2}, converged {}/{}",
            method.name(),
            records.len(),
            fmt_pnr(report.mean_pnr),
            report.skipped_no_discordant + report.skipped_no_pairs,
            iterations as f64 / records.len().max(1) as f64,
            converged,
            records.len()
        ),
    )
}

pub fn cmd_distill(a: &DistillArgs, out: &mut dyn Write) -> Result<()> {
    let dataset = io::read_groups(&a.input)?;
    let targets = match a.targets.as_str() {
        "none" => None,
        path => Some(pipeline::targets_from_records(
            &dataset,
            &io::read_ensemble(path)?,
        )?),
    };
    let mut config = TrainConfig::for_architecture(a.arch.clone());
    if let Some(lr) = a.lr {
        config.learning_rate = lr;
    }
    config.epochs = a.epochs;
    config.batch_pairs = a.batch;
    config.alpha = a.alpha;
    config.seed = a.seed;
    let (params, log) = student::train(&dataset, targets.as_deref(), &config)?;
    io::write_model(&params, &a.out_model)?;
    let log_path = a
        .log
        .clone()
        .unwrap_or_else(|| with_suffix(&a.out_model, ".log"));
    io::write_training_log(&log, &log_path)?;
    let (first, last) = (&log.epochs[0], &log.epochs[log.epochs.len() - 1]);
    say(
        out,
        format_args!(
            "trained {:?} for {} epochs ({}): pairwise loss {:.4} -> {:.4}; model {}",
            config.architecture,
            config.epochs,
            if targets.is_some() {
                "distilled"
            } else {
                "labels only"
            },
            first.pairwise_loss,
            last.pairwise_loss,
            a.out_model.display()
        ),
    )
}

fn parse_metrics(list: &str) -> Result<Option<usize>> {
    let mut dcg_k = None;
    for m in list.split(',').map(str::trim).filter(|m| !m.is_empty()) {
        if m == "pnr" {
            continue;
        }
        let k = m
            .strip_prefix("dcg@")
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k > 0)
            .ok_or_else(|| {
                Error::InvalidInput(format!("unknown metric '{m}' (expected pnr or dcg@K)"))
            })?;
        dcg_k = Some(k);
    }
    Ok(dcg_k)
}

pub fn cmd_evaluate(a: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let dcg_k = parse_metrics(&a.metrics)?;
    let gain = match a.gain {
        GainArg::Linear => GainMode::Linear,
        GainArg::Exp => GainMode::Exponential,
    };
    let params = io::read_model(&a.model)?;
    let test = io::read_groups(&a.test)?;
    let mut report = pipeline::evaluate(&params, &test, dcg_k, gain)?;
    report.parameters.source = Some(a.model.display().to_string());
    io::write_report(&report, &a.out_report)?;
    match report.mean_pnr {
        Some(v) => say(
            out,
            format_args!(
                "mean PNR {v:.4} over {} queries ({} without discordant pairs, {} without label-distinct pairs skipped)",
                report.num_queries - report.skipped_no_discordant - report.skipped_no_pairs,
                report.skipped_no_discordant,
                report.skipped_no_pairs
            ),
        )?,
        None => say(
            out,
            format_args!(
                "mean PNR undefined: all {} queries skipped ({} without discordant pairs, {} without label-distinct pairs)",
                report.num_queries, report.skipped_no_discordant, report.skipped_no_pairs
            ),
        )?,
    }
    if let (Some(k), Some(d)) = (dcg_k, report.dcg_at_k) {
        say(out, format_args!("mean DCG@{k} {d:.4}"))?;
    }
    Ok(())
}

pub fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<()> {
    let config = match &a.pipeline_config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<PipelineConfig>(&text).map_err(|e| Error::Parse {
                path: path.clone(),
                line: e.line(),
                message: e.to_string(),
            })?
        }
        None => PipelineConfig::default(),
    };
    let param = match a.param {
        ParamArg::Lambda => SweepParam::Lambda,
        ParamArg::Teachers => SweepParam::Teachers,
    };
    let rows = pipeline::sweep(&config, param, &a.values, a.replicates as usize, a.seed)?;
    let mut table = String::from(SweepRow::TSV_HEADER);
    table.push('\n');
    for row in &rows {
        table.push_str(&row.to_tsv());
        table.push('\n');
    }
    fs::write(&a.out, &table).map_err(|e| Error::io(&a.out, e))?;
    out.write_all(table.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}
