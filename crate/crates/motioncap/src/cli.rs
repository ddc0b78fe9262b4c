//! `motioncap` subcommands.
//!
//! Exit codes: 0 on success, 2 for usage errors, 1 for runtime failures. A
//! failure prints a single JSON line `{"status":"error",...}` to stderr.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use motioncap_core::model::toy_gradient_check;
use motioncap_core::synth::{Split, SynthConfig};
use motioncap_core::trainer::{parse_grid, DecodeStrategy, TrainConfig};

use crate::config;
use crate::exec::Parallel;
use crate::io;
use crate::pipeline::{self, AnalysisOptions, RunManifest, Splits};

#[derive(Debug, Parser)]
#[command(
    name = "motioncap",
    version,
    about = "Interpretable motion captioning: data, training, decoding and analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic motion corpus with ground-truth annotations
    Synth(SynthArgs),
    /// Train one model
    Train(TrainArgs),
    /// Train and evaluate one model per (λ_spat, λ_adapt, seed)
    Sweep(SweepArgs),
    /// Decode a split and score it with BLEU, ROUGE-L and CIDEr
    Eval(DecodeArgs),
    /// Decode a split and write captions with attention dumps
    Decode(DecodeArgs),
    /// Analyse attention dumps: gate densities, part histograms, localization
    Analyze(AnalyzeArgs),
    /// Compare analytic and finite-difference gradients on a toy model
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of samples
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Generator config (TOML or JSON)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Config override `key=value`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SupervisionArgs {
    /// Guidance dictionary JSON (built-in by default)
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    /// Motion/function word lexicon JSON (built-in by default)
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training config (TOML or JSON)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Config override `key=value`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(flatten)]
    pub supervision: SupervisionArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Weight grid "spat,adapt;spat,adapt;..."
    #[arg(long, default_value = "0,0;0,3;2,3")]
    pub grid: String,
    /// Comma-separated seeds
    #[arg(long, default_value = "0,1,2")]
    pub seeds: String,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Checkpoint directory
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Beam width (greedy when omitted)
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Decode directory (with decodes.jsonl) or directory of dumps
    #[arg(long)]
    pub dump: PathBuf,
    /// Comma-separated words whose stems are analysed
    #[arg(long, default_value = "kick,wave,turn")]
    pub words: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Span half-width in standard deviations
    #[arg(long, default_value_t = motioncap_core::interp::DEFAULT_KAPPA)]
    pub kappa: f64,
    /// Gate threshold for motion words
    #[arg(long, default_value_t = motioncap_core::interp::DEFAULT_TAU_BETA)]
    pub tau_beta: f64,
    /// Ground-truth annotations (e.g. a synthetic dataset's annotations.json)
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[command(flatten)]
    pub supervision: SupervisionArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Maximum relative error per parameter group
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
    /// Width of every layer of the toy model
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optional directory for the JSON report
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let name = command_name(&cli.command);
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = json!({"status": "error", "command": name, "message": format!("{e:#}")});
            eprintln!("{line}");
            ExitCode::from(1)
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth(_) => "synth",
        Command::Train(_) => "train",
        Command::Sweep(_) => "sweep",
        Command::Eval(_) => "eval",
        Command::Decode(_) => "decode",
        Command::Analyze(_) => "analyze",
        Command::Gradcheck(_) => "gradcheck",
    }
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a),
        Command::Eval(a) => decode(a, true),
        Command::Decode(a) => decode(a, false),
        Command::Analyze(a) => analyze(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn config_files(path: Option<&Path>) -> Vec<PathBuf> {
    path.map(Path::to_path_buf).into_iter().collect()
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = config::load(a.config.as_deref(), &a.overrides)?;
    if let Some(n) = a.n {
        cfg.n_samples = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let supervisor = pipeline::load_supervisor(None, None)?;
    let corpus = pipeline::synthesize(&cfg, &supervisor, &a.out)?;
    let mut manifest = RunManifest::new("synth", serde_json::to_value(&cfg)?, Some(cfg.seed));
    manifest.hash_inputs(config_files(a.config.as_deref()))?;
    manifest.write(&a.out)?;
    println!("{}", json!({"status": "ok", "samples": corpus.samples.len(), "out": a.out}));
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = config::load(a.config.as_deref(), &a.overrides)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn supervision_files(s: &SupervisionArgs) -> Vec<PathBuf> {
    s.dictionary.iter().chain(&s.lexicon).cloned().collect()
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = train_config(&a)?;
    let supervisor = pipeline::load_supervisor(a.supervision.dictionary.as_deref(), a.supervision.lexicon.as_deref())?;
    let data = io::Dataset::load(&a.data)?;
    let splits = Splits::load(&data)?;
    let exec = Parallel::from_env()?;
    let mut manifest = RunManifest::new("train", serde_json::to_value(&cfg)?, Some(cfg.seed));
    manifest.hash_inputs(
        config_files(a.config.as_deref())
            .into_iter()
            .chain(supervision_files(&a.supervision))
            .chain(data.files()),
    )?;
    std::fs::create_dir_all(&a.out)?;
    manifest.write(&a.out)?;
    let outcome = pipeline::train(&cfg, &splits, &supervisor, &exec, &a.out, &mut |e| {
        eprintln!(
            "epoch {:>3}  lang {:.4}  spat {:.4}  adapt {:.4}  total {:.4}  val_bleu4 {}",
            e.epoch,
            e.lang,
            e.spat,
            e.adapt,
            e.total,
            e.val_bleu4.map_or("-".into(), |b| format!("{b:.2}"))
        )
    })?;
    println!(
        "{}",
        json!({"status": "ok", "best_epoch": outcome.best_epoch, "best_val_bleu4": outcome.best_val_bleu4, "stopped_early": outcome.stopped_early})
    );
    Ok(())
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = s
        .split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse().map_err(|_| anyhow::anyhow!("seed {x:?} is not an integer")))
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        bail!("no seeds given");
    }
    Ok(seeds)
}

fn sweep(a: SweepArgs) -> Result<()> {
    let cfg = train_config(&a.train)?;
    let grid = parse_grid(&a.grid)?;
    let seeds = parse_seeds(&a.seeds)?;
    let t = &a.train;
    let supervisor = pipeline::load_supervisor(t.supervision.dictionary.as_deref(), t.supervision.lexicon.as_deref())?;
    let data = io::Dataset::load(&t.data)?;
    let splits = Splits::load(&data)?;
    let exec = Parallel::from_env()?;
    let mut manifest = RunManifest::new("sweep", json!({"base": cfg, "grid": a.grid, "seeds": seeds}), Some(cfg.seed));
    manifest.hash_inputs(
        config_files(t.config.as_deref())
            .into_iter()
            .chain(supervision_files(&t.supervision))
            .chain(data.files()),
    )?;
    std::fs::create_dir_all(&t.out)?;
    manifest.write(&t.out)?;
    let cells = pipeline::sweep(&cfg, &grid, &seeds, &splits, &supervisor, &exec, &t.out)?;
    let failed = cells.iter().filter(|c| c.result.is_err()).count();
    println!("{}", json!({"status": "ok", "cells": cells.len(), "failed": failed}));
    Ok(())
}

fn decode(a: DecodeArgs, score: bool) -> Result<()> {
    let model = io::load_checkpoint(&a.checkpoint)?;
    let data = io::Dataset::load(&a.data)?;
    let samples = data.samples(a.split.into())?;
    if samples.is_empty() {
        bail!("split {:?} of {} is empty", a.split, a.data.display());
    }
    let strategy = match a.beam {
        None => DecodeStrategy::Greedy,
        Some(0) => bail!("beam width must be at least 1"),
        Some(w) => DecodeStrategy::Beam(w),
    };
    let exec = Parallel::from_env()?;
    let command = if score { "eval" } else { "decode" };
    let mut manifest = RunManifest::new(
        command,
        json!({"split": format!("{:?}", a.split).to_lowercase(), "decode": strategy}),
        None,
    );
    manifest.hash_inputs(
        [a.checkpoint.join(io::CHECKPOINT_MANIFEST), a.checkpoint.join(io::CHECKPOINT_PARAMS)]
            .into_iter()
            .chain(data.files()),
    )?;
    std::fs::create_dir_all(&a.out)?;
    manifest.write(&a.out)?;
    if score {
        let report = pipeline::evaluate(&model, &samples, strategy, &exec, &a.out)?;
        println!("{}", serde_json::to_string(&report)?);
    } else {
        let decoded = pipeline::decode(&model, &samples, strategy, &exec, &a.out)?;
        println!("{}", json!({"status": "ok", "decoded": decoded.len()}));
    }
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let supervisor = pipeline::load_supervisor(a.supervision.dictionary.as_deref(), a.supervision.lexicon.as_deref())?;
    let dumps = io::read_dumps(&a.dump)?;
    let gold = a.annotations.as_deref().map(io::read_json::<Vec<_>>).transpose()?;
    let options = AnalysisOptions {
        words: a.words.split(',').map(|w| w.trim().to_string()).filter(|w| !w.is_empty()).collect(),
        kappa: a.kappa,
        tau_beta: a.tau_beta,
        ..AnalysisOptions::default()
    };
    let mut manifest = RunManifest::new(
        "analyze",
        json!({"words": options.words, "kappa": options.kappa, "tau_beta": options.tau_beta}),
        None,
    );
    manifest.hash_inputs(a.annotations.iter().cloned().chain(supervision_files(&a.supervision)))?;
    let scores = pipeline::analyze(&dumps, &options, gold.as_deref(), &supervisor, &a.out)?;
    manifest.write(&a.out)?;
    println!("{}", json!({"status": "ok", "dumps": dumps.len(), "gold": scores}));
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let report = toy_gradient_check(a.hidden, a.seed, a.step, a.tol)?;
    if let Some(out) = &a.out {
        let params: Vec<_> = report
            .params
            .iter()
            .map(|p| json!({"name": p.name, "max_rel_err": p.max_rel_err, "analytic": p.analytic, "numeric": p.numeric}))
            .collect();
        io::write_json(
            &out.join("gradcheck.json"),
            &json!({"tol": a.tol, "step": a.step, "passed": report.passed, "params": params}),
        )?;
        RunManifest::new("gradcheck", json!({"tol": a.tol, "step": a.step, "hidden": a.hidden}), Some(a.seed)).write(out)?;
    }
    let worst = report.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max);
    if !report.passed {
        let bad: Vec<&str> = report
            .params
            .iter()
            .filter(|p| p.max_rel_err >= a.tol)
            .map(|p| p.name.as_str())
            .collect();
        bail!("gradient check failed (worst relative error {worst:.3e}) for {}", bad.join(", "));
    }
    println!("{}", json!({"status": "ok", "groups": report.params.len(), "max_rel_err": worst}));
    Ok(())
}
