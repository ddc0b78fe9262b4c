//! The steps behind each subcommand, usable without the command line.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use motioncap_core::attention::AttentionDump;
use motioncap_core::decoder::Decoded;
use motioncap_core::interp::{self, InterpRecord};
use motioncap_core::losses::LossWeights;
use motioncap_core::metrics::EvalReport;
use motioncap_core::model::CaptionModel;
use motioncap_core::supervision::{GuidanceDictionary, Lexicon, Supervisor};
use motioncap_core::synth::{self, Annotation, Split, SynthConfig, SyntheticCorpus};
use motioncap_core::trainer::{self, DecodeStrategy, EpochLog, Executor, Sample, SweepCell, TrainConfig, TrainOutcome};

use crate::io;

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// `run.json`, written next to every output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub versions: BTreeMap<String, String>,
    /// Input file → SHA-256.
    pub inputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("motioncap".into(), env!("CARGO_PKG_VERSION").into());
        versions.insert("checkpoint_format".into(), "1".into());
        Self {
            command: command.into(),
            args: std::env::args().skip(1).collect(),
            config,
            seed,
            versions,
            inputs: BTreeMap::new(),
        }
    }

    pub fn hash_inputs<I: IntoIterator<Item = PathBuf>>(&mut self, files: I) -> Result<()> {
        for f in files {
            let digest = sha256_file(&f)?;
            self.inputs.insert(f.display().to_string(), digest);
        }
        Ok(())
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        io::write_json(&out.join("run.json"), self)
    }
}

/// Built-in dictionary and lexicon unless files are given.
pub fn load_supervisor(dictionary: Option<&Path>, lexicon: Option<&Path>) -> Result<Supervisor> {
    let dict: GuidanceDictionary = match dictionary {
        Some(p) => io::read_json(p)?,
        None => GuidanceDictionary::standard(),
    };
    let lex: Lexicon = match lexicon {
        Some(p) => io::read_json(p)?,
        None => Lexicon::standard(),
    };
    Ok(Supervisor::new(&dict, &lex)?)
}

pub fn synthesize(config: &SynthConfig, supervisor: &Supervisor, out: &Path) -> Result<SyntheticCorpus> {
    let corpus = synth::generate(config)?;
    io::write_synthetic(out, &corpus, config, supervisor)?;
    Ok(corpus)
}

/// Train/val/test samples of a dataset.
pub struct Splits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Splits {
    pub fn load(data: &io::Dataset) -> Result<Self> {
        Ok(Self {
            train: data.samples(Split::Train)?,
            val: data.samples(Split::Val)?,
            test: data.samples(Split::Test)?,
        })
    }

    pub fn from_corpus(corpus: &SyntheticCorpus) -> Result<Self> {
        let conv = |which| corpus.split(which).map(|s| Ok(s.training_sample()?)).collect::<Result<Vec<_>>>();
        Ok(Self {
            train: conv(Split::Train)?,
            val: conv(Split::Val)?,
            test: conv(Split::Test)?,
        })
    }

    pub fn get(&self, which: Split) -> &[Sample] {
        match which {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Trains and writes `checkpoint/` and `train_log.csv` under `out`.
pub fn train<E: Executor>(
    config: &TrainConfig,
    splits: &Splits,
    supervisor: &Supervisor,
    exec: &E,
    out: &Path,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let outcome = trainer::train(config, &splits.train, &splits.val, supervisor, exec, on_epoch)?;
    save_run(out, &outcome.model, &outcome.log)?;
    Ok(outcome)
}

pub fn save_run(out: &Path, model: &CaptionModel, log: &[EpochLog]) -> Result<()> {
    io::save_checkpoint(&out.join("checkpoint"), model)?;
    io::write_training_log(&out.join("train_log.csv"), log)
}

/// Decodes `samples`, writing `decodes.jsonl` and attention dumps to `out`.
pub fn decode<E: Executor>(
    model: &CaptionModel,
    samples: &[Sample],
    strategy: DecodeStrategy,
    exec: &E,
    out: &Path,
) -> Result<Vec<Decoded>> {
    let decoded = exec.map(samples.len(), |i| strategy.run(model, &samples[i].parts));
    let decoded: Vec<Decoded> = decoded.into_iter().collect::<Result<_, _>>()?;
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    io::write_decodes(out, model, &ids, &decoded)?;
    Ok(decoded)
}

/// Decodes, scores and writes `eval.json`, `eval.csv` and the decodes.
pub fn evaluate<E: Executor>(
    model: &CaptionModel,
    samples: &[Sample],
    strategy: DecodeStrategy,
    exec: &E,
    out: &Path,
) -> Result<EvalReport> {
    let (report, decoded) = trainer::evaluate(model, samples, strategy, exec)?;
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    io::write_decodes(out, model, &ids, &decoded)?;
    io::write_eval_report(out, &report)?;
    Ok(report)
}

/// Attention dumps of decoded samples, without touching the disk.
pub fn dumps(model: &CaptionModel, samples: &[Sample], decoded: &[Decoded]) -> Result<Vec<AttentionDump>> {
    samples
        .iter()
        .zip(decoded)
        .map(|(s, d)| {
            let tokens = d
                .tokens
                .iter()
                .map(|t| model.vocab.word(*t).map(str::to_string))
                .collect::<Result<_, _>>()?;
            Ok(AttentionDump::from_steps(&s.id, tokens, &d.attention)?)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct AnalysisOptions {
    pub words: Vec<String>,
    pub kappa: f64,
    pub tau_beta: f64,
    pub grid_points: usize,
    /// Relative tolerance of the localization score.
    pub tolerance: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            words: Vec::new(),
            kappa: interp::DEFAULT_KAPPA,
            tau_beta: interp::DEFAULT_TAU_BETA,
            grid_points: 101,
            tolerance: 0.15,
        }
    }
}

/// Writes density, histogram and localization CSVs plus the fine-grained
/// report; with annotations, also `gold_scores.json`.
pub fn analyze(
    dumps: &[AttentionDump],
    options: &AnalysisOptions,
    gold: Option<&[Annotation]>,
    supervisor: &Supervisor,
    out: &Path,
) -> Result<Option<interp::GroundTruthScores>> {
    fs::create_dir_all(out)?;
    let records: Vec<InterpRecord> = dumps.iter().map(InterpRecord::from_dump).collect::<Result<_, _>>()?;
    let words: Vec<&str> = options.words.iter().map(String::as_str).collect();

    let densities = interp::beta_density(&records, &words, options.grid_points)?;
    let mut grid = csv::Writer::from_path(out.join("beta_density.csv"))?;
    grid.write_record(["stem", "beta", "density"])?;
    let mut summary = csv::Writer::from_path(out.join("beta_summary.csv"))?;
    summary.write_record(["stem", "count", "low_count", "mean", "median", "bandwidth"])?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for d in &densities {
        for (x, y) in d.grid.iter().zip(&d.density) {
            grid.write_record([d.stem.clone(), x.to_string(), y.to_string()])?;
        }
        summary.write_record([
            d.stem.clone(),
            d.count.to_string(),
            d.low_count.to_string(),
            opt(d.mean),
            opt(d.median),
            d.bandwidth.to_string(),
        ])?;
    }
    grid.flush()?;
    summary.flush()?;

    let mut hist = csv::Writer::from_path(out.join("part_histogram.csv"))?;
    hist.write_record(["stem", "part", "count", "modal", "share"])?;
    for w in &words {
        let h = interp::part_histogram(&records, w);
        for part in motioncap_core::skeleton::BodyPart::ALL {
            hist.write_record([
                h.stem.clone(),
                part.name().to_string(),
                h.counts[part.index()].to_string(),
                (h.modal == Some(part)).to_string(),
                h.share.to_string(),
            ])?;
        }
    }
    hist.flush()?;

    let mut loc = csv::Writer::from_path(out.join("localization.csv"))?;
    loc.write_record(["id", "position", "word", "beta", "m", "sigma", "start", "end", "part"])?;
    let mut reports = Vec::with_capacity(records.len());
    for r in &records {
        for (i, t) in r.tokens.iter().enumerate() {
            let (start, end) = interp::localize(t.m, t.sigma, r.frames, options.kappa);
            loc.write_record([
                r.id.clone(),
                i.to_string(),
                t.word.clone(),
                t.beta.to_string(),
                t.m.to_string(),
                t.sigma.to_string(),
                start.to_string(),
                end.to_string(),
                t.peak().1.name().to_string(),
            ])?;
        }
        reports.push(interp::fine_grained_report(r, options.tau_beta, options.kappa));
    }
    loc.flush()?;
    io::write_json(&out.join("fine_grained.json"), &reports)?;

    let scores = match gold {
        Some(g) => {
            let s = interp::score_against_gold(&records, g, supervisor, options.tolerance)?;
            io::write_json(&out.join("gold_scores.json"), &s)?;
            Some(s)
        }
        None => None,
    };
    Ok(scores)
}

/// Cell directory name, e.g. `spat2_adapt3_seed0`.
pub fn cell_name(w: LossWeights, seed: u64) -> String {
    format!("spat{}_adapt{}_seed{seed}", w.spat, w.adapt)
}

/// Runs the sweep and writes `sweep.csv` plus one directory per cell.
pub fn sweep<E: Executor>(
    base: &TrainConfig,
    grid: &[LossWeights],
    seeds: &[u64],
    splits: &Splits,
    supervisor: &Supervisor,
    exec: &E,
    out: &Path,
) -> Result<Vec<SweepCell>> {
    let cells = trainer::sweep(base, grid, seeds, (&splits.train, &splits.val, &splits.test), supervisor, exec)?;
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    let mut header = vec!["lambda_spat", "lambda_adapt", "seed", "status"];
    header.extend(EvalReport::COLUMNS);
    w.write_record(&header)?;
    for c in &cells {
        let mut row = vec![
            c.weights.spat.to_string(),
            c.weights.adapt.to_string(),
            c.seed.to_string(),
            c.status(),
        ];
        match &c.result {
            Ok(r) => {
                let dir = out.join(cell_name(c.weights, c.seed));
                save_run(&dir, &r.model, &r.log)?;
                let ids: Vec<String> = splits.test.iter().map(|s| s.id.clone()).collect();
                io::write_decodes(&dir.join("decodes"), &r.model, &ids, &r.decoded)?;
                row.extend(r.report.values().iter().map(|v| v.to_string()));
            }
            Err(_) => row.extend(std::iter::repeat_n(String::new(), EvalReport::COLUMNS.len())),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(cells)
}
