//! Teacher-forced training, validation-based early stopping, evaluation and
//! the guidance-weight sweep.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::Decoded;
use crate::error::{Error, Result};
use crate::losses::{LossBreakdown, LossWeights};
use crate::metrics::{self, EvalReport};
use crate::model::{CaptionModel, ModelConfig};
use crate::numerics::{clip_global_norm, Adam, AdamConfig, ParamStore, Tape};
use crate::skeleton::PartFrames;
use crate::supervision::{SupervisionTargets, Supervisor};
use crate::vocab::{Vocabulary, EOS};

/// Runs independent jobs, returning results in index order.
pub trait Executor: Sync {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs jobs one after another on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeStrategy {
    #[default]
    Greedy,
    Beam(usize),
}

impl DecodeStrategy {
    pub fn run(&self, model: &CaptionModel, parts: &PartFrames) -> Result<Decoded> {
        match *self {
            DecodeStrategy::Greedy => model.greedy(parts),
            DecodeStrategy::Beam(w) => model.beam(parts, w),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_spat: f64,
    pub lambda_adapt: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub clip_norm: f64,
    /// Epochs without validation BLEU@4 improvement before stopping.
    pub patience: usize,
    /// Decoding used for validation and evaluation.
    pub decode: DecodeStrategy,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_spat: 2.0,
            lambda_adapt: 3.0,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            clip_norm: 5.0,
            patience: 10,
            decode: DecodeStrategy::Greedy,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.lambda_spat, self.lambda_adapt)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights()?;
        self.model.validate()?;
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("learning_rate and clip_norm must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch_size, epochs and patience must be positive".into()));
        }
        if let DecodeStrategy::Beam(0) = self.decode {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        Ok(())
    }
}

/// A motion with one or more reference captions (already tokenized).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub parts: PartFrames,
    pub captions: Vec<Vec<String>>,
}

/// One (motion, caption) training pair.
#[derive(Clone, Debug)]
pub struct Example<'a> {
    pub id: &'a str,
    pub parts: &'a PartFrames,
    pub words: Vec<usize>,
    pub targets: SupervisionTargets,
}

pub fn build_vocabulary(train: &[Sample]) -> Vocabulary {
    Vocabulary::build(train.iter().flat_map(|s| s.captions.iter().map(Vec::as_slice)))
}

pub fn examples<'a>(samples: &'a [Sample], vocab: &Vocabulary, supervisor: &Supervisor) -> Vec<Example<'a>> {
    samples
        .iter()
        .flat_map(|s| {
            s.captions.iter().map(move |c| Example {
                id: &s.id,
                parts: &s.parts,
                words: vocab.encode(c),
                targets: supervisor.targets(c),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lang: f64,
    pub spat: f64,
    pub adapt: f64,
    pub total: f64,
    /// `None` when there is no validation split.
    pub val_bleu4: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch (last epoch without validation).
    pub model: CaptionModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_bleu4: Option<f64>,
    pub stopped_early: bool,
}

/// Mean loss and averaged gradients of a batch.
pub fn batch_gradients<E: Executor>(
    model: &CaptionModel,
    batch: &[&Example<'_>],
    weights: LossWeights,
    exec: &E,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    let results = exec.map(batch.len(), |i| {
        let ex = batch[i];
        model.loss_and_grads(ex.parts, &ex.words, &ex.targets, weights)
    });
    let mut sum = LossBreakdown::default();
    let mut grads: Vec<Vec<f64>> = model.store.iter().map(|(_, _, t)| alloc::vec![0.0; t.len()]).collect();
    let mut bad = Vec::new();
    for (ex, r) in batch.iter().zip(results) {
        let (b, g) = r?;
        if !b.is_finite() {
            bad.push(ex.id.to_string());
            continue;
        }
        sum.accumulate(&b);
        for (acc, gi) in grads.iter_mut().zip(&g) {
            for (a, v) in acc.iter_mut().zip(gi) {
                *a += v;
            }
        }
    }
    if !bad.is_empty() {
        return Err(Error::NonFiniteLoss {
            epoch: 0,
            batch: 0,
            samples: bad.join(","),
        });
    }
    let scale = 1.0 / batch.len() as f64;
    for g in &mut grads {
        for v in g.iter_mut() {
            *v *= scale;
        }
    }
    Ok((sum.scaled(scale), grads))
}

/// Decodes every sample and scores the captions against its references.
pub fn evaluate<E: Executor>(
    model: &CaptionModel,
    samples: &[Sample],
    strategy: DecodeStrategy,
    exec: &E,
) -> Result<(EvalReport, Vec<Decoded>)> {
    let decoded = exec.map(samples.len(), |i| strategy.run(model, &samples[i].parts));
    let decoded: Vec<Decoded> = decoded.into_iter().collect::<Result<_>>()?;
    let hyps: Vec<Vec<String>> = decoded.iter().map(|d| model.words(d)).collect::<Result<_>>()?;
    let refs: Vec<Vec<Vec<String>>> = samples.iter().map(|s| s.captions.clone()).collect();
    Ok((metrics::evaluate(&hyps, &refs)?, decoded))
}

fn validation_bleu4<E: Executor>(model: &CaptionModel, val: &[Sample], strategy: DecodeStrategy, exec: &E) -> Result<f64> {
    let decoded = exec.map(val.len(), |i| strategy.run(model, &val[i].parts));
    let mut hyps = Vec::with_capacity(val.len());
    for d in decoded {
        hyps.push(model.words(&d?)?);
    }
    let refs: Vec<Vec<Vec<String>>> = val.iter().map(|s| s.captions.clone()).collect();
    metrics::bleu(&hyps, &refs, 4)
}

/// Trains a fresh model. The vocabulary comes from `train` only; `val`
/// drives early stopping and best-checkpoint selection when non-empty.
pub fn train<E: Executor>(
    config: &TrainConfig,
    train: &[Sample],
    val: &[Sample],
    supervisor: &Supervisor,
    exec: &E,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    let first = train.first().ok_or_else(|| Error::Input("empty training split".into()))?;
    let vocab = build_vocabulary(train);
    let model = CaptionModel::new(config.model.clone(), vocab, first.parts.widths(), config.seed)?;
    train_model(config, model, train, val, supervisor, exec, on_epoch)
}

/// Continues training an existing model.
pub fn train_model<E: Executor>(
    config: &TrainConfig,
    mut model: CaptionModel,
    train: &[Sample],
    val: &[Sample],
    supervisor: &Supervisor,
    exec: &E,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    let weights = config.weights()?;
    let examples = examples(train, &model.vocab, supervisor);
    if examples.is_empty() {
        return Err(Error::Input("training split has no captions".into()));
    }
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        },
        &model.store,
    );
    // distinct stream from weight initialisation
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005e_ed0f_0bde_u64);
    let mut order: Vec<usize> = (0..examples.len()).collect();

    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = LossBreakdown::default();
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let (loss, mut grads) = match batch_gradients(&model, &batch, weights, exec) {
                Err(Error::NonFiniteLoss { samples, .. }) => return Err(Error::NonFiniteLoss { epoch, batch: b, samples }),
                other => other?,
            };
            epoch_sum.accumulate(&loss.scaled(batch.len() as f64));
            clip_global_norm(&mut grads, config.clip_norm);
            adam.step(&mut model.store, &grads);
        }
        let mean = epoch_sum.scaled(1.0 / examples.len() as f64);
        let val_bleu4 = if val.is_empty() {
            None
        } else {
            Some(validation_bleu4(&model, val, config.decode, exec)?)
        };
        let entry = EpochLog {
            epoch,
            lang: mean.lang,
            spat: mean.spat,
            adapt: mean.adapt,
            total: mean.total,
            val_bleu4,
        };
        on_epoch(&entry);
        log.push(entry);

        if let Some(score) = val_bleu4 {
            if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
                best = Some((score, epoch, model.store.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    stopped_early = epoch < config.epochs;
                    break;
                }
            }
        }
    }

    let (best_epoch, best_val_bleu4) = match best {
        Some((score, epoch, store)) => {
            model.store = store;
            (epoch, Some(score))
        }
        None => (log.len(), None),
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_val_bleu4,
        stopped_early,
    })
}

/// Fraction of teacher-forced steps whose argmax equals the target word.
pub fn teacher_forced_accuracy(model: &CaptionModel, samples: &[Sample]) -> Result<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for s in samples {
        for c in &s.captions {
            let words = model.vocab.encode(c);
            let mut tape = Tape::new();
            let vars = model.store.bind(&mut tape);
            let fwd = model.teacher_forced(&mut tape, &vars, &s.parts, &words)?;
            for (p, y) in fwd.probs.iter().zip(words.iter().copied().chain([EOS])) {
                hit += usize::from(crate::decoder::argmax(tape.value(*p).data()) == y);
                total += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

/// Parses `"0,0;0,3;2,3"` into weight pairs `(λ_spat, λ_adapt)`.
pub fn parse_grid(spec: &str) -> Result<Vec<LossWeights>> {
    let mut out = Vec::new();
    for cell in spec.split(';').map(str::trim).filter(|c| !c.is_empty()) {
        let mut it = cell.split(',').map(str::trim);
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::Config(format!("grid cell {cell:?} is not \"spat,adapt\"")));
        };
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("grid value {s:?} is not a number")))
        };
        out.push(LossWeights::new(parse(a)?, parse(b)?)?);
    }
    if out.is_empty() {
        return Err(Error::Config("empty sweep grid".into()));
    }
    Ok(out)
}

/// One trained and evaluated sweep cell.
#[derive(Clone, Debug)]
pub struct CellResult {
    pub model: CaptionModel,
    pub log: Vec<EpochLog>,
    pub report: EvalReport,
    pub decoded: Vec<Decoded>,
}

#[derive(Debug)]
pub struct SweepCell {
    pub weights: LossWeights,
    pub seed: u64,
    pub result: Result<CellResult>,
}

impl SweepCell {
    pub fn status(&self) -> String {
        match &self.result {
            Ok(_) => "ok".into(),
            Err(e) => format!("failed: {e}"),
        }
    }
}

/// Trains and evaluates one model per (weights, seed) pair. Cells run through
/// `cells` (possibly in parallel); each cell trains single-threaded. A failing
/// cell is recorded and does not stop the sweep.
pub fn sweep<E: Executor>(
    base: &TrainConfig,
    grid: &[LossWeights],
    seeds: &[u64],
    data: (&[Sample], &[Sample], &[Sample]),
    supervisor: &Supervisor,
    cells: &E,
) -> Result<Vec<SweepCell>> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one grid cell and one seed".into()));
    }
    let (train_set, val_set, test_set) = data;
    let jobs: Vec<(LossWeights, u64)> = grid.iter().flat_map(|w| seeds.iter().map(move |s| (*w, *s))).collect();
    let results = cells.map(jobs.len(), |i| {
        let (weights, seed) = jobs[i];
        let config = TrainConfig {
            lambda_spat: weights.spat,
            lambda_adapt: weights.adapt,
            seed,
            ..base.clone()
        };
        let run = || -> Result<CellResult> {
            let out = train(&config, train_set, val_set, supervisor, &Sequential, &mut |_| {})?;
            let (report, decoded) = evaluate(&out.model, test_set, config.decode, &Sequential)?;
            Ok(CellResult {
                model: out.model,
                log: out.log,
                report,
                decoded,
            })
        };
        SweepCell {
            weights,
            seed,
            result: run(),
        }
    });
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g = parse_grid("0,0;0,3;2,3").unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g[2], LossWeights { spat: 2.0, adapt: 3.0 });
        assert!(parse_grid("").is_err());
        assert!(parse_grid("1").is_err());
        assert!(parse_grid("1,2,3").is_err());
        assert!(parse_grid("-1,0").is_err());
        assert!(parse_grid("a,b").is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            lambda_adapt: -1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sequential_executor_keeps_order() {
        assert_eq!(Sequential.map(4, |i| i * i), [0, 1, 4, 9]);
    }
}
