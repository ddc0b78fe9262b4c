//! Analyses over attention dumps: gate densities, body-part histograms,
//! action localization and fine-grained reports.
//!
//! Everything here reads dumped attention only, so the same analysis runs
//! on any conforming dump and is deterministic.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::attention::AttentionDump;
use crate::error::{Error, Result};
use crate::math;
use crate::skeleton::{BodyPart, NUM_PARTS};
use crate::supervision::{stem, Supervisor, WordClass};
use crate::synth::Annotation;
use crate::vocab::EOS_TOKEN;

pub const DEFAULT_KAPPA: f64 = 1.5;
pub const DEFAULT_TAU_BETA: f64 = 0.5;
/// Stems seen fewer times than this are flagged in density reports.
pub const LOW_COUNT: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub word: String,
    pub stem: String,
    pub beta: f64,
    pub gamma: Vec<f64>,
    pub window: Vec<f64>,
    /// `frames x parts`
    pub alpha: Vec<Vec<f64>>,
    pub m: f64,
    pub sigma: f64,
}

impl TokenRecord {
    /// Peak frame of the Gaussian window and the top part at that frame.
    /// Ties go to the lowest index in both steps.
    pub fn peak(&self) -> (usize, BodyPart) {
        let k = argmax(&self.window);
        let part = self.alpha.get(k).map_or(0, |a| argmax(a));
        (k, BodyPart::from_index(part).unwrap_or(BodyPart::LeftArm))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpRecord {
    pub id: String,
    pub frames: usize,
    pub tokens: Vec<TokenRecord>,
}

impl InterpRecord {
    /// Converts a dump; the end-of-sentence step is dropped.
    pub fn from_dump(dump: &AttentionDump) -> Result<Self> {
        dump.validate()?;
        let frames = dump.frames();
        let mut tokens = Vec::with_capacity(dump.tokens.len());
        for (t, word) in dump.tokens.iter().enumerate() {
            if word == EOS_TOKEN {
                continue;
            }
            if dump.alpha[t].iter().any(|a| a.len() != NUM_PARTS) {
                return Err(Error::Input(format!(
                    "dump {}: token {t} needs {NUM_PARTS} parts per frame",
                    dump.id
                )));
            }
            tokens.push(TokenRecord {
                word: word.clone(),
                stem: stem(word),
                beta: dump.beta[t],
                gamma: dump.gamma[t].clone(),
                window: dump.window[t].clone(),
                alpha: dump.alpha[t].clone(),
                m: dump.m[t],
                sigma: dump.sigma[t],
            });
        }
        Ok(Self {
            id: dump.id.clone(),
            frames,
            tokens,
        })
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

fn occurrences<'a>(records: &'a [InterpRecord], s: &'a str) -> impl Iterator<Item = &'a TokenRecord> + 'a {
    records.iter().flat_map(|r| &r.tokens).filter(move |t| t.stem == s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaDensity {
    pub stem: String,
    pub count: usize,
    pub low_count: bool,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub bandwidth: f64,
    /// Evaluation points on `[0, 1]`.
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = math::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule: `0.9 min(sd, IQR / 1.34) n^(-1/5)`, falling back to
/// the sd when the IQR vanishes.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = math::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64);
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = (quantile(&sorted, 0.75) - quantile(&sorted, 0.25)) / 1.34;
    let spread = if iqr > 0.0 { sd.min(iqr) } else { sd };
    0.9 * spread * math::powf(n as f64, -0.2)
}

/// Gaussian KDE of β̂ per stem on `grid_points` points spanning `[0, 1]`.
/// A zero bandwidth yields a spike: all mass on the grid point nearest the
/// common value.
pub fn beta_density(records: &[InterpRecord], stems: &[&str], grid_points: usize) -> Result<Vec<BetaDensity>> {
    if records.iter().all(|r| r.tokens.is_empty()) {
        return Err(Error::Input("no decoded tokens to analyse".into()));
    }
    if grid_points < 2 {
        return Err(Error::Input("density grid needs at least 2 points".into()));
    }
    let step = 1.0 / (grid_points - 1) as f64;
    let grid: Vec<f64> = (0..grid_points).map(|i| i as f64 * step).collect();
    let mut out = Vec::with_capacity(stems.len());
    for s in stems {
        let s = stem(s);
        let mut values: Vec<f64> = occurrences(records, &s).map(|t| t.beta).collect();
        values.sort_by(f64::total_cmp);
        let n = values.len();
        let bandwidth = silverman_bandwidth(&values);
        let mut density = vec![0.0; grid_points];
        if n > 0 && bandwidth > 0.0 {
            let norm = 1.0 / (n as f64 * bandwidth * math::sqrt(2.0 * core::f64::consts::PI));
            for (d, x) in density.iter_mut().zip(&grid) {
                *d = norm
                    * values
                        .iter()
                        .map(|v| math::exp(-0.5 * ((x - v) / bandwidth) * ((x - v) / bandwidth)))
                        .sum::<f64>();
            }
        } else if n > 0 {
            let i = math::round(values[0] / step).clamp(0.0, (grid_points - 1) as f64) as usize;
            density[i] = 1.0 / step;
        }
        out.push(BetaDensity {
            count: n,
            low_count: n < LOW_COUNT,
            mean: (n > 0).then(|| values.iter().sum::<f64>() / n as f64),
            median: (n > 0).then(|| quantile(&values, 0.5)),
            bandwidth,
            grid: grid.clone(),
            density,
            stem: s,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartHistogram {
    pub stem: String,
    pub counts: [usize; NUM_PARTS],
    pub total: usize,
    pub modal: Option<BodyPart>,
    pub share: f64,
}

/// Counts the top part at the window peak over every occurrence of `word`.
pub fn part_histogram(records: &[InterpRecord], word: &str) -> PartHistogram {
    let s = stem(word);
    let mut counts = [0; NUM_PARTS];
    for t in occurrences(records, &s) {
        counts[t.peak().1.index()] += 1;
    }
    let total = counts.iter().sum();
    let modal_index = counts.iter().enumerate().fold(None, |best: Option<usize>, (i, c)| match best {
        Some(b) if counts[b] >= *c => Some(b),
        _ if *c > 0 => Some(i),
        _ => best,
    });
    PartHistogram {
        stem: s,
        counts,
        total,
        modal: modal_index.and_then(BodyPart::from_index),
        share: modal_index.map_or(0.0, |i| counts[i] as f64 / total as f64),
    }
}

/// Frame span `[round(m - κσ), round(m + κσ)]` clamped to the motion.
pub fn localize(m: f64, sigma: f64, frames: usize, kappa: f64) -> (usize, usize) {
    let last = frames.saturating_sub(1) as f64;
    let start = math::round(m - kappa * sigma).clamp(0.0, last);
    let end = math::round(m + kappa * sigma).clamp(0.0, last);
    (start as usize, end as usize)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    /// Token position in the caption.
    pub position: usize,
    pub word: String,
    pub beta: f64,
    pub m: f64,
    pub sigma: f64,
    pub start: usize,
    pub end: usize,
    pub part: BodyPart,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FineGrainedReport {
    pub id: String,
    pub caption: String,
    pub frames: usize,
    /// Motion words (β̂ above threshold), ordered by window centre.
    pub motion_words: Vec<ReportEntry>,
}

pub fn fine_grained_report(record: &InterpRecord, tau_beta: f64, kappa: f64) -> FineGrainedReport {
    let mut motion_words: Vec<ReportEntry> = record
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.beta > tau_beta)
        .map(|(position, t)| {
            let (start, end) = localize(t.m, t.sigma, record.frames, kappa);
            ReportEntry {
                position,
                word: t.word.clone(),
                beta: t.beta,
                m: t.m,
                sigma: t.sigma,
                start,
                end,
                part: t.peak().1,
            }
        })
        .collect();
    motion_words.sort_by(|a, b| a.m.total_cmp(&b.m).then(a.position.cmp(&b.position)));
    let words: Vec<&str> = record.tokens.iter().map(|t| t.word.as_str()).collect();
    FineGrainedReport {
        id: record.id.clone(),
        caption: words.join(" "),
        frames: record.frames,
        motion_words,
    }
}

/// Summary of how well attention matches the synthetic ground truth.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthScores {
    pub motion_beta_mean: f64,
    pub function_beta_mean: f64,
    pub gate_gap: f64,
    /// Occurrences of part-mapped words whose peak part is in the word's
    /// dictionary part set.
    pub part_accuracy: f64,
    pub part_occurrences: usize,
    /// Motion-word occurrences with `|m - centre| <= tolerance * T_x`.
    pub localization_accuracy: f64,
    pub localization_occurrences: usize,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Scores decoded records against gold annotations (matched by id).
/// Localization only counts motion words whose stem belongs to exactly one
/// annotated action of the sample.
pub fn score_against_gold(
    records: &[InterpRecord],
    gold: &[Annotation],
    supervisor: &Supervisor,
    tolerance: f64,
) -> Result<GroundTruthScores> {
    let by_id: BTreeMap<&str, &Annotation> = gold.iter().map(|a| (a.id.as_str(), a)).collect();
    let (mut motion, mut function) = (Vec::new(), Vec::new());
    let (mut part_hits, mut part_total) = (0usize, 0usize);
    let (mut loc_hits, mut loc_total) = (0usize, 0usize);
    for r in records {
        let ann = by_id
            .get(r.id.as_str())
            .ok_or_else(|| Error::Input(format!("no annotation for record {}", r.id)))?;
        for t in &r.tokens {
            let class = supervisor.classify(&t.word);
            if class.is_motion() {
                motion.push(t.beta);
            } else {
                function.push(t.beta);
            }
            if let WordClass::PartMapped { parts, .. } = class {
                part_total += 1;
                part_hits += usize::from(parts[t.peak().1.index()]);
            }
            if class.is_motion() {
                if let Some(action) = ann.action_for_stem(&t.stem) {
                    loc_total += 1;
                    loc_hits += usize::from((t.m - action.center).abs() <= tolerance * ann.frames as f64);
                }
            }
        }
    }
    let ratio = |h: usize, n: usize| if n == 0 { f64::NAN } else { h as f64 / n as f64 };
    let (mb, fb) = (mean(&motion), mean(&function));
    Ok(GroundTruthScores {
        motion_beta_mean: mb,
        function_beta_mean: fb,
        gate_gap: mb - fb,
        part_accuracy: ratio(part_hits, part_total),
        part_occurrences: part_total,
        localization_accuracy: ratio(loc_hits, loc_total),
        localization_occurrences: loc_total,
    })
}
