//! Corpus caption metrics on token lists: BLEU@1..4, ROUGE-L and CIDEr,
//! all reported on a ×100 scale.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// Added in place of a zero clipped count so the geometric mean stays defined.
pub const BLEU_EPSILON: f64 = 1e-9;
/// Recall weight β² of the ROUGE-L F-measure.
pub const ROUGE_BETA2: f64 = 1.2;
const CIDER_MAX_N: usize = 4;

type Caption = Vec<String>;

fn ngrams(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut out = BTreeMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

fn check_corpus(hyps: &[Caption], refs: &[Vec<Caption>]) -> Result<()> {
    if hyps.is_empty() || hyps.len() != refs.len() {
        return Err(Error::Evaluation(format!(
            "{} hypotheses for {} reference sets",
            hyps.len(),
            refs.len()
        )));
    }
    if let Some(i) = refs.iter().position(Vec::is_empty) {
        return Err(Error::Evaluation(format!("sample {i} has no reference")));
    }
    Ok(())
}

/// Corpus BLEU with uniform weights over 1..=max_n grams and the
/// closest-reference brevity penalty.
pub fn bleu(hyps: &[Caption], refs: &[Vec<Caption>], max_n: usize) -> Result<f64> {
    check_corpus(hyps, refs)?;
    if max_n == 0 {
        return Err(Error::Evaluation("BLEU order must be at least 1".into()));
    }
    let mut clipped = alloc::vec![0usize; max_n];
    let mut totals = alloc::vec![0usize; max_n];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, rs) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        // closest reference length, shorter one on ties
        ref_len += rs.iter().map(|r| r.len()).min_by_key(|&l| (l.abs_diff(h.len()), l)).unwrap_or(0);
        for n in 1..=max_n {
            let mut max_ref: BTreeMap<&[String], usize> = BTreeMap::new();
            for r in rs {
                for (g, c) in ngrams(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in ngrams(h, n) {
                clipped[n - 1] += c.min(max_ref.get(g).copied().unwrap_or(0));
                totals[n - 1] += c;
            }
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..max_n {
        let num = if clipped[n] == 0 { BLEU_EPSILON } else { clipped[n] as f64 };
        log_sum += math::ln(num / totals[n].max(1) as f64);
    }
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        math::exp(1.0 - ref_len as f64 / hyp_len as f64)
    };
    Ok(100.0 * bp * math::exp(log_sum / max_n as f64))
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = alloc::vec![0usize; b.len() + 1];
    let mut cur = alloc::vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Sentence ROUGE-L on a 0..1 scale: best LCS F-measure over the references.
pub fn rouge_l_sentence(hyp: &Caption, refs: &[Caption]) -> f64 {
    let mut best = 0.0f64;
    for r in refs {
        let l = lcs(hyp, r) as f64;
        if l == 0.0 {
            continue;
        }
        let p = l / hyp.len() as f64;
        let rec = l / r.len() as f64;
        let f = (1.0 + ROUGE_BETA2) * p * rec / (rec + ROUGE_BETA2 * p);
        best = best.max(f);
    }
    best
}

/// Mean sentence ROUGE-L × 100.
pub fn rouge_l(hyps: &[Caption], refs: &[Vec<Caption>]) -> Result<f64> {
    check_corpus(hyps, refs)?;
    let total: f64 = hyps.iter().zip(refs).map(|(h, r)| rouge_l_sentence(h, r)).sum();
    Ok(100.0 * total / hyps.len() as f64)
}

struct TfIdf {
    vecs: [BTreeMap<Vec<String>, f64>; CIDER_MAX_N],
    norms: [f64; CIDER_MAX_N],
}

fn tfidf(tokens: &[String], df: &BTreeMap<Vec<String>, f64>, log_n: f64) -> TfIdf {
    let mut vecs: [BTreeMap<Vec<String>, f64>; CIDER_MAX_N] = Default::default();
    let mut norms = [0.0; CIDER_MAX_N];
    for n in 1..=CIDER_MAX_N {
        for (g, c) in ngrams(tokens, n) {
            let d = df.get(g).copied().unwrap_or(0.0).max(1.0);
            let w = c as f64 * (log_n - math::ln(d));
            norms[n - 1] += w * w;
            vecs[n - 1].insert(g.to_vec(), w);
        }
    }
    TfIdf {
        vecs,
        norms: norms.map(math::sqrt),
    }
}

/// Per-sample CIDEr (×10 per sample, as customary), before the ×100 report
/// scaling. TF-IDF cosine over 1..4-grams without length penalty or count
/// clipping; document frequencies come from the references.
pub fn cider_per_sample(hyps: &[Caption], refs: &[Vec<Caption>]) -> Result<Vec<f64>> {
    check_corpus(hyps, refs)?;
    if hyps.len() < 2 {
        return Err(Error::Contract("CIDEr needs at least two samples for document frequencies".into()));
    }
    let mut df: BTreeMap<Vec<String>, f64> = BTreeMap::new();
    for rs in refs {
        let mut seen = BTreeSet::new();
        for r in rs {
            for n in 1..=CIDER_MAX_N {
                for g in ngrams(r, n).into_keys() {
                    seen.insert(g.to_vec());
                }
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0.0) += 1.0;
        }
    }
    let log_n = math::ln(hyps.len() as f64);
    let mut scores = Vec::with_capacity(hyps.len());
    for (h, rs) in hyps.iter().zip(refs) {
        let hv = tfidf(h, &df, log_n);
        let mut acc = 0.0;
        for r in rs {
            let rv = tfidf(r, &df, log_n);
            for n in 0..CIDER_MAX_N {
                let mut dot = 0.0;
                for (g, w) in &hv.vecs[n] {
                    if let Some(x) = rv.vecs[n].get(g) {
                        dot += w * x;
                    }
                }
                if hv.norms[n] != 0.0 && rv.norms[n] != 0.0 {
                    dot /= hv.norms[n] * rv.norms[n];
                }
                acc += dot;
            }
        }
        scores.push(10.0 * acc / (CIDER_MAX_N as f64 * rs.len() as f64));
    }
    Ok(scores)
}

/// Corpus CIDEr × 100.
pub fn cider(hyps: &[Caption], refs: &[Vec<Caption>]) -> Result<f64> {
    let per = cider_per_sample(hyps, refs)?;
    Ok(100.0 * per.iter().sum::<f64>() / per.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub cider: f64,
    pub n_samples: usize,
    /// Smoothing constant used for zero BLEU counts.
    pub bleu_epsilon: f64,
}

impl EvalReport {
    /// Column names shared with the sweep table.
    pub const COLUMNS: [&'static str; 7] = ["bleu1", "bleu2", "bleu3", "bleu4", "rougeL", "cider", "n_samples"];

    pub fn values(&self) -> [f64; 7] {
        [
            self.bleu1,
            self.bleu2,
            self.bleu3,
            self.bleu4,
            self.rouge_l,
            self.cider,
            self.n_samples as f64,
        ]
    }
}

/// Scores a corpus; hypotheses and references must already be free of
/// special tokens.
pub fn evaluate(hyps: &[Caption], refs: &[Vec<Caption>]) -> Result<EvalReport> {
    Ok(EvalReport {
        bleu1: bleu(hyps, refs, 1)?,
        bleu2: bleu(hyps, refs, 2)?,
        bleu3: bleu(hyps, refs, 3)?,
        bleu4: bleu(hyps, refs, 4)?,
        rouge_l: rouge_l(hyps, refs)?,
        cider: cider(hyps, refs)?,
        n_samples: hyps.len(),
        bleu_epsilon: BLEU_EPSILON,
    })
}
