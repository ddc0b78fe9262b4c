//! Two-LSTM decoder pieces and caption search.
//!
//! The Bottom LSTM reads the previous word and drives the attention; the Top
//! LSTM reads the embedded motion context together with the previous word.
//! The head maps `[c̄_t; E y_{t-1}; h_t]` through `softmax(s · tanh(W_f x + b))`.

use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng;

use crate::attention::AttentionState;
use crate::error::{dim, Error, Result};
use crate::math;
use crate::numerics::{Axis, ParamId, ParamStore, Tape, Tensor, Var};
use crate::vocab::EOS;

pub const DEFAULT_MAX_LEN: usize = 30;

/// Gate order inside the stacked weights: input, forget, cell, output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LstmParams {
    /// `4h x input`
    pub w: ParamId,
    /// `4h x h`
    pub u: ParamId,
    /// `1 x 4h`
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmParams {
    pub fn register<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut bias = Tensor::zeros(1, 4 * hidden);
        for j in hidden..2 * hidden {
            bias.data_mut()[j] = 1.0;
        }
        Self {
            w: store.add_uniform(&format!("{name}.w"), 4 * hidden, input, rng),
            u: store.add_uniform(&format!("{name}.u"), 4 * hidden, hidden, rng),
            b: store.add(&format!("{name}.b"), bias),
            hidden,
        }
    }
}

/// One LSTM step; returns `(h', c')`.
pub fn lstm_step(tape: &mut Tape, vars: &[Var], p: &LstmParams, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let n = p.hidden;
    let zx = tape.matmul_nt(x, vars[p.w.0])?;
    let zh = tape.matmul_nt(h, vars[p.u.0])?;
    let z = tape.add(zx, zh)?;
    let z = tape.add(z, vars[p.b.0])?;
    let i = tape.slice_cols(z, 0, n)?;
    let i = tape.sigmoid(i);
    let f = tape.slice_cols(z, n, n)?;
    let f = tape.sigmoid(f);
    let g = tape.slice_cols(z, 2 * n, n)?;
    let g = tape.tanh(g);
    let o = tape.slice_cols(z, 3 * n, n)?;
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_next = tape.add(keep, write)?;
    let squashed = tape.tanh(c_next);
    let h_next = tape.mul(o, squashed)?;
    Ok((h_next, c_next))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    /// Word embeddings, one row per vocabulary entry: `K x d_emb`.
    pub embedding: ParamId,
    pub bottom: LstmParams,
    pub top: LstmParams,
    /// `K x (d_ctx + d_emb + h_dec)`
    pub head_w: ParamId,
    pub head_b: ParamId,
    pub vocab_size: usize,
    pub d_emb: usize,
    pub h_dec: usize,
    /// Multiplier on the bounded head activations before the softmax.
    pub logit_scale: f64,
}

impl DecoderParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        vocab_size: usize,
        d_emb: usize,
        h_dec: usize,
        d_ctx: usize,
        logit_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if vocab_size < 5 {
            return Err(Error::Vocabulary(format!("vocabulary of {vocab_size} entries has no words")));
        }
        if !(logit_scale > 0.0) {
            return Err(Error::Config(format!("logit_scale must be positive, got {logit_scale}")));
        }
        let embedding = store.add_uniform("decoder.embedding", vocab_size, d_emb, rng);
        Ok(Self {
            embedding,
            bottom: LstmParams::register(store, "decoder.bottom", d_emb, h_dec, rng),
            top: LstmParams::register(store, "decoder.top", d_ctx + d_emb, h_dec, rng),
            head_w: store.add_uniform("decoder.head.weight", vocab_size, d_ctx + d_emb + h_dec, rng),
            head_b: store.add("decoder.head.bias", Tensor::zeros(1, vocab_size)),
            vocab_size,
            d_emb,
            h_dec,
            logit_scale,
        })
    }

    /// `1 x d_emb` embedding of `token`.
    pub fn embed(&self, tape: &mut Tape, vars: &[Var], token: usize) -> Result<Var> {
        if token >= self.vocab_size {
            return Err(Error::Vocabulary(format!(
                "token id {token} outside vocabulary of {}",
                self.vocab_size
            )));
        }
        tape.select_rows(vars[self.embedding.0], &[token])
    }

    /// Word distribution `1 x K`.
    pub fn head(&self, tape: &mut Tape, vars: &[Var], context: Var, prev_embedding: Var, h: Var) -> Result<Var> {
        let x = tape.concat_cols(&[context, prev_embedding, h])?;
        let expected = tape.value(vars[self.head_w.0]).cols();
        if tape.value(x).cols() != expected {
            return Err(dim(
                "decoder head",
                format!("input width {} for head expecting {expected}", tape.value(x).cols()),
            ));
        }
        let z = tape.matmul_nt(x, vars[self.head_w.0])?;
        let z = tape.add(z, vars[self.head_b.0])?;
        let z = tape.tanh(z);
        let z = tape.affine(z, self.logit_scale, 0.0);
        Ok(tape.softmax(z, Axis::Cols))
    }
}

/// Anything that produces next-word distributions step by step.
pub trait StepModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;
    fn initial_state(&self) -> Result<Self::State>;
    fn step(&self, state: &Self::State, prev: usize) -> Result<(Vec<f64>, Self::State, AttentionState)>;
}

/// A decoded caption. `tokens` ends with EOS unless the length bound was hit.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub attention: Vec<AttentionState>,
}

impl Decoded {
    /// Length-normalised log-probability.
    pub fn score(&self) -> f64 {
        if self.tokens.is_empty() {
            0.0
        } else {
            self.log_prob / self.tokens.len() as f64
        }
    }

    /// Tokens without the trailing EOS.
    pub fn words(&self) -> &[usize] {
        match self.tokens.split_last() {
            Some((&EOS, rest)) => rest,
            _ => &self.tokens,
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn check_probs(probs: &[f64], vocab: usize) -> Result<()> {
    if probs.len() != vocab {
        return Err(dim("decode", format!("{} probabilities for vocabulary of {vocab}", probs.len())));
    }
    Ok(())
}

pub fn greedy_decode<M: StepModel>(model: &M, start: usize, max_len: usize) -> Result<Decoded> {
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let mut state = model.initial_state()?;
    let mut prev = start;
    let mut out = Decoded {
        tokens: Vec::new(),
        log_prob: 0.0,
        attention: Vec::new(),
    };
    for _ in 0..max_len {
        let (probs, next, attn) = model.step(&state, prev)?;
        check_probs(&probs, model.vocab_size())?;
        let tok = argmax(&probs);
        out.tokens.push(tok);
        out.log_prob += math::ln(probs[tok]);
        out.attention.push(attn);
        if tok == EOS {
            break;
        }
        state = next;
        prev = tok;
    }
    Ok(out)
}

struct Hypothesis<S> {
    tokens: Vec<usize>,
    log_prob: f64,
    state: S,
    attention: Vec<AttentionState>,
}

/// Beam search. Each round keeps the `width` best extensions by cumulative
/// log-probability; extensions ending in EOS leave the beam. Finished
/// captions are ranked by length-normalised score.
pub fn beam_decode<M: StepModel>(model: &M, start: usize, width: usize, max_len: usize) -> Result<Decoded> {
    if width == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let mut live = Vec::from([Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: model.initial_state()?,
        attention: Vec::new(),
    }]);
    let mut finished: Vec<Decoded> = Vec::new();

    for step in 0..max_len {
        // (hypothesis, token, total, p)
        let mut candidates = Vec::new();
        let mut expanded = Vec::with_capacity(live.len());
        for (h, hyp) in live.iter().enumerate() {
            let prev = hyp.tokens.last().copied().unwrap_or(start);
            let (probs, next, attn) = model.step(&hyp.state, prev)?;
            check_probs(&probs, model.vocab_size())?;
            for (tok, p) in probs.iter().enumerate() {
                candidates.push((h, tok, hyp.log_prob + math::ln(*p), *p));
            }
            expanded.push((next, attn));
        }
        candidates.sort_by(|a, b| {
            b.2.total_cmp(&a.2)
                .then_with(|| b.3.total_cmp(&a.3))
                .then_with(|| a.0.cmp(&b.0))
                .then_with(|| a.1.cmp(&b.1))
        });
        candidates.truncate(width);

        let last = step + 1 == max_len;
        let mut next_live = Vec::new();
        for (h, tok, total, _) in candidates {
            let parent = &live[h];
            let mut tokens = parent.tokens.clone();
            tokens.push(tok);
            let mut attention = parent.attention.clone();
            attention.push(expanded[h].1.clone());
            if tok == EOS || last {
                finished.push(Decoded {
                    tokens,
                    log_prob: total,
                    attention,
                });
            } else {
                next_live.push(Hypothesis {
                    tokens,
                    log_prob: total,
                    state: expanded[h].0.clone(),
                    attention,
                });
            }
        }
        live = next_live;
        if live.is_empty() {
            break;
        }
    }

    let mut best: Option<Decoded> = None;
    for d in finished {
        let better = match &best {
            None => true,
            Some(b) => d.score().total_cmp(&b.score()) == Ordering::Greater,
        };
        if better {
            best = Some(d);
        }
    }
    best.ok_or_else(|| Error::Contract("beam search finished without a hypothesis".into()))
}
