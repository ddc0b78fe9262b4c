//! The full captioning model: part encoder, attention, two-LSTM decoder.
//!
//! One decoding step, given the previous word `y` and state `(h, c, h̄, c̄)`:
//!
//! ```text
//! x      = E[y]
//! h, c   = Bottom(x, h, c)
//! γ      = softmax_k(mean_i z_ik(h));   m, σ, Γ = refit(γ)
//! α      = softmax_i(s_ik(h))
//! ctx    = Σ_ik Γ_k α_ik P_ik;          β̂ = σ(W_b h + W_e x)
//! e      = tanh(W_c ctx + b)
//! h̄, c̄   = Top([e; x], h̄, c̄);           r = tanh(W_r h̄ + b)
//! p      = softmax(s · tanh(W_f [β̂ e + (1-β̂) r; x; h] + b_f))
//! ```

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{self, AttentionDims, AttentionParams, AttentionState, MotionKeys, SpatialAxis, StepAttention};
use crate::decoder::{self, Decoded, DecoderParams, StepModel, DEFAULT_MAX_LEN};
use crate::encoder::{self, EncoderParams};
use crate::error::{Error, Result};
use crate::losses::{self, LossBreakdown, LossWeights};
use crate::numerics::{grad_check, GradCheckReport, ParamStore, Tape, Tensor, Var};
use crate::skeleton::{MotionSequence, PartFrames, SkeletonLayout, NUM_PARTS};
use crate::supervision::{SupervisionTargets, Supervisor};
use crate::vocab::{Vocabulary, BOS, EOS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub h1: usize,
    pub h2: usize,
    pub d_emb: usize,
    pub h_dec: usize,
    /// Width of the additive attention scores.
    pub attn_dim: usize,
    /// Width of the common space of `e_t` and `r_t`.
    pub ctx_dim: usize,
    pub sigma_min: f64,
    pub spatial_axis: SpatialAxis,
    pub detach_moments: bool,
    pub logit_scale: f64,
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            h1: 128,
            h2: 64,
            d_emb: 64,
            h_dec: 128,
            attn_dim: 128,
            ctx_dim: 128,
            sigma_min: 0.5,
            spatial_axis: SpatialAxis::PerFrame,
            detach_moments: false,
            logit_scale: 1.0,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("h1", self.h1),
            ("h2", self.h2),
            ("d_emb", self.d_emb),
            ("h_dec", self.h_dec),
            ("attn_dim", self.attn_dim),
            ("ctx_dim", self.ctx_dim),
            ("max_len", self.max_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.sigma_min > 0.0) || !(self.logit_scale > 0.0) {
            return Err(Error::Config("sigma_min and logit_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Recurrent state of both LSTMs.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeState {
    pub h: Tensor,
    pub c: Tensor,
    pub h_top: Tensor,
    pub c_top: Tensor,
    pub step: usize,
}

#[derive(Clone, Copy, Debug)]
struct StateVars {
    h: Var,
    c: Var,
    h_top: Var,
    c_top: Var,
}

/// Tape handles of a teacher-forced pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub probs: Vec<Var>,
    pub attention: Vec<StepAttention>,
}

/// Loss handles on the tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub lang: Var,
    pub spat: Option<Var>,
    pub adapt: Var,
    pub total: Var,
}

#[derive(Clone, Debug)]
pub struct CaptionModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub widths: [usize; NUM_PARTS],
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub attention: AttentionParams,
    pub decoder: DecoderParams,
}

impl CaptionModel {
    /// Builds a freshly initialised model; `seed` fixes every weight.
    pub fn new(config: ModelConfig, vocab: Vocabulary, widths: [usize; NUM_PARTS], seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = EncoderParams::register(&mut store, widths, config.h1, config.h2, &mut rng);
        let dims = AttentionDims {
            h_enc: encoder.h_enc(),
            h_dec: config.h_dec,
            d_emb: config.d_emb,
            attn: config.attn_dim,
            ctx: config.ctx_dim,
        };
        let attention = AttentionParams::register(
            &mut store,
            &dims,
            config.sigma_min,
            config.spatial_axis,
            config.detach_moments,
            &mut rng,
        )?;
        let decoder = DecoderParams::register(
            &mut store,
            vocab.len(),
            config.d_emb,
            config.h_dec,
            config.ctx_dim,
            config.logit_scale,
            &mut rng,
        )?;
        Ok(Self {
            config,
            vocab,
            widths,
            store,
            encoder,
            attention,
            decoder,
        })
    }

    /// Rebuilds a model around stored parameters. Names and shapes must
    /// match the layout implied by the configuration.
    pub fn from_params(config: ModelConfig, vocab: Vocabulary, widths: [usize; NUM_PARTS], params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, vocab, widths, 0)?;
        if params.len() != model.store.len() {
            return Err(Error::Input(format!(
                "{} stored parameters, model expects {}",
                params.len(),
                model.store.len()
            )));
        }
        for ((_, name, expected), (_, got_name, got)) in model.store.iter().zip(params.iter()) {
            if name != got_name || expected.shape() != got.shape() {
                return Err(Error::Input(format!(
                    "parameter {got_name} {:?} does not match {name} {:?}",
                    got.shape(),
                    expected.shape()
                )));
            }
        }
        model.store = params;
        Ok(model)
    }

    fn zero_state(&self) -> DecodeState {
        let h = self.config.h_dec;
        DecodeState {
            h: Tensor::zeros(1, h),
            c: Tensor::zeros(1, h),
            h_top: Tensor::zeros(1, h),
            c_top: Tensor::zeros(1, h),
            step: 0,
        }
    }

    fn state_vars(tape: &mut Tape, s: &DecodeState) -> StateVars {
        StateVars {
            h: tape.leaf(s.h.clone()),
            c: tape.leaf(s.c.clone()),
            h_top: tape.leaf(s.h_top.clone()),
            c_top: tape.leaf(s.c_top.clone()),
        }
    }

    fn step_graph(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        keys: &MotionKeys,
        s: StateVars,
        prev: usize,
    ) -> Result<(Var, StateVars, StepAttention)> {
        let a = &self.attention;
        let x = self.decoder.embed(tape, vars, prev)?;
        let (h, c) = decoder::lstm_step(tape, vars, &self.decoder.bottom, x, s.h, s.c)?;
        let gamma = attention::temporal_attention(tape, vars, a, keys, h)?;
        let window = attention::gaussian_window(tape, gamma, keys.frame_index, a.sigma_min, a.detach_moments)?;
        let alpha = attention::spatial_attention(tape, vars, a, keys, h)?;
        let context = attention::context_vector(tape, window.window, alpha, keys.embeddings)?;
        let beta = attention::adaptive_gate(tape, vars, a, h, x)?;
        let e = attention::embed_motion(tape, vars, a, context)?;
        let top_in = tape.concat_cols(&[e, x])?;
        let (h_top, c_top) = decoder::lstm_step(tape, vars, &self.decoder.top, top_in, s.h_top, s.c_top)?;
        let r = attention::embed_language(tape, vars, a, h_top)?;
        let mixed = attention::adaptive_context(tape, e, r, beta)?;
        let probs = self.decoder.head(tape, vars, mixed, x, h)?;
        let attn = StepAttention {
            gamma,
            window,
            alpha,
            beta,
            context: mixed,
        };
        Ok((probs, StateVars { h, c, h_top, c_top }, attn))
    }

    fn check_parts(&self, parts: &PartFrames) -> Result<()> {
        if parts.widths() != self.widths {
            return Err(Error::Dimension {
                op: "model",
                detail: format!("part widths {:?}, model built for {:?}", parts.widths(), self.widths),
            });
        }
        Ok(())
    }

    /// Teacher-forced pass: step `t` reads `BOS, w_1, …` and predicts
    /// `w_1, …, EOS`. Returns one distribution per caption token plus EOS.
    pub fn teacher_forced(&self, tape: &mut Tape, vars: &[Var], parts: &PartFrames, words: &[usize]) -> Result<Forward> {
        self.check_parts(parts)?;
        let p = encoder::encode(tape, vars, &self.encoder, parts)?;
        let keys = attention::prepare_keys(tape, vars, &self.attention, p, parts.frames)?;
        let mut state = Self::state_vars(tape, &self.zero_state());
        let mut out = Forward {
            probs: Vec::with_capacity(words.len() + 1),
            attention: Vec::with_capacity(words.len() + 1),
        };
        for prev in core::iter::once(BOS).chain(words.iter().copied()) {
            let (probs, next, attn) = self.step_graph(tape, vars, &keys, state, prev)?;
            out.probs.push(probs);
            out.attention.push(attn);
            state = next;
        }
        Ok(out)
    }

    /// Records the global loss of one caption on `tape`.
    pub fn loss_graph(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        parts: &PartFrames,
        words: &[usize],
        targets: &SupervisionTargets,
        weights: LossWeights,
    ) -> Result<LossVars> {
        if targets.beta.len() != words.len() + 1 || targets.alpha.len() != words.len() + 1 {
            return Err(Error::Length(format!(
                "targets for {} steps, caption needs {}",
                targets.beta.len(),
                words.len() + 1
            )));
        }
        let fwd = self.teacher_forced(tape, vars, parts, words)?;
        let labels: Vec<usize> = words.iter().copied().chain(core::iter::once(EOS)).collect();
        let lang = losses::language_loss(tape, &fwd.probs, &labels)?;
        let gates: Vec<Var> = fwd.attention.iter().map(|a| a.beta).collect();
        let adapt = losses::adaptive_loss(tape, &gates, &targets.beta)?;
        let spat = if targets.n_y > 0 {
            let alphas: Vec<Var> = fwd.attention.iter().map(|a| a.alpha).collect();
            Some(losses::spatial_loss(tape, &alphas, &targets.alpha)?)
        } else {
            None
        };
        let total = losses::global_loss(tape, lang, spat, adapt, weights)?;
        Ok(LossVars { lang, spat, adapt, total })
    }

    /// Loss breakdown and gradients (one buffer per parameter, in store order).
    pub fn loss_and_grads(
        &self,
        parts: &PartFrames,
        words: &[usize],
        targets: &SupervisionTargets,
        weights: LossWeights,
    ) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let vars = self.store.bind(&mut tape);
        let l = self.loss_graph(&mut tape, &vars, parts, words, targets, weights)?;
        let breakdown = LossBreakdown {
            lang: tape.scalar(l.lang),
            spat: l.spat.map_or(0.0, |s| tape.scalar(s)),
            adapt: tape.scalar(l.adapt),
            total: tape.scalar(l.total),
        };
        if !breakdown.is_finite() {
            return Ok((breakdown, Vec::new()));
        }
        let mut g = tape.backward(l.total)?;
        let grads = vars
            .iter()
            .zip(self.store.iter())
            .map(|(v, (_, _, t))| g.take(*v).unwrap_or_else(|| alloc::vec![0.0; t.len()]))
            .collect();
        Ok((breakdown, grads))
    }

    /// Per-sample decoding context with the encoder output precomputed.
    pub fn session(&self, parts: &PartFrames) -> Result<Session<'_>> {
        self.check_parts(parts)?;
        let mut tape = Tape::new();
        let vars = self.store.bind(&mut tape);
        let p = encoder::encode(&mut tape, &vars, &self.encoder, parts)?;
        let keys = attention::prepare_keys(&mut tape, &vars, &self.attention, p, parts.frames)?;
        Ok(Session {
            model: self,
            frames: parts.frames,
            embeddings: tape.value(keys.embeddings).clone(),
            temporal: tape.value(keys.temporal).clone(),
            spatial: tape.value(keys.spatial).clone(),
        })
    }

    pub fn greedy(&self, parts: &PartFrames) -> Result<Decoded> {
        decoder::greedy_decode(&self.session(parts)?, BOS, self.config.max_len)
    }

    pub fn beam(&self, parts: &PartFrames, width: usize) -> Result<Decoded> {
        decoder::beam_decode(&self.session(parts)?, BOS, width, self.config.max_len)
    }

    /// Words of a decoded caption.
    pub fn words(&self, decoded: &Decoded) -> Result<Vec<String>> {
        self.vocab.decode(decoded.words())
    }
}

/// Finite-difference check of the full global loss on a toy instance:
/// 4 frames, the 3-token caption "a kicks a" (6 vocabulary entries), every
/// width equal to `hidden`, λ = (2, 3).
pub fn toy_gradient_check(hidden: usize, seed: u64, step: f64, tol: f64) -> Result<GradCheckReport> {
    use rand::Rng;
    let caption: Vec<String> = ["a", "kicks", "a"].iter().map(|w| String::from(*w)).collect();
    let vocab = Vocabulary::build([caption.as_slice()]);
    let layout = SkeletonLayout::default_layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions = (0..4 * layout.num_joints() * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let parts = MotionSequence::new(layout, 20.0, 3, positions)?.prepare()?;
    let config = ModelConfig {
        h1: hidden,
        h2: hidden,
        d_emb: hidden,
        h_dec: hidden,
        attn_dim: hidden,
        ctx_dim: hidden,
        ..ModelConfig::default()
    };
    let mut model = CaptionModel::new(config, vocab, parts.widths(), seed)?;
    let words = model.vocab.encode(&caption);
    let targets = Supervisor::standard().targets(&caption);
    let weights = LossWeights::new(2.0, 3.0)?;
    let mut store = core::mem::take(&mut model.store);
    let m = &model;
    grad_check(
        |t: &mut Tape, v: &[Var]| Ok(m.loss_graph(t, v, &parts, &words, &targets, weights)?.total),
        &mut store,
        step,
        tol,
    )
}

/// Decoding view of one motion. Implements [`StepModel`].
pub struct Session<'a> {
    model: &'a CaptionModel,
    frames: usize,
    embeddings: Tensor,
    temporal: Tensor,
    spatial: Tensor,
}

impl Session<'_> {
    pub fn frames(&self) -> usize {
        self.frames
    }
}

impl StepModel for Session<'_> {
    type State = DecodeState;

    fn vocab_size(&self) -> usize {
        self.model.vocab.len()
    }

    fn initial_state(&self) -> Result<DecodeState> {
        Ok(self.model.zero_state())
    }

    fn step(&self, state: &DecodeState, prev: usize) -> Result<(Vec<f64>, DecodeState, AttentionState)> {
        let mut tape = Tape::new();
        let vars = self.model.store.bind(&mut tape);
        let index: Vec<f64> = (0..self.frames).map(|k| k as f64).collect();
        let keys = MotionKeys {
            embeddings: tape.leaf(self.embeddings.clone()),
            temporal: tape.leaf(self.temporal.clone()),
            spatial: tape.leaf(self.spatial.clone()),
            frame_index: tape.leaf(Tensor::row(&index)),
            parts: self.embeddings.rows() / self.frames,
            frames: self.frames,
        };
        let s = CaptionModel::state_vars(&mut tape, state);
        let (probs, next, attn) = self.model.step_graph(&mut tape, &vars, &keys, s, prev)?;
        let next = DecodeState {
            h: tape.value(next.h).clone(),
            c: tape.value(next.c).clone(),
            h_top: tape.value(next.h_top).clone(),
            c_top: tape.value(next.c_top).clone(),
            step: state.step + 1,
        };
        Ok((tape.value(probs).data().to_vec(), next, attn.snapshot(&tape)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use crate::skeleton::{MotionSequence, SkeletonLayout};
    use crate::supervision::Supervisor;
    use crate::vocab::tokenize;
    use rand::Rng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            h1: 4,
            h2: 3,
            d_emb: 3,
            h_dec: 4,
            attn_dim: 3,
            ctx_dim: 4,
            max_len: 6,
            ..ModelConfig::default()
        }
    }

    fn motion(frames: usize, seed: u64) -> PartFrames {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = SkeletonLayout::default_layout();
        let n = frames * layout.num_joints() * 3;
        let pos = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        MotionSequence::new(layout, 20.0, 3, pos).unwrap().prepare().unwrap()
    }

    fn fixture() -> (CaptionModel, PartFrames, Vec<usize>, SupervisionTargets) {
        let caption = tokenize("a person kicks");
        let vocab = Vocabulary::build([caption.as_slice()]);
        let parts = motion(4, 1);
        let model = CaptionModel::new(small_config(), vocab, parts.widths(), 7).unwrap();
        let ids = model.vocab.encode(&caption);
        let targets = Supervisor::standard().targets(&caption);
        (model, parts, ids, targets)
    }

    #[test]
    fn teacher_forced_likelihood_matches_decoder_steps() {
        let (model, parts, ids, targets) = fixture();
        let mut tape = Tape::new();
        let vars = model.store.bind(&mut tape);
        let l = model
            .loss_graph(&mut tape, &vars, &parts, &ids, &targets, LossWeights::new(0.0, 0.0).unwrap())
            .unwrap();
        let session = model.session(&parts).unwrap();
        let mut state = session.initial_state().unwrap();
        let mut ll = 0.0;
        let labels: Vec<usize> = ids.iter().copied().chain([EOS]).collect();
        for (prev, target) in core::iter::once(BOS).chain(ids.iter().copied()).zip(labels) {
            let (probs, next, _) = session.step(&state, prev).unwrap();
            let total: f64 = probs.iter().sum();
            assert!((total - 1.0).abs() < 1e-12 && probs.iter().all(|p| *p >= 0.0));
            ll += probs[target].ln();
            state = next;
        }
        assert!((tape.scalar(l.lang) + ll).abs() < 1e-10);
        assert_eq!(tape.scalar(l.total), tape.scalar(l.lang));
    }

    #[test]
    fn zero_parameters_give_uniform_words() {
        let (mut model, parts, _, _) = fixture();
        model.store.zero_all();
        let session = model.session(&parts).unwrap();
        let (probs, _, attn) = session.step(&session.initial_state().unwrap(), BOS).unwrap();
        let k = model.vocab.len() as f64;
        assert!(probs.iter().all(|p| (p - 1.0 / k).abs() < 1e-15));
        assert_eq!(attn.beta, 0.5);
        assert!(matches!(
            session.step(&session.initial_state().unwrap(), 99),
            Err(Error::Vocabulary(_))
        ));
    }

    #[test]
    fn global_loss_gradients_match_differences() {
        let (mut model, parts, ids, targets) = fixture();
        let m = model.clone();
        let report = grad_check(
            |t: &mut Tape, v: &[Var]| Ok(m.loss_graph(t, v, &parts, &ids, &targets, LossWeights::new(2.0, 3.0)?)?.total),
            &mut model.store,
            1e-4,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{:?}", report.failures().collect::<Vec<_>>());
    }

    #[test]
    fn toy_check_covers_every_parameter() {
        let report = toy_gradient_check(8, 0, 1e-4, 1e-4).unwrap();
        assert!(report.passed, "{:?}", report.failures().collect::<Vec<_>>());
        assert_eq!(report.params.len(), fixture().0.store.len());
    }

    #[test]
    fn decoding_is_deterministic_and_bounded() {
        let (model, parts, _, _) = fixture();
        let a = model.greedy(&parts).unwrap();
        let b = model.greedy(&parts).unwrap();
        assert_eq!(a, b);
        assert!(a.tokens.len() <= model.config.max_len);
        assert_eq!(a.attention.len(), a.tokens.len());
        let w1 = model.beam(&parts, 1).unwrap();
        assert_eq!(w1.tokens, a.tokens);
    }

    #[test]
    fn rebuild_from_params() {
        let (model, parts, _, _) = fixture();
        let again = CaptionModel::from_params(model.config.clone(), model.vocab.clone(), model.widths, model.store.clone()).unwrap();
        assert_eq!(again.greedy(&parts).unwrap(), model.greedy(&parts).unwrap());
        let mut other = ParamStore::new();
        other.add("x", Tensor::zeros(1, 1));
        assert!(CaptionModel::from_params(model.config.clone(), model.vocab.clone(), model.widths, other).is_err());
    }

    #[test]
    fn wrong_part_widths_are_rejected() {
        let (model, _, ids, targets) = fixture();
        let mut parts = motion(4, 2);
        parts.positions[0] = Tensor::zeros(4, 2);
        assert!(model.session(&parts).is_err());
        assert!(model
            .loss_and_grads(&parts, &ids, &targets, LossWeights::new(0.0, 0.0).unwrap())
            .is_err());
    }
}
