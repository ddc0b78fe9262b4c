//! Temporal attention, the Gaussian temporal window, spatial attention over
//! body parts, the adaptive gate and context assembly.
//!
//! Shapes used throughout (`a` parts, `T` frames):
//! - part embeddings `P`: `(a*T) x h_enc`, row `i*T + k`
//! - temporal weights `γ` and window `Γ`: `1 x T`
//! - spatial weights `α`: `a x T` (column `k` holds the part weights of frame `k`)

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim, Error, Result};
use crate::math;
use crate::numerics::{Axis, ParamId, ParamStore, Tape, Tensor, Var};

/// Normalisation axis of the spatial softmax.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialAxis {
    /// Softmax over parts, independently for each frame.
    #[default]
    PerFrame,
    /// One softmax over every (part, frame) pair.
    Joint,
}

/// Additive score block `wᵀ tanh(W_p P + W_h h)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreParams {
    /// `d x h_enc`
    pub keys: ParamId,
    /// `d x h_dec`
    pub query: ParamId,
    /// `1 x d`
    pub score: ParamId,
}

impl ScoreParams {
    fn register<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, h_enc: usize, h_dec: usize, rng: &mut R) -> Self {
        Self {
            keys: store.add_uniform(&format!("attention.{name}.keys"), d, h_enc, rng),
            query: store.add_uniform(&format!("attention.{name}.query"), d, h_dec, rng),
            score: store.add_uniform(&format!("attention.{name}.score"), 1, d, rng),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub temporal: ScoreParams,
    pub spatial: ScoreParams,
    /// `1 x h_dec`
    pub gate_hidden: ParamId,
    /// `1 x d_emb`
    pub gate_embed: ParamId,
    /// Motion context into the common space, `d_ctx x h_enc`.
    pub motion_w: ParamId,
    pub motion_b: ParamId,
    /// Top hidden state into the common space, `d_ctx x h_dec`.
    pub lang_w: ParamId,
    pub lang_b: ParamId,
    pub sigma_min: f64,
    pub spatial_axis: SpatialAxis,
    /// Stop gradients through the window mean and spread.
    pub detach_moments: bool,
}

pub struct AttentionDims {
    pub h_enc: usize,
    pub h_dec: usize,
    pub d_emb: usize,
    pub attn: usize,
    pub ctx: usize,
}

impl AttentionParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        dims: &AttentionDims,
        sigma_min: f64,
        spatial_axis: SpatialAxis,
        detach_moments: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if !(sigma_min > 0.0) {
            return Err(Error::Config(format!("sigma_min must be positive, got {sigma_min}")));
        }
        Ok(Self {
            temporal: ScoreParams::register(store, "temporal", dims.attn, dims.h_enc, dims.h_dec, rng),
            spatial: ScoreParams::register(store, "spatial", dims.attn, dims.h_enc, dims.h_dec, rng),
            gate_hidden: store.add_uniform("gate.hidden", 1, dims.h_dec, rng),
            gate_embed: store.add_uniform("gate.embed", 1, dims.d_emb, rng),
            motion_w: store.add_uniform("context.motion.weight", dims.ctx, dims.h_enc, rng),
            motion_b: store.add("context.motion.bias", Tensor::zeros(1, dims.ctx)),
            lang_w: store.add_uniform("context.language.weight", dims.ctx, dims.h_dec, rng),
            lang_b: store.add("context.language.bias", Tensor::zeros(1, dims.ctx)),
            sigma_min,
            spatial_axis,
            detach_moments,
        })
    }
}

/// Per-sample projections of the part embeddings; they do not depend on the
/// decoding step and are computed once.
#[derive(Clone, Copy, Debug)]
pub struct MotionKeys {
    pub embeddings: Var,
    pub temporal: Var,
    pub spatial: Var,
    pub frame_index: Var,
    pub parts: usize,
    pub frames: usize,
}

pub fn prepare_keys(tape: &mut Tape, vars: &[Var], p: &AttentionParams, embeddings: Var, frames: usize) -> Result<MotionKeys> {
    let rows = tape.value(embeddings).rows();
    if frames == 0 || !rows.is_multiple_of(frames) {
        return Err(dim("attention", format!("{rows} embedding rows for {frames} frames")));
    }
    let temporal = tape.matmul_nt(embeddings, vars[p.temporal.keys.0])?;
    let spatial = tape.matmul_nt(embeddings, vars[p.spatial.keys.0])?;
    let index: Vec<f64> = (0..frames).map(|k| k as f64).collect();
    let frame_index = tape.leaf(Tensor::row(&index));
    Ok(MotionKeys {
        embeddings,
        temporal,
        spatial,
        frame_index,
        parts: rows / frames,
        frames,
    })
}

/// `a x T` raw scores of one additive block.
fn scores(tape: &mut Tape, vars: &[Var], block: &ScoreParams, projected: Var, keys: &MotionKeys, h: Var) -> Result<Var> {
    let q = tape.matmul_nt(h, vars[block.query.0])?;
    let pre = tape.add(projected, q)?;
    let pre = tape.tanh(pre);
    let s = tape.matmul_nt(pre, vars[block.score.0])?;
    tape.reshape(s, keys.parts, keys.frames)
}

/// Frame weights `γ_t` (`1 x T`): scores are averaged over parts, then a
/// softmax runs over frames.
pub fn temporal_attention(tape: &mut Tape, vars: &[Var], p: &AttentionParams, keys: &MotionKeys, h: Var) -> Result<Var> {
    let z = scores(tape, vars, &p.temporal, keys.temporal, keys, h)?;
    let pooled = tape.mean_axis(z, Axis::Rows);
    Ok(tape.softmax(pooled, Axis::Cols))
}

/// Part weights `α_t` (`a x T`).
pub fn spatial_attention(tape: &mut Tape, vars: &[Var], p: &AttentionParams, keys: &MotionKeys, h: Var) -> Result<Var> {
    let s = scores(tape, vars, &p.spatial, keys.spatial, keys, h)?;
    match p.spatial_axis {
        SpatialAxis::PerFrame => Ok(tape.softmax(s, Axis::Rows)),
        SpatialAxis::Joint => {
            let flat = tape.reshape(s, 1, keys.parts * keys.frames)?;
            let sm = tape.softmax(flat, Axis::Cols);
            tape.reshape(sm, keys.parts, keys.frames)
        }
    }
}

/// Tape handles of the Gaussian window.
#[derive(Clone, Copy, Debug)]
pub struct WindowVars {
    pub m: Var,
    pub sigma: Var,
    pub window: Var,
}

const NORMALISATION_TOL: f64 = 1e-6;

fn check_distribution(gamma: &[f64]) -> Result<()> {
    let total: f64 = gamma.iter().sum();
    if (total - 1.0).abs() > NORMALISATION_TOL || gamma.iter().any(|g| *g < 0.0) {
        return Err(Error::Contract(format!("temporal weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// Refits `γ` as a Gaussian over frame indices:
/// `m = Σ k γ_k`, `σ = max(σ_min, sqrt(Σ γ_k (k-m)²))`,
/// `Γ_k = exp(-(k-m)² / (2σ²))`. `Γ` is not normalised.
pub fn gaussian_window(tape: &mut Tape, gamma: Var, frame_index: Var, sigma_min: f64, detach: bool) -> Result<WindowVars> {
    check_distribution(tape.value(gamma).data())?;
    let g = if detach { tape.detach(gamma) } else { gamma };
    let weighted = tape.mul(g, frame_index)?;
    let m = tape.sum(weighted);
    let diff = tape.sub(frame_index, m)?;
    let sq = tape.mul(diff, diff)?;
    let spread = tape.mul(g, sq)?;
    let var = tape.sum(spread);
    // max(σ_min, sqrt(v)) == sqrt(max(σ_min², v)) and keeps sqrt away from 0
    let var = tape.clamp(var, sigma_min * sigma_min, f64::INFINITY);
    let sigma = tape.sqrt(var)?;
    let denom = tape.affine(var, 2.0, 0.0);
    let ratio = tape.div(sq, denom)?;
    let neg = tape.neg(ratio);
    let window = tape.exp(neg);
    Ok(WindowVars { m, sigma, window })
}

/// Plain-value Gaussian window.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianWindow {
    pub m: f64,
    pub sigma: f64,
    pub window: Vec<f64>,
}

pub fn gaussian_refit(gamma: &[f64], sigma_min: f64) -> Result<GaussianWindow> {
    check_distribution(gamma)?;
    let m: f64 = gamma.iter().enumerate().map(|(k, g)| k as f64 * g).sum();
    let var: f64 = gamma.iter().enumerate().map(|(k, g)| g * (k as f64 - m) * (k as f64 - m)).sum();
    let sigma = math::sqrt(var).max(sigma_min);
    let window = (0..gamma.len())
        .map(|k| {
            let d = k as f64 - m;
            math::exp(-d * d / (2.0 * sigma * sigma))
        })
        .collect();
    Ok(GaussianWindow { m, sigma, window })
}

/// `β̂_t = sigmoid(W_b h_t + W_e E y_{t-1})`, a `1 x 1` value.
pub fn adaptive_gate(tape: &mut Tape, vars: &[Var], p: &AttentionParams, h: Var, prev_embedding: Var) -> Result<Var> {
    let a = tape.matmul_nt(h, vars[p.gate_hidden.0])?;
    let b = tape.matmul_nt(prev_embedding, vars[p.gate_embed.0])?;
    let logit = tape.add(a, b)?;
    Ok(tape.sigmoid(logit))
}

/// `c_t = Σ_k Σ_i Γ_k α_ik P_ik` as a `1 x h_enc` row.
pub fn context_vector(tape: &mut Tape, window: Var, alpha: Var, embeddings: Var) -> Result<Var> {
    let [parts, frames] = tape.value(alpha).shape();
    if tape.value(window).shape() != [1, frames] || tape.value(embeddings).rows() != parts * frames {
        return Err(dim(
            "context_vector",
            format!(
                "window {:?}, alpha {:?}, embeddings {:?}",
                tape.value(window).shape(),
                tape.value(alpha).shape(),
                tape.value(embeddings).shape()
            ),
        ));
    }
    let weights = tape.mul(alpha, window)?;
    let flat = tape.reshape(weights, 1, parts * frames)?;
    tape.matmul(flat, embeddings)
}

/// `e_t = tanh(W c_t + b)`.
pub fn embed_motion(tape: &mut Tape, vars: &[Var], p: &AttentionParams, context: Var) -> Result<Var> {
    let x = tape.matmul_nt(context, vars[p.motion_w.0])?;
    let x = tape.add(x, vars[p.motion_b.0])?;
    Ok(tape.tanh(x))
}

/// `r_t = tanh(W h̄_t + b)`.
pub fn embed_language(tape: &mut Tape, vars: &[Var], p: &AttentionParams, top_hidden: Var) -> Result<Var> {
    let x = tape.matmul_nt(top_hidden, vars[p.lang_w.0])?;
    let x = tape.add(x, vars[p.lang_b.0])?;
    Ok(tape.tanh(x))
}

/// `c̄_t = β̂ e_t + (1 - β̂) r_t`.
pub fn adaptive_context(tape: &mut Tape, motion: Var, language: Var, beta: Var) -> Result<Var> {
    if tape.value(motion).shape() != tape.value(language).shape() {
        return Err(dim(
            "adaptive_context",
            format!("{:?} vs {:?}", tape.value(motion).shape(), tape.value(language).shape()),
        ));
    }
    let a = tape.mul(motion, beta)?;
    let rest = tape.affine(beta, -1.0, 1.0);
    let b = tape.mul(language, rest)?;
    tape.add(a, b)
}

/// Attention values of one decoding step, copied off the tape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionState {
    pub gamma: Vec<f64>,
    pub m: f64,
    pub sigma: f64,
    pub window: Vec<f64>,
    /// `alpha[k][i]`: frame-major.
    pub alpha: Vec<Vec<f64>>,
    pub beta: f64,
}

/// Tape handles of one step's attention.
#[derive(Clone, Copy, Debug)]
pub struct StepAttention {
    pub gamma: Var,
    pub window: WindowVars,
    pub alpha: Var,
    pub beta: Var,
    pub context: Var,
}

impl StepAttention {
    pub fn snapshot(&self, tape: &Tape) -> AttentionState {
        let alpha = tape.value(self.alpha);
        let [parts, frames] = alpha.shape();
        AttentionState {
            gamma: tape.value(self.gamma).data().to_vec(),
            m: tape.scalar(self.window.m),
            sigma: tape.scalar(self.window.sigma),
            window: tape.value(self.window.window).data().to_vec(),
            alpha: (0..frames).map(|k| (0..parts).map(|i| alpha.get(i, k)).collect()).collect(),
            beta: tape.scalar(self.beta),
        }
    }
}

/// Per-caption attention dump: one entry per generated token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionDump {
    pub id: String,
    pub tokens: Vec<String>,
    pub beta: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
    #[serde(rename = "Gamma")]
    pub window: Vec<Vec<f64>>,
    pub m: Vec<f64>,
    pub sigma: Vec<f64>,
    /// `t x T x parts`
    pub alpha: Vec<Vec<Vec<f64>>>,
}

impl AttentionDump {
    pub fn from_steps(id: &str, tokens: Vec<String>, steps: &[AttentionState]) -> Result<Self> {
        if tokens.len() != steps.len() {
            return Err(Error::Input(format!("{} tokens for {} attention steps", tokens.len(), steps.len())));
        }
        Ok(Self {
            id: id.into(),
            tokens,
            beta: steps.iter().map(|s| s.beta).collect(),
            gamma: steps.iter().map(|s| s.gamma.clone()).collect(),
            window: steps.iter().map(|s| s.window.clone()).collect(),
            m: steps.iter().map(|s| s.m).collect(),
            sigma: steps.iter().map(|s| s.sigma).collect(),
            alpha: steps.iter().map(|s| s.alpha.clone()).collect(),
        })
    }

    pub fn frames(&self) -> usize {
        self.gamma.first().map_or(0, Vec::len)
    }

    /// Checks that every per-token array has consistent extents.
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        let frames = self.frames();
        let lens = [
            self.beta.len(),
            self.gamma.len(),
            self.window.len(),
            self.m.len(),
            self.sigma.len(),
            self.alpha.len(),
        ];
        if lens.iter().any(|l| *l != n) {
            return Err(Error::Input(format!(
                "dump {}: per-token arrays of lengths {lens:?} for {n} tokens",
                self.id
            )));
        }
        for t in 0..n {
            if self.gamma[t].len() != frames || self.window[t].len() != frames || self.alpha[t].len() != frames {
                return Err(Error::Input(format!("dump {}: token {t} has inconsistent frame count", self.id)));
            }
        }
        Ok(())
    }

    pub fn step(&self, t: usize) -> AttentionState {
        AttentionState {
            gamma: self.gamma[t].clone(),
            m: self.m[t],
            sigma: self.sigma[t],
            window: self.window[t].clone(),
            alpha: self.alpha[t].clone(),
            beta: self.beta[t],
        }
    }
}
