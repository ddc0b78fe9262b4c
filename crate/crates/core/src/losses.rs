//! Language cross-entropy, gate BCE, spatial BCE and their weighted sum.
//! Every log is guarded by clamping its argument into `[ε, 1-ε]`.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::skeleton::NUM_PARTS;
use crate::vocab::PAD;

pub const LOG_EPS: f64 = 1e-12;

/// `ln(clamp(x, ε, 1-ε))`, elementwise.
fn guarded_ln(tape: &mut Tape, x: Var) -> Result<Var> {
    let c = tape.clamp(x, LOG_EPS, 1.0 - LOG_EPS);
    tape.ln(c)
}

fn zero(tape: &mut Tape) -> Var {
    tape.leaf(Tensor::scalar(0.0))
}

fn total(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut acc = match terms.first() {
        Some(v) => *v,
        None => return Ok(zero(tape)),
    };
    for t in &terms[1..] {
        acc = tape.add(acc, *t)?;
    }
    Ok(acc)
}

/// `-Σ_t ln p_t(target_t)` over non-PAD targets. `probs[t]` is `1 x K`.
pub fn language_loss(tape: &mut Tape, probs: &[Var], targets: &[usize]) -> Result<Var> {
    if probs.len() != targets.len() {
        return Err(Error::Length(format!(
            "{} distributions for {} targets",
            probs.len(),
            targets.len()
        )));
    }
    let mut terms = Vec::with_capacity(targets.len());
    for (p, &y) in probs.iter().zip(targets) {
        if y == PAD {
            continue;
        }
        if y >= tape.value(*p).len() {
            return Err(Error::Vocabulary(format!(
                "target id {y} outside distribution of {}",
                tape.value(*p).len()
            )));
        }
        let py = tape.pick(*p, y)?;
        terms.push(guarded_ln(tape, py)?);
    }
    let s = total(tape, &terms)?;
    Ok(tape.neg(s))
}

/// `-Σ_t [β_t ln β̂_t + (1-β_t) ln(1-β̂_t)]`; each `gates[t]` is `1 x 1`.
pub fn adaptive_loss(tape: &mut Tape, gates: &[Var], targets: &[f64]) -> Result<Var> {
    if gates.len() != targets.len() {
        return Err(Error::Length(format!("{} gate values for {} targets", gates.len(), targets.len())));
    }
    let mut terms = Vec::with_capacity(gates.len());
    for (g, &y) in gates.iter().zip(targets) {
        let on = guarded_ln(tape, *g)?;
        let rest = tape.affine(*g, -1.0, 1.0);
        let off = guarded_ln(tape, rest)?;
        let a = tape.affine(on, y, 0.0);
        let b = tape.affine(off, 1.0 - y, 0.0);
        terms.push(tape.add(a, b)?);
    }
    let s = total(tape, &terms)?;
    Ok(tape.neg(s))
}

/// `-(1/N_y) Σ_{supervised t} Σ_i Σ_k BCE(α_ti, α̂_tik)`.
///
/// `alphas[t]` is `parts x T`; `targets[t]` is `Some(part mask)` for
/// supervised steps. The target is the same for every frame.
pub fn spatial_loss(tape: &mut Tape, alphas: &[Var], targets: &[Option<[f64; NUM_PARTS]>]) -> Result<Var> {
    if alphas.len() != targets.len() {
        return Err(Error::Length(format!(
            "{} attention maps for {} targets",
            alphas.len(),
            targets.len()
        )));
    }
    let supervised = targets.iter().filter(|t| t.is_some()).count();
    if supervised == 0 {
        return Err(Error::Contract("spatial loss needs at least one supervised word".into()));
    }
    let mut terms = Vec::with_capacity(supervised);
    for (a, target) in alphas.iter().zip(targets) {
        let Some(y) = target else { continue };
        let rows = tape.value(*a).rows();
        if rows != NUM_PARTS {
            return Err(Error::Length(format!("spatial map with {rows} parts")));
        }
        let on_w = tape.leaf(Tensor::new(NUM_PARTS, 1, y.to_vec())?);
        let off_w = tape.leaf(Tensor::new(NUM_PARTS, 1, y.iter().map(|v| 1.0 - v).collect())?);
        let on = guarded_ln(tape, *a)?;
        let rest = tape.affine(*a, -1.0, 1.0);
        let off = guarded_ln(tape, rest)?;
        let on = tape.mul(on, on_w)?;
        let off = tape.mul(off, off_w)?;
        let both = tape.add(on, off)?;
        terms.push(tape.sum(both));
    }
    let s = total(tape, &terms)?;
    Ok(tape.affine(s, -1.0 / supervised as f64, 0.0))
}

/// Guidance weights `(λ_spat, λ_adapt)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub spat: f64,
    pub adapt: f64,
}

impl LossWeights {
    pub fn new(spat: f64, adapt: f64) -> Result<Self> {
        let w = Self { spat, adapt };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spat >= 0.0 && self.adapt >= 0.0) || !self.spat.is_finite() || !self.adapt.is_finite() {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative, got ({}, {})",
                self.spat, self.adapt
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub lang: f64,
    pub spat: f64,
    pub adapt: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(lang: f64, spat: f64, adapt: f64, w: LossWeights) -> Result<Self> {
        w.validate()?;
        Ok(Self {
            lang,
            spat,
            adapt,
            total: lang + w.spat * spat + w.adapt * adapt,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.lang.is_finite() && self.spat.is_finite() && self.adapt.is_finite() && self.total.is_finite()
    }

    /// Componentwise sum, used to accumulate batch statistics.
    pub fn accumulate(&mut self, other: &Self) {
        self.lang += other.lang;
        self.spat += other.spat;
        self.adapt += other.adapt;
        self.total += other.total;
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            lang: self.lang * factor,
            spat: self.spat * factor,
            adapt: self.adapt * factor,
            total: self.total * factor,
        }
    }
}

/// `lang + λ_spat·spat + λ_adapt·adapt` on the tape. `spat` is `None` when
/// the caption has no supervised word.
pub fn global_loss(tape: &mut Tape, lang: Var, spat: Option<Var>, adapt: Var, w: LossWeights) -> Result<Var> {
    w.validate()?;
    let mut out = lang;
    if let Some(s) = spat {
        if w.spat != 0.0 {
            let s = tape.affine(s, w.spat, 0.0);
            out = tape.add(out, s)?;
        }
    }
    if w.adapt != 0.0 {
        let a = tape.affine(adapt, w.adapt, 0.0);
        out = tape.add(out, a)?;
    }
    Ok(out)
}
