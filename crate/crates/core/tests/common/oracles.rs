//! Independent oracles for attention properties. Shared by the core
//! integration tests and the acceptance harness.

use motioncap_core::attention::{
    adaptive_context, adaptive_gate, context_vector, embed_language, embed_motion, gaussian_refit, gaussian_window, prepare_keys,
    spatial_attention, temporal_attention, AttentionDims, AttentionParams, SpatialAxis,
};
use motioncap_core::numerics::{ParamStore, Tape, Tensor};
use motioncap_core::skeleton::NUM_PARTS;
use rand::Rng;

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

/// Values of one attention step on random weights and inputs.
pub struct Instance {
    pub frames: usize,
    pub gamma: Vec<f64>,
    /// `alpha[i * frames + k]`, part-major.
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub m: f64,
    pub sigma: f64,
    pub window: Vec<f64>,
    pub adaptive: Vec<f64>,
}

pub fn random_instance(rng: &mut impl Rng) -> Instance {
    let frames = rng.random_range(2..=30);
    let dims = AttentionDims {
        h_enc: rng.random_range(2..=12),
        h_dec: rng.random_range(2..=10),
        d_emb: rng.random_range(2..=8),
        attn: rng.random_range(2..=10),
        ctx: rng.random_range(2..=8),
    };
    let mut store = ParamStore::new();
    let p = AttentionParams::register(&mut store, &dims, 0.5, SpatialAxis::PerFrame, false, rng).unwrap();
    let scale = rng.random_range(0.5..3.0);
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v = *v * scale + rng.random_range(-0.1..0.1);
        }
    }
    let mut tape = Tape::new();
    let vars = store.bind(&mut tape);
    let emb = tape.leaf(uniform(rng, NUM_PARTS * frames, dims.h_enc, 1.0));
    let h = tape.leaf(uniform(rng, 1, dims.h_dec, 1.0));
    let h_top = tape.leaf(uniform(rng, 1, dims.h_dec, 1.0));
    let prev = tape.leaf(uniform(rng, 1, dims.d_emb, 2.0));

    let keys = prepare_keys(&mut tape, &vars, &p, emb, frames).unwrap();
    let gamma = temporal_attention(&mut tape, &vars, &p, &keys, h).unwrap();
    let alpha = spatial_attention(&mut tape, &vars, &p, &keys, h).unwrap();
    let w = gaussian_window(&mut tape, gamma, keys.frame_index, p.sigma_min, false).unwrap();
    let ctx = context_vector(&mut tape, w.window, alpha, emb).unwrap();
    let e = embed_motion(&mut tape, &vars, &p, ctx).unwrap();
    let r = embed_language(&mut tape, &vars, &p, h_top).unwrap();
    let beta = adaptive_gate(&mut tape, &vars, &p, h, prev).unwrap();
    let adaptive = adaptive_context(&mut tape, e, r, beta).unwrap();
    Instance {
        frames,
        gamma: tape.value(gamma).data().to_vec(),
        alpha: tape.value(alpha).data().to_vec(),
        beta: tape.scalar(beta),
        m: tape.scalar(w.m),
        sigma: tape.scalar(w.sigma),
        window: tape.value(w.window).data().to_vec(),
        adaptive: tape.value(adaptive).data().to_vec(),
    }
}

/// γ and per-frame α are distributions, β̂ ∈ (0,1), Γ ∈ (0,1], c̄ ∈ (−1,1).
pub fn check_contracts(x: &Instance) -> Result<(), String> {
    let total: f64 = x.gamma.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(format!("gamma sums to {total:e}"));
    }
    for k in 0..x.frames {
        let s: f64 = (0..NUM_PARTS).map(|i| x.alpha[i * x.frames + k]).sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(format!("alpha at frame {k} sums to {s:e}"));
        }
    }
    if !(x.beta > 0.0 && x.beta < 1.0) {
        return Err(format!("beta {} outside (0,1)", x.beta));
    }
    if let Some(g) = x.window.iter().find(|g| !(**g > 0.0 && **g <= 1.0)) {
        return Err(format!("window value {g:e} outside (0,1] (m {}, sigma {})", x.m, x.sigma));
    }
    if let Some(c) = x.adaptive.iter().find(|c| c.is_nan() || c.abs() >= 1.0) {
        return Err(format!("adaptive context entry {c} outside (-1,1)"));
    }
    Ok(())
}

/// One-hot Γ and α pick out exactly the embedding of one (part, frame).
pub fn check_one_hot_selection(rng: &mut impl Rng) -> Result<(), String> {
    let frames = rng.random_range(1..=20);
    let width = rng.random_range(1..=16);
    let (part, frame) = (rng.random_range(0..NUM_PARTS), rng.random_range(0..frames));
    let emb = uniform(rng, NUM_PARTS * frames, width, 5.0);
    let mut window = vec![0.0; frames];
    window[frame] = 1.0;
    // Other frames of α are arbitrary; only the selected frame is one-hot.
    let mut alpha = uniform(rng, NUM_PARTS, frames, 1.0);
    for i in 0..NUM_PARTS {
        alpha.set(i, frame, if i == part { 1.0 } else { 0.0 });
    }
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::row(&window));
    let a = tape.leaf(alpha);
    let e = tape.leaf(emb.clone());
    let c = context_vector(&mut tape, w, a, e).map_err(|e| e.to_string())?;
    let got = tape.value(c).data();
    let want = emb.row_slice(part * frames + frame);
    if got != want {
        return Err(format!("context {got:?} != P[{part},{frame}] {want:?}"));
    }
    Ok(())
}

/// A random probability vector; some are sharply peaked.
pub fn random_distribution(rng: &mut impl Rng) -> Vec<f64> {
    let n = rng.random_range(1..=100);
    let sharp = rng.random_bool(0.3);
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            if sharp {
                u.powi(12)
            } else {
                u
            }
        })
        .collect();
    let s: f64 = v.iter().sum();
    if s == 0.0 {
        v[0] = 1.0;
        return v;
    }
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Moments by summing each frame's contribution as `k·γ_k` and `k²·γ_k`,
/// then `Var = E[k²] − m²`; the window from its closed form.
pub fn check_refit(gamma: &[f64], sigma_min: f64) -> Result<(), String> {
    let mut m = 0.0;
    let mut second = 0.0;
    for (k, g) in gamma.iter().enumerate() {
        let k = k as f64;
        m += k * g;
        second += k * k * g;
    }
    let var = (second - m * m).max(0.0);
    let sigma = var.sqrt().max(sigma_min);

    let plain = gaussian_refit(gamma, sigma_min).map_err(|e| e.to_string())?;
    let mut tape = Tape::new();
    let g = tape.leaf(Tensor::row(gamma));
    let idx: Vec<f64> = (0..gamma.len()).map(|k| k as f64).collect();
    let idx = tape.leaf(Tensor::row(&idx));
    let taped = gaussian_window(&mut tape, g, idx, sigma_min, false).map_err(|e| e.to_string())?;
    let candidates = [
        ("refit", plain.m, plain.sigma, plain.window.clone()),
        (
            "window",
            tape.scalar(taped.m),
            tape.scalar(taped.sigma),
            tape.value(taped.window).data().to_vec(),
        ),
    ];
    for (name, cm, cs, cw) in candidates {
        if (cm - m).abs() > 1e-10 || (cs - sigma).abs() > 1e-10 {
            return Err(format!("{name}: (m, sigma) = ({cm}, {cs}), oracle ({m}, {sigma})"));
        }
        for (k, got) in cw.iter().enumerate() {
            let d = k as f64 - m;
            let want = (-d * d / (2.0 * sigma * sigma)).exp();
            if (got - want).abs() > 1e-12 {
                return Err(format!("{name}: window[{k}] = {got}, closed form {want}"));
            }
        }
    }
    Ok(())
}
