use std::time::Instant;

use motioncap_core::interp::{beta_density, localize, silverman_bandwidth, InterpRecord, TokenRecord};
use motioncap_core::model::ModelConfig;
use motioncap_core::supervision::Supervisor;
use motioncap_core::synth::{self, Split, SynthConfig};
use motioncap_core::trainer::{self, Sample, Sequential, TrainConfig};
use proptest::prelude::*;

fn train_samples(n: usize, seed: u64) -> Vec<Sample> {
    let corpus = synth::generate(&SynthConfig {
        n_samples: 20,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    corpus.split(Split::Train).take(n).map(|s| s.training_sample().unwrap()).collect()
}

fn small(logit_scale: f64, epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.01,
        batch_size: 4,
        epochs,
        patience: epochs,
        model: ModelConfig {
            h1: 16,
            h2: 8,
            d_emb: 12,
            h_dec: 24,
            attn_dim: 12,
            ctx_dim: 16,
            logit_scale,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn overfits_three_samples() {
    let samples = train_samples(3, 2);
    let t = Instant::now();
    let out = trainer::train(&small(5.0, 300), &samples, &[], &Supervisor::standard(), &Sequential, &mut |_| {}).unwrap();
    for s in &samples {
        let got = out.model.words(&out.model.greedy(&s.parts).unwrap()).unwrap();
        assert_eq!(got, s.captions[0], "{} after {:?}", s.id, t.elapsed());
    }
}

#[test]
fn sharp_output_layer_memorises_a_caption() {
    // With a unit logit scale the softmax over tanh-bounded logits caps
    // every probability well below 1; a larger scale lifts that cap.
    let samples = train_samples(1, 3);
    let mut log = Vec::new();
    trainer::train(&small(10.0, 150), &samples, &[], &Supervisor::standard(), &Sequential, &mut |e| {
        log.push(e.lang)
    })
    .unwrap();
    let (first, last) = (log[0], *log.last().unwrap());
    assert!(last < 0.05 * first, "language loss {first} -> {last}");
}

fn record(betas: &[f64]) -> InterpRecord {
    let tokens = betas
        .iter()
        .map(|b| TokenRecord {
            word: "kicks".into(),
            stem: "kick".into(),
            beta: *b,
            gamma: vec![0.5, 0.5],
            window: vec![1.0, 1.0],
            alpha: vec![vec![1.0 / 6.0; 6]; 2],
            m: 0.5,
            sigma: 0.5,
        })
        .collect();
    InterpRecord {
        id: "r".into(),
        frames: 2,
        tokens,
    }
}

#[test]
fn density_of_two_clusters_is_bimodal() {
    let betas: Vec<f64> = (0..40)
        .map(|i| {
            if i % 2 == 0 {
                0.15 + 0.002 * i as f64
            } else {
                0.8 + 0.002 * i as f64
            }
        })
        .collect();
    let d = &beta_density(&[record(&betas)], &["kick"], 201).unwrap()[0];
    let peaks: Vec<f64> = (1..d.density.len() - 1)
        .filter(|&i| d.density[i] > d.density[i - 1] && d.density[i] >= d.density[i + 1])
        .map(|i| d.grid[i])
        .collect();
    assert_eq!(peaks.len(), 2, "{peaks:?}");
    assert!(peaks[0] < 0.3 && peaks[1] > 0.75, "{peaks:?}");
    // most of the unit mass stays inside [0, 1]
    let step = d.grid[1] - d.grid[0];
    let area: f64 = d.density.iter().sum::<f64>() * step;
    assert!((0.85..=1.01).contains(&area), "{area}");
}

#[test]
fn silverman_matches_hand_value() {
    // sd = sqrt(2.5), IQR/1.34 = 2/1.34, n = 5
    let v = [1.0, 2.0, 3.0, 4.0, 5.0];
    let want = 0.9 * (2.5f64.sqrt()).min(2.0 / 1.34) * 5f64.powf(-0.2);
    assert!((silverman_bandwidth(&v) - want).abs() < 1e-12);
}

proptest! {
    #[test]
    fn localized_span_is_ordered_and_inside(m in -5.0f64..60.0, sigma in 0.0f64..20.0, frames in 1usize..50, kappa in 0.0f64..3.0) {
        let (s, e) = localize(m, sigma, frames, kappa);
        prop_assert!(s <= e && e < frames);
        if (0.0..=(frames - 1) as f64).contains(&m) {
            let c = m.round() as usize;
            prop_assert!(s <= c && c <= e);
        }
    }
}
