//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test -p motioncap --test acceptance -- 1 4 9` runs a subset.
//! A failing criterion prints `FAIL`; set `ACCEPTANCE_STRICT=1` to also
//! make the process exit non-zero.
//! The shared sweep behind criteria 5–8 trains nine models on the
//! synthetic corpus and dominates the runtime.

#[path = "../../core/tests/common/oracles.rs"]
#[allow(dead_code)]
mod oracles;

use std::cell::OnceCell;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use motioncap::config;
use motioncap::exec::Parallel;
use motioncap::io;
use motioncap::pipeline::{self, AnalysisOptions, Splits};
use motioncap_core::interp::{score_against_gold, GroundTruthScores, InterpRecord};
use motioncap_core::losses::LossWeights;
use motioncap_core::metrics::{bleu, cider, cider_per_sample, rouge_l};
use motioncap_core::model::{toy_gradient_check, ModelConfig};
use motioncap_core::supervision::Supervisor;
use motioncap_core::synth::{self, Annotation, Split, SynthConfig};
use motioncap_core::trainer::{self, parse_grid, Sequential, SweepCell, TrainConfig};
use motioncap_core::vocab::tokenize;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

type Outcome = Result<String, String>;
type Check = fn(&Shared) -> Outcome;

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn gradient_fidelity(_: &Shared) -> Outcome {
    let t = Instant::now();
    let report = toy_gradient_check(8, 0, 1e-4, 1e-4).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let worst = report
        .params
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .ok_or("no parameters checked")?;
    let detail = format!(
        "{} groups, worst {} rel err {:.2e}, {:.1}s",
        report.params.len(),
        worst.name,
        worst.max_rel_err,
        elapsed.as_secs_f64()
    );
    if report.passed && worst.max_rel_err < 1e-4 && elapsed < Duration::from_secs(30) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn attention_contracts(_: &Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..1000 {
        let x = oracles::random_instance(&mut rng);
        oracles::check_contracts(&x).map_err(|e| format!("instance {i}: {e}"))?;
        oracles::check_one_hot_selection(&mut rng).map_err(|e| format!("one-hot {i}: {e}"))?;
    }
    Ok("1000 random instances, 1000 one-hot selections".into())
}

fn gaussian_refit(_: &Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..100 {
        let gamma = oracles::random_distribution(&mut rng);
        oracles::check_refit(&gamma, 0.5).map_err(|e| format!("vector {i}: {e}"))?;
    }
    Ok("100 random distributions".into())
}

fn overfit(_: &Shared) -> Outcome {
    let corpus = synth::generate(&SynthConfig {
        n_samples: 20,
        seed: 5,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let samples: Vec<_> = corpus.split(Split::Train).take(5).map(|s| s.training_sample().unwrap()).collect();
    // Language objective only: the oracle checks capacity and optimisation.
    let cfg = TrainConfig {
        lambda_spat: 0.0,
        lambda_adapt: 0.0,
        learning_rate: 0.01,
        batch_size: 5,
        epochs: 200,
        patience: 200,
        model: ModelConfig {
            h1: 16,
            h2: 8,
            d_emb: 16,
            h_dec: 32,
            attn_dim: 16,
            ctx_dim: 16,
            logit_scale: 10.0,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    };
    let t = Instant::now();
    let out = trainer::train(&cfg, &samples, &[], &Supervisor::standard(), &Sequential, &mut |_| {}).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let mut exact = 0;
    let mut misses = Vec::new();
    for s in &samples {
        let got = out
            .model
            .words(&out.model.greedy(&s.parts).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        if got == s.captions[0] {
            exact += 1;
        } else {
            misses.push(format!("{}: {:?}", s.id, got.join(" ")));
        }
    }
    let mut detail = format!("{exact}/5 exact after 200 epochs, {:.1}s", elapsed.as_secs_f64());
    if !misses.is_empty() {
        detail = format!("{detail}; {}", misses.join("; "));
    }
    if exact == 5 && elapsed < Duration::from_secs(120) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Sweep results shared by criteria 5–8.
struct SweepResult {
    cells: Vec<SweepCell>,
    gold: Vec<Annotation>,
    records: Vec<Vec<InterpRecord>>,
    elapsed: Duration,
}

impl SweepResult {
    fn pooled(&self, w: LossWeights) -> Result<GroundTruthScores, String> {
        let records: Vec<InterpRecord> = self
            .cells
            .iter()
            .zip(&self.records)
            .filter(|(c, _)| c.weights == w)
            .flat_map(|(_, r)| r.iter().cloned())
            .collect();
        if records.is_empty() {
            return Err(format!("no successful cells for λ=({}, {})", w.spat, w.adapt));
        }
        score_against_gold(&records, &self.gold, &Supervisor::standard(), 0.15).map_err(|e| e.to_string())
    }

    fn per_seed(&self, w: LossWeights) -> Vec<GroundTruthScores> {
        self.cells
            .iter()
            .zip(&self.records)
            .filter(|(c, _)| c.weights == w)
            .filter_map(|(_, r)| score_against_gold(r, &self.gold, &Supervisor::standard(), 0.15).ok())
            .collect()
    }

    fn bleu4(&self, w: LossWeights) -> Result<f64, String> {
        let v: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.weights == w)
            .map(|c| c.result.as_ref().map(|r| r.report.bleu4).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        Ok(v.iter().sum::<f64>() / v.len() as f64)
    }
}

struct Shared {
    sweep: OnceCell<Result<SweepResult, String>>,
}

fn weights(spat: f64, adapt: f64) -> LossWeights {
    LossWeights::new(spat, adapt).unwrap()
}

fn run_sweep() -> Result<SweepResult, String> {
    let dir = manifest_dir().join("configs");
    let synth_cfg: SynthConfig = config::load(Some(&dir.join("synth.toml")), &[]).map_err(|e| e.to_string())?;
    let base: TrainConfig = config::load(Some(&dir.join("synthetic.toml")), &[]).map_err(|e| e.to_string())?;
    let sup = Supervisor::standard();
    let corpus = synth::generate(&synth_cfg).map_err(|e| e.to_string())?;
    let splits = Splits::from_corpus(&corpus).map_err(|e| e.to_string())?;
    let gold: Vec<Annotation> = corpus.split(Split::Test).map(|s| synth::annotate(s, &sup)).collect();
    let grid = parse_grid("0,0;0,3;2,3").map_err(|e| e.to_string())?;
    let exec = Parallel::from_env().map_err(|e| e.to_string())?;
    let t = Instant::now();
    let cells =
        trainer::sweep(&base, &grid, &[0, 1, 2], (&splits.train, &splits.val, &splits.test), &sup, &exec).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let mut records = Vec::with_capacity(cells.len());
    for c in &cells {
        let recs = match &c.result {
            Ok(r) => {
                let dumps = pipeline::dumps(&r.model, &splits.test, &r.decoded).map_err(|e| e.to_string())?;
                dumps
                    .iter()
                    .map(InterpRecord::from_dump)
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| e.to_string())?
            }
            Err(_) => Vec::new(),
        };
        eprintln!(
            "  sweep cell λ=({}, {}) seed {}: {}",
            c.weights.spat,
            c.weights.adapt,
            c.seed,
            c.result
                .as_ref()
                .map_or_else(|e| format!("failed: {e}"), |r| format!("BLEU@4 {:.2}", r.report.bleu4))
        );
        records.push(recs);
    }
    Ok(SweepResult {
        cells,
        gold,
        records,
        elapsed,
    })
}

fn sweep(shared: &Shared) -> Result<&SweepResult, String> {
    shared.sweep.get_or_init(run_sweep).as_ref().map_err(Clone::clone)
}

fn seeds_of(scores: &[GroundTruthScores], f: impl Fn(&GroundTruthScores) -> f64) -> String {
    scores.iter().map(|s| format!("{:.3}", f(s))).collect::<Vec<_>>().join("/")
}

fn gate_separation(shared: &Shared) -> Outcome {
    let s = sweep(shared)?;
    let guided = s.pooled(weights(0.0, 3.0))?;
    let plain = s.pooled(weights(0.0, 0.0))?;
    let minutes = s.elapsed.as_secs_f64() / 60.0;
    let detail = format!(
        "gap λ=(0,3) {:.3} [seeds {}], λ=(0,0) {:.3} [seeds {}]; sweep {:.1} min for 9 runs ({:.1} min per λ)",
        guided.gate_gap,
        seeds_of(&s.per_seed(weights(0.0, 3.0)), |x| x.gate_gap),
        plain.gate_gap,
        seeds_of(&s.per_seed(weights(0.0, 0.0)), |x| x.gate_gap),
        minutes,
        minutes / 3.0
    );
    if guided.gate_gap >= 0.5 && plain.gate_gap < 0.25 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn part_identification(shared: &Shared) -> Outcome {
    let s = sweep(shared)?;
    let guided = s.pooled(weights(2.0, 3.0))?;
    let plain = s.pooled(weights(0.0, 0.0))?;
    let detail = format!(
        "modal-part accuracy λ=(2,3) {:.3} over {} [seeds {}], λ=(0,0) {:.3} over {}",
        guided.part_accuracy,
        guided.part_occurrences,
        seeds_of(&s.per_seed(weights(2.0, 3.0)), |x| x.part_accuracy),
        plain.part_accuracy,
        plain.part_occurrences
    );
    if guided.part_accuracy >= 0.9 && plain.part_accuracy < guided.part_accuracy {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn localization(shared: &Shared) -> Outcome {
    let s = sweep(shared)?;
    let guided = s.pooled(weights(2.0, 3.0))?;
    let detail = format!(
        "{:.3} of {} motion-word occurrences within 15% of T [seeds {}]",
        guided.localization_accuracy,
        guided.localization_occurrences,
        seeds_of(&s.per_seed(weights(2.0, 3.0)), |x| x.localization_accuracy)
    );
    if guided.localization_accuracy >= 0.8 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ablation(shared: &Shared) -> Outcome {
    let s = sweep(shared)?;
    let (b00, b03, b23) = (
        s.bleu4(weights(0.0, 0.0))?,
        s.bleu4(weights(0.0, 3.0))?,
        s.bleu4(weights(2.0, 3.0))?,
    );
    let detail = format!("mean BLEU@4 (0,0) {b00:.2}, (0,3) {b03:.2}, (2,3) {b23:.2}");
    if b23 >= b00 - 1.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

#[derive(Deserialize)]
struct CiderCase {
    name: String,
    hypotheses: Vec<String>,
    references: Vec<Vec<String>>,
    cider: f64,
    per_sample: Vec<f64>,
}

fn metric_correctness(_: &Shared) -> Outcome {
    let toks = |s: &str| tokenize(s);
    let b1 = bleu(&[toks("the cat")], &[vec![toks("the cat sat")]], 1).map_err(|e| e.to_string())?;
    if (b1 - 60.65).abs() > 0.01 {
        return Err(format!("BLEU@1 'the cat' vs 'the cat sat' = {b1}"));
    }
    let same = [toks("a person waves the left hand")];
    let same_refs = [vec![toks("a person waves the left hand")]];
    for n in 1..=4 {
        let b = bleu(&same, &same_refs, n).map_err(|e| e.to_string())?;
        if b != 100.0 {
            return Err(format!("identical BLEU@{n} = {b}"));
        }
    }
    let r = rouge_l(&same, &same_refs).map_err(|e| e.to_string())?;
    if r != 100.0 {
        return Err(format!("identical ROUGE-L = {r}"));
    }
    let fixture = manifest_dir().join("../core/tests/fixtures/cider_reference.json");
    let cases: Vec<CiderCase> = serde_json::from_slice(&std::fs::read(&fixture).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for c in &cases {
        let hyps: Vec<_> = c.hypotheses.iter().map(|h| tokenize(h)).collect();
        let refs: Vec<Vec<_>> = c.references.iter().map(|r| r.iter().map(|x| tokenize(x)).collect()).collect();
        let total = cider(&hyps, &refs).map_err(|e| e.to_string())?;
        worst = worst.max((total - c.cider).abs());
        for (got, want) in cider_per_sample(&hyps, &refs).map_err(|e| e.to_string())?.iter().zip(&c.per_sample) {
            worst = worst.max((100.0 * got - want).abs());
        }
        if worst > 0.1 {
            return Err(format!("CIDEr case {}: {total} vs {}", c.name, c.cider));
        }
    }
    Ok(format!(
        "BLEU@1 {b1:.4}; identical → 100; {} CIDEr cases, max deviation {worst:.2e}",
        cases.len()
    ))
}

/// Every file under `dir`, relative path → bytes.
fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "run.json") {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn one_run(out: &Path) -> Result<(), String> {
    let sup = Supervisor::standard();
    let corpus = synth::generate(&SynthConfig {
        n_samples: 20,
        seed: 8,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let splits = Splits::from_corpus(&corpus).map_err(|e| e.to_string())?;
    let gold: Vec<Annotation> = corpus.split(Split::Test).map(|s| synth::annotate(s, &sup)).collect();
    let cfg = TrainConfig {
        learning_rate: 0.01,
        batch_size: 4,
        epochs: 3,
        seed: 13,
        model: ModelConfig {
            h1: 8,
            h2: 6,
            d_emb: 8,
            h_dec: 12,
            attn_dim: 8,
            ctx_dim: 8,
            logit_scale: 5.0,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    };
    let exec = Parallel::from_env().map_err(|e| e.to_string())?;
    let run = out.join("train");
    let outcome = pipeline::train(&cfg, &splits, &sup, &exec, &run, &mut |_| {}).map_err(|e| e.to_string())?;
    let model = io::load_checkpoint(&run.join("checkpoint")).map_err(|e| e.to_string())?;
    if model.store.num_scalars() != outcome.model.store.num_scalars() {
        return Err("reloaded checkpoint differs in size".into());
    }
    let decoded = out.join("decode");
    pipeline::evaluate(&model, &splits.test, cfg.decode, &exec, &decoded).map_err(|e| e.to_string())?;
    let dumps = io::read_dumps(&decoded).map_err(|e| e.to_string())?;
    let options = AnalysisOptions {
        words: vec!["kick".into(), "wave".into(), "turn".into()],
        ..AnalysisOptions::default()
    };
    pipeline::analyze(&dumps, &options, Some(&gold), &sup, &out.join("analysis")).map_err(|e| e.to_string())?;
    Ok(())
}

fn determinism(_: &Shared) -> Outcome {
    let (a, b) = (
        tempfile::tempdir().map_err(|e| e.to_string())?,
        tempfile::tempdir().map_err(|e| e.to_string())?,
    );
    one_run(a.path())?;
    one_run(b.path())?;
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    if ta.len() != tb.len() {
        return Err(format!("{} vs {} files", ta.len(), tb.len()));
    }
    for ((pa, ba), (pb, bb)) in ta.iter().zip(&tb) {
        if pa != pb || ba != bb {
            return Err(format!("{} differs", pa.display()));
        }
    }
    let csvs = ta.iter().filter(|(p, _)| p.extension().is_some_and(|e| e == "csv")).count();
    Ok(format!("{} files identical ({csvs} CSVs, checkpoint, decodes, dumps)", ta.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 10] = [
        ("gradient fidelity", gradient_fidelity),
        ("attention contracts", attention_contracts),
        ("gaussian refit oracle", gaussian_refit),
        ("overfit oracle", overfit),
        ("gate separation", gate_separation),
        ("body-part identification", part_identification),
        ("action localization", localization),
        ("ablation direction", ablation),
        ("metric correctness", metric_correctness),
        ("determinism", determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let shared = Shared { sweep: OnceCell::new() };
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome = check(&shared);
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {detail} ({secs:.1}s)");
            }
        }
    }
    println!("acceptance: {failed} of the selected criteria failed");
    // Criterion outcomes are reported, not enforced, unless strict mode is on.
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed > 0 && strict {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
