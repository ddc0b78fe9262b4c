use std::path::Path;

use motioncap::io;
use motioncap::pipeline::{self, Splits};
use motioncap_core::model::{CaptionModel, ModelConfig};
use motioncap_core::supervision::{GuidanceDictionary, Lexicon};
use motioncap_core::synth::{self, Split, SynthConfig};
use motioncap_core::trainer::build_vocabulary;

fn small_corpus() -> synth::SyntheticCorpus {
    synth::generate(&SynthConfig {
        n_samples: 20,
        seed: 4,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn bits(model: &CaptionModel) -> Vec<(String, Vec<u64>)> {
    model
        .store
        .iter()
        .map(|(_, name, t)| (name.to_string(), t.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let corpus = small_corpus();
    let splits = Splits::from_corpus(&corpus).unwrap();
    let vocab = build_vocabulary(&splits.train);
    let config = ModelConfig {
        h1: 6,
        h2: 4,
        d_emb: 5,
        h_dec: 7,
        attn_dim: 6,
        ctx_dim: 5,
        ..ModelConfig::default()
    };
    let model = CaptionModel::new(config, vocab, splits.train[0].parts.widths(), 9).unwrap();

    let dir = tempfile::tempdir().unwrap();
    io::save_checkpoint(dir.path(), &model).unwrap();
    let loaded = io::load_checkpoint(dir.path()).unwrap();
    assert_eq!(loaded.config, model.config);
    assert_eq!(loaded.vocab, model.vocab);
    assert_eq!(bits(&loaded), bits(&model));

    let a = model.greedy(&splits.test[0].parts).unwrap();
    let b = loaded.greedy(&splits.test[0].parts).unwrap();
    assert_eq!(a.tokens, b.tokens);

    // A second save produces identical bytes.
    let again = tempfile::tempdir().unwrap();
    io::save_checkpoint(again.path(), &loaded).unwrap();
    for f in [io::CHECKPOINT_MANIFEST, io::CHECKPOINT_PARAMS] {
        assert_eq!(
            std::fs::read(dir.path().join(f)).unwrap(),
            std::fs::read(again.path().join(f)).unwrap()
        );
    }
}

#[test]
fn truncated_params_are_rejected() {
    let corpus = small_corpus();
    let splits = Splits::from_corpus(&corpus).unwrap();
    let config = ModelConfig {
        h1: 4,
        h2: 4,
        d_emb: 4,
        h_dec: 4,
        attn_dim: 4,
        ctx_dim: 4,
        ..ModelConfig::default()
    };
    let model = CaptionModel::new(config, build_vocabulary(&splits.train), splits.train[0].parts.widths(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    io::save_checkpoint(dir.path(), &model).unwrap();
    let p = dir.path().join(io::CHECKPOINT_PARAMS);
    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
    assert!(io::load_checkpoint(dir.path()).is_err());
}

#[test]
fn motion_file_round_trip() {
    let corpus = small_corpus();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    io::write_motion(&path, &corpus.samples[0].motion).unwrap();
    assert_eq!(io::read_motion(&path).unwrap(), corpus.samples[0].motion);
}

#[test]
fn written_dataset_reloads_with_same_samples() {
    let config = SynthConfig {
        n_samples: 20,
        seed: 4,
        ..SynthConfig::default()
    };
    let sup = pipeline::load_supervisor(None, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let corpus = pipeline::synthesize(&config, &sup, dir.path()).unwrap();
    let data = io::Dataset::load(dir.path()).unwrap();
    let direct = Splits::from_corpus(&corpus).unwrap();
    for split in [Split::Train, Split::Val, Split::Test] {
        let loaded = data.samples(split).unwrap();
        let expected = direct.get(split);
        assert_eq!(loaded.len(), expected.len());
        for (a, b) in loaded.iter().zip(expected) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.captions, b.captions);
            assert_eq!(a.parts, b.parts);
        }
    }
    let gold = data.annotations().unwrap().expect("synthetic data carries annotations");
    assert_eq!(gold.len(), 20);
}

#[test]
fn shipped_dictionary_and_lexicon_match_builtins() {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let dict: GuidanceDictionary = io::read_json(&data.join("dictionary.json")).unwrap();
    let lex: Lexicon = io::read_json(&data.join("lexicon.json")).unwrap();
    assert_eq!(dict, GuidanceDictionary::standard());
    assert_eq!(lex, Lexicon::standard());
}
