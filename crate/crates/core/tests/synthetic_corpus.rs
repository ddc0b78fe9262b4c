use motioncap_core::skeleton::BodyPart;
use motioncap_core::supervision::{Supervisor, WordClass};
use motioncap_core::synth::{annotate, displacement_energy, generate, SynthConfig};

fn corpus() -> motioncap_core::synth::SyntheticCorpus {
    generate(&SynthConfig {
        n_samples: 400,
        seed: 11,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn acting_parts_dominate_displacement_energy() {
    let mut worst = f64::INFINITY;
    for s in &corpus().samples {
        for a in &s.actions {
            let acting = displacement_energy(&s.motion, &a.acting_parts, a.onset, a.offset).unwrap();
            for part in BodyPart::ALL {
                if a.acting_parts.contains(&part) {
                    continue;
                }
                let idle = displacement_energy(&s.motion, &[part], a.onset, a.offset).unwrap();
                let ratio = acting / idle;
                worst = worst.min(ratio);
                assert!(ratio >= 10.0, "{} {:?} vs {:?}: ratio {ratio}", s.id, a.kind, part);
            }
        }
    }
    println!("worst energy ratio {worst:.1}");
}

#[test]
fn annotation_agrees_with_dictionary_parts() {
    let sup = Supervisor::standard();
    let mut checked = 0;
    for s in &corpus().samples {
        let ann = annotate(s, &sup);
        assert_eq!(ann.tokens.len(), s.tokens().len());
        for (tok, word) in ann.tokens.iter().zip(s.tokens()) {
            assert_eq!(tok.word, word);
            if let (WordClass::PartMapped { parts, .. }, Some(i)) = (sup.classify(&tok.word), tok.action) {
                for p in &ann.actions[i].parts {
                    assert!(parts[p.index()], "{}: {} does not cover {:?}", s.id, tok.word, p);
                }
                checked += 1;
            }
        }
        // every action names its dictionary word exactly once, except jumps
        for (i, a) in s.actions.iter().enumerate() {
            let mapped = ann
                .tokens
                .iter()
                .filter(|t| t.action == Some(i) && matches!(sup.classify(&t.word), WordClass::PartMapped { .. }))
                .count();
            let expected = usize::from(a.kind != motioncap_core::synth::ActionKind::Jump);
            assert_eq!(mapped, expected, "{}: {}", s.id, s.caption);
        }
    }
    assert!(checked > 200);
}
