//! Gate and spatial-attention targets derived from a word dictionary.
//!
//! Words are matched on stems. Dictionary categories map stems to a set of
//! body parts (or to none for connection/subject words); a separate lexicon
//! lists further motion words. Neither needs a part-of-speech tagger.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{BodyPart, NUM_PARTS};

fn is_consonant(w: &[u8], i: usize) -> bool {
    match w[i] {
        b'a' | b'e' | b'i' | b'o' | b'u' => false,
        b'y' => i == 0 || !is_consonant(w, i - 1),
        _ => true,
    }
}

/// Number of vowel→consonant transitions (`[C](VC)^m[V]`).
fn measure(w: &[u8]) -> usize {
    let mut m = 0;
    let mut prev_vowel = false;
    for i in 0..w.len() {
        let c = is_consonant(w, i);
        if c && prev_vowel {
            m += 1;
        }
        prev_vowel = !c;
    }
    m
}

fn has_vowel(w: &[u8]) -> bool {
    (0..w.len()).any(|i| !is_consonant(w, i))
}

/// Consonant-vowel-consonant ending whose last letter is not w, x or y.
fn cvc(w: &[u8]) -> bool {
    let n = w.len();
    n >= 3 && is_consonant(w, n - 3) && !is_consonant(w, n - 2) && is_consonant(w, n - 1) && !matches!(w[n - 1], b'w' | b'x' | b'y')
}

/// Repairs a residual after removing "ing"/"ed": "wav" → "wave",
/// "runn" → "run", "rotat" → "rotate".
fn restore(mut r: String) -> String {
    let b = r.as_bytes();
    let n = b.len();
    if r.ends_with("at") || r.ends_with("bl") || r.ends_with("iz") {
        r.push('e');
    } else if n >= 2 && b[n - 1] == b[n - 2] && is_consonant(b, n - 1) && !matches!(b[n - 1], b'l' | b's' | b'z') {
        r.pop();
    } else if measure(b) == 1 && cvc(b) {
        r.push('e');
    }
    r
}

fn strip_suffix(w: &str) -> String {
    if w.ends_with("eed") {
        return w.to_string();
    }
    for suffix in ["ing", "ed"] {
        if let Some(r) = w.strip_suffix(suffix) {
            if r.len() >= 3 && has_vowel(r.as_bytes()) {
                return restore(r.to_string());
            }
        }
    }
    if let Some(r) = w.strip_suffix("es") {
        let sibilant = ["s", "x", "z", "ch", "sh"].iter().any(|s| r.ends_with(s));
        if r.len() >= 3 && sibilant {
            return r.to_string();
        }
    }
    if let Some(r) = w.strip_suffix('s') {
        if r.len() >= 3 && !w.ends_with("ss") {
            return r.to_string();
        }
    }
    w.to_string()
}

/// Deterministic suffix-stripping stemmer for lowercase ASCII words.
///
/// Removes one of "ing", "ed", "es" (after s/x/z/ch/sh only) or "s",
/// keeping at least three letters, repairs the residual, then drops a
/// silent final "e" from long stems. Non-ASCII words are returned unchanged.
pub fn stem(word: &str) -> String {
    if !word.is_ascii() {
        return word.to_string();
    }
    let mut s = strip_suffix(word);
    if let Some(r) = s.strip_suffix('e') {
        let b = r.as_bytes();
        let m = measure(b);
        if r.len() >= 3 && (m > 1 || (m == 1 && !cvc(b))) {
            s.pop();
        }
    }
    s
}

/// One dictionary category as stored on disk.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Category {
    pub words: Vec<String>,
    /// Empty for categories that are never spatially supervised.
    #[serde(default)]
    pub parts: Vec<BodyPart>,
}

/// Category name → words and target parts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GuidanceDictionary {
    pub categories: BTreeMap<String, Category>,
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|w| w.to_string()).collect()
}

impl GuidanceDictionary {
    /// The built-in dictionary shared by both motion-capture caption corpora.
    pub fn standard() -> Self {
        use BodyPart::*;
        let mut categories = BTreeMap::new();
        let mut add = |name: &str, list: &[&str], parts: Vec<BodyPart>| {
            categories.insert(name.to_string(), Category { words: words(list), parts });
        };
        add(
            "Trajectory",
            &["circle", "circuit", "clockwise", "anticlockwise", "forward", "backward"],
            vec![Root],
        );
        add(
            "Arms",
            &[
                "open",
                "waves",
                "wipe",
                "throw",
                "punch",
                "pick",
                "boxing",
                "clean",
                "swipe",
                "catch",
                "handstand",
                "draw",
            ],
            vec![LeftArm, RightArm],
        );
        add(
            "Legs",
            &["kick", "stomp", "lift", "kneel", "squat", "squad", "stand", "stumble", "rotate"],
            vec![LeftLeg, RightLeg],
        );
        add("Torso", &["bend", "bow"], vec![Torso]);
        add("Connection", &["is", "the", "of", "his", "her", "its", "on", "their"], vec![]);
        add("Subject", &["a", "person", "human", "man"], vec![]);
        Self { categories }
    }
}

/// Extra motion words and function words, beyond the dictionary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lexicon {
    pub motion_words: Vec<String>,
    pub function_words: Vec<String>,
}

impl Lexicon {
    pub fn standard() -> Self {
        Self {
            motion_words: words(&[
                "walk", "run", "jog", "jump", "hop", "turn", "spin", "step", "kick", "wave", "throw", "squat", "bow", "move", "raise",
                "lower", "swing", "sit", "crouch", "hand", "arm", "leg", "foot", "left", "right", "both", "around", "up", "down", "slowly",
                "quickly", "twice", "again", "high", "low", "body", "upper", "deep", "straight",
            ]),
            function_words: words(&[
                "a", "an", "the", "is", "are", "of", "his", "her", "its", "their", "on", "with", "and", "then", "to", "in", "someone",
                "person", "human", "man", "who", "while", "after", "before", "at", "by", "as",
            ]),
        }
    }
}

/// How a word is treated by the guidance targets.
#[derive(Clone, Debug, PartialEq)]
pub enum WordClass {
    /// Dictionary word with target parts; always a motion word.
    PartMapped { category: String, parts: [bool; NUM_PARTS] },
    /// Dictionary word of a part-less category (connection, subject).
    Function { category: String },
    /// Lexicon motion word without a part target.
    Motion,
    /// Anything else, treated as a non-motion word.
    Other,
}

impl WordClass {
    pub fn is_motion(&self) -> bool {
        matches!(self, WordClass::PartMapped { .. } | WordClass::Motion)
    }
}

#[derive(Clone, Debug)]
enum Entry {
    Parts(String, [bool; NUM_PARTS]),
    Function(String),
}

/// Per-caption targets. Every vector has one slot per caption token plus one
/// for the closing EOS.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisionTargets {
    pub beta: Vec<f64>,
    /// Part mask for spatially supervised steps.
    pub alpha: Vec<Option<[f64; NUM_PARTS]>>,
    /// Number of supervised steps.
    pub n_y: usize,
}

impl SupervisionTargets {
    pub fn supervised_mask(&self) -> Vec<bool> {
        self.alpha.iter().map(Option::is_some).collect()
    }
}

/// Stem-indexed dictionary and lexicon.
#[derive(Clone, Debug)]
pub struct Supervisor {
    entries: BTreeMap<String, Entry>,
    motion: BTreeSet<String>,
}

impl Supervisor {
    pub fn new(dictionary: &GuidanceDictionary, lexicon: &Lexicon) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (name, cat) in &dictionary.categories {
            let mut mask = [false; NUM_PARTS];
            for p in &cat.parts {
                mask[p.index()] = true;
            }
            for w in &cat.words {
                let s = stem(&w.to_lowercase());
                let entry = if cat.parts.is_empty() {
                    Entry::Function(name.clone())
                } else {
                    Entry::Parts(name.clone(), mask)
                };
                if let Some(prev) = entries.insert(s.clone(), entry) {
                    let other = match prev {
                        Entry::Parts(c, _) | Entry::Function(c) => c,
                    };
                    if &other != name {
                        return Err(Error::Config(format!("stem {s:?} appears in categories {other} and {name}")));
                    }
                }
            }
        }
        let motion = lexicon.motion_words.iter().map(|w| stem(&w.to_lowercase())).collect();
        Ok(Self { entries, motion })
    }

    pub fn standard() -> Self {
        Self::new(&GuidanceDictionary::standard(), &Lexicon::standard()).expect("built-in dictionary is consistent")
    }

    pub fn classify(&self, word: &str) -> WordClass {
        let s = stem(word);
        match self.entries.get(&s) {
            Some(Entry::Parts(category, parts)) => WordClass::PartMapped {
                category: category.clone(),
                parts: *parts,
            },
            Some(Entry::Function(category)) => WordClass::Function {
                category: category.clone(),
            },
            None if self.motion.contains(&s) => WordClass::Motion,
            None => WordClass::Other,
        }
    }

    /// `β_t` per token, then `1` for EOS.
    pub fn beta_targets<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<f64> {
        tokens
            .iter()
            .map(|t| if self.classify(t.as_ref()).is_motion() { 1.0 } else { 0.0 })
            .chain(core::iter::once(1.0))
            .collect()
    }

    pub fn targets<S: AsRef<str>>(&self, tokens: &[S]) -> SupervisionTargets {
        let mut alpha: Vec<Option<[f64; NUM_PARTS]>> = tokens
            .iter()
            .map(|t| match self.classify(t.as_ref()) {
                WordClass::PartMapped { parts, .. } => Some(parts.map(|on| if on { 1.0 } else { 0.0 })),
                _ => None,
            })
            .collect();
        alpha.push(None);
        SupervisionTargets {
            beta: self.beta_targets(tokens),
            n_y: alpha.iter().filter(|a| a.is_some()).count(),
            alpha,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems_of_listed_examples() {
        assert_eq!(stem("waves"), "wave");
        assert_eq!(stem("boxing"), "box");
        assert_eq!(stem("running"), "run");
        assert_eq!(stem("punches"), "punch");
        assert_eq!(stem("his"), "his");
        assert_eq!(stem("is"), "is");
        assert_eq!(stem("stumbling"), stem("stumbles"));
        assert_eq!(stem("rotating"), stem("rotate"));
        assert_eq!(stem("circles"), stem("circle"));
        assert_eq!(stem("walks"), "walk");
        assert_eq!(stem("pass"), "pass");
    }

    #[test]
    fn walking_forward_targets() {
        let s = Supervisor::standard();
        assert_eq!(s.beta_targets(&["a", "person", "walks", "forward"]), [0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(s.beta_targets(&["the", "of", "his"]), [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn part_targets() {
        let s = Supervisor::standard();
        let t = s.targets(&["kick"]);
        assert_eq!(t.alpha[0], Some([0.0, 0.0, 0.0, 1.0, 1.0, 0.0]));
        let t = s.targets(&["clockwise"]);
        assert_eq!(t.alpha[0], Some([0.0, 0.0, 0.0, 0.0, 0.0, 1.0]));
        let t = s.targets(&["a", "person", "sits"]);
        assert_eq!(t.n_y, 0);
        assert!(t.supervised_mask().iter().all(|m| !m));
    }

    #[test]
    fn supervised_words_are_motion_words() {
        let s = Supervisor::standard();
        let caption = ["a", "man", "kicks", "then", "bows", "and", "turns", "clockwise"];
        let t = s.targets(&caption);
        assert_eq!(t.beta.len(), caption.len() + 1);
        assert_eq!(t.n_y, 3);
        for (b, a) in t.beta.iter().zip(&t.alpha) {
            if a.is_some() {
                assert_eq!(*b, 1.0);
            }
        }
    }

    #[test]
    fn duplicate_stem_across_categories_is_rejected() {
        let mut d = GuidanceDictionary::standard();
        d.categories.get_mut("Torso").unwrap().words.push("kicking".into());
        assert!(matches!(Supervisor::new(&d, &Lexicon::standard()), Err(Error::Config(_))));
    }
}
