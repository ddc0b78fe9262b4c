//! Procedural motions with templated captions and exact ground truth.
//!
//! Every sample holds one or two actions in disjoint frame windows. Joints
//! of acting parts follow a smooth parametric trajectory inside the window;
//! all other joints carry only Gaussian noise around a rest pose. Non-root
//! joints are placed relative to the (noisy) root, so root actions such as
//! walking never leak into the root-relative limb streams.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::skeleton::{BodyPart, MotionSequence, SkeletonLayout};
use crate::supervision::{stem, Supervisor};
use crate::trainer::Sample;
use crate::vocab::tokenize;

pub const FRAME_RATE: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Wave,
    Kick,
    Walk,
    Turn,
    Bow,
    Squat,
    Throw,
    Jump,
}

impl ActionKind {
    pub const ALL: [ActionKind; 8] = [
        ActionKind::Wave,
        ActionKind::Kick,
        ActionKind::Walk,
        ActionKind::Turn,
        ActionKind::Bow,
        ActionKind::Squat,
        ActionKind::Throw,
        ActionKind::Jump,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Wave => "wave",
            ActionKind::Kick => "kick",
            ActionKind::Walk => "walk",
            ActionKind::Turn => "turn",
            ActionKind::Bow => "bow",
            ActionKind::Squat => "squat",
            ActionKind::Throw => "throw",
            ActionKind::Jump => "jump",
        }
    }
}

/// Side or direction qualifier of an action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Left,
    Right,
    Both,
    Forward,
    Backward,
    Clockwise,
    Anticlockwise,
    None,
}

impl Variant {
    fn word(self) -> &'static str {
        match self {
            Variant::Left => "left",
            Variant::Right => "right",
            Variant::Both => "both",
            Variant::Forward => "forward",
            Variant::Backward => "backward",
            Variant::Clockwise => "clockwise",
            Variant::Anticlockwise => "anticlockwise",
            Variant::None => "",
        }
    }

    fn sign(self) -> f64 {
        match self {
            Variant::Backward | Variant::Anticlockwise | Variant::Right => -1.0,
            _ => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub kind: ActionKind,
    pub variant: Variant,
    /// First and last frame of the action (inclusive).
    pub onset: usize,
    pub offset: usize,
    /// Multiplier on the base displacement.
    pub amplitude: f64,
    /// Oscillations per window (waving only).
    pub frequency: f64,
    pub acting_parts: Vec<BodyPart>,
    /// Index of the caption template.
    pub template: usize,
}

impl ActionSpec {
    pub fn center(&self) -> f64 {
        (self.onset + self.offset) as f64 / 2.0
    }

    /// Position inside the window, `0` at onset and `1` at offset.
    fn phase(&self, k: usize) -> f64 {
        let u = (k as f64 - self.onset as f64) / (self.offset - self.onset) as f64;
        u.clamp(0.0, 1.0)
    }

    fn active(&self, k: usize) -> bool {
        (self.onset..=self.offset).contains(&k)
    }

    /// The verb phrase for this action.
    pub fn phrase(&self) -> String {
        let v = self.variant.word();
        let side = |noun: &str| match self.variant {
            Variant::Both => format!("both {noun}s"),
            _ => format!("the {v} {noun}"),
        };
        let t = self.template % 3;
        match self.kind {
            ActionKind::Wave => [
                format!("waves {}", side("hand")),
                format!("waves with {}", side("arm")),
                format!("raises {} and waves", side("hand")),
            ][t]
                .clone(),
            ActionKind::Throw => [
                format!("throws with {}", side("hand")),
                format!("throws with {}", side("arm")),
                format!("raises {} and throws", side("hand")),
            ][t]
                .clone(),
            ActionKind::Kick => [
                format!("kicks with {}", side("leg")),
                format!("kicks with {}", side("foot")),
                format!("kicks {} up", side("leg")),
            ][t]
                .clone(),
            ActionKind::Squat => ["squats down", "squats low", "squats"][t].to_string(),
            ActionKind::Bow => ["bows", "bows down", "bows the upper body"][t].to_string(),
            ActionKind::Walk => [format!("walks {v}"), format!("moves {v}"), format!("steps {v}")][t].clone(),
            ActionKind::Turn => [format!("turns {v}"), format!("turns around {v}"), format!("moves around {v}")][t].clone(),
            ActionKind::Jump => ["jumps", "jumps up", "jumps up high"][t].to_string(),
        }
    }

    pub fn validate(&self, frames: usize) -> Result<()> {
        if !(self.onset < self.offset && self.offset < frames) {
            return Err(Error::Input(format!(
                "{} window [{}, {}] does not fit a motion of {frames} frames",
                self.kind.name(),
                self.onset,
                self.offset
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub min_frames: usize,
    pub max_frames: usize,
    pub noise_sigma: f64,
    /// Probability of a second action.
    pub two_action_rate: f64,
    pub min_window: usize,
    pub max_window: usize,
    pub min_gap: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 500,
            seed: 0,
            min_frames: 40,
            max_frames: 80,
            noise_sigma: 0.01,
            two_action_rate: 0.5,
            min_window: 10,
            max_window: 16,
            min_gap: 5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 10 {
            return Err(Error::Config(format!("need at least 10 samples, got {}", self.n_samples)));
        }
        if self.min_window < 2 || self.min_window > self.max_window || self.min_frames > self.max_frames {
            return Err(Error::Config("inconsistent window or length range".into()));
        }
        let needed = 2 * self.min_window + self.min_gap + 2 * MARGIN + 2;
        if self.min_frames < needed {
            return Err(Error::Config(format!(
                "motions of {} frames cannot hold two windows of {} frames; need at least {needed}",
                self.min_frames, self.min_window
            )));
        }
        if !(self.noise_sigma >= 0.0) || !(0.0..=1.0).contains(&self.two_action_rate) {
            return Err(Error::Config("noise_sigma must be >= 0 and two_action_rate within [0, 1]".into()));
        }
        Ok(())
    }
}

const MARGIN: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub id: String,
    pub motion: MotionSequence,
    pub caption: String,
    pub actions: Vec<ActionSpec>,
    pub noise_seed: u64,
}

impl SyntheticSample {
    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.caption)
    }

    /// Part features and the single reference caption.
    pub fn training_sample(&self) -> Result<Sample> {
        Ok(Sample {
            id: self.id.clone(),
            parts: self.motion.prepare()?,
            captions: vec![self.tokens()],
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub samples: Vec<SyntheticSample>,
    pub splits: Vec<Split>,
}

impl SyntheticCorpus {
    pub fn split(&self, which: Split) -> impl Iterator<Item = &SyntheticSample> {
        self.samples
            .iter()
            .zip(&self.splits)
            .filter(move |(_, s)| **s == which)
            .map(|(x, _)| x)
    }
}

/// Train/val/test sizes for `n` samples: 80/10/10 with train rounded down.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 8 / 10;
    let val = (n - train) / 2;
    (train, val, n - train - val)
}

fn rest_pose(name: &str) -> [f64; 3] {
    match name {
        "pelvis" => [0.0, 1.0, 0.0],
        "spine" => [0.0, 1.2, 0.0],
        "chest" => [0.0, 1.4, 0.0],
        "neck" => [0.0, 1.55, 0.0],
        "head" => [0.0, 1.7, 0.0],
        "l_elbow" => [0.25, 1.15, 0.0],
        "l_wrist" => [0.3, 0.9, 0.0],
        "r_elbow" => [-0.25, 1.15, 0.0],
        "r_wrist" => [-0.3, 0.9, 0.0],
        "l_knee" => [0.1, 0.55, 0.0],
        "l_ankle" => [0.1, 0.1, 0.0],
        "r_knee" => [-0.1, 0.55, 0.0],
        "r_ankle" => [-0.1, 0.1, 0.0],
        _ => [0.0, 0.0, 0.0],
    }
}

fn acting_parts(kind: ActionKind, variant: Variant) -> Vec<BodyPart> {
    use BodyPart::*;
    let arms = || match variant {
        Variant::Left => vec![LeftArm],
        Variant::Right => vec![RightArm],
        _ => vec![LeftArm, RightArm],
    };
    match kind {
        ActionKind::Wave | ActionKind::Throw => arms(),
        ActionKind::Kick => match variant {
            Variant::Left => vec![LeftLeg],
            _ => vec![RightLeg],
        },
        ActionKind::Squat => vec![LeftLeg, RightLeg],
        ActionKind::Bow => vec![Torso],
        ActionKind::Walk | ActionKind::Turn | ActionKind::Jump => vec![Root],
    }
}

fn pick_variant<R: Rng + ?Sized>(kind: ActionKind, rng: &mut R) -> Variant {
    let options: &[Variant] = match kind {
        ActionKind::Wave | ActionKind::Throw => &[Variant::Left, Variant::Right, Variant::Both],
        ActionKind::Kick => &[Variant::Left, Variant::Right],
        ActionKind::Walk => &[Variant::Forward, Variant::Backward],
        ActionKind::Turn => &[Variant::Clockwise, Variant::Anticlockwise],
        ActionKind::Squat => &[Variant::Both],
        ActionKind::Bow | ActionKind::Jump => &[Variant::None],
    };
    options[rng.random_range(0..options.len())]
}

/// Displacement of `joint` (relative to the root) caused by `a` at frame `k`.
fn limb_offset(a: &ActionSpec, joint: &str, k: usize) -> [f64; 3] {
    if !a.active(k) {
        return [0.0; 3];
    }
    let u = a.phase(k);
    let env = math::sin(PI * u);
    let amp = a.amplitude;
    let side_ok = |prefix: char| match a.variant {
        Variant::Left => prefix == 'l',
        Variant::Right => prefix == 'r',
        _ => true,
    };
    let first = joint.chars().next().unwrap_or(' ');
    let lateral = if first == 'l' { 1.0 } else { -1.0 };
    match (a.kind, joint) {
        (ActionKind::Wave, "l_wrist" | "r_wrist") if side_ok(first) => [
            lateral * amp * 0.35 * math::sin(2.0 * PI * a.frequency * u) * env,
            amp * 0.8 * env,
            0.0,
        ],
        (ActionKind::Wave, "l_elbow" | "r_elbow") if side_ok(first) => [
            lateral * amp * 0.15 * math::sin(2.0 * PI * a.frequency * u) * env,
            amp * 0.6 * env,
            0.0,
        ],
        (ActionKind::Throw, "l_wrist" | "r_wrist") if side_ok(first) => {
            [0.0, amp * 0.5 * env, amp * 0.9 * math::sin(2.0 * PI * u - PI / 2.0) * env]
        }
        (ActionKind::Throw, "l_elbow" | "r_elbow") if side_ok(first) => {
            [0.0, amp * 0.3 * env, amp * 0.5 * math::sin(2.0 * PI * u - PI / 2.0) * env]
        }
        (ActionKind::Kick, "l_ankle" | "r_ankle") if side_ok(first) => [0.0, amp * 0.6 * env, amp * 1.0 * env],
        (ActionKind::Kick, "l_knee" | "r_knee") if side_ok(first) => [0.0, amp * 0.4 * env, amp * 0.5 * env],
        (ActionKind::Squat, "l_knee" | "r_knee") => [0.0, amp * 0.5 * env, amp * 0.8 * env],
        (ActionKind::Squat, "l_ankle" | "r_ankle") => [0.0, amp * 1.0 * env, amp * 0.25 * env],
        (ActionKind::Bow, _) => {
            let height = match joint {
                "spine" => 0.2,
                "chest" => 0.4,
                "neck" => 0.55,
                "head" => 0.7,
                _ => return [0.0; 3],
            };
            [0.0, -amp * 0.8 * height * env, amp * 2.0 * height * env]
        }
        _ => [0.0; 3],
    }
}

/// Root translation caused by `a` at frame `k`. Every root action is an
/// excursion that ends where it started, so the global trajectory carries no
/// trace of the action outside its window.
fn root_offset(a: &ActionSpec, k: usize) -> [f64; 3] {
    if !a.active(k) {
        return [0.0; 3];
    }
    let u = a.phase(k);
    match a.kind {
        ActionKind::Walk => [0.0, 0.0, a.variant.sign() * a.amplitude * math::sin(PI * u)],
        ActionKind::Turn => {
            // a closed circle, so the root ends where it started
            let radius = a.amplitude * 0.5;
            let theta = 2.0 * PI * u;
            [a.variant.sign() * radius * (1.0 - math::cos(theta)), 0.0, radius * math::sin(theta)]
        }
        ActionKind::Jump => [0.0, a.amplitude * math::sin(PI * u), 0.0],
        _ => [0.0; 3],
    }
}

/// Renders actions into a motion with the default 13-joint layout.
pub fn render(actions: &[ActionSpec], frames: usize, noise_sigma: f64, noise_seed: u64) -> Result<MotionSequence> {
    for a in actions {
        a.validate(frames)?;
    }
    let layout = SkeletonLayout::default_layout();
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::Config(format!("noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let root = layout.root();
    let root_rest = rest_pose(&layout.joint_names()[root]);
    let mut data = Vec::with_capacity(frames * layout.num_joints() * 3);
    for k in 0..frames {
        let mut root_pos = root_rest;
        for a in actions {
            let d = root_offset(a, k);
            for c in 0..3 {
                root_pos[c] += d[c];
            }
        }
        for v in &mut root_pos {
            *v += noise.sample(&mut rng);
        }
        for (j, name) in layout.joint_names().iter().enumerate() {
            if j == root {
                data.extend_from_slice(&root_pos);
                continue;
            }
            let rest = rest_pose(name);
            let mut p = [0.0; 3];
            for c in 0..3 {
                p[c] = root_pos[c] + rest[c] - root_rest[c];
            }
            for a in actions {
                let d = limb_offset(a, name, k);
                for c in 0..3 {
                    p[c] += d[c];
                }
            }
            for v in &mut p {
                *v += noise.sample(&mut rng);
            }
            data.extend_from_slice(&p);
        }
    }
    MotionSequence::new(layout, FRAME_RATE, 3, data)
}

fn sample_actions<R: Rng + ?Sized>(config: &SynthConfig, frames: usize, rng: &mut R) -> Vec<ActionSpec> {
    let count = if rng.random_bool(config.two_action_rate) { 2 } else { 1 };
    let mut kinds = Vec::with_capacity(count);
    while kinds.len() < count {
        let k = ActionKind::ALL[rng.random_range(0..ActionKind::ALL.len())];
        if !kinds.contains(&k) {
            kinds.push(k);
        }
    }
    let gap = if count == 2 {
        rng.random_range(config.min_gap..=config.min_gap + 5)
    } else {
        0
    };
    // shrink windows of short two-action motions so both fit
    let room = (frames - 2 * MARGIN - count - gap) / count;
    let max_len = config.max_window.min(room).max(config.min_window);
    let lens: Vec<usize> = (0..count).map(|_| rng.random_range(config.min_window..=max_len)).collect();
    let span = lens.iter().sum::<usize>() + gap;
    // windows hold `len + 1` frames (inclusive bounds)
    let latest = frames - MARGIN - span - count;
    let mut onset = rng.random_range(MARGIN..=latest.max(MARGIN));
    let mut out = Vec::with_capacity(count);
    for (kind, len) in kinds.into_iter().zip(lens) {
        let variant = pick_variant(kind, rng);
        out.push(ActionSpec {
            kind,
            variant,
            onset,
            offset: onset + len,
            amplitude: rng.random_range(0.9..1.1),
            frequency: rng.random_range(2.0..3.0),
            acting_parts: acting_parts(kind, variant),
            template: rng.random_range(0..3),
        });
        onset += len + 1 + gap;
    }
    out
}

pub fn caption_for(actions: &[ActionSpec]) -> String {
    let phrases: Vec<String> = actions.iter().map(ActionSpec::phrase).collect();
    format!("a person {}", phrases.join(" then "))
}

/// Generates a reproducible corpus: identical config ⇒ identical samples.
pub fn generate(config: &SynthConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut samples = Vec::with_capacity(config.n_samples);
    for i in 0..config.n_samples {
        let frames = rng.random_range(config.min_frames..=config.max_frames);
        let actions = sample_actions(config, frames, &mut rng);
        let noise_seed = rng.next_u64();
        let motion = render(&actions, frames, config.noise_sigma, noise_seed)?;
        samples.push(SyntheticSample {
            id: format!("s{i:05}"),
            caption: caption_for(&actions),
            motion,
            actions,
            noise_seed,
        });
    }
    let (train, val, _) = split_sizes(config.n_samples);
    let splits = (0..config.n_samples)
        .map(|i| {
            if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            }
        })
        .collect();
    Ok(SyntheticCorpus { samples, splits })
}

/// Ground truth of one caption token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenGold {
    pub word: String,
    pub motion: bool,
    /// Index of the action whose phrase contains the token.
    pub action: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionGold {
    pub name: String,
    pub variant: Variant,
    pub onset: usize,
    pub offset: usize,
    pub center: f64,
    pub parts: Vec<BodyPart>,
    /// Stems of the motion words in the action's phrase.
    pub motion_stems: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: String,
    pub frames: usize,
    pub tokens: Vec<TokenGold>,
    pub actions: Vec<ActionGold>,
}

impl Annotation {
    /// The single action whose phrase uses `stem` as a motion word, if any.
    pub fn action_for_stem(&self, s: &str) -> Option<&ActionGold> {
        let mut hits = self.actions.iter().filter(|a| a.motion_stems.iter().any(|m| m == s));
        match (hits.next(), hits.next()) {
            (Some(a), None) => Some(a),
            _ => None,
        }
    }
}

pub fn annotate(sample: &SyntheticSample, supervisor: &Supervisor) -> Annotation {
    let mut tokens = Vec::new();
    let mut actions = Vec::new();
    for w in tokenize("a person") {
        tokens.push(TokenGold {
            motion: supervisor.classify(&w).is_motion(),
            word: w,
            action: None,
        });
    }
    for (i, a) in sample.actions.iter().enumerate() {
        if i > 0 {
            tokens.push(TokenGold {
                word: "then".into(),
                motion: supervisor.classify("then").is_motion(),
                action: None,
            });
        }
        let mut motion_stems = Vec::new();
        for w in tokenize(&a.phrase()) {
            let motion = supervisor.classify(&w).is_motion();
            if motion {
                motion_stems.push(stem(&w));
            }
            tokens.push(TokenGold {
                word: w,
                motion,
                action: Some(i),
            });
        }
        actions.push(ActionGold {
            name: a.kind.name().into(),
            variant: a.variant,
            onset: a.onset,
            offset: a.offset,
            center: a.center(),
            parts: a.acting_parts.clone(),
            motion_stems,
        });
    }
    Annotation {
        id: sample.id.clone(),
        frames: sample.motion.frames(),
        tokens,
        actions,
    }
}

/// Mean squared per-frame displacement of the joints of `parts` over
/// frames `onset+1..=offset`, in root-relative coordinates (the root joint
/// itself stays global).
pub fn displacement_energy(motion: &MotionSequence, parts: &[BodyPart], onset: usize, offset: usize) -> Result<f64> {
    let rel = motion.to_root_relative()?;
    let layout = rel.layout();
    let joints: Vec<usize> = parts.iter().flat_map(|p| layout.joints_of(*p).iter().copied()).collect();
    if joints.is_empty() || offset <= onset || offset >= rel.frames() {
        return Err(Error::Input("empty energy window".into()));
    }
    let mut total = 0.0;
    for k in onset + 1..=offset {
        for &j in &joints {
            let a = rel.position(k, j);
            let b = rel.position(k - 1, j);
            total += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
    }
    Ok(total / ((offset - onset) * joints.len()) as f64)
}
