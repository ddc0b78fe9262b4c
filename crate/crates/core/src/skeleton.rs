//! Joint layout, six-part partitioning and per-part motion streams.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const NUM_PARTS: usize = 6;

/// Body part groups. The discriminant order is the part axis order used
/// everywhere (attention maps, spatial targets, histograms).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BodyPart {
    LeftArm,
    RightArm,
    Torso,
    LeftLeg,
    RightLeg,
    Root,
}

impl BodyPart {
    pub const ALL: [BodyPart; NUM_PARTS] = [
        BodyPart::LeftArm,
        BodyPart::RightArm,
        BodyPart::Torso,
        BodyPart::LeftLeg,
        BodyPart::RightLeg,
        BodyPart::Root,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            BodyPart::LeftArm => "LeftArm",
            BodyPart::RightArm => "RightArm",
            BodyPart::Torso => "Torso",
            BodyPart::LeftLeg => "LeftLeg",
            BodyPart::RightLeg => "RightLeg",
            BodyPart::Root => "Root",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name().eq_ignore_ascii_case(s))
    }
}

/// Serialized form of a [`SkeletonLayout`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutSpec {
    pub joint_names: Vec<String>,
    pub parts: Vec<BodyPart>,
    pub root: usize,
}

/// Joint names, joint → part assignment and the root joint.
///
/// Every joint belongs to exactly one part and the `Root` part holds exactly
/// the root joint. Limb or torso parts may be empty (minimal test layouts).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LayoutSpec", into = "LayoutSpec")]
pub struct SkeletonLayout {
    joint_names: Vec<String>,
    part_map: Vec<BodyPart>,
    root: usize,
    /// Joint indices per part, ordered by joint name.
    groups: [Vec<usize>; NUM_PARTS],
}

impl TryFrom<LayoutSpec> for SkeletonLayout {
    type Error = Error;

    fn try_from(spec: LayoutSpec) -> Result<Self> {
        Self::new(spec.joint_names, spec.parts, spec.root)
    }
}

impl From<SkeletonLayout> for LayoutSpec {
    fn from(l: SkeletonLayout) -> Self {
        LayoutSpec {
            joint_names: l.joint_names,
            parts: l.part_map,
            root: l.root,
        }
    }
}

impl SkeletonLayout {
    pub fn new(joint_names: Vec<String>, part_map: Vec<BodyPart>, root: usize) -> Result<Self> {
        if joint_names.len() != part_map.len() {
            return Err(Error::Layout(format!(
                "{} joint names but {} part assignments",
                joint_names.len(),
                part_map.len()
            )));
        }
        if root >= part_map.len() {
            return Err(Error::Layout(format!("root joint {root} missing")));
        }
        let unique: BTreeSet<&String> = joint_names.iter().collect();
        if unique.len() != joint_names.len() {
            return Err(Error::Layout("duplicate joint names".to_string()));
        }
        for (j, part) in part_map.iter().enumerate() {
            if (j == root) != (*part == BodyPart::Root) {
                return Err(Error::Layout(format!(
                    "Root part must contain exactly the root joint (joint {j} is {})",
                    part.name()
                )));
            }
        }
        let mut groups: [Vec<usize>; NUM_PARTS] = Default::default();
        for (j, part) in part_map.iter().enumerate() {
            groups[part.index()].push(j);
        }
        for g in &mut groups {
            g.sort_by(|a, b| joint_names[*a].cmp(&joint_names[*b]));
        }
        Ok(Self {
            joint_names,
            part_map,
            root,
            groups,
        })
    }

    /// 13 joints: pelvis root, four torso joints, two joints per limb.
    pub fn default_layout() -> Self {
        use BodyPart::*;
        let joints: [(&str, BodyPart); 13] = [
            ("pelvis", Root),
            ("spine", Torso),
            ("chest", Torso),
            ("neck", Torso),
            ("head", Torso),
            ("l_elbow", LeftArm),
            ("l_wrist", LeftArm),
            ("r_elbow", RightArm),
            ("r_wrist", RightArm),
            ("l_knee", LeftLeg),
            ("l_ankle", LeftLeg),
            ("r_knee", RightLeg),
            ("r_ankle", RightLeg),
        ];
        Self::new(
            joints.iter().map(|(n, _)| n.to_string()).collect(),
            joints.iter().map(|(_, p)| *p).collect(),
            0,
        )
        .expect("default layout is valid")
    }

    pub fn num_joints(&self) -> usize {
        self.part_map.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn part_of(&self, joint: usize) -> BodyPart {
        self.part_map[joint]
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    /// Joints of `part` in their flattening order.
    pub fn joints_of(&self, part: BodyPart) -> &[usize] {
        &self.groups[part.index()]
    }

    /// Flattened feature width of every part for `dims` coordinates.
    pub fn part_widths(&self, dims: usize) -> [usize; NUM_PARTS] {
        core::array::from_fn(|i| self.groups[i].len() * dims)
    }
}

/// Joint positions and velocities, `frames x joints x dims`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    layout: SkeletonLayout,
    frame_rate: f64,
    frames: usize,
    dims: usize,
    positions: Vec<f64>,
    velocities: Vec<f64>,
}

/// Per-part streams: `positions[i]` and `velocities[i]` are
/// `frames x (|part i| * dims)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PartFrames {
    pub frames: usize,
    pub positions: [Tensor; NUM_PARTS],
    pub velocities: [Tensor; NUM_PARTS],
}

impl PartFrames {
    pub fn widths(&self) -> [usize; NUM_PARTS] {
        core::array::from_fn(|i| self.positions[i].cols())
    }
}

impl MotionSequence {
    /// Builds a sequence with zero velocities from flattened positions.
    pub fn new(layout: SkeletonLayout, frame_rate: f64, dims: usize, positions: Vec<f64>) -> Result<Self> {
        let per_frame = layout.num_joints() * dims;
        if per_frame == 0 || !positions.len().is_multiple_of(per_frame) {
            return Err(Error::Layout(format!(
                "{} values do not split into frames of {} joints x {dims}",
                positions.len(),
                layout.num_joints()
            )));
        }
        let frames = positions.len() / per_frame;
        if frames < 2 {
            return Err(Error::Length(format!("{frames} frame(s); at least 2 required")));
        }
        if let Some(bad) = positions.iter().find(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite position {bad}")));
        }
        let velocities = vec![0.0; positions.len()];
        Ok(Self {
            layout,
            frame_rate,
            frames,
            dims,
            positions,
            velocities,
        })
    }

    /// From `frames[k][j] = [x, y, z, ...]`.
    pub fn from_frames(layout: SkeletonLayout, frame_rate: f64, frames: &[Vec<Vec<f64>>]) -> Result<Self> {
        let dims = frames
            .first()
            .and_then(|f| f.first())
            .map(Vec::len)
            .ok_or_else(|| Error::Length("empty motion".to_string()))?;
        let mut flat = Vec::new();
        for (k, frame) in frames.iter().enumerate() {
            if frame.len() != layout.num_joints() {
                return Err(Error::Layout(format!(
                    "frame {k} has {} joints, layout has {}",
                    frame.len(),
                    layout.num_joints()
                )));
            }
            for joint in frame {
                if joint.len() != dims {
                    return Err(Error::Layout(format!("frame {k}: joint with {} coordinates", joint.len())));
                }
                flat.extend_from_slice(joint);
            }
        }
        Self::new(layout, frame_rate, dims, flat)
    }

    pub fn layout(&self) -> &SkeletonLayout {
        &self.layout
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    fn offset(&self, frame: usize, joint: usize) -> usize {
        (frame * self.layout.num_joints() + joint) * self.dims
    }

    pub fn position(&self, frame: usize, joint: usize) -> &[f64] {
        let o = self.offset(frame, joint);
        &self.positions[o..o + self.dims]
    }

    pub fn velocity(&self, frame: usize, joint: usize) -> &[f64] {
        let o = self.offset(frame, joint);
        &self.velocities[o..o + self.dims]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn velocities(&self) -> &[f64] {
        &self.velocities
    }

    /// `frames[k][j]` nested form.
    pub fn to_frames(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.frames)
            .map(|k| (0..self.layout.num_joints()).map(|j| self.position(k, j).to_vec()).collect())
            .collect()
    }

    /// Expresses every non-root joint as an offset from the same-frame root;
    /// the root keeps its global trajectory.
    pub fn to_root_relative(&self) -> Result<Self> {
        let root = self.layout.root();
        if root >= self.layout.num_joints() {
            return Err(Error::Layout("missing root joint".to_string()));
        }
        let mut out = self.clone();
        for k in 0..self.frames {
            let r = self.offset(k, root);
            for j in 0..self.layout.num_joints() {
                if j == root {
                    continue;
                }
                let o = self.offset(k, j);
                for d in 0..self.dims {
                    out.positions[o + d] = self.positions[o + d] - self.positions[r + d];
                }
            }
        }
        Ok(out)
    }

    /// Backward differences `V_k = X_k - X_{k-1}`, with `V_0 = 0`.
    pub fn compute_velocities(&self) -> Result<Self> {
        if self.frames < 2 {
            return Err(Error::Length("velocities need at least 2 frames".to_string()));
        }
        let mut out = self.clone();
        let stride = self.layout.num_joints() * self.dims;
        out.velocities[..stride].fill(0.0);
        for i in stride..self.positions.len() {
            out.velocities[i] = self.positions[i] - self.positions[i - stride];
        }
        Ok(out)
    }

    /// Splits positions and velocities into the six part streams.
    pub fn gather_parts(&self) -> PartFrames {
        let gather = |src: &[f64]| -> [Tensor; NUM_PARTS] {
            core::array::from_fn(|i| {
                let joints = &self.layout.groups[i];
                let width = joints.len() * self.dims;
                let mut data = Vec::with_capacity(self.frames * width);
                for k in 0..self.frames {
                    for &j in joints {
                        let o = self.offset(k, j);
                        data.extend_from_slice(&src[o..o + self.dims]);
                    }
                }
                Tensor::new(self.frames, width, data).expect("part shape")
            })
        };
        PartFrames {
            frames: self.frames,
            positions: gather(&self.positions),
            velocities: gather(&self.velocities),
        }
    }

    /// Root-relative positions, velocities and the part split in one go: the
    /// encoder's input.
    pub fn prepare(&self) -> Result<PartFrames> {
        Ok(self.to_root_relative()?.compute_velocities()?.gather_parts())
    }
}
