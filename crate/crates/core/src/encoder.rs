//! Frame-wise part encoder: for every part and every stream (positions,
//! velocities) two `tanh` linear layers, then position and velocity embeddings
//! are concatenated.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{dim, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::skeleton::{BodyPart, PartFrames, NUM_PARTS};

/// FC1 (in → h1) and FC2 (h1 → h2), weights stored `out x in`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StreamStack {
    pub fc1_w: ParamId,
    pub fc1_b: ParamId,
    pub fc2_w: ParamId,
    pub fc2_b: ParamId,
    pub input_width: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    /// `stacks[part][0]` encodes positions, `stacks[part][1]` velocities.
    pub stacks: [[StreamStack; 2]; NUM_PARTS],
    pub h1: usize,
    pub h2: usize,
}

impl EncoderParams {
    pub fn register<R: Rng + ?Sized>(store: &mut ParamStore, widths: [usize; NUM_PARTS], h1: usize, h2: usize, rng: &mut R) -> Self {
        let stacks = core::array::from_fn(|i| {
            let part = BodyPart::ALL[i].name();
            ["position", "velocity"].map(|stream| {
                let prefix = format!("encoder.{part}.{stream}");
                StreamStack {
                    fc1_w: store.add_uniform(&format!("{prefix}.fc1.weight"), h1, widths[i], rng),
                    fc1_b: store.add(&format!("{prefix}.fc1.bias"), Tensor::zeros(1, h1)),
                    fc2_w: store.add_uniform(&format!("{prefix}.fc2.weight"), h2, h1, rng),
                    fc2_b: store.add(&format!("{prefix}.fc2.bias"), Tensor::zeros(1, h2)),
                    input_width: widths[i],
                }
            })
        });
        Self { stacks, h1, h2 }
    }

    /// Width of one part embedding.
    pub fn h_enc(&self) -> usize {
        2 * self.h2
    }
}

fn stream(tape: &mut Tape, vars: &[Var], s: &StreamStack, input: &Tensor) -> Result<Var> {
    if input.cols() != s.input_width {
        return Err(dim(
            "encode",
            format!("part stream of width {} for an FC1 expecting {}", input.cols(), s.input_width),
        ));
    }
    let x = tape.leaf(input.clone());
    let h = tape.matmul_nt(x, vars[s.fc1_w.0])?;
    let h = tape.add(h, vars[s.fc1_b.0])?;
    let h = tape.tanh(h);
    let h = tape.matmul_nt(h, vars[s.fc2_w.0])?;
    let h = tape.add(h, vars[s.fc2_b.0])?;
    Ok(tape.tanh(h))
}

/// Encodes all parts. The result is `(parts * frames) x h_enc` with row
/// `part * frames + frame` holding `P_{part, frame}`.
pub fn encode(tape: &mut Tape, vars: &[Var], params: &EncoderParams, parts: &PartFrames) -> Result<Var> {
    let mut blocks = Vec::with_capacity(NUM_PARTS);
    for (i, stacks) in params.stacks.iter().enumerate() {
        if parts.positions[i].rows() != parts.frames || parts.velocities[i].rows() != parts.frames {
            return Err(dim("encode", format!("part {i} frame count differs from {}", parts.frames)));
        }
        let p = stream(tape, vars, &stacks[0], &parts.positions[i])?;
        let v = stream(tape, vars, &stacks[1], &parts.velocities[i])?;
        blocks.push(tape.concat_cols(&[p, v])?);
    }
    tape.concat_rows(&blocks)
}

/// Dense view of encoder output.
#[derive(Clone, Debug, PartialEq)]
pub struct PartEmbeddings {
    pub frames: usize,
    pub values: Tensor,
}

impl PartEmbeddings {
    pub fn get(&self, part: usize, frame: usize) -> &[f64] {
        self.values.row_slice(part * self.frames + frame)
    }

    pub fn width(&self) -> usize {
        self.values.cols()
    }
}

/// Runs the encoder outside of any training graph.
pub fn encode_values(store: &ParamStore, params: &EncoderParams, parts: &PartFrames) -> Result<PartEmbeddings> {
    let mut tape = Tape::new();
    let vars = store.bind(&mut tape);
    let p = encode(&mut tape, &vars, params, parts)?;
    Ok(PartEmbeddings {
        frames: parts.frames,
        values: tape.value(p).clone(),
    })
}
