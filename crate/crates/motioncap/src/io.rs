//! On-disk formats: motions, datasets, checkpoints, decodes and reports.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use motioncap_core::attention::AttentionDump;
use motioncap_core::decoder::Decoded;
use motioncap_core::metrics::EvalReport;
use motioncap_core::model::{CaptionModel, ModelConfig};
use motioncap_core::numerics::{ParamStore, Tensor};
use motioncap_core::skeleton::{MotionSequence, SkeletonLayout, NUM_PARTS};
use motioncap_core::supervision::Supervisor;
use motioncap_core::synth::{annotate, Annotation, Split, SynthConfig, SyntheticCorpus};
use motioncap_core::trainer::{EpochLog, Sample};
use motioncap_core::vocab::{tokenize, Vocabulary};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Motion file: `{"layout": {...}, "frame_rate": f, "frames": [[[x, y, z], ...], ...]}`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionFile {
    pub layout: SkeletonLayout,
    pub frame_rate: f64,
    pub frames: Vec<Vec<Vec<f64>>>,
}

pub fn read_motion(path: &Path) -> Result<MotionSequence> {
    let f: MotionFile = read_json(path)?;
    MotionSequence::from_frames(f.layout, f.frame_rate, &f.frames).with_context(|| format!("invalid motion {}", path.display()))
}

pub fn write_motion(path: &Path, motion: &MotionSequence) -> Result<()> {
    write_json(
        path,
        &MotionFile {
            layout: motion.layout().clone(),
            frame_rate: motion.frame_rate(),
            frames: motion.to_frames(),
        },
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub id: String,
    pub split: Split,
    /// Motion file, relative to the dataset directory.
    pub motion: String,
    pub captions: Vec<String>,
}

pub const INDEX_FILE: &str = "index.json";
pub const ANNOTATIONS_FILE: &str = "annotations.json";

/// A dataset directory: `index.json`, `motions/<id>.json` and, for synthetic
/// data, `annotations.json` with the ground truth.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub entries: Vec<IndexEntry>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let entries: Vec<IndexEntry> = read_json(&root.join(INDEX_FILE))?;
        ensure!(!entries.is_empty(), "dataset {} is empty", root.display());
        Ok(Self {
            root: root.to_path_buf(),
            entries,
        })
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &IndexEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn samples(&self, split: Split) -> Result<Vec<Sample>> {
        self.entries(split)
            .map(|e| {
                let motion = read_motion(&self.root.join(&e.motion))?;
                Ok(Sample {
                    id: e.id.clone(),
                    parts: motion.prepare()?,
                    captions: e.captions.iter().map(|c| tokenize(c)).collect(),
                })
            })
            .collect()
    }

    pub fn annotations(&self) -> Result<Option<Vec<Annotation>>> {
        let path = self.root.join(ANNOTATIONS_FILE);
        if path.exists() {
            Ok(Some(read_json(&path)?))
        } else {
            Ok(None)
        }
    }

    /// Files whose hashes identify this dataset.
    pub fn files(&self) -> Vec<PathBuf> {
        let mut out = vec![self.root.join(INDEX_FILE)];
        out.extend(self.entries.iter().map(|e| self.root.join(&e.motion)));
        out
    }
}

pub fn write_synthetic(out: &Path, corpus: &SyntheticCorpus, config: &SynthConfig, supervisor: &Supervisor) -> Result<()> {
    fs::create_dir_all(out.join("motions"))?;
    let mut entries = Vec::with_capacity(corpus.samples.len());
    let mut annotations = Vec::with_capacity(corpus.samples.len());
    for (s, split) in corpus.samples.iter().zip(&corpus.splits) {
        let rel = format!("motions/{}.json", s.id);
        write_motion(&out.join(&rel), &s.motion)?;
        entries.push(IndexEntry {
            id: s.id.clone(),
            split: *split,
            motion: rel,
            captions: vec![s.caption.clone()],
        });
        annotations.push(annotate(s, supervisor));
    }
    write_json(&out.join(INDEX_FILE), &entries)?;
    write_json(&out.join(ANNOTATIONS_FILE), &annotations)?;
    write_json(
        &out.join("actions.json"),
        &corpus.samples.iter().map(|s| (&s.id, &s.actions, s.noise_seed)).collect::<Vec<_>>(),
    )?;
    write_json(&out.join("synth_config.json"), config)
}

pub const CHECKPOINT_MANIFEST: &str = "manifest.json";
pub const CHECKPOINT_PARAMS: &str = "params.bin";
const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Byte offset into `params.bin`.
    pub offset: usize,
}

/// `manifest.json` of a checkpoint directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: u32,
    pub model: ModelConfig,
    pub vocabulary: Vocabulary,
    pub part_widths: [usize; NUM_PARTS],
    pub params: Vec<ParamEntry>,
}

/// Writes `manifest.json` plus `params.bin` (little-endian f64, in manifest order).
pub fn save_checkpoint(dir: &Path, model: &CaptionModel) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::with_capacity(model.store.num_scalars() * 8);
    let mut params = Vec::with_capacity(model.store.len());
    for (_, name, t) in model.store.iter() {
        params.push(ParamEntry {
            name: name.to_string(),
            shape: t.shape(),
            offset: blob.len(),
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join(CHECKPOINT_PARAMS), &blob)?;
    write_json(
        &dir.join(CHECKPOINT_MANIFEST),
        &CheckpointManifest {
            format: CHECKPOINT_FORMAT,
            model: model.config.clone(),
            vocabulary: model.vocab.clone(),
            part_widths: model.widths,
            params,
        },
    )
}

pub fn load_checkpoint(dir: &Path) -> Result<CaptionModel> {
    let manifest: CheckpointManifest = read_json(&dir.join(CHECKPOINT_MANIFEST))?;
    ensure!(
        manifest.format == CHECKPOINT_FORMAT,
        "unsupported checkpoint format {}",
        manifest.format
    );
    let blob = fs::read(dir.join(CHECKPOINT_PARAMS)).with_context(|| format!("reading {}", dir.join(CHECKPOINT_PARAMS).display()))?;
    let mut store = ParamStore::new();
    for p in &manifest.params {
        let len = p.shape[0] * p.shape[1];
        let end = p.offset + len * 8;
        ensure!(end <= blob.len(), "parameter {} lies outside params.bin", p.name);
        let data = blob[p.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        store.add(&p.name, Tensor::new(p.shape[0], p.shape[1], data)?);
    }
    Ok(CaptionModel::from_params(
        manifest.model,
        manifest.vocabulary,
        manifest.part_widths,
        store,
    )?)
}

pub fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "lang", "spat", "adapt", "total", "val_bleu4"])?;
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            e.lang.to_string(),
            e.spat.to_string(),
            e.adapt.to_string(),
            e.total.to_string(),
            e.val_bleu4.map_or_else(String::new, |b| b.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One line of `decodes.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeLine {
    pub id: String,
    pub tokens: Vec<String>,
    pub score: f64,
    /// Attention dump, relative to the decode directory.
    pub attention: String,
}

pub const DECODES_FILE: &str = "decodes.jsonl";

/// Writes `decodes.jsonl` and one attention dump per sample under `attention/`.
pub fn write_decodes(dir: &Path, model: &CaptionModel, ids: &[String], decoded: &[Decoded]) -> Result<()> {
    fs::create_dir_all(dir.join("attention"))?;
    let mut w = BufWriter::new(File::create(dir.join(DECODES_FILE))?);
    for (id, d) in ids.iter().zip(decoded) {
        let tokens: Vec<String> = d
            .tokens
            .iter()
            .map(|t| model.vocab.word(*t).map(str::to_string))
            .collect::<Result<_, _>>()?;
        let rel = format!("attention/{id}.json");
        write_json(&dir.join(&rel), &AttentionDump::from_steps(id, tokens, &d.attention)?)?;
        let line = DecodeLine {
            id: id.clone(),
            tokens: model.words(d)?,
            score: d.score(),
            attention: rel,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads every attention dump listed in `decodes.jsonl` (or, without it,
/// every `*.json` under `attention/`, in name order).
pub fn read_dumps(dir: &Path) -> Result<Vec<AttentionDump>> {
    let listing = dir.join(DECODES_FILE);
    let paths: Vec<PathBuf> = if listing.exists() {
        let mut out = Vec::new();
        for line in BufReader::new(File::open(&listing)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let d: DecodeLine = serde_json::from_str(&line).with_context(|| format!("parsing {}", listing.display()))?;
            out.push(dir.join(d.attention));
        }
        out
    } else {
        let attn = dir.join("attention");
        let root = if attn.is_dir() { attn } else { dir.to_path_buf() };
        let mut out: Vec<PathBuf> = fs::read_dir(&root)
            .with_context(|| format!("listing {}", root.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        out.sort();
        out
    };
    if paths.is_empty() {
        bail!("no attention dumps in {}", dir.display());
    }
    paths.iter().map(|p| read_json(p)).collect()
}

pub fn write_eval_report(dir: &Path, report: &EvalReport) -> Result<()> {
    write_json(&dir.join("eval.json"), report)?;
    let mut w = csv::Writer::from_path(dir.join("eval.csv"))?;
    w.write_record(EvalReport::COLUMNS)?;
    w.write_record(report.values().iter().map(|v| v.to_string()))?;
    w.flush()?;
    Ok(())
}
