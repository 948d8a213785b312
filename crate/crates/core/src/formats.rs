//! The repo's public file formats, all textual and byte-deterministic:
//!
//! - sequence file: JSON Lines, one self-contained record per line with
//!   `id`, `label`, `joints` and the raw `frames`;
//! - dataset manifest: JSON object naming the sequence file, the joint
//!   count, the class names and the train/test split by sequence id;
//! - tangent-tensor file: one JSON header line (format version, full config,
//!   reference shape, dimensions, ids, labels) followed by one line per
//!   frame of space-separated floats printed with 17 significant digits,
//!   which round-trips every finite f64 exactly;
//! - checkpoint: a versioned JSON object with every parameter tensor as a
//!   shape plus flat data list, the optimizer state and the config.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PreShape;
use crate::layers::{
    AdamState, Conv1DLayer, DenseLayer, LstmLayer, TransformLayer, TransformParams,
};
use crate::model::{EncodedDataset, KShapeNetConfig, Model};
use crate::synth::GeneratedDataset;
use crate::trajectory::{ReferenceShape, SkeletonSequence};

pub const SEQUENCE_FILE: &str = "sequences.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAIN_TENSOR_FILE: &str = "train.tns";
pub const TEST_TENSOR_FILE: &str = "test.tns";

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SequenceRecord {
    id: String,
    label: usize,
    joints: usize,
    frames: Vec<Vec<[f64; 3]>>,
}

/// Dataset-level index: where the sequences live and how they are split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub sequence_file: String,
    pub joints: usize,
    pub classes: Vec<String>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

fn seq_to_record(seq: &SkeletonSequence) -> SequenceRecord {
    let f = seq.frames();
    let frames = (0..seq.num_frames())
        .map(|t| {
            (0..seq.joints())
                .map(|j| [f[[t, j, 0]], f[[t, j, 1]], f[[t, j, 2]]])
                .collect()
        })
        .collect();
    SequenceRecord {
        id: seq.id.clone(),
        label: seq.label,
        joints: seq.joints(),
        frames,
    }
}

fn record_to_seq(rec: SequenceRecord) -> Result<SkeletonSequence> {
    let t = rec.frames.len();
    let mut frames = Array3::zeros((t, rec.joints, 3));
    for (i, frame) in rec.frames.iter().enumerate() {
        if frame.len() != rec.joints {
            return Err(Error::Format(format!(
                "sequence {}: frame {i} has {} joints, header says {}",
                rec.id,
                frame.len(),
                rec.joints
            )));
        }
        for (j, p) in frame.iter().enumerate() {
            for c in 0..3 {
                frames[[i, j, c]] = p[c];
            }
        }
    }
    SkeletonSequence::new(rec.id, rec.label, frames)
}

/// Write one JSON record per line.
pub fn write_sequences(path: &Path, seqs: &[SkeletonSequence]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for seq in seqs {
        serde_json::to_writer(&mut out, &seq_to_record(seq))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_sequences(path: &Path) -> Result<Vec<SkeletonSequence>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SequenceRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
        out.push(record_to_seq(rec)?);
    }
    Ok(out)
}

/// Write `manifest.json` + `sequences.jsonl` (train split first).
pub fn write_dataset(dir: &Path, ds: &GeneratedDataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut all: Vec<SkeletonSequence> = Vec::with_capacity(ds.train.len() + ds.test.len());
    all.extend(ds.train.iter().cloned());
    all.extend(ds.test.iter().cloned());
    write_sequences(&dir.join(SEQUENCE_FILE), &all)?;
    let joints = all.first().map(|s| s.joints()).ok_or(Error::EmptyDataset)?;
    let manifest = DatasetManifest {
        version: FORMAT_VERSION,
        sequence_file: SEQUENCE_FILE.into(),
        joints,
        classes: ds.class_names.clone(),
        train_ids: ds.train.iter().map(|s| s.id.clone()).collect(),
        test_ids: ds.test.iter().map(|s| s.id.clone()).collect(),
    };
    let mut f = BufWriter::new(File::create(dir.join(MANIFEST_FILE))?);
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

/// A dataset loaded back from disk, split per the manifest.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub train: Vec<SkeletonSequence>,
    pub test: Vec<SkeletonSequence>,
    pub classes: Vec<String>,
    pub joints: usize,
}

/// Read a manifest (a directory containing `manifest.json`, or the file
/// itself) and its sequences. Every referenced id must be present exactly
/// once and every label must fall inside the class list.
pub fn load_dataset(path: &Path) -> Result<LoadedDataset> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let manifest: DatasetManifest = serde_json::from_reader(BufReader::new(File::open(
        &manifest_path,
    )?))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let seqs = read_sequences(&base.join(&manifest.sequence_file))?;

    let mut by_id = std::collections::BTreeMap::new();
    for seq in seqs {
        if seq.joints() != manifest.joints {
            return Err(Error::Format(format!(
                "sequence {} has {} joints, manifest says {}",
                seq.id,
                seq.joints(),
                manifest.joints
            )));
        }
        if seq.label >= manifest.classes.len() {
            return Err(Error::LabelOutOfRange {
                label: seq.label,
                classes: manifest.classes.len(),
            });
        }
        if by_id.insert(seq.id.clone(), seq).is_some() {
            return Err(Error::Format("duplicate sequence id in dataset".into()));
        }
    }
    let mut take = |ids: &[String]| -> Result<Vec<SkeletonSequence>> {
        ids.iter()
            .map(|id| {
                by_id
                    .remove(id)
                    .ok_or_else(|| Error::Format(format!("manifest references missing id {id}")))
            })
            .collect()
    };
    let train = take(&manifest.train_ids)?;
    let test = take(&manifest.test_ids)?;
    if !by_id.is_empty() {
        return Err(Error::Format(format!(
            "{} sequences are not assigned to any split",
            by_id.len()
        )));
    }
    Ok(LoadedDataset {
        train,
        test,
        classes: manifest.classes,
        joints: manifest.joints,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReferenceData {
    provenance: String,
    coords: Vec<[f64; 3]>,
}

fn reference_to_data(r: &ReferenceShape) -> ReferenceData {
    let c = r.shape.coords();
    ReferenceData {
        provenance: r.provenance.clone(),
        coords: (0..c.nrows()).map(|i| [c[[i, 0]], c[[i, 1]], c[[i, 2]]]).collect(),
    }
}

fn data_to_reference(d: &ReferenceData) -> Result<ReferenceShape> {
    let mut coords = Array2::zeros((d.coords.len(), 3));
    for (i, row) in d.coords.iter().enumerate() {
        for c in 0..3 {
            coords[[i, c]] = row[c];
        }
    }
    Ok(ReferenceShape::new(PreShape::new(coords)?, d.provenance.clone()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TangentHeader {
    version: u32,
    config: KShapeNetConfig,
    reference: ReferenceData,
    sequences: usize,
    frames: usize,
    features: usize,
    ids: Vec<String>,
    labels: Vec<usize>,
}

/// An encoded dataset together with everything needed to reproduce it.
#[derive(Debug, Clone)]
pub struct TangentFile {
    pub config: KShapeNetConfig,
    pub reference: ReferenceShape,
    pub dataset: EncodedDataset,
}

/// 17 significant digits: enough to reproduce any finite f64 exactly.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_tangent(path: &Path, file: &TangentFile) -> Result<()> {
    let ds = &file.dataset;
    ds.validate(
        file.config.frames,
        file.config.features(),
        file.config.classes,
    )?;
    let header = TangentHeader {
        version: FORMAT_VERSION,
        config: file.config.clone(),
        reference: reference_to_data(&file.reference),
        sequences: ds.len(),
        frames: file.config.frames,
        features: file.config.features(),
        ids: ds.ids.clone(),
        labels: ds.labels.clone(),
    };
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let mut line = String::new();
    for d in &ds.data {
        for row in d.rows() {
            line.clear();
            for (k, v) in row.iter().enumerate() {
                if k > 0 {
                    line.push(' ');
                }
                line.push_str(&fmt_f64(*v));
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_tangent(path: &Path) -> Result<TangentFile> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header_line = String::new();
    reader.read_line(&mut header_line)?;
    let header: TangentHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::Format(format!("tangent header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported tangent format version {}",
            header.version
        )));
    }
    let mut data = Vec::with_capacity(header.sequences);
    let mut line = String::new();
    for s in 0..header.sequences {
        let mut block = Array2::zeros((header.frames, header.features));
        for t in 0..header.frames {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                return Err(Error::Format(format!(
                    "tangent file truncated at sequence {s}, frame {t}"
                )));
            }
            let mut k = 0;
            for tok in line.split_ascii_whitespace() {
                if k >= header.features {
                    return Err(Error::Format(format!(
                        "row {t} of sequence {s} has too many columns"
                    )));
                }
                block[[t, k]] = tok
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("bad float '{tok}': {e}")))?;
                k += 1;
            }
            if k != header.features {
                return Err(Error::Format(format!(
                    "row {t} of sequence {s} has {k} columns, expected {}",
                    header.features
                )));
            }
        }
        data.push(block);
    }
    Ok(TangentFile {
        config: header.config,
        reference: data_to_reference(&header.reference)?,
        dataset: EncodedDataset {
            ids: header.ids,
            labels: header.labels,
            data,
        },
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AdamData {
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config: KShapeNetConfig,
    reference: ReferenceData,
    tensors: Vec<NamedTensor>,
    adam: AdamData,
}

fn named<D: ndarray::Dimension>(
    name: &str,
    arr: &ndarray::ArrayBase<ndarray::OwnedRepr<f64>, D>,
) -> NamedTensor {
    NamedTensor {
        name: name.into(),
        shape: arr.shape().to_vec(),
        data: arr.iter().cloned().collect(),
    }
}

/// Persist every parameter tensor, the optimizer state, the config and the
/// reference shape.
pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    let mut tensors = Vec::new();
    if let Some(t) = model.transform() {
        let (name, shape, data) = match t.params() {
            TransformParams::RigidMatrix(a) => ("transform", a.shape().to_vec(), a.iter().cloned().collect()),
            TransformParams::RigidAngle(a) => ("transform", a.shape().to_vec(), a.iter().cloned().collect()),
            TransformParams::NonRigidMatrix(a) => ("transform", a.shape().to_vec(), a.iter().cloned().collect()),
            TransformParams::NonRigidAngle(a) => ("transform", a.shape().to_vec(), a.iter().cloned().collect()),
        };
        tensors.push(NamedTensor {
            name: name.into(),
            shape,
            data,
        });
    }
    tensors.push(named("conv1_weights", model.conv1().weights()));
    tensors.push(named("conv1_bias", model.conv1().bias()));
    tensors.push(named("conv2_weights", model.conv2().weights()));
    tensors.push(named("conv2_bias", model.conv2().bias()));
    tensors.push(named("lstm_w", model.lstm().w()));
    tensors.push(named("lstm_u", model.lstm().u()));
    tensors.push(named("lstm_bias", model.lstm().bias()));
    tensors.push(named("dense_weights", model.dense().weights()));
    tensors.push(named("dense_bias", model.dense().bias()));

    let (first, second) = model.optimizer().moments();
    let file = CheckpointFile {
        version: FORMAT_VERSION,
        config: model.config().clone(),
        reference: reference_to_data(model.reference()),
        tensors,
        adam: AdamData {
            step: model.optimizer().step_count(),
            first: first.to_vec(),
            second: second.to_vec(),
        },
    };
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, &file)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

struct TensorReader {
    tensors: Vec<NamedTensor>,
}

impl TensorReader {
    fn take(&mut self, name: &str) -> Result<NamedTensor> {
        let pos = self
            .tensors
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor '{name}'")))?;
        let t = self.tensors.remove(pos);
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::Format(format!(
                "tensor '{name}' shape/data mismatch"
            )));
        }
        Ok(t)
    }

    fn array1(&mut self, name: &str) -> Result<Array1<f64>> {
        let t = self.take(name)?;
        Ok(Array1::from_vec(t.data))
    }

    fn array2(&mut self, name: &str) -> Result<Array2<f64>> {
        let t = self.take(name)?;
        Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data)
            .map_err(|e| Error::Format(e.to_string()))
    }

    fn array3(&mut self, name: &str) -> Result<Array3<f64>> {
        let t = self.take(name)?;
        Array3::from_shape_vec((t.shape[0], t.shape[1], t.shape[2]), t.data)
            .map_err(|e| Error::Format(e.to_string()))
    }
}

/// Rebuild a model from a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let file: CheckpointFile =
        serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if file.version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}",
            file.version
        )));
    }
    let config = file.config;
    let reference = data_to_reference(&file.reference)?;
    let mut r = TensorReader {
        tensors: file.tensors,
    };

    let transform = match config.transform.variant() {
        Some(variant) => {
            let t = r.take("transform")?;
            let params = match variant {
                crate::layers::TransformVariant::RigidMatrix => TransformParams::RigidMatrix(
                    Array3::from_shape_vec((t.shape[0], t.shape[1], t.shape[2]), t.data)
                        .map_err(|e| Error::Format(e.to_string()))?,
                ),
                crate::layers::TransformVariant::RigidAngle => TransformParams::RigidAngle(
                    Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data)
                        .map_err(|e| Error::Format(e.to_string()))?,
                ),
                crate::layers::TransformVariant::NonRigidMatrix => TransformParams::NonRigidMatrix(
                    Array4::from_shape_vec(
                        (t.shape[0], t.shape[1], t.shape[2], t.shape[3]),
                        t.data,
                    )
                    .map_err(|e| Error::Format(e.to_string()))?,
                ),
                crate::layers::TransformVariant::NonRigidAngle => TransformParams::NonRigidAngle(
                    Array3::from_shape_vec((t.shape[0], t.shape[1], t.shape[2]), t.data)
                        .map_err(|e| Error::Format(e.to_string()))?,
                ),
            };
            Some(TransformLayer::from_params(
                variant,
                config.frames,
                config.joints - 1,
                params,
            )?)
        }
        None => None,
    };

    let conv1 = Conv1DLayer::new(r.array3("conv1_weights")?, r.array1("conv1_bias")?, 1)?;
    let conv2 = Conv1DLayer::new(r.array3("conv2_weights")?, r.array1("conv2_bias")?, 1)?;
    let lstm = LstmLayer::new(r.array2("lstm_w")?, r.array2("lstm_u")?, r.array1("lstm_bias")?)?;
    let dense = DenseLayer::new(r.array2("dense_weights")?, r.array1("dense_bias")?)?;
    let optimizer = AdamState::restore(config.optimizer, file.adam.step, file.adam.first, file.adam.second)?;

    Model::assemble(config, reference, transform, conv1, conv2, lstm, dense, optimizer)
}
