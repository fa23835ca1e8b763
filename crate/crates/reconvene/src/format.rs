//! Model and dataset files: a UTF-8 JSON manifest plus one binary blob.
//!
//! Container layout (`.rcv`, preferred for writing):
//! 8-byte little-endian manifest length, the manifest bytes, then the blob.
//! A manifest may also live next to its blob as sibling `.json` + `.bin`
//! files; both forms load identically. All offsets in a manifest are
//! relative to the start of the blob. Weights and biases are little-endian
//! f32; masks are packed bit arrays, LSB-first, padded to whole bytes;
//! dataset labels are little-endian i32.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use reconvene_core::graph::{LayerKind, LayerSpec, ModelGraph, WeightTensor};
use reconvene_core::mask::SparsityMask;
use reconvene_core::train::{Dataset, Split};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("blob length mismatch: {0}")]
    Blob(String),
}

impl FormatError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::Io { path: path.to_path_buf(), source }
    }
}

/// Byte range within the blob.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobRef {
    pub offset: u64,
    pub byte_len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerManifest {
    #[serde(flatten)]
    pub kind: LayerKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_shape: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<BlobRef>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias: Option<BlobRef>,
    /// `bits` is the logical mask length; the byte range is padded.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask: Option<MaskRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRef {
    pub offset: u64,
    pub byte_len: u64,
    pub bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Manifest {
    Model(ModelManifest),
    Dataset(DatasetManifest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub input_shape: (usize, usize, usize),
    pub class_count: usize,
    pub seed_provenance: u64,
    pub layers: Vec<LayerManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub shape: (usize, usize, usize, usize),
    pub split: Split,
    pub inputs: BlobRef,
    pub labels: BlobRef,
}

/// Raw manifest + blob, before interpretation. Public so reports and tests
/// can recompute storage arithmetic straight from a file.
pub fn read_container(path: &Path) -> Result<(Manifest, Vec<u8>), FormatError> {
    if path.extension().is_some_and(|e| e == "json") {
        let manifest_bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
        let manifest = parse_manifest(&manifest_bytes)?;
        let blob_path = path.with_extension("bin");
        let blob = fs::read(&blob_path).map_err(|e| FormatError::io(&blob_path, e))?;
        return Ok((manifest, blob));
    }
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    if bytes.len() < 8 {
        return Err(FormatError::Manifest(format!("{}: file shorter than length prefix", path.display())));
    }
    let mlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let Some(rest) = bytes.get(8..) else {
        return Err(FormatError::Manifest(String::from("missing manifest")));
    };
    if mlen > rest.len() {
        return Err(FormatError::Manifest(format!(
            "manifest length {mlen} exceeds file payload {}",
            rest.len()
        )));
    }
    let manifest = parse_manifest(&rest[..mlen])?;
    Ok((manifest, rest[mlen..].to_vec()))
}

fn parse_manifest(bytes: &[u8]) -> Result<Manifest, FormatError> {
    let manifest: Manifest =
        serde_json::from_slice(bytes).map_err(|e| FormatError::Manifest(e.to_string()))?;
    let version = match &manifest {
        Manifest::Model(m) => m.format_version,
        Manifest::Dataset(d) => d.format_version,
    };
    if version != FORMAT_VERSION {
        return Err(FormatError::Manifest(format!("unsupported format_version {version}")));
    }
    Ok(manifest)
}

fn write_container(path: &Path, manifest_json: &[u8], blob: &[u8]) -> Result<(), FormatError> {
    let mut out = Vec::with_capacity(8 + manifest_json.len() + blob.len());
    out.extend_from_slice(&(manifest_json.len() as u64).to_le_bytes());
    out.extend_from_slice(manifest_json);
    out.extend_from_slice(blob);
    fs::write(path, out).map_err(|e| FormatError::io(path, e))
}

fn slice<'a>(blob: &'a [u8], r: &BlobRef, what: &str) -> Result<&'a [u8], FormatError> {
    let start = r.offset as usize;
    let end = start
        .checked_add(r.byte_len as usize)
        .ok_or_else(|| FormatError::Blob(format!("{what}: offset overflow")))?;
    blob.get(start..end)
        .ok_or_else(|| FormatError::Blob(format!("{what}: range {start}..{end} outside blob of {} bytes", blob.len())))
}

fn read_f32s(blob: &[u8], r: &BlobRef, what: &str) -> Result<Vec<f32>, FormatError> {
    let raw = slice(blob, r, what)?;
    if raw.len() % 4 != 0 {
        return Err(FormatError::Blob(format!("{what}: byte length {} not a multiple of 4", raw.len())));
    }
    Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

fn push_f32s(blob: &mut Vec<u8>, values: &[f32]) -> BlobRef {
    let offset = blob.len() as u64;
    for v in values {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    BlobRef { offset, byte_len: values.len() as u64 * 4 }
}

pub fn save_model(graph: &ModelGraph, path: &Path) -> Result<(), FormatError> {
    let mut blob = Vec::new();
    let layers = graph
        .layers
        .iter()
        .map(|layer| {
            let weights = layer.weights.as_ref().map(|w| push_f32s(&mut blob, &w.data));
            let bias = layer.bias.as_ref().map(|b| push_f32s(&mut blob, b));
            let mask = layer.mask.as_ref().map(|m| {
                let offset = blob.len() as u64;
                blob.extend_from_slice(m.as_bytes());
                MaskRef { offset, byte_len: m.as_bytes().len() as u64, bits: m.len() as u64 }
            });
            LayerManifest {
                kind: layer.kind,
                weight_shape: layer.weights.as_ref().map(|w| w.shape.clone()),
                weights,
                bias,
                mask,
            }
        })
        .collect();
    let manifest = Manifest::Model(ModelManifest {
        format_version: FORMAT_VERSION,
        input_shape: graph.input_shape,
        class_count: graph.class_count,
        seed_provenance: graph.seed_provenance,
        layers,
    });
    let json = serde_json::to_vec(&manifest).map_err(|e| FormatError::Manifest(e.to_string()))?;
    write_container(path, &json, &blob)
}

pub fn load_model(path: &Path) -> Result<ModelGraph, FormatError> {
    let (manifest, blob) = read_container(path)?;
    let Manifest::Model(m) = manifest else {
        return Err(FormatError::Manifest(format!("{} is not a model file", path.display())));
    };
    let mut layers = Vec::with_capacity(m.layers.len());
    for (li, lm) in m.layers.iter().enumerate() {
        let weights = match (&lm.weights, &lm.weight_shape) {
            (Some(r), Some(shape)) => {
                let data = read_f32s(&blob, r, &format!("layer {li} weights"))?;
                let expected: usize = shape.iter().product();
                if data.len() != expected {
                    return Err(FormatError::Blob(format!(
                        "layer {li}: weight shape {shape:?} wants {expected} elements, blob has {}",
                        data.len()
                    )));
                }
                Some(WeightTensor::new(shape.clone(), data))
            }
            (None, None) => None,
            _ => {
                return Err(FormatError::Manifest(format!(
                    "layer {li}: weights and weight_shape must appear together"
                )))
            }
        };
        let bias = match &lm.bias {
            Some(r) => Some(read_f32s(&blob, r, &format!("layer {li} bias"))?),
            None => None,
        };
        let mask = match &lm.mask {
            Some(r) => {
                let raw = slice(&blob, &BlobRef { offset: r.offset, byte_len: r.byte_len }, &format!("layer {li} mask"))?;
                Some(SparsityMask::from_bytes(raw.to_vec(), r.bits as usize).ok_or_else(|| {
                    FormatError::Blob(format!("layer {li}: mask bytes inconsistent with {} bits", r.bits))
                })?)
            }
            None => None,
        };
        layers.push(LayerSpec { kind: lm.kind, weights, bias, mask });
    }
    Ok(ModelGraph {
        layers,
        input_shape: m.input_shape,
        class_count: m.class_count,
        seed_provenance: m.seed_provenance,
    })
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<(), FormatError> {
    let mut blob = Vec::new();
    let inputs = push_f32s(&mut blob, &data.inputs);
    let labels_offset = blob.len() as u64;
    for l in &data.labels {
        blob.extend_from_slice(&(*l as i32).to_le_bytes());
    }
    let manifest = Manifest::Dataset(DatasetManifest {
        format_version: FORMAT_VERSION,
        shape: data.shape,
        split: data.split,
        inputs,
        labels: BlobRef { offset: labels_offset, byte_len: data.labels.len() as u64 * 4 },
    });
    let json = serde_json::to_vec(&manifest).map_err(|e| FormatError::Manifest(e.to_string()))?;
    write_container(path, &json, &blob)
}

pub fn load_dataset(path: &Path) -> Result<Dataset, FormatError> {
    let (manifest, blob) = read_container(path)?;
    let Manifest::Dataset(m) = manifest else {
        return Err(FormatError::Manifest(format!("{} is not a dataset file", path.display())));
    };
    let inputs = read_f32s(&blob, &m.inputs, "inputs")?;
    let raw = slice(&blob, &m.labels, "labels")?;
    if raw.len() % 4 != 0 {
        return Err(FormatError::Blob(String::from("labels byte length not a multiple of 4")));
    }
    let mut labels = Vec::with_capacity(raw.len() / 4);
    for c in raw.chunks_exact(4) {
        let v = i32::from_le_bytes(c.try_into().unwrap());
        if v < 0 {
            return Err(FormatError::Blob(format!("negative label {v}")));
        }
        labels.push(v as u32);
    }
    Ok(Dataset { inputs, shape: m.shape, labels, split: m.split })
}

/// Parameter payload bytes (weights + biases, masks excluded) computed from
/// a serialized file's manifest alone — an independent check on the storage
/// metric that never touches the in-memory graph.
pub fn payload_bytes_of_file(path: &Path) -> Result<u64, FormatError> {
    let (manifest, _) = read_container(path)?;
    let Manifest::Model(m) = manifest else {
        return Err(FormatError::Manifest(format!("{} is not a model file", path.display())));
    };
    Ok(m.layers
        .iter()
        .map(|l| {
            l.weights.map(|r| r.byte_len).unwrap_or(0) + l.bias.map(|r| r.byte_len).unwrap_or(0)
        })
        .sum())
}
