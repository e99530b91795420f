//! `.ocnn` model files and `.ocnd` dataset files.
//!
//! Layout of both formats:
//!
//! ```text
//! magic        4 bytes   b"OCNN" (models) or b"OCND" (datasets)
//! version      u16 LE    currently 1
//! manifest_len u32 LE
//! manifest     manifest_len bytes of UTF-8 JSON
//! payload      raw little-endian blobs addressed by byte offsets in the manifest
//! ```
//!
//! Model payloads are f32 tensors in row-major order. Dataset payloads are
//! one f32 image blob followed by one u32 label blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{BatchNorm, Conv2d, Dense, Layer, ModelGraph};
use crate::ops::Padding;
use crate::tensor::Tensor;

pub const MODEL_MAGIC: [u8; 4] = *b"OCNN";
pub const DATASET_MAGIC: [u8; 4] = *b"OCND";
pub const FORMAT_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 4;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BlobRef {
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: usize,
    /// Element count.
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LayerEntry {
    Conv2d {
        stride: usize,
        padding: Padding,
        kernel: BlobRef,
        bias: BlobRef,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    Dense {
        weights: BlobRef,
        bias: BlobRef,
    },
    Flatten,
    Relu,
    Softmax,
    BatchNorm {
        eps: f32,
        gamma: BlobRef,
        beta: BlobRef,
        mean: BlobRef,
        var: BlobRef,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    name: String,
    input_shape: [usize; 3],
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    class_count: usize,
    images: BlobRef,
    labels: BlobRef,
}

struct PayloadWriter(Vec<u8>);

impl PayloadWriter {
    fn push(&mut self, t: &Tensor) -> BlobRef {
        let offset = self.0.len();
        for v in t.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
        BlobRef {
            shape: t.shape().to_vec(),
            offset,
            len: t.len(),
        }
    }
}

fn frame(magic: [u8; 4], manifest: &impl Serialize, payload: Vec<u8>) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(manifest).map_err(|e| Error::Manifest(e.to_string()))?;
    let json_len = u32::try_from(json.len()).map_err(|_| Error::Manifest("manifest exceeds 4 GiB".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + payload.len());
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&json_len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Splits a file into its manifest and payload after checking the header.
fn unframe<'a, M: for<'de> Deserialize<'de>>(bytes: &'a [u8], magic: [u8; 4]) -> Result<(M, &'a [u8])> {
    if bytes.len() < 4 || bytes[..4] != magic {
        return Err(Error::BadMagic {
            expected: magic,
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            what: "header".into(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let json_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    let rest = &bytes[HEADER_LEN..];
    if rest.len() < json_len {
        return Err(Error::Truncated {
            what: "manifest".into(),
            expected: json_len,
            found: rest.len(),
        });
    }
    let manifest = serde_json::from_slice(&rest[..json_len]).map_err(|e| Error::Manifest(e.to_string()))?;
    Ok((manifest, &rest[json_len..]))
}

struct PayloadReader<'a> {
    payload: &'a [u8],
    /// Largest byte end referenced so far.
    end: usize,
}

impl<'a> PayloadReader<'a> {
    fn new(payload: &'a [u8]) -> Self {
        Self { payload, end: 0 }
    }

    fn span(&mut self, what: &str, r: &BlobRef, width: usize) -> Result<&'a [u8]> {
        let n: usize = r.shape.iter().product();
        if n != r.len {
            return Err(Error::Manifest(format!(
                "{what}: shape {:?} holds {n} elements but len is {}",
                r.shape, r.len
            )));
        }
        let end = r
            .len
            .checked_mul(width)
            .and_then(|b| b.checked_add(r.offset))
            .ok_or_else(|| Error::Manifest(format!("{what}: blob extent overflows")))?;
        if end > self.payload.len() {
            return Err(Error::Truncated {
                what: format!("blob `{what}`"),
                expected: end,
                found: self.payload.len(),
            });
        }
        self.end = self.end.max(end);
        Ok(&self.payload[r.offset..end])
    }

    fn tensor(&mut self, what: &str, r: &BlobRef) -> Result<Tensor> {
        let bytes = self.span(what, r, 4)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Tensor::new(r.shape.clone(), data).map_err(|e| match e {
            Error::NonFinite { .. } => Error::NonFinite {
                context: format!("blob `{what}`"),
            },
            Error::Dimension { detail, .. } => Error::Manifest(format!("{what}: {detail}")),
            other => other,
        })
    }

    fn u32s(&mut self, what: &str, r: &BlobRef) -> Result<Vec<u32>> {
        let bytes = self.span(what, r, 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn finish(self) -> Result<()> {
        if self.end != self.payload.len() {
            return Err(Error::Manifest(format!(
                "payload has {} bytes but the manifest references {}",
                self.payload.len(),
                self.end
            )));
        }
        Ok(())
    }
}

/// Serializes a model to the `.ocnn` byte layout.
pub fn encode_model(g: &ModelGraph) -> Result<Vec<u8>> {
    let mut payload = PayloadWriter(Vec::new());
    let layers = g
        .layers()
        .iter()
        .map(|layer| match layer {
            Layer::Conv2d(c) => LayerEntry::Conv2d {
                stride: c.stride,
                padding: c.padding,
                kernel: payload.push(&c.kernel),
                bias: payload.push(&c.bias),
            },
            Layer::MaxPool { window, stride } => LayerEntry::MaxPool {
                window: *window,
                stride: *stride,
            },
            Layer::Dense(d) => LayerEntry::Dense {
                weights: payload.push(&d.weights),
                bias: payload.push(&d.bias),
            },
            Layer::Flatten => LayerEntry::Flatten,
            Layer::Relu => LayerEntry::Relu,
            Layer::Softmax => LayerEntry::Softmax,
            Layer::BatchNorm(b) => LayerEntry::BatchNorm {
                eps: b.eps,
                gamma: payload.push(&b.gamma),
                beta: payload.push(&b.beta),
                mean: payload.push(&b.mean),
                var: payload.push(&b.var),
            },
        })
        .collect();
    let manifest = ModelManifest {
        name: g.name().to_string(),
        input_shape: g.input_shape(),
        layers,
    };
    frame(MODEL_MAGIC, &manifest, payload.0)
}

/// Parses `.ocnn` bytes and validates the result with shape inference.
pub fn decode_model(bytes: &[u8]) -> Result<ModelGraph> {
    let (manifest, payload): (ModelManifest, _) = unframe(bytes, MODEL_MAGIC)?;
    let mut rd = PayloadReader::new(payload);
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (i, entry) in manifest.layers.iter().enumerate() {
        let name = |slot: &str| format!("layers[{i}].{slot}");
        let layer = match entry {
            LayerEntry::Conv2d {
                stride,
                padding,
                kernel,
                bias,
            } => Layer::Conv2d(Conv2d {
                kernel: rd.tensor(&name("kernel"), kernel)?,
                bias: rd.tensor(&name("bias"), bias)?,
                stride: *stride,
                padding: *padding,
            }),
            LayerEntry::MaxPool { window, stride } => Layer::MaxPool {
                window: *window,
                stride: *stride,
            },
            LayerEntry::Dense { weights, bias } => Layer::Dense(Dense {
                weights: rd.tensor(&name("weights"), weights)?,
                bias: rd.tensor(&name("bias"), bias)?,
            }),
            LayerEntry::Flatten => Layer::Flatten,
            LayerEntry::Relu => Layer::Relu,
            LayerEntry::Softmax => Layer::Softmax,
            LayerEntry::BatchNorm {
                eps,
                gamma,
                beta,
                mean,
                var,
            } => Layer::BatchNorm(BatchNorm {
                gamma: rd.tensor(&name("gamma"), gamma)?,
                beta: rd.tensor(&name("beta"), beta)?,
                mean: rd.tensor(&name("mean"), mean)?,
                var: rd.tensor(&name("var"), var)?,
                eps: *eps,
            }),
        };
        layers.push(layer);
    }
    rd.finish()?;
    ModelGraph::new(manifest.name, manifest.input_shape, layers)
}

pub fn save_model(g: &ModelGraph, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(g)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelGraph> {
    decode_model(&fs::read(path)?)
}

pub fn encode_dataset(d: &LabeledDataset) -> Result<Vec<u8>> {
    let mut payload = PayloadWriter(Vec::new());
    let images = payload.push(d.images());
    let offset = payload.0.len();
    for l in d.labels() {
        payload.0.extend_from_slice(&l.to_le_bytes());
    }
    let manifest = DatasetManifest {
        class_count: d.class_count(),
        images,
        labels: BlobRef {
            shape: vec![d.len()],
            offset,
            len: d.len(),
        },
    };
    frame(DATASET_MAGIC, &manifest, payload.0)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<LabeledDataset> {
    let (manifest, payload): (DatasetManifest, _) = unframe(bytes, DATASET_MAGIC)?;
    let mut rd = PayloadReader::new(payload);
    let images = rd.tensor("images", &manifest.images)?;
    let labels = rd.u32s("labels", &manifest.labels)?;
    rd.finish()?;
    LabeledDataset::new(images, labels, manifest.class_count).map_err(|e| Error::Manifest(e.to_string()))
}

pub fn save_dataset(d: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_dataset(d)?)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    decode_dataset(&fs::read(path)?)
}
