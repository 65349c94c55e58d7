//! NNWF model directories and the companion dataset format.
//!
//! A model directory holds `manifest.json` plus one raw little-endian float32
//! `.bin` file per weight tensor (row-major, no header). A dataset directory
//! holds `dataset.json`, `images.bin` (float32, sample-major) and `labels.bin`
//! (one byte per sample).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Dataset, Dense, Layer, Model, RecordedPredictions, Tensor};

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    #[serde(default)]
    format: Option<String>,
    #[serde(default)]
    version: Option<u32>,
    model_id: String,
    input_shape: Vec<usize>,
    num_classes: usize,
    layers: Vec<serde_json::Value>,
    #[serde(default)]
    recorded: Option<RecordedPredictions>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum LayerEntry {
    Dense {
        in_features: usize,
        out_features: usize,
        weights: String,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        input_hw: [usize; 2],
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        weights: String,
    },
    Relu,
    Flatten,
}

fn one() -> usize {
    1
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    count: usize,
    sample_shape: Vec<usize>,
    num_classes: usize,
    #[serde(default)]
    normalization: Option<String>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

fn read_f32(path: &Path) -> Result<Vec<f64>> {
    let bytes = read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::ShapeMismatch(format!("{} is not a whole number of float32 values", path.display())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
}

fn load_tensor(dir: &Path, file: &str, shape: Vec<usize>, layer: usize) -> Result<Tensor> {
    let data = read_f32(&dir.join(file)).map_err(|e| Error::layer(layer, e.to_string()))?;
    Tensor::new(shape, data).map_err(|e| Error::layer(layer, e.to_string()))
}

/// Loads an NNWF model directory.
pub fn load_model(dir: impl AsRef<Path>) -> Result<Model> {
    let dir = dir.as_ref();
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (i, raw) in manifest.layers.into_iter().enumerate() {
        let idx = i + 1;
        let entry: LayerEntry = serde_json::from_value(raw)
            .map_err(|e| Error::layer(idx, format!("unsupported or malformed layer entry: {e}")))?;
        let layer = match entry {
            LayerEntry::Dense { in_features, out_features, weights } => {
                let w = load_tensor(dir, &weights, vec![in_features, out_features], idx)?;
                Layer::Dense(Dense::new(in_features, out_features, w).map_err(|e| Error::layer(idx, e.to_string()))?)
            }
            LayerEntry::Conv2d { in_channels, out_channels, kernel, input_hw, stride, padding, weights } => {
                let w = load_tensor(dir, &weights, vec![out_channels, in_channels, kernel[0], kernel[1]], idx)?;
                Layer::Conv2d(Conv2d {
                    in_channels,
                    out_channels,
                    kernel: (kernel[0], kernel[1]),
                    input_hw: (input_hw[0], input_hw[1]),
                    stride,
                    padding,
                    weights: w,
                })
            }
            LayerEntry::Relu => Layer::Relu,
            LayerEntry::Flatten => Layer::Flatten,
        };
        layers.push(layer);
    }
    let model = Model::new(manifest.model_id, manifest.input_shape, manifest.num_classes, layers)?;
    Ok(match manifest.recorded {
        Some(r) => model.with_recorded(r),
        None => model,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn f32_bytes(data: &[f64]) -> Vec<u8> {
    data.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

/// Writes a model as NNWF. Weights are narrowed to float32.
pub fn save_model(model: &Model, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    let mut learnable = 0;
    for layer in model.layers() {
        let entry = match layer {
            Layer::Dense(d) => {
                learnable += 1;
                let name = format!("layer{learnable}.bin");
                write(&dir.join(&name), &f32_bytes(d.weights.data()))?;
                LayerEntry::Dense { in_features: d.in_features, out_features: d.out_features, weights: name }
            }
            Layer::Conv2d(c) => {
                learnable += 1;
                let name = format!("layer{learnable}.bin");
                write(&dir.join(&name), &f32_bytes(c.weights.data()))?;
                LayerEntry::Conv2d {
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    kernel: [c.kernel.0, c.kernel.1],
                    input_hw: [c.input_hw.0, c.input_hw.1],
                    stride: c.stride,
                    padding: c.padding,
                    weights: name,
                }
            }
            Layer::Relu => LayerEntry::Relu,
            Layer::Flatten => LayerEntry::Flatten,
        };
        entries.push(serde_json::to_value(entry).expect("layer entries serialize"));
    }
    let manifest = Manifest {
        format: Some("nnwf".into()),
        version: Some(1),
        model_id: model.id().to_string(),
        input_shape: model.input_shape().to_vec(),
        num_classes: model.num_classes(),
        layers: entries,
        recorded: model.recorded().cloned(),
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    write(&path, &json)
}

/// Loads one dataset directory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found")));
    }
    let meta: DatasetMeta = read_json(&dir.join("dataset.json"))?;
    let images = read_f32(&dir.join("images.bin"))?;
    let labels = read(&dir.join("labels.bin"))?;
    if labels.len() != meta.count {
        return Err(Error::ShapeMismatch(format!(
            "{}: dataset.json declares {} samples, labels.bin holds {}",
            dir.display(),
            meta.count,
            labels.len()
        )));
    }
    Dataset::new(meta.sample_shape, meta.num_classes, images, labels)
}

/// Writes one dataset directory.
pub fn save_dataset(data: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut images = Vec::new();
    for (x, _) in data.samples() {
        images.extend(f32_bytes(x.data()));
    }
    write(&dir.join("images.bin"), &images)?;
    write(&dir.join("labels.bin"), data.labels())?;
    let meta = DatasetMeta {
        count: data.len(),
        sample_shape: data.sample_shape().to_vec(),
        num_classes: data.num_classes(),
        normalization: None,
    };
    let path = dir.join("dataset.json");
    write(&path, &serde_json::to_vec_pretty(&meta).map_err(|e| Error::json(&path, e))?)
}

/// Train / validation / test splits stored as subdirectories of one root.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub root: PathBuf,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl DatasetBundle {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        if !root.is_dir() {
            return Err(Error::io(root, std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root not found")));
        }
        Ok(Self {
            root: root.to_path_buf(),
            train: load_dataset(root.join("train"))?,
            val: load_dataset(root.join("val"))?,
            test: load_dataset(root.join("test"))?,
        })
    }
}
