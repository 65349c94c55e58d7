use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Layer, Tensor};

/// Predictions recorded by the exporter on its test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedPredictions {
    pub split: String,
    pub test_accuracy: f64,
    pub predictions: Vec<u8>,
}

/// Replacement weights for learnable layers, keyed by 1-based layer index.
pub type WeightOverrides<'a> = [(usize, &'a [f64])];

/// A feed-forward classifier.
///
/// Learnable layers are numbered `1..=L` in execution order. Each learnable
/// layer owns the non-learnable layers that follow it (and layer 1 also owns
/// any leading ones), so a partition never separates a dense layer from its
/// activation function.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    id: String,
    input_shape: Vec<usize>,
    num_classes: usize,
    layers: Vec<Layer>,
    blocks: Vec<Range<usize>>,
    block_shapes: Vec<Vec<usize>>,
    recorded: Option<RecordedPredictions>,
}

impl Model {
    pub fn new(
        id: impl Into<String>,
        input_shape: Vec<usize>,
        num_classes: usize,
        layers: Vec<Layer>,
    ) -> Result<Self> {
        let learnable: Vec<usize> =
            layers.iter().enumerate().filter(|(_, l)| l.is_learnable()).map(|(i, _)| i).collect();
        if learnable.is_empty() {
            return Err(Error::InvalidArgument("model has no learnable layers".into()));
        }
        let mut blocks = Vec::with_capacity(learnable.len());
        for (k, _) in learnable.iter().enumerate() {
            let start = if k == 0 { 0 } else { learnable[k] };
            let end = learnable.get(k + 1).copied().unwrap_or(layers.len());
            blocks.push(start..end);
        }

        let mut shape = input_shape.clone();
        let mut block_shapes = Vec::with_capacity(blocks.len());
        for (b, range) in blocks.iter().enumerate() {
            for i in range.clone() {
                if let Layer::Conv2d(c) = &layers[i] {
                    c.validate().map_err(|e| Error::layer(b + 1, e.to_string()))?;
                }
                shape = layers[i].output_shape(&shape).map_err(|e| Error::layer(b + 1, e.to_string()))?;
            }
            block_shapes.push(shape.clone());
        }
        if shape.iter().product::<usize>() != num_classes {
            return Err(Error::ShapeMismatch(format!(
                "model output {shape:?} does not match {num_classes} classes"
            )));
        }
        Ok(Self {
            id: id.into(),
            input_shape,
            num_classes,
            layers,
            blocks,
            block_shapes,
            recorded: None,
        })
    }

    pub fn with_recorded(mut self, recorded: RecordedPredictions) -> Self {
        self.recorded = Some(recorded);
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn recorded(&self) -> Option<&RecordedPredictions> {
        self.recorded.as_ref()
    }

    /// Number of learnable layers `L`.
    pub fn num_learnable(&self) -> usize {
        self.blocks.len()
    }

    fn check_layer(&self, l: usize) -> Result<()> {
        if l == 0 || l > self.blocks.len() {
            return Err(Error::OutOfRange { index: l, max: self.blocks.len() });
        }
        Ok(())
    }

    /// The learnable layer that heads block `l`.
    pub fn learnable(&self, l: usize) -> Result<&Layer> {
        self.check_layer(l)?;
        let range = &self.blocks[l - 1];
        Ok(range.clone().map(|i| &self.layers[i]).find(|layer| layer.is_learnable()).expect("block has a learnable layer"))
    }

    pub fn weights(&self, l: usize) -> Result<&Tensor> {
        Ok(self.learnable(l)?.weights().expect("learnable layers carry weights"))
    }

    /// Copy of the model with layer `l`'s weights replaced.
    pub fn with_weights(&self, l: usize, weights: Tensor) -> Result<Model> {
        self.check_layer(l)?;
        let current = self.weights(l)?;
        if current.shape() != weights.shape() {
            return Err(Error::layer(l, format!("replacement weights have shape {:?}", weights.shape())));
        }
        let mut out = self.clone();
        let range = out.blocks[l - 1].clone();
        for i in range {
            if let Some(w) = out.layers[i].weights_mut() {
                *w = weights;
                break;
            }
        }
        Ok(out)
    }

    /// Shape of the activation leaving block `l` (after its trailing non-learnable layers).
    pub fn activation_shape(&self, l: usize) -> Result<&[usize]> {
        self.check_layer(l)?;
        Ok(&self.block_shapes[l - 1])
    }

    /// Runs learnable layers `first..=last` (1-based) on `x`, which must be the
    /// input to layer `first`. `overrides` substitute weights for chosen layers.
    pub fn run_span(
        &self,
        x: &Tensor,
        first: usize,
        last: usize,
        overrides: &WeightOverrides<'_>,
    ) -> Result<Tensor> {
        if first > last {
            return Ok(x.clone());
        }
        self.check_layer(first)?;
        self.check_layer(last)?;
        let expected: &[usize] =
            if first == 1 { &self.input_shape } else { &self.block_shapes[first - 2] };
        if x.shape() != expected {
            return Err(Error::ShapeMismatch(format!(
                "layer {first} expects input {expected:?}, got {:?}",
                x.shape()
            )));
        }
        let mut h = x.clone();
        for l in first..=last {
            let patch = overrides.iter().find(|(k, _)| *k == l).map(|(_, w)| *w);
            for i in self.blocks[l - 1].clone() {
                let layer = &self.layers[i];
                let w = if layer.is_learnable() { patch } else { None };
                h = layer.apply(&h, w).map_err(|e| Error::layer(l, e.to_string()))?;
            }
        }
        Ok(h)
    }

    /// End-to-end logits.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.run_span(x, 1, self.num_learnable(), &[])
    }

    /// Activation after learnable layer `p`, including its trailing non-learnable layers.
    pub fn forward_to(&self, x: &Tensor, p: usize) -> Result<Tensor> {
        self.check_layer(p)?;
        self.run_span(x, 1, p, &[])
    }

    /// Runs layers `p+1..=L` on the activation leaving layer `p`; `p = 0` runs the whole model.
    pub fn forward_from(&self, activation: &Tensor, p: usize) -> Result<Tensor> {
        if p > self.num_learnable() {
            return Err(Error::OutOfRange { index: p, max: self.num_learnable() });
        }
        self.run_span(activation, p + 1, self.num_learnable(), &[])
    }

    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(self.forward(x)?.argmax())
    }
}
