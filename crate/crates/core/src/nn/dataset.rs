use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Labeled samples, stored widened to f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    sample_shape: Vec<usize>,
    num_classes: usize,
    images: Vec<f64>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(sample_shape: Vec<usize>, num_classes: usize, images: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        let per: usize = sample_shape.iter().product();
        if per == 0 || images.len() != per * labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} image values for {} samples of shape {sample_shape:?}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&y| y as usize >= num_classes) {
            return Err(Error::InvalidArgument(format!("label {} at sample {i} exceeds class count", labels[i])));
        }
        if images.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset image values".into()));
        }
        Ok(Self { sample_shape, num_classes, images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> Tensor {
        let per: usize = self.sample_shape.iter().product();
        Tensor::from_parts(self.sample_shape.clone(), self.images[i * per..(i + 1) * per].to_vec())
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn samples(&self) -> impl Iterator<Item = (Tensor, usize)> + '_ {
        (0..self.len()).map(|i| (self.sample(i), self.label(i)))
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let per: usize = self.sample_shape.iter().product();
        let mut images = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(&self.images[i * per..(i + 1) * per]);
            labels.push(self.labels[i]);
        }
        Dataset { sample_shape: self.sample_shape.clone(), num_classes: self.num_classes, images, labels }
    }

    /// First `n` samples of a seeded permutation (all samples if `n >= len`).
    pub fn seeded_subset(&self, n: usize, seed: u64) -> Dataset {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(n.min(self.len()));
        self.subset(&idx)
    }
}
