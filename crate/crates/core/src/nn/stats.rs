use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Model;

/// Per-learnable-layer sizes and compute, indexed `1..=L` by the accessors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    weights: Vec<u64>,
    activations: Vec<u64>,
    macs: Vec<u64>,
    input_size: u64,
}

impl LayerStats {
    /// Builds stats from raw per-layer counts (all vectors must have equal length).
    pub fn from_counts(weights: Vec<u64>, activations: Vec<u64>, macs: Vec<u64>, input_size: u64) -> Result<Self> {
        if weights.is_empty() || weights.len() != activations.len() || weights.len() != macs.len() {
            return Err(Error::InvalidArgument("per-layer count vectors must be non-empty and equal length".into()));
        }
        Ok(Self { weights, activations, macs, input_size })
    }

    pub fn of(model: &Model) -> Self {
        let n = model.num_learnable();
        let mut weights = Vec::with_capacity(n);
        let mut activations = Vec::with_capacity(n);
        let mut macs = Vec::with_capacity(n);
        for l in 1..=n {
            let layer = model.learnable(l).expect("index in range");
            weights.push(layer.weights().map_or(0, |w| w.len() as u64));
            activations.push(model.activation_shape(l).expect("index in range").iter().product::<usize>() as u64);
            macs.push(layer.macs());
        }
        let input_size = model.input_shape().iter().product::<usize>() as u64;
        Self { weights, activations, macs, input_size }
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    fn idx(&self, l: usize) -> usize {
        assert!(l >= 1 && l <= self.weights.len(), "layer {l} out of range 1..={}", self.weights.len());
        l - 1
    }

    /// Parameter count `z_w(l)`.
    pub fn z_w(&self, l: usize) -> u64 {
        self.weights[self.idx(l)]
    }

    /// Output activation element count `z_x(l)`.
    pub fn z_x(&self, l: usize) -> u64 {
        self.activations[self.idx(l)]
    }

    /// MAC count `o(l)`.
    pub fn o(&self, l: usize) -> u64 {
        self.macs[self.idx(l)]
    }

    pub fn input_size(&self) -> u64 {
        self.input_size
    }

    pub fn total_macs(&self) -> u64 {
        self.macs.iter().sum()
    }

    /// Device-side and server-side MACs when the device runs layers `1..=p`.
    pub fn segment_macs(&self, p: usize) -> Result<(u64, u64)> {
        let n = self.num_layers();
        if p == 0 || p > n {
            return Err(Error::OutOfRange { index: p, max: n });
        }
        let device: u64 = self.macs[..p].iter().sum();
        let server: u64 = self.macs[p..].iter().sum();
        Ok((device, server))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Dense, Layer, Tensor};

    fn stats(macs: Vec<u64>) -> LayerStats {
        let n = macs.len();
        LayerStats::from_counts(vec![1; n], vec![1; n], macs, 1).unwrap()
    }

    #[test]
    fn segment_sums() {
        let s = stats(vec![10, 20, 30]);
        assert_eq!(s.segment_macs(1).unwrap(), (10, 50));
        assert_eq!(s.segment_macs(2).unwrap(), (30, 30));
        assert_eq!(s.segment_macs(3).unwrap(), (60, 0));
        assert!(s.segment_macs(0).is_err());
        assert!(s.segment_macs(4).is_err());
    }

    #[test]
    fn dense_counts() {
        let w = Tensor::new(vec![784, 256], vec![0.0; 784 * 256]).unwrap();
        let m = Model::new("m", vec![784], 256, vec![Layer::Dense(Dense::new(784, 256, w).unwrap())]).unwrap();
        let s = LayerStats::of(&m);
        assert_eq!(s.o(1), 200_704);
        assert_eq!(s.z_w(1), 200_704);
        assert_eq!(s.z_x(1), 256);

        let w = Tensor::new(vec![2, 2], vec![1.0; 4]).unwrap();
        let m = Model::new("m", vec![2], 2, vec![Layer::Dense(Dense::new(2, 2, w).unwrap())]).unwrap();
        let s = LayerStats::of(&m);
        assert_eq!((s.z_w(1), s.o(1)), (4, 4));
    }
}
