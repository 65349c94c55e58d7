use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Fully connected layer computing `y = x W` with `W` stored `in_features x out_features`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
    pub weights: Tensor,
}

/// Direct 2-D convolution over a `[C_in, U, V]` input.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub input_hw: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    /// `[C_out, C_in, F1, F2]`
    pub weights: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    Relu,
    Flatten,
}

impl Dense {
    pub fn new(in_features: usize, out_features: usize, weights: Tensor) -> Result<Self> {
        if weights.shape() != [in_features, out_features] {
            return Err(Error::ShapeMismatch(format!(
                "dense weight shape {:?}, expected [{in_features}, {out_features}]",
                weights.shape()
            )));
        }
        Ok(Self { in_features, out_features, weights })
    }

    fn apply(&self, x: &Tensor, w: &[f64]) -> Result<Tensor> {
        if x.shape() != [self.in_features] {
            return Err(Error::ShapeMismatch(format!(
                "dense layer expects [{}], got {:?}",
                self.in_features,
                x.shape()
            )));
        }
        let g = self.out_features;
        let mut y = vec![0.0; g];
        for (i, &xi) in x.data().iter().enumerate() {
            // 0 * w contributes nothing for finite weights.
            if xi == 0.0 {
                continue;
            }
            let row = &w[i * g..(i + 1) * g];
            for (yo, &wv) in y.iter_mut().zip(row) {
                *yo += xi * wv;
            }
        }
        Ok(Tensor::from_parts(vec![g], y))
    }
}

impl Conv2d {
    pub fn output_hw(&self) -> (usize, usize) {
        let (u, v) = self.input_hw;
        let (f1, f2) = self.kernel;
        (
            (u + 2 * self.padding - f1) / self.stride + 1,
            (v + 2 * self.padding - f2) / self.stride + 1,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let (f1, f2) = self.kernel;
        let expected = [self.out_channels, self.in_channels, f1, f2];
        if self.weights.shape() != expected {
            return Err(Error::ShapeMismatch(format!(
                "conv weight shape {:?}, expected {expected:?}",
                self.weights.shape()
            )));
        }
        let (u, v) = self.input_hw;
        if self.stride == 0 || u + 2 * self.padding < f1 || v + 2 * self.padding < f2 {
            return Err(Error::ShapeMismatch("conv kernel does not fit its input".into()));
        }
        Ok(())
    }

    fn apply(&self, x: &Tensor, w: &[f64]) -> Result<Tensor> {
        let (u, v) = self.input_hw;
        if x.shape() != [self.in_channels, u, v] {
            return Err(Error::ShapeMismatch(format!(
                "conv layer expects [{}, {u}, {v}], got {:?}",
                self.in_channels,
                x.shape()
            )));
        }
        let (f1, f2) = self.kernel;
        let (ou, ov) = self.output_hw();
        let xs = x.data();
        let pad = self.padding as isize;
        let mut out = vec![0.0; self.out_channels * ou * ov];
        for co in 0..self.out_channels {
            for oi in 0..ou {
                for oj in 0..ov {
                    let mut acc = 0.0;
                    for ci in 0..self.in_channels {
                        for ki in 0..f1 {
                            let ii = (oi * self.stride + ki) as isize - pad;
                            if ii < 0 || ii >= u as isize {
                                continue;
                            }
                            for kj in 0..f2 {
                                let jj = (oj * self.stride + kj) as isize - pad;
                                if jj < 0 || jj >= v as isize {
                                    continue;
                                }
                                let wv = w[((co * self.in_channels + ci) * f1 + ki) * f2 + kj];
                                acc += wv * xs[(ci * u + ii as usize) * v + jj as usize];
                            }
                        }
                    }
                    out[(co * ou + oi) * ov + oj] = acc;
                }
            }
        }
        Ok(Tensor::from_parts(vec![self.out_channels, ou, ov], out))
    }
}

impl Layer {
    pub fn is_learnable(&self) -> bool {
        matches!(self, Layer::Dense(_) | Layer::Conv2d(_))
    }

    pub fn weights(&self) -> Option<&Tensor> {
        match self {
            Layer::Dense(d) => Some(&d.weights),
            Layer::Conv2d(c) => Some(&c.weights),
            _ => None,
        }
    }

    pub(crate) fn weights_mut(&mut self) -> Option<&mut Tensor> {
        match self {
            Layer::Dense(d) => Some(&mut d.weights),
            Layer::Conv2d(c) => Some(&mut c.weights),
            _ => None,
        }
    }

    /// Multiply-accumulate count: `D*G` for dense, `C_in*C_out*F1*F2*U*V` for conv.
    pub fn macs(&self) -> u64 {
        match self {
            Layer::Dense(d) => (d.in_features * d.out_features) as u64,
            Layer::Conv2d(c) => {
                let (f1, f2) = c.kernel;
                let (u, v) = c.input_hw;
                (c.in_channels * c.out_channels * f1 * f2 * u * v) as u64
            }
            _ => 0,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense(d) => {
                if input != [d.in_features] {
                    return Err(Error::ShapeMismatch(format!(
                        "dense expects [{}], previous layer yields {input:?}",
                        d.in_features
                    )));
                }
                Ok(vec![d.out_features])
            }
            Layer::Conv2d(c) => {
                let (u, v) = c.input_hw;
                if input != [c.in_channels, u, v] {
                    return Err(Error::ShapeMismatch(format!(
                        "conv expects [{}, {u}, {v}], previous layer yields {input:?}",
                        c.in_channels
                    )));
                }
                let (ou, ov) = c.output_hw();
                Ok(vec![c.out_channels, ou, ov])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Applies the layer; `weights` replaces the stored weights when given.
    pub fn apply(&self, x: &Tensor, weights: Option<&[f64]>) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => d.apply(x, weights.unwrap_or(d.weights.data())),
            Layer::Conv2d(c) => c.apply(x, weights.unwrap_or(c.weights.data())),
            Layer::Relu => {
                let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
                Ok(Tensor::from_parts(x.shape().to_vec(), data))
            }
            Layer::Flatten => Ok(Tensor::from_parts(vec![x.len()], x.data().to_vec())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_macs_and_apply() {
        let w = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let d = Layer::Dense(Dense::new(2, 3, w).unwrap());
        assert_eq!(d.macs(), 6);
        let y = d.apply(&Tensor::vector(vec![1.0, -1.0]).unwrap(), None).unwrap();
        assert_eq!(y.data(), &[-3.0, -3.0, -3.0]);
    }

    #[test]
    fn conv_macs_follow_input_spatial_size() {
        let c = Conv2d {
            in_channels: 3,
            out_channels: 16,
            kernel: (3, 3),
            input_hw: (32, 32),
            stride: 1,
            padding: 1,
            weights: Tensor::new(vec![16, 3, 3, 3], vec![0.0; 432]).unwrap(),
        };
        c.validate().unwrap();
        assert_eq!(Layer::Conv2d(c).macs(), 442_368);
    }

    #[test]
    fn conv_matches_hand_computed_valid_correlation() {
        // 1x3x3 input, one 2x2 filter of ones, stride 1, no padding.
        let c = Conv2d {
            in_channels: 1,
            out_channels: 1,
            kernel: (2, 2),
            input_hw: (3, 3),
            stride: 1,
            padding: 0,
            weights: Tensor::new(vec![1, 1, 2, 2], vec![1.0; 4]).unwrap(),
        };
        let x = Tensor::new(vec![1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let y = Layer::Conv2d(c).apply(&x, None).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn relu_zeroes_negatives() {
        let x = Tensor::vector(vec![-1.0, 0.0, 2.5]).unwrap();
        assert_eq!(Layer::Relu.apply(&x, None).unwrap().data(), &[0.0, 0.0, 2.5]);
    }
}
