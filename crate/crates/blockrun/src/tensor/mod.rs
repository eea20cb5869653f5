//! Minimal deterministic tensor engine.
//!
//! Row-major f32 storage with explicit shapes, the handful of forward
//! operators the task and policy networks need, hand-written backward passes
//! for the policy network, and an RMS-style optimizer. No autodiff graph.

mod grad;
mod io;
mod ops;
mod optim;

pub use grad::*;
pub use io::*;
pub use ops::*;
pub use optim::*;

use crate::error::{Error, Result};

/// N-dimensional array of f32 in row-major order (batch outermost).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {:?} needs {} values, got {}", shape, n, data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// He-normal init (std = sqrt(2 / fan_in)), used for conv weights.
    pub fn he_normal(shape: &[usize], fan_in: usize, rng: &mut crate::rng::SplitMix64) -> Self {
        let std = (2.0 / fan_in as f32).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.next_normal() * std).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// The (batch, channels, height, width) view of a rank-4 tensor.
    pub fn dim4(&self) -> Result<(usize, usize, usize, usize)> {
        if self.shape.len() != 4 {
            return Err(Error::shape(
                "Tensor::dim4",
                format!("expected rank 4, got shape {:?}", self.shape),
            ));
        }
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }

    #[inline]
    pub fn at4(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        let (_, ch, h, w) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        self.data[((n * ch + c) * h + y) * w + x]
    }

    #[inline]
    pub fn set4(&mut self, n: usize, c: usize, y: usize, x: usize, v: f32) {
        let (_, ch, h, w) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        self.data[((n * ch + c) * h + y) * w + x] = v;
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// Convolution parameters plus frozen weights.
///
/// Weight layout is (out channels, in channels, kernel h, kernel w); bias is
/// one value per output channel.
#[derive(Clone, Debug)]
pub struct ConvSpec {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub cin: usize,
    pub cout: usize,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl ConvSpec {
    pub fn new(
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
        cin: usize,
        cout: usize,
        weights: Tensor,
        bias: Tensor,
    ) -> Result<Self> {
        if stride < 1 {
            return Err(Error::Invalid("conv stride must be >= 1".into()));
        }
        if weights.shape() != [cout, cin, kh, kw] {
            return Err(Error::shape(
                "ConvSpec::new",
                format!(
                    "weights shape {:?}, expected {:?}",
                    weights.shape(),
                    [cout, cin, kh, kw]
                ),
            ));
        }
        if bias.shape() != [cout] {
            return Err(Error::shape(
                "ConvSpec::new",
                format!("bias shape {:?}, expected [{}]", bias.shape(), cout),
            ));
        }
        Ok(ConvSpec {
            kh,
            kw,
            stride,
            pad,
            cin,
            cout,
            weights,
            bias,
        })
    }

    /// Seeded He-init conv with zero bias.
    pub fn seeded(
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
        cin: usize,
        cout: usize,
        rng: &mut crate::rng::SplitMix64,
    ) -> Self {
        let weights = Tensor::he_normal(&[cout, cin, kh, kw], cin * kh * kw, rng);
        let bias = Tensor::zeros(&[cout]);
        ConvSpec::new(kh, kw, stride, pad, cin, cout, weights, bias).expect("consistent shapes")
    }

    pub fn apply(&self, input: &Tensor) -> Result<Tensor> {
        conv2d(input, &self.weights, &self.bias, self.stride, self.pad)
    }
}
