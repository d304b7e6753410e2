//! Integer tensors with a power-of-two scale and the shared rounding rule.

use serde::{Deserialize, Serialize};

use crate::error::TensorError;

/// Largest magnitude a stored element may have. Keeps every pairwise product
/// under 2^60 and keeps `i32::MIN` away from the MSB extractor.
pub const HEADROOM: i64 = 1 << 30;

/// Row-major integer tensor; element `q` stands for the real value
/// `q * 2^(-scale_exp)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantTensor {
    shape: Vec<usize>,
    data: Vec<i32>,
    scale_exp: i32,
}

impl QuantTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i32>, scale_exp: i32) -> Result<Self, TensorError> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "shape {shape:?} holds {len} elements, data has {}",
                data.len()
            )));
        }
        if let Some((index, &v)) = data
            .iter()
            .enumerate()
            .find(|(_, &v)| i64::from(v).abs() > HEADROOM)
        {
            return Err(TensorError::OutOfRange {
                index,
                value: i64::from(v),
            });
        }
        Ok(Self {
            shape,
            data,
            scale_exp,
        })
    }

    /// Builds from wide accumulators, rejecting anything outside the headroom.
    pub fn from_wide(shape: Vec<usize>, wide: &[i64], scale_exp: i32) -> Result<Self, TensorError> {
        let mut data = Vec::with_capacity(wide.len());
        for (index, &v) in wide.iter().enumerate() {
            if v.abs() > HEADROOM {
                return Err(TensorError::OutOfRange { index, value: v });
            }
            data.push(v as i32);
        }
        Self::new(shape, data, scale_exp)
    }

    pub fn zeros(shape: Vec<usize>, scale_exp: i32) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0; len],
            scale_exp,
        }
    }

    /// Quantizes real values by `round_half_away(x * 2^scale_exp)`.
    pub fn quantize(
        shape: Vec<usize>,
        values: &[f32],
        scale_exp: i32,
    ) -> Result<Self, TensorError> {
        Self::quantize_with(shape, values, scale_exp, Rounding::NearestHalfAway)
    }

    pub fn quantize_with(
        shape: Vec<usize>,
        values: &[f32],
        scale_exp: i32,
        rounding: Rounding,
    ) -> Result<Self, TensorError> {
        let factor = (2.0f64).powi(scale_exp);
        let wide: Vec<i64> = values
            .iter()
            .map(|&v| rounding.round_real(f64::from(v) * factor))
            .collect();
        Self::from_wide(shape, &wide, scale_exp)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn scale_exp(&self) -> i32 {
        self.scale_exp
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<i32> {
        self.data
    }

    pub fn to_real(&self) -> Vec<f64> {
        let f = (2.0f64).powi(-self.scale_exp);
        self.data.iter().map(|&q| f64::from(q) * f).collect()
    }

    pub fn reshaped(self, shape: Vec<usize>) -> Result<Self, TensorError> {
        Self::new(shape, self.data, self.scale_exp)
    }

    /// Moves every element to `scale_exp`, rounding half away from zero when
    /// bits are dropped.
    pub fn rescaled(&self, scale_exp: i32) -> Result<Self, TensorError> {
        self.rescaled_with(scale_exp, Rounding::NearestHalfAway)
    }

    pub fn rescaled_with(&self, scale_exp: i32, rounding: Rounding) -> Result<Self, TensorError> {
        let wide: Vec<i64> = self
            .data
            .iter()
            .map(|&q| rescale_with(i64::from(q), self.scale_exp, scale_exp, rounding))
            .collect();
        Self::from_wide(self.shape.clone(), &wide, scale_exp)
    }

    /// `(channels, height, width)`, treating a rank-2 tensor as one channel.
    pub fn chw(&self) -> Result<(usize, usize, usize), TensorError> {
        match *self.shape.as_slice() {
            [c, h, w] => Ok((c, h, w)),
            [h, w] => Ok((1, h, w)),
            _ => Err(TensorError::ShapeMismatch(format!(
                "expected a (c, h, w) map, got {:?}",
                self.shape
            ))),
        }
    }
}

/// How a value between two representable codes is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rounding {
    /// Nearest integer code, ties away from zero.
    #[default]
    NearestHalfAway,
    /// Mid-rise: the levels are the odd codes, two codes apart, so no value
    /// (not even 0) maps to code 0. Error is at most one code.
    MidRise,
}

impl Rounding {
    /// Rounds an already scaled real value to a code.
    pub fn round_real(self, x: f64) -> i64 {
        match self {
            Rounding::NearestHalfAway => x.round() as i64,
            Rounding::MidRise => 2 * (x / 2.0).floor() as i64 + 1,
        }
    }

    /// Rounds the rational `n / d` to a code. `d` must be positive.
    pub fn div(self, n: i64, d: i64) -> i64 {
        match self {
            Rounding::NearestHalfAway => div_round_half_away(n, d),
            Rounding::MidRise => 2 * n.div_euclid(2 * d) + 1,
        }
    }
}

/// `n / d` rounded half away from zero. `d` must be positive.
pub fn div_round_half_away(n: i64, d: i64) -> i64 {
    debug_assert!(d > 0);
    let q = (n.abs() + d / 2) / d;
    if n < 0 {
        -q
    } else {
        q
    }
}

/// Re-expresses `value` (at `from` fractional bits) at `to` fractional bits.
pub fn rescale(value: i64, from: i32, to: i32) -> i64 {
    rescale_with(value, from, to, Rounding::NearestHalfAway)
}

pub fn rescale_with(value: i64, from: i32, to: i32, rounding: Rounding) -> i64 {
    if rounding == Rounding::MidRise {
        return if to >= from {
            rounding.div(value << (to - from), 1)
        } else if from - to >= 62 {
            rounding.div(value.signum(), 2)
        } else {
            rounding.div(value, 1i64 << (from - to))
        };
    }
    if to >= from {
        value << (to - from)
    } else {
        let shift = from - to;
        if shift >= 63 {
            return 0;
        }
        div_round_half_away(value, 1i64 << shift)
    }
}
