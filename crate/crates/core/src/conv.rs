//! Layer-level integer convolution in exact, zero-skip and MSB-approximate
//! modes, plus the pooling, activation and dense layers around it.
//!
//! Convolutions are valid (no padding) with stride 1. Every output element
//! sees its whole receptive field, all input channels included, as one
//! window with a single dominant magnitude.

use std::fmt;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::TensorError;
use crate::msb::{msb_code, prune_accumulate, PruneThreshold};
use crate::tensor::{rescale, QuantTensor, Rounding};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConvMode {
    Exact,
    ZeroSkip,
    Approx(PruneThreshold),
}

impl ConvMode {
    pub fn name(&self) -> &'static str {
        match self {
            ConvMode::Exact => "exact",
            ConvMode::ZeroSkip => "zeroskip",
            ConvMode::Approx(_) => "approx",
        }
    }

    pub fn threshold(&self) -> Option<PruneThreshold> {
        match self {
            ConvMode::Approx(t) => Some(*t),
            _ => None,
        }
    }

    /// `exact`, `zeroskip`, or the threshold label for approximate runs.
    pub fn label(&self) -> String {
        match self {
            ConvMode::Approx(t) => t.label(),
            other => other.name().to_string(),
        }
    }
}

impl fmt::Display for ConvMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConvMode::Approx(t) => write!(f, "approx {t}"),
            other => f.write_str(other.name()),
        }
    }
}

/// Multiplication tallies for one layer (or a sum of layers).
///
/// `exact_total` counts every product in the layer's definition,
/// `nonzero_total` those with both operands nonzero and `performed` the
/// multiplications actually executed. Bias additions are never counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacCounters {
    pub exact_total: u64,
    pub nonzero_total: u64,
    pub performed: u64,
}

impl Add for MacCounters {
    type Output = MacCounters;

    fn add(self, rhs: MacCounters) -> MacCounters {
        MacCounters {
            exact_total: self.exact_total + rhs.exact_total,
            nonzero_total: self.nonzero_total + rhs.nonzero_total,
            performed: self.performed + rhs.performed,
        }
    }
}

impl AddAssign for MacCounters {
    fn add_assign(&mut self, rhs: MacCounters) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for MacCounters {
    fn sum<I: Iterator<Item = MacCounters>>(iter: I) -> Self {
        iter.fold(MacCounters::default(), Add::add)
    }
}

/// Valid, stride-1 convolution layer. Weights are `(out, in, kh, kw)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerSpec {
    in_channels: usize,
    out_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
    weights: QuantTensor,
    bias: QuantTensor,
    // MSB codes of the weights, fixed once the layer is built
    weight_codes: Vec<i16>,
}

impl ConvLayerSpec {
    pub fn new(weights: QuantTensor, bias: QuantTensor) -> Result<Self, TensorError> {
        let [out_channels, in_channels, kernel_h, kernel_w] = *weights.shape() else {
            return Err(TensorError::ShapeMismatch(format!(
                "conv weights must be (out, in, kh, kw), got {:?}",
                weights.shape()
            )));
        };
        if bias.shape() != [out_channels] {
            return Err(TensorError::ShapeMismatch(format!(
                "bias shape {:?} does not match {out_channels} output channels",
                bias.shape()
            )));
        }
        if kernel_h == 0 || kernel_w == 0 || in_channels == 0 {
            return Err(TensorError::ShapeMismatch("empty kernel".into()));
        }
        let weight_codes = weights.data().iter().map(|&w| msb_code(w)).collect();
        Ok(Self {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            weights,
            bias,
            weight_codes,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel_h(&self) -> usize {
        self.kernel_h
    }

    pub fn kernel_w(&self) -> usize {
        self.kernel_w
    }

    pub fn weights(&self) -> &QuantTensor {
        &self.weights
    }

    pub fn bias(&self) -> &QuantTensor {
        &self.bias
    }

    /// Products per output element.
    pub fn taps(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn output_dims(&self, in_h: usize, in_w: usize) -> (usize, usize) {
        (in_h + 1 - self.kernel_h, in_w + 1 - self.kernel_w)
    }
}

/// Convolves `input` with `layer`; output is `(out, oh, ow)` at scale
/// `input.scale + weights.scale`.
pub fn conv2d(
    input: &QuantTensor,
    layer: &ConvLayerSpec,
    mode: ConvMode,
) -> Result<(QuantTensor, MacCounters), TensorError> {
    conv2d_impl(input, layer, mode, None)
}

/// Like [`conv2d`], also returning which products were multiplied for each
/// output element. Masks are ordered `(out, oy, ox)`; each mask follows the
/// `(channel, ky, kx)` tap order.
pub fn conv2d_with_masks(
    input: &QuantTensor,
    layer: &ConvLayerSpec,
    mode: ConvMode,
) -> Result<(QuantTensor, MacCounters, Vec<Vec<bool>>), TensorError> {
    let mut masks = Vec::new();
    let (out, counters) = conv2d_impl(input, layer, mode, Some(&mut masks))?;
    Ok((out, counters, masks))
}

fn conv2d_impl(
    input: &QuantTensor,
    layer: &ConvLayerSpec,
    mode: ConvMode,
    mut masks: Option<&mut Vec<Vec<bool>>>,
) -> Result<(QuantTensor, MacCounters), TensorError> {
    let (c, h, w) = input.chw()?;
    if c != layer.in_channels {
        return Err(TensorError::ShapeMismatch(format!(
            "input has {c} channels, layer expects {}",
            layer.in_channels
        )));
    }
    if h < layer.kernel_h || w < layer.kernel_w {
        return Err(TensorError::ShapeMismatch(format!(
            "input {h}x{w} smaller than kernel {}x{}",
            layer.kernel_h, layer.kernel_w
        )));
    }
    let (kh, kw) = (layer.kernel_h, layer.kernel_w);
    let (oh, ow) = layer.output_dims(h, w);
    let taps = layer.taps();
    let positions = oh * ow;
    let x = input.data();

    // im2col: one contiguous receptive field per output position
    let mut cols = vec![0i32; positions * taps];
    for oy in 0..oh {
        for ox in 0..ow {
            let patch = &mut cols[(oy * ow + ox) * taps..][..taps];
            let mut k = 0;
            for ci in 0..c {
                for ky in 0..kh {
                    let row = &x[(ci * h + oy + ky) * w + ox..][..kw];
                    patch[k..k + kw].copy_from_slice(row);
                    k += kw;
                }
            }
        }
    }
    let col_codes: Vec<i16> = match mode {
        ConvMode::Approx(_) => cols.iter().map(|&v| msb_code(v)).collect(),
        _ => Vec::new(),
    };

    let acc_scale = input.scale_exp() + layer.weights.scale_exp();
    let bias: Vec<i64> = layer
        .bias
        .data()
        .iter()
        .map(|&b| rescale(i64::from(b), layer.bias.scale_exp(), acc_scale))
        .collect();

    let wdata = layer.weights.data();
    let mut out = vec![0i64; layer.out_channels * positions];
    let mut counters = MacCounters::default();
    let mut mask_buf = vec![false; taps];

    for o in 0..layer.out_channels {
        let wrow = &wdata[o * taps..][..taps];
        let wcodes = &layer.weight_codes[o * taps..][..taps];
        for p in 0..positions {
            let patch = &cols[p * taps..][..taps];
            let (sum, nonzero, performed) = match mode {
                ConvMode::Exact => {
                    let mut sum = 0i64;
                    let mut nz = 0u32;
                    for (&a, &b) in patch.iter().zip(wrow) {
                        sum += i64::from(a) * i64::from(b);
                        nz += u32::from(a != 0 && b != 0);
                    }
                    mask_buf.fill(true);
                    (sum, nz, taps as u32)
                }
                ConvMode::ZeroSkip => {
                    let mut sum = 0i64;
                    let mut nz = 0u32;
                    for (i, (&a, &b)) in patch.iter().zip(wrow).enumerate() {
                        let live = a != 0 && b != 0;
                        if live {
                            sum += i64::from(a) * i64::from(b);
                            nz += 1;
                        }
                        mask_buf[i] = live;
                    }
                    (sum, nz, nz)
                }
                ConvMode::Approx(t) => {
                    let codes = &col_codes[p * taps..][..taps];
                    let kept = masks.is_some().then_some(mask_buf.as_mut_slice());
                    let r = prune_accumulate(patch, wrow, codes, wcodes, t.t_int(), kept);
                    (r.sum, r.nonzero, r.performed)
                }
            };
            let value = sum + bias[o];
            if i32::try_from(value).is_err() {
                return Err(TensorError::AccumulatorOverflow { value });
            }
            out[o * positions + p] = value;
            counters.exact_total += taps as u64;
            counters.nonzero_total += u64::from(nonzero);
            counters.performed += u64::from(performed);
            if let Some(m) = masks.as_deref_mut() {
                m.push(mask_buf.clone());
            }
        }
    }

    let out = QuantTensor::from_wide(vec![layer.out_channels, oh, ow], &out, acc_scale)?;
    Ok((out, counters))
}

/// 2x2 average pooling with stride 2; each mean is rounded half away from
/// zero. Scale is unchanged.
pub fn avg_pool_2x2(input: &QuantTensor) -> Result<QuantTensor, TensorError> {
    avg_pool_2x2_with(input, Rounding::NearestHalfAway)
}

/// [`avg_pool_2x2`] with an explicit rounding of the window mean.
pub fn avg_pool_2x2_with(
    input: &QuantTensor,
    rounding: Rounding,
) -> Result<QuantTensor, TensorError> {
    let (c, h, w) = input.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::OddDimensions {
            height: h,
            width: w,
        });
    }
    let (ph, pw) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * ph * pw);
    for ci in 0..c {
        let plane = &x[ci * h * w..][..h * w];
        for py in 0..ph {
            for px in 0..pw {
                let (y, xx) = (2 * py, 2 * px);
                let s = i64::from(plane[y * w + xx])
                    + i64::from(plane[y * w + xx + 1])
                    + i64::from(plane[(y + 1) * w + xx])
                    + i64::from(plane[(y + 1) * w + xx + 1]);
                out.push(rounding.div(s, 4));
            }
        }
    }
    let shape = if input.shape().len() == 2 {
        vec![ph, pw]
    } else {
        vec![c, ph, pw]
    };
    QuantTensor::from_wide(shape, &out, input.scale_exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(format!(
                "unknown activation {other:?} (expected relu or tanh)"
            )),
        }
    }
}

/// Element-wise activation.
///
/// ReLU keeps the input scale and ignores `out_scale_exp`. Tanh evaluates the
/// real-valued function on the dequantized input and requantizes at
/// `out_scale_exp`, so outputs are bounded by `2^out_scale_exp`.
pub fn apply_activation(
    input: &QuantTensor,
    kind: Activation,
    out_scale_exp: i32,
) -> Result<QuantTensor, TensorError> {
    apply_activation_with(input, kind, out_scale_exp, Rounding::NearestHalfAway)
}

/// [`apply_activation`] with an explicit rounding for the tanh requantization.
pub fn apply_activation_with(
    input: &QuantTensor,
    kind: Activation,
    out_scale_exp: i32,
    rounding: Rounding,
) -> Result<QuantTensor, TensorError> {
    match kind {
        Activation::Relu => {
            let data = input.data().iter().map(|&v| v.max(0)).collect();
            QuantTensor::new(input.shape().to_vec(), data, input.scale_exp())
        }
        Activation::Tanh => {
            let in_step = (2.0f64).powi(-input.scale_exp());
            let out_factor = (2.0f64).powi(out_scale_exp);
            let wide: Vec<i64> = input
                .data()
                .iter()
                .map(|&v| rounding.round_real((f64::from(v) * in_step).tanh() * out_factor))
                .collect();
            QuantTensor::from_wide(input.shape().to_vec(), &wide, out_scale_exp)
        }
    }
}

/// Exact dense layer: `weights (out, in) * input + bias`, accumulated in 64
/// bits, returned at scale `input.scale + weights.scale`. Callers requantize.
pub fn fully_connected(
    input: &QuantTensor,
    weights: &QuantTensor,
    bias: &QuantTensor,
) -> Result<QuantTensor, TensorError> {
    let [rows, cols] = *weights.shape() else {
        return Err(TensorError::ShapeMismatch(format!(
            "dense weights must be (out, in), got {:?}",
            weights.shape()
        )));
    };
    if input.len() != cols {
        return Err(TensorError::ShapeMismatch(format!(
            "input length {} != weight columns {cols}",
            input.len()
        )));
    }
    if bias.shape() != [rows] {
        return Err(TensorError::ShapeMismatch(format!(
            "bias shape {:?} != [{rows}]",
            bias.shape()
        )));
    }
    let acc_scale = input.scale_exp() + weights.scale_exp();
    let x = input.data();
    let out: Vec<i64> = weights
        .data()
        .chunks_exact(cols)
        .zip(bias.data())
        .map(|(row, &b)| {
            let dot: i64 = row
                .iter()
                .zip(x)
                .map(|(&w, &v)| i64::from(w) * i64::from(v))
                .sum();
            dot + rescale(i64::from(b), bias.scale_exp(), acc_scale)
        })
        .collect();
    QuantTensor::from_wide(vec![rows], &out, acc_scale)
}

/// Fraction of elements that are exactly zero (0 for an empty tensor).
pub fn sparsity_of(input: &QuantTensor) -> f64 {
    if input.is_empty() {
        return 0.0;
    }
    input.data().iter().filter(|&&v| v == 0).count() as f64 / input.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<i32>) -> QuantTensor {
        QuantTensor::new(shape, data, 0).unwrap()
    }

    fn layer(out: usize, inc: usize, k: usize, w: Vec<i32>) -> ConvLayerSpec {
        ConvLayerSpec::new(t(vec![out, inc, k, k], w), t(vec![out], vec![0; out])).unwrap()
    }

    #[test]
    fn mnist_sized_exact_count() {
        let input = t(vec![1, 28, 28], (0..784).map(|i| i % 7).collect());
        let l = layer(1, 1, 3, vec![1; 9]);
        let (out, c) = conv2d(&input, &l, ConvMode::Exact).unwrap();
        assert_eq!(out.shape(), &[1, 26, 26]);
        assert_eq!(c.exact_total, 6084);
        assert_eq!(c.performed, 6084);
    }

    #[test]
    fn zero_kernel_performs_nothing() {
        let input = t(vec![1, 6, 6], (1..=36).collect());
        let l = layer(2, 1, 3, vec![0; 18]);
        for mode in [
            ConvMode::ZeroSkip,
            ConvMode::Approx(PruneThreshold::new(3).unwrap()),
        ] {
            let (out, c) = conv2d(&input, &l, mode).unwrap();
            assert!(out.data().iter().all(|&v| v == 0));
            assert_eq!(c.performed, 0);
            assert_eq!(c.nonzero_total, 0);
            assert_eq!(c.exact_total, 2 * 16 * 9);
        }
    }

    #[test]
    fn bias_added_once_and_not_counted() {
        let input = t(vec![1, 3, 3], vec![1; 9]);
        let w = t(vec![1, 1, 3, 3], vec![2; 9]);
        let b = QuantTensor::new(vec![1], vec![5], 0).unwrap();
        let l = ConvLayerSpec::new(w, b).unwrap();
        let (out, c) = conv2d(&input, &l, ConvMode::Exact).unwrap();
        assert_eq!(out.data(), &[23]);
        assert_eq!(c.performed, 9);
    }

    #[test]
    fn bias_is_aligned_to_accumulator_scale() {
        let input = QuantTensor::new(vec![1, 1, 1], vec![4], 2).unwrap(); // 1.0
        let w = QuantTensor::new(vec![1, 1, 1, 1], vec![8], 3).unwrap(); // 1.0
        let b = QuantTensor::new(vec![1], vec![1], 0).unwrap(); // 1.0
        let l = ConvLayerSpec::new(w, b).unwrap();
        let (out, _) = conv2d(&input, &l, ConvMode::Exact).unwrap();
        assert_eq!(out.scale_exp(), 5);
        assert_eq!(out.data(), &[64]); // 2.0 at 5 fractional bits
    }

    #[test]
    fn shape_errors() {
        let l = layer(1, 2, 3, vec![1; 18]);
        let input = t(vec![1, 5, 5], vec![0; 25]);
        assert!(matches!(
            conv2d(&input, &l, ConvMode::Exact),
            Err(TensorError::ShapeMismatch(_))
        ));
        let l = layer(1, 1, 3, vec![1; 9]);
        let small = t(vec![1, 2, 5], vec![0; 10]);
        assert!(matches!(
            conv2d(&small, &l, ConvMode::Exact),
            Err(TensorError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn accumulator_overflow_detected() {
        let big = 1 << 30;
        let input = t(vec![1, 1, 2], vec![big, big]);
        let l = ConvLayerSpec::new(t(vec![1, 1, 1, 2], vec![2, 2]), t(vec![1], vec![0])).unwrap();
        assert!(matches!(
            conv2d(&input, &l, ConvMode::Exact),
            Err(TensorError::AccumulatorOverflow { .. })
        ));
    }

    #[test]
    fn pooling_examples() {
        let p = avg_pool_2x2(&t(vec![2, 2], vec![4, 4, 4, 4])).unwrap();
        assert_eq!(p.data(), &[4]);
        let p = avg_pool_2x2(&t(vec![2, 2], vec![1, 2, 3, 4])).unwrap();
        assert_eq!(p.data(), &[3]);
        let p = avg_pool_2x2(&t(vec![2, 2], vec![-1, -2, -3, -4])).unwrap();
        assert_eq!(p.data(), &[-3]);
        let p = avg_pool_2x2(&t(vec![1, 4, 4], vec![0; 16])).unwrap();
        assert_eq!(p.shape(), &[1, 2, 2]);
        assert!(p.data().iter().all(|&v| v == 0));
        // mixed signs averaging to zero land on a mid-rise level instead
        let mixed = t(vec![2, 2], vec![3, -3, 1, -1]);
        assert_eq!(avg_pool_2x2(&mixed).unwrap().data(), &[0]);
        assert_eq!(
            avg_pool_2x2_with(&mixed, Rounding::MidRise).unwrap().data(),
            &[1]
        );
        assert!(matches!(
            avg_pool_2x2(&t(vec![3, 4], vec![0; 12])),
            Err(TensorError::OddDimensions {
                height: 3,
                width: 4
            })
        ));
    }

    #[test]
    fn activation_examples() {
        let r = apply_activation(&t(vec![3], vec![-5, 0, 7]), Activation::Relu, 0).unwrap();
        assert_eq!(r.data(), &[0, 0, 7]);
        let z = apply_activation(
            &QuantTensor::new(vec![1], vec![0], 11).unwrap(),
            Activation::Tanh,
            7,
        )
        .unwrap();
        assert_eq!(z.data(), &[0]);
        // x = 4.0 at 8 fractional bits; real-valued oracle 128 * tanh(4)
        let x = QuantTensor::new(vec![1], vec![1024], 8).unwrap();
        let y = apply_activation(&x, Activation::Tanh, 7).unwrap();
        assert_eq!(y.data(), &[(128.0 * 4.0f64.tanh()).round() as i32]);
        assert_eq!(y.data(), &[128]);
        assert_eq!(y.scale_exp(), 7);
        let y = apply_activation_with(&x, Activation::Tanh, 7, Rounding::MidRise).unwrap();
        assert_eq!(y.data(), &[127]);
        let z = apply_activation_with(
            &QuantTensor::new(vec![2], vec![0, -1], 11).unwrap(),
            Activation::Tanh,
            7,
            Rounding::MidRise,
        )
        .unwrap();
        assert_eq!(z.data(), &[1, -1]);
    }

    #[test]
    fn dense_examples() {
        let id = t(vec![3, 3], vec![1, 0, 0, 0, 1, 0, 0, 0, 1]);
        let x = t(vec![3], vec![4, -2, 9]);
        let y = fully_connected(&x, &id, &t(vec![3], vec![0; 3])).unwrap();
        assert_eq!(y.data(), x.data());

        let y = fully_connected(
            &t(vec![1], vec![5]),
            &t(vec![1, 1], vec![3]),
            &t(vec![1], vec![2]),
        )
        .unwrap();
        assert_eq!(y.data(), &[17]);

        assert!(fully_connected(&t(vec![2], vec![1, 1]), &id, &t(vec![3], vec![0; 3])).is_err());
    }

    #[test]
    fn sparsity_examples() {
        assert_eq!(sparsity_of(&t(vec![4], vec![0; 4])), 1.0);
        assert_eq!(sparsity_of(&t(vec![3], vec![1, 2, 3])), 0.0);
        assert_eq!(sparsity_of(&t(vec![4], vec![0, 0, 1, 3])), 0.5);
    }

    #[test]
    fn activation_parse() {
        assert_eq!("ReLU".parse::<Activation>().unwrap(), Activation::Relu);
        assert_eq!("tanh".parse::<Activation>().unwrap(), Activation::Tanh);
        assert!("gelu".parse::<Activation>().is_err());
    }
}
