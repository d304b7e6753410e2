//! LeNet-5 on 28x28 digits: float training, quantization and instrumented
//! integer inference.
//!
//! ```text
//! 28x28x1 -C1 5x5x6-> 24x24x6 -S2-> 12x12x6 -C3 5x5x16-> 8x8x16 -S4-> 4x4x16
//!         -C5 4x4x120-> 120 -F6-> 84 -OUT-> 10
//! ```
//!
//! C3 is fully connected across the six S2 maps. Convolutions honor the
//! requested [`ConvMode`]; the two dense layers are always exact.

mod float;
mod quant;

pub use float::{train_float, FloatLayer, FloatLeNet, TrainConfig};
pub use quant::{quantize_model, LeNet5Model, ScalePlan};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conv::{
    apply_activation_with, avg_pool_2x2_with, conv2d, fully_connected, sparsity_of, Activation,
    ConvMode, MacCounters,
};
use crate::error::{Error, Result};
use crate::io::MnistSet;
use crate::tensor::{QuantTensor, Rounding};

pub const LAYER_NAMES: [&str; 5] = ["c1", "c3", "c5", "f6", "out"];

/// Weight shapes: conv `(out, in, kh, kw)`, dense `(out, in)`.
pub const LAYER_SHAPES: [&[usize]; 5] = [
    &[6, 1, 5, 5],
    &[16, 6, 5, 5],
    &[120, 16, 4, 4],
    &[84, 120],
    &[10, 84],
];

/// Feature maps reported per inference, in forward order.
pub const REPORT_LAYERS: [&str; 6] = ["C1", "S2", "C3", "S4", "C5", "F6"];

/// Exact multiplication counts of C1, C3 and C5 for a 28x28 input.
pub const EXACT_CONV_MACS: [u64; 3] = [86_400, 153_600, 30_720];
pub const EXACT_TOTAL_MACS: u64 = 270_720;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub name: String,
    /// Zero for pooling and dense layers.
    pub counters: MacCounters,
    /// Zero fraction of the layer's (post-activation) output.
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub logits: Vec<i32>,
    pub logit_scale_exp: i32,
    pub predicted: usize,
    /// C1, S2, C3, S4, C5, F6.
    pub per_layer: Vec<LayerReport>,
}

impl InferenceReport {
    /// C1, C3 and C5 counters.
    pub fn conv_counters(&self) -> [MacCounters; 3] {
        [
            self.per_layer[0].counters,
            self.per_layer[2].counters,
            self.per_layer[4].counters,
        ]
    }

    pub fn total_counters(&self) -> MacCounters {
        self.per_layer.iter().map(|l| l.counters).sum()
    }
}

/// Index of the largest logit; the lowest index wins ties.
pub fn argmax_i32(v: &[i32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Wraps raw 8-bit pixels as a `(1, 28, 28)` tensor with 8 fractional bits.
pub fn image_tensor(image: &[u8]) -> Result<QuantTensor> {
    if image.len() != 28 * 28 {
        return Err(Error::Model(format!(
            "expected a 28x28 image, got {} pixels",
            image.len()
        )));
    }
    Ok(QuantTensor::new(
        vec![1, 28, 28],
        image.iter().map(|&p| i32::from(p)).collect(),
        ScalePlan::INPUT_SCALE,
    )?)
}

/// Rounding used for weights, activations and pooling. Tanh networks use a
/// mid-rise quantizer: real-valued tanh outputs (and their averages) are
/// essentially never exactly zero, and round-to-nearest would invent zeros
/// that the float network does not have. ReLU zeros are genuine.
pub fn rounding_for(activation: Activation) -> Rounding {
    match activation {
        Activation::Relu => Rounding::NearestHalfAway,
        Activation::Tanh => Rounding::MidRise,
    }
}

fn activate(x: &QuantTensor, kind: Activation, scale: i32) -> Result<QuantTensor> {
    let y = apply_activation_with(x, kind, scale, rounding_for(kind))?;
    Ok(match kind {
        Activation::Relu => y.rescaled(scale)?,
        Activation::Tanh => y,
    })
}

/// Forward pass with per-layer multiplication counters and sparsity.
pub fn infer(image: &[u8], model: &LeNet5Model, mode: ConvMode) -> Result<InferenceReport> {
    infer_with_modes(image, model, [mode; 3])
}

/// [`infer`] with an individual mode for each of C1, C3 and C5.
pub fn infer_with_modes(
    image: &[u8],
    model: &LeNet5Model,
    modes: [ConvMode; 3],
) -> Result<InferenceReport> {
    let x = image_tensor(image)?;
    let act = model.activation();
    let s = model.plan();
    let mut per_layer = Vec::with_capacity(6);
    let mut push = |name: &str, counters: MacCounters, t: &QuantTensor| {
        per_layer.push(LayerReport {
            name: name.into(),
            counters,
            sparsity: sparsity_of(t),
        })
    };

    let (z1, k1) = conv2d(&x, model.c1(), modes[0])?;
    let a1 = activate(&z1, act, s.activations[0])?;
    push("C1", k1, &a1);
    let p2 = avg_pool_2x2_with(&a1, rounding_for(act))?;
    push("S2", MacCounters::default(), &p2);

    let (z3, k3) = conv2d(&p2, model.c3(), modes[1])?;
    let a3 = activate(&z3, act, s.activations[1])?;
    push("C3", k3, &a3);
    let p4 = avg_pool_2x2_with(&a3, rounding_for(act))?;
    push("S4", MacCounters::default(), &p4);

    let (z5, k5) = conv2d(&p4, model.c5(), modes[2])?;
    let a5 = activate(&z5, act, s.activations[2])?.reshaped(vec![120])?;
    push("C5", k5, &a5);

    let (f6_w, f6_b) = model.f6();
    let a6 = activate(&fully_connected(&a5, f6_w, f6_b)?, act, s.activations[3])?;
    push("F6", MacCounters::default(), &a6);

    let (out_w, out_b) = model.out();
    let logits = fully_connected(&a6, out_w, out_b)?;
    let predicted = argmax_i32(logits.data());
    Ok(InferenceReport {
        logit_scale_exp: logits.scale_exp(),
        logits: logits.into_data(),
        predicted,
        per_layer,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub name: String,
    pub mean_exact: f64,
    pub mean_nonzero: f64,
    pub mean_performed: f64,
    pub sparsity_mean: f64,
    pub sparsity_min: f64,
    pub sparsity_max: f64,
    pub sparsity_std: f64,
}

/// Aggregate of [`infer`] over a labelled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    pub threshold: Option<f64>,
    pub t_int: Option<u32>,
    pub images: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub layers: Vec<LayerSummary>,
    /// Per-image mean over all layers.
    pub mean_total_exact: f64,
    pub mean_total_nonzero: f64,
    pub mean_total_performed: f64,
    pub predictions: Vec<u8>,
    /// Sums of exact per-image counters, kept for exact comparisons.
    pub total_counters: MacCounters,
}

impl EvalReport {
    pub fn layer(&self, name: &str) -> Option<&LayerSummary> {
        self.layers.iter().find(|l| l.name == name)
    }
}

/// Runs `infer` over every sample of `set` on `workers` threads. Per-image
/// reports are reduced in sample order, so results do not depend on the
/// worker count.
pub fn evaluate(
    set: &MnistSet,
    model: &LeNet5Model,
    mode: ConvMode,
    workers: usize,
) -> Result<EvalReport> {
    let reports = map_images(set, workers, |img| infer(img, model, mode))?;
    Ok(summarize(set, mode, &reports))
}

/// Applies `f` to every image of `set` in parallel, preserving order.
pub fn map_images<T, F>(set: &MnistSet, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&[u8]) -> Result<T> + Sync,
{
    let run = || {
        (0..set.len())
            .into_par_iter()
            .map(|i| f(set.image(i)))
            .collect::<Result<Vec<T>>>()
    };
    if workers <= 1 {
        return (0..set.len()).map(|i| f(set.image(i))).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Model(format!("thread pool: {e}")))?;
    pool.install(run)
}

fn summarize(set: &MnistSet, mode: ConvMode, reports: &[InferenceReport]) -> EvalReport {
    let n = reports.len().max(1) as f64;
    let predictions: Vec<u8> = reports.iter().map(|r| r.predicted as u8).collect();
    let correct = predictions
        .iter()
        .zip(&set.labels)
        .filter(|(p, l)| p == l)
        .count();

    let layers = REPORT_LAYERS
        .iter()
        .enumerate()
        .map(|(li, name)| {
            let counters: MacCounters = reports.iter().map(|r| r.per_layer[li].counters).sum();
            let sp: Vec<f64> = reports.iter().map(|r| r.per_layer[li].sparsity).collect();
            let mean = sp.iter().sum::<f64>() / n;
            let var = sp.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            LayerSummary {
                name: (*name).to_string(),
                mean_exact: counters.exact_total as f64 / n,
                mean_nonzero: counters.nonzero_total as f64 / n,
                mean_performed: counters.performed as f64 / n,
                sparsity_mean: mean,
                sparsity_min: sp.iter().copied().fold(f64::INFINITY, f64::min),
                sparsity_max: sp.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                sparsity_std: var.sqrt(),
            }
        })
        .collect();
    let total: MacCounters = reports.iter().map(InferenceReport::total_counters).sum();
    let threshold = mode.threshold();
    EvalReport {
        mode: mode.name().to_string(),
        threshold: threshold.and_then(|t| t.fraction()),
        t_int: threshold.map(|t| t.t_int()),
        images: reports.len(),
        correct,
        accuracy: correct as f64 / n,
        layers,
        mean_total_exact: total.exact_total as f64 / n,
        mean_total_nonzero: total.nonzero_total as f64 / n,
        mean_total_performed: total.performed as f64 / n,
        predictions,
        total_counters: total,
    }
}
