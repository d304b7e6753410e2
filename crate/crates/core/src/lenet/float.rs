//! Real-valued LeNet-5 and a seeded mini-batch SGD trainer.
//!
//! Only used to obtain weights; all measured inference runs on the quantized
//! model. Inputs are `pixel / 256`, matching the 8 fractional bits the
//! integer pipeline assigns to raw pixels.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conv::Activation;
use crate::error::{DataError, Error, Result};
use crate::io::{MnistSet, TensorData, WeightContainer, WeightRecord};

use super::{LAYER_NAMES, LAYER_SHAPES};

/// Weights and biases of one layer, row-major in the shapes of [`LAYER_SHAPES`].
#[derive(Debug, Clone, PartialEq)]
pub struct FloatLayer {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloatLeNet {
    pub activation: Activation,
    /// C1, C3, C5, F6, OUT.
    pub layers: [FloatLayer; 5],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub activation: Activation,
    pub epochs: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub seed: u64,
    /// Fail with [`Error::NonConvergence`] if final-epoch training accuracy
    /// ends below this.
    pub min_accuracy: Option<f64>,
}

impl TrainConfig {
    pub fn new(activation: Activation) -> Self {
        Self {
            activation,
            epochs: 3,
            learning_rate: 0.05,
            batch_size: 16,
            seed: 7,
            min_accuracy: Some(0.9),
        }
    }
}

impl FloatLeNet {
    /// Uniform fan-in initialization: He bounds for ReLU, LeCun bounds for
    /// tanh. Biases start at zero.
    pub fn init(activation: Activation, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gain = match activation {
            Activation::Relu => 6.0f32,
            Activation::Tanh => 3.0f32,
        };
        let layers = LAYER_SHAPES.map(|shape| {
            let fan_in: usize = shape[1..].iter().product();
            let bound = (gain / fan_in as f32).sqrt();
            let n: usize = shape.iter().product();
            FloatLayer {
                weight: (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
                bias: vec![0.0; shape[0]],
            }
        });
        Self { activation, layers }
    }

    /// FNV-1a over the bit patterns of every parameter.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for l in &self.layers {
            for v in l.weight.iter().chain(&l.bias) {
                for b in v.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn predict(&self, image: &[u8]) -> usize {
        let mut ws = Workspace::new();
        self.forward(image, &mut ws);
        argmax(&ws.logits)
    }

    pub fn accuracy(&self, set: &MnistSet) -> f64 {
        let mut ws = Workspace::new();
        let correct = (0..set.len())
            .filter(|&i| {
                self.forward(set.image(i), &mut ws);
                argmax(&ws.logits) == usize::from(set.labels[i])
            })
            .count();
        correct as f64 / set.len().max(1) as f64
    }

    fn forward(&self, image: &[u8], ws: &mut Workspace) {
        let act = self.activation;
        for (x, &p) in ws.x0.iter_mut().zip(image) {
            *x = f32::from(p) / 256.0;
        }
        let [c1, c3, c5, f6, out] = &self.layers;
        conv_forward(&ws.x0, 1, 28, 28, &c1.weight, &c1.bias, 6, 5, &mut ws.z1);
        activate(act, &ws.z1, &mut ws.a1);
        pool_forward(&ws.a1, 6, 24, 24, &mut ws.p2);
        conv_forward(&ws.p2, 6, 12, 12, &c3.weight, &c3.bias, 16, 5, &mut ws.z3);
        activate(act, &ws.z3, &mut ws.a3);
        pool_forward(&ws.a3, 16, 8, 8, &mut ws.p4);
        conv_forward(&ws.p4, 16, 4, 4, &c5.weight, &c5.bias, 120, 4, &mut ws.z5);
        activate(act, &ws.z5, &mut ws.a5);
        dense_forward(&ws.a5, &f6.weight, &f6.bias, &mut ws.z6);
        activate(act, &ws.z6, &mut ws.a6);
        dense_forward(&ws.a6, &out.weight, &out.bias, &mut ws.logits);
    }

    /// Forward plus backward for one sample; adds gradients into `grads` and
    /// returns (loss, correct).
    fn backprop(
        &self,
        image: &[u8],
        label: usize,
        ws: &mut Workspace,
        grads: &mut [FloatLayer; 5],
    ) -> (f32, bool) {
        self.forward(image, ws);
        let act = self.activation;
        let correct = argmax(&ws.logits) == label;

        // softmax cross-entropy
        let max = ws.logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut denom = 0.0f32;
        for (d, &z) in ws.d_logits.iter_mut().zip(&ws.logits) {
            *d = (z - max).exp();
            denom += *d;
        }
        for d in ws.d_logits.iter_mut() {
            *d /= denom;
        }
        let loss = -(ws.d_logits[label].max(1e-30)).ln();
        ws.d_logits[label] -= 1.0;

        let [c1, c3, c5, f6, out] = &self.layers;
        let [g1, g3, g5, g6, gout] = grads;

        dense_backward(&ws.a6, &out.weight, &ws.d_logits, gout, &mut ws.d_a6);
        activate_backward(act, &ws.z6, &ws.a6, &ws.d_a6, &mut ws.d_z6);
        dense_backward(&ws.a5, &f6.weight, &ws.d_z6, g6, &mut ws.d_a5);
        activate_backward(act, &ws.z5, &ws.a5, &ws.d_a5, &mut ws.d_z5);
        conv_backward(
            &ws.p4,
            16,
            4,
            4,
            &c5.weight,
            120,
            4,
            &ws.d_z5,
            g5,
            Some(&mut ws.d_p4),
        );
        pool_backward(&ws.d_p4, 16, 8, 8, &mut ws.d_a3);
        activate_backward(act, &ws.z3, &ws.a3, &ws.d_a3, &mut ws.d_z3);
        conv_backward(
            &ws.p2,
            6,
            12,
            12,
            &c3.weight,
            16,
            5,
            &ws.d_z3,
            g3,
            Some(&mut ws.d_p2),
        );
        pool_backward(&ws.d_p2, 6, 24, 24, &mut ws.d_a1);
        activate_backward(act, &ws.z1, &ws.a1, &ws.d_a1, &mut ws.d_z1);
        conv_backward(&ws.x0, 1, 28, 28, &c1.weight, 6, 5, &ws.d_z1, g1, None);
        (loss, correct)
    }

    pub fn to_container(&self) -> WeightContainer {
        let mut c = WeightContainer::new();
        c.push(WeightRecord::int32(
            "meta.activation",
            &[1],
            vec![activation_tag(self.activation)],
        ))
        .expect("fresh container");
        for ((name, shape), l) in LAYER_NAMES
            .iter()
            .zip(LAYER_SHAPES.iter())
            .zip(&self.layers)
        {
            c.push(WeightRecord::float32(
                format!("{name}.weight"),
                shape,
                l.weight.clone(),
            ))
            .expect("unique");
            c.push(WeightRecord::float32(
                format!("{name}.bias"),
                &shape[..1],
                l.bias.clone(),
            ))
            .expect("unique");
        }
        c
    }

    pub fn from_container(c: &WeightContainer) -> Result<Self> {
        let activation = activation_from_container(c)?;
        let mut layers = Vec::with_capacity(5);
        for (name, shape) in LAYER_NAMES.iter().zip(LAYER_SHAPES.iter()) {
            let weight = float_record(c, &format!("{name}.weight"), shape)?;
            let bias = float_record(c, &format!("{name}.bias"), &shape[..1])?;
            if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
                return Err(Error::Model(format!("{name} has non-finite parameters")));
            }
            layers.push(FloatLayer { weight, bias });
        }
        let layers: [FloatLayer; 5] = layers.try_into().expect("five layers");
        Ok(Self { activation, layers })
    }
}

pub(crate) fn activation_tag(a: Activation) -> i32 {
    match a {
        Activation::Relu => 0,
        Activation::Tanh => 1,
    }
}

pub(crate) fn activation_from_container(c: &WeightContainer) -> Result<Activation> {
    let rec = c.require("meta.activation")?;
    match &rec.data {
        TensorData::Int32(v) if v.as_slice() == [0] => Ok(Activation::Relu),
        TensorData::Int32(v) if v.as_slice() == [1] => Ok(Activation::Tanh),
        _ => Err(DataError::BadRecord {
            name: rec.name.clone(),
            reason: "expected int32 [0|1]".into(),
        }
        .into()),
    }
}

fn float_record(c: &WeightContainer, name: &str, shape: &[usize]) -> Result<Vec<f32>> {
    let rec = c.require(name)?;
    match &rec.data {
        TensorData::Float32(v) if rec.shape_usize() == shape => Ok(v.clone()),
        _ => Err(DataError::BadRecord {
            name: name.into(),
            reason: format!("expected float32 {shape:?}"),
        }
        .into()),
    }
}

/// Mini-batch SGD on softmax cross-entropy. Deterministic for a given
/// config: initialization and per-epoch shuffles derive from `seed`.
pub fn train_float(train: &MnistSet, config: &TrainConfig) -> Result<FloatLeNet> {
    let mut model = FloatLeNet::init(config.activation, config.seed);
    if config.epochs == 0 || train.is_empty() {
        return Ok(model);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut ws = Workspace::new();
    let mut grads = zero_grads();
    let batch = config.batch_size.max(1);
    let mut last_epoch_accuracy = 0.0;

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut correct = 0usize;
        for chunk in order.chunks(batch) {
            for g in grads.iter_mut() {
                g.weight.fill(0.0);
                g.bias.fill(0.0);
            }
            for &i in chunk {
                let (loss, ok) = model.backprop(
                    train.image(i),
                    usize::from(train.labels[i]),
                    &mut ws,
                    &mut grads,
                );
                if !loss.is_finite() {
                    return Err(Error::NonConvergence {
                        accuracy: 0.0,
                        epochs: config.epochs,
                    });
                }
                correct += usize::from(ok);
            }
            let step = config.learning_rate / chunk.len() as f32;
            for (p, g) in model.layers.iter_mut().zip(&grads) {
                for (w, dw) in p.weight.iter_mut().zip(&g.weight) {
                    *w -= step * dw;
                }
                for (b, db) in p.bias.iter_mut().zip(&g.bias) {
                    *b -= step * db;
                }
            }
        }
        last_epoch_accuracy = correct as f64 / train.len() as f64;
    }
    if let Some(min) = config.min_accuracy {
        if last_epoch_accuracy < min {
            return Err(Error::NonConvergence {
                accuracy: last_epoch_accuracy,
                epochs: config.epochs,
            });
        }
    }
    Ok(model)
}

fn zero_grads() -> [FloatLayer; 5] {
    LAYER_SHAPES.map(|shape| FloatLayer {
        weight: vec![0.0; shape.iter().product()],
        bias: vec![0.0; shape[0]],
    })
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

struct Workspace {
    x0: Vec<f32>,
    z1: Vec<f32>,
    a1: Vec<f32>,
    p2: Vec<f32>,
    z3: Vec<f32>,
    a3: Vec<f32>,
    p4: Vec<f32>,
    z5: Vec<f32>,
    a5: Vec<f32>,
    z6: Vec<f32>,
    a6: Vec<f32>,
    logits: Vec<f32>,
    d_logits: Vec<f32>,
    d_a6: Vec<f32>,
    d_z6: Vec<f32>,
    d_a5: Vec<f32>,
    d_z5: Vec<f32>,
    d_p4: Vec<f32>,
    d_a3: Vec<f32>,
    d_z3: Vec<f32>,
    d_p2: Vec<f32>,
    d_a1: Vec<f32>,
    d_z1: Vec<f32>,
}

impl Workspace {
    fn new() -> Self {
        let v = |n: usize| vec![0.0f32; n];
        Self {
            x0: v(784),
            z1: v(6 * 576),
            a1: v(6 * 576),
            p2: v(6 * 144),
            z3: v(16 * 64),
            a3: v(16 * 64),
            p4: v(16 * 16),
            z5: v(120),
            a5: v(120),
            z6: v(84),
            a6: v(84),
            logits: v(10),
            d_logits: v(10),
            d_a6: v(84),
            d_z6: v(84),
            d_a5: v(120),
            d_z5: v(120),
            d_p4: v(16 * 16),
            d_a3: v(16 * 64),
            d_z3: v(16 * 64),
            d_p2: v(6 * 144),
            d_a1: v(6 * 576),
            d_z1: v(6 * 576),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    x: &[f32],
    c: usize,
    h: usize,
    w: usize,
    wt: &[f32],
    b: &[f32],
    oc: usize,
    k: usize,
    out: &mut [f32],
) {
    let (oh, ow) = (h - k + 1, w - k + 1);
    for o in 0..oc {
        let plane = &mut out[o * oh * ow..][..oh * ow];
        plane.fill(b[o]);
        for ci in 0..c {
            let xin = &x[ci * h * w..][..h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wt[((o * c + ci) * k + ky) * k + kx];
                    for oy in 0..oh {
                        let row = &xin[(oy + ky) * w + kx..][..ow];
                        let dst = &mut plane[oy * ow..][..ow];
                        for (d, &xv) in dst.iter_mut().zip(row) {
                            *d += wv * xv;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f32],
    c: usize,
    h: usize,
    w: usize,
    wt: &[f32],
    oc: usize,
    k: usize,
    dout: &[f32],
    grad: &mut FloatLayer,
    mut dx: Option<&mut Vec<f32>>,
) {
    let (oh, ow) = (h - k + 1, w - k + 1);
    if let Some(dx) = dx.as_deref_mut() {
        dx.fill(0.0);
    }
    for o in 0..oc {
        let dplane = &dout[o * oh * ow..][..oh * ow];
        grad.bias[o] += dplane.iter().sum::<f32>();
        for ci in 0..c {
            let xin = &x[ci * h * w..][..h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((o * c + ci) * k + ky) * k + kx;
                    let mut acc = 0.0f32;
                    for oy in 0..oh {
                        let row = &xin[(oy + ky) * w + kx..][..ow];
                        let drow = &dplane[oy * ow..][..ow];
                        acc += row.iter().zip(drow).map(|(a, b)| a * b).sum::<f32>();
                    }
                    grad.weight[widx] += acc;
                    if let Some(dx) = dx.as_deref_mut() {
                        let wv = wt[widx];
                        let dxin = &mut dx[ci * h * w..][..h * w];
                        for oy in 0..oh {
                            let dst = &mut dxin[(oy + ky) * w + kx..][..ow];
                            let drow = &dplane[oy * ow..][..ow];
                            for (d, &g) in dst.iter_mut().zip(drow) {
                                *d += wv * g;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn pool_forward(x: &[f32], c: usize, h: usize, w: usize, out: &mut [f32]) {
    let (ph, pw) = (h / 2, w / 2);
    for ci in 0..c {
        for py in 0..ph {
            for px in 0..pw {
                let base = ci * h * w + 2 * py * w + 2 * px;
                out[(ci * ph + py) * pw + px] =
                    0.25 * (x[base] + x[base + 1] + x[base + w] + x[base + w + 1]);
            }
        }
    }
}

fn pool_backward(dout: &[f32], c: usize, h: usize, w: usize, dx: &mut [f32]) {
    let (ph, pw) = (h / 2, w / 2);
    for ci in 0..c {
        for py in 0..ph {
            for px in 0..pw {
                let g = 0.25 * dout[(ci * ph + py) * pw + px];
                let base = ci * h * w + 2 * py * w + 2 * px;
                dx[base] = g;
                dx[base + 1] = g;
                dx[base + w] = g;
                dx[base + w + 1] = g;
            }
        }
    }
}

fn dense_forward(x: &[f32], wt: &[f32], b: &[f32], out: &mut [f32]) {
    for ((o, row), &bias) in out.iter_mut().zip(wt.chunks_exact(x.len())).zip(b) {
        *o = bias + row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>();
    }
}

fn dense_backward(x: &[f32], wt: &[f32], dout: &[f32], grad: &mut FloatLayer, dx: &mut [f32]) {
    dx.fill(0.0);
    let n = x.len();
    for (o, &g) in dout.iter().enumerate() {
        grad.bias[o] += g;
        let grow = &mut grad.weight[o * n..][..n];
        for (gw, &v) in grow.iter_mut().zip(x) {
            *gw += g * v;
        }
        for (d, &w) in dx.iter_mut().zip(&wt[o * n..][..n]) {
            *d += g * w;
        }
    }
}

fn activate(act: Activation, z: &[f32], a: &mut [f32]) {
    match act {
        Activation::Relu => a.iter_mut().zip(z).for_each(|(a, &z)| *a = z.max(0.0)),
        Activation::Tanh => a.iter_mut().zip(z).for_each(|(a, &z)| *a = z.tanh()),
    }
}

fn activate_backward(act: Activation, z: &[f32], a: &[f32], da: &[f32], dz: &mut [f32]) {
    match act {
        Activation::Relu => {
            for ((d, &g), &zv) in dz.iter_mut().zip(da).zip(z) {
                *d = if zv > 0.0 { g } else { 0.0 };
            }
        }
        Activation::Tanh => {
            for ((d, &g), &av) in dz.iter_mut().zip(da).zip(a) {
                *d = g * (1.0 - av * av);
            }
        }
    }
}
