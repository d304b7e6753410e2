use serde::{Deserialize, Serialize};

use crate::conv::{Activation, ConvLayerSpec};
use crate::error::{DataError, Error, Result};
use crate::io::{TensorData, WeightContainer, WeightRecord};
use crate::tensor::{QuantTensor, HEADROOM};

use super::float::{activation_from_container, activation_tag};
use super::{rounding_for, FloatLeNet, LAYER_NAMES, LAYER_SHAPES};

/// Fractional bits per tensor. Biases live at their layer's accumulator
/// scale (input bits + weight bits) so they add without rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalePlan {
    /// C1, C3, C5, F6, OUT.
    pub weights: [i32; 5],
    /// Outputs of the activations after C1, C3, C5 and F6.
    pub activations: [i32; 4],
}

impl ScalePlan {
    /// Raw pixels carry 8 fractional bits (value = pixel / 256).
    pub const INPUT_SCALE: i32 = 8;

    pub fn for_activation(activation: Activation) -> Self {
        match activation {
            Activation::Relu => Self {
                weights: [12; 5],
                activations: [8; 4],
            },
            Activation::Tanh => Self {
                weights: [12; 5],
                activations: [12; 4],
            },
        }
    }

    /// Scale of the tensor entering layer `i` (C1, C3, C5, F6, OUT).
    pub fn input_scale(&self, layer: usize) -> i32 {
        if layer == 0 {
            Self::INPUT_SCALE
        } else {
            self.activations[layer - 1]
        }
    }

    pub fn accumulator_scale(&self, layer: usize) -> i32 {
        self.input_scale(layer) + self.weights[layer]
    }

    fn to_vec(self) -> Vec<i32> {
        let mut v = vec![Self::INPUT_SCALE];
        v.extend(self.weights);
        v.extend(self.activations);
        v
    }

    fn from_slice(v: &[i32]) -> Option<Self> {
        if v.len() != 10 || v[0] != Self::INPUT_SCALE {
            return None;
        }
        Some(Self {
            weights: v[1..6].try_into().ok()?,
            activations: v[6..10].try_into().ok()?,
        })
    }
}

/// Integer LeNet-5, immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct LeNet5Model {
    activation: Activation,
    plan: ScalePlan,
    c1: ConvLayerSpec,
    c3: ConvLayerSpec,
    c5: ConvLayerSpec,
    f6: (QuantTensor, QuantTensor),
    out: (QuantTensor, QuantTensor),
}

impl LeNet5Model {
    /// Assembles a model from quantized `(weight, bias)` pairs in layer order.
    pub fn from_parts(
        activation: Activation,
        plan: ScalePlan,
        layers: [(QuantTensor, QuantTensor); 5],
    ) -> Result<Self> {
        for (i, (w, b)) in layers.iter().enumerate() {
            if w.shape() != LAYER_SHAPES[i] || b.shape() != &LAYER_SHAPES[i][..1] {
                return Err(Error::Model(format!(
                    "{}: weight {:?} / bias {:?}, expected {:?}",
                    LAYER_NAMES[i],
                    w.shape(),
                    b.shape(),
                    LAYER_SHAPES[i]
                )));
            }
        }
        let [c1, c3, c5, f6, out] = layers;
        Ok(Self {
            activation,
            plan,
            c1: ConvLayerSpec::new(c1.0, c1.1)?,
            c3: ConvLayerSpec::new(c3.0, c3.1)?,
            c5: ConvLayerSpec::new(c5.0, c5.1)?,
            f6,
            out,
        })
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn plan(&self) -> &ScalePlan {
        &self.plan
    }

    pub fn c1(&self) -> &ConvLayerSpec {
        &self.c1
    }

    pub fn c3(&self) -> &ConvLayerSpec {
        &self.c3
    }

    pub fn c5(&self) -> &ConvLayerSpec {
        &self.c5
    }

    pub fn f6(&self) -> (&QuantTensor, &QuantTensor) {
        (&self.f6.0, &self.f6.1)
    }

    pub fn out(&self) -> (&QuantTensor, &QuantTensor) {
        (&self.out.0, &self.out.1)
    }

    fn layer_tensors(&self) -> [(&QuantTensor, &QuantTensor); 5] {
        [
            (self.c1.weights(), self.c1.bias()),
            (self.c3.weights(), self.c3.bias()),
            (self.c5.weights(), self.c5.bias()),
            (&self.f6.0, &self.f6.1),
            (&self.out.0, &self.out.1),
        ]
    }

    pub fn to_container(&self) -> WeightContainer {
        let mut c = WeightContainer::new();
        c.push(WeightRecord::int32(
            "meta.activation",
            &[1],
            vec![activation_tag(self.activation)],
        ))
        .expect("fresh");
        c.push(WeightRecord::int32(
            "meta.scale_plan",
            &[10],
            self.plan.to_vec(),
        ))
        .expect("unique");
        for (name, (w, b)) in LAYER_NAMES.iter().zip(self.layer_tensors()) {
            c.push(WeightRecord::int32(
                format!("{name}.weight"),
                w.shape(),
                w.data().to_vec(),
            ))
            .expect("unique");
            c.push(WeightRecord::int32(
                format!("{name}.bias"),
                b.shape(),
                b.data().to_vec(),
            ))
            .expect("unique");
        }
        c
    }

    pub fn from_container(c: &WeightContainer) -> Result<Self> {
        let activation = activation_from_container(c)?;
        let plan_rec = c.require("meta.scale_plan")?;
        let plan = match &plan_rec.data {
            TensorData::Int32(v) => ScalePlan::from_slice(v),
            _ => None,
        }
        .ok_or_else(|| DataError::BadRecord {
            name: plan_rec.name.clone(),
            reason: "malformed scale plan".into(),
        })?;

        let mut layers = Vec::with_capacity(5);
        for (i, name) in LAYER_NAMES.iter().enumerate() {
            let w = int_tensor(c, &format!("{name}.weight"), plan.weights[i])?;
            let b = int_tensor(c, &format!("{name}.bias"), plan.accumulator_scale(i))?;
            layers.push((w, b));
        }
        let layers: [(QuantTensor, QuantTensor); 5] = layers.try_into().expect("five layers");
        Self::from_parts(activation, plan, layers)
    }
}

fn int_tensor(c: &WeightContainer, name: &str, scale: i32) -> Result<QuantTensor> {
    let rec = c.require(name)?;
    match &rec.data {
        TensorData::Int32(v) => Ok(QuantTensor::new(rec.shape_usize(), v.clone(), scale)?),
        TensorData::Float32(_) => Err(DataError::BadRecord {
            name: name.into(),
            reason: "expected int32 payload".into(),
        }
        .into()),
    }
}

/// Quantizes every tensor as `round(w * 2^s)` at its planned scale. Weights of
/// tanh models use the mid-rise quantizer of [`rounding_for`], so a trained
/// weight never collapses to zero; biases always round to nearest.
///
/// For tanh models, whose activations are bounded by 1, the worst-case
/// accumulator of every layer is also checked against the headroom range.
pub fn quantize_model(weights: &FloatLeNet, plan: ScalePlan) -> Result<LeNet5Model> {
    let mut layers = Vec::with_capacity(5);
    for (i, l) in weights.layers.iter().enumerate() {
        if l.weight.iter().chain(&l.bias).any(|v| !v.is_finite()) {
            return Err(Error::Model(format!(
                "{} has non-finite parameters",
                LAYER_NAMES[i]
            )));
        }
        let w = QuantTensor::quantize_with(
            LAYER_SHAPES[i].to_vec(),
            &l.weight,
            plan.weights[i],
            rounding_for(weights.activation),
        )?;
        let b =
            QuantTensor::quantize(vec![LAYER_SHAPES[i][0]], &l.bias, plan.accumulator_scale(i))?;
        if weights.activation == Activation::Tanh && i > 0 {
            check_tanh_headroom(LAYER_NAMES[i], &w, &b, plan.input_scale(i))?;
        }
        layers.push((w, b));
    }
    let layers: [(QuantTensor, QuantTensor); 5] = layers.try_into().expect("five layers");
    LeNet5Model::from_parts(weights.activation, plan, layers)
}

fn check_tanh_headroom(
    name: &str,
    w: &QuantTensor,
    b: &QuantTensor,
    input_scale: i32,
) -> Result<()> {
    let max_in = 1i64 << input_scale;
    let fan_in = w.len() / b.len();
    for (row, &bias) in w.data().chunks_exact(fan_in).zip(b.data()) {
        let bound =
            row.iter().map(|&v| i64::from(v).abs()).sum::<i64>() * max_in + i64::from(bias).abs();
        if bound > HEADROOM {
            return Err(Error::Model(format!(
                "{name}: worst-case accumulator {bound} exceeds 2^30"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_round_trip() {
        let p = ScalePlan::for_activation(Activation::Tanh);
        assert_eq!(ScalePlan::from_slice(&p.to_vec()), Some(p));
        assert_eq!(p.accumulator_scale(0), 8 + p.weights[0]);
        assert_eq!(p.input_scale(3), p.activations[2]);
    }

    #[test]
    fn quantized_container_round_trip() {
        let f = FloatLeNet::init(Activation::Relu, 4);
        let m = quantize_model(&f, ScalePlan::for_activation(Activation::Relu)).unwrap();
        let back = LeNet5Model::from_container(
            &WeightContainer::from_bytes(&m.to_container().to_bytes()).unwrap(),
        )
        .unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn quantization_rounds_to_plan() {
        let mut f = FloatLeNet::init(Activation::Relu, 4);
        f.layers[0].weight[0] = 0.5;
        f.layers[0].weight[1] = -0.25;
        let plan = ScalePlan {
            weights: [8; 5],
            activations: [8; 4],
        };
        let m = quantize_model(&f, plan).unwrap();
        assert_eq!(&m.c1().weights().data()[..2], &[128, -64]);
    }

    #[test]
    fn overflow_rejected() {
        let mut f = FloatLeNet::init(Activation::Relu, 4);
        f.layers[1].weight[0] = 1e9;
        assert!(quantize_model(&f, ScalePlan::for_activation(Activation::Relu)).is_err());
        let mut f = FloatLeNet::init(Activation::Relu, 4);
        f.layers[1].weight[0] = f32::NAN;
        assert!(quantize_model(&f, ScalePlan::for_activation(Activation::Relu)).is_err());
    }
}
