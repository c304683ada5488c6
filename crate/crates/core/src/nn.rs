//! Dense ReLU networks trained by mini-batch Adam.
//!
//! Hidden layers are `affine -> ReLU`; the output layer is affine with no
//! activation. Batches are row-major `(batch, features)` matrices. Networks
//! are generic over the float type: the workflow trains in `f32`, while
//! gradient checks use `f64` instances of the same code.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign};

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element type of network parameters and activations.
pub trait Scalar:
    LinalgScalar + ScalarOperand + Float + FromPrimitive + AddAssign + MulAssign + Debug + Send + Sync + Serialize + DeserializeOwned
{
    const DTYPE: &'static str;

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("representable")
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub seed: u64,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("output_dim", self.output_dim),
            ("hidden_layers", self.hidden_layers),
            ("hidden_width", self.hidden_width),
        ] {
            if v == 0 {
                return Err(Error::domain(name, "must be at least 1"));
            }
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.input_dim;
        for _ in 0..self.hidden_layers {
            dims.push((fan_in, self.hidden_width));
            fan_in = self.hidden_width;
        }
        dims.push((fan_in, self.output_dim));
        dims
    }

    pub fn n_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    /// Epoch index from which the decayed rate applies.
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f64,
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::domain("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch_size", "must be at least 1"));
        }
        if !(self.lr_initial > 0.0) || !(self.lr_drop_factor > 0.0) {
            return Err(Error::domain("lr", "learning rate and drop factor must be positive"));
        }
        if self.lr_drop_epoch > self.epochs {
            return Err(Error::domain("lr_drop_epoch", "must not exceed epochs"));
        }
        Ok(())
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if epoch >= self.lr_drop_epoch {
            self.lr_initial * self.lr_drop_factor
        } else {
            self.lr_initial
        }
    }
}

/// Architecture and schedule of one network, without its seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub schedule: TrainSchedule,
}

impl NetSpec {
    pub fn config(&self, input_dim: usize, output_dim: usize, seed: u64) -> MlpConfig {
        MlpConfig { input_dim, output_dim, hidden_layers: self.hidden_layers, hidden_width: self.hidden_width, seed }
    }
}

/// One affine layer, `y = x W + b` with `W` of shape `(fan_in, fan_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T = f64> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Dense<T> {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { weights: Array2::zeros((fan_in, fan_out)), bias: Array1::zeros(fan_out) }
    }

    fn params(&self) -> [&[T]; 2] {
        [self.weights.as_slice().expect("standard layout"), self.bias.as_slice().expect("standard layout")]
    }

    fn params_mut(&mut self) -> [&mut [T]; 2] {
        [self.weights.as_slice_mut().expect("standard layout"), self.bias.as_slice_mut().expect("standard layout")]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T = f64> {
    config: MlpConfig,
    layers: Vec<Dense<T>>,
}

/// Gradients with the same layout as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f64> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn flat(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| l.params().into_iter().flatten().copied()).collect()
    }

    pub fn scale(&mut self, c: T) {
        for l in &mut self.layers {
            l.weights *= c;
            l.bias *= c;
        }
    }
}

struct Trace<T> {
    /// Input of every layer; `inputs[0]` is the batch itself.
    inputs: Vec<Array2<T>>,
    output: Array2<T>,
}

fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

impl<T: Scalar> MlpModel<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn new(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layers = config
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    weights: Array2::from_shape_simple_fn((fan_in, fan_out), || T::of(rng.random_range(-limit..limit))),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn zeros(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let layers = config.layer_dims().into_iter().map(|(i, o)| Dense::zeros(i, o)).collect();
        Ok(Self { config, layers })
    }

    /// Builds a model from explicit layers, checking that their shapes match
    /// `config`.
    pub fn from_layers(config: MlpConfig, layers: Vec<Dense<T>>) -> Result<Self> {
        config.validate()?;
        let dims = config.layer_dims();
        if dims.len() != layers.len() {
            return Err(Error::Shape { context: "layer count", expected: dims.len(), got: layers.len() });
        }
        for ((i, o), l) in dims.iter().zip(&layers) {
            if l.weights.dim() != (*i, *o) {
                return Err(Error::Shape { context: "layer weights", expected: i * o, got: l.weights.len() });
            }
            if l.bias.len() != *o {
                return Err(Error::Shape { context: "layer bias", expected: *o, got: l.bias.len() });
            }
        }
        let layers = layers
            .into_iter()
            .map(|l| Dense { weights: l.weights.as_standard_layout().into_owned(), bias: l.bias.as_standard_layout().into_owned() })
            .collect();
        Ok(Self { config, layers })
    }

    /// The same network with parameters converted to another float type.
    pub fn cast<U: Scalar>(&self) -> MlpModel<U> {
        MlpModel {
            config: self.config,
            layers: self
                .layers
                .iter()
                .map(|l| Dense { weights: l.weights.mapv(|v| U::of(v.f64())), bias: l.bias.mapv(|v| U::of(v.f64())) })
                .collect(),
        }
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn n_params(&self) -> usize {
        self.config.n_params()
    }

    pub fn params_flat(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| l.params().into_iter().flatten().copied()).collect()
    }

    pub fn set_params_flat(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.n_params() {
            return Err(Error::Shape { context: "parameters", expected: self.n_params(), got: values.len() });
        }
        let mut offset = 0;
        for l in &mut self.layers {
            for block in l.params_mut() {
                block.copy_from_slice(&values[offset..offset + block.len()]);
                offset += block.len();
            }
        }
        Ok(())
    }

    fn check_batch(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.config.input_dim {
            return Err(Error::Shape { context: "network input", expected: self.config.input_dim, got: x.ncols() });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        let batch = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        Ok(self.forward_batch(batch)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_batch(&x)?;
        let last = self.layers.len() - 1;
        let mut h = x.dot(&self.layers[0].weights);
        for (k, layer) in self.layers.iter().enumerate() {
            if k > 0 {
                h = h.dot(&layer.weights);
            }
            h += &layer.bias;
            if k < last {
                h.mapv_inplace(relu);
            }
        }
        Ok(h)
    }

    fn forward_trace(&self, x: ArrayView2<T>) -> Trace<T> {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weights);
            z += &layer.bias;
            if k < last {
                z.mapv_inplace(relu);
            }
            inputs.push(h);
            h = z;
        }
        Trace { inputs, output: h }
    }

    /// Reverse-mode pass from the gradient of the loss with respect to the
    /// network output.
    fn backprop(&self, trace: &Trace<T>, d_output: Array2<T>) -> Gradients<T> {
        let mut grads: Vec<Dense<T>> = Vec::with_capacity(self.layers.len());
        let mut delta = d_output;
        for k in (0..self.layers.len()).rev() {
            let input = &trace.inputs[k];
            let weights = input.t().dot(&delta).as_standard_layout().into_owned();
            let bias = delta.sum_axis(Axis(0));
            if k > 0 {
                let mut d_in = delta.dot(&self.layers[k].weights.t());
                // input of layer k is the ReLU output of layer k-1; its
                // derivative is 1 exactly where that output is positive
                ndarray::Zip::from(&mut d_in).and(input).for_each(|d, &a| {
                    if a <= T::zero() {
                        *d = T::zero();
                    }
                });
                delta = d_in;
            }
            grads.push(Dense { weights, bias });
        }
        grads.reverse();
        Gradients { layers: grads }
    }

    /// Loss and parameter gradients for a loss given as a function of the
    /// network output. `loss_fn` returns the loss and dLoss/dOutput.
    pub fn backward_with<F>(&self, inputs: ArrayView2<T>, loss_fn: F) -> Result<(f64, Gradients<T>)>
    where
        F: FnOnce(&Array2<T>) -> Result<(f64, Array2<T>)>,
    {
        self.check_batch(&inputs)?;
        if inputs.nrows() == 0 {
            return Err(Error::Empty { context: "batch" });
        }
        let trace = self.forward_trace(inputs);
        let (loss, d_output) = loss_fn(&trace.output)?;
        if d_output.dim() != trace.output.dim() {
            return Err(Error::Shape { context: "output gradient", expected: trace.output.len(), got: d_output.len() });
        }
        Ok((loss, self.backprop(&trace, d_output)))
    }
}

/// Mean squared error over batch and output dimensions, with its gradient.
pub fn mse_loss<T: Scalar>(output: &Array2<T>, targets: ArrayView2<T>) -> Result<(f64, Array2<T>)> {
    if output.dim() != targets.dim() {
        return Err(Error::Shape { context: "targets", expected: output.len(), got: targets.len() });
    }
    let diff = output - &targets;
    let n = diff.len() as f64;
    let loss = diff.iter().map(|d| d.f64() * d.f64()).sum::<f64>() / n;
    Ok((loss, diff * T::of(2.0 / n)))
}

/// MSE loss and gradients of `m` on a batch.
pub fn backward<T: Scalar>(m: &MlpModel<T>, inputs: ArrayView2<T>, targets: ArrayView2<T>) -> Result<(f64, Gradients<T>)> {
    if inputs.nrows() != targets.nrows() {
        return Err(Error::Shape { context: "batch rows", expected: inputs.nrows(), got: targets.nrows() });
    }
    m.backward_with(inputs, |out| mse_loss(out, targets))
}

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T = f64> {
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(n_params: usize) -> Self {
        Self {
            first_moment: vec![T::zero(); n_params],
            second_moment: vec![T::zero(); n_params],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn for_model(m: &MlpModel<T>) -> Self {
        Self::new(m.n_params())
    }

    /// Updates parameter blocks in place; blocks are consumed in order and
    /// must together match the state's length.
    fn update_blocks<'a, P, G>(&mut self, params: P, grads: G, lr: f64) -> Result<()>
    where
        T: 'a,
        P: IntoIterator<Item = &'a mut [T]>,
        G: IntoIterator<Item = &'a [T]>,
    {
        self.step += 1;
        let t = self.step as i32;
        let c1 = T::of(1.0 - self.beta1.powi(t));
        let c2 = T::of(1.0 - self.beta2.powi(t));
        let (b1, b2, eps, lr) = (T::of(self.beta1), T::of(self.beta2), T::of(self.epsilon), T::of(lr));
        let one = T::one();
        let mut offset = 0;
        for (p, g) in params.into_iter().zip(grads) {
            if p.len() != g.len() || offset + p.len() > self.first_moment.len() {
                return Err(Error::Shape { context: "adam block", expected: p.len(), got: g.len() });
            }
            let m = &mut self.first_moment[offset..offset + p.len()];
            let v = &mut self.second_moment[offset..offset + p.len()];
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            offset += p.len();
        }
        if offset != self.first_moment.len() {
            return Err(Error::Shape { context: "adam parameters", expected: self.first_moment.len(), got: offset });
        }
        Ok(())
    }

    pub fn step_slice(&mut self, params: &mut [T], grads: &[T], lr: f64) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(Error::Shape { context: "adam parameters", expected: self.first_moment.len(), got: params.len() });
        }
        self.update_blocks([params], [grads], lr)
    }
}

pub fn adam_step<T: Scalar>(state: &mut AdamState<T>, model: &mut MlpModel<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
    if grads.layers.len() != model.layers.len() {
        return Err(Error::Shape { context: "gradient layers", expected: model.layers.len(), got: grads.layers.len() });
    }
    let params = model.layers.iter_mut().flat_map(|l| l.params_mut());
    let g = grads.layers.iter().flat_map(|l| l.params());
    state.update_blocks(params, g, lr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss of every epoch, weighted by batch size.
    pub loss_history: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.loss_history.last().copied().unwrap_or(f64::NAN)
    }
}

/// Mini-batch Adam loop shared by every trainer. Each epoch shuffles the
/// sample indices; the last partial batch is kept and the batch size is
/// capped at the sample count. `batch_loss` receives the batch indices and
/// the training RNG (for per-batch noise) and returns loss and gradients.
pub fn fit_with<T, F>(
    model: &mut MlpModel<T>,
    n_samples: usize,
    schedule: &TrainSchedule,
    seed: u64,
    mut batch_loss: F,
) -> Result<TrainReport>
where
    T: Scalar,
    F: FnMut(&MlpModel<T>, &[usize], &mut ChaCha8Rng) -> Result<(f64, Gradients<T>)>,
{
    schedule.validate()?;
    if n_samples == 0 {
        return Err(Error::Empty { context: "training set" });
    }
    let batch = schedule.batch_size.min(n_samples);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = AdamState::for_model(model);
    let mut order: Vec<usize> = (0..n_samples).collect();
    let mut history = Vec::with_capacity(schedule.epochs);
    for epoch in 0..schedule.epochs {
        let lr = schedule.learning_rate(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(batch) {
            let (loss, grads) = batch_loss(model, idx, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::domain("loss", format!("non-finite training loss at epoch {epoch}")));
            }
            adam_step(&mut adam, model, &grads, lr)?;
            total += loss * idx.len() as f64;
        }
        history.push(total / n_samples as f64);
        if (epoch + 1) % 500 == 0 {
            log::debug!("epoch {}: loss {:.6e}", epoch + 1, total / n_samples as f64);
        }
    }
    Ok(TrainReport { loss_history: history })
}

/// Fits `model` to `(inputs, targets)` under the MSE loss.
pub fn train<T: Scalar>(
    model: &mut MlpModel<T>,
    inputs: ArrayView2<T>,
    targets: ArrayView2<T>,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<TrainReport> {
    if inputs.nrows() != targets.nrows() {
        return Err(Error::Shape { context: "training rows", expected: inputs.nrows(), got: targets.nrows() });
    }
    if targets.ncols() != model.config.output_dim {
        return Err(Error::Shape { context: "training targets", expected: model.config.output_dim, got: targets.ncols() });
    }
    fit_with(model, inputs.nrows(), schedule, seed, |m, idx, _| {
        let x = inputs.select(Axis(0), idx);
        let t = targets.select(Axis(0), idx);
        backward(m, x.view(), t.view())
    })
}

/// Largest relative deviation between backpropagated gradients and central
/// differences of the MSE loss with step `h`. Deviations are measured
/// relative to `max(|analytic|, |numeric|, 1e-6)`.
pub fn grad_check<T: Scalar>(m: &MlpModel<T>, x: ArrayView2<T>, t: ArrayView2<T>, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::domain("h", "step must be positive"));
    }
    let (_, grads) = backward(m, x, t)?;
    let analytic = grads.flat();
    let base = m.params_flat();
    let mut probe = m.clone();
    let mut params = base.clone();
    let loss_at = |probe: &mut MlpModel<T>, params: &[T]| -> Result<f64> {
        probe.set_params_flat(params)?;
        let out = probe.forward_batch(x)?;
        Ok(mse_loss(&out, t)?.0)
    };
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        params[i] = T::of(base[i].f64() + h);
        let up = loss_at(&mut probe, &params)?;
        params[i] = T::of(base[i].f64() - h);
        let down = loss_at(&mut probe, &params)?;
        params[i] = base[i];
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i].f64();
        let scale = a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((a - numeric).abs() / scale);
    }
    Ok(worst)
}

pub const MLP_FORMAT: &str = "propforge-mlp";
pub const MLP_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct LayerRecord<T> {
    fan_in: usize,
    fan_out: usize,
    /// Row-major `(fan_in, fan_out)`.
    weights: Vec<T>,
    bias: Vec<T>,
}

/// JSON checkpoint of a network. See `docs/checkpoints.md`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct MlpCheckpoint<T> {
    format: String,
    version: u32,
    dtype: String,
    config: MlpConfig,
    layers: Vec<LayerRecord<T>>,
}

impl<T: Scalar> From<&MlpModel<T>> for MlpCheckpoint<T> {
    fn from(m: &MlpModel<T>) -> Self {
        Self {
            format: MLP_FORMAT.into(),
            version: MLP_FORMAT_VERSION,
            dtype: T::DTYPE.into(),
            config: m.config,
            layers: m
                .layers
                .iter()
                .map(|l| LayerRecord {
                    fan_in: l.weights.nrows(),
                    fan_out: l.weights.ncols(),
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl<T: Scalar> TryFrom<MlpCheckpoint<T>> for MlpModel<T> {
    type Error = Error;

    fn try_from(c: MlpCheckpoint<T>) -> Result<Self> {
        if c.format != MLP_FORMAT || c.version != MLP_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("expected {MLP_FORMAT} v{MLP_FORMAT_VERSION}, got {} v{}", c.format, c.version)));
        }
        if c.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!("expected {} parameters, got {}", T::DTYPE, c.dtype)));
        }
        let layers = c
            .layers
            .into_iter()
            .map(|l| {
                let weights = Array2::from_shape_vec((l.fan_in, l.fan_out), l.weights).map_err(|e| Error::Checkpoint(e.to_string()))?;
                Ok(Dense { weights, bias: Array1::from(l.bias) })
            })
            .collect::<Result<Vec<_>>>()?;
        MlpModel::from_layers(c.config, layers)
    }
}

impl<T: Scalar> Serialize for MlpModel<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MlpCheckpoint::from(self).serialize(s)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for MlpModel<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let c = MlpCheckpoint::<T>::deserialize(d)?;
        MlpModel::try_from(c).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cfg(input: usize, output: usize, layers: usize, width: usize, seed: u64) -> MlpConfig {
        MlpConfig { input_dim: input, output_dim: output, hidden_layers: layers, hidden_width: width, seed }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = MlpModel::zeros(cfg(3, 2, 2, 4, 0)).unwrap();
        assert_eq!(m.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_unit_is_relu() {
        let mut m = MlpModel::zeros(cfg(1, 1, 1, 1, 0)).unwrap();
        m.layers[0].weights[[0, 0]] = 1.0;
        m.layers[1].weights[[0, 0]] = 1.0;
        assert_eq!(m.forward(&[-1.0]).unwrap(), vec![0.0]);
        assert_eq!(m.forward(&[2.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn forward_matches_scalar_matrix_chain() {
        let m = MlpModel::new(cfg(3, 2, 2, 5, 9)).unwrap();
        let x = [0.3, -1.2, 0.7];
        let mut h: Vec<f64> = x.to_vec();
        for (k, l) in m.layers.iter().enumerate() {
            let mut z = vec![0.0; l.bias.len()];
            for (o, zo) in z.iter_mut().enumerate() {
                *zo = l.bias[o];
                for (i, hi) in h.iter().enumerate() {
                    *zo += hi * l.weights[[i, o]];
                }
                if k + 1 < m.layers.len() {
                    *zo = zo.max(0.0);
                }
            }
            h = z;
        }
        let y = m.forward(&x).unwrap();
        for (a, b) in y.iter().zip(&h) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = MlpModel::new(cfg(3, 1, 1, 4, 0)).unwrap();
        assert!(matches!(m.forward(&[1.0]), Err(Error::Shape { .. })));
        let x = Array2::zeros((2, 3));
        let t = Array2::zeros((2, 2));
        assert!(backward(&m, x.view(), t.view()).is_err());
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_gradient() {
        let m = MlpModel::new(cfg(2, 2, 2, 6, 4)).unwrap();
        let x = array![[0.1, 0.2], [-0.4, 0.9], [1.0, -1.0]];
        let t = m.forward_batch(x.view()).unwrap();
        let (loss, g) = backward(&m, x.view(), t.view()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn one_weight_linear_model() {
        // y = w x with w = 2 and (x, t) = (1, 0): loss 4, dL/dw = 2 (w x - t) x = 4.
        let m = one_weight_model(2.0);
        let x = array![[1.0]];
        let t = array![[0.0]];
        let (loss, g) = backward(&m, x.view(), t.view()).unwrap();
        assert_eq!(loss, 4.0);
        assert_eq!(g.layers[1].weights[[0, 0]], 4.0);
        assert!(grad_check(&m, x.view(), t.view(), 1e-5).unwrap() < 1e-10);
    }

    /// Identity hidden unit (x > 0) followed by weight `w`.
    fn one_weight_model(w: f64) -> MlpModel {
        let mut m = MlpModel::zeros(cfg(1, 1, 1, 1, 0)).unwrap();
        m.layers[0].weights[[0, 0]] = 1.0;
        m.layers[1].weights[[0, 0]] = w;
        m
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let m = MlpModel::new(cfg(4, 3, 3, 8, seed)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let x = Array2::from_shape_fn((7, 4), |_| rng.random_range(-1.0..1.0));
            let t = Array2::from_shape_fn((7, 3), |_| rng.random_range(-1.0..1.0));
            let err = grad_check(&m, x.view(), t.view(), 1e-5).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn zero_network_grad_check_is_exact() {
        let m = MlpModel::zeros(cfg(2, 1, 2, 3, 0)).unwrap();
        let x = array![[0.5, -0.5], [1.0, 2.0]];
        let t = Array2::zeros((2, 1));
        assert_eq!(grad_check(&m, x.view(), t.view(), 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut s = AdamState::new(3);
        let mut p = vec![1.0, -2.0, 0.5];
        s.step_slice(&mut p, &[0.0; 3], 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut s = AdamState::new(1);
        let mut p = vec![0.0];
        s.step_slice(&mut p, &[1.0], 0.001).unwrap();
        assert!((p[0] + 0.001 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn adam_minimizes_a_parabola() {
        // Scalar simulation of Adam on f(w) = w^2 from w = 1 with lr 0.1,
        // written out independently of the slice implementation.
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = 2.0 * w;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            w -= 0.1 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
        }
        let mut s = AdamState::new(1);
        let mut p = vec![1.0];
        for _ in 0..100 {
            let g = [2.0 * p[0]];
            s.step_slice(&mut p, &g, 0.1).unwrap();
        }
        assert!(p[0].abs() < 0.05);
        assert!((p[0] - w).abs() < 1e-12);
        assert!(s.step_slice(&mut [0.0, 1.0], &[0.0, 1.0], 0.1).is_err());
    }

    fn line_data() -> (Array2<f64>, Array2<f64>) {
        let x = Array2::from_shape_fn((100, 1), |(i, _)| -1.0 + 2.0 * i as f64 / 99.0);
        let t = x.mapv(|v| 2.0 * v + 1.0);
        (x, t)
    }

    fn line_schedule() -> TrainSchedule {
        TrainSchedule { epochs: 200, batch_size: 20, lr_initial: 0.01, lr_drop_epoch: 150, lr_drop_factor: 0.1 }
    }

    #[test]
    fn fits_a_line() {
        let (x, t) = line_data();
        let mut m = MlpModel::new(cfg(1, 1, 2, 16, 3)).unwrap();
        let r = train(&mut m, x.view(), t.view(), &line_schedule(), 5).unwrap();
        assert!(r.final_loss() < 1e-3, "{}", r.final_loss());
        let windows: Vec<f64> = r.loss_history.chunks(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
        assert!(windows[windows.len() - 1] < 1e-3 * windows[0], "{windows:?}");
    }

    #[test]
    fn training_is_deterministic() {
        let (x, t) = line_data();
        let mut a = MlpModel::new(cfg(1, 1, 2, 8, 3)).unwrap();
        let mut b = a.clone();
        let ra = train(&mut a, x.view(), t.view(), &line_schedule(), 5).unwrap();
        let rb = train(&mut b, x.view(), t.view(), &line_schedule(), 5).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut m = MlpModel::<f64>::new(cfg(1, 1, 1, 2, 0)).unwrap();
        let x = Array2::zeros((0, 1));
        assert!(matches!(train(&mut m, x.view(), x.view(), &line_schedule(), 0), Err(Error::Empty { .. })));
    }

    #[test]
    fn schedule_drops_rate() {
        let s = line_schedule();
        assert_eq!(s.learning_rate(149), 0.01);
        assert!((s.learning_rate(150) - 0.001).abs() < 1e-18);
        let bad = TrainSchedule { lr_drop_epoch: 300, ..s };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = MlpModel::new(cfg(3, 2, 2, 5, 1)).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: MlpModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        let tampered = json.replace("\"version\":1", "\"version\":9");
        assert!(serde_json::from_str::<MlpModel>(&tampered).is_err());
    }

    #[test]
    fn single_precision_checkpoint_keeps_its_dtype() {
        let m: MlpModel<f32> = MlpModel::<f64>::new(cfg(3, 2, 2, 5, 1)).unwrap().cast();
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<MlpModel<f32>>(&json).unwrap(), m);
        assert!(serde_json::from_str::<MlpModel<f64>>(&json).is_err());
    }

    #[test]
    fn single_precision_tracks_double() {
        let m = MlpModel::<f64>::new(cfg(4, 3, 3, 8, 2)).unwrap();
        let x = Array2::from_shape_fn((6, 4), |(i, j)| (i as f64 - 2.5) * 0.3 + j as f64 * 0.1);
        let wide = m.forward_batch(x.view()).unwrap();
        let narrow = m.cast::<f32>().forward_batch(x.mapv(|v| v as f32).view()).unwrap();
        for (a, b) in wide.iter().zip(&narrow) {
            assert!((a - *b as f64).abs() < 1e-5);
        }
    }
}
