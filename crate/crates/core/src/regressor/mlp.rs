use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureLayout, FeatureVector};
use crate::error::{Error, Result};

/// Predictions are `OUTPUT_SCALE · σ(z)`, covering the CMF range (0, 2).
pub const OUTPUT_SCALE: f64 = 2.0;
/// Output pre-activations are clamped here so the prediction stays strictly
/// inside (0, 2) in floating point.
const Z_LIMIT: f64 = 30.0;
const ABS_FLOOR: f64 = 1e-7;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layer {
    /// `outputs × inputs`
    pub(crate) w: Array2<f64>,
    pub(crate) b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_widths: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs without improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    /// Share of the training data held out to drive early stopping.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_widths: vec![64, 32],
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            patience: 20,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(Error::Config("hidden widths must be non-empty and positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean squared error on the fitting portion after each epoch.
    pub epoch_losses: Vec<f64>,
    pub validation_losses: Vec<f64>,
    pub best_epoch: usize,
    /// Mean squared error over all supplied samples under the returned model.
    pub final_loss: f64,
}

/// Logistic MLP; every hidden layer and the output use σ.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layout: FeatureLayout,
    pub widths: Vec<usize>,
    pub(crate) layers: Vec<Layer>,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub seed: u64,
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases, identity input normalization.
    pub fn new_random(layout: FeatureLayout, widths: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![layout.len()];
        dims.extend_from_slice(widths);
        dims.push(1);
        let layers = dims
            .windows(2)
            .map(|d| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    w: Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-a..a)),
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        let n = layout.len();
        MlpModel {
            layout,
            widths: widths.to_vec(),
            layers,
            input_mean: vec![0.0; n],
            input_scale: vec![1.0; n],
            seed,
        }
    }

    /// Builds a model from flat parameters in [`MlpModel::flat_params`] order.
    pub fn from_parameters(
        layout: FeatureLayout,
        widths: &[usize],
        params: &[f64],
        input_mean: Vec<f64>,
        input_scale: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        let mut model = MlpModel::new_random(layout, widths, seed);
        let n = model.input_dim();
        if input_mean.len() != n || input_scale.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: input_mean.len().min(input_scale.len()),
            });
        }
        model.set_flat_params(params)?;
        model.input_mean = input_mean;
        model.input_scale = input_scale;
        Ok(model)
    }

    pub fn input_dim(&self) -> usize {
        self.layout.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Per layer: weights row-major, then biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|w| *w = it.next().expect("length checked"));
            l.b.iter_mut().for_each(|b| *b = it.next().expect("length checked"));
        }
        Ok(())
    }

    fn standardize(&self, raw: ArrayView2<f64>) -> Array2<f64> {
        let mean = Array1::from(self.input_mean.clone());
        let scale = Array1::from(self.input_scale.clone());
        (&raw - &mean) / &scale
    }

    /// Hidden activations (input first) and output pre-activations.
    fn forward(&self, x: &Array2<f64>) -> (Vec<Array2<f64>>, Array1<f64>) {
        let mut acts = vec![x.clone()];
        let (out_layer, hidden) = self.layers.split_last().expect("at least one layer");
        for l in hidden {
            let z = acts.last().expect("non-empty").dot(&l.w.t()) + &l.b;
            acts.push(z.mapv(sigmoid));
        }
        let z = acts.last().expect("non-empty").dot(&out_layer.w.t()) + &out_layer.b;
        (acts, z.column(0).to_owned())
    }

    fn output(z: f64) -> f64 {
        OUTPUT_SCALE * sigmoid(z.clamp(-Z_LIMIT, Z_LIMIT))
    }

    fn output_derivative(z: f64) -> f64 {
        if z.abs() >= Z_LIMIT {
            0.0
        } else {
            let s = sigmoid(z);
            OUTPUT_SCALE * s * (1.0 - s)
        }
    }

    fn predict_standardized(&self, x: &Array2<f64>) -> Vec<f64> {
        self.forward(x).1.iter().map(|&z| Self::output(z)).collect()
    }

    pub fn predict(&self, v: &FeatureVector) -> Result<f64> {
        Ok(self.predict_values(std::slice::from_ref(&v.values))?[0])
    }

    pub fn predict_values(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        let n = self.input_dim();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: bad.len(),
            });
        }
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let raw = to_matrix(rows);
        Ok(self.predict_standardized(&self.standardize(raw.view())))
    }

    /// Mean-squared-error gradient for a standardized batch, in flat order.
    fn gradient(&self, x: &Array2<f64>, y: &[f64]) -> (f64, Vec<f64>) {
        let batch = x.nrows() as f64;
        let (acts, z) = self.forward(x);
        let yhat: Vec<f64> = z.iter().map(|&v| Self::output(v)).collect();
        let loss = yhat.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / batch;

        let mut delta = Array2::from_shape_fn((x.nrows(), 1), |(i, _)| {
            2.0 * (yhat[i] - y[i]) / batch * Self::output_derivative(z[i])
        });
        let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let a_in = &acts[li];
            grads.push((delta.t().dot(a_in), delta.sum_axis(Axis(0))));
            if li > 0 {
                let back = delta.dot(&layer.w);
                delta = back * a_in.mapv(|a| a * (1.0 - a));
            }
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(self.param_count());
        for (gw, gb) in grads {
            flat.extend(gw.iter());
            flat.extend(gb.iter());
        }
        (loss, flat)
    }

    fn mse_standardized(&self, x: &Array2<f64>, y: &[f64]) -> f64 {
        if y.is_empty() {
            return 0.0;
        }
        let p = self.predict_standardized(x);
        p.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> Array2<f64> {
    let cols = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), cols), |(i, j)| rows[i][j])
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
        }
    }
}

/// Fits the MLP by mini-batch Adam on the mean squared error.
pub fn train(
    layout: &FeatureLayout,
    features: &[FeatureVector],
    targets: &[f64],
    config: &TrainConfig,
) -> Result<(MlpModel, TrainReport)> {
    config.validate()?;
    if features.is_empty() {
        return Err(Error::EmptyInput("no training samples".into()));
    }
    if features.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            actual: targets.len(),
        });
    }
    let n_in = layout.len();
    for (i, f) in features.iter().enumerate() {
        if f.len() != n_in {
            return Err(Error::DimensionMismatch {
                expected: n_in,
                actual: f.len(),
            });
        }
        if let Some(j) = f.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                sample: i,
                coordinate: j,
            });
        }
    }
    if let Some(t) = targets.iter().find(|t| !(**t > 0.0 && **t <= OUTPUT_SCALE)) {
        return Err(Error::Domain(format!("target {t} outside (0, 2]")));
    }

    let rows: Vec<Vec<f64>> = features.iter().map(|f| f.values.clone()).collect();
    let raw = to_matrix(&rows);
    let mean = raw.mean_axis(Axis(0)).expect("non-empty");
    let std = raw.std_axis(Axis(0), 0.0);

    let mut model = MlpModel::new_random(layout.clone(), &config.hidden_widths, config.seed);
    model.input_mean = mean.to_vec();
    model.input_scale = std.iter().map(|&s| if s > 1e-12 { s } else { 1.0 }).collect();
    let x_all = model.standardize(raw.view());

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if config.validation_fraction > 0.0 && features.len() >= 10 {
        ((features.len() as f64 * config.validation_fraction).round() as usize).max(1)
    } else {
        0
    };
    let (val_idx, fit_idx) = order.split_at(n_val);
    let select = |idx: &[usize]| -> (Array2<f64>, Vec<f64>) {
        (
            x_all.select(Axis(0), idx),
            idx.iter().map(|&i| targets[i]).collect(),
        )
    };
    let (x_fit, y_fit) = select(fit_idx);
    let (x_val, y_val) = select(val_idx);

    let mut params = model.flat_params();
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut epoch_losses = Vec::new();
    let mut validation_losses = Vec::new();
    let mut batch_order: Vec<usize> = (0..x_fit.nrows()).collect();

    for epoch in 0..config.epochs {
        batch_order.shuffle(&mut rng);
        for chunk in batch_order.chunks(config.batch_size) {
            let xb = x_fit.select(Axis(0), chunk);
            let yb: Vec<f64> = chunk.iter().map(|&i| y_fit[i]).collect();
            let (_, grad) = model.gradient(&xb, &yb);
            adam.step(&mut params, &grad);
            model.set_flat_params(&params)?;
        }
        let fit_loss = model.mse_standardized(&x_fit, &y_fit);
        epoch_losses.push(fit_loss);
        let monitored = if n_val > 0 {
            let v = model.mse_standardized(&x_val, &y_val);
            validation_losses.push(v);
            v
        } else {
            fit_loss
        };
        if !monitored.is_finite() {
            return Err(Error::Pipeline(format!("training diverged at epoch {epoch}")));
        }
        if monitored < best.0 {
            best = (monitored, params.clone(), epoch);
        } else if config.patience > 0 && epoch - best.2 >= config.patience {
            break;
        }
    }
    model.set_flat_params(&best.1)?;
    let final_loss = model.mse_standardized(&x_all, targets);
    Ok((
        model,
        TrainReport {
            epoch_losses,
            validation_losses,
            best_epoch: best.2,
            final_loss,
        },
    ))
}

/// Largest relative gap between the analytic squared-error gradient and a
/// central finite difference with step `1e-5`. Coordinates whose absolute gap
/// is below `1e-7` count as exact.
pub fn gradient_check(model: &MlpModel, v: &FeatureVector, target: f64) -> Result<f64> {
    gradient_check_with_step(model, v, target, 1e-5)
}

pub fn gradient_check_with_step(model: &MlpModel, v: &FeatureVector, target: f64, step: f64) -> Result<f64> {
    if v.len() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            actual: v.len(),
        });
    }
    let x = model.standardize(to_matrix(std::slice::from_ref(&v.values)).view());
    let (_, analytic) = model.gradient(&x, &[target]);
    let base = model.flat_params();
    let mut probe = model.clone();
    let mut loss_at = |params: &[f64]| -> f64 {
        probe.set_flat_params(params).expect("same length");
        let p = probe.predict_standardized(&x)[0];
        (p - target).powi(2)
    };
    let mut worst: f64 = 0.0;
    let mut params = base.clone();
    for i in 0..base.len() {
        params[i] = base[i] + step;
        let up = loss_at(&params);
        params[i] = base[i] - step;
        let down = loss_at(&params);
        params[i] = base[i];
        let numeric = (up - down) / (2.0 * step);
        let gap = (analytic[i] - numeric).abs();
        if gap <= ABS_FLOOR {
            continue;
        }
        worst = worst.max(gap / analytic[i].abs().max(numeric.abs()));
    }
    Ok(worst)
}
