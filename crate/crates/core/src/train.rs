//! Plain minibatch training of MLP classifiers, accuracy under noise, and
//! the fine-tune-under-noise grid search.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Rows, Split};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::mechanisms::{Family, NoiseSpec, Placement};
use crate::model::{argmax, Activation, Layer, LayeredModel};
use crate::rng::{purpose, NoiseGenerator, RandomSource};

/// Noisy evaluations are averaged over this many independent draws.
pub const EVAL_REPEATS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub units: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn relu(units: usize) -> Self {
        Self {
            units,
            activation: Activation::Relu,
        }
    }

    pub fn identity(units: usize) -> Self {
        Self {
            units,
            activation: Activation::Identity,
        }
    }
}

/// Hidden relu layers of the given widths followed by a linear read-out.
pub fn mlp_arch(hidden: &[usize], classes: usize) -> Vec<LayerSpec> {
    hidden
        .iter()
        .map(|&h| LayerSpec::relu(h))
        .chain(std::iter::once(LayerSpec::identity(classes)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Standard deviation of Gaussian noise added to every training input,
    /// freshly drawn each epoch.
    #[serde(default)]
    pub noise_sigma: f64,
    /// Candidate training-noise levels for [`finetune_noisy`].
    #[serde(default)]
    pub sigma_grid: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            seed: 0,
            noise_sigma: 0.0,
            sigma_grid: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be ≥ 1".into()));
        }
        // A zero step is allowed: it leaves the initialization untouched.
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig(format!("bad noise_sigma {}", self.noise_sigma)));
        }
        if self.sigma_grid.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidConfig("sigma_grid entries must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Uniform `[−1/√fan_in, 1/√fan_in]` weights and biases.
pub fn init_model(input_dim: usize, arch: &[LayerSpec], seed: u64) -> Result<LayeredModel> {
    if arch.is_empty() || arch.iter().any(|l| l.units == 0) {
        return Err(Error::InvalidConfig("architecture needs non-empty layers".into()));
    }
    let mut g = RandomSource::for_trial(seed, 0, purpose::INIT).generator();
    let mut fan_in = input_dim;
    let mut layers = Vec::with_capacity(arch.len());
    for spec in arch {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let uniform = |g: &mut NoiseGenerator| bound * (2.0 * g.uniform_open() - 1.0);
        let w: Vec<f64> = (0..spec.units * fan_in).map(|_| uniform(&mut g)).collect();
        let b: Vec<f64> = (0..spec.units).map(|_| uniform(&mut g)).collect();
        layers.push(Layer::new(
            Matrix::from_row_major(spec.units, fan_in, w)?,
            b,
            spec.activation,
        )?);
        fan_in = spec.units;
    }
    LayeredModel::new(input_dim, layers)
}

/// Gradients of the loss with respect to every weight and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &LayeredModel) -> Self {
        Self {
            weights: model
                .layers()
                .iter()
                .map(|l| vec![0.0; l.weights.as_slice().len()])
                .collect(),
            biases: model.layers().iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    fn add_scaled(&mut self, other: &Gradients, s: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += s * y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += s * y);
        }
    }
}

/// `−ln softmax(logits)[label]`, computed with the log-sum-exp shift.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Softmax cross-entropy loss of one sample and its gradient (backprop).
pub fn loss_and_gradient(model: &LayeredModel, x: &[f64], label: usize) -> (f64, Gradients) {
    let layers = model.layers();
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    let mut h = x.to_vec();
    for layer in layers {
        let z = layer.affine(&h);
        let next = z.iter().map(|&v| layer.activation.apply(v)).collect();
        inputs.push(std::mem::replace(&mut h, next));
        pre.push(z);
    }
    let loss = cross_entropy(&h, label);

    let max = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = h.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let mut delta: Vec<f64> = exps.iter().map(|e| e / total).collect();
    delta[label] -= 1.0;

    let mut grads = Gradients::zeros_like(model);
    for l in (0..layers.len()).rev() {
        let layer = &layers[l];
        for (d, z) in delta.iter_mut().zip(&pre[l]) {
            *d *= layer.activation.derivative(*z);
        }
        let cols = layer.in_dim();
        let gw = &mut grads.weights[l];
        for (r, &d) in delta.iter().enumerate() {
            if d != 0.0 {
                for (g, a) in gw[r * cols..(r + 1) * cols].iter_mut().zip(&inputs[l]) {
                    *g = d * a;
                }
            }
        }
        grads.biases[l].copy_from_slice(&delta);
        if l > 0 {
            delta = layer.weights.mul_vec_transposed(&delta);
        }
    }
    (loss, grads)
}

fn apply_step(model: &mut LayeredModel, grads: &Gradients, lr: f64) {
    for (l, layer) in model.layers_mut().iter_mut().enumerate() {
        for (w, g) in layer.weights.as_mut_slice().iter_mut().zip(&grads.weights[l]) {
            *w -= lr * g;
        }
        for (b, g) in layer.bias.iter_mut().zip(&grads.biases[l]) {
            *b -= lr * g;
        }
    }
}

/// Per-epoch mean training loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
}

/// Continues training `model` in place on `rows`. Returns per-epoch losses.
pub fn fit(model: &mut LayeredModel, rows: &Rows<'_>, config: &TrainConfig) -> Result<Vec<f64>> {
    config.validate()?;
    if rows.is_empty() {
        return Err(Error::InvalidDataset("no training rows".into()));
    }
    if rows.features[0].len() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            actual: rows.features[0].len(),
        });
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        RandomSource::for_trial(config.seed, epoch as u64, purpose::TRAIN_SHUFFLE)
            .generator()
            .shuffle(&mut order);
        let mut noise = RandomSource::for_trial(config.seed, epoch as u64, purpose::TRAIN_NOISE)
            .generator();
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut acc = Gradients::zeros_like(model);
            for &i in batch {
                let x = rows.features[i];
                let (loss, g) = if config.noise_sigma > 0.0 {
                    let z = noise.gaussian_vec(config.noise_sigma, x.len());
                    let noisy: Vec<f64> = x.iter().zip(z).map(|(a, b)| a + b).collect();
                    loss_and_gradient(model, &noisy, rows.labels[i])
                } else {
                    loss_and_gradient(model, x, rows.labels[i])
                };
                total += loss;
                acc.add_scaled(&g, 1.0 / batch.len() as f64);
            }
            apply_step(model, &acc, config.learning_rate);
        }
        let mean = total / rows.len() as f64;
        if !mean.is_finite()
            || model
                .layers()
                .iter()
                .any(|l| !l.weights.all_finite() || l.bias.iter().any(|b| !b.is_finite()))
        {
            return Err(Error::Diverged { epoch });
        }
        losses.push(mean);
    }
    Ok(losses)
}

/// Trains a fresh model on the train split.
pub fn train(dataset: &Dataset, arch: &[LayerSpec], config: &TrainConfig) -> Result<LayeredModel> {
    Ok(train_with_report(dataset, arch, config)?.0)
}

pub fn train_with_report(
    dataset: &Dataset,
    arch: &[LayerSpec],
    config: &TrainConfig,
) -> Result<(LayeredModel, TrainReport)> {
    config.validate()?;
    let out = arch.last().map_or(0, |l| l.units);
    if out != dataset.classes() {
        return Err(Error::InvalidConfig(format!(
            "last layer has {out} units for {} classes",
            dataset.classes()
        )));
    }
    let rows = dataset.split(Split::Train)?;
    let mut model = init_model(dataset.dim(), arch, config.seed)?;
    let epoch_losses = fit(&mut model, &rows, config)?;
    let train_accuracy = accuracy(&model, &rows)?;
    let val_accuracy = match dataset.split(Split::Val) {
        Ok(v) => Some(accuracy(&model, &v)?),
        Err(_) => None,
    };
    Ok((
        model,
        TrainReport {
            config: config.clone(),
            epoch_losses,
            train_accuracy,
            val_accuracy,
        },
    ))
}

pub fn accuracy(model: &LayeredModel, rows: &Rows<'_>) -> Result<f64> {
    let mut hits = 0usize;
    for (x, &y) in rows.features.iter().zip(&rows.labels) {
        if model.predict(x)? == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / rows.len() as f64)
}

/// Additive noise used during evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalNoise {
    pub family: Family,
    pub scale: f64,
    pub placement: Placement,
}

impl EvalNoise {
    pub fn gaussian_input(sigma: f64) -> Self {
        Self {
            family: Family::Gaussian,
            scale: sigma,
            placement: Placement::Input,
        }
    }
}

impl From<&NoiseSpec> for EvalNoise {
    fn from(s: &NoiseSpec) -> Self {
        Self {
            family: s.family,
            scale: s.scale,
            placement: s.placement,
        }
    }
}

fn noisy_predict(model: &LayeredModel, x: &[f64], noise: &EvalNoise, rng: &RandomSource) -> Result<usize> {
    let draw = |n: usize| {
        let mut g = rng.generator();
        match noise.family {
            Family::Gaussian => g.gaussian_vec(noise.scale, n),
            Family::Laplace => g.laplace_vec(noise.scale, n),
        }
    };
    let out = match noise.placement {
        Placement::Input => {
            let z = draw(x.len());
            let noisy: Vec<f64> = x.iter().zip(z).map(|(a, b)| a + b).collect();
            model.forward(&noisy)?
        }
        Placement::Output => {
            let mut y = model.forward(x)?;
            let z = draw(y.len());
            y.iter_mut().zip(z).for_each(|(a, b)| *a += b);
            y
        }
    };
    Ok(argmax(&out))
}

/// Accuracy of each of `repeats` noisy evaluations. Draw `t` of example `i`
/// uses stream `(seed, t)` → substream `i`, so the result does not depend
/// on scheduling.
pub fn noisy_accuracies(
    model: &LayeredModel,
    rows: &Rows<'_>,
    noise: Option<&EvalNoise>,
    seed: u64,
    repeats: usize,
) -> Result<Vec<f64>> {
    let Some(noise) = noise.filter(|n| n.scale > 0.0) else {
        let clean = accuracy(model, rows)?;
        return Ok(vec![clean; repeats]);
    };
    (0..repeats)
        .into_par_iter()
        .map(|t| {
            let trial = RandomSource::for_trial(seed, t as u64, purpose::EVAL);
            let mut hits = 0usize;
            for (i, (x, &y)) in rows.features.iter().zip(&rows.labels).enumerate() {
                let rng = trial.substream(i as u64, purpose::NOISE);
                if noisy_predict(model, x, noise, &rng)? == y {
                    hits += 1;
                }
            }
            Ok(hits as f64 / rows.len() as f64)
        })
        .collect()
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    /// Training-noise level of this candidate.
    pub sigma: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub accuracies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub target_sigma: f64,
    pub config: TrainConfig,
    pub candidates: Vec<CandidateReport>,
    pub selected: usize,
    pub selected_sigma: f64,
}

/// Grid search over training-noise levels.
///
/// Each σ in `config.sigma_grid` fine-tunes a copy of `model` with input
/// noise σ, then scores it by validation accuracy under Gaussian input noise
/// of `target_sigma`, averaged over [`EVAL_REPEATS`] draws. All candidates
/// see the same evaluation noise. The best mean wins; ties go to the smaller
/// σ.
pub fn finetune_noisy(
    model: &LayeredModel,
    dataset: &Dataset,
    config: &TrainConfig,
    target_sigma: f64,
) -> Result<(LayeredModel, FinetuneReport)> {
    config.validate()?;
    if config.sigma_grid.is_empty() {
        return Err(Error::InvalidConfig("sigma_grid is empty".into()));
    }
    if !(target_sigma.is_finite() && target_sigma >= 0.0) {
        return Err(Error::InvalidConfig(format!("bad target sigma {target_sigma}")));
    }
    let train_rows = dataset.split(Split::Train)?;
    let val_rows = dataset.split(Split::Val)?;
    let eval_noise = EvalNoise::gaussian_input(target_sigma);
    let eval_seed = crate::rng::derive_stream(config.seed, 0, purpose::EVAL);

    let results = config
        .sigma_grid
        .par_iter()
        .map(|&sigma| {
            let mut candidate = model.clone();
            let cfg = TrainConfig {
                noise_sigma: sigma,
                ..config.clone()
            };
            fit(&mut candidate, &train_rows, &cfg)?;
            let accuracies =
                noisy_accuracies(&candidate, &val_rows, Some(&eval_noise), eval_seed, EVAL_REPEATS)?;
            let (mean_accuracy, std_accuracy) = mean_std(&accuracies);
            Ok((
                candidate,
                CandidateReport {
                    sigma,
                    mean_accuracy,
                    std_accuracy,
                    accuracies,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut selected = 0;
    for (i, (_, c)) in results.iter().enumerate() {
        let best = &results[selected].1;
        if c.mean_accuracy > best.mean_accuracy
            || (c.mean_accuracy == best.mean_accuracy && c.sigma < best.sigma)
        {
            selected = i;
        }
    }
    let selected_sigma = results[selected].1.sigma;
    let (models, candidates): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let chosen = models.into_iter().nth(selected).expect("selected index in range");
    Ok((
        chosen,
        FinetuneReport {
            target_sigma,
            config: config.clone(),
            candidates,
            selected,
            selected_sigma,
        },
    ))
}
