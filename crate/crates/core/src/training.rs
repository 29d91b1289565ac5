//! Unsupervised training loop: ranging module → EKF → alignment cost,
//! gradient updates, validation-selected snapshot.
//!
//! The default recipe takes one clipped Adam step per training dataset with
//! a cosine-decayed rate. [`TrainConfig::plain_gd`] gives a single full-batch
//! `θ ← θ − μ·g` step per epoch instead.
//!
//! The MLP is evaluated off-tape. Its outputs enter the tape as leaves, the
//! EKF and cost are recorded, and the leaf adjoints are pushed back through
//! cached activations. This is exact reverse mode with the MLP treated as one
//! fused node.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{aligned_cost, TrajectoryPair};
use crate::autodiff::Tape;
use crate::dataset::Dataset;
use crate::error::{config, Error, Result};
use crate::positioning::{Positioner, RangingResult};
use crate::ranging_nn::{Bounds, RangingModule, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Optimizer {
    /// `θ ← θ − μ·clip(g)`.
    PaperGd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl Optimizer {
    pub const ADAM: Optimizer = Optimizer::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::ADAM
    }
}

/// Which datasets feed each parameter update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Batching {
    /// One update per epoch on the summed cost of every training dataset.
    Full,
    /// One update per training dataset, visited in a per-epoch shuffled order.
    #[default]
    PerDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from `μ` at epoch 1 toward `final_fraction·μ`.
    Cosine {
        final_fraction: f64,
    },
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::Cosine { final_fraction: 0.1 }
    }
}

impl LrSchedule {
    pub fn rate(&self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine { final_fraction } => {
                let t = (epoch - 1) as f64 / epochs as f64;
                base * (final_fraction + (1.0 - final_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
            }
        }
    }
}

/// Output-head biases at initialisation; weights are always Glorot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HeadInit {
    Zero,
    /// Shift the head biases so the mean outputs over the training
    /// measurements are the mean raw distance and `s`. Label-free.
    DataMean {
        s: f64,
    },
}

impl Default for HeadInit {
    fn default() -> Self {
        HeadInit::DataMean { s: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub split: f64,
    pub seed: u64,
    /// Global gradient-norm ceiling per update; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub optimizer: Optimizer,
    pub batching: Batching,
    pub schedule: LrSchedule,
    pub head_init: HeadInit,
    pub shape: Shape,
    pub bounds: Bounds,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.006,
            epochs: 200,
            split: 0.7,
            seed: 0,
            clip_norm: Some(10.0),
            optimizer: Optimizer::default(),
            batching: Batching::default(),
            schedule: LrSchedule::default(),
            head_init: HeadInit::default(),
            shape: Shape::default(),
            bounds: Bounds::default(),
        }
    }
}

impl TrainConfig {
    /// Plain full-batch gradient descent from a zero-bias Glorot start at a
    /// constant `μ = 0.01`.
    pub fn plain_gd() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            optimizer: Optimizer::PaperGd,
            batching: Batching::Full,
            schedule: LrSchedule::Constant,
            head_init: HeadInit::Zero,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(config(format!("split must lie in (0, 1), got {}", self.split)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(config("epochs must be at least 1"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(config("clip norm must be positive"));
            }
        }
        if let LrSchedule::Cosine { final_fraction } = self.schedule {
            if !(0.0..=1.0).contains(&final_fraction) {
                return Err(config("cosine final_fraction must lie in [0, 1]"));
            }
        }
        if let HeadInit::DataMean { s } = self.head_init {
            if !(s > 0.0 && s < self.bounds.s_max) {
                return Err(config(format!(
                    "head-init s must lie in (0, {}), got {s}",
                    self.bounds.s_max
                )));
            }
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return Err(config("Adam needs beta1, beta2 in [0, 1) and eps > 0"));
            }
        }
        Ok(())
    }
}

/// Shuffles indices with `seed` and cuts at `round(ratio·n)`, clamped so
/// both sides keep at least one dataset.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Dataset(format!("need at least 2 datasets to split, got {n}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(config(format!("split must lie in (0, 1), got {ratio}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let val = idx.split_off(cut);
    Ok((idx, val))
}

pub fn split_datasets<T: Clone>(datasets: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (t, v) = split_indices(datasets.len(), ratio, seed)?;
    Ok((
        t.iter().map(|&i| datasets[i].clone()).collect(),
        v.iter().map(|&i| datasets[i].clone()).collect(),
    ))
}

/// Untaped alignment cost of one dataset.
pub fn dataset_cost(dataset: &Dataset, module: &RangingModule, positioner: &Positioner<'_>) -> Result<f64> {
    let traj = positioner.run_with_module(&dataset.measurement_lists(), module)?;
    Ok(aligned_cost(&TrajectoryPair::new(&traj, &dataset.pdr.positions)?))
}

/// Cost of one dataset and its gradient with respect to every parameter.
pub fn dataset_cost_and_grad(
    dataset: &Dataset,
    module: &RangingModule,
    positioner: &Positioner<'_>,
) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::new();
    let mut caches = Vec::new();
    let mut steps = Vec::with_capacity(dataset.len());
    for step in &dataset.steps {
        let mut results = Vec::with_capacity(step.len());
        for m in step {
            let cache = module.forward_cached(&m.ftm);
            let (d, s) = module.outputs(&cache);
            let (d, s) = (tape.var(d), tape.var(s));
            caches.push((cache, d.index(), s.index()));
            results.push(RangingResult { ap_id: m.ap_id, d, s });
        }
        steps.push(results);
    }
    let traj = positioner.run(&steps, tape.constant(0.0))?;
    let cost = aligned_cost(&TrajectoryPair::new(&traj, &dataset.pdr.positions)?);
    let grads = tape.backward(cost)?;
    let mut grad = vec![0.0; module.params().len()];
    for (cache, d, s) in &caches {
        let (gd, gs) = (grads.at(*d), grads.at(*s));
        if gd != 0.0 || gs != 0.0 {
            module.backprop(cache, gd, gs, &mut grad);
        }
    }
    Ok((cost.value(), grad))
}

/// Sum of per-dataset costs, accumulated in list order.
pub fn epoch_cost(datasets: &[Dataset], module: &RangingModule, positioner: &Positioner<'_>) -> Result<f64> {
    let costs: Vec<f64> = datasets
        .par_iter()
        .map(|ds| dataset_cost(ds, module, positioner))
        .collect::<Result<_>>()?;
    Ok(costs.iter().sum())
}

/// Summed cost and gradient, accumulated in list order.
pub fn epoch_cost_and_grad(
    datasets: &[Dataset],
    module: &RangingModule,
    positioner: &Positioner<'_>,
) -> Result<(f64, Vec<f64>)> {
    let parts: Vec<(f64, Vec<f64>)> = datasets
        .par_iter()
        .map(|ds| dataset_cost_and_grad(ds, module, positioner))
        .collect::<Result<_>>()?;
    let mut cost = 0.0;
    let mut grad = vec![0.0; module.params().len()];
    for (c, g) in parts {
        cost += c;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((cost, grad))
}

/// Rescales `grad` in place to at most `max_norm`; returns the original norm.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= k);
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_cost: f64,
    pub val_cost: f64,
    pub is_best: bool,
    /// Training-gradient norm before clipping.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().rfind(|r| r.is_best)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_cost,val_cost,is_best\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_cost, r.val_cost, r.is_best));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(self.to_csv().as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot at the lowest validation cost.
    pub best: RangingModule,
    /// Parameters after the last update.
    pub last: RangingModule,
    pub history: History,
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Splits `datasets`, initialises the module from `config.seed` and runs
/// `config.epochs` epochs.
pub fn train(datasets: &[Dataset], config: &TrainConfig, positioner: &Positioner<'_>) -> Result<TrainOutcome> {
    train_with(datasets, config, positioner, |_| {})
}

/// [`train`] with a per-epoch callback for progress reporting.
pub fn train_with(
    datasets: &[Dataset],
    config: &TrainConfig,
    positioner: &Positioner<'_>,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut module = initial_module(config)?;
    if let HeadInit::DataMean { s } = config.head_init {
        let (train_ids, _) = split_indices(datasets.len(), config.split, config.seed)?;
        let train_set: Vec<&Dataset> = train_ids.iter().map(|&i| &datasets[i]).collect();
        init_head_biases(&mut module, &train_set, s);
    }
    train_from(datasets, config, positioner, module, on_epoch)
}

/// Glorot-initialised module drawn from stream 1 of `config.seed`.
pub fn initial_module(config: &TrainConfig) -> Result<RangingModule> {
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_rng.set_stream(1);
    RangingModule::init(config.shape.clone(), config.bounds, &mut init_rng)
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Shifts the head biases so the mean outputs over every measurement in
/// `datasets` become the mean raw distance and `s_target`. No-op without
/// measurements.
pub fn init_head_biases(module: &mut RangingModule, datasets: &[&Dataset], s_target: f64) {
    let xs: Vec<_> = datasets
        .iter()
        .flat_map(|d| d.steps.iter().flatten().map(|m| m.ftm))
        .collect();
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let (sum_d, sum_s, sum_raw) = xs.iter().fold((0.0, 0.0, 0.0), |acc, x| {
        let (d, s) = module.forward(x);
        (acc.0 + d, acc.1 + s, acc.2 + x.d_ftm)
    });
    let Bounds { d_max, s_max } = module.bounds;
    // keep targets strictly inside the sigmoid range
    let clamp = |v: f64, max: f64| v.clamp(1e-3 * max, (1.0 - 1e-3) * max);
    let shift_d = logit(clamp(sum_raw / n, d_max) / d_max) - logit(clamp(sum_d / n, d_max) / d_max);
    let shift_s = logit(clamp(s_target, s_max) / s_max) - logit(clamp(sum_s / n, s_max) / s_max);
    let (bd, bs) = (module.distance_bias_index(), module.std_bias_index());
    let params = module.params_mut();
    params[bd] += shift_d;
    params[bs] += shift_s;
}

fn check_finite(epoch: usize, cost: f64, grad: &[f64], module: &RangingModule) -> Result<()> {
    if cost.is_finite() && grad.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteCost {
            epoch,
            snapshot: module.params().to_vec(),
        })
    }
}

/// [`train_with`] starting from the given parameters.
///
/// With [`Batching::PerDataset`] the recorded training cost is the sum of each
/// dataset's cost just before its own update.
pub fn train_from(
    datasets: &[Dataset],
    config: &TrainConfig,
    positioner: &Positioner<'_>,
    initial: RangingModule,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let (train_ids, val_ids) = split_indices(datasets.len(), config.split, config.seed)?;
    let train_set: Vec<Dataset> = train_ids.iter().map(|&i| datasets[i].clone()).collect();
    let val_set: Vec<Dataset> = val_ids.iter().map(|&i| datasets[i].clone()).collect();

    let mut module = initial;
    let n_params = module.params().len();
    let mut best = module.clone();
    let mut best_val = f64::INFINITY;
    let mut history = History::default();
    let mut adam = AdamState {
        m: vec![0.0; n_params],
        v: vec![0.0; n_params],
        t: 0,
    };
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    order_rng.set_stream(2);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        let mu = config.schedule.rate(config.learning_rate, epoch, config.epochs);
        let (train_cost, grad_norm) = match config.batching {
            Batching::Full => {
                let (cost, mut grad) = epoch_cost_and_grad(&train_set, &module, positioner)?;
                check_finite(epoch, cost, &grad, &module)?;
                let norm = clip(&mut grad, config.clip_norm);
                apply_update(&mut module, &grad, mu, config.optimizer, &mut adam);
                (cost, norm)
            }
            Batching::PerDataset => {
                order.shuffle(&mut order_rng);
                let mut cost = 0.0;
                let mut total = vec![0.0; n_params];
                for &i in &order {
                    let (c, mut grad) = dataset_cost_and_grad(&train_set[i], &module, positioner)?;
                    check_finite(epoch, c, &grad, &module)?;
                    cost += c;
                    total.iter_mut().zip(&grad).for_each(|(t, g)| *t += g);
                    clip(&mut grad, config.clip_norm);
                    apply_update(&mut module, &grad, mu, config.optimizer, &mut adam);
                }
                (cost, total.iter().map(|g| g * g).sum::<f64>().sqrt())
            }
        };

        let val_cost = epoch_cost(&val_set, &module, positioner)?;
        check_finite(epoch, val_cost, &[], &module)?;
        let is_best = val_cost < best_val;
        if is_best {
            best_val = val_cost;
            best = module.clone();
        }
        let rec = EpochRecord {
            epoch,
            train_cost,
            val_cost,
            is_best,
            grad_norm,
        };
        on_epoch(&rec);
        history.epochs.push(rec);
    }
    Ok(TrainOutcome {
        best,
        last: module,
        history,
        train_ids,
        val_ids,
    })
}

/// Clips when configured; returns the norm before clipping.
fn clip(grad: &mut [f64], max_norm: Option<f64>) -> f64 {
    match max_norm {
        Some(c) => clip_global_norm(grad, c),
        None => grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
    }
}

fn apply_update(module: &mut RangingModule, grad: &[f64], mu: f64, optimizer: Optimizer, adam: &mut AdamState) {
    match optimizer {
        Optimizer::PaperGd => {
            for (p, g) in module.params_mut().iter_mut().zip(grad) {
                *p -= mu * g;
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            adam.t += 1;
            let c1 = 1.0 - beta1.powi(adam.t);
            let c2 = 1.0 - beta2.powi(adam.t);
            for (i, p) in module.params_mut().iter_mut().enumerate() {
                let g = grad[i];
                adam.m[i] = beta1 * adam.m[i] + (1.0 - beta1) * g;
                adam.v[i] = beta2 * adam.v[i] + (1.0 - beta2) * g * g;
                *p -= mu * (adam.m[i] / c1) / ((adam.v[i] / c2).sqrt() + eps);
            }
        }
    }
}
