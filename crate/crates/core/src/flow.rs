//! Flow-matching training, Euler inference, and the direct angle-regression
//! baseline.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::canon::{canonical_frame, CanonicalFrame};
use crate::coupling::{build_coupled_pair, CoupledPair};
use crate::decode::sort_by_angle;
use crate::error::{CycflowError, Result};
use crate::geometry::{center, wrap_angle, Point};
use crate::instances::{Dataset, Instance, Provenance, Tour};
use crate::model::{
    direct_loss_and_grad, forward, init_params, loss_and_grad, unit_directions, DirectSample,
    FlowSample, LossAndGrad, ModelConfig, ModelParams,
};
use crate::optim::{clip_grad_norm, cosine_lr, Adam};

pub const DEFAULT_STEPS: usize = 20;

/// Samples per gradient shard; shards are reduced in a fixed order.
const SHARD: usize = 8;

/// `(1 − t)·x0 + t·x1`.
pub fn sample_interpolant(pair: &CoupledPair, t: f64) -> Result<Vec<Point>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(CycflowError::Domain(format!("t must lie in [0, 1], got {t}")));
    }
    Ok(interpolate(&pair.x0, &pair.x1, t))
}

fn interpolate(x0: &[Point], x1: &[Point], t: f64) -> Vec<Point> {
    x0.iter()
        .zip(x1)
        .map(|(a, b)| [(1.0 - t) * a[0] + t * b[0], (1.0 - t) * a[1] + t * b[1]])
        .collect()
}

/// The constant conditional velocity `x1 − x0`.
pub fn target_velocity(pair: &CoupledPair) -> Vec<Point> {
    pair.displacement()
}

/// A coupled pair expressed in the canonical frame of its input.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub pair: CoupledPair,
    pub frame: CanonicalFrame,
    pub x0_can: Vec<Point>,
    pub x1_can: Vec<Point>,
    pub u_can: Vec<Point>,
}

impl TrainingPair {
    pub fn new(pair: CoupledPair) -> Result<Self> {
        let frame = canonical_frame(&pair.x0)?;
        let x0_can = frame.apply(&pair.x0)?;
        let x1_can = frame.apply(&pair.x1)?;
        let u_can = frame.apply_linear(&pair.displacement())?;
        Ok(Self {
            pair,
            frame,
            x0_can,
            x1_can,
            u_can,
        })
    }

    /// Mean squared displacement per node.
    pub fn mean_sq_displacement(&self) -> f64 {
        self.u_can
            .iter()
            .map(|u| u[0] * u[0] + u[1] * u[1])
            .sum::<f64>()
            / self.u_can.len() as f64
    }

    /// Unit direction of every canonical circle target.
    pub fn target_directions(&self) -> Vec<Point> {
        self.x1_can
            .iter()
            .map(|p| {
                let r = p[0].hypot(p[1]);
                if r > 0.0 {
                    [p[0] / r, p[1] / r]
                } else {
                    [0.0, 0.0]
                }
            })
            .collect()
    }
}

/// Couple and canonicalize every labeled record. Fails if any record lacks a tour.
pub fn prepare_pairs(data: &Dataset) -> Result<Vec<TrainingPair>> {
    let counts = data.label_counts();
    if counts.unlabeled > 0 || data.is_empty() {
        return Err(CycflowError::MissingLabels {
            unlabeled: counts.unlabeled,
            total: data.len(),
        });
    }
    let build = |r: &crate::instances::Record| -> Result<TrainingPair> {
        let tour = r.tour.as_ref().expect("checked above");
        TrainingPair::new(build_coupled_pair(&r.instance, tour)?)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.records.par_iter().map(build).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.records.iter().map(build).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr`.
    pub lr_floor: f64,
    pub warmup_steps: usize,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub seed: u64,
    /// Stop once an epoch's mean loss falls below this fraction of the
    /// zero-init loss.
    pub target_loss_ratio: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            epochs: 100,
            batch_size: 64,
            lr: 3e-4,
            lr_floor: 0.0,
            warmup_steps: 0,
            grad_clip: 1.0,
            seed: 0,
            target_loss_ratio: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(CycflowError::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(CycflowError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub wallclock_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Loss of the zero-initialized model, i.e. the mean squared displacement.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epochs_run: usize,
    pub steps: usize,
    pub history: Vec<EpochStats>,
}

/// Which objective the shared training loop optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Flow,
    DirectAngle,
}

/// Train the velocity field on a labeled dataset.
pub fn train(cfg: &TrainConfig, data: &Dataset, on_epoch: impl FnMut(&EpochStats)) -> Result<TrainOutcome> {
    let pairs = prepare_pairs(data)?;
    train_on_pairs(cfg, &pairs, Objective::Flow, on_epoch)
}

/// Train the single-shot angle-regression baseline on the same data.
pub fn train_direct(
    cfg: &TrainConfig,
    data: &Dataset,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    let pairs = prepare_pairs(data)?;
    train_on_pairs(cfg, &pairs, Objective::DirectAngle, on_epoch)
}

fn batch_grad(
    params: &ModelParams,
    pairs: &[TrainingPair],
    batch: &[(usize, f64)],
    objective: Objective,
) -> Result<LossAndGrad> {
    let shard_grad = |shard: &[(usize, f64)]| -> Result<LossAndGrad> {
        match objective {
            Objective::Flow => {
                let xts: Vec<Vec<Point>> = shard
                    .iter()
                    .map(|&(i, t)| interpolate(&pairs[i].x0_can, &pairs[i].x1_can, t))
                    .collect();
                let samples: Vec<FlowSample<'_>> = shard
                    .iter()
                    .zip(&xts)
                    .map(|(&(i, t), xt)| FlowSample {
                        t,
                        xt,
                        x0: &pairs[i].x0_can,
                        target: &pairs[i].u_can,
                    })
                    .collect();
                loss_and_grad(params, &samples)
            }
            Objective::DirectAngle => {
                let dirs: Vec<Vec<Point>> = shard.iter().map(|&(i, _)| pairs[i].target_directions()).collect();
                let samples: Vec<DirectSample<'_>> = shard
                    .iter()
                    .zip(&dirs)
                    .map(|(&(i, _), d)| DirectSample {
                        x0: &pairs[i].x0_can,
                        target_dir: d,
                    })
                    .collect();
                direct_loss_and_grad(params, &samples)
            }
        }
    };

    let shards: Vec<&[(usize, f64)]> = batch.chunks(SHARD).collect();
    #[cfg(feature = "parallel")]
    let parts: Vec<Result<LossAndGrad>> = {
        use rayon::prelude::*;
        shards.par_iter().map(|s| shard_grad(s)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Result<LossAndGrad>> = shards.iter().map(|s| shard_grad(s)).collect();

    let total = batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.num_params()];
    for (part, shard) in parts.into_iter().zip(&shards) {
        let part = part?;
        let w = shard.len() as f64 / total;
        loss += w * part.loss;
        for (g, p) in grad.iter_mut().zip(&part.grad) {
            *g += w * p;
        }
    }
    Ok(LossAndGrad { loss, grad })
}

/// Mean objective over all pairs without updating anything.
pub fn evaluate_loss(params: &ModelParams, pairs: &[TrainingPair], objective: Objective, t_seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(t_seed);
    let batch: Vec<(usize, f64)> = (0..pairs.len()).map(|i| (i, rng.random::<f64>())).collect();
    Ok(batch_grad(params, pairs, &batch, objective)?.loss)
}

pub fn train_on_pairs(
    cfg: &TrainConfig,
    pairs: &[TrainingPair],
    objective: Objective,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(CycflowError::MissingLabels { unlabeled: 0, total: 0 });
    }
    let started = Instant::now();
    let mut params = init_params(&cfg.model)?;
    let mut opt = Adam::new(params.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let initial_loss = match objective {
        Objective::Flow => pairs.iter().map(|p| p.mean_sq_displacement()).sum::<f64>() / pairs.len() as f64,
        Objective::DirectAngle => evaluate_loss(&params, pairs, objective, cfg.seed)?,
    };
    let mut history = vec![EpochStats {
        epoch: 0,
        loss: initial_loss,
        lr: 0.0,
        wallclock_s: started.elapsed().as_secs_f64(),
    }];
    on_epoch(&history[0]);

    let batches_per_epoch = pairs.len().div_ceil(cfg.batch_size);
    let total_steps = batches_per_epoch * cfg.epochs;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut step = 0;
    let mut final_loss = initial_loss;
    let mut epochs_run = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(usize, f64)> = chunk.iter().map(|&i| (i, rng.random::<f64>())).collect();
            let mut lg = batch_grad(&params, pairs, &batch, objective)?;
            if !lg.loss.is_finite() {
                return Err(CycflowError::Numerical(format!("loss diverged at step {step}")));
            }
            clip_grad_norm(&mut lg.grad, cfg.grad_clip);
            lr = cosine_lr(step, total_steps, cfg.warmup_steps, cfg.lr, cfg.lr_floor);
            opt.update(&mut params.data, &lg.grad, lr);
            epoch_loss += lg.loss * chunk.len() as f64;
            step += 1;
        }
        epoch_loss /= pairs.len() as f64;
        final_loss = epoch_loss;
        epochs_run = epoch;
        let stats = EpochStats {
            epoch,
            loss: epoch_loss,
            lr,
            wallclock_s: started.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        history.push(stats);
        if let Some(ratio) = cfg.target_loss_ratio {
            if epoch_loss < ratio * initial_loss {
                break;
            }
        }
    }
    if !params.is_finite() {
        return Err(CycflowError::Numerical("parameters became non-finite".into()));
    }
    Ok(TrainOutcome {
        params,
        initial_loss,
        final_loss,
        epochs_run,
        steps: step,
        history,
    })
}

/// Euler integration of an arbitrary velocity field from `x0` over `[0, 1]`.
///
/// `field(k, t_k, x_k)` returns the velocity at step `k`; `t_k = k/K`.
/// Every intermediate state is passed to `observe`.
pub fn integrate_field(
    x0: &[Point],
    steps: usize,
    mut field: impl FnMut(usize, f64, &[Point]) -> Result<Vec<Point>>,
    mut observe: impl FnMut(usize, &[Point]),
) -> Result<Vec<Point>> {
    if steps == 0 {
        return Err(CycflowError::Domain("integration needs at least one step".into()));
    }
    let h = 1.0 / steps as f64;
    let mut x = x0.to_vec();
    observe(0, &x);
    for k in 0..steps {
        let t = k as f64 / steps as f64;
        let v = field(k, t, &x)?;
        for (p, d) in x.iter_mut().zip(&v) {
            p[0] += h * d[0];
            p[1] += h * d[1];
        }
        if x.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(CycflowError::Numerical(format!(
                "non-finite state after integration step {k}"
            )));
        }
        observe(k + 1, &x);
    }
    Ok(x)
}

/// The learned field for one instance: canonicalize once from the centered
/// input, evaluate the network in that frame, restore the velocity.
pub struct InstanceField<'a> {
    params: &'a ModelParams,
    pub x0: Vec<Point>,
    pub frame: CanonicalFrame,
    x0_can: Vec<Point>,
}

impl<'a> InstanceField<'a> {
    pub fn new(params: &'a ModelParams, inst: &Instance) -> Result<Self> {
        let x0 = center(&inst.points);
        let frame = canonical_frame(&x0)?;
        let x0_can = frame.apply(&x0)?;
        Ok(Self {
            params,
            x0,
            frame,
            x0_can,
        })
    }

    pub fn velocity(&self, t: f64, x: &[Point]) -> Result<Vec<Point>> {
        let xc = self.frame.apply(x)?;
        let v_can = forward(self.params, t, &xc, &self.x0_can)?;
        self.frame.restore_velocity(&v_can)
    }
}

/// Transport the centered instance with `steps` Euler steps of the learned
/// field. The result is in the instance's centered coordinates.
pub fn integrate(params: &ModelParams, inst: &Instance, steps: usize) -> Result<Vec<Point>> {
    let field = InstanceField::new(params, inst)?;
    integrate_field(&field.x0, steps, |_, t, x| field.velocity(t, x), |_, _| {})
}

/// Like [`integrate`] but returns all `steps + 1` states.
pub fn integrate_trajectory(params: &ModelParams, inst: &Instance, steps: usize) -> Result<Vec<Vec<Point>>> {
    let field = InstanceField::new(params, inst)?;
    let mut states = Vec::with_capacity(steps + 1);
    integrate_field(&field.x0, steps, |_, t, x| field.velocity(t, x), |_, x| states.push(x.to_vec()))?;
    Ok(states)
}

/// Decode the baseline's predicted directions into a tour: sort nodes by
/// predicted angle, ties by original index.
pub fn direct_decode(params: &ModelParams, inst: &Instance) -> Result<Tour> {
    let x0 = center(&inst.points);
    let frame = canonical_frame(&x0)?;
    let dirs = unit_directions(params, &frame.apply(&x0)?)?;
    let inv = frame.inverse_perm();
    let keys: Vec<(f64, f64)> = (0..inst.n())
        .map(|j| {
            let p = dirs[inv[j]];
            (wrap_angle(p[1].atan2(p[0])), p[0].hypot(p[1]))
        })
        .collect();
    Tour::new(inst, sort_by_angle(&keys), Provenance::Decoded)
}
