//! Winner-takes-all training: matching cost, imitation + probability
//! losses, total-loss assembly, perturbation augmentation, and the loop.
//!
//! Matching follows the set-prediction recipe: for each sample the candidate
//! minimizing `L_IL + lambda * (1 - p_i)` wins, where
//! `L_IL = sum_t ||pose_t - gt_t||_1 + beta * L_reg`, and only the winner's
//! trajectory receives imitation gradient. The trained loss is
//! `L_IL(winner) + mu * (-log p_winner)`; the argmin itself is treated as a
//! constant, so probabilities learn through the log term while non-winner
//! trajectories get exactly zero gradient.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diff::{adam_step, backward, cosine_lr, ops, AdamState, DiffError, Tensor};
use crate::math;
use crate::model::{ForwardPass, Model, ModelError};
use crate::scene::{
    transform_to_sdv_frame, wrap_angle, AgentFuture, Pose2D, SceneError, VectorScene,
};
use crate::DT;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("match error: {0}")]
    Match(&'static str),
    #[error("training error: {0}")]
    Training(String),
    #[error("numerics abort after {completed_epochs} epochs; parameters rolled back")]
    NumericsAbort { completed_epochs: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// Loss weighting; defaults follow the reference setting
/// (`lambda_sdv = beta_sdv = 1`, `lambda_agent = 0.04`, `beta_agent = 0`,
/// `mu = lambda` per stream, agent-loss coefficient 10).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_sdv: f64,
    pub beta_sdv: f64,
    pub mu_sdv: f64,
    pub lambda_agent: f64,
    pub beta_agent: f64,
    pub mu_agent: f64,
    pub alpha_agent_loss: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_sdv: 1.0,
            beta_sdv: 1.0,
            mu_sdv: 1.0,
            lambda_agent: 0.04,
            beta_agent: 0.0,
            mu_agent: 0.04,
            alpha_agent_loss: 10.0,
        }
    }
}

impl LossWeights {
    /// Probability-head ablation: `lambda_sdv = mu_sdv = 0`.
    pub fn without_sdv_probability_head(mut self) -> Self {
        self.lambda_sdv = 0.0;
        self.mu_sdv = 0.0;
        self
    }
}

/// Synthetic start-pose perturbation applied to training samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbConfig {
    pub probability: f64,
    /// Lateral offset drawn from `U(-lateral_max, lateral_max)` meters.
    pub lateral_max: f64,
    /// Heading offset drawn from `U(-heading_max, heading_max)` radians.
    pub heading_max: f64,
    /// Seconds over which the ground truth blends back to the original path.
    pub blend_horizon: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            probability: 0.5,
            lateral_max: 1.0,
            heading_max: 0.2,
            blend_horizon: 2.0,
        }
    }
}

/// Ground-truth pose track with a per-step validity mask, in the frame of
/// the prediction it will be compared against.
#[derive(Debug, Clone)]
pub struct GtTrack {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub theta: Vec<f64>,
    pub valid: Vec<bool>,
}

impl GtTrack {
    pub fn from_sdv(scene: &VectorScene, horizon: usize) -> Option<Self> {
        let gt = scene.ground_truth.as_ref()?;
        if gt.sdv_future.len() < horizon {
            return None;
        }
        let mut track = GtTrack {
            x: Vec::with_capacity(horizon),
            y: Vec::with_capacity(horizon),
            theta: Vec::with_capacity(horizon),
            valid: vec![true; horizon],
        };
        for s in gt.sdv_future.iter().take(horizon) {
            track.x.push(s.pose.x);
            track.y.push(s.pose.y);
            track.theta.push(s.pose.theta);
        }
        Some(track)
    }

    pub fn from_agent_future(future: &AgentFuture, horizon: usize) -> Option<Self> {
        if future.poses.len() < horizon {
            return None;
        }
        let mut track = GtTrack {
            x: vec![0.0; horizon],
            y: vec![0.0; horizon],
            theta: vec![0.0; horizon],
            valid: vec![false; horizon],
        };
        for (t, pose) in future.poses.iter().take(horizon).enumerate() {
            if let Some(p) = pose {
                track.x[t] = p.x;
                track.y[t] = p.y;
                track.theta[t] = p.theta;
                track.valid[t] = true;
            }
        }
        Some(track)
    }

    pub fn any_valid(&self) -> bool {
        self.valid.iter().any(|&v| v)
    }
}

/// Plain-value imitation loss: masked L1 over (x, y, wrapped theta), plus
/// `beta * (mean j^2 + mean k^2)` when controls are given (SDV stream).
pub fn imitation_loss(
    xs: &[f64],
    ys: &[f64],
    thetas: &[f64],
    gt: &GtTrack,
    controls: Option<(&[f64], &[f64])>,
    beta: f64,
) -> Result<f64, TrainError> {
    if xs.len() != gt.x.len() || ys.len() != gt.x.len() || thetas.len() != gt.x.len() {
        return Err(TrainError::Match(
            "prediction/ground-truth horizon mismatch",
        ));
    }
    if !gt.any_valid() {
        return Err(TrainError::Match("all ground-truth steps invalid"));
    }
    let mut total = 0.0;
    for t in 0..xs.len() {
        if !gt.valid[t] {
            continue;
        }
        total += math::abs(xs[t] - gt.x[t])
            + math::abs(ys[t] - gt.y[t])
            + math::abs(wrap_angle(thetas[t] - gt.theta[t]));
    }
    if let Some((jerk, curvature)) = controls {
        if beta != 0.0 {
            let mj2 = jerk.iter().map(|j| j * j).sum::<f64>() / jerk.len().max(1) as f64;
            let mk2 =
                curvature.iter().map(|k| k * k).sum::<f64>() / curvature.len().max(1) as f64;
            total += beta * (mj2 + mk2);
        }
    }
    Ok(total)
}

/// Winner index per the matching cost `L_IL + lambda * (1 - p)`; ties break
/// to the smallest index.
pub fn select_winner(il_costs: &[f64], probabilities: &[f64], lambda: f64) -> usize {
    let mut winner = 0;
    let mut best = f64::INFINITY;
    for (i, (&il, &p)) in il_costs.iter().zip(probabilities).enumerate() {
        let cost = il + lambda * (1.0 - p);
        if cost < best {
            best = cost;
            winner = i;
        }
    }
    winner
}

/// Result of one winner-takes-all loss assembly.
pub struct WtaLoss {
    pub loss: Tensor,
    pub winner: usize,
    /// Detached per-candidate imitation costs used for the selection.
    pub il_costs: Vec<f64>,
    /// Set when the winner probability had to be clamped before the log.
    pub numerics_warning: bool,
}

const LOG_PROB_FLOOR: f64 = 1e-12;

/// Graph-side masked L1 between a gathered candidate row and ground truth.
fn masked_l1_row(
    row: &Tensor,
    gt_values: &[f64],
    mask: &Tensor,
    wrap: bool,
) -> Result<Tensor, DiffError> {
    let gt = Tensor::constant(vec![gt_values.len()], gt_values.to_vec());
    let flat = ops::reshape(row, vec![gt_values.len()])?;
    let mut diff = ops::sub(&flat, &gt)?;
    if wrap {
        diff = ops::angle_wrap(&diff);
    }
    Ok(ops::sum(&ops::mul(&ops::abs(&diff), mask)?))
}

/// SDV winner-takes-all loss over a forward pass.
pub fn sdv_wta_loss(
    pass: &ForwardPass,
    gt: &GtTrack,
    weights: &LossWeights,
) -> Result<WtaLoss, TrainError> {
    let n = pass.sdv_logits.numel();
    let horizon = pass.sdv_xs.len();
    if gt.x.len() != horizon {
        return Err(TrainError::Match("SDV ground-truth horizon mismatch"));
    }
    if !gt.any_valid() {
        return Err(TrainError::Match("all ground-truth steps invalid"));
    }

    // Detached candidate costs; the selection takes no gradient.
    let t_s = horizon;
    let mut il_costs = Vec::with_capacity(n);
    for mode in 0..n {
        let xs: Vec<f64> = (0..t_s).map(|t| pass.sdv_xs[t].data()[mode]).collect();
        let ys: Vec<f64> = (0..t_s).map(|t| pass.sdv_ys[t].data()[mode]).collect();
        let ths: Vec<f64> = (0..t_s).map(|t| pass.sdv_thetas[t].data()[mode]).collect();
        let jerk = &pass.sdv_jerk.data()[mode * t_s..(mode + 1) * t_s];
        let curv = &pass.sdv_curvature.data()[mode * t_s..(mode + 1) * t_s];
        il_costs.push(imitation_loss(
            &xs,
            &ys,
            &ths,
            gt,
            Some((jerk, curv)),
            weights.beta_sdv,
        )?);
    }
    let winner = select_winner(&il_costs, pass.sdv_probs.data(), weights.lambda_sdv);

    // Graph loss touches only the winner row (plus all logits via softmax).
    let mask = Tensor::from_mask(&gt.valid);
    let gather = |steps: &[Tensor]| -> Result<Tensor, DiffError> {
        let picked: Vec<Tensor> = steps
            .iter()
            .map(|s| ops::index_rows(s, &[winner]))
            .collect::<Result<_, _>>()?;
        let refs: Vec<&Tensor> = picked.iter().collect();
        ops::concat(&refs, 0)
    };
    let lx = masked_l1_row(&gather(&pass.sdv_xs)?, &gt.x, &mask, false)?;
    let ly = masked_l1_row(&gather(&pass.sdv_ys)?, &gt.y, &mask, false)?;
    let lt = masked_l1_row(&gather(&pass.sdv_thetas)?, &gt.theta, &mask, true)?;
    let mut il = ops::add(&ops::add(&lx, &ly)?, &lt)?;
    if weights.beta_sdv != 0.0 {
        let jrow = ops::index_rows(&pass.sdv_jerk, &[winner])?;
        let krow = ops::index_rows(&pass.sdv_curvature, &[winner])?;
        let reg = ops::add(
            &ops::mean(&ops::mul(&jrow, &jrow)?),
            &ops::mean(&ops::mul(&krow, &krow)?),
        )?;
        il = ops::add(&il, &ops::scale(&reg, weights.beta_sdv))?;
    }

    let p_winner = ops::index_rows(&pass.sdv_probs, &[winner])?;
    let numerics_warning = p_winner.data()[0] < LOG_PROB_FLOOR;
    let nll = ops::neg(&ops::log(&ops::clamp_min(&p_winner, LOG_PROB_FLOOR)));
    let loss = ops::add(&il, &ops::scale(&nll, weights.mu_sdv))?;

    Ok(WtaLoss {
        loss,
        winner,
        il_costs,
        numerics_warning,
    })
}

/// Winner-takes-all loss for one agent slot.
pub fn agent_wta_loss(
    pass: &ForwardPass,
    slot: usize,
    gt: &GtTrack,
    weights: &LossWeights,
) -> Result<WtaLoss, TrainError> {
    let (Some(ax), Some(ay), Some(ath), Some(probs)) = (
        &pass.agent_x,
        &pass.agent_y,
        &pass.agent_theta,
        &pass.agent_probs,
    ) else {
        return Err(TrainError::Match("pass has no agent outputs"));
    };
    if !gt.any_valid() {
        return Err(TrainError::Match("all ground-truth steps invalid"));
    }
    let m = probs.shape()[1];
    let t_a = ax.shape()[1];
    if gt.x.len() != t_a {
        return Err(TrainError::Match("agent ground-truth horizon mismatch"));
    }

    let mut il_costs = Vec::with_capacity(m);
    for mode in 0..m {
        let row = slot * m + mode;
        let xs = &ax.data()[row * t_a..(row + 1) * t_a];
        let ys = &ay.data()[row * t_a..(row + 1) * t_a];
        let ths = &ath.data()[row * t_a..(row + 1) * t_a];
        il_costs.push(imitation_loss(xs, ys, ths, gt, None, weights.beta_agent)?);
    }
    let q = &probs.data()[slot * m..(slot + 1) * m];
    let winner = select_winner(&il_costs, q, weights.lambda_agent);

    let mask = Tensor::from_mask(&gt.valid);
    let row = slot * m + winner;
    let lx = masked_l1_row(&ops::index_rows(ax, &[row])?, &gt.x, &mask, false)?;
    let ly = masked_l1_row(&ops::index_rows(ay, &[row])?, &gt.y, &mask, false)?;
    let lt = masked_l1_row(&ops::index_rows(ath, &[row])?, &gt.theta, &mask, true)?;
    let il = ops::add(&ops::add(&lx, &ly)?, &lt)?;

    let probs_flat = ops::reshape(probs, vec![probs.numel()])?;
    let q_winner = ops::index_rows(&probs_flat, &[row])?;
    let numerics_warning = q_winner.data()[0] < LOG_PROB_FLOOR;
    let nll = ops::neg(&ops::log(&ops::clamp_min(&q_winner, LOG_PROB_FLOOR)));
    let loss = ops::add(&il, &ops::scale(&nll, weights.mu_agent))?;

    Ok(WtaLoss {
        loss,
        winner,
        il_costs,
        numerics_warning,
    })
}

/// Total loss of one sample: the SDV term plus `alpha` times the mean
/// per-agent term over agents with any valid ground truth.
pub struct TotalLoss {
    pub loss: Tensor,
    pub sdv_loss_value: f64,
    pub agent_loss_value: f64,
    pub sdv_winner: usize,
    /// `(scene agent index, winning mode)` for every scored agent.
    pub agent_winners: Vec<(usize, usize)>,
    pub numerics_warning: bool,
}

pub fn total_loss(
    pass: &ForwardPass,
    scene: &VectorScene,
    weights: &LossWeights,
) -> Result<TotalLoss, TrainError> {
    let horizon = pass.sdv_xs.len();
    let sdv_gt = GtTrack::from_sdv(scene, horizon).ok_or(TrainError::Training(String::from(
        "scene has no SDV ground truth",
    )))?;
    let sdv = sdv_wta_loss(pass, &sdv_gt, weights)?;
    let sdv_value = sdv.loss.scalar_value();

    let mut agent_terms: Vec<Tensor> = Vec::new();
    let mut agent_winners = Vec::new();
    let mut warn = sdv.numerics_warning;
    if let Some(ax) = &pass.agent_x {
        let t_a = ax.shape()[1];
        let futures = scene
            .ground_truth
            .as_ref()
            .map(|gt| gt.agent_futures.as_slice())
            .unwrap_or(&[]);
        for (slot, &(_, scene_index)) in pass.agent_rows.iter().enumerate() {
            let agent_id = scene.agents[scene_index].agent_id;
            let Some(future) = futures.iter().find(|f| f.agent_id == agent_id) else {
                continue;
            };
            let Some(gt) = GtTrack::from_agent_future(future, t_a) else {
                continue;
            };
            if !gt.any_valid() {
                continue;
            }
            let wta = agent_wta_loss(pass, slot, &gt, weights)?;
            warn |= wta.numerics_warning;
            agent_winners.push((scene_index, wta.winner));
            agent_terms.push(wta.loss);
        }
    }

    let (loss, agent_value) = if agent_terms.is_empty() {
        (sdv.loss.clone(), 0.0)
    } else {
        let refs: Vec<&Tensor> = agent_terms.iter().collect();
        let mean_agent = ops::scale(
            &ops::sum(&ops::concat(&refs, 0)?),
            1.0 / agent_terms.len() as f64,
        );
        let agent_value = mean_agent.scalar_value();
        (
            ops::add(&sdv.loss, &ops::scale(&mean_agent, weights.alpha_agent_loss))?,
            agent_value,
        )
    };

    Ok(TotalLoss {
        loss,
        sdv_loss_value: sdv_value,
        agent_loss_value: agent_value,
        sdv_winner: sdv.winner,
        agent_winners,
        numerics_warning: warn,
    })
}

/// Smoothstep used to blend a perturbed start back onto the logged path.
fn cubic_ease(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// With the configured probability, offsets the SDV start pose laterally and
/// in heading, and replaces the ground-truth future by a smooth blend that
/// returns to the original path within the blend horizon. Operates on
/// world-frame scenes; the caller re-centers afterwards.
pub fn perturb_sample<R: Rng>(
    scene: &VectorScene,
    config: &PerturbConfig,
    rng: &mut R,
) -> Result<VectorScene, TrainError> {
    if scene
        .ground_truth
        .as_ref()
        .map_or(true, |gt| gt.sdv_future.is_empty())
    {
        return Err(TrainError::Training(String::from(
            "perturb_sample needs SDV ground truth",
        )));
    }
    if config.probability <= 0.0 || !rng.gen_bool(config.probability.clamp(0.0, 1.0)) {
        return Ok(scene.clone());
    }
    let lateral = rng.gen_range(-config.lateral_max..=config.lateral_max);
    let heading = rng.gen_range(-config.heading_max..=config.heading_max);
    Ok(apply_perturbation(scene, lateral, heading, config.blend_horizon))
}

/// Deterministic core of [`perturb_sample`] with explicit offsets.
pub fn apply_perturbation(
    scene: &VectorScene,
    lateral: f64,
    heading: f64,
    blend_horizon: f64,
) -> VectorScene {
    let mut out = scene.clone();
    let theta0 = scene.sdv.pose.theta;
    let normal = (-math::sin(theta0), math::cos(theta0));
    out.sdv.pose = Pose2D::new(
        scene.sdv.pose.x + lateral * normal.0,
        scene.sdv.pose.y + lateral * normal.1,
        theta0 + heading,
    );

    let blend_steps = (blend_horizon / DT) as usize;
    if let Some(gt) = out.ground_truth.as_mut() {
        for (t, state) in gt.sdv_future.iter_mut().enumerate() {
            let step = t + 1;
            if step >= blend_steps {
                break;
            }
            let w = 1.0 - cubic_ease(step as f64 / blend_steps as f64);
            state.pose = Pose2D::new(
                state.pose.x + lateral * w * normal.0,
                state.pose.y + lateral * w * normal.1,
                state.pose.theta + heading * w,
            );
        }
    }
    out
}

/// Training-loop configuration (desk scale).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub weights: LossWeights,
    pub perturb: Option<PerturbConfig>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            base_lr: 1e-3,
            weights: LossWeights::default(),
            perturb: Some(PerturbConfig::default()),
            seed: 0,
        }
    }
}

/// One epoch of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total_loss: f64,
    pub sdv_loss: f64,
    pub agent_loss: f64,
    pub lr: f64,
    /// SDV winner counts per expert.
    pub winner_histogram: Vec<usize>,
    /// Agent winner counts per expert, aggregated over agents.
    pub agent_winner_histogram: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

/// Adam + cosine-schedule training over world-frame scenes with ground
/// truth. Deterministic under a fixed seed. On a non-finite loss the
/// parameters roll back to the end of the last completed epoch and
/// [`TrainError::NumericsAbort`] is returned.
pub fn train(
    model: &mut Model,
    scenes: &[VectorScene],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport, TrainError> {
    if scenes.is_empty() {
        return Err(TrainError::Training(String::from("empty training set")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = model.config().n_sdv_modes;
    let m = model.config().n_agent_modes;
    let batches_per_epoch = scenes.len().div_ceil(config.batch_size.max(1));
    let total_steps = (config.epochs * batches_per_epoch) as u64;

    let mut adam = AdamState::new(model.store(), config.base_lr);
    let mut report = TrainReport { epochs: Vec::new() };
    let mut last_good: Vec<Vec<f64>> = snapshot(model);
    let mut step: u64 = 0;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        shuffle(&mut order, &mut rng);

        let mut sums = (0.0, 0.0, 0.0);
        let mut hist = vec![0usize; n];
        let mut agent_hist = vec![0usize; m];
        let mut lr = 0.0;

        for batch in order.chunks(config.batch_size.max(1)) {
            model.store_mut().zero_grads();
            for &idx in batch {
                let sample = match &config.perturb {
                    Some(p) => perturb_sample(&scenes[idx], p, &mut rng)?,
                    None => scenes[idx].clone(),
                };
                let centered = transform_to_sdv_frame(&sample)?;
                let pass = model.forward(&centered)?;
                let total = total_loss(&pass, &centered, &config.weights)?;
                if !total.loss.scalar_value().is_finite() {
                    restore(model, &last_good);
                    return Err(TrainError::NumericsAbort {
                        completed_epochs: epoch,
                    });
                }
                sums.0 += total.loss.scalar_value();
                sums.1 += total.sdv_loss_value;
                sums.2 += total.agent_loss_value;
                hist[total.sdv_winner] += 1;
                for &(_, mode) in &total.agent_winners {
                    agent_hist[mode] += 1;
                }
                let scaled = ops::scale(&total.loss, 1.0 / batch.len() as f64);
                backward(&scaled, model.store_mut())?;
            }
            lr = cosine_lr(step, total_steps, config.base_lr);
            adam_step(model.store_mut(), &mut adam, lr)?;
            step += 1;
        }

        let record = EpochRecord {
            epoch,
            total_loss: sums.0 / scenes.len() as f64,
            sdv_loss: sums.1 / scenes.len() as f64,
            agent_loss: sums.2 / scenes.len() as f64,
            lr,
            winner_histogram: hist,
            agent_winner_histogram: agent_hist,
        };
        on_epoch(&record);
        report.epochs.push(record);
        last_good = snapshot(model);
    }
    Ok(report)
}

fn snapshot(model: &Model) -> Vec<Vec<f64>> {
    model
        .store()
        .ids()
        .map(|id| model.store().value(id).to_vec())
        .collect()
}

fn restore(model: &mut Model, values: &[Vec<f64>]) {
    let ids: Vec<_> = model.store().ids().collect();
    for (id, v) in ids.into_iter().zip(values) {
        model.store_mut().value_mut(id).copy_from_slice(v);
    }
}

// Fisher-Yates with the training RNG.
fn shuffle<R: Rng>(order: &mut [usize], rng: &mut R) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}
