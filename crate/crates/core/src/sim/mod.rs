//! Closed-loop log-replay evaluation.
//!
//! Each tick the runner rebuilds the scene around the simulated SDV state
//! (agents, map, and ground truth come verbatim from the log), asks the
//! planner for a fresh prediction, selects a plan per the configured
//! policy, and executes exactly the first step of the selected trajectory.
//! Agents never react: this is the efficient log-replay protocol, with no
//! extra physics beyond the planner's own kinematic decoding.

pub mod metrics;
pub mod scenario;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::kinematics::SdvState;
use crate::math;
use crate::model::{Model, ModelError, Prediction};
use crate::policy::{min_cost_cc_select, min_cost_select, PolicyConfig, PolicyError, PolicyKind};
use crate::scene::{transform_to_sdv_frame, Pose2D, SceneError, SdvSnapshot, VectorScene};

pub use metrics::{compute_metrics, EpisodeMetrics, MeanAcc, TickFlags};
pub use scenario::{generate_scenarios, ScenarioKind};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid episode: {0}")]
    InvalidEpisode(&'static str),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// A recorded drive: world-frame scenes at 10 Hz with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: u64,
    pub scenes: Vec<VectorScene>,
}

impl Episode {
    pub fn duration_secs(&self) -> f64 {
        self.scenes.len() as f64 * crate::DT
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.scenes.is_empty() {
            return Err(SimError::InvalidEpisode("no scenes"));
        }
        for (i, scene) in self.scenes.iter().enumerate() {
            if scene.is_sdv_frame() {
                return Err(SimError::InvalidEpisode("episode scenes must be world-frame"));
            }
            if i > 0 {
                let dt = scene.timestamp - self.scenes[i - 1].timestamp;
                if (dt - crate::DT).abs() > 1e-6 {
                    return Err(SimError::InvalidEpisode("timestamps must tick at 10 Hz"));
                }
            }
        }
        Ok(())
    }
}

/// Anything that can plan from an SDV-frame scene. `Model` is the real
/// planner; tests plug in scripted stubs.
pub trait Planner {
    fn plan(&self, scene: &VectorScene) -> Result<Prediction, ModelError>;
}

impl Planner for Model {
    fn plan(&self, scene: &VectorScene) -> Result<Prediction, ModelError> {
        self.predict(scene)
    }
}

/// One executed tick of a simulation trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub tick: usize,
    /// Executed SDV state in the world frame.
    pub executed: SdvState,
    pub selected: usize,
    /// Per-candidate policy costs (empty under fixed-expert selection).
    pub costs: Vec<f64>,
    /// Per-candidate first-collision timesteps from the policy.
    pub first_collision: Vec<Option<usize>>,
    /// Replayed agent poses at the evaluation tick.
    pub agent_poses: Vec<(u64, Pose2D)>,
    pub flags: TickFlags,
    /// Per-tick prediction-error contributions (see metrics module).
    pub sdv_ade: Option<f64>,
    pub sdv_fde: Option<f64>,
    pub agent_ade: Option<f64>,
    pub agent_fde: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub episode_id: u64,
    pub records: Vec<TickRecord>,
    /// Set when the episode aborted mid-run (planner failure); the partial
    /// trace up to the failing tick is retained.
    pub aborted: Option<String>,
}

enum Selector {
    Policy(PolicyConfig),
    FixedExpert(usize),
}

/// Runs an episode closed-loop under the configured selection policy.
pub fn run_closed_loop(
    episode: &Episode,
    planner: &dyn Planner,
    policy: &PolicyConfig,
) -> Result<(EpisodeMetrics, SimTrace), SimError> {
    run_with_selector(episode, planner, Selector::Policy(*policy))
}

/// Closed loop with a pinned expert index, ignoring probabilities and
/// collision checks.
pub fn fixed_expert_rollout(
    episode: &Episode,
    planner: &dyn Planner,
    expert: usize,
) -> Result<(EpisodeMetrics, SimTrace), SimError> {
    run_with_selector(episode, planner, Selector::FixedExpert(expert))
}

fn run_with_selector(
    episode: &Episode,
    planner: &dyn Planner,
    selector: Selector,
) -> Result<(EpisodeMetrics, SimTrace), SimError> {
    episode.validate()?;
    let first = &episode.scenes[0];
    let sdv_size = first.sdv.size;
    let route = metrics::RouteArc::from_route(&first.route);

    let mut sim_pose = first.sdv.pose;
    let mut sim_speed = first.sdv.speed;
    let mut sim_accel = first.sdv.acceleration;
    let mut moving_history = first.sdv.moving_history.clone();

    let mut trace = SimTrace {
        episode_id: episode.id,
        records: Vec::with_capacity(episode.scenes.len()),
        aborted: None,
    };

    for tick in 0..episode.scenes.len() {
        let mut world = episode.scenes[tick].clone();
        world.sdv = SdvSnapshot {
            pose: sim_pose,
            speed: sim_speed,
            acceleration: sim_accel,
            size: sdv_size,
            moving_history: moving_history.clone(),
        };

        let centered = match transform_to_sdv_frame(&world) {
            Ok(s) => s,
            Err(e) => {
                trace.aborted = Some(format!("tick {tick}: {e}"));
                break;
            }
        };
        let prediction = match planner.plan(&centered) {
            Ok(p) => p,
            Err(e) => {
                trace.aborted = Some(format!("tick {tick}: {e}"));
                break;
            }
        };
        if prediction.sdv.trajectories.is_empty() {
            trace.aborted = Some(format!("tick {tick}: empty trajectory distribution"));
            break;
        }

        let (selected, costs, first_collision) = match &selector {
            Selector::FixedExpert(k) => {
                if *k >= prediction.sdv.trajectories.len() {
                    return Err(SimError::Policy(PolicyError::ExpertOutOfRange {
                        index: *k,
                        n_modes: prediction.sdv.trajectories.len(),
                    }));
                }
                (*k, Vec::new(), Vec::new())
            }
            Selector::Policy(config) => match config.policy {
                PolicyKind::MinCost => {
                    let selected = match min_cost_select(&prediction.sdv) {
                        Ok(s) => s,
                        Err(e) => {
                            trace.aborted = Some(format!("tick {tick}: {e}"));
                            break;
                        }
                    };
                    let costs = prediction.sdv.probabilities.iter().map(|p| -p).collect();
                    (selected, costs, Vec::new())
                }
                PolicyKind::MinCostCC => {
                    let agent_sizes: Vec<(f64, f64)> = prediction
                        .agents
                        .agents
                        .iter()
                        .map(|a| centered.agents[a.scene_index].size)
                        .collect();
                    match min_cost_cc_select(
                        &prediction.sdv,
                        &prediction.agents,
                        sdv_size,
                        &agent_sizes,
                        config,
                    ) {
                        Ok(outcome) => (outcome.selected, outcome.costs, outcome.first_collision),
                        Err(e) => {
                            trace.aborted = Some(format!("tick {tick}: {e}"));
                            break;
                        }
                    }
                }
            },
        };

        // Execute exactly the first step of the selected plan.
        let local = prediction.sdv.trajectories[selected].states[0];
        let world_pose = local.pose().from_frame(&sim_pose);
        let executed = SdvState {
            x: world_pose.x,
            y: world_pose.y,
            theta: world_pose.theta,
            v: local.v,
            a: local.a,
            k: local.k,
            j: local.j,
        };

        let (sdv_ade, sdv_fde, agent_ade, agent_fde) = prediction_errors(&prediction, &centered);

        let eval_tick = (tick + 1).min(episode.scenes.len() - 1);
        let flags = metrics::tick_flags(&executed, sdv_size, episode, eval_tick, &route);
        let agent_poses = episode.scenes[eval_tick]
            .agents
            .iter()
            .map(|a| (a.agent_id, a.current_pose()))
            .collect();

        trace.records.push(TickRecord {
            tick,
            executed,
            selected,
            costs,
            first_collision,
            agent_poses,
            flags,
            sdv_ade,
            sdv_fde,
            agent_ade,
            agent_fde,
        });

        sim_pose = world_pose;
        sim_speed = local.v;
        sim_accel = local.a;
        moving_history.remove(0);
        moving_history.push(local.v > 0.1);
    }

    let episode_metrics = compute_metrics(&trace, episode);
    Ok((episode_metrics, trace))
}

/// Min-over-modes displacement errors at the 3 s horizon, against the
/// scene's (log) ground truth expressed in the prediction frame.
fn prediction_errors(
    prediction: &Prediction,
    centered: &VectorScene,
) -> (Option<f64>, Option<f64>, Option<f64>, Option<f64>) {
    let Some(gt) = centered.ground_truth.as_ref() else {
        return (None, None, None, None);
    };

    let mut sdv_ade = None;
    let mut sdv_fde = None;
    if !gt.sdv_future.is_empty() && !prediction.sdv.trajectories.is_empty() {
        let horizon = metrics::ADE_HORIZON_TICKS
            .min(gt.sdv_future.len())
            .min(prediction.sdv.trajectories[0].horizon());
        if horizon > 0 {
            let mut best_ade = f64::INFINITY;
            let mut best_fde = f64::INFINITY;
            for traj in &prediction.sdv.trajectories {
                let mut sum = 0.0;
                for t in 0..horizon {
                    let s = &traj.states[t];
                    let g = gt.sdv_future[t].pose;
                    sum += math::hypot(s.x - g.x, s.y - g.y);
                }
                let last = &traj.states[horizon - 1];
                let g = gt.sdv_future[horizon - 1].pose;
                best_ade = best_ade.min(sum / horizon as f64);
                best_fde = best_fde.min(math::hypot(last.x - g.x, last.y - g.y));
            }
            sdv_ade = Some(best_ade);
            sdv_fde = Some(best_fde);
        }
    }

    let mut agent_acc = metrics::MeanAcc::default();
    let mut agent_fde_acc = metrics::MeanAcc::default();
    for agent in &prediction.agents.agents {
        let Some(future) = gt
            .agent_futures
            .iter()
            .find(|f| f.agent_id == agent.agent_id)
        else {
            continue;
        };
        let horizon = metrics::ADE_HORIZON_TICKS
            .min(future.poses.len())
            .min(agent.trajectories.first().map_or(0, Vec::len));
        if horizon == 0 {
            continue;
        }
        let last_valid = (0..horizon).rev().find(|&t| future.poses[t].is_some());
        let Some(last_valid) = last_valid else {
            continue;
        };
        let mut best_ade = f64::INFINITY;
        let mut best_fde = f64::INFINITY;
        for traj in &agent.trajectories {
            let mut sum = 0.0;
            let mut count = 0usize;
            for t in 0..horizon {
                if let Some(g) = &future.poses[t] {
                    sum += math::hypot(traj[t].x - g.x, traj[t].y - g.y);
                    count += 1;
                }
            }
            if count == 0 {
                continue;
            }
            let g = future.poses[last_valid].as_ref().expect("checked valid");
            best_ade = best_ade.min(sum / count as f64);
            best_fde = best_fde.min(math::hypot(traj[last_valid].x - g.x, traj[last_valid].y - g.y));
        }
        if best_ade.is_finite() {
            agent_acc.push(best_ade);
            agent_fde_acc.push(best_fde);
        }
    }

    (
        sdv_ade,
        sdv_fde,
        agent_acc.mean(),
        agent_fde_acc.mean(),
    )
}

#[cfg(test)]
mod tests;
