//! Inference-time trajectory selection.
//!
//! `MinCost` picks the most probable plan (`cost = -p_i`). `MinCostCC` adds
//! a collision term: each candidate is checked against every agent's most
//! probable predicted trajectory and pays `-alpha * t_first_collision` (in
//! seconds), so plans that collide - or collide sooner - rank worse.
//! Collision-free candidates are assigned the sentinel timestep
//! `horizon + 1`, one step past any possible collision, which makes the
//! cost monotone in safety: with the penalty scaled large enough
//! (`alpha >= 1/dt`), a collision-free candidate always beats a colliding
//! one regardless of probabilities.


use alloc::vec::Vec;

use crate::geometry::{first_collision_timestep, AgentTrack, GeometryError};
use crate::model::{AgentPredictionSet, TrajectoryDistribution};
use crate::DT;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("empty trajectory distribution")]
    EmptyDistribution,
    #[error("agent sizes do not match predictions")]
    SizeMismatch,
    #[error("expert index {index} out of range for {n_modes} modes")]
    ExpertOutOfRange { index: usize, n_modes: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    MinCost,
    MinCostCC,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyConfig {
    pub policy: PolicyKind,
    /// Scale of the collision term (cost per second of collision-free
    /// horizon). At 1.0 it trades against probabilities; at `>= 1/dt` any
    /// collision-free candidate dominates every colliding one.
    pub alpha_collision: f64,
    /// SAT margin used at selection time.
    pub contact_margin: f64,
    /// Check all M modes of each agent instead of only the most probable
    /// one. Off by default.
    pub check_all_modes: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            policy: PolicyKind::MinCostCC,
            alpha_collision: 1.0,
            contact_margin: 0.0,
            check_all_modes: false,
        }
    }
}

/// Index of the most probable trajectory (`argmin -p_i`); ties break to the
/// smallest index.
pub fn min_cost_select(dist: &TrajectoryDistribution) -> Result<usize, PolicyError> {
    if dist.trajectories.is_empty() {
        return Err(PolicyError::EmptyDistribution);
    }
    let mut best = 0;
    for (i, &p) in dist.probabilities.iter().enumerate() {
        if p > dist.probabilities[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Outcome of a collision-aware selection, kept for trace auditability.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    pub selected: usize,
    /// Per-candidate cost.
    pub costs: Vec<f64>,
    /// Per-candidate first-collision timestep; `None` means collision-free.
    pub first_collision: Vec<Option<usize>>,
}

/// Collision-aware selection: `cost_i = -p_i - alpha * t_i * dt`, where
/// `t_i` is the first collision timestep against the agents' most probable
/// predictions, or `horizon + 1` when candidate `i` never collides. With no
/// agents this degenerates exactly to [`min_cost_select`].
pub fn min_cost_cc_select(
    dist: &TrajectoryDistribution,
    agents: &AgentPredictionSet,
    sdv_size: (f64, f64),
    agent_sizes: &[(f64, f64)],
    config: &PolicyConfig,
) -> Result<SelectionOutcome, PolicyError> {
    if dist.trajectories.is_empty() {
        return Err(PolicyError::EmptyDistribution);
    }
    if agent_sizes.len() != agents.agents.len() {
        return Err(PolicyError::SizeMismatch);
    }
    let n = dist.trajectories.len();
    let horizon = dist.trajectories[0].horizon();

    let mut tracks: Vec<(Vec<crate::scene::Pose2D>, (f64, f64))> = Vec::new();
    for (agent, &size) in agents.agents.iter().zip(agent_sizes) {
        if config.check_all_modes {
            for traj in &agent.trajectories {
                tracks.push((traj.clone(), size));
            }
        } else {
            tracks.push((agent.most_probable().clone(), size));
        }
    }

    let mut costs = Vec::with_capacity(n);
    let mut first_collision = Vec::with_capacity(n);
    for (i, traj) in dist.trajectories.iter().enumerate() {
        let t_bar = if tracks.is_empty() {
            None
        } else {
            let poses = traj.poses();
            let agent_tracks: Vec<AgentTrack<'_>> = tracks
                .iter()
                .map(|(poses, size)| AgentTrack {
                    poses: poses.as_slice(),
                    size: *size,
                })
                .collect();
            first_collision_timestep(&poses, sdv_size, &agent_tracks, config.contact_margin)?
        };
        let t_eff = t_bar.unwrap_or(horizon + 1);
        costs.push(-dist.probabilities[i] - config.alpha_collision * (t_eff as f64 * DT));
        first_collision.push(t_bar);
    }

    let mut selected = 0;
    for i in 1..n {
        if costs[i] < costs[selected] {
            selected = i;
        }
    }
    Ok(SelectionOutcome {
        selected,
        costs,
        first_collision,
    })
}
