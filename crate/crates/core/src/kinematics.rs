//! Unicycle kinematic vehicle model: per-timestep jerk/curvature controls
//! integrated into full SDV state trajectories.
//!
//! Integration is semi-implicit Euler with post-update values, in the order
//! acceleration -> speed -> heading -> position:
//!
//! ```text
//! a_t     = a_{t-1} + j_t * dt
//! v_t     = max(0, v_{t-1} + a_t * dt)        (no reverse driving)
//! theta_t = theta_{t-1} + k_t * v_t * dt
//! x_t     = x_{t-1} + v_t * cos(theta_t) * dt
//! y_t     = y_{t-1} + v_t * sin(theta_t) * dt
//! ```
//!
//! The stored acceleration is recomputed as `(v_t - v_{t-1}) / dt` after the
//! speed clamp so the state tuple stays self-consistent. The same update is
//! replicated inside the differentiation core ([`crate::model`]) so pose
//! losses reach the controls; this module is the plain-`f64` reference.

use alloc::vec::Vec;

use crate::math;
use crate::scene::{wrap_angle, Pose2D};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KinematicsError {
    #[error("non-finite control input")]
    NonFiniteControl,
    #[error("invalid rollout setup: {0}")]
    InvalidSetup(&'static str),
}

/// Default curvature clamp, 1/m.
pub const CURVATURE_MAX: f64 = 0.3;
/// Default jerk clamp, m/s^3.
pub const JERK_MAX: f64 = 15.0;

/// One timestep of SDV control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdvControl {
    pub jerk: f64,
    pub curvature: f64,
}

impl SdvControl {
    /// Clamps the control into the feasible box.
    pub fn clamped(self) -> Self {
        Self {
            jerk: self.jerk.clamp(-JERK_MAX, JERK_MAX),
            curvature: self.curvature.clamp(-CURVATURE_MAX, CURVATURE_MAX),
        }
    }
}

/// Full SDV state at one timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdvState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub a: f64,
    pub k: f64,
    pub j: f64,
}

impl SdvState {
    pub fn pose(&self) -> Pose2D {
        Pose2D::new(self.x, self.y, self.theta)
    }
}

/// Rollout start state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub a: f64,
}

impl InitialState {
    pub fn at_rest() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
            v: 0.0,
            a: 0.0,
        }
    }
}

/// States for timesteps `1..=horizon`; the initial state is kept alongside
/// so the rollout can be reproduced.
#[derive(Debug, Clone, PartialEq)]
pub struct SdvTrajectory {
    pub initial: InitialState,
    pub states: Vec<SdvState>,
}

impl SdvTrajectory {
    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    pub fn poses(&self) -> Vec<Pose2D> {
        self.states.iter().map(|s| s.pose()).collect()
    }

    pub fn controls(&self) -> Vec<SdvControl> {
        self.states
            .iter()
            .map(|s| SdvControl {
                jerk: s.j,
                curvature: s.k,
            })
            .collect()
    }
}

/// Integrates clamped jerk/curvature controls from `initial` at step `dt`.
pub fn rollout_unicycle(
    initial: &InitialState,
    controls: &[SdvControl],
    dt: f64,
) -> Result<SdvTrajectory, KinematicsError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(KinematicsError::InvalidSetup("dt must be positive"));
    }
    if ![initial.x, initial.y, initial.theta, initial.v, initial.a]
        .iter()
        .all(|v| v.is_finite())
    {
        return Err(KinematicsError::InvalidSetup("non-finite initial state"));
    }
    if controls
        .iter()
        .any(|c| !c.jerk.is_finite() || !c.curvature.is_finite())
    {
        return Err(KinematicsError::NonFiniteControl);
    }

    let mut states = Vec::with_capacity(controls.len());
    let (mut x, mut y, mut theta) = (initial.x, initial.y, initial.theta);
    let (mut v, mut a) = (initial.v, initial.a);
    for control in controls {
        let c = control.clamped();
        a += c.jerk * dt;
        let v_prev = v;
        v = (v + a * dt).max(0.0);
        let a_stored = (v - v_prev) / dt;
        theta = wrap_angle(theta + c.curvature * v * dt);
        x += v * math::cos(theta) * dt;
        y += v * math::sin(theta) * dt;
        states.push(SdvState {
            x,
            y,
            theta,
            v,
            a: a_stored,
            k: c.curvature,
            j: c.jerk,
        });
    }
    Ok(SdvTrajectory {
        initial: *initial,
        states,
    })
}

/// Max absolute difference between a trajectory's stored states and a fresh
/// rollout of its own controls. Zero (to fp equality) for any trajectory
/// produced by [`rollout_unicycle`].
pub fn rollout_consistency_error(traj: &SdvTrajectory, dt: f64) -> f64 {
    let Ok(re) = rollout_unicycle(&traj.initial, &traj.controls(), dt) else {
        return f64::INFINITY;
    };
    traj.states
        .iter()
        .zip(re.states.iter())
        .map(|(a, b)| {
            math::abs(a.x - b.x)
                .max(math::abs(a.y - b.y))
                .max(math::abs(wrap_angle(a.theta - b.theta)))
                .max(math::abs(a.v - b.v))
        })
        .fold(0.0, f64::max)
}
