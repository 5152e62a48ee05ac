//! Oriented-box collision detection and the time-to-collision / headway
//! primitives used by the selection policy and the safety metrics.
//!
//! Overlap tests use the Separating Axis Theorem, which is exact for convex
//! rectangles: two boxes are disjoint iff one of the four face normals (two
//! per box) separates their projections. Boundary contact counts as overlap,
//! so a margin-0 touch is a collision and growing the margin can only make
//! collisions earlier, never later.


use crate::math;
use crate::scene::Pose2D;
use crate::DT;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("non-finite geometry input")]
    NonFinite,
    #[error("empty trajectory")]
    EmptyTrajectory,
}

/// Rectangle described by its center pose and half-extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Pose2D,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedBox {
    pub fn new(center: Pose2D, half_length: f64, half_width: f64) -> Self {
        Self {
            center,
            half_length,
            half_width,
        }
    }

    /// Box for an actor given its `(length, width)` footprint.
    pub fn from_size(center: Pose2D, size: (f64, f64)) -> Self {
        Self::new(center, size.0 / 2.0, size.1 / 2.0)
    }

    pub fn is_valid(&self) -> bool {
        self.center.is_finite()
            && self.half_length.is_finite()
            && self.half_width.is_finite()
            && self.half_length > 0.0
            && self.half_width > 0.0
    }

    /// Local axes (heading, left) as unit vectors.
    fn axes(&self) -> [(f64, f64); 2] {
        let (s, c) = (math::sin(self.center.theta), math::cos(self.center.theta));
        [(c, s), (-s, c)]
    }

    /// Projection radius of the box onto a unit axis.
    fn projection_radius(&self, axis: (f64, f64), inflate: f64) -> f64 {
        let [ax, ay] = self.axes();
        (self.half_length + inflate) * math::abs(axis.0 * ax.0 + axis.1 * ax.1)
            + (self.half_width + inflate) * math::abs(axis.0 * ay.0 + axis.1 * ay.1)
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        let [ax, ay] = self.axes();
        let (hl, hw) = (self.half_length, self.half_width);
        let c = (self.center.x, self.center.y);
        [
            (c.0 + hl * ax.0 + hw * ay.0, c.1 + hl * ax.1 + hw * ay.1),
            (c.0 + hl * ax.0 - hw * ay.0, c.1 + hl * ax.1 - hw * ay.1),
            (c.0 - hl * ax.0 - hw * ay.0, c.1 - hl * ax.1 - hw * ay.1),
            (c.0 - hl * ax.0 + hw * ay.0, c.1 - hl * ax.1 + hw * ay.1),
        ]
    }
}

/// SAT overlap test with each box inflated by `margin / 2` per side.
/// Boundary contact counts as overlap.
pub fn sat_overlap(a: &OrientedBox, b: &OrientedBox, margin: f64) -> Result<bool, GeometryError> {
    if !a.is_valid() || !b.is_valid() || !margin.is_finite() || margin < 0.0 {
        return Err(GeometryError::NonFinite);
    }
    let inflate = margin / 2.0;
    let dx = b.center.x - a.center.x;
    let dy = b.center.y - a.center.y;
    let [a0, a1] = a.axes();
    let [b0, b1] = b.axes();
    for axis in [a0, a1, b0, b1] {
        let dist = math::abs(dx * axis.0 + dy * axis.1);
        let reach = a.projection_radius(axis, inflate) + b.projection_radius(axis, inflate);
        if dist > reach {
            return Ok(false);
        }
    }
    Ok(true)
}

/// An agent's predicted track paired with its footprint. Poses index
/// timesteps `1..=len`; when the track is shorter than the SDV horizon the
/// last pose is held constant.
#[derive(Debug, Clone)]
pub struct AgentTrack<'a> {
    pub poses: &'a [Pose2D],
    pub size: (f64, f64),
}

/// Earliest timestep `t` in `1..=sdv_poses.len()` at which the SDV box
/// overlaps any agent box (margin-inflated), or `None` when the whole
/// horizon is collision-free.
pub fn first_collision_timestep(
    sdv_poses: &[Pose2D],
    sdv_size: (f64, f64),
    agents: &[AgentTrack<'_>],
    margin: f64,
) -> Result<Option<usize>, GeometryError> {
    if sdv_poses.is_empty() {
        return Err(GeometryError::EmptyTrajectory);
    }
    if agents.iter().any(|a| a.poses.is_empty()) {
        return Err(GeometryError::EmptyTrajectory);
    }
    for (i, sdv_pose) in sdv_poses.iter().enumerate() {
        let sdv_box = OrientedBox::from_size(*sdv_pose, sdv_size);
        for agent in agents {
            let pose = agent.poses[i.min(agent.poses.len() - 1)];
            let agent_box = OrientedBox::from_size(pose, agent.size);
            if sat_overlap(&sdv_box, &agent_box, margin)? {
                return Ok(Some(i + 1));
            }
        }
    }
    Ok(None)
}

/// A pose plus planar velocity, for constant-velocity extrapolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionState {
    pub pose: Pose2D,
    pub vx: f64,
    pub vy: f64,
}

impl MotionState {
    pub fn is_finite(&self) -> bool {
        self.pose.is_finite() && self.vx.is_finite() && self.vy.is_finite()
    }

    fn at(&self, t: f64) -> Pose2D {
        Pose2D::new(
            self.pose.x + self.vx * t,
            self.pose.y + self.vy * t,
            self.pose.theta,
        )
    }
}

/// Smallest `t` in `(0, horizon]` on the 10 Hz grid at which the
/// constant-velocity extrapolations of both boxes overlap; `None` if they
/// stay clear over the horizon.
pub fn time_to_collision(
    sdv: &MotionState,
    agent: &MotionState,
    sdv_size: (f64, f64),
    agent_size: (f64, f64),
    horizon: f64,
) -> Result<Option<f64>, GeometryError> {
    if !sdv.is_finite() || !agent.is_finite() || !horizon.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    let steps = math::floor(horizon / DT + 1e-9) as usize;
    for i in 1..=steps {
        let t = i as f64 * DT;
        let a = OrientedBox::from_size(sdv.at(t), sdv_size);
        let b = OrientedBox::from_size(agent.at(t), agent_size);
        if sat_overlap(&a, &b, 0.0)? {
            return Ok(Some(t));
        }
    }
    Ok(None)
}

/// Half-width margin added to each side of the SDV footprint when looking
/// for a lead vehicle.
pub const HEADWAY_CORRIDOR_EXTRA: f64 = 0.5;
/// SDV speeds below this produce no headway reading.
pub const HEADWAY_MIN_SPEED: f64 = 0.1;

/// Bumper-to-bumper gap to the nearest agent in the SDV's forward corridor,
/// divided by SDV speed. `None` when the SDV is (near) stationary or no
/// agent sits in the corridor ahead.
pub fn time_headway(
    sdv: &MotionState,
    sdv_size: (f64, f64),
    agents: &[(Pose2D, (f64, f64))],
) -> Option<f64> {
    let speed = math::hypot(sdv.vx, sdv.vy);
    if speed < HEADWAY_MIN_SPEED {
        return None;
    }
    let heading = (math::cos(sdv.pose.theta), math::sin(sdv.pose.theta));
    let corridor_half = sdv_size.1 / 2.0 + HEADWAY_CORRIDOR_EXTRA;
    let mut best_gap: Option<f64> = None;
    for (pose, size) in agents {
        let dx = pose.x - sdv.pose.x;
        let dy = pose.y - sdv.pose.y;
        let forward = dx * heading.0 + dy * heading.1;
        let lateral = -dx * heading.1 + dy * heading.0;
        if forward <= 0.0 || math::abs(lateral) > corridor_half {
            continue;
        }
        let agent_box = OrientedBox::from_size(*pose, *size);
        let gap = forward - sdv_size.0 / 2.0 - agent_box.projection_radius(heading, 0.0);
        if best_gap.is_none_or(|g| gap < g) {
            best_gap = Some(gap);
        }
    }
    best_gap.map(|g| g.max(0.0) / speed)
}
