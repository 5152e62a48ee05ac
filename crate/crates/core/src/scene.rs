//! Vectorized driving-scene data model and coordinate-frame handling.
//!
//! A [`VectorScene`] collects everything the network sees at one tick: the
//! SDV snapshot, road agents, typed map polylines, and the route. All
//! geometry is expressed either in the world frame or in the SDV-centric
//! frame (SDV at the origin, heading zero); [`transform_to_sdv_frame`]
//! moves between the two and keeps the original SDV pose as metadata so
//! the transform is invertible.
//!
//! [`flatten_for_network`] stages a scene for the point encoder: a fixed
//! `[elements x points x features]` array with availability masks, the
//! SDV element always at row 0.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::{DT, TICK_HZ};

/// Seconds of SDV moving/stationary history.
pub const SDV_HISTORY_SECS: u32 = 3;
/// Seconds of agent pose history (current frame excluded).
pub const AGENT_HISTORY_SECS: u32 = 1;
/// Length of `SdvSnapshot::moving_history`.
pub const SDV_HISTORY_TICKS: usize = (SDV_HISTORY_SECS * TICK_HZ) as usize;
/// Length of `AgentSnapshot::pose_history` (history plus current frame).
pub const AGENT_HISTORY_TICKS: usize = (AGENT_HISTORY_SECS * TICK_HZ) as usize + 1;

/// SDV plan horizon in timesteps.
pub const SDV_HORIZON: usize = 45;
/// Agent prediction horizon in timesteps.
pub const AGENT_HORIZON: usize = 30;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("invalid scene: {0}")]
    InvalidScene(alloc::string::String),
}

fn invalid(msg: &str) -> SceneError {
    SceneError::InvalidScene(alloc::string::String::from(msg))
}

/// Planar pose. `theta` is always normalized to `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use core::f64::consts::PI;
    if a > -PI && a <= PI {
        return a;
    }
    let two_pi = 2.0 * PI;
    let mut r = a - two_pi * math::floor((a + PI) / two_pi);
    // floor rounding can land exactly on -pi
    if r <= -PI {
        r += two_pi;
    }
    r
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn origin() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    /// Expresses `self` (given in the world frame) in the frame anchored at
    /// `frame` (frame origin at `frame`'s position, x-axis along its heading).
    pub fn to_frame(&self, frame: &Pose2D) -> Pose2D {
        let dx = self.x - frame.x;
        let dy = self.y - frame.y;
        let (s, c) = (math::sin(frame.theta), math::cos(frame.theta));
        Pose2D::new(c * dx + s * dy, -s * dx + c * dy, self.theta - frame.theta)
    }

    /// Inverse of [`Pose2D::to_frame`]: maps a pose expressed in `frame`'s
    /// coordinates back to the world frame.
    pub fn from_frame(&self, frame: &Pose2D) -> Pose2D {
        let (s, c) = (math::sin(frame.theta), math::cos(frame.theta));
        Pose2D::new(
            frame.x + c * self.x - s * self.y,
            frame.y + s * self.x + c * self.y,
            self.theta + frame.theta,
        )
    }

    pub fn distance(&self, other: &Pose2D) -> f64 {
        math::hypot(self.x - other.x, self.y - other.y)
    }
}

/// Typed scene element kinds. The one-hot encoding of this enum is part of
/// the per-point network feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    SdvHistory,
    AgentHistory,
    LaneBoundary,
    LaneCenter,
    Crosswalk,
    Intersection,
    StaticObstacle,
    TrafficLight,
    RouteGoal,
}

impl ElementType {
    pub const COUNT: usize = 9;

    pub fn index(self) -> usize {
        match self {
            ElementType::SdvHistory => 0,
            ElementType::AgentHistory => 1,
            ElementType::LaneBoundary => 2,
            ElementType::LaneCenter => 3,
            ElementType::Crosswalk => 4,
            ElementType::Intersection => 5,
            ElementType::StaticObstacle => 6,
            ElementType::TrafficLight => 7,
            ElementType::RouteGoal => 8,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Some(match i {
            0 => ElementType::SdvHistory,
            1 => ElementType::AgentHistory,
            2 => ElementType::LaneBoundary,
            3 => ElementType::LaneCenter,
            4 => ElementType::Crosswalk,
            5 => ElementType::Intersection,
            6 => ElementType::StaticObstacle,
            7 => ElementType::TrafficLight,
            8 => ElementType::RouteGoal,
            _ => return None,
        })
    }

    /// Dynamic elements (SDV, agents) go through the agent point encoder;
    /// everything else through the map encoder.
    pub fn is_dynamic(self) -> bool {
        matches!(self, ElementType::SdvHistory | ElementType::AgentHistory)
    }
}

/// Number of per-point attribute slots (excluding position and type one-hot).
pub const ATTR_LEN: usize = 7;
/// Attribute slot layout.
pub const ATTR_SPEED: usize = 0;
pub const ATTR_ACCEL: usize = 1;
pub const ATTR_LENGTH: usize = 2;
pub const ATTR_WIDTH: usize = 3;
pub const ATTR_MOVING: usize = 4;
pub const ATTR_T_OFFSET: usize = 5;
/// Shared slot: traffic-light status (0 unknown / 1 red / 2 green) on
/// `TrafficLight` elements, agent kind (0 vehicle / 1 pedestrian / 2 cyclist)
/// on `AgentHistory` elements.
pub const ATTR_AUX: usize = 6;

/// One point of a polyline element: a pose plus a fixed-length attribute
/// vector (zero-padded slots for kinds that do not use them).
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePoint {
    pub position: Pose2D,
    pub attributes: [f64; ATTR_LEN],
}

impl ScenePoint {
    pub fn at(position: Pose2D) -> Self {
        Self {
            position,
            attributes: [0.0; ATTR_LEN],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.attributes.iter().all(|a| a.is_finite())
    }
}

/// An ordered, non-empty run of typed points (a lane boundary, a crosswalk
/// outline, an agent history, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct PolylineElement {
    pub element_type: ElementType,
    pub points: Vec<ScenePoint>,
    /// Opaque source identifier (agent id, lane id, ...).
    pub source_id: u64,
}

impl PolylineElement {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.points.is_empty() {
            return Err(invalid("empty polyline element"));
        }
        if self.points.iter().any(|p| !p.is_finite()) {
            return Err(invalid("non-finite polyline point"));
        }
        Ok(())
    }
}

/// SDV state at the scene timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct SdvSnapshot {
    pub pose: Pose2D,
    /// m/s, non-negative.
    pub speed: f64,
    /// m/s^2.
    pub acceleration: f64,
    /// (length, width) in meters.
    pub size: (f64, f64),
    /// Moving flags over the last [`SDV_HISTORY_TICKS`] ticks, oldest first;
    /// the final entry is the current tick.
    pub moving_history: Vec<bool>,
}

impl SdvSnapshot {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !self.pose.is_finite() || !self.speed.is_finite() || !self.acceleration.is_finite() {
            return Err(invalid("non-finite SDV state"));
        }
        if self.speed < 0.0 {
            return Err(invalid("negative SDV speed"));
        }
        if !(self.size.0 > 0.0 && self.size.1 > 0.0)
            || !self.size.0.is_finite()
            || !self.size.1.is_finite()
        {
            return Err(invalid("non-positive SDV size"));
        }
        if self.moving_history.len() != SDV_HISTORY_TICKS {
            return Err(invalid("SDV moving history length"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentType {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl AgentType {
    pub fn aux_code(self) -> f64 {
        match self {
            AgentType::Vehicle => 0.0,
            AgentType::Pedestrian => 1.0,
            AgentType::Cyclist => 2.0,
        }
    }
}

/// One road agent: a short pose history plus size and kind.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSnapshot {
    pub agent_id: u64,
    /// Oldest first; the final entry is the current pose. Length
    /// [`AGENT_HISTORY_TICKS`].
    pub pose_history: Vec<Pose2D>,
    pub size: (f64, f64),
    pub agent_type: AgentType,
}

impl AgentSnapshot {
    pub fn current_pose(&self) -> Pose2D {
        *self.pose_history.last().expect("validated non-empty history")
    }

    /// Finite-difference velocity estimate from the last two history poses.
    pub fn velocity_estimate(&self) -> (f64, f64) {
        let n = self.pose_history.len();
        if n < 2 {
            return (0.0, 0.0);
        }
        let a = self.pose_history[n - 2];
        let b = self.pose_history[n - 1];
        ((b.x - a.x) / DT, (b.y - a.y) / DT)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.pose_history.len() != AGENT_HISTORY_TICKS {
            return Err(invalid("agent pose history length"));
        }
        if self.pose_history.iter().any(|p| !p.is_finite()) {
            return Err(invalid("non-finite agent pose"));
        }
        if !(self.size.0 > 0.0 && self.size.1 > 0.0) {
            return Err(invalid("non-positive agent size"));
        }
        Ok(())
    }
}

/// Ground-truth SDV state used for imitation targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdvGtState {
    pub pose: Pose2D,
    pub v: f64,
    pub a: f64,
}

/// Ground-truth future for one agent; `None` marks timesteps where the agent
/// left perception range.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentFuture {
    pub agent_id: u64,
    pub poses: Vec<Option<Pose2D>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Length [`SDV_HORIZON`].
    pub sdv_future: Vec<SdvGtState>,
    /// One entry per agent that has any future; pose lists have length
    /// [`AGENT_HORIZON`].
    pub agent_futures: Vec<AgentFuture>,
}

/// A full scene at one tick. Immutable value; transforms return new scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorScene {
    pub sdv: SdvSnapshot,
    pub agents: Vec<AgentSnapshot>,
    pub map_elements: Vec<PolylineElement>,
    /// Lane-center polyline the SDV should follow (`ElementType::RouteGoal`).
    pub route: PolylineElement,
    /// Seconds.
    pub timestamp: f64,
    pub ground_truth: Option<GroundTruth>,
    /// World pose of the SDV when this scene was re-centered; `None` while
    /// the scene is still in the world frame. Keeping it makes the frame
    /// transform invertible.
    pub sdv_world_pose: Option<Pose2D>,
}

impl VectorScene {
    pub fn is_sdv_frame(&self) -> bool {
        self.sdv_world_pose.is_some()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        self.sdv.validate()?;
        for a in &self.agents {
            a.validate()?;
        }
        for e in &self.map_elements {
            e.validate()?;
        }
        self.route.validate()?;
        if self.route.element_type != ElementType::RouteGoal {
            return Err(invalid("route element type must be RouteGoal"));
        }
        if !self.timestamp.is_finite() {
            return Err(invalid("non-finite timestamp"));
        }
        if let Some(gt) = &self.ground_truth {
            if gt.sdv_future.is_empty() {
                return Err(invalid("empty SDV ground-truth future"));
            }
            for s in &gt.sdv_future {
                if !s.pose.is_finite() || !s.v.is_finite() || !s.a.is_finite() {
                    return Err(invalid("non-finite SDV ground truth"));
                }
            }
            for f in &gt.agent_futures {
                if f.poses.is_empty() {
                    return Err(invalid("empty agent ground-truth future"));
                }
            }
        }
        Ok(())
    }
}

fn map_scene_poses(scene: &VectorScene, f: &dyn Fn(&Pose2D) -> Pose2D) -> VectorScene {
    let map_element = |e: &PolylineElement| PolylineElement {
        element_type: e.element_type,
        points: e
            .points
            .iter()
            .map(|p| ScenePoint {
                position: f(&p.position),
                attributes: p.attributes,
            })
            .collect(),
        source_id: e.source_id,
    };
    VectorScene {
        sdv: SdvSnapshot {
            pose: f(&scene.sdv.pose),
            ..scene.sdv.clone()
        },
        agents: scene
            .agents
            .iter()
            .map(|a| AgentSnapshot {
                agent_id: a.agent_id,
                pose_history: a.pose_history.iter().map(|p| f(p)).collect(),
                size: a.size,
                agent_type: a.agent_type,
            })
            .collect(),
        map_elements: scene.map_elements.iter().map(map_element).collect(),
        route: map_element(&scene.route),
        timestamp: scene.timestamp,
        ground_truth: scene.ground_truth.as_ref().map(|gt| GroundTruth {
            sdv_future: gt
                .sdv_future
                .iter()
                .map(|s| SdvGtState {
                    pose: f(&s.pose),
                    v: s.v,
                    a: s.a,
                })
                .collect(),
            agent_futures: gt
                .agent_futures
                .iter()
                .map(|af| AgentFuture {
                    agent_id: af.agent_id,
                    poses: af.poses.iter().map(|p| p.as_ref().map(|p| f(p))).collect(),
                })
                .collect(),
        }),
        sdv_world_pose: scene.sdv_world_pose,
    }
}

/// Rigidly transforms a world-frame scene into the SDV-centric frame: the
/// SDV current pose becomes `(0, 0, 0)` and every other pose moves with it.
/// The original SDV pose is kept in `sdv_world_pose` for the inverse.
///
/// A scene whose SDV already sits at the origin with heading zero comes back
/// unchanged (up to the recorded metadata).
pub fn transform_to_sdv_frame(scene: &VectorScene) -> Result<VectorScene, SceneError> {
    if scene.is_sdv_frame() {
        return Ok(scene.clone());
    }
    scene.validate()?;
    let anchor = scene.sdv.pose;
    let mut out = map_scene_poses(scene, &|p| p.to_frame(&anchor));
    out.sdv_world_pose = Some(anchor);
    Ok(out)
}

/// Inverse of [`transform_to_sdv_frame`].
pub fn transform_to_world_frame(scene: &VectorScene) -> Result<VectorScene, SceneError> {
    let Some(anchor) = scene.sdv_world_pose else {
        return Ok(scene.clone());
    };
    let mut out = map_scene_poses(scene, &|p| p.from_frame(&anchor));
    out.sdv_world_pose = None;
    Ok(out)
}

/// Padding limits for [`flatten_for_network`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlattenLimits {
    /// Maximum agents kept (nearest first).
    pub a_max: usize,
    /// Maximum total elements, SDV row included.
    pub e_max: usize,
    /// Maximum points per element (nearest kept, original order preserved).
    pub p_max: usize,
}

impl Default for FlattenLimits {
    fn default() -> Self {
        Self {
            a_max: 16,
            e_max: 64,
            p_max: 20,
        }
    }
}

/// Per-point feature width: x, y, theta, the attribute slots, and the
/// element-type one-hot.
pub const POINT_FEATURES: usize = 3 + ATTR_LEN + ElementType::COUNT;

/// Fixed-shape network input staged from one scene. `features` is row-major
/// `[e_max x p_max x POINT_FEATURES]`; masks say which rows/points are real.
#[derive(Debug, Clone)]
pub struct FlattenedScene {
    pub features: Vec<f64>,
    pub element_mask: Vec<bool>,
    pub point_mask: Vec<bool>,
    pub limits: FlattenLimits,
    /// Element kind per row (only meaningful where `element_mask` holds).
    pub element_types: Vec<Option<ElementType>>,
    /// `(row, index into scene.agents)` for every agent that got a row.
    pub agent_rows: Vec<(usize, usize)>,
}

impl FlattenedScene {
    pub fn feature(&self, e: usize, p: usize, f: usize) -> f64 {
        let lp = self.limits.p_max;
        self.features[(e * lp + p) * POINT_FEATURES + f]
    }

    pub fn point_available(&self, e: usize, p: usize) -> bool {
        self.point_mask[e * self.limits.p_max + p]
    }
}

fn sdv_element(sdv: &SdvSnapshot) -> PolylineElement {
    let n = sdv.moving_history.len();
    let points = sdv
        .moving_history
        .iter()
        .enumerate()
        .map(|(i, &moving)| {
            let mut attributes = [0.0; ATTR_LEN];
            attributes[ATTR_SPEED] = sdv.speed;
            attributes[ATTR_ACCEL] = sdv.acceleration;
            attributes[ATTR_LENGTH] = sdv.size.0;
            attributes[ATTR_WIDTH] = sdv.size.1;
            attributes[ATTR_MOVING] = if moving { 1.0 } else { 0.0 };
            attributes[ATTR_T_OFFSET] = -((n - 1 - i) as f64) * DT;
            ScenePoint {
                position: sdv.pose,
                attributes,
            }
        })
        .collect();
    PolylineElement {
        element_type: ElementType::SdvHistory,
        points,
        source_id: 0,
    }
}

fn agent_element(agent: &AgentSnapshot) -> PolylineElement {
    let n = agent.pose_history.len();
    let points = agent
        .pose_history
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let speed = if i == 0 {
                0.0
            } else {
                agent.pose_history[i - 1].distance(pose) / DT
            };
            let mut attributes = [0.0; ATTR_LEN];
            attributes[ATTR_SPEED] = speed;
            attributes[ATTR_LENGTH] = agent.size.0;
            attributes[ATTR_WIDTH] = agent.size.1;
            attributes[ATTR_MOVING] = if speed > 0.1 { 1.0 } else { 0.0 };
            attributes[ATTR_T_OFFSET] = -((n - 1 - i) as f64) * DT;
            attributes[ATTR_AUX] = agent.agent_type.aux_code();
            ScenePoint {
                position: *pose,
                attributes,
            }
        })
        .collect();
    PolylineElement {
        element_type: ElementType::AgentHistory,
        points,
        source_id: agent.agent_id,
    }
}

fn element_distance_to_origin(e: &PolylineElement) -> f64 {
    e.points
        .iter()
        .map(|p| math::hypot(p.position.x, p.position.y))
        .fold(f64::INFINITY, f64::min)
}

/// Selects up to `keep` points nearest to the SDV (origin), preserving the
/// original polyline order among the survivors.
fn truncate_points(points: &[ScenePoint], keep: usize) -> Vec<ScenePoint> {
    if points.len() <= keep {
        return points.to_vec();
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let da = math::hypot(points[a].position.x, points[a].position.y);
        let db = math::hypot(points[b].position.x, points[b].position.y);
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    let mut selected: Vec<usize> = order[..keep].to_vec();
    selected.sort_unstable();
    selected.iter().map(|&i| points[i].clone()).collect()
}

/// Stages a SDV-frame scene as a padded element/point tensor plus masks.
///
/// Row 0 is always the SDV; agent rows follow (nearest first when truncated),
/// then route and map elements (nearest first). Truncation keeps the
/// elements/points closest to the SDV, with ties broken by original index.
pub fn flatten_for_network(
    scene: &VectorScene,
    limits: &FlattenLimits,
) -> Result<FlattenedScene, SceneError> {
    if !scene.is_sdv_frame() {
        return Err(invalid("flatten_for_network expects an SDV-frame scene"));
    }
    if limits.e_max == 0 || limits.p_max == 0 {
        return Err(invalid("flatten limits must be positive"));
    }

    // Agents nearest-first, capped at a_max.
    let mut agent_order: Vec<usize> = (0..scene.agents.len()).collect();
    agent_order.sort_by(|&a, &b| {
        let da = {
            let p = scene.agents[a].current_pose();
            math::hypot(p.x, p.y)
        };
        let db = {
            let p = scene.agents[b].current_pose();
            math::hypot(p.x, p.y)
        };
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    agent_order.truncate(limits.a_max.min(limits.e_max.saturating_sub(1)));

    // Map + route elements nearest-first into the remaining rows.
    let mut map_elems: Vec<&PolylineElement> = Vec::with_capacity(scene.map_elements.len() + 1);
    map_elems.push(&scene.route);
    map_elems.extend(scene.map_elements.iter());
    let mut map_order: Vec<usize> = (0..map_elems.len()).collect();
    map_order.sort_by(|&a, &b| {
        let da = element_distance_to_origin(map_elems[a]);
        let db = element_distance_to_origin(map_elems[b]);
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    let map_budget = limits.e_max.saturating_sub(1 + agent_order.len());
    map_order.truncate(map_budget);

    let mut rows: Vec<PolylineElement> = Vec::with_capacity(limits.e_max);
    rows.push(sdv_element(&scene.sdv));
    let mut agent_rows = Vec::with_capacity(agent_order.len());
    for &ai in &agent_order {
        agent_rows.push((rows.len(), ai));
        rows.push(agent_element(&scene.agents[ai]));
    }
    for &mi in &map_order {
        rows.push(map_elems[mi].clone());
    }

    let (e_max, p_max) = (limits.e_max, limits.p_max);
    let mut features = vec![0.0; e_max * p_max * POINT_FEATURES];
    let mut element_mask = vec![false; e_max];
    let mut point_mask = vec![false; e_max * p_max];
    let mut element_types = vec![None; e_max];

    for (row, elem) in rows.iter().enumerate() {
        let points = truncate_points(&elem.points, p_max);
        if points.is_empty() {
            return Err(invalid("element with zero points"));
        }
        element_mask[row] = true;
        element_types[row] = Some(elem.element_type);
        for (pi, point) in points.iter().enumerate() {
            point_mask[row * p_max + pi] = true;
            let base = (row * p_max + pi) * POINT_FEATURES;
            features[base] = point.position.x;
            features[base + 1] = point.position.y;
            features[base + 2] = point.position.theta;
            features[base + 3..base + 3 + ATTR_LEN].copy_from_slice(&point.attributes);
            features[base + 3 + ATTR_LEN + elem.element_type.index()] = 1.0;
        }
    }

    if !element_mask.iter().any(|&m| m) {
        return Err(invalid("zero available elements"));
    }

    Ok(FlattenedScene {
        features,
        element_mask,
        point_mask,
        limits: *limits,
        element_types,
        agent_rows,
    })
}
