//! Safety/comfort metric evaluation over simulation traces.
//!
//! Per-tick boolean violations are debounced into events: violation runs
//! separated by less than one second of clear gap merge into a single event.
//! Discomfort braking additionally requires the violation to be sustained.

use alloc::vec::Vec;

use crate::geometry::{sat_overlap, time_headway, time_to_collision, MotionState, OrientedBox};
use crate::kinematics::SdvState;
use crate::math;
use crate::scene::{ElementType, Pose2D, ATTR_LENGTH, ATTR_WIDTH};
use crate::TICK_HZ;

use super::{Episode, SimTrace};

/// Contact margin against road agents (meters).
pub const CONTACT_MARGIN_AGENT: f64 = 0.05;
/// Contact margin against static obstacles (meters).
pub const CONTACT_MARGIN_STATIC: f64 = 0.01;
/// Close-call time-to-collision threshold (seconds).
pub const TTC_THRESHOLD: f64 = 1.5;
/// Close-call time-headway threshold (seconds).
pub const HEADWAY_THRESHOLD: f64 = 1.0;
/// Discomfort-brake deceleration threshold (m/s^2).
pub const BRAKE_ACCEL_THRESHOLD: f64 = -3.0;
/// Ticks a braking violation must persist to count (0.3 s).
pub const BRAKE_SUSTAIN_TICKS: usize = 3;
/// Speed lag/lead that counts as passive/aggressive (m/s).
pub const SPEED_GAP_THRESHOLD: f64 = 5.0;
/// Clear-gap ticks required between separate events (1 s).
pub const DEBOUNCE_TICKS: usize = TICK_HZ as usize;
/// Prediction-error horizon: 3 s.
pub const ADE_HORIZON_TICKS: usize = 30;
pub const METERS_PER_MILE: f64 = 1609.344;

/// Violation flags for one executed tick.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TickFlags {
    pub contact: bool,
    pub close_call: bool,
    pub braking: bool,
    pub passive: bool,
    pub aggressive: bool,
}

/// Running mean with explicit counts so metrics merge associatively.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanAcc {
    pub sum: f64,
    pub count: usize,
}

impl MeanAcc {
    pub fn push(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    pub fn merge(&mut self, other: &MeanAcc) {
        self.sum += other.sum;
        self.count += other.count;
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// Episode-level counters and accumulators.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeMetrics {
    pub estimated_contacts: usize,
    pub close_calls: usize,
    pub discomfort_brakes: usize,
    pub passiveness_events: usize,
    pub aggressiveness_events: usize,
    pub miles_driven: f64,
    pub ticks: usize,
    pub sdv_min_ade_3s: MeanAcc,
    pub sdv_min_fde_3s: MeanAcc,
    pub agent_min_ade_3s: MeanAcc,
    pub agent_min_fde_3s: MeanAcc,
}

impl EpisodeMetrics {
    pub fn events_per_1k_miles(&self, count: usize) -> f64 {
        if self.miles_driven <= 0.0 {
            return 0.0;
        }
        count as f64 / self.miles_driven * 1000.0
    }

    /// Associative reduction across episodes.
    pub fn merge(&mut self, other: &EpisodeMetrics) {
        self.estimated_contacts += other.estimated_contacts;
        self.close_calls += other.close_calls;
        self.discomfort_brakes += other.discomfort_brakes;
        self.passiveness_events += other.passiveness_events;
        self.aggressiveness_events += other.aggressiveness_events;
        self.miles_driven += other.miles_driven;
        self.ticks += other.ticks;
        self.sdv_min_ade_3s.merge(&other.sdv_min_ade_3s);
        self.sdv_min_fde_3s.merge(&other.sdv_min_fde_3s);
        self.agent_min_ade_3s.merge(&other.agent_min_ade_3s);
        self.agent_min_fde_3s.merge(&other.agent_min_fde_3s);
    }
}

/// Arc-length projection onto the route polyline ("behind the log" is
/// measured along the route, not by raw distance).
pub struct RouteArc {
    points: Vec<(f64, f64)>,
    cumulative: Vec<f64>,
}

impl RouteArc {
    pub fn from_route(route: &crate::scene::PolylineElement) -> Self {
        let points: Vec<(f64, f64)> = route
            .points
            .iter()
            .map(|p| (p.position.x, p.position.y))
            .collect();
        let mut cumulative = Vec::with_capacity(points.len());
        let mut total = 0.0;
        for (i, p) in points.iter().enumerate() {
            if i > 0 {
                let q = points[i - 1];
                total += math::hypot(p.0 - q.0, p.1 - q.1);
            }
            cumulative.push(total);
        }
        Self { points, cumulative }
    }

    /// Arc length of the closest point on the polyline.
    pub fn project(&self, x: f64, y: f64) -> f64 {
        if self.points.len() == 1 {
            return 0.0;
        }
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..self.points.len() - 1 {
            let a = self.points[i];
            let b = self.points[i + 1];
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let len2 = dx * dx + dy * dy;
            let t = if len2 > 0.0 {
                (((x - a.0) * dx + (y - a.1) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (px, py) = (a.0 + t * dx, a.1 + t * dy);
            let d = math::hypot(x - px, y - py);
            if d < best.0 {
                best = (d, self.cumulative[i] + t * math::sqrt(len2));
            }
        }
        best.1
    }
}

/// Static-obstacle boxes of a scene (one per `StaticObstacle` point with a
/// positive footprint).
fn static_obstacle_boxes(scene: &crate::scene::VectorScene) -> Vec<OrientedBox> {
    let mut boxes = Vec::new();
    for elem in &scene.map_elements {
        if elem.element_type != ElementType::StaticObstacle {
            continue;
        }
        for p in &elem.points {
            let (l, w) = (p.attributes[ATTR_LENGTH], p.attributes[ATTR_WIDTH]);
            if l > 0.0 && w > 0.0 {
                boxes.push(OrientedBox::from_size(p.position, (l, w)));
            }
        }
    }
    boxes
}

/// Evaluates all violation flags for one executed world-frame SDV state
/// against the logged world at `eval_tick`.
pub fn tick_flags(
    executed: &SdvState,
    sdv_size: (f64, f64),
    episode: &Episode,
    eval_tick: usize,
    route: &RouteArc,
) -> TickFlags {
    let scene = &episode.scenes[eval_tick.min(episode.scenes.len() - 1)];
    let sdv_pose = executed.pose();
    let sdv_box = OrientedBox::from_size(sdv_pose, sdv_size);
    let sdv_motion = MotionState {
        pose: sdv_pose,
        vx: executed.v * math::cos(executed.theta),
        vy: executed.v * math::sin(executed.theta),
    };

    let mut flags = TickFlags {
        braking: executed.a < BRAKE_ACCEL_THRESHOLD,
        ..TickFlags::default()
    };

    let mut headway_candidates: Vec<(Pose2D, (f64, f64))> = Vec::new();
    for agent in &scene.agents {
        let pose = agent.current_pose();
        let abox = OrientedBox::from_size(pose, agent.size);
        if sat_overlap(&sdv_box, &abox, CONTACT_MARGIN_AGENT).unwrap_or(false) {
            flags.contact = true;
        }
        let (vx, vy) = agent.velocity_estimate();
        let agent_motion = MotionState { pose, vx, vy };
        if let Ok(Some(ttc)) =
            time_to_collision(&sdv_motion, &agent_motion, sdv_size, agent.size, TTC_THRESHOLD)
        {
            if ttc < TTC_THRESHOLD {
                flags.close_call = true;
            }
        }
        headway_candidates.push((pose, agent.size));
    }
    if let Some(headway) = time_headway(&sdv_motion, sdv_size, &headway_candidates) {
        if headway < HEADWAY_THRESHOLD {
            flags.close_call = true;
        }
    }
    for obstacle in static_obstacle_boxes(scene) {
        if sat_overlap(&sdv_box, &obstacle, CONTACT_MARGIN_STATIC).unwrap_or(false) {
            flags.contact = true;
        }
    }

    let sim_arc = route.project(executed.x, executed.y);
    let log_arc = route.project(scene.sdv.pose.x, scene.sdv.pose.y);
    let log_speed = scene.sdv.speed;
    if sim_arc < log_arc && executed.v <= log_speed - SPEED_GAP_THRESHOLD {
        flags.passive = true;
    }
    if sim_arc > log_arc && executed.v >= log_speed + SPEED_GAP_THRESHOLD {
        flags.aggressive = true;
    }
    flags
}

/// Counts debounced events: runs of `true` of at least `min_run` ticks,
/// with runs separated by less than [`DEBOUNCE_TICKS`] of clear gap merged.
pub fn debounced_events(mask: &[bool], min_run: usize) -> usize {
    let mut events = 0;
    let mut run = 0usize;
    let mut clear = usize::MAX; // ticks since the last qualifying run ended
    for &v in mask {
        if v {
            run += 1;
            if run == min_run {
                // qualifies: new event unless it follows a short gap
                if clear >= DEBOUNCE_TICKS {
                    events += 1;
                }
                clear = 0;
            } else if run > min_run {
                clear = 0;
            }
        } else {
            run = 0;
            clear = clear.saturating_add(1);
        }
    }
    events
}

/// Recomputes episode metrics from a trace. `run_closed_loop` uses this same
/// path online, so re-scanning a stored trace reproduces its metrics
/// exactly.
pub fn compute_metrics(trace: &SimTrace, episode: &Episode) -> EpisodeMetrics {
    let route = RouteArc::from_route(&episode.scenes[0].route);
    let sdv_size = episode.scenes[0].sdv.size;

    let mut metrics = EpisodeMetrics {
        ticks: trace.records.len(),
        ..EpisodeMetrics::default()
    };

    let mut contact = Vec::with_capacity(trace.records.len());
    let mut close_call = Vec::with_capacity(trace.records.len());
    let mut braking = Vec::with_capacity(trace.records.len());
    let mut passive = Vec::with_capacity(trace.records.len());
    let mut aggressive = Vec::with_capacity(trace.records.len());

    let mut prev = (
        episode.scenes[0].sdv.pose.x,
        episode.scenes[0].sdv.pose.y,
    );
    for record in &trace.records {
        let flags = tick_flags(
            &record.executed,
            sdv_size,
            episode,
            record.tick + 1,
            &route,
        );
        contact.push(flags.contact);
        close_call.push(flags.close_call);
        braking.push(flags.braking);
        passive.push(flags.passive);
        aggressive.push(flags.aggressive);

        metrics.miles_driven +=
            math::hypot(record.executed.x - prev.0, record.executed.y - prev.1)
                / METERS_PER_MILE;
        prev = (record.executed.x, record.executed.y);

        if let Some(v) = record.sdv_ade {
            metrics.sdv_min_ade_3s.push(v);
        }
        if let Some(v) = record.sdv_fde {
            metrics.sdv_min_fde_3s.push(v);
        }
        if let Some(v) = record.agent_ade {
            metrics.agent_min_ade_3s.push(v);
        }
        if let Some(v) = record.agent_fde {
            metrics.agent_min_fde_3s.push(v);
        }
    }

    metrics.estimated_contacts = debounced_events(&contact, 1);
    metrics.close_calls = debounced_events(&close_call, 1);
    metrics.discomfort_brakes = debounced_events(&braking, BRAKE_SUSTAIN_TICKS);
    metrics.passiveness_events = debounced_events(&passive, 1);
    metrics.aggressiveness_events = debounced_events(&aggressive, 1);
    metrics
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn debounce_counts_separated_runs() {
        let mut mask = vec![false; 40];
        for i in 2..5 {
            mask[i] = true;
        }
        for i in 25..28 {
            mask[i] = true; // second run, 20 ticks clear
        }
        assert_eq!(debounced_events(&mask, 1), 2);
    }

    #[test]
    fn debounce_merges_close_runs() {
        let mut mask = vec![false; 40];
        for i in 2..5 {
            mask[i] = true;
        }
        for i in 9..12 {
            mask[i] = true; // 4 ticks clear: same event
        }
        assert_eq!(debounced_events(&mask, 1), 1);
    }

    #[test]
    fn sustained_requirement_filters_short_runs() {
        let mut mask = vec![false; 30];
        mask[3] = true;
        mask[4] = true; // 0.2 s: too short
        assert_eq!(debounced_events(&mask, 3), 0);
        for i in 20..25 {
            mask[i] = true; // 0.5 s plateau
        }
        assert_eq!(debounced_events(&mask, 3), 1);
    }

    #[test]
    fn route_projection_monotone_along_straight_route() {
        let route = crate::scene::PolylineElement {
            element_type: ElementType::RouteGoal,
            points: (0..10)
                .map(|i| {
                    crate::scene::ScenePoint::at(Pose2D::new(i as f64 * 5.0, 0.0, 0.0))
                })
                .collect(),
            source_id: 0,
        };
        let arc = RouteArc::from_route(&route);
        assert!((arc.project(0.0, 0.0) - 0.0).abs() < 1e-12);
        assert!((arc.project(7.5, 1.0) - 7.5).abs() < 1e-12);
        assert!((arc.project(44.0, -2.0) - 44.0).abs() < 1e-12);
        // beyond the end clamps to total length
        assert!((arc.project(99.0, 0.0) - 45.0).abs() < 1e-12);
    }
}
