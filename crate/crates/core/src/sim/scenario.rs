//! Synthetic scenario generation: scripted, kinematically consistent
//! episodes standing in for recorded drives.
//!
//! The SDV ground truth is produced by scripting jerk controls through the
//! same unicycle rollout the planner uses, so logged states satisfy the
//! rollout-consistency invariant exactly. Scripted agents integrate their
//! speed profiles with the same semi-implicit order, so their logged
//! positions are exact integrals of their speed traces.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::kinematics::{rollout_unicycle, InitialState, SdvControl, SdvState};
use crate::math;
use crate::scene::{
    AgentFuture, AgentSnapshot, AgentType, ElementType, GroundTruth, PolylineElement, Pose2D,
    ScenePoint, SdvGtState, SdvSnapshot, VectorScene, AGENT_HISTORY_TICKS, AGENT_HORIZON,
    ATTR_AUX, ATTR_LENGTH, ATTR_WIDTH, SDV_HISTORY_TICKS, SDV_HORIZON,
};
use crate::DT;

use super::Episode;

pub const LANE_WIDTH: f64 = 3.5;
pub const SDV_SIZE: (f64, f64) = (4.5, 2.0);
pub const VEHICLE_SIZE: (f64, f64) = (4.4, 1.9);
/// Agents farther than this from the logged SDV are marked out of
/// perception in the ground truth.
pub const PERCEPTION_RANGE: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    /// Free cruising, benign traffic, occasional parked car.
    StraightRoad,
    /// Crossing traffic at an intersection; the SDV yields when needed.
    Intersection,
    /// Lead vehicle ahead: stopped, braking to a stop, or slow.
    LeadVehicle,
    /// Adjacent-lane vehicle merges in front and slows down.
    CutIn,
    /// Oncoming vehicle turns left or right 50/50 at an intersection;
    /// episode pairs share all other parameters.
    TurnBimodal,
}

impl core::str::FromStr for ScenarioKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "straight-road" | "StraightRoad" => ScenarioKind::StraightRoad,
            "intersection" | "Intersection" => ScenarioKind::Intersection,
            "lead-vehicle" | "LeadVehicle" => ScenarioKind::LeadVehicle,
            "cut-in" | "CutIn" => ScenarioKind::CutIn,
            "turn-bimodal" | "TurnBimodal" => ScenarioKind::TurnBimodal,
            _ => return Err(()),
        })
    }
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::StraightRoad => "straight-road",
            ScenarioKind::Intersection => "intersection",
            ScenarioKind::LeadVehicle => "lead-vehicle",
            ScenarioKind::CutIn => "cut-in",
            ScenarioKind::TurnBimodal => "turn-bimodal",
        }
    }

    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::StraightRoad,
        ScenarioKind::Intersection,
        ScenarioKind::LeadVehicle,
        ScenarioKind::CutIn,
        ScenarioKind::TurnBimodal,
    ];
}

/// Scripted agent track covering history, episode, and future horizon.
/// `poses[i]` is the pose at tick `i - AGENT_HISTORY_TICKS + 1` relative to
/// episode start (so the first entries are pre-episode history).
struct AgentScript {
    id: u64,
    size: (f64, f64),
    agent_type: AgentType,
    poses: Vec<Pose2D>,
}

impl AgentScript {
    fn pose_at(&self, tick: i64) -> Pose2D {
        let idx = tick + AGENT_HISTORY_TICKS as i64 - 1;
        let idx = idx.clamp(0, self.poses.len() as i64 - 1) as usize;
        self.poses[idx]
    }
}

struct Scenario {
    ticks: usize,
    sdv_initial: InitialState,
    sdv_states: Vec<SdvState>,
    agents: Vec<AgentScript>,
    /// Parked obstacles: pose + footprint.
    statics: Vec<(Pose2D, (f64, f64))>,
    /// Crossing road at this x, if any (adds perpendicular lane geometry).
    cross_road_x: Option<f64>,
    /// Traffic-light status code at the crossing (0 unknown, 1 red, 2 green).
    traffic_light: Option<f64>,
    route_from_x: f64,
}

pub fn generate_scenarios(kind: ScenarioKind, count: usize, seed: u64) -> Vec<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut episodes = Vec::with_capacity(count);
    // TurnBimodal episodes come in parameter-matched pairs differing only in
    // the turn direction, which makes the future genuinely ambiguous.
    let mut pending_turn: Option<(f64, f64, f64, f64, usize)> = None;
    for i in 0..count {
        let scenario = match kind {
            ScenarioKind::StraightRoad => straight_road(&mut rng),
            ScenarioKind::Intersection => intersection(&mut rng),
            ScenarioKind::LeadVehicle => lead_vehicle(&mut rng),
            ScenarioKind::CutIn => cut_in(&mut rng),
            ScenarioKind::TurnBimodal => {
                let (params, left) = match pending_turn.take() {
                    Some(p) => ((p.0, p.1, p.2, p.3, p.4), false),
                    None => {
                        let p = (
                            rng.gen_range(2.0..2.5),   // sdv speed
                            rng.gen_range(25.0..35.0), // turn x
                            rng.gen_range(4.0..6.0),   // agent speed
                            rng.gen_range(6.0..9.0),   // turn radius
                            rng.gen_range(100..120usize),
                        );
                        pending_turn = Some(p);
                        (p, true)
                    }
                };
                turn_bimodal(params, left)
            }
        };
        episodes.push(assemble_episode(i as u64, scenario));
    }
    episodes
}

fn ticks_for(rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(100..120)
}

/// Scripts straight-lane SDV jerk controls with a simple gap-keeping law
/// against an optional (possibly virtual) lead, then rolls them out.
fn follow_rollout(
    v0: f64,
    v_cruise: f64,
    total: usize,
    lead_center_x: impl Fn(usize) -> Option<(f64, f64)>, // (center x, half length)
) -> (InitialState, Vec<SdvState>) {
    const D0: f64 = 2.0;
    const T_GAP: f64 = 2.0;
    const A_MIN: f64 = -5.5;
    const A_MAX: f64 = 2.0;

    let initial = InitialState {
        x: 0.0,
        y: 0.0,
        theta: 0.0,
        v: v0,
        a: 0.0,
    };
    let mut controls = Vec::with_capacity(total);
    let (mut x, mut v, mut a) = (initial.x, initial.v, initial.a);
    for t in 0..total {
        let v_safe = match lead_center_x(t) {
            Some((cx, half_len)) => {
                let gap = cx - x - SDV_SIZE.0 / 2.0 - half_len;
                ((gap - D0) / T_GAP).max(0.0)
            }
            None => f64::INFINITY,
        };
        let v_des = v_cruise.min(v_safe);
        let a_des = ((v_des - v) / 0.4).clamp(A_MIN, A_MAX);
        let control = SdvControl {
            jerk: (a_des - a) / DT,
            curvature: 0.0,
        }
        .clamped();
        controls.push(control);
        // mirror of the rollout arithmetic, straight-line case
        a += control.jerk * DT;
        v = (v + a * DT).max(0.0);
        x += v * DT;
    }
    let traj = rollout_unicycle(&initial, &controls, DT).expect("scripted controls are finite");
    (initial, traj.states)
}

/// Straight-line agent from a per-tick speed profile (semi-implicit, same
/// order as the SDV rollout so positions are exact speed integrals).
fn straight_agent(
    id: u64,
    start_x: f64,
    y: f64,
    heading: f64,
    speed_at: impl Fn(usize) -> f64,
    total_ticks: usize,
) -> AgentScript {
    let pre = AGENT_HISTORY_TICKS - 1;
    let total = pre + total_ticks + AGENT_HORIZON + 1;
    let dir = (math::cos(heading), math::sin(heading));
    let mut poses = Vec::with_capacity(total);
    // back-extrapolate history at the initial speed
    let v0 = speed_at(0);
    for k in (1..=pre).rev() {
        let d = v0 * DT * k as f64;
        poses.push(Pose2D::new(start_x - dir.0 * d, y - dir.1 * d, heading));
    }
    let (mut x, mut py) = (start_x, y);
    poses.push(Pose2D::new(x, py, heading));
    for t in 1..=total_ticks + AGENT_HORIZON {
        let v = speed_at(t);
        x += dir.0 * v * DT;
        py += dir.1 * v * DT;
        poses.push(Pose2D::new(x, py, heading));
    }
    AgentScript {
        id,
        size: VEHICLE_SIZE,
        agent_type: AgentType::Vehicle,
        poses,
    }
}

fn straight_road(rng: &mut ChaCha8Rng) -> Scenario {
    let ticks = ticks_for(rng);
    let v0 = rng.gen_range(5.0..12.0);
    let total = ticks + SDV_HORIZON;
    let (initial, states) = follow_rollout(v0, v0, total, |_| None);

    let mut agents = Vec::new();
    if rng.gen_bool(0.6) {
        // benign lead far ahead at the same speed
        let gap = rng.gen_range(45.0..65.0);
        agents.push(straight_agent(1, gap, 0.0, 0.0, |_| v0, ticks));
    }
    if rng.gen_bool(0.5) {
        // oncoming traffic in the left lane
        let x0 = rng.gen_range(60.0..90.0);
        let u = rng.gen_range(6.0..10.0);
        agents.push(straight_agent(
            2,
            x0,
            LANE_WIDTH,
            core::f64::consts::PI,
            move |_| u,
            ticks,
        ));
    }
    let mut statics = Vec::new();
    if rng.gen_bool(0.3) {
        let x = rng.gen_range(20.0..60.0);
        statics.push((Pose2D::new(x, -2.7, 0.0), (4.5, 1.9)));
    }

    Scenario {
        ticks,
        sdv_initial: initial,
        sdv_states: states,
        agents,
        statics,
        cross_road_x: None,
        traffic_light: None,
        route_from_x: 0.0,
    }
}

fn lead_vehicle(rng: &mut ChaCha8Rng) -> Scenario {
    let ticks = ticks_for(rng);
    let v0 = rng.gen_range(6.0..10.0);
    let gap0 = rng.gen_range(20.0..40.0);
    let total = ticks + SDV_HORIZON;

    // lead behavior: stopped / braking to a stop / slower constant speed
    let behavior = rng.gen_range(0..3u8);
    let lead_v0 = match behavior {
        0 => 0.0,
        1 => rng.gen_range(4.0..8.0),
        _ => v0 * rng.gen_range(0.5..0.8),
    };
    let brake_from = rng.gen_range(10..30usize);
    let speed_at = move |t: usize| -> f64 {
        if behavior == 1 && t >= brake_from {
            (lead_v0 - 2.5 * (t - brake_from) as f64 * DT).max(0.0)
        } else {
            lead_v0
        }
    };
    let lead = straight_agent(1, gap0, 0.0, 0.0, speed_at, ticks);

    // precompute lead center positions for the following controller
    let lead_x: Vec<f64> = (0..=total as i64).map(|t| lead.pose_at(t).x).collect();
    let (initial, states) = follow_rollout(v0, v0, total, |t| {
        Some((lead_x[t.min(lead_x.len() - 1)], VEHICLE_SIZE.0 / 2.0))
    });

    Scenario {
        ticks,
        sdv_initial: initial,
        sdv_states: states,
        agents: vec![lead],
        statics: Vec::new(),
        cross_road_x: None,
        traffic_light: None,
        route_from_x: 0.0,
    }
}

fn cut_in(rng: &mut ChaCha8Rng) -> Scenario {
    let ticks = ticks_for(rng);
    let v0 = rng.gen_range(6.0..10.0);
    let total = ticks + SDV_HORIZON;
    let ahead = rng.gen_range(10.0..18.0);
    let agent_v = v0 * rng.gen_range(0.75..0.95);
    let slow_to = agent_v * rng.gen_range(0.5..0.75);
    let merge_start = rng.gen_range(8..15usize);
    let merge_ticks = 25usize;

    // cut-in agent: slides from the left lane into the SDV lane, then slows
    let pre = AGENT_HISTORY_TICKS - 1;
    let mut poses = Vec::new();
    for k in (1..=pre).rev() {
        poses.push(Pose2D::new(
            ahead - agent_v * DT * k as f64,
            LANE_WIDTH,
            0.0,
        ));
    }
    let (mut x, mut v) = (ahead, agent_v);
    let mut prev_y = LANE_WIDTH;
    poses.push(Pose2D::new(x, prev_y, 0.0));
    for t in 1..=ticks + AGENT_HORIZON {
        if t > merge_start + merge_ticks && v > slow_to {
            v = (v - 2.0 * DT).max(slow_to);
        }
        x += v * DT;
        let u = ((t as f64 - merge_start as f64) / merge_ticks as f64).clamp(0.0, 1.0);
        let y = LANE_WIDTH * (1.0 - u * u * (3.0 - 2.0 * u));
        let theta = math::atan2(y - prev_y, v * DT);
        poses.push(Pose2D::new(x, y, theta));
        prev_y = y;
    }
    let agent = AgentScript {
        id: 1,
        size: VEHICLE_SIZE,
        agent_type: AgentType::Vehicle,
        poses,
    };

    let agent_x: Vec<f64> = (0..=total as i64).map(|t| agent.pose_at(t).x).collect();
    let agent_y: Vec<f64> = (0..=total as i64).map(|t| agent.pose_at(t).y).collect();
    let (initial, states) = follow_rollout(v0, v0, total, |t| {
        let i = t.min(agent_x.len() - 1);
        // the merging car becomes a lead once it is in (or near) our lane
        (agent_y[i].abs() < 1.8).then_some((agent_x[i], VEHICLE_SIZE.0 / 2.0))
    });

    Scenario {
        ticks,
        sdv_initial: initial,
        sdv_states: states,
        agents: vec![agent],
        statics: Vec::new(),
        cross_road_x: None,
        traffic_light: None,
        route_from_x: 0.0,
    }
}

fn intersection(rng: &mut ChaCha8Rng) -> Scenario {
    let ticks = ticks_for(rng);
    let v0 = rng.gen_range(6.0..10.0);
    let total = ticks + SDV_HORIZON;
    let cross_x = rng.gen_range(30.0..50.0);
    let u = rng.gen_range(5.0..9.0);
    let arrive = rng.gen_range(2.0..5.0); // seconds until the agent crosses
    let start_y = u * arrive;

    let agent = straight_agent(
        1,
        cross_x,
        start_y,
        -core::f64::consts::FRAC_PI_2,
        move |_| u,
        ticks,
    );
    // note: straight_agent moves along the heading, so x stays at cross_x
    // and y decreases from start_y.

    let agent_y: Vec<f64> = (0..=total as i64).map(|t| agent.pose_at(t).y).collect();
    let stop_line = cross_x - 8.0;
    let (initial, states) = follow_rollout(v0, v0, total, |t| {
        let y = agent_y[t.min(agent_y.len() - 1)];
        // yield until the crossing vehicle has cleared our lane
        (y > -6.0).then_some((stop_line + SDV_SIZE.0 / 2.0, 0.0))
    });

    Scenario {
        ticks,
        sdv_initial: initial,
        sdv_states: states,
        agents: vec![agent],
        statics: Vec::new(),
        cross_road_x: Some(cross_x),
        traffic_light: Some(2.0),
        route_from_x: 0.0,
    }
}

fn turn_bimodal(params: (f64, f64, f64, f64, usize), turn_left: bool) -> Scenario {
    let (v0, turn_x, u, radius, ticks) = params;
    let total = ticks + SDV_HORIZON;
    let (initial, states) = follow_rollout(v0, v0, total, |_| None);

    // Oncoming vehicle in the left lane approaches the crossing and turns.
    let pre = AGENT_HISTORY_TICKS - 1;
    let start_x = turn_x + u * 2.0; // reaches the turn ~2 s into the episode
    let mut poses = Vec::new();
    for k in (1..=pre).rev() {
        poses.push(Pose2D::new(
            start_x + u * DT * k as f64,
            LANE_WIDTH,
            core::f64::consts::PI,
        ));
    }
    let mut pose = Pose2D::new(start_x, LANE_WIDTH, core::f64::consts::PI);
    poses.push(pose);
    let omega = if turn_left { -u / radius } else { u / radius };
    let mut turned = 0.0f64;
    for _ in 1..=ticks + AGENT_HORIZON {
        let turning = pose.x <= turn_x && turned < core::f64::consts::FRAC_PI_2;
        let theta = if turning {
            turned += math::abs(omega) * DT;
            pose.theta + omega * DT
        } else {
            pose.theta
        };
        pose = Pose2D::new(
            pose.x + u * DT * math::cos(theta),
            pose.y + u * DT * math::sin(theta),
            theta,
        );
        poses.push(pose);
    }
    let agent = AgentScript {
        id: 1,
        size: VEHICLE_SIZE,
        agent_type: AgentType::Vehicle,
        poses,
    };

    Scenario {
        ticks,
        sdv_initial: initial,
        sdv_states: states,
        agents: vec![agent],
        statics: Vec::new(),
        cross_road_x: Some(turn_x),
        traffic_light: None,
        route_from_x: 0.0,
    }
}

// ---------------------------------------------------------------------------
// assembly

fn lane_polyline(element_type: ElementType, y: f64, source_id: u64) -> PolylineElement {
    PolylineElement {
        element_type,
        points: (-4..=34)
            .map(|i| ScenePoint::at(Pose2D::new(i as f64 * 5.0, y, 0.0)))
            .collect(),
        source_id,
    }
}

fn cross_polyline(element_type: ElementType, x: f64, source_id: u64) -> PolylineElement {
    PolylineElement {
        element_type,
        points: (-6..=6)
            .map(|i| {
                ScenePoint::at(Pose2D::new(x, i as f64 * 5.0, -core::f64::consts::FRAC_PI_2))
            })
            .collect(),
        source_id,
    }
}

fn sdv_state_at(scenario: &Scenario, tick: usize) -> SdvState {
    if tick == 0 {
        SdvState {
            x: scenario.sdv_initial.x,
            y: scenario.sdv_initial.y,
            theta: scenario.sdv_initial.theta,
            v: scenario.sdv_initial.v,
            a: scenario.sdv_initial.a,
            k: 0.0,
            j: 0.0,
        }
    } else {
        scenario.sdv_states[tick - 1]
    }
}

fn assemble_episode(id: u64, scenario: Scenario) -> Episode {
    let mut map_elements = Vec::new();
    map_elements.push(lane_polyline(ElementType::LaneBoundary, -LANE_WIDTH / 2.0, 10));
    map_elements.push(lane_polyline(ElementType::LaneBoundary, LANE_WIDTH / 2.0, 11));
    map_elements.push(lane_polyline(
        ElementType::LaneBoundary,
        1.5 * LANE_WIDTH,
        12,
    ));
    map_elements.push(lane_polyline(ElementType::LaneCenter, 0.0, 13));
    map_elements.push(lane_polyline(ElementType::LaneCenter, LANE_WIDTH, 14));
    if let Some(x) = scenario.cross_road_x {
        map_elements.push(cross_polyline(ElementType::LaneCenter, x, 15));
        map_elements.push(cross_polyline(ElementType::LaneBoundary, x - LANE_WIDTH / 2.0, 16));
        map_elements.push(cross_polyline(ElementType::LaneBoundary, x + LANE_WIDTH / 2.0, 17));
        let mut corner = ScenePoint::at(Pose2D::new(x, 0.0, 0.0));
        corner.attributes[ATTR_LENGTH] = 2.0 * LANE_WIDTH;
        corner.attributes[ATTR_WIDTH] = 2.0 * LANE_WIDTH;
        map_elements.push(PolylineElement {
            element_type: ElementType::Intersection,
            points: vec![corner],
            source_id: 18,
        });
        if let Some(status) = scenario.traffic_light {
            let mut point = ScenePoint::at(Pose2D::new(x - 6.0, LANE_WIDTH / 2.0, 0.0));
            point.attributes[ATTR_AUX] = status;
            map_elements.push(PolylineElement {
                element_type: ElementType::TrafficLight,
                points: vec![point],
                source_id: 19,
            });
        }
    }
    for (i, (pose, size)) in scenario.statics.iter().enumerate() {
        let mut point = ScenePoint::at(*pose);
        point.attributes[ATTR_LENGTH] = size.0;
        point.attributes[ATTR_WIDTH] = size.1;
        map_elements.push(PolylineElement {
            element_type: ElementType::StaticObstacle,
            points: vec![point],
            source_id: 20 + i as u64,
        });
    }

    let route = PolylineElement {
        element_type: ElementType::RouteGoal,
        points: (0..=28)
            .map(|i| ScenePoint::at(Pose2D::new(scenario.route_from_x + i as f64 * 5.0, 0.0, 0.0)))
            .collect(),
        source_id: 1,
    };

    let mut scenes = Vec::with_capacity(scenario.ticks);
    for tick in 0..scenario.ticks {
        let sdv_state = sdv_state_at(&scenario, tick);
        let sdv_pose = sdv_state.pose();

        let moving_history = (0..SDV_HISTORY_TICKS)
            .map(|k| {
                let t = tick as i64 - (SDV_HISTORY_TICKS - 1 - k) as i64;
                if t <= 0 {
                    scenario.sdv_initial.v > 0.1
                } else {
                    sdv_state_at(&scenario, t as usize).v > 0.1
                }
            })
            .collect();

        let agents: Vec<AgentSnapshot> = scenario
            .agents
            .iter()
            .map(|script| AgentSnapshot {
                agent_id: script.id,
                pose_history: (0..AGENT_HISTORY_TICKS)
                    .map(|k| {
                        script.pose_at(tick as i64 - (AGENT_HISTORY_TICKS - 1 - k) as i64)
                    })
                    .collect(),
                size: script.size,
                agent_type: script.agent_type,
            })
            .collect();

        let sdv_future: Vec<SdvGtState> = (1..=SDV_HORIZON)
            .map(|dt| {
                let s = sdv_state_at(&scenario, tick + dt);
                SdvGtState {
                    pose: s.pose(),
                    v: s.v,
                    a: s.a,
                }
            })
            .collect();
        let agent_futures: Vec<AgentFuture> = scenario
            .agents
            .iter()
            .map(|script| AgentFuture {
                agent_id: script.id,
                poses: (1..=AGENT_HORIZON)
                    .map(|dt| {
                        let future_tick = (tick + dt) as i64;
                        let pose = script.pose_at(future_tick);
                        let sdv_then =
                            sdv_state_at(&scenario, (tick + dt).min(scenario.ticks - 1));
                        let dist = math::hypot(pose.x - sdv_then.x, pose.y - sdv_then.y);
                        (dist <= PERCEPTION_RANGE).then_some(pose)
                    })
                    .collect(),
            })
            .collect();

        scenes.push(VectorScene {
            sdv: SdvSnapshot {
                pose: sdv_pose,
                speed: sdv_state.v,
                acceleration: sdv_state.a,
                size: SDV_SIZE,
                moving_history,
            },
            agents,
            map_elements: map_elements.clone(),
            route: route.clone(),
            timestamp: tick as f64 * DT,
            ground_truth: Some(GroundTruth {
                sdv_future,
                agent_futures,
            }),
            sdv_world_pose: None,
        });
    }

    Episode { id, scenes }
}
