use super::*;
use crate::kinematics::{rollout_unicycle, InitialState, SdvControl, SdvTrajectory};
use crate::model::{
    AgentPrediction, AgentPredictionSet, Model, ModelConfig, Prediction, TrajectoryDistribution,
};
use crate::scene::{
    AgentFuture, AgentSnapshot, AgentType, ElementType, GroundTruth, PolylineElement, ScenePoint,
    SdvGtState, AGENT_HISTORY_TICKS, AGENT_HORIZON, SDV_HISTORY_TICKS, SDV_HORIZON,
};
use crate::DT;
use alloc::vec;

/// Constant-velocity episode with an optional constant-speed agent in the
/// SDV lane, for scripting exact stub behaviors.
fn cruise_episode(v0: f64, ticks: usize, agent: Option<(f64, f64)>) -> Episode {
    let route = PolylineElement {
        element_type: ElementType::RouteGoal,
        points: (0..30)
            .map(|i| ScenePoint::at(Pose2D::new(i as f64 * 5.0, 0.0, 0.0)))
            .collect(),
        source_id: 1,
    };
    let sdv_x = |tick: i64| v0 * tick as f64 * DT;
    let scenes = (0..ticks)
        .map(|tick| {
            let agents: Vec<AgentSnapshot> = agent
                .iter()
                .map(|&(x0, speed)| AgentSnapshot {
                    agent_id: 7,
                    pose_history: (0..AGENT_HISTORY_TICKS)
                        .map(|k| {
                            let t = tick as i64 - (AGENT_HISTORY_TICKS - 1 - k) as i64;
                            Pose2D::new(x0 + speed * t as f64 * DT, 0.0, 0.0)
                        })
                        .collect(),
                    size: (4.0, 2.0),
                    agent_type: AgentType::Vehicle,
                })
                .collect();
            let agent_futures = agent
                .iter()
                .map(|&(x0, speed)| AgentFuture {
                    agent_id: 7,
                    poses: (1..=AGENT_HORIZON)
                        .map(|dt| {
                            Some(Pose2D::new(
                                x0 + speed * (tick + dt) as f64 * DT,
                                0.0,
                                0.0,
                            ))
                        })
                        .collect(),
                })
                .collect();
            VectorScene {
                sdv: SdvSnapshot {
                    pose: Pose2D::new(sdv_x(tick as i64), 0.0, 0.0),
                    speed: v0,
                    acceleration: 0.0,
                    size: (4.0, 2.0),
                    moving_history: vec![v0 > 0.1; SDV_HISTORY_TICKS],
                },
                agents,
                map_elements: vec![],
                route: route.clone(),
                timestamp: tick as f64 * DT,
                ground_truth: Some(GroundTruth {
                    sdv_future: (1..=SDV_HORIZON)
                        .map(|dt| SdvGtState {
                            pose: Pose2D::new(sdv_x((tick + dt) as i64), 0.0, 0.0),
                            v: v0,
                            a: 0.0,
                        })
                        .collect(),
                    agent_futures,
                }),
                sdv_world_pose: None,
            }
        })
        .collect();
    Episode { id: 0, scenes }
}

/// Outputs the logged future as its plan, replicated across `n` experts.
struct OracleStub {
    n: usize,
}

impl Planner for OracleStub {
    fn plan(&self, scene: &VectorScene) -> Result<Prediction, ModelError> {
        let gt = scene.ground_truth.as_ref().expect("episode has gt");
        let traj = SdvTrajectory {
            initial: InitialState {
                x: 0.0,
                y: 0.0,
                theta: 0.0,
                v: scene.sdv.speed,
                a: scene.sdv.acceleration,
            },
            states: gt
                .sdv_future
                .iter()
                .map(|s| crate::kinematics::SdvState {
                    x: s.pose.x,
                    y: s.pose.y,
                    theta: s.pose.theta,
                    v: s.v,
                    a: s.a,
                    k: 0.0,
                    j: 0.0,
                })
                .collect(),
        };
        let mut probabilities = vec![0.0; self.n];
        probabilities[0] = 1.0;
        Ok(Prediction {
            sdv: TrajectoryDistribution {
                trajectories: vec![traj; self.n],
                probabilities,
                logits: vec![0.0; self.n],
            },
            agents: AgentPredictionSet::default(),
        })
    }
}

/// Brakes as hard as the control clamp allows, every tick.
struct BrakeStub;

impl Planner for BrakeStub {
    fn plan(&self, scene: &VectorScene) -> Result<Prediction, ModelError> {
        let controls = vec![
            SdvControl {
                jerk: -crate::kinematics::JERK_MAX,
                curvature: 0.0,
            };
            SDV_HORIZON
        ];
        let traj = rollout_unicycle(
            &InitialState {
                x: 0.0,
                y: 0.0,
                theta: 0.0,
                v: scene.sdv.speed,
                a: scene.sdv.acceleration,
            },
            &controls,
            DT,
        )?;
        Ok(Prediction {
            sdv: TrajectoryDistribution {
                trajectories: vec![traj],
                probabilities: vec![1.0],
                logits: vec![0.0],
            },
            agents: AgentPredictionSet::default(),
        })
    }
}

/// Holds speed and heading no matter what (drives into whatever is ahead).
struct RamStub;

impl Planner for RamStub {
    fn plan(&self, scene: &VectorScene) -> Result<Prediction, ModelError> {
        let controls = vec![
            SdvControl {
                jerk: 0.0,
                curvature: 0.0,
            };
            SDV_HORIZON
        ];
        let traj = rollout_unicycle(
            &InitialState {
                x: 0.0,
                y: 0.0,
                theta: 0.0,
                v: scene.sdv.speed,
                a: scene.sdv.acceleration,
            },
            &controls,
            DT,
        )?;
        Ok(Prediction {
            sdv: TrajectoryDistribution {
                trajectories: vec![traj],
                probabilities: vec![1.0],
                logits: vec![0.0],
            },
            agents: AgentPredictionSet::default(),
        })
    }
}

#[test]
fn oracle_stub_reproduces_log() {
    let episode = cruise_episode(8.0, 100, None);
    let (metrics, trace) =
        run_closed_loop(&episode, &OracleStub { n: 2 }, &PolicyConfig::default()).unwrap();
    assert!(trace.aborted.is_none());
    // the state executed at tick t is the log state of tick t+1; the final
    // tick steps one past the last logged scene
    for record in trace.records.iter().take(trace.records.len() - 1) {
        let log_pose = episode.scenes[record.tick + 1].sdv.pose;
        assert!(
            (record.executed.x - log_pose.x).abs() < 1e-6
                && (record.executed.y - log_pose.y).abs() < 1e-6,
            "sim diverged from log at tick {}",
            record.tick
        );
    }
    assert_eq!(metrics.passiveness_events, 0);
    assert_eq!(metrics.aggressiveness_events, 0);
    assert_eq!(metrics.estimated_contacts, 0);
}

#[test]
fn brake_stub_stops_and_goes_passive() {
    let episode = cruise_episode(9.0, 120, None);
    let (metrics, trace) =
        run_closed_loop(&episode, &BrakeStub, &PolicyConfig::default()).unwrap();
    assert!(trace.aborted.is_none());
    assert_eq!(trace.records.last().unwrap().executed.v, 0.0);
    assert_eq!(metrics.passiveness_events, 1, "single merged lag event");
    assert_eq!(metrics.discomfort_brakes, 1, "one sustained braking event");
}

#[test]
fn ram_stub_contact_matches_offline_sat_scan() {
    // stopped agent dead ahead; stub holds 8 m/s
    let episode = cruise_episode(8.0, 80, Some((20.0, 0.0)));
    let (metrics, trace) = run_closed_loop(&episode, &RamStub, &PolicyConfig::default()).unwrap();
    assert!(metrics.estimated_contacts >= 1);

    // offline re-scan: first tick whose executed box hits the agent box
    use crate::geometry::{sat_overlap, OrientedBox};
    let first_flagged = trace
        .records
        .iter()
        .find(|r| r.flags.contact)
        .map(|r| r.tick)
        .expect("must flag a contact");
    let first_scanned = trace
        .records
        .iter()
        .find(|r| {
            let eval = (r.tick + 1).min(episode.scenes.len() - 1);
            let agent = &episode.scenes[eval].agents[0];
            sat_overlap(
                &OrientedBox::from_size(r.executed.pose(), (4.0, 2.0)),
                &OrientedBox::from_size(agent.current_pose(), agent.size),
                metrics::CONTACT_MARGIN_AGENT,
            )
            .unwrap()
        })
        .map(|r| r.tick)
        .expect("scan must find the contact");
    assert_eq!(first_flagged, first_scanned);
}

#[test]
fn trace_replay_reproduces_metrics_exactly() {
    let episode = cruise_episode(8.0, 80, Some((20.0, 0.0)));
    let (metrics, trace) = run_closed_loop(&episode, &RamStub, &PolicyConfig::default()).unwrap();
    let recomputed = compute_metrics(&trace, &episode);
    assert_eq!(metrics, recomputed);
}

#[test]
fn replayed_agent_poses_match_log_exactly() {
    let episode = cruise_episode(8.0, 60, Some((30.0, 2.0)));
    let (_, trace) =
        run_closed_loop(&episode, &OracleStub { n: 1 }, &PolicyConfig::default()).unwrap();
    for record in &trace.records {
        let eval = (record.tick + 1).min(episode.scenes.len() - 1);
        let logged = episode.scenes[eval].agents[0].current_pose();
        assert_eq!(record.agent_poses[0].1, logged);
    }
}

#[test]
fn executed_state_is_first_step_of_selected_plan() {
    // With the oracle stub, the executed state must equal GT step 1 exactly
    // (transformed back to the world frame).
    let episode = cruise_episode(6.0, 40, None);
    let (_, trace) =
        run_closed_loop(&episode, &OracleStub { n: 1 }, &PolicyConfig::default()).unwrap();
    let r0 = &trace.records[0];
    let expected = episode.scenes[0].ground_truth.as_ref().unwrap().sdv_future[0];
    assert!((r0.executed.x - expected.pose.x).abs() < 1e-9);
    assert_eq!(r0.executed.v, expected.v);
}

#[test]
fn closed_loop_is_deterministic_with_real_model() {
    let config = ModelConfig {
        d_point: 8,
        d_model: 16,
        d_ffn: 32,
        head_hidden: 16,
        n_enc_layers: 1,
        n_dec_layers: 1,
        n_heads: 2,
        n_sdv_modes: 3,
        n_agent_modes: 2,
        sdv_horizon: SDV_HORIZON,
        agent_horizon: AGENT_HORIZON,
        limits: crate::scene::FlattenLimits {
            a_max: 4,
            e_max: 16,
            p_max: 12,
        },
        seed: 3,
    };
    let model = Model::new(config).unwrap();
    let episode = &generate_scenarios(ScenarioKind::LeadVehicle, 1, 17)[0];
    let (ma, ta) = run_closed_loop(episode, &model, &PolicyConfig::default()).unwrap();
    let (mb, tb) = run_closed_loop(episode, &model, &PolicyConfig::default()).unwrap();
    assert_eq!(ta, tb);
    assert_eq!(ma, mb);
}

#[test]
fn fixed_expert_identical_for_replicated_stub() {
    let episode = cruise_episode(7.0, 50, None);
    let stub = OracleStub { n: 3 };
    let baseline = fixed_expert_rollout(&episode, &stub, 0).unwrap();
    for k in 1..3 {
        let (metrics, trace) = fixed_expert_rollout(&episode, &stub, k).unwrap();
        assert_eq!(metrics, baseline.0);
        assert_eq!(trace.records.len(), baseline.1.records.len());
    }
}

#[test]
fn fixed_expert_out_of_range_is_policy_error() {
    let episode = cruise_episode(7.0, 20, None);
    let err = fixed_expert_rollout(&episode, &OracleStub { n: 3 }, 3).unwrap_err();
    assert!(matches!(
        err,
        SimError::Policy(crate::policy::PolicyError::ExpertOutOfRange { index: 3, n_modes: 3 })
    ));
}

#[test]
fn min_ade_of_offset_prediction_is_the_offset() {
    let episode = cruise_episode(5.0, 10, Some((25.0, 3.0)));
    let centered = transform_to_sdv_frame(&episode.scenes[0]).unwrap();
    let gt = centered.ground_truth.as_ref().unwrap();

    let traj = SdvTrajectory {
        initial: InitialState {
            v: 5.0,
            ..InitialState::at_rest()
        },
        states: gt
            .sdv_future
            .iter()
            .map(|s| crate::kinematics::SdvState {
                x: s.pose.x + 1.0,
                y: s.pose.y,
                theta: s.pose.theta,
                v: s.v,
                a: s.a,
                k: 0.0,
                j: 0.0,
            })
            .collect(),
    };
    let agent_future = &gt.agent_futures[0];
    let agent_traj: Vec<Pose2D> = agent_future
        .poses
        .iter()
        .map(|p| {
            let p = p.as_ref().unwrap();
            Pose2D::new(p.x + 1.0, p.y, p.theta)
        })
        .collect();
    let prediction = Prediction {
        sdv: TrajectoryDistribution {
            trajectories: vec![traj],
            probabilities: vec![1.0],
            logits: vec![0.0],
        },
        agents: AgentPredictionSet {
            agents: vec![AgentPrediction {
                agent_id: 7,
                scene_index: 0,
                trajectories: vec![agent_traj],
                probabilities: vec![1.0],
                logits: vec![0.0],
            }],
        },
    };
    let (sdv_ade, sdv_fde, agent_ade, agent_fde) = prediction_errors(&prediction, &centered);
    assert!((sdv_ade.unwrap() - 1.0).abs() < 1e-12);
    assert!((sdv_fde.unwrap() - 1.0).abs() < 1e-12);
    assert!((agent_ade.unwrap() - 1.0).abs() < 1e-12);
    assert!((agent_fde.unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn planner_failure_aborts_with_partial_trace() {
    struct FailAfter {
        n: core::cell::Cell<usize>,
    }
    impl Planner for FailAfter {
        fn plan(&self, scene: &VectorScene) -> Result<Prediction, ModelError> {
            if self.n.get() == 0 {
                return Err(ModelError::InvalidScene(alloc::string::String::from(
                    "scripted failure",
                )));
            }
            self.n.set(self.n.get() - 1);
            OracleStub { n: 1 }.plan(scene)
        }
    }
    let episode = cruise_episode(6.0, 30, None);
    let planner = FailAfter {
        n: core::cell::Cell::new(10),
    };
    let (_, trace) = run_closed_loop(&episode, &planner, &PolicyConfig::default()).unwrap();
    assert_eq!(trace.records.len(), 10);
    assert!(trace.aborted.as_deref().unwrap().contains("tick 10"));
}
