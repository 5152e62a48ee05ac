//! The prediction/planning network.
//!
//! A scene is staged by [`crate::scene::flatten_for_network`], compressed per
//! element by two PointNet-like encoders (one for SDV/agents, one for map and
//! route), contextualized by a transformer encoder, and queried by a
//! transformer decoder whose queries are learnable mode embeddings added to
//! the SDV/agent features. The SDV head emits jerk/curvature controls per
//! mode (decoded through the unicycle model) plus one logit per mode; the
//! agent head emits poses directly plus logits. Softmax over logits gives
//! the mode distributions.

mod net;

pub use net::{rollout_modes, SdvRollout};

use alloc::string::String;
use alloc::vec::Vec;

use crate::diff::{DiffError, ParamStore, Tensor};
use crate::kinematics::{
    rollout_unicycle, InitialState, KinematicsError, SdvControl, SdvTrajectory,
};
use crate::scene::{
    flatten_for_network, FlattenLimits, FlattenedScene, Pose2D, SceneError, VectorScene,
    AGENT_HORIZON, SDV_HORIZON,
};
use crate::DT;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// Network hyperparameters. Defaults are the desk-scale configuration; the
/// paper-scale widths (128/256/1024) train the same architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Point-encoder width.
    pub d_point: usize,
    /// Transformer width.
    pub d_model: usize,
    /// Transformer feed-forward width.
    pub d_ffn: usize,
    /// Trajectory-head hidden width.
    pub head_hidden: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub n_heads: usize,
    /// SDV experts (N).
    pub n_sdv_modes: usize,
    /// Agent experts (M).
    pub n_agent_modes: usize,
    /// SDV plan horizon in steps (T_s).
    pub sdv_horizon: usize,
    /// Agent prediction horizon in steps (T_a).
    pub agent_horizon: usize,
    pub limits: FlattenLimits,
    /// Parameter-initialization seed.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_point: 32,
            d_model: 64,
            d_ffn: 128,
            head_hidden: 64,
            n_enc_layers: 3,
            n_dec_layers: 3,
            n_heads: 4,
            n_sdv_modes: 10,
            n_agent_modes: 5,
            sdv_horizon: SDV_HORIZON,
            agent_horizon: AGENT_HORIZON,
            limits: FlattenLimits::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(ModelError::InvalidConfig(
                "d_model must be a positive multiple of n_heads",
            ));
        }
        if self.n_sdv_modes == 0 || self.n_agent_modes == 0 {
            return Err(ModelError::InvalidConfig("need at least one mode"));
        }
        if self.sdv_horizon == 0 || self.agent_horizon == 0 {
            return Err(ModelError::InvalidConfig("horizons must be positive"));
        }
        if self.d_point == 0 || self.d_ffn == 0 || self.head_hidden == 0 {
            return Err(ModelError::InvalidConfig("widths must be positive"));
        }
        Ok(())
    }
}

/// N candidate SDV plans with the probability distribution over them.
#[derive(Debug, Clone)]
pub struct TrajectoryDistribution {
    pub trajectories: Vec<SdvTrajectory>,
    pub probabilities: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Per-agent multimodal prediction.
#[derive(Debug, Clone)]
pub struct AgentPrediction {
    pub agent_id: u64,
    /// Index into the source scene's agent list.
    pub scene_index: usize,
    /// M trajectories of `agent_horizon` poses each, in the scene frame.
    pub trajectories: Vec<Vec<Pose2D>>,
    pub probabilities: Vec<f64>,
    pub logits: Vec<f64>,
}

impl AgentPrediction {
    /// Most probable trajectory (ties to the smallest index).
    pub fn most_probable(&self) -> &Vec<Pose2D> {
        let mut best = 0;
        for (i, &p) in self.probabilities.iter().enumerate() {
            if p > self.probabilities[best] {
                best = i;
            }
        }
        &self.trajectories[best]
    }
}

/// Predictions for every agent that received a network slot.
#[derive(Debug, Clone, Default)]
pub struct AgentPredictionSet {
    pub agents: Vec<AgentPrediction>,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub sdv: TrajectoryDistribution,
    pub agents: AgentPredictionSet,
}

/// Graph-side outputs of one forward pass, kept for the training loss.
pub struct ForwardPass {
    /// Per step, `[n_sdv_modes]` tensors for x, y, theta.
    pub sdv_xs: Vec<Tensor>,
    pub sdv_ys: Vec<Tensor>,
    pub sdv_thetas: Vec<Tensor>,
    /// Clamped controls `[n_sdv_modes, sdv_horizon]`.
    pub sdv_jerk: Tensor,
    pub sdv_curvature: Tensor,
    pub sdv_logits: Tensor,
    pub sdv_probs: Tensor,
    /// Agent poses `[n_agents * n_agent_modes, agent_horizon]`, if any agent
    /// got a slot.
    pub agent_x: Option<Tensor>,
    pub agent_y: Option<Tensor>,
    pub agent_theta: Option<Tensor>,
    /// `[n_agents, n_agent_modes]`
    pub agent_logits: Option<Tensor>,
    pub agent_probs: Option<Tensor>,
    /// `(row, scene agent index)` in row order.
    pub agent_rows: Vec<(usize, usize)>,
    /// SDV start state used by the rollout.
    pub initial: InitialState,
}

/// The network: a config plus its parameter store.
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let store = net::register_params(&config, config.seed);
        Ok(Self { config, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.total_values()
    }

    /// Full differentiable forward pass over an SDV-frame scene.
    pub fn forward(&self, scene: &VectorScene) -> Result<ForwardPass, ModelError> {
        if !scene.is_sdv_frame() {
            return Err(ModelError::InvalidScene(String::from(
                "predict expects an SDV-frame scene",
            )));
        }
        let flat = flatten_for_network(scene, &self.config.limits)?;
        self.forward_flat(scene, &flat)
    }

    fn forward_flat(
        &self,
        scene: &VectorScene,
        flat: &FlattenedScene,
    ) -> Result<ForwardPass, ModelError> {
        let store = &self.store;
        let config = &self.config;

        let feats = net::pointnet_encode(store, config, flat)?;
        let context = net::transformer_encode(store, config, &feats, &flat.element_mask)?;

        // SDV feature (row 0) and agent features, straight from the point
        // encoder output, seed the decoder queries.
        let sdv_feature = crate::diff::ops::index_rows(&feats, &[0])?;
        let agent_features = if flat.agent_rows.is_empty() {
            None
        } else {
            let rows: Vec<usize> = flat.agent_rows.iter().map(|&(row, _)| row).collect();
            Some(crate::diff::ops::index_rows(&feats, &rows)?)
        };

        let decoded = net::transformer_decode(
            store,
            config,
            &context,
            &flat.element_mask,
            &sdv_feature,
            agent_features.as_ref(),
        )?;

        let sdv_out = net::sdv_head(store, config, &decoded.sdv_queries)?;
        let initial = InitialState {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
            v: scene.sdv.speed,
            a: scene.sdv.acceleration,
        };
        let rollout = net::rollout_modes(
            &sdv_out.jerk,
            &sdv_out.curvature,
            initial.v,
            initial.a,
            DT,
        )?;

        let mut pass = ForwardPass {
            sdv_xs: rollout.xs,
            sdv_ys: rollout.ys,
            sdv_thetas: rollout.thetas,
            sdv_jerk: sdv_out.jerk,
            sdv_curvature: sdv_out.curvature,
            sdv_logits: sdv_out.logits,
            sdv_probs: sdv_out.probs,
            agent_x: None,
            agent_y: None,
            agent_theta: None,
            agent_logits: None,
            agent_probs: None,
            agent_rows: flat.agent_rows.clone(),
            initial,
        };

        if !flat.agent_rows.is_empty() {
            let states: Vec<(f64, f64, f64, f64, f64)> = flat
                .agent_rows
                .iter()
                .map(|&(_, idx)| {
                    let agent = &scene.agents[idx];
                    let pose = agent.current_pose();
                    let (vx, vy) = agent.velocity_estimate();
                    (pose.x, pose.y, pose.theta, vx, vy)
                })
                .collect();
            let baseline = net::cv_baseline(config, &states);
            let agent_out = net::agent_head(store, config, &decoded.agent_queries, &baseline)?;
            pass.agent_x = Some(agent_out.x);
            pass.agent_y = Some(agent_out.y);
            pass.agent_theta = Some(agent_out.theta);
            pass.agent_logits = Some(agent_out.logits);
            pass.agent_probs = Some(agent_out.probs);
        }

        Ok(pass)
    }

    /// Inference: SDV trajectory distribution plus per-agent predictions.
    pub fn predict(&self, scene: &VectorScene) -> Result<Prediction, ModelError> {
        let pass = self.forward(scene)?;
        self.extract(scene, &pass)
    }

    /// Converts a forward pass into value-level predictions. SDV
    /// trajectories are rebuilt with [`rollout_unicycle`] from the extracted
    /// controls, which reproduces the graph states exactly.
    pub fn extract(
        &self,
        scene: &VectorScene,
        pass: &ForwardPass,
    ) -> Result<Prediction, ModelError> {
        let n = self.config.n_sdv_modes;
        let t_s = self.config.sdv_horizon;
        let mut trajectories = Vec::with_capacity(n);
        for mode in 0..n {
            let controls: Vec<SdvControl> = (0..t_s)
                .map(|t| SdvControl {
                    jerk: pass.sdv_jerk.data()[mode * t_s + t],
                    curvature: pass.sdv_curvature.data()[mode * t_s + t],
                })
                .collect();
            trajectories.push(rollout_unicycle(&pass.initial, &controls, DT)?);
        }
        let sdv = TrajectoryDistribution {
            trajectories,
            probabilities: pass.sdv_probs.data().to_vec(),
            logits: pass.sdv_logits.data().to_vec(),
        };

        let mut agents = AgentPredictionSet::default();
        if let (Some(ax), Some(ay), Some(ath), Some(logits), Some(probs)) = (
            &pass.agent_x,
            &pass.agent_y,
            &pass.agent_theta,
            &pass.agent_logits,
            &pass.agent_probs,
        ) {
            let m = self.config.n_agent_modes;
            let t_a = self.config.agent_horizon;
            for (slot, &(_, scene_index)) in pass.agent_rows.iter().enumerate() {
                let mut trajs = Vec::with_capacity(m);
                for mode in 0..m {
                    let row = slot * m + mode;
                    let poses: Vec<Pose2D> = (0..t_a)
                        .map(|t| {
                            Pose2D::new(
                                ax.data()[row * t_a + t],
                                ay.data()[row * t_a + t],
                                ath.data()[row * t_a + t],
                            )
                        })
                        .collect();
                    trajs.push(poses);
                }
                agents.agents.push(AgentPrediction {
                    agent_id: scene.agents[scene_index].agent_id,
                    scene_index,
                    trajectories: trajs,
                    probabilities: probs.data()[slot * m..(slot + 1) * m].to_vec(),
                    logits: logits.data()[slot * m..(slot + 1) * m].to_vec(),
                });
            }
        }

        Ok(Prediction { sdv, agents })
    }
}
