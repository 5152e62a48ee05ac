//! Network internals: parameter registration, the two point encoders, the
//! transformer encoder/decoder, and the output heads.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError};
use crate::diff::{ops, DiffError, ParamStore, Tensor};
use crate::math;
use crate::scene::{FlattenedScene, POINT_FEATURES};

pub(super) struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub(super) fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Fan-in scaled uniform weights.
    fn weight(&mut self, store: &mut ParamStore, name: &str, rows: usize, cols: usize) {
        let bound = 1.0 / math::sqrt(rows as f64);
        let values = (0..rows * cols)
            .map(|_| self.rng.gen_range(-bound..bound))
            .collect();
        store.register(name, vec![rows, cols], values);
    }

    fn zeros(&mut self, store: &mut ParamStore, name: &str, shape: Vec<usize>) {
        let n = shape.iter().product();
        store.register(name, shape, vec![0.0; n]);
    }

    fn ones(&mut self, store: &mut ParamStore, name: &str, len: usize) {
        store.register(name, vec![len], vec![1.0; len]);
    }

    fn linear(&mut self, store: &mut ParamStore, name: &str, rows: usize, cols: usize) {
        self.weight(store, &format!("{name}.w"), rows, cols);
        self.zeros(store, &format!("{name}.b"), vec![cols]);
    }

    /// Zero-initialized linear layer (final head layers, so the untrained
    /// model starts at the constant-velocity rollout).
    fn linear_zero(&mut self, store: &mut ParamStore, name: &str, rows: usize, cols: usize) {
        self.zeros(store, &format!("{name}.w"), vec![rows, cols]);
        self.zeros(store, &format!("{name}.b"), vec![cols]);
    }

    fn norm(&mut self, store: &mut ParamStore, name: &str, len: usize) {
        self.ones(store, &format!("{name}.g"), len);
        self.zeros(store, &format!("{name}.b"), vec![len]);
    }

    fn embedding(&mut self, store: &mut ParamStore, name: &str, rows: usize, cols: usize) {
        let bound = 1.0 / math::sqrt(cols as f64);
        let values = (0..rows * cols)
            .map(|_| self.rng.gen_range(-bound..bound))
            .collect();
        store.register(name, vec![rows, cols], values);
    }
}

/// Registers every parameter of the network in a deterministic order.
pub(super) fn register_params(config: &ModelConfig, seed: u64) -> ParamStore {
    let mut store = ParamStore::new();
    let ini = &mut Initializer::new(seed);
    let (dp, dm, dff, dh) = (
        config.d_point,
        config.d_model,
        config.d_ffn,
        config.head_hidden,
    );

    for enc in ["pointnet.dyn", "pointnet.map"] {
        ini.linear(&mut store, &format!("{enc}.l0"), POINT_FEATURES, dp);
        ini.linear(&mut store, &format!("{enc}.l1"), dp, dp);
        ini.linear(&mut store, &format!("{enc}.l2"), dp, dp);
        ini.linear(&mut store, &format!("{enc}.proj"), dp, dm);
    }

    for layer in 0..config.n_enc_layers {
        let p = format!("enc.{layer}");
        ini.norm(&mut store, &format!("{p}.ln1"), dm);
        for proj in ["q", "k", "v", "out"] {
            ini.linear(&mut store, &format!("{p}.attn.{proj}"), dm, dm);
        }
        ini.norm(&mut store, &format!("{p}.ln2"), dm);
        ini.linear(&mut store, &format!("{p}.ffn1"), dm, dff);
        ini.linear(&mut store, &format!("{p}.ffn2"), dff, dm);
    }
    ini.norm(&mut store, "enc.final_ln", dm);

    ini.embedding(&mut store, "query.sdv", config.n_sdv_modes, dm);
    ini.embedding(&mut store, "query.agent", config.n_agent_modes, dm);

    for layer in 0..config.n_dec_layers {
        let p = format!("dec.{layer}");
        ini.norm(&mut store, &format!("{p}.ln1"), dm);
        for proj in ["q", "k", "v", "out"] {
            ini.linear(&mut store, &format!("{p}.self.{proj}"), dm, dm);
        }
        ini.norm(&mut store, &format!("{p}.ln2"), dm);
        for proj in ["q", "k", "v", "out"] {
            ini.linear(&mut store, &format!("{p}.cross.{proj}"), dm, dm);
        }
        ini.norm(&mut store, &format!("{p}.ln3"), dm);
        ini.linear(&mut store, &format!("{p}.ffn1"), dm, dff);
        ini.linear(&mut store, &format!("{p}.ffn2"), dff, dm);
    }
    ini.norm(&mut store, "dec.final_ln", dm);

    ini.linear(&mut store, "head.sdv.hidden", dm, dh);
    ini.linear_zero(&mut store, "head.sdv.jerk", dh, config.sdv_horizon);
    ini.linear_zero(&mut store, "head.sdv.curvature", dh, config.sdv_horizon);
    ini.linear_zero(&mut store, "head.sdv.logit", dh, 1);

    ini.linear(&mut store, "head.agent.hidden", dm, dh);
    for out in ["dx", "dy", "dtheta"] {
        ini.linear_zero(&mut store, &format!("head.agent.{out}"), dh, config.agent_horizon);
    }
    ini.linear_zero(&mut store, "head.agent.logit", dh, 1);

    store
}

fn leaf(store: &ParamStore, name: &str) -> Tensor {
    store.leaf(store.id(name).unwrap_or_else(|| panic!("unknown parameter {name}")))
}

fn linear(store: &ParamStore, name: &str, x: &Tensor) -> Result<Tensor, DiffError> {
    let w = leaf(store, &format!("{name}.w"));
    let b = leaf(store, &format!("{name}.b"));
    ops::add(&ops::matmul(x, &w)?, &b)
}

fn layer_norm(store: &ParamStore, name: &str, x: &Tensor) -> Result<Tensor, DiffError> {
    let g = leaf(store, &format!("{name}.g"));
    let b = leaf(store, &format!("{name}.b"));
    ops::layer_norm(x, &g, &b)
}

/// Zeroes the rows of `[rows, d]` where `keep` is false.
fn zero_masked_rows(x: &Tensor, keep: &[bool]) -> Result<Tensor, DiffError> {
    let d = x.shape()[1];
    let mut fill = Vec::with_capacity(keep.len() * d);
    for &k in keep {
        for _ in 0..d {
            fill.push(!k);
        }
    }
    ops::masked_fill(x, &fill, 0.0)
}

/// Runs one point encoder (3-layer pointwise MLP, masked max-pool, model
/// projection) over rows `[row_start, row_end)` of the flattened scene.
fn encode_rows(
    store: &ParamStore,
    prefix: &str,
    flat: &FlattenedScene,
    input: &Tensor,
    row_start: usize,
    row_end: usize,
    d_point: usize,
) -> Result<Tensor, DiffError> {
    let p_max = flat.limits.p_max;
    let rows: Vec<usize> = (row_start..row_end).collect();
    let slab = ops::index_rows(input, &rows)?; // [n, P, F]
    let n = rows.len();
    let x = ops::reshape(&slab, vec![n * p_max, POINT_FEATURES])?;
    let x = ops::relu(&linear(store, &format!("{prefix}.l0"), &x)?);
    let x = ops::relu(&linear(store, &format!("{prefix}.l1"), &x)?);
    let x = linear(store, &format!("{prefix}.l2"), &x)?;
    let x = ops::reshape(&x, vec![n, p_max, d_point])?;
    let point_mask = &flat.point_mask[row_start * p_max..row_end * p_max];
    let elem_mask = &flat.element_mask[row_start..row_end];
    let pooled = ops::masked_max_pool(&x, point_mask, elem_mask)?;
    let projected = linear(store, &format!("{prefix}.proj"), &pooled)?;
    zero_masked_rows(&projected, elem_mask)
}

/// Element features `[e_max, d_model]` from the two PointNet-like encoders:
/// one for the SDV/agent rows, one for map/route rows. Masked elements come
/// out as zero rows.
pub(super) fn pointnet_encode(
    store: &ParamStore,
    config: &ModelConfig,
    flat: &FlattenedScene,
) -> Result<Tensor, ModelError> {
    let e_max = flat.limits.e_max;
    let p_max = flat.limits.p_max;
    if flat.element_mask.len() != e_max || flat.point_mask.len() != e_max * p_max {
        return Err(ModelError::InvalidScene(String::from(
            "flattened scene does not match configured limits",
        )));
    }
    let input = Tensor::constant(
        vec![e_max, p_max, POINT_FEATURES],
        flat.features.clone(),
    );
    // Rows [0, 1 + n_agents) are SDV + agents by construction.
    let n_dyn = 1 + flat.agent_rows.len();
    let dyn_feats = encode_rows(store, "pointnet.dyn", flat, &input, 0, n_dyn, config.d_point)?;
    if n_dyn == e_max {
        return Ok(dyn_feats);
    }
    let map_feats = encode_rows(
        store,
        "pointnet.map",
        flat,
        &input,
        n_dyn,
        e_max,
        config.d_point,
    )?;
    Ok(ops::concat(&[&dyn_feats, &map_feats], 0)?)
}

/// Multi-head attention. `key_invalid` masks key positions (true = hidden).
fn attention(
    store: &ParamStore,
    prefix: &str,
    queries: &Tensor,
    keys_values: &Tensor,
    key_invalid: Option<&[bool]>,
    n_heads: usize,
) -> Result<Tensor, DiffError> {
    let nq = queries.shape()[0];
    let nk = keys_values.shape()[0];
    let d = queries.shape()[1];
    let hd = d / n_heads;

    let split = |t: &Tensor, n: usize| -> Result<Tensor, DiffError> {
        // [n, d] -> [heads, n, hd]
        let t = ops::reshape(t, vec![n, n_heads, hd])?;
        ops::permute(&t, &[1, 0, 2])
    };
    let q = split(&linear(store, &format!("{prefix}.q"), queries)?, nq)?;
    let k = split(&linear(store, &format!("{prefix}.k"), keys_values)?, nk)?;
    let v = split(&linear(store, &format!("{prefix}.v"), keys_values)?, nk)?;

    let kt = ops::permute(&k, &[0, 2, 1])?;
    let mut scores = ops::scale(&ops::matmul(&q, &kt)?, 1.0 / math::sqrt(hd as f64));
    if let Some(invalid) = key_invalid {
        // Large negative rather than -inf: exp underflows to exactly zero,
        // masked keys get weight 0 and gradients stay finite.
        scores = ops::masked_fill(&scores, invalid, -1e9)?;
    }
    let weights = ops::softmax(&scores);
    let ctx = ops::matmul(&weights, &v)?; // [heads, nq, hd]
    let merged = ops::reshape(&ops::permute(&ctx, &[1, 0, 2])?, vec![nq, d])?;
    linear(store, &format!("{prefix}.out"), &merged)
}

fn ffn(store: &ParamStore, prefix: &str, x: &Tensor) -> Result<Tensor, DiffError> {
    let h = ops::relu(&linear(store, &format!("{prefix}1"), x)?);
    linear(store, &format!("{prefix}2"), &h)
}

/// Pre-norm transformer encoder over element features. Masked elements are
/// excluded as keys and zeroed on output.
pub(super) fn transformer_encode(
    store: &ParamStore,
    config: &ModelConfig,
    feats: &Tensor,
    element_mask: &[bool],
) -> Result<Tensor, ModelError> {
    if !element_mask.iter().any(|&m| m) {
        return Err(ModelError::InvalidScene(String::from(
            "all elements masked",
        )));
    }
    let invalid: Vec<bool> = element_mask.iter().map(|&m| !m).collect();
    let mut h = feats.clone();
    for layer in 0..config.n_enc_layers {
        let p = format!("enc.{layer}");
        let x = layer_norm(store, &format!("{p}.ln1"), &h)?;
        let attn = attention(
            store,
            &format!("{p}.attn"),
            &x,
            &x,
            Some(&invalid),
            config.n_heads,
        )?;
        h = ops::add(&h, &attn)?;
        let x = layer_norm(store, &format!("{p}.ln2"), &h)?;
        h = ops::add(&h, &ffn(store, &format!("{p}.ffn"), &x)?)?;
    }
    let out = layer_norm(store, "enc.final_ln", &h)?;
    Ok(zero_masked_rows(&out, element_mask)?)
}

pub(super) struct DecoderOutput {
    /// `[n_sdv_modes, d_model]`
    pub sdv_queries: Tensor,
    /// `[n_agents * n_agent_modes, d_model]`; empty first dim without agents.
    pub agent_queries: Tensor,
}

/// Transformer decoder: SDV feature + N learnable embeddings and, per agent,
/// the agent feature + the shared M learnable embeddings, all decoded
/// jointly (self-attention among queries, cross-attention to the context).
pub(super) fn transformer_decode(
    store: &ParamStore,
    config: &ModelConfig,
    context: &Tensor,
    element_mask: &[bool],
    sdv_feature: &Tensor,
    agent_features: Option<&Tensor>,
) -> Result<DecoderOutput, ModelError> {
    let n = config.n_sdv_modes;
    let m = config.n_agent_modes;
    let n_agents = agent_features.map_or(0, |f| f.shape()[0]);

    let sdv_q = ops::add(&leaf(store, "query.sdv"), &ops::reshape(sdv_feature, vec![config.d_model])?)?;
    let mut queries = sdv_q;
    if let Some(agent_feats) = agent_features {
        let mode_idx: Vec<usize> = (0..n_agents * m).map(|i| i % m).collect();
        let agent_idx: Vec<usize> = (0..n_agents * m).map(|i| i / m).collect();
        let mode_emb = ops::embedding_lookup(&leaf(store, "query.agent"), &mode_idx)?;
        let feats = ops::index_rows(agent_feats, &agent_idx)?;
        let agent_q = ops::add(&mode_emb, &feats)?;
        queries = ops::concat(&[&queries, &agent_q], 0)?;
    }

    let invalid: Vec<bool> = element_mask.iter().map(|&m| !m).collect();
    let mut h = queries;
    for layer in 0..config.n_dec_layers {
        let p = format!("dec.{layer}");
        let x = layer_norm(store, &format!("{p}.ln1"), &h)?;
        let self_attn = attention(store, &format!("{p}.self"), &x, &x, None, config.n_heads)?;
        h = ops::add(&h, &self_attn)?;
        let x = layer_norm(store, &format!("{p}.ln2"), &h)?;
        let cross = attention(
            store,
            &format!("{p}.cross"),
            &x,
            context,
            Some(&invalid),
            config.n_heads,
        )?;
        h = ops::add(&h, &cross)?;
        let x = layer_norm(store, &format!("{p}.ln3"), &h)?;
        h = ops::add(&h, &ffn(store, &format!("{p}.ffn"), &x)?)?;
    }
    let out = layer_norm(store, "dec.final_ln", &h)?;

    let sdv_rows: Vec<usize> = (0..n).collect();
    let agent_rows: Vec<usize> = (n..n + n_agents * m).collect();
    Ok(DecoderOutput {
        sdv_queries: ops::index_rows(&out, &sdv_rows)?,
        agent_queries: ops::index_rows(&out, &agent_rows)?,
    })
}

pub(super) struct SdvHeadOutput {
    /// Clamped controls `[n_modes, horizon]`.
    pub jerk: Tensor,
    pub curvature: Tensor,
    /// `[n_modes]`
    pub logits: Tensor,
    pub probs: Tensor,
}

pub(super) fn sdv_head(
    store: &ParamStore,
    config: &ModelConfig,
    sdv_queries: &Tensor,
) -> Result<SdvHeadOutput, DiffError> {
    let h = ops::relu(&linear(store, "head.sdv.hidden", sdv_queries)?);
    let jerk = ops::clamp(
        &linear(store, "head.sdv.jerk", &h)?,
        -crate::kinematics::JERK_MAX,
        crate::kinematics::JERK_MAX,
    );
    let curvature = ops::clamp(
        &linear(store, "head.sdv.curvature", &h)?,
        -crate::kinematics::CURVATURE_MAX,
        crate::kinematics::CURVATURE_MAX,
    );
    let logits = ops::reshape(
        &linear(store, "head.sdv.logit", &h)?,
        vec![config.n_sdv_modes],
    )?;
    let probs = ops::softmax(&logits);
    Ok(SdvHeadOutput {
        jerk,
        curvature,
        logits,
        probs,
    })
}

pub(super) struct AgentHeadOutput {
    /// Absolute poses `[n_agents * n_modes, horizon]` per coordinate.
    pub x: Tensor,
    pub y: Tensor,
    pub theta: Tensor,
    /// `[n_agents, n_modes]`
    pub logits: Tensor,
    pub probs: Tensor,
}

/// Agent head: residual poses on top of a constant-velocity extrapolation of
/// each agent, so the zero-initialized model starts at the CV baseline. No
/// kinematic decoder on the agent side.
pub(super) fn agent_head(
    store: &ParamStore,
    config: &ModelConfig,
    agent_queries: &Tensor,
    cv_baseline: &CvBaseline,
) -> Result<AgentHeadOutput, DiffError> {
    let n_agents = cv_baseline.n_agents;
    let m = config.n_agent_modes;
    let h = ops::relu(&linear(store, "head.agent.hidden", agent_queries)?);
    let dx = linear(store, "head.agent.dx", &h)?;
    let dy = linear(store, "head.agent.dy", &h)?;
    let dth = linear(store, "head.agent.dtheta", &h)?;
    let x = ops::add(&dx, &cv_baseline.x)?;
    let y = ops::add(&dy, &cv_baseline.y)?;
    let theta = ops::angle_wrap(&ops::add(&dth, &cv_baseline.theta)?);
    let logits = ops::reshape(
        &linear(store, "head.agent.logit", &h)?,
        vec![n_agents, m],
    )?;
    let probs = ops::softmax(&logits);
    Ok(AgentHeadOutput {
        x,
        y,
        theta,
        logits,
        probs,
    })
}

/// Constant-velocity extrapolations for each agent row, tiled per mode.
pub(super) struct CvBaseline {
    pub n_agents: usize,
    /// `[n_agents * n_modes, horizon]` constants.
    pub x: Tensor,
    pub y: Tensor,
    pub theta: Tensor,
}

pub(super) fn cv_baseline(
    config: &ModelConfig,
    agents: &[(f64, f64, f64, f64, f64)], // (x, y, theta, vx, vy) in scene frame
) -> CvBaseline {
    let m = config.n_agent_modes;
    let t = config.agent_horizon;
    let rows = agents.len() * m;
    let mut xs = Vec::with_capacity(rows * t);
    let mut ys = Vec::with_capacity(rows * t);
    let mut ths = Vec::with_capacity(rows * t);
    for &(x0, y0, th0, vx, vy) in agents {
        for _ in 0..m {
            for step in 1..=t {
                let dt = step as f64 * crate::DT;
                xs.push(x0 + vx * dt);
                ys.push(y0 + vy * dt);
                ths.push(th0);
            }
        }
    }
    CvBaseline {
        n_agents: agents.len(),
        x: Tensor::constant(vec![rows, t], xs),
        y: Tensor::constant(vec![rows, t], ys),
        theta: Tensor::constant(vec![rows, t], ths),
    }
}

/// Differentiable unicycle rollout of all SDV modes at once; mirrors
/// `kinematics::rollout_unicycle` arithmetic exactly so that re-integrating
/// the extracted controls reproduces the stored states bit for bit.
pub struct SdvRollout {
    /// Per step `1..=horizon`, `[n_modes]` tensors.
    pub xs: Vec<Tensor>,
    pub ys: Vec<Tensor>,
    pub thetas: Vec<Tensor>,
    pub vs: Vec<Tensor>,
}

pub fn rollout_modes(
    jerk: &Tensor,
    curvature: &Tensor,
    v0: f64,
    a0: f64,
    dt: f64,
) -> Result<SdvRollout, DiffError> {
    let n = jerk.shape()[0];
    let horizon = jerk.shape()[1];
    // [T, N] so each step is a row gather
    let jerk_t = ops::permute(jerk, &[1, 0])?;
    let curv_t = ops::permute(curvature, &[1, 0])?;

    let mut x = Tensor::zeros(vec![n]);
    let mut y = Tensor::zeros(vec![n]);
    let mut theta = Tensor::zeros(vec![n]);
    let mut v = Tensor::constant(vec![n], vec![v0; n]);
    let mut a = Tensor::constant(vec![n], vec![a0; n]);

    let mut out = SdvRollout {
        xs: Vec::with_capacity(horizon),
        ys: Vec::with_capacity(horizon),
        thetas: Vec::with_capacity(horizon),
        vs: Vec::with_capacity(horizon),
    };
    for step in 0..horizon {
        let j = ops::reshape(&ops::index_rows(&jerk_t, &[step])?, vec![n])?;
        let k = ops::reshape(&ops::index_rows(&curv_t, &[step])?, vec![n])?;
        a = ops::add(&a, &ops::scale(&j, dt))?;
        // speed clamp at zero: sub-gradient 0 below zero, like the reference
        v = ops::relu(&ops::add(&v, &ops::scale(&a, dt))?);
        theta = ops::angle_wrap(&ops::add(&theta, &ops::scale(&ops::mul(&k, &v)?, dt))?);
        x = ops::add(&x, &ops::scale(&ops::mul(&v, &ops::cos(&theta))?, dt))?;
        y = ops::add(&y, &ops::scale(&ops::mul(&v, &ops::sin(&theta))?, dt))?;
        out.xs.push(x.clone());
        out.ys.push(y.clone());
        out.thetas.push(theta.clone());
        out.vs.push(v.clone());
    }
    Ok(out)
}
