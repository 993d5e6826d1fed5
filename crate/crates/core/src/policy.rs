//! The policy architectures: independent per-agent networks, fully shared
//! networks (optionally identity-conditioned), and agent-conditioned
//! hypernetworks that generate per-agent policy parameters.
//!
//! Hypernetwork gradients are computed in factored form: per-sample policy
//! gradients are first accumulated per agent at the generated parameters,
//! and only the per-agent totals are pushed through the parameter-generating
//! network. This re-associates the same total derivative, so it must agree
//! with direct per-sample accumulation to float precision; the direct route
//! is kept as an oracle.

use std::io::{self, BufRead, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::game::GameConfig;
use crate::nn::{
    self, DenseLayer, FlatGradient, ForwardCache, MlpParams, NnError, ParamLayout, ParamSegment,
    Tensor2,
};

pub const SUPPORTED_HIDDEN_DIMS: [usize; 5] = [4, 8, 16, 32, 64];

#[derive(Debug, Clone, thiserror::Error)]
pub enum PolicyError {
    #[error("invalid policy config: {0}")]
    Config(String),
    #[error("operation `{op}` not defined for variant {kind:?}")]
    VariantMismatch { op: &'static str, kind: VariantKind },
    #[error("agent {agent} out of range ({n_agents} agents)")]
    AgentOutOfRange { agent: usize, n_agents: usize },
    #[error("all embedding pairs degenerate (zero norm)")]
    DegenerateEmbeddings,
    #[error("checkpoint parse error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// The seven selectable architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    /// Independent policy network per agent.
    NoPs,
    /// One network shared by all agents.
    FuPs,
    /// Shared network with a one-hot agent ID appended to the observation.
    FuPsId,
    /// Shared network fed only the one-hot agent ID.
    FuPsIdNoState,
    /// Linear hypernetwork over one-hot agent IDs.
    HyperLinear,
    /// MLP hypernetwork over learned agent embeddings.
    HyperMlp,
    /// Ablation: the hypernetwork consumes `[obs, embedding]`, so parameter
    /// generation is entangled with the observation.
    HyperMlpNoDecouple,
}

impl VariantKind {
    pub fn is_hyper(&self) -> bool {
        matches!(
            self,
            VariantKind::HyperLinear | VariantKind::HyperMlp | VariantKind::HyperMlpNoDecouple
        )
    }

    /// Variants whose gradient factors into agent-conditioned and
    /// observation-conditioned terms.
    pub fn supports_decoupling(&self) -> bool {
        matches!(self, VariantKind::HyperLinear | VariantKind::HyperMlp)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            VariantKind::NoPs => "nops",
            VariantKind::FuPs => "fups",
            VariantKind::FuPsId => "fups_id",
            VariantKind::FuPsIdNoState => "fups_id_no_state",
            VariantKind::HyperLinear => "hyper_linear",
            VariantKind::HyperMlp => "hyper_mlp",
            VariantKind::HyperMlpNoDecouple => "hyper_mlp_no_decouple",
        }
    }

    pub fn parse(s: &str) -> Option<VariantKind> {
        Some(match s {
            "nops" => VariantKind::NoPs,
            "fups" => VariantKind::FuPs,
            "fups_id" => VariantKind::FuPsId,
            "fups_id_no_state" => VariantKind::FuPsIdNoState,
            "hyper_linear" => VariantKind::HyperLinear,
            "hyper_mlp" => VariantKind::HyperMlp,
            "hyper_mlp_no_decouple" => VariantKind::HyperMlpNoDecouple,
            _ => return None,
        })
    }
}

impl std::fmt::Display for VariantKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Architecture configuration. `embed_dim` and `hyper_hidden_dim` only
/// matter for hypernetwork variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub kind: VariantKind,
    pub hidden_dim: usize,
    #[serde(default)]
    pub embed_dim: usize,
    #[serde(default)]
    pub hyper_hidden_dim: usize,
    #[serde(default = "default_true")]
    pub reset_fan_init: bool,
    /// Scale on the hypernetwork head weights under reset-fan init, so the
    /// generated parameters start as a shared direct init plus a small
    /// per-agent perturbation.
    #[serde(default = "default_head_scale")]
    pub head_init_scale: f64,
}

fn default_true() -> bool {
    true
}

fn default_head_scale() -> f64 {
    0.1
}

impl VariantSpec {
    pub fn direct(kind: VariantKind, hidden_dim: usize) -> Self {
        VariantSpec {
            kind,
            hidden_dim,
            embed_dim: 0,
            hyper_hidden_dim: 0,
            reset_fan_init: true,
            head_init_scale: 0.1,
        }
    }

    /// Linear hypernetwork; the context is the one-hot agent ID, so the
    /// embedding dimension equals the agent count.
    pub fn hyper_linear(hidden_dim: usize, n_agents: usize) -> Self {
        VariantSpec {
            kind: VariantKind::HyperLinear,
            hidden_dim,
            embed_dim: n_agents,
            hyper_hidden_dim: 0,
            reset_fan_init: true,
            head_init_scale: 0.1,
        }
    }

    pub fn hyper_mlp(hidden_dim: usize, embed_dim: usize, hyper_hidden_dim: usize) -> Self {
        VariantSpec {
            kind: VariantKind::HyperMlp,
            hidden_dim,
            embed_dim,
            hyper_hidden_dim,
            reset_fan_init: true,
            head_init_scale: 0.1,
        }
    }

    pub fn hyper_mlp_no_decouple(
        hidden_dim: usize,
        embed_dim: usize,
        hyper_hidden_dim: usize,
    ) -> Self {
        VariantSpec {
            kind: VariantKind::HyperMlpNoDecouple,
            hidden_dim,
            embed_dim,
            hyper_hidden_dim,
            ..Self::hyper_mlp(hidden_dim, embed_dim, hyper_hidden_dim)
        }
    }
}

/// Problem dimensions the policy is built against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
}

impl Dims {
    pub fn of_game(config: &GameConfig) -> Dims {
        Dims {
            n_agents: config.n_agents,
            n_actions: config.n_actions,
            obs_dim: config.obs_dim(),
        }
    }
}

/// Layer dims of the policy network an individual agent runs (for hyper
/// variants, the generated target network).
pub fn target_net_dims(spec: &VariantSpec, dims: &Dims) -> Vec<(usize, usize)> {
    let input = match spec.kind {
        VariantKind::FuPsId => dims.obs_dim + dims.n_agents,
        VariantKind::FuPsIdNoState => dims.n_agents,
        _ => dims.obs_dim,
    };
    vec![(input, spec.hidden_dim), (spec.hidden_dim, dims.n_actions)]
}

fn mlp_count(dims: &[(usize, usize)]) -> usize {
    dims.iter().map(|&(i, o)| i * o + o).sum()
}

/// Layer dims of the parameter-generating network (MLP hyper variants).
fn hypernet_dims(spec: &VariantSpec, dims: &Dims) -> Vec<(usize, usize)> {
    let m = mlp_count(&target_net_dims(spec, dims));
    let input = match spec.kind {
        VariantKind::HyperMlp => spec.embed_dim,
        VariantKind::HyperMlpNoDecouple => dims.obs_dim + spec.embed_dim,
        _ => unreachable!("hypernet_dims on non-MLP-hyper variant"),
    };
    vec![(input, spec.hyper_hidden_dim), (spec.hyper_hidden_dim, m)]
}

/// Exact trainable parameter count of a variant, including biases and
/// learned embeddings.
pub fn count_params(spec: &VariantSpec, dims: &Dims) -> usize {
    let target = mlp_count(&target_net_dims(spec, dims));
    match spec.kind {
        VariantKind::NoPs => dims.n_agents * target,
        VariantKind::FuPs | VariantKind::FuPsId | VariantKind::FuPsIdNoState => target,
        // One-hot contexts are fixed, so only the weight matrix and bias train.
        VariantKind::HyperLinear => dims.n_agents * target + target,
        VariantKind::HyperMlp | VariantKind::HyperMlpNoDecouple => {
            mlp_count(&hypernet_dims(spec, dims)) + dims.n_agents * spec.embed_dim
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum VariantParams {
    PerAgent(Vec<MlpParams>),
    Shared(MlpParams),
    HyperLinear {
        weight: Tensor2, // n_agents x m
        bias: Vec<f64>,  // m
    },
    HyperNet {
        net: MlpParams,      // trunk (ReLU) + linear head
        embeddings: Tensor2, // n_agents x embed_dim, trainable
    },
}

/// A built policy: variant, dims, and all trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    variant: VariantSpec,
    dims: Dims,
    params: VariantParams,
    layout: Arc<ParamLayout>,
    version: u64,
}

fn validate(spec: &VariantSpec, dims: &Dims) -> Result<(), PolicyError> {
    if dims.obs_dim != dims.n_agents * dims.n_actions {
        return Err(PolicyError::Config(format!(
            "obs_dim {} does not match n_agents * n_actions = {}",
            dims.obs_dim,
            dims.n_agents * dims.n_actions
        )));
    }
    if !SUPPORTED_HIDDEN_DIMS.contains(&spec.hidden_dim) {
        return Err(PolicyError::Config(format!(
            "hidden_dim {} not in {:?}",
            spec.hidden_dim, SUPPORTED_HIDDEN_DIMS
        )));
    }
    match spec.kind {
        VariantKind::HyperLinear => {
            if spec.embed_dim != dims.n_agents {
                return Err(PolicyError::Config(format!(
                    "linear hypernetwork uses one-hot contexts: embed_dim {} must equal n_agents {}",
                    spec.embed_dim, dims.n_agents
                )));
            }
        }
        VariantKind::HyperMlp | VariantKind::HyperMlpNoDecouple => {
            if spec.embed_dim == 0 {
                return Err(PolicyError::Config("embed_dim must be positive".into()));
            }
            if spec.embed_dim < dims.n_agents {
                return Err(PolicyError::Config(format!(
                    "orthogonal embedding init needs embed_dim >= n_agents ({} < {})",
                    spec.embed_dim, dims.n_agents
                )));
            }
            if spec.hyper_hidden_dim == 0 {
                return Err(PolicyError::Config("hyper_hidden_dim must be positive".into()));
            }
            if !(spec.head_init_scale.is_finite() && spec.head_init_scale > 0.0) {
                return Err(PolicyError::Config("head_init_scale must be positive".into()));
            }
        }
        _ => {}
    }
    Ok(())
}

/// Standard direct initialisation of a policy network: orthogonal weights
/// (gain sqrt(2) on hidden layers, 1 on the output layer), zero biases.
fn direct_init<R: Rng + ?Sized>(dims: &[(usize, usize)], rng: &mut R) -> MlpParams {
    let n_layers = dims.len();
    MlpParams {
        layers: dims
            .iter()
            .enumerate()
            .map(|(k, &(i, o))| {
                let gain = if k + 1 == n_layers { 1.0 } else { 2f64.sqrt() };
                DenseLayer {
                    weight: nn::orthogonal_init(i, o, gain, rng),
                    bias: vec![0.0; o],
                }
            })
            .collect(),
    }
}

fn build_layout(spec: &VariantSpec, dims: &Dims) -> ParamLayout {
    let target = target_net_dims(spec, dims);
    let mut segments = Vec::new();
    let push_mlp = |segments: &mut Vec<ParamSegment>, prefix: &str, dims: &[(usize, usize)]| {
        for (k, &(i, o)) in dims.iter().enumerate() {
            segments.push(ParamSegment {
                name: format!("{prefix}layer{k}.weight"),
                len: i * o,
            });
            segments.push(ParamSegment {
                name: format!("{prefix}layer{k}.bias"),
                len: o,
            });
        }
    };
    match spec.kind {
        VariantKind::NoPs => {
            for agent in 0..dims.n_agents {
                push_mlp(&mut segments, &format!("agent{agent}."), &target);
            }
        }
        VariantKind::FuPs | VariantKind::FuPsId | VariantKind::FuPsIdNoState => {
            push_mlp(&mut segments, "", &target);
        }
        VariantKind::HyperLinear => {
            let m = mlp_count(&target);
            segments.push(ParamSegment {
                name: "hyper.weight".into(),
                len: dims.n_agents * m,
            });
            segments.push(ParamSegment {
                name: "hyper.bias".into(),
                len: m,
            });
        }
        VariantKind::HyperMlp | VariantKind::HyperMlpNoDecouple => {
            push_mlp(&mut segments, "hyper.", &hypernet_dims(spec, dims));
            segments.push(ParamSegment {
                name: "embeddings".into(),
                len: dims.n_agents * spec.embed_dim,
            });
        }
    }
    ParamLayout::new(segments)
}

/// Build and initialise a policy.
pub fn build<R: Rng + ?Sized>(
    spec: VariantSpec,
    dims: Dims,
    rng: &mut R,
) -> Result<PolicyState, PolicyError> {
    validate(&spec, &dims)?;
    let target = target_net_dims(&spec, &dims);
    let params = match spec.kind {
        VariantKind::NoPs => VariantParams::PerAgent(
            (0..dims.n_agents).map(|_| direct_init(&target, rng)).collect(),
        ),
        VariantKind::FuPs | VariantKind::FuPsId | VariantKind::FuPsIdNoState => {
            VariantParams::Shared(direct_init(&target, rng))
        }
        VariantKind::HyperLinear => {
            let m = mlp_count(&target);
            if spec.reset_fan_init {
                // Each row is an independent standard direct init of the
                // target network; with a zero bias the generated parameters
                // at step 0 are exactly those inits.
                let mut weight = Tensor2::zeros(dims.n_agents, m);
                for agent in 0..dims.n_agents {
                    let sample = direct_init(&target, rng).flatten();
                    weight.row_mut(agent).copy_from_slice(&sample);
                }
                VariantParams::HyperLinear {
                    weight,
                    bias: vec![0.0; m],
                }
            } else {
                VariantParams::HyperLinear {
                    weight: nn::fan_in_uniform_init(dims.n_agents, m, rng),
                    bias: nn::fan_in_uniform_bias(dims.n_agents, m, rng),
                }
            }
        }
        VariantKind::HyperMlp | VariantKind::HyperMlpNoDecouple => {
            let hdims = hypernet_dims(&spec, &dims);
            let (trunk_in, trunk_out) = hdims[0];
            let (head_in, head_out) = hdims[1];
            let trunk = DenseLayer {
                weight: nn::fan_in_uniform_init(trunk_in, trunk_out, rng),
                bias: nn::fan_in_uniform_bias(trunk_in, trunk_out, rng),
            };
            let head = if spec.reset_fan_init {
                // Head bias carries one shared standard direct init of the
                // target; scaled-down head weights add a small per-agent
                // perturbation on top of it.
                let mut weight = nn::fan_in_uniform_init(head_in, head_out, rng);
                for v in &mut weight.data {
                    *v *= spec.head_init_scale;
                }
                DenseLayer {
                    weight,
                    bias: direct_init(&target, rng).flatten(),
                }
            } else {
                DenseLayer {
                    weight: nn::fan_in_uniform_init(head_in, head_out, rng),
                    bias: nn::fan_in_uniform_bias(head_in, head_out, rng),
                }
            };
            let embeddings = nn::orthogonal_init(dims.n_agents, spec.embed_dim, 1.0, rng);
            VariantParams::HyperNet {
                net: MlpParams {
                    layers: vec![trunk, head],
                },
                embeddings,
            }
        }
    };
    let layout = Arc::new(build_layout(&spec, &dims));
    debug_assert_eq!(layout.total(), count_params(&spec, &dims));
    Ok(PolicyState {
        variant: spec,
        dims,
        params,
        layout,
        version: 0,
    })
}

/// Reusable scratch space for rollouts and gradient computation. Generated
/// per-agent networks are refreshed automatically when the policy changes.
#[derive(Debug, Clone)]
pub struct PolicyWorkspace {
    agent_nets: Vec<MlpParams>,
    scratch_net: MlpParams,
    gen_cache: ForwardCache,
    net_cache: ForwardCache,
    input_buf: Vec<f64>,
    theta_grad: Vec<f64>,
    in_grad: Vec<f64>,
    zhat: Vec<Vec<f64>>,
    synced_version: Option<u64>,
    layout: Arc<ParamLayout>,
}

impl PolicyState {
    pub fn variant(&self) -> &VariantSpec {
        &self.variant
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.total()
    }

    pub fn workspace(&self) -> PolicyWorkspace {
        let target = target_net_dims(&self.variant, &self.dims);
        let m = mlp_count(&target);
        PolicyWorkspace {
            agent_nets: Vec::new(),
            scratch_net: MlpParams::zeros(&target),
            gen_cache: ForwardCache::new(),
            net_cache: ForwardCache::new(),
            input_buf: Vec::new(),
            theta_grad: vec![0.0; m],
            in_grad: Vec::new(),
            zhat: vec![vec![0.0; m]; self.dims.n_agents],
            synced_version: None,
            layout: Arc::clone(&self.layout),
        }
    }

    fn check_agent(&self, agent: usize) -> Result<(), PolicyError> {
        if agent >= self.dims.n_agents {
            return Err(PolicyError::AgentOutOfRange {
                agent,
                n_agents: self.dims.n_agents,
            });
        }
        Ok(())
    }

    /// Trainable parameters in the canonical flat ordering (hypernetwork
    /// layers first, then embeddings, for hyper variants).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        match &self.params {
            VariantParams::PerAgent(nets) => {
                for net in nets {
                    net.flatten_into(&mut out);
                }
            }
            VariantParams::Shared(net) => net.flatten_into(&mut out),
            VariantParams::HyperLinear { weight, bias } => {
                out.extend_from_slice(&weight.data);
                out.extend_from_slice(bias);
            }
            VariantParams::HyperNet { net, embeddings } => {
                net.flatten_into(&mut out);
                out.extend_from_slice(&embeddings.data);
            }
        }
        debug_assert_eq!(out.len(), self.param_count());
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<(), PolicyError> {
        if values.len() != self.param_count() {
            return Err(PolicyError::Nn(NnError::MisalignedGradient {
                got: values.len(),
                expected: self.param_count(),
            }));
        }
        match &mut self.params {
            VariantParams::PerAgent(nets) => {
                let mut cursor = 0;
                for net in nets {
                    let len = net.param_count();
                    net.assign_from_flat(&values[cursor..cursor + len])?;
                    cursor += len;
                }
            }
            VariantParams::Shared(net) => net.assign_from_flat(values)?,
            VariantParams::HyperLinear { weight, bias } => {
                let w_len = weight.data.len();
                weight.data.copy_from_slice(&values[..w_len]);
                bias.copy_from_slice(&values[w_len..]);
            }
            VariantParams::HyperNet { net, embeddings } => {
                let n_len = net.param_count();
                net.assign_from_flat(&values[..n_len])?;
                embeddings.data.copy_from_slice(&values[n_len..]);
            }
        }
        self.version += 1;
        Ok(())
    }

    /// `theta <- theta - lr * grad` over every trainable parameter.
    pub fn sgd_step(&mut self, grad: &FlatGradient, lr: f64) -> Result<(), PolicyError> {
        if grad.values.len() != self.param_count() {
            return Err(PolicyError::Nn(NnError::MisalignedGradient {
                got: grad.values.len(),
                expected: self.param_count(),
            }));
        }
        let scale = -lr;
        match &mut self.params {
            VariantParams::PerAgent(nets) => {
                let mut cursor = 0;
                for net in nets {
                    let len = net.param_count();
                    net.add_scaled(&grad.values[cursor..cursor + len], scale)?;
                    cursor += len;
                }
            }
            VariantParams::Shared(net) => net.add_scaled(&grad.values, scale)?,
            VariantParams::HyperLinear { weight, bias } => {
                let w_len = weight.data.len();
                for (w, g) in weight.data.iter_mut().zip(&grad.values[..w_len]) {
                    *w += scale * g;
                }
                for (b, g) in bias.iter_mut().zip(&grad.values[w_len..]) {
                    *b += scale * g;
                }
            }
            VariantParams::HyperNet { net, embeddings } => {
                let n_len = net.param_count();
                net.add_scaled(&grad.values[..n_len], scale)?;
                for (e, g) in embeddings.data.iter_mut().zip(&grad.values[n_len..]) {
                    *e += scale * g;
                }
            }
        }
        self.version += 1;
        Ok(())
    }

    /// Learned (or implicit one-hot) agent embeddings, one row per agent.
    pub fn embeddings(&self) -> Option<Tensor2> {
        match &self.params {
            VariantParams::HyperNet { embeddings, .. } => Some(embeddings.clone()),
            VariantParams::HyperLinear { .. } => {
                let n = self.dims.n_agents;
                let mut t = Tensor2::zeros(n, n);
                for i in 0..n {
                    t.data[i * n + i] = 1.0;
                }
                Some(t)
            }
            _ => None,
        }
    }

    fn hyper_input<'w>(
        &self,
        agent: usize,
        obs: Option<&[f64]>,
        buf: &'w mut Vec<f64>,
    ) -> &'w [f64] {
        let VariantParams::HyperNet { embeddings, .. } = &self.params else {
            unreachable!("hyper_input on non-hypernet variant");
        };
        match self.variant.kind {
            VariantKind::HyperMlp => {
                buf.clear();
                buf.extend_from_slice(embeddings.row(agent));
                buf
            }
            VariantKind::HyperMlpNoDecouple => {
                buf.clear();
                match obs {
                    Some(o) => buf.extend_from_slice(o),
                    // Observation-free generation falls back to the empty
                    // (t = 0) observation, which is all zeros.
                    None => buf.resize(self.dims.obs_dim, 0.0),
                }
                buf.extend_from_slice(embeddings.row(agent));
                buf
            }
            _ => unreachable!(),
        }
    }

    fn generate_into(
        &self,
        agent: usize,
        obs: Option<&[f64]>,
        ws_gen_cache: &mut ForwardCache,
        input_buf: &mut Vec<f64>,
        out: &mut MlpParams,
    ) -> Result<(), PolicyError> {
        match &self.params {
            VariantParams::HyperLinear { weight, bias } => {
                input_buf.clear();
                input_buf.extend(weight.row(agent).iter().zip(bias).map(|(w, b)| w + b));
                out.assign_from_flat(input_buf)?;
                Ok(())
            }
            VariantParams::HyperNet { net, .. } => {
                let input = self.hyper_input(agent, obs, input_buf);
                nn::forward_linear_into(net, input, ws_gen_cache)?;
                out.assign_from_flat(ws_gen_cache.output())?;
                Ok(())
            }
            _ => Err(PolicyError::VariantMismatch {
                op: "generate_agent_params",
                kind: self.variant.kind,
            }),
        }
    }

    /// Generate the policy network of one agent (hypernetwork variants).
    ///
    /// For the no-decoupling ablation the generated parameters also depend
    /// on the observation; this observation-free form conditions on the
    /// zero (episode-start) observation.
    pub fn generate_agent_params(&self, agent: usize) -> Result<MlpParams, PolicyError> {
        self.check_agent(agent)?;
        let mut out = MlpParams::zeros(&target_net_dims(&self.variant, &self.dims));
        let mut cache = ForwardCache::new();
        let mut buf = Vec::new();
        self.generate_into(agent, None, &mut cache, &mut buf, &mut out)?;
        Ok(out)
    }

    fn ensure_synced(&self, ws: &mut PolicyWorkspace) -> Result<(), PolicyError> {
        if !Arc::ptr_eq(&ws.layout, &self.layout) {
            *ws = self.workspace();
        }
        if ws.synced_version == Some(self.version) {
            return Ok(());
        }
        if matches!(
            self.variant.kind,
            VariantKind::HyperLinear | VariantKind::HyperMlp
        ) {
            let target = target_net_dims(&self.variant, &self.dims);
            ws.agent_nets
                .resize_with(self.dims.n_agents, || MlpParams::zeros(&target));
            for agent in 0..self.dims.n_agents {
                let (nets, gen_cache, input_buf) =
                    (&mut ws.agent_nets, &mut ws.gen_cache, &mut ws.input_buf);
                self.generate_into(agent, None, gen_cache, input_buf, &mut nets[agent])?;
            }
        }
        ws.synced_version = Some(self.version);
        Ok(())
    }

    /// Action distribution of `agent` on `obs`, writing activations into the
    /// workspace. The returned slice lives in `ws.net_cache`.
    pub fn probs_into<'w>(
        &self,
        ws: &'w mut PolicyWorkspace,
        agent: usize,
        obs: &[f64],
    ) -> Result<&'w [f64], PolicyError> {
        self.check_agent(agent)?;
        if obs.len() != self.dims.obs_dim {
            return Err(PolicyError::Nn(NnError::InputDimMismatch {
                got: obs.len(),
                expected: self.dims.obs_dim,
            }));
        }
        self.ensure_synced(ws)?;
        self.forward_sample(ws, agent, obs)?;
        Ok(ws.net_cache.output())
    }

    /// Runs the agent's policy network forward on `obs`, leaving the cache
    /// ready for a backward pass.
    fn forward_sample(
        &self,
        ws: &mut PolicyWorkspace,
        agent: usize,
        obs: &[f64],
    ) -> Result<(), PolicyError> {
        match self.variant.kind {
            VariantKind::NoPs => {
                let VariantParams::PerAgent(nets) = &self.params else {
                    unreachable!()
                };
                nn::forward_into(&nets[agent], obs, &mut ws.net_cache)?;
            }
            VariantKind::FuPs => {
                let VariantParams::Shared(net) = &self.params else {
                    unreachable!()
                };
                nn::forward_into(net, obs, &mut ws.net_cache)?;
            }
            VariantKind::FuPsId => {
                let VariantParams::Shared(net) = &self.params else {
                    unreachable!()
                };
                ws.input_buf.clear();
                ws.input_buf.extend_from_slice(obs);
                ws.input_buf.resize(obs.len() + self.dims.n_agents, 0.0);
                ws.input_buf[obs.len() + agent] = 1.0;
                nn::forward_into(net, &ws.input_buf, &mut ws.net_cache)?;
            }
            VariantKind::FuPsIdNoState => {
                let VariantParams::Shared(net) = &self.params else {
                    unreachable!()
                };
                ws.input_buf.clear();
                ws.input_buf.resize(self.dims.n_agents, 0.0);
                ws.input_buf[agent] = 1.0;
                nn::forward_into(net, &ws.input_buf, &mut ws.net_cache)?;
            }
            VariantKind::HyperLinear | VariantKind::HyperMlp => {
                nn::forward_into(&ws.agent_nets[agent], obs, &mut ws.net_cache)?;
            }
            VariantKind::HyperMlpNoDecouple => {
                let (scratch_net, gen_cache, input_buf) =
                    (&mut ws.scratch_net, &mut ws.gen_cache, &mut ws.input_buf);
                self.generate_into(agent, Some(obs), gen_cache, input_buf, scratch_net)?;
                nn::forward_into(&ws.scratch_net, obs, &mut ws.net_cache)?;
            }
        }
        Ok(())
    }

    /// Action distribution of one agent on one observation.
    pub fn action_distribution(&self, agent: usize, obs: &[f64]) -> Result<Vec<f64>, PolicyError> {
        let mut ws = self.workspace();
        Ok(self.probs_into(&mut ws, agent, obs)?.to_vec())
    }

    /// True when every agent produces the same distribution on a fixed
    /// observation, so rollouts can share one forward pass per step.
    pub fn agent_invariant(&self) -> bool {
        self.variant.kind == VariantKind::FuPs
    }

    /// Flat offset of agent `i`'s parameter block (NoPs only).
    fn agent_block_offset(&self, agent: usize) -> usize {
        let per_agent = mlp_count(&target_net_dims(&self.variant, &self.dims));
        agent * per_agent
    }

    /// Accumulate `weight * d log pi(action | agent, obs) / d theta` over all
    /// trainable parameters, by direct per-sample backpropagation.
    ///
    /// Assumes `forward_sample` has just run for this (agent, obs).
    fn accumulate_sample_gradient(
        &self,
        ws: &mut PolicyWorkspace,
        agent: usize,
        action: usize,
        weight: f64,
        out: &mut [f64],
    ) -> Result<(), PolicyError> {
        match (&self.params, self.variant.kind) {
            (VariantParams::PerAgent(nets), _) => {
                let off = self.agent_block_offset(agent);
                let len = nets[agent].param_count();
                nn::accumulate_logprob_gradient(
                    &nets[agent],
                    &mut ws.net_cache,
                    action,
                    weight,
                    &mut out[off..off + len],
                )?;
            }
            (VariantParams::Shared(net), _) => {
                nn::accumulate_logprob_gradient(net, &mut ws.net_cache, action, weight, out)?;
            }
            (VariantParams::HyperLinear { weight: w, .. }, _) => {
                // d theta / d row_agent = I and d theta / d bias = I, so the
                // target-parameter gradient lands on both.
                let m = w.cols;
                ws.theta_grad.iter_mut().for_each(|g| *g = 0.0);
                nn::accumulate_logprob_gradient(
                    &ws.agent_nets[agent],
                    &mut ws.net_cache,
                    action,
                    weight,
                    &mut ws.theta_grad,
                )?;
                let row_off = agent * m;
                for (k, &g) in ws.theta_grad.iter().enumerate() {
                    out[row_off + k] += g;
                    out[w.data.len() + k] += g;
                }
            }
            (VariantParams::HyperNet { net, .. }, kind) => {
                ws.theta_grad.iter_mut().for_each(|g| *g = 0.0);
                let target_net = match kind {
                    VariantKind::HyperMlp => &ws.agent_nets[agent],
                    VariantKind::HyperMlpNoDecouple => &ws.scratch_net,
                    _ => unreachable!(),
                };
                nn::accumulate_logprob_gradient(
                    target_net,
                    &mut ws.net_cache,
                    action,
                    weight,
                    &mut ws.theta_grad,
                )?;
                // Push the target-parameter gradient through the generator;
                // ws.gen_cache must hold the generator pass for this sample.
                let n_len = net.param_count();
                let embed_dim = self.variant.embed_dim;
                let in_dim = net.input_dim();
                ws.in_grad.clear();
                ws.in_grad.resize(in_dim, 0.0);
                nn::accumulate_linear_gradient(
                    net,
                    &mut ws.gen_cache,
                    &ws.theta_grad,
                    1.0,
                    &mut out[..n_len],
                    Some(&mut ws.in_grad),
                )?;
                // Gradient w.r.t. the embedding row: the trailing embed_dim
                // coordinates of the generator input.
                let emb_off = n_len + agent * embed_dim;
                for (k, &g) in ws.in_grad[in_dim - embed_dim..].iter().enumerate() {
                    out[emb_off + k] += g;
                }
            }
        }
        Ok(())
    }

    /// Direct per-sample gradient accumulation: forward + backward per
    /// sample, summed into `out`. Works for every variant; this is the
    /// oracle route the factored form is checked against.
    pub fn accumulate_gradient_direct<'a>(
        &self,
        ws: &mut PolicyWorkspace,
        samples: impl IntoIterator<Item = WeightedSample<'a>>,
        out: &mut [f64],
    ) -> Result<(), PolicyError> {
        self.check_out(out)?;
        self.ensure_synced(ws)?;
        // Fully shared nets ignore the agent index, so consecutive samples
        // on the same observation reuse one forward pass (the backward pass
        // leaves the recorded activations untouched).
        let shareable = self.variant.kind == VariantKind::FuPs;
        let mut last_fwd: Option<usize> = None;
        for s in samples {
            self.check_agent(s.agent)?;
            // The generator cache for HyperMlp must correspond to this
            // agent's embedding before backprop through it.
            if self.variant.kind == VariantKind::HyperMlp {
                let VariantParams::HyperNet { net, .. } = &self.params else {
                    unreachable!()
                };
                let input = self.hyper_input(s.agent, None, &mut ws.input_buf);
                nn::forward_linear_into(net, input, &mut ws.gen_cache)?;
            }
            let addr = s.obs.as_ptr() as usize;
            if !(shareable && last_fwd == Some(addr)) {
                self.forward_sample(ws, s.agent, s.obs)?;
                last_fwd = Some(addr);
            }
            self.accumulate_sample_gradient(ws, s.agent, s.action, s.weight, out)?;
        }
        Ok(())
    }

    /// Factored (decoupled) gradient accumulation for hypernetworks that
    /// generate parameters from the agent context alone: per-agent weighted
    /// target-parameter gradients are accumulated first, then pushed through
    /// the generator once per agent.
    pub fn accumulate_gradient_decoupled<'a>(
        &self,
        ws: &mut PolicyWorkspace,
        samples: impl IntoIterator<Item = WeightedSample<'a>>,
        out: &mut [f64],
    ) -> Result<(), PolicyError> {
        if !self.variant.kind.supports_decoupling() {
            return Err(PolicyError::VariantMismatch {
                op: "decoupled_gradient",
                kind: self.variant.kind,
            });
        }
        self.check_out(out)?;
        self.ensure_synced(ws)?;
        for z in &mut ws.zhat {
            z.iter_mut().for_each(|v| *v = 0.0);
        }
        // Observation-conditioned factor: weighted log-prob gradients at the
        // generated parameters, averaged (here: summed with caller weights)
        // within each agent.
        for s in samples {
            self.check_agent(s.agent)?;
            self.forward_sample(ws, s.agent, s.obs)?;
            nn::accumulate_logprob_gradient(
                &ws.agent_nets[s.agent],
                &mut ws.net_cache,
                s.action,
                s.weight,
                &mut ws.zhat[s.agent],
            )?;
        }
        // Agent-conditioned factor: one generator backward pass per agent.
        match &self.params {
            VariantParams::HyperLinear { weight, .. } => {
                let m = weight.cols;
                let b_off = weight.data.len();
                for agent in 0..self.dims.n_agents {
                    let row_off = agent * m;
                    for (k, &g) in ws.zhat[agent].iter().enumerate() {
                        out[row_off + k] += g;
                        out[b_off + k] += g;
                    }
                }
            }
            VariantParams::HyperNet { net, .. } => {
                let n_len = net.param_count();
                let embed_dim = self.variant.embed_dim;
                let in_dim = net.input_dim();
                for agent in 0..self.dims.n_agents {
                    let input = self.hyper_input(agent, None, &mut ws.input_buf);
                    nn::forward_linear_into(net, input, &mut ws.gen_cache)?;
                    ws.in_grad.clear();
                    ws.in_grad.resize(in_dim, 0.0);
                    nn::accumulate_linear_gradient(
                        net,
                        &mut ws.gen_cache,
                        &ws.zhat[agent],
                        1.0,
                        &mut out[..n_len],
                        Some(&mut ws.in_grad),
                    )?;
                    let emb_off = n_len + agent * embed_dim;
                    for (k, &g) in ws.in_grad[in_dim - embed_dim..].iter().enumerate() {
                        out[emb_off + k] += g;
                    }
                }
            }
            _ => unreachable!(),
        }
        Ok(())
    }

    fn check_out(&self, out: &[f64]) -> Result<(), PolicyError> {
        if out.len() != self.param_count() {
            return Err(PolicyError::Nn(NnError::MisalignedGradient {
                got: out.len(),
                expected: self.param_count(),
            }));
        }
        Ok(())
    }
}

/// One weighted REINFORCE sample: agent, observation, sampled action, and
/// the scalar weight (typically the return-to-go over the batch size).
#[derive(Debug, Clone, Copy)]
pub struct WeightedSample<'a> {
    pub agent: usize,
    pub obs: &'a [f64],
    pub action: usize,
    pub weight: f64,
}

/// Gradient of `log pi(action | agent, obs)` over all trainable parameters
/// of the variant, in the canonical flat ordering.
pub fn logprob_gradient(
    policy: &PolicyState,
    agent: usize,
    obs: &[f64],
    action: usize,
) -> Result<FlatGradient, PolicyError> {
    let mut ws = policy.workspace();
    let mut grad = FlatGradient::zeros(Arc::clone(policy.layout()));
    policy.accumulate_gradient_direct(
        &mut ws,
        [WeightedSample {
            agent,
            obs,
            action,
            weight: 1.0,
        }],
        &mut grad.values,
    )?;
    Ok(grad)
}

/// Factored gradient over a weighted batch (hypernetwork variants with
/// context-only generation). Numerically equal to summing
/// [`logprob_gradient`] times the weight per sample.
pub fn decoupled_gradient(
    policy: &PolicyState,
    samples: &[WeightedSample<'_>],
) -> Result<FlatGradient, PolicyError> {
    let mut ws = policy.workspace();
    let mut grad = FlatGradient::zeros(Arc::clone(policy.layout()));
    policy.accumulate_gradient_decoupled(&mut ws, samples.iter().copied(), &mut grad.values)?;
    Ok(grad)
}

/// Mean pairwise cosine distance between agent embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingDistance {
    pub mean: f64,
    /// Pairs skipped because one side had zero norm.
    pub skipped_pairs: usize,
}

/// Mean over unordered agent pairs of `1 - cos(e_i, e_j)`; in `[0, 2]`.
pub fn embedding_cosine_distance(policy: &PolicyState) -> Result<EmbeddingDistance, PolicyError> {
    let embeddings = policy.embeddings().ok_or(PolicyError::VariantMismatch {
        op: "embedding_cosine_distance",
        kind: policy.variant().kind,
    })?;
    let n = embeddings.rows;
    if n < 2 {
        return Err(PolicyError::Config("need at least 2 agents".into()));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    let mut skipped = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            let a = embeddings.row(i);
            let b = embeddings.row(j);
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na < 1e-300 || nb < 1e-300 {
                skipped += 1;
                continue;
            }
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            sum += 1.0 - dot / (na * nb);
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(PolicyError::DegenerateEmbeddings);
    }
    Ok(EmbeddingDistance {
        mean: sum / pairs as f64,
        skipped_pairs: skipped,
    })
}

// --- Parameter snapshot format -------------------------------------------
//
// Plain text: a fixed header, the segment table of the canonical flat
// ordering, then one value per line. Values use Rust's shortest
// round-trip float formatting, so save/load is bit-exact.

const SNAPSHOT_MAGIC: &str = "hypermarl-params v1";

impl PolicyState {
    pub fn write_snapshot<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "{SNAPSHOT_MAGIC}")?;
        writeln!(w, "variant {}", self.variant.kind)?;
        writeln!(w, "hidden_dim {}", self.variant.hidden_dim)?;
        writeln!(w, "embed_dim {}", self.variant.embed_dim)?;
        writeln!(w, "hyper_hidden_dim {}", self.variant.hyper_hidden_dim)?;
        writeln!(w, "reset_fan_init {}", self.variant.reset_fan_init)?;
        writeln!(w, "head_init_scale {}", self.variant.head_init_scale)?;
        writeln!(w, "n_agents {}", self.dims.n_agents)?;
        writeln!(w, "n_actions {}", self.dims.n_actions)?;
        writeln!(w, "obs_dim {}", self.dims.obs_dim)?;
        writeln!(w, "segments {}", self.layout.segments.len())?;
        for seg in &self.layout.segments {
            writeln!(w, "segment {} {}", seg.name, seg.len)?;
        }
        let flat = self.to_flat();
        writeln!(w, "data {}", flat.len())?;
        for v in flat {
            writeln!(w, "{v}")?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: BufRead>(r: &mut R) -> Result<PolicyState, PolicyError> {
        let mut lines = r.lines();
        let mut next = || -> Result<String, PolicyError> {
            lines
                .next()
                .ok_or_else(|| PolicyError::Checkpoint("unexpected end of file".into()))?
                .map_err(|e| PolicyError::Checkpoint(e.to_string()))
        };
        let magic = next()?;
        if magic.trim() != SNAPSHOT_MAGIC {
            return Err(PolicyError::Checkpoint(format!("bad magic: {magic}")));
        }
        let mut fields = std::collections::HashMap::new();
        let n_segments: usize;
        loop {
            let line = next()?;
            let mut parts = line.split_whitespace();
            let key = parts
                .next()
                .ok_or_else(|| PolicyError::Checkpoint("empty header line".into()))?
                .to_string();
            let value = parts.collect::<Vec<_>>().join(" ");
            if key == "segments" {
                n_segments = value
                    .parse()
                    .map_err(|_| PolicyError::Checkpoint("bad segment count".into()))?;
                break;
            }
            fields.insert(key, value);
        }
        for _ in 0..n_segments {
            let line = next()?;
            if !line.starts_with("segment ") {
                return Err(PolicyError::Checkpoint(format!("expected segment: {line}")));
            }
        }
        let data_line = next()?;
        let count: usize = data_line
            .strip_prefix("data ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| PolicyError::Checkpoint(format!("expected data header: {data_line}")))?;

        let get = |k: &str| -> Result<&String, PolicyError> {
            fields
                .get(k)
                .ok_or_else(|| PolicyError::Checkpoint(format!("missing header field {k}")))
        };
        let parse_usize = |k: &str| -> Result<usize, PolicyError> {
            get(k)?
                .parse()
                .map_err(|_| PolicyError::Checkpoint(format!("bad {k}")))
        };
        let kind = VariantKind::parse(get("variant")?)
            .ok_or_else(|| PolicyError::Checkpoint("unknown variant".into()))?;
        let spec = VariantSpec {
            kind,
            hidden_dim: parse_usize("hidden_dim")?,
            embed_dim: parse_usize("embed_dim")?,
            hyper_hidden_dim: parse_usize("hyper_hidden_dim")?,
            reset_fan_init: get("reset_fan_init")? == "true",
            head_init_scale: get("head_init_scale")?
                .parse()
                .map_err(|_| PolicyError::Checkpoint("bad head_init_scale".into()))?,
        };
        let dims = Dims {
            n_agents: parse_usize("n_agents")?,
            n_actions: parse_usize("n_actions")?,
            obs_dim: parse_usize("obs_dim")?,
        };
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let line = next()?;
            values.push(
                line.trim()
                    .parse::<f64>()
                    .map_err(|_| PolicyError::Checkpoint(format!("bad value: {line}")))?,
            );
        }
        // Rebuild structure deterministically, then overwrite the values.
        let mut throwaway = rand_chacha::ChaCha12Rng::seed_from_u64(0);
        let mut policy = build(spec, dims, &mut throwaway)?;
        policy.set_flat(&values)?;
        Ok(policy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn dims(n: usize) -> Dims {
        Dims {
            n_agents: n,
            n_actions: n,
            obs_dim: n * n,
        }
    }

    #[test]
    fn parameter_counts_match_reference_table() {
        // Shared-architecture hidden sizes 8/16/32/64 for n = 2/4/8/16;
        // independent policies use hidden 4 throughout.
        let cases: &[(usize, usize, usize, [usize; 4])] = &[
            // (n, nops_hidden, shared_hidden, [nops, fups, fups_id, no_state])
            (2, 4, 8, [60, 58, 74, 42]),
            (8, 4, 32, [2400, 2344, 2600, 552]),
            (16, 4, 64, [17728, 17488, 18512, 2128]),
        ];
        for &(n, nops_h, shared_h, expected) in cases {
            let d = dims(n);
            assert_eq!(
                count_params(&VariantSpec::direct(VariantKind::NoPs, nops_h), &d),
                expected[0]
            );
            assert_eq!(
                count_params(&VariantSpec::direct(VariantKind::FuPs, shared_h), &d),
                expected[1]
            );
            assert_eq!(
                count_params(&VariantSpec::direct(VariantKind::FuPsId, shared_h), &d),
                expected[2]
            );
            assert_eq!(
                count_params(&VariantSpec::direct(VariantKind::FuPsIdNoState, shared_h), &d),
                expected[3]
            );
        }
        // n = 4: every reference entry except the shared no-ID count, which
        // is inconsistent with the encoding that reproduces the rest of the
        // table (expected 340).
        let d = dims(4);
        assert_eq!(count_params(&VariantSpec::direct(VariantKind::NoPs, 4), &d), 352);
        assert_eq!(count_params(&VariantSpec::direct(VariantKind::FuPs, 16), &d), 340);
        assert_eq!(count_params(&VariantSpec::direct(VariantKind::FuPsId, 16), &d), 404);
        assert_eq!(
            count_params(&VariantSpec::direct(VariantKind::FuPsIdNoState, 16), &d),
            148
        );
    }

    #[test]
    fn built_policies_have_declared_param_count() {
        let d = dims(3);
        let specs = [
            VariantSpec::direct(VariantKind::NoPs, 4),
            VariantSpec::direct(VariantKind::FuPs, 8),
            VariantSpec::direct(VariantKind::FuPsId, 8),
            VariantSpec::direct(VariantKind::FuPsIdNoState, 8),
            VariantSpec::hyper_linear(8, 3),
            VariantSpec::hyper_mlp(8, 4, 8),
            VariantSpec::hyper_mlp_no_decouple(8, 4, 8),
        ];
        for spec in specs {
            let policy = build(spec.clone(), d, &mut rng(1)).unwrap();
            assert_eq!(policy.param_count(), count_params(&spec, &d), "{:?}", spec.kind);
            assert_eq!(policy.to_flat().len(), policy.param_count());
        }
    }

    #[test]
    fn hyper_linear_generation_is_row_plus_bias() {
        let d = dims(2);
        let mut policy = build(VariantSpec::hyper_linear(8, 2), d, &mut rng(2)).unwrap();
        // Reset-fan init leaves the bias at zero: theta_i is exactly row i.
        let flat = policy.to_flat();
        let m = count_params(&VariantSpec::direct(VariantKind::FuPs, 8), &d);
        for agent in 0..2 {
            let theta = policy.generate_agent_params(agent).unwrap().flatten();
            assert_eq!(theta.as_slice(), &flat[agent * m..(agent + 1) * m]);
        }
        // With a nonzero bias the difference of generated params is the
        // difference of rows (bias cancels).
        let mut with_bias = flat.clone();
        for v in &mut with_bias[2 * m..] {
            *v = 0.25;
        }
        policy.set_flat(&with_bias).unwrap();
        let t0 = policy.generate_agent_params(0).unwrap().flatten();
        let t1 = policy.generate_agent_params(1).unwrap().flatten();
        for k in 0..m {
            let diff = t0[k] - t1[k];
            let row_diff = with_bias[k] - with_bias[m + k];
            assert!((diff - row_diff).abs() < 1e-15);
        }
    }

    #[test]
    fn hyper_mlp_generation_depends_only_on_embedding() {
        let d = dims(2);
        let mut policy = build(VariantSpec::hyper_mlp(8, 2, 8), d, &mut rng(3)).unwrap();
        // Force identical embeddings; generated parameters must match bitwise.
        let mut flat = policy.to_flat();
        let emb_off = policy.layout().offset_of("embeddings").unwrap();
        let (e0, e1) = (flat[emb_off], flat[emb_off + 1]);
        flat[emb_off + 2] = e0;
        flat[emb_off + 3] = e1;
        policy.set_flat(&flat).unwrap();
        let t0 = policy.generate_agent_params(0).unwrap();
        let t1 = policy.generate_agent_params(1).unwrap();
        assert_eq!(t0, t1);
        // Regeneration is idempotent.
        assert_eq!(policy.generate_agent_params(0).unwrap(), t0);
    }

    #[test]
    fn generate_rejects_direct_variants() {
        let policy = build(VariantSpec::direct(VariantKind::FuPs, 8), dims(2), &mut rng(4)).unwrap();
        assert!(matches!(
            policy.generate_agent_params(0),
            Err(PolicyError::VariantMismatch { .. })
        ));
    }

    #[test]
    fn fups_agents_share_distribution_and_no_state_ignores_obs() {
        let d = dims(2);
        let fups = build(VariantSpec::direct(VariantKind::FuPs, 8), d, &mut rng(5)).unwrap();
        let obs = vec![0.0, 1.0, 1.0, 0.0];
        assert_eq!(
            fups.action_distribution(0, &obs).unwrap(),
            fups.action_distribution(1, &obs).unwrap()
        );

        let ns = build(VariantSpec::direct(VariantKind::FuPsIdNoState, 8), d, &mut rng(6)).unwrap();
        let o1 = vec![0.0; 4];
        let o2 = vec![1.0, 0.0, 0.0, 1.0];
        assert_eq!(
            ns.action_distribution(0, &o1).unwrap(),
            ns.action_distribution(0, &o2).unwrap()
        );
        // ...but FuPS+ID(NoState) can still differ per agent.
        let d0 = ns.action_distribution(0, &o1).unwrap();
        let d1 = ns.action_distribution(1, &o1).unwrap();
        assert_ne!(d0, d1);
    }

    #[test]
    fn hyper_linear_rows_can_disagree() {
        let d = dims(2);
        let mut policy = build(VariantSpec::hyper_linear(8, 2), d, &mut rng(7)).unwrap();
        // Hand-build rows whose output layers favour different actions.
        let m = 58;
        let mut flat = vec![0.0; policy.param_count()];
        // Output bias lives in the last n_actions entries of a row.
        flat[m - 2] = 5.0; // agent 0: bias toward action 0
        flat[m + m - 1] = 5.0; // agent 1: bias toward action 1
        policy.set_flat(&flat).unwrap();
        let obs = vec![0.0; 4];
        let p0 = policy.action_distribution(0, &obs).unwrap();
        let p1 = policy.action_distribution(1, &obs).unwrap();
        assert!(p0[0] > 0.9);
        assert!(p1[1] > 0.9);
    }

    #[test]
    fn nops_gradient_is_block_sparse() {
        let d = dims(2);
        let policy = build(VariantSpec::direct(VariantKind::NoPs, 4), d, &mut rng(8)).unwrap();
        let obs = vec![0.0, 1.0, 1.0, 0.0];
        let grad = logprob_gradient(&policy, 1, &obs, 0).unwrap();
        let block = policy.param_count() / 2;
        assert!(grad.values[..block].iter().all(|&g| g == 0.0));
        assert!(grad.values[block..].iter().any(|&g| g != 0.0));
    }

    #[test]
    fn hyper_linear_gradient_touches_only_own_row_and_bias() {
        let d = dims(3);
        let policy = build(VariantSpec::hyper_linear(8, 3), d, &mut rng(9)).unwrap();
        let obs = vec![0.0; 9];
        let grad = logprob_gradient(&policy, 1, &obs, 2).unwrap();
        let m = policy.param_count() / 4; // 3 rows + bias
        assert!(grad.values[..m].iter().all(|&g| g == 0.0), "row 0 untouched");
        assert!(grad.values[2 * m..3 * m].iter().all(|&g| g == 0.0), "row 2 untouched");
        assert!(grad.values[m..2 * m].iter().any(|&g| g != 0.0), "row 1 written");
    }

    #[test]
    fn decoupled_errors_on_non_decoupling_variants() {
        let d = dims(2);
        let fups = build(VariantSpec::direct(VariantKind::FuPs, 8), d, &mut rng(10)).unwrap();
        let obs = vec![0.0; 4];
        let samples = [WeightedSample {
            agent: 0,
            obs: &obs,
            action: 0,
            weight: 1.0,
        }];
        assert!(matches!(
            decoupled_gradient(&fups, &samples),
            Err(PolicyError::VariantMismatch { .. })
        ));
        let coupled =
            build(VariantSpec::hyper_mlp_no_decouple(8, 2, 8), d, &mut rng(11)).unwrap();
        assert!(matches!(
            decoupled_gradient(&coupled, &samples),
            Err(PolicyError::VariantMismatch { .. })
        ));
    }

    #[test]
    fn decoupled_single_sample_equals_direct() {
        let d = dims(2);
        for spec in [
            VariantSpec::hyper_linear(8, 2),
            VariantSpec::hyper_mlp(8, 2, 8),
        ] {
            let policy = build(spec, d, &mut rng(12)).unwrap();
            let obs = vec![0.0, 1.0, 1.0, 0.0];
            let sample = WeightedSample {
                agent: 1,
                obs: &obs,
                action: 0,
                weight: 0.7,
            };
            let factored = decoupled_gradient(&policy, &[sample]).unwrap();
            let mut direct = logprob_gradient(&policy, 1, &obs, 0).unwrap();
            direct.scale(0.7);
            for (a, b) in factored.values.iter().zip(&direct.values) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn embeddings_orthogonal_at_init() {
        let d = dims(4);
        let policy = build(VariantSpec::hyper_mlp(16, 4, 16), d, &mut rng(13)).unwrap();
        let dist = embedding_cosine_distance(&policy).unwrap();
        assert!((dist.mean - 1.0).abs() < 1e-8);
        assert_eq!(dist.skipped_pairs, 0);
        // One-hot contexts of the linear hypernetwork are perfectly separated too.
        let linear = build(VariantSpec::hyper_linear(16, 4), d, &mut rng(14)).unwrap();
        assert!((embedding_cosine_distance(&linear).unwrap().mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn embedding_distance_extremes() {
        let d = dims(2);
        let mut policy = build(VariantSpec::hyper_mlp(8, 2, 8), d, &mut rng(15)).unwrap();
        let emb_off = policy.layout().offset_of("embeddings").unwrap();
        let mut flat = policy.to_flat();
        // Identical embeddings -> 0.
        flat[emb_off..emb_off + 4].copy_from_slice(&[1.0, 0.0, 1.0, 0.0]);
        policy.set_flat(&flat).unwrap();
        assert!(embedding_cosine_distance(&policy).unwrap().mean.abs() < 1e-12);
        // Antipodal embeddings -> 2.
        flat[emb_off..emb_off + 4].copy_from_slice(&[1.0, 0.0, -1.0, 0.0]);
        policy.set_flat(&flat).unwrap();
        assert!((embedding_cosine_distance(&policy).unwrap().mean - 2.0).abs() < 1e-12);
        // Zero-norm embedding pairs are skipped and flagged.
        flat[emb_off..emb_off + 4].copy_from_slice(&[0.0, 0.0, 1.0, 0.0]);
        policy.set_flat(&flat).unwrap();
        assert!(matches!(
            embedding_cosine_distance(&policy),
            Err(PolicyError::DegenerateEmbeddings)
        ));
    }

    #[test]
    fn reset_fan_mlp_head_perturbation_is_small() {
        let d = dims(4);
        let policy = build(VariantSpec::hyper_mlp(16, 4, 16), d, &mut rng(16)).unwrap();
        let VariantParams::HyperNet { net, .. } = &policy.params else {
            unreachable!()
        };
        let head_bias = &net.layers[1].bias;
        let bias_norm: f64 = head_bias.iter().map(|v| v * v).sum::<f64>().sqrt();
        for agent in 0..4 {
            let theta = policy.generate_agent_params(agent).unwrap().flatten();
            let pert_norm: f64 = theta
                .iter()
                .zip(head_bias)
                .map(|(t, b)| (t - b) * (t - b))
                .sum::<f64>()
                .sqrt();
            assert!(
                pert_norm < 0.1 * bias_norm,
                "agent {agent}: {pert_norm} vs 10% of {bias_norm}"
            );
        }
    }

    #[test]
    fn build_rejects_bad_configs() {
        let d = dims(4);
        assert!(build(VariantSpec::direct(VariantKind::FuPs, 7), d, &mut rng(0)).is_err());
        assert!(build(VariantSpec::hyper_mlp(16, 2, 16), d, &mut rng(0)).is_err()); // embed < n
        assert!(build(VariantSpec::hyper_linear(16, 3), d, &mut rng(0)).is_err()); // one-hot dim
        let bad_dims = Dims {
            n_agents: 4,
            n_actions: 4,
            obs_dim: 15,
        };
        assert!(build(VariantSpec::direct(VariantKind::FuPs, 16), bad_dims, &mut rng(0)).is_err());
    }

    #[test]
    fn snapshot_roundtrip_is_bit_exact() {
        let d = dims(3);
        for spec in [
            VariantSpec::direct(VariantKind::NoPs, 4),
            VariantSpec::direct(VariantKind::FuPsId, 8),
            VariantSpec::hyper_mlp(8, 4, 8),
        ] {
            let policy = build(spec, d, &mut rng(17)).unwrap();
            let mut buf = Vec::new();
            policy.write_snapshot(&mut buf).unwrap();
            let restored = PolicyState::read_snapshot(&mut buf.as_slice()).unwrap();
            assert_eq!(policy.to_flat(), restored.to_flat());
            assert_eq!(policy.variant(), restored.variant());
            assert_eq!(policy.dims(), restored.dims());
        }
    }

    #[test]
    fn reset_fan_matches_direct_init_distribution() {
        // Pooled per-layer standard deviation of generated step-0 parameters
        // vs the direct initialiser, over many seeds.
        let d = dims(2);
        let target = target_net_dims(&VariantSpec::direct(VariantKind::FuPs, 8), &d);
        let seeds = 1000;

        let layer_sd = |samples: &[Vec<f64>], lo: usize, hi: usize| -> f64 {
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            let mut count = 0.0;
            for s in samples {
                for &v in &s[lo..hi] {
                    sum += v;
                    sumsq += v * v;
                    count += 1.0;
                }
            }
            let mean = sum / count;
            (sumsq / count - mean * mean).sqrt()
        };

        let mut direct_samples = Vec::new();
        let mut linear_samples = Vec::new();
        let mut mlp_samples = Vec::new();
        for seed in 0..seeds {
            let mut r = rng(1_000_000 + seed);
            direct_samples.push(direct_init(&target, &mut r).flatten());
            let lin = build(VariantSpec::hyper_linear(8, 2), d, &mut rng(2_000_000 + seed)).unwrap();
            linear_samples.push(lin.generate_agent_params(0).unwrap().flatten());
            let mlp = build(VariantSpec::hyper_mlp(8, 2, 8), d, &mut rng(3_000_000 + seed)).unwrap();
            mlp_samples.push(mlp.generate_agent_params(0).unwrap().flatten());
        }

        // Layer boundaries in the flat target vector: weight+bias pooled.
        let l0 = target[0].0 * target[0].1 + target[0].1;
        let total = l0 + target[1].0 * target[1].1 + target[1].1;
        for (lo, hi) in [(0, l0), (l0, total)] {
            let d_sd = layer_sd(&direct_samples, lo, hi);
            let lin_sd = layer_sd(&linear_samples, lo, hi);
            let mlp_sd = layer_sd(&mlp_samples, lo, hi);
            assert!(
                (lin_sd - d_sd).abs() < 0.1 * d_sd,
                "linear layer [{lo},{hi}): {lin_sd} vs {d_sd}"
            );
            assert!(
                (mlp_sd - d_sd).abs() < 0.1 * d_sd,
                "mlp layer [{lo},{hi}): {mlp_sd} vs {d_sd}"
            );
        }
    }
}
