//! Measurement toolkit: per-agent gradient decomposition, pairwise gradient
//! conflict (cosine similarity), windowed gradient variance, and behavioural
//! diversity (SND) over Jensen-Shannon or total-variation distances.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::game::{self, GameConfig, GameState, JointAction};
use crate::nn::{self, FlatGradient};
use crate::policy::{PolicyError, PolicyState, PolicyWorkspace};
use crate::train::{self, Batch, TrainError};

#[derive(Debug, Clone, thiserror::Error)]
pub enum DiagError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Per-agent REINFORCE gradients on the full shared parameter vector:
/// `g_i` uses only agent i's (obs, action, return) terms, so the per-agent
/// gradients sum to the joint policy gradient.
pub fn per_agent_gradients(
    batch: &Batch,
    policy: &PolicyState,
    gamma: f64,
) -> Result<Vec<FlatGradient>, TrainError> {
    let mut ws = policy.workspace();
    per_agent_gradients_with(batch, policy, &mut ws, gamma)
}

pub fn per_agent_gradients_with(
    batch: &Batch,
    policy: &PolicyState,
    ws: &mut PolicyWorkspace,
    gamma: f64,
) -> Result<Vec<FlatGradient>, TrainError> {
    (0..policy.dims().n_agents)
        .map(|agent| train::policy_gradient_with(batch, policy, ws, gamma, Some(agent)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCosine {
    pub i: usize,
    pub j: usize,
    pub cosine: f64,
}

/// Pairwise cosine similarities between per-agent gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub pairs: Vec<PairCosine>,
    pub mean: f64,
    pub min: f64,
    /// Pairs where at least one gradient had zero norm; their cosine is
    /// reported as 0 rather than NaN.
    pub zero_norm_pairs: usize,
}

pub fn gradient_conflict(grads: &[FlatGradient]) -> Result<ConflictReport, DiagError> {
    if grads.len() < 2 {
        return Err(DiagError::Input(format!(
            "need at least 2 gradients, got {}",
            grads.len()
        )));
    }
    let len = grads[0].len();
    if grads.iter().any(|g| g.len() != len) {
        return Err(DiagError::Input("gradient length mismatch".into()));
    }
    let norms: Vec<f64> = grads.iter().map(|g| g.norm()).collect();
    let mut pairs = Vec::with_capacity(grads.len() * (grads.len() - 1) / 2);
    let mut zero_norm_pairs = 0usize;
    for i in 0..grads.len() {
        for j in i + 1..grads.len() {
            let cosine = if norms[i] == 0.0 || norms[j] == 0.0 {
                zero_norm_pairs += 1;
                0.0
            } else {
                let dot: f64 = grads[i]
                    .values
                    .iter()
                    .zip(&grads[j].values)
                    .map(|(a, b)| a * b)
                    .sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            pairs.push(PairCosine { i, j, cosine });
        }
    }
    let mean = pairs.iter().map(|p| p.cosine).sum::<f64>() / pairs.len() as f64;
    let min = pairs.iter().map(|p| p.cosine).fold(f64::INFINITY, f64::min);
    Ok(ConflictReport {
        pairs,
        mean,
        min,
        zero_norm_pairs,
    })
}

/// Mean over parameters of the unbiased per-parameter sample variance
/// across a window of consecutive update gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub window: usize,
    pub mean_variance: f64,
}

pub fn gradient_variance(window: &[FlatGradient]) -> Result<VarianceReport, DiagError> {
    if window.len() < 2 {
        return Err(DiagError::Input(format!(
            "need a window of at least 2 gradients, got {}",
            window.len()
        )));
    }
    let len = window[0].len();
    if window.iter().any(|g| g.len() != len) {
        return Err(DiagError::Input("gradient length mismatch".into()));
    }
    let w = window.len() as f64;
    let mut mean = vec![0.0; len];
    for g in window {
        for (m, v) in mean.iter_mut().zip(&g.values) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= w;
    }
    let mut total = 0.0;
    for g in window {
        for (m, v) in mean.iter().zip(&g.values) {
            let d = v - m;
            total += d * d;
        }
    }
    Ok(VarianceReport {
        window: window.len(),
        mean_variance: total / ((w - 1.0) * len as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogBase {
    /// Base-2 logs: Jensen-Shannon distance ranges over [0, 1].
    Two,
    Natural,
}

fn kl_to_mid(p: &[f64], m: &[f64], base: LogBase) -> f64 {
    let mut kl = 0.0;
    for (&pi, &mi) in p.iter().zip(m) {
        if pi > 0.0 {
            let term = match base {
                LogBase::Two => (pi / mi).log2(),
                LogBase::Natural => (pi / mi).ln(),
            };
            kl += pi * term;
        }
    }
    kl
}

/// Jensen-Shannon divergence `0.5 KL(p||m) + 0.5 KL(q||m)` with
/// `m = (p + q) / 2` and `0 log 0 := 0`.
pub fn jsd_divergence(p: &[f64], q: &[f64], base: LogBase) -> f64 {
    assert_eq!(p.len(), q.len(), "support size mismatch");
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    0.5 * kl_to_mid(p, &m, base) + 0.5 * kl_to_mid(q, &m, base)
}

/// Jensen-Shannon distance: the square root of the divergence. With base-2
/// logs it is a metric with range [0, 1].
pub fn jsd_distance(p: &[f64], q: &[f64]) -> f64 {
    jsd_distance_with_base(p, q, LogBase::Two)
}

pub fn jsd_distance_with_base(p: &[f64], q: &[f64], base: LogBase) -> f64 {
    jsd_divergence(p, q, base).max(0.0).sqrt()
}

/// Total variation distance: half the L1 distance.
pub fn tvd(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "support size mismatch");
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Observations gathered from stochastic rollouts of the joint policy,
/// uniformly subsampled to at most `cap`.
pub fn collect_observation_set<R: Rng + ?Sized>(
    game: &GameConfig,
    policy: &PolicyState,
    episodes: usize,
    cap: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, TrainError> {
    let mut ws = policy.workspace();
    let n = game.n_agents;
    let horizon = game.effective_horizon();
    let shared = policy.agent_invariant();
    let mut probs_buf: Vec<f64> = Vec::new();
    let mut observations = Vec::with_capacity(episodes * horizon);
    for _ in 0..episodes {
        let mut state = GameState::initial();
        for _ in 0..horizon {
            let mut obs = vec![0.0; game.obs_dim()];
            game::encode_observation_into(game, &state, &mut obs);
            let mut actions = Vec::with_capacity(n);
            for agent in 0..n {
                if agent == 0 || !shared {
                    let probs = policy.probs_into(&mut ws, agent, &obs)?;
                    probs_buf.clear();
                    probs_buf.extend_from_slice(probs);
                }
                actions.push(nn::sample_categorical(&probs_buf, rng)?);
            }
            observations.push(obs);
            let (next, _) = game::step(game, &state, &JointAction::new(actions))?;
            state = next;
        }
    }
    if observations.len() > cap {
        // Partial Fisher-Yates: a uniform subsample without replacement.
        for i in 0..cap {
            let j = i + rng.random_range(0..observations.len() - i);
            observations.swap(i, j);
        }
        observations.truncate(cap);
    }
    Ok(observations)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    Jsd,
    Tvd,
}

impl DistanceKind {
    pub fn apply(&self, p: &[f64], q: &[f64]) -> f64 {
        match self {
            DistanceKind::Jsd => jsd_distance(p, q),
            DistanceKind::Tvd => tvd(p, q),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            DistanceKind::Jsd => "jsd",
            DistanceKind::Tvd => "tvd",
        }
    }
}

/// Behavioural diversity of a policy set over an observation set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SndReport {
    pub distance: DistanceKind,
    pub n_observations: usize,
    pub value: f64,
}

/// Mean pairwise policy-output distance over the observation multiset:
/// `2 / (n (n-1) |O|) * sum_{i<j} sum_{o in O} D(pi_i(o), pi_j(o))`.
/// Zero iff all policies agree on every observation in the set.
pub fn snd_with<F>(
    n_agents: usize,
    mut dist_fn: F,
    obs_set: &[Vec<f64>],
    distance: DistanceKind,
) -> Result<SndReport, DiagError>
where
    F: FnMut(usize, &[f64]) -> Vec<f64>,
{
    if n_agents < 2 {
        return Err(DiagError::Input("need at least 2 agents".into()));
    }
    if obs_set.is_empty() {
        return Err(DiagError::Input("empty observation set".into()));
    }
    let mut sum = 0.0;
    let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(n_agents);
    for obs in obs_set {
        outputs.clear();
        outputs.extend((0..n_agents).map(|agent| dist_fn(agent, obs)));
        for i in 0..n_agents {
            for j in i + 1..n_agents {
                sum += distance.apply(&outputs[i], &outputs[j]);
            }
        }
    }
    let n_pairs = (n_agents * (n_agents - 1) / 2) as f64;
    Ok(SndReport {
        distance,
        n_observations: obs_set.len(),
        value: sum / (n_pairs * obs_set.len() as f64),
    })
}

/// [`snd_with`] over a built policy's per-agent action distributions.
pub fn snd(
    policy: &PolicyState,
    obs_set: &[Vec<f64>],
    distance: DistanceKind,
) -> Result<SndReport, DiagError> {
    let mut ws = policy.workspace();
    let mut first_err = None;
    let report = snd_with(
        policy.dims().n_agents,
        |agent, obs| match policy.probs_into(&mut ws, agent, obs) {
            Ok(probs) => probs.to_vec(),
            Err(e) => {
                first_err.get_or_insert(e);
                vec![1.0]
            }
        },
        obs_set,
        distance,
    );
    if let Some(e) = first_err {
        return Err(DiagError::Policy(e));
    }
    report
}
