//! REINFORCE training: on-policy batch collection, returns-to-go, joint
//! policy-gradient assembly per variant, SGD updates, and periodic
//! evaluation with diagnostics.
//!
//! Runs are fully deterministic given the config seed: one sequential RNG
//! drives initialisation, rollouts, and evaluation.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::diag::{self, ConflictReport, VarianceReport};
use crate::game::{self, GameConfig, GameError, GameState, JointAction};
use crate::nn::{self, FlatGradient, NnError};
use crate::policy::{
    self, Dims, PolicyError, PolicyState, PolicyWorkspace, VariantSpec, WeightedSample,
};

#[derive(Debug, Clone, thiserror::Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("non-finite {statistic} at update {update}")]
    NonFinite { update: u64, statistic: &'static str },
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Diag(#[from] crate::diag::DiagError),
}

/// Training hyperparameters. The defaults are the standard protocol for
/// these games: lr 0.01 SGD, batch 32, 10,000 updates, 100-episode
/// evaluations every 1,000 updates, undiscounted returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub game: GameConfig,
    pub variant: VariantSpec,
    pub lr: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub gamma: f64,
    pub seed: u64,
    /// Consecutive updates in the gradient-variance window.
    pub grad_window: usize,
}

impl TrainConfig {
    pub fn new(game: GameConfig, variant: VariantSpec, seed: u64) -> Self {
        TrainConfig {
            game,
            variant,
            lr: 0.01,
            batch_size: 32,
            total_steps: 10_000,
            eval_interval: 1_000,
            eval_episodes: 100,
            gamma: 1.0,
            seed,
            grad_window: 50,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if self.eval_interval == 0 {
            return Err(TrainError::Config("eval_interval must be positive".into()));
        }
        if self.eval_episodes == 0 {
            return Err(TrainError::Config("eval_episodes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(TrainError::Config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(TrainError::Config(format!("bad lr {}", self.lr)));
        }
        if self.grad_window < 2 {
            return Err(TrainError::Config("grad_window must be at least 2".into()));
        }
        Ok(())
    }
}

/// One timestep of one episode. The observation is shared by all agents
/// (full observability of the previous joint action); actions,
/// log-probabilities and rewards are per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSample {
    pub obs: Vec<f64>,
    pub actions: Vec<usize>,
    pub logprobs: Vec<f64>,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub steps: Vec<StepSample>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub episodes: Vec<Episode>,
}

impl Batch {
    /// Mean per-agent per-timestep reward over the batch.
    pub fn mean_reward(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for ep in &self.episodes {
            for step in &ep.steps {
                sum += step.rewards.iter().sum::<f64>();
                count += step.rewards.len();
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    pub fn n_samples(&self) -> usize {
        self.episodes
            .iter()
            .map(|ep| ep.steps.iter().map(|s| s.actions.len()).sum::<usize>())
            .sum()
    }
}

/// Roll out `batch_size` complete episodes with the current stochastic
/// policy, recording per-sample log-probabilities.
pub fn collect_batch<R: Rng + ?Sized>(
    game: &GameConfig,
    policy: &PolicyState,
    batch_size: usize,
    rng: &mut R,
) -> Result<Batch, TrainError> {
    let mut ws = policy.workspace();
    collect_batch_with(game, policy, &mut ws, batch_size, rng)
}

pub fn collect_batch_with<R: Rng + ?Sized>(
    game: &GameConfig,
    policy: &PolicyState,
    ws: &mut PolicyWorkspace,
    batch_size: usize,
    rng: &mut R,
) -> Result<Batch, TrainError> {
    let n = game.n_agents;
    let horizon = game.effective_horizon();
    let shared = policy.agent_invariant();
    let mut probs_buf: Vec<f64> = Vec::new();
    let mut episodes = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let mut state = GameState::initial();
        let mut steps = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let mut obs = vec![0.0; game.obs_dim()];
            game::encode_observation_into(game, &state, &mut obs);
            let mut actions = Vec::with_capacity(n);
            let mut logprobs = Vec::with_capacity(n);
            for agent in 0..n {
                if agent == 0 || !shared {
                    let probs = policy.probs_into(ws, agent, &obs)?;
                    probs_buf.clear();
                    probs_buf.extend_from_slice(probs);
                }
                let action = nn::sample_categorical(&probs_buf, rng)?;
                logprobs.push(probs_buf[action].ln());
                actions.push(action);
            }
            let joint = JointAction::new(actions);
            let (next, rewards) = game::step(game, &state, &joint)?;
            state = next;
            steps.push(StepSample {
                obs,
                actions: joint.actions,
                logprobs,
                rewards,
            });
        }
        episodes.push(Episode { steps });
    }
    Ok(Batch { episodes })
}

/// Returns-to-go `G_t = sum_{k >= t} gamma^(k - t) r_k`, per step per agent.
/// Input and output are indexed `[step][agent]`.
pub fn returns_to_go(rewards: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
    let mut returns: Vec<Vec<f64>> = rewards.to_vec();
    let steps = returns.len();
    for t in (0..steps.saturating_sub(1)).rev() {
        let (head, tail) = returns.split_at_mut(t + 1);
        let current = &mut head[t];
        let next = &tail[0];
        for (g, &g_next) in current.iter_mut().zip(next) {
            *g += gamma * g_next;
        }
    }
    returns
}

/// Collect the weighted REINFORCE samples of a batch: weight is the
/// return-to-go scaled by `scale` (1 / batch episodes for the estimator).
fn fill_weighted_samples<'a>(
    batch: &'a Batch,
    gamma: f64,
    scale: f64,
    agent_filter: Option<usize>,
    out: &mut Vec<WeightedSample<'a>>,
) {
    out.clear();
    for ep in &batch.episodes {
        let rewards: Vec<Vec<f64>> = ep.steps.iter().map(|s| s.rewards.clone()).collect();
        let returns = returns_to_go(&rewards, gamma);
        for (step, g_t) in ep.steps.iter().zip(&returns) {
            for (agent, (&action, &g)) in step.actions.iter().zip(g_t).enumerate() {
                if agent_filter.is_some_and(|a| a != agent) {
                    continue;
                }
                out.push(WeightedSample {
                    agent,
                    obs: &step.obs,
                    action,
                    weight: scale * g,
                });
            }
        }
    }
}

/// REINFORCE gradient estimate over a batch (an ascent direction):
/// `(1/B) sum_ep sum_t sum_i G_t^i grad log pi(a_t^i | input_t^i)`.
///
/// Hypernetwork variants with context-only generation route through the
/// factored (decoupled) form; all others accumulate per sample directly.
pub fn policy_gradient(
    batch: &Batch,
    policy: &PolicyState,
    gamma: f64,
) -> Result<FlatGradient, TrainError> {
    let mut ws = policy.workspace();
    policy_gradient_with(batch, policy, &mut ws, gamma, None)
}

pub(crate) fn policy_gradient_with(
    batch: &Batch,
    policy: &PolicyState,
    ws: &mut PolicyWorkspace,
    gamma: f64,
    agent_filter: Option<usize>,
) -> Result<FlatGradient, TrainError> {
    let mut grad = FlatGradient::zeros(Arc::clone(policy.layout()));
    let scale = 1.0 / batch.episodes.len().max(1) as f64;
    let mut samples = Vec::new();
    fill_weighted_samples(batch, gamma, scale, agent_filter, &mut samples);
    if policy.variant().kind.supports_decoupling() {
        policy.accumulate_gradient_decoupled(ws, samples.iter().copied(), &mut grad.values)?;
    } else {
        policy.accumulate_gradient_direct(ws, samples.iter().copied(), &mut grad.values)?;
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalMode {
    /// Sample actions from the policy (the headline metric).
    Sample,
    /// Greedy action selection.
    Argmax,
}

/// Mean per-agent per-timestep reward over sampled evaluation episodes.
pub fn evaluate<R: Rng + ?Sized>(
    game: &GameConfig,
    policy: &PolicyState,
    episodes: usize,
    rng: &mut R,
    mode: EvalMode,
) -> Result<f64, TrainError> {
    let mut ws = policy.workspace();
    evaluate_with(game, policy, &mut ws, episodes, rng, mode)
}

fn evaluate_with<R: Rng + ?Sized>(
    game: &GameConfig,
    policy: &PolicyState,
    ws: &mut PolicyWorkspace,
    episodes: usize,
    rng: &mut R,
    mode: EvalMode,
) -> Result<f64, TrainError> {
    let n = game.n_agents;
    let horizon = game.effective_horizon();
    let shared = policy.agent_invariant();
    let mut obs = vec![0.0; game.obs_dim()];
    let mut probs_buf: Vec<f64> = Vec::new();
    let mut sum = 0.0;
    let mut count = 0usize;
    for _ in 0..episodes {
        let mut state = GameState::initial();
        for _ in 0..horizon {
            game::encode_observation_into(game, &state, &mut obs);
            let mut actions = Vec::with_capacity(n);
            for agent in 0..n {
                if agent == 0 || !shared {
                    let probs = policy.probs_into(ws, agent, &obs)?;
                    probs_buf.clear();
                    probs_buf.extend_from_slice(probs);
                }
                let action = match mode {
                    EvalMode::Sample => nn::sample_categorical(&probs_buf, rng)?,
                    EvalMode::Argmax => {
                        let mut best = 0;
                        for (i, &p) in probs_buf.iter().enumerate() {
                            if p > probs_buf[best] {
                                best = i;
                            }
                        }
                        best
                    }
                };
                actions.push(action);
            }
            let (next, rewards) = game::step(game, &state, &JointAction::new(actions))?;
            state = next;
            sum += rewards.iter().sum::<f64>();
            count += rewards.len();
        }
    }
    Ok(sum / count.max(1) as f64)
}

/// Diagnostics recorded at one evaluation boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub update: u64,
    pub eval_sampled: f64,
    pub eval_argmax: f64,
    pub conflict: Option<ConflictReport>,
    pub variance: Option<VarianceReport>,
    pub embed_distance: Option<f64>,
}

/// Full record of one seeded training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub config: TrainConfig,
    /// Mean training reward per update, length `total_steps`.
    pub train_reward: Vec<f64>,
    /// One record at update 0, at every eval-interval boundary, and at the
    /// final update.
    pub evals: Vec<EvalRecord>,
    pub final_policy: PolicyState,
}

/// Run the REINFORCE training loop: collect, compute returns, assemble the
/// gradient, SGD-update, and evaluate on schedule.
pub fn train(config: &TrainConfig) -> Result<TrainLog, TrainError> {
    config.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let dims = Dims::of_game(&config.game);
    let mut policy = policy::build(config.variant.clone(), dims, &mut rng)?;
    let mut ws = policy.workspace();

    let mut train_reward = Vec::with_capacity(config.total_steps as usize);
    let mut evals = Vec::new();
    let mut window: VecDeque<FlatGradient> = VecDeque::with_capacity(config.grad_window);

    let record_eval = |update: u64,
                       policy: &PolicyState,
                       ws: &mut PolicyWorkspace,
                       rng: &mut ChaCha12Rng,
                       window: &VecDeque<FlatGradient>,
                       with_diagnostics: bool|
     -> Result<EvalRecord, TrainError> {
        let eval_sampled = evaluate_with(
            &config.game,
            policy,
            ws,
            config.eval_episodes,
            rng,
            EvalMode::Sample,
        )?;
        let eval_argmax = evaluate_with(
            &config.game,
            policy,
            ws,
            config.eval_episodes,
            rng,
            EvalMode::Argmax,
        )?;
        let conflict = if with_diagnostics {
            let diag_batch =
                collect_batch_with(&config.game, policy, ws, config.batch_size, rng)?;
            let grads = diag::per_agent_gradients_with(&diag_batch, policy, ws, config.gamma)?;
            Some(diag::gradient_conflict(&grads)?)
        } else {
            None
        };
        let variance = if window.len() >= 2 {
            let grads: Vec<FlatGradient> = window.iter().cloned().collect();
            Some(diag::gradient_variance(&grads)?)
        } else {
            None
        };
        let embed_distance = if policy.variant().kind.is_hyper() {
            Some(policy::embedding_cosine_distance(policy)?.mean)
        } else {
            None
        };
        Ok(EvalRecord {
            update,
            eval_sampled,
            eval_argmax,
            conflict,
            variance,
            embed_distance,
        })
    };

    evals.push(record_eval(0, &policy, &mut ws, &mut rng, &window, false)?);

    for update in 1..=config.total_steps {
        // A numeric blow-up in an earlier update surfaces here as a
        // degenerate action distribution; report it as an abort rather
        // than a plain input error.
        let batch =
            match collect_batch_with(&config.game, &policy, &mut ws, config.batch_size, &mut rng) {
                Ok(batch) => batch,
                Err(TrainError::Nn(NnError::InvalidDistribution(_)))
                | Err(TrainError::Nn(NnError::NonFiniteInput(_)))
                | Err(TrainError::Policy(PolicyError::Nn(NnError::InvalidDistribution(_))))
                | Err(TrainError::Policy(PolicyError::Nn(NnError::NonFiniteInput(_)))) => {
                    return Err(TrainError::NonFinite {
                        update,
                        statistic: "policy distribution",
                    })
                }
                Err(e) => return Err(e),
            };
        let mean_reward = batch.mean_reward();
        if !mean_reward.is_finite() {
            return Err(TrainError::NonFinite {
                update,
                statistic: "training reward",
            });
        }
        train_reward.push(mean_reward);

        let ascent = policy_gradient_with(&batch, &policy, &mut ws, config.gamma, None)?;
        if !ascent.is_finite() {
            return Err(TrainError::NonFinite {
                update,
                statistic: "gradient",
            });
        }
        if window.len() == config.grad_window {
            window.pop_front();
        }
        window.push_back(ascent.clone());

        // REINFORCE maximises return; SGD minimises, so descend on -g.
        let mut loss_grad = ascent;
        loss_grad.scale(-1.0);
        policy.sgd_step(&loss_grad, config.lr)?;

        if update % config.eval_interval == 0 || update == config.total_steps {
            evals.push(record_eval(update, &policy, &mut ws, &mut rng, &window, true)?);
        }
    }

    Ok(TrainLog {
        config: config.clone(),
        train_reward,
        evals,
        final_policy: policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::GameKind;
    use crate::policy::VariantKind;

    fn spec_game(n: usize) -> GameConfig {
        GameConfig::new(GameKind::Specialisation, n).unwrap()
    }

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn tiny_policy(game: &GameConfig, seed: u64) -> PolicyState {
        policy::build(
            VariantSpec::direct(VariantKind::FuPs, 8),
            Dims::of_game(game),
            &mut rng(seed),
        )
        .unwrap()
    }

    #[test]
    fn batch_has_full_episode_shape() {
        let game = spec_game(2);
        let policy = tiny_policy(&game, 1);
        let batch = collect_batch(&game, &policy, 32, &mut rng(2)).unwrap();
        assert_eq!(batch.episodes.len(), 32);
        for ep in &batch.episodes {
            assert_eq!(ep.steps.len(), 10);
            for step in &ep.steps {
                assert_eq!(step.obs.len(), 4);
                assert_eq!(step.actions.len(), 2);
                assert_eq!(step.rewards.len(), 2);
                assert!(step.logprobs.iter().all(|&lp| lp.is_finite() && lp <= 0.0));
            }
        }
        assert_eq!(batch.n_samples(), 32 * 10 * 2);
    }

    #[test]
    fn batch_collection_is_deterministic() {
        let game = spec_game(2);
        let policy = tiny_policy(&game, 1);
        let a = collect_batch(&game, &policy, 8, &mut rng(7)).unwrap();
        let b = collect_batch(&game, &policy, 8, &mut rng(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn recorded_logprobs_match_recomputation() {
        let game = spec_game(3);
        let policy = policy::build(
            VariantSpec::direct(VariantKind::FuPsId, 8),
            Dims::of_game(&game),
            &mut rng(3),
        )
        .unwrap();
        let batch = collect_batch(&game, &policy, 4, &mut rng(4)).unwrap();
        for ep in &batch.episodes {
            for step in &ep.steps {
                for agent in 0..3 {
                    let probs = policy.action_distribution(agent, &step.obs).unwrap();
                    let recomputed = probs[step.actions[agent]].ln();
                    assert!((recomputed - step.logprobs[agent]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn returns_to_go_arithmetic() {
        let rewards = vec![vec![0.5, 0.5]; 10];
        let g = returns_to_go(&rewards, 1.0);
        assert!((g[0][0] - 5.0).abs() < 1e-12);
        assert!((g[9][0] - 0.5).abs() < 1e-12);

        let g0 = returns_to_go(&rewards, 0.0);
        for g_t in &g0 {
            assert_eq!(g_t, &vec![0.5, 0.5]);
        }

        let one_then_zero = vec![vec![1.0], vec![0.0], vec![0.0]];
        let g1 = returns_to_go(&one_then_zero, 1.0);
        assert_eq!(g1[0], vec![1.0]);
        assert_eq!(g1[1], vec![0.0]);
        assert_eq!(g1[2], vec![0.0]);
    }

    #[test]
    fn zero_returns_give_zero_gradient() {
        let game = spec_game(2);
        let policy = tiny_policy(&game, 5);
        let mut batch = collect_batch(&game, &policy, 2, &mut rng(6)).unwrap();
        for ep in &mut batch.episodes {
            for step in &mut ep.steps {
                step.rewards = vec![0.0, 0.0];
            }
        }
        let grad = policy_gradient(&batch, &policy, 1.0).unwrap();
        assert!(grad.values.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn hyper_gradient_matches_direct_accumulation() {
        let game = spec_game(2);
        for variant in [
            VariantSpec::hyper_linear(8, 2),
            VariantSpec::hyper_mlp(8, 2, 8),
        ] {
            let policy = policy::build(variant, Dims::of_game(&game), &mut rng(8)).unwrap();
            let batch = collect_batch(&game, &policy, 8, &mut rng(9)).unwrap();
            let factored = policy_gradient(&batch, &policy, 1.0).unwrap();

            // Oracle route: direct per-sample accumulation.
            let mut ws = policy.workspace();
            let mut samples = Vec::new();
            fill_weighted_samples(&batch, 1.0, 1.0 / 8.0, None, &mut samples);
            let mut direct = FlatGradient::zeros(Arc::clone(policy.layout()));
            policy
                .accumulate_gradient_direct(&mut ws, samples.iter().copied(), &mut direct.values)
                .unwrap();

            for (a, b) in factored.values.iter().zip(&direct.values) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn evaluate_hand_built_policies() {
        // Two deterministic agents on distinct actions score 1.0 in the
        // Specialisation game.
        let game = spec_game(2);
        let mut policy = policy::build(
            VariantSpec::direct(VariantKind::NoPs, 4),
            Dims::of_game(&game),
            &mut rng(10),
        )
        .unwrap();
        let mut flat = vec![0.0; policy.param_count()];
        // Output biases sit in the last n_actions entries of each block.
        let block = policy.param_count() / 2;
        flat[block - 2] = 25.0; // agent 0 -> action 0
        flat[2 * block - 1] = 25.0; // agent 1 -> action 1
        policy.set_flat(&flat).unwrap();
        let r = evaluate(&game, &policy, 50, &mut rng(11), EvalMode::Sample).unwrap();
        assert!((r - 1.0).abs() < 1e-12);

        // Identical deterministic policies in Synchronisation score 1.0.
        let sync = GameConfig::new(GameKind::Synchronisation, 2).unwrap();
        let mut shared = tiny_policy(&sync, 12);
        let mut flat = vec![0.0; shared.param_count()];
        let count = shared.param_count();
        flat[count - 2] = 25.0;
        shared.set_flat(&flat).unwrap();
        let r = evaluate(&sync, &shared, 50, &mut rng(13), EvalMode::Sample).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_eval_is_deterministic_and_greedy() {
        let game = spec_game(2);
        let mut policy = tiny_policy(&game, 20);
        // Mildly biased logits: sampling is noisy, argmax is not.
        let mut flat = vec![0.0; policy.param_count()];
        let count = policy.param_count();
        flat[count - 2] = 0.3;
        policy.set_flat(&flat).unwrap();
        let a = evaluate(&game, &policy, 20, &mut rng(21), EvalMode::Argmax).unwrap();
        let b = evaluate(&game, &policy, 20, &mut rng(22), EvalMode::Argmax).unwrap();
        // Greedy play of a shared policy is consensus: both agents pick
        // action 0 every step, which pays 0.5 in this game.
        assert_eq!(a, b);
        assert_eq!(a, 0.5);
    }

    #[test]
    fn evaluate_uniform_matches_exact_expectation() {
        let game = GameConfig::with_options(GameKind::Specialisation, 2, 2, 10, true).unwrap();
        let policy = tiny_policy(&game, 14);
        // A freshly built zero-bias net is not uniform, so force zero params.
        let mut policy = policy;
        let flat = vec![0.0; policy.param_count()];
        policy.set_flat(&flat).unwrap();
        let r = evaluate(&game, &policy, 10_000, &mut rng(15), EvalMode::Sample).unwrap();
        assert!((r - 0.75).abs() < 0.02, "uniform eval {r}");
    }

    #[test]
    fn zero_steps_training_only_initial_eval() {
        let game = spec_game(2);
        let mut config = TrainConfig::new(game, VariantSpec::direct(VariantKind::FuPs, 8), 1);
        config.total_steps = 0;
        let log = train(&config).unwrap();
        assert!(log.train_reward.is_empty());
        assert_eq!(log.evals.len(), 1);
        assert_eq!(log.evals[0].update, 0);
    }

    #[test]
    fn training_is_deterministic_and_bounded() {
        let game = spec_game(2);
        let mut config = TrainConfig::new(game, VariantSpec::direct(VariantKind::FuPs, 8), 99);
        config.total_steps = 50;
        config.eval_interval = 25;
        config.eval_episodes = 10;
        let a = train(&config).unwrap();
        let b = train(&config).unwrap();
        assert_eq!(a, b);
        // One initial record, one at 25, one at 50.
        assert_eq!(a.evals.len(), 3);
        for &r in &a.train_reward {
            assert!((0.5..=1.0).contains(&r), "reward {r} outside payoff range");
        }
    }

    #[test]
    fn gradient_estimator_is_unbiased_on_one_shot_game() {
        // Frozen policy on the 2x2 normal-form game: the Monte Carlo
        // estimator averaged over many fresh batches must converge to the
        // exact gradient (full enumeration of the 4 joint actions).
        let game = GameConfig::with_options(GameKind::Specialisation, 2, 2, 1, false).unwrap();
        let mut policy = tiny_policy(&game, 16);
        // Move off the symmetric point (the gradient vanishes at a uniform
        // shared policy in this game).
        let mut r = rng(18);
        let flat: Vec<f64> = (0..policy.param_count())
            .map(|_| 0.3 * nn::standard_normal(&mut r))
            .collect();
        policy.set_flat(&flat).unwrap();
        let obs = vec![0.0; 4];

        // Exact: sum over joint actions of P(a) * sum_i r_i(a) grad log pi(a_i).
        let mut exact = vec![0.0; policy.param_count()];
        let p = policy.action_distribution(0, &obs).unwrap();
        for a0 in 0..2 {
            for a1 in 0..2 {
                let prob = p[a0] * p[a1];
                let rewards =
                    game::payoff(&game, &JointAction::new(vec![a0, a1])).unwrap();
                for (agent, &action) in [a0, a1].iter().enumerate() {
                    let g = policy::logprob_gradient(&policy, agent, &obs, action).unwrap();
                    for (e, gv) in exact.iter_mut().zip(&g.values) {
                        *e += prob * rewards[agent] * gv;
                    }
                }
            }
        }

        let mut mc = vec![0.0; policy.param_count()];
        let n_batches = 50_000;
        let mut r = rng(17);
        for _ in 0..n_batches {
            let batch = collect_batch(&game, &policy, 4, &mut r).unwrap();
            let grad = policy_gradient(&batch, &policy, 1.0).unwrap();
            for (m, g) in mc.iter_mut().zip(&grad.values) {
                *m += g / n_batches as f64;
            }
        }

        let exact_norm: f64 = exact.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff_norm: f64 = exact
            .iter()
            .zip(&mc)
            .map(|(e, m)| (e - m) * (e - m))
            .sum::<f64>()
            .sqrt();
        assert!(
            diff_norm < 0.02 * exact_norm,
            "MC estimate off by {diff_norm} vs norm {exact_norm}"
        );
    }

    #[test]
    fn numeric_blowup_aborts_with_update_index() {
        // An absurd learning rate overflows the parameters after the first
        // update; the run must abort with a diagnostic record, not crash.
        let game = spec_game(2);
        let mut config = TrainConfig::new(game, VariantSpec::direct(VariantKind::FuPs, 8), 3);
        config.lr = 1e300;
        config.total_steps = 50;
        let err = train(&config).unwrap_err();
        assert!(
            matches!(err, TrainError::NonFinite { update, .. } if update >= 1),
            "expected a non-finite abort, got {err:?}"
        );
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let game = spec_game(2);
        let base = TrainConfig::new(game, VariantSpec::direct(VariantKind::FuPs, 8), 0);
        let mut c = base.clone();
        c.gamma = 1.5;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = base;
        c.lr = f64::NAN;
        assert!(c.validate().is_err());
    }
}
