//! Specialisation and Synchronisation games.
//!
//! Both games put `n` agents over `A` discrete actions. Specialisation pays
//! an agent 1.0 for a unique action and `1/k` when `k` agents share its
//! action; Synchronisation pays `1/(n - k + 1)`, reaching 1.0 only under
//! full consensus. The temporal extension repeats the stage game for a fixed
//! horizon, with the previous joint action as the observable state.

use serde::{Deserialize, Serialize};

/// Which stage game is being played.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameKind {
    Specialisation,
    Synchronisation,
}

impl GameKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GameKind::Specialisation => "spec",
            GameKind::Synchronisation => "sync",
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum GameError {
    #[error("invalid game config: {0}")]
    InvalidConfig(String),
    #[error("joint action has {got} entries, expected {expected}")]
    WrongAgentCount { got: usize, expected: usize },
    #[error("action {action} of agent {agent} out of range (n_actions = {n_actions})")]
    ActionOutOfRange {
        agent: usize,
        action: usize,
        n_actions: usize,
    },
    #[error("cannot step a terminal state (t = {t}, horizon = {horizon})")]
    TerminalState { t: usize, horizon: usize },
    #[error("alpha = {0} outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("distribution of agent {agent} sums to {sum}, expected 1 within 1e-9")]
    DistributionNotNormalised { agent: usize, sum: f64 },
    #[error("distribution of agent {agent} has {got} entries, expected {expected}")]
    DistributionWrongLength {
        agent: usize,
        got: usize,
        expected: usize,
    },
    #[error("enumeration of {outcomes} joint actions exceeds the budget of {budget}")]
    EnumerationTooLarge { outcomes: u128, budget: u128 },
}

/// Configuration of one game instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameConfig {
    pub kind: GameKind,
    pub n_agents: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub temporal: bool,
}

impl GameConfig {
    /// Standard instance: `n` agents, `n` actions, 10-step temporal episodes.
    pub fn new(kind: GameKind, n_agents: usize) -> Result<Self, GameError> {
        Self::with_options(kind, n_agents, n_agents, 10, true)
    }

    pub fn with_options(
        kind: GameKind,
        n_agents: usize,
        n_actions: usize,
        horizon: usize,
        temporal: bool,
    ) -> Result<Self, GameError> {
        if n_agents < 2 {
            return Err(GameError::InvalidConfig(format!(
                "n_agents = {n_agents}, need at least 2"
            )));
        }
        if n_actions < 2 {
            return Err(GameError::InvalidConfig(format!(
                "n_actions = {n_actions}, need at least 2"
            )));
        }
        if horizon < 1 {
            return Err(GameError::InvalidConfig("horizon must be >= 1".into()));
        }
        Ok(GameConfig {
            kind,
            n_agents,
            n_actions,
            horizon,
            temporal,
        })
    }

    /// Episode length actually played: non-temporal games are one-shot.
    pub fn effective_horizon(&self) -> usize {
        if self.temporal {
            self.horizon
        } else {
            1
        }
    }

    /// Length of the observation vector: one one-hot block per agent.
    pub fn obs_dim(&self) -> usize {
        self.n_agents * self.n_actions
    }

    fn check_action(&self, a: &JointAction) -> Result<(), GameError> {
        if a.actions.len() != self.n_agents {
            return Err(GameError::WrongAgentCount {
                got: a.actions.len(),
                expected: self.n_agents,
            });
        }
        for (agent, &action) in a.actions.iter().enumerate() {
            if action >= self.n_actions {
                return Err(GameError::ActionOutOfRange {
                    agent,
                    action,
                    n_actions: self.n_actions,
                });
            }
        }
        Ok(())
    }
}

/// One action per agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointAction {
    pub actions: Vec<usize>,
}

impl JointAction {
    pub fn new(actions: Vec<usize>) -> Self {
        JointAction { actions }
    }
}

impl From<Vec<usize>> for JointAction {
    fn from(actions: Vec<usize>) -> Self {
        JointAction::new(actions)
    }
}

/// State of the temporal game: the previous joint action and the timestep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GameState {
    pub prev_joint_action: Option<JointAction>,
    pub t: usize,
}

impl GameState {
    pub fn initial() -> Self {
        GameState {
            prev_joint_action: None,
            t: 0,
        }
    }

    pub fn is_terminal(&self, config: &GameConfig) -> bool {
        self.t >= config.effective_horizon()
    }
}

/// Per-agent rewards, each in (0, 1].
pub type RewardVector = Vec<f64>;

/// Stage-game payoff for a joint action.
///
/// Specialisation: 1.0 for a unique action, otherwise `1/k` where `k` agents
/// share the action. Synchronisation: `1/(n - k + 1)`.
pub fn payoff(config: &GameConfig, a: &JointAction) -> Result<RewardVector, GameError> {
    config.check_action(a)?;
    let mut counts = vec![0usize; config.n_actions];
    for &action in &a.actions {
        counts[action] += 1;
    }
    let n = config.n_agents as f64;
    let rewards = a
        .actions
        .iter()
        .map(|&action| {
            let k = counts[action] as f64;
            match config.kind {
                GameKind::Specialisation => 1.0 / k,
                GameKind::Synchronisation => 1.0 / (n - k + 1.0),
            }
        })
        .collect();
    Ok(rewards)
}

/// Advance the temporal game by one joint action.
pub fn step(
    config: &GameConfig,
    state: &GameState,
    a: &JointAction,
) -> Result<(GameState, RewardVector), GameError> {
    if state.is_terminal(config) {
        return Err(GameError::TerminalState {
            t: state.t,
            horizon: config.effective_horizon(),
        });
    }
    let rewards = payoff(config, a)?;
    let next = GameState {
        prev_joint_action: Some(a.clone()),
        t: state.t + 1,
    };
    Ok((next, rewards))
}

/// Encode the state as concatenated one-hot blocks of the previous joint
/// action (length `n * A`); all zeros at t = 0. Identical for every agent.
pub fn encode_observation(config: &GameConfig, state: &GameState, _agent: usize) -> Vec<f64> {
    let mut obs = vec![0.0; config.obs_dim()];
    encode_observation_into(config, state, &mut obs);
    obs
}

/// In-place variant of [`encode_observation`] for rollout loops.
pub fn encode_observation_into(config: &GameConfig, state: &GameState, obs: &mut [f64]) {
    debug_assert_eq!(obs.len(), config.obs_dim());
    obs.fill(0.0);
    if let Some(prev) = &state.prev_joint_action {
        for (agent, &action) in prev.actions.iter().enumerate() {
            obs[agent * config.n_actions + action] = 1.0;
        }
    }
}

/// True iff no single agent can strictly improve its stage payoff by a
/// unilateral deviation.
pub fn is_pure_nash(config: &GameConfig, a: &JointAction) -> Result<bool, GameError> {
    let base = payoff(config, a)?;
    let mut probe = a.clone();
    for agent in 0..config.n_agents {
        let original = probe.actions[agent];
        for alt in 0..config.n_actions {
            if alt == original {
                continue;
            }
            probe.actions[agent] = alt;
            let deviated = payoff(config, &probe)?;
            if deviated[agent] > base[agent] + 1e-15 {
                return Ok(false);
            }
        }
        probe.actions[agent] = original;
    }
    Ok(true)
}

/// Expected per-agent return of a shared memoryless policy in the two-player
/// Specialisation game, as a function of the shared probability of action 0.
/// Closed form `-(alpha - 0.5)^2 + 0.75`, maximised at alpha = 0.5.
pub fn shared_policy_expected_return(alpha: f64) -> Result<f64, GameError> {
    if !(0.0..=1.0).contains(&alpha) || !alpha.is_finite() {
        return Err(GameError::AlphaOutOfRange(alpha));
    }
    Ok(-(alpha - 0.5) * (alpha - 0.5) + 0.75)
}

const ENUMERATION_BUDGET: u128 = 1_000_000;

/// Exact per-agent expected stage reward under independent per-agent action
/// distributions, by enumerating all `A^n` joint actions.
pub fn brute_force_expected_reward(
    config: &GameConfig,
    distributions: &[Vec<f64>],
) -> Result<Vec<f64>, GameError> {
    if distributions.len() != config.n_agents {
        return Err(GameError::WrongAgentCount {
            got: distributions.len(),
            expected: config.n_agents,
        });
    }
    for (agent, dist) in distributions.iter().enumerate() {
        if dist.len() != config.n_actions {
            return Err(GameError::DistributionWrongLength {
                agent,
                got: dist.len(),
                expected: config.n_actions,
            });
        }
        let sum: f64 = dist.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(GameError::DistributionNotNormalised { agent, sum });
        }
    }
    let outcomes = (config.n_actions as u128).pow(config.n_agents as u32);
    if outcomes > ENUMERATION_BUDGET {
        return Err(GameError::EnumerationTooLarge {
            outcomes,
            budget: ENUMERATION_BUDGET,
        });
    }

    let mut expected = vec![0.0; config.n_agents];
    let mut joint = JointAction::new(vec![0; config.n_agents]);
    loop {
        let prob: f64 = joint
            .actions
            .iter()
            .zip(distributions)
            .map(|(&a, dist)| dist[a])
            .product();
        if prob > 0.0 {
            let rewards = payoff(config, &joint)?;
            for (e, r) in expected.iter_mut().zip(&rewards) {
                *e += prob * r;
            }
        }
        // Odometer increment over the joint action space.
        let mut pos = 0;
        loop {
            if pos == config.n_agents {
                return Ok(expected);
            }
            joint.actions[pos] += 1;
            if joint.actions[pos] < config.n_actions {
                break;
            }
            joint.actions[pos] = 0;
            pos += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(n: usize) -> GameConfig {
        GameConfig::new(GameKind::Specialisation, n).unwrap()
    }

    fn sync(n: usize) -> GameConfig {
        GameConfig::new(GameKind::Synchronisation, n).unwrap()
    }

    #[test]
    fn two_player_spec_payoff_matrix() {
        let g = spec(2);
        let distinct = payoff(&g, &vec![0, 1].into()).unwrap();
        assert_eq!(distinct, vec![1.0, 1.0]);
        let matched = payoff(&g, &vec![0, 0].into()).unwrap();
        assert_eq!(matched, vec![0.5, 0.5]);
    }

    #[test]
    fn sync_full_consensus_pays_one() {
        let g = sync(5);
        let r = payoff(&g, &vec![0; 5].into()).unwrap();
        assert_eq!(r, vec![1.0; 5]);
    }

    #[test]
    fn spec_shared_action_counts() {
        // Two agents on action 0 split the unit payoff; the unique ones keep it.
        let g = spec(4);
        let r = payoff(&g, &vec![0, 0, 1, 2].into()).unwrap();
        assert_eq!(r, vec![0.5, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn sync_partial_consensus_hyperbolic() {
        let g = sync(5);
        let r = payoff(&g, &vec![0, 0, 0, 1, 2].into()).unwrap();
        for &reward in &r[..3] {
            assert!((reward - 1.0 / 3.0).abs() < 1e-15);
        }
        for &reward in &r[3..] {
            assert!((reward - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn payoff_rejects_out_of_range_action() {
        let g = spec(2);
        let err = payoff(&g, &vec![0, 2].into()).unwrap_err();
        assert!(matches!(err, GameError::ActionOutOfRange { agent: 1, .. }));
    }

    #[test]
    fn step_records_previous_action_and_advances_time() {
        let g = spec(2);
        let s0 = GameState::initial();
        let a = JointAction::new(vec![1, 0]);
        let (s1, r) = step(&g, &s0, &a).unwrap();
        assert_eq!(s1.prev_joint_action, Some(a.clone()));
        assert_eq!(s1.t, 1);
        assert_eq!(r, payoff(&g, &a).unwrap());
    }

    #[test]
    fn ten_steps_then_terminal() {
        let g = spec(2);
        let a = JointAction::new(vec![0, 1]);
        let mut s = GameState::initial();
        for _ in 0..10 {
            assert!(!s.is_terminal(&g));
            let (next, _) = step(&g, &s, &a).unwrap();
            s = next;
        }
        assert!(s.is_terminal(&g));
        assert!(matches!(
            step(&g, &s, &a),
            Err(GameError::TerminalState { t: 10, horizon: 10 })
        ));
    }

    #[test]
    fn non_temporal_is_one_shot() {
        let g = GameConfig::with_options(GameKind::Specialisation, 2, 2, 10, false).unwrap();
        assert_eq!(g.effective_horizon(), 1);
        let a = JointAction::new(vec![0, 1]);
        let (s1, _) = step(&g, &GameState::initial(), &a).unwrap();
        assert!(s1.is_terminal(&g));
    }

    #[test]
    fn observation_is_concatenated_one_hots() {
        let g = spec(2);
        let s = GameState {
            prev_joint_action: Some(JointAction::new(vec![1, 0])),
            t: 1,
        };
        assert_eq!(encode_observation(&g, &s, 0), vec![0.0, 1.0, 1.0, 0.0]);
        // Identical for every agent.
        assert_eq!(encode_observation(&g, &s, 1), vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn observation_zero_at_start() {
        let g = spec(4);
        let s = GameState::initial();
        let obs = encode_observation(&g, &s, 0);
        assert_eq!(obs.len(), 16);
        assert!(obs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nash_equilibria_match_game_structure() {
        let g2 = spec(2);
        assert!(is_pure_nash(&g2, &vec![0, 1].into()).unwrap());
        assert!(!is_pure_nash(&g2, &vec![0, 0].into()).unwrap());
        let s2 = sync(2);
        assert!(!is_pure_nash(&s2, &vec![0, 1].into()).unwrap());
        assert!(is_pure_nash(&s2, &vec![0, 0].into()).unwrap());
        // All-distinct joint actions are equilibria of Specialisation.
        let g3 = spec(3);
        assert!(is_pure_nash(&g3, &vec![2, 0, 1].into()).unwrap());
    }

    #[test]
    fn shared_policy_return_closed_form() {
        assert_eq!(shared_policy_expected_return(0.5).unwrap(), 0.75);
        assert_eq!(shared_policy_expected_return(0.0).unwrap(), 0.5);
        assert_eq!(shared_policy_expected_return(1.0).unwrap(), 0.5);
        assert!(shared_policy_expected_return(1.5).is_err());
        assert!(shared_policy_expected_return(-0.1).is_err());
    }

    #[test]
    fn brute_force_matches_closed_form_on_alpha_grid() {
        let g = spec(2);
        for i in 0..=10 {
            let alpha = i as f64 / 10.0;
            let dist = vec![alpha, 1.0 - alpha];
            let expected =
                brute_force_expected_reward(&g, &[dist.clone(), dist.clone()]).unwrap();
            let closed = shared_policy_expected_return(alpha).unwrap();
            for e in expected {
                assert!(
                    (e - closed).abs() < 1e-12,
                    "alpha={alpha}: {e} vs {closed}"
                );
            }
        }
    }

    #[test]
    fn brute_force_deterministic_profiles() {
        let g = sync(2);
        let point = vec![1.0, 0.0];
        let r = brute_force_expected_reward(&g, &[point.clone(), point]).unwrap();
        assert_eq!(r, vec![1.0, 1.0]);

        let g = spec(2);
        let r =
            brute_force_expected_reward(&g, &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(r, vec![1.0, 1.0]);
    }

    #[test]
    fn brute_force_validates_inputs() {
        let g = spec(2);
        assert!(matches!(
            brute_force_expected_reward(&g, &[vec![0.6, 0.6], vec![0.5, 0.5]]),
            Err(GameError::DistributionNotNormalised { agent: 0, .. })
        ));
        let big = GameConfig::with_options(GameKind::Specialisation, 12, 12, 1, false).unwrap();
        let uniform = vec![vec![1.0 / 12.0; 12]; 12];
        assert!(matches!(
            brute_force_expected_reward(&big, &uniform),
            Err(GameError::EnumerationTooLarge { .. })
        ));
    }

    proptest! {
        #[test]
        fn payoff_ranges_and_uniqueness(n in 2usize..6, seed in 0u64..500) {
            let mut s = seed;
            let mut next = || {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 33) as usize
            };
            let actions: Vec<usize> = (0..n).map(|_| next() % n).collect();
            let mut counts = vec![0usize; n];
            for &a in &actions {
                counts[a] += 1;
            }

            for kind in [GameKind::Specialisation, GameKind::Synchronisation] {
                let g = GameConfig::new(kind, n).unwrap();
                let r = payoff(&g, &actions.clone().into()).unwrap();
                for (agent, &reward) in r.iter().enumerate() {
                    prop_assert!(reward >= 1.0 / n as f64 - 1e-15);
                    prop_assert!(reward <= 1.0 + 1e-15);
                    let unique = counts[actions[agent]] == 1;
                    let full = counts[actions[agent]] == n;
                    match kind {
                        GameKind::Specialisation => {
                            prop_assert_eq!(reward == 1.0, unique)
                        }
                        GameKind::Synchronisation => prop_assert_eq!(reward == 1.0, full),
                    }
                }
            }
        }

        #[test]
        fn payoff_is_permutation_equivariant(n in 2usize..6, seed in 0u64..500) {
            let mut s = seed;
            let mut next = || {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 33) as usize
            };
            let actions: Vec<usize> = (0..n).map(|_| next() % n).collect();
            // Rotate agent indices by one.
            let rotated: Vec<usize> = (0..n).map(|i| actions[(i + 1) % n]).collect();
            for kind in [GameKind::Specialisation, GameKind::Synchronisation] {
                let g = GameConfig::new(kind, n).unwrap();
                let r = payoff(&g, &actions.clone().into()).unwrap();
                let rr = payoff(&g, &rotated.clone().into()).unwrap();
                for i in 0..n {
                    prop_assert_eq!(r[(i + 1) % n], rr[i]);
                }
            }
        }

        #[test]
        fn permutation_actions_are_spec_nash(n in 2usize..5) {
            let g = GameConfig::new(GameKind::Specialisation, n).unwrap();
            let all_distinct: Vec<usize> = (0..n).rev().collect();
            prop_assert!(is_pure_nash(&g, &all_distinct.into()).unwrap());
            let s = GameConfig::new(GameKind::Synchronisation, n).unwrap();
            for action in 0..n {
                prop_assert!(is_pure_nash(&s, &vec![action; n].into()).unwrap());
            }
        }
    }
}
