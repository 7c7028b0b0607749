//! The search driver: per-episode rollouts, DDPG updates, the reward
//! bookkeeping, and a brute-force reference optimizer for the synthetic
//! oracle.

use cimforge_core::cost::{
    self, layer_latency, speedup_and_score, ConstraintMode, LayerDesc, QuantConfig,
};
use cimforge_core::error::{CoreError, Result};
use cimforge_core::target::{CimTarget, Latency};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ddpg::{Agent, ReplayTuple, BATCH_SIZE, SIGMA_0, SIGMA_DECAY};
use crate::env::{accuracy_target, action_to_bits, reward, LayerSpace, Role, ACTION_DIM, OBS_DIM};
use crate::oracle::{AccuracyOracle, SyntheticOracle};

/// DDPG updates applied after each episode once the replay buffer holds a
/// full batch. One rollout contributes `num_layers` tuples, so the policy
/// and critic take several hundred gradient steps per oracle consultation —
/// the oracle (3 QAT epochs per episode on real models) is the scarce
/// resource, not the updates.
pub const TRAIN_STEPS_PER_EPISODE: usize = 300;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchParams {
    pub episodes: usize,
    pub seed: u64,
    pub constraint_mode: ConstraintMode,
    /// Tolerated accuracy drop below the 8-bit baseline, in percentage
    /// points.
    pub acc_loss: f64,
}

impl Default for SearchParams {
    fn default() -> SearchParams {
        SearchParams {
            episodes: 600,
            seed: 0,
            constraint_mode: ConstraintMode::None,
            acc_loss: 5.0,
        }
    }
}

/// Outcome of one episode rollout.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub config: QuantConfig,
    pub reward: f64,
    pub acc_q: f64,
    pub t_q: Latency,
}

/// One line of the reward history: the noisy exploration rollout plus the
/// deterministic policy's configuration and reward after that episode's
/// updates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub bits: Vec<(u8, u8)>,
    pub acc_q: f64,
    pub t_q: Latency,
    pub reward: f64,
    pub greedy_bits: Vec<(u8, u8)>,
    pub greedy_reward: f64,
}

/// Full search report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: QuantConfig,
    pub best_reward: f64,
    pub best_acc: f64,
    pub best_latency: Latency,
    pub acc_8b: f64,
    pub acc_target: f64,
    pub t_8b: Latency,
    /// Speedup and S/AL score of the best configuration over the 8-bit
    /// baseline.
    pub speedup: f64,
    pub score: f64,
    pub history: Vec<EpisodeRecord>,
}

/// Rolls the agent through all layers once. With `noise = Some(sigma)` the
/// actions are perturbed by the exploration Gaussian; with `None` the rollout
/// is the deterministic policy and consumes no RNG. Either way the actions are
/// decoded and constraint-projected into a configuration, the oracle and cost
/// model score it, and the single episode reward is written into every stored
/// tuple when `store` is set.
fn rollout(
    agent: &mut Agent,
    space: &LayerSpace,
    layers: &[LayerDesc],
    oracle: &dyn AccuracyOracle,
    target: &CimTarget,
    mode: ConstraintMode,
    noise: Option<f64>,
    store: bool,
    acc_t: f64,
    t_8b: Latency,
) -> Result<EpisodeOutcome> {
    let n = space.num_layers();
    let mut steps: Vec<([f64; OBS_DIM], [f64; ACTION_DIM], [f64; OBS_DIM], bool)> =
        Vec::with_capacity(n);
    let mut bits = Vec::with_capacity(n);
    let mut prev = [0.0; ACTION_DIM];
    for k in 0..n {
        let obs = space.observation(k, prev);
        let action = match noise {
            Some(sigma) => agent.act_noisy(&obs, sigma),
            None => agent.act(&obs),
        };
        bits.push((
            action_to_bits(action[0], k, n, Role::Weight, mode, target),
            action_to_bits(action[1], k, n, Role::Activation, mode, target),
        ));
        let terminal = k + 1 == n;
        let next_obs = if terminal { [0.0; OBS_DIM] } else { space.observation(k + 1, action) };
        steps.push((obs, action, next_obs, terminal));
        prev = action;
    }

    let config = QuantConfig { bits: bits.clone(), constraint_mode: mode };
    config.satisfies_constraints(target)?;
    let acc_q = oracle.evaluate(&bits)?;
    let t_q = cost::total_latency(layers, &config, target)?;
    let r = reward(acc_q, acc_t, t_8b, t_q);
    if store {
        for (obs, action, next_obs, terminal) in steps {
            agent.buffer.push(ReplayTuple { obs, action, reward: r, next_obs, terminal });
        }
    }
    Ok(EpisodeOutcome { config, reward: r, acc_q, t_q })
}

/// One exploration episode: noisy actions at scale `sigma`, tuples stored.
pub fn run_episode(
    agent: &mut Agent,
    space: &LayerSpace,
    layers: &[LayerDesc],
    oracle: &dyn AccuracyOracle,
    target: &CimTarget,
    mode: ConstraintMode,
    sigma: f64,
    acc_t: f64,
    t_8b: Latency,
) -> Result<EpisodeOutcome> {
    rollout(agent, space, layers, oracle, target, mode, Some(sigma), true, acc_t, t_8b)
}

/// Scores the current deterministic policy: same decoding as `run_episode`
/// but with noise-free actions, no RNG consumption and nothing stored, so the
/// replay buffer holds exploration data only. Runs once per episode so the
/// best-config tracking also sees the policy itself, not only its noisy
/// perturbations.
pub fn greedy_rollout(
    agent: &mut Agent,
    space: &LayerSpace,
    layers: &[LayerDesc],
    oracle: &dyn AccuracyOracle,
    target: &CimTarget,
    mode: ConstraintMode,
    acc_t: f64,
    t_8b: Latency,
) -> Result<EpisodeOutcome> {
    rollout(agent, space, layers, oracle, target, mode, None, false, acc_t, t_8b)
}

/// Runs the full search: `episodes` rollouts with decaying exploration noise
/// and post-episode DDPG updates, returning the best configuration seen and
/// the complete history. Deterministic in `(params.seed, inputs)`.
pub fn search(
    layers: &[LayerDesc],
    oracle: &dyn AccuracyOracle,
    target: &CimTarget,
    params: &SearchParams,
) -> Result<SearchResult> {
    if layers.len() != oracle.num_layers() {
        return Err(CoreError::validation(format!(
            "cost model has {} layers but the oracle expects {}",
            layers.len(),
            oracle.num_layers()
        )));
    }
    if layers.is_empty() {
        return Err(CoreError::validation("cannot search over zero layers"));
    }
    let space = LayerSpace::new(layers);
    let mut agent = Agent::new(params.seed);
    let acc_8b = oracle.acc_8b();
    let acc_t = accuracy_target(acc_8b, params.acc_loss);
    let t_8b = cost::total_latency(layers, &QuantConfig::uniform(layers.len(), 8), target)?;

    let mut history = Vec::with_capacity(params.episodes);
    let mut best: Option<(f64, QuantConfig, f64, Latency)> = None;
    for episode in 0..params.episodes {
        let sigma = SIGMA_0 * SIGMA_DECAY.powi(episode as i32);
        let out = run_episode(
            &mut agent, &space, layers, oracle, target, params.constraint_mode, sigma, acc_t, t_8b,
        )?;
        if agent.buffer.len() >= BATCH_SIZE {
            for _ in 0..TRAIN_STEPS_PER_EPISODE {
                agent.train_step(BATCH_SIZE)?;
            }
        }
        let greedy = greedy_rollout(
            &mut agent, &space, layers, oracle, target, params.constraint_mode, acc_t, t_8b,
        )?;
        for out in [&out, &greedy] {
            if best.as_ref().map_or(true, |(r, ..)| out.reward > *r) {
                best = Some((out.reward, out.config.clone(), out.acc_q, out.t_q));
            }
        }
        history.push(EpisodeRecord {
            episode,
            bits: out.config.bits,
            acc_q: out.acc_q,
            t_q: out.t_q,
            reward: out.reward,
            greedy_bits: greedy.config.bits,
            greedy_reward: greedy.reward,
        });
    }

    let (best_reward, best, best_acc, best_latency) = best.expect("episodes > 0");
    let (speedup, score) = speedup_and_score(t_8b, best_latency, acc_8b, best_acc);
    Ok(SearchResult {
        best,
        best_reward,
        best_acc,
        best_latency,
        acc_8b,
        acc_target: acc_t,
        t_8b,
        speedup,
        score,
        history,
    })
}

/// Per-layer candidate bit pairs under a constraint mode, ascending, so the
/// brute-force tie-break (lexicographically smallest) is well defined.
fn layer_choices(
    layer_index: usize,
    num_layers: usize,
    mode: ConstraintMode,
    target: &CimTarget,
) -> Vec<(u8, u8)> {
    if mode.pins_io() && (layer_index == 0 || layer_index + 1 == num_layers) {
        return vec![(8, 8)];
    }
    let w_choices: Vec<u8> = if mode.restricts_weights() {
        (1..=target.b_max / target.r_cell)
            .map(|k| k * target.r_cell)
            .filter(|&b| b >= target.b_min)
            .collect()
    } else {
        (target.b_min..=target.b_max).collect()
    };
    let mut out = Vec::with_capacity(w_choices.len() * 7);
    for &w in &w_choices {
        for a in target.b_min..=target.b_max {
            out.push((w, a));
        }
    }
    out
}

/// Exhaustively enumerates the constrained configuration space and returns
/// the reward-optimal configuration (ties broken toward the lexicographically
/// smallest bit vector). Accuracy is accumulated in the same operation order
/// as [`SyntheticOracle::evaluate`], so the returned reward equals the reward
/// the search loop would compute for the same configuration, bit for bit.
pub fn brute_force_best(
    layers: &[LayerDesc],
    oracle: &SyntheticOracle,
    target: &CimTarget,
    mode: ConstraintMode,
    acc_loss: f64,
) -> Result<(QuantConfig, f64)> {
    if layers.len() != oracle.num_layers() {
        return Err(CoreError::validation(format!(
            "cost model has {} layers but the oracle expects {}",
            layers.len(),
            oracle.num_layers()
        )));
    }
    let n = layers.len();
    let acc_8b = oracle.acc_8b();
    let acc_t = accuracy_target(acc_8b, acc_loss);
    let t_8b = cost::total_latency(layers, &QuantConfig::uniform(n, 8), target)?;

    // Per-layer tables: choices with their accuracy penalty and exact
    // latency, so the inner enumeration is pure accumulation.
    let tables: Vec<Vec<(u8, u8, f64, u128)>> = (0..n)
        .map(|l| {
            layer_choices(l, n, mode, target)
                .into_iter()
                .map(|(w, a)| {
                    (w, a, oracle.penalty(l, w, a), layer_latency(&layers[l], w, a, target).units())
                })
                .collect()
        })
        .collect();

    struct Best {
        reward: f64,
        bits: Vec<(u8, u8)>,
    }

    fn dfs(
        tables: &[Vec<(u8, u8, f64, u128)>],
        level: usize,
        acc: f64,
        lat: u128,
        stack: &mut Vec<(u8, u8)>,
        acc_t: f64,
        t_8b: Latency,
        best: &mut Option<Best>,
    ) {
        if level == tables.len() {
            let r = reward(acc, acc_t, t_8b, Latency::from_units(lat));
            let better = match best {
                None => true,
                Some(b) => r > b.reward || (r == b.reward && stack[..] < b.bits[..]),
            };
            if better {
                *best = Some(Best { reward: r, bits: stack.clone() });
            }
            return;
        }
        for &(w, a, pen, lu) in &tables[level] {
            stack.push((w, a));
            dfs(tables, level + 1, acc - pen, lat + lu, stack, acc_t, t_8b, best);
            stack.pop();
        }
    }

    // Parallelize over the first layer's choices; each task enumerates the
    // rest depth-first. The reduction is deterministic: highest reward wins,
    // ties go to the lexicographically smallest bit vector.
    let winner = tables[0]
        .par_iter()
        .map(|&(w, a, pen, lu)| {
            let mut best = None;
            let mut stack = vec![(w, a)];
            dfs(&tables[1..], 0, acc_8b - pen, lu, &mut stack, acc_t, t_8b, &mut best);
            best.expect("non-empty choice tables")
        })
        .reduce_with(|x, y| {
            if y.reward > x.reward || (y.reward == x.reward && y.bits < x.bits) {
                y
            } else {
                x
            }
        })
        .ok_or_else(|| CoreError::validation("cannot optimize over zero layers"))?;

    Ok((QuantConfig { bits: winner.bits, constraint_mode: mode }, winner.reward))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::synthetic_layers;

    fn setup(n: usize, seed: u64) -> (Vec<LayerDesc>, SyntheticOracle, CimTarget) {
        (synthetic_layers(n, seed), SyntheticOracle::new(seed, n), CimTarget::reference())
    }

    #[test]
    fn episode_reward_equals_the_oracle_closed_form() {
        let (layers, oracle, target) = setup(3, 4);
        let space = LayerSpace::new(&layers);
        let mut agent = Agent::new(0);
        let t_8b =
            cost::total_latency(&layers, &QuantConfig::uniform(3, 8), &target).unwrap();
        let acc_t = accuracy_target(oracle.acc_8b(), 5.0);
        let out = run_episode(
            &mut agent, &space, &layers, &oracle, &target, ConstraintMode::None, 0.5, acc_t, t_8b,
        )
        .unwrap();
        let acc = oracle.evaluate(&out.config.bits).unwrap();
        let t_q = cost::total_latency(&layers, &out.config, &target).unwrap();
        assert_eq!(out.reward, reward(acc, acc_t, t_8b, t_q));
        assert_eq!(agent.buffer.len(), 3);
    }

    #[test]
    fn zero_noise_fresh_agent_gives_every_layer_the_same_bits() {
        let (layers, oracle, target) = setup(4, 5);
        let space = LayerSpace::new(&layers);
        let mut agent = Agent::new(9);
        let t_8b =
            cost::total_latency(&layers, &QuantConfig::uniform(4, 8), &target).unwrap();
        let out = run_episode(
            &mut agent, &space, &layers, &oracle, &target, ConstraintMode::None, 0.0, 80.0, t_8b,
        )
        .unwrap();
        // sigmoid(0) = 0.5 → round(2 + 0.5·6) = 5 for every layer.
        assert!(out.config.bits.iter().all(|&b| b == (5, 5)), "{:?}", out.config.bits);
    }

    #[test]
    fn emitted_configs_satisfy_every_constraint_mode() {
        let target = CimTarget::reference();
        for mode in
            [ConstraintMode::None, ConstraintMode::InputOutput, ConstraintMode::Weight, ConstraintMode::Both]
        {
            let (layers, oracle, _) = setup(4, 6);
            let space = LayerSpace::new(&layers);
            let mut agent = Agent::new(11);
            let t_8b =
                cost::total_latency(&layers, &QuantConfig::uniform(4, 8), &target).unwrap();
            for _ in 0..20 {
                let out = run_episode(
                    &mut agent, &space, &layers, &oracle, &target, mode, 0.5, 85.0, t_8b,
                )
                .unwrap();
                out.config.satisfies_constraints(&target).unwrap();
            }
        }
    }

    #[test]
    fn search_is_deterministic_and_running_max_is_monotone() {
        let (layers, oracle, target) = setup(3, 7);
        let params = SearchParams { episodes: 40, seed: 3, ..SearchParams::default() };
        let a = search(&layers, &oracle, &target, &params).unwrap();
        let b = search(&layers, &oracle, &target, &params).unwrap();
        assert_eq!(a.history.len(), 40);
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.bits, y.bits);
            assert_eq!(x.reward.to_bits(), y.reward.to_bits());
            assert_eq!(x.greedy_bits, y.greedy_bits);
            assert_eq!(x.greedy_reward.to_bits(), y.greedy_reward.to_bits());
        }
        assert_eq!(a.best, b.best);
        let mut run_max = f64::NEG_INFINITY;
        let mut best_seen = f64::NEG_INFINITY;
        for rec in &a.history {
            run_max = run_max.max(rec.reward).max(rec.greedy_reward);
            assert!(run_max >= best_seen);
            best_seen = run_max;
        }
        assert_eq!(a.best_reward, run_max);
    }

    #[test]
    fn brute_force_matches_naive_enumeration_on_two_layers() {
        let (layers, oracle, target) = setup(2, 8);
        for mode in [ConstraintMode::None, ConstraintMode::Weight] {
            let (best_cfg, best_r) =
                brute_force_best(&layers, &oracle, &target, mode, 5.0).unwrap();
            // Naive reference: iterate every config through the public
            // oracle/cost-model path.
            let t_8b =
                cost::total_latency(&layers, &QuantConfig::uniform(2, 8), &target).unwrap();
            let acc_t = accuracy_target(oracle.acc_8b(), 5.0);
            let mut naive: Option<(f64, Vec<(u8, u8)>)> = None;
            for c0 in layer_choices(0, 2, mode, &target) {
                for c1 in layer_choices(1, 2, mode, &target) {
                    let bits = vec![c0, c1];
                    let acc = oracle.evaluate(&bits).unwrap();
                    let cfg = QuantConfig { bits: bits.clone(), constraint_mode: mode };
                    let t_q = cost::total_latency(&layers, &cfg, &target).unwrap();
                    let r = reward(acc, acc_t, t_8b, t_q);
                    if naive.as_ref().map_or(true, |(br, bb)| r > *br || (r == *br && bits < *bb))
                    {
                        naive = Some((r, bits));
                    }
                }
            }
            let (naive_r, naive_bits) = naive.unwrap();
            assert_eq!(best_r, naive_r, "mode {mode:?}");
            assert_eq!(best_cfg.bits, naive_bits, "mode {mode:?}");
        }
    }

    #[test]
    fn brute_force_respects_constraints() {
        let (layers, oracle, target) = setup(3, 9);
        for mode in [ConstraintMode::InputOutput, ConstraintMode::Weight, ConstraintMode::Both] {
            let (cfg, _) = brute_force_best(&layers, &oracle, &target, mode, 5.0).unwrap();
            cfg.satisfies_constraints(&target).unwrap();
        }
    }

    #[test]
    fn best_reward_is_reproduced_by_the_search_arithmetic() {
        let (layers, oracle, target) = setup(3, 10);
        let (cfg, r) =
            brute_force_best(&layers, &oracle, &target, ConstraintMode::None, 5.0).unwrap();
        let t_8b = cost::total_latency(&layers, &QuantConfig::uniform(3, 8), &target).unwrap();
        let acc_t = accuracy_target(oracle.acc_8b(), 5.0);
        let acc = oracle.evaluate(&cfg.bits).unwrap();
        let t_q = cost::total_latency(&layers, &cfg, &target).unwrap();
        assert_eq!(r, reward(acc, acc_t, t_8b, t_q));
    }

    #[test]
    fn search_report_serializes_with_exact_latencies() {
        let (layers, oracle, target) = setup(2, 11);
        let params = SearchParams { episodes: 5, seed: 1, ..SearchParams::default() };
        let result = search(&layers, &oracle, &target, &params).unwrap();
        let json = serde_json::to_string_pretty(&result).unwrap();
        let parsed: SearchResult = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed.best, result.best);
        assert_eq!(parsed.t_8b, result.t_8b);
        assert_eq!(parsed.history.len(), 5);
    }
}
