//! Deep deterministic policy gradient: actor/critic with target copies, a
//! ring replay buffer, and the one-step update used after every episode.

use cimforge_core::error::{CoreError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::env::{ACTION_DIM, OBS_DIM};
use crate::nn::{soft_update, Adam, Cache, FinalInit, Grads, Head, Mlp};

pub const REPLAY_CAPACITY: usize = 2048;
pub const BATCH_SIZE: usize = 64;
/// Target-network EMA rate.
pub const TAU: f64 = 0.01;
/// Discount for bootstrapped targets within an episode. Rewards are terminal
/// (one per episode, written into every tuple), so no geometric decay.
pub const GAMMA_DISC: f64 = 1.0;
/// Exploration noise: starting scale and per-episode decay.
pub const SIGMA_0: f64 = 0.5;
pub const SIGMA_DECAY: f64 = 0.99;

/// Actor and critic Adam step sizes. The critic has to track a value surface
/// that moves by tens of reward units as exploration shifts, so it learns an
/// order of magnitude faster than the policy it teaches.
pub const ACTOR_LR: f64 = 3e-3;
pub const CRITIC_LR: f64 = 2e-2;

/// Huber transition point for the critic regression. Early episodes explore
/// far below the accuracy target and store rewards two orders of magnitude
/// larger than the rewards along the feasible ridge; a squared loss lets those
/// stale tuples dominate the critic for the whole run (the 2048-tuple buffer
/// never evicts them in a few hundred episodes). Capping the residual slope
/// keeps the fit accurate where the policy actually operates.
const HUBER_DELTA: f64 = 2.0;

/// Recency window for the mixed batch draw in [`Agent::train_step`], in
/// tuples (64 episodes of a five-layer model).
const RECENT_WINDOW: usize = 320;

/// One transition. `reward` is the episode's terminal reward (identical in
/// every tuple of the episode); `terminal` marks the last layer, whose target
/// does not bootstrap.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayTuple {
    pub obs: [f64; OBS_DIM],
    pub action: [f64; ACTION_DIM],
    pub reward: f64,
    pub next_obs: [f64; OBS_DIM],
    pub terminal: bool,
}

/// Fixed-capacity ring buffer.
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    items: Vec<ReplayTuple>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new() -> ReplayBuffer {
        ReplayBuffer { items: Vec::new(), next: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: ReplayTuple) {
        if self.items.len() < REPLAY_CAPACITY {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
            self.next = (self.next + 1) % REPLAY_CAPACITY;
        }
    }

    fn get(&self, i: usize) -> &ReplayTuple {
        &self.items[i]
    }

    /// Slot index of the `j`-th most recent tuple (`j = 0` is the newest).
    fn recent_slot(&self, j: usize) -> usize {
        debug_assert!(j < self.items.len());
        if self.items.len() < REPLAY_CAPACITY {
            self.items.len() - 1 - j
        } else {
            (self.next + REPLAY_CAPACITY - 1 - j) % REPLAY_CAPACITY
        }
    }
}

/// Losses reported by one training step: critic Huber loss and the actor
/// objective (negated mean Q, the quantity gradient descent minimizes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses {
    pub critic: f64,
    pub actor: f64,
}

/// The DDPG agent: online and target networks, optimizers, replay buffer,
/// and the RNG that drives exploration and batch sampling.
pub struct Agent {
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critic: Mlp,
    pub critic_target: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    pub buffer: ReplayBuffer,
    pub rng: ChaCha8Rng,
}

impl Agent {
    /// Fresh agent. The actor's final layer is zero-initialized, so the
    /// initial policy emits 0.5 for every action regardless of observation.
    pub fn new(seed: u64) -> Agent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = Mlp::new(&[OBS_DIM, 64, 64, ACTION_DIM], Head::Sigmoid, FinalInit::Zero, &mut rng);
        let critic =
            Mlp::new(&[OBS_DIM + ACTION_DIM, 64, 64, 1], Head::Linear, FinalInit::Uniform(3e-3), &mut rng);
        let actor_opt = Adam::new(&actor, ACTOR_LR);
        let critic_opt = Adam::new(&critic, CRITIC_LR);
        Agent {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            actor_opt,
            critic_opt,
            buffer: ReplayBuffer::new(),
            rng,
        }
    }

    /// Deterministic policy output.
    pub fn act(&self, obs: &[f64; OBS_DIM]) -> [f64; ACTION_DIM] {
        let y = self.actor.forward(obs);
        [y[0], y[1]]
    }

    /// Policy output plus Gaussian noise of scale `sigma`, truncated to the
    /// valid action interval.
    pub fn act_noisy(&mut self, obs: &[f64; OBS_DIM], sigma: f64) -> [f64; ACTION_DIM] {
        let mut a = self.act(obs);
        for v in &mut a {
            let z: f64 = self.rng.sample(StandardNormal);
            *v = (*v + sigma * z).clamp(0.0, 1.0);
        }
        a
    }

    /// Critic value for an observation/action pair.
    pub fn q_value(&self, obs: &[f64; OBS_DIM], action: &[f64; ACTION_DIM]) -> f64 {
        self.critic.forward(&concat(obs, action))[0]
    }

    /// One DDPG update on a sampled minibatch: critic regression toward
    /// `y = R + γ·(1−terminal)·Q'(o', π'(o'))`, actor ascent on `Q(o, π(o))`,
    /// then soft target updates.
    ///
    /// Half of each batch is drawn uniformly from the whole buffer, half from
    /// the [`RECENT_WINDOW`] newest tuples: within a few hundred episodes the
    /// buffer never fills, so early wide-noise episodes would otherwise keep
    /// an ever-growing majority and the critic would stay coarse exactly
    /// where the current policy operates.
    pub fn train_step(&mut self, batch_size: usize) -> Result<Losses> {
        if self.buffer.len() < batch_size {
            return Err(CoreError::validation(format!(
                "replay buffer holds {} tuples, need {batch_size}",
                self.buffer.len()
            )));
        }
        let window = self.buffer.len().min(RECENT_WINDOW);
        let idx: Vec<usize> = (0..batch_size)
            .map(|k| {
                if k % 2 == 0 {
                    self.rng.gen_range(0..self.buffer.len())
                } else {
                    let j = self.rng.gen_range(0..window);
                    self.buffer.recent_slot(j)
                }
            })
            .collect();
        let inv = 1.0 / batch_size as f64;

        // Scratch reused across samples: five network passes per sample make
        // per-call allocation the dominant cost otherwise.
        let mut xbuf = Vec::with_capacity(OBS_DIM + ACTION_DIM);
        let mut cache_a = Cache::new();
        let mut cache_b = Cache::new();
        let mut dz = Vec::new();
        let mut dx = Vec::new();

        // Critic update.
        let mut critic_grads = Grads::zeros_like(&self.critic);
        let mut critic_loss = 0.0;
        for &i in &idx {
            let t = self.buffer.get(i);
            let y = if t.terminal {
                t.reward
            } else {
                self.actor_target.forward_into(&t.next_obs, &mut cache_a);
                concat_into(&t.next_obs, cache_a.output(), &mut xbuf);
                self.critic_target.forward_into(&xbuf, &mut cache_b);
                t.reward + GAMMA_DISC * cache_b.output()[0]
            };
            concat_into(&t.obs, &t.action, &mut xbuf);
            self.critic.forward_into(&xbuf, &mut cache_a);
            let err = cache_a.output()[0] - y;
            critic_loss += huber(err) * inv;
            let dq = [err.clamp(-HUBER_DELTA, HUBER_DELTA) * inv];
            self.critic.backward_into(&cache_a, &dq, &mut critic_grads, &mut dz, &mut dx);
        }
        self.critic_opt.step(&mut self.critic, &critic_grads);

        // Actor update through the freshly updated critic.
        let mut actor_grads = Grads::zeros_like(&self.actor);
        let mut scratch = Grads::zeros_like(&self.critic);
        let mut dact = Vec::new();
        let mut actor_loss = 0.0;
        for &i in &idx {
            let t = self.buffer.get(i);
            self.actor.forward_into(&t.obs, &mut cache_a);
            concat_into(&t.obs, cache_a.output(), &mut xbuf);
            self.critic.forward_into(&xbuf, &mut cache_b);
            actor_loss -= cache_b.output()[0] * inv;
            // Maximize Q: minimize −Q. Only the critic's input gradient is
            // needed; its parameter gradients go to scratch and are dropped.
            self.critic.backward_into(&cache_b, &[-inv], &mut scratch, &mut dz, &mut dx);
            dact.clear();
            dact.extend_from_slice(&dx[OBS_DIM..]);
            self.actor.backward_into(&cache_a, &dact, &mut actor_grads, &mut dz, &mut dx);
        }
        self.actor_opt.step(&mut self.actor, &actor_grads);

        soft_update(&mut self.critic_target, &self.critic, TAU);
        soft_update(&mut self.actor_target, &self.actor, TAU);
        Ok(Losses { critic: critic_loss, actor: actor_loss })
    }
}

fn concat(obs: &[f64; OBS_DIM], action: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(OBS_DIM + ACTION_DIM);
    concat_into(obs, action, &mut x);
    x
}

fn concat_into(obs: &[f64; OBS_DIM], action: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(obs);
    out.extend_from_slice(action);
}

fn huber(err: f64) -> f64 {
    if err.abs() <= HUBER_DELTA {
        0.5 * err * err
    } else {
        HUBER_DELTA * (err.abs() - 0.5 * HUBER_DELTA)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled_agent(seed: u64, n: usize) -> Agent {
        let mut agent = Agent::new(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 99);
        for k in 0..n {
            let mut obs = [0.0; OBS_DIM];
            let mut next = [0.0; OBS_DIM];
            obs.iter_mut().for_each(|v| *v = rng.gen_range(0.0..1.0));
            next.iter_mut().for_each(|v| *v = rng.gen_range(0.0..1.0));
            agent.buffer.push(ReplayTuple {
                obs,
                action: [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)],
                reward: rng.gen_range(-50.0..100.0),
                next_obs: next,
                terminal: k % 5 == 4,
            });
        }
        agent
    }

    #[test]
    fn fresh_actor_emits_identical_actions_for_any_observation() {
        let agent = Agent::new(0);
        let a = agent.act(&[0.1; OBS_DIM]);
        let b = agent.act(&[0.9; OBS_DIM]);
        assert_eq!(a, [0.5, 0.5]);
        assert_eq!(a, b);
    }

    #[test]
    fn noisy_actions_stay_in_the_unit_square() {
        let mut agent = Agent::new(1);
        for _ in 0..200 {
            for v in agent.act_noisy(&[0.5; OBS_DIM], 0.5) {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn same_seed_gives_identical_noise_sequences() {
        let mut a = Agent::new(7);
        let mut b = Agent::new(7);
        for _ in 0..20 {
            assert_eq!(a.act_noisy(&[0.3; OBS_DIM], 0.4), b.act_noisy(&[0.3; OBS_DIM], 0.4));
        }
    }

    #[test]
    fn replay_buffer_wraps_at_capacity() {
        let mut buf = ReplayBuffer::new();
        let mk = |r: f64| ReplayTuple {
            obs: [0.0; OBS_DIM],
            action: [0.0; ACTION_DIM],
            reward: r,
            next_obs: [0.0; OBS_DIM],
            terminal: false,
        };
        for i in 0..REPLAY_CAPACITY + 10 {
            buf.push(mk(i as f64));
        }
        assert_eq!(buf.len(), REPLAY_CAPACITY);
        // The first ten slots were overwritten by the newest tuples.
        assert_eq!(buf.get(0).reward, REPLAY_CAPACITY as f64);
        assert_eq!(buf.get(9).reward, (REPLAY_CAPACITY + 9) as f64);
        assert_eq!(buf.get(10).reward, 10.0);
    }

    #[test]
    fn train_step_requires_a_full_batch() {
        let mut agent = filled_agent(2, BATCH_SIZE - 1);
        assert!(agent.train_step(BATCH_SIZE).is_err());
        agent.buffer.push(agent.buffer.get(0).clone());
        assert!(agent.train_step(BATCH_SIZE).is_ok());
    }

    #[test]
    fn critic_loss_is_finite_and_nonnegative_on_random_buffers() {
        for seed in 0..5 {
            let mut agent = filled_agent(seed, 300);
            for _ in 0..10 {
                let losses = agent.train_step(BATCH_SIZE).unwrap();
                assert!(losses.critic.is_finite() && losses.critic >= 0.0);
                assert!(losses.actor.is_finite());
            }
        }
    }

    /// With a critic that outputs a constant regardless of input, dQ/da = 0,
    /// so the actor update is a no-op.
    #[test]
    fn constant_critic_freezes_the_actor() {
        let mut agent = filled_agent(3, 200);
        for layer in &mut agent.critic.layers {
            layer.w.iter_mut().for_each(|w| *w = 0.0);
            layer.b.iter_mut().for_each(|b| *b = 0.0);
        }
        agent.critic.layers.last_mut().unwrap().b[0] = 17.0;
        // Freeze the critic optimizer too, so the critic stays constant
        // through the step (its gradient toward targets is nonzero).
        agent.critic_opt.lr = 0.0;
        let before = agent.actor.clone();
        agent.train_step(BATCH_SIZE).unwrap();
        assert_eq!(agent.actor, before);
    }

    /// Critic parameter gradients match central finite differences of the
    /// batch Huber loss within 1e-4 relative error on a fixed small batch.
    #[test]
    fn critic_gradient_matches_finite_differences() {
        let mut agent = filled_agent(4, 80);
        // Rewards are scaled so half the batch lands just above the Huber
        // knee (linear branch) and half below it (quadratic branch), while
        // the total loss stays O(10): central differences on a large loss
        // lose significant digits to cancellation.
        let batch: Vec<ReplayTuple> = (0..8)
            .map(|i| {
                let mut t = agent.buffer.get(i * 7).clone();
                t.reward *= if i % 2 == 0 { 0.02 } else { 0.2 };
                t
            })
            .collect();
        // Freeze targets: y depends only on target networks, which FD leaves
        // untouched, so the loss is a pure function of the online critic.
        let targets: Vec<f64> = batch
            .iter()
            .map(|t| {
                if t.terminal {
                    t.reward
                } else {
                    let a = agent.actor_target.forward(&t.next_obs);
                    t.reward + agent.critic_target.forward(&concat(&t.next_obs, &a))[0]
                }
            })
            .collect();
        let loss = |critic: &Mlp| -> f64 {
            batch
                .iter()
                .zip(&targets)
                .map(|(t, y)| huber(critic.forward(&concat(&t.obs, &t.action))[0] - y))
                .sum::<f64>()
                / batch.len() as f64
        };

        let mut grads = Grads::zeros_like(&agent.critic);
        let inv = 1.0 / batch.len() as f64;
        let mut branches = [0usize; 2];
        for (t, y) in batch.iter().zip(&targets) {
            let (q, cache) = agent.critic.forward_cached(&concat(&t.obs, &t.action));
            branches[usize::from((q[0] - y).abs() > HUBER_DELTA)] += 1;
            let d = (q[0] - y).clamp(-HUBER_DELTA, HUBER_DELTA);
            agent.critic.backward(&cache, &[d * inv], &mut grads);
        }
        assert!(branches[0] > 0 && branches[1] > 0, "both Huber branches must be exercised: {branches:?}");

        let h = 1e-5;
        let mut checked = 0usize;
        for l in 0..agent.critic.layers.len() {
            let n = agent.critic.layers[l].w.len();
            for i in (0..n).step_by(17) {
                let orig = agent.critic.layers[l].w[i];
                agent.critic.layers[l].w[i] = orig + h;
                let up = loss(&agent.critic);
                agent.critic.layers[l].w[i] = orig - h;
                let dn = loss(&agent.critic);
                agent.critic.layers[l].w[i] = orig;
                let fd = (up - dn) / (2.0 * h);
                let an = grads.w[l][i];
                assert!(
                    (an - fd).abs() <= 1e-4 * an.abs().max(fd.abs()).max(1e-5),
                    "layer {l} w[{i}]: analytic {an} vs fd {fd}"
                );
                checked += 1;
            }
        }
        assert!(checked > 100, "only {checked} parameters checked");
    }

    #[test]
    fn target_networks_track_online_networks() {
        let mut agent = filled_agent(5, 200);
        let drift = |a: &Mlp, b: &Mlp| -> f64 {
            a.layers
                .iter()
                .zip(&b.layers)
                .flat_map(|(x, y)| x.w.iter().zip(&y.w))
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        };
        for _ in 0..50 {
            agent.train_step(BATCH_SIZE).unwrap();
        }
        // Targets moved off their initial copies but lag the online nets.
        assert!(drift(&agent.critic_target, &agent.critic) > 0.0);
        // A full-rate update (τ = 1) collapses the lag to f64 roundoff.
        let mut frozen = agent.critic_target.clone();
        soft_update(&mut frozen, &agent.critic, 1.0);
        assert!(drift(&frozen, &agent.critic) < 1e-12);
    }
}
