//! The layer-wise search environment: observation encoding, action decoding
//! with constraint projection, and the reward function.

use cimforge_core::cost::{ConstraintMode, LayerDesc, LayerKind};
use cimforge_core::quant::round_half_away;
use cimforge_core::target::{CimTarget, Latency};

/// Observation layout: `[k/K, one-hot kind (3), log M, log N, log V,
/// previous weight action, previous activation action]`, every feature
/// min-max normalized into `[0, 1]` over the model's layers.
pub const OBS_DIM: usize = 9;
/// Actions are `(weight, activation)` levels in `[0, 1]²`.
pub const ACTION_DIM: usize = 2;

/// Reward hyperparameters: accuracy-shortfall slope, speedup gain, and
/// accuracy-surplus bonus.
pub const ALPHA: f64 = 10.0;
pub const BETA: f64 = 100.0;
pub const GAMMA_ACC: f64 = 0.1;

/// Lowest accuracy the search tolerates: `acc_8b − acc_loss`.
pub fn accuracy_target(acc_8b: f64, acc_loss: f64) -> f64 {
    acc_8b - acc_loss
}

/// Episode reward. Below the accuracy target the penalty is linear in the
/// shortfall; at or above it the reward pays for speedup over the 8-bit
/// baseline plus a small bonus for surplus accuracy. Latencies enter as the
/// exact unit counts, so `reward(t, t, …)` sees a ratio of exactly 1.
pub fn reward(acc_q: f64, acc_t: f64, t_8b: Latency, t_q: Latency) -> f64 {
    if acc_q < acc_t {
        -ALPHA * (acc_t - acc_q)
    } else {
        BETA * (t_8b.units() as f64 / t_q.units() as f64 - 1.0) + GAMMA_ACC * (acc_q - acc_t)
    }
}

/// Which half of the action pair a bit width is decoded from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Weight,
    Activation,
}

/// Decodes a continuous action level into a bit width and projects it onto
/// the active constraints: `b = round(b_min + a·(b_max−b_min))`, then weight
/// bits are rounded to the nearest multiple of the cell resolution (ties
/// upward, clamped to `[r_cell, b_max]`), and finally first/last layers are
/// pinned to 8 bits, which overrides the weight rounding.
pub fn action_to_bits(
    a: f64,
    layer_index: usize,
    num_layers: usize,
    role: Role,
    mode: ConstraintMode,
    target: &CimTarget,
) -> u8 {
    let span = f64::from(target.b_max - target.b_min);
    let mut b = round_half_away(f64::from(target.b_min) + a.clamp(0.0, 1.0) * span) as u8;
    if mode.restricts_weights() && role == Role::Weight {
        let rc = u32::from(target.r_cell);
        let k = ((2 * u32::from(b) + rc) / (2 * rc)).clamp(1, u32::from(target.b_max) / rc);
        b = (k * rc) as u8;
    }
    if mode.pins_io() && (layer_index == 0 || layer_index + 1 == num_layers) {
        b = 8;
    }
    b
}

/// Precomputed observation normalization for one model's CIM layers.
#[derive(Debug, Clone)]
pub struct LayerSpace {
    num_layers: usize,
    kinds: Vec<LayerKind>,
    /// Min-max normalized `[log M, log N, log V]` per layer.
    logs: Vec<[f64; 3]>,
}

impl LayerSpace {
    pub fn new(layers: &[LayerDesc]) -> LayerSpace {
        assert!(!layers.is_empty(), "layer space needs at least one layer");
        let raw: Vec<[f64; 3]> = layers
            .iter()
            .map(|l| [(l.m_l as f64).ln(), (l.n_l as f64).ln(), (l.v_l as f64).ln()])
            .collect();
        let mut logs = vec![[0.0; 3]; layers.len()];
        for f in 0..3 {
            let lo = raw.iter().map(|r| r[f]).fold(f64::INFINITY, f64::min);
            let hi = raw.iter().map(|r| r[f]).fold(f64::NEG_INFINITY, f64::max);
            for (out, r) in logs.iter_mut().zip(&raw) {
                // A dimension constant across layers carries no information;
                // park it mid-range.
                out[f] = if hi > lo { (r[f] - lo) / (hi - lo) } else { 0.5 };
            }
        }
        LayerSpace { num_layers: layers.len(), kinds: layers.iter().map(|l| l.kind).collect(), logs }
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    /// Observation for 0-based layer `k`, given the previous layer's action
    /// (zeros for the first layer).
    pub fn observation(&self, k: usize, prev: [f64; ACTION_DIM]) -> [f64; OBS_DIM] {
        assert!(k < self.num_layers);
        let mut obs = [0.0; OBS_DIM];
        obs[0] = (k + 1) as f64 / self.num_layers as f64;
        let kind_slot = match self.kinds[k] {
            LayerKind::Conv2D => 1,
            LayerKind::Dense => 2,
            LayerKind::MatMul => 3,
        };
        obs[kind_slot] = 1.0;
        obs[4..7].copy_from_slice(&self.logs[k]);
        obs[7] = prev[0];
        obs[8] = prev[1];
        obs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cimforge_core::target::CimTarget;

    fn dense(id: &str, m: u64, n: u64, v: u64) -> LayerDesc {
        LayerDesc::new(id, LayerKind::Dense, m, n, v)
    }

    #[test]
    fn accuracy_target_examples() {
        assert_eq!(accuracy_target(90.0, 5.0), 85.0);
        assert_eq!(accuracy_target(88.0, 0.0), 88.0);
        assert!((accuracy_target(71.2, 5.0) - 66.2).abs() < 1e-12);
    }

    #[test]
    fn reward_examples() {
        let t = Latency::from_us_str("100").unwrap();
        let half = Latency::from_us_str("50").unwrap();
        // Accuracy shortfall of 5 points.
        assert_eq!(reward(65.0, 70.0, t, t), -50.0);
        // Exact boundary: both branches give zero.
        assert_eq!(reward(70.0, 70.0, t, t), 0.0);
        // Double speedup with 2 points of surplus accuracy.
        assert!((reward(72.0, 70.0, t, half) - 100.2).abs() < 1e-9);
    }

    #[test]
    fn reward_is_continuous_at_the_boundary() {
        let t = Latency::from_us_str("10").unwrap();
        let below = reward(70.0 - 1e-9, 70.0, t, t);
        let at = reward(70.0, 70.0, t, t);
        assert!(below < 0.0 && below > -1e-6);
        assert_eq!(at, 0.0);
    }

    #[test]
    fn action_decoding_spans_the_bit_range() {
        let t = CimTarget::reference();
        let n = 4;
        assert_eq!(action_to_bits(0.0, 1, n, Role::Weight, ConstraintMode::None, &t), 2);
        assert_eq!(action_to_bits(1.0, 1, n, Role::Weight, ConstraintMode::None, &t), 8);
        assert_eq!(action_to_bits(0.5, 1, n, Role::Weight, ConstraintMode::None, &t), 5);
        // 5 rounds down to 4 under the weight constraint (distance 1 vs 3).
        assert_eq!(action_to_bits(0.5, 1, n, Role::Weight, ConstraintMode::Weight, &t), 4);
        // Activations are never snapped to cell-resolution multiples.
        assert_eq!(action_to_bits(0.5, 1, n, Role::Activation, ConstraintMode::Weight, &t), 5);
    }

    #[test]
    fn weight_rounding_ties_go_upward() {
        let t = CimTarget::reference(); // r_cell = 4
        // Proposed 7 → nearest multiples 4 and 8, distance 3 vs 1 → 8.
        assert_eq!(action_to_bits(5.0 / 6.0, 1, 4, Role::Weight, ConstraintMode::Weight, &t), 8);
        // Proposed 6 → equidistant between 4 and 8 → up to 8.
        assert_eq!(action_to_bits(4.0 / 6.0, 1, 4, Role::Weight, ConstraintMode::Weight, &t), 8);
        // Proposed 2 and 3 → snapped up to the minimum multiple 4.
        assert_eq!(action_to_bits(0.0, 1, 4, Role::Weight, ConstraintMode::Weight, &t), 4);
        let mut t2 = CimTarget::reference();
        t2.r_cell = 2;
        // Proposed 5 with r_cell=2 → tie between 4 and 6 → 6.
        assert_eq!(action_to_bits(0.5, 1, 4, Role::Weight, ConstraintMode::Weight, &t2), 6);
    }

    #[test]
    fn io_pinning_wins_over_weight_rounding() {
        let t = CimTarget::reference();
        for mode in [ConstraintMode::InputOutput, ConstraintMode::Both] {
            for role in [Role::Weight, Role::Activation] {
                assert_eq!(action_to_bits(0.0, 0, 5, role, mode, &t), 8);
                assert_eq!(action_to_bits(0.0, 4, 5, role, mode, &t), 8);
                assert_ne!(action_to_bits(0.0, 2, 5, role, mode, &t), 8);
            }
        }
        // A single-layer model is both first and last.
        assert_eq!(
            action_to_bits(0.3, 0, 1, Role::Weight, ConstraintMode::InputOutput, &t),
            8
        );
    }

    #[test]
    fn observations_are_normalized_into_the_unit_interval() {
        let layers = vec![
            dense("a", 64, 27, 1024),
            dense("b", 128, 576, 256),
            dense("c", 10, 128, 1),
        ];
        let space = LayerSpace::new(&layers);
        for k in 0..3 {
            let obs = space.observation(k, [0.3, 0.9]);
            for (i, v) in obs.iter().enumerate() {
                assert!((0.0..=1.0).contains(v), "feature {i} = {v}");
            }
            assert_eq!(obs[7..9], [0.3, 0.9]);
        }
        // Log features span exactly [0, 1] across the model.
        let col: Vec<f64> = (0..3).map(|k| space.observation(k, [0.0; 2])[4]).collect();
        assert_eq!(col.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
        assert_eq!(col.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
    }

    #[test]
    fn constant_dimensions_sit_mid_range() {
        let layers = vec![dense("a", 32, 16, 8), dense("b", 64, 16, 4)];
        let space = LayerSpace::new(&layers);
        // N is 16 for both layers → normalized to 0.5 everywhere.
        assert_eq!(space.observation(0, [0.0; 2])[5], 0.5);
        assert_eq!(space.observation(1, [0.0; 2])[5], 0.5);
    }

    #[test]
    fn kind_one_hot_uses_distinct_slots() {
        let layers = vec![
            LayerDesc::new("c", LayerKind::Conv2D, 8, 27, 64),
            LayerDesc::new("d", LayerKind::Dense, 10, 32, 1),
            LayerDesc::new("m", LayerKind::MatMul, 4, 48, 4),
        ];
        let space = LayerSpace::new(&layers);
        for (k, slot) in [(0usize, 1usize), (1, 2), (2, 3)] {
            let obs = space.observation(k, [0.0; 2]);
            for s in 1..=3 {
                assert_eq!(obs[s], if s == slot { 1.0 } else { 0.0 });
            }
        }
    }
}
