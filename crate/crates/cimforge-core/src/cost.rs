//! Analytical latency model for crossbar CIM execution.
//!
//! Weight-stationary execution of one layer costs `N_write` tile-programming
//! operations and `N_mvm` analog MVM cycles:
//!
//! ```text
//! N_write = ⌈(2·M_l/M) · ⌈w_bit/r_cell⌉⌉ · ⌈N_l/N⌉
//! N_mvm   = V_l · N_write · ⌈a_bit/r_dac⌉
//! T       = Σ_l r_repeat_l · (N_write_l·t_write + N_mvm_l·t_mvm)
//! ```
//!
//! The factor 2 accounts for the differential (positive/negative) column
//! pairs; the inner ceiling is the per-weight slice count and the outer
//! ceiling packs slice columns into physical column groups. All latency math
//! is exact (see [`Latency`]). The module also builds the per-layer latency
//! lookup table consulted by precision search, and the speedup / S/AL score.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::target::{CimTarget, Latency};

/// Kind of a CIM-eligible layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv2D,
    Dense,
    MatMul,
}

/// Convolution dimensions needed to express the layer as a GeMM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvParams {
    pub c_in: u64,
    pub c_out: u64,
    pub k_h: u64,
    pub k_w: u64,
    pub h_out: u64,
    pub w_out: u64,
}

/// GeMM view of one CIM layer: `M_l` output columns, `N_l` reduction rows,
/// `V_l` input vectors per execution, repeated `r_repeat` times (e.g. once
/// per attention head).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub id: String,
    pub kind: LayerKind,
    pub m_l: u64,
    pub n_l: u64,
    pub v_l: u64,
    pub r_repeat: u64,
}

impl LayerDesc {
    pub fn new(id: impl Into<String>, kind: LayerKind, m_l: u64, n_l: u64, v_l: u64) -> LayerDesc {
        LayerDesc { id: id.into(), kind, m_l, n_l, v_l, r_repeat: 1 }
    }
}

/// Maps convolution dimensions onto GeMM dimensions:
/// `(M_l, N_l, V_l) = (C_out, C_in·K_H·K_W, H_out·W_out)`.
pub fn gemm_dims(conv: &ConvParams) -> (u64, u64, u64) {
    assert!(
        conv.c_in >= 1
            && conv.c_out >= 1
            && conv.k_h >= 1
            && conv.k_w >= 1
            && conv.h_out >= 1
            && conv.w_out >= 1,
        "conv dimensions must all be >= 1: {conv:?}"
    );
    (conv.c_out, conv.c_in * conv.k_h * conv.k_w, conv.h_out * conv.w_out)
}

fn check_bits(name: &str, bits: u8) {
    assert!((1..=8).contains(&bits), "{name} must be in 1..=8, got {bits}");
}

/// Number of tile writes to program one layer's weights, from raw GeMM dims.
pub fn n_write_dims(m_l: u64, n_l: u64, w_bit: u8, target: &CimTarget) -> u64 {
    check_bits("w_bit", w_bit);
    let slices = target.weight_slices(w_bit) as u128;
    let m = target.cols_m as u128;
    let n = target.rows_n as u128;
    // ⌈(2·M_l/M)·S⌉: the slice count is an integer, so the inner ceiling is S
    // itself and the outer ceiling packs 2·M_l·S unit columns into M-wide
    // physical groups.
    let col_groups = (2 * m_l as u128 * slices).div_ceil(m);
    let row_tiles = (n_l as u128).div_ceil(n);
    u64::try_from(col_groups * row_tiles).expect("n_write overflow")
}

/// Number of tile writes to program one layer's weights (Eq. 7).
pub fn n_write(layer: &LayerDesc, w_bit: u8, target: &CimTarget) -> u64 {
    n_write_dims(layer.m_l, layer.n_l, w_bit, target)
}

/// Number of analog MVM cycles to execute one layer once (Eq. 9).
pub fn n_mvm(layer: &LayerDesc, w_bit: u8, a_bit: u8, target: &CimTarget) -> u64 {
    check_bits("a_bit", a_bit);
    layer.v_l * n_write(layer, w_bit, target) * target.input_planes(a_bit)
}

/// Exact latency of one layer under one bit-width assignment, including the
/// layer's repeat factor.
pub fn layer_latency(layer: &LayerDesc, w_bit: u8, a_bit: u8, target: &CimTarget) -> Latency {
    let writes = n_write(layer, w_bit, target) as u128;
    let mvms = n_mvm(layer, w_bit, a_bit, target) as u128;
    (target.t_write.scale(writes) + target.t_mvm.scale(mvms)).scale(layer.r_repeat as u128)
}

/// Hardware-aware constraint mode for mixed-precision search (§V-B style):
/// `InputOutput` pins the first and last layer to 8 bits, `Weight` restricts
/// weight widths to multiples of the cell resolution, `Both` applies both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    #[default]
    None,
    InputOutput,
    Weight,
    Both,
}

impl ConstraintMode {
    pub fn pins_io(self) -> bool {
        matches!(self, ConstraintMode::InputOutput | ConstraintMode::Both)
    }

    pub fn restricts_weights(self) -> bool {
        matches!(self, ConstraintMode::Weight | ConstraintMode::Both)
    }
}

/// A full mixed-precision configuration: `(w_bit, a_bit)` per CIM layer, in
/// layer order, plus the constraint mode it was produced under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct QuantConfig {
    /// `(w_bit, a_bit)` for each CIM layer, in the layer-list order.
    pub bits: Vec<(u8, u8)>,
    pub constraint_mode: ConstraintMode,
}

impl QuantConfig {
    pub fn uniform(num_layers: usize, bits: u8) -> QuantConfig {
        QuantConfig { bits: vec![(bits, bits); num_layers], constraint_mode: ConstraintMode::None }
    }

    /// Checks the constraint-mode invariants against a target.
    pub fn satisfies_constraints(&self, target: &CimTarget) -> Result<()> {
        let last = self.bits.len().saturating_sub(1);
        for (i, &(w, a)) in self.bits.iter().enumerate() {
            for (name, b) in [("w_bit", w), ("a_bit", a)] {
                if b < target.b_min || b > target.b_max {
                    return Err(CoreError::validation(format!(
                        "layer {i}: {name}={b} outside [{}, {}]",
                        target.b_min, target.b_max
                    )));
                }
            }
            if self.constraint_mode.pins_io() && (i == 0 || i == last) && (w != 8 || a != 8) {
                return Err(CoreError::validation(format!(
                    "layer {i}: input/output layers must be 8-bit, got w={w} a={a}"
                )));
            }
            if self.constraint_mode.restricts_weights() && w % target.r_cell != 0 {
                return Err(CoreError::validation(format!(
                    "layer {i}: w_bit={w} is not a multiple of r_cell={}",
                    target.r_cell
                )));
            }
        }
        Ok(())
    }
}

/// Total execution latency of a layer list under a configuration (Eq. 6),
/// exact in 10⁻⁶ µs units.
pub fn total_latency(
    layers: &[LayerDesc],
    config: &QuantConfig,
    target: &CimTarget,
) -> Result<Latency> {
    if config.bits.len() != layers.len() {
        return Err(CoreError::validation(format!(
            "config assigns bits to {} layers but the model has {} CIM layers",
            config.bits.len(),
            layers.len()
        )));
    }
    Ok(layers
        .iter()
        .zip(&config.bits)
        .map(|(layer, &(w, a))| layer_latency(layer, w, a, target))
        .sum())
}

/// Per-layer latency lookup table over every (w_bit, a_bit) combination in
/// `[b_min, b_max]²`. Entry values equal single-layer [`total_latency`]
/// (repeat factor included), so summing lookups reproduces Eq. 6 exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencyLut {
    pub b_min: u8,
    pub b_max: u8,
    pub layer_ids: Vec<String>,
    /// `entries[layer][ (w-b_min)*(b_max-b_min+1) + (a-b_min) ]`.
    pub entries: Vec<Vec<Latency>>,
}

impl LatencyLut {
    pub fn axis_len(&self) -> usize {
        (self.b_max - self.b_min + 1) as usize
    }

    pub fn lookup(&self, layer_index: usize, w_bit: u8, a_bit: u8) -> Latency {
        let k = self.axis_len();
        let wi = (w_bit - self.b_min) as usize;
        let ai = (a_bit - self.b_min) as usize;
        self.entries[layer_index][wi * k + ai]
    }

    /// Total latency of a config by summing table lookups.
    pub fn total(&self, config: &QuantConfig) -> Result<Latency> {
        if config.bits.len() != self.entries.len() {
            return Err(CoreError::validation(format!(
                "config has {} layers, LUT has {}",
                config.bits.len(),
                self.entries.len()
            )));
        }
        Ok(config
            .bits
            .iter()
            .enumerate()
            .map(|(l, &(w, a))| self.lookup(l, w, a))
            .sum())
    }

    /// Renders the table as CSV with columns `layer_id,w_bit,a_bit,latency_us`.
    /// `comment` lines (e.g. the run manifest) are prepended with `#`.
    pub fn to_csv(&self, comment: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(c) = comment {
            for line in c.lines() {
                out.push_str("# ");
                out.push_str(line);
                out.push('\n');
            }
        }
        out.push_str("layer_id,w_bit,a_bit,latency_us\n");
        for (l, id) in self.layer_ids.iter().enumerate() {
            for w in self.b_min..=self.b_max {
                for a in self.b_min..=self.b_max {
                    out.push_str(&format!("{id},{w},{a},{}\n", self.lookup(l, w, a).as_us_string()));
                }
            }
        }
        out
    }
}

/// Builds the latency LUT for a layer list.
pub fn build_lut(layers: &[LayerDesc], target: &CimTarget) -> LatencyLut {
    let axis = target.bit_axis();
    let entries = layers
        .iter()
        .map(|layer| {
            let mut per_layer = Vec::with_capacity(axis.len() * axis.len());
            for &w in &axis {
                for &a in &axis {
                    per_layer.push(layer_latency(layer, w, a, target));
                }
            }
            per_layer
        })
        .collect();
    LatencyLut {
        b_min: target.b_min,
        b_max: target.b_max,
        layer_ids: layers.iter().map(|l| l.id.clone()).collect(),
        entries,
    }
}

/// Absolute-accuracy-loss floor for the S/AL score, in percentage points.
/// Eq. 10 is undefined at zero loss, so the loss magnitude is floored here.
pub const S_AL_EPSILON: f64 = 0.001;

/// Speedup and S/AL score relative to the 8-bit baseline (Eq. 10):
/// `speedup = T_8b/T_q`, `s_al = speedup / max(|acc_q - acc_8b|, ε)`.
pub fn speedup_and_score(t_8b: Latency, t_q: Latency, acc_8b: f64, acc_q: f64) -> (f64, f64) {
    assert!(t_q != Latency::ZERO, "speedup_and_score requires T_q > 0");
    let speedup = t_8b.units() as f64 / t_q.units() as f64;
    let loss = (acc_q - acc_8b).abs().max(S_AL_EPSILON);
    (speedup, speedup / loss)
}
