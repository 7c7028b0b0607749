//! Weight-stationary loop-nest schedule for CIM layers.
//!
//! Every lowered layer executes the same canonical nest, outermost to
//! innermost:
//!
//! 1. `outer_col_tile` — physical column groups: unit columns (logical
//!    column x weight slice x polarity) are packed `M` to a group;
//! 2. `outer_row_tile` — ⌈N_l/N⌉ row tiles;
//! 3. `weight_slice` — digit slices recombined by the host shift-add;
//! 4. `input_vec` — the V_l input vectors;
//! 5. `input_bit` — ⌈a_bit/r_DAC⌉ serial bit planes.
//!
//! Tile writes are hoisted above `input_vec`: one write per
//! (col-group, row-tile) programs the digits of every slice packed into that
//! group, so writes do not repeat per vector or bit plane and the write count
//! matches the cost model exactly.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::target::CimTarget;

/// Canonical axis labels of the CIM loop nest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisLabel {
    OuterColTile,
    OuterRowTile,
    WeightSlice,
    InputVec,
    InputBit,
}

pub const AXIS_ORDER: [AxisLabel; 5] = [
    AxisLabel::OuterColTile,
    AxisLabel::OuterRowTile,
    AxisLabel::WeightSlice,
    AxisLabel::InputVec,
    AxisLabel::InputBit,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Axis {
    pub label: AxisLabel,
    pub extent: u64,
}

/// The loop nest of one layer, axes ordered outermost to innermost.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopNest {
    pub axes: Vec<Axis>,
}

impl LoopNest {
    pub fn extent(&self, label: AxisLabel) -> u64 {
        self.axes.iter().find(|a| a.label == label).map(|a| a.extent).unwrap_or(0)
    }

    /// Tile writes implied by the nest: one per (col-group, row-tile).
    pub fn writes(&self) -> u64 {
        self.extent(AxisLabel::OuterColTile) * self.extent(AxisLabel::OuterRowTile)
    }

    /// MVM cycles implied by the nest.
    pub fn mvms(&self) -> u64 {
        self.writes() * self.extent(AxisLabel::InputVec) * self.extent(AxisLabel::InputBit)
    }
}

/// Column-group and row-tile extents of a layer on a target:
/// (⌈2·M_l·S/M⌉, ⌈N_l/N⌉).
pub fn tiling(m_l: u64, n_l: u64, w_bit: u8, target: &CimTarget) -> (u64, u64) {
    let slices = target.weight_slices(w_bit);
    let col_groups = (2 * m_l * slices).div_ceil(target.cols_m as u64);
    let row_tiles = n_l.div_ceil(target.rows_n as u64);
    (col_groups, row_tiles)
}

/// Builds the canonical five-axis schedule of one layer.
pub fn loop_nest(
    m_l: u64,
    n_l: u64,
    v_l: u64,
    w_bit: u8,
    a_bit: u8,
    target: &CimTarget,
) -> Result<LoopNest> {
    if m_l == 0 || n_l == 0 || v_l == 0 {
        return Err(CoreError::validation(format!(
            "loop nest dimensions must be positive, got M_l={m_l}, N_l={n_l}, V_l={v_l}"
        )));
    }
    let (col_groups, row_tiles) = tiling(m_l, n_l, w_bit, target);
    let extents = [
        col_groups,
        row_tiles,
        target.weight_slices(w_bit),
        v_l,
        target.input_planes(a_bit),
    ];
    Ok(LoopNest {
        axes: AXIS_ORDER
            .iter()
            .zip(extents)
            .map(|(&label, extent)| Axis { label, extent })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost;

    #[test]
    fn dense_64x128_w8_rc4_writes_once_with_eight_bit_planes() {
        let target = CimTarget::reference();
        let nest = loop_nest(64, 128, 1, 8, 8, &target).unwrap();
        assert_eq!(nest.writes(), 1);
        assert_eq!(nest.extent(AxisLabel::InputBit), 8);
        assert_eq!(nest.extent(AxisLabel::WeightSlice), 2);
    }

    #[test]
    fn single_vector_single_bit_runs_one_mvm() {
        let target = CimTarget::reference();
        let nest = loop_nest(64, 128, 1, 8, 1, &target).unwrap();
        assert_eq!(nest.mvms(), nest.writes());
        assert_eq!(nest.extent(AxisLabel::InputBit), 1);
    }

    #[test]
    fn axis_order_and_vocabulary_are_canonical() {
        let target = CimTarget::reference();
        let nest = loop_nest(512, 300, 7, 6, 5, &target).unwrap();
        let labels: Vec<AxisLabel> = nest.axes.iter().map(|a| a.label).collect();
        assert_eq!(labels, AXIS_ORDER.to_vec());
        // Serialized labels use the canonical snake_case vocabulary.
        let json = serde_json::to_string(&nest).unwrap();
        for name in ["outer_col_tile", "outer_row_tile", "weight_slice", "input_vec", "input_bit"]
        {
            assert!(json.contains(name), "missing axis {name} in {json}");
        }
    }

    #[test]
    fn writes_match_cost_model_over_a_sweep() {
        let target = CimTarget::reference();
        for (m_l, n_l, w_bit) in
            [(64u64, 128u64, 8u8), (512, 300, 6), (128, 256, 4), (1, 1, 2), (1000, 27, 3)]
        {
            let nest = loop_nest(m_l, n_l, 9, w_bit, 5, &target).unwrap();
            assert_eq!(
                nest.writes(),
                cost::n_write_dims(m_l, n_l, w_bit, &target),
                "M_l={m_l} N_l={n_l} w={w_bit}"
            );
        }
    }
}
