//! Bit-exact functional simulator of a differential RRAM crossbar tile.
//!
//! The device model follows the analog dot-product engine convention: every
//! logical weight column is realized as a differential pair of conductance
//! columns, so the column current is `i_k = Σ_j v_j (g+_{j,k} - g-_{j,k})`.
//! Weights wider than one cell are decomposed into ⌈w_bit/r_cell⌉ base-2^r_cell
//! digit slices (least significant first), and activations are streamed
//! through the DACs ⌈a_bit/r_dac⌉ bit planes at a time. The host recombines
//! slice and plane partial sums with shift-adds in 32-bit integer arithmetic.
//!
//! Everything here is exact integer math: the simulator is the ground truth
//! the compiler's device traces are checked against.

use crate::error::{CoreError, Result};
use crate::quant::{MAX_BITS, MIN_BITS};
use crate::target::CimTarget;

/// A dense matrix of cell digits, row-major. Digit values must fit the
/// target's cell resolution (`< 2^r_cell`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigitMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<u16>,
}

impl DigitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> DigitMatrix {
        DigitMatrix { rows, cols, data: vec![0; rows * cols] }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> u16 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: u16) {
        self.data[r * self.cols + c] = v;
    }
}

/// One differential digit-slice pair: positive and negative conductance
/// digits of the same tile region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlicePair {
    pub g_pos: DigitMatrix,
    pub g_neg: DigitMatrix,
}

/// All digit slices of one (row-tile, col-tile) region of a weight matrix.
#[derive(Debug, Clone)]
pub struct WeightTile {
    pub row_tile: usize,
    pub col_tile: usize,
    /// Actual extent of this tile (final tiles may be partial).
    pub rows: usize,
    pub cols: usize,
    /// One differential digit pair per weight slice, least significant first.
    pub slices: Vec<SlicePair>,
}

/// A weight matrix decomposed for crossbar mapping: tiled to the array
/// dimensions and bit-sliced to the cell resolution.
#[derive(Debug, Clone)]
pub struct SlicedWeights {
    /// Reduction (input) dimension of the layer.
    pub n_l: usize,
    /// Output dimension of the layer.
    pub m_l: usize,
    pub w_bit: u8,
    pub r_cell: u8,
    pub num_slices: usize,
    /// Shift-add weight of each slice: `2^(s * r_cell)`.
    pub slice_weights: Vec<i64>,
    pub row_tiles: usize,
    pub col_tiles: usize,
    /// Row-tile-major list of tiles, `row_tiles * col_tiles` entries.
    pub tiles: Vec<WeightTile>,
}

impl SlicedWeights {
    pub fn tile(&self, row_tile: usize, col_tile: usize) -> &WeightTile {
        &self.tiles[row_tile * self.col_tiles + col_tile]
    }
}

/// Simulated crossbar array state: differential conductance digits plus event
/// counters. One `CrossbarState` models one physical device; weight-stationary
/// execution maps each tile write to one `write` call.
#[derive(Debug, Clone)]
pub struct CrossbarState {
    pub rows_n: usize,
    pub cols_m: usize,
    pub r_cell: u8,
    pub r_dac: u8,
    g_pos: Vec<u16>,
    g_neg: Vec<u16>,
    /// Number of tile writes issued to this device.
    pub write_count: u64,
    /// Number of analog MVM cycles issued to this device.
    pub mvm_count: u64,
}

impl CrossbarState {
    pub fn new(target: &CimTarget) -> CrossbarState {
        CrossbarState {
            rows_n: target.rows_n,
            cols_m: target.cols_m,
            r_cell: target.r_cell,
            r_dac: target.r_dac,
            g_pos: vec![0; target.rows_n * target.cols_m],
            g_neg: vec![0; target.rows_n * target.cols_m],
            write_count: 0,
            mvm_count: 0,
        }
    }

    /// Programs one tile: installs the differential digit pair at the array
    /// origin and zeros every other cell. Partial tiles are zero-padded to
    /// the full array but still cost exactly one write.
    pub fn write(&mut self, pair: &SlicePair) -> Result<()> {
        let (rows, cols) = (pair.g_pos.rows, pair.g_pos.cols);
        if pair.g_neg.rows != rows || pair.g_neg.cols != cols {
            return Err(CoreError::validation(format!(
                "write: g_pos is {rows}x{cols} but g_neg is {}x{}",
                pair.g_neg.rows, pair.g_neg.cols
            )));
        }
        if rows > self.rows_n || cols > self.cols_m {
            return Err(CoreError::validation(format!(
                "write: tile {rows}x{cols} exceeds array {}x{}",
                self.rows_n, self.cols_m
            )));
        }
        let max_digit = (1u32 << self.r_cell) - 1;
        for m in [&pair.g_pos, &pair.g_neg] {
            if let Some(&bad) = m.data.iter().find(|&&d| d as u32 > max_digit) {
                return Err(CoreError::validation(format!(
                    "write: digit {bad} exceeds cell resolution (max {max_digit} for r_cell={})",
                    self.r_cell
                )));
            }
        }
        self.g_pos.fill(0);
        self.g_neg.fill(0);
        for r in 0..rows {
            for c in 0..cols {
                self.g_pos[r * self.cols_m + c] = pair.g_pos.at(r, c);
                self.g_neg[r * self.cols_m + c] = pair.g_neg.at(r, c);
            }
        }
        self.write_count += 1;
        Ok(())
    }

    /// One analog MVM cycle: applies an `r_dac`-bit digit per row and returns
    /// the differential column currents `i_k = Σ_j v_j (g+_{j,k} - g-_{j,k})`.
    pub fn mvm(&mut self, v: &[u32]) -> Result<Vec<i32>> {
        if v.len() != self.rows_n {
            return Err(CoreError::validation(format!(
                "mvm: input has {} rows, array has {}",
                v.len(),
                self.rows_n
            )));
        }
        let max_digit = (1u32 << self.r_dac) - 1;
        if let Some(&bad) = v.iter().find(|&&d| d > max_digit) {
            return Err(CoreError::validation(format!(
                "mvm: input digit {bad} exceeds DAC resolution (max {max_digit} for r_dac={})",
                self.r_dac
            )));
        }
        let mut currents = vec![0i32; self.cols_m];
        for (j, &vj) in v.iter().enumerate() {
            if vj == 0 {
                continue;
            }
            let row = j * self.cols_m;
            for (k, current) in currents.iter_mut().enumerate() {
                let diff = self.g_pos[row + k] as i32 - self.g_neg[row + k] as i32;
                *current += vj as i32 * diff;
            }
        }
        self.mvm_count += 1;
        Ok(currents)
    }
}

fn check_operand_bits(name: &str, bits: u8) -> Result<()> {
    if !(MIN_BITS..=MAX_BITS).contains(&bits) {
        return Err(CoreError::validation(format!(
            "{name} must be in {MIN_BITS}..={MAX_BITS}, got {bits}"
        )));
    }
    Ok(())
}

/// Decomposes an `n_l x m_l` signed integer weight matrix (row-major, rows =
/// reduction dimension) into differential digit-slice tiles for the target.
///
/// Weights are split as `w = w+ - w-` and each part is expressed in base
/// `2^r_cell` digits, least significant slice first; the top slice holds the
/// remaining high bits and may be all zero. Rows are tiled into ⌈n_l/N⌉
/// chunks and columns into ⌈m_l/M⌉ chunks.
pub fn map_weights(
    w: &[i32],
    n_l: usize,
    m_l: usize,
    w_bit: u8,
    target: &CimTarget,
) -> Result<SlicedWeights> {
    check_operand_bits("w_bit", w_bit)?;
    if n_l == 0 || m_l == 0 {
        return Err(CoreError::validation(format!(
            "map_weights: dimensions must be positive, got {n_l}x{m_l}"
        )));
    }
    if w.len() != n_l * m_l {
        return Err(CoreError::validation(format!(
            "map_weights: {n_l}x{m_l} matrix needs {} elements, got {}",
            n_l * m_l,
            w.len()
        )));
    }
    let w_max = (1i32 << (w_bit - 1)) - 1;
    for (idx, &v) in w.iter().enumerate() {
        if v.abs() > w_max {
            return Err(CoreError::validation(format!(
                "map_weights: w[{}][{}] = {v} outside signed {w_bit}-bit range [-{w_max}, {w_max}]",
                idx / m_l,
                idx % m_l
            )));
        }
    }

    let num_slices = target.weight_slices(w_bit) as usize;
    let digit_mask = (1u32 << target.r_cell) - 1;
    let row_tiles = n_l.div_ceil(target.rows_n);
    let col_tiles = m_l.div_ceil(target.cols_m);

    let mut tiles = Vec::with_capacity(row_tiles * col_tiles);
    for rt in 0..row_tiles {
        let row0 = rt * target.rows_n;
        let rows = (n_l - row0).min(target.rows_n);
        for ct in 0..col_tiles {
            let col0 = ct * target.cols_m;
            let cols = (m_l - col0).min(target.cols_m);
            let mut slices = vec![
                SlicePair {
                    g_pos: DigitMatrix::zeros(rows, cols),
                    g_neg: DigitMatrix::zeros(rows, cols),
                };
                num_slices
            ];
            for r in 0..rows {
                for c in 0..cols {
                    let v = w[(row0 + r) * m_l + (col0 + c)];
                    let mag = v.unsigned_abs();
                    for (s, pair) in slices.iter_mut().enumerate() {
                        let digit = ((mag >> (s as u32 * target.r_cell as u32)) & digit_mask) as u16;
                        if v >= 0 {
                            pair.g_pos.set(r, c, digit);
                        } else {
                            pair.g_neg.set(r, c, digit);
                        }
                    }
                }
            }
            tiles.push(WeightTile { row_tile: rt, col_tile: ct, rows, cols, slices });
        }
    }

    Ok(SlicedWeights {
        n_l,
        m_l,
        w_bit,
        r_cell: target.r_cell,
        num_slices,
        slice_weights: (0..num_slices).map(|s| 1i64 << (s as u32 * target.r_cell as u32)).collect(),
        row_tiles,
        col_tiles,
        tiles,
    })
}

/// Shift-add coefficients of the input bit planes for an `a_bit`-wide operand
/// streamed through `r_dac`-bit DACs, least significant plane first.
///
/// Signed operands are streamed in two's complement, which is exact only when
/// the top plane isolates the sign bit (always true for r_dac = 1, and for
/// wider DACs when `a_bit ≡ 1 (mod r_dac)`); the sign plane then carries the
/// negative weight `-2^(a_bit-1)`. Other signed combinations are rejected.
pub fn plane_coeffs(a_bit: u8, r_dac: u8, signed: bool) -> Result<Vec<i64>> {
    check_operand_bits("a_bit", a_bit)?;
    let planes = (a_bit as usize).div_ceil(r_dac as usize);
    if signed && (planes - 1) * r_dac as usize != a_bit as usize - 1 {
        return Err(CoreError::validation(format!(
            "signed {a_bit}-bit inputs cannot be streamed exactly through {r_dac}-bit DACs: \
             the top bit plane must isolate the sign bit (use r_dac=1 or a_bit ≡ 1 mod r_dac)"
        )));
    }
    Ok((0..planes)
        .map(|p| {
            if signed && p == planes - 1 {
                -(1i64 << (a_bit - 1))
            } else {
                1i64 << (p as u32 * r_dac as u32)
            }
        })
        .collect())
}

/// Extracts bit plane `p` of `x` as an `r_dac`-bit DAC digit. `x` is encoded
/// in `a_bit`-bit two's complement, so negative values work when the plane
/// coefficients from [`plane_coeffs`] are used for recombination.
#[inline]
pub fn plane_digit(x: i32, p: usize, a_bit: u8, r_dac: u8) -> u32 {
    let encoded = (x as i64 & ((1i64 << a_bit) - 1)) as u32;
    let lo = p as u32 * r_dac as u32;
    let width = (a_bit as u32 - lo).min(r_dac as u32);
    (encoded >> lo) & ((1u32 << width) - 1)
}

fn check_input_range(x: &[i32], a_bit: u8, signed: bool) -> Result<()> {
    let (lo, hi) = if signed {
        (-((1i32 << (a_bit - 1)) - 1), (1i32 << (a_bit - 1)) - 1)
    } else {
        (0, (1i32 << a_bit) - 1)
    };
    for (i, &v) in x.iter().enumerate() {
        if v < lo || v > hi {
            return Err(CoreError::validation(format!(
                "input element {i} = {v} outside {}{a_bit}-bit range [{lo}, {hi}]",
                if signed { "signed " } else { "unsigned " }
            )));
        }
    }
    Ok(())
}

/// Computes `wᵀ x` for an `n_l x m_l` weight matrix on the simulated crossbar
/// with full weight slicing, input bit-serial streaming, tiling, and host
/// shift-add recombination. The result is exact in 32-bit arithmetic;
/// accumulator overflow is detected and reported.
pub fn sliced_mvm(
    w: &[i32],
    n_l: usize,
    m_l: usize,
    x: &[i32],
    w_bit: u8,
    a_bit: u8,
    x_signed: bool,
    target: &CimTarget,
) -> Result<Vec<i32>> {
    if x.len() != n_l {
        return Err(CoreError::validation(format!(
            "sliced_mvm: input length {} does not match reduction dimension {n_l}",
            x.len()
        )));
    }
    check_input_range(x, a_bit, x_signed)?;
    let sliced = map_weights(w, n_l, m_l, w_bit, target)?;
    let coeffs = plane_coeffs(a_bit, target.r_dac, x_signed)?;

    let mut state = CrossbarState::new(target);
    let mut acc = vec![0i64; m_l];
    let mut v = vec![0u32; target.rows_n];
    for tile in &sliced.tiles {
        let row0 = tile.row_tile * target.rows_n;
        let col0 = tile.col_tile * target.cols_m;
        for (s, pair) in tile.slices.iter().enumerate() {
            state.write(pair)?;
            for (p, &coeff) in coeffs.iter().enumerate() {
                v.fill(0);
                for r in 0..tile.rows {
                    v[r] = plane_digit(x[row0 + r], p, a_bit, target.r_dac);
                }
                let currents = state.mvm(&v)?;
                let shift = sliced.slice_weights[s] * coeff;
                for c in 0..tile.cols {
                    acc[col0 + c] += shift * currents[c] as i64;
                }
            }
        }
    }

    acc.iter()
        .enumerate()
        .map(|(k, &a)| {
            i32::try_from(a).map_err(|_| {
                CoreError::runtime(format!(
                    "sliced_mvm: accumulator overflow at output column {k}: {a} exceeds 32-bit range"
                ))
            })
        })
        .collect()
}
