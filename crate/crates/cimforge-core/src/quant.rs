//! Symmetric linear quantization primitives.
//!
//! All quantizers here are per-tensor, symmetric (zero point fixed at 0), and
//! round half away from zero. Signed tensors use the symmetric integer range
//! `[-(2^(B-1)-1), 2^(B-1)-1]`; tensors known to be non-negative (e.g. post
//! ReLU activations) use the unsigned range `[0, 2^B-1]`.

use crate::error::{CoreError, Result};

/// Smallest bit-width accepted by the quantizers. Binary quantization needs a
/// different codebook treatment entirely, so it is excluded rather than
/// silently mishandled.
pub const MIN_BITS: u8 = 2;
/// Largest bit-width accepted by the quantizers.
pub const MAX_BITS: u8 = 8;

/// A quantized tensor: integer codes plus the scale that maps them back to
/// real values (`real = code * scale`). The zero point is always 0.
#[derive(Debug, Clone, PartialEq)]
pub struct QTensor {
    pub data: Vec<i32>,
    pub shape: Vec<usize>,
    pub scale: f64,
    pub bits: u8,
    pub signed: bool,
}

impl QTensor {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Rounds half away from zero (2.5 → 3, -2.5 → -3), the rounding mode used by
/// every quantization step in the toolkit. `f64::round` already implements
/// these semantics; the wrapper exists so call sites document the contract.
#[inline]
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// Largest positive code for a bit-width: `2^(B-1)-1` signed, `2^B-1` unsigned.
pub fn q_max(bits: u8, signed: bool) -> i32 {
    if signed {
        (1i32 << (bits - 1)) - 1
    } else {
        (1i32 << bits) - 1
    }
}

/// Smallest code for a bit-width: `-(2^(B-1)-1)` signed (symmetric), 0 unsigned.
pub fn q_min(bits: u8, signed: bool) -> i32 {
    if signed {
        -q_max(bits, true)
    } else {
        0
    }
}

fn check_bits(bits: u8) -> Result<()> {
    if !(MIN_BITS..=MAX_BITS).contains(&bits) {
        return Err(CoreError::validation(format!(
            "bit-width must be in {MIN_BITS}..={MAX_BITS}, got {bits}"
        )));
    }
    Ok(())
}

/// Quantizes a float tensor symmetrically to `bits`-bit integers.
///
/// The scale is chosen from the tensor's own extreme value (max |x| when
/// signed, max x when unsigned), so the largest-magnitude element maps to the
/// extreme code exactly. An all-zero tensor quantizes to zeros with scale 1.
pub fn quantize_symmetric(data: &[f64], shape: &[usize], bits: u8, signed: bool) -> Result<QTensor> {
    check_bits(bits)?;
    let numel: usize = shape.iter().product();
    if numel != data.len() {
        return Err(CoreError::validation(format!(
            "shape {shape:?} implies {numel} elements but data has {}",
            data.len()
        )));
    }
    for (i, &x) in data.iter().enumerate() {
        if !x.is_finite() {
            return Err(CoreError::validation(format!(
                "quantize input element {i} is not finite: {x}"
            )));
        }
        if !signed && x < 0.0 {
            return Err(CoreError::validation(format!(
                "unsigned quantization requires non-negative input, element {i} is {x}"
            )));
        }
    }

    let amax = if signed {
        data.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
    } else {
        data.iter().fold(0.0f64, |m, &x| m.max(x))
    };
    let hi = q_max(bits, signed);
    let lo = q_min(bits, signed);
    if amax == 0.0 {
        return Ok(QTensor {
            data: vec![0; data.len()],
            shape: shape.to_vec(),
            scale: 1.0,
            bits,
            signed,
        });
    }
    let codes = data
        .iter()
        .map(|&x| (round_half_away(x * hi as f64 / amax) as i64).clamp(lo as i64, hi as i64) as i32)
        .collect();
    Ok(QTensor {
        data: codes,
        shape: shape.to_vec(),
        scale: amax / hi as f64,
        bits,
        signed,
    })
}

/// Maps integer codes back to real values: `x = q * scale`.
pub fn dequantize(q: &QTensor) -> Vec<f64> {
    q.data.iter().map(|&v| v as f64 * q.scale).collect()
}

/// Clamps `round(value * multiplier)` into the `bits`-wide output range.
/// The multiplier is applied in double precision by contract.
#[inline]
pub fn requantize_value(value: i32, multiplier: f64, bits: u8, signed: bool) -> i32 {
    let lo = q_min(bits, signed) as i64;
    let hi = q_max(bits, signed) as i64;
    (round_half_away(value as f64 * multiplier) as i64).clamp(lo, hi) as i32
}

/// Rescales 32-bit accumulator values from scale `s_in * s_w` to `s_out`:
/// `q_out = clip(round(acc * s_in * s_w / s_out))`.
pub fn requantize(
    acc: &[i32],
    s_in: f64,
    s_w: f64,
    s_out: f64,
    bits: u8,
    signed: bool,
) -> Result<Vec<i32>> {
    check_bits(bits)?;
    for (name, s) in [("s_in", s_in), ("s_w", s_w), ("s_out", s_out)] {
        if !(s.is_finite() && s > 0.0) {
            return Err(CoreError::validation(format!(
                "requantize scale {name} must be positive and finite, got {s}"
            )));
        }
    }
    let multiplier = s_in * s_w / s_out;
    Ok(acc
        .iter()
        .map(|&v| requantize_value(v, multiplier, bits, signed))
        .collect())
}

/// Quantize-dequantize pass used during quantization-aware training: returns
/// float values snapped onto the `bits`-bit symmetric grid.
pub fn fake_quant_forward(data: &[f64], bits: u8, signed: bool) -> Result<Vec<f64>> {
    let shape = [data.len()];
    let q = quantize_symmetric(data, &shape, bits, signed)?;
    Ok(dequantize(&q))
}

/// Straight-through estimator backward pass for [`fake_quant_forward`]: the
/// rounding step is treated as identity, so upstream gradients pass through
/// unchanged.
pub fn fake_quant_backward(upstream: &[f64]) -> Vec<f64> {
    upstream.to_vec()
}
