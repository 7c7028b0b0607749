//! Declarative description of a crossbar CIM target.
//!
//! A target file is a JSON object with the keys `rows_n`, `cols_m`, `r_cell`,
//! `r_dac`, `t_write_us`, `t_mvm_us` and optional `b_min`/`b_max` (defaulting
//! to 2 and 8). Timings are exact decimal strings (`"56"`, `"1.4"`); plain
//! JSON numbers are also accepted and are interpreted via their shortest
//! decimal representation. All latency arithmetic in the toolkit is exact:
//! durations are stored as an integer count of 10⁻⁶ µs units, so sums and
//! products of timing parameters never lose precision to floating point.

use std::fmt;
use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::error::{CoreError, Result};

/// Number of internal units per microsecond (10⁻⁶ µs resolution).
const UNITS_PER_US: u128 = 1_000_000;
/// Maximum number of fractional digits accepted in decimal microsecond input.
const MAX_FRAC_DIGITS: usize = 6;

/// An exact non-negative duration in microseconds.
///
/// Stored as an integer count of 10⁻⁶ µs so that every value representable in
/// a target file (decimal string with at most six fractional digits) is exact,
/// and so that latency totals computed by the cost model and the simulator can
/// be compared with `==` rather than a floating-point tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Latency(u128);

impl Latency {
    pub const ZERO: Latency = Latency(0);

    /// Parses a decimal microsecond string such as `"56"` or `"1.4"`.
    ///
    /// At most six fractional digits are accepted; anything else (signs,
    /// exponents, empty fields) is a parse error.
    pub fn from_us_str(s: &str) -> Result<Latency> {
        let bad = |why: &str| {
            CoreError::parse(format!(
                "invalid microsecond value {s:?}: {why} (expected a decimal \
                 string like \"56\" or \"1.4\" with at most {MAX_FRAC_DIGITS} \
                 fractional digits)"
            ))
        };
        let (int_part, frac_part) = match s.split_once('.') {
            Some((i, f)) => (i, f),
            None => (s, ""),
        };
        if int_part.is_empty() || !int_part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad("integer part must be one or more digits"));
        }
        if s.contains('.') && frac_part.is_empty() {
            return Err(bad("fractional part is empty"));
        }
        if !frac_part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad("fractional part must be digits"));
        }
        if frac_part.len() > MAX_FRAC_DIGITS {
            return Err(bad("too many fractional digits"));
        }
        let int: u128 = int_part
            .parse()
            .map_err(|_| bad("integer part out of range"))?;
        let mut frac: u128 = 0;
        if !frac_part.is_empty() {
            frac = frac_part.parse().map_err(|_| bad("fractional part out of range"))?;
            frac *= 10u128.pow((MAX_FRAC_DIGITS - frac_part.len()) as u32);
        }
        int.checked_mul(UNITS_PER_US)
            .and_then(|v| v.checked_add(frac))
            .map(Latency)
            .ok_or_else(|| bad("value out of range"))
    }

    /// Exact value in 10⁻⁶ µs units.
    pub fn units(self) -> u128 {
        self.0
    }

    pub fn from_units(units: u128) -> Latency {
        Latency(units)
    }

    /// Multiplies the duration by an event count.
    pub fn scale(self, count: u128) -> Latency {
        Latency(self.0.checked_mul(count).expect("latency overflow"))
    }

    /// Approximate value in microseconds for reporting and reward math.
    pub fn as_us_f64(self) -> f64 {
        self.0 as f64 / UNITS_PER_US as f64
    }

    /// Canonical decimal string in microseconds, e.g. `"67.2"` or `"56"`.
    ///
    /// Trailing zeros of the fractional part are trimmed, so formatting a
    /// parsed value and re-parsing it round-trips exactly.
    pub fn as_us_string(self) -> String {
        let int = self.0 / UNITS_PER_US;
        let frac = self.0 % UNITS_PER_US;
        if frac == 0 {
            return int.to_string();
        }
        let digits = format!("{frac:06}");
        format!("{int}.{}", digits.trim_end_matches('0'))
    }
}

impl std::ops::Add for Latency {
    type Output = Latency;
    fn add(self, rhs: Latency) -> Latency {
        Latency(self.0.checked_add(rhs.0).expect("latency overflow"))
    }
}

impl std::iter::Sum for Latency {
    fn sum<I: Iterator<Item = Latency>>(iter: I) -> Latency {
        iter.fold(Latency::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for Latency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_us_string())
    }
}

impl Serialize for Latency {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.as_us_string())
    }
}

impl<'de> Deserialize<'de> for Latency {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Latency::from_us_str(&s).map_err(D::Error::custom)
    }
}

/// Hardware description of one crossbar CIM device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CimTarget {
    /// Crossbar input rows N (one per activation element per tile).
    pub rows_n: usize,
    /// Crossbar output columns M (physical differential column pairs).
    pub cols_m: usize,
    /// Bits stored per RRAM cell.
    pub r_cell: u8,
    /// DAC resolution in bits (input bits applied per MVM cycle).
    pub r_dac: u8,
    /// Latency of programming one tile.
    pub t_write: Latency,
    /// Latency of one analog MVM cycle.
    pub t_mvm: Latency,
    /// Smallest bit-width the precision search may assign.
    pub b_min: u8,
    /// Largest bit-width the precision search may assign.
    pub b_max: u8,
}

pub const DEFAULT_B_MIN: u8 = 2;
pub const DEFAULT_B_MAX: u8 = 8;

impl CimTarget {
    /// The reference configuration used throughout the documentation: a
    /// 256×256 array with 4-bit cells, 1-bit DACs, 56 µs writes and 1.4 µs
    /// MVM cycles.
    pub fn reference() -> CimTarget {
        CimTarget {
            rows_n: 256,
            cols_m: 256,
            r_cell: 4,
            r_dac: 1,
            t_write: Latency::from_us_str("56").unwrap(),
            t_mvm: Latency::from_us_str("1.4").unwrap(),
            b_min: DEFAULT_B_MIN,
            b_max: DEFAULT_B_MAX,
        }
    }

    /// Number of weight slices needed for `w_bit`-bit weights: ⌈w_bit/r_cell⌉.
    pub fn weight_slices(&self, w_bit: u8) -> u64 {
        (w_bit as u64).div_ceil(self.r_cell as u64)
    }

    /// Number of input bit planes for `a_bit`-bit activations: ⌈a_bit/r_dac⌉.
    pub fn input_planes(&self, a_bit: u8) -> u64 {
        (a_bit as u64).div_ceil(self.r_dac as u64)
    }

    /// The inclusive bit-width axis `b_min..=b_max` used by the latency LUT
    /// and the precision search.
    pub fn bit_axis(&self) -> Vec<u8> {
        (self.b_min..=self.b_max).collect()
    }

    /// Validates every field, naming the offending field in the error.
    pub fn validate(&self) -> Result<()> {
        let err = |field: &str, why: String| {
            Err(CoreError::validation(format!("target field {field}: {why}")))
        };
        if self.rows_n == 0 {
            return err("rows_n", "must be >= 1".into());
        }
        if self.cols_m == 0 {
            return err("cols_m", "must be >= 1".into());
        }
        if !(1..=8).contains(&self.r_cell) {
            return err("r_cell", format!("must be in 1..=8, got {}", self.r_cell));
        }
        if !(1..=8).contains(&self.r_dac) {
            return err("r_dac", format!("must be in 1..=8, got {}", self.r_dac));
        }
        if self.t_write == Latency::ZERO {
            return err("t_write_us", "must be positive".into());
        }
        if self.t_mvm == Latency::ZERO {
            return err("t_mvm_us", "must be positive".into());
        }
        if self.b_min < 2 {
            return err("b_min", format!("must be >= 2, got {}", self.b_min));
        }
        if self.b_max > 8 {
            return err("b_max", format!("must be <= 8, got {}", self.b_max));
        }
        if self.b_min > self.b_max {
            return err(
                "b_min",
                format!("must be <= b_max, got b_min={} b_max={}", self.b_min, self.b_max),
            );
        }
        Ok(())
    }

    /// Parses a target from JSON text, rejecting unknown keys and invalid
    /// field values.
    pub fn from_json_str(text: &str) -> Result<CimTarget> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| CoreError::parse(format!("target file is not valid JSON: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| CoreError::parse("target file must be a JSON object"))?;

        const KNOWN: [&str; 9] = [
            "rows_n", "cols_m", "r_cell", "r_dac", "t_write_us", "t_mvm_us", "b_min", "b_max",
            "manifest",
        ];
        for key in obj.keys() {
            if !KNOWN.contains(&key.as_str()) {
                return Err(CoreError::parse(format!(
                    "unknown key {key:?} in target file (expected one of {KNOWN:?})"
                )));
            }
        }

        let target = CimTarget {
            rows_n: require_uint(obj, "rows_n")? as usize,
            cols_m: require_uint(obj, "cols_m")? as usize,
            r_cell: require_u8(obj, "r_cell")?,
            r_dac: require_u8(obj, "r_dac")?,
            t_write: require_latency(obj, "t_write_us")?,
            t_mvm: require_latency(obj, "t_mvm_us")?,
            b_min: optional_u8(obj, "b_min")?.unwrap_or(DEFAULT_B_MIN),
            b_max: optional_u8(obj, "b_max")?.unwrap_or(DEFAULT_B_MAX),
        };
        target.validate()?;
        Ok(target)
    }

    pub fn load(path: &Path) -> Result<CimTarget> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        CimTarget::from_json_str(&text)
            .map_err(|e| CoreError::parse(format!("{}: {e}", path.display())))
    }

    /// Serializes the target to JSON with timings as exact decimal strings.
    /// `from_json_str(to_json_string(t)) == t` for every valid target.
    pub fn to_json_string(&self) -> String {
        let mut obj = Map::new();
        obj.insert("rows_n".into(), Value::from(self.rows_n as u64));
        obj.insert("cols_m".into(), Value::from(self.cols_m as u64));
        obj.insert("r_cell".into(), Value::from(self.r_cell));
        obj.insert("r_dac".into(), Value::from(self.r_dac));
        obj.insert("t_write_us".into(), Value::from(self.t_write.as_us_string()));
        obj.insert("t_mvm_us".into(), Value::from(self.t_mvm.as_us_string()));
        obj.insert("b_min".into(), Value::from(self.b_min));
        obj.insert("b_max".into(), Value::from(self.b_max));
        serde_json::to_string_pretty(&Value::Object(obj)).expect("target serialization")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string() + "\n")
            .map_err(|e| CoreError::io(path.display().to_string(), e))
    }
}

impl Serialize for CimTarget {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            rows_n: usize,
            cols_m: usize,
            r_cell: u8,
            r_dac: u8,
            t_write_us: &'a Latency,
            t_mvm_us: &'a Latency,
            b_min: u8,
            b_max: u8,
        }
        Repr {
            rows_n: self.rows_n,
            cols_m: self.cols_m,
            r_cell: self.r_cell,
            r_dac: self.r_dac,
            t_write_us: &self.t_write,
            t_mvm_us: &self.t_mvm,
            b_min: self.b_min,
            b_max: self.b_max,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CimTarget {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        let text = serde_json::to_string(&value).map_err(D::Error::custom);
        CimTarget::from_json_str(&text?).map_err(D::Error::custom)
    }
}

fn field_value<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| CoreError::parse(format!("target file is missing required key {key:?}")))
}

fn require_uint(obj: &Map<String, Value>, key: &str) -> Result<u64> {
    field_value(obj, key)?
        .as_u64()
        .ok_or_else(|| CoreError::parse(format!("target field {key} must be a non-negative integer")))
}

fn require_u8(obj: &Map<String, Value>, key: &str) -> Result<u8> {
    let v = require_uint(obj, key)?;
    u8::try_from(v)
        .map_err(|_| CoreError::parse(format!("target field {key} out of range: {v}")))
}

fn optional_u8(obj: &Map<String, Value>, key: &str) -> Result<Option<u8>> {
    match obj.get(key) {
        None => Ok(None),
        Some(_) => require_u8(obj, key).map(Some),
    }
}

/// Timings are decimal strings by contract; bare JSON numbers are accepted
/// and interpreted through their shortest decimal representation (so `1.4`
/// means exactly 1.4 µs, not the nearest binary double).
fn require_latency(obj: &Map<String, Value>, key: &str) -> Result<Latency> {
    let value = field_value(obj, key)?;
    let text = match value {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        other => {
            return Err(CoreError::parse(format!(
                "target field {key} must be a decimal string or number, got {other}"
            )))
        }
    };
    Latency::from_us_str(&text)
        .map_err(|e| CoreError::parse(format!("target field {key}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latency_parses_exact_decimals() {
        assert_eq!(Latency::from_us_str("56").unwrap().units(), 56_000_000);
        assert_eq!(Latency::from_us_str("1.4").unwrap().units(), 1_400_000);
        assert_eq!(Latency::from_us_str("0.000001").unwrap().units(), 1);
        assert_eq!(Latency::from_us_str("67.2").unwrap().as_us_string(), "67.2");
        assert_eq!(Latency::from_us_str("56").unwrap().as_us_string(), "56");
        assert_eq!(Latency::from_us_str("0.500000").unwrap().as_us_string(), "0.5");
    }

    #[test]
    fn latency_rejects_malformed_input() {
        for bad in ["", "-1", "1.", ".5", "1.0000001", "1e3", "1,4", "nan"] {
            assert!(Latency::from_us_str(bad).is_err(), "accepted {bad:?}");
        }
    }

    #[test]
    fn latency_arithmetic_is_exact() {
        let t_mvm = Latency::from_us_str("1.4").unwrap();
        let t_write = Latency::from_us_str("56").unwrap();
        let total = t_write + t_mvm.scale(8);
        assert_eq!(total, Latency::from_us_str("67.2").unwrap());
        assert_eq!(total.as_us_string(), "67.2");
    }

    #[test]
    fn parses_reference_file() {
        let text = r#"{
            "rows_n": 256, "cols_m": 256, "r_cell": 4, "r_dac": 1,
            "t_write_us": "56", "t_mvm_us": "1.4", "b_min": 2, "b_max": 8
        }"#;
        let t = CimTarget::from_json_str(text).unwrap();
        assert_eq!(t, CimTarget::reference());
    }

    #[test]
    fn accepts_numeric_timings_via_shortest_decimal() {
        let text = r#"{
            "rows_n": 256, "cols_m": 256, "r_cell": 4, "r_dac": 1,
            "t_write_us": 56, "t_mvm_us": 1.4
        }"#;
        let t = CimTarget::from_json_str(text).unwrap();
        assert_eq!(t.t_write.units(), 56_000_000);
        assert_eq!(t.t_mvm.units(), 1_400_000);
        // b_min/b_max default when absent.
        assert_eq!((t.b_min, t.b_max), (2, 8));
    }

    #[test]
    fn rejects_invalid_r_cell_naming_field() {
        let text = r#"{
            "rows_n": 256, "cols_m": 256, "r_cell": 0, "r_dac": 1,
            "t_write_us": "56", "t_mvm_us": "1.4"
        }"#;
        let err = CimTarget::from_json_str(text).unwrap_err().to_string();
        assert!(err.contains("r_cell"), "error should name r_cell: {err}");
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = r#"{
            "rows_n": 256, "cols_m": 256, "r_cell": 4, "r_dac": 1,
            "t_write_us": "56", "t_mvm_us": "1.4", "rows": 128
        }"#;
        let err = CimTarget::from_json_str(text).unwrap_err().to_string();
        assert!(err.contains("rows"), "error should name the unknown key: {err}");
    }

    #[test]
    fn json_round_trip_is_identity() {
        let t = CimTarget::reference();
        let round = CimTarget::from_json_str(&t.to_json_string()).unwrap();
        assert_eq!(t, round);
    }

    #[test]
    fn bit_axis_has_seven_points_for_defaults() {
        assert_eq!(CimTarget::reference().bit_axis(), vec![2, 3, 4, 5, 6, 7, 8]);
    }

    #[test]
    fn slice_and_plane_counts() {
        let t = CimTarget::reference();
        assert_eq!(t.weight_slices(8), 2);
        assert_eq!(t.weight_slices(5), 2);
        assert_eq!(t.weight_slices(4), 1);
        assert_eq!(t.input_planes(8), 8);
        assert_eq!(t.input_planes(1), 1);
    }
}
