//! 17-significant-digit real formatting shared by the CSV and JSON writers.

use serde::ser::{SerializeSeq, Serializer};
use serde_json::value::RawValue;

/// Formats `x` with 17 significant digits, which round-trips every finite `f64`.
pub fn sig17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

fn raw(x: f64) -> Result<Box<RawValue>, serde_json::Error> {
    if !x.is_finite() {
        return RawValue::from_string("null".into());
    }
    RawValue::from_string(sig17(x))
}

/// `serialize_with` helper writing a real slice as JSON numbers with 17 significant digits.
pub fn ser_vec<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(values.len()))?;
    for &v in values {
        let r = raw(v).map_err(serde::ser::Error::custom)?;
        seq.serialize_element(&r)?;
    }
    seq.end()
}

/// `serialize_with` helper for a single real.
pub fn ser_f64<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
    let r = raw(*value).map_err(serde::ser::Error::custom)?;
    s.serialize_some(&r)
}
