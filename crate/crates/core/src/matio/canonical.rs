//! Canonical JSON emission.
//!
//! Field order follows struct declaration order and every `f64` is written
//! with 17 significant digits in exponent form, so equal values always
//! produce equal bytes.

use serde::ser::Error as _;
use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

/// Formats a finite float with 17 significant digits, e.g. `9.6000000000000005e-1`.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// `serialize_with` helper for `f64` fields.
pub fn f64<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    if !x.is_finite() {
        return Err(S::Error::custom(format!("non-finite value {x} in report")));
    }
    let raw = RawValue::from_string(format_f64(*x)).map_err(S::Error::custom)?;
    raw.serialize(s)
}

/// `serialize_with` helper for `Option<f64>` fields; `None` becomes `null`.
pub fn opt_f64<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => f64(v, s),
        None => s.serialize_none(),
    }
}

/// `serialize_with` helper for `Vec<f64>` fields.
pub fn vec_f64<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(xs.len()))?;
    for x in xs {
        seq.serialize_element(&Canon(*x))?;
    }
    seq.end()
}

struct Canon(f64);

impl Serialize for Canon {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        f64(&self.0, s)
    }
}

/// Pretty-printed canonical JSON with a trailing newline.
pub fn to_string<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let mut out = serde_json::to_string_pretty(value)?;
    out.push('\n');
    Ok(out)
}
