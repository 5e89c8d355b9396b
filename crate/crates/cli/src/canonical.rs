//! Canonical JSON: sorted keys, floats at 17 significant digits.

use std::io;

use serde::Serialize;
use serde_json::ser::Formatter;
use serde_json::Value;
use sha2::{Digest, Sha256};

struct FixedDigits;

impl Formatter for FixedDigits {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

/// Serialize through a `Value` (whose maps keep keys sorted) with fixed-digit floats.
pub fn to_canonical<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let v = serde_json::to_value(value)?;
    Ok(value_to_canonical(&v))
}

pub fn value_to_canonical(v: &Value) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FixedDigits);
    v.serialize(&mut ser).expect("serializing a JSON value into memory cannot fail");
    String::from_utf8(out).expect("JSON output is UTF-8")
}

/// Hex SHA-256 of the canonical form.
pub fn hash<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    Ok(hex::encode(Sha256::digest(to_canonical(value)?.as_bytes())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn keys_are_sorted_and_floats_fixed() {
        let mut m = HashMap::new();
        m.insert("b", 0.1);
        m.insert("a", 1.0 / 3.0);
        let s = to_canonical(&m).unwrap();
        assert_eq!(s, r#"{"a":3.3333333333333331e-1,"b":1.0000000000000001e-1}"#);
        let back: HashMap<String, f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back["a"], 1.0 / 3.0);
    }

    #[test]
    fn integers_and_non_finite() {
        assert_eq!(to_canonical(&(7u64, -2i32)).unwrap(), "[7,-2]");
        assert_eq!(to_canonical(&f64::NAN).unwrap(), "null");
    }
}
