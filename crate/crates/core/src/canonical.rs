//! Canonical JSON writing.
//!
//! Object keys are emitted in lexicographic byte order, there is no
//! insignificant whitespace and strings use the standard JSON escapes. Two
//! number styles exist: [`FloatStyle::Shortest`] round-trips every `f64`
//! (used for tokens and wire envelopes), [`FloatStyle::Fixed6`] prints every
//! float with exactly six decimals (used for trace files).

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FloatStyle {
    Shortest,
    Fixed6,
}

/// Serializes `value` through `serde_json::Value` and writes it canonically.
pub fn to_canonical_string<T: Serialize>(value: &T, style: FloatStyle) -> serde_json::Result<String> {
    let value = serde_json::to_value(value)?;
    Ok(write_value(&value, style))
}

pub fn write_value(value: &Value, style: FloatStyle) -> String {
    let mut out = String::new();
    write_into(&mut out, value, style);
    out
}

fn write_into(out: &mut String, value: &Value, style: FloatStyle) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else {
                let f = n.as_f64().unwrap_or(0.0);
                write_float(out, f, style);
            }
        }
        Value::String(s) => write_string(out, s),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_into(out, item, style);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut entries: Vec<_> = map.iter().collect();
            entries.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            out.push('{');
            for (i, (k, v)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_string(out, k);
                out.push(':');
                write_into(out, v, style);
            }
            out.push('}');
        }
    }
}

fn write_float(out: &mut String, f: f64, style: FloatStyle) {
    // -0.0 and 0.0 must print identically.
    let f = if f == 0.0 { 0.0 } else { f };
    match style {
        FloatStyle::Fixed6 => {
            let _ = write!(out, "{f:.6}");
        }
        FloatStyle::Shortest => {
            out.push_str(&serde_json::Number::from_f64(f).map(|n| n.to_string()).unwrap_or_else(|| "null".into()));
        }
    }
}

fn write_string(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).expect("string serialization is infallible"));
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_sorted_and_compact() {
        let v = json!({"b": 1, "a": {"d": [1, 2], "c": null}, "A": true});
        assert_eq!(write_value(&v, FloatStyle::Shortest), r#"{"A":true,"a":{"c":null,"d":[1,2]},"b":1}"#);
    }

    #[test]
    fn float_styles() {
        let v = json!({"t": 0.1, "z": -0.0, "n": 3});
        assert_eq!(write_value(&v, FloatStyle::Fixed6), r#"{"n":3,"t":0.100000,"z":0.000000}"#);
        assert_eq!(write_value(&v, FloatStyle::Shortest), r#"{"n":3,"t":0.1,"z":0.0}"#);
    }

    #[test]
    fn escapes_strings() {
        let v = json!({"k\"": "line\nbreak"});
        assert_eq!(write_value(&v, FloatStyle::Shortest), r#"{"k\"":"line\nbreak"}"#);
    }
}
