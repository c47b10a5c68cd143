//! Canonical JSON: sorted keys, floats at six decimals, two-space indent,
//! arrays of scalars on one line. Reading a file and writing it back gives
//! the same bytes.

use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Number, Value};

use crate::error::{AplError, Result};

pub fn to_string<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| AplError::InvalidArgument(format!("serialize: {e}")))?;
    let mut out = String::new();
    write_value(&mut out, &v, 0);
    out.push('\n');
    Ok(out)
}

pub fn write<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = to_string(value)?;
    std::fs::write(path, s).map_err(|e| AplError::io(path, e))
}

/// Parses `text` into `T`; errors carry the field path plus line and column.
pub fn from_str<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        AplError::format(
            path,
            format!(
                "line {} column {}: at `{}`: {}",
                inner.line(),
                inner.column(),
                field,
                inner
            ),
        )
    })
}

pub fn read<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| AplError::io(path, e))?;
    from_str(path, &text)
}

fn is_scalar(v: &Value) -> bool {
    !matches!(v, Value::Array(_) | Value::Object(_))
}

fn write_number(out: &mut String, n: &Number) {
    if n.is_f64() {
        let x = n.as_f64().unwrap_or(0.0);
        let s = format!("{x:.6}");
        // "-0.000000" and "0.000000" must not both appear for the same value.
        if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
            out.push_str("0.000000");
        } else {
            out.push_str(&s);
        }
    } else {
        let _ = write!(out, "{n}");
    }
}

fn write_value(out: &mut String, v: &Value, indent: usize) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => write_number(out, n),
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) if items.iter().all(is_scalar) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_value(out, item, indent);
            }
            out.push(']');
        }
        Value::Array(items) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                pad(out, indent + 1);
                write_value(out, item, indent + 1);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            pad(out, indent);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            // serde_json's default map is ordered by key.
            out.push_str("{\n");
            for (i, (k, item)) in map.iter().enumerate() {
                pad(out, indent + 1);
                out.push_str(&Value::String(k.clone()).to_string());
                out.push_str(": ");
                write_value(out, item, indent + 1);
                out.push_str(if i + 1 < map.len() { ",\n" } else { "\n" });
            }
            pad(out, indent);
            out.push('}');
        }
    }
}

fn pad(out: &mut String, indent: usize) {
    for _ in 0..indent {
        out.push_str("  ");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn canonical_layout() {
        let v = json!({"b": [1.0, 2, -0.0000001], "a": {"z": "x\"y", "y": [[0.5], []]}, "c": null});
        let s = to_string(&v).unwrap();
        assert_eq!(
            s,
            "{\n  \"a\": {\n    \"y\": [\n      [0.500000],\n      []\n    ],\n    \"z\": \"x\\\"y\"\n  },\n  \"b\": [1.000000, 2, 0.000000],\n  \"c\": null\n}\n"
        );
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let v = json!({"x": [0.1234567, 1e-9, 3.0, 12345.6789], "k": 3, "s": "é"});
        let first = to_string(&v).unwrap();
        let back: Value = from_str(Path::new("mem"), &first).unwrap();
        assert_eq!(to_string(&back).unwrap(), first);
    }

    #[test]
    fn errors_name_the_field() {
        #[derive(serde::Deserialize, Debug)]
        #[allow(dead_code)]
        struct T {
            inner: Vec<u32>,
        }
        let err = from_str::<T>(Path::new("f.json"), "{\n \"inner\": [1, \"x\"]\n}").unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("f.json") && msg.contains("inner[1]") && msg.contains("line 2"),
            "{msg}"
        );
        assert_eq!(err.exit_code(), 2);
    }
}
