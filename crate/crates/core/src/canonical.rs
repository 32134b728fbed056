//! Canonical JSON rendering: sorted keys, two-space indentation, integers
//! printed exactly and reals with a fixed number of significant digits.
//! The CLI and the HTTP service both emit reports through [`to_canonical_json`]
//! so their outputs can be compared byte for byte.

use serde::Serialize;
use serde_json::Value;

/// Significant digits kept for real numbers.
pub const REAL_SIGNIFICANT_DIGITS: usize = 9;

/// Formats a finite real with [`REAL_SIGNIFICANT_DIGITS`] significant digits,
/// trailing zeros trimmed. Plain notation is used for decimal exponents in
/// `[-5, 15)`, scientific notation otherwise.
pub fn format_real(v: f64) -> String {
    if v == 0.0 {
        return "0.0".to_string();
    }
    let sci = format!("{:.*e}", REAL_SIGNIFICANT_DIGITS - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..15).contains(&exp) {
        let decimals = (REAL_SIGNIFICANT_DIGITS as i32 - 1 - exp).max(1) as usize;
        trim_zeros(&format!("{v:.decimals$}"))
    } else {
        format!("{}e{}", trim_zeros(mantissa), exp)
    }
}

fn trim_zeros(s: &str) -> String {
    if !s.contains('.') {
        return format!("{s}.0");
    }
    let t = s.trim_end_matches('0');
    if t.ends_with('.') {
        format!("{t}0")
    } else {
        t.to_string()
    }
}

pub fn to_canonical_json<T: Serialize + ?Sized>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("report types serialise to JSON");
    let mut out = String::new();
    write_value(&v, 0, &mut out);
    out.push('\n');
    out
}

fn write_value(v: &Value, depth: usize, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                out.push_str(&format_real(n.as_f64().expect("finite number")));
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string escapes")),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            // Arrays of scalars stay on one line.
            if items.iter().all(|i| !i.is_array() && !i.is_object()) {
                out.push('[');
                for (k, item) in items.iter().enumerate() {
                    if k > 0 {
                        out.push_str(", ");
                    }
                    write_value(item, depth, out);
                }
                out.push(']');
                return;
            }
            out.push_str("[\n");
            for (k, item) in items.iter().enumerate() {
                indent(depth + 1, out);
                write_value(item, depth + 1, out);
                if k + 1 < items.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            indent(depth, out);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (k, key) in keys.iter().enumerate() {
                indent(depth + 1, out);
                out.push_str(&serde_json::to_string(key).expect("key escapes"));
                out.push_str(": ");
                write_value(&map[key.as_str()], depth + 1, out);
                if k + 1 < keys.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            indent(depth, out);
            out.push('}');
        }
    }
}

fn indent(depth: usize, out: &mut String) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn real_formatting() {
        assert_eq!(format_real(0.75), "0.75");
        assert_eq!(format_real(1.0), "1.0");
        assert_eq!(format_real(std::f64::consts::LN_10), "2.30258509");
        assert_eq!(format_real(2.0 / 3.0), "0.666666667");
        assert_eq!(format_real(-0.5), "-0.5");
        assert_eq!(format_real(1234.5), "1234.5");
        assert_eq!(format_real(1.5e-7), "1.5e-7");
        assert_eq!(format_real(2.5e20), "2.5e20");
        assert_eq!(format_real(0.0001), "0.0001");
    }

    #[test]
    fn keys_sorted_and_integers_exact() {
        let v = json!({"b": 1, "a": [0.5, 2], "c": {"z": null, "y": u64::MAX}});
        let s = to_canonical_json(&v);
        assert_eq!(
            s,
            "{\n  \"a\": [0.5, 2],\n  \"b\": 1,\n  \"c\": {\n    \"y\": 18446744073709551615,\n    \"z\": null\n  }\n}\n"
        );
        let parsed: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(parsed["a"][0], json!(0.5));
    }
}
