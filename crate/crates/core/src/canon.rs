//! Canonical JSON: sorted keys, floats with three decimals, integers as
//! integers. The two outermost levels are broken into lines, anything deeper
//! is written compactly, so a scene reads one mesh per line.

use serde::Serialize;
use serde_json::Value;

const BREAK_DEPTH: usize = 2;

pub fn to_canonical<T: Serialize + ?Sized>(v: &T) -> Result<Vec<u8>, serde_json::Error> {
    let value = serde_json::to_value(v)?;
    let mut out = String::new();
    write_value(&mut out, &value, 0);
    out.push('\n');
    Ok(out.into_bytes())
}

pub fn format_float(f: f64) -> String {
    let s = format!("{f:.3}");
    if s == "-0.000" {
        "0.000".to_string()
    } else {
        s
    }
}

fn indent(out: &mut String, depth: usize) {
    out.push('\n');
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn write_value(out: &mut String, v: &Value, depth: usize) {
    let broken = depth < BREAK_DEPTH;
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => match (n.as_i64(), n.as_u64(), n.as_f64()) {
            (Some(i), _, _) => out.push_str(&i.to_string()),
            (_, Some(u), _) => out.push_str(&u.to_string()),
            (_, _, Some(f)) => out.push_str(&format_float(f)),
            _ => out.push_str("null"),
        },
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string serializes")),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                if broken {
                    indent(out, depth + 1);
                }
                write_value(out, item, depth + 1);
            }
            if broken {
                indent(out, depth);
            }
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                if broken {
                    indent(out, depth + 1);
                }
                out.push_str(&serde_json::to_string(k).expect("string serializes"));
                out.push(':');
                if broken {
                    out.push(' ');
                }
                write_value(out, &map[k], depth + 1);
            }
            if broken {
                indent(out, depth);
            }
            out.push('}');
        }
    }
}
