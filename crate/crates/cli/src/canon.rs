//! Canonical JSON encoding: sorted object keys, every float printed as a
//! decimal with exactly 17 significant digits. Two runs that produce the
//! same document produce the same bytes, so artifact hashes are stable and
//! reruns can be compared bit for bit. Seventeen digits round-trip every
//! f64 exactly.

use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::ioerr::IoError;

/// Serialize any serde value to canonical bytes.
pub fn to_canonical_bytes<T: serde::Serialize>(value: &T) -> Result<Vec<u8>, IoError> {
    let tree = serde_json::to_value(value).map_err(IoError::from_serde)?;
    let mut out = Vec::with_capacity(4096);
    write_value(&tree, &mut out)?;
    out.push(b'\n');
    Ok(out)
}

fn write_value(value: &Value, out: &mut Vec<u8>) -> Result<(), IoError> {
    match value {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(true) => out.extend_from_slice(b"true"),
        Value::Bool(false) => out.extend_from_slice(b"false"),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.extend_from_slice(itoa(i).as_bytes());
            } else if let Some(u) = n.as_u64() {
                out.extend_from_slice(itoa_u(u).as_bytes());
            } else {
                let f = n.as_f64().expect("number is one of i64/u64/f64");
                if !f.is_finite() {
                    return Err(IoError::Schema(
                        "non-finite float cannot be serialized".into(),
                    ));
                }
                out.extend_from_slice(format!("{f:.16e}").as_bytes());
            }
        }
        Value::String(s) => {
            let quoted = serde_json::to_string(s).map_err(IoError::from_serde)?;
            out.extend_from_slice(quoted.as_bytes());
        }
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(item, out)?;
            }
            out.push(b']');
        }
        // serde_json's default map is a BTreeMap, so iteration order is
        // already the sorted-key canonical order.
        Value::Object(map) => {
            out.push(b'{');
            for (i, (key, item)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                let quoted = serde_json::to_string(key).map_err(IoError::from_serde)?;
                out.extend_from_slice(quoted.as_bytes());
                out.push(b':');
                write_value(item, out)?;
            }
            out.push(b'}');
        }
    }
    Ok(())
}

fn itoa(i: i64) -> String {
    i.to_string()
}

fn itoa_u(u: u64) -> String {
    u.to_string()
}

/// Format one float the way the canonical writer does.
pub fn float17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Lower-case hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
