//! Checksummed single-file JSON container.
//!
//! Line 1 is a header `{"schema", "checksum", "length"}`; line 2 is the body.
//! The checksum is SHA-256 over the body bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::check_tag;

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    checksum: String,
    length: usize,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn encode<T: Serialize>(schema: &str, body: &T) -> Result<String> {
    let body = serde_json::to_string(body)?;
    let header = Header {
        schema: schema.to_string(),
        checksum: sha256_hex(body.as_bytes()),
        length: body.len(),
    };
    Ok(format!("{}\n{}\n", serde_json::to_string(&header)?, body))
}

pub(crate) fn decode<T: for<'de> Deserialize<'de>>(text: &str, schema: &str, what: &str) -> Result<T> {
    let (head, rest) = match text.split_once('\n') {
        Some(parts) => parts,
        None => (text, ""),
    };
    let header: Header = match serde_json::from_str(head) {
        Ok(h) => h,
        // a header cut short is truncation, anything else is not our format
        Err(e) if e.is_eof() => return Err(Error::Checksum(format!("{what} (truncated header)"))),
        Err(_) => {
            let found = serde_json::from_str::<serde_json::Value>(head)
                .ok()
                .and_then(|v| v.get("schema").and_then(|s| s.as_str()).map(str::to_string))
                .unwrap_or_else(|| "<unrecognized>".to_string());
            check_tag(&found, schema)?;
            return Err(Error::Schema {
                expected: schema.to_string(),
                found,
            });
        }
    };
    check_tag(&header.schema, schema)?;
    let body = rest.strip_suffix('\n').unwrap_or(rest);
    if body.len() != header.length || sha256_hex(body.as_bytes()) != header.checksum {
        return Err(Error::Checksum(what.to_string()));
    }
    Ok(serde_json::from_str(body)?)
}

pub(crate) fn save<T: Serialize>(path: &Path, schema: &str, body: &T) -> Result<()> {
    let text = encode(schema, body)?;
    std::fs::write(path, text).map_err(|e| Error::file(path, e))
}

pub(crate) fn load<T: for<'de> Deserialize<'de>>(path: &Path, schema: &str) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    // a cut through a multi-byte character is still truncation
    let text = String::from_utf8_lossy(&bytes);
    decode(&text, schema, &path.display().to_string())
}
