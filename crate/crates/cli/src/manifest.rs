//! Run manifests: every command records what it ran and what it wrote.
//!
//! The config hash is FNV-1a over the raw config bytes so identical
//! configurations always hash identically. Timestamps are informational;
//! reproducibility comparisons exclude them (like SVG render times) while
//! all data files must match byte-for-byte.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub started_at: String,
    pub finished_at: String,
    pub tool_version: String,
    /// Every file the command emitted, relative to the output directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config_bytes: &[u8], seeds: Vec<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            config_hash: format!("fnv1a:{:016x}", fnv1a(config_bytes)),
            seeds,
            started_at: now_iso(),
            finished_at: String::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: Vec::new(),
        }
    }

    /// Finalizes and writes `manifest.json` into `dir`, listing itself.
    pub fn write(mut self, dir: &Path) -> loft_kit::Result<()> {
        self.finished_at = now_iso();
        self.outputs.push("manifest.json".to_string());
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&self).expect("static schema");
        std::fs::write(&path, json).map_err(|source| loft_kit::Error::Io { path, source })
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325_u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn now_iso() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    // Minimal UTC formatter; avoids a chrono dependency.
    let days = secs / 86_400;
    let tod = secs % 86_400;
    let (y, m, d) = civil_from_days(days as i64);
    format!(
        "{y:04}-{m:02}-{d:02}T{:02}:{:02}:{:02}Z",
        tod / 3600,
        (tod % 3600) / 60,
        tod % 60
    )
}

/// Days-since-epoch to (year, month, day), Howard Hinnant's algorithm.
fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = if z >= 0 { z } else { z - 146_096 } / 146_097;
    let doe = (z - era * 146_097) as u64;
    let yoe = (doe - doe / 1460 + doe / 36524 - doe / 146_096) / 365;
    let y = yoe as i64 + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (if m <= 2 { y + 1 } else { y }, m, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv1a_is_stable() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"hello"), fnv1a(b"hello"));
        assert_ne!(fnv1a(b"hello"), fnv1a(b"hellp"));
    }

    #[test]
    fn civil_epoch_and_known_date() {
        assert_eq!(civil_from_days(0), (1970, 1, 1));
        assert_eq!(civil_from_days(19_723), (2024, 1, 1));
    }
}
