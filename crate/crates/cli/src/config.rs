//! Run configuration: one JSON file with per-command sections.
//!
//! Validation happens in two passes. A structural pass walks the raw JSON
//! against the known schema and collects *every* offending key (unknown,
//! missing, wrong kind) so a bad config is fixed in one round trip; only
//! then is the typed structure deserialized.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use loft_kit::error::{Error, Result};
use loft_kit::harness::{SweepConfig, TaskConfig, TrainConfig};
use loft_kit::recovery::RecoveryConfig;
use loft_kit::support::SupportMethod;

/// One support request in a probe/train run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupportSpec {
    pub method: SupportMethod,
    pub r: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub indices: Option<Vec<usize>>,
    #[serde(default)]
    pub stage: Option<usize>,
    #[serde(default)]
    pub block: Option<usize>,
}

/// Calibration-gradient settings for support construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationSpec {
    #[serde(default = "default_batches")]
    pub batches: usize,
    /// Omit for full-coverage batches.
    #[serde(default)]
    pub batch_size: Option<usize>,
}

fn default_batches() -> usize {
    4
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        CalibrationSpec {
            batches: default_batches(),
            batch_size: None,
        }
    }
}

/// Where the recover command gets its frozen weight: either
/// `{"path": "W.csv"}` or `{"d_out": .., "d_in": .., "seed": ..}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RecoverWeights {
    Path {
        path: PathBuf,
    },
    Random {
        d_out: usize,
        d_in: usize,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoverSection {
    pub w0: RecoverWeights,
    pub configs: Vec<RecoveryConfig>,
}

/// Full config file; commands require the sections they use.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub task: Option<TaskConfig>,
    #[serde(default)]
    pub supports: Option<Vec<SupportSpec>>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub calibration: Option<CalibrationSpec>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub recover: Option<RecoverSection>,
}

/// Loads, structurally validates, and deserializes a config file.
/// Returns the raw bytes too, for manifest hashing.
pub fn load_config(path: &Path, required: &[&str]) -> Result<(RunConfig, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let value: Value = serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        detail: e.to_string(),
    })?;
    let issues = validate_structure(&value, required);
    if !issues.is_empty() {
        return Err(Error::Config { issues });
    }
    let config: RunConfig = serde_json::from_value(value).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        detail: e.to_string(),
    })?;
    Ok((config, bytes))
}

fn known(keys: &[&str]) -> BTreeSet<String> {
    keys.iter().map(|s| s.to_string()).collect()
}

/// Collects every structural problem instead of stopping at the first.
fn validate_structure(value: &Value, required: &[&str]) -> Vec<String> {
    let mut issues = Vec::new();
    let Some(top) = value.as_object() else {
        return vec!["config root must be a JSON object".to_string()];
    };
    let top_known = known(&["task", "supports", "train", "calibration", "sweep", "recover"]);
    for key in top.keys() {
        if !top_known.contains(key) {
            issues.push(format!("unknown key '{key}'"));
        }
    }
    for &req in required {
        if !top.contains_key(req) {
            issues.push(format!("missing required section '{req}'"));
        }
    }
    if let Some(task) = top.get("task") {
        check_object_keys(
            task,
            "task",
            &[
                "d_in",
                "d_out",
                "n",
                "r_star",
                "seed",
                "noise",
                "weight_mode",
                "whitened",
                "rotation_scale",
            ],
            &["d_in", "d_out", "n", "r_star", "seed"],
            &mut issues,
        );
    }
    if let Some(train) = top.get("train") {
        check_object_keys(
            train,
            "train",
            &[
                "learning_rate",
                "steps",
                "optimizer",
                "batch_size",
                "seed",
                "eval_every",
            ],
            &["learning_rate", "steps", "seed"],
            &mut issues,
        );
    }
    if let Some(supports) = top.get("supports") {
        match supports.as_array() {
            Some(list) => {
                for (i, s) in list.iter().enumerate() {
                    check_object_keys(
                        s,
                        &format!("supports[{i}]"),
                        &["method", "r", "seed", "indices", "stage", "block"],
                        &["method", "r"],
                        &mut issues,
                    );
                }
            }
            None => issues.push("'supports' must be an array".to_string()),
        }
    }
    if let Some(cal) = top.get("calibration") {
        check_object_keys(cal, "calibration", &["batches", "batch_size"], &[], &mut issues);
    }
    if let Some(sweep) = top.get("sweep") {
        check_object_keys(
            sweep,
            "sweep",
            &[
                "axis",
                "grid",
                "methods",
                "seeds",
                "rank",
                "calibration_batches",
                "calibration_batch_size",
            ],
            &["axis", "grid", "methods", "seeds", "rank"],
            &mut issues,
        );
    }
    if let Some(recover) = top.get("recover") {
        check_object_keys(recover, "recover", &["w0", "configs"], &["w0", "configs"], &mut issues);
        if let Some(w0) = recover.get("w0") {
            match w0.as_object() {
                Some(obj) if obj.contains_key("path") => {
                    check_object_keys(w0, "recover.w0", &["path"], &["path"], &mut issues);
                }
                Some(_) => {
                    check_object_keys(
                        w0,
                        "recover.w0",
                        &["d_out", "d_in", "seed"],
                        &["d_out", "d_in"],
                        &mut issues,
                    );
                }
                None => issues.push("'recover.w0' must be an object".to_string()),
            }
        }
        if let Some(configs) = recover.get("configs").and_then(|c| c.as_array()) {
            for (i, cfg) in configs.iter().enumerate() {
                let ctx = format!("recover.configs[{i}]");
                let Some(obj) = cfg.as_object() else {
                    issues.push(format!("{ctx} must be an object"));
                    continue;
                };
                match obj.get("method").and_then(|m| m.as_str()) {
                    Some(method) => {
                        let allowed: &[&str] = match method {
                            "full_oft" => &["method", "seed"],
                            "block_oft" => &["method", "block_width", "seed"],
                            "goft" => &["method", "rotations"],
                            "boft" => &["method", "block_width", "stages", "seed"],
                            "hra" => &["method", "vectors", "depth", "seed"],
                            "psoft" => &["method", "r", "seed"],
                            other => {
                                issues.push(format!("{ctx}: unknown method '{other}'"));
                                continue;
                            }
                        };
                        let allowed = known(allowed);
                        for key in obj.keys() {
                            if !allowed.contains(key) {
                                issues.push(format!("{ctx}: unknown key '{key}'"));
                            }
                        }
                    }
                    None => issues.push(format!("{ctx}: missing 'method'")),
                }
            }
        }
    }
    issues
}

fn check_object_keys(
    value: &Value,
    context: &str,
    allowed: &[&str],
    required: &[&str],
    issues: &mut Vec<String>,
) {
    let Some(obj) = value.as_object() else {
        issues.push(format!("'{context}' must be an object"));
        return;
    };
    let allowed = known(allowed);
    for key in obj.keys() {
        if !allowed.contains(key) {
            issues.push(format!("unknown key '{context}.{key}'"));
        }
    }
    for &req in required {
        if !obj.contains_key(req) {
            issues.push(format!("missing required key '{context}.{req}'"));
        }
    }
}
