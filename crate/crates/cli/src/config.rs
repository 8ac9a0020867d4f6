//! JSON experiment configuration. Flags override file values; the resolved
//! values are written back into the same schema and echoed in every output,
//! so an output header can be fed back through `--config`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gammas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicate: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift_cap: Option<f64>,
    /// Per-particle drifts `a_n`, level-major.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drifts: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convention: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

/// Accepted keys, printed with configuration errors.
pub const KEYS: &str = "n, gamma, gammas, dt, t0, t1, seed, replicate, scheme, drift_cap, drifts, init, terminal, \
bundle, target, input, out, delta, n_samples, eps, convention, start, direction, eta, velocity, margin_scale, m, \
iters, threads";

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| {
            CliError::Usage(format!(
                "config error at line {}, column {}: {e}\naccepted keys: {KEYS}",
                e.line(),
                e.column()
            ))
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Single-line JSON for the `# config=` header.
    pub fn to_header(&self) -> String {
        format!(
            "config={}",
            serde_json::to_string(self).expect("config serializes")
        )
    }
}

/// Flag if present, else the config file's value.
pub fn pick<T>(flag: Option<T>, file: &mut Option<T>) -> Option<T>
where
    T: Clone,
{
    if let Some(v) = flag {
        *file = Some(v);
    }
    file.clone()
}

/// Like [`pick`] but falls back to `default` and records it.
pub fn pick_or<T: Clone>(flag: Option<T>, file: &mut Option<T>, default: T) -> T {
    let v = pick(flag, file).unwrap_or(default);
    *file = Some(v.clone());
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let err = ExperimentConfig::parse("{\n  \"gamma\": 8,\n  \"gama\": 1\n}").unwrap_err();
        let CliError::Usage(msg) = err else { panic!() };
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn flags_override_and_defaults_are_recorded() {
        let mut cfg = ExperimentConfig::parse(r#"{"gamma": 8, "seed": 3}"#).unwrap();
        assert_eq!(pick_or(Some(16.0), &mut cfg.gamma, 1.0), 16.0);
        assert_eq!(pick_or(None, &mut cfg.seed, 0), 3);
        assert_eq!(pick_or(None, &mut cfg.dt, 1e-4), 1e-4);
        let back =
            ExperimentConfig::parse(cfg.to_header().strip_prefix("config=").unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
