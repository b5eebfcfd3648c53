//! Machine-readable result file of an `analyze` run.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SstaError};
use crate::gmm::Moments;
use crate::monte_carlo::{McConfig, McResult};
use crate::timing_graph::propagate::{NodeResult, PropagationConfig, PropagationResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    /// Lowercase hex SHA-256 of the graph file bytes.
    pub input_sha256: String,
    pub config: ReportConfig,
    pub levels: Vec<Vec<String>>,
    pub nodes: Vec<NodeResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_check: Option<BTreeMap<String, SinkComparison>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub propagation: PropagationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<McConfig>,
    /// Worker threads requested through `SSTA_THREADS`, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkComparison {
    pub analytic: Moments,
    pub mc: McResult,
    /// analytic mean - MC mean.
    pub mean_gap: f64,
    pub mean_gap_in_se: f64,
    pub mean_gap_rel: f64,
    pub std_gap: f64,
    pub std_gap_rel: f64,
}

impl SinkComparison {
    pub fn new(analytic: Moments, mc: McResult) -> Self {
        let mean_gap = analytic.mean - mc.mean;
        let std_gap = analytic.std - mc.std;
        SinkComparison {
            mean_gap,
            mean_gap_in_se: mean_gap / mc.se_mean,
            mean_gap_rel: mean_gap / mc.mean,
            std_gap,
            std_gap_rel: std_gap / mc.std,
            analytic,
            mc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub propagation_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo_seconds: Option<f64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunReport {
    pub fn new(input: &[u8], config: ReportConfig, result: PropagationResult) -> Self {
        RunReport {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            input_sha256: sha256_hex(input),
            config,
            levels: result.levels,
            nodes: result.nodes,
            mc_check: None,
            timings: None,
        }
    }

    pub fn node(&self, id: &str) -> Option<&NodeResult> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| SstaError::numerical(format!("cannot serialise report: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SstaError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }
}

/// Writes `contents` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| SstaError::Io(e.error.to_string()))?;
    Ok(())
}
