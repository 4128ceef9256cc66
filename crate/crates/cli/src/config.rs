//! Experiment configuration: one TOML file with sections for the network
//! suite, scheme selection, latency knobs, adversary, and pattern fuzzing.
//! Archiving the file reproduces the experiment; the only other inputs are
//! the flags that override seed and output directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tilesec::perf::LatencyParams;
use tilesec::schemes::{Scheme, SchemeConfig};

/// Everything one invocation needs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Output directory; overridden by `TILESEC_OUT` and then `--out`.
    pub out_dir: Option<PathBuf>,
    /// Report formats to emit: any of "csv", "json".
    pub formats: Vec<String>,
    pub network: NetworkSection,
    pub schemes: SchemesSection,
    pub latency: LatencyParams,
    pub scheme_params: SchemeConfig,
    pub adversary: AdversarySection,
    pub patterns: PatternsSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    /// Benchmark descriptions, run in order by `compare`.
    pub files: Vec<PathBuf>,
    /// Single-layer description whose first layer seeds the widening study.
    pub widen_base: Option<PathBuf>,
    /// Spatial extents for the widening study (first entry is the base).
    pub widths: Vec<u32>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            files: Vec::new(),
            widen_base: None,
            widths: vec![32, 56, 64, 128, 160, 192],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemesSection {
    pub enabled: Vec<Scheme>,
}

impl Default for SchemesSection {
    fn default() -> Self {
        Self {
            enabled: Scheme::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarySection {
    /// Action script to replay instead of the built-in campaign.
    pub script: Option<PathBuf>,
    /// Randomized injections per attack class (built-in campaign).
    pub trials: u32,
    /// Scheme defending the run.
    pub scheme: Scheme,
}

impl Default for AdversarySection {
    fn default() -> Self {
        Self {
            script: None,
            trials: 250,
            scheme: Scheme::Seculator,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternsSection {
    /// Row ids to fuzz; absent means every catalogued row, an explicit
    /// empty list is a vacuous pass.
    pub rows: Option<Vec<String>>,
    /// Random shapes drawn per row.
    pub shapes_per_row: u32,
    /// Negative control: pin this triplet instead of the derived one.
    pub r#override: Option<TripletOverride>,
}

impl Default for PatternsSection {
    fn default() -> Self {
        Self {
            rows: None,
            shapes_per_row: 100,
            r#override: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripletOverride {
    pub row: String,
    /// "write" or "read".
    pub dir: String,
    pub eta: u64,
    pub kappa: u32,
    pub rho: u64,
}

/// A config problem, pointing at the offending line where known.
#[derive(Debug)]
pub struct ConfigError {
    pub file: PathBuf,
    pub line: Option<usize>,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{line}: {}", self.file.display(), self.msg),
            None => write!(f, "{}: {}", self.file.display(), self.msg),
        }
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError {
            file: path.to_path_buf(),
            line: None,
            msg: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].lines().count().max(1));
            ConfigError {
                file: path.to_path_buf(),
                line,
                msg: e.message().to_string(),
            }
        })
    }

    /// The defaults, as a commented-out-free TOML document.
    pub fn dump_default() -> String {
        toml::to_string_pretty(&ExperimentConfig {
            formats: vec!["csv".into(), "json".into()],
            ..Default::default()
        })
        .expect("defaults serialize")
    }

    pub fn formats(&self) -> (bool, bool) {
        if self.formats.is_empty() {
            (true, true)
        } else {
            (
                self.formats.iter().any(|f| f == "csv"),
                self.formats.iter().any(|f| f == "json"),
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let dumped = ExperimentConfig::dump_default();
        let parsed: ExperimentConfig = toml::from_str(&dumped).unwrap();
        assert_eq!(parsed.patterns.shapes_per_row, 100);
        assert_eq!(parsed.schemes.enabled.len(), 5);
        assert_eq!(parsed.network.widths, vec![32, 56, 64, 128, 160, 192]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        fs::write(&path, "seed = 7\n[patterns]\nshapes_per_row = \"many\"\n").unwrap();
        let err = ExperimentConfig::load(&path).unwrap_err();
        assert_eq!(err.line, Some(3), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        fs::write(&path, "sede = 7\n").unwrap();
        assert!(ExperimentConfig::load(&path).is_err());
    }
}
