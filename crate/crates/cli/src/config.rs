//! Run configuration: a TOML document holding every setting of every
//! subcommand. Flags override the file; the resolved value is what lands in
//! the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use qdtm::corpus::Preprocessing;
use qdtm::pipeline::FitOptions;
use qdtm::synth::SyntheticSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::output::Manifest;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// JSON-lines documents, or a corpus cache written by `ingest`.
    pub corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Worker threads for the data-parallel stages.
    pub threads: Option<usize>,
    pub preprocessing: Preprocessing,
    pub retrieve: RetrieveConfig,
    /// Queries, expansion, hyperparameters and sampler settings.
    pub fit: FitOptions,
    pub checkpoint: Option<CheckpointConfig>,
    pub eval: EvalConfig,
    pub synth: SyntheticSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrieveConfig {
    pub top: usize,
}

impl Default for RetrieveConfig {
    fn default() -> Self {
        RetrieveConfig {
            top: qdtm::retrieval::DEFAULT_CUTOFF,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    pub path: PathBuf,
    #[serde(default = "default_every")]
    pub every: usize,
    #[serde(default)]
    pub resume: bool,
}

fn default_every() -> usize {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub result: Option<PathBuf>,
    /// Relevance judgements: a ground-truth file from `synth`, or a JSON
    /// object mapping each query to a label or to a list of document ids.
    pub labels: Option<PathBuf>,
    pub k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            result: None,
            labels: None,
            k: 10,
        }
    }
}

impl RunConfig {
    /// Reads a TOML config, or the config stored in a run manifest (any
    /// `.json` path), which replays that run.
    pub fn load(path: &Path) -> CliResult<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let m: Manifest = serde_json::from_str(&text)
                .map_err(|e| CliError::validation(format!("manifest {}: {e}", path.display())))?;
            m.check_format()?;
            return Ok(m.config);
        }
        toml::from_str(&text).map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))
    }
}

pub fn require_file(path: &Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    let p = path
        .clone()
        .ok_or_else(|| CliError::validation(format!("missing {what} path")))?;
    if !p.is_file() {
        return Err(CliError::validation(format!("{what} file {} does not exist", p.display())));
    }
    Ok(p)
}

pub fn optional_file(path: &Option<PathBuf>, what: &str) -> CliResult<Option<PathBuf>> {
    match path {
        None => Ok(None),
        Some(_) => require_file(path, what).map(Some),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_is_default() {
        let c: RunConfig = toml::from_str("").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
        assert!(toml::from_str::<RunConfig>("[fit]\niters = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[fit.hyper]\ndelta = 3").is_err());
    }

    #[test]
    fn partial_sections() {
        let c: RunConfig = toml::from_str(
            r#"
corpus = "docs.jsonl"
[preprocessing]
min_df = 2
[fit]
queries = ["space shuttle"]
iters1 = 10
[fit.hyper]
alpha = 2.0
[fit.expansion]
method = "fre"
"#,
        )
        .unwrap();
        assert_eq!(c.preprocessing.min_df, 2);
        assert!(c.preprocessing.lowercase);
        assert_eq!(c.fit.iters1, 10);
        assert_eq!(c.fit.iters2, 500);
        assert_eq!(c.fit.hyper.alpha, 2.0);
        assert_eq!(c.fit.hyper.beta, 0.5);
        assert_eq!(c.fit.expansion.method, qdtm::concept::Method::Fre);
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.fit.queries = vec!["a b".into()];
        c.checkpoint = Some(CheckpointConfig {
            path: "cp.json".into(),
            every: 5,
            resume: true,
        });
        let s = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&s).unwrap(), c);
    }
}
