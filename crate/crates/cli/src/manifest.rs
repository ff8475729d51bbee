use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use moralab::corpus::SplitProvenance;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Written once, before training starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub experiment_id: String,
    pub tool_version: String,
    pub seed: u64,
    pub corpus_path: String,
    pub corpus_fingerprint: String,
    pub keyword_version: String,
    pub extractor_version: String,
    pub config: ExperimentConfig,
    pub split: SplitProvenance,
    /// Constants that are library defaults rather than published values.
    pub non_paper_constants: Vec<String>,
    pub created_unix: u64,
}

impl ExperimentManifest {
    /// The id hashes everything except the timestamp, so identical inputs
    /// give identical ids.
    pub fn new(
        config: ExperimentConfig,
        corpus_path: &Path,
        corpus_fingerprint: String,
        keyword_version: String,
        split: SplitProvenance,
    ) -> Self {
        let mut m = ExperimentManifest {
            experiment_id: String::new(),
            tool_version: TOOL_VERSION.into(),
            seed: config.train.seed,
            corpus_path: corpus_path.display().to_string(),
            corpus_fingerprint,
            keyword_version,
            extractor_version: moralab::reward::EXTRACTOR_VERSION.into(),
            non_paper_constants: vec![
                format!("clip_epsilon={}", config.train.clip_epsilon),
                format!("kl_beta={}", config.train.kl_beta),
                "inner_updates=1".into(),
                format!("tau={}", config.eval.tau),
            ],
            config,
            split,
            created_unix: 0,
        };
        let body = serde_json::to_vec(&m).expect("manifest serializes");
        let digest = Sha256::digest(&body);
        m.experiment_id = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        m.created_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        m
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
