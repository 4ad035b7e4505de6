//! Run configuration: built-in defaults, then a TOML file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hybridrag_core::ragflow::{Mode, PipelineConfig, PromptTemplate};
use hybridrag_core::remote::Endpoint;
use hybridrag_core::textnorm::{CharNormOptions, CitationRules, Normalizer, StopwordSet};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub kb: PathBuf,
    pub index: PathBuf,
    pub vectors: PathBuf,
    pub template: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub citation_rules: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            kb: "work/kb.jsonl".into(),
            index: "work/bm25.jsonl".into(),
            vectors: "work/vectors.bin".into(),
            template: None,
            stopwords: None,
            citation_rules: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Providers {
    pub embedding: Option<Endpoint>,
    pub scorer: Option<Endpoint>,
    pub llm: Option<Endpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub pipeline: PipelineConfig,
    pub providers: Providers,
    pub mode: Mode,
    pub seed: u64,
    pub jobs: usize,
    /// Deterministic offline providers instead of the configured endpoints.
    pub stub_providers: bool,
    pub ta_marbuta_to_ha: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            pipeline: PipelineConfig::default(),
            providers: Providers::default(),
            mode: Mode::Rag,
            seed: 42,
            jobs: 1,
            stub_providers: false,
            ta_marbuta_to_ha: true,
        }
    }
}

/// Values given on the command line; `None` leaves the lower layer in place.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub stub_providers: bool,
    pub jobs: Option<usize>,
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub k: Option<usize>,
    pub few_shot: Option<usize>,
    pub kb: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: Option<&Path>, over: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::from_toml(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Self::default(),
        };
        cfg.apply(over);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        self.stub_providers |= o.stub_providers;
        macro_rules! set {
            ($($src:ident => $dst:expr),* $(,)?) => {
                $(if let Some(v) = o.$src.clone() { $dst = v; })*
            };
        }
        set! {
            jobs => self.jobs,
            mode => self.mode,
            seed => self.seed,
            n => self.pipeline.n,
            m => self.pipeline.m,
            k => self.pipeline.k,
            few_shot => self.pipeline.few_shot_count,
            kb => self.paths.kb,
            index => self.paths.index,
            vectors => self.paths.vectors,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        if self.jobs == 0 {
            bail!("jobs must be at least 1");
        }
        for p in [&self.paths.template, &self.paths.stopwords, &self.paths.citation_rules].into_iter().flatten() {
            if !p.exists() {
                bail!("configured file {} does not exist", p.display());
            }
        }
        Ok(())
    }

    /// One-line JSON form echoed into output headers.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn normalizer(&self) -> Result<Normalizer> {
        let stopwords = match &self.paths.stopwords {
            Some(p) => StopwordSet::from_path(p)?,
            None => StopwordSet::bundled(),
        };
        let citations = match &self.paths.citation_rules {
            Some(p) => CitationRules::from_path(p)?,
            None => CitationRules::default(),
        };
        Ok(Normalizer::new(
            stopwords,
            citations,
            CharNormOptions {
                ta_marbuta_to_ha: self.ta_marbuta_to_ha,
            },
        ))
    }

    pub fn template(&self) -> Result<PromptTemplate> {
        Ok(match &self.paths.template {
            Some(p) => PromptTemplate::from_path(p)?,
            None => PromptTemplate::bundled(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beats_defaults() {
        let mut cfg = RunConfig::from_toml(
            r#"
            seed = 7
            jobs = 3
            [pipeline]
            k = 4
            m = 100
            "#,
        )
        .unwrap();
        assert_eq!((cfg.seed, cfg.jobs, cfg.pipeline.k, cfg.pipeline.m, cfg.pipeline.n), (7, 3, 4, 100, 1000));
        cfg.apply(&Overrides {
            k: Some(3),
            mode: Some(Mode::Baseline),
            ..Overrides::default()
        });
        assert_eq!((cfg.seed, cfg.pipeline.k, cfg.mode), (7, 3, Mode::Baseline));
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(RunConfig::from_toml("unknown_key = 1").is_err());
        let mut cfg = RunConfig::default();
        cfg.apply(&Overrides {
            k: Some(500),
            ..Overrides::default()
        });
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn provider_tables_parse_without_secrets() {
        let cfg = RunConfig::from_toml(
            r#"
            [providers.llm]
            url = "https://api.example/v1"
            model = "some-model"
            token_env = "LLM_TOKEN"
            "#,
        )
        .unwrap();
        let llm = cfg.providers.llm.as_ref().unwrap();
        assert_eq!(llm.token_env.as_deref(), Some("LLM_TOKEN"));
        assert!(RunConfig::from_toml("[providers.llm]\nurl='x'\nmodel='m'\ntoken='abc'").is_err());
    }
}
