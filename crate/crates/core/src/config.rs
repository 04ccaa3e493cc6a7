//! Run configuration: JSON file, dotted `--set` overrides, and the config
//! hash embedded into every artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack;
use crate::bench::RunSettings;
use crate::corpus::AttackMethod;
use crate::error::{Error, Result};
use crate::generator::{ChatEndpointConfig, GeneratorBehaviorConfig, GeneratorKind};
use crate::retriever::{self, Embedder, OfflineEmbedder, RemoteEmbedder};
use crate::templates;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Offline,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderSection {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub seed: u64,
    pub endpoint: Option<String>,
    pub timeout_s: u64,
}

impl Default for EmbedderSection {
    fn default() -> Self {
        EmbedderSection {
            kind: EmbedderKind::Offline,
            dim: retriever::DEFAULT_DIM,
            seed: 0,
            endpoint: None,
            timeout_s: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSection {
    pub kind: GeneratorKind,
    pub injection_phrase_patterns: Vec<String>,
    pub template_marker_bonus: f64,
    pub hijack_compliance: f64,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub timeout_s: u64,
    pub retries: u32,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let behavior = GeneratorBehaviorConfig::default();
        GeneratorSection {
            kind: GeneratorKind::MockR1,
            injection_phrase_patterns: behavior.injection_phrase_patterns,
            template_marker_bonus: behavior.template_marker_bonus,
            hijack_compliance: behavior.hijack_compliance,
            endpoint: None,
            model: None,
            timeout_s: 120,
            retries: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackSection {
    pub methods: Vec<AttackMethod>,
    pub k: usize,
    pub max_rounds: u32,
    pub keep_failed_rounds: bool,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            methods: AttackMethod::ALL.to_vec(),
            k: attack::DEFAULT_K,
            max_rounds: attack::DEFAULT_MAX_ROUNDS,
            keep_failed_rounds: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateSection {
    pub min_support: f64,
    pub sample_size: usize,
    pub path: Option<PathBuf>,
}

impl Default for TemplateSection {
    fn default() -> Self {
        TemplateSection {
            min_support: templates::DEFAULT_MIN_SUPPORT,
            sample_size: 10,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSection {
    pub cases: usize,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        BenchmarkSection {
            cases: crate::bench::DEFAULT_CASES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub workers: usize,
    pub output_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            workers: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub embedder: EmbedderSection,
    pub generator: GeneratorSection,
    pub attack: AttackSection,
    pub template: TemplateSection,
    pub benchmark: BenchmarkSection,
    pub run: RunSection,
}

impl RunConfig {
    /// Loads the JSON config file, or the defaults when `path` is `None`,
    /// then applies dotted `key.path=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut value = match path {
            Some(p) => {
                let raw = std::fs::read_to_string(p)
                    .map_err(|e| Error::io(p.display().to_string(), e))?;
                serde_json::from_str(&raw)?
            }
            None => serde_json::to_value(RunConfig::default())?,
        };
        apply_overrides(&mut value, overrides)?;
        let config: RunConfig = serde_json::from_value(value)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.attack.methods.is_empty() {
            return Err(Error::InvalidConfig("attack.methods must be non-empty".into()));
        }
        if self.attack.k == 0 {
            return Err(Error::InvalidConfig("attack.k must be >= 1".into()));
        }
        if self.attack.max_rounds == 0 {
            return Err(Error::InvalidConfig("attack.max_rounds must be >= 1".into()));
        }
        if !(self.template.min_support > 0.0 && self.template.min_support <= 1.0) {
            return Err(Error::InvalidConfig("template.min_support must be in (0,1]".into()));
        }
        if self.benchmark.cases == 0 {
            return Err(Error::InvalidConfig("benchmark.cases must be >= 1".into()));
        }
        if self.embedder.kind == EmbedderKind::Remote && self.embedder.endpoint.is_none() {
            return Err(Error::InvalidConfig("embedder.endpoint required for remote embedder".into()));
        }
        if self.generator.kind == GeneratorKind::Remote
            && (self.generator.endpoint.is_none() || self.generator.model.is_none())
        {
            return Err(Error::InvalidConfig(
                "generator.endpoint and generator.model required for remote generator".into(),
            ));
        }
        self.behavior().validate()?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON serialization; embedded into every
    /// artifact so outputs can be traced back to their exact configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn build_embedder(&self) -> Result<Box<dyn Embedder>> {
        match self.embedder.kind {
            EmbedderKind::Offline => Ok(Box::new(OfflineEmbedder::new(
                self.embedder.dim,
                self.embedder.seed,
            ))),
            EmbedderKind::Remote => {
                let endpoint = self
                    .embedder
                    .endpoint
                    .clone()
                    .ok_or_else(|| Error::InvalidConfig("embedder.endpoint missing".into()))?;
                Ok(Box::new(RemoteEmbedder::new(
                    endpoint,
                    self.embedder.dim,
                    self.embedder.timeout_s,
                )?))
            }
        }
    }

    pub fn behavior(&self) -> GeneratorBehaviorConfig {
        GeneratorBehaviorConfig {
            injection_phrase_patterns: self.generator.injection_phrase_patterns.clone(),
            template_marker_bonus: self.generator.template_marker_bonus,
            hijack_compliance: self.generator.hijack_compliance,
            seed: self.seed,
        }
    }

    pub fn chat_endpoint(&self) -> Result<ChatEndpointConfig> {
        Ok(ChatEndpointConfig {
            endpoint: self
                .generator
                .endpoint
                .clone()
                .ok_or_else(|| Error::InvalidConfig("generator.endpoint missing".into()))?,
            model: self
                .generator
                .model
                .clone()
                .ok_or_else(|| Error::InvalidConfig("generator.model missing".into()))?,
            timeout_s: self.generator.timeout_s,
            retries: self.generator.retries,
            terminator: templates::DEFAULT_TERMINATOR.to_string(),
        })
    }

    pub fn run_settings(&self) -> RunSettings {
        RunSettings {
            generator_kind: self.generator.kind,
            behavior: self.behavior(),
            k: self.attack.k,
            max_rounds: self.attack.max_rounds,
            keep_failed_rounds: self.attack.keep_failed_rounds,
            workers: self.run.workers,
        }
    }
}

/// Applies `a.b.c=value` overrides onto the JSON representation. The value
/// side is parsed as JSON where possible and falls back to a plain string,
/// so `attack.k=3` and `run.output_dir=out/alt` both work.
pub fn apply_overrides(value: &mut serde_json::Value, overrides: &[String]) -> Result<()> {
    for entry in overrides {
        let (path, raw) = entry
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("override `{entry}` is not key=value")))?;
        let parsed: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let segments: Vec<&str> = path.split('.').collect();
        if segments.iter().any(|s| s.is_empty()) {
            return Err(Error::InvalidConfig(format!("override `{entry}` has an empty key segment")));
        }
        let (last, parents) = segments.split_last().expect("split_once yields a key");
        let mut cursor = &mut *value;
        for seg in parents {
            cursor = cursor
                .as_object_mut()
                .ok_or_else(|| Error::InvalidConfig(format!("override `{entry}`: `{seg}` is not an object path")))?
                .entry(seg.to_string())
                .or_insert_with(|| serde_json::Value::Object(Default::default()));
        }
        cursor
            .as_object_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("override `{entry}`: `{last}` is not an object path")))?
            .insert(last.to_string(), parsed);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn load_defaults_with_overrides() {
        let cfg = RunConfig::load(
            None,
            &[
                "attack.k=3".to_string(),
                "generator.kind=\"mock_standard\"".to_string(),
                "run.output_dir=out/alt".to_string(),
                "attack.methods=[\"na\",\"cot\"]".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.attack.k, 3);
        assert_eq!(cfg.generator.kind, GeneratorKind::MockStandard);
        assert_eq!(cfg.run.output_dir, PathBuf::from("out/alt"));
        assert_eq!(cfg.attack.methods, vec![AttackMethod::Na, AttackMethod::Cot]);
    }

    #[test]
    fn bad_override_shapes_are_rejected() {
        assert!(RunConfig::load(None, &["no_equals".to_string()]).is_err());
        assert!(RunConfig::load(None, &["attack.k=0".to_string()]).is_err());
        assert!(RunConfig::load(None, &["seed.deep=1".to_string()]).is_err());
    }

    #[test]
    fn partial_file_fills_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"seed": 9, "attack": {"k": 2}}"#).unwrap();
        let cfg = RunConfig::load(Some(&path), &[]).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.attack.k, 2);
        assert_eq!(cfg.attack.max_rounds, attack::DEFAULT_MAX_ROUNDS);
        assert_eq!(cfg.embedder.dim, retriever::DEFAULT_DIM);
    }

    #[test]
    fn remote_embedder_requires_endpoint() {
        let err = RunConfig::load(None, &["embedder.kind=\"remote\"".to_string()]).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = RunConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }
}
