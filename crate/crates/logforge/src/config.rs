//! TOML run configuration. Relative paths resolve against the directory of
//! the config file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use logforge_core::drain::DrainConfig;
use logforge_core::instruct::PromptTemplate;
use logforge_core::metrics::TextMetricConfig;
use logforge_core::{Canonicalizer, Capability, Fraction};
use serde::{Deserialize, Serialize};

use crate::build::BuildSettings;
use crate::decompose::DecomposeSettings;
use crate::gateway::{HttpConfig, RetryPolicy};
use crate::harness::{Level, SessionMode};
use crate::ingest::FieldMap;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{key}: file not found: {path}")]
    MissingFile { key: String, path: PathBuf },
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sources {
    /// Domain → structured log CSV with templates.
    pub parsing: BTreeMap<String, PathBuf>,
    /// Domain → labelled template file.
    pub anomaly: BTreeMap<String, PathBuf>,
    /// Domain → labelled structured log CSV, for session-level evaluation.
    pub sessions: BTreeMap<String, PathBuf>,
    pub community: Option<PathBuf>,
    pub community_fields: FieldMap,
    /// Decomposition results written by `decompose`.
    pub decomposed: Option<PathBuf>,
    /// Pair ids removed during calibration.
    pub exclusions: Option<PathBuf>,
    pub placeholder_patterns: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub http: HttpConfig,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub token_budget: Option<u64>,
    pub audit_log: Option<PathBuf>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            http: HttpConfig::default(),
            model: "loglm".into(),
            temperature: 0.0,
            max_tokens: 512,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
            token_budget: None,
            audit_log: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildConfig {
    pub output_dir: PathBuf,
    pub parsing_fraction: Fraction,
    pub anomaly_fraction: Fraction,
    pub irs_train_fraction: Fraction,
    pub anomaly_counts: BTreeMap<String, usize>,
    pub irs_domain: String,
    /// Replacements for the default parsing/anomaly prompts.
    pub templates: Vec<PromptTemplate>,
}

impl Default for BuildConfig {
    fn default() -> Self {
        let d = BuildSettings::default();
        BuildConfig {
            output_dir: "dataset".into(),
            parsing_fraction: d.parsing_fraction,
            anomaly_fraction: d.anomaly_fraction,
            irs_train_fraction: d.irs_train_fraction,
            anomaly_counts: [("BGL".to_string(), 194), ("Spirit".to_string(), 138)].into(),
            irs_domain: d.irs_domain,
            templates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecomposeConfig {
    pub output_dir: PathBuf,
    #[serde(flatten)]
    pub settings: DecomposeSettings,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        DecomposeConfig {
            output_dir: "decomposed".into(),
            settings: DecomposeSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// Grow the tree on the training logs, then assign test logs without
    /// changing it.
    #[default]
    WarmThenFreeze,
    /// Parse every log of the domain as one stream and score the test logs.
    Stream,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub drain: DrainConfig,
    pub mode: BaselineMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub capabilities: Vec<Capability>,
    pub output_dir: PathBuf,
    pub level: Level,
    pub session_mode: SessionMode,
    pub window: usize,
    pub text_metrics: TextMetricConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            capabilities: Capability::ALL.to_vec(),
            output_dir: "eval".into(),
            level: Level::Template,
            session_mode: SessionMode::Lift,
            window: logforge_core::split::DEFAULT_WINDOW,
            text_metrics: TextMetricConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub sources: Sources,
    #[serde(default)]
    pub llm: LlmConfig,
    #[serde(default)]
    pub build: BuildConfig,
    #[serde(default)]
    pub decompose: DecomposeConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Directory of the config file; relative paths were resolved against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            e => e,
        })
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::new(),
            message: e.to_string(),
        })?;
        config.base_dir = base_dir.to_path_buf();
        config.resolve_paths();
        Ok(config)
    }

    fn resolve_paths(&mut self) {
        let base = self.base_dir.clone();
        let s = &mut self.sources;
        for p in s
            .parsing
            .values_mut()
            .chain(s.anomaly.values_mut())
            .chain(s.sessions.values_mut())
        {
            resolve(&base, p);
        }
        for p in [&mut s.community, &mut s.decomposed, &mut s.exclusions]
            .into_iter()
            .flatten()
        {
            resolve(&base, p);
        }
        if let Some(p) = &mut self.llm.audit_log {
            resolve(&base, p);
        }
        resolve(&base, &mut self.build.output_dir);
        resolve(&base, &mut self.decompose.output_dir);
        resolve(&base, &mut self.eval.output_dir);
    }

    /// Checks values that do not depend on which command runs.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.canonicalizer()?;
        self.build_settings()?;
        self.baseline
            .drain
            .validate()
            .map_err(|e| invalid("baseline.drain", e.to_string()))?;
        if self.llm.max_in_flight == 0 {
            return Err(invalid("llm.max_in_flight", "must be at least 1"));
        }
        if self.decompose.settings.max_in_flight == 0 {
            return Err(invalid("decompose.max_in_flight", "must be at least 1"));
        }
        if self.eval.window == 0 {
            return Err(invalid("eval.window", "must be at least 1"));
        }
        Ok(())
    }

    pub fn canonicalizer(&self) -> Result<Canonicalizer, ConfigError> {
        match &self.sources.placeholder_patterns {
            None => Ok(Canonicalizer::default()),
            Some(p) => Canonicalizer::new(p)
                .map_err(|e| invalid("sources.placeholder_patterns", e.to_string())),
        }
    }

    pub fn build_settings(&self) -> Result<BuildSettings, ConfigError> {
        let mut settings = BuildSettings {
            seed: self.seed,
            parsing_fraction: self.build.parsing_fraction,
            anomaly_fraction: self.build.anomaly_fraction,
            anomaly_counts: self.build.anomaly_counts.clone(),
            irs_train_fraction: self.build.irs_train_fraction,
            irs_domain: self.build.irs_domain.clone(),
            ..BuildSettings::default()
        };
        for t in &self.build.templates {
            t.validate()
                .map_err(|e| invalid(&format!("build.templates.{}", t.name), e.to_string()))?;
            match t.capability {
                Capability::Parsing => settings.parsing_template = t.clone(),
                Capability::Anomaly => settings.anomaly_template = t.clone(),
                c => {
                    return Err(invalid(
                        &format!("build.templates.{}", t.name),
                        format!("{c} prompts come from the decomposition, not a template"),
                    ))
                }
            }
        }
        Ok(settings)
    }

    /// Every configured source path that must exist before `build` runs.
    pub fn require_build_sources(&self) -> Result<(), ConfigError> {
        let s = &self.sources;
        for (d, p) in &s.parsing {
            require(&format!("sources.parsing.{d}"), p)?;
        }
        for (d, p) in &s.anomaly {
            require(&format!("sources.anomaly.{d}"), p)?;
            if !self.build.anomaly_counts.contains_key(d) {
                return Err(invalid(
                    &format!("build.anomaly_counts.{d}"),
                    "no subset size for this domain",
                ));
            }
        }
        if let Some(p) = &s.decomposed {
            require("sources.decomposed", p)?;
        }
        if let Some(p) = &s.exclusions {
            require("sources.exclusions", p)?;
        }
        if s.parsing.is_empty() && s.anomaly.is_empty() && s.decomposed.is_none() {
            return Err(invalid("sources", "nothing to build"));
        }
        Ok(())
    }

    pub fn require_community(&self) -> Result<&Path, ConfigError> {
        let p = self
            .sources
            .community
            .as_deref()
            .ok_or_else(|| invalid("sources.community", "not set"))?;
        require("sources.community", p)?;
        Ok(p)
    }

    pub fn require_sessions(&self, domains: &[String]) -> Result<(), ConfigError> {
        for d in domains {
            let p = self.sources.sessions.get(d).ok_or_else(|| {
                invalid(
                    &format!("sources.sessions.{d}"),
                    "session-level evaluation needs labelled logs",
                )
            })?;
            require(&format!("sources.sessions.{d}"), p)?;
        }
        Ok(())
    }
}

fn require(key: &str, path: &Path) -> Result<(), ConfigError> {
    if path.exists() {
        Ok(())
    } else {
        Err(ConfigError::MissingFile {
            key: key.to_string(),
            path: path.to_path_buf(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = RunConfig::from_toml("seed = 7\n", Path::new("/cfg")).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.build.output_dir, PathBuf::from("/cfg/dataset"));
        assert_eq!(c.build.anomaly_counts["BGL"], 194);
        assert_eq!(c.eval.window, 100);
        c.validate().unwrap();
    }

    #[test]
    fn seed_is_required() {
        assert!(matches!(
            RunConfig::from_toml("", Path::new(".")),
            Err(ConfigError::Parse { .. })
        ));
    }

    #[test]
    fn paths_resolve_against_config_dir() {
        let c = RunConfig::from_toml(
            "seed = 1\n[sources.parsing]\nHDFS = \"data/hdfs.csv\"\nLinux = \"/abs/linux.csv\"\n",
            Path::new("/work"),
        )
        .unwrap();
        assert_eq!(
            c.sources.parsing["HDFS"],
            PathBuf::from("/work/data/hdfs.csv")
        );
        assert_eq!(c.sources.parsing["Linux"], PathBuf::from("/abs/linux.csv"));
    }

    #[test]
    fn missing_source_fails_before_work() {
        let c = RunConfig::from_toml(
            "seed = 1\n[sources.parsing]\nHDFS = \"nope.csv\"\n",
            Path::new("/nonexistent"),
        )
        .unwrap();
        assert!(matches!(
            c.require_build_sources(),
            Err(ConfigError::MissingFile { .. })
        ));
    }

    #[test]
    fn irs_template_override_is_rejected() {
        let c = RunConfig::from_toml(
            "seed = 1\n[[build.templates]]\nname = \"x\"\nbody = \"{log}\"\ncapability = \"interpretation\"\n",
            Path::new("."),
        )
        .unwrap();
        assert!(c.validate().is_err());
    }
}
