//! Service and harness configuration: a TOML file, then environment
//! overrides named after the dotted key (`tools.remote.base_url` is read
//! from `TOOLS_REMOTE_BASE_URL`).

use std::path::{Path, PathBuf};

use restorekit_core::orchestrator::SessionConfig;
use restorekit_core::tools::{ClassicalConfig, SimulatorConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("environment variable {var}: cannot parse `{value}` as {expected}")]
    Env { var: String, value: String, expected: &'static str },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Root for the blob store and session logs.
    pub data_dir: PathBuf,
    pub server: ServerConfig,
    pub backends: BackendsConfig,
    pub agents: AgentsConfig,
    pub stub: StubConfig,
    pub vote: VoteConfig,
    pub session: SessionDefaults,
    pub simulator: SimulatorConfig,
    pub classical: ClassicalConfig,
    pub tools: ToolsConfig,
    pub hevc: CodecConfig,
    pub vvc: CodecConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            data_dir: PathBuf::from("data"),
            server: ServerConfig::default(),
            backends: BackendsConfig::default(),
            agents: AgentsConfig::default(),
            stub: StubConfig::default(),
            vote: VoteConfig::default(),
            session: SessionDefaults::default(),
            simulator: SimulatorConfig::default(),
            classical: ClassicalConfig::default(),
            tools: ToolsConfig::default(),
            hevc: CodecConfig::default(),
            vvc: CodecConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    pub max_upload_mb: u64,
    /// Sessions created without an explicit choice run to completion in the
    /// background.
    pub auto_advance: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig { bind: "127.0.0.1:8080".into(), max_upload_mb: 32, auto_advance: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Labelled FastAgent, provenance oracles for identification and feedback.
    Oracle,
    /// Lexicon FastAgent and identification from the p-accurate stub.
    Stub,
    /// Every agent and tool on the remote endpoints.
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    pub profile: Profile,
}

impl Default for BackendsConfig {
    fn default() -> Self {
        BackendsConfig { profile: Profile::Oracle }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentBackend {
    Rule,
    Oracle,
    Stub,
    /// Feedback only: never reports clean.
    Never,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSlot {
    /// Unset means "whatever the profile picks".
    pub backend: Option<AgentBackend>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentsConfig {
    pub fast: AgentSlot,
    pub slow: AgentSlot,
    pub feedback: AgentSlot,
    pub remote: RemoteConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StubConfig {
    pub p: f64,
    pub seed: u64,
}

impl Default for StubConfig {
    fn default() -> Self {
        StubConfig { p: 0.6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VoteConfig {
    pub k: u32,
}

impl Default for VoteConfig {
    fn default() -> Self {
        VoteConfig { k: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionDefaults {
    pub max_steps: u32,
    pub fast_feedback: bool,
    pub fast_route: bool,
    pub await_human: bool,
}

impl Default for SessionDefaults {
    fn default() -> Self {
        let d = SessionConfig::default();
        SessionDefaults {
            max_steps: d.max_steps,
            fast_feedback: d.fast_feedback,
            fast_route: d.fast_route,
            await_human: d.await_human,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolFamily {
    Simulated,
    /// Classical baselines where they exist, the simulator behind them.
    Classical,
    /// Remote servers, the simulator behind them.
    Remote,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolsConfig {
    pub family: Option<ToolFamily>,
    pub remote: RemoteConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    pub base_url: Option<String>,
    pub timeout_ms: u64,
    pub max_attempts: u32,
    /// First retry delay; doubles per attempt.
    pub backoff_ms: u64,
    /// FastAgent answers below this confidence count as ambiguous.
    pub confidence_threshold: f64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig { base_url: None, timeout_ms: 30_000, max_attempts: 3, backoff_ms: 100, confidence_threshold: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    /// Reference encoder binary (HM `TAppEncoder`, VTM `EncoderApp`).
    pub encoder_path: Option<PathBuf>,
    /// Optional encoder `.cfg` passed with `-c`.
    pub config_path: Option<PathBuf>,
}

#[derive(Clone, Copy)]
enum Ty {
    Str,
    Int,
    Float,
    Bool,
}

const ENV_KEYS: &[(&str, Ty)] = &[
    ("data_dir", Ty::Str),
    ("server.bind", Ty::Str),
    ("server.max_upload_mb", Ty::Int),
    ("server.auto_advance", Ty::Bool),
    ("backends.profile", Ty::Str),
    ("agents.fast.backend", Ty::Str),
    ("agents.slow.backend", Ty::Str),
    ("agents.feedback.backend", Ty::Str),
    ("agents.remote.base_url", Ty::Str),
    ("agents.remote.timeout_ms", Ty::Int),
    ("agents.remote.max_attempts", Ty::Int),
    ("agents.remote.confidence_threshold", Ty::Float),
    ("stub.p", Ty::Float),
    ("stub.seed", Ty::Int),
    ("vote.k", Ty::Int),
    ("session.max_steps", Ty::Int),
    ("session.fast_feedback", Ty::Bool),
    ("session.fast_route", Ty::Bool),
    ("session.await_human", Ty::Bool),
    ("simulator.unstable_penalty", Ty::Bool),
    ("tools.family", Ty::Str),
    ("tools.remote.base_url", Ty::Str),
    ("tools.remote.timeout_ms", Ty::Int),
    ("tools.remote.max_attempts", Ty::Int),
    ("hevc.encoder_path", Ty::Str),
    ("hevc.config_path", Ty::Str),
    ("vvc.encoder_path", Ty::Str),
    ("vvc.config_path", Ty::Str),
];

pub fn env_name(key: &str) -> String {
    key.replace('.', "_").to_uppercase()
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) {
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().expect("non-empty key");
    let mut table = root;
    for p in parts {
        table = table
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .expect("config sections are tables");
    }
    table.insert(leaf.to_string(), value);
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: Config = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::from_toml(&text)
    }

    /// File (if any), then the process environment.
    pub fn resolve(path: Option<&Path>) -> Result<Self, ConfigError> {
        let base = match path {
            Some(p) => Self::load(p)?,
            None => Config::default(),
        };
        base.with_env(|k| std::env::var(k).ok())
    }

    /// Applies overrides from `lookup`, keyed by [`env_name`].
    pub fn with_env(self, lookup: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut table = match toml::Value::try_from(&self).map_err(|e| ConfigError::Invalid(e.to_string()))? {
            toml::Value::Table(t) => t,
            _ => unreachable!("config serializes as a table"),
        };
        let mut touched = false;
        for &(key, ty) in ENV_KEYS {
            let var = env_name(key);
            let Some(raw) = lookup(&var) else { continue };
            let bad = |expected| ConfigError::Env { var: var.clone(), value: raw.clone(), expected };
            let value = match ty {
                Ty::Str => toml::Value::String(raw.clone()),
                Ty::Int => toml::Value::Integer(raw.trim().parse().map_err(|_| bad("an integer"))?),
                Ty::Float => toml::Value::Float(raw.trim().parse().map_err(|_| bad("a number"))?),
                Ty::Bool => toml::Value::Boolean(match raw.trim() {
                    "1" | "true" | "yes" | "on" => true,
                    "0" | "false" | "no" | "off" => false,
                    _ => return Err(bad("a boolean")),
                }),
            };
            set_path(&mut table, key, value);
            touched = true;
        }
        if !touched {
            return Ok(self);
        }
        let c: Config = toml::Value::Table(table).try_into()?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.session_config().validate().map_err(ConfigError::Invalid)?;
        self.simulator.validate().map_err(ConfigError::Invalid)?;
        if !(0.0..=1.0).contains(&self.stub.p) {
            return Err(ConfigError::Invalid(format!("stub.p = {} outside [0, 1]", self.stub.p)));
        }
        for (name, r) in [("tools.remote", &self.tools.remote), ("agents.remote", &self.agents.remote)] {
            if r.max_attempts == 0 {
                return Err(ConfigError::Invalid(format!("{name}.max_attempts must be at least 1")));
            }
        }
        if self.server.max_upload_mb == 0 {
            return Err(ConfigError::Invalid("server.max_upload_mb must be positive".into()));
        }
        Ok(())
    }

    /// Session defaults; requests may override individual fields.
    pub fn session_config(&self) -> SessionConfig {
        SessionConfig {
            vote_k: self.vote.k,
            max_steps: self.session.max_steps,
            fast_feedback: self.session.fast_feedback,
            fast_route: self.session.fast_route,
            await_human: self.session.await_human,
        }
    }

    pub fn max_upload_bytes(&self) -> usize {
        (self.server.max_upload_mb as usize).saturating_mul(1024 * 1024)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::from_toml("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.server.max_upload_mb, 32);
        assert_eq!(c.tools.remote.max_attempts, 3);
        assert_eq!(c.session_config(), SessionConfig::default());
    }

    #[test]
    fn env_overrides_dotted_keys() {
        let env: HashMap<&str, &str> = [
            ("HEVC_ENCODER_PATH", "/opt/hm/TAppEncoder"),
            ("TOOLS_REMOTE_BASE_URL", "http://gpu:9000"),
            ("TOOLS_REMOTE_MAX_ATTEMPTS", "5"),
            ("STUB_P", "0.9"),
            ("SESSION_AWAIT_HUMAN", "true"),
        ]
        .into();
        let c = Config::from_toml("[server]\nbind = \"0.0.0.0:1\"\n")
            .unwrap()
            .with_env(|k| env.get(k).map(|v| v.to_string()))
            .unwrap();
        assert_eq!(c.hevc.encoder_path.as_deref(), Some(Path::new("/opt/hm/TAppEncoder")));
        assert_eq!(c.tools.remote.base_url.as_deref(), Some("http://gpu:9000"));
        assert_eq!(c.tools.remote.max_attempts, 5);
        assert_eq!(c.stub.p, 0.9);
        assert!(c.session.await_human);
        assert_eq!(c.server.bind, "0.0.0.0:1");
    }

    #[test]
    fn bad_values_are_reported() {
        let err = Config::default().with_env(|k| (k == "VOTE_K").then(|| "four".to_string())).unwrap_err();
        assert!(matches!(err, ConfigError::Env { .. }));
        let err = Config::default().with_env(|k| (k == "VOTE_K").then(|| "4".to_string())).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "{err}");
        assert!(Config::from_toml("[server]\nport = 3\n").is_err());
    }
}
