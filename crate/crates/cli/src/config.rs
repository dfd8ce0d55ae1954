use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use casql_core::llm::{
    Gateway, HttpBackend, HttpConfig, LlmBackend, LlmError, PromptTemplates, Role, RoleSettings, ScriptedBackend,
    SyntheticBackend, DEFAULT_MODEL,
};
use casql_core::schema::RenderOptions;
use casql_core::search::SearchConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::trace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Live,
    Scripted,
    #[default]
    Synthetic,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Self::Live),
            "scripted" => Ok(Self::Scripted),
            "synthetic" => Ok(Self::Synthetic),
            other => Err(format!(
                "unknown backend {other:?} (expected live, scripted or synthetic)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Scenario file, trace file or trace directory for the scripted backend.
    pub scenario: Option<PathBuf>,
    pub http: HttpConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_root: Option<PathBuf>,
    pub seed: u64,
    pub model: String,
    pub backend: BackendConfig,
    pub search: SearchConfig,
    /// Per-role sampling temperature overrides, keyed by role name.
    pub temperatures: BTreeMap<String, f64>,
    pub render: RenderOptions,
    pub templates_dir: Option<PathBuf>,
    /// Replace prompts in traces with a placeholder. Redacted traces
    /// cannot be replayed.
    pub redact_prompts: bool,
    /// Tasks searched at once.
    pub task_workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset_root: None,
            seed: 0,
            model: DEFAULT_MODEL.to_string(),
            backend: BackendConfig::default(),
            search: SearchConfig::default(),
            temperatures: BTreeMap::new(),
            render: RenderOptions::default(),
            templates_dir: None,
            redact_prompts: false,
            task_workers: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn roles(&self) -> Result<RoleSettings, CliError> {
        let mut roles = RoleSettings::default();
        roles.set_model(&self.model);
        for (name, t) in &self.temperatures {
            let role: Role = name.parse().map_err(CliError::Config)?;
            roles.set_temperature(role, *t);
        }
        roles.validate().map_err(CliError::Config)?;
        Ok(roles)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.search.validate().map_err(CliError::Config)?;
        self.roles()?;
        if self.task_workers == 0 {
            return Err(CliError::Config("task_workers must be at least 1".into()));
        }
        if self.backend.kind == BackendKind::Scripted && self.backend.scenario.is_none() {
            return Err(CliError::Config("the scripted backend needs a scenario path".into()));
        }
        Ok(())
    }

    pub fn dataset_root(&self) -> Result<&Path, CliError> {
        self.dataset_root
            .as_deref()
            .ok_or_else(|| CliError::Usage("no dataset root given (--dataset or dataset_root)".into()))
    }

    /// Builds the backend and gateway. Live credentials are checked here,
    /// before any request is sent.
    pub fn gateway(&self) -> Result<Gateway, CliError> {
        let backend: Arc<dyn LlmBackend> = match self.backend.kind {
            BackendKind::Synthetic => Arc::new(SyntheticBackend::new()),
            BackendKind::Scripted => {
                let path = self
                    .backend
                    .scenario
                    .as_deref()
                    .ok_or_else(|| CliError::Config("the scripted backend needs a scenario path".into()))?;
                Arc::new(load_scripted(path)?)
            }
            BackendKind::Live => match HttpBackend::from_env(self.backend.http.clone()) {
                Ok(b) => Arc::new(b),
                Err(LlmError::MissingCredentials(var)) => {
                    return Err(CliError::Config(format!(
                        "the live backend needs an API key in the {var} environment variable"
                    )))
                }
                Err(e) => return Err(CliError::Backend(e.to_string())),
            },
        };
        let templates = match &self.templates_dir {
            Some(dir) => PromptTemplates::load_dir(dir).map_err(|e| CliError::io(dir, e))?,
            None => PromptTemplates::default(),
        };
        Ok(Gateway::new(backend)
            .with_roles(self.roles()?)
            .with_templates(templates)
            .with_render_options(self.render))
    }
}

/// A trace directory or trace file is replayed call by call; anything else
/// is read as a scenario file.
pub fn load_scripted(path: &Path) -> Result<ScriptedBackend, CliError> {
    if path.is_dir() {
        let records = trace::read_dir(path)?;
        return Ok(ScriptedBackend::from_calls(
            records.iter().flat_map(|r| r.report.transcript.calls()),
        ));
    }
    if let Ok(records) = trace::read_file(path) {
        if !records.is_empty() {
            return Ok(ScriptedBackend::from_calls(
                records.iter().flat_map(|r| r.report.transcript.calls()),
            ));
        }
    }
    ScriptedBackend::load(path).map_err(|e| CliError::Config(e.to_string()))
}
