//! Uniform access to the five LLM roles over interchangeable backends.
//!
//! A [`Gateway`] owns the role configuration and prompt templates and turns
//! raw completions into typed results. Every call is appended to a caller
//! supplied [`Transcript`], which is what run traces and replay are built from.

mod http;
mod parse;
mod prompts;
mod scripted;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::schema::{render_schema_block, FullSchema, Ordering, RenderOptions, SchemaError, SchemaSubset, Task};

pub use http::{HttpBackend, HttpConfig};
pub use parse::{extract_sql, parse_critique, parse_difficulty, parse_subset};
pub use prompts::{Placeholder, PromptTemplates};
pub use scripted::{PromptMatcher, ScenarioError, ScenarioRecord, ScriptedBackend};
pub use synthetic::SyntheticBackend;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Difficulty,
    SchemaSubset,
    GenQuery,
    Critic,
    Mutate,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Self::Difficulty,
        Self::SchemaSubset,
        Self::GenQuery,
        Self::Critic,
        Self::Mutate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Difficulty => "difficulty",
            Self::SchemaSubset => "schema_subset",
            Self::GenQuery => "gen_query",
            Self::Critic => "critic",
            Self::Mutate => "mutate",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown role {s:?}"))
    }
}

pub const DEFAULT_MODEL: &str = "gpt-4o-mini";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleConfig {
    pub role: Role,
    pub model_name: String,
    pub sampling_temperature: f64,
    pub max_output_tokens: u32,
}

impl RoleConfig {
    /// Model temperatures: critic 0.2, every other role 1.0.
    pub fn default_for(role: Role) -> Self {
        let (temperature, max_tokens) = match role {
            Role::Difficulty => (1.0, 64),
            Role::SchemaSubset => (1.0, 512),
            Role::GenQuery => (1.0, 1024),
            Role::Critic => (0.2, 512),
            Role::Mutate => (1.0, 1024),
        };
        Self {
            role,
            model_name: DEFAULT_MODEL.to_string(),
            sampling_temperature: temperature,
            max_output_tokens: max_tokens,
        }
    }
}

/// One [`RoleConfig`] per role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleSettings {
    configs: BTreeMap<Role, RoleConfig>,
}

impl Default for RoleSettings {
    fn default() -> Self {
        Self {
            configs: Role::ALL.into_iter().map(|r| (r, RoleConfig::default_for(r))).collect(),
        }
    }
}

impl RoleSettings {
    pub fn get(&self, role: Role) -> &RoleConfig {
        &self.configs[&role]
    }

    pub fn set_temperature(&mut self, role: Role, temperature: f64) {
        if let Some(c) = self.configs.get_mut(&role) {
            c.sampling_temperature = temperature;
        }
    }

    pub fn set_model(&mut self, model: &str) {
        for c in self.configs.values_mut() {
            c.model_name = model.to_string();
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for c in self.configs.values() {
            if !(0.0..=2.0).contains(&c.sampling_temperature) {
                return Err(format!(
                    "{} temperature {} outside [0, 2]",
                    c.role, c.sampling_temperature
                ));
            }
        }
        Ok(())
    }
}

/// Critic output: score, confidence, mutation temperature and assessment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critique {
    pub score: f64,
    pub confidence: f64,
    pub mutation_temperature: f64,
    /// Empty when the critic sees nothing left to change.
    pub assessment: String,
}

impl Critique {
    pub fn wants_changes(&self) -> bool {
        !self.assessment.trim().is_empty()
    }
}

/// Inclusive range of difficulty scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyScale {
    pub min: u32,
    pub max: u32,
}

impl Default for DifficultyScale {
    fn default() -> Self {
        Self { min: 1, max: 5 }
    }
}

impl DifficultyScale {
    pub fn midpoint(&self) -> u32 {
        (self.min + self.max) / 2
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("missing credentials: {0}")]
    MissingCredentials(String),
    #[error("no scripted response for role {role} (prompt starts {excerpt:?})")]
    NoScriptedResponse { role: Role, excerpt: String },
    #[error("no integer in difficulty response {0:?}")]
    UnparsableDifficulty(String),
    #[error("every proposed schema pair was unknown")]
    EmptyAfterFilter,
    #[error("no SQL statement found in response")]
    NoSqlFound,
    #[error("refusing non-SELECT statement {0:?}")]
    NonSelectStatement(String),
    #[error("malformed critique: {0}")]
    MalformedCritique(String),
    #[error("mutation requested with an empty assessment")]
    EmptyAssessment,
    #[error("schema rendering failed: {0}")]
    Schema(String),
}

impl From<SchemaError> for LlmError {
    fn from(e: SchemaError) -> Self {
        LlmError::Schema(e.to_string())
    }
}

/// A single completion request as seen by a backend.
#[derive(Debug, Clone)]
pub struct LlmRequest<'a> {
    pub role: Role,
    pub prompt: &'a str,
    pub config: &'a RoleConfig,
    pub seed: u64,
}

/// Text completion over some model. Scripted and synthetic implementations
/// must be deterministic in `(role, prompt, seed)`.
pub trait LlmBackend: Send + Sync {
    fn complete(&self, request: &LlmRequest<'_>) -> Result<String, LlmError>;

    fn name(&self) -> &str;
}

/// One backend call with its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub role: Role,
    pub seed: u64,
    pub temperature: f64,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Ordered log of backend calls.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Transcript {
    calls: Vec<CallRecord>,
}

impl Transcript {
    pub fn calls(&self) -> &[CallRecord] {
        &self.calls
    }

    pub fn len(&self) -> usize {
        self.calls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }

    pub fn extend(&mut self, other: Transcript) {
        self.calls.extend(other.calls);
    }

    /// Replaces every prompt with `placeholder`.
    pub fn redact_prompts(&mut self, placeholder: &str) {
        for c in &mut self.calls {
            c.prompt = placeholder.to_string();
        }
    }

    pub fn counts(&self) -> BTreeMap<Role, usize> {
        let mut counts: BTreeMap<Role, usize> = Role::ALL.into_iter().map(|r| (r, 0)).collect();
        for c in &self.calls {
            *counts.entry(c.role).or_default() += 1;
        }
        counts
    }
}

/// Typed access to the five roles.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn LlmBackend>,
    roles: RoleSettings,
    templates: PromptTemplates,
    render: RenderOptions,
    scale: DifficultyScale,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.name())
            .field("roles", &self.roles)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn LlmBackend>) -> Self {
        Self {
            backend,
            roles: RoleSettings::default(),
            templates: PromptTemplates::default(),
            render: RenderOptions::default(),
            scale: DifficultyScale::default(),
        }
    }

    pub fn with_roles(mut self, roles: RoleSettings) -> Self {
        self.roles = roles;
        self
    }

    pub fn with_templates(mut self, templates: PromptTemplates) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_render_options(mut self, render: RenderOptions) -> Self {
        self.render = render;
        self
    }

    pub fn with_difficulty_scale(mut self, scale: DifficultyScale) -> Self {
        self.scale = scale;
        self
    }

    pub fn roles(&self) -> &RoleSettings {
        &self.roles
    }

    pub fn render_options(&self) -> RenderOptions {
        self.render
    }

    pub fn difficulty_scale(&self) -> DifficultyScale {
        self.scale
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    fn call(
        &self,
        role: Role,
        prompt: String,
        temperature: Option<f64>,
        seed: u64,
        log: &mut Transcript,
    ) -> Result<String, LlmError> {
        let mut config = self.roles.get(role).clone();
        if let Some(t) = temperature {
            config.sampling_temperature = t;
        }
        let outcome = self.backend.complete(&LlmRequest {
            role,
            prompt: &prompt,
            config: &config,
            seed,
        });
        log.calls.push(CallRecord {
            role,
            seed,
            temperature: config.sampling_temperature,
            prompt,
            response: outcome.as_ref().ok().cloned(),
            error: outcome.as_ref().err().map(|e| e.to_string()),
        });
        outcome
    }

    fn full_block(&self, schema: &FullSchema) -> Result<String, LlmError> {
        Ok(render_schema_block(
            &schema.universe(),
            schema,
            Ordering::Fixed,
            self.render,
        )?)
    }

    fn block(&self, schema: &FullSchema, subset: &SchemaSubset) -> Result<String, LlmError> {
        Ok(render_schema_block(subset, schema, Ordering::Fixed, self.render)?)
    }

    fn base_values(&self, task: &Task, block: String) -> Vec<(Placeholder, String)> {
        vec![
            (Placeholder::Question, task.question.clone()),
            (Placeholder::Hint, task.hint.clone()),
            (Placeholder::SchemaBlock, block),
            (Placeholder::DifficultyMin, self.scale.min.to_string()),
            (Placeholder::DifficultyMax, self.scale.max.to_string()),
        ]
    }

    /// Difficulty score clamped into the configured scale.
    pub fn score_difficulty(
        &self,
        task: &Task,
        schema: &FullSchema,
        seed: u64,
        log: &mut Transcript,
    ) -> Result<u32, LlmError> {
        let values = self.base_values(task, self.full_block(schema)?);
        let prompt = self.templates.render(Role::Difficulty, &values);
        let raw = self.call(Role::Difficulty, prompt, None, seed, log)?;
        parse_difficulty(&raw, self.scale)
    }

    /// One sampled schema subset, restricted to pairs that exist in `schema`.
    pub fn propose_subset(
        &self,
        task: &Task,
        schema: &FullSchema,
        seed: u64,
        log: &mut Transcript,
    ) -> Result<SchemaSubset, LlmError> {
        let values = self.base_values(task, self.full_block(schema)?);
        let prompt = self.templates.render(Role::SchemaSubset, &values);
        let raw = self.call(Role::SchemaSubset, prompt, None, seed, log)?;
        parse_subset(&raw, schema)
    }

    /// Candidate query seeded by `subset`, rendered in declaration order.
    pub fn generate_query(
        &self,
        task: &Task,
        schema: &FullSchema,
        subset: &SchemaSubset,
        seed: u64,
        log: &mut Transcript,
    ) -> Result<String, LlmError> {
        let block = self.block(schema, subset)?;
        self.generate_query_from_block(task, block, None, seed, log)
    }

    /// Candidate query from an already rendered schema block, optionally at
    /// a non-default sampling temperature.
    pub fn generate_query_from_block(
        &self,
        task: &Task,
        block: String,
        temperature: Option<f64>,
        seed: u64,
        log: &mut Transcript,
    ) -> Result<String, LlmError> {
        let values = self.base_values(task, block);
        let prompt = self.templates.render(Role::GenQuery, &values);
        let raw = self.call(Role::GenQuery, prompt, temperature, seed, log)?;
        extract_sql(&raw)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn critique(
        &self,
        task: &Task,
        schema: &FullSchema,
        subset: &SchemaSubset,
        candidate_sql: &str,
        output_preview: &str,
        seed: u64,
        log: &mut Transcript,
    ) -> Result<Critique, LlmError> {
        let mut values = self.base_values(task, self.block(schema, subset)?);
        values.push((Placeholder::CandidateSql, candidate_sql.to_string()));
        values.push((Placeholder::OutputPreview, output_preview.to_string()));
        let prompt = self.templates.render(Role::Critic, &values);
        let raw = self.call(Role::Critic, prompt, None, seed, log)?;
        parse_critique(&raw)
    }

    /// Rewrites `candidate_sql` following the critic's assessment. The
    /// mutation temperature is passed to the model as guidance only.
    #[allow(clippy::too_many_arguments)]
    pub fn mutate_query(
        &self,
        task: &Task,
        schema: &FullSchema,
        subset: &SchemaSubset,
        candidate_sql: &str,
        critique: &Critique,
        seed: u64,
        log: &mut Transcript,
    ) -> Result<String, LlmError> {
        if !critique.wants_changes() {
            return Err(LlmError::EmptyAssessment);
        }
        let mut values = self.base_values(task, self.block(schema, subset)?);
        values.push((Placeholder::CandidateSql, candidate_sql.to_string()));
        values.push((Placeholder::Assessment, critique.assessment.clone()));
        values.push((
            Placeholder::MutationTemperature,
            format!("{}", critique.mutation_temperature),
        ));
        let prompt = self.templates.render(Role::Mutate, &values);
        let raw = self.call(Role::Mutate, prompt, None, seed, log)?;
        extract_sql(&raw)
    }
}
