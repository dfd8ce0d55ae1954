use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use super::Role;

/// Named slots that templates may reference as `{name}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placeholder {
    Question,
    Hint,
    SchemaBlock,
    CandidateSql,
    OutputPreview,
    Assessment,
    MutationTemperature,
    DifficultyMin,
    DifficultyMax,
}

impl Placeholder {
    pub const ALL: [Placeholder; 9] = [
        Self::Question,
        Self::Hint,
        Self::SchemaBlock,
        Self::CandidateSql,
        Self::OutputPreview,
        Self::Assessment,
        Self::MutationTemperature,
        Self::DifficultyMin,
        Self::DifficultyMax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Question => "question",
            Self::Hint => "hint",
            Self::SchemaBlock => "schema_block",
            Self::CandidateSql => "candidate_sql",
            Self::OutputPreview => "output_preview",
            Self::Assessment => "assessment",
            Self::MutationTemperature => "mutation_temperature",
            Self::DifficultyMin => "difficulty_min",
            Self::DifficultyMax => "difficulty_max",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

/// Plain-text prompt templates, one per role.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    templates: BTreeMap<Role, String>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        let builtin = [
            (Role::Difficulty, include_str!("../../templates/difficulty.txt")),
            (Role::SchemaSubset, include_str!("../../templates/schema_subset.txt")),
            (Role::GenQuery, include_str!("../../templates/gen_query.txt")),
            (Role::Critic, include_str!("../../templates/critic.txt")),
            (Role::Mutate, include_str!("../../templates/mutate.txt")),
        ];
        Self {
            templates: builtin.into_iter().map(|(r, t)| (r, t.to_string())).collect(),
        }
    }
}

impl PromptTemplates {
    /// Built-in templates, overridden by any `<role>.txt` present in `dir`.
    pub fn load_dir(dir: &Path) -> io::Result<Self> {
        let mut out = Self::default();
        for role in Role::ALL {
            let path = dir.join(format!("{}.txt", role.as_str()));
            if path.is_file() {
                out.templates.insert(role, std::fs::read_to_string(path)?);
            }
        }
        Ok(out)
    }

    pub fn set(&mut self, role: Role, template: impl Into<String>) {
        self.templates.insert(role, template.into());
    }

    pub fn get(&self, role: Role) -> &str {
        &self.templates[&role]
    }

    /// Substitutes known placeholders in one pass; substituted text is never
    /// rescanned. Unknown `{...}` sequences and slots without a value are
    /// left as written.
    pub fn render(&self, role: Role, values: &[(Placeholder, String)]) -> String {
        fill(self.get(role), values)
    }
}

fn fill(template: &str, values: &[(Placeholder, String)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let p = Placeholder::from_name(&after[..close])?;
            let value = values.iter().find(|(k, _)| *k == p)?;
            Some((value.1.as_str(), close))
        });
        match replaced {
            Some((value, close)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pass_substitution() {
        let out = fill(
            "Q: {question} H: {hint} {unknown} {",
            &[
                (Placeholder::Question, "why {hint}?".into()),
                (Placeholder::Hint, "none".into()),
            ],
        );
        assert_eq!(out, "Q: why {hint}? H: none {unknown} {");
    }

    #[test]
    fn builtin_templates_use_expected_slots() {
        let t = PromptTemplates::default();
        assert!(t.get(Role::GenQuery).contains("{schema_block}"));
        assert!(t.get(Role::Critic).contains("{output_preview}"));
        assert!(t.get(Role::Mutate).contains("{mutation_temperature}"));
        assert!(t.get(Role::Mutate).contains("{assessment}"));
    }

    #[test]
    fn directory_overrides() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("critic.txt"), "judge {candidate_sql}").unwrap();
        let t = PromptTemplates::load_dir(dir.path()).unwrap();
        assert_eq!(
            t.render(Role::Critic, &[(Placeholder::CandidateSql, "SELECT 1".into())]),
            "judge SELECT 1"
        );
        assert_eq!(t.get(Role::GenQuery), PromptTemplates::default().get(Role::GenQuery));
    }
}
