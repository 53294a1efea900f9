//! The run configuration file and the task and world files it points to.
//!
//! Configuration is TOML. A minimal simulated run needs nothing at all; a real
//! run needs a task file and a chat endpoint:
//!
//! ```toml
//! mode = "real"
//! tasks = "tasks.jsonl"
//! embedding_dim = 1536
//!
//! [chat]
//! base_url = "https://api.openai.com/v1"
//! model = "o4-mini"
//!
//! [embeddings]
//! base_url = "https://api.openai.com/v1"
//! model = "text-embedding-3-small"
//!
//! [run]
//! iterations = 60
//! ```
//!
//! Keys under `[run]` override the defaults for the task domain, so a file
//! that only sets `iterations` keeps the domain's trial count. Every error
//! carries the file name and, when it can be located, the line.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::RunConfig;
use crate::error::ConfigError;
use crate::extraction::{AgentSettings, Domain, TaskSpec};
use crate::providers::{EndpointConfig, RetryPolicy};
use crate::simworld::WorldSpec;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Real,
    #[default]
    Simulate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub mode: Mode,
    pub out_dir: Option<PathBuf>,
    /// `"default"` for the bundled world, otherwise a path to a world file.
    pub world: String,
    /// Task file for real runs: `.jsonl` (one task per line), `.json` (an
    /// array) or `.toml` (`[[tasks]]` tables).
    pub tasks: Option<PathBuf>,
    pub prompts_dir: Option<PathBuf>,
    pub embedding_dim: usize,
    pub chat: Option<EndpointConfig>,
    pub embeddings: Option<EndpointConfig>,
    pub retry: RetryPolicy,
    pub agent: AgentSettings,
    /// Raw `[run]` table, merged over the domain defaults by [`ConfigFile::run_config`].
    pub run: toml::Table,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            mode: Mode::Simulate,
            out_dir: None,
            world: "default".into(),
            tasks: None,
            prompts_dir: None,
            embedding_dim: 1536,
            chat: None,
            embeddings: None,
            retry: RetryPolicy::default(),
            agent: AgentSettings::default(),
            run: toml::Table::new(),
        }
    }
}

/// A parsed configuration file that still knows where its keys came from.
#[derive(Debug, Clone)]
pub struct ConfigFile {
    pub path: PathBuf,
    pub settings: Settings,
    text: String,
}

impl Default for ConfigFile {
    fn default() -> Self {
        ConfigFile {
            path: PathBuf::from("<defaults>"),
            settings: Settings::default(),
            text: String::new(),
        }
    }
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self, ConfigError> {
        let settings: Settings = toml::from_str(text).map_err(|e| {
            let message = e.message().to_owned();
            match e.span() {
                Some(span) => ConfigError::Invalid {
                    path: path.display().to_string(),
                    line: line_at(text, span.start),
                    key: key_near(text, span.start),
                    message,
                },
                None => ConfigError::Parse {
                    path: path.display().to_string(),
                    message,
                },
            }
        })?;
        let file = ConfigFile {
            path: path.to_owned(),
            settings,
            text: text.to_owned(),
        };
        file.check_settings()?;
        Ok(file)
    }

    fn check_settings(&self) -> Result<(), ConfigError> {
        let s = &self.settings;
        if s.embedding_dim == 0 {
            return Err(self.invalid("embedding_dim", "must be at least 1"));
        }
        if s.retry.attempts == 0 {
            return Err(self.invalid("retry.attempts", "must be at least 1"));
        }
        if !(0.0..=2.0).contains(&s.agent.temperature) {
            return Err(self.invalid("agent.temperature", "must lie in [0, 2]"));
        }
        if !(s.agent.top_p > 0.0 && s.agent.top_p <= 1.0) {
            return Err(self.invalid("agent.top_p", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Line of the dotted `key`, or of its closest enclosing table.
    pub fn line_of(&self, key: &str) -> usize {
        let Ok(doc) = toml_edit::ImDocument::parse(self.text.as_str()) else {
            return 0;
        };
        let parts: Vec<&str> = key.split('.').collect();
        for n in (1..=parts.len()).rev() {
            let mut item = doc.as_item();
            let mut found = true;
            for part in &parts[..n] {
                match item.get(*part) {
                    Some(next) => item = next,
                    None => {
                        found = false;
                        break;
                    }
                }
            }
            if let Some(span) = item.span().filter(|_| found) {
                return line_at(&self.text, span.start);
            }
        }
        0
    }

    pub fn invalid(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid {
            path: self.path.display().to_string(),
            line: self.line_of(key),
            key: key.to_owned(),
            message: message.into(),
        }
    }

    /// The domain defaults with the file's `[run]` keys laid over them, validated.
    pub fn run_config(&self, domain: Domain) -> Result<RunConfig, ConfigError> {
        let base = RunConfig::for_domain(domain);
        let mut merged = toml::Table::try_from(&base).expect("run config serializes");
        merge(&mut merged, &self.settings.run);
        let config: RunConfig = merged.try_into().map_err(|e: toml::de::Error| {
            let message = e.message().to_owned();
            let key = unknown_key(&message).map_or("run".to_owned(), |k| format!("run.{k}"));
            self.invalid(&key, message)
        })?;
        config
            .validate()
            .map_err(|e| self.invalid(&format!("run.{}", e.key), e.message))?;
        Ok(config)
    }

    /// Resolves a path from the file against the file's directory.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            return path.to_owned();
        }
        match self.path.parent() {
            Some(dir) if self.path.exists() => dir.join(path),
            _ => path.to_owned(),
        }
    }

    pub fn world(&self) -> Result<WorldSpec, ConfigError> {
        load_world(&self.settings.world, |p| self.resolve(p))
    }

    pub fn tasks(&self) -> Result<Vec<TaskSpec>, ConfigError> {
        let Some(path) = &self.settings.tasks else {
            return Err(self.invalid("tasks", "a real run needs a task file"));
        };
        load_tasks(&self.resolve(path))
    }
}

fn merge(into: &mut toml::Table, from: &toml::Table) {
    for (k, v) in from {
        match (into.get_mut(k), v) {
            (Some(toml::Value::Table(a)), toml::Value::Table(b)) if !b.contains_key("type") => merge(a, b),
            _ => {
                into.insert(k.clone(), v.clone());
            }
        }
    }
}

fn unknown_key(message: &str) -> Option<&str> {
    let rest = message.split("unknown field `").nth(1)?;
    rest.split('`').next()
}

/// The key on the line containing `offset`, if the line is an assignment.
fn key_near(text: &str, offset: usize) -> String {
    let start = text[..offset.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = text[start..].lines().next().unwrap_or("");
    match line.split_once('=') {
        Some((k, _)) => k.trim().to_owned(),
        None => line.trim().to_owned(),
    }
}

/// `"default"` gives the bundled world; anything else is read as a world file.
pub fn load_world(spec: &str, resolve: impl Fn(&Path) -> PathBuf) -> Result<WorldSpec, ConfigError> {
    if spec == "default" {
        return Ok(WorldSpec::default_world());
    }
    let path = resolve(Path::new(spec));
    let text = fs::read_to_string(&path).map_err(|source| ConfigError::Io {
        path: path.clone(),
        source,
    })?;
    WorldSpec::from_toml(&text).map_err(|message| ConfigError::Parse {
        path: path.display().to_string(),
        message,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskFile {
    tasks: Vec<TaskSpec>,
}

pub fn load_tasks(path: &Path) -> Result<Vec<TaskSpec>, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })?;
    let name = path.display().to_string();
    let tasks: Vec<TaskSpec> = match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => {
            let mut tasks = Vec::new();
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let task = serde_json::from_str(line).map_err(|e| ConfigError::Invalid {
                    path: name.clone(),
                    line: i + 1,
                    key: "task".into(),
                    message: e.to_string(),
                })?;
                tasks.push(task);
            }
            tasks
        }
        Some("json") => serde_json::from_str(&text).map_err(|e| ConfigError::Invalid {
            path: name.clone(),
            line: e.line(),
            key: "tasks".into(),
            message: e.to_string(),
        })?,
        Some("toml") => {
            let file: TaskFile = toml::from_str(&text).map_err(|e| ConfigError::Invalid {
                path: name.clone(),
                line: e.span().map_or(0, |s| line_at(&text, s.start)),
                key: "tasks".into(),
                message: e.message().to_owned(),
            })?;
            file.tasks
        }
        _ => {
            return Err(ConfigError::Parse {
                path: name,
                message: "task files must end in .jsonl, .json or .toml".into(),
            })
        }
    };
    if tasks.is_empty() {
        return Err(ConfigError::Parse {
            path: name,
            message: "no tasks".into(),
        });
    }
    for t in &tasks {
        t.validate().map_err(|message| ConfigError::Parse {
            path: name.clone(),
            message,
        })?;
    }
    Ok(tasks)
}

/// The domain shared by every task, or an error naming the first outlier.
pub fn pool_domain(tasks: &[TaskSpec]) -> Result<Domain, ConfigError> {
    let domain = tasks.first().map(TaskSpec::domain).unwrap_or(Domain::Simulated);
    match tasks.iter().find(|t| t.domain() != domain) {
        Some(t) => Err(ConfigError::Validation(format!(
            "task {} is {:?} but the pool starts with {domain:?} tasks",
            t.id,
            t.domain()
        ))),
        None => Ok(domain),
    }
}
