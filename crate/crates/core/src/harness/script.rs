//! Scenario scripts: one TOML document describing the mock application's
//! SQL templates, the normalization policy, and a timeline of client
//! requests and replica behavior injections.
//!
//! ```toml
//! [app]
//! "/edit" = ["UPDATE page SET touched = '{ts}' WHERE id = 7"]
//!
//! [policy.page]
//! nondeterministic = ["touched"]
//!
//! [[events]]
//! at = 0
//! kind = "request"
//! path = "/edit"
//! count = 100
//! spacing = 10
//!
//! [[events]]
//! at = 250
//! kind = "inject"
//! pool = 2
//! replica = 1
//! behavior = "divergent-write"
//! payload = "DELETE FROM page"
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::Behavior;
use crate::sql::{NormalizationPolicy, PolicyError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedEvent {
    pub at: u64,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Request { path: String, count: u32, spacing: u64 },
    Inject { pool: u32, replica: u32, behavior: Behavior },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Request path -> ordered SQL templates; `{ts}` marks a slot each
    /// replica fills with its own value.
    pub app: BTreeMap<String, Vec<String>>,
    pub policy: NormalizationPolicy,
    pub events: Vec<TimedEvent>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("script is not valid TOML: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("script policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("event {index}: unknown kind {kind:?}")]
    UnknownKind { index: usize, kind: String },
    #[error("event {index}: {field} is required for {kind} events")]
    MissingField { index: usize, kind: &'static str, field: &'static str },
    #[error("event {index}: {field} does not apply to {kind} events")]
    StrayField { index: usize, kind: &'static str, field: &'static str },
    #[error("event {index}: unknown behavior {behavior:?}")]
    UnknownBehavior { index: usize, behavior: String },
    #[error("event {index}: request count must be at least 1")]
    ZeroCount { index: usize },
    #[error("request references path {0:?} which is not in the app table")]
    UnknownPath(String),
    #[error("app path {0:?} has no SQL templates")]
    EmptyTemplates(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScript {
    app: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    policy: Option<toml::Table>,
    #[serde(default)]
    events: Vec<RawEvent>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    at: u64,
    kind: String,
    path: Option<String>,
    count: Option<u32>,
    spacing: Option<u64>,
    pool: Option<u32>,
    replica: Option<u32>,
    behavior: Option<String>,
    payload: Option<String>,
}

impl Scenario {
    /// Builds and validates a scenario; every request path must exist in
    /// `app` and every path must carry at least one template.
    pub fn new(
        app: BTreeMap<String, Vec<String>>,
        policy: NormalizationPolicy,
        events: Vec<TimedEvent>,
    ) -> Result<Scenario, ScriptError> {
        for (path, templates) in &app {
            if templates.is_empty() {
                return Err(ScriptError::EmptyTemplates(path.clone()));
            }
        }
        for (index, event) in events.iter().enumerate() {
            if let Action::Request { path, count, .. } = &event.action {
                if !app.contains_key(path) {
                    return Err(ScriptError::UnknownPath(path.clone()));
                }
                if *count == 0 {
                    return Err(ScriptError::ZeroCount { index });
                }
            }
        }
        Ok(Scenario { app, policy, events })
    }

    pub fn from_toml_str(text: &str) -> Result<Scenario, ScriptError> {
        let raw: RawScript = toml::from_str(text)?;
        let policy = match &raw.policy {
            Some(table) => NormalizationPolicy::from_toml_table(table)?,
            None => NormalizationPolicy::empty(),
        };
        let mut events = Vec::with_capacity(raw.events.len());
        for (index, raw_event) in raw.events.into_iter().enumerate() {
            events.push(TimedEvent { at: raw_event.at, action: convert(index, raw_event)? });
        }
        Scenario::new(raw.app, policy, events)
    }

    pub fn load(path: &Path) -> Result<Scenario, ScriptError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

fn convert(index: usize, raw: RawEvent) -> Result<Action, ScriptError> {
    let missing = |kind, field| ScriptError::MissingField { index, kind, field };
    let stray = |kind, field| ScriptError::StrayField { index, kind, field };
    match raw.kind.as_str() {
        "request" => {
            let kind = "request";
            for (absent, field) in [
                (raw.pool.is_none(), "pool"),
                (raw.replica.is_none(), "replica"),
                (raw.behavior.is_none(), "behavior"),
                (raw.payload.is_none(), "payload"),
            ] {
                if !absent {
                    return Err(stray(kind, field));
                }
            }
            Ok(Action::Request {
                path: raw.path.ok_or_else(|| missing(kind, "path"))?,
                count: raw.count.unwrap_or(1),
                spacing: raw.spacing.unwrap_or(0),
            })
        }
        "inject" => {
            let kind = "inject";
            for (absent, field) in [
                (raw.path.is_none(), "path"),
                (raw.count.is_none(), "count"),
                (raw.spacing.is_none(), "spacing"),
            ] {
                if !absent {
                    return Err(stray(kind, field));
                }
            }
            let pool = raw.pool.ok_or_else(|| missing(kind, "pool"))?;
            let replica = raw.replica.ok_or_else(|| missing(kind, "replica"))?;
            let name = raw.behavior.ok_or_else(|| missing(kind, "behavior"))?;
            let behavior = match name.as_str() {
                "divergent-write" => Behavior::DivergentWrite(
                    raw.payload.ok_or_else(|| missing(kind, "payload"))?,
                ),
                other => {
                    if raw.payload.is_some() {
                        return Err(stray(kind, "payload"));
                    }
                    match other {
                        "honest" => Behavior::Honest,
                        "forged-tag" => Behavior::ForgedTag,
                        "replay-tag" => Behavior::ReplayTag,
                        "silent" => Behavior::Silent,
                        _ => {
                            return Err(ScriptError::UnknownBehavior { index, behavior: name })
                        }
                    }
                }
            };
            Ok(Action::Inject { pool, replica, behavior })
        }
        _ => Err(ScriptError::UnknownKind { index, kind: raw.kind }),
    }
}
