//! TOML scenario documents.
//!
//! A document names a scenario and overrides any part of its default
//! configuration; tables merge key by key, arrays replace wholesale.
//!
//! ```toml
//! schema = 1
//! scenario = "bead_push"
//! duration = 30.0
//!
//! [teleop]
//! dt = 0.001
//!
//! [teleop.scaling]
//! force = [1e6, 1e6, 1e6]
//! ```

use microteleop_core::scenarios::{ScenarioConfig, ScenarioKind};
use microteleop_core::teleop::TeleopSession;
use serde::de::IntoDeserializer;
use thiserror::Error;
use toml::{Table, Value};

pub const SCHEMA_VERSION: i64 = 1;

const KINDS: [ScenarioKind; 3] = [ScenarioKind::BeadPush, ScenarioKind::CellPenetration, ScenarioKind::BubbleManipulation];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("bad value for `{key}`: {message}")]
    Type { key: String, message: String },
    #[error("value out of range: {0}")]
    Range(String),
    #[error("unsupported schema version {0} (expected {SCHEMA_VERSION})")]
    Schema(i64),
}

/// A key the document left out, with the value it got.
#[derive(Debug, Clone, PartialEq)]
pub struct DefaultedKey {
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfig {
    pub config: ScenarioConfig<f64>,
    /// Every default that was applied, in key order.
    pub defaults: Vec<DefaultedKey>,
}

pub fn scenario_kind(name: &str) -> Option<ScenarioKind> {
    KINDS.into_iter().find(|k| k.name() == name)
}

/// Line and column (both 1-based) of a byte offset.
fn position(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

pub fn parse_document(text: &str) -> Result<Table, ConfigError> {
    text.parse::<Table>().map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| position(text, s.start));
        ConfigError::Syntax { line, column, message: e.message().trim().replace('\n', "; ") }
    })
}

pub fn parse_config(text: &str) -> Result<ParsedConfig, ConfigError> {
    config_from_document(parse_document(text)?)
}

pub fn config_from_document(mut doc: Table) -> Result<ParsedConfig, ConfigError> {
    let mut defaults = Vec::new();
    match doc.remove("schema") {
        None => defaults.push(DefaultedKey { key: "schema".into(), value: SCHEMA_VERSION.to_string() }),
        Some(Value::Integer(SCHEMA_VERSION)) => {}
        Some(Value::Integer(v)) => return Err(ConfigError::Schema(v)),
        Some(other) => return Err(ConfigError::Type { key: "schema".into(), message: format!("expected an integer, found {other}") }),
    }
    let kind = match doc.remove("scenario") {
        None => return Err(ConfigError::MissingKey("scenario".into())),
        Some(Value::String(name)) => scenario_kind(&name).ok_or_else(|| ConfigError::Type {
            key: "scenario".into(),
            message: format!("unknown scenario `{name}`; expected one of {}", KINDS.map(|k| k.name()).join(", ")),
        })?,
        Some(other) => return Err(ConfigError::Type { key: "scenario".into(), message: format!("expected a string, found {other}") }),
    };
    if doc.contains_key("kind") {
        return Err(ConfigError::UnknownKey("kind".into()));
    }

    let mut tree = to_table(&kind.default_config());
    tree.remove("kind");
    merge(&mut tree, doc, "", &mut defaults);
    tree.insert("kind".into(), Value::String(kind.name().into()));

    let config: ScenarioConfig<f64> = serde_path_to_error::deserialize(Value::Table(tree.clone()).into_deserializer())
        .map_err(|e| {
            let path = e.path().to_string();
            let message = e.inner().message().to_string();
            let join = |field: &str| {
                if path == "." || path.is_empty() {
                    field.to_string()
                } else if path.ends_with(field) {
                    path.clone()
                } else {
                    format!("{path}.{field}")
                }
            };
            if let Some(field) = quoted(&message, "unknown field `") {
                ConfigError::UnknownKey(join(field))
            } else if let Some(field) = quoted(&message, "missing field `") {
                ConfigError::MissingKey(join(field))
            } else {
                ConfigError::Type { key: path, message }
            }
        })?;

    // keys the types silently skipped
    if let Some(key) = first_unused(&Value::Table(tree), &Value::Table(to_table(&config)), "") {
        return Err(ConfigError::UnknownKey(key));
    }

    config.validate().map_err(|e| ConfigError::Range(e.to_string()))?;
    TeleopSession::new(config.teleop.clone()).map_err(|e| ConfigError::Range(e.to_string()))?;
    Ok(ParsedConfig { config, defaults })
}

/// The canonical document for `config`; parses back to the same value.
pub fn emit_config(config: &ScenarioConfig<f64>) -> String {
    let mut tree = to_table(config);
    tree.remove("kind");
    let mut doc = Table::new();
    doc.insert("schema".into(), Value::Integer(SCHEMA_VERSION));
    doc.insert("scenario".into(), Value::String(config.kind.name().into()));
    doc.extend(tree);
    toml::to_string(&doc).expect("configs serialize to TOML")
}

fn to_table(config: &ScenarioConfig<f64>) -> Table {
    match Value::try_from(config).expect("configs serialize to TOML") {
        Value::Table(t) => t,
        _ => unreachable!("a struct serializes to a table"),
    }
}

fn quoted<'a>(message: &'a str, prefix: &str) -> Option<&'a str> {
    let rest = &message[message.find(prefix)? + prefix.len()..];
    rest.split('`').next()
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn merge(base: &mut Table, doc: Table, path: &str, defaults: &mut Vec<DefaultedKey>) {
    let mut doc = doc;
    for (key, value) in base.iter_mut() {
        let here = join(path, key);
        match (doc.remove(key), value) {
            (Some(Value::Table(sub)), Value::Table(inner)) => merge(inner, sub, &here, defaults),
            (Some(v), slot) => *slot = v,
            (None, v) => record(v, &here, defaults),
        }
    }
    base.extend(doc);
}

fn record(value: &Value, path: &str, defaults: &mut Vec<DefaultedKey>) {
    match value {
        Value::Table(t) => t.iter().for_each(|(k, v)| record(v, &join(path, k), defaults)),
        v => defaults.push(DefaultedKey { key: path.to_string(), value: v.to_string() }),
    }
}

fn first_unused(given: &Value, used: &Value, path: &str) -> Option<String> {
    match (given, used) {
        (Value::Table(g), Value::Table(u)) => g.iter().find_map(|(k, v)| match u.get(k) {
            None => Some(join(path, k)),
            Some(w) => first_unused(v, w, &join(path, k)),
        }),
        (Value::Array(g), Value::Array(u)) => {
            g.iter().zip(u).enumerate().find_map(|(i, (v, w))| first_unused(v, w, &format!("{path}[{i}]")))
        }
        _ => None,
    }
}
