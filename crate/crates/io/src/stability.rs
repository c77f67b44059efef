//! Stability maps over a swept configuration key.

use std::f64::consts::PI;

use microteleop_core::teleop::{linearize_two_port, llewellyn_margin, log_grid, TeleopError, TeleopSession};
use serde::Serialize;
use thiserror::Error;
use toml::{Table, Value};

use crate::config::{config_from_document, emit_config, parse_document, ConfigError};

pub const GRID_POINTS: usize = 120;

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("bad sweep `{0}`: expected key=lo:hi:n")]
    Sweep(String),
    #[error(transparent)]
    Teleop(#[from] TeleopError),
}

/// `key=lo:hi:n`. Positive bounds are spaced geometrically, others linearly.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub key: String,
    pub values: Vec<f64>,
}

impl std::str::FromStr for Sweep {
    type Err = StabilityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || StabilityError::Sweep(s.to_string());
        let (key, range) = s.split_once('=').ok_or_else(bad)?;
        let parts: Vec<&str> = range.split(':').collect();
        let [lo, hi, n] = parts[..] else { return Err(bad()) };
        let (lo, hi): (f64, f64) = (lo.parse().map_err(|_| bad())?, hi.parse().map_err(|_| bad())?);
        let n: usize = n.parse().map_err(|_| bad())?;
        if key.is_empty() || n == 0 || !lo.is_finite() || !hi.is_finite() {
            return Err(bad());
        }
        let at = |i: usize| {
            if n == 1 {
                return lo;
            }
            let u = i as f64 / (n - 1) as f64;
            if lo > 0.0 && hi > 0.0 {
                lo * (hi / lo).powf(u)
            } else {
                lo + (hi - lo) * u
            }
        };
        Ok(Self { key: key.to_string(), values: (0..n).map(at).collect() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityRow {
    pub value: Option<f64>,
    pub stable: bool,
    pub margin: f64,
    pub spectral_radius: f64,
    pub worst_frequency: f64,
    pub worst_axis: usize,
}

/// Sets a dotted key in a fully populated document. Numeric arrays get the
/// value in every element.
fn set_key(doc: &mut Table, key: &str, value: f64) -> Result<(), ConfigError> {
    let unknown = || ConfigError::UnknownKey(key.to_string());
    let mut parts = key.split('.').peekable();
    let mut table = doc;
    while let Some(part) = parts.next() {
        let slot = table.get_mut(part).ok_or_else(unknown)?;
        if parts.peek().is_none() {
            match slot {
                Value::Float(_) | Value::Integer(_) => *slot = Value::Float(value),
                Value::Array(items) if items.iter().all(|v| v.is_float() || v.is_integer()) => {
                    items.iter_mut().for_each(|v| *v = Value::Float(value))
                }
                _ => return Err(ConfigError::Type { key: key.to_string(), message: "not a number or numeric array".into() }),
            }
            return Ok(());
        }
        table = slot.as_table_mut().ok_or_else(unknown)?;
    }
    Err(unknown())
}

pub fn analyze(text: &str, sweep: Option<&Sweep>) -> Result<Vec<StabilityRow>, StabilityError> {
    let base = config_from_document(parse_document(text)?)?.config;
    let full = parse_document(&emit_config(&base))?;
    let cases: Vec<Option<f64>> = match sweep {
        Some(s) => s.values.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    cases
        .into_iter()
        .map(|value| {
            let cfg = match (sweep, value) {
                (Some(s), Some(v)) => {
                    let mut doc = full.clone();
                    set_key(&mut doc, &s.key, v)?;
                    config_from_document(doc)?.config
                }
                _ => base.clone(),
            };
            let grid = log_grid(0.1, 0.5 * PI / cfg.teleop.dt, GRID_POINTS);
            let session = TeleopSession::new(cfg.teleop)?;
            let two_port = linearize_two_port(&session, &grid)?;
            let r = llewellyn_margin(&two_port);
            Ok(StabilityRow {
                value,
                stable: r.stable,
                margin: r.margin,
                spectral_radius: two_port.spectral_radius,
                worst_frequency: r.worst_frequency,
                worst_axis: r.worst_axis,
            })
        })
        .collect()
}

/// Whitespace-aligned table, one row per case.
pub fn render_table(key: Option<&str>, rows: &[StabilityRow]) -> String {
    let mut out = format!(
        "{:>14} {:>7} {:>16} {:>16} {:>14} {:>5}\n",
        key.unwrap_or("case"),
        "stable",
        "margin",
        "spectral_radius",
        "worst_w_rad_s",
        "axis"
    );
    for r in rows {
        let value = r.value.map_or_else(|| "config".to_string(), |v| format!("{v:.6e}"));
        out.push_str(&format!(
            "{value:>14} {:>7} {:>16.6e} {:>16.9} {:>14.4e} {:>5}\n",
            r.stable, r.margin, r.spectral_radius, r.worst_frequency, r.worst_axis
        ));
    }
    out
}
