//! TOML configuration with `DRIFTER_<SECTION>__<KEY>` environment overrides.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use drifter_core::drift::{DriftRule, RuleKind};
use drifter_core::engine::{self, metric, EngineConfig};
use drifter_core::export::DEFAULT_PORT;
use drifter_core::ingest::{Compression, Format, SourceConfig, WindowMode, DEFAULT_WINDOW_MILLIS};
use drifter_core::model::DEFAULT_BUCKET_COUNT;
use drifter_core::ranking::{RankingConfig, DEFAULT_CONTINGENCY_WIDTH, DEFAULT_INTERACTION_CAP};
use drifter_core::sketches::{DEFAULT_MAX_BINS, DEFAULT_PRECISION, DEFAULT_QUANTILES};
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "DRIFTER_";

/// A configuration problem. `Display` yields `<where>: <key>: <message>`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub location: Option<String>,
    pub key: Option<String>,
    pub message: String,
}

impl ConfigError {
    fn new(key: Option<&str>, message: impl Into<String>) -> Self {
        ConfigError {
            location: None,
            key: key.map(str::to_string),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(loc) = &self.location {
            write!(f, "{loc}: ")?;
        }
        if let Some(key) = &self.key {
            write!(f, "{key}: ")?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RawSource {
    /// File path, or `-` for standard input.
    pub path: String,
    pub format: Format,
    pub compression: Compression,
    pub window: WindowMode,
}

impl Default for RawSource {
    fn default() -> Self {
        let s = SourceConfig::default();
        RawSource {
            path: s.path,
            format: s.format,
            compression: s.compression,
            window: s.window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RawEngine {
    pub bucket_count: i64,
    pub hll_precision: i64,
    pub max_bins: i64,
    pub interaction_cap: i64,
    pub seed: u64,
    pub quantiles: Vec<f64>,
    pub allow: Vec<String>,
    pub deny: Vec<String>,
    pub max_features: i64,
    pub rank_every: i64,
    pub contingency_width: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub series_capacity: Option<i64>,
    pub max_reject_fraction: f64,
}

impl Default for RawEngine {
    fn default() -> Self {
        RawEngine {
            bucket_count: i64::from(DEFAULT_BUCKET_COUNT),
            hll_precision: i64::from(DEFAULT_PRECISION),
            max_bins: DEFAULT_MAX_BINS as i64,
            interaction_cap: DEFAULT_INTERACTION_CAP as i64,
            seed: 0,
            quantiles: DEFAULT_QUANTILES.to_vec(),
            allow: Vec::new(),
            deny: Vec::new(),
            max_features: engine::DEFAULT_MAX_FEATURES as i64,
            rank_every: 1,
            contingency_width: i64::from(DEFAULT_CONTINGENCY_WIDTH),
            series_capacity: None,
            max_reject_fraction: engine::DEFAULT_MAX_REJECT_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRule {
    pub kind: RuleKind,
    pub metric: String,
    /// Defaults to the window duration.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset_millis: Option<i64>,
    /// Defaults to the window duration.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window_millis: Option<i64>,
    /// Percent for `relative_delta`, metric units for `absolute_delta`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficient: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RawExport {
    pub bind: String,
    pub port: i64,
    /// Alert log path for `run`.
    pub alert_log: String,
}

impl Default for RawExport {
    fn default() -> Self {
        RawExport {
            bind: "0.0.0.0".into(),
            port: i64::from(DEFAULT_PORT),
            alert_log: "alerts.jsonl".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RawConfig {
    pub source: RawSource,
    pub engine: RawEngine,
    pub export: RawExport,
    /// Absent: one relative coverage rule at 25%. Empty list: no rules.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rules: Option<Vec<RawRule>>,
}

/// Validated configuration ready for use.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub source: SourceConfig,
    pub engine: EngineConfig,
    pub bind: String,
    pub port: u16,
    pub alert_log: String,
    /// Normalized raw form, for printing.
    pub resolved: RawConfig,
    pub warnings: Vec<String>,
}

pub fn default_rule(window: &WindowMode) -> RawRule {
    RawRule {
        kind: RuleKind::RelativeDelta,
        metric: metric::COVERAGE.into(),
        offset_millis: None,
        window_millis: None,
        threshold: Some(25.0),
        coefficient: None,
    }
    .resolved(window)
}

impl RawRule {
    fn resolved(mut self, window: &WindowMode) -> RawRule {
        let d = window.millis().unwrap_or(DEFAULT_WINDOW_MILLIS);
        self.window_millis.get_or_insert(d);
        if self.kind == RuleKind::StddevOutlier {
            self.offset_millis = None;
            self.threshold = None;
            self.coefficient.get_or_insert(drifter_core::drift::DEFAULT_OUTLIER_COEFFICIENT);
        } else {
            self.offset_millis.get_or_insert(d);
            self.coefficient = None;
        }
        self
    }
}

/// Line of `key` inside `[table]` (or `[[table]]`, n-th occurrence), 1-based.
fn locate(text: &str, table: &str, key: &str, occurrence: usize) -> Option<usize> {
    let mut current = String::new();
    let mut seen = 0usize;
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(h) = t.strip_prefix("[[").and_then(|h| h.split("]]").next()) {
            current = h.trim().to_string();
            if current == table {
                seen += 1;
            }
            continue;
        }
        if let Some(h) = t.strip_prefix('[').and_then(|h| h.split(']').next()) {
            current = h.trim().to_string();
            continue;
        }
        if current == table && (occurrence == 0 || seen == occurrence) {
            if let Some((k, _)) = t.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

struct Origin<'a> {
    file: Option<&'a str>,
    text: &'a str,
    overridden: BTreeSet<String>,
}

impl Origin<'_> {
    fn error(&self, table: &str, key: &str, occurrence: usize, message: impl Into<String>) -> ConfigError {
        let dotted = if occurrence > 0 {
            format!("{table}[{}].{key}", occurrence - 1)
        } else {
            format!("{table}.{key}")
        };
        let mut e = ConfigError::new(Some(&dotted), message);
        if self.overridden.contains(&format!("{table}.{key}")) {
            e.location = Some(format!(
                "environment {ENV_PREFIX}{}__{}",
                table.to_uppercase(),
                key.to_uppercase()
            ));
        } else if let Some(file) = self.file {
            e.location = Some(match locate(self.text, table, key, occurrence) {
                Some(line) => format!("{file}:{line}"),
                None => file.to_string(),
            });
        }
        e
    }
}

/// Parses `DRIFTER_SECTION__KEY=value` pairs into the TOML table.
fn apply_env(
    table: &mut toml::Table,
    env: &[(String, String)],
) -> Result<BTreeSet<String>, ConfigError> {
    let mut touched = BTreeSet::new();
    for (name, raw) in env {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        // flag-level variables handled by the argument parser
        if !rest.contains("__") {
            continue;
        }
        let parts: Vec<String> = rest.split("__").map(str::to_lowercase).collect();
        if parts.len() != 2 || parts.iter().any(String::is_empty) || parts[0] == "rules" {
            return Err(ConfigError::new(
                Some(name),
                "expected DRIFTER_<SECTION>__<KEY> naming a scalar key",
            ));
        }
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.clone()));
        let section = table
            .entry(parts[0].clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let Some(section) = section.as_table_mut() else {
            return Err(ConfigError::new(Some(name), format!("{} is not a table", parts[0])));
        };
        section.insert(parts[1].clone(), value);
        touched.insert(format!("{}.{}", parts[0], parts[1]));
    }
    Ok(touched)
}

fn strip_line_prefix(e: &toml::de::Error, text: &str) -> (Option<usize>, String) {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    (line, e.message().to_string())
}

/// Reads, overrides and validates a configuration. `path = None` starts from
/// defaults.
pub fn load(path: Option<&Path>, env: &[(String, String)]) -> Result<CliConfig, ConfigError> {
    let (text, file) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| ConfigError::new(None, format!("cannot read {}: {e}", p.display())))?;
            (text, Some(p.display().to_string()))
        }
        None => (String::new(), None),
    };
    parse(&text, file.as_deref(), env)
}

pub fn parse(text: &str, file: Option<&str>, env: &[(String, String)]) -> Result<CliConfig, ConfigError> {
    let at = |line: Option<usize>| match (file, line) {
        (Some(f), Some(l)) => Some(format!("{f}:{l}")),
        (Some(f), None) => Some(f.to_string()),
        (None, Some(l)) => Some(format!("line {l}")),
        (None, None) => None,
    };
    // typed pass over the file alone keeps spans for line-anchored errors
    if let Err(e) = toml::from_str::<RawConfig>(text) {
        let (line, message) = strip_line_prefix(&e, text);
        return Err(ConfigError {
            location: at(line),
            key: None,
            message,
        });
    }
    let mut table: toml::Table = toml::from_str(text).expect("parsed above");
    let overridden = apply_env(&mut table, env)?;
    let raw: RawConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError {
        location: Some("environment overrides".into()),
        key: None,
        message: e.message().to_string(),
    })?;
    let origin = Origin {
        file,
        text,
        overridden,
    };
    resolve(raw, &origin)
}

fn positive(origin: &Origin, table: &str, key: &str, v: i64, max: i64) -> Result<i64, ConfigError> {
    if v < 1 || v > max {
        return Err(origin.error(table, key, 0, format!("{v} is outside 1..={max}")));
    }
    Ok(v)
}

fn resolve(mut raw: RawConfig, origin: &Origin) -> Result<CliConfig, ConfigError> {
    let mut warnings = Vec::new();
    let window = raw.source.window;
    window
        .validate()
        .map_err(|e| origin.error("source", "window", 0, e.to_string()))?;

    let e = &raw.engine;
    if e.interaction_cap < 0 {
        return Err(origin.error(
            "engine",
            "interaction_cap",
            0,
            RankingConfig::cap_from_i64(e.interaction_cap)
                .expect_err("negative")
                .to_string(),
        ));
    }
    let bucket_count = positive(origin, "engine", "bucket_count", e.bucket_count, i64::from(u32::MAX))?;
    if bucket_count < 2 {
        return Err(origin.error("engine", "bucket_count", 0, "must be at least 2"));
    }
    let precision = e.hll_precision;
    if !(4..=16).contains(&precision) {
        return Err(origin.error("engine", "hll_precision", 0, format!("{precision} is outside 4..=16")));
    }
    let max_bins = positive(origin, "engine", "max_bins", e.max_bins, 1 << 20)?;
    let max_features = positive(origin, "engine", "max_features", e.max_features, 1 << 24)?;
    let rank_every = positive(origin, "engine", "rank_every", e.rank_every, i64::MAX)?;
    let width = positive(origin, "engine", "contingency_width", e.contingency_width, 1 << 16)?;
    if width < 2 {
        return Err(origin.error("engine", "contingency_width", 0, "must be at least 2"));
    }
    let series_capacity = match e.series_capacity {
        Some(c) => Some(positive(origin, "engine", "series_capacity", c, 1 << 20)? as usize),
        None => None,
    };
    if let Some(q) = e.quantiles.iter().find(|q| !(0.0..=1.0).contains(*q)) {
        return Err(origin.error("engine", "quantiles", 0, format!("{q} is outside [0, 1]")));
    }
    if !(0.0..=1.0).contains(&e.max_reject_fraction) {
        return Err(origin.error(
            "engine",
            "max_reject_fraction",
            0,
            format!("{} is outside [0, 1]", e.max_reject_fraction),
        ));
    }
    for (key, list) in [("allow", &e.allow), ("deny", &e.deny)] {
        for p in list {
            if let Err(err) = regex::Regex::new(p) {
                return Err(origin.error("engine", key, 0, format!("pattern {p:?}: {err}")));
            }
        }
    }
    for p in e.allow.iter().filter(|p| e.deny.contains(p)) {
        warnings.push(format!(
            "pattern {p:?} is in both engine.allow and engine.deny; the denylist wins"
        ));
    }

    let known: BTreeSet<String> = [metric::COVERAGE, metric::CARDINALITY, metric::STDDEV, metric::MI_SCORE]
        .into_iter()
        .map(str::to_string)
        .chain(e.quantiles.iter().map(|&q| metric::quantile(q)))
        .collect();
    let raw_rules = raw.rules.clone().unwrap_or_else(|| vec![default_rule(&window)]);
    let mut rules = Vec::new();
    let mut resolved_rules = Vec::new();
    for (i, r) in raw_rules.into_iter().enumerate() {
        let occ = i + 1;
        if !known.contains(&r.metric) {
            let names: Vec<&str> = known.iter().map(String::as_str).collect();
            return Err(origin.error(
                "rules",
                "metric",
                occ,
                format!("unknown metric {:?}; expected one of {}", r.metric, names.join(", ")),
            ));
        }
        let r = r.resolved(&window);
        let win = r.window_millis.expect("resolved");
        let rule = match r.kind {
            RuleKind::StddevOutlier => {
                DriftRule::stddev_outlier(&r.metric, win, r.coefficient.expect("resolved"))
            }
            kind => {
                let Some(threshold) = r.threshold else {
                    return Err(origin.error("rules", "threshold", occ, "required for delta rules"));
                };
                let offset = r.offset_millis.expect("resolved");
                if kind == RuleKind::RelativeDelta {
                    DriftRule::relative(&r.metric, offset, win, threshold)
                } else {
                    DriftRule::absolute(&r.metric, offset, win, threshold)
                }
            }
        }
        .map_err(|err| origin.error("rules", "kind", occ, err.to_string()))?;
        rules.push(rule);
        resolved_rules.push(r);
    }

    let port = raw.export.port;
    if !(0..=i64::from(u16::MAX)).contains(&port) {
        return Err(origin.error("export", "port", 0, format!("{port} is not a valid TCP port")));
    }

    let engine = EngineConfig {
        bucket_count: bucket_count as u32,
        hll_precision: precision as u8,
        max_bins: max_bins as usize,
        interaction_cap: e.interaction_cap as usize,
        seed: e.seed,
        quantiles: e.quantiles.clone(),
        rules,
        window,
        allow: e.allow.clone(),
        deny: e.deny.clone(),
        max_features: max_features as usize,
        rank_every: rank_every as u64,
        contingency_width: width as u32,
        series_capacity,
        max_reject_fraction: e.max_reject_fraction,
    };
    engine
        .validate()
        .map_err(|err| ConfigError::new(Some("engine"), err.to_string()))?;

    raw.rules = Some(resolved_rules);
    Ok(CliConfig {
        source: SourceConfig {
            path: raw.source.path.clone(),
            format: raw.source.format,
            compression: raw.source.compression,
            window,
        },
        engine,
        bind: raw.export.bind.clone(),
        port: port as u16,
        alert_log: raw.export.alert_log.clone(),
        resolved: raw,
        warnings,
    })
}

impl CliConfig {
    pub fn set_port(&mut self, port: u16) {
        self.port = port;
        self.resolved.export.port = i64::from(port);
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.engine.seed = seed;
        self.resolved.engine.seed = seed;
    }

    pub fn set_input(&mut self, path: &str) {
        self.source.path = path.to_string();
        self.resolved.source.path = path.to_string();
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.resolved).expect("config serializes")
    }
}

/// The default configuration as TOML, shown in `--help`.
pub fn defaults_toml() -> String {
    let cfg = parse("", None, &[]).expect("defaults are valid");
    let mut out = cfg.to_toml();
    if out.ends_with('\n') {
        out.pop();
    }
    out
}
