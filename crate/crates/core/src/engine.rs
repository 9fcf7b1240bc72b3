//! Per-window pipeline: profile every known feature, rank against the label,
//! extend the metric histories, evaluate drift rules and freeze the result
//! into a snapshot.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::Instant;

use regex::Regex;
use thiserror::Error;

use crate::drift::{evaluate_all, AlertEvent, AlertKind, DriftRule, SeriesStore};
use crate::export::{families, format_value, MetricSample};
use crate::ingest::{ParseStats, WindowMode};
use crate::model::{reduce, stable_hash64, MiniBatch, DEFAULT_BUCKET_COUNT};
use crate::ranking::{
    rank_batch, RankingConfig, RankingError, RankingResult, SparseColumn, DEFAULT_CONTINGENCY_WIDTH,
    DEFAULT_INTERACTION_CAP,
};
use crate::sketches::{
    FeatureProfile, DEFAULT_MAX_BINS, DEFAULT_PRECISION, DEFAULT_QUANTILES, MAX_PRECISION, MIN_PRECISION,
};

pub const DEFAULT_MAX_FEATURES: usize = 10_000;
pub const DEFAULT_MAX_REJECT_FRACTION: f64 = 0.5;
/// Series history when windows have no fixed duration.
pub const DEFAULT_SERIES_CAPACITY: usize = 256;
/// Value hashing is independent of the ranking seed so bucket series stay
/// comparable across runs with different seeds.
pub const VALUE_HASH_SEED: u64 = 0;

pub mod metric {
    pub const COVERAGE: &str = "coverage";
    pub const CARDINALITY: &str = "cardinality";
    pub const STDDEV: &str = "stddev";
    pub const MI_SCORE: &str = "mi_score";

    /// Series name of quantile `q`, e.g. `quantile_0.5`.
    pub fn quantile(q: f64) -> String {
        format!("quantile_{}", crate::export::format_value(q))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid engine config: {0}")]
    Config(String),
    #[error("window {got} does not follow window {previous}")]
    WindowOrder { previous: u64, got: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub bucket_count: u32,
    pub hll_precision: u8,
    pub max_bins: usize,
    pub interaction_cap: usize,
    pub seed: u64,
    pub quantiles: Vec<f64>,
    pub rules: Vec<DriftRule>,
    pub window: WindowMode,
    pub allow: Vec<String>,
    pub deny: Vec<String>,
    pub max_features: usize,
    /// Rank every n-th window.
    pub rank_every: u64,
    pub contingency_width: u32,
    /// Points kept per series; derived from the rules when unset.
    pub series_capacity: Option<usize>,
    pub max_reject_fraction: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            bucket_count: DEFAULT_BUCKET_COUNT,
            hll_precision: DEFAULT_PRECISION,
            max_bins: DEFAULT_MAX_BINS,
            interaction_cap: DEFAULT_INTERACTION_CAP,
            seed: 0,
            quantiles: DEFAULT_QUANTILES.to_vec(),
            rules: Vec::new(),
            window: WindowMode::default(),
            allow: Vec::new(),
            deny: Vec::new(),
            max_features: DEFAULT_MAX_FEATURES,
            rank_every: 1,
            contingency_width: DEFAULT_CONTINGENCY_WIDTH,
            series_capacity: None,
            max_reject_fraction: DEFAULT_MAX_REJECT_FRACTION,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::Config(m));
        if self.bucket_count < 2 {
            return bad(format!("bucket_count {} must be at least 2", self.bucket_count));
        }
        if !(MIN_PRECISION..=MAX_PRECISION).contains(&self.hll_precision) {
            return bad(format!(
                "hll_precision {} outside [{MIN_PRECISION}, {MAX_PRECISION}]",
                self.hll_precision
            ));
        }
        if self.max_bins == 0 {
            return bad("max_bins must be positive".into());
        }
        if let Some(q) = self.quantiles.iter().find(|q| !(0.0..=1.0).contains(*q)) {
            return bad(format!("quantile {q} outside [0, 1]"));
        }
        if self.max_features == 0 {
            return bad("max_features must be positive".into());
        }
        if self.rank_every == 0 {
            return bad("rank_every must be at least 1".into());
        }
        if !(2..=crate::ranking::MAX_ARITY).contains(&self.contingency_width) {
            return bad(format!("contingency_width {} out of range", self.contingency_width));
        }
        if self.series_capacity == Some(0) {
            return bad("series_capacity must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.max_reject_fraction) {
            return bad(format!("max_reject_fraction {} outside [0, 1]", self.max_reject_fraction));
        }
        self.window.validate().map_err(|e| EngineError::Config(e.to_string()))?;
        for r in &self.rules {
            r.clone().validated().map_err(|e| EngineError::Config(e.to_string()))?;
        }
        compile(&self.allow)?;
        compile(&self.deny)?;
        Ok(())
    }

    /// History long enough for the widest rule lookback, plus slack.
    pub fn effective_series_capacity(&self) -> usize {
        if let Some(c) = self.series_capacity {
            return c;
        }
        let Some(d) = self.window.millis() else {
            return DEFAULT_SERIES_CAPACITY;
        };
        let reach = self
            .rules
            .iter()
            .map(|r| r.offset_interval.max(0) + r.eval_window)
            .max()
            .unwrap_or(d);
        (reach.div_euclid(d) + 1).max(1) as usize + 2
    }
}

fn compile(patterns: &[String]) -> Result<Vec<Regex>, EngineError> {
    patterns
        .iter()
        .map(|p| Regex::new(p).map_err(|e| EngineError::Config(format!("pattern {p:?}: {e}"))))
        .collect()
}

/// Patterns that appear verbatim in both lists. The denylist wins for them.
pub fn conflicting_patterns(cfg: &EngineConfig) -> Vec<String> {
    cfg.allow.iter().filter(|p| cfg.deny.contains(p)).cloned().collect()
}

/// Running totals carried across windows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Counters {
    pub records_processed: u64,
    pub parse_rejected: u64,
    pub diagnostics: u64,
    pub alerts: BTreeMap<AlertKind, u64>,
}

impl Counters {
    pub fn alerts_of(&self, kind: AlertKind) -> u64 {
        self.alerts.get(&kind).copied().unwrap_or(0)
    }
}

/// Frozen result of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSnapshot {
    pub window_id: u64,
    pub window_start: i64,
    pub window_end: i64,
    pub profiles: BTreeMap<String, FeatureProfile>,
    /// Present only on ranking windows.
    pub ranking: Option<RankingResult>,
    /// Latest known MI score per feature.
    pub mi_scores: BTreeMap<String, f64>,
    pub quantiles: Vec<f64>,
    pub events: Vec<AlertEvent>,
    pub parse: ParseStats,
    pub records: u64,
    pub processing_millis: f64,
    pub counters: Counters,
}

pub struct Engine {
    cfg: EngineConfig,
    allow: Vec<Regex>,
    deny: Vec<Regex>,
    /// Onboarded names in arrival order; index into per-window state.
    names: Vec<String>,
    index: HashMap<String, usize>,
    /// Names refused by the allow/deny filters, bounded to `max_features`.
    filtered: HashSet<String>,
    store: SeriesStore,
    mi_scores: BTreeMap<String, f64>,
    counters: Counters,
    last_window: Option<u64>,
    windows_seen: u64,
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Result<Self, EngineError> {
        cfg.validate()?;
        let store = SeriesStore::new(cfg.effective_series_capacity())
            .map_err(|e| EngineError::Config(e.to_string()))?;
        Ok(Engine {
            allow: compile(&cfg.allow)?,
            deny: compile(&cfg.deny)?,
            cfg,
            names: Vec::new(),
            index: HashMap::new(),
            filtered: HashSet::new(),
            store,
            mi_scores: BTreeMap::new(),
            counters: Counters::default(),
            last_window: None,
            windows_seen: 0,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn series(&self) -> &SeriesStore {
        &self.store
    }

    pub fn features(&self) -> &[String] {
        &self.names
    }

    /// Folds in parse statistics that never reached a window, e.g. rejected
    /// lines after the last record.
    pub fn absorb_parse_stats(&mut self, stats: &ParseStats) {
        self.counters.parse_rejected += stats.lines_rejected;
    }

    fn admitted(&self, name: &str) -> bool {
        let allowed = self.allow.is_empty() || self.allow.iter().any(|r| r.is_match(name));
        allowed && !self.deny.iter().any(|r| r.is_match(name))
    }

    /// Index of `name`, onboarding it if allowed. `Err(())` means the cap
    /// refused a new name.
    fn lookup(&mut self, name: &str) -> Result<Option<usize>, ()> {
        if let Some(&i) = self.index.get(name) {
            return Ok(Some(i));
        }
        if self.filtered.contains(name) {
            return Ok(None);
        }
        if !self.admitted(name) {
            if self.filtered.len() < self.cfg.max_features {
                self.filtered.insert(name.to_string());
            }
            return Ok(None);
        }
        if self.names.len() >= self.cfg.max_features {
            return Err(());
        }
        let i = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        Ok(Some(i))
    }

    pub fn process_window(&mut self, batch: &MiniBatch, parse: &ParseStats) -> Result<WindowSnapshot, EngineError> {
        if let Some(previous) = self.last_window {
            if batch.window_id <= previous {
                return Err(EngineError::WindowOrder {
                    previous,
                    got: batch.window_id,
                });
            }
        }
        let started = Instant::now();
        let cfg = self.cfg.clone();
        let n = batch.len();
        let mut diagnostics = 0u64;
        let mut capped: Vec<String> = Vec::new();

        let mut profiles: Vec<FeatureProfile> = Vec::with_capacity(self.names.len());
        let mut columns: Vec<(Vec<u32>, Vec<u32>)> = Vec::with_capacity(self.names.len());
        let mut failed: Vec<bool> = Vec::with_capacity(self.names.len());
        let fresh = || FeatureProfile::new(cfg.hll_precision, cfg.max_bins).expect("validated config");

        for (row, record) in batch.records.iter().enumerate() {
            for (name, value) in &record.features {
                let i = match self.lookup(name.as_str()) {
                    Ok(Some(i)) => i,
                    Ok(None) => continue,
                    Err(()) => {
                        if capped.len() < 16 && !capped.iter().any(|c| c == name.as_str()) {
                            capped.push(name.to_string());
                        }
                        continue;
                    }
                };
                while profiles.len() <= i {
                    profiles.push(fresh());
                    columns.push((Vec::new(), Vec::new()));
                    failed.push(false);
                }
                if failed[i] {
                    continue;
                }
                let observed = stable_hash64(name.as_str(), value, VALUE_HASH_SEED)
                    .map_err(|e| e.to_string())
                    .and_then(|h| profiles[i].observe(Some((value, h))).map(|_| h).map_err(|e| e.to_string()));
                match observed {
                    Ok(h) => {
                        columns[i].0.push(row as u32);
                        columns[i].1.push(reduce(h, cfg.bucket_count).bucket());
                    }
                    Err(e) => {
                        log::warn!("window {}: feature {name} skipped: {e}", batch.window_id);
                        failed[i] = true;
                        diagnostics += 1;
                    }
                }
            }
        }
        while profiles.len() < self.names.len() {
            profiles.push(fresh());
            columns.push((Vec::new(), Vec::new()));
            failed.push(false);
        }
        for p in &mut profiles {
            let missing = n as u64 - p.present_count();
            p.observe_missing(missing);
        }

        let ranking = if self.windows_seen.is_multiple_of(cfg.rank_every) {
            self.rank(batch, &columns, &failed, &cfg, &mut diagnostics)
        } else {
            None
        };
        if let Some(r) = &ranking {
            for (i, name) in self.names.iter().enumerate() {
                if failed[i] {
                    continue;
                }
                let score = r.scores.get(name).copied().unwrap_or(0.0);
                profiles[i].set_relevance(score);
                self.mi_scores.insert(name.clone(), score);
            }
        }

        let t = batch.window_end;
        for (i, name) in self.names.iter().enumerate() {
            if failed[i] {
                continue;
            }
            let p = &profiles[i];
            let mut points = vec![
                (metric::COVERAGE.to_string(), p.coverage()),
                (metric::CARDINALITY.to_string(), p.cardinality()),
            ];
            if p.has_numeric() {
                points.push((metric::STDDEV.to_string(), p.moments().stddev()));
                for &q in &cfg.quantiles {
                    if let Ok(v) = p.histogram().quantile(q) {
                        points.push((metric::quantile(q), v));
                    }
                }
            }
            if ranking.is_some() {
                points.push((metric::MI_SCORE.to_string(), p.relevance().unwrap_or(0.0)));
            }
            for (m, v) in points {
                if let Err(e) = self.store.append(&m, name, t, v) {
                    log::warn!("series {m}/{name}: {e}");
                    diagnostics += 1;
                }
            }
        }

        let evaluation = evaluate_all(&cfg.rules, &self.store, t, batch.window_id);
        diagnostics += evaluation.failures;
        let mut events = evaluation.events;
        events.dedup_by(|a, b| (a.kind, &a.metric, &a.feature) == (b.kind, &b.metric, &b.feature));

        let reject_fraction = parse.reject_fraction();
        if parse.lines_rejected > 0 && reject_fraction > cfg.max_reject_fraction {
            events.push(AlertEvent {
                kind: AlertKind::ParseRejections,
                feature: String::new(),
                metric: "parse_reject_fraction".into(),
                observed: reject_fraction,
                reference: cfg.max_reject_fraction,
                fired_at: t,
                window_id: batch.window_id,
            });
        }
        if !capped.is_empty() {
            log::warn!(
                "window {}: feature cap {} reached, refusing {}",
                batch.window_id,
                cfg.max_features,
                capped.join(", ")
            );
            events.push(AlertEvent {
                kind: AlertKind::FeatureCap,
                feature: capped[0].clone(),
                metric: "features_tracked".into(),
                observed: (self.names.len() + capped.len()) as f64,
                reference: cfg.max_features as f64,
                fired_at: t,
                window_id: batch.window_id,
            });
        }

        self.counters.records_processed += n as u64;
        self.counters.parse_rejected += parse.lines_rejected;
        self.counters.diagnostics += diagnostics;
        for e in &events {
            *self.counters.alerts.entry(e.kind).or_insert(0) += 1;
        }
        self.last_window = Some(batch.window_id);
        self.windows_seen += 1;

        let profiles = self
            .names
            .iter()
            .zip(profiles)
            .zip(&failed)
            .filter(|(_, &f)| !f)
            .map(|((name, p), _)| (name.clone(), p))
            .collect();
        Ok(WindowSnapshot {
            window_id: batch.window_id,
            window_start: batch.window_start,
            window_end: batch.window_end,
            profiles,
            ranking,
            mi_scores: self.mi_scores.clone(),
            quantiles: cfg.quantiles.clone(),
            events,
            parse: parse.clone(),
            records: n as u64,
            processing_millis: started.elapsed().as_secs_f64() * 1e3,
            counters: self.counters.clone(),
        })
    }

    fn rank(
        &self,
        batch: &MiniBatch,
        columns: &[(Vec<u32>, Vec<u32>)],
        failed: &[bool],
        cfg: &EngineConfig,
        diagnostics: &mut u64,
    ) -> Option<RankingResult> {
        let n = batch.len();
        let mut cols: BTreeMap<&str, SparseColumn> = BTreeMap::new();
        for (i, (idx, vals)) in columns.iter().enumerate() {
            if failed[i] || idx.is_empty() {
                continue;
            }
            match SparseColumn::new(n, idx.clone(), vals.clone(), cfg.bucket_count) {
                Ok(c) => {
                    cols.insert(self.names[i].as_str(), c);
                }
                Err(e) => {
                    log::warn!("column {}: {e}", self.names[i]);
                    *diagnostics += 1;
                }
            }
        }
        let rcfg = RankingConfig {
            interaction_cap: cfg.interaction_cap,
            seed: cfg.seed ^ batch.window_id,
            bucket_count: cfg.bucket_count,
            contingency_width: cfg.contingency_width,
        };
        match rank_batch(batch, &cols, &rcfg) {
            Ok(r) => Some(r),
            Err(RankingError::Unlabeled) => {
                log::debug!("window {}: no labels, ranking skipped", batch.window_id);
                None
            }
            Err(e) => {
                log::warn!("window {}: ranking failed: {e}", batch.window_id);
                *diagnostics += 1;
                None
            }
        }
    }
}

/// Free-function form of [`Engine::process_window`].
pub fn process_window(
    batch: &MiniBatch,
    engine: &mut Engine,
    parse: &ParseStats,
) -> Result<WindowSnapshot, EngineError> {
    engine.process_window(batch, parse)
}

fn push(out: &mut Vec<MetricSample>, sample: Result<MetricSample, crate::export::ExportError>) {
    // names are compile-time constants and label keys are fixed
    out.push(sample.expect("static metric names are valid"));
}

fn counters_metrics(out: &mut Vec<MetricSample>, c: &Counters) {
    for kind in AlertKind::ALL {
        push(
            out,
            MetricSample::counter(families::ALERTS_TOTAL, &[("kind", kind.as_str())], c.alerts_of(kind) as f64),
        );
    }
    push(out, MetricSample::counter(families::RECORDS_PROCESSED_TOTAL, &[], c.records_processed as f64));
    push(out, MetricSample::counter(families::PARSE_REJECTED_TOTAL, &[], c.parse_rejected as f64));
    push(out, MetricSample::counter(families::DIAGNOSTICS_TOTAL, &[], c.diagnostics as f64));
}

/// What a scrape sees before the first window: liveness and zeroed
/// counters, no feature families.
pub fn initial_metrics() -> Vec<MetricSample> {
    idle_metrics(&Counters::default())
}

/// Liveness plus the given counters, for a run that has not yet emitted a
/// window.
pub fn idle_metrics(counters: &Counters) -> Vec<MetricSample> {
    let mut out = Vec::new();
    push(&mut out, MetricSample::gauge(families::UP, &[], 1.0));
    counters_metrics(&mut out, counters);
    out
}

/// Flattens a snapshot into samples. Timing gauges vary between runs and
/// are left out when `include_timing` is false.
pub fn snapshot_metrics(s: &WindowSnapshot, include_timing: bool) -> Vec<MetricSample> {
    let mut out = Vec::new();
    push(&mut out, MetricSample::gauge(families::UP, &[], 1.0));
    push(&mut out, MetricSample::gauge(families::WINDOW_ID, &[], s.window_id as f64));
    push(&mut out, MetricSample::gauge(families::FEATURES_TRACKED, &[], s.profiles.len() as f64));
    counters_metrics(&mut out, &s.counters);
    let pairs = s.ranking.as_ref().map_or(0, |r| r.evaluated_pairs);
    push(&mut out, MetricSample::gauge(families::INTERACTIONS_EVALUATED, &[], pairs as f64));

    let qs: Vec<(f64, String)> = s.quantiles.iter().map(|&q| (q, format_value(q))).collect();
    for (name, p) in &s.profiles {
        let f = [("feature", name.as_str())];
        push(&mut out, MetricSample::gauge(families::FEATURE_COVERAGE, &f, p.coverage()));
        push(&mut out, MetricSample::gauge(families::FEATURE_CARDINALITY, &f, p.cardinality()));
        if let Some(mi) = s.mi_scores.get(name) {
            push(&mut out, MetricSample::gauge(families::FEATURE_MI_SCORE, &f, *mi));
        }
        if p.has_numeric() {
            push(&mut out, MetricSample::gauge(families::FEATURE_STDDEV, &f, p.moments().stddev()));
            for (q, label) in &qs {
                if let Ok(v) = p.histogram().quantile(*q) {
                    push(
                        &mut out,
                        MetricSample::gauge(families::FEATURE_QUANTILE, &[("feature", name), ("q", label)], v),
                    );
                }
            }
        }
    }
    if include_timing {
        push(
            &mut out,
            MetricSample::gauge(families::WINDOW_PROCESSING_MILLISECONDS, &[], s.processing_millis),
        );
        let rate = if s.processing_millis > 0.0 {
            s.records as f64 / (s.processing_millis / 1e3)
        } else {
            0.0
        };
        push(&mut out, MetricSample::gauge(families::RECORDS_PER_SECOND, &[], rate));
    }
    out
}
