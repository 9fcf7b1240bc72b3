//! Sliding-window drift rules over bounded metric histories.
//!
//! Three rule shapes are supported, mirroring the usual dashboard queries:
//!
//! ```text
//! relative:  abs((avg by (feature_name) (metric) offset interval) / (avg by (feature_name) (metric)) * 100 > threshold
//! absolute:  abs((avg by (feature_name) (metric) offset interval) - (avg by (feature_name) (metric))) > threshold
//! outlier:   stddev by (feature_name) (metric) > 1/2 * avg by (feature_name) (metric)
//! ```
//!
//! Read literally, the relative form fires on any steady series once the
//! threshold is below 100. It is evaluated as a percent change instead:
//! `|past - cur| / max(|cur|, 1e-12) * 100 > threshold`.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Guards the relative change when the current average is zero.
pub const RELATIVE_EPSILON: f64 = 1e-12;
pub const DEFAULT_OUTLIER_COEFFICIENT: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DriftError {
    #[error("point at {t} is older than the last point at {last}")]
    OutOfOrder { t: i64, last: i64 },
    #[error("series capacity must be positive")]
    Capacity,
    #[error("invalid rule: {0}")]
    InvalidRule(String),
    #[error("rule of kind {expected:?} evaluated as {got:?}")]
    KindMismatch { expected: RuleKind, got: RuleKind },
    #[error("non-finite value {0}")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    RelativeDelta,
    AbsoluteDelta,
    StddevOutlier,
}

/// What an alert event reports. Data-quality kinds come from the engine
/// rather than from a configured rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertKind {
    RelativeDelta,
    AbsoluteDelta,
    StddevOutlier,
    ParseRejections,
    FeatureCap,
}

impl AlertKind {
    pub const ALL: [AlertKind; 5] = [
        AlertKind::RelativeDelta,
        AlertKind::AbsoluteDelta,
        AlertKind::StddevOutlier,
        AlertKind::ParseRejections,
        AlertKind::FeatureCap,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AlertKind::RelativeDelta => "relative_delta",
            AlertKind::AbsoluteDelta => "absolute_delta",
            AlertKind::StddevOutlier => "stddev_outlier",
            AlertKind::ParseRejections => "parse_rejections",
            AlertKind::FeatureCap => "feature_cap",
        }
    }
}

impl From<RuleKind> for AlertKind {
    fn from(k: RuleKind) -> Self {
        match k {
            RuleKind::RelativeDelta => AlertKind::RelativeDelta,
            RuleKind::AbsoluteDelta => AlertKind::AbsoluteDelta,
            RuleKind::StddevOutlier => AlertKind::StddevOutlier,
        }
    }
}

/// Bounded, time-ordered history of one metric for one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    metric: String,
    feature: String,
    capacity: usize,
    points: VecDeque<(i64, f64)>,
}

impl MetricSeries {
    pub fn new(
        metric: impl Into<String>,
        feature: impl Into<String>,
        capacity: usize,
    ) -> Result<Self, DriftError> {
        if capacity == 0 {
            return Err(DriftError::Capacity);
        }
        Ok(MetricSeries {
            metric: metric.into(),
            feature: feature.into(),
            capacity,
            points: VecDeque::with_capacity(capacity),
        })
    }

    pub fn metric(&self) -> &str {
        &self.metric
    }

    pub fn feature(&self) -> &str {
        &self.feature
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.points.iter().copied()
    }

    /// Appends a point, evicting the oldest one at capacity.
    pub fn append(&mut self, t: i64, v: f64) -> Result<(), DriftError> {
        if !v.is_finite() {
            return Err(DriftError::NonFinite(v));
        }
        if let Some(&(last, _)) = self.points.back() {
            if t < last {
                return Err(DriftError::OutOfOrder { t, last });
            }
        }
        if self.points.len() == self.capacity {
            self.points.pop_front();
        }
        self.points.push_back((t, v));
        Ok(())
    }

    /// Values with timestamp in `(end - window, end]`.
    fn in_window(&self, end: i64, window: i64) -> impl Iterator<Item = f64> + '_ {
        let start = end.saturating_sub(window);
        self.points
            .iter()
            .rev()
            .skip_while(move |(t, _)| *t > end)
            .take_while(move |(t, _)| *t > start)
            .map(|(_, v)| *v)
    }

    /// Arithmetic mean over `(end - window, end]`; `None` when no point falls
    /// in range.
    pub fn window_avg(&self, end: i64, window: i64) -> Option<f64> {
        let (sum, n) = self
            .in_window(end, window)
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

pub fn series_append(mut s: MetricSeries, t: i64, v: f64) -> Result<MetricSeries, DriftError> {
    s.append(t, v)?;
    Ok(s)
}

pub fn window_avg(s: &MetricSeries, end: i64, window: i64) -> Option<f64> {
    s.window_avg(end, window)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRule {
    pub kind: RuleKind,
    pub metric: String,
    pub offset_interval: i64,
    pub eval_window: i64,
    pub threshold: f64,
    pub outlier_coefficient: f64,
}

impl DriftRule {
    pub fn relative(metric: &str, offset: i64, window: i64, threshold_pct: f64) -> Result<Self, DriftError> {
        DriftRule {
            kind: RuleKind::RelativeDelta,
            metric: metric.to_string(),
            offset_interval: offset,
            eval_window: window,
            threshold: threshold_pct,
            outlier_coefficient: DEFAULT_OUTLIER_COEFFICIENT,
        }
        .validated()
    }

    pub fn absolute(metric: &str, offset: i64, window: i64, threshold: f64) -> Result<Self, DriftError> {
        DriftRule {
            kind: RuleKind::AbsoluteDelta,
            metric: metric.to_string(),
            offset_interval: offset,
            eval_window: window,
            threshold,
            outlier_coefficient: DEFAULT_OUTLIER_COEFFICIENT,
        }
        .validated()
    }

    pub fn stddev_outlier(metric: &str, window: i64, coefficient: f64) -> Result<Self, DriftError> {
        DriftRule {
            kind: RuleKind::StddevOutlier,
            metric: metric.to_string(),
            offset_interval: window,
            eval_window: window,
            threshold: 0.0,
            outlier_coefficient: coefficient,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self, DriftError> {
        let bad = |m: String| Err(DriftError::InvalidRule(m));
        if self.metric.is_empty() {
            return bad("metric name is empty".into());
        }
        if !(self.threshold >= 0.0) || !self.threshold.is_finite() {
            return bad(format!("threshold {} must be finite and >= 0", self.threshold));
        }
        if self.eval_window <= 0 {
            return bad(format!("eval window {} must be positive", self.eval_window));
        }
        if self.kind != RuleKind::StddevOutlier && self.offset_interval < self.eval_window {
            return bad(format!(
                "offset {} must be at least the eval window {}",
                self.offset_interval, self.eval_window
            ));
        }
        if !(self.outlier_coefficient > 0.0) || !self.outlier_coefficient.is_finite() {
            return bad(format!(
                "outlier coefficient {} must be positive",
                self.outlier_coefficient
            ));
        }
        Ok(self)
    }
}

/// A fired rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    pub kind: AlertKind,
    pub feature: String,
    pub metric: String,
    pub observed: f64,
    pub reference: f64,
    pub fired_at: i64,
    pub window_id: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RuleOutcome {
    Fired(AlertEvent),
    Quiet,
    /// One of the compared windows had no data.
    MissingData,
}

impl RuleOutcome {
    pub fn alert(self) -> Option<AlertEvent> {
        match self {
            RuleOutcome::Fired(e) => Some(e),
            _ => None,
        }
    }
}

fn expect_kind(rule: &DriftRule, kind: RuleKind) -> Result<(), DriftError> {
    if rule.kind == kind {
        Ok(())
    } else {
        Err(DriftError::KindMismatch {
            expected: kind,
            got: rule.kind,
        })
    }
}

fn current_and_past(s: &MetricSeries, rule: &DriftRule, now: i64) -> Option<(f64, f64)> {
    let cur = s.window_avg(now, rule.eval_window)?;
    let past = s.window_avg(now.saturating_sub(rule.offset_interval), rule.eval_window)?;
    Some((cur, past))
}

fn event(s: &MetricSeries, kind: RuleKind, observed: f64, reference: f64, now: i64, window_id: u64) -> RuleOutcome {
    RuleOutcome::Fired(AlertEvent {
        kind: kind.into(),
        feature: s.feature.clone(),
        metric: s.metric.clone(),
        observed,
        reference,
        fired_at: now,
        window_id,
    })
}

pub fn eval_relative_delta(
    s: &MetricSeries,
    rule: &DriftRule,
    now: i64,
    window_id: u64,
) -> Result<RuleOutcome, DriftError> {
    expect_kind(rule, RuleKind::RelativeDelta)?;
    let Some((cur, past)) = current_and_past(s, rule, now) else {
        return Ok(RuleOutcome::MissingData);
    };
    let change = (past - cur).abs() / cur.abs().max(RELATIVE_EPSILON) * 100.0;
    Ok(if change > rule.threshold {
        event(s, rule.kind, cur, past, now, window_id)
    } else {
        RuleOutcome::Quiet
    })
}

pub fn eval_absolute_delta(
    s: &MetricSeries,
    rule: &DriftRule,
    now: i64,
    window_id: u64,
) -> Result<RuleOutcome, DriftError> {
    expect_kind(rule, RuleKind::AbsoluteDelta)?;
    let Some((cur, past)) = current_and_past(s, rule, now) else {
        return Ok(RuleOutcome::MissingData);
    };
    Ok(if (past - cur).abs() > rule.threshold {
        event(s, rule.kind, cur, past, now, window_id)
    } else {
        RuleOutcome::Quiet
    })
}

/// Fires when the population stddev of the in-window points exceeds
/// `coefficient * |mean|`. Needs at least two points.
pub fn eval_stddev_outlier(
    s: &MetricSeries,
    rule: &DriftRule,
    now: i64,
    window_id: u64,
) -> Result<RuleOutcome, DriftError> {
    expect_kind(rule, RuleKind::StddevOutlier)?;
    let values: Vec<f64> = s.in_window(now, rule.eval_window).collect();
    if values.len() < 2 {
        return Ok(RuleOutcome::MissingData);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let stddev = if lo == hi {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
    };
    Ok(if stddev > rule.outlier_coefficient * mean.abs() {
        event(s, rule.kind, stddev, mean, now, window_id)
    } else {
        RuleOutcome::Quiet
    })
}

pub fn eval_rule(
    s: &MetricSeries,
    rule: &DriftRule,
    now: i64,
    window_id: u64,
) -> Result<RuleOutcome, DriftError> {
    match rule.kind {
        RuleKind::RelativeDelta => eval_relative_delta(s, rule, now, window_id),
        RuleKind::AbsoluteDelta => eval_absolute_delta(s, rule, now, window_id),
        RuleKind::StddevOutlier => eval_stddev_outlier(s, rule, now, window_id),
    }
}

/// All series, keyed by `(metric, feature)`.
#[derive(Debug, Clone)]
pub struct SeriesStore {
    capacity: usize,
    series: BTreeMap<(String, String), MetricSeries>,
}

impl SeriesStore {
    pub fn new(capacity: usize) -> Result<Self, DriftError> {
        if capacity == 0 {
            return Err(DriftError::Capacity);
        }
        Ok(SeriesStore {
            capacity,
            series: BTreeMap::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn append(&mut self, metric: &str, feature: &str, t: i64, v: f64) -> Result<(), DriftError> {
        let key = (metric.to_string(), feature.to_string());
        if let Some(s) = self.series.get_mut(&key) {
            return s.append(t, v);
        }
        let mut s = MetricSeries::new(metric, feature, self.capacity)?;
        s.append(t, v)?;
        self.series.insert(key, s);
        Ok(())
    }

    pub fn get(&self, metric: &str, feature: &str) -> Option<&MetricSeries> {
        self.series.get(&(metric.to_string(), feature.to_string()))
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &MetricSeries> {
        self.series.values()
    }

    fn for_metric<'a>(&'a self, metric: &'a str) -> impl Iterator<Item = &'a MetricSeries> + 'a {
        let lo = (metric.to_string(), String::new());
        self.series
            .range(lo..)
            .take_while(move |((m, _), _)| m == metric)
            .map(|(_, s)| s)
    }
}

/// Result of one sweep over all rules.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evaluation {
    pub events: Vec<AlertEvent>,
    /// Rule/series pairs skipped because a window had no data.
    pub missing_data: u64,
    pub failures: u64,
}

/// Evaluates every rule against every series of its metric. Events are
/// ordered by metric, feature, then kind.
pub fn evaluate_all(rules: &[DriftRule], store: &SeriesStore, now: i64, window_id: u64) -> Evaluation {
    let mut out = Evaluation::default();
    for rule in rules {
        for s in store.for_metric(&rule.metric) {
            match eval_rule(s, rule, now, window_id) {
                Ok(RuleOutcome::Fired(e)) => out.events.push(e),
                Ok(RuleOutcome::Quiet) => {}
                Ok(RuleOutcome::MissingData) => out.missing_data += 1,
                Err(err) => {
                    log::warn!("rule on {} for {} skipped: {err}", s.metric, s.feature);
                    out.failures += 1;
                }
            }
        }
    }
    out.events.sort_by(|a, b| {
        (&a.metric, &a.feature, a.kind).cmp(&(&b.metric, &b.feature, b.kind))
    });
    out
}
