use std::fmt::Write;

use super::ExportError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MetricKind {
    Gauge,
    Counter,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Gauge => "gauge",
            MetricKind::Counter => "counter",
        }
    }
}

/// One sample of a metric family. Names are validated on construction so
/// rendering cannot fail.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSample {
    name: String,
    labels: Vec<(String, String)>,
    value: f64,
    kind: MetricKind,
}

/// `[a-zA-Z_:][a-zA-Z0-9_:]*`
pub fn is_valid_metric_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == ':')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == ':')
}

fn is_valid_label_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl MetricSample {
    pub fn new(
        name: impl Into<String>,
        labels: Vec<(String, String)>,
        value: f64,
        kind: MetricKind,
    ) -> Result<Self, ExportError> {
        let name = name.into();
        if !is_valid_metric_name(&name) {
            return Err(ExportError::MetricName(name));
        }
        for (i, (label, _)) in labels.iter().enumerate() {
            if !is_valid_label_name(label) {
                return Err(ExportError::LabelName(label.clone()));
            }
            if labels[..i].iter().any(|(l, _)| l == label) {
                return Err(ExportError::DuplicateLabel(label.clone()));
            }
        }
        Ok(MetricSample {
            name,
            labels,
            value,
            kind,
        })
    }

    pub fn gauge(name: &str, labels: &[(&str, &str)], value: f64) -> Result<Self, ExportError> {
        Self::new(name, owned(labels), value, MetricKind::Gauge)
    }

    pub fn counter(name: &str, labels: &[(&str, &str)], value: f64) -> Result<Self, ExportError> {
        Self::new(name, owned(labels), value, MetricKind::Counter)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[(String, String)] {
        &self.labels
    }

    pub fn label(&self, key: &str) -> Option<&str> {
        self.labels.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn kind(&self) -> MetricKind {
        self.kind
    }
}

fn owned(labels: &[(&str, &str)]) -> Vec<(String, String)> {
    labels
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn escape_label_value(v: &str, out: &mut String) {
    for c in v.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
}

pub fn format_value(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v == f64::INFINITY {
        "+Inf".into()
    } else if v == f64::NEG_INFINITY {
        "-Inf".into()
    } else {
        // shortest representation that parses back to the same bits
        format!("{v}")
    }
}

/// Renders the text exposition document: families in name order, each with
/// one `# TYPE` line, samples ordered by their label tuples. The kind of a
/// family is taken from its first sample.
pub fn render_exposition(samples: &[MetricSample]) -> String {
    let mut sorted: Vec<&MetricSample> = samples.iter().collect();
    sorted.sort_by(|a, b| (&a.name, &a.labels).cmp(&(&b.name, &b.labels)));
    let mut out = String::new();
    let mut current: Option<&str> = None;
    for s in sorted {
        if current != Some(s.name.as_str()) {
            let _ = writeln!(out, "# TYPE {} {}", s.name, s.kind.as_str());
            current = Some(&s.name);
        }
        out.push_str(&s.name);
        if !s.labels.is_empty() {
            out.push('{');
            for (i, (k, v)) in s.labels.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(k);
                out.push_str("=\"");
                escape_label_value(v, &mut out);
                out.push('"');
            }
            out.push('}');
        }
        out.push(' ');
        out.push_str(&format_value(s.value));
        out.push('\n');
    }
    out
}
