//! Vowpal Wabbit style lines:
//! `<label> [<weight>] | [ns ]feat[:value] feat[:value] ... [|ns2 ...]`.
//!
//! A bare `feat` is an indicator (categorical `"1"`), `feat:x` is numeric and
//! `feat=token` carries a categorical value, so one feature can take many
//! distinct values.

use std::collections::BTreeMap;

use crate::model::{FeatureName, FeatureValue, Record};

use super::ParseError;

/// Un-namespaced feature consumed as the record timestamp.
pub const TIMESTAMP_FEATURE: &str = "ts";

fn offset_in(line: &str, part: &str) -> usize {
    part.as_ptr() as usize - line.as_ptr() as usize
}

fn err(line: &str, part: &str, message: impl Into<String>) -> ParseError {
    ParseError {
        position: offset_in(line, part),
        message: message.into(),
    }
}

/// Maps {-1, 0} to 0 and 1 to 1.
pub(crate) fn parse_label(token: &str) -> Option<u8> {
    match token.parse::<f64>().ok()? {
        x if x == 1.0 => Some(1),
        x if x == 0.0 || x == -1.0 => Some(0),
        _ => None,
    }
}

/// Parses one line. Records without a `ts` feature get `default_ts`.
pub fn parse_vw_line(line: &str, default_ts: i64) -> Result<Record, ParseError> {
    let line = line.trim_end_matches(['\n', '\r']);
    if line.trim().is_empty() {
        return Err(ParseError {
            position: 0,
            message: "empty line".into(),
        });
    }
    let Some(bar) = line.find('|') else {
        return Err(ParseError {
            position: line.len(),
            message: "missing '|' before features".into(),
        });
    };

    let mut head = line[..bar].split_whitespace();
    let label = match head.next() {
        None => None,
        Some(tok) => Some(parse_label(tok).ok_or_else(|| err(line, tok, format!("malformed label {tok:?}")))?),
    };
    if let Some(weight) = head.next() {
        // validated, then ignored
        if !weight.parse::<f64>().is_ok_and(f64::is_finite) {
            return Err(err(line, weight, format!("malformed weight {weight:?}")));
        }
    }
    if let Some(extra) = head.next() {
        return Err(err(line, extra, format!("unexpected token {extra:?} before '|'")));
    }

    let mut features = BTreeMap::new();
    let mut timestamp = None;
    for segment in line[bar + 1..].split('|') {
        let mut tokens = segment.split_whitespace();
        let namespace = if segment.starts_with(|c: char| !c.is_whitespace()) {
            let ns = tokens.next().expect("segment starts with a token");
            if ns.contains(':') {
                return Err(err(line, ns, format!("namespace scaling is not supported: {ns:?}")));
            }
            Some(ns)
        } else {
            None
        };
        for tok in tokens {
            let (raw_name, raw_value, token) = match tok.split_once(':') {
                Some((n, v)) => (n, Some(v), None),
                None => match tok.split_once('=') {
                    Some((n, v)) if !v.is_empty() => (n, None, Some(v)),
                    _ => (tok, None, None),
                },
            };
            if raw_name.is_empty() {
                return Err(err(line, tok, "empty feature name"));
            }
            if namespace.is_none() && raw_name == TIMESTAMP_FEATURE {
                let v = raw_value.unwrap_or("");
                let ts = v
                    .parse::<i64>()
                    .map_err(|_| err(line, tok, format!("malformed timestamp {v:?}")))?;
                timestamp = Some(ts);
                continue;
            }
            let value = match raw_value {
                None => FeatureValue::Categorical(token.unwrap_or("1").into()),
                Some(v) => match v.parse::<f64>() {
                    Ok(x) if x.is_finite() => FeatureValue::Numeric(x),
                    _ => return Err(err(line, tok, format!("non-numeric value {v:?}"))),
                },
            };
            let full = match namespace {
                Some(ns) => format!("{ns}^{raw_name}"),
                None => raw_name.to_string(),
            };
            let name = FeatureName::new(&full).map_err(|e| err(line, tok, e.to_string()))?;
            features.insert(name, value);
        }
    }
    Record::new(features, label, timestamp.unwrap_or(default_ts)).map_err(|e| ParseError {
        position: 0,
        message: e.to_string(),
    })
}
