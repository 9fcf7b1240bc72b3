use std::collections::BTreeMap;

use serde_json::Value;

use crate::model::{FeatureName, FeatureValue, Record};

use super::ParseError;

fn reject(message: impl Into<String>) -> ParseError {
    ParseError {
        position: 0,
        message: message.into(),
    }
}

/// Parses `{"label": 0|1, "ts": <epoch ms>, "features": {name: string|number}}`.
/// `label` and `ts` are optional; `null` feature values count as missing.
pub fn parse_jsonl_line(line: &str, default_ts: i64) -> Result<Record, ParseError> {
    let value: Value = serde_json::from_str(line).map_err(|e| ParseError {
        position: line
            .lines()
            .take(e.line().saturating_sub(1))
            .map(|l| l.len() + 1)
            .sum::<usize>()
            + e.column().saturating_sub(1),
        message: e.to_string(),
    })?;
    let Value::Object(obj) = value else {
        return Err(reject("line is not an object"));
    };
    if let Some(key) = obj.keys().find(|k| !matches!(k.as_str(), "label" | "ts" | "features")) {
        return Err(reject(format!("unknown key {key:?}")));
    }
    let label = match obj.get("label") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_f64()
                .and_then(|x| super::vw::parse_label(&x.to_string()))
                .ok_or_else(|| reject(format!("malformed label {v}")))?,
        ),
    };
    let timestamp = match obj.get("ts") {
        None | Some(Value::Null) => default_ts,
        Some(v) => v.as_i64().ok_or_else(|| reject(format!("malformed ts {v}")))?,
    };
    let Some(Value::Object(raw)) = obj.get("features") else {
        return Err(reject("\"features\" must be an object"));
    };
    let mut features = BTreeMap::new();
    for (k, v) in raw {
        let name = FeatureName::new(k).map_err(|e| reject(e.to_string()))?;
        let value = match v {
            Value::Null => continue,
            Value::String(s) => FeatureValue::Categorical(s.clone()),
            Value::Number(n) => n
                .as_f64()
                .filter(|x| x.is_finite())
                .map(FeatureValue::Numeric)
                .ok_or_else(|| reject(format!("feature {k:?}: number out of range")))?,
            other => return Err(reject(format!("feature {k:?}: unsupported value {other}"))),
        };
        features.insert(name, value);
    }
    Record::new(features, label, timestamp).map_err(|e| reject(e.to_string()))
}
