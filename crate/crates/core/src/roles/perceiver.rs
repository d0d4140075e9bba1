use std::collections::BTreeMap;

use serde_json::Value;

use super::RoleError;
use crate::llm::{extract_json_array, render_prompt, LlmClient};

/// `[mean, max, min, std, count]` of the numeric leaves of `telemetry`
/// (depth-first, object keys in sorted order), before normalization.
pub fn telemetry_statistics(telemetry: &Value) -> Vec<f64> {
    fn collect(v: &Value, out: &mut Vec<f64>) {
        match v {
            Value::Number(n) => out.extend(n.as_f64().filter(|x| x.is_finite())),
            Value::Array(items) => items.iter().for_each(|i| collect(i, out)),
            Value::Object(map) => {
                let sorted: BTreeMap<_, _> = map.iter().collect();
                sorted.values().for_each(|i| collect(i, out));
            }
            _ => {}
        }
    }
    let mut xs = Vec::new();
    collect(telemetry, &mut xs);
    if xs.is_empty() {
        return Vec::new();
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let std = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    vec![mean, max, min, std, n]
}

/// Deterministic feature vector: the statistics squashed by `x / (1 + |x|)`,
/// truncated or zero-padded to `output_dim`.
pub fn perceive_mock(telemetry: &Value, output_dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = telemetry_statistics(telemetry)
        .into_iter()
        .map(|x| x / (1.0 + x.abs()))
        .take(output_dim)
        .collect();
    v.resize(output_dim, 0.0);
    v
}

/// Text-only state perception. With a client the model is asked for
/// `output_dim` values in `[-1, 1]`; an unusable reply falls back to
/// [`perceive_mock`].
pub fn perceive(client: Option<&LlmClient>, telemetry: &Value, output_dim: usize) -> Result<Vec<f64>, RoleError> {
    if output_dim == 0 {
        return Err(RoleError::Config("output_dim must be positive".into()));
    }
    let Some(client) = client else {
        return Ok(perceive_mock(telemetry, output_dim));
    };
    let vars = BTreeMap::from([
        ("telemetry".to_string(), telemetry.to_string()),
        ("output_dim".to_string(), output_dim.to_string()),
    ]);
    let request = render_prompt("perceiver", &vars)?;
    let parse = |text: &str| -> Result<Vec<f64>, String> {
        let v = extract_json_array(text).map_err(|e| e.to_string())?;
        let xs: Vec<f64> = v
            .as_array()
            .into_iter()
            .flatten()
            .map(|x| x.as_f64().filter(|x| (-1.0..=1.0).contains(x)).ok_or("values must be numbers in [-1, 1]"))
            .collect::<Result<_, _>>()?;
        if xs.len() != output_dim {
            return Err(format!("expected {output_dim} values, got {}", xs.len()));
        }
        Ok(xs)
    };
    match client.complete_parsed(&request, parse) {
        Ok(v) => Ok(v),
        Err(e) => {
            log::warn!("perceiver fell back to summary statistics: {e}");
            Ok(perceive_mock(telemetry, output_dim))
        }
    }
}
