use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::RoleError;
use crate::llm::{extract_json_array, render_prompt, LlmClient};
use crate::reward::SampleSet;

/// Probe states and where they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    pub samples: Vec<BTreeMap<String, f64>>,
    /// Samples accepted from the model.
    pub from_model: usize,
    /// Model samples dropped for missing keys or out-of-range values.
    pub dropped: usize,
    pub from_fallback: usize,
}

impl ProbeSet {
    pub fn to_sample_set(&self, schema: &[String]) -> Result<SampleSet, RoleError> {
        Ok(SampleSet::from_maps(schema, &self.samples)?)
    }
}

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut out = 0.0;
    let mut f = inv;
    while i > 0 {
        out += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    out
}

/// Hammersley-style grid: the first coordinate steps evenly from the low
/// to the high end; coordinate `j > 0` uses the base-`p_j` radical inverse
/// of the point index.
pub fn fallback_grid(
    schema: &[String],
    count: usize,
    ranges: &BTreeMap<String, (f64, f64)>,
) -> Result<Vec<BTreeMap<String, f64>>, RoleError> {
    let bounds = schema
        .iter()
        .map(|n| {
            ranges
                .get(n)
                .copied()
                .ok_or_else(|| RoleError::Config(format!("no range given for feature '{n}'")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((0..count)
        .map(|i| {
            schema
                .iter()
                .zip(&bounds)
                .enumerate()
                .map(|(j, (name, &(lo, hi)))| {
                    let u = if j == 0 {
                        if count == 1 {
                            0.0
                        } else {
                            i as f64 / (count - 1) as f64
                        }
                    } else {
                        radical_inverse(i as u64, PRIMES[(j - 1) % PRIMES.len()] as u64)
                    };
                    (name.clone(), lo + u * (hi - lo))
                })
                .collect()
        })
        .collect())
}

fn parse_model_samples(
    value: &Value,
    schema: &[String],
    ranges: &BTreeMap<String, (f64, f64)>,
) -> (Vec<BTreeMap<String, f64>>, usize) {
    let Some(items) = value.as_array() else {
        return (Vec::new(), 0);
    };
    let mut kept = Vec::new();
    let mut dropped = 0;
    for item in items {
        let sample: Option<BTreeMap<String, f64>> = schema
            .iter()
            .map(|n| {
                let v = item.get(n)?.as_f64()?;
                let &(lo, hi) = ranges.get(n)?;
                (v >= lo && v <= hi).then(|| (n.clone(), v))
            })
            .collect();
        match sample {
            Some(s) => kept.push(s),
            None => dropped += 1,
        }
    }
    (kept, dropped)
}

/// Probe states for a-priori reward checks. With a client, the model is
/// asked for `count` states; entries lacking a schema key or leaving their
/// range are dropped and the deterministic grid fills the remainder. Any
/// backend failure falls back to the grid entirely.
pub fn generate_probe_samples(
    client: Option<&LlmClient>,
    schema: &[String],
    count: usize,
    ranges: &BTreeMap<String, (f64, f64)>,
) -> Result<ProbeSet, RoleError> {
    if count < 2 {
        return Err(RoleError::Config(format!("need at least 2 probes, got {count}")));
    }
    if schema.is_empty() {
        return Err(RoleError::Config("probe schema is empty".into()));
    }
    let grid = fallback_grid(schema, count, ranges)?;
    let (mut samples, dropped) = match client {
        None => (Vec::new(), 0),
        Some(c) => {
            let vars = BTreeMap::from([
                ("count".to_string(), count.to_string()),
                (
                    "ranges".to_string(),
                    schema
                        .iter()
                        .map(|n| {
                            let (lo, hi) = ranges[n];
                            format!("- {n}: [{lo}, {hi}]")
                        })
                        .collect::<Vec<_>>()
                        .join("\n"),
                ),
            ]);
            let request = render_prompt("probe_generator", &vars)?;
            match c.complete_parsed(&request, |t| extract_json_array(t).map_err(|e| e.to_string())) {
                Ok(v) => parse_model_samples(&v, schema, ranges),
                Err(e) => {
                    log::warn!("probe generation fell back to the grid: {e}");
                    (Vec::new(), 0)
                }
            }
        }
    };
    samples.truncate(count);
    let from_model = samples.len();
    let missing = count - from_model;
    samples.extend(grid.into_iter().take(missing));
    Ok(ProbeSet {
        samples,
        from_model,
        dropped,
        from_fallback: missing,
    })
}
