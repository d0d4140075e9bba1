use serde::{Deserialize, Serialize};

use super::ast::RewardExpr;
use super::{DslError, SampleSet};
use crate::exec::Exec;

/// Pairs closer than this are skipped by default.
pub const DEFAULT_MIN_DISTANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub value: f64,
    pub sample_count: usize,
    pub min_distance: f64,
    /// Row indices of the pair attaining the maximum quotient (first in
    /// row order on ties).
    pub arg_indices: (usize, usize),
    pub arg_pair: (Vec<f64>, Vec<f64>),
}

/// Empirical Lipschitz constant of `expr` over `samples`:
/// `max |R(a) - R(b)| / ||a - b||_2` over every pair at distance at least
/// `min_distance`. Distances use every column of the sample table.
pub fn estimate_lipschitz(
    expr: &RewardExpr,
    samples: &SampleSet,
    min_distance: f64,
    exec: Exec,
) -> Result<LipschitzEstimate, DslError> {
    if samples.len() < 2 {
        return Err(DslError::Estimation(format!(
            "need at least two samples, got {}",
            samples.len()
        )));
    }
    if !(min_distance > 0.0) {
        return Err(DslError::Estimation(format!(
            "minimum distance must be positive, got {min_distance}"
        )));
    }
    let bound = expr.bind(&samples.names)?;
    let values = exec
        .map(&samples.rows, |row| bound.evaluate(row))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let rows = &samples.rows;
    let n = rows.len();
    let per_row = exec.map_range(n, |i| {
        let mut best: Option<(f64, usize)> = None;
        for j in i + 1..n {
            let dist = rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if dist < min_distance {
                continue;
            }
            let q = (values[i] - values[j]).abs() / dist;
            if best.is_none_or(|(b, _)| q > b) {
                best = Some((q, j));
            }
        }
        best.map(|(q, j)| (q, i, j))
    });

    let (value, i, j) = per_row
        .into_iter()
        .flatten()
        .fold(None, |acc: Option<(f64, usize, usize)>, cand| match acc {
            Some(a) if a.0 >= cand.0 => Some(a),
            _ => Some(cand),
        })
        .ok_or_else(|| {
            DslError::Estimation(format!("no sample pair is at least {min_distance} apart"))
        })?;

    Ok(LipschitzEstimate {
        value,
        sample_count: n,
        min_distance,
        arg_indices: (i, j),
        arg_pair: (rows[i].clone(), rows[j].clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::parse;

    fn one_d(xs: &[f64]) -> SampleSet {
        SampleSet::new(vec!["x".into()], xs.iter().map(|&x| vec![x]).collect()).unwrap()
    }

    fn est(src: &str, xs: &[f64]) -> Result<LipschitzEstimate, DslError> {
        let e = parse(src, &["x".to_string()]).unwrap();
        estimate_lipschitz(&e, &one_d(xs), DEFAULT_MIN_DISTANCE, Exec::Sequential)
    }

    #[test]
    fn constant_has_zero_constant() {
        assert_eq!(est("3", &[0.0, 1.0, 2.0]).unwrap().value, 0.0);
    }

    #[test]
    fn linear_and_abs_hand_values() {
        assert_eq!(est("2*x", &[0.0, 1.0, 2.0]).unwrap().value, 2.0);
        assert_eq!(est("abs(x)", &[-1.0, 0.0, 1.0]).unwrap().value, 1.0);
    }

    #[test]
    fn close_pairs_are_skipped() {
        let e = parse("x", &["x".to_string()]).unwrap();
        let err = estimate_lipschitz(&e, &one_d(&[0.0, 1e-9]), 1e-6, Exec::Sequential).unwrap_err();
        assert!(matches!(err, DslError::Estimation(_)));
        assert!(est("x", &[1.0]).is_err());
    }

    #[test]
    fn evaluation_failure_is_an_error() {
        assert!(matches!(est("1/x", &[0.0, 1.0]), Err(DslError::NonFinite(_))));
    }

    #[test]
    fn reports_first_maximizing_pair() {
        let e = est("abs(x)", &[-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(e.arg_indices, (0, 1));
        assert_eq!(e.arg_pair, (vec![-1.0], vec![0.0]));
    }

    #[test]
    fn parallel_matches_sequential() {
        let names = vec!["x".to_string(), "y".to_string()];
        let e = parse("tanh(x) * y + abs(y - x)", &names).unwrap();
        let rows = (0..200)
            .map(|i| vec![(i as f64 * 0.37).sin() * 3.0, (i as f64 * 0.11).cos()])
            .collect();
        let s = SampleSet::new(names, rows).unwrap();
        let a = estimate_lipschitz(&e, &s, 1e-6, Exec::Sequential).unwrap();
        let b = estimate_lipschitz(&e, &s, 1e-6, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
