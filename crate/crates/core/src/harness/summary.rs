use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::{mean_std, EpisodeRow};
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Return,
    Energy,
    Delivered,
    Handovers,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Return => "return",
            Metric::Energy => "energy",
            Metric::Delivered => "delivered",
            Metric::Handovers => "handovers",
        }
    }

    pub fn higher_is_better(self) -> bool {
        matches!(self, Metric::Return | Metric::Delivered)
    }

    pub fn of(self, row: &EpisodeRow) -> Option<f64> {
        match self {
            Metric::Return => Some(row.ret),
            Metric::Energy => row.energy,
            Metric::Delivered => row.delivered,
            Metric::Handovers => row.handovers.map(|h| h as f64),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "return" => Ok(Metric::Return),
            "energy" => Ok(Metric::Energy),
            "delivered" => Ok(Metric::Delivered),
            "handovers" => Ok(Metric::Handovers),
            other => Err(HarnessError::Config(format!("unknown metric '{other}'"))),
        }
    }
}

/// Last 10% of the episodes, at least 10, never more than `episodes`.
pub fn default_window(episodes: usize) -> usize {
    episodes.div_ceil(10).max(10).min(episodes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub seeds: Vec<u64>,
    /// Final-window mean per seed, in seed order.
    pub final_means: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation of the per-seed means.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: Metric,
    pub window: usize,
    pub a: ArmStats,
    pub b: ArmStats,
    /// `(mean_a - mean_b) / |mean_b|`; absent when `mean_b` is zero.
    pub relative_difference: Option<f64>,
    /// The relative difference signed so that positive favours arm A.
    pub improvement: Option<f64>,
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
    /// Two-sided paired sign test; absent with a single seed.
    pub p_value: Option<f64>,
}

/// Two-sided exact sign test for `wins` against `losses`; ties are
/// excluded beforehand. No informative pairs gives 1.
pub fn sign_test(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let k = wins.min(losses);
    let mut coef = 1.0f64;
    let mut tail = 0.0;
    for i in 0..=k {
        if i > 0 {
            coef *= (n - i + 1) as f64 / i as f64;
        }
        tail += coef;
    }
    (2.0 * tail / 2f64.powi(n as i32)).min(1.0)
}

fn arm(rows: &BTreeMap<u64, Vec<EpisodeRow>>, window: usize, metric: Metric) -> Result<ArmStats, HarnessError> {
    let mut final_means = Vec::with_capacity(rows.len());
    for (seed, r) in rows {
        if window > r.len() {
            return Err(HarnessError::Config(format!(
                "window {window} exceeds the {} episodes of seed {seed}",
                r.len()
            )));
        }
        let xs = r[r.len() - window..]
            .iter()
            .map(|row| metric.of(row))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| HarnessError::Config(format!("seed {seed} rows do not record {}", metric.name())))?;
        final_means.push(mean_std(&xs).0);
    }
    let (mean, std) = mean_std(&final_means);
    Ok(ArmStats {
        seeds: rows.keys().copied().collect(),
        final_means,
        mean,
        std,
    })
}

/// Compares the final-window `metric` of arm A against arm B. Seeds are
/// paired in ascending order, so the result does not depend on how either
/// set was ordered.
pub fn summarize(
    a: &BTreeMap<u64, Vec<EpisodeRow>>,
    b: &BTreeMap<u64, Vec<EpisodeRow>>,
    window: usize,
    metric: Metric,
) -> Result<Comparison, HarnessError> {
    if a.is_empty() || a.len() != b.len() {
        return Err(HarnessError::Config(format!(
            "arms need equal, non-zero seed counts ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if window == 0 {
        return Err(HarnessError::Config("window must be positive".into()));
    }
    let sa = arm(a, window, metric)?;
    let sb = arm(b, window, metric)?;
    let (mut wins_a, mut wins_b, mut ties) = (0, 0, 0);
    for (x, y) in sa.final_means.iter().zip(&sb.final_means) {
        let a_better = if metric.higher_is_better() { x > y } else { x < y };
        if x == y {
            ties += 1;
        } else if a_better {
            wins_a += 1;
        } else {
            wins_b += 1;
        }
    }
    let relative_difference = (sb.mean != 0.0).then(|| (sa.mean - sb.mean) / sb.mean.abs());
    let improvement = relative_difference.map(|d| if metric.higher_is_better() { d } else { -d });
    let p_value = (a.len() > 1).then(|| sign_test(wins_a, wins_b));
    Ok(Comparison {
        metric,
        window,
        a: sa,
        b: sb,
        relative_difference,
        improvement,
        wins_a,
        wins_b,
        ties,
        p_value,
    })
}

/// Plot-ready table: one line per arm and seed, then one per arm with the
/// across-seed mean and standard deviation.
pub fn write_csv(path: &Path, c: &Comparison) -> Result<(), HarnessError> {
    let mut s = String::from("metric,window,arm,seed,final_mean,std\n");
    for (name, arm) in [("a", &c.a), ("b", &c.b)] {
        for (seed, m) in arm.seeds.iter().zip(&arm.final_means) {
            let _ = writeln!(s, "{},{},{name},{seed},{m},", c.metric.name(), c.window);
        }
    }
    for (name, arm) in [("a", &c.a), ("b", &c.b)] {
        let _ = writeln!(s, "{},{},{name},all,{},{}", c.metric.name(), c.window, arm.mean, arm.std);
    }
    std::fs::write(path, s).map_err(|e| HarnessError::io(path, e))
}
