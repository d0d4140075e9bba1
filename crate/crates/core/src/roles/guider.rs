use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{HyperparamSet, RoleError};
use crate::llm::{extract_json, render_prompt, LlmClient, LlmError};

/// Loss traces over the last guidance interval.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub critic_mean: f64,
    pub critic_last: f64,
    pub actor_mean: Option<f64>,
    pub actor_last: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceReport {
    /// Returns of the last `W` episodes, oldest first.
    pub rewards: Vec<f64>,
    pub losses: LossStats,
    /// Current epsilon, noise scale or alpha.
    pub exploration: f64,
    /// Completed fraction of the episode budget.
    pub progress: f64,
    pub theta: HyperparamSet,
    /// Set after a rollback so the model can propose a correction.
    pub notice: Option<String>,
}

impl GuidanceReport {
    pub fn validate(&self) -> Result<(), RoleError> {
        if self.rewards.is_empty() {
            return Err(RoleError::Config("guidance report has an empty reward window".into()));
        }
        if !(0.0..=1.0).contains(&self.progress) {
            return Err(RoleError::Config(format!("progress {} outside [0, 1]", self.progress)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub name: String,
    pub proposed: f64,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedChange {
    pub name: String,
    pub proposed: f64,
    pub clamped: f64,
    pub previous: f64,
    pub applied: f64,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceDirective {
    pub episode: usize,
    pub proposals: Vec<Proposal>,
    /// Proposals naming parameters outside the whitelist.
    pub dropped: Vec<String>,
    pub applied: Vec<AppliedChange>,
    pub rollback: bool,
    pub warning: Option<String>,
    /// Θ before (after any rollback) and after the directive.
    pub theta_before: HyperparamSet,
    pub theta_after: HyperparamSet,
}

fn parse_adjustments(text: &str) -> Result<Vec<Proposal>, String> {
    let v = extract_json(text).map_err(|e| e.to_string())?;
    let items = v
        .get("adjustments")
        .and_then(Value::as_array)
        .ok_or("the object needs an 'adjustments' array")?;
    items
        .iter()
        .map(|it| {
            let name = it.get("name").and_then(Value::as_str).ok_or("each adjustment needs a string 'name'")?;
            let value = it
                .get("new_value")
                .and_then(Value::as_f64)
                .filter(|x| x.is_finite())
                .ok_or("each adjustment needs a finite numeric 'new_value'")?;
            let rationale = it.get("rationale").and_then(Value::as_str).unwrap_or_default();
            Ok(Proposal {
                name: name.to_string(),
                proposed: value,
                rationale: rationale.to_string(),
            })
        })
        .collect()
}

fn fmt_list(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", ")
}

fn render(report: &GuidanceReport) -> Result<crate::llm::ChatRequest, LlmError> {
    let l = &report.losses;
    let mut losses = format!("critic mean {:.6}, last {:.6}", l.critic_mean, l.critic_last);
    if let (Some(m), Some(last)) = (l.actor_mean, l.actor_last) {
        losses.push_str(&format!("; actor mean {m:.6}, last {last:.6}"));
    }
    let vars = BTreeMap::from([
        ("progress".to_string(), format!("{:.3}", report.progress)),
        ("rewards".to_string(), fmt_list(&report.rewards)),
        ("losses".to_string(), losses),
        ("exploration".to_string(), format!("{:.6}", report.exploration)),
        ("hyperparameters".to_string(), report.theta.describe()),
        ("notice".to_string(), report.notice.clone().unwrap_or_else(|| "none".into())),
    ]);
    render_prompt("guider", &vars)
}

/// Asks for adjustments and constrains them: non-whitelisted names are
/// dropped, values are clamped into their certified range and then into
/// the per-intervention rate limit. When a name repeats, the last proposal
/// counts. An unusable reply (after one re-prompt) yields an empty
/// directive with a warning.
pub fn guide(
    client: &LlmClient,
    report: &GuidanceReport,
    theta: &HyperparamSet,
    episode: usize,
) -> Result<GuidanceDirective, RoleError> {
    report.validate()?;
    let request = render(report)?;
    let mut directive = GuidanceDirective {
        episode,
        proposals: Vec::new(),
        dropped: Vec::new(),
        applied: Vec::new(),
        rollback: false,
        warning: None,
        theta_before: theta.clone(),
        theta_after: theta.clone(),
    };
    let proposals = match client.complete_parsed(&request, parse_adjustments) {
        Ok(p) => p,
        Err(LlmError::Invalid { reason, .. }) => {
            log::warn!("guider reply unusable, continuing unguided: {reason}");
            directive.warning = Some(reason);
            return Ok(directive);
        }
        Err(e) => return Err(e.into()),
    };
    let mut latest: BTreeMap<&str, &Proposal> = BTreeMap::new();
    for p in &proposals {
        if theta.get(&p.name).is_some() {
            latest.insert(&p.name, p);
        } else {
            log::warn!("guider proposed non-whitelisted '{}'; dropped", p.name);
            directive.dropped.push(p.name.clone());
        }
    }
    for (name, p) in latest {
        let h = theta.get(name).expect("whitelisted");
        let (clamped, applied) = h.constrain(p.proposed);
        directive.theta_after.set(name, applied)?;
        directive.applied.push(AppliedChange {
            name: name.to_string(),
            proposed: p.proposed,
            clamped,
            previous: h.value,
            applied,
            rationale: p.rationale.clone(),
        });
    }
    directive.proposals = proposals;
    Ok(directive)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RollbackDecision {
    pub rollback: bool,
    /// Index of the best window before the current one.
    pub best_index: Option<usize>,
    pub threshold: f64,
}

/// Rolls back when the latest window mean falls below
/// `best - tolerance * |best|`, `best` being the highest earlier window
/// mean. This is `(1 - tolerance) * best` for positive returns and stays
/// meaningful for negative ones. Needs at least two windows; a tolerance
/// of 1 or more never triggers.
pub fn check_rollback(window_means: &[f64], tolerance: f64) -> RollbackDecision {
    let none = RollbackDecision {
        rollback: false,
        best_index: None,
        threshold: f64::NEG_INFINITY,
    };
    let Some((current, prior)) = window_means.split_last() else {
        return none;
    };
    if prior.is_empty() {
        return none;
    }
    let (best_index, best) = prior
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, m)| if m > acc.1 { (i, m) } else { acc });
    if tolerance >= 1.0 {
        return RollbackDecision {
            best_index: Some(best_index),
            ..none
        };
    }
    let threshold = best - tolerance * best.abs();
    RollbackDecision {
        rollback: *current < threshold,
        best_index: Some(best_index),
        threshold,
    }
}

/// Completed window means with the Θ in force during each window.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RollbackGuard {
    pub means: Vec<f64>,
    pub snapshots: Vec<HyperparamSet>,
}

impl RollbackGuard {
    pub fn record(&mut self, mean: f64, theta: &HyperparamSet) {
        self.means.push(mean);
        self.snapshots.push(theta.clone());
    }

    /// The snapshot to restore, if the latest window degraded.
    pub fn check(&self, tolerance: f64) -> (RollbackDecision, Option<&HyperparamSet>) {
        let d = check_rollback(&self.means, tolerance);
        let restore = if d.rollback {
            d.best_index.map(|i| &self.snapshots[i])
        } else {
            None
        };
        (d, restore)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceSettings {
    /// Episodes between interventions.
    pub cadence: usize,
    /// Episodes per reward window.
    pub window: usize,
    pub tolerance: f64,
}

impl Default for GuidanceSettings {
    fn default() -> Self {
        GuidanceSettings {
            cadence: 10,
            window: 10,
            tolerance: 0.15,
        }
    }
}

/// Drives interventions during training: window bookkeeping, rollback and
/// the guider call.
#[derive(Debug, Clone)]
pub struct GuidanceController {
    pub settings: GuidanceSettings,
    pub guard: RollbackGuard,
}

impl GuidanceController {
    pub fn new(settings: GuidanceSettings) -> Result<Self, RoleError> {
        if settings.cadence == 0 || settings.window == 0 {
            return Err(RoleError::Config("cadence and window must be positive".into()));
        }
        if !(settings.tolerance >= 0.0) {
            return Err(RoleError::Config("tolerance must be non-negative".into()));
        }
        Ok(GuidanceController {
            settings,
            guard: RollbackGuard::default(),
        })
    }

    /// True after episode `episode` (0-based) when an intervention is due.
    pub fn due(&self, episode: usize) -> bool {
        (episode + 1).is_multiple_of(self.settings.cadence)
    }

    /// One intervention after `returns.len()` finished episodes. `theta` is
    /// updated in place: restored on rollback, then moved by the directive.
    pub fn intervene(
        &mut self,
        client: &LlmClient,
        returns: &[f64],
        total_episodes: usize,
        losses: LossStats,
        exploration: f64,
        theta: &mut HyperparamSet,
    ) -> Result<GuidanceDirective, RoleError> {
        let w = self.settings.window;
        let completed = returns.len() / w;
        for k in self.guard.means.len()..completed {
            let mean = returns[k * w..(k + 1) * w].iter().sum::<f64>() / w as f64;
            self.guard.record(mean, theta);
        }
        let (decision, restore) = self.guard.check(self.settings.tolerance);
        let mut notice = None;
        if let Some(snapshot) = restore {
            let best = decision.best_index.expect("rollback names a window");
            notice = Some(format!(
                "returns fell to {:.4} against a best window mean of {:.4}; settings from episodes {}-{} were restored. Propose a corrective adjustment.",
                self.guard.means.last().copied().unwrap_or_default(),
                self.guard.means[best],
                best * w,
                (best + 1) * w - 1
            ));
            *theta = snapshot.clone();
        }
        let start = returns.len().saturating_sub(w);
        let report = GuidanceReport {
            rewards: returns[start..].to_vec(),
            losses,
            exploration,
            progress: (returns.len() as f64 / total_episodes.max(1) as f64).min(1.0),
            theta: theta.clone(),
            notice,
        };
        let mut directive = guide(client, &report, theta, returns.len().saturating_sub(1))?;
        directive.rollback = decision.rollback;
        *theta = directive.theta_after.clone();
        Ok(directive)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{LlmBackend, MockScript};
    use crate::roles::{Hyperparam, RateLimit};

    fn theta() -> HyperparamSet {
        HyperparamSet::new(vec![
            Hyperparam::new("learning_rate", 1e-3, 1e-5, 1e-2, RateLimit::Multiplicative(2.0)),
            Hyperparam::new("entropy_alpha", 0.2, 1e-4, 1.0, RateLimit::Multiplicative(2.0)),
        ])
        .unwrap()
    }

    fn report(t: &HyperparamSet) -> GuidanceReport {
        GuidanceReport {
            rewards: vec![1.0, 2.0],
            losses: LossStats::default(),
            exploration: 0.2,
            progress: 0.5,
            theta: t.clone(),
            notice: None,
        }
    }

    fn reply(items: &str) -> String {
        format!(r#"{{"adjustments": [{items}]}}"#)
    }

    #[test]
    fn clamp_rate_limit_and_whitelist() {
        let t = theta();
        let client = LlmClient::mock(MockScript::Sequence(vec![reply(
            r#"{"name": "learning_rate", "new_value": 0.5, "rationale": "faster"},
               {"name": "gamma", "new_value": 0.5, "rationale": "no"},
               {"name": "entropy_alpha", "new_value": 0.15, "rationale": "settle"}"#,
        )]));
        let d = guide(&client, &report(&t), &t, 9).unwrap();
        assert_eq!(d.dropped, vec!["gamma"]);
        let lr = d.applied.iter().find(|a| a.name == "learning_rate").unwrap();
        assert_eq!((lr.clamped, lr.applied), (1e-2, 2e-3));
        assert_eq!(d.theta_after.value("entropy_alpha"), Some(0.15));
        assert_eq!(d.theta_before, t);
    }

    #[test]
    fn prompt_lists_every_hyperparameter() {
        let t = theta();
        let req = render(&report(&t)).unwrap();
        let user = &req.messages[1].content;
        assert!(user.contains("learning_rate = 0.001") && user.contains("entropy_alpha = 0.2"));
    }

    #[test]
    fn unusable_reply_gives_empty_directive() {
        let t = theta();
        let client = LlmClient::mock(MockScript::Sequence(vec!["nope".into(), r#"{"adjust": []}"#.into()]));
        let d = guide(&client, &report(&t), &t, 0).unwrap();
        assert!(d.applied.is_empty() && d.warning.is_some());
        assert_eq!(d.theta_after, t);
    }

    #[test]
    fn empty_window_is_rejected() {
        let t = theta();
        let mut r = report(&t);
        r.rewards.clear();
        let client = LlmClient::mock(MockScript::Sequence(vec![reply("")]));
        assert!(guide(&client, &r, &t, 0).is_err());
    }

    #[test]
    fn rollback_rule_examples() {
        assert!(!check_rollback(&[10.0, 10.1], 0.2).rollback);
        let d = check_rollback(&[10.0, 7.0], 0.2);
        assert!(d.rollback && d.threshold == 8.0 && d.best_index == Some(0));
        assert!(!check_rollback(&[10.0, -1e9], 1.0).rollback);
        assert!(!check_rollback(&[10.0], 0.0).rollback);
        assert!(check_rollback(&[-10.0, -12.0], 0.15).rollback);
        assert!(!check_rollback(&[-10.0, -11.0], 0.15).rollback);
    }

    #[test]
    fn controller_restores_best_snapshot_and_notifies() {
        let mut t = theta();
        let mut ctl = GuidanceController::new(GuidanceSettings {
            cadence: 2,
            window: 2,
            tolerance: 0.1,
        })
        .unwrap();
        let client = LlmClient::mock(MockScript::Sequence(vec![
            reply(r#"{"name": "learning_rate", "new_value": 0.01, "rationale": "up"}"#),
            reply(r#"{"name": "learning_rate", "new_value": 0.01, "rationale": "up"}"#),
            reply(""),
        ]));
        let first = ctl.intervene(&client, &[5.0, 5.0], 6, LossStats::default(), 0.1, &mut t).unwrap();
        assert!(!first.rollback);
        let best_snapshot = ctl.guard.snapshots[0].clone();
        assert_eq!(t.value("learning_rate"), Some(2e-3));
        let second = ctl.intervene(&client, &[5.0, 5.0, 6.0, 6.0], 6, LossStats::default(), 0.1, &mut t).unwrap();
        assert!(!second.rollback);
        let third = ctl
            .intervene(&client, &[5.0, 5.0, 6.0, 6.0, 1.0, 1.0], 6, LossStats::default(), 0.1, &mut t)
            .unwrap();
        assert!(third.rollback);
        assert_eq!(third.theta_before, ctl.guard.snapshots[1]);
        assert_ne!(third.theta_before, best_snapshot);
        assert_eq!(t, ctl.guard.snapshots[1]);
        let LlmBackend::Mock(mock) = client.backend() else { panic!() };
        let last = mock.requests().pop().unwrap();
        assert!(last.messages[1].content.contains("restored"));
    }
}
