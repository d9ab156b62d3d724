//! Metamorphic relations as declarative predicates over per-test-case metric
//! records.
//!
//! An [`MRSpec`] holds a tree of [`Predicate`]s whose leaves are [`Clause`]s
//! comparing Inception Scores and grey-tint scores of named records.
//! [`evaluate`] turns a spec plus a set of records into an [`MRVerdict`] with
//! one evidence line per clause. A relation that references a record that is
//! not supplied is `Inconclusive`, never an error.

mod anomaly;
mod builtin;
mod derivation;

pub use anomaly::{detect_anomalies, Anomaly, AnomalyKind, SMALL_MARGIN_RATIO};
pub use builtin::{builtin_mrs, mr01_for, BASELINE};
pub use derivation::{builtin_derivation_log, log_derivation, DerivationEntry, DerivationLog};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::ISResult;
use crate::numeric::MeanStd;

pub const DEFAULT_EPSILON_IS: f64 = 0.10;
pub const DEFAULT_TAU_TINT: f64 = 0.10;

#[derive(Debug, Error)]
pub enum MrError {
    #[error("MR {mr} derives from unknown MR {parent}")]
    UnknownParentMR { mr: String, parent: String },
    #[error("MR {0} is already defined")]
    DuplicateMR(String),
    #[error("derived_from graph has a cycle through {0}")]
    Cycle(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How a test case mutated its training set; used to decide comparability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationSummary {
    /// Coarse object class, e.g. `bird` or `tree`.
    pub object_class: String,
    pub proportion: f64,
    pub occlusion_budget: f64,
    #[serde(default)]
    pub recolor: Option<f64>,
}

/// Metrics of one trained model (one test case, or the baseline).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub test_case: String,
    pub is_result: ISResult,
    /// Mean grey-tint score over the generated images.
    pub tint: f64,
    #[serde(default)]
    pub likert_semantic: Option<MeanStd>,
    #[serde(default)]
    pub likert_realistic: Option<MeanStd>,
    pub n_generated: usize,
    #[serde(default)]
    pub mutation: Option<MutationSummary>,
}

impl MetricRecord {
    pub fn validate(&self) -> Result<(), MrError> {
        if !(0.0..=1.0).contains(&self.tint) {
            return Err(MrError::InvalidRecord(format!("{}: tint {} outside [0,1]", self.test_case, self.tint)));
        }
        let is = self.is_result;
        if !is.mean.is_finite() || is.mean < 1.0 - 1e-9 || is.std.is_nan() || is.std < 0.0 {
            return Err(MrError::InvalidRecord(format!(
                "{}: Inception Score {} ({}) is not a valid score",
                self.test_case, is.mean, is.std
            )));
        }
        Ok(())
    }
}

pub type Records = BTreeMap<String, MetricRecord>;

/// Loads records from JSON: either a list of records or a map name -> record.
pub fn load_records(path: &Path) -> Result<Records, MrError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Shape {
        List(Vec<MetricRecord>),
        Map(BTreeMap<String, MetricRecord>),
    }
    let records: Records = match serde_json::from_str(&fs::read_to_string(path)?)? {
        Shape::List(list) => list.into_iter().map(|r| (r.test_case.clone(), r)).collect(),
        Shape::Map(map) => map,
    };
    for r in records.values() {
        r.validate()?;
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Relative Inception Score drop tolerated before a change counts as drastic.
    pub epsilon_is: f64,
    /// Increase in mean grey-tint over the baseline that counts as a tint effect.
    pub tau_tint: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            epsilon_is: DEFAULT_EPSILON_IS,
            tau_tint: DEFAULT_TAU_TINT,
        }
    }
}

/// One comparison between named records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Clause {
    /// `(IS(baseline) - IS(follow_up)) / IS(baseline) <= epsilon_is`
    IsDropWithin { baseline: String, follow_up: String },
    /// `tint(follow_up) <= tint(baseline) + tau_tint`
    TintNotElevated { baseline: String, follow_up: String },
    /// `tint(follow_up) > tint(baseline) + tau_tint`
    TintElevated { baseline: String, follow_up: String },
    /// `IS(higher) > IS(lower)`
    IsHigher { higher: String, lower: String },
    /// `tint(lower) < tint(higher)`
    TintLower { lower: String, higher: String },
    /// Relative drops of `a` and `b` agree: `|d_a - d_b| <= epsilon_is * max(|d_a|, |d_b|)`
    DropsSimilar { baseline: String, a: String, b: String },
    /// `|IS(a) - IS(b)| <= max_diff`
    IsAbsDiffWithin { a: String, b: String, max_diff: f64 },
}

impl Clause {
    pub fn references(&self) -> Vec<&str> {
        match self {
            Clause::IsDropWithin { baseline, follow_up }
            | Clause::TintNotElevated { baseline, follow_up }
            | Clause::TintElevated { baseline, follow_up } => vec![baseline, follow_up],
            Clause::IsHigher { higher, lower } | Clause::TintLower { lower, higher } => vec![higher, lower],
            Clause::DropsSimilar { baseline, a, b } => vec![baseline, a, b],
            Clause::IsAbsDiffWithin { a, b, .. } => vec![a, b],
        }
    }

    fn evaluate(&self, records: &Records, t: &Thresholds) -> Evidence {
        let is = |name: &str| records[name].is_result.mean;
        let tint = |name: &str| records[name].tint;
        let drop = |b: &str, f: &str| (is(b) - is(f)) / is(b);
        let (quantity, value, threshold, passed) = match self {
            Clause::IsDropWithin { baseline, follow_up } => {
                let d = drop(baseline, follow_up);
                (format!("relative IS drop {follow_up} vs {baseline}"), d, t.epsilon_is, d <= t.epsilon_is)
            }
            Clause::TintNotElevated { baseline, follow_up } => {
                let limit = tint(baseline) + t.tau_tint;
                let v = tint(follow_up);
                (format!("tint {follow_up} (not above {baseline} + tau)"), v, limit, v <= limit)
            }
            Clause::TintElevated { baseline, follow_up } => {
                let limit = tint(baseline) + t.tau_tint;
                let v = tint(follow_up);
                (format!("tint {follow_up} (above {baseline} + tau)"), v, limit, v > limit)
            }
            Clause::IsHigher { higher, lower } => {
                let (h, l) = (is(higher), is(lower));
                (format!("IS {higher} > IS {lower}"), h, l, h > l)
            }
            Clause::TintLower { lower, higher } => {
                let (l, h) = (tint(lower), tint(higher));
                (format!("tint {lower} < tint {higher}"), l, h, l < h)
            }
            Clause::DropsSimilar { baseline, a, b } => {
                let (da, db) = (drop(baseline, a), drop(baseline, b));
                let diff = (da - db).abs();
                let limit = t.epsilon_is * da.abs().max(db.abs());
                (
                    format!("|drop {a} ({da:.3}) - drop {b} ({db:.3})| vs {baseline}"),
                    diff,
                    limit,
                    diff <= limit,
                )
            }
            Clause::IsAbsDiffWithin { a, b, max_diff } => {
                let diff = (is(a) - is(b)).abs();
                (format!("|IS {a} - IS {b}|"), diff, *max_diff, diff <= *max_diff)
            }
        };
        Evidence {
            group: None,
            quantity,
            value,
            threshold,
            passed,
        }
    }
}

/// Condition tree. Labeled nodes report their own outcome in the verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Predicate {
    All {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
        of: Vec<Predicate>,
    },
    Any {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
        of: Vec<Predicate>,
    },
    Clause {
        clause: Clause,
    },
}

impl Predicate {
    pub fn all(label: &str, of: Vec<Predicate>) -> Self {
        Predicate::All {
            label: Some(label.to_string()),
            of,
        }
    }

    pub fn clause(clause: Clause) -> Self {
        Predicate::Clause { clause }
    }

    pub fn references(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_refs(&mut out);
        out
    }

    fn collect_refs(&self, out: &mut BTreeSet<String>) {
        match self {
            Predicate::All { of, .. } | Predicate::Any { of, .. } => of.iter().for_each(|p| p.collect_refs(out)),
            Predicate::Clause { clause } => out.extend(clause.references().into_iter().map(String::from)),
        }
    }

    fn evaluate(
        &self,
        records: &Records,
        t: &Thresholds,
        group: Option<&str>,
        evidence: &mut Vec<Evidence>,
        groups: &mut BTreeMap<String, Outcome>,
    ) -> bool {
        match self {
            Predicate::Clause { clause } => {
                let mut e = clause.evaluate(records, t);
                e.group = group.map(String::from);
                let passed = e.passed;
                evidence.push(e);
                passed
            }
            Predicate::All { label, of } | Predicate::Any { label, of } => {
                let inner = label.as_deref().or(group);
                let results: Vec<bool> = of.iter().map(|p| p.evaluate(records, t, inner, evidence, groups)).collect();
                let passed = if matches!(self, Predicate::All { .. }) {
                    results.iter().all(|r| *r)
                } else {
                    results.iter().any(|r| *r)
                };
                if let Some(l) = label {
                    groups.insert(l.clone(), if passed { Outcome::Satisfied } else { Outcome::Violated });
                }
                passed
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MRSpec {
    pub id: String,
    pub description: String,
    pub predicate: Predicate,
    #[serde(default)]
    pub parameters: Thresholds,
    #[serde(default)]
    pub derived_from: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Satisfied,
    Violated,
    Inconclusive,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Satisfied => "Satisfied",
            Outcome::Violated => "Violated",
            Outcome::Inconclusive => "Inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    /// Label of the innermost labeled predicate containing the clause.
    pub group: Option<String>,
    pub quantity: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MRVerdict {
    pub mr_id: String,
    pub outcome: Outcome,
    pub evidence: Vec<Evidence>,
    /// Outcome of every labeled sub-predicate.
    pub groups: BTreeMap<String, Outcome>,
    pub anomalies: Vec<String>,
    /// Records the relation needed but did not get.
    pub missing: Vec<String>,
    pub parameters: Thresholds,
}

impl MRVerdict {
    pub fn group(&self, label: &str) -> Option<Outcome> {
        self.groups.get(label).copied()
    }
}

/// Evaluates one relation. Missing records give `Inconclusive`.
pub fn evaluate(mr: &MRSpec, records: &Records) -> MRVerdict {
    let missing: Vec<String> = mr
        .predicate
        .references()
        .into_iter()
        .filter(|name| !records.contains_key(name))
        .collect();
    if !missing.is_empty() {
        return MRVerdict {
            mr_id: mr.id.clone(),
            outcome: Outcome::Inconclusive,
            evidence: Vec::new(),
            groups: BTreeMap::new(),
            anomalies: Vec::new(),
            missing,
            parameters: mr.parameters,
        };
    }
    let mut evidence = Vec::new();
    let mut groups = BTreeMap::new();
    let passed = mr.predicate.evaluate(records, &mr.parameters, None, &mut evidence, &mut groups);
    MRVerdict {
        mr_id: mr.id.clone(),
        outcome: if passed { Outcome::Satisfied } else { Outcome::Violated },
        evidence,
        groups,
        anomalies: Vec::new(),
        missing,
        parameters: mr.parameters,
    }
}

/// Evaluates every relation and attaches anomaly flags that involve records
/// the relation references.
pub fn evaluate_all(mrs: &[MRSpec], records: &Records) -> (Vec<MRVerdict>, Vec<Anomaly>) {
    let tau = mrs.first().map_or(DEFAULT_TAU_TINT, |m| m.parameters.tau_tint);
    let anomalies = detect_anomalies(records, tau);
    let verdicts = mrs
        .iter()
        .map(|mr| {
            let mut v = evaluate(mr, records);
            let refs = mr.predicate.references();
            v.anomalies = anomalies
                .iter()
                .filter(|a| a.test_cases.iter().any(|tc| tc != BASELINE && refs.contains(tc)))
                .map(|a| a.message.clone())
                .collect();
            v
        })
        .collect();
    (verdicts, anomalies)
}

/// Applies the same thresholds to every relation.
pub fn with_thresholds(mut mrs: Vec<MRSpec>, t: Thresholds) -> Vec<MRSpec> {
    for mr in &mut mrs {
        mr.parameters = t;
    }
    mrs
}

/// Rejects duplicate ids, unknown parents and cycles in `derived_from`.
pub fn validate_mr_set(mrs: &[MRSpec]) -> Result<(), MrError> {
    let mut by_id = BTreeMap::new();
    for mr in mrs {
        if by_id.insert(mr.id.as_str(), mr).is_some() {
            return Err(MrError::DuplicateMR(mr.id.clone()));
        }
    }
    for mr in mrs {
        for parent in &mr.derived_from {
            if !by_id.contains_key(parent.as_str()) {
                return Err(MrError::UnknownParentMR {
                    mr: mr.id.clone(),
                    parent: parent.clone(),
                });
            }
        }
    }
    // Depth-first search with colouring.
    fn visit<'a>(
        id: &'a str,
        by_id: &BTreeMap<&'a str, &'a MRSpec>,
        state: &mut BTreeMap<&'a str, u8>,
    ) -> Result<(), MrError> {
        match state.get(id) {
            Some(1) => return Err(MrError::Cycle(id.to_string())),
            Some(2) => return Ok(()),
            _ => {}
        }
        state.insert(id, 1);
        for parent in &by_id[id].derived_from {
            visit(parent, by_id, state)?;
        }
        state.insert(id, 2);
        Ok(())
    }
    let mut state = BTreeMap::new();
    for mr in mrs {
        visit(&mr.id, &by_id, &mut state)?;
    }
    Ok(())
}

/// Loads user-defined relations (a JSON list of [`MRSpec`]) and validates them
/// together with the built-in set they may derive from.
pub fn load_mrs(path: &Path) -> Result<Vec<MRSpec>, MrError> {
    let user: Vec<MRSpec> = serde_json::from_str(&fs::read_to_string(path)?)?;
    let mut all = builtin_mrs();
    all.retain(|b| !user.iter().any(|u| u.id == b.id));
    all.extend(user.iter().cloned());
    validate_mr_set(&all)?;
    Ok(user)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(name: &str, is: f64, tint: f64) -> MetricRecord {
        MetricRecord {
            test_case: name.to_string(),
            is_result: ISResult {
                mean: is,
                std: 0.0,
                n_splits: 1,
            },
            tint,
            likert_semantic: None,
            likert_realistic: None,
            n_generated: 0,
            mutation: None,
        }
    }

    fn records(list: &[(&str, f64, f64)]) -> Records {
        list.iter().map(|(n, is, t)| (n.to_string(), record(n, *is, *t))).collect()
    }

    #[test]
    fn mr01_violated_by_large_drop() {
        let recs = records(&[("baseline", 4.16, 0.2), ("TC01", 3.50, 0.6)]);
        let mr01 = &builtin_mrs()[0];
        let v = evaluate(mr01, &recs);
        assert_eq!(v.outcome, Outcome::Violated);
        let drop = &v.evidence[0];
        assert!((drop.value - 0.66 / 4.16).abs() < 1e-12);
        assert!(!drop.passed);
        assert_eq!(drop.group.as_deref(), Some("is"));
    }

    #[test]
    fn missing_record_is_inconclusive() {
        let recs = records(&[("baseline", 4.16, 0.2)]);
        let v = evaluate(&builtin_mrs()[0], &recs);
        assert_eq!(v.outcome, Outcome::Inconclusive);
        assert_eq!(v.missing, vec!["TC01".to_string()]);
    }

    #[test]
    fn any_predicate() {
        let recs = records(&[("a", 3.0, 0.1), ("b", 2.0, 0.1)]);
        let mr = MRSpec {
            id: "X".into(),
            description: String::new(),
            predicate: Predicate::Any {
                label: Some("either".into()),
                of: vec![
                    Predicate::clause(Clause::IsHigher { higher: "b".into(), lower: "a".into() }),
                    Predicate::clause(Clause::IsAbsDiffWithin { a: "a".into(), b: "b".into(), max_diff: 1.5 }),
                ],
            },
            parameters: Thresholds::default(),
            derived_from: vec![],
        };
        let v = evaluate(&mr, &recs);
        assert_eq!(v.outcome, Outcome::Satisfied);
        assert_eq!(v.group("either"), Some(Outcome::Satisfied));
        assert_eq!(v.evidence.len(), 2);
    }

    #[test]
    fn mr_set_validation() {
        let mut mrs = builtin_mrs();
        validate_mr_set(&mrs).unwrap();
        mrs[0].derived_from = vec!["MR05".into()];
        assert!(matches!(validate_mr_set(&mrs), Err(MrError::Cycle(_))));
        let mut mrs = builtin_mrs();
        mrs[1].derived_from.push("MR99".into());
        assert!(matches!(validate_mr_set(&mrs), Err(MrError::UnknownParentMR { .. })));
        let mut mrs = builtin_mrs();
        mrs.push(builtin_mrs()[0].clone());
        assert!(matches!(validate_mr_set(&mrs), Err(MrError::DuplicateMR(_))));
    }

    #[test]
    fn specs_round_trip_through_json() {
        let mrs = builtin_mrs();
        let json = serde_json::to_string(&mrs).unwrap();
        let back: Vec<MRSpec> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, mrs);
    }

    #[test]
    fn record_validation() {
        assert!(record("x", 2.0, 0.5).validate().is_ok());
        assert!(record("x", 2.0, 1.5).validate().is_err());
        assert!(record("x", 0.5, 0.5).validate().is_err());
    }
}
