//! Flags for results that contradict the expectations the relations encode.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{MetricRecord, Records, BASELINE};

/// A proportion margin below this fraction of the largest margin among
/// object classes is flagged as small.
pub const SMALL_MARGIN_RATIO: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// A fully mutated case outscores a partially mutated case of the same object class.
    ProportionInversion,
    /// Partial-vs-full IS margin for one object class is small next to another class.
    SmallProportionEffect,
    /// Higher IS than the baseline despite clearly stronger grey tint.
    IsTintDisagreement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anomaly {
    pub kind: AnomalyKind,
    pub test_cases: Vec<String>,
    pub message: String,
}

impl fmt::Display for Anomaly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn pct(p: f64) -> String {
    format!("{}%", (p * 100.0).round())
}

fn is_full(r: &MetricRecord) -> bool {
    r.mutation.as_ref().is_some_and(|m| m.proportion >= 1.0)
}

fn is_partial(r: &MetricRecord) -> bool {
    r.mutation.as_ref().is_some_and(|m| m.proportion > 0.0 && m.proportion < 1.0)
}

/// Scans records for inverted proportion effects, lopsided proportion margins
/// across object classes, and follow-ups that beat the baseline IS while being
/// more than `tau_tint` greyer.
pub fn detect_anomalies(records: &Records, tau_tint: f64) -> Vec<Anomaly> {
    let mut out = Vec::new();
    let mutated: Vec<&MetricRecord> = records.values().filter(|r| r.mutation.is_some()).collect();

    for full in mutated.iter().filter(|r| is_full(r)) {
        let fm = full.mutation.as_ref().expect("mutated");
        for partial in mutated.iter().filter(|r| is_partial(r)) {
            let pm = partial.mutation.as_ref().expect("mutated");
            if fm.object_class == pm.object_class && full.is_result.mean > partial.is_result.mean {
                out.push(Anomaly {
                    kind: AnomalyKind::ProportionInversion,
                    test_cases: vec![full.test_case.clone(), partial.test_case.clone()],
                    message: format!(
                        "{}-modified outscores {}-modified: {} (IS {:.2}) > {} (IS {:.2})",
                        pct(fm.proportion),
                        pct(pm.proportion),
                        full.test_case,
                        full.is_result.mean,
                        partial.test_case,
                        partial.is_result.mean
                    ),
                });
            }
        }
    }

    // Margins between cases that differ only in proportion, per object class.
    let mut margins: Vec<(String, f64, String, String)> = Vec::new();
    for partial in mutated.iter().filter(|r| is_partial(r)) {
        let pm = partial.mutation.as_ref().expect("mutated");
        for full in mutated.iter().filter(|r| is_full(r)) {
            let fm = full.mutation.as_ref().expect("mutated");
            if fm.object_class == pm.object_class
                && fm.occlusion_budget == pm.occlusion_budget
                && fm.recolor == pm.recolor
            {
                margins.push((
                    pm.object_class.clone(),
                    partial.is_result.mean - full.is_result.mean,
                    partial.test_case.clone(),
                    full.test_case.clone(),
                ));
            }
        }
    }
    if let Some(largest) = margins.iter().max_by(|a, b| a.1.total_cmp(&b.1)) {
        for m in &margins {
            if m.0 != largest.0 && largest.1 > 0.0 && m.1 < SMALL_MARGIN_RATIO * largest.1 {
                out.push(Anomaly {
                    kind: AnomalyKind::SmallProportionEffect,
                    test_cases: vec![m.2.clone(), m.3.clone(), largest.2.clone(), largest.3.clone()],
                    message: format!(
                        "small proportion effect for {}: {} - {} = {:.2}, against {:.2} for {} ({} - {})",
                        m.0, m.2, m.3, m.1, largest.1, largest.0, largest.2, largest.3
                    ),
                });
            }
        }
    }

    if let Some(base) = records.get(BASELINE) {
        for a in records.values().filter(|r| r.test_case != BASELINE) {
            if a.is_result.mean > base.is_result.mean && a.tint > base.tint + tau_tint {
                out.push(Anomaly {
                    kind: AnomalyKind::IsTintDisagreement,
                    test_cases: vec![a.test_case.clone(), BASELINE.to_string()],
                    message: format!(
                        "IS and tint disagree: {} outscores the baseline (IS {:.2} > {:.2}) but is grey-tinted (tint {:.3} > {:.3} + {})",
                        a.test_case, a.is_result.mean, base.is_result.mean, a.tint, base.tint, tau_tint
                    ),
                });
            }
        }
    }
    out
}
