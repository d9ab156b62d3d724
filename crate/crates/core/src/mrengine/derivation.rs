//! Append-only log of how relations were derived from earlier results.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{MRSpec, MRVerdict, MrError, Outcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivationEntry {
    pub step: usize,
    pub mr_id: String,
    pub description: String,
    pub derived_from: Vec<String>,
    /// Verdicts that prompted this relation, as (MR id, outcome).
    pub motivated_by: Vec<(String, Outcome)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DerivationLog {
    entries: Vec<DerivationEntry>,
}

impl DerivationLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[DerivationEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.iter().any(|e| e.mr_id == id)
    }

    /// Appends `mr`; every parent must already be logged, which keeps the graph acyclic.
    pub fn append(&mut self, mr: &MRSpec, motivating: &[MRVerdict]) -> Result<(), MrError> {
        if self.contains(&mr.id) {
            return Err(MrError::DuplicateMR(mr.id.clone()));
        }
        if let Some(parent) = mr.derived_from.iter().find(|p| !self.contains(p)) {
            return Err(MrError::UnknownParentMR {
                mr: mr.id.clone(),
                parent: parent.clone(),
            });
        }
        self.entries.push(DerivationEntry {
            step: self.entries.len() + 1,
            mr_id: mr.id.clone(),
            description: mr.description.clone(),
            derived_from: mr.derived_from.clone(),
            motivated_by: motivating.iter().map(|v| (v.mr_id.clone(), v.outcome)).collect(),
        });
        Ok(())
    }

    /// Markdown section listing the chain in order.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("## MR derivation log\n\n");
        for e in &self.entries {
            let parents = if e.derived_from.is_empty() {
                "-".to_string()
            } else {
                e.derived_from.join(", ")
            };
            let _ = write!(out, "{}. **{}** (from {parents})", e.step, e.mr_id);
            if !e.motivated_by.is_empty() {
                let m: Vec<String> = e.motivated_by.iter().map(|(id, o)| format!("{id} {o}")).collect();
                let _ = write!(out, "; motivated by {}", m.join(", "));
            }
            let _ = writeln!(out, ": {}", e.description);
        }
        out
    }
}

pub fn log_derivation(
    mut log: DerivationLog,
    new_mr: &MRSpec,
    motivating_verdicts: &[MRVerdict],
) -> Result<DerivationLog, MrError> {
    log.append(new_mr, motivating_verdicts)?;
    Ok(log)
}

/// Replays the built-in derivation chain, attaching the parents' verdicts
/// (when available) as motivation.
pub fn builtin_derivation_log(mrs: &[MRSpec], verdicts: &[MRVerdict]) -> Result<DerivationLog, MrError> {
    let mut log = DerivationLog::new();
    for mr in mrs {
        let motivating: Vec<MRVerdict> = verdicts
            .iter()
            .filter(|v| mr.derived_from.contains(&v.mr_id))
            .cloned()
            .collect();
        log.append(mr, &motivating)?;
    }
    Ok(log)
}
