//! Scores files: one generated image per line, `<image-id> <p_1> ... <p_C>`.
//! Blank lines and lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{MetricsError, ProbabilityVector, ScoreSet, NORMALIZATION_TOLERANCE};
use crate::numeric::compensated_sum;

pub fn load_scores(path: &Path) -> Result<ScoreSet, MetricsError> {
    parse_scores(&fs::read_to_string(path)?)
}

pub fn parse_scores(text: &str) -> Result<ScoreSet, MetricsError> {
    let mut rows = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let id = fields.next().expect("non-empty line has a field").to_string();
        let probs: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| MetricsError::MalformedRow {
                    line,
                    message: format!("not a number: {f:?}"),
                })
            })
            .collect::<Result<_, _>>()?;
        if probs.is_empty() {
            return Err(MetricsError::MalformedRow {
                line,
                message: "no probabilities".into(),
            });
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(MetricsError::MalformedRow {
                line,
                message: "probabilities must be finite and non-negative".into(),
            });
        }
        match width {
            Some(w) if w != probs.len() => {
                return Err(MetricsError::RowDimensionMismatch {
                    line,
                    expected: w,
                    found: probs.len(),
                })
            }
            _ => width = Some(probs.len()),
        }
        let sum = compensated_sum(probs.iter().copied());
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(MetricsError::NotNormalized { line, sum });
        }
        rows.push((id, ProbabilityVector::new(probs)?));
    }
    ScoreSet::new(rows)
}

/// Serializes a score set; floats use the shortest round-tripping form.
pub fn write_scores(scores: &ScoreSet, path: &Path) -> Result<(), MetricsError> {
    let mut out = String::from("# image-id p_1 ... p_C\n");
    for (id, p) in scores.rows() {
        out.push_str(id);
        for v in p.as_slice() {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
