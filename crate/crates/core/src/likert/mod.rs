//! Human Likert scoring of generated images.
//!
//! Raters score each sampled image on each scale (by default `semantic` and
//! `realistic`) from 1 (very poor) to 5 (excellent). Scores are pooled over
//! raters and images per scale. Sessions persist as a JSON header plus an
//! append-only JSON-lines score file, see [`SessionStore`].

pub mod http;
mod store;

pub use store::SessionStore;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{compensated_sum, mean_and_sample_std, MeanStd};
use crate::seed;

pub const DEFAULT_SAMPLE_SIZE: usize = 40;
pub const DEFAULT_SCALES: [&str; 2] = ["semantic", "realistic"];
pub const MIN_SCORE: i64 = 1;
pub const MAX_SCORE: i64 = 5;

#[derive(Debug, Error)]
pub enum LikertError {
    #[error("session needs at least one image")]
    EmptyImageList,
    #[error("cannot sample {requested} images from {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("session needs at least one scale, with unique names")]
    BadScales,
    #[error("session {0} is closed")]
    SessionClosed(String),
    #[error("score {0} is outside 1..=5")]
    ValueOutOfRange(i64),
    #[error("unknown scale {0:?}")]
    UnknownScale(String),
    #[error("unknown image {0:?}")]
    UnknownImage(String),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("invalid request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionImage {
    pub id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikertSession {
    pub id: String,
    pub test_case: String,
    /// Sampled images in presentation order.
    pub images: Vec<SessionImage>,
    pub scales: Vec<String>,
    pub raters: BTreeSet<String>,
    pub status: SessionStatus,
    pub seed: u64,
}

impl LikertSession {
    pub fn image(&self, id: &str) -> Option<&SessionImage> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn total_prompts(&self) -> usize {
        self.images.len() * self.scales.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikertScore {
    pub session_id: String,
    pub rater: String,
    pub image: String,
    pub scale: String,
    pub value: i64,
    pub timestamp: DateTime<Utc>,
}

/// Per-scale pooled statistics. `summary` is `None` when nothing was scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleAggregate {
    pub n: usize,
    pub summary: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikertAggregate {
    pub session_id: String,
    pub test_case: String,
    pub scales: BTreeMap<String, ScaleAggregate>,
}

impl LikertAggregate {
    pub fn scale(&self, name: &str) -> Option<MeanStd> {
        self.scales.get(name).and_then(|s| s.summary)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdKind {
    #[default]
    Sample,
    Population,
}

/// Draws `sample_size` images uniformly (seeded) in shuffled presentation order.
pub fn sample_session(
    id: impl Into<String>,
    test_case: impl Into<String>,
    images: &[SessionImage],
    scales: &[String],
    sample_size: usize,
    seed: u64,
) -> Result<LikertSession, LikertError> {
    if images.is_empty() {
        return Err(LikertError::EmptyImageList);
    }
    if sample_size > images.len() {
        return Err(LikertError::SampleTooLarge {
            requested: sample_size,
            available: images.len(),
        });
    }
    let unique: BTreeSet<&String> = scales.iter().collect();
    if scales.is_empty() || unique.len() != scales.len() || scales.iter().any(|s| s.trim().is_empty()) {
        return Err(LikertError::BadScales);
    }
    let mut rng = seed::rng(seed::derive_str(seed, "likert-sample"));
    let picked = index::sample(&mut rng, images.len(), sample_size);
    Ok(LikertSession {
        id: id.into(),
        test_case: test_case.into(),
        images: picked.into_iter().map(|i| images[i].clone()).collect(),
        scales: scales.to_vec(),
        raters: BTreeSet::new(),
        status: SessionStatus::Open,
        seed,
    })
}

/// Checks a score against its session; does not check the session status.
pub fn validate_score(session: &LikertSession, score: &LikertScore) -> Result<(), LikertError> {
    if !(MIN_SCORE..=MAX_SCORE).contains(&score.value) {
        return Err(LikertError::ValueOutOfRange(score.value));
    }
    if !session.scales.contains(&score.scale) {
        return Err(LikertError::UnknownScale(score.scale.clone()));
    }
    if session.image(&score.image).is_none() {
        return Err(LikertError::UnknownImage(score.image.clone()));
    }
    if score.rater.trim().is_empty() {
        return Err(LikertError::BadRequest("rater must be non-empty".into()));
    }
    Ok(())
}

pub type ScoreKey = (String, String, String);

/// Keeps one score per (rater, image, scale): the latest timestamp wins, ties
/// go to the higher value, so the result does not depend on arrival order.
pub fn merge_score(scores: &mut BTreeMap<ScoreKey, LikertScore>, score: LikertScore) {
    let key = (score.rater.clone(), score.image.clone(), score.scale.clone());
    match scores.get(&key) {
        Some(old) if (old.timestamp, old.value) >= (score.timestamp, score.value) => {}
        _ => {
            scores.insert(key, score);
        }
    }
}

/// Pooled mean and standard deviation per scale.
pub fn aggregate_scores<'a, I>(session: &LikertSession, scores: I, kind: StdKind) -> LikertAggregate
where
    I: IntoIterator<Item = &'a LikertScore>,
{
    let mut by_scale: BTreeMap<&str, Vec<f64>> = session.scales.iter().map(|s| (s.as_str(), Vec::new())).collect();
    for s in scores {
        if let Some(v) = by_scale.get_mut(s.scale.as_str()) {
            v.push(s.value as f64);
        }
    }
    let scales = by_scale
        .into_iter()
        .map(|(name, values)| {
            let summary = match kind {
                StdKind::Sample => mean_and_sample_std(&values),
                StdKind::Population => population(&values),
            }
            .map(|(mean, std)| MeanStd { mean, std });
            (name.to_string(), ScaleAggregate { n: values.len(), summary })
        })
        .collect();
    LikertAggregate {
        session_id: session.id.clone(),
        test_case: session.test_case.clone(),
        scales,
    }
}

fn population(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = compensated_sum(values.iter().copied()) / n;
    let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    Some((mean, (ss / n).sqrt()))
}

/// Next (image, scale) the rater has not scored, in presentation order.
pub fn next_prompt<'a>(
    session: &'a LikertSession,
    scores: &BTreeMap<ScoreKey, LikertScore>,
    rater: &str,
) -> Option<(&'a SessionImage, &'a str)> {
    session.images.iter().find_map(|img| {
        session
            .scales
            .iter()
            .find(|scale| !scores.contains_key(&(rater.to_string(), img.id.clone(), (*scale).clone())))
            .map(|scale| (img, scale.as_str()))
    })
}
