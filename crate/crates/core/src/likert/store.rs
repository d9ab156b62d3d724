use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use super::{
    aggregate_scores, merge_score, next_prompt, sample_session, validate_score, LikertAggregate,
    LikertError, LikertScore, LikertSession, ScoreKey, SessionImage, SessionStatus, StdKind,
};
use crate::mutate::to_sorted_json;

pub const HEADER_FILE: &str = "session.json";
pub const SCORES_FILE: &str = "scores.jsonl";

struct Entry {
    session: LikertSession,
    scores: BTreeMap<ScoreKey, LikertScore>,
}

/// Directory-backed session store, one subdirectory per session.
///
/// The header is rewritten atomically when the session changes (a new rater,
/// closing). Scores are only ever appended, and replaying the file through
/// [`merge_score`] reproduces the in-memory state.
pub struct SessionStore {
    dir: PathBuf,
    inner: Mutex<BTreeMap<String, Entry>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct Progress {
    pub scored: usize,
    pub total: usize,
}

impl SessionStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, LikertError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut sessions = BTreeMap::new();
        let mut subdirs: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(HEADER_FILE).is_file())
            .collect();
        subdirs.sort();
        for sub in subdirs {
            let session: LikertSession = serde_json::from_str(&fs::read_to_string(sub.join(HEADER_FILE))?)?;
            let mut scores = BTreeMap::new();
            let path = sub.join(SCORES_FILE);
            if path.is_file() {
                for line in BufReader::new(fs::File::open(&path)?).lines() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    merge_score(&mut scores, serde_json::from_str(&line)?);
                }
            }
            sessions.insert(session.id.clone(), Entry { session, scores });
        }
        tracing::debug!(dir = %dir.display(), n = sessions.len(), "opened likert store");
        Ok(SessionStore { dir, inner: Mutex::new(sessions) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn lock(&self) -> MutexGuard<'_, BTreeMap<String, Entry>> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn session_dir(&self, id: &str) -> PathBuf {
        self.dir.join(id)
    }

    fn write_header(&self, session: &LikertSession) -> Result<(), LikertError> {
        let dir = self.session_dir(&session.id);
        fs::create_dir_all(&dir)?;
        let tmp = dir.join(format!("{HEADER_FILE}.tmp"));
        fs::write(&tmp, to_sorted_json(session)?)?;
        fs::rename(tmp, dir.join(HEADER_FILE))?;
        Ok(())
    }

    pub fn create(
        &self,
        test_case: &str,
        images: &[SessionImage],
        scales: &[String],
        sample_size: usize,
        seed: u64,
    ) -> Result<LikertSession, LikertError> {
        let mut map = self.lock();
        let next = map
            .keys()
            .filter_map(|k| k.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()))
            .max()
            .unwrap_or(0)
            + 1;
        let session = sample_session(format!("s{next:04}"), test_case, images, scales, sample_size, seed)?;
        self.write_header(&session)?;
        fs::File::create(self.session_dir(&session.id).join(SCORES_FILE))?;
        map.insert(session.id.clone(), Entry { session: session.clone(), scores: BTreeMap::new() });
        Ok(session)
    }

    pub fn list(&self) -> Vec<LikertSession> {
        self.lock().values().map(|e| e.session.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Result<LikertSession, LikertError> {
        self.lock()
            .get(id)
            .map(|e| e.session.clone())
            .ok_or_else(|| LikertError::UnknownSession(id.to_string()))
    }

    /// Stores a score and returns the rater's progress in the session.
    pub fn record(&self, score: LikertScore) -> Result<Progress, LikertError> {
        let mut map = self.lock();
        let entry = map
            .get_mut(&score.session_id)
            .ok_or_else(|| LikertError::UnknownSession(score.session_id.clone()))?;
        if entry.session.status == SessionStatus::Closed {
            return Err(LikertError::SessionClosed(score.session_id.clone()));
        }
        validate_score(&entry.session, &score)?;
        let dir = self.dir.join(&entry.session.id);
        let mut line = serde_json::to_string(&score)?;
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(dir.join(SCORES_FILE))?;
        f.write_all(line.as_bytes())?;
        f.flush()?;
        if entry.session.raters.insert(score.rater.clone()) {
            let session = entry.session.clone();
            self.write_header(&session)?;
        }
        let rater = score.rater.clone();
        merge_score(&mut entry.scores, score);
        Ok(progress(entry, &rater))
    }

    /// Next unscored (image, scale) for the rater, or `None` when finished.
    pub fn next(&self, id: &str, rater: &str) -> Result<(Option<(SessionImage, String)>, Progress), LikertError> {
        let map = self.lock();
        let entry = map.get(id).ok_or_else(|| LikertError::UnknownSession(id.to_string()))?;
        let prompt = next_prompt(&entry.session, &entry.scores, rater).map(|(img, s)| (img.clone(), s.to_string()));
        Ok((prompt, progress(entry, rater)))
    }

    pub fn aggregate(&self, id: &str, kind: StdKind) -> Result<LikertAggregate, LikertError> {
        let map = self.lock();
        let entry = map.get(id).ok_or_else(|| LikertError::UnknownSession(id.to_string()))?;
        Ok(aggregate_scores(&entry.session, entry.scores.values(), kind))
    }

    pub fn scores(&self, id: &str) -> Result<Vec<LikertScore>, LikertError> {
        let map = self.lock();
        let entry = map.get(id).ok_or_else(|| LikertError::UnknownSession(id.to_string()))?;
        Ok(entry.scores.values().cloned().collect())
    }

    /// Closing twice is not an error.
    pub fn close(&self, id: &str) -> Result<LikertSession, LikertError> {
        let mut map = self.lock();
        let entry = map.get_mut(id).ok_or_else(|| LikertError::UnknownSession(id.to_string()))?;
        if entry.session.status != SessionStatus::Closed {
            entry.session.status = SessionStatus::Closed;
            let session = entry.session.clone();
            self.write_header(&session)?;
        }
        Ok(entry.session.clone())
    }

    /// Resolves an image id, within one session when given, else the first
    /// session (by id) that contains it.
    pub fn image_path(&self, image: &str, session: Option<&str>) -> Result<PathBuf, LikertError> {
        let map = self.lock();
        let found = match session {
            Some(id) => map
                .get(id)
                .ok_or_else(|| LikertError::UnknownSession(id.to_string()))?
                .session
                .image(image)
                .map(|i| i.path.clone()),
            None => map.values().find_map(|e| e.session.image(image).map(|i| i.path.clone())),
        };
        found.ok_or_else(|| LikertError::UnknownImage(image.to_string()))
    }
}

fn progress(entry: &Entry, rater: &str) -> Progress {
    Progress {
        scored: entry.scores.keys().filter(|(r, _, _)| r == rater).count(),
        total: entry.session.total_prompts(),
    }
}
