use std::collections::HashMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{encode_png, Condition, LogEvent, MediaKind, StudyAggregate, StudyAssetPair, TrialLog, TrialRecord};
use crate::raster::RawImage;
use crate::{Error, Result};

const MAX_SESSION_LEN: usize = 128;

/// Independent, reproducible stream for one session of one study.
pub fn session_rng(seed: u64, session: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(session.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// What the client learns about a trial. The condition is deliberately absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrialDescriptor {
    pub trial_id: String,
    pub media: Vec<String>,
    pub kind: MediaKind,
}

struct Draw {
    pair: usize,
    shown: Condition,
    id: String,
}

fn draw(rng: &mut ChaCha8Rng, pairs: usize) -> Draw {
    let pair = rng.random_range(0..pairs);
    let shown = if rng.random::<bool>() { Condition::Original } else { Condition::Generated };
    let id = format!("{:032x}", rng.random::<u128>());
    Draw { pair, shown, id }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// Study state rebuilt from, and persisted to, the trial log.
pub struct Study {
    pairs: Vec<StudyAssetPair>,
    seed: u64,
    sessions: HashMap<String, ChaCha8Rng>,
    trials: Vec<TrialRecord>,
    index: HashMap<String, usize>,
    log: TrialLog,
    media_cache: HashMap<(usize, Condition, usize), std::sync::Arc<Vec<u8>>>,
}

impl Study {
    pub fn open(pairs: Vec<StudyAssetPair>, seed: u64, log_path: &Path) -> Result<Self> {
        let (log, events) = TrialLog::open(log_path)?;
        let mut study = Self {
            pairs,
            seed,
            sessions: HashMap::new(),
            trials: Vec::new(),
            index: HashMap::new(),
            log,
            media_cache: HashMap::new(),
        };
        for e in events {
            study.replay(e)?;
        }
        Ok(study)
    }

    fn replay(&mut self, e: LogEvent) -> Result<()> {
        match e {
            LogEvent::Trial { trial_id, session, pair, shown, ts_ms } => {
                if !self.pairs.is_empty() {
                    let rng = self.sessions.entry(session.clone()).or_insert_with(|| session_rng(self.seed, &session));
                    draw(rng, self.pairs.len());
                }
                self.index.insert(trial_id.clone(), self.trials.len());
                self.trials.push(TrialRecord { trial_id, session, pair, shown, verdict: None, issued_ms: ts_ms });
            }
            LogEvent::Verdict { trial_id, verdict, .. } => {
                let i = *self
                    .index
                    .get(&trial_id)
                    .ok_or_else(|| Error::Config(format!("log has a verdict for unknown trial {trial_id}")))?;
                self.trials[i].verdict = Some(verdict);
            }
        }
        Ok(())
    }

    pub fn pairs(&self) -> &[StudyAssetPair] {
        &self.pairs
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.trials
    }

    pub fn aggregate(&self) -> StudyAggregate {
        StudyAggregate::from_records(&self.trials)
    }

    pub fn next_trial(&mut self, session: &str) -> Result<TrialDescriptor> {
        if session.is_empty() || session.len() > MAX_SESSION_LEN {
            return Err(Error::InvalidParameter(format!("session must be 1 to {MAX_SESSION_LEN} bytes")));
        }
        if self.pairs.is_empty() {
            return Err(Error::ServiceNotReady("no asset pairs are configured".into()));
        }
        let seed = self.seed;
        let n = self.pairs.len();
        let rng = self.sessions.entry(session.to_owned()).or_insert_with(|| session_rng(seed, session));
        let mut d = draw(rng, n);
        while self.index.contains_key(&d.id) {
            d = draw(rng, n);
        }
        let (pair_id, frames, kind) = {
            let p = &self.pairs[d.pair];
            (p.id.clone(), p.frames(), p.kind)
        };
        let event = LogEvent::Trial {
            trial_id: d.id.clone(),
            session: session.to_owned(),
            pair: pair_id,
            shown: d.shown,
            ts_ms: now_ms(),
        };
        self.log.append(&event)?;
        self.replay_issued(event);
        let media = (0..frames).map(|f| format!("/assets/trial/{}/{f}", d.id)).collect();
        Ok(TrialDescriptor { trial_id: d.id, media, kind })
    }

    fn replay_issued(&mut self, e: LogEvent) {
        if let LogEvent::Trial { trial_id, session, pair, shown, ts_ms } = e {
            self.index.insert(trial_id.clone(), self.trials.len());
            self.trials.push(TrialRecord { trial_id, session, pair, shown, verdict: None, issued_ms: ts_ms });
        }
    }

    /// Records a verdict durably; a trial accepts exactly one.
    pub fn submit_verdict(&mut self, trial_id: &str, verdict: Condition) -> Result<()> {
        let i = *self.index.get(trial_id).ok_or_else(|| Error::NotFound(format!("trial {trial_id}")))?;
        if self.trials[i].verdict.is_some() {
            return Err(Error::Conflict(format!("trial {trial_id} already has a verdict")));
        }
        self.log.append(&LogEvent::Verdict { trial_id: trial_id.to_owned(), verdict, ts_ms: now_ms() })?;
        self.trials[i].verdict = Some(verdict);
        Ok(())
    }

    /// PNG bytes of frame `frame` of the asset shown in a trial.
    pub fn media(&mut self, trial_id: &str, frame: usize) -> Result<std::sync::Arc<Vec<u8>>> {
        let not_found = || Error::NotFound(format!("media {trial_id}/{frame}"));
        let rec = &self.trials[*self.index.get(trial_id).ok_or_else(not_found)?];
        let pair_idx = self.pairs.iter().position(|p| p.id == rec.pair).ok_or_else(not_found)?;
        let key = (pair_idx, rec.shown, frame);
        if let Some(bytes) = self.media_cache.get(&key) {
            return Ok(bytes.clone());
        }
        let pair = &self.pairs[pair_idx];
        let files = match rec.shown {
            Condition::Original => &pair.original,
            Condition::Generated => &pair.reconstructed,
        };
        let path = files.get(frame).ok_or_else(not_found)?;
        let bytes = std::sync::Arc::new(encode_png(&RawImage::load(path)?)?);
        self.media_cache.insert(key, bytes.clone());
        Ok(bytes)
    }
}
