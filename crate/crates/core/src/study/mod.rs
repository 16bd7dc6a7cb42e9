//! Two-alternative forced-choice perceptual study.
//!
//! Judges are shown either an original or its learned reconstruction, picked
//! uniformly at random per trial, and answer which one they think it was. The
//! service hands out opaque trial ids and media URLs, records verdicts in an
//! append-only log, and reports per-condition percentages.

mod assets;
mod log;
mod server;
mod simulate;
mod state;

use serde::{Deserialize, Serialize};

pub use assets::{discover_pairs, encode_png, MediaKind, StudyAssetPair};
pub use log::{read_log, LogEvent, TrialLog};
pub use server::{router, serve_blocking, RunningStudy, StudyConfig};
pub use simulate::{simulate_judges, JudgePolicy, SimulationSummary};
pub use state::{session_rng, Study, TrialDescriptor};

/// What a trial shows, and what a judge may answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Original,
    Generated,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Original => "original",
            Condition::Generated => "generated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: String,
    pub session: String,
    pub pair: String,
    pub shown: Condition,
    pub verdict: Option<Condition>,
    /// Milliseconds since the Unix epoch at which the trial was issued.
    pub issued_ms: u64,
}

/// Counts and rounded percentages for one shown condition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionStats {
    pub shown: u64,
    pub answered: u64,
    pub judged_original: u64,
    pub judged_generated: u64,
    /// Percent of answered trials judged original, in tenths of a percent.
    pub original_tenths: Option<u32>,
}

impl ConditionStats {
    fn from_counts(shown: u64, judged_original: u64, judged_generated: u64) -> Self {
        let answered = judged_original + judged_generated;
        let original_tenths = (answered > 0).then(|| percent_tenths(judged_original, answered));
        Self { shown, answered, judged_original, judged_generated, original_tenths }
    }

    pub fn percent_original(&self) -> Option<f64> {
        self.original_tenths.map(|t| t as f64 / 10.0)
    }

    /// The complement of [`Self::percent_original`], so the pair always sums to 100.0.
    pub fn percent_generated(&self) -> Option<f64> {
        self.original_tenths.map(|t| (1000 - t) as f64 / 10.0)
    }
}

/// `k / n` as a percentage rounded half-up to one decimal, in tenths.
pub fn percent_tenths(k: u64, n: u64) -> u32 {
    assert!(n > 0 && k <= n);
    ((2000 * k as u128 + n as u128) / (2 * n as u128)) as u32
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudyAggregate {
    pub original: ConditionStats,
    pub generated: ConditionStats,
}

#[derive(Serialize, Deserialize)]
struct ConditionJson {
    shown: u64,
    answered: u64,
    judged_original: u64,
    judged_generated: u64,
    percent_original: Option<f64>,
    percent_generated: Option<f64>,
}

impl StudyAggregate {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a TrialRecord>) -> Self {
        let mut c = [[0u64; 3]; 2];
        for r in records {
            let row = &mut c[(r.shown == Condition::Generated) as usize];
            row[0] += 1;
            match r.verdict {
                Some(Condition::Original) => row[1] += 1,
                Some(Condition::Generated) => row[2] += 1,
                None => {}
            }
        }
        Self {
            original: ConditionStats::from_counts(c[0][0], c[0][1], c[0][2]),
            generated: ConditionStats::from_counts(c[1][0], c[1][1], c[1][2]),
        }
    }

    pub fn get(&self, shown: Condition) -> &ConditionStats {
        match shown {
            Condition::Original => &self.original,
            Condition::Generated => &self.generated,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let cond = |s: &ConditionStats| ConditionJson {
            shown: s.shown,
            answered: s.answered,
            judged_original: s.judged_original,
            judged_generated: s.judged_generated,
            percent_original: s.percent_original(),
            percent_generated: s.percent_generated(),
        };
        serde_json::json!({ "original": cond(&self.original), "generated": cond(&self.generated) })
    }

    /// Parses the JSON produced by [`Self::to_json`].
    pub fn from_json(v: &serde_json::Value) -> crate::Result<Self> {
        let cond = |key: &str| -> crate::Result<ConditionStats> {
            let c: ConditionJson = serde_json::from_value(v[key].clone()).map_err(|e| crate::Error::Http(format!("{key}: {e}")))?;
            Ok(ConditionStats::from_counts(c.shown, c.judged_original, c.judged_generated))
        };
        Ok(Self { original: cond("original")?, generated: cond("generated")? })
    }
}
