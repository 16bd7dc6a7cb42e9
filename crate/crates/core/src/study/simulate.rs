use std::collections::HashSet;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::{discover_pairs, Condition, StudyAggregate};
use crate::raster::RawImage;
use crate::{Error, Result};

/// How a simulated judge answers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JudgePolicy {
    /// A fair coin per trial.
    Random,
    AlwaysOriginal,
    /// Says "original" exactly when every served frame matches an original asset pixel for pixel.
    Oracle { originals: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulationSummary {
    pub trials: u64,
    /// The service's `/api/results` after the run.
    pub aggregate: StudyAggregate,
}

#[derive(Deserialize)]
struct Trial {
    trial_id: String,
    media: Vec<String>,
}

fn http(e: impl std::fmt::Display) -> Error {
    Error::Http(e.to_string())
}

fn original_pixels(dir: &std::path::Path) -> Result<HashSet<Vec<u8>>> {
    let pairs = discover_pairs(dir, dir)?;
    let mut set = HashSet::new();
    for p in pairs {
        for f in p.original {
            set.insert(RawImage::load(&f)?.pixels().iter().flatten().copied().collect());
        }
    }
    Ok(set)
}

/// Runs `n` complete trials against the study at `base_url`, spread round-robin over `judges` sessions.
pub fn simulate_judges(base_url: &str, n: u64, judges: usize, policy: &JudgePolicy, seed: u64) -> Result<SimulationSummary> {
    let agent = ureq::Agent::new_with_defaults();
    let base = base_url.trim_end_matches('/');
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let originals = match policy {
        JudgePolicy::Oracle { originals } => Some(original_pixels(originals)?),
        _ => None,
    };
    let judges = judges.max(1);
    for i in 0..n {
        let session = format!("judge-{seed}-{}", i as usize % judges);
        let trial: Trial = agent
            .get(format!("{base}/api/trial"))
            .query("session", &session)
            .call()
            .map_err(http)?
            .body_mut()
            .read_json()
            .map_err(http)?;
        let verdict = match (policy, &originals) {
            (JudgePolicy::Random, _) => {
                if rng.random::<bool>() {
                    Condition::Original
                } else {
                    Condition::Generated
                }
            }
            (JudgePolicy::AlwaysOriginal, _) => Condition::Original,
            (JudgePolicy::Oracle { .. }, Some(set)) => {
                let mut all_original = true;
                for url in &trial.media {
                    let png = agent.get(format!("{base}{url}")).call().map_err(http)?.body_mut().read_to_vec().map_err(http)?;
                    let img = image::load_from_memory(&png).map_err(|e| Error::Raster(e.to_string()))?.to_rgb8();
                    all_original &= set.contains(img.as_raw());
                }
                if all_original {
                    Condition::Original
                } else {
                    Condition::Generated
                }
            }
            (JudgePolicy::Oracle { .. }, None) => unreachable!("oracle originals are loaded above"),
        };
        agent
            .post(format!("{base}/api/verdict"))
            .send_json(serde_json::json!({ "trial_id": trial.trial_id, "verdict": verdict }))
            .map_err(http)?;
    }
    let results: serde_json::Value = agent
        .get(format!("{base}/api/results"))
        .call()
        .map_err(http)?
        .body_mut()
        .read_json()
        .map_err(http)?;
    Ok(SimulationSummary { trials: n, aggregate: StudyAggregate::from_json(&results)? })
}
