use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Condition;
use crate::{Error, Result};

/// One line of the trial log, stored as JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum LogEvent {
    Trial {
        trial_id: String,
        session: String,
        pair: String,
        shown: Condition,
        ts_ms: u64,
    },
    Verdict {
        trial_id: String,
        verdict: Condition,
        ts_ms: u64,
    },
}

/// Append-only writer. Verdicts are synced to disk before `append` returns.
#[derive(Debug)]
pub struct TrialLog {
    path: PathBuf,
    file: File,
}

impl TrialLog {
    /// Opens (creating if needed) the log and returns it with the events already recorded.
    pub fn open(path: &Path) -> Result<(Self, Vec<LogEvent>)> {
        let events = if path.exists() { read_log(path)? } else { Vec::new() };
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(Error::file(path))?;
        let bytes = std::fs::read(path).map_err(Error::file(path))?;
        if bytes.last().is_some_and(|&b| b != b'\n') {
            let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
            file.set_len(keep as u64).map_err(Error::file(path))?;
        }
        Ok((Self { path: path.to_path_buf(), file }, events))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, event: &LogEvent) -> Result<()> {
        let mut line = serde_json::to_vec(event).expect("event serializes");
        line.push(b'\n');
        self.file.write_all(&line).map_err(Error::file(&self.path))?;
        if matches!(event, LogEvent::Verdict { .. }) {
            self.file.sync_data().map_err(Error::file(&self.path))?;
        }
        Ok(())
    }
}

/// All events in `path`. A torn final line (a crash mid-write) is dropped with a warning;
/// a malformed line anywhere else is an error.
pub fn read_log(path: &Path) -> Result<Vec<LogEvent>> {
    let file = File::open(path).map_err(Error::file(path))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(Error::file(path))?;
    let mut events = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(e) => events.push(e),
            Err(e) if i + 1 == lines.len() => log::warn!("ignoring incomplete last line of {}: {e}", path.display()),
            Err(e) => return Err(Error::Config(format!("{}:{}: {e}", path.display(), i + 1))),
        }
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn appends_and_replays() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trials.jsonl");
        let events = vec![
            LogEvent::Trial {
                trial_id: "t1".into(),
                session: "s".into(),
                pair: "p".into(),
                shown: Condition::Generated,
                ts_ms: 5,
            },
            LogEvent::Verdict { trial_id: "t1".into(), verdict: Condition::Original, ts_ms: 6 },
        ];
        {
            let (mut log, old) = TrialLog::open(&path).unwrap();
            assert!(old.is_empty());
            for e in &events {
                log.append(e).unwrap();
            }
        }
        let (_, replayed) = TrialLog::open(&path).unwrap();
        assert_eq!(replayed, events);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(r#"{"event":"trial","trial_id":"t1""#));
    }

    #[test]
    fn torn_tail_is_tolerated_but_corruption_is_not() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log");
        let good = r#"{"event":"verdict","trial_id":"a","verdict":"original","ts_ms":1}"#;
        std::fs::write(&path, format!("{good}\n{{\"event\":\"tri")).unwrap();
        assert_eq!(read_log(&path).unwrap().len(), 1);
        let (mut log, old) = TrialLog::open(&path).unwrap();
        assert_eq!(old.len(), 1);
        log.append(&LogEvent::Verdict { trial_id: "b".into(), verdict: Condition::Generated, ts_ms: 2 }).unwrap();
        assert_eq!(read_log(&path).unwrap().len(), 2);
        std::fs::write(&path, format!("garbage\n{good}\n")).unwrap();
        assert!(read_log(&path).is_err());
    }
}
