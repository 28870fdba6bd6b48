//! Append-only JSONL run manifest.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::agent::Termination;
use crate::curation::CurationEvent;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ManifestEvent {
    RunStart {
        command: String,
        seed: u64,
    },
    JobStart {
        job: usize,
        question_id: String,
        slot: usize,
        seed: u64,
    },
    JobEnd {
        job: usize,
        question_id: String,
        termination: Termination,
        tool_calls: usize,
        token_count: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reward: Option<u8>,
    },
    GroupDropped {
        question_id: String,
        completed: usize,
    },
    TrainStep {
        step: usize,
        loss: f64,
        mean_reward: f64,
        clip_fraction: f64,
        groups: usize,
    },
    Curation {
        detail: CurationEvent,
    },
    Metrics {
        avg_at_k: f64,
        pass_at_1_best: f64,
        pass_at_k: f64,
        k: usize,
        questions: usize,
    },
    Artifact {
        kind: String,
        path: String,
    },
    RunEnd {
        ok: bool,
    },
}

/// Thread-safe event sink. A manifest without a file discards events.
#[derive(Debug, Default)]
pub struct Manifest {
    out: Option<Mutex<BufWriter<File>>>,
}

impl Manifest {
    pub fn discard() -> Self {
        Manifest { out: None }
    }

    pub fn append(path: &Path) -> std::io::Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Manifest {
            out: Some(Mutex::new(BufWriter::new(f))),
        })
    }

    pub fn record(&self, event: &ManifestEvent) {
        let Some(out) = &self.out else { return };
        let mut w = out.lock().unwrap();
        let res = serde_json::to_writer(&mut *w, event)
            .map_err(std::io::Error::from)
            .and_then(|_| w.write_all(b"\n"))
            .and_then(|_| w.flush());
        if let Err(e) = res {
            log::warn!("manifest write failed: {e}");
        }
    }
}

pub fn read_manifest(path: &Path) -> std::io::Result<Vec<ManifestEvent>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(std::io::Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn events_round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let m = Manifest::append(&path).unwrap();
        let events = vec![
            ManifestEvent::RunStart { command: "eval".into(), seed: 3 },
            ManifestEvent::Curation {
                detail: CurationEvent::Mastered { ids: vec!["q1".into()] },
            },
            ManifestEvent::RunEnd { ok: true },
        ];
        for e in &events {
            m.record(e);
        }
        drop(m);
        assert_eq!(read_manifest(&path).unwrap(), events);
        Manifest::discard().record(&events[0]);
    }
}
