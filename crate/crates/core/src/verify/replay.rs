use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::sink::JOURNAL_NOTE_PREFIX;
use super::{register_handlers, verdict, EventSink, MilestoneMachine, ProbeEvent, SinkHandle, SinkOptions, TaskVerdict};
use crate::task::TaskConfig;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot read journal {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayStats {
    pub lines: u64,
    pub replayed: u64,
    pub malformed: u64,
    pub rejected: u64,
    pub notes: u64,
}

/// Splits a journal into its raw lines (without terminators).
pub fn read_journal(path: &Path) -> Result<Vec<Vec<u8>>, ReplayError> {
    let bytes = std::fs::read(path).map_err(|source| ReplayError::Io {
        path: path.to_owned(),
        source,
    })?;
    Ok(bytes
        .split(|b| *b == b'\n')
        .filter(|l| !l.iter().all(u8::is_ascii_whitespace))
        .map(<[u8]>::to_vec)
        .collect())
}

/// Re-ingests a journal into `sink`, keeping each event's payload and
/// stamping a fresh `ts_ns`. Malformed lines and harness notes are skipped;
/// the sink re-applies its seq checks.
pub fn replay_trace(path: &Path, sink: &SinkHandle) -> Result<ReplayStats, ReplayError> {
    let mut stats = ReplayStats::default();
    for line in read_journal(path)? {
        stats.lines += 1;
        if line.first() == Some(&JOURNAL_NOTE_PREFIX) {
            stats.notes += 1;
            continue;
        }
        let Ok(mut ev) = ProbeEvent::parse(&line) else {
            stats.malformed += 1;
            continue;
        };
        ev.ts_ns = sink.now_ns();
        match sink.ingest(0, ev.to_line().as_bytes()) {
            Ok(_) => stats.replayed += 1,
            Err(_) => stats.rejected += 1,
        }
    }
    Ok(stats)
}

/// Replays a journal against a fresh machine for `cfg`. The deadline flag
/// and elapsed time come from the original attempt; the journal does not
/// carry them.
pub fn replay_verdict(
    cfg: &TaskConfig,
    path: &Path,
    deadline_exceeded: bool,
    elapsed_ms: u64,
) -> Result<(TaskVerdict, MilestoneMachine), ReplayError> {
    let lines = read_journal(path)?.len();
    let sink = EventSink::offline(SinkOptions {
        journal: None,
        capacity: lines + 1,
    })
    .expect("offline sink without journal");
    replay_trace(path, &sink.handle())?;
    let mut m = register_handlers(cfg);
    for d in sink.drain() {
        m.advance(&d.event);
    }
    let v = verdict(&m, deadline_exceeded, elapsed_ms, m.events_processed());
    Ok((v, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn cfg() -> TaskConfig {
        serde_json::from_value(json!({
            "task_id": "t", "instruction": "i",
            "app": {"name": "a", "argv": ["/bin/true"]},
            "key_steps": [{"step_id": "s1", "signal": "note_added"}],
            "final_goal": {"step_id": "goal", "signal": "saved"}
        }))
        .unwrap()
    }

    fn line(event: &str, seq: u64) -> String {
        format!(r#"{{"v":1,"source":"app","event":"{event}","seq":{seq},"ts_ns":{},"payload":{{}}}}"#, seq * 7)
    }

    #[test]
    fn empty_journal() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("j");
        std::fs::write(&p, "").unwrap();
        let (v, m) = replay_verdict(&cfg(), &p, false, 0).unwrap();
        assert_eq!(v.event_count, 0);
        assert!(!m.goal_completed());
    }

    #[test]
    fn malformed_and_notes_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("j");
        let body = [line("note_added", 1), "{oops".into(), "# query `q` failed: x".into(), line("saved", 2)].join("\n");
        std::fs::write(&p, body + "\n").unwrap();
        let sink = EventSink::offline(SinkOptions::default()).unwrap();
        let stats = replay_trace(&p, &sink.handle()).unwrap();
        assert_eq!((stats.lines, stats.replayed, stats.malformed, stats.notes), (4, 2, 1, 1));
        let (v, _) = replay_verdict(&cfg(), &p, false, 5).unwrap();
        assert!(v.success);
        assert_eq!((v.key_steps_completed, v.event_count), (1, 2));
    }

    #[test]
    fn record_then_replay_matches() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("j");
        let sink = EventSink::offline(SinkOptions::journal(&p)).unwrap();
        for l in [line("note_added", 1), line("note_added", 1), "junk".into(), line("saved", 3)] {
            let _ = sink.ingest(l.as_bytes());
        }
        let mut m = register_handlers(&cfg());
        for d in sink.drain() {
            m.advance(&d.event);
        }
        drop(sink);
        let original = verdict(&m, false, 42, m.events_processed());
        let (replayed, _) = replay_verdict(&cfg(), &p, false, 42).unwrap();
        assert_eq!(original, replayed);
    }

    #[test]
    fn missing_journal_is_io_error() {
        assert!(matches!(replay_verdict(&cfg(), Path::new("/nonexistent/j"), false, 0), Err(ReplayError::Io { .. })));
    }
}
