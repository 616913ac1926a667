//! Append-only JSONL record of a labeling session.
//!
//! Replaying the events in order reproduces the labeled set, the label
//! names and the round counter of the session that wrote them.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::ActiveError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Seeded,
    Selected,
    Labeled,
    Trained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub round: usize,
    pub event: EventKind,
    pub ids: Vec<String>,
    pub label_index: Option<usize>,
    pub label_name: Option<String>,
    pub disc_confidence_mean: Option<f64>,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

impl Event {
    pub fn new(round: usize, event: EventKind, ids: Vec<String>) -> Self {
        Event {
            round,
            event,
            ids,
            label_index: None,
            label_name: None,
            disc_confidence_mean: None,
            timestamp: now_millis(),
        }
    }
}

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Event sink that keeps every event in memory and optionally mirrors it to
/// a JSONL file, flushing after each line.
pub struct EventLog {
    events: Vec<Event>,
    sink: Option<(PathBuf, BufWriter<File>)>,
}

impl std::fmt::Debug for EventLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventLog")
            .field("events", &self.events.len())
            .field("path", &self.sink.as_ref().map(|s| &s.0))
            .finish()
    }
}

impl EventLog {
    pub fn memory() -> Self {
        EventLog {
            events: Vec::new(),
            sink: None,
        }
    }

    /// Opens `path` for appending, keeping earlier events in memory.
    pub fn open(path: &Path) -> Result<Self, ActiveError> {
        let events = if path.exists() {
            read_events(path)?
        } else {
            Vec::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| ActiveError::Log(format!("{}: {e}", path.display())))?;
        Ok(EventLog {
            events,
            sink: Some((path.to_path_buf(), BufWriter::new(file))),
        })
    }

    pub fn record(&mut self, event: Event) -> Result<(), ActiveError> {
        if let Some((path, w)) = &mut self.sink {
            let line = serde_json::to_string(&event).expect("events serialize");
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|e| ActiveError::Log(format!("{}: {e}", path.display())))?;
        }
        self.events.push(event);
        Ok(())
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }
}

pub fn read_events(path: &Path) -> Result<Vec<Event>, ActiveError> {
    let file =
        File::open(path).map_err(|e| ActiveError::Log(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ActiveError::Log(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line)
            .map_err(|e| ActiveError::Log(format!("{} line {}: {e}", path.display(), n + 1)))?;
        out.push(event);
    }
    Ok(out)
}

/// Labeling state rebuilt from a log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayState {
    /// Last round that appears in the log.
    pub round: usize,
    pub seeded: bool,
    pub labeled: Vec<(String, usize)>,
    pub label_names: Vec<String>,
    /// Selected ids of the last `selected` event that has not been fully
    /// labeled yet.
    pub pending: Vec<String>,
    pub last_trained_round: Option<usize>,
}

pub fn replay(events: &[Event]) -> Result<ReplayState, ActiveError> {
    let mut st = ReplayState::default();
    let mut seen = HashSet::new();
    for (n, ev) in events.iter().enumerate() {
        let bad = |m: String| ActiveError::Log(format!("event {}: {m}", n + 1));
        st.round = st.round.max(ev.round);
        match ev.event {
            EventKind::Seeded => {
                st.seeded = true;
                st.pending = ev.ids.clone();
            }
            EventKind::Selected => st.pending = ev.ids.clone(),
            EventKind::Trained => st.last_trained_round = Some(ev.round),
            EventKind::Labeled => {
                let [id] = ev.ids.as_slice() else {
                    return Err(bad("labeled event must carry exactly one id".into()));
                };
                if !seen.insert(id.clone()) {
                    return Err(bad(format!("{id} labeled twice")));
                }
                let idx = ev
                    .label_index
                    .ok_or_else(|| bad("labeled event without label_index".into()))?;
                match idx.cmp(&st.label_names.len()) {
                    std::cmp::Ordering::Less => {
                        if let Some(name) = &ev.label_name {
                            if name != &st.label_names[idx] {
                                return Err(bad(format!(
                                    "index {idx} named {name:?}, expected {:?}",
                                    st.label_names[idx]
                                )));
                            }
                        }
                    }
                    std::cmp::Ordering::Equal => {
                        let name = ev
                            .label_name
                            .clone()
                            .ok_or_else(|| bad("new label without a name".into()))?;
                        if st.label_names.contains(&name) {
                            return Err(bad(format!("label {name:?} minted twice")));
                        }
                        st.label_names.push(name);
                    }
                    std::cmp::Ordering::Greater => {
                        return Err(bad(format!(
                            "label index {idx} skips ahead of {}",
                            st.label_names.len()
                        )));
                    }
                }
                st.pending.retain(|p| p != id);
                st.labeled.push((id.clone(), idx));
            }
        }
    }
    Ok(st)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled(round: usize, id: &str, idx: usize, name: &str) -> Event {
        Event {
            label_index: Some(idx),
            label_name: Some(name.into()),
            ..Event::new(round, EventKind::Labeled, vec![id.into()])
        }
    }

    #[test]
    fn file_round_trip_and_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("session.jsonl");
        let mut log = EventLog::open(&path).unwrap();
        log.record(Event::new(
            0,
            EventKind::Seeded,
            vec!["a".into(), "b".into()],
        ))
        .unwrap();
        log.record(labeled(0, "a", 0, "r1")).unwrap();
        log.record(labeled(0, "b", 0, "r1")).unwrap();
        log.record(Event::new(0, EventKind::Trained, vec![]))
            .unwrap();
        log.record(Event::new(
            1,
            EventKind::Selected,
            vec!["c".into(), "d".into()],
        ))
        .unwrap();
        log.record(labeled(1, "c", 1, "r2")).unwrap();
        drop(log);

        let events = read_events(&path).unwrap();
        assert_eq!(events.len(), 6);
        let st = replay(&events).unwrap();
        assert_eq!(st.round, 1);
        assert_eq!(st.label_names, vec!["r1", "r2"]);
        assert_eq!(st.labeled.len(), 3);
        assert_eq!(st.pending, vec!["d"]);
        assert_eq!(st.last_trained_round, Some(0));

        // reopening keeps earlier events
        let log = EventLog::open(&path).unwrap();
        assert_eq!(log.events().len(), 6);
    }

    #[test]
    fn replay_rejects_inconsistent_logs() {
        let twice = [labeled(0, "a", 0, "r"), labeled(0, "a", 0, "r")];
        assert!(replay(&twice).is_err());
        let skip = [labeled(0, "a", 1, "r")];
        assert!(replay(&skip).is_err());
        let rename = [labeled(0, "a", 0, "r"), labeled(0, "b", 0, "s")];
        assert!(replay(&rename).is_err());
    }
}
