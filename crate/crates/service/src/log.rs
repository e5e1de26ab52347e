//! Per-run state and the append-only event log behind the progress stream.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use stance_core::dispatch::{Progress, RunStatus};
use tokio::sync::watch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Planning,
    Running,
    Completed,
    Partial,
    BudgetExceeded,
    Failed,
}

impl RunState {
    pub fn is_terminal(self) -> bool {
        !matches!(self, RunState::Planning | RunState::Running)
    }

    pub fn from_status(s: RunStatus) -> Self {
        match s {
            RunStatus::Completed => RunState::Completed,
            RunStatus::Partial => RunState::Partial,
            RunStatus::BudgetExceeded => RunState::BudgetExceeded,
            RunStatus::AllProvidersUnreachable | RunStatus::Interrupted => RunState::Failed,
        }
    }

    fn rank(self) -> u8 {
        match self {
            RunState::Planning => 0,
            RunState::Running => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHandle {
    pub run_id: String,
    pub state: RunState,
    pub progress: Progress,
    pub mock: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Progress,
    CellUpdate,
    Terminal,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Progress => "progress",
            EventKind::CellUpdate => "cell_update",
            EventKind::Terminal => "terminal",
        }
    }
}

/// One entry of a run's stream. `id` counts from 1; `data` is a JSON line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamEvent {
    pub id: u64,
    pub kind: EventKind,
    pub data: String,
}

struct Inner {
    handle: RunHandle,
    events: Vec<StreamEvent>,
    /// Index where the closing snapshot begins.
    snapshot_start: Option<usize>,
    summary: Option<String>,
}

/// Registry entry for one run. A single task appends; readers hold cursors.
pub struct RunEntry {
    inner: Mutex<Inner>,
    tick: watch::Sender<usize>,
}

impl RunEntry {
    pub fn new(run_id: &str, total: usize, mock: bool) -> Arc<Self> {
        let handle = RunHandle {
            run_id: run_id.to_string(),
            state: RunState::Planning,
            progress: Progress {
                completed: 0,
                total,
                cost_so_far_usd: 0.0,
                failures: 0,
            },
            mock,
            error: None,
        };
        Arc::new(RunEntry {
            inner: Mutex::new(Inner {
                handle,
                events: Vec::new(),
                snapshot_start: None,
                summary: None,
            }),
            tick: watch::channel(0).0,
        })
    }

    pub fn handle(&self) -> RunHandle {
        self.inner.lock().unwrap().handle.clone()
    }

    pub fn summary(&self) -> Option<String> {
        self.inner.lock().unwrap().summary.clone()
    }

    /// Update the handle. State never moves backwards and `completed` never
    /// decreases.
    pub fn update(&self, state: RunState, progress: Option<Progress>) {
        let mut g = self.inner.lock().unwrap();
        if state.rank() >= g.handle.state.rank() && !g.handle.state.is_terminal() {
            g.handle.state = state;
        }
        if let Some(p) = progress {
            if p.completed >= g.handle.progress.completed {
                g.handle.progress = p;
            }
        }
    }

    pub fn set_error(&self, message: String) {
        self.inner.lock().unwrap().handle.error = Some(message);
    }

    pub fn set_summary(&self, summary: String) {
        self.inner.lock().unwrap().summary = Some(summary);
    }

    pub fn append(&self, kind: EventKind, data: String) {
        let len = {
            let mut g = self.inner.lock().unwrap();
            let id = g.events.len() as u64 + 1;
            g.events.push(StreamEvent { id, kind, data });
            g.events.len()
        };
        self.tick.send_replace(len);
    }

    /// Mark where the closing snapshot starts; call before appending it.
    pub fn begin_snapshot(&self) {
        let mut g = self.inner.lock().unwrap();
        g.snapshot_start = Some(g.events.len());
    }

    pub fn events(&self) -> Vec<StreamEvent> {
        self.inner.lock().unwrap().events.clone()
    }

    fn read_from(&self, cursor: usize) -> (Vec<StreamEvent>, bool) {
        let g = self.inner.lock().unwrap();
        let batch = g.events.get(cursor..).map(<[_]>::to_vec).unwrap_or_default();
        let closed = g.events.last().is_some_and(|e| e.kind == EventKind::Terminal);
        (batch, closed)
    }

    /// Events after `last_event_id`, then live ones until the terminal event.
    /// Without an id, a finished run yields only its closing snapshot.
    pub fn subscribe(self: &Arc<Self>, last_event_id: Option<u64>) -> impl Stream<Item = StreamEvent> + Send + 'static {
        let cursor = {
            let g = self.inner.lock().unwrap();
            match last_event_id {
                Some(id) => (id as usize).min(g.events.len()),
                None => g.snapshot_start.unwrap_or(0),
            }
        };
        let state = Cursor {
            entry: self.clone(),
            rx: self.tick.subscribe(),
            cursor,
            buf: VecDeque::new(),
        };
        stream::unfold(state, |mut st| async move {
            loop {
                if let Some(ev) = st.buf.pop_front() {
                    return Some((ev, st));
                }
                st.rx.borrow_and_update();
                let (batch, closed) = st.entry.read_from(st.cursor);
                if !batch.is_empty() {
                    st.cursor += batch.len();
                    st.buf.extend(batch);
                    continue;
                }
                if closed || st.rx.changed().await.is_err() {
                    return None;
                }
            }
        })
    }
}

struct Cursor {
    entry: Arc<RunEntry>,
    rx: watch::Receiver<usize>,
    cursor: usize,
    buf: VecDeque<StreamEvent>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use futures::StreamExt;

    #[test]
    fn state_and_progress_are_monotone() {
        let e = RunEntry::new("r", 10, true);
        let p = |completed| Progress {
            completed,
            total: 10,
            cost_so_far_usd: 0.0,
            failures: 0,
        };
        e.update(RunState::Running, Some(p(5)));
        e.update(RunState::Planning, Some(p(3)));
        assert_eq!(e.handle().state, RunState::Running);
        assert_eq!(e.handle().progress.completed, 5);
        e.update(RunState::Completed, Some(p(10)));
        e.update(RunState::Failed, None);
        assert_eq!(e.handle().state, RunState::Completed);
    }

    #[tokio::test]
    async fn late_subscriber_sees_appended_events_then_closes() {
        let e = RunEntry::new("r", 2, true);
        e.append(EventKind::Progress, "1".into());
        let sub = e.subscribe(None);
        let writer = e.clone();
        let task = tokio::spawn(async move {
            writer.append(EventKind::Progress, "2".into());
            writer.begin_snapshot();
            writer.append(EventKind::Progress, "3".into());
            writer.append(EventKind::Terminal, "4".into());
        });
        let got: Vec<String> = sub.map(|e| e.data).collect().await;
        task.await.unwrap();
        assert_eq!(got, ["1", "2", "3", "4"]);

        let after: Vec<u64> = e.subscribe(None).map(|e| e.id).collect().await;
        assert_eq!(after, [3, 4]);
        let resumed: Vec<u64> = e.subscribe(Some(1)).map(|e| e.id).collect().await;
        assert_eq!(resumed, [2, 3, 4]);
        let past_end: Vec<u64> = e.subscribe(Some(99)).map(|e| e.id).collect().await;
        assert!(past_end.is_empty());
    }
}
