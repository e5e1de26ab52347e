use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use stance_core::analysis::{CellKey, Welford};
use stance_core::dispatch::{JobRecord, RunEvent, RunObserver};
use stance_core::storage::summary::{to_fixed_json_line, CellSummary};

use crate::log::{EventKind, RunEntry, RunState};

/// Cell updates are emitted every this many completions per cell.
pub const CELL_UPDATE_EVERY: usize = 10;

type CellId = (String, String, String, Option<String>, u64);

struct CellAcc {
    key: CellKey,
    acc: Welford,
    failed: usize,
}

/// Turns dispatcher events into stream events on a [`RunEntry`].
pub struct Recorder {
    entry: Arc<RunEntry>,
    every: usize,
    cells: Mutex<HashMap<CellId, CellAcc>>,
}

impl Recorder {
    pub fn new(entry: Arc<RunEntry>, every: usize) -> Self {
        Recorder {
            entry,
            every: every.max(1),
            cells: Mutex::new(HashMap::new()),
        }
    }

    fn progress_event(&self) {
        if let Ok(line) = to_fixed_json_line(&self.entry.handle()) {
            self.entry.append(EventKind::Progress, line);
        }
    }

    fn track(&self, record: &JobRecord) {
        let Some(outcome) = &record.outcome else {
            return;
        };
        let mut cells = self.cells.lock().unwrap();
        let targets = std::iter::once(None).chain(record.subscale_id.iter().cloned().map(Some));
        for sub in targets {
            let k = &record.key;
            let id = (
                k.model_name.clone(),
                k.persona_id.clone(),
                k.scale_id.clone(),
                sub.clone(),
                k.temperature.to_bits(),
            );
            let cell = cells.entry(id).or_insert_with(|| CellAcc {
                key: CellKey {
                    model_name: k.model_name.clone(),
                    persona_id: k.persona_id.clone(),
                    scale_id: k.scale_id.clone(),
                    subscale_id: sub,
                    temperature: k.temperature,
                },
                acc: Welford::default(),
                failed: 0,
            });
            match outcome.keyed_score {
                Some(s) => cell.acc.push(s as f64),
                None => cell.failed += 1,
            }
            if !(cell.acc.n() + cell.failed).is_multiple_of(self.every) {
                continue;
            }
            let Ok(stat) = cell.acc.finish(cell.failed) else {
                continue;
            };
            let summary = CellSummary {
                key: cell.key.clone(),
                stat,
            };
            if let Ok(line) = to_fixed_json_line(&summary) {
                self.entry.append(EventKind::CellUpdate, line);
            }
        }
    }
}

impl RunObserver for Recorder {
    fn on_event(&self, event: &RunEvent<'_>) {
        match event {
            RunEvent::Started { progress } => {
                self.entry.update(RunState::Running, Some(*progress));
                self.progress_event();
            }
            RunEvent::JobFinished { record, progress, .. } => {
                self.entry.update(RunState::Running, Some(*progress));
                self.progress_event();
                self.track(record);
            }
            RunEvent::Finished { progress, .. } => {
                self.entry.update(RunState::Running, Some(*progress));
            }
        }
    }
}
