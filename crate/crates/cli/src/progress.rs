use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use stance_core::dispatch::{Progress, RunEvent, RunObserver};

/// Progress redraws are capped at four per second.
pub const MIN_INTERVAL: Duration = Duration::from_millis(250);

/// Admits at most one update per interval; forced updates always pass.
#[derive(Debug, Clone)]
pub struct Throttle {
    interval: Duration,
    last: Option<Instant>,
}

impl Throttle {
    pub fn new(interval: Duration) -> Self {
        Throttle { interval, last: None }
    }

    pub fn admit(&mut self, now: Instant, force: bool) -> bool {
        let due = self.last.is_none_or(|t| now.saturating_duration_since(t) >= self.interval);
        if force || due {
            self.last = Some(now);
            true
        } else {
            false
        }
    }
}

pub fn progress_line(p: &Progress) -> String {
    format!(
        "progress {}/{} jobs, cost ${:.4}, {} failed",
        p.completed, p.total, p.cost_so_far_usd, p.failures
    )
}

/// Writes throttled progress lines, normally to stderr.
pub struct ProgressReporter {
    state: Mutex<(Throttle, Box<dyn Write + Send>)>,
}

impl ProgressReporter {
    pub fn new(sink: Box<dyn Write + Send>) -> Self {
        ProgressReporter {
            state: Mutex::new((Throttle::new(MIN_INTERVAL), sink)),
        }
    }

    pub fn stderr() -> Self {
        Self::new(Box::new(std::io::stderr()))
    }
}

impl RunObserver for ProgressReporter {
    fn on_event(&self, event: &RunEvent<'_>) {
        let (progress, force) = match event {
            RunEvent::Started { progress } => (progress, true),
            RunEvent::JobFinished { progress, .. } => (progress, false),
            RunEvent::Finished { progress, .. } => (progress, true),
        };
        let mut state = self.state.lock().unwrap();
        let (throttle, sink) = &mut *state;
        if throttle.admit(Instant::now(), force) {
            let _ = writeln!(sink, "{}", progress_line(progress));
        }
    }
}
