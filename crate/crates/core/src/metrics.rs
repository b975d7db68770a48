//! Thread-local exclusive-time profiler used by the RTT benchmark.
//!
//! Every instant between [`start`] and [`finish`] is charged to exactly one
//! stage: the innermost stage entered on this thread. The root stage is
//! [`Stage::Other`], so the stage totals always add up to the profiled span.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Stage {
    Aes,
    SpongentHw,
    SpongentSw,
    Boundary,
    SecureIo,
    Network,
    Other,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Aes,
        Stage::SpongentHw,
        Stage::SpongentSw,
        Stage::Boundary,
        Stage::SecureIo,
        Stage::Network,
        Stage::Other,
    ];

    /// Row label used in benchmark reports.
    pub fn label(self) -> &'static str {
        match self {
            Stage::Aes => "aes instructions",
            Stage::SpongentHw => "spongent HW instructions",
            Stage::SpongentSw => "spongent SW instructions",
            Stage::Boundary => "Host-enclave boundary",
            Stage::SecureIo => "Secure I/O",
            Stage::Network => "Network delay",
            Stage::Other => "Other",
        }
    }
}

#[derive(Default)]
struct Profiler {
    active: bool,
    stack: Vec<(Stage, Instant)>,
    totals: BTreeMap<Stage, Duration>,
}

impl Profiler {
    fn charge_top(&mut self, now: Instant) {
        if let Some((stage, since)) = self.stack.last_mut() {
            *self.totals.entry(*stage).or_default() += now.duration_since(*since);
            *since = now;
        }
    }
}

thread_local! {
    static PROFILER: RefCell<Profiler> = RefCell::new(Profiler::default());
}

/// Resets the profiler and starts charging time to [`Stage::Other`].
pub fn start() {
    PROFILER.with(|p| {
        let mut p = p.borrow_mut();
        p.totals.clear();
        p.stack.clear();
        p.active = true;
        p.stack.push((Stage::Other, Instant::now()));
    });
}

/// Stops the profiler and returns the per-stage exclusive times.
pub fn finish() -> BTreeMap<Stage, Duration> {
    PROFILER.with(|p| {
        let mut p = p.borrow_mut();
        let now = Instant::now();
        while !p.stack.is_empty() {
            p.charge_top(now);
            p.stack.pop();
        }
        p.active = false;
        std::mem::take(&mut p.totals)
    })
}

pub fn is_active() -> bool {
    PROFILER.with(|p| p.borrow().active)
}

/// RAII guard returned by [`enter`].
#[must_use]
pub struct StageGuard {
    armed: bool,
}

pub fn enter(stage: Stage) -> StageGuard {
    let armed = PROFILER.with(|p| {
        let mut p = p.borrow_mut();
        if !p.active {
            return false;
        }
        let now = Instant::now();
        p.charge_top(now);
        p.stack.push((stage, now));
        true
    });
    StageGuard { armed }
}

impl Drop for StageGuard {
    fn drop(&mut self) {
        if !self.armed {
            return;
        }
        PROFILER.with(|p| {
            let mut p = p.borrow_mut();
            if !p.active {
                return;
            }
            let now = Instant::now();
            p.charge_top(now);
            p.stack.pop();
            if let Some((_, since)) = p.stack.last_mut() {
                *since = now;
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inactive_profiler_records_nothing() {
        {
            let _g = enter(Stage::Aes);
        }
        assert!(!is_active());
    }

    #[test]
    fn exclusive_times_cover_whole_span() {
        let begin = Instant::now();
        start();
        {
            let _outer = enter(Stage::Boundary);
            std::thread::sleep(Duration::from_millis(2));
            {
                let _inner = enter(Stage::Aes);
                std::thread::sleep(Duration::from_millis(2));
            }
        }
        let totals = finish();
        let span = begin.elapsed();
        let sum: Duration = totals.values().sum();
        assert!(totals[&Stage::Aes] >= Duration::from_millis(2));
        assert!(totals[&Stage::Boundary] >= Duration::from_millis(2));
        assert!(sum <= span);
        assert!(span - sum < Duration::from_millis(1));
    }
}
