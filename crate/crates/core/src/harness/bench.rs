//! Round-trip profiling of the smart-home light route.

use std::fmt;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::apps::CMD_LIGHT;
use crate::error::Result;
use crate::metrics::{self, Stage};

use super::scenarios::{Scenario, ScenarioRun};

/// Tolerance for the stage sum against the measured round trip.
pub const SUM_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Serialize)]
pub struct StageRow {
    pub stage: Stage,
    pub label: &'static str,
    pub mean_ms: f64,
    pub share: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub iterations: usize,
    pub rows: Vec<StageRow>,
    pub rtt_ms: f64,
    pub component_sum_ms: f64,
    pub replies_ok: usize,
    pub led_actuations: usize,
    /// Simulated link latency per iteration; not part of the wall-clock rows.
    pub simulated_link_ms: f64,
    /// Wall-clock numbers from a simulator; not comparable to hardware.
    pub comparable_to_hardware: bool,
}

impl BenchReport {
    pub fn sum_deviation(&self) -> f64 {
        if self.rtt_ms == 0.0 {
            return 0.0;
        }
        (self.component_sum_ms - self.rtt_ms).abs() / self.rtt_ms
    }

    pub fn consistent(&self) -> bool {
        self.sum_deviation() <= SUM_TOLERANCE
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28} {:>12} {:>8}", "stage", "mean ms", "share")?;
        for r in &self.rows {
            writeln!(f, "{:<28} {:>12.4} {:>7.1}%", r.label, r.mean_ms, r.share * 100.0)?;
        }
        writeln!(f, "{:<28} {:>12.4}", "RTT", self.rtt_ms)?;
        writeln!(
            f,
            "sum of stages {:.4} ms ({:.2}% from RTT), {} iterations, {} replies, {} LED writes",
            self.component_sum_ms,
            self.sum_deviation() * 100.0,
            self.iterations,
            self.replies_ok,
            self.led_actuations
        )?;
        write!(
            f,
            "simulated link latency {:.3} ms per round trip; absolute values are simulator timings, not comparable to hardware",
            self.simulated_link_ms
        )
    }
}

/// Direct request to the web front end, through the gateway to the light
/// switch, until the LED write has happened.
pub fn bench_rtt(iterations: usize, seed: u64) -> Result<BenchReport> {
    let mut run = ScenarioRun::deploy(Scenario::SmartHome, seed)?;
    let iterations = iterations.max(1);
    let mut totals = [Duration::ZERO; Stage::ALL.len()];
    let mut rtt = Duration::ZERO;
    let mut replies_ok = 0;
    let mut sim_micros = 0u64;
    let before = run.world.actuations().len();
    for i in 0..iterations {
        let sim_start = run.world.now_micros();
        metrics::start();
        let t0 = Instant::now();
        let reply = run.world.direct_now(&mut run.deployer, "user", &[CMD_LIGHT, (i % 2) as u8]);
        run.world.settle();
        let elapsed = t0.elapsed();
        let stages = metrics::finish();
        rtt += elapsed;
        for (k, s) in Stage::ALL.iter().enumerate() {
            totals[k] += stages.get(s).copied().unwrap_or_default();
        }
        if matches!(reply, Ok(Some(ref r)) if r.starts_with(b"{")) {
            replies_ok += 1;
        }
        sim_micros += run.world.now_micros() - sim_start;
    }
    let n = iterations as f64;
    let ms = |d: Duration| d.as_secs_f64() * 1e3 / n;
    let rtt_ms = ms(rtt);
    let rows: Vec<StageRow> = Stage::ALL
        .iter()
        .zip(totals)
        .map(|(s, d)| StageRow {
            stage: *s,
            label: s.label(),
            mean_ms: ms(d),
            share: if rtt_ms > 0.0 { ms(d) / rtt_ms } else { 0.0 },
        })
        .collect();
    let led_actuations = run
        .world
        .actuations()
        .iter()
        .skip(before)
        .filter(|(dev, _, _)| dev == "light-node.light_led")
        .count();
    Ok(BenchReport {
        iterations,
        component_sum_ms: rows.iter().map(|r| r.mean_ms).sum(),
        rows,
        rtt_ms,
        replies_ok,
        led_actuations,
        simulated_link_ms: sim_micros as f64 / 1e3 / n,
        comparable_to_hardware: false,
    })
}
