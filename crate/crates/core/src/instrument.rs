//! Cost accounting: CE call counters, saved-activation liveness, FLOP
//! estimates and wall-clock splits.
//!
//! Memory is tracked in live saved-activation *elements* rather than bytes.
//! Parameters are excluded since every training mode holds them equally.

use std::cell::Cell;
use std::rc::Rc;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Default)]
struct MeterState {
    live: Cell<usize>,
    peak: Cell<usize>,
}

/// Shared handle onto a run's activation accountant.
///
/// Graphs charge the elements they save for backward and release them once
/// backward completes or the graph is dropped.
#[derive(Clone, Debug, Default)]
pub struct ActivationMeter(Rc<MeterState>);

impl ActivationMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn charge(&self, elements: usize) {
        let live = self.0.live.get() + elements;
        self.0.live.set(live);
        if live > self.0.peak.get() {
            self.0.peak.set(live);
        }
    }

    pub fn release(&self, elements: usize) {
        let live = self.0.live.get();
        debug_assert!(elements <= live, "releasing more activations than charged");
        self.0.live.set(live.saturating_sub(elements));
    }

    pub fn live(&self) -> usize {
        self.0.live.get()
    }

    pub fn peak(&self) -> usize {
        self.0.peak.get()
    }

    pub fn reset_peak(&self) {
        self.0.peak.set(self.0.live.get());
    }
}

/// Run-local counters. All fields only grow within a run, except
/// `activation_elements_peak` which tracks a maximum.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostCounters {
    /// CE encodings produced (one per interaction occurrence in E2E, one per
    /// cache miss in GRAM).
    pub ce_forward_calls: u64,
    /// CE encodings that received a gradient.
    pub ce_backward_calls: u64,
    /// CF predictions made during training.
    pub cf_forward_calls: u64,
    pub activation_elements_peak: u64,
    pub flop_estimate: u64,
    pub wall_clock_ns: u64,
    pub cf_phase_ns: u64,
    pub ce_phase_ns: u64,
}

impl CostCounters {
    /// Record one CE forward over an item of `tokens` tokens.
    pub fn record_ce_forward(&mut self, tokens: usize, dim: usize) {
        self.ce_forward_calls += 1;
        self.flop_estimate += ce_flops(tokens, dim);
    }

    pub fn record_ce_backward(&mut self, tokens: usize, dim: usize) {
        self.ce_backward_calls += 1;
        // backward costs roughly twice the forward
        self.flop_estimate += 2 * ce_flops(tokens, dim);
    }

    pub fn observe_peak(&mut self, meter: &ActivationMeter) {
        self.activation_elements_peak = self.activation_elements_peak.max(meter.peak() as u64);
    }

    /// Zero the wall-clock fields, leaving only deterministic counts.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_ns: 0,
            cf_phase_ns: 0,
            ce_phase_ns: 0,
            ..self.clone()
        }
    }
}

/// Multiply-add count of one attention-style CE call, `l_t^2 d + l_t d^2`,
/// at two FLOPs per multiply-add.
pub fn ce_flops(tokens: usize, dim: usize) -> u64 {
    let (l, d) = (tokens as u64, dim as u64);
    2 * (l * l * d + l * d * d)
}

/// Closed-form E2E CE cost for a batch: `|B_u| * l_I * (l_t^2 d + l_t d^2)`.
pub fn e2e_ce_flops(users: usize, avg_interactions: f64, avg_tokens: f64, dim: usize) -> f64 {
    let d = dim as f64;
    2.0 * users as f64 * avg_interactions * (avg_tokens * avg_tokens * d + avg_tokens * d * d)
}

/// Closed-form GRAM CE cost for a batch: `|B_I| * (l_t d^2 + l_t^2 d)`.
pub fn gram_ce_flops(unique_items: usize, avg_tokens: f64, dim: usize) -> f64 {
    let d = dim as f64;
    2.0 * unique_items as f64 * (avg_tokens * d * d + avg_tokens * avg_tokens * d)
}

/// Accumulates elapsed time into a counter field when dropped.
pub struct PhaseTimer<'a> {
    start: Instant,
    sink: &'a mut u64,
}

impl<'a> PhaseTimer<'a> {
    pub fn start(sink: &'a mut u64) -> Self {
        Self {
            start: Instant::now(),
            sink,
        }
    }
}

impl Drop for PhaseTimer<'_> {
    fn drop(&mut self) {
        *self.sink += duration_ns(self.start.elapsed());
    }
}

pub fn duration_ns(d: Duration) -> u64 {
    u64::try_from(d.as_nanos()).unwrap_or(u64::MAX)
}

/// E2E versus GRAM cost comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedReport {
    /// E2E CE forwards over GRAM CE forwards, reduced.
    pub measured_call_ratio: (u64, u64),
    pub measured_call_ratio_f64: f64,
    /// Interactions over unique items for the windows the GRAM run saw.
    pub theoretical_r: (u64, u64),
    pub theoretical_r_f64: f64,
    pub agrees: bool,
    pub e2e_wall_clock_ns: u64,
    pub gram_wall_clock_ns: u64,
    pub gram_cf_phase_ns: u64,
    pub gram_ce_phase_ns: u64,
    pub activation_peak_ratio: f64,
}

impl SpeedReport {
    pub fn measured(&self) -> Ratio<u64> {
        Ratio::new(self.measured_call_ratio.0, self.measured_call_ratio.1)
    }
}

/// Build a [`SpeedReport`] from two runs' counters and the theoretical ratio
/// `interactions / unique_items` of the GRAM run's accumulation windows.
///
/// With `cached` set, a mismatch between the counter ratio and theory is an
/// error.
pub fn speed_report(
    e2e: &CostCounters,
    gram: &CostCounters,
    interactions: u64,
    unique_items: u64,
    cached: bool,
) -> Result<SpeedReport> {
    if gram.ce_forward_calls == 0 || unique_items == 0 {
        return Err(Error::Validation(
            "speed report needs non-zero GRAM CE calls".into(),
        ));
    }
    let measured = Ratio::new(e2e.ce_forward_calls, gram.ce_forward_calls);
    let theory = Ratio::new(interactions, unique_items);
    let agrees = measured == theory;
    if cached && !agrees {
        return Err(Error::Validation(format!(
            "measured CE call ratio {measured} disagrees with theoretical R {theory}"
        )));
    }
    let to_f = |r: Ratio<u64>| *r.numer() as f64 / *r.denom() as f64;
    Ok(SpeedReport {
        measured_call_ratio: (*measured.numer(), *measured.denom()),
        measured_call_ratio_f64: to_f(measured),
        theoretical_r: (*theory.numer(), *theory.denom()),
        theoretical_r_f64: to_f(theory),
        agrees,
        e2e_wall_clock_ns: e2e.wall_clock_ns,
        gram_wall_clock_ns: gram.wall_clock_ns,
        gram_cf_phase_ns: gram.cf_phase_ns,
        gram_ce_phase_ns: gram.ce_phase_ns,
        activation_peak_ratio: gram.activation_elements_peak as f64
            / (e2e.activation_elements_peak.max(1)) as f64,
    })
}
