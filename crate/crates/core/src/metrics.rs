//! Overhead arithmetic, effective throughput and the iteration sweep.

use serde::Serialize;

use crate::error::{FbError, Result};
use crate::protocol::FbTrace;

/// Pilot symbols for `t` rounds with an even forward/backward split.
pub fn pilot_overhead(t: usize, k: usize, l: usize, d: usize) -> usize {
    2 * t * k * l * d
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EffectiveThroughput {
    pub value: f64,
    /// The training consumed the whole frame (`t * gamma >= 1`).
    pub clamped: bool,
}

/// `max(0, 1 - t * gamma) * rate`.
pub fn effective_throughput(rate: f64, t: usize, gamma: f64) -> EffectiveThroughput {
    let factor = 1.0 - t as f64 * gamma;
    if factor <= 0.0 {
        EffectiveThroughput { value: 0.0, clamped: true }
    } else {
        EffectiveThroughput { value: factor * rate, clamped: false }
    }
}

pub const DEFAULT_SLOT_SYMBOLS: usize = 14;

/// Fraction of a scheduling block taken by one round of pilots when
/// `streams_per_symbol` orthogonal pilots fit in one OFDM symbol.
pub fn frame_budget(
    pilot_symbols_per_round: usize,
    block_slots: usize,
    slot_symbols: usize,
    streams_per_symbol: usize,
) -> Result<f64> {
    if block_slots == 0 || slot_symbols == 0 || streams_per_symbol == 0 {
        return Err(FbError::InvalidParameter(
            "block_slots, slot_symbols and streams_per_symbol must be positive".into(),
        ));
    }
    let symbols = pilot_symbols_per_round.div_ceil(streams_per_symbol);
    Ok(symbols as f64 / (block_slots * slot_symbols) as f64)
}

/// Linear-interpolated percentile (`p` in `[0, 100]`) of unsorted data.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub t: usize,
    pub gamma: f64,
    pub total_overhead: f64,
    pub mean_rate: f64,
    pub mean_eff_tput: f64,
    pub p5: f64,
    pub p95: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepCurve {
    pub rows: Vec<SweepRow>,
    /// Row with the largest mean effective throughput.
    pub argmax: usize,
}

impl SweepCurve {
    pub fn best(&self) -> &SweepRow {
        &self.rows[self.argmax]
    }
}

/// Sorted, deduplicated `T` list; the flag reports whether duplicates were
/// dropped.
pub fn dedup_iterations(t_values: &[usize]) -> (Vec<usize>, bool) {
    let mut v = t_values.to_vec();
    v.sort_unstable();
    let before = v.len();
    v.dedup();
    let had_duplicates = v.len() != before;
    (v, had_duplicates)
}

/// Trade-off curve over `t_values` from traces run to at least `max(t_values)`.
///
/// Every trace belongs to one drop, so each `T` is evaluated on the same
/// channel realizations. `gamma` is the per-round fraction charged to the
/// strategy.
pub fn sweep_iterations(traces: &[FbTrace], t_values: &[usize], gamma: f64) -> Result<SweepCurve> {
    let (t_values, _) = dedup_iterations(t_values);
    if traces.is_empty() || t_values.is_empty() {
        return Err(FbError::InvalidParameter("sweep needs at least one trace and one T".into()));
    }
    let t_max = *t_values.last().unwrap();
    if let Some(short) = traces.iter().find(|tr| tr.points.len() <= t_max) {
        return Err(FbError::InvalidParameter(format!(
            "trace of {} rounds cannot answer T = {t_max}",
            short.points.len() - 1
        )));
    }
    let rows: Vec<SweepRow> = t_values
        .iter()
        .map(|&t| {
            let rates: Vec<f64> = traces.iter().map(|tr| tr.points[t].sum_rate).collect();
            let eff: Vec<f64> = rates.iter().map(|&r| effective_throughput(r, t, gamma).value).collect();
            SweepRow {
                t,
                gamma,
                total_overhead: t as f64 * gamma,
                mean_rate: mean(&rates),
                mean_eff_tput: mean(&eff),
                p5: percentile(&eff, 5.0),
                p95: percentile(&eff, 95.0),
            }
        })
        .collect();
    let argmax = rows
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.mean_eff_tput.total_cmp(&b.1.mean_eff_tput))
        .map(|(i, _)| i)
        .unwrap();
    Ok(SweepCurve { rows, argmax })
}
