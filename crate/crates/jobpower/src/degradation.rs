//! Performance-degradation bound for power-capped jobs.
//!
//! Capping a cage at C watts throttles compute whenever demand exceeds C.
//! Charging the excess energy against the usable band above idle gives an
//! upper bound on added runtime: delta = sum_t max(P(t) - C, 0) / (C - I),
//! in minutes for minute-resolution traces (left-Riemann quadrature on the
//! data grid). The bound is exact for a job that would otherwise sit at
//! the cap and conservative for everything else.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predict::PredictiveEnsemble;

/// Degradation bound for one trace.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DegradationBound {
    /// Added runtime upper bound, minutes.
    pub delta_minutes: f64,
    /// delta divided by the uncapped duration.
    pub relative_increase: f64,
}

/// Summary of the bound across an ensemble of futures.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleDegradation {
    pub mean: DegradationBound,
    /// Requested (probability, bound) pairs over realizations, on the
    /// relative-increase scale paired with the matching delta quantile.
    pub quantiles: Vec<(f64, DegradationBound)>,
}

fn check_cap(cap: f64, idle: f64) -> Result<()> {
    if !(cap > idle) || !cap.is_finite() || !(idle >= 0.0) {
        return Err(Error::config(format!(
            "cap {cap} W must exceed idle draw {idle} W (and idle must be nonnegative)"
        )));
    }
    Ok(())
}

/// Bound the added runtime from capping `trace` (watts per minute) at `cap`
/// with per-cage idle draw `idle`.
pub fn degradation_bound(trace: &[f64], cap: f64, idle: f64) -> Result<DegradationBound> {
    check_cap(cap, idle)?;
    if trace.is_empty() {
        return Err(Error::config("degradation bound needs a nonempty trace"));
    }
    let excess: f64 = trace.iter().map(|&p| (p - cap).max(0.0)).sum();
    let delta = excess / (cap - idle);
    Ok(DegradationBound { delta_minutes: delta, relative_increase: delta / trace.len() as f64 })
}

/// Smallest cap (to 0.1 W) whose relative degradation bound is at or below
/// `target`. The bound is nonincreasing in the cap and reaches zero at the
/// trace peak, so a target of zero returns the peak itself.
pub fn cap_for_target(trace: &[f64], idle: f64, target: f64) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::config("cap search needs a nonempty trace"));
    }
    if !(target >= 0.0) {
        return Err(Error::config("target relative increase must be nonnegative"));
    }
    let peak = trace.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > idle) {
        // the whole trace sits at or below idle: any cap above idle is free
        return Ok(idle + 0.1);
    }
    if target == 0.0 {
        return Ok(peak);
    }
    let mut lo = idle; // infeasible end (bound diverges)
    let mut hi = peak; // feasible end (bound is zero)
    while hi - lo > 0.1 {
        let mid = 0.5 * (lo + hi);
        if degradation_bound(trace, mid, idle)?.relative_increase <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Apply the bound to every realization of an ensemble and summarize.
/// Quantiles are taken over realizations (same order statistics for delta
/// and relative increase, which are proportional per realization).
pub fn expected_degradation(
    ensemble: &PredictiveEnsemble,
    cap: f64,
    idle: f64,
    quantiles: &[f64],
) -> Result<EnsembleDegradation> {
    ensemble.validate()?;
    check_cap(cap, idle)?;
    let mut deltas: Vec<f64> = Vec::with_capacity(ensemble.realizations.len());
    for r in &ensemble.realizations {
        deltas.push(degradation_bound(r, cap, idle)?.delta_minutes);
    }
    let t = ensemble.horizon as f64;
    let mean_delta = crate::stats::mean(&deltas);
    let mut sorted = deltas;
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite bounds"));
    let qs = quantiles
        .iter()
        .map(|&p| {
            let d = crate::stats::quantile_of_sorted(&sorted, p);
            (p, DegradationBound { delta_minutes: d, relative_increase: d / t })
        })
        .collect();
    Ok(EnsembleDegradation {
        mean: DegradationBound { delta_minutes: mean_delta, relative_increase: mean_delta / t },
        quantiles: qs,
    })
}

/// Smallest cap (to 0.1 W) whose ensemble-mean relative degradation is at
/// or below `target`. Mirrors `cap_for_target` with the mean bound as the
/// monotone criterion.
pub fn ensemble_cap_for_target(
    ensemble: &PredictiveEnsemble,
    idle: f64,
    target: f64,
) -> Result<f64> {
    ensemble.validate()?;
    if !(target >= 0.0) {
        return Err(Error::config("target relative increase must be nonnegative"));
    }
    let peak = ensemble
        .realizations
        .iter()
        .flat_map(|r| r.iter().cloned())
        .fold(f64::NEG_INFINITY, f64::max);
    if !(peak > idle) {
        return Ok(idle + 0.1);
    }
    if target == 0.0 {
        return Ok(peak);
    }
    let mut lo = idle;
    let mut hi = peak;
    while hi - lo > 0.1 {
        let mid = 0.5 * (lo + hi);
        if expected_degradation(ensemble, mid, idle, &[])?.mean.relative_increase <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
