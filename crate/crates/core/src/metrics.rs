//! Numerical checks of the observer guarantees on recorded trajectories:
//! framing, exponential decay of the max-type Lyapunov function, and the
//! ultimate bound in terms of the disturbance-envelope gap. Also interval
//! tightness comparisons between observer configurations.

use serde::Serialize;
use thiserror::Error;

use crate::exprlang::EvalError;
use crate::model::DisturbanceEnvelope;
use crate::numkit::{Certificate, Vector};
use crate::observer::{CertificatePair, Family};
use crate::sim::{SimStatus, Trajectory};

/// Relative slack for the decay envelope.
pub const DECAY_REL_TOL: f64 = 1e-6;
/// Relative slack for ultimate-bound comparisons.
pub const BOUND_REL_TOL: f64 = 1e-3;
/// Absolute slack for order relations between frames.
pub const ORDER_ABS_TOL: f64 = 1e-6;
/// Fraction of the horizon used as the limsup proxy.
pub const TAIL_FRACTION: f64 = 0.2;
/// Samples of V below this are left out of the decay fit.
pub const FIT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("trajectories are on different time grids")]
    GridMismatch,
    #[error("no trajectories to compare")]
    Empty,
}

/// `max_{t,i} max(x̲_i − x_i, x_i − x̄_i, 0)`.
pub fn framer_violation(traj: &Trajectory) -> f64 {
    let mut worst = 0.0_f64;
    for k in 0..traj.len() {
        for i in 0..traj.n() {
            let x = traj.x[k][i];
            worst = worst.max(traj.xlower[k][i] - x).max(x - traj.xbar[k][i]);
        }
    }
    worst
}

/// Trapezoidal `∫ (x̄_i − x̲_i) dt` per component.
pub fn width_integral(traj: &Trajectory) -> Vec<f64> {
    let n = traj.n();
    let mut out = vec![0.0; n];
    for k in 1..traj.len() {
        let h = traj.times[k] - traj.times[k - 1];
        for (i, acc) in out.iter_mut().enumerate() {
            let w0 = traj.xbar[k - 1][i] - traj.xlower[k - 1][i];
            let w1 = traj.xbar[k][i] - traj.xlower[k][i];
            *acc += 0.5 * h * (w0 + w1);
        }
    }
    out
}

/// `V(e) = max_i e_i / v_i`.
pub fn lyapunov_value(e: &[f64], v: &[f64]) -> f64 {
    e.iter()
        .zip(v)
        .map(|(e, v)| e / v)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn side_errors(traj: &Trajectory, side: Family) -> Vec<Vector> {
    match side {
        Family::Upper => traj.upper_errors(),
        Family::Lower => traj.lower_errors(),
    }
}

/// `V` along the trajectory for `ē = x̄ − x` (upper) or `e̲ = x − x̲` (lower).
pub fn lyapunov_trace(traj: &Trajectory, v: &[f64], side: Family) -> Vec<f64> {
    side_errors(traj, side)
        .iter()
        .map(|e| lyapunov_value(e, v))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayCheck {
    /// Fitted exponential rate of the running-max envelope of V.
    pub measured_rate: Option<f64>,
    /// `ε / n` from the certificate.
    pub predicted_rate: f64,
    /// Largest `V(t) / (V(0) e^{−(ε/n)t})` over the samples.
    pub worst_ratio: f64,
    pub pass: bool,
}

/// Checks `V(t) ≤ V(0) e^{−(ε/n)t} (1 + 1e-6)` at every sample.
/// Meant for runs with identically zero disturbance and bounds.
pub fn decay_rate_check(traj: &Trajectory, cert: &Certificate, side: Family) -> DecayCheck {
    let v = lyapunov_trace(traj, &cert.v, side);
    let n = cert.v.dim() as f64;
    let predicted_rate = cert.epsilon / n;
    let v0 = v.first().copied().unwrap_or(0.0);
    let mut pass = true;
    let mut worst_ratio = 0.0_f64;
    for (t, &vt) in traj.times.iter().zip(&v) {
        let bound = v0 * (-predicted_rate * t).exp();
        if vt > bound * (1.0 + DECAY_REL_TOL) {
            pass = false;
        }
        if bound > 0.0 {
            worst_ratio = worst_ratio.max(vt / bound);
        } else if vt > 0.0 {
            worst_ratio = f64::INFINITY;
        }
    }
    DecayCheck {
        measured_rate: fit_decay_rate(&traj.times, &v),
        predicted_rate,
        worst_ratio,
        pass,
    }
}

/// Least-squares slope of `log` of the suffix running maximum of `values`.
pub fn fit_decay_rate(times: &[f64], values: &[f64]) -> Option<f64> {
    let mut envelope = values.to_vec();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(&envelope)
        .filter(|(_, &v)| v > FIT_FLOOR)
        .map(|(&t, &v)| (t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(-sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    /// `max V` over the trailing samples.
    pub measured: f64,
    /// `(n/ε) · max_{tail} max_i gap_i / v_i`.
    pub predicted: f64,
    /// `t_end ≥ 10 n / ε`, so transients have decayed by about `e^{-10}`.
    pub horizon_sufficient: bool,
    pub pass: bool,
}

fn tail_start(len: usize) -> usize {
    ((len as f64) * (1.0 - TAIL_FRACTION)).floor() as usize
}

/// Ultimate-bound check with the trailing 20% of samples standing in for limsup.
pub fn ultimate_bound_check(
    traj: &Trajectory,
    cert: &Certificate,
    envelope: &DisturbanceEnvelope,
    side: Family,
) -> Result<BoundCheck, EvalError> {
    let n = cert.v.dim() as f64;
    let v = lyapunov_trace(traj, &cert.v, side);
    let start = tail_start(traj.len()).min(traj.len().saturating_sub(1));
    let measured = v[start..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut gap_max = f64::NEG_INFINITY;
    for &t in &traj.times[start..] {
        let d = envelope.eval_true(t)?;
        let gap = match side {
            Family::Upper => envelope.eval_upper(t)?.sub(&d),
            Family::Lower => d.sub(&envelope.eval_lower(t)?),
        };
        gap_max = gap_max.max(lyapunov_value(&gap, &cert.v));
    }
    let predicted = n / cert.epsilon * gap_max;
    let t_end = traj.times.last().copied().unwrap_or(0.0);
    Ok(BoundCheck {
        measured,
        predicted,
        horizon_sufficient: t_end >= 10.0 * n / cert.epsilon,
        pass: measured <= predicted * (1.0 + BOUND_REL_TOL),
    })
}

/// Per single-gain run: `min_{t,i} min(x̄^{(j)}_i − x̄_i, x̲_i − x̲^{(j)}_i)`.
pub fn dominance_margins(
    multi: &Trajectory,
    singles: &[Trajectory],
) -> Result<Vec<f64>, MetricsError> {
    if singles.is_empty() {
        return Err(MetricsError::Empty);
    }
    singles
        .iter()
        .map(|s| {
            if s.times != multi.times {
                return Err(MetricsError::GridMismatch);
            }
            let mut margin = f64::INFINITY;
            for k in 0..multi.len() {
                for i in 0..multi.n() {
                    margin = margin
                        .min(s.xbar[k][i] - multi.xbar[k][i])
                        .min(multi.xlower[k][i] - s.xlower[k][i]);
                }
            }
            Ok(margin)
        })
        .collect()
}

/// Smallest margin over all single-gain runs; `≥ −1e-6` means dominance holds.
pub fn dominance_check(multi: &Trajectory, singles: &[Trajectory]) -> Result<f64, MetricsError> {
    Ok(dominance_margins(multi, singles)?
        .into_iter()
        .fold(f64::INFINITY, f64::min))
}

/// Pointwise intersection of several frames: `(min_j x̄^{(j)}, max_j x̲^{(j)})`.
pub fn intersection(singles: &[Trajectory]) -> Result<(Vec<Vector>, Vec<Vector>), MetricsError> {
    let first = singles.first().ok_or(MetricsError::Empty)?;
    if singles.iter().any(|s| s.times != first.times) {
        return Err(MetricsError::GridMismatch);
    }
    let mut upper = first.xbar.clone();
    let mut lower = first.xlower.clone();
    for s in &singles[1..] {
        for k in 0..first.len() {
            upper[k] = Vector::raw(
                upper[k]
                    .iter()
                    .zip(s.xbar[k].iter())
                    .map(|(a, b)| a.min(*b))
                    .collect(),
            );
            lower[k] = Vector::raw(
                lower[k]
                    .iter()
                    .zip(s.xlower[k].iter())
                    .map(|(a, b)| a.max(*b))
                    .collect(),
            );
        }
    }
    Ok((upper, lower))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameMetrics {
    pub decay: Option<DecayCheck>,
    pub ultimate_bound: Option<BoundCheck>,
}

/// Summary written to `metrics.json`. The flat rate/bound fields refer to the
/// upper frame; `lower_frame` carries the same checks for the lower frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub status: SimStatus,
    pub samples: usize,
    pub max_framer_violation: f64,
    pub width_integral: Vec<f64>,
    pub lyapunov_decay_rate: Option<f64>,
    pub predicted_decay_rate: Option<f64>,
    pub ultimate_bound_measured: Option<f64>,
    pub ultimate_bound_predicted: Option<f64>,
    pub dominance_margin: Option<f64>,
    pub upper_frame: FrameMetrics,
    pub lower_frame: FrameMetrics,
    pub certificates: Option<CertificatePair>,
}

impl MetricsReport {
    /// Builds the report. Certificate-based checks need certificates in the
    /// same coordinates as the trajectory, so pass `None` for transformed runs.
    pub fn compute(
        traj: &Trajectory,
        envelope: &DisturbanceEnvelope,
        certificates: Option<&CertificatePair>,
    ) -> Result<Self, EvalError> {
        let zero_disturbance = is_zero_on(envelope, &traj.times)?;
        let frame = |cert: &Certificate, side: Family| -> Result<FrameMetrics, EvalError> {
            let decay = zero_disturbance.then(|| decay_rate_check(traj, cert, side));
            let ultimate_bound = Some(ultimate_bound_check(traj, cert, envelope, side)?);
            Ok(FrameMetrics {
                decay,
                ultimate_bound,
            })
        };
        let (upper_frame, lower_frame) = match certificates {
            Some(c) => (
                frame(&c.upper, Family::Upper)?,
                frame(&c.lower, Family::Lower)?,
            ),
            None => {
                let empty = FrameMetrics {
                    decay: None,
                    ultimate_bound: None,
                };
                (empty.clone(), empty)
            }
        };
        Ok(MetricsReport {
            status: traj.status,
            samples: traj.len(),
            max_framer_violation: framer_violation(traj),
            width_integral: width_integral(traj),
            lyapunov_decay_rate: upper_frame.decay.as_ref().and_then(|d| d.measured_rate),
            predicted_decay_rate: upper_frame.decay.as_ref().map(|d| d.predicted_rate),
            ultimate_bound_measured: upper_frame.ultimate_bound.as_ref().map(|b| b.measured),
            ultimate_bound_predicted: upper_frame.ultimate_bound.as_ref().map(|b| b.predicted),
            dominance_margin: None,
            upper_frame,
            lower_frame,
            certificates: certificates.cloned(),
        })
    }
}

fn is_zero_on(envelope: &DisturbanceEnvelope, times: &[f64]) -> Result<bool, EvalError> {
    if envelope.is_identically_zero() {
        return Ok(true);
    }
    for &t in times {
        for v in [
            envelope.eval_true(t)?,
            envelope.eval_upper(t)?,
            envelope.eval_lower(t)?,
        ] {
            if v.iter().any(|x| *x != 0.0) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
