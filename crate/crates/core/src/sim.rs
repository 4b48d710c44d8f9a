//! Fixed-step RK4 integration of the plant together with the observer.
//!
//! The plant, upper frame and lower frame are stacked into one `3n` state and
//! advanced by a single shared step, so the observer sees `y = Cx` from the
//! same stage value at every RK4 stage.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exprlang::EvalError;
use crate::model::{DisturbanceEnvelope, EnvelopeError, EnvelopeViolation, PlantModel, Scenario};
use crate::numkit::{Matrix, NumError, Vector};
use crate::observer::{
    error_rhs_oracle, map_frames_to_original, map_initial_frames, observer_rhs, q_lower, q_upper,
    transform_envelope, transform_plant, ActiveGains, GainSet, ObserverState,
};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Envelope(#[from] EnvelopeViolation),
    #[error("evaluation failed at t={t}: {source}")]
    Eval { t: f64, source: EvalError },
    #[error("coordinate transform: {0}")]
    Transform(#[from] NumError),
}

impl From<EnvelopeError> for SimError {
    fn from(e: EnvelopeError) -> Self {
        match e {
            EnvelopeError::Violation(v) => SimError::Envelope(v),
            EnvelopeError::Eval { t, source } => SimError::Eval { t, source },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub dt: f64,
    pub t_end: f64,
    pub record_stride: usize,
    pub divergence_threshold: f64,
}

impl SimParams {
    pub fn new(dt: f64, t_end: f64, record_stride: usize) -> Result<Self, SimError> {
        let p = SimParams {
            dt,
            t_end,
            record_stride,
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self, SimError> {
        self.divergence_threshold = threshold;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::Params(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(SimError::Params(format!(
                "t_end must be positive, got {}",
                self.t_end
            )));
        }
        if self.dt > self.t_end {
            return Err(SimError::Params(format!(
                "dt={} exceeds t_end={}",
                self.dt, self.t_end
            )));
        }
        if self.record_stride == 0 {
            return Err(SimError::Params("record_stride must be at least 1".into()));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(SimError::Params(
                "divergence_threshold must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// One classical RK4 step of `ẋ = f(t, x)`.
pub fn rk4_step<E>(
    mut f: impl FnMut(f64, &[f64]) -> Result<Vec<f64>, E>,
    t: f64,
    state: &[f64],
    dt: f64,
) -> Result<Vec<f64>, E> {
    let half = 0.5 * dt;
    let shifted =
        |k: &[f64], h: f64| -> Vec<f64> { state.iter().zip(k).map(|(x, k)| x + h * k).collect() };
    let k1 = f(t, state)?;
    let k2 = f(t + half, &shifted(&k1, half))?;
    let k3 = f(t + half, &shifted(&k2, half))?;
    let k4 = f(t + dt, &shifted(&k3, dt))?;
    Ok((0..state.len())
        .map(|i| state[i] + dt * ((k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SimStatus {
    Completed,
    Diverged { t_escape: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub x: Vec<Vector>,
    pub xbar: Vec<Vector>,
    pub xlower: Vec<Vector>,
    pub active: Vec<ActiveGains>,
    pub status: SimStatus,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n(&self) -> usize {
        self.x.first().map_or(0, |v| v.dim())
    }

    /// `x̄ − x` per sample.
    pub fn upper_errors(&self) -> Vec<Vector> {
        self.xbar
            .iter()
            .zip(&self.x)
            .map(|(b, x)| b.sub(x))
            .collect()
    }

    /// `x − x̲` per sample.
    pub fn lower_errors(&self) -> Vec<Vector> {
        self.x
            .iter()
            .zip(&self.xlower)
            .map(|(x, l)| x.sub(l))
            .collect()
    }
}

/// Direct integration of the error system, in observer coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTrajectory {
    pub times: Vec<f64>,
    pub x: Vec<Vector>,
    pub ebar: Vec<Vector>,
    pub elower: Vec<Vector>,
    pub status: SimStatus,
}

/// Observer-side view of the scenario: the plant and envelope in the
/// observer's coordinates plus the map back to `x`.
struct ObserverSetup {
    plant: PlantModel,
    envelope: DisturbanceEnvelope,
    back: Option<Matrix>,
    zbar0: Vector,
    zlower0: Vector,
}

impl ObserverSetup {
    fn new(scenario: &Scenario) -> Result<Self, SimError> {
        match &scenario.transform {
            None => Ok(ObserverSetup {
                plant: scenario.plant.clone(),
                envelope: scenario.envelope.clone(),
                back: None,
                zbar0: scenario.xbar0.clone(),
                zlower0: scenario.xlower0.clone(),
            }),
            Some(r) => {
                let (plant, s) = transform_plant(&scenario.plant, r)?;
                let envelope = transform_envelope(r, &scenario.envelope);
                let (zbar0, zlower0) = map_initial_frames(r, &scenario.xbar0, &scenario.xlower0);
                Ok(ObserverSetup {
                    plant,
                    envelope,
                    back: Some(s),
                    zbar0,
                    zlower0,
                })
            }
        }
    }

    fn to_original(&self, zbar: &[f64], zlower: &[f64]) -> (Vector, Vector) {
        match &self.back {
            None => (Vector::raw(zbar.to_vec()), Vector::raw(zlower.to_vec())),
            Some(s) => map_frames_to_original(s, zbar, zlower),
        }
    }
}

fn diverged(state: &[f64], threshold: f64) -> bool {
    state.iter().any(|v| !v.is_finite() || v.abs() > threshold)
}

/// Shared stepping loop. `record` is called at t = 0, every `record_stride`
/// steps, and on the diverging step.
fn integrate(
    scenario: &Scenario,
    initial: Vec<f64>,
    mut field: impl FnMut(f64, &[f64]) -> Result<Vec<f64>, EvalError>,
    mut record: impl FnMut(f64, &[f64]),
) -> Result<SimStatus, SimError> {
    let params = &scenario.sim;
    params.validate()?;
    let steps = params.steps();
    let mut state = initial;
    record(0.0, &state);
    for k in 0..steps {
        let t = k as f64 * params.dt;
        scenario.envelope.check(t)?;
        state = rk4_step(&mut field, t, &state, params.dt)
            .map_err(|source| SimError::Eval { t, source })?;
        let t_next = (k + 1) as f64 * params.dt;
        if diverged(&state, params.divergence_threshold) {
            record(t_next, &state);
            return Ok(SimStatus::Diverged { t_escape: t_next });
        }
        if (k + 1) % params.record_stride == 0 {
            record(t_next, &state);
        }
    }
    scenario.envelope.check(steps as f64 * params.dt)?;
    Ok(SimStatus::Completed)
}

/// Runs the plant with the observer described by `scenario`.
///
/// Gain hypotheses are not re-checked here; callers validate first.
pub fn simulate(scenario: &Scenario) -> Result<Trajectory, SimError> {
    let setup = ObserverSetup::new(scenario)?;
    let plant = &scenario.plant;
    let n = plant.n();
    let gains: &GainSet = &scenario.gains;

    let field = |t: f64, s: &[f64]| -> Result<Vec<f64>, EvalError> {
        let x = &s[..n];
        let u = plant.eval_u(t)?;
        let y = plant.output(x);
        let dx = plant.rhs(&scenario.envelope, t, x, &u)?;
        let obs = ObserverState {
            xbar: Vector::raw(s[n..2 * n].to_vec()),
            xlower: Vector::raw(s[2 * n..].to_vec()),
        };
        let d = observer_rhs(&setup.plant, &setup.envelope, gains, t, &obs, &y, &u)?;
        let mut out = dx.into_inner();
        out.extend_from_slice(&d.d_xbar);
        out.extend_from_slice(&d.d_xlower);
        Ok(out)
    };

    let mut traj = Trajectory {
        times: Vec::new(),
        x: Vec::new(),
        xbar: Vec::new(),
        xlower: Vec::new(),
        active: Vec::new(),
        status: SimStatus::Completed,
    };
    let record = |t: f64, s: &[f64]| {
        let x = &s[..n];
        let (zbar, zlower) = (&s[n..2 * n], &s[2 * n..]);
        let y = plant.output(x);
        let (_, upper_idx) = q_upper(gains, setup.plant.c(), zbar, &y);
        let (_, lower_idx) = q_lower(gains, setup.plant.c(), zlower, &y);
        let (xbar, xlower) = setup.to_original(zbar, zlower);
        traj.times.push(t);
        traj.x.push(Vector::raw(x.to_vec()));
        traj.xbar.push(xbar);
        traj.xlower.push(xlower);
        traj.active.push(ActiveGains {
            upper_idx,
            lower_idx,
        });
    };

    let mut initial = scenario.x0.to_vec();
    initial.extend_from_slice(&setup.zbar0);
    initial.extend_from_slice(&setup.zlower0);
    let status = integrate(scenario, initial, field, record)?;
    traj.status = status;
    Ok(traj)
}

/// Integrates `(x, ē, e̲)` with the error dynamics directly, `y = Cx` taken
/// from the co-integrated plant. Errors are in observer coordinates.
pub fn simulate_error_oracle(scenario: &Scenario) -> Result<ErrorTrajectory, SimError> {
    let setup = ObserverSetup::new(scenario)?;
    let plant = &scenario.plant;
    let n = plant.n();
    let gains = &scenario.gains;

    let field = |t: f64, s: &[f64]| -> Result<Vec<f64>, EvalError> {
        let x = &s[..n];
        let u = plant.eval_u(t)?;
        let y = plant.output(x);
        let dx = plant.rhs(&scenario.envelope, t, x, &u)?;
        let (de, dl) = error_rhs_oracle(
            &setup.plant,
            &setup.envelope,
            gains,
            t,
            &s[n..2 * n],
            &s[2 * n..],
            &y,
        )?;
        let mut out = dx.into_inner();
        out.extend_from_slice(&de);
        out.extend_from_slice(&dl);
        Ok(out)
    };

    let mut out = ErrorTrajectory {
        times: Vec::new(),
        x: Vec::new(),
        ebar: Vec::new(),
        elower: Vec::new(),
        status: SimStatus::Completed,
    };
    let record = |t: f64, s: &[f64]| {
        out.times.push(t);
        out.x.push(Vector::raw(s[..n].to_vec()));
        out.ebar.push(Vector::raw(s[n..2 * n].to_vec()));
        out.elower.push(Vector::raw(s[2 * n..].to_vec()));
    };

    let x0 = &scenario.x0;
    let z0 = match &scenario.transform {
        Some(r) => r.mul_vec(x0),
        None => x0.clone(),
    };
    let mut initial = x0.to_vec();
    initial.extend(setup.zbar0.sub(&z0).iter());
    initial.extend(z0.sub(&setup.zlower0).iter());
    let status = integrate(scenario, initial, field, record)?;
    out.status = status;
    Ok(out)
}

/// Largest sup-norm gap between errors from a joint run and from the oracle.
pub fn oracle_deviation(traj: &Trajectory, oracle: &ErrorTrajectory) -> Option<f64> {
    if traj.times != oracle.times {
        return None;
    }
    let up = traj.upper_errors();
    let lo = traj.lower_errors();
    let mut worst = 0.0_f64;
    for k in 0..traj.len() {
        worst = worst.max(up[k].sub(&oracle.ebar[k]).norm_inf());
        worst = worst.max(lo[k].sub(&oracle.elower[k]).norm_inf());
    }
    Some(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(f: impl Fn(f64, f64) -> f64) -> impl FnMut(f64, &[f64]) -> Result<Vec<f64>, ()> {
        move |t, x| Ok(vec![f(t, x[0])])
    }

    #[test]
    fn rk4_matches_exponential() {
        let x = rk4_step(scalar(|_, x| -x), 0.0, &[1.0], 0.1).unwrap();
        assert!((x[0] - (-0.1_f64).exp()).abs() < 1e-7);
        assert!((x[0] - 0.9048375).abs() < 1e-7);
    }

    #[test]
    fn rk4_trivial_fields() {
        let x = rk4_step(scalar(|_, _| 0.0), 0.0, &[3.25], 0.1).unwrap();
        assert_eq!(x, vec![3.25]);
        for dt in [0.1, 1e-3, 0.7] {
            let x = rk4_step(scalar(|_, _| 1.0), 0.0, &[2.0], dt).unwrap();
            assert_eq!(x, vec![2.0 + dt]);
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        // global error on [0, 1] for ẋ = -x + sin t scales like dt^4
        let exact = |t: f64| 1.5 * (-t).exp() + 0.5 * (t.sin() - t.cos());
        let err = |steps: usize| {
            let dt = 1.0 / steps as f64;
            let mut x = vec![1.0];
            for k in 0..steps {
                x = rk4_step(scalar(|t, x| -x + t.sin()), k as f64 * dt, &x, dt).unwrap();
            }
            (x[0] - exact(1.0)).abs()
        };
        let ratio = err(10) / err(20);
        assert!(ratio > 14.0 && ratio < 18.0, "ratio {ratio}");
    }

    #[test]
    fn rk4_propagates_errors() {
        let r: Result<Vec<f64>, &str> = rk4_step(|_, _| Err("boom"), 0.0, &[1.0], 0.1);
        assert_eq!(r, Err("boom"));
    }

    #[test]
    fn params_validation() {
        assert!(SimParams::new(0.0, 1.0, 1).is_err());
        assert!(SimParams::new(2.0, 1.0, 1).is_err());
        assert!(SimParams::new(0.1, 1.0, 0).is_err());
        assert!(SimParams::new(0.1, 1.0, 1)
            .unwrap()
            .with_threshold(-1.0)
            .is_err());
        assert_eq!(SimParams::new(1e-3, 20.0, 1).unwrap().steps(), 20_000);
    }
}
