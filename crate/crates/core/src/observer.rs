//! Multi-gain interval observer.
//!
//! Upper frame: `ẋ̄ = A(y)x̄ + Q̄(x̄,y) + β(y,u) + δ̄`, with
//! `Q̄_i = min_k [L̄_k]_i (Cx̄ − y)`; the lower frame uses `max` and `δ̲`.
//! With a single gain this is the classic Luenberger-type interval observer.
//! The observer reads only `(t, y, u)` from the plant.

use serde::Serialize;
use thiserror::Error;

use crate::exprlang::{BinOp, Expr};
use crate::model::{DisturbanceEnvelope, ModelError, OutputTerm, PlantModel};
use crate::numkit::{
    dot, hurwitz_metzler_certificate, metzler_violations, positive_split, Certificate, Matrix,
    NumError, Vector,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GainError {
    #[error("a gain set needs at least one gain")]
    Empty,
    #[error("upper and lower gain lists differ in length ({upper} vs {lower})")]
    Unpaired { upper: usize, lower: usize },
}

/// `φ` upper gains `L̄_k` and `φ` lower gains `L̲_k`, each `n×p`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    upper: Vec<Matrix>,
    lower: Vec<Matrix>,
}

impl GainSet {
    pub fn new(upper: Vec<Matrix>, lower: Vec<Matrix>) -> Result<Self, GainError> {
        if upper.is_empty() {
            return Err(GainError::Empty);
        }
        if upper.len() != lower.len() {
            return Err(GainError::Unpaired {
                upper: upper.len(),
                lower: lower.len(),
            });
        }
        Ok(GainSet { upper, lower })
    }

    /// Same matrices for both frames.
    pub fn symmetric(gains: Vec<Matrix>) -> Result<Self, GainError> {
        GainSet::new(gains.clone(), gains)
    }

    pub fn phi(&self) -> usize {
        self.upper.len()
    }

    pub fn upper(&self) -> &[Matrix] {
        &self.upper
    }

    pub fn lower(&self) -> &[Matrix] {
        &self.lower
    }

    /// The `k`-th (1-based) upper/lower pair as a single-gain set.
    pub fn single(&self, k: usize) -> GainSet {
        GainSet {
            upper: vec![self.upper[k - 1].clone()],
            lower: vec![self.lower[k - 1].clone()],
        }
    }

    pub fn check_dims(&self, n: usize, p: usize) -> Result<(), ModelError> {
        for (family, list) in [("upper", &self.upper), ("lower", &self.lower)] {
            for (k, g) in list.iter().enumerate() {
                if g.shape() != (n, p) {
                    return Err(ModelError::Shape {
                        what: format!("gains.{family}[{k}]"),
                        expected: (n, p),
                        got: g.shape(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    pub xbar: Vector,
    pub xlower: Vector,
}

/// Per-row index (1-based) of the gain attaining the min (upper) or max (lower).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveGains {
    pub upper_idx: Vec<usize>,
    pub lower_idx: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverDerivative {
    pub d_xbar: Vector,
    pub d_xlower: Vector,
    pub active: ActiveGains,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Upper,
    Lower,
}

fn select_rows(gains: &[Matrix], residual: &[f64], take_min: bool) -> (Vector, Vec<usize>) {
    let n = gains[0].rows();
    let mut values = Vec::with_capacity(n);
    let mut idx = Vec::with_capacity(n);
    for i in 0..n {
        let mut best = dot(gains[0].row(i), residual);
        let mut best_k = 1;
        for (k, g) in gains.iter().enumerate().skip(1) {
            let v = dot(g.row(i), residual);
            // strict comparison keeps the smallest index on ties
            if (take_min && v < best) || (!take_min && v > best) {
                best = v;
                best_k = k + 1;
            }
        }
        values.push(best);
        idx.push(best_k);
    }
    (Vector::raw(values), idx)
}

/// `Q̄_i = min_k [L̄_k]_i (C x̄ − y)` with the argmin per row.
pub fn q_upper(gains: &GainSet, c: &Matrix, xbar: &[f64], y: &[f64]) -> (Vector, Vec<usize>) {
    let residual = c.mul_vec(xbar).sub(y);
    select_rows(&gains.upper, &residual, true)
}

/// `Q̲_i = max_k [L̲_k]_i (C x̲ − y)` with the argmax per row.
pub fn q_lower(gains: &GainSet, c: &Matrix, xlower: &[f64], y: &[f64]) -> (Vector, Vec<usize>) {
    let residual = c.mul_vec(xlower).sub(y);
    select_rows(&gains.lower, &residual, false)
}

/// Observer vector field for both frames.
pub fn observer_rhs(
    plant: &PlantModel,
    envelope: &DisturbanceEnvelope,
    gains: &GainSet,
    t: f64,
    state: &ObserverState,
    y: &[f64],
    u: &[f64],
) -> Result<ObserverDerivative, crate::exprlang::EvalError> {
    let beta = plant.eval_beta(t, y, u)?;
    let hi = envelope.eval_upper(t)?;
    let lo = envelope.eval_lower(t)?;
    let (qu, upper_idx) = q_upper(gains, plant.c(), &state.xbar, y);
    let (ql, lower_idx) = q_lower(gains, plant.c(), &state.xlower, y);
    let a_up = plant.apply_a(y, &state.xbar);
    let a_lo = plant.apply_a(y, &state.xlower);
    let n = plant.n();
    let d_xbar = (0..n).map(|i| a_up[i] + qu[i] + beta[i] + hi[i]).collect();
    let d_xlower = (0..n).map(|i| a_lo[i] + ql[i] + beta[i] + lo[i]).collect();
    Ok(ObserverDerivative {
        d_xbar: Vector::raw(d_xbar),
        d_xlower: Vector::raw(d_xlower),
        active: ActiveGains {
            upper_idx,
            lower_idx,
        },
    })
}

/// Closed-loop matrices `A(y) + L_k C` for one family.
pub fn closed_loop(plant: &PlantModel, gains: &[Matrix], y: &[f64]) -> Vec<Matrix> {
    let a = plant.eval_a(y);
    gains.iter().map(|l| a.add(&l.matmul(plant.c()))).collect()
}

fn min_rows(mats: &[Matrix], e: &[f64]) -> Vec<f64> {
    (0..mats[0].rows())
        .map(|i| {
            mats.iter()
                .map(|m| dot(m.row(i), e))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Error dynamics written directly in `ē = x̄ − x`, `e̲ = x − x̲`:
/// `ė̄_i = min_k [A(y)+L̄_kC]_i ē + δ̄_i − δ_i` and
/// `ė̲_i = min_k [A(y)+L̲_kC]_i e̲ + δ_i − δ̲_i`.
///
/// Shares no code path with [`observer_rhs`]; used as a cross-check.
pub fn error_rhs_oracle(
    plant: &PlantModel,
    envelope: &DisturbanceEnvelope,
    gains: &GainSet,
    t: f64,
    ebar: &[f64],
    elower: &[f64],
    y: &[f64],
) -> Result<(Vector, Vector), crate::exprlang::EvalError> {
    let delta = envelope.eval_true(t)?;
    let hi = envelope.eval_upper(t)?;
    let lo = envelope.eval_lower(t)?;
    let up = min_rows(&closed_loop(plant, gains.upper(), y), ebar);
    let dn = min_rows(&closed_loop(plant, gains.lower(), y), elower);
    let n = plant.n();
    let d_ebar = (0..n).map(|i| up[i] + (hi[i] - delta[i])).collect();
    let d_elower = (0..n).map(|i| dn[i] + (delta[i] - lo[i])).collect();
    Ok((Vector::raw(d_ebar), Vector::raw(d_elower)))
}

/// How strongly a property was established.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verification {
    /// Holds for every output value.
    Proven,
    /// Checked only at the supplied output samples.
    SampledNotProven,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetzlerViolation {
    pub family: Family,
    /// 1-based gain index.
    pub gain: usize,
    /// 1-based row and column of the negative off-diagonal entry.
    pub row: usize,
    pub col: usize,
    pub value: f64,
    /// Output sample at which it was found (`None` for the constant part).
    pub omega: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainCheck {
    pub family: Family,
    pub gain: usize,
    pub metzler: bool,
    pub certificate: Option<Certificate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificatePair {
    pub upper: Certificate,
    pub lower: Certificate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainReport {
    pub metzler_verification: Verification,
    pub certificate_verification: Verification,
    pub checks: Vec<GainCheck>,
    /// First feasible certificate in each family.
    pub first_feasible: CertificatePair,
    /// Largest-rate certificate in each family, used for bound predictions.
    pub best: CertificatePair,
}

impl GainReport {
    pub fn certificates(&self, family: Family) -> impl Iterator<Item = &Certificate> {
        self.checks
            .iter()
            .filter(move |c| c.family == family)
            .filter_map(|c| c.certificate.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[error("gain validation failed: {} Metzler violation(s), missing certificate for {:?}", metzler.len(), missing_certificate)]
pub struct ValidationFailure {
    pub metzler: Vec<MetzlerViolation>,
    pub missing_certificate: Vec<Family>,
    pub checks: Vec<GainCheck>,
}

/// Checks the Metzler hypothesis for every gain of both families and looks
/// for a Hurwitz certificate per gain.
///
/// With constant `A`, or when every `A_j` has zero off-diagonals, the
/// Metzler check is exact. Otherwise it is only checked at `omega_samples`.
/// Certificates are computed on the constant part (`y = 0`) and, for
/// output-dependent `A`, re-checked at every sample.
pub fn validate_gains(
    plant: &PlantModel,
    gains: &GainSet,
    omega_samples: &[Vec<f64>],
) -> Result<GainReport, ValidationFailure> {
    let p = plant.p();
    let zero = vec![0.0; p];
    let structural = plant.a_terms().iter().all(|t| off_diagonal_zero(&t.matrix));
    let metzler_verification = if structural {
        Verification::Proven
    } else {
        Verification::SampledNotProven
    };
    let certificate_verification = if plant.is_constant_a() {
        Verification::Proven
    } else {
        Verification::SampledNotProven
    };

    let mut violations = Vec::new();
    let mut checks = Vec::new();
    let mut first: [Option<Certificate>; 2] = [None, None];
    let mut best: [Option<Certificate>; 2] = [None, None];

    for (slot, (family, list)) in [
        (Family::Upper, gains.upper()),
        (Family::Lower, gains.lower()),
    ]
    .into_iter()
    .enumerate()
    {
        let base = closed_loop(plant, list, &zero);
        let sampled: Vec<(Vec<f64>, Vec<Matrix>)> = if plant.is_constant_a() {
            Vec::new()
        } else {
            omega_samples
                .iter()
                .map(|w| (w.clone(), closed_loop(plant, list, w)))
                .collect()
        };
        for (k, m) in base.iter().enumerate() {
            let mut ok = true;
            for (row, col, value) in metzler_violations(m).expect("closed loop is square") {
                ok = false;
                violations.push(MetzlerViolation {
                    family,
                    gain: k + 1,
                    row: row + 1,
                    col: col + 1,
                    value,
                    omega: None,
                });
            }
            if !structural {
                for (w, mats) in &sampled {
                    for (row, col, value) in
                        metzler_violations(&mats[k]).expect("closed loop is square")
                    {
                        ok = false;
                        violations.push(MetzlerViolation {
                            family,
                            gain: k + 1,
                            row: row + 1,
                            col: col + 1,
                            value,
                            omega: Some(w.clone()),
                        });
                    }
                }
            }
            let certificate = if ok {
                hurwitz_metzler_certificate(m, k + 1)
                    .expect("closed loop is square")
                    .into_certificate()
                    .and_then(|c| {
                        if sampled.is_empty() {
                            Some(c)
                        } else {
                            c.restrict_to(sampled.iter().map(|(_, mats)| &mats[k]))
                        }
                    })
            } else {
                None
            };
            if let Some(c) = &certificate {
                if first[slot].is_none() {
                    first[slot] = Some(c.clone());
                }
                if best[slot].as_ref().is_none_or(|b| c.epsilon > b.epsilon) {
                    best[slot] = Some(c.clone());
                }
            }
            checks.push(GainCheck {
                family,
                gain: k + 1,
                metzler: ok,
                certificate,
            });
        }
    }

    let missing_certificate: Vec<Family> = [Family::Upper, Family::Lower]
        .into_iter()
        .enumerate()
        .filter(|(slot, _)| first[*slot].is_none())
        .map(|(_, f)| f)
        .collect();
    if !violations.is_empty() || !missing_certificate.is_empty() {
        return Err(ValidationFailure {
            metzler: violations,
            missing_certificate,
            checks,
        });
    }
    let [fu, fl] = first;
    let [bu, bl] = best;
    Ok(GainReport {
        metzler_verification,
        certificate_verification,
        checks,
        first_feasible: CertificatePair {
            upper: fu.expect("checked"),
            lower: fl.expect("checked"),
        },
        best: CertificatePair {
            upper: bu.expect("checked"),
            lower: bl.expect("checked"),
        },
    })
}

fn off_diagonal_zero(m: &Matrix) -> bool {
    (0..m.rows()).all(|i| (0..m.cols()).all(|j| i == j || m.get(i, j) == 0.0))
}

/// Output samples for sampled Metzler checks: the origin and `±s·e_j`
/// for `s ∈ {1, 10, 100}`.
pub fn default_omega_samples(p: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; p]];
    for j in 0..p {
        for s in [1.0, 10.0, 100.0] {
            for sign in [1.0, -1.0] {
                let mut w = vec![0.0; p];
                w[j] = sign * s;
                out.push(w);
            }
        }
    }
    out
}

/// Frames in `z = Rx` mapped back with `S = R⁻¹`:
/// `x̄ = S⁺z̄ − S⁻z̲`, `x̲ = S⁺z̲ − S⁻z̄`.
pub fn map_frames_to_original(s: &Matrix, zbar: &[f64], zlower: &[f64]) -> (Vector, Vector) {
    let (sp, sm) = positive_split(s);
    let xbar = sp.mul_vec(zbar).sub(&sm.mul_vec(zlower));
    let xlower = sp.mul_vec(zlower).sub(&sm.mul_vec(zbar));
    (xbar, xlower)
}

/// Initial frames in `z = Rx`: `z̄ = R⁺x̄ − R⁻x̲`, `z̲ = R⁺x̲ − R⁻x̄`.
pub fn map_initial_frames(r: &Matrix, xbar0: &[f64], xlower0: &[f64]) -> (Vector, Vector) {
    map_frames_to_original(r, xbar0, xlower0)
}

/// `Σ_j coeffs_j · exprs_j` as an expression tree, skipping zero coefficients.
fn linear_combination(coeffs: &[f64], exprs: &[Expr]) -> Option<Expr> {
    coeffs
        .iter()
        .zip(exprs)
        .filter(|(c, _)| **c != 0.0)
        .map(|(&c, e)| {
            if c == 1.0 {
                e.clone()
            } else {
                Expr::bin(BinOp::Mul, Expr::Num(c), e.clone())
            }
        })
        .reduce(|acc, term| Expr::bin(BinOp::Add, acc, term))
}

fn split_combination(plus: &[f64], first: &[Expr], minus: &[f64], second: &[Expr]) -> Expr {
    match (
        linear_combination(plus, first),
        linear_combination(minus, second),
    ) {
        (Some(a), Some(b)) => Expr::bin(BinOp::Sub, a, b),
        (Some(a), None) => a,
        (None, Some(b)) => Expr::Neg(Box::new(b)),
        (None, None) => Expr::Num(0.0),
    }
}

/// Disturbance bounds in `z = Rx`: `R⁺δ̄ − R⁻δ̲` and `R⁺δ̲ − R⁻δ̄`.
pub fn transform_disturbance_bounds(
    r: &Matrix,
    upper: &[Expr],
    lower: &[Expr],
) -> (Vec<Expr>, Vec<Expr>) {
    let (rp, rm) = positive_split(r);
    let n = r.rows();
    let hi = (0..n)
        .map(|i| split_combination(rp.row(i), upper, rm.row(i), lower))
        .collect();
    let lo = (0..n)
        .map(|i| split_combination(rp.row(i), lower, rm.row(i), upper))
        .collect();
    (hi, lo)
}

/// Envelope in `z = Rx`; the true signal becomes `Rδ`.
pub fn transform_envelope(r: &Matrix, envelope: &DisturbanceEnvelope) -> DisturbanceEnvelope {
    let (hi, lo) = transform_disturbance_bounds(r, envelope.upper(), envelope.lower());
    let delta = (0..r.rows())
        .map(|i| linear_combination(r.row(i), envelope.delta()).unwrap_or(Expr::Num(0.0)))
        .collect();
    DisturbanceEnvelope::new(delta, hi, lo).expect("transformed envelope keeps dims and scope")
}

/// The plant seen by an observer in `z = Rx`: `A_z = R A S`, `C_z = C S`,
/// `β_z = R β`. Returns the model together with `S = R⁻¹`.
pub fn transform_plant(plant: &PlantModel, r: &Matrix) -> Result<(PlantModel, Matrix), NumError> {
    let s = r.inverse()?;
    let a_const = r.matmul(plant.a_const()).matmul(&s);
    let a_terms = plant
        .a_terms()
        .iter()
        .map(|t| OutputTerm {
            output: t.output,
            matrix: r.matmul(&t.matrix).matmul(&s),
        })
        .collect();
    let beta = (0..r.rows())
        .map(|i| linear_combination(r.row(i), plant.beta()).unwrap_or(Expr::Num(0.0)))
        .collect();
    let c = plant.c().matmul(&s);
    let model = PlantModel::new(c, a_const, a_terms, beta, plant.u_signal().to_vec())
        .expect("transformed plant keeps dims and scope");
    Ok((model, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprlang::{parse, EvalContext};

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn exprs(src: &[&str]) -> Vec<Expr> {
        src.iter().map(|s| parse(s).unwrap()).collect()
    }

    fn scalar_gains() -> GainSet {
        GainSet::symmetric(vec![mat(&[&[-1.0]]), mat(&[&[-2.0]])]).unwrap()
    }

    fn example_plant() -> PlantModel {
        PlantModel::new(
            mat(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]),
            mat(&[&[-1.0, 0.5, 0.0], &[1.0, -1.0, 0.8], &[0.3, 1.0, -4.0]]),
            vec![],
            exprs(&["0", "y2^2 - 0.2*y2^3", "0"]),
            exprs(&["0"]),
        )
        .unwrap()
    }

    fn example_envelope() -> DisturbanceEnvelope {
        DisturbanceEnvelope::new(
            exprs(&["2*cos(t)/(1+t)", "4*sin(t)/(1+t)", "-4*cos(t)/(1+t)"]),
            exprs(&["2/(1+t)", "4/(1+t)", "4/(1+t)"]),
            exprs(&["-2/(1+t)", "-4/(1+t)", "-4/(1+t)"]),
        )
        .unwrap()
    }

    fn example_gains() -> GainSet {
        GainSet::symmetric(vec![
            mat(&[&[-1.0, 0.0], &[0.0, -1.0], &[-0.3, -0.3]]),
            mat(&[&[-0.5, -0.5], &[-1.0, 0.0], &[0.0, 0.2]]),
            mat(&[&[0.0, -0.5], &[0.0, 0.0], &[0.5, -1.0]]),
        ])
        .unwrap()
    }

    #[test]
    fn gain_set_invariants() {
        assert_eq!(GainSet::new(vec![], vec![]), Err(GainError::Empty));
        assert!(matches!(
            GainSet::new(vec![mat(&[&[1.0]])], vec![]),
            Err(GainError::Unpaired { upper: 1, lower: 0 })
        ));
    }

    #[test]
    fn q_upper_switches_with_residual_sign() {
        let g = scalar_gains();
        let c = Matrix::identity(1);
        let (q, idx) = q_upper(&g, &c, &[2.0], &[1.0]);
        assert_eq!((q.as_slice(), idx.as_slice()), (&[-2.0][..], &[2][..]));
        let (q, idx) = q_upper(&g, &c, &[0.0], &[1.0]);
        assert_eq!((q.as_slice(), idx.as_slice()), (&[1.0][..], &[1][..]));
    }

    #[test]
    fn q_lower_examples() {
        let g = scalar_gains();
        let c = Matrix::identity(1);
        let (q, idx) = q_lower(&g, &c, &[0.0], &[1.0]);
        assert_eq!((q.as_slice(), idx.as_slice()), (&[2.0][..], &[2][..]));
        let (q, idx) = q_lower(&g, &c, &[2.0], &[1.0]);
        assert_eq!((q.as_slice(), idx.as_slice()), (&[-1.0][..], &[1][..]));
    }

    #[test]
    fn single_gain_q_is_linear() {
        let g = example_gains().single(2);
        let c = example_plant().c().clone();
        let (xbar, y) = ([4.0, 5.0, 5.0], [2.0, 3.0]);
        let (q, idx) = q_upper(&g, &c, &xbar, &y);
        let direct = g.upper()[0].mul_vec(&c.mul_vec(&xbar).sub(&y));
        assert_eq!(q, direct);
        assert_eq!(idx, vec![1, 1, 1]);
    }

    #[test]
    fn ties_resolve_to_smallest_index() {
        let g = GainSet::symmetric(vec![mat(&[&[-1.0]]), mat(&[&[-1.0]])]).unwrap();
        let (_, idx) = q_upper(&g, &Matrix::identity(1), &[3.0], &[1.0]);
        assert_eq!(idx, vec![1]);
        let (_, idx) = q_lower(&g, &Matrix::identity(1), &[3.0], &[1.0]);
        assert_eq!(idx, vec![1]);
    }

    #[test]
    fn zero_error_fixed_point() {
        let plant = example_plant();
        let env = DisturbanceEnvelope::new(
            exprs(&["0", "0", "0"]),
            exprs(&["0", "0", "0"]),
            exprs(&["0", "0", "0"]),
        )
        .unwrap();
        let x = [2.0, 3.0, 3.0];
        let y = plant.output(&x);
        let state = ObserverState {
            xbar: Vector::new(x.to_vec()).unwrap(),
            xlower: Vector::new(x.to_vec()).unwrap(),
        };
        let d = observer_rhs(&plant, &env, &example_gains(), 0.7, &state, &y, &[0.0]).unwrap();
        let f = plant.rhs(&env, 0.7, &x, &[0.0]).unwrap();
        assert_eq!(d.d_xbar, f);
        assert_eq!(d.d_xlower, f);
    }

    #[test]
    fn example_rhs_at_initial_time() {
        // residual (Cx̄ − y) = [2,2] and (Cx̲ − y) = [−2,−2]; gain 1 is active in every row
        let plant = example_plant();
        let state = ObserverState {
            xbar: Vector::new(vec![4.0, 5.0, 5.0]).unwrap(),
            xlower: Vector::new(vec![0.0, 1.0, 1.0]).unwrap(),
        };
        let d = observer_rhs(
            &plant,
            &example_envelope(),
            &example_gains(),
            0.0,
            &state,
            &[2.0, 3.0],
            &[0.0],
        )
        .unwrap();
        let up = [-1.5, 8.6, -11.0];
        let lo = [0.5, 1.4, -5.8];
        for i in 0..3 {
            assert!((d.d_xbar[i] - up[i]).abs() < 1e-13, "{:?}", d.d_xbar);
            assert!((d.d_xlower[i] - lo[i]).abs() < 1e-13, "{:?}", d.d_xlower);
        }
        assert_eq!(d.active.upper_idx, vec![1, 1, 1]);
        assert_eq!(d.active.lower_idx, vec![1, 1, 1]);
    }

    #[test]
    fn error_oracle_examples() {
        let plant = example_plant();
        let env = example_envelope();
        let g = example_gains();
        // ē = 0 → gap δ̄ − δ at t = 0 is [0, 4, 8]
        let (d, _) =
            error_rhs_oracle(&plant, &env, &g, 0.0, &[0.0; 3], &[0.0; 3], &[2.0, 3.0]).unwrap();
        assert_eq!(d.as_slice(), &[0.0, 4.0, 8.0]);
        // ē = 𝟙: row-wise min of the closed-loop row sums is [−1.5, −0.2, −3.3]
        let (du, dl) =
            error_rhs_oracle(&plant, &env, &g, 0.0, &[1.0; 3], &[1.0; 3], &[2.0, 3.0]).unwrap();
        let eu = [-1.5, 3.8, 4.7];
        let el = [2.5, 3.8, -3.3];
        for i in 0..3 {
            assert!((du[i] - eu[i]).abs() < 1e-13);
            assert!((dl[i] - el[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn error_oracle_boundary_rows_are_nonnegative() {
        let plant = example_plant();
        let zero = DisturbanceEnvelope::zero(3);
        let g = example_gains();
        for e in [[0.0, 1.0, 2.0], [3.0, 0.0, 0.5], [1.0, 1.0, 0.0]] {
            let (d, _) = error_rhs_oracle(&plant, &zero, &g, 0.0, &e, &e, &[0.0, 0.0]).unwrap();
            for i in 0..3 {
                if e[i] == 0.0 {
                    assert!(d[i] >= 0.0);
                }
            }
        }
    }

    #[test]
    fn validate_example_gains() {
        let report = validate_gains(&example_plant(), &example_gains(), &[]).unwrap();
        assert_eq!(report.metzler_verification, Verification::Proven);
        assert_eq!(report.certificates(Family::Upper).count(), 3);
        assert_eq!(report.certificates(Family::Lower).count(), 3);
        assert_eq!(report.first_feasible.upper.gain_index, 1);
        // canonical certificate rates: 0.947 (G1), 0.613 (G2), 0.424 (G3)
        assert_eq!(report.best.upper.gain_index, 1);
        assert!((report.best.upper.epsilon - 0.947_058_823_529_411_7).abs() < 1e-9);
    }

    #[test]
    fn validate_names_planted_violation() {
        let mut bad = mat(&[&[0.0, -0.5], &[0.0, 0.0], &[0.5, -1.0]]);
        bad.set(0, 0, 0.0);
        bad.set(2, 1, -1.1); // (3,2) entry of A + G C becomes 1.0 − 1.1 = −0.1
        let gains = GainSet::symmetric(vec![example_gains().upper()[0].clone(), bad]).unwrap();
        let err = validate_gains(&example_plant(), &gains, &[]).unwrap_err();
        assert_eq!(err.metzler.len(), 2);
        let v = &err.metzler[0];
        assert_eq!((v.family, v.gain, v.row, v.col), (Family::Upper, 2, 3, 2));
        assert!((v.value + 0.1).abs() < 1e-12);
    }

    #[test]
    fn validate_stable_scalar() {
        let plant = PlantModel::new(
            Matrix::identity(1),
            mat(&[&[-1.0]]),
            vec![],
            exprs(&["0"]),
            vec![],
        )
        .unwrap();
        let g = GainSet::symmetric(vec![mat(&[&[0.0]])]).unwrap();
        let r = validate_gains(&plant, &g, &[]).unwrap();
        assert!((r.best.lower.epsilon - 1.0).abs() < 1e-12);
    }

    #[test]
    fn validate_reports_unstable_family() {
        let plant = PlantModel::new(
            Matrix::identity(1),
            mat(&[&[1.0]]),
            vec![],
            exprs(&["0"]),
            vec![],
        )
        .unwrap();
        let g = GainSet::new(vec![mat(&[&[-2.0]])], vec![mat(&[&[0.0]])]).unwrap();
        let err = validate_gains(&plant, &g, &[]).unwrap_err();
        assert!(err.metzler.is_empty());
        assert_eq!(err.missing_certificate, vec![Family::Lower]);
    }

    #[test]
    fn validate_output_dependent_a() {
        // diagonal-only y-term: Metzler is structural, certificate only sampled
        let plant = PlantModel::new(
            Matrix::identity(2),
            mat(&[&[-2.0, 0.5], &[0.5, -2.0]]),
            vec![OutputTerm {
                output: 0,
                matrix: mat(&[&[0.001, 0.0], &[0.0, 0.001]]),
            }],
            exprs(&["0", "0"]),
            vec![],
        )
        .unwrap();
        let g = GainSet::symmetric(vec![Matrix::zeros(2, 2)]).unwrap();
        let r = validate_gains(&plant, &g, &default_omega_samples(2)).unwrap();
        assert_eq!(r.metzler_verification, Verification::Proven);
        assert_eq!(r.certificate_verification, Verification::SampledNotProven);

        // off-diagonal y-term: violated at y1 = -100
        let plant = PlantModel::new(
            Matrix::identity(2),
            mat(&[&[-2.0, 0.5], &[0.5, -2.0]]),
            vec![OutputTerm {
                output: 0,
                matrix: mat(&[&[0.0, 0.01], &[0.0, 0.0]]),
            }],
            exprs(&["0", "0"]),
            vec![],
        )
        .unwrap();
        let err = validate_gains(&plant, &g, &default_omega_samples(2)).unwrap_err();
        assert!(err
            .metzler
            .iter()
            .all(|v| v.omega.as_ref().is_some_and(|w| w[0] == -100.0)));
    }

    #[test]
    fn frame_mapping_examples() {
        let (xb, xl) = map_frames_to_original(&Matrix::identity(2), &[1.0, 2.0], &[0.0, -1.0]);
        assert_eq!(
            (xb.as_slice(), xl.as_slice()),
            (&[1.0, 2.0][..], &[0.0, -1.0][..])
        );

        let s = mat(&[&[1.0, -1.0], &[0.0, 1.0]]);
        let (xb, xl) = map_frames_to_original(&s, &[1.0, 1.0], &[0.0, 0.0]);
        assert_eq!(xb.as_slice(), &[1.0, 1.0]);
        assert_eq!(xl.as_slice(), &[-1.0, 0.0]);

        let z = [0.3, -1.7];
        let (xb, xl) = map_frames_to_original(&s, &z, &z);
        assert_eq!(xb, xl);
        assert_eq!(xb, s.mul_vec(&z));
    }

    #[test]
    fn initial_frame_mapping() {
        let (zb, zl) = map_initial_frames(&Matrix::identity(2), &[1.0, 2.0], &[0.0, 1.0]);
        assert_eq!(
            (zb.as_slice(), zl.as_slice()),
            (&[1.0, 2.0][..], &[0.0, 1.0][..])
        );
        let (zb, zl) =
            map_initial_frames(&Matrix::identity(2).scale(-1.0), &[1.0, 2.0], &[0.0, 1.0]);
        assert_eq!(
            (zb.as_slice(), zl.as_slice()),
            (&[0.0, -1.0][..], &[-1.0, -2.0][..])
        );
    }

    #[test]
    fn bounds_transform_examples() {
        let up = exprs(&["2/(1+t)", "4/(1+t)"]);
        let lo = exprs(&["-2/(1+t)", "-4/(1+t)"]);
        let (hi, lw) = transform_disturbance_bounds(&Matrix::identity(2), &up, &lo);
        assert_eq!((hi, lw), (up.clone(), lo.clone()));

        // with δ̲ = −δ̄ the upper bound is |R| δ̄
        let r = mat(&[&[1.0, -2.0], &[-0.5, 3.0]]);
        let (hi, lw) = transform_disturbance_bounds(&r, &up, &lo);
        let abs_r = r.map(f64::abs);
        for t in [0.0, 0.5, 3.0] {
            let ctx = EvalContext::time(t);
            let d: Vec<f64> = up.iter().map(|e| e.eval(&ctx).unwrap()).collect();
            let expect = abs_r.mul_vec(&d);
            for i in 0..2 {
                assert!((hi[i].eval(&ctx).unwrap() - expect[i]).abs() < 1e-14);
                assert!((lw[i].eval(&ctx).unwrap() + expect[i]).abs() < 1e-14);
            }
        }

        let (hi, _) =
            transform_disturbance_bounds(&mat(&[&[2.0]]), &exprs(&["3"]), &exprs(&["-1"]));
        assert_eq!(hi[0].eval(&EvalContext::time(0.0)).unwrap(), 6.0);
    }

    #[test]
    fn identity_transform_plant_is_exact() {
        let plant = example_plant();
        let (zp, s) = transform_plant(&plant, &Matrix::identity(3)).unwrap();
        assert_eq!(s, Matrix::identity(3));
        assert_eq!(zp.a_const(), plant.a_const());
        assert_eq!(zp.c(), plant.c());
        assert_eq!(zp.beta(), plant.beta());
    }
}
