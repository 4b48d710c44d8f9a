//! Plant `ẋ = A(y)x + β(y,u) + δ(t)`, `y = Cx`, its disturbance envelope and
//! the assembled scenario.
//!
//! `A(y)` is restricted to an affine pencil `A_const + Σ_j y_j A_j`.

use thiserror::Error;

use crate::exprlang::{EvalContext, EvalError, Expr, Var, VarScope};
use crate::numkit::{elementwise_leq, Matrix, NumError, Vector};
use crate::observer::GainSet;
use crate::sim::SimParams;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("dimensions must be positive: n={n}, p={p}")]
    Dims { n: usize, p: usize },
    #[error("{what} has shape {got:?}, expected {expected:?}")]
    Shape {
        what: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("{what} has length {got}, expected {expected}")]
    Length {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("A(y) term references output y{j}, only y1..y{p} exist")]
    TermIndex { j: usize, p: usize },
    #[error("{what} references {var}, which is not available there")]
    Scope { what: String, var: Var },
    #[error("initial frames do not bracket x0: need xlower0 <= x0 <= xbar0 (component {index})")]
    InitialFrames { index: usize },
    #[error("coordinate transform is singular: {0}")]
    SingularTransform(NumError),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// A single `y_j · A_j` term of the affine pencil; `output` is 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputTerm {
    pub output: usize,
    pub matrix: Matrix,
}

#[derive(Debug, Clone)]
pub struct PlantModel {
    n: usize,
    p: usize,
    q: usize,
    c: Matrix,
    a_const: Matrix,
    a_terms: Vec<OutputTerm>,
    beta: Vec<Expr>,
    u_signal: Vec<Expr>,
}

impl PlantModel {
    pub fn new(
        c: Matrix,
        a_const: Matrix,
        a_terms: Vec<OutputTerm>,
        beta: Vec<Expr>,
        u_signal: Vec<Expr>,
    ) -> Result<Self, ModelError> {
        let (p, n) = c.shape();
        let q = u_signal.len();
        expect_shape("A.const", &a_const, (n, n))?;
        for (k, term) in a_terms.iter().enumerate() {
            expect_shape(&format!("A.y_terms[{k}]"), &term.matrix, (n, n))?;
            if term.output >= p {
                return Err(ModelError::TermIndex {
                    j: term.output + 1,
                    p,
                });
            }
        }
        if beta.len() != n {
            return Err(ModelError::Length {
                what: "beta".into(),
                expected: n,
                got: beta.len(),
            });
        }
        let plant_scope = VarScope {
            outputs: p,
            inputs: q,
        };
        for (i, e) in beta.iter().enumerate() {
            if let Some(var) = e.out_of_scope(plant_scope) {
                return Err(ModelError::Scope {
                    what: format!("beta[{i}]"),
                    var,
                });
            }
        }
        for (i, e) in u_signal.iter().enumerate() {
            if let Some(var) = e.out_of_scope(VarScope::time_only()) {
                return Err(ModelError::Scope {
                    what: format!("u[{i}]"),
                    var,
                });
            }
        }
        Ok(PlantModel {
            n,
            p,
            q,
            c,
            a_const,
            a_terms,
            beta,
            u_signal,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    pub fn a_const(&self) -> &Matrix {
        &self.a_const
    }

    pub fn a_terms(&self) -> &[OutputTerm] {
        &self.a_terms
    }

    pub fn beta(&self) -> &[Expr] {
        &self.beta
    }

    pub fn u_signal(&self) -> &[Expr] {
        &self.u_signal
    }

    pub fn is_constant_a(&self) -> bool {
        self.a_terms.is_empty()
    }

    pub fn output(&self, x: &[f64]) -> Vector {
        self.c.mul_vec(x)
    }

    /// `A_const + Σ y_j A_j`.
    pub fn eval_a(&self, y: &[f64]) -> Matrix {
        assert_eq!(y.len(), self.p, "output dimension mismatch");
        let mut a = self.a_const.clone();
        for term in &self.a_terms {
            a = a.add(&term.matrix.scale(y[term.output]));
        }
        a
    }

    /// `A(y) x`, skipping the matrix assembly for constant `A`.
    pub fn apply_a(&self, y: &[f64], x: &[f64]) -> Vector {
        if self.a_terms.is_empty() {
            self.a_const.mul_vec(x)
        } else {
            self.eval_a(y).mul_vec(x)
        }
    }

    pub fn eval_beta(&self, t: f64, y: &[f64], u: &[f64]) -> Result<Vector, EvalError> {
        let ctx = EvalContext::new(t, y, u);
        eval_all(&self.beta, &ctx)
    }

    pub fn eval_u(&self, t: f64) -> Result<Vector, EvalError> {
        eval_all(&self.u_signal, &EvalContext::time(t))
    }

    /// Plant vector field; `y = Cx` is computed once and shared by `A` and `β`.
    pub fn rhs(
        &self,
        envelope: &DisturbanceEnvelope,
        t: f64,
        x: &[f64],
        u: &[f64],
    ) -> Result<Vector, EvalError> {
        let y = self.output(x);
        let ax = self.apply_a(&y, x);
        let beta = self.eval_beta(t, &y, u)?;
        let delta = envelope.eval_true(t)?;
        Ok(Vector::raw(
            (0..self.n).map(|i| ax[i] + beta[i] + delta[i]).collect(),
        ))
    }
}

fn expect_shape(what: &str, m: &Matrix, expected: (usize, usize)) -> Result<(), ModelError> {
    if m.shape() != expected {
        return Err(ModelError::Shape {
            what: what.into(),
            expected,
            got: m.shape(),
        });
    }
    Ok(())
}

pub(crate) fn eval_all(exprs: &[Expr], ctx: &EvalContext<'_>) -> Result<Vector, EvalError> {
    exprs
        .iter()
        .map(|e| e.eval(ctx))
        .collect::<Result<Vec<_>, _>>()
        .map(Vector::raw)
}

/// Known bounds `δ̲(t) ≤ δ(t) ≤ δ̄(t)` plus the true signal used by the simulator.
#[derive(Debug, Clone)]
pub struct DisturbanceEnvelope {
    delta: Vec<Expr>,
    upper: Vec<Expr>,
    lower: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("disturbance envelope violated at t={t}, component {index}: {lower} <= {value} <= {upper} fails")]
pub struct EnvelopeViolation {
    pub t: f64,
    pub index: usize,
    pub lower: f64,
    pub value: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvelopeError {
    #[error(transparent)]
    Violation(#[from] EnvelopeViolation),
    #[error("disturbance evaluation failed at t={t}: {source}")]
    Eval { t: f64, source: EvalError },
}

impl DisturbanceEnvelope {
    pub fn new(delta: Vec<Expr>, upper: Vec<Expr>, lower: Vec<Expr>) -> Result<Self, ModelError> {
        let n = delta.len();
        for (what, v) in [("delta.upper", &upper), ("delta.lower", &lower)] {
            if v.len() != n {
                return Err(ModelError::Length {
                    what: what.into(),
                    expected: n,
                    got: v.len(),
                });
            }
        }
        for (what, v) in [
            ("delta.true", &delta),
            ("delta.upper", &upper),
            ("delta.lower", &lower),
        ] {
            for (i, e) in v.iter().enumerate() {
                if let Some(var) = e.out_of_scope(VarScope::time_only()) {
                    return Err(ModelError::Scope {
                        what: format!("{what}[{i}]"),
                        var,
                    });
                }
            }
        }
        Ok(DisturbanceEnvelope {
            delta,
            upper,
            lower,
        })
    }

    /// Envelope with all three signals identically zero.
    pub fn zero(n: usize) -> Self {
        let z = vec![Expr::Num(0.0); n];
        DisturbanceEnvelope {
            delta: z.clone(),
            upper: z.clone(),
            lower: z,
        }
    }

    pub fn dim(&self) -> usize {
        self.delta.len()
    }

    pub fn delta(&self) -> &[Expr] {
        &self.delta
    }

    pub fn upper(&self) -> &[Expr] {
        &self.upper
    }

    pub fn lower(&self) -> &[Expr] {
        &self.lower
    }

    pub fn eval_true(&self, t: f64) -> Result<Vector, EvalError> {
        eval_all(&self.delta, &EvalContext::time(t))
    }

    pub fn eval_upper(&self, t: f64) -> Result<Vector, EvalError> {
        eval_all(&self.upper, &EvalContext::time(t))
    }

    pub fn eval_lower(&self, t: f64) -> Result<Vector, EvalError> {
        eval_all(&self.lower, &EvalContext::time(t))
    }

    pub fn is_identically_zero(&self) -> bool {
        [&self.delta, &self.upper, &self.lower]
            .iter()
            .all(|v| v.iter().all(Expr::is_zero_literal))
    }

    /// Checks the sandwich at one time point, exactly.
    pub fn check(&self, t: f64) -> Result<(), EnvelopeError> {
        let eval =
            |v: Result<Vector, EvalError>| v.map_err(|source| EnvelopeError::Eval { t, source });
        let d = eval(self.eval_true(t))?;
        let hi = eval(self.eval_upper(t))?;
        let lo = eval(self.eval_lower(t))?;
        for i in 0..d.dim() {
            if !(lo[i] <= d[i] && d[i] <= hi[i]) {
                return Err(EnvelopeViolation {
                    t,
                    index: i,
                    lower: lo[i],
                    value: d[i],
                    upper: hi[i],
                }
                .into());
            }
        }
        Ok(())
    }
}

/// Everything needed for one simulation run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub plant: PlantModel,
    pub envelope: DisturbanceEnvelope,
    pub gains: GainSet,
    pub x0: Vector,
    pub xbar0: Vector,
    pub xlower0: Vector,
    /// Coordinate change `z = R x` for the observer; gains are then given in `z`.
    pub transform: Option<Matrix>,
    pub sim: SimParams,
}

impl Scenario {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        plant: PlantModel,
        envelope: DisturbanceEnvelope,
        gains: GainSet,
        x0: Vector,
        xbar0: Vector,
        xlower0: Vector,
        transform: Option<Matrix>,
        sim: SimParams,
    ) -> Result<Self, ModelError> {
        let n = plant.n();
        if envelope.dim() != n {
            return Err(ModelError::Length {
                what: "delta.true".into(),
                expected: n,
                got: envelope.dim(),
            });
        }
        gains.check_dims(n, plant.p())?;
        for (what, v) in [
            ("init.x0", &x0),
            ("init.xbar0", &xbar0),
            ("init.xlower0", &xlower0),
        ] {
            if v.dim() != n {
                return Err(ModelError::Length {
                    what: what.into(),
                    expected: n,
                    got: v.dim(),
                });
            }
        }
        if let Some(r) = &transform {
            expect_shape("transform", r, (n, n))?;
            r.lu().map_err(ModelError::SingularTransform)?;
        }
        for i in 0..n {
            if !(xlower0[i] <= x0[i] && x0[i] <= xbar0[i]) {
                return Err(ModelError::InitialFrames { index: i });
            }
        }
        debug_assert!(elementwise_leq(&xlower0, &xbar0).unwrap_or(false));
        Ok(Scenario {
            plant,
            envelope,
            gains,
            x0,
            xbar0,
            xlower0,
            transform,
            sim,
        })
    }

    /// Same scenario with a different gain set (used for single-gain comparisons).
    pub fn with_gains(&self, gains: GainSet) -> Result<Self, ModelError> {
        gains.check_dims(self.plant.n(), self.plant.p())?;
        Ok(Scenario {
            gains,
            ..self.clone()
        })
    }

    pub fn with_envelope(&self, envelope: DisturbanceEnvelope) -> Result<Self, ModelError> {
        if envelope.dim() != self.plant.n() {
            return Err(ModelError::Length {
                what: "delta.true".into(),
                expected: self.plant.n(),
                got: envelope.dim(),
            });
        }
        Ok(Scenario {
            envelope,
            ..self.clone()
        })
    }

    pub fn with_sim(&self, sim: SimParams) -> Self {
        Scenario {
            sim,
            ..self.clone()
        }
    }

    pub fn with_transform(
        &self,
        transform: Option<Matrix>,
        gains: GainSet,
    ) -> Result<Self, ModelError> {
        Scenario::new(
            self.plant.clone(),
            self.envelope.clone(),
            gains,
            self.x0.clone(),
            self.xbar0.clone(),
            self.xlower0.clone(),
            transform,
            self.sim.clone(),
        )
    }
}
