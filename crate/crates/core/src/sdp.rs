//! Backend-neutral semidefinite programs with independent post-verification,
//! a Clarabel adapter and SDPA export.

use std::fmt::Write as _;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use log::debug;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{AffineMat, MatVar, VarSet};
use crate::linalg::Mat;
use crate::lmi::{AffineLmi, Sense};

/// `weight · ‖expr‖_F²` added to the objective.
#[derive(Clone, Debug)]
pub struct FrobeniusPenalty {
    pub weight: f64,
    pub expr: AffineMat,
}

#[derive(Clone, Debug)]
pub struct SdpProblem {
    pub vars: VarSet,
    pub constraints: Vec<AffineLmi>,
    /// Linear part of the objective, a `1 × 1` expression.
    pub objective: AffineMat,
    pub penalties: Vec<FrobeniusPenalty>,
}

impl SdpProblem {
    pub fn new(vars: VarSet) -> Self {
        Self { vars, constraints: Vec::new(), objective: AffineMat::zeros(1, 1), penalties: Vec::new() }
    }

    pub fn constrain(&mut self, lmi: AffineLmi) {
        self.constraints.push(lmi);
    }

    pub fn minimize(&mut self, objective: AffineMat) {
        assert_eq!(objective.shape(), (1, 1), "objective must be scalar");
        self.objective = objective;
    }

    pub fn penalize(&mut self, weight: f64, expr: AffineMat) {
        if weight > 0.0 {
            self.penalties.push(FrobeniusPenalty { weight, expr });
        }
    }

    /// Objective value at `x`, penalties included.
    pub fn objective_at(&self, x: &[f64]) -> f64 {
        let lin = self.objective.eval(x)[(0, 0)];
        lin + self.penalties.iter().map(|p| p.weight * p.expr.eval(x).norm_squared()).sum::<f64>()
    }

    /// Checks that every term refers to a declared scalar and that each LMI is
    /// square and symmetric.
    pub fn check(&self) -> Result<()> {
        let n = self.vars.len();
        let exprs = self
            .constraints
            .iter()
            .map(|c| (c.name.as_str(), &c.expr))
            .chain(std::iter::once(("objective", &self.objective)));
        for (name, e) in exprs {
            if let Some((k, _)) = e.terms.iter().find(|(k, _)| *k >= n) {
                return Err(Error::Dimension(format!("{name}: variable index {k} not declared ({n} scalars)")));
            }
        }
        for c in &self.constraints {
            if c.expr.nrows() != c.expr.ncols() {
                return Err(Error::Dimension(format!("{}: LMI is {:?}", c.name, c.expr.shape())));
            }
            let asym = c.expr.asymmetry();
            if asym > 1e-12 * (1.0 + crate::linalg::inf_norm(&c.expr.constant)) {
                return Err(Error::Numerical(format!("{}: asymmetric LMI ({asym:e})", c.name)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Diagnostics {
    pub backend: String,
    pub backend_status: String,
    pub iterations: u32,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub solve_time: f64,
    /// Worst normalized slack over all constraints after re-evaluation.
    pub worst_slack: f64,
    /// Name of the constraint attaining `worst_slack`.
    pub worst_constraint: String,
    pub message: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub diagnostics: Diagnostics,
}

impl SdpSolution {
    pub fn value(&self, v: &MatVar) -> Mat {
        v.value(&self.x)
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverOptions {
    /// Relative gap and feasibility tolerance.
    pub tol: f64,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 300, verbose: false }
    }
}

/// What a backend reports before post-verification.
#[derive(Clone, Debug)]
pub struct RawSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub diagnostics: Diagnostics,
}

pub trait SdpBackend: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, problem: &SdpProblem, opts: &SolverOptions) -> Result<RawSolution>;
}

/// Names accepted by [`backend_by_name`].
pub const BACKENDS: &[&str] = &["clarabel"];

/// Environment variable consulted by [`default_backend`].
pub const SOLVER_ENV: &str = "DELAYSYNTH_SOLVER";

pub fn backend_by_name(name: &str) -> Result<Box<dyn SdpBackend>> {
    match name {
        "clarabel" => Ok(Box::new(ClarabelBackend)),
        other => Err(Error::Environment(format!(
            "unknown SDP backend `{other}` (available: {})",
            BACKENDS.join(", ")
        ))),
    }
}

/// The backend named by `DELAYSYNTH_SOLVER`, or Clarabel when unset.
pub fn default_backend() -> Result<Box<dyn SdpBackend>> {
    match std::env::var(SOLVER_ENV) {
        Ok(name) if !name.is_empty() => backend_by_name(&name),
        _ => Ok(Box::new(ClarabelBackend)),
    }
}

/// Post-verification threshold `−1e−7 (1 + ‖block‖∞)` on the signed slack.
pub fn accepts(slack: f64, norm: f64) -> bool {
    slack >= -1e-7 * (1.0 + norm)
}

/// Solves `problem` and re-verifies every constraint at the returned point;
/// a point failing verification is reported as a numerical failure.
pub fn solve(problem: &SdpProblem, backend: &dyn SdpBackend, opts: &SolverOptions) -> Result<SdpSolution> {
    problem.check()?;
    let raw = backend.solve(problem, opts)?;
    let mut diag = raw.diagnostics;
    let mut status = raw.status;
    if status == SolveStatus::Optimal {
        let mut worst = f64::INFINITY;
        for c in &problem.constraints {
            let (slack, norm) = c.slack(&raw.x);
            let rel = slack / (1.0 + norm);
            if rel < worst {
                worst = rel;
                diag.worst_constraint = c.name.clone();
            }
            if !accepts(slack, norm) {
                status = SolveStatus::NumericalFailure;
                diag.message = format!(
                    "constraint `{}` fails re-verification: slack {slack:e}, block norm {norm:e}",
                    c.name
                );
            }
        }
        diag.worst_slack = worst;
    }
    let objective = problem.objective_at(&raw.x);
    debug!(
        "sdp: {} scalars, {} constraints, status {:?}, objective {objective}, {} iterations",
        problem.vars.len(),
        problem.constraints.len(),
        status,
        diag.iterations
    );
    Ok(SdpSolution { status, x: raw.x, objective, diagnostics: diag })
}

// ---------------------------------------------------------------------------
// Clarabel

/// Interior-point conic solver with native PSD cones.
pub struct ClarabelBackend;

/// Upper triangle, column by column, off-diagonals scaled by `√2`.
fn svec(m: &Mat, out: &mut Vec<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..=j {
            out.push(if i == j { m[(i, j)] } else { std::f64::consts::SQRT_2 * m[(i, j)] });
        }
    }
}

struct Triplets {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl ClarabelBackend {
    fn constraint_data(problem: &SdpProblem) -> (CscMatrix<f64>, Vec<f64>, Vec<SupportedConeT<f64>>) {
        let mut trip = Triplets { rows: Vec::new(), cols: Vec::new(), vals: Vec::new() };
        let mut b = Vec::new();
        let mut cones = Vec::new();
        let mut buf = Vec::new();
        for c in &problem.constraints {
            let dim = c.dim();
            let row0 = b.len();
            let eps = c.margin();
            let sign = match c.sense {
                Sense::NegativeDefinite => 1.0,
                Sense::PositiveDefinite => -1.0,
            };
            // s = b − A x ⪰ 0 with s = −sign·(F0 + Σ x_k F_k) − εI
            let rhs = &c.expr.constant * -sign - Mat::identity(dim, dim) * eps;
            svec(&rhs, &mut b);
            for (k, coef) in &c.expr.terms {
                buf.clear();
                svec(coef, &mut buf);
                for (r, &v) in buf.iter().enumerate() {
                    if v != 0.0 {
                        trip.rows.push(row0 + r);
                        trip.cols.push(*k);
                        trip.vals.push(sign * v);
                    }
                }
            }
            cones.push(if dim == 1 {
                SupportedConeT::NonnegativeConeT(1)
            } else {
                SupportedConeT::PSDTriangleConeT(dim)
            });
        }
        let a = CscMatrix::new_from_triplets(b.len(), problem.vars.len(), trip.rows, trip.cols, trip.vals);
        (a, b, cones)
    }

    fn objective_data(problem: &SdpProblem) -> (CscMatrix<f64>, Vec<f64>) {
        let n = problem.vars.len();
        let mut q = vec![0.0; n];
        for (k, c) in &problem.objective.terms {
            q[*k] += c[(0, 0)];
        }
        let mut p = Mat::zeros(n, n);
        for pen in &problem.penalties {
            // ‖L x + f‖² with L's columns the vectorized coefficients
            let f = pen.expr.constant.as_slice();
            for (ka, ca) in &pen.expr.terms {
                let la = ca.as_slice();
                q[*ka] += 2.0 * pen.weight * dot(la, f);
                for (kb, cb) in &pen.expr.terms {
                    p[(*ka, *kb)] += 2.0 * pen.weight * dot(la, cb.as_slice());
                }
            }
        }
        let (mut rows, mut cols, mut vals) = (Vec::new(), Vec::new(), Vec::new());
        for j in 0..n {
            for i in 0..=j {
                if p[(i, j)] != 0.0 {
                    rows.push(i);
                    cols.push(j);
                    vals.push(p[(i, j)]);
                }
            }
        }
        (CscMatrix::new_from_triplets(n, n, rows, cols, vals), q)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl SdpBackend for ClarabelBackend {
    fn name(&self) -> &'static str {
        "clarabel"
    }

    fn solve(&self, problem: &SdpProblem, opts: &SolverOptions) -> Result<RawSolution> {
        let (a, b, cones) = Self::constraint_data(problem);
        let (p, q) = Self::objective_data(problem);
        // Ruiz equilibration occasionally stalls the first step on problems
        // with large fixed blocks; such solves are repeated without it.
        let mut retried = false;
        let mut solver = None;
        for equilibrate in [true, false] {
            let settings = DefaultSettingsBuilder::default()
                .verbose(opts.verbose)
                .max_iter(opts.max_iter)
                .tol_gap_abs(opts.tol)
                .tol_gap_rel(opts.tol)
                .tol_feas(opts.tol)
                .equilibrate_enable(equilibrate)
                .build()
                .map_err(|e| Error::Environment(format!("clarabel settings: {e}")))?;
            let mut s = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
                .map_err(|e| Error::Environment(format!("clarabel setup: {e}")))?;
            s.solve();
            let status = s.solution.status;
            solver = Some(s);
            if !matches!(status, SolverStatus::NumericalError | SolverStatus::InsufficientProgress) {
                break;
            }
            if equilibrate {
                debug!("clarabel: {status:?}, retrying without equilibration");
                retried = true;
            }
        }
        let solver = solver.expect("at least one attempt");
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
            _ => SolveStatus::NumericalFailure,
        };
        let mut message = match sol.status {
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => "objective unbounded below".to_string(),
            _ => String::new(),
        };
        if retried {
            message = format!("retried without equilibration{}{message}", if message.is_empty() { "" } else { "; " });
        }
        Ok(RawSolution {
            status,
            x: sol.x.clone(),
            diagnostics: Diagnostics {
                backend: self.name().into(),
                backend_status: format!("{:?}", sol.status),
                iterations: sol.iterations,
                primal_residual: sol.r_prim,
                dual_residual: sol.r_dual,
                solve_time: sol.solve_time,
                worst_slack: f64::NAN,
                worst_constraint: String::new(),
                message,
            },
        })
    }
}

// ---------------------------------------------------------------------------
// SDPA export

/// Sparse SDPA text (`min cᵀx` s.t. `Σ F_i x_i − F_0 ⪰ 0`, one block per
/// constraint, strictness margins folded into `F_0`). Quadratic penalties
/// cannot be expressed and are listed in a comment.
pub fn to_sdpa(problem: &SdpProblem) -> String {
    let n = problem.vars.len();
    let mut out = String::new();
    let _ = writeln!(out, "* exported by delaysynth: {} constraints", problem.constraints.len());
    if !problem.penalties.is_empty() {
        let _ = writeln!(out, "* {} quadratic penalty terms omitted", problem.penalties.len());
    }
    let _ = writeln!(out, "{n}");
    let _ = writeln!(out, "{}", problem.constraints.len());
    let sizes: Vec<String> = problem.constraints.iter().map(|c| c.dim().to_string()).collect();
    let _ = writeln!(out, "{}", sizes.join(" "));
    let mut c = vec![0.0; n];
    for (k, m) in &problem.objective.terms {
        c[*k] += m[(0, 0)];
    }
    let cs: Vec<String> = c.iter().map(|v| format!("{v:e}")).collect();
    let _ = writeln!(out, "{}", cs.join(" "));
    for (blk, con) in problem.constraints.iter().enumerate() {
        let dim = con.dim();
        let eps = con.margin();
        let sign = match con.sense {
            Sense::PositiveDefinite => 1.0,
            Sense::NegativeDefinite => -1.0,
        };
        // sign·(F0 + Σ x F_k) − εI ⪰ 0
        let f0 = Mat::identity(dim, dim) * eps - &con.expr.constant * sign;
        let mut emit = |mat: usize, m: &Mat, s: f64| {
            for j in 0..dim {
                for i in 0..=j {
                    let v = s * m[(i, j)];
                    if v != 0.0 {
                        let _ = writeln!(out, "{mat} {} {} {} {v:e}", blk + 1, i + 1, j + 1);
                    }
                }
            }
        };
        emit(0, &f0, 1.0);
        for (k, m) in &con.expr.terms {
            emit(k + 1, m, sign);
        }
    }
    out
}
