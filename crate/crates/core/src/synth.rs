//! Controller synthesis: the dual (slack-variable) condition, analysis with a
//! fixed gain, gain update with fixed Lyapunov coupling, and the iterative
//! inner convex approximation that alternates between them.

use std::time::Instant;

use log::info;
use serde::Serialize;

use crate::augplant::AugmentedPlant;
use crate::error::{Error, Result};
use crate::expr::{AffineMat, MatVar, VarSet};
use crate::linalg::{hcat, sym_eig_range, Mat};
use crate::lmi::{
    build_inner_approx, build_positivity_lmis, build_theorem1, build_theorem2, dissipation_matrix, positivity_matrix,
    Anchor, DualBlocks, LyapunovBlocks, LyapunovValues, SupplyBlocks,
};
use crate::model::{make_supply_rate_l2gain, SupplyRate, SupplySpec};
use crate::sdp::{self, Diagnostics, SdpBackend, SdpProblem, SdpSolution, SolveStatus, SolverOptions};

/// Backend and tolerances shared by every solve.
pub struct SolveContext {
    pub backend: Box<dyn SdpBackend>,
    pub opts: SolverOptions,
}

impl SolveContext {
    pub fn new(backend: Box<dyn SdpBackend>, opts: SolverOptions) -> Self {
        Self { backend, opts }
    }

    /// Backend from the environment with default tolerances.
    pub fn from_env() -> Result<Self> {
        Ok(Self::new(sdp::default_backend()?, SolverOptions::default()))
    }

    fn solve(&self, p: &SdpProblem) -> Result<SdpSolution> {
        sdp::solve(p, self.backend.as_ref(), &self.opts)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesisMode {
    /// Dual condition with slack variables; the gain is `V X⁻¹`.
    Dual,
    /// Lyapunov matrices and performance level for a given gain.
    Analysis,
    /// Gain and remaining matrices for fixed `P1`, `P2`.
    GainUpdate,
    /// Inner convex approximation loop.
    Iterative,
}

#[derive(Clone, Debug, Serialize)]
pub struct DualValues {
    #[serde(serialize_with = "ser_mat")]
    pub x: Mat,
    #[serde(serialize_with = "ser_mat")]
    pub v: Mat,
    pub lyapunov: LyapunovValues,
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Certificate {
    Primal(LyapunovValues),
    Dual(DualValues),
}

#[derive(Clone, Debug, Serialize)]
pub struct IterationRecord {
    /// Step label: `dual`, `analysis`, `gain_update` or the loop index.
    pub step: String,
    pub gamma: Option<f64>,
    /// `‖ΔY‖∞ / (‖Ỹ‖∞ + 1)`
    pub delta_y: f64,
    /// `‖ΔK‖∞ / (‖K̃‖∞ + 1)`
    pub delta_k: f64,
    pub status: SolveStatus,
    /// Largest eigenvalue of the dissipation LMI re-evaluated at the iterate.
    pub dissipation_max_eig: f64,
    #[serde(serialize_with = "ser_mat")]
    pub k: Mat,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SynthesisResult {
    pub mode: SynthesisMode,
    #[serde(serialize_with = "ser_mat")]
    pub k: Mat,
    /// Performance level; `None` for a fixed supply rate.
    pub gamma: Option<f64>,
    pub certificate: Certificate,
    pub trace: Vec<IterationRecord>,
    pub seconds: f64,
    pub diagnostics: Diagnostics,
}

fn ser_mat<S: serde::Serializer>(m: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
    serde::Serialize::serialize(&crate::linalg::to_rows(m), s)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationConfig {
    pub rho1: f64,
    pub rho2: f64,
    pub eps: f64,
    pub max_iter: usize,
    pub gamma_in_objective: bool,
}

impl Default for IterationConfig {
    fn default() -> Self {
        Self { rho1: 1e-3, rho2: 1e-3, eps: 1e-4, max_iter: 20, gamma_in_objective: true }
    }
}

impl IterationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho1 >= 0.0 && self.rho2 >= 0.0) {
            return Err(Error::Domain(format!("proximal weights must be >= 0, got {} and {}", self.rho1, self.rho2)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Domain(format!("stopping tolerance must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Multipliers used by the dual condition when none are given: `5` on the
/// current state, `0` elsewhere.
pub fn default_alphas(beta: usize) -> Vec<f64> {
    let mut a = vec![0.0; beta];
    a[0] = 5.0;
    a
}

// ---------------------------------------------------------------------------
// variable declarations

struct LyapunovVars {
    p1: MatVar,
    p2: MatVar,
    p3: MatVar,
    q: Vec<MatVar>,
    r: Vec<MatVar>,
}

impl LyapunovVars {
    fn declare(vs: &mut VarSet, ap: &AugmentedPlant, prefix: &str) -> Self {
        let (n, e) = (ap.dims.n, ap.dims.e);
        let p1 = vs.symmetric(&format!("{prefix}P1"), n);
        let p2 = vs.rect(&format!("{prefix}P2"), n, e);
        Self::rest(vs, ap, prefix, p1, p2)
    }

    fn rest(vs: &mut VarSet, ap: &AugmentedPlant, prefix: &str, p1: MatVar, p2: MatVar) -> Self {
        let (n, e) = (ap.dims.n, ap.dims.e);
        let p3 = vs.symmetric(&format!("{prefix}P3"), e);
        let q = (1..=ap.dims.nu).map(|i| vs.symmetric(&format!("{prefix}Q{i}"), n)).collect();
        let r = (1..=ap.dims.nu).map(|i| vs.symmetric(&format!("{prefix}R{i}"), n)).collect();
        Self { p1, p2, p3, q, r }
    }

    fn blocks(&self) -> LyapunovBlocks {
        LyapunovBlocks {
            p1: self.p1.expr(),
            p2: self.p2.expr(),
            p3: self.p3.expr(),
            q: self.q.iter().map(MatVar::expr).collect(),
            r: self.r.iter().map(MatVar::expr).collect(),
        }
    }

    fn values(&self, x: &[f64]) -> LyapunovValues {
        LyapunovValues {
            p1: self.p1.value(x),
            p2: self.p2.value(x),
            p3: self.p3.value(x),
            q: self.q.iter().map(|v| v.value(x)).collect(),
            r: self.r.iter().map(|v| v.value(x)).collect(),
        }
    }
}

/// Variables for `P3`, `Q`, `R` with `P1`, `P2` fixed.
struct PartialLyapunov {
    p1: Mat,
    p2: Mat,
    p3: MatVar,
    q: Vec<MatVar>,
    r: Vec<MatVar>,
}

impl PartialLyapunov {
    fn blocks(&self) -> LyapunovBlocks {
        LyapunovBlocks {
            p1: (&self.p1).into(),
            p2: (&self.p2).into(),
            p3: self.p3.expr(),
            q: self.q.iter().map(MatVar::expr).collect(),
            r: self.r.iter().map(MatVar::expr).collect(),
        }
    }

    fn values(&self, x: &[f64]) -> LyapunovValues {
        LyapunovValues {
            p1: self.p1.clone(),
            p2: self.p2.clone(),
            p3: self.p3.value(x),
            q: self.q.iter().map(|v| v.value(x)).collect(),
            r: self.r.iter().map(|v| v.value(x)).collect(),
        }
    }
}

/// Supply blocks plus the performance variable when it is free.
fn declare_supply(vs: &mut VarSet, ap: &AugmentedPlant, spec: &SupplySpec) -> (SupplyBlocks, Option<MatVar>) {
    match spec {
        SupplySpec::L2Gain => {
            let g = vs.scalar("gamma");
            (SupplyBlocks::l2gain(&g.expr(), ap.dims.m, ap.dims.q), Some(g))
        }
        SupplySpec::Fixed(s) => (SupplyBlocks::fixed(s), None),
    }
}

/// Concrete supply rate at a solution.
fn supply_at(spec: &SupplySpec, gamma: Option<f64>, ap: &AugmentedPlant) -> Result<SupplyRate> {
    match (spec, gamma) {
        (SupplySpec::Fixed(s), _) => Ok(s.clone()),
        (SupplySpec::L2Gain, Some(g)) => make_supply_rate_l2gain(g, ap.dims.m, ap.dims.q),
        (SupplySpec::L2Gain, None) => Err(Error::Numerical("missing performance level".into())),
    }
}

fn objective_of(gamma: &Option<MatVar>) -> AffineMat {
    gamma.as_ref().map_or_else(|| AffineMat::zeros(1, 1), MatVar::expr)
}

fn check_status(sol: &SdpSolution, what: &str) -> Result<()> {
    match sol.status {
        SolveStatus::Optimal => Ok(()),
        SolveStatus::Infeasible => Err(Error::Infeasible(format!(
            "{what}: the conditions are infeasible ({})",
            sol.diagnostics.backend_status
        ))),
        SolveStatus::NumericalFailure => Err(Error::Numerical(format!(
            "{what}: {} {}",
            sol.diagnostics.backend_status, sol.diagnostics.message
        ))),
    }
}

/// Largest eigenvalue of the dissipation LMI at a numeric point.
pub fn dissipation_max_eig(
    ap: &AugmentedPlant,
    lyap: &LyapunovValues,
    k: &Mat,
    supply: &SupplyRate,
) -> Result<f64> {
    Ok(sym_eig_range(&dissipation_matrix(ap, lyap, k, supply)?).1)
}

/// Re-checks a primal certificate outside the solver with the `−1e−7` rule.
pub fn verify_certificate(ap: &AugmentedPlant, lyap: &LyapunovValues, k: &Mat, supply: &SupplyRate) -> Result<()> {
    let tol = |m: &Mat| 1e-7 * (1.0 + crate::linalg::inf_norm(m));
    let pos = positivity_matrix(ap, lyap);
    if sym_eig_range(&pos).0 < -tol(&pos) {
        return Err(Error::Numerical("certificate: functional positivity fails".into()));
    }
    for (i, (q, r)) in lyap.q.iter().zip(&lyap.r).enumerate() {
        if sym_eig_range(q).0 < -tol(q) || sym_eig_range(r).0 < -tol(r) {
            return Err(Error::Numerical(format!("certificate: Q_{0} or R_{0} not positive", i + 1)));
        }
    }
    let dis = dissipation_matrix(ap, lyap, k, supply)?;
    if sym_eig_range(&dis).1 > tol(&dis) {
        return Err(Error::Numerical("certificate: dissipation LMI not negative".into()));
    }
    Ok(())
}

fn record(step: &str, gamma: Option<f64>, status: SolveStatus, max_eig: f64, k: &Mat, t: Instant) -> IterationRecord {
    IterationRecord {
        step: step.to_string(),
        gamma,
        delta_y: f64::NAN,
        delta_k: f64::NAN,
        status,
        dissipation_max_eig: max_eig,
        k: k.clone(),
        seconds: t.elapsed().as_secs_f64(),
    }
}

// ---------------------------------------------------------------------------
// solve modes

fn dual_problem(ap: &AugmentedPlant, supply: &SupplySpec, alphas: &[f64]) -> Result<(SdpProblem, MatVar, MatVar, LyapunovVars, Option<MatVar>)> {
    let (n, p) = (ap.dims.n, ap.dims.p);
    let mut vs = VarSet::new();
    let x = vs.symmetric("X", n);
    let v = vs.rect("V", p, n);
    let lyap = LyapunovVars::declare(&mut vs, ap, "dot_");
    let (sb, gamma) = declare_supply(&mut vs, ap, supply);
    let dual = DualBlocks { x: x.expr(), v: v.expr(), lyap: lyap.blocks() };
    let mut prob = SdpProblem::new(vs);
    for c in build_theorem2(ap, &dual, alphas, &sb)? {
        prob.constrain(c);
    }
    prob.minimize(objective_of(&gamma));
    Ok((prob, x, v, lyap, gamma))
}

fn analysis_problem(ap: &AugmentedPlant, supply: &SupplySpec, k: &Mat) -> Result<(SdpProblem, LyapunovVars, Option<MatVar>)> {
    if k.shape() != (ap.dims.p, ap.dims.n) {
        return Err(Error::Dimension(format!("gain is {:?}, expected {:?}", k.shape(), (ap.dims.p, ap.dims.n))));
    }
    let mut vs = VarSet::new();
    let lyap = LyapunovVars::declare(&mut vs, ap, "");
    let (sb, gamma) = declare_supply(&mut vs, ap, supply);
    let mut prob = SdpProblem::new(vs);
    for c in build_theorem1(ap, &lyap.blocks(), &k.into(), &sb)? {
        prob.constrain(c);
    }
    prob.minimize(objective_of(&gamma));
    Ok((prob, lyap, gamma))
}

/// The dual synthesis SDP without solving it, e.g. for export.
pub fn build_dual_problem(ap: &AugmentedPlant, supply: &SupplySpec, alphas: &[f64]) -> Result<SdpProblem> {
    Ok(dual_problem(ap, supply, alphas)?.0)
}

/// The fixed-gain analysis SDP without solving it.
pub fn build_analysis_problem(ap: &AugmentedPlant, supply: &SupplySpec, k: &Mat) -> Result<SdpProblem> {
    Ok(analysis_problem(ap, supply, k)?.0)
}

/// Dual synthesis condition; minimizes `γ` (or checks feasibility for a
/// fixed supply rate) and returns `K = V X⁻¹`.
pub fn solve_theorem2(
    ctx: &SolveContext,
    ap: &AugmentedPlant,
    supply: &SupplySpec,
    alphas: &[f64],
) -> Result<SynthesisResult> {
    let t0 = Instant::now();
    let (prob, x, v, lyap, gamma) = dual_problem(ap, supply, alphas)?;
    let sol = ctx.solve(&prob)?;
    check_status(&sol, "dual synthesis")?;

    let xv = sol.value(&x);
    let (xmin, xmax) = sym_eig_range(&xv);
    if !(xmin > 0.0) || xmax / xmin > 1e12 {
        return Err(Error::Numerical(format!("slack matrix X is singular (eigenvalues in [{xmin:e}, {xmax:e}])")));
    }
    let xinv = xv.clone().try_inverse().ok_or_else(|| Error::Numerical("X not invertible".into()))?;
    let k = sol.value(&v) * xinv;
    let g = gamma.as_ref().map(|g| sol.value(g)[(0, 0)]);
    info!("dual synthesis: gamma = {g:?}, K = {:?}", k.as_slice());
    let rec = record("dual", g, sol.status, f64::NAN, &k, t0);

    // The gain must pass the primal analysis at no worse a level.
    let check = analyze_theorem1_fixed_gain(ctx, ap, supply, &k)
        .map_err(|e| Error::Numerical(format!("gain from the dual condition fails primal analysis: {e}")))?;
    if let (Some(gd), Some(ga)) = (g, check.gamma) {
        if ga > gd + 1e-6 {
            return Err(Error::Numerical(format!("primal analysis level {ga} exceeds dual level {gd}")));
        }
    }
    let mut check_rec = check.trace[0].clone();
    check_rec.step = "dual_check".into();
    Ok(SynthesisResult {
        mode: SynthesisMode::Dual,
        k,
        gamma: g,
        certificate: Certificate::Dual(DualValues { x: xv, v: sol.value(&v), lyapunov: lyap.values(&sol.x) }),
        trace: vec![rec, check_rec],
        seconds: t0.elapsed().as_secs_f64(),
        diagnostics: sol.diagnostics,
    })
}

/// Analysis with a fixed gain: minimizes `γ` over the Lyapunov matrices.
pub fn analyze_theorem1_fixed_gain(
    ctx: &SolveContext,
    ap: &AugmentedPlant,
    supply: &SupplySpec,
    k: &Mat,
) -> Result<SynthesisResult> {
    let t0 = Instant::now();
    let (prob, lyap, gamma) = analysis_problem(ap, supply, k)?;
    let sol = ctx.solve(&prob)?;
    check_status(&sol, "analysis")?;
    let g = gamma.as_ref().map(|g| sol.value(g)[(0, 0)]);
    let vals = lyap.values(&sol.x);
    let s = supply_at(supply, g, ap)?;
    verify_certificate(ap, &vals, k, &s)?;
    let max_eig = dissipation_max_eig(ap, &vals, k, &s)?;
    Ok(SynthesisResult {
        mode: SynthesisMode::Analysis,
        k: k.clone(),
        gamma: g,
        certificate: Certificate::Primal(vals),
        trace: vec![record("analysis", g, sol.status, max_eig, k, t0)],
        seconds: t0.elapsed().as_secs_f64(),
        diagnostics: sol.diagnostics,
    })
}

/// Gain update with `P1`, `P2` held fixed.
pub fn improve_gain_fixed_p(
    ctx: &SolveContext,
    ap: &AugmentedPlant,
    supply: &SupplySpec,
    p1: &Mat,
    p2: &Mat,
) -> Result<SynthesisResult> {
    let t0 = Instant::now();
    let (n, p, e) = (ap.dims.n, ap.dims.p, ap.dims.e);
    if p1.shape() != (n, n) || p2.shape() != (n, e) {
        return Err(Error::Dimension(format!("P1 {:?} / P2 {:?}, expected {:?} / {:?}", p1.shape(), p2.shape(), (n, n), (n, e))));
    }
    let mut vs = VarSet::new();
    let kv = vs.rect("K", p, n);
    let p3 = vs.symmetric("P3", e);
    let q = (1..=ap.dims.nu).map(|i| vs.symmetric(&format!("Q{i}"), n)).collect();
    let r = (1..=ap.dims.nu).map(|i| vs.symmetric(&format!("R{i}"), n)).collect();
    let lyap = PartialLyapunov { p1: p1.clone(), p2: p2.clone(), p3, q, r };
    let (sb, gamma) = declare_supply(&mut vs, ap, supply);
    let mut prob = SdpProblem::new(vs);
    for c in build_theorem1(ap, &lyap.blocks(), &kv.expr(), &sb)? {
        prob.constrain(c);
    }
    prob.minimize(objective_of(&gamma));
    let sol = ctx.solve(&prob)?;
    check_status(&sol, "gain update")?;
    let g = gamma.as_ref().map(|g| sol.value(g)[(0, 0)]);
    let k = sol.value(&kv);
    let vals = lyap.values(&sol.x);
    let s = supply_at(supply, g, ap)?;
    verify_certificate(ap, &vals, &k, &s)?;
    let max_eig = dissipation_max_eig(ap, &vals, &k, &s)?;
    Ok(SynthesisResult {
        mode: SynthesisMode::GainUpdate,
        k: k.clone(),
        gamma: g,
        certificate: Certificate::Primal(vals),
        trace: vec![record("gain_update", g, sol.status, max_eig, &k, t0)],
        seconds: t0.elapsed().as_secs_f64(),
        diagnostics: sol.diagnostics,
    })
}

/// One proximal step of the inner convex approximation around `anchor`.
pub fn inner_approx_step(
    ctx: &SolveContext,
    ap: &AugmentedPlant,
    supply: &SupplySpec,
    anchor: &Anchor,
    cfg: &IterationConfig,
) -> Result<(SdpSolution, LyapunovValues, Mat, Option<f64>)> {
    let (n, p) = (ap.dims.n, ap.dims.p);
    let mut vs = VarSet::new();
    let lyap = LyapunovVars::declare(&mut vs, ap, "");
    let kv = vs.rect("K", p, n);
    let z = vs.symmetric("Z", n);
    let (sb, gamma) = declare_supply(&mut vs, ap, supply);
    let blocks = lyap.blocks();
    let mut prob = SdpProblem::new(vs);
    for c in build_positivity_lmis(ap, &blocks) {
        prob.constrain(c);
    }
    prob.constrain(build_inner_approx(ap, &blocks, &kv.expr(), &z.expr(), anchor, &sb)?);
    if cfg.gamma_in_objective {
        prob.minimize(objective_of(&gamma));
    }
    let y = AffineMat::hcat(&[&blocks.p1, &blocks.p2]);
    let y_anchor = hcat(&[&anchor.p1, &anchor.p2]);
    prob.penalize(cfg.rho1, y.sub(&(&y_anchor).into()));
    prob.penalize(cfg.rho2, kv.expr().sub(&(&anchor.k).into()));
    let sol = ctx.solve(&prob)?;
    let vals = lyap.values(&sol.x);
    let k = sol.value(&kv);
    let g = gamma.as_ref().map(|g| sol.value(g)[(0, 0)]);
    Ok((sol, vals, k, g))
}

fn rel_change(new: &Mat, old: &Mat) -> f64 {
    (new - old).amax() / (old.amax() + 1.0)
}

/// Full iterative scheme: dual synthesis for an initial gain, one analysis
/// and one gain update, then up to `max_iter` proximal inner-approximation
/// steps.
pub fn algorithm1(
    ctx: &SolveContext,
    ap: &AugmentedPlant,
    supply: &SupplySpec,
    alphas: &[f64],
    cfg: &IterationConfig,
) -> Result<SynthesisResult> {
    let dual = solve_theorem2(ctx, ap, supply, alphas)?;
    let mut out = algorithm1_from_gain(ctx, ap, supply, &dual.k, cfg)?;
    let mut trace = dual.trace;
    trace.append(&mut out.trace);
    out.trace = trace;
    out.seconds += dual.seconds;
    Ok(out)
}

/// Iterative scheme started from a known stabilizing gain.
pub fn algorithm1_from_gain(
    ctx: &SolveContext,
    ap: &AugmentedPlant,
    supply: &SupplySpec,
    k0: &Mat,
    cfg: &IterationConfig,
) -> Result<SynthesisResult> {
    cfg.validate()?;
    let t0 = Instant::now();
    let analysis = analyze_theorem1_fixed_gain(ctx, ap, supply, k0)?;
    let Certificate::Primal(pa) = &analysis.certificate else { unreachable!() };
    let update = improve_gain_fixed_p(ctx, ap, supply, &pa.p1, &pa.p2)?;
    let Certificate::Primal(pu) = &update.certificate else { unreachable!() };

    let mut trace = vec![analysis.trace[0].clone(), update.trace[0].clone()];
    let mut best = update.clone();
    let mut anchor = Anchor { p1: pu.p1.clone(), p2: pu.p2.clone(), k: update.k.clone() };

    for it in 1..=cfg.max_iter {
        let ti = Instant::now();
        let (sol, vals, k, g) = match inner_approx_step(ctx, ap, supply, &anchor, cfg) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("iteration {it}: {e}; keeping the previous iterate");
                break;
            }
        };
        if sol.status != SolveStatus::Optimal {
            log::warn!(
                "iteration {it}: solver status {:?} ({}); keeping the previous iterate",
                sol.status,
                sol.diagnostics.backend_status
            );
            let mut r = record(&it.to_string(), None, sol.status, f64::NAN, &anchor.k, ti);
            r.delta_y = 0.0;
            r.delta_k = 0.0;
            trace.push(r);
            break;
        }
        let s = supply_at(supply, g, ap)?;
        let max_eig = dissipation_max_eig(ap, &vals, &k, &s)?;
        let y_new = hcat(&[&vals.p1, &vals.p2]);
        let y_old = hcat(&[&anchor.p1, &anchor.p2]);
        let dy = rel_change(&y_new, &y_old);
        let dk = rel_change(&k, &anchor.k);
        let mut r = record(&it.to_string(), g, sol.status, max_eig, &k, ti);
        r.delta_y = dy;
        r.delta_k = dk;
        trace.push(r);
        info!("iteration {it}: gamma = {g:?}, dY = {dy:.3e}, dK = {dk:.3e}, max eig = {max_eig:.3e}");
        if max_eig > -1e-9 {
            log::warn!("iteration {it}: dissipation LMI re-evaluates to max eigenvalue {max_eig:e}");
        }
        anchor = Anchor { p1: vals.p1.clone(), p2: vals.p2.clone(), k: k.clone() };
        best = SynthesisResult {
            mode: SynthesisMode::Iterative,
            k,
            gamma: g,
            certificate: Certificate::Primal(vals),
            trace: Vec::new(),
            seconds: 0.0,
            diagnostics: sol.diagnostics,
        };
        if dy.max(dk) < cfg.eps {
            break;
        }
    }
    best.mode = SynthesisMode::Iterative;
    best.trace = trace;
    best.seconds = t0.elapsed().as_secs_f64();
    Ok(best)
}
