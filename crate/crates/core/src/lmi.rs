//! Affine matrix inequalities of the synthesis conditions.
//!
//! All builders take their unknowns as [`AffineMat`]s, so the same code
//! produces the analysis LMI (gain fixed), the gain-update LMI (`P1`, `P2`
//! fixed), the dual synthesis LMI and plain numeric evaluations.

use crate::augplant::AugmentedPlant;
use crate::error::{Error, Result};
use crate::expr::AffineMat;
use crate::linalg::{kron_eye, Mat};
use crate::model::SupplyRate;

/// Direction of a matrix inequality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    /// `expr ⪰ εI`
    PositiveDefinite,
    /// `expr ⪯ −εI`
    NegativeDefinite,
}

#[derive(Clone, Debug)]
pub struct AffineLmi {
    pub name: String,
    pub expr: AffineMat,
    pub sense: Sense,
}

impl AffineLmi {
    pub fn new(name: impl Into<String>, expr: AffineMat, sense: Sense) -> Self {
        let expr = expr.map(crate::linalg::symmetrize);
        Self { name: name.into(), expr, sense }
    }

    pub fn dim(&self) -> usize {
        self.expr.nrows()
    }

    /// Strictness margin `ε = 1e−8 (1 + ‖constant‖∞)`.
    pub fn margin(&self) -> f64 {
        1e-8 * (1.0 + crate::linalg::inf_norm(&self.expr.constant))
    }

    /// Signed slack: the smallest eigenvalue of `expr` (for `⪰`) or of
    /// `−expr` (for `⪯`) at `x`, plus the infinity norm of the evaluated block.
    pub fn slack(&self, x: &[f64]) -> (f64, f64) {
        let v = self.expr.eval(x);
        let norm = crate::linalg::inf_norm(&v);
        let (lo, hi) = crate::linalg::sym_eig_range(&v);
        match self.sense {
            Sense::PositiveDefinite => (lo, norm),
            Sense::NegativeDefinite => (-hi, norm),
        }
    }
}

/// Lyapunov–Krasovskii matrices `P1 ∈ Sⁿ`, `P2 ∈ ℝ^{n×dn}`, `P3 ∈ S^{dn}` and
/// the per-interval weights `Q_i`, `R_i ∈ Sⁿ`.
#[derive(Clone, Debug)]
pub struct LyapunovBlocks {
    pub p1: AffineMat,
    pub p2: AffineMat,
    pub p3: AffineMat,
    pub q: Vec<AffineMat>,
    pub r: Vec<AffineMat>,
}

/// Supply-rate matrices, possibly affine in a gain variable.
#[derive(Clone, Debug)]
pub struct SupplyBlocks {
    pub j1: AffineMat,
    pub jtilde: AffineMat,
    pub j2: AffineMat,
    pub j3: AffineMat,
}

impl SupplyBlocks {
    pub fn fixed(s: &SupplyRate) -> Self {
        Self {
            j1: (&s.j1).into(),
            jtilde: (&s.jtilde).into(),
            j2: (&s.j2).into(),
            j3: (&s.j3).into(),
        }
    }

    /// `J1 = −γ I_m`, `J̃ = I_m`, `J2 = 0`, `J3 = γ I_q` with `γ` a `1 × 1`
    /// expression.
    pub fn l2gain(gamma: &AffineMat, m: usize, q: usize) -> Self {
        let scaled = |k: usize, s: f64| gamma.map(|g| Mat::identity(k, k) * (s * g[(0, 0)]));
        Self {
            j1: scaled(m, -1.0),
            jtilde: AffineMat::identity(m),
            j2: AffineMat::zeros(m, q),
            j3: scaled(q, 1.0),
        }
    }
}

fn check_shape(what: &str, e: &AffineMat, shape: (usize, usize)) -> Result<()> {
    if e.shape() != shape {
        return Err(Error::Dimension(format!("{what} is {:?}, expected {:?}", e.shape(), shape)));
    }
    Ok(())
}

fn check_lyapunov(ap: &AugmentedPlant, v: &LyapunovBlocks) -> Result<()> {
    let (n, e, nu) = (ap.dims.n, ap.dims.e, ap.dims.nu);
    check_shape("P1", &v.p1, (n, n))?;
    check_shape("P2", &v.p2, (n, e))?;
    check_shape("P3", &v.p3, (e, e))?;
    if v.q.len() != nu || v.r.len() != nu {
        return Err(Error::Dimension(format!(
            "{} Q and {} R blocks for {nu} intervals",
            v.q.len(),
            v.r.len()
        )));
    }
    for (i, (q, r)) in v.q.iter().zip(&v.r).enumerate() {
        check_shape(&format!("Q_{}", i + 1), q, (n, n))?;
        check_shape(&format!("R_{}", i + 1), r, (n, n))?;
    }
    Ok(())
}

fn check_supply(ap: &AugmentedPlant, s: &SupplyBlocks) -> Result<()> {
    let (m, q) = (ap.dims.m, ap.dims.q);
    check_shape("J1", &s.j1, (m, m))?;
    check_shape("Jtilde", &s.jtilde, (m, m))?;
    check_shape("J2", &s.j2, (m, q))?;
    check_shape("J3", &s.j3, (q, q))
}

/// `(I_β ⊗ K) ⊕ O_q` for an affine gain.
pub fn gain_lift_expr(k: &AffineMat, beta: usize, q: usize) -> AffineMat {
    AffineMat::block_diag(&[&k.eye_kron(beta), &AffineMat::zeros(q, q)])
}

/// Closed-loop state and output maps `(Ω, Σ)` for an affine gain.
pub fn closed_loop_exprs(ap: &AugmentedPlant, k: &AffineMat) -> Result<(AffineMat, AffineMat)> {
    check_shape("K", k, (ap.dims.p, ap.dims.n))?;
    let lift = gain_lift_expr(k, ap.dims.beta, ap.dims.q);
    let omega = AffineMat::from(&ap.a).add(&lift.lmul(&ap.b1));
    let sigma = AffineMat::from(&ap.c).add(&lift.lmul(&ap.b2));
    Ok((omega, sigma))
}

/// Block-diagonal weight over the lifted signal: a telescoping ladder of
/// `Q_i` and `r̂_i R_i` on the current and delayed states, `−I ⊗ R_i` on the
/// projection and residual coordinates, and `−J3` on the disturbance.
pub fn build_xi(ap: &AugmentedPlant, q: &[AffineMat], r: &[AffineMat], j3: &AffineMat) -> AffineMat {
    let nu = ap.dims.nu;
    let mut blocks: Vec<AffineMat> = Vec::with_capacity(2 + 3 * nu);
    let ladder = |i: usize| q[i].add(&r[i].scale(ap.rhat[i]));
    blocks.push(ladder(0));
    for j in 1..nu {
        blocks.push(ladder(j).sub(&q[j - 1]));
    }
    blocks.push(q[nu - 1].scale(-1.0));
    for (i, iv) in ap.dims.intervals.iter().enumerate() {
        blocks.push(r[i].eye_kron(iv.varkappa).scale(-1.0));
    }
    for (i, iv) in ap.dims.intervals.iter().enumerate() {
        if iv.mu > 0 {
            blocks.push(r[i].eye_kron(iv.mu).scale(-1.0));
        }
    }
    blocks.push(j3.scale(-1.0));
    debug_assert_eq!(blocks.iter().map(|b| b.nrows()).sum::<usize>(), ap.dims.state_block);
    AffineMat::block_diag(&blocks.iter().collect::<Vec<_>>())
}

/// `[P1, O_{n,νn}, P2 Î, O_{n,μn+q+m}]`: the Lyapunov row acting on the
/// lifted signal padded with the output coordinates.
pub fn lyapunov_row(ap: &AugmentedPlant, p1: &AffineMat, p2: &AffineMat) -> AffineMat {
    let d = &ap.dims;
    let n = d.n;
    AffineMat::hcat(&[
        p1,
        &AffineMat::zeros(n, d.nu * n),
        &p2.rmul(&ap.ihat),
        &AffineMat::zeros(n, d.mu * n + d.q + d.m),
    ])
}

/// `[M ⊗ I_n, O]`, the boundary/derivative map from the lifted signal to the
/// derivative of the normalized `f`-projections, padded to `cols` columns.
fn boundary_map(ap: &AugmentedPlant, cols: usize) -> Mat {
    let mk = kron_eye(&ap.mmat, ap.dims.n);
    let mut out = Mat::zeros(mk.nrows(), cols);
    out.view_mut((0, 0), mk.shape()).copy_from(&mk);
    out
}

/// Remainder of the dissipation LMI that does not involve `P1`:
/// `Sy([P2; O; ÎᵀP3; O]·[M⊗I, O] + [O; −J2ᵀ; J̃]·[Σ, O]) + Ξ ⊕ J1`.
pub fn build_phi(
    ap: &AugmentedPlant,
    p2: &AffineMat,
    p3: &AffineMat,
    q: &[AffineMat],
    r: &[AffineMat],
    sigma: &AffineMat,
    supply: &SupplyBlocks,
) -> Result<AffineMat> {
    let d = &ap.dims;
    let (n, m, w) = (d.n, d.m, d.phi_width);
    let left = AffineMat::vcat(&[
        p2,
        &AffineMat::zeros(d.nu * n, d.e),
        &p3.lmul(&ap.ihat.transpose()),
        &AffineMat::zeros(d.mu * n + d.q + m, d.e),
    ]);
    let deriv = left.mul(&boundary_map(ap, w).into())?;
    let out_col = AffineMat::vcat(&[&AffineMat::zeros(d.beta * n, m), &supply.j2.transpose().scale(-1.0), &supply.jtilde]);
    let out_row = AffineMat::hcat(&[sigma, &AffineMat::zeros(m, m)]);
    let output = out_col.mul(&out_row)?;
    let xi = build_xi(ap, q, r, &supply.j3);
    Ok(deriv.add(&output).sy().add(&AffineMat::block_diag(&[&xi, &supply.j1])))
}

/// Dissipation LMI as `Sy(𝐏ᵀ Π) + Φ` with `Π = [Ω, O_{n,m}]`.
pub fn theorem1_right(
    ap: &AugmentedPlant,
    v: &LyapunovBlocks,
    omega: &AffineMat,
    sigma: &AffineMat,
    supply: &SupplyBlocks,
) -> Result<AffineMat> {
    check_lyapunov(ap, v)?;
    check_supply(ap, supply)?;
    let row = lyapunov_row(ap, &v.p1, &v.p2);
    let pi = AffineMat::hcat(&[omega, &AffineMat::zeros(ap.dims.n, ap.dims.m)]);
    let phi = build_phi(ap, &v.p2, &v.p3, &v.q, &v.r, sigma, supply)?;
    Ok(row.transpose().mul(&pi)?.sy().add(&phi))
}

/// Dissipation LMI as `[Ψ, ΣᵀJ̃ᵀ; J̃Σ, J1]`, assembled through the selector
/// `S` and the full Lyapunov matrix `[P1 P2; P2ᵀ P3]`.
pub fn theorem1_left(
    ap: &AugmentedPlant,
    v: &LyapunovBlocks,
    omega: &AffineMat,
    sigma: &AffineMat,
    supply: &SupplyBlocks,
) -> Result<AffineMat> {
    check_lyapunov(ap, v)?;
    check_supply(ap, supply)?;
    let d = &ap.dims;
    let (n, sb) = (d.n, d.state_block);
    // S = [I_n 0 0 0 0; 0 0 Î 0 0]
    let mut sel = Mat::zeros(n + d.e, sb);
    sel.view_mut((0, 0), (n, n)).fill_with_identity();
    sel.view_mut((n, (1 + d.nu) * n), ap.ihat.shape()).copy_from(&ap.ihat);
    let pmat = AffineMat::blocks(&[vec![Some(&v.p1), Some(&v.p2)], vec![Some(&v.p2.transpose()), Some(&v.p3)]]);
    let dyn_rows = AffineMat::vcat(&[omega, &boundary_map(ap, sb).into()]);
    let lyap = pmat.lmul(&sel.transpose()).mul(&dyn_rows)?;
    let j2col = AffineMat::vcat(&[&AffineMat::zeros(d.beta * n, d.m), &supply.j2.transpose()]);
    let psi = lyap.sub(&j2col.mul(sigma)?).sy().add(&build_xi(ap, &v.q, &v.r, &supply.j3));
    let off = supply.jtilde.mul(sigma)?;
    Ok(AffineMat::blocks(&[
        vec![Some(&psi), Some(&off.transpose())],
        vec![Some(&off), Some(&supply.j1)],
    ]))
}

/// `[P1 P2; P2ᵀ P3] + O_n ⊕ diag(I_{d_i} ⊗ Q_i)`.
pub fn build_positivity(ap: &AugmentedPlant, v: &LyapunovBlocks) -> AffineMat {
    let pmat = AffineMat::blocks(&[vec![Some(&v.p1), Some(&v.p2)], vec![Some(&v.p2.transpose()), Some(&v.p3)]]);
    let mut diag = vec![AffineMat::zeros(ap.dims.n, ap.dims.n)];
    for (iv, q) in ap.dims.intervals.iter().zip(&v.q) {
        diag.push(q.eye_kron(iv.d));
    }
    pmat.add(&AffineMat::block_diag(&diag.iter().collect::<Vec<_>>()))
}

/// Constraints shared by every primal mode: positivity of the functional and
/// `Q_i ≻ 0`, `R_i ≻ 0`.
pub fn build_positivity_lmis(ap: &AugmentedPlant, v: &LyapunovBlocks) -> Vec<AffineLmi> {
    let mut out = vec![AffineLmi::new("positivity", build_positivity(ap, v), Sense::PositiveDefinite)];
    for (i, (q, r)) in v.q.iter().zip(&v.r).enumerate() {
        out.push(AffineLmi::new(format!("Q_{}", i + 1), q.clone(), Sense::PositiveDefinite));
        out.push(AffineLmi::new(format!("R_{}", i + 1), r.clone(), Sense::PositiveDefinite));
    }
    out
}

/// Positivity, weight positivity and the dissipation LMI (right form) for a
/// gain that may be fixed or affine.
pub fn build_theorem1(
    ap: &AugmentedPlant,
    v: &LyapunovBlocks,
    k: &AffineMat,
    supply: &SupplyBlocks,
) -> Result<Vec<AffineLmi>> {
    let (omega, sigma) = closed_loop_exprs(ap, k)?;
    let main = theorem1_right(ap, v, &omega, &sigma, supply)?;
    let mut out = build_positivity_lmis(ap, v);
    out.push(AffineLmi::new("dissipation", main, Sense::NegativeDefinite));
    Ok(out)
}

/// Unknowns of the dual synthesis condition: `X ∈ Sⁿ`, `V ∈ ℝ^{p×n}` and the
/// transformed Lyapunov blocks.
#[derive(Clone, Debug)]
pub struct DualBlocks {
    pub x: AffineMat,
    pub v: AffineMat,
    pub lyap: LyapunovBlocks,
}

/// `Sy(col[I_n; α_1 I_n … α_β I_n; O]·[−X, Π̇]) + [O_n, 𝐏̇; *, Φ̇]`, with
/// `Π̇`, `Σ̇` the plant maps composed with `(I_β ⊗ X) ⊕ I_q` and
/// `(I_β ⊗ V) ⊕ O_q`.
pub fn build_theorem2(
    ap: &AugmentedPlant,
    dv: &DualBlocks,
    alphas: &[f64],
    supply: &SupplyBlocks,
) -> Result<Vec<AffineLmi>> {
    let d = &ap.dims;
    let (n, beta, q, m) = (d.n, d.beta, d.q, d.m);
    if alphas.len() != beta {
        return Err(Error::Dimension(format!("{} multipliers given, expected beta = {beta}", alphas.len())));
    }
    check_shape("X", &dv.x, (n, n))?;
    check_shape("V", &dv.v, (d.p, n))?;
    check_lyapunov(ap, &dv.lyap)?;
    check_supply(ap, supply)?;

    let xlift = AffineMat::block_diag(&[&dv.x.eye_kron(beta), &AffineMat::identity(q)]);
    let vlift = gain_lift_expr(&dv.v, beta, q);
    let omega = xlift.lmul(&ap.a).add(&vlift.lmul(&ap.b1));
    let sigma = xlift.lmul(&ap.c).add(&vlift.lmul(&ap.b2));
    let pi = AffineMat::hcat(&[&omega, &AffineMat::zeros(n, m)]);

    let mut col = Mat::zeros(n + d.phi_width, n);
    col.view_mut((0, 0), (n, n)).fill_with_identity();
    for (i, &a) in alphas.iter().enumerate() {
        col.view_mut((n * (i + 1), 0), (n, n)).copy_from(&(Mat::identity(n, n) * a));
    }
    let outer = AffineMat::hcat(&[&dv.x.scale(-1.0), &pi]).lmul(&col).sy();

    let lv = &dv.lyap;
    let row = lyapunov_row(ap, &lv.p1, &lv.p2);
    let phi = build_phi(ap, &lv.p2, &lv.p3, &lv.q, &lv.r, &sigma, supply)?;
    let inner = AffineMat::blocks(&[
        vec![Some(&AffineMat::zeros(n, n)), Some(&row)],
        vec![Some(&row.transpose()), Some(&phi)],
    ]);

    let mut out = build_positivity_lmis(ap, lv);
    out.push(AffineLmi::new("dual_dissipation", outer.add(&inner), Sense::NegativeDefinite));
    Ok(out)
}

/// Numeric anchor of the inner convex approximation.
#[derive(Clone, Debug)]
pub struct Anchor {
    pub p1: Mat,
    pub p2: Mat,
    pub k: Mat,
}

/// `N = [𝐁₁ O_{n,m}]·[(I_β ⊗ K) ⊕ O_{q+m}]`.
pub fn input_coupling(ap: &AugmentedPlant, k: &AffineMat) -> AffineMat {
    let lift = gain_lift_expr(k, ap.dims.beta, ap.dims.q).lmul(&ap.b1);
    AffineMat::hcat(&[&lift, &AffineMat::zeros(ap.dims.n, ap.dims.m)])
}

/// Convex inner approximation of the dissipation LMI around `anchor`:
/// `[[Φ̂ + Sy(𝐏̃ᵀN + 𝐏ᵀÑ − 𝐏̃ᵀÑ), 𝐏ᵀ − 𝐏̃ᵀ, (N − Ñ)ᵀ]; [*, −Z, O]; [*, *, Z − I]]`
/// with `Φ̂ = Sy(𝐏ᵀ[𝐀 O]) + Φ`.
pub fn build_inner_approx(
    ap: &AugmentedPlant,
    v: &LyapunovBlocks,
    k: &AffineMat,
    z: &AffineMat,
    anchor: &Anchor,
    supply: &SupplyBlocks,
) -> Result<AffineLmi> {
    check_lyapunov(ap, v)?;
    check_supply(ap, supply)?;
    let d = &ap.dims;
    let n = d.n;
    check_shape("Z", z, (n, n))?;
    let (_, sigma) = closed_loop_exprs(ap, k)?;
    let row = lyapunov_row(ap, &v.p1, &v.p2);
    let row_anchor = lyapunov_row(ap, &(&anchor.p1).into(), &(&anchor.p2).into());
    let open = AffineMat::hcat(&[&AffineMat::from(&ap.a), &AffineMat::zeros(n, d.m)]);
    let phi = build_phi(ap, &v.p2, &v.p3, &v.q, &v.r, &sigma, supply)?;
    let phi_hat = row.transpose().mul(&open)?.sy().add(&phi);

    let coupling = input_coupling(ap, k);
    let coupling_anchor = input_coupling(ap, &(&anchor.k).into());
    let cross = row_anchor
        .transpose()
        .mul(&coupling)?
        .add(&row.transpose().mul(&coupling_anchor)?)
        .sub(&row_anchor.transpose().mul(&coupling_anchor)?);
    let top = phi_hat.add(&cross.sy());
    let dp = row.sub(&row_anchor).transpose();
    let dn = coupling.sub(&coupling_anchor).transpose();
    let expr = AffineMat::blocks(&[
        vec![Some(&top), Some(&dp), Some(&dn)],
        vec![Some(&dp.transpose()), Some(&z.scale(-1.0)), Some(&AffineMat::zeros(n, n))],
        vec![Some(&dn.transpose()), None, Some(&z.sub(&AffineMat::identity(n)))],
    ]);
    Ok(AffineLmi::new("inner_approximation", expr, Sense::NegativeDefinite))
}

/// Numeric Lyapunov matrices.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct LyapunovValues {
    #[serde(serialize_with = "ser_mat")]
    pub p1: Mat,
    #[serde(serialize_with = "ser_mat")]
    pub p2: Mat,
    #[serde(serialize_with = "ser_mat")]
    pub p3: Mat,
    #[serde(serialize_with = "ser_mats")]
    pub q: Vec<Mat>,
    #[serde(serialize_with = "ser_mats")]
    pub r: Vec<Mat>,
}

fn ser_mat<S: serde::Serializer>(m: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
    serde::Serialize::serialize(&crate::linalg::to_rows(m), s)
}

fn ser_mats<S: serde::Serializer>(m: &[Mat], s: S) -> std::result::Result<S::Ok, S::Error> {
    serde::Serialize::serialize(&m.iter().map(crate::linalg::to_rows).collect::<Vec<_>>(), s)
}

impl LyapunovValues {
    pub fn blocks(&self) -> LyapunovBlocks {
        LyapunovBlocks {
            p1: (&self.p1).into(),
            p2: (&self.p2).into(),
            p3: (&self.p3).into(),
            q: self.q.iter().map(AffineMat::from).collect(),
            r: self.r.iter().map(AffineMat::from).collect(),
        }
    }
}

/// Evaluates the dissipation LMI (right form) numerically.
pub fn dissipation_matrix(ap: &AugmentedPlant, v: &LyapunovValues, k: &Mat, supply: &SupplyRate) -> Result<Mat> {
    let (omega, sigma) = ap.closed_loop_maps(k)?;
    let e = theorem1_right(ap, &v.blocks(), &omega.into(), &sigma.into(), &SupplyBlocks::fixed(supply))?;
    Ok(crate::linalg::symmetrize(&e.constant))
}

/// Evaluates the positivity block numerically.
pub fn positivity_matrix(ap: &AugmentedPlant, v: &LyapunovValues) -> Mat {
    crate::linalg::symmetrize(&build_positivity(ap, &v.blocks()).constant)
}
