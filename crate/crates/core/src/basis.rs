//! Per-interval basis families.
//!
//! Each delay interval `[-r_i, -r_{i-1}]` carries three ordered lists of
//! scalar functions:
//!
//! * `phi`: functions that are only approximated (projected onto `h`),
//! * `varphi`: square-integrable functions kept exactly,
//! * `f`: differentiable functions whose derivative closes over `h`.
//!
//! They are stacked as `h = [varphi; f]` and `g = [phi; h]`. Every kernel
//! coefficient index, Gram block and LMI block downstream relies on this
//! single ordering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{inf_norm, Mat, Vector};

/// A scalar function of the delay variable `τ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisFunction {
    /// `τ^k`; `k = 0` is the constant 1.
    Poly { k: u32 },
    /// `sin(ωτ)`
    Sin { omega: f64 },
    /// `cos(ωτ)`
    Cos { omega: f64 },
    /// `exp(sin(ωτ))`
    ExpSin { omega: f64 },
    /// `exp(cos(ωτ))`
    ExpCos { omega: f64 },
    /// `1 / (sin²(aτ) + 1)`
    InvSin2 { a: f64 },
    /// `1 / (cos²(aτ) + 1)`
    InvCos2 { a: f64 },
    /// Piecewise-linear interpolation of `(τ, value)` samples, held constant
    /// outside the sampled range.
    Tabulated { samples: Vec<[f64; 2]> },
}

impl BasisFunction {
    pub fn eval(&self, tau: f64) -> f64 {
        match self {
            Self::Poly { k } => tau.powi(*k as i32),
            Self::Sin { omega } => (omega * tau).sin(),
            Self::Cos { omega } => (omega * tau).cos(),
            Self::ExpSin { omega } => (omega * tau).sin().exp(),
            Self::ExpCos { omega } => (omega * tau).cos().exp(),
            Self::InvSin2 { a } => 1.0 / ((a * tau).sin().powi(2) + 1.0),
            Self::InvCos2 { a } => 1.0 / ((a * tau).cos().powi(2) + 1.0),
            Self::Tabulated { samples } => interp_linear(samples, tau),
        }
    }

    /// Angular frequency used to pre-split quadrature panels.
    pub fn frequency(&self) -> f64 {
        match self {
            Self::Sin { omega }
            | Self::Cos { omega }
            | Self::ExpSin { omega }
            | Self::ExpCos { omega } => omega.abs(),
            Self::InvSin2 { a } | Self::InvCos2 { a } => 2.0 * a.abs(),
            Self::Poly { .. } | Self::Tabulated { .. } => 0.0,
        }
    }

    /// Registered derivative rule as a linear combination of other basis
    /// functions. `None` when no closed rule is registered.
    pub fn derivative(&self) -> Option<Vec<(f64, BasisFunction)>> {
        match self {
            Self::Poly { k: 0 } => Some(vec![]),
            Self::Poly { k } => Some(vec![(*k as f64, Self::Poly { k: k - 1 })]),
            Self::Sin { omega } => Some(vec![(*omega, Self::Cos { omega: *omega })]),
            Self::Cos { omega } => Some(vec![(-omega, Self::Sin { omega: *omega })]),
            _ => None,
        }
    }

    fn same_as(&self, other: &BasisFunction) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()));
        match (self, other) {
            (Self::Poly { k: a }, Self::Poly { k: b }) => a == b,
            (Self::Sin { omega: a }, Self::Sin { omega: b })
            | (Self::Cos { omega: a }, Self::Cos { omega: b })
            | (Self::ExpSin { omega: a }, Self::ExpSin { omega: b })
            | (Self::ExpCos { omega: a }, Self::ExpCos { omega: b })
            | (Self::InvSin2 { a }, Self::InvSin2 { a: b })
            | (Self::InvCos2 { a }, Self::InvCos2 { a: b }) => close(*a, *b),
            (Self::Tabulated { samples: a }, Self::Tabulated { samples: b }) => a == b,
            _ => false,
        }
    }

    fn is_closed_form(&self) -> bool {
        !matches!(self, Self::Tabulated { .. })
    }
}

impl std::fmt::Display for BasisFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Poly { k } => write!(f, "poly({k})"),
            Self::Sin { omega } => write!(f, "sin({omega})"),
            Self::Cos { omega } => write!(f, "cos({omega})"),
            Self::ExpSin { omega } => write!(f, "exp_sin({omega})"),
            Self::ExpCos { omega } => write!(f, "exp_cos({omega})"),
            Self::InvSin2 { a } => write!(f, "inv_sin2({a})"),
            Self::InvCos2 { a } => write!(f, "inv_cos2({a})"),
            Self::Tabulated { samples } => write!(f, "tabulated({} samples)", samples.len()),
        }
    }
}

fn interp_linear(samples: &[[f64; 2]], tau: f64) -> f64 {
    match samples {
        [] => 0.0,
        [only] => only[1],
        _ => {
            if tau <= samples[0][0] {
                return samples[0][1];
            }
            let last = samples[samples.len() - 1];
            if tau >= last[0] {
                return last[1];
            }
            let k = samples.partition_point(|s| s[0] <= tau);
            let (a, b) = (samples[k - 1], samples[k]);
            let w = (tau - a[0]) / (b[0] - a[0]);
            a[1] + w * (b[1] - a[1])
        }
    }
}

/// `f = [τ^0 … τ^σ, sin(ωτ) … sin(λωτ), cos(ωτ) … cos(λωτ)]`.
pub fn poly_trig_family(poly_order: u32, trig: Option<(f64, u32)>) -> Vec<BasisFunction> {
    let mut f: Vec<_> = (0..=poly_order).map(|k| BasisFunction::Poly { k }).collect();
    if let Some((omega, harmonics)) = trig {
        for k in 1..=harmonics {
            f.push(BasisFunction::Sin { omega: omega * k as f64 });
        }
        for k in 1..=harmonics {
            f.push(BasisFunction::Cos { omega: omega * k as f64 });
        }
    }
    f
}

/// Derivative-closure matrix `M` with `f'(τ) = M [varphi(τ); f(τ)]`.
pub fn build_closure_matrix(f: &[BasisFunction], varphi: &[BasisFunction]) -> Result<Mat> {
    let delta = varphi.len();
    let mut m = Mat::zeros(f.len(), delta + f.len());
    for (row, func) in f.iter().enumerate() {
        let terms = func.derivative().ok_or_else(|| {
            Error::Closure(format!(
                "{func} in f: only W^{{1,2}} families with registered closure allowed in f"
            ))
        })?;
        for (coef, target) in terms {
            let col = f
                .iter()
                .position(|g| g.same_as(&target))
                .map(|j| delta + j)
                .or_else(|| varphi.iter().position(|g| g.same_as(&target)))
                .ok_or_else(|| {
                    Error::Closure(format!("derivative of {func} needs {target}, which is missing"))
                })?;
            m[(row, col)] += coef;
        }
    }
    Ok(m)
}

/// The basis attached to one delay interval.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalBasis {
    /// 1-based interval index.
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
    pub phi: Vec<BasisFunction>,
    pub varphi: Vec<BasisFunction>,
    pub f: Vec<BasisFunction>,
    /// `d × ϰ` derivative-closure matrix.
    pub m: Mat,
}

impl IntervalBasis {
    /// Builds the basis and derives `M` from the registered derivative rules.
    pub fn new(
        index: usize,
        lo: f64,
        hi: f64,
        phi: Vec<BasisFunction>,
        varphi: Vec<BasisFunction>,
        f: Vec<BasisFunction>,
    ) -> Result<Self> {
        let m = build_closure_matrix(&f, &varphi)?;
        Self::with_closure(index, lo, hi, phi, varphi, f, m)
    }

    /// Builds the basis with a user-supplied closure matrix, which is checked
    /// against finite differences.
    pub fn with_closure(
        index: usize,
        lo: f64,
        hi: f64,
        phi: Vec<BasisFunction>,
        varphi: Vec<BasisFunction>,
        f: Vec<BasisFunction>,
        m: Mat,
    ) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::Domain(format!(
                "interval {index}: empty interval [{lo}, {hi}]"
            )));
        }
        if f.is_empty() {
            return Err(Error::Domain(format!("interval {index}: f must be non-empty")));
        }
        if let Some(bad) = f.iter().chain(varphi.iter()).find(|b| !b.is_closed_form()) {
            return Err(Error::Domain(format!(
                "interval {index}: {bad} is only admitted in phi"
            )));
        }
        for b in &phi {
            if let BasisFunction::Tabulated { samples } = b {
                if samples.len() < 2 || samples.windows(2).any(|w| !(w[1][0] > w[0][0])) {
                    return Err(Error::Domain(format!(
                        "interval {index}: tabulated function needs >= 2 increasing samples"
                    )));
                }
            }
        }
        if m.shape() != (f.len(), varphi.len() + f.len()) {
            return Err(Error::Dimension(format!(
                "interval {index}: closure matrix is {:?}, expected {:?}",
                m.shape(),
                (f.len(), varphi.len() + f.len())
            )));
        }
        let basis = Self { index, lo, hi, phi, varphi, f, m };
        let err = basis.closure_residual(200);
        if err > 1e-6 {
            return Err(Error::Closure(format!(
                "interval {index}: f' != M h (finite-difference residual {err:e})"
            )));
        }
        Ok(basis)
    }

    pub fn d(&self) -> usize {
        self.f.len()
    }
    pub fn delta(&self) -> usize {
        self.varphi.len()
    }
    pub fn mu(&self) -> usize {
        self.phi.len()
    }
    /// `ϰ = δ + d`, the length of `h`.
    pub fn varkappa(&self) -> usize {
        self.delta() + self.d()
    }
    /// `κ = μ + ϰ`, the length of `g`.
    pub fn kappa(&self) -> usize {
        self.mu() + self.varkappa()
    }
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    /// Every function in `g` order.
    pub fn g_functions(&self) -> impl Iterator<Item = &BasisFunction> {
        self.phi.iter().chain(self.varphi.iter()).chain(self.f.iter())
    }

    /// Highest angular frequency present in the family.
    pub fn max_frequency(&self) -> f64 {
        self.g_functions().map(BasisFunction::frequency).fold(0.0, f64::max)
    }

    fn contains(&self, tau: f64) -> bool {
        let slack = 1e-12 * (1.0 + self.lo.abs());
        tau >= self.lo - slack && tau <= self.hi + slack
    }

    /// `(g(τ), h(τ))`.
    pub fn eval(&self, tau: f64) -> Result<(Vector, Vector)> {
        if !self.contains(tau) {
            return Err(Error::Domain(format!(
                "τ = {tau} outside interval {} = [{}, {}]",
                self.index, self.lo, self.hi
            )));
        }
        let g = self.g_at(tau);
        let h = g.rows(self.mu(), self.varkappa()).into_owned();
        Ok((g, h))
    }

    /// `g(τ)` without the domain check.
    pub fn g_at(&self, tau: f64) -> Vector {
        Vector::from_iterator(self.kappa(), self.g_functions().map(|b| b.eval(tau)))
    }

    pub fn h_at(&self, tau: f64) -> Vector {
        Vector::from_iterator(
            self.varkappa(),
            self.varphi.iter().chain(self.f.iter()).map(|b| b.eval(tau)),
        )
    }

    pub fn phi_at(&self, tau: f64) -> Vector {
        Vector::from_iterator(self.mu(), self.phi.iter().map(|b| b.eval(tau)))
    }

    pub fn f_at(&self, tau: f64) -> Vector {
        Vector::from_iterator(self.d(), self.f.iter().map(|b| b.eval(tau)))
    }

    /// `(f(-r_{i-1}), f(-r_i))`, i.e. the upper then the lower endpoint.
    pub fn boundary(&self) -> (Vector, Vector) {
        (self.f_at(self.hi), self.f_at(self.lo))
    }

    /// Max over `samples` interior points of
    /// `‖FD(f)(τ) − M h(τ)‖∞ / (1 + ‖M h(τ)‖∞)`.
    pub fn closure_residual(&self, samples: usize) -> f64 {
        let step = 1e-6 * self.len();
        let mut worst = 0.0_f64;
        for k in 0..samples {
            let tau = self.lo + self.len() * (k as f64 + 0.5) / samples as f64;
            let fd = (self.f_at(tau + step) - self.f_at(tau - step)) / (2.0 * step);
            let mh = &self.m * self.h_at(tau);
            let num = inf_norm(&Mat::from_column_slice(fd.len(), 1, (fd - &mh).as_slice()));
            let den = 1.0 + mh.amax();
            worst = worst.max(num / den);
        }
        worst
    }
}

/// Basis declaration as stored in the system description file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisDecl {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<FamilyDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_explicit: Option<ExplicitDecl>,
    #[serde(default)]
    pub varphi: Vec<BasisFunction>,
    #[serde(default)]
    pub phi: Vec<BasisFunction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyDecl {
    pub poly_order: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trig: Option<TrigDecl>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigDecl {
    pub omega: f64,
    pub harmonics: u32,
}

/// Explicit `f` list, optionally with its closure matrix (`d × ϰ`, row-major).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitDecl {
    pub functions: Vec<BasisFunction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closure: Option<Vec<Vec<f64>>>,
}

impl BasisDecl {
    /// Ordered `f` list of the declaration.
    pub fn f_functions(&self) -> Result<Vec<BasisFunction>> {
        match (&self.f, &self.f_explicit) {
            (Some(fam), None) => Ok(poly_trig_family(
                fam.poly_order,
                fam.trig.as_ref().map(|t| (t.omega, t.harmonics)),
            )),
            (None, Some(ex)) => Ok(ex.functions.clone()),
            (Some(_), Some(_)) => Err(Error::Domain(
                "basis declares both `f` and `f_explicit`".into(),
            )),
            (None, None) => Err(Error::Domain("basis declares neither `f` nor `f_explicit`".into())),
        }
    }

    /// `κ_i`, or `None` if the declaration is malformed.
    pub fn kappa(&self) -> Option<usize> {
        self.f_functions().ok().map(|f| f.len() + self.varphi.len() + self.phi.len())
    }

    pub fn build(&self, index: usize, lo: f64, hi: f64) -> Result<IntervalBasis> {
        let f = self.f_functions()?;
        match self.f_explicit.as_ref().and_then(|e| e.closure.as_ref()) {
            Some(rows) => {
                if rows.iter().any(|r| r.len() != self.varphi.len() + f.len()) {
                    return Err(Error::Dimension(format!(
                        "interval {index}: closure rows must have {} entries",
                        self.varphi.len() + f.len()
                    )));
                }
                let m = crate::linalg::from_rows(rows);
                IntervalBasis::with_closure(index, lo, hi, self.phi.clone(), self.varphi.clone(), f, m)
            }
            None => IntervalBasis::new(index, lo, hi, self.phi.clone(), self.varphi.clone(), f),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn poly(k: u32) -> BasisFunction {
        BasisFunction::Poly { k }
    }

    fn paper_interval1() -> IntervalBasis {
        IntervalBasis::new(
            1,
            -1.0,
            0.0,
            vec![
                BasisFunction::ExpSin { omega: 20.0 },
                BasisFunction::ExpCos { omega: 20.0 },
            ],
            vec![BasisFunction::InvSin2 { a: 1.2 }],
            poly_trig_family(1, Some((20.0, 1))),
        )
        .unwrap()
    }

    #[test]
    fn eval_affine_basis() {
        let b = IntervalBasis::new(1, -1.0, 0.0, vec![], vec![], vec![poly(0), poly(1)]).unwrap();
        let (g, h) = b.eval(-0.5).unwrap();
        assert_eq!(g.as_slice(), &[1.0, -0.5]);
        assert_eq!(h.as_slice(), &[1.0, -0.5]);
    }

    #[test]
    fn eval_paper_interval_at_zero() {
        let b = paper_interval1();
        let (g, h) = b.eval(0.0).unwrap();
        let expect = [1.0, E, 1.0, 1.0, 0.0, 0.0, 1.0];
        for (a, e) in g.iter().zip(expect) {
            assert!((a - e).abs() < 1e-15);
        }
        assert_eq!(h.as_slice(), &g.as_slice()[2..]);
    }

    #[test]
    fn eval_outside_interval_is_domain_error() {
        let b = paper_interval1();
        assert!(matches!(b.eval(-1.1), Err(Error::Domain(_))));
    }

    #[test]
    fn closure_matrix_poly_trig() {
        let f = poly_trig_family(1, Some((20.0, 1)));
        let m = build_closure_matrix(&f, &[BasisFunction::InvSin2 { a: 1.2 }]).unwrap();
        #[rustfmt::skip]
        let expect = Mat::from_row_slice(4, 5, &[
            0.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 20.0,
            0.0, 0.0, 0.0, -20.0, 0.0,
        ]);
        assert_eq!(m, expect);
    }

    #[test]
    fn closure_matrix_two_harmonics() {
        let f = poly_trig_family(1, Some((18.0, 2)));
        let m = build_closure_matrix(&f, &[]).unwrap();
        // sin(36τ)' = 36 cos(36τ)
        assert_eq!(m[(3, 5)], 36.0);
        assert_eq!(m[(4, 2)], -18.0);
    }

    #[test]
    fn closure_constant_is_zero_row() {
        let m = build_closure_matrix(&[poly(0)], &[BasisFunction::InvCos2 { a: 0.7 }]).unwrap();
        assert_eq!(m, Mat::zeros(1, 2));
    }

    #[test]
    fn closure_missing_partner() {
        let err = build_closure_matrix(&[BasisFunction::Sin { omega: 20.0 }], &[]).unwrap_err();
        assert!(err.to_string().contains("cos(20)"), "{err}");
        let err = build_closure_matrix(&[BasisFunction::ExpSin { omega: 20.0 }], &[]).unwrap_err();
        assert!(err.to_string().contains("only W^{1,2}"), "{err}");
    }

    #[test]
    fn boundary_values() {
        let b = IntervalBasis::new(1, -1.0, 0.0, vec![], vec![], vec![poly(0), poly(1)]).unwrap();
        let (up, low) = b.boundary();
        assert_eq!(up.as_slice(), &[1.0, 0.0]);
        assert_eq!(low.as_slice(), &[1.0, -1.0]);

        let b2 = IntervalBasis::new(2, -1.7, -1.0, vec![], vec![], poly_trig_family(1, Some((18.0, 1))))
            .unwrap();
        let (up, _) = b2.boundary();
        let expect = [1.0, -1.0, (-18.0f64).sin(), (-18.0f64).cos()];
        for (a, e) in up.iter().zip(expect) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn closure_invariant_holds_for_paper_basis() {
        for lambda in 1..=3 {
            let b = IntervalBasis::new(
                2,
                -1.7,
                -1.0,
                vec![],
                vec![BasisFunction::InvCos2 { a: 0.7 }],
                poly_trig_family(2, Some((18.0, lambda))),
            )
            .unwrap();
            assert!(b.closure_residual(200) <= 1e-6);
        }
    }

    #[test]
    fn wrong_explicit_closure_rejected() {
        let f = vec![poly(0), poly(1)];
        let bad = Mat::zeros(2, 2);
        assert!(IntervalBasis::with_closure(1, -1.0, 0.0, vec![], vec![], f, bad).is_err());
    }

    #[test]
    fn tabulated_only_in_phi() {
        let tab = BasisFunction::Tabulated { samples: vec![[-1.0, 0.0], [0.0, 1.0]] };
        assert!(IntervalBasis::new(1, -1.0, 0.0, vec![tab.clone()], vec![], vec![poly(0)]).is_ok());
        assert!(IntervalBasis::new(1, -1.0, 0.0, vec![], vec![tab], vec![poly(0)]).is_err());
        assert_eq!(
            BasisFunction::Tabulated { samples: vec![[-1.0, 0.0], [0.0, 1.0]] }.eval(-0.25),
            0.75
        );
    }

    #[test]
    fn closure_is_deterministic() {
        let f = poly_trig_family(3, Some((20.0, 2)));
        let a = build_closure_matrix(&f, &[]).unwrap();
        let b = build_closure_matrix(&f, &[]).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }
}
