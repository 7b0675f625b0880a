//! Gram matrices, least-squares projection of `phi` onto `span(h)`, the
//! projection-error Gram, and the transfer matrices that feed the augmented
//! plant.

use log::warn;
use serde::Serialize;

use crate::basis::IntervalBasis;
use crate::error::{Error, Result};
use crate::linalg::{spd_roots, sym_eig_range, vcat, Mat, Vector};
use crate::quad::{integrate, presplit_panels, QuadTol};

/// Condition number of `G` above which a warning is logged.
pub const COND_WARN: f64 = 1e12;
/// Relative eigenvalue floor for the positive definite Grams.
pub const PD_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct GramData {
    /// `∫ g gᵀ`, `κ × κ`.
    #[serde(serialize_with = "ser_mat")]
    pub g: Mat,
    /// `∫ h hᵀ`, `ϰ × ϰ`.
    #[serde(serialize_with = "ser_mat")]
    pub h: Mat,
    /// `∫ f fᵀ`, `d × d`.
    #[serde(serialize_with = "ser_mat")]
    pub f: Mat,
    /// `∫ phi hᵀ`, `μ × ϰ`.
    #[serde(serialize_with = "ser_mat")]
    pub gamma: Mat,
    /// `∫ phi phiᵀ`, `μ × μ`.
    #[serde(serialize_with = "ser_mat")]
    pub phi2: Mat,
    /// Projection-error Gram `phi2 − Γ H⁻¹ Γᵀ`.
    #[serde(serialize_with = "ser_mat")]
    pub e: Mat,
    /// Least-squares coefficients `Γ H⁻¹`, `μ × ϰ`.
    #[serde(serialize_with = "ser_mat")]
    pub proj: Mat,
    #[serde(serialize_with = "ser_mat")]
    pub sqrt_h: Mat,
    #[serde(serialize_with = "ser_mat")]
    pub sqrt_h_inv: Mat,
    #[serde(serialize_with = "ser_mat")]
    pub sqrt_f: Mat,
    #[serde(serialize_with = "ser_mat")]
    pub sqrt_f_inv: Mat,
    #[serde(serialize_with = "ser_mat")]
    pub sqrt_e: Mat,
    #[serde(serialize_with = "ser_mat")]
    pub sqrt_e_inv: Mat,
    /// `[Γ √H⁻¹; √H]`, `κ × ϰ`.
    #[serde(serialize_with = "ser_mat")]
    pub t: Mat,
    /// `[√E; 0]`, `κ × μ`.
    #[serde(serialize_with = "ser_mat")]
    pub t_tilde: Mat,
    pub cond_g: f64,
    /// Largest quadrature error estimate over all entries.
    pub quad_error: f64,
}

fn ser_mat<S: serde::Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
    crate::linalg::to_rows(m).serialize(s)
}

/// Integrates every Gram block of `basis` and derives the projection data.
pub fn compute_gram(basis: &IntervalBasis, tol: QuadTol) -> Result<GramData> {
    if !(tol.rel > 0.0 && tol.rel <= 1e-6) || !(tol.abs > 0.0) {
        return Err(Error::Domain(format!(
            "quadrature tolerances rel = {}, abs = {} (need 0 < rel <= 1e-6, abs > 0)",
            tol.rel, tol.abs
        )));
    }
    let kappa = basis.kappa();
    let (mu, delta, vk, d) = (basis.mu(), basis.delta(), basis.varkappa(), basis.d());

    let tri: Vec<(usize, usize)> =
        (0..kappa).flat_map(|j| (0..=j).map(move |i| (i, j))).collect();
    let panels = presplit_panels(2.0 * basis.max_frequency(), basis.len());
    let res = integrate(
        |tau| {
            let g = basis.g_at(tau);
            Vector::from_iterator(tri.len(), tri.iter().map(|&(i, j)| g[i] * g[j]))
        },
        basis.lo,
        basis.hi,
        panels,
        tol,
    );
    if !res.converged {
        warn!(
            "interval {}: Gram quadrature stopped at error {:e} after {} panels",
            basis.index, res.error, res.panels
        );
    }
    let mut g = Mat::zeros(kappa, kappa);
    for (k, &(i, j)) in tri.iter().enumerate() {
        g[(i, j)] = res.value[k];
        g[(j, i)] = res.value[k];
    }

    let h = g.view((mu, mu), (vk, vk)).into_owned();
    let f = g.view((mu + delta, mu + delta), (d, d)).into_owned();
    let gamma = g.view((0, mu), (mu, vk)).into_owned();
    let phi2 = g.view((0, 0), (mu, mu)).into_owned();

    let roots_h = spd_roots(&h, PD_FLOOR, false, &format!("H_{}", basis.index))?;
    let roots_f = spd_roots(&f, PD_FLOOR, false, &format!("F_{}", basis.index))?;
    let h_inv = &roots_h.inv_sqrt * &roots_h.inv_sqrt;
    let proj = &gamma * &h_inv;
    let e = crate::linalg::symmetrize(&(&phi2 - &proj * gamma.transpose()));

    let roots_e = if mu > 0 {
        let (emin, _) = sym_eig_range(&e);
        let (_, pmax) = sym_eig_range(&phi2);
        if emin <= PD_FLOOR * pmax {
            return Err(Error::ApproxInSpan { interval: basis.index, min_eig: emin });
        }
        spd_roots(&e, PD_FLOOR, true, &format!("E_{}", basis.index))?
    } else {
        spd_roots(&e, PD_FLOOR, true, "E")?
    };

    let (gmin, gmax) = sym_eig_range(&g);
    let cond_g = if gmin > 0.0 { gmax / gmin } else { f64::INFINITY };
    if cond_g > COND_WARN {
        warn!("interval {}: Gram matrix condition number {cond_g:e}", basis.index);
    }

    let t = vcat(&[&(&gamma * &roots_h.inv_sqrt), &roots_h.sqrt]);
    let t_tilde = vcat(&[&roots_e.sqrt, &Mat::zeros(vk, mu)]);

    Ok(GramData {
        g,
        h,
        f,
        gamma,
        phi2,
        e,
        proj,
        sqrt_h: roots_h.sqrt,
        sqrt_h_inv: roots_h.inv_sqrt,
        sqrt_f: roots_f.sqrt,
        sqrt_f_inv: roots_f.inv_sqrt,
        sqrt_e: roots_e.sqrt,
        sqrt_e_inv: roots_e.inv_sqrt,
        t,
        t_tilde,
        cond_g,
        quad_error: res.error,
    })
}

/// Least-squares residual `ε(τ) = phi(τ) − Γ H⁻¹ h(τ)`.
pub fn projection_error_at(gd: &GramData, basis: &IntervalBasis, tau: f64) -> Result<Vector> {
    let (g, h) = basis.eval(tau)?;
    let phi = g.rows(0, basis.mu()).into_owned();
    Ok(phi - &gd.proj * h)
}

/// `(T, T̃)`.
pub fn transfer_matrices(gd: &GramData) -> (Mat, Mat) {
    (gd.t.clone(), gd.t_tilde.clone())
}

impl GramData {
    /// `Γ̂ = [Γ H⁻¹; I_ϰ]`.
    pub fn gamma_hat(&self) -> Mat {
        let vk = self.h.nrows();
        vcat(&[&self.proj, &Mat::identity(vk, vk)])
    }

    /// `Ĩ = [I_μ; 0]`.
    pub fn i_tilde(&self) -> Mat {
        let mu = self.e.nrows();
        vcat(&[&Mat::identity(mu, mu), &Mat::zeros(self.h.nrows(), mu)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisFunction::{self, Poly};

    fn affine_with(phi: Vec<BasisFunction>) -> IntervalBasis {
        IntervalBasis::new(1, -1.0, 0.0, phi, vec![], vec![Poly { k: 0 }, Poly { k: 1 }]).unwrap()
    }

    #[test]
    fn affine_gram_matches_analytic() {
        let gd = compute_gram(&affine_with(vec![]), QuadTol::default()).unwrap();
        let expect = Mat::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0 / 3.0]);
        assert!((&gd.h - expect).amax() < 1e-14);
        assert_eq!(gd.e.shape(), (0, 0));
        assert_eq!(gd.t_tilde.shape(), (2, 0));
        assert!((&gd.t - &gd.sqrt_h).amax() < 1e-15);
    }

    #[test]
    fn quadratic_projection() {
        let b = affine_with(vec![Poly { k: 2 }]);
        let gd = compute_gram(&b, QuadTol::default()).unwrap();
        assert!((gd.gamma[(0, 0)] - 1.0 / 3.0).abs() < 1e-14);
        assert!((gd.gamma[(0, 1)] + 0.25).abs() < 1e-14);
        assert!((gd.e[(0, 0)] - 1.0 / 180.0).abs() < 1e-13);
        // ε(τ) = τ² + τ + 1/6
        for tau in [-1.0, -0.7, -0.2, 0.0] {
            let eps = projection_error_at(&gd, &b, tau).unwrap();
            assert!((eps[0] - (tau * tau + tau + 1.0 / 6.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_f_linear_phi_transfer() {
        let b = IntervalBasis::new(1, -1.0, 0.0, vec![Poly { k: 1 }], vec![], vec![Poly { k: 0 }])
            .unwrap();
        let gd = compute_gram(&b, QuadTol::default()).unwrap();
        let (t, tt) = transfer_matrices(&gd);
        assert!((t[(0, 0)] + 0.5).abs() < 1e-14 && (t[(1, 0)] - 1.0).abs() < 1e-14);
        assert!((tt[(0, 0)] - (1.0f64 / 12.0).sqrt()).abs() < 1e-14);
        assert_eq!(tt[(1, 0)], 0.0);
    }

    #[test]
    fn duplicated_basis_is_dependent() {
        let b = IntervalBasis::new(1, -1.0, 0.0, vec![], vec![], vec![Poly { k: 0 }, Poly { k: 0 }])
            .unwrap();
        let err = compute_gram(&b, QuadTol::default()).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }));
        assert!(err.to_string().contains("linearly dependent"));
    }

    #[test]
    fn phi_in_span_is_flagged() {
        let b = affine_with(vec![Poly { k: 1 }]);
        let err = compute_gram(&b, QuadTol::default()).unwrap_err();
        assert!(matches!(err, Error::ApproxInSpan { .. }), "{err}");
    }

    #[test]
    fn loose_tolerance_rejected() {
        let tol = QuadTol { rel: 1e-3, abs: 1e-14 };
        assert!(compute_gram(&affine_with(vec![]), tol).is_err());
    }

    #[test]
    fn gamma_hat_reconstruction() {
        let b = IntervalBasis::new(
            1,
            -1.0,
            0.0,
            vec![BasisFunction::ExpSin { omega: 20.0 }, BasisFunction::ExpCos { omega: 20.0 }],
            vec![BasisFunction::InvSin2 { a: 1.2 }],
            crate::basis::poly_trig_family(1, Some((20.0, 1))),
        )
        .unwrap();
        let gd = compute_gram(&b, QuadTol::default()).unwrap();
        let (gh, it) = (gd.gamma_hat(), gd.i_tilde());
        for k in 0..200 {
            let tau = -1.0 + (k as f64 + 0.5) / 200.0;
            let (g, h) = b.eval(tau).unwrap();
            let eps = projection_error_at(&gd, &b, tau).unwrap();
            let rec = &gh * h + &it * eps;
            assert!((rec - g).amax() <= 1e-9);
        }
        // T = Γ̂ √H
        assert!((&gh * &gd.sqrt_h - &gd.t).amax() < 1e-10);
        let (emin, _) = sym_eig_range(&gd.e);
        assert!(emin > 0.0 && gd.e.trace() <= gd.phi2.trace());
    }
}
