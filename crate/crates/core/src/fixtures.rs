//! Builtin example systems.

use crate::basis::{BasisDecl, BasisFunction, FamilyDecl, TrigDecl};
use crate::linalg::Mat;
use crate::model::{DelaySystem, Dimensions, IntervalKernels, KernelTerm, SupplySpec};

fn m(r: usize, c: usize, v: &[f64]) -> Mat {
    Mat::from_row_slice(r, c, v)
}

fn term(basis_index: usize, coefficient: Mat) -> KernelTerm {
    KernelTerm { basis_index, coefficient }
}

fn decl(omega: f64, varphi: BasisFunction, poly_order: u32, harmonics: u32) -> BasisDecl {
    BasisDecl {
        f: Some(FamilyDecl { poly_order, trig: Some(TrigDecl { omega, harmonics }) }),
        f_explicit: None,
        varphi: vec![varphi],
        phi: vec![BasisFunction::ExpSin { omega }, BasisFunction::ExpCos { omega }],
    }
}

/// Two-delay benchmark with `n = m = 2`, `p = q = 1`, delays `(1, 1.7)` and
/// kernels built from `exp(sin ωτ)`, `exp(cos ωτ)`, a rational term and the
/// family `[τ^0 … τ^σ, sin(kωτ), cos(kωτ)]` with `k ≤ λ`.
///
/// Panics if `sigma < 1` or `lambda < 1`, since the kernels use `τ`, `sin ωτ`
/// and `cos ωτ`.
pub fn paper_s4(sigma: u32, lambda: u32) -> DelaySystem {
    assert!(sigma >= 1 && lambda >= 1, "fixture needs sigma >= 1 and lambda >= 1");
    // g = [exp sin, exp cos, rational, 1, τ, …, sin ωτ, …, cos ωτ, …]
    let (es, ec, rat, one, tau) = (0, 1, 2, 3, 4);
    let sin1 = 4 + sigma as usize;
    let cos1 = sin1 + lambda as usize;
    let i2 = Mat::identity(2, 2);

    let k1 = IntervalKernels {
        a: vec![
            term(es, m(2, 2, &[0.0, 0.8, 0.0, 0.0])),
            term(ec, m(2, 2, &[0.0, -0.3, 0.0, 0.0])),
            term(rat, m(2, 2, &[0.0, 0.0, 1.0, 0.0])),
            term(one, m(2, 2, &[0.1, 0.0, 0.3, 0.0])),
            term(sin1, &i2 * 3.0),
        ],
        b: vec![
            term(rat, m(2, 1, &[-0.01, 0.02])),
            term(one, m(2, 1, &[0.1, 0.0])),
            term(tau, m(2, 1, &[0.01, 0.1])),
        ],
        c: vec![
            term(es, m(2, 2, &[0.0, 0.0, -0.5, 0.0])),
            term(rat, m(2, 2, &[0.0, 1.0, 0.0, 0.0])),
            term(one, m(2, 2, &[0.7, -0.2, 0.4, 0.8])),
            term(sin1, m(2, 2, &[0.0, 0.0, 0.0, -1.0])),
            term(cos1, m(2, 2, &[1.0, 0.0, 0.0, 0.0])),
        ],
        bfrak: vec![
            term(es, m(2, 1, &[0.1, 0.2])),
            term(rat, m(2, 1, &[-0.1, 0.0])),
            term(tau, m(2, 1, &[0.01, 0.0])),
        ],
    };
    let k2 = IntervalKernels {
        a: vec![
            term(es, m(2, 2, &[0.0, 0.0, 0.1, 0.0])),
            term(ec, m(2, 2, &[0.0, 0.3, 0.0, 0.0])),
            term(rat, m(2, 2, &[0.0, -1.0, 0.0, 0.0])),
            term(one, m(2, 2, &[0.0, 0.0, 0.0, 0.2])),
            term(cos1, &i2 * -10.0),
        ],
        b: vec![
            term(es, m(2, 1, &[0.01, 0.02])),
            term(ec, m(2, 1, &[0.2, 0.1])),
            term(rat, m(2, 1, &[0.01, 0.0])),
        ],
        c: vec![
            term(ec, m(2, 2, &[0.0, 1.0, 0.0, 0.0])),
            term(rat, m(2, 2, &[0.0, 0.0, 0.0, -1.0])),
            term(one, m(2, 2, &[0.2, 0.3, 0.0, 0.1])),
            term(sin1, m(2, 2, &[1.0, 0.0, 0.0, 0.0])),
        ],
        bfrak: vec![
            term(es, m(2, 1, &[0.01, 0.02])),
            term(ec, m(2, 1, &[0.2, 0.0])),
            term(rat, m(2, 1, &[0.1, 0.2])),
        ],
    };

    DelaySystem {
        dims: Dimensions { n: 2, m: 2, p: 1, q: 1, nu: 2 },
        delays: vec![1.0, 1.7],
        a: vec![
            m(2, 2, &[-2.0, 0.0, 2.0, 0.01]),
            m(2, 2, &[-1.0, 0.1, 0.2, 0.0]),
            m(2, 2, &[-0.1, 0.0, 0.0, -0.2]),
        ],
        b: vec![m(2, 1, &[0.0, 1.0]), m(2, 1, &[0.01, 0.1]), m(2, 1, &[-0.1, -0.1])],
        c: vec![
            m(2, 2, &[-0.1, 0.2, 0.0, 0.1]),
            m(2, 2, &[-0.1, 0.0, 0.0, 0.2]),
            m(2, 2, &[0.0, 0.1, -0.1, 0.0]),
        ],
        bfrak: vec![m(2, 1, &[0.0, 1.0]), m(2, 1, &[0.01, 0.01]), m(2, 1, &[-0.01, -0.1])],
        d1: m(2, 1, &[0.2, 0.3]),
        d2: m(2, 1, &[0.12, 0.1]),
        basis: vec![
            decl(20.0, BasisFunction::InvSin2 { a: 1.2 }, sigma, lambda),
            decl(18.0, BasisFunction::InvCos2 { a: 0.7 }, sigma, lambda),
        ],
        dd_kernels: vec![k1, k2],
        supply: SupplySpec::L2Gain,
    }
}

/// Scalar plant `ẋ = a0 x + a1 x(t − r) + c ∫_{−r}^0 x(t + τ) dτ + u + w`,
/// `z = x`, with the constant basis on the single interval.
pub fn scalar(a0: f64, a1: f64, r: f64, c: f64) -> DelaySystem {
    let s = |v: f64| m(1, 1, &[v]);
    let mut kernels = IntervalKernels::default();
    if c != 0.0 {
        kernels.a.push(term(0, s(c)));
    }
    DelaySystem {
        dims: Dimensions { n: 1, m: 1, p: 1, q: 1, nu: 1 },
        delays: vec![r],
        a: vec![s(a0), s(a1)],
        b: vec![s(1.0), s(0.0)],
        c: vec![s(1.0), s(0.0)],
        bfrak: vec![s(0.0), s(0.0)],
        d1: s(1.0),
        d2: s(0.0),
        basis: vec![BasisDecl {
            f: Some(FamilyDecl { poly_order: 0, trig: None }),
            f_explicit: None,
            varphi: vec![],
            phi: vec![],
        }],
        dd_kernels: vec![kernels],
        supply: SupplySpec::L2Gain,
    }
}

/// Resolves a builtin name: `paper-s4` (`σ = λ = 1`), `paper-s4-lambda2`
/// (`σ = 1`, `λ = 2`) or `paper-s4:σ,λ`.
pub fn builtin(name: &str) -> Option<DelaySystem> {
    match name {
        "paper-s4" => Some(paper_s4(1, 1)),
        "paper-s4-lambda2" => Some(paper_s4(1, 2)),
        _ => {
            let rest = name.strip_prefix("paper-s4:")?;
            let (s, l) = rest.split_once(',')?;
            let (s, l): (u32, u32) = (s.trim().parse().ok()?, l.trim().parse().ok()?);
            (s >= 1 && l >= 1).then(|| paper_s4(s, l))
        }
    }
}

/// Names accepted by [`builtin`], for help texts.
pub const BUILTIN_NAMES: &[&str] = &["paper-s4", "paper-s4-lambda2", "paper-s4:<sigma>,<lambda>"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_names_resolve() {
        assert_eq!(builtin("paper-s4"), Some(paper_s4(1, 1)));
        assert_eq!(builtin("paper-s4:2,3"), Some(paper_s4(2, 3)));
        assert!(builtin("paper-s4:0,1").is_none());
        assert!(builtin("nope").is_none());
    }

    #[test]
    fn index_layout_tracks_family_size() {
        let sys = paper_s4(2, 2);
        let b = sys.interval_basis(1).unwrap();
        assert_eq!(b.kappa(), 3 + 3 + 4);
        let sin_idx = sys.dd_kernels[0].a.last().unwrap().basis_index;
        let g: Vec<_> = b.g_functions().collect();
        assert_eq!(*g[sin_idx], BasisFunction::Sin { omega: 20.0 });
    }
}
