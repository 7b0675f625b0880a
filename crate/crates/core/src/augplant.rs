//! Augmented plant: the closed loop rewritten over the lifted signal
//! `[x; x(t−r_1) … x(t−r_ν); ξ_1 … ξ_ν; e_1 … e_ν; w]`, where `ξ_i` are the
//! normalized projections of the history segment onto `h_i` and `e_i` the
//! normalized projection residuals.

use serde::Serialize;

use crate::basis::IntervalBasis;
use crate::error::{Error, Result};
use crate::gram::{compute_gram, GramData};
use crate::linalg::{block_diag, eye_kron, hcat, kron_eye, Mat};
use crate::model::{DelaySystem, Dimensions, KernelKind};
use crate::quad::QuadTol;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IntervalDims {
    pub d: usize,
    pub delta: usize,
    pub mu: usize,
    pub varkappa: usize,
    pub kappa: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DimensionTable {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub q: usize,
    pub nu: usize,
    pub intervals: Vec<IntervalDims>,
    pub d: usize,
    pub varkappa: usize,
    pub mu: usize,
    pub kappa: usize,
    pub beta: usize,
    /// `d·n`, the side of the `P3` block.
    pub e: usize,
    /// `β·n + q`
    pub state_block: usize,
    /// `β·n + q + m`
    pub phi_width: usize,
}

impl DimensionTable {
    pub fn new(dims: &Dimensions, bases: &[IntervalBasis]) -> Self {
        let intervals: Vec<_> = bases
            .iter()
            .map(|b| IntervalDims {
                d: b.d(),
                delta: b.delta(),
                mu: b.mu(),
                varkappa: b.varkappa(),
                kappa: b.kappa(),
            })
            .collect();
        let d = intervals.iter().map(|i| i.d).sum();
        let varkappa = intervals.iter().map(|i| i.varkappa).sum();
        let mu = intervals.iter().map(|i| i.mu).sum();
        let kappa = varkappa + mu;
        let beta = 1 + dims.nu + kappa;
        Self {
            n: dims.n,
            m: dims.m,
            p: dims.p,
            q: dims.q,
            nu: dims.nu,
            intervals,
            d,
            varkappa,
            mu,
            kappa,
            beta,
            e: d * dims.n,
            state_block: beta * dims.n + dims.q,
            phi_width: beta * dims.n + dims.q + dims.m,
        }
    }

    /// Named column ranges `(name, start, width)` of the lifted signal.
    pub fn column_blocks(&self) -> Vec<(String, usize, usize)> {
        let n = self.n;
        let mut out = vec![("x".to_string(), 0, n)];
        let mut at = n;
        for i in 1..=self.nu {
            out.push((format!("x(t-r_{i})"), at, n));
            at += n;
        }
        for (k, iv) in self.intervals.iter().enumerate() {
            out.push((format!("xi_{}", k + 1), at, iv.varkappa * n));
            at += iv.varkappa * n;
        }
        for (k, iv) in self.intervals.iter().enumerate() {
            out.push((format!("e_{}", k + 1), at, iv.mu * n));
            at += iv.mu * n;
        }
        out.push(("w".to_string(), at, self.q));
        out
    }
}

#[derive(Clone, Debug)]
pub struct AugmentedPlant {
    pub dims: DimensionTable,
    /// `n × (βn+q)`
    pub a: Mat,
    /// `n × (βp+q)`
    pub b1: Mat,
    /// `m × (βn+q)`
    pub c: Mat,
    /// `m × (βp+q)`
    pub b2: Mat,
    pub ahat: Vec<Mat>,
    pub bhat: Vec<Mat>,
    pub chat: Vec<Mat>,
    pub bfrakhat: Vec<Mat>,
    /// `dn × ϰn`
    pub ihat: Mat,
    /// `d × (1+ν+ϰ)`
    pub mmat: Mat,
    /// `νn × νn`
    pub lambda: Mat,
    /// Interval lengths `r_i − r_{i−1}`.
    pub rhat: Vec<f64>,
    pub grams: Vec<GramData>,
}

/// Stacks the coefficients of one kernel into `[F_0 F_1 … F_{κ−1}]` so that
/// the kernel equals `F̂ (g(τ) ⊗ I)`.
pub fn kernel_coefficients(sys: &DelaySystem, i: usize, kappa: usize) -> Result<[Mat; 4]> {
    let kern = sys
        .dd_kernels
        .get(i - 1)
        .ok_or_else(|| Error::Dimension(format!("no kernels declared for interval {i}")))?;
    let build = |kind: KernelKind| -> Result<Mat> {
        let (r, c) = kind.shape(&sys.dims);
        let mut out = Mat::zeros(r, kappa * c);
        for term in kern.terms(kind) {
            if term.coefficient.shape() != (r, c) {
                return Err(Error::Dimension(format!(
                    "interval {i} kernel {}: coefficient is {:?}, expected {:?}",
                    kind.name(),
                    term.coefficient.shape(),
                    (r, c)
                )));
            }
            if term.basis_index >= kappa {
                return Err(Error::Dimension(format!(
                    "interval {i} kernel {}: basis_index {} out of range (kappa = {kappa})",
                    kind.name(),
                    term.basis_index
                )));
            }
            let mut blk = out.view_mut((0, term.basis_index * c), (r, c));
            blk += &term.coefficient;
        }
        Ok(out)
    };
    Ok([build(KernelKind::A)?, build(KernelKind::B)?, build(KernelKind::C)?, build(KernelKind::Bfrak)?])
}

/// Builds bases and Gram data for every interval, then the augmented plant.
pub fn build_plant(sys: &DelaySystem, tol: QuadTol) -> Result<AugmentedPlant> {
    let bases = sys.interval_bases()?;
    let grams = bases.iter().map(|b| compute_gram(b, tol)).collect::<Result<Vec<_>>>()?;
    assemble_plant(sys, &bases, grams)
}

pub fn assemble_plant(
    sys: &DelaySystem,
    bases: &[IntervalBasis],
    grams: Vec<GramData>,
) -> Result<AugmentedPlant> {
    let nu = sys.dims.nu;
    if bases.len() != nu || grams.len() != nu {
        return Err(Error::Dimension(format!(
            "{} bases and {} Gram sets for {nu} intervals",
            bases.len(),
            grams.len()
        )));
    }
    let dims = DimensionTable::new(&sys.dims, bases);
    let (n, m, p, q) = (dims.n, dims.m, dims.p, dims.q);

    let mut ahat = Vec::with_capacity(nu);
    let mut bhat = Vec::with_capacity(nu);
    let mut chat = Vec::with_capacity(nu);
    let mut bfrakhat = Vec::with_capacity(nu);
    for (k, b) in bases.iter().enumerate() {
        let [a, bb, c, bf] = kernel_coefficients(sys, k + 1, b.kappa())?;
        ahat.push(a);
        bhat.push(bb);
        chat.push(c);
        bfrakhat.push(bf);
    }

    // [pointwise | F̂_i (T_i ⊗ I) | F̂_i (T̃_i ⊗ I) | trailing]
    let lift = |point: &[Mat], hat: &[Mat], k: usize, trailing: Mat| -> Mat {
        let mut blocks: Vec<Mat> = point.to_vec();
        blocks.extend(hat.iter().zip(&grams).map(|(h, g)| h * kron_eye(&g.t, k)));
        blocks.extend(hat.iter().zip(&grams).map(|(h, g)| h * kron_eye(&g.t_tilde, k)));
        blocks.push(trailing);
        hcat(&blocks.iter().collect::<Vec<_>>())
    };
    let a = lift(&sys.a, &ahat, n, sys.d1.clone());
    let b1 = lift(&sys.b, &bhat, p, Mat::zeros(n, q));
    let c = lift(&sys.c, &chat, n, sys.d2.clone());
    let b2 = lift(&sys.bfrak, &bfrakhat, p, Mat::zeros(m, q));

    let ihat_blocks: Vec<Mat> = bases
        .iter()
        .zip(&grams)
        .map(|(b, g)| {
            let sel = hcat(&[&Mat::zeros(b.d(), b.delta()), &Mat::identity(b.d(), b.d())]);
            kron_eye(&(&g.sqrt_f_inv * sel * &g.sqrt_h), n)
        })
        .collect();
    let ihat = block_diag(&ihat_blocks);

    let mut mmat = Mat::zeros(dims.d, 1 + nu + dims.varkappa);
    let (mut row, mut col) = (0, 1 + nu);
    for (k, (b, g)) in bases.iter().zip(&grams).enumerate() {
        let (upper, lower) = b.boundary();
        let d = b.d();
        let up = &g.sqrt_f_inv * upper;
        let lo = &g.sqrt_f_inv * lower;
        mmat.view_mut((row, k), (d, 1)).copy_from(&up);
        mmat.view_mut((row, k + 1), (d, 1)).copy_from(&(-lo));
        let dm = &g.sqrt_f_inv * &b.m * &g.sqrt_h;
        mmat.view_mut((row, col), (d, b.varkappa())).copy_from(&(-dm));
        row += d;
        col += b.varkappa();
    }

    let rhat: Vec<f64> = (1..=nu).map(|i| sys.rhat(i)).collect();
    let lambda = block_diag(&rhat.iter().map(|&r| Mat::identity(n, n) * r).collect::<Vec<_>>());

    Ok(AugmentedPlant { dims, a, b1, c, b2, ahat, bhat, chat, bfrakhat, ihat, mmat, lambda, rhat, grams })
}

/// `(I_β ⊗ K) ⊕ O_q`, of size `(βp+q) × (βn+q)`.
pub fn gain_lift(k: &Mat, beta: usize, q: usize) -> Mat {
    block_diag(&[eye_kron(beta, k), Mat::zeros(q, q)])
}

impl AugmentedPlant {
    fn check_gain(&self, k: &Mat) -> Result<()> {
        if k.shape() != (self.dims.p, self.dims.n) {
            return Err(Error::Dimension(format!(
                "gain is {:?}, expected {:?}",
                k.shape(),
                (self.dims.p, self.dims.n)
            )));
        }
        Ok(())
    }

    /// `(Ω, Σ)`: the closed-loop state and output maps over the lifted signal.
    pub fn closed_loop_maps(&self, k: &Mat) -> Result<(Mat, Mat)> {
        self.check_gain(k)?;
        let lift = gain_lift(k, self.dims.beta, self.dims.q);
        Ok((&self.a + &self.b1 * &lift, &self.c + &self.b2 * &lift))
    }
}

/// Free-function form of [`AugmentedPlant::closed_loop_maps`].
pub fn closed_loop_maps(ap: &AugmentedPlant, k: &Mat) -> Result<(Mat, Mat)> {
    ap.closed_loop_maps(k)
}
