//! Spectral abscissa of the closed-loop delay equation by pseudospectral
//! collocation of its infinitesimal generator on piecewise Chebyshev grids
//! with breakpoints at the delays.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::model::{DelaySystem, KernelKind};
use crate::quad::{integrate, presplit_panels, QuadTol};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    /// Total collocation nodes on `[−r, 0]`, split over the intervals in
    /// proportion to their lengths.
    pub nodes: usize,
    /// Double `nodes` until the abscissa moves by less than `tol`.
    pub refine: bool,
    pub tol: f64,
    pub max_doublings: usize,
    /// Number of rightmost eigenvalues to report.
    pub report: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self { nodes: 60, refine: true, tol: 1e-4, max_doublings: 4, report: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralResult {
    /// Largest real part of the discretized spectrum at the finest grid.
    pub sa: f64,
    /// Estimate on the previous (half as fine) grid, if refined.
    pub previous: Option<f64>,
    pub converged: bool,
    pub nodes: usize,
    /// Rightmost eigenvalues, sorted by decreasing real part.
    pub eigenvalues: Vec<Eigenvalue>,
}

/// Chebyshev extreme points on `[a, b]`, from `b` down to `a`.
fn cheb_nodes(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|k| 0.5 * (a + b) + 0.5 * (b - a) * (std::f64::consts::PI * k as f64 / n as f64).cos())
        .collect()
}

/// Differentiation matrix for [`cheb_nodes`].
fn cheb_diff(a: f64, b: f64, n: usize) -> Mat {
    let x: Vec<f64> = (0..=n).map(|k| (std::f64::consts::PI * k as f64 / n as f64).cos()).collect();
    let c = |k: usize| if k == 0 || k == n { 2.0 } else { 1.0 } * if k % 2 == 0 { 1.0 } else { -1.0 };
    let mut d = Mat::zeros(n + 1, n + 1);
    for i in 0..=n {
        for j in 0..=n {
            if i != j {
                d[(i, j)] = c(i) / c(j) / (x[i] - x[j]);
            }
        }
        let row: f64 = (0..=n).filter(|&j| j != i).map(|j| d[(i, j)]).sum();
        d[(i, i)] = -row;
    }
    d * (2.0 / (b - a))
}

/// Values of all Lagrange basis polynomials of the Chebyshev grid at `t`.
fn lagrange_row(nodes: &[f64], t: f64) -> Vec<f64> {
    let n = nodes.len() - 1;
    if let Some(k) = nodes.iter().position(|&x| x == t) {
        let mut out = vec![0.0; n + 1];
        out[k] = 1.0;
        return out;
    }
    let w = |k: usize| if k == 0 || k == n { 0.5 } else { 1.0 } * if k % 2 == 0 { 1.0 } else { -1.0 };
    let terms: Vec<f64> = (0..=n).map(|k| w(k) / (t - nodes[k])).collect();
    let s: f64 = terms.iter().sum();
    terms.into_iter().map(|v| v / s).collect()
}

/// Discretized generator for `u = K x` with `per_interval[i]` nodes on `𝓘_{i+1}`.
fn generator(sys: &DelaySystem, k: &Mat, per_interval: &[usize]) -> Result<Mat> {
    let d = sys.dims;
    let n = d.n;
    let total: usize = per_interval.iter().sum();
    let size = n * (total + 1);
    let mut g = Mat::zeros(size, size);
    let bases = sys.interval_bases()?;

    // global index of node `j` of interval `i` (0-based interval)
    let mut offsets = vec![0usize; d.nu + 1];
    for i in 0..d.nu {
        offsets[i + 1] = offsets[i] + per_interval[i];
    }

    for i in 0..=d.nu {
        let m = &sys.a[i] + &sys.b[i] * k;
        let col = offsets[i] * n;
        let mut blk = g.view_mut((0, col), (n, n));
        blk += &m;
    }

    for (i, &ni) in per_interval.iter().enumerate() {
        let (lo, hi) = (-sys.r(i + 1), -sys.r(i));
        let nodes = cheb_nodes(lo, hi, ni);
        let dm = cheb_diff(lo, hi, ni);
        for row in 1..=ni {
            let gr = (offsets[i] + row) * n;
            for c in 0..=ni {
                let gc = (offsets[i] + c) * n;
                for s in 0..n {
                    g[(gr + s, gc + s)] += dm[(row, c)];
                }
            }
        }

        let basis = &bases[i];
        let has_kernel = [KernelKind::A, KernelKind::B]
            .iter()
            .any(|&kind| !sys.dd_kernels[i].terms(kind).is_empty());
        if !has_kernel {
            continue;
        }
        let kernel = |tau: f64| {
            sys.kernel_at(i + 1, KernelKind::A, basis, tau) + sys.kernel_at(i + 1, KernelKind::B, basis, tau) * k
        };
        // ∫ kernel(τ) ℓ_j(τ) dτ for every node j, stacked column-major.
        let integrand = |tau: f64| {
            let kv = kernel(tau);
            let l = lagrange_row(&nodes, tau);
            let mut out = Vector::zeros((ni + 1) * n * n);
            for (j, lj) in l.iter().enumerate() {
                for (e, v) in kv.iter().enumerate() {
                    out[j * n * n + e] = lj * v;
                }
            }
            out
        };
        let panels = presplit_panels(basis.max_frequency(), hi - lo).max(1) + ni / 2;
        let res = integrate(integrand, lo, hi, panels, QuadTol { rel: 1e-11, abs: 1e-13 });
        if !res.converged {
            log::warn!("interval {}: product-integration weights reached error {:e}", i + 1, res.error);
        }
        for j in 0..=ni {
            let w = Mat::from_column_slice(n, n, &res.value.as_slice()[j * n * n..(j + 1) * n * n]);
            let gc = (offsets[i] + j) * n;
            let mut blk = g.view_mut((0, gc), (n, n));
            blk += &w;
        }
    }
    Ok(g)
}

fn split_nodes(sys: &DelaySystem, total: usize) -> Vec<usize> {
    let r = sys.max_delay();
    (1..=sys.dims.nu)
        .map(|i| ((total as f64 * sys.rhat(i) / r).round() as usize).max(4))
        .collect()
}

fn rightmost(g: Mat, report: usize) -> (f64, Vec<Eigenvalue>) {
    let mut ev: Vec<Eigenvalue> = g.complex_eigenvalues().iter().map(|z| Eigenvalue { re: z.re, im: z.im }).collect();
    ev.sort_by(|a, b| b.re.total_cmp(&a.re));
    let sa = ev.first().map_or(f64::NEG_INFINITY, |e| e.re);
    ev.truncate(report);
    (sa, ev)
}

/// Rightmost eigenvalues of the closed loop on a grid of `nodes` nodes.
pub fn spectrum(sys: &DelaySystem, k: &Mat, nodes: usize, report: usize) -> Result<(f64, Vec<Eigenvalue>)> {
    if k.shape() != (sys.dims.p, sys.dims.n) {
        return Err(Error::Dimension(format!("gain is {:?}, expected {:?}", k.shape(), (sys.dims.p, sys.dims.n))));
    }
    let g = generator(sys, k, &split_nodes(sys, nodes))?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("generator matrix has non-finite entries".into()));
    }
    Ok(rightmost(g, report))
}

/// Spectral abscissa of the closed loop `u = K x`, refined by doubling the
/// grid until two successive estimates agree to `cfg.tol`.
pub fn spectral_abscissa(sys: &DelaySystem, k: &Mat, cfg: &SpectralConfig) -> Result<SpectralResult> {
    if cfg.nodes < 8 {
        return Err(Error::Domain(format!("at least 8 collocation nodes are needed, got {}", cfg.nodes)));
    }
    let mut nodes = cfg.nodes;
    let (mut sa, mut ev) = spectrum(sys, k, nodes, cfg.report)?;
    if !cfg.refine || cfg.max_doublings == 0 {
        return Ok(SpectralResult { sa, previous: None, converged: false, nodes, eigenvalues: ev });
    }
    let mut prev = sa;
    for _ in 0..cfg.max_doublings {
        nodes *= 2;
        prev = sa;
        (sa, ev) = spectrum(sys, k, nodes, cfg.report)?;
        if (sa - prev).abs() < cfg.tol {
            return Ok(SpectralResult { sa, previous: Some(prev), converged: true, nodes, eigenvalues: ev });
        }
        log::debug!("spectral abscissa {prev} -> {sa} at {nodes} nodes");
    }
    Ok(SpectralResult { sa, previous: Some(prev), converged: false, nodes, eigenvalues: ev })
}
