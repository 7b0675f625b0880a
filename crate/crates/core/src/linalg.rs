//! Small dense helpers on top of nalgebra: Kronecker products, block
//! assembly with empty-block collapsing, and SPD square roots.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// `a ⊗ b`.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Mat::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            let mut blk = out.view_mut((i * br, j * bc), (br, bc));
            blk.zip_apply(b, |o, v| *o = s * v);
        }
    }
    out
}

/// `a ⊗ I_k`.
pub fn kron_eye(a: &Mat, k: usize) -> Mat {
    kron(a, &Mat::identity(k, k))
}

/// `I_k ⊗ b`.
pub fn eye_kron(k: usize, b: &Mat) -> Mat {
    block_diag(&vec![b.clone(); k])
}

/// Horizontal concatenation. All blocks must share the row count; zero-width
/// blocks are skipped.
pub fn hcat(blocks: &[&Mat]) -> Mat {
    let rows = blocks.iter().find(|b| b.ncols() > 0).map_or_else(
        || blocks.first().map_or(0, |b| b.nrows()),
        |b| b.nrows(),
    );
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        if b.ncols() == 0 {
            continue;
        }
        assert_eq!(b.nrows(), rows, "hcat: row mismatch");
        out.view_mut((0, c), b.shape()).copy_from(*b);
        c += b.ncols();
    }
    out
}

/// Vertical concatenation, skipping zero-height blocks.
pub fn vcat(blocks: &[&Mat]) -> Mat {
    let cols = blocks.iter().find(|b| b.nrows() > 0).map_or_else(
        || blocks.first().map_or(0, |b| b.ncols()),
        |b| b.ncols(),
    );
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        if b.nrows() == 0 {
            continue;
        }
        assert_eq!(b.ncols(), cols, "vcat: column mismatch");
        out.view_mut((r, 0), b.shape()).copy_from(*b);
        r += b.nrows();
    }
    out
}

/// `X_1 ⊕ X_2 ⊕ …` for arbitrary (possibly rectangular or empty) blocks.
pub fn block_diag(blocks: &[Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// `X + Xᵀ`.
pub fn sy(x: &Mat) -> Mat {
    x + x.transpose()
}

pub fn symmetrize(x: &Mat) -> Mat {
    (x + x.transpose()) * 0.5
}

pub fn inf_norm(x: &Mat) -> f64 {
    x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Smallest and largest eigenvalue of the symmetric part of `x`.
pub fn sym_eig_range(x: &Mat) -> (f64, f64) {
    if x.nrows() == 0 {
        return (0.0, 0.0);
    }
    let e = SymmetricEigen::new(symmetrize(x));
    let min = e.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = e.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Square root and inverse square root of a symmetric positive (semi)definite
/// matrix via eigendecomposition.
#[derive(Clone, Debug)]
pub struct SpdRoots {
    pub sqrt: Mat,
    pub inv_sqrt: Mat,
    pub min_eig: f64,
    pub max_eig: f64,
}

/// Eigenvalues at or below `floor_rel * λmax` are rejected, except that when
/// `allow_psd` is set, values in `(-floor_rel·λmax, 0]` are clamped to zero
/// and the inverse root is left as a pseudo-inverse.
pub fn spd_roots(x: &Mat, floor_rel: f64, allow_psd: bool, what: &str) -> Result<SpdRoots> {
    let n = x.nrows();
    if n == 0 {
        return Ok(SpdRoots {
            sqrt: Mat::zeros(0, 0),
            inv_sqrt: Mat::zeros(0, 0),
            min_eig: 0.0,
            max_eig: 0.0,
        });
    }
    let e = SymmetricEigen::new(symmetrize(x));
    let max = e.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = e.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let floor = floor_rel * max.abs();
    let mut s = Vector::zeros(n);
    let mut si = Vector::zeros(n);
    for (k, &lam) in e.eigenvalues.iter().enumerate() {
        if lam > floor {
            s[k] = lam.sqrt();
            si[k] = 1.0 / lam.sqrt();
        } else if allow_psd && lam > -floor {
            s[k] = 0.0;
            si[k] = 0.0;
        } else {
            return Err(Error::NotPositiveDefinite {
                what: what.to_string(),
                min_eig: min,
                max_eig: max,
            });
        }
    }
    let v = &e.eigenvectors;
    let sqrt = v * Mat::from_diagonal(&s) * v.transpose();
    let inv_sqrt = v * Mat::from_diagonal(&si) * v.transpose();
    Ok(SpdRoots {
        sqrt: symmetrize(&sqrt),
        inv_sqrt: symmetrize(&inv_sqrt),
        min_eig: min,
        max_eig: max,
    })
}

/// Builds a matrix from nested row-major data.
pub fn from_rows(rows: &[Vec<f64>]) -> Mat {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    Mat::from_fn(r, c, |i, j| rows[i][j])
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}
