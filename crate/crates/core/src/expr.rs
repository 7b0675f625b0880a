//! Matrix-valued affine expressions in a flat vector of scalar decision
//! variables.
//!
//! One builder serves every solve mode: blocks that are data in one mode and
//! unknowns in another are passed either as constants or as variables, and a
//! product of two variable-dependent operands is rejected with
//! [`Error::Bilinear`].

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// A matrix-shaped block of decision variables.
#[derive(Clone, Debug, PartialEq)]
pub struct MatVar {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub symmetric: bool,
    /// Index of the first scalar in the flat variable vector.
    pub offset: usize,
}

impl MatVar {
    /// Number of scalar unknowns.
    pub fn len(&self) -> usize {
        if self.symmetric {
            self.rows * (self.rows + 1) / 2
        } else {
            self.rows * self.cols
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(row, col)` positions driven by the `k`-th scalar (one or two).
    fn positions(&self, k: usize) -> ((usize, usize), Option<(usize, usize)>) {
        if self.symmetric {
            // upper triangle, column by column
            let mut j = 0;
            let mut start = 0;
            while start + j + 1 <= k {
                start += j + 1;
                j += 1;
            }
            let i = k - start;
            ((i, j), (i != j).then_some((j, i)))
        } else {
            // column-major
            ((k % self.rows, k / self.rows), None)
        }
    }

    pub fn expr(&self) -> AffineMat {
        let mut terms = Vec::with_capacity(self.len());
        for k in 0..self.len() {
            let mut c = Mat::zeros(self.rows, self.cols);
            let (a, b) = self.positions(k);
            c[a] = 1.0;
            if let Some(b) = b {
                c[b] = 1.0;
            }
            terms.push((self.offset + k, c));
        }
        AffineMat { constant: Mat::zeros(self.rows, self.cols), terms }
    }

    /// Reads this block out of a full variable vector.
    pub fn value(&self, x: &[f64]) -> Mat {
        let mut out = Mat::zeros(self.rows, self.cols);
        for k in 0..self.len() {
            let (a, b) = self.positions(k);
            out[a] = x[self.offset + k];
            if let Some(b) = b {
                out[b] = x[self.offset + k];
            }
        }
        out
    }

    /// Writes `m` into a full variable vector (the upper triangle for
    /// symmetric blocks).
    pub fn assign(&self, m: &Mat, x: &mut [f64]) {
        assert_eq!(m.shape(), (self.rows, self.cols), "assign {}: shape", self.name);
        for k in 0..self.len() {
            let (a, _) = self.positions(k);
            x[self.offset + k] = m[a];
        }
    }
}

/// Registry of decision variables.
#[derive(Clone, Debug, Default)]
pub struct VarSet {
    pub vars: Vec<MatVar>,
    len: usize,
}

impl VarSet {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: &str, rows: usize, cols: usize, symmetric: bool) -> MatVar {
        assert!(
            self.vars.iter().all(|v| v.name != name),
            "variable `{name}` declared twice"
        );
        let v = MatVar { name: name.to_string(), rows, cols, symmetric, offset: self.len };
        self.len += v.len();
        self.vars.push(v.clone());
        v
    }

    pub fn symmetric(&mut self, name: &str, n: usize) -> MatVar {
        self.push(name, n, n, true)
    }

    pub fn rect(&mut self, name: &str, rows: usize, cols: usize) -> MatVar {
        self.push(name, rows, cols, false)
    }

    pub fn scalar(&mut self, name: &str) -> MatVar {
        self.push(name, 1, 1, true)
    }

    /// Total number of scalar unknowns.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, name: &str) -> Option<&MatVar> {
        self.vars.iter().find(|v| v.name == name)
    }
}

/// `constant + Σ_k x_k · terms[k]`, with `terms` sorted by variable index.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMat {
    pub constant: Mat,
    pub terms: Vec<(usize, Mat)>,
}

impl From<Mat> for AffineMat {
    fn from(constant: Mat) -> Self {
        Self { constant, terms: Vec::new() }
    }
}

impl From<&Mat> for AffineMat {
    fn from(constant: &Mat) -> Self {
        Self::from(constant.clone())
    }
}

impl AffineMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat::zeros(rows, cols).into()
    }

    pub fn identity(n: usize) -> Self {
        Mat::identity(n, n).into()
    }

    pub fn nrows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.constant.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn map(&self, f: impl Fn(&Mat) -> Mat) -> Self {
        Self {
            constant: f(&self.constant),
            terms: self.terms.iter().map(|(k, c)| (*k, f(c))).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        self.map(|m| m.transpose())
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|m| m * s)
    }

    /// `m · self`
    pub fn lmul(&self, m: &Mat) -> Self {
        self.map(|c| m * c)
    }

    /// `self · m`
    pub fn rmul(&self, m: &Mat) -> Self {
        self.map(|c| c * m)
    }

    /// `self + selfᵀ`
    pub fn sy(&self) -> Self {
        self.map(|m| m + m.transpose())
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.shape(), other.shape(), "affine add: shape mismatch");
        let mut terms = Vec::with_capacity(self.terms.len() + other.terms.len());
        let (mut i, mut j) = (0, 0);
        while i < self.terms.len() || j < other.terms.len() {
            let a = self.terms.get(i);
            let b = other.terms.get(j);
            match (a, b) {
                (Some((ka, ca)), Some((kb, cb))) if ka == kb => {
                    terms.push((*ka, ca + cb));
                    i += 1;
                    j += 1;
                }
                (Some((ka, ca)), Some((kb, _))) if ka < kb => {
                    terms.push((*ka, ca.clone()));
                    i += 1;
                }
                (Some((ka, ca)), None) => {
                    terms.push((*ka, ca.clone()));
                    i += 1;
                }
                (_, Some((kb, cb))) => {
                    terms.push((*kb, cb.clone()));
                    j += 1;
                }
                (None, None) => unreachable!(),
            }
        }
        Self { constant: &self.constant + &other.constant, terms }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    /// Product of two expressions, at most one of which may depend on the
    /// variables.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        if !self.is_constant() && !other.is_constant() {
            return Err(Error::Bilinear(format!(
                "{:?} by {:?} product of two variable-dependent blocks",
                self.shape(),
                other.shape()
            )));
        }
        Ok(if self.is_constant() { other.lmul(&self.constant) } else { self.rmul(&other.constant) })
    }

    /// `self ⊗ I_k`
    pub fn kron_eye(&self, k: usize) -> Self {
        self.map(|m| crate::linalg::kron_eye(m, k))
    }

    /// `I_k ⊗ self`
    pub fn eye_kron(&self, k: usize) -> Self {
        self.map(|m| crate::linalg::eye_kron(k, m))
    }

    pub fn eval(&self, x: &[f64]) -> Mat {
        let mut out = self.constant.clone();
        for (k, c) in &self.terms {
            if x[*k] != 0.0 {
                out += c * x[*k];
            }
        }
        out
    }

    /// Assembles a block matrix; `None` entries are zero blocks sized by the
    /// other entries of their row and column.
    pub fn blocks(grid: &[Vec<Option<&AffineMat>>]) -> Self {
        let nr = grid.len();
        let nc = grid.first().map_or(0, Vec::len);
        let mut heights = vec![None; nr];
        let mut widths = vec![None; nc];
        for (i, row) in grid.iter().enumerate() {
            assert_eq!(row.len(), nc, "affine blocks: ragged grid");
            for (j, b) in row.iter().enumerate() {
                if let Some(b) = b {
                    for (slot, v) in [(&mut heights[i], b.nrows()), (&mut widths[j], b.ncols())] {
                        match slot {
                            Some(s) => assert_eq!(*s, v, "affine blocks: size mismatch at ({i}, {j})"),
                            None => *slot = Some(v),
                        }
                    }
                }
            }
        }
        let heights: Vec<usize> = heights.into_iter().map(|h| h.expect("block row with no sized entry")).collect();
        let widths: Vec<usize> = widths.into_iter().map(|w| w.expect("block column with no sized entry")).collect();
        let (rows, cols) = (heights.iter().sum(), widths.iter().sum());
        let mut out = AffineMat::zeros(rows, cols);
        let mut r = 0;
        for (i, row) in grid.iter().enumerate() {
            let mut c = 0;
            for (j, b) in row.iter().enumerate() {
                if let Some(b) = b {
                    out = out.add(&b.embed(rows, cols, r, c));
                }
                c += widths[j];
            }
            r += heights[i];
        }
        out
    }

    /// Places `self` at `(r, c)` inside a zero matrix of the given shape.
    pub fn embed(&self, rows: usize, cols: usize, r: usize, c: usize) -> Self {
        self.map(|m| {
            let mut out = Mat::zeros(rows, cols);
            if m.nrows() > 0 && m.ncols() > 0 {
                out.view_mut((r, c), m.shape()).copy_from(m);
            }
            out
        })
    }

    pub fn hcat(parts: &[&AffineMat]) -> Self {
        Self::blocks(&[parts.iter().map(|p| Some(*p)).collect()])
    }

    pub fn vcat(parts: &[&AffineMat]) -> Self {
        Self::blocks(&parts.iter().map(|p| vec![Some(*p)]).collect::<Vec<_>>())
    }

    pub fn block_diag(parts: &[&AffineMat]) -> Self {
        let rows: usize = parts.iter().map(|p| p.nrows()).sum();
        let cols: usize = parts.iter().map(|p| p.ncols()).sum();
        let mut out = AffineMat::zeros(rows, cols);
        let (mut r, mut c) = (0, 0);
        for p in parts {
            out = out.add(&p.embed(rows, cols, r, c));
            r += p.nrows();
            c += p.ncols();
        }
        out
    }

    /// Largest asymmetry over the constant and all coefficients.
    pub fn asymmetry(&self) -> f64 {
        std::iter::once(&self.constant)
            .chain(self.terms.iter().map(|(_, c)| c))
            .map(|m| (m - m.transpose()).amax())
            .fold(0.0, f64::max)
    }

    /// Drops coefficients that are exactly zero.
    pub fn prune(mut self) -> Self {
        self.terms.retain(|(_, c)| c.iter().any(|&v| v != 0.0));
        self
    }
}

impl std::ops::Add for &AffineMat {
    type Output = AffineMat;
    fn add(self, rhs: Self) -> AffineMat {
        AffineMat::add(self, rhs)
    }
}

impl std::ops::Sub for &AffineMat {
    type Output = AffineMat;
    fn sub(self, rhs: Self) -> AffineMat {
        AffineMat::sub(self, rhs)
    }
}

impl std::ops::Neg for &AffineMat {
    type Output = AffineMat;
    fn neg(self) -> AffineMat {
        self.scale(-1.0)
    }
}
