//! Open-loop plant, supply rate, structural validation and the JSON system
//! description format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::basis::{BasisDecl, IntervalBasis};
use crate::error::{Error, Result};
use crate::linalg::{from_rows, to_rows, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    /// state
    pub n: usize,
    /// regulated output
    pub m: usize,
    /// control input
    pub p: usize,
    /// disturbance
    pub q: usize,
    /// number of delays
    pub nu: usize,
}

/// One constant coefficient of a distributed-delay kernel, multiplying the
/// `basis_index`-th entry of the interval's `g` vector.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelTerm {
    pub basis_index: usize,
    pub coefficient: Mat,
}

/// Which distributed-delay kernel a term list belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelKind {
    /// `Ã_i`, `n × n`
    A,
    /// `B̃_i`, `n × p`
    B,
    /// `C̃_i`, `m × n`
    C,
    /// `𝔅̃_i`, `m × p`
    Bfrak,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [KernelKind::A, KernelKind::B, KernelKind::C, KernelKind::Bfrak];

    pub fn shape(self, dims: &Dimensions) -> (usize, usize) {
        match self {
            Self::A => (dims.n, dims.n),
            Self::B => (dims.n, dims.p),
            Self::C => (dims.m, dims.n),
            Self::Bfrak => (dims.m, dims.p),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::A => "A",
            Self::B => "B",
            Self::C => "C",
            Self::Bfrak => "Bfrak",
        }
    }
}

/// The four kernel term lists of one interval.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IntervalKernels {
    pub a: Vec<KernelTerm>,
    pub b: Vec<KernelTerm>,
    pub c: Vec<KernelTerm>,
    pub bfrak: Vec<KernelTerm>,
}

impl IntervalKernels {
    pub fn terms(&self, kind: KernelKind) -> &[KernelTerm] {
        match kind {
            KernelKind::A => &self.a,
            KernelKind::B => &self.b,
            KernelKind::C => &self.c,
            KernelKind::Bfrak => &self.bfrak,
        }
    }

    pub fn terms_mut(&mut self, kind: KernelKind) -> &mut Vec<KernelTerm> {
        match kind {
            KernelKind::A => &mut self.a,
            KernelKind::B => &mut self.b,
            KernelKind::C => &mut self.c,
            KernelKind::Bfrak => &mut self.bfrak,
        }
    }
}

/// Quadratic supply rate
/// `s(z, w) = zᵀ J̃ᵀ J1⁻¹ J̃ z + 2 zᵀ J2 w + wᵀ J3 w`.
#[derive(Clone, Debug, PartialEq)]
pub struct SupplyRate {
    pub j1: Mat,
    pub jtilde: Mat,
    pub j2: Mat,
    pub j3: Mat,
    pub mode: SupplyMode,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SupplyMode {
    L2Gain { gamma: f64 },
    Passivity,
    Custom,
}

impl SupplyRate {
    /// Evaluates `s(z, w)`.
    pub fn eval(&self, z: &[f64], w: &[f64]) -> f64 {
        let z = nalgebra::DVector::from_column_slice(z);
        let w = nalgebra::DVector::from_column_slice(w);
        let j1inv = self.j1.clone().try_inverse().unwrap_or_else(|| Mat::zeros(0, 0));
        let zz = (&self.jtilde * &z).dot(&(&j1inv * (&self.jtilde * &z)));
        zz + 2.0 * z.dot(&(&self.j2 * &w)) + w.dot(&(&self.j3 * &w))
    }
}

/// `J1 = −γ I_m`, `J̃ = I_m`, `J2 = 0`, `J3 = γ I_q`.
pub fn make_supply_rate_l2gain(gamma: f64, m: usize, q: usize) -> Result<SupplyRate> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Domain(format!("L2 gain needs gamma > 0, got {gamma}")));
    }
    Ok(SupplyRate {
        j1: Mat::identity(m, m) * -gamma,
        jtilde: Mat::identity(m, m),
        j2: Mat::zeros(m, q),
        j3: Mat::identity(q, q) * gamma,
        mode: SupplyMode::L2Gain { gamma },
    })
}

/// Strict passivity with `J1 = −ε I` standing in for `J1 ≺ 0`.
pub fn make_supply_rate_passivity(m: usize, q: usize, epsilon: f64) -> Result<SupplyRate> {
    if m != q {
        return Err(Error::Domain(format!("passivity needs m = q, got m = {m}, q = {q}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("passivity needs epsilon > 0, got {epsilon}")));
    }
    Ok(SupplyRate {
        j1: Mat::identity(m, m) * -epsilon,
        jtilde: Mat::zeros(m, m),
        j2: Mat::identity(m, q),
        j3: Mat::zeros(q, q),
        mode: SupplyMode::Passivity,
    })
}

/// Supply rate as declared for synthesis.
#[derive(Clone, Debug, PartialEq)]
pub enum SupplySpec {
    /// `γ` is a decision variable and is minimized.
    L2Gain,
    Fixed(SupplyRate),
}

/// Open-loop linear delay system with pointwise and distributed delays.
#[derive(Clone, Debug, PartialEq)]
pub struct DelaySystem {
    pub dims: Dimensions,
    /// `r_1 < … < r_ν`
    pub delays: Vec<f64>,
    /// `A_0 … A_ν`
    pub a: Vec<Mat>,
    pub b: Vec<Mat>,
    pub c: Vec<Mat>,
    pub bfrak: Vec<Mat>,
    pub d1: Mat,
    pub d2: Mat,
    pub basis: Vec<BasisDecl>,
    pub dd_kernels: Vec<IntervalKernels>,
    pub supply: SupplySpec,
}

impl DelaySystem {
    /// `r_i` with `r_0 = 0`.
    pub fn r(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            self.delays[i - 1]
        }
    }

    /// `r̂_i = r_i − r_{i−1}`.
    pub fn rhat(&self, i: usize) -> f64 {
        self.r(i) - self.r(i - 1)
    }

    pub fn max_delay(&self) -> f64 {
        self.delays.last().copied().unwrap_or(0.0)
    }

    pub fn interval_basis(&self, i: usize) -> Result<IntervalBasis> {
        self.basis[i - 1].build(i, -self.r(i), -self.r(i - 1))
    }

    pub fn interval_bases(&self) -> Result<Vec<IntervalBasis>> {
        (1..=self.dims.nu).map(|i| self.interval_basis(i)).collect()
    }

    /// Evaluates kernel `kind` of interval `i` at `τ` from its term list.
    pub fn kernel_at(&self, i: usize, kind: KernelKind, basis: &IntervalBasis, tau: f64) -> Mat {
        let g = basis.g_at(tau);
        let (r, c) = kind.shape(&self.dims);
        let mut out = Mat::zeros(r, c);
        for t in self.dd_kernels[i - 1].terms(kind) {
            out += &t.coefficient * g[t.basis_index];
        }
        out
    }

    /// Replaces the supply-rate declaration.
    pub fn with_supply(mut self, supply: SupplySpec) -> Self {
        self.supply = supply;
        self
    }
}

/// Machine-readable violation category.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    NonPositiveDimension,
    NoDelays,
    DelayNonPositive,
    DelaysNotIncreasing,
    WrongMatrixCount,
    DimensionMismatch,
    NonFinite,
    BasisCountMismatch,
    BasisInvalid,
    KernelCountMismatch,
    KernelIndexOutOfRange,
    KernelDimensionMismatch,
    SupplyInvalid,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({})", self.message, self.field)
    }
}

fn violation(code: ViolationCode, field: impl Into<String>, message: impl Into<String>) -> Violation {
    Violation { code, field: field.into(), message: message.into() }
}

/// Lists every structural problem of `sys`; empty iff it is well formed.
pub fn validate_system(sys: &DelaySystem) -> Vec<Violation> {
    use ViolationCode::*;
    let mut out = Vec::new();
    let Dimensions { n, m, p, q, nu } = sys.dims;
    for (name, v) in [("n", n), ("m", m), ("p", p), ("q", q), ("nu", nu)] {
        if v == 0 {
            out.push(violation(NonPositiveDimension, format!("dimensions.{name}"), format!("{name} must be positive")));
        }
    }
    if sys.delays.is_empty() {
        out.push(violation(NoDelays, "delays", "at least one delay is required"));
    }
    if sys.delays.len() != nu {
        out.push(violation(
            DimensionMismatch,
            "delays",
            format!("{} delays given but nu = {nu}", sys.delays.len()),
        ));
    }
    if sys.delays.iter().any(|r| !r.is_finite()) {
        out.push(violation(NonFinite, "delays", "delays must be finite"));
    }
    if sys.delays.first().is_some_and(|&r| !(r > 0.0)) {
        out.push(violation(DelayNonPositive, "delays[0]", "delays must be positive"));
    }
    if sys.delays.windows(2).any(|w| !(w[1] > w[0])) {
        out.push(violation(DelaysNotIncreasing, "delays", "delays not strictly increasing"));
    }

    let mut check_list = |name: &str, mats: &[Mat], shape: (usize, usize)| {
        if mats.len() != nu + 1 {
            out.push(violation(
                WrongMatrixCount,
                name.to_string(),
                format!("{name} needs nu + 1 = {} matrices, got {}", nu + 1, mats.len()),
            ));
        }
        for (i, mat) in mats.iter().enumerate() {
            if mat.shape() != shape {
                out.push(violation(
                    DimensionMismatch,
                    format!("{name}[{i}]"),
                    format!("{name}_{i} dimension mismatch: {:?}, expected {:?}", mat.shape(), shape),
                ));
            } else if mat.iter().any(|v| !v.is_finite()) {
                out.push(violation(NonFinite, format!("{name}[{i}]"), format!("{name}_{i} has non-finite entries")));
            }
        }
    };
    check_list("A", &sys.a, (n, n));
    check_list("B", &sys.b, (n, p));
    check_list("C", &sys.c, (m, n));
    check_list("Bfrak", &sys.bfrak, (m, p));
    for (name, mat, shape) in [("D1", &sys.d1, (n, q)), ("D2", &sys.d2, (m, q))] {
        if mat.shape() != shape {
            out.push(violation(
                DimensionMismatch,
                name,
                format!("{name} dimension mismatch: {:?}, expected {:?}", mat.shape(), shape),
            ));
        }
    }

    if sys.basis.len() != nu {
        out.push(violation(
            BasisCountMismatch,
            "basis",
            format!("{} basis declarations for nu = {nu} intervals", sys.basis.len()),
        ));
    }
    if sys.dd_kernels.len() != nu {
        out.push(violation(
            KernelCountMismatch,
            "dd_kernels",
            format!("{} kernel declarations for nu = {nu} intervals", sys.dd_kernels.len()),
        ));
    }
    let intervals_ok = out.iter().all(|v| !matches!(v.code, DelaysNotIncreasing | DelayNonPositive | NoDelays | NonFinite))
        && sys.delays.len() == nu;
    for (k, decl) in sys.basis.iter().enumerate().take(nu) {
        let i = k + 1;
        if intervals_ok {
            if let Err(e) = sys.interval_basis(i) {
                out.push(violation(BasisInvalid, format!("basis[{k}]"), e.to_string()));
            }
        } else if let Err(e) = decl.f_functions() {
            out.push(violation(BasisInvalid, format!("basis[{k}]"), e.to_string()));
        }
    }
    for (k, kern) in sys.dd_kernels.iter().enumerate() {
        let kappa = sys.basis.get(k).and_then(BasisDecl::kappa);
        for kind in KernelKind::ALL {
            let shape = kind.shape(&sys.dims);
            for (t, term) in kern.terms(kind).iter().enumerate() {
                let field = format!("dd_kernels[{k}].{}[{t}]", kind.name());
                if let Some(kappa) = kappa {
                    if term.basis_index >= kappa {
                        out.push(violation(
                            KernelIndexOutOfRange,
                            field.clone(),
                            format!("basis_index {} out of range (kappa = {kappa})", term.basis_index),
                        ));
                    }
                }
                if term.coefficient.shape() != shape {
                    out.push(violation(
                        KernelDimensionMismatch,
                        field,
                        format!("coefficient is {:?}, expected {:?}", term.coefficient.shape(), shape),
                    ));
                }
            }
        }
    }
    if let SupplySpec::Fixed(s) = &sys.supply {
        let shapes = [
            ("J1", &s.j1, (m, m)),
            ("Jtilde", &s.jtilde, (m, m)),
            ("J2", &s.j2, (m, q)),
            ("J3", &s.j3, (q, q)),
        ];
        let mut shapes_ok = true;
        for (name, mat, shape) in shapes {
            if mat.shape() != shape {
                shapes_ok = false;
                out.push(violation(
                    DimensionMismatch,
                    format!("supply_rate.{name}"),
                    format!("{name} dimension mismatch: {:?}, expected {:?}", mat.shape(), shape),
                ));
            }
        }
        if shapes_ok && m > 0 {
            let (_, max) = crate::linalg::sym_eig_range(&s.j1);
            if !(max < 0.0) || (&s.j1 - s.j1.transpose()).amax() > 1e-12 {
                out.push(violation(SupplyInvalid, "supply_rate.J1", "J1 must be symmetric negative definite"));
            }
            if (&s.j3 - s.j3.transpose()).amax() > 1e-12 {
                out.push(violation(SupplyInvalid, "supply_rate.J3", "J3 must be symmetric"));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// File format

type Rows = Vec<Vec<f64>>;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDims {
    n: usize,
    m: usize,
    p: usize,
    q: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileTerm {
    basis_index: usize,
    coefficient: Rows,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileKernels {
    #[serde(rename = "A", default)]
    a: Vec<FileTerm>,
    #[serde(rename = "B", default)]
    b: Vec<FileTerm>,
    #[serde(rename = "C", default)]
    c: Vec<FileTerm>,
    #[serde(rename = "Bfrak", default)]
    bfrak: Vec<FileTerm>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum FileSupply {
    Mode {
        mode: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        epsilon: Option<f64>,
    },
    Explicit {
        #[serde(rename = "J1")]
        j1: Rows,
        #[serde(rename = "Jtilde")]
        jtilde: Rows,
        #[serde(rename = "J2")]
        j2: Rows,
        #[serde(rename = "J3")]
        j3: Rows,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemFile {
    dimensions: FileDims,
    delays: Vec<f64>,
    #[serde(rename = "A")]
    a: Vec<Rows>,
    #[serde(rename = "B")]
    b: Vec<Rows>,
    #[serde(rename = "C")]
    c: Vec<Rows>,
    #[serde(rename = "Bfrak")]
    bfrak: Vec<Rows>,
    #[serde(rename = "D1")]
    d1: Rows,
    #[serde(rename = "D2")]
    d2: Rows,
    basis: Vec<BasisDecl>,
    dd_kernels: Vec<FileKernels>,
    #[serde(default = "default_supply")]
    supply_rate: FileSupply,
}

fn default_supply() -> FileSupply {
    FileSupply::Mode { mode: "l2gain".into(), gamma: None, epsilon: None }
}

fn parse_err(path: &str, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_string(), message: message.into() }
}

fn mat_from(rows: &Rows, path: &str) -> Result<Mat> {
    if let Some(first) = rows.first() {
        if rows.iter().any(|r| r.len() != first.len()) {
            return Err(parse_err(path, "ragged matrix rows"));
        }
    }
    Ok(from_rows(rows))
}

fn mats_from(list: &[Rows], path: &str) -> Result<Vec<Mat>> {
    list.iter().enumerate().map(|(i, r)| mat_from(r, &format!("{path}[{i}]"))).collect()
}

impl SystemFile {
    fn into_system(self) -> Result<DelaySystem> {
        let nu = self.delays.len();
        let dims = Dimensions {
            n: self.dimensions.n,
            m: self.dimensions.m,
            p: self.dimensions.p,
            q: self.dimensions.q,
            nu,
        };
        let mut dd = Vec::with_capacity(self.dd_kernels.len());
        for (k, fk) in self.dd_kernels.iter().enumerate() {
            let mut ik = IntervalKernels::default();
            for (kind, list) in [
                (KernelKind::A, &fk.a),
                (KernelKind::B, &fk.b),
                (KernelKind::C, &fk.c),
                (KernelKind::Bfrak, &fk.bfrak),
            ] {
                for (t, term) in list.iter().enumerate() {
                    let path = format!("dd_kernels[{k}].{}[{t}].coefficient", kind.name());
                    ik.terms_mut(kind).push(KernelTerm {
                        basis_index: term.basis_index,
                        coefficient: mat_from(&term.coefficient, &path)?,
                    });
                }
            }
            dd.push(ik);
        }
        let supply = match self.supply_rate {
            FileSupply::Mode { mode, gamma, epsilon } => match (mode.as_str(), gamma) {
                ("l2gain", None) => SupplySpec::L2Gain,
                ("l2gain", Some(g)) => SupplySpec::Fixed(
                    make_supply_rate_l2gain(g, dims.m, dims.q)
                        .map_err(|e| parse_err("supply_rate.gamma", e.to_string()))?,
                ),
                ("passivity", _) => SupplySpec::Fixed(
                    make_supply_rate_passivity(dims.m, dims.q, epsilon.unwrap_or(1e-6))
                        .map_err(|e| parse_err("supply_rate", e.to_string()))?,
                ),
                (other, _) => return Err(parse_err("supply_rate.mode", format!("unknown mode `{other}`"))),
            },
            FileSupply::Explicit { j1, jtilde, j2, j3 } => SupplySpec::Fixed(SupplyRate {
                j1: mat_from(&j1, "supply_rate.J1")?,
                jtilde: mat_from(&jtilde, "supply_rate.Jtilde")?,
                j2: mat_from(&j2, "supply_rate.J2")?,
                j3: mat_from(&j3, "supply_rate.J3")?,
                mode: SupplyMode::Custom,
            }),
        };
        Ok(DelaySystem {
            dims,
            delays: self.delays,
            a: mats_from(&self.a, "A")?,
            b: mats_from(&self.b, "B")?,
            c: mats_from(&self.c, "C")?,
            bfrak: mats_from(&self.bfrak, "Bfrak")?,
            d1: mat_from(&self.d1, "D1")?,
            d2: mat_from(&self.d2, "D2")?,
            basis: self.basis,
            dd_kernels: dd,
            supply,
        })
    }

    fn from_system(sys: &DelaySystem) -> Self {
        let rows = |v: &[Mat]| v.iter().map(to_rows).collect::<Vec<_>>();
        let terms = |v: &[KernelTerm]| {
            v.iter()
                .map(|t| FileTerm { basis_index: t.basis_index, coefficient: to_rows(&t.coefficient) })
                .collect::<Vec<_>>()
        };
        let supply_rate = match &sys.supply {
            SupplySpec::L2Gain => default_supply(),
            SupplySpec::Fixed(s) => FileSupply::Explicit {
                j1: to_rows(&s.j1),
                jtilde: to_rows(&s.jtilde),
                j2: to_rows(&s.j2),
                j3: to_rows(&s.j3),
            },
        };
        SystemFile {
            dimensions: FileDims { n: sys.dims.n, m: sys.dims.m, p: sys.dims.p, q: sys.dims.q },
            delays: sys.delays.clone(),
            a: rows(&sys.a),
            b: rows(&sys.b),
            c: rows(&sys.c),
            bfrak: rows(&sys.bfrak),
            d1: to_rows(&sys.d1),
            d2: to_rows(&sys.d2),
            basis: sys.basis.clone(),
            dd_kernels: sys
                .dd_kernels
                .iter()
                .map(|k| FileKernels { a: terms(&k.a), b: terms(&k.b), c: terms(&k.c), bfrak: terms(&k.bfrak) })
                .collect(),
            supply_rate,
        }
    }
}

/// Parses and validates a system description from JSON text.
pub fn parse_system(json: &str) -> Result<DelaySystem> {
    let de = &mut serde_json::Deserializer::from_str(json);
    let file: SystemFile = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    let sys = file.into_system()?;
    let violations = validate_system(&sys);
    if violations.is_empty() {
        Ok(sys)
    } else {
        Err(Error::InvalidSystem(violations))
    }
}

pub fn system_to_json(sys: &DelaySystem) -> String {
    serde_json::to_string_pretty(&SystemFile::from_system(sys)).expect("system serializes")
}

/// Loads a system from a file path, or a builtin fixture by name
/// (see [`crate::fixtures::builtin`]).
pub fn load_system(path: impl AsRef<Path>) -> Result<DelaySystem> {
    let path = path.as_ref();
    if !path.exists() {
        if let Some(sys) = path.to_str().and_then(crate::fixtures::builtin) {
            return Ok(sys);
        }
    }
    parse_system(&std::fs::read_to_string(path)?)
}

pub fn save_system(sys: &DelaySystem, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, system_to_json(sys))?;
    Ok(())
}
