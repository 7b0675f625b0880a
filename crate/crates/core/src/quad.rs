//! Globally adaptive 15-point Gauss–Kronrod quadrature for vector-valued
//! integrands.

use crate::linalg::Vector;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadTol {
    pub rel: f64,
    pub abs: f64,
}

impl Default for QuadTol {
    fn default() -> Self {
        Self { rel: 1e-12, abs: 1e-14 }
    }
}

#[derive(Clone, Debug)]
pub struct QuadResult {
    pub value: Vector,
    /// Sum of per-panel `|K15 − G7|` estimates, ∞-norm over components.
    pub error: f64,
    pub panels: usize,
    pub converged: bool,
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

const MAX_PANELS: usize = 20_000;

struct Panel {
    a: f64,
    b: f64,
    value: Vector,
    err: Vector,
}

fn gk15<F: Fn(f64) -> Vector>(f: &F, a: f64, b: f64) -> Panel {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = &fc * WGK[7];
    let mut gauss = &fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += &s * WGK[j];
        if j % 2 == 1 {
            gauss += &s * WG[j / 2];
        }
    }
    kron *= h;
    gauss *= h;
    let err = (&kron - &gauss).abs();
    Panel { a, b, value: kron, err }
}

/// Integrates `f` over `[a, b]`, starting from `initial_panels` equal panels.
pub fn integrate<F>(f: F, a: f64, b: f64, initial_panels: usize, tol: QuadTol) -> QuadResult
where
    F: Fn(f64) -> Vector,
{
    let n0 = initial_panels.max(1);
    let w = (b - a) / n0 as f64;
    let mut panels: Vec<Panel> = (0..n0)
        .map(|k| {
            let lo = a + w * k as f64;
            let hi = if k + 1 == n0 { b } else { a + w * (k + 1) as f64 };
            gk15(&f, lo, hi)
        })
        .collect();

    loop {
        let mut value = panels[0].value.clone() * 0.0;
        let mut err = value.clone();
        for p in &panels {
            value += &p.value;
            err += &p.err;
        }
        let total_err = err.amax();
        let target = tol.abs.max(tol.rel * value.amax());
        if total_err <= target || panels.len() >= MAX_PANELS {
            return QuadResult {
                value,
                error: total_err,
                panels: panels.len(),
                converged: total_err <= target,
            };
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.amax().total_cmp(&y.1.err.amax()))
            .map(|(k, _)| k)
            .unwrap_or(0);
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if !(mid > p.a && mid < p.b) {
            // Panel can no longer be split in floating point.
            return QuadResult { value, error: total_err, panels: panels.len() + 1, converged: false };
        }
        panels.push(gk15(&f, p.a, mid));
        panels.push(gk15(&f, mid, p.b));
    }
}

/// Number of equal panels that puts at most half a period of `omega` in each.
pub fn presplit_panels(omega: f64, len: f64) -> usize {
    ((omega * len / std::f64::consts::PI).ceil() as usize).max(1)
}
