#![allow(dead_code)]

use std::sync::OnceLock;

use delaysynth::augplant::{build_plant, AugmentedPlant};
use delaysynth::fixtures::paper_s4;
use delaysynth::lmi::LyapunovValues;
use delaysynth::linalg::Mat;
use delaysynth::model::{KernelKind, SupplyMode, SupplyRate};
use delaysynth::quad::QuadTol;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Benchmark kernels written out in closed form, independent of the basis
/// expansion used to build the fixture.
pub fn closed_form_kernel(interval: usize, kind: KernelKind, tau: f64) -> Mat {
    let m = |r: usize, c: usize, v: &[f64]| Mat::from_row_slice(r, c, v);
    match interval {
        1 => {
            let (s, c) = ((20.0 * tau).sin(), (20.0 * tau).cos());
            let (es, ec) = (s.exp(), c.exp());
            let rat = 1.0 / ((1.2 * tau).sin().powi(2) + 1.0);
            match kind {
                KernelKind::A => m(2, 2, &[0.1 + 3.0 * s, 0.8 * es - 0.3 * ec, 0.3 + rat, 3.0 * s]),
                KernelKind::B => m(2, 1, &[0.01 * tau - 0.01 * rat + 0.1, 0.1 * tau + 0.02 * rat]),
                KernelKind::C => m(2, 2, &[0.7 + c, rat - 0.2, 0.4 - 0.5 * es, 0.8 - s]),
                KernelKind::Bfrak => m(2, 1, &[0.01 * tau + 0.1 * es - 0.1 * rat, 0.2 * es]),
            }
        }
        2 => {
            let (s, c) = ((18.0 * tau).sin(), (18.0 * tau).cos());
            let (es, ec) = (s.exp(), c.exp());
            let rat = 1.0 / ((0.7 * tau).cos().powi(2) + 1.0);
            match kind {
                KernelKind::A => m(2, 2, &[-10.0 * c, 0.3 * ec - rat, 0.1 * es, 0.2 - 10.0 * c]),
                KernelKind::B => m(2, 1, &[0.2 * ec + 0.01 * es + 0.01 * rat, 0.1 * ec + 0.02 * es]),
                KernelKind::C => m(2, 2, &[0.2 + s, 0.3 + ec, 0.0, 0.1 - rat]),
                KernelKind::Bfrak => m(2, 1, &[0.2 * ec + 0.01 * es + 0.1 * rat, 0.02 * es + 0.2 * rat]),
            }
        }
        _ => panic!("benchmark has two intervals"),
    }
}

pub const KINDS: [KernelKind; 4] = [KernelKind::A, KernelKind::B, KernelKind::C, KernelKind::Bfrak];

/// Augmented plant of the benchmark with `σ = 1` and `λ ∈ {1, 2}`.
pub fn benchmark_plant(lambda: u32) -> &'static AugmentedPlant {
    static ONE: OnceLock<AugmentedPlant> = OnceLock::new();
    static TWO: OnceLock<AugmentedPlant> = OnceLock::new();
    let cell = match lambda {
        1 => &ONE,
        2 => &TWO,
        _ => panic!("only lambda 1 and 2 are cached"),
    };
    cell.get_or_init(|| build_plant(&paper_s4(1, lambda), QuadTol::default()).unwrap())
}

pub fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let a = random_mat(rng, n, n);
    (&a + a.transpose()) * 0.5
}

pub fn random_lyapunov(rng: &mut ChaCha8Rng, ap: &AugmentedPlant) -> LyapunovValues {
    let (n, e, nu) = (ap.dims.n, ap.dims.e, ap.dims.nu);
    LyapunovValues {
        p1: random_sym(rng, n),
        p2: random_mat(rng, n, e),
        p3: random_sym(rng, e),
        q: (0..nu).map(|_| random_sym(rng, n)).collect(),
        r: (0..nu).map(|_| random_sym(rng, n)).collect(),
    }
}

/// Supply rate with every block populated and `J1 ≺ 0`.
pub fn random_supply(rng: &mut ChaCha8Rng, m: usize, q: usize) -> SupplyRate {
    let a = random_mat(rng, m, m);
    SupplyRate {
        j1: -(&a * a.transpose() + Mat::identity(m, m)),
        jtilde: random_mat(rng, m, m),
        j2: random_mat(rng, m, q),
        j3: random_sym(rng, q),
        mode: SupplyMode::Custom,
    }
}

/// Composite Simpson rule on `[a, b]` with `panels` (even) subintervals,
/// applied entrywise to a matrix-valued integrand.
pub fn simpson(a: f64, b: f64, panels: usize, f: impl Fn(f64) -> Mat) -> Mat {
    assert!(panels % 2 == 0);
    let h = (b - a) / panels as f64;
    let mut acc = f(a) + f(b);
    for j in 1..panels {
        let w = if j % 2 == 1 { 4.0 } else { 2.0 };
        acc += f(a + h * j as f64) * w;
    }
    acc * (h / 3.0)
}
