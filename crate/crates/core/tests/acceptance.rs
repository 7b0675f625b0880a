//! Acceptance suite: one line per criterion, non-zero exit if any fails.

mod common;

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use common::{benchmark_plant, closed_form_kernel, random_lyapunov, random_mat, KINDS};
use delaysynth::augplant::kernel_coefficients;
use delaysynth::basis::{BasisFunction, IntervalBasis};
use delaysynth::expr::AffineMat;
use delaysynth::fixtures::{paper_s4, scalar};
use delaysynth::gram::compute_gram;
use delaysynth::linalg::{kron_eye, sym_eig_range, Mat};
use delaysynth::lmi::{positivity_matrix, theorem1_left, theorem1_right, Anchor, SupplyBlocks};
use delaysynth::model::{make_supply_rate_l2gain, KernelKind, SupplySpec};
use delaysynth::quad::QuadTol;
use delaysynth::sdp::SolveStatus;
use delaysynth::sim::{
    empirical_l2_gain, inject_glitches, simulate, Disturbance, GlitchEvents, GlitchSpec, InitialHistory, SimConfig,
};
use delaysynth::spectral::{spectral_abscissa, SpectralConfig};
use delaysynth::synth::{
    algorithm1_from_gain, analyze_theorem1_fixed_gain, default_alphas, improve_gain_fixed_p, inner_approx_step,
    solve_theorem2, verify_certificate, Certificate, IterationConfig, SolveContext, SynthesisResult,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Published reference values.
const DUAL_GAMMA: f64 = 0.8986;
const ITER_GAMMA_L1: f64 = 0.6509;
const ITER_GAMMA_L2: f64 = 0.6361;
const ITER_GAIN_L2: [f64; 2] = [-1.5810, -1.9805];
const SA_INTERVAL: (f64, f64) = (-0.78, -0.66);
const DDE_SA: f64 = -0.3181;

// Tolerances.
const GRAM_TOL: f64 = 1e-10;
const KERNEL_TOL: f64 = 1e-9;
const FORMS_TOL: f64 = 1e-9;
const DUAL_REL: f64 = 0.02;
const ITER_REL: f64 = 0.05;
const MONOTONE_SLACK: f64 = 1e-6;
const ANALYSIS_SLACK: f64 = 1e-6;
const DDE_TOL: f64 = 1e-3;
const GAIN_FACTOR: f64 = 1.02;
const STEPS_TOL: f64 = 1e-6;
const SOUND_EIG: f64 = -1e-9;

struct Outcome {
    pass: bool,
    detail: String,
}

/// Collects named checks and renders them as one line.
struct Checks {
    pass: bool,
    parts: String,
}

impl Checks {
    fn new() -> Self {
        Self { pass: true, parts: String::new() }
    }

    fn check(&mut self, ok: bool, what: impl AsRef<str>) {
        self.pass &= ok;
        let _ = write!(self.parts, "{}[{}] {}", if self.parts.is_empty() { "" } else { "; " }, if ok { "ok" } else { "FAIL" }, what.as_ref());
    }

    fn runtime(&mut self, elapsed: Duration, limit: Duration) {
        self.check(elapsed <= limit, format!("runtime {:.1}s <= {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()));
    }

    fn done(self) -> Outcome {
        Outcome { pass: self.pass, detail: self.parts }
    }
}

fn rel_err(x: f64, target: f64) -> f64 {
    (x - target).abs() / target.abs()
}

fn ctx() -> SolveContext {
    SolveContext::from_env().expect("solver backend")
}

fn gain(v: [f64; 2]) -> Mat {
    Mat::from_row_slice(1, 2, &v)
}

fn criterion_1() -> Outcome {
    use BasisFunction::Poly;
    let t0 = Instant::now();
    let mut c = Checks::new();
    let basis = IntervalBasis::new(1, -1.0, 0.0, vec![Poly { k: 2 }], vec![], vec![Poly { k: 0 }, Poly { k: 1 }]).unwrap();
    let gd = compute_gram(&basis, QuadTol::default()).unwrap();
    let h = Mat::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0 / 3.0]);
    let gamma = Mat::from_row_slice(1, 2, &[1.0 / 3.0, -0.25]);
    let e = Mat::from_element(1, 1, 1.0 / 180.0);
    c.check((&gd.h - &h).amax() <= GRAM_TOL, format!("H err {:.1e}", (&gd.h - &h).amax()));
    c.check((&gd.gamma - &gamma).amax() <= GRAM_TOL, format!("Gamma err {:.1e}", (&gd.gamma - &gamma).amax()));
    c.check((&gd.e - &e).amax() <= GRAM_TOL, format!("E err {:.1e}", (&gd.e - &e).amax()));
    c.runtime(t0.elapsed(), Duration::from_secs(1));
    c.done()
}

/// Rows of the printed coefficient matrices for `σ = λ = 1`, in the order
/// `A, B, C, 𝔅` for each interval.
fn printed_coefficients() -> [[Vec<Vec<f64>>; 4]; 2] {
    [
        [
            vec![
                vec![0.0, 0.8, 0.0, -0.3, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.3, 0.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0],
            ],
            vec![vec![0.0, 0.0, -0.01, 0.1, 0.01, 0.0, 0.0], vec![0.0, 0.0, 0.02, 0.0, 0.1, 0.0, 0.0]],
            vec![
                vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.7, -0.2, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
                vec![-0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.4, 0.8, 0.0, 0.0, -1.0, 0.0, 0.0],
            ],
            vec![vec![0.1, 0.0, -0.1, 0.0, 0.01, 0.0, 0.0], vec![0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]],
        ],
        [
            vec![
                vec![0.0, 0.0, 0.0, 0.3, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -10.0, 0.0],
                vec![0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0, -10.0],
            ],
            vec![vec![0.01, 0.2, 0.01, 0.0, 0.0, 0.0, 0.0], vec![0.02, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0]],
            vec![
                vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.2, 0.3, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            ],
            vec![vec![0.01, 0.2, 0.1, 0.0, 0.0, 0.0, 0.0], vec![0.02, 0.0, 0.2, 0.0, 0.0, 0.0, 0.0]],
        ],
    ]
}

fn criterion_2() -> Outcome {
    let mut c = Checks::new();
    let sys = paper_s4(1, 1);
    let bases = sys.interval_bases().unwrap();
    let printed = printed_coefficients();
    let mut notes = Vec::new();
    for (i, b) in bases.iter().enumerate() {
        let coeffs = kernel_coefficients(&sys, i + 1, b.kappa()).unwrap();
        for (k, kind) in KINDS.into_iter().enumerate() {
            let cols = kind.shape(&sys.dims).1;
            let mut worst: f64 = 0.0;
            for j in 0..1000 {
                let tau = b.lo + (b.hi - b.lo) * j as f64 / 999.0;
                let g = Mat::from_column_slice(b.kappa(), 1, b.g_at(tau).as_slice());
                let rebuilt = &coeffs[k] * kron_eye(&g, cols);
                worst = worst.max((rebuilt - closed_form_kernel(i + 1, kind, tau)).amax());
            }
            c.check(worst <= KERNEL_TOL, format!("{}_{} {:.1e}", kind.name(), i + 1, worst));

            let rows = &printed[i][k];
            let ragged = rows.iter().any(|r| r.len() != rows[0].len());
            if ragged || rows[0].len() != coeffs[k].ncols() {
                notes.push(format!("printed {}_{} has row widths {:?}, expected {}", kind.name(), i + 1, rows.iter().map(Vec::len).collect::<Vec<_>>(), coeffs[k].ncols()));
            } else {
                let flat: Vec<f64> = rows.concat();
                let diff = (Mat::from_row_slice(rows.len(), rows[0].len(), &flat) - &coeffs[k]).amax();
                if diff > 0.0 {
                    notes.push(format!("printed {}_{} differs by {diff}", kind.name(), i + 1));
                }
            }
        }
    }
    let mut out = c.done();
    if !notes.is_empty() {
        let _ = write!(out.detail, " (not gating: {})", notes.join(", "));
    }
    out
}

fn criterion_3() -> Outcome {
    let mut c = Checks::new();
    let ap = benchmark_plant(1);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let lyap = random_lyapunov(&mut rng, ap).blocks();
        let k = random_mat(&mut rng, ap.dims.p, ap.dims.n);
        let gamma = rng.random_range(0.1..2.0);
        let supply = SupplyBlocks::fixed(&make_supply_rate_l2gain(gamma, ap.dims.m, ap.dims.q).unwrap());
        let (omega, sigma) = ap.closed_loop_maps(&k).unwrap();
        let (omega, sigma): (AffineMat, AffineMat) = ((&omega).into(), (&sigma).into());
        let left = theorem1_left(ap, &lyap, &omega, &sigma, &supply).unwrap().eval(&[]);
        let right = theorem1_right(ap, &lyap, &omega, &sigma, &supply).unwrap().eval(&[]);
        worst = worst.max((left - right).amax());
    }
    c.check(worst <= FORMS_TOL, format!("max entrywise gap over 20 draws {worst:.1e}"));
    c.done()
}

fn dual_synthesis(ctx: &SolveContext) -> SynthesisResult {
    let ap = benchmark_plant(1);
    solve_theorem2(ctx, ap, &SupplySpec::L2Gain, &default_alphas(ap.dims.beta)).expect("dual synthesis")
}

fn criterion_4() -> Outcome {
    let t0 = Instant::now();
    let mut c = Checks::new();
    let ctx = ctx();
    let ap = benchmark_plant(1);
    let dual = dual_synthesis(&ctx);
    let g = dual.gamma.unwrap();
    c.check(rel_err(g, DUAL_GAMMA) <= DUAL_REL, format!("gamma {g:.4} vs {DUAL_GAMMA} within {:.0}%", DUAL_REL * 100.0));
    let analysis = analyze_theorem1_fixed_gain(&ctx, ap, &SupplySpec::L2Gain, &dual.k).expect("analysis");
    let ga = analysis.gamma.unwrap();
    c.check(ga <= g + ANALYSIS_SLACK, format!("analysis of K = {:?} certifies {ga:.4} <= {g:.4}", dual.k.as_slice()));
    let elapsed = t0.elapsed();
    let sa = spectral_abscissa(&paper_s4(1, 1), &dual.k, &SpectralConfig::default()).unwrap().sa;
    c.check(sa < 0.0, format!("SA {sa:.4} < 0"));
    c.runtime(elapsed, Duration::from_secs(60));
    c.done()
}

/// Levels of the accepted steps: analysis, gain update and every feasible
/// loop iteration.
fn accepted_levels(res: &SynthesisResult) -> Vec<f64> {
    res.trace.iter().filter(|r| r.step != "dual" && r.step != "dual_check").filter_map(|r| r.gamma).collect()
}

fn criterion_5() -> Outcome {
    let t0 = Instant::now();
    let mut c = Checks::new();
    let ctx = ctx();
    let k0 = dual_synthesis(&ctx).k;
    let runs: Vec<(u32, f64, SynthesisResult)> = std::thread::scope(|s| {
        let handles: Vec<_> = [(1, ITER_GAMMA_L1), (2, ITER_GAMMA_L2)]
            .into_iter()
            .map(|(lambda, target)| {
                let k0 = &k0;
                s.spawn(move || {
                    let ctx = self::ctx();
                    let ap = benchmark_plant(lambda);
                    let res = algorithm1_from_gain(&ctx, ap, &SupplySpec::L2Gain, k0, &IterationConfig::default())
                        .expect("iterative synthesis");
                    (lambda, target, res)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for (lambda, target, res) in &runs {
        let ap = benchmark_plant(*lambda);
        let levels = accepted_levels(res);
        let g = res.gamma.unwrap();
        let iters = res.trace.iter().filter(|r| r.step.parse::<usize>().is_ok() && r.gamma.is_some()).count();
        c.check(
            rel_err(g, *target) <= ITER_REL,
            format!("lambda {lambda}: gamma {g:.4} after {iters} iterations vs {target} within {:.0}%", ITER_REL * 100.0),
        );
        let monotone = levels.windows(2).all(|w| w[1] <= w[0] + MONOTONE_SLACK);
        c.check(monotone, format!("lambda {lambda}: trace non-increasing ({:.4} -> {:.4})", levels[0], levels[levels.len() - 1]));
        let worst = res
            .trace
            .iter()
            .filter(|r| r.gamma.is_some() && r.step != "dual" && r.step != "dual_check")
            .map(|r| r.dissipation_max_eig)
            .fold(f64::NEG_INFINITY, f64::max);
        c.check(worst < 0.0, format!("lambda {lambda}: dissipation LMI re-evaluated at every iterate, max eig {worst:.2e}"));
        let Certificate::Primal(cert) = &res.certificate else { unreachable!() };
        let s = make_supply_rate_l2gain(g, ap.dims.m, ap.dims.q).unwrap();
        c.check(verify_certificate(ap, cert, &res.k, &s).is_ok(), format!("lambda {lambda}: final certificate verifies"));
    }
    c.runtime(t0.elapsed(), Duration::from_secs(15 * 60));
    c.done()
}

/// Rightmost root of `s + e^{−s} = 0` by complex Newton iteration.
fn newton_dde_root() -> f64 {
    let (mut a, mut b): (f64, f64) = (-0.3, 1.3);
    for _ in 0..60 {
        let e = (-a).exp();
        let (fr, fi) = (a + e * b.cos(), b - e * b.sin());
        let (dr, di) = (1.0 - e * b.cos(), e * b.sin());
        let den = dr * dr + di * di;
        a -= (fr * dr + fi * di) / den;
        b -= (fi * dr - fr * di) / den;
    }
    a
}

fn criterion_6() -> Outcome {
    let mut c = Checks::new();
    let cfg = SpectralConfig::default();
    let sa = spectral_abscissa(&paper_s4(1, 2), &gain(ITER_GAIN_L2), &cfg).unwrap().sa;
    c.check((SA_INTERVAL.0..=SA_INTERVAL.1).contains(&sa), format!("closed loop SA {sa:.4} in [{}, {}]", SA_INTERVAL.0, SA_INTERVAL.1));
    let root = newton_dde_root();
    let dde = spectral_abscissa(&scalar(0.0, -1.0, 1.0, 0.0), &Mat::zeros(1, 1), &cfg).unwrap().sa;
    c.check((root - DDE_SA).abs() <= DDE_TOL, format!("Newton root {root:.5} vs {DDE_SA}"));
    c.check((dde - DDE_SA).abs() <= DDE_TOL && (dde - root).abs() <= DDE_TOL, format!("x' = -x(t-1) SA {dde:.5}"));
    c.done()
}

fn terminal_glitch_deviation(step: f64) -> f64 {
    let sys = paper_s4(1, 1);
    let k = gain(ITER_GAIN_L2);
    let mut cfg = SimConfig::new(20.0, InitialHistory::Constant(vec![5.0, 3.0]), Disturbance::benchmark());
    cfg.step = step;
    let clean = simulate(&sys, &k, &cfg).unwrap();
    let spec = GlitchSpec {
        interval: 1,
        kernel: KernelKind::B,
        direction: vec![vec![1.0], vec![1.0]],
        events: GlitchEvents::Points { events: vec![(5.0, 10.0)] },
    };
    let dirty = simulate(&sys, &k, &inject_glitches(&cfg, &spec)).unwrap();
    let (a, b) = (clean.x.last().unwrap(), dirty.x.last().unwrap());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_7() -> Outcome {
    let mut c = Checks::new();
    let sys = paper_s4(1, 1);
    let k = gain(ITER_GAIN_L2);
    let cfg = SimConfig::new(20.0, InitialHistory::Constant(vec![5.0, 3.0]), Disturbance::benchmark());
    let traj = simulate(&sys, &k, &cfg).unwrap();
    let peak = traj.max_state_norm();
    c.check(peak.is_finite() && peak < 1e3, format!("bounded, max |x| {peak:.3}"));
    let slope = traj.log_norm_slope(10.0);
    c.check(slope < 0.0, format!("log |x| slope after t = 10 {slope:.3}"));

    let rest = SimConfig::new(20.0, InitialHistory::Constant(vec![0.0, 0.0]), Disturbance::benchmark());
    let g = empirical_l2_gain(&simulate(&sys, &k, &rest).unwrap()).unwrap();
    c.check(g <= GAIN_FACTOR * ITER_GAMMA_L2, format!("empirical gain {g:.4} <= {GAIN_FACTOR} * {ITER_GAMMA_L2}"));

    let steps = SimConfig::new(1.0, InitialHistory::Constant(vec![1.0]), Disturbance::None);
    let x1 = simulate(&scalar(0.0, -1.0, 1.0, 0.0), &Mat::zeros(1, 1), &steps).unwrap().x.last().unwrap()[0];
    c.check(x1.abs() <= STEPS_TOL, format!("method of steps x(1) = {x1:.1e}"));

    let (coarse, fine) = (terminal_glitch_deviation(0.004), terminal_glitch_deviation(0.002));
    let ratio = coarse / fine;
    c.check(fine > 0.0 && (1.5..=2.5).contains(&ratio), format!("glitch deviation {coarse:.2e} -> {fine:.2e} when h halves (ratio {ratio:.2})"));
    c.done()
}

/// Runs the inner approximation step by step and evaluates the original
/// dissipation LMI through the selector-based assembly at every feasible
/// step.
fn criterion_8() -> Outcome {
    const STEPS: usize = 6;
    let mut c = Checks::new();
    let ctx = ctx();
    let k0 = dual_synthesis(&ctx).k;
    let results: Vec<(u32, usize, f64, f64)> = std::thread::scope(|s| {
        let handles: Vec<_> = [1u32, 2]
            .into_iter()
            .map(|lambda| {
                let k0 = &k0;
                s.spawn(move || {
                    let ctx = self::ctx();
                    let ap = benchmark_plant(lambda);
                    let supply = SupplySpec::L2Gain;
                    let analysis = analyze_theorem1_fixed_gain(&ctx, ap, &supply, k0).unwrap();
                    let Certificate::Primal(pa) = &analysis.certificate else { unreachable!() };
                    let update = improve_gain_fixed_p(&ctx, ap, &supply, &pa.p1, &pa.p2).unwrap();
                    let Certificate::Primal(pu) = &update.certificate else { unreachable!() };
                    let mut anchor = Anchor { p1: pu.p1.clone(), p2: pu.p2.clone(), k: update.k.clone() };
                    let cfg = IterationConfig::default();
                    let (mut feasible, mut worst, mut worst_pos) = (0, f64::NEG_INFINITY, f64::INFINITY);
                    for _ in 0..STEPS {
                        let (sol, vals, k, g) = inner_approx_step(&ctx, ap, &supply, &anchor, &cfg).unwrap();
                        if sol.status != SolveStatus::Optimal {
                            break;
                        }
                        feasible += 1;
                        let s = SupplyBlocks::fixed(&make_supply_rate_l2gain(g.unwrap(), ap.dims.m, ap.dims.q).unwrap());
                        let (omega, sigma) = ap.closed_loop_maps(&k).unwrap();
                        let lmi = theorem1_left(ap, &vals.blocks(), &(&omega).into(), &(&sigma).into(), &s).unwrap().eval(&[]);
                        worst = worst.max(sym_eig_range(&lmi).1);
                        worst_pos = worst_pos.min(sym_eig_range(&positivity_matrix(ap, &vals)).0);
                        anchor = Anchor { p1: vals.p1, p2: vals.p2, k };
                    }
                    (lambda, feasible, worst, worst_pos)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for (lambda, feasible, worst, worst_pos) in results {
        c.check(feasible == STEPS, format!("lambda {lambda}: {feasible}/{STEPS} steps feasible"));
        c.check(worst <= SOUND_EIG, format!("lambda {lambda}: max eig of the dissipation LMI {worst:.2e} <= {SOUND_EIG:e}"));
        c.check(worst_pos > 0.0, format!("lambda {lambda}: functional positivity min eig {worst_pos:.2e}"));
    }
    c.done()
}

fn main() {
    // `cargo test -- --list` and filters come through as arguments.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("Gram matrices of the quadratic projection", criterion_1),
        ("kernel reconstruction", criterion_2),
        ("two forms of the dissipation LMI", criterion_3),
        ("dual synthesis", criterion_4),
        ("iterative synthesis", criterion_5),
        ("spectral abscissa", criterion_6),
        ("simulation properties", criterion_7),
        ("inner approximation soundness", criterion_8),
    ];
    let outcomes: Vec<(Outcome, Duration)> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria
            .iter()
            .map(|(_, f)| {
                s.spawn(move || {
                    let t0 = Instant::now();
                    let out = std::panic::catch_unwind(f).unwrap_or_else(|e| Outcome {
                        pass: false,
                        detail: format!(
                            "panicked: {}",
                            e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
                        ),
                    });
                    (out, t0.elapsed())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut failed = 0;
    for (i, ((name, _), (out, t))) in criteria.iter().zip(&outcomes).enumerate() {
        failed += usize::from(!out.pass);
        println!(
            "criterion {} {:<4} {name} ({:.1}s): {}",
            i + 1,
            if out.pass { "PASS" } else { "FAIL" },
            t.as_secs_f64(),
            out.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
