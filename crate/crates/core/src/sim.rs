//! Fixed-step simulation of the closed loop `u = K x` with pointwise and
//! distributed delays, disturbance and glitch injection, and empirical
//! L2-gain estimation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::model::{DelaySystem, KernelKind};

/// Initial function on `[−r, 0]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialHistory {
    Constant(Vec<f64>),
    /// Samples on the grid `−r, −r + h, …, 0`.
    Samples(Vec<Vec<f64>>),
}

impl InitialHistory {
    /// Samples `f` on the grid `−r, …, 0` with spacing `h`.
    pub fn from_fn(r: f64, h: f64, f: impl Fn(f64) -> Vec<f64>) -> Self {
        let nr = (r / h).round() as usize;
        Self::Samples((0..=nr).map(|j| f(-r + j as f64 * h)).collect())
    }
}

/// Disturbance signal `w(t)`, zero for `t < 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Disturbance {
    None,
    /// `amplitude · sin(angular_frequency · t)` on `[start, stop)`, same in
    /// every channel.
    Sine { amplitude: f64, angular_frequency: f64, start: f64, stop: f64 },
    /// Piecewise-linear interpolation of samples `values[k]` at
    /// `start + k·step`, zero outside.
    Samples { start: f64, step: f64, values: Vec<Vec<f64>> },
}

impl Disturbance {
    /// `5 sin(3πt)` switched on at `t = 0` and off at `t = 10`.
    pub fn benchmark() -> Self {
        Self::Sine { amplitude: 5.0, angular_frequency: 3.0 * std::f64::consts::PI, start: 0.0, stop: 10.0 }
    }

    pub fn eval(&self, t: f64, q: usize) -> Vector {
        match self {
            Self::None => Vector::zeros(q),
            Self::Sine { amplitude, angular_frequency, start, stop } => {
                if t >= *start && t < *stop {
                    Vector::from_element(q, amplitude * (angular_frequency * t).sin())
                } else {
                    Vector::zeros(q)
                }
            }
            Self::Samples { start, step, values } => {
                let s = (t - start) / step;
                if values.is_empty() || s < 0.0 || s > (values.len() - 1) as f64 {
                    return Vector::zeros(q);
                }
                let k = (s.floor() as usize).min(values.len() - 1);
                let frac = s - k as f64;
                let a = Vector::from_column_slice(&values[k]);
                if frac == 0.0 || k + 1 == values.len() {
                    a
                } else {
                    a * (1.0 - frac) + Vector::from_column_slice(&values[k + 1]) * frac
                }
            }
        }
    }

    fn check(&self, q: usize) -> Result<()> {
        match self {
            Self::Samples { step, values, .. } => {
                if !(*step > 0.0) {
                    return Err(Error::SimConfig(format!("disturbance sample step must be > 0, got {step}")));
                }
                if let Some(bad) = values.iter().position(|v| v.len() != q) {
                    return Err(Error::SimConfig(format!("disturbance sample {bad} has {} entries, expected q = {q}", values[bad].len())));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Composite rule for the history integrals and the gain estimate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryRule {
    #[default]
    Trapezoid,
    Simpson,
}

/// When the glitch signal is nonzero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GlitchEvents {
    /// `(time, magnitude)` pairs, each snapped to the nearest grid node.
    Points { events: Vec<(f64, f64)> },
    /// Gaussian samples of variance `power / sample_time` at the instants
    /// `k · sample_time` in `[start, stop]`, zero in between.
    WhiteNoise { sample_time: f64, power: f64, seed: u64, start: f64, stop: f64 },
}

/// A scalar glitch signal `ζ(t)` times a fixed direction, added to one
/// distributed-delay kernel of one interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlitchSpec {
    pub interval: usize,
    pub kernel: KernelKind,
    /// Shape of the perturbed kernel, row-major.
    pub direction: Vec<Vec<f64>>,
    pub events: GlitchEvents,
}

impl GlitchSpec {
    fn is_empty(&self) -> bool {
        match &self.events {
            GlitchEvents::Points { events } => events.is_empty(),
            GlitchEvents::WhiteNoise { power, .. } => *power == 0.0,
        }
    }

    /// Glitch magnitude at every grid node `0, h, …, steps·h`.
    fn realize(&self, h: f64, steps: usize) -> Vec<f64> {
        let mut out = vec![0.0; steps + 1];
        match &self.events {
            GlitchEvents::Points { events } => {
                for &(t, mag) in events {
                    let k = (t / h).round();
                    if k >= 0.0 && (k as usize) <= steps {
                        out[k as usize] += mag;
                    }
                }
            }
            GlitchEvents::WhiteNoise { sample_time, power, seed, start, stop } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let scale = (power / sample_time).sqrt();
                let mut k = (start / sample_time).ceil().max(0.0) as usize;
                loop {
                    let t = k as f64 * sample_time;
                    if t > *stop || t > steps as f64 * h + 0.5 * h {
                        break;
                    }
                    let z: f64 = StandardNormal.sample(&mut rng);
                    out[((t / h).round() as usize).min(steps)] += scale * z;
                    k += 1;
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t_end: f64,
    pub step: f64,
    pub history: InitialHistory,
    pub disturbance: Disturbance,
    pub glitch: Option<GlitchSpec>,
    pub rule: HistoryRule,
}

impl SimConfig {
    /// Step `0.002`, trapezoid history rule, no glitches.
    pub fn new(t_end: f64, history: InitialHistory, disturbance: Disturbance) -> Self {
        Self { t_end, step: 0.002, history, disturbance, glitch: None, rule: HistoryRule::Trapezoid }
    }
}

/// Adds a glitch signal to the configuration; an empty spec leaves it
/// unchanged.
///
/// Glitches are nonzero only on a finite set of grid nodes. The exact
/// solution ignores such a null set, and the discrete effect of each glitch
/// is bounded by its quadrature weight, so it vanishes linearly in `h`.
pub fn inject_glitches(cfg: &SimConfig, spec: &GlitchSpec) -> SimConfig {
    let mut out = cfg.clone();
    if !spec.is_empty() {
        out.glitch = Some(spec.clone());
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryMeta {
    pub gain: Vec<Vec<f64>>,
    pub config: SimConfig,
}

/// Sampled closed-loop signals on `−r, −r + h, …, t_end`. On the history
/// part `x` holds the initial function, `u = K x` and `z`, `w` are zero.
#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    /// Index of `t = 0`.
    pub start: usize,
    pub step: f64,
    pub rule: HistoryRule,
    pub meta: Option<TrajectoryMeta>,
}

impl Trajectory {
    /// CSV with header `t,x_1..x_n,u_1..u_p,z_1..z_m,w_1..w_q`.
    pub fn to_csv(&self) -> String {
        let width = |v: &[Vec<f64>]| v.first().map_or(0, Vec::len);
        let mut head = vec!["t".to_string()];
        for (name, sig) in [("x", &self.x), ("u", &self.u), ("z", &self.z), ("w", &self.w)] {
            head.extend((1..=width(sig)).map(|i| format!("{name}_{i}")));
        }
        let mut out = head.join(",");
        out.push('\n');
        for k in 0..self.t.len() {
            let mut row = vec![format!("{}", self.t[k])];
            for sig in [&self.x, &self.u, &self.z, &self.w] {
                row.extend(sig[k].iter().map(|v| format!("{v}")));
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Largest Euclidean state norm on `t ≥ 0`.
    pub fn max_state_norm(&self) -> f64 {
        self.x[self.start..].iter().map(|x| norm(x)).fold(0.0, f64::max)
    }

    /// Least-squares slope of `log ‖x(t)‖` over `t ≥ t_from`.
    pub fn log_norm_slope(&self, t_from: f64) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .t
            .iter()
            .zip(&self.x)
            .filter(|(t, x)| **t >= t_from && norm(x) > 0.0)
            .map(|(t, x)| (*t, norm(x).ln()))
            .collect();
        let n = pts.len() as f64;
        let (mt, my) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t / n, b + y / n));
        let (sty, stt) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + (t - mt) * (y - my), b + (t - mt).powi(2)));
        sty / stt
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Composite weights for `count` equally spaced samples; Simpson falls back
/// to a closing trapezoid panel when the panel count is odd.
fn composite_weights(count: usize, h: f64, rule: HistoryRule) -> Vec<f64> {
    let mut w = vec![0.0; count];
    if count < 2 {
        return w;
    }
    let panels = count - 1;
    match rule {
        HistoryRule::Trapezoid => {
            for j in 0..panels {
                w[j] += 0.5 * h;
                w[j + 1] += 0.5 * h;
            }
        }
        HistoryRule::Simpson => {
            let even = panels - panels % 2;
            for j in (0..even).step_by(2) {
                w[j] += h / 3.0;
                w[j + 1] += 4.0 * h / 3.0;
                w[j + 2] += h / 3.0;
            }
            if even < panels {
                w[panels - 1] += 0.5 * h;
                w[panels] += 0.5 * h;
            }
        }
    }
    w
}

/// `sqrt(∫‖z‖² / ∫‖w‖²)` over `t ≥ 0` with the trajectory's composite rule.
pub fn empirical_l2_gain(traj: &Trajectory) -> Result<f64> {
    let count = traj.t.len() - traj.start;
    let wts = composite_weights(count, traj.step, traj.rule);
    let energy = |sig: &[Vec<f64>]| -> f64 {
        sig[traj.start..].iter().zip(&wts).map(|(v, w)| w * v.iter().map(|a| a * a).sum::<f64>()).sum()
    };
    let ew = energy(&traj.w);
    if !(ew > 0.0) {
        return Err(Error::Domain("disturbance has zero energy".into()));
    }
    Ok((energy(&traj.z) / ew).sqrt())
}

/// Lagrange weights of the nodes `offsets` (in steps) at the point `x`.
fn lagrange(offsets: &[f64], x: f64) -> Vec<f64> {
    offsets
        .iter()
        .enumerate()
        .map(|(i, &xi)| {
            offsets
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &xj)| (x - xj) / (xi - xj))
                .product()
        })
        .collect()
}

/// Kernel samples `Σ_j w_j · kernel(τ_j)` prepared for one interval.
struct IntervalSamples {
    /// Steps from the current time to the interval's right end `−r_{i−1}`.
    offset: usize,
    /// Closed-loop state and output kernels times the quadrature weights at
    /// `τ_j = −r_{i−1} − j h`.
    state: Vec<Mat>,
    output: Vec<Mat>,
    /// Quadrature weights alone, for glitch terms.
    weights: Vec<f64>,
}

struct Glitch {
    interval: usize,
    /// Perturbation of the state and output equations per unit magnitude.
    state: Mat,
    output: Mat,
    nodes: Vec<f64>,
}

/// State history at integer and half-integer grid positions.
struct History {
    /// Node `k` (relative to `t = 0`) is stored at `k + origin`.
    nodes: Vec<Vector>,
    origin: usize,
}

impl History {
    fn node(&self, k: i64) -> &Vector {
        &self.nodes[(k + self.origin as i64) as usize]
    }

    /// Value at `k + 1/2`, cubic through the nearest four known nodes.
    fn half(&self, k: i64) -> Vector {
        let first = -(self.origin as i64);
        let last = self.nodes.len() as i64 - 1 - self.origin as i64;
        let width = (last - first + 1).min(4);
        let lo = (k - 1).min(last - width + 1).max(first);
        let offs: Vec<f64> = (0..width).map(|j| (lo + j - k) as f64).collect();
        let wts = lagrange(&offs, 0.5);
        let mut out = Vector::zeros(self.nodes[0].len());
        for (j, w) in wts.iter().enumerate() {
            out.axpy(*w, self.node(lo + j as i64), 1.0);
        }
        out
    }
}

/// Classical RK4 on the grid `0, h, …, t_end` for `u = K x`.
pub fn simulate(sys: &DelaySystem, k: &Mat, cfg: &SimConfig) -> Result<Trajectory> {
    let d = sys.dims;
    let (n, m, p, q) = (d.n, d.m, d.p, d.q);
    if k.shape() != (p, n) {
        return Err(Error::Dimension(format!("gain is {:?}, expected {:?}", k.shape(), (p, n))));
    }
    let h = cfg.step;
    if !(h > 0.0) || !(cfg.t_end > 0.0) {
        return Err(Error::SimConfig(format!("step {h} and horizon {} must be > 0", cfg.t_end)));
    }
    let mut lag = Vec::with_capacity(d.nu + 1);
    for i in 0..=d.nu {
        let ratio = sys.r(i) / h;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::SimConfig(format!("delay r_{i} = {} is not a multiple of the step {h}", sys.r(i))));
        }
        lag.push(ratio.round() as usize);
    }
    cfg.disturbance.check(q)?;
    let nr = lag[d.nu];
    let steps = (cfg.t_end / h).round() as usize;

    let mut nodes: Vec<Vector> = match &cfg.history {
        InitialHistory::Constant(v) => {
            if v.len() != n {
                return Err(Error::SimConfig(format!("initial state has {} entries, expected n = {n}", v.len())));
            }
            vec![Vector::from_column_slice(v); nr + 1]
        }
        InitialHistory::Samples(rows) => {
            if rows.len() != nr + 1 {
                return Err(Error::SimConfig(format!("initial history has {} samples, expected r/h + 1 = {}", rows.len(), nr + 1)));
            }
            if let Some(bad) = rows.iter().position(|r| r.len() != n) {
                return Err(Error::SimConfig(format!("initial history sample {bad} has {} entries, expected {n}", rows[bad].len())));
            }
            rows.iter().map(|r| Vector::from_column_slice(r)).collect()
        }
    };
    nodes.reserve(steps);

    let bases = sys.interval_bases()?;
    let mut intervals = Vec::with_capacity(d.nu);
    for i in 1..=d.nu {
        let count = lag[i] - lag[i - 1] + 1;
        if cfg.rule == HistoryRule::Simpson && (count - 1) % 2 != 0 {
            return Err(Error::SimConfig(format!("Simpson rule needs an even panel count on interval {i}, got {}", count - 1)));
        }
        let weights = composite_weights(count, h, cfg.rule);
        let mut state = Vec::with_capacity(count);
        let mut output = Vec::with_capacity(count);
        for (j, w) in weights.iter().enumerate() {
            let tau = -sys.r(i - 1) - j as f64 * h;
            let b = &bases[i - 1];
            let ax = sys.kernel_at(i, KernelKind::A, b, tau) + sys.kernel_at(i, KernelKind::B, b, tau) * k;
            let cz = sys.kernel_at(i, KernelKind::C, b, tau) + sys.kernel_at(i, KernelKind::Bfrak, b, tau) * k;
            state.push(ax * *w);
            output.push(cz * *w);
        }
        intervals.push(IntervalSamples { offset: lag[i - 1], state, output, weights });
    }

    let glitch = match &cfg.glitch {
        None => None,
        Some(g) => {
            if g.interval == 0 || g.interval > d.nu {
                return Err(Error::SimConfig(format!("glitch interval {} outside 1..={}", g.interval, d.nu)));
            }
            let (r, c) = g.kernel.shape(&d);
            if g.direction.len() != r || g.direction.iter().any(|row| row.len() != c) {
                return Err(Error::SimConfig(format!("glitch direction must be {r}x{c} for kernel {}", g.kernel.name())));
            }
            let dir = crate::linalg::from_rows(&g.direction);
            let (state, output) = match g.kernel {
                KernelKind::A => (dir, Mat::zeros(m, n)),
                KernelKind::B => (dir * k, Mat::zeros(m, n)),
                KernelKind::C => (Mat::zeros(n, n), dir),
                KernelKind::Bfrak => (Mat::zeros(n, n), dir * k),
            };
            Some(Glitch { interval: g.interval - 1, state, output, nodes: g.realize(h, steps) })
        }
    };

    let closed = |a: &Mat, b: &Mat| a + b * k;
    let ax: Vec<Mat> = (0..=d.nu).map(|i| closed(&sys.a[i], &sys.b[i])).collect();
    let cz: Vec<Mat> = (0..=d.nu).map(|i| closed(&sys.c[i], &sys.bfrak[i])).collect();

    // Value of x at position `pos2 / 2` (in steps), `stage` standing in for
    // the not yet accepted point `cur2 / 2`.
    let sample = |hist: &History, pos2: i64, cur2: i64, stage: &Vector| -> Vector {
        if pos2 == cur2 {
            stage.clone()
        } else if pos2 % 2 == 0 {
            hist.node(pos2 / 2).clone()
        } else {
            hist.half(pos2.div_euclid(2))
        }
    };

    // Distributed terms and pointwise delays at time `cur2 · h / 2`.
    let delayed = |hist: &History, cur2: i64, stage: &Vector, gl: f64, out: bool| -> Vector {
        let rows = if out { m } else { n };
        let mut acc = Vector::zeros(rows);
        for i in 0..=d.nu {
            let xi = if i == 0 { stage.clone() } else { sample(hist, cur2 - 2 * lag[i] as i64, cur2, stage) };
            let mat = if out { &cz[i] } else { &ax[i] };
            acc.gemv(1.0, mat, &xi, 1.0);
        }
        for (ii, iv) in intervals.iter().enumerate() {
            let mats = if out { &iv.output } else { &iv.state };
            let mut raw = Vector::zeros(n);
            let glitched = gl != 0.0 && glitch.as_ref().is_some_and(|g| g.interval == ii);
            for (j, mat) in mats.iter().enumerate() {
                let xj = sample(hist, cur2 - 2 * (iv.offset + j) as i64, cur2, stage);
                acc.gemv(1.0, mat, &xj, 1.0);
                if glitched {
                    raw.axpy(iv.weights[j], &xj, 1.0);
                }
            }
            if glitched {
                let g = glitch.as_ref().expect("checked");
                acc.gemv(gl, if out { &g.output } else { &g.state }, &raw, 1.0);
            }
        }
        acc
    };

    let glitch_at = |node2: i64| -> f64 {
        match &glitch {
            Some(g) if node2 % 2 == 0 => g.nodes.get((node2 / 2) as usize).copied().unwrap_or(0.0),
            _ => 0.0,
        }
    };
    let d1 = &sys.d1;
    let rhs = |hist: &History, cur2: i64, stage: &Vector| -> Vector {
        let t = cur2 as f64 * h / 2.0;
        let mut f = delayed(hist, cur2, stage, glitch_at(cur2), false);
        f.gemv(1.0, d1, &cfg.disturbance.eval(t, q), 1.0);
        f
    };

    let mut hist = History { nodes, origin: nr };
    for s in 0..steps as i64 {
        let x0 = hist.node(s).clone();
        let c = 2 * s;
        let k1 = rhs(&hist, c, &x0);
        let k2 = rhs(&hist, c + 1, &(&x0 + &k1 * (0.5 * h)));
        let k3 = rhs(&hist, c + 1, &(&x0 + &k2 * (0.5 * h)));
        let k4 = rhs(&hist, c + 2, &(&x0 + &k3 * h));
        let x1 = &x0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if !x1.iter().all(|v| v.is_finite() && v.abs() < 1e100) {
            return Err(Error::Diverged { t: s as f64 * h });
        }
        hist.nodes.push(x1);
    }

    let total = hist.nodes.len();
    let mut traj = Trajectory {
        t: (0..total).map(|j| (j as f64 - nr as f64) * h).collect(),
        x: Vec::with_capacity(total),
        u: Vec::with_capacity(total),
        z: Vec::with_capacity(total),
        w: Vec::with_capacity(total),
        start: nr,
        step: h,
        rule: cfg.rule,
        meta: Some(TrajectoryMeta { gain: crate::linalg::to_rows(k), config: cfg.clone() }),
    };
    for (j, x) in hist.nodes.iter().enumerate() {
        let node = j as i64 - nr as i64;
        traj.x.push(x.as_slice().to_vec());
        traj.u.push((k * x).as_slice().to_vec());
        if node < 0 {
            traj.z.push(vec![0.0; m]);
            traj.w.push(vec![0.0; q]);
            continue;
        }
        let t = node as f64 * h;
        let w = cfg.disturbance.eval(t, q);
        let mut z = delayed(&hist, 2 * node, x, glitch_at(2 * node), true);
        z.gemv(1.0, &sys.d2, &w, 1.0);
        traj.z.push(z.as_slice().to_vec());
        traj.w.push(w.as_slice().to_vec());
    }
    Ok(traj)
}
