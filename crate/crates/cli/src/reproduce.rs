//! End-to-end benchmark study: dual synthesis, iterative synthesis for two
//! basis sizes, spectral abscissae, and the closed-loop simulation, with a
//! comparison table against the published values.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use delaysynth::augplant::build_plant;
use delaysynth::fixtures::paper_s4;
use delaysynth::linalg::{to_rows, Mat};
use delaysynth::model::{system_to_json, DelaySystem};
use delaysynth::quad::QuadTol;
use delaysynth::sim::{empirical_l2_gain, simulate, Disturbance, InitialHistory, SimConfig};
use delaysynth::spectral::{spectral_abscissa, SpectralConfig};
use delaysynth::synth::{self, IterationConfig, SynthesisResult};
use serde::Serialize;
use serde_json::{json, Value};

use crate::inputs::{CliError, CliResult, EXIT_ENV};
use crate::manifest::{comment_line, sha256_hex, ManifestBuilder, RunManifest};
use crate::{gnuplot_script, result_value, trace_csv, write_json, write_text, SolverArgs};

#[derive(Args, Debug, Serialize)]
pub struct ReproduceArgs {
    /// Directory for the report, results and trajectories (created if needed).
    #[arg(long, default_value = "reproduce-out")]
    outdir: PathBuf,
    /// Skip the closed-loop simulations.
    #[arg(long = "skip-sim")]
    skip_sim: bool,
    /// Iterations of the inner approximation per basis size.
    #[arg(long = "max-iter", default_value_t = 20)]
    max_iter: usize,
    /// Length of the simulations.
    #[arg(long = "t-end", default_value_t = 20.0)]
    t_end: f64,
    /// Run the stages one after another instead of in parallel.
    #[arg(long)]
    sequential: bool,
}

/// Published reference values of the benchmark.
mod published {
    pub const DUAL_GAMMA: f64 = 0.8986;
    pub const CHECKPOINTS: [usize; 4] = [5, 10, 15, 20];
    pub const GAMMA_L1: [f64; 4] = [0.6573, 0.6542, 0.6523, 0.6509];
    pub const GAMMA_L2: [f64; 4] = [0.6443, 0.6398, 0.6376, 0.6361];
    pub const SA: [f64; 4] = [-0.7223, -0.7214, -0.7224, -0.7233];
    /// Gain used for the published trajectories.
    pub const SIM_GAIN: [f64; 2] = [-1.5810, -1.9805];
    pub const SIM_GAMMA: f64 = 0.6361;
    pub const SIM_HISTORY: [f64; 2] = [5.0, 3.0];
}

#[derive(Clone, Debug, Serialize)]
pub struct Row {
    pub stage: String,
    pub quantity: String,
    pub computed: Option<f64>,
    pub target: Option<f64>,
    pub tolerance: String,
    pub pass: Option<bool>,
    pub note: String,
}

impl Row {
    fn new(stage: &str, quantity: impl Into<String>) -> Self {
        Self {
            stage: stage.into(),
            quantity: quantity.into(),
            computed: None,
            target: None,
            tolerance: String::new(),
            pass: None,
            note: String::new(),
        }
    }

    fn rel(mut self, computed: f64, target: f64, tol: f64) -> Self {
        self.computed = Some(computed);
        self.target = Some(target);
        self.tolerance = format!("|rel err| <= {}%", tol * 100.0);
        self.pass = Some(((computed - target) / target).abs() <= tol);
        self
    }

    fn at_most(mut self, computed: f64, bound: f64) -> Self {
        self.computed = Some(computed);
        self.target = Some(bound);
        self.tolerance = format!("<= {bound}");
        self.pass = Some(computed <= bound);
        self
    }

    fn check(mut self, ok: bool, what: &str) -> Self {
        self.tolerance = what.into();
        self.pass = Some(ok);
        self
    }

    fn note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Stage {
    pub name: String,
    pub ok: bool,
    pub error: Option<String>,
    #[serde(skip)]
    pub code: u8,
}

#[derive(Default)]
struct StageOutput {
    rows: Vec<Row>,
    files: Vec<(String, String)>,
}

type StageResult = Result<StageOutput, CliError>;

fn plant(sys: &DelaySystem) -> CliResult<delaysynth::augplant::AugmentedPlant> {
    Ok(build_plant(sys, QuadTol::default())?)
}

fn sa_of(sys: &DelaySystem, k: &Mat) -> CliResult<f64> {
    Ok(spectral_abscissa(sys, k, &SpectralConfig::default())?.sa)
}

fn result_file(manifest: &RunManifest, r: &SynthesisResult, extra: Value) -> String {
    let mut doc = json!({ "manifest": manifest, "result": result_value(r) });
    if let (Value::Object(d), Value::Object(e)) = (&mut doc, extra) {
        d.extend(e);
    }
    serde_json::to_string_pretty(&doc).expect("json") + "\n"
}

fn dual_stage(solver: &SolverArgs, m: &ManifestBuilder) -> Result<(StageOutput, Mat), CliError> {
    const STAGE: &str = "dual synthesis";
    let sys = paper_s4(1, 1);
    let ap = plant(&sys)?;
    let ctx = solver.context()?;
    let alphas = synth::default_alphas(ap.dims.beta);
    let r = synth::solve_theorem2(&ctx, &ap, &sys.supply, &alphas)?;
    let g = r.gamma.unwrap_or(f64::NAN);
    let check = r.trace.iter().find(|t| t.step == "dual_check").and_then(|t| t.gamma).unwrap_or(f64::NAN);
    let sa = sa_of(&sys, &r.k)?;
    let rows = vec![
        Row::new(STAGE, "min gamma").rel(g, published::DUAL_GAMMA, 0.02),
        Row::new(STAGE, "analysis gamma of the returned gain").at_most(check, g + 1e-6),
        Row::new(STAGE, "spectral abscissa").at_most(sa, 0.0).note(format!("K = {:?}", r.k.as_slice())),
    ];
    let file = result_file(&m.finish(), &r, json!({ "spectral_abscissa": sa }));
    Ok((StageOutput { rows, files: vec![("dual.json".into(), file)] }, r.k))
}

fn iterative_stage(solver: &SolverArgs, m: &ManifestBuilder, lambda: u32, k0: &Mat, max_iter: usize) -> StageResult {
    let stage = format!("iterative synthesis, lambda = {lambda}");
    let targets = if lambda == 1 { published::GAMMA_L1 } else { published::GAMMA_L2 };
    let sys = paper_s4(1, lambda);
    let ap = plant(&sys)?;
    let ctx = solver.context()?;
    let cfg = IterationConfig { max_iter, ..IterationConfig::default() };
    let r = synth::algorithm1_from_gain(&ctx, &ap, &sys.supply, k0, &cfg)?;
    let mut rows = Vec::new();
    let mut sas = Vec::new();
    let loop_records: Vec<_> = r.trace.iter().filter(|t| t.step.parse::<usize>().is_ok() && t.gamma.is_some()).collect();
    for (c, &noi) in published::CHECKPOINTS.iter().enumerate() {
        if noi > max_iter {
            continue;
        }
        // a converged or stopped loop keeps its last iterate
        let rec = loop_records.iter().find(|t| t.step == noi.to_string()).or(loop_records.last());
        let Some(rec) = rec else {
            rows.push(Row::new(&stage, format!("gamma after {noi} iterations")).check(false, "iterate available").note("no successful iteration"));
            continue;
        };
        let note = if rec.step == noi.to_string() { String::new() } else { format!("loop stopped at iteration {}", rec.step) };
        let g = rec.gamma.unwrap_or(f64::NAN);
        rows.push(Row::new(&stage, format!("gamma after {noi} iterations")).rel(g, targets[c], 0.05).note(note));
        let sa = sa_of(&sys, &rec.k)?;
        sas.push(json!({ "iterations": noi, "k": to_rows(&rec.k), "spectral_abscissa": sa }));
        rows.push(
            Row::new(&stage, format!("spectral abscissa after {noi} iterations"))
                .rel(sa, published::SA[c], 0.05)
                .note(format!("K = {:?}", rec.k.as_slice())),
        );
    }
    let gammas: Vec<f64> = r.trace.iter().filter_map(|t| t.gamma).collect();
    let monotone = gammas.windows(2).all(|w| w[1] <= w[0] + 1e-6);
    rows.push(Row::new(&stage, "gamma trace non-increasing").check(monotone, "slack 1e-6"));
    let worst = loop_records.iter().map(|t| t.dissipation_max_eig).fold(f64::NEG_INFINITY, f64::max);
    rows.push(
        Row::new(&stage, "largest dissipation eigenvalue over iterates")
            .at_most(worst, -1e-9)
            .note(format!("{} iterates", loop_records.len())),
    );
    let manifest = m.finish();
    let files = vec![
        (format!("iterate-lambda{lambda}.json"), result_file(&manifest, &r, json!({ "checkpoints": sas }))),
        (format!("iterate-lambda{lambda}.csv"), trace_csv(&manifest, &r)),
    ];
    Ok(StageOutput { rows, files })
}

fn simulation_stage(m: &ManifestBuilder, t_end: f64) -> StageResult {
    const STAGE: &str = "simulation";
    let sys = paper_s4(1, 1);
    let k = Mat::from_row_slice(1, 2, &published::SIM_GAIN);
    let cfg = SimConfig::new(t_end, InitialHistory::Constant(published::SIM_HISTORY.to_vec()), Disturbance::benchmark());
    let traj = simulate(&sys, &k, &cfg)?;
    let slope = traj.log_norm_slope(10.0);
    let rest = SimConfig::new(t_end, InitialHistory::Constant(vec![0.0; sys.dims.n]), Disturbance::benchmark());
    let gain = empirical_l2_gain(&simulate(&sys, &k, &rest)?)?;
    let bound = 1.02 * published::SIM_GAMMA;
    let rows = vec![
        Row::new(STAGE, "max state norm").check(traj.max_state_norm().is_finite(), "finite").note(format!("{:.4}", traj.max_state_norm())),
        Row::new(STAGE, "log state-norm slope after t = 10").at_most(slope, 0.0),
        Row::new(STAGE, "empirical L2 gain from rest").at_most(gain, bound),
    ];
    let manifest = m.finish();
    let header = comment_line("#", &manifest);
    let files = vec![
        ("trajectory.csv".into(), header.clone() + &traj.to_csv()),
        ("trajectory.gp".into(), header + &gnuplot_script(Path::new("trajectory.csv"), &traj)),
    ];
    Ok(StageOutput { rows, files })
}

fn markdown(rows: &[Row], stages: &[Stage]) -> String {
    let mut s = String::from("| stage | quantity | computed | target | tolerance | result | note |\n|---|---|---|---|---|---|---|\n");
    let num = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    for r in rows {
        let result = match r.pass {
            Some(true) => "pass",
            Some(false) => "FAIL",
            None => "",
        };
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} |",
            r.stage,
            r.quantity,
            num(r.computed),
            num(r.target),
            r.tolerance,
            result,
            r.note
        );
    }
    for st in stages.iter().filter(|s| !s.ok) {
        let _ = writeln!(s, "| {} | stage failed | | | | FAIL | {} |", st.name, st.error.as_deref().unwrap_or(""));
    }
    s
}

fn record(name: &str, res: StageResult, rows: &mut Vec<Row>, files: &mut Vec<(String, String)>, stages: &mut Vec<Stage>) {
    match res {
        Ok(out) => {
            rows.extend(out.rows);
            files.extend(out.files);
            stages.push(Stage { name: name.into(), ok: true, error: None, code: 0 });
        }
        Err(e) => {
            log::error!("{name}: {e}");
            stages.push(Stage { name: name.into(), ok: false, error: Some(e.to_string()), code: e.code });
        }
    }
}

pub fn run(a: &ReproduceArgs, solver: &SolverArgs) -> CliResult<u8> {
    std::fs::create_dir_all(&a.outdir).map_err(|e| CliError::env(format!("creating `{}`: {e}", a.outdir.display())))?;
    let mut m = ManifestBuilder::new("reproduce-paper", json!({ "command": a, "solver": solver }), solver.describe());
    let fixtures = system_to_json(&paper_s4(1, 1)) + &system_to_json(&paper_s4(1, 2));
    m.input("paper-s4, paper-s4-lambda2", sha256_hex(fixtures.as_bytes()));
    let t0 = Instant::now();

    let (mut rows, mut files, mut stages) = (Vec::new(), Vec::new(), Vec::new());
    let dual = dual_stage(solver, &m);
    let k0 = match dual {
        Ok((out, k)) => {
            record("dual synthesis", Ok(out), &mut rows, &mut files, &mut stages);
            Some(k)
        }
        Err(e) => {
            record("dual synthesis", Err(e), &mut rows, &mut files, &mut stages);
            None
        }
    };

    let not_run = |what: &str| -> StageResult { Err(CliError { code: EXIT_ENV, error: anyhow::anyhow!("skipped: {what}") }) };
    let iterative = |lambda: u32| match &k0 {
        Some(k) => iterative_stage(solver, &m, lambda, k, a.max_iter),
        None => not_run("no initial gain from the dual synthesis"),
    };
    let sim = || if a.skip_sim { None } else { Some(simulation_stage(&m, a.t_end)) };
    let (l1, l2, sim_out) = if a.sequential {
        (iterative(1), iterative(2), sim())
    } else {
        std::thread::scope(|s| {
            let h1 = s.spawn(|| iterative(1));
            let h2 = s.spawn(|| iterative(2));
            let hs = s.spawn(sim);
            let join = |r: std::thread::Result<StageResult>| r.unwrap_or_else(|_| Err(CliError::env("stage panicked")));
            let sim_out = hs.join().unwrap_or_else(|_| Some(Err(CliError::env("stage panicked"))));
            (join(h1.join()), join(h2.join()), sim_out)
        })
    };
    record("iterative synthesis, lambda = 1", l1, &mut rows, &mut files, &mut stages);
    record("iterative synthesis, lambda = 2", l2, &mut rows, &mut files, &mut stages);
    if let Some(out) = sim_out {
        record("simulation", out, &mut rows, &mut files, &mut stages);
    }

    log::info!("reproduction finished in {:.1} s", t0.elapsed().as_secs_f64());
    let manifest = m.finish();
    for (name, text) in &files {
        write_text(Some(&a.outdir.join(name)), text)?;
    }
    let table = markdown(&rows, &stages);
    write_text(Some(&a.outdir.join("report.md")), &(comment_line("<!--", &manifest).trim_end().to_string() + " -->\n\n" + &table))?;
    write_json(Some(&a.outdir.join("report.json")), &manifest, json!({ "rows": rows, "stages": stages }))?;
    print!("{table}");
    Ok(stages.iter().find(|s| !s.ok).map(|s| s.code).unwrap_or(0))
}
