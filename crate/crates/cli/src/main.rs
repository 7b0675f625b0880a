//! `delaysynth`: controller synthesis, analysis, simulation and spectra for
//! linear delay systems from the command line.

mod inputs;
mod manifest;
mod reproduce;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use delaysynth::augplant::{build_plant, AugmentedPlant};
use delaysynth::gram::compute_gram;
use delaysynth::linalg::to_rows;
use delaysynth::quad::QuadTol;
use delaysynth::sdp::{backend_by_name, default_backend, to_sdpa, SolverOptions};
use delaysynth::sim::{simulate, HistoryRule, SimConfig, Trajectory};
use delaysynth::spectral::{spectral_abscissa, SpectralConfig};
use delaysynth::synth::{self, IterationConfig, SolveContext, SynthesisResult};
use serde::Serialize;
use serde_json::{json, Value};

use inputs::{load_input, parse_alphas, parse_gain, CliError, CliResult, Input, EXIT_INPUT};
use manifest::{comment_line, strip_timing, ManifestBuilder, RunManifest};

#[derive(Parser)]
#[command(name = "delaysynth", version, about = "Dissipative state-feedback synthesis for linear delay systems")]
struct Cli {
    #[command(flatten)]
    solver: SolverArgs,
    /// More log output on standard error (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Serialize)]
struct SolverArgs {
    /// SDP backend; overrides the DELAYSYNTH_SOLVER environment variable.
    #[arg(long, global = true)]
    solver: Option<String>,
    /// Gap and feasibility tolerance of the SDP solver.
    #[arg(long = "solver-tol", global = true, default_value_t = 1e-8)]
    solver_tol: f64,
    /// Iteration limit of the SDP solver.
    #[arg(long = "solver-max-iter", global = true, default_value_t = 300)]
    solver_max_iter: u32,
}

impl SolverArgs {
    fn context(&self) -> CliResult<SolveContext> {
        if !(self.solver_tol > 0.0) {
            return Err(CliError::input(format!("--solver-tol must be > 0, got {}", self.solver_tol)));
        }
        let backend = match &self.solver {
            Some(name) => backend_by_name(name)?,
            None => default_backend()?,
        };
        Ok(SolveContext::new(backend, SolverOptions { tol: self.solver_tol, max_iter: self.solver_max_iter, verbose: false }))
    }

    fn describe(&self) -> String {
        let name = match &self.solver {
            Some(s) => s.clone(),
            None => default_backend().map(|b| b.name().to_string()).unwrap_or_else(|e| format!("unavailable ({e})")),
        };
        format!("{name} tol={:e} max_iter={}", self.solver_tol, self.solver_max_iter)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check a system description and list every violation.
    Validate(ValidateArgs),
    /// Gram matrices and projection data of every interval.
    Gram(GramArgs),
    /// Dimension table and the column layout of the lifted signal.
    Inspect(InspectArgs),
    /// Dual synthesis condition: gain and performance level in one SDP.
    Synth2(Synth2Args),
    /// Performance level certified for a given gain.
    Analyze(AnalyzeArgs),
    /// Iterative synthesis started from the dual condition or a given gain.
    Iterate(IterateArgs),
    /// Closed-loop trajectory as CSV, optionally with a gnuplot script.
    Simulate(SimulateArgs),
    /// Rightmost closed-loop characteristic roots.
    Spectrum(SpectrumArgs),
    /// Runs the benchmark study and compares with the published values.
    ReproducePaper(reproduce::ReproduceArgs),
}

#[derive(Args, Debug, Serialize)]
struct ValidateArgs {
    /// System file or builtin name (paper-s4, paper-s4-lambda2, paper-s4:<sigma>,<lambda>).
    system: String,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Serialize)]
struct OutArgs {
    /// Output file; standard output when omitted.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct GramArgs {
    system: String,
    #[arg(long = "rel-tol", default_value_t = QuadTol::default().rel)]
    rel_tol: f64,
    #[arg(long = "abs-tol", default_value_t = QuadTol::default().abs)]
    abs_tol: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Serialize)]
struct InspectArgs {
    system: String,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Serialize)]
struct SynthOutArgs {
    /// Result JSON; standard output when omitted.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Iteration table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// The SDP in sparse SDPA format, written before solving.
    #[arg(long = "export-sdpa")]
    export_sdpa: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct Synth2Args {
    system: String,
    /// Multipliers: one value for the current-state slot, or all beta values.
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<String>,
    #[command(flatten)]
    out: SynthOutArgs,
}

#[derive(Args, Debug, Serialize)]
struct AnalyzeArgs {
    system: String,
    /// Gain literal (`a,b;c,d`) or a result JSON file.
    #[arg(long, allow_hyphen_values = true)]
    gain: String,
    #[command(flatten)]
    out: SynthOutArgs,
}

#[derive(Args, Debug, Serialize)]
struct IterateArgs {
    system: String,
    /// Initial gain; the dual condition supplies it when omitted.
    #[arg(long, allow_hyphen_values = true)]
    gain: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<String>,
    #[arg(long, default_value_t = IterationConfig::default().rho1)]
    rho1: f64,
    #[arg(long, default_value_t = IterationConfig::default().rho2)]
    rho2: f64,
    #[arg(long, default_value_t = IterationConfig::default().eps)]
    eps: f64,
    #[arg(long = "max-iter", default_value_t = IterationConfig::default().max_iter)]
    max_iter: usize,
    /// Drop the performance level from the objective (proximal terms only).
    #[arg(long = "no-gamma-objective")]
    no_gamma_objective: bool,
    #[command(flatten)]
    out: SynthOutArgs,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
enum RuleArg {
    Trapezoid,
    Simpson,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    system: String,
    #[arg(long, allow_hyphen_values = true)]
    gain: String,
    #[arg(long = "t-end", default_value_t = 20.0)]
    t_end: f64,
    #[arg(long, default_value_t = 0.002)]
    step: f64,
    /// Initial history: `a,b,…` constant, `file:<csv>` samples; zero when omitted.
    #[arg(long, allow_hyphen_values = true)]
    history: Option<String>,
    /// none | builtin:paper | file:<csv>
    #[arg(long, default_value = "builtin:paper")]
    disturbance: String,
    /// none | builtin:paper | file:<json>
    #[arg(long, default_value = "none")]
    glitch: String,
    #[arg(long, value_enum, default_value = "trapezoid")]
    rule: RuleArg,
    /// Trajectory CSV; standard output when omitted.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// gnuplot script plotting the CSV (requires --out).
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SpectrumArgs {
    system: String,
    #[arg(long, allow_hyphen_values = true)]
    gain: String,
    #[arg(long, default_value_t = SpectralConfig::default().nodes)]
    nodes: usize,
    /// Double the node count until the abscissa settles.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    refine: bool,
    #[arg(long, default_value_t = SpectralConfig::default().tol)]
    tol: f64,
    /// Number of rightmost eigenvalues reported.
    #[arg(long, default_value_t = SpectralConfig::default().report)]
    report: usize,
    #[command(flatten)]
    out: OutArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_INPUT) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: &Cli) -> CliResult<u8> {
    let s = &cli.solver;
    match &cli.command {
        Command::Validate(a) => validate(a, s),
        Command::Gram(a) => gram(a, s).map(|_| 0),
        Command::Inspect(a) => inspect(a, s).map(|_| 0),
        Command::Synth2(a) => synth2(a, s).map(|_| 0),
        Command::Analyze(a) => analyze(a, s).map(|_| 0),
        Command::Iterate(a) => iterate(a, s).map(|_| 0),
        Command::Simulate(a) => simulate_cmd(a, s).map(|_| 0),
        Command::Spectrum(a) => spectrum(a, s).map(|_| 0),
        Command::ReproducePaper(a) => reproduce::run(a, s),
    }
}

// ---------------------------------------------------------------------------
// output helpers

fn write_text(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::env(format!("writing `{}`: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// `{"manifest": …, <body fields>}` as pretty JSON.
fn write_json(path: Option<&Path>, manifest: &RunManifest, body: Value) -> CliResult<()> {
    let mut doc = json!({ "manifest": manifest });
    if let (Value::Object(d), Value::Object(b)) = (&mut doc, body) {
        d.extend(b);
    }
    write_text(path, &(serde_json::to_string_pretty(&doc).expect("json") + "\n"))
}

fn begin(command: &str, config: impl Serialize, solver: &SolverArgs, input: &Input) -> ManifestBuilder {
    let mut m = ManifestBuilder::new(command, json!({ "command": config, "solver": solver }), solver.describe());
    m.input(&input.name, input.sha256.clone());
    m
}

fn plant(input: &Input) -> CliResult<AugmentedPlant> {
    Ok(build_plant(&input.system, QuadTol::default())?)
}

fn result_value(r: &SynthesisResult) -> Value {
    let mut v = serde_json::to_value(r).expect("result serializes");
    strip_timing(&mut v);
    v
}

pub(crate) fn trace_csv(manifest: &RunManifest, r: &SynthesisResult) -> String {
    let (p, n) = r.k.shape();
    let mut s = comment_line("#", manifest);
    s.push_str("step,gamma,delta_y,delta_k,status,dissipation_max_eig");
    for i in 1..=p {
        for j in 1..=n {
            s.push_str(&format!(",k_{i}_{j}"));
        }
    }
    s.push('\n');
    let num = |v: f64| if v.is_nan() { String::new() } else { format!("{v:e}") };
    for t in &r.trace {
        let status = serde_json::to_value(t.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{},{}",
            t.step,
            t.gamma.map(num).unwrap_or_default(),
            num(t.delta_y),
            num(t.delta_k),
            status,
            num(t.dissipation_max_eig)
        ));
        for row in to_rows(&t.k) {
            for v in row {
                s.push_str(&format!(",{v:e}"));
            }
        }
        s.push('\n');
    }
    s
}

fn finish_synthesis(m: &ManifestBuilder, out: &SynthOutArgs, r: &SynthesisResult) -> CliResult<()> {
    let manifest = m.finish();
    if let Some(path) = &out.csv {
        write_text(Some(path), &trace_csv(&manifest, r))?;
    }
    write_json(out.out.as_deref(), &manifest, json!({ "result": result_value(r) }))
}

fn export_sdpa(m: &ManifestBuilder, out: &SynthOutArgs, problem: impl FnOnce() -> CliResult<delaysynth::sdp::SdpProblem>) -> CliResult<()> {
    if let Some(path) = &out.export_sdpa {
        let text = comment_line("*", &m.finish()) + &to_sdpa(&problem()?);
        write_text(Some(path), &text)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// commands

fn validate(a: &ValidateArgs, s: &SolverArgs) -> CliResult<u8> {
    let input = match load_input(&a.system) {
        Ok(i) => i,
        Err(e) => {
            let Some(delaysynth::Error::InvalidSystem(violations)) = e.error.downcast_ref::<delaysynth::Error>() else {
                return Err(e);
            };
            eprintln!("error: {e}");
            let bytes = std::fs::read(&a.system)?;
            let mut m = ManifestBuilder::new("validate", json!({ "command": a, "solver": s }), s.describe());
            m.input(&a.system, manifest::sha256_hex(&bytes));
            write_json(a.out.out.as_deref(), &m.finish(), json!({ "valid": false, "violations": violations }))?;
            return Ok(EXIT_INPUT);
        }
    };
    let m = begin("validate", a, s, &input);
    write_json(
        a.out.out.as_deref(),
        &m.finish(),
        json!({ "valid": true, "violations": [], "dimensions": input.system.dims }),
    )?;
    Ok(0)
}

fn gram(a: &GramArgs, s: &SolverArgs) -> CliResult<()> {
    let input = load_input(&a.system)?;
    let tol = QuadTol { rel: a.rel_tol, abs: a.abs_tol };
    let m = begin("gram", a, s, &input);
    let mut intervals = Vec::new();
    for (i, b) in input.system.interval_bases()?.iter().enumerate() {
        let g = compute_gram(b, tol)?;
        intervals.push(json!({
            "interval": i + 1,
            "range": [b.lo, b.hi],
            "closure_matrix": to_rows(&b.m),
            "gram": g,
        }));
    }
    write_json(a.out.out.as_deref(), &m.finish(), json!({ "intervals": intervals }))
}

fn inspect(a: &InspectArgs, s: &SolverArgs) -> CliResult<()> {
    let input = load_input(&a.system)?;
    let ap = plant(&input)?;
    let m = begin("inspect", a, s, &input);
    let columns: Vec<Value> =
        ap.dims.column_blocks().into_iter().map(|(name, start, width)| json!({ "name": name, "start": start, "width": width })).collect();
    let shape = |x: &delaysynth::linalg::Mat| json!([x.nrows(), x.ncols()]);
    write_json(
        a.out.out.as_deref(),
        &m.finish(),
        json!({
            "dimensions": ap.dims,
            "columns": columns,
            "plant": { "a": shape(&ap.a), "b1": shape(&ap.b1), "c": shape(&ap.c), "b2": shape(&ap.b2) },
            "lmi_sizes": {
                "positivity": ap.dims.n + ap.dims.e,
                "dissipation": ap.dims.phi_width,
                "dual": ap.dims.phi_width + ap.dims.n,
            },
        }),
    )
}

fn synth2(a: &Synth2Args, s: &SolverArgs) -> CliResult<()> {
    let input = load_input(&a.system)?;
    let ap = plant(&input)?;
    let alphas = parse_alphas(a.alpha.as_deref(), ap.dims.beta)?;
    let m = begin("synth2", json!({ "args": a, "alphas": alphas }), s, &input);
    let supply = &input.system.supply;
    export_sdpa(&m, &a.out, || Ok(synth::build_dual_problem(&ap, supply, &alphas)?))?;
    let ctx = s.context()?;
    let r = synth::solve_theorem2(&ctx, &ap, supply, &alphas)?;
    finish_synthesis(&m, &a.out, &r)
}

fn analyze(a: &AnalyzeArgs, s: &SolverArgs) -> CliResult<()> {
    let input = load_input(&a.system)?;
    let ap = plant(&input)?;
    let k = parse_gain(&a.gain, ap.dims.p, ap.dims.n)?;
    let m = begin("analyze", json!({ "args": a, "gain": to_rows(&k) }), s, &input);
    let supply = &input.system.supply;
    export_sdpa(&m, &a.out, || Ok(synth::build_analysis_problem(&ap, supply, &k)?))?;
    let ctx = s.context()?;
    let r = synth::analyze_theorem1_fixed_gain(&ctx, &ap, supply, &k)?;
    finish_synthesis(&m, &a.out, &r)
}

fn iterate(a: &IterateArgs, s: &SolverArgs) -> CliResult<()> {
    if a.out.export_sdpa.is_some() {
        return Err(CliError::input("--export-sdpa is available for synth2 and analyze"));
    }
    let input = load_input(&a.system)?;
    let ap = plant(&input)?;
    let cfg = IterationConfig { rho1: a.rho1, rho2: a.rho2, eps: a.eps, max_iter: a.max_iter, gamma_in_objective: !a.no_gamma_objective };
    cfg.validate()?;
    let supply = &input.system.supply;
    let ctx = s.context()?;
    let (m, r) = match &a.gain {
        Some(g) => {
            let k = parse_gain(g, ap.dims.p, ap.dims.n)?;
            let m = begin("iterate", json!({ "args": a, "iteration": cfg, "gain": to_rows(&k) }), s, &input);
            (m, synth::algorithm1_from_gain(&ctx, &ap, supply, &k, &cfg)?)
        }
        None => {
            let alphas = parse_alphas(a.alpha.as_deref(), ap.dims.beta)?;
            let m = begin("iterate", json!({ "args": a, "iteration": cfg, "alphas": alphas }), s, &input);
            (m, synth::algorithm1(&ctx, &ap, supply, &alphas, &cfg)?)
        }
    };
    finish_synthesis(&m, &a.out, &r)
}

pub(crate) fn gnuplot_script(csv: &Path, traj: &Trajectory) -> String {
    let (n, p, m) = (traj.x[0].len(), traj.u[0].len(), traj.z[0].len());
    let file = csv.display();
    let mut s = String::from("# gnuplot script for a delaysynth trajectory\n");
    s.push_str("set datafile separator ','\nset key autotitle columnhead\nset grid\nset xlabel 't'\n");
    s.push_str("set multiplot layout 3,1\n");
    let mut col = 2;
    for (label, width) in [("x", n), ("u", p), ("z", m)] {
        s.push_str(&format!("set ylabel '{label}'\nplot for [i={col}:{}] '{file}' using 1:i with lines\n", col + width - 1));
        col += width;
    }
    s.push_str("unset multiplot\n");
    s
}

fn simulate_cmd(a: &SimulateArgs, s: &SolverArgs) -> CliResult<()> {
    if a.plot.is_some() && a.out.is_none() {
        return Err(CliError::input("--plot requires --out"));
    }
    let input = load_input(&a.system)?;
    let sys = &input.system;
    let k = parse_gain(&a.gain, sys.dims.p, sys.dims.n)?;
    let cfg = SimConfig {
        t_end: a.t_end,
        step: a.step,
        history: inputs::parse_history(a.history.as_deref(), sys.dims.n)?,
        disturbance: inputs::parse_disturbance(&a.disturbance, sys.dims.q)?,
        glitch: inputs::parse_glitch(&a.glitch, sys, a.step, a.t_end)?,
        rule: match a.rule {
            RuleArg::Trapezoid => HistoryRule::Trapezoid,
            RuleArg::Simpson => HistoryRule::Simpson,
        },
    };
    let m = begin("simulate", json!({ "args": a, "gain": to_rows(&k), "simulation": cfg }), s, &input);
    let traj = simulate(sys, &k, &cfg)?;
    let manifest = m.finish();
    write_text(a.out.as_deref(), &(comment_line("#", &manifest) + &traj.to_csv()))?;
    if let (Some(plot), Some(out)) = (&a.plot, &a.out) {
        write_text(Some(plot), &(comment_line("#", &manifest) + &gnuplot_script(out, &traj)))?;
    }
    Ok(())
}

fn spectrum(a: &SpectrumArgs, s: &SolverArgs) -> CliResult<()> {
    let input = load_input(&a.system)?;
    let sys = &input.system;
    let k = parse_gain(&a.gain, sys.dims.p, sys.dims.n)?;
    let cfg = SpectralConfig { nodes: a.nodes, refine: a.refine, tol: a.tol, report: a.report, ..SpectralConfig::default() };
    let m = begin("spectrum", json!({ "args": a, "gain": to_rows(&k), "spectral": cfg }), s, &input);
    let r = spectral_abscissa(sys, &k, &cfg)?;
    write_json(a.out.out.as_deref(), &m.finish(), serde_json::to_value(&r).expect("spectrum serializes"))
}
