//! Command-line inputs: systems, gains, signals, and the error type that
//! carries the process exit code.

use std::fmt;
use std::path::Path;

use delaysynth::linalg::{from_rows, Mat};
use delaysynth::model::{parse_system, system_to_json, DelaySystem, KernelKind};
use delaysynth::sim::{Disturbance, GlitchEvents, GlitchSpec, InitialHistory};
use delaysynth::Error;
use serde_json::Value;

use crate::manifest::sha256_hex;

/// Exit code 1: invalid input, infeasible problem, failed validation.
pub const EXIT_INPUT: u8 = 1;
/// Exit code 2: solver or environment failure.
pub const EXIT_ENV: u8 = 2;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn input(msg: impl fmt::Display) -> Self {
        Self { code: EXIT_INPUT, error: anyhow::anyhow!("{msg}") }
    }

    pub fn env(msg: impl fmt::Display) -> Self {
        Self { code: EXIT_ENV, error: anyhow::anyhow!("{msg}") }
    }

    pub fn context(self, what: impl fmt::Display) -> Self {
        Self { code: self.code, error: self.error.context(what.to_string()) }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Environment(_) | Error::Numerical(_) | Error::Io(_) => EXIT_ENV,
        _ => EXIT_INPUT,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self { code: exit_code(&e), error: e.into() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self { code: EXIT_ENV, error: e.into() }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// A loaded system with the hash recorded in the manifest.
pub struct Input {
    pub name: String,
    pub sha256: String,
    pub system: DelaySystem,
}

/// Reads a system file, or a builtin fixture when no such file exists.
pub fn load_input(spec: &str) -> CliResult<Input> {
    let path = Path::new(spec);
    if path.exists() {
        let bytes = std::fs::read(path).map_err(|e| CliError::input(format!("cannot read `{spec}`: {e}")))?;
        let text = String::from_utf8(bytes.clone()).map_err(|_| CliError::input(format!("`{spec}` is not UTF-8")))?;
        let system = parse_system(&text).map_err(|e| CliError::from(e).context(format!("loading `{spec}`")))?;
        return Ok(Input { name: spec.to_string(), sha256: sha256_hex(&bytes), system });
    }
    match delaysynth::fixtures::builtin(spec) {
        Some(system) => Ok(Input { name: spec.to_string(), sha256: sha256_hex(system_to_json(&system).as_bytes()), system }),
        None => Err(CliError::input(format!(
            "`{spec}` is neither a file nor a builtin system (builtins: {})",
            delaysynth::fixtures::BUILTIN_NAMES.join(", ")
        ))),
    }
}

fn parse_numbers(s: &str, what: &str) -> CliResult<Vec<f64>> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| CliError::input(format!("{what}: `{t}` is not a number"))))
        .collect()
}

/// A `p × n` gain from an inline literal (`a,b;c,d`, rows separated by `;`)
/// or from a JSON file holding `k` (at the top level or under `result`).
pub fn parse_gain(spec: &str, p: usize, n: usize) -> CliResult<Mat> {
    let rows: Vec<Vec<f64>> = if Path::new(spec).is_file() {
        let text = std::fs::read_to_string(spec).map_err(|e| CliError::input(format!("gain file `{spec}`: {e}")))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| CliError::input(format!("gain file `{spec}`: {e}")))?;
        let k = ["/result/k", "/k"]
            .iter()
            .find_map(|ptr| v.pointer(ptr))
            .ok_or_else(|| CliError::input(format!("gain file `{spec}` has no `k` or `result.k`")))?;
        serde_json::from_value(k.clone()).map_err(|e| CliError::input(format!("gain file `{spec}`: field `k`: {e}")))?
    } else {
        spec.split(';').map(|r| parse_numbers(r, "gain")).collect::<CliResult<_>>()?
    };
    if rows.len() != p || rows.iter().any(|r| r.len() != n) {
        let shape: Vec<usize> = rows.iter().map(Vec::len).collect();
        return Err(CliError::input(format!("gain must be {p} x {n}, got rows of lengths {shape:?}")));
    }
    Ok(from_rows(&rows))
}

/// Multipliers for the dual condition: a single value sets the first and
/// zeroes the rest; a list must have exactly `beta` entries.
pub fn parse_alphas(spec: Option<&str>, beta: usize) -> CliResult<Vec<f64>> {
    let Some(spec) = spec else {
        return Ok(delaysynth::synth::default_alphas(beta));
    };
    let vals = parse_numbers(spec, "alpha")?;
    match vals.len() {
        1 => {
            let mut a = vec![0.0; beta];
            a[0] = vals[0];
            Ok(a)
        }
        l if l == beta => Ok(vals),
        l => Err(CliError::input(format!("alpha: expected 1 or beta = {beta} values, got {l}"))),
    }
}

/// `none`, `builtin:paper` or `file:<csv>` with columns `t, w_1, …, w_q` on
/// a uniform time grid.
pub fn parse_disturbance(spec: &str, q: usize) -> CliResult<Disturbance> {
    match spec {
        "none" => Ok(Disturbance::None),
        "builtin:paper" => Ok(Disturbance::benchmark()),
        _ => {
            let path = spec
                .strip_prefix("file:")
                .ok_or_else(|| CliError::input(format!("disturbance: expected none, builtin:paper or file:<csv>, got `{spec}`")))?;
            let rows = read_csv(path)?;
            if rows.len() < 2 {
                return Err(CliError::input(format!("disturbance file `{path}` needs at least two samples")));
            }
            if let Some(bad) = rows.iter().position(|r| r.len() != q + 1) {
                return Err(CliError::input(format!(
                    "disturbance file `{path}` row {}: expected {} columns (t, w_1..w_{q}), got {}",
                    bad + 1,
                    q + 1,
                    rows[bad].len()
                )));
            }
            let start = rows[0][0];
            let step = rows[1][0] - start;
            let uniform = rows
                .iter()
                .enumerate()
                .all(|(k, r)| (r[0] - (start + k as f64 * step)).abs() <= 1e-9 * (1.0 + r[0].abs()));
            if !(step > 0.0) || !uniform {
                return Err(CliError::input(format!("disturbance file `{path}`: times must be increasing and uniformly spaced")));
            }
            Ok(Disturbance::Samples { start, step, values: rows.into_iter().map(|r| r[1..].to_vec()).collect() })
        }
    }
}

fn read_csv(path: &str) -> CliResult<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::input(format!("`{path}`: {e}")))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::input(format!("`{path}`: {e}")))?;
        let row = rec
            .iter()
            .map(|t| t.parse::<f64>().map_err(|_| CliError::input(format!("`{path}` row {}: `{t}` is not a number", i + 1))))
            .collect::<CliResult<Vec<_>>>()?;
        out.push(row);
    }
    Ok(out)
}

/// Band-limited white noise on the input kernel of the first interval,
/// direction all ones, sampled every step.
pub fn benchmark_glitch(sys: &DelaySystem, step: f64, t_end: f64) -> GlitchSpec {
    let (n, p) = (sys.dims.n, sys.dims.p);
    GlitchSpec {
        interval: 1,
        kernel: KernelKind::B,
        direction: vec![vec![1.0; p]; n],
        events: GlitchEvents::WhiteNoise { sample_time: step, power: 0.1, seed: 23341, start: 0.0, stop: t_end },
    }
}

/// `none`, `builtin:paper` or `file:<json>` holding a glitch description.
pub fn parse_glitch(spec: &str, sys: &DelaySystem, step: f64, t_end: f64) -> CliResult<Option<GlitchSpec>> {
    match spec {
        "none" => Ok(None),
        "builtin:paper" => Ok(Some(benchmark_glitch(sys, step, t_end))),
        _ => {
            let path = spec
                .strip_prefix("file:")
                .ok_or_else(|| CliError::input(format!("glitch: expected none, builtin:paper or file:<json>, got `{spec}`")))?;
            let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("glitch file `{path}`: {e}")))?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize(de)
                .map(Some)
                .map_err(|e| CliError::input(format!("glitch file `{path}` at `{}`: {}", e.path(), e.inner())))
        }
    }
}

/// Zero history by default; `a,b,…` for a constant vector; `file:<csv>`
/// for samples `x_1, …, x_n` on the grid `−r, −r + h, …, 0`.
pub fn parse_history(spec: Option<&str>, n: usize) -> CliResult<InitialHistory> {
    match spec {
        None => Ok(InitialHistory::Constant(vec![0.0; n])),
        Some(s) => match s.strip_prefix("file:") {
            Some(path) => Ok(InitialHistory::Samples(read_csv(path)?)),
            None => {
                let v = parse_numbers(s, "history")?;
                if v.len() != n {
                    return Err(CliError::input(format!("history: expected {n} values, got {}", v.len())));
                }
                Ok(InitialHistory::Constant(v))
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use delaysynth::fixtures::paper_s4;

    #[test]
    fn inline_gain_literal() {
        let k = parse_gain("-1.581, -1.9805", 1, 2).unwrap();
        assert_eq!(k.as_slice(), &[-1.581, -1.9805]);
        let k = parse_gain("1,2;3,4", 2, 2).unwrap();
        assert_eq!(k[(1, 0)], 3.0);
        assert_eq!(parse_gain("1,2,3", 1, 2).unwrap_err().code, EXIT_INPUT);
        assert_eq!(parse_gain("1,x", 1, 2).unwrap_err().code, EXIT_INPUT);
    }

    #[test]
    fn gain_from_result_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        std::fs::write(&path, r#"{"manifest": {}, "result": {"k": [[-1.0, -2.0]]}}"#).unwrap();
        let k = parse_gain(path.to_str().unwrap(), 1, 2).unwrap();
        assert_eq!(k.as_slice(), &[-1.0, -2.0]);
    }

    #[test]
    fn alpha_forms() {
        assert_eq!(parse_alphas(Some("5"), 3).unwrap(), vec![5.0, 0.0, 0.0]);
        assert_eq!(parse_alphas(Some("1,2,3"), 3).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(parse_alphas(None, 2).unwrap(), vec![5.0, 0.0]);
        assert!(parse_alphas(Some("1,2"), 3).is_err());
    }

    #[test]
    fn disturbance_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        std::fs::write(&path, "t,w_1\n0,0\n0.5,1\n1.0,2\n").unwrap();
        let d = parse_disturbance(&format!("file:{}", path.display()), 1).unwrap();
        assert_eq!(d.eval(0.75, 1)[0], 1.5);
        std::fs::write(&path, "t,w_1\n0,0\n0.5,1\n1.2,2\n").unwrap();
        assert!(parse_disturbance(&format!("file:{}", path.display()), 1).is_err());
        assert!(parse_disturbance("sine", 1).is_err());
        assert_eq!(parse_disturbance("builtin:paper", 1).unwrap(), Disturbance::benchmark());
    }

    #[test]
    fn glitch_and_history() {
        let sys = paper_s4(1, 1);
        let g = parse_glitch("builtin:paper", &sys, 0.002, 10.0).unwrap().unwrap();
        assert_eq!(g.direction, vec![vec![1.0], vec![1.0]]);
        assert!(parse_glitch("none", &sys, 0.002, 10.0).unwrap().is_none());
        assert_eq!(parse_history(Some("5,3"), 2).unwrap(), InitialHistory::Constant(vec![5.0, 3.0]));
        assert!(parse_history(Some("5"), 2).is_err());
    }

    #[test]
    fn unknown_input_is_an_input_error() {
        let e = load_input("no-such-system").err().unwrap();
        assert_eq!(e.code, EXIT_INPUT);
        assert!(e.to_string().contains("paper-s4"));
    }
}
