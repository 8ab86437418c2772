//! File formats used by the `sess` binary: JSON game files, TOML or JSON
//! model configs, run reports (JSON or CSV) and trajectory CSVs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize, Serializer};

use crate::cancer::{CancerModelParams, ContinuousSolution, DEFAULT_DOSE_BOUND};
use crate::discrete::Sess;
use crate::error::{Error, Result};
use crate::game::{DiscreteSEG, ToleranceSet};
use crate::replicator::Trajectory;

pub(crate) fn serialize_duration<S: Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

/// Version string written into every report.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Default multistart count of the command-line tools.
pub const DEFAULT_STARTS: usize = 64;

/// On-disk layout of a discrete game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameFile {
    /// Number of leader strategies.
    pub m: usize,
    /// Number of follower phenotypes.
    pub n: usize,
    pub leader_payoffs: Vec<Vec<f64>>,
    pub follower_payoffs: Vec<Vec<Vec<f64>>>,
    /// Overrides of individual tolerances; missing entries keep their defaults.
    #[serde(default)]
    pub tolerances: Option<ToleranceSet>,
}

impl GameFile {
    /// Checks the declared sizes and builds the validated game.
    pub fn into_game(self) -> Result<(DiscreteSEG, ToleranceSet)> {
        let (m, n) = (self.m, self.n);
        if self.leader_payoffs.len() != m {
            return Err(Error::InvalidGame(format!(
                "m = {m} but leader_payoffs has {} rows",
                self.leader_payoffs.len()
            )));
        }
        if let Some(row) = self.leader_payoffs.iter().position(|r| r.len() != n) {
            return Err(Error::InvalidGame(format!("n = {n} but leader_payoffs row {row} has {} entries", self.leader_payoffs[row].len())));
        }
        if self.follower_payoffs.len() != m {
            return Err(Error::InvalidGame(format!(
                "m = {m} but follower_payoffs has {} slices",
                self.follower_payoffs.len()
            )));
        }
        for (l, slice) in self.follower_payoffs.iter().enumerate() {
            if slice.len() != n || slice.iter().any(|r| r.len() != n) {
                return Err(Error::InvalidGame(format!("follower_payoffs slice {l} is not {n}x{n}")));
            }
        }
        let tol = self.tolerances.unwrap_or_default();
        tol.validate()?;
        let game = DiscreteSEG::new(self.leader_payoffs, self.follower_payoffs)?;
        Ok((game, tol))
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn parse_error(path: &Path, message: impl ToString) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

/// Reads a JSON game file. Parse errors carry the line and column.
pub fn parse_game_file(path: &Path) -> Result<(DiscreteSEG, ToleranceSet)> {
    parse_game_str(&read(path)?).map_err(|e| match e {
        Error::Parse { message, .. } => parse_error(path, message),
        other => other,
    })
}

/// [`parse_game_file`] on an in-memory document.
pub fn parse_game_str(text: &str) -> Result<(DiscreteSEG, ToleranceSet)> {
    let file: GameFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: "<input>".into(),
        message: e.to_string(),
    })?;
    file.into_game()
}

/// Run options that may accompany model parameters in a config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub dose_bound: f64,
    pub starts: usize,
    pub seed: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            dose_bound: DEFAULT_DOSE_BOUND,
            starts: DEFAULT_STARTS,
            seed: 0,
        }
    }
}

const RUN_OPTION_KEYS: [&str; 3] = ["dose_bound", "starts", "seed"];

/// Reads a model config: TOML for `.toml` files, JSON otherwise. Missing
/// parameters keep their defaults and unknown keys are rejected.
pub fn parse_model_config(path: &Path) -> Result<(CancerModelParams, RunOptions)> {
    let text = read(path)?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    let parsed = if is_toml {
        parse_model_toml(&text)
    } else {
        parse_model_json(&text)
    };
    parsed.map_err(|e| match e {
        Error::Parse { message, .. } => parse_error(path, message),
        other => other,
    })
}

/// TOML variant of [`parse_model_config`] on an in-memory document.
pub fn parse_model_toml(text: &str) -> Result<(CancerModelParams, RunOptions)> {
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::Parse {
        path: "<input>".into(),
        message: e.to_string(),
    })?;
    let value = serde_json::to_value(table).map_err(|e| Error::Config(e.to_string()))?;
    model_from_value(value)
}

/// JSON variant of [`parse_model_config`] on an in-memory document.
pub fn parse_model_json(text: &str) -> Result<(CancerModelParams, RunOptions)> {
    let value: serde_json::Value = if text.trim().is_empty() {
        serde_json::Value::Object(Default::default())
    } else {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<input>".into(),
            message: e.to_string(),
        })?
    };
    model_from_value(value)
}

fn model_from_value(value: serde_json::Value) -> Result<(CancerModelParams, RunOptions)> {
    let serde_json::Value::Object(mut map) = value else {
        return Err(Error::Config("model config must be a table of key/value pairs".into()));
    };
    let mut run = serde_json::Map::new();
    for key in RUN_OPTION_KEYS {
        if let Some(v) = map.remove(key) {
            run.insert(key.to_string(), v);
        }
    }
    let params: CancerModelParams =
        serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| Error::Config(e.to_string()))?;
    params.validate()?;
    let mut opts = RunOptions::default();
    if let Some(v) = run.get("dose_bound") {
        opts.dose_bound = v
            .as_f64()
            .filter(|b| b.is_finite() && *b >= 0.0)
            .ok_or_else(|| Error::Config(format!("dose_bound must be a nonnegative number, got {v}")))?;
    }
    if let Some(v) = run.get("starts") {
        opts.starts = v
            .as_u64()
            .filter(|s| *s >= 1)
            .ok_or_else(|| Error::Config(format!("starts must be a positive integer, got {v}")))? as usize;
    }
    if let Some(v) = run.get("seed") {
        opts.seed = v
            .as_u64()
            .ok_or_else(|| Error::Config(format!("seed must be a nonnegative integer, got {v}")))?;
    }
    Ok((params, opts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Success,
    /// No SESS exists (discrete) or no ESS at the queried point.
    None,
    /// The continuous candidate failed certification.
    Failure,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "SUCCESS",
            Outcome::None => "NONE",
            Outcome::Failure => "FAILURE",
        }
    }

    /// Process exit code: 0 on success, 2 on NONE or FAILURE.
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::None | Outcome::Failure => 2,
        }
    }
}

/// Solution vectors of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Solution {
    Discrete {
        support: Vec<usize>,
        sigma: Vec<f64>,
        x: Vec<f64>,
        leader_value: f64,
        follower_value: f64,
    },
    Continuous {
        m: [f64; 2],
        u: [f64; 2],
        x: [f64; 3],
        q: f64,
        /// `G_0`, `G_1^max`, `G_2^max`.
        certification: [f64; 3],
    },
}

impl From<&Sess> for Solution {
    fn from(s: &Sess) -> Self {
        Solution::Discrete {
            support: s.support.clone(),
            sigma: s.sigma.as_slice().to_vec(),
            x: s.x.as_slice().to_vec(),
            leader_value: s.leader_value,
            follower_value: s.follower_value,
        }
    }
}

impl From<&ContinuousSolution> for Solution {
    fn from(s: &ContinuousSolution) -> Self {
        Solution::Continuous {
            m: s.state.m,
            u: s.state.u,
            x: s.state.x,
            q: s.q_value,
            certification: s.certification,
        }
    }
}

/// Structured result of one command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool_version: String,
    pub mode: String,
    pub seed: u64,
    pub outcome: Outcome,
    /// Resolved inputs (parameters, tolerances, solver settings).
    pub inputs: serde_json::Value,
    /// Best solution first.
    pub solutions: Vec<Solution>,
    pub objective: Option<f64>,
    pub diagnostics: serde_json::Value,
    /// Seconds per stage; the only nondeterministic part of a report.
    pub wall_times: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn new(mode: impl Into<String>, seed: u64, outcome: Outcome) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            mode: mode.into(),
            seed,
            outcome,
            inputs: serde_json::Value::Null,
            solutions: Vec::new(),
            objective: None,
            diagnostics: serde_json::Value::Null,
            wall_times: BTreeMap::new(),
        }
    }

    /// Copy with the timing fields cleared, for determinism comparisons.
    pub fn without_timings(&self) -> Self {
        Self {
            wall_times: BTreeMap::new(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<report>".into(),
            message: e.to_string(),
        })
    }

    /// One row per solution with stable column names. Discrete reports
    /// use `sigma{l}` and `x{i}` columns, continuous ones the model's
    /// variable names.
    pub fn to_csv(&self) -> String {
        let total: f64 = self.wall_times.values().sum();
        let mut out = String::new();
        let common = "mode,outcome,seed,objective";
        let objective = self.objective.map(num).unwrap_or_default();
        let prefix = format!("{},{},{},{}", self.mode, self.outcome.as_str(), self.seed, objective);
        let total = num(total);
        match self.solutions.first() {
            None => {
                let _ = writeln!(out, "{common},wall_time");
                let _ = writeln!(out, "{prefix},{total}");
            }
            Some(Solution::Discrete { sigma, x, .. }) => {
                let (m, n) = (sigma.len(), x.len());
                let names: Vec<String> = (0..m)
                    .map(|l| format!("sigma{l}"))
                    .chain((0..n).map(|i| format!("x{i}")))
                    .collect();
                let _ = writeln!(out, "{common},support,leader_value,follower_value,{},wall_time", names.join(","));
                for s in &self.solutions {
                    if let Solution::Discrete {
                        support,
                        sigma,
                        x,
                        leader_value,
                        follower_value,
                    } = s
                    {
                        let support: Vec<String> = support.iter().map(|i| i.to_string()).collect();
                        let vals: Vec<String> = sigma.iter().chain(x).map(|v| num(*v)).collect();
                        let _ = writeln!(
                            out,
                            "{prefix},{},{},{},{},{total}",
                            support.join(" "),
                            num(*leader_value),
                            num(*follower_value),
                            vals.join(",")
                        );
                    }
                }
            }
            Some(Solution::Continuous { .. }) => {
                let _ = writeln!(out, "{common},m1,m2,u1,u2,x0,x1,x2,Q,G0,G1max,G2max,wall_time");
                for s in &self.solutions {
                    if let Solution::Continuous {
                        m,
                        u,
                        x,
                        q,
                        certification: c,
                    } = s
                    {
                        let vals: Vec<String> = m.iter().chain(u).chain(x).chain([q]).chain(c).map(|v| num(*v)).collect();
                        let _ = writeln!(out, "{prefix},{},{total}", vals.join(","));
                    }
                }
            }
        }
        out
    }
}

/// Shortest round-trip representation, in exponent form for very small or
/// large magnitudes.
fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Trajectory as CSV with header `t,x0,...,x{n-1}`.
pub fn trajectory_csv(tr: &Trajectory) -> String {
    let n = tr.states.first().map_or(0, |s| s.dim());
    let mut out = String::from("t");
    for i in 0..n {
        let _ = write!(out, ",x{i}");
    }
    out.push('\n');
    for (t, x) in tr.times.iter().zip(&tr.states) {
        let _ = write!(out, "{}", num(*t));
        for v in x.as_slice() {
            let _ = write!(out, ",{}", num(*v));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// CSV for a `.csv` extension, JSON otherwise.
    pub fn from_path(path: &Path) -> Self {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            ReportFormat::Csv
        } else {
            ReportFormat::Json
        }
    }
}

pub fn emit_report(report: &RunReport, format: ReportFormat, path: &Path) -> Result<()> {
    let body = match format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Json => report.to_json()?,
    };
    write_atomic(path, body.as_bytes())
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    if let Err(e) = fs::rename(&tmp, path) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}
