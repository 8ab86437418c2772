use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use sess::cancer::{self, ContinuousMode, EcoEvoState};
use sess::discrete::{compute_discrete_sess, verify_stackelberg_consistency, SearchMode};
use sess::ess::is_ess;
use sess::game::induce_matrix;
use sess::io::{self, Outcome, RunReport, Solution};
use sess::replicator::{simulate, DEFAULT_DT};
use sess::{Error, Result, SimplexVector, ToleranceSet};

#[derive(Parser)]
#[command(name = "sess", version, about = "Evolutionarily stable Stackelberg equilibrium solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DiscreteMode {
    Osess,
    All,
    First,
}

#[derive(Clone, Copy, ValueEnum)]
enum ContinuousArg {
    Se,
    Osess,
}

#[derive(Subcommand)]
enum Command {
    /// Support enumeration on a JSON game file.
    SolveDiscrete {
        game: PathBuf,
        #[arg(long, value_enum, default_value = "osess")]
        mode: DiscreteMode,
        #[arg(long, default_value_t = io::DEFAULT_STARTS)]
        starts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report path; `.csv` selects CSV, anything else JSON. Stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stackelberg baseline or generate-and-certify OSESS on the cancer model.
    SolveContinuous {
        /// TOML or JSON model config.
        model: PathBuf,
        #[arg(long, value_enum)]
        mode: ContinuousArg,
        /// Overrides the config's `starts`.
        #[arg(long)]
        starts: Option<usize>,
        /// Overrides the config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Global invasion check of a model state.
    Certify {
        model: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        m: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        x: Vec<f64>,
        /// Resident traits, used only for the argmax report.
        #[arg(long, value_delimiter = ',')]
        u: Option<Vec<f64>>,
    },
    /// Replicator trajectory of the follower game induced by `sigma`, as CSV.
    Simulate {
        game: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        sigma: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        x0: Vec<f64>,
        #[arg(long)]
        horizon: f64,
        #[arg(long, default_value_t = DEFAULT_DT)]
        dt: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// ESS verdict for `x` in the follower game induced by `sigma`.
    CheckEss {
        game: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        sigma: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        x: Vec<f64>,
    },
}

fn main() -> ExitCode {
    // usage errors exit with 1 like every other error; 2 is reserved for
    // NONE and FAILURE outcomes
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn fixed<const N: usize>(v: Vec<f64>, flag: &str) -> Result<[f64; N]> {
    let len = v.len();
    v.try_into()
        .map_err(|_| Error::Config(format!("{flag} takes {N} comma-separated values, got {len}")))
}

fn to_value<T: serde::Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::Config(e.to_string()))
}

fn emit(report: &RunReport, out: Option<&PathBuf>) -> Result<i32> {
    match out {
        Some(path) => io::emit_report(report, io::ReportFormat::from_path(path), path)?,
        None => print!("{}", report.to_json()?),
    }
    Ok(report.outcome.exit_code())
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::SolveDiscrete {
            game,
            mode,
            starts,
            seed,
            out,
        } => {
            let (g, tol) = io::parse_game_file(&game)?;
            let mode = match mode {
                DiscreteMode::Osess => SearchMode::Osess,
                DiscreteMode::All => SearchMode::All,
                DiscreteMode::First => SearchMode::First,
            };
            let clock = Instant::now();
            let res = compute_discrete_sess(&g, &tol, starts, seed, mode)?;
            let elapsed = clock.elapsed().as_secs_f64();
            for s in &res.all_sess {
                if !verify_stackelberg_consistency(&g, &s.sigma, &s.x, &tol)? {
                    return Err(Error::InvalidProblem(format!(
                        "support {:?}: follower state is not a Nash equilibrium of its induced game",
                        s.support
                    )));
                }
            }
            let outcome = if res.best.is_some() { Outcome::Success } else { Outcome::None };
            let mode_name = serde_json::to_value(mode).ok().and_then(|v| v.as_str().map(String::from));
            let mut report = RunReport::new(format!("discrete-{}", mode_name.unwrap_or_default()), seed, outcome);
            report.inputs = json!({
                "leader_payoffs": g.leader_payoffs(),
                "follower_payoffs": g.follower_payoffs(),
                "tolerances": tol,
                "starts": starts,
            });
            let ordered = res.best.iter().chain(res.all_sess.iter().filter(|s| Some(*s) != res.best.as_ref()));
            report.solutions = ordered.map(Solution::from).collect();
            report.objective = res.best.as_ref().map(|b| b.leader_value);
            report.diagnostics = to_value(&res.diagnostics)?;
            report.wall_times.insert("enumeration".into(), elapsed);
            emit(&report, out.as_ref())
        }
        Command::SolveContinuous {
            model,
            mode,
            starts,
            seed,
            out,
        } => {
            let (p, mut opts) = io::parse_model_config(&model)?;
            if let Some(s) = starts {
                opts.starts = s;
            }
            if let Some(s) = seed {
                opts.seed = s;
            }
            let tol = ToleranceSet::default();
            let clock = Instant::now();
            let sol = match mode {
                ContinuousArg::Se => cancer::compute_se_continuous(&p, opts.dose_bound, opts.starts, opts.seed),
                ContinuousArg::Osess => {
                    cancer::compute_continuous_osess(&p, opts.dose_bound, opts.starts, opts.seed, &tol)
                }
            };
            let elapsed = clock.elapsed().as_secs_f64();
            let mode_name = match mode {
                ContinuousArg::Se => ContinuousMode::Se,
                ContinuousArg::Osess => ContinuousMode::Osess,
            };
            let sol = match sol {
                Ok(s) => Some(s),
                Err(Error::NoCandidate) => None,
                Err(e) => return Err(e),
            };
            let outcome = match &sol {
                None => Outcome::None,
                Some(s) if mode_name == ContinuousMode::Osess && !s.certified => Outcome::Failure,
                Some(_) => Outcome::Success,
            };
            let mut report = RunReport::new(format!("continuous-{mode_name}"), opts.seed, outcome);
            report.inputs = json!({ "params": p, "run": opts, "eps_inv": tol.eps_inv });
            if let Some(s) = &sol {
                report.solutions.push(Solution::from(s));
                report.objective = Some(s.q_value);
                report.diagnostics = json!({
                    "certified": s.certified,
                    "traits_are_maximizers": s.traits_are_maximizers,
                    "certification_slack": s.certification_slack,
                    "alive_pattern": s.alive_pattern,
                    "case": s.case,
                    "ecological_residual": cancer::ecological_residual(&s.state, &p),
                    "starts_used": s.solver_report.as_ref().map(|r| r.starts_used),
                    "converged_starts": s.solver_report.as_ref().map(|r| r.converged_starts),
                });
            }
            report.wall_times.insert("solve_and_certify".into(), elapsed);
            emit(&report, out.as_ref())
        }
        Command::Certify { model, m, x, u } => {
            let (p, _) = io::parse_model_config(&model)?;
            let m: [f64; 2] = fixed(m, "--m")?;
            let x: [f64; 3] = fixed(x, "--x")?;
            let u: [f64; 2] = u.map_or(Ok([0.0, 0.0]), |u| fixed(u, "--u"))?;
            let state = EcoEvoState { m, u, x };
            state.validate()?;
            let tol = ToleranceSet::default();
            let sol = cancer::certify_state(&state, &p, tol.eps_inv, ContinuousMode::Osess);
            let detail: Vec<_> = (0..3).map(|i| cancer::certify(i, &m, &x, &p)).collect();
            let outcome = if sol.certified { Outcome::Success } else { Outcome::Failure };
            let mut report = RunReport::new("certify", 0, outcome);
            report.inputs = json!({ "params": p, "m": m, "x": x, "u": u, "eps_inv": tol.eps_inv });
            report.solutions.push(Solution::from(&sol));
            report.objective = Some(sol.q_value);
            report.diagnostics = json!({ "phenotypes": to_value(&detail)? });
            emit(&report, None)
        }
        Command::Simulate {
            game,
            sigma,
            x0,
            horizon,
            dt,
            out,
        } => {
            if !(horizon > 0.0 && dt > 0.0 && horizon.is_finite() && dt.is_finite()) {
                return Err(Error::Config("horizon and dt must be positive".into()));
            }
            let (g, _) = io::parse_game_file(&game)?;
            let sigma = SimplexVector::new(sigma)?;
            let x0 = SimplexVector::new(x0)?;
            let b = induce_matrix(&sigma, &g)?;
            let tr = simulate(&b, &x0, horizon, dt, &x0);
            let csv = io::trajectory_csv(&tr);
            match out {
                Some(path) => io::write_atomic(&path, csv.as_bytes())?,
                None => print!("{csv}"),
            }
            Ok(0)
        }
        Command::CheckEss { game, sigma, x } => {
            let (g, tol) = io::parse_game_file(&game)?;
            let sigma = SimplexVector::new(sigma)?;
            let x = SimplexVector::new(x)?;
            let b = induce_matrix(&sigma, &g)?;
            let verdict = is_ess(&b, &x, &tol)?;
            let outcome = if verdict.is_ess { Outcome::Success } else { Outcome::None };
            let mut report = RunReport::new("check-ess", 0, outcome);
            report.inputs = json!({ "sigma": sigma, "x": x, "tolerances": tol });
            report.diagnostics = to_value(&verdict)?;
            emit(&report, None)
        }
    }
}
