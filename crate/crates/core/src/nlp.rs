//! Multistart local solver for smooth problems over a box intersected with
//! probability-simplex blocks, with equality and inequality constraints.
//!
//! Each start runs an augmented-Lagrangian outer loop (PHR form) whose
//! subproblems are solved by a spectral projected gradient method with a
//! non-monotone line search. Results are local; global claims are made by the
//! certification routines of the callers.

use std::ops::Range;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// A smooth scalar function. The closure returns the value and writes the
/// gradient into the provided buffer.
#[derive(Clone)]
pub struct SmoothFunction(Arc<dyn Fn(&[f64], &mut [f64]) -> f64 + Send + Sync>);

impl SmoothFunction {
    pub fn new(f: impl Fn(&[f64], &mut [f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (self.0)(x, grad)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; x.len()];
        (self.0)(x, &mut g)
    }
}

impl std::fmt::Debug for SmoothFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SmoothFunction")
    }
}

#[derive(Debug, Clone)]
pub struct SmoothProblem {
    pub dimension: usize,
    pub objective: SmoothFunction,
    /// `h(x) = 0`
    pub equality_constraints: Vec<SmoothFunction>,
    /// `g(x) <= 0`
    pub inequality_constraints: Vec<SmoothFunction>,
    pub box_lower: Vec<f64>,
    pub box_upper: Vec<f64>,
    /// Index ranges constrained to the probability simplex.
    pub simplex_blocks: Vec<Range<usize>>,
}

impl SmoothProblem {
    pub fn new(dimension: usize, objective: SmoothFunction, box_lower: Vec<f64>, box_upper: Vec<f64>) -> Self {
        Self {
            dimension,
            objective,
            equality_constraints: Vec::new(),
            inequality_constraints: Vec::new(),
            box_lower,
            box_upper,
            simplex_blocks: Vec::new(),
        }
    }

    pub fn with_equality(mut self, h: SmoothFunction) -> Self {
        self.equality_constraints.push(h);
        self
    }

    pub fn with_inequality(mut self, g: SmoothFunction) -> Self {
        self.inequality_constraints.push(g);
        self
    }

    pub fn with_simplex_block(mut self, block: Range<usize>) -> Self {
        self.simplex_blocks.push(block);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dimension;
        if d == 0 {
            return Err(Error::InvalidProblem("dimension must be positive".into()));
        }
        if self.box_lower.len() != d || self.box_upper.len() != d {
            return Err(Error::InvalidProblem("box bounds do not match the dimension".into()));
        }
        for i in 0..d {
            let (l, u) = (self.box_lower[i], self.box_upper[i]);
            if !(l.is_finite() && u.is_finite()) || l > u {
                return Err(Error::InvalidProblem(format!("bad box bounds [{l}, {u}] at {i}")));
            }
        }
        let mut owner = vec![false; d];
        for b in &self.simplex_blocks {
            if b.is_empty() || b.end > d {
                return Err(Error::InvalidProblem(format!("bad simplex block {b:?}")));
            }
            for i in b.clone() {
                if owner[i] {
                    return Err(Error::InvalidProblem("simplex blocks overlap".into()));
                }
                owner[i] = true;
                if self.box_lower[i] > 0.0 || self.box_upper[i] < 1.0 {
                    return Err(Error::InvalidProblem(format!(
                        "simplex coordinate {i} must have box [<=0, >=1]"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Euclidean projection onto the box intersected with the simplex blocks.
    pub fn project(&self, x: &mut [f64]) {
        // Simplex coordinates skip the box clamp: validation guarantees
        // their box contains [0, 1], and clamping first would distort the
        // Euclidean projection onto the simplex.
        for i in 0..self.dimension {
            if !self.simplex_blocks.iter().any(|b| b.contains(&i)) {
                x[i] = x[i].clamp(self.box_lower[i], self.box_upper[i]);
            }
        }
        for b in &self.simplex_blocks {
            project_simplex(&mut x[b.clone()]);
        }
    }

    /// Largest violation of the equality and inequality constraints.
    pub fn feasibility_residual(&self, x: &[f64]) -> f64 {
        let eq = self
            .equality_constraints
            .iter()
            .map(|h| h.value(x).abs())
            .fold(0.0, f64::max);
        let ineq = self
            .inequality_constraints
            .iter()
            .map(|g| g.value(x).max(0.0))
            .fold(0.0, f64::max);
        let r = eq.max(ineq);
        if r.is_nan() {
            f64::INFINITY
        } else {
            r
        }
    }
}

/// Sort-based Euclidean projection onto `{ y >= 0, sum y = 1 }`.
pub fn project_simplex(v: &mut [f64]) {
    let n = v.len();
    if n == 0 {
        return;
    }
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverOptions {
    pub starts: usize,
    pub seed: u64,
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub inner_max_iter: usize,
    pub outer_max_iter: usize,
    pub initial_penalty: f64,
    /// Used as the first starting points, before random ones.
    #[serde(skip)]
    pub initial_points: Vec<Vec<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            starts: 64,
            seed: 0,
            feas_tol: 1e-8,
            opt_tol: 1e-8,
            inner_max_iter: 5000,
            outer_max_iter: 60,
            initial_penalty: 10.0,
            initial_points: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StartResult {
    pub index: usize,
    pub point: Vec<f64>,
    pub value: f64,
    pub feasibility_residual: f64,
    pub converged: bool,
    /// Excess infeasibility `max(0, residual - feas_tol)` of the tracked
    /// incumbent after each outer iteration.
    pub incumbent_excess: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub feasibility_residual: f64,
    pub starts_used: usize,
    pub converged_starts: usize,
    #[serde(serialize_with = "crate::io::serialize_duration")]
    pub wall_time: Duration,
    pub seed: u64,
    #[serde(skip)]
    pub start_results: Vec<StartResult>,
}

impl SolveReport {
    /// Feasible start results ordered by value, then start index.
    pub fn ranked_feasible(&self, feas_tol: f64) -> Vec<&StartResult> {
        let mut v: Vec<&StartResult> = self
            .start_results
            .iter()
            .filter(|s| s.feasibility_residual <= feas_tol)
            .collect();
        v.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.index.cmp(&b.index)));
        v
    }
}

pub fn minimize(problem: &SmoothProblem, starts: usize, seed: u64, feas_tol: f64, opt_tol: f64) -> Result<SolveReport> {
    let opts = SolverOptions {
        starts,
        seed,
        feas_tol,
        opt_tol,
        ..SolverOptions::default()
    };
    minimize_with(problem, &opts)
}

/// [`minimize`] with full control over the solver options.
pub fn minimize_with(problem: &SmoothProblem, opts: &SolverOptions) -> Result<SolveReport> {
    let report = run_starts(problem, opts)?;
    if report.feasibility_residual > opts.feas_tol {
        return Err(Error::Infeasible {
            best_residual: report.feasibility_residual,
        });
    }
    if report.converged_starts == 0 {
        return Err(Error::NonConverged);
    }
    Ok(report)
}

/// Runs all starts and returns the reduction without judging it.
pub fn run_starts(problem: &SmoothProblem, opts: &SolverOptions) -> Result<SolveReport> {
    problem.validate()?;
    if opts.starts == 0 {
        return Err(Error::InvalidProblem("starts must be >= 1".into()));
    }
    if !(opts.feas_tol > 0.0 && opts.opt_tol > 0.0) {
        return Err(Error::InvalidProblem("tolerances must be positive".into()));
    }
    let clock = Instant::now();
    let results: Vec<StartResult> = (0..opts.starts)
        .into_par_iter()
        .map(|k| {
            let x0 = starting_point(problem, opts, k);
            solve_from(problem, opts, k, x0)
        })
        .collect();

    // feasible first, then value, ties by start index
    let best = results
        .iter()
        .min_by(|a, b| {
            let fa = a.feasibility_residual <= opts.feas_tol;
            let fb = b.feasibility_residual <= opts.feas_tol;
            fb.cmp(&fa)
                .then_with(|| {
                    if fa {
                        a.value.total_cmp(&b.value)
                    } else {
                        a.feasibility_residual.total_cmp(&b.feasibility_residual)
                    }
                })
                .then(a.index.cmp(&b.index))
        })
        .expect("at least one start");
    Ok(SolveReport {
        best_point: best.point.clone(),
        best_value: best.value,
        feasibility_residual: problem.feasibility_residual(&best.point),
        starts_used: results.len(),
        converged_starts: results.iter().filter(|r| r.converged).count(),
        wall_time: clock.elapsed(),
        seed: opts.seed,
        start_results: results,
    })
}

fn starting_point(problem: &SmoothProblem, opts: &SolverOptions, k: usize) -> Vec<f64> {
    let mut x = if let Some(p) = opts.initial_points.get(k) {
        p.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut x: Vec<f64> = (0..problem.dimension)
            .map(|i| {
                let (l, u) = (problem.box_lower[i], problem.box_upper[i]);
                l + (u - l) * rng.gen::<f64>()
            })
            .collect();
        for b in &problem.simplex_blocks {
            // uniform on the simplex
            let mut total = 0.0;
            for i in b.clone() {
                x[i] = -rng.gen::<f64>().max(1e-300).ln();
                total += x[i];
            }
            for i in b.clone() {
                x[i] /= total;
            }
        }
        x
    };
    problem.project(&mut x);
    x
}

struct Multipliers {
    eq: Vec<f64>,
    ineq: Vec<f64>,
    rho: f64,
}

/// Value and gradient of the PHR augmented Lagrangian.
fn augmented_lagrangian(problem: &SmoothProblem, mult: &Multipliers, x: &[f64], grad: &mut [f64], scratch: &mut [f64]) -> f64 {
    let mut val = problem.objective.eval(x, grad);
    let rho = mult.rho;
    for (h, &lam) in problem.equality_constraints.iter().zip(&mult.eq) {
        let hv = h.eval(x, scratch);
        let coef = lam + rho * hv;
        val += lam * hv + 0.5 * rho * hv * hv;
        grad.iter_mut().zip(scratch.iter()).for_each(|(g, s)| *g += coef * s);
    }
    for (g_fn, &mu) in problem.inequality_constraints.iter().zip(&mult.ineq) {
        let gv = g_fn.eval(x, scratch);
        let shifted = (mu + rho * gv).max(0.0);
        val += (shifted * shifted - mu * mu) / (2.0 * rho);
        if shifted > 0.0 {
            grad.iter_mut().zip(scratch.iter()).for_each(|(g, s)| *g += shifted * s);
        }
    }
    val
}

fn constraint_values(problem: &SmoothProblem, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let eq = problem.equality_constraints.iter().map(|h| h.value(x)).collect();
    let ineq = problem.inequality_constraints.iter().map(|g| g.value(x)).collect();
    (eq, ineq)
}

fn solve_from(problem: &SmoothProblem, opts: &SolverOptions, index: usize, mut x: Vec<f64>) -> StartResult {
    let d = problem.dimension;
    let mut mult = Multipliers {
        eq: vec![0.0; problem.equality_constraints.len()],
        ineq: vec![0.0; problem.inequality_constraints.len()],
        rho: opts.initial_penalty,
    };
    let mut scratch = vec![0.0; d];
    let mut incumbent: Option<(Vec<f64>, f64, f64)> = None; // point, value, residual
    let mut excess_history = Vec::new();
    let mut prev_infeas = f64::INFINITY;
    let mut converged = false;
    let mut stalled = 0;
    let has_constraints = !(mult.eq.is_empty() && mult.ineq.is_empty());

    for _ in 0..opts.outer_max_iter {
        // Inexact inner solves while far from feasibility; the full optimality
        // tolerance applies once the previous residual is small.
        let inner_tol = if has_constraints && prev_infeas.is_finite() {
            opts.opt_tol.max(0.1 * prev_infeas)
        } else if has_constraints {
            opts.opt_tol.max(1e-3)
        } else {
            opts.opt_tol
        };
        let inner = {
            let mult_ref = &mult;
            let mut f = |y: &[f64], g: &mut [f64]| augmented_lagrangian(problem, mult_ref, y, g, &mut scratch);
            spg(problem, &mut f, &mut x, inner_tol, opts.inner_max_iter)
        };
        if !inner.finite {
            break;
        }
        let residual = problem.feasibility_residual(&x);
        let value = problem.objective.value(&x);
        let better = match &incumbent {
            None => true,
            Some((_, v, r)) => {
                let new_ok = residual <= opts.feas_tol;
                let old_ok = *r <= opts.feas_tol;
                match (new_ok, old_ok) {
                    (true, false) => true,
                    (true, true) => value < *v,
                    (false, false) => residual < *r,
                    (false, true) => false,
                }
            }
        };
        if better && value.is_finite() {
            incumbent = Some((x.clone(), value, residual));
        }
        if let Some((_, _, r)) = &incumbent {
            excess_history.push((r - opts.feas_tol).max(0.0));
        }

        if residual <= opts.feas_tol && inner.converged && inner_tol <= opts.opt_tol {
            converged = true;
            break;
        }
        if !has_constraints {
            break;
        }
        let (h, g) = constraint_values(problem, &x);
        for (lam, hv) in mult.eq.iter_mut().zip(&h) {
            *lam += mult.rho * hv;
        }
        for (mu, gv) in mult.ineq.iter_mut().zip(&g) {
            *mu = (*mu + mult.rho * gv).max(0.0);
        }
        // A residual that stops shrinking at the penalty cap, or does not move
        // at all while the penalty keeps growing, means this start is stuck at
        // an infeasible stationary point.
        let frozen = residual > feas_frozen(prev_infeas);
        if (mult.rho >= RHO_MAX && residual > 0.5 * prev_infeas) || frozen {
            stalled += 1;
            if stalled >= STALL_LIMIT {
                break;
            }
        } else {
            stalled = 0;
        }
        if residual > 0.25 * prev_infeas {
            mult.rho = (mult.rho * 10.0).min(RHO_MAX);
        }
        prev_infeas = residual;
    }

    match incumbent {
        Some((point, value, residual)) => StartResult {
            index,
            point,
            value,
            feasibility_residual: residual,
            converged,
            incumbent_excess: excess_history,
        },
        None => StartResult {
            index,
            value: f64::INFINITY,
            feasibility_residual: f64::INFINITY,
            point: x,
            converged: false,
            incumbent_excess: excess_history,
        },
    }
}

struct InnerOutcome {
    converged: bool,
    finite: bool,
}

/// Penalty parameter cap.
const RHO_MAX: f64 = 1e10;
/// Outer iterations without progress at the penalty cap before a start gives up.
const STALL_LIMIT: usize = 3;

/// Residual level that counts as no progress at all relative to `prev`.
fn feas_frozen(prev: f64) -> f64 {
    (1.0 - 1e-3) * prev
}
const SPG_MEMORY: usize = 10;
const SPG_GAMMA: f64 = 1e-4;
const SPG_LAMBDA_MIN: f64 = 1e-12;
const SPG_LAMBDA_MAX: f64 = 1e6;

/// Spectral projected gradient (non-monotone) on the feasible box/simplex set.
fn spg(
    problem: &SmoothProblem,
    f: &mut impl FnMut(&[f64], &mut [f64]) -> f64,
    x: &mut Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> InnerOutcome {
    let d = x.len();
    let mut g = vec![0.0; d];
    let mut fx = f(x, &mut g);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return InnerOutcome {
            converged: false,
            finite: false,
        };
    }
    let pg_norm = |x: &[f64], g: &[f64]| -> f64 {
        let mut y: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
        problem.project(&mut y);
        y.iter().zip(x).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    };
    let mut pgn = pg_norm(x, &g);
    let mut lambda = if pgn > 0.0 {
        (1.0 / pgn).clamp(SPG_LAMBDA_MIN, SPG_LAMBDA_MAX)
    } else {
        1.0
    };
    let mut history = vec![fx; 1];
    let mut trial = vec![0.0; d];
    let mut g_new = vec![0.0; d];
    let mut dir = vec![0.0; d];
    let mut reset_tried = false;
    for _ in 0..max_iter {
        if pgn <= tol {
            return InnerOutcome {
                converged: true,
                finite: true,
            };
        }
        for i in 0..d {
            dir[i] = x[i] - lambda * g[i];
        }
        problem.project(&mut dir);
        for i in 0..d {
            dir[i] -= x[i];
        }
        let gtd: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        if !gtd.is_finite() {
            // gradient too large for the current step scale
            return InnerOutcome {
                converged: false,
                finite: true,
            };
        }
        if gtd >= 0.0 {
            if !reset_tried {
                reset_tried = true;
                lambda = (1.0 / pgn).clamp(SPG_LAMBDA_MIN, SPG_LAMBDA_MAX);
                continue;
            }
            // projected step is not a descent direction at machine precision
            return InnerOutcome {
                converged: pgn <= tol.sqrt() * 1e-2,
                finite: true,
            };
        }
        let fmax = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut alpha = 1.0;
        let mut accepted = false;
        let mut f_new = f64::NAN;
        for _ in 0..60 {
            for i in 0..d {
                trial[i] = x[i] + alpha * dir[i];
            }
            f_new = f(&trial, &mut g_new);
            if f_new.is_finite() && f_new <= fmax + SPG_GAMMA * alpha * gtd {
                accepted = true;
                break;
            }
            if !f_new.is_finite() {
                alpha *= 0.1;
                continue;
            }
            let denom = f_new - fx - alpha * gtd;
            let a_q = if denom > 0.0 { -0.5 * alpha * alpha * gtd / denom } else { 0.5 * alpha };
            alpha = if a_q >= 0.1 * alpha && a_q <= 0.9 * alpha { a_q } else { 0.5 * alpha };
        }
        if !accepted || g_new.iter().any(|v| !v.is_finite()) {
            return InnerOutcome {
                converged: false,
                finite: true,
            };
        }
        let mut sts = 0.0;
        let mut sty = 0.0;
        for i in 0..d {
            let s = trial[i] - x[i];
            let y = g_new[i] - g[i];
            sts += s * s;
            sty += s * y;
        }
        reset_tried = false;
        std::mem::swap(x, &mut trial);
        std::mem::swap(&mut g, &mut g_new);
        fx = f_new;
        history.push(fx);
        if history.len() > SPG_MEMORY {
            history.remove(0);
        }
        lambda = if sty <= 0.0 {
            SPG_LAMBDA_MAX
        } else {
            (sts / sty).clamp(SPG_LAMBDA_MIN, SPG_LAMBDA_MAX)
        };
        pgn = pg_norm(x, &g);
    }
    InnerOutcome {
        converged: pgn <= tol,
        finite: true,
    }
}

/// Max relative error between analytic gradients and central differences,
/// over the objective and every constraint. The denominator is
/// `max(1, |analytic|)`.
pub fn check_gradient(problem: &SmoothProblem, point: &[f64], h: f64) -> f64 {
    let mut fns: Vec<&SmoothFunction> = vec![&problem.objective];
    fns.extend(problem.equality_constraints.iter());
    fns.extend(problem.inequality_constraints.iter());
    let d = point.len();
    let mut worst: f64 = 0.0;
    let mut grad = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    let mut probe = point.to_vec();
    for func in fns {
        func.eval(point, &mut grad);
        for i in 0..d {
            probe[i] = point[i] + h;
            let fp = func.eval(&probe, &mut scratch);
            probe[i] = point[i] - h;
            let fm = func.eval(&probe, &mut scratch);
            probe[i] = point[i];
            let fd = (fp - fm) / (2.0 * h);
            let err = (fd - grad[i]).abs() / grad[i].abs().max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}
