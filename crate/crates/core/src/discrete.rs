//! Optimistic evolutionarily stable Stackelberg equilibria of discrete games
//! by support enumeration.
//!
//! For a fixed follower support `T` and a fixed leader strategy `sigma`, the
//! follower indifference conditions on `T` together with normalization form a
//! square linear system in `(x_T, v)`. Each support is therefore solved as a
//! small smooth problem over the leader simplex whose objective and
//! constraints are composed with that linear solve.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ess::{is_ess, is_symmetric_nash, EssVerdict};
use crate::game::{induce_matrix, leader_payoff_raw, DiscreteSEG, SimplexVector, ToleranceSet};
use crate::nlp::{run_starts, SmoothFunction, SmoothProblem, SolverOptions};

/// Largest follower strategy count accepted by [`enumerate_supports`].
pub const MAX_SUPPORT_PHENOTYPES: usize = 20;
/// Reciprocal condition number below which the inner system counts as singular.
const SINGULAR_RCOND: f64 = 1e-12;
/// Solver budgets for the support subproblems. The leader space is small, so
/// a start that has not settled by then is sitting near a pole of the inner
/// solve and more iterations do not help.
const INNER_MAX_ITER: usize = 1000;
const OUTER_MAX_ITER: usize = 30;
/// Iteration cap for the iterative matrix decompositions.
const MAX_DECOMP_ITERS: usize = 10_000;
/// Random leader strategies sampled per support to detect degeneracy.
const DEGENERACY_SAMPLES: usize = 32;
/// Strictness margins tried, in order, by the ESS-constrained support search.
const ESS_MARGINS: [f64; 3] = [1e-4, 1e-3, 1e-2];
/// Two candidates closer than this (max norm on sigma) are the same point.
const DEDUP_DISTANCE: f64 = 1e-6;

/// Which SESS are reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    /// The leader-optimal SESS.
    #[default]
    Osess,
    /// Every SESS found, one per support.
    All,
    /// Stop at the first support (in enumeration order) that yields an SESS.
    First,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SupportStatus {
    Feasible,
    Infeasible,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportSolveResult {
    pub support: Vec<usize>,
    pub status: SupportStatus,
    pub sigma: Option<SimplexVector>,
    pub x: Option<SimplexVector>,
    /// Common payoff `v` of the phenotypes in the support.
    pub follower_value: f64,
    pub leader_value: f64,
    pub starts_used: usize,
    pub converged_starts: usize,
}

impl SupportSolveResult {
    fn without_point(support: &[usize], status: SupportStatus) -> Self {
        Self {
            support: support.to_vec(),
            status,
            sigma: None,
            x: None,
            follower_value: f64::NAN,
            leader_value: f64::NAN,
            starts_used: 0,
            converged_starts: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sess {
    pub support: Vec<usize>,
    pub sigma: SimplexVector,
    pub x: SimplexVector,
    pub leader_value: f64,
    pub follower_value: f64,
    pub verdict: EssVerdict,
}

/// How a support's SESS (if any) was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EssOutcome {
    /// The support optimum itself passed the ESS check.
    SupportOptimum,
    /// The support optimum failed; the ESS-constrained search found one.
    Constrained,
    /// No ESS on this support.
    None,
    /// Support was infeasible or degenerate; no ESS check ran.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportDiagnostic {
    pub support: Vec<usize>,
    pub status: SupportStatus,
    pub outcome: EssOutcome,
    /// Strictness margin of the constrained search that succeeded.
    pub margin: Option<f64>,
    pub converged_starts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OsessResult {
    pub best: Option<Sess>,
    pub all_sess: Vec<Sess>,
    pub supports_searched: usize,
    pub diagnostics: Vec<SupportDiagnostic>,
}

/// All nonempty subsets of `0..n`, ordered by size and then lexicographically.
pub fn enumerate_supports(n: usize) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::InvalidGame("no follower phenotypes".into()));
    }
    if n > MAX_SUPPORT_PHENOTYPES {
        return Err(Error::Budget(format!(
            "support enumeration over {n} phenotypes exceeds the limit of {MAX_SUPPORT_PHENOTYPES}"
        )));
    }
    let mut out = Vec::with_capacity((1usize << n) - 1);
    for size in 1..=n {
        let mut comb: Vec<usize> = (0..size).collect();
        loop {
            out.push(comb.clone());
            // advance to the next combination in lexicographic order
            let mut i = size;
            while i > 0 && comb[i - 1] == n - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            comb[i - 1] += 1;
            for k in i..size {
                comb[k] = comb[k - 1] + 1;
            }
        }
    }
    Ok(out)
}

/// Solution of the inner linear system and its derivatives in sigma.
struct Inner {
    /// Full follower state (zero off the support).
    x: Vec<f64>,
    v: f64,
    /// `dx[l][i]`: derivative of `x_i` in `sigma_l`.
    dx: Vec<Vec<f64>>,
    dv: Vec<f64>,
}

/// The support subproblem: everything that depends only on `(game, T)`.
struct SupportSystem {
    game: Arc<DiscreteSEG>,
    support: Vec<usize>,
    off: Vec<usize>,
    /// Orthonormal basis of `{z in R^T : sum z = 0}`, as columns.
    tangent: DMatrix<f64>,
}

impl SupportSystem {
    fn new(game: Arc<DiscreteSEG>, support: &[usize]) -> Self {
        let n = game.n();
        let off = (0..n).filter(|j| !support.contains(j)).collect();
        let k = support.len();
        // Gram-Schmidt on e_i - e_{i+1}
        let mut cols: Vec<DVector<f64>> = Vec::new();
        for i in 0..k.saturating_sub(1) {
            let mut c = DVector::zeros(k);
            c[i] = 1.0;
            c[i + 1] = -1.0;
            for q in &cols {
                let p = q.dot(&c);
                c -= q * p;
            }
            c /= c.norm();
            cols.push(c);
        }
        let tangent = if cols.is_empty() {
            DMatrix::zeros(k, 0)
        } else {
            DMatrix::from_columns(&cols)
        };
        Self {
            game,
            support: support.to_vec(),
            off,
            tangent,
        }
    }

    fn induced(&self, sigma: &[f64]) -> DMatrix<f64> {
        let n = self.game.n();
        DMatrix::from_fn(n, n, |i, j| (0..self.game.m()).map(|l| sigma[l] * self.game.follower(l, i, j)).sum())
    }

    /// The bordered matrix `[[B_TT, -1], [1^T, 0]]`.
    fn bordered(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.support.len();
        let mut mat = DMatrix::zeros(k + 1, k + 1);
        for (a, &i) in self.support.iter().enumerate() {
            for (c, &j) in self.support.iter().enumerate() {
                mat[(a, c)] = b[(i, j)];
            }
            mat[(a, k)] = -1.0;
            mat[(k, a)] = 1.0;
        }
        mat
    }

    fn is_singular(&self, sigma: &[f64]) -> bool {
        if sigma.iter().any(|s| !s.is_finite()) {
            return true;
        }
        let mat = self.bordered(&self.induced(sigma));
        !well_conditioned(&mat)
    }

    fn solve(&self, sigma: &[f64]) -> Option<Inner> {
        let n = self.game.n();
        let m = self.game.m();
        let k = self.support.len();
        if sigma.iter().any(|s| !s.is_finite()) {
            return None;
        }
        let b = self.induced(sigma);
        let mat = self.bordered(&b);
        if !well_conditioned(&mat) {
            return None;
        }
        let lu = mat.lu();
        let mut rhs = DVector::zeros(k + 1);
        rhs[k] = 1.0;
        let z = lu.solve(&rhs)?;
        let mut x = vec![0.0; n];
        for (a, &i) in self.support.iter().enumerate() {
            x[i] = z[a];
        }
        let v = z[k];
        let mut dx = vec![vec![0.0; n]; m];
        let mut dv = vec![0.0; m];
        for l in 0..m {
            // d/dsigma_l of M z = rhs gives M dz = -[A_F(l)_TT x_T; 0]
            let mut r = DVector::zeros(k + 1);
            for (a, &i) in self.support.iter().enumerate() {
                r[a] = -self.support.iter().map(|&j| self.game.follower(l, i, j) * x[j]).sum::<f64>();
            }
            let dz = lu.solve(&r)?;
            for (a, &i) in self.support.iter().enumerate() {
                dx[l][i] = dz[a];
            }
            dv[l] = dz[k];
        }
        if x.iter().chain(std::iter::once(&v)).any(|t| !t.is_finite()) {
            return None;
        }
        Some(Inner { x, v, dx, dv })
    }

    /// Negative leader payoff and its gradient.
    fn objective(&self, sigma: &[f64], grad: &mut [f64]) -> f64 {
        let Some(inner) = self.solve(sigma) else {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return f64::NAN;
        };
        let game = &self.game;
        let m = game.m();
        let value = leader_payoff_raw(sigma, &inner.x, game);
        for l in 0..m {
            let direct: f64 = self.support.iter().map(|&i| game.leader(l, i) * inner.x[i]).sum();
            let through_x: f64 = (0..m)
                .map(|p| sigma[p] * self.support.iter().map(|&i| game.leader(p, i) * inner.dx[l][i]).sum::<f64>())
                .sum();
            grad[l] = -(direct + through_x);
        }
        -value
    }

    /// `floor - x_i <= 0` for the `a`-th support member.
    fn mass_constraint(&self, a: usize, floor: f64, sigma: &[f64], grad: &mut [f64]) -> f64 {
        let i = self.support[a];
        let Some(inner) = self.solve(sigma) else {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return f64::NAN;
        };
        for l in 0..self.game.m() {
            grad[l] = -inner.dx[l][i];
        }
        floor - inner.x[i]
    }

    /// `(Bx)_j - v + margin <= 0` for the off-support phenotype `j`.
    fn off_support_constraint(&self, j: usize, margin: f64, sigma: &[f64], grad: &mut [f64]) -> f64 {
        let Some(inner) = self.solve(sigma) else {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return f64::NAN;
        };
        let game = &self.game;
        let m = game.m();
        let bj: Vec<f64> = self
            .support
            .iter()
            .map(|&c| (0..m).map(|l| sigma[l] * game.follower(l, j, c)).sum())
            .collect();
        let row: f64 = self.support.iter().zip(&bj).map(|(&c, b)| b * inner.x[c]).sum();
        for l in 0..m {
            let direct: f64 = self.support.iter().map(|&c| game.follower(l, j, c) * inner.x[c]).sum();
            let through_x: f64 = self.support.iter().zip(&bj).map(|(&c, b)| b * inner.dx[l][c]).sum();
            grad[l] = direct + through_x - inner.dv[l];
        }
        row - inner.v + margin
    }

    /// Largest eigenvalue of the symmetrized `B_TT` on the tangent space of
    /// the support face, plus `margin`. Negative means the resident is a
    /// strict local maximizer of the invasion payoff on its face.
    fn curvature_constraint(&self, margin: f64, sigma: &[f64], grad: &mut [f64]) -> f64 {
        let game = &self.game;
        let m = game.m();
        let k = self.support.len();
        let reduce = |w: &dyn Fn(usize, usize) -> f64| -> DMatrix<f64> {
            let s = DMatrix::from_fn(k, k, |a, c| {
                let (i, j) = (self.support[a], self.support[c]);
                0.5 * (w(i, j) + w(j, i))
            });
            self.tangent.transpose() * s * &self.tangent
        };
        let reduced = reduce(&|i, j| (0..m).map(|l| sigma[l] * game.follower(l, i, j)).sum());
        let Some(eig) = SymmetricEigen::try_new(reduced, f64::EPSILON, MAX_DECOMP_ITERS) else {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return f64::NAN;
        };
        let (top, &lambda) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("tangent space is nonempty");
        let vec = eig.eigenvectors.column(top).into_owned();
        for l in 0..m {
            let slice = reduce(&|i, j| game.follower(l, i, j));
            grad[l] = (vec.transpose() * slice * &vec)[(0, 0)];
        }
        lambda + margin
    }
}

/// Reciprocal condition number test; a decomposition that fails to converge
/// counts as singular.
fn well_conditioned(mat: &DMatrix<f64>) -> bool {
    match mat.clone().try_svd(false, false, f64::EPSILON, MAX_DECOMP_ITERS) {
        Some(svd) => {
            let sv = svd.singular_values;
            sv.max() > 0.0 && sv.min() / sv.max() >= SINGULAR_RCOND
        }
        None => false,
    }
}

fn random_simplex(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..m).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|t| *t /= s);
    v
}

fn leader_starts(m: usize) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = (0..m)
        .map(|l| {
            let mut e = vec![0.0; m];
            e[l] = 1.0;
            e
        })
        .collect();
    if m > 1 {
        pts.push(vec![1.0 / m as f64; m]);
    }
    pts
}

/// Constraint set of a support subproblem.
#[derive(Debug, Clone, Copy)]
struct Margins {
    /// Off-support rows must sit this far below `v`.
    off_support: f64,
    /// Required negative curvature on the support face; `None` skips it.
    curvature: Option<f64>,
}

fn build_problem(system: &Arc<SupportSystem>, tol: &ToleranceSet, margins: Margins) -> SmoothProblem {
    let m = system.game.m();
    let s = Arc::clone(system);
    let mut problem = SmoothProblem::new(
        m,
        SmoothFunction::new(move |sig, g| s.objective(sig, g)),
        vec![0.0; m],
        vec![1.0; m],
    )
    .with_simplex_block(0..m);
    for a in 0..system.support.len() {
        let s = Arc::clone(system);
        let floor = tol.eps_s;
        problem = problem.with_inequality(SmoothFunction::new(move |sig, g| s.mass_constraint(a, floor, sig, g)));
    }
    for &j in &system.off {
        let s = Arc::clone(system);
        let margin = margins.off_support;
        problem = problem.with_inequality(SmoothFunction::new(move |sig, g| s.off_support_constraint(j, margin, sig, g)));
    }
    if let Some(mu) = margins.curvature {
        if system.support.len() >= 2 {
            let s = Arc::clone(system);
            problem = problem.with_inequality(SmoothFunction::new(move |sig, g| s.curvature_constraint(mu, sig, g)));
        }
    }
    problem
}

/// Candidate support solutions, best leader value first, deduplicated.
struct Candidates {
    points: Vec<(Vec<f64>, Inner)>,
    starts_used: usize,
    converged_starts: usize,
}

fn feasible_inner(system: &SupportSystem, sigma: &[f64], tol: &ToleranceSet, margins: Margins) -> Option<Inner> {
    let inner = system.solve(sigma)?;
    if system.support.iter().any(|&i| inner.x[i] < tol.eps_s - 1e-12) {
        return None;
    }
    let mut g = vec![0.0; sigma.len()];
    for &j in &system.off {
        if system.off_support_constraint(j, margins.off_support, sigma, &mut g) > tol.eps_p {
            return None;
        }
    }
    if let Some(mu) = margins.curvature {
        if system.support.len() >= 2 && system.curvature_constraint(mu, sigma, &mut g) > tol.eps_p {
            return None;
        }
    }
    Some(inner)
}

fn support_candidates(
    system: &Arc<SupportSystem>,
    tol: &ToleranceSet,
    margins: Margins,
    starts: usize,
    seed: u64,
) -> Result<Candidates> {
    let m = system.game.m();
    if m == 1 {
        let sigma = vec![1.0];
        let points = feasible_inner(system, &sigma, tol, margins)
            .map(|inner| vec![(sigma, inner)])
            .unwrap_or_default();
        return Ok(Candidates {
            points,
            starts_used: 0,
            converged_starts: 0,
        });
    }
    let problem = build_problem(system, tol, margins);
    let opts = SolverOptions {
        starts,
        seed,
        initial_points: leader_starts(m),
        inner_max_iter: INNER_MAX_ITER,
        outer_max_iter: OUTER_MAX_ITER,
        ..SolverOptions::default()
    };
    let report = run_starts(&problem, &opts)?;
    let mut points: Vec<(Vec<f64>, Inner)> = Vec::new();
    for r in report.ranked_feasible(opts.feas_tol) {
        let mut sigma = r.point.clone();
        for v in sigma.iter_mut() {
            *v = v.max(0.0);
        }
        let s: f64 = sigma.iter().sum();
        sigma.iter_mut().for_each(|v| *v /= s);
        if points
            .iter()
            .any(|(p, _)| p.iter().zip(&sigma).all(|(a, b)| (a - b).abs() <= DEDUP_DISTANCE))
        {
            continue;
        }
        if let Some(inner) = feasible_inner(system, &sigma, tol, margins) {
            points.push((sigma, inner));
        }
    }
    Ok(Candidates {
        points,
        starts_used: report.starts_used,
        converged_starts: report.converged_starts,
    })
}

fn is_degenerate(system: &SupportSystem, seed: u64) -> bool {
    let m = system.game.m();
    if m == 1 {
        return system.is_singular(&[1.0]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD1B5_4A32_D192_ED03);
    (0..DEGENERACY_SAMPLES).any(|_| system.is_singular(&random_simplex(&mut rng, m)))
}

fn to_result(system: &SupportSystem, sigma: Vec<f64>, inner: Inner, candidates: &Candidates) -> Result<SupportSolveResult> {
    let leader_value = leader_payoff_raw(&sigma, &inner.x, &system.game);
    Ok(SupportSolveResult {
        support: system.support.clone(),
        status: SupportStatus::Feasible,
        sigma: Some(SimplexVector::new(sigma)?),
        x: Some(SimplexVector::new(inner.x)?),
        follower_value: inner.v,
        leader_value,
        starts_used: candidates.starts_used,
        converged_starts: candidates.converged_starts,
    })
}

fn check_support(game: &DiscreteSEG, support: &[usize]) -> Result<()> {
    if support.is_empty() {
        return Err(Error::InvalidGame("empty support".into()));
    }
    let mut sorted = support.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != support.len() || sorted.iter().any(|&i| i >= game.n()) {
        return Err(Error::InvalidGame(format!("invalid support {support:?} for n = {}", game.n())));
    }
    Ok(())
}

fn solve_se_support_shared(
    game: &Arc<DiscreteSEG>,
    support: &[usize],
    tol: &ToleranceSet,
    starts: usize,
    seed: u64,
) -> Result<(SupportSolveResult, Arc<SupportSystem>)> {
    check_support(game, support)?;
    let system = Arc::new(SupportSystem::new(Arc::clone(game), support));
    if is_degenerate(&system, seed) {
        return Ok((SupportSolveResult::without_point(support, SupportStatus::Degenerate), system));
    }
    let margins = Margins {
        off_support: 0.0,
        curvature: None,
    };
    let mut cands = support_candidates(&system, tol, margins, starts, seed)?;
    let result = match cands.points.is_empty() {
        true => {
            let mut r = SupportSolveResult::without_point(support, SupportStatus::Infeasible);
            r.starts_used = cands.starts_used;
            r.converged_starts = cands.converged_starts;
            r
        }
        false => {
            let (sigma, inner) = cands.points.remove(0);
            to_result(&system, sigma, inner, &cands)?
        }
    };
    Ok((result, system))
}

/// Best leader strategy and follower state with follower support `support`:
/// maximize `sigma' A_L x` subject to indifference on the support, `x_i >=
/// eps_s` there, and no off-support phenotype earning more than `v`.
pub fn solve_se_support(
    game: &DiscreteSEG,
    support: &[usize],
    tol: &ToleranceSet,
    starts: usize,
    seed: u64,
) -> Result<SupportSolveResult> {
    let game = Arc::new(game.clone());
    Ok(solve_se_support_shared(&game, support, tol, starts, seed)?.0)
}

fn sess_from(result: &SupportSolveResult, verdict: EssVerdict) -> Sess {
    Sess {
        support: result.support.clone(),
        sigma: result.sigma.clone().expect("feasible result has sigma"),
        x: result.x.clone().expect("feasible result has x"),
        leader_value: result.leader_value,
        follower_value: result.follower_value,
        verdict,
    }
}

fn ess_verdict(game: &DiscreteSEG, sigma: &SimplexVector, x: &SimplexVector, tol: &ToleranceSet) -> Result<EssVerdict> {
    let b = induce_matrix(sigma, game)?;
    is_ess(&b, x, tol)
}

/// Runs one support end to end: the support optimum first, and if that is
/// not an ESS, the search restricted to strict regular ESS points.
fn process_support(
    game: &Arc<DiscreteSEG>,
    support: &[usize],
    tol: &ToleranceSet,
    starts: usize,
    seed: u64,
) -> Result<(Option<Sess>, SupportDiagnostic)> {
    let (result, system) = solve_se_support_shared(game, support, tol, starts, seed)?;
    let mut diag = SupportDiagnostic {
        support: support.to_vec(),
        status: result.status,
        outcome: EssOutcome::Skipped,
        margin: None,
        converged_starts: result.converged_starts,
    };
    if result.status != SupportStatus::Feasible {
        return Ok((None, diag));
    }
    let verdict = ess_verdict(game, result.sigma.as_ref().unwrap(), result.x.as_ref().unwrap(), tol)?;
    if verdict.is_ess {
        diag.outcome = EssOutcome::SupportOptimum;
        return Ok((Some(sess_from(&result, verdict)), diag));
    }
    for (round, &mu) in ESS_MARGINS.iter().enumerate() {
        let margins = Margins {
            off_support: mu,
            curvature: Some(mu),
        };
        let cands = support_candidates(&system, tol, margins, starts, seed.wrapping_add(round as u64 + 1))?;
        if cands.points.is_empty() {
            // larger margins only shrink the feasible set
            break;
        }
        for (sigma, inner) in cands.points.iter() {
            let candidate = to_result(
                &system,
                sigma.clone(),
                Inner {
                    x: inner.x.clone(),
                    v: inner.v,
                    dx: Vec::new(),
                    dv: Vec::new(),
                },
                &cands,
            )?;
            let verdict = ess_verdict(game, candidate.sigma.as_ref().unwrap(), candidate.x.as_ref().unwrap(), tol)?;
            if verdict.is_ess {
                diag.outcome = EssOutcome::Constrained;
                diag.margin = Some(mu);
                return Ok((Some(sess_from(&candidate, verdict)), diag));
            }
        }
    }
    diag.outcome = EssOutcome::None;
    Ok((None, diag))
}

/// Optimistic SESS by support enumeration with [`SearchMode::Osess`].
pub fn compute_discrete_osess(game: &DiscreteSEG, tol: &ToleranceSet, starts: usize, seed: u64) -> Result<OsessResult> {
    compute_discrete_sess(game, tol, starts, seed, SearchMode::Osess)
}

/// Support enumeration driver. Supports are solved in parallel and reduced in
/// enumeration order, so the result does not depend on scheduling.
pub fn compute_discrete_sess(
    game: &DiscreteSEG,
    tol: &ToleranceSet,
    starts: usize,
    seed: u64,
    mode: SearchMode,
) -> Result<OsessResult> {
    tol.validate()?;
    let report = crate::game::validate_game(game);
    if let Some(f) = report.fatal().next() {
        return Err(Error::InvalidGame(f.message.clone()));
    }
    let supports = enumerate_supports(game.n())?;
    let shared = Arc::new(game.clone());
    let outcomes: Vec<(Option<Sess>, SupportDiagnostic)> = supports
        .par_iter()
        .enumerate()
        .map(|(k, t)| process_support(&shared, t, tol, starts, seed.wrapping_add(k as u64)))
        .collect::<Result<_>>()?;

    let mut all_sess = Vec::new();
    let mut diagnostics = Vec::new();
    let mut best: Option<Sess> = None;
    for (sess, diag) in outcomes {
        diagnostics.push(diag);
        if let Some(s) = sess {
            if best.as_ref().is_none_or(|b| s.leader_value > b.leader_value) {
                best = Some(s.clone());
            }
            all_sess.push(s);
            if mode == SearchMode::First {
                break;
            }
        }
    }
    if mode == SearchMode::First {
        best = all_sess.first().cloned();
    }
    Ok(OsessResult {
        best,
        all_sess,
        supports_searched: diagnostics.len(),
        diagnostics,
    })
}

/// Follower-level consistency of a Stackelberg outcome: `x` must be a
/// symmetric Nash equilibrium of the game induced by `sigma`.
pub fn verify_stackelberg_consistency(
    game: &DiscreteSEG,
    sigma: &SimplexVector,
    x: &SimplexVector,
    tol: &ToleranceSet,
) -> Result<bool> {
    let b = induce_matrix(sigma, game)?;
    Ok(is_symmetric_nash(&b, x, tol)?.is_nash)
}
