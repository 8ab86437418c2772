//! The eco-evolutionary cancer treatment model: a leader (the physician)
//! chooses doses `m` of two drugs, three cancer phenotypes with abundances `x`
//! respond ecologically, and phenotypes 1 and 2 evolve resistance traits `u`.
//!
//! Equilibrium conditions are complementarity systems (`x_i G_i = 0`, and the
//! KKT conditions of each trait's fitness maximization). They are resolved by
//! enumerating which phenotypes are alive and where each trait sits (lower
//! bound, interior, upper bound), which leaves 72 smooth subproblems. Every
//! candidate is then certified by a global 1-D search over traits.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::ToleranceSet;
use crate::nlp::{run_starts, SmoothFunction, SmoothProblem, SolveReport, SolverOptions};

/// Grid size of the certification scan.
pub const CERTIFY_GRID: usize = 10_000;
/// Tolerance (in fitness value) for a resident trait to count as a maximizer.
pub const ARGMAX_TOL: f64 = 1e-6;
/// Default upper bound on each dose.
pub const DEFAULT_DOSE_BOUND: f64 = 5.0;
/// Abundances are searched in `[0, ABUNDANCE_BOUND * K]`.
pub const ABUNDANCE_BOUND: f64 = 2.0;

/// Feasibility tolerance of the subproblem solves.
const FEAS_TOL: f64 = 1e-8;
/// Newton polish stops once every active equality is below this.
const POLISH_TOL: f64 = 1e-15;
const POLISH_ITERS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CancerModelParams {
    pub r_max: f64,
    pub g1: f64,
    pub g2: f64,
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    #[serde(rename = "K")]
    pub capacity: f64,
    pub d: f64,
    pub k1: f64,
    pub k2: f64,
    pub b1: f64,
    pub b2: f64,
    #[serde(rename = "Q_max")]
    pub q_max: f64,
    pub w1: f64,
    pub w2: f64,
    pub r1: f64,
    pub r2: f64,
    pub c: f64,
}

impl Default for CancerModelParams {
    fn default() -> Self {
        Self {
            r_max: 0.45,
            g1: 0.5,
            g2: 0.5,
            a0: 1.0,
            a1: 0.15,
            a2: 0.9,
            a3: 0.9,
            capacity: 10_000.0,
            d: 0.01,
            k1: 5.0,
            k2: 5.0,
            b1: 10.0,
            b2: 10.0,
            q_max: 1.0,
            w1: 0.5,
            w2: 0.2,
            r1: 0.4,
            r2: 0.4,
            c: 0.5,
        }
    }
}

impl CancerModelParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("r_max", self.r_max),
            ("K", self.capacity),
            ("k1", self.k1),
            ("k2", self.k2),
            ("b1", self.b1),
            ("b2", self.b2),
            ("Q_max", self.q_max),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("g1", self.g1),
            ("g2", self.g2),
            ("a0", self.a0),
            ("a1", self.a1),
            ("a2", self.a2),
            ("a3", self.a3),
            ("d", self.d),
            ("w1", self.w1),
            ("w2", self.w2),
            ("r1", self.r1),
            ("r2", self.r2),
            ("c", self.c),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    /// Interaction matrix; row `i` weighs the abundances competing with phenotype `i`.
    pub fn alpha(&self) -> [[f64; 3]; 3] {
        [
            [self.a0, self.a1, self.a1],
            [self.a2, self.a0, self.a3],
            [self.a2, self.a3, self.a0],
        ]
    }

    fn cost(&self, i: usize) -> f64 {
        if i == 1 {
            self.g1
        } else {
            self.g2
        }
    }

    fn benefit(&self, i: usize) -> f64 {
        if i == 1 {
            self.b1
        } else {
            self.b2
        }
    }

    fn innate(&self, i: usize) -> f64 {
        if i == 1 {
            self.k1
        } else {
            self.k2
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcoEvoState {
    /// Doses of drugs 1 and 2.
    pub m: [f64; 2],
    /// Resistance traits of phenotypes 1 and 2.
    pub u: [f64; 2],
    /// Abundances of phenotypes 0, 1 and 2.
    pub x: [f64; 3],
}

impl EcoEvoState {
    pub fn validate(&self) -> Result<()> {
        let ok = self.m.iter().chain(&self.x).all(|v| v.is_finite() && *v >= 0.0)
            && self.u.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v));
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("state out of domain: {self:?}")))
        }
    }
}

/// Scaled competition `(alpha_i . x) / K`.
fn crowding(i: usize, x: &[f64; 3], p: &CancerModelParams) -> f64 {
    let a = p.alpha()[i];
    (a[0] * x[0] + a[1] * x[1] + a[2] * x[2]) / p.capacity
}

/// Growth rate `G_i(u_i, m, x)` of phenotype `i`; `u` is ignored for `i = 0`.
pub fn fitness_g(i: usize, u: f64, m: &[f64; 2], x: &[f64; 3], p: &CancerModelParams) -> f64 {
    let crowd = crowding(i, x, p);
    match i {
        0 => p.r_max * (1.0 - crowd) - p.d - m[0] / p.k1 - m[1] / p.k2,
        1 => p.r_max * (-p.g1 * u).exp() * (1.0 - crowd) - p.d - m[0] / (p.b1 * u + p.k1) - m[1] / p.k2,
        2 => p.r_max * (-p.g2 * u).exp() * (1.0 - crowd) - p.d - m[0] / p.k1 - m[1] / (p.b2 * u + p.k2),
        _ => panic!("phenotype index {i} out of range"),
    }
}

/// `dG_i/du_i`; zero for phenotype 0, which has no trait.
pub fn fitness_grad_u(i: usize, u: f64, m: &[f64; 2], x: &[f64; 3], p: &CancerModelParams) -> f64 {
    if i == 0 {
        return 0.0;
    }
    let (g, b, k, mi) = (p.cost(i), p.benefit(i), p.innate(i), m[i - 1]);
    let den = b * u + k;
    -g * p.r_max * (-g * u).exp() * (1.0 - crowding(i, x, p)) + mi * b / (den * den)
}

/// `d2G_i/du_i2`; zero for phenotype 0.
pub fn fitness_curvature_u(i: usize, u: f64, m: &[f64; 2], x: &[f64; 3], p: &CancerModelParams) -> f64 {
    if i == 0 {
        return 0.0;
    }
    let (g, b, k, mi) = (p.cost(i), p.benefit(i), p.innate(i), m[i - 1]);
    let den = b * u + k;
    g * g * p.r_max * (-g * u).exp() * (1.0 - crowding(i, x, p)) - 2.0 * mi * b * b / (den * den * den)
}

/// Leader objective (quality of life).
pub fn quality_q(state: &EcoEvoState, p: &CancerModelParams) -> f64 {
    let burden = (state.x[0] + state.x[1] + state.x[2]) / p.capacity;
    p.q_max
        - p.c * burden * burden
        - p.w1 * state.m[0] * state.m[0]
        - p.w2 * state.m[1] * state.m[1]
        - p.r1 * state.u[0] * state.u[0]
        - p.r2 * state.u[1] * state.u[1]
}

/// `x_i G_i(u_i, m, x)` for every phenotype; zero at an ecological equilibrium.
pub fn ecological_residual(state: &EcoEvoState, p: &CancerModelParams) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        let u = if i == 0 { 0.0 } else { state.u[i - 1] };
        *o = state.x[i] * fitness_g(i, u, &state.m, &state.x, p);
    }
    out
}

/// Global maximum of `G_i` over the trait interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    pub value: f64,
    pub argmax: f64,
    /// Bound on how far the true maximum can exceed the grid maximum.
    pub slack: f64,
}

/// Maximizes `G_i(., m, x)` over `[0, 1]`: a uniform grid of
/// [`CERTIFY_GRID`] points, then safeguarded Newton on `dG_i/du` from the best
/// grid cell and from both endpoints.
///
/// `slack` is `L h / 2` with `h` the grid spacing and `L` a bound on
/// `|dG_i/du|` over the interval, so the exact maximum is at most the grid
/// maximum plus `slack`. For phenotype 0 the value is simply `G_0(m, x)`.
pub fn certify(i: usize, m: &[f64; 2], x: &[f64; 3], p: &CancerModelParams) -> Certification {
    if i == 0 {
        return Certification {
            value: fitness_g(0, 0.0, m, x, p),
            argmax: 0.0,
            slack: 0.0,
        };
    }
    let g = |u: f64| fitness_g(i, u, m, x, p);
    let h = 1.0 / (CERTIFY_GRID - 1) as f64;
    let mut best_u = 0.0;
    let mut best = g(0.0);
    for k in 1..CERTIFY_GRID {
        let u = (k as f64 * h).min(1.0);
        let v = g(u);
        if v > best {
            best = v;
            best_u = u;
        }
    }
    let grid_best = best;
    let starts = [
        (best_u, (best_u - h).max(0.0), (best_u + h).min(1.0)),
        (0.0, 0.0, h),
        (1.0, 1.0 - h, 1.0),
    ];
    for (u0, lo, hi) in starts {
        let u = newton_polish(i, u0, lo, hi, m, x, p);
        let v = g(u);
        if v > best {
            best = v;
            best_u = u;
        }
    }
    let (gc, b, k, mi) = (p.cost(i), p.benefit(i), p.innate(i), m[i - 1]);
    let lipschitz = gc * p.r_max * (1.0 - crowding(i, x, p)).abs() + mi * b / (k * k);
    Certification {
        value: best,
        argmax: best_u,
        slack: (grid_best + 0.5 * lipschitz * h - best).max(0.0),
    }
}

/// Newton on `dG/du = 0` kept inside `[lo, hi]`; falls back to bisection when
/// the derivative brackets a root and a Newton step leaves the bracket.
fn newton_polish(i: usize, u0: f64, lo: f64, hi: f64, m: &[f64; 2], x: &[f64; 3], p: &CancerModelParams) -> f64 {
    let d = |u: f64| fitness_grad_u(i, u, m, x, p);
    let (mut lo, mut hi) = (lo, hi);
    let (dlo, dhi) = (d(lo), d(hi));
    if dlo.signum() == dhi.signum() {
        // monotone on the cell: the maximum is at the uphill end
        return if dlo > 0.0 { hi } else { lo };
    }
    if dlo < 0.0 {
        // derivative rises through zero: a minimum, not a maximum
        return if fitness_g(i, lo, m, x, p) >= fitness_g(i, hi, m, x, p) { lo } else { hi };
    }
    let mut u = u0.clamp(lo, hi);
    for _ in 0..100 {
        let du = d(u);
        if du == 0.0 {
            break;
        }
        if du > 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let curv = fitness_curvature_u(i, u, m, x, p);
        let step = if curv < 0.0 { u - du / curv } else { f64::NAN };
        u = if step.is_finite() && step > lo && step < hi {
            step
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON {
            break;
        }
    }
    u
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContinuousMode {
    /// Stackelberg equilibrium baseline.
    Se,
    /// Optimistic evolutionarily stable Stackelberg equilibrium.
    Osess,
}

impl fmt::Display for ContinuousMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContinuousMode::Se => "se",
            ContinuousMode::Osess => "osess",
        })
    }
}

/// Where a trait sits in its interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraitActivity {
    Lower,
    Interior,
    Upper,
}

/// One branch of the complementarity enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubproblemCase {
    pub index: usize,
    pub alive: [bool; 3],
    pub traits: [TraitActivity; 2],
}

/// The 8 alive patterns times 9 trait cases, in a fixed order.
pub fn enumerate_cases() -> Vec<SubproblemCase> {
    let acts = [TraitActivity::Lower, TraitActivity::Interior, TraitActivity::Upper];
    let mut out = Vec::with_capacity(72);
    for mask in 0..8usize {
        let alive = [mask & 1 != 0, mask & 2 != 0, mask & 4 != 0];
        for a1 in acts {
            for a2 in acts {
                out.push(SubproblemCase {
                    index: out.len(),
                    alive,
                    traits: [a1, a2],
                });
            }
        }
    }
    out
}

/// Layout of the full constraint functions: `[m1, m2, u1, u2, z0, z1, z2]`
/// with `z = x / K`.
const DIM: usize = 7;
/// Subproblems are posed over `[m1, m2, u1, u2]` only.
const RDIM: usize = 4;
/// Alive sets whose interaction submatrix has a smaller determinant are skipped.
const SINGULAR_DET: f64 = 1e-12;

fn split(v: &[f64], p: &CancerModelParams) -> ([f64; 2], [f64; 2], [f64; 3]) {
    (
        [v[0], v[1]],
        [v[2], v[3]],
        [v[4] * p.capacity, v[5] * p.capacity, v[6] * p.capacity],
    )
}

fn trait_of(i: usize, u: &[f64; 2]) -> f64 {
    if i == 0 {
        0.0
    } else {
        u[i - 1]
    }
}

/// `G_i` as a function of the subproblem variables, with gradient.
fn g_fn(i: usize, p: CancerModelParams) -> SmoothFunction {
    SmoothFunction::new(move |v, grad| {
        let (m, u, x) = split(v, &p);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let alpha = p.alpha()[i];
        let crowd = crowding(i, &x, &p);
        let growth = if i == 0 {
            p.r_max
        } else {
            p.r_max * (-p.cost(i) * u[i - 1]).exp()
        };
        for j in 0..3 {
            grad[4 + j] = -growth * alpha[j];
        }
        match i {
            0 => {
                grad[0] = -1.0 / p.k1;
                grad[1] = -1.0 / p.k2;
            }
            1 => {
                let den = p.b1 * u[0] + p.k1;
                grad[0] = -1.0 / den;
                grad[1] = -1.0 / p.k2;
                grad[2] = fitness_grad_u(1, u[0], &m, &x, &p);
            }
            _ => {
                let den = p.b2 * u[1] + p.k2;
                grad[0] = -1.0 / p.k1;
                grad[1] = -1.0 / den;
                grad[3] = fitness_grad_u(2, u[1], &m, &x, &p);
            }
        }
        let _ = crowd;
        fitness_g(i, trait_of(i, &u), &m, &x, &p)
    })
}

/// `sign * dG_i/du_i` (phenotypes 1 and 2), with gradient.
fn grad_u_fn(i: usize, sign: f64, p: CancerModelParams) -> SmoothFunction {
    SmoothFunction::new(move |v, grad| {
        let (m, u, x) = split(v, &p);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (g, b, k) = (p.cost(i), p.benefit(i), p.innate(i));
        let ui = u[i - 1];
        let den = b * ui + k;
        let e = p.r_max * (-g * ui).exp();
        let alpha = p.alpha()[i];
        grad[i - 1] = sign * b / (den * den);
        grad[1 + i] = sign * fitness_curvature_u(i, ui, &m, &x, &p);
        for j in 0..3 {
            grad[4 + j] = sign * g * e * alpha[j];
        }
        sign * fitness_grad_u(i, ui, &m, &x, &p)
    })
}

/// `d2G_i/du_i2` (must be nonpositive at an interior maximizer), with gradient.
fn curvature_fn(i: usize, p: CancerModelParams) -> SmoothFunction {
    SmoothFunction::new(move |v, grad| {
        let (m, u, x) = split(v, &p);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (g, b, k) = (p.cost(i), p.benefit(i), p.innate(i));
        let ui = u[i - 1];
        let mi = m[i - 1];
        let den = b * ui + k;
        let e = p.r_max * (-g * ui).exp();
        let alpha = p.alpha()[i];
        let crowd = crowding(i, &x, &p);
        grad[i - 1] = -2.0 * b * b / (den * den * den);
        grad[1 + i] = -g * g * g * e * (1.0 - crowd) + 6.0 * mi * b * b * b / (den * den * den * den);
        for j in 0..3 {
            grad[4 + j] = -g * g * e * alpha[j];
        }
        fitness_curvature_u(i, ui, &m, &x, &p)
    })
}

/// `-Q` in subproblem variables, with gradient.
fn neg_q_fn(p: CancerModelParams) -> SmoothFunction {
    SmoothFunction::new(move |v, grad| {
        let burden = v[4] + v[5] + v[6];
        grad[0] = 2.0 * p.w1 * v[0];
        grad[1] = 2.0 * p.w2 * v[1];
        grad[2] = 2.0 * p.r1 * v[2];
        grad[3] = 2.0 * p.r2 * v[3];
        for j in 0..3 {
            grad[4 + j] = 2.0 * p.c * burden;
        }
        -(p.q_max - p.c * burden * burden - p.w1 * v[0] * v[0] - p.w2 * v[1] * v[1] - p.r1 * v[2] * v[2]
            - p.r2 * v[3] * v[3])
    })
}

/// Scaled abundances `z = x / K` of an alive set as a function of doses and
/// traits.
///
/// For alive `i`, `G_i = 0` reads `alpha_i . z = 1 - (d + drug_i) / growth_i`,
/// which is linear in `z` with a constant matrix. The restriction of `alpha`
/// to the alive set is inverted once, so `z` and its Jacobian are exact.
#[derive(Debug, Clone)]
pub struct Ecology {
    p: CancerModelParams,
    alive: [bool; 3],
    /// Inverse of `alpha` on the alive set, zero elsewhere.
    inverse: [[f64; 3]; 3],
}

impl Ecology {
    /// `None` when `alpha` restricted to the alive set is singular.
    pub fn new(p: &CancerModelParams, alive: [bool; 3]) -> Option<Self> {
        let idx: Vec<usize> = (0..3).filter(|&i| alive[i]).collect();
        let alpha = p.alpha();
        let mut inverse = [[0.0; 3]; 3];
        if !idx.is_empty() {
            let sub = nalgebra::DMatrix::from_fn(idx.len(), idx.len(), |r, c| alpha[idx[r]][idx[c]]);
            if sub.determinant().abs() < SINGULAR_DET {
                return None;
            }
            let inv = sub.try_inverse()?;
            for (r, &i) in idx.iter().enumerate() {
                for (c, &j) in idx.iter().enumerate() {
                    inverse[i][j] = inv[(r, c)];
                }
            }
        }
        Some(Self {
            p: *p,
            alive,
            inverse,
        })
    }

    /// `z` and `dz/dv` for `v = [m1, m2, u1, u2]`.
    pub fn solve(&self, v: &[f64]) -> ([f64; 3], [[f64; RDIM]; 3]) {
        let p = &self.p;
        let (m1, m2, u1, u2) = (v[0], v[1], v[2], v[3]);
        let e1 = (p.g1 * u1).exp();
        let e2 = (p.g2 * u2).exp();
        let den1 = p.b1 * u1 + p.k1;
        let den2 = p.b2 * u2 + p.k2;
        let s = [
            p.d + m1 / p.k1 + m2 / p.k2,
            p.d + m1 / den1 + m2 / p.k2,
            p.d + m1 / p.k1 + m2 / den2,
        ];
        let r = p.r_max;
        let c = [1.0 - s[0] / r, 1.0 - s[1] * e1 / r, 1.0 - s[2] * e2 / r];
        let dc = [
            [-1.0 / (r * p.k1), -1.0 / (r * p.k2), 0.0, 0.0],
            [
                -e1 / (r * den1),
                -e1 / (r * p.k2),
                -(-m1 * p.b1 / (den1 * den1) + s[1] * p.g1) * e1 / r,
                0.0,
            ],
            [
                -e2 / (r * p.k1),
                -e2 / (r * den2),
                0.0,
                -(-m2 * p.b2 / (den2 * den2) + s[2] * p.g2) * e2 / r,
            ],
        ];
        let mut z = [0.0; 3];
        let mut jac = [[0.0; RDIM]; 3];
        for i in (0..3).filter(|&i| self.alive[i]) {
            for j in (0..3).filter(|&j| self.alive[j]) {
                let w = self.inverse[i][j];
                z[i] += w * c[j];
                for k in 0..RDIM {
                    jac[i][k] += w * dc[j][k];
                }
            }
        }
        (z, jac)
    }

    /// Composes a function of `[m, u, z]` with `z(m, u)`.
    fn compose(&self, f: SmoothFunction) -> SmoothFunction {
        let eco = self.clone();
        SmoothFunction::new(move |v, grad| {
            let (z, jac) = eco.solve(v);
            let full = [v[0], v[1], v[2], v[3], z[0], z[1], z[2]];
            let mut g = [0.0; DIM];
            let val = f.eval(&full, &mut g);
            for k in 0..RDIM {
                grad[k] = g[k] + (0..3).map(|j| g[RDIM + j] * jac[j][k]).sum::<f64>();
            }
            val
        })
    }

    /// `sign * z_i + offset`.
    fn abundance_fn(&self, i: usize, sign: f64, offset: f64) -> SmoothFunction {
        let eco = self.clone();
        SmoothFunction::new(move |v, grad| {
            let (z, jac) = eco.solve(v);
            for k in 0..RDIM {
                grad[k] = sign * jac[i][k];
            }
            sign * z[i] + offset
        })
    }
}

/// The smooth subproblem of one enumeration case, over `[m1, m2, u1, u2]`
/// with abundances eliminated through [`Ecology`]: minimize `-Q` subject to
///
/// * `0 <= z_i <= ABUNDANCE_BOUND` for alive phenotypes (`G_i = 0` holds by
///   construction) and `G_j <= 0` for extinct ones;
/// * for interior traits, `dG_i/du_i = 0` and `d2G_i/du_i2 <= 0`;
/// * for traits at a bound, the sign of `dG_i/du_i` that makes the bound a
///   local maximizer.
///
/// Bound-fixed traits are pinned through their boxes. Returns `None` when the
/// alive set has a singular interaction matrix.
pub fn build_subproblem(p: &CancerModelParams, dose_bound: f64, case: &SubproblemCase) -> Option<(SmoothProblem, Ecology)> {
    let eco = Ecology::new(p, case.alive)?;
    let mut lower = vec![0.0; RDIM];
    let mut upper = vec![dose_bound, dose_bound, 1.0, 1.0];
    for (t, act) in case.traits.iter().enumerate() {
        match act {
            TraitActivity::Lower => upper[2 + t] = 0.0,
            TraitActivity::Upper => lower[2 + t] = 1.0,
            TraitActivity::Interior => {}
        }
    }
    let mut problem = SmoothProblem::new(RDIM, eco.compose(neg_q_fn(*p)), lower, upper);
    for (i, &alive) in case.alive.iter().enumerate() {
        problem = if alive {
            problem
                .with_inequality(eco.abundance_fn(i, -1.0, 0.0))
                .with_inequality(eco.abundance_fn(i, 1.0, -ABUNDANCE_BOUND))
        } else {
            problem.with_inequality(eco.compose(g_fn(i, *p)))
        };
    }
    for (t, act) in case.traits.iter().enumerate() {
        let i = t + 1;
        problem = match act {
            TraitActivity::Interior => problem
                .with_equality(eco.compose(grad_u_fn(i, 1.0, *p)))
                .with_inequality(eco.compose(curvature_fn(i, *p))),
            TraitActivity::Lower => problem.with_inequality(eco.compose(grad_u_fn(i, 1.0, *p))),
            TraitActivity::Upper => problem.with_inequality(eco.compose(grad_u_fn(i, -1.0, *p))),
        };
    }
    Some((problem, eco))
}

/// Gauss-Newton projection onto the equality constraints of a case, moving
/// only variables not pinned by their box. Inequalities are left to the
/// caller to recheck.
fn polish(problem: &SmoothProblem, v: &mut [f64]) {
    let free: Vec<usize> = (0..RDIM).filter(|&k| problem.box_upper[k] > problem.box_lower[k]).collect();
    let eqs = &problem.equality_constraints;
    if eqs.is_empty() || free.is_empty() {
        return;
    }
    let mut grad = vec![0.0; RDIM];
    for _ in 0..POLISH_ITERS {
        let mut h = nalgebra::DVector::zeros(eqs.len());
        let mut jac = nalgebra::DMatrix::zeros(eqs.len(), free.len());
        for (r, e) in eqs.iter().enumerate() {
            h[r] = e.eval(v, &mut grad);
            for (c, &k) in free.iter().enumerate() {
                jac[(r, c)] = grad[k];
            }
        }
        if h.amax() <= POLISH_TOL {
            return;
        }
        // minimum-norm step: J^T (J J^T)^-1 h
        let Some(w) = (&jac * jac.transpose()).lu().solve(&h) else {
            return;
        };
        let step = jac.transpose() * w;
        let mut trial = v.to_vec();
        for (c, &k) in free.iter().enumerate() {
            trial[k] = (trial[k] - step[c]).clamp(problem.box_lower[k], problem.box_upper[k]);
        }
        let new_norm = eqs.iter().map(|e| e.value(&trial).abs()).fold(0.0, f64::max);
        if !(new_norm < h.amax()) {
            return;
        }
        v.copy_from_slice(&trial);
    }
}

/// A feasible point of one enumeration case.
#[derive(Debug, Clone, Serialize)]
pub struct CaseCandidate {
    pub case: SubproblemCase,
    pub state: EcoEvoState,
    pub q_value: f64,
    pub feasibility_residual: f64,
}

/// Result of solving every enumeration case.
#[derive(Debug, Clone, Serialize)]
pub struct Enumeration {
    /// Feasible candidates ordered by recomputed Q (best first), ties by case
    /// index and start order.
    pub candidates: Vec<CaseCandidate>,
    /// Multistart report per case; `None` for cases skipped because their
    /// alive set has a singular interaction matrix.
    pub reports: Vec<(SubproblemCase, Option<SolveReport>)>,
}

fn to_state(v: &[f64], eco: &Ecology) -> EcoEvoState {
    let (z, _) = eco.solve(v);
    let k = eco.p.capacity;
    let mut x = [0.0; 3];
    for i in 0..3 {
        if eco.alive[i] {
            x[i] = (z[i] * k).max(0.0);
        }
    }
    EcoEvoState {
        m: [v[0].max(0.0), v[1].max(0.0)],
        u: [v[2].clamp(0.0, 1.0), v[3].clamp(0.0, 1.0)],
        x,
    }
}

/// Solves all 72 cases with `starts` multistart runs each.
pub fn enumerate_candidates(p: &CancerModelParams, dose_bound: f64, starts: usize, seed: u64) -> Result<Enumeration> {
    p.validate()?;
    if !(dose_bound.is_finite() && dose_bound >= 0.0) {
        return Err(Error::Config(format!("dose bound must be nonnegative, got {dose_bound}")));
    }
    if starts == 0 {
        return Err(Error::Config("starts must be at least 1".into()));
    }
    let cases = enumerate_cases();
    let solved: Vec<(SubproblemCase, Option<SolveReport>, Vec<CaseCandidate>)> = cases
        .par_iter()
        .map(|case| {
            let Some((problem, eco)) = build_subproblem(p, dose_bound, case) else {
                return Ok((*case, None, Vec::new()));
            };
            let opts = SolverOptions {
                starts,
                seed: seed ^ (case.index as u64).wrapping_mul(0xA24B_AED4_963E_E407),
                feas_tol: FEAS_TOL,
                ..SolverOptions::default()
            };
            let report = run_starts(&problem, &opts)?;
            let mut cands: Vec<CaseCandidate> = Vec::new();
            let mut ranked: Vec<_> = report.start_results.iter().collect();
            ranked.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.index.cmp(&b.index)));
            for r in ranked {
                if r.feasibility_residual > FEAS_TOL {
                    continue;
                }
                let mut v = r.point.clone();
                polish(&problem, &mut v);
                let mut residual = problem.feasibility_residual(&v);
                if residual > r.feasibility_residual {
                    v.clone_from(&r.point);
                    residual = r.feasibility_residual;
                }
                let state = to_state(&v, &eco);
                if cands.iter().any(|c| same_state(&c.state, &state)) {
                    continue;
                }
                cands.push(CaseCandidate {
                    case: *case,
                    q_value: quality_q(&state, p),
                    state,
                    feasibility_residual: residual,
                });
            }
            Ok((*case, Some(report), cands))
        })
        .collect::<Result<_>>()?;
    let mut candidates = Vec::new();
    let mut reports = Vec::new();
    for (case, report, cands) in solved {
        candidates.extend(cands);
        reports.push((case, report));
    }
    // stable sort keeps case order, then start order, among equal Q
    candidates.sort_by(|a, b| b.q_value.total_cmp(&a.q_value));
    Ok(Enumeration { candidates, reports })
}

fn same_state(a: &EcoEvoState, b: &EcoEvoState) -> bool {
    let close = |x: f64, y: f64, scale: f64| (x - y).abs() <= 1e-7 * scale;
    a.m.iter().zip(&b.m).all(|(x, y)| close(*x, *y, 1.0))
        && a.u.iter().zip(&b.u).all(|(x, y)| close(*x, *y, 1.0))
        && a.x.iter().zip(&b.x).all(|(x, y)| close(*x, *y, 1e4))
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuousSolution {
    pub state: EcoEvoState,
    /// `quality_q(state)`, recomputed from the state.
    pub q_value: f64,
    /// `G_0(m, x)`, `G_1^max`, `G_2^max`.
    pub certification: [f64; 3],
    pub certification_slack: [f64; 3],
    /// Every phenotype passes the invasion check at `eps_inv`.
    pub certified: bool,
    /// Each resident trait attains the maximum of its fitness within
    /// [`ARGMAX_TOL`].
    pub traits_are_maximizers: bool,
    pub mode: ContinuousMode,
    pub alive_pattern: Vec<usize>,
    pub case: Option<SubproblemCase>,
    pub eps_inv: f64,
    /// Multistart report of the winning case.
    pub solver_report: Option<SolveReport>,
}

/// Certifies a state: `G_0` against `eps_inv` (must vanish if phenotype 0 is
/// present), and `max_u G_i <= eps_inv` for the trait-carrying phenotypes.
pub fn certify_state(
    state: &EcoEvoState,
    p: &CancerModelParams,
    eps_inv: f64,
    mode: ContinuousMode,
) -> ContinuousSolution {
    let certs = [0, 1, 2].map(|i| certify(i, &state.m, &state.x, p));
    let g0_ok = if state.x[0] > 0.0 {
        certs[0].value.abs() <= eps_inv
    } else {
        certs[0].value <= eps_inv
    };
    let certified = g0_ok && certs[1].value <= eps_inv && certs[2].value <= eps_inv;
    let traits_are_maximizers =
        (1..3).all(|i| certs[i].value - fitness_g(i, state.u[i - 1], &state.m, &state.x, p) <= ARGMAX_TOL);
    ContinuousSolution {
        state: *state,
        q_value: quality_q(state, p),
        certification: certs.map(|c| c.value),
        certification_slack: certs.map(|c| c.slack),
        certified,
        traits_are_maximizers,
        mode,
        alive_pattern: (0..3).filter(|&i| state.x[i] > 0.0).collect(),
        case: None,
        eps_inv,
        solver_report: None,
    }
}

fn attach(mut sol: ContinuousSolution, cand: &CaseCandidate, en: &Enumeration) -> ContinuousSolution {
    sol.case = Some(cand.case);
    sol.alive_pattern = (0..3).filter(|&i| cand.case.alive[i]).collect();
    sol.solver_report = en
        .reports
        .iter()
        .find(|(c, _)| c.index == cand.case.index)
        .and_then(|(_, r)| r.clone());
    sol
}

/// Stackelberg baseline: the best enumerated candidate whose resident traits
/// are certified maximizers of their own fitness.
pub fn compute_se_continuous(
    p: &CancerModelParams,
    dose_bound: f64,
    starts: usize,
    seed: u64,
) -> Result<ContinuousSolution> {
    let en = enumerate_candidates(p, dose_bound, starts, seed)?;
    let eps_inv = ToleranceSet::default().eps_inv;
    for cand in &en.candidates {
        let sol = certify_state(&cand.state, p, eps_inv, ContinuousMode::Se);
        if sol.traits_are_maximizers {
            return Ok(attach(sol, cand, &en));
        }
    }
    Err(Error::NoCandidate)
}

/// Generation step of the OSESS driver: the best enumerated candidate by
/// recomputed Q, before certification.
pub fn gen_osess(p: &CancerModelParams, dose_bound: f64, starts: usize, seed: u64) -> Result<EcoEvoState> {
    let en = enumerate_candidates(p, dose_bound, starts, seed)?;
    en.candidates.first().map(|c| c.state).ok_or(Error::NoCandidate)
}

/// Generate-and-certify: the best candidate is certified against `eps_inv`;
/// a failed certification is reported through `certified = false`.
pub fn compute_continuous_osess(
    p: &CancerModelParams,
    dose_bound: f64,
    starts: usize,
    seed: u64,
    tol: &ToleranceSet,
) -> Result<ContinuousSolution> {
    tol.validate()?;
    let en = enumerate_candidates(p, dose_bound, starts, seed)?;
    let cand = en.candidates.first().ok_or(Error::NoCandidate)?;
    let sol = certify_state(&cand.state, p, tol.eps_inv, ContinuousMode::Osess);
    Ok(attach(sol, cand, &en))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlp::check_gradient;

    const ZERO_M: [f64; 2] = [0.0, 0.0];
    const ZERO_X: [f64; 3] = [0.0, 0.0, 0.0];

    #[test]
    fn defaults_and_alpha() {
        let p = CancerModelParams::default();
        assert!(p.validate().is_ok());
        assert_eq!(p.alpha(), [[1.0, 0.15, 0.15], [0.9, 1.0, 0.9], [0.9, 0.9, 1.0]]);
    }

    #[test]
    fn fitness_examples() {
        let p = CancerModelParams::default();
        assert!((fitness_g(0, 0.7, &ZERO_M, &ZERO_X, &p) - 0.44).abs() < 1e-15);
        assert!((fitness_g(1, 0.0, &ZERO_M, &ZERO_X, &p) - 0.44).abs() < 1e-15);
        let expect = 0.45 * (-0.5f64).exp() - 0.01;
        assert!((fitness_g(1, 1.0, &ZERO_M, &ZERO_X, &p) - expect).abs() < 1e-15);
    }

    #[test]
    fn gradient_examples() {
        let p = CancerModelParams::default();
        for u in [0.0f64, 0.3, 1.0] {
            let expect = -0.225 * (-0.5 * u).exp();
            assert!((fitness_grad_u(1, u, &ZERO_M, &ZERO_X, &p) - expect).abs() < 1e-15);
        }
        // crowding exactly one with no drug
        let x = [0.0, 10_000.0, 0.0];
        assert_eq!(fitness_grad_u(1, 0.4, &ZERO_M, &x, &p), 0.0);
    }

    #[test]
    fn quality_examples() {
        let p = CancerModelParams::default();
        let zero = EcoEvoState {
            m: ZERO_M,
            u: [0.0, 0.0],
            x: ZERO_X,
        };
        assert_eq!(quality_q(&zero, &p), 1.0);
        assert_eq!(ecological_residual(&zero, &p), [0.0; 3]);
    }

    #[test]
    fn untreated_certification_is_at_zero_trait() {
        let p = CancerModelParams::default();
        let c = certify(1, &ZERO_M, &ZERO_X, &p);
        assert_eq!(c.argmax, 0.0);
        assert!((c.value - 0.44).abs() < 1e-15);
    }

    #[test]
    fn capacity_rescaling_leaves_fitness_unchanged() {
        let p = CancerModelParams::default();
        let q = CancerModelParams {
            capacity: 3.0 * p.capacity,
            ..p
        };
        let m = [0.3, 0.2];
        let x = [4000.0, 100.0, 900.0];
        let x3 = x.map(|v| 3.0 * v);
        for i in 0..3 {
            let a = fitness_g(i, 0.25, &m, &x, &p);
            let b = fitness_g(i, 0.25, &m, &x3, &q);
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn subproblem_gradients_match_finite_differences() {
        let p = CancerModelParams::default();
        let point = [0.4, 0.45, 0.2, 0.3];
        for case in enumerate_cases() {
            let (problem, _) = build_subproblem(&p, DEFAULT_DOSE_BOUND, &case).unwrap();
            let err = check_gradient(&problem, &point, 1e-6);
            assert!(err <= 1e-6, "case {}: {err}", case.index);
        }
    }

    #[test]
    fn case_enumeration() {
        let cases = enumerate_cases();
        assert_eq!(cases.len(), 72);
        assert!(cases.iter().enumerate().all(|(k, c)| c.index == k));
        assert_eq!(cases[0].alive, [false; 3]);
        assert_eq!(cases[71].alive, [true; 3]);
    }
}
