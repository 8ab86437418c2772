//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sess::{DiscreteSEG, ToleranceSet};

/// A game with `m = 2`, `n = 2` and every payoff uniform in `[0, 1]`.
pub fn random_game(seed: u64) -> DiscreteSEG {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let leader = (0..2).map(|_| (0..2).map(|_| rng.gen::<f64>()).collect()).collect();
    let follower = (0..2)
        .map(|_| (0..2).map(|_| (0..2).map(|_| rng.gen::<f64>()).collect()).collect())
        .collect();
    DiscreteSEG::new(leader, follower).unwrap()
}

/// Brute-force ESS decision for a 2x2 follower game by scanning mutants
/// `(1 - k/R, k/R)` on a lattice of resolution `R`. Acceptance mirrors the
/// library rule: the largest admissible invasion payoff must be negative.
pub fn lattice_ess_2x2(b: [[f64; 2]; 2], x: [f64; 2], tol: &ToleranceSet, resolution: usize) -> bool {
    let bx = [b[0][0] * x[0] + b[0][1] * x[1], b[1][0] * x[0] + b[1][1] * x[1]];
    let v = x[0] * bx[0] + x[1] * bx[1];
    // Nash test
    if bx.iter().any(|&r| r > v + tol.eps_p) {
        return false;
    }
    let mut best = f64::NEG_INFINITY;
    for k in 0..=resolution {
        let y1 = k as f64 / resolution as f64;
        let y = [1.0 - y1, y1];
        let ybx = y[0] * bx[0] + y[1] * bx[1];
        let dist = (y[0] - x[0]).powi(2) + (y[1] - x[1]).powi(2);
        if (ybx - v).abs() > tol.eps_p || dist < tol.delta {
            continue;
        }
        let by = [b[0][0] * y[0] + b[0][1] * y[1], b[1][0] * y[0] + b[1][1] * y[1]];
        let f = (y[0] - x[0]) * by[0] + (y[1] - x[1]) * by[1];
        best = best.max(f);
    }
    best < 0.0
}

/// Symmetric Nash equilibria of a 2x2 game with minimum support mass
/// `eps_s`, found by solving the indifference equation directly.
pub fn nash_points_2x2(b: [[f64; 2]; 2], tol: &ToleranceSet) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    if b[1][0] <= b[0][0] + tol.eps_p {
        out.push([1.0, 0.0]);
    }
    if b[0][1] <= b[1][1] + tol.eps_p {
        out.push([0.0, 1.0]);
    }
    let den = b[0][0] - b[0][1] - b[1][0] + b[1][1];
    if den.abs() > 1e-14 {
        let p = (b[1][1] - b[0][1]) / den;
        if p >= tol.eps_s && 1.0 - p >= tol.eps_s {
            out.push([p, 1.0 - p]);
        }
    }
    out
}

/// Leader value of the optimistic SESS found by scanning the leader simplex
/// on a grid of spacing `1/resolution`; `None` when no grid point admits an ESS.
pub fn brute_force_osess(game: &DiscreteSEG, tol: &ToleranceSet, resolution: usize) -> Option<f64> {
    assert_eq!((game.m(), game.n()), (2, 2));
    let mut best: Option<f64> = None;
    for k in 0..=resolution {
        let s = k as f64 / resolution as f64;
        let sigma = [s, 1.0 - s];
        let mut b = [[0.0; 2]; 2];
        for (i, row) in b.iter_mut().enumerate() {
            for (j, e) in row.iter_mut().enumerate() {
                *e = sigma[0] * game.follower(0, i, j) + sigma[1] * game.follower(1, i, j);
            }
        }
        for x in nash_points_2x2(b, tol) {
            if !lattice_ess_2x2(b, x, tol, 2000) {
                continue;
            }
            let value: f64 = (0..2)
                .flat_map(|l| (0..2).map(move |i| (l, i)))
                .map(|(l, i)| sigma[l] * x[i] * game.leader(l, i))
                .sum();
            if best.is_none_or(|v| value > v) {
                best = Some(value);
            }
        }
    }
    best
}

/// `n x n` matrix with entries uniform in `[lo, hi)`.
pub fn random_matrix(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..n).map(|_| rng.gen_range(lo..hi)).collect()).collect()
}

/// Symmetric Nash equilibria of `b`, one per support whose indifference
/// system is nonsingular, found by a direct linear solve per support.
pub fn symmetric_nash_points(b: &[Vec<f64>], tol: &ToleranceSet) -> Vec<Vec<f64>> {
    let n = b.len();
    let mut out = Vec::new();
    for mask in 1u32..(1 << n) {
        let t: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let k = t.len();
        // [B_TT -1; 1 0] [x_T; v] = [0; 1]
        let mut a = nalgebra::DMatrix::zeros(k + 1, k + 1);
        let mut rhs = nalgebra::DVector::zeros(k + 1);
        for (r, &i) in t.iter().enumerate() {
            for (c, &j) in t.iter().enumerate() {
                a[(r, c)] = b[i][j];
            }
            a[(r, k)] = -1.0;
            a[(k, r)] = 1.0;
        }
        rhs[k] = 1.0;
        let Some(sol) = a.lu().solve(&rhs) else { continue };
        if (0..k).any(|r| !(sol[r] > tol.eps_s)) {
            continue;
        }
        let mut x = vec![0.0; n];
        for (r, &i) in t.iter().enumerate() {
            x[i] = sol[r];
        }
        let bx: Vec<f64> = (0..n).map(|i| (0..n).map(|j| b[i][j] * x[j]).sum()).collect();
        let v: f64 = (0..n).map(|i| x[i] * bx[i]).sum();
        if bx.iter().all(|&r| r <= v + tol.eps_p) {
            out.push(x);
        }
    }
    out
}
