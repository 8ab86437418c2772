//! Replicator dynamics for the follower population game, used as an
//! empirical stability oracle for ESS candidates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::game::{InducedMatrix, SimplexVector, ToleranceSet};

/// Default RK4 step.
pub const DEFAULT_DT: f64 = 0.05;
/// Distance below which a trajectory counts as having reached its reference.
pub const CONVERGENCE_DISTANCE: f64 = 1e-4;
/// Distance a perturbed trajectory must return within.
pub const RETURN_DISTANCE: f64 = 1e-3;
/// Longest time a perturbed trajectory is followed before giving up.
pub const STABILITY_HORIZON: f64 = 1e5;
/// A perturbed trajectory that wanders this far away counts as escaped.
pub const ESCAPE_DISTANCE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SimplexVector>,
    pub converged: bool,
    pub final_distance: f64,
}

/// Replicator vector field `x_i ((Bx)_i - x.Bx)`.
pub fn replicator_field(b: &InducedMatrix, x: &[f64]) -> Vec<f64> {
    let bx = b.apply(x);
    let mean: f64 = x.iter().zip(&bx).map(|(a, c)| a * c).sum();
    x.iter().zip(&bx).map(|(xi, fi)| xi * (fi - mean)).collect()
}

fn rk4(b: &InducedMatrix, x: &[f64], dt: f64) -> Vec<f64> {
    let axpy = |x: &[f64], k: &[f64], h: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, c)| a + h * c).collect() };
    let k1 = replicator_field(b, x);
    let k2 = replicator_field(b, &axpy(x, &k1, 0.5 * dt));
    let k3 = replicator_field(b, &axpy(x, &k2, 0.5 * dt));
    let k4 = replicator_field(b, &axpy(x, &k3, dt));
    let mut next: Vec<f64> = (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    for v in next.iter_mut() {
        *v = v.max(0.0);
    }
    let s: f64 = next.iter().sum();
    if s > 0.0 {
        for v in next.iter_mut() {
            *v /= s;
        }
    } else {
        next = x.to_vec();
    }
    next
}

/// One explicit RK4 step, clamped and renormalized onto the simplex.
pub fn replicator_step(b: &InducedMatrix, x: &SimplexVector, dt: f64) -> SimplexVector {
    assert!(dt > 0.0, "replicator_step needs dt > 0");
    SimplexVector::from_normalized(rk4(b, x.as_slice(), dt))
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Integrates from `x0` up to `horizon`, recording every step.
pub fn simulate(
    b: &InducedMatrix,
    x0: &SimplexVector,
    horizon: f64,
    dt: f64,
    reference: &SimplexVector,
) -> Trajectory {
    assert!(horizon > 0.0 && dt > 0.0, "simulate needs positive horizon and dt");
    let steps = (horizon / dt).ceil() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut x = x0.as_slice().to_vec();
    times.push(0.0);
    states.push(x0.clone());
    for k in 1..=steps {
        let h = dt.min(horizon - (k - 1) as f64 * dt);
        if h <= 0.0 {
            break;
        }
        x = rk4(b, &x, h);
        times.push(((k - 1) as f64 * dt + h).min(horizon));
        states.push(SimplexVector::from_normalized(x.clone()));
    }
    let final_distance = distance(&x, reference.as_slice());
    Trajectory {
        times,
        states,
        converged: final_distance <= CONVERGENCE_DISTANCE,
        final_distance,
    }
}

/// Follows a perturbed state until it comes back within [`RETURN_DISTANCE`]
/// of `target`, moves beyond `escape`, or the horizon runs out.
fn returns_to(b: &InducedMatrix, start: Vec<f64>, target: &[f64], dt: f64, horizon: f64, escape: f64) -> bool {
    let mut x = start;
    let steps = (horizon / dt).ceil() as usize;
    for _ in 0..steps {
        let r = distance(&x, target);
        if r <= RETURN_DISTANCE {
            return true;
        }
        if r >= escape {
            return false;
        }
        x = rk4(b, &x, dt);
    }
    distance(&x, target) <= RETURN_DISTANCE
}

/// Perturbs `xstar` toward random points of the best-response face and checks
/// that every perturbed trajectory returns.
///
/// Perturbation radii are drawn from `[perturbation/2, perturbation]` so that
/// every trial starts outside the return radius and has to move inward. A
/// trajectory that drifts beyond `max(ESCAPE_DISTANCE, 20 * perturbation)`
/// is treated as unstable without integrating to the full horizon.
pub fn local_stability_check(
    b: &InducedMatrix,
    xstar: &SimplexVector,
    perturbation: f64,
    trials: usize,
    seed: u64,
) -> bool {
    let tol = ToleranceSet::default();
    let face = match crate::ess::best_response_set(b, xstar, &tol) {
        Ok(face) => face,
        Err(_) => return false,
    };
    let n = xstar.dim();
    let target = xstar.as_slice();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        // uniform point of the face via normalized exponentials
        let mut z = vec![0.0; n];
        for &j in &face {
            z[j] = -(1.0 - rng.gen::<f64>()).ln();
        }
        let s: f64 = z.iter().sum();
        z.iter_mut().for_each(|v| *v /= s);
        let dir: Vec<f64> = z.iter().zip(target).map(|(a, c)| a - c).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let radius = if perturbation > 2.0 * RETURN_DISTANCE {
            rng.gen_range(0.5 * perturbation..=perturbation)
        } else {
            perturbation
        };
        let t = (radius / norm).min(1.0);
        let start: Vec<f64> = target.iter().zip(&dir).map(|(a, d)| (a + t * d).max(0.0)).collect();
        let escape = ESCAPE_DISTANCE.max(20.0 * perturbation);
        if !returns_to(b, start, target, DEFAULT_DT, STABILITY_HORIZON, escape) {
            return false;
        }
    }
    true
}
