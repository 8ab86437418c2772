//! Properties of the multistart augmented-Lagrangian solver.

use proptest::prelude::*;
use sess::nlp::{check_gradient, minimize, project_simplex, SmoothFunction, SmoothProblem};

/// Projection by bisection on the threshold `theta` solving
/// `sum max(v_i - theta, 0) = 1`.
fn bisection_projection(v: &[f64]) -> Vec<f64> {
    let mass = |t: f64| v.iter().map(|&x| (x - t).max(0.0)).sum::<f64>();
    let mut lo = v.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    v.iter().map(|&x| (x - t).max(0.0)).collect()
}

fn quadratic_problem(b: [[f64; 3]; 3]) -> SmoothProblem {
    // f(y, x) = y'Bx - x'Bx over two simplices
    let f = SmoothFunction::new(move |z, g| {
        let (y, x) = z.split_at(3);
        let bx: Vec<f64> = (0..3).map(|i| (0..3).map(|j| b[i][j] * x[j]).sum()).collect();
        let yb: Vec<f64> = (0..3).map(|j| (0..3).map(|i| y[i] * b[i][j]).sum()).collect();
        let btx: Vec<f64> = (0..3).map(|j| (0..3).map(|i| x[i] * b[i][j]).sum()).collect();
        for i in 0..3 {
            g[i] = bx[i];
            g[3 + i] = yb[i] - bx[i] - btx[i];
        }
        (0..3).map(|i| y[i] * bx[i] - x[i] * bx[i]).sum()
    });
    let norm = SmoothFunction::new(|z, g| {
        g.iter_mut().for_each(|v| *v = 0.0);
        g[0] = 1.0;
        g[1] = 1.0;
        g[2] = 1.0;
        z[0] + z[1] + z[2] - 1.0
    });
    SmoothProblem::new(6, f, vec![0.0; 6], vec![1.0; 6])
        .with_equality(norm)
        .with_simplex_block(3..6)
}

fn rosenbrock() -> SmoothProblem {
    let f = SmoothFunction::new(|z, g| {
        let (x, y) = (z[0], z[1]);
        g[0] = -2.0 * (1.0 - x) - 400.0 * x * (y - x * x);
        g[1] = 200.0 * (y - x * x);
        (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
    });
    // unit disc constraint keeps the optimum off the unconstrained minimizer
    let disc = SmoothFunction::new(|z, g| {
        g[0] = 2.0 * z[0];
        g[1] = 2.0 * z[1];
        z[0] * z[0] + z[1] * z[1] - 0.5
    });
    SmoothProblem::new(2, f, vec![-2.0, -2.0], vec![2.0, 2.0]).with_inequality(disc)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn projection_matches_bisection(v in prop::collection::vec(-5.0f64..5.0, 1..12)) {
        let mut p = v.clone();
        project_simplex(&mut p);
        let q = bisection_projection(&v);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
        // variational inequality: (v - p) . (e_k - p) <= 0 for every vertex
        let dot_p: f64 = v.iter().zip(&p).map(|(a, b)| (a - b) * b).sum();
        for k in 0..v.len() {
            prop_assert!((v[k] - p[k]) - dot_p <= 1e-10);
        }
    }

    #[test]
    fn quadratic_gradient_is_exact(entries in prop::array::uniform9(-2.0f64..2.0), w in prop::array::uniform6(0.05f64..1.0)) {
        let b = [[entries[0], entries[1], entries[2]], [entries[3], entries[4], entries[5]], [entries[6], entries[7], entries[8]]];
        let s1: f64 = w[..3].iter().sum();
        let s2: f64 = w[3..].iter().sum();
        let point: Vec<f64> = w[..3].iter().map(|v| v / s1).chain(w[3..].iter().map(|v| v / s2)).collect();
        prop_assert!(check_gradient(&quadratic_problem(b), &point, 1e-6) <= 1e-7);
    }
}

#[test]
fn linear_gradient_is_exact() {
    let f = SmoothFunction::new(|z, g| {
        g.copy_from_slice(&[3.0, -1.5, 0.25]);
        3.0 * z[0] - 1.5 * z[1] + 0.25 * z[2]
    });
    let p = SmoothProblem::new(3, f, vec![-1.0; 3], vec![1.0; 3]);
    assert!(check_gradient(&p, &[0.1, -0.3, 0.7], 1e-6) <= 1e-10);
}

#[test]
fn rosenbrock_matches_grid_oracle() {
    let p = rosenbrock();
    let rep = minimize(&p, 16, 7, 1e-8, 1e-8).unwrap();
    let mut best = f64::INFINITY;
    let n = 2000;
    for a in 0..=n {
        for c in 0..=n {
            let x = -1.0 + 2.0 * a as f64 / n as f64;
            let y = -1.0 + 2.0 * c as f64 / n as f64;
            if x * x + y * y <= 0.5 {
                best = best.min(p.objective.value(&[x, y]));
            }
        }
    }
    assert!(rep.feasibility_residual <= 1e-8);
    assert!(rep.best_value <= best + 1e-6, "{} vs grid {best}", rep.best_value);
    assert!(rep.best_value >= best - 1e-2, "{} vs grid {best}", rep.best_value);
}

#[test]
fn solves_are_bitwise_deterministic() {
    let b = [[0.3, -1.0, 0.5], [1.2, 0.0, -0.4], [-0.7, 0.9, 0.1]];
    for problem in [quadratic_problem(b), rosenbrock()] {
        let r1 = minimize(&problem, 24, 11, 1e-8, 1e-8).unwrap();
        let r2 = minimize(&problem, 24, 11, 1e-8, 1e-8).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&r1.best_point), bits(&r2.best_point));
        assert_eq!(r1.best_value.to_bits(), r2.best_value.to_bits());
    }
}

#[test]
fn incumbent_excess_never_increases() {
    let b = [[0.3, -1.0, 0.5], [1.2, 0.0, -0.4], [-0.7, 0.9, 0.1]];
    for problem in [quadratic_problem(b), rosenbrock()] {
        let rep = minimize(&problem, 24, 3, 1e-8, 1e-8).unwrap();
        for s in &rep.start_results {
            assert!(
                s.incumbent_excess.windows(2).all(|w| w[1] <= w[0]),
                "start {}: {:?}",
                s.index,
                s.incumbent_excess
            );
        }
    }
}
