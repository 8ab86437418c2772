//! Nash and ESS predicates for the symmetric two-player follower game.
//!
//! The invasion problem
//!
//! ```text
//! max  f(y) = y.By - x.By
//! s.t. y in simplex, |y.Bx - v| <= eps_p, |y - x|^2 >= delta
//! ```
//!
//! is solved exactly by enumerating the faces of the polytope
//! `simplex ∩ band`. On each face the maximizer is either a stationary point
//! of the quadratic on the face's affine hull or a stationary point on the
//! intersection with the exclusion sphere; both are small dense problems.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::game::{InducedMatrix, SimplexVector, ToleranceSet};

/// Default lattice budget for [`invasion_oracle`].
pub const DEFAULT_GRID_BUDGET: u64 = 10_000_000;

const FEAS_SLACK: f64 = 1e-12;
/// Iteration cap for the iterative matrix decompositions.
const MAX_DECOMP_ITERS: usize = 10_000;
const ASCENT_STARTS: usize = 16;
const ASCENT_ITERS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EssDiagnostic {
    NotNash,
    /// Some face had a singular reduced Hessian.
    Degenerate,
    /// The invasion maximum is within `eps_p` of the acceptance threshold.
    NearBoundary,
    /// The ascent cross-check found a larger value than face enumeration.
    AscentExceeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NashCheck {
    pub is_nash: bool,
    /// `x . Bx`
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EssVerdict {
    pub is_nash: bool,
    pub is_ess: bool,
    pub best_response_set: Vec<usize>,
    pub worst_invader: Option<SimplexVector>,
    /// Maximum of `y.By - x.By` over admissible mutants; `-inf` when no
    /// mutant is admissible, `NaN` when the Nash check already failed.
    pub invasion_value: f64,
    pub diagnostics: Vec<EssDiagnostic>,
}

/// `x` is a symmetric NE of `B` when no row beats `v = x.Bx` by more than
/// `eps_p` and every row in the support of `x` earns at least `v - eps_p`.
pub fn is_symmetric_nash(b: &InducedMatrix, x: &SimplexVector, tol: &ToleranceSet) -> Result<NashCheck> {
    check_dim(b.n(), x.dim())?;
    let bx = b.apply(x.as_slice());
    let v: f64 = bx.iter().zip(x.as_slice()).map(|(r, xi)| r * xi).sum();
    let upper = bx.iter().all(|&r| r <= v + tol.eps_p);
    let lower = x.support(tol.eps_s).iter().all(|&i| bx[i] >= v - tol.eps_p);
    Ok(NashCheck {
        is_nash: upper && lower,
        value: v,
    })
}

/// Near-best responses `{ j : (Bx)_j >= v - eps_p }`.
pub fn best_response_set(b: &InducedMatrix, x: &SimplexVector, tol: &ToleranceSet) -> Result<Vec<usize>> {
    check_dim(b.n(), x.dim())?;
    let bx = b.apply(x.as_slice());
    let v: f64 = bx.iter().zip(x.as_slice()).map(|(r, xi)| r * xi).sum();
    Ok((0..b.n()).filter(|&j| bx[j] >= v - tol.eps_p).collect())
}

/// Decides whether `x` is an ESS of `B` by maximizing the invasion payoff
/// exactly over the admissible mutant set.
pub fn is_ess(b: &InducedMatrix, x: &SimplexVector, tol: &ToleranceSet) -> Result<EssVerdict> {
    let nash = is_symmetric_nash(b, x, tol)?;
    let br = best_response_set(b, x, tol)?;
    if !nash.is_nash {
        return Ok(EssVerdict {
            is_nash: false,
            is_ess: false,
            best_response_set: br,
            worst_invader: None,
            invasion_value: f64::NAN,
            diagnostics: vec![EssDiagnostic::NotNash],
        });
    }

    let problem = InvasionProblem::new(b, x, nash.value, tol);
    let mut diagnostics = Vec::new();
    let (mut value, mut arg, degenerate) = problem.maximize_by_faces();
    if degenerate {
        diagnostics.push(EssDiagnostic::Degenerate);
    }
    if let Some((asc_value, asc_arg)) = problem.ascent_cross_check(&br, 0) {
        if asc_value > value + 1e-9 {
            diagnostics.push(EssDiagnostic::AscentExceeded);
            value = asc_value;
            arg = Some(asc_arg);
        }
    }

    let near_boundary = (value - tol.eps_p).abs() <= tol.eps_p;
    if near_boundary {
        diagnostics.push(EssDiagnostic::NearBoundary);
    }
    let is_ess = value <= tol.eps_p && !near_boundary;
    Ok(EssVerdict {
        is_nash: true,
        is_ess,
        best_response_set: br,
        worst_invader: arg.and_then(|y| SimplexVector::new(y).ok()),
        invasion_value: value,
        diagnostics,
    })
}

/// Result of the lattice enumeration in [`invasion_oracle`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleResult {
    /// Largest invasion payoff among admissible lattice mutants (`-inf` if none).
    pub max_value: f64,
    /// Lipschitz bound of the invasion payoff w.r.t. the l1 norm on the simplex.
    pub lipschitz: f64,
    /// `lipschitz * 2(n-1) / resolution`: worst-case gap to the continuous maximum.
    pub slack: f64,
    pub points: u64,
    pub feasible_points: u64,
}

/// Number of points of `{k / resolution}` on the `n`-simplex.
pub fn lattice_size(n: usize, resolution: usize) -> f64 {
    // C(resolution + n - 1, n - 1)
    let mut c = 1.0_f64;
    for k in 1..n {
        c = c * (resolution + k) as f64 / k as f64;
    }
    c
}

/// Brute-force invasion check over the simplex lattice with spacing
/// `1 / resolution`; an independent counterpart of [`is_ess`].
pub fn invasion_oracle(
    b: &InducedMatrix,
    x: &SimplexVector,
    resolution: usize,
    tol: &ToleranceSet,
    budget: u64,
) -> Result<OracleResult> {
    check_dim(b.n(), x.dim())?;
    if resolution == 0 {
        return Err(Error::Budget("grid resolution must be positive".into()));
    }
    let n = b.n();
    let size = lattice_size(n, resolution);
    if size > budget as f64 {
        return Err(Error::Budget(format!(
            "lattice has {size:.3e} points, budget is {budget}"
        )));
    }
    let xs = x.as_slice();
    let bx = b.apply(xs);
    let v: f64 = bx.iter().zip(xs).map(|(r, xi)| r * xi).sum();
    let mut counts = vec![0usize; n];
    let mut y = vec![0.0; n];
    let mut best = f64::NEG_INFINITY;
    let mut points = 0u64;
    let mut feasible = 0u64;
    let inv = 1.0 / resolution as f64;
    loop {
        // counts is a composition of `resolution` into n parts
        let used: usize = counts[..n - 1].iter().sum();
        if used <= resolution {
            counts[n - 1] = resolution - used;
            for i in 0..n {
                y[i] = counts[i] as f64 * inv;
            }
            points += 1;
            let payoff: f64 = y.iter().zip(&bx).map(|(a, b)| a * b).sum();
            let dist: f64 = y.iter().zip(xs).map(|(a, b)| (a - b) * (a - b)).sum();
            if (payoff - v).abs() <= tol.eps_p && dist >= tol.delta {
                feasible += 1;
                let by = b.apply(&y);
                let f: f64 = by.iter().zip(&y).map(|(p, yi)| p * yi).sum::<f64>()
                    - by.iter().zip(xs).map(|(p, xi)| p * xi).sum::<f64>();
                best = best.max(f);
            }
        }
        // odometer over the first n-1 coordinates
        let mut k = 0;
        loop {
            if k + 1 >= n {
                let lipschitz = 3.0 * b.max_abs();
                let slack = lipschitz * 2.0 * (n as f64 - 1.0) * inv;
                return Ok(OracleResult {
                    max_value: best,
                    lipschitz,
                    slack,
                    points,
                    feasible_points: feasible,
                });
            }
            counts[k] += 1;
            if counts[..n - 1].iter().sum::<usize>() <= resolution {
                break;
            }
            counts[k] = 0;
            k += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Band {
    Free,
    Lower,
    Upper,
}

struct InvasionProblem {
    n: usize,
    /// Hessian of f: B + B^T.
    hess: DMatrix<f64>,
    /// Linear term of f: -B^T x.
    lin: DVector<f64>,
    /// Bx
    payoff: DVector<f64>,
    x: DVector<f64>,
    v: f64,
    eps_p: f64,
    delta: f64,
}

impl InvasionProblem {
    fn new(b: &InducedMatrix, x: &SimplexVector, v: f64, tol: &ToleranceSet) -> Self {
        let n = b.n();
        let bm = DMatrix::from_fn(n, n, |i, j| b.get(i, j));
        let xv = DVector::from_column_slice(x.as_slice());
        Self {
            n,
            hess: &bm + bm.transpose(),
            lin: -(bm.transpose() * &xv),
            payoff: &bm * &xv,
            x: xv,
            v,
            eps_p: tol.eps_p,
            delta: tol.delta,
        }
    }

    fn objective(&self, y: &DVector<f64>) -> f64 {
        0.5 * y.dot(&(&self.hess * y)) + self.lin.dot(y)
    }

    fn feasible(&self, y: &DVector<f64>) -> bool {
        if y.iter().any(|&yi| yi < -FEAS_SLACK) {
            return false;
        }
        if (y.sum() - 1.0).abs() > 1e-9 {
            return false;
        }
        let p = self.payoff.dot(y);
        if (p - self.v).abs() > self.eps_p + FEAS_SLACK {
            return false;
        }
        (y - &self.x).norm_squared() >= self.delta * (1.0 - 1e-10)
    }

    /// Returns (max value, argmax, any degenerate face).
    fn maximize_by_faces(&self) -> (f64, Option<Vec<f64>>, bool) {
        let n = self.n;
        let mut best = f64::NEG_INFINITY;
        let mut arg: Option<DVector<f64>> = None;
        let mut degenerate = false;
        for mask in 1u32..(1u32 << n) {
            let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            for band in [Band::Free, Band::Lower, Band::Upper] {
                let Some(face) = self.face(&support, band) else {
                    continue;
                };
                let (cands, singular) = self.face_candidates(&face);
                degenerate |= singular;
                for mut y in cands {
                    y.iter_mut().for_each(|yi| {
                        if *yi < 0.0 && *yi > -FEAS_SLACK {
                            *yi = 0.0
                        }
                    });
                    if !self.feasible(&y) {
                        continue;
                    }
                    let f = self.objective(&y);
                    if f > best {
                        best = f;
                        arg = Some(y);
                    }
                }
            }
        }
        (best, arg.map(|y| y.iter().copied().collect()), degenerate)
    }

    /// Affine hull `{ y0 + N z }` of a face, or `None` if it is empty.
    fn face(&self, support: &[usize], band: Band) -> Option<Face> {
        let n = self.n;
        let s = support.len();
        let rows = if band == Band::Free { 1 } else { 2 };
        let mut c = DMatrix::<f64>::zeros(rows, s);
        let mut rhs = DVector::<f64>::zeros(rows);
        for (k, _) in support.iter().enumerate() {
            c[(0, k)] = 1.0;
        }
        rhs[0] = 1.0;
        if band != Band::Free {
            for (k, &i) in support.iter().enumerate() {
                c[(1, k)] = self.payoff[i];
            }
            rhs[1] = match band {
                Band::Lower => self.v - self.eps_p,
                Band::Upper => self.v + self.eps_p,
                Band::Free => unreachable!(),
            };
        }
        // Particular solution and null space from the SVD of the constraint rows.
        let svd = c.clone().try_svd(true, true, f64::EPSILON, MAX_DECOMP_ITERS)?;
        let u = svd.u.as_ref()?;
        let vt = svd.v_t.as_ref()?;
        let smax = svd.singular_values.max();
        let rank_tol = 1e-12 * smax.max(1.0);
        let mut ys = DVector::<f64>::zeros(s);
        let mut rank = 0;
        for (k, &sv) in svd.singular_values.iter().enumerate() {
            if sv > rank_tol {
                rank += 1;
                let coef = u.column(k).dot(&rhs) / sv;
                ys += vt.row(k).transpose() * coef;
            }
        }
        if (&c * &ys - &rhs).norm() > 1e-10 * (1.0 + rhs.norm()) {
            return None;
        }
        if band != Band::Free && rank < 2 {
            // band hyperplane coincides with the simplex plane on this face;
            // the free variant already covers it
            return None;
        }
        // vt is min(rows, s) x s; complete the null space from the full SVD of C^T C.
        let gram = c.transpose() * &c;
        let eig = SymmetricEigen::try_new(gram, f64::EPSILON, MAX_DECOMP_ITERS)?;
        let null_cols: Vec<DVector<f64>> = eig
            .eigenvalues
            .iter()
            .enumerate()
            .filter(|(_, &ev)| ev.abs() <= 1e-12 * smax.max(1.0).powi(2))
            .map(|(k, _)| eig.eigenvectors.column(k).into_owned())
            .collect();
        let mut y0 = DVector::<f64>::zeros(n);
        let mut basis = DMatrix::<f64>::zeros(n, null_cols.len());
        for (k, &i) in support.iter().enumerate() {
            y0[i] = ys[k];
            for (col, nc) in null_cols.iter().enumerate() {
                basis[(i, col)] = nc[k];
            }
        }
        Some(Face { y0, basis })
    }

    /// Stationary points of f on the face's affine hull and on its
    /// intersection with the exclusion sphere.
    fn face_candidates(&self, face: &Face) -> (Vec<DVector<f64>>, bool) {
        let k = face.basis.ncols();
        if k == 0 {
            return (vec![face.y0.clone()], false);
        }
        let nb = &face.basis;
        let hr = nb.transpose() * &self.hess * nb;
        let g = nb.transpose() * (&self.hess * &face.y0 + &self.lin);
        let mut out = Vec::new();
        let mut singular = false;

        let Some(eig) = SymmetricEigen::try_new(hr.clone(), f64::EPSILON, MAX_DECOMP_ITERS) else {
            return (Vec::new(), true);
        };
        let scale = eig.eigenvalues.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
        let eig_tol = 1e-10 * scale;
        if eig.eigenvalues.iter().all(|ev| ev.abs() > eig_tol) {
            let z = -(eig.eigenvectors.clone()
                * DMatrix::from_diagonal(&eig.eigenvalues.map(|ev| 1.0 / ev))
                * eig.eigenvectors.transpose())
                * &g;
            out.push(&face.y0 + nb * z);
        } else {
            singular = true;
            // least-squares stationary point, kept only if it really is stationary
            let pinv = eig.eigenvectors.clone()
                * DMatrix::from_diagonal(&eig.eigenvalues.map(|ev| if ev.abs() > eig_tol { 1.0 / ev } else { 0.0 }))
                * eig.eigenvectors.transpose();
            let z = -(&pinv * &g);
            if (&hr * &z + &g).norm() <= 1e-9 * (1.0 + g.norm()) {
                out.push(&face.y0 + nb * z);
            }
        }

        // Sphere |y - x|^2 = delta restricted to the face: |z - zc|^2 = r^2.
        let d = &self.x - &face.y0;
        let zc = nb.transpose() * &d;
        let off = (&d - nb * &zc).norm_squared();
        let r2 = self.delta - off;
        if r2 > 0.0 {
            // q(w) = 1/2 w'Hr w + bw' w with w = z - zc
            let bw = &hr * &zc + &g;
            for w in sphere_stationary_points(&eig, &bw, r2) {
                out.push(&face.y0 + nb * (&zc + w));
            }
        }
        (out, singular)
    }

    /// Projected-gradient ascent on the best-response face from random
    /// starts; returns the best admissible iterate.
    fn ascent_cross_check(&self, face: &[usize], seed: u64) -> Option<(f64, Vec<f64>)> {
        if face.len() < 2 {
            return None;
        }
        let n = self.n;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best: Option<(f64, DVector<f64>)> = None;
        let step = 1.0 / (self.hess.norm() + 1.0);
        for _ in 0..ASCENT_STARTS {
            let mut y = DVector::<f64>::zeros(n);
            let mut total = 0.0;
            for &j in face {
                let e: f64 = -rng.gen::<f64>().max(1e-300).ln();
                y[j] = e;
                total += e;
            }
            y /= total;
            for _ in 0..ASCENT_ITERS {
                if self.feasible(&y) {
                    let f = self.objective(&y);
                    if best.as_ref().is_none_or(|(bf, _)| f > *bf) {
                        best = Some((f, y.clone()));
                    }
                }
                let grad = &self.hess * &y + &self.lin;
                let mut z: Vec<f64> = face.iter().map(|&j| y[j] + step * grad[j]).collect();
                crate::nlp::project_simplex(&mut z);
                y.fill(0.0);
                for (k, &j) in face.iter().enumerate() {
                    y[j] = z[k];
                }
            }
        }
        best.map(|(f, y)| (f, y.iter().copied().collect()))
    }
}

struct Face {
    y0: DVector<f64>,
    basis: DMatrix<f64>,
}

/// All stationary points of `1/2 w'Hw + b'w` on the sphere `|w|^2 = r2`,
/// given the eigen-decomposition of `H`.
fn sphere_stationary_points(eig: &SymmetricEigen<f64, nalgebra::Dyn>, b: &DVector<f64>, r2: f64) -> Vec<DVector<f64>> {
    let k = eig.eigenvalues.len();
    let q = &eig.eigenvectors;
    let bp = q.transpose() * b;
    let lam = &eig.eigenvalues;
    let scale = lam.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    let same = |a: f64, c: f64| (a - c).abs() <= 1e-10 * scale;
    let bnorm = bp.norm();
    let weight_tol = 1e-14 * (1.0 + bnorm);

    // Group eigenvalues; a group is a pole when its weight is non-zero.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &c| lam[a].total_cmp(&lam[c]));
    let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
    for &i in &order {
        match groups.last_mut() {
            Some((l, members)) if same(*l, lam[i]) => members.push(i),
            _ => groups.push((lam[i], vec![i])),
        }
    }
    let poles: Vec<(f64, f64)> = groups
        .iter()
        .filter_map(|(l, members)| {
            let w: f64 = members.iter().map(|&i| bp[i] * bp[i]).sum();
            (w.sqrt() > weight_tol).then_some((*l, w))
        })
        .collect();

    let phi = |mu: f64| poles.iter().map(|(p, w)| w / ((p - mu) * (p - mu))).sum::<f64>();
    let dphi = |mu: f64| poles.iter().map(|(p, w)| 2.0 * w / ((p - mu).powi(3))).sum::<f64>();
    let point = |mu: f64| -> DVector<f64> {
        let mut coef = DVector::<f64>::zeros(k);
        for i in 0..k {
            if bp[i].abs() > 0.0 && !same(lam[i], mu) {
                coef[i] = -bp[i] / (lam[i] - mu);
            }
        }
        q * coef
    };

    let mut out = Vec::new();
    let mut mus = Vec::new();
    if !poles.is_empty() {
        let total_w: f64 = poles.iter().map(|(_, w)| w).sum();
        let reach = (total_w / r2).sqrt();
        // left of the first pole: phi increases from 0 to +inf
        let p0 = poles[0].0;
        mus.push(bisect(|mu| phi(mu) - r2, p0 - reach - 1.0, p0, true));
        let pl = poles[poles.len() - 1].0;
        mus.push(bisect(|mu| phi(mu) - r2, pl, pl + reach + 1.0, false));
        for win in poles.windows(2) {
            let (a, c) = (win[0].0, win[1].0);
            // phi is convex between poles: locate its minimum, then both roots
            let mstar = bisect(dphi, a, c, true);
            let pmin = phi(mstar);
            if pmin < r2 {
                mus.push(bisect(|mu| phi(mu) - r2, a, mstar, false));
                mus.push(bisect(|mu| phi(mu) - r2, mstar, c, true));
            } else if (pmin - r2).abs() <= 1e-12 * r2 {
                mus.push(mstar);
            }
        }
    }
    for mu in mus {
        if mu.is_finite() {
            out.push(point(mu));
        }
    }
    // hard case: mu equal to an eigenvalue whose eigenspace carries no weight
    for (l, members) in &groups {
        let w: f64 = members.iter().map(|&i| bp[i] * bp[i]).sum();
        if w.sqrt() > weight_tol {
            continue;
        }
        let base = point(*l);
        let rest = r2 - base.norm_squared();
        if rest < 0.0 {
            continue;
        }
        let t = rest.sqrt();
        for &i in members {
            let e = q.column(i).into_owned();
            out.push(&base + &e * t);
            out.push(&base - &e * t);
        }
    }
    out
}

/// Bisection for a monotone function on `(lo, hi)`; `increasing` gives the
/// direction. Endpoints may be poles.
fn bisect(f: impl Fn(f64) -> f64, lo: f64, hi: f64, increasing: bool) -> f64 {
    let (mut a, mut c) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (a + c);
        if mid <= a || mid >= c {
            break;
        }
        let val = f(mid);
        if !val.is_finite() {
            // only happens exactly at a pole
            if increasing {
                c = mid
            } else {
                a = mid
            }
            continue;
        }
        if (val > 0.0) == increasing {
            c = mid;
        } else {
            a = mid;
        }
    }
    0.5 * (a + c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol() -> ToleranceSet {
        ToleranceSet::default()
    }

    fn hawk_dove() -> InducedMatrix {
        InducedMatrix::from_rows(&[vec![-1.0, 2.0], vec![0.0, 1.0]]).unwrap()
    }

    fn rps() -> InducedMatrix {
        let t = 2.0 / 3.0;
        InducedMatrix::from_rows(&[vec![t, 0.0, 1.0], vec![1.0, t, 0.0], vec![0.0, 1.0, t]]).unwrap()
    }

    fn half() -> SimplexVector {
        SimplexVector::uniform(2)
    }

    #[test]
    fn hawk_dove_interior_is_nash() {
        let c = is_symmetric_nash(&hawk_dove(), &half(), &tol()).unwrap();
        assert!(c.is_nash);
        assert!((c.value - 0.5).abs() < 1e-15);
        let c = is_symmetric_nash(&hawk_dove(), &SimplexVector::vertex(2, 0), &tol()).unwrap();
        assert!(!c.is_nash);
    }

    #[test]
    fn rps_uniform_is_nash() {
        let c = is_symmetric_nash(&rps(), &SimplexVector::uniform(3), &tol()).unwrap();
        assert!(c.is_nash);
        assert!((c.value - 5.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn best_response_sets() {
        assert_eq!(best_response_set(&hawk_dove(), &half(), &tol()).unwrap(), vec![0, 1]);
        let b = InducedMatrix::from_rows(&[vec![2.0, 3.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(best_response_set(&b, &SimplexVector::vertex(2, 0), &tol()).unwrap(), vec![0]);
        assert_eq!(
            best_response_set(&rps(), &SimplexVector::uniform(3), &tol()).unwrap(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn hawk_dove_interior_is_ess() {
        let v = is_ess(&hawk_dove(), &half(), &tol()).unwrap();
        assert!(v.is_ess, "{v:?}");
        // f along the simplex is -2 t^2 with t = y_2 - 1/2, and |y-x|^2 = 2 t^2 >= delta
        assert!((v.invasion_value + tol().delta).abs() < 1e-12, "{}", v.invasion_value);
    }

    #[test]
    fn rps_uniform_is_not_ess() {
        let v = is_ess(&rps(), &SimplexVector::uniform(3), &tol()).unwrap();
        assert!(v.is_nash);
        assert!(!v.is_ess);
        // vertices give (y-x)B(y-x) = 1/6 |e_i - x|^2 = 1/9
        assert!((v.invasion_value - 1.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn strict_pure_nash_is_ess() {
        let b = InducedMatrix::from_rows(&[vec![2.0, 3.0], vec![0.0, 1.0]]).unwrap();
        let v = is_ess(&b, &SimplexVector::vertex(2, 0), &tol()).unwrap();
        assert!(v.is_ess);
        assert_eq!(v.invasion_value, f64::NEG_INFINITY);
    }

    #[test]
    fn not_nash_short_circuits() {
        let v = is_ess(&hawk_dove(), &SimplexVector::vertex(2, 0), &tol()).unwrap();
        assert!(!v.is_nash && !v.is_ess);
        assert_eq!(v.diagnostics, vec![EssDiagnostic::NotNash]);
    }

    #[test]
    fn single_phenotype_cannot_be_invaded() {
        let b = InducedMatrix::from_rows(&[vec![3.0]]).unwrap();
        let x = SimplexVector::uniform(1);
        let v = is_ess(&b, &x, &tol()).unwrap();
        assert!(v.is_ess);
        let o = invasion_oracle(&b, &x, 10, &tol(), DEFAULT_GRID_BUDGET).unwrap();
        assert_eq!(o.max_value, f64::NEG_INFINITY);
    }

    #[test]
    fn oracle_hawk_dove_and_rps() {
        let o = invasion_oracle(&hawk_dove(), &half(), 100, &tol(), DEFAULT_GRID_BUDGET).unwrap();
        assert!(o.max_value <= 0.0 + o.slack);
        assert!(o.max_value < 0.0);
        let o = invasion_oracle(&rps(), &SimplexVector::uniform(3), 60, &tol(), DEFAULT_GRID_BUDGET).unwrap();
        assert!(o.max_value > tol().eps_p);
    }

    #[test]
    fn oracle_refuses_large_lattices() {
        let b = InducedMatrix::from_rows(&vec![vec![0.0; 6]; 6]).unwrap();
        let r = invasion_oracle(&b, &SimplexVector::uniform(6), 1000, &tol(), DEFAULT_GRID_BUDGET);
        assert!(matches!(r, Err(Error::Budget(_))));
    }

    #[test]
    fn lattice_size_counts_compositions() {
        assert_eq!(lattice_size(2, 10), 11.0);
        assert_eq!(lattice_size(3, 2), 6.0);
        assert_eq!(lattice_size(1, 7), 1.0);
    }

    #[test]
    fn sphere_points_lie_on_sphere() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, -1.0]);
        let b = DVector::from_column_slice(&[0.3, -0.2]);
        let eig = SymmetricEigen::new(h.clone());
        let pts = sphere_stationary_points(&eig, &b, 0.04);
        assert!(!pts.is_empty());
        for w in &pts {
            assert!((w.norm_squared() - 0.04).abs() < 1e-10);
            // gradient parallel to w
            let grad = &h * w + &b;
            let cross = grad[0] * w[1] - grad[1] * w[0];
            assert!(cross.abs() < 1e-9, "{cross}");
        }
    }

    #[test]
    fn sphere_hard_case_zero_linear_term() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        let b = DVector::zeros(2);
        let eig = SymmetricEigen::new(h);
        let pts = sphere_stationary_points(&eig, &b, 1.0);
        assert_eq!(pts.len(), 4);
    }
}
