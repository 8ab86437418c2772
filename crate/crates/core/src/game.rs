//! Discrete Stackelberg evolutionary games.
//!
//! A leader with `m` pure strategies commits to a mixed strategy `sigma`; a
//! symmetric follower population over `n` phenotypes then plays the two-player
//! symmetric game whose payoff matrix is the `sigma`-weighted average of the
//! follower payoff slices.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Negative weights down to this magnitude are treated as round-off.
pub const SIMPLEX_CLAMP: f64 = 1e-12;

/// Numerical tolerances used by the discrete and continuous algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToleranceSet {
    /// Minimum mass of every strategy in a candidate support.
    pub eps_s: f64,
    /// Payoff tolerance.
    pub eps_p: f64,
    /// Squared distance a mutant must keep from the resident.
    pub delta: f64,
    /// Invasion fitness accepted by the continuous certification.
    pub eps_inv: f64,
}

impl Default for ToleranceSet {
    fn default() -> Self {
        Self {
            eps_s: 1e-4,
            eps_p: 1e-5,
            delta: 1e-2,
            eps_inv: 1e-3,
        }
    }
}

impl ToleranceSet {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eps_s", self.eps_s),
            ("eps_p", self.eps_p),
            ("delta", self.delta),
            ("eps_inv", self.eps_inv),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("tolerance {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// A probability vector. Construction clamps round-off negatives and
/// renormalizes, so the weights always sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexVector {
    weights: Vec<f64>,
}

impl SimplexVector {
    pub fn new(mut weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Simplex("empty weight vector".into()));
        }
        for w in weights.iter_mut() {
            if !w.is_finite() {
                return Err(Error::Simplex(format!("non-finite weight {w}")));
            }
            if *w < 0.0 {
                if *w < -SIMPLEX_CLAMP {
                    return Err(Error::Simplex(format!("negative weight {w}")));
                }
                *w = 0.0;
            }
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Simplex("weights sum to zero".into()));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { weights })
    }

    /// Wraps weights the caller has already clamped and normalized.
    pub(crate) fn from_normalized(weights: Vec<f64>) -> Self {
        debug_assert!(weights.iter().all(|w| *w >= 0.0));
        Self { weights }
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform simplex vector needs n >= 1");
        Self {
            weights: vec![1.0 / n as f64; n],
        }
    }

    /// The pure strategy `e_i`.
    pub fn vertex(n: usize, i: usize) -> Self {
        assert!(i < n, "vertex index {i} out of range for n = {n}");
        let mut weights = vec![0.0; n];
        weights[i] = 1.0;
        Self { weights }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.weights
    }

    /// Indices whose weight exceeds `threshold`.
    pub fn support(&self, threshold: f64) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.weights[i] > threshold).collect()
    }

    pub fn distance_sq(&self, other: &SimplexVector) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

impl std::ops::Index<usize> for SimplexVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.weights[i]
    }
}

impl TryFrom<Vec<f64>> for SimplexVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SimplexVector> for Vec<f64> {
    fn from(s: SimplexVector) -> Self {
        s.weights
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Fatal,
    Note,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub severity: Severity,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn fatal(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Fatal)
    }

    pub fn notes(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Note)
    }

    pub fn is_ok(&self) -> bool {
        self.fatal().next().is_none()
    }

    fn push(&mut self, severity: Severity, message: String) {
        self.findings.push(Finding { severity, message });
    }
}

/// Checks raw payoff arrays for shape and finiteness problems.
///
/// Slices that differ from their transpose only produce a note: a symmetric
/// two-player game needs a single payoff matrix, not a symmetric one
/// (Hawk-Dove is the usual example).
pub fn validate_payoffs(leader: &[Vec<f64>], follower: &[Vec<Vec<f64>>]) -> ValidationReport {
    let mut report = ValidationReport::default();
    let m = leader.len();
    if m == 0 {
        report.push(Severity::Fatal, "leader payoff matrix has no rows".into());
        return report;
    }
    let n = leader[0].len();
    if n == 0 {
        report.push(Severity::Fatal, "leader payoff matrix has no columns".into());
        return report;
    }
    for (l, row) in leader.iter().enumerate() {
        if row.len() != n {
            report.push(
                Severity::Fatal,
                format!("leader row {l} has {} entries, expected {n}", row.len()),
            );
        }
        if let Some(v) = row.iter().find(|v| !v.is_finite()) {
            report.push(Severity::Fatal, format!("leader row {l} has non-finite entry {v}"));
        }
    }
    if follower.len() != m {
        report.push(
            Severity::Fatal,
            format!("follower tensor has {} slices, expected m = {m}", follower.len()),
        );
    }
    for (l, slice) in follower.iter().enumerate() {
        if slice.len() != n || slice.iter().any(|r| r.len() != n) {
            report.push(Severity::Fatal, format!("follower slice {l} is not {n}x{n}"));
            continue;
        }
        if slice.iter().flatten().any(|v| !v.is_finite()) {
            report.push(Severity::Fatal, format!("follower slice {l} has a non-finite entry"));
            continue;
        }
        let asymmetric = (0..n).any(|i| (0..i).any(|j| slice[i][j] != slice[j][i]));
        if asymmetric {
            report.push(
                Severity::Note,
                format!("follower slice {l} differs from its transpose"),
            );
        }
    }
    report
}

/// Leader payoff matrix `A_L` (m x n) and follower payoff tensor `A_F`
/// (m x n x n), where `A_F[l][i][j]` is the fitness of phenotype `i` against
/// phenotype `j` under leader action `l`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteSEG {
    leader_payoffs: Vec<Vec<f64>>,
    follower_payoffs: Vec<Vec<Vec<f64>>>,
}

impl DiscreteSEG {
    pub fn new(leader_payoffs: Vec<Vec<f64>>, follower_payoffs: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let report = validate_payoffs(&leader_payoffs, &follower_payoffs);
        if let Some(f) = report.fatal().next() {
            return Err(Error::InvalidGame(f.message.clone()));
        }
        Ok(Self {
            leader_payoffs,
            follower_payoffs,
        })
    }

    /// Game in which the leader's action does not matter: every slice is `b`.
    pub fn uniform_slices(leader_payoffs: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> Result<Self> {
        let m = leader_payoffs.len();
        Self::new(leader_payoffs, vec![b; m])
    }

    pub fn m(&self) -> usize {
        self.leader_payoffs.len()
    }

    pub fn n(&self) -> usize {
        self.leader_payoffs[0].len()
    }

    pub fn leader_payoffs(&self) -> &[Vec<f64>] {
        &self.leader_payoffs
    }

    pub fn follower_payoffs(&self) -> &[Vec<Vec<f64>>] {
        &self.follower_payoffs
    }

    pub fn leader(&self, l: usize, i: usize) -> f64 {
        self.leader_payoffs[l][i]
    }

    pub fn follower(&self, l: usize, i: usize, j: usize) -> f64 {
        self.follower_payoffs[l][i][j]
    }
}

pub fn validate_game(game: &DiscreteSEG) -> ValidationReport {
    validate_payoffs(&game.leader_payoffs, &game.follower_payoffs)
}

/// The follower payoff matrix `B` induced by a leader strategy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InducedMatrix {
    n: usize,
    entries: Vec<f64>,
    source_sigma: Option<SimplexVector>,
}

impl InducedMatrix {
    /// Wraps a plain symmetric-game payoff matrix (no leader involved).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidGame("empty payoff matrix".into()));
        }
        let mut entries = Vec::with_capacity(n * n);
        for row in rows {
            check_dim(n, row.len())?;
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidGame("non-finite payoff".into()));
            }
            entries.extend_from_slice(row);
        }
        Ok(Self {
            n,
            entries,
            source_sigma: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn source_sigma(&self) -> Option<&SimplexVector> {
        self.source_sigma.as_ref()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    /// `B x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(x).map(|(b, xj)| b * xj).sum())
            .collect()
    }

    /// `y^T B x` for raw vectors.
    pub fn bilinear(&self, y: &[f64], x: &[f64]) -> f64 {
        (0..self.n)
            .map(|i| y[i] * self.row(i).iter().zip(x).map(|(b, xj)| b * xj).sum::<f64>())
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// `B(i, j) = sum_l sigma_l A_F(l, i, j)`.
pub fn induce_matrix(sigma: &SimplexVector, game: &DiscreteSEG) -> Result<InducedMatrix> {
    check_dim(game.m(), sigma.dim())?;
    let n = game.n();
    let mut entries = vec![0.0; n * n];
    for (l, slice) in game.follower_payoffs.iter().enumerate() {
        let s = sigma[l];
        if s == 0.0 {
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                entries[i * n + j] += s * slice[i][j];
            }
        }
    }
    Ok(InducedMatrix {
        n,
        entries,
        source_sigma: Some(sigma.clone()),
    })
}

/// `U_L(sigma, x) = sum_l sum_i sigma_l x_i A_L(l, i)`.
pub fn leader_payoff(sigma: &SimplexVector, x: &SimplexVector, game: &DiscreteSEG) -> Result<f64> {
    check_dim(game.m(), sigma.dim())?;
    check_dim(game.n(), x.dim())?;
    Ok(leader_payoff_raw(sigma.as_slice(), x.as_slice(), game))
}

pub(crate) fn leader_payoff_raw(sigma: &[f64], x: &[f64], game: &DiscreteSEG) -> f64 {
    game.leader_payoffs
        .iter()
        .zip(sigma)
        .map(|(row, s)| s * row.iter().zip(x).map(|(a, xi)| a * xi).sum::<f64>())
        .sum()
}

/// Expected fitness `y . (B x)` of a `y`-strategist in an `x` population.
pub fn follower_payoff(b: &InducedMatrix, y: &SimplexVector, x: &SimplexVector) -> Result<f64> {
    check_dim(b.n(), y.dim())?;
    check_dim(b.n(), x.dim())?;
    Ok(b.bilinear(y.as_slice(), x.as_slice()))
}
