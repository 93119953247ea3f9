//! Maximum-entropy equilibrium over accessible microstate sets.
//!
//! Given free mean targets, the equilibrium distribution is the entropy
//! maximizer subject to normalization and those means. It has exponential
//! form p*(m) = exp(Σ λ_i F_i(m) / k) / Z, where the multipliers satisfy
//! ∂(k ln Z)/∂λ_i = target_i. [`solve_multipliers`] finds the multipliers by
//! damped Newton on the convex potential k·ln Z(λ) − Σ λ_i·target_i, whose
//! gradient is the mean residual and whose Hessian is the covariance of the
//! free functions divided by k.
//!
//! All exponent sums are max-shifted (log-sum-exp); probabilities are kept
//! as log-probabilities internally and exponentiated on demand.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::microstate::AccessibleSet;
use crate::reduce;

/// Tolerance for distribution normalization checks.
pub const NORMALIZATION_TOL: f64 = 1e-12;
/// Relative tolerance for the Legendre identity S = k lnZ − Σ λ·target.
pub const LEGENDRE_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum MaxentError {
    #[error("entropy constant must be positive, got {0}")]
    NonpositiveConstant(f64),
    #[error("log base must exceed 1, got {0}")]
    BadBase(f64),
    #[error("unknown function label `{0}`")]
    UnknownLabel(String),
    #[error("probability vector of length {got} does not match support cardinality {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("probabilities sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("negative probability {0}")]
    NegativeProbability(f64),
    #[error("microstate has zero probability, surprisal undefined")]
    ZeroProbability,
    #[error("multiplier for `{0}` is not finite")]
    NonFiniteMultiplier(String),
    #[error(
        "target {target} for `{label}` is outside the attainable open range ({lo}, {hi})"
    )]
    TargetOutOfRange {
        label: String,
        target: f64,
        lo: f64,
        hi: f64,
    },
    #[error("free functions are affinely dependent on the accessible set: {0}")]
    SingularCovariance(String),
    #[error("no convergence after {iterations} iterations; worst residual {worst_residual}")]
    NoConvergence {
        iterations: usize,
        worst_residual: f64,
    },
    #[error("temperature undefined: energy multiplier is zero")]
    UndefinedTemperature,
    #[error("`{0}` is not among the free labels of this solution")]
    MissingFreeLabel(String),
}

/// Entropy unit constant k, equivalently an information base b = exp(1/k).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfoConstant {
    k: f64,
}

impl InfoConstant {
    pub fn new(k: f64) -> Result<Self, MaxentError> {
        if !(k > 0.0) {
            return Err(MaxentError::NonpositiveConstant(k));
        }
        Ok(Self { k })
    }

    /// Natural units, k = 1.
    pub fn natural() -> Self {
        Self { k: 1.0 }
    }

    /// Bits: base-2 questions, k = 1/ln 2.
    pub fn bits() -> Self {
        Self {
            k: 1.0 / std::f64::consts::LN_2,
        }
    }

    /// 2019 SI Boltzmann constant, J·K⁻¹.
    pub fn boltzmann() -> Self {
        Self { k: 1.380649e-23 }
    }

    pub fn from_base(b: f64) -> Result<Self, MaxentError> {
        if !(b > 1.0) {
            return Err(MaxentError::BadBase(b));
        }
        Ok(Self { k: 1.0 / b.ln() })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn base(&self) -> f64 {
        (1.0 / self.k).exp()
    }
}

/// Probability distribution over an accessible set, stored in log space.
#[derive(Clone)]
pub struct Distribution {
    support: Arc<AccessibleSet>,
    log_probs: Vec<f64>,
}

impl std::fmt::Debug for Distribution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Distribution")
            .field("cardinality", &self.log_probs.len())
            .finish()
    }
}

impl Distribution {
    pub fn uniform(support: Arc<AccessibleSet>) -> Self {
        let n = support.cardinality();
        let lp = -(n as f64).ln();
        Self {
            support,
            log_probs: vec![lp; n],
        }
    }

    /// Builds from explicit probabilities; they must already be normalized
    /// within `NORMALIZATION_TOL`.
    pub fn from_probs(support: Arc<AccessibleSet>, probs: &[f64]) -> Result<Self, MaxentError> {
        if probs.len() != support.cardinality() {
            return Err(MaxentError::LengthMismatch {
                got: probs.len(),
                expected: support.cardinality(),
            });
        }
        let mut total = 0.0;
        for &p in probs {
            if p < 0.0 {
                return Err(MaxentError::NegativeProbability(p));
            }
            total += p;
        }
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(MaxentError::NotNormalized(total));
        }
        Ok(Self {
            support,
            log_probs: probs.iter().map(|&p| p.ln()).collect(),
        })
    }

    /// Builds from unnormalized log weights; normalization happens in log
    /// space with a max shift, so arbitrarily large exponents are safe.
    pub fn from_log_weights(support: Arc<AccessibleSet>, log_weights: &[f64]) -> Self {
        debug_assert_eq!(log_weights.len(), support.cardinality());
        let shift = reduce::max_by_value(log_weights.len(), |i| log_weights[i]);
        let total = reduce::pairwise_sum(log_weights.len(), |i| (log_weights[i] - shift).exp());
        let log_z = shift + total.ln();
        Self {
            support,
            log_probs: log_weights.iter().map(|&w| w - log_z).collect(),
        }
    }

    pub fn support(&self) -> &Arc<AccessibleSet> {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn log_prob(&self, i: usize) -> f64 {
        self.log_probs[i]
    }

    pub fn prob(&self, i: usize) -> f64 {
        self.log_probs[i].exp()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|&lp| lp.exp()).collect()
    }

    /// Expectation of the given per-state values under this distribution.
    pub fn expectation(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.log_probs.len());
        reduce::pairwise_sum(values.len(), |i| self.log_probs[i].exp() * values[i])
    }

    /// Total variation distance to another distribution on the same support.
    pub fn total_variation(&self, other: &Distribution) -> f64 {
        0.5 * reduce::pairwise_sum(self.len(), |i| (self.prob(i) - other.prob(i)).abs())
    }
}

/// Surprisal k·ln(1/p(m)) of microstate index `m`.
pub fn surprisal(p: &Distribution, m: usize, k: InfoConstant) -> Result<f64, MaxentError> {
    let lp = p.log_prob(m);
    if lp == f64::NEG_INFINITY {
        return Err(MaxentError::ZeroProbability);
    }
    Ok(-k.k() * lp)
}

/// Statistical entropy −k Σ p ln p, with the 0·ln 0 := 0 convention.
pub fn statistical_entropy(p: &Distribution, k: InfoConstant) -> f64 {
    -k.k() * reduce::pairwise_sum(p.len(), |i| {
        let lp = p.log_prob(i);
        if lp == f64::NEG_INFINITY {
            0.0
        } else {
            lp.exp() * lp
        }
    })
}

/// Resolves multiplier labels against the set's cached columns.
fn resolve_lambdas<'a>(
    set: &'a AccessibleSet,
    lambdas: &BTreeMap<String, f64>,
) -> Result<Vec<(&'a [f64], f64)>, MaxentError> {
    let mut out = Vec::with_capacity(lambdas.len());
    for (label, &lam) in lambdas {
        if !lam.is_finite() {
            return Err(MaxentError::NonFiniteMultiplier(label.clone()));
        }
        let col = set
            .values(label)
            .map_err(|_| MaxentError::UnknownLabel(label.clone()))?;
        out.push((col, lam));
    }
    Ok(out)
}

fn log_weights(set: &AccessibleSet, terms: &[(&[f64], f64)], k: f64) -> Vec<f64> {
    reduce::map_collect(set.cardinality(), |i| {
        terms.iter().map(|(col, lam)| lam * col[i]).sum::<f64>() / k
    })
}

/// k·ln Z(λ) computed with a max shift so no intermediate overflows.
pub fn log_partition(
    set: &Arc<AccessibleSet>,
    lambdas: &BTreeMap<String, f64>,
    k: InfoConstant,
) -> Result<f64, MaxentError> {
    let terms = resolve_lambdas(set, lambdas)?;
    let lw = log_weights(set, &terms, k.k());
    let shift = reduce::max_by_value(lw.len(), |i| lw[i]);
    let total = reduce::pairwise_sum(lw.len(), |i| (lw[i] - shift).exp());
    Ok(k.k() * (shift + total.ln()))
}

/// The exponential-family distribution p*(m) ∝ exp(Σ λ_i F_i(m) / k).
pub fn boltzmann_distribution(
    set: &Arc<AccessibleSet>,
    lambdas: &BTreeMap<String, f64>,
    k: InfoConstant,
) -> Result<Distribution, MaxentError> {
    let terms = resolve_lambdas(set, lambdas)?;
    let lw = log_weights(set, &terms, k.k());
    Ok(Distribution::from_log_weights(Arc::clone(set), &lw))
}

/// Options for the multiplier solve.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Residual tolerance, relative to max(1, |target|).
    pub tol: f64,
    pub max_iter: usize,
    /// Initial multipliers (labels not present start at zero).
    pub warm_start: Option<BTreeMap<String, f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            warm_start: None,
        }
    }
}

/// Converged equilibrium: multipliers, partition value, distribution, and
/// the thermodynamic entropy.
#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    pub lambdas: BTreeMap<String, f64>,
    /// k·ln Z at the solution.
    pub log_partition: f64,
    pub distribution: Distribution,
    /// Thermodynamic entropy S = k lnZ − Σ λ·target.
    pub entropy: f64,
    pub targets: BTreeMap<String, f64>,
    pub residuals: BTreeMap<String, f64>,
    pub k: InfoConstant,
    pub iterations: usize,
    /// Objective value k lnZ − Σ λ·target per accepted iterate (damped
    /// Newton is monotone on it).
    pub objective_trace: Vec<f64>,
}

/// Serializable view of a solution for export.
#[derive(Debug, Serialize)]
pub struct SolutionDocument {
    pub omega: usize,
    pub lambdas: BTreeMap<String, f64>,
    pub log_partition: f64,
    pub entropy: f64,
    pub targets: BTreeMap<String, f64>,
    pub residuals: BTreeMap<String, f64>,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<f64>>,
}

impl EquilibriumSolution {
    pub fn document(&self, include_probabilities: bool) -> SolutionDocument {
        SolutionDocument {
            omega: self.distribution.len(),
            lambdas: self.lambdas.clone(),
            log_partition: self.log_partition,
            entropy: self.entropy,
            targets: self.targets.clone(),
            residuals: self.residuals.clone(),
            iterations: self.iterations,
            probabilities: include_probabilities.then(|| self.distribution.probs()),
        }
    }
}

struct ActiveProblem<'a> {
    set: &'a Arc<AccessibleSet>,
    /// Free labels with non-constant values, in BTreeMap order.
    labels: Vec<String>,
    columns: Vec<&'a [f64]>,
    targets: Vec<f64>,
    k: f64,
}

impl<'a> ActiveProblem<'a> {
    fn log_weights(&self, lambda: &DVector<f64>) -> Vec<f64> {
        reduce::map_collect(self.set.cardinality(), |i| {
            let mut acc = 0.0;
            for (col, lam) in self.columns.iter().zip(lambda.iter()) {
                acc += lam * col[i];
            }
            acc / self.k
        })
    }

    /// (k lnZ, probs) at λ.
    fn partition(&self, lambda: &DVector<f64>) -> (f64, Vec<f64>) {
        let lw = self.log_weights(lambda);
        let shift = reduce::max_by_value(lw.len(), |i| lw[i]);
        let total = reduce::pairwise_sum(lw.len(), |i| (lw[i] - shift).exp());
        let log_z = shift + total.ln();
        let probs = reduce::map_collect(lw.len(), |i| (lw[i] - log_z).exp());
        (self.k * log_z, probs)
    }

    fn objective(&self, lambda: &DVector<f64>) -> f64 {
        let (kl, _) = self.partition(lambda);
        kl - lambda
            .iter()
            .zip(&self.targets)
            .map(|(l, t)| l * t)
            .sum::<f64>()
    }

    fn means(&self, probs: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.columns.len(),
            self.columns
                .iter()
                .map(|col| reduce::pairwise_sum(col.len(), |i| probs[i] * col[i])),
        )
    }

    /// Covariance matrix of the free functions under `probs`, centered on
    /// the provided means for stability.
    fn covariance(&self, probs: &[f64], means: &DVector<f64>) -> DMatrix<f64> {
        let d = self.columns.len();
        let mut cov = DMatrix::zeros(d, d);
        for a in 0..d {
            for b in a..d {
                let (ca, cb) = (self.columns[a], self.columns[b]);
                let (ma, mb) = (means[a], means[b]);
                let v = reduce::pairwise_sum(probs.len(), |i| {
                    probs[i] * (ca[i] - ma) * (cb[i] - mb)
                });
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        cov
    }

    fn converged(&self, means: &DVector<f64>, tol: f64) -> bool {
        means
            .iter()
            .zip(&self.targets)
            .all(|(m, t)| (m - t).abs() <= tol * t.abs().max(1.0))
    }

    fn worst_residual(&self, means: &DVector<f64>) -> f64 {
        means
            .iter()
            .zip(&self.targets)
            .map(|(m, t)| (m - t).abs())
            .fold(0.0, f64::max)
    }

    /// Reports an affine dependence among the active columns if one exists
    /// (detected on the raw values, independent of any distribution).
    fn affine_dependence(&self) -> Option<String> {
        let n = self.set.cardinality();
        let d = self.columns.len();
        if d < 2 || n < 2 {
            return None;
        }
        // Center columns under the uniform distribution and inspect the
        // Gram spectrum.
        let mut centered = DMatrix::zeros(n, d);
        for (j, col) in self.columns.iter().enumerate() {
            let mean = col.iter().sum::<f64>() / n as f64;
            for i in 0..n {
                centered[(i, j)] = col[i] - mean;
            }
        }
        let gram = centered.transpose() * &centered;
        let eig = gram.symmetric_eigen();
        let max_ev = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let (min_idx, min_ev) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &v)| {
                if v < acc.1 {
                    (i, v)
                } else {
                    acc
                }
            });
        if min_ev <= 1e-12 * max_ev.max(1.0) {
            let null = eig.eigenvectors.column(min_idx);
            let combo: Vec<String> = self
                .labels
                .iter()
                .zip(null.iter())
                .map(|(l, c)| format!("{c:+.3}·{l}"))
                .collect();
            Some(format!("{} ≈ const", combo.join(" ")))
        } else {
            None
        }
    }

    /// One sweep of coordinate-wise bisection: for each coordinate, the mean
    /// is monotone increasing in its own multiplier, so a sign-bracketed
    /// bisection always lands.
    fn bisection_sweep(&self, lambda: &mut DVector<f64>, tol: f64) {
        for j in 0..self.columns.len() {
            let target = self.targets[j];
            let residual = |lam_j: f64, lambda: &DVector<f64>| -> f64 {
                let mut trial = lambda.clone();
                trial[j] = lam_j;
                let (_, probs) = self.partition(&trial);
                reduce::pairwise_sum(probs.len(), |i| probs[i] * self.columns[j][i]) - target
            };
            let mut lo = lambda[j];
            let mut hi = lambda[j];
            let r0 = residual(lambda[j], lambda);
            if r0.abs() <= tol * target.abs().max(1.0) {
                continue;
            }
            let mut step = 1.0_f64.max(lambda[j].abs());
            if r0 > 0.0 {
                // mean too high: decrease the multiplier
                while residual(lo, lambda) > 0.0 {
                    lo -= step;
                    step *= 2.0;
                    if step > 1e8 {
                        return;
                    }
                }
            } else {
                while residual(hi, lambda) < 0.0 {
                    hi += step;
                    step *= 2.0;
                    if step > 1e8 {
                        return;
                    }
                }
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if residual(mid, lambda) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if (hi - lo).abs() <= 1e-15 * (1.0 + mid.abs()) {
                    break;
                }
            }
            lambda[j] = 0.5 * (lo + hi);
        }
    }
}

/// Solves for multipliers hitting the free mean targets.
///
/// Preconditions: each target lies strictly inside the open range of its
/// function on the set; a function constant on the set must have its target
/// equal to that constant (its multiplier is immaterial and reported as 0).
pub fn solve_multipliers(
    set: &Arc<AccessibleSet>,
    targets: &BTreeMap<String, f64>,
    k: InfoConstant,
    opts: &SolverOptions,
) -> Result<EquilibriumSolution, MaxentError> {
    let mut active_labels = Vec::new();
    let mut columns = Vec::new();
    let mut active_targets = Vec::new();
    let mut constant_labels = Vec::new();

    for (label, &target) in targets {
        let col = set
            .values(label)
            .map_err(|_| MaxentError::UnknownLabel(label.clone()))?;
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            if (target - lo).abs() > 1e-12 * lo.abs().max(1.0) {
                return Err(MaxentError::TargetOutOfRange {
                    label: label.clone(),
                    target,
                    lo,
                    hi,
                });
            }
            constant_labels.push(label.clone());
            continue;
        }
        if !(target > lo && target < hi) {
            return Err(MaxentError::TargetOutOfRange {
                label: label.clone(),
                target,
                lo,
                hi,
            });
        }
        active_labels.push(label.clone());
        columns.push(col);
        active_targets.push(target);
    }

    let problem = ActiveProblem {
        set,
        labels: active_labels,
        columns,
        targets: active_targets,
        k: k.k(),
    };

    let d = problem.columns.len();
    let mut lambda = DVector::zeros(d);
    if let Some(warm) = &opts.warm_start {
        for (j, label) in problem.labels.iter().enumerate() {
            if let Some(&w) = warm.get(label) {
                if w.is_finite() {
                    lambda[j] = w;
                }
            }
        }
    }

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut obj = problem.objective(&lambda);
    trace.push(obj);

    let mut means = {
        let (_, probs) = problem.partition(&lambda);
        problem.means(&probs)
    };

    while iterations < opts.max_iter && d > 0 {
        if problem.converged(&means, opts.tol) {
            break;
        }
        iterations += 1;
        let (_, probs) = problem.partition(&lambda);
        means = problem.means(&probs);
        if problem.converged(&means, opts.tol) {
            break;
        }
        let grad = &means - DVector::from_column_slice(&problem.targets);
        let hess = problem.covariance(&probs, &means) / k.k();

        let newton_dir = hess.clone().cholesky().map(|ch| ch.solve(&-&grad));
        let dir = match newton_dir {
            Some(dir) => dir,
            None => {
                if let Some(diag) = problem.affine_dependence() {
                    return Err(MaxentError::SingularCovariance(diag));
                }
                // Numerically singular without true dependence; fall back to
                // coordinate-wise bisection for this round.
                problem.bisection_sweep(&mut lambda, opts.tol);
                obj = problem.objective(&lambda);
                trace.push(obj);
                let (_, probs) = problem.partition(&lambda);
                means = problem.means(&probs);
                continue;
            }
        };

        // Armijo backtracking keeps the convex objective monotone.
        let slope = grad.dot(&dir);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &lambda + t * &dir;
            let trial_obj = problem.objective(&trial);
            if trial_obj <= obj + 1e-4 * t * slope {
                lambda = trial;
                obj = trial_obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // Newton stalled (e.g. at numerical precision); try bisection.
            problem.bisection_sweep(&mut lambda, opts.tol);
            obj = problem.objective(&lambda);
        }
        trace.push(obj);
        let (_, probs) = problem.partition(&lambda);
        means = problem.means(&probs);
    }

    if d > 0 && !problem.converged(&means, opts.tol) {
        return Err(MaxentError::NoConvergence {
            iterations,
            worst_residual: problem.worst_residual(&means),
        });
    }

    let mut lambdas = BTreeMap::new();
    for (j, label) in problem.labels.iter().enumerate() {
        lambdas.insert(label.clone(), lambda[j]);
    }
    for label in constant_labels {
        lambdas.insert(label, 0.0);
    }

    let log_partition_value = log_partition(set, &lambdas, k)?;
    let distribution = boltzmann_distribution(set, &lambdas, k)?;
    let mut residuals = BTreeMap::new();
    for (label, &target) in targets {
        let col = set.values(label).expect("validated above");
        let mean = distribution.expectation(col);
        residuals.insert(label.clone(), (mean - target).abs());
    }
    let entropy = log_partition_value
        - lambdas
            .iter()
            .map(|(l, lam)| lam * targets[l])
            .sum::<f64>();

    Ok(EquilibriumSolution {
        lambdas,
        log_partition: log_partition_value,
        distribution,
        entropy,
        targets: targets.clone(),
        residuals,
        k,
        iterations,
        objective_trace: trace,
    })
}

/// Thermodynamic entropy via the Legendre identity S = k lnZ − Σ λ·target.
pub fn thermodynamic_entropy(sol: &EquilibriumSolution) -> f64 {
    sol.log_partition
        - sol
            .lambdas
            .iter()
            .map(|(l, lam)| lam * sol.targets[l])
            .sum::<f64>()
}

/// Result of the finite-difference multiplier check.
#[derive(Debug)]
pub struct GradientCheckReport {
    /// label → (central difference of S w.r.t. the target, −λ, relative error)
    pub per_label: BTreeMap<String, (f64, f64, f64)>,
    pub passed: bool,
    pub tolerance: f64,
}

/// Verifies λ_i = −∂S/∂target_i by central differences of the provided
/// entropy function, re-solved at perturbed targets.
///
/// `entropy_fn` maps a full target map to the thermodynamic entropy; `h_rel`
/// is the relative perturbation (default 1e-5 when zero or negative is
/// passed).
pub fn multiplier_gradient_check<F>(
    entropy_fn: F,
    sol: &EquilibriumSolution,
    h_rel: f64,
    tolerance: f64,
) -> Result<GradientCheckReport, MaxentError>
where
    F: Fn(&BTreeMap<String, f64>) -> Result<f64, MaxentError>,
{
    let h_rel = if h_rel > 0.0 { h_rel } else { 1e-5 };
    let mut per_label = BTreeMap::new();
    let mut passed = true;
    for (label, &lam) in &sol.lambdas {
        let base = sol.targets[label];
        let h = h_rel * base.abs().max(1.0);
        let mut up = sol.targets.clone();
        up.insert(label.clone(), base + h);
        let mut down = sol.targets.clone();
        down.insert(label.clone(), base - h);
        let fd = (entropy_fn(&up)? - entropy_fn(&down)?) / (2.0 * h);
        let expect = -lam;
        let scale = expect.abs().max(fd.abs()).max(1e-12);
        let rel = (fd - expect).abs() / scale;
        // A zero multiplier means the derivative should vanish; compare
        // absolutely on the entropy scale then.
        let ok = if expect.abs() < 1e-8 {
            fd.abs() <= tolerance * sol.entropy.abs().max(1.0)
        } else {
            rel <= tolerance
        };
        passed &= ok;
        per_label.insert(label.clone(), (fd, expect, rel));
    }
    Ok(GradientCheckReport {
        per_label,
        passed,
        tolerance,
    })
}

/// Intensive quantities from the multiplier signs: T = −1/λ_energy,
/// μ = λ_count·T, P = −λ_volume·T. Labels absent from the free set are
/// omitted from the map.
pub fn intensive_quantities(
    sol: &EquilibriumSolution,
) -> Result<BTreeMap<String, f64>, MaxentError> {
    let lam_e = sol
        .lambdas
        .get(crate::ENERGY)
        .copied()
        .ok_or_else(|| MaxentError::MissingFreeLabel(crate::ENERGY.into()))?;
    if lam_e == 0.0 {
        return Err(MaxentError::UndefinedTemperature);
    }
    let t = -1.0 / lam_e;
    let mut out = BTreeMap::new();
    out.insert("T".to_string(), t);
    if let Some(&lam_n) = sol.lambdas.get(crate::COUNT) {
        out.insert("mu".to_string(), lam_n * t);
    }
    if let Some(&lam_v) = sol.lambdas.get(crate::VOLUME) {
        out.insert("P".to_string(), -lam_v * t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microstate::{
        accessible_set, Alphabet, CharFunction, ConstraintSpec, EnumerationBudget, Symbol,
        ValueSet,
    };
    use approx::assert_relative_eq;

    // Frozen two-state oracle values (energies {0, 1}, λ = −1, k = 1),
    // computed independently at 40-digit precision.
    const LN_1P_EINV: f64 = 0.31326168751822283;
    const P0: f64 = 0.7310585786300049;
    const P1: f64 = 0.2689414213699951;
    const S_TWO_STATE: f64 = 0.5822031088882180;

    /// Two-state system: one "particle", site energies {0, 1}.
    pub(crate) fn two_state() -> Arc<AccessibleSet> {
        let a = Alphabet::new(
            "levels",
            vec![Symbol::new("ground", 0.0), Symbol::new("excited", 1.0)],
        )
        .unwrap();
        let energy = CharFunction::payload_sum(crate::ENERGY);
        let count = CharFunction::particle_count(crate::COUNT);
        let spec = ConstraintSpec::new(
            BTreeMap::from([(crate::COUNT.to_string(), ValueSet::Singleton(1.0))]),
            BTreeMap::new(),
        )
        .unwrap();
        accessible_set(&a, &[energy, count], &spec, 1..=1, EnumerationBudget::default())
            .unwrap()
    }

    fn coin_toss_support() -> Arc<AccessibleSet> {
        let a = Alphabet::new(
            "coin",
            vec![Symbol::bare("heads"), Symbol::bare("tails")],
        )
        .unwrap();
        let count = CharFunction::particle_count(crate::COUNT);
        let spec = ConstraintSpec::new(
            BTreeMap::from([(crate::COUNT.to_string(), ValueSet::Singleton(2.0))]),
            BTreeMap::new(),
        )
        .unwrap();
        accessible_set(&a, &[count], &spec, 2..=2, EnumerationBudget::default()).unwrap()
    }

    #[test]
    fn surprisal_basics() {
        let set = coin_toss_support();
        let b2 = InfoConstant::bits();
        let p = Distribution::from_probs(Arc::clone(&set), &[0.25; 4]).unwrap();
        assert_relative_eq!(surprisal(&p, 0, b2).unwrap(), 2.0, max_relative = 1e-14);

        let skew = Distribution::from_probs(Arc::clone(&set), &[0.5, 0.25, 0.125, 0.125]).unwrap();
        assert_relative_eq!(surprisal(&skew, 2, b2).unwrap(), 3.0, max_relative = 1e-14);

        let point = Distribution::from_probs(set, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(surprisal(&point, 0, b2).unwrap(), 0.0);
        assert!(matches!(
            surprisal(&point, 1, b2),
            Err(MaxentError::ZeroProbability)
        ));
    }

    #[test]
    fn coin_toss_entropies() {
        let set = coin_toss_support();
        let b2 = InfoConstant::bits();
        let uniform = Distribution::uniform(Arc::clone(&set));
        assert_relative_eq!(statistical_entropy(&uniform, b2), 2.0, epsilon = 1e-12);

        let skew = Distribution::from_probs(Arc::clone(&set), &[0.5, 0.25, 0.125, 0.125]).unwrap();
        assert_relative_eq!(statistical_entropy(&skew, b2), 1.75, epsilon = 1e-12);

        let point = Distribution::from_probs(set, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(statistical_entropy(&point, b2), 0.0);
    }

    #[test]
    fn log_partition_zero_lambdas_gives_k_ln_omega() {
        let set = coin_toss_support();
        let k = InfoConstant::natural();
        let kl = log_partition(&set, &BTreeMap::new(), k).unwrap();
        assert_relative_eq!(kl, (4.0f64).ln(), max_relative = 1e-14);
    }

    #[test]
    fn log_partition_two_state_matches_oracle() {
        let set = two_state();
        let k = InfoConstant::natural();
        let lambdas = BTreeMap::from([(crate::ENERGY.to_string(), -1.0)]);
        let kl = log_partition(&set, &lambdas, k).unwrap();
        assert_relative_eq!(kl, LN_1P_EINV, max_relative = 1e-15);
    }

    #[test]
    fn log_partition_single_state_is_linear_term() {
        let a = Alphabet::new("only", vec![Symbol::new("s", 2.5)]).unwrap();
        let energy = CharFunction::payload_sum(crate::ENERGY);
        let spec = ConstraintSpec::default();
        let set =
            accessible_set(&a, &[energy], &spec, 1..=1, EnumerationBudget::default()).unwrap();
        let lambdas = BTreeMap::from([(crate::ENERGY.to_string(), -3.0)]);
        let kl = log_partition(&set, &lambdas, InfoConstant::natural()).unwrap();
        assert_relative_eq!(kl, -3.0 * 2.5, max_relative = 1e-14);
    }

    #[test]
    fn log_partition_is_overflow_safe() {
        let set = two_state();
        let lambdas = BTreeMap::from([(crate::ENERGY.to_string(), 800.0)]);
        let kl = log_partition(&set, &lambdas, InfoConstant::natural()).unwrap();
        // Z = 1 + e^800; k lnZ ≈ 800 with no overflow.
        assert!(kl.is_finite());
        assert_relative_eq!(kl, 800.0, max_relative = 1e-12);
    }

    #[test]
    fn boltzmann_two_state_matches_oracle() {
        let set = two_state();
        let lambdas = BTreeMap::from([(crate::ENERGY.to_string(), -1.0)]);
        let p = boltzmann_distribution(&set, &lambdas, InfoConstant::natural()).unwrap();
        // State order is lexicographic: ground first.
        assert_relative_eq!(p.prob(0), P0, max_relative = 1e-15);
        assert_relative_eq!(p.prob(1), P1, max_relative = 1e-15);
    }

    #[test]
    fn boltzmann_zero_lambda_is_uniform() {
        let set = coin_toss_support();
        let p = boltzmann_distribution(&set, &BTreeMap::new(), InfoConstant::natural()).unwrap();
        for i in 0..4 {
            assert_relative_eq!(p.prob(i), 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn boltzmann_two_spin_ising_brute_force() {
        use crate::ensembles::IsingModel;
        let a = Alphabet::spins();
        let j = nalgebra::dmatrix![0.0, 1.0; 1.0, 0.0];
        let model = IsingModel::new(j).unwrap();
        let energy = model.char_function(crate::ENERGY);
        let count = CharFunction::particle_count(crate::COUNT);
        let spec = ConstraintSpec::new(
            BTreeMap::from([(crate::COUNT.to_string(), ValueSet::Singleton(2.0))]),
            BTreeMap::new(),
        )
        .unwrap();
        let set =
            accessible_set(&a, &[energy, count], &spec, 2..=2, EnumerationBudget::default())
                .unwrap();
        let lambdas = BTreeMap::from([(crate::ENERGY.to_string(), -1.0)]);
        let p = boltzmann_distribution(&set, &lambdas, InfoConstant::natural()).unwrap();

        // Brute force over the four states: aligned energy −1 (weight e),
        // anti-aligned +1 (weight 1/e); Z = 2e + 2/e = 6.172322539260975.
        let z = 6.172322539260975;
        let energies = set.values(crate::ENERGY).unwrap();
        for (i, &e) in energies.iter().enumerate() {
            assert_relative_eq!(p.prob(i), (-e).exp() / z, max_relative = 1e-14);
        }
    }

    #[test]
    fn solve_two_state_recovers_lambda_minus_one() {
        let set = two_state();
        let targets = BTreeMap::from([(crate::ENERGY.to_string(), P1)]);
        let sol = solve_multipliers(
            &set,
            &targets,
            InfoConstant::natural(),
            &SolverOptions::default(),
        )
        .unwrap();
        assert_relative_eq!(sol.lambdas[crate::ENERGY], -1.0, epsilon = 1e-9);
        assert_relative_eq!(sol.entropy, S_TWO_STATE, max_relative = 1e-12);
        // Statistical entropy of p* agrees with the Legendre value.
        let direct = statistical_entropy(&sol.distribution, sol.k);
        assert_relative_eq!(sol.entropy, direct, max_relative = 1e-12);
    }

    #[test]
    fn solve_symmetric_midpoint_gives_zero_multiplier() {
        let set = two_state();
        let targets = BTreeMap::from([(crate::ENERGY.to_string(), 0.5)]);
        let sol = solve_multipliers(
            &set,
            &targets,
            InfoConstant::natural(),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(sol.lambdas[crate::ENERGY].abs() < 1e-10);
        for i in 0..2 {
            assert_relative_eq!(sol.distribution.prob(i), 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn solve_boundary_target_rejected() {
        let set = two_state();
        let targets = BTreeMap::from([(crate::ENERGY.to_string(), 0.0)]);
        let err = solve_multipliers(
            &set,
            &targets,
            InfoConstant::natural(),
            &SolverOptions::default(),
        );
        assert!(matches!(err, Err(MaxentError::TargetOutOfRange { .. })));
    }

    #[test]
    fn solve_constant_function_target_must_match() {
        let set = two_state();
        // count is constant 1 on this set.
        let ok = solve_multipliers(
            &set,
            &BTreeMap::from([
                (crate::ENERGY.to_string(), 0.4),
                (crate::COUNT.to_string(), 1.0),
            ]),
            InfoConstant::natural(),
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(ok.lambdas[crate::COUNT], 0.0);

        let bad = solve_multipliers(
            &set,
            &BTreeMap::from([(crate::COUNT.to_string(), 2.0)]),
            InfoConstant::natural(),
            &SolverOptions::default(),
        );
        assert!(matches!(bad, Err(MaxentError::TargetOutOfRange { .. })));
    }

    #[test]
    fn singular_covariance_reports_dependence() {
        // Two functions that are affine images of each other on the set.
        let a = Alphabet::new(
            "levels",
            vec![Symbol::new("g", 0.0), Symbol::new("e", 1.0)],
        )
        .unwrap();
        let energy = CharFunction::payload_sum(crate::ENERGY);
        let doubled = CharFunction::new("doubled", true, |m| {
            let mut acc = 0.0;
            for j in 0..m.len() {
                acc += 2.0 * m.payload(j, "doubled")?;
            }
            Ok(acc + 0.0)
        });
        let set = accessible_set(
            &a,
            &[energy, doubled],
            &ConstraintSpec::default(),
            1..=1,
            EnumerationBudget::default(),
        )
        .unwrap();
        let err = solve_multipliers(
            &set,
            &BTreeMap::from([
                (crate::ENERGY.to_string(), 0.4),
                ("doubled".to_string(), 0.8),
            ]),
            InfoConstant::natural(),
            &SolverOptions::default(),
        );
        assert!(matches!(err, Err(MaxentError::SingularCovariance(_))), "{err:?}");
    }

    #[test]
    fn objective_trace_is_monotone_nonincreasing() {
        let set = crate::ensembles::tests::ising_ring(4);
        let targets = BTreeMap::from([(crate::ENERGY.to_string(), -1.3)]);
        let sol = solve_multipliers(
            &set,
            &targets,
            InfoConstant::natural(),
            &SolverOptions::default(),
        )
        .unwrap();
        for w in sol.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "trace not monotone: {:?}", sol.objective_trace);
        }
    }

    #[test]
    fn legendre_identity_holds() {
        let set = two_state();
        let targets = BTreeMap::from([(crate::ENERGY.to_string(), 0.31)]);
        let sol = solve_multipliers(
            &set,
            &targets,
            InfoConstant::natural(),
            &SolverOptions::default(),
        )
        .unwrap();
        let s = thermodynamic_entropy(&sol);
        let direct = statistical_entropy(&sol.distribution, sol.k);
        assert!((s - direct).abs() <= LEGENDRE_TOL * s.abs().max(1.0));
    }

    #[test]
    fn entropy_at_uniform_point_is_k_ln_omega() {
        let set = coin_toss_support();
        // No free targets at all: adiabatic, p* uniform.
        let sol = solve_multipliers(
            &set,
            &BTreeMap::new(),
            InfoConstant::natural(),
            &SolverOptions::default(),
        )
        .unwrap();
        assert_relative_eq!(sol.entropy, (4.0f64).ln(), max_relative = 1e-14);
    }

    #[test]
    fn single_microstate_entropy_zero() {
        let a = Alphabet::new("only", vec![Symbol::new("s", 1.0)]).unwrap();
        let energy = CharFunction::payload_sum(crate::ENERGY);
        let set = accessible_set(
            &a,
            &[energy],
            &ConstraintSpec::default(),
            1..=1,
            EnumerationBudget::default(),
        )
        .unwrap();
        let sol = solve_multipliers(
            &set,
            &BTreeMap::from([(crate::ENERGY.to_string(), 1.0)]),
            InfoConstant::natural(),
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(sol.entropy, 0.0);
    }

    #[test]
    fn gradient_check_two_state() {
        let set = two_state();
        let k = InfoConstant::natural();
        let targets = BTreeMap::from([(crate::ENERGY.to_string(), 0.3)]);
        let sol = solve_multipliers(&set, &targets, k, &SolverOptions::default()).unwrap();
        let entropy_fn = |t: &BTreeMap<String, f64>| {
            solve_multipliers(&set, t, k, &SolverOptions::default()).map(|s| s.entropy)
        };
        let report = multiplier_gradient_check(entropy_fn, &sol, 1e-5, 1e-4).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn gradient_check_zero_multiplier_at_midpoint() {
        let set = two_state();
        let k = InfoConstant::natural();
        let targets = BTreeMap::from([(crate::ENERGY.to_string(), 0.5)]);
        let sol = solve_multipliers(&set, &targets, k, &SolverOptions::default()).unwrap();
        let entropy_fn = |t: &BTreeMap<String, f64>| {
            solve_multipliers(&set, t, k, &SolverOptions::default()).map(|s| s.entropy)
        };
        let report = multiplier_gradient_check(entropy_fn, &sol, 1e-5, 1e-4).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn intensives_signs() {
        let set = two_state();
        let k = InfoConstant::natural();
        let sol = solve_multipliers(
            &set,
            &BTreeMap::from([(crate::ENERGY.to_string(), P1)]),
            k,
            &SolverOptions::default(),
        )
        .unwrap();
        let q = intensive_quantities(&sol).unwrap();
        // λ_e ≈ −1 → T ≈ 1.
        assert_relative_eq!(q["T"], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn undefined_temperature_at_zero_multiplier() {
        let set = two_state();
        let sol = solve_multipliers(
            &set,
            &BTreeMap::from([(crate::ENERGY.to_string(), 0.5)]),
            InfoConstant::natural(),
            &SolverOptions::default(),
        )
        .unwrap();
        // Force the exactly-zero case regardless of solver rounding.
        let mut sol = sol;
        sol.lambdas.insert(crate::ENERGY.to_string(), 0.0);
        assert!(matches!(
            intensive_quantities(&sol),
            Err(MaxentError::UndefinedTemperature)
        ));
    }

    #[test]
    fn adiabatic_equiprobability_when_exponent_constant() {
        // λ·F constant over the set ⇒ uniform p*.
        let set = two_state();
        // count is constant (=1); a multiplier on it alone keeps the
        // exponent constant.
        let lambdas = BTreeMap::from([(crate::COUNT.to_string(), 2.5)]);
        let p = boltzmann_distribution(&set, &lambdas, InfoConstant::natural()).unwrap();
        for i in 0..p.len() {
            assert_relative_eq!(p.prob(i), 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn expectation_matches_partition_derivative() {
        // E[F] from the distribution equals ∂(k lnZ)/∂λ by central difference.
        let set = two_state();
        let k = InfoConstant::natural();
        let lam = -0.7;
        let h = 1e-6;
        let at = |l: f64| {
            log_partition(
                &set,
                &BTreeMap::from([(crate::ENERGY.to_string(), l)]),
                k,
            )
            .unwrap()
        };
        let fd = (at(lam + h) - at(lam - h)) / (2.0 * h);
        let p = boltzmann_distribution(
            &set,
            &BTreeMap::from([(crate::ENERGY.to_string(), lam)]),
            k,
        )
        .unwrap();
        let mean = p.expectation(set.values(crate::ENERGY).unwrap());
        assert_relative_eq!(fd, mean, max_relative = 1e-6);
    }
}
