//! Energy representation E(S̄, θˣ) and its gradient (the efforts).
//!
//! Thermodynamics downstream of the multiplier solve works in the entropy
//! representation S(E̅, θˣ). The port-Hamiltonian side needs the inverse:
//! energy as a function of entropy and the remaining extensive variables,
//! together with the effort vector ∇E = [T, T·λ_i]. Inversion is bracketed
//! bisection followed by Newton polish using ∂S/∂E = 1/T, restricted to the
//! increasing (T > 0) branch of S(E).

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::ensembles::{EnsembleError, IdealGasModel};
use crate::maxent::{self, InfoConstant, MaxentError, SolverOptions};
use crate::microstate::AccessibleSet;

/// Relative tolerance of the entropy inversion.
pub const INVERSION_TOL: f64 = 1e-10;
/// Bisection phase stops at this relative bracket width before Newton.
const BISECTION_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("entropy {requested} exceeds the attainable maximum {max_attainable}")]
    EntropyOutOfRange {
        requested: f64,
        max_attainable: f64,
    },
    #[error("entropy {requested} is below every attainable value on this branch")]
    EntropyBelowRange { requested: f64 },
    #[error(
        "S(E) is not monotone on this model and no branch was selected; \
         pick Branch::PositiveTemperature"
    )]
    BranchAmbiguity,
    #[error("temperature undefined at the entropy maximum (λ_e = 0)")]
    UndefinedTemperature,
    #[error("entropy inversion failed: {0}")]
    InversionFailed(String),
    #[error("state has {got} extra components, model expects {expected}")]
    ExtrasMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Maxent(#[from] MaxentError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

impl EnergyError {
    /// True when the error means "this target point is not attainable",
    /// which the bracketing search treats as a soft probe failure.
    fn is_infeasible(&self) -> bool {
        matches!(
            self,
            EnergyError::Maxent(MaxentError::TargetOutOfRange { .. })
                | EnergyError::Maxent(MaxentError::NoConvergence { .. })
                | EnergyError::Ensemble(EnsembleError::NonpositiveTemperature(_))
        )
    }

    /// True when the error means the queried state left the attainable
    /// domain (as opposed to a structural/programming problem). The
    /// integrator reacts to these by rejecting the step.
    pub(crate) fn is_domain_exit(&self) -> bool {
        self.is_infeasible()
            || matches!(
                self,
                EnergyError::EntropyOutOfRange { .. }
                    | EnergyError::EntropyBelowRange { .. }
                    | EnergyError::UndefinedTemperature
            )
    }
}

/// Entropy and multipliers at one target point, aligned with the model's
/// label order (energy first).
#[derive(Debug, Clone)]
pub struct EntropyPoint {
    pub entropy: f64,
    pub lambdas: Vec<f64>,
}

/// An entropy-representation model: S and λ as functions of the free targets
/// (energy first, then the extra extensive quantities).
pub trait EntropyModel: Send + Sync {
    /// Free labels, energy first.
    fn labels(&self) -> &[String];

    /// Entropy and multipliers at the given targets.
    fn solve(&self, targets: &[f64]) -> Result<EntropyPoint, EnergyError>;

    /// Open global bounds on the energy value (used to seed bracketing).
    fn energy_range(&self) -> (f64, f64);

    /// For bounded spectra: the energy and entropy of the maximum-entropy
    /// point at the given extras. `None` when S(E) grows without bound.
    fn max_entropy_point(&self, extras: &[f64]) -> Result<Option<(f64, f64)>, EnergyError>;

    /// Starting energy scale for bracket expansion on unbounded models.
    fn initial_energy_guess(&self, extras: &[f64]) -> f64;

    /// Whether S(E) turns over at high energy (negative-temperature branch
    /// exists). Always true for finite enumerated spectra.
    fn has_bounded_spectrum(&self) -> bool;

    /// Whether the model declares degree-1 homogeneity of its energy.
    fn is_homogeneous(&self) -> bool {
        false
    }

    /// Model-specific entropy inversion (closed form or natural-parameter
    /// iteration). `Ok(None)` defers to the generic bracketed search.
    fn invert_entropy(
        &self,
        s_bar: f64,
        extras: &[f64],
    ) -> Result<Option<(f64, EntropyPoint)>, EnergyError> {
        let _ = (s_bar, extras);
        Ok(None)
    }
}

/// Entropy model backed by an enumerated accessible set and the multiplier
/// solver. Re-solves are warm-started from the previous multipliers.
pub struct EnumeratedEntropyModel {
    set: Arc<AccessibleSet>,
    labels: Vec<String>,
    k: InfoConstant,
    warm: Mutex<Option<BTreeMap<String, f64>>>,
}

impl EnumeratedEntropyModel {
    /// `extra_labels` are the free labels other than energy, in state order.
    pub fn new(
        set: Arc<AccessibleSet>,
        energy_label: &str,
        extra_labels: &[&str],
        k: InfoConstant,
    ) -> Result<Self, EnergyError> {
        let mut labels = vec![energy_label.to_string()];
        labels.extend(extra_labels.iter().map(|s| s.to_string()));
        for l in &labels {
            if set.label_index(l).is_none() {
                return Err(EnergyError::Maxent(MaxentError::UnknownLabel(l.clone())));
            }
        }
        Ok(Self {
            set,
            labels,
            k,
            warm: Mutex::new(None),
        })
    }

    pub fn set(&self) -> &Arc<AccessibleSet> {
        &self.set
    }

    pub fn k(&self) -> InfoConstant {
        self.k
    }

    fn target_map(&self, targets: &[f64]) -> BTreeMap<String, f64> {
        self.labels
            .iter()
            .cloned()
            .zip(targets.iter().copied())
            .collect()
    }
}

impl EntropyModel for EnumeratedEntropyModel {
    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn solve(&self, targets: &[f64]) -> Result<EntropyPoint, EnergyError> {
        let map = self.target_map(targets);
        let opts = SolverOptions {
            warm_start: self.warm.lock().expect("warm cache poisoned").clone(),
            ..Default::default()
        };
        let sol = match maxent::solve_multipliers(&self.set, &map, self.k, &opts) {
            Ok(sol) => sol,
            // A stale warm start can strand Newton; retry cold once.
            Err(MaxentError::NoConvergence { .. }) if opts.warm_start.is_some() => {
                maxent::solve_multipliers(&self.set, &map, self.k, &SolverOptions::default())?
            }
            Err(e) => return Err(e.into()),
        };
        *self.warm.lock().expect("warm cache poisoned") = Some(sol.lambdas.clone());
        Ok(EntropyPoint {
            entropy: sol.entropy,
            lambdas: self.labels.iter().map(|l| sol.lambdas[l]).collect(),
        })
    }

    fn energy_range(&self) -> (f64, f64) {
        let col = self
            .set
            .values(&self.labels[0])
            .expect("validated at construction");
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    fn max_entropy_point(&self, extras: &[f64]) -> Result<Option<(f64, f64)>, EnergyError> {
        // Solve with energy left free: λ_e = 0 there, so E is the mean of the
        // energy column under the extras-constrained maximizer.
        let map: BTreeMap<String, f64> = self.labels[1..]
            .iter()
            .cloned()
            .zip(extras.iter().copied())
            .collect();
        let sol = maxent::solve_multipliers(&self.set, &map, self.k, &SolverOptions::default())?;
        let energy_col = self.set.values(&self.labels[0]).expect("validated");
        let e = sol.distribution.expectation(energy_col);
        Ok(Some((e, sol.entropy)))
    }

    fn initial_energy_guess(&self, _extras: &[f64]) -> f64 {
        let (lo, hi) = self.energy_range();
        0.5 * (lo + hi)
    }

    fn has_bounded_spectrum(&self) -> bool {
        true
    }
}

/// Analytic entropy model for the ideal gas; never enumerates microstates.
/// Count and volume can each be promoted from model parameters to state
/// variables; when included, labels are ordered `[energy, count?, volume?]`.
pub struct IdealGasEntropyModel {
    gas: IdealGasModel,
    labels: Vec<String>,
    include_count: bool,
    include_volume: bool,
}

impl IdealGasEntropyModel {
    /// Energy-only state; count and volume stay at the model's values.
    pub fn new(gas: IdealGasModel, include_volume: bool) -> Self {
        Self::with_state(gas, false, include_volume)
    }

    pub fn with_state(gas: IdealGasModel, include_count: bool, include_volume: bool) -> Self {
        let mut labels = vec![crate::ENERGY.to_string()];
        if include_count {
            labels.push(crate::COUNT.to_string());
        }
        if include_volume {
            labels.push(crate::VOLUME.to_string());
        }
        Self {
            gas,
            labels,
            include_count,
            include_volume,
        }
    }

    pub fn gas(&self) -> &IdealGasModel {
        &self.gas
    }

    /// (N, V) resolved against the targets, energy at index 0.
    fn count_volume(&self, targets: &[f64]) -> (f64, f64) {
        let mut idx = 1;
        let n = if self.include_count {
            let n = targets[idx];
            idx += 1;
            n
        } else {
            self.gas.n
        };
        let v = if self.include_volume {
            targets[idx]
        } else {
            self.gas.volume
        };
        (n, v)
    }
}

impl EntropyModel for IdealGasEntropyModel {
    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn solve(&self, targets: &[f64]) -> Result<EntropyPoint, EnergyError> {
        let e = targets[0];
        let (n, v) = self.count_volume(targets);
        if v <= 0.0 || n < 1.0 {
            return Err(EnergyError::InversionFailed(format!(
                "ideal gas needs N ≥ 1 and V > 0, got N = {n}, V = {v}"
            )));
        }
        let t = self.gas.temperature_at(e, n)?;
        let entropy = self.gas.entropy_at(e, n, v)?;
        let mut lambdas = vec![-1.0 / t];
        if self.include_count {
            lambdas.push(self.gas.lambda_count(e, n, v));
        }
        if self.include_volume {
            // λ_v = −P/T = −N·k/V.
            lambdas.push(-n * self.gas.k.k() / v);
        }
        Ok(EntropyPoint { entropy, lambdas })
    }

    fn energy_range(&self) -> (f64, f64) {
        (0.0, f64::INFINITY)
    }

    fn max_entropy_point(&self, _extras: &[f64]) -> Result<Option<(f64, f64)>, EnergyError> {
        Ok(None)
    }

    fn initial_energy_guess(&self, extras: &[f64]) -> f64 {
        let n = if self.include_count {
            extras[0]
        } else {
            self.gas.n
        };
        // Room-temperature energy scale; any positive value brackets in
        // O(log) steps.
        1.5 * n * self.gas.k.k() * 300.0
    }

    fn has_bounded_spectrum(&self) -> bool {
        false
    }

    fn is_homogeneous(&self) -> bool {
        self.gas.gibbs_correction
    }
}

/// Branch selector for the S(E) inversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Branch {
    /// Increasing branch of S(E): the T > 0 working regime.
    #[default]
    PositiveTemperature,
    /// No branch chosen; models with a bounded spectrum refuse to invert.
    Unspecified,
}

/// Macroscopic state x = [S̄, θˣ].
#[derive(Debug, Clone, PartialEq)]
pub struct MacroState {
    pub entropy: f64,
    pub extras: Vec<f64>,
}

impl MacroState {
    pub fn new(entropy: f64, extras: Vec<f64>) -> Self {
        Self { entropy, extras }
    }

    pub fn scaled(&self, gamma: f64) -> Self {
        Self {
            entropy: gamma * self.entropy,
            extras: self.extras.iter().map(|v| gamma * v).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        1 + self.extras.len()
    }
}

/// Report of a homogeneity probe E(γx) vs γE(x).
#[derive(Debug, Clone, Copy)]
pub struct HomogeneityReport {
    pub gamma: f64,
    pub deviation_rel: f64,
    pub declared_homogeneous: bool,
    pub passed: bool,
}

/// Pass threshold for models declared homogeneous.
pub const HOMOGENEITY_TOL: f64 = 1e-8;

/// The Hamiltonian E(S̄, θˣ) over an entropy-representation model.
pub struct EnergyFunction {
    model: Arc<dyn EntropyModel>,
    branch: Branch,
    /// Last accepted inversion per extras, as a bracketing hint.
    warm: Mutex<Option<(Vec<f64>, f64)>>,
}

impl EnergyFunction {
    pub fn new(model: Arc<dyn EntropyModel>) -> Self {
        Self {
            model,
            branch: Branch::PositiveTemperature,
            warm: Mutex::new(None),
        }
    }

    pub fn with_branch(mut self, branch: Branch) -> Self {
        self.branch = branch;
        self
    }

    pub fn model(&self) -> &Arc<dyn EntropyModel> {
        &self.model
    }

    pub fn state_labels(&self) -> Vec<String> {
        let mut labels = vec![crate::ENTROPY.to_string()];
        labels.extend_from_slice(&self.model.labels()[1..]);
        labels
    }

    fn check_extras(&self, extras: &[f64]) -> Result<(), EnergyError> {
        let expected = self.model.labels().len() - 1;
        if extras.len() != expected {
            return Err(EnergyError::ExtrasMismatch {
                got: extras.len(),
                expected,
            });
        }
        Ok(())
    }

    /// S(E̅, θˣ): the forward direction, a plain model solve.
    pub fn entropy_of_energy(&self, e_bar: f64, extras: &[f64]) -> Result<f64, EnergyError> {
        self.check_extras(extras)?;
        let mut targets = vec![e_bar];
        targets.extend_from_slice(extras);
        Ok(self.model.solve(&targets)?.entropy)
    }

    fn point_at_energy(&self, e_bar: f64, extras: &[f64]) -> Result<EntropyPoint, EnergyError> {
        let mut targets = vec![e_bar];
        targets.extend_from_slice(extras);
        self.model.solve(&targets)
    }

    /// E(S̄, θˣ): model fast path when available, otherwise bracketed
    /// bisection then Newton polish with dS/dE = 1/T. Consecutive calls at
    /// nearby states reuse the previous root as a Newton seed and usually
    /// skip the bracketing phase entirely.
    pub fn energy_of_entropy(&self, s_bar: f64, extras: &[f64]) -> Result<f64, EnergyError> {
        self.invert(s_bar, extras).map(|(e, _)| e)
    }

    /// Full inversion: the energy root and the entropy point there.
    fn invert(&self, s_bar: f64, extras: &[f64]) -> Result<(f64, EntropyPoint), EnergyError> {
        self.check_extras(extras)?;
        if self.branch == Branch::Unspecified && self.model.has_bounded_spectrum() {
            return Err(EnergyError::BranchAmbiguity);
        }

        if let Some(hit) = self.model.invert_entropy(s_bar, extras)? {
            self.store_warm(extras, hit.0);
            return Ok(hit);
        }

        let entropy_at = |e: f64| -> Result<f64, EnergyError> {
            Ok(self.point_at_energy(e, extras)?.entropy)
        };

        if let Some(seed) = self.warm_seed() {
            if let Some(hit) = self.newton_from_seed(seed, s_bar, extras)? {
                self.store_warm(extras, hit.0);
                return Ok(hit);
            }
        }

        // Upper end of the branch.
        let max_pt = self.model.max_entropy_point(extras)?;
        let mut hi;
        match max_pt {
            Some((e_max, s_max)) => {
                if s_bar > s_max + 1e-12 * s_max.abs().max(1.0) {
                    return Err(EnergyError::EntropyOutOfRange {
                        requested: s_bar,
                        max_attainable: s_max,
                    });
                }
                if (s_bar - s_max).abs() <= 1e-12 * s_max.abs().max(1.0) {
                    let pt = self.point_at_energy(e_max, extras)?;
                    return Ok((e_max, pt));
                }
                hi = e_max;
            }
            None => {
                // Unbounded: expand upward until S(hi) ≥ s_bar.
                hi = self
                    .warm_hint(extras)
                    .unwrap_or_else(|| self.model.initial_energy_guess(extras));
                if hi <= 0.0 {
                    hi = 1.0;
                }
                let mut tries = 0;
                while entropy_at(hi)? < s_bar {
                    hi *= 2.0;
                    tries += 1;
                    if tries > 4000 {
                        return Err(EnergyError::InversionFailed(
                            "upper bracket expansion did not reach the target entropy".into(),
                        ));
                    }
                }
            }
        }

        // Lower end: walk toward the energy floor until S ≤ s_bar, treating
        // infeasible probes (joint target outside the attainable hull) as
        // "too low".
        let (e_floor, _) = self.model.energy_range();
        let mut lo = hi;
        let mut lo_entropy = entropy_at(lo)?;
        let mut feasible_floor = e_floor;
        let mut tries = 0;
        while lo_entropy > s_bar {
            tries += 1;
            if tries > 4000 {
                return Err(EnergyError::InversionFailed(
                    "lower bracket expansion stalled".into(),
                ));
            }
            let probe = if e_floor.is_finite() {
                feasible_floor + 0.5 * (lo - feasible_floor)
            } else {
                lo * 0.5
            };
            if (lo - probe).abs() <= f64::EPSILON * lo.abs() {
                // Cannot go lower: s_bar is below every attainable entropy.
                return Err(EnergyError::EntropyBelowRange { requested: s_bar });
            }
            match entropy_at(probe) {
                Ok(s) => {
                    lo = probe;
                    lo_entropy = s;
                }
                Err(e) if e.is_infeasible() => {
                    // Move the working floor up and try again.
                    feasible_floor = probe;
                }
                Err(e) => return Err(e),
            }
        }

        // Bisection to a narrow bracket.
        let mut width = hi - lo;
        while width > BISECTION_TOL * hi.abs().max(lo.abs()).max(1.0) {
            let mid = 0.5 * (lo + hi);
            match entropy_at(mid) {
                Ok(s) if s < s_bar => lo = mid,
                Ok(_) => hi = mid,
                Err(e) if e.is_infeasible() => lo = mid,
                Err(e) => return Err(e),
            }
            width = hi - lo;
        }

        // Newton polish: E ← E − (S(E) − S̄)·T(E), safeguarded by the bracket.
        let mut e = 0.5 * (lo + hi);
        for _ in 0..100 {
            let pt = self.point_at_energy(e, extras)?;
            let resid = pt.entropy - s_bar;
            if resid.abs() <= INVERSION_TOL * s_bar.abs().max(1.0) {
                self.store_warm(extras, e);
                return Ok((e, pt));
            }
            if resid > 0.0 {
                hi = hi.min(e);
            } else {
                lo = lo.max(e);
            }
            let lambda_e = pt.lambdas[0];
            let newton = if lambda_e < 0.0 {
                let t = -1.0 / lambda_e;
                e - resid * t
            } else {
                f64::NAN
            };
            e = if newton.is_finite() && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        Err(EnergyError::InversionFailed(format!(
            "Newton polish did not reach {INVERSION_TOL} relative"
        )))
    }

    /// E(x) for a macroscopic state x = [S̄, θˣ].
    pub fn energy(&self, x: &MacroState) -> Result<f64, EnergyError> {
        self.energy_of_entropy(x.entropy, &x.extras)
    }

    /// Effort vector ∇E(x) = [T, (T·λ_i)_{i∈θˣ}].
    pub fn effort_vector(&self, x: &MacroState) -> Result<Vec<f64>, EnergyError> {
        self.energy_and_efforts(x).map(|(_, efforts)| efforts)
    }

    /// One re-equilibration yielding both E(x) and ∇E(x); the
    /// quasi-static integrator calls this per evaluation.
    pub fn energy_and_efforts(&self, x: &MacroState) -> Result<(f64, Vec<f64>), EnergyError> {
        let (e, pt) = self.invert(x.entropy, &x.extras)?;
        let lambda_e = pt.lambdas[0];
        if lambda_e >= 0.0 {
            return Err(EnergyError::UndefinedTemperature);
        }
        let t = -1.0 / lambda_e;
        let mut efforts = Vec::with_capacity(x.dim());
        efforts.push(t);
        for lam in &pt.lambdas[1..] {
            efforts.push(t * lam);
        }
        Ok((e, efforts))
    }

    /// Probes E(γx) against γE(x).
    pub fn homogeneity_check(
        &self,
        x: &MacroState,
        gamma: f64,
    ) -> Result<HomogeneityReport, EnergyError> {
        let base = self.energy(x)?;
        let scaled = self.energy(&x.scaled(gamma))?;
        let expect = gamma * base;
        let deviation_rel = (scaled - expect).abs() / expect.abs().max(f64::MIN_POSITIVE);
        Ok(HomogeneityReport {
            gamma,
            deviation_rel,
            declared_homogeneous: self.model.is_homogeneous(),
            passed: deviation_rel <= HOMOGENEITY_TOL,
        })
    }

    /// Safeguarded Newton from a seed, with running sign brackets. Returns
    /// `Ok(None)` when the iteration leaves its trust region (caller falls
    /// back to full bracketing); infeasible probes also bail out softly.
    fn newton_from_seed(
        &self,
        seed: f64,
        s_bar: f64,
        extras: &[f64],
    ) -> Result<Option<(f64, EntropyPoint)>, EnergyError> {
        let mut e = seed;
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for _ in 0..40 {
            let pt = match self.point_at_energy(e, extras) {
                Ok(pt) => pt,
                Err(err) if err.is_infeasible() => return Ok(None),
                Err(err) => return Err(err),
            };
            let resid = pt.entropy - s_bar;
            if resid.abs() <= INVERSION_TOL * s_bar.abs().max(1.0) {
                return Ok(Some((e, pt)));
            }
            if resid > 0.0 {
                hi = hi.min(e);
            } else {
                lo = lo.max(e);
            }
            let lambda_e = pt.lambdas[0];
            if lambda_e >= 0.0 {
                return Ok(None);
            }
            let next = e - resid * (-1.0 / lambda_e);
            e = if next.is_finite() && next > lo && next < hi {
                next
            } else if lo.is_finite() && hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                return Ok(None);
            };
        }
        Ok(None)
    }

    fn warm_hint(&self, extras: &[f64]) -> Option<f64> {
        let guard = self.warm.lock().expect("warm cache poisoned");
        guard
            .as_ref()
            .filter(|(ex, _)| ex == extras)
            .map(|(_, e)| *e)
    }

    /// Last inversion result regardless of extras; a Newton seed only.
    fn warm_seed(&self) -> Option<f64> {
        let guard = self.warm.lock().expect("warm cache poisoned");
        guard.as_ref().map(|(_, e)| *e)
    }

    fn store_warm(&self, extras: &[f64], e: f64) {
        *self.warm.lock().expect("warm cache poisoned") = Some((extras.to_vec(), e));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::tests::ising_ring;
    use crate::maxent::InfoConstant;
    use crate::microstate::{
        accessible_set, Alphabet, CharFunction, ConstraintSpec, EnumerationBudget, Symbol,
        ValueSet,
    };
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_state_model() -> EnumeratedEntropyModel {
        let a = Alphabet::new(
            "levels",
            vec![Symbol::new("ground", 0.0), Symbol::new("excited", 1.0)],
        )
        .unwrap();
        let energy = CharFunction::payload_sum(crate::ENERGY);
        let count = CharFunction::particle_count(crate::COUNT);
        let spec = ConstraintSpec::new(
            std::collections::BTreeMap::from([(
                crate::COUNT.to_string(),
                ValueSet::Singleton(1.0),
            )]),
            std::collections::BTreeMap::new(),
        )
        .unwrap();
        let set = accessible_set(
            &a,
            &[energy, count],
            &spec,
            1..=1,
            EnumerationBudget::default(),
        )
        .unwrap();
        EnumeratedEntropyModel::new(set, crate::ENERGY, &[], InfoConstant::natural()).unwrap()
    }

    fn gas_fn(include_volume: bool, gibbs: bool) -> EnergyFunction {
        let gas = IdealGasModel::new(1.0, 1.0, 1.0, InfoConstant::natural())
            .unwrap().with_planck(1.0)
            .with_gibbs_correction(gibbs);
        EnergyFunction::new(Arc::new(IdealGasEntropyModel::new(gas, include_volume)))
    }

    #[test]
    fn ideal_gas_entropy_matches_state_route() {
        let gas = IdealGasModel::new(2.0, 1.0, 1.0, InfoConstant::natural()).unwrap().with_planck(1.0);
        let f = EnergyFunction::new(Arc::new(IdealGasEntropyModel::new(gas, false)));
        let t = 1.3;
        let e = gas.mean_energy(t);
        let s_model = f.entropy_of_energy(e, &[]).unwrap();
        let s_state = gas.state(t).unwrap().entropy;
        assert_relative_eq!(s_model, s_state, max_relative = 1e-13);
    }

    #[test]
    fn ideal_gas_round_trip_at_t_equals_two() {
        let f = gas_fn(false, false);
        // N = 1, k = 1, T = 2 → E = 3.
        let s = f.entropy_of_energy(3.0, &[]).unwrap();
        let e = f.energy_of_entropy(s, &[]).unwrap();
        assert_relative_eq!(e, 3.0, max_relative = 1e-9);
    }

    #[test]
    fn two_state_midpoint_entropy_is_ln_two() {
        let model = two_state_model();
        let f = EnergyFunction::new(Arc::new(model));
        let s = f.entropy_of_energy(0.5, &[]).unwrap();
        assert_relative_eq!(s, std::f64::consts::LN_2, max_relative = 1e-12);
    }

    #[test]
    fn entropy_is_strictly_increasing_on_branch() {
        let model = two_state_model();
        let f = EnergyFunction::new(Arc::new(model));
        let mut last = f64::NEG_INFINITY;
        for i in 0..50 {
            let e = 0.01 + 0.48 * (i as f64) / 49.0;
            let s = f.entropy_of_energy(e, &[]).unwrap();
            assert!(s > last, "S not increasing at E = {e}");
            last = s;
        }
    }

    #[test]
    fn ising_entropy_is_concave_in_energy() {
        let set = ising_ring(4);
        let model =
            EnumeratedEntropyModel::new(set, crate::ENERGY, &[], InfoConstant::natural()).unwrap();
        let f = EnergyFunction::new(Arc::new(model));
        let mut values = Vec::new();
        for i in 0..40 {
            let e = -3.8 + 3.7 * (i as f64) / 39.0; // ring ground state at −4, uniform mean 0
            values.push(f.entropy_of_energy(e, &[]).unwrap());
        }
        for w in values.windows(3) {
            let second = w[2] - 2.0 * w[1] + w[0];
            assert!(second <= 1e-9, "second difference {second} > 0");
        }
    }

    #[test]
    fn entropy_at_max_inverts_to_uniform_point_energy() {
        let model = two_state_model();
        let f = EnergyFunction::new(Arc::new(model));
        let s_max = std::f64::consts::LN_2;
        let e = f.energy_of_entropy(s_max, &[]).unwrap();
        // Uniform point of the {0, 1} spectrum is its mean.
        assert_relative_eq!(e, 0.5, max_relative = 1e-9);
    }

    #[test]
    fn entropy_above_ln_omega_is_rejected() {
        let model = two_state_model();
        let f = EnergyFunction::new(Arc::new(model));
        let err = f.energy_of_entropy(std::f64::consts::LN_2 + 0.01, &[]);
        assert!(matches!(err, Err(EnergyError::EntropyOutOfRange { .. })));
    }

    #[test]
    fn branch_must_be_selected_on_bounded_spectra() {
        let model = two_state_model();
        let f = EnergyFunction::new(Arc::new(model)).with_branch(Branch::Unspecified);
        let err = f.energy_of_entropy(0.4, &[]);
        assert!(matches!(err, Err(EnergyError::BranchAmbiguity)));
    }

    #[test]
    fn round_trip_identities_both_ways() {
        let model = two_state_model();
        let f = EnergyFunction::new(Arc::new(model));
        for e in [0.05, 0.17, 0.33, 0.49] {
            let s = f.entropy_of_energy(e, &[]).unwrap();
            let back = f.energy_of_entropy(s, &[]).unwrap();
            assert_relative_eq!(back, e, max_relative = 1e-9);
        }
        for s in [0.2, 0.4, 0.6, 0.69] {
            let e = f.energy_of_entropy(s, &[]).unwrap();
            let back = f.entropy_of_energy(e, &[]).unwrap();
            assert_relative_eq!(back, s, max_relative = 1e-9);
        }
    }

    #[test]
    fn effort_temperature_matches_finite_difference() {
        let model = two_state_model();
        let f = EnergyFunction::new(Arc::new(model));
        let x = MacroState::new(0.5, vec![]);
        let efforts = f.effort_vector(&x).unwrap();
        let h = 1e-5 * x.entropy;
        let up = f.energy_of_entropy(x.entropy + h, &[]).unwrap();
        let down = f.energy_of_entropy(x.entropy - h, &[]).unwrap();
        let fd = (up - down) / (2.0 * h);
        assert_relative_eq!(efforts[0], fd, max_relative = 1e-4);
    }

    #[test]
    fn ideal_gas_volume_effort_is_minus_pressure() {
        let f = gas_fn(true, false);
        let gas = IdealGasModel::new(1.0, 1.0, 1.0, InfoConstant::natural()).unwrap().with_planck(1.0);
        let t = 1.5;
        let v = 1.2;
        let e = gas.mean_energy(t);
        let s = gas.entropy_of(e, v).unwrap();
        let x = MacroState::new(s, vec![v]);
        let efforts = f.effort_vector(&x).unwrap();
        assert_relative_eq!(efforts[0], t, max_relative = 1e-9);
        // ∂E/∂V at fixed S equals −P = −NkT/V at the matched temperature.
        assert_relative_eq!(efforts[1], -(1.0 * t / v), max_relative = 1e-9);
        // Cross-check by central finite differences of the inversion.
        let h = 1e-5 * v;
        let fd = (f.energy_of_entropy(s, &[v + h]).unwrap()
            - f.energy_of_entropy(s, &[v - h]).unwrap())
            / (2.0 * h);
        assert_relative_eq!(efforts[1], fd, max_relative = 1e-4);
    }

    #[test]
    fn zero_multiplier_extra_gives_zero_effort() {
        // `count` is constant on the two-state set, so its multiplier (and
        // effort) vanish at the matching target.
        let a = Alphabet::new(
            "levels",
            vec![Symbol::new("ground", 0.0), Symbol::new("excited", 1.0)],
        )
        .unwrap();
        let energy = CharFunction::payload_sum(crate::ENERGY);
        let count = CharFunction::particle_count(crate::COUNT);
        let spec = ConstraintSpec::new(
            std::collections::BTreeMap::from([(
                crate::COUNT.to_string(),
                ValueSet::Singleton(1.0),
            )]),
            std::collections::BTreeMap::new(),
        )
        .unwrap();
        let set = accessible_set(
            &a,
            &[energy, count],
            &spec,
            1..=1,
            EnumerationBudget::default(),
        )
        .unwrap();
        let model =
            EnumeratedEntropyModel::new(set, crate::ENERGY, &[crate::COUNT], InfoConstant::natural())
                .unwrap();
        let f = EnergyFunction::new(Arc::new(model));
        let s = f.entropy_of_energy(0.3, &[1.0]).unwrap();
        let efforts = f.effort_vector(&MacroState::new(s, vec![1.0])).unwrap();
        assert_eq!(efforts.len(), 2);
        assert_relative_eq!(efforts[1], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn gradient_consistency_at_random_states() {
        let f = gas_fn(true, false);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let t = rng.gen_range(0.5..3.0);
            let v = rng.gen_range(0.5..2.0);
            let gas = IdealGasModel::new(1.0, 1.0, 1.0, InfoConstant::natural()).unwrap().with_planck(1.0);
            let e = gas.mean_energy(t);
            let s = gas.entropy_of(e, v).unwrap();
            let efforts = f.effort_vector(&MacroState::new(s, vec![v])).unwrap();

            let hs = 1e-5 * s.abs().max(1.0);
            let fd_t = (f.energy_of_entropy(s + hs, &[v]).unwrap()
                - f.energy_of_entropy(s - hs, &[v]).unwrap())
                / (2.0 * hs);
            assert_relative_eq!(efforts[0], fd_t, max_relative = 1e-4);

            let hv = 1e-5 * v;
            let fd_v = (f.energy_of_entropy(s, &[v + hv]).unwrap()
                - f.energy_of_entropy(s, &[v - hv]).unwrap())
                / (2.0 * hv);
            assert_relative_eq!(efforts[1], fd_v, max_relative = 1e-4);
        }
    }

    #[test]
    fn temperature_consistency_with_multiplier_solve() {
        let set = ising_ring(4);
        let k = InfoConstant::natural();
        let model = EnumeratedEntropyModel::new(Arc::clone(&set), crate::ENERGY, &[], k).unwrap();
        let f = EnergyFunction::new(Arc::new(model));
        let e = -1.5;
        let s = f.entropy_of_energy(e, &[]).unwrap();
        let efforts = f.effort_vector(&MacroState::new(s, vec![])).unwrap();
        let sol = maxent::solve_multipliers(
            &set,
            &std::collections::BTreeMap::from([(crate::ENERGY.to_string(), e)]),
            k,
            &SolverOptions::default(),
        )
        .unwrap();
        let t_from_lambda = -1.0 / sol.lambdas[crate::ENERGY];
        assert_relative_eq!(efforts[0], t_from_lambda, max_relative = 1e-8);
    }

    #[test]
    fn homogeneity_identity_at_gamma_one() {
        let f = gas_fn(true, true);
        let x = MacroState::new(2.0, vec![1.0]);
        let report = f.homogeneity_check(&x, 1.0).unwrap();
        assert_eq!(report.deviation_rel, 0.0);
        assert!(report.passed);
    }

    /// Gas with the full extensive state (S̄, N̄, V̄).
    fn full_state_gas(gibbs: bool) -> (EnergyFunction, MacroState) {
        let gas = IdealGasModel::new(50.0, 1.0, 1.0, InfoConstant::natural())
            .unwrap().with_planck(1.0)
            .with_gibbs_correction(gibbs);
        let t = 1.4;
        let e = gas.mean_energy(t);
        let s = gas.entropy_at(e, gas.n, gas.volume).unwrap();
        let f = EnergyFunction::new(Arc::new(IdealGasEntropyModel::with_state(gas, true, true)));
        (f, MacroState::new(s, vec![gas.n, gas.volume]))
    }

    #[test]
    fn gibbs_corrected_gas_is_homogeneous() {
        let (f, x) = full_state_gas(true);
        let report = f.homogeneity_check(&x, 2.0).unwrap();
        assert!(report.declared_homogeneous);
        assert!(report.passed, "deviation {}", report.deviation_rel);
    }

    #[test]
    fn uncorrected_gas_fails_homogeneity() {
        let (f, x) = full_state_gas(false);
        let report = f.homogeneity_check(&x, 2.0).unwrap();
        assert!(!report.declared_homogeneous);
        assert!(
            !report.passed,
            "uncorrected gas unexpectedly homogeneous, deviation {}",
            report.deviation_rel
        );
        assert!(report.deviation_rel > 1e-4);
    }

    #[test]
    fn chemical_potential_effort_matches_finite_difference() {
        let (f, x) = full_state_gas(true);
        let efforts = f.effort_vector(&x).unwrap();
        // ∂E/∂N at fixed (S, V) equals T·λ_n = μ.
        let h = 1e-5 * x.extras[0];
        let up = f
            .energy_of_entropy(x.entropy, &[x.extras[0] + h, x.extras[1]])
            .unwrap();
        let down = f
            .energy_of_entropy(x.entropy, &[x.extras[0] - h, x.extras[1]])
            .unwrap();
        let fd = (up - down) / (2.0 * h);
        assert_relative_eq!(efforts[1], fd, max_relative = 1e-4);
    }
}
