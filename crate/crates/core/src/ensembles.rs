//! Closed-form statistical-ensemble models.
//!
//! The thermal-contact ensembles (canonical, isothermal-isobaric,
//! grand-canonical, and the fully open T-P-μ case) assign each microstate an
//! unnormalized log-weight built from the intensive quantities; the adiabatic
//! (no-thermal-contact) ensembles are uniform over the accessible set. Both
//! agree with the general Boltzmann machinery in [`crate::maxent`] under the
//! multiplier mapping λ_e = −1/T, λ_n = μ/T, λ_v = −P/T.
//!
//! Also here: the analytic ideal-gas partition function (never enumerated)
//! and the Ising quadratic energy.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::maxent::{self, Distribution, InfoConstant};
use crate::microstate::{AccessibleSet, CharFunction, Microstate, MicrostateError};

/// 2019 SI Planck constant, J·s.
pub const PLANCK: f64 = 6.62607015e-34;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("ensemble `{kind}` requires intensive quantity `{which}`")]
    MissingIntensive { kind: &'static str, which: &'static str },
    #[error("temperature must be positive, got {0}")]
    NonpositiveTemperature(f64),
    #[error("ideal gas parameters must be positive (N ≥ 1, V > 0, m > 0, h > 0)")]
    BadIdealGas,
    #[error("coupling matrix must be symmetric with zero diagonal")]
    BadCoupling,
    #[error(transparent)]
    Microstate(#[from] MicrostateError),
    #[error(transparent)]
    Maxent(#[from] maxent::MaxentError),
}

/// The Table-2 ensemble rows, identified by which functions the experiment
/// fixes and which fluctuate with prescribed means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleKind {
    /// Everything fixed, including the surprisal: isolated system.
    Microcanonical,
    /// Fixed count and surprisal; energy and volume fluctuate.
    IsoenthalpicIsobaric,
    /// Fixed count and volume; energy fluctuates at temperature T.
    Canonical,
    /// Fixed count; energy and volume fluctuate at (T, P).
    IsothermalIsobaric,
    /// Fixed volume; energy and count fluctuate at (T, μ).
    GrandCanonical,
    /// Nothing fixed; energy, count, volume fluctuate at (T, P, μ).
    UnnamedTPmu,
}

impl EnsembleKind {
    pub fn tag(&self) -> &'static str {
        match self {
            EnsembleKind::Microcanonical => "microcanonical",
            EnsembleKind::IsoenthalpicIsobaric => "isoenthalpic_isobaric",
            EnsembleKind::Canonical => "canonical",
            EnsembleKind::IsothermalIsobaric => "isothermal_isobaric",
            EnsembleKind::GrandCanonical => "grand_canonical",
            EnsembleKind::UnnamedTPmu => "unnamed_TPmu",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Some(match tag {
            "microcanonical" => EnsembleKind::Microcanonical,
            "isoenthalpic_isobaric" => EnsembleKind::IsoenthalpicIsobaric,
            "canonical" => EnsembleKind::Canonical,
            "isothermal_isobaric" => EnsembleKind::IsothermalIsobaric,
            "grand_canonical" => EnsembleKind::GrandCanonical,
            "unnamed_TPmu" => EnsembleKind::UnnamedTPmu,
            _ => return None,
        })
    }

    /// Labels the experiment pins to admissible values.
    pub fn fixed_labels(&self) -> &'static [&'static str] {
        match self {
            EnsembleKind::Microcanonical => {
                &[crate::ENERGY, crate::COUNT, crate::VOLUME, crate::ENTROPY]
            }
            EnsembleKind::IsoenthalpicIsobaric => &[crate::COUNT, crate::ENTROPY],
            EnsembleKind::Canonical => &[crate::COUNT, crate::VOLUME],
            EnsembleKind::IsothermalIsobaric => &[crate::COUNT],
            EnsembleKind::GrandCanonical => &[crate::VOLUME],
            EnsembleKind::UnnamedTPmu => &[],
        }
    }

    /// Labels whose means fluctuate (empty for adiabatic rows).
    pub fn free_labels(&self) -> &'static [&'static str] {
        match self {
            EnsembleKind::Microcanonical => &[],
            EnsembleKind::IsoenthalpicIsobaric => &[crate::ENERGY, crate::VOLUME],
            EnsembleKind::Canonical => &[crate::ENERGY],
            EnsembleKind::IsothermalIsobaric => &[crate::ENERGY, crate::VOLUME],
            EnsembleKind::GrandCanonical => &[crate::ENERGY, crate::COUNT],
            EnsembleKind::UnnamedTPmu => &[crate::ENERGY, crate::COUNT, crate::VOLUME],
        }
    }

    /// No thermal contact: the surprisal is experimentally pinned and every
    /// accessible microstate is equally probable.
    pub fn is_adiabatic(&self) -> bool {
        matches!(
            self,
            EnsembleKind::Microcanonical | EnsembleKind::IsoenthalpicIsobaric
        )
    }
}

/// Intensive quantities driving a thermal-contact ensemble.
#[derive(Debug, Clone, Copy, Default)]
pub struct Intensives {
    pub temperature: Option<f64>,
    pub pressure: Option<f64>,
    pub chemical_potential: Option<f64>,
}

impl Intensives {
    pub fn at_temperature(t: f64) -> Self {
        Self {
            temperature: Some(t),
            ..Default::default()
        }
    }
}

/// Per-microstate values entering an ensemble weight.
#[derive(Debug, Clone, Copy, Default)]
pub struct FunctionValues {
    pub energy: f64,
    pub count: f64,
    pub volume: f64,
}

fn need(
    kind: &EnsembleKind,
    v: Option<f64>,
    which: &'static str,
) -> Result<f64, EnsembleError> {
    v.ok_or(EnsembleError::MissingIntensive {
        kind: kind.tag(),
        which,
    })
}

/// Unnormalized log-weight of one microstate under the ensemble:
/// canonical −F_e/(kT); isothermal-isobaric −(F_e + P·F_v)/(kT);
/// grand-canonical −(F_e − μ·F_n)/(kT); fully open −(F_e + P·F_v − μ·F_n)/(kT).
/// Adiabatic rows weight every state equally (log-weight 0).
pub fn ensemble_exponent(
    kind: EnsembleKind,
    intensives: &Intensives,
    values: &FunctionValues,
    k: InfoConstant,
) -> Result<f64, EnsembleError> {
    if kind.is_adiabatic() {
        return Ok(0.0);
    }
    let t = need(&kind, intensives.temperature, "temperature")?;
    if t <= 0.0 {
        return Err(EnsembleError::NonpositiveTemperature(t));
    }
    let kt = k.k() * t;
    let log_weight = match kind {
        EnsembleKind::Canonical => -values.energy / kt,
        EnsembleKind::IsothermalIsobaric => {
            let p = need(&kind, intensives.pressure, "pressure")?;
            -(values.energy + p * values.volume) / kt
        }
        EnsembleKind::GrandCanonical => {
            let mu = need(&kind, intensives.chemical_potential, "chemical_potential")?;
            -(values.energy - mu * values.count) / kt
        }
        EnsembleKind::UnnamedTPmu => {
            let p = need(&kind, intensives.pressure, "pressure")?;
            let mu = need(&kind, intensives.chemical_potential, "chemical_potential")?;
            -(values.energy + p * values.volume - mu * values.count) / kt
        }
        EnsembleKind::Microcanonical | EnsembleKind::IsoenthalpicIsobaric => unreachable!(),
    };
    Ok(log_weight)
}

/// The multiplier map realizing the ensemble exponent: λ_e = −1/T,
/// λ_n = μ/T, λ_v = −P/T, restricted to the ensemble's free labels.
pub fn lambdas_from_intensives(
    kind: EnsembleKind,
    intensives: &Intensives,
) -> Result<BTreeMap<String, f64>, EnsembleError> {
    let mut out = BTreeMap::new();
    if kind.is_adiabatic() {
        return Ok(out);
    }
    let t = need(&kind, intensives.temperature, "temperature")?;
    if t <= 0.0 {
        return Err(EnsembleError::NonpositiveTemperature(t));
    }
    for &label in kind.free_labels() {
        let lam = match label {
            l if l == crate::ENERGY => -1.0 / t,
            l if l == crate::COUNT => {
                need(&kind, intensives.chemical_potential, "chemical_potential")? / t
            }
            l if l == crate::VOLUME => -need(&kind, intensives.pressure, "pressure")? / t,
            _ => unreachable!(),
        };
        out.insert(label.to_string(), lam);
    }
    Ok(out)
}

/// Equilibrium distribution of the ensemble over an accessible set:
/// normalized exponent weights for thermal rows, uniform for adiabatic rows.
pub fn ensemble_distribution(
    kind: EnsembleKind,
    set: &Arc<AccessibleSet>,
    intensives: &Intensives,
    k: InfoConstant,
) -> Result<Distribution, EnsembleError> {
    if kind.is_adiabatic() {
        return Ok(Distribution::uniform(Arc::clone(set)));
    }
    let lambdas = lambdas_from_intensives(kind, intensives)?;
    Ok(maxent::boltzmann_distribution(set, &lambdas, k)?)
}

/// Microcanonical entropy k·ln Ω.
pub fn microcanonical_entropy(omega: u64, k: InfoConstant) -> f64 {
    k.k() * (omega as f64).ln()
}

/// Ideal gas of N non-interacting atoms: analytic log-partition only, the
/// continuous microstate space is never enumerated.
#[derive(Debug, Clone, Copy)]
pub struct IdealGasModel {
    /// Particle count (enters the formulas as a real scale).
    pub n: f64,
    /// Container volume, m³.
    pub volume: f64,
    /// Atom mass, kg.
    pub mass: f64,
    /// Planck constant, J·s.
    pub h: f64,
    pub k: InfoConstant,
    /// When set, subtracts the indistinguishability term k·(N ln N − N)
    /// (two-term Stirling form of k·ln N!) from k·ln Z, which restores
    /// degree-1 homogeneity of the energy function.
    pub gibbs_correction: bool,
}

/// Macroscopic state of the ideal gas at one temperature.
#[derive(Debug, Clone, Copy)]
pub struct IdealGasState {
    pub mean_energy: f64,
    pub entropy: f64,
    pub pressure: f64,
}

impl IdealGasModel {
    pub fn new(n: f64, volume: f64, mass: f64, k: InfoConstant) -> Result<Self, EnsembleError> {
        if !(n >= 1.0) || !(volume > 0.0) || !(mass > 0.0) {
            return Err(EnsembleError::BadIdealGas);
        }
        Ok(Self {
            n,
            volume,
            mass,
            h: PLANCK,
            k,
            gibbs_correction: false,
        })
    }

    pub fn with_gibbs_correction(mut self, on: bool) -> Self {
        self.gibbs_correction = on;
        self
    }

    /// Overrides the Planck constant (natural-unit setups use h = 1).
    pub fn with_planck(mut self, h: f64) -> Self {
        self.h = h;
        self
    }

    /// k·ln Z(T | N, V) = k·[N ln V + (3N/2) ln(2π m k T / h²)], evaluated
    /// in log space (Z itself would overflow for macroscopic N).
    pub fn log_partition(&self, temperature: f64) -> Result<f64, EnsembleError> {
        self.log_partition_at(temperature, self.n, self.volume)
    }

    /// Same, with explicit particle count and volume.
    pub fn log_partition_at(&self, t: f64, n: f64, v: f64) -> Result<f64, EnsembleError> {
        if t <= 0.0 {
            return Err(EnsembleError::NonpositiveTemperature(t));
        }
        if !(n >= 1.0) || !(v > 0.0) {
            return Err(EnsembleError::BadIdealGas);
        }
        let k = self.k.k();
        let mut ln_z = n * v.ln()
            + 1.5 * n * (2.0 * std::f64::consts::PI * self.mass * k * t / (self.h * self.h)).ln();
        if self.gibbs_correction {
            ln_z -= n * n.ln() - n;
        }
        Ok(k * ln_z)
    }

    /// Mean energy from the analytic derivative of k·ln Z with respect to
    /// the energy multiplier λ_e = −1/T.
    pub fn mean_energy(&self, temperature: f64) -> f64 {
        let lambda_e = -1.0 / temperature;
        -1.5 * self.n * self.k.k() / lambda_e
    }

    /// Mean energy, entropy, and pressure at temperature T. The entropy is
    /// the Legendre value k lnZ + E/T and P·V = N·k·T holds identically.
    pub fn state(&self, temperature: f64) -> Result<IdealGasState, EnsembleError> {
        let k_ln_z = self.log_partition(temperature)?;
        let e = self.mean_energy(temperature);
        Ok(IdealGasState {
            mean_energy: e,
            entropy: k_ln_z + e / temperature,
            pressure: self.n * self.k.k() * temperature / self.volume,
        })
    }

    /// Entropy as a function of mean energy and volume (entropy
    /// representation): T is eliminated via E = (3/2)NkT.
    pub fn entropy_of(&self, mean_energy: f64, volume: f64) -> Result<f64, EnsembleError> {
        self.entropy_at(mean_energy, self.n, volume)
    }

    /// Entropy at explicit (E, N, V).
    pub fn entropy_at(&self, e: f64, n: f64, v: f64) -> Result<f64, EnsembleError> {
        let t = self.temperature_at(e, n)?;
        Ok(self.log_partition_at(t, n, v)? + e / t)
    }

    pub fn temperature_of(&self, mean_energy: f64) -> Result<f64, EnsembleError> {
        self.temperature_at(mean_energy, self.n)
    }

    pub fn temperature_at(&self, e: f64, n: f64) -> Result<f64, EnsembleError> {
        let t = 2.0 * e / (3.0 * n * self.k.k());
        if t <= 0.0 {
            return Err(EnsembleError::NonpositiveTemperature(t));
        }
        Ok(t)
    }

    /// Count multiplier λ_n = −∂S/∂N at (E, N, V), analytic:
    /// λ_n = −k·[ln V + (3/2)·ln(4πmE/(3Nh²)) − gibbs·ln N].
    pub fn lambda_count(&self, e: f64, n: f64, v: f64) -> f64 {
        let k = self.k.k();
        let c = 4.0 * std::f64::consts::PI * self.mass / (3.0 * self.h * self.h);
        let mut ds_dn = k * v.ln() + 1.5 * k * (c * e / n).ln();
        if self.gibbs_correction {
            ds_dn -= k * n.ln();
        }
        -ds_dn
    }
}

/// Ising spin system: symmetric zero-diagonal exchange matrix over spins ±1.
#[derive(Debug, Clone)]
pub struct IsingModel {
    coupling: DMatrix<f64>,
}

impl IsingModel {
    pub fn new(coupling: DMatrix<f64>) -> Result<Self, EnsembleError> {
        if !coupling.is_square() {
            return Err(EnsembleError::BadCoupling);
        }
        for i in 0..coupling.nrows() {
            if coupling[(i, i)] != 0.0 {
                return Err(EnsembleError::BadCoupling);
            }
            for j in 0..i {
                if coupling[(i, j)] != coupling[(j, i)] {
                    return Err(EnsembleError::BadCoupling);
                }
            }
        }
        Ok(Self { coupling })
    }

    /// Nearest-neighbour ring of `n` spins with uniform exchange energy `j`.
    pub fn ring(n: usize, j: f64) -> Self {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            let next = (i + 1) % n;
            if next != i {
                m[(i, next)] += j;
                m[(next, i)] += j;
            }
        }
        Self { coupling: m }
    }

    pub fn dimension(&self) -> usize {
        self.coupling.nrows()
    }

    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.coupling
    }

    /// −½ mᵀ J m over the leading |m|×|m| block; words longer than the
    /// matrix have no defined energy.
    pub fn energy(&self, m: &Microstate) -> Result<f64, MicrostateError> {
        let len = m.len();
        if len > self.dimension() {
            return Err(MicrostateError::DimensionMismatch {
                label: "ising".into(),
                expected: self.dimension(),
                actual: len,
            });
        }
        let mut spins = Vec::with_capacity(len);
        for j in 0..len {
            spins.push(m.payload(j, "ising")?);
        }
        let mut quad = 0.0;
        for i in 0..len {
            for j in 0..len {
                quad += spins[i] * self.coupling[(i, j)] * spins[j];
            }
        }
        Ok(-0.5 * quad)
    }

    /// The energy as a characterizing function (not extensive for nonzero
    /// off-diagonal coupling).
    pub fn char_function(&self, label: impl Into<String>) -> CharFunction {
        let model = self.clone();
        let dim = self.dimension();
        CharFunction::new(label, false, move |m| model.energy(m)).with_max_word_len(dim)
    }
}

/// Free function mirroring [`IsingModel::energy`].
pub fn ising_energy(m: &Microstate, model: &IsingModel) -> Result<f64, MicrostateError> {
    if m.len() != model.dimension() {
        return Err(MicrostateError::DimensionMismatch {
            label: "ising".into(),
            expected: model.dimension(),
            actual: m.len(),
        });
    }
    model.energy(m)
}
