//! Derivation of macroscopic port-Hamiltonian system (PHS) models from
//! microscopic statistical descriptions.
//!
//! The pipeline, bottom to top:
//!
//! 1. [`microstate`] — particle alphabets, configuration words, characterizing
//!    functions, and constraint filtering into accessible microstate sets.
//! 2. [`maxent`] — statistical entropy, partition functions, Boltzmann
//!    equilibrium distributions, and the Lagrange-multiplier solver.
//! 3. [`ensembles`] — closed-form models: statistical-ensemble weights,
//!    the analytic ideal gas, and the Ising energy.
//! 4. [`energy`] — conversion between the entropy representation S(E, θ) and
//!    the energy representation E(S, θ), with effort (gradient) evaluation.
//! 5. [`phs`] — skew-symmetric interconnections, power balance, and the
//!    reversible/irreversible conservative structures.
//! 6. [`sim`] — quasi-static trajectory integration with energy/entropy
//!    ledgers, including coupled-subsystem equilibration.
//!
//! Heavy inner loops (enumeration filtering, partition and expectation sums)
//! run on rayon when the `parallel` feature is enabled (the default) and fall
//! back to sequential code otherwise. Reductions use a fixed-shape pairwise
//! tree, so results are bit-identical across thread counts and between the
//! parallel and sequential builds.

pub mod energy;
pub mod ensembles;
pub mod maxent;
pub mod microstate;
pub mod phs;
pub mod reduce;
pub mod sim;

pub use energy::{Branch, EnergyFunction, EntropyModel, MacroState};
pub use ensembles::{EnsembleKind, IdealGasModel, Intensives, IsingModel};
pub use maxent::{
    solve_multipliers, Distribution, EquilibriumSolution, InfoConstant, SolverOptions,
};
pub use microstate::{
    accessible_set, AccessibleSet, Alphabet, CharFunction, ConstraintSpec, EnumerationBudget,
    Microstate, Symbol, ValueSet,
};
pub use phs::{build_irreversible, build_reversible, DissipativeLaw, PhsModel};
pub use sim::{couple_and_equilibrate, run, InputSignal, Signal, TrajectoryLedger};

/// Label under which the energy function is conventionally registered.
pub const ENERGY: &str = "energy";
/// Label for the particle-count function.
pub const COUNT: &str = "count";
/// Label for the volume function.
pub const VOLUME: &str = "volume";
/// Label for the surprisal/entropy pseudo-function used by adiabatic
/// ensemble rows (never enumerated, only named in fixed-constraint sets).
pub const ENTROPY: &str = "entropy";
