//! Port-Hamiltonian structure: flows and efforts coupled by a skew-symmetric
//! interconnection.
//!
//! The flow vector [ẋ; w; y] equals S·[∇E(x); z(w); u] with S = −Sᵀ, which
//! makes the power balance P_s + P_d + P_ext = 0 structural. Ports are laid
//! out as (storage | dissipative | external), entropy always first within
//! storage. [`build_reversible`] produces the open-system matrix
//! [[0, −I], [I, 0]]; [`build_irreversible`] wires a macroscopic dissipative
//! law through the entropy-producing converter.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::energy::EnergyFunction;

/// Entrywise skew tolerance for statically assembled matrices.
pub const SKEW_TOL_STATIC: f64 = 1e-14;
/// Entrywise skew tolerance for per-evaluation (state-dependent) matrices.
pub const SKEW_TOL_DYNAMIC: f64 = 1e-12;
/// |eᵀSe| ≤ this × ‖e‖² for any assembled matrix.
pub const CONSERVATION_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PhsError {
    #[error("matrix is not skew-symmetric: max |S + Sᵀ| entry is {max_entry}")]
    NotSkewSymmetric { max_entry: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("state labels must be non-empty with the entropy label first")]
    EntropyNotFirst,
    #[error("dissipative-law evaluation needs a positive temperature, got {0}")]
    NonpositiveTemperature(f64),
    #[error("dissipative law is not passive: z(f)ᵀf = {power} < 0")]
    PassivityViolation { power: f64 },
}

/// Port counts per block, in (storage | dissipative | external) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub storage: usize,
    pub dissipative: usize,
    pub external: usize,
}

impl BlockLayout {
    pub fn dim(&self) -> usize {
        self.storage + self.dissipative + self.external
    }

    pub fn storage_range(&self) -> std::ops::Range<usize> {
        0..self.storage
    }

    pub fn dissipative_range(&self) -> std::ops::Range<usize> {
        self.storage..self.storage + self.dissipative
    }

    pub fn external_range(&self) -> std::ops::Range<usize> {
        self.storage + self.dissipative..self.dim()
    }
}

/// A validated skew-symmetric interconnection with its block layout.
#[derive(Debug, Clone)]
pub struct InterconnectionMatrix {
    entries: DMatrix<f64>,
    layout: BlockLayout,
}

fn check_skew(entries: &DMatrix<f64>, tol: f64) -> Result<(), PhsError> {
    let mut max_entry: f64 = 0.0;
    for i in 0..entries.nrows() {
        for j in 0..entries.ncols() {
            max_entry = max_entry.max((entries[(i, j)] + entries[(j, i)]).abs());
        }
    }
    if max_entry > tol {
        return Err(PhsError::NotSkewSymmetric { max_entry });
    }
    Ok(())
}

impl InterconnectionMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn layout(&self) -> BlockLayout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Flow vector f = S·e.
    pub fn flows(&self, efforts: &[f64]) -> Result<Vec<f64>, PhsError> {
        if efforts.len() != self.dim() {
            return Err(PhsError::DimensionMismatch(format!(
                "effort vector has {} entries, matrix is {}×{}",
                efforts.len(),
                self.dim(),
                self.dim()
            )));
        }
        let e = nalgebra::DVector::from_column_slice(efforts);
        Ok((&self.entries * e).iter().copied().collect())
    }
}

/// Validates and wraps an explicit matrix.
pub fn assemble(entries: DMatrix<f64>, layout: BlockLayout) -> Result<InterconnectionMatrix, PhsError> {
    if !entries.is_square() || entries.nrows() != layout.dim() {
        return Err(PhsError::DimensionMismatch(format!(
            "matrix is {}×{}, layout wants {}",
            entries.nrows(),
            entries.ncols(),
            layout.dim()
        )));
    }
    check_skew(&entries, SKEW_TOL_STATIC)?;
    Ok(InterconnectionMatrix { entries, layout })
}

/// Power split of one effort evaluation.
#[derive(Debug, Clone, Copy)]
pub struct PowerBalance {
    pub p_s: f64,
    pub p_d: f64,
    pub p_ext: f64,
    pub total: f64,
}

/// Splits eᵀ(S e) into storage, dissipative and external contributions.
/// Skew-symmetry forces the total to vanish.
pub fn power_balance(matrix: &InterconnectionMatrix, efforts: &[f64]) -> Result<PowerBalance, PhsError> {
    let flows = matrix.flows(efforts)?;
    let layout = matrix.layout();
    let dot = |r: std::ops::Range<usize>| -> f64 {
        r.map(|i| efforts[i] * flows[i]).sum()
    };
    let p_s = dot(layout.storage_range());
    let p_d = dot(layout.dissipative_range());
    let p_ext = dot(layout.external_range());
    Ok(PowerBalance {
        p_s,
        p_d,
        p_ext,
        total: p_s + p_d + p_ext,
    })
}

type LawFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A memoryless flow-to-effort law e_d = z_d(f_d). Passivity
/// (z_d(f)ᵀf ≥ 0) is declared by the catalog constructors and enforced at
/// every converter evaluation.
#[derive(Clone)]
pub struct DissipativeLaw {
    name: String,
    dim: usize,
    z: LawFn,
}

impl fmt::Debug for DissipativeLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DissipativeLaw({}, dim {})", self.name, self.dim)
    }
}

impl DissipativeLaw {
    pub fn new<F>(name: impl Into<String>, dim: usize, z: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            z: Arc::new(z),
        }
    }

    /// e = R·f, scalar.
    pub fn linear_resistor(resistance: f64) -> Self {
        Self::new(format!("resistor(R={resistance})"), 1, move |f| {
            vec![resistance * f[0]]
        })
    }

    /// Scalar odd polynomial e = Σ c_i · f^(2i+1); passive when all
    /// coefficients are nonnegative.
    pub fn odd_polynomial(coefficients: Vec<f64>) -> Self {
        Self::new(format!("odd_polynomial({coefficients:?})"), 1, move |f| {
            let x = f[0];
            let mut acc = 0.0;
            let mut pow = x;
            for &c in &coefficients {
                acc += c * pow;
                pow *= x * x;
            }
            vec![acc]
        })
    }

    /// The all-zero law (no dissipation).
    pub fn zero(dim: usize) -> Self {
        Self::new("zero", dim, move |_| vec![0.0; dim])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn evaluate(&self, flows: &[f64]) -> Result<Vec<f64>, PhsError> {
        if flows.len() != self.dim {
            return Err(PhsError::DimensionMismatch(format!(
                "law `{}` expects {} flows, got {}",
                self.name,
                self.dim,
                flows.len()
            )));
        }
        Ok((self.z)(flows))
    }
}

/// Converter output: the dissipative efforts plus the entropy rate the
/// dissipated power turns into.
#[derive(Debug, Clone)]
pub struct ConverterEval {
    pub e_d: Vec<f64>,
    pub sigma_i: f64,
    pub p_d: f64,
}

/// Irreversible thermodynamic converter built on a base dissipative law:
/// z: (f_d, T_d) ↦ (z_d(f_d), −σ_i) with σ_i = z_d(f_d)ᵀf_d / T_d. The
/// augmented law is exactly conservative, z(w)ᵀw = 0, and σ_i ≥ 0 realizes
/// the second principle.
#[derive(Debug, Clone)]
pub struct ConverterLaw {
    inner: DissipativeLaw,
    /// When set, entropy production is evaluated at this fixed temperature
    /// instead of the incoming storage temperature.
    temperature_override: Option<f64>,
}

impl ConverterLaw {
    pub fn with_temperature_override(mut self, t: f64) -> Self {
        self.temperature_override = Some(t);
        self
    }

    pub fn inner(&self) -> &DissipativeLaw {
        &self.inner
    }

    pub fn evaluate(&self, f_d: &[f64], t_d: f64) -> Result<ConverterEval, PhsError> {
        let t = self.temperature_override.unwrap_or(t_d);
        if t <= 0.0 {
            return Err(PhsError::NonpositiveTemperature(t));
        }
        let e_d = self.inner.evaluate(f_d)?;
        let p_d: f64 = e_d.iter().zip(f_d).map(|(e, f)| e * f).sum();
        if p_d < 0.0 {
            return Err(PhsError::PassivityViolation { power: p_d });
        }
        Ok(ConverterEval {
            e_d,
            sigma_i: p_d / t,
            p_d,
        })
    }
}

/// Augments a dissipative law into the entropy-producing converter.
pub fn make_converter(z_d: DissipativeLaw) -> ConverterLaw {
    ConverterLaw {
        inner: z_d,
        temperature_override: None,
    }
}

/// User-supplied coupling blocks of the irreversible structure. `j_x`,
/// `j_w`, `j_y` must be skew; `coupling` (K), `g_x`, `g_w` are arbitrary.
#[derive(Debug, Clone)]
pub struct InterconnectionBlocks {
    pub j_x: DMatrix<f64>,
    pub coupling: DMatrix<f64>,
    pub g_x: DMatrix<f64>,
    pub j_w: DMatrix<f64>,
    pub g_w: DMatrix<f64>,
    pub j_y: DMatrix<f64>,
}

impl InterconnectionBlocks {
    /// Zero blocks except an identity `g_x`, which reproduces the reversible
    /// model when the dissipative law vanishes.
    pub fn reversible_like(n_x: usize, n_d: usize, n_ext: usize) -> Self {
        Self {
            j_x: DMatrix::zeros(n_x, n_x),
            coupling: DMatrix::zeros(n_x, n_d),
            g_x: DMatrix::identity(n_x, n_ext),
            j_w: DMatrix::zeros(n_d, n_d),
            g_w: DMatrix::zeros(n_d, n_ext),
            j_y: DMatrix::zeros(n_ext, n_ext),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.j_x.nrows(), self.j_w.nrows(), self.j_y.nrows())
    }

    fn validate(&self) -> Result<(), PhsError> {
        let (n_x, n_d, n_e) = self.dims();
        let want = [
            (self.j_x.shape(), (n_x, n_x), "j_x"),
            (self.coupling.shape(), (n_x, n_d), "coupling"),
            (self.g_x.shape(), (n_x, n_e), "g_x"),
            (self.j_w.shape(), (n_d, n_d), "j_w"),
            (self.g_w.shape(), (n_d, n_e), "g_w"),
            (self.j_y.shape(), (n_e, n_e), "j_y"),
        ];
        for (got, expect, name) in want {
            if got != expect {
                return Err(PhsError::DimensionMismatch(format!(
                    "block {name} is {got:?}, expected {expect:?}"
                )));
            }
        }
        for (m, name) in [(&self.j_x, "j_x"), (&self.j_w, "j_w"), (&self.j_y, "j_y")] {
            check_skew(m, SKEW_TOL_STATIC).map_err(|e| match e {
                PhsError::NotSkewSymmetric { max_entry } => PhsError::DimensionMismatch(format!(
                    "block {name} must be skew-symmetric (max |J + Jᵀ| = {max_entry})"
                )),
                other => other,
            })?;
        }
        Ok(())
    }

    /// The irreversible conservative matrix over ports
    /// (Ṡ̄, f_s | T_d, f_d | T_ext, f_ext) against efforts
    /// (T, e_s | −σ_i, e_d | σ_ext, e_ext); skew by construction.
    pub fn assemble_irreversible(&self) -> Result<InterconnectionMatrix, PhsError> {
        self.validate()?;
        let (n_x, n_d, n_e) = self.dims();
        let layout = BlockLayout {
            storage: 1 + n_x,
            dissipative: 1 + n_d,
            external: 1 + n_e,
        };
        let dim = layout.dim();
        let mut s = DMatrix::zeros(dim, dim);
        let (i_sigma, i_ed, i_sext, i_eext) = (1 + n_x, 2 + n_x, 2 + n_x + n_d, 3 + n_x + n_d);

        // Entropy row: Ṡ̄ picks up −(−σ_i) − σ_ext.
        s[(0, i_sigma)] = -1.0;
        s[(0, i_sext)] = -1.0;
        // f_s rows.
        insert(&mut s, 1, 1, &self.j_x);
        insert_scaled(&mut s, 1, i_ed, &self.coupling, -1.0);
        insert_scaled(&mut s, 1, i_eext, &self.g_x, -1.0);
        // T_d row reads the storage temperature.
        s[(i_sigma, 0)] = 1.0;
        // f_d rows.
        insert(&mut s, i_ed, 1, &self.coupling.transpose());
        insert(&mut s, i_ed, i_ed, &self.j_w);
        insert_scaled(&mut s, i_ed, i_eext, &self.g_w, -1.0);
        // T_ext row.
        s[(i_sext, 0)] = 1.0;
        // f_ext rows.
        insert(&mut s, i_eext, 1, &self.g_x.transpose());
        insert(&mut s, i_eext, i_ed, &self.g_w.transpose());
        insert(&mut s, i_eext, i_eext, &self.j_y);

        check_skew(&s, SKEW_TOL_STATIC)?;
        Ok(InterconnectionMatrix { entries: s, layout })
    }

    /// The dissipative matrix without the converter (ports
    /// Ṡ̄, f_s | f_d | T_ext, f_ext); skew by construction.
    pub fn assemble_dissipative(&self) -> Result<InterconnectionMatrix, PhsError> {
        self.validate()?;
        let (n_x, n_d, n_e) = self.dims();
        let layout = BlockLayout {
            storage: 1 + n_x,
            dissipative: n_d,
            external: 1 + n_e,
        };
        let dim = layout.dim();
        let mut s = DMatrix::zeros(dim, dim);
        let (i_ed, i_sext, i_eext) = (1 + n_x, 1 + n_x + n_d, 2 + n_x + n_d);

        s[(0, i_sext)] = -1.0;
        insert(&mut s, 1, 1, &self.j_x);
        insert_scaled(&mut s, 1, i_ed, &self.coupling, -1.0);
        insert_scaled(&mut s, 1, i_eext, &self.g_x, -1.0);
        insert(&mut s, i_ed, 1, &self.coupling.transpose());
        insert(&mut s, i_ed, i_ed, &self.j_w);
        insert_scaled(&mut s, i_ed, i_eext, &self.g_w, -1.0);
        s[(i_sext, 0)] = 1.0;
        insert(&mut s, i_eext, 1, &self.g_x.transpose());
        insert(&mut s, i_eext, i_ed, &self.g_w.transpose());
        insert(&mut s, i_eext, i_eext, &self.j_y);

        check_skew(&s, SKEW_TOL_STATIC)?;
        Ok(InterconnectionMatrix { entries: s, layout })
    }
}

fn insert(target: &mut DMatrix<f64>, row: usize, col: usize, block: &DMatrix<f64>) {
    insert_scaled(target, row, col, block, 1.0);
}

fn insert_scaled(target: &mut DMatrix<f64>, row: usize, col: usize, block: &DMatrix<f64>, scale: f64) {
    for i in 0..block.nrows() {
        for j in 0..block.ncols() {
            target[(row + i, col + j)] += scale * block[(i, j)];
        }
    }
}

type MatrixFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// Interconnection that is either a fixed matrix or a per-state callback
/// (revalidated for skew-symmetry at every evaluation).
#[derive(Clone)]
pub enum Interconnection {
    Constant(InterconnectionMatrix),
    StateDependent { layout: BlockLayout, f: MatrixFn },
}

impl fmt::Debug for Interconnection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Interconnection::Constant(m) => write!(f, "Constant({}×{})", m.dim(), m.dim()),
            Interconnection::StateDependent { layout, .. } => {
                write!(f, "StateDependent(dim {})", layout.dim())
            }
        }
    }
}

impl Interconnection {
    pub fn layout(&self) -> BlockLayout {
        match self {
            Interconnection::Constant(m) => m.layout(),
            Interconnection::StateDependent { layout, .. } => *layout,
        }
    }

    /// The matrix at state x; callbacks are revalidated per call.
    pub fn matrix_at(&self, x: &[f64]) -> Result<InterconnectionMatrix, PhsError> {
        match self {
            Interconnection::Constant(m) => Ok(m.clone()),
            Interconnection::StateDependent { layout, f } => {
                let entries = f(x);
                if !entries.is_square() || entries.nrows() != layout.dim() {
                    return Err(PhsError::DimensionMismatch(format!(
                        "callback produced {}×{}, layout wants {}",
                        entries.nrows(),
                        entries.ncols(),
                        layout.dim()
                    )));
                }
                check_skew(&entries, SKEW_TOL_DYNAMIC)?;
                Ok(InterconnectionMatrix {
                    entries,
                    layout: *layout,
                })
            }
        }
    }
}

/// Structural skeleton of a PHS: interconnection plus ports, before an
/// energy function is bound.
#[derive(Debug, Clone)]
pub struct PhsStructure {
    pub state_labels: Vec<String>,
    pub interconnection: Interconnection,
    pub converter: Option<ConverterLaw>,
}

impl PhsStructure {
    pub fn state_dim(&self) -> usize {
        self.state_labels.len()
    }

    pub fn layout(&self) -> BlockLayout {
        self.interconnection.layout()
    }
}

/// The reversible open-system structure over the given state labels
/// (entropy first): storage flows equal minus the matching external inputs
/// and external outputs equal the storage efforts.
pub fn build_reversible(labels: &[String]) -> Result<PhsStructure, PhsError> {
    if labels.is_empty() || labels[0] != crate::ENTROPY {
        return Err(PhsError::EntropyNotFirst);
    }
    let n = labels.len();
    let mut s = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        s[(i, n + i)] = -1.0;
        s[(n + i, i)] = 1.0;
    }
    let layout = BlockLayout {
        storage: n,
        dissipative: 0,
        external: n,
    };
    Ok(PhsStructure {
        state_labels: labels.to_vec(),
        interconnection: Interconnection::Constant(InterconnectionMatrix { entries: s, layout }),
        converter: None,
    })
}

/// The irreversible conservative structure: user blocks wired through the
/// entropy-producing converter. With a zero law and zero couplings (identity
/// `g_x`) it reduces to the reversible behavior.
pub fn build_irreversible(
    labels: &[String],
    blocks: InterconnectionBlocks,
    z_d: DissipativeLaw,
) -> Result<PhsStructure, PhsError> {
    if labels.is_empty() || labels[0] != crate::ENTROPY {
        return Err(PhsError::EntropyNotFirst);
    }
    let (n_x, n_d, _) = blocks.dims();
    if labels.len() != 1 + n_x {
        return Err(PhsError::DimensionMismatch(format!(
            "{} state labels against {} storage ports",
            labels.len(),
            1 + n_x
        )));
    }
    if z_d.dim() != n_d {
        return Err(PhsError::DimensionMismatch(format!(
            "dissipative law has dim {}, blocks want {}",
            z_d.dim(),
            n_d
        )));
    }
    let matrix = blocks.assemble_irreversible()?;
    Ok(PhsStructure {
        state_labels: labels.to_vec(),
        interconnection: Interconnection::Constant(matrix),
        converter: Some(make_converter(z_d)),
    })
}

/// A complete model: structure plus Hamiltonian.
pub struct PhsModel {
    pub structure: PhsStructure,
    pub hamiltonian: EnergyFunction,
}

impl PhsModel {
    pub fn new(structure: PhsStructure, hamiltonian: EnergyFunction) -> Result<Self, PhsError> {
        let expected = hamiltonian.state_labels();
        if structure.state_labels != expected {
            return Err(PhsError::DimensionMismatch(format!(
                "structure labels {:?} do not match the Hamiltonian state {:?}",
                structure.state_labels, expected
            )));
        }
        Ok(Self {
            structure,
            hamiltonian,
        })
    }

    /// Reversible model directly over an energy function's state.
    pub fn reversible(hamiltonian: EnergyFunction) -> Result<Self, PhsError> {
        let structure = build_reversible(&hamiltonian.state_labels())?;
        Self::new(structure, hamiltonian)
    }

    pub fn state_labels(&self) -> &[String] {
        &self.structure.state_labels
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn thermo_labels() -> Vec<String> {
        vec![
            crate::ENTROPY.to_string(),
            crate::COUNT.to_string(),
            crate::VOLUME.to_string(),
        ]
    }

    #[test]
    fn assemble_accepts_symplectic_block() {
        let m = nalgebra::dmatrix![0.0, 1.0; -1.0, 0.0];
        let layout = BlockLayout {
            storage: 1,
            dissipative: 0,
            external: 1,
        };
        assert!(assemble(m, layout).is_ok());
    }

    #[test]
    fn assemble_rejects_identity_with_max_entry() {
        let layout = BlockLayout {
            storage: 1,
            dissipative: 0,
            external: 1,
        };
        let err = assemble(DMatrix::identity(2, 2), layout);
        match err {
            Err(PhsError::NotSkewSymmetric { max_entry }) => {
                assert_relative_eq!(max_entry, 2.0);
            }
            other => panic!("expected NotSkewSymmetric, got {other:?}"),
        }
    }

    #[test]
    fn reversible_matrix_matches_printed_six_by_six() {
        let structure = build_reversible(&thermo_labels()).unwrap();
        let m = structure.interconnection.matrix_at(&[]).unwrap();
        #[rustfmt::skip]
        let expect = nalgebra::dmatrix![
            0.0, 0.0, 0.0, -1.0,  0.0,  0.0;
            0.0, 0.0, 0.0,  0.0, -1.0,  0.0;
            0.0, 0.0, 0.0,  0.0,  0.0, -1.0;
            1.0, 0.0, 0.0,  0.0,  0.0,  0.0;
            0.0, 1.0, 0.0,  0.0,  0.0,  0.0;
            0.0, 0.0, 1.0,  0.0,  0.0,  0.0
        ];
        assert_eq!(m.entries(), &expect);
    }

    #[test]
    fn reversible_single_label_is_symplectic_two_by_two() {
        let structure = build_reversible(&[crate::ENTROPY.to_string()]).unwrap();
        let m = structure.interconnection.matrix_at(&[]).unwrap();
        assert_eq!(m.entries(), &nalgebra::dmatrix![0.0, -1.0; 1.0, 0.0]);
    }

    #[test]
    fn reversible_requires_entropy_first() {
        let err = build_reversible(&[crate::COUNT.to_string()]);
        assert!(matches!(err, Err(PhsError::EntropyNotFirst)));
    }

    #[test]
    fn reversible_flows_by_hand() {
        let structure = build_reversible(&thermo_labels()).unwrap();
        let m = structure.interconnection.matrix_at(&[]).unwrap();
        // e = [T, μ, −P, σ_ext, Ṅ_ext, V̇_ext]
        let e = [2.0, 0.5, -1.5, 0.1, 0.2, 0.3];
        let f = m.flows(&e).unwrap();
        assert_eq!(&f[..3], &[-0.1, -0.2, -0.3]);
        assert_eq!(&f[3..], &[2.0, 0.5, -1.5]);
        // P_s = −P_ext.
        let pb = power_balance(&m, &e).unwrap();
        assert_relative_eq!(pb.p_s, -pb.p_ext, max_relative = 1e-14);
        assert_eq!(pb.p_d, 0.0);
        assert!(pb.total.abs() <= CONSERVATION_TOL);
    }

    #[test]
    fn power_balance_zero_effort() {
        let structure = build_reversible(&thermo_labels()).unwrap();
        let m = structure.interconnection.matrix_at(&[]).unwrap();
        let pb = power_balance(&m, &[0.0; 6]).unwrap();
        assert_eq!(pb.p_s, 0.0);
        assert_eq!(pb.p_ext, 0.0);
        assert_eq!(pb.total, 0.0);
    }

    #[test]
    fn random_efforts_conserve_power() {
        let blocks = InterconnectionBlocks {
            j_x: nalgebra::dmatrix![0.0, 0.7; -0.7, 0.0],
            coupling: nalgebra::dmatrix![1.0; -2.0],
            g_x: nalgebra::dmatrix![1.0, 0.0; 0.3, 1.0],
            j_w: DMatrix::zeros(1, 1),
            g_w: nalgebra::dmatrix![0.1, -0.4],
            j_y: nalgebra::dmatrix![0.0, -0.2; 0.2, 0.0],
        };
        let m = blocks.assemble_irreversible().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let e: Vec<f64> = (0..m.dim()).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let pb = power_balance(&m, &e).unwrap();
            let norm2: f64 = e.iter().map(|v| v * v).sum();
            assert!(pb.total.abs() <= CONSERVATION_TOL * norm2.max(1.0));
        }
    }

    #[test]
    fn dissipative_assembly_is_skew() {
        let blocks = InterconnectionBlocks::reversible_like(2, 1, 2);
        let m = blocks.assemble_dissipative().unwrap();
        check_skew(m.entries(), SKEW_TOL_STATIC).unwrap();
        assert_eq!(m.dim(), (1 + 2) + 1 + (1 + 2));
    }

    #[test]
    fn converter_resistor_arithmetic() {
        let conv = make_converter(DissipativeLaw::linear_resistor(2.0));
        let out = conv.evaluate(&[3.0], 300.0).unwrap();
        assert_relative_eq!(out.e_d[0], 6.0);
        assert_relative_eq!(out.sigma_i, 0.06, max_relative = 1e-14);
    }

    #[test]
    fn converter_zero_flow_zero_entropy() {
        let conv = make_converter(DissipativeLaw::linear_resistor(2.0));
        let out = conv.evaluate(&[0.0], 10.0).unwrap();
        assert_eq!(out.sigma_i, 0.0);
    }

    #[test]
    fn converter_is_conservative() {
        let conv = make_converter(DissipativeLaw::odd_polynomial(vec![1.5, 0.3]));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let f = rng.gen_range(-5.0..5.0);
            let t = rng.gen_range(0.1..400.0);
            let out = conv.evaluate(&[f], t).unwrap();
            // z(w)ᵀw = e_d·f_d + (−σ_i)·T_d = 0.
            let residual = out.e_d[0] * f - out.sigma_i * t;
            assert!(
                residual.abs() <= 1e-13 * out.p_d.abs().max(1.0),
                "residual {residual}"
            );
            assert!(out.sigma_i >= 0.0);
        }
    }

    #[test]
    fn converter_rejects_bad_temperature_and_passivity() {
        let conv = make_converter(DissipativeLaw::linear_resistor(2.0));
        assert!(matches!(
            conv.evaluate(&[1.0], 0.0),
            Err(PhsError::NonpositiveTemperature(_))
        ));
        let active = make_converter(DissipativeLaw::linear_resistor(-1.0));
        assert!(matches!(
            active.evaluate(&[1.0], 1.0),
            Err(PhsError::PassivityViolation { .. })
        ));
    }

    #[test]
    fn irreversible_with_zero_law_recovers_reversible_wiring() {
        let labels = vec![crate::ENTROPY.to_string(), crate::VOLUME.to_string()];
        let blocks = InterconnectionBlocks::reversible_like(1, 1, 1);
        let structure =
            build_irreversible(&labels, blocks, DissipativeLaw::zero(1)).unwrap();
        let m = structure.interconnection.matrix_at(&[]).unwrap();
        // Efforts: [T, e_v, −σ_i, e_d, σ_ext, u_v]; zero law makes the
        // dissipative columns inert, leaving Ṡ̄ = −σ_ext, V̇ = −u_v,
        // T_ext = T, f_ext = e_v.
        let e = [2.0, -1.5, 0.0, 0.0, 0.1, 0.3];
        let f = m.flows(&e).unwrap();
        assert_relative_eq!(f[0], -0.1);
        assert_relative_eq!(f[1], -0.3);
        assert_relative_eq!(f[4], 2.0);
        assert_relative_eq!(f[5], -1.5);
    }

    #[test]
    fn state_dependent_interconnection_is_revalidated() {
        let layout = BlockLayout {
            storage: 1,
            dissipative: 0,
            external: 1,
        };
        let good = Interconnection::StateDependent {
            layout,
            f: Arc::new(|x: &[f64]| nalgebra::dmatrix![0.0, -x[0]; x[0], 0.0]),
        };
        assert!(good.matrix_at(&[3.0]).is_ok());

        let bad = Interconnection::StateDependent {
            layout,
            f: Arc::new(|x: &[f64]| nalgebra::dmatrix![0.0, x[0]; x[0], 0.0]),
        };
        assert!(matches!(
            bad.matrix_at(&[3.0]),
            Err(PhsError::NotSkewSymmetric { .. })
        ));
    }

    proptest! {
        #[test]
        fn assembled_blocks_are_always_skew(
            a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0,
            d in -5.0f64..5.0, g in -5.0f64..5.0, h in -5.0f64..5.0,
        ) {
            let blocks = InterconnectionBlocks {
                j_x: nalgebra::dmatrix![0.0, a; -a, 0.0],
                coupling: nalgebra::dmatrix![b; c],
                g_x: nalgebra::dmatrix![d; g],
                j_w: DMatrix::zeros(1, 1),
                g_w: nalgebra::dmatrix![h],
                j_y: DMatrix::zeros(1, 1),
            };
            let m = blocks.assemble_irreversible().unwrap();
            prop_assert!(check_skew(m.entries(), SKEW_TOL_STATIC).is_ok());
            let e: Vec<f64> = (0..m.dim()).map(|i| ((i * 7919 + 13) % 23) as f64 - 11.0).collect();
            let pb = power_balance(&m, &e).unwrap();
            let norm2: f64 = e.iter().map(|v| v * v).sum();
            prop_assert!(pb.total.abs() <= CONSERVATION_TOL * norm2.max(1.0));
        }
    }
}
