//! Microscopic configuration spaces.
//!
//! A system is described by a finite [`Alphabet`] of particle-state symbols;
//! a configuration is a word over that alphabet (a [`Microstate`]). Words
//! form a monoid under concatenation with the empty word as identity.
//! [`CharFunction`]s map microstates to macroscopic observables (energy,
//! particle count, volume); a [`ConstraintSpec`] pins some of them to
//! admissible value sets, and [`accessible_set`] materializes the microstates
//! compatible with those constraints, caching every function value.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::RangeInclusive;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::reduce;

/// Relative tolerance for the extensivity sampling check.
pub const EXTENSIVITY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MicrostateError {
    #[error("alphabet must contain at least one symbol")]
    EmptyAlphabet,
    #[error("duplicate symbol token `{0}` in alphabet")]
    DuplicateSymbol(String),
    #[error("symbol index {index} out of range for alphabet of {size} symbols")]
    SymbolOutOfRange { index: usize, size: usize },
    #[error("unknown symbol token `{0}`")]
    UnknownSymbol(String),
    #[error("microstates belong to different alphabets (`{0}` vs `{1}`)")]
    AlphabetMismatch(String, String),
    #[error("enumeration of {requested} states exceeds budget of {budget}")]
    BudgetExceeded { requested: u128, budget: u64 },
    #[error("constraint references undeclared function label `{0}`")]
    UnknownLabel(String),
    #[error("label `{0}` appears in both fixed and free constraint sets")]
    OverlappingLabel(String),
    #[error("no microstate satisfies the fixed constraints")]
    EmptyAccessibleSet,
    #[error("function `{label}` expects words of length {expected}, got {actual}")]
    DimensionMismatch {
        label: String,
        expected: usize,
        actual: usize,
    },
    #[error("symbol `{0}` carries no numeric payload required by function `{1}`")]
    MissingPayload(String, String),
    #[error("function label `{0}` declared more than once")]
    DuplicateLabel(String),
}

/// One particle-state value: an opaque token plus an optional numeric payload
/// (spin, site energy, height, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct Symbol {
    pub token: String,
    pub value: Option<f64>,
}

impl Symbol {
    pub fn new(token: impl Into<String>, value: f64) -> Self {
        Self {
            token: token.into(),
            value: Some(value),
        }
    }

    pub fn bare(token: impl Into<String>) -> Self {
        Self {
            token: token.into(),
            value: None,
        }
    }
}

/// Finite ordered set of particle-state symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct Alphabet {
    name: String,
    symbols: Vec<Symbol>,
}

impl Alphabet {
    pub fn new(
        name: impl Into<String>,
        symbols: Vec<Symbol>,
    ) -> Result<Arc<Self>, MicrostateError> {
        if symbols.is_empty() {
            return Err(MicrostateError::EmptyAlphabet);
        }
        for (i, s) in symbols.iter().enumerate() {
            if symbols[..i].iter().any(|t| t.token == s.token) {
                return Err(MicrostateError::DuplicateSymbol(s.token.clone()));
            }
        }
        Ok(Arc::new(Self {
            name: name.into(),
            symbols,
        }))
    }

    /// The two-symbol spin alphabet {-1, +1}.
    pub fn spins() -> Arc<Self> {
        Self::new(
            "spin",
            vec![Symbol::new("down", -1.0), Symbol::new("up", 1.0)],
        )
        .expect("static alphabet")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction forbids empty alphabets
    }

    pub fn symbol(&self, index: usize) -> &Symbol {
        &self.symbols[index]
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s.token == token)
    }
}

/// A word over a particle alphabet. The empty word is the monoid identity.
#[derive(Clone)]
pub struct Microstate {
    alphabet: Arc<Alphabet>,
    indices: Vec<u16>,
}

impl fmt::Debug for Microstate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tokens: Vec<&str> = self
            .indices
            .iter()
            .map(|&i| self.alphabet.symbol(i as usize).token.as_str())
            .collect();
        write!(f, "({})", tokens.join(","))
    }
}

impl PartialEq for Microstate {
    fn eq(&self, other: &Self) -> bool {
        self.indices == other.indices && self.same_alphabet(other)
    }
}

impl Microstate {
    pub fn empty(alphabet: Arc<Alphabet>) -> Self {
        Self {
            alphabet,
            indices: Vec::new(),
        }
    }

    pub fn from_indices(
        alphabet: Arc<Alphabet>,
        indices: Vec<u16>,
    ) -> Result<Self, MicrostateError> {
        for &i in &indices {
            if i as usize >= alphabet.len() {
                return Err(MicrostateError::SymbolOutOfRange {
                    index: i as usize,
                    size: alphabet.len(),
                });
            }
        }
        Ok(Self { alphabet, indices })
    }

    pub fn from_tokens(
        alphabet: Arc<Alphabet>,
        tokens: &[&str],
    ) -> Result<Self, MicrostateError> {
        let indices = tokens
            .iter()
            .map(|t| {
                alphabet
                    .index_of(t)
                    .map(|i| i as u16)
                    .ok_or_else(|| MicrostateError::UnknownSymbol((*t).into()))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { alphabet, indices })
    }

    pub fn alphabet(&self) -> &Arc<Alphabet> {
        &self.alphabet
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[u16] {
        &self.indices
    }

    pub fn symbols(&self) -> impl Iterator<Item = &Symbol> {
        self.indices
            .iter()
            .map(|&i| self.alphabet.symbol(i as usize))
    }

    /// Numeric payload of position `j`, or an error naming the function that
    /// required it.
    pub fn payload(&self, j: usize, requiring_label: &str) -> Result<f64, MicrostateError> {
        let sym = self.alphabet.symbol(self.indices[j] as usize);
        sym.value.ok_or_else(|| {
            MicrostateError::MissingPayload(sym.token.clone(), requiring_label.into())
        })
    }

    fn same_alphabet(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.alphabet, &other.alphabet) || *self.alphabet == *other.alphabet
    }

    /// Monoid concatenation.
    pub fn concat(&self, other: &Self) -> Result<Self, MicrostateError> {
        if !self.same_alphabet(other) {
            return Err(MicrostateError::AlphabetMismatch(
                self.alphabet.name().into(),
                other.alphabet.name().into(),
            ));
        }
        let mut indices = Vec::with_capacity(self.len() + other.len());
        indices.extend_from_slice(&self.indices);
        indices.extend_from_slice(&other.indices);
        Ok(Self {
            alphabet: Arc::clone(&self.alphabet),
            indices,
        })
    }
}

/// Monoid concatenation as a free function, mirroring `Microstate::concat`.
pub fn concat(m1: &Microstate, m2: &Microstate) -> Result<Microstate, MicrostateError> {
    m1.concat(m2)
}

/// Cap on the number of words an enumeration may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerationBudget(pub u64);

impl Default for EnumerationBudget {
    fn default() -> Self {
        // 2^26 states; beyond this exact enumeration stops being interactive.
        EnumerationBudget(1 << 26)
    }
}

/// `|alphabet|^length` as u128 (never overflows for budget-sized requests).
fn word_count(alphabet_size: usize, length: usize) -> u128 {
    let mut n: u128 = 1;
    for _ in 0..length {
        n = n.saturating_mul(alphabet_size as u128);
        if n > u128::from(u64::MAX) {
            return n;
        }
    }
    n
}

/// Decodes the `index`-th word of the given length in lexicographic order of
/// symbol indices (most significant digit first).
fn word_at(alphabet: &Arc<Alphabet>, length: usize, index: u64) -> Microstate {
    let base = alphabet.len() as u64;
    let mut digits = vec![0u16; length];
    let mut rem = index;
    for slot in digits.iter_mut().rev() {
        *slot = (rem % base) as u16;
        rem /= base;
    }
    Microstate {
        alphabet: Arc::clone(alphabet),
        indices: digits,
    }
}

/// Iterator over all words of one fixed length, in lexicographic order.
pub struct WordIter {
    alphabet: Arc<Alphabet>,
    length: usize,
    next: u64,
    total: u64,
}

impl Iterator for WordIter {
    type Item = Microstate;

    fn next(&mut self) -> Option<Microstate> {
        if self.next >= self.total {
            return None;
        }
        let w = word_at(&self.alphabet, self.length, self.next);
        self.next += 1;
        Some(w)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let rem = (self.total - self.next) as usize;
        (rem, Some(rem))
    }
}

impl ExactSizeIterator for WordIter {}

/// Enumerates every word of the requested length in lexicographic order of
/// symbol indices. Fails upfront if the count exceeds the budget.
pub fn enumerate_words(
    alphabet: &Arc<Alphabet>,
    length: usize,
    budget: EnumerationBudget,
) -> Result<WordIter, MicrostateError> {
    let count = word_count(alphabet.len(), length);
    if count > u128::from(budget.0) {
        return Err(MicrostateError::BudgetExceeded {
            requested: count,
            budget: budget.0,
        });
    }
    Ok(WordIter {
        alphabet: Arc::clone(alphabet),
        length,
        next: 0,
        total: count as u64,
    })
}

type Evaluator = Arc<dyn Fn(&Microstate) -> Result<f64, MicrostateError> + Send + Sync>;

/// A scalar observable on microstates.
#[derive(Clone)]
pub struct CharFunction {
    label: String,
    declared_extensive: bool,
    /// Largest word length the evaluator is defined on, if bounded.
    max_word_len: Option<usize>,
    evaluator: Evaluator,
}

impl fmt::Debug for CharFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CharFunction")
            .field("label", &self.label)
            .field("declared_extensive", &self.declared_extensive)
            .finish_non_exhaustive()
    }
}

impl CharFunction {
    pub fn new<F>(label: impl Into<String>, declared_extensive: bool, evaluator: F) -> Self
    where
        F: Fn(&Microstate) -> Result<f64, MicrostateError> + Send + Sync + 'static,
    {
        Self {
            label: label.into(),
            declared_extensive,
            max_word_len: None,
            evaluator: Arc::new(evaluator),
        }
    }

    pub fn with_max_word_len(mut self, len: usize) -> Self {
        self.max_word_len = Some(len);
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn declared_extensive(&self) -> bool {
        self.declared_extensive
    }

    pub fn max_word_len(&self) -> Option<usize> {
        self.max_word_len
    }

    pub fn eval(&self, m: &Microstate) -> Result<f64, MicrostateError> {
        (self.evaluator)(m)
    }

    /// Word length (number of particles). Extensive.
    pub fn particle_count(label: impl Into<String>) -> Self {
        Self::new(label, true, |m| Ok(m.len() as f64))
    }

    /// Sum of per-symbol weights, indexed by symbol position in the alphabet.
    /// Extensive by construction.
    pub fn weighted_sum(label: impl Into<String>, weights: Vec<f64>) -> Self {
        let label = label.into();
        Self::new(label, true, move |m| {
            let mut acc = 0.0;
            for &i in m.indices() {
                acc += weights[i as usize];
            }
            Ok(acc)
        })
    }

    /// Sum of symbol payloads (e.g. per-particle kinetic energies).
    pub fn payload_sum(label: impl Into<String>) -> Self {
        let label = label.into();
        let l2 = label.clone();
        Self::new(label, true, move |m| {
            let mut acc = 0.0;
            for j in 0..m.len() {
                acc += m.payload(j, &l2)?;
            }
            Ok(acc)
        })
    }

    /// Cylinder volume `A * max(height payload)` over the word's symbols;
    /// the empty word occupies zero volume. Not extensive. The value depends
    /// on the chosen container geometry; other geometries give different
    /// volume functions.
    pub fn cylinder_volume(label: impl Into<String>, base_area: f64) -> Self {
        let label = label.into();
        let l2 = label.clone();
        Self::new(label, false, move |m| {
            let mut h: f64 = 0.0;
            for j in 0..m.len() {
                h = h.max(m.payload(j, &l2)?);
            }
            Ok(base_area * h)
        })
    }
}

type MembershipFn = Arc<dyn Fn(f64) -> bool + Send + Sync>;

/// Admissible-value set for a fixed constraint.
#[derive(Clone)]
pub enum ValueSet {
    Singleton(f64),
    Finite(Vec<f64>),
    /// Closed interval.
    Interval(f64, f64),
    /// Opaque membership callback.
    Predicate(MembershipFn),
}

impl fmt::Debug for ValueSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueSet::Singleton(v) => write!(f, "Singleton({v})"),
            ValueSet::Finite(v) => write!(f, "Finite({v:?})"),
            ValueSet::Interval(a, b) => write!(f, "Interval[{a}, {b}]"),
            ValueSet::Predicate(_) => write!(f, "Predicate(..)"),
        }
    }
}

impl ValueSet {
    pub fn contains(&self, v: f64) -> bool {
        match self {
            ValueSet::Singleton(s) => v == *s,
            ValueSet::Finite(set) => set.iter().any(|s| v == *s),
            ValueSet::Interval(lo, hi) => v >= *lo && v <= *hi,
            ValueSet::Predicate(p) => p(v),
        }
    }
}

/// Partition of function labels into fixed (admissible sets) and free
/// (target means).
#[derive(Debug, Clone, Default)]
pub struct ConstraintSpec {
    fixed: BTreeMap<String, ValueSet>,
    free: BTreeMap<String, f64>,
}

impl ConstraintSpec {
    pub fn new(
        fixed: BTreeMap<String, ValueSet>,
        free: BTreeMap<String, f64>,
    ) -> Result<Self, MicrostateError> {
        for label in fixed.keys() {
            if free.contains_key(label) {
                return Err(MicrostateError::OverlappingLabel(label.clone()));
            }
        }
        for (label, target) in &free {
            if !target.is_finite() {
                return Err(MicrostateError::UnknownLabel(format!(
                    "free target for `{label}` is not finite"
                )));
            }
        }
        Ok(Self { fixed, free })
    }

    pub fn fixed(&self) -> &BTreeMap<String, ValueSet> {
        &self.fixed
    }

    pub fn free(&self) -> &BTreeMap<String, f64> {
        &self.free
    }
}

/// Materialized accessible microstates with per-function value caches.
/// Immutable after construction; share via `Arc`.
pub struct AccessibleSet {
    alphabet: Arc<Alphabet>,
    microstates: Vec<Microstate>,
    labels: Vec<String>,
    /// values[f][s] = function f evaluated on microstate s.
    values: Vec<Vec<f64>>,
}

impl fmt::Debug for AccessibleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AccessibleSet")
            .field("alphabet", &self.alphabet.name())
            .field("cardinality", &self.microstates.len())
            .field("labels", &self.labels)
            .finish()
    }
}

impl AccessibleSet {
    /// Ω, the number of accessible microstates.
    pub fn cardinality(&self) -> usize {
        self.microstates.len()
    }

    pub fn alphabet(&self) -> &Arc<Alphabet> {
        &self.alphabet
    }

    pub fn microstates(&self) -> &[Microstate] {
        &self.microstates
    }

    pub fn microstate(&self, i: usize) -> &Microstate {
        &self.microstates[i]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Cached values of one function across all accessible microstates.
    pub fn values(&self, label: &str) -> Result<&[f64], MicrostateError> {
        self.label_index(label)
            .map(|i| self.values[i].as_slice())
            .ok_or_else(|| MicrostateError::UnknownLabel(label.into()))
    }

    pub fn values_by_index(&self, index: usize) -> &[f64] {
        &self.values[index]
    }

    /// Builds a set directly from explicit microstates (used by tests and by
    /// oracle comparisons). Values are evaluated and cached here.
    pub fn from_microstates(
        alphabet: Arc<Alphabet>,
        microstates: Vec<Microstate>,
        functions: &[CharFunction],
    ) -> Result<Arc<Self>, MicrostateError> {
        if microstates.is_empty() {
            return Err(MicrostateError::EmptyAccessibleSet);
        }
        check_labels_unique(functions)?;
        let mut values = Vec::with_capacity(functions.len());
        for f in functions {
            let col = microstates
                .iter()
                .map(|m| f.eval(m))
                .collect::<Result<Vec<_>, _>>()?;
            values.push(col);
        }
        Ok(Arc::new(Self {
            alphabet,
            microstates,
            labels: functions.iter().map(|f| f.label().to_owned()).collect(),
            values,
        }))
    }
}

fn check_labels_unique(functions: &[CharFunction]) -> Result<(), MicrostateError> {
    for (i, f) in functions.iter().enumerate() {
        if functions[..i].iter().any(|g| g.label() == f.label()) {
            return Err(MicrostateError::DuplicateLabel(f.label().into()));
        }
    }
    Ok(())
}

/// Enumerates words in `length_range` and keeps exactly those whose fixed
/// function values lie in their admissible sets. All declared function values
/// are cached per kept microstate. Enumeration order (length, then
/// lexicographic) is deterministic regardless of parallelism.
pub fn accessible_set(
    alphabet: &Arc<Alphabet>,
    functions: &[CharFunction],
    spec: &ConstraintSpec,
    length_range: RangeInclusive<usize>,
    budget: EnumerationBudget,
) -> Result<Arc<AccessibleSet>, MicrostateError> {
    check_labels_unique(functions)?;
    let mut fixed: Vec<(usize, &ValueSet)> = Vec::new();
    for (label, set) in spec.fixed() {
        let idx = functions
            .iter()
            .position(|f| f.label() == label)
            .ok_or_else(|| MicrostateError::UnknownLabel(label.clone()))?;
        fixed.push((idx, set));
    }
    for label in spec.free().keys() {
        if !functions.iter().any(|f| f.label() == label) {
            return Err(MicrostateError::UnknownLabel(label.clone()));
        }
    }

    let total: u128 = length_range
        .clone()
        .map(|l| word_count(alphabet.len(), l))
        .sum();
    if total > u128::from(budget.0) {
        return Err(MicrostateError::BudgetExceeded {
            requested: total,
            budget: budget.0,
        });
    }

    let mut microstates: Vec<Microstate> = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); functions.len()];
    for length in length_range {
        let count = word_count(alphabet.len(), length) as u64 as usize;
        // Evaluate and filter one length stratum, preserving lexicographic order.
        let kept: Vec<Result<(Microstate, Vec<f64>), MicrostateError>> =
            reduce::filter_map_ordered(count, |i| {
                let m = word_at(alphabet, length, i as u64);
                let mut row = Vec::with_capacity(functions.len());
                for f in functions {
                    match f.eval(&m) {
                        Ok(v) => row.push(v),
                        Err(e) => return Some(Err(e)),
                    }
                }
                let admitted = fixed.iter().all(|(idx, set)| set.contains(row[*idx]));
                admitted.then_some(Ok((m, row)))
            });
        for item in kept {
            let (m, row) = item?;
            microstates.push(m);
            for (col, v) in values.iter_mut().zip(row) {
                col.push(v);
            }
        }
    }

    if microstates.is_empty() {
        return Err(MicrostateError::EmptyAccessibleSet);
    }
    Ok(Arc::new(AccessibleSet {
        alphabet: Arc::clone(alphabet),
        microstates,
        labels: functions.iter().map(|f| f.label().to_owned()).collect(),
        values,
    }))
}

/// Outcome of the extensivity sampling check.
#[derive(Debug)]
pub struct ExtensivityReport {
    pub passed: bool,
    pub samples_checked: usize,
    /// First violating pair: (m1, m2, f(m1·m2), f(m1) + f(m2)).
    pub counterexample: Option<(Microstate, Microstate, f64, f64)>,
}

/// Samples random word pairs and tests `f(m1·m2) = f(m1) + f(m2)` within
/// `EXTENSIVITY_TOL` relative. Pair lengths respect the function's declared
/// word-length bound when present.
pub fn check_extensivity(
    alphabet: &Arc<Alphabet>,
    f: &CharFunction,
    samples: usize,
    rng_seed: u64,
) -> Result<ExtensivityReport, MicrostateError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let cap = f.max_word_len().unwrap_or(8).min(8).max(1);
    let mut checked = 0;
    for _ in 0..samples {
        let l1 = rng.gen_range(0..=cap);
        let l2 = rng.gen_range(0..=(cap - l1));
        let m1 = random_word(alphabet, l1, &mut rng);
        let m2 = random_word(alphabet, l2, &mut rng);
        let joined = m1.concat(&m2)?;
        let whole = f.eval(&joined)?;
        let parts = f.eval(&m1)? + f.eval(&m2)?;
        checked += 1;
        if (whole - parts).abs() > EXTENSIVITY_TOL * whole.abs().max(1.0) {
            return Ok(ExtensivityReport {
                passed: false,
                samples_checked: checked,
                counterexample: Some((m1, m2, whole, parts)),
            });
        }
    }
    Ok(ExtensivityReport {
        passed: true,
        samples_checked: checked,
        counterexample: None,
    })
}

fn random_word(alphabet: &Arc<Alphabet>, len: usize, rng: &mut ChaCha8Rng) -> Microstate {
    let indices = (0..len)
        .map(|_| rng.gen_range(0..alphabet.len()) as u16)
        .collect();
    Microstate {
        alphabet: Arc::clone(alphabet),
        indices,
    }
}
