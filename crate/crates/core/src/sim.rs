//! Quasi-static trajectory integration.
//!
//! Every effort evaluation is a full re-equilibration of the microscopic
//! model at the current extensive state (warm-started internally), so a
//! trajectory is a succession of thermodynamic equilibria. Time integration
//! is explicit midpoint with a fixed base step; a step whose target state
//! leaves the attainable domain is rejected and retried at half the step,
//! up to 20 halvings. The [`TrajectoryLedger`] records state, efforts, port
//! powers, and entropy rates per step and carries the conservation checks.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::energy::{EnergyError, MacroState};
use crate::phs::{PhsError, PhsModel};

/// Per-row tolerance on |P_s + P_d + P_ext| relative to the power scale.
pub const BALANCE_TOL: f64 = 1e-9;
/// Maximum step halvings before a rejected step becomes an error.
pub const MAX_HALVINGS: u32 = 20;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("time step and horizon must be positive (dt = {dt}, t_end = {t_end})")]
    BadTimeGrid { dt: f64, t_end: f64 },
    #[error("input signal `{label}` is not finite at t = {time}")]
    NonFiniteInput { label: String, time: f64 },
    #[error("state left the attainable domain at t = {time} (after {halvings} halvings): {source}")]
    StateOutOfDomain {
        time: f64,
        halvings: u32,
        source: EnergyError,
    },
    #[error("dissipative algebraic loop did not converge")]
    AlgebraicLoop,
    #[error("power balance violated at t = {time}: defect {defect}")]
    BalanceViolation { time: f64, defect: f64 },
    #[error("model has no converter for its dissipative ports")]
    MissingConverter,
    #[error(transparent)]
    Phs(#[from] PhsError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

type SignalFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// One external port drive.
#[derive(Clone)]
pub enum Signal {
    Constant(f64),
    /// value(t) = start + rate·t
    Ramp { start: f64, rate: f64 },
    /// Piecewise-linear interpolation, clamped outside the sample range.
    Samples { times: Vec<f64>, values: Vec<f64> },
    Func(SignalFn),
}

impl fmt::Debug for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Signal::Constant(v) => write!(f, "Constant({v})"),
            Signal::Ramp { start, rate } => write!(f, "Ramp({start} + {rate}·t)"),
            Signal::Samples { times, .. } => write!(f, "Samples({} points)", times.len()),
            Signal::Func(_) => write!(f, "Func(..)"),
        }
    }
}

impl Signal {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Signal::Constant(v) => *v,
            Signal::Ramp { start, rate } => start + rate * t,
            Signal::Samples { times, values } => {
                if times.is_empty() {
                    return 0.0;
                }
                if t <= times[0] {
                    return values[0];
                }
                if t >= *times.last().unwrap() {
                    return *values.last().unwrap();
                }
                let i = times.partition_point(|&x| x <= t).saturating_sub(1);
                let (t0, t1) = (times[i], times[i + 1]);
                let w = (t - t0) / (t1 - t0);
                values[i] * (1.0 - w) + values[i + 1] * w
            }
            Signal::Func(f) => f(t),
        }
    }
}

/// External drives keyed by port label; missing ports read as zero.
#[derive(Debug, Clone, Default)]
pub struct InputSignal {
    signals: BTreeMap<String, Signal>,
}

impl InputSignal {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn with(mut self, label: impl Into<String>, signal: Signal) -> Self {
        self.signals.insert(label.into(), signal);
        self
    }

    pub fn set(&mut self, label: impl Into<String>, signal: Signal) {
        self.signals.insert(label.into(), signal);
    }

    fn sample(&self, labels: &[String], t: f64) -> Result<Vec<f64>, SimError> {
        let mut out = Vec::with_capacity(labels.len());
        for label in labels {
            let v = self.signals.get(label).map_or(0.0, |s| s.at(t));
            if !v.is_finite() {
                return Err(SimError::NonFiniteInput {
                    label: label.clone(),
                    time: t,
                });
            }
            out.push(v);
        }
        Ok(out)
    }
}

/// One full evaluation of the model at (x, u).
#[derive(Debug, Clone)]
pub struct PortEval {
    /// E(x) from the re-equilibration.
    pub energy: f64,
    /// Storage efforts ∇E(x).
    pub efforts: Vec<f64>,
    /// Storage flows ẋ.
    pub xdot: Vec<f64>,
    /// External outputs y.
    pub outputs: Vec<f64>,
    pub p_s: f64,
    pub p_d: f64,
    pub p_ext: f64,
    pub sigma_i: f64,
    pub sigma_ext: f64,
    pub balance_defect: f64,
}

/// External port labels of a model: the reversible structure mirrors the
/// state labels; irreversible structures have an entropy port plus the
/// block-defined ports.
pub fn external_labels(model: &PhsModel) -> Vec<String> {
    let layout = model.structure.layout();
    let mut labels = Vec::with_capacity(layout.external);
    labels.push(crate::ENTROPY.to_string());
    if layout.dissipative == 0 {
        // Reversible: ports pair one-to-one with the state.
        labels.extend_from_slice(&model.structure.state_labels[1..]);
    } else {
        for i in 1..layout.external {
            labels.push(format!("ext{i}"));
        }
    }
    labels
}

/// Evaluates efforts, flows, and the power split at one state. Dissipative
/// ports are closed by fixed-point iteration on the converter law (a single
/// pass when the law does not feed back into its own flows).
pub fn evaluate(model: &PhsModel, x: &[f64], u: &[f64]) -> Result<PortEval, SimError> {
    let layout = model.structure.layout();
    if x.len() != layout.storage {
        return Err(SimError::Phs(PhsError::DimensionMismatch(format!(
            "state has {} entries, storage block wants {}",
            x.len(),
            layout.storage
        ))));
    }
    let macro_state = MacroState::new(x[0], x[1..].to_vec());
    let (energy, efforts) = model.hamiltonian.energy_and_efforts(&macro_state)?;
    evaluate_given(model, x, u, energy, &efforts)
}

/// As [`evaluate`], reusing an already computed re-equilibration
/// (energy and storage efforts) at `x`.
pub fn evaluate_given(
    model: &PhsModel,
    x: &[f64],
    u: &[f64],
    energy: f64,
    efforts: &[f64],
) -> Result<PortEval, SimError> {
    let layout = model.structure.layout();
    if u.len() != layout.external {
        return Err(SimError::Phs(PhsError::DimensionMismatch(format!(
            "input has {} entries, external block wants {}",
            u.len(),
            layout.external
        ))));
    }
    let matrix = model.structure.interconnection.matrix_at(x)?;

    let n_d = layout.dissipative;
    let mut z_efforts = vec![0.0; n_d];
    let mut sigma_i = 0.0;
    let mut p_d_raw = 0.0;

    let assemble_efforts = |z: &[f64]| -> Vec<f64> {
        let mut e = Vec::with_capacity(layout.dim());
        e.extend_from_slice(efforts);
        e.extend_from_slice(z);
        e.extend_from_slice(u);
        e
    };

    if n_d > 0 {
        let converter = model
            .structure
            .converter
            .as_ref()
            .ok_or(SimError::MissingConverter)?;
        let mut converged = false;
        for _ in 0..200 {
            let e_full = assemble_efforts(&z_efforts);
            let flows = matrix.flows(&e_full)?;
            let w = &flows[layout.dissipative_range()];
            let t_d = w[0];
            let out = converter.evaluate(&w[1..], t_d)?;
            let mut new_z = Vec::with_capacity(n_d);
            new_z.push(-out.sigma_i);
            new_z.extend_from_slice(&out.e_d);
            let delta = new_z
                .iter()
                .zip(&z_efforts)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            let scale = new_z.iter().map(|v| v.abs()).fold(1.0f64, f64::max);
            sigma_i = out.sigma_i;
            p_d_raw = out.p_d;
            z_efforts = new_z;
            if delta <= 1e-13 * scale {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(SimError::AlgebraicLoop);
        }
    }
    let _ = p_d_raw;

    let e_full = assemble_efforts(&z_efforts);
    let flows = matrix.flows(&e_full)?;
    let pb = crate::phs::power_balance(&matrix, &e_full)?;

    Ok(PortEval {
        energy,
        efforts: efforts.to_vec(),
        xdot: flows[layout.storage_range()].to_vec(),
        outputs: flows[layout.external_range()].to_vec(),
        p_s: pb.p_s,
        p_d: pb.p_d,
        p_ext: pb.p_ext,
        sigma_i,
        sigma_ext: u[0],
        balance_defect: pb.total,
    })
}

/// One ledger row, recorded at a step start.
#[derive(Debug, Clone, Serialize)]
pub struct LedgerRow {
    pub time: f64,
    pub state: Vec<f64>,
    pub efforts: Vec<f64>,
    pub energy: f64,
    pub p_s: f64,
    pub p_d: f64,
    pub p_ext: f64,
    pub sigma_i: f64,
    pub sigma_ext: f64,
    pub balance_defect: f64,
    /// Width of the step this row opens; zero for the terminal row.
    pub dt: f64,
}

fn make_row(time: f64, x: &[f64], eval: &PortEval, dt: f64) -> LedgerRow {
    LedgerRow {
        time,
        state: x.to_vec(),
        efforts: eval.efforts.clone(),
        energy: eval.energy,
        p_s: eval.p_s,
        p_d: eval.p_d,
        p_ext: eval.p_ext,
        sigma_i: eval.sigma_i,
        sigma_ext: eval.sigma_ext,
        balance_defect: eval.balance_defect,
        dt,
    }
}

/// Summary exported alongside the CSV ledger.
#[derive(Debug, Clone, Serialize)]
pub struct LedgerSummary {
    pub state_labels: Vec<String>,
    pub steps: usize,
    pub t_end: f64,
    pub terminal_state: Vec<f64>,
    pub initial_energy: f64,
    pub terminal_energy: f64,
    /// |E(end) − E(0) − ∫P_s dt|.
    pub energy_balance_defect: f64,
    pub max_balance_defect: f64,
    pub min_sigma_i: f64,
    pub entropy_change: f64,
    pub integral_sigma_ext: f64,
    pub integral_sigma_i: f64,
}

/// Time-ordered record of one simulation run.
#[derive(Debug, Clone)]
pub struct TrajectoryLedger {
    pub state_labels: Vec<String>,
    pub rows: Vec<LedgerRow>,
}

impl TrajectoryLedger {
    pub fn terminal(&self) -> &LedgerRow {
        self.rows.last().expect("ledger never empty")
    }

    /// Rectangle-rule integral of a per-row quantity over the step widths.
    fn integrate<F: Fn(&LedgerRow) -> f64>(&self, f: F) -> f64 {
        self.rows.iter().map(|r| f(r) * r.dt).sum()
    }

    pub fn integral_stored_power(&self) -> f64 {
        self.integrate(|r| r.p_s)
    }

    pub fn integral_sigma_ext(&self) -> f64 {
        self.integrate(|r| r.sigma_ext)
    }

    pub fn integral_sigma_i(&self) -> f64 {
        self.integrate(|r| r.sigma_i)
    }

    /// |E(end) − E(0) − ∫P_s dt|, the cumulative conservation defect.
    pub fn energy_balance_defect(&self) -> f64 {
        let e0 = self.rows.first().expect("ledger never empty").energy;
        let e1 = self.terminal().energy;
        (e1 - e0 - self.integral_stored_power()).abs()
    }

    pub fn max_balance_defect(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.balance_defect.abs())
            .fold(0.0, f64::max)
    }

    pub fn min_sigma_i(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.sigma_i)
            .fold(f64::INFINITY, f64::min)
    }

    /// Checks the per-row power balance against `BALANCE_TOL` of the row's
    /// power scale.
    pub fn validate(&self) -> Result<(), SimError> {
        for r in &self.rows {
            let scale = (r.p_s.abs() + r.p_d.abs() + r.p_ext.abs()).max(1.0);
            if r.balance_defect.abs() > BALANCE_TOL * scale {
                return Err(SimError::BalanceViolation {
                    time: r.time,
                    defect: r.balance_defect,
                });
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> LedgerSummary {
        let first = self.rows.first().expect("ledger never empty");
        let last = self.terminal();
        LedgerSummary {
            state_labels: self.state_labels.clone(),
            steps: self.rows.len().saturating_sub(1),
            t_end: last.time,
            terminal_state: last.state.clone(),
            initial_energy: first.energy,
            terminal_energy: last.energy,
            energy_balance_defect: self.energy_balance_defect(),
            max_balance_defect: self.max_balance_defect(),
            min_sigma_i: self.min_sigma_i(),
            entropy_change: last.state[0] - first.state[0],
            integral_sigma_ext: self.integral_sigma_ext(),
            integral_sigma_i: self.integral_sigma_i(),
        }
    }

    /// CSV export: fixed columns
    /// `time, state_<label>.., effort_<label>.., P_s, P_d, P_ext, sigma_i,
    /// sigma_ext, balance_defect`, one row per step start plus the terminal
    /// row, floats in 17-significant-digit scientific notation, LF endings.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut header = vec!["time".to_string()];
        for l in &self.state_labels {
            header.push(format!("state_{l}"));
        }
        for l in &self.state_labels {
            header.push(format!("effort_{l}"));
        }
        for c in [
            "P_s",
            "P_d",
            "P_ext",
            "sigma_i",
            "sigma_ext",
            "balance_defect",
        ] {
            header.push(c.to_string());
        }
        writeln!(w, "{}", header.join(","))?;
        for r in &self.rows {
            let mut fields = vec![fmt_float(r.time)];
            fields.extend(r.state.iter().map(|&v| fmt_float(v)));
            fields.extend(r.efforts.iter().map(|&v| fmt_float(v)));
            for v in [
                r.p_s,
                r.p_d,
                r.p_ext,
                r.sigma_i,
                r.sigma_ext,
                r.balance_defect,
            ] {
                fields.push(fmt_float(v));
            }
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// 17 significant digits round-trips f64 exactly.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn domain_exit(err: &SimError) -> Option<&EnergyError> {
    match err {
        SimError::Energy(e) if e.is_domain_exit() => Some(e),
        _ => None,
    }
}

/// Number of base steps covering [0, t_end]: t_end/dt rounded when it is
/// within rounding error of an integer, else the ceiling.
fn step_count(t_end: f64, dt: f64) -> usize {
    let raw = t_end / dt;
    let rounded = raw.round();
    let n = if (raw - rounded).abs() <= 1e-9 * rounded.max(1.0) {
        rounded
    } else {
        raw.ceil()
    };
    (n as usize).max(1)
}

/// One explicit-midpoint attempt over [t, t+dt]; `eval_x` must be the
/// evaluation at (x, u(t)).
fn try_midpoint(
    model: &PhsModel,
    x: &[f64],
    eval_x: &PortEval,
    t: f64,
    dt: f64,
    signal: &InputSignal,
    port_labels: &[String],
) -> Result<(Vec<f64>, PortEval), SimError> {
    let x_half: Vec<f64> = x
        .iter()
        .zip(&eval_x.xdot)
        .map(|(xi, ki)| xi + 0.5 * dt * ki)
        .collect();
    let u_half = signal.sample(port_labels, t + 0.5 * dt)?;
    let eval_half = evaluate(model, &x_half, &u_half)?;
    let x_new: Vec<f64> = x
        .iter()
        .zip(&eval_half.xdot)
        .map(|(xi, ki)| xi + dt * ki)
        .collect();
    let u_new = signal.sample(port_labels, t + dt)?;
    let eval_new = evaluate(model, &x_new, &u_new)?;
    Ok((x_new, eval_new))
}

/// Budget of accepted sub-steps per base step; together with the halving
/// cap this bounds the work a pathological drive can consume.
const MAX_SUBSTEPS: usize = 256;

/// Advances over [t, t+dt], pushing one ledger row per accepted sub-step
/// (the first at time t). A sub-step whose target state leaves the
/// attainable domain is rejected and retried at half the width (the width
/// never re-expands within the interval); after `MAX_HALVINGS` rejections
/// or `MAX_SUBSTEPS` accepted sub-steps the drive is declared infeasible.
fn advance(
    model: &PhsModel,
    x: &[f64],
    eval_x: &PortEval,
    t: f64,
    dt: f64,
    signal: &InputSignal,
    port_labels: &[String],
    rows: &mut Vec<LedgerRow>,
) -> Result<(Vec<f64>, PortEval), SimError> {
    let mut x = x.to_vec();
    let mut eval = eval_x.clone();
    let mut pos = 0.0;
    let mut h = dt;
    let mut halvings = 0u32;
    let mut accepted = 0usize;
    while pos < dt {
        let h_try = h.min(dt - pos);
        match try_midpoint(model, &x, &eval, t + pos, h_try, signal, port_labels) {
            Ok((x_new, eval_new)) => {
                rows.push(make_row(t + pos, &x, &eval, h_try));
                pos += h_try;
                x = x_new;
                eval = eval_new;
                accepted += 1;
                if accepted >= MAX_SUBSTEPS && pos < dt {
                    return Err(SimError::StateOutOfDomain {
                        time: t + pos,
                        halvings,
                        source: EnergyError::InversionFailed(
                            "sub-step budget exhausted while approaching a domain boundary".into(),
                        ),
                    });
                }
            }
            Err(err) => {
                if domain_exit(&err).is_none() {
                    return Err(err);
                }
                halvings += 1;
                if halvings > MAX_HALVINGS {
                    return Err(SimError::StateOutOfDomain {
                        time: t + pos,
                        halvings,
                        source: match err {
                            SimError::Energy(e) => e,
                            _ => unreachable!("domain_exit only matches Energy"),
                        },
                    });
                }
                h = 0.5 * h_try;
            }
        }
    }
    Ok((x, eval))
}

/// One explicit-midpoint step under constant inputs `u`; returns the new
/// state and the ledger row opened at `x`.
pub fn step(
    model: &PhsModel,
    x: &[f64],
    u: &[f64],
    dt: f64,
) -> Result<(Vec<f64>, LedgerRow), SimError> {
    if !(dt > 0.0) {
        return Err(SimError::BadTimeGrid { dt, t_end: dt });
    }
    let eval_x = evaluate(model, x, u)?;
    let row = make_row(0.0, x, &eval_x, dt);
    let x_half: Vec<f64> = x
        .iter()
        .zip(&eval_x.xdot)
        .map(|(xi, ki)| xi + 0.5 * dt * ki)
        .collect();
    let eval_half = evaluate(model, &x_half, u)?;
    let x_new: Vec<f64> = x
        .iter()
        .zip(&eval_half.xdot)
        .map(|(xi, ki)| xi + dt * ki)
        .collect();
    Ok((x_new, row))
}

/// Integrates from `x0` over [0, t_end] at base step dt. Rows are recorded
/// at step starts plus one terminal row; deterministic for fixed inputs.
pub fn run(
    model: &PhsModel,
    x0: &[f64],
    signal: &InputSignal,
    t_end: f64,
    dt: f64,
) -> Result<TrajectoryLedger, SimError> {
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(SimError::BadTimeGrid { dt, t_end });
    }
    let port_labels = external_labels(model);
    let mut rows = Vec::new();
    let mut x = x0.to_vec();
    let mut eval_x = evaluate(model, &x, &signal.sample(&port_labels, 0.0)?)?;
    let steps = step_count(t_end, dt);
    let mut t = 0.0;
    for i in 0..steps {
        let h = (t_end - t).min(dt);
        let (x_new, eval_new) =
            advance(model, &x, &eval_x, t, h, signal, &port_labels, &mut rows)?;
        x = x_new;
        eval_x = eval_new;
        t = if i + 1 == steps { t_end } else { t + h };
    }
    rows.push(make_row(t_end, &x, &eval_x, 0.0));
    Ok(TrajectoryLedger {
        state_labels: model.state_labels().to_vec(),
        rows,
    })
}

/// One sample of the coupling relaxation profile.
#[derive(Debug, Clone, Serialize)]
pub struct CouplingRow {
    pub time: f64,
    pub heat_flow: f64,
    pub temperature_a: f64,
    pub temperature_b: f64,
    pub total_energy: f64,
    pub total_entropy: f64,
}

/// Outcome of the two-system equilibration experiment.
#[derive(Debug)]
pub struct CouplingOutcome {
    pub ledger_a: TrajectoryLedger,
    pub ledger_b: TrajectoryLedger,
    pub profile: Vec<CouplingRow>,
    pub terminal_temperature_gap: f64,
    /// max_t |E_tot(t) − E_tot(0)| / |E_tot(0)|.
    pub energy_drift_rel: f64,
}

struct PairEval {
    a: PortEval,
    b: PortEval,
    heat_flow: f64,
}

/// Heat-conduction coupling: entropy flows through each model's entropy
/// port with flow = conductance·(T_A − T_B), outgoing from the hotter side.
/// The isolated pair conserves total energy and produces entropy until the
/// temperatures meet.
#[allow(clippy::too_many_arguments)]
pub fn couple_and_equilibrate(
    model_a: &PhsModel,
    model_b: &PhsModel,
    x0_a: &[f64],
    x0_b: &[f64],
    conductance: f64,
    t_end: f64,
    dt: f64,
) -> Result<CouplingOutcome, SimError> {
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(SimError::BadTimeGrid { dt, t_end });
    }

    let ports_a = external_labels(model_a);
    let ports_b = external_labels(model_b);

    // Joint vector field: q = g·(T_A − T_B); σ_ext is the outgoing entropy
    // rate, +q/T_A on the hot side and −q/T_B on the cold side. One
    // re-equilibration per model per evaluation.
    let eval_pair = |xa: &[f64], xb: &[f64]| -> Result<PairEval, SimError> {
        let (e_a, eff_a) = model_a
            .hamiltonian
            .energy_and_efforts(&MacroState::new(xa[0], xa[1..].to_vec()))?;
        let (e_b, eff_b) = model_b
            .hamiltonian
            .energy_and_efforts(&MacroState::new(xb[0], xb[1..].to_vec()))?;
        let (t_a, t_b) = (eff_a[0], eff_b[0]);
        let q = conductance * (t_a - t_b);
        let mut u_a = vec![0.0; ports_a.len()];
        u_a[0] = q / t_a;
        let mut u_b = vec![0.0; ports_b.len()];
        u_b[0] = -q / t_b;
        Ok(PairEval {
            a: evaluate_given(model_a, xa, &u_a, e_a, &eff_a)?,
            b: evaluate_given(model_b, xb, &u_b, e_b, &eff_b)?,
            heat_flow: q,
        })
    };

    let mut xa = x0_a.to_vec();
    let mut xb = x0_b.to_vec();
    let mut rows_a = Vec::new();
    let mut rows_b = Vec::new();
    let mut profile = Vec::new();

    let mut pair = eval_pair(&xa, &xb)?;
    let e_tot_0 = pair.a.energy + pair.b.energy;
    let mut energy_drift: f64 = 0.0;

    let steps = step_count(t_end, dt);
    let mut t = 0.0;
    for i in 0..steps {
        let h = (t_end - t).min(dt);
        rows_a.push(make_row(t, &xa, &pair.a, h));
        rows_b.push(make_row(t, &xb, &pair.b, h));
        profile.push(CouplingRow {
            time: t,
            heat_flow: pair.heat_flow,
            temperature_a: pair.a.efforts[0],
            temperature_b: pair.b.efforts[0],
            total_energy: pair.a.energy + pair.b.energy,
            total_entropy: xa[0] + xb[0],
        });
        energy_drift = energy_drift
            .max(((pair.a.energy + pair.b.energy) - e_tot_0).abs() / e_tot_0.abs().max(1e-300));

        // Joint explicit midpoint.
        let xa_half: Vec<f64> = xa
            .iter()
            .zip(&pair.a.xdot)
            .map(|(x, k)| x + 0.5 * h * k)
            .collect();
        let xb_half: Vec<f64> = xb
            .iter()
            .zip(&pair.b.xdot)
            .map(|(x, k)| x + 0.5 * h * k)
            .collect();
        let mid = eval_pair(&xa_half, &xb_half)?;
        xa = xa
            .iter()
            .zip(&mid.a.xdot)
            .map(|(x, k)| x + h * k)
            .collect();
        xb = xb
            .iter()
            .zip(&mid.b.xdot)
            .map(|(x, k)| x + h * k)
            .collect();
        pair = eval_pair(&xa, &xb)?;
        t = if i + 1 == steps { t_end } else { t + h };
    }
    rows_a.push(make_row(t_end, &xa, &pair.a, 0.0));
    rows_b.push(make_row(t_end, &xb, &pair.b, 0.0));
    profile.push(CouplingRow {
        time: t_end,
        heat_flow: pair.heat_flow,
        temperature_a: pair.a.efforts[0],
        temperature_b: pair.b.efforts[0],
        total_energy: pair.a.energy + pair.b.energy,
        total_entropy: xa[0] + xb[0],
    });
    energy_drift = energy_drift
        .max(((pair.a.energy + pair.b.energy) - e_tot_0).abs() / e_tot_0.abs().max(1e-300));

    Ok(CouplingOutcome {
        ledger_a: TrajectoryLedger {
            state_labels: model_a.state_labels().to_vec(),
            rows: rows_a,
        },
        ledger_b: TrajectoryLedger {
            state_labels: model_b.state_labels().to_vec(),
            rows: rows_b,
        },
        terminal_temperature_gap: (pair.a.efforts[0] - pair.b.efforts[0]).abs(),
        energy_drift_rel: energy_drift,
        profile,
    })
}
