//! Explicit Störmer-Verlet one-step update for the modal system with a
//! pluggable nonlinearity, plus rollout and the linear stability gate.
//!
//! One step maps `(q^n, p^n) -> (q^{n+1}, p^{n+1})`:
//!
//! ```text
//! p_half  = p^n + k/2 [ -2 S p^n - Omega^2 q^n + gamma^2 f(q^n) + Phi(x_e) fe^n ]
//! q^{n+1} = q^n + k p_half
//! p^{n+1} = (I + k S)^-1 [ p_half + k/2 ( -Omega^2 q^{n+1} + gamma^2 f(q^{n+1}) + Phi(x_e) fe^{n+1} ) ]
//! ```
//!
//! `f(q^{n+1})` from the third stage is returned to the caller, so a rollout
//! pays exactly one nonlinearity evaluation per step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modal::{ModalSystem, State};
use crate::nonlinearity::{CouplingTensor, LumpedNonlinearity};

/// Uniform time grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationGrid {
    /// Time step in s.
    pub dt: f64,
    /// Number of stored states, initial state included.
    pub steps: usize,
}

impl SimulationGrid {
    pub fn from_rate(sample_rate: f64, steps: usize) -> Result<Self> {
        if !(sample_rate > 0.0) || steps == 0 {
            return Err(Error::InvalidParameter("sample rate must be > 0 and steps >= 1".into()));
        }
        Ok(Self { dt: 1.0 / sample_rate, steps })
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.dt
    }
}

/// A memoryless nonlinearity `q -> f(q)` on length-M vectors. Implemented by
/// the exact coupling tensor, the lumped closed forms, the zero map (linear
/// baseline) and the neural network.
pub trait Nonlinearity: Sync {
    fn eval(&self, q: &[f64], out: &mut [f64]) -> Result<()>;
}

impl Nonlinearity for CouplingTensor {
    fn eval(&self, q: &[f64], out: &mut [f64]) -> Result<()> {
        CouplingTensor::eval(self, q, out)
    }
}

/// The scalar map applied per mode; used with M = 1 for the oscillator.
impl Nonlinearity for LumpedNonlinearity {
    fn eval(&self, q: &[f64], out: &mut [f64]) -> Result<()> {
        if q.len() != out.len() {
            return Err(Error::DimensionMismatch { expected: q.len(), got: out.len() });
        }
        for (o, &v) in out.iter_mut().zip(q) {
            *o = self.eval_scalar(v);
        }
        Ok(())
    }
}

/// `f(q) = 0`: drops the nonlinear term entirely.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNonlinearity;

impl Nonlinearity for ZeroNonlinearity {
    fn eval(&self, q: &[f64], out: &mut [f64]) -> Result<()> {
        if q.len() != out.len() {
            return Err(Error::DimensionMismatch { expected: q.len(), got: out.len() });
        }
        out.fill(0.0);
        Ok(())
    }
}

/// Counts evaluations of an inner nonlinearity; test instrumentation.
pub struct CountingNonlinearity<'a> {
    pub inner: &'a dyn Nonlinearity,
    pub calls: std::sync::atomic::AtomicUsize,
}

impl<'a> CountingNonlinearity<'a> {
    pub fn new(inner: &'a dyn Nonlinearity) -> Self {
        Self { inner, calls: std::sync::atomic::AtomicUsize::new(0) }
    }

    pub fn count(&self) -> usize {
        self.calls.load(std::sync::atomic::Ordering::Relaxed)
    }
}

impl Nonlinearity for CountingNonlinearity<'_> {
    fn eval(&self, q: &[f64], out: &mut [f64]) -> Result<()> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        self.inner.eval(q, out)
    }
}

/// Result of the linear Verlet stability check `k * Omega_M < 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// `k * Omega_M / 2`; below 1 passes.
    pub margin: f64,
    pub stable: bool,
}

pub fn check_stability(system: &ModalSystem, dt: f64) -> StabilityReport {
    let omega_max = system.omega.last().copied().unwrap_or(0.0);
    let k_omega = dt * omega_max;
    StabilityReport { margin: k_omega / 2.0, stable: k_omega < 2.0 }
}

/// One Verlet step. `cached_f`, when present, must equal `nl(q^n)` and saves
/// the first-stage evaluation; the returned vector is `f(q^{n+1})` for the
/// caller to cache. `step_index` only labels divergence errors.
#[allow(clippy::too_many_arguments)]
pub fn verlet_step(
    state: &State,
    system: &ModalSystem,
    nl: &dyn Nonlinearity,
    fe_n: f64,
    fe_n1: f64,
    phi_e: &[f64],
    dt: f64,
    cached_f: Option<&[f64]>,
    step_index: usize,
) -> Result<(State, Vec<f64>)> {
    let m = system.mode_count();
    if state.mode_count() != m || phi_e.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: state.mode_count() });
    }
    let g2 = system.gamma * system.gamma;
    let half = 0.5 * dt;

    let f_n_storage;
    let f_n = match cached_f {
        Some(f) => {
            debug_assert_eq!(f.len(), m);
            f
        }
        None => {
            let mut f = vec![0.0; m];
            nl.eval(&state.q, &mut f)?;
            f_n_storage = f;
            &f_n_storage[..]
        }
    };

    let mut q_next = vec![0.0; m];
    let mut p_half = vec![0.0; m];
    for i in 0..m {
        let om2 = system.omega[i] * system.omega[i];
        let accel = -2.0 * system.damping[i] * state.p[i] - om2 * state.q[i]
            + g2 * f_n[i]
            + phi_e[i] * fe_n;
        p_half[i] = state.p[i] + half * accel;
        q_next[i] = state.q[i] + dt * p_half[i];
    }

    let mut f_next = vec![0.0; m];
    nl.eval(&q_next, &mut f_next)?;

    let mut p_next = vec![0.0; m];
    for i in 0..m {
        let om2 = system.omega[i] * system.omega[i];
        let bracket = p_half[i] + half * (-om2 * q_next[i] + g2 * f_next[i] + phi_e[i] * fe_n1);
        p_next[i] = bracket / (1.0 + dt * system.damping[i]);
    }

    let next = State { q: q_next, p: p_next };
    if !next.is_finite() {
        return Err(Error::Diverged { step: step_index });
    }
    Ok((next, f_next))
}

/// A rolled-out state series, row-major `steps x mode_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub mode_count: usize,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl StateTrajectory {
    pub fn steps(&self) -> usize {
        self.q.len() / self.mode_count
    }

    pub fn q_at(&self, n: usize) -> &[f64] {
        &self.q[n * self.mode_count..(n + 1) * self.mode_count]
    }

    pub fn p_at(&self, n: usize) -> &[f64] {
        &self.p[n * self.mode_count..(n + 1) * self.mode_count]
    }

    pub fn state_at(&self, n: usize) -> State {
        State { q: self.q_at(n).to_vec(), p: self.p_at(n).to_vec() }
    }

    /// Audio readout `w^n = phi_out^T q^n` per step.
    pub fn readout_series(&self, phi_out: &[f64]) -> Result<Vec<f64>> {
        (0..self.steps()).map(|n| crate::modal::readout(self.q_at(n), phi_out)).collect()
    }
}

/// Roll out `grid.steps` states starting from `initial` (stored at index 0).
///
/// `pluck_seq` must provide the force on the same absolute grid, at least
/// `grid.steps` samples. The linear stability gate runs first unless
/// `force` is set; the nonlinear term can still destabilise a run that
/// passes the linear bound, which surfaces as a divergence error carrying
/// the step index.
pub fn rollout(
    initial: &State,
    system: &ModalSystem,
    nl: &dyn Nonlinearity,
    pluck_seq: &[f64],
    phi_e: &[f64],
    grid: &SimulationGrid,
    force: bool,
) -> Result<StateTrajectory> {
    let m = system.mode_count();
    if initial.mode_count() != m {
        return Err(Error::DimensionMismatch { expected: m, got: initial.mode_count() });
    }
    if pluck_seq.len() < grid.steps {
        return Err(Error::InvalidParameter(format!(
            "pluck sequence has {} samples, need {}",
            pluck_seq.len(),
            grid.steps
        )));
    }
    let report = check_stability(system, grid.dt);
    if !report.stable && !force {
        return Err(Error::Unstable { k_omega: 2.0 * report.margin });
    }

    let steps = grid.steps;
    let mut q = Vec::with_capacity(steps * m);
    let mut p = Vec::with_capacity(steps * m);
    q.extend_from_slice(&initial.q);
    p.extend_from_slice(&initial.p);

    let mut cached = vec![0.0; m];
    nl.eval(&initial.q, &mut cached)?;
    let mut state = initial.clone();
    for n in 0..steps.saturating_sub(1) {
        let (next, f_next) = verlet_step(
            &state,
            system,
            nl,
            pluck_seq[n],
            pluck_seq[n + 1],
            phi_e,
            grid.dt,
            Some(&cached),
            n + 1,
        )?;
        q.extend_from_slice(&next.q);
        p.extend_from_slice(&next.p);
        state = next;
        cached = f_next;
    }
    Ok(StateTrajectory { mode_count: m, q, p })
}

/// Discrete energy `H = |p|^2/2 + sum (Omega_m q_m)^2 / 2 + gamma^2 V(q)`
/// of the lossless system with the exact tensor nonlinearity.
pub fn nonlinear_energy(state: &State, system: &ModalSystem, tensor: &CouplingTensor) -> Result<f64> {
    let kinetic: f64 = state.p.iter().map(|v| 0.5 * v * v).sum();
    let linear: f64 = state
        .q
        .iter()
        .zip(&system.omega)
        .map(|(&q, &om)| 0.5 * om * om * q * q)
        .sum();
    Ok(kinetic + linear + system.gamma * system.gamma * tensor.potential(&state.q)?)
}
