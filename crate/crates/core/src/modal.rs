//! String parameters, physical-to-scaled conversion, modal frequencies and
//! damping, mode shapes and output readout.
//!
//! The string is simply supported on the scaled domain `[0, 1]` with mode
//! shapes `Phi_m(x) = sqrt(2) sin(m pi x)` and modal wavenumbers
//! `beta_m = m pi`. Per mode the angular frequency and damping are
//!
//! ```text
//! Omega_m = sqrt(gamma^2 beta_m^2 + kappa^2 beta_m^4)
//! S_m     = sigma0 + sigma1 * beta_m^2
//! ```

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Raw physical parameters of a stiff, lossy string (SI units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalStringParams {
    /// Length in m.
    pub length: f64,
    /// Material density in kg/m^3.
    pub density: f64,
    /// Radius in m.
    pub radius: f64,
    /// Tension in N.
    pub tension: f64,
    /// Young's modulus in N/m^2.
    pub youngs_modulus: f64,
    /// Frequency-independent loss, 1/s.
    pub sigma0: f64,
    /// Frequency-dependent loss, m^2/s.
    pub sigma1: f64,
}

impl PhysicalStringParams {
    /// Cross-sectional area `pi r^2`.
    pub fn area(&self) -> f64 {
        PI * self.radius * self.radius
    }

    /// Moment of inertia `pi r^4 / 4`.
    pub fn moment_of_inertia(&self) -> f64 {
        PI * self.radius.powi(4) / 4.0
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("length", self.length),
            ("density", self.density),
            ("radius", self.radius),
            ("tension", self.tension),
            ("youngs_modulus", self.youngs_modulus),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.sigma0 < 0.0 || self.sigma1 < 0.0 {
            return Err(Error::InvalidParameter("loss parameters must be >= 0".into()));
        }
        let ea = self.youngs_modulus * self.area();
        if ea < self.tension {
            return Err(Error::InvalidParameter(format!(
                "EA = {ea} < T = {}: non-conservative string",
                self.tension
            )));
        }
        if ea == self.tension {
            return Err(Error::InvalidParameter(
                "EA = T: nonlinearity vanishes (degenerate string)".into(),
            ));
        }
        Ok(())
    }
}

/// Reduced parameter set of the scaled string PDE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledStringParams {
    /// `gamma = sqrt(T / (rho A)) / L`, 1/s.
    pub gamma: f64,
    /// `kappa = sqrt(E I / (rho A)) / L^2`, 1/s.
    pub kappa: f64,
    /// Frequency-independent loss, 1/s.
    pub sigma0: f64,
    /// Scaled frequency-dependent loss `sigma1 / L^2`, 1/s.
    pub sigma1: f64,
    /// Displacement scale `u0`.
    pub displacement_scale: f64,
    /// Factor `u0 / (rho A L)` applied to a physical force to obtain the
    /// scaled force.
    pub force_scale: f64,
}

impl ScaledStringParams {
    /// Scaled parameters given directly in scaled units (the dataset
    /// generation path; forces are then already scaled and the
    /// displacement/force scales are identity).
    pub fn from_scaled(gamma: f64, kappa: f64, sigma0: f64, sigma1: f64) -> Result<Self> {
        let p = Self {
            gamma,
            kappa,
            sigma0,
            sigma1,
            displacement_scale: 1.0,
            force_scale: 1.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidParameter(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if self.kappa < 0.0 || self.sigma0 < 0.0 || self.sigma1 < 0.0 {
            return Err(Error::InvalidParameter("kappa, sigma0, sigma1 must be >= 0".into()));
        }
        if !(self.displacement_scale > 0.0) {
            return Err(Error::InvalidParameter("displacement scale must be > 0".into()));
        }
        Ok(())
    }
}

/// Convert physical string parameters to the reduced scaled set.
pub fn scale_physical(params: &PhysicalStringParams) -> Result<ScaledStringParams> {
    params.validate()?;
    let area = params.area();
    let inertia = params.moment_of_inertia();
    let rho_a = params.density * area;
    let l = params.length;
    let gamma = (params.tension / rho_a).sqrt() / l;
    let kappa = (params.youngs_modulus * inertia / rho_a).sqrt() / (l * l);
    let ea = params.youngs_modulus * area;
    let u0 = (0.5 * (ea / params.tension - 1.0)).sqrt() / l;
    Ok(ScaledStringParams {
        gamma,
        kappa,
        sigma0: params.sigma0,
        sigma1: params.sigma1 / (l * l),
        displacement_scale: u0,
        force_scale: u0 / (rho_a * l),
    })
}

/// Diagonal linear skeleton of the modal system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalSystem {
    /// Per-mode angular frequency `Omega_m`, rad/s, strictly increasing.
    pub omega: Vec<f64>,
    /// Per-mode damping `S_m`, 1/s.
    pub damping: Vec<f64>,
    /// The `gamma` factor scaling the nonlinearity.
    pub gamma: f64,
}

impl ModalSystem {
    pub fn mode_count(&self) -> usize {
        self.omega.len()
    }

    /// One-mode system with the given natural frequency and no loss, used by
    /// the lumped oscillator case study.
    pub fn single_mode(omega0: f64, gamma: f64) -> Result<Self> {
        if !(omega0 > 0.0) {
            return Err(Error::InvalidParameter(format!("omega0 must be > 0, got {omega0}")));
        }
        Ok(Self { omega: vec![omega0], damping: vec![0.0], gamma })
    }
}

/// Populate the diagonal frequency/damping matrices for `mode_count` modes.
pub fn build_modal_system(scaled: &ScaledStringParams, mode_count: usize) -> Result<ModalSystem> {
    if mode_count == 0 {
        return Err(Error::InvalidParameter("mode count must be >= 1".into()));
    }
    scaled.validate()?;
    let g2 = scaled.gamma * scaled.gamma;
    let k2 = scaled.kappa * scaled.kappa;
    let mut omega = Vec::with_capacity(mode_count);
    let mut damping = Vec::with_capacity(mode_count);
    for m in 1..=mode_count {
        let beta = m as f64 * PI;
        let b2 = beta * beta;
        omega.push((g2 * b2 + k2 * b2 * b2).sqrt());
        damping.push(scaled.sigma0 + scaled.sigma1 * b2);
    }
    Ok(ModalSystem { omega, damping, gamma: scaled.gamma })
}

/// Mode-shape vector `[Phi_1(x), ..., Phi_M(x)]` at scaled position `x`.
pub fn mode_shape_vector(x: f64, mode_count: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidParameter(format!("position {x} outside [0, 1]")));
    }
    Ok((1..=mode_count)
        .map(|m| std::f64::consts::SQRT_2 * (m as f64 * PI * x).sin())
        .collect())
}

/// Audio readout `w = Phi(x_o)^T q`.
pub fn readout(q: &[f64], phi_out: &[f64]) -> Result<f64> {
    if q.len() != phi_out.len() {
        return Err(Error::DimensionMismatch { expected: phi_out.len(), got: q.len() });
    }
    Ok(q.iter().zip(phi_out).map(|(a, b)| a * b).sum())
}

/// Modal displacements and velocities at one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl State {
    pub fn zero(mode_count: usize) -> Self {
        Self { q: vec![0.0; mode_count], p: vec![0.0; mode_count] }
    }

    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if q.len() != p.len() {
            return Err(Error::DimensionMismatch { expected: q.len(), got: p.len() });
        }
        Ok(Self { q, p })
    }

    pub fn mode_count(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.p).all(|v| v.is_finite())
    }
}
