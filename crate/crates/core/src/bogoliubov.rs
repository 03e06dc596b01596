//! Bogoliubov modes of the 1D Bose-Hubbard superfluid.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::system::{HubbardParams, SystemError, ThermalState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BogoliubovError {
    #[error("Bose occupation needs omega > 0, got {0}")]
    NonPositiveFrequency(f64),
    #[error(transparent)]
    System(#[from] SystemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BogoliubovMode {
    /// Wavenumber in units of 1/a.
    pub k: f64,
    pub eps_k: f64,
    pub omega_k: f64,
    pub u_k: f64,
    pub v_k: f64,
    /// √(n0/Ns)(u_k + v_k).
    pub beta_k: f64,
}

impl BogoliubovMode {
    pub fn beta_sq(&self) -> f64 {
        self.beta_k * self.beta_k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BogoliubovSpectrum {
    /// Sorted by |k|, with -k before +k; k = 0 is excluded.
    pub modes: Vec<BogoliubovMode>,
    pub params: HubbardParams,
}

impl BogoliubovSpectrum {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// One representative (k > 0) per degenerate ±k pair, sorted by ω.
    pub fn distinct_modes(&self) -> Vec<BogoliubovMode> {
        self.modes.iter().filter(|m| m.k > 0.0).copied().collect()
    }

    /// Smallest spacing between distinct frequencies.
    pub fn min_spacing(&self) -> f64 {
        let d = self.distinct_modes();
        let first = d.first().map_or(f64::INFINITY, |m| m.omega_k);
        d.windows(2).map(|w| w[1].omega_k - w[0].omega_k).fold(first, f64::min)
    }

    pub fn max_frequency(&self) -> f64 {
        self.modes.iter().map(|m| m.omega_k).fold(0.0, f64::max)
    }
}

/// ε_k = 2J(1 - cos ka).
pub fn single_particle_energy(k: f64, params: &HubbardParams) -> f64 {
    2.0 * params.j * (1.0 - (k * params.a).cos())
}

/// ω_k = √(ε_k² + 2 U n0 ε_k).
pub fn dispersion(eps: f64, params: &HubbardParams) -> f64 {
    (eps * (eps + 2.0 * params.u * params.n0)).sqrt()
}

fn mode(k: f64, params: &HubbardParams) -> BogoliubovMode {
    // 1 - cos x = 2 sin²(x/2) keeps small-k energies accurate.
    let s = (0.5 * k * params.a).sin();
    let eps_k = 4.0 * params.j * s * s;
    let omega_k = dispersion(eps_k, params);
    let e = eps_k + params.u * params.n0;
    let u_k = ((e + omega_k) / (2.0 * omega_k)).sqrt();
    // E - ω = (Un0)²/(E + ω), free of cancellation.
    let un0 = params.u * params.n0;
    let v_k = -(un0 * un0 / (e + omega_k) / (2.0 * omega_k)).sqrt();
    let beta_k = (params.n0 / params.ns as f64).sqrt() * (u_k + v_k);
    BogoliubovMode {
        k,
        eps_k,
        omega_k,
        u_k,
        v_k,
        beta_k,
    }
}

/// Modes on k_j = 2πj/(Ns a), j = ±1, …, ±⌊Ns/2⌋.
///
/// For even Ns the zone-edge momentum ±π/a is one state and is listed once.
pub fn build_spectrum(params: &HubbardParams) -> Result<BogoliubovSpectrum, BogoliubovError> {
    params.check()?;
    let ns = params.ns;
    let half = ns / 2;
    let mut modes = Vec::with_capacity(ns.saturating_sub(1));
    for j in 1..=half {
        let k = 2.0 * PI * j as f64 / (ns as f64 * params.a);
        if ns.is_multiple_of(2) && j == half {
            modes.push(mode(k, params));
        } else {
            modes.push(mode(-k, params));
            modes.push(mode(k, params));
        }
    }
    Ok(BogoliubovSpectrum { modes, params: *params })
}

/// Bose-Einstein occupation 1/(e^{βω} - 1).
pub fn thermal_occupation(omega: f64, thermal: &ThermalState) -> Result<f64, BogoliubovError> {
    if !(omega > 0.0) {
        return Err(BogoliubovError::NonPositiveFrequency(omega));
    }
    let x = thermal.beta * omega;
    if x < 1e-8 {
        return Ok(1.0 / x - 0.5 + x / 12.0);
    }
    Ok(1.0 / x.exp_m1())
}

/// Sites the probe couples to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SitePair {
    /// c†₀c₀: probe on a single site.
    OnSite,
    /// Symmetric bond combination over sites 0 and 1.
    Bond,
}

/// Coefficient of (b†_k + b_k) in the linearised site operator, per mode.
///
/// On-site it is β_k. For the bond, β_k(1 + e^{ika})/√2, so that
/// |amplitude|² = β_k²(1 + cos ka).
pub fn site_operator_amplitudes(pair: SitePair, spectrum: &BogoliubovSpectrum) -> Vec<Complex64> {
    let a = spectrum.params.a;
    spectrum
        .modes
        .iter()
        .map(|m| match pair {
            SitePair::OnSite => Complex64::new(m.beta_k, 0.0),
            SitePair::Bond => m.beta_k * (Complex64::new(1.0, 0.0) + Complex64::from_polar(1.0, m.k * a)) / 2f64.sqrt(),
        })
        .collect()
}

/// |amplitude|²/β_k² of a mode for the given site pair.
pub fn mode_weight(pair: SitePair, ka: f64) -> f64 {
    match pair {
        SitePair::OnSite => 1.0,
        SitePair::Bond => 1.0 + ka.cos(),
    }
}
