//! First-order transition probabilities of the probe.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bogoliubov::{mode_weight, thermal_occupation, BogoliubovError, BogoliubovSpectrum, SitePair};
use crate::probe::CouplingPrefactors;
use crate::sum::Neumaier;
use crate::system::{ProbeTrap, ThermalState};

/// Totals above this are flagged as outside first-order validity.
pub const PERTURBATIVE_FLAG: f64 = 0.1;

/// Below |ωt| = this, λ uses its Taylor series.
pub const KERNEL_GUARD: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("interaction time must be >= 0, got {0}")]
    NegativeTime(f64),
    #[error("probe gap must be > 0, got {0}")]
    NonPositiveGap(f64),
    #[error("configuration II needs m*nu0*a^2 > 4 (got {0})")]
    NonLocal(f64),
    #[error("target level n_z = {0} is parity forbidden")]
    ParityForbidden(u32),
    #[error("transition probability {0} exceeds 1; first-order theory does not apply")]
    NonPerturbative(f64),
    #[error(transparent)]
    Spectrum(#[from] BogoliubovError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Configuration {
    /// Probe on a lattice minimum.
    I,
    /// Probe on a lattice maximum, between two sites.
    II,
    /// Strictly one-dimensional probe trap.
    OneD,
}

impl Configuration {
    pub fn site_pair(self) -> SitePair {
        match self {
            Configuration::II => SitePair::Bond,
            _ => SitePair::OnSite,
        }
    }

    /// Squared coupling entering the total.
    pub fn coupling_sq(self, p: &CouplingPrefactors) -> f64 {
        match self {
            Configuration::I => p.gi_n_sq,
            Configuration::II => p.gii_n_sq,
            Configuration::OneD => p.g1d_n_sq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateBreakdown {
    /// Condensate term, weight w(0)·λ₁(gap)·n0².
    pub static_term: f64,
    /// Γ⁺ per mode, w(k) β² λ₂(gap - ω) n(ω).
    pub absorption: Vec<f64>,
    /// Γ⁻ per mode, w(k) β² λ₁(gap + ω) (1 + n(ω)).
    pub emission: Vec<f64>,
    /// Multiplier of the bracket, coupling² × ν.
    pub prefactor: f64,
    pub total: f64,
    /// Set when the total exceeds [`PERTURBATIVE_FLAG`].
    pub perturbative_warning: bool,
}

/// λ₁(ω, t) = 2[1 - cos ωt]/ω² = 4 sin²(ωt/2)/ω².
#[inline]
pub fn lambda1(omega: f64, t: f64) -> f64 {
    let x = omega * t;
    if x.abs() < KERNEL_GUARD {
        return t * t * (1.0 - x * x / 12.0);
    }
    let s = (0.5 * x).sin();
    4.0 * s * s / (omega * omega)
}

/// λ₂(δ, t): λ₁ off resonance and t² at δ = 0, the continuous extension.
#[inline]
pub fn lambda2(delta: f64, t: f64) -> f64 {
    lambda1(delta, t)
}

/// Bracketed probability of a level gap `gap` after time `t`, scaled by
/// `prefactor`; `weight` maps ka to the mode weight and its value at 0 weights
/// the condensate term.
pub fn transition_probability<W: Fn(f64) -> f64>(
    gap: f64,
    prefactor: f64,
    spectrum: &BogoliubovSpectrum,
    thermal: &ThermalState,
    t: f64,
    weight: W,
) -> Result<RateBreakdown, RateError> {
    if !(t >= 0.0) {
        return Err(RateError::NegativeTime(t));
    }
    if !(gap > 0.0) {
        return Err(RateError::NonPositiveGap(gap));
    }
    let p = &spectrum.params;
    let static_term = weight(0.0) * lambda1(gap, t) * p.n0 * p.n0;
    let mut absorption = Vec::with_capacity(spectrum.len());
    let mut emission = Vec::with_capacity(spectrum.len());
    for m in &spectrum.modes {
        let n = thermal_occupation(m.omega_k, thermal)?;
        let w = weight(m.k * p.a) * m.beta_sq();
        absorption.push(w * lambda2(gap - m.omega_k, t) * n);
        emission.push(w * lambda1(gap + m.omega_k, t) * (1.0 + n));
    }
    let mut acc = Neumaier::default();
    acc.add(static_term);
    for (a, e) in absorption.iter().zip(&emission) {
        acc.add(*a);
        acc.add(*e);
    }
    let total = prefactor * acc.total();
    if total > 1.0 {
        return Err(RateError::NonPerturbative(total));
    }
    Ok(RateBreakdown {
        static_term,
        absorption,
        emission,
        prefactor,
        total,
        perturbative_warning: total > PERTURBATIVE_FLAG,
    })
}

/// Transition probability of the trap's target level in geometry `config`.
pub fn gamma_config(
    config: Configuration,
    trap: &ProbeTrap,
    prefactors: &CouplingPrefactors,
    spectrum: &BogoliubovSpectrum,
    thermal: &ThermalState,
    t: f64,
) -> Result<RateBreakdown, RateError> {
    if trap.nz % 2 == 1 {
        return Err(RateError::ParityForbidden(trap.nz));
    }
    let a = spectrum.params.a;
    if config == Configuration::II && !trap.is_local(a) {
        return Err(RateError::NonLocal(trap.m * trap.nu0 * a * a));
    }
    let pair = config.site_pair();
    transition_probability(
        trap.gap(),
        config.coupling_sq(prefactors) * trap.nu,
        spectrum,
        thermal,
        t,
        |ka| mode_weight(pair, ka),
    )
}

/// Long-time height of the resonance at mode `mode`:
/// 2·coupling²·ν·β²·n(ω)·T² × w(ka), with ν = ω/n_z.
///
/// The factor 2 is the ±k degeneracy.
pub fn asymptotic_peak_height(
    config: Configuration,
    spectrum: &BogoliubovSpectrum,
    mode: usize,
    prefactors: &CouplingPrefactors,
    thermal: &ThermalState,
    final_time: f64,
) -> Result<f64, RateError> {
    let m = spectrum.modes[mode];
    let resolution = final_time * neighbour_spacing(spectrum, m.omega_k);
    if resolution < 10.0 {
        log::warn!(
            "T_f * spacing = {resolution:.3} around omega = {:.5}; the asymptotic height is not reached",
            m.omega_k
        );
    }
    let nu = m.omega_k / prefactors.nz as f64;
    let n = thermal_occupation(m.omega_k, thermal)?;
    let w = mode_weight(config.site_pair(), m.k * spectrum.params.a);
    Ok(2.0 * config.coupling_sq(prefactors) * nu * m.beta_sq() * n * final_time * final_time * w)
}

/// Distance from `omega` to the nearest other distinct frequency.
fn neighbour_spacing(spectrum: &BogoliubovSpectrum, omega: f64) -> f64 {
    spectrum
        .modes
        .iter()
        .map(|m| (m.omega_k - omega).abs())
        .filter(|d| *d > 1e-12 * omega)
        .fold(f64::INFINITY, f64::min)
}
