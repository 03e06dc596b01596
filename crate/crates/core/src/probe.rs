//! Harmonic-trap eigenfunctions of the impurity, parity selection and the
//! effective coupling prefactors of the three trap geometries.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice_wannier::{OverlapProvenance, OverlapSet};
use crate::system::ProbeTrap;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error("overlaps were computed for {found:?} but the trap is {expected:?}")]
    Provenance {
        expected: OverlapProvenance,
        found: OverlapProvenance,
    },
}

/// ψ_n(x) = (mν)^{1/4} π^{-1/4} (2ⁿ n!)^{-1/2} H_n(√(mν) x) e^{-mνx²/2}.
///
/// Evaluated with the normalised three-term recurrence
/// ψ_{k+1} = √(2/(k+1)) ξ ψ_k - √(k/(k+1)) ψ_{k-1}, which never forms n! or
/// H_n and stays finite for large n.
pub fn oscillator_wavefunction(n: u32, m: f64, nu: f64, x: f64) -> f64 {
    let alpha = m * nu;
    let xi = alpha.sqrt() * x;
    let mut prev = (alpha / PI).powf(0.25) * (-0.5 * xi * xi).exp();
    if n == 0 {
        return prev;
    }
    let mut cur = 2f64.sqrt() * xi * prev;
    for k in 1..n {
        let k = k as f64;
        let next = (2.0 / (k + 1.0)).sqrt() * xi * cur - (k / (k + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// γ_n = Γ(n + 1/2)/Γ(n + 1), from γ_0 = √π and γ_{k+1} = γ_k (k + 1/2)/(k + 1).
pub fn gamma_ratio(n: u32) -> f64 {
    (0..n).fold(PI.sqrt(), |g, k| g * (k as f64 + 0.5) / (k as f64 + 1.0))
}

/// Parity-resolved transition amplitude between trap levels n and m:
/// zero for n + m odd, (-1)^{n+m} √(γ_n γ_m) otherwise.
pub fn selection_amplitude(n: u32, m: u32) -> f64 {
    if (n + m) % 2 == 1 {
        0.0
    } else {
        (gamma_ratio(n) * gamma_ratio(m)).sqrt()
    }
}

/// Squared effective couplings of the three trap geometries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingPrefactors {
    /// g_{I,n}² = (g²/ν) X00_I² Y00² Z_n0².
    pub gi_n_sq: f64,
    /// g_{II,n}² = 2 (g²/ν) X00_II² Y00² Z_n0².
    pub gii_n_sq: f64,
    /// g′_n² = g² m w0(0)⁴ γ_n γ_0 / π², strictly one-dimensional trap.
    pub g1d_n_sq: f64,
    pub x00_i: f64,
    pub x00_ii: f64,
    pub y00: f64,
    pub z_n0: f64,
    pub nz: u32,
}

impl CouplingPrefactors {
    /// g_{I,n}²/g_{II,n}², the factor that turns the peak-height ratio into
    /// 1 + cos(ka).
    pub fn coupling_ratio(&self) -> f64 {
        self.gi_n_sq / self.gii_n_sq
    }
}

/// Combines trap constants and lattice overlaps into the coupling prefactors.
///
/// Z_n0² ∝ ν, so g_{I,n}² and g_{II,n}² do not depend on the tunable ν and
/// stay fixed during a frequency sweep.
pub fn prefactors(trap: &ProbeTrap, overlaps: &OverlapSet) -> Result<CouplingPrefactors, ProbeError> {
    let expected = OverlapProvenance::of(trap);
    let found = overlaps.provenance;
    let same = (expected.m - found.m).abs() <= 1e-12 * expected.m
        && (expected.nu0 - found.nu0).abs() <= 1e-12 * expected.nu0
        && expected.nz == found.nz;
    if !same {
        return Err(ProbeError::Provenance { expected, found });
    }
    // Z_n0 evaluated at the trap's current ν.
    let z = overlaps.z_n0 * (trap.nu / found.nu).sqrt();
    let transverse = overlaps.y00 * overlaps.y00 * z * z;
    let g2 = trap.g * trap.g;
    let gi_n_sq = g2 / trap.nu * overlaps.x00_i.powi(2) * transverse;
    let gii_n_sq = 2.0 * g2 / trap.nu * overlaps.x00_ii.powi(2) * transverse;
    let g1d_n_sq = g2 * trap.m * overlaps.w0_origin_sq.powi(2) * gamma_ratio(trap.nz) * gamma_ratio(0) / (PI * PI);
    Ok(CouplingPrefactors {
        gi_n_sq,
        gii_n_sq,
        g1d_n_sq,
        x00_i: overlaps.x00_i,
        x00_ii: overlaps.x00_ii,
        y00: overlaps.y00,
        z_n0: z,
        nz: trap.nz,
    })
}

/// Bare coupling g for which g_{I,n}·T_f equals `product`.
pub fn coupling_for_product(
    trap: &ProbeTrap,
    overlaps: &OverlapSet,
    product: f64,
    final_time: f64,
) -> Result<f64, ProbeError> {
    let unit = prefactors(&ProbeTrap { g: 1.0, ..*trap }, overlaps)?;
    Ok(product / final_time / unit.gi_n_sq.sqrt())
}
