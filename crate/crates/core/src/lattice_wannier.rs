//! Lowest band of the sinusoidal lattice, real Wannier orbitals, Hubbard
//! parameters and the probe–Wannier overlap integrals.
//!
//! Internally lengths are in units of the lattice constant and energies in
//! recoil energies, E_R = ħ²(π/a)²/(2 m_b). With those units the
//! single-particle Hamiltonian is
//!
//! ```text
//! H = -(1/π²) d²/dx² + V0 sin²(πx)
//! ```
//!
//! and a plane wave e^{iκx} has kinetic energy (κ/π)². The potential
//! couples κ to κ ± 2π only, with matrix element -V0/4.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probe::gamma_ratio;
use crate::quadrature::{CompositeGauss, QuadratureError};
use crate::sum::Neumaier;
use crate::system::{HubbardParams, ProbeTrap, SystemError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("invalid lattice input: {0}")]
    InvalidInput(String),
    #[error("eigensolver did not converge at q = {q} with plane-wave cutoff {cutoff}")]
    Convergence { q: f64, cutoff: usize },
    #[error("Bloch function vanishes at the site centre for q = {q}; cannot fix the gauge")]
    DegenerateGauge { q: f64 },
    #[error("overlap integral not resolved: {0}")]
    Resolution(#[from] QuadratureError),
    #[error(transparent)]
    System(#[from] SystemError),
}

/// V(x) = V0 sin²(πx/a), depth in recoil energies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticePotential {
    /// Depth in E_R. Zero gives the free-particle reference.
    pub v0: f64,
    /// Lattice constant, λ/2.
    pub a: f64,
    /// Boson mass in the caller's dimensionless units (ħ = 1).
    pub mb: f64,
}

impl LatticePotential {
    pub fn new(v0: f64, a: f64, mb: f64) -> Result<Self, LatticeError> {
        if !(v0 >= 0.0 && v0.is_finite()) {
            return Err(LatticeError::InvalidInput(format!("depth V0 = {v0} must be >= 0")));
        }
        if !(a > 0.0 && mb > 0.0) {
            return Err(LatticeError::InvalidInput("a and mb must be positive".into()));
        }
        Ok(Self { v0, a, mb })
    }

    /// Depth `v0` in E_R with a = 1 and m_b chosen so that E_R = 1.
    pub fn in_recoil_units(v0: f64) -> Result<Self, LatticeError> {
        Self::new(v0, 1.0, PI * PI / 2.0)
    }

    /// E_R = π²/(2 m_b a²) in the caller's units.
    pub fn recoil_energy(&self) -> f64 {
        PI * PI / (2.0 * self.mb * self.a * self.a)
    }

    fn value(&self, x: f64) -> f64 {
        let s = (PI * x).sin();
        self.v0 * s * s
    }
}

/// Lowest Bloch band on a periodic ring of `nq` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct BandStructure {
    pub potential: LatticePotential,
    pub cutoff: usize,
    /// Crystal momenta 2πj/nq (units 1/a), ascending, |j| ≤ (nq-1)/2.
    pub q: Vec<f64>,
    /// Lowest-band energies E(q) in E_R, aligned with `q`.
    pub energies: Vec<f64>,
    /// Plane-wave coefficients c_G(q) for q ≥ 0, index G + cutoff, real,
    /// gauge fixed so that Σ_G c_G(q) > 0.
    coefficients: Vec<Vec<f64>>,
}

fn lowest_bloch(v0: f64, q: f64, cutoff: usize) -> Result<(f64, Vec<f64>), LatticeError> {
    let dim = 2 * cutoff + 1;
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..dim {
        let g = i as f64 - cutoff as f64;
        let kappa = q + 2.0 * PI * g;
        h[(i, i)] = (kappa / PI).powi(2) + 0.5 * v0;
        if i + 1 < dim {
            h[(i, i + 1)] = -0.25 * v0;
            h[(i + 1, i)] = -0.25 * v0;
        }
    }
    let eig = SymmetricEigen::try_new(h, 1e-15, 10_000).ok_or(LatticeError::Convergence { q, cutoff })?;
    let (idx, e) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let mut c: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
    let at_centre: f64 = c.iter().sum();
    if at_centre.abs() < 1e-10 {
        return Err(LatticeError::DegenerateGauge { q });
    }
    if at_centre < 0.0 {
        c.iter_mut().for_each(|v| *v = -*v);
    }
    Ok((e, c))
}

/// Lowest-band energy at an arbitrary crystal momentum.
pub fn band_energy(potential: &LatticePotential, q: f64, cutoff: usize) -> Result<f64, LatticeError> {
    Ok(lowest_bloch(potential.v0, q, cutoff)?.0)
}

/// Plane-wave diagonalisation of the lowest band on an `nq`-point grid.
pub fn band_structure(potential: &LatticePotential, cutoff: usize, nq: usize) -> Result<BandStructure, LatticeError> {
    if cutoff < 8 {
        return Err(LatticeError::InvalidInput(format!("cutoff {cutoff} < 8")));
    }
    if nq < 3 || nq.is_multiple_of(2) {
        return Err(LatticeError::InvalidInput(format!("nq = {nq} must be odd and >= 3")));
    }
    let half = (nq - 1) / 2;
    let mut coefficients = Vec::with_capacity(half + 1);
    let mut positive = Vec::with_capacity(half + 1);
    for j in 0..=half {
        let q = 2.0 * PI * j as f64 / nq as f64;
        let (e, c) = lowest_bloch(potential.v0, q, cutoff)?;
        positive.push(e);
        coefficients.push(c);
    }
    // E(-q) = E(q) and c_G(-q) = c_{-G}(q) by inversion symmetry.
    let mut q = Vec::with_capacity(nq);
    let mut energies = Vec::with_capacity(nq);
    for j in -(half as i64)..=(half as i64) {
        q.push(2.0 * PI * j as f64 / nq as f64);
        energies.push(positive[j.unsigned_abs() as usize]);
    }
    Ok(BandStructure {
        potential: *potential,
        cutoff,
        q,
        energies,
        coefficients,
    })
}

impl BandStructure {
    pub fn nq(&self) -> usize {
        self.q.len()
    }

    /// Plane-wave coefficients c_G(q) for the j-th non-negative momentum.
    pub fn coefficients(&self, j: usize) -> &[f64] {
        &self.coefficients[j]
    }

    /// Full band width E(π) - E(0), evaluated at the zone edge directly.
    pub fn bandwidth(&self) -> Result<f64, LatticeError> {
        let top = band_energy(&self.potential, PI, self.cutoff)?;
        let bottom = band_energy(&self.potential, 0.0, self.cutoff)?;
        Ok(top - bottom)
    }
}

/// How the site orbital is represented.
#[derive(Debug, Clone, PartialEq)]
pub enum Orbital {
    /// Kohn-gauge Bloch sum over a ring of `ring` cells. With every allowed
    /// wavenumber written as κ_m = 2πm/ring, the orbital is the even series
    /// w0(x) = (1/ring)·[d_0 + 2 Σ_{m>0} d_m cos(κ_m x)].
    Bloch { ring: usize, d: Vec<f64> },
    /// Harmonic approximation of the well bottom, width σ = π⁻¹ (V0/E_R)^(-1/4).
    Gaussian { sigma: f64 },
}

/// Real, symmetric, orthonormal Wannier orbitals of the lowest band.
#[derive(Debug, Clone, PartialEq)]
pub struct WannierBasis {
    pub potential: LatticePotential,
    pub orbital: Orbital,
    /// Uniform samples centred on site 0 (units of a).
    pub grid: Vec<f64>,
    pub w0: Vec<f64>,
    pub w1: Vec<f64>,
    /// Lowest-band energies on the Brillouin-zone grid (empty for the
    /// Gaussian fallback).
    pub band_energies: Vec<f64>,
    pub cutoff: usize,
    samples_per_period: usize,
}

const RESEED_EVERY: usize = 64;

impl Orbital {
    /// w0(x) and, when `second` is set, w0''(x).
    fn eval(&self, x: f64, second: bool) -> f64 {
        match self {
            Orbital::Bloch { ring, d } => {
                let base = 2.0 * PI / *ring as f64;
                let theta = base * x;
                let (s1, c1) = theta.sin_cos();
                let mut acc = Neumaier::default();
                let (mut s, mut c) = (0.0f64, 1.0f64);
                for (m, &dm) in d.iter().enumerate() {
                    if m > 0 {
                        if m % RESEED_EVERY == 0 {
                            let (ns, nc) = (m as f64 * theta).sin_cos();
                            s = ns;
                            c = nc;
                        } else {
                            let nc = c * c1 - s * s1;
                            s = s * c1 + c * s1;
                            c = nc;
                        }
                    }
                    let weight = if m == 0 { 1.0 } else { 2.0 };
                    let factor = if second { -(base * m as f64).powi(2) } else { 1.0 };
                    acc.add(weight * factor * dm * c);
                }
                acc.total() / *ring as f64
            }
            Orbital::Gaussian { sigma } => {
                let norm = (PI * sigma * sigma).powf(-0.25);
                let g = norm * (-x * x / (2.0 * sigma * sigma)).exp();
                if second {
                    g * (x * x / sigma.powi(4) - 1.0 / (sigma * sigma))
                } else {
                    g
                }
            }
        }
    }
}

impl WannierBasis {
    /// w_site(x) = w0(x - site·a), x in units of a.
    pub fn value(&self, site: i64, x: f64) -> f64 {
        self.orbital.eval(x - site as f64, false)
    }

    fn second_derivative(&self, site: i64, x: f64) -> f64 {
        self.orbital.eval(x - site as f64, true)
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.orbital, Orbital::Gaussian { .. })
    }

    /// Grid spacing of the stored samples.
    pub fn spacing(&self) -> f64 {
        1.0 / self.samples_per_period as f64
    }

    /// Periodic trapezoid rule over the full ring. Exact for the
    /// band-limited Bloch sums used here. The Gaussian orbital has no ring,
    /// so a wide window around site 0 is used instead.
    fn ring_integral<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let (start, cells) = match &self.orbital {
            Orbital::Bloch { ring, .. } => (-(*ring as f64) / 2.0, *ring),
            Orbital::Gaussian { .. } => (-20.0, 40),
        };
        let n = cells * self.samples_per_period;
        let h = 1.0 / self.samples_per_period as f64;
        let acc: Neumaier = (0..n).map(|i| f(start + h * i as f64)).collect();
        acc.total() * h
    }

    /// ∫ w_i w_j dx over the ring.
    pub fn overlap(&self, i: i64, j: i64) -> f64 {
        self.ring_integral(|x| self.value(i, x) * self.value(j, x))
    }

    /// Hopping J = -∫ w0 H w1 dx, in E_R.
    pub fn hopping(&self) -> f64 {
        let v = self.potential;
        -self.ring_integral(|x| {
            let hw1 = -self.second_derivative(1, x) / (PI * PI) + v.value(x) * self.value(1, x);
            self.value(0, x) * hw1
        })
    }

    /// ∫ w0⁴ dx (units 1/a).
    pub fn quartic_integral(&self) -> f64 {
        self.ring_integral(|x| self.value(0, x).powi(4))
    }
}

fn sample(orbital: &Orbital, periods: usize, samples_per_period: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = periods * samples_per_period;
    let start = -(periods as f64) / 2.0;
    let h = 1.0 / samples_per_period as f64;
    let grid: Vec<f64> = (0..n).map(|i| start + h * i as f64).collect();
    let w0 = grid.iter().map(|&x| orbital.eval(x, false)).collect();
    let w1 = grid.iter().map(|&x| orbital.eval(x - 1.0, false)).collect();
    (grid, w0, w1)
}

/// Samples per lattice period: enough that w0⁴ is integrated exactly.
fn default_samples(cutoff: usize) -> usize {
    8 * cutoff + 8
}

/// Kohn-gauge Wannier orbitals sampled over `periods` cells around site 0.
///
/// The ring has `band.nq()` cells; `periods` may not exceed it.
pub fn wannier_states(band: &BandStructure, periods: usize) -> Result<WannierBasis, LatticeError> {
    let ring = band.nq();
    if periods < 5 || periods > ring {
        return Err(LatticeError::InvalidInput(format!(
            "sample window of {periods} periods must lie in [5, {ring}]"
        )));
    }
    let half = (ring - 1) / 2;
    let cutoff = band.cutoff;
    // κ = q_j + 2πG = 2π(j + G·ring)/ring with m = j + G·ring.
    let max_m = half + cutoff * ring;
    let mut d = vec![0.0; max_m + 1];
    for (j, c) in band.coefficients.iter().enumerate() {
        for (gi, &cg) in c.iter().enumerate() {
            let g = gi as i64 - cutoff as i64;
            // Negative m are the mirror images d_{-m} = d_m.
            let m = (j as i64 + g * ring as i64).unsigned_abs() as usize;
            if j > 0 || g >= 0 {
                d[m] = cg;
            }
        }
    }
    let orbital = Orbital::Bloch { ring, d };
    let samples_per_period = default_samples(cutoff);
    let (grid, w0, w1) = sample(&orbital, periods, samples_per_period);
    Ok(WannierBasis {
        potential: band.potential,
        orbital,
        grid,
        w0,
        w1,
        band_energies: band.energies.clone(),
        cutoff,
        samples_per_period,
    })
}

/// Harmonic-approximation orbital: ground state of the well bottom.
/// Cheap, and an independent cross-check of the Bloch construction.
pub fn gaussian_wannier(potential: &LatticePotential, periods: usize) -> Result<WannierBasis, LatticeError> {
    if potential.v0 <= 0.0 {
        return Err(LatticeError::InvalidInput(
            "the harmonic approximation needs V0 > 0".into(),
        ));
    }
    let sigma = potential.v0.powf(-0.25) / PI;
    let orbital = Orbital::Gaussian { sigma };
    let samples_per_period = 128;
    let (grid, w0, w1) = sample(&orbital, periods.max(5), samples_per_period);
    Ok(WannierBasis {
        potential: *potential,
        orbital,
        grid,
        w0,
        w1,
        band_energies: Vec::new(),
        cutoff: 0,
        samples_per_period,
    })
}

/// J = -∫w0 H w1 and U = g1d ∫w0⁴, expressed in E_R, with a = 1.
pub fn hubbard_from_wannier(basis: &WannierBasis, g1d: f64, n0: f64, ns: usize) -> Result<HubbardParams, LatticeError> {
    let j = basis.hopping();
    let u = g1d * basis.quartic_integral();
    Ok(HubbardParams::new(j, u, 0.0, n0, ns, 1.0)?)
}

/// Trap parameters an [`OverlapSet`] was computed for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapProvenance {
    pub m: f64,
    pub nu: f64,
    pub nu0: f64,
    pub nz: u32,
}

impl OverlapProvenance {
    pub fn of(trap: &ProbeTrap) -> Self {
        Self {
            m: trap.m,
            nu: trap.nu,
            nu0: trap.nu0,
            nz: trap.nz,
        }
    }
}

/// Probe–lattice overlap integrals and the transverse constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapSet {
    /// Probe width along the lattice axis, 1/√(m ν0).
    pub x0: f64,
    /// ∫ψ0(x)² w0(x)², probe on a minimum.
    pub phi: f64,
    /// ∫ψ0(x)² w1(x)², leak to the neighbouring site.
    pub phi_prime: f64,
    /// ∫ψ0(x - a/2)² w0(x)², probe on a maximum.
    pub varphi: f64,
    /// ∫ψ0(x - a/2)² w0(x) w1(x), tunnelling term.
    pub varphi_prime: f64,
    pub x00_i: f64,
    pub x00_ii: f64,
    pub y00: f64,
    pub z_n0: f64,
    /// w0(0)², used by the strictly one-dimensional trap.
    pub w0_origin_sq: f64,
    pub provenance: OverlapProvenance,
}

const OVERLAP_REL_TOL: f64 = 1e-8;
const GAUSS_ORDER: usize = 16;
const MAX_PANELS: usize = 1 << 17;

/// Normalised harmonic ground state of width x0.
pub fn probe_ground_state(x0: f64, x: f64) -> f64 {
    (PI * x0 * x0).powf(-0.25) * (-x * x / (2.0 * x0 * x0)).exp()
}

/// ∫ ψ0(x - centre)² w_i(x) w_j(x) dx for a probe of width `x0`.
///
/// Integrated over centre ± max(6 x0, 3a) with composite Gauss-Legendre,
/// halving the panels until successive results agree to 1e-8.
pub fn probe_overlap(basis: &WannierBasis, x0: f64, centre: f64, i: i64, j: i64) -> Result<f64, LatticeError> {
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(LatticeError::InvalidInput(format!(
            "probe width x0 = {x0} must be positive"
        )));
    }
    let reach = (6.0 * x0).max(3.0);
    let panel = x0.min(0.125);
    let start = ((2.0 * reach) / panel).ceil() as usize;
    let rule = CompositeGauss::new(GAUSS_ORDER);
    let v = rule.integrate_adaptive(
        centre - reach,
        centre + reach,
        start,
        OVERLAP_REL_TOL,
        MAX_PANELS,
        |x| {
            let p = probe_ground_state(x0, x - centre);
            if p == 0.0 {
                0.0
            } else {
                p * p * basis.value(i, x) * basis.value(j, x)
            }
        },
    )?;
    Ok(v)
}

/// All overlaps entering the configuration prefactors for `trap`.
pub fn overlap_integrals(basis: &WannierBasis, trap: &ProbeTrap) -> Result<OverlapSet, LatticeError> {
    trap.check()?;
    let x0 = trap.transverse_length();
    let phi = probe_overlap(basis, x0, 0.0, 0, 0)?;
    let phi_prime = probe_overlap(basis, x0, 0.0, 1, 1)?;
    let varphi = probe_overlap(basis, x0, 0.5, 0, 0)?;
    let varphi_prime = probe_overlap(basis, x0, 0.5, 0, 1)?;
    let gamma0 = gamma_ratio(0);
    let gamma_n = gamma_ratio(trap.nz);
    let sign = if trap.nz.is_multiple_of(2) { 1.0 } else { -1.0 };
    let y00 = trap.m.sqrt() * gamma0 / PI * trap.nu0.sqrt();
    let z_n0 = sign * trap.m.sqrt() * (gamma_n * gamma0).sqrt() / PI * trap.nu.sqrt();
    let w0 = basis.value(0, 0.0);
    Ok(OverlapSet {
        x0,
        phi,
        phi_prime,
        varphi,
        varphi_prime,
        x00_i: phi,
        x00_ii: varphi + varphi_prime,
        y00,
        z_n0,
        w0_origin_sq: w0 * w0,
        provenance: OverlapProvenance::of(trap),
    })
}
