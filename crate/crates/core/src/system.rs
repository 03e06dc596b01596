//! Parameter containers, unit conventions and system-level validation.
//!
//! Everything inside the crate is dimensionless with ħ = 1 and lattice
//! constant a = 1. The energy unit is either the hopping J or the recoil
//! energy E_R. SI quantities only enter through [`PhysicalInputs`].

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Planck constant, J·s (exact, SI 2019).
pub const PLANCK_H: f64 = 6.626_070_15e-34;
/// Reduced Planck constant, J·s.
pub const HBAR: f64 = PLANCK_H / (2.0 * std::f64::consts::PI);
/// Boltzmann constant, J/K (exact, SI 2019).
pub const BOLTZMANN_K: f64 = 1.380_649e-23;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
}

fn require(name: &'static str, value: f64, ok: bool, reason: &'static str) -> Result<(), SystemError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(SystemError::InvalidParameter { name, value, reason })
    }
}

/// Which quantity is set to one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EnergyUnit {
    /// Hopping J = 1.
    #[default]
    Hopping,
    /// Recoil energy E_R = ħ²(π/a)²/(2 m_b) = 1.
    Recoil,
}

/// Unit convention. ħ and a are always one; only the energy unit varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct UnitSystem {
    pub energy_unit: EnergyUnit,
}

impl UnitSystem {
    pub const HBAR: f64 = 1.0;
    pub const LATTICE_CONSTANT: f64 = 1.0;
}

/// Bose-Hubbard parameters of the superfluid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HubbardParams {
    /// Hopping J.
    pub j: f64,
    /// On-site interaction U.
    pub u: f64,
    /// Chemical potential. Carried for completeness; it does not enter the
    /// Bogoliubov spectrum.
    pub mu: f64,
    /// Condensate density per site.
    pub n0: f64,
    /// Number of lattice sites.
    pub ns: usize,
    /// Lattice constant.
    pub a: f64,
}

impl HubbardParams {
    pub fn new(j: f64, u: f64, mu: f64, n0: f64, ns: usize, a: f64) -> Result<Self, SystemError> {
        let p = Self { j, u, mu, n0, ns, a };
        p.check()?;
        Ok(p)
    }

    /// Superfluid chain in units J = a = 1 with condensate fraction one.
    pub fn superfluid(j_over_u: f64, ns: usize) -> Result<Self, SystemError> {
        require("j_over_u", j_over_u, j_over_u > 0.0, "must be positive")?;
        Self::new(1.0, 1.0 / j_over_u, 0.0, 1.0, ns, 1.0)
    }

    pub fn check(&self) -> Result<(), SystemError> {
        require("j", self.j, self.j > 0.0, "hopping must be positive")?;
        require("u", self.u, self.u >= 0.0, "interaction must be non-negative")?;
        require("n0", self.n0, self.n0 > 0.0, "condensate density must be positive")?;
        require("ns", self.ns as f64, self.ns >= 3, "need at least three sites")?;
        require("a", self.a, self.a > 0.0, "lattice constant must be positive")?;
        require("mu", self.mu, true, "must be finite")
    }

    /// J/U, infinite for a free gas.
    pub fn j_over_u(&self) -> f64 {
        if self.u == 0.0 {
            f64::INFINITY
        } else {
            self.j / self.u
        }
    }

    /// Same physics expressed in an energy unit `factor` times larger.
    pub fn rescaled_energy(&self, factor: f64) -> Self {
        Self {
            j: self.j / factor,
            u: self.u / factor,
            mu: self.mu / factor,
            ..*self
        }
    }
}

/// Where the impurity trap is centred along the lattice axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Configuration I: on a lattice minimum, coupling to one site.
    SiteMinimum,
    /// Configuration II: on a lattice maximum, coupling to two sites.
    BondMaximum,
}

/// Harmonic impurity trap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeTrap {
    /// Tunable trap frequency along z (the measured axis).
    pub nu: f64,
    /// Fixed transverse frequency along x and y.
    pub nu0: f64,
    /// Impurity mass.
    pub m: f64,
    pub placement: Placement,
    /// Target level along z.
    pub nz: u32,
    /// Bare impurity-boson contact coupling (energy × length).
    pub g: f64,
}

impl ProbeTrap {
    pub fn new(nu: f64, nu0: f64, m: f64, placement: Placement, nz: u32, g: f64) -> Result<Self, SystemError> {
        let t = Self {
            nu,
            nu0,
            m,
            placement,
            nz,
            g,
        };
        t.check()?;
        Ok(t)
    }

    pub fn check(&self) -> Result<(), SystemError> {
        require("nu", self.nu, self.nu > 0.0, "trap frequency must be positive")?;
        require("nu0", self.nu0, self.nu0 > 0.0, "transverse frequency must be positive")?;
        require("m", self.m, self.m > 0.0, "impurity mass must be positive")?;
        require("g", self.g, true, "must be finite")
    }

    /// Oscillator length 1/√(m ν) along the tunable axis.
    pub fn longitudinal_length(&self) -> f64 {
        1.0 / (self.m * self.nu).sqrt()
    }

    /// Oscillator length 1/√(m ν0) along the lattice axis; this is the
    /// width that enters the Wannier overlaps.
    pub fn transverse_length(&self) -> f64 {
        1.0 / (self.m * self.nu0).sqrt()
    }

    /// Probe energy gap n_z·ν between the ground and target level.
    pub fn gap(&self) -> f64 {
        self.nz as f64 * self.nu
    }

    /// Copy with ν retuned so that the gap equals `gap`.
    pub fn with_gap(&self, gap: f64) -> Self {
        Self {
            nu: gap / self.nz as f64,
            ..*self
        }
    }

    pub fn with_placement(&self, placement: Placement) -> Self {
        Self { placement, ..*self }
    }

    /// m·ν0·a² > 4: the probe overlaps at most two sites.
    pub fn is_local(&self, a: f64) -> bool {
        self.m * self.nu0 * a * a > 4.0
    }
}

/// Thermal state of the Bogoliubov gas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalState {
    /// Inverse temperature in units of the inverse energy unit.
    pub beta: f64,
}

impl ThermalState {
    pub fn new(beta: f64) -> Result<Self, SystemError> {
        require("beta", beta, beta > 0.0, "inverse temperature must be positive")?;
        Ok(Self { beta })
    }

    /// β for a temperature in kelvin when the energy unit is `energy_unit_joule`.
    pub fn from_temperature(temperature_k: f64, energy_unit_joule: f64) -> Result<Self, SystemError> {
        require("temperature_k", temperature_k, temperature_k > 0.0, "must be positive")?;
        require(
            "energy_unit_joule",
            energy_unit_joule,
            energy_unit_joule > 0.0,
            "must be positive",
        )?;
        Self::new(energy_unit_joule / (BOLTZMANN_K * temperature_k))
    }
}

/// A single constraint that a system fails.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Odd target level: the transition amplitude vanishes by parity.
    OddTargetLevel { nz: u32 },
    /// m·ν0·a² ≤ 4: the probe reaches beyond two sites.
    LocalityViolated { m_nu0_a2: f64 },
    /// J/U < 1: outside the superfluid regime where Bogoliubov theory applies.
    NotSuperfluid { j_over_u: f64 },
    /// g·√(m ν0)/ν above [`STRONG_COUPLING_HINT`].
    StrongCoupling { coupling_over_gap: f64 },
}

/// Threshold on g·√(m ν0)/ν for the weak-coupling hint.
pub const STRONG_COUPLING_HINT: f64 = 0.1;

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OddTargetLevel { nz } => {
                write!(f, "target level nz = {nz} is odd; only even levels are reachable")
            }
            Violation::LocalityViolated { m_nu0_a2 } => {
                write!(f, "locality condition m*nu0*a^2 > 4 fails ({m_nu0_a2})")
            }
            Violation::NotSuperfluid { j_over_u } => {
                write!(f, "J/U = {j_over_u} < 1, outside the superfluid regime")
            }
            Violation::StrongCoupling { coupling_over_gap } => write!(
                f,
                "coupling g*sqrt(m*nu0)/nu = {coupling_over_gap} is not small; first-order rates unreliable"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_locality_violation(&self) -> bool {
        self.violations
            .iter()
            .any(|v| matches!(v, Violation::LocalityViolated { .. }))
    }

    pub fn has_parity_violation(&self) -> bool {
        self.violations
            .iter()
            .any(|v| matches!(v, Violation::OddTargetLevel { .. }))
    }
}

/// Collects every constraint the system violates. Never fails; consumers
/// decide which violations are fatal.
pub fn validate_system(hubbard: &HubbardParams, trap: &ProbeTrap, _thermal: &ThermalState) -> ValidationReport {
    let mut violations = Vec::new();
    if trap.nz % 2 == 1 {
        violations.push(Violation::OddTargetLevel { nz: trap.nz });
    }
    if !trap.is_local(hubbard.a) {
        violations.push(Violation::LocalityViolated {
            m_nu0_a2: trap.m * trap.nu0 * hubbard.a * hubbard.a,
        });
    }
    let ratio = hubbard.j_over_u();
    if ratio < 1.0 {
        violations.push(Violation::NotSuperfluid { j_over_u: ratio });
    }
    let coupling_over_gap = trap.g.abs() * (trap.m * trap.nu0).sqrt() / trap.nu;
    if coupling_over_gap > STRONG_COUPLING_HINT {
        violations.push(Violation::StrongCoupling { coupling_over_gap });
    }
    ValidationReport { violations }
}

/// Laboratory inputs in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalInputs {
    pub boson_mass_kg: f64,
    pub impurity_mass_kg: f64,
    pub wavelength_m: f64,
    pub temperature_k: f64,
    /// Hopping J/h.
    pub hopping_hz: f64,
    /// On-site interaction U/h.
    pub onsite_hz: f64,
    /// Chemical potential μ/h.
    pub chemical_potential_hz: f64,
    pub n0: f64,
    pub sites: usize,
    /// Tunable trap frequency ν/(2π), i.e. ordinary frequency.
    pub trap_hz: f64,
    /// Transverse trap frequency ν0/(2π).
    pub transverse_trap_hz: f64,
    pub nz: u32,
    pub placement: Placement,
    /// Contact coupling g in J·m.
    pub coupling_j_m: f64,
    pub energy_unit: EnergyUnit,
}

/// SI size of each dimensionless unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnitScales {
    pub energy_j: f64,
    pub length_m: f64,
    pub mass_kg: f64,
    pub time_s: f64,
}

impl PhysicalInputs {
    pub fn scales(&self) -> Result<UnitScales, SystemError> {
        require(
            "boson_mass_kg",
            self.boson_mass_kg,
            self.boson_mass_kg > 0.0,
            "must be positive",
        )?;
        require(
            "wavelength_m",
            self.wavelength_m,
            self.wavelength_m > 0.0,
            "must be positive",
        )?;
        require("hopping_hz", self.hopping_hz, self.hopping_hz > 0.0, "must be positive")?;
        let a = self.wavelength_m / 2.0;
        let energy = match self.energy_unit {
            EnergyUnit::Hopping => PLANCK_H * self.hopping_hz,
            EnergyUnit::Recoil => {
                let k = std::f64::consts::PI / a;
                HBAR * HBAR * k * k / (2.0 * self.boson_mass_kg)
            }
        };
        Ok(UnitScales {
            energy_j: energy,
            length_m: a,
            mass_kg: HBAR * HBAR / (energy * a * a),
            time_s: HBAR / energy,
        })
    }
}

/// Result of [`si_to_dimensionless`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DimensionlessSystem {
    pub hubbard: HubbardParams,
    pub trap: ProbeTrap,
    pub thermal: ThermalState,
    pub scales: UnitScales,
}

/// Maps laboratory inputs to the internal units (ħ = 1, a = λ/2 = 1).
pub fn si_to_dimensionless(p: &PhysicalInputs) -> Result<DimensionlessSystem, SystemError> {
    require(
        "impurity_mass_kg",
        p.impurity_mass_kg,
        p.impurity_mass_kg > 0.0,
        "must be positive",
    )?;
    require(
        "temperature_k",
        p.temperature_k,
        p.temperature_k > 0.0,
        "must be positive",
    )?;
    require("trap_hz", p.trap_hz, p.trap_hz > 0.0, "must be positive")?;
    require(
        "transverse_trap_hz",
        p.transverse_trap_hz,
        p.transverse_trap_hz > 0.0,
        "must be positive",
    )?;
    let s = p.scales()?;
    let e = |hz: f64| PLANCK_H * hz / s.energy_j;
    let hubbard = HubbardParams::new(
        e(p.hopping_hz),
        e(p.onsite_hz),
        e(p.chemical_potential_hz),
        p.n0,
        p.sites,
        p.wavelength_m / 2.0 / s.length_m,
    )?;
    let trap = ProbeTrap::new(
        e(p.trap_hz),
        e(p.transverse_trap_hz),
        p.impurity_mass_kg / s.mass_kg,
        p.placement,
        p.nz,
        p.coupling_j_m / (s.energy_j * s.length_m),
    )?;
    let thermal = ThermalState::new(s.energy_j / (BOLTZMANN_K * p.temperature_k))?;
    Ok(DimensionlessSystem {
        hubbard,
        trap,
        thermal,
        scales: s,
    })
}

/// Inverse of [`si_to_dimensionless`] given the unit scales it produced.
pub fn dimensionless_to_si(d: &DimensionlessSystem, boson_mass_kg: f64, energy_unit: EnergyUnit) -> PhysicalInputs {
    let s = &d.scales;
    let hz = |e: f64| e * s.energy_j / PLANCK_H;
    PhysicalInputs {
        boson_mass_kg,
        impurity_mass_kg: d.trap.m * s.mass_kg,
        wavelength_m: 2.0 * d.hubbard.a * s.length_m,
        temperature_k: s.energy_j / (BOLTZMANN_K * d.thermal.beta),
        hopping_hz: hz(d.hubbard.j),
        onsite_hz: hz(d.hubbard.u),
        chemical_potential_hz: hz(d.hubbard.mu),
        n0: d.hubbard.n0,
        sites: d.hubbard.ns,
        trap_hz: hz(d.trap.nu),
        transverse_trap_hz: hz(d.trap.nu0),
        nz: d.trap.nz,
        placement: d.trap.placement,
        coupling_j_m: d.trap.g * s.energy_j * s.length_m,
        energy_unit,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn thermal_scan_trap() -> ProbeTrap {
        ProbeTrap::new(1.0, 8.0, 1.0, Placement::SiteMinimum, 2, 1e-6).unwrap()
    }

    fn rb_inputs() -> PhysicalInputs {
        PhysicalInputs {
            boson_mass_kg: 1.443_160_6e-25,
            impurity_mass_kg: 6.470_075e-26,
            wavelength_m: 1064e-9,
            temperature_k: 1e-9,
            hopping_hz: 100.0,
            onsite_hz: 10.0,
            chemical_potential_hz: 3.0,
            n0: 1.0,
            sites: 65,
            trap_hz: 150.0,
            transverse_trap_hz: 20e3,
            nz: 2,
            placement: Placement::SiteMinimum,
            coupling_j_m: 1e-40,
            energy_unit: EnergyUnit::Hopping,
        }
    }

    #[test]
    fn locality_violation_reported() {
        let h = HubbardParams::superfluid(10.0, 65).unwrap();
        let trap = ProbeTrap {
            nu0: 3.0,
            ..thermal_scan_trap()
        };
        let r = validate_system(&h, &trap, &ThermalState::new(1.0).unwrap());
        assert!(r.has_locality_violation());
    }

    #[test]
    fn parity_violation_reported() {
        let h = HubbardParams::superfluid(10.0, 65).unwrap();
        let trap = ProbeTrap {
            nz: 1,
            ..thermal_scan_trap()
        };
        let r = validate_system(&h, &trap, &ThermalState::new(1.0).unwrap());
        assert!(r.has_parity_violation());
        assert_eq!(r.violations.len(), 1);
    }

    #[test]
    fn superfluid_scan_regime_is_clean() {
        let h = HubbardParams::superfluid(10.0, 65).unwrap();
        let r = validate_system(&h, &thermal_scan_trap(), &ThermalState::new(4.8).unwrap());
        assert!(r.is_empty(), "{:?}", r);
    }

    #[test]
    fn mott_side_and_strong_coupling_flagged() {
        let h = HubbardParams::superfluid(0.5, 65).unwrap();
        let trap = ProbeTrap {
            g: 1.0,
            ..thermal_scan_trap()
        };
        let r = validate_system(&h, &trap, &ThermalState::new(1.0).unwrap());
        assert!(r
            .violations
            .iter()
            .any(|v| matches!(v, Violation::NotSuperfluid { .. })));
        assert!(r
            .violations
            .iter()
            .any(|v| matches!(v, Violation::StrongCoupling { .. })));
    }

    #[test]
    fn constructors_reject_bad_values() {
        assert!(HubbardParams::new(0.0, 0.1, 0.0, 1.0, 65, 1.0).is_err());
        assert!(HubbardParams::new(1.0, -0.1, 0.0, 1.0, 65, 1.0).is_err());
        assert!(HubbardParams::new(1.0, 0.1, 0.0, 1.0, 2, 1.0).is_err());
        assert!(ThermalState::new(0.0).is_err());
        assert!(ProbeTrap::new(1.0, 8.0, -1.0, Placement::BondMaximum, 2, 0.0).is_err());
    }

    #[test]
    fn one_nanokelvin_at_hundred_hertz_hopping() {
        // k_B·1 nK / h = 20.837 Hz, so β·J = 100 / 20.837.
        let t = ThermalState::from_temperature(1e-9, PLANCK_H * 100.0).unwrap();
        let expected = 100.0 / (BOLTZMANN_K * 1e-9 / PLANCK_H);
        assert!((t.beta - expected).abs() < 1e-12);
        assert!((t.beta - 4.80).abs() < 5e-3);
        let d = si_to_dimensionless(&rb_inputs()).unwrap();
        assert!((d.thermal.beta - t.beta).abs() < 1e-12);
        assert_eq!(d.hubbard.j, 1.0);
        assert!((d.hubbard.u - 0.1).abs() < 1e-15);
    }

    #[test]
    fn lattice_constant_is_half_wavelength() {
        let s = rb_inputs().scales().unwrap();
        assert!((s.length_m - 532e-9).abs() < 1e-21);
    }

    #[test]
    fn high_temperature_limit() {
        let mut p = rb_inputs();
        let mut last = f64::INFINITY;
        for t in [1e-9, 1e-6, 1e-3, 1.0, 1e3] {
            p.temperature_k = t;
            let beta = si_to_dimensionless(&p).unwrap().thermal.beta;
            assert!(beta < last);
            last = beta;
        }
        assert!(last < 1e-11);
    }

    #[test]
    fn si_round_trip() {
        for unit in [EnergyUnit::Hopping, EnergyUnit::Recoil] {
            let p = PhysicalInputs {
                energy_unit: unit,
                ..rb_inputs()
            };
            let d = si_to_dimensionless(&p).unwrap();
            let back = dimensionless_to_si(&d, p.boson_mass_kg, unit);
            let pairs = [
                (p.impurity_mass_kg, back.impurity_mass_kg),
                (p.wavelength_m, back.wavelength_m),
                (p.temperature_k, back.temperature_k),
                (p.hopping_hz, back.hopping_hz),
                (p.onsite_hz, back.onsite_hz),
                (p.chemical_potential_hz, back.chemical_potential_hz),
                (p.trap_hz, back.trap_hz),
                (p.transverse_trap_hz, back.transverse_trap_hz),
                (p.coupling_j_m, back.coupling_j_m),
            ];
            for (a, b) in pairs {
                assert!(((a - b) / a).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn ratio_preserving_rescale_is_bit_identical() {
        // Masses ×2 with every energy ×1/2 keeps all dimensionless ratios.
        let p = rb_inputs();
        let q = PhysicalInputs {
            boson_mass_kg: p.boson_mass_kg * 2.0,
            impurity_mass_kg: p.impurity_mass_kg * 2.0,
            temperature_k: p.temperature_k * 0.5,
            hopping_hz: p.hopping_hz * 0.5,
            onsite_hz: p.onsite_hz * 0.5,
            chemical_potential_hz: p.chemical_potential_hz * 0.5,
            trap_hz: p.trap_hz * 0.5,
            transverse_trap_hz: p.transverse_trap_hz * 0.5,
            coupling_j_m: p.coupling_j_m * 0.5,
            ..p
        };
        for unit in [EnergyUnit::Hopping, EnergyUnit::Recoil] {
            let a = si_to_dimensionless(&PhysicalInputs { energy_unit: unit, ..p }).unwrap();
            let b = si_to_dimensionless(&PhysicalInputs { energy_unit: unit, ..q }).unwrap();
            assert_eq!(a.hubbard, b.hubbard);
            assert_eq!(a.trap, b.trap);
            assert_eq!(a.thermal, b.thermal);
        }
    }

    #[test]
    fn nonpositive_si_input_rejected() {
        let p = PhysicalInputs {
            temperature_k: 0.0,
            ..rb_inputs()
        };
        assert!(si_to_dimensionless(&p).is_err());
        let p = PhysicalInputs {
            wavelength_m: -1.0,
            ..rb_inputs()
        };
        assert!(si_to_dimensionless(&p).is_err());
    }

    proptest! {
        // Power-of-two scale factors are exact in binary floating point, so
        // the dimensionless output must not change by a single bit.
        #[test]
        fn binary_rescale_leaves_dimensionless_system_unchanged(e in -20i32..20, hopping in 10.0f64..1e3, onsite in 0.1f64..1e3) {
            let p = PhysicalInputs { hopping_hz: hopping, onsite_hz: onsite, ..rb_inputs() };
            let up = 2f64.powi(e);
            let down = 1.0 / up;
            let q = PhysicalInputs {
                boson_mass_kg: p.boson_mass_kg * up,
                impurity_mass_kg: p.impurity_mass_kg * up,
                temperature_k: p.temperature_k * down,
                hopping_hz: p.hopping_hz * down,
                onsite_hz: p.onsite_hz * down,
                chemical_potential_hz: p.chemical_potential_hz * down,
                trap_hz: p.trap_hz * down,
                transverse_trap_hz: p.transverse_trap_hz * down,
                coupling_j_m: p.coupling_j_m * down,
                ..p
            };
            let a = si_to_dimensionless(&p).unwrap();
            let b = si_to_dimensionless(&q).unwrap();
            prop_assert_eq!(a.hubbard, b.hubbard);
            prop_assert_eq!(a.trap, b.trap);
            prop_assert_eq!(a.thermal, b.thermal);
        }
    }
}
