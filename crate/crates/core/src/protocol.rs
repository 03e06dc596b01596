//! The two-placement spectroscopy run: a sweep of the probe gap at fixed
//! interaction time, measurement noise, peak finding and the reconstruction
//! of ω(k) and β_k² from the configuration I / II peak heights.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bogoliubov::{build_spectrum, thermal_occupation, BogoliubovError, BogoliubovSpectrum};
use crate::lattice_wannier::OverlapSet;
use crate::probe::{prefactors, CouplingPrefactors, ProbeError};
use crate::rates::{lambda1, lambda2, Configuration, RateError, KERNEL_GUARD, PERTURBATIVE_FLAG};
use crate::sum::Neumaier;
use crate::system::{validate_system, HubbardParams, ProbeTrap, ThermalState};

/// Gap points per work unit; also the granularity of the noise streams, so
/// noisy output does not depend on the thread count.
pub const CHUNK: usize = 1 << 16;

/// Below |δ T| = this the sweep evaluates λ directly instead of by angle
/// addition, which loses relative accuracy as sin(δT/2) → 0.
const DIRECT_BELOW: f64 = 64.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("invalid sweep plan: {0}")]
    Plan(String),
    #[error("invalid system: {0}")]
    System(String),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    Spectrum(#[from] BogoliubovError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

/// Largest gap spacing that puts six points across a resonance of width 2π/T.
pub fn max_grid_spacing(final_time: f64) -> f64 {
    PI / (3.0 * final_time)
}

/// Interaction time with π/T = Δω_min/8, comfortably inside the
/// resolvability bound π/T < Δω_min/4.
pub fn default_final_time(spectrum: &BogoliubovSpectrum) -> f64 {
    8.0 * PI / spectrum.min_spacing()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GapGrid {
    Uniform { start: f64, step: f64, count: usize },
    Explicit { gaps: Vec<f64> },
}

impl GapGrid {
    pub fn len(&self) -> usize {
        match self {
            GapGrid::Uniform { count, .. } => *count,
            GapGrid::Explicit { gaps } => gaps.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn value(&self, i: usize) -> f64 {
        match self {
            GapGrid::Uniform { start, step, .. } => start + step * i as f64,
            GapGrid::Explicit { gaps } => gaps[i],
        }
    }

    fn check(&self, final_time: f64) -> Result<(), ProtocolError> {
        let limit = max_grid_spacing(final_time) * (1.0 + 1e-12);
        match self {
            GapGrid::Uniform { start, step, count } => {
                if !(*start > 0.0 && start.is_finite()) {
                    return Err(ProtocolError::Plan(format!(
                        "grid start {start} must be a positive gap"
                    )));
                }
                if *count < 3 {
                    return Err(ProtocolError::Plan(format!(
                        "grid needs at least 3 points, got {count}"
                    )));
                }
                if !(*step > 0.0) {
                    return Err(ProtocolError::Plan(format!("grid step {step} must be positive")));
                }
                if *step > limit {
                    return Err(ProtocolError::Plan(format!(
                        "grid step {step:e} exceeds pi/(3 T_f) = {:e}",
                        max_grid_spacing(final_time)
                    )));
                }
            }
            GapGrid::Explicit { gaps } => {
                if gaps.len() < 3 {
                    return Err(ProtocolError::Plan(format!(
                        "grid needs at least 3 points, got {}",
                        gaps.len()
                    )));
                }
                if !(gaps[0] > 0.0) {
                    return Err(ProtocolError::Plan(format!(
                        "grid start {} must be a positive gap",
                        gaps[0]
                    )));
                }
                for (i, w) in gaps.windows(2).enumerate() {
                    let d = w[1] - w[0];
                    if !(d > 0.0) {
                        return Err(ProtocolError::Plan(format!(
                            "grid not strictly increasing at index {}",
                            i + 1
                        )));
                    }
                    if d > limit {
                        return Err(ProtocolError::Plan(format!(
                            "spacing {d:e} at index {} exceeds pi/(3 T_f) = {:e}",
                            i + 1,
                            max_grid_spacing(final_time)
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub grid: GapGrid,
    pub final_time: f64,
    /// Relative standard deviation of a single measurement.
    pub noise_level: f64,
    pub seed: u64,
    /// Independent draws averaged per gap point.
    pub samples_per_point: u32,
}

impl SweepPlan {
    /// Uniform grid over [lo, hi] with the coarsest admissible spacing.
    pub fn uniform(lo: f64, hi: f64, final_time: f64) -> Result<Self, ProtocolError> {
        if !(final_time > 0.0 && final_time.is_finite()) {
            return Err(ProtocolError::Plan(format!("T_f = {final_time} must be positive")));
        }
        if !(hi > lo && lo > 0.0) {
            return Err(ProtocolError::Plan(format!("need 0 < lo < hi, got [{lo}, {hi}]")));
        }
        let intervals = ((hi - lo) / max_grid_spacing(final_time)).ceil().max(2.0);
        let plan = Self {
            grid: GapGrid::Uniform {
                start: lo,
                step: (hi - lo) / intervals,
                count: intervals as usize + 1,
            },
            final_time,
            noise_level: 0.0,
            seed: 0,
            samples_per_point: 1,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Uniform grid from ω_min/2 to ω_max + ω_min/2.
    pub fn covering(spectrum: &BogoliubovSpectrum, final_time: f64) -> Result<Self, ProtocolError> {
        let lo = spectrum.modes.iter().map(|m| m.omega_k).fold(f64::INFINITY, f64::min);
        let hi = spectrum.max_frequency();
        Self::uniform(0.5 * lo, hi + 0.5 * lo, final_time)
    }

    pub fn with_noise(self, noise_level: f64, samples_per_point: u32, seed: u64) -> Self {
        Self {
            noise_level,
            samples_per_point,
            seed,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !(self.final_time > 0.0 && self.final_time.is_finite()) {
            return Err(ProtocolError::Plan(format!(
                "T_f = {} must be positive",
                self.final_time
            )));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(ProtocolError::Plan(format!(
                "noise level {} must be >= 0",
                self.noise_level
            )));
        }
        if self.samples_per_point == 0 {
            return Err(ProtocolError::Plan("samples_per_point must be >= 1".into()));
        }
        self.grid.check(self.final_time)
    }
}

/// Everything a sweep needs to know about the gas and the probe.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemBundle {
    pub hubbard: HubbardParams,
    pub trap: ProbeTrap,
    pub thermal: ThermalState,
    pub spectrum: BogoliubovSpectrum,
    pub prefactors: CouplingPrefactors,
}

impl SystemBundle {
    pub fn new(
        hubbard: HubbardParams,
        trap: ProbeTrap,
        thermal: ThermalState,
        overlaps: &OverlapSet,
    ) -> Result<Self, ProtocolError> {
        let p = prefactors(&trap, overlaps)?;
        Self::with_prefactors(hubbard, trap, thermal, p)
    }

    pub fn with_prefactors(
        hubbard: HubbardParams,
        trap: ProbeTrap,
        thermal: ThermalState,
        prefactors: CouplingPrefactors,
    ) -> Result<Self, ProtocolError> {
        let report = validate_system(&hubbard, &trap, &thermal);
        if report.has_parity_violation() || report.has_locality_violation() {
            return Err(ProtocolError::System(
                report
                    .violations
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join("; "),
            ));
        }
        for v in &report.violations {
            log::warn!("{v}");
        }
        let spectrum = build_spectrum(&hubbard)?;
        Ok(Self {
            hubbard,
            trap,
            thermal,
            spectrum,
            prefactors,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub gaps: Arc<[f64]>,
    pub gamma_i_clean: Arc<[f64]>,
    pub gamma_ii_clean: Arc<[f64]>,
    pub gamma_i_noisy: Arc<[f64]>,
    pub gamma_ii_noisy: Arc<[f64]>,
    /// Noisy values that came out negative and were set to 0.
    pub clamped: usize,
    pub plan: SweepPlan,
}

impl SweepResult {
    pub fn len(&self) -> usize {
        self.gaps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaps.is_empty()
    }

    pub fn clean(&self, config: Configuration) -> &[f64] {
        match config {
            Configuration::II => &self.gamma_ii_clean,
            _ => &self.gamma_i_clean,
        }
    }

    pub fn noisy(&self, config: Configuration) -> &[f64] {
        match config {
            Configuration::II => &self.gamma_ii_noisy,
            _ => &self.gamma_i_noisy,
        }
    }

    /// Same clean data measured with a different noise realisation.
    pub fn renoise(&self, noise_level: f64, samples_per_point: u32, seed: u64) -> Result<Self, ProtocolError> {
        let plan = self.plan.clone().with_noise(noise_level, samples_per_point, seed);
        plan.validate()?;
        let (gamma_i_noisy, ci) = add_noise(&self.gamma_i_clean, &plan, 0);
        let (gamma_ii_noisy, cii) = add_noise(&self.gamma_ii_clean, &plan, 1);
        Ok(Self {
            gaps: Arc::clone(&self.gaps),
            gamma_i_clean: Arc::clone(&self.gamma_i_clean),
            gamma_ii_clean: Arc::clone(&self.gamma_ii_clean),
            gamma_i_noisy,
            gamma_ii_noisy,
            clamped: ci + cii,
            plan,
        })
    }
}

/// One degenerate ±k group folded into its spectral weights.
struct ModeGroup {
    omega: f64,
    sin_half: f64,
    cos_half: f64,
    absorption_i: f64,
    absorption_ii: f64,
    emission_i: f64,
    emission_ii: f64,
}

/// Both configuration totals at one interaction time, for many gaps.
///
/// Each gap needs only sin/cos(gap·T/2); the per-mode phases follow by angle
/// addition from values precomputed once per mode.
struct SweepKernel {
    groups: Vec<ModeGroup>,
    t: f64,
    condensate: f64,
    coupling_i: f64,
    coupling_ii: f64,
    nz: f64,
}

impl SweepKernel {
    fn new(bundle: &SystemBundle, t: f64) -> Result<Self, ProtocolError> {
        let s = &bundle.spectrum;
        let a = s.params.a;
        let mut groups: Vec<ModeGroup> = Vec::new();
        for m in &s.modes {
            let n = thermal_occupation(m.omega_k, &bundle.thermal)?;
            let b2 = m.beta_sq();
            let bond = 1.0 + (m.k * a).cos();
            let g = match groups.iter_mut().find(|g| g.omega == m.omega_k) {
                Some(g) => g,
                None => {
                    let (sin_half, cos_half) = (0.5 * m.omega_k * t).sin_cos();
                    groups.push(ModeGroup {
                        omega: m.omega_k,
                        sin_half,
                        cos_half,
                        absorption_i: 0.0,
                        absorption_ii: 0.0,
                        emission_i: 0.0,
                        emission_ii: 0.0,
                    });
                    groups.last_mut().unwrap()
                }
            };
            g.absorption_i += b2 * n;
            g.absorption_ii += bond * b2 * n;
            g.emission_i += b2 * (1.0 + n);
            g.emission_ii += bond * b2 * (1.0 + n);
        }
        Ok(Self {
            groups,
            t,
            condensate: s.params.n0 * s.params.n0,
            coupling_i: bundle.prefactors.gi_n_sq,
            coupling_ii: bundle.prefactors.gii_n_sq,
            nz: bundle.trap.nz as f64,
        })
    }

    #[inline]
    fn eval(&self, gap: f64) -> (f64, f64) {
        let t = self.t;
        let (sg, cg) = (0.5 * gap * t).sin_cos();
        let stat = if (gap * t).abs() < KERNEL_GUARD {
            lambda1(gap, t)
        } else {
            4.0 * sg * sg / (gap * gap)
        } * self.condensate;
        let mut acc_i = Neumaier::default();
        let mut acc_ii = Neumaier::default();
        acc_i.add(stat);
        acc_ii.add(2.0 * stat);
        for g in &self.groups {
            let d = gap - g.omega;
            let minus = if (d * t).abs() < DIRECT_BELOW {
                lambda2(d, t)
            } else {
                let s = sg * g.cos_half - cg * g.sin_half;
                4.0 * s * s / (d * d)
            };
            let p = gap + g.omega;
            let plus = if p * t < DIRECT_BELOW {
                lambda1(p, t)
            } else {
                let s = sg * g.cos_half + cg * g.sin_half;
                4.0 * s * s / (p * p)
            };
            acc_i.add(g.absorption_i * minus + g.emission_i * plus);
            acc_ii.add(g.absorption_ii * minus + g.emission_ii * plus);
        }
        let nu = gap / self.nz;
        (
            self.coupling_i * nu * acc_i.total(),
            self.coupling_ii * nu * acc_ii.total(),
        )
    }
}

/// Γ^I and Γ^II at T_f over the whole gap grid, plus the noisy copies.
pub fn run_sweep(plan: &SweepPlan, bundle: &SystemBundle) -> Result<SweepResult, ProtocolError> {
    plan.validate()?;
    if bundle.trap.nz % 2 == 1 {
        return Err(RateError::ParityForbidden(bundle.trap.nz).into());
    }
    let kernel = SweepKernel::new(bundle, plan.final_time)?;
    let n = plan.grid.len();
    let gaps: Vec<f64> = (0..n).map(|i| plan.grid.value(i)).collect();
    let mut gi = vec![0.0; n];
    let mut gii = vec![0.0; n];
    let flagged = gi
        .par_chunks_mut(CHUNK)
        .zip(gii.par_chunks_mut(CHUNK))
        .zip(gaps.par_chunks(CHUNK))
        .map(|((a, b), g)| {
            let mut flagged = 0usize;
            for ((x, y), gap) in a.iter_mut().zip(b.iter_mut()).zip(g) {
                let (pi, pii) = kernel.eval(*gap);
                if pi > 1.0 || pii > 1.0 {
                    return Err(RateError::NonPerturbative(pi.max(pii)));
                }
                flagged += usize::from(pi > PERTURBATIVE_FLAG || pii > PERTURBATIVE_FLAG);
                *x = pi;
                *y = pii;
            }
            Ok(flagged)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    if flagged > 0 {
        log::warn!("{flagged} sweep points exceed the first-order validity hint {PERTURBATIVE_FLAG}");
    }
    let gamma_i_clean: Arc<[f64]> = gi.into();
    let gamma_ii_clean: Arc<[f64]> = gii.into();
    let (gamma_i_noisy, ci) = add_noise(&gamma_i_clean, plan, 0);
    let (gamma_ii_noisy, cii) = add_noise(&gamma_ii_clean, plan, 1);
    Ok(SweepResult {
        gaps: gaps.into(),
        gamma_i_clean,
        gamma_ii_clean,
        gamma_i_noisy,
        gamma_ii_noisy,
        clamped: ci + cii,
        plan: plan.clone(),
    })
}

/// clean × (1 + σ·mean of `samples` standard normals), one ChaCha stream per
/// (configuration, chunk).
fn add_noise(clean: &Arc<[f64]>, plan: &SweepPlan, config: u64) -> (Arc<[f64]>, usize) {
    if plan.noise_level == 0.0 {
        return (Arc::clone(clean), 0);
    }
    let sigma = plan.noise_level;
    let samples = plan.samples_per_point;
    let parts: Vec<(Vec<f64>, usize)> = clean
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            rng.set_stream(((c as u64) << 1) | config);
            let mut clamped = 0;
            let out = chunk
                .iter()
                .map(|&v| {
                    let mut xi = 0.0;
                    for _ in 0..samples {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        xi += z;
                    }
                    let noisy = v * (1.0 + sigma * xi / samples as f64);
                    if noisy < 0.0 {
                        clamped += 1;
                        0.0
                    } else {
                        noisy
                    }
                })
                .collect();
            (out, clamped)
        })
        .collect();
    let clamped = parts.iter().map(|p| p.1).sum();
    let mut out = Vec::with_capacity(clean.len());
    for (p, _) in parts {
        out.extend(p);
    }
    (out.into(), clamped)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakParams {
    /// A candidate must be the largest value within ± this gap distance.
    pub window: f64,
    pub threshold_factor: f64,
    /// Absolute threshold floor.
    pub floor: f64,
    /// Points per block for the running median.
    pub block: usize,
    /// Peaks closer than this are merged into the higher one.
    pub merge_distance: f64,
    /// Candidates below this multiple of a stronger peak's sinc² envelope
    /// are taken as its side lobes.
    pub sidelobe_margin: f64,
    /// A candidate must exceed this multiple of the signal one to two
    /// oscillation periods (2π/T) away, on at least one side. Rejects the
    /// ripple of slowly varying backgrounds, which has equal neighbouring humps.
    pub shoulder_contrast: f64,
    pub final_time: f64,
}

impl PeakParams {
    pub fn for_final_time(final_time: f64) -> Self {
        Self {
            window: 4.0 * PI / final_time,
            threshold_factor: 3.0,
            floor: f64::MIN_POSITIVE,
            block: 4096,
            merge_distance: 2.0 * PI / final_time,
            sidelobe_margin: 3.0,
            shoulder_contrast: 3.0,
            final_time,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub omega: f64,
    pub height: f64,
    /// Grid index of the sampled maximum.
    pub index: usize,
}

/// Peaks of the measured (noisy) signal of `config`.
pub fn detect_peaks(result: &SweepResult, config: Configuration, params: &PeakParams) -> Vec<Peak> {
    find_peaks(&result.gaps, result.noisy(config), params)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

/// Vertex of the parabola through three points; None if not concave.
fn parabola_vertex(x: [f64; 3], y: [f64; 3]) -> Option<(f64, f64)> {
    let d01 = (y[1] - y[0]) / (x[1] - x[0]);
    let d12 = (y[2] - y[1]) / (x[2] - x[1]);
    let a = (d12 - d01) / (x[2] - x[0]);
    if !(a < 0.0) {
        return None;
    }
    let b = d01 - a * (x[0] + x[1]);
    let xv = (-b / (2.0 * a)).clamp(x[0], x[2]);
    // p(x) = y1 + d01 (x - x1) + a (x - x0)(x - x1)
    let yv = y[1] + d01 * (xv - x[1]) + a * (xv - x[0]) * (xv - x[1]);
    Some((xv, yv))
}

/// Local maxima of `signal` over a strictly increasing `gaps` grid.
pub fn find_peaks(gaps: &[f64], signal: &[f64], params: &PeakParams) -> Vec<Peak> {
    let n = gaps.len().min(signal.len());
    if n < 3 {
        return Vec::new();
    }
    let block = if n < 2 * params.block { n } else { params.block };
    let thresholds: Vec<f64> = signal[..n]
        .chunks(block)
        .map(|c| (params.threshold_factor * median(c)).max(params.floor))
        .collect();
    let r = params.window;
    let (lo, hi) = (gaps[0], gaps[n - 1]);
    let mut candidates = Vec::new();
    for i in 1..n - 1 {
        let v = signal[i];
        if signal[i - 1] >= v || signal[i + 1] > v || v <= thresholds[i / block] {
            continue;
        }
        let g = gaps[i];
        if g - lo < r || hi - g < r {
            continue;
        }
        let left = (0..i).rev().take_while(|&j| g - gaps[j] <= r).all(|j| signal[j] < v);
        let right = left && (i + 1..n).take_while(|&j| gaps[j] - g <= r).all(|j| signal[j] <= v);
        if !right {
            continue;
        }
        let (near, far) = (2.5 * PI / params.final_time, 4.5 * PI / params.final_time);
        let band_max = |js: &mut dyn Iterator<Item = usize>| {
            js.map(|j| (j, (gaps[j] - g).abs()))
                .take_while(|&(_, d)| d <= far)
                .filter(|&(_, d)| d >= near)
                .map(|(j, _)| signal[j])
                .fold(0.0_f64, f64::max)
        };
        let shoulder = band_max(&mut (0..i).rev()).min(band_max(&mut (i + 1..n)));
        if v <= params.shoulder_contrast * shoulder {
            continue;
        }
        let x = [gaps[i - 1], g, gaps[i + 1]];
        let y = [signal[i - 1], v, signal[i + 1]];
        let (omega, height) = parabola_vertex(x, y).unwrap_or((g, v));
        candidates.push(Peak {
            omega,
            height,
            index: i,
        });
    }
    candidates.sort_by(|a, b| b.height.total_cmp(&a.height).then(a.index.cmp(&b.index)));
    let mut accepted: Vec<Peak> = Vec::new();
    for c in candidates {
        let shadowed = accepted.iter().any(|p| {
            let d = (c.omega - p.omega).abs();
            d < params.merge_distance || {
                let x = d * params.final_time;
                c.height < params.sidelobe_margin * p.height * 4.0 / (x * x)
            }
        });
        if !shadowed {
            accepted.push(c);
        }
    }
    accepted.sort_by(|a, b| a.omega.total_cmp(&b.omega));
    accepted
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingRatio {
    /// g_I²/g_II² from the overlap integrals.
    Computed(f64),
    /// Scaled so the largest observed height ratio maps to 1 + cos 0 = 2.
    Calibrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedPoint {
    pub ka: f64,
    pub omega: f64,
    pub beta_sq: f64,
    pub height_i: f64,
    pub height_ii: f64,
    /// (h_II/h_I)·ratio before clamping to [0, 2].
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedPeak {
    pub omega: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedDispersion {
    /// Sorted by ω.
    pub points: Vec<ReconstructedPoint>,
    pub rms_rel_error_omega: Option<f64>,
    pub rms_rel_error_beta: Option<f64>,
    pub dropped_peaks: Vec<DroppedPeak>,
    pub coupling_ratio: f64,
    pub ratio_mode: CouplingRatio,
}

impl ReconstructedDispersion {
    pub fn attach(&mut self, metrics: &ErrorMetrics) {
        self.rms_rel_error_omega = metrics.rms_rel_error_omega;
        self.rms_rel_error_beta = metrics.rms_rel_error_beta;
    }
}

/// Allowed excursion of the height ratio outside [0, 2] before a peak is dropped.
const RATIO_SLACK: f64 = 0.1;

/// Assigns ka = arccos(r - 1) with r = (h_II/h_I)·g_I²/g_II² to each matched
/// pair, and β² = h_I/(2 g_I² ν n(ω) T²).
pub fn reconstruct(
    peaks_i: &[Peak],
    peaks_ii: &[Peak],
    ratio: CouplingRatio,
    thermal: &ThermalState,
    prefactors: &CouplingPrefactors,
    final_time: f64,
) -> Result<ReconstructedDispersion, ProtocolError> {
    let tol = 2.0 * PI / final_time;
    let mut used = vec![false; peaks_ii.len()];
    let mut pairs = Vec::new();
    let mut dropped = Vec::new();
    for p in peaks_i {
        let best = peaks_ii
            .iter()
            .enumerate()
            .filter(|(j, q)| !used[*j] && (q.omega - p.omega).abs() <= tol)
            .min_by(|a, b| (a.1.omega - p.omega).abs().total_cmp(&(b.1.omega - p.omega).abs()));
        match best {
            Some((j, q)) => {
                used[j] = true;
                pairs.push((*p, *q));
            }
            None => dropped.push(DroppedPeak {
                omega: p.omega,
                reason: "no configuration II partner".into(),
            }),
        }
    }
    for (q, _) in peaks_ii.iter().zip(&used).filter(|(_, u)| !**u) {
        dropped.push(DroppedPeak {
            omega: q.omega,
            reason: "no configuration I partner".into(),
        });
    }
    let coupling_ratio = match ratio {
        CouplingRatio::Computed(r) => r,
        CouplingRatio::Calibrated => {
            let max = pairs.iter().map(|(a, b)| b.height / a.height).fold(0.0, f64::max);
            if max > 0.0 {
                2.0 / max
            } else {
                1.0
            }
        }
    };
    let mut points = Vec::new();
    let t2 = final_time * final_time;
    for (a, b) in pairs {
        let r = b.height / a.height * coupling_ratio;
        if !(-RATIO_SLACK..=2.0 + RATIO_SLACK).contains(&r) {
            dropped.push(DroppedPeak {
                omega: a.omega,
                reason: "ratio out of range".into(),
            });
            continue;
        }
        let ka = (r.clamp(0.0, 2.0) - 1.0).acos();
        let nu = a.omega / prefactors.nz as f64;
        let n = thermal_occupation(a.omega, thermal)?;
        points.push(ReconstructedPoint {
            ka,
            omega: a.omega,
            beta_sq: a.height / (2.0 * prefactors.gi_n_sq * nu * n * t2),
            height_i: a.height,
            height_ii: b.height,
            ratio: r,
        });
    }
    points.sort_by(|x, y| x.omega.total_cmp(&y.omega));
    dropped.sort_by(|x, y| x.omega.total_cmp(&y.omega));
    Ok(ReconstructedDispersion {
        points,
        rms_rel_error_omega: None,
        rms_rel_error_beta: None,
        dropped_peaks: dropped,
        coupling_ratio,
        ratio_mode: ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointError {
    pub ka_true: f64,
    pub omega_true: f64,
    pub beta_sq_true: f64,
    pub rel_err_omega: f64,
    pub rel_err_beta: f64,
    pub ka_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub rms_rel_error_omega: Option<f64>,
    /// Over points whose mode has n(ω) above [`BETA_OCCUPATION_CUT`].
    pub rms_rel_error_beta: Option<f64>,
    pub recovered_modes: usize,
    pub distinct_modes: usize,
    pub coverage: f64,
    /// Aligned with the reconstruction's points.
    pub per_point: Vec<PointError>,
}

impl ErrorMetrics {
    /// Median |ka error| over points whose true ka lies in [lo, hi].
    pub fn median_ka_error(&self, lo: f64, hi: f64) -> Option<f64> {
        let v: Vec<f64> = self
            .per_point
            .iter()
            .filter(|p| p.ka_true >= lo && p.ka_true <= hi)
            .map(|p| p.ka_error)
            .collect();
        (!v.is_empty()).then(|| median(&v))
    }
}

/// Modes this thinly populated are excluded from the β² error.
pub const BETA_OCCUPATION_CUT: f64 = 1e-6;

/// Compares each reconstructed point with the nearest analytic mode in ω.
pub fn error_metrics(
    recon: &ReconstructedDispersion,
    spectrum: &BogoliubovSpectrum,
    thermal: &ThermalState,
) -> ErrorMetrics {
    let modes = spectrum.distinct_modes();
    let mut hit = vec![false; modes.len()];
    let mut per_point = Vec::with_capacity(recon.points.len());
    let mut sq_omega = Neumaier::default();
    let mut sq_beta = Neumaier::default();
    let mut n_beta = 0usize;
    for p in &recon.points {
        let Some((idx, m)) = modes
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1.omega_k - p.omega).abs().total_cmp(&(b.1.omega_k - p.omega).abs()))
        else {
            break;
        };
        hit[idx] = true;
        let rel_err_omega = (p.omega - m.omega_k) / m.omega_k;
        let rel_err_beta = (p.beta_sq - m.beta_sq()) / m.beta_sq();
        sq_omega.add(rel_err_omega * rel_err_omega);
        if thermal_occupation(m.omega_k, thermal).is_ok_and(|n| n > BETA_OCCUPATION_CUT) {
            sq_beta.add(rel_err_beta * rel_err_beta);
            n_beta += 1;
        }
        let ka_true = (m.k * spectrum.params.a).abs();
        per_point.push(PointError {
            ka_true,
            omega_true: m.omega_k,
            beta_sq_true: m.beta_sq(),
            rel_err_omega,
            rel_err_beta,
            ka_error: (p.ka - ka_true).abs(),
        });
    }
    let recovered = hit.iter().filter(|h| **h).count();
    let np = per_point.len();
    ErrorMetrics {
        rms_rel_error_omega: (np > 0).then(|| (sq_omega.total() / np as f64).sqrt()),
        rms_rel_error_beta: (n_beta > 0).then(|| (sq_beta.total() / n_beta as f64).sqrt()),
        recovered_modes: recovered,
        distinct_modes: modes.len(),
        coverage: if modes.is_empty() {
            0.0
        } else {
            recovered as f64 / modes.len() as f64
        },
        per_point,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::gamma_config;
    use crate::system::Placement;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn bundle(ns: usize, beta: f64) -> SystemBundle {
        bundle_with(ns, beta, 1e-12)
    }

    fn bundle_with(ns: usize, beta: f64, gi_n_sq: f64) -> SystemBundle {
        let h = HubbardParams::superfluid(10.0, ns).unwrap();
        let trap = ProbeTrap::new(1.0, 8.0, 1.0, Placement::SiteMinimum, 2, 1.0).unwrap();
        let p = CouplingPrefactors {
            gi_n_sq,
            gii_n_sq: 2.3 * gi_n_sq,
            g1d_n_sq: 1e-12,
            x00_i: 1.0,
            x00_ii: 1.0,
            y00: 1.0,
            z_n0: 1.0,
            nz: 2,
        };
        SystemBundle::with_prefactors(h, trap, ThermalState::new(beta).unwrap(), p).unwrap()
    }

    #[test]
    fn fast_kernel_matches_rate_module() {
        for t in [50.0, 3e3, 4e6] {
            let b = bundle_with(17, 1.0, 1e-6 / (t * t));
            let k = SweepKernel::new(&b, t).unwrap();
            for i in 0..200 {
                let gap = 0.01 + 4.2 * i as f64 / 199.0;
                let gap = if i % 20 == 0 {
                    b.spectrum.modes[(i / 20) % b.spectrum.len()].omega_k
                } else {
                    gap
                };
                let (fi, fii) = k.eval(gap);
                let trap = b.trap.with_gap(gap);
                let ri = gamma_config(Configuration::I, &trap, &b.prefactors, &b.spectrum, &b.thermal, t).unwrap();
                let trap2 = trap.with_placement(Placement::BondMaximum);
                let rii = gamma_config(Configuration::II, &trap2, &b.prefactors, &b.spectrum, &b.thermal, t).unwrap();
                assert_relative_eq!(fi, ri.total, max_relative = 1e-6);
                assert_relative_eq!(fii, rii.total, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn plan_validation() {
        assert!(SweepPlan::uniform(0.1, 2.0, 100.0).is_ok());
        let mut p = SweepPlan::uniform(0.1, 2.0, 100.0).unwrap();
        p.final_time = 1000.0;
        assert!(matches!(p.validate(), Err(ProtocolError::Plan(_))));
        let bad = SweepPlan {
            grid: GapGrid::Explicit {
                gaps: vec![0.1, 0.11, 0.105],
            },
            ..SweepPlan::uniform(0.1, 2.0, 1.0).unwrap()
        };
        assert!(bad.validate().is_err());
        let zero_samples = SweepPlan::uniform(0.1, 2.0, 10.0).unwrap().with_noise(0.01, 0, 1);
        assert!(zero_samples.validate().is_err());
        let p = SweepPlan::uniform(0.1, 2.0, 100.0).unwrap();
        let GapGrid::Uniform { step, count, .. } = p.grid else {
            unreachable!()
        };
        assert!(step <= max_grid_spacing(100.0));
        assert_relative_eq!(p.grid.value(count - 1), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn default_time_resolves_neighbours() {
        let b = bundle(65, 4.8);
        let t = default_final_time(&b.spectrum);
        assert!(PI / t < b.spectrum.min_spacing() / 4.0);
    }

    #[test]
    fn zero_noise_is_clean() {
        let b = bundle(9, 1.0);
        let plan = SweepPlan::covering(&b.spectrum, 300.0).unwrap();
        let r = run_sweep(&plan, &b).unwrap();
        assert_eq!(&r.gamma_i_noisy[..], &r.gamma_i_clean[..]);
        assert_eq!(&r.gamma_ii_noisy[..], &r.gamma_ii_clean[..]);
        assert_eq!(r.clamped, 0);
        assert!(r.gamma_i_clean.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn noise_is_seeded_and_independent() {
        let b = bundle(9, 1.0);
        let plan = SweepPlan::covering(&b.spectrum, 3e4).unwrap().with_noise(0.05, 3, 7);
        let a = run_sweep(&plan, &b).unwrap();
        let c = run_sweep(&plan, &b).unwrap();
        assert_eq!(a, c);
        assert!(a.len() > CHUNK, "test needs several noise chunks");
        let other = a.renoise(0.05, 3, 8).unwrap();
        assert_ne!(&other.gamma_i_noisy[..], &a.gamma_i_noisy[..]);
        // Relative deviations have the requested spread.
        let dev: Vec<f64> = a
            .gamma_i_noisy
            .iter()
            .zip(a.gamma_i_clean.iter())
            .map(|(n, c)| n / c - 1.0)
            .collect();
        let mean = dev.iter().sum::<f64>() / dev.len() as f64;
        let var = dev.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / dev.len() as f64;
        assert!(mean.abs() < 1e-3);
        assert_relative_eq!(var.sqrt(), 0.05 / 3f64.sqrt(), max_relative = 0.02);
        // Configurations draw from different streams.
        let ri: Vec<f64> = a
            .gamma_i_noisy
            .iter()
            .zip(a.gamma_i_clean.iter())
            .map(|(n, c)| n / c)
            .take(100)
            .collect();
        let rii: Vec<f64> = a
            .gamma_ii_noisy
            .iter()
            .zip(a.gamma_ii_clean.iter())
            .map(|(n, c)| n / c)
            .take(100)
            .collect();
        assert_ne!(ri, rii);
    }

    #[test]
    fn large_noise_clamps_negatives() {
        let b = bundle(9, 1.0);
        let plan = SweepPlan::covering(&b.spectrum, 300.0).unwrap().with_noise(2.0, 1, 3);
        let r = run_sweep(&plan, &b).unwrap();
        assert!(r.clamped > 0);
        assert!(r.gamma_i_noisy.iter().chain(r.gamma_ii_noisy.iter()).all(|v| *v >= 0.0));
    }

    #[test]
    fn two_synthetic_peaks() {
        let t = 200.0;
        let h = max_grid_spacing(t);
        let gaps: Vec<f64> = (0..(3.0 / h) as usize).map(|i| 0.1 + i as f64 * h).collect();
        let signal: Vec<f64> = gaps
            .iter()
            .map(|g| lambda2(g - 1.0, t) + 0.5 * lambda2(g - 2.0, t))
            .collect();
        let peaks = find_peaks(&gaps, &signal, &PeakParams::for_final_time(t));
        assert_eq!(peaks.len(), 2, "{peaks:?}");
        assert!((peaks[0].omega - 1.0).abs() < 1e-3);
        assert!((peaks[1].omega - 2.0).abs() < 1e-3);
        assert_relative_eq!(peaks[0].height, t * t, max_relative = 2e-3);
    }

    #[test]
    fn flat_signal_has_no_peaks() {
        let gaps: Vec<f64> = (0..1000).map(|i| 1.0 + i as f64 * 1e-3).collect();
        let p = PeakParams::for_final_time(100.0);
        assert!(find_peaks(&gaps, &vec![0.3; 1000], &p).is_empty());
        assert!(find_peaks(&gaps, &vec![0.0; 1000], &p).is_empty());
    }

    #[test]
    fn parabola_recovers_exact_quadratic() {
        let f = |x: f64| 3.0 - 2.0 * (x - 0.37).powi(2);
        let (x, y) = parabola_vertex([0.1, 0.3, 0.6], [f(0.1), f(0.3), f(0.6)]).unwrap();
        assert_relative_eq!(x, 0.37, epsilon = 1e-14);
        assert_relative_eq!(y, 3.0, epsilon = 1e-14);
        assert!(parabola_vertex([0.0, 1.0, 2.0], [0.0, 1.0, 2.0]).is_none());
    }

    #[test]
    fn beating_ripple_is_not_a_peak() {
        use rand::{Rng, SeedableRng};
        let t = 1e5;
        let step = 0.97 * PI / (3.0 * t);
        let gaps: Vec<f64> = (0..60_000).map(|i| 1.0 + i as f64 * step).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let signal: Vec<f64> = gaps
            .iter()
            .map(|&g| {
                // Condensate term plus the tail of a strong line below the grid.
                let ripple = 4.0 * (g * t / 2.0).sin().powi(2) / (g * g)
                    + ((g - 0.99) * t / 2.0).sin().powi(2) / ((g - 0.99) * (g - 0.99));
                let line = 200.0 * lambda1(g - 1.3, t) / (t * t);
                (ripple + line) * (1.0 + 3e-3 * (rng.random::<f64>() - 0.5))
            })
            .collect();
        let peaks = find_peaks(&gaps, &signal, &PeakParams::for_final_time(t));
        assert_eq!(peaks.len(), 1, "{peaks:?}");
        assert!((peaks[0].omega - 1.3).abs() < step);
    }

    fn peak(omega: f64, height: f64) -> Peak {
        Peak {
            omega,
            height,
            index: 0,
        }
    }

    fn unit_prefactors() -> CouplingPrefactors {
        CouplingPrefactors {
            gi_n_sq: 1.0,
            gii_n_sq: 1.0,
            g1d_n_sq: 1.0,
            x00_i: 1.0,
            x00_ii: 1.0,
            y00: 1.0,
            z_n0: 1.0,
            nz: 2,
        }
    }

    #[test]
    fn arccos_endpoints() {
        let th = ThermalState::new(1.0).unwrap();
        let pi = [peak(1.0, 1.0), peak(2.0, 1.0), peak(3.0, 1.0)];
        let pii = [peak(1.0, 2.0), peak(2.0, 1.0), peak(3.0, 0.0)];
        let r = reconstruct(&pi, &pii, CouplingRatio::Computed(1.0), &th, &unit_prefactors(), 100.0).unwrap();
        let ka: Vec<f64> = r.points.iter().map(|p| p.ka).collect();
        assert_eq!(ka[0], 0.0);
        assert_relative_eq!(ka[1], PI / 2.0, epsilon = 1e-15);
        assert_relative_eq!(ka[2], PI, epsilon = 1e-15);
    }

    #[test]
    fn out_of_range_and_unmatched_are_dropped() {
        let th = ThermalState::new(1.0).unwrap();
        let pi = [peak(1.0, 1.0), peak(2.0, 1.0), peak(3.0, 1.0)];
        let pii = [peak(1.0, 2.05), peak(2.0, 2.5), peak(5.0, 1.0)];
        let r = reconstruct(&pi, &pii, CouplingRatio::Computed(1.0), &th, &unit_prefactors(), 100.0).unwrap();
        assert_eq!(r.points.len(), 1);
        assert_eq!(r.points[0].ka, 0.0);
        let reasons: Vec<&str> = r.dropped_peaks.iter().map(|d| d.reason.as_str()).collect();
        assert_eq!(
            reasons,
            [
                "ratio out of range",
                "no configuration II partner",
                "no configuration I partner"
            ]
        );
        let empty = reconstruct(&[], &[], CouplingRatio::Calibrated, &th, &unit_prefactors(), 100.0).unwrap();
        assert!(empty.points.is_empty());
    }

    #[test]
    fn calibrated_ratio_pins_largest_to_two() {
        let th = ThermalState::new(1.0).unwrap();
        let pi = [peak(1.0, 1.0), peak(2.0, 2.0)];
        let pii = [peak(1.0, 0.8), peak(2.0, 0.8)];
        let r = reconstruct(&pi, &pii, CouplingRatio::Calibrated, &th, &unit_prefactors(), 100.0).unwrap();
        assert_relative_eq!(r.coupling_ratio, 2.5, epsilon = 1e-15);
        assert_eq!(r.points[0].ka, 0.0);
        assert_relative_eq!(r.points[1].ka, PI / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn beta_estimate_inverts_asymptotic_height() {
        let th = ThermalState::new(2.0).unwrap();
        let p = unit_prefactors();
        let (omega, beta_sq, t) = (1.3, 0.02, 1e3);
        let n = thermal_occupation(omega, &th).unwrap();
        let h = 2.0 * p.gi_n_sq * (omega / 2.0) * beta_sq * n * t * t;
        let r = reconstruct(
            &[peak(omega, h)],
            &[peak(omega, h)],
            CouplingRatio::Computed(1.0),
            &th,
            &p,
            t,
        )
        .unwrap();
        assert_relative_eq!(r.points[0].beta_sq, beta_sq, max_relative = 1e-14);
    }

    #[test]
    fn metrics_of_empty_reconstruction() {
        let b = bundle(65, 4.8);
        let empty = reconstruct(&[], &[], CouplingRatio::Calibrated, &b.thermal, &b.prefactors, 1.0).unwrap();
        let m = error_metrics(&empty, &b.spectrum, &b.thermal);
        assert_eq!(m.coverage, 0.0);
        assert_eq!(m.distinct_modes, 32);
        assert!(m.rms_rel_error_omega.is_none());
    }

    #[test]
    fn small_system_end_to_end() {
        let b = bundle(9, 1.0);
        let t = 2e4;
        let plan = SweepPlan::covering(&b.spectrum, t).unwrap();
        let r = run_sweep(&plan, &b).unwrap();
        let params = PeakParams::for_final_time(t);
        let pi = detect_peaks(&r, Configuration::I, &params);
        let pii = detect_peaks(&r, Configuration::II, &params);
        assert_eq!(pi.len(), 4, "{pi:?}");
        let ratio = CouplingRatio::Computed(b.prefactors.coupling_ratio());
        let mut rec = reconstruct(&pi, &pii, ratio, &b.thermal, &b.prefactors, t).unwrap();
        let m = error_metrics(&rec, &b.spectrum, &b.thermal);
        rec.attach(&m);
        assert_eq!(m.recovered_modes, 4);
        assert!(rec.rms_rel_error_omega.unwrap() < 1e-4);
        assert!(rec.rms_rel_error_beta.unwrap() < 1e-2);
        for w in rec.points.windows(2) {
            assert!(w[0].ka < w[1].ka);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn same_seed_same_reconstruction(seed in any::<u64>(), noise in 0.0f64..0.05) {
            let b = bundle(7, 1.0);
            let t = 3e3;
            let plan = SweepPlan::covering(&b.spectrum, t).unwrap().with_noise(noise, 2, seed);
            let run = || {
                let r = run_sweep(&plan, &b).unwrap();
                let params = PeakParams::for_final_time(t);
                let pi = detect_peaks(&r, Configuration::I, &params);
                let pii = detect_peaks(&r, Configuration::II, &params);
                let ratio = CouplingRatio::Computed(b.prefactors.coupling_ratio());
                reconstruct(&pi, &pii, ratio, &b.thermal, &b.prefactors, t).unwrap()
            };
            let first = run();
            prop_assert_eq!(&first, &run());
            prop_assert!(first.points.len() >= 2);
            // Recovered points follow the monotone dispersion.
            prop_assert!(first.points.windows(2).all(|w| w[1].ka >= w[0].ka));
        }
    }
}
