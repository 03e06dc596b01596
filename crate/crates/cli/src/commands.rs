//! Subcommand bodies. Each resolves whatever defaults it fills in back into
//! the config so the manifest replays the same run.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{Context, Result};
use lattice_probe::bogoliubov::build_spectrum;
use lattice_probe::io::{
    read_sweep, reconstruction_rows, spectrum_rows, sweep_rows, wannier_rows, write_rows, OverlapRow, SweepTable,
    OVERLAPS_HEADER, RECONSTRUCTION_HEADER, SPECTRUM_HEADER, SWEEP_HEADER, WANNIER_HEADER,
};
use lattice_probe::lattice_wannier::{
    band_structure, gaussian_wannier, hubbard_from_wannier, overlap_integrals, wannier_states, LatticePotential,
    WannierBasis,
};
use lattice_probe::probe::coupling_for_product;
use lattice_probe::protocol::{
    default_final_time, detect_peaks, error_metrics, find_peaks, reconstruct, run_sweep, CouplingRatio, PeakParams,
    SweepPlan, SystemBundle,
};
use lattice_probe::rates::Configuration;
use lattice_probe::system::{HubbardParams, Placement, ProbeTrap, ThermalState, PLANCK_H};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{
    format_from_path, invalid, GridSection, LatticeSection, RatioMode, RunConfig, Signal, SweepSection, ThermalSection,
    WannierModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    /// Bogoliubov spectrum table.
    Spectrum,
    /// Wannier functions w0 and w1 sampled on the lattice grid.
    Wannier,
    /// Probe-lattice overlap integrals over one or more depths.
    Overlaps,
    /// Transition probabilities of both configurations over the gap grid.
    Sweep,
    /// Peak detection and ω(k), β² reconstruction.
    Reconstruct,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Wannier => "wannier",
            Command::Overlaps => "overlaps",
            Command::Sweep => "sweep",
            Command::Reconstruct => "reconstruct",
        }
    }
}

pub struct Outcome {
    pub outputs: Vec<String>,
    pub summary: Value,
}

pub fn run(cmd: Command, cfg: &mut RunConfig) -> Result<Outcome> {
    match cmd {
        Command::Spectrum => spectrum(cfg),
        Command::Wannier => wannier(cfg),
        Command::Overlaps => overlaps(cfg),
        Command::Sweep => sweep(cfg),
        Command::Reconstruct => reconstruct_cmd(cfg),
    }
}

fn write_table<T: Serialize>(
    cfg: &RunConfig,
    stem: &str,
    header: &str,
    rows: impl IntoIterator<Item = T>,
) -> Result<String> {
    let path = output_path(cfg, &format!("{stem}.{}", cfg.output.format.extension()))?;
    let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    write_rows(BufWriter::new(file), cfg.output.format, header, rows)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(path.display().to_string())
}

pub fn output_path(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir.join(name))
}

fn basis_at(lat: &LatticeSection, v0_er: f64) -> Result<WannierBasis> {
    let pot = LatticePotential::in_recoil_units(v0_er)?;
    Ok(match lat.model {
        WannierModel::Bloch => {
            let band = band_structure(&pot, lat.cutoff, lat.nq)?;
            wannier_states(&band, lat.periods)?
        }
        WannierModel::Gaussian => gaussian_wannier(&pot, lat.periods)?,
    })
}

fn hubbard(cfg: &RunConfig, basis: Option<&WannierBasis>) -> Result<HubbardParams> {
    cfg.require_model()?;
    if let Some(h) = &cfg.hubbard {
        return Ok(HubbardParams::new(h.j, h.u, h.mu, h.n0, h.ns, h.a)?);
    }
    let d = cfg.derive_from_lattice.as_ref().expect("checked by require_model");
    let owned;
    let basis = match basis {
        Some(b) => b,
        None => {
            let lat = cfg.lattice()?;
            owned = basis_at(lat, lat.v0_er)?;
            &owned
        }
    };
    Ok(hubbard_from_wannier(basis, d.g1d, d.n0, d.ns)?)
}

fn thermal(cfg: &RunConfig) -> Result<ThermalState> {
    Ok(match cfg.thermal()? {
        ThermalSection::Beta { beta } => ThermalState::new(*beta)?,
        ThermalSection::Temperature {
            temperature_k,
            energy_unit_hz,
        } => ThermalState::from_temperature(*temperature_k, PLANCK_H * energy_unit_hz)?,
    })
}

/// System bundle for the resolved interaction time; fills in the sweep
/// section's final time and grid.
fn prepare(cfg: &mut RunConfig) -> Result<(SystemBundle, SweepPlan)> {
    let lat = cfg.lattice()?.clone();
    let basis = basis_at(&lat, lat.v0_er)?;
    let h = hubbard(cfg, Some(&basis))?;
    let th = thermal(cfg)?;
    let t = cfg.trap()?.clone();
    let spectrum = build_spectrum(&h)?;
    let s = cfg.sweep.get_or_insert_with(SweepSection::default);
    let final_time = *s.final_time.get_or_insert_with(|| default_final_time(&spectrum));
    let grid = match s.grid {
        Some(g) => SweepPlan::uniform(g.lo, g.hi, final_time)?,
        None => SweepPlan::covering(&spectrum, final_time)?,
    };
    if let lattice_probe::protocol::GapGrid::Uniform { start, step, count } = grid.grid {
        s.grid.get_or_insert(GridSection {
            lo: start,
            hi: start + step * (count - 1) as f64,
        });
    }
    let plan = grid.with_noise(s.noise_level, s.samples_per_point, s.seed);
    plan.validate()?;
    let trap = ProbeTrap::new(t.nu, t.nu0, t.m, Placement::SiteMinimum, t.nz, t.g.unwrap_or(1.0))?;
    let overlaps = overlap_integrals(&basis, &trap)?;
    let g = match (t.g, t.coupling_product) {
        (Some(g), None) => g,
        (None, Some(p)) => coupling_for_product(&trap, &overlaps, p, final_time)?,
        _ => return Err(invalid("the trap needs exactly one of `g` or `coupling_product`")),
    };
    let bundle = SystemBundle::new(h, ProbeTrap { g, ..trap }, th, &overlaps)?;
    Ok((bundle, plan))
}

fn spectrum(cfg: &mut RunConfig) -> Result<Outcome> {
    let h = hubbard(cfg, None)?;
    let s = build_spectrum(&h)?;
    let out = write_table(cfg, "spectrum", SPECTRUM_HEADER, spectrum_rows(&s))?;
    Ok(Outcome {
        outputs: vec![out],
        summary: json!({
            "modes": s.len(),
            "distinct_modes": s.distinct_modes().len(),
            "j_over_u": h.j_over_u(),
            "max_frequency": s.max_frequency(),
            "min_spacing": s.min_spacing(),
            "default_final_time": default_final_time(&s),
        }),
    })
}

fn wannier(cfg: &mut RunConfig) -> Result<Outcome> {
    let lat = cfg.lattice()?.clone();
    let basis = basis_at(&lat, lat.v0_er)?;
    let bandwidth = match lat.model {
        WannierModel::Bloch => {
            let pot = LatticePotential::in_recoil_units(lat.v0_er)?;
            Some(band_structure(&pot, lat.cutoff, lat.nq)?.bandwidth()?)
        }
        WannierModel::Gaussian => None,
    };
    let out = write_table(cfg, "wannier", WANNIER_HEADER, wannier_rows(&basis))?;
    Ok(Outcome {
        outputs: vec![out],
        summary: json!({
            "v0_er": lat.v0_er,
            "hopping": basis.hopping(),
            "bandwidth": bandwidth,
            "quartic_integral": basis.quartic_integral(),
            "norm_w0": basis.overlap(0, 0),
            "overlap_w0_w1": basis.overlap(0, 1),
        }),
    })
}

fn overlaps(cfg: &mut RunConfig) -> Result<Outcome> {
    let lat = cfg.lattice()?.clone();
    let t = cfg.trap()?.clone();
    let depths = cfg.overlaps.get_or_insert_with(Default::default);
    if depths.v0_er.is_empty() {
        depths.v0_er.push(lat.v0_er);
    }
    let depths = depths.v0_er.clone();
    let trap = ProbeTrap::new(t.nu, t.nu0, t.m, Placement::SiteMinimum, t.nz, t.g.unwrap_or(1.0))?;
    let mut rows = Vec::with_capacity(depths.len());
    for &v0 in &depths {
        let basis = basis_at(&lat, v0)?;
        let o = overlap_integrals(&basis, &trap)?;
        rows.push(OverlapRow::new(v0, &o));
    }
    let ratios: Vec<f64> = rows.iter().map(|r| r.phi_prime_over_phi).collect();
    let out = write_table(cfg, "overlaps", OVERLAPS_HEADER, &rows)?;
    Ok(Outcome {
        outputs: vec![out],
        summary: json!({
            "x0": trap.transverse_length(),
            "local": trap.is_local(1.0),
            "phi_prime_over_phi": ratios,
        }),
    })
}

fn sweep(cfg: &mut RunConfig) -> Result<Outcome> {
    let (bundle, plan) = prepare(cfg)?;
    let result = run_sweep(&plan, &bundle)?;
    let params = PeakParams::for_final_time(plan.final_time);
    let peaks_i = detect_peaks(&result, Configuration::I, &params).len();
    let peaks_ii = detect_peaks(&result, Configuration::II, &params).len();
    let out = write_table(cfg, "sweep", SWEEP_HEADER, sweep_rows(&result))?;
    Ok(Outcome {
        outputs: vec![out],
        summary: json!({
            "points": result.len(),
            "final_time": plan.final_time,
            "coupling_g": bundle.trap.g,
            "clamped": result.clamped,
            "peaks_i": peaks_i,
            "peaks_ii": peaks_ii,
            "distinct_modes": bundle.spectrum.distinct_modes().len(),
        }),
    })
}

fn reconstruct_cmd(cfg: &mut RunConfig) -> Result<Outcome> {
    let (bundle, plan) = prepare(cfg)?;
    let rc = cfg.reconstruct.get_or_insert_with(Default::default).clone();
    let table = match &rc.sweep_file {
        Some(path) => {
            let format = match rc.sweep_format {
                Some(f) => f,
                None => format_from_path(path)?,
            };
            let file =
                File::open(path).map_err(|e| invalid(format!("cannot open sweep file {}: {e}", path.display())))?;
            read_sweep(std::io::BufReader::new(file), format)
                .map_err(|e| invalid(format!("sweep file {}: {e}", path.display())))?
        }
        None => {
            let r = run_sweep(&plan, &bundle)?;
            SweepTable {
                gaps: r.gaps.to_vec(),
                gamma_i_clean: r.gamma_i_clean.to_vec(),
                gamma_ii_clean: r.gamma_ii_clean.to_vec(),
                gamma_i_noisy: r.gamma_i_noisy.to_vec(),
                gamma_ii_noisy: r.gamma_ii_noisy.to_vec(),
            }
        }
    };
    let (sig_i, sig_ii) = match rc.signal {
        Signal::Noisy => (&table.gamma_i_noisy, &table.gamma_ii_noisy),
        Signal::Clean => (&table.gamma_i_clean, &table.gamma_ii_clean),
    };
    let params = PeakParams::for_final_time(plan.final_time);
    let peaks_i = find_peaks(&table.gaps, sig_i, &params);
    let peaks_ii = find_peaks(&table.gaps, sig_ii, &params);
    let ratio = match rc.ratio {
        RatioMode::Computed => CouplingRatio::Computed(bundle.prefactors.coupling_ratio()),
        RatioMode::Calibrated => CouplingRatio::Calibrated,
    };
    let mut recon = reconstruct(
        &peaks_i,
        &peaks_ii,
        ratio,
        &bundle.thermal,
        &bundle.prefactors,
        plan.final_time,
    )?;
    let metrics = error_metrics(&recon, &bundle.spectrum, &bundle.thermal);
    recon.attach(&metrics);
    let table_out = write_table(
        cfg,
        "reconstruction",
        RECONSTRUCTION_HEADER,
        reconstruction_rows(&recon, Some(&metrics)),
    )?;
    let block = json!({
        "rms_rel_error_omega": metrics.rms_rel_error_omega,
        "rms_rel_error_beta": metrics.rms_rel_error_beta,
        "recovered_modes": metrics.recovered_modes,
        "distinct_modes": metrics.distinct_modes,
        "coverage": metrics.coverage,
        "points": recon.points.len(),
        "peaks_i": peaks_i.len(),
        "peaks_ii": peaks_ii.len(),
        "coupling_ratio": recon.coupling_ratio,
    });
    let metrics_path = output_path(cfg, "metrics.json")?;
    let detail = json!({ "metrics": block, "dropped_peaks": recon.dropped_peaks });
    fs::write(&metrics_path, serde_json::to_string_pretty(&detail)? + "\n")
        .with_context(|| format!("writing {}", metrics_path.display()))?;
    Ok(Outcome {
        outputs: vec![table_out, metrics_path.display().to_string()],
        summary: json!({ "metrics": block }),
    })
}
