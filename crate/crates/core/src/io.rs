//! CSV and JSON tables for spectra, Wannier samples, overlaps, sweeps and
//! reconstructions. Column names are part of the interface.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bogoliubov::BogoliubovSpectrum;
use crate::lattice_wannier::{OverlapSet, WannierBasis};
use crate::protocol::{ErrorMetrics, ReconstructedDispersion, SweepResult};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("sweep table is empty")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

pub const SPECTRUM_HEADER: &str = "k*a,eps_k,omega_k,beta_k_sq";
pub const WANNIER_HEADER: &str = "x,w0,w1";
pub const OVERLAPS_HEADER: &str = "v0_er,x0,phi,phi_prime,varphi,varphi_prime,phi_prime_over_phi";
pub const SWEEP_HEADER: &str = "gap,gammaI_clean,gammaII_clean,gammaI_noisy,gammaII_noisy";
pub const RECONSTRUCTION_HEADER: &str = "ka,omega,beta_sq,omega_analytic,beta_sq_analytic,rel_err_omega";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    #[serde(rename = "k*a")]
    pub ka: f64,
    pub eps_k: f64,
    pub omega_k: f64,
    pub beta_k_sq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WannierRow {
    pub x: f64,
    pub w0: f64,
    pub w1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub v0_er: f64,
    pub x0: f64,
    pub phi: f64,
    pub phi_prime: f64,
    pub varphi: f64,
    pub varphi_prime: f64,
    pub phi_prime_over_phi: f64,
}

impl OverlapRow {
    pub fn new(v0_er: f64, o: &OverlapSet) -> Self {
        Self {
            v0_er,
            x0: o.x0,
            phi: o.phi,
            phi_prime: o.phi_prime,
            varphi: o.varphi,
            varphi_prime: o.varphi_prime,
            phi_prime_over_phi: o.phi_prime / o.phi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gap: f64,
    #[serde(rename = "gammaI_clean")]
    pub gamma_i_clean: f64,
    #[serde(rename = "gammaII_clean")]
    pub gamma_ii_clean: f64,
    #[serde(rename = "gammaI_noisy")]
    pub gamma_i_noisy: f64,
    #[serde(rename = "gammaII_noisy")]
    pub gamma_ii_noisy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionRow {
    pub ka: f64,
    pub omega: f64,
    pub beta_sq: f64,
    pub omega_analytic: Option<f64>,
    pub beta_sq_analytic: Option<f64>,
    pub rel_err_omega: Option<f64>,
}

pub fn spectrum_rows(spectrum: &BogoliubovSpectrum) -> Vec<SpectrumRow> {
    spectrum
        .modes
        .iter()
        .map(|m| SpectrumRow {
            ka: m.k * spectrum.params.a,
            eps_k: m.eps_k,
            omega_k: m.omega_k,
            beta_k_sq: m.beta_sq(),
        })
        .collect()
}

/// Samples of w0 and w1 over the basis grid.
pub fn wannier_rows(basis: &WannierBasis) -> Vec<WannierRow> {
    basis
        .grid
        .iter()
        .zip(basis.w0.iter().zip(&basis.w1))
        .map(|(&x, (&w0, &w1))| WannierRow { x, w0, w1 })
        .collect()
}

pub fn sweep_rows(result: &SweepResult) -> impl Iterator<Item = SweepRow> + '_ {
    (0..result.len()).map(move |i| SweepRow {
        gap: result.gaps[i],
        gamma_i_clean: result.gamma_i_clean[i],
        gamma_ii_clean: result.gamma_ii_clean[i],
        gamma_i_noisy: result.gamma_i_noisy[i],
        gamma_ii_noisy: result.gamma_ii_noisy[i],
    })
}

pub fn reconstruction_rows(recon: &ReconstructedDispersion, metrics: Option<&ErrorMetrics>) -> Vec<ReconstructionRow> {
    recon
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let truth = metrics.and_then(|m| m.per_point.get(i));
            ReconstructionRow {
                ka: p.ka,
                omega: p.omega,
                beta_sq: p.beta_sq,
                omega_analytic: truth.map(|t| t.omega_true),
                beta_sq_analytic: truth.map(|t| t.beta_sq_true),
                rel_err_omega: truth.map(|t| t.rel_err_omega),
            }
        })
        .collect()
}

/// Writes rows as a CSV table, or as a JSON array of objects with the same keys.
pub fn write_rows<W: Write, T: Serialize, I: IntoIterator<Item = T>>(
    out: W,
    format: Format,
    header: &str,
    rows: I,
) -> Result<(), IoError> {
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            w.write_record(header.split(','))?;
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        Format::Json => {
            let mut out = out;
            let mut first = true;
            out.write_all(b"[")?;
            for r in rows {
                if !first {
                    out.write_all(b",")?;
                }
                first = false;
                out.write_all(b"\n  ")?;
                serde_json::to_writer(&mut out, &r)?;
            }
            out.write_all(b"\n]\n")?;
            out.flush()?;
        }
    }
    Ok(())
}

/// Columns of a sweep table, as read back for offline analysis.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    pub gaps: Vec<f64>,
    pub gamma_i_clean: Vec<f64>,
    pub gamma_ii_clean: Vec<f64>,
    pub gamma_i_noisy: Vec<f64>,
    pub gamma_ii_noisy: Vec<f64>,
}

pub fn read_sweep<R: Read>(input: R, format: Format) -> Result<SweepTable, IoError> {
    let rows: Vec<SweepRow> = match format {
        Format::Csv => csv::Reader::from_reader(input)
            .deserialize()
            .collect::<Result<_, _>>()?,
        Format::Json => serde_json::from_reader(input)?,
    };
    if rows.is_empty() {
        return Err(IoError::Empty);
    }
    let mut t = SweepTable::default();
    for r in rows {
        t.gaps.push(r.gap);
        t.gamma_i_clean.push(r.gamma_i_clean);
        t.gamma_ii_clean.push(r.gamma_ii_clean);
        t.gamma_i_noisy.push(r.gamma_i_noisy);
        t.gamma_ii_noisy.push(r.gamma_ii_noisy);
    }
    Ok(t)
}
