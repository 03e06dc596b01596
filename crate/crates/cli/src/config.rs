//! Run configuration: a JSON tree whose sections mirror the library types.
//! Flags and `QPROBE_*` variables override file values; the resolved tree is
//! written to every manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Result};
use lattice_probe::io::Format;
use serde::{Deserialize, Serialize};

/// Marks errors that come from reading or checking the configuration.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Invalid(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WannierModel {
    /// Plane-wave band structure and Bloch-sum Wannier functions.
    #[default]
    Bloch,
    /// Harmonic approximation of each well.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    /// Depth in recoil energies.
    pub v0_er: f64,
    #[serde(default = "default_cutoff")]
    pub cutoff: usize,
    /// Quasi-momenta sampled in the Brillouin zone.
    #[serde(default = "default_cells")]
    pub nq: usize,
    /// Lattice periods covered by the Wannier grid.
    #[serde(default = "default_cells")]
    pub periods: usize,
    #[serde(default)]
    pub model: WannierModel,
}

fn default_cutoff() -> usize {
    16
}

fn default_cells() -> usize {
    31
}

fn one() -> f64 {
    1.0
}

fn two() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HubbardSection {
    pub j: f64,
    pub u: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "one")]
    pub n0: f64,
    pub ns: usize,
    #[serde(default = "one")]
    pub a: f64,
}

/// J and U from the lattice Wannier functions, in recoil energies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeriveSection {
    /// Boson-boson contact coupling of the one-dimensional gas.
    pub g1d: f64,
    #[serde(default = "one")]
    pub n0: f64,
    pub ns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapSection {
    #[serde(default = "one")]
    pub nu: f64,
    pub nu0: f64,
    #[serde(default = "one")]
    pub m: f64,
    #[serde(default = "two")]
    pub nz: u32,
    /// Bare impurity-boson coupling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    /// Alternative to `g`: the product g_I·T_f of the site coupling and the
    /// interaction time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling_product: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThermalSection {
    Beta {
        beta: f64,
    },
    /// Temperature in kelvin with the energy unit given as a frequency E/h.
    Temperature {
        temperature_k: f64,
        energy_unit_hz: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Interaction time; defaults to 8π over the smallest mode spacing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_time: Option<f64>,
    /// Gap range; defaults to ω_min/2 .. ω_max + ω_min/2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub noise_level: f64,
    #[serde(default = "one_u32")]
    pub samples_per_point: u32,
    #[serde(default)]
    pub seed: u64,
}

fn one_u32() -> u32 {
    1
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            final_time: None,
            grid: None,
            noise_level: 0.0,
            samples_per_point: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OverlapsSection {
    /// Depths to tabulate; defaults to the lattice depth.
    #[serde(default)]
    pub v0_er: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RatioMode {
    /// g_I²/g_II² from the overlap integrals.
    #[default]
    Computed,
    /// Largest observed height ratio mapped to 2.
    Calibrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    #[default]
    Noisy,
    Clean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ReconstructSection {
    /// Prior sweep table to analyse instead of running a sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_file: Option<PathBuf>,
    /// Format of `sweep_file`; inferred from its extension when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_format: Option<Format>,
    #[serde(default)]
    pub ratio: RatioMode,
    #[serde(default)]
    pub signal: Signal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub format: Format,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            format: Format::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hubbard: Option<HubbardSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derive_from_lattice: Option<DeriveSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trap: Option<TrapSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thermal: Option<ThermalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlaps: Option<OverlapsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconstruct: Option<ReconstructSection>,
    #[serde(default)]
    pub output: OutputSection,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub seed: Option<u64>,
    pub noise: Option<f64>,
}

impl RunConfig {
    /// Reads a config file, or the `config` block of a manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        let mut value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| invalid(format!("config {} is not valid JSON: {e}", path.display())))?;
        let is_manifest = value.get("command").is_some_and(|c| c.is_string());
        if is_manifest {
            if let Some(inner) = value.get_mut("config") {
                value = inner.take();
            }
        }
        let cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| invalid(format!("config {}: {e}", path.display())))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(dir) = &o.out {
            self.output.dir = dir.clone();
        }
        if let Some(f) = o.format {
            self.output.format = f;
        }
        if o.seed.is_some() || o.noise.is_some() {
            let s = self.sweep.get_or_insert_with(SweepSection::default);
            if let Some(seed) = o.seed {
                s.seed = seed;
            }
            if let Some(noise) = o.noise {
                s.noise_level = noise;
            }
        }
    }

    /// Structural checks that do not depend on the subcommand.
    pub fn check(&self) -> Result<()> {
        if self.hubbard.is_some() && self.derive_from_lattice.is_some() {
            bail!(invalid("give either `hubbard` or `derive_from_lattice`, not both"));
        }
        if self.derive_from_lattice.is_some() && self.lattice.is_none() {
            bail!(invalid("`derive_from_lattice` needs a `lattice` section"));
        }
        if let Some(t) = &self.trap {
            if t.g.is_some() && t.coupling_product.is_some() {
                bail!(invalid("give either `trap.g` or `trap.coupling_product`, not both"));
            }
        }
        Ok(())
    }

    pub fn lattice(&self) -> Result<&LatticeSection> {
        self.lattice
            .as_ref()
            .ok_or_else(|| invalid("missing `lattice` section"))
    }

    pub fn trap(&self) -> Result<&TrapSection> {
        self.trap.as_ref().ok_or_else(|| invalid("missing `trap` section"))
    }

    pub fn thermal(&self) -> Result<&ThermalSection> {
        self.thermal
            .as_ref()
            .ok_or_else(|| invalid("missing `thermal` section"))
    }

    pub fn require_model(&self) -> Result<()> {
        if self.hubbard.is_none() && self.derive_from_lattice.is_none() {
            bail!(invalid("one of `hubbard` or `derive_from_lattice` is required"));
        }
        Ok(())
    }
}

pub fn format_from_path(path: &Path) -> Result<Format> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => Ok(Format::Csv),
        Some("json") => Ok(Format::Json),
        _ => Err(anyhow!(invalid(format!(
            "cannot infer the format of {}; set `reconstruct.sweep_format`",
            path.display()
        )))),
    }
}
