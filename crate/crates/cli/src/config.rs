//! Run configuration, in TOML or the equivalent JSON.
//!
//! Laboratory units throughout: frequencies in THz, energies in meV, times
//! in fs, lengths in Å·√amu, fields in kV/cm, temperatures in K. They are
//! converted through the selected [`UnitSystem`] when the run is set up.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tdscha_core::minimal::QuenchCoefficient;
use tdscha_core::toy::ToyModelParams;
use tdscha_core::UnitSystem;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Relax,
    Dynamics,
    Scan,
    Minimal,
    ToyBuild,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Relax => "relax",
            Command::Dynamics => "dynamics",
            Command::Scan => "scan",
            Command::Minimal => "minimal",
            Command::ToyBuild => "toy-build",
        }
    }
}

/// A preset name or explicit constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UnitsConfig {
    Preset(String),
    Explicit {
        hbar: f64,
        kb: f64,
        energy_in_ev: f64,
        time_in_fs: f64,
        field_to_force: f64,
    },
}

impl Default for UnitsConfig {
    fn default() -> Self {
        UnitsConfig::Preset("physical".into())
    }
}

impl UnitsConfig {
    pub fn resolve(&self) -> Result<UnitSystem, CliError> {
        match self {
            UnitsConfig::Preset(name) => {
                UnitSystem::preset(name).ok_or_else(|| CliError::Config(format!("units: unknown preset `{name}`")))
            }
            &UnitsConfig::Explicit {
                hbar,
                kb,
                energy_in_ev,
                time_in_fs,
                field_to_force,
            } => {
                let all = [hbar, kb, energy_in_ev, time_in_fs, field_to_force];
                if all.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                    return Err(CliError::Config("units: explicit constants must be positive".into()));
                }
                Ok(UnitSystem {
                    name: "explicit".into(),
                    hbar,
                    kb,
                    energy_in_ev,
                    time_in_fs,
                    field_to_force,
                })
            }
        }
    }
}

/// Mode given by index or label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModeRef {
    Index(usize),
    Label(String),
}

/// Toy-model overrides; unset fields keep the standard values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    pub n_bath: Option<usize>,
    /// Å·√amu
    pub x0: Option<f64>,
    /// meV
    pub v0: Option<f64>,
    /// THz
    pub omega_ir: Option<f64>,
    pub omega_afd: Option<f64>,
    pub bath_band: Option<[f64; 2]>,
    pub pair_detuning: Option<f64>,
    pub pair_splitting: Option<f64>,
    /// Defaults to the run seed.
    pub detuning_seed: Option<u64>,
    /// meV / (Å·√amu)³
    pub chi_ir: Option<f64>,
    pub chi_fe: Option<f64>,
    /// meV / (Å·√amu)⁴
    pub beta: Option<f64>,
    pub psi_ir: Option<f64>,
    pub psi_bath: Option<f64>,
    /// e / √amu
    pub zeff_ir: Option<f64>,
    pub zeff_fe: Option<f64>,
    /// Å·√amu
    pub seed_fe: Option<f64>,
    /// THz; an empty list disables the check.
    pub fe_band: Option<Vec<f64>>,
}

impl ToyConfig {
    pub fn to_params(&self, units: &UnitSystem, seed: u64) -> Result<ToyModelParams, CliError> {
        let l = units.length_in_angstrom_sqrt_amu();
        let per_len = |mev: f64, k: i32| units.mev(mev) * l.powi(k);
        let mut p = ToyModelParams::standard(units);
        p.detuning_seed = self.detuning_seed.unwrap_or(seed);
        if let Some(v) = self.n_bath {
            p.n_bath = v;
        }
        if let Some(v) = self.x0 {
            p.x0 = v / l;
        }
        if let Some(v) = self.v0 {
            p.v0 = units.mev(v);
        }
        if let Some(v) = self.omega_ir {
            p.omega_ir = units.thz(v);
        }
        if let Some(v) = self.omega_afd {
            p.omega_afd = units.thz(v);
        }
        if let Some([lo, hi]) = self.bath_band {
            p.bath_band = (units.thz(lo), units.thz(hi));
        }
        if let Some(v) = self.pair_detuning {
            p.pair_detuning = v;
        }
        if let Some(v) = self.pair_splitting {
            p.pair_splitting = v;
        }
        if let Some(v) = self.chi_ir {
            p.chi_ir = per_len(v, 3);
        }
        if let Some(v) = self.chi_fe {
            p.chi_fe = per_len(v, 3);
        }
        if let Some(v) = self.beta {
            p.beta = per_len(v, 4);
        }
        if let Some(v) = self.psi_ir {
            p.psi_ir = per_len(v, 4);
        }
        if let Some(v) = self.psi_bath {
            p.psi_bath = per_len(v, 4);
        }
        if let Some(v) = self.zeff_ir {
            p.zeff_ir = v;
        }
        if let Some(v) = self.zeff_fe {
            p.zeff_fe = v;
        }
        if let Some(v) = self.seed_fe {
            p.seed_fe = v / l;
        }
        match self.fe_band.as_deref() {
            None => {}
            Some([]) => p.fe_band = None,
            Some(&[lo, hi]) => p.fe_band = Some((units.thz(lo), units.thz(hi))),
            Some(other) => {
                return Err(CliError::Config(format!(
                    "model.toy.fe_band: expected [lo, hi] or [], got {} values",
                    other.len()
                )))
            }
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Force-constant file (text or JSON).
    pub file: Option<PathBuf>,
    pub toy: Option<ToyConfig>,
    /// Effective charges for a file model, one `[x, y, z]` row per coordinate.
    pub zeff: Option<Vec<[f64; 3]>>,
    /// Mode whose symmetry breaking is tracked; the FE mode for the toy.
    pub focus_mode: Option<ModeRef>,
    /// Pumped mode; the IR mode for the toy.
    pub ir_mode: Option<ModeRef>,
    /// Double-well minimum position of the focus mode, Å·√amu. Derived
    /// from the surface when absent.
    pub x0: Option<f64>,
    /// Initial displacement of the focus mode, Å·√amu.
    pub seed_displacement: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseConfig {
    /// kV/cm
    pub amplitude: f64,
    /// THz
    #[serde(default = "default_carrier")]
    pub frequency: f64,
    /// fs
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Envelope centre, fs.
    pub t0: f64,
    /// Rotation of the polarization away from x about y, degrees.
    #[serde(default)]
    pub tilt_deg: f64,
}

fn default_carrier() -> f64 {
    16.0
}

fn default_sigma() -> f64 {
    150.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    /// fs
    pub t_start: f64,
    pub t_end: f64,
    /// Output spacing, fs.
    pub stride: f64,
    /// Snapshot every this many outputs; 0 disables.
    pub snapshot_every: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self {
            t_start: 0.0,
            t_end: 30_000.0,
            stride: 10.0,
            snapshot_every: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub relax_f_tol: f64,
    pub relax_a_tol: f64,
    pub relax_mixing: f64,
    pub relax_max_iter: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            relax_f_tol: 1e-8,
            relax_a_tol: 1e-8,
            relax_mixing: 0.3,
            relax_max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    /// Hold the fluctuations at their initial values.
    pub frozen_a: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanAxis {
    Field,
    Temperature,
    X0V0,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub axis: ScanAxis,
    /// kV/cm
    #[serde(default)]
    pub fields: Vec<f64>,
    /// K
    #[serde(default)]
    pub temperatures: Vec<f64>,
    /// Å·√amu
    #[serde(default)]
    pub x0: Vec<f64>,
    /// meV
    #[serde(default)]
    pub v0: Vec<f64>,
    /// Write each task's trajectory as `trajectory_<index>.csv`.
    #[serde(default)]
    pub trajectories: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinimalConfig {
    /// THz
    pub omega_fe: f64,
    /// meV / (Å·√amu)⁴
    pub psi_fe: f64,
    /// Å²·amu
    pub a_eq: f64,
    /// Å·√amu
    pub alpha: f64,
    /// fs
    pub tau: f64,
    /// fs
    pub t_start: f64,
    pub t_end: f64,
    #[serde(default)]
    pub coefficient: QuenchCoefficient,
    /// Bound on `|A - A_eq|`, Å²·amu.
    #[serde(default = "default_blowup")]
    pub blowup: f64,
}

fn default_blowup() -> f64 {
    1e6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FesConfig {
    /// Odd point count on `[-extent, extent]`.
    pub points: usize,
    /// Å·√amu
    pub extent: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxConfig {
    /// Also write the clamped free-energy surface along the focus mode.
    pub fes: Option<FesConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Written by `toy-build`; `.json` selects the JSON mirror.
    pub pes_file: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("tdscha-out"),
            pes_file: PathBuf::from("toy_pes.txt"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Must agree with the command line when given.
    pub command: Option<Command>,
    #[serde(default)]
    pub units: UnitsConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub pulse: Option<PulseConfig>,
    /// K
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub relax: RelaxConfig,
    pub scan: Option<ScanConfig>,
    pub minimal: Option<MinimalConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Feeds the bath-pair jitter of the toy model.
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_workers() -> usize {
    1
}

fn default_seed() -> u64 {
    7
}

impl RunConfig {
    /// Parse TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
        } else {
            toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
        }
    }

    pub fn load(path: &Path) -> Result<(Self, String), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok((Self::parse(&text)?, text))
    }

    /// Checks that do not need the model.
    pub fn validate(&self, command: Command) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if let Some(c) = self.command {
            if c != command {
                return bad(format!(
                    "command: config says `{}` but `{}` was requested",
                    c.name(),
                    command.name()
                ));
            }
        }
        self.units.resolve()?;
        if self.workers == 0 {
            return bad("workers: must be at least 1".into());
        }
        if !(self.temperature >= 0.0) {
            return bad(format!("temperature: must be nonnegative, got {}", self.temperature));
        }
        let needs_model = command != Command::Minimal;
        match (&self.model.file, &self.model.toy) {
            (Some(_), Some(_)) => return bad("model: give exactly one of `file` and `toy`".into()),
            (None, None) if needs_model && command != Command::ToyBuild => {
                return bad("model: give exactly one of `file` and `toy`".into())
            }
            (Some(_), None) if command == Command::ToyBuild => {
                return bad("model: toy-build needs a `toy` table".into())
            }
            _ => {}
        }
        let t = &self.time;
        if matches!(command, Command::Dynamics | Command::Scan) && (!(t.t_end > t.t_start) || !(t.stride > 0.0)) {
            return bad(format!(
                "time: need t_end > t_start and stride > 0 (got {}, {}, {})",
                t.t_start, t.t_end, t.stride
            ));
        }
        let tol = &self.tolerances;
        if !(tol.rtol > 0.0 && tol.atol > 0.0 && tol.relax_f_tol > 0.0 && tol.relax_a_tol > 0.0) {
            return bad("tolerances: must be positive".into());
        }
        if !(tol.relax_mixing > 0.0 && tol.relax_mixing <= 1.0) {
            return bad(format!(
                "tolerances.relax_mixing: must lie in (0, 1], got {}",
                tol.relax_mixing
            ));
        }
        match command {
            Command::Scan => {
                let scan = match &self.scan {
                    Some(s) => s,
                    None => return bad("scan: missing `scan` table".into()),
                };
                let empty = match scan.axis {
                    ScanAxis::Field => scan.fields.is_empty(),
                    ScanAxis::Temperature => scan.temperatures.is_empty(),
                    ScanAxis::X0V0 => scan.x0.is_empty() || scan.v0.is_empty(),
                };
                if empty {
                    return bad(format!("scan: axis {:?} has no values", scan.axis));
                }
                if scan.axis == ScanAxis::Temperature && scan.temperatures.iter().any(|t| !(*t >= 0.0)) {
                    return bad("scan.temperatures: must be nonnegative".into());
                }
                if scan.axis == ScanAxis::Field && self.pulse.is_none() {
                    return bad("pulse: a field scan needs a `pulse` table (its amplitude is replaced)".into());
                }
            }
            Command::Minimal if self.minimal.is_none() => return bad("minimal: missing `minimal` table".into()),
            _ => {}
        }
        if let Some(fes) = self.relax.fes {
            if fes.points < 5 || fes.points % 2 == 0 || !(fes.extent > 0.0) {
                return bad("relax.fes: need an odd number of at least 5 points and extent > 0".into());
            }
        }
        Ok(())
    }
}
