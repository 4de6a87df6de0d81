//! Command dispatch and artifact writing.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use tdscha_core::dynamics::{integrate, integrate_frozen_a, Drive, IntegrateOptions, Pulse, Trajectory};
use tdscha_core::minimal::{minimal_model_integrate, quench_closed_form, MinimalModelParams, MinimalOptions};
use tdscha_core::pes_io::{load_pes, save_pes, FileUnits};
use tdscha_core::scha::{
    clamped_fes, fe_frequency, phase_map_cell, scha_relax, scha_relax_multistart, CellStatus, Clamp, ClassifyOptions,
    PhaseMap, PhaseMapOptions, RelaxOptions,
};
use tdscha_core::toy::{build_toy_sto, ToyModelParams, FE, IR};
use tdscha_core::{Basis, DMat, DVec, GaussianState, ModeBasis, QuarticPes, UnitSystem};

use crate::config::{Command, ModeRef, PulseConfig, RunConfig, ScanAxis, ToyConfig};
use crate::manifest::{sha256_hex, Manifest, TaskRecord};
use crate::summary::{summarize, Summary};
use crate::CliError;

/// Command-line values that take precedence over the config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
}

/// Duration an excursion must last to count as a transition, fs.
pub const TRANSITION_HOLD_FS: f64 = 1000.0;

/// Run `command` and return the process exit code. The manifest is written
/// whatever the outcome.
pub fn execute(command: Command, config_path: &Path, overrides: &Overrides) -> i32 {
    let start = Instant::now();
    let mut manifest = Manifest::new(command.name());
    manifest.config_path = Some(config_path.display().to_string());
    let mut out_dir = overrides.out_dir.clone().unwrap_or_else(|| PathBuf::from("tdscha-out"));
    let result = (|| {
        let (mut cfg, text) = RunConfig::load(config_path)?;
        manifest.config_sha256 = Some(sha256_hex(&text));
        if let Some(w) = overrides.workers {
            cfg.workers = w;
        }
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if overrides.out_dir.is_none() {
            out_dir = cfg.output.dir.clone();
        }
        manifest.seed = Some(cfg.seed);
        manifest.workers = Some(cfg.workers);
        cfg.validate(command)?;
        let units = cfg.units.resolve()?;
        manifest.units = Some(units.name.clone());
        std::fs::create_dir_all(&out_dir)
            .map_err(|e| CliError::Config(format!("output directory {}: {e}", out_dir.display())))?;
        let base = config_path.parent().unwrap_or(Path::new("."));
        let mut run = Run {
            cfg: &cfg,
            units,
            base,
            out: &out_dir,
            manifest: &mut manifest,
        };
        run.dispatch(command)
    })();
    let code = match &result {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            manifest.error = Some(e.to_string());
            e.exit_code()
        }
    };
    manifest.exit_code = code;
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    if let Err(e) = manifest.write(&out_dir) {
        log::error!("cannot write manifest to {}: {e}", out_dir.display());
        return if code == 0 { 1 } else { code };
    }
    code
}

/// A loaded model with the modes the analysis refers to.
pub struct Model {
    pub pes: QuarticPes,
    pub basis: ModeBasis,
    pub focus: usize,
    pub ir: Option<usize>,
    /// Double-well minimum of the focus mode, internal units.
    pub x0: Option<f64>,
    pub seed_displacement: f64,
    pub fe_band: Option<(f64, f64)>,
    pub toy: Option<ToyModelParams>,
}

fn resolve_mode(r: &Option<ModeRef>, basis: &ModeBasis, what: &str) -> Result<Option<usize>, CliError> {
    match r {
        None => Ok(None),
        Some(ModeRef::Index(i)) if *i < basis.n_modes() => Ok(Some(*i)),
        Some(ModeRef::Index(i)) => Err(CliError::Config(format!(
            "model.{what}: index {i} out of range for {} modes",
            basis.n_modes()
        ))),
        Some(ModeRef::Label(l)) => basis
            .index_of(l)
            .map(Some)
            .ok_or_else(|| CliError::Config(format!("model.{what}: no mode labelled `{l}`"))),
    }
}

pub fn relax_options(cfg: &RunConfig) -> RelaxOptions {
    let t = &cfg.tolerances;
    RelaxOptions {
        mixing: t.relax_mixing,
        f_tol: t.relax_f_tol,
        a_tol: t.relax_a_tol,
        max_iter: t.relax_max_iter,
        ..RelaxOptions::default()
    }
}

/// Load the model named by `cfg`; relative file paths are taken from `base`.
pub fn build_model(cfg: &RunConfig, units: &UnitSystem, base: &Path) -> Result<Model, CliError> {
    let l = units.length_in_angstrom_sqrt_amu();
    if let Some(path) = &cfg.model.file {
        let path = base.join(path);
        let pes =
            load_pes(&path, units).map_err(|e| CliError::Config(format!("model.file {}: {e}", path.display())))?;
        let n = pes.dim();
        let mut basis = match pes.basis() {
            Basis::Mode => ModeBasis::identity(n),
            Basis::Cartesian => {
                let res = scha_relax(
                    &pes,
                    cfg.temperature,
                    units,
                    &DVec::zeros(n),
                    &Clamp::none(),
                    None,
                    &relax_options(cfg),
                )?;
                ModeBasis::from_curvature(&res.kappa)?
            }
        };
        if let Some(rows) = &cfg.model.zeff {
            if rows.len() != n {
                return Err(CliError::Config(format!(
                    "model.zeff: expected {n} rows, found {}",
                    rows.len()
                )));
            }
            basis = basis.with_zeff(DMat::from_fn(n, 3, |i, c| rows[i][c]))?;
        }
        let focus = resolve_mode(&cfg.model.focus_mode, &basis, "focus_mode")?.unwrap_or(0);
        let ir = resolve_mode(&cfg.model.ir_mode, &basis, "ir_mode")?;
        let x0 = match cfg.model.x0 {
            Some(x) => Some(x / l),
            None => pes.double_well_params(Some(&basis), focus).ok().map(|(x0, _)| x0),
        };
        return Ok(Model {
            pes,
            basis,
            focus,
            ir,
            x0,
            seed_displacement: cfg.model.seed_displacement.unwrap_or(0.0) / l,
            fe_band: None,
            toy: None,
        });
    }
    let default_toy = ToyConfig::default();
    let toy = cfg.model.toy.as_ref().unwrap_or(&default_toy);
    let p = toy.to_params(units, cfg.seed)?;
    let (pes, basis) = build_toy_sto(&p, units).map_err(|e| CliError::Config(format!("model.toy: {e}")))?;
    let focus = resolve_mode(&cfg.model.focus_mode, &basis, "focus_mode")?.unwrap_or(FE);
    let ir = resolve_mode(&cfg.model.ir_mode, &basis, "ir_mode")?.unwrap_or(IR);
    Ok(Model {
        pes,
        basis,
        focus,
        ir: Some(ir),
        x0: Some(cfg.model.x0.map_or(p.x0, |x| x / l)),
        seed_displacement: cfg.model.seed_displacement.map_or(p.seed_fe, |x| x / l),
        fe_band: p.fe_band,
        toy: Some(p),
    })
}

/// Relaxed paraelectric state at `temperature` (K) with the focus seed applied.
pub fn initial_state(
    model: &Model,
    cfg: &RunConfig,
    units: &UnitSystem,
    temperature: f64,
) -> Result<GaussianState, CliError> {
    let n = model.pes.dim();
    let res = scha_relax(
        &model.pes,
        temperature,
        units,
        &DVec::zeros(n),
        &Clamp::none(),
        None,
        &relax_options(cfg),
    )?;
    if !res.converged {
        return Err(CliError::Numerical(format!(
            "equilibrium relaxation at T = {temperature} did not converge after {} iterations",
            res.iterations
        )));
    }
    let mut s = res.state(temperature, units)?;
    s.r += model.pes.mode_vector(Some(&model.basis), model.focus)? * model.seed_displacement;
    Ok(s)
}

pub fn make_drive(pulse: &PulseConfig, basis: &ModeBasis, units: &UnitSystem) -> tdscha_core::Result<Drive> {
    let p = Pulse::along_x(
        pulse.amplitude * units.field_to_force,
        units.thz(pulse.frequency),
        units.fs(pulse.sigma),
        units.fs(pulse.t0),
        pulse.tilt_deg,
    )?;
    Drive::new(p, basis)
}

/// Integrate from `s0` under `pulse` with the configured span and tolerances.
pub fn run_dynamics(
    model: &Model,
    cfg: &RunConfig,
    units: &UnitSystem,
    s0: &GaussianState,
    pulse: Option<&PulseConfig>,
) -> tdscha_core::Result<Trajectory> {
    let drive = pulse.map(|p| make_drive(p, &model.basis, units)).transpose()?;
    let opts = IntegrateOptions {
        rtol: cfg.tolerances.rtol,
        atol: cfg.tolerances.atol,
        stride: units.fs(cfg.time.stride),
        snapshot_every: cfg.time.snapshot_every,
        focus_mode: Some(model.focus),
        ..IntegrateOptions::default()
    };
    let span = (units.fs(cfg.time.t_start), units.fs(cfg.time.t_end));
    if cfg.dynamics.frozen_a {
        integrate_frozen_a(s0, &model.pes, drive.as_ref(), &model.basis, span, &opts)
    } else {
        integrate(s0, &model.pes, drive.as_ref(), &model.basis, span, &opts)
    }
}

pub fn summarize_run(model: &Model, traj: &Trajectory, units: &UnitSystem) -> Summary {
    let x0 = model.x0.unwrap_or(f64::INFINITY);
    summarize(traj, model.focus, model.ir, x0, units.fs(TRANSITION_HOLD_FS))
}

#[derive(Serialize)]
struct RelaxReport {
    temperature: f64,
    free_energy: f64,
    free_energy_mev: f64,
    /// Square roots of the curvature eigenvalues, ascending.
    frequencies: Vec<f64>,
    frequencies_thz: Vec<f64>,
    r: Vec<f64>,
    a: Vec<Vec<f64>>,
    converged: bool,
    iterations: usize,
    force_residual: f64,
    a_residual: f64,
    /// Signed FES frequency of the focus mode, THz (negative when imaginary).
    fes_frequency_thz: Option<f64>,
}

#[derive(Serialize)]
struct MinimalReport {
    params: MinimalModelParams,
    blew_up: bool,
    final_time: f64,
}

#[derive(Serialize)]
struct BasisReport {
    labels: Vec<String>,
    frequencies_thz: Vec<f64>,
    zeff: Option<Vec<Vec<f64>>>,
}

fn rows(m: &DMat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn fmt_opt(x: Option<f64>) -> String {
    format!("{}", x.unwrap_or(f64::NAN))
}

struct Run<'a> {
    cfg: &'a RunConfig,
    units: UnitSystem,
    base: &'a Path,
    out: &'a Path,
    manifest: &'a mut Manifest,
}

impl Run<'_> {
    fn dispatch(&mut self, command: Command) -> Result<(), CliError> {
        match command {
            Command::Relax => self.relax(),
            Command::Dynamics => self.dynamics(),
            Command::Scan => self.scan(),
            Command::Minimal => self.minimal(),
            Command::ToyBuild => self.toy_build(),
        }
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.out.join(name);
        let f = File::create(&path).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
        self.manifest.outputs.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let w = self.create(name)?;
        serde_json::to_writer_pretty(w, value).map_err(|e| CliError::Io(std::io::Error::other(e)))
    }

    fn pool(&self) -> Result<rayon::ThreadPool, CliError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.workers)
            .build()
            .map_err(|e| CliError::Config(format!("workers: {e}")))
    }

    fn relax(&mut self) -> Result<(), CliError> {
        let (cfg, units) = (self.cfg, self.units.clone());
        let model = build_model(cfg, &units, self.base)?;
        let n = model.pes.dim();
        let opts = relax_options(cfg);
        let mut starts = vec![DVec::zeros(n)];
        if let Some(x0) = model.x0.filter(|x| x.is_finite()) {
            let e = model.pes.mode_vector(Some(&model.basis), model.focus)?;
            starts.push(&e * x0);
            starts.push(&e * -x0);
        }
        let res = scha_relax_multistart(&model.pes, cfg.temperature, &units, &starts, &opts)?;
        let mut fes_freq = None;
        if let Some(fes) = cfg.relax.fes {
            let l = units.length_in_angstrom_sqrt_amu();
            let ext = fes.extent / l;
            let grid: Vec<f64> = (0..fes.points)
                .map(|i| -ext + 2.0 * ext * i as f64 / (fes.points - 1) as f64)
                .collect();
            let curve = clamped_fes(
                &model.pes,
                Some(&model.basis),
                model.focus,
                &grid,
                cfg.temperature,
                &units,
                &opts,
            )?;
            fes_freq = fe_frequency(&curve)
                .ok()
                .map(|f| units.to_thz(f.omega) * f.signed().signum());
            curve.write_csv(self.create("fes.csv")?)?;
        }
        let report = RelaxReport {
            temperature: cfg.temperature,
            free_energy: res.free_energy,
            free_energy_mev: units.to_ev(res.free_energy) * 1e3,
            frequencies: res.frequencies.clone(),
            frequencies_thz: res.frequencies.iter().map(|w| units.to_thz(*w)).collect(),
            r: res.r.iter().copied().collect(),
            a: rows(&res.a),
            converged: res.converged,
            iterations: res.iterations,
            force_residual: res.force_residual,
            a_residual: res.a_residual,
            fes_frequency_thz: fes_freq,
        };
        self.write_json("relax.json", &report)?;
        if !res.converged {
            return Err(CliError::Numerical(format!(
                "relaxation did not converge after {} iterations",
                res.iterations
            )));
        }
        Ok(())
    }

    fn dynamics(&mut self) -> Result<(), CliError> {
        let (cfg, units) = (self.cfg, self.units.clone());
        let model = build_model(cfg, &units, self.base)?;
        let s0 = initial_state(&model, cfg, &units, cfg.temperature)?;
        let (traj, failure) = match run_dynamics(&model, cfg, &units, &s0, cfg.pulse.as_ref()) {
            Ok(t) => (t, None),
            Err(tdscha_core::Error::Integration(f)) => {
                let msg = f.to_string();
                (f.partial, Some(msg))
            }
            Err(e) => return Err(e.into()),
        };
        traj.write_csv(self.create("trajectory.csv")?)?;
        if cfg.time.snapshot_every > 0 {
            traj.write_snapshots(self.create("snapshots.jsonl")?)?;
        }
        let summary = summarize_run(&model, &traj, &units);
        self.write_json("summary.json", &summary)?;
        match failure {
            Some(msg) => Err(CliError::Numerical(msg)),
            None => Ok(()),
        }
    }

    fn scan(&mut self) -> Result<(), CliError> {
        let (cfg, units) = (self.cfg, self.units.clone());
        let scan = cfg.scan.as_ref().expect("validated");
        let model = build_model(cfg, &units, self.base)?;
        let pool = self.pool()?;
        if scan.axis == ScanAxis::X0V0 {
            return self.phase_map_scan(&model, &pool);
        }
        let shared = match scan.axis {
            ScanAxis::Field => Some(initial_state(&model, cfg, &units, cfg.temperature)?),
            _ => None,
        };
        let points: Vec<(f64, f64)> = match scan.axis {
            ScanAxis::Field => scan.fields.iter().map(|&f| (f, cfg.temperature)).collect(),
            _ => scan
                .temperatures
                .iter()
                .map(|&t| (cfg.pulse.map_or(0.0, |p| p.amplitude), t))
                .collect(),
        };
        let task = |&(field, temperature): &(f64, f64)| -> Result<(Summary, Trajectory), String> {
            let s0 = match &shared {
                Some(s) => s.clone(),
                None => initial_state(&model, cfg, &units, temperature).map_err(|e| e.to_string())?,
            };
            let pulse = cfg.pulse.map(|p| PulseConfig { amplitude: field, ..p });
            let traj = run_dynamics(&model, cfg, &units, &s0, pulse.as_ref()).map_err(|e| e.to_string())?;
            Ok((summarize_run(&model, &traj, &units), traj))
        };
        let results: Vec<_> = pool.install(|| {
            points
                .par_iter()
                .map(|pt| {
                    let t = Instant::now();
                    let r = task(pt);
                    (r, t.elapsed().as_secs_f64())
                })
                .collect()
        });
        let mut w = self.create("scan.csv")?;
        use std::io::Write;
        writeln!(
            w,
            "index,field,temperature,transition,transition_time,min_A_focus,max_R_IR,min_uncertainty,relax_back_time,status"
        )?;
        let mut failures = 0;
        for (i, ((field, temperature), (res, wall))) in points.iter().zip(&results).enumerate() {
            let label = match scan.axis {
                ScanAxis::Field => format!("field={field}"),
                _ => format!("temperature={temperature}"),
            };
            match res {
                Ok((s, _)) => writeln!(
                    w,
                    "{i},{field},{temperature},{},{},{},{},{},{},ok",
                    u8::from(s.transition),
                    fmt_opt(s.transition_time),
                    s.min_a_focus,
                    fmt_opt(s.max_r_ir),
                    s.min_uncertainty,
                    fmt_opt(s.relax_back_time)
                )?,
                Err(_) => {
                    failures += 1;
                    writeln!(w, "{i},{field},{temperature},,,,,,,failed")?
                }
            }
            self.manifest.tasks.push(TaskRecord {
                index: i,
                label,
                wall_time_s: *wall,
                ok: res.is_ok(),
                error: res.as_ref().err().cloned(),
            });
        }
        w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
        if scan.trajectories {
            for (i, (res, _)) in results.iter().enumerate() {
                if let Ok((_, traj)) = res {
                    traj.write_csv(self.create(&format!("trajectory_{i}.csv"))?)?;
                }
            }
        }
        self.scan_outcome(failures, points.len())
    }

    fn phase_map_scan(&mut self, model: &Model, pool: &rayon::ThreadPool) -> Result<(), CliError> {
        let (cfg, units) = (self.cfg, self.units.clone());
        let scan = cfg.scan.as_ref().expect("validated");
        let l = units.length_in_angstrom_sqrt_amu();
        let x0s: Vec<f64> = scan.x0.iter().map(|x| x / l).collect();
        let v0s: Vec<f64> = scan.v0.iter().map(|v| units.mev(*v)).collect();
        let opts = PhaseMapOptions {
            classify: ClassifyOptions {
                relax: relax_options(cfg),
                ..ClassifyOptions::default()
            },
            band: model.fe_band,
        };
        let coords: Vec<(f64, f64)> = v0s.iter().flat_map(|&v| x0s.iter().map(move |&x| (x, v))).collect();
        let cells: Vec<_> = pool.install(|| {
            coords
                .par_iter()
                .map(|&(x0, v0)| {
                    let t = Instant::now();
                    let c = phase_map_cell(
                        &model.pes,
                        Some(&model.basis),
                        model.focus,
                        x0,
                        v0,
                        cfg.temperature,
                        &units,
                        &opts,
                    );
                    (c, t.elapsed().as_secs_f64())
                })
                .collect()
        });
        let mut failures = 0;
        for (i, (c, wall)) in cells.iter().enumerate() {
            let failed = matches!(c.status, CellStatus::Failed | CellStatus::NoStableSolution);
            failures += usize::from(failed);
            self.manifest.tasks.push(TaskRecord {
                index: i,
                label: format!("x0={},V0={}", c.x0 * l, units.to_ev(c.v0) * 1e3),
                wall_time_s: *wall,
                ok: !failed,
                error: c.message.clone().filter(|_| failed),
            });
        }
        let map = PhaseMap {
            x0s,
            v0s,
            cells: cells.into_iter().map(|(c, _)| c).collect(),
        };
        map.write_csv(self.create("phase_map.csv")?)?;
        self.scan_outcome(failures, coords.len())
    }

    fn scan_outcome(&self, failures: usize, total: usize) -> Result<(), CliError> {
        match failures {
            0 => Ok(()),
            f if f == total => Err(CliError::Numerical(format!("all {total} scan tasks failed"))),
            f => Err(CliError::PartialScan(format!("{f} of {total} tasks"))),
        }
    }

    fn minimal(&mut self) -> Result<(), CliError> {
        let (cfg, units) = (self.cfg, self.units.clone());
        let m = cfg.minimal.expect("validated");
        let l = units.length_in_angstrom_sqrt_amu();
        let params = MinimalModelParams {
            omega_fe: units.thz(m.omega_fe),
            psi_fe: units.mev(m.psi_fe) * l.powi(4),
            a_eq: m.a_eq / (l * l),
            alpha: m.alpha / l,
            tau: units.fs(m.tau),
        };
        let opts = MinimalOptions {
            rtol: cfg.tolerances.rtol,
            atol: cfg.tolerances.atol,
            stride: units.fs(cfg.time.stride),
            blowup: m.blowup / (l * l),
            coefficient: m.coefficient,
        };
        let path = params.exponential_path();
        let sol = minimal_model_integrate(&params, path, (units.fs(m.t_start), units.fs(m.t_end)), &opts)
            .map_err(|e| CliError::Config(format!("minimal: {e}")))?;
        let mut w = self.create("minimal.csv")?;
        use std::io::Write;
        writeln!(w, "t,R,A,A_closed_form")?;
        for (t, a) in sol.times.iter().zip(sol.fluctuation(params.a_eq)) {
            writeln!(w, "{t},{},{a},{}", path(*t).0, quench_closed_form(&params, *t))?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
        let report = MinimalReport {
            params,
            blew_up: sol.blew_up,
            final_time: sol.times.last().copied().unwrap_or(f64::NAN),
        };
        self.write_json("minimal.json", &report)
    }

    fn toy_build(&mut self) -> Result<(), CliError> {
        let (cfg, units) = (self.cfg, self.units.clone());
        let model = build_model(cfg, &units, self.base)?;
        let name = cfg.output.pes_file.display().to_string();
        save_pes(self.out.join(&name), &model.pes, &units, FileUnits::LAB)?;
        self.manifest.outputs.push(name);
        let report = BasisReport {
            labels: model.basis.labels().to_vec(),
            frequencies_thz: model.basis.freqs().iter().map(|w| units.to_thz(*w)).collect(),
            zeff: model.basis.zeff().map(rows),
        };
        self.write_json("basis.json", &report)?;
        let params = model.toy.expect("toy model");
        self.write_json("toy_params.json", &params)
    }
}
