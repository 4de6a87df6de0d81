//! Time-dependent SCHA equations of motion under an optional laser drive.
//!
//! ```text
//! dR/dt = P
//! dP/dt = <f>(R, A) + f_drive(t)
//! dA/dt = G + G^T
//! dB/dt = -kappa G - (kappa G)^T
//! dG/dt = B - A kappa
//! ```
//!
//! with `kappa(R, A)` the ensemble curvature. The frozen-fluctuation variant
//! keeps `A`, `B`, `G` at their initial values and only moves the centroids.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{check_spd, min_eigenvalue, CompensatedVec, PD_FLOOR};
use crate::ode::{dopri5, Dopri5Options, OdeError, OdeStats, OdeSystem};
use crate::pes::QuarticPes;
use crate::state::{
    project_vector, state_energy_unchecked, uncertainty_products, GaussianState, ModeBasis, StateEnergy, StateSnapshot,
};
use crate::{DMat, DVec};

/// `E(t) = amplitude cos(omega t) exp(-(t - t0)^2 / (2 sigma^2))` along a
/// unit polarization vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub amplitude: f64,
    pub omega: f64,
    pub sigma: f64,
    pub t0: f64,
    pub polarization: [f64; 3],
}

impl Pulse {
    pub fn new(amplitude: f64, omega: f64, sigma: f64, t0: f64, polarization: [f64; 3]) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "pulse width must be positive, got {sigma}"
            )));
        }
        let norm = polarization.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "polarization must be a unit vector (norm {norm})"
            )));
        }
        if ![amplitude, omega, t0].iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidParameter("non-finite pulse parameter".into()));
        }
        Ok(Self {
            amplitude,
            omega,
            sigma,
            t0,
            polarization,
        })
    }

    /// Polarized along x, rotated by `tilt_deg` about the y axis.
    pub fn along_x(amplitude: f64, omega: f64, sigma: f64, t0: f64, tilt_deg: f64) -> Result<Self> {
        let th = tilt_deg.to_radians();
        Self::new(amplitude, omega, sigma, t0, [th.cos(), 0.0, -th.sin()])
    }

    pub fn envelope(&self, t: f64) -> f64 {
        let x = (t - self.t0) / self.sigma;
        (-0.5 * x * x).exp()
    }

    pub fn field(&self, t: f64) -> f64 {
        self.amplitude * (self.omega * t).cos() * self.envelope(t)
    }
}

/// A pulse together with the per-coordinate coupling `Z . polarization`.
#[derive(Debug, Clone, PartialEq)]
pub struct Drive {
    pub pulse: Pulse,
    pub coupling: DVec,
}

impl Drive {
    pub fn new(pulse: Pulse, basis: &ModeBasis) -> Result<Self> {
        let z = basis.zeff().ok_or(Error::MissingEffectiveCharges)?;
        let pol = DVec::from_row_slice(&pulse.polarization);
        Ok(Self {
            pulse,
            coupling: z * pol,
        })
    }

    pub fn force(&self, t: f64) -> DVec {
        &self.coupling * self.pulse.field(t)
    }
}

/// Force exerted by the pulse on every coordinate at time `t`.
pub fn drive_force(pulse: &Pulse, basis: &ModeBasis, t: f64) -> Result<DVec> {
    Ok(Drive::new(*pulse, basis)?.force(t))
}

/// Harmonic, anharmonic and quantum contributions to the mean force on one
/// mode; they add up to the exact ensemble force.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceChannels {
    pub harmonic: f64,
    pub anharmonic: f64,
    pub quantum: f64,
    pub total: f64,
}

impl ForceChannels {
    /// Relative closure error `|h + a + q - total|` scaled by the channel
    /// magnitudes being summed.
    pub fn closure_error(&self) -> f64 {
        let scale = self.harmonic.abs() + self.anharmonic.abs() + self.quantum.abs();
        let diff = (self.harmonic + self.anharmonic + self.quantum - self.total).abs();
        if scale == 0.0 {
            diff
        } else {
            diff / scale
        }
    }
}

/// Channel vectors in the coordinates of the surface:
/// harmonic `-phi R`; anharmonic `-chi R R / 2 - psi R R R / 6`;
/// quantum `-chi A / 2 - psi R A / 2`.
pub fn force_channel_vectors(pes: &QuarticPes, r: &DVec, a: &DMat) -> (DVec, DVec, DVec) {
    let n = pes.dim();
    let mut harm = CompensatedVec::zeros(n);
    let mut anh = CompensatedVec::zeros(n);
    let mut quant = CompensatedVec::zeros(n);
    for (idx, v) in pes.phi().permutations() {
        harm.add(idx[0], -v * r[idx[1]]);
    }
    for (idx, v) in pes.chi().permutations() {
        let (i, j, k) = (idx[0], idx[1], idx[2]);
        anh.add(i, -0.5 * v * r[j] * r[k]);
        quant.add(i, -0.5 * v * a[(j, k)]);
    }
    for (idx, v) in pes.psi().permutations() {
        let (i, j, k, l) = (idx[0], idx[1], idx[2], idx[3]);
        anh.add(i, -v * r[j] * r[k] * r[l] / 6.0);
        quant.add(i, -0.5 * v * r[j] * a[(k, l)]);
    }
    (harm.finish(), anh.finish(), quant.finish())
}

pub fn force_decomposition(
    state: &GaussianState,
    pes: &QuarticPes,
    basis: &ModeBasis,
    mu: usize,
) -> Result<ForceChannels> {
    check_len("state dimension", pes.dim(), state.dim())?;
    let total = pes.ensemble_force(&state.r, &state.a)?;
    let (h, a, q) = force_channel_vectors(pes, &state.r, &state.a);
    Ok(ForceChannels {
        harmonic: project_vector(&h, basis, mu)?,
        anharmonic: project_vector(&a, basis, mu)?,
        quantum: project_vector(&q, basis, mu)?,
        total: project_vector(&total, basis, mu)?,
    })
}

fn channels_unchecked(pes: &QuarticPes, state: &GaussianState, e_mu: &DVec) -> ForceChannels {
    let total = pes.force_unchecked(&state.r, &state.a);
    let (h, a, q) = force_channel_vectors(pes, &state.r, &state.a);
    ForceChannels {
        harmonic: e_mu.dot(&h),
        anharmonic: e_mu.dot(&a),
        quantum: e_mu.dot(&q),
        total: e_mu.dot(&total),
    }
}

/// `sign(v) log10(1 + |v| / scale)`.
pub fn signed_log(v: f64, scale: f64) -> f64 {
    v.signum() * (v.abs() / scale).ln_1p() / std::f64::consts::LN_10
}

/// Right-hand side of the equations of motion on a packed state vector
/// `[R, P, A, B, G]` (matrices column-major).
pub struct TdschaSystem<'a> {
    pes: &'a QuarticPes,
    drive: Option<&'a Drive>,
    frozen: bool,
    n: usize,
}

impl<'a> TdschaSystem<'a> {
    pub fn new(pes: &'a QuarticPes, drive: Option<&'a Drive>, frozen: bool) -> Self {
        Self {
            pes,
            drive,
            frozen,
            n: pes.dim(),
        }
    }
}

pub fn pack(state: &GaussianState) -> Vec<f64> {
    let mut y = Vec::with_capacity(2 * state.dim() + 3 * state.dim().pow(2));
    y.extend_from_slice(state.r.as_slice());
    y.extend_from_slice(state.p.as_slice());
    y.extend_from_slice(state.a.as_slice());
    y.extend_from_slice(state.b.as_slice());
    y.extend_from_slice(state.g.as_slice());
    y
}

pub fn unpack(y: &[f64], n: usize) -> GaussianState {
    let m = n * n;
    let o = 2 * n;
    GaussianState {
        r: DVec::from_column_slice(&y[..n]),
        p: DVec::from_column_slice(&y[n..o]),
        a: DMat::from_column_slice(n, n, &y[o..o + m]),
        b: DMat::from_column_slice(n, n, &y[o + m..o + 2 * m]),
        g: DMat::from_column_slice(n, n, &y[o + 2 * m..o + 3 * m]),
    }
}

impl OdeSystem for TdschaSystem<'_> {
    fn dim(&self) -> usize {
        2 * self.n + 3 * self.n * self.n
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.n;
        let m = n * n;
        let o = 2 * n;
        let s = unpack(y, n);
        let (mut f, kappa) = self.pes.force_and_curvature_unchecked(&s.r, &s.a);
        if let Some(d) = self.drive {
            f += d.force(t);
        }
        dy[..n].copy_from_slice(s.p.as_slice());
        dy[n..o].copy_from_slice(f.as_slice());
        if self.frozen {
            dy[o..].iter_mut().for_each(|x| *x = 0.0);
            return;
        }
        let da = &s.g + s.g.transpose();
        let kg = &kappa * &s.g;
        let db = -(&kg + kg.transpose());
        let dg = &s.b - &s.a * &kappa;
        dy[o..o + m].copy_from_slice(da.as_slice());
        dy[o + m..o + 2 * m].copy_from_slice(db.as_slice());
        dy[o + 2 * m..].copy_from_slice(dg.as_slice());
    }
}

/// Derivative of a state (unpacked), mainly for inspection and tests.
pub fn eom_rhs(state: &GaussianState, pes: &QuarticPes, drive: Option<&Drive>, t: f64) -> Result<GaussianState> {
    state.validate()?;
    check_len("state dimension", pes.dim(), state.dim())?;
    let sys = TdschaSystem::new(pes, drive, false);
    let y = pack(state);
    let mut dy = vec![0.0; y.len()];
    sys.rhs(t, &y, &mut dy);
    Ok(unpack(&dy, state.dim()))
}

/// Observables sampled at one output time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableRecord {
    pub t: f64,
    pub r_modes: Vec<f64>,
    pub a_modes: Vec<f64>,
    pub b_modes: Vec<f64>,
    pub channels: Option<ForceChannels>,
    pub energy: StateEnergy,
    pub uncertainty_min: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub labels: Vec<String>,
    pub focus_mode: Option<usize>,
    pub records: Vec<ObservableRecord>,
    pub snapshots: Vec<StateSnapshot>,
    pub final_time: f64,
    pub final_state: GaussianState,
    pub stats: OdeStats,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn mode_series(&self, mu: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.r_modes[mu]).collect()
    }

    pub fn fluctuation_series(&self, mu: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.a_modes[mu]).collect()
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut cols = vec!["t".to_string()];
        for prefix in ["R", "A", "B"] {
            cols.extend(self.labels.iter().map(|l| format!("{prefix}_{l}")));
        }
        if self.focus_mode.is_some() {
            for c in ["f_harmonic", "f_anharmonic", "f_quantum", "f_total"] {
                cols.push(c.into());
            }
        }
        for c in ["kinetic", "potential", "total", "uncertainty_min"] {
            cols.push(c.into());
        }
        cols
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.csv_header().join(","))?;
        for rec in &self.records {
            let mut fields: Vec<String> = vec![format!("{}", rec.t)];
            for series in [&rec.r_modes, &rec.a_modes, &rec.b_modes] {
                fields.extend(series.iter().map(|x| format!("{x}")));
            }
            if self.focus_mode.is_some() {
                let c = rec.channels.unwrap_or(ForceChannels {
                    harmonic: f64::NAN,
                    anharmonic: f64::NAN,
                    quantum: f64::NAN,
                    total: f64::NAN,
                });
                fields.extend(
                    [c.harmonic, c.anharmonic, c.quantum, c.total]
                        .iter()
                        .map(|x| format!("{x}")),
                );
            }
            fields.extend(
                [
                    rec.energy.kinetic,
                    rec.energy.potential,
                    rec.energy.total,
                    rec.uncertainty_min,
                ]
                .iter()
                .map(|x| format!("{x}")),
            );
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }

    /// Snapshot stream as JSON lines.
    pub fn write_snapshots<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.snapshots {
            serde_json::to_writer(&mut w, s)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Spacing of logged observables.
    pub stride: f64,
    /// Keep a full state snapshot every this many outputs (0 = never).
    pub snapshot_every: usize,
    /// Mode whose force channels are logged.
    pub focus_mode: Option<usize>,
    pub max_steps: usize,
    pub h_max: f64,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            stride: 1.0,
            snapshot_every: 0,
            focus_mode: None,
            max_steps: 50_000_000,
            h_max: f64::INFINITY,
        }
    }
}

/// Diagnostics for a run that could not be completed.
#[derive(Debug, Clone)]
pub struct IntegrationFailure {
    pub t: f64,
    pub reason: String,
    pub last_state: GaussianState,
    pub partial: Trajectory,
}

impl std::fmt::Display for IntegrationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "integration failed at t = {}: {}", self.t, self.reason)
    }
}

impl std::error::Error for IntegrationFailure {}

struct Recorder<'a> {
    pes: &'a QuarticPes,
    basis: &'a ModeBasis,
    focus: Option<DVec>,
    snapshot_every: usize,
    records: Vec<ObservableRecord>,
    snapshots: Vec<StateSnapshot>,
}

impl Recorder<'_> {
    fn record(&mut self, t: f64, state: &GaussianState) {
        let e = self.basis.eigvecs();
        let r_modes = (e * &state.r).iter().copied().collect();
        let ea = e * &state.a;
        let eb = e * &state.b;
        let a_modes = (0..e.nrows()).map(|mu| ea.row(mu).dot(&e.row(mu))).collect();
        let b_modes = (0..e.nrows()).map(|mu| eb.row(mu).dot(&e.row(mu))).collect();
        let uncertainty_min = uncertainty_products(state, self.basis)
            .map(|u| u.into_iter().fold(f64::INFINITY, f64::min))
            .unwrap_or(f64::NAN);
        let channels = self
            .focus
            .as_ref()
            .map(|e_mu| channels_unchecked(self.pes, state, e_mu));
        if self.snapshot_every > 0 && self.records.len().is_multiple_of(self.snapshot_every) {
            self.snapshots.push(state.to_snapshot(t));
        }
        self.records.push(ObservableRecord {
            t,
            r_modes,
            a_modes,
            b_modes,
            channels,
            energy: state_energy_unchecked(state, self.pes),
            uncertainty_min,
        });
    }
}

fn run(
    state0: &GaussianState,
    pes: &QuarticPes,
    drive: Option<&Drive>,
    basis: &ModeBasis,
    t_span: (f64, f64),
    opts: &IntegrateOptions,
    frozen: bool,
) -> Result<Trajectory> {
    state0.validate()?;
    let n = pes.dim();
    check_len("state dimension", n, state0.dim())?;
    check_len("mode basis dimension", n, basis.dim())?;
    if let Some(d) = drive {
        check_len("drive coupling", n, d.coupling.len())?;
    }
    let (t0, t1) = t_span;
    if !(opts.stride > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "output stride must be positive, got {}",
            opts.stride
        )));
    }
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::InvalidParameter(format!("bad time span [{t0}, {t1}]")));
    }
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(Error::InvalidParameter("tolerances must be positive".into()));
    }
    let focus = match opts.focus_mode {
        Some(mu) if mu >= basis.n_modes() => {
            return Err(Error::InvalidParameter(format!("focus mode {mu} out of range")));
        }
        Some(mu) => Some(basis.mode(mu)),
        None => None,
    };

    let n_out = ((t1 - t0) / opts.stride + 1e-9).floor() as usize;
    let outputs: Vec<f64> = (1..=n_out)
        .map(|k| t0 + k as f64 * opts.stride)
        .filter(|&t| t <= t1)
        .collect();

    let mut rec = Recorder {
        pes,
        basis,
        focus,
        snapshot_every: opts.snapshot_every,
        records: Vec::with_capacity(outputs.len() + 1),
        snapshots: Vec::new(),
    };
    rec.record(t0, state0);

    let sys = TdschaSystem::new(pes, drive, frozen);
    let y0 = pack(state0);
    let ode_opts = Dopri5Options {
        rtol: opts.rtol,
        atol: opts.atol,
        max_steps: opts.max_steps,
        h_max: opts.h_max,
        ..Default::default()
    };
    let m = n * n;
    let mut last_good = (t0, y0.clone());
    let result = {
        let rec_ref = &mut rec;
        let last_ref = &mut last_good;
        dopri5(
            &sys,
            t0,
            &y0,
            t1,
            &ode_opts,
            &outputs,
            |t, y| rec_ref.record(t, &unpack(y, n)),
            |t, y| {
                if !frozen {
                    let a = DMat::from_column_slice(n, n, &y[2 * n..2 * n + m]);
                    let lam = min_eigenvalue(&a);
                    if !(lam >= PD_FLOOR) {
                        return Err(format!(
                            "position fluctuations lost positive definiteness (min eigenvalue {lam:.3e})"
                        ));
                    }
                }
                *last_ref = (t, y.to_vec());
                Ok(())
            },
        )
    };
    let partial = |rec: Recorder, t: f64, y: &[f64], stats: OdeStats| Trajectory {
        labels: basis.labels().to_vec(),
        focus_mode: opts.focus_mode,
        records: rec.records,
        snapshots: rec.snapshots,
        final_time: t,
        final_state: unpack(y, n),
        stats,
    };
    match result {
        Ok((y, stats)) => {
            let mut traj = partial(rec, t1, &y, stats);
            if opts.snapshot_every > 0 && traj.snapshots.last().map(|s| s.t) != Some(t1) {
                traj.snapshots.push(traj.final_state.to_snapshot(t1));
            }
            Ok(traj)
        }
        Err(e) => {
            let (t, reason) = match &e {
                OdeError::StepUnderflow { t, .. }
                | OdeError::TooManySteps { t, .. }
                | OdeError::NonFinite { t, .. }
                | OdeError::Stopped { t, .. } => (*t, e.to_string()),
                OdeError::Settings(_) => (t0, e.to_string()),
            };
            let (tl, yl) = last_good;
            let traj = partial(rec, tl, &yl, OdeStats::default());
            Err(Error::Integration(Box::new(IntegrationFailure {
                t,
                reason,
                last_state: traj.final_state.clone(),
                partial: traj,
            })))
        }
    }
}

/// Integrate the full equations of motion.
pub fn integrate(
    state0: &GaussianState,
    pes: &QuarticPes,
    drive: Option<&Drive>,
    basis: &ModeBasis,
    t_span: (f64, f64),
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    run(state0, pes, drive, basis, t_span, opts, false)
}

/// Integrate with `A`, `B`, `G` held at their initial values.
pub fn integrate_frozen_a(
    state0: &GaussianState,
    pes: &QuarticPes,
    drive: Option<&Drive>,
    basis: &ModeBasis,
    t_span: (f64, f64),
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    check_spd("position fluctuation matrix A", &state0.a, state0.dim())?;
    run(state0, pes, drive, basis, t_span, opts, true)
}
