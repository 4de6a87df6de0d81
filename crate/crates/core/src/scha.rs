//! Equilibrium SCHA: Gaussian free energy, relaxation, clamped free-energy
//! surfaces along one mode, and the double-well phase map.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{check_spd, min_eigenvalue, sym_eigen, symmetrize};
use crate::pes::QuarticPes;
use crate::state::{thermal_fluctuations, GaussianState, ModeBasis};
use crate::units::UnitSystem;
use crate::{DMat, DVec};

/// Gaussian variational free energy at fixed `(R, A)`.
///
/// At zero temperature `F = <V> + hbar^2 / 8 Tr A^-1`. At finite temperature
/// every eigenvalue `a` of `A` is matched to the frequency `W` of a thermal
/// oscillator with the same spread, `a = hbar coth(hbar W / 2kT) / (2W)`, and
/// contributes `kT ln(2 sinh(hbar W / 2kT)) - W^2 a / 2`.
pub fn free_energy(pes: &QuarticPes, r: &DVec, a: &DMat, temperature: f64, units: &UnitSystem) -> Result<f64> {
    check_len("centroid", pes.dim(), r.len())?;
    check_spd("position fluctuation matrix A", a, pes.dim())?;
    if !(temperature >= 0.0) {
        return Err(Error::InvalidParameter(format!("negative temperature {temperature}")));
    }
    Ok(free_energy_parts(pes, r, a, temperature, units).0)
}

/// `(F, magnitude scale)`; the scale bounds the rounding noise in `F`.
fn free_energy_parts(pes: &QuarticPes, r: &DVec, a: &DMat, temperature: f64, units: &UnitSystem) -> (f64, f64) {
    let v = pes.potential_unchecked(r, a);
    let (values, _) = sym_eigen(a);
    let kt = units.thermal_energy(temperature);
    let hbar = units.hbar;
    let quantum: f64 = values.iter().map(|&ai| mode_free_energy(ai, hbar, kt)).sum();
    let scale = v.abs() + pes.v_ref().abs() + quantum.abs();
    (v + quantum, scale)
}

/// Kinetic plus entropic contribution of one Gaussian mode of spread `a`.
fn mode_free_energy(a: f64, hbar: f64, kt: f64) -> f64 {
    if kt <= 0.0 {
        return hbar * hbar / (8.0 * a);
    }
    let x = solve_spread(4.0 * a * kt / (hbar * hbar));
    let w = 2.0 * x * kt / hbar;
    let ln2sinh = if x < 1.0 {
        (2.0 * x.sinh()).ln()
    } else {
        x + (-(-2.0 * x).exp()).ln_1p()
    };
    kt * ln2sinh - 0.5 * w * w * a
}

/// Positive root of `coth(x) / x = c`.
fn solve_spread(c: f64) -> f64 {
    let g = |x: f64| (1.0 / x.tanh() / x).ln() - c.ln();
    let dg = |x: f64| -2.0 / (2.0 * x).sinh() - 1.0 / x;
    let (mut lo, mut hi) = (1e-300f64, 1e300f64);
    let mut x = if c > 1.0 { 1.0 / (c - 1.0 / 3.0).sqrt() } else { 1.0 / c };
    for _ in 0..200 {
        let gx = g(x);
        if gx == 0.0 {
            return x;
        }
        if gx > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let mut next = x - gx / dg(x);
        if !(next > lo && next < hi) {
            next = if hi / lo > 4.0 {
                (lo * hi).sqrt()
            } else {
                0.5 * (lo + hi)
            };
        }
        if ((next - x) / x).abs() < 1e-15 {
            return next;
        }
        x = next;
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxOptions {
    pub mixing: f64,
    pub f_tol: f64,
    pub a_tol: f64,
    pub max_iter: usize,
    pub max_inflations: usize,
}

impl Default for RelaxOptions {
    fn default() -> Self {
        Self {
            mixing: 0.3,
            f_tol: 1e-8,
            a_tol: 1e-8,
            max_iter: 500,
            max_inflations: 10,
        }
    }
}

/// Linear constraints `e_k . R = value_k` on orthonormal directions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Clamp {
    directions: Vec<DVec>,
    values: Vec<f64>,
}

impl Clamp {
    pub fn none() -> Self {
        Self::default()
    }

    /// Pin the displacement of one mode.
    pub fn mode(pes: &QuarticPes, basis: Option<&ModeBasis>, mode: usize, value: f64) -> Result<Self> {
        Ok(Self {
            directions: vec![pes.mode_vector(basis, mode)?],
            values: vec![value],
        })
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    fn apply(&self, r: &DVec) -> DVec {
        let mut out = r.clone();
        for (e, &v) in self.directions.iter().zip(&self.values) {
            let c = e.dot(&out);
            out.axpy(v - c, e, 1.0);
        }
        out
    }

    fn project_free(&self, v: &DVec) -> DVec {
        let mut out = v.clone();
        for e in &self.directions {
            let c = e.dot(&out);
            out.axpy(-c, e, 1.0);
        }
        out
    }

    fn projector(&self, n: usize) -> DMat {
        let mut q = DMat::identity(n, n);
        for e in &self.directions {
            q -= e * e.transpose();
        }
        q
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxResult {
    pub r: DVec,
    pub a: DMat,
    pub kappa: DMat,
    pub free_energy: f64,
    /// Square roots of the eigenvalues of the final curvature, ascending.
    pub frequencies: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub force_residual: f64,
    pub a_residual: f64,
}

impl RelaxResult {
    /// Equilibrium Gaussian state with thermal momentum fluctuations.
    pub fn state(&self, temperature: f64, units: &UnitSystem) -> Result<GaussianState> {
        let (_, b) = thermal_fluctuations(&self.kappa, temperature, units)?;
        let n = self.r.len();
        Ok(GaussianState {
            r: self.r.clone(),
            p: DVec::zeros(n),
            a: self.a.clone(),
            b,
            g: DMat::zeros(n, n),
        })
    }
}

/// Starting fluctuations: thermal spread of the bare curvature at `r` with
/// its spectrum folded to positive values, doubled until the ensemble
/// curvature is stable.
fn initial_fluctuations(pes: &QuarticPes, r: &DVec, temperature: f64, units: &UnitSystem) -> Result<DMat> {
    let n = pes.dim();
    let bare = pes.curvature_unchecked(r, &DMat::zeros(n, n));
    let (values, vectors) = sym_eigen(&symmetrize(&bare));
    let top = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = if top > 0.0 { 1e-2 * top } else { 1.0 };
    let folded = DMat::from_fn(n, n, |i, k| vectors[(i, k)] * values[k].abs().max(floor)) * vectors.transpose();
    let (mut a, _) = thermal_fluctuations(&symmetrize(&folded), temperature, units)?;
    for _ in 0..200 {
        if min_eigenvalue(&pes.curvature_unchecked(r, &a)) > 0.0 {
            return Ok(a);
        }
        a *= 2.0;
    }
    Err(Error::NoStableSolution(
        "no fluctuation amplitude stabilizes the curvature".into(),
    ))
}

/// Minimize the free energy over `R` (outside the clamped directions) and
/// `A` by damped self-consistent iteration on `A` and Newton steps on `R`.
pub fn scha_relax(
    pes: &QuarticPes,
    temperature: f64,
    units: &UnitSystem,
    r_init: &DVec,
    clamp: &Clamp,
    a_init: Option<&DMat>,
    opts: &RelaxOptions,
) -> Result<RelaxResult> {
    let n = pes.dim();
    check_len("initial centroid", n, r_init.len())?;
    if !(temperature >= 0.0) {
        return Err(Error::InvalidParameter(format!("negative temperature {temperature}")));
    }
    if !(opts.mixing > 0.0 && opts.mixing <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "mixing must lie in (0, 1], got {}",
            opts.mixing
        )));
    }
    let mut r = clamp.apply(r_init);
    let mut a = match a_init {
        Some(a0) => {
            check_spd("initial fluctuation matrix", a0, n)?;
            a0.clone()
        }
        None => initial_fluctuations(pes, &r, temperature, units)?,
    };
    let q = clamp.projector(n);
    let p = DMat::identity(n, n) - &q;
    let fe = |r: &DVec, a: &DMat| free_energy_parts(pes, r, a, temperature, units);
    let mut lambda = opts.mixing;
    let mut last_a_residual = f64::INFINITY;
    let mut inflations = 0;
    let mut iter = 0;
    loop {
        let kappa = symmetrize(&pes.curvature_unchecked(&r, &a));
        let a_th = match thermal_fluctuations(&kappa, temperature, units) {
            Ok((a_th, _)) => a_th,
            Err(Error::UnstableCurvature { .. }) => {
                if inflations >= opts.max_inflations {
                    return Err(Error::NoStableSolution(format!(
                        "curvature stayed unstable after {inflations} fluctuation inflations"
                    )));
                }
                inflations += 1;
                a *= 2.0;
                iter += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let force = clamp.project_free(&pes.force_unchecked(&r, &a));
        let force_residual = force.norm();
        let a_residual = (&a_th - &a).norm();
        let converged = force_residual < opts.f_tol && a_residual < opts.a_tol;
        if converged || iter >= opts.max_iter {
            let (values, _) = sym_eigen(&kappa);
            return Ok(RelaxResult {
                free_energy: fe(&r, &a).0,
                frequencies: values.iter().map(|v| v.sqrt()).collect(),
                r,
                a,
                kappa,
                converged,
                iterations: iter,
                force_residual,
                a_residual,
            });
        }
        iter += 1;

        // a growing residual means the damped map overshoots
        let overshoot = a_residual > last_a_residual;
        if overshoot {
            lambda *= 0.5;
        }
        last_a_residual = a_residual;

        // fluctuation update with backtracking on the free energy
        let (f0, scale0) = fe(&r, &a);
        let mut lam = lambda;
        loop {
            let trial = symmetrize(&(&a + (&a_th - &a) * lam));
            let stable = min_eigenvalue(&pes.curvature_unchecked(&r, &trial)) > 0.0;
            let ok = stable && fe(&r, &trial).0 <= f0 + 1e-13 * scale0;
            if ok || lam < 1e-9 {
                if ok || stable {
                    a = trial;
                }
                lambda = if ok && !overshoot {
                    (1.25 * lam).min(opts.mixing)
                } else {
                    lam
                };
                break;
            }
            lam *= 0.5;
        }

        // centroid update
        if force_residual > 0.0 && clamp.directions.len() < n {
            let kappa = symmetrize(&pes.curvature_unchecked(&r, &a));
            let force = clamp.project_free(&pes.force_unchecked(&r, &a));
            let h = &q * &kappa * &q + &p;
            let step = match h.clone().cholesky() {
                Some(ch) => ch.solve(&force),
                None => {
                    let top = sym_eigen(&kappa).0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    &force / top.max(f64::MIN_POSITIVE)
                }
            };
            let (f0, scale0) = fe(&r, &a);
            let mut t = 1.0;
            for _ in 0..60 {
                let trial = &r + &step * t;
                if fe(&trial, &a).0 <= f0 + 1e-13 * scale0 {
                    r = clamp.apply(&trial);
                    break;
                }
                t *= 0.5;
            }
        }
    }
}

/// Relax from several starting centroids and keep the lowest converged
/// free energy.
pub fn scha_relax_multistart(
    pes: &QuarticPes,
    temperature: f64,
    units: &UnitSystem,
    starts: &[DVec],
    opts: &RelaxOptions,
) -> Result<RelaxResult> {
    let mut best: Option<RelaxResult> = None;
    let mut last_err = None;
    for r0 in starts {
        match scha_relax(pes, temperature, units, r0, &Clamp::none(), None, opts) {
            Ok(res) if res.converged => {
                if best.as_ref().is_none_or(|b| res.free_energy < b.free_energy) {
                    best = Some(res);
                }
            }
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::NoStableSolution("no starting point converged".into())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FesPoint {
    pub r: f64,
    pub free_energy: f64,
    pub converged: bool,
    pub error: Option<String>,
}

/// Free energy along one mode with everything else relaxed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FesCurve {
    pub mode: usize,
    pub points: Vec<FesPoint>,
}

impl FesCurve {
    pub fn is_complete(&self) -> bool {
        self.points.iter().all(|p| p.error.is_none())
    }

    pub fn all_converged(&self) -> bool {
        self.points.iter().all(|p| p.converged)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "R_mu,F")?;
        for p in &self.points {
            writeln!(w, "{},{}", p.r, p.free_energy)?;
        }
        Ok(())
    }
}

/// Clamped free-energy surface along `mode` on `grid`, warm-starting each
/// point from its neighbour closer to the origin.
pub fn clamped_fes(
    pes: &QuarticPes,
    basis: Option<&ModeBasis>,
    mode: usize,
    grid: &[f64],
    temperature: f64,
    units: &UnitSystem,
    opts: &RelaxOptions,
) -> Result<FesCurve> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty displacement grid".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter(
            "displacement grid must be strictly increasing".into(),
        ));
    }
    let e = pes.mode_vector(basis, mode)?;
    let n = pes.dim();
    let mirror = pes.basis() == crate::pes::Basis::Mode
        && pes.is_even_in(mode)
        && grid
            .iter()
            .zip(grid.iter().rev())
            .all(|(a, b)| (a + b).abs() <= 1e-12 * a.abs().max(1.0));

    let center = (0..grid.len())
        .min_by(|&i, &j| grid[i].abs().total_cmp(&grid[j].abs()))
        .unwrap_or(0);
    let mut points: Vec<Option<FesPoint>> = vec![None; grid.len()];

    let sweep = |indices: Vec<usize>, seed: Option<(DVec, DMat)>, points: &mut Vec<Option<FesPoint>>| {
        let mut warm = seed;
        for k in indices {
            let x = grid[k];
            let clamp = Clamp {
                directions: vec![e.clone()],
                values: vec![x],
            };
            let (r0, a0) = match &warm {
                Some((r, a)) => (r.clone(), Some(a.clone())),
                None => (DVec::zeros(n), None),
            };
            let res = scha_relax(pes, temperature, units, &r0, &clamp, a0.as_ref(), opts);
            points[k] = Some(match res {
                Ok(res) => {
                    let p = FesPoint {
                        r: x,
                        free_energy: res.free_energy,
                        converged: res.converged,
                        error: None,
                    };
                    warm = Some((res.r, res.a));
                    p
                }
                Err(err) => {
                    warm = None;
                    FesPoint {
                        r: x,
                        free_energy: f64::NAN,
                        converged: false,
                        error: Some(err.to_string()),
                    }
                }
            });
        }
        warm
    };

    let right: Vec<usize> = (center..grid.len()).collect();
    let first = {
        let k = center;
        let mut tmp = std::mem::take(&mut points);
        let w = sweep(vec![k], None, &mut tmp);
        points = tmp;
        w
    };
    let mut tmp = std::mem::take(&mut points);
    sweep(right[1..].to_vec(), first.clone(), &mut tmp);
    if mirror {
        for k in 0..center {
            let src = tmp[grid.len() - 1 - k].clone().expect("mirror partner computed");
            tmp[k] = Some(FesPoint { r: grid[k], ..src });
        }
    } else {
        sweep((0..center).rev().collect(), first, &mut tmp);
    }
    Ok(FesCurve {
        mode,
        points: tmp.into_iter().map(|p| p.expect("every grid point visited")).collect(),
    })
}

/// FES curvature at the symmetric point expressed as a frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeFrequency {
    pub omega_sq: f64,
    /// `sqrt(|omega_sq|)`.
    pub omega: f64,
    pub imaginary: bool,
}

impl FeFrequency {
    /// Real frequencies as positive numbers, imaginary ones as negative.
    pub fn signed(&self) -> f64 {
        if self.imaginary {
            -self.omega
        } else {
            self.omega
        }
    }
}

/// Quadratic least-squares fit over the five grid points closest to zero.
pub fn fe_frequency(curve: &FesCurve) -> Result<FeFrequency> {
    let mut pts: Vec<&FesPoint> = curve.points.iter().filter(|p| p.free_energy.is_finite()).collect();
    pts.sort_by(|a, b| a.r.abs().total_cmp(&b.r.abs()));
    pts.truncate(5);
    if pts.len() < 3 {
        return Err(Error::InvalidParameter("need at least three finite FES points".into()));
    }
    let x = DMat::from_fn(pts.len(), 3, |i, c| pts[i].r.powi(c as i32));
    let y = DVec::from_iterator(pts.len(), pts.iter().map(|p| p.free_energy));
    let coef = x
        .svd(true, true)
        .solve(&y, 1e-14)
        .map_err(|e| Error::InvalidParameter(format!("degenerate FES fit: {e}")))?;
    let omega_sq = 2.0 * coef[2];
    Ok(FeFrequency {
        omega_sq,
        omega: omega_sq.abs().sqrt(),
        imaginary: omega_sq < 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Region {
    /// Ferroelectric ground state.
    I,
    /// Paraelectric ground state with a metastable ferroelectric minimum.
    II,
    /// Paraelectric only.
    III,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::I => "I",
            Region::II => "II",
            Region::III => "III",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOptions {
    /// Odd number of FES grid points on `[-extent, extent]`.
    pub n_points: usize,
    /// Half-width of the grid; by default `extent_factor * x0`.
    pub extent: Option<f64>,
    pub extent_factor: f64,
    pub relax: RelaxOptions,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            n_points: 41,
            extent: None,
            extent_factor: 1.6,
            relax: RelaxOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub region: Region,
    /// `F(ferroelectric minimum) - F(0)` when a ferroelectric minimum exists.
    pub delta_f: Option<f64>,
    /// Barrier height seen from the ferroelectric minimum in region II.
    pub metastable_depth: Option<f64>,
    pub x_ferro: Option<f64>,
    pub omega_fe: FeFrequency,
    /// A minimum sits on the grid edge, so the true one lies outside.
    pub boundary_unresolved: bool,
    pub curve: FesCurve,
}

#[derive(Debug, Clone, Copy)]
struct Stationary {
    x: f64,
    f: f64,
    minimum: bool,
    edge: bool,
}

/// Extrema of a sampled curve from sign changes of its forward differences,
/// refined by a parabola through the three nearest points.
fn stationary_points(x: &[f64], f: &[f64]) -> Vec<Stationary> {
    let n = x.len();
    let scale = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let noise = 1e-12 * scale;
    let signs: Vec<(usize, i8)> = f
        .windows(2)
        .enumerate()
        .filter_map(|(k, w)| {
            let d = w[1] - w[0];
            if d.abs() <= noise {
                None
            } else {
                Some((k, if d > 0.0 { 1 } else { -1 }))
            }
        })
        .collect();
    let mut out = Vec::new();
    let refine = |k: usize, minimum: bool| {
        if k == 0 || k + 1 >= n {
            return Stationary {
                x: x[k],
                f: f[k],
                minimum,
                edge: true,
            };
        }
        let h = x[k + 1] - x[k];
        let curv = f[k + 1] - 2.0 * f[k] + f[k - 1];
        let slope = f[k + 1] - f[k - 1];
        if curv == 0.0 {
            return Stationary {
                x: x[k],
                f: f[k],
                minimum,
                edge: false,
            };
        }
        Stationary {
            x: x[k] - 0.5 * h * slope / curv,
            f: f[k] - slope * slope / (8.0 * curv),
            minimum,
            edge: false,
        }
    };
    let Some(&(_, first_s)) = signs.first() else {
        return out;
    };
    out.push(refine(0, first_s > 0));
    for w in signs.windows(2) {
        let ((k1, s1), (k2, s2)) = (w[0], w[1]);
        if s1 == s2 {
            continue;
        }
        let range = (k1 + 1)..=k2;
        let pick = if s1 < 0 {
            range.min_by(|&i, &j| f[i].total_cmp(&f[j]))
        } else {
            range.max_by(|&i, &j| f[i].total_cmp(&f[j]))
        };
        if let Some(k) = pick {
            out.push(refine(k, s1 < 0));
        }
    }
    let &(_, last_s) = signs.last().expect("non-empty");
    out.push(refine(n - 1, last_s < 0));
    out
}

/// Classify the double-well state of `mode` from its clamped FES.
pub fn classify_region(
    pes: &QuarticPes,
    basis: Option<&ModeBasis>,
    mode: usize,
    temperature: f64,
    units: &UnitSystem,
    opts: &ClassifyOptions,
) -> Result<Classification> {
    if opts.n_points < 5 || opts.n_points.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "FES grid needs an odd number of at least 5 points, got {}",
            opts.n_points
        )));
    }
    let extent = match opts.extent {
        Some(l) => l,
        None => match pes.double_well_params(basis, mode) {
            Ok((x0, _)) => opts.extent_factor * x0,
            Err(_) => {
                let (phi, _) = pes.mode_diagonal(basis, mode)?;
                if phi > 0.0 {
                    4.0 * (units.hbar / (2.0 * phi.sqrt())).sqrt()
                } else {
                    1.0
                }
            }
        },
    };
    if !(extent > 0.0 && extent.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "FES extent must be positive, got {extent}"
        )));
    }
    let half = (opts.n_points / 2) as f64;
    let grid: Vec<f64> = (0..opts.n_points).map(|k| extent * (k as f64 - half) / half).collect();
    let curve = clamped_fes(pes, basis, mode, &grid, temperature, units, &opts.relax)?;
    if let Some(p) = curve.points.iter().find(|p| p.error.is_some()) {
        return Err(Error::NoStableSolution(format!(
            "clamped relaxation at R = {} failed: {}",
            p.r,
            p.error.as_deref().unwrap_or("")
        )));
    }
    let fs: Vec<f64> = curve.points.iter().map(|p| p.free_energy).collect();
    let h = grid[1] - grid[0];
    let c = opts.n_points / 2;
    let f0 = fs[c];
    let st = stationary_points(&grid, &fs);
    let para_min = st.iter().any(|s| s.minimum && !s.edge && s.x.abs() < h);
    let ferro = st
        .iter()
        .filter(|s| s.minimum && s.x.abs() >= h)
        .min_by(|a, b| a.f.total_cmp(&b.f))
        .copied();
    let omega_fe = fe_frequency(&curve)?;
    let (region, delta_f, depth, x_ferro, unresolved) = match ferro {
        None => (Region::III, None, None, None, st.iter().any(|s| s.minimum && s.edge)),
        Some(fm) => {
            let df = fm.f - f0;
            if !para_min || df < 0.0 {
                (Region::I, Some(df), None, Some(fm.x), fm.edge)
            } else {
                let barrier = st
                    .iter()
                    .filter(|s| !s.minimum && s.x * fm.x > 0.0 && s.x.abs() < fm.x.abs())
                    .map(|s| s.f)
                    .fold(f64::NEG_INFINITY, f64::max);
                let depth = if barrier.is_finite() {
                    Some(barrier - fm.f)
                } else {
                    None
                };
                (Region::II, Some(df), depth, Some(fm.x), fm.edge)
            }
        }
    };
    Ok(Classification {
        region,
        delta_f,
        metastable_depth: depth,
        x_ferro,
        omega_fe,
        boundary_unresolved: unresolved,
        curve,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    BoundaryUnresolved,
    Unconverged,
    NoStableSolution,
    Failed,
}

impl fmt::Display for CellStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellStatus::Ok => "ok",
            CellStatus::BoundaryUnresolved => "boundary_unresolved",
            CellStatus::Unconverged => "unconverged",
            CellStatus::NoStableSolution => "no_stable_solution",
            CellStatus::Failed => "failed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMapCell {
    pub x0: f64,
    pub v0: f64,
    pub region: Option<Region>,
    /// FE frequency at the symmetric point; negative when imaginary.
    pub omega_fe: f64,
    pub delta_f: Option<f64>,
    pub metastable_depth: Option<f64>,
    pub in_band: bool,
    pub status: CellStatus,
    pub message: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PhaseMapOptions {
    pub classify: ClassifyOptions,
    /// Accepted `(lo, hi)` range of real FE frequencies.
    pub band: Option<(f64, f64)>,
}

/// Cells stored row-major: `cells[iv * x0s.len() + ix]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMap {
    pub x0s: Vec<f64>,
    pub v0s: Vec<f64>,
    pub cells: Vec<PhaseMapCell>,
}

impl PhaseMap {
    pub fn cell(&self, ix: usize, iv: usize) -> &PhaseMapCell {
        &self.cells[iv * self.x0s.len() + ix]
    }

    /// Header `x0,V0,region,omega_fe,delta_F,in_band,error_code`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x0,V0,region,omega_fe,delta_F,in_band,error_code")?;
        for c in &self.cells {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                c.x0,
                c.v0,
                c.region.map_or("none".to_string(), |r| r.to_string()),
                c.omega_fe,
                c.delta_f.unwrap_or(f64::NAN),
                u8::from(c.in_band),
                c.status
            )?;
        }
        Ok(())
    }
}

/// Classify one `(x0, V0)` cell; failures are stored in the cell.
pub fn phase_map_cell(
    template: &QuarticPes,
    basis: Option<&ModeBasis>,
    mode: usize,
    x0: f64,
    v0: f64,
    temperature: f64,
    units: &UnitSystem,
    opts: &PhaseMapOptions,
) -> PhaseMapCell {
    let mut cell = PhaseMapCell {
        x0,
        v0,
        region: None,
        omega_fe: f64::NAN,
        delta_f: None,
        metastable_depth: None,
        in_band: false,
        status: CellStatus::Failed,
        message: None,
    };
    let outcome = template
        .set_double_well(basis, mode, x0, v0)
        .and_then(|pes| classify_region(&pes, basis, mode, temperature, units, &opts.classify));
    match outcome {
        Ok(c) => {
            cell.region = Some(c.region);
            cell.omega_fe = c.omega_fe.signed();
            cell.delta_f = c.delta_f;
            cell.metastable_depth = c.metastable_depth;
            cell.in_band = match opts.band {
                Some((lo, hi)) => !c.omega_fe.imaginary && c.omega_fe.omega >= lo && c.omega_fe.omega <= hi,
                None => false,
            };
            cell.status = if c.boundary_unresolved {
                CellStatus::BoundaryUnresolved
            } else if !c.curve.all_converged() {
                CellStatus::Unconverged
            } else {
                CellStatus::Ok
            };
        }
        Err(e) => {
            cell.status = match e {
                Error::NoStableSolution(_) => CellStatus::NoStableSolution,
                _ => CellStatus::Failed,
            };
            cell.message = Some(e.to_string());
        }
    }
    cell
}

/// Region map over a grid of double-well parameters, cells in parallel.
pub fn phase_map(
    template: &QuarticPes,
    basis: Option<&ModeBasis>,
    mode: usize,
    x0s: &[f64],
    v0s: &[f64],
    temperature: f64,
    units: &UnitSystem,
    opts: &PhaseMapOptions,
) -> PhaseMap {
    let coords: Vec<(f64, f64)> = v0s.iter().flat_map(|&v| x0s.iter().map(move |&x| (x, v))).collect();
    let cells = coords
        .par_iter()
        .map(|&(x0, v0)| phase_map_cell(template, basis, mode, x0, v0, temperature, units, opts))
        .collect();
    PhaseMap {
        x0s: x0s.to_vec(),
        v0s: v0s.to_vec(),
        cells,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    /// Between I and II: the ferroelectric minimum crosses the paraelectric one.
    FerroGround,
    /// Between II and III: the metastable ferroelectric minimum disappears.
    Metastable,
}

/// Bisect in `V0` at fixed `x0` for a region boundary. The two ends must lie
/// on opposite sides.
pub fn locate_boundary(
    template: &QuarticPes,
    basis: Option<&ModeBasis>,
    mode: usize,
    x0: f64,
    (mut lo, mut hi): (f64, f64),
    boundary: Boundary,
    temperature: f64,
    units: &UnitSystem,
    opts: &ClassifyOptions,
    tol: f64,
) -> Result<f64> {
    let deeper_side = |v0: f64| -> Result<bool> {
        let pes = template.set_double_well(basis, mode, x0, v0)?;
        let c = classify_region(&pes, basis, mode, temperature, units, opts)?;
        Ok(match boundary {
            Boundary::FerroGround => c.region == Region::I,
            Boundary::Metastable => c.region != Region::III,
        })
    };
    let (s_lo, s_hi) = (deeper_side(lo)?, deeper_side(hi)?);
    if s_lo == s_hi {
        return Err(Error::InvalidParameter(format!(
            "V0 bracket [{lo}, {hi}] does not straddle the boundary"
        )));
    }
    while (hi - lo).abs() > tol {
        let mid = 0.5 * (lo + hi);
        if deeper_side(mid)? == s_hi {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
