//! Acceptance criteria 1-10. Every test reports one line on stdout, visible
//! with or without `--nocapture`, then asserts.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tdscha_core::dynamics::{
    force_channel_vectors, integrate, integrate_frozen_a, Drive, IntegrateOptions, Pulse, Trajectory,
};
use tdscha_core::minimal::{
    minimal_model_integrate, quench_closed_form, MinimalModelParams, MinimalOptions, QuenchCoefficient,
};
use tdscha_core::scha::{
    classify_region, locate_boundary, phase_map, scha_relax_multistart, Boundary, ClassifyOptions, PhaseMapOptions,
    Region, RelaxOptions,
};
use tdscha_core::state::{state_energy, thermal_state};
use tdscha_core::toy::{toy_initial_state, toy_surface, ToyModelParams, FE, IR};
use tdscha_core::{Basis, DMat, DVec, ModeBasis, QuarticPes, SparseSymTensor, UnitSystem};
use tdscha_sim::summary::{summarize, Summary};

fn report(id: &str, pass: bool, detail: &str) {
    let line = format!("\ncriterion {id}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {id} failed: {detail}");
}

// ---------------------------------------------------------------- criterion 1

fn random_model(rng: &mut ChaCha8Rng, n: usize) -> QuarticPes {
    let mut phi = Vec::new();
    let mut chi = Vec::new();
    let mut psi = Vec::new();
    let m = DMat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let spd = &m * m.transpose() / n as f64 + DMat::identity(n, n) * 0.5;
    for i in 0..n {
        for j in i..n {
            phi.push((vec![i, j], spd[(i, j)]));
            for k in j..n {
                if rng.random_bool(0.5) {
                    chi.push((vec![i, j, k], rng.random_range(-0.5..0.5)));
                }
                for l in k..n {
                    if i == l {
                        psi.push((vec![i, j, k, l], rng.random_range(0.5..1.5)));
                    } else if rng.random_bool(0.5) {
                        psi.push((vec![i, j, k, l], rng.random_range(-0.2..0.2)));
                    }
                }
            }
        }
    }
    let tensor = |order, e: &Vec<(Vec<usize>, f64)>| {
        SparseSymTensor::from_entries(order, n, e.iter().map(|(i, v)| (i.as_slice(), *v))).unwrap()
    };
    QuarticPes::new(
        Basis::Cartesian,
        rng.random_range(-1.0..1.0),
        tensor(2, &phi),
        tensor(3, &chi),
        tensor(4, &psi),
    )
    .unwrap()
}

fn dense(t: &SparseSymTensor, n: usize) -> Vec<f64> {
    let order = t.order();
    let mut out = vec![0.0; n.pow(order as u32)];
    for (idx, v) in t.permutations() {
        let flat = idx[..order].iter().fold(0, |acc, &i| acc * n + i);
        out[flat] = *v;
    }
    out
}

/// Running sums of `x - reference` for a vector of observables.
struct Moments {
    reference: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl Moments {
    fn new(reference: Vec<f64>) -> Self {
        let k = reference.len();
        Self {
            reference,
            s1: vec![0.0; k],
            s2: vec![0.0; k],
        }
    }

    fn add(&mut self, k: usize, x: f64) {
        let d = x - self.reference[k];
        self.s1[k] += d;
        self.s2[k] += d * d;
    }

    /// Deviation of each sample mean from its reference in standard errors.
    fn z(&self, samples: usize) -> Vec<f64> {
        let n = samples as f64;
        self.s1
            .iter()
            .zip(&self.s2)
            .map(|(s1, s2)| {
                let mean = s1 / n;
                let var = (s2 / n - mean * mean) * n / (n - 1.0);
                if var <= 0.0 {
                    if mean.abs() < 1e-12 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    mean / (var / n).sqrt()
                }
            })
            .collect()
    }
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

#[test]
fn criterion_01_wick_matches_monte_carlo() {
    let start = Instant::now();
    let samples = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_501);
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    let mut failures = Vec::new();
    for model in 0..50 {
        let n = rng.random_range(1..=8usize);
        let pes = random_model(&mut rng, n);
        let r = DVec::from_fn(n, |_, _| rng.random_range(-0.8..0.8));
        let m = DMat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let a = (&m * m.transpose() / n as f64 + DMat::identity(n, n) * 0.2) * 0.3;
        let wick = pes.ensemble(&r, &a).unwrap();
        let l = a.clone().cholesky().unwrap().l();
        let (phi, chi, psi) = (dense(pes.phi(), n), dense(pes.chi(), n), dense(pes.psi(), n));
        let upper: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
        let mut mv = Moments::new(vec![wick.potential]);
        let mut mf = Moments::new(wick.force.iter().copied().collect());
        let mut mk = Moments::new(upper.iter().map(|&(i, j)| wick.curvature[(i, j)]).collect());
        let mut z = vec![0.0; n];
        let mut u = vec![0.0; n];
        let mut c = vec![0.0; n * n];
        let mut q = vec![0.0; n * n];
        for _ in 0..samples {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            for i in 0..n {
                u[i] = r[i] + (0..=i).map(|k| l[(i, k)] * z[k]).sum::<f64>();
            }
            for ij in 0..n * n {
                let row = &chi[ij * n..(ij + 1) * n];
                c[ij] = row.iter().zip(&u).map(|(x, y)| x * y).sum();
                let block = &psi[ij * n * n..(ij + 1) * n * n];
                let mut s = 0.0;
                for k in 0..n {
                    let row = &block[k * n..(k + 1) * n];
                    s += u[k] * row.iter().zip(&u).map(|(x, y)| x * y).sum::<f64>();
                }
                q[ij] = s;
            }
            let mut v = pes.v_ref();
            for i in 0..n {
                let (mut g_phi, mut g_c, mut g_q) = (0.0, 0.0, 0.0);
                for j in 0..n {
                    g_phi += phi[i * n + j] * u[j];
                    g_c += c[i * n + j] * u[j];
                    g_q += q[i * n + j] * u[j];
                }
                v += u[i] * (0.5 * g_phi + g_c / 6.0 + g_q / 24.0);
                mf.add(i, -(g_phi + 0.5 * g_c + g_q / 6.0));
            }
            mv.add(0, v);
            for (k, &(i, j)) in upper.iter().enumerate() {
                mk.add(k, phi[i * n + j] + c[i * n + j] + 0.5 * q[i * n + j]);
            }
        }
        let zv = mv.z(samples)[0].abs();
        let zf = rms(&mf.z(samples));
        let zk = rms(&mk.z(samples));
        worst = (worst.0.max(zv), worst.1.max(zf), worst.2.max(zk));
        if zv > 3.0 || zf > 3.0 || zk > 3.0 {
            failures.push(format!(
                "model {model} (n = {n}): |z_V| {zv:.2}, rms z_F {zf:.2}, rms z_K {zk:.2}"
            ));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "1",
        failures.is_empty() && secs < 300.0,
        &format!(
            "50 models, 1e6 samples each; worst |z_V| {:.2}, rms z_F {:.2}, rms z_K {:.2}; {secs:.0} s {}",
            worst.0,
            worst.1,
            worst.2,
            failures.join("; ")
        ),
    );
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn criterion_02_harmonic_exactness() {
    let units = UnitSystem::natural();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = DMat::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
    let q = m.qr().q();
    let w = [1.0, 1.5, 2.0];
    let kappa = q.transpose() * DMat::from_diagonal(&DVec::from_iterator(3, w.iter().map(|x| x * x))) * &q;
    let kappa = (&kappa + kappa.transpose()) * 0.5;
    let pes = QuarticPes::harmonic(&kappa, Basis::Cartesian).unwrap();
    let basis = ModeBasis::from_curvature(&kappa).unwrap();
    let mut s0 = thermal_state(&kappa, 0.4, &units).unwrap();
    s0.r = DVec::from_vec(vec![0.3, -0.2, 0.1]);
    s0.p = DVec::from_vec(vec![0.0, 0.1, 0.05]);
    let opts = IntegrateOptions {
        rtol: 1e-11,
        atol: 1e-13,
        stride: 1.0,
        snapshot_every: 100,
        ..Default::default()
    };
    let tr = integrate(&s0, &pes, None, &basis, (0.0, 1e4), &opts).unwrap();
    let e0 = state_energy(&s0, &pes).unwrap().total;
    let e = basis.eigvecs();
    let (q0, p0) = (e * &s0.r, e * &s0.p);
    let mut de: f64 = 0.0;
    let mut dr: f64 = 0.0;
    for rec in &tr.records {
        de = de.max((rec.energy.total - e0).abs() / e0.abs());
        for mu in 0..3 {
            let wm = basis.freqs()[mu];
            let expect = q0[mu] * (wm * rec.t).cos() + p0[mu] / wm * (wm * rec.t).sin();
            dr = dr.max((rec.r_modes[mu] - expect).abs());
        }
    }
    let mut dm: f64 = 0.0;
    for snap in &tr.snapshots {
        let s = snap.to_state().unwrap();
        dm = dm
            .max((&s.a - &s0.a).amax())
            .max((&s.b - &s0.b).amax())
            .max((&s.g - &s0.g).amax());
    }
    let f = &tr.final_state;
    dm = dm
        .max((&f.a - &s0.a).amax())
        .max((&f.b - &s0.b).amax())
        .max((&f.g - &s0.g).amax());
    report(
        "2",
        de < 1e-8 && dm < 1e-10 && dr < 1e-7 && tr.final_time == 1e4,
        &format!("over 1e4 time units: energy {de:.1e}, A/B/Gamma {dm:.1e}, centroid {dr:.1e}"),
    );
}

// ------------------------------------------------------- toy-model runs (3, 8, 9)

struct ToyRun {
    label: String,
    traj: Trajectory,
    x0: f64,
    hbar: f64,
}

fn toy_run(label: &str, p: &ToyModelParams, field: f64, t_end_fs: f64, frozen: bool, snapshots: bool) -> ToyRun {
    let u = UnitSystem::physical();
    let (pes, basis) = toy_surface(p).unwrap();
    let s0 = toy_initial_state(&pes, 0.0, &u, p.seed_fe).unwrap();
    let pulse = Pulse::along_x(field * u.field_to_force, u.thz(16.0), u.fs(150.0), u.fs(600.0), 0.0).unwrap();
    let drive = Drive::new(pulse, &basis).unwrap();
    let opts = IntegrateOptions {
        stride: u.fs(10.0),
        focus_mode: Some(FE),
        snapshot_every: usize::from(snapshots),
        ..Default::default()
    };
    let span = (0.0, u.fs(t_end_fs));
    let traj = if frozen {
        integrate_frozen_a(&s0, &pes, Some(&drive), &basis, span, &opts)
    } else {
        integrate(&s0, &pes, Some(&drive), &basis, span, &opts)
    }
    .unwrap();
    ToyRun {
        label: label.into(),
        traj,
        x0: p.x0,
        hbar: u.hbar,
    }
}

impl ToyRun {
    fn summary(&self) -> Summary {
        summarize(&self.traj, FE, Some(IR), self.x0, UnitSystem::physical().fs(1000.0))
    }
}

/// Pulse at 0.6 ps; symmetry breaking is judged within the following 30 ps.
const WINDOW_FS: f64 = 30_600.0;
const LONG_FS: f64 = 60_600.0;

struct Mechanism {
    bracket: (f64, f64),
    bisections: Vec<(f64, bool)>,
    above: Vec<ToyRun>,
    frozen: ToyRun,
    no_chi: ToyRun,
    runs: Vec<ToyRun>,
    secs: f64,
}

fn mechanism() -> &'static Mechanism {
    static CELL: OnceLock<Mechanism> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let p = ToyModelParams::standard(&UnitSystem::physical());
        let mut runs = Vec::new();
        let mut bisections = Vec::new();
        let mut broke = |e: f64, runs: &mut Vec<ToyRun>| {
            let r = toy_run(&format!("field {e:.1}"), &p, e, WINDOW_FS, false, false);
            let t = r.summary().transition;
            bisections.push((e, t));
            runs.push(r);
            t
        };
        let (mut lo, mut hi) = (500.0, 2000.0);
        let ends = (broke(lo, &mut runs), broke(hi, &mut runs));
        if !ends.0 && ends.1 {
            while (hi - lo) / hi > 0.05 {
                let mid = 0.5 * (lo + hi);
                if broke(mid, &mut runs) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
        }
        let above = vec![
            toy_run(&format!("field {hi:.1} long"), &p, hi, LONG_FS, false, false),
            toy_run("field 2000 long", &p, 2000.0, LONG_FS, false, false),
        ];
        let frozen = toy_run("frozen A, 4000", &p, 4000.0, WINDOW_FS, true, false);
        let q = ToyModelParams {
            chi_fe: 0.0,
            fe_band: None,
            ..p.clone()
        };
        let no_chi = toy_run("chi_fe = 0, 4000", &q, 4000.0, WINDOW_FS, false, false);
        Mechanism {
            bracket: (lo, hi),
            bisections,
            above,
            frozen,
            no_chi,
            runs,
            secs: start.elapsed().as_secs_f64(),
        }
    })
}

fn region_three() -> &'static (Region, ToyRun) {
    static CELL: OnceLock<(Region, ToyRun)> = OnceLock::new();
    CELL.get_or_init(|| {
        let u = UnitSystem::physical();
        let mut p = ToyModelParams::standard(&u);
        p.x0 = 1.3 / u.length_in_angstrom_sqrt_amu();
        p.v0 = u.mev(2.5);
        p.fe_band = None;
        let (pes, basis) = toy_surface(&p).unwrap();
        let c = classify_region(&pes, Some(&basis), FE, 0.0, &u, &ClassifyOptions::default()).unwrap();
        (
            c.region,
            toy_run("region III, 2000 long", &p, 2000.0, LONG_FS, false, false),
        )
    })
}

fn closure_run() -> &'static (ToyRun, QuarticPes) {
    static CELL: OnceLock<(ToyRun, QuarticPes)> = OnceLock::new();
    CELL.get_or_init(|| {
        let p = ToyModelParams::standard(&UnitSystem::physical());
        let (pes, _) = toy_surface(&p).unwrap();
        (toy_run("field 2000, snapshots", &p, 2000.0, 10_000.0, false, true), pes)
    })
}

fn all_toy_runs() -> Vec<&'static ToyRun> {
    let m = mechanism();
    let mut v: Vec<&ToyRun> = m.runs.iter().chain(&m.above).collect();
    v.extend([&m.frozen, &m.no_chi, &region_three().1, &closure_run().0]);
    v
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn criterion_03_heisenberg_bound_holds_throughout() {
    let mut checked = 0usize;
    let mut worst = f64::INFINITY;
    let mut bad = Vec::new();
    let mut check = |label: &str, traj: &Trajectory, hbar: f64| {
        let bound = 0.25 * hbar * hbar * (1.0 - 1e-6);
        for rec in &traj.records {
            checked += 1;
            worst = worst.min(rec.uncertainty_min / (0.25 * hbar * hbar));
            if rec.uncertainty_min.is_nan() || rec.uncertainty_min < bound {
                bad.push(format!("{label} at t = {}", rec.t));
                break;
            }
        }
    };

    // thermal anharmonic random model, strong momentum kick
    let units = UnitSystem::natural();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pes = random_model(&mut rng, 4);
    let mut s0 = thermal_state(&pes.phi_dense(), 0.3, &units).unwrap();
    s0.p = DVec::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
    let opts = IntegrateOptions {
        stride: 0.1,
        ..Default::default()
    };
    let tr = integrate(&s0, &pes, None, &ModeBasis::identity(4), (0.0, 200.0), &opts).unwrap();
    check("random model", &tr, units.hbar);

    for run in all_toy_runs() {
        check(&run.label, &run.traj, run.hbar);
    }
    report(
        "3",
        bad.is_empty() && checked > 0,
        &format!("{checked} logged steps over every toy trajectory and a random model; min product / (hbar^2/4) = {worst:.6} {}", bad.join(", ")),
    );
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn criterion_04_minimal_model_matches_closed_form() {
    let start = Instant::now();
    let sets = [
        (0.5, 1.0, 2.0),
        (0.5, 2.0, 5.0),
        (1.0, 5.0, 2.0),
        (1.0, 10.0, 5.0),
        (0.3, 0.5, 10.0),
        (0.7, 3.0, 3.0),
        (1.5, 20.0, 1.0),
        (2.0, 40.0, 1.0),
        (0.4, 0.5, 4.0),
        (1.2, 10.0, 0.8),
        (0.8, 4.0, 6.0),
        (0.6, 1.5, 1.5),
    ];
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    for &(w, psi, tau) in &sets {
        let a_eq = 0.5 / w;
        let phi: f64 = w * w - psi / (4.0 * w);
        assert!(phi < 0.0, "set ({w}, {psi}, {tau}) has no double well");
        let x0 = (-6.0 * phi / psi).sqrt();
        let p = MinimalModelParams {
            omega_fe: w,
            psi_fe: psi,
            a_eq,
            alpha: 0.1 * x0,
            tau,
        };
        for coefficient in [QuenchCoefficient::Full, QuenchCoefficient::Equilibrium] {
            let opts = MinimalOptions {
                stride: tau / 50.0,
                coefficient,
                ..Default::default()
            };
            let sol = minimal_model_integrate(&p, p.exponential_path(), (-15.0 * tau, 0.0), &opts).unwrap();
            let mut err: f64 = 0.0;
            for (t, a) in sol.times.iter().zip(&sol.a_tilde) {
                if *t >= -8.0 * tau {
                    let cf = quench_closed_form(&p, *t) - a_eq;
                    err = err.max(((a - cf) / cf).abs());
                }
            }
            worst = worst.max(err);
            if err.is_nan() || err >= 0.01 {
                bad.push(format!("({w}, {psi}, {tau}, {coefficient:?}): {err:.2e}"));
            }
        }
    }
    report(
        "4",
        bad.is_empty(),
        &format!(
            "{} parameter sets x 2 coefficients, worst relative error {worst:.2e}, {:.2} s {}",
            sets.len(),
            start.elapsed().as_secs_f64(),
            bad.join(", ")
        ),
    );
}

// ---------------------------------------------------------------- criterion 5

#[test]
fn criterion_05_double_well_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = DMat::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
    let kappa = &m * m.transpose() + DMat::identity(3, 3);
    let rotated = QuarticPes::harmonic(&kappa, Basis::Cartesian).unwrap();
    let basis = ModeBasis::from_curvature(&kappa).unwrap();
    let flat = QuarticPes::zeros(1, Basis::Mode);
    let mut worst: f64 = 0.0;
    let mut worst_rotated: f64 = 0.0;
    let mut points = 0;
    for i in 0..10 {
        let x0 = 0.05 * 400f64.powf(i as f64 / 9.0);
        for j in 0..10 {
            let v0 = 1e-4 * 5e5f64.powf(j as f64 / 9.0);
            let (x, v) = flat
                .set_double_well(None, 0, x0, v0)
                .unwrap()
                .double_well_params(None, 0)
                .unwrap();
            worst = worst.max(((x - x0) / x0).abs()).max(((v - v0) / v0).abs());
            points += 1;
        }
    }
    // projected read-back loses eps * |kappa| / |phi| relative, so the rotated
    // surface is swept over wells no softer than the background allows
    for i in 0..10 {
        let x0 = 0.2 * 25f64.powf(i as f64 / 9.0);
        for j in 0..10 {
            let v0 = 1e-2 * 1e3f64.powf(j as f64 / 9.0);
            let mode = (i + j) % 3;
            let (x, v) = rotated
                .set_double_well(Some(&basis), mode, x0, v0)
                .unwrap()
                .double_well_params(Some(&basis), mode)
                .unwrap();
            worst_rotated = worst_rotated.max(((x - x0) / x0).abs()).max(((v - v0) / v0).abs());
        }
    }
    report(
        "5",
        worst < 1e-10 && worst_rotated < 1e-10,
        &format!("{points} (x0, V0) points, worst relative error {worst:.1e}; rotated 3-D surface {worst_rotated:.1e}"),
    );
}

// ---------------------------------------------------------------- criterion 6

fn f_1d(phi: f64, psi: f64, hbar: f64, r: f64, a: f64) -> f64 {
    0.5 * phi * (r * r + a) + psi / 24.0 * (r.powi(4) + 6.0 * r * r * a + 3.0 * a * a) + hbar * hbar / (8.0 * a)
}

/// Exhaustive search of the zero-temperature free energy on a shrinking
/// (R, ln a) grid.
fn grid_minimum(phi: f64, psi: f64, hbar: f64) -> (f64, f64, f64) {
    let x0 = (-6.0 * phi / psi).sqrt();
    let (mut r_lo, mut r_hi) = (0.0, 2.0 * x0);
    let (mut l_lo, mut l_hi) = ((1e-7f64).ln(), (100.0f64).ln());
    let n = 81;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for _ in 0..40 {
        for i in 0..n {
            let r = r_lo + (r_hi - r_lo) * i as f64 / (n - 1) as f64;
            for j in 0..n {
                let a = (l_lo + (l_hi - l_lo) * j as f64 / (n - 1) as f64).exp();
                let f = f_1d(phi, psi, hbar, r, a);
                if f < best.0 {
                    best = (f, r, a);
                }
            }
        }
        let (dr, dl) = (
            4.0 * (r_hi - r_lo) / (n - 1) as f64,
            4.0 * (l_hi - l_lo) / (n - 1) as f64,
        );
        r_lo = (best.1 - dr).max(0.0);
        r_hi = best.1 + dr;
        l_lo = best.2.ln() - dl;
        l_hi = best.2.ln() + dl;
    }
    best
}

#[test]
fn criterion_06_scha_matches_grid_search() {
    let (phi, psi) = (-3.0f64, 18.0);
    let x0 = (-6.0 * phi / psi).sqrt();
    let opts = RelaxOptions {
        f_tol: 1e-13,
        a_tol: 1e-13,
        max_iter: 20_000,
        ..RelaxOptions::default()
    };
    let mut pes = QuarticPes::zeros(1, Basis::Mode);
    pes.phi_mut().set(&[0, 0], phi).unwrap();
    pes.psi_mut().set(&[0, 0, 0, 0], psi).unwrap();
    let mut worst = (0.0f64, 0.0f64);
    let mut centroids = Vec::new();
    for &hbar in &[0.01, 0.1, 0.5, 1.0, 3.0] {
        let units = UnitSystem {
            hbar,
            ..UnitSystem::natural()
        };
        let starts = [DVec::zeros(1), DVec::from_element(1, x0)];
        let res = scha_relax_multistart(&pes, 0.0, &units, &starts, &opts).unwrap();
        let (f, r, a) = grid_minimum(phi, psi, hbar);
        worst.0 = worst.0.max((res.free_energy - f).abs());
        worst.1 = worst.1.max((res.r[0].abs() - r).abs()).max((res.a[(0, 0)] - a).abs());
        centroids.push((hbar, res.r[0].abs()));
    }
    let classical = centroids.first().unwrap().1 > 0.9 * x0;
    let quantum = centroids.last().unwrap().1 < 1e-6;
    let listing: Vec<String> = centroids.iter().map(|(h, r)| format!("hbar {h}: |R| {r:.4}")).collect();
    report(
        "6",
        worst.0 < 1e-6 && worst.1 < 1e-4 && classical && quantum,
        &format!(
            "F error {:.1e}, minimizer error {:.1e}; {}",
            worst.0,
            worst.1,
            listing.join(", ")
        ),
    );
}

// ---------------------------------------------------------------- criterion 7

fn rank(r: Option<Region>) -> Option<u8> {
    r.map(|r| match r {
        Region::I => 0,
        Region::II => 1,
        Region::III => 2,
    })
}

fn contiguous(grid: &[Vec<Option<u8>>], value: u8) -> bool {
    let (nv, nx) = (grid.len(), grid[0].len());
    let cells: BTreeSet<(usize, usize)> = (0..nv)
        .flat_map(|i| (0..nx).map(move |j| (i, j)))
        .filter(|&(i, j)| grid[i][j] == Some(value))
        .collect();
    let Some(&first) = cells.iter().next() else {
        return true;
    };
    let mut seen = BTreeSet::from([first]);
    let mut stack = vec![first];
    while let Some((i, j)) = stack.pop() {
        let nbrs = [(i.wrapping_sub(1), j), (i + 1, j), (i, j.wrapping_sub(1)), (i, j + 1)];
        for n in nbrs {
            if cells.contains(&n) && seen.insert(n) {
                stack.push(n);
            }
        }
    }
    seen.len() == cells.len()
}

#[test]
fn criterion_07_phase_map_structure() {
    let start = Instant::now();
    let u = UnitSystem::physical();
    let l = u.length_in_angstrom_sqrt_amu();
    let p = ToyModelParams::standard(&u);
    let (pes, basis) = toy_surface(&p).unwrap();
    let x0_lab = [0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0, 2.2];
    let v0_lab = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 12.0];
    let x0s: Vec<f64> = x0_lab.iter().map(|x| x / l).collect();
    let v0s: Vec<f64> = v0_lab.iter().map(|v| u.mev(*v)).collect();
    let classify = ClassifyOptions {
        relax: RelaxOptions {
            max_iter: 2000,
            ..RelaxOptions::default()
        },
        ..ClassifyOptions::default()
    };
    let opts = PhaseMapOptions {
        classify,
        band: p.fe_band,
    };
    let map = phase_map(&pes, Some(&basis), FE, &x0s, &v0s, 0.0, &u, &opts);
    let grid: Vec<Vec<Option<u8>>> = (0..v0s.len())
        .map(|iv| (0..x0s.len()).map(|ix| rank(map.cell(ix, iv).region)).collect())
        .collect();
    let mut problems = Vec::new();
    if grid.iter().flatten().any(|c| c.is_none()) {
        problems.push("unclassified cells".to_string());
    }
    for ix in 0..x0s.len() {
        for iv in 1..v0s.len() {
            if let (Some(a), Some(b)) = (grid[iv - 1][ix], grid[iv][ix]) {
                if b > a {
                    problems.push(format!(
                        "order breaks at x0 {} between V0 {} and {}",
                        x0_lab[ix],
                        v0_lab[iv - 1],
                        v0_lab[iv]
                    ));
                }
            }
        }
    }
    for v in [0, 2] {
        if !contiguous(&grid, v) {
            problems.push(format!("region rank {v} is not contiguous"));
        }
    }
    let (nx, nv) = (x0s.len(), v0s.len());
    if grid[nv - 1][nx - 1] != Some(0) {
        problems.push("deepest corner is not region I".into());
    }
    if grid[0][0] != Some(2) {
        problems.push("shallowest corner is not region III".into());
    }
    for v in 0..3 {
        if !grid.iter().flatten().any(|c| *c == Some(v)) {
            problems.push(format!("region rank {v} missing"));
        }
    }

    // Both boundaries by bisection wherever a column crosses from III to I on
    // the grid; region II is the band between them.
    let mut bands = Vec::new();
    for ix in 0..nx {
        let Some(iv) = (1..nv).find(|&iv| grid[iv - 1][ix] == Some(2) && grid[iv][ix] != Some(2)) else {
            continue;
        };
        let (lo, hi) = (v0s[iv - 1], v0s[iv]);
        let tol = 1e-3 * (hi - lo);
        let metastable = match locate_boundary(
            &pes,
            Some(&basis),
            FE,
            x0s[ix],
            (lo, hi),
            Boundary::Metastable,
            0.0,
            &u,
            &classify,
            tol,
        ) {
            Ok(v) if v > lo && v < hi => v,
            other => {
                problems.push(format!("x0 {}: II/III search gave {other:?}", x0_lab[ix]));
                continue;
            }
        };
        let above = pes
            .set_double_well(Some(&basis), FE, x0s[ix], metastable + tol)
            .unwrap();
        let c = classify_region(&above, Some(&basis), FE, 0.0, &u, &classify).unwrap();
        if c.region != Region::II || !c.metastable_depth.is_some_and(|d| d < 1e-2 * metastable) {
            problems.push(format!(
                "x0 {}: just above II/III region {:?} depth {:?}",
                x0_lab[ix], c.region, c.metastable_depth
            ));
        }
        let Some(jv) = (iv..nv).find(|&jv| grid[jv][ix] == Some(0)) else {
            continue;
        };
        let lo_f = if grid[jv - 1][ix] == Some(1) {
            v0s[jv - 1]
        } else {
            metastable + tol
        };
        match locate_boundary(
            &pes,
            Some(&basis),
            FE,
            x0s[ix],
            (lo_f, v0s[jv]),
            Boundary::FerroGround,
            0.0,
            &u,
            &classify,
            tol,
        ) {
            Ok(ferro) if ferro > metastable => bands.push((x0_lab[ix], metastable, ferro)),
            other => problems.push(format!(
                "x0 {}: I/II search gave {other:?} against II/III at {metastable}",
                x0_lab[ix]
            )),
        }
    }
    if bands.len() < 2 {
        problems.push("fewer than two columns resolve the region II band".into());
    }
    for w in bands.windows(2) {
        if w[1].1 > w[0].1 || w[1].2 > w[0].2 {
            problems.push(format!("boundaries rise between x0 {} and {}", w[0].0, w[1].0));
        }
    }
    let mev = |v: f64| v / u.mev(1.0);
    let band_text: Vec<String> = bands
        .iter()
        .map(|(x, m, f)| format!("x0 {x}: II on ({:.3}, {:.3}) meV", mev(*m), mev(*f)))
        .collect();
    let rows: Vec<String> = grid
        .iter()
        .rev()
        .map(|row| {
            row.iter()
                .map(|c| c.map_or('?', |r| ['I', '2', '3'][r as usize]))
                .collect()
        })
        .collect();
    report(
        "7",
        problems.is_empty(),
        &format!(
            "{}x{} grid (rows V0 high to low, I/2/3) {}; {}; {:.0} s {}",
            nx,
            nv,
            rows.join("|"),
            band_text.join(", "),
            start.elapsed().as_secs_f64(),
            problems.join("; ")
        ),
    );
}

// ---------------------------------------------------------------- criterion 8

/// Sign-consistent self-trapping after the transition, with the FE
/// fluctuation quenched below its initial value.
fn trapped(run: &ToyRun) -> Result<String, String> {
    let s = run.summary();
    let tc = s.transition_time.ok_or("no transition")?;
    let u = UnitSystem::physical();
    let recs: Vec<_> = run.traj.records.iter().filter(|r| r.t > tc + u.fs(5000.0)).collect();
    if recs.is_empty() {
        return Err("run ends before the trapping window".into());
    }
    let mean = recs.iter().map(|r| r.r_modes[FE]).sum::<f64>() / recs.len() as f64;
    let one_sign = recs.iter().all(|r| r.r_modes[FE] * mean > 0.0);
    let a0 = run.traj.records[0].a_modes[FE];
    let a_mean = recs.iter().map(|r| r.a_modes[FE]).sum::<f64>() / recs.len() as f64;
    let msg = format!(
        "{}: t_c {:.1} ps, <R>/x0 {:+.2}, <A>/A0 {:.2}",
        run.label,
        tc / 1000.0,
        mean / run.x0,
        a_mean / a0
    );
    if one_sign && mean.abs() > 0.5 * run.x0 && a_mean < a0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

#[test]
fn criterion_08a_field_threshold_and_self_trapping() {
    let m = mechanism();
    let (lo, hi) = m.bracket;
    let mut problems = Vec::new();
    let ends = (m.bisections[0], m.bisections[1]);
    if ends.0 .1 || !ends.1 .1 {
        problems.push(format!(
            "500 kV/cm breaks: {}, 2000 kV/cm breaks: {}",
            ends.0 .1, ends.1 .1
        ));
    }
    if (hi - lo) / hi > 0.05 {
        problems.push("bracket wider than 5%".into());
    }
    for &(e, broke) in &m.bisections {
        if broke != (e >= hi) {
            problems.push(format!("non-monotone response at {e:.1} kV/cm"));
        }
    }
    let mut details = Vec::new();
    for run in &m.above {
        match trapped(run) {
            Ok(s) => details.push(s),
            Err(s) => problems.push(s),
        }
    }
    report(
        "8a",
        problems.is_empty(),
        &format!(
            "threshold in [{lo:.1}, {hi:.1}] kV/cm after {} runs; {}; mechanism runs {:.0} s {}",
            m.bisections.len(),
            details.join("; "),
            m.secs,
            problems.join("; ")
        ),
    );
}

#[test]
fn criterion_08b_quantum_channel_dominates_onset() {
    let m = mechanism();
    let mut problems = Vec::new();
    let mut details = Vec::new();
    for run in &m.above {
        let Some(tc) = run.summary().transition_time else {
            problems.push(format!("{}: no transition", run.label));
            continue;
        };
        let recs = &run.traj.records;
        let Some(i0) = recs.iter().position(|r| r.r_modes[FE].abs() > 1e-2 * run.x0) else {
            continue;
        };
        let onset: Vec<_> = recs[i0..].iter().take_while(|r| r.t <= tc).collect();
        let (mut q, mut ha, mut wins) = (0.0, 0.0, 0usize);
        for r in &onset {
            let c = r.channels.expect("focus channels logged");
            q += c.quantum.abs();
            ha += (c.harmonic + c.anharmonic).abs();
            wins += usize::from(c.quantum.abs() > (c.harmonic + c.anharmonic).abs());
        }
        let k = onset.len() as f64;
        let share = wins as f64 / k;
        details.push(format!(
            "{}: <|q|>/<|h+a|> {:.2}, q dominant {:.0}% of onset",
            run.label,
            q / ha,
            100.0 * share
        ));
        if !(q > ha && share > 0.5) {
            problems.push(run.label.clone());
        }
    }
    report(
        "8b",
        problems.is_empty() && !details.is_empty(),
        &format!("{} {}", details.join("; "), problems.join("; ")),
    );
}

fn control(id: &str, run: &ToyRun) {
    let s = run.summary();
    let peak = run.traj.records.iter().map(|r| r.r_modes[FE].abs()).fold(0.0, f64::max);
    report(
        id,
        !s.transition,
        &format!(
            "{}: transition {}, max |R_FE|/x0 {:.1e}",
            run.label,
            s.transition,
            peak / run.x0
        ),
    );
}

#[test]
fn criterion_08c_frozen_fluctuations_prevent_transition() {
    control("8c", &mechanism().frozen);
}

#[test]
fn criterion_08d_no_fe_cubic_coupling_prevents_transition() {
    control("8d", &mechanism().no_chi);
}

#[test]
fn criterion_08e_region_three_relaxes_back() {
    let (region, run) = region_three();
    let s = run.summary();
    let quarter: Vec<String> = run
        .traj
        .records
        .chunks(1000)
        .map(|c| {
            format!(
                "{:.2}",
                c.iter().map(|r| r.r_modes[FE].abs()).fold(0.0, f64::max) / run.x0
            )
        })
        .collect();
    report(
        "8e",
        *region == Region::III && s.transition && s.relax_back_time.is_some(),
        &format!(
            "x0 1.3, V0 2.5 meV ({region:?}), 2000 kV/cm, 60 ps: transition at {:?} fs, relax back at {:?} fs; max |R_FE|/x0 per 10 ps {}",
            s.transition_time,
            s.relax_back_time,
            quarter.join(" ")
        ),
    );
}

// ---------------------------------------------------------------- criterion 9

#[test]
fn criterion_09_force_channels_close() {
    let mut worst: f64 = 0.0;
    let mut steps = 0usize;
    for run in all_toy_runs() {
        for rec in &run.traj.records {
            if let Some(c) = rec.channels {
                worst = worst.max(c.closure_error());
                steps += 1;
            }
        }
    }
    let (run, pes) = closure_run();
    let mut worst_vec: f64 = 0.0;
    for snap in &run.traj.snapshots {
        let s = snap.to_state().unwrap();
        let total = pes.ensemble_force(&s.r, &s.a).unwrap();
        let (h, a, q) = force_channel_vectors(pes, &s.r, &s.a);
        for i in 0..pes.dim() {
            let scale = h[i].abs() + a[i].abs() + q[i].abs();
            let diff = (h[i] + a[i] + q[i] - total[i]).abs();
            worst_vec = worst_vec.max(if scale > 0.0 { diff / scale } else { diff });
        }
    }
    report(
        "9",
        worst < 1e-12 && worst_vec < 1e-12 && steps > 0 && !run.traj.snapshots.is_empty(),
        &format!(
            "FE channels over {steps} logged steps: {worst:.1e}; all {} modes over {} snapshots: {worst_vec:.1e}",
            pes.dim(),
            run.traj.snapshots.len()
        ),
    );
}

// --------------------------------------------------------------- criterion 10

fn cli(config: &str, dir: &Path, workers: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_tdscha-sim"))
        .arg("scan")
        .arg("--config")
        .arg(&cfg)
        .arg("--out-dir")
        .arg(dir.join("out"))
        .args(["--workers", &workers.to_string(), "--seed", &seed.to_string()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn csv_files(dir: &Path) -> Vec<(String, String)> {
    let mut v: Vec<(String, String)> = std::fs::read_dir(dir.join("out"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read_to_string(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

/// Largest relative difference between numeric fields; `None` when the
/// files differ in shape or in a non-numeric field.
fn max_rel_diff(a: &str, b: &str) -> Option<f64> {
    let (la, lb): (Vec<&str>, Vec<&str>) = (a.lines().collect(), b.lines().collect());
    if la.len() != lb.len() {
        return None;
    }
    let mut worst: f64 = 0.0;
    for (x, y) in la.iter().zip(&lb) {
        let (fx, fy): (Vec<&str>, Vec<&str>) = (x.split(',').collect(), y.split(',').collect());
        if fx.len() != fy.len() {
            return None;
        }
        for (p, q) in fx.iter().zip(&fy) {
            match (p.parse::<f64>(), q.parse::<f64>()) {
                (Ok(u), Ok(v)) if u.is_nan() && v.is_nan() => {}
                (Ok(u), Ok(v)) if u != v => worst = worst.max((u - v).abs() / u.abs().max(v.abs())),
                (Ok(_), Ok(_)) => {}
                _ if p == q => {}
                _ => return None,
            }
        }
    }
    Some(worst)
}

#[test]
fn criterion_10_reproducible_outputs() {
    let field = r#"
command = "scan"
[model.toy]
[pulse]
amplitude = 0.0
t0 = 600.0
[time]
t_end = 5000.0
[scan]
axis = "field"
fields = [800.0, 1500.0, 3000.0]
trajectories = true
"#;
    let map = r#"
command = "scan"
[model.toy]
[scan]
axis = "x0_v0"
x0 = [1.0, 1.6]
v0 = [1.0, 5.0]
"#;
    let tmp = tempfile::tempdir().unwrap();
    let mut problems = Vec::new();
    let mut worst: f64 = 0.0;
    let mut files = 0;
    for (name, cfg) in [("field", field), ("map", map)] {
        let d = |tag: &str| tmp.path().join(format!("{name}_{tag}"));
        cli(cfg, &d("a"), 1, 11);
        cli(cfg, &d("b"), 1, 11);
        cli(cfg, &d("c"), 4, 11);
        let (a, b, c) = (csv_files(&d("a")), csv_files(&d("b")), csv_files(&d("c")));
        files += a.len();
        if a != b {
            problems.push(format!("{name}: repeated run differs"));
        }
        if a.len() != c.len() {
            problems.push(format!("{name}: worker count changes the file set"));
        }
        for ((fa, ta), (fc, tc)) in a.iter().zip(&c) {
            match max_rel_diff(ta, tc) {
                Some(e) if fa == fc => worst = worst.max(e),
                _ => problems.push(format!("{name}: {fa} differs in shape between 1 and 4 workers")),
            }
        }
    }
    cli(field, &tmp.path().join("seed"), 1, 12);
    let reseeded = csv_files(&tmp.path().join("seed"));
    if reseeded == csv_files(&tmp.path().join("field_a")) {
        problems.push("a different seed gave identical output".into());
    }
    report(
        "10",
        problems.is_empty() && worst < 1e-12 && files > 0,
        &format!(
            "{files} CSV files byte-identical across repeats; 4 vs 1 workers max relative difference {worst:.1e} {}",
            problems.join("; ")
        ),
    );
}
