#![allow(dead_code)]

use rand::Rng;
use tdscha_core::{Basis, DMat, DVec, QuarticPes, SparseSymTensor};

/// Random surface on `n` coordinates: every sorted index tuple is kept with
/// probability `fill`; `phi` is made positive definite and `psi` gets a
/// positive diagonal.
pub fn random_pes<R: Rng>(rng: &mut R, n: usize, fill: f64) -> QuarticPes {
    let mut phi = Vec::new();
    let mut chi = Vec::new();
    let mut psi = Vec::new();
    let m = DMat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let spd = &m * m.transpose() / n as f64 + DMat::identity(n, n) * 0.5;
    for i in 0..n {
        for j in i..n {
            phi.push((vec![i, j], spd[(i, j)]));
            for k in j..n {
                if rng.random_bool(fill) {
                    chi.push((vec![i, j, k], rng.random_range(-0.5..0.5)));
                }
                for l in k..n {
                    let diag = i == l;
                    if diag {
                        psi.push((vec![i, j, k, l], rng.random_range(0.5..1.5)));
                    } else if rng.random_bool(fill) {
                        psi.push((vec![i, j, k, l], rng.random_range(-0.2..0.2)));
                    }
                }
            }
        }
    }
    let tensor = |order, entries: &Vec<(Vec<usize>, f64)>| {
        SparseSymTensor::from_entries(order, n, entries.iter().map(|(i, v)| (i.as_slice(), *v))).unwrap()
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

pub fn random_spd<R: Rng>(rng: &mut R, n: usize, scale: f64) -> DMat {
    let m = DMat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&m * m.transpose() / n as f64 + DMat::identity(n, n) * 0.2) * scale
}

pub fn random_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> DVec {
    DVec::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Dense copies of the force constants with every permutation written out.
pub struct Dense {
    pub n: usize,
    pub v: f64,
    pub phi: Vec<f64>,
    pub chi: Vec<f64>,
    pub psi: Vec<f64>,
}

fn lookup(t: &SparseSymTensor, idx: &[usize]) -> f64 {
    let mut s = idx.to_vec();
    s.sort_unstable();
    t.get(&s).unwrap()
}

impl Dense {
    pub fn from_pes(pes: &QuarticPes) -> Self {
        let n = pes.dim();
        let mut phi = vec![0.0; n * n];
        let mut chi = vec![0.0; n * n * n];
        let mut psi = vec![0.0; n * n * n * n];
        for i in 0..n {
            for j in 0..n {
                phi[i * n + j] = lookup(pes.phi(), &[i, j]);
                for k in 0..n {
                    chi[(i * n + j) * n + k] = lookup(pes.chi(), &[i, j, k]);
                    for l in 0..n {
                        psi[((i * n + j) * n + k) * n + l] = lookup(pes.psi(), &[i, j, k, l]);
                    }
                }
            }
        }
        Self {
            n,
            v: pes.v_ref(),
            phi,
            chi,
            psi,
        }
    }

    /// Potential, force and Hessian at `u` by explicit loops.
    #[allow(clippy::needless_range_loop)]
    pub fn eval(&self, u: &[f64], force: &mut [f64], hess: &mut [f64]) -> f64 {
        let n = self.n;
        let mut v = self.v;
        for i in 0..n {
            let mut g = 0.0;
            for j in 0..n {
                let mut t3 = 0.0;
                let mut t4 = 0.0;
                for k in 0..n {
                    t3 += self.chi[(i * n + j) * n + k] * u[k];
                    let base = ((i * n + j) * n + k) * n;
                    let mut s = 0.0;
                    for l in 0..n {
                        s += self.psi[base + l] * u[l];
                    }
                    t4 += s * u[k];
                }
                let p = self.phi[i * n + j];
                hess[i * n + j] = p + t3 + 0.5 * t4;
                g += (p + 0.5 * t3 + t4 / 6.0) * u[j];
                v += u[i] * u[j] * (0.5 * p + t3 / 6.0 + t4 / 24.0);
            }
            force[i] = -g;
        }
        v
    }
}

/// Fourth-order accurate central difference; exact for quartics up to rounding.
pub fn richardson(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    let d = |h: f64| (f(h) - f(-h)) / (2.0 * h);
    (4.0 * d(0.5 * h) - d(h)) / 3.0
}
