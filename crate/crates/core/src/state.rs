//! Gaussian (Wigner) nuclear states, phonon-mode bases and equilibrium states.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{check_spd, sym_eigen};
use crate::pes::QuarticPes;
use crate::tensor::SparseSymTensor;
use crate::units::{occupation_factor, UnitSystem};
use crate::{DMat, DVec};

/// Centroids and second moments of a Gaussian nuclear density.
///
/// `g` holds `<dR_i dP_j>` unsymmetrized; `a` and `b` are symmetric positive
/// definite for any physical state.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub r: DVec,
    pub p: DVec,
    pub a: DMat,
    pub b: DMat,
    pub g: DMat,
}

impl GaussianState {
    pub fn dim(&self) -> usize {
        self.r.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.r.len();
        check_len("momentum centroid", n, self.p.len())?;
        check_len("position-momentum correlation rows", n, self.g.nrows())?;
        check_len("position-momentum correlation cols", n, self.g.ncols())?;
        check_spd("position fluctuation matrix A", &self.a, n)?;
        check_spd("momentum fluctuation matrix B", &self.b, n)
    }

    pub fn to_snapshot(&self, t: f64) -> StateSnapshot {
        let rows = |m: &DMat| -> Vec<Vec<f64>> { (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect() };
        StateSnapshot {
            t,
            r: self.r.iter().copied().collect(),
            p: self.p.iter().copied().collect(),
            a: rows(&self.a),
            b: rows(&self.b),
            g: rows(&self.g),
        }
    }
}

/// JSON form `{t, R, P, A, B, G}` used for trajectory snapshots and restarts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub t: f64,
    #[serde(rename = "R")]
    pub r: Vec<f64>,
    #[serde(rename = "P")]
    pub p: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
}

impl StateSnapshot {
    pub fn to_state(&self) -> Result<GaussianState> {
        let n = self.r.len();
        let mat = |what: &'static str, rows: &[Vec<f64>]| -> Result<DMat> {
            check_len(what, n, rows.len())?;
            for row in rows {
                check_len(what, n, row.len())?;
            }
            Ok(DMat::from_fn(n, n, |i, j| rows[i][j]))
        };
        let state = GaussianState {
            r: DVec::from_vec(self.r.clone()),
            p: DVec::from_vec(self.p.clone()),
            a: mat("A", &self.a)?,
            b: mat("B", &self.b)?,
            g: mat("G", &self.g)?,
        };
        state.validate()?;
        Ok(state)
    }
}

/// Orthonormal phonon eigenvectors (rows, `e[(mu, i)]`), their frequencies,
/// optional labels, and optional mass-rescaled effective charges.
///
/// Effective charges are stored per coordinate of the surface they drive
/// (rows) and per Cartesian field direction (three columns).
#[derive(Debug, Clone, PartialEq)]
pub struct ModeBasis {
    eigvecs: DMat,
    freqs: Vec<f64>,
    labels: Vec<String>,
    zeff: Option<DMat>,
}

impl ModeBasis {
    pub fn new(eigvecs: DMat, freqs: Vec<f64>) -> Result<Self> {
        let n = eigvecs.ncols();
        check_len("mode count", eigvecs.nrows(), freqs.len())?;
        if eigvecs.nrows() > n {
            return Err(Error::InvalidParameter(format!(
                "{} modes cannot be orthonormal in {n} dimensions",
                eigvecs.nrows()
            )));
        }
        let gram = &eigvecs * eigvecs.transpose();
        let dev = (gram - DMat::identity(eigvecs.nrows(), eigvecs.nrows())).amax();
        if dev > 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "mode eigenvectors are not orthonormal (deviation {dev:.3e})"
            )));
        }
        if let Some(bad) = freqs.iter().find(|w| !(**w >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "mode frequency {bad} is negative or not finite"
            )));
        }
        let labels = (0..freqs.len()).map(|m| format!("m{m}")).collect();
        Ok(Self {
            eigvecs,
            freqs,
            labels,
            zeff: None,
        })
    }

    /// Coordinates are already mode amplitudes.
    pub fn identity(n: usize) -> Self {
        Self {
            eigvecs: DMat::identity(n, n),
            freqs: vec![0.0; n],
            labels: (0..n).map(|m| format!("m{m}")).collect(),
            zeff: None,
        }
    }

    /// Normal modes of a positive-definite curvature matrix.
    pub fn from_curvature(kappa: &DMat) -> Result<Self> {
        let (values, vectors) = sym_eigen(kappa);
        if let Some((mode, &eigenvalue)) = values.iter().enumerate().find(|(_, &v)| v <= 0.0) {
            return Err(Error::UnstableCurvature { mode, eigenvalue });
        }
        Self::new(vectors.transpose(), values.iter().map(|v| v.sqrt()).collect())
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        check_len("mode labels", self.freqs.len(), labels.len())?;
        self.labels = labels;
        Ok(self)
    }

    pub fn with_freqs(mut self, freqs: Vec<f64>) -> Result<Self> {
        check_len("mode frequencies", self.freqs.len(), freqs.len())?;
        self.freqs = freqs;
        Ok(self)
    }

    pub fn with_zeff(mut self, zeff: DMat) -> Result<Self> {
        check_len("effective-charge rows", self.dim(), zeff.nrows())?;
        check_len("effective-charge columns", 3, zeff.ncols())?;
        self.zeff = Some(zeff);
        Ok(self)
    }

    /// Number of coordinates.
    pub fn dim(&self) -> usize {
        self.eigvecs.ncols()
    }

    pub fn n_modes(&self) -> usize {
        self.eigvecs.nrows()
    }

    pub fn eigvecs(&self) -> &DMat {
        &self.eigvecs
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn zeff(&self) -> Option<&DMat> {
        self.zeff.as_ref()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn mode(&self, mu: usize) -> DVec {
        self.eigvecs.row(mu).transpose()
    }
}

fn check_mode(basis: &ModeBasis, mu: usize) -> Result<()> {
    if mu >= basis.n_modes() {
        return Err(Error::InvalidParameter(format!(
            "mode index {mu} out of range for {} modes",
            basis.n_modes()
        )));
    }
    Ok(())
}

/// `v_mu = e_mu . v`
pub fn project_vector(v: &DVec, basis: &ModeBasis, mu: usize) -> Result<f64> {
    check_len("vector", basis.dim(), v.len())?;
    check_mode(basis, mu)?;
    Ok(basis.eigvecs.row(mu).iter().zip(v.iter()).map(|(e, x)| e * x).sum())
}

/// `M_{mu nu} = e_mu^T M e_nu`
pub fn project_matrix(m: &DMat, basis: &ModeBasis, mu: usize, nu: usize) -> Result<f64> {
    check_len("matrix rows", basis.dim(), m.nrows())?;
    check_len("matrix cols", basis.dim(), m.ncols())?;
    check_mode(basis, mu)?;
    check_mode(basis, nu)?;
    let (e_mu, e_nu) = (basis.mode(mu), basis.mode(nu));
    Ok(e_mu.dot(&(m * e_nu)))
}

/// Contract every slot of a symmetric tensor with the listed modes.
pub fn project_tensor(t: &SparseSymTensor, basis: &ModeBasis, modes: &[usize]) -> Result<f64> {
    check_len("tensor dimension", basis.dim(), t.dim())?;
    for &mu in modes {
        check_mode(basis, mu)?;
    }
    let vecs: Vec<DVec> = modes.iter().map(|&mu| basis.mode(mu)).collect();
    let refs: Vec<&DVec> = vecs.iter().collect();
    t.contract(&refs)
}

/// Full matrix in the mode basis, `E M E^T`.
pub fn to_mode_frame(m: &DMat, basis: &ModeBasis) -> DMat {
    &basis.eigvecs * m * basis.eigvecs.transpose()
}

/// Thermal Gaussian state of a harmonic curvature `kappa` (R = P = G = 0).
pub fn thermal_state(kappa: &DMat, temperature: f64, units: &UnitSystem) -> Result<GaussianState> {
    let (a, b) = thermal_fluctuations(kappa, temperature, units)?;
    let n = kappa.nrows();
    Ok(GaussianState {
        r: DVec::zeros(n),
        p: DVec::zeros(n),
        a,
        b,
        g: DMat::zeros(n, n),
    })
}

/// `A = sum hbar (2n+1) / (2 w) e e^T` and `B = sum hbar w (2n+1) / 2 e e^T`.
pub fn thermal_fluctuations(kappa: &DMat, temperature: f64, units: &UnitSystem) -> Result<(DMat, DMat)> {
    check_len("curvature", kappa.nrows(), kappa.ncols())?;
    if temperature < 0.0 {
        return Err(Error::InvalidParameter(format!("negative temperature {temperature}")));
    }
    let (values, vectors) = sym_eigen(&crate::linalg::symmetrize(kappa));
    if let Some((mode, &eigenvalue)) = values.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::UnstableCurvature { mode, eigenvalue });
    }
    let kt = units.thermal_energy(temperature);
    let n = kappa.nrows();
    let mut a_diag = Vec::with_capacity(n);
    let mut b_diag = Vec::with_capacity(n);
    for &lambda in values.iter() {
        let w = lambda.sqrt();
        let f = occupation_factor(units.hbar * w, kt);
        a_diag.push(units.hbar * f / (2.0 * w));
        b_diag.push(units.hbar * w * f / 2.0);
    }
    let build = |d: &[f64]| {
        let scaled = DMat::from_fn(n, n, |i, k| vectors[(i, k)] * d[k]);
        crate::linalg::symmetrize(&(&scaled * vectors.transpose()))
    };
    Ok((build(&a_diag), build(&b_diag)))
}

/// `A_mm B_mm - (sym G)_mm^2` for every mode.
pub fn uncertainty_products(state: &GaussianState, basis: &ModeBasis) -> Result<Vec<f64>> {
    check_len("state dimension", basis.dim(), state.dim())?;
    let e = &basis.eigvecs;
    let ea = e * &state.a;
    let eb = e * &state.b;
    let eg = e * &state.g;
    Ok((0..basis.n_modes())
        .map(|mu| {
            let row = e.row(mu);
            let a = ea.row(mu).dot(&row);
            let b = eb.row(mu).dot(&row);
            let g = eg.row(mu).dot(&row);
            a * b - g * g
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateEnergy {
    pub kinetic: f64,
    pub potential: f64,
    pub total: f64,
}

/// Kinetic `|P|^2 / 2 + Tr B / 2` plus the Gaussian-averaged potential.
pub fn state_energy(state: &GaussianState, pes: &QuarticPes) -> Result<StateEnergy> {
    check_spd("momentum fluctuation matrix B", &state.b, state.dim())?;
    let kinetic = 0.5 * state.p.norm_squared() + 0.5 * state.b.trace();
    let potential = pes.ensemble_potential(&state.r, &state.a)?;
    Ok(StateEnergy {
        kinetic,
        potential,
        total: kinetic + potential,
    })
}

pub(crate) fn state_energy_unchecked(state: &GaussianState, pes: &QuarticPes) -> StateEnergy {
    let kinetic = 0.5 * state.p.norm_squared() + 0.5 * state.b.trace();
    let potential = pes.potential_unchecked(&state.r, &state.a);
    StateEnergy {
        kinetic,
        potential,
        total: kinetic + potential,
    }
}
