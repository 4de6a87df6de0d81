//! Quartic Born–Oppenheimer surfaces and their exact Gaussian averages.
//!
//! The surface is a Taylor expansion about a stationary reference
//! configuration in mass-rescaled displacements `u`:
//!
//! ```text
//! V(u) = v_ref + 1/2 phi_ij u_i u_j + 1/6 chi_ijk u_i u_j u_k + 1/24 psi_ijkl u_i u_j u_k u_l
//! ```
//!
//! For a Gaussian density with centroid `R` and position covariance `A`,
//! Wick's theorem closes every moment that appears, so the ensemble energy,
//! force and curvature are polynomials in `R` and `A`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{check_spd, CompensatedVec};
use crate::state::ModeBasis;
use crate::tensor::SparseSymTensor;
use crate::{DMat, DVec};

/// Coordinate system the force constants are expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    Cartesian,
    Mode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuarticPes {
    dim: usize,
    basis: Basis,
    v_ref: f64,
    phi: SparseSymTensor,
    chi: SparseSymTensor,
    psi: SparseSymTensor,
}

/// Energy, force and curvature averaged over one Gaussian density.
#[derive(Debug, Clone)]
pub struct WickAverages {
    pub potential: f64,
    pub force: DVec,
    pub curvature: DMat,
}

impl QuarticPes {
    /// Flat surface (`v_ref = 0`, no force constants).
    pub fn zeros(dim: usize, basis: Basis) -> Self {
        Self {
            dim,
            basis,
            v_ref: 0.0,
            phi: SparseSymTensor::new(2, dim).expect("order 2"),
            chi: SparseSymTensor::new(3, dim).expect("order 3"),
            psi: SparseSymTensor::new(4, dim).expect("order 4"),
        }
    }

    pub fn new(
        basis: Basis,
        v_ref: f64,
        phi: SparseSymTensor,
        chi: SparseSymTensor,
        psi: SparseSymTensor,
    ) -> Result<Self> {
        for (t, order) in [(&phi, 2), (&chi, 3), (&psi, 4)] {
            if t.order() != order {
                return Err(Error::InvalidTensor(format!(
                    "expected order {order}, got {}",
                    t.order()
                )));
            }
        }
        let dim = phi.dim();
        check_len("chi dimension", dim, chi.dim())?;
        check_len("psi dimension", dim, psi.dim())?;
        Ok(Self {
            dim,
            basis,
            v_ref,
            phi,
            chi,
            psi,
        })
    }

    /// Purely harmonic surface with the given (symmetric) force-constant matrix.
    pub fn harmonic(phi: &DMat, basis: Basis) -> Result<Self> {
        check_len("phi rows", phi.ncols(), phi.nrows())?;
        let mut pes = Self::zeros(phi.nrows(), basis);
        for i in 0..phi.nrows() {
            for j in i..phi.ncols() {
                pes.phi.set(&[i, j], phi[(i, j)])?;
            }
        }
        Ok(pes)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn v_ref(&self) -> f64 {
        self.v_ref
    }

    pub fn set_v_ref(&mut self, v: f64) {
        self.v_ref = v;
    }

    pub fn phi(&self) -> &SparseSymTensor {
        &self.phi
    }

    pub fn chi(&self) -> &SparseSymTensor {
        &self.chi
    }

    pub fn psi(&self) -> &SparseSymTensor {
        &self.psi
    }

    pub fn phi_mut(&mut self) -> &mut SparseSymTensor {
        &mut self.phi
    }

    pub fn chi_mut(&mut self) -> &mut SparseSymTensor {
        &mut self.chi
    }

    pub fn psi_mut(&mut self) -> &mut SparseSymTensor {
        &mut self.psi
    }

    /// Dense copy of the harmonic force constants.
    pub fn phi_dense(&self) -> DMat {
        let mut m = DMat::zeros(self.dim, self.dim);
        for (idx, v) in self.phi.permutations() {
            m[(idx[0], idx[1])] = *v;
        }
        m
    }

    pub fn potential_at(&self, u: &DVec) -> Result<f64> {
        check_len("displacement", self.dim, u.len())?;
        Ok(self.v_ref
            + self.phi.contract_same(u)? / 2.0
            + self.chi.contract_same(u)? / 6.0
            + self.psi.contract_same(u)? / 24.0)
    }

    /// Force `-dV/du` at a sharp configuration.
    pub fn force_at(&self, u: &DVec) -> Result<DVec> {
        check_len("displacement", self.dim, u.len())?;
        let mut f = DVec::zeros(self.dim);
        for (idx, v) in self.phi.permutations() {
            f[idx[0]] -= v * u[idx[1]];
        }
        for (idx, v) in self.chi.permutations() {
            f[idx[0]] -= 0.5 * v * u[idx[1]] * u[idx[2]];
        }
        for (idx, v) in self.psi.permutations() {
            f[idx[0]] -= v * u[idx[1]] * u[idx[2]] * u[idx[3]] / 6.0;
        }
        Ok(f)
    }

    fn check_state(&self, r: &DVec, a: &DMat) -> Result<()> {
        check_len("centroid", self.dim, r.len())?;
        check_spd("position fluctuation matrix A", a, self.dim)
    }

    pub fn ensemble_potential(&self, r: &DVec, a: &DMat) -> Result<f64> {
        self.check_state(r, a)?;
        Ok(self.potential_unchecked(r, a))
    }

    pub fn ensemble_force(&self, r: &DVec, a: &DMat) -> Result<DVec> {
        self.check_state(r, a)?;
        Ok(self.force_unchecked(r, a))
    }

    /// `kappa_ij = phi_ij + chi_ijk R_k + 1/2 psi_ijkl (R_k R_l + A_kl)`.
    pub fn ensemble_curvature(&self, r: &DVec, a: &DMat) -> Result<DMat> {
        self.check_state(r, a)?;
        Ok(self.curvature_unchecked(r, a))
    }

    pub fn ensemble(&self, r: &DVec, a: &DMat) -> Result<WickAverages> {
        self.check_state(r, a)?;
        let (force, curvature) = self.force_and_curvature_unchecked(r, a);
        Ok(WickAverages {
            potential: self.potential_unchecked(r, a),
            force,
            curvature,
        })
    }

    pub(crate) fn potential_unchecked(&self, r: &DVec, a: &DMat) -> f64 {
        let mut v2 = 0.0;
        for (idx, v) in self.phi.permutations() {
            let (i, j) = (idx[0], idx[1]);
            v2 += v * (r[i] * r[j] + a[(i, j)]);
        }
        let mut v3 = 0.0;
        for (idx, v) in self.chi.permutations() {
            let (i, j, k) = (idx[0], idx[1], idx[2]);
            v3 += v * (r[i] * r[j] * r[k] + 3.0 * r[i] * a[(j, k)]);
        }
        let mut v4 = 0.0;
        for (idx, v) in self.psi.permutations() {
            let (i, j, k, l) = (idx[0], idx[1], idx[2], idx[3]);
            v4 += v * (r[i] * r[j] * r[k] * r[l] + 6.0 * r[i] * r[j] * a[(k, l)] + 3.0 * a[(i, j)] * a[(k, l)]);
        }
        self.v_ref + v2 / 2.0 + v3 / 6.0 + v4 / 24.0
    }

    pub(crate) fn force_unchecked(&self, r: &DVec, a: &DMat) -> DVec {
        let mut f = CompensatedVec::zeros(self.dim);
        for (idx, v) in self.phi.permutations() {
            f.add(idx[0], -v * r[idx[1]]);
        }
        for (idx, v) in self.chi.permutations() {
            let (i, j, k) = (idx[0], idx[1], idx[2]);
            f.add(i, -0.5 * v * r[j] * r[k]);
            f.add(i, -0.5 * v * a[(j, k)]);
        }
        for (idx, v) in self.psi.permutations() {
            let (i, j, k, l) = (idx[0], idx[1], idx[2], idx[3]);
            f.add(i, -v * r[j] * r[k] * r[l] / 6.0);
            f.add(i, -0.5 * v * r[j] * a[(k, l)]);
        }
        f.finish()
    }

    pub(crate) fn curvature_unchecked(&self, r: &DVec, a: &DMat) -> DMat {
        let mut kappa = DMat::zeros(self.dim, self.dim);
        for (idx, v) in self.phi.permutations() {
            kappa[(idx[0], idx[1])] += v;
        }
        for (idx, v) in self.chi.permutations() {
            kappa[(idx[0], idx[1])] += v * r[idx[2]];
        }
        for (idx, v) in self.psi.permutations() {
            let (i, j, k, l) = (idx[0], idx[1], idx[2], idx[3]);
            kappa[(i, j)] += 0.5 * v * (r[k] * r[l] + a[(k, l)]);
        }
        kappa
    }

    pub(crate) fn force_and_curvature_unchecked(&self, r: &DVec, a: &DMat) -> (DVec, DMat) {
        (self.force_unchecked(r, a), self.curvature_unchecked(r, a))
    }

    fn mode_direction(&self, basis: Option<&ModeBasis>, mode: usize) -> Result<Option<DVec>> {
        match (self.basis, basis) {
            (Basis::Mode, _) => {
                if mode >= self.dim {
                    return Err(Error::InvalidParameter(format!(
                        "mode index {mode} out of range for dimension {}",
                        self.dim
                    )));
                }
                Ok(None)
            }
            (Basis::Cartesian, Some(b)) => {
                check_len("mode basis", self.dim, b.dim())?;
                if mode >= b.n_modes() {
                    return Err(Error::InvalidParameter(format!(
                        "mode index {mode} out of range for {} modes",
                        b.n_modes()
                    )));
                }
                Ok(Some(b.mode(mode)))
            }
            (Basis::Cartesian, None) => Err(Error::InvalidParameter(
                "a Cartesian surface needs a mode basis to address a mode".into(),
            )),
        }
    }

    /// Unit displacement vector of `mode` in the coordinates of the surface.
    pub fn mode_vector(&self, basis: Option<&ModeBasis>, mode: usize) -> Result<DVec> {
        Ok(match self.mode_direction(basis, mode)? {
            Some(e) => e,
            None => {
                let mut e = DVec::zeros(self.dim);
                e[mode] = 1.0;
                e
            }
        })
    }

    /// Mode-projected `(phi_mm, psi_mmmm)`.
    pub fn mode_diagonal(&self, basis: Option<&ModeBasis>, mode: usize) -> Result<(f64, f64)> {
        match self.mode_direction(basis, mode)? {
            None => Ok((self.phi.get(&[mode; 2])?, self.psi.get(&[mode; 4])?)),
            Some(e) => Ok((self.phi.contract(&[&e, &e])?, self.psi.contract(&[&e, &e, &e, &e])?)),
        }
    }

    /// Impose a double well with minima at `±x0` and depth `v0` on one mode,
    /// leaving every other mode-projected element untouched.
    ///
    /// The well `V(x) = 1/2 phi x^2 + 1/24 psi x^4` has its minima at
    /// `x0 = sqrt(-6 phi / psi)` with depth `3 phi^2 / (2 psi)`, hence
    /// `phi = -4 v0 / x0^2` and `psi = 24 v0 / x0^4`.
    pub fn set_double_well(&self, basis: Option<&ModeBasis>, mode: usize, x0: f64, v0: f64) -> Result<Self> {
        if !(x0 > 0.0 && x0.is_finite()) || !(v0 > 0.0 && v0.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "double well needs x0 > 0 and V0 > 0 (got x0 = {x0}, V0 = {v0})"
            )));
        }
        let phi_target = -4.0 * v0 / (x0 * x0);
        let psi_target = 24.0 * v0 / x0.powi(4);
        let mut out = self.clone();
        match self.mode_direction(basis, mode)? {
            None => {
                out.phi.set(&[mode; 2], phi_target)?;
                out.psi.set(&[mode; 4], psi_target)?;
            }
            Some(e) => {
                let (phi_now, psi_now) = self.mode_diagonal(basis, mode)?;
                let (dphi, dpsi) = (phi_target - phi_now, psi_target - psi_now);
                let support: Vec<usize> = (0..self.dim).filter(|&i| e[i] != 0.0).collect();
                for (a, &i) in support.iter().enumerate() {
                    for &j in &support[a..] {
                        out.phi.add(&[i, j], dphi * e[i] * e[j])?;
                    }
                }
                for (a, &i) in support.iter().enumerate() {
                    for (b, &j) in support.iter().enumerate().skip(a) {
                        for (c, &k) in support.iter().enumerate().skip(b) {
                            for &l in &support[c..] {
                                out.psi.add(&[i, j, k, l], dpsi * e[i] * e[j] * e[k] * e[l])?;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// `(x0, V0)` of the double well on one mode.
    pub fn double_well_params(&self, basis: Option<&ModeBasis>, mode: usize) -> Result<(f64, f64)> {
        let (phi, psi) = self.mode_diagonal(basis, mode)?;
        if !(phi < 0.0 && psi > 0.0) {
            return Err(Error::NoDoubleWell { mode, phi, psi });
        }
        Ok(((-6.0 * phi / psi).sqrt(), 3.0 * phi * phi / (2.0 * psi)))
    }

    /// True when the surface is unchanged by `u_i -> signs[i] u_i` with every
    /// sign equal to +1 or -1.
    pub fn is_invariant_under(&self, signs: &[f64]) -> bool {
        signs.len() == self.dim
            && [&self.phi, &self.chi, &self.psi].iter().all(|t| {
                t.iter()
                    .all(|(idx, _)| idx.iter().map(|&i| signs[i]).product::<f64>() == 1.0)
            })
    }

    /// True when every tensor element with an odd number of `mode` indices
    /// vanishes, i.e. the surface is even under `u_mode -> -u_mode`.
    pub fn is_even_in(&self, mode: usize) -> bool {
        [&self.phi, &self.chi, &self.psi].iter().all(|t| {
            t.iter()
                .all(|(idx, _)| idx.iter().filter(|&&i| i == mode).count() % 2 == 0)
        })
    }
}
