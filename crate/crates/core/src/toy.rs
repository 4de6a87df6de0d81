//! Bundled STO-like toy surface in the mode basis.
//!
//! Mode layout: `FE`, `IR`, `AFD`, then `n_bath` finite-momentum modes
//! grouped in pairs whose frequencies add up to roughly the IR frequency.
//! Cubic couplings only connect a zone-centre mode (FE or IR) to a bath
//! pair, so the pumped IR mode can decay into pairs, and the pairs act back
//! on FE through its own pair coupling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pes::{Basis, QuarticPes};
use crate::scha::{classify_region, scha_relax, Clamp, ClassifyOptions, RelaxOptions, RelaxResult};
use crate::state::{GaussianState, ModeBasis};
use crate::units::UnitSystem;
use crate::DMat;

pub const FE: usize = 0;
pub const IR: usize = 1;
pub const AFD: usize = 2;
pub const BATH0: usize = 3;

/// Toy-model parameters in internal units of the chosen [`UnitSystem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyModelParams {
    /// Number of bath modes (even).
    pub n_bath: usize,
    pub x0: f64,
    pub v0: f64,
    pub omega_ir: f64,
    pub omega_afd: f64,
    /// Frequency window the bath modes must lie in.
    pub bath_band: (f64, f64),
    /// Relative spread of the pair sums around `omega_ir`.
    pub pair_detuning: f64,
    /// Relative frequency difference between the two partners of a pair.
    pub pair_splitting: f64,
    pub detuning_seed: u64,
    pub chi_ir: f64,
    pub chi_fe: f64,
    /// `psi(FE, FE, IR, IR)`.
    pub beta: f64,
    pub psi_ir: f64,
    pub psi_bath: f64,
    pub zeff_ir: f64,
    pub zeff_fe: f64,
    pub seed_fe: f64,
    /// Required band for the FE frequency of the relaxed paraelectric state.
    pub fe_band: Option<(f64, f64)>,
}

impl ToyModelParams {
    /// Default parameter set, converted from laboratory values: frequencies
    /// in THz, energies in meV, lengths in Å·√amu, charges in e/√amu.
    pub fn standard(units: &UnitSystem) -> Self {
        let l = units.length_in_angstrom_sqrt_amu();
        Self {
            n_bath: 24,
            x0: 1.5 / l,
            v0: units.mev(2.5),
            omega_ir: units.thz(15.5),
            omega_afd: units.thz(1.5),
            bath_band: (units.thz(2.0), units.thz(10.0)),
            pair_detuning: 0.1,
            pair_splitting: 0.0,
            detuning_seed: 7,
            chi_ir: units.mev(30.0) * l.powi(3),
            chi_fe: units.mev(20.0) * l.powi(3),
            beta: -(units.thz(0.4) * l / 3.0).powi(2),
            psi_ir: 0.0,
            psi_bath: units.mev(1555.0) * l.powi(4),
            zeff_ir: 3.0,
            zeff_fe: 0.0,
            seed_fe: 1e-6 / l,
            fe_band: Some((units.thz(0.3), units.thz(0.5))),
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.n_bath.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "n_bath must be even, got {}",
                self.n_bath
            )));
        }
        let finite = [
            self.x0,
            self.v0,
            self.omega_ir,
            self.omega_afd,
            self.bath_band.0,
            self.bath_band.1,
            self.pair_detuning,
            self.pair_splitting,
            self.chi_ir,
            self.chi_fe,
            self.beta,
            self.psi_ir,
            self.psi_bath,
            self.zeff_ir,
            self.zeff_fe,
            self.seed_fe,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("non-finite toy-model parameter".into()));
        }
        if !(self.omega_ir > 0.0 && self.omega_afd > 0.0) {
            return Err(Error::InvalidParameter("mode frequencies must be positive".into()));
        }
        let (lo, hi) = self.bath_band;
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::InvalidParameter(format!("bad bath band ({lo}, {hi})")));
        }
        if !(self.pair_detuning >= 0.0 && self.pair_detuning < 1.0)
            || !(self.pair_splitting >= 0.0 && self.pair_splitting < 1.0)
            || self.psi_ir < 0.0
            || self.psi_bath < 0.0
        {
            return Err(Error::InvalidParameter(
                "detuning and splitting must lie in [0, 1), stabilizers must be nonnegative".into(),
            ));
        }
        for (w1, w2) in self.bath_pairs() {
            if w1 < lo || w2 > hi {
                return Err(Error::InvalidParameter(format!(
                    "bath pair ({w1:.4e}, {w2:.4e}) falls outside the band ({lo:.4e}, {hi:.4e})"
                )));
            }
        }
        Ok(())
    }

    /// Bath frequencies, pair by pair. Pair centres sit at `omega_ir / 2`
    /// spread evenly over `+-pair_detuning` with a seeded jitter; partners
    /// are split by `pair_splitting` relative to the centre.
    pub fn bath_pairs(&self) -> Vec<(f64, f64)> {
        let pairs = self.n_bath / 2;
        let half = 0.5 * self.omega_ir;
        let d = self.pair_detuning;
        let mut rng = ChaCha8Rng::seed_from_u64(self.detuning_seed);
        (0..pairs)
            .map(|p| {
                let even = d * (2.0 * (p as f64 + 0.5) / pairs as f64 - 1.0);
                let jitter = if d > 0.0 {
                    rng.random_range(-1.0..=1.0) * d / pairs as f64
                } else {
                    0.0
                };
                let centre = half * (1.0 + even + jitter);
                let split = 0.5 * self.pair_splitting * centre;
                (centre - split, centre + split)
            })
            .collect()
    }

    /// Number of modes.
    pub fn dim(&self) -> usize {
        BATH0 + self.n_bath
    }
}

/// Parity of every toy mode under inversion: FE and IR are polar and one
/// partner of each pair is odd, so every coupling is invariant.
pub fn inversion_parity(params: &ToyModelParams) -> Vec<f64> {
    let mut s = vec![1.0; params.dim()];
    s[FE] = -1.0;
    s[IR] = -1.0;
    for p in 0..params.n_bath / 2 {
        s[BATH0 + 2 * p + 1] = -1.0;
    }
    s
}

/// Surface and mode basis without the stability check.
pub fn toy_surface(params: &ToyModelParams) -> Result<(QuarticPes, ModeBasis)> {
    params.validate()?;
    let n = params.dim();
    let mut pes = QuarticPes::zeros(n, Basis::Mode);
    pes.phi_mut().set(&[IR, IR], params.omega_ir.powi(2))?;
    pes.phi_mut().set(&[AFD, AFD], params.omega_afd.powi(2))?;
    if params.psi_ir > 0.0 {
        pes.psi_mut().set(&[IR; 4], params.psi_ir)?;
    }
    pes.psi_mut().set(&[FE, FE, IR, IR], params.beta)?;
    let mut freqs = vec![0.0; n];
    freqs[IR] = params.omega_ir;
    freqs[AFD] = params.omega_afd;
    let mut labels = vec!["FE".to_string(), "IR".to_string(), "AFD".to_string()];
    for (p, (w1, w2)) in params.bath_pairs().into_iter().enumerate() {
        let (i, j) = (BATH0 + 2 * p, BATH0 + 2 * p + 1);
        pes.phi_mut().set(&[i, i], w1 * w1)?;
        pes.phi_mut().set(&[j, j], w2 * w2)?;
        freqs[i] = w1;
        freqs[j] = w2;
        pes.chi_mut().set(&[IR, i, j], params.chi_ir)?;
        pes.chi_mut().set(&[FE, i, j], params.chi_fe)?;
        if params.psi_bath > 0.0 {
            pes.psi_mut().set(&[i; 4], params.psi_bath)?;
            pes.psi_mut().set(&[j; 4], params.psi_bath)?;
        }
        labels.push(format!("bath{}", 2 * p));
        labels.push(format!("bath{}", 2 * p + 1));
    }
    let pes = pes.set_double_well(None, FE, params.x0, params.v0)?;
    let mut zeff = DMat::zeros(n, 3);
    zeff[(IR, 0)] = params.zeff_ir;
    zeff[(FE, 0)] = params.zeff_fe;
    let basis = ModeBasis::identity(n)
        .with_freqs(freqs)?
        .with_labels(labels)?
        .with_zeff(zeff)?;
    Ok((pes, basis))
}

/// Relaxed zero-temperature paraelectric state of a toy surface, checked for
/// stability: converged, centred, every curvature eigenvalue positive and
/// the FE frequency inside the requested band.
pub fn validate_paraelectric(
    pes: &QuarticPes,
    fe_band: Option<(f64, f64)>,
    units: &UnitSystem,
) -> Result<(RelaxResult, f64)> {
    let n = pes.dim();
    let res = scha_relax(
        pes,
        0.0,
        units,
        &crate::DVec::zeros(n),
        &Clamp::none(),
        None,
        &RelaxOptions::default(),
    )
    .map_err(|e| Error::NoStableSolution(format!("toy model paraelectric state: {e}")))?;
    if !res.converged {
        return Err(Error::NoStableSolution(
            "toy model paraelectric relaxation did not converge".into(),
        ));
    }
    if res.r.amax() > 1e-8 {
        return Err(Error::NoStableSolution(format!(
            "toy model relaxes away from the symmetric point (|R| = {:.3e})",
            res.r.amax()
        )));
    }
    let lowest = crate::linalg::sym_eigen(&res.kappa).0[0];
    if !(lowest > 0.0) {
        return Err(Error::UnstableCurvature {
            mode: 0,
            eigenvalue: lowest,
        });
    }
    let opts = ClassifyOptions {
        n_points: 21,
        extent: Some(0.05 * pes.double_well_params(None, FE).map(|p| p.0).unwrap_or(1.0)),
        ..Default::default()
    };
    let c = classify_region(pes, None, FE, 0.0, units, &opts)?;
    if c.omega_fe.imaginary {
        return Err(Error::UnstableCurvature {
            mode: FE,
            eigenvalue: c.omega_fe.omega_sq,
        });
    }
    if let Some((lo, hi)) = fe_band {
        if c.omega_fe.omega < lo || c.omega_fe.omega > hi {
            return Err(Error::InvalidParameter(format!(
                "FE frequency {:.6e} outside the band [{lo:.6e}, {hi:.6e}]",
                c.omega_fe.omega
            )));
        }
    }
    Ok((res, c.omega_fe.omega))
}

/// The toy surface and basis, with the FE frequency stored in the basis.
pub fn build_toy_sto(params: &ToyModelParams, units: &UnitSystem) -> Result<(QuarticPes, ModeBasis)> {
    let (pes, basis) = toy_surface(params)?;
    let (_, omega_fe) = validate_paraelectric(&pes, params.fe_band, units)?;
    let mut freqs = basis.freqs().to_vec();
    freqs[FE] = omega_fe;
    let basis = basis.with_freqs(freqs)?;
    Ok((pes, basis))
}

/// Relaxed equilibrium state at `temperature` with the FE seed applied.
pub fn toy_initial_state(
    pes: &QuarticPes,
    temperature: f64,
    units: &UnitSystem,
    seed_fe: f64,
) -> Result<GaussianState> {
    let n = pes.dim();
    let res = scha_relax(
        pes,
        temperature,
        units,
        &crate::DVec::zeros(n),
        &Clamp::none(),
        None,
        &RelaxOptions::default(),
    )?;
    if !res.converged {
        return Err(Error::NoStableSolution(
            "equilibrium relaxation did not converge".into(),
        ));
    }
    let mut s = res.state(temperature, units)?;
    s.r[FE] += seed_fe;
    Ok(s)
}
