//! Unit systems.
//!
//! The numerical core works in any self-consistent system in which
//! energy = mass-rescaled length² / time², so that `dP/dt = force` needs no
//! conversion factor. A [`UnitSystem`] carries `hbar`, `k_B` and the factors
//! used at the boundary to translate laboratory quantities.

use serde::{Deserialize, Serialize};

/// CODATA 2018 values.
pub mod codata {
    pub const ATOMIC_MASS_KG: f64 = 1.660_539_066_60e-27;
    pub const ELECTRON_VOLT_J: f64 = 1.602_176_634e-19;
    pub const HBAR_EV_S: f64 = 6.582_119_569e-16;
    pub const BOLTZMANN_EV_K: f64 = 8.617_333_262e-5;
}

/// eV carried by one amu·Å²/fs².
pub fn amu_angstrom2_per_fs2_in_ev() -> f64 {
    codata::ATOMIC_MASS_KG * 1e-20 / 1e-30 / codata::ELECTRON_VOLT_J
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSystem {
    pub name: String,
    /// Reduced Planck constant in internal energy × time.
    pub hbar: f64,
    /// Boltzmann constant in internal energy per kelvin.
    pub kb: f64,
    /// Size of the internal energy unit in eV.
    pub energy_in_ev: f64,
    /// Size of the internal time unit in fs.
    pub time_in_fs: f64,
    /// Internal force per (effective charge × laboratory field unit).
    pub field_to_force: f64,
}

impl UnitSystem {
    /// `hbar = k_B = 1`, no laboratory conversions.
    pub fn natural() -> Self {
        Self {
            name: "natural".into(),
            hbar: 1.0,
            kb: 1.0,
            energy_in_ev: 1.0,
            time_in_fs: 1.0,
            field_to_force: 1.0,
        }
    }

    /// Lengths in Å·√amu, time in fs, energy in amu·Å²/fs² (≈ 103.64 eV).
    /// Inputs are given in eV / meV / THz / K / kV/cm and converted here.
    /// Effective charges are in e/√amu; fields in kV/cm.
    pub fn physical() -> Self {
        let e_unit = amu_angstrom2_per_fs2_in_ev();
        Self {
            name: "physical".into(),
            hbar: codata::HBAR_EV_S * 1e15 / e_unit,
            kb: codata::BOLTZMANN_EV_K / e_unit,
            energy_in_ev: e_unit,
            time_in_fs: 1.0,
            // 1 kV/cm = 1e-5 V/Å; e·V/Å = eV/Å
            field_to_force: 1e-5 / e_unit,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "natural" => Some(Self::natural()),
            "physical" => Some(Self::physical()),
            _ => None,
        }
    }

    pub fn ev(&self, energy_ev: f64) -> f64 {
        energy_ev / self.energy_in_ev
    }

    pub fn mev(&self, energy_mev: f64) -> f64 {
        self.ev(energy_mev * 1e-3)
    }

    pub fn to_ev(&self, energy: f64) -> f64 {
        energy * self.energy_in_ev
    }

    /// Angular frequency (rad per internal time) of an ordinary frequency in THz.
    pub fn thz(&self, f_thz: f64) -> f64 {
        2.0 * std::f64::consts::PI * f_thz * 1e-3 * self.time_in_fs
    }

    pub fn to_thz(&self, omega: f64) -> f64 {
        omega / (2.0 * std::f64::consts::PI * 1e-3 * self.time_in_fs)
    }

    pub fn fs(&self, t_fs: f64) -> f64 {
        t_fs / self.time_in_fs
    }

    /// Size of the internal length unit in Å·√amu, fixed by
    /// energy = mass-rescaled length² / time².
    pub fn length_in_angstrom_sqrt_amu(&self) -> f64 {
        (self.energy_in_ev / amu_angstrom2_per_fs2_in_ev()).sqrt() * self.time_in_fs
    }

    pub fn thermal_energy(&self, temperature: f64) -> f64 {
        self.kb * temperature
    }
}

/// `2 n + 1 = coth(hbar omega / 2 k_B T)`, equal to one at zero temperature.
pub fn occupation_factor(hbar_omega: f64, kt: f64) -> f64 {
    if kt <= 0.0 {
        return 1.0;
    }
    let x = hbar_omega / (2.0 * kt);
    if x > 20.0 {
        1.0 + 2.0 * (-2.0 * x).exp()
    } else {
        1.0 / x.tanh()
    }
}
