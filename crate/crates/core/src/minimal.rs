//! One-mode reduction of the fluctuation quench.
//!
//! With the FE centroid `R(t)` prescribed, the deviation `a(t) = A(t) - A_eq`
//! of its fluctuation obeys
//!
//! ```text
//! a''' + 4 a' [w^2 + psi (R^2 + a) / 2] + psi A_c (2 R R' + a') = 0
//! ```
//!
//! where `A_c` is either the full fluctuation `A_eq + a` or `A_eq` alone.
//! For `R = alpha exp(t / tau)` the linearized solution is
//! `A(t) = A_eq [1 - alpha^2 tau^2 psi exp(2t/tau) / (4 w^2 tau^2 + psi A_eq tau^2 + 4)]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{dopri5, Dopri5Options, OdeError, OdeSystem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimalModelParams {
    pub omega_fe: f64,
    pub psi_fe: f64,
    pub a_eq: f64,
    pub alpha: f64,
    pub tau: f64,
}

impl MinimalModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega_fe > 0.0) || !(self.a_eq > 0.0) || !(self.tau > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "minimal model needs omega_fe, a_eq, tau > 0 (got {}, {}, {})",
                self.omega_fe, self.a_eq, self.tau
            )));
        }
        if !self.psi_fe.is_finite() || !self.alpha.is_finite() {
            return Err(Error::InvalidParameter("non-finite minimal-model parameter".into()));
        }
        Ok(())
    }

    /// `R = alpha exp(t / tau)` and its time derivative.
    pub fn exponential_path(&self) -> impl Fn(f64) -> (f64, f64) + Copy {
        let (alpha, tau) = (self.alpha, self.tau);
        move |t| {
            let r = alpha * (t / tau).exp();
            (r, r / tau)
        }
    }

    /// Time at which the exponential path reaches `amplitude`.
    pub fn time_at_amplitude(&self, amplitude: f64) -> f64 {
        self.tau * (amplitude / self.alpha).abs().ln()
    }
}

/// Which fluctuation multiplies the centroid-driven term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuenchCoefficient {
    #[default]
    Full,
    Equilibrium,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimalOptions {
    pub rtol: f64,
    pub atol: f64,
    pub stride: f64,
    /// Stop once `|a|` exceeds this bound.
    pub blowup: f64,
    pub coefficient: QuenchCoefficient,
}

impl Default for MinimalOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-14,
            stride: 1.0,
            blowup: 1e6,
            coefficient: QuenchCoefficient::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimalSolution {
    pub times: Vec<f64>,
    /// Deviation `A - A_eq`.
    pub a_tilde: Vec<f64>,
    pub blew_up: bool,
}

impl MinimalSolution {
    pub fn fluctuation(&self, a_eq: f64) -> Vec<f64> {
        self.a_tilde.iter().map(|x| a_eq + x).collect()
    }
}

struct QuenchOde<F> {
    p: MinimalModelParams,
    path: F,
    coefficient: QuenchCoefficient,
}

impl<F: Fn(f64) -> (f64, f64)> OdeSystem for QuenchOde<F> {
    fn dim(&self) -> usize {
        3
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let (r, rdot) = (self.path)(t);
        let (a, a1, a2) = (y[0], y[1], y[2]);
        let MinimalModelParams {
            omega_fe: w,
            psi_fe: psi,
            a_eq,
            ..
        } = self.p;
        let ac = match self.coefficient {
            QuenchCoefficient::Full => a_eq + a,
            QuenchCoefficient::Equilibrium => a_eq,
        };
        dy[0] = a1;
        dy[1] = a2;
        dy[2] = -4.0 * a1 * (w * w + 0.5 * psi * (r * r + a)) - psi * ac * (2.0 * rdot * r + a1);
    }
}

/// Integrate the quench equation from an equilibrium start at `t_span.0`
/// along the prescribed centroid path `path(t) = (R, dR/dt)`.
pub fn minimal_model_integrate<F>(
    params: &MinimalModelParams,
    path: F,
    t_span: (f64, f64),
    opts: &MinimalOptions,
) -> Result<MinimalSolution>
where
    F: Fn(f64) -> (f64, f64),
{
    params.validate()?;
    let (t0, t1) = t_span;
    if !(t1 > t0) || !(opts.stride > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "bad time span [{t0}, {t1}] or stride {}",
            opts.stride
        )));
    }
    let sys = QuenchOde {
        p: *params,
        path,
        coefficient: opts.coefficient,
    };
    let n_out = ((t1 - t0) / opts.stride + 1e-9).floor() as usize;
    let mut outputs: Vec<f64> = (1..=n_out)
        .map(|k| t0 + k as f64 * opts.stride)
        .filter(|&t| t < t1)
        .collect();
    outputs.push(t1);
    let mut times = vec![t0];
    let mut a_tilde = vec![0.0];
    let ode_opts = Dopri5Options {
        rtol: opts.rtol,
        atol: opts.atol,
        ..Default::default()
    };
    let bound = opts.blowup;
    let res = dopri5(
        &sys,
        t0,
        &[0.0; 3],
        t1,
        &ode_opts,
        &outputs,
        |t, y| {
            times.push(t);
            a_tilde.push(y[0]);
        },
        |_, y| {
            if y[0].abs() > bound {
                Err(format!("|A - A_eq| exceeded {bound}"))
            } else {
                Ok(())
            }
        },
    );
    let blew_up = match res {
        Ok(_) => false,
        Err(OdeError::Stopped { .. }) | Err(OdeError::NonFinite { .. }) => true,
        Err(e) => {
            return Err(Error::InvalidParameter(format!("quench integration failed: {e}")));
        }
    };
    Ok(MinimalSolution {
        times,
        a_tilde,
        blew_up,
    })
}

/// Linearized quench `A(t)` for the exponential path.
pub fn quench_closed_form(params: &MinimalModelParams, t: f64) -> f64 {
    let MinimalModelParams {
        omega_fe: w,
        psi_fe: psi,
        a_eq,
        alpha,
        tau,
    } = *params;
    let tau2 = tau * tau;
    let denom = 4.0 * w * w * tau2 + psi * a_eq * tau2 + 4.0;
    a_eq * (1.0 - alpha * alpha * tau2 * psi * (2.0 * t / tau).exp() / denom)
}

/// Minimum IR amplitude `omega_fe / sqrt(|beta|)` for the pumped mode to drag
/// the FE mode through the cross-quartic coupling; infinite when `beta = 0`.
pub fn dragging_threshold(omega_fe: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        f64::INFINITY
    } else {
        omega_fe / beta.abs().sqrt()
    }
}
