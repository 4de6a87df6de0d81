//! Explicit Runge–Kutta 5(4) (Dormand–Prince) with embedded error control
//! and the classical fourth-order continuous extension for dense output.

use thiserror::Error;

pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dydt: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dopri5Options {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; estimated from the right-hand side when `None`.
    pub h_init: Option<f64>,
    pub h_max: f64,
    /// Steps smaller than this (relative to |t|) count as underflow.
    pub h_min_rel: f64,
    pub max_steps: usize,
}

impl Default for Dopri5Options {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            h_init: None,
            h_max: f64::INFINITY,
            h_min_rel: 1e-13,
            max_steps: 50_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("step size underflow at t = {t} (h = {h:.3e})")]
    StepUnderflow { t: f64, h: f64, y: Vec<f64> },
    #[error("maximum number of steps reached at t = {t}")]
    TooManySteps { t: f64, y: Vec<f64> },
    #[error("non-finite solution at t = {t}")]
    NonFinite { t: f64, y: Vec<f64> },
    #[error("integration stopped at t = {t}: {reason}")]
    Stopped { t: f64, y: Vec<f64>, reason: String },
    #[error("invalid integrator settings: {0}")]
    Settings(String),
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// fifth-order solution minus embedded fourth-order solution
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// dense output
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Interpolation data for one accepted step.
struct Dense {
    t: f64,
    h: f64,
    r: [Vec<f64>; 5],
}

impl Dense {
    fn eval(&self, t: f64, out: &mut [f64]) {
        let theta = (t - self.t) / self.h;
        let theta1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = &self.r;
        for i in 0..out.len() {
            out[i] = r1[i] + theta * (r2[i] + theta1 * (r3[i] + theta * (r4[i] + theta1 * r5[i])));
        }
    }
}

fn error_norm(y0: &[f64], y1: &[f64], err: &[f64], rtol: f64, atol: f64) -> f64 {
    let n = y0.len().max(1) as f64;
    let sum: f64 = y0
        .iter()
        .zip(y1)
        .zip(err)
        .map(|((a, b), e)| {
            let sc = atol + rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

fn initial_step<S: OdeSystem>(sys: &S, t0: f64, y0: &[f64], f0: &[f64], opts: &Dopri5Options, span: f64) -> f64 {
    let n = y0.len();
    let sc: Vec<f64> = y0.iter().map(|y| opts.atol + opts.rtol * y.abs()).collect();
    let d0 = (y0.iter().zip(&sc).map(|(y, s)| (y / s).powi(2)).sum::<f64>() / n as f64).sqrt();
    let d1 = (f0.iter().zip(&sc).map(|(f, s)| (f / s).powi(2)).sum::<f64>() / n as f64).sqrt();
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(span).min(opts.h_max);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let mut f1 = vec![0.0; n];
    sys.rhs(t0 + h0, &y1, &mut f1);
    let d2 = (f1
        .iter()
        .zip(f0)
        .zip(&sc)
        .map(|((a, b), s)| ((a - b) / s).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span).min(opts.h_max)
}

/// Integrate from `t0` to `t_end` (`t_end > t0`).
///
/// `outputs` must be sorted ascending inside `(t0, t_end]`; each is reported
/// through `on_output` using the continuous extension. `on_accept` sees every
/// accepted step and may abort the run by returning an error message.
#[allow(clippy::too_many_arguments)]
pub fn dopri5<S, O, A>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    opts: &Dopri5Options,
    outputs: &[f64],
    mut on_output: O,
    mut on_accept: A,
) -> Result<(Vec<f64>, OdeStats), OdeError>
where
    S: OdeSystem,
    O: FnMut(f64, &[f64]),
    A: FnMut(f64, &[f64]) -> Result<(), String>,
{
    let n = sys.dim();
    if y0.len() != n {
        return Err(OdeError::Settings(format!(
            "initial state has {} components, system has {n}",
            y0.len()
        )));
    }
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(OdeError::Settings("tolerances must be positive".into()));
    }
    if !(t_end > t0) || !t_end.is_finite() || !t0.is_finite() {
        return Err(OdeError::Settings(format!("bad time span [{t0}, {t_end}]")));
    }

    let mut stats = OdeStats::default();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    sys.rhs(t, &y, &mut k1);
    stats.rhs_evals += 1;

    let mut h = match opts.h_init {
        Some(h) => h.min(t_end - t0),
        None => {
            stats.rhs_evals += 1;
            initial_step(sys, t0, &y, &k1, opts, t_end - t0)
        }
    };

    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) = (
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
    );
    let mut ytmp = vec![0.0; n];
    let mut y1 = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut out_buf = vec![0.0; n];
    let mut next_out = 0usize;
    let mut fac_old = 1e-4f64;
    let mut last_rejected = false;

    const SAFE: f64 = 0.9;
    const BETA: f64 = 0.04;
    const EXPO1: f64 = 0.2 - BETA * 0.75;

    loop {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(OdeError::TooManySteps { t, y });
        }
        let mut last = false;
        if t + h >= t_end || t + 1.01 * h >= t_end {
            h = t_end - t;
            last = true;
        }
        if h <= opts.h_min_rel * t.abs().max(1.0) {
            return Err(OdeError::StepUnderflow { t, h, y });
        }

        for i in 0..n {
            ytmp[i] = y[i] + h * A21 * k1[i];
        }
        sys.rhs(t + C2 * h, &ytmp, &mut k2);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        sys.rhs(t + C3 * h, &ytmp, &mut k3);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        sys.rhs(t + C4 * h, &ytmp, &mut k4);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        sys.rhs(t + C5 * h, &ytmp, &mut k5);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let t_new = if last { t_end } else { t + h };
        sys.rhs(t_new, &ytmp, &mut k6);
        for i in 0..n {
            y1[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        sys.rhs(t_new, &y1, &mut k7);
        stats.rhs_evals += 6;

        for i in 0..n {
            err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let e = error_norm(&y, &y1, &err, opts.rtol, opts.atol);
        if !e.is_finite() {
            stats.rejected += 1;
            h *= 0.2;
            last_rejected = true;
            continue;
        }

        let fac11 = e.powf(EXPO1);
        if e <= 1.0 {
            // accepted
            let dense_needed = next_out < outputs.len() && outputs[next_out] <= t_new;
            let dense = dense_needed.then(|| {
                let r2: Vec<f64> = (0..n).map(|i| y1[i] - y[i]).collect();
                let r3: Vec<f64> = (0..n).map(|i| h * k1[i] - r2[i]).collect();
                let r4: Vec<f64> = (0..n).map(|i| r2[i] - h * k7[i] - r3[i]).collect();
                let r5: Vec<f64> = (0..n)
                    .map(|i| h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]))
                    .collect();
                Dense {
                    t,
                    h,
                    r: [y.clone(), r2, r3, r4, r5],
                }
            });

            std::mem::swap(&mut y, &mut y1);
            std::mem::swap(&mut k1, &mut k7);
            t = t_new;
            stats.accepted += 1;

            if y.iter().any(|v| !v.is_finite()) {
                return Err(OdeError::NonFinite { t, y });
            }
            if let Err(reason) = on_accept(t, &y) {
                return Err(OdeError::Stopped { t, y, reason });
            }
            if let Some(d) = dense {
                while next_out < outputs.len() && outputs[next_out] <= t {
                    let to = outputs[next_out];
                    if to == t {
                        on_output(to, &y);
                    } else {
                        d.eval(to, &mut out_buf);
                        on_output(to, &out_buf);
                    }
                    next_out += 1;
                }
            }
            if last {
                break;
            }

            let mut fac = fac11 / fac_old.powf(BETA);
            fac_old = e.max(1e-4);
            fac = (fac / SAFE).clamp(0.1, 5.0);
            let mut h_new = h / fac;
            if last_rejected {
                h_new = h_new.min(h);
            }
            h = h_new.min(opts.h_max);
            last_rejected = false;
        } else {
            stats.rejected += 1;
            let fac = (fac11 / SAFE).min(5.0);
            h /= fac;
            last_rejected = true;
        }
    }
    Ok((y, stats))
}
