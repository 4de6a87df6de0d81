//! Trajectory digests: symmetry breaking, quench depth, relaxation back.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tdscha_core::dynamics::Trajectory;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// `|R_focus|` stayed above `x0 / 2` on one side for longer than the hold time.
    pub transition: bool,
    /// Start of the first such excursion.
    pub transition_time: Option<f64>,
    pub min_a_focus: f64,
    /// Largest `|R_IR|`.
    pub max_r_ir: Option<f64>,
    pub min_uncertainty: f64,
    /// After a transition: time from which `|R_focus| < x0 / 4` holds to the
    /// end of the run, if that stretch lasts longer than the hold time.
    pub relax_back_time: Option<f64>,
    pub final_time: f64,
}

/// Series the summary is computed from; all slices share the time grid.
pub struct Series<'a> {
    pub t: &'a [f64],
    pub r_focus: &'a [f64],
    pub a_focus: &'a [f64],
    pub r_ir: Option<&'a [f64]>,
    pub uncertainty: &'a [f64],
}

pub fn summarize_series(s: &Series<'_>, x0: f64, hold: f64) -> Summary {
    let n = s.t.len();
    let half = 0.5 * x0.abs();
    let mut transition_time = None;
    let mut start: Option<usize> = None;
    for i in 0..n {
        let r = s.r_focus[i];
        let outside = r.abs() > half;
        let same_side = start.is_some_and(|k| s.r_focus[k].signum() == r.signum());
        match (outside, same_side) {
            (true, true) => {}
            (true, false) => start = Some(i),
            (false, _) => start = None,
        }
        if let Some(k) = start {
            if s.t[i] - s.t[k] > hold {
                transition_time = Some(s.t[k]);
                break;
            }
        }
    }
    let relax_back_time = transition_time.and_then(|tc| {
        let quarter = 0.25 * x0.abs();
        let first_calm = (0..n).rev().take_while(|&i| s.r_focus[i].abs() < quarter).last()?;
        let t_calm = s.t[first_calm];
        (t_calm > tc && s.t[n - 1] - t_calm > hold).then_some(t_calm)
    });
    let fold_min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    Summary {
        transition: transition_time.is_some(),
        transition_time,
        min_a_focus: fold_min(s.a_focus),
        max_r_ir: s.r_ir.map(|v| v.iter().fold(0.0f64, |m, x| m.max(x.abs()))),
        min_uncertainty: fold_min(s.uncertainty),
        relax_back_time,
        final_time: s.t.last().copied().unwrap_or(f64::NAN),
    }
}

pub fn summarize(traj: &Trajectory, focus: usize, ir: Option<usize>, x0: f64, hold: f64) -> Summary {
    let t = traj.times();
    let r = traj.mode_series(focus);
    let a = traj.fluctuation_series(focus);
    let r_ir = ir.map(|m| traj.mode_series(m));
    let unc: Vec<f64> = traj.records.iter().map(|rec| rec.uncertainty_min).collect();
    summarize_series(
        &Series {
            t: &t,
            r_focus: &r,
            a_focus: &a,
            r_ir: r_ir.as_deref(),
            uncertainty: &unc,
        },
        x0,
        hold,
    )
}

/// Summarize a trajectory CSV written by the `dynamics` command.
pub fn summarize_csv(path: &Path, focus: &str, ir: Option<&str>, x0: f64, hold: f64) -> Result<Summary, CliError> {
    let mut rdr =
        csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: String| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Config(format!("{}: no column `{name}`", path.display())))
    };
    let it = col("t".into())?;
    let ir_ = col(format!("R_{focus}"))?;
    let ia = col(format!("A_{focus}"))?;
    let iu = col("uncertainty_min".into())?;
    let iir = ir.map(|l| col(format!("R_{l}"))).transpose()?;
    let (mut t, mut r, mut a, mut u, mut rir) = (vec![], vec![], vec![], vec![], vec![]);
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let get = |i: usize| -> Result<f64, CliError> {
            rec[i]
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("{}: row {}: bad number `{}`", path.display(), k + 2, &rec[i])))
        };
        t.push(get(it)?);
        r.push(get(ir_)?);
        a.push(get(ia)?);
        u.push(get(iu)?);
        if let Some(i) = iir {
            rir.push(get(i)?);
        }
    }
    Ok(summarize_series(
        &Series {
            t: &t,
            r_focus: &r,
            a_focus: &a,
            r_ir: iir.map(|_| rir.as_slice()),
            uncertainty: &u,
        },
        x0,
        hold,
    ))
}
