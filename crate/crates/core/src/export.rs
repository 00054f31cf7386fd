//! CSV serialization of trajectories and resilience reports.
//!
//! Numbers are written in scientific notation with 17 significant digits, so
//! every `f64` round-trips exactly. Node labels are `node + label_base`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::resilience::ComplianceSign;
use crate::scalar::Real;
use crate::sim::Trajectory;

pub fn fmt_num<T: Real>(v: T) -> String {
    let v = v.to_f64_lossy();
    if v.is_nan() {
        "NaN".into()
    } else if v == 0.0 {
        // Normalizes negative zero.
        format!("{:.16e}", 0.0)
    } else {
        format!("{v:.16e}")
    }
}

fn fmt_vec<T: Real>(v: &[T]) -> String {
    v.iter().map(|&x| fmt_num(x)).collect::<Vec<_>>().join(";")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Argument(format!("csv output failed: {e}"))
}

pub const TRAJECTORY_HEADER: [&str; 12] =
    ["t", "i", "x_i", "u_i", "h_i", "psi1", "psi2", "delta_i", "e_i", "epsilon_i", "lo_i", "hi_i"];

/// One row per `(t, node)`. Vector-valued cells join components with `;`.
pub fn write_trajectory_csv<T: Real, W: Write>(
    traj: &Trajectory<T>,
    out: W,
    label_base: usize,
    sign: ComplianceSign,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER).map_err(csv_err)?;
    for row in &traj.rows {
        for (i, n) in row.nodes.iter().enumerate() {
            w.write_record([
                fmt_num(row.t),
                (i + label_base).to_string(),
                fmt_vec(&n.x),
                fmt_vec(&n.u),
                fmt_num(n.h),
                fmt_num(n.psi1),
                fmt_num(n.psi2),
                fmt_num(n.delta),
                fmt_num(sign.display(n.e)),
                fmt_num(n.epsilon),
                fmt_vec(&n.lo),
                fmt_vec(&n.hi),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Argument(format!("csv output failed: {e}")))
}

/// Resilience columns, one row per `(control period, node)`.
pub fn write_resilience_csv<T: Real, W: Write>(
    traj: &Trajectory<T>,
    out: W,
    label_base: usize,
    sign: ComplianceSign,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(crate::resilience::ResilienceReport::<T>::CSV_HEADER).map_err(csv_err)?;
    let mut periods = traj.periods.iter().map(|p| p.t).peekable();
    for row in &traj.rows {
        if periods.peek() != Some(&row.t) {
            continue;
        }
        periods.next();
        for (i, n) in row.nodes.iter().enumerate() {
            let report = crate::resilience::ResilienceReport {
                epsilon: n.epsilon,
                e: n.e,
                within_bound: n.within_bound,
                nu: n.nu,
                nu_star: n.nu_star,
            };
            w.write_record(report.csv_record(row.t, i + label_base, sign)).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Argument(format!("csv output failed: {e}")))
}
