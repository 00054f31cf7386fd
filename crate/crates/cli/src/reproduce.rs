//! Shipped configurations for the four reference figures and the
//! qualitative expectations each run must meet.

use crate::commands::{execute, Output, PointStatus, Results, Surface, SweepRow};
use crate::config::{parse_config, Format};
use crate::CliError;
use ccbfnet_core::Trajectory;
use serde_json::json;

pub const SCENARIO_A: &str = include_str!("../configs/paper_scenario_A.toml");
pub const SCENARIO_B: &str = include_str!("../configs/paper_scenario_B.toml");
pub const NU_STAR_SWEEP: &str = include_str!("../configs/nu_star_sweep.toml");
pub const EPSILON_SURFACE: &str = include_str!("../configs/epsilon_surface.toml");

/// Shipped config for figure `id`.
pub fn figure_config(id: u32) -> Option<&'static str> {
    match id {
        1 => Some(SCENARIO_A),
        2 => Some(SCENARIO_B),
        3 => Some(NU_STAR_SWEEP),
        4 => Some(EPSILON_SURFACE),
        _ => None,
    }
}

/// Time of the control-box failure in the shipped scenarios.
pub const FAILURE_TIME: f64 = 10.0;
/// Lowest `h_i` accepted as safe for the low-gain scenario.
pub const SAFE_FLOOR: f64 = -1e-6;
/// Slack in the surface monotonicity checks.
pub const MONOTONE_TOL: f64 = 1e-9;
/// Gain from which the tolerance must grow with the state.
pub const SURFACE_NU_FROM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &str, pass: bool, detail: String) -> Check {
    Check { name: name.into(), pass, detail }
}

fn min_h(traj: &Trajectory<f64>, node: usize, window: impl Fn(f64) -> bool) -> f64 {
    traj.min_h(node, window).unwrap_or(f64::NAN)
}

pub fn figure1_checks(traj: &Trajectory<f64>) -> Vec<Check> {
    let before = min_h(traj, 0, |t| t < FAILURE_TIME);
    let after = min_h(traj, 0, |t| t > FAILURE_TIME);
    let others = (1..traj.node_count()).map(|i| min_h(traj, i, |_| true)).fold(f64::INFINITY, f64::min);
    vec![
        check("node 1 safe before failure", before >= 0.0, format!("min h1 on t < {FAILURE_TIME} is {before:.6e}")),
        check("node 1 violates after failure", after < 0.0, format!("min h1 on t > {FAILURE_TIME} is {after:.6e}")),
        check("other nodes safe", others >= 0.0, format!("min h over nodes 2.. is {others:.6e}")),
    ]
}

pub fn figure2_checks(traj: &Trajectory<f64>) -> Vec<Check> {
    let m = (0..traj.node_count()).map(|i| min_h(traj, i, |_| true)).fold(f64::INFINITY, f64::min);
    vec![check("all nodes safe", m >= SAFE_FLOOR, format!("min h over all nodes is {m:.6e} (floor {SAFE_FLOOR:e})"))]
}

pub fn figure3_checks(rows: &[SweepRow]) -> Vec<Check> {
    let finite: Vec<&SweepRow> = rows.iter().filter(|r| r.status != PointStatus::IllPosed).collect();
    let zero_prefix = finite.iter().take_while(|r| r.nu_star == 0.0).count();
    let decreasing = finite.windows(2).filter(|w| w[1].nu_star < w[0].nu_star).count();
    let ill: Vec<f64> = rows.iter().filter(|r| r.status == PointStatus::IllPosed).map(|r| r.x).collect();
    vec![
        check("nu* = 0 on an initial segment", zero_prefix > 0, format!("{zero_prefix} leading zero points")),
        check("nu* nondecreasing", decreasing == 0, format!("{decreasing} decreasing adjacent pairs")),
        check("only x = 0 ill-posed", ill.iter().all(|&x| x == 0.0), format!("ill-posed at {ill:?}")),
    ]
}

/// First `ν` column from which every column is nondecreasing in `x`.
pub fn monotone_from(surface: &Surface) -> Option<usize> {
    let nondecreasing = |k: usize| {
        let col: Vec<f64> = surface.points.iter().map(|c| c[k].epsilon).filter(|v| v.is_finite()).collect();
        col.windows(2).all(|w| w[1] >= w[0] - MONOTONE_TOL)
    };
    let m = surface.nus.len();
    let mut k = m;
    while k > 0 && nondecreasing(k - 1) {
        k -= 1;
    }
    (k < m).then_some(k)
}

pub fn figure4_checks(surface: &Surface) -> Vec<Check> {
    let finite = surface.points.iter().flatten().filter(|p| p.epsilon.is_finite());
    let negative = finite.clone().filter(|p| p.epsilon < 0.0).count();
    let rising_in_nu = surface
        .points
        .iter()
        .map(|col| {
            let v: Vec<f64> = col.iter().map(|p| p.epsilon).filter(|v| v.is_finite()).collect();
            v.windows(2).filter(|w| w[1] > w[0] + MONOTONE_TOL).count()
        })
        .sum::<usize>();
    let from = monotone_from(surface);
    let from_nu = from.map(|k| surface.nus[k]);
    let diagonal = surface.points.iter().flatten().filter(|p| p.status == PointStatus::AboveBoundary && p.epsilon != 0.0).count();
    vec![
        check("epsilon >= 0", negative == 0, format!("{negative} negative points")),
        check("epsilon nonincreasing in nu", rising_in_nu == 0, format!("{rising_in_nu} increasing steps")),
        check(
            "epsilon nondecreasing in x",
            from_nu.is_some_and(|nu| nu <= SURFACE_NU_FROM),
            match from_nu {
                Some(nu) => format!("holds on every column from nu = {nu} (required from {SURFACE_NU_FROM})"),
                None => "fails on the last column".into(),
            },
        ),
        check("epsilon = 0 at and above nu*", diagonal == 0, format!("{diagonal} nonzero points")),
    ]
}

pub fn checks(results: &Results, figure: u32) -> Vec<Check> {
    match (figure, results) {
        (1, Results::Trajectory(t)) => figure1_checks(t),
        (2, Results::Trajectory(t)) => figure2_checks(t),
        (3, Results::Sweep(r)) => figure3_checks(r),
        (4, Results::Surface(s)) => figure4_checks(s),
        _ => vec![check("figure matches experiment", false, format!("figure {figure} produced unexpected results"))],
    }
}

/// Runs figure `id`, writes its artifacts and manifest (with the checks in
/// the summary) and reports a mismatch if any check fails.
pub fn reproduce(id: u32, dir: Option<&str>, formats: Option<&[Format]>) -> Result<(Vec<String>, Vec<Check>), CliError> {
    let text = figure_config(id).ok_or_else(|| {
        CliError::Config(crate::config::ConfigErrors(vec![crate::config::ConfigError {
            line: None,
            message: format!("unknown figure {id}; expected 1, 2, 3 or 4"),
        }]))
    })?;
    let cfg = parse_config(text).map_err(CliError::Config)?;
    let out = Output::new(dir.unwrap_or(&cfg.output.directory), formats.unwrap_or(&cfg.output.formats))?;
    let (results, mut report) = execute(&cfg, &out)?;
    let list = checks(&results, id);
    report.summary.insert("figure".into(), json!(id));
    report.summary.insert(
        "checks".into(),
        list.iter().map(|c| (c.name.clone(), json!({ "pass": c.pass, "detail": c.detail }))).collect::<serde_json::Map<_, _>>().into(),
    );
    report.command = format!("reproduce {id}");
    report.manifest(text, cfg.sim.seed, &out.dir)?.write(&out.dir)?;
    let mut lines = report.lines;
    for c in &list {
        lines.push(format!("[{}] {}: {}", if c.pass { "ok" } else { "MISMATCH" }, c.name, c.detail));
    }
    if list.iter().any(|c| !c.pass) {
        return Err(CliError::Mismatch(lines));
    }
    Ok((lines, list))
}
