//! The three experiment commands and the shared output plumbing.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ccbfnet_core::export::{fmt_num, write_resilience_csv, write_trajectory_csv};
use ccbfnet_core::negotiation::write_trace_jsonl;
use ccbfnet_core::resilience::ComplianceSign;
use ccbfnet_core::{
    epsilon_tolerance, find_nu_star, lie_bundle, maximize_capability, run, AllowedActionSet, ControlRate, Error,
    NetworkState, NuStarOptions, QuadraticObjective, Trajectory,
};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{linspace, ExperimentConfig, ExperimentSpec, Format};
use crate::manifest::Manifest;
use crate::svg::{self, Panel, Series, Style};
use crate::CliError;

/// `h_i` below `−VIOLATION_TOL` counts as a violation in summaries.
pub const VIOLATION_TOL: f64 = 1e-6;

/// Where and what to write.
#[derive(Debug, Clone)]
pub struct Output {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Output {
    pub fn new(dir: impl Into<PathBuf>, formats: &[Format]) -> Result<Self, CliError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir, formats: formats.to_vec() })
    }

    fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.dir.join(name);
        File::create(&path).map(BufWriter::new).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

/// What a command wrote and how it went.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub command: String,
    pub lines: Vec<String>,
    pub summary: BTreeMap<String, Value>,
    pub files: Vec<String>,
}

impl Report {
    pub fn manifest(&self, config_text: &str, seed: u64, dir: &Path) -> Result<Manifest, CliError> {
        let mut m = Manifest::new(&self.command, config_text, seed, self.summary.clone());
        m.hash_files(dir, &self.files)?;
        Ok(m)
    }
}

#[derive(Debug, Clone)]
pub enum Results {
    Trajectory(Trajectory<f64>),
    Sweep(Vec<SweepRow>),
    Surface(Surface),
}

/// Runs whichever experiment the config names.
pub fn execute(cfg: &ExperimentConfig, out: &Output) -> Result<(Results, Report), CliError> {
    match cfg.experiment {
        ExperimentSpec::Simulate => simulate(cfg, out).map(|(t, r)| (Results::Trajectory(t), r)),
        ExperimentSpec::NuStarSweep { .. } => nu_star_sweep(cfg, out).map(|(s, r)| (Results::Sweep(s), r)),
        ExperimentSpec::EpsilonSurface { .. } => epsilon_surface(cfg, out).map(|(s, r)| (Results::Surface(s), r)),
    }
}

/// Runs the config and writes its manifest.
pub fn execute_with_manifest(cfg: &ExperimentConfig, text: &str, out: &Output) -> Result<(Results, Report), CliError> {
    let (results, report) = execute(cfg, out)?;
    report.manifest(text, cfg.sim.seed, &out.dir)?.write(&out.dir)?;
    Ok((results, report))
}

fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn write_trajectory_files(traj: &Trajectory<f64>, out: &Output, sign: ComplianceSign, files: &mut Vec<String>) -> Result<(), CliError> {
    write_trajectory_csv(traj, out.create("trajectory.csv")?, 1, sign)?;
    files.push("trajectory.csv".into());
    Ok(())
}

pub fn simulate(cfg: &ExperimentConfig, out: &Output) -> Result<(Trajectory<f64>, Report), CliError> {
    let model = cfg.model();
    let barriers = model.barriers();
    let sign = cfg.sim.compliance_sign;
    let mut files = Vec::new();
    let traj = match run(&model, &barriers, &cfg.scenario, &NetworkState::from_scalars(&cfg.x0)) {
        Ok(t) => t,
        Err(abort) => {
            if out.wants(Format::Csv) && !abort.partial.rows.is_empty() {
                write_trajectory_files(&abort.partial, out, sign, &mut files)?;
            }
            let last = abort.partial.rows.last().map_or(0.0, |r| r.t);
            return Err(CliError::Runtime(format!("{} (partial trajectory up to t = {last} kept)", abort.error)));
        }
    };

    if out.wants(Format::Csv) {
        write_trajectory_files(&traj, out, sign, &mut files)?;
        if cfg.scenario.resilience.enabled {
            write_resilience_csv(&traj, out.create("resilience.csv")?, 1, sign)?;
            files.push("resilience.csv".into());
        }
        if cfg.sim.trace {
            write_trace_jsonl(out.create("trace.jsonl")?, &traj.trace)?;
            files.push("trace.jsonl".into());
        }
    }
    if out.wants(Format::Svg) {
        out.write_text("states.svg", &state_plot(&traj, cfg.params.xbar()))?;
        out.write_text("controls.svg", &control_plot(&traj))?;
        files.push("states.svg".into());
        files.push("controls.svg".into());
    }

    let n = traj.node_count();
    let min_h: Vec<f64> = (0..n).map(|i| traj.min_h(i, |_| true).unwrap_or(f64::NAN)).collect();
    let first: Vec<Option<f64>> =
        (0..n).map(|i| traj.rows.iter().find(|r| r.nodes[i].h < -VIOLATION_TOL).map(|r| r.t)).collect();
    let unconverged = traj.periods.iter().filter(|p| !p.converged).count();
    let out_of_bound = count_out_of_bound(&traj);

    let mut lines = Vec::new();
    for i in 0..n {
        let tail = match first[i] {
            Some(t) => format!("first violation at t = {t:.2}"),
            None => "safe".into(),
        };
        lines.push(format!("node {}: min h = {:.6e}, {tail}", i + 1, min_h[i]));
    }
    let violators: Vec<String> = (0..n).filter(|&i| first[i].is_some()).map(|i| (i + 1).to_string()).collect();
    lines.push(if violators.is_empty() { "no violations".into() } else { format!("violations at nodes {}", violators.join(", ")) });
    lines.push(format!("{} control periods, {unconverged} without converged negotiation", traj.periods.len()));

    let mut summary = BTreeMap::new();
    summary.insert("min_h".into(), Value::Array(min_h.iter().map(|&v| num(v)).collect()));
    summary.insert("first_violation".into(), Value::Array(first.iter().map(|v| v.map_or(Value::Null, num)).collect()));
    summary.insert("rows".into(), json!(traj.rows.len()));
    summary.insert("periods".into(), json!(traj.periods.len()));
    summary.insert("unconverged_periods".into(), json!(unconverged));
    summary.insert("out_of_bound_records".into(), json!(out_of_bound));
    summary.insert("clamp_count".into(), json!(traj.clamp_count));
    let report = Report { command: "simulate".into(), lines, summary, files };
    Ok((traj, report))
}

fn count_out_of_bound(traj: &Trajectory<f64>) -> usize {
    let mut periods = traj.periods.iter().map(|p| p.t).peekable();
    let mut count = 0;
    for row in &traj.rows {
        if periods.peek() == Some(&row.t) {
            periods.next();
            count += row.nodes.iter().filter(|n| !n.within_bound).count();
        }
    }
    count
}

fn state_plot(traj: &Trajectory<f64>, xbar: &[f64]) -> String {
    let n = traj.node_count();
    let mut series = Vec::new();
    for i in 0..n {
        let pts = traj.rows.iter().map(|r| (r.t, r.nodes[i].x[0])).collect();
        series.push(Series { label: format!("x{}", i + 1), points: pts, style: Style::Line, color: svg::color(i) });
    }
    let (t0, t1) = (traj.rows.first().map_or(0.0, |r| r.t), traj.rows.last().map_or(1.0, |r| r.t));
    for (i, &xb) in xbar.iter().enumerate() {
        series.push(Series { label: format!("xbar{}", i + 1), points: vec![(t0, xb), (t1, xb)], style: Style::Dotted, color: svg::color(i) });
    }
    svg::panels(&[Panel { title: "Infected fraction".into(), x_label: "t".into(), y_label: "x".into(), series }])
}

fn control_plot(traj: &Trajectory<f64>) -> String {
    let n = traj.node_count();
    let panels: Vec<Panel> = (0..n)
        .map(|i| {
            let u = traj.rows.iter().map(|r| (r.t, r.nodes[i].u[0])).collect();
            let hi = traj.rows.iter().map(|r| (r.t, r.nodes[i].hi[0])).collect();
            let lo = traj.rows.iter().map(|r| (r.t, r.nodes[i].lo[0])).collect();
            Panel {
                title: format!("Healing control, node {}", i + 1),
                x_label: "t".into(),
                y_label: "u".into(),
                series: vec![
                    Series { label: format!("u{}", i + 1), points: u, style: Style::Step, color: svg::color(i) },
                    Series { label: "upper bound".into(), points: hi, style: Style::Dotted, color: "#555555" },
                    Series { label: "lower bound".into(), points: lo, style: Style::Dotted, color: "#999999" },
                ],
            }
        })
        .collect();
    svg::panels(&panels)
}

/// Runs `f` on a pool capped by `CCBFNET_THREADS` when that is set.
fn with_pool<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R, CliError> {
    let threads = std::env::var("CCBFNET_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointStatus {
    Ok,
    /// `ν*` never reached on the grid.
    Saturated,
    /// Some entry of `L_g h` is zero.
    IllPosed,
    /// `ν >= ν*`: the tolerance is zero by definition.
    AboveBoundary,
}

impl PointStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            PointStatus::Ok => "ok",
            PointStatus::Saturated => "saturated",
            PointStatus::IllPosed => "ill_posed",
            PointStatus::AboveBoundary => "above_boundary",
        }
    }
}

/// State-only inputs for the chosen node at a swept value.
struct Probe {
    objective: QuadraticObjective<f64>,
    allowed: AllowedActionSet<f64>,
}

fn probe(cfg: &ExperimentConfig, node: usize, base: &[f64], x: f64) -> Result<Probe, Error> {
    let model = cfg.model();
    let barriers = model.barriers();
    let mut state = base.to_vec();
    state[node] = x;
    let bundle = lie_bundle(&model, &barriers[node], &NetworkState::from_scalars(&state), node)?;
    let objective = QuadraticObjective::from_bundle(&bundle, &cfg.gains[node], &ControlRate::zero(1))?;
    Ok(Probe { objective, allowed: AllowedActionSet::from_box(cfg.boxes[node].clone()) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub x: f64,
    pub nu_star: f64,
    pub status: PointStatus,
}

fn nu_star_at(cfg: &ExperimentConfig, node: usize, base: &[f64], x: f64, opts: &NuStarOptions<f64>) -> Result<(Probe, SweepRow, Vec<f64>), Error> {
    let p = probe(cfg, node, base, x)?;
    let (row, u_star) = match find_nu_star(&p.objective, &p.allowed, opts) {
        Ok(ns) => {
            let status = if ns.saturated { PointStatus::Saturated } else { PointStatus::Ok };
            (SweepRow { x, nu_star: ns.nu_star, status }, ns.u_star)
        }
        Err(Error::IllPosed { .. }) => (SweepRow { x, nu_star: f64::NAN, status: PointStatus::IllPosed }, Vec::new()),
        Err(e) => return Err(e),
    };
    Ok((p, row, u_star))
}

pub fn nu_star_sweep(cfg: &ExperimentConfig, out: &Output) -> Result<(Vec<SweepRow>, Report), CliError> {
    let ExperimentSpec::NuStarSweep { node, ref base_state, x_min, x_max, points, delta_nu, nu_max } = cfg.experiment else {
        return Err(CliError::Runtime("config does not describe a nu-star sweep".into()));
    };
    let node = node - 1;
    let opts = NuStarOptions::new(delta_nu, nu_max);
    let xs = linspace(x_min, x_max, points);
    let rows: Vec<SweepRow> = with_pool(|| {
        xs.par_iter().map(|&x| nu_star_at(cfg, node, base_state, x, &opts).map(|(_, r, _)| r)).collect::<Result<Vec<_>, Error>>()
    })??;

    let mut files = Vec::new();
    if out.wants(Format::Csv) {
        let mut w = csv::Writer::from_writer(out.create("nu_star.csv")?);
        let io = |e: csv::Error| CliError::Io(e.to_string());
        w.write_record(["x", "nu_star", "status"]).map_err(io)?;
        for r in &rows {
            w.write_record([fmt_num(r.x), fmt_num(r.nu_star), r.status.as_str().to_string()]).map_err(io)?;
        }
        w.flush()?;
        files.push("nu_star.csv".into());
    }
    if out.wants(Format::Svg) {
        let pts = rows.iter().map(|r| (r.x, r.nu_star)).collect();
        let panel = Panel {
            title: format!("Resilience boundary of node {}", node + 1),
            x_label: format!("x{}", node + 1),
            y_label: "nu*".into(),
            series: vec![Series { label: "nu*".into(), points: pts, style: Style::Step, color: svg::color(0) }],
        };
        out.write_text("nu_star.svg", &svg::panels(&[panel]))?;
        files.push("nu_star.svg".into());
    }

    let count = |s: PointStatus| rows.iter().filter(|r| r.status == s).count();
    let finite: Vec<&SweepRow> = rows.iter().filter(|r| r.nu_star.is_finite()).collect();
    let zero_prefix = finite.iter().take_while(|r| r.nu_star == 0.0).count();
    let decreasing = finite.windows(2).filter(|w| w[1].nu_star < w[0].nu_star).count();
    let max = finite.iter().map(|r| r.nu_star).fold(f64::NAN, f64::max);
    let lines = vec![
        format!("{} grid points: {} ok, {} saturated, {} ill-posed", rows.len(), count(PointStatus::Ok), count(PointStatus::Saturated), count(PointStatus::IllPosed)),
        format!("nu* = 0 on the first {zero_prefix} well-posed points, max nu* = {max}, {decreasing} decreasing steps"),
    ];
    let mut summary = BTreeMap::new();
    summary.insert("points".into(), json!(rows.len()));
    summary.insert("saturated".into(), json!(count(PointStatus::Saturated)));
    summary.insert("ill_posed".into(), json!(count(PointStatus::IllPosed)));
    summary.insert("zero_prefix".into(), json!(zero_prefix));
    summary.insert("decreasing_steps".into(), json!(decreasing));
    summary.insert("max_nu_star".into(), num(max));
    Ok((rows, Report { command: "nu-star-sweep".into(), lines, summary, files }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub x: f64,
    pub nu: f64,
    pub epsilon: f64,
    pub nu_star: f64,
    pub status: PointStatus,
}

/// `points[ix][inu]` over the grids `xs × nus`.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub xs: Vec<f64>,
    pub nus: Vec<f64>,
    pub points: Vec<Vec<SurfacePoint>>,
}

fn surface_column(cfg: &ExperimentConfig, node: usize, base: &[f64], x: f64, nus: &[f64], opts: &NuStarOptions<f64>) -> Result<Vec<SurfacePoint>, Error> {
    let (p, row, u_star) = nu_star_at(cfg, node, base, x, opts)?;
    nus.iter()
        .map(|&nu| {
            let point = |epsilon, status| SurfacePoint { x, nu, epsilon, nu_star: row.nu_star, status };
            if row.status == PointStatus::IllPosed {
                return Ok(point(f64::NAN, PointStatus::IllPosed));
            }
            if nu >= row.nu_star {
                return Ok(point(0.0, PointStatus::AboveBoundary));
            }
            let obj = p.objective.with_nu(nu);
            let uc = maximize_capability(&obj, &p.allowed)?.u_star;
            let eps = epsilon_tolerance(&obj, row.nu_star, &u_star, &uc)?;
            Ok(point(eps, row.status))
        })
        .collect()
}

pub fn epsilon_surface(cfg: &ExperimentConfig, out: &Output) -> Result<(Surface, Report), CliError> {
    let ExperimentSpec::EpsilonSurface { node, ref base_state, x_min, x_max, x_points, nu_min, nu_max, nu_points, delta_nu, nu_star_max } =
        cfg.experiment
    else {
        return Err(CliError::Runtime("config does not describe an epsilon surface".into()));
    };
    let node = node - 1;
    let opts = NuStarOptions::new(delta_nu, nu_star_max);
    let xs = linspace(x_min, x_max, x_points);
    let nus = linspace(nu_min, nu_max, nu_points);
    let points: Vec<Vec<SurfacePoint>> = with_pool(|| {
        xs.par_iter().map(|&x| surface_column(cfg, node, base_state, x, &nus, &opts)).collect::<Result<Vec<_>, Error>>()
    })??;
    let surface = Surface { xs, nus, points };

    let mut files = Vec::new();
    if out.wants(Format::Csv) {
        let mut w = csv::Writer::from_writer(out.create("epsilon.csv")?);
        let io = |e: csv::Error| CliError::Io(e.to_string());
        w.write_record(["x", "nu", "epsilon", "nu_star", "status"]).map_err(io)?;
        for p in surface.points.iter().flatten() {
            w.write_record([fmt_num(p.x), fmt_num(p.nu), fmt_num(p.epsilon), fmt_num(p.nu_star), p.status.as_str().to_string()])
                .map_err(io)?;
        }
        w.flush()?;
        files.push("epsilon.csv".into());
    }
    if out.wants(Format::Svg) {
        let z: Vec<Vec<f64>> = surface.points.iter().map(|col| col.iter().map(|p| p.epsilon).collect()).collect();
        let zmax = z.iter().flatten().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
        let levels: Vec<f64> = (1..=4).map(|k| zmax * k as f64 / 5.0).collect();
        let label = format!("x{}", node + 1);
        out.write_text("epsilon.svg", &svg::heatmap("Non-compliance tolerance", &label, "nu", &surface.xs, &surface.nus, &z, &levels))?;
        files.push("epsilon.svg".into());
    }

    let all: Vec<&SurfacePoint> = surface.points.iter().flatten().collect();
    let count = |s: PointStatus| all.iter().filter(|p| p.status == s).count();
    let max = all.iter().map(|p| p.epsilon).filter(|v| v.is_finite()).fold(0.0, f64::max);
    let min = all.iter().map(|p| p.epsilon).filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
    let lines = vec![
        format!("{} x {} grid, epsilon in [{min:.6e}, {max:.6e}]", surface.xs.len(), surface.nus.len()),
        format!("{} points at or above the boundary, {} ill-posed", count(PointStatus::AboveBoundary), count(PointStatus::IllPosed)),
    ];
    let mut summary = BTreeMap::new();
    summary.insert("grid".into(), json!([surface.xs.len(), surface.nus.len()]));
    summary.insert("epsilon_min".into(), num(min));
    summary.insert("epsilon_max".into(), num(max));
    summary.insert("above_boundary".into(), json!(count(PointStatus::AboveBoundary)));
    summary.insert("ill_posed".into(), json!(count(PointStatus::IllPosed)));
    summary.insert("saturated".into(), json!(count(PointStatus::Saturated)));
    Ok((surface, Report { command: "epsilon-surface".into(), lines, summary, files }))
}
