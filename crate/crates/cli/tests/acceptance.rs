//! Acceptance run: one PASS/FAIL line per criterion, with the measured
//! runtime and the tolerances pinned below. Exits nonzero if any fails.

#![allow(clippy::needless_range_loop)]

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ccbfnet::commands::{epsilon_surface, nu_star_sweep, simulate, Output};
use ccbfnet::config::{parse_config, Format};
use ccbfnet::reproduce::{EPSILON_SURFACE, NU_STAR_SWEEP, SCENARIO_A, SCENARIO_B};
use ccbfnet_core::*;
use common::certificate::{trial, Injection, Outcome, Tolerance};
use common::oracles::{grid_max_2d, grid_max_scalar};
use common::{random_state, reference, rng};
use rand::Rng;

const FAILURE_TIME: f64 = 10.0;
const SAFE_FLOOR: f64 = -1e-6;
const MONOTONE_TOL: f64 = 1e-9;
/// The tolerance must grow with the state on every column from this gain on.
const SURFACE_NU_FROM: f64 = 0.1;
const ARGMAX_TOL: f64 = 1e-9;
const IDENTITY_TOL: f64 = 1e-12;
const ORACLE_TOL: f64 = 1e-6;
const ORACLE_STEP: f64 = 1e-4;
const AUDIT_TOL: f64 = 1e-5;
const AUDIT_STEP: f64 = 1e-5;
const CERTIFICATE_TOL: f64 = 1e-9;
const MIN_ORDER: f64 = 3.5;

struct Verdict {
    pass: bool,
    detail: String,
    info: Vec<String>,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail, info: Vec::new() }
}

fn run_config(text: &str, dir: &Path) -> Trajectory<f64> {
    let cfg = parse_config(text).unwrap();
    simulate(&cfg, &Output::new(dir, &[Format::Csv]).unwrap()).unwrap().0
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

fn figure1() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let tr = run_config(SCENARIO_A, dir.path());
    let before = tr.min_h(0, |t| t < FAILURE_TIME).unwrap();
    let after = tr.min_h(0, |t| t > FAILURE_TIME && t <= 20.0).unwrap();
    let others = tr.min_h(1, |_| true).unwrap().min(tr.min_h(2, |_| true).unwrap());
    let first = tr.first_violation(0);
    verdict(
        before >= 0.0 && after < 0.0 && others >= 0.0,
        format!("min h1 before t=10: {before:.3e}; min h1 on (10, 20]: {after:.3e}; first violation t={first:?}; min h2,h3: {others:.3e}"),
    )
}

fn figure2() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let tr = run_config(SCENARIO_B, dir.path());
    let m = (0..3).map(|i| tr.min_h(i, |_| true).unwrap()).fold(f64::INFINITY, f64::min);
    verdict(m >= SAFE_FLOOR, format!("min_t,i h = {m:.3e} (floor {SAFE_FLOOR:e})"))
}

fn figure3() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config(NU_STAR_SWEEP).unwrap();
    nu_star_sweep(&cfg, &Output::new(dir.path(), &[Format::Csv]).unwrap()).unwrap();
    let rows = read_csv(&dir.path().join("nu_star.csv"));
    let ill = rows.iter().filter(|r| r[2] == "ill_posed").count();
    let values: Vec<f64> = rows.iter().filter(|r| r[2] != "ill_posed").map(|r| r[1].parse().unwrap()).collect();
    let zero_prefix = values.iter().take_while(|&&v| v == 0.0).count();
    let decreasing = values.windows(2).filter(|w| w[1] < w[0]).count();
    let mut v = verdict(
        zero_prefix > 0 && decreasing == 0,
        format!("{} grid points, nu* = 0 on first {zero_prefix}, {decreasing} decreasing pairs, max nu* = {}", rows.len(), values.last().unwrap()),
    );
    v.info.push(format!("{ill} point(s) ill-posed (x1 = 0: L_g h = 0), excluded from the monotonicity check"));
    v
}

fn figure4() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config(EPSILON_SURFACE).unwrap();
    epsilon_surface(&cfg, &Output::new(dir.path(), &[Format::Csv]).unwrap()).unwrap();
    let rows = read_csv(&dir.path().join("epsilon.csv"));
    let parsed: Vec<(f64, f64, f64)> = rows.iter().map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap(), r[2].parse().unwrap())).collect();
    let mut xs: Vec<f64> = parsed.iter().map(|p| p.0).collect();
    xs.dedup();
    let nus: Vec<f64> = parsed.iter().take_while(|p| p.0 == xs[0]).map(|p| p.1).collect();
    let eps = |ix: usize, inu: usize| parsed[ix * nus.len() + inu].2;
    let ill = parsed.iter().filter(|p| p.2.is_nan()).count();
    let negative = parsed.iter().filter(|p| p.2 < 0.0).count();
    let mut rising_in_nu = 0;
    for ix in 0..xs.len() {
        let col: Vec<f64> = (0..nus.len()).map(|k| eps(ix, k)).filter(|v| v.is_finite()).collect();
        rising_in_nu += col.windows(2).filter(|w| w[1] > w[0] + MONOTONE_TOL).count();
    }
    let column_ok = |k: usize| {
        let col: Vec<f64> = (0..xs.len()).map(|ix| eps(ix, k)).filter(|v| v.is_finite()).collect();
        col.windows(2).all(|w| w[1] >= w[0] - MONOTONE_TOL)
    };
    let mut from = nus.len();
    while from > 0 && column_ok(from - 1) {
        from -= 1;
    }
    let from_nu = nus.get(from).copied();
    let mut v = verdict(
        negative == 0 && rising_in_nu == 0 && from_nu.is_some_and(|nu| nu <= SURFACE_NU_FROM),
        format!(
            "{}x{} grid, {negative} negative, {rising_in_nu} increases along nu, nondecreasing in x1 on every column from nu = {}",
            xs.len(),
            nus.len(),
            from_nu.map_or("none".into(), |v| v.to_string())
        ),
    );
    v.info.push(format!("{ill} ill-posed point(s) at x1 = 0 excluded"));
    v
}

fn argmax_lock() -> Verdict {
    let (_, model, barriers) = reference();
    let mut r = rng(501);
    let opts = NuStarOptions::new(0.01, 20.0);
    let set = AllowedActionSet::from_box(ControlBox::scalar(0.0, 0.75).unwrap());
    let (mut checked, mut saturated, mut worst) = (0, 0, 0.0f64);
    for _ in 0..100 {
        let st = random_state(&mut r, 0.01, 0.99);
        for i in 0..3 {
            let b = lie_bundle(&model, &barriers[i], &st, i).unwrap();
            let obj = QuadraticObjective::from_bundle(&b, &ClassKParams::new(1.0, 1.0).unwrap(), &ControlRate::zero(1)).unwrap();
            let ns = find_nu_star(&obj, &set, &opts).unwrap();
            if ns.saturated {
                saturated += 1;
                continue;
            }
            let lin = maximize_linear(obj.lg_h(), &set).unwrap().u_star;
            let steps = ((opts.nu_max - ns.nu_star) / opts.delta_nu).round() as usize;
            let grid = (0..=steps).map(|k| ns.nu_star + k as f64 * opts.delta_nu);
            let doubling = (0..20).map(|m| ns.nu_star.max(1.0) * 2f64.powi(m));
            for nu in grid.chain(doubling) {
                let u = maximize_capability(&obj.with_nu(nu), &set).unwrap().u_star;
                worst = worst.max((u[0] - lin[0]).abs());
            }
            checked += 1;
        }
    }
    let mut v = verdict(worst <= ARGMAX_TOL && checked > 0, format!("{checked} (state, node) pairs, max |u_c - u*| = {worst:.1e} for nu >= nu*"));
    v.info.push(format!("{saturated} pair(s) saturated at nu_max = 20 and skipped"));
    v
}

fn identity() -> Verdict {
    let (_, model, barriers) = reference();
    let mut r = rng(601);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let st = random_state(&mut r, 0.0, 1.0);
        let i = r.gen_range(0..3);
        let b = lie_bundle(&model, &barriers[i], &st, i).unwrap();
        let p = ClassKParams::new(r.gen_range(0.0..20.0), r.gen_range(0.0..20.0)).unwrap();
        let u = [r.gen_range(0.0..1.0)];
        let nu: Vec<Vec<f64>> = b.neighbors.iter().map(|_| vec![r.gen_range(0.0..1.0)]).collect();
        let du = [r.gen_range(-1.0..1.0)];
        let direct = psi2(&b, &p, &u, &nu, &du).unwrap();
        let grouped = psi2_grouped(&b, &p, &u, &nu, &du).unwrap();
        worst = worst.max((direct - grouped).abs());
    }
    verdict(worst <= IDENTITY_TOL, format!("1000 samples, max |psi2 - (sum a u + c)| = {worst:.1e}"))
}

fn oracle() -> Verdict {
    let mut r = rng(701);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let lo = r.gen_range(-1.0..0.5);
        let hi = lo + r.gen_range(0.05..1.5);
        let (qq, q, lg, nu) = (r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0), r.gen_range(-1.0..1.0), r.gen_range(0.0..2.0));
        let obj = QuadraticObjective::new(Matrix::scalar(qq), vec![q], vec![lg], nu, ControlRate::zero(1), 0.0).unwrap();
        let res = maximize_capability(&obj, &AllowedActionSet::from_box(ControlBox::scalar(lo, hi).unwrap())).unwrap();
        let (best, _) = grid_max_scalar(|u| qq * u * u + (q + nu * lg) * u, lo, hi, ORACLE_STEP);
        worst = worst.max((res.value - best).abs());
    }
    for _ in 0..500 {
        let off = r.gen_range(-1.5..1.5);
        let qm = [[r.gen_range(-2.0..2.0), off], [off, r.gen_range(-2.0..2.0)]];
        let q = [r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)];
        let lo = [r.gen_range(-1.0..0.5), r.gen_range(-1.0..0.5)];
        let hi = [lo[0] + r.gen_range(0.05..1.2), lo[1] + r.gen_range(0.05..1.2)];
        let m = Matrix::from_rows(&[qm[0].to_vec(), qm[1].to_vec()]).unwrap();
        let obj = QuadraticObjective::new(m, q.to_vec(), vec![0.0, 0.0], 0.0, ControlRate::zero(2), 0.0).unwrap();
        let set = AllowedActionSet::from_box(ControlBox::new(lo.to_vec(), hi.to_vec()).unwrap());
        let res = maximize_capability(&obj, &set).unwrap();
        worst = worst.max((res.value - grid_max_2d(qm, q, 0.0, lo, hi, &[], ORACLE_STEP)).abs());
    }
    verdict(worst <= ORACLE_TOL, format!("500 scalar + 500 planar cases, max |value - grid| = {worst:.1e} (grid step {ORACLE_STEP:e})"))
}

fn audit() -> Verdict {
    let (_, model, barriers) = reference();
    let mut r = rng(801);
    let mut worst = 0.0f64;
    let mut warnings = 0;
    for _ in 0..100 {
        let st = random_state(&mut r, 0.0, 1.0);
        for i in 0..3 {
            let rep = finite_difference_audit(&model, &barriers[i], &st, i, AUDIT_STEP).unwrap();
            warnings += rep.cancellation_warning as usize;
            worst = worst.max(rep.max_rel_error());
        }
    }
    verdict(worst <= AUDIT_TOL, format!("100 states x 3 nodes, max relative error {worst:.1e}, {warnings} cancellation warnings"))
}

fn certificate() -> Verdict {
    let (sc, _, _) = reference();
    let mut r = rng(901);
    let gains = sc.gains_low;
    let (mut checked, mut attempts) = (0, 0);
    let (mut failures, mut literal_failures, mut worst) = (0, 0, f64::INFINITY);
    let (mut shortfall_checked, mut shortfall_failures, mut gap_failures) = (0, 0, 0);
    let mut skipped = [0usize; 3];
    while checked < 50 && attempts < 5000 {
        attempts += 1;
        let x = [r.gen_range(0.05..0.12), r.gen_range(0.05..0.15), r.gen_range(0.05..0.2)];
        let node = r.gen_range(0..3);
        let fraction = r.gen_range(0.0..=1.0);
        match trial(&x, node, &gains, Tolerance::Formula, Injection::Surplus, fraction) {
            Outcome::Checked(t) => {
                checked += 1;
                worst = worst.min(t.best);
                failures += (t.best < -CERTIFICATE_TOL) as usize;
                literal_failures += (t.best_literal < -CERTIFICATE_TOL) as usize;
                if let Outcome::Checked(s) = trial(&x, node, &gains, Tolerance::Formula, Injection::Shortfall, fraction) {
                    shortfall_checked += 1;
                    shortfall_failures += (s.best < -CERTIFICATE_TOL) as usize;
                }
                if let Outcome::Checked(g) = trial(&x, node, &gains, Tolerance::Gap, Injection::Shortfall, fraction) {
                    gap_failures += (g.best < -CERTIFICATE_TOL) as usize;
                }
            }
            Outcome::NotConverged => skipped[0] += 1,
            Outcome::IllPosed => skipped[1] += 1,
            Outcome::AboveBoundary => skipped[2] += 1,
        }
    }
    let mut v = verdict(
        checked == 50 && failures == 0,
        format!("{checked} states with non-compliance e_i < 0, |e_i| <= eps_i: {failures} counterexamples, min best psi2 = {worst:.3e}"),
    );
    v.info.push(format!(
        "skipped draws: {} unconverged, {} ill-posed, {} with nu_i > nu_i*",
        skipped[0], skipped[1], skipped[2]
    ));
    v.info.push(format!("with nu_i* also multiplying L_f h: {literal_failures} of {checked} states with psi2 < 0"));
    v.info.push(format!(
        "shortfall (e_i > 0) of the same size on {shortfall_checked} states: {shortfall_failures} with psi2 < 0 under the closed-form eps_i, {gap_failures} under the exact capability gap"
    ));
    v
}

fn terminal(gains: ClassKParams<f64>, dt: f64) -> Vec<f64> {
    let (sc, model, barriers) = reference();
    let mut s = sc.closed_loop(gains);
    s.dt = dt;
    s.resilience.enabled = false;
    run(&model, &barriers, &s, &NetworkState::from_scalars(&sc.x0)).unwrap().terminal_state().unwrap().stacked()
}

fn orders(gains: ClassKParams<f64>, dts: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let ends: Vec<Vec<f64>> = dts.iter().map(|&dt| terminal(gains, dt)).collect();
    let diffs: Vec<f64> =
        ends.windows(2).map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)).collect();
    let orders = diffs.windows(2).map(|d| (d[0] / d[1]).log2()).collect();
    (diffs, orders)
}

fn sci(v: &[f64]) -> String {
    v.iter().map(|d| format!("{d:.2e}")).collect::<Vec<_>>().join(", ")
}

fn richardson() -> Verdict {
    let (sc, _, _) = reference();
    let dts = [0.05, 0.025, 0.0125, 0.00625];
    let (diffs, ord) = orders(sc.gains_high, &dts);
    let min = ord.iter().copied().fold(f64::INFINITY, f64::min);
    let mut v = verdict(
        min >= MIN_ORDER,
        format!("high-gain run, dt = {dts:?}: successive terminal differences [{}], observed orders {ord:.3?}", sci(&diffs)),
    );
    let (bd, bo) = orders(sc.gains_low, &dts);
    v.info.push(format!("low-gain run: differences [{}], orders {bo:.2?} (discrete negotiation outcomes dominate below 1e-10)", sci(&bd)));
    v
}

fn reproduce_twice(dir: &Path) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_ccbfnet")).args(["reproduce", "--figure", "1", "--out"]).arg(dir).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut bytes = fs::read(dir.join("trajectory.csv")).unwrap();
    bytes.extend(fs::read(dir.join("resilience.csv")).unwrap());
    bytes
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let a = reproduce_twice(&tmp.path().join("a"));
    let b = reproduce_twice(&tmp.path().join("b"));
    let manifests = fs::read(tmp.path().join("a/manifest.json")).unwrap() == fs::read(tmp.path().join("b/manifest.json")).unwrap();
    verdict(a == b && manifests, format!("{} CSV bytes, identical: {}, manifests identical: {manifests}", a.len(), a == b))
}

fn main() {
    type Criterion = (u32, &'static str, Option<f64>, fn() -> Verdict);
    let criteria: [Criterion; 11] = [
        (1, "high-gain run: node 1 safe before failure, violates after; nodes 2-3 safe", Some(10.0), figure1),
        (2, "low-gain run: every node safe", Some(10.0), figure2),
        (3, "boundary gain sweep: zero initial segment, nondecreasing", Some(30.0), figure3),
        (4, "tolerance surface: nonnegative and monotone", Some(60.0), figure4),
        (5, "capability argmax equals linear argmax for nu >= nu*", None, argmax_lock),
        (6, "second-order condition equals grouped form", None, identity),
        (7, "optimizer matches grid search", None, oracle),
        (8, "analytic Lie terms match finite differences", None, audit),
        (9, "tolerance certificate soundness", None, certificate),
        (10, "integrator convergence order", None, richardson),
        (11, "reproduction CSVs are byte-identical", None, determinism),
    ];
    let mut failed = 0;
    for (id, name, limit, f) in criteria {
        let start = Instant::now();
        let v = f();
        let secs = start.elapsed().as_secs_f64();
        let in_time = limit.is_none_or(|l| secs <= l);
        let pass = v.pass && in_time;
        failed += !pass as usize;
        let budget = limit.map_or(String::new(), |l| format!(" / limit {l} s"));
        println!("criterion {id:>2} {} {name}: {} [{secs:.2} s{budget}]", if pass { "PASS" } else { "FAIL" }, v.detail);
        for line in v.info {
            println!("             info: {line}");
        }
    }
    println!("acceptance: {} of 11 criteria passed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
