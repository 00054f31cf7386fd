//! Tolerance certificate check: after a converged negotiation, neighbors
//! deviate from their minimal assistance by a total of at most the tolerance,
//! and a grid search over node `i`'s allowed interval looks for a control
//! with nonnegative second-order condition at the boundary gain.

use ccbfnet_core::barrier::capability_at_gain;
use ccbfnet_core::resilience::{capability_gap, minimal_assistance};
use ccbfnet_core::*;

use super::oracles::grid_max_scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tolerance {
    /// `epsilon_tolerance`.
    Formula,
    /// `capability_gap`.
    Gap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Injection {
    /// Neighbors apply less than the minimal assistance (`a·(u^m − u) > 0`).
    Shortfall,
    /// Neighbors apply more (`a·(u^m − u) < 0`).
    Surplus,
}

#[derive(Debug, Clone, Copy)]
pub struct Trial {
    pub tolerance: f64,
    /// Injected `e_i = Σ_j a_ij·(u_j^m − u_j)`.
    pub e: f64,
    /// Best `ψ²` found with the boundary gain on the control term.
    pub best: f64,
    /// Same, with the boundary gain also multiplying `L_f h`.
    pub best_literal: f64,
}

#[derive(Debug, Clone, Copy)]
pub enum Outcome {
    Checked(Trial),
    NotConverged,
    IllPosed,
    /// `ν_i > ν_i*`: outside the premise of the certificate.
    AboveBoundary,
}

/// `fraction ∈ [0, 1]` sets `|e_i|` as a share of the tolerance.
pub fn trial(x: &[f64], node: usize, gains: &ClassKParams<f64>, tol: Tolerance, inj: Injection, fraction: f64) -> Outcome {
    let (problems, out) = super::negotiate(x, gains, 0.75, false);
    if !out.converged {
        return Outcome::NotConverged;
    }
    let p = &problems[node];
    let b = &p.bundle;
    let allowed = &out.allowed[node];
    let ns = match find_nu_star(&p.objective, allowed, &NuStarOptions::new(0.01, 20.0)) {
        Ok(ns) => ns,
        Err(Error::IllPosed { .. }) => return Outcome::IllPosed,
        Err(e) => panic!("{e}"),
    };
    if gains.nu() > ns.nu_star {
        return Outcome::AboveBoundary;
    }
    let uc = maximize_capability(&p.objective, allowed).unwrap().u_star;
    let tolerance = match tol {
        Tolerance::Formula => epsilon_tolerance(&p.objective, ns.nu_star, &ns.u_star, &uc).unwrap(),
        Tolerance::Gap => capability_gap(&p.objective, ns.nu_star, &ns.u_star, &uc).unwrap(),
    };

    let share = fraction * tolerance / b.neighbors.len() as f64;
    let dir = match inj {
        Injection::Shortfall => -1.0,
        Injection::Surplus => 1.0,
    };
    let mut applied = Vec::new();
    let mut e = 0.0;
    for (k, &j) in b.neighbors.iter().enumerate() {
        let a = b.cross_g[k][0];
        let c = out.ledgers[node].incoming[&j];
        let um = minimal_assistance(&[a], c, &out.allowed[j]).unwrap().u[0];
        let u = if a > 0.0 { (um + dir * share / a).clamp(0.0, 0.75) } else { um };
        e += compliance(&[a], &[um], &[u]).unwrap();
        applied.push(u);
    }
    assert!(e.abs() <= tolerance.max(0.0) * (1.0 + 1e-12) + 1e-15, "injected {e} exceeds {tolerance}");

    let coupled: f64 = b.cross_g.iter().zip(&applied).map(|(a, u)| a[0] * u).sum();
    let (lo, hi) = allowed.scalar_interval().unwrap();
    let psi = |u: f64| capability_at_gain(b, gains, &[u], &[0.0], ns.nu_star).unwrap() + coupled;
    let (best, _) = grid_max_scalar(psi, lo, hi, 1e-4);
    let shift = (ns.nu_star - gains.nu()) * b.lf_h;
    let (best_literal, _) = grid_max_scalar(|u| psi(u) + shift, lo, hi, 1e-4);
    Outcome::Checked(Trial { tolerance, e, best, best_literal })
}
