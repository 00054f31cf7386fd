//! Neighbor compliance and the tolerance a node has for non-compliance.

use serde::{Deserialize, Serialize};

use crate::action_set::{AllowedActionSet, HalfSpace};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::NodeId;
use crate::optimizer::{maximize_linear, maximize_quadratic, QuadraticObjective};
use crate::scalar::{dot, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct Assistance<T> {
    pub u: Vec<T>,
    /// `a·u` hits the commitment exactly.
    pub exact: bool,
    /// The level set holds more than one point.
    pub multiple: bool,
}

fn min_norm<T: Real>(set: &AllowedActionSet<T>) -> Result<Vec<T>> {
    let m = set.dim();
    let neg_identity = {
        let mut q = Matrix::identity(m);
        for k in 0..m {
            q[(k, k)] = -T::one();
        }
        q
    };
    Ok(maximize_quadratic(&neg_identity, &vec![T::zero(); m], T::zero(), set)?.u_star)
}

fn level_set<T: Real>(allowed: &AllowedActionSet<T>, gain: &[T], level: T) -> Result<AllowedActionSet<T>> {
    let mut set = allowed.clone();
    set.push(HalfSpace::at_least(gain.to_vec(), level, None))?;
    set.push(HalfSpace::at_least(gain.iter().map(|&a| -a).collect(), -level, None))?;
    Ok(set)
}

/// Minimum-norm `u ∈ Ū_j` with `a_ij·u = commitment`. If no member reaches the
/// commitment exactly, the level closest to it is used instead.
pub fn minimal_assistance<T: Real>(gain: &[T], commitment: T, allowed: &AllowedActionSet<T>) -> Result<Assistance<T>> {
    if gain.len() != allowed.dim() {
        return Err(Error::Structure(format!("gain has length {}, control dimension is {}", gain.len(), allowed.dim())));
    }
    let hi = maximize_linear(gain, allowed)?.value;
    let neg: Vec<T> = gain.iter().map(|&a| -a).collect();
    let lo = -maximize_linear(&neg, allowed)?.value;
    let tol = T::base_tol() * (T::one() + commitment.abs());
    let (level, exact) = if commitment > hi + tol {
        (hi, false)
    } else if commitment < lo - tol {
        (lo, false)
    } else {
        (commitment.max(lo).min(hi), true)
    };
    let set = level_set(allowed, gain, level)?;
    let u = min_norm(&set)?;
    let (clo, chi) = set.coordinate_bounds()?;
    let spread = T::base_tol().sqrt();
    let multiple = clo.iter().zip(&chi).any(|(&l, &h)| h - l > spread);
    Ok(Assistance { u, exact, multiple })
}

/// `e_ij = a_ij·(u_j^m − u_j)`.
pub fn compliance<T: Real>(gain: &[T], u_min: &[T], u_actual: &[T]) -> Result<T> {
    if gain.len() != u_min.len() || gain.len() != u_actual.len() {
        return Err(Error::Structure("compliance inputs have mismatched lengths".into()));
    }
    Ok(gain.iter().zip(u_min.iter().zip(u_actual)).map(|(&a, (&m, &u))| a * (m - u)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComplianceSign {
    /// `a·(u^m − u)`: over-delivery is negative. Config value `paper`.
    #[default]
    #[serde(rename = "paper")]
    RequestedMinusDelivered,
    /// `a·(u − u^m)`: over-delivery is positive.
    DeliveredMinusRequested,
}

impl ComplianceSign {
    pub fn display<T: Real>(self, e: T) -> T {
        match self {
            ComplianceSign::RequestedMinusDelivered => e,
            ComplianceSign::DeliveredMinusRequested => -e,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeCompliance<T> {
    pub neighbor: NodeId,
    pub u_min: Vec<T>,
    pub u_actual: Vec<T>,
    pub e: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplianceRecord<T> {
    pub node: NodeId,
    pub edges: Vec<EdgeCompliance<T>>,
    /// `e_i = Σ_j e_ij`.
    pub total: T,
}

impl<T: Real> ComplianceRecord<T> {
    pub fn new(node: NodeId, edges: Vec<EdgeCompliance<T>>) -> Self {
        let total = edges.iter().map(|e| e.e).sum();
        Self { node, edges, total }
    }
}

/// Tolerance `ε_i` for neighborhood non-compliance at gain `ν = obj.nu()`,
/// given the boundary gain `nu_star`, the linear maximizer `u_star` and the
/// capability maximizer `u_c` at `ν`. Zero once `ν >= ν*`.
pub fn epsilon_tolerance<T: Real>(obj: &QuadraticObjective<T>, nu_star: T, u_star: &[T], u_c: &[T]) -> Result<T> {
    let m = obj.dim();
    if u_star.len() != m || u_c.len() != m {
        return Err(Error::Structure("maximizers do not match the control dimension".into()));
    }
    let nu = obj.nu();
    if nu >= nu_star {
        let agree = u_star.iter().zip(u_c).all(|(&a, &b)| (a - b).abs() <= T::lit(1e-9));
        if !agree {
            return Err(Error::Consistency(format!(
                "gain {nu} is at or above the boundary {nu_star} but the capability and linear maximizers differ"
            )));
        }
        return Ok(T::zero());
    }
    let d: Vec<T> = u_star.iter().zip(u_c).map(|(&a, &b)| a - b).collect();
    let lg = obj.lg_h();
    let rate = obj.rate();
    let rate_gap = dot(lg, &rate.eval(u_star)) - dot(lg, &rate.eval(u_c));
    Ok(obj.q_mat().quad_form(&d) + dot(obj.q(), &d) + rate_gap + nu_star * dot(lg, u_star) - nu * dot(lg, u_c))
}

/// Exact capability difference `c_i(u*, ν*) − c_i(u^c, ν)` over the
/// control-dependent terms. Differs from [`epsilon_tolerance`] in the quadratic
/// part: `u*ᵀQu* − u^cᵀQu^c` rather than `(u* − u^c)ᵀQ(u* − u^c)`.
pub fn capability_gap<T: Real>(obj: &QuadraticObjective<T>, nu_star: T, u_star: &[T], u_c: &[T]) -> Result<T> {
    let m = obj.dim();
    if u_star.len() != m || u_c.len() != m {
        return Err(Error::Structure("maximizers do not match the control dimension".into()));
    }
    let at = |u: &[T], nu: T| obj.with_nu(nu).eval(u);
    Ok(at(u_star, nu_star) - at(u_c, obj.nu()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResilienceReport<T> {
    pub epsilon: T,
    pub e: T,
    pub within_bound: bool,
    pub nu: T,
    pub nu_star: T,
}

/// Non-compliance is absorbed when `e_i >= 0` or `|e_i| <= ε_i`.
pub fn check_resilience<T: Real>(e: T, epsilon: T, nu: T, nu_star: T) -> ResilienceReport<T> {
    check_resilience_oriented(e, epsilon, nu, nu_star, ComplianceSign::RequestedMinusDelivered)
}

/// As [`check_resilience`], with the sign rule applied to `sign.display(e)`.
/// Under [`ComplianceSign::DeliveredMinusRequested`] a shortfall is what must
/// stay within `ε_i`. The report keeps `e` in the `a·(u^m − u)` orientation.
pub fn check_resilience_oriented<T: Real>(e: T, epsilon: T, nu: T, nu_star: T, sign: ComplianceSign) -> ResilienceReport<T> {
    let shown = sign.display(e);
    ResilienceReport { epsilon, e, within_bound: shown >= T::zero() || shown.abs() <= epsilon, nu, nu_star }
}

impl<T: Real> ResilienceReport<T> {
    pub const CSV_HEADER: [&'static str; 7] = ["t", "i", "e_i", "epsilon_i", "nu_i", "nu_star_i", "within_bound"];

    pub fn csv_record(&self, t: T, label: usize, sign: ComplianceSign) -> Vec<String> {
        vec![
            crate::export::fmt_num(t),
            label.to_string(),
            crate::export::fmt_num(sign.display(self.e)),
            crate::export::fmt_num(self.epsilon),
            crate::export::fmt_num(self.nu),
            crate::export::fmt_num(self.nu_star),
            self.within_bound.to_string(),
        ]
    }
}
