//! Exact maximization of linear and quadratic objectives over allowed action
//! sets, and the grid search for the resilience boundary `ν*`.
//!
//! Quadratic programs are solved by enumerating KKT candidates: for every
//! subset `S` of at most `M` constraints, the stationary point of the
//! objective on the affine hull `{A_S u + b_S = 0}` is computed from the
//! bordered system `[[2Q, A_Sᵀ], [A_S, 0]]`. Because the feasible region is a
//! bounded polytope, the global maximum is attained at one of these points
//! regardless of the curvature of `Q`.

use std::cmp::Ordering;

use itertools::Itertools;
use serde::Serialize;

use crate::action_set::AllowedActionSet;
use crate::barrier::{capability_constant, ClassKParams, ControlRate, LieBundle};
use crate::error::{Error, Result};
use crate::linalg::{solve, Matrix};
use crate::scalar::{dot, Real};

/// Largest control dimension handled by the enumeration.
pub const ENUMERATION_LIMIT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Location {
    Interior,
    Face,
    Vertex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaximizerResult<T> {
    pub u_star: Vec<T>,
    pub value: T,
    pub location: Location,
    /// False when another feasible point attains the same value.
    pub unique: bool,
}

/// Capability as a function of `u`:
/// `uᵀQu + (q + ν·L_g h)·u + L_g h·d(u) + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective<T> {
    q_mat: Matrix<T>,
    q: Vec<T>,
    lg_h: Vec<T>,
    nu: T,
    rate: ControlRate<T>,
    constant: T,
}

impl<T: Real> QuadraticObjective<T> {
    pub fn new(q_mat: Matrix<T>, q: Vec<T>, lg_h: Vec<T>, nu: T, rate: ControlRate<T>, constant: T) -> Result<Self> {
        let m = q.len();
        if q_mat.rows() != m || q_mat.cols() != m || lg_h.len() != m || rate.offset.len() != m {
            return Err(Error::Structure(format!("quadratic objective shapes disagree with control dimension {m}")));
        }
        Ok(Self { q_mat: q_mat.symmetrized(), q, lg_h, nu, rate, constant })
    }

    /// The capability program of a Lie bundle: its value at `u` equals
    /// [`crate::barrier::capability`] with `d(u)` given by `rate`.
    pub fn from_bundle(bundle: &LieBundle<T>, params: &ClassKParams<T>, rate: &ControlRate<T>) -> Result<Self> {
        Self::new(
            bundle.lg2_h.clone(),
            bundle.q_linear(),
            bundle.lg_h.clone(),
            params.nu(),
            rate.clone(),
            capability_constant(bundle, params),
        )
    }

    /// Same program with the control gain `ν·L_g h·u` evaluated at `nu`.
    pub fn with_nu(&self, nu: T) -> Self {
        Self { nu, ..self.clone() }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn nu(&self) -> T {
        self.nu
    }

    pub fn q_mat(&self) -> &Matrix<T> {
        &self.q_mat
    }

    pub fn q(&self) -> &[T] {
        &self.q
    }

    pub fn lg_h(&self) -> &[T] {
        &self.lg_h
    }

    pub fn rate(&self) -> &ControlRate<T> {
        &self.rate
    }

    /// Total linear coefficient `q + (ν + slope)·L_g h`.
    pub fn linear(&self) -> Vec<T> {
        let g = self.nu + self.rate.slope;
        self.q.iter().zip(&self.lg_h).map(|(&q, &l)| q + g * l).collect()
    }

    /// Control-independent part, including `L_g h·offset`.
    pub fn offset(&self) -> T {
        self.constant + dot(&self.lg_h, &self.rate.offset)
    }

    pub fn eval(&self, u: &[T]) -> T {
        self.q_mat.quad_form(u) + dot(&self.linear(), u) + self.offset()
    }
}

/// Maximizes `gradient·u`. On a pure box the maximizer is picked per
/// coordinate (upper bound for positive entries, lower bound otherwise).
pub fn maximize_linear<T: Real>(gradient: &[T], feasible: &AllowedActionSet<T>) -> Result<MaximizerResult<T>> {
    if gradient.len() != feasible.dim() {
        return Err(Error::Structure(format!(
            "gradient has length {}, control dimension is {}",
            gradient.len(),
            feasible.dim()
        )));
    }
    if feasible.halfspaces().is_empty() {
        let b = feasible.control_box();
        let u: Vec<T> = gradient
            .iter()
            .enumerate()
            .map(|(k, &g)| if g > T::zero() { b.hi()[k] } else { b.lo()[k] })
            .collect();
        let degenerate = b.lo().iter().zip(b.hi()).all(|(l, h)| l == h);
        let unique = degenerate || gradient.iter().zip(b.lo().iter().zip(b.hi())).all(|(g, (l, h))| !g.is_zero() || l == h);
        return Ok(MaximizerResult {
            value: dot(gradient, &u),
            location: Location::Vertex,
            unique,
            u_star: u,
        });
    }
    let m = feasible.dim();
    maximize_quadratic(&Matrix::zeros(m, m), gradient, T::zero(), feasible)
}

/// Maximizes the capability program over `feasible`.
pub fn maximize_capability<T: Real>(
    obj: &QuadraticObjective<T>,
    feasible: &AllowedActionSet<T>,
) -> Result<MaximizerResult<T>> {
    if obj.dim() != feasible.dim() {
        return Err(Error::Structure(format!(
            "objective has dimension {}, allowed set has {}",
            obj.dim(),
            feasible.dim()
        )));
    }
    maximize_quadratic(obj.q_mat(), &obj.linear(), obj.offset(), feasible)
}

fn lex_cmp<T: Real>(a: &[T], b: &[T], tol: T) -> Ordering {
    for (&x, &y) in a.iter().zip(b) {
        if (x - y).abs() > tol {
            return x.partial_cmp(&y).unwrap_or(Ordering::Equal);
        }
    }
    Ordering::Equal
}

/// Global maximizer of `uᵀQu + lin·u + constant` (Q symmetric) by KKT enumeration.
pub fn maximize_quadratic<T: Real>(
    q_mat: &Matrix<T>,
    lin: &[T],
    constant: T,
    feasible: &AllowedActionSet<T>,
) -> Result<MaximizerResult<T>> {
    let m = feasible.dim();
    if m > ENUMERATION_LIMIT {
        return Err(Error::UnsupportedDimension { dim: m, limit: ENUMERATION_LIMIT });
    }
    if !q_mat.is_finite() || !crate::scalar::all_finite(lin) {
        return Err(Error::NumericalDomain { term: "capability objective".into() });
    }
    let rows = feasible.constraint_rows();
    let tol = T::base_tol();
    let two = T::lit(2.0);
    let pivot_tol = T::epsilon() * T::lit(64.0);
    let bounds = feasible.control_box();

    let slack_tol = |a: &[T], b: T, u: &[T]| {
        let scale = T::one() + b.abs() + a.iter().zip(u).map(|(&x, &y)| (x * y).abs()).sum::<T>();
        tol * scale
    };

    let mut candidates: Vec<Vec<T>> = Vec::new();
    for size in 0..=m {
        for subset in (0..rows.len()).combinations(size) {
            let n = m + size;
            let mut k = Matrix::zeros(n, n);
            let mut rhs = vec![T::zero(); n];
            for r in 0..m {
                for c in 0..m {
                    k[(r, c)] = two * q_mat[(r, c)];
                }
                rhs[r] = -lin[r];
            }
            for (s, &row) in subset.iter().enumerate() {
                let (a, b) = &rows[row];
                for c in 0..m {
                    k[(m + s, c)] = a[c];
                    k[(c, m + s)] = a[c];
                }
                rhs[m + s] = -*b;
            }
            let Some(sol) = solve(&k, &rhs, pivot_tol) else {
                continue;
            };
            let u = bounds.clamp(&sol[..m]);
            if rows.iter().all(|(a, b)| dot(a, &u) + *b >= -slack_tol(a, *b, &u)) {
                candidates.push(u);
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::Infeasible { context: None });
    }

    let eval = |u: &[T]| q_mat.quad_form(u) + dot(lin, u) + constant;
    let values: Vec<T> = candidates.iter().map(|u| eval(u)).collect();
    let best = values.iter().copied().fold(T::neg_infinity(), T::max);
    let scale = T::one() + best.abs() + lin.iter().map(|v| v.abs()).sum::<T>() + q_mat.max_abs();
    let value_tol = tol * scale;
    let point_tol = tol.sqrt();

    let mut tied: Vec<&Vec<T>> = candidates.iter().zip(&values).filter(|(_, &v)| v >= best - value_tol).map(|(u, _)| u).collect();
    tied.sort_by(|a, b| lex_cmp(a, b, T::zero()));
    let chosen = tied[0].clone();
    let unique = tied.iter().all(|u| lex_cmp(u, &chosen, point_tol) == Ordering::Equal);

    let active = rows.iter().filter(|(a, b)| (dot(a, &chosen) + *b).abs() <= slack_tol(a, *b, &chosen)).count();
    let location = match active {
        0 => Location::Interior,
        c if c >= m => Location::Vertex,
        _ => Location::Face,
    };
    Ok(MaximizerResult { value: eval(&chosen), u_star: chosen, location, unique })
}

/// Options of the `ν*` grid search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuStarOptions<T> {
    pub delta_nu: T,
    pub nu_max: T,
    /// Componentwise tolerance for argmax agreement.
    pub agreement_tol: T,
    /// Keep scanning past the first crossing to report whether agreement
    /// holds on every remaining grid point.
    pub check_contiguity: bool,
}

impl<T: Real> NuStarOptions<T> {
    pub fn new(delta_nu: T, nu_max: T) -> Self {
        Self { delta_nu, nu_max, agreement_tol: T::lit(1e-9), check_contiguity: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuStar<T> {
    pub nu_star: T,
    /// Agreement never occurred on the grid; `nu_star` is `nu_max`.
    pub saturated: bool,
    pub contiguous: Option<bool>,
    /// The linear maximizer `u*`.
    pub u_star: Vec<T>,
    pub grid_index: usize,
}

fn agrees<T: Real>(a: &[T], b: &[T], tol: T) -> bool {
    a.iter().zip(b).all(|(&x, &y)| (x - y).abs() <= tol)
}

/// Smallest `ν = k·δν` at which the capability argmax equals the linear
/// argmax `u* = argmax L_g h·u`.
pub fn find_nu_star<T: Real>(
    obj: &QuadraticObjective<T>,
    feasible: &AllowedActionSet<T>,
    opts: &NuStarOptions<T>,
) -> Result<NuStar<T>> {
    if !(opts.delta_nu > T::zero()) || !opts.delta_nu.is_finite() {
        return Err(Error::Argument(format!("delta_nu must be > 0, got {}", opts.delta_nu)));
    }
    if !(opts.nu_max >= T::zero()) || !opts.nu_max.is_finite() {
        return Err(Error::Argument(format!("nu_max must be finite and >= 0, got {}", opts.nu_max)));
    }
    let lin = maximize_linear(obj.lg_h(), feasible)?;
    if !lin.unique {
        let coordinate = obj.lg_h().iter().position(|v| v.is_zero()).unwrap_or(0);
        return Err(Error::IllPosed { coordinate });
    }
    let u_star = lin.u_star;
    let steps = (opts.nu_max / opts.delta_nu * (T::one() + T::epsilon() * T::lit(8.0)))
        .floor()
        .to_usize()
        .ok_or_else(|| Error::Argument("nu grid too large".into()))?;

    let agrees_at = |k: usize| -> Result<bool> {
        let nu = T::from_usize_lossy(k) * opts.delta_nu;
        let r = maximize_capability(&obj.with_nu(nu), feasible)?;
        Ok(agrees(&r.u_star, &u_star, opts.agreement_tol))
    };

    for k in 0..=steps {
        if agrees_at(k)? {
            let contiguous = if opts.check_contiguity {
                let mut all = true;
                for rest in k + 1..=steps {
                    if !agrees_at(rest)? {
                        all = false;
                        break;
                    }
                }
                Some(all)
            } else {
                None
            };
            return Ok(NuStar {
                nu_star: T::from_usize_lossy(k) * opts.delta_nu,
                saturated: false,
                contiguous,
                u_star,
                grid_index: k,
            });
        }
    }
    Ok(NuStar { nu_star: opts.nu_max, saturated: true, contiguous: None, u_star, grid_index: steps })
}
