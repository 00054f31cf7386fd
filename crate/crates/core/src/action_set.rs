//! Allowed action sets: a control box intersected with commitment half-spaces.

use crate::error::{Error, Result};
use crate::network::{ControlBox, NodeId};
use crate::scalar::{dot, Real};

/// `normal·u + offset >= 0`, optionally tagged with the node it serves.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace<T> {
    pub normal: Vec<T>,
    pub offset: T,
    pub source: Option<NodeId>,
}

impl<T: Real> HalfSpace<T> {
    pub fn eval(&self, u: &[T]) -> T {
        dot(&self.normal, u) + self.offset
    }

    /// Half-space `a·u >= level`.
    pub fn at_least(normal: Vec<T>, level: T, source: Option<NodeId>) -> Self {
        Self { normal, offset: -level, source }
    }
}

/// Closed convex polytope `U ∩ ⋂ H_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AllowedActionSet<T> {
    bounds: ControlBox<T>,
    halfspaces: Vec<HalfSpace<T>>,
}

impl<T: Real> AllowedActionSet<T> {
    pub fn from_box(bounds: ControlBox<T>) -> Self {
        Self { bounds, halfspaces: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn control_box(&self) -> &ControlBox<T> {
        &self.bounds
    }

    pub fn halfspaces(&self) -> &[HalfSpace<T>] {
        &self.halfspaces
    }

    pub fn push(&mut self, hs: HalfSpace<T>) -> Result<()> {
        if hs.normal.len() != self.dim() {
            return Err(Error::Structure(format!(
                "half-space normal has length {}, control dimension is {}",
                hs.normal.len(),
                self.dim()
            )));
        }
        self.halfspaces.push(hs);
        Ok(())
    }

    /// Drops every half-space tagged with `source`.
    pub fn remove_source(&mut self, source: NodeId) {
        self.halfspaces.retain(|h| h.source != Some(source));
    }

    /// Replaces the half-spaces tagged with `source` by `hs` (if any).
    pub fn replace_source(&mut self, source: NodeId, hs: Option<HalfSpace<T>>) -> Result<()> {
        self.remove_source(source);
        match hs {
            Some(h) => self.push(h),
            None => Ok(()),
        }
    }

    /// Copy without the half-spaces tagged with `source`.
    pub fn without_source(&self, source: NodeId) -> Self {
        let mut out = self.clone();
        out.remove_source(source);
        out
    }

    pub fn contains(&self, u: &[T], tol: T) -> bool {
        self.bounds.contains(u, tol) && self.halfspaces.iter().all(|h| h.eval(u) >= -tol)
    }

    /// Constraint rows `A u + b >= 0`: lower bounds, upper bounds, then half-spaces.
    pub(crate) fn constraint_rows(&self) -> Vec<(Vec<T>, T)> {
        let m = self.dim();
        let mut rows = Vec::with_capacity(2 * m + self.halfspaces.len());
        for k in 0..m {
            let mut e = vec![T::zero(); m];
            e[k] = T::one();
            rows.push((e, -self.bounds.lo()[k]));
        }
        for k in 0..m {
            let mut e = vec![T::zero(); m];
            e[k] = -T::one();
            rows.push((e, self.bounds.hi()[k]));
        }
        for h in &self.halfspaces {
            rows.push((h.normal.clone(), h.offset));
        }
        rows
    }

    /// For a scalar control, the feasible interval; `None` when empty.
    pub fn scalar_interval(&self) -> Option<(T, T)> {
        assert_eq!(self.dim(), 1, "scalar_interval needs a one-dimensional control");
        let mut lo = self.bounds.lo()[0];
        let mut hi = self.bounds.hi()[0];
        for h in &self.halfspaces {
            let a = h.normal[0];
            if a > T::zero() {
                lo = lo.max(-h.offset / a);
            } else if a < T::zero() {
                hi = hi.min(-h.offset / a);
            } else if h.offset < T::zero() {
                return None;
            }
        }
        if lo <= hi + T::base_tol() * (T::one() + hi.abs()) {
            Some((lo.min(hi), hi))
        } else {
            None
        }
    }

    pub fn is_empty(&self) -> Result<bool> {
        if self.dim() == 1 {
            return Ok(self.scalar_interval().is_none());
        }
        let zero = vec![T::zero(); self.dim()];
        match crate::optimizer::maximize_linear(&zero, self) {
            Ok(_) => Ok(false),
            Err(Error::Infeasible { .. }) => Ok(true),
            Err(e) => Err(e),
        }
    }

    /// Per-coordinate bounds of the set (the box bounds tightened by the
    /// half-spaces), used for reporting.
    pub fn coordinate_bounds(&self) -> Result<(Vec<T>, Vec<T>)> {
        let m = self.dim();
        let mut lo = Vec::with_capacity(m);
        let mut hi = Vec::with_capacity(m);
        for k in 0..m {
            let mut e = vec![T::zero(); m];
            e[k] = T::one();
            hi.push(crate::optimizer::maximize_linear(&e, self)?.value);
            e[k] = -T::one();
            lo.push(-crate::optimizer::maximize_linear(&e, self)?.value);
        }
        Ok((lo, hi))
    }
}
