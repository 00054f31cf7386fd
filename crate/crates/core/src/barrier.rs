//! Lie-derivative calculus over networked control-affine dynamics and the
//! second-order barrier chain built on it.
//!
//! For node `i` with dynamics `ẋ_i = f_i(x_i, x_in) + g_i(x_i) u_i` and barrier
//! `h_i(x_i)`, the bundle collects every first- and second-order Lie term that
//! appears in `ḧ_i`. Neighbor controls enter `ḧ_i` only through the coupling
//! gains `a_ij = L_{g_j} L_{f_i} h_i`; everything else is grouped into the
//! capability `c_i(u_i)`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{NetworkGraph, NetworkState, NodeId};
use crate::scalar::{dot, Real};

/// Networked control-affine dynamics with analytic derivatives.
pub trait NetworkDynamics<T: Real>: Send + Sync {
    fn graph(&self) -> &NetworkGraph;

    /// Drift `f_i` at the current network state. Implementations read only
    /// `x_i` and the states of `i`'s incoming neighbors.
    fn drift(&self, i: NodeId, state: &NetworkState<T>) -> Vec<T>;

    /// Input map `g_i(x_i)`, an `N_i × M_i` matrix.
    fn input_map(&self, i: NodeId, x_i: &[T]) -> Matrix<T>;

    /// `∂f_i / ∂x_wrt` (`N_i × N_wrt`) for `wrt = i` or an incoming neighbor.
    fn drift_jacobian(&self, i: NodeId, state: &NetworkState<T>, wrt: NodeId) -> Matrix<T>;

    /// `∂g_i / ∂x_i[k]` for each state coordinate `k`, each `N_i × M_i`.
    fn input_map_jacobian(&self, i: NodeId, x_i: &[T]) -> Vec<Matrix<T>>;

    /// Maps a state back into the model's domain after an integration step.
    /// Returns how many components were changed.
    fn project(&self, _state: &mut NetworkState<T>) -> usize {
        0
    }
}

/// Node-level constraint function `h_i`; the safe set is `h_i >= 0`.
pub trait BarrierFunction<T: Real>: Send + Sync {
    fn value(&self, x_i: &[T]) -> T;
    fn gradient(&self, x_i: &[T]) -> Vec<T>;
    fn hessian(&self, x_i: &[T]) -> Matrix<T>;
}

/// Linear class-K gains `η_i(z) = η z`, `κ_i(z) = κ z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassKParams<T> {
    eta: T,
    kappa: T,
    nu: T,
}

impl<T: Real> ClassKParams<T> {
    pub fn new(eta: T, kappa: T) -> Result<Self> {
        if !(eta.is_finite() && kappa.is_finite()) || eta < T::zero() || kappa < T::zero() {
            return Err(Error::Argument(format!("class-K gains must be finite and >= 0 (eta={eta}, kappa={kappa})")));
        }
        Ok(Self { eta, kappa, nu: eta + kappa })
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    pub fn kappa(&self) -> T {
        self.kappa
    }

    /// `ν = η + κ`.
    pub fn nu(&self) -> T {
        self.nu
    }
}

/// Affine model of the control rate, `d(u) = slope·u + offset`, standing in
/// for `u̇_i`. Zero, decay and backward-difference policies all have this form.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlRate<T> {
    pub slope: T,
    pub offset: Vec<T>,
}

impl<T: Real> ControlRate<T> {
    pub fn zero(dim: usize) -> Self {
        Self { slope: T::zero(), offset: vec![T::zero(); dim] }
    }

    pub fn eval(&self, u: &[T]) -> Vec<T> {
        u.iter().zip(&self.offset).map(|(&v, &o)| self.slope * v + o).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.slope.is_zero() && self.offset.iter().all(|v| v.is_zero())
    }
}

/// All Lie terms of `ḧ_i` evaluated at one network state.
#[derive(Debug, Clone, PartialEq)]
pub struct LieBundle<T> {
    pub node: NodeId,
    /// `h_i(x_i)`.
    pub h: T,
    /// `L_{f_i} h_i`.
    pub lf_h: T,
    /// `L_{g_i} h_i`, length `M_i`.
    pub lg_h: Vec<T>,
    /// `L²_{f_i} h_i`.
    pub lf2_h: T,
    /// `L²_{g_i} h_i`, `M_i × M_i`.
    pub lg2_h: Matrix<T>,
    /// `L_{f_i} L_{g_i} h_i`, length `M_i`.
    pub lf_lg_h: Vec<T>,
    /// `L_{g_i} L_{f_i} h_i`, length `M_i`.
    pub lg_lf_h: Vec<T>,
    /// Incoming neighbors, ascending; `cross_f` and `cross_g` are aligned with it.
    pub neighbors: Vec<NodeId>,
    /// `L_{f_j} L_{f_i} h_i` per incoming neighbor.
    pub cross_f: Vec<T>,
    /// `a_ij = L_{g_j} L_{f_i} h_i` per incoming neighbor, length `M_j`.
    pub cross_g: Vec<Vec<T>>,
}

impl<T: Real> LieBundle<T> {
    pub fn control_dim(&self) -> usize {
        self.lg_h.len()
    }

    /// Coupling gain `a_ij`: how neighbor `j`'s control enters `ψ²_i`.
    pub fn coupling_gain(&self, j: NodeId) -> Result<&[T]> {
        self.neighbors
            .iter()
            .position(|&k| k == j)
            .map(|p| self.cross_g[p].as_slice())
            .ok_or(Error::NotIncomingNeighbor { node: j, of: self.node })
    }

    pub fn gains(&self) -> BTreeMap<NodeId, Vec<T>> {
        self.neighbors.iter().copied().zip(self.cross_g.iter().cloned()).collect()
    }

    /// `q_i = L_f L_g h + L_g L_f h`, the linear coefficient shared by the
    /// capability and the quadratic program.
    pub fn q_linear(&self) -> Vec<T> {
        self.lf_lg_h.iter().zip(&self.lg_lf_h).map(|(&a, &b)| a + b).collect()
    }

    fn check_control(&self, u: &[T], what: &str) -> Result<()> {
        if u.len() != self.control_dim() {
            return Err(Error::Structure(format!(
                "{what} has length {}, node {} has control dimension {}",
                u.len(),
                self.node,
                self.control_dim()
            )));
        }
        Ok(())
    }

    fn check_neighbor_controls(&self, neighbor_u: &[Vec<T>]) -> Result<()> {
        if neighbor_u.len() != self.neighbors.len() {
            return Err(Error::Structure(format!(
                "expected controls for {} incoming neighbors, got {}",
                self.neighbors.len(),
                neighbor_u.len()
            )));
        }
        for ((j, a), u) in self.neighbors.iter().zip(&self.cross_g).zip(neighbor_u) {
            if a.len() != u.len() {
                return Err(Error::Structure(format!("control of neighbor {j} has length {}, expected {}", u.len(), a.len())));
            }
        }
        Ok(())
    }
}

/// Evaluates the Lie bundle of node `i` at `state`.
pub fn lie_bundle<T, D, B>(model: &D, barrier: &B, state: &NetworkState<T>, i: NodeId) -> Result<LieBundle<T>>
where
    T: Real,
    D: NetworkDynamics<T> + ?Sized,
    B: BarrierFunction<T> + ?Sized,
{
    let graph = model.graph();
    state.check_against(graph)?;
    let neighbors = graph.in_neighbors(i)?.to_vec();
    let dims = graph.dims(i)?;
    let x_i = state.node(i);

    let h = barrier.value(x_i);
    let grad = barrier.gradient(x_i);
    let hess = barrier.hessian(x_i);
    let f_i = model.drift(i, state);
    let g_i = model.input_map(i, x_i);
    let j_ii = model.drift_jacobian(i, state, i);
    let dg = model.input_map_jacobian(i, x_i);
    if grad.len() != dims.state
        || f_i.len() != dims.state
        || g_i.rows() != dims.state
        || g_i.cols() != dims.control
        || dg.len() != dims.state
    {
        return Err(Error::Structure(format!("model or barrier shapes inconsistent for node {i}")));
    }

    let lf_h = dot(&grad, &f_i);
    let lg_h = g_i.vec_mul(&grad);

    // ∂(L_f h)/∂x_i = (H f_i)ᵀ + ∇hᵀ ∂f_i/∂x_i
    let hf = hess.mul_vec(&f_i);
    let grad_lf_self: Vec<T> = hf.iter().zip(j_ii.vec_mul(&grad)).map(|(&a, b)| a + b).collect();
    let lf2_h = dot(&grad_lf_self, &f_i);
    let lg_lf_h = g_i.vec_mul(&grad_lf_self);

    // D[m][k] = ∂(L_g h)_m / ∂x_i[k] = Σ_l H[l][k] g[l][m] + Σ_l ∇h[l] ∂g[l][m]/∂x_k
    let m_i = dims.control;
    let mut d_lg = Matrix::zeros(m_i, dims.state);
    for m in 0..m_i {
        for k in 0..dims.state {
            let mut v = T::zero();
            for l in 0..dims.state {
                v = v + hess[(l, k)] * g_i[(l, m)] + grad[l] * dg[k][(l, m)];
            }
            d_lg[(m, k)] = v;
        }
    }
    let lf_lg_h = d_lg.mul_vec(&f_i);
    let lg2_h = d_lg.mul(&g_i);

    let mut cross_f = Vec::with_capacity(neighbors.len());
    let mut cross_g = Vec::with_capacity(neighbors.len());
    for &j in &neighbors {
        let j_ij = model.drift_jacobian(i, state, j);
        let grad_lf_j = j_ij.vec_mul(&grad);
        let f_j = model.drift(j, state);
        let g_j = model.input_map(j, state.node(j));
        cross_f.push(dot(&grad_lf_j, &f_j));
        cross_g.push(g_j.vec_mul(&grad_lf_j));
    }

    let bundle = LieBundle { node: i, h, lf_h, lg_h, lf2_h, lg2_h, lf_lg_h, lg_lf_h, neighbors, cross_f, cross_g };
    check_finite(&bundle)?;
    Ok(bundle)
}

fn check_finite<T: Real>(b: &LieBundle<T>) -> Result<()> {
    let bad = |term: &str| Err(Error::NumericalDomain { term: format!("{term} (node {})", b.node) });
    if !b.h.is_finite() {
        return bad("h");
    }
    if !b.lf_h.is_finite() {
        return bad("L_f h");
    }
    if !crate::scalar::all_finite(&b.lg_h) {
        return bad("L_g h");
    }
    if !b.lf2_h.is_finite() {
        return bad("L_f^2 h");
    }
    if !b.lg2_h.is_finite() {
        return bad("L_g^2 h");
    }
    if !crate::scalar::all_finite(&b.lf_lg_h) {
        return bad("L_f L_g h");
    }
    if !crate::scalar::all_finite(&b.lg_lf_h) {
        return bad("L_g L_f h");
    }
    for (j, (cf, cg)) in b.neighbors.iter().zip(b.cross_f.iter().zip(&b.cross_g)) {
        if !cf.is_finite() {
            return bad(&format!("L_f{j} L_f h"));
        }
        if !crate::scalar::all_finite(cg) {
            return bad(&format!("a_i{j}"));
        }
    }
    Ok(())
}

/// `ḣ_i = L_f h + L_g h · u_i`.
pub fn h_dot<T: Real>(bundle: &LieBundle<T>, u: &[T]) -> Result<T> {
    bundle.check_control(u, "u_i")?;
    Ok(bundle.lf_h + dot(&bundle.lg_h, u))
}

/// `ψ¹_i = ḣ_i + η h_i`.
pub fn psi1<T: Real>(bundle: &LieBundle<T>, params: &ClassKParams<T>, u: &[T]) -> Result<T> {
    Ok(h_dot(bundle, u)? + params.eta() * bundle.h)
}

/// `ḧ_i` assembled term by term from the second-derivative expansion, with
/// `u̇_i` given as `d_u`.
pub fn h_ddot<T: Real>(bundle: &LieBundle<T>, u: &[T], neighbor_u: &[Vec<T>], d_u: &[T]) -> Result<T> {
    bundle.check_control(u, "u_i")?;
    bundle.check_control(d_u, "d(u_i)")?;
    bundle.check_neighbor_controls(neighbor_u)?;
    let neighborhood: T = bundle
        .cross_f
        .iter()
        .zip(&bundle.cross_g)
        .zip(neighbor_u)
        .map(|((&cf, a), uj)| cf + dot(a, uj))
        .sum();
    let mixed = dot(&bundle.lf_lg_h, u) + dot(&bundle.lg_lf_h, u);
    Ok(neighborhood + bundle.lf2_h + bundle.lg2_h.quad_form(u) + dot(&bundle.lg_h, d_u) + mixed)
}

/// `ψ²_i = ḧ_i + η ḣ_i + κ (ḣ_i + η h_i)`, evaluated directly from the chain
/// definition (linear gains, so `d/dt[η h] = η ḣ`).
pub fn psi2<T: Real>(
    bundle: &LieBundle<T>,
    params: &ClassKParams<T>,
    u: &[T],
    neighbor_u: &[Vec<T>],
    d_u: &[T],
) -> Result<T> {
    let hd = h_dot(bundle, u)?;
    let hdd = h_ddot(bundle, u, neighbor_u, d_u)?;
    Ok(hdd + params.eta() * hd + params.kappa() * (hd + params.eta() * bundle.h))
}

/// Part of the capability that does not depend on `u_i`:
/// `Σ_j L_fj L_f h + L²_f h + κη h + ν L_f h`.
pub fn capability_constant<T: Real>(bundle: &LieBundle<T>, params: &ClassKParams<T>) -> T {
    let cross: T = bundle.cross_f.iter().copied().sum();
    cross + bundle.lf2_h + params.kappa() * params.eta() * bundle.h + params.nu() * bundle.lf_h
}

/// Capability `c_i(u_i)`: every `ψ²_i` term not involving neighbor controls.
pub fn capability<T: Real>(bundle: &LieBundle<T>, params: &ClassKParams<T>, u: &[T], d_u: &[T]) -> Result<T> {
    bundle.check_control(u, "u_i")?;
    bundle.check_control(d_u, "d(u_i)")?;
    let lin: T = bundle
        .q_linear()
        .iter()
        .zip(&bundle.lg_h)
        .zip(u)
        .map(|((&q, &lg), &v)| (q + params.nu() * lg) * v)
        .sum();
    Ok(capability_constant(bundle, params) + bundle.lg2_h.quad_form(u) + dot(&bundle.lg_h, d_u) + lin)
}

/// Capability with the control gain `ν·L_g h·u` evaluated at `nu_alt` instead
/// of the configured `ν`; the drift terms keep the configured gains. This is
/// the quantity compared against when a node switches to its boundary gain.
pub fn capability_at_gain<T: Real>(
    bundle: &LieBundle<T>,
    params: &ClassKParams<T>,
    u: &[T],
    d_u: &[T],
    nu_alt: T,
) -> Result<T> {
    Ok(capability(bundle, params, u, d_u)? + (nu_alt - params.nu()) * dot(&bundle.lg_h, u))
}

/// `ψ²_i` through the grouped form `Σ_j a_ij u_j + c_i(u_i)`.
pub fn psi2_grouped<T: Real>(
    bundle: &LieBundle<T>,
    params: &ClassKParams<T>,
    u: &[T],
    neighbor_u: &[Vec<T>],
    d_u: &[T],
) -> Result<T> {
    bundle.check_neighbor_controls(neighbor_u)?;
    let coupled: T = bundle.cross_g.iter().zip(neighbor_u).map(|(a, uj)| dot(a, uj)).sum();
    Ok(coupled + capability(bundle, params, u, d_u)?)
}

/// One compared quantity of a finite-difference audit.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry<T> {
    pub term: String,
    pub analytic: T,
    pub numeric: T,
    pub rel_error: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport<T> {
    pub entries: Vec<AuditEntry<T>>,
    /// Set when the step is small enough that round-off dominates truncation.
    pub cancellation_warning: bool,
}

impl<T: Real> AuditReport<T> {
    pub fn max_rel_error(&self) -> T {
        self.entries.iter().fold(T::zero(), |m, e| m.max(e.rel_error))
    }

    /// Largest error per term family (the part of the name before `[`).
    pub fn per_term(&self) -> BTreeMap<String, T> {
        let mut out: BTreeMap<String, T> = BTreeMap::new();
        for e in &self.entries {
            let key = e.term.split('[').next().unwrap_or(&e.term).to_string();
            let slot = out.entry(key).or_insert(T::zero());
            *slot = slot.max(e.rel_error);
        }
        out
    }
}

/// Magnitude floor in the audit's relative error, `|a-b| / max(|a|, |b|, floor)`.
pub const AUDIT_MAGNITUDE_FLOOR: f64 = 1e-4;

/// Compares every bundle entry against central finite differences taken along
/// the flow. First-order terms differentiate `h` itself; second-order terms
/// differentiate the first-order quantities `∇h·f_i` and `∇h·g_i`, so the
/// check never touches the model's Jacobians or the barrier Hessian.
pub fn finite_difference_audit<T, D, B>(
    model: &D,
    barrier: &B,
    state: &NetworkState<T>,
    i: NodeId,
    step: T,
) -> Result<AuditReport<T>>
where
    T: Real,
    D: NetworkDynamics<T> + ?Sized,
    B: BarrierFunction<T> + ?Sized,
{
    if !(step > T::zero()) {
        return Err(Error::Argument(format!("finite-difference step must be > 0, got {step}")));
    }
    let bundle = lie_bundle(model, barrier, state, i)?;
    let two = T::lit(2.0);
    let floor = T::lit(AUDIT_MAGNITUDE_FLOOR);

    let shifted = |node: NodeId, dir: &[T], s: T| {
        let mut st = state.clone();
        for (x, &d) in st.node_mut(node).iter_mut().zip(dir) {
            *x = *x + s * d;
        }
        st
    };
    let central = |node: NodeId, dir: &[T], fun: &dyn Fn(&NetworkState<T>) -> T| {
        (fun(&shifted(node, dir, step)) - fun(&shifted(node, dir, -step))) / (two * step)
    };
    let h_of = |st: &NetworkState<T>| barrier.value(st.node(i));
    let lf_of = |st: &NetworkState<T>| dot(&barrier.gradient(st.node(i)), &model.drift(i, st));
    let lg_of = |st: &NetworkState<T>, m: usize| {
        let x_i = st.node(i);
        dot(&barrier.gradient(x_i), &model.input_map(i, x_i).column(m))
    };

    let mut entries = Vec::new();
    let mut push = |term: String, analytic: T, numeric: T| {
        let denom = analytic.abs().max(numeric.abs()).max(floor);
        entries.push(AuditEntry { term, analytic, numeric, rel_error: (analytic - numeric).abs() / denom });
    };

    let x_i = state.node(i);
    let f_i = model.drift(i, state);
    let g_i = model.input_map(i, x_i);
    let m_i = g_i.cols();

    push("lf_h".into(), bundle.lf_h, central(i, &f_i, &h_of));
    push("lf2_h".into(), bundle.lf2_h, central(i, &f_i, &lf_of));
    for m in 0..m_i {
        let g_col = g_i.column(m);
        push(format!("lg_h[{m}]"), bundle.lg_h[m], central(i, &g_col, &h_of));
        push(format!("lg_lf_h[{m}]"), bundle.lg_lf_h[m], central(i, &g_col, &lf_of));
        push(format!("lf_lg_h[{m}]"), bundle.lf_lg_h[m], central(i, &f_i, &|st| lg_of(st, m)));
        for l in 0..m_i {
            let g_l = g_i.column(l);
            push(format!("lg2_h[{m},{l}]"), bundle.lg2_h[(m, l)], central(i, &g_l, &|st| lg_of(st, m)));
        }
    }
    for (p, &j) in bundle.neighbors.iter().enumerate() {
        let f_j = model.drift(j, state);
        push(format!("cross_f[{j}]"), bundle.cross_f[p], central(j, &f_j, &lf_of));
        let g_j = model.input_map(j, state.node(j));
        for m in 0..g_j.cols() {
            push(format!("cross_g[{j},{m}]"), bundle.cross_g[p][m], central(j, &g_j.column(m), &lf_of));
        }
    }

    Ok(AuditReport { entries, cancellation_warning: step < T::epsilon().sqrt() })
}
