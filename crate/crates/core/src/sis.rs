//! Networked SIS epidemic with healing-rate control:
//! `ẋ_i = −(γ_i + u_i) x_i + (1 − x_i) Σ_j β_ij x_j`, barrier `h_i = x̄_i − x_i`.

use crate::barrier::{BarrierFunction, ClassKParams, NetworkDynamics};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{ControlBox, NetworkGraph, NetworkState, NodeDims, NodeId};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct SisParams<T> {
    beta: Vec<Vec<T>>,
    gamma: Vec<T>,
    xbar: Vec<T>,
    ubar: Vec<T>,
}

impl<T: Real> SisParams<T> {
    pub fn new(beta: Vec<Vec<T>>, gamma: Vec<T>, xbar: Vec<T>, ubar: Vec<T>) -> Result<Self> {
        let n = beta.len();
        if n == 0 {
            return Err(Error::Structure("beta must have at least one row".into()));
        }
        if let Some(r) = beta.iter().position(|row| row.len() != n) {
            return Err(Error::Structure(format!("beta row {r} has length {}, expected {n}", beta[r].len())));
        }
        for (name, v) in [("gamma", &gamma), ("xbar", &xbar), ("ubar", &ubar)] {
            if v.len() != n {
                return Err(Error::Structure(format!("{name} has length {}, beta is {n}x{n}", v.len())));
            }
        }
        if beta.iter().flatten().any(|&b| !(b >= T::zero()) || !b.is_finite()) {
            return Err(Error::Argument("beta entries must be finite and >= 0".into()));
        }
        if gamma.iter().any(|&g| !(g > T::zero()) || !g.is_finite()) {
            return Err(Error::Argument("gamma entries must be finite and > 0".into()));
        }
        if xbar.iter().any(|&x| !(x > T::zero() && x <= T::one())) {
            return Err(Error::Argument("xbar entries must lie in (0, 1]".into()));
        }
        if ubar.iter().any(|&u| !(u >= T::zero()) || !u.is_finite()) {
            return Err(Error::Argument("ubar entries must be finite and >= 0".into()));
        }
        Ok(Self { beta, gamma, xbar, ubar })
    }

    pub fn node_count(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[Vec<T>] {
        &self.beta
    }

    pub fn gamma(&self) -> &[T] {
        &self.gamma
    }

    pub fn xbar(&self) -> &[T] {
        &self.xbar
    }

    pub fn ubar(&self) -> &[T] {
        &self.ubar
    }

    /// Control boxes `[0, ū_i]`.
    pub fn control_boxes(&self) -> Vec<ControlBox<T>> {
        self.ubar.iter().map(|&u| ControlBox::scalar(T::zero(), u).expect("ubar validated")).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SisModel<T> {
    params: SisParams<T>,
    graph: NetworkGraph,
}

impl<T: Real> SisModel<T> {
    /// Edges follow the nonzero off-diagonal entries of `beta`.
    pub fn new(params: SisParams<T>) -> Result<Self> {
        let graph = NetworkGraph::from_weights(params.beta(), vec![NodeDims::SCALAR; params.node_count()])?;
        Ok(Self { params, graph })
    }

    pub fn params(&self) -> &SisParams<T> {
        &self.params
    }

    pub fn barriers(&self) -> Vec<SisBarrier<T>> {
        self.params.xbar.iter().map(|&x| SisBarrier::new(x)).collect()
    }

    fn pressure(&self, i: NodeId, state: &NetworkState<T>) -> T {
        self.params.beta[i].iter().enumerate().map(|(j, &b)| b * state.node(j)[0]).sum()
    }
}

impl<T: Real> NetworkDynamics<T> for SisModel<T> {
    fn graph(&self) -> &NetworkGraph {
        &self.graph
    }

    fn drift(&self, i: NodeId, state: &NetworkState<T>) -> Vec<T> {
        let x = state.node(i)[0];
        vec![-self.params.gamma[i] * x + (T::one() - x) * self.pressure(i, state)]
    }

    fn input_map(&self, _i: NodeId, x_i: &[T]) -> Matrix<T> {
        Matrix::scalar(-x_i[0])
    }

    fn drift_jacobian(&self, i: NodeId, state: &NetworkState<T>, wrt: NodeId) -> Matrix<T> {
        let x = state.node(i)[0];
        let b = self.params.beta[i][wrt];
        if wrt == i {
            Matrix::scalar(-self.params.gamma[i] - self.pressure(i, state) + (T::one() - x) * b)
        } else {
            Matrix::scalar((T::one() - x) * b)
        }
    }

    fn input_map_jacobian(&self, _i: NodeId, _x_i: &[T]) -> Vec<Matrix<T>> {
        vec![Matrix::scalar(-T::one())]
    }

    /// Clamps every infected fraction to `[0, 1]`.
    fn project(&self, state: &mut NetworkState<T>) -> usize {
        let mut clamped = 0;
        for i in 0..state.node_count() {
            for x in state.node_mut(i).iter_mut() {
                let c = x.max(T::zero()).min(T::one());
                if c != *x {
                    clamped += 1;
                    *x = c;
                }
            }
        }
        clamped
    }
}

/// `h(x) = x̄ − x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SisBarrier<T> {
    pub xbar: T,
}

impl<T: Real> SisBarrier<T> {
    pub fn new(xbar: T) -> Self {
        Self { xbar }
    }
}

impl<T: Real> BarrierFunction<T> for SisBarrier<T> {
    fn value(&self, x_i: &[T]) -> T {
        self.xbar - x_i[0]
    }

    fn gradient(&self, _x_i: &[T]) -> Vec<T> {
        vec![-T::one()]
    }

    fn hessian(&self, _x_i: &[T]) -> Matrix<T> {
        Matrix::scalar(T::zero())
    }
}

/// The three-node reference setup: endemic coupling, a control box that
/// shrinks at `failure_time`, and two gain settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SisScenario<T> {
    pub params: SisParams<T>,
    pub x0: Vec<T>,
    pub failure_time: T,
    pub ubar_before: T,
    pub ubar_after: T,
    /// High gains `η = 10, κ = 1`.
    pub gains_high: ClassKParams<T>,
    /// Low gains `η = κ = 0.3`.
    pub gains_low: ClassKParams<T>,
}

impl<T: Real> SisScenario<T> {
    pub fn model(&self) -> SisModel<T> {
        SisModel::new(self.params.clone()).expect("reference parameters are valid")
    }
}

pub fn reference_scenario<T: Real>() -> SisScenario<T> {
    let l = T::lit;
    let beta = (0..3).map(|i| (0..3).map(|j| if i == j { l(0.5) } else { l(0.25) }).collect()).collect();
    let params = SisParams::new(beta, vec![l(0.3); 3], vec![l(0.1), l(0.12), l(0.18)], vec![l(0.75); 3])
        .expect("reference parameters are valid");
    SisScenario {
        params,
        x0: vec![l(0.04), l(0.01), l(0.02)],
        failure_time: l(10.0),
        ubar_before: l(0.75),
        ubar_after: l(0.6),
        gains_high: ClassKParams::new(l(10.0), l(1.0)).expect("valid gains"),
        gains_low: ClassKParams::new(l(0.3), l(0.3)).expect("valid gains"),
    }
}
