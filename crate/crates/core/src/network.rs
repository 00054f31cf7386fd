//! Directed network topology, per-node dimensions and neighborhood state assembly.
//!
//! An edge `(i, j)` means node `j` influences node `i`: `j` is an *incoming*
//! neighbor of `i` and `i` is an *outgoing* neighbor of `j`.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeDims {
    pub state: usize,
    pub control: usize,
}

impl NodeDims {
    pub const SCALAR: NodeDims = NodeDims { state: 1, control: 1 };
}

/// Static directed graph. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkGraph {
    incoming: Vec<Vec<NodeId>>,
    outgoing: Vec<Vec<NodeId>>,
    dims: Vec<NodeDims>,
}

impl NetworkGraph {
    /// Builds a graph from `(i, j)` edges (j influences i). Duplicate edges are
    /// merged; self-loops and zero dimensions are rejected.
    pub fn new<I>(dims: Vec<NodeDims>, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (NodeId, NodeId)>,
    {
        let n = dims.len();
        if let Some(node) = dims.iter().position(|d| d.state == 0 || d.control == 0) {
            return Err(Error::Structure(format!("node {node} has a zero state or control dimension")));
        }
        let mut incoming = vec![BTreeSet::new(); n];
        let mut outgoing = vec![BTreeSet::new(); n];
        for (i, j) in edges {
            for node in [i, j] {
                if node >= n {
                    return Err(Error::UnknownNode { node, count: n });
                }
            }
            if i == j {
                return Err(Error::Argument(format!("self-loop on node {i}")));
            }
            incoming[i].insert(j);
            outgoing[j].insert(i);
        }
        Ok(Self {
            incoming: incoming.into_iter().map(|s| s.into_iter().collect()).collect(),
            outgoing: outgoing.into_iter().map(|s| s.into_iter().collect()).collect(),
            dims,
        })
    }

    pub fn fully_connected(dims: Vec<NodeDims>) -> Result<Self> {
        let n = dims.len();
        let edges = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)));
        Self::new(dims, edges)
    }

    /// Edges wherever `weights[i][j] != 0` for `i != j`; the diagonal is ignored.
    pub fn from_weights<T: Real>(weights: &[Vec<T>], dims: Vec<NodeDims>) -> Result<Self> {
        if weights.len() != dims.len() || weights.iter().any(|r| r.len() != dims.len()) {
            return Err(Error::Structure(format!(
                "weight matrix must be {n}x{n}",
                n = dims.len()
            )));
        }
        let edges = weights.iter().enumerate().flat_map(|(i, row)| {
            row.iter().enumerate().filter(move |&(j, w)| j != i && !w.is_zero()).map(move |(j, _)| (i, j))
        });
        Self::new(dims, edges)
    }

    pub fn node_count(&self) -> usize {
        self.dims.len()
    }

    fn check(&self, i: NodeId) -> Result<()> {
        if i < self.node_count() {
            Ok(())
        } else {
            Err(Error::UnknownNode { node: i, count: self.node_count() })
        }
    }

    /// Nodes `j != i` with `(i, j)` in the edge set, ascending.
    pub fn in_neighbors(&self, i: NodeId) -> Result<&[NodeId]> {
        self.check(i)?;
        Ok(&self.incoming[i])
    }

    /// Nodes `k != i` with `(k, i)` in the edge set, ascending.
    pub fn out_neighbors(&self, i: NodeId) -> Result<&[NodeId]> {
        self.check(i)?;
        Ok(&self.outgoing[i])
    }

    /// Union of incoming and outgoing neighbors, ascending.
    pub fn neighbors(&self, i: NodeId) -> Result<Vec<NodeId>> {
        self.check(i)?;
        let set: BTreeSet<_> = self.incoming[i].iter().chain(&self.outgoing[i]).copied().collect();
        Ok(set.into_iter().collect())
    }

    pub fn dims(&self, i: NodeId) -> Result<NodeDims> {
        self.check(i)?;
        Ok(self.dims[i])
    }

    pub fn all_dims(&self) -> &[NodeDims] {
        &self.dims
    }

    pub fn total_state_dim(&self) -> usize {
        self.dims.iter().map(|d| d.state).sum()
    }

    /// Nodes whose states make up node `i`'s `hops`-neighborhood vector, in
    /// stacking order: `i`, then incoming neighbors ascending, then (for two
    /// hops) the not-yet-included incoming neighbors of those, ascending.
    pub fn neighborhood_support(&self, i: NodeId, hops: usize) -> Result<Vec<NodeId>> {
        self.check(i)?;
        if !(1..=2).contains(&hops) {
            return Err(Error::Argument(format!("hops must be 1 or 2, got {hops}")));
        }
        let mut support = vec![i];
        support.extend_from_slice(&self.incoming[i]);
        if hops == 2 {
            let extra: BTreeSet<NodeId> = self.incoming[i]
                .iter()
                .flat_map(|&j| self.incoming[j].iter().copied())
                .filter(|k| !support.contains(k))
                .collect();
            support.extend(extra);
        }
        Ok(support)
    }
}

/// Per-node state vectors, indexed by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState<T> {
    nodes: Vec<Vec<T>>,
}

impl<T: Real> NetworkState<T> {
    pub fn new(nodes: Vec<Vec<T>>) -> Self {
        Self { nodes }
    }

    /// One scalar per node.
    pub fn from_scalars(values: &[T]) -> Self {
        Self { nodes: values.iter().map(|&v| vec![v]).collect() }
    }

    /// Splits a stacked vector (ascending node id) according to `graph`.
    pub fn from_stacked(graph: &NetworkGraph, stacked: &[T]) -> Result<Self> {
        if stacked.len() != graph.total_state_dim() {
            return Err(Error::Structure(format!(
                "stacked state has length {}, graph needs {}",
                stacked.len(),
                graph.total_state_dim()
            )));
        }
        let mut nodes = Vec::with_capacity(graph.node_count());
        let mut offset = 0;
        for d in graph.all_dims() {
            nodes.push(stacked[offset..offset + d.state].to_vec());
            offset += d.state;
        }
        Ok(Self { nodes })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, i: NodeId) -> &[T] {
        &self.nodes[i]
    }

    pub fn node_mut(&mut self, i: NodeId) -> &mut Vec<T> {
        &mut self.nodes[i]
    }

    pub fn nodes(&self) -> &[Vec<T>] {
        &self.nodes
    }

    pub fn stacked(&self) -> Vec<T> {
        self.nodes.iter().flatten().copied().collect()
    }

    pub fn total_dim(&self) -> usize {
        self.nodes.iter().map(Vec::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.nodes.iter().all(|x| crate::scalar::all_finite(x))
    }

    /// Verifies node count and per-node dimensions against `graph`.
    pub fn check_against(&self, graph: &NetworkGraph) -> Result<()> {
        if self.nodes.len() != graph.node_count() {
            return Err(Error::Structure(format!(
                "state has {} nodes, graph has {}",
                self.nodes.len(),
                graph.node_count()
            )));
        }
        for (i, (x, d)) in self.nodes.iter().zip(graph.all_dims()).enumerate() {
            if x.len() != d.state {
                return Err(Error::Structure(format!(
                    "node {i} state has length {}, expected {}",
                    x.len(),
                    d.state
                )));
            }
        }
        Ok(())
    }

    /// Stacked `hops`-neighborhood state of node `i` (see
    /// [`NetworkGraph::neighborhood_support`] for the ordering).
    pub fn gather_neighborhood(&self, graph: &NetworkGraph, i: NodeId, hops: usize) -> Result<Vec<T>> {
        self.check_against(graph)?;
        let support = graph.neighborhood_support(i, hops)?;
        Ok(support.iter().flat_map(|&k| self.nodes[k].iter().copied()).collect())
    }
}

/// Closed box `lo <= u <= hi` of admissible controls for one node.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBox<T> {
    lo: Vec<T>,
    hi: Vec<T>,
}

impl<T: Real> ControlBox<T> {
    pub fn new(lo: Vec<T>, hi: Vec<T>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Structure(format!(
                "control box bounds have lengths {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        if lo.iter().chain(&hi).any(|v| !v.is_finite()) {
            return Err(Error::Argument("control box bounds must be finite".into()));
        }
        if let Some(m) = lo.iter().zip(&hi).position(|(l, h)| l > h) {
            return Err(Error::Argument(format!("control box has lo > hi in coordinate {m}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn scalar(lo: T, hi: T) -> Result<Self> {
        Self::new(vec![lo], vec![hi])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[T] {
        &self.lo
    }

    pub fn hi(&self) -> &[T] {
        &self.hi
    }

    pub fn contains(&self, u: &[T], tol: T) -> bool {
        u.len() == self.dim()
            && u.iter().zip(self.lo.iter().zip(&self.hi)).all(|(&v, (&l, &h))| v >= l - tol && v <= h + tol)
    }

    pub fn clamp(&self, u: &[T]) -> Vec<T> {
        u.iter().zip(self.lo.iter().zip(&self.hi)).map(|(&v, (&l, &h))| v.max(l).min(h)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full3() -> NetworkGraph {
        NetworkGraph::fully_connected(vec![NodeDims::SCALAR; 3]).unwrap()
    }

    #[test]
    fn fully_connected_neighbors() {
        // Node ids are 0-based: node 1 in configs is id 0.
        let g = full3();
        assert_eq!(g.in_neighbors(0).unwrap(), &[1, 2]);
        assert_eq!(g.out_neighbors(0).unwrap(), &[1, 2]);
        assert_eq!(g.neighbors(1).unwrap(), vec![0, 2]);
    }

    #[test]
    fn edgeless_and_single_edge() {
        let g = NetworkGraph::new(vec![NodeDims::SCALAR; 3], []).unwrap();
        assert!(g.in_neighbors(0).unwrap().is_empty());
        assert!(g.out_neighbors(2).unwrap().is_empty());

        let g = NetworkGraph::new(vec![NodeDims::SCALAR; 3], [(2, 1)]).unwrap();
        assert_eq!(g.in_neighbors(2).unwrap(), &[1]);
        assert!(g.in_neighbors(1).unwrap().is_empty());
        assert_eq!(g.out_neighbors(1).unwrap(), &[2]);
    }

    #[test]
    fn unknown_node_and_self_loop_rejected() {
        let g = full3();
        assert_eq!(g.in_neighbors(3), Err(Error::UnknownNode { node: 3, count: 3 }));
        assert!(g.out_neighbors(7).is_err());
        assert!(NetworkGraph::new(vec![NodeDims::SCALAR; 2], [(1, 1)]).is_err());
        assert!(NetworkGraph::new(vec![NodeDims { state: 0, control: 1 }], []).is_err());
    }

    #[test]
    fn from_weights_skips_diagonal_and_zeros() {
        let w = vec![vec![0.5, 0.0], vec![0.25, 0.5]];
        let g = NetworkGraph::from_weights(&w, vec![NodeDims::SCALAR; 2]).unwrap();
        assert!(g.in_neighbors(0).unwrap().is_empty());
        assert_eq!(g.in_neighbors(1).unwrap(), &[0]);
    }

    #[test]
    fn gather_one_hop_reference_state() {
        let g = full3();
        let x = NetworkState::from_scalars(&[0.04, 0.01, 0.02]);
        assert_eq!(x.gather_neighborhood(&g, 0, 1).unwrap(), vec![0.04, 0.01, 0.02]);
    }

    #[test]
    fn gather_isolated_node() {
        let g = NetworkGraph::new(vec![NodeDims::SCALAR; 2], []).unwrap();
        let x = NetworkState::from_scalars(&[0.3, 0.7]);
        assert_eq!(x.gather_neighborhood(&g, 1, 1).unwrap(), vec![0.7]);
        assert_eq!(x.gather_neighborhood(&g, 1, 2).unwrap(), vec![0.7]);
    }

    #[test]
    fn gather_rejects_mismatch() {
        let g = full3();
        let x = NetworkState::from_scalars(&[0.1, 0.2]);
        assert!(matches!(x.gather_neighborhood(&g, 0, 1), Err(Error::Structure(_))));
        let x = NetworkState::new(vec![vec![0.1], vec![0.2, 0.3], vec![0.4]]);
        assert!(x.gather_neighborhood(&g, 0, 1).is_err());
    }

    #[test]
    fn control_box_validation() {
        assert!(ControlBox::scalar(1.0, 0.0).is_err());
        assert!(ControlBox::new(vec![0.0], vec![1.0, 2.0]).is_err());
        let b = ControlBox::scalar(0.0, 0.75).unwrap();
        assert!(b.contains(&[0.75], 0.0));
        assert_eq!(b.clamp(&[0.9]), vec![0.75]);
    }
}
