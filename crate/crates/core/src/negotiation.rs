//! Round-based collaborative safety negotiation.
//!
//! Each round every node computes its best capability over its allowed set,
//! subtracts what its outgoing promises cost it, adds what its incoming
//! neighbors promised, and asks neighbors to cover any remaining deficit.
//! A neighbor answers a request by raising its commitment as far as its
//! allowed set can deliver and adding the half-space `a_ij·u_j >= c̄_ij` to
//! that set. Commitments are positive promised contributions to the
//! requester's `ψ²`.
//!
//! Rounds are synchronous. Requests are computed from a snapshot taken at the
//! start of the round and answered in ascending `(responder, requester)`
//! order, so the outcome is a deterministic function of the inputs.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::action_set::{AllowedActionSet, HalfSpace};
use crate::barrier::{ClassKParams, ControlRate, LieBundle};
use crate::error::{Error, Result};
use crate::network::{ControlBox, NetworkGraph, NodeId};
use crate::optimizer::{maximize_capability, maximize_linear, QuadraticObjective};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegotiationConfig<T> {
    pub max_rounds: usize,
    /// Added to every total request.
    pub margin: T,
    /// Slack `δ_ki` subtracted from every committed level in the half-spaces.
    pub slack: T,
    /// A node counts as satisfied when `δ_i >= -tol`.
    pub tol: T,
    pub record_trace: bool,
}

impl<T: Real> Default for NegotiationConfig<T> {
    fn default() -> Self {
        Self { max_rounds: 50, margin: T::zero(), slack: T::zero(), tol: T::lit(1e-12), record_trace: false }
    }
}

impl<T: Real> NegotiationConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 {
            return Err(Error::Argument("max_rounds must be >= 1".into()));
        }
        if !(self.margin >= T::zero()) || !(self.slack >= T::zero()) || !(self.tol >= T::zero()) {
            return Err(Error::Argument("margin, slack and tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-node record of promises received and made.
#[derive(Debug, Clone, PartialEq)]
pub struct CommitmentLedger<T> {
    pub node: NodeId,
    /// `c̄_ij`: what incoming neighbor `j` promised this node.
    pub incoming: BTreeMap<NodeId, T>,
    /// `c̄_ki`: what this node promised outgoing neighbor `k`.
    pub outgoing: BTreeMap<NodeId, T>,
    pub slack: BTreeMap<NodeId, T>,
    pub round: usize,
}

impl<T: Real> CommitmentLedger<T> {
    pub fn new(node: NodeId, incoming: &[NodeId], outgoing: &[NodeId], slack: T) -> Self {
        Self {
            node,
            incoming: incoming.iter().map(|&j| (j, T::zero())).collect(),
            outgoing: outgoing.iter().map(|&k| (k, T::zero())).collect(),
            slack: outgoing.iter().map(|&k| (k, slack)).collect(),
            round: 0,
        }
    }

    pub fn incoming_total(&self) -> T {
        self.incoming.values().copied().sum()
    }
}

/// `δ_i = c̄_i − burden + Σ_j c̄_ij`, where `c̄_i` is the capability maximum over
/// the plain control box and `burden` is how much the outgoing half-spaces
/// lower that maximum.
pub fn compute_deficit<T: Real>(capability: T, burden: T, ledger: &CommitmentLedger<T>) -> T {
    capability - burden + ledger.incoming_total()
}

/// Capability lost by restricting the box to the allowed set.
pub fn outgoing_burden<T: Real>(
    obj: &QuadraticObjective<T>,
    bounds: &ControlBox<T>,
    allowed: &AllowedActionSet<T>,
) -> Result<T> {
    let full = maximize_capability(obj, &AllowedActionSet::from_box(bounds.clone()))?.value;
    let restricted = maximize_capability(obj, allowed)?.value;
    Ok(full - restricted)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Requests<T> {
    pub amounts: BTreeMap<NodeId, T>,
    /// No neighbor had headroom left.
    pub infeasible: bool,
}

/// Splits `−deficit + margin` over neighbors in proportion to their headroom
/// `deliverable_j − c̄_ij`. `deliverable` maps each incoming neighbor to its
/// advertised `max_{u_j ∈ Ū_j} a_ij·u_j`.
pub fn make_requests<T: Real>(
    deficit: T,
    deliverable: &BTreeMap<NodeId, T>,
    ledger: &CommitmentLedger<T>,
    margin: T,
) -> Result<Requests<T>> {
    if !(deficit < T::zero()) {
        return Err(Error::Argument(format!("requests need a negative deficit, got {deficit}")));
    }
    let headroom: BTreeMap<NodeId, T> = deliverable
        .iter()
        .map(|(&j, &d)| {
            let held = ledger.incoming.get(&j).copied().unwrap_or(T::zero());
            (j, (d - held).max(T::zero()))
        })
        .collect();
    let total: T = headroom.values().copied().sum();
    if !(total > T::zero()) {
        return Ok(Requests { amounts: headroom.keys().map(|&j| (j, T::zero())).collect(), infeasible: true });
    }
    let need = -deficit + margin;
    Ok(Requests { amounts: headroom.into_iter().map(|(j, h)| (j, need * h / total)).collect(), infeasible: false })
}

/// Raises the commitment to `requester` by up to `request`, limited by what
/// the rest of `own_allowed` can deliver, and installs the matching
/// half-space. Returns the new commitment, which is never negative.
pub fn respond_to_request<T: Real>(
    requester: NodeId,
    request: T,
    gain: &[T],
    current: T,
    slack: T,
    own_allowed: &mut AllowedActionSet<T>,
) -> Result<T> {
    if !(request >= T::zero()) {
        return Err(Error::Argument(format!("request must be >= 0, got {request}")));
    }
    let others = own_allowed.without_source(requester);
    let deliverable = maximize_linear(gain, &others)?.value;
    let commitment = (current + request).min(deliverable).max(T::zero());
    let hs = (commitment > T::zero()).then(|| HalfSpace::at_least(gain.to_vec(), commitment - slack, Some(requester)));
    own_allowed.replace_source(requester, hs)?;
    Ok(commitment)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageKind {
    Request,
    Commit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Message {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub round: usize,
    pub sender: NodeId,
    pub receiver: NodeId,
    pub kind: MessageKind,
    pub value: f64,
}

pub fn write_trace_jsonl<W: Write>(mut out: W, messages: &[Message]) -> std::io::Result<()> {
    for m in messages {
        serde_json::to_writer(&mut out, m)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Everything one node contributes to a negotiation.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeProblem<T> {
    pub bundle: LieBundle<T>,
    pub objective: QuadraticObjective<T>,
    pub bounds: ControlBox<T>,
}

impl<T: Real> NodeProblem<T> {
    pub fn new(bundle: LieBundle<T>, params: &ClassKParams<T>, rate: &ControlRate<T>, bounds: ControlBox<T>) -> Result<Self> {
        let objective = QuadraticObjective::from_bundle(&bundle, params, rate)?;
        if bounds.dim() != objective.dim() {
            return Err(Error::Structure(format!(
                "control box of node {} has dimension {}, control dimension is {}",
                bundle.node,
                bounds.dim(),
                objective.dim()
            )));
        }
        Ok(Self { bundle, objective, bounds })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegotiationOutcome<T> {
    /// `δ_i` from the last evaluated round.
    pub deficits: Vec<T>,
    /// Capability maximum over each node's final allowed set.
    pub capabilities: Vec<T>,
    pub allowed: Vec<AllowedActionSet<T>>,
    pub ledgers: Vec<CommitmentLedger<T>>,
    pub rounds_used: usize,
    pub converged: bool,
    /// Nodes whose last requests found no headroom.
    pub locally_infeasible: Vec<bool>,
    pub trace: Vec<Message>,
}

fn check_nonempty<T: Real>(node: NodeId, allowed: &AllowedActionSet<T>) -> Result<()> {
    if allowed.is_empty()? {
        let binding = allowed.halfspaces().iter().filter_map(|h| h.source).collect();
        return Err(Error::NodeInfeasible { node, binding });
    }
    Ok(())
}

/// Runs synchronous negotiation rounds until every `δ_i >= −tol` or
/// `max_rounds` is reached.
pub fn run_collaboration<T: Real>(
    graph: &NetworkGraph,
    problems: &[NodeProblem<T>],
    config: &NegotiationConfig<T>,
) -> Result<NegotiationOutcome<T>> {
    config.validate()?;
    let n = graph.node_count();
    if problems.len() != n {
        return Err(Error::Structure(format!("{} node problems for a {n}-node graph", problems.len())));
    }
    for (i, p) in problems.iter().enumerate() {
        if p.bundle.node != i || p.bundle.neighbors.as_slice() != graph.in_neighbors(i)? {
            return Err(Error::Structure(format!("problem {i} does not match the graph")));
        }
    }

    let mut allowed: Vec<AllowedActionSet<T>> =
        problems.iter().map(|p| AllowedActionSet::from_box(p.bounds.clone())).collect();
    let mut ledgers: Vec<CommitmentLedger<T>> = (0..n)
        .map(|i| CommitmentLedger::new(i, graph.in_neighbors(i).unwrap(), graph.out_neighbors(i).unwrap(), config.slack))
        .collect();
    let box_capability: Vec<T> = problems
        .iter()
        .map(|p| maximize_capability(&p.objective, &AllowedActionSet::from_box(p.bounds.clone())).map(|r| r.value))
        .collect::<Result<_>>()?;

    let mut trace = Vec::new();
    let mut locally_infeasible = vec![false; n];
    let mut deficits = vec![T::zero(); n];
    let mut capabilities = box_capability.clone();
    let mut converged = false;
    let mut rounds_used = 0;

    for round in 1..=config.max_rounds {
        rounds_used = round;
        for (i, ledger) in ledgers.iter_mut().enumerate() {
            ledger.round = round;
            check_nonempty(i, &allowed[i])?;
            capabilities[i] = maximize_capability(&problems[i].objective, &allowed[i])?.value;
            let burden = box_capability[i] - capabilities[i];
            deficits[i] = compute_deficit(box_capability[i], burden, ledger);
        }
        if deficits.iter().all(|&d| d >= -config.tol) {
            converged = true;
            break;
        }
        if round == config.max_rounds {
            break;
        }

        // Requests from the round-start snapshot.
        let mut pending: BTreeMap<(NodeId, NodeId), T> = BTreeMap::new();
        for i in 0..n {
            locally_infeasible[i] = false;
            if deficits[i] >= -config.tol {
                continue;
            }
            let mut deliverable = BTreeMap::new();
            for (p, &j) in problems[i].bundle.neighbors.iter().enumerate() {
                let gain = &problems[i].bundle.cross_g[p];
                deliverable.insert(j, maximize_linear(gain, &allowed[j])?.value);
            }
            let req = make_requests(deficits[i], &deliverable, &ledgers[i], config.margin)?;
            locally_infeasible[i] = req.infeasible;
            for (j, r) in req.amounts {
                if r > T::zero() {
                    if config.record_trace {
                        trace.push(Message {
                            t: None,
                            round,
                            sender: i,
                            receiver: j,
                            kind: MessageKind::Request,
                            value: r.to_f64_lossy(),
                        });
                    }
                    pending.insert((j, i), r);
                }
            }
        }

        for ((j, i), r) in pending {
            let gain = problems[i].bundle.coupling_gain(j)?.to_vec();
            let current = ledgers[j].outgoing.get(&i).copied().unwrap_or(T::zero());
            let slack = ledgers[j].slack.get(&i).copied().unwrap_or(config.slack);
            let commitment = respond_to_request(i, r, &gain, current, slack, &mut allowed[j])?;
            ledgers[j].outgoing.insert(i, commitment);
            ledgers[i].incoming.insert(j, commitment);
            if config.record_trace {
                trace.push(Message {
                    t: None,
                    round,
                    sender: j,
                    receiver: i,
                    kind: MessageKind::Commit,
                    value: commitment.to_f64_lossy(),
                });
            }
        }
    }

    Ok(NegotiationOutcome { deficits, capabilities, allowed, ledgers, rounds_used, converged, locally_infeasible, trace })
}
