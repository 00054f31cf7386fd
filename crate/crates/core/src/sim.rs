//! Closed-loop simulation: sampled negotiation, safety-filtered control,
//! scheduled faults and non-compliance, fixed-step RK4 integration.

use std::fmt;

use crate::action_set::{AllowedActionSet, HalfSpace};
use crate::barrier::{lie_bundle, psi1, psi2, BarrierFunction, ClassKParams, ControlRate, LieBundle, NetworkDynamics};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::negotiation::{run_collaboration, Message, NegotiationConfig, NodeProblem};
use crate::network::{ControlBox, NetworkState, NodeId};
use crate::optimizer::{find_nu_star, maximize_capability, maximize_linear, maximize_quadratic, NuStarOptions, QuadraticObjective};
use crate::resilience::{check_resilience_oriented, compliance, ComplianceSign, epsilon_tolerance, minimal_assistance};
use crate::scalar::{dot, Real};
use crate::sis::SisScenario;

/// Model of `u̇_i` used inside the capability.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum DerivativePolicy<T> {
    #[default]
    Zero,
    /// `(u − u_prev) / control_period`, with `u_prev` the previous period's applied control.
    BackwardDifference,
    /// `−λ u`.
    AffineDecay(T),
}

impl<T: Real> DerivativePolicy<T> {
    pub fn rate(&self, u_prev: Option<&[T]>, dim: usize, period: T) -> ControlRate<T> {
        match *self {
            DerivativePolicy::Zero => ControlRate::zero(dim),
            DerivativePolicy::BackwardDifference => match u_prev {
                Some(prev) => ControlRate { slope: T::one() / period, offset: prev.iter().map(|&v| -v / period).collect() },
                None => ControlRate::zero(dim),
            },
            DerivativePolicy::AffineDecay(lambda) => ControlRate { slope: -lambda, offset: vec![T::zero(); dim] },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventChange<T> {
    ControlBox { node: NodeId, bounds: ControlBox<T> },
    /// Fraction `ρ ∈ [0, 1]` of the committed control the node actually plays.
    Compliance { node: NodeId, rho: T },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event<T> {
    pub time: T,
    pub change: EventChange<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SafetyFilter {
    #[default]
    Collaborative,
    /// Every node applies `u = 0`.
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResilienceSettings<T> {
    pub enabled: bool,
    pub delta_nu: T,
    pub nu_max: T,
    /// Orientation under which `within_bound` is judged.
    pub sign: ComplianceSign,
}

impl<T: Real> Default for ResilienceSettings<T> {
    fn default() -> Self {
        Self { enabled: true, delta_nu: T::lit(0.01), nu_max: T::lit(20.0), sign: ComplianceSign::RequestedMinusDelivered }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T> {
    pub t_end: T,
    pub dt: T,
    pub control_period: T,
    pub gains: Vec<ClassKParams<T>>,
    /// Control boxes in force at `t = 0`.
    pub boxes: Vec<ControlBox<T>>,
    pub events: Vec<Event<T>>,
    pub derivative_policy: DerivativePolicy<T>,
    pub negotiation: NegotiationConfig<T>,
    pub filter: SafetyFilter,
    pub resilience: ResilienceSettings<T>,
    /// Abort after this many consecutive periods without convergence.
    pub max_unconverged_periods: Option<usize>,
}

fn integer_ratio<T: Real>(num: T, den: T) -> Option<usize> {
    let r = (num / den).round();
    let k = r.to_usize()?;
    ((num - r * den).abs() <= T::lit(1e-9) * num.abs().max(T::one())).then_some(k)
}

impl<T: Real> Scenario<T> {
    pub fn new(t_end: T, dt: T, control_period: T, gains: Vec<ClassKParams<T>>, boxes: Vec<ControlBox<T>>) -> Self {
        Self {
            t_end,
            dt,
            control_period,
            gains,
            boxes,
            events: Vec::new(),
            derivative_policy: DerivativePolicy::Zero,
            negotiation: NegotiationConfig::default(),
            filter: SafetyFilter::Collaborative,
            resilience: ResilienceSettings::default(),
            max_unconverged_periods: None,
        }
    }

    pub fn validate(&self, nodes: usize) -> Result<()> {
        let ok = self.dt > T::zero() && self.dt <= self.control_period && self.control_period <= self.t_end;
        if !ok || !self.t_end.is_finite() {
            return Err(Error::Argument(format!(
                "need 0 < dt <= control_period <= t_end (dt={}, control_period={}, t_end={})",
                self.dt, self.control_period, self.t_end
            )));
        }
        if integer_ratio(self.control_period, self.dt).is_none() {
            return Err(Error::Argument("control_period must be an integer multiple of dt".into()));
        }
        if integer_ratio(self.t_end, self.dt).is_none() {
            return Err(Error::Argument("t_end must be an integer multiple of dt".into()));
        }
        if self.gains.len() != nodes || self.boxes.len() != nodes {
            return Err(Error::Structure(format!(
                "{} gains and {} control boxes for {nodes} nodes",
                self.gains.len(),
                self.boxes.len()
            )));
        }
        let mut last = T::zero();
        for e in &self.events {
            if !(e.time >= last) || !e.time.is_finite() {
                return Err(Error::Argument("event times must be finite, nonnegative and sorted".into()));
            }
            last = e.time;
            match &e.change {
                EventChange::ControlBox { node, bounds } => {
                    if *node >= nodes {
                        return Err(Error::UnknownNode { node: *node, count: nodes });
                    }
                    if bounds.dim() != self.boxes[*node].dim() {
                        return Err(Error::Structure(format!("event box for node {node} has the wrong dimension")));
                    }
                }
                EventChange::Compliance { node, rho } => {
                    if *node >= nodes {
                        return Err(Error::UnknownNode { node: *node, count: nodes });
                    }
                    if !(*rho >= T::zero() && *rho <= T::one()) {
                        return Err(Error::Argument(format!("compliance factor {rho} outside [0, 1]")));
                    }
                }
            }
        }
        if !(self.resilience.delta_nu > T::zero()) || !(self.resilience.nu_max >= T::zero()) {
            return Err(Error::Argument("resilience grid needs delta_nu > 0 and nu_max >= 0".into()));
        }
        self.negotiation.validate()
    }

    /// Index of the control period whose negotiation first sees an event at `time`.
    fn event_period(&self, time: T) -> usize {
        ((time / self.control_period) - T::lit(1e-9)).ceil().max(T::zero()).to_usize().unwrap_or(usize::MAX)
    }
}

impl<T: Real> SisScenario<T> {
    /// Closed-loop setup with the given gains on every node: the box
    /// `[0, ubar_before]` shrinks to `[0, ubar_after]` at `failure_time`.
    pub fn closed_loop(&self, gains: ClassKParams<T>) -> Scenario<T> {
        let n = self.params.node_count();
        let before = ControlBox::scalar(T::zero(), self.ubar_before).expect("valid box");
        let after = ControlBox::scalar(T::zero(), self.ubar_after).expect("valid box");
        let mut s = Scenario::new(T::lit(20.0), T::lit(0.01), T::lit(0.05), vec![gains; n], vec![before; n]);
        s.events = (0..n)
            .map(|node| Event { time: self.failure_time, change: EventChange::ControlBox { node, bounds: after.clone() } })
            .collect();
        s
    }
}

/// Applies `ẋ_i = f_i + g_i u_i` with controls held over the step.
fn closed_loop_field<T: Real, D: NetworkDynamics<T> + ?Sized>(
    model: &D,
    state: &NetworkState<T>,
    controls: &[Vec<T>],
) -> Vec<Vec<T>> {
    (0..state.node_count())
        .map(|i| {
            let f = model.drift(i, state);
            let g = model.input_map(i, state.node(i));
            let gu = g.mul_vec(&controls[i]);
            f.iter().zip(gu).map(|(&a, b)| a + b).collect()
        })
        .collect()
}

fn axpy<T: Real>(state: &NetworkState<T>, k: &[Vec<T>], s: T) -> NetworkState<T> {
    NetworkState::new(
        state.nodes().iter().zip(k).map(|(x, d)| x.iter().zip(d).map(|(&a, &b)| a + s * b).collect()).collect(),
    )
}

/// One classical fourth-order Runge–Kutta step under zero-order hold.
pub fn rk4_step<T: Real, D: NetworkDynamics<T> + ?Sized>(
    model: &D,
    state: &NetworkState<T>,
    controls: &[Vec<T>],
    dt: T,
    t: T,
) -> Result<NetworkState<T>> {
    if !(dt > T::zero()) {
        return Err(Error::Argument(format!("dt must be > 0, got {dt}")));
    }
    if controls.len() != state.node_count() {
        return Err(Error::Structure(format!("{} controls for {} nodes", controls.len(), state.node_count())));
    }
    let half = dt / T::lit(2.0);
    let k1 = closed_loop_field(model, state, controls);
    let k2 = closed_loop_field(model, &axpy(state, &k1, half), controls);
    let k3 = closed_loop_field(model, &axpy(state, &k2, half), controls);
    let k4 = closed_loop_field(model, &axpy(state, &k3, dt), controls);
    let two = T::lit(2.0);
    let six = T::lit(6.0);
    let next = NetworkState::new(
        state
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, x)| {
                (0..x.len()).map(|c| x[c] + dt / six * (k1[i][c] + two * k2[i][c] + two * k3[i][c] + k4[i][c])).collect()
            })
            .collect(),
    );
    if !next.is_finite() {
        return Err(Error::IntegrationBlowup { time: (t + dt).to_f64_lossy() });
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuardStatus {
    /// The minimum-norm point already satisfied `ψ² >= 0`.
    NotNeeded,
    /// The point was moved toward the capability maximizer.
    Moved,
    /// No point on the segment satisfies both conditions.
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection<T> {
    pub u: Vec<T>,
    /// No allowed point satisfies `ψ¹ >= 0`; `u` maximizes `ψ¹` instead.
    pub best_effort: bool,
    pub guard: GuardStatus,
}

fn neg_identity<T: Real>(m: usize) -> Matrix<T> {
    let mut q = Matrix::zeros(m, m);
    for k in 0..m {
        q[(k, k)] = -T::one();
    }
    q
}

/// Safety filter. Picks the minimum-norm point of the allowed set with
/// `ψ¹ >= 0`. If `ψ² = c_i(u) + incoming` is negative there, moves along the
/// segment toward the capability maximizer to the first point where both
/// `ψ¹` and `ψ²` are nonnegative.
pub fn select_control<T: Real>(
    allowed: &AllowedActionSet<T>,
    bundle: &LieBundle<T>,
    params: &ClassKParams<T>,
    objective: &QuadraticObjective<T>,
    incoming: T,
) -> Result<Selection<T>> {
    let m = allowed.dim();
    let psi1_const = bundle.lf_h + params.eta() * bundle.h;
    let mut safe = allowed.clone();
    safe.push(HalfSpace { normal: bundle.lg_h.clone(), offset: psi1_const, source: None })?;
    let (u0, best_effort) = match maximize_quadratic(&neg_identity(m), &vec![T::zero(); m], T::zero(), &safe) {
        Ok(r) => (r.u_star, false),
        Err(Error::Infeasible { .. }) => (maximize_linear(&bundle.lg_h, allowed)?.u_star, true),
        Err(e) => return Err(e),
    };

    let tol = T::base_tol();
    let psi2_at = |u: &[T]| objective.eval(u) + incoming;
    let c0 = psi2_at(&u0);
    let scale = T::one() + incoming.abs() + objective.offset().abs();
    if c0 >= -tol * scale || best_effort {
        return Ok(Selection { u: u0, best_effort, guard: GuardStatus::NotNeeded });
    }

    let uc = maximize_capability(objective, allowed)?.u_star;
    let d: Vec<T> = uc.iter().zip(&u0).map(|(&a, &b)| a - b).collect();
    let p0 = dot(&bundle.lg_h, &u0) + psi1_const;
    let p1 = dot(&bundle.lg_h, &d);
    let two = T::lit(2.0);
    let qa = objective.q_mat().quad_form(&d);
    let grad: Vec<T> = objective
        .q_mat()
        .mul_vec(&u0)
        .iter()
        .zip(objective.linear())
        .map(|(&a, b)| two * a + b)
        .collect();
    let qb = dot(&grad, &d);

    let mut ts = vec![T::zero(), T::one()];
    if !p1.is_zero() {
        ts.push(-p0 / p1);
    }
    if !qa.is_zero() {
        let disc = qb * qb - T::lit(4.0) * qa * c0;
        if disc >= T::zero() {
            let s = disc.sqrt();
            // Numerically stable pair of roots.
            let q = -(qb + qb.signum() * s) / two;
            ts.push(q / qa);
            if !q.is_zero() {
                ts.push(c0 / q);
            }
        }
    } else if !qb.is_zero() {
        ts.push(-c0 / qb);
    }
    let mut ts: Vec<T> = ts.into_iter().filter(|t| *t >= T::zero() && *t <= T::one()).collect();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));

    for t in ts {
        let u: Vec<T> = allowed.control_box().clamp(&u0.iter().zip(&d).map(|(&a, &b)| a + t * b).collect::<Vec<_>>());
        let ok1 = dot(&bundle.lg_h, &u) + psi1_const >= -tol * (T::one() + psi1_const.abs());
        let ok2 = psi2_at(&u) >= -tol * scale;
        if ok1 && ok2 {
            return Ok(Selection { u, best_effort: false, guard: GuardStatus::Moved });
        }
    }
    Ok(Selection { u: u0, best_effort: false, guard: GuardStatus::Failed })
}

/// `ρ·committed + (1 − ρ)·selfish`.
pub fn apply_noncompliance<T: Real>(committed: &[T], selfish: &[T], rho: T) -> Vec<T> {
    if rho == T::one() {
        return committed.to_vec();
    }
    committed.iter().zip(selfish).map(|(&c, &s)| rho * c + (T::one() - rho) * s).collect()
}

/// Quantities of one node recorded on every row.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord<T> {
    pub x: Vec<T>,
    pub u: Vec<T>,
    pub h: T,
    pub psi1: T,
    pub psi2: T,
    pub delta: T,
    pub e: T,
    pub epsilon: T,
    /// Configured gain `ν_i`.
    pub nu: T,
    pub nu_star: T,
    pub within_bound: bool,
    /// Control box in force.
    pub lo: Vec<T>,
    pub hi: Vec<T>,
    /// Coordinate bounds of the allowed set after negotiation.
    pub allowed_lo: Vec<T>,
    pub allowed_hi: Vec<T>,
    pub incoming: T,
    pub best_effort: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow<T> {
    pub t: T,
    pub nodes: Vec<NodeRecord<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodSummary<T> {
    pub t: T,
    pub converged: bool,
    pub rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory<T> {
    pub rows: Vec<TrajectoryRow<T>>,
    pub periods: Vec<PeriodSummary<T>>,
    /// State components pulled back into the model domain after a step.
    pub clamp_count: usize,
    pub trace: Vec<Message>,
}

impl<T: Real> Trajectory<T> {
    pub fn node_count(&self) -> usize {
        self.rows.first().map_or(0, |r| r.nodes.len())
    }

    /// Minimum of `h_i` over rows whose time satisfies `window`.
    pub fn min_h(&self, node: NodeId, window: impl Fn(T) -> bool) -> Option<T> {
        self.rows.iter().filter(|r| window(r.t)).map(|r| r.nodes[node].h).reduce(T::min)
    }

    pub fn first_violation(&self, node: NodeId) -> Option<T> {
        self.rows.iter().find(|r| r.nodes[node].h < T::zero()).map(|r| r.t)
    }

    pub fn terminal_state(&self) -> Option<NetworkState<T>> {
        self.rows.last().map(|r| NetworkState::new(r.nodes.iter().map(|n| n.x.clone()).collect()))
    }
}

/// A run that stopped early, with everything recorded up to that point.
#[derive(Debug, Clone)]
pub struct SimAbort<T> {
    pub partial: Trajectory<T>,
    pub error: Error,
}

impl<T> fmt::Display for SimAbort<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "simulation aborted: {}", self.error)
    }
}

impl<T: fmt::Debug> std::error::Error for SimAbort<T> {}

/// Per-period decisions held until the next negotiation.
struct Held<T> {
    u: Vec<Vec<T>>,
    rates: Vec<ControlRate<T>>,
    delta: Vec<T>,
    e: Vec<T>,
    epsilon: Vec<T>,
    nu_star: Vec<T>,
    within: Vec<bool>,
    allowed_lo: Vec<Vec<T>>,
    allowed_hi: Vec<Vec<T>>,
    incoming: Vec<T>,
    best_effort: Vec<bool>,
}

struct Engine<'a, T, D: ?Sized, B> {
    model: &'a D,
    barriers: &'a [B],
    scenario: &'a Scenario<T>,
    boxes: Vec<ControlBox<T>>,
    rho: Vec<T>,
    u_prev: Option<Vec<Vec<T>>>,
    unconverged: usize,
}

impl<'a, T, D, B> Engine<'a, T, D, B>
where
    T: Real,
    D: NetworkDynamics<T> + ?Sized,
    B: BarrierFunction<T>,
{
    fn bundles(&self, state: &NetworkState<T>) -> Result<Vec<LieBundle<T>>> {
        (0..state.node_count()).map(|i| lie_bundle(self.model, &self.barriers[i], state, i)).collect()
    }

    fn control_update(&mut self, state: &NetworkState<T>, t: T, trace: &mut Vec<Message>) -> Result<(Held<T>, PeriodSummary<T>)> {
        let sc = self.scenario;
        let n = state.node_count();
        let bundles = self.bundles(state)?;
        let rates: Vec<ControlRate<T>> = (0..n)
            .map(|i| {
                let prev = self.u_prev.as_ref().map(|u| u[i].as_slice());
                sc.derivative_policy.rate(prev, self.boxes[i].dim(), sc.control_period)
            })
            .collect();
        let nan = T::nan();
        let lo: Vec<Vec<T>> = self.boxes.iter().map(|b| b.lo().to_vec()).collect();
        let hi: Vec<Vec<T>> = self.boxes.iter().map(|b| b.hi().to_vec()).collect();

        if sc.filter == SafetyFilter::Disabled {
            let held = Held {
                u: self.boxes.iter().map(|b| vec![T::zero(); b.dim()]).collect(),
                rates,
                delta: vec![nan; n],
                e: vec![T::zero(); n],
                epsilon: vec![nan; n],
                nu_star: vec![nan; n],
                within: vec![true; n],
                allowed_lo: lo,
                allowed_hi: hi,
                incoming: vec![T::zero(); n],
                best_effort: vec![false; n],
            };
            return Ok((held, PeriodSummary { t, converged: true, rounds: 0 }));
        }

        let problems: Vec<NodeProblem<T>> = (0..n)
            .map(|i| NodeProblem::new(bundles[i].clone(), &sc.gains[i], &rates[i], self.boxes[i].clone()))
            .collect::<Result<_>>()?;
        let mut outcome = run_collaboration(self.model.graph(), &problems, &sc.negotiation)?;
        if outcome.converged {
            self.unconverged = 0;
        } else {
            self.unconverged += 1;
            if let Some(limit) = sc.max_unconverged_periods {
                if self.unconverged >= limit {
                    return Err(Error::Infeasible {
                        context: Some(format!("negotiation failed to converge for {limit} consecutive periods at t = {t}")),
                    });
                }
            }
        }
        for m in &mut outcome.trace {
            m.t = Some(t.to_f64_lossy());
        }
        trace.append(&mut outcome.trace);

        let mut u = Vec::with_capacity(n);
        let mut best_effort = Vec::with_capacity(n);
        let mut incoming = Vec::with_capacity(n);
        for i in 0..n {
            let inc = outcome.ledgers[i].incoming_total();
            let obj = &problems[i].objective;
            let committed = select_control(&outcome.allowed[i], &bundles[i], &sc.gains[i], obj, inc)?;
            let applied = if self.rho[i] < T::one() {
                let own_box = AllowedActionSet::from_box(self.boxes[i].clone());
                let selfish = select_control(&own_box, &bundles[i], &sc.gains[i], obj, inc)?;
                apply_noncompliance(&committed.u, &selfish.u, self.rho[i])
            } else {
                committed.u
            };
            u.push(applied);
            best_effort.push(committed.best_effort);
            incoming.push(inc);
        }

        let mut e = vec![T::zero(); n];
        let mut epsilon = vec![nan; n];
        let mut nu_star = vec![nan; n];
        let mut within = vec![true; n];
        if sc.resilience.enabled {
            let opts = NuStarOptions::new(sc.resilience.delta_nu, sc.resilience.nu_max);
            for i in 0..n {
                let b = &bundles[i];
                let mut total = T::zero();
                for (p, &j) in b.neighbors.iter().enumerate() {
                    let gain = &b.cross_g[p];
                    let c = outcome.ledgers[i].incoming.get(&j).copied().unwrap_or(T::zero());
                    let reference = minimal_assistance(gain, c, &outcome.allowed[j])?;
                    total = total + compliance(gain, &reference.u, &u[j])?;
                }
                e[i] = total;
                let obj = &problems[i].objective;
                match find_nu_star(obj, &outcome.allowed[i], &opts) {
                    Ok(ns) => {
                        let uc = maximize_capability(obj, &outcome.allowed[i])?.u_star;
                        let eps = match epsilon_tolerance(obj, ns.nu_star, &ns.u_star, &uc) {
                            Ok(v) => v,
                            Err(Error::Consistency(_)) => nan,
                            Err(err) => return Err(err),
                        };
                        let report = check_resilience_oriented(total, eps, obj.nu(), ns.nu_star, sc.resilience.sign);
                        epsilon[i] = eps;
                        nu_star[i] = ns.nu_star;
                        within[i] = report.within_bound;
                    }
                    Err(Error::IllPosed { .. }) => within[i] = sc.resilience.sign.display(total) >= T::zero(),
                    Err(err) => return Err(err),
                }
            }
        }

        let mut allowed_lo = Vec::with_capacity(n);
        let mut allowed_hi = Vec::with_capacity(n);
        for a in &outcome.allowed {
            let (l, h) = a.coordinate_bounds()?;
            allowed_lo.push(l);
            allowed_hi.push(h);
        }
        self.u_prev = Some(u.clone());
        let held = Held {
            u,
            rates,
            delta: outcome.deficits.clone(),
            e,
            epsilon,
            nu_star,
            within,
            allowed_lo,
            allowed_hi,
            incoming,
            best_effort,
        };
        Ok((held, PeriodSummary { t, converged: outcome.converged, rounds: outcome.rounds_used }))
    }

    fn record(&self, state: &NetworkState<T>, t: T, held: &Held<T>) -> Result<TrajectoryRow<T>> {
        let bundles = self.bundles(state)?;
        let n = state.node_count();
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            let b = &bundles[i];
            let params = &self.scenario.gains[i];
            let neighbor_u: Vec<Vec<T>> = b.neighbors.iter().map(|&j| held.u[j].clone()).collect();
            let d_u = held.rates[i].eval(&held.u[i]);
            nodes.push(NodeRecord {
                x: state.node(i).to_vec(),
                u: held.u[i].clone(),
                h: b.h,
                psi1: psi1(b, params, &held.u[i])?,
                psi2: psi2(b, params, &held.u[i], &neighbor_u, &d_u)?,
                delta: held.delta[i],
                e: held.e[i],
                epsilon: held.epsilon[i],
                nu: params.nu(),
                nu_star: held.nu_star[i],
                within_bound: held.within[i],
                lo: self.boxes[i].lo().to_vec(),
                hi: self.boxes[i].hi().to_vec(),
                allowed_lo: held.allowed_lo[i].clone(),
                allowed_hi: held.allowed_hi[i].clone(),
                incoming: held.incoming[i],
                best_effort: held.best_effort[i],
            });
        }
        Ok(TrajectoryRow { t, nodes })
    }
}

/// Runs the closed loop from `x0`. Rows are recorded at every integration
/// step, including `t = 0` and `t = t_end`; each row carries the state at
/// that time and the control held over the following step.
pub fn run<T, D, B>(model: &D, barriers: &[B], scenario: &Scenario<T>, x0: &NetworkState<T>) -> std::result::Result<Trajectory<T>, SimAbort<T>>
where
    T: Real,
    D: NetworkDynamics<T> + ?Sized,
    B: BarrierFunction<T>,
{
    let mut traj = Trajectory::default();
    let abort = |traj: Trajectory<T>, error: Error| SimAbort { partial: traj, error };
    let n = model.graph().node_count();
    let setup = scenario
        .validate(n)
        .and_then(|_| x0.check_against(model.graph()))
        .and_then(|_| {
            if barriers.len() == n {
                Ok(())
            } else {
                Err(Error::Structure(format!("{} barriers for {n} nodes", barriers.len())))
            }
        })
        .and_then(|_| {
            for (i, b) in scenario.boxes.iter().enumerate() {
                let m = model.graph().dims(i)?.control;
                if b.dim() != m {
                    return Err(Error::Structure(format!("control box of node {i} has dimension {}, expected {m}", b.dim())));
                }
            }
            Ok(())
        });
    if let Err(e) = setup {
        return Err(abort(traj, e));
    }

    let per_period = integer_ratio(scenario.control_period, scenario.dt).expect("validated");
    let n_steps = integer_ratio(scenario.t_end, scenario.dt).expect("validated");
    let mut engine = Engine {
        model,
        barriers,
        scenario,
        boxes: scenario.boxes.clone(),
        rho: vec![T::one(); n],
        u_prev: None,
        unconverged: 0,
    };
    let mut next_event = 0;
    let mut state = x0.clone();
    let mut held: Option<Held<T>> = None;
    let mut trace = Vec::new();

    for s in 0..=n_steps {
        let t = T::from_usize_lossy(s) * scenario.dt;
        if s < n_steps && s % per_period == 0 {
            let period = s / per_period;
            while next_event < scenario.events.len() && scenario.event_period(scenario.events[next_event].time) <= period {
                match &scenario.events[next_event].change {
                    EventChange::ControlBox { node, bounds } => engine.boxes[*node] = bounds.clone(),
                    EventChange::Compliance { node, rho } => engine.rho[*node] = *rho,
                }
                next_event += 1;
            }
            match engine.control_update(&state, t, &mut trace) {
                Ok((h, summary)) => {
                    held = Some(h);
                    traj.periods.push(summary);
                }
                Err(e) => {
                    traj.trace = trace;
                    return Err(abort(traj, e));
                }
            }
        }
        let h = held.as_ref().expect("first step negotiates");
        match engine.record(&state, t, h) {
            Ok(row) => traj.rows.push(row),
            Err(e) => {
                traj.trace = trace;
                return Err(abort(traj, e));
            }
        }
        if s == n_steps {
            break;
        }
        match rk4_step(model, &state, &h.u, scenario.dt, t) {
            Ok(mut next) => {
                traj.clamp_count += model.project(&mut next);
                state = next;
            }
            Err(e) => {
                traj.trace = trace;
                return Err(abort(traj, e));
            }
        }
    }
    traj.trace = trace;
    Ok(traj)
}
