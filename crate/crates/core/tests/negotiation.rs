mod common;

use std::collections::BTreeMap;

use ccbfnet_core::negotiation::*;
use ccbfnet_core::resilience::minimal_assistance;
use ccbfnet_core::*;
use common::*;
use rand::Rng;

#[test]
fn reference_initial_state_is_already_satisfied() {
    let (sc, _, _) = reference();
    for gains in [sc.gains_high, sc.gains_low] {
        let (_, out) = negotiate(&sc.x0, &gains, 0.75, false);
        assert!(out.converged);
        assert!(out.deficits.iter().all(|&d| d >= -NegotiationConfig::<f64>::default().tol), "{:?}", out.deficits);
    }
}

#[test]
fn near_threshold_node_requests_help() {
    let (sc, _, _) = reference();
    let (_, out) = negotiate(&[0.099, 0.1, 0.1], &sc.gains_low, 0.75, true);
    assert!(out.converged);
    let asked: Vec<&Message> =
        out.trace.iter().filter(|m| m.sender == 0 && m.kind == MessageKind::Request && m.value > 0.0).collect();
    assert!(!asked.is_empty());
    assert!(out.ledgers[0].incoming_total() > 0.0);
    assert!(out.deficits.iter().all(|&d| d >= -1e-12));
}

#[test]
fn identical_pair_gives_symmetric_ledgers() {
    let params = SisParams::new(vec![vec![0.5, 0.25], vec![0.25, 0.5]], vec![0.3; 2], vec![0.1; 2], vec![0.75; 2]).unwrap();
    let model = SisModel::new(params).unwrap();
    let problems = node_problems(&model, &[0.099, 0.099], &ClassKParams::new(0.3, 0.3).unwrap(), 0.75);
    let config = NegotiationConfig { record_trace: true, ..NegotiationConfig::default() };
    let out = run_collaboration(model.graph(), &problems, &config).unwrap();
    assert!(out.converged);
    assert!(out.ledgers[0].incoming_total() > 0.0);
    assert_eq!(out.ledgers[0].incoming[&1], out.ledgers[1].incoming[&0]);
    assert_eq!(out.ledgers[0].outgoing[&1], out.ledgers[1].outgoing[&0]);
    assert_eq!(out.deficits[0], out.deficits[1]);
    let requests = |from: usize| -> Vec<f64> {
        out.trace.iter().filter(|m| m.sender == from && m.kind == MessageKind::Request).map(|m| m.value).collect()
    };
    assert_eq!(requests(0), requests(1));
}

#[test]
fn allowed_sets_only_shrink_across_rounds() {
    let (sc, model, _) = reference();
    let problems = node_problems(&model, &[0.1, 0.12, 0.18], &sc.gains_low, 0.75);
    let mut prev: Option<Vec<(f64, f64)>> = None;
    for rounds in 1..=30 {
        let config = NegotiationConfig { max_rounds: rounds, ..NegotiationConfig::default() };
        let out = run_collaboration(model.graph(), &problems, &config).unwrap();
        let now: Vec<(f64, f64)> = out.allowed.iter().map(|a| a.scalar_interval().unwrap()).collect();
        if let Some(p) = &prev {
            for (a, b) in p.iter().zip(&now) {
                assert!(b.0 >= a.0 - 1e-15 && b.1 <= a.1 + 1e-15, "{a:?} -> {b:?}");
            }
        }
        prev = Some(now);
    }
}

#[test]
fn repeated_runs_are_identical() {
    let (sc, _, _) = reference();
    let (_, a) = negotiate(&[0.1, 0.12, 0.18], &sc.gains_low, 0.75, true);
    let (_, b) = negotiate(&[0.1, 0.12, 0.18], &sc.gains_low, 0.75, true);
    assert_eq!(a, b);
    let mut ja = Vec::new();
    let mut jb = Vec::new();
    write_trace_jsonl(&mut ja, &a.trace).unwrap();
    write_trace_jsonl(&mut jb, &b.trace).unwrap();
    assert_eq!(ja, jb);
    for line in String::from_utf8(ja).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("sender").is_some() && v.get("value").is_some());
    }
}

#[test]
fn commitments_within_what_neighbors_can_deliver() {
    let mut r = rng(31);
    let (sc, _, _) = reference();
    for _ in 0..60 {
        let x = [r.gen_range(0.02..0.2), r.gen_range(0.02..0.2), r.gen_range(0.02..0.25)];
        let (problems, out) = negotiate(&x, &sc.gains_low, 0.75, false);
        for (i, ledger) in out.ledgers.iter().enumerate() {
            for (&j, &c) in &ledger.incoming {
                let a = problems[i].bundle.coupling_gain(j).unwrap()[0];
                assert!(c >= 0.0 && c <= a * 0.75 + 1e-15, "c̄_{i}{j} = {c}, a = {a}");
                let (_, hi) = out.allowed[j].scalar_interval().unwrap();
                assert!(a * hi >= c - 1e-15);
            }
        }
    }
}

#[test]
fn converged_outcome_certifies_second_order_condition() {
    let mut r = rng(32);
    let (sc, _, _) = reference();
    let mut converged = 0;
    for _ in 0..80 {
        let x = [r.gen_range(0.02..0.2), r.gen_range(0.02..0.2), r.gen_range(0.02..0.25)];
        let (problems, out) = negotiate(&x, &sc.gains_low, 0.75, false);
        if !out.converged {
            continue;
        }
        converged += 1;
        for (i, p) in problems.iter().enumerate() {
            let uc = maximize_capability(&p.objective, &out.allowed[i]).unwrap().u_star;
            let nu: Vec<Vec<f64>> = p
                .bundle
                .neighbors
                .iter()
                .enumerate()
                .map(|(k, &j)| {
                    minimal_assistance(&p.bundle.cross_g[k], out.ledgers[i].incoming[&j], &out.allowed[j]).unwrap().u
                })
                .collect();
            let value = psi2(&p.bundle, &sc.gains_low, &uc, &nu, &[0.0]).unwrap();
            assert!(value >= -1e-9, "x={x:?} node {i}: {value}");
        }
    }
    assert!(converged >= 20, "only {converged} of 80 negotiations converged");
}

#[test]
fn request_splitting_examples() {
    let mut ledger = CommitmentLedger::new(0, &[1, 2], &[1, 2], 0.0);
    let deliverable: BTreeMap<usize, f64> = [(1, 0.003), (2, 0.001)].into();
    let req = make_requests(-0.002, &deliverable, &ledger, 0.0).unwrap();
    assert!(!req.infeasible);
    assert!((req.amounts[&1] - 0.0015).abs() < 1e-16 && (req.amounts[&2] - 0.0005).abs() < 1e-16);
    ledger.incoming.insert(1, 0.003);
    ledger.incoming.insert(2, 0.001);
    let req = make_requests(-0.002, &deliverable, &ledger, 0.0).unwrap();
    assert!(req.infeasible);
    assert!(req.amounts.values().all(|&v| v == 0.0));
    assert!(make_requests(0.1, &deliverable, &ledger, 0.0).is_err());
}

#[test]
fn responses_are_capped_and_tighten_the_responder() {
    let mut own = scalar_box(0.0, 0.75);
    let c = respond_to_request(0, 0.0012, &[0.0024], 0.0, 0.0, &mut own).unwrap();
    assert!((c - 0.0012).abs() < 1e-18);
    let (lo, _) = own.scalar_interval().unwrap();
    assert!((lo - 0.5).abs() < 1e-12);
    let c = respond_to_request(0, 0.01, &[0.0024], c, 0.0, &mut own).unwrap();
    assert!((c - 0.0018).abs() < 1e-15);
    assert_eq!(own.halfspaces().len(), 1);
    assert!(respond_to_request(0, -1.0, &[0.0024], 0.0, 0.0, &mut own).is_err());
}

#[test]
fn deficit_accounts_for_burden_and_promises() {
    let mut ledger = CommitmentLedger::new(0, &[1, 2], &[], 0.0);
    ledger.incoming.insert(1, 0.01);
    ledger.incoming.insert(2, 0.02);
    assert!((compute_deficit(-0.05, 0.01, &ledger) + 0.03_f64).abs() < 1e-16);
}
