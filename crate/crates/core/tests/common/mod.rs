#![allow(dead_code)]

pub mod certificate;
pub mod oracles;


use ccbfnet_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn reference() -> (SisScenario<f64>, SisModel<f64>, Vec<SisBarrier<f64>>) {
    let sc = reference_scenario::<f64>();
    let model = sc.model();
    let barriers = model.barriers();
    (sc, model, barriers)
}

pub fn random_state(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> NetworkState<f64> {
    NetworkState::from_scalars(&[r.gen_range(lo..=hi), r.gen_range(lo..=hi), r.gen_range(lo..=hi)])
}

/// Random SIS network with nonnegative weights and sparse coupling.
pub fn random_sis(r: &mut ChaCha8Rng, n: usize) -> SisModel<f64> {
    let beta = (0..n)
        .map(|i| (0..n).map(|j| if i == j || r.gen_bool(0.7) { r.gen_range(0.0..1.0) } else { 0.0 }).collect())
        .collect();
    let gamma = (0..n).map(|_| r.gen_range(0.05..1.0)).collect();
    let xbar = (0..n).map(|_| r.gen_range(0.05..1.0)).collect();
    let params = SisParams::new(beta, gamma, xbar, vec![1.0; n]).unwrap();
    SisModel::new(params).unwrap()
}

pub fn scalar_box(lo: f64, hi: f64) -> AllowedActionSet<f64> {
    AllowedActionSet::from_box(ControlBox::scalar(lo, hi).unwrap())
}

pub fn node_problems(model: &SisModel<f64>, x: &[f64], gains: &ClassKParams<f64>, ubar: f64) -> Vec<negotiation::NodeProblem<f64>> {
    let st = NetworkState::from_scalars(x);
    model
        .barriers()
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let bundle = lie_bundle(model, b, &st, i).unwrap();
            negotiation::NodeProblem::new(bundle, gains, &ControlRate::zero(1), ControlBox::scalar(0.0, ubar).unwrap())
                .unwrap()
        })
        .collect()
}

pub fn negotiate(x: &[f64], gains: &ClassKParams<f64>, ubar: f64, trace: bool) -> (Vec<negotiation::NodeProblem<f64>>, NegotiationOutcome<f64>) {
    let (_, model, _) = reference();
    let problems = node_problems(&model, x, gains, ubar);
    let config = NegotiationConfig { record_trace: trace, ..NegotiationConfig::default() };
    let out = run_collaboration(model.graph(), &problems, &config).unwrap();
    (problems, out)
}
