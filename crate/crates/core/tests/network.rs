#![allow(clippy::needless_range_loop)]

use ccbfnet_core::*;
use proptest::prelude::*;

fn edges_strategy() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (1usize..8).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n), 0..20)))
}

proptest! {
    #[test]
    fn incoming_and_outgoing_mirror((n, edges) in edges_strategy()) {
        let edges: Vec<_> = edges.into_iter().filter(|(i, j)| i != j).collect();
        let g = NetworkGraph::new(vec![NodeDims::SCALAR; n], edges.iter().copied()).unwrap();
        for i in 0..n {
            let inc = g.in_neighbors(i).unwrap();
            prop_assert!(inc.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(!inc.contains(&i));
            for &j in inc {
                prop_assert!(g.out_neighbors(j).unwrap().contains(&i));
                prop_assert!(edges.contains(&(i, j)));
            }
        }
        let total_in: usize = (0..n).map(|i| g.in_neighbors(i).unwrap().len()).sum();
        let total_out: usize = (0..n).map(|i| g.out_neighbors(i).unwrap().len()).sum();
        prop_assert_eq!(total_in, total_out);
    }

    #[test]
    fn two_hop_support_contains_one_hop((n, edges) in edges_strategy(), node in 0usize..8) {
        let edges: Vec<_> = edges.into_iter().filter(|(i, j)| i != j).collect();
        let g = NetworkGraph::new(vec![NodeDims::SCALAR; n], edges).unwrap();
        let i = node % n;
        let one = g.neighborhood_support(i, 1).unwrap();
        let two = g.neighborhood_support(i, 2).unwrap();
        prop_assert_eq!(&two[..one.len()], &one[..]);
        prop_assert_eq!(one[0], i);
        let mut dedup = two.clone();
        dedup.sort();
        dedup.dedup();
        prop_assert_eq!(dedup.len(), two.len());
    }

    #[test]
    fn weights_define_edges(w in prop::collection::vec(prop::collection::vec(prop_oneof![Just(0.0f64), 0.1f64..1.0], 4), 4)) {
        let g = NetworkGraph::from_weights(&w, vec![NodeDims::SCALAR; 4]).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let edge = g.in_neighbors(i).unwrap().contains(&j);
                prop_assert_eq!(edge, i != j && w[i][j] != 0.0);
            }
        }
    }

    #[test]
    fn clamp_lands_inside_box(lo in prop::collection::vec(-2.0f64..0.0, 3), width in prop::collection::vec(0.0f64..2.0, 3), u in prop::collection::vec(-5.0f64..5.0, 3)) {
        let hi: Vec<f64> = lo.iter().zip(&width).map(|(l, w)| l + w).collect();
        let b = ControlBox::new(lo, hi).unwrap();
        let c = b.clamp(&u);
        prop_assert!(b.contains(&c, 0.0));
        if b.contains(&u, 0.0) {
            prop_assert_eq!(c, u);
        }
    }
}

#[test]
fn structural_errors() {
    let d = vec![NodeDims::SCALAR; 3];
    assert!(matches!(NetworkGraph::new(d.clone(), [(0, 3)]), Err(Error::UnknownNode { node: 3, count: 3 })));
    assert!(NetworkGraph::new(d.clone(), [(1, 1)]).is_err());
    assert!(NetworkGraph::new(vec![NodeDims { state: 0, control: 1 }], []).is_err());
    let g = NetworkGraph::fully_connected(d).unwrap();
    assert_eq!(g.in_neighbors(2).unwrap(), &[0, 1]);
    assert!(g.in_neighbors(7).is_err());
    assert!(g.neighborhood_support(0, 3).is_err());
    assert!(ControlBox::new(vec![1.0], vec![0.0]).is_err());
    assert!(ControlBox::new(vec![0.0, 0.0], vec![1.0]).is_err());
}

#[test]
fn stacked_state_round_trip() {
    let dims = vec![NodeDims { state: 2, control: 1 }, NodeDims { state: 1, control: 1 }];
    let g = NetworkGraph::new(dims, [(0, 1)]).unwrap();
    let s = NetworkState::from_stacked(&g, &[1.0, 2.0, 3.0]).unwrap();
    assert_eq!(s.node(0), &[1.0, 2.0]);
    assert_eq!(s.stacked(), vec![1.0, 2.0, 3.0]);
    assert_eq!(s.gather_neighborhood(&g, 0, 1).unwrap(), vec![1.0, 2.0, 3.0]);
    assert!(NetworkState::from_stacked(&g, &[1.0, 2.0]).is_err());
    assert!(NetworkState::from_scalars(&[1.0, 2.0]).check_against(&g).is_err());
}
