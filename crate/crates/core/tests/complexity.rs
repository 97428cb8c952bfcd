mod common;

use effgcn::arch::{count_flops, make_arch, ArchPlan, LayerKind, ScalingConfig};
use effgcn::graph::SkeletonGraph;
use effgcn::nn::Network;

#[test]
fn registry_equals_analytic_for_every_kind() {
    let graph = SkeletonGraph::ntu25();
    for kind in LayerKind::ALL {
        for phi in [0, 2, 4] {
            for att in common::attention_kinds() {
                let mut plan = make_arch(&ScalingConfig::with_phi(phi), kind, None, 2, 5, 60, false).unwrap();
                plan.attention = att;
                let analytic = effgcn::arch::count_params(&plan, 25).unwrap();
                let net = Network::<f32>::new(&plan, &graph, 0).unwrap();
                assert_eq!(analytic, net.num_params(), "{} phi {phi} {att:?}", kind.name());
            }
        }
    }
}

#[test]
fn parameter_targets_within_five_percent() {
    for (label, plan, millions) in common::parameter_targets() {
        let (analytic, registry) = common::count_pair(&plan, 25);
        assert_eq!(analytic, registry, "{label}");
        let rel = (analytic as f64 / 1e6 - millions).abs() / millions;
        assert!(rel <= 0.05, "{label}: {analytic} vs {millions}M");
    }
}

#[test]
fn flops_grow_with_phi() {
    let f: Vec<u64> = [0, 2, 4]
        .iter()
        .map(|&p| count_flops(&ArchPlan::efficient(p, 60).unwrap(), 300, 25, 2).unwrap())
        .collect();
    assert!(f[0] < f[1] && f[1] < f[2]);
    let one = count_flops(&ArchPlan::efficient(0, 60).unwrap(), 300, 25, 1).unwrap();
    assert_eq!(2 * one, f[0]);
}
