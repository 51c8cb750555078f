use milearn::autodiff::{clip_params, gradient, Graph, ParamSet, StepOrder};
use milearn::gradcheck::{random_demo, tiny_arch};
use milearn::meta::{adapt, bc_loss, inner_loss_graph, meta_loss, InnerLoss, MetaError, PreparedDemo, TrainConfig};
use milearn::nn::{init_params, ArchitectureConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn setup(seed: u64, len: usize) -> (ArchitectureConfig, ParamSet, PreparedDemo, PreparedDemo) {
    let arch = tiny_arch();
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let params = init_params(&arch, rng);
    let train = random_demo(&arch, len, true, rng);
    let val = random_demo(&arch, len, true, rng);
    (arch, params, train, val)
}

fn bits(p: &ParamSet) -> Vec<u64> {
    p.flatten().iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn zero_step_leaves_validation_loss_unchanged(seed in any::<u64>(), len in 1usize..6, kind in 0usize..3) {
        let (arch, params, train, val) = setup(seed, len);
        let inner_loss = [InnerLoss::Bc, InnerLoss::TwoHead, InnerLoss::ActionFree][kind];
        let cfg = TrainConfig { inner_lr: 0.0, inner_loss, ..Default::default() };
        let m = meta_loss(&arch, &cfg, &params, &[(vec![&train], &val)]).unwrap();
        prop_assert_eq!(m.to_bits(), bc_loss(&arch, &params, &val).unwrap().to_bits());
    }

    #[test]
    fn tied_head_matches_behavior_cloning(seed in any::<u64>(), len in 1usize..6, alpha in 0.0f64..0.1) {
        let (arch, params, train, val) = setup(seed, len);
        let bc = TrainConfig { inner_lr: alpha, ..Default::default() };
        let tied = TrainConfig { inner_loss: InnerLoss::TwoHead, tied_heads: true, ..bc.clone() };
        prop_assert_eq!(bits(&adapt(&arch, &bc, &params, std::slice::from_ref(&train)).unwrap()),
                        bits(&adapt(&arch, &tied, &params, std::slice::from_ref(&train)).unwrap()));
        let a = meta_loss(&arch, &bc, &params, &[(vec![&train], &val)]).unwrap();
        let b = meta_loss(&arch, &tied, &params, &[(vec![&train], &val)]).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn identical_demos_match_one_shot(seed in any::<u64>(), len in 1usize..5, k in 2usize..6, kind in 0usize..3) {
        let (arch, params, train, _) = setup(seed, len);
        let inner_loss = [InnerLoss::Bc, InnerLoss::TwoHead, InnerLoss::ActionFree][kind];
        let cfg = TrainConfig { inner_lr: 0.01, inner_loss, ..Default::default() };
        let one = adapt(&arch, &cfg, &params, std::slice::from_ref(&train)).unwrap();
        let many = adapt(&arch, &cfg, &params, &vec![train; k]).unwrap();
        prop_assert_eq!(bits(&one), bits(&many));
    }

    #[test]
    fn action_free_adaptation_ignores_actions(seed in any::<u64>(), len in 1usize..6, scale in -5.0f64..5.0) {
        let (arch, params, train, _) = setup(seed, len);
        let cfg = TrainConfig { inner_lr: 0.01, inner_loss: InnerLoss::ActionFree, ..Default::default() };
        let mut perturbed = train.clone();
        perturbed.actions = perturbed.actions.map(|a| a.map(|v| v * scale + 1.0));
        let mut stripped = train.clone();
        stripped.actions = None;
        let base = bits(&adapt(&arch, &cfg, &params, &[train]).unwrap());
        prop_assert_eq!(&base, &bits(&adapt(&arch, &cfg, &params, &[perturbed]).unwrap()));
        prop_assert_eq!(&base, &bits(&adapt(&arch, &cfg, &params, &[stripped]).unwrap()));
    }

    #[test]
    fn clipped_step_stays_within_bound(seed in any::<u64>(), len in 1usize..6, bound in 1e-4f64..0.5) {
        let (arch, params, train, _) = setup(seed, len);
        let alpha = 0.3;
        let cfg = TrainConfig { inner_lr: alpha, inner_clip: Some((-bound, bound)), ..Default::default() };
        let adapted = adapt(&arch, &cfg, &params, &[train]).unwrap();
        for (a, p) in adapted.flatten().iter().zip(params.flatten()) {
            prop_assert!((a - p).abs() <= alpha * bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn clip_params_is_contained(seed in any::<u64>(), lo in -2.0f64..0.0, width in 0.0f64..2.0) {
        let (_, params, _, _) = setup(seed, 1);
        let hi = lo + width;
        let scaled = params.unflatten(&params.flatten().iter().map(|v| v * 10.0).collect::<Vec<_>>());
        for v in clip_params(&scaled, lo, hi).unwrap().flatten() {
            prop_assert!(v >= lo && v <= hi);
        }
    }
}

#[test]
fn bias_transform_update_has_closed_form() {
    let arch = ArchitectureConfig { two_head: false, ..tiny_arch() };
    let rng = &mut ChaCha8Rng::seed_from_u64(11);
    let mut params = init_params(&arch, rng);
    params.insert("bt.z", params.get("bt.z").unwrap().map(|_| 0.0));
    params.insert("fc0.b", params.get("fc0.b").unwrap().map(|_| 0.0));
    let demo = random_demo(&arch, 5, true, rng);
    let alpha = 0.03;
    let cfg = TrainConfig { inner_lr: alpha, ..Default::default() };

    let g = Graph::new();
    let bound = params.bind(&g);
    let loss = inner_loss_graph(&g, &arch, &cfg, &bound, &demo).unwrap();
    // dL/dy summed over rows is the gradient of the bias
    let dy = gradient(loss, &bound, false).unwrap().values().get("fc0.b").unwrap().clone();
    let wz = params.get("fc0.wz").unwrap();
    let (dz, h) = (wz.rows(), wz.cols());
    let expected: Vec<f64> = (0..h)
        .map(|j| {
            let proj: f64 =
                (0..dz).map(|i| wz.at2(i, j) * (0..h).map(|l| wz.at2(i, l) * dy.data()[l]).sum::<f64>()).sum();
            -alpha * (proj + dy.data()[j])
        })
        .collect();

    let adapted = adapt(&arch, &cfg, &params, &[demo]).unwrap();
    let (z, wz2, b) = (adapted.get("bt.z").unwrap(), adapted.get("fc0.wz").unwrap(), adapted.get("fc0.b").unwrap());
    for j in 0..h {
        let effective = (0..dz).map(|i| z.data()[i] * wz2.at2(i, j)).sum::<f64>() + b.data()[j];
        assert!((effective - expected[j]).abs() < 1e-8, "unit {j}: {effective} vs {}", expected[j]);
    }
}

#[test]
fn first_order_drops_only_curvature() {
    let (arch, params, train, val) = setup(5, 4);
    for order in [StepOrder::Exact, StepOrder::FirstOrder] {
        let cfg = TrainConfig { inner_lr: 0.0, order, ..Default::default() };
        let m = meta_loss(&arch, &cfg, &params, &[(vec![&train], &val)]).unwrap();
        assert_eq!(m, bc_loss(&arch, &params, &val).unwrap());
    }
}

#[test]
fn errors_are_typed() {
    let (arch, params, train, _) = setup(1, 3);
    let single = ArchitectureConfig { two_head: false, ..arch.clone() };
    let cfg = TrainConfig { inner_loss: InnerLoss::TwoHead, ..Default::default() };
    assert_eq!(adapt(&single, &cfg, &params, std::slice::from_ref(&train)).unwrap_err(), MetaError::SingleHead(InnerLoss::TwoHead));
    assert_eq!(adapt(&arch, &TrainConfig::default(), &params, &[]).unwrap_err(), MetaError::NoDemos);
    let mut no_actions = train;
    no_actions.actions = None;
    assert_eq!(adapt(&arch, &TrainConfig::default(), &params, &[no_actions]).unwrap_err(), MetaError::MissingActions);
}
