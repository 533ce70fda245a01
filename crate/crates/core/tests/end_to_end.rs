use medianshape::fitters::{fit, FitConfig, FitInput, Method, ShapeKind};
use medianshape::testkit::{gen_instance, oracle_fit, InstanceKind, InstanceSpec, OracleConfig};
use medianshape::{Objective, PointSet};

const KINDS: [InstanceKind; 5] = [
    InstanceKind::Circle,
    InstanceKind::Sphere,
    InstanceKind::Cylinder,
    InstanceKind::Lines,
    InstanceKind::TwoLines,
];

#[test]
fn pipeline_tracks_oracle_on_noisy_instances() {
    let eps = 0.2;
    for kind in KINDS {
        let shape = kind.shape_kind().unwrap();
        for seed in 0..3u64 {
            let n = if kind == InstanceKind::Lines { 50 } else { 200 };
            let spec = InstanceSpec::new(kind, n, 40 + seed).with_noise(0.05).with_outliers(0.1);
            let inst = gen_instance(&spec).unwrap();
            let data = inst.fit_input().unwrap();
            for obj in [Objective::L1, Objective::L2] {
                let got = fit(data, shape, &FitConfig::new(eps, obj).with_seed(seed)).unwrap();
                let oracle = oracle_fit(data, shape, obj, OracleConfig::for_kind(shape, seed)).unwrap();
                assert!(
                    got.cost <= (1.0 + eps) * oracle.cost,
                    "{} seed {seed} {obj:?}: pipeline {} vs oracle {}",
                    kind.name(),
                    got.cost,
                    oracle.cost
                );
                assert_eq!(got.cost, data.cost(&got.shape, obj));
            }
        }
    }
}

#[test]
fn oracle_method_is_not_worse_than_pipeline() {
    let eps = 0.2;
    for kind in [InstanceKind::Circle, InstanceKind::TwoLines] {
        let shape = kind.shape_kind().unwrap();
        let spec = InstanceSpec::new(kind, 150, 5).with_noise(0.05).with_outliers(0.1);
        let inst = gen_instance(&spec).unwrap();
        let data = inst.fit_input().unwrap();
        let cfg = FitConfig::new(eps, Objective::L1).with_seed(5);
        let pipe = fit(data, shape, &cfg).unwrap();
        let orc = fit(data, shape, &cfg.with_method(Method::Oracle)).unwrap();
        assert_eq!(orc.method, Method::Oracle);
        assert!(orc.cost <= pipe.cost * (1.0 + eps));
    }
}

#[test]
fn direct_method_matches_exact_cost() {
    let spec = InstanceSpec::new(InstanceKind::Sphere, 120, 8).with_noise(0.05);
    let inst = gen_instance(&spec).unwrap();
    let data = inst.fit_input().unwrap();
    let cfg = FitConfig::new(0.2, Objective::L2).with_method(Method::Direct);
    let r = fit(data, ShapeKind::Sphere, &cfg).unwrap();
    assert_eq!(r.cost, data.cost(&r.shape, Objective::L2));
    assert!(r.cost < 120.0 * 0.01);
}

#[test]
fn oracle_trivial_instances() {
    let tri = PointSet::from_rows(&[[0.0, 0.0], [4.0, 0.0], [0.0, 3.0]]).unwrap();
    let r = oracle_fit(
        FitInput::Points(&tri),
        ShapeKind::Circle,
        Objective::L1,
        OracleConfig::for_kind(ShapeKind::Circle, 1),
    )
    .unwrap();
    assert!(r.cost < 1e-6, "circumcircle cost {}", r.cost);

    let two = PointSet::from_rows(&[[1.0, 1.0], [2.0, -1.0]]).unwrap();
    let r = oracle_fit(
        FitInput::Points(&two),
        ShapeKind::Circle,
        Objective::L1,
        OracleConfig::for_kind(ShapeKind::Circle, 2),
    )
    .unwrap();
    assert!(r.cost < 1e-6, "two-point cost {}", r.cost);
}

#[test]
fn clean_circle_recovers_truth() {
    let spec = InstanceSpec::new(InstanceKind::Circle, 300, 11);
    let inst = gen_instance(&spec).unwrap();
    let data = inst.fit_input().unwrap();
    let r = fit(data, ShapeKind::Circle, &FitConfig::new(0.1, Objective::L1)).unwrap();
    let truth = inst.truth.clone().unwrap();
    assert!(r.cost <= 1e-6, "cost {}", r.cost);
    assert!(data.cost(&truth, Objective::L1) <= 1e-9);
}
