use attractorforge::fieldforge::SystemSpec;
use attractorforge::flow::{integrate, integrate_many, FieldKind, IntegratorConfig, StopReason};
use proptest::prelude::*;

fn decay_1d() -> SystemSpec {
    SystemSpec::builder(&["x"])
        .dissipated(&["x"])
        .targets(&[0.0])
        .lambda(1.0)
        .build()
        .unwrap()
}

fn rotating_circle(lambda: f64) -> SystemSpec {
    SystemSpec::builder(&["x", "y"])
        .dissipated(&["x^2 + y^2"])
        .targets(&[1.0])
        .base_field(&["-y", "x"])
        .lambda(lambda)
        .build()
        .unwrap()
}

fn rigid_body(lambda: f64) -> SystemSpec {
    SystemSpec::builder(&["x1", "x2", "x3"])
        .dissipated(&["x1^2 + 0.5*x2^2"])
        .targets(&[1.5])
        .conserved(&["0.5*(x1^2 + x2^2 + x3^2)"])
        .base_field(&["x2*x3", "-2*x1*x3", "x1*x2"])
        .lambda(lambda)
        .build()
        .unwrap()
}

fn final_x(spec: &SystemSpec, cfg: &IntegratorConfig) -> f64 {
    let tr = integrate(spec, FieldKind::Perturbed, &[1.0], cfg).unwrap();
    assert_eq!(tr.stop_reason, StopReason::ReachedTEnd);
    tr.last().unwrap().x[0]
}

#[test]
fn rk4_is_fourth_order() {
    let s = decay_1d();
    let exact = (-1.0f64).exp();
    let e1 = (final_x(&s, &IntegratorConfig::rk4(0.1, 1.0)) - exact).abs();
    let e2 = (final_x(&s, &IntegratorConfig::rk4(0.05, 1.0)) - exact).abs();
    let order = (e1 / e2).log2();
    assert!((order - 4.0).abs() < 0.1, "observed order {order}");
}

#[test]
fn rkf45_meets_tolerance_on_closed_form() {
    let s = decay_1d();
    let x = final_x(&s, &IntegratorConfig::rkf45(1e-10, 1.0));
    assert!((x - (-1.0f64).exp()).abs() < 1e-9);
}

#[test]
fn level_set_is_invariant() {
    let s = rotating_circle(1.0);
    let starts: Vec<Vec<f64>> = (0..8).map(|i| {
        let t = i as f64 * 0.7;
        vec![t.cos(), t.sin()]
    }).collect();
    for tr in integrate_many(&s, FieldKind::Perturbed, &starts, &IntegratorConfig::rkf45(1e-10, 20.0)) {
        let tr = tr.unwrap();
        assert!(tr.completed());
        assert!(tr.samples.iter().all(|p| (p.d[0] - 1.0).abs() <= 1e-7));
    }
}

#[test]
fn conserved_quantity_is_preserved_along_stabilized_flow() {
    let s = rigid_body(0.5);
    let starts = vec![vec![1.2, 0.8, 1.0], vec![0.9, 1.1, 1.05], vec![1.0, 1.0, 0.8]];
    for tr in integrate_many(&s, FieldKind::Perturbed, &starts, &IntegratorConfig::rkf45(1e-10, 20.0)) {
        let tr = tr.unwrap();
        assert!(tr.completed());
        assert!(tr.conserved_drift() <= 1e-7, "drift {}", tr.conserved_drift());
    }
}

#[test]
fn base_flow_alone_conserves_everything() {
    let s = rigid_body(0.5);
    let tr = integrate(&s, FieldKind::Base, &[1.2, 0.8, 1.0], &IntegratorConfig::rkf45(1e-11, 10.0)).unwrap();
    assert!(tr.conserved_drift() <= 1e-8);
    assert!(tr.dissipated_drift(0..1) <= 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn decay_follows_exponential_law(r in 0.3f64..3.0, th in 0.0f64..6.28, lambda in 0.2f64..2.0) {
        prop_assume!((r - 1.0).abs() > 1e-2);
        let s = rotating_circle(lambda);
        let tr = integrate(&s, FieldKind::Perturbed, &[r * th.cos(), r * th.sin()], &IntegratorConfig::rkf45(1e-10, 5.0)).unwrap();
        prop_assert!(tr.completed());
        prop_assert!(tr.decay_residual(lambda).unwrap() <= 1e-6);
        let slope = tr.log_decay_slope().unwrap();
        prop_assert!((slope + 2.0 * lambda).abs() <= 0.01 * 2.0 * lambda);
    }
}
