mod common;

use attractorforge::fieldforge::SystemSpec;
use attractorforge::verify::constraint_residuals;
use common::{dist, dot, norm, random_case};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn hodge_formula_matches_gram_oracle_for_arbitrary_rates() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..150 {
        let case = random_case(&mut rng, 3, 1e-2);
        for x in &case.points {
            let h: Vec<f64> = (0..case.spec.p()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let a = case.spec.x0_general(&h, x).unwrap();
            let b = case.spec.gram_oracle(&h, x).unwrap();
            assert!(dist(&a, &b) <= 1e-10 * (1.0 + norm(&b)), "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn particular_solution_is_minimum_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..80 {
        let case = random_case(&mut rng, 2, 1e-2);
        let s = &case.spec;
        for x in &case.points {
            let v = s.x0_lambda(x).unwrap();
            for b in s.homogeneous_basis_at(x).unwrap() {
                assert!(dot(&v, &b).abs() <= 1e-10 * (1.0 + norm(&v)));
                for g in s.grads_at(x).unwrap() {
                    assert!(dot(&g, &b).abs() <= 1e-10 * norm(&g).max(1.0));
                }
            }
        }
    }
}

#[test]
fn constraint_residuals_vanish() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for _ in 0..150 {
        let case = random_case(&mut rng, 3, 1e-2);
        for x in &case.points {
            let r = constraint_residuals(&case.spec, x).unwrap();
            assert!(r.iter().all(|&v| v <= 1e-9), "{r:?}");
        }
    }
}

#[test]
fn lie_derivative_of_f_is_minus_two_lambda_f() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for _ in 0..150 {
        let case = random_case(&mut rng, 3, 1e-2);
        let s = &case.spec;
        for x in &case.points {
            let lie = dot(&s.f_gradient(x).unwrap(), &s.x_lambda(x).unwrap());
            let f = s.f_value(x).unwrap();
            let scale = 1f64.max(norm(&s.f_gradient(x).unwrap()) * norm(&s.x_lambda(x).unwrap()));
            assert!((lie + 2.0 * s.lambda() * f).abs() <= 1e-9 * scale);
        }
    }
}

#[test]
fn stabilizer_is_linear_in_lambda() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    for _ in 0..60 {
        let case = random_case(&mut rng, 2, 1e-2);
        let s1 = case.spec.with_lambda(1.0).unwrap();
        let s3 = case.spec.with_lambda(3.0).unwrap();
        let s0 = case.spec.with_lambda(0.0).unwrap();
        for x in &case.points {
            let a = s1.x0_lambda(x).unwrap();
            let b = s3.x0_lambda(x).unwrap();
            let scaled: Vec<f64> = a.iter().map(|c| 3.0 * c).collect();
            assert!(dist(&scaled, &b) <= 1e-12 * (1.0 + norm(&b)));
            assert!(s0.x0_lambda(x).unwrap().iter().all(|&c| c == 0.0));
        }
    }
}

#[test]
fn equilibria_are_the_level_set() {
    let circle = SystemSpec::builder(&["x", "y"])
        .dissipated(&["x^2 + y^2"])
        .targets(&[1.0])
        .lambda(2.0)
        .build()
        .unwrap();
    for i in 0..50 {
        let t = i as f64 * 0.125;
        let v = circle.x0_lambda(&[t.cos(), t.sin()]).unwrap();
        assert!(norm(&v) <= 1e-12);
        let r = 1.0 + 0.05 * (i + 1) as f64;
        let v = circle.x0_lambda(&[r * t.cos(), r * t.sin()]).unwrap();
        // ‖X₀‖ = λ|r² − 1| / (2r) in closed form.
        let expect = 2.0 * (r * r - 1.0).abs() / (2.0 * r);
        assert!((norm(&v) - expect).abs() <= 1e-12 * expect);
    }
}

#[test]
fn rank_deficient_points_are_rejected() {
    let s = SystemSpec::builder(&["x", "y", "z"])
        .dissipated(&["x + y", "2*x + 2*y"])
        .targets(&[0.0, 0.0])
        .lambda(1.0)
        .build()
        .unwrap();
    assert!(!s.mrk_check(&[0.3, 0.2, 0.1]).in_mrk);
    assert!(s.x0_lambda(&[0.3, 0.2, 0.1]).is_err());
    assert!(s.gram_oracle(&[1.0, 1.0], &[0.3, 0.2, 0.1]).is_err());
}
