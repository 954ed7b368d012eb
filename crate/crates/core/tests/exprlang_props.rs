use attractorforge::exprlang::{diff, dual_gradient, gradient, parse, Exponent, Expr, UnaryFn};
use proptest::prelude::*;

const N: usize = 3;

fn names() -> Vec<String> {
    (1..=N).map(|i| format!("x{i}")).collect()
}

fn b(e: Expr) -> Box<Expr> {
    Box::new(e)
}

fn one_plus_sq(e: Expr) -> Expr {
    Expr::Add(b(Expr::Const(1.0)), b(Expr::Pow(b(e), Exponent::Int(2))))
}

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (0..N).prop_map(Expr::Var),
        (-2.0f64..2.0).prop_map(|c| Expr::Const((c * 100.0).round() / 100.0)),
    ]
}

/// Trees of depth at most 6 whose guarded nodes see arguments bounded away from
/// the edge of their domain.
fn tree() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(5, 48, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, c)| Expr::Add(b(a), b(c))),
            (inner.clone(), inner.clone()).prop_map(|(a, c)| Expr::Sub(b(a), b(c))),
            (inner.clone(), inner.clone()).prop_map(|(a, c)| Expr::Mul(b(a), b(c))),
            (inner.clone(), inner.clone()).prop_map(|(a, c)| Expr::Div(b(a), b(one_plus_sq(c)))),
            inner.clone().prop_map(|a| Expr::Neg(b(a))),
            (inner.clone(), 0i32..4).prop_map(|(a, k)| Expr::Pow(b(a), Exponent::Int(k))),
            inner.clone().prop_map(|a| Expr::Pow(b(one_plus_sq(a)), Exponent::Real(-0.5))),
            inner.clone().prop_map(|a| Expr::Unary(UnaryFn::Sin, b(a))),
            inner.clone().prop_map(|a| Expr::Unary(UnaryFn::Cos, b(a))),
            inner.clone().prop_map(|a| Expr::Unary(UnaryFn::Tanh, b(a))),
            inner.clone().prop_map(|a| Expr::Unary(UnaryFn::Exp, b(Expr::Unary(UnaryFn::Tanh, b(a))))),
            inner.clone().prop_map(|a| Expr::Unary(UnaryFn::Ln, b(one_plus_sq(a)))),
            inner.prop_map(|a| Expr::Unary(UnaryFn::Sqrt, b(one_plus_sq(a)))),
        ]
    })
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.5f64..1.5, N)
}

fn central_fd(e: &Expr, x: &[f64], i: usize) -> f64 {
    let h = 1e-5 * x[i].abs().max(1.0);
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (e.eval(&xp).unwrap() - e.eval(&xm).unwrap()) / (2.0 * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn symbolic_matches_finite_difference(e in tree(), x in point()) {
        prop_assume!(e.depth() <= 6);
        let f = e.eval(&x).unwrap();
        prop_assume!(f.abs() < 1e6);
        let g = gradient(&e, &x).unwrap();
        for i in 0..N {
            let fd = central_fd(&e, &x, i);
            let scale = 1f64.max(g[i].abs()).max(f.abs());
            prop_assert!((g[i] - fd).abs() <= 1e-5 * scale, "d/dx{} of {}: {} vs {}", i + 1, e, g[i], fd);
        }
    }

    #[test]
    fn symbolic_matches_dual(e in tree(), x in point()) {
        let g = gradient(&e, &x).unwrap();
        let d = dual_gradient(&e, &x).unwrap();
        for i in 0..N {
            prop_assert!((g[i] - d[i]).abs() <= 1e-12 * g[i].abs().max(1.0), "{}: {} vs {}", e, g[i], d[i]);
        }
    }

    #[test]
    fn print_parse_round_trip(e in tree(), pts in proptest::collection::vec(point(), 100)) {
        let text = e.display(&names()).to_string();
        let back = parse(&text, &names()).unwrap();
        for x in &pts {
            let (a, c) = (e.eval(x).unwrap(), back.eval(x).unwrap());
            prop_assert!((a - c).abs() <= 1e-15 * a.abs().max(1.0), "{text}: {a} vs {c}");
        }
    }

    #[test]
    fn derivative_of_sum_is_sum_of_derivatives(a in tree(), c in tree(), x in point()) {
        let s = Expr::Add(b(a.clone()), b(c.clone()));
        for i in 0..N {
            let lhs = diff(&s, i).eval(&x).unwrap();
            let rhs = diff(&a, i).eval(&x).unwrap() + diff(&c, i).eval(&x).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
    }
}

#[test]
fn worked_gradients() {
    let n = names();
    let e = parse("x1^2 * x2 + sin(x3)", &n).unwrap();
    let g = gradient(&e, &[1.0, 2.0, 0.0]).unwrap();
    assert_eq!(g, vec![4.0, 1.0, 1.0]);
    let e = parse("exp(x1) / x2", &n).unwrap();
    let g = dual_gradient(&e, &[0.0, 2.0, 0.0]).unwrap();
    assert!((g[0] - 0.5).abs() < 1e-15 && (g[1] + 0.25).abs() < 1e-15);
}
