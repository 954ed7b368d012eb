//! Random problem generator shared by the integration suites.
#![allow(dead_code)]

use attractorforge::exprlang::{Expr, Function};
use attractorforge::fieldforge::SystemSpec;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn var_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

fn coef(rng: &mut ChaCha8Rng) -> f64 {
    (rng.gen_range(-1.0f64..1.0) * 1000.0).round() / 1000.0
}

/// Linear part plus one to three polynomial or trigonometric terms.
pub fn random_function(rng: &mut ChaCha8Rng, n: usize) -> String {
    let mut terms: Vec<String> = (1..=n).map(|j| format!("{}*x{j}", coef(rng))).collect();
    for _ in 0..rng.gen_range(1..=3) {
        let a = rng.gen_range(1..=n);
        let b = rng.gen_range(1..=n);
        let c = coef(rng);
        let t = match rng.gen_range(0..6) {
            0 => format!("{c}*x{a}*x{b}"),
            1 => format!("{c}*x{a}^2"),
            2 => format!("{c}*x{a}^3"),
            3 => format!("{c}*sin(x{a})"),
            4 => format!("{c}*cos(x{a} - x{b})"),
            _ => format!("{c}*x{a}*cos(x{b})"),
        };
        terms.push(t);
    }
    terms.join(" + ")
}

fn det(rows: &[Vec<Expr>]) -> Expr {
    let m = rows.len();
    if m == 1 {
        return rows[0][0].clone();
    }
    let mut acc: Option<Expr> = None;
    for c in 0..m {
        let minor: Vec<Vec<Expr>> = rows[1..]
            .iter()
            .map(|r| r.iter().enumerate().filter(|(j, _)| *j != c).map(|(_, e)| e.clone()).collect())
            .collect();
        let term = Expr::Mul(Box::new(rows[0][c].clone()), Box::new(det(&minor)));
        acc = Some(match acc {
            None if c % 2 == 0 => term,
            None => Expr::Neg(Box::new(term)),
            Some(a) if c % 2 == 0 => Expr::Add(Box::new(a), Box::new(term)),
            Some(a) => Expr::Sub(Box::new(a), Box::new(term)),
        });
    }
    acc.expect("non-empty")
}

/// Cofactor field `X_i = (−1)^i det(J without column i)` of `n − 1` functions;
/// it is tangent to every level set of every function.
pub fn cofactor_field(funcs: &[String], n: usize) -> Vec<String> {
    assert_eq!(funcs.len() + 1, n);
    let names = var_names(n);
    let jac: Vec<Vec<Expr>> = funcs
        .iter()
        .map(|f| Function::parse(f, &names).unwrap().partials().to_vec())
        .collect();
    (0..n)
        .map(|i| {
            let rows: Vec<Vec<Expr>> = jac
                .iter()
                .map(|r| r.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, e)| e.clone()).collect())
                .collect();
            let d = det(&rows);
            let e = if i % 2 == 0 { d } else { Expr::Neg(Box::new(d)) };
            e.to_string()
        })
        .collect()
}

pub struct RandomCase {
    pub spec: SystemSpec,
    pub points: Vec<Vec<f64>>,
}

/// Random spec with `n ≤ 6`, `p ≤ 3`, `k ≤ 2` and up to `per_spec` points with
/// rank margin at least `min_margin`. Some `n ∈ {3, 4}` cases carry a
/// conservative cofactor base field.
pub fn random_case(rng: &mut ChaCha8Rng, per_spec: usize, min_margin: f64) -> RandomCase {
    loop {
        let n = rng.gen_range(2..=6);
        let with_base = (n == 3 || n == 4) && rng.gen_bool(0.5);
        let (p, k) = if with_base {
            let p = rng.gen_range(1..=(n - 1).min(3));
            (p, n - 1 - p)
        } else {
            let p = rng.gen_range(1..=n.min(3));
            (p, rng.gen_range(0..=(n - p).min(2)))
        };
        if k > 2 {
            continue;
        }
        let names = var_names(n);
        let d_funcs: Vec<String> = (0..p).map(|_| random_function(rng, n)).collect();
        let i_funcs: Vec<String> = (0..k).map(|_| random_function(rng, n)).collect();
        let targets: Vec<f64> = (0..p).map(|_| coef(rng)).collect();
        let mut b = SystemSpec::builder(&names)
            .dissipated(&d_funcs)
            .targets(&targets)
            .conserved(&i_funcs)
            .lambda(rng.gen_range(0.1..2.0))
            .p_prime(rng.gen_range(1..=p));
        if with_base {
            let all: Vec<String> = d_funcs.iter().chain(&i_funcs).cloned().collect();
            b = b.base_field(&cofactor_field(&all, n));
        }
        let spec = b.build().expect("generated spec is valid");
        let mut points = Vec::new();
        for _ in 0..per_spec * 50 {
            if points.len() == per_spec {
                break;
            }
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
            if spec.mrk_check(&x).margin >= min_margin && spec.x_lambda(&x).is_ok() {
                points.push(x);
            }
        }
        if !points.is_empty() {
            return RandomCase { spec, points };
        }
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
