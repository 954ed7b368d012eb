//! Symbolic partial derivatives. Only constant folding is applied to the output.

use super::{Expr, Exponent, UnaryFn};

fn add(a: Expr, b: Expr) -> Expr {
    match (a.is_const(), b.is_const()) {
        (Some(x), Some(y)) => Expr::Const(x + y),
        (Some(x), _) if x == 0.0 => b,
        (_, Some(y)) if y == 0.0 => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (a.is_const(), b.is_const()) {
        (Some(x), Some(y)) => Expr::Const(x - y),
        (Some(x), _) if x == 0.0 => neg(b),
        (_, Some(y)) if y == 0.0 => a,
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (a.is_const(), b.is_const()) {
        (Some(x), Some(y)) => Expr::Const(x * y),
        (Some(x), _) | (_, Some(x)) if x == 0.0 => Expr::Const(0.0),
        (Some(x), _) if x == 1.0 => b,
        (_, Some(y)) if y == 1.0 => a,
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (a.is_const(), b.is_const()) {
        (Some(x), _) if x == 0.0 => Expr::Const(0.0),
        (_, Some(y)) if y == 1.0 => a,
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

fn pow(a: Expr, e: Exponent) -> Expr {
    match e {
        Exponent::Int(0) => Expr::Const(1.0),
        Exponent::Int(1) => a,
        _ => Expr::Pow(Box::new(a), e),
    }
}

fn unary(f: UnaryFn, a: Expr) -> Expr {
    Expr::Unary(f, Box::new(a))
}

/// ∂e/∂x_i.
pub fn diff(e: &Expr, i: usize) -> Expr {
    match e {
        Expr::Const(_) => Expr::Const(0.0),
        Expr::Var(j) => Expr::Const(if *j == i { 1.0 } else { 0.0 }),
        Expr::Add(a, b) => add(diff(a, i), diff(b, i)),
        Expr::Sub(a, b) => sub(diff(a, i), diff(b, i)),
        Expr::Mul(a, b) => add(
            mul(diff(a, i), (**b).clone()),
            mul((**a).clone(), diff(b, i)),
        ),
        Expr::Div(a, b) => {
            let da = diff(a, i);
            let db = diff(b, i);
            if db.is_const() == Some(0.0) {
                return div(da, (**b).clone());
            }
            div(
                sub(mul(da, (**b).clone()), mul((**a).clone(), db)),
                pow((**b).clone(), Exponent::Int(2)),
            )
        }
        Expr::Neg(a) => neg(diff(a, i)),
        Expr::Pow(a, ex) => {
            let da = diff(a, i);
            if da.is_const() == Some(0.0) {
                return Expr::Const(0.0);
            }
            let lowered = match *ex {
                Exponent::Int(k) => Exponent::Int(k - 1),
                Exponent::Real(r) => Exponent::Real(r - 1.0),
            };
            mul(
                mul(Expr::Const(ex.value()), pow((**a).clone(), lowered)),
                da,
            )
        }
        Expr::Unary(f, a) => {
            let da = diff(a, i);
            if da.is_const() == Some(0.0) {
                return Expr::Const(0.0);
            }
            let u = (**a).clone();
            let outer = match f {
                UnaryFn::Sin => unary(UnaryFn::Cos, u),
                UnaryFn::Cos => neg(unary(UnaryFn::Sin, u)),
                UnaryFn::Exp => unary(UnaryFn::Exp, u),
                UnaryFn::Ln => return div(da, u),
                UnaryFn::Sqrt => {
                    return div(da, mul(Expr::Const(2.0), unary(UnaryFn::Sqrt, u)));
                }
                UnaryFn::Tanh => sub(
                    Expr::Const(1.0),
                    pow(unary(UnaryFn::Tanh, u), Exponent::Int(2)),
                ),
            };
            mul(outer, da)
        }
    }
}
