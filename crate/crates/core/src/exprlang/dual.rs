//! Forward-mode differentiation with first-order dual numbers.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::{DomainError, Expr, Exponent, UnaryFn};

/// `re + eps·ε` with `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub fn new(re: f64, eps: f64) -> Self {
        Dual { re, eps }
    }

    pub fn constant(re: f64) -> Self {
        Dual { re, eps: 0.0 }
    }

    pub fn powi(self, k: i32) -> Self {
        if k == 0 {
            return Dual::constant(1.0);
        }
        Dual::new(self.re.powi(k), k as f64 * self.re.powi(k - 1) * self.eps)
    }

    pub fn powf(self, r: f64) -> Self {
        Dual::new(self.re.powf(r), r * self.re.powf(r - 1.0) * self.eps)
    }

    pub fn sin(self) -> Self {
        Dual::new(self.re.sin(), self.re.cos() * self.eps)
    }

    pub fn cos(self) -> Self {
        Dual::new(self.re.cos(), -self.re.sin() * self.eps)
    }

    pub fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, e * self.eps)
    }

    pub fn ln(self) -> Self {
        Dual::new(self.re.ln(), self.eps / self.re)
    }

    pub fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Dual::new(s, self.eps / (2.0 * s))
    }

    pub fn tanh(self) -> Self {
        let t = self.re.tanh();
        Dual::new(t, (1.0 - t * t) * self.eps)
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual::new(
            self.re / o.re,
            (self.eps * o.re - self.re * o.eps) / (o.re * o.re),
        )
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.eps)
    }
}

impl Expr {
    /// Evaluate on dual inputs. Guards are the same as [`Expr::eval`].
    pub fn eval_dual(&self, x: &[Dual]) -> Result<Dual, DomainError> {
        let fail = |reason| DomainError {
            node: self.to_string(),
            reason,
        };
        Ok(match self {
            Expr::Const(c) => Dual::constant(*c),
            Expr::Var(i) => x[*i],
            Expr::Add(a, b) => a.eval_dual(x)? + b.eval_dual(x)?,
            Expr::Sub(a, b) => a.eval_dual(x)? - b.eval_dual(x)?,
            Expr::Mul(a, b) => a.eval_dual(x)? * b.eval_dual(x)?,
            Expr::Div(a, b) => {
                let num = a.eval_dual(x)?;
                let den = b.eval_dual(x)?;
                if den.re == 0.0 {
                    return Err(fail("division by zero"));
                }
                num / den
            }
            Expr::Neg(a) => -a.eval_dual(x)?,
            Expr::Pow(a, e) => {
                let base = a.eval_dual(x)?;
                match *e {
                    Exponent::Int(k) => {
                        if k < 0 && base.re == 0.0 {
                            return Err(fail("zero raised to a negative power"));
                        }
                        base.powi(k)
                    }
                    Exponent::Real(r) => {
                        if base.re <= 0.0 {
                            return Err(fail("non-integer power of a non-positive base"));
                        }
                        base.powf(r)
                    }
                }
            }
            Expr::Unary(f, a) => {
                let u = a.eval_dual(x)?;
                match f {
                    UnaryFn::Sin => u.sin(),
                    UnaryFn::Cos => u.cos(),
                    UnaryFn::Exp => u.exp(),
                    UnaryFn::Tanh => u.tanh(),
                    UnaryFn::Ln => {
                        if u.re <= 0.0 {
                            return Err(fail("logarithm of a non-positive value"));
                        }
                        u.ln()
                    }
                    UnaryFn::Sqrt => {
                        if u.re < 0.0 {
                            return Err(fail("square root of a negative value"));
                        }
                        u.sqrt()
                    }
                }
            }
        })
    }
}

/// Gradient by `n` forward sweeps, one seed direction per coordinate.
pub fn dual_gradient(e: &Expr, x: &[f64]) -> Result<Vec<f64>, DomainError> {
    let mut seeds: Vec<Dual> = x.iter().map(|&v| Dual::constant(v)).collect();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        seeds[i].eps = 1.0;
        out.push(e.eval_dual(&seeds)?.eps);
        seeds[i].eps = 0.0;
    }
    Ok(out)
}
