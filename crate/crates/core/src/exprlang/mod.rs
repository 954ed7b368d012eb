//! A small arithmetic language for smooth scalar functions of `n` named variables.
//!
//! Expressions are parsed from infix text (see [`parse`]), evaluated in IEEE
//! double precision, and differentiated symbolically with constant folding.
//! A forward-mode dual-number evaluator computes the same gradients through an
//! independent path.

mod diff;
mod dual;
mod parse;

use std::fmt;

pub use diff::diff;
pub use dual::{dual_gradient, Dual};
pub use parse::{parse, ParseError};

/// Unary elementary functions accepted by the grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryFn {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Tanh,
}

impl UnaryFn {
    pub const ALL: [UnaryFn; 6] = [
        UnaryFn::Sin,
        UnaryFn::Cos,
        UnaryFn::Exp,
        UnaryFn::Ln,
        UnaryFn::Sqrt,
        UnaryFn::Tanh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UnaryFn::Sin => "sin",
            UnaryFn::Cos => "cos",
            UnaryFn::Exp => "exp",
            UnaryFn::Ln => "ln",
            UnaryFn::Sqrt => "sqrt",
            UnaryFn::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }
}

/// Constant exponent of a power node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exponent {
    Int(i32),
    Real(f64),
}

impl Exponent {
    pub fn value(self) -> f64 {
        match self {
            Exponent::Int(k) => k as f64,
            Exponent::Real(r) => r,
        }
    }

    /// Integer-valued reals collapse to `Int` so that negative bases stay legal.
    pub fn from_f64(v: f64) -> Self {
        if v.fract() == 0.0 && v.abs() <= i32::MAX as f64 {
            Exponent::Int(v as i32)
        } else {
            Exponent::Real(v)
        }
    }
}

/// Expression tree. Immutable once built; children are boxed.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Pow(Box<Expr>, Exponent),
    Unary(UnaryFn, Box<Expr>),
}

/// Evaluation failed because a guard was violated.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("domain violation: {reason} at node `{node}`")]
pub struct DomainError {
    pub node: String,
    pub reason: &'static str,
}

impl Expr {
    pub fn var(i: usize) -> Self {
        Expr::Var(i)
    }

    pub fn constant(c: f64) -> Self {
        Expr::Const(c)
    }

    /// Children in left-to-right order.
    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Const(_) | Expr::Var(_) => vec![],
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => vec![a, b],
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Unary(_, a) => vec![a],
        }
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Var(i) => Some(*i),
            _ => self.children().into_iter().filter_map(Expr::max_var).max(),
        }
    }

    pub fn depth(&self) -> usize {
        1 + self
            .children()
            .into_iter()
            .map(Expr::depth)
            .max()
            .unwrap_or(0)
    }

    pub fn is_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    /// Evaluate at `x`. Variable indices beyond `x.len()` are a caller bug and panic.
    pub fn eval(&self, x: &[f64]) -> Result<f64, DomainError> {
        let fail = |reason| DomainError {
            node: self.to_string(),
            reason,
        };
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Add(a, b) => a.eval(x)? + b.eval(x)?,
            Expr::Sub(a, b) => a.eval(x)? - b.eval(x)?,
            Expr::Mul(a, b) => a.eval(x)? * b.eval(x)?,
            Expr::Div(a, b) => {
                let num = a.eval(x)?;
                let den = b.eval(x)?;
                if den == 0.0 {
                    return Err(fail("division by zero"));
                }
                num / den
            }
            Expr::Neg(a) => -a.eval(x)?,
            Expr::Pow(a, e) => {
                let base = a.eval(x)?;
                match *e {
                    Exponent::Int(k) => {
                        if k < 0 && base == 0.0 {
                            return Err(fail("zero raised to a negative power"));
                        }
                        base.powi(k)
                    }
                    Exponent::Real(r) => {
                        if base <= 0.0 {
                            return Err(fail("non-integer power of a non-positive base"));
                        }
                        base.powf(r)
                    }
                }
            }
            Expr::Unary(f, a) => {
                let u = a.eval(x)?;
                match f {
                    UnaryFn::Sin => u.sin(),
                    UnaryFn::Cos => u.cos(),
                    UnaryFn::Exp => u.exp(),
                    UnaryFn::Tanh => u.tanh(),
                    UnaryFn::Ln => {
                        if u <= 0.0 {
                            return Err(fail("logarithm of a non-positive value"));
                        }
                        u.ln()
                    }
                    UnaryFn::Sqrt => {
                        if u < 0.0 {
                            return Err(fail("square root of a negative value"));
                        }
                        u.sqrt()
                    }
                }
            }
        })
    }

    /// Render with the supplied variable names. The output parses back to an
    /// expression with identical evaluation.
    pub fn display<'a>(&'a self, names: &'a [String]) -> Named<'a> {
        Named { expr: self, names }
    }

    fn write(&self, f: &mut fmt::Formatter<'_>, names: Option<&[String]>) -> fmt::Result {
        match self {
            Expr::Const(c) => write_number(f, *c),
            Expr::Var(i) => match names.and_then(|n| n.get(*i)) {
                Some(name) => write!(f, "{name}"),
                None => write!(f, "x{}", i + 1),
            },
            Expr::Add(a, b) => binary(f, a, "+", b, names),
            Expr::Sub(a, b) => binary(f, a, "-", b, names),
            Expr::Mul(a, b) => binary(f, a, "*", b, names),
            Expr::Div(a, b) => binary(f, a, "/", b, names),
            Expr::Neg(a) => {
                write!(f, "(-")?;
                a.write(f, names)?;
                write!(f, ")")
            }
            Expr::Pow(a, e) => {
                write!(f, "(")?;
                a.write(f, names)?;
                write!(f, ")^")?;
                match *e {
                    Exponent::Int(k) if k < 0 => write!(f, "({k})"),
                    Exponent::Int(k) => write!(f, "{k}"),
                    Exponent::Real(r) => write_number(f, r),
                }
            }
            Expr::Unary(func, a) => {
                write!(f, "{}(", func.name())?;
                a.write(f, names)?;
                write!(f, ")")
            }
        }
    }
}

fn binary(
    f: &mut fmt::Formatter<'_>,
    a: &Expr,
    op: &str,
    b: &Expr,
    names: Option<&[String]>,
) -> fmt::Result {
    write!(f, "(")?;
    a.write(f, names)?;
    write!(f, " {op} ")?;
    b.write(f, names)?;
    write!(f, ")")
}

fn write_number(f: &mut fmt::Formatter<'_>, c: f64) -> fmt::Result {
    // `{:?}` is the shortest representation that round-trips exactly.
    if c < 0.0 || (c == 0.0 && c.is_sign_negative()) {
        write!(f, "(-{:?})", -c)
    } else {
        write!(f, "{c:?}")
    }
}

/// Positional names `x1..xn`.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, None)
    }
}

pub struct Named<'a> {
    expr: &'a Expr,
    names: &'a [String],
}

impl fmt::Display for Named<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.expr.write(f, Some(self.names))
    }
}

/// An expression bundled with its symbolic partial derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Function {
    expr: Expr,
    partials: Vec<Expr>,
}

impl Function {
    pub fn new(expr: Expr, n: usize) -> Self {
        let partials = (0..n).map(|i| diff(&expr, i)).collect();
        Function { expr, partials }
    }

    pub fn parse(text: &str, names: &[String]) -> Result<Self, ParseError> {
        Ok(Self::new(parse(text, names)?, names.len()))
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn partials(&self) -> &[Expr] {
        &self.partials
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, DomainError> {
        self.expr.eval(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, DomainError> {
        self.partials.iter().map(|p| p.eval(x)).collect()
    }
}

/// Symbolic gradient of `e` at `x`.
pub fn gradient(e: &Expr, x: &[f64]) -> Result<Vec<f64>, DomainError> {
    (0..x.len()).map(|i| diff(e, i).eval(x)).collect()
}

/// Variable names together with the expressions that reference them.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionSet {
    names: Vec<String>,
    exprs: Vec<Expr>,
}

impl FunctionSet {
    pub fn new(names: Vec<String>) -> Self {
        FunctionSet {
            names,
            exprs: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn exprs(&self) -> &[Expr] {
        &self.exprs
    }

    /// Parse and append; returns the index of the new expression.
    pub fn push_parsed(&mut self, text: &str) -> Result<usize, ParseError> {
        let e = parse(text, &self.names)?;
        self.exprs.push(e);
        Ok(self.exprs.len() - 1)
    }
}
