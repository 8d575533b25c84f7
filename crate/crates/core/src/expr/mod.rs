//! Scalar expressions in the chart coordinates `x` and `y`.
//!
//! Every field in the toolkit (metric components, Christoffel symbols,
//! 1-forms) is an [`Expr`]. Derivatives are taken symbolically with
//! [`Expr::diff`], so residual sweeps never carry finite-difference error.
//!
//! Expressions are immutable DAGs of reference-counted nodes: cloning is
//! cheap, shared subtrees stay shared through differentiation, and
//! [`Tape`] flattens a batch of expressions (with common-subexpression
//! elimination) for repeated evaluation over a grid.

mod diff;
mod parse;
mod tape;

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use thiserror::Error;

pub use parse::ParseError;
pub use tape::Tape;

/// Chart coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    Y,
}

impl Var {
    pub fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::Y => "y",
        }
    }

    /// Coordinate by index, `0 => x`, `1 => y`.
    pub fn from_index(i: usize) -> Var {
        match i {
            0 => Var::X,
            1 => Var::Y,
            _ => panic!("chart coordinate index {i} out of range"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Atan,
}

impl Func {
    pub const ALL: [Func; 7] = [
        Func::Sin,
        Func::Cos,
        Func::Tan,
        Func::Exp,
        Func::Log,
        Func::Sqrt,
        Func::Atan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Atan => "atan",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug)]
pub(crate) enum Node {
    Num(f64),
    Var(Var),
    Neg(Expr),
    Binary(BinOp, Expr, Expr),
    Call(Func, Expr),
}

/// An immutable arithmetic expression in `x` and `y`.
#[derive(Clone)]
pub struct Expr(Arc<Node>);

impl Default for Expr {
    fn default() -> Expr {
        Expr::zero()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{reason} in `{expr}` at (x, y) = ({x}, {y})")]
    Domain {
        expr: String,
        reason: &'static str,
        x: f64,
        y: f64,
    },
}

impl Expr {
    pub(crate) fn node(&self) -> &Node {
        &self.0
    }

    pub(crate) fn ptr(&self) -> *const Node {
        Arc::as_ptr(&self.0)
    }

    fn from_node(node: Node) -> Expr {
        Expr(Arc::new(node))
    }

    pub fn parse(source: &str) -> Result<Expr, ParseError> {
        parse::parse(source)
    }

    pub fn num(value: f64) -> Expr {
        Expr::from_node(Node::Num(value))
    }

    pub fn zero() -> Expr {
        Expr::num(0.0)
    }

    pub fn one() -> Expr {
        Expr::num(1.0)
    }

    pub fn var(v: Var) -> Expr {
        Expr::from_node(Node::Var(v))
    }

    pub fn x() -> Expr {
        Expr::var(Var::X)
    }

    pub fn y() -> Expr {
        Expr::var(Var::Y)
    }

    /// The literal value, if this expression is a bare number.
    pub fn as_const(&self) -> Option<f64> {
        match self.node() {
            Node::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    /// True if neither `x` nor `y` occurs in the expression.
    pub fn is_constant(&self) -> bool {
        match self.node() {
            Node::Num(_) => true,
            Node::Var(_) => false,
            Node::Neg(a) | Node::Call(_, a) => a.is_constant(),
            Node::Binary(_, a, b) => a.is_constant() && b.is_constant(),
        }
    }

    // Raw constructors build exactly the requested node; the parser uses these
    // so that printing and re-parsing preserve the tree.
    pub(crate) fn raw_neg(a: Expr) -> Expr {
        Expr::from_node(Node::Neg(a))
    }

    pub(crate) fn raw_binary(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::from_node(Node::Binary(op, a, b))
    }

    pub(crate) fn raw_call(f: Func, a: Expr) -> Expr {
        Expr::from_node(Node::Call(f, a))
    }

    pub fn call(f: Func, a: &Expr) -> Expr {
        if let Some(v) = a.as_const() {
            let folded = apply_func(f, v);
            if let Ok(folded) = folded {
                return Expr::num(folded);
            }
        }
        Expr::raw_call(f, a.clone())
    }

    pub fn sin(&self) -> Expr {
        Expr::call(Func::Sin, self)
    }

    pub fn cos(&self) -> Expr {
        Expr::call(Func::Cos, self)
    }

    pub fn exp(&self) -> Expr {
        Expr::call(Func::Exp, self)
    }

    pub fn ln(&self) -> Expr {
        Expr::call(Func::Log, self)
    }

    pub fn sqrt(&self) -> Expr {
        Expr::call(Func::Sqrt, self)
    }

    pub fn pow(&self, exponent: &Expr) -> Expr {
        if exponent.is_one() {
            return self.clone();
        }
        if exponent.is_zero() {
            return Expr::one();
        }
        if let (Some(b), Some(e)) = (self.as_const(), exponent.as_const()) {
            let v = b.powf(e);
            if v.is_finite() {
                return Expr::num(v);
            }
        }
        Expr::raw_binary(BinOp::Pow, self.clone(), exponent.clone())
    }

    pub fn powi(&self, n: i32) -> Expr {
        self.pow(&Expr::num(n as f64))
    }

    pub fn square(&self) -> Expr {
        self.powi(2)
    }

    /// Exact partial derivative with respect to `v`.
    pub fn diff(&self, v: Var) -> Expr {
        diff::diff(self, v)
    }

    /// Evaluates the expression at `(x, y)`.
    pub fn eval(&self, x: f64, y: f64) -> Result<f64, EvalError> {
        match self.node() {
            Node::Num(v) => Ok(*v),
            Node::Var(Var::X) => Ok(x),
            Node::Var(Var::Y) => Ok(y),
            Node::Neg(a) => Ok(-a.eval(x, y)?),
            Node::Binary(op, a, b) => {
                let (va, vb) = (a.eval(x, y)?, b.eval(x, y)?);
                apply_binary(*op, va, vb).map_err(|reason| self.domain_error(reason, x, y))
            }
            Node::Call(f, a) => {
                let va = a.eval(x, y)?;
                apply_func(*f, va).map_err(|reason| self.domain_error(reason, x, y))
            }
        }
    }

    pub(crate) fn domain_error(&self, reason: &'static str, x: f64, y: f64) -> EvalError {
        EvalError::Domain {
            expr: self.to_string(),
            reason,
            x,
            y,
        }
    }

    /// Number of distinct nodes in the expression DAG.
    pub fn node_count(&self) -> usize {
        fn walk(e: &Expr, seen: &mut std::collections::HashSet<*const Node>) {
            if !seen.insert(e.ptr()) {
                return;
            }
            match e.node() {
                Node::Num(_) | Node::Var(_) => {}
                Node::Neg(a) | Node::Call(_, a) => walk(a, seen),
                Node::Binary(_, a, b) => {
                    walk(a, seen);
                    walk(b, seen);
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        walk(self, &mut seen);
        seen.len()
    }
}

pub(crate) fn apply_binary(op: BinOp, a: f64, b: f64) -> Result<f64, &'static str> {
    let value = match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => {
            if b == 0.0 {
                return Err("division by zero");
            }
            a / b
        }
        BinOp::Pow => {
            if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
                if a == 0.0 && b < 0.0 {
                    return Err("zero raised to a negative power");
                }
                a.powi(b as i32)
            } else if a > 0.0 {
                a.powf(b)
            } else if a == 0.0 && b > 0.0 {
                0.0
            } else {
                return Err("non-integer power of a non-positive base");
            }
        }
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err("non-finite result")
    }
}

pub(crate) fn apply_func(f: Func, a: f64) -> Result<f64, &'static str> {
    let value = match f {
        Func::Sin => a.sin(),
        Func::Cos => a.cos(),
        Func::Tan => a.tan(),
        Func::Exp => a.exp(),
        Func::Atan => a.atan(),
        Func::Log => {
            if a <= 0.0 {
                return Err("logarithm of a non-positive number");
            }
            a.ln()
        }
        Func::Sqrt => {
            if a < 0.0 {
                return Err("square root of a negative number");
            }
            a.sqrt()
        }
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err("non-finite result")
    }
}

impl fmt::Display for Expr {
    /// Fully parenthesised output that [`Expr::parse`] reads back to the same tree
    /// (negative literals print as a negation of their magnitude).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Num(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => {
                write!(f, "(-{})", -v)
            }
            Node::Num(v) => write!(f, "{v}"),
            Node::Var(v) => f.write_str(v.name()),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Node::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

impl From<f64> for Expr {
    fn from(v: f64) -> Expr {
        Expr::num(v)
    }
}

impl From<Var> for Expr {
    fn from(v: Var) -> Expr {
        Expr::var(v)
    }
}

// Arithmetic builders fold literal identities (0 + a, 1 * a, ...) so that
// symbolically assembled tensors stay small. Parsed trees are never folded.

fn add(a: &Expr, b: &Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::num(x + y),
        (Some(0.0), _) => b.clone(),
        (_, Some(0.0)) => a.clone(),
        _ => Expr::raw_binary(BinOp::Add, a.clone(), b.clone()),
    }
}

fn sub(a: &Expr, b: &Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::num(x - y),
        (_, Some(0.0)) => a.clone(),
        (Some(0.0), _) => neg(b),
        _ => Expr::raw_binary(BinOp::Sub, a.clone(), b.clone()),
    }
}

fn mul(a: &Expr, b: &Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::num(x * y),
        (Some(0.0), _) => Expr::zero(),
        (_, Some(0.0)) => Expr::zero(),
        (Some(1.0), _) => b.clone(),
        (_, Some(1.0)) => a.clone(),
        (Some(-1.0), _) => neg(b),
        (_, Some(-1.0)) => neg(a),
        _ => Expr::raw_binary(BinOp::Mul, a.clone(), b.clone()),
    }
}

fn div(a: &Expr, b: &Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) if y != 0.0 => Expr::num(x / y),
        (Some(0.0), _) => Expr::zero(),
        (_, Some(1.0)) => a.clone(),
        _ => Expr::raw_binary(BinOp::Div, a.clone(), b.clone()),
    }
}

fn neg(a: &Expr) -> Expr {
    match a.node() {
        Node::Num(v) => Expr::num(-v),
        Node::Neg(inner) => inner.clone(),
        _ => Expr::raw_neg(a.clone()),
    }
}

macro_rules! impl_binary_op {
    ($trait:ident, $method:ident, $builder:ident) => {
        impl $trait<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                $builder(self, rhs)
            }
        }
        impl $trait<Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                $builder(&self, &rhs)
            }
        }
        impl $trait<&Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                $builder(&self, rhs)
            }
        }
        impl $trait<Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                $builder(self, &rhs)
            }
        }
        impl $trait<f64> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                $builder(self, &Expr::num(rhs))
            }
        }
        impl $trait<f64> for Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                $builder(&self, &Expr::num(rhs))
            }
        }
        impl $trait<&Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                $builder(&Expr::num(self), rhs)
            }
        }
        impl $trait<Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                $builder(&Expr::num(self), &rhs)
            }
        }
    };
}

impl_binary_op!(Add, add, add);
impl_binary_op!(Sub, sub, sub);
impl_binary_op!(Mul, mul, mul);
impl_binary_op!(Div, div, div);

impl Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        neg(self)
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        neg(&self)
    }
}

impl std::iter::Sum for Expr {
    fn sum<I: Iterator<Item = Expr>>(iter: I) -> Expr {
        iter.fold(Expr::zero(), |acc, e| acc + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eval(src: &str, x: f64, y: f64) -> Result<f64, EvalError> {
        Expr::parse(src).unwrap().eval(x, y)
    }

    #[test]
    fn evaluates_basic_arithmetic() {
        assert_eq!(eval("x^2 + y", 2.0, 3.0).unwrap(), 7.0);
        assert_eq!(eval("sin(x)*cos(x)", 0.0, 0.0).unwrap(), 0.0);
        assert!((eval("1/(1+x^2+y^2)", 1.0, 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-16);
        assert_eq!(eval("exp(0)", 0.3, -0.2).unwrap(), 1.0);
    }

    #[test]
    fn division_by_zero_is_a_domain_error() {
        match eval("x/y", 1.0, 0.0) {
            Err(EvalError::Domain { expr, reason, x, y }) => {
                assert_eq!(expr, "(x / y)");
                assert_eq!(reason, "division by zero");
                assert_eq!((x, y), (1.0, 0.0));
            }
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn other_domain_errors() {
        assert!(eval("log(x)", 0.0, 0.0).is_err());
        assert!(eval("log(x)", -1.0, 0.0).is_err());
        assert!(eval("sqrt(y)", 0.0, -1e-9).is_err());
        assert!(eval("x^0.5", -2.0, 0.0).is_err());
        assert!(eval("x^-1", 0.0, 0.0).is_err());
        assert_eq!(eval("x^0.5", 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(eval("x^3", -2.0, 0.0).unwrap(), -8.0);
        assert!(eval("exp(x)", 1000.0, 0.0).is_err());
    }

    #[test]
    fn derivative_examples() {
        let e = Expr::parse("2*x^3").unwrap();
        assert_eq!(e.diff(Var::X).eval(2.0, 0.0).unwrap(), 24.0);

        let e = Expr::parse("x*y").unwrap().diff(Var::X);
        for &(x, y) in &[(0.3, -1.7), (2.0, 5.0), (-4.0, 0.25)] {
            assert_eq!(e.eval(x, y).unwrap(), y);
        }

        let e = Expr::parse("sin(x)").unwrap().diff(Var::X);
        assert!((e.eval(std::f64::consts::PI, 0.0).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn builders_fold_identities() {
        let x = Expr::x();
        assert_eq!((&x * 1.0).to_string(), "x");
        assert!((&x * 0.0).is_zero());
        assert_eq!((0.0 + &x).to_string(), "x");
        assert_eq!((-(-&x)).to_string(), "x");
        assert_eq!(x.pow(&Expr::one()).to_string(), "x");
        assert_eq!(Expr::num(4.0).sqrt().as_const(), Some(2.0));
    }

    #[test]
    fn negative_literals_print_and_reparse() {
        let e = Expr::num(-1.5) * Expr::x();
        let back = Expr::parse(&e.to_string()).unwrap();
        assert_eq!(back.eval(2.0, 0.0).unwrap(), -3.0);
    }

    #[test]
    fn expressions_are_send_and_sync() {
        fn check<T: Send + Sync>() {}
        check::<Expr>();
        check::<Tape>();
    }

    // A grammar-driven generator over the whole language.
    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (-3.0f64..3.0).prop_map(|v| Expr::num((v * 100.0).round() / 100.0)),
            Just(Expr::x()),
            Just(Expr::y()),
        ];
        leaf.prop_recursive(6, 64, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(Expr::raw_neg),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::raw_binary(
                    BinOp::Add,
                    a,
                    b
                )),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::raw_binary(
                    BinOp::Sub,
                    a,
                    b
                )),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::raw_binary(
                    BinOp::Mul,
                    a,
                    b
                )),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::raw_binary(
                    BinOp::Div,
                    a,
                    b
                )),
                (inner.clone(), 0u8..4).prop_map(|(a, n)| Expr::raw_binary(
                    BinOp::Pow,
                    a,
                    Expr::num(n as f64)
                )),
                (inner, 0usize..7).prop_map(|(a, k)| Expr::raw_call(Func::ALL[k], a)),
            ]
        })
    }

    fn grid_points() -> Vec<(f64, f64)> {
        // 100 deterministic points in [-2, 2]^2.
        (0..100)
            .map(|k| {
                let s = k as f64;
                (
                    -2.0 + 4.0 * ((s * 0.618_033_988_7).fract()),
                    -2.0 + 4.0 * ((s * 0.414_213_562_3 + 0.1).fract()),
                )
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn print_parse_round_trip(e in arb_expr()) {
            let printed = e.to_string();
            let back = Expr::parse(&printed).unwrap();
            prop_assert_eq!(back.to_string(), printed);
            for (x, y) in grid_points() {
                match (e.eval(x, y), back.eval(x, y)) {
                    (Ok(a), Ok(b)) => prop_assert_eq!(a.to_bits(), b.to_bits()),
                    (Err(_), Err(_)) => {}
                    (a, b) => prop_assert!(false, "mismatch {:?} vs {:?}", a, b),
                }
            }
        }

        #[test]
        fn derivative_matches_central_difference(e in arb_expr(), var in prop_oneof![Just(Var::X), Just(Var::Y)]) {
            let d = e.diff(var);
            let h = 1e-5;
            for (x, y) in grid_points() {
                let (xp, yp, xm, ym) = match var {
                    Var::X => (x + h, y, x - h, y),
                    Var::Y => (x, y + h, x, y - h),
                };
                let (Ok(v), Ok(dv), Ok(fp), Ok(fm)) =
                    (e.eval(x, y), d.eval(x, y), e.eval(xp, yp), e.eval(xm, ym)) else { continue };
                if v.abs() >= 1e6 || dv.abs() >= 1e6 {
                    continue;
                }
                // Skip points near singularities where the difference quotient
                // itself is unreliable: require agreement of two step sizes.
                let fd = (fp - fm) / (2.0 * h);
                let (xp2, yp2, xm2, ym2) = match var {
                    Var::X => (x + 2.0 * h, y, x - 2.0 * h, y),
                    Var::Y => (x, y + 2.0 * h, x, y - 2.0 * h),
                };
                let (Ok(fp2), Ok(fm2)) = (e.eval(xp2, yp2), e.eval(xm2, ym2)) else { continue };
                let fd2 = (fp2 - fm2) / (4.0 * h);
                let scale = 1.0 + dv.abs();
                if (fd - fd2).abs() > 1e-7 * scale {
                    continue;
                }
                prop_assert!((fd - dv).abs() <= 1e-6 * scale,
                    "d/d{} of {} at ({}, {}): symbolic {} vs fd {}", var.name(), e, x, y, dv, fd);
            }
        }
    }
}
