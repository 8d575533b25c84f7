use std::collections::HashMap;

use super::{BinOp, Expr, Func, Node, Var};

/// Symbolic partial derivative. Memoised on node identity so that shared
/// subtrees produce shared derivative subtrees.
pub(super) fn diff(e: &Expr, v: Var) -> Expr {
    let mut memo = HashMap::new();
    go(e, v, &mut memo)
}

fn go(e: &Expr, v: Var, memo: &mut HashMap<*const Node, Expr>) -> Expr {
    if let Some(d) = memo.get(&e.ptr()) {
        return d.clone();
    }
    let d = match e.node() {
        Node::Num(_) => Expr::zero(),
        Node::Var(w) => {
            if *w == v {
                Expr::one()
            } else {
                Expr::zero()
            }
        }
        Node::Neg(a) => -go(a, v, memo),
        Node::Binary(op, a, b) => {
            let da = go(a, v, memo);
            let db = go(b, v, memo);
            match op {
                BinOp::Add => &da + &db,
                BinOp::Sub => &da - &db,
                BinOp::Mul => &da * b + a * &db,
                BinOp::Div => (&da * b - a * &db) / b.square(),
                BinOp::Pow => {
                    if db.is_zero() && b.is_constant() {
                        // n * a^(n - 1) * a'
                        let lowered = match b.as_const() {
                            Some(n) => Expr::num(n - 1.0),
                            None => b - 1.0,
                        };
                        b * a.pow(&lowered) * &da
                    } else {
                        // a^b * (b' log a + b a' / a)
                        e * (&db * a.ln() + b * &da / a)
                    }
                }
            }
        }
        Node::Call(f, a) => {
            let da = go(a, v, memo);
            if da.is_zero() {
                Expr::zero()
            } else {
                let outer = match f {
                    Func::Sin => a.cos(),
                    Func::Cos => -a.sin(),
                    Func::Tan => 1.0 / a.cos().square(),
                    Func::Exp => e.clone(),
                    Func::Log => 1.0 / a,
                    Func::Sqrt => 0.5 / e,
                    Func::Atan => 1.0 / (1.0 + a.square()),
                };
                outer * da
            }
        }
    };
    memo.insert(e.ptr(), d.clone());
    d
}
