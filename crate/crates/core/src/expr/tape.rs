use std::collections::HashMap;

use super::{apply_binary, apply_func, BinOp, EvalError, Expr, Func, Node, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Op {
    Const(u64),
    Var(Var),
    Neg(u32),
    Binary(BinOp, u32, u32),
    Call(Func, u32),
}

/// A batch of expressions flattened into a straight-line program.
///
/// Structurally identical subexpressions are evaluated once. Each output is
/// bit-identical to [`Expr::eval`] on the same input because the same scalar
/// operations run in the same order.
#[derive(Clone, Debug)]
pub struct Tape {
    ops: Vec<Op>,
    // Source node for every slot, kept for error messages.
    sources: Vec<Expr>,
    outputs: Vec<u32>,
}

struct Builder {
    ops: Vec<Op>,
    sources: Vec<Expr>,
    by_op: HashMap<Op, u32>,
    by_ptr: HashMap<*const Node, u32>,
}

impl Builder {
    fn slot(&mut self, e: &Expr) -> u32 {
        if let Some(&s) = self.by_ptr.get(&e.ptr()) {
            return s;
        }
        let op = match e.node() {
            Node::Num(v) => Op::Const(v.to_bits()),
            Node::Var(v) => Op::Var(*v),
            Node::Neg(a) => Op::Neg(self.slot(a)),
            Node::Binary(op, a, b) => {
                let sa = self.slot(a);
                let sb = self.slot(b);
                Op::Binary(*op, sa, sb)
            }
            Node::Call(f, a) => Op::Call(*f, self.slot(a)),
        };
        let s = match self.by_op.get(&op) {
            Some(&s) => s,
            None => {
                let s = self.ops.len() as u32;
                self.ops.push(op);
                self.sources.push(e.clone());
                self.by_op.insert(op, s);
                s
            }
        };
        self.by_ptr.insert(e.ptr(), s);
        s
    }
}

impl Tape {
    pub fn compile(exprs: &[Expr]) -> Tape {
        let mut b = Builder {
            ops: Vec::new(),
            sources: Vec::new(),
            by_op: HashMap::new(),
            by_ptr: HashMap::new(),
        };
        let outputs = exprs.iter().map(|e| b.slot(e)).collect();
        Tape {
            ops: b.ops,
            sources: b.sources,
            outputs,
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn num_outputs(&self) -> usize {
        self.outputs.len()
    }

    /// Evaluates every output at `(x, y)` into `out`, using `scratch` as
    /// working memory (resized as needed).
    pub fn eval_into(
        &self,
        x: f64,
        y: f64,
        scratch: &mut Vec<f64>,
        out: &mut [f64],
    ) -> Result<(), EvalError> {
        assert_eq!(out.len(), self.outputs.len(), "output buffer length");
        scratch.clear();
        scratch.reserve(self.ops.len());
        for (i, op) in self.ops.iter().enumerate() {
            let value = match *op {
                Op::Const(bits) => f64::from_bits(bits),
                Op::Var(Var::X) => x,
                Op::Var(Var::Y) => y,
                Op::Neg(a) => -scratch[a as usize],
                Op::Binary(op, a, b) => apply_binary(op, scratch[a as usize], scratch[b as usize])
                    .map_err(|reason| self.sources[i].domain_error(reason, x, y))?,
                Op::Call(f, a) => apply_func(f, scratch[a as usize])
                    .map_err(|reason| self.sources[i].domain_error(reason, x, y))?,
            };
            scratch.push(value);
        }
        for (o, &s) in out.iter_mut().zip(&self.outputs) {
            *o = scratch[s as usize];
        }
        Ok(())
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<Vec<f64>, EvalError> {
        let mut scratch = Vec::new();
        let mut out = vec![0.0; self.outputs.len()];
        self.eval_into(x, y, &mut scratch, &mut out)?;
        Ok(out)
    }
}
