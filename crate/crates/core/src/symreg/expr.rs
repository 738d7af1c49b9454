use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnaryOp {
    Square,
    Exp,
    Log,
    Sin,
    Sqrt,
    Abs,
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 4] = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div];

    pub fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
        }
    }

    pub fn apply<T: Scalar>(self, a: T, b: T) -> T {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        }
    }
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 6] = [
        UnaryOp::Square,
        UnaryOp::Exp,
        UnaryOp::Log,
        UnaryOp::Sin,
        UnaryOp::Sqrt,
        UnaryOp::Abs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Square => "square",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sin => "sin",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Abs => "abs",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|u| u.name() == s)
    }

    /// Plain IEEE semantics: no protection of log, sqrt or division.
    pub fn apply<T: Scalar>(self, a: T) -> T {
        match self {
            UnaryOp::Square => a * a,
            UnaryOp::Exp => a.exp(),
            UnaryOp::Log => a.ln(),
            UnaryOp::Sin => a.sin(),
            UnaryOp::Sqrt => a.sqrt(),
            UnaryOp::Abs => a.abs(),
        }
    }

    /// Derivative in the argument; `abs` uses `sign(0) = 0`.
    pub fn derivative<T: Scalar>(self, a: T) -> T {
        let two = T::lit(2.0);
        match self {
            UnaryOp::Square => two * a,
            UnaryOp::Exp => a.exp(),
            UnaryOp::Log => T::one() / a,
            UnaryOp::Sin => a.cos(),
            UnaryOp::Sqrt => T::one() / (two * a.sqrt()),
            UnaryOp::Abs => a.sign0(),
        }
    }
}

/// Expression tree over input variables `z{i}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn unary(op: UnaryOp, a: Expr) -> Self {
        Expr::Unary(op, Box::new(a))
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Self {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    /// Node count.
    pub fn size(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Unary(_, a) => 1 + a.size(),
            Expr::Binary(_, a, b) => 1 + a.size() + b.size(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Unary(_, a) => 1 + a.depth(),
            Expr::Binary(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    /// Largest variable index plus one (0 for closed expressions).
    pub fn arity(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(i) => i + 1,
            Expr::Unary(_, a) => a.arity(),
            Expr::Binary(_, a, b) => a.arity().max(b.arity()),
        }
    }

    /// Sorted distinct variable indices.
    pub fn variables(&self) -> Vec<usize> {
        fn walk(e: &Expr, out: &mut Vec<usize>) {
            match e {
                Expr::Const(_) => {}
                Expr::Var(i) => out.push(*i),
                Expr::Unary(_, a) => walk(a, out),
                Expr::Binary(_, a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
            }
        }
        let mut v = Vec::new();
        walk(self, &mut v);
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Renames every `z{i}` to `z{map[i]}`, e.g. from a column subset back
    /// to full latent indices. Errors when `map` has no entry for a variable.
    pub fn remap_vars(&self, map: &[usize]) -> Result<Expr> {
        Ok(match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(i) => Expr::Var(
                *map.get(*i)
                    .ok_or_else(|| Error::invalid(format!("no mapping for z{i}")))?,
            ),
            Expr::Unary(op, a) => Expr::unary(*op, a.remap_vars(map)?),
            Expr::Binary(op, a, b) => Expr::binary(*op, a.remap_vars(map)?, b.remap_vars(map)?),
        })
    }

    /// Value at one input point. Missing variables evaluate to NaN.
    pub fn eval<T: Scalar>(&self, x: &[T]) -> T {
        match self {
            Expr::Const(c) => T::lit(*c),
            Expr::Var(i) => x.get(*i).copied().unwrap_or_else(T::nan),
            Expr::Unary(op, a) => op.apply(a.eval(x)),
            Expr::Binary(op, a, b) => op.apply(a.eval(x), b.eval(x)),
        }
    }

    pub fn eval_rows<T: Scalar>(&self, rows: &[Vec<T>]) -> Vec<T> {
        rows.iter().map(|r| self.eval(r)).collect()
    }

    /// Value and exact gradient in the inputs at `x`. Errors on the first
    /// non-finite intermediate value or derivative.
    pub fn grad<T: Scalar>(&self, x: &[T]) -> Result<(T, Vec<T>)> {
        if self.arity() > x.len() {
            return Err(Error::invalid(format!(
                "expression uses z{} but the input has {} entries",
                self.arity() - 1,
                x.len()
            )));
        }
        self.grad_rec(x)
    }

    fn grad_rec<T: Scalar>(&self, x: &[T]) -> Result<(T, Vec<T>)> {
        let n = x.len();
        let (v, g) = match self {
            Expr::Const(c) => (T::lit(*c), vec![T::zero(); n]),
            Expr::Var(i) => {
                let mut g = vec![T::zero(); n];
                g[*i] = T::one();
                (x[*i], g)
            }
            Expr::Unary(op, a) => {
                let (u, ga) = a.grad_rec(x)?;
                let d = op.derivative(u);
                (op.apply(u), ga.into_iter().map(|gi| d * gi).collect())
            }
            Expr::Binary(op, a, b) => {
                let (u, ga) = a.grad_rec(x)?;
                let (w, gb) = b.grad_rec(x)?;
                let g = ga
                    .into_iter()
                    .zip(gb)
                    .map(|(p, q)| match op {
                        BinaryOp::Add => p + q,
                        BinaryOp::Sub => p - q,
                        BinaryOp::Mul => p * w + u * q,
                        BinaryOp::Div => (p * w - u * q) / (w * w),
                    })
                    .collect();
                (op.apply(u, w), g)
            }
        };
        if !v.is_finite() || g.iter().any(|d| !d.is_finite()) {
            return Err(Error::NonFinite(format!("at node `{self}`")));
        }
        Ok((v, g))
    }

    /// Subtree at pre-order position `idx`.
    pub fn node(&self, idx: usize) -> Option<&Expr> {
        if idx == 0 {
            return Some(self);
        }
        match self {
            Expr::Const(_) | Expr::Var(_) => None,
            Expr::Unary(_, a) => a.node(idx - 1),
            Expr::Binary(_, a, b) => {
                let sa = a.size();
                if idx <= sa {
                    a.node(idx - 1)
                } else {
                    b.node(idx - 1 - sa)
                }
            }
        }
    }

    pub fn node_mut(&mut self, idx: usize) -> Option<&mut Expr> {
        if idx == 0 {
            return Some(self);
        }
        match self {
            Expr::Const(_) | Expr::Var(_) => None,
            Expr::Unary(_, a) => a.node_mut(idx - 1),
            Expr::Binary(_, a, b) => {
                let sa = a.size();
                if idx <= sa {
                    a.node_mut(idx - 1)
                } else {
                    b.node_mut(idx - 1 - sa)
                }
            }
        }
    }
}
