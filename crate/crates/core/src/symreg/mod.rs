//! Genetic-programming symbolic regression over expression trees.

mod expr;
mod gp;
mod io;
mod parse;

use serde::{Deserialize, Serialize};

pub use expr::{BinaryOp, Expr, UnaryOp};
pub use gp::{
    crossover, fit, fit_observed, mutate, random_tree, tournament_round, tournament_select,
    FitResult, HallOfFame, HofEntry, Individual, LossMode, SymData, SymRegConfig,
};
pub use io::{hall_of_fame_csv, read_hall_of_fame_csv, HOF_HEADER};

use crate::error::{Error, Result};

/// Per-node complexity scores and the parsimony settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplexityTable {
    pub constant: u32,
    pub variable: u32,
    pub add: u32,
    pub sub: u32,
    pub mul: u32,
    pub div: u32,
    pub square: u32,
    pub exp: u32,
    pub log: u32,
    pub sin: u32,
    pub sqrt: u32,
    pub abs: u32,
    /// Weight of the complexity in the fitness.
    pub parsimony: f64,
    /// Trees above this complexity never enter a population.
    pub max_complexity: u32,
}

impl Default for ComplexityTable {
    fn default() -> Self {
        Self {
            constant: 1,
            variable: 1,
            add: 1,
            sub: 1,
            mul: 1,
            div: 1,
            square: 1,
            exp: 2,
            log: 2,
            sin: 3,
            sqrt: 1,
            abs: 1,
            parsimony: 0.001,
            max_complexity: 20,
        }
    }
}

impl ComplexityTable {
    pub fn validate(&self) -> Result<()> {
        let scores = [
            self.constant,
            self.variable,
            self.add,
            self.sub,
            self.mul,
            self.div,
            self.square,
            self.exp,
            self.log,
            self.sin,
            self.sqrt,
            self.abs,
        ];
        if scores.contains(&0) {
            return Err(Error::Config("complexity scores must be at least 1".into()));
        }
        if !(self.parsimony >= 0.0 && self.parsimony.is_finite()) {
            return Err(Error::Config(format!(
                "parsimony {} must be finite and >= 0",
                self.parsimony
            )));
        }
        Ok(())
    }

    pub fn binary(&self, op: BinaryOp) -> u32 {
        match op {
            BinaryOp::Add => self.add,
            BinaryOp::Sub => self.sub,
            BinaryOp::Mul => self.mul,
            BinaryOp::Div => self.div,
        }
    }

    pub fn unary(&self, op: UnaryOp) -> u32 {
        match op {
            UnaryOp::Square => self.square,
            UnaryOp::Exp => self.exp,
            UnaryOp::Log => self.log,
            UnaryOp::Sin => self.sin,
            UnaryOp::Sqrt => self.sqrt,
            UnaryOp::Abs => self.abs,
        }
    }
}

/// Sum of the node scores of `e`.
pub fn complexity(e: &Expr, table: &ComplexityTable) -> u32 {
    match e {
        Expr::Const(_) => table.constant,
        Expr::Var(_) => table.variable,
        Expr::Unary(op, a) => table.unary(*op) + complexity(a, table),
        Expr::Binary(op, a, b) => table.binary(*op) + complexity(a, table) + complexity(b, table),
    }
}

/// Node count of `e`.
pub fn expression_size(e: &Expr) -> usize {
    e.size()
}
