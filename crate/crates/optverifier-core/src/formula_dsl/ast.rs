use serde::{Deserialize, Serialize};

/// Comparison operator of a constraint. Strict inequalities are not
/// representable; the parser rejects them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relop {
    Le,
    Ge,
    Eq,
}

impl Relop {
    pub fn as_str(self) -> &'static str {
        match self {
            Relop::Le => "<=",
            Relop::Ge => ">=",
            Relop::Eq => "==",
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Relop::Le => Relop::Ge,
            Relop::Ge => Relop::Le,
            Relop::Eq => Relop::Eq,
        }
    }
}

/// An index position inside a reference: either a bound index name or an
/// integer literal (e.g. the source node in `FlowAmount[0, j]`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Index {
    Bound(String),
    Literal(i64),
}

/// A `name in Set` binder of a `sum` aggregate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binder {
    pub index: String,
    pub set: String,
}

/// Operand of a guard comparison.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GuardOperand {
    Index(String),
    Literal(i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

impl CmpOp {
    pub fn as_str(self) -> &'static str {
        match self {
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
        }
    }

    pub fn eval(self, lhs: i64, rhs: i64) -> bool {
        match self {
            CmpOp::Ne => lhs != rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Eq => lhs == rhs,
        }
    }
}

/// A single comparison inside a guard.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuardCond {
    pub lhs: GuardOperand,
    pub op: CmpOp,
    pub rhs: GuardOperand,
}

/// Guard attached to a quantifier or sum: a conjunction of comparisons over
/// bound indices and integer literals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Guard {
    pub conds: Vec<GuardCond>,
}

/// A `forall` quantifier on a constraint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quantifier {
    pub index: String,
    pub set: String,
    pub guard: Option<Guard>,
}

/// Linear expression tree. `Mul` is scalar multiplication: at most one side
/// of any multiplicative chain carries a variable reference.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number(f64),
    Param {
        symbol: String,
        indices: Vec<Index>,
    },
    Var {
        symbol: String,
        indices: Vec<Index>,
    },
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Sum {
        binders: Vec<Binder>,
        guard: Option<Guard>,
        body: Box<Expr>,
    },
}

impl Expr {
    /// Number of variable references along any multiplicative chain rooted
    /// here: 0 for constants/parameters, 1 for a linear term.
    pub fn var_degree(&self) -> u32 {
        match self {
            Expr::Number(_) | Expr::Param { .. } => 0,
            Expr::Var { .. } => 1,
            Expr::Neg(inner) => inner.var_degree(),
            Expr::Add(a, b) | Expr::Sub(a, b) => a.var_degree().max(b.var_degree()),
            Expr::Mul(a, b) => a.var_degree() + b.var_degree(),
            Expr::Sum { body, .. } => body.var_degree(),
        }
    }

    /// Collect every referenced parameter/variable/index-set symbol.
    pub fn collect_symbols(&self, out: &mut std::collections::BTreeSet<String>) {
        match self {
            Expr::Number(_) => {}
            Expr::Param { symbol, .. } | Expr::Var { symbol, .. } => {
                out.insert(symbol.clone());
            }
            Expr::Neg(inner) => inner.collect_symbols(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
                a.collect_symbols(out);
                b.collect_symbols(out);
            }
            Expr::Sum { binders, body, .. } => {
                for b in binders {
                    out.insert(b.set.clone());
                }
                body.collect_symbols(out);
            }
        }
    }

    /// True if any variable reference targets `symbol`.
    pub fn references_var(&self, symbol: &str) -> bool {
        match self {
            Expr::Number(_) | Expr::Param { .. } => false,
            Expr::Var { symbol: s, .. } => s == symbol,
            Expr::Neg(inner) => inner.references_var(symbol),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
                a.references_var(symbol) || b.references_var(symbol)
            }
            Expr::Sum { body, .. } => body.references_var(symbol),
        }
    }
}

/// A fully parsed constraint: relational core plus quantifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintAst {
    pub lhs: Expr,
    pub relop: Relop,
    pub rhs: Expr,
    pub quantifiers: Vec<Quantifier>,
}

impl ConstraintAst {
    pub fn collect_symbols(&self, out: &mut std::collections::BTreeSet<String>) {
        self.lhs.collect_symbols(out);
        self.rhs.collect_symbols(out);
        for q in &self.quantifiers {
            out.insert(q.set.clone());
        }
    }
}
