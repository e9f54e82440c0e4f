//! Grammar, parser and canonical printer for constraint/objective formulations.
//!
//! Formulations are linear expressions over declared parameters and decision
//! variables, with `sum(...)` aggregation and `forall` quantifiers. The
//! grammar is deliberately small; anything it rejects cannot be compiled.
//!
//! ```text
//! constraint := expr relop expr quant*
//! relop      := "<=" | ">=" | "==" | "="          (strict "<" / ">" rejected)
//! quant      := "forall" ident "in" ident guard?
//! guard      := "if" cond ("and" cond)*
//! cond       := (ident | integer) cmp (ident | integer)
//! cmp        := "!=" | "<" | "<=" | ">" | ">=" | "=="
//! expr       := ["-"] term (("+" | "-") term)*
//! term       := atom ("*" atom)*
//! atom       := number | ref | sum | "(" expr ")"
//! sum        := "sum" "(" binder ("," binder)* guard? "," expr ")"
//! binder     := ident "in" ident
//! ref        := ident ("[" index ("," index)* "]")?
//! index      := ident | integer
//! ```
//!
//! Index sets are parameter symbols whose value is a list (indices run over
//! positions) or a non-negative integer scalar (indices run over `0..n`).
//! A multiplicative chain may contain at most one variable reference; chains
//! with two or more are rejected as nonlinear.

mod ast;
mod parse;
mod print;

pub use ast::{
    Binder, CmpOp, ConstraintAst, Expr, Guard, GuardCond, GuardOperand, Index, Quantifier, Relop,
};
pub use parse::{parse_constraint, parse_expression, DslError, SymbolTable};
pub use print::{print_canonical, print_constraint};

/// The published grammar, embedded in the default formulation prompts.
pub const GRAMMAR: &str = r#"constraint := expr relop expr quant*
relop      := "<=" | ">=" | "==" | "="          (strict "<" / ">" are rejected)
quant      := "forall" ident "in" ident guard?
guard      := "if" cond ("and" cond)*
cond       := (ident | integer) cmp (ident | integer)   with cmp one of != < <= > >= ==
expr       := ["-"] term (("+" | "-") term)*
term       := atom ("*" atom)*
atom       := number | ref | sum | "(" expr ")"
sum        := "sum" "(" binder ("," binder)* guard? "," expr ")"
binder     := ident "in" ident
ref        := ident ("[" index ("," index)* "]")?
index      := ident | integer

Index sets are parameter symbols whose value is a list (indices run over positions,
starting at 0) or a non-negative integer scalar n (indices run over 0..n).
At most one variable reference may appear in any multiplicative chain."#;
