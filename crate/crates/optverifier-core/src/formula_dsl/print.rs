use std::fmt::Write;

use super::ast::*;

/// Binding strength used to decide parenthesization.
const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_ATOM: u8 = 3;

/// Deterministic canonical rendering of an expression. `parse(print(e))`
/// reproduces `e` exactly; binder names are preserved (no alpha-renaming).
pub fn print_canonical(expr: &Expr) -> String {
    let mut out = String::new();
    write_expr(&mut out, expr, PREC_ADD);
    out
}

/// Canonical rendering of a full constraint, `==` for equality.
pub fn print_constraint(ast: &ConstraintAst) -> String {
    let mut out = String::new();
    write_expr(&mut out, &ast.lhs, PREC_ADD);
    write!(out, " {} ", ast.relop.as_str()).unwrap();
    write_expr(&mut out, &ast.rhs, PREC_ADD);
    for q in &ast.quantifiers {
        write!(out, " forall {} in {}", q.index, q.set).unwrap();
        if let Some(guard) = &q.guard {
            write_guard(&mut out, guard);
        }
    }
    out
}

fn write_expr(out: &mut String, expr: &Expr, min_prec: u8) {
    match expr {
        Expr::Number(n) => {
            if *n < 0.0 {
                // A bare negative literal only parses at expression head;
                // parenthesize so it reparses anywhere.
                write!(out, "(-{})", format_number(-*n)).unwrap();
            } else {
                out.push_str(&format_number(*n));
            }
        }
        Expr::Param { symbol, indices } | Expr::Var { symbol, indices } => {
            out.push_str(symbol);
            if !indices.is_empty() {
                out.push('[');
                for (i, idx) in indices.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    match idx {
                        Index::Bound(name) => out.push_str(name),
                        Index::Literal(k) => write!(out, "{k}").unwrap(),
                    }
                }
                out.push(']');
            }
        }
        Expr::Neg(inner) => {
            // Unary minus is only grammatical at expression head; keep the
            // printed form position-independent.
            out.push_str("(-");
            write_expr(out, inner, PREC_MUL);
            out.push(')');
        }
        Expr::Add(a, b) => {
            let parens = min_prec > PREC_ADD;
            if parens {
                out.push('(');
            }
            write_expr(out, a, PREC_ADD);
            out.push_str(" + ");
            write_expr(out, b, PREC_MUL);
            if parens {
                out.push(')');
            }
        }
        Expr::Sub(a, b) => {
            let parens = min_prec > PREC_ADD;
            if parens {
                out.push('(');
            }
            write_expr(out, a, PREC_ADD);
            out.push_str(" - ");
            write_expr(out, b, PREC_MUL);
            if parens {
                out.push(')');
            }
        }
        Expr::Mul(a, b) => {
            let parens = min_prec > PREC_MUL;
            if parens {
                out.push('(');
            }
            write_expr(out, a, PREC_MUL);
            out.push_str(" * ");
            write_expr(out, b, PREC_ATOM);
            if parens {
                out.push(')');
            }
        }
        Expr::Sum {
            binders,
            guard,
            body,
        } => {
            out.push_str("sum(");
            for (i, b) in binders.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write!(out, "{} in {}", b.index, b.set).unwrap();
            }
            if let Some(g) = guard {
                write_guard(out, g);
            }
            out.push_str(", ");
            write_expr(out, body, PREC_ADD);
            out.push(')');
        }
    }
}

fn write_guard(out: &mut String, guard: &Guard) {
    out.push_str(" if ");
    for (i, cond) in guard.conds.iter().enumerate() {
        if i > 0 {
            out.push_str(" and ");
        }
        write_guard_operand(out, &cond.lhs);
        write!(out, " {} ", cond.op.as_str()).unwrap();
        write_guard_operand(out, &cond.rhs);
    }
}

fn write_guard_operand(out: &mut String, op: &GuardOperand) {
    match op {
        GuardOperand::Index(name) => out.push_str(name),
        GuardOperand::Literal(k) => write!(out, "{k}").unwrap(),
    }
}

/// Minimal decimal rendering of a non-negative literal: integers print
/// without a fraction, everything else uses the shortest round-trip form.
fn format_number(n: f64) -> String {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}
