use std::collections::BTreeSet;
use std::fmt::Write;

use super::GroundedModelOf;
use crate::formula_dsl::Relop;
use crate::model_ir::{Sense, VarType};
use crate::scalar::Scalar;

#[derive(Debug, Clone, thiserror::Error)]
pub enum LpError {
    #[error("name collision after sanitization: '{0}'")]
    NameCollision(String),
}

/// Emit a CPLEX-LP-style document. Sections appear in the order
/// Maximize|Minimize, Subject To, Bounds, Generals, Binaries, End; the first
/// three section headers are always present. Output is deterministic in
/// declaration order; coefficients print with 12 significant digits.
pub fn emit_lp<S: Scalar>(grounded: &GroundedModelOf<S>) -> Result<String, LpError> {
    let names: Vec<String> = grounded
        .variables
        .iter()
        .map(|v| sanitize(&v.name))
        .collect();
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for name in &names {
        if !seen.insert(name) {
            return Err(LpError::NameCollision(name.clone()));
        }
    }
    let mut row_names: BTreeSet<String> = BTreeSet::new();

    let mut out = String::new();
    out.push_str(match grounded.objective.sense {
        Sense::Maximize => "Maximize\n",
        Sense::Minimize => "Minimize\n",
    });
    out.push_str(" obj:");
    write_linear(
        &mut out,
        &grounded.objective.coeffs,
        grounded.objective.constant,
        &names,
    );
    out.push('\n');

    out.push_str("Subject To\n");
    for row in &grounded.rows {
        let row_name = sanitize(&row.name);
        if !row_names.insert(row_name.clone()) {
            return Err(LpError::NameCollision(row_name));
        }
        write!(out, " {row_name}:").unwrap();
        if row.coeffs.is_empty() {
            // Tautology-check row kept by the caller: encode as 0 * first var.
            write!(
                out,
                " 0 {}",
                names.first().map(String::as_str).unwrap_or("x")
            )
            .unwrap();
        } else {
            write_linear(&mut out, &row.coeffs, S::zero(), &names);
        }
        let relop = match row.relop {
            Relop::Le => "<=",
            Relop::Ge => ">=",
            Relop::Eq => "=",
        };
        writeln!(out, " {relop} {}", format_coeff(row.rhs.to_f64_lossy())).unwrap();
    }

    out.push_str("Bounds\n");
    for (var, name) in grounded.variables.iter().zip(&names) {
        if var.var_type == VarType::Binary {
            continue;
        }
        let lower = var.lower.to_f64_lossy();
        let upper = var.upper.to_f64_lossy();
        if lower == 0.0 && upper.is_infinite() {
            // LP default [0, +inf): no bounds line.
        } else if lower.is_infinite() && upper.is_infinite() {
            writeln!(out, " {name} free").unwrap();
        } else if upper.is_infinite() {
            writeln!(out, " {name} >= {}", format_coeff(lower)).unwrap();
        } else if lower.is_infinite() {
            writeln!(out, " -inf <= {name} <= {}", format_coeff(upper)).unwrap();
        } else if lower == upper {
            writeln!(out, " {name} = {}", format_coeff(lower)).unwrap();
        } else {
            writeln!(
                out,
                " {} <= {name} <= {}",
                format_coeff(lower),
                format_coeff(upper)
            )
            .unwrap();
        }
    }

    let generals: Vec<&String> = grounded
        .variables
        .iter()
        .zip(&names)
        .filter(|(v, _)| v.var_type == VarType::Integer)
        .map(|(_, n)| n)
        .collect();
    if !generals.is_empty() {
        out.push_str("Generals\n");
        for name in generals {
            writeln!(out, " {name}").unwrap();
        }
    }
    let binaries: Vec<&String> = grounded
        .variables
        .iter()
        .zip(&names)
        .filter(|(v, _)| v.var_type == VarType::Binary)
        .map(|(_, n)| n)
        .collect();
    if !binaries.is_empty() {
        out.push_str("Binaries\n");
        for name in binaries {
            writeln!(out, " {name}").unwrap();
        }
    }
    out.push_str("End\n");
    Ok(out)
}

fn write_linear<S: Scalar>(out: &mut String, coeffs: &[(usize, S)], constant: S, names: &[String]) {
    let mut first = true;
    for &(var, coeff) in coeffs {
        let c = coeff.to_f64_lossy();
        if c == 0.0 {
            continue;
        }
        let magnitude = c.abs();
        let sign_negative = c < 0.0;
        if first {
            if sign_negative {
                out.push_str(" -");
            } else {
                out.push(' ');
            }
            first = false;
        } else if sign_negative {
            out.push_str(" -");
        } else {
            out.push_str(" +");
        }
        if magnitude != 1.0 {
            if !first && !out.ends_with(' ') {
                out.push(' ');
            }
            write!(out, "{} ", format_coeff(magnitude)).unwrap();
        } else if !out.ends_with(' ') {
            out.push(' ');
        }
        out.push_str(&names[var]);
    }
    let k = constant.to_f64_lossy();
    if k != 0.0 {
        if first {
            write!(out, " {}", format_coeff(k)).unwrap();
        } else if k < 0.0 {
            write!(out, " - {}", format_coeff(-k)).unwrap();
        } else {
            write!(out, " + {}", format_coeff(k)).unwrap();
        }
    } else if first {
        out.push_str(" 0");
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Round to 12 significant digits and print the shortest decimal form.
fn format_coeff(value: f64) -> String {
    if value == 0.0 {
        return "0".into();
    }
    if !value.is_finite() {
        return if value > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let exponent = value.abs().log10().floor() as i32;
    let scale = 10f64.powi(11 - exponent);
    let rounded = (value * scale).round() / scale;
    if rounded.fract() == 0.0 && rounded.abs() < 1e15 {
        format!("{}", rounded as i64)
    } else {
        format!("{rounded}")
    }
}
