//! Reference MILP solver for pure-integer models, consumed through the
//! external-solver subprocess contract: `optverifier-refsolve <model.lp>
//! <solution-file>`. It parses the LP text independently of the emitting
//! library and runs depth-first branch-and-bound with interval pruning, so
//! agreement with the built-in enumeration oracle is a meaningful check.
//!
//! The solution file is the generic JSON shape:
//! `{"status": "...", "objective": N, "values": {"var": v}}`.

use std::collections::HashMap;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Relop {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
struct Row {
    coeffs: Vec<(usize, f64)>,
    relop: Relop,
    rhs: f64,
}

#[derive(Debug, Default)]
struct LpModel {
    maximize: bool,
    objective: Vec<(usize, f64)>,
    objective_constant: f64,
    rows: Vec<Row>,
    names: Vec<String>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    integer: Vec<bool>,
}

impl LpModel {
    fn var(&mut self, name: &str) -> usize {
        if let Some(index) = self.names.iter().position(|n| n == name) {
            return index;
        }
        self.names.push(name.to_string());
        self.lower.push(0.0);
        self.upper.push(f64::INFINITY);
        self.integer.push(false);
        self.names.len() - 1
    }
}

fn fail(message: &str) -> ! {
    eprintln!("optverifier-refsolve: {message}");
    std::process::exit(2);
}

/// Parse `[sign] [coeff] name ... [relop rhs]` token streams.
fn parse_linear(model: &mut LpModel, tokens: &[&str]) -> (Vec<(usize, f64)>, f64) {
    let mut terms: HashMap<usize, f64> = HashMap::new();
    let mut constant = 0.0;
    let mut sign = 1.0;
    let mut pending: Option<f64> = None;
    for &token in tokens {
        match token {
            "+" => {
                if let Some(value) = pending.take() {
                    constant += sign * value;
                }
                sign = 1.0;
            }
            "-" => {
                if let Some(value) = pending.take() {
                    constant += sign * value;
                }
                sign = -1.0;
            }
            _ => {
                if let Ok(value) = token.parse::<f64>() {
                    if let Some(previous) = pending.take() {
                        constant += sign * previous;
                        sign = 1.0;
                    }
                    pending = Some(value);
                } else {
                    let coeff = sign * pending.take().unwrap_or(1.0);
                    let index = model.var(token);
                    *terms.entry(index).or_insert(0.0) += coeff;
                    sign = 1.0;
                }
            }
        }
    }
    if let Some(value) = pending {
        constant += sign * value;
    }
    let mut coeffs: Vec<(usize, f64)> = terms.into_iter().filter(|&(_, c)| c != 0.0).collect();
    coeffs.sort_by_key(|&(index, _)| index);
    (coeffs, constant)
}

fn parse_bound_value(token: &str) -> f64 {
    match token {
        "inf" | "+inf" | "infinity" => f64::INFINITY,
        "-inf" | "-infinity" => f64::NEG_INFINITY,
        other => other
            .parse()
            .unwrap_or_else(|_| fail(&format!("bad bound value '{other}'"))),
    }
}

fn parse_lp(text: &str) -> LpModel {
    #[derive(PartialEq)]
    enum Section {
        Objective,
        Rows,
        Bounds,
        Generals,
        Binaries,
        Done,
    }
    let mut model = LpModel::default();
    let mut section = Section::Done;
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('\\') {
            continue;
        }
        match line {
            "Maximize" => {
                model.maximize = true;
                section = Section::Objective;
                continue;
            }
            "Minimize" => {
                model.maximize = false;
                section = Section::Objective;
                continue;
            }
            "Subject To" => {
                section = Section::Rows;
                continue;
            }
            "Bounds" => {
                section = Section::Bounds;
                continue;
            }
            "Generals" => {
                section = Section::Generals;
                continue;
            }
            "Binaries" => {
                section = Section::Binaries;
                continue;
            }
            "End" => {
                section = Section::Done;
                continue;
            }
            _ => {}
        }
        match section {
            Section::Objective => {
                let body = line.split_once(':').map(|(_, b)| b).unwrap_or(line);
                let tokens: Vec<&str> = body.split_whitespace().collect();
                let (coeffs, constant) = parse_linear(&mut model, &tokens);
                model.objective = coeffs;
                model.objective_constant = constant;
            }
            Section::Rows => {
                let body = line.split_once(':').map(|(_, b)| b).unwrap_or(line);
                let tokens: Vec<&str> = body.split_whitespace().collect();
                let relop_at = tokens
                    .iter()
                    .position(|t| matches!(*t, "<=" | ">=" | "=" | "=="))
                    .unwrap_or_else(|| fail(&format!("row without relation: {line}")));
                let relop = match tokens[relop_at] {
                    "<=" => Relop::Le,
                    ">=" => Relop::Ge,
                    _ => Relop::Eq,
                };
                let (coeffs, constant) = parse_linear(&mut model, &tokens[..relop_at]);
                let (rhs_terms, rhs_constant) = parse_linear(&mut model, &tokens[relop_at + 1..]);
                if !rhs_terms.is_empty() {
                    fail(&format!(
                        "row with variables on the right-hand side: {line}"
                    ));
                }
                model.rows.push(Row {
                    coeffs,
                    relop,
                    rhs: rhs_constant - constant,
                });
            }
            Section::Bounds => {
                let tokens: Vec<&str> = line.split_whitespace().collect();
                match tokens.as_slice() {
                    [name, "free"] => {
                        let index = model.var(name);
                        model.lower[index] = f64::NEG_INFINITY;
                        model.upper[index] = f64::INFINITY;
                    }
                    [name, ">=", value] => {
                        let index = model.var(name);
                        model.lower[index] = parse_bound_value(value);
                    }
                    [name, "<=", value] => {
                        let index = model.var(name);
                        model.upper[index] = parse_bound_value(value);
                    }
                    [name, "=", value] => {
                        let index = model.var(name);
                        model.lower[index] = parse_bound_value(value);
                        model.upper[index] = model.lower[index];
                    }
                    [low, "<=", name, "<=", high] => {
                        let index = model.var(name);
                        model.lower[index] = parse_bound_value(low);
                        model.upper[index] = parse_bound_value(high);
                    }
                    _ => fail(&format!("unsupported bounds line: {line}")),
                }
            }
            Section::Generals => {
                let index = model.var(line);
                model.integer[index] = true;
            }
            Section::Binaries => {
                let index = model.var(line);
                model.integer[index] = true;
                model.lower[index] = 0.0;
                model.upper[index] = 1.0;
            }
            Section::Done => {}
        }
    }
    model
}

/// Derive missing finite bounds from single rows, to a fixpoint. Errs with
/// the partially tightened float bounds when a variable stays unbounded.
#[allow(clippy::type_complexity)]
fn infer_bounds(model: &LpModel) -> Result<(Vec<i64>, Vec<i64>), (Vec<f64>, Vec<f64>)> {
    let n = model.names.len();
    let mut lower: Vec<f64> = model.lower.clone();
    let mut upper: Vec<f64> = model.upper.clone();
    for _ in 0..32 {
        let mut changed = false;
        for row in &model.rows {
            let directions: &[f64] = match row.relop {
                Relop::Le => &[1.0],
                Relop::Ge => &[-1.0],
                Relop::Eq => &[1.0, -1.0],
            };
            for &row_sign in directions {
                // Normalized: sum(sign*c*x) <= sign*rhs
                let rhs = row.rhs * row_sign;
                for (k, &(var, coeff)) in row.coeffs.iter().enumerate() {
                    let coeff = coeff * row_sign;
                    if coeff == 0.0 {
                        continue;
                    }
                    let mut rest = 0.0;
                    let mut bounded = true;
                    for (j, &(other, other_coeff)) in row.coeffs.iter().enumerate() {
                        if j == k {
                            continue;
                        }
                        let other_coeff = other_coeff * row_sign;
                        let contribution = if other_coeff > 0.0 {
                            other_coeff * lower[other]
                        } else {
                            other_coeff * upper[other]
                        };
                        if !contribution.is_finite() {
                            bounded = false;
                            break;
                        }
                        rest += contribution;
                    }
                    if !bounded {
                        continue;
                    }
                    let slack = rhs - rest;
                    if coeff > 0.0 {
                        let implied = (slack / coeff).floor();
                        if implied < upper[var] {
                            upper[var] = implied;
                            changed = true;
                        }
                    } else {
                        let implied = (slack / coeff).ceil();
                        if implied > lower[var] {
                            lower[var] = implied;
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut lows = Vec::with_capacity(n);
    let mut highs = Vec::with_capacity(n);
    for index in 0..n {
        if !lower[index].is_finite() || !upper[index].is_finite() {
            return Err((lower, upper));
        }
        lows.push(lower[index].ceil() as i64);
        highs.push(upper[index].floor() as i64);
    }
    Ok((lows, highs))
}

struct Search<'m> {
    model: &'m LpModel,
    lows: Vec<i64>,
    highs: Vec<i64>,
    /// Per row, suffix-minimal and suffix-maximal activity of vars >= i.
    suffix_min: Vec<Vec<f64>>,
    suffix_max: Vec<Vec<f64>>,
    /// Per position, best possible objective contribution of vars >= i.
    suffix_best: Vec<f64>,
    columns: Vec<Vec<(usize, f64)>>,
    objective_coeff: Vec<f64>,
    best: Option<(Vec<i64>, f64)>,
}

impl<'m> Search<'m> {
    fn new(model: &'m LpModel, lows: Vec<i64>, highs: Vec<i64>) -> Self {
        let n = model.names.len();
        let rows = model.rows.len();
        let mut objective_coeff = vec![0.0; n];
        for &(var, coeff) in &model.objective {
            objective_coeff[var] = coeff;
        }
        let mut suffix_min = vec![vec![0.0; n + 1]; rows];
        let mut suffix_max = vec![vec![0.0; n + 1]; rows];
        let mut per_var_min = vec![vec![0.0; n]; rows];
        let mut per_var_max = vec![vec![0.0; n]; rows];
        for (r, row) in model.rows.iter().enumerate() {
            for &(var, coeff) in &row.coeffs {
                let at_low = coeff * lows[var] as f64;
                let at_high = coeff * highs[var] as f64;
                per_var_min[r][var] = at_low.min(at_high);
                per_var_max[r][var] = at_low.max(at_high);
            }
            for i in (0..n).rev() {
                suffix_min[r][i] = suffix_min[r][i + 1] + per_var_min[r][i];
                suffix_max[r][i] = suffix_max[r][i + 1] + per_var_max[r][i];
            }
        }
        let mut suffix_best = vec![0.0; n + 1];
        for i in (0..n).rev() {
            let coeff = objective_coeff[i];
            let at_low = coeff * lows[i] as f64;
            let at_high = coeff * highs[i] as f64;
            let best = if model.maximize {
                at_low.max(at_high)
            } else {
                at_low.min(at_high)
            };
            suffix_best[i] = suffix_best[i + 1] + best;
        }
        let mut columns = vec![Vec::new(); n];
        for (r, row) in model.rows.iter().enumerate() {
            for &(var, coeff) in &row.coeffs {
                columns[var].push((r, coeff));
            }
        }
        Search {
            model,
            lows,
            highs,
            suffix_min,
            suffix_max,
            suffix_best,
            columns,
            objective_coeff,
            best: None,
        }
    }

    fn prune_rows(&self, depth: usize, activity: &[f64]) -> bool {
        for (r, row) in self.model.rows.iter().enumerate() {
            let lo = activity[r] + self.suffix_min[r][depth];
            let hi = activity[r] + self.suffix_max[r][depth];
            let violated = match row.relop {
                Relop::Le => lo > row.rhs + 1e-9,
                Relop::Ge => hi < row.rhs - 1e-9,
                Relop::Eq => lo > row.rhs + 1e-9 || hi < row.rhs - 1e-9,
            };
            if violated {
                return true;
            }
        }
        false
    }

    fn prune_objective(&self, depth: usize, partial: f64) -> bool {
        let Some((_, incumbent)) = &self.best else {
            return false;
        };
        let optimistic = partial + self.suffix_best[depth];
        if self.model.maximize {
            optimistic <= *incumbent + 1e-12
        } else {
            optimistic >= *incumbent - 1e-12
        }
    }

    fn dfs(&mut self, depth: usize, values: &mut Vec<i64>, activity: &mut Vec<f64>, partial: f64) {
        if self.prune_rows(depth, activity) || self.prune_objective(depth, partial) {
            return;
        }
        if depth == self.model.names.len() {
            // All rows fully accounted: suffix bounds are zero, so any
            // surviving leaf is feasible.
            let better = match &self.best {
                None => true,
                Some((_, incumbent)) => {
                    if self.model.maximize {
                        partial > *incumbent
                    } else {
                        partial < *incumbent
                    }
                }
            };
            if better {
                self.best = Some((values.clone(), partial));
            }
            return;
        }
        for value in self.lows[depth]..=self.highs[depth] {
            values.push(value);
            for &(row, coeff) in &self.columns[depth] {
                activity[row] += coeff * value as f64;
            }
            let contribution = self.objective_coeff[depth] * value as f64;
            self.dfs(depth + 1, values, activity, partial + contribution);
            for &(row, coeff) in &self.columns[depth] {
                activity[row] -= coeff * value as f64;
            }
            values.pop();
        }
    }
}

fn escape_json(s: &str) -> String {
    s.chars()
        .flat_map(|c| match c {
            '"' => "\\\"".chars().collect::<Vec<_>>(),
            '\\' => "\\\\".chars().collect(),
            c if (c as u32) < 0x20 => format!("\\u{:04x}", c as u32).chars().collect(),
            c => vec![c],
        })
        .collect()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.len() != 3 {
        fail("usage: optverifier-refsolve <model.lp> <solution.json>");
    }
    let text = std::fs::read_to_string(&args[1])
        .unwrap_or_else(|e| fail(&format!("cannot read {}: {e}", args[1])));
    let model = parse_lp(&text);

    if model.integer.iter().any(|&is_int| !is_int) {
        let continuous: Vec<&String> = model
            .names
            .iter()
            .zip(&model.integer)
            .filter(|(_, &is_int)| !is_int)
            .map(|(name, _)| name)
            .collect();
        write_solution(&args[2], "error", None, &[], &model);
        fail(&format!(
            "only pure-integer models are supported; continuous: {continuous:?}"
        ));
    }

    let (lows, highs) = match infer_bounds(&model) {
        Ok(bounds) => bounds,
        Err((lower, upper)) => {
            // A variable stays unbounded after propagation. Report unbounded
            // only when growing it strictly improves the objective.
            let mut objective_coeff = vec![0.0; model.names.len()];
            for &(var, coeff) in &model.objective {
                objective_coeff[var] = coeff;
            }
            let improving = (0..model.names.len()).any(|v| {
                let up = upper[v].is_infinite()
                    && ((model.maximize && objective_coeff[v] > 0.0)
                        || (!model.maximize && objective_coeff[v] < 0.0));
                let down = lower[v].is_infinite()
                    && ((model.maximize && objective_coeff[v] < 0.0)
                        || (!model.maximize && objective_coeff[v] > 0.0));
                up || down
            });
            if improving {
                write_solution(&args[2], "unbounded", None, &[], &model);
                return;
            }
            write_solution(&args[2], "error", None, &[], &model);
            fail("could not derive finite bounds for every variable");
        }
    };
    if lows.iter().zip(&highs).any(|(lo, hi)| lo > hi) {
        write_solution(&args[2], "infeasible", None, &[], &model);
        return;
    }

    let mut search = Search::new(&model, lows, highs);
    let mut values = Vec::new();
    let mut activity = vec![0.0; model.rows.len()];
    search.dfs(0, &mut values, &mut activity, 0.0);

    match search.best.take() {
        Some((values, objective)) => {
            write_solution(
                &args[2],
                "optimal",
                Some(objective + model.objective_constant),
                &values,
                &model,
            );
        }
        None => write_solution(&args[2], "infeasible", None, &[], &model),
    }
}

fn write_solution(
    path: &str,
    status: &str,
    objective: Option<f64>,
    values: &[i64],
    model: &LpModel,
) {
    let mut out = String::from("{");
    write!(out, "\"status\": \"{status}\"").unwrap();
    if let Some(objective) = objective {
        write!(out, ", \"objective\": {objective}").unwrap();
    }
    if !values.is_empty() {
        out.push_str(", \"values\": {");
        for (index, value) in values.iter().enumerate() {
            if index > 0 {
                out.push_str(", ");
            }
            write!(out, "\"{}\": {}", escape_json(&model.names[index]), value).unwrap();
        }
        out.push('}');
    }
    out.push('}');
    if let Err(e) = std::fs::write(path, out) {
        fail(&format!("cannot write {path}: {e}"));
    }
}
