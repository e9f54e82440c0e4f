use std::collections::BTreeMap;

use super::{FlatVar, GroundedModelOf, GroundedObjective, Row};
use crate::formula_dsl::{
    self, ConstraintAst, DslError, Expr, Guard, GuardOperand, Index, Quantifier, Relop,
};
use crate::model_ir::{Dim, OptimizationModel, ParamValue};
use crate::scalar::Scalar;

/// Concrete values supplied for external parameters, keyed by symbol.
pub type Bindings = BTreeMap<String, ParamValue>;

#[derive(Debug, Clone, thiserror::Error)]
pub enum GroundError {
    #[error("unbound parameter '{0}': external value with no binding supplied")]
    UnboundParameter(String),
    #[error("index out of range for '{symbol}': {detail}")]
    IndexOutOfRange { symbol: String, detail: String },
    #[error("'{symbol}' cannot serve as an index set: {detail}")]
    InvalidIndexSet { symbol: String, detail: String },
    #[error("unresolved dimension '{dim}' in shape of '{symbol}'")]
    UnresolvedDimension { symbol: String, dim: String },
    #[error("constraint '{constraint}': {source}")]
    Formulation {
        constraint: String,
        #[source]
        source: DslError,
    },
    #[error("row '{row}' has non-finite right-hand side")]
    NonFiniteRhs { row: String },
    #[error("constant row '{row}' is violated: {detail}")]
    ConstantRowViolated { row: String, detail: String },
}

/// Parameter environment: declared concrete values merged with bindings.
struct Env<'m> {
    values: BTreeMap<&'m str, &'m ParamValue>,
}

impl<'m> Env<'m> {
    fn build(model: &'m OptimizationModel, bindings: &'m Bindings) -> Result<Self, GroundError> {
        let mut values: BTreeMap<&str, &ParamValue> = BTreeMap::new();
        for param in &model.parameters {
            if param.value.is_external() {
                match bindings.get(&param.symbol) {
                    Some(bound) if !bound.is_external() => {
                        values.insert(param.symbol.as_str(), bound);
                    }
                    _ => return Err(GroundError::UnboundParameter(param.symbol.clone())),
                }
            } else {
                // A binding may override a declared concrete value.
                let value = bindings.get(&param.symbol).unwrap_or(&param.value);
                values.insert(param.symbol.as_str(), value);
            }
        }
        Ok(Env { values })
    }

    fn lookup(&self, symbol: &str) -> Option<&ParamValue> {
        self.values.get(symbol).copied()
    }

    /// Length of an index set: array length, or the value of a non-negative
    /// integer scalar.
    fn set_len(&self, symbol: &str) -> Result<usize, GroundError> {
        match self.lookup(symbol) {
            Some(ParamValue::Array(items)) => Ok(items.len()),
            Some(ParamValue::Scalar(n)) => {
                if *n >= 0.0 && n.fract() == 0.0 {
                    Ok(*n as usize)
                } else {
                    Err(GroundError::InvalidIndexSet {
                        symbol: symbol.into(),
                        detail: format!("scalar value {n} is not a non-negative integer"),
                    })
                }
            }
            Some(ParamValue::External { .. }) | None => Err(GroundError::InvalidIndexSet {
                symbol: symbol.into(),
                detail: "no concrete value available".into(),
            }),
        }
    }

    /// Numeric lookup with positional indices into nested arrays.
    fn scalar_at(&self, symbol: &str, indices: &[usize]) -> Result<f64, GroundError> {
        let mut value = self
            .lookup(symbol)
            .ok_or_else(|| GroundError::UnboundParameter(symbol.into()))?;
        for (depth, &index) in indices.iter().enumerate() {
            match value {
                ParamValue::Array(items) => {
                    value = items
                        .get(index)
                        .ok_or_else(|| GroundError::IndexOutOfRange {
                            symbol: symbol.into(),
                            detail: format!(
                                "index {index} at depth {depth} exceeds length {}",
                                items.len()
                            ),
                        })?;
                }
                _ => {
                    return Err(GroundError::IndexOutOfRange {
                        symbol: symbol.into(),
                        detail: format!("indexed at depth {depth} but value is not an array"),
                    })
                }
            }
        }
        match value {
            ParamValue::Scalar(n) => Ok(*n),
            ParamValue::Array(_) => Err(GroundError::IndexOutOfRange {
                symbol: symbol.into(),
                detail: format!("needs {} more index(es) to reach a scalar", depth_of(value)),
            }),
            ParamValue::External { .. } => Err(GroundError::UnboundParameter(symbol.into())),
        }
    }
}

fn depth_of(value: &ParamValue) -> usize {
    match value {
        ParamValue::Array(items) => 1 + items.first().map(depth_of).unwrap_or(0),
        _ => 0,
    }
}

/// Layout of one declared variable inside the flat-variable vector.
struct VarLayout {
    symbol: String,
    base: usize,
    dims: Vec<usize>,
}

impl VarLayout {
    fn flat_index(&self, indices: &[usize]) -> Result<usize, GroundError> {
        if indices.len() != self.dims.len() {
            return Err(GroundError::IndexOutOfRange {
                symbol: self.symbol.clone(),
                detail: format!(
                    "expected {} index(es), got {}",
                    self.dims.len(),
                    indices.len()
                ),
            });
        }
        let mut offset = 0usize;
        for (&index, &dim) in indices.iter().zip(&self.dims) {
            if index >= dim {
                return Err(GroundError::IndexOutOfRange {
                    symbol: self.symbol.clone(),
                    detail: format!("index {index} exceeds dimension {dim}"),
                });
            }
            offset = offset * dim + index;
        }
        Ok(self.base + offset)
    }
}

/// Sparse affine form accumulated during expression evaluation.
struct LinExpr<S: Scalar> {
    terms: BTreeMap<usize, S>,
    constant: S,
}

impl<S: Scalar> LinExpr<S> {
    fn constant(value: S) -> Self {
        LinExpr {
            terms: BTreeMap::new(),
            constant: value,
        }
    }

    fn term(var: usize) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(var, S::one());
        LinExpr {
            terms,
            constant: S::zero(),
        }
    }

    fn add(mut self, other: LinExpr<S>) -> Self {
        for (var, coeff) in other.terms {
            let entry = self.terms.entry(var).or_insert_with(S::zero);
            *entry = *entry + coeff;
        }
        self.constant = self.constant + other.constant;
        self
    }

    fn negate(mut self) -> Self {
        for coeff in self.terms.values_mut() {
            *coeff = -*coeff;
        }
        self.constant = -self.constant;
        self
    }

    fn scale(mut self, factor: S) -> Self {
        for coeff in self.terms.values_mut() {
            *coeff = *coeff * factor;
        }
        self.constant = self.constant * factor;
        self
    }

    fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }
}

struct Grounder<'m, S: Scalar> {
    env: Env<'m>,
    layouts: BTreeMap<&'m str, VarLayout>,
    variables: Vec<FlatVar<S>>,
    warnings: Vec<String>,
}

/// Resolve declared shape dims against the environment.
fn resolve_dims(symbol: &str, shape: &[Dim], env: &Env) -> Result<Vec<usize>, GroundError> {
    shape
        .iter()
        .map(|dim| match dim {
            Dim::Fixed(n) => Ok(*n),
            Dim::Symbolic(name) => {
                env.set_len(name)
                    .map_err(|_| GroundError::UnresolvedDimension {
                        symbol: symbol.into(),
                        dim: name.clone(),
                    })
            }
        })
        .collect()
}

fn flat_name(symbol: &str, indices: &[usize]) -> String {
    if indices.is_empty() {
        symbol.to_string()
    } else {
        let mut name = symbol.to_string();
        for index in indices {
            name.push('_');
            name.push_str(&index.to_string());
        }
        name
    }
}

impl<'m, S: Scalar> Grounder<'m, S> {
    fn new(model: &'m OptimizationModel, bindings: &'m Bindings) -> Result<Self, GroundError> {
        let env = Env::build(model, bindings)?;
        let mut layouts = BTreeMap::new();
        let mut variables = Vec::new();
        for var in &model.variables {
            let dims = resolve_dims(&var.symbol, &var.shape, &env)?;
            let base = variables.len();
            let count: usize = dims.iter().product();
            let (lower, upper) = var.bounds();
            if dims.is_empty() {
                variables.push(FlatVar {
                    name: var.symbol.clone(),
                    var_type: var.var_type,
                    lower: S::from_f64_lossy(lower),
                    upper: S::from_f64_lossy(upper),
                });
            } else {
                let mut indices = vec![0usize; dims.len()];
                for _ in 0..count {
                    variables.push(FlatVar {
                        name: flat_name(&var.symbol, &indices),
                        var_type: var.var_type,
                        lower: S::from_f64_lossy(lower),
                        upper: S::from_f64_lossy(upper),
                    });
                    // Row-major odometer.
                    for pos in (0..dims.len()).rev() {
                        indices[pos] += 1;
                        if indices[pos] < dims[pos] {
                            break;
                        }
                        indices[pos] = 0;
                    }
                }
            }
            layouts.insert(
                var.symbol.as_str(),
                VarLayout {
                    symbol: var.symbol.clone(),
                    base,
                    dims,
                },
            );
        }
        Ok(Grounder {
            env,
            layouts,
            variables,
            warnings: Vec::new(),
        })
    }

    fn resolve_index(
        &self,
        index: &Index,
        scope: &BTreeMap<&str, usize>,
        symbol: &str,
    ) -> Result<usize, GroundError> {
        match index {
            Index::Literal(k) if *k >= 0 => Ok(*k as usize),
            Index::Literal(k) => Err(GroundError::IndexOutOfRange {
                symbol: symbol.into(),
                detail: format!("negative literal index {k}"),
            }),
            Index::Bound(name) => {
                scope
                    .get(name.as_str())
                    .copied()
                    .ok_or_else(|| GroundError::IndexOutOfRange {
                        symbol: symbol.into(),
                        detail: format!("index '{name}' not bound at expansion time"),
                    })
            }
        }
    }

    fn eval(&self, expr: &Expr, scope: &BTreeMap<&str, usize>) -> Result<LinExpr<S>, GroundError> {
        match expr {
            Expr::Number(n) => Ok(LinExpr::constant(S::from_f64_lossy(*n))),
            Expr::Param { symbol, indices } => {
                let resolved: Vec<usize> = indices
                    .iter()
                    .map(|i| self.resolve_index(i, scope, symbol))
                    .collect::<Result<_, _>>()?;
                let value = self.env.scalar_at(symbol, &resolved)?;
                Ok(LinExpr::constant(S::from_f64_lossy(value)))
            }
            Expr::Var { symbol, indices } => {
                let resolved: Vec<usize> = indices
                    .iter()
                    .map(|i| self.resolve_index(i, scope, symbol))
                    .collect::<Result<_, _>>()?;
                let layout = self.layouts.get(symbol.as_str()).ok_or_else(|| {
                    GroundError::IndexOutOfRange {
                        symbol: symbol.clone(),
                        detail: "variable has no layout".into(),
                    }
                })?;
                Ok(LinExpr::term(layout.flat_index(&resolved)?))
            }
            Expr::Neg(inner) => Ok(self.eval(inner, scope)?.negate()),
            Expr::Add(a, b) => Ok(self.eval(a, scope)?.add(self.eval(b, scope)?)),
            Expr::Sub(a, b) => Ok(self.eval(a, scope)?.add(self.eval(b, scope)?.negate())),
            Expr::Mul(a, b) => {
                let left = self.eval(a, scope)?;
                let right = self.eval(b, scope)?;
                if left.is_constant() {
                    Ok(right.scale(left.constant))
                } else if right.is_constant() {
                    Ok(left.scale(right.constant))
                } else {
                    // The parser rejects this; re-checked for programmatic ASTs.
                    Err(GroundError::Formulation {
                        constraint: "(expression)".into(),
                        source: DslError::Nonlinear { line: 0, col: 0 },
                    })
                }
            }
            Expr::Sum {
                binders,
                guard,
                body,
            } => {
                let mut acc = LinExpr::constant(S::zero());
                let mut names = Vec::new();
                let mut dims = Vec::new();
                for binder in binders {
                    let len = self.env.set_len(&binder.set)?;
                    if len == 0 {
                        // Empty index set: the sum contributes nothing.
                        return Ok(acc);
                    }
                    names.push(binder.index.as_str());
                    dims.push(len);
                }
                let mut scope = scope.clone();
                let mut cursor = vec![0usize; dims.len()];
                loop {
                    for (&name, &slot) in names.iter().zip(&cursor) {
                        scope.insert(name, slot);
                    }
                    if guard_passes(guard.as_ref(), &scope) {
                        acc = acc.add(self.eval(body, &scope)?);
                    }
                    if !advance_odometer(&mut cursor, &dims) {
                        break;
                    }
                }
                Ok(acc)
            }
        }
    }
}

/// Advance a row-major odometer; returns false once every slot has wrapped.
pub(crate) fn advance_odometer(cursor: &mut [usize], dims: &[usize]) -> bool {
    for pos in (0..cursor.len()).rev() {
        cursor[pos] += 1;
        if cursor[pos] < dims[pos] {
            return true;
        }
        cursor[pos] = 0;
    }
    false
}

fn guard_passes(guard: Option<&Guard>, scope: &BTreeMap<&str, usize>) -> bool {
    let Some(guard) = guard else { return true };
    guard.conds.iter().all(|cond| {
        let resolve = |op: &GuardOperand| -> Option<i64> {
            match op {
                GuardOperand::Literal(k) => Some(*k),
                GuardOperand::Index(name) => scope.get(name.as_str()).map(|&v| v as i64),
            }
        };
        match (resolve(&cond.lhs), resolve(&cond.rhs)) {
            (Some(lhs), Some(rhs)) => cond.op.eval(lhs, rhs),
            _ => false,
        }
    })
}

fn quantifier_name(base: &str, scope_values: &[usize]) -> String {
    let mut name = sanitize(base);
    for v in scope_values {
        name.push('_');
        name.push_str(&v.to_string());
    }
    name
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

/// Expand a model into flat variables and affine rows over concrete index
/// sets. `Var >= 0` rows are lowered into variable bounds; constants move to
/// the right-hand side; expansion order follows declaration order so the
/// result is deterministic.
pub fn ground<S: Scalar>(
    model: &OptimizationModel,
    bindings: &Bindings,
) -> Result<GroundedModelOf<S>, GroundError> {
    let symbols = model.symbol_table();
    let mut grounder: Grounder<S> = Grounder::new(model, bindings)?;
    let mut rows: Vec<Row<S>> = Vec::new();

    for constraint in &model.constraints {
        let ast =
            formula_dsl::parse_constraint(&constraint.formulation, &symbols).map_err(|e| {
                GroundError::Formulation {
                    constraint: constraint.name.clone(),
                    source: e,
                }
            })?;
        expand_constraint(&mut grounder, &constraint.name, &ast, &mut rows)?;
    }

    let objective_ast = formula_dsl::parse_expression(&model.objective.formulation, &symbols)
        .map_err(|e| GroundError::Formulation {
            constraint: "(objective)".into(),
            source: e,
        })?;
    let scope = BTreeMap::new();
    let objective_lin = grounder.eval(&objective_ast, &scope)?;
    let objective = GroundedObjective {
        sense: model.objective.sense,
        coeffs: objective_lin.terms.into_iter().collect(),
        constant: objective_lin.constant,
    };

    Ok(GroundedModelOf {
        variables: grounder.variables,
        rows,
        objective,
        warnings: grounder.warnings,
    })
}

fn expand_constraint<S: Scalar>(
    grounder: &mut Grounder<S>,
    name: &str,
    ast: &ConstraintAst,
    rows: &mut Vec<Row<S>>,
) -> Result<(), GroundError> {
    let quants: &[Quantifier] = &ast.quantifiers;
    let mut sets = Vec::new();
    for quantifier in quants {
        let len = grounder.env.set_len(&quantifier.set)?;
        if len == 0 {
            grounder.warnings.push(format!(
                "constraint '{name}': empty index set '{}' produces no rows",
                quantifier.set
            ));
            return Ok(());
        }
        sets.push(len);
    }

    let mut cursor = vec![0usize; quants.len()];
    loop {
        let mut scope: BTreeMap<&str, usize> = BTreeMap::new();
        for (quantifier, &value) in quants.iter().zip(&cursor) {
            scope.insert(quantifier.index.as_str(), value);
        }
        let guards_pass = quants
            .iter()
            .all(|q| guard_passes(q.guard.as_ref(), &scope));
        if guards_pass {
            let row_name = quantifier_name(name, &cursor);
            emit_row(grounder, &row_name, ast, &scope, rows)?;
        }
        if !advance_odometer(&mut cursor, &sets) {
            break;
        }
    }
    Ok(())
}

fn emit_row<S: Scalar>(
    grounder: &mut Grounder<S>,
    row_name: &str,
    ast: &ConstraintAst,
    scope: &BTreeMap<&str, usize>,
    rows: &mut Vec<Row<S>>,
) -> Result<(), GroundError> {
    let lhs = grounder.eval(&ast.lhs, scope)?;
    let rhs = grounder.eval(&ast.rhs, scope)?;
    // Move variables left, constants right.
    let rhs_value = rhs.constant - lhs.constant;
    let combined = LinExpr {
        terms: lhs.terms,
        constant: S::zero(),
    }
    .add(
        LinExpr {
            terms: rhs.terms,
            constant: S::zero(),
        }
        .negate(),
    );
    if !rhs_value.is_finite() {
        return Err(GroundError::NonFiniteRhs {
            row: row_name.to_string(),
        });
    }
    let coeffs: Vec<(usize, S)> = combined
        .terms
        .into_iter()
        .filter(|(_, c)| *c != S::zero())
        .collect();

    if coeffs.is_empty() {
        // Tautology check: a constant row either holds (drop, warn) or the
        // model is constantly infeasible.
        let zero = S::zero();
        let holds = match ast.relop {
            Relop::Le => zero <= rhs_value,
            Relop::Ge => zero >= rhs_value,
            Relop::Eq => zero == rhs_value,
        };
        if holds {
            grounder.warnings.push(format!(
                "row '{row_name}' is constant and satisfied; dropped"
            ));
            return Ok(());
        }
        return Err(GroundError::ConstantRowViolated {
            row: row_name.to_string(),
            detail: format!("0 {} {}", ast.relop.as_str(), rhs_value),
        });
    }

    // Lower plain non-negativity rows (Var >= 0) into variable bounds.
    if coeffs.len() == 1 && rhs_value == S::zero() {
        let (var, coeff) = coeffs[0];
        let lowers = matches!(
            (ast.relop, coeff > S::zero()),
            (Relop::Ge, true) | (Relop::Le, false)
        ) && coeff.abs() == S::one();
        if lowers {
            let flat = &mut grounder.variables[var];
            if flat.lower < S::zero() {
                flat.lower = S::zero();
            }
            return Ok(());
        }
    }

    rows.push(Row {
        name: row_name.to_string(),
        coeffs,
        relop: ast.relop,
        rhs: rhs_value,
    });
    Ok(())
}
