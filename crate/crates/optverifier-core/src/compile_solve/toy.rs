use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Bindings;
use crate::model_ir::{Dim, OptimizationModel, ParamValue};

#[derive(Debug, Clone, thiserror::Error)]
pub enum ToyError {
    #[error("model has no external or symbolically-shaped parameters")]
    NoExternalParameters,
    #[error("dimension parameter '{0}' is not a non-negative integer scalar")]
    BadDimension(String),
}

/// Bind a parameterized model to a small synthetic dataset so solution-side
/// verification stays cheap on large-scale problems.
///
/// Dimension parameters (scalar integers referenced by symbolic shapes or
/// index sets) shrink to `min(original, 10)` unless overridden. External
/// array values are drawn from a seeded generator: demand/cost-like entries
/// uniform in [1, 100], minimum-demand entries in [1, 20], capacities scaled
/// to twice the mean demand load so toy instances are usually feasible.
pub fn instantiate_toy(
    model: &OptimizationModel,
    seed: u64,
    dim_overrides: &BTreeMap<String, usize>,
) -> Result<(OptimizationModel, Bindings), ToyError> {
    if !model.has_external_parameters() {
        return Err(ToyError::NoExternalParameters);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bound = model.clone();

    // Dimension parameters: every symbol used in a symbolic shape dim.
    let mut dim_symbols: Vec<String> = Vec::new();
    let shapes = model
        .parameters
        .iter()
        .map(|p| &p.shape)
        .chain(model.variables.iter().map(|v| &v.shape));
    for shape in shapes {
        for dim in shape {
            if let Dim::Symbolic(name) = dim {
                if !dim_symbols.contains(name) {
                    dim_symbols.push(name.clone());
                }
            }
        }
    }

    let mut dims: BTreeMap<String, usize> = BTreeMap::new();
    for symbol in &dim_symbols {
        let declared = model.find_parameter(symbol);
        let original = match declared.map(|p| &p.value) {
            Some(ParamValue::Scalar(n)) if *n >= 0.0 && n.fract() == 0.0 => Some(*n as usize),
            Some(ParamValue::External { .. }) | None => None,
            Some(_) => return Err(ToyError::BadDimension(symbol.clone())),
        };
        let resolved = dim_overrides
            .get(symbol)
            .copied()
            .unwrap_or_else(|| original.map(|n| n.min(10)).unwrap_or(10));
        dims.insert(symbol.clone(), resolved);
    }

    // Write resolved dimensions back into the bound model.
    for param in &mut bound.parameters {
        if let Some(&value) = dims.get(&param.symbol) {
            param.value = ParamValue::Scalar(value as f64);
        }
        for dim in &mut param.shape {
            if let Dim::Symbolic(name) = dim {
                if let Some(&value) = dims.get(name.as_str()) {
                    *dim = Dim::Fixed(value);
                }
            }
        }
    }
    for var in &mut bound.variables {
        for dim in &mut var.shape {
            if let Dim::Symbolic(name) = dim {
                if let Some(&value) = dims.get(name.as_str()) {
                    *dim = Dim::Fixed(value);
                }
            }
        }
    }

    // Generate values: two passes so capacities can scale with demand.
    let mut bindings = Bindings::new();
    let mut demand_total = 0.0f64;
    let mut demand_count = 0usize;
    let externals: Vec<usize> = bound
        .parameters
        .iter()
        .enumerate()
        .filter(|(_, p)| p.value.is_external())
        .map(|(i, _)| i)
        .collect();

    for &index in &externals {
        let param = &bound.parameters[index];
        if kind_of(&param.symbol) == ValueKind::Capacity {
            continue;
        }
        let dims_concrete = concrete_dims(&param.shape)?;
        let kind = kind_of(&param.symbol);
        let value = generate(&mut rng, &dims_concrete, kind);
        if kind == ValueKind::Demand {
            accumulate(&value, &mut demand_total, &mut demand_count);
        }
        bindings.insert(param.symbol.clone(), value);
    }
    for &index in &externals {
        let param = &bound.parameters[index];
        if kind_of(&param.symbol) != ValueKind::Capacity {
            continue;
        }
        let dims_concrete = concrete_dims(&param.shape)?;
        let entries: usize = dims_concrete.iter().product::<usize>().max(1);
        let total = if demand_count > 0 {
            demand_total
        } else {
            50.0 * entries as f64
        };
        let per_entry = (2.0 * total / entries as f64).ceil().max(1.0);
        let value = fill(&dims_concrete, per_entry);
        bindings.insert(param.symbol.clone(), value);
    }

    Ok((bound, bindings))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ValueKind {
    Capacity,
    MinimumDemand,
    Demand,
    Cost,
    Other,
}

fn kind_of(symbol: &str) -> ValueKind {
    let lower = symbol.to_ascii_lowercase();
    if lower.contains("capacity") || lower.contains("capac") {
        ValueKind::Capacity
    } else if lower.contains("demand") && (lower.contains("min") || lower.contains("minimum")) {
        ValueKind::MinimumDemand
    } else if lower.contains("demand") {
        ValueKind::Demand
    } else if lower.contains("cost") || lower.contains("price") {
        ValueKind::Cost
    } else {
        ValueKind::Other
    }
}

fn concrete_dims(shape: &[Dim]) -> Result<Vec<usize>, ToyError> {
    shape
        .iter()
        .map(|d| match d {
            Dim::Fixed(n) => Ok(*n),
            Dim::Symbolic(name) => Err(ToyError::BadDimension(name.clone())),
        })
        .collect()
}

fn generate(rng: &mut ChaCha8Rng, dims: &[usize], kind: ValueKind) -> ParamValue {
    let max = match kind {
        ValueKind::MinimumDemand => 20u32,
        _ => 100u32,
    };
    if dims.is_empty() {
        return ParamValue::Scalar(rng.random_range(1..=max) as f64);
    }
    let inner: Vec<ParamValue> = (0..dims[0])
        .map(|_| generate(rng, &dims[1..], kind))
        .collect();
    ParamValue::Array(inner)
}

fn fill(dims: &[usize], value: f64) -> ParamValue {
    if dims.is_empty() {
        return ParamValue::Scalar(value);
    }
    let inner: Vec<ParamValue> = (0..dims[0]).map(|_| fill(&dims[1..], value)).collect();
    ParamValue::Array(inner)
}

fn accumulate(value: &ParamValue, total: &mut f64, count: &mut usize) {
    match value {
        ParamValue::Scalar(n) => {
            *total += n;
            *count += 1;
        }
        ParamValue::Array(items) => {
            for item in items {
                accumulate(item, total, count);
            }
        }
        ParamValue::External { .. } => {}
    }
}
