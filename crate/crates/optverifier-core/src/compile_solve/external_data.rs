use std::path::Path;

use serde_json::Value;

use super::Bindings;
use crate::model_ir::{Dim, OptimizationModel, ParamValue};

#[derive(Debug, thiserror::Error)]
pub enum ExternalDataError {
    #[error("cannot read data file: {0}")]
    Io(String),
    #[error("cannot parse data file: {0}")]
    Parse(String),
    #[error("no column or key for external parameter '{0}'")]
    MissingColumn(String),
    #[error("shape mismatch for '{symbol}': expected {expected:?}, data has {actual:?}")]
    ShapeMismatch {
        symbol: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
}

/// Bind external parameter values from a CSV (one column per vector-shaped
/// parameter, header row of symbols) or a JSON object keyed by symbol.
/// Declared shapes are validated against the loaded data.
pub fn load_external_parameters(
    model: &OptimizationModel,
    data_path: &Path,
) -> Result<Bindings, ExternalDataError> {
    let text =
        std::fs::read_to_string(data_path).map_err(|e| ExternalDataError::Io(e.to_string()))?;
    let is_json = data_path
        .extension()
        .map(|ext| ext.eq_ignore_ascii_case("json"))
        .unwrap_or(false);
    let mut bindings = Bindings::new();

    if is_json {
        let value: Value =
            serde_json::from_str(&text).map_err(|e| ExternalDataError::Parse(e.to_string()))?;
        let object = value
            .as_object()
            .ok_or_else(|| ExternalDataError::Parse("top level must be an object".into()))?;
        for param in externals(model) {
            let raw = object
                .get(&param.symbol)
                .ok_or_else(|| ExternalDataError::MissingColumn(param.symbol.clone()))?;
            let parsed: ParamValue = serde_json::from_value(raw.clone())
                .map_err(|e| ExternalDataError::Parse(format!("{}: {e}", param.symbol)))?;
            check_shape(model, &param.symbol, &param.shape, &parsed)?;
            bindings.insert(param.symbol.clone(), parsed);
        }
        return Ok(bindings);
    }

    // CSV: header row of parameter symbols, numeric rows below.
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| ExternalDataError::Parse("empty CSV".into()))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    for (row_index, line) in lines.enumerate() {
        for (col, cell) in line.split(',').enumerate() {
            if col >= columns.len() {
                return Err(ExternalDataError::Parse(format!(
                    "row {} has more cells than the header",
                    row_index + 2
                )));
            }
            let value: f64 = cell.trim().parse().map_err(|_| {
                ExternalDataError::Parse(format!(
                    "non-numeric cell {:?} at row {}",
                    cell,
                    row_index + 2
                ))
            })?;
            columns[col].push(value);
        }
    }
    for param in externals(model) {
        let column = header
            .iter()
            .position(|h| *h == param.symbol)
            .ok_or_else(|| ExternalDataError::MissingColumn(param.symbol.clone()))?;
        let values = &columns[column];
        let parsed = ParamValue::Array(values.iter().map(|&v| ParamValue::Scalar(v)).collect());
        check_shape(model, &param.symbol, &param.shape, &parsed)?;
        bindings.insert(param.symbol.clone(), parsed);
    }
    Ok(bindings)
}

fn externals(model: &OptimizationModel) -> impl Iterator<Item = &crate::model_ir::Parameter> {
    model.parameters.iter().filter(|p| p.value.is_external())
}

fn check_shape(
    model: &OptimizationModel,
    symbol: &str,
    declared: &[Dim],
    value: &ParamValue,
) -> Result<(), ExternalDataError> {
    let actual = value
        .concrete_shape()
        .ok_or_else(|| ExternalDataError::Parse(format!("value bound to '{symbol}' is ragged")))?;
    let expected: Option<Vec<usize>> = declared
        .iter()
        .map(|dim| match dim {
            Dim::Fixed(n) => Some(*n),
            Dim::Symbolic(name) => match model.find_parameter(name).map(|p| &p.value) {
                Some(ParamValue::Scalar(v)) if *v >= 0.0 && v.fract() == 0.0 => Some(*v as usize),
                _ => None,
            },
        })
        .collect();
    match expected {
        Some(expected) if expected == actual => Ok(()),
        Some(expected) => Err(ExternalDataError::ShapeMismatch {
            symbol: symbol.into(),
            expected,
            actual,
        }),
        // Symbolic dims without a resolved size accept whatever arrives.
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_ir::parse_model_json;

    fn warehouse_with_external_demand() -> OptimizationModel {
        let mut model = parse_model_json(include_str!("../agents/canned/warehouse.json")).unwrap();
        model.parameters[2].value = ParamValue::External {
            external: "demand.csv".into(),
        };
        model
    }

    #[test]
    fn csv_column_binds_and_checksums() {
        let model = warehouse_with_external_demand();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demand.csv");
        let demands = [
            117, 86, 69, 53, 110, 74, 136, 140, 126, 79, 54, 86, 114, 76, 136, 73, 144, 51, 53, 120,
        ];
        let mut text = String::from("CustomerDemand\n");
        for d in demands {
            text.push_str(&format!("{d}\n"));
        }
        std::fs::write(&path, text).unwrap();
        let bindings = load_external_parameters(&model, &path).unwrap();
        match &bindings["CustomerDemand"] {
            ParamValue::Array(items) => {
                assert_eq!(items.len(), 20);
                let total: f64 = items
                    .iter()
                    .map(|v| match v {
                        ParamValue::Scalar(n) => *n,
                        _ => panic!("expected scalars"),
                    })
                    .sum();
                assert_eq!(total, 1897.0);
            }
            other => panic!("expected array, got {other:?}"),
        }
    }

    #[test]
    fn wrong_row_count_is_shape_mismatch() {
        let model = warehouse_with_external_demand();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demand.csv");
        std::fs::write(&path, "CustomerDemand\n1\n2\n3\n").unwrap();
        let err = load_external_parameters(&model, &path).unwrap_err();
        assert!(matches!(err, ExternalDataError::ShapeMismatch { .. }));
    }

    #[test]
    fn absent_file_is_io_error() {
        let model = warehouse_with_external_demand();
        let err =
            load_external_parameters(&model, Path::new("/nonexistent/demand.csv")).unwrap_err();
        assert!(matches!(err, ExternalDataError::Io(_)));
    }

    #[test]
    fn missing_column_is_reported() {
        let model = warehouse_with_external_demand();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demand.csv");
        std::fs::write(&path, "SomethingElse\n1\n").unwrap();
        let err = load_external_parameters(&model, &path).unwrap_err();
        assert!(matches!(err, ExternalDataError::MissingColumn(ref s) if s == "CustomerDemand"));
    }

    #[test]
    fn json_matrix_binds() {
        let mut model = warehouse_with_external_demand();
        model.parameters[3].value = ParamValue::External {
            external: "costs.json".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.json");
        let mut costs = Vec::new();
        for i in 0..10 {
            costs.push(vec![i as f64; 20]);
        }
        let doc = serde_json::json!({
            "CustomerDemand": vec![5.0; 20],
            "ServiceAllocationCost": costs,
        });
        std::fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
        let bindings = load_external_parameters(&model, &path).unwrap();
        assert!(bindings.contains_key("ServiceAllocationCost"));
    }
}
