use std::collections::BTreeMap;

use super::solve::SolveError;
use super::{GroundedModelOf, SolutionOf, SolveStatus};
use crate::formula_dsl::Relop;
use crate::model_ir::{Sense, VarType};
use crate::scalar::Scalar;

pub const SOLVER_ID: &str = "builtin-brute-force";

#[derive(Debug, Clone, Copy)]
pub struct BruteForceConfig {
    /// Maximum product of domain sizes that will be enumerated.
    pub domain_cap: f64,
}

impl Default for BruteForceConfig {
    fn default() -> Self {
        BruteForceConfig { domain_cap: 1e7 }
    }
}

#[derive(Debug, Clone)]
struct Domain {
    lower: Option<i64>,
    upper: Option<i64>,
}

impl Domain {
    fn size(&self) -> Option<f64> {
        match (self.lower, self.upper) {
            (Some(lo), Some(hi)) if hi >= lo => Some((hi - lo + 1) as f64),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        }
    }
}

/// Exhaustive enumeration over integer/binary variables with finite bounds.
///
/// Bounds are first tightened by single-row propagation so models that rely
/// on constraints for boundedness (knapsack-style capacities) stay
/// enumerable. A variable left unbounded is either certified as an improving
/// recession direction (status `unbounded`) or the oracle refuses.
///
/// Ties break to the lexicographically smallest assignment in flat-variable
/// order: enumeration is lexicographic and the incumbent only moves on
/// strict improvement.
pub fn brute_force_solve<S: Scalar>(
    grounded: &GroundedModelOf<S>,
    config: &BruteForceConfig,
) -> Result<SolutionOf<S>, SolveError> {
    let start = std::time::Instant::now();
    for var in &grounded.variables {
        if var.var_type == VarType::Continuous {
            return Err(SolveError::OracleInapplicable(format!(
                "variable '{}' is continuous",
                var.name
            )));
        }
    }

    let mut domains = initial_domains(grounded);
    propagate_bounds(grounded, &mut domains);

    // Empty domain: propagation proved infeasibility.
    if domains
        .iter()
        .any(|d| matches!(d.size(), Some(s) if s == 0.0))
    {
        let mut solution = SolutionOf::status_only(SolveStatus::Infeasible, SOLVER_ID);
        solution.wall_time_seconds = start.elapsed().as_secs_f64();
        return Ok(solution);
    }

    if domains.iter().any(|d| d.size().is_none()) {
        return match certify_unbounded(grounded, &domains, config) {
            UnboundedCheck::Unbounded => {
                let mut solution = SolutionOf::status_only(SolveStatus::Unbounded, SOLVER_ID);
                solution.wall_time_seconds = start.elapsed().as_secs_f64();
                Ok(solution)
            }
            UnboundedCheck::Unknown(reason) => Err(SolveError::OracleInapplicable(reason)),
        };
    }

    let product: f64 = domains.iter().map(|d| d.size().unwrap()).product();
    if product > config.domain_cap {
        return Err(SolveError::OracleInapplicable(format!(
            "domain product {product:.3e} exceeds cap {:.3e}",
            config.domain_cap
        )));
    }

    let best = enumerate(grounded, &domains, true);
    let mut solution = match best {
        Some((values, objective)) => {
            let assignment: BTreeMap<String, S> = grounded
                .variables
                .iter()
                .zip(&values)
                .map(|(var, &v)| (var.name.clone(), S::from_f64_lossy(v as f64)))
                .collect();
            SolutionOf {
                status: SolveStatus::Optimal,
                assignment,
                objective_value: Some(objective),
                solver_id: SOLVER_ID.into(),
                wall_time_seconds: 0.0,
            }
        }
        None => SolutionOf::status_only(SolveStatus::Infeasible, SOLVER_ID),
    };
    solution.wall_time_seconds = start.elapsed().as_secs_f64();
    Ok(solution)
}

fn initial_domains<S: Scalar>(grounded: &GroundedModelOf<S>) -> Vec<Domain> {
    grounded
        .variables
        .iter()
        .map(|var| {
            let lower = var.lower.to_f64_lossy();
            let upper = var.upper.to_f64_lossy();
            Domain {
                lower: if lower.is_finite() {
                    Some(lower.ceil() as i64)
                } else {
                    None
                },
                upper: if upper.is_finite() {
                    Some(upper.floor() as i64)
                } else {
                    None
                },
            }
        })
        .collect()
}

/// Single-row interval propagation to a fixpoint (bounded pass count).
fn propagate_bounds<S: Scalar>(grounded: &GroundedModelOf<S>, domains: &mut [Domain]) {
    for _ in 0..32 {
        let mut changed = false;
        for row in &grounded.rows {
            let coeffs: Vec<(usize, f64)> = row
                .coeffs
                .iter()
                .map(|&(v, c)| (v, c.to_f64_lossy()))
                .collect();
            let rhs = row.rhs.to_f64_lossy();
            if matches!(row.relop, Relop::Le | Relop::Eq) {
                changed |= tighten_le(&coeffs, rhs, domains);
            }
            if matches!(row.relop, Relop::Ge | Relop::Eq) {
                // a.x >= b  <=>  -a.x <= -b
                let negated: Vec<(usize, f64)> = coeffs.iter().map(|&(v, c)| (v, -c)).collect();
                changed |= tighten_le(&negated, -rhs, domains);
            }
        }
        if !changed {
            break;
        }
    }
}

/// For sum(c_i x_i) <= rhs derive implied bounds for each variable.
fn tighten_le(coeffs: &[(usize, f64)], rhs: f64, domains: &mut [Domain]) -> bool {
    let mut changed = false;
    for (k, &(var, coeff)) in coeffs.iter().enumerate() {
        if coeff == 0.0 {
            continue;
        }
        // Minimum activity of the other terms.
        let mut min_others = 0.0;
        let mut bounded = true;
        for (j, &(other, other_coeff)) in coeffs.iter().enumerate() {
            if j == k || other_coeff == 0.0 {
                continue;
            }
            let domain = &domains[other];
            let contribution = if other_coeff > 0.0 {
                domain.lower.map(|lo| other_coeff * lo as f64)
            } else {
                domain.upper.map(|hi| other_coeff * hi as f64)
            };
            match contribution {
                Some(c) => min_others += c,
                None => {
                    bounded = false;
                    break;
                }
            }
        }
        if !bounded {
            continue;
        }
        let slack = rhs - min_others;
        let domain = &mut domains[var];
        if coeff > 0.0 {
            let implied = (slack / coeff).floor() as i64;
            if domain.upper.is_none_or(|hi| implied < hi) {
                domain.upper = Some(implied);
                changed = true;
            }
        } else {
            let implied = (slack / coeff).ceil() as i64;
            if domain.lower.is_none_or(|lo| implied > lo) {
                domain.lower = Some(implied);
                changed = true;
            }
        }
    }
    changed
}

enum UnboundedCheck {
    Unbounded,
    Unknown(String),
}

/// A variable with an infinite domain: if its unit direction improves the
/// objective and is a valid recession direction, find any feasible point in
/// the clamped problem to certify unboundedness.
fn certify_unbounded<S: Scalar>(
    grounded: &GroundedModelOf<S>,
    domains: &[Domain],
    config: &BruteForceConfig,
) -> UnboundedCheck {
    let maximize = grounded.objective.sense == Sense::Maximize;
    let obj: BTreeMap<usize, f64> = grounded
        .objective
        .coeffs
        .iter()
        .map(|&(v, c)| (v, c.to_f64_lossy()))
        .collect();

    let mut has_candidate = false;
    for (var, domain) in domains.iter().enumerate() {
        let coeff = obj.get(&var).copied().unwrap_or(0.0);
        let improving_up =
            domain.upper.is_none() && ((maximize && coeff > 0.0) || (!maximize && coeff < 0.0));
        let improving_down =
            domain.lower.is_none() && ((maximize && coeff < 0.0) || (!maximize && coeff > 0.0));
        let direction = if improving_up {
            1.0
        } else if improving_down {
            -1.0
        } else {
            continue;
        };
        if recession_valid(grounded, var, direction) {
            has_candidate = true;
            break;
        }
    }
    if !has_candidate {
        return UnboundedCheck::Unknown(
            "infinite variable domain without an improving recession direction".into(),
        );
    }

    // Clamp every infinite side to the finite one (or zero) and look for any
    // feasible point: point + ray = unbounded.
    let clamped: Vec<Domain> = domains
        .iter()
        .map(|d| match (d.lower, d.upper) {
            (Some(lo), Some(hi)) => Domain {
                lower: Some(lo),
                upper: Some(hi),
            },
            (Some(lo), None) => Domain {
                lower: Some(lo),
                upper: Some(lo),
            },
            (None, Some(hi)) => Domain {
                lower: Some(hi),
                upper: Some(hi),
            },
            (None, None) => Domain {
                lower: Some(0),
                upper: Some(0),
            },
        })
        .collect();
    let product: f64 = clamped.iter().map(|d| d.size().unwrap_or(0.0)).product();
    if product > config.domain_cap {
        return UnboundedCheck::Unknown(format!(
            "unboundedness candidate but clamped domain product {product:.3e} exceeds cap"
        ));
    }
    match enumerate(grounded, &clamped, false) {
        Some(_) => UnboundedCheck::Unbounded,
        None => UnboundedCheck::Unknown(
            "improving recession direction but no feasible point found in clamped domains".into(),
        ),
    }
}

fn recession_valid<S: Scalar>(grounded: &GroundedModelOf<S>, var: usize, direction: f64) -> bool {
    grounded.rows.iter().all(|row| {
        let coeff = row
            .coeffs
            .iter()
            .find(|&&(v, _)| v == var)
            .map(|&(_, c)| c.to_f64_lossy())
            .unwrap_or(0.0);
        let delta = coeff * direction;
        match row.relop {
            Relop::Le => delta <= 0.0,
            Relop::Ge => delta >= 0.0,
            Relop::Eq => delta == 0.0,
        }
    })
}

/// Lexicographic enumeration with incremental row activities. Returns the
/// first optimum found (`track_best`) or the first feasible point.
fn enumerate<S: Scalar>(
    grounded: &GroundedModelOf<S>,
    domains: &[Domain],
    track_best: bool,
) -> Option<(Vec<i64>, S)> {
    let n = domains.len();
    let lows: Vec<i64> = domains.iter().map(|d| d.lower.unwrap()).collect();
    let highs: Vec<i64> = domains.iter().map(|d| d.upper.unwrap()).collect();

    // Column view for incremental updates.
    let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (row_idx, row) in grounded.rows.iter().enumerate() {
        for &(var, coeff) in &row.coeffs {
            columns[var].push((row_idx, coeff.to_f64_lossy()));
        }
    }
    let obj: BTreeMap<usize, f64> = grounded
        .objective
        .coeffs
        .iter()
        .map(|&(v, c)| (v, c.to_f64_lossy()))
        .collect();

    let mut values = lows.clone();
    let mut activities: Vec<f64> = grounded
        .rows
        .iter()
        .map(|row| {
            row.coeffs
                .iter()
                .map(|&(v, c)| c.to_f64_lossy() * values[v] as f64)
                .sum()
        })
        .collect();
    let mut objective: f64 = grounded
        .objective
        .coeffs
        .iter()
        .map(|&(v, c)| c.to_f64_lossy() * values[v] as f64)
        .sum();

    let feasible = |activities: &[f64]| {
        grounded
            .rows
            .iter()
            .zip(activities)
            .all(|(row, &activity)| {
                let rhs = row.rhs.to_f64_lossy();
                let tol = 1e-9 * rhs.abs().max(1.0);
                match row.relop {
                    Relop::Le => activity <= rhs + tol,
                    Relop::Ge => activity >= rhs - tol,
                    Relop::Eq => (activity - rhs).abs() <= tol,
                }
            })
    };

    let maximize = grounded.objective.sense == Sense::Maximize;
    let mut best: Option<(Vec<i64>, f64)> = None;
    loop {
        if feasible(&activities) {
            if !track_best {
                let total = objective + grounded.objective.constant.to_f64_lossy();
                return Some((values, S::from_f64_lossy(total)));
            }
            let better = match &best {
                None => true,
                Some((_, incumbent)) => {
                    if maximize {
                        objective > *incumbent
                    } else {
                        objective < *incumbent
                    }
                }
            };
            if better {
                best = Some((values.clone(), objective));
            }
        }
        // Advance the odometer from the last variable, updating activities.
        let mut pos = n;
        let mut advanced = false;
        while pos > 0 {
            pos -= 1;
            if values[pos] < highs[pos] {
                values[pos] += 1;
                for &(row, coeff) in &columns[pos] {
                    activities[row] += coeff;
                }
                if let Some(&c) = obj.get(&pos) {
                    objective += c;
                }
                advanced = true;
                break;
            }
            let delta = (values[pos] - lows[pos]) as f64;
            if delta != 0.0 {
                for &(row, coeff) in &columns[pos] {
                    activities[row] -= coeff * delta;
                }
                if let Some(&c) = obj.get(&pos) {
                    objective -= c * delta;
                }
            }
            values[pos] = lows[pos];
        }
        if !advanced {
            break;
        }
    }
    best.map(|(values, objective)| {
        let total = objective + grounded.objective.constant.to_f64_lossy();
        (values, S::from_f64_lossy(total))
    })
}
