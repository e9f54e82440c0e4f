//! Small built-in library of canonical model sketches, retrieved by keyword
//! to fill the `{base_formulation}` prompt slot. When nothing matches, the
//! caller substitutes "none available".

const MAX_FLOW: &str = "Maximum flow: for a directed network with arc capacities c[i][j], a source s and a sink t, \
decision variables x[i][j] >= 0 give the flow on each arc. Maximize the total flow leaving s, subject to \
x[i][j] <= c[i][j] on every arc and flow conservation sum_j x[k][j] == sum_i x[i][k] at every intermediate node k.";

const KNAPSACK: &str = "Knapsack: given item values v[i], weights w[i] and a capacity W, integer (or binary) \
selection variables x[i] >= 0 maximize sum_i v[i]*x[i] subject to the single capacity row sum_i w[i]*x[i] <= W.";

const TSP: &str = "Traveling salesman: binary arc variables x[i][j] select the tour; every city has exactly one \
outgoing and one incoming selected arc; subtours are cut with auxiliary position variables u[i] and rows \
u[i] - u[j] + n*x[i][j] <= n - 1 for i, j distinct and different from the start city; minimize sum of c[i][j]*x[i][j].";

const FACILITY_LOCATION: &str = "Facility location: binary open variables y[j] and nonnegative service variables \
x[i][j] serve each customer's demand exactly; capacity rows sum_i x[i][j] <= cap[j]*y[j] link service to opening; \
minimize fixed open costs plus service allocation costs; optional rows bound the number of open facilities.";

const TRANSPORTATION: &str = "Transportation: nonnegative shipment variables x[i][j] from suppliers to customers; \
supply rows sum_j x[i][j] <= supply[i] and demand rows sum_i x[i][j] == demand[j]; minimize sum of unit shipping \
costs times shipments.";

const DIET: &str = "Diet: nonnegative purchase variables x[f] per food; nutrient rows sum_f a[n][f]*x[f] >= req[n] \
for every nutrient n (with optional upper bounds); minimize sum of cost[f]*x[f].";

/// Keyword lookup over the library. Matching is case-insensitive substring
/// search over the supplied text (problem description plus structure labels).
pub fn base_formulation_for(text: &str) -> Option<&'static str> {
    let lower = text.to_ascii_lowercase();
    let any = |keys: &[&str]| keys.iter().any(|k| lower.contains(k));
    if any(&[
        "max flow",
        "maximum flow",
        "reservoir",
        "canal",
        "flow network",
    ]) {
        Some(MAX_FLOW)
    } else if any(&["knapsack"]) {
        Some(KNAPSACK)
    } else if any(&[
        "traveling salesman",
        "travelling salesman",
        "salesperson",
        "tsp",
        "visit each city",
    ]) {
        Some(TSP)
    } else if any(&["warehouse", "facility location", "facility"]) {
        Some(FACILITY_LOCATION)
    } else if any(&["transportation", "transport plan", "shipping plan"]) {
        Some(TRANSPORTATION)
    } else if any(&["diet", "nutrient"]) {
        Some(DIET)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keywords_route_to_sketches() {
        assert!(base_formulation_for("canals between nine reservoirs")
            .unwrap()
            .contains("conservation"));
        assert!(base_formulation_for("a Knapsack of capacity 60")
            .unwrap()
            .contains("capacity row"));
        assert!(base_formulation_for("a salesperson visiting five cities")
            .unwrap()
            .contains("subtour"));
        assert!(base_formulation_for("open warehouses to serve customers")
            .unwrap()
            .contains("open"));
        assert_eq!(base_formulation_for("schedule nurses to shifts"), None);
    }
}
