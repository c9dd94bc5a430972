//! Discriminatory access: the platform chooses which firms may sell in which
//! market. With linear costs markets decouple, and a cost-ordered greedy
//! pass per market finds the welfare-optimal edge set.

use thiserror::Error;

use crate::equilibrium::{self, EquilibriumError, SolverOptions};
use crate::model::{EdgeSet, Instance, MarketParams};
use crate::poa_analysis::{self, AsymmetryParams, PoAReport, PoaError};

#[derive(Debug, Error)]
pub enum DesignError {
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Poa(#[from] PoaError),
    #[error("firm {firm} has a non-linear cost; network design needs linear costs")]
    NonLinearCost { firm: usize },
    #[error("instance too large for enumeration: {0}")]
    TooLarge(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignResult {
    pub edges: EdgeSet,
    pub sw_equilibrium: f64,
    pub per_market_active_counts: Vec<usize>,
    /// Firms in ascending cost order, ties by index.
    pub permutation: Vec<usize>,
}

fn slopes(instance: &Instance) -> Result<Vec<f64>, DesignError> {
    instance.ensure_valid().map_err(EquilibriumError::from)?;
    instance
        .firms
        .iter()
        .enumerate()
        .map(|(i, c)| c.linear_slope().ok_or(DesignError::NonLinearCost { firm: i + 1 }))
        .collect()
}

fn cost_order(slopes: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..slopes.len()).collect();
    order.sort_by(|&x, &y| slopes[x].total_cmp(&slopes[y]).then(x.cmp(&y)));
    order
}

/// Whether a firm with cost `c` joins a market already served by firms with
/// costs `prefix` at the Cournot equilibrium.
fn is_active(alpha: f64, prefix: &[f64], c: f64) -> bool {
    let k = prefix.len() as f64 + 1.0;
    let margin: f64 = prefix.iter().map(|&ci| alpha - ci).sum();
    alpha - c > margin / k
}

/// Equilibrium welfare of one market whose `costs` (ascending) are all active.
pub fn sw_single_market_closed(alpha: f64, beta: f64, costs: &[f64]) -> Result<f64, DesignError> {
    for k in 0..costs.len() {
        if !is_active(alpha, &costs[..k], costs[k]) {
            return Err(DesignError::Precondition(format!(
                "firm at position {} with cost {} is not active",
                k + 1,
                costs[k]
            )));
        }
    }
    let k = costs.len() as f64;
    let sq: f64 = costs.iter().map(|&c| (alpha - c) * (alpha - c)).sum();
    let sum: f64 = costs.iter().map(|&c| alpha - c).sum();
    Ok(sq / beta - (2.0 * k + 3.0) / 2.0 * sum * sum / ((k + 1.0) * (k + 1.0) * beta))
}

/// Whether adding a firm with cost `c_k` to the active `prefix` strictly
/// raises equilibrium welfare.
pub fn include_improves(alpha: f64, prefix: &[f64], c_k: f64) -> bool {
    let k = prefix.len() as f64 + 1.0;
    let sum: f64 = prefix.iter().map(|&c| alpha - c).sum();
    alpha - c_k > (1.0 + 1.0 / (k - 1.0 / (2.0 * (k + 1.0)))) * sum / k
}

fn finish(
    instance: &Instance,
    edges: EdgeSet,
    permutation: Vec<usize>,
) -> Result<DesignResult, DesignError> {
    let designed = instance.with_edges(edges);
    let ne = equilibrium::nash_linear(&designed)?;
    let per_market_active_counts = (0..instance.m())
        .map(|j| (0..instance.n()).filter(|&i| ne.q.get(i, j) > 0.0).count())
        .collect();
    Ok(DesignResult {
        sw_equilibrium: ne.social_welfare(),
        edges: designed.edges,
        per_market_active_counts,
        permutation,
    })
}

/// Per market, admit firms in ascending cost order while equilibrium welfare
/// strictly increases; stop at the first firm that does not help.
pub fn greedy_network(instance: &Instance) -> Result<DesignResult, DesignError> {
    let slopes = slopes(instance)?;
    let order = cost_order(&slopes);
    let mut edges = EdgeSet::empty(instance.n(), instance.m());
    for (j, mk) in instance.markets.iter().enumerate() {
        let mut prefix: Vec<f64> = Vec::new();
        let mut sw = 0.0;
        for &i in &order {
            let c = slopes[i];
            if !is_active(mk.alpha, &prefix, c) {
                break;
            }
            prefix.push(c);
            let next = sw_single_market_closed(mk.alpha, mk.beta, &prefix)?;
            if next > sw {
                sw = next;
                edges.insert(i, j);
            } else {
                break;
            }
        }
    }
    finish(instance, edges, order)
}

fn market_sw(mk: &MarketParams, firms: &[(usize, f64)]) -> f64 {
    let eq = equilibrium::single_market_nash(mk, firms);
    let d: f64 = eq.iter().map(|&(_, x)| x).sum();
    let cost: f64 = eq
        .iter()
        .map(|&(i, x)| x * firms.iter().find(|f| f.0 == i).map_or(0.0, |f| f.1))
        .sum();
    mk.utility(d) - cost
}

const MAX_SUBSET_FIRMS: usize = 12;
const MAX_JOINT_EDGES: usize = 16;

/// Exact optimum by enumerating every firm subset in each market.
pub fn brute_force_design(instance: &Instance) -> Result<DesignResult, DesignError> {
    let slopes = slopes(instance)?;
    let n = instance.n();
    if n > MAX_SUBSET_FIRMS {
        return Err(DesignError::TooLarge(format!(
            "{n} firms, subset enumeration allows at most {MAX_SUBSET_FIRMS}"
        )));
    }
    let mut edges = EdgeSet::empty(n, instance.m());
    for (j, mk) in instance.markets.iter().enumerate() {
        let mut best = (0.0, 0u32);
        for mask in 1u32..(1 << n) {
            let firms: Vec<(usize, f64)> = (0..n)
                .filter(|&i| mask & (1 << i) != 0)
                .map(|i| (i, slopes[i]))
                .collect();
            let sw = market_sw(mk, &firms);
            if sw > best.0 {
                best = (sw, mask);
            }
        }
        for i in 0..n {
            if best.1 & (1 << i) != 0 {
                edges.insert(i, j);
            }
        }
    }
    finish(instance, edges, cost_order(&slopes))
}

/// Exact optimum over all `2^(n m)` edge sets, without using market
/// decoupling.
pub fn brute_force_joint(instance: &Instance) -> Result<DesignResult, DesignError> {
    let slopes = slopes(instance)?;
    let (n, m) = (instance.n(), instance.m());
    if n * m > MAX_JOINT_EDGES {
        return Err(DesignError::TooLarge(format!(
            "{} possible edges, joint enumeration allows at most {MAX_JOINT_EDGES}",
            n * m
        )));
    }
    let mut best = (f64::NEG_INFINITY, EdgeSet::empty(n, m));
    for mask in 0u32..(1 << (n * m)) {
        let mut edges = EdgeSet::empty(n, m);
        for bit in 0..n * m {
            if mask & (1 << bit) != 0 {
                edges.insert(bit / m, bit % m);
            }
        }
        let ne = equilibrium::nash_linear(&instance.with_edges(edges.clone()))?;
        let sw = ne.social_welfare();
        if sw > best.0 {
            best = (sw, edges);
        }
    }
    finish(instance, best.1, cost_order(&slopes))
}

/// Price of anarchy under the greedy edge set, against open-access
/// efficient welfare.
pub fn poa_discriminatory(instance: &Instance) -> Result<(PoAReport, DesignResult), DesignError> {
    let design = greedy_network(instance)?;
    let opts = SolverOptions::default();
    let sw_open = poa_analysis::efficient_open_access(instance, &opts)?;
    let sw_designed = equilibrium::efficient_welfare(instance, &design.edges, &opts)?.social_welfare();
    if (sw_open - sw_designed).abs() > 1e-9 * (1.0 + sw_open.abs()) {
        return Err(DesignError::Precondition(format!(
            "designed network loses efficient welfare: {sw_designed} vs {sw_open}"
        )));
    }
    let bound = AsymmetryParams::from_instance(instance)
        .and_then(|p| poa_analysis::bound_discriminatory(instance, &p))
        .unwrap_or(4.0 / 3.0);
    let report = PoAReport::new(sw_open, design.sw_equilibrium)
        .with_upper_bound("discriminatory", bound);
    Ok((report, design))
}
