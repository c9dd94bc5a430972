//! Welfare accounting and Nash equilibria of the networked Cournot game.
//!
//! The game is a potential game: the unique equilibrium maximizes
//! `SW(q) - sum_ij beta_j q_ij^2 / 2` over the feasible profiles. Linear-cost
//! instances decouple into independent single-market oligopolies with a
//! closed-form equilibrium; anything else goes through cyclic exact best
//! responses on the potential.

use serde::Serialize;
use thiserror::Error;

use crate::model::{CostFunction, EdgeSet, Instance, MarketParams, ModelError, SupplyProfile};

#[derive(Debug, Error)]
pub enum EquilibriumError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("closed form requires linear costs (firm {firm} is strictly convex)")]
    NonLinearCost { firm: usize },
    #[error("operation requires the complete edge set")]
    RequiresCompleteEdges,
    #[error("solver did not converge within {iterations} iterations")]
    NotConverged { iterations: usize },
    #[error("edge set is {got_n}x{got_m}, instance is {n}x{m}")]
    EdgeShape {
        n: usize,
        m: usize,
        got_n: usize,
        got_m: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WelfareBreakdown {
    pub consumer_utility: f64,
    pub production_cost: f64,
    pub consumer_surplus: f64,
    pub revenue: f64,
    pub social_welfare: f64,
}

impl WelfareBreakdown {
    pub const ZERO: WelfareBreakdown = WelfareBreakdown {
        consumer_utility: 0.0,
        production_cost: 0.0,
        consumer_surplus: 0.0,
        revenue: 0.0,
        social_welfare: 0.0,
    };

    /// Welfare of per-market demands `d` with firm outputs `s`.
    pub fn from_totals(
        markets: &[MarketParams],
        demands: &[f64],
        costs: &[CostFunction],
        outputs: &[f64],
    ) -> Self {
        let mut utility = 0.0;
        let mut surplus = 0.0;
        let mut revenue = 0.0;
        for (mk, &d) in markets.iter().zip(demands) {
            let u = mk.utility(d);
            let r = d * mk.price(d);
            utility += u;
            revenue += r;
            // beta d^2 / 2, which equals u - r exactly for affine demand
            surplus += 0.5 * mk.beta * d * d;
        }
        let cost: f64 = costs.iter().zip(outputs).map(|(c, &s)| c.eval(s)).sum();
        Self {
            consumer_utility: utility,
            production_cost: cost,
            consumer_surplus: surplus,
            revenue,
            social_welfare: utility - cost,
        }
    }
}

/// Social welfare of a supply profile, with its consumer-surplus/revenue split.
pub fn social_welfare(
    q: &SupplyProfile,
    instance: &Instance,
) -> Result<WelfareBreakdown, EquilibriumError> {
    q.check_against(instance)?;
    Ok(WelfareBreakdown::from_totals(
        &instance.markets,
        &q.market_totals(),
        &instance.firms,
        &q.firm_totals(),
    ))
}

/// The exact potential of the game.
pub fn potential(q: &SupplyProfile, instance: &Instance) -> f64 {
    let sw = WelfareBreakdown::from_totals(
        &instance.markets,
        &q.market_totals(),
        &instance.firms,
        &q.firm_totals(),
    )
    .social_welfare;
    let mut penalty = 0.0;
    for i in 0..q.firms() {
        for (j, mk) in instance.markets.iter().enumerate() {
            let x = q.get(i, j);
            penalty += 0.5 * mk.beta * x * x;
        }
    }
    sw - penalty
}

/// Profit of every firm under `q`.
pub fn firm_profits(q: &SupplyProfile, instance: &Instance) -> Vec<f64> {
    let prices: Vec<f64> = instance
        .markets
        .iter()
        .zip(q.market_totals())
        .map(|(mk, d)| mk.price(d))
        .collect();
    (0..q.firms())
        .map(|i| {
            let revenue: f64 = q.row(i).iter().zip(&prices).map(|(x, p)| x * p).sum();
            revenue - instance.firms[i].eval(q.firm_total(i))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    ClosedForm,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative tolerance on coordinate changes and first-order residuals.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iters: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    pub q: SupplyProfile,
    pub demand: Vec<f64>,
    pub prices: Vec<f64>,
    pub firm_profits: Vec<f64>,
    pub welfare: WelfareBreakdown,
    pub method: SolveMethod,
    pub iterations: usize,
    /// Largest violation of the equilibrium first-order conditions.
    pub residual: f64,
    pub converged: bool,
}

impl EquilibriumResult {
    /// Turns a non-converged result into an error.
    pub fn require_converged(self) -> Result<Self, EquilibriumError> {
        if self.converged {
            Ok(self)
        } else {
            Err(EquilibriumError::NotConverged {
                iterations: self.iterations,
            })
        }
    }

    fn assemble(
        q: SupplyProfile,
        instance: &Instance,
        method: SolveMethod,
        iterations: usize,
        converged: bool,
    ) -> Self {
        let demand = q.market_totals();
        let prices = instance
            .markets
            .iter()
            .zip(&demand)
            .map(|(mk, &d)| mk.price(d))
            .collect();
        let welfare = WelfareBreakdown::from_totals(
            &instance.markets,
            &demand,
            &instance.firms,
            &q.firm_totals(),
        );
        let residual = nash_residual(&q, instance);
        let firm_profits = firm_profits(&q, instance);
        Self {
            q,
            demand,
            prices,
            firm_profits,
            welfare,
            method,
            iterations,
            residual,
            converged,
        }
    }

    pub fn social_welfare(&self) -> f64 {
        self.welfare.social_welfare
    }
}

/// Largest violation of the Nash KKT conditions over all edges.
pub fn nash_residual(q: &SupplyProfile, instance: &Instance) -> f64 {
    kkt_residual(q, instance, 1.0)
}

/// `weight` is the coefficient on the own-quantity price effect: 1 for Nash,
/// 0 for efficiency.
fn kkt_residual(q: &SupplyProfile, instance: &Instance, weight: f64) -> f64 {
    let demand = q.market_totals();
    let mut worst: f64 = 0.0;
    for (i, cost) in instance.firms.iter().enumerate() {
        let mc = cost.right_derivative(q.firm_total(i));
        for (j, mk) in instance.markets.iter().enumerate() {
            if !instance.edges.contains(i, j) {
                continue;
            }
            let x = q.get(i, j);
            let grad = mk.price(demand[j]) - weight * mk.beta * x - mc;
            let v = if x > 0.0 { grad.abs() } else { grad.max(0.0) };
            worst = worst.max(v);
        }
    }
    worst
}

/// Maximizes `sum_j (a_j x_j - k_j x_j^2) - C(sum_j x_j)` over `x >= 0`.
///
/// Stationarity gives `x_j = (a_j - nu)^+ / (2 k_j)` with a common marginal
/// cost `nu = c + 2 d s`; the active set is a prefix of the markets sorted by
/// `a_j`, found by raising the water level one market at a time.
pub(crate) fn concave_block(a: &[f64], kappa: &[f64], cost: &CostFunction) -> Vec<f64> {
    let (c, d) = cost.coefficients();
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&x, &y| a[y].total_cmp(&a[x]).then(x.cmp(&y)));
    let mut out = vec![0.0; a.len()];
    if order.is_empty() || a[order[0]] <= c {
        return out;
    }
    let mut sum_a = 0.0;
    let mut sum_w = 0.0;
    let mut level = c;
    for (k, &j) in order.iter().enumerate() {
        sum_a += a[j] / (2.0 * kappa[j]);
        sum_w += 1.0 / (2.0 * kappa[j]);
        level = (c + 2.0 * d * sum_a) / (1.0 + 2.0 * d * sum_w);
        match order.get(k + 1) {
            Some(&next) if a[next] > level => continue,
            _ => break,
        }
    }
    for (j, x) in out.iter_mut().enumerate() {
        *x = ((a[j] - level) / (2.0 * kappa[j])).max(0.0);
    }
    out
}

/// Exact unilateral best response of `firm` with every other firm held at `q`.
pub fn best_response(q: &SupplyProfile, instance: &Instance, firm: usize) -> Vec<f64> {
    block_update(q, instance, firm, 1.0)
}

/// Block maximizer for one firm. `own` scales the own-quantity curvature:
/// 1 for the potential (Nash), 1/2 for welfare.
fn block_update(q: &SupplyProfile, instance: &Instance, firm: usize, own: f64) -> Vec<f64> {
    let markets = instance.edges.markets_of_firm(firm);
    let mut a = Vec::with_capacity(markets.len());
    let mut kappa = Vec::with_capacity(markets.len());
    for &j in &markets {
        let mk = &instance.markets[j];
        let others = q.market_total(j) - q.get(firm, j);
        a.push(mk.price(others));
        kappa.push(own * mk.beta);
    }
    let x = concave_block(&a, &kappa, &instance.firms[firm]);
    let mut row = vec![0.0; instance.m()];
    for (k, &j) in markets.iter().enumerate() {
        row[j] = x[k];
    }
    row
}

fn check_edges(instance: &Instance, edges: &EdgeSet) -> Result<(), EquilibriumError> {
    if edges.firms() != instance.n() || edges.markets() != instance.m() {
        return Err(EquilibriumError::EdgeShape {
            n: instance.n(),
            m: instance.m(),
            got_n: edges.firms(),
            got_m: edges.markets(),
        });
    }
    Ok(())
}

fn require_linear(instance: &Instance) -> Result<Vec<f64>, EquilibriumError> {
    instance
        .firms
        .iter()
        .enumerate()
        .map(|(i, f)| {
            f.linear_slope()
                .ok_or(EquilibriumError::NonLinearCost { firm: i })
        })
        .collect()
}

/// Closed-form single-market Cournot equilibrium for linear costs.
///
/// `firms` lists `(index, marginal cost)` of the firms with access. Returns
/// `(index, quantity)` for the active firms only.
pub fn single_market_nash(market: &MarketParams, firms: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let mut sorted = firms.to_vec();
    sorted.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
    let alpha = market.alpha;
    let mut margin_sum = 0.0;
    let mut active = 0;
    for (k, &(_, c)) in sorted.iter().enumerate() {
        // strict: a firm exactly at the threshold stays inactive
        if alpha - c > margin_sum / (k as f64 + 1.0) {
            margin_sum += alpha - c;
            active = k + 1;
        } else {
            break;
        }
    }
    let k1 = active as f64 + 1.0;
    sorted[..active]
        .iter()
        .map(|&(i, c)| (i, (k1 * (alpha - c) - margin_sum) / (k1 * market.beta)))
        .collect()
}

/// Nash equilibrium for linear costs, one closed-form oligopoly per market.
pub fn nash_linear(instance: &Instance) -> Result<EquilibriumResult, EquilibriumError> {
    instance.ensure_valid()?;
    let slopes = require_linear(instance)?;
    let mut q = SupplyProfile::zeros(instance.n(), instance.m());
    for (j, mk) in instance.markets.iter().enumerate() {
        let firms: Vec<(usize, f64)> = instance
            .edges
            .firms_in_market(j)
            .into_iter()
            .map(|i| (i, slopes[i]))
            .collect();
        for (i, x) in single_market_nash(mk, &firms) {
            q.set(i, j, x);
        }
    }
    Ok(EquilibriumResult::assemble(
        q,
        instance,
        SolveMethod::ClosedForm,
        0,
        true,
    ))
}

/// Nash equilibrium for any admissible cost profile by cyclic best response.
pub fn nash_general(
    instance: &Instance,
    opts: &SolverOptions,
) -> Result<EquilibriumResult, EquilibriumError> {
    nash_general_from(instance, &SupplyProfile::zeros(instance.n(), instance.m()), opts)
}

/// As [`nash_general`], starting from `start` (projected onto the edge set).
pub fn nash_general_from(
    instance: &Instance,
    start: &SupplyProfile,
    opts: &SolverOptions,
) -> Result<EquilibriumResult, EquilibriumError> {
    instance.ensure_valid()?;
    let (q, iterations, converged) = block_ascent(instance, &instance.edges, start, 1.0, opts)?;
    Ok(EquilibriumResult::assemble(
        q,
        instance,
        SolveMethod::Iterative,
        iterations,
        converged,
    ))
}

/// Closed form when every cost is linear, cyclic best response otherwise.
pub fn nash(instance: &Instance, opts: &SolverOptions) -> Result<EquilibriumResult, EquilibriumError> {
    if instance.all_linear() {
        nash_linear(instance)
    } else {
        nash_general(instance, opts)
    }
}

fn block_ascent(
    instance: &Instance,
    edges: &EdgeSet,
    start: &SupplyProfile,
    own: f64,
    opts: &SolverOptions,
) -> Result<(SupplyProfile, usize, bool), EquilibriumError> {
    check_edges(instance, edges)?;
    let work = instance.with_edges(edges.clone());
    let mut q = SupplyProfile::zeros(work.n(), work.m());
    for (i, j) in edges.pairs() {
        q.set(i, j, start.get(i, j).max(0.0));
    }
    if edges.is_empty() {
        return Ok((q, 0, true));
    }
    let alpha_scale = work
        .markets
        .iter()
        .map(|mk| mk.alpha)
        .fold(1.0_f64, f64::max);
    let weight = if own == 1.0 { 1.0 } else { 0.0 };
    for iter in 1..=opts.max_iters {
        let mut change: f64 = 0.0;
        let mut scale: f64 = 1.0;
        for i in 0..work.n() {
            let row = block_update(&q, &work, i, own);
            for (j, &x) in row.iter().enumerate() {
                change = change.max((x - q.get(i, j)).abs());
                scale = scale.max(x.abs());
                q.set(i, j, x);
            }
        }
        if change <= opts.tol * scale
            && kkt_residual(&q, &work, weight) <= opts.tol * alpha_scale
        {
            return Ok((q, iter, true));
        }
    }
    Ok((q, opts.max_iters, false))
}

#[derive(Debug, Clone)]
pub struct EfficientOutcome {
    pub q: SupplyProfile,
    pub welfare: WelfareBreakdown,
    pub method: SolveMethod,
    pub iterations: usize,
    pub converged: bool,
}

impl EfficientOutcome {
    pub fn social_welfare(&self) -> f64 {
        self.welfare.social_welfare
    }
}

/// Maximum social welfare over profiles supported on `edges`.
///
/// Linear costs: each market is served by its cheapest connected firm.
/// Convex costs on the complete edge set: a single clearing price equates
/// demand and supply. Other cases use cyclic block ascent on welfare itself.
pub fn efficient_welfare(
    instance: &Instance,
    edges: &EdgeSet,
    opts: &SolverOptions,
) -> Result<EfficientOutcome, EquilibriumError> {
    instance.ensure_valid()?;
    check_edges(instance, edges)?;
    let support = instance.with_edges(edges.clone());
    let (q, method, iterations, converged) = if let Some(slopes) = instance.linear_slopes() {
        (efficient_linear(&support, &slopes), SolveMethod::ClosedForm, 0, true)
    } else if edges.is_complete() {
        (efficient_clearing(instance), SolveMethod::ClosedForm, 0, true)
    } else {
        let start = SupplyProfile::zeros(instance.n(), instance.m());
        let (q, it, ok) = block_ascent(instance, edges, &start, 0.5, opts)?;
        (q, SolveMethod::Iterative, it, ok)
    };
    let welfare = social_welfare(&q, &support)?;
    Ok(EfficientOutcome {
        q,
        welfare,
        method,
        iterations,
        converged,
    })
}

fn efficient_linear(instance: &Instance, slopes: &[f64]) -> SupplyProfile {
    let mut q = SupplyProfile::zeros(instance.n(), instance.m());
    for (j, mk) in instance.markets.iter().enumerate() {
        let cheapest = instance
            .edges
            .firms_in_market(j)
            .into_iter()
            .min_by(|&x, &y| slopes[x].total_cmp(&slopes[y]).then(x.cmp(&y)));
        if let Some(i) = cheapest {
            let d = ((mk.alpha - slopes[i]) / mk.beta).max(0.0);
            q.set(i, j, d);
        }
    }
    q
}

/// Efficient profile on the complete edge set via the clearing price.
fn efficient_clearing(instance: &Instance) -> SupplyProfile {
    let demand_at = |nu: f64| -> f64 {
        instance
            .markets
            .iter()
            .map(|mk| ((mk.alpha - nu) / mk.beta).max(0.0))
            .sum()
    };
    let convex_supply = |i: usize, nu: f64| -> f64 {
        let (c, d) = instance.firms[i].coefficients();
        if d > 0.0 {
            ((nu - c) / (2.0 * d)).max(0.0)
        } else {
            0.0
        }
    };
    let excess = |nu: f64| -> f64 {
        demand_at(nu) - (0..instance.n()).map(|i| convex_supply(i, nu)).sum::<f64>()
    };
    let linear_floor = instance
        .firms
        .iter()
        .enumerate()
        .filter_map(|(i, f)| f.linear_slope().map(|c| (i, c)))
        .min_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));

    let mut knots: Vec<f64> = instance.markets.iter().map(|mk| mk.alpha).collect();
    knots.extend(instance.firms.iter().map(|f| f.coefficients().0));
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let top = *knots.last().expect("instance has markets");

    // excess is nonincreasing and piecewise linear between knots
    let mut nu = top;
    let mut prev = knots[0];
    let mut prev_val = excess(prev);
    if prev_val <= 0.0 {
        nu = prev;
    } else {
        for &k in &knots[1..] {
            let val = excess(k);
            if val <= 0.0 {
                nu = if prev_val == val {
                    k
                } else {
                    prev + (k - prev) * prev_val / (prev_val - val)
                };
                break;
            }
            prev = k;
            prev_val = val;
        }
    }

    let mut outputs: Vec<f64> = (0..instance.n()).map(|i| convex_supply(i, nu)).collect();
    if let Some((i, c)) = linear_floor {
        if c < nu {
            nu = c;
            for (k, s) in outputs.iter_mut().enumerate() {
                *s = convex_supply(k, nu);
            }
            outputs[i] = excess(nu).max(0.0);
        }
    }
    let demands: Vec<f64> = instance
        .markets
        .iter()
        .map(|mk| ((mk.alpha - nu) / mk.beta).max(0.0))
        .collect();
    transport(&outputs, &demands)
}

/// Ships firm outputs into market demands in index order (any split is
/// welfare-equivalent on the complete edge set).
fn transport(outputs: &[f64], demands: &[f64]) -> SupplyProfile {
    let n = outputs.len();
    let m = demands.len();
    let mut q = SupplyProfile::zeros(n, m);
    let mut left_s = outputs.to_vec();
    let mut left_d = demands.to_vec();
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        let x = left_s[i].min(left_d[j]);
        if x > 0.0 {
            q.set(i, j, q.get(i, j) + x);
        }
        left_s[i] -= x;
        left_d[j] -= x;
        if left_s[i] <= left_d[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    // rounding crumbs land on the last market a firm touched
    if i < n || j < m {
        for (k, rest) in left_s.iter().enumerate() {
            if *rest > 0.0 {
                let jj = m - 1;
                q.set(k, jj, q.get(k, jj) + rest);
            }
        }
    }
    q
}

#[derive(Debug, Clone, Serialize)]
pub struct BestResponseReport {
    /// Profit gain each firm could obtain by deviating.
    pub improvements: Vec<f64>,
    pub max_improvement: f64,
    pub certified: bool,
}

/// Certifies `q` as a Nash equilibrium up to profit gain `eps`.
pub fn best_response_check(
    q: &SupplyProfile,
    instance: &Instance,
    eps: f64,
) -> Result<BestResponseReport, EquilibriumError> {
    q.check_against(instance)?;
    let base = firm_profits(q, instance);
    let mut improvements = Vec::with_capacity(instance.n());
    for i in 0..instance.n() {
        let row = best_response(q, instance, i);
        let mut dev = q.clone();
        for (j, &x) in row.iter().enumerate() {
            dev.set(i, j, x);
        }
        let gain = firm_profits(&dev, instance)[i] - base[i];
        improvements.push(gain.max(0.0));
    }
    let max_improvement = improvements.iter().copied().fold(0.0, f64::max);
    Ok(BestResponseReport {
        improvements,
        max_improvement,
        certified: max_improvement <= eps,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MarketPreservation {
    pub equilibrium_demand: f64,
    pub efficient_demand: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PreservationReport {
    pub markets: Vec<MarketPreservation>,
    /// Some market keeps less than half of its efficient demand.
    pub violated: bool,
}

/// Equilibrium versus efficient demand per market under open access.
pub fn production_preservation(
    instance: &Instance,
    opts: &SolverOptions,
) -> Result<PreservationReport, EquilibriumError> {
    if !instance.edges.is_complete() {
        return Err(EquilibriumError::RequiresCompleteEdges);
    }
    let ne = nash(instance, opts)?;
    let eff = efficient_welfare(instance, &instance.edges, opts)?;
    let eff_demand = eff.q.market_totals();
    let markets: Vec<MarketPreservation> = ne
        .demand
        .iter()
        .zip(&eff_demand)
        .map(|(&dn, &de)| MarketPreservation {
            equilibrium_demand: dn,
            efficient_demand: de,
            ratio: if de == 0.0 && dn.abs() <= 1e-15 {
                1.0
            } else {
                dn / de
            },
        })
        .collect();
    let violated = markets.iter().any(|mp| mp.ratio < 0.5 - 1e-9);
    Ok(PreservationReport { markets, violated })
}
