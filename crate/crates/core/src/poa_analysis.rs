//! Price of anarchy under open access: the ratio itself, the closed-form upper
//! bounds for symmetric, asymmetric and bounded-asymmetry linear cost
//! profiles, the worst-case instance that makes the asymmetric bound tight,
//! and the consumer search-cost variant.

use std::fmt;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::equilibrium::{self, EquilibriumError, SolverOptions};
use crate::model::{CostFunction, EdgeSet, Instance, MarketParams};

#[derive(Debug, Error)]
pub enum PoaError {
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

fn precondition<T>(ok: bool, msg: impl FnOnce() -> String) -> Result<(), PoaError> {
    if ok {
        Ok(())
    } else {
        Err(PoaError::Precondition(msg()))
    }
}

/// A welfare ratio; unbounded ratios are carried explicitly rather than as
/// floating-point overflow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ratio {
    Finite(f64),
    Infinite,
}

/// Welfare values this close to zero count as zero when forming a ratio.
const ZERO_WELFARE: f64 = 1e-14;

impl Ratio {
    /// `num / den` with `0/0 = 1` and `positive/0 = inf`.
    pub fn of(num: f64, den: f64) -> Ratio {
        if num.abs() <= ZERO_WELFARE && den.abs() <= ZERO_WELFARE {
            Ratio::Finite(1.0)
        } else if den <= ZERO_WELFARE {
            Ratio::Infinite
        } else {
            Ratio::Finite(num / den)
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Ratio::Finite(x) => x,
            Ratio::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Ratio::Infinite)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ratio::Finite(x) => write!(f, "{x}"),
            Ratio::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Ratio::Finite(x) => s.serialize_f64(*x),
            Ratio::Infinite => s.serialize_str("inf"),
        }
    }
}

/// Whether the reported bound caps this instance's ratio or is a worst-case
/// lower bound over a family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Upper,
    Lower,
    None,
}

#[derive(Debug, Clone, Serialize)]
pub struct PoAReport {
    pub sw_efficient: f64,
    pub sw_equilibrium: f64,
    pub rho: Ratio,
    pub bound_name: String,
    pub bound_value: Ratio,
    pub bound_kind: BoundKind,
    /// `Some(rho <= bound + 1e-9)` for upper bounds, `None` otherwise.
    pub bound_satisfied: Option<bool>,
}

impl PoAReport {
    pub fn new(sw_efficient: f64, sw_equilibrium: f64) -> Self {
        Self {
            sw_efficient,
            sw_equilibrium,
            rho: Ratio::of(sw_efficient, sw_equilibrium),
            bound_name: "none".to_string(),
            bound_value: Ratio::Infinite,
            bound_kind: BoundKind::None,
            bound_satisfied: None,
        }
    }

    pub fn with_upper_bound(mut self, name: &str, value: f64) -> Self {
        self.bound_name = name.to_string();
        self.bound_value = Ratio::Finite(value);
        self.bound_kind = BoundKind::Upper;
        self.bound_satisfied = Some(self.rho.value() <= value + 1e-9);
        self
    }

    pub fn with_lower_bound(mut self, name: &str, value: Ratio) -> Self {
        self.bound_name = name.to_string();
        self.bound_value = value;
        self.bound_kind = BoundKind::Lower;
        self.bound_satisfied = None;
        self
    }
}

/// Efficient welfare on the complete edge set.
pub fn efficient_open_access(instance: &Instance, opts: &SolverOptions) -> Result<f64, PoaError> {
    let complete = EdgeSet::complete(instance.n(), instance.m());
    let eff = equilibrium::efficient_welfare(instance, &complete, opts)?;
    if !eff.converged {
        return Err(EquilibriumError::NotConverged {
            iterations: eff.iterations,
        }
        .into());
    }
    Ok(eff.social_welfare())
}

/// Equilibrium welfare on `instance.edges` measured against the efficient
/// welfare of the complete edge set, with the sharpest applicable open-access
/// bound attached when the edge set is complete.
pub fn price_of_anarchy(instance: &Instance, opts: &SolverOptions) -> Result<PoAReport, PoaError> {
    let sw_eff = efficient_open_access(instance, opts)?;
    let ne = equilibrium::nash(instance, opts)?.require_converged()?;
    let report = PoAReport::new(sw_eff, ne.social_welfare());
    if !instance.edges.is_complete() {
        return Ok(report);
    }
    let n = instance.n();
    let report = match instance.linear_slopes() {
        Some(slopes) if slopes.iter().all(|&c| c == slopes[0]) => {
            report.with_upper_bound("open_sym", bound_open_sym(n))
        }
        Some(_) => match AsymmetryParams::from_instance(instance)
            .and_then(|p| bound_open_linear(instance, &p))
        {
            Ok(b) => report.with_upper_bound("open_linear", b),
            Err(_) => report.with_upper_bound("open_asym", bound_open_asym(n)),
        },
        None => report.with_upper_bound("open_asym", bound_open_asym(n)),
    };
    Ok(report)
}

/// Worst case over all admissible cost profiles with `n` firms.
pub fn bound_open_asym(n: usize) -> f64 {
    let n = n as f64;
    1.5 * (1.0 - 1.0 / (3.0 * n + 6.0))
}

/// Worst case over symmetric cost profiles with `n` firms.
pub fn bound_open_sym(n: usize) -> f64 {
    let k = n as f64 + 1.0;
    1.0 + 1.0 / (k * k - 1.0)
}

/// Asymmetry correction; zero below the threshold `(2n+3)/(3n+5)`.
pub fn delta(gamma: f64, n: usize) -> f64 {
    let nf = n as f64;
    let threshold = (2.0 * nf + 3.0) / (3.0 * nf + 5.0);
    if gamma >= threshold {
        let gap = gamma - threshold;
        (nf - 1.0) * (3.0 * nf + 5.0) / ((nf + 1.0) * (nf + 1.0)) * gap * gap
    } else {
        0.0
    }
}

/// Marginal-cost range and the per-market normalized asymmetry
/// `gamma_j = 1 - (c_max - c_min) / (alpha_j - c_min)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymmetryParams {
    pub c_min: f64,
    pub c_max: f64,
    /// `None` for markets with `alpha_j <= c_min`, where the asymmetry is undefined.
    pub gamma: Vec<Option<f64>>,
}

impl AsymmetryParams {
    pub fn new(c_min: f64, c_max: f64, markets: &[MarketParams]) -> Result<Self, PoaError> {
        precondition::<()>(c_min <= c_max, || {
            format!("c_min {c_min} exceeds c_max {c_max}")
        })?;
        let gamma = markets
            .iter()
            .map(|mk| {
                (c_min < mk.alpha).then(|| 1.0 - (c_max - c_min) / (mk.alpha - c_min))
            })
            .collect();
        Ok(Self {
            c_min,
            c_max,
            gamma,
        })
    }

    /// Uses the actual slope range of a linear instance.
    pub fn from_instance(instance: &Instance) -> Result<Self, PoaError> {
        let slopes = linear_slopes(instance)?;
        let c_min = slopes.iter().copied().fold(f64::INFINITY, f64::min);
        let c_max = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::new(c_min, c_max, &instance.markets)
    }
}

fn linear_slopes(instance: &Instance) -> Result<Vec<f64>, PoaError> {
    instance
        .linear_slopes()
        .ok_or_else(|| PoaError::Precondition("all costs must be linear".to_string()))
}

fn check_linear_range(instance: &Instance, params: &AsymmetryParams) -> Result<(), PoaError> {
    let slopes = linear_slopes(instance)?;
    let slack = 1e-12 * (1.0 + params.c_max.abs());
    for (i, &c) in slopes.iter().enumerate() {
        precondition::<()>(c >= params.c_min - slack && c <= params.c_max + slack, || {
            format!(
                "firm {} slope {c} outside [{}, {}]",
                i + 1,
                params.c_min,
                params.c_max
            )
        })?;
    }
    let alpha_max = instance
        .markets
        .iter()
        .map(|mk| mk.alpha)
        .fold(f64::NEG_INFINITY, f64::max);
    precondition::<()>(params.c_min < alpha_max, || {
        format!("c_min {} must be below max alpha {alpha_max}", params.c_min)
    })?;
    precondition::<()>(params.gamma.len() == instance.m(), || {
        "asymmetry parameters do not match the market count".to_string()
    })
}

/// `sum_j w_j / sum_j f_j w_j` with `w_j = ((alpha_j - c_min)^+)^2 / beta_j`.
fn weighted_bound(
    instance: &Instance,
    params: &AsymmetryParams,
    factor: impl Fn(f64) -> f64,
) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (mk, gamma) in instance.markets.iter().zip(&params.gamma) {
        let margin = (mk.alpha - params.c_min).max(0.0);
        let w = margin * margin / mk.beta;
        if let Some(g) = gamma {
            num += w;
            den += factor(*g) * w;
        }
    }
    num / den
}

/// Open-access bound for linear costs with slopes in `[c_min, c_max]`.
pub fn bound_open_linear(instance: &Instance, params: &AsymmetryParams) -> Result<f64, PoaError> {
    check_linear_range(instance, params)?;
    let n = instance.n();
    let nf = n as f64;
    let base = (2.0 * nf + 4.0) / (3.0 * nf + 5.0);
    Ok(weighted_bound(instance, params, |g| base + delta(g, n)))
}

/// Bound under the welfare-optimal discriminatory edge set; never above 4/3.
pub fn bound_discriminatory(
    instance: &Instance,
    params: &AsymmetryParams,
) -> Result<f64, PoaError> {
    check_linear_range(instance, params)?;
    let n = instance.n();
    Ok(weighted_bound(instance, params, |g| {
        (1..=n)
            .map(|k| {
                let kf = k as f64;
                (2.0 * kf + 4.0) / (3.0 * kf + 5.0) + delta(g, k)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }))
}

/// Replaces every cost by the linear function whose slope is the original
/// right-derivative at the firm's equilibrium output. The equilibrium is
/// unchanged and the price of anarchy can only grow.
pub fn worst_case_linearize(instance: &Instance, opts: &SolverOptions) -> Result<Instance, PoaError> {
    let ne = equilibrium::nash(instance, opts)?.require_converged()?;
    let firms = instance
        .firms
        .iter()
        .enumerate()
        .map(|(i, cost)| match cost {
            CostFunction::Linear { .. } => *cost,
            CostFunction::Quadratic { .. } => {
                CostFunction::linear(cost.right_derivative(ne.q.firm_total(i)))
            }
        })
        .collect();
    Ok(Instance {
        firms,
        markets: instance.markets.clone(),
        edges: instance.edges.clone(),
    })
}

/// Marginal cost of the high-cost firms in the single-market worst case.
pub fn asym_worst_cost(n: usize, alpha: f64, c1: f64) -> f64 {
    let nf = n as f64;
    alpha - (2.0 * nf + 3.0) / (3.0 * nf + 5.0) * (alpha - c1)
}

/// Single market, one firm at cost `c1` and `n - 1` firms at
/// [`asym_worst_cost`]; its price of anarchy equals [`bound_open_asym`].
pub fn gen_asym_worst(n: usize, alpha: f64, beta: f64, c1: f64) -> Result<Instance, PoaError> {
    precondition::<()>(n >= 2, || format!("need at least 2 firms, got {n}"))?;
    precondition::<()>(alpha > 0.0 && beta > 0.0, || {
        "alpha and beta must be positive".to_string()
    })?;
    precondition::<()>(c1 >= 0.0 && c1 < alpha, || {
        format!("need 0 <= c1 < alpha, got c1 = {c1}, alpha = {alpha}")
    })?;
    let c_star = asym_worst_cost(n, alpha, c1);
    let mut firms = vec![CostFunction::linear(c1)];
    firms.extend(std::iter::repeat(CostFunction::linear(c_star)).take(n - 1));
    Ok(Instance::open_access(
        firms,
        vec![MarketParams::new(alpha, beta)],
    ))
}

/// Search-cost discount `f(n) = (n - 1) / (n + 1)`.
pub fn search_discount(n: usize) -> f64 {
    let nf = n as f64;
    (nf - 1.0) / (nf + 1.0)
}

/// Consumer search cost `theta f(n) CS`.
pub fn search_cost_penalty(theta: f64, n: usize, consumer_surplus: f64) -> f64 {
    theta * search_discount(n) * consumer_surplus
}

/// Open-access bound for symmetric linear costs when consumers bear search
/// costs of intensity `theta`.
pub fn search_cost_bound(n: usize, theta: f64) -> f64 {
    let nf = n as f64;
    let k = nf + 1.0;
    k * k / (nf * nf * (1.0 - theta * search_discount(n)) + 2.0 * nf)
}

/// Price of anarchy of a symmetric linear open-access instance when each
/// market's equilibrium welfare is reduced by its consumers' search cost.
pub fn search_cost_poa(instance: &Instance, theta: f64) -> Result<PoAReport, PoaError> {
    precondition::<()>((0.0..=1.0).contains(&theta), || {
        format!("theta must lie in [0, 1], got {theta}")
    })?;
    let slopes = linear_slopes(instance)?;
    precondition::<()>(slopes.iter().all(|&c| c == slopes[0]), || {
        "search-cost evaluation needs identical linear costs".to_string()
    })?;
    precondition::<()>(instance.edges.is_complete(), || {
        "search-cost evaluation needs open access".to_string()
    })?;
    let opts = SolverOptions::default();
    let ne = equilibrium::nash_linear(instance)?;
    let sw_eff = efficient_open_access(instance, &opts)?;
    let mut penalty = 0.0;
    for (j, mk) in instance.markets.iter().enumerate() {
        let active = (0..instance.n()).filter(|&i| ne.q.get(i, j) > 0.0).count();
        let cs = 0.5 * mk.beta * ne.demand[j] * ne.demand[j];
        penalty += search_cost_penalty(theta, active.max(1), cs);
    }
    Ok(PoAReport::new(sw_eff, ne.social_welfare() - penalty)
        .with_upper_bound("search_cost", search_cost_bound(instance.n(), theta)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn symmetric(n: usize, alpha: f64, beta: f64, c: f64) -> Instance {
        Instance::open_access(
            vec![CostFunction::linear(c); n],
            vec![MarketParams::new(alpha, beta)],
        )
    }

    fn opts() -> SolverOptions {
        SolverOptions {
            tol: 1e-13,
            max_iters: 100_000,
        }
    }

    #[test]
    fn ratio_conventions() {
        assert_eq!(Ratio::of(0.0, 0.0), Ratio::Finite(1.0));
        assert_eq!(Ratio::of(0.5, 0.0), Ratio::Infinite);
        assert_eq!(Ratio::of(1.0, 0.5), Ratio::Finite(2.0));
        assert_eq!(Ratio::Infinite.to_string(), "inf");
        assert_eq!(serde_json::to_string(&Ratio::Infinite).unwrap(), "\"inf\"");
    }

    #[test]
    fn monopoly_poa() {
        let r = price_of_anarchy(&symmetric(1, 2.0, 1.0, 0.0), &opts()).unwrap();
        assert!((r.rho.value() - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.bound_name, "open_sym");
        assert_eq!(r.bound_satisfied, Some(true));
    }

    #[test]
    fn dead_market_poa_is_one() {
        let r = price_of_anarchy(&symmetric(3, 1.0, 1.0, 1.5), &opts()).unwrap();
        assert_eq!(r.rho, Ratio::Finite(1.0));
    }

    #[test]
    fn asym_bound_values() {
        assert!((bound_open_asym(1) - 4.0 / 3.0).abs() < 1e-15);
        assert!((bound_open_asym(2) - 11.0 / 8.0).abs() < 1e-15);
        assert!((bound_open_asym(1_000_000_000) - 1.5).abs() < 1e-8);
        for n in 1..50 {
            assert!(bound_open_asym(n + 1) > bound_open_asym(n));
        }
    }

    #[test]
    fn sym_bound_values() {
        assert!((bound_open_sym(1) - 4.0 / 3.0).abs() < 1e-15);
        assert!((bound_open_sym(3) - 16.0 / 15.0).abs() < 1e-15);
        assert!((bound_open_sym(100_000) - 1.0).abs() < 1e-9);
        for n in 1..50 {
            assert!(bound_open_sym(n + 1) < bound_open_sym(n));
        }
    }

    #[test]
    fn delta_cases() {
        for n in 1..10 {
            let nf = n as f64;
            assert_eq!(delta((2.0 * nf + 3.0) / (3.0 * nf + 5.0), n), 0.0);
        }
        for g in [-3.0, 0.0, 0.5, 0.9, 1.0] {
            assert_eq!(delta(g, 1), 0.0);
        }
        let lhs = 8.0 / 11.0 + delta(1.0, 2);
        assert!((lhs - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn delta_monotone_in_gamma() {
        for n in 1..12 {
            let mut prev = delta(-1.0, n);
            for k in 0..=400 {
                let g = -1.0 + 2.0 * k as f64 / 400.0;
                let d = delta(g, n);
                assert!(d >= prev);
                prev = d;
            }
        }
    }

    #[test]
    fn linear_bound_reduces_to_sym_and_asym() {
        let inst = Instance::open_access(
            vec![CostFunction::linear(0.2); 4],
            vec![MarketParams::new(1.0, 1.0), MarketParams::new(2.0, 0.3)],
        );
        let p = AsymmetryParams::from_instance(&inst).unwrap();
        assert!(p.gamma.iter().all(|g| *g == Some(1.0)));
        let b = bound_open_linear(&inst, &p).unwrap();
        assert!((b - bound_open_sym(4)).abs() < 1e-12);

        // very asymmetric range drives every gamma below its threshold
        let wide = AsymmetryParams::new(0.0, 0.95, &inst.markets).unwrap();
        let inst2 = Instance::open_access(
            vec![CostFunction::linear(0.0), CostFunction::linear(0.95), CostFunction::linear(0.5), CostFunction::linear(0.1)],
            inst.markets.clone(),
        );
        assert!(wide.gamma.iter().all(|g| g.unwrap() < 11.0 / 17.0));
        let b = bound_open_linear(&inst2, &wide).unwrap();
        assert!((b - bound_open_asym(4)).abs() < 1e-12);
    }

    #[test]
    fn linear_bound_at_threshold() {
        let inst = gen_asym_worst(2, 1.0, 1.0, 0.0).unwrap();
        let p = AsymmetryParams::from_instance(&inst).unwrap();
        let b = bound_open_linear(&inst, &p).unwrap();
        assert!((b - 11.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn linear_bound_preconditions() {
        let quad = Instance::open_access(
            vec![CostFunction::quadratic(0.0, 1.0)],
            vec![MarketParams::new(1.0, 1.0)],
        );
        assert!(AsymmetryParams::from_instance(&quad).is_err());
        let dead = symmetric(2, 1.0, 1.0, 1.0);
        let p = AsymmetryParams::from_instance(&dead).unwrap();
        assert!(bound_open_linear(&dead, &p).is_err());
        let narrow = AsymmetryParams::new(0.0, 0.1, &dead.markets).unwrap();
        assert!(bound_open_linear(&symmetric(2, 1.0, 1.0, 0.5), &narrow).is_err());
    }

    #[test]
    fn discriminatory_bound_cases() {
        let mono = symmetric(1, 2.0, 1.0, 0.3);
        let p = AsymmetryParams::from_instance(&mono).unwrap();
        assert!((bound_discriminatory(&mono, &p).unwrap() - 4.0 / 3.0).abs() < 1e-15);

        let sym = symmetric(5, 2.0, 1.0, 0.3);
        let p = AsymmetryParams::from_instance(&sym).unwrap();
        assert!((bound_discriminatory(&sym, &p).unwrap() - bound_open_sym(5)).abs() < 1e-12);

        // two markets with different gammas: brute-force the inner maximum
        let inst = Instance::open_access(
            vec![CostFunction::linear(0.0), CostFunction::linear(0.1), CostFunction::linear(0.3)],
            vec![MarketParams::new(1.0, 1.0), MarketParams::new(3.0, 0.5)],
        );
        let p = AsymmetryParams::from_instance(&inst).unwrap();
        let got = bound_discriminatory(&inst, &p).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for (mk, g) in inst.markets.iter().zip(&p.gamma) {
            let w = mk.alpha * mk.alpha / mk.beta;
            let mut best = f64::NEG_INFINITY;
            for k in 1..=3usize {
                let kf = k as f64;
                let th = (2.0 * kf + 3.0) / (3.0 * kf + 5.0);
                let g = g.unwrap();
                let d = if g >= th {
                    (kf - 1.0) * (3.0 * kf + 5.0) / ((kf + 1.0) * (kf + 1.0)) * (g - th).powi(2)
                } else {
                    0.0
                };
                best = best.max((2.0 * kf + 4.0) / (3.0 * kf + 5.0) + d);
            }
            num += w;
            den += best * w;
        }
        assert!((got - num / den).abs() < 1e-14);
        assert!(got <= 4.0 / 3.0);
    }

    #[test]
    fn discriminatory_never_above_linear_or_four_thirds() {
        let markets = vec![MarketParams::new(1.0, 1.0), MarketParams::new(2.5, 0.7)];
        for n in 1..=6usize {
            for step in 0..=20 {
                let c_max = 0.99 * step as f64 / 20.0;
                let mut firms = vec![CostFunction::linear(0.0)];
                firms.extend((1..n).map(|_| CostFunction::linear(c_max)));
                let inst = Instance::open_access(firms, markets.clone());
                let p = AsymmetryParams::new(0.0, c_max, &markets).unwrap();
                let d = bound_discriminatory(&inst, &p).unwrap();
                let o = bound_open_linear(&inst, &p).unwrap();
                assert!(d <= o.min(4.0 / 3.0) + 1e-12);
            }
        }
    }

    #[test]
    fn linearize_fixed_point_and_quadratic() {
        let lin = symmetric(3, 2.0, 1.0, 0.4);
        assert_eq!(worst_case_linearize(&lin, &opts()).unwrap(), lin);

        let quad = Instance::open_access(
            vec![CostFunction::quadratic(0.0, 1.0)],
            vec![MarketParams::new(2.0, 1.0)],
        );
        let out = worst_case_linearize(&quad, &opts()).unwrap();
        assert!((out.firms[0].linear_slope().unwrap() - 1.0).abs() < 1e-10);
        let a = price_of_anarchy(&quad, &opts()).unwrap().rho.value();
        let b = price_of_anarchy(&out, &opts()).unwrap().rho.value();
        assert!(b >= a - 1e-9);
    }

    #[test]
    fn asym_worst_two_firms() {
        let inst = gen_asym_worst(2, 1.0, 1.0, 0.0).unwrap();
        assert!((inst.firms[1].linear_slope().unwrap() - 4.0 / 11.0).abs() < 1e-15);
        let ne = equilibrium::nash_linear(&inst).unwrap();
        assert!((ne.q.get(0, 0) - 5.0 / 11.0).abs() < 1e-15);
        assert!((ne.q.get(1, 0) - 1.0 / 11.0).abs() < 1e-15);
        assert!((ne.social_welfare() - 4.0 / 11.0).abs() < 1e-15);
        let r = price_of_anarchy(&inst, &opts()).unwrap();
        assert!((r.rho.value() - 11.0 / 8.0).abs() < 1e-12);
        assert!((r.sw_efficient - 0.5).abs() < 1e-15);
    }

    #[test]
    fn asym_worst_five_firms() {
        let r = price_of_anarchy(&gen_asym_worst(5, 2.0, 0.5, 0.3).unwrap(), &opts()).unwrap();
        assert!((r.rho.value() - 10.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn asym_worst_rejects_degenerate() {
        assert!(gen_asym_worst(2, 1.0, 1.0, 1.0).is_err());
        assert!(gen_asym_worst(1, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn search_cost_values() {
        for n in 1..=10 {
            assert!((search_cost_bound(n, 0.0) - bound_open_sym(n)).abs() < 1e-12);
        }
        for theta in [0.0, 0.3, 1.0] {
            assert!((search_cost_bound(1, theta) - 4.0 / 3.0).abs() < 1e-15);
        }
        assert!((search_cost_bound(2, 1.0) - 27.0 / 20.0).abs() < 1e-15);

        assert_eq!(search_cost_penalty(0.7, 1, 3.0), 0.0);
        assert!((search_cost_penalty(1.0, 1_000_000, 2.0) - 2.0).abs() < 1e-5);
        assert!((search_cost_penalty(0.5, 3, 2.0) - 0.5).abs() < 1e-15);
        for n in 1..100 {
            assert!(search_cost_penalty(1.0, n, 1.0) <= 1.0);
        }
    }

    #[test]
    fn search_cost_poa_is_tight() {
        for n in 1..=6 {
            for theta in [0.0, 0.5, 1.0] {
                let inst = Instance::open_access(
                    vec![CostFunction::linear(0.2); n],
                    vec![MarketParams::new(1.0, 1.0), MarketParams::new(2.0, 3.0)],
                );
                let r = search_cost_poa(&inst, theta).unwrap();
                assert!((r.rho.value() - search_cost_bound(n, theta)).abs() < 1e-12);
            }
        }
    }
}
