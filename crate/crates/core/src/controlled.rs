//! Controlled allocation: the platform receives the firms' aggregate supply,
//! splits it across markets to maximize `lambda * CS + (1 - lambda) * REV`,
//! and charges one budget-balanced price. Firms play a Stackelberg game
//! against that allocation rule.

use serde::Serialize;
use thiserror::Error;

use crate::equilibrium::SolverOptions;
use crate::model::{CostFunction, Instance, MarketParams, ModelError};
use crate::poa_analysis::{self, PoAReport, PoaError, Ratio};

#[derive(Debug, Error)]
pub enum ControlledError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Poa(#[from] PoaError),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("vertex enumeration with a price floor supports at most 12 markets, got {0}")]
    TooManyMarkets(usize),
}

fn precondition(ok: bool, msg: impl FnOnce() -> String) -> Result<(), ControlledError> {
    if ok {
        Ok(())
    } else {
        Err(ControlledError::Precondition(msg()))
    }
}

const MAX_VERTEX_MARKETS: usize = 12;
const TWO_THIRDS: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AllocationConfig {
    pub lambda: f64,
    /// Keep every market price nonnegative (`d_j <= alpha_j / beta_j`).
    pub price_floor: bool,
}

impl AllocationConfig {
    pub fn new(lambda: f64, price_floor: bool) -> Result<Self, ControlledError> {
        precondition((0.0..=1.0).contains(&lambda), || {
            format!("lambda must lie in [0, 1], got {lambda}")
        })?;
        Ok(Self {
            lambda,
            price_floor,
        })
    }

    fn regime(&self) -> Regime {
        if (self.lambda - TWO_THIRDS).abs() <= 1e-12 {
            Regime::Linear
        } else if self.lambda < TWO_THIRDS {
            Regime::Concave
        } else {
            Regime::Vertex
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Regime {
    Concave,
    Linear,
    Vertex,
}

/// Platform objective of a single market carrying demand `d`.
fn market_objective(mk: &MarketParams, d: f64, lambda: f64) -> f64 {
    lambda * 0.5 * mk.beta * d * d + (1.0 - lambda) * d * mk.price(d)
}

pub fn objective(markets: &[MarketParams], d: &[f64], lambda: f64) -> f64 {
    markets
        .iter()
        .zip(d)
        .map(|(mk, &x)| market_objective(mk, x, lambda))
        .sum()
}

/// Budget-balanced price `sum d_j p_j / sum d_j`; `max alpha` at zero demand.
pub fn uniform_price(markets: &[MarketParams], d: &[f64]) -> f64 {
    let total: f64 = d.iter().sum();
    if total <= 0.0 {
        return markets
            .iter()
            .map(|mk| mk.alpha)
            .fold(f64::NEG_INFINITY, f64::max);
    }
    let revenue: f64 = markets.iter().zip(d).map(|(mk, &x)| x * mk.price(x)).sum();
    revenue / total
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Allocation {
    pub d: Vec<f64>,
    pub active: Vec<usize>,
    /// Markets held at their zero-price cap (price floor only).
    pub saturated: Vec<usize>,
    /// Supply beyond total capacity that the platform discards (price floor only).
    pub disposed: f64,
    pub objective: f64,
    pub uniform_price: f64,
}

fn caps(markets: &[MarketParams], cfg: &AllocationConfig) -> Vec<f64> {
    markets
        .iter()
        .map(|mk| {
            if cfg.price_floor {
                (mk.alpha / mk.beta).max(0.0)
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

fn finish(markets: &[MarketParams], d: Vec<f64>, q: f64, cfg: &AllocationConfig) -> Allocation {
    let cap = caps(markets, cfg);
    let active = (0..d.len()).filter(|&j| d[j] > 0.0).collect();
    let saturated = (0..d.len())
        .filter(|&j| cfg.price_floor && cap[j] > 0.0 && d[j] >= cap[j])
        .collect();
    let total: f64 = d.iter().sum();
    Allocation {
        objective: objective(markets, &d, cfg.lambda),
        uniform_price: uniform_price(markets, &d),
        disposed: (q - total).max(0.0),
        d,
        active,
        saturated,
    }
}

/// Splits aggregate supply `q` across markets under `cfg`.
pub fn allocate(
    markets: &[MarketParams],
    q: f64,
    cfg: &AllocationConfig,
) -> Result<Allocation, ControlledError> {
    precondition(q >= 0.0 && q.is_finite(), || {
        format!("aggregate quantity must be finite and nonnegative, got {q}")
    })?;
    let m = markets.len();
    if q == 0.0 || m == 0 {
        return Ok(finish(markets, vec![0.0; m], q, cfg));
    }
    let d = match cfg.regime() {
        Regime::Concave => water_fill(markets, q, cfg),
        Regime::Linear => linear_fill(markets, q, cfg),
        Regime::Vertex => vertex_fill(markets, q, cfg)?,
    };
    Ok(finish(markets, d, q, cfg))
}

/// Marginal-objective intercepts and slopes: `a_j - k_j d_j`.
fn marginals(markets: &[MarketParams], lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let a = markets.iter().map(|mk| (1.0 - lambda) * mk.alpha).collect();
    let k = markets
        .iter()
        .map(|mk| (2.0 - 3.0 * lambda) * mk.beta)
        .collect();
    (a, k)
}

fn demand_at(a: &[f64], k: &[f64], cap: &[f64], mu: f64) -> Vec<f64> {
    (0..a.len())
        .map(|j| ((a[j] - mu) / k[j]).clamp(0.0, cap[j]))
        .collect()
}

/// Multiplier values at which a market enters or saturates, descending.
fn water_events(a: &[f64], k: &[f64], cap: &[f64]) -> Vec<f64> {
    let mut ev: Vec<f64> = a.to_vec();
    for j in 0..a.len() {
        if cap[j].is_finite() {
            ev.push(a[j] - k[j] * cap[j]);
        }
    }
    ev.sort_by(|x, y| y.total_cmp(x));
    ev.dedup();
    ev
}

fn water_fill(markets: &[MarketParams], q: f64, cfg: &AllocationConfig) -> Vec<f64> {
    let (a, k) = marginals(markets, cfg.lambda);
    let cap = caps(markets, cfg);
    let capacity: f64 = cap.iter().sum();
    if q >= capacity {
        return cap;
    }
    let events = water_events(&a, &k, &cap);
    let total = |mu: f64| demand_at(&a, &k, &cap, mu).iter().sum::<f64>();
    // bracket [lo, hi] in mu with total(hi) <= q <= total(lo)
    let mut hi = events[0];
    let mut lo = None;
    for &e in &events[1..] {
        if total(e) >= q {
            lo = Some(e);
            break;
        }
        hi = e;
    }
    let lo = lo.unwrap_or(hi - 1.0);
    let mid = 0.5 * (lo + hi);
    let probe = demand_at(&a, &k, &cap, mid);
    let mut fixed = 0.0;
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..a.len() {
        if probe[j] <= 0.0 {
            continue;
        }
        if probe[j] >= cap[j] {
            fixed += cap[j];
        } else {
            num += a[j] / k[j];
            den += 1.0 / k[j];
        }
    }
    let mu = (num + fixed - q) / den;
    let mut d = demand_at(&a, &k, &cap, mu);
    for j in 0..d.len() {
        if probe[j] <= 0.0 {
            d[j] = 0.0;
        } else if probe[j] >= cap[j] {
            d[j] = cap[j];
        }
    }
    d
}

fn argmax_alpha(markets: &[MarketParams]) -> usize {
    let mut best = 0;
    for (j, mk) in markets.iter().enumerate() {
        if mk.alpha > markets[best].alpha {
            best = j;
        }
    }
    best
}

fn linear_fill(markets: &[MarketParams], q: f64, cfg: &AllocationConfig) -> Vec<f64> {
    let m = markets.len();
    let mut d = vec![0.0; m];
    if !cfg.price_floor {
        d[argmax_alpha(markets)] = q;
        return d;
    }
    let cap = caps(markets, cfg);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| markets[y].alpha.total_cmp(&markets[x].alpha));
    let mut left = q;
    for j in order {
        if left <= 0.0 {
            break;
        }
        d[j] = left.min(cap[j]);
        left -= d[j];
    }
    d
}

fn vertex_fill(
    markets: &[MarketParams],
    q: f64,
    cfg: &AllocationConfig,
) -> Result<Vec<f64>, ControlledError> {
    let m = markets.len();
    let lambda = cfg.lambda;
    if !cfg.price_floor {
        let mut best = 0;
        let mut best_obj = market_objective(&markets[0], q, lambda);
        for (j, mk) in markets.iter().enumerate().skip(1) {
            let v = market_objective(mk, q, lambda);
            if v > best_obj {
                best = j;
                best_obj = v;
            }
        }
        let mut d = vec![0.0; m];
        d[best] = q;
        return Ok(d);
    }
    if m > MAX_VERTEX_MARKETS {
        return Err(ControlledError::TooManyMarkets(m));
    }
    let cap = caps(markets, cfg);
    let capacity: f64 = cap.iter().sum();
    if q >= capacity {
        return Ok(cap);
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut d = vec![0.0; m];
    for free in 0..m {
        for mask in 0u32..(1 << m) {
            if mask & (1 << free) != 0 {
                continue;
            }
            let mut filled = 0.0;
            for j in 0..m {
                d[j] = if mask & (1 << j) != 0 { cap[j] } else { 0.0 };
                filled += d[j];
            }
            let rest = q - filled;
            if rest < 0.0 || rest > cap[free] {
                continue;
            }
            d[free] = rest;
            let v = objective(markets, &d, lambda);
            if best.as_ref().map_or(true, |(b, _)| v > *b) {
                best = Some((v, d.clone()));
            }
        }
    }
    Ok(best.map(|(_, d)| d).unwrap_or(cap))
}

/// One piece of the aggregate price curve. Demands are affine in `Q` on the
/// piece, so revenue is the quadratic `r0 + r1 Q + r2 Q^2` and the price is
/// revenue over `Q`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceSegment {
    pub start: f64,
    /// `None` for the final, unbounded piece.
    pub end: Option<f64>,
    /// Per-market `(intercept, slope)` of the demand on this piece.
    pub demand: Vec<(f64, f64)>,
    pub revenue: [f64; 3],
}

impl PriceSegment {
    pub fn contains(&self, q: f64) -> bool {
        q >= self.start && self.end.map_or(true, |e| q < e)
    }

    pub fn revenue_at(&self, q: f64) -> f64 {
        let [r0, r1, r2] = self.revenue;
        r0 + q * (r1 + q * r2)
    }

    pub fn price_at(&self, q: f64) -> f64 {
        let [r0, r1, r2] = self.revenue;
        if q <= 0.0 {
            return r1;
        }
        r0 / q + r1 + r2 * q
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceCurve {
    pub segments: Vec<PriceSegment>,
    /// Zero, every quantity where the allocation pattern changes, and `q_max`.
    pub breakpoints: Vec<f64>,
    /// Largest quantity worth considering: beyond it the price is nonpositive
    /// or no further supply is absorbed.
    pub q_max: f64,
}

impl PriceCurve {
    pub fn segment_index(&self, q: f64) -> usize {
        self.segments
            .iter()
            .rposition(|s| q >= s.start)
            .unwrap_or(0)
    }

    pub fn price(&self, q: f64) -> f64 {
        self.segments[self.segment_index(q.max(0.0))].price_at(q.max(0.0))
    }

    pub fn revenue(&self, q: f64) -> f64 {
        self.segments[self.segment_index(q.max(0.0))].revenue_at(q.max(0.0))
    }

    /// `(Q, p)` at each breakpoint.
    pub fn nodes(&self) -> Vec<(f64, f64)> {
        self.breakpoints.iter().map(|&b| (b, self.price(b))).collect()
    }
}

/// Aggregate price as a function of total supply under `cfg`.
pub fn price_curve(
    markets: &[MarketParams],
    cfg: &AllocationConfig,
) -> Result<PriceCurve, ControlledError> {
    precondition(!markets.is_empty(), || "no markets".to_string())?;
    if cfg.price_floor && cfg.regime() == Regime::Vertex && markets.len() > MAX_VERTEX_MARKETS {
        return Err(ControlledError::TooManyMarkets(markets.len()));
    }
    let mut changes = pattern_changes(markets, cfg)?;
    changes.retain(|&b| b > 0.0 && b.is_finite());
    changes.sort_by(f64::total_cmp);
    changes.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * (1.0 + y.abs()));

    let mut starts = vec![0.0];
    starts.extend(changes.iter().copied());
    let mut segments = Vec::with_capacity(starts.len());
    for (idx, &start) in starts.iter().enumerate() {
        let end = starts.get(idx + 1).copied();
        segments.push(fit_segment(markets, cfg, start, end)?);
    }

    let last = segments.last().expect("at least one segment");
    let last_change = changes.last().copied().unwrap_or(0.0);
    let q_max = last_change.max(largest_root(last.revenue).unwrap_or(0.0));
    let mut breakpoints = starts;
    if q_max > last_change * (1.0 + 1e-12) {
        breakpoints.push(q_max);
    }
    Ok(PriceCurve {
        segments,
        breakpoints,
        q_max,
    })
}

fn largest_root([c, b, a]: [f64; 3]) -> Option<f64> {
    if a == 0.0 {
        return (b != 0.0).then(|| -c / b);
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    Some(((-b + s) / (2.0 * a)).max((-b - s) / (2.0 * a)))
}

fn fit_segment(
    markets: &[MarketParams],
    cfg: &AllocationConfig,
    start: f64,
    end: Option<f64>,
) -> Result<PriceSegment, ControlledError> {
    let (q1, q2) = match end {
        Some(e) => (start + (e - start) / 3.0, start + 2.0 * (e - start) / 3.0),
        None => {
            let step = start.max(1.0);
            (start + step, start + 2.0 * step)
        }
    };
    let d1 = allocate(markets, q1, cfg)?.d;
    let d2 = allocate(markets, q2, cfg)?.d;
    let mut demand = Vec::with_capacity(markets.len());
    let mut r = [0.0; 3];
    for (j, mk) in markets.iter().enumerate() {
        let (u, v) = if start == 0.0 {
            (0.0, d1[j] / q1)
        } else {
            let v = (d2[j] - d1[j]) / (q2 - q1);
            (d1[j] - v * q1, v)
        };
        r[0] += u * (mk.alpha - mk.beta * u);
        r[1] += v * mk.alpha - 2.0 * mk.beta * u * v;
        r[2] -= mk.beta * v * v;
        demand.push((u, v));
    }
    Ok(PriceSegment {
        start,
        end,
        demand,
        revenue: r,
    })
}

fn pattern_changes(
    markets: &[MarketParams],
    cfg: &AllocationConfig,
) -> Result<Vec<f64>, ControlledError> {
    let cap = caps(markets, cfg);
    let capacity: f64 = cap.iter().sum();
    let mut out = Vec::new();
    match cfg.regime() {
        Regime::Concave => {
            let (a, k) = marginals(markets, cfg.lambda);
            for e in water_events(&a, &k, &cap) {
                out.push(demand_at(&a, &k, &cap, e).iter().sum());
            }
        }
        Regime::Linear => {
            if cfg.price_floor {
                let mut order: Vec<usize> = (0..markets.len()).collect();
                order.sort_by(|&x, &y| markets[y].alpha.total_cmp(&markets[x].alpha));
                let mut acc = 0.0;
                for j in order {
                    acc += cap[j];
                    out.push(acc);
                }
            }
        }
        Regime::Vertex if !cfg.price_floor => {
            let lambda = cfg.lambda;
            let lin: Vec<f64> = markets.iter().map(|mk| (1.0 - lambda) * mk.alpha).collect();
            let quad: Vec<f64> = markets
                .iter()
                .map(|mk| 0.5 * (3.0 * lambda - 2.0) * mk.beta)
                .collect();
            let mut cands = Vec::new();
            for i in 0..markets.len() {
                for j in i + 1..markets.len() {
                    if quad[i] != quad[j] {
                        let x = (lin[j] - lin[i]) / (quad[i] - quad[j]);
                        if x > 0.0 && x.is_finite() {
                            cands.push(x);
                        }
                    }
                }
            }
            cands.sort_by(f64::total_cmp);
            let winner = |q: f64| -> Result<usize, ControlledError> {
                let d = allocate(markets, q, cfg)?.d;
                Ok(d.iter().position(|&x| x > 0.0).unwrap_or(0))
            };
            let mut prev = winner(cands.first().map_or(1.0, |c| 0.5 * c))?;
            for (idx, &c) in cands.iter().enumerate() {
                let next = cands.get(idx + 1).map_or(2.0 * c + 1.0, |n| 0.5 * (c + n));
                let w = winner(next)?;
                if w != prev {
                    out.push(c);
                    prev = w;
                }
            }
        }
        Regime::Vertex => {
            out = scan_patterns(markets, cfg, capacity)?;
            out.push(capacity);
        }
    }
    if cfg.price_floor && capacity.is_finite() {
        out.push(capacity);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Zero,
    Interior,
    Full,
}

fn pattern(
    markets: &[MarketParams],
    q: f64,
    cfg: &AllocationConfig,
    cap: &[f64],
) -> Result<Vec<Status>, ControlledError> {
    let d = allocate(markets, q, cfg)?.d;
    Ok(d.iter()
        .zip(cap)
        .map(|(&x, &c)| {
            if x <= 0.0 {
                Status::Zero
            } else if x >= c {
                Status::Full
            } else {
                Status::Interior
            }
        })
        .collect())
}

/// Locates pattern changes on `(0, capacity)`. Vertex feasibility changes
/// only at subset sums of the caps, so the scan grids each gap between
/// consecutive sums and refines every change by bisection.
fn scan_patterns(
    markets: &[MarketParams],
    cfg: &AllocationConfig,
    capacity: f64,
) -> Result<Vec<f64>, ControlledError> {
    let cap = caps(markets, cfg);
    let m = markets.len();
    let mut sums: Vec<f64> = (0u32..(1 << m))
        .map(|mask| (0..m).filter(|&j| mask & (1 << j) != 0).map(|j| cap[j]).sum())
        .collect();
    sums.sort_by(f64::total_cmp);
    sums.dedup();
    let per_gap = (4096 / sums.len()).max(8);
    let mut points = Vec::new();
    for w in sums.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        for k in 1..per_gap {
            points.push(lo + (hi - lo) * k as f64 / per_gap as f64);
        }
    }
    let mut out = Vec::new();
    let mut prev_q = points[0];
    let mut prev = pattern(markets, prev_q, cfg, &cap)?;
    for &q in &points[1..] {
        let cur = pattern(markets, q, cfg, &cap)?;
        if cur != prev {
            let (mut lo, mut hi) = (prev_q, q);
            for _ in 0..200 {
                if hi - lo <= 4.0 * f64::EPSILON * hi.max(capacity * 1e-12) {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                if pattern(markets, mid, cfg, &cap)? == prev {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            out.push(0.5 * (lo + hi));
        }
        prev = cur;
        prev_q = q;
    }
    Ok(out)
}

/// `s_i p(A(sum s)) - C_i(s_i)`, evaluated through the allocation itself.
pub fn firm_payoff(
    firm: usize,
    s: &[f64],
    instance: &Instance,
    cfg: &AllocationConfig,
) -> Result<f64, ControlledError> {
    precondition(s.len() == instance.n() && firm < s.len(), || {
        format!("need {} quantities and a valid firm index", instance.n())
    })?;
    precondition(s.iter().all(|&x| x >= 0.0), || "quantities must be nonnegative".to_string())?;
    if s[firm] == 0.0 {
        return Ok(0.0);
    }
    let alloc = allocate(&instance.markets, s.iter().sum(), cfg)?;
    Ok(s[firm] * alloc.uniform_price - instance.firms[firm].eval(s[firm]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeKind {
    Exact,
    GridVerified,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StackelbergOutcome {
    pub s: Vec<f64>,
    pub total_q: f64,
    pub d: Vec<f64>,
    pub uniform_price: f64,
    /// Consumer utility of the allocation minus every firm's production cost.
    pub sw: f64,
    pub profits: Vec<f64>,
    pub verified: bool,
    pub kind: OutcomeKind,
}

fn outcome(
    s: Vec<f64>,
    instance: &Instance,
    cfg: &AllocationConfig,
    verified: bool,
    kind: OutcomeKind,
) -> Result<StackelbergOutcome, ControlledError> {
    let total_q: f64 = s.iter().sum();
    let alloc = allocate(&instance.markets, total_q, cfg)?;
    let utility: f64 = instance
        .markets
        .iter()
        .zip(&alloc.d)
        .map(|(mk, &x)| mk.utility(x))
        .sum();
    let cost: f64 = instance.firms.iter().zip(&s).map(|(c, &x)| c.eval(x)).sum();
    let profits = (0..s.len())
        .map(|i| {
            if s[i] == 0.0 {
                0.0
            } else {
                s[i] * alloc.uniform_price - instance.firms[i].eval(s[i])
            }
        })
        .collect();
    Ok(StackelbergOutcome {
        total_q,
        uniform_price: alloc.uniform_price,
        sw: utility - cost,
        profits,
        verified,
        kind,
        d: alloc.d,
        s,
    })
}

/// Relative tolerance under which two profits count as tied.
const PROFIT_TIE: f64 = 1e-9;

/// Every global profit maximizer of a single-firm instance, from the
/// piecewise-quadratic revenue. Empty only if profit is unbounded.
pub fn stackelberg_single_firm(
    instance: &Instance,
    cfg: &AllocationConfig,
) -> Result<Vec<StackelbergOutcome>, ControlledError> {
    precondition(instance.n() == 1, || {
        format!("exact leader analysis needs one firm, got {}", instance.n())
    })?;
    let curve = price_curve(&instance.markets, cfg)?;
    let (c, dq) = instance.firms[0].coefficients();
    let mut cands = vec![0.0];
    for seg in &curve.segments {
        let [_, r1, r2] = seg.revenue;
        cands.push(seg.start);
        if let Some(e) = seg.end {
            cands.push(e);
        }
        let curv = r2 - dq;
        if curv < 0.0 {
            let x = (c - r1) / (2.0 * curv);
            if seg.contains(x) || seg.end == Some(x) {
                cands.push(x);
            }
        } else if seg.end.is_none() {
            let slope = r1 + 2.0 * curv * seg.start - c;
            if slope > 0.0 || (curv > 0.0) {
                return Ok(Vec::new());
            }
        }
    }
    cands.retain(|x| x.is_finite() && *x >= 0.0);
    cands.sort_by(f64::total_cmp);
    cands.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * (1.0 + y.abs()));

    let mut values = Vec::with_capacity(cands.len());
    for &x in &cands {
        values.push(firm_payoff(0, &[x], instance, cfg)?);
    }
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = PROFIT_TIE * best.abs().max(1e-300);
    let mut out: Vec<StackelbergOutcome> = Vec::new();
    for (&x, &v) in cands.iter().zip(&values) {
        if v >= best - tol.max(1e-15) {
            if out
                .last()
                .map_or(false, |o| (o.total_q - x).abs() <= 1e-9 * (1.0 + x))
            {
                continue;
            }
            out.push(outcome(vec![x], instance, cfg, true, OutcomeKind::Exact)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchOptions {
    /// Points in the unilateral-deviation grid.
    pub grid: usize,
    /// Largest profit gain a verified outcome may concede to a grid deviation.
    pub eps: f64,
    pub max_rounds: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            grid: 10_000,
            eps: 1e-7,
            max_rounds: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tie {
    Smallest,
    Largest,
}

fn curve_payoff(curve: &PriceCurve, cost: &CostFunction, own: f64, others: f64) -> f64 {
    if own <= 0.0 {
        return 0.0;
    }
    own * curve.price(own + others) - cost.eval(own)
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..200 {
        if b - a <= 1e-14 * (1.0 + b.abs()) {
            break;
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Best response of one firm against `others` total supply, searching each
/// smooth piece of its payoff on `[0, q_max]`.
fn curve_best_response(curve: &PriceCurve, cost: &CostFunction, others: f64, tie: Tie) -> f64 {
    let hi = curve.q_max;
    if hi <= 0.0 {
        return 0.0;
    }
    let mut cuts = vec![0.0, hi];
    for &b in &curve.breakpoints {
        let x = b - others;
        if x > 0.0 && x < hi {
            cuts.push(x);
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let f = |x: f64| curve_payoff(curve, cost, x, others);
    let mut cands: Vec<(f64, f64)> = vec![(0.0, 0.0), (hi, f(hi))];
    const PER_PIECE: usize = 64;
    for w in cuts.windows(2) {
        let (l, r) = (w[0], w[1]);
        let xs: Vec<f64> = (0..=PER_PIECE)
            .map(|k| l + (r - l) * k as f64 / PER_PIECE as f64)
            .collect();
        let vals: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        let mut k = 0;
        for idx in 1..vals.len() {
            if vals[idx] > vals[k] {
                k = idx;
            }
        }
        cands.push((l, vals[0]));
        cands.push((xs[k], vals[k]));
        let lo = xs[k.saturating_sub(1)];
        let up = xs[(k + 1).min(PER_PIECE)];
        cands.push(golden_max(f, lo, up));
    }
    let best = cands.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-10 * best.abs().max(1e-12);
    let near = cands.iter().filter(|c| c.1 >= best - tol).map(|c| c.0);
    match tie {
        Tie::Smallest => near.fold(f64::INFINITY, f64::min),
        Tie::Largest => near.fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Largest profit gain any firm finds on the deviation grid (plus the curve
/// breakpoints shifted by the rivals' supply).
pub fn max_deviation_gain(
    s: &[f64],
    instance: &Instance,
    cfg: &AllocationConfig,
    curve: &PriceCurve,
    grid: usize,
) -> Result<f64, ControlledError> {
    let hi = curve.q_max.max(s.iter().copied().fold(0.0, f64::max));
    let mut worst = f64::NEG_INFINITY;
    let mut trial = s.to_vec();
    for i in 0..s.len() {
        let base = firm_payoff(i, s, instance, cfg)?;
        let others: f64 = s.iter().sum::<f64>() - s[i];
        let mut points: Vec<f64> = (0..=grid).map(|k| hi * k as f64 / grid as f64).collect();
        points.extend(
            curve
                .breakpoints
                .iter()
                .map(|b| b - others)
                .filter(|&x| x > 0.0 && x <= hi),
        );
        for x in points {
            trial[i] = x;
            let gain = firm_payoff(i, &trial, instance, cfg)? - base;
            worst = worst.max(gain);
        }
        trial[i] = s[i];
    }
    Ok(worst)
}

/// Best-response search for leader equilibria from several deterministic
/// starts. Only grid-verified candidates are returned; an empty result means
/// none was found.
pub fn stackelberg_search(
    instance: &Instance,
    cfg: &AllocationConfig,
    opts: &SearchOptions,
) -> Result<Vec<StackelbergOutcome>, ControlledError> {
    let n = instance.n();
    precondition(n >= 1, || "need at least one firm".to_string())?;
    let curve = price_curve(&instance.markets, cfg)?;
    let hi = curve.q_max;
    let nf = n as f64;
    let mut starts = vec![vec![0.0; n]];
    for frac in [0.25, 0.5, 1.0] {
        starts.push(vec![hi * frac / nf; n]);
    }
    let mut found: Vec<Vec<f64>> = Vec::new();
    for start in &starts {
        for tie in [Tie::Smallest, Tie::Largest] {
            let mut s = start.clone();
            for _ in 0..opts.max_rounds {
                let mut change: f64 = 0.0;
                for i in 0..n {
                    let others: f64 = s.iter().sum::<f64>() - s[i];
                    let x = curve_best_response(&curve, &instance.firms[i], others.max(0.0), tie);
                    change = change.max((x - s[i]).abs());
                    s[i] = x;
                }
                if change <= 1e-12 * (1.0 + hi) {
                    break;
                }
            }
            if !found
                .iter()
                .any(|f| f.iter().zip(&s).all(|(a, b)| (a - b).abs() <= 1e-7 * (1.0 + hi)))
            {
                found.push(s);
            }
        }
    }
    let mut out = Vec::new();
    for s in found {
        if max_deviation_gain(&s, instance, cfg, &curve, opts.grid)? <= opts.eps {
            out.push(outcome(s, instance, cfg, true, OutcomeKind::GridVerified)?);
        }
    }
    out.sort_by(|a, b| a.total_q.total_cmp(&b.total_q));
    Ok(out)
}

/// Leader equilibria: exact for one firm, searched otherwise.
pub fn stackelberg(
    instance: &Instance,
    cfg: &AllocationConfig,
    opts: &SearchOptions,
) -> Result<Vec<StackelbergOutcome>, ControlledError> {
    if instance.n() == 1 {
        stackelberg_single_firm(instance, cfg)
    } else {
        stackelberg_search(instance, cfg, opts)
    }
}

/// Efficient open-access welfare against the worst verified leader
/// equilibrium; unbounded if none exists or it destroys all welfare.
pub fn poa_controlled(
    instance: &Instance,
    cfg: &AllocationConfig,
    opts: &SearchOptions,
) -> Result<PoAReport, ControlledError> {
    instance.ensure_valid()?;
    let sw_eff = poa_analysis::efficient_open_access(instance, &SolverOptions::default())?;
    let outcomes = stackelberg(instance, cfg, opts)?;
    let worst = outcomes
        .iter()
        .map(|o| o.sw)
        .fold(f64::INFINITY, f64::min);
    let mut report = PoAReport::new(sw_eff, if worst.is_finite() { worst } else { 0.0 });
    if !worst.is_finite() || (worst <= 0.0 && sw_eff > 0.0) {
        report.rho = Ratio::Infinite;
    }
    if instance.m() >= 2 {
        report = report.with_lower_bound("controlled", bound_controlled(cfg.lambda, instance.m())?);
    }
    Ok(report)
}

/// Worst-case ratio the lower-bound families attain for `lambda` and `m` markets.
pub fn bound_controlled(lambda: f64, m: usize) -> Result<Ratio, ControlledError> {
    precondition((0.0..=1.0).contains(&lambda), || {
        format!("lambda must lie in [0, 1], got {lambda}")
    })?;
    precondition(m >= 2, || format!("need at least 2 markets, got {m}"))?;
    if lambda < 0.5 {
        let inner = 1.0 + lambda * lambda / ((2.0 * lambda - 1.0) * (lambda - 1.0));
        Ok(Ratio::Finite(1.5f64.max(TWO_THIRDS * (1.0 + inner.sqrt()))))
    } else if lambda < TWO_THIRDS - 1e-12 {
        Ok(Ratio::Finite(8.0 * m as f64 / 9.0))
    } else {
        Ok(Ratio::Infinite)
    }
}

fn one_costless_firm(markets: Vec<MarketParams>) -> Instance {
    Instance::open_access(vec![CostFunction::linear(0.0)], markets)
}

/// One costless firm; market 1 is `(1 + epsilon, 1)`, market `j >= 2` has
/// intercept `theta^(j-1) / (1 + theta)` and slope `theta^(2j-2) / (1 - theta^2)`.
pub fn gen_theta_family(m: usize, theta: f64, epsilon: f64) -> Result<Instance, ControlledError> {
    precondition(m >= 2, || format!("need at least 2 markets, got {m}"))?;
    precondition(theta > 0.0 && theta <= 0.5, || {
        format!("theta must lie in (0, 1/2], got {theta}")
    })?;
    precondition(epsilon >= 0.0, || format!("epsilon must be nonnegative, got {epsilon}"))?;
    Ok(one_costless_firm(scaled_family(m, theta, 1.0, epsilon)))
}

fn scaled_family(m: usize, theta: f64, a: f64, epsilon: f64) -> Vec<MarketParams> {
    let mut markets = vec![MarketParams::new(1.0 + epsilon, 1.0)];
    for j in 2..=m {
        let k = (j - 1) as i32;
        markets.push(MarketParams::new(
            (a * theta).powi(k) / (1.0 + theta),
            theta.powi(2 * k) / (1.0 - theta * theta),
        ));
    }
    markets
}

/// Two firms with marginal cost `c`; a thin market priced `(c + eps) - (eps/2) d`
/// and a steeper one priced `(c - eps) - eps d`.
pub fn gen_cs_counterexample(c: f64, epsilon: f64) -> Result<Instance, ControlledError> {
    precondition(epsilon > 0.0 && c > epsilon, || {
        format!("need c > epsilon > 0, got c = {c}, epsilon = {epsilon}")
    })?;
    Ok(Instance::open_access(
        vec![CostFunction::linear(c); 2],
        vec![
            MarketParams::new(c + epsilon, 0.5 * epsilon),
            MarketParams::new(c - epsilon, epsilon),
        ],
    ))
}

/// The `epsilon` at which the revenue counterexample's firm stops spilling
/// into the flat market.
pub fn rev_epsilon_limit(alpha: f64, beta: f64) -> f64 {
    beta.powi(3) / (beta * beta + 4.0 * alpha * (alpha - beta))
}

/// One firm with cost `(alpha - beta) x`, markets `alpha - eps d` and
/// `alpha - beta d`. Meant for `price_floor = true`.
pub fn gen_rev_counterexample(alpha: f64, beta: f64, epsilon: f64) -> Result<Instance, ControlledError> {
    precondition(alpha > beta && beta > epsilon && epsilon > 0.0, || {
        format!("need alpha > beta > epsilon > 0, got {alpha}, {beta}, {epsilon}")
    })?;
    Ok(Instance::open_access(
        vec![CostFunction::linear(alpha - beta)],
        vec![MarketParams::new(alpha, epsilon), MarketParams::new(alpha, beta)],
    ))
}

/// Exact efficient welfare of [`gen_rev_counterexample`].
pub fn rev_efficient_welfare(beta: f64, epsilon: f64) -> f64 {
    beta * beta / (2.0 * epsilon) + 0.5 * beta
}

/// Largest admissible decay `a` for the `lambda < 1/2` family.
pub fn generalcap_a(lambda: f64) -> Result<f64, ControlledError> {
    precondition(lambda > 0.0 && lambda < 0.5, || {
        format!("lambda must lie in (0, 1/2), got {lambda}")
    })?;
    let l = lambda;
    let root = ((1.0 - l) * (1.0 - 2.0 * l) * (3.0 * l * l - 3.0 * l + 1.0)).sqrt();
    let a2 = ((2.0 - 3.0 * l).powi(2) + l * l - 4.0 * root) / (2.0 * l * l);
    Ok(a2.max(0.0).sqrt())
}

/// Like [`gen_theta_family`] with market `j` intercepts further scaled by
/// `a^(j-1)`, `a` from [`generalcap_a`]. Returns the instance and `a`.
pub fn gen_generalcap_family(
    m: usize,
    lambda: f64,
    theta: f64,
) -> Result<(Instance, f64), ControlledError> {
    precondition(m >= 2, || format!("need at least 2 markets, got {m}"))?;
    precondition(theta > 0.0 && theta < 0.5, || {
        format!("theta must lie in (0, 1/2), got {theta}")
    })?;
    let a = generalcap_a(lambda)?;
    Ok((one_costless_firm(scaled_family(m, theta, a, 0.0)), a))
}
