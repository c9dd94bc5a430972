//! Domain types for networked Cournot markets: firms with convex production
//! costs, markets with affine inverse demand, and the bipartite edge set that
//! says which firm may supply which market.
//!
//! Indices are 0-based in the API. The JSON document format uses 1-based
//! `[firm, market]` pairs for explicit edge lists.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid instance: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("supply profile is {got_n}x{got_m}, instance is {n}x{m}")]
    ProfileShape {
        n: usize,
        m: usize,
        got_n: usize,
        got_m: usize,
    },
    #[error("positive quantity on missing edge (firm {firm}, market {market})")]
    Sparsity { firm: usize, market: usize },
    #[error("supply profile has a negative or non-finite entry at (firm {firm}, market {market})")]
    BadQuantity { firm: usize, market: usize },
}

/// Affine inverse demand `p(d) = alpha - beta * d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub alpha: f64,
    pub beta: f64,
}

impl MarketParams {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    #[inline]
    pub fn price(&self, demand: f64) -> f64 {
        self.alpha - self.beta * demand
    }

    /// Area under the inverse demand curve on `[0, demand]`.
    #[inline]
    pub fn utility(&self, demand: f64) -> f64 {
        self.alpha * demand - 0.5 * self.beta * demand * demand
    }

    /// Quantity at which the price reaches zero.
    #[inline]
    pub fn saturation(&self) -> f64 {
        self.alpha / self.beta
    }
}

/// Production cost `C(s) = c s + d s^2` for `s > 0`, zero otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CostFunction {
    Linear { c: f64 },
    Quadratic { c: f64, d: f64 },
}

impl CostFunction {
    pub fn linear(c: f64) -> Self {
        CostFunction::Linear { c }
    }

    pub fn quadratic(c: f64, d: f64) -> Self {
        CostFunction::Quadratic { c, d }
    }

    /// Linear and quadratic coefficients `(c, d)`.
    #[inline]
    pub fn coefficients(&self) -> (f64, f64) {
        match *self {
            CostFunction::Linear { c } => (c, 0.0),
            CostFunction::Quadratic { c, d } => (c, d),
        }
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let (c, d) = self.coefficients();
        c * s + d * s * s
    }

    /// Right derivative on `[0, inf)`; the cost is flat below zero.
    #[inline]
    pub fn right_derivative(&self, s: f64) -> f64 {
        let (c, d) = self.coefficients();
        c + 2.0 * d * s.max(0.0)
    }

    /// Marginal cost when the function is affine on `(0, inf)`.
    pub fn linear_slope(&self) -> Option<f64> {
        match *self {
            CostFunction::Linear { c } => Some(c),
            CostFunction::Quadratic { c, d } if d == 0.0 => Some(c),
            CostFunction::Quadratic { .. } => None,
        }
    }
}

/// Firm-to-market incidence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSet {
    n: usize,
    m: usize,
    present: Vec<bool>,
}

impl EdgeSet {
    pub fn complete(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            present: vec![true; n * m],
        }
    }

    pub fn empty(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            present: vec![false; n * m],
        }
    }

    /// Builds an edge set from 0-based `(firm, market)` pairs. Out-of-range
    /// pairs are rejected.
    pub fn from_pairs(n: usize, m: usize, pairs: &[(usize, usize)]) -> Result<Self, ModelError> {
        let mut edges = Self::empty(n, m);
        let mut bad = Vec::new();
        for &(i, j) in pairs {
            if i >= n || j >= m {
                bad.push(format!(
                    "edge [{}, {}] out of range for {n} firms and {m} markets",
                    i + 1,
                    j + 1
                ));
            } else {
                edges.insert(i, j);
            }
        }
        if bad.is_empty() {
            Ok(edges)
        } else {
            Err(ModelError::Invalid(bad))
        }
    }

    #[inline]
    pub fn firms(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn markets(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn contains(&self, firm: usize, market: usize) -> bool {
        firm < self.n && market < self.m && self.present[firm * self.m + market]
    }

    pub fn insert(&mut self, firm: usize, market: usize) {
        self.present[firm * self.m + market] = true;
    }

    pub fn remove(&mut self, firm: usize, market: usize) {
        self.present[firm * self.m + market] = false;
    }

    pub fn is_complete(&self) -> bool {
        self.present.iter().all(|&p| p)
    }

    pub fn len(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// 0-based `(firm, market)` pairs in row-major order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        (0..self.n)
            .flat_map(|i| (0..self.m).map(move |j| (i, j)))
            .filter(|&(i, j)| self.contains(i, j))
            .collect()
    }

    pub fn firms_in_market(&self, market: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.contains(i, market)).collect()
    }

    pub fn markets_of_firm(&self, firm: usize) -> Vec<usize> {
        (0..self.m).filter(|&j| self.contains(firm, j)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub firms: Vec<CostFunction>,
    pub markets: Vec<MarketParams>,
    pub edges: EdgeSet,
}

/// Outcome of [`Instance::validate`]; empty means the instance is well formed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl Instance {
    /// Instance with the complete edge set.
    pub fn open_access(firms: Vec<CostFunction>, markets: Vec<MarketParams>) -> Self {
        let edges = EdgeSet::complete(firms.len(), markets.len());
        Self {
            firms,
            markets,
            edges,
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.firms.len()
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.markets.len()
    }

    pub fn with_edges(&self, edges: EdgeSet) -> Self {
        Self {
            firms: self.firms.clone(),
            markets: self.markets.clone(),
            edges,
        }
    }

    /// Linear slopes of every firm, or `None` if some cost is strictly convex.
    pub fn linear_slopes(&self) -> Option<Vec<f64>> {
        self.firms.iter().map(CostFunction::linear_slope).collect()
    }

    pub fn all_linear(&self) -> bool {
        self.firms.iter().all(|f| f.linear_slope().is_some())
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        if self.firms.is_empty() {
            violations.push("instance needs at least one firm".to_string());
        }
        if self.markets.is_empty() {
            violations.push("instance needs at least one market".to_string());
        }
        for (j, mk) in self.markets.iter().enumerate() {
            if !(mk.alpha.is_finite() && mk.alpha > 0.0) {
                violations.push(format!(
                    "market {}: alpha must be strictly positive",
                    j + 1
                ));
            }
            if !(mk.beta.is_finite() && mk.beta > 0.0) {
                violations.push(format!("market {}: beta must be strictly positive", j + 1));
            }
        }
        for (i, f) in self.firms.iter().enumerate() {
            let (c, d) = f.coefficients();
            if !(c.is_finite() && c >= 0.0) {
                violations.push(format!("firm {}: cost coefficient c must be >= 0", i + 1));
            }
            if !(d.is_finite() && d >= 0.0) {
                violations.push(format!("firm {}: cost coefficient d must be >= 0", i + 1));
            }
        }
        if self.edges.firms() != self.n() || self.edges.markets() != self.m() {
            violations.push(format!(
                "edge set dimension mismatch: edges are {}x{}, instance is {}x{}",
                self.edges.firms(),
                self.edges.markets(),
                self.n(),
                self.m()
            ));
        }
        ValidationReport { violations }
    }

    pub fn ensure_valid(&self) -> Result<(), ModelError> {
        let report = self.validate();
        if report.is_ok() {
            Ok(())
        } else {
            Err(ModelError::Invalid(report.violations))
        }
    }
}

/// `n x m` matrix of nonnegative quantities `q[i][j]` shipped by firm `i`
/// into market `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupplyProfile {
    n: usize,
    m: usize,
    q: Vec<f64>,
}

impl SupplyProfile {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            q: vec![0.0; n * m],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        let mut out = Self::zeros(n, m);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), m, "ragged supply profile");
            out.q[i * m..(i + 1) * m].copy_from_slice(row);
        }
        out
    }

    #[inline]
    pub fn firms(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn markets(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, firm: usize, market: usize) -> f64 {
        self.q[firm * self.m + market]
    }

    #[inline]
    pub fn set(&mut self, firm: usize, market: usize, value: f64) {
        self.q[firm * self.m + market] = value;
    }

    pub fn row(&self, firm: usize) -> &[f64] {
        &self.q[firm * self.m..(firm + 1) * self.m]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    /// Aggregate supply `s_i` of one firm.
    pub fn firm_total(&self, firm: usize) -> f64 {
        self.row(firm).iter().sum()
    }

    /// Aggregate demand `d_j` of one market.
    pub fn market_total(&self, market: usize) -> f64 {
        (0..self.n).map(|i| self.get(i, market)).sum()
    }

    pub fn firm_totals(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.firm_total(i)).collect()
    }

    pub fn market_totals(&self) -> Vec<f64> {
        (0..self.m).map(|j| self.market_total(j)).collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            n: self.n,
            m: self.m,
            q: self.q.iter().map(|x| x * factor).collect(),
        }
    }

    /// Largest absolute componentwise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.q
            .iter()
            .zip(&other.q)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.q.iter().all(|&x| x == 0.0)
    }

    /// Checks shape, sign, finiteness and that no quantity sits on a missing edge.
    pub fn check_against(&self, instance: &Instance) -> Result<(), ModelError> {
        if self.n != instance.n() || self.m != instance.m() {
            return Err(ModelError::ProfileShape {
                n: instance.n(),
                m: instance.m(),
                got_n: self.n,
                got_m: self.m,
            });
        }
        for i in 0..self.n {
            for j in 0..self.m {
                let x = self.get(i, j);
                if !x.is_finite() || x < 0.0 {
                    return Err(ModelError::BadQuantity { firm: i, market: j });
                }
                if x != 0.0 && !instance.edges.contains(i, j) {
                    return Err(ModelError::Sparsity { firm: i, market: j });
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// JSON document
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FirmDoc {
    cost: CostFunction,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum EdgesDoc {
    Keyword(String),
    List(Vec<[usize; 2]>),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceDoc {
    firms: Vec<FirmDoc>,
    markets: Vec<MarketParams>,
    edges: EdgesDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metadata: Option<serde_json::Value>,
}

fn parse_error(err: serde_json::Error) -> ModelError {
    ModelError::Parse {
        line: err.line(),
        column: err.column(),
        message: err.to_string(),
    }
}

/// Parses an instance document, returning the optional `metadata` block that
/// generators attach.
pub fn parse_document(text: &str) -> Result<(Instance, Option<serde_json::Value>), ModelError> {
    let doc: InstanceDoc = serde_json::from_str(text).map_err(parse_error)?;
    let n = doc.firms.len();
    let m = doc.markets.len();
    let edges = match doc.edges {
        EdgesDoc::Keyword(k) if k == "complete" => EdgeSet::complete(n, m),
        EdgesDoc::Keyword(k) => {
            return Err(ModelError::Parse {
                line: 0,
                column: 0,
                message: format!("edges: expected \"complete\" or a list of pairs, got \"{k}\""),
            })
        }
        EdgesDoc::List(list) => {
            let mut pairs = Vec::with_capacity(list.len());
            let mut bad = Vec::new();
            for [i, j] in list {
                if i == 0 || j == 0 {
                    bad.push(format!("edges: indices are 1-based, got [{i}, {j}]"));
                } else {
                    pairs.push((i - 1, j - 1));
                }
            }
            if !bad.is_empty() {
                return Err(ModelError::Invalid(bad));
            }
            EdgeSet::from_pairs(n, m, &pairs)?
        }
    };
    let instance = Instance {
        firms: doc.firms.into_iter().map(|f| f.cost).collect(),
        markets: doc.markets,
        edges,
    };
    instance.ensure_valid()?;
    Ok((instance, doc.metadata))
}

pub fn parse_instance(text: &str) -> Result<Instance, ModelError> {
    parse_document(text).map(|(inst, _)| inst)
}

fn to_doc(instance: &Instance, metadata: Option<serde_json::Value>) -> InstanceDoc {
    let edges = if instance.edges.is_complete() {
        EdgesDoc::Keyword("complete".to_string())
    } else {
        EdgesDoc::List(
            instance
                .edges
                .pairs()
                .into_iter()
                .map(|(i, j)| [i + 1, j + 1])
                .collect(),
        )
    };
    InstanceDoc {
        firms: instance.firms.iter().map(|&cost| FirmDoc { cost }).collect(),
        markets: instance.markets.clone(),
        edges,
        metadata,
    }
}

/// Canonical pretty-printed JSON document.
pub fn serialize_instance(instance: &Instance) -> String {
    serde_json::to_string_pretty(&to_doc(instance, None)).expect("instance serializes")
}

pub fn serialize_document(instance: &Instance, metadata: Option<serde_json::Value>) -> String {
    serde_json::to_string_pretty(&to_doc(instance, metadata)).expect("instance serializes")
}

/// Compact canonical form, stable across runs; used for digests.
pub fn canonical_json(instance: &Instance) -> String {
    serde_json::to_string(&to_doc(instance, None)).expect("instance serializes")
}

// ---------------------------------------------------------------------------
// Random instances
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostMix {
    Linear,
    Quadratic,
    /// Each firm independently linear or quadratic.
    Mixed,
}

/// Parameters for [`random_instance`].
#[derive(Debug, Clone, Copy)]
pub struct RandomConfig {
    pub max_firms: usize,
    pub max_markets: usize,
    pub costs: CostMix,
    /// Probability that each edge is present; 1.0 gives open access.
    pub edge_density: f64,
}

impl Default for RandomConfig {
    fn default() -> Self {
        Self {
            max_firms: 6,
            max_markets: 4,
            costs: CostMix::Linear,
            edge_density: 1.0,
        }
    }
}

/// Draws a random valid instance. Intercepts lie in `[0.5, 3]`, slopes in
/// `[0.2, 3]`; linear cost slopes are drawn from `[0, min_j alpha_j)` so that
/// every market is profitable for every firm.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, cfg: &RandomConfig) -> Instance {
    let n = rng.gen_range(1..=cfg.max_firms.max(1));
    let m = rng.gen_range(1..=cfg.max_markets.max(1));
    let markets: Vec<MarketParams> = (0..m)
        .map(|_| MarketParams::new(rng.gen_range(0.5..3.0), rng.gen_range(0.2..3.0)))
        .collect();
    let alpha_min = markets.iter().map(|mk| mk.alpha).fold(f64::INFINITY, f64::min);
    let firms = (0..n)
        .map(|_| {
            let c = rng.gen_range(0.0..alpha_min);
            let quadratic = match cfg.costs {
                CostMix::Linear => false,
                CostMix::Quadratic => true,
                CostMix::Mixed => rng.gen_bool(0.5),
            };
            if quadratic {
                CostFunction::quadratic(0.5 * c, rng.gen_range(0.05..2.0))
            } else {
                CostFunction::linear(c)
            }
        })
        .collect();
    let mut edges = EdgeSet::complete(n, m);
    if cfg.edge_density < 1.0 {
        for i in 0..n {
            for j in 0..m {
                if !rng.gen_bool(cfg.edge_density.clamp(0.0, 1.0)) {
                    edges.remove(i, j);
                }
            }
        }
    }
    Instance {
        firms,
        markets,
        edges,
    }
}

/// [`random_instance`] driven by a ChaCha8 stream seeded with `seed`.
pub fn random_instance_seeded(seed: u64, cfg: &RandomConfig) -> Instance {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    random_instance(&mut rng, cfg)
}
