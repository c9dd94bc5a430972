use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use netcournot::controlled::{
    self, AllocationConfig, ControlledError, SearchOptions, StackelbergOutcome,
};
use netcournot::design::{self, DesignError};
use netcournot::equilibrium::{self, EquilibriumError, SolverOptions};
use netcournot::model::{self, CostMix, EdgeSet, Instance, RandomConfig, SupplyProfile};
use netcournot::poa_analysis::{self, PoAReport, PoaError};

#[derive(Parser)]
#[command(name = "netcournot", version, about = "Equilibria and price of anarchy for networked Cournot markets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Solver tolerance.
    #[arg(long, global = true, default_value_t = 1e-9)]
    tol: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Auto,
    Closed,
    Iterative,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Design {
    Open,
    Greedy,
    Controlled,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Family {
    Symmetric,
    AsymWorst,
    Theta,
    CsExample,
    RevExample,
    Generalcap,
    Random,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Table {
    Open,
    Controlled,
    Search,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Costs {
    Linear,
    Quadratic,
    Mixed,
}

#[derive(Subcommand)]
enum Command {
    /// Cournot-Nash equilibrium on the instance's edge set.
    Nash {
        instance: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Auto)]
        method: Method,
    },
    /// Welfare-maximizing supply on the instance's edge set.
    Efficient { instance: PathBuf },
    /// Price of anarchy under a platform design.
    Poa {
        instance: PathBuf,
        #[arg(long, value_enum, default_value_t = Design::Open)]
        design: Design,
        #[command(flatten)]
        platform: Platform,
    },
    /// Welfare-optimal discriminatory edge set.
    Design {
        instance: PathBuf,
        /// Also solve by exhaustive enumeration and compare.
        #[arg(long)]
        oracle: bool,
    },
    /// Leader equilibria under controlled allocation.
    Controlled {
        instance: PathBuf,
        #[command(flatten)]
        platform: Platform,
    },
    /// Write a generated instance.
    Gen(GenArgs),
    /// Tables of closed-form bounds.
    Bounds(BoundsArgs),
    /// Aggregate price curve under controlled allocation.
    Curve {
        instance: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        price_floor: bool,
        /// Number of sample points on [0, q_max].
        #[arg(long, default_value_t = 100)]
        grid: usize,
    },
}

#[derive(Args)]
struct Platform {
    /// Platform weight on consumer surplus.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    price_floor: bool,
    /// Deviation-grid resolution for equilibrium verification.
    #[arg(long, default_value_t = 10_000)]
    grid: usize,
    /// Largest tolerated profit gain on the deviation grid.
    #[arg(long, default_value_t = 1e-7)]
    eps: f64,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    family: Family,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Costs::Linear)]
    costs: Costs,
    /// Edge probability for random instances.
    #[arg(long, default_value_t = 1.0)]
    density: f64,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, value_enum)]
    table: Table,
    /// Firm counts, `a..b` or a single value.
    #[arg(long)]
    n: Option<String>,
    /// Market counts, `a..b` or a single value.
    #[arg(long)]
    m: Option<String>,
    /// `start:end:step` or a single value.
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    theta: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
}

/// Numerical failure, reported with exit code 2.
#[derive(Debug)]
struct NonConvergence(String);

impl std::fmt::Display for NonConvergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NonConvergence {}

fn not_converged(e: &EquilibriumError) -> bool {
    matches!(e, EquilibriumError::NotConverged { .. })
}

fn poa_not_converged(e: &PoaError) -> bool {
    matches!(e, PoaError::Equilibrium(inner) if not_converged(inner))
}

fn is_nonconvergence(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        cause.is::<NonConvergence>()
            || cause.downcast_ref::<EquilibriumError>().is_some_and(not_converged)
            || cause.downcast_ref::<PoaError>().is_some_and(poa_not_converged)
            || cause.downcast_ref::<ControlledError>().is_some_and(|e| {
                matches!(e, ControlledError::Poa(p) if poa_not_converged(p))
            })
            || cause.downcast_ref::<DesignError>().is_some_and(|e| match e {
                DesignError::Equilibrium(inner) => not_converged(inner),
                DesignError::Poa(p) => poa_not_converged(p),
                _ => false,
            })
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_nonconvergence(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// Rounds to 12 significant digits.
fn round12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return if x == 0.0 { 0.0 } else { x };
    }
    let r: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn num(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        round12(x).to_string()
    }
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round12(n.as_f64().expect("f64 number"));
            *v = serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number);
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

fn digest(instance: &Instance) -> String {
    Sha256::digest(model::canonical_json(instance).as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn load(path: &Path) -> Result<Instance> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    model::parse_instance(&text).with_context(|| format!("parsing {}", path.display()))
}

struct Csv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Csv {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

struct Output {
    command: &'static str,
    digest: Option<String>,
    result: Value,
    table: Csv,
}

impl Output {
    fn render(self, format: Format) -> String {
        match format {
            Format::Csv => self.table.render(),
            Format::Json => {
                let mut doc = Map::new();
                doc.insert("command".into(), json!(self.command));
                if let Some(d) = self.digest {
                    doc.insert("instance_digest".into(), json!(d));
                }
                doc.insert("result".into(), self.result);
                let mut doc = Value::Object(doc);
                round_value(&mut doc);
                let mut text = serde_json::to_string_pretty(&doc).expect("report serializes");
                text.push('\n');
                text
            }
        }
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let common = cli.common;
    if !(common.tol > 0.0) {
        bail!("--tol must be positive");
    }
    let opts = SolverOptions {
        tol: common.tol,
        ..SolverOptions::default()
    };
    let (output, failure) = match cli.command {
        Command::Nash { instance, method } => cmd_nash(&load(&instance)?, method, &opts)?,
        Command::Efficient { instance } => cmd_efficient(&load(&instance)?, &opts)?,
        Command::Poa {
            instance,
            design,
            platform,
        } => (cmd_poa(&load(&instance)?, design, &platform, &opts)?, None),
        Command::Design { instance, oracle } => (cmd_design(&load(&instance)?, oracle)?, None),
        Command::Controlled { instance, platform } => {
            (cmd_controlled(&load(&instance)?, &platform)?, None)
        }
        Command::Gen(args) => {
            let text = cmd_gen(&args)?;
            emit(&text, common.out.as_deref())?;
            return Ok(());
        }
        Command::Bounds(args) => (cmd_bounds(&args)?, None),
        Command::Curve {
            instance,
            lambda,
            price_floor,
            grid,
        } => (cmd_curve(&load(&instance)?, lambda, price_floor, grid)?, None),
    };
    emit(&output.render(common.format), common.out.as_deref())?;
    match failure {
        Some(f) => Err(f.into()),
        None => Ok(()),
    }
}

fn quantity_rows(q: &SupplyProfile) -> Value {
    json!(q.rows())
}

fn quantity_table(q: &SupplyProfile) -> Csv {
    let mut t = Csv::new(&["firm", "market", "quantity"]);
    for i in 0..q.firms() {
        for j in 0..q.markets() {
            t.push(vec![(i + 1).to_string(), (j + 1).to_string(), num(q.get(i, j))]);
        }
    }
    t
}

fn cmd_nash(
    inst: &Instance,
    method: Method,
    opts: &SolverOptions,
) -> Result<(Output, Option<NonConvergence>)> {
    if method == Method::Closed {
        if let Some(i) = inst.firms.iter().position(|c| c.linear_slope().is_none()) {
            bail!("closed form requires linear costs (firm {} is strictly convex)", i + 1);
        }
    }
    let ne = match method {
        Method::Auto => equilibrium::nash(inst, opts)?,
        Method::Closed => equilibrium::nash_linear(inst)?,
        Method::Iterative => equilibrium::nash_general(inst, opts)?,
    };
    let result = json!({
        "q": quantity_rows(&ne.q),
        "demand": ne.demand,
        "prices": ne.prices,
        "firm_profits": ne.firm_profits,
        "welfare": ne.welfare,
        "sw": ne.social_welfare(),
        "method": ne.method,
        "iterations": ne.iterations,
        "residual": ne.residual,
        "converged": ne.converged,
    });
    let failure = (!ne.converged).then(|| {
        NonConvergence(format!("equilibrium solver stopped after {} iterations", ne.iterations))
    });
    Ok((
        Output {
            command: "nash",
            digest: Some(digest(inst)),
            result,
            table: quantity_table(&ne.q),
        },
        failure,
    ))
}

fn cmd_efficient(inst: &Instance, opts: &SolverOptions) -> Result<(Output, Option<NonConvergence>)> {
    let eff = equilibrium::efficient_welfare(inst, &inst.edges, opts)?;
    let result = json!({
        "q": quantity_rows(&eff.q),
        "demand": eff.q.market_totals(),
        "welfare": eff.welfare,
        "sw": eff.social_welfare(),
        "method": eff.method,
        "iterations": eff.iterations,
        "converged": eff.converged,
    });
    let failure = (!eff.converged).then(|| {
        NonConvergence(format!("welfare solver stopped after {} iterations", eff.iterations))
    });
    Ok((
        Output {
            command: "efficient",
            digest: Some(digest(inst)),
            result,
            table: quantity_table(&eff.q),
        },
        failure,
    ))
}

fn edge_list(edges: &EdgeSet) -> Value {
    json!(edges
        .pairs()
        .into_iter()
        .map(|(i, j)| [i + 1, j + 1])
        .collect::<Vec<_>>())
}

fn poa_table(r: &PoAReport) -> Csv {
    let mut t = Csv::new(&[
        "sw_efficient",
        "sw_equilibrium",
        "rho",
        "bound_name",
        "bound_value",
        "bound_kind",
        "bound_satisfied",
    ]);
    t.push(vec![
        num(r.sw_efficient),
        num(r.sw_equilibrium),
        num(r.rho.value()),
        r.bound_name.clone(),
        num(r.bound_value.value()),
        serde_json::to_value(r.bound_kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
        r.bound_satisfied.map_or(String::new(), |b| b.to_string()),
    ]);
    t
}

fn allocation_config(platform: &Platform) -> Result<AllocationConfig> {
    let lambda = platform
        .lambda
        .ok_or_else(|| anyhow!("--lambda is required for controlled allocation"))?;
    Ok(AllocationConfig::new(lambda, platform.price_floor)?)
}

fn search_options(platform: &Platform) -> Result<SearchOptions> {
    if platform.grid == 0 {
        bail!("--grid must be positive");
    }
    Ok(SearchOptions {
        grid: platform.grid,
        eps: platform.eps,
        ..SearchOptions::default()
    })
}

fn cmd_poa(inst: &Instance, design: Design, platform: &Platform, opts: &SolverOptions) -> Result<Output> {
    if design != Design::Controlled && platform.lambda.is_some() {
        bail!("--lambda only applies to --design controlled");
    }
    let (report, mut result) = match design {
        Design::Open => {
            let r = poa_analysis::price_of_anarchy(inst, opts)?;
            (r, json!({ "design": "open" }))
        }
        Design::Greedy => {
            let (r, d) = design::poa_discriminatory(inst)?;
            (r, json!({ "design": "greedy", "edges": edge_list(&d.edges) }))
        }
        Design::Controlled => {
            let cfg = allocation_config(platform)?;
            let r = controlled::poa_controlled(inst, &cfg, &search_options(platform)?)?;
            (
                r,
                json!({ "design": "controlled", "lambda": cfg.lambda, "price_floor": cfg.price_floor }),
            )
        }
    };
    if let (Value::Object(map), Value::Object(extra)) = (&mut result, serde_json::to_value(&report)?) {
        map.extend(extra);
    }
    Ok(Output {
        command: "poa",
        digest: Some(digest(inst)),
        result,
        table: poa_table(&report),
    })
}

fn cmd_design(inst: &Instance, oracle: bool) -> Result<Output> {
    let g = design::greedy_network(inst)?;
    let mut result = json!({
        "edges": edge_list(&g.edges),
        "sw_equilibrium": g.sw_equilibrium,
        "per_market_active_counts": g.per_market_active_counts,
        "permutation": g.permutation.iter().map(|i| i + 1).collect::<Vec<_>>(),
    });
    let mut header = vec!["firm", "market"];
    let mut oracle_cols = Vec::new();
    if oracle {
        let b = design::brute_force_design(inst)?;
        let equal = (b.sw_equilibrium - g.sw_equilibrium).abs() <= 1e-12;
        result["oracle_sw_equilibrium"] = json!(b.sw_equilibrium);
        result["oracle_equal"] = json!(equal);
        header.extend(["sw_equilibrium", "oracle_sw_equilibrium", "oracle_equal"]);
        oracle_cols = vec![num(g.sw_equilibrium), num(b.sw_equilibrium), equal.to_string()];
    }
    let mut table = Csv::new(&header);
    for (i, j) in g.edges.pairs() {
        let mut row = vec![(i + 1).to_string(), (j + 1).to_string()];
        row.extend(oracle_cols.iter().cloned());
        table.push(row);
    }
    Ok(Output {
        command: "design",
        digest: Some(digest(inst)),
        result,
        table,
    })
}

fn outcome_value(o: &StackelbergOutcome) -> Value {
    json!({
        "s": o.s,
        "total_q": o.total_q,
        "d": o.d,
        "uniform_price": o.uniform_price,
        "sw": o.sw,
        "profits": o.profits,
        "verified": o.verified,
        "kind": o.kind,
    })
}

fn cmd_controlled(inst: &Instance, platform: &Platform) -> Result<Output> {
    let cfg = allocation_config(platform)?;
    let outcomes = controlled::stackelberg(inst, &cfg, &search_options(platform)?)?;
    let mut table = Csv::new(&["outcome", "firm", "quantity", "profit", "total_q", "uniform_price", "sw", "kind"]);
    for (k, o) in outcomes.iter().enumerate() {
        let kind = serde_json::to_value(o.kind)?.as_str().unwrap_or_default().to_string();
        for i in 0..o.s.len() {
            table.push(vec![
                (k + 1).to_string(),
                (i + 1).to_string(),
                num(o.s[i]),
                num(o.profits[i]),
                num(o.total_q),
                num(o.uniform_price),
                num(o.sw),
                kind.clone(),
            ]);
        }
    }
    let result = json!({
        "lambda": cfg.lambda,
        "price_floor": cfg.price_floor,
        "equilibria": outcomes.iter().map(outcome_value).collect::<Vec<_>>(),
        "found": !outcomes.is_empty(),
    });
    Ok(Output {
        command: "controlled",
        digest: Some(digest(inst)),
        result,
        table,
    })
}

fn cmd_curve(inst: &Instance, lambda: f64, price_floor: bool, grid: usize) -> Result<Output> {
    if grid < 2 {
        bail!("--grid must be at least 2");
    }
    let cfg = AllocationConfig::new(lambda, price_floor)?;
    let curve = controlled::price_curve(&inst.markets, &cfg)?;
    let mut samples: Vec<(f64, &str)> = (0..grid)
        .map(|k| (curve.q_max * k as f64 / (grid - 1) as f64, "grid"))
        .collect();
    samples.extend(curve.breakpoints.iter().map(|&b| (b, "breakpoint")));
    samples.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
    let mut table = Csv::new(&["q", "price", "active_markets", "kind"]);
    let mut rows = Vec::new();
    for (q, kind) in samples {
        let alloc = controlled::allocate(&inst.markets, q, &cfg)?;
        let price = if q > 0.0 { curve.price(q) } else { alloc.uniform_price };
        table.push(vec![num(q), num(price), alloc.active.len().to_string(), kind.to_string()]);
        rows.push(json!({ "q": q, "price": price, "active_markets": alloc.active.len(), "kind": kind }));
    }
    let result = json!({
        "lambda": lambda,
        "price_floor": price_floor,
        "q_max": curve.q_max,
        "breakpoints": curve.breakpoints,
        "nodes": curve.nodes(),
        "segments": curve.segments,
        "samples": rows,
    });
    Ok(Output {
        command: "curve",
        digest: Some(digest(inst)),
        result,
        table,
    })
}

fn need<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| anyhow!("--{flag} is required for this family"))
}

fn cmd_gen(a: &GenArgs) -> Result<String> {
    use netcournot::model::{CostFunction, MarketParams};
    let (inst, family, params, derived) = match a.family {
        Family::Symmetric => {
            let (n, m) = (a.n.unwrap_or(2), a.m.unwrap_or(1));
            let (alpha, beta, c) = (a.alpha.unwrap_or(2.0), a.beta.unwrap_or(1.0), a.c.unwrap_or(0.5));
            if n == 0 || m == 0 {
                bail!("--n and --m must be positive");
            }
            let inst = Instance::open_access(
                vec![CostFunction::linear(c); n],
                vec![MarketParams::new(alpha, beta); m],
            );
            inst.ensure_valid()?;
            let derived = json!({ "bound_open_sym": poa_analysis::bound_open_sym(n) });
            (inst, "symmetric", json!({ "n": n, "m": m, "alpha": alpha, "beta": beta, "c": c }), derived)
        }
        Family::AsymWorst => {
            let n = need(a.n, "n")?;
            let (alpha, beta, c1) = (a.alpha.unwrap_or(1.0), a.beta.unwrap_or(1.0), a.c1.unwrap_or(0.0));
            let inst = poa_analysis::gen_asym_worst(n, alpha, beta, c1)?;
            let derived = json!({
                "c_star": poa_analysis::asym_worst_cost(n, alpha, c1),
                "bound_open_asym": poa_analysis::bound_open_asym(n),
            });
            (inst, "asym-worst", json!({ "n": n, "alpha": alpha, "beta": beta, "c1": c1 }), derived)
        }
        Family::Theta => {
            let m = need(a.m, "m")?;
            let theta = need(a.theta, "theta")?;
            let eps = a.epsilon.unwrap_or(0.0);
            let inst = controlled::gen_theta_family(m, theta, eps)?;
            (inst, "theta", json!({ "m": m, "theta": theta, "epsilon": eps }), json!({}))
        }
        Family::CsExample => {
            let (c, eps) = (a.c.unwrap_or(1.0), a.epsilon.unwrap_or(0.1));
            let inst = controlled::gen_cs_counterexample(c, eps)?;
            (inst, "cs-example", json!({ "c": c, "epsilon": eps }), json!({ "sw_efficient": eps }))
        }
        Family::RevExample => {
            let (alpha, beta) = (need(a.alpha, "alpha")?, need(a.beta, "beta")?);
            let limit = controlled::rev_epsilon_limit(alpha, beta);
            let eps = a.epsilon.unwrap_or(limit);
            let inst = controlled::gen_rev_counterexample(alpha, beta, eps)?;
            let derived = json!({
                "epsilon_limit": limit,
                "sw_efficient": controlled::rev_efficient_welfare(beta, eps),
                "sw_equilibrium_at_limit": 3.0 * beta / 8.0,
                "price_floor": true,
            });
            (inst, "rev-example", json!({ "alpha": alpha, "beta": beta, "epsilon": eps }), derived)
        }
        Family::Generalcap => {
            let m = need(a.m, "m")?;
            let lambda = need(a.lambda, "lambda")?;
            let theta = a.theta.unwrap_or(1e-3);
            let (inst, decay) = controlled::gen_generalcap_family(m, lambda, theta)?;
            (inst, "generalcap", json!({ "m": m, "lambda": lambda, "theta": theta }), json!({ "a": decay }))
        }
        Family::Random => {
            if !(0.0..=1.0).contains(&a.density) {
                bail!("--density must lie in [0, 1]");
            }
            let cfg = RandomConfig {
                max_firms: a.n.unwrap_or(6),
                max_markets: a.m.unwrap_or(4),
                costs: match a.costs {
                    Costs::Linear => CostMix::Linear,
                    Costs::Quadratic => CostMix::Quadratic,
                    Costs::Mixed => CostMix::Mixed,
                },
                edge_density: a.density,
            };
            let inst = model::random_instance_seeded(a.seed, &cfg);
            let params = json!({
                "seed": a.seed,
                "max_firms": cfg.max_firms,
                "max_markets": cfg.max_markets,
                "density": a.density,
            });
            (inst, "random", params, json!({}))
        }
    };
    let mut meta = json!({
        "family": family,
        "parameters": params,
        "derived": derived,
        "instance_digest": digest(&inst),
    });
    round_value(&mut meta["derived"]);
    let mut text = model::serialize_document(&inst, Some(meta));
    text.push('\n');
    Ok(text)
}

fn int_range(spec: &str, flag: &str) -> Result<Vec<usize>> {
    let parse = |s: &str| -> Result<usize> {
        s.trim()
            .parse()
            .with_context(|| format!("--{flag}: bad integer {s:?}"))
    };
    let (lo, hi) = match spec.split_once("..") {
        Some((a, b)) => (parse(a)?, parse(b.trim_start_matches('='))?),
        None => {
            let v = parse(spec)?;
            (v, v)
        }
    };
    if lo > hi {
        bail!("--{flag}: empty range {spec}");
    }
    Ok((lo..=hi).collect())
}

fn float_range(spec: &str, flag: &str) -> Result<Vec<f64>> {
    let parse = |s: &str| -> Result<f64> {
        s.trim()
            .parse()
            .with_context(|| format!("--{flag}: bad number {s:?}"))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        [v] => Ok(vec![parse(v)?]),
        [a, b, step] => {
            let (a, b, step) = (parse(a)?, parse(b)?, parse(step)?);
            if !(step > 0.0) || b < a {
                bail!("--{flag}: range {spec} must have start <= end and a positive step");
            }
            let count = ((b - a) / step + 1e-9).floor() as usize;
            Ok((0..=count).map(|k| a + step * k as f64).collect())
        }
        _ => bail!("--{flag}: expected a value or start:end:step, got {spec:?}"),
    }
}

fn cmd_bounds(a: &BoundsArgs) -> Result<Output> {
    let ns = |default: &str| int_range(a.n.as_deref().unwrap_or(default), "n");
    let mut rows = Vec::new();
    let table = match a.table {
        Table::Open => {
            let gammas = a.gamma.as_deref().map(|g| float_range(g, "gamma")).transpose()?;
            let mut header = vec!["n", "open_asym", "open_sym"];
            if gammas.is_some() {
                header.extend(["gamma", "delta", "open_linear_single"]);
            }
            let mut t = Csv::new(&header);
            for n in ns("1..10")? {
                if n == 0 {
                    bail!("--n must be positive");
                }
                let (asym, sym) = (poa_analysis::bound_open_asym(n), poa_analysis::bound_open_sym(n));
                match &gammas {
                    None => {
                        t.push(vec![n.to_string(), num(asym), num(sym)]);
                        rows.push(json!({ "n": n, "open_asym": asym, "open_sym": sym }));
                    }
                    Some(gs) => {
                        for &g in gs {
                            let nf = n as f64;
                            let d = poa_analysis::delta(g, n);
                            let lin = 1.0 / ((2.0 * nf + 4.0) / (3.0 * nf + 5.0) + d);
                            t.push(vec![n.to_string(), num(asym), num(sym), num(g), num(d), num(lin)]);
                            rows.push(json!({
                                "n": n, "open_asym": asym, "open_sym": sym,
                                "gamma": g, "delta": d, "open_linear_single": lin,
                            }));
                        }
                    }
                }
            }
            t
        }
        Table::Controlled => {
            let lambdas = float_range(a.lambda.as_deref().unwrap_or("0:1:0.1"), "lambda")?;
            let ms = int_range(a.m.as_deref().unwrap_or("2..6"), "m")?;
            let mut t = Csv::new(&["lambda", "m", "bound"]);
            for &l in &lambdas {
                for &m in &ms {
                    let b = controlled::bound_controlled(l, m)?;
                    t.push(vec![num(l), m.to_string(), num(b.value())]);
                    rows.push(json!({ "lambda": l, "m": m, "bound": b }));
                }
            }
            t
        }
        Table::Search => {
            let thetas = float_range(a.theta.as_deref().unwrap_or("0:1:0.25"), "theta")?;
            let mut t = Csv::new(&["n", "theta", "bound"]);
            for n in ns("1..10")? {
                if n == 0 {
                    bail!("--n must be positive");
                }
                for &th in &thetas {
                    if !(0.0..=1.0).contains(&th) {
                        bail!("--theta values must lie in [0, 1]");
                    }
                    let b = poa_analysis::search_cost_bound(n, th);
                    t.push(vec![n.to_string(), num(th), num(b)]);
                    rows.push(json!({ "n": n, "theta": th, "bound": b }));
                }
            }
            t
        }
    };
    let name = match a.table {
        Table::Open => "open",
        Table::Controlled => "controlled",
        Table::Search => "search",
    };
    Ok(Output {
        command: "bounds",
        digest: None,
        result: json!({ "table": name, "rows": rows }),
        table,
    })
}
