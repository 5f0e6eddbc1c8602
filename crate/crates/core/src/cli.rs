//! Experiment runner behind the `conefix` binary: JSON configs, built-in
//! experiments, and the report, residual and solution files.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::concavity::{rate_k, solve_delta, solve_tau, ConcavityProfile};
use crate::cone::{ConeVector, Grid};
use crate::engine::{
    audit_concavity, audit_monotone, collapse_check, complement_fixed_point, periodic_points, solve_decreasing,
    solve_general, solve_increasing, solve_sum, uniqueness_probe, verify_bracket, AuditResult, Collapse,
    ConvergenceReport, OperatorHandle, Solution, SolveOptions,
};
use crate::error::{Error, Result};
use crate::gallery::{
    hat_projection, make_complement_operator, make_cyclic_power, make_hat_operator, make_linf_operator,
    make_saturating_operator, make_scalar_power, make_tilde_operator, padic_sigma0_theoretical, HeatOperator,
    HeatSpec, PadicOperator, PadicSpec, UrysohnOperator, UrysohnSpec,
};

/// A starting element: one value on every node, or explicit node values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Start {
    Constant(f64),
    Values(Vec<f64>),
}

impl Start {
    fn on(&self, grid: &Arc<Grid>) -> Result<ConeVector> {
        match self {
            Start::Constant(c) => ConeVector::new(grid.clone(), vec![*c; grid.len()], 0.0),
            Start::Values(v) => {
                if v.len() != grid.len() {
                    return Err(Error::Domain(format!("v0 has {} values, grid has {} nodes", v.len(), grid.len())));
                }
                ConeVector::new(grid.clone(), v.clone(), 0.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OperatorConfig {
    Linf { n: usize },
    ScalarPower { alpha: f64 },
    CyclicPower { n: usize, alpha: f64 },
    Padic { p: u32, betas: Vec<f64>, radius: f64, nodes: usize, #[serde(default)] gamma: Option<f64> },
    Urysohn { eta: f64, alpha: f64, radius: f64, nodes: usize },
    Heat { xi: f64, radius: f64, nx: usize, horizon: f64, nt: usize },
    /// Identity on the ball of radius `||x*||` about the constant `x* = star`.
    Tilde { base: Box<OperatorConfig>, star: f64 },
    /// Identity on the part of `<0, x*>` farther than `lambda ||x*||` from `x*`.
    Hat { base: Box<OperatorConfig>, star: f64, lambda: f64 },
}

impl OperatorConfig {
    /// The same operator on a grid small enough for sampled audits.
    fn coarse(&self) -> Self {
        match self.clone() {
            OperatorConfig::Padic { p, betas, radius, nodes, gamma } => {
                OperatorConfig::Padic { p, betas, radius, nodes: nodes.min(401), gamma }
            }
            OperatorConfig::Urysohn { eta, alpha, radius, nodes } => {
                OperatorConfig::Urysohn { eta, alpha, radius, nodes: nodes.min(401) }
            }
            OperatorConfig::Heat { xi, radius, nx, horizon, nt } => {
                OperatorConfig::Heat { xi, radius, nx: nx.min(41), horizon, nt: nt.min(21) }
            }
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriverConfig {
    Decreasing { v0: Start, n0: usize, #[serde(default)] sigma0: Option<f64> },
    Increasing { v0: Start, n0: usize, r0: f64 },
    General { v0: Start, n0: usize, #[serde(default)] r1: Option<f64>, #[serde(default)] r2: Option<f64> },
    Periodic { v0: Start, n0: usize, m0: usize, i0: usize, j0: usize, d1: f64, d2: f64 },
    Uniqueness { v0: Start, n0: usize, r1: f64, r2: f64, starts: usize },
    Complement { v0: Start, n0: usize, gamma0: f64, c: f64 },
    Sum { v0: Start, n0: usize, c0: f64, slope: f64, cap: f64 },
    Counterexample { samples: usize, probe_starts: usize },
    Characteristic { samples: usize },
    Audit {},
}

impl DriverConfig {
    fn kind(&self) -> &'static str {
        match self {
            DriverConfig::Decreasing { .. } => "decreasing",
            DriverConfig::Increasing { .. } => "increasing",
            DriverConfig::General { .. } => "general",
            DriverConfig::Periodic { .. } => "periodic",
            DriverConfig::Uniqueness { .. } => "uniqueness",
            DriverConfig::Complement { .. } => "complement",
            DriverConfig::Sum { .. } => "sum",
            DriverConfig::Counterexample { .. } => "counterexample",
            DriverConfig::Characteristic { .. } => "characteristic",
            DriverConfig::Audit {} => "audit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub tol: f64,
    pub max_iter: usize,
    pub order_tol: f64,
    pub floor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let d = SolveOptions::default();
        Self { tol: d.tol, max_iter: d.max_iter, order_tol: d.order_tol, floor: d.floor }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

fn default_seed() -> u64 {
    SolveOptions::default().seed
}

fn default_audit_samples() -> usize {
    crate::engine::AUDIT_SAMPLES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub operator: OperatorConfig,
    pub driver: DriverConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_audit_samples")]
    pub audit_samples: usize,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn options(&self) -> SolveOptions {
        let t = self.tolerances;
        SolveOptions { tol: t.tol, max_iter: t.max_iter, order_tol: t.order_tol, floor: t.floor, seed: self.seed }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Reads a config file, or resolves a built-in experiment by name (with an
    /// optional `.cfg` or `.json` suffix) when no such file exists.
    pub fn load(name_or_path: &str) -> Result<Self> {
        let path = Path::new(name_or_path);
        if path.is_file() {
            return Self::from_json(&std::fs::read_to_string(path)?);
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(name_or_path);
        let named = path.extension().is_none_or(|e| e == "cfg" || e == "json");
        builtin(name_or_path)
            .or_else(|| if named { builtin(stem) } else { None })
            .ok_or_else(|| Error::Parse(format!("{name_or_path} is neither a config file nor a built-in experiment")))
    }

    /// Parameter checks that do not need the operator.
    pub fn validate(&self) -> Result<()> {
        let t = &self.tolerances;
        if !(t.tol > 0.0 && t.order_tol >= 0.0 && t.floor > 0.0 && t.max_iter > 0) {
            return Err(Error::Domain("tolerances must be positive".into()));
        }
        let open_unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::Domain(format!("{name} must lie in (0,1)")))
            }
        };
        let n0_ok = |n0: usize| if n0 >= 1 { Ok(()) } else { Err(Error::Domain("n0 must be >= 1".into())) };
        match &self.driver {
            DriverConfig::Decreasing { n0, sigma0, .. } => {
                n0_ok(*n0)?;
                if let Some(s) = sigma0 {
                    open_unit("sigma0", *s)?;
                }
            }
            DriverConfig::Increasing { n0, r0, .. } => {
                n0_ok(*n0)?;
                if !(*r0 > 1.0) {
                    return Err(Error::Domain("r0 must be > 1".into()));
                }
            }
            DriverConfig::General { n0, r1, r2, .. } => {
                n0_ok(*n0)?;
                if let Some(r) = r1 {
                    open_unit("r1", *r)?;
                }
                if r2.is_some_and(|r| !(r > 1.0)) {
                    return Err(Error::Domain("r2 must be > 1".into()));
                }
            }
            DriverConfig::Periodic { n0, m0, i0, j0, d1, d2, .. } => {
                if !(*m0 >= 1 && n0 >= m0) {
                    return Err(Error::Domain("need n0 >= m0 >= 1".into()));
                }
                if i0 == j0 || i0 >= m0 || j0 >= m0 {
                    return Err(Error::Domain("i0 and j0 must be distinct and below m0".into()));
                }
                open_unit("d1", *d1)?;
                if !(*d2 > 1.0) {
                    return Err(Error::Domain("d2 must be > 1".into()));
                }
            }
            DriverConfig::Uniqueness { n0, r1, r2, starts, .. } => {
                n0_ok(*n0)?;
                open_unit("r1", *r1)?;
                if !(*r2 > 1.0 && *starts >= 2) {
                    return Err(Error::Domain("need r2 > 1 and at least 2 starts".into()));
                }
            }
            DriverConfig::Complement { n0, gamma0, c, .. } => {
                n0_ok(*n0)?;
                open_unit("gamma0", *gamma0)?;
                if !(*c > 0.0 && *c <= 1.0) {
                    return Err(Error::Domain("c must lie in (0,1]".into()));
                }
            }
            DriverConfig::Sum { n0, c0, slope, cap, .. } => {
                n0_ok(*n0)?;
                if !(*c0 > 0.0 && *slope > 0.0 && *cap > 0.0) {
                    return Err(Error::Domain("c0, slope and cap must be > 0".into()));
                }
            }
            DriverConfig::Counterexample { samples, probe_starts } => {
                if !matches!(self.operator, OperatorConfig::Tilde { .. } | OperatorConfig::Hat { .. }) {
                    return Err(Error::Domain("the counterexample driver needs a tilde or hat operator".into()));
                }
                if *samples == 0 || *probe_starts < 2 {
                    return Err(Error::Domain("need samples >= 1 and probe_starts >= 2".into()));
                }
            }
            DriverConfig::Characteristic { samples } => {
                if *samples == 0 {
                    return Err(Error::Domain("samples must be >= 1".into()));
                }
            }
            DriverConfig::Audit {} => {}
        }
        Ok(())
    }
}

/// Built operator with the problem-specific object behind it.
enum Built {
    Plain(OperatorHandle),
    Padic(PadicOperator),
    Urysohn(UrysohnOperator),
    Heat(HeatOperator),
    Tilde { op: OperatorHandle, star: ConeVector },
    Hat { op: OperatorHandle, star: ConeVector, lambda: f64 },
}

impl Built {
    fn handle(&self) -> &OperatorHandle {
        match self {
            Built::Plain(a) => a,
            Built::Padic(p) => p.handle(),
            Built::Urysohn(u) => u.handle(),
            Built::Heat(h) => h.handle(),
            Built::Tilde { op, .. } | Built::Hat { op, .. } => op,
        }
    }

    /// Quadrature error budgets of the rules behind the operator.
    fn budgets(&self) -> Value {
        match self {
            Built::Padic(p) => json!({"kernel_budget": p.budget()}),
            Built::Urysohn(u) => json!({"rule": u.rule, "bound_check": u.bound_check}),
            Built::Heat(h) => json!({"budget": h.budget()}),
            _ => json!({}),
        }
    }

    fn is_counterexample(&self) -> bool {
        matches!(self, Built::Tilde { .. } | Built::Hat { .. })
    }
}

fn build(cfg: &OperatorConfig, order_tol: f64) -> Result<Built> {
    let built = match cfg {
        OperatorConfig::Linf { n } => Built::Plain(make_linf_operator(*n)?),
        OperatorConfig::ScalarPower { alpha } => Built::Plain(make_scalar_power(*alpha)?),
        OperatorConfig::CyclicPower { n, alpha } => Built::Plain(make_cyclic_power(*n, *alpha)?),
        OperatorConfig::Padic { p, betas, radius, nodes, gamma } => {
            let spec = PadicSpec::new(betas.len(), *p, betas.clone())?;
            let axes = (0..spec.n).map(|_| crate::cone::Axis::uniform(0.0, *radius, *nodes)).collect::<Result<Vec<_>>>()?;
            Built::Padic(PadicOperator::new(spec, Arc::new(Grid::new(axes)?), *gamma)?)
        }
        OperatorConfig::Urysohn { eta, alpha, radius, nodes } => {
            Built::Urysohn(UrysohnOperator::on_line(UrysohnSpec { eta: *eta, alpha: *alpha }, *radius, *nodes)?)
        }
        OperatorConfig::Heat { xi, radius, nx, horizon, nt } => {
            let spec = HeatSpec { xi: *xi, ..HeatSpec::default() };
            Built::Heat(HeatOperator::on_box(spec, *radius, *nx, *horizon, *nt)?)
        }
        OperatorConfig::Tilde { base, star } => {
            let a = build(base, order_tol)?.handle().clone();
            let s = ConeVector::constant(a.grid().clone(), *star);
            Built::Tilde { op: make_tilde_operator(&a, &s)?, star: s }
        }
        OperatorConfig::Hat { base, star, lambda } => {
            let a = build(base, order_tol)?.handle().clone();
            let s = ConeVector::constant(a.grid().clone(), *star);
            Built::Hat { op: make_hat_operator(&a, &s, *lambda)?, star: s, lambda: *lambda }
        }
    };
    Ok(match built {
        Built::Plain(a) => Built::Plain(a.with_order_tol(order_tol)),
        other => other,
    })
}

/// One entry of the hypothesis and certificate checklist.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub condition: String,
    pub status: &'static str,
    pub detail: String,
}

fn check(condition: &str, ok: bool, detail: impl Into<String>) -> Check {
    Check { condition: condition.into(), status: if ok { "PASS" } else { "FAIL" }, detail: detail.into() }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Value,
    pub residuals_csv: Option<String>,
    pub solution: Option<ConeVector>,
    pub passed: bool,
}

impl RunOutput {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(&self.report).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(dir.join("report.json"), text + "\n")?;
        if let Some(csv) = &self.residuals_csv {
            std::fs::write(dir.join("residuals.csv"), csv)?;
        }
        if let Some(sol) = &self.solution {
            sol.write_csv(dir.join("solution.csv"))?;
        }
        Ok(())
    }
}

/// Decreasing, increasing or general iterations, whichever the measured
/// bracket of `A^{n0} v0` against `A^{n0-1} v0` supports.
pub fn solve_auto(a: &OperatorHandle, v0: &ConeVector, n0: usize, opts: &SolveOptions) -> Result<Solution> {
    let (q1, q2) = verify_bracket(a, v0, n0, 1, opts.floor)?;
    if q2 <= 1.0 + 1e-12 {
        solve_decreasing(a, v0, n0, q1.min(1.0 - 1e-12), opts)
    } else if q1 >= 1.0 - 1e-12 {
        solve_increasing(a, v0, n0, q2 * (1.0 + 1e-12), opts)
    } else {
        solve_general(a, v0, n0, q1, q2, opts)
    }
}

fn solution_checks(sol: &Solution, checks: &mut Vec<Check>) {
    let r = &sol.report;
    checks.push(check("two-sided bracket on the starting iterate", true, "verified before iterating"));
    checks.push(check("limit inside the certified conical segment", r.bracket_ok, ""));
    checks.push(check("residuals within their a-priori bounds", r.bounds_ok, ""));
    let ok = r.observed_rate.is_none_or(|o| o <= r.certified_rate * (1.0 + 1e-6));
    checks.push(check(
        "observed rate below the certified rate",
        ok,
        match r.observed_rate {
            Some(o) => format!("observed {o}, certified {}", r.certified_rate),
            None => format!("too few residuals to fit, certified {}", r.certified_rate),
        },
    ));
}

/// Problem-specific checks on a computed fixed point of the main operator.
fn problem_checks(built: &Built, sol: &Solution, opts: &SolveOptions, checks: &mut Vec<Check>) -> Result<Value> {
    Ok(match built {
        Built::Padic(op) => {
            let phi = sol.x_star.map(|v| v.powf(op.spec.alpha));
            let half = op.half_residual(&phi)?;
            let full = op.full_residual(&phi)?;
            let numeric = sol.certificate.sigma0.unwrap_or(f64::NAN);
            let theory = padic_sigma0_theoretical(&op.spec, 0.5, op.grid())?;
            checks.push(check("half-line equation residual <= 1e-6", half.value <= 1e-6, format!("{:e}", half.value)));
            checks.push(check("full-line equation residual of the odd extension <= 1e-5", full.value <= 1e-5, format!("{:e}", full.value)));
            checks.push(check("theoretical sigma0 below the measured one", theory <= numeric, format!("{theory} <= {numeric}")));
            json!({"half_residual": half, "full_residual": full, "sigma0_theoretical": theory, "sigma0_numeric": numeric})
        }
        Built::Urysohn(op) => {
            let eta = op.spec.eta;
            let tau = sol.certificate.tau_star.unwrap_or(f64::NAN);
            let f = sol.x_star.values();
            let inside = f.iter().all(|v| *v >= tau * eta - opts.order_tol && *v <= eta + opts.order_tol);
            let res = op.residual(&sol.x_star)?;
            let sigma0 = op.sigma0()?;
            checks.push(check("solution between tau* eta and eta", inside, format!("tau* = {tau}")));
            checks.push(check("integral equation residual <= 1e-8", res.value <= 1e-8, format!("{:e}", res.value)));
            checks.push(check("kernel bound attained in the far field", op.bound_check.far_value >= eta - 1e-6, ""));
            json!({"sigma0": sigma0, "residual": res, "bound_check": op.bound_check})
        }
        Built::Heat(op) => {
            let av0 = op.handle().apply(&op.start())?;
            let env = op.envelope_violation(&av0)?;
            let u = sol.x_star.add(&op.g())?;
            let res = op.residual(&u)?;
            checks.push(check("envelope of A xi from the source bounds", env == 0.0, format!("violation {env:e}")));
            checks.push(check("mild-solution residual <= 1e-5", res.value <= 1e-5, format!("{:e}", res.value)));
            json!({"r1": op.spec.r1(), "r2": op.spec.r2(), "residual": res, "rule_budget": op.budget()})
        }
        _ => Value::Null,
    })
}

fn audits(cfg: &ExperimentConfig, checks: &mut Vec<Check>) -> Result<Vec<AuditResult>> {
    if cfg.audit_samples == 0 {
        return Ok(Vec::new());
    }
    let built = build(&cfg.operator.coarse(), cfg.tolerances.order_tol)?;
    let a = built.handle();
    let mut out = vec![audit_monotone(a, cfg.audit_samples, cfg.seed)?];
    if built.is_counterexample() {
        let sqrt = ConcavityProfile::power(0.5)?;
        out.push(audit_concavity(a, Some(&sqrt), cfg.audit_samples, cfg.seed)?);
        let failing = out.iter().any(|r| !r.passed());
        checks.push(check("audit detects missing monotonicity or concavity", failing, ""));
    } else {
        if a.profile().is_some() {
            out.push(audit_concavity(a, None, cfg.audit_samples, cfg.seed)?);
        }
        for r in &out {
            checks.push(check(&format!("{} audit", r.kind), r.passed(), format!("{} of {} samples violate", r.violations, r.samples)));
        }
    }
    Ok(out)
}

fn report_of(r: &ConvergenceReport) -> Value {
    serde_json::to_value(r).unwrap_or(Value::Null)
}

/// Runs an experiment. Hypothesis failures and non-convergence surface as
/// errors; failed post-run checks clear `passed`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let opts = cfg.options();
    let built = build(&cfg.operator, opts.order_tol)?;
    let a = built.handle().clone();
    let mut checks = Vec::new();
    let mut certificate = Value::Null;
    let mut convergence = Value::Null;
    let mut results = Value::Null;
    let mut residuals_csv = None;
    let mut solution = None;

    let mut finish_solution = |sol: Solution, checks: &mut Vec<Check>| -> Result<Value> {
        solution_checks(&sol, checks);
        let extra = problem_checks(&built, &sol, &opts, checks)?;
        certificate = serde_json::to_value(&sol.certificate).unwrap_or(Value::Null);
        convergence = report_of(&sol.report);
        residuals_csv = Some(sol.report.residuals_csv());
        solution = Some(sol.x_star);
        Ok(extra)
    };

    match &cfg.driver {
        DriverConfig::Decreasing { v0, n0, sigma0 } => {
            let v0 = v0.on(a.grid())?;
            let sigma0 = match sigma0 {
                Some(s) => *s,
                None => verify_bracket(&a, &v0, *n0, 1, opts.floor)?.0.min(1.0 - 1e-12),
            };
            let sol = solve_decreasing(&a, &v0, *n0, sigma0, &opts)?;
            results = finish_solution(sol, &mut checks)?;
        }
        DriverConfig::Increasing { v0, n0, r0 } => {
            let sol = solve_increasing(&a, &v0.on(a.grid())?, *n0, *r0, &opts)?;
            results = finish_solution(sol, &mut checks)?;
        }
        DriverConfig::General { v0, n0, r1, r2 } => {
            let v0 = v0.on(a.grid())?;
            let (d1, d2) = match &built {
                Built::Heat(h) => (h.spec.r1(), h.spec.r2()),
                _ => {
                    let (q1, q2) = verify_bracket(&a, &v0, *n0, 1, opts.floor)?;
                    (q1.min(1.0 - 1e-3), q2.max(1.0 + 1e-3))
                }
            };
            let sol = solve_general(&a, &v0, *n0, r1.unwrap_or(d1), r2.unwrap_or(d2), &opts)?;
            results = finish_solution(sol, &mut checks)?;
        }
        DriverConfig::Periodic { v0, n0, m0, i0, j0, d1, d2 } => {
            let res = periodic_points(&a, &v0.on(a.grid())?, *n0, *m0, &opts)?;
            let collapse = collapse_check(&res.points, *i0, *j0, *d1, *d2, 100.0 * opts.tol)?;
            let verdict = match &collapse {
                Collapse::Collapsed(p) => {
                    solution = Some(p.clone());
                    json!({"collapsed": true})
                }
                Collapse::Classes { gcd, classes } => {
                    solution = Some(res.points[0].clone());
                    json!({"collapsed": false, "gcd": gcd, "classes": classes})
                }
            };
            checks.push(check("periodic points agree as the index gcd requires", true, verdict.to_string()));
            convergence = report_of(&res.report);
            residuals_csv = Some(res.report.residuals_csv());
            results = json!({"r1": res.r1, "r2": res.r2, "rate": res.rate, "collapse": verdict,
                "points": res.points.iter().map(|p| p.values().to_vec()).collect::<Vec<_>>()});
        }
        DriverConfig::Uniqueness { v0, n0, r1, r2, starts } => {
            let sol = solve_auto(&a, &v0.on(a.grid())?, *n0, &opts)?;
            let star = sol.x_star.clone();
            let extra = finish_solution(sol, &mut checks)?;
            let verdict = uniqueness_probe(&a, &star, *r1, *r2, *starts, &opts)?;
            checks.push(check("every start reaches the same fixed point", verdict.unique, format!("{} distinct limits", verdict.distinct_count)));
            results = json!({"problem": extra, "probe": verdict});
        }
        DriverConfig::Complement { v0, n0, gamma0, c } => {
            let alpha = match a.require_profile()? {
                ConcavityProfile::Power { gamma } => *gamma,
                other => return Err(Error::Precondition(format!("complement needs a power profile, got {other}"))),
            };
            let v0 = v0.on(a.grid())?;
            let top = a.power(&v0, n0 - 1)?;
            let a0 = make_complement_operator(&a, &top, *c)?;
            let res = complement_fixed_point(&a, &a0, &v0, *n0, *gamma0, alpha, &opts)?;
            checks.push(check("complement fixed point between its two bounds", res.report.bracket_ok, ""));
            convergence = report_of(&res.report);
            residuals_csv = Some(res.report.residuals_csv());
            results = json!({"x_star": res.x_star.values(), "top": res.top.values()});
            solution = Some(res.x_tilde);
        }
        DriverConfig::Sum { v0, n0, c0, slope, cap } => {
            let star = solve_auto(&a, &v0.on(a.grid())?, *n0, &opts)?.x_star;
            let a0 = make_saturating_operator(a.grid().clone(), *slope, *cap)?;
            let res = solve_sum(&a, &a0, &star, *c0, &opts)?;
            checks.push(check("perturbed fixed point inside <x*, r* x*>", res.report.bracket_ok, format!("r* = {}", res.r_star)));
            checks.push(check("iterations of A return to x* at the certified rate", res.return_ok, format!("k* = {}", res.return_rate)));
            convergence = report_of(&res.report);
            residuals_csv = Some(res.report.residuals_csv());
            results = serde_json::to_value(&res).unwrap_or(Value::Null);
            solution = Some(res.x_tilde);
        }
        DriverConfig::Counterexample { samples, probe_starts } => {
            results = counterexample(&built, *samples, *probe_starts, &opts, &mut checks)?;
        }
        DriverConfig::Characteristic { samples } => {
            results = characteristic(a.require_profile()?, *samples, cfg.seed, &mut checks)?;
        }
        DriverConfig::Audit {} => {}
    }

    let audit_results = audits(cfg, &mut checks)?;
    let passed = checks.iter().all(|c| c.status == "PASS");
    let report = json!({
        "config": cfg,
        "operator": a.name(),
        "profile": a.profile().map(|p| p.to_string()),
        "driver": cfg.driver.kind(),
        "status": if passed { "passed" } else { "checks-failed" },
        "certificate": certificate,
        "convergence": convergence,
        "results": results,
        "audits": audit_results,
        "budgets": built.budgets(),
        "checklist": checks,
    });
    Ok(RunOutput { report, residuals_csv, solution, passed })
}

fn counterexample(built: &Built, samples: usize, starts: usize, opts: &SolveOptions, checks: &mut Vec<Check>) -> Result<Value> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let moved_by = |op: &OperatorHandle, x: &ConeVector| -> Result<f64> { op.apply(x)?.distance(x) };
    match built {
        Built::Tilde { op, star } => {
            let grid = star.grid().clone();
            let norm = star.sup_norm();
            let (mut fixed, mut moved) = (0, 0);
            for _ in 0..samples {
                let inside: Vec<f64> =
                    star.values().iter().map(|s| (s + norm * rng.gen_range(-0.999..0.999)).max(0.0)).collect();
                if moved_by(op, &ConeVector::new(grid.clone(), inside, 0.0)?)? <= 1e-12 {
                    fixed += 1;
                }
                let bump = rng.gen_range(0..grid.len());
                let outside: Vec<f64> = (0..grid.len())
                    .map(|i| if i == bump { star.values()[i] + norm * rng.gen_range(1.01..3.0) } else { 4.0 * norm * rng.gen::<f64>() })
                    .collect();
                if moved_by(op, &ConeVector::new(grid.clone(), outside, 0.0)?)? >= 1e-3 {
                    moved += 1;
                }
            }
            let verdict = uniqueness_probe(op, star, 0.5, 1.5, starts, opts)?;
            checks.push(check("every sampled point of the ball is fixed", fixed == samples, format!("{fixed} of {samples}")));
            checks.push(check("sampled points outside the closed ball move", moved * 5 >= samples, format!("{moved} of {samples}")));
            checks.push(check("several distinct limits from multiple starts", !verdict.unique && verdict.distinct_count >= 2, format!("{} distinct", verdict.distinct_count)));
            Ok(json!({"fixed": fixed, "moved": moved, "samples": samples, "probe": verdict}))
        }
        Built::Hat { op, star, lambda, .. } => {
            let grid = star.grid().clone();
            let norm = star.sup_norm();
            let mut fixed = 0;
            let mut gap: f64 = 0.0;
            for _ in 0..samples {
                let low = rng.gen_range(0..grid.len());
                let x: Vec<f64> = star
                    .values()
                    .iter()
                    .enumerate()
                    .map(|(i, s)| if i == low { s * rng.gen_range(0.0..(1.0 - lambda) * 0.98) } else { s * rng.gen::<f64>() })
                    .collect();
                if moved_by(op, &ConeVector::new(grid.clone(), x, 0.0)?)? <= 1e-12 {
                    fixed += 1;
                }
                // A point on the sphere of radius lambda ||x*||: both branch
                // formulas must agree there.
                let edge = rng.gen_range(0..grid.len());
                let b: Vec<f64> = star
                    .values()
                    .iter()
                    .enumerate()
                    .map(|(i, s)| if i == edge { s - lambda * norm } else { s - lambda * norm * rng.gen::<f64>() })
                    .collect();
                let p = hat_projection(&b, star.values(), norm, *lambda);
                for ((pi, s), x) in p.iter().zip(star.values()).zip(&b) {
                    gap = gap.max((pi - (s - x)).abs());
                }
            }
            checks.push(check("every sampled point far from x* is fixed", fixed == samples, format!("{fixed} of {samples}")));
            checks.push(check("projection continuous across the sphere", gap <= 1e-12, format!("{gap:e}")));
            Ok(json!({"fixed": fixed, "samples": samples, "boundary_gap": gap}))
        }
        _ => Err(Error::Domain("the counterexample driver needs a tilde or hat operator".into())),
    }
}

fn characteristic(p: &ConcavityProfile, samples: usize, seed: u64, checks: &mut Vec<Check>) -> Result<Value> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_tau, mut worst_delta, mut envelope_violations): (f64, f64, usize) = (0.0, 0.0, 0);
    for _ in 0..samples {
        let s: f64 = rng.gen_range(1e-6..1.0 - 1e-6);
        let r0: f64 = rng.gen_range(1.0 + 1e-6..100.0);
        let tau = solve_tau(p, s)?;
        let delta = solve_delta(p, r0)?;
        if let ConcavityProfile::Power { gamma } = p {
            let e = 1.0 / (1.0 - gamma);
            worst_tau = worst_tau.max((tau / s.powf(e) - 1.0).abs());
            worst_delta = worst_delta.max((delta / r0.powf(e) - 1.0).abs());
        }
        let k = rate_k(p, s)?;
        let mut phi_n = s;
        for n in 0..=200 {
            if 1.0 - phi_n > (1.0 - s) * k.powi(n) + 1e-12 {
                envelope_violations += 1;
            }
            phi_n = p.eval(phi_n);
        }
    }
    if matches!(p, ConcavityProfile::Power { .. }) {
        checks.push(check("tau* matches its closed form", worst_tau <= 1e-12, format!("worst relative error {worst_tau:e}")));
        checks.push(check("delta matches its closed form", worst_delta <= 1e-10, format!("worst relative error {worst_delta:e}")));
    }
    checks.push(check("profile iterates inside the geometric envelope", envelope_violations == 0, format!("{envelope_violations} violations")));
    Ok(json!({"profile": p.to_string(), "samples": samples, "worst_tau_error": worst_tau, "worst_delta_error": worst_delta,
        "envelope_violations": envelope_violations}))
}

/// Process exit status for a failed run: 3 for non-convergence, 2 when a
/// hypothesis or certificate failed, 1 for validation and I/O errors.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonConvergence { .. } => 3,
        e if e.is_certification() => 2,
        _ => 1,
    }
}

/// Built-in experiments with a one-line description.
pub const BUILTINS: &[(&str, &str)] = &[
    ("linf-theorem1", "sequence-space operator, N = 64, decreasing iterations from 2 to all ones"),
    ("characteristic-oracle", "characteristic roots of sigma^(1/2) against their closed forms"),
    ("scalar-rate", "sqrt on one node from 1e4: residuals against the certified rate"),
    ("phi-envelope", "iterates of sigma^(1/3) inside the geometric envelope"),
    ("padic-n1-p3", "p-adic string, n = 1, p = 3, beta = 1, 1601 nodes on [0,12]"),
    ("urysohn", "Urysohn instance, eta = 1, alpha = 1/2, 2001 nodes on [-8,8]"),
    ("heat", "semilinear heat mild solution on a 201 x 101 grid of [-8,8] x [0,4]"),
    ("uniqueness-scalar", "multi-start uniqueness probe for sqrt on <0.01, 100>"),
    ("complement-sqrt", "complement operator fixed point for sqrt with c = 1/2"),
    ("sum-perturbation", "fixed point of sqrt(x) + min(x,1)/2 and the return to x* = 1"),
    ("periodic-collapse", "periodic points of sqrt with m0 = 3 collapsing to 1"),
    ("periodic-gcd2", "cyclic power operator, m0 = 6, |i0 - j0| = 2: two residue classes"),
    ("counterexample-tilde", "identity on a ball around x*: a continuum of fixed points"),
    ("counterexample-hat", "identity far from x* on <0, x*>: a continuum of fixed points"),
    ("audit-gallery", "monotonicity and concavity audits of the sequence-space operator"),
];

pub fn builtin(name: &str) -> Option<ExperimentConfig> {
    use DriverConfig as D;
    use OperatorConfig as O;
    let linf = O::Linf { n: 64 };
    let sqrt = O::ScalarPower { alpha: 0.5 };
    let (operator, driver, tol) = match name {
        "linf-theorem1" => (linf, D::Decreasing { v0: Start::Constant(2.0), n0: 1, sigma0: Some(1.0 / 3.0) }, 1e-12),
        "characteristic-oracle" => (sqrt, D::Characteristic { samples: 20 }, 1e-12),
        "scalar-rate" => (sqrt, D::Decreasing { v0: Start::Constant(1e4), n0: 1, sigma0: Some(0.01) }, 1e-14),
        "phi-envelope" => (O::ScalarPower { alpha: 1.0 / 3.0 }, D::Characteristic { samples: 50 }, 1e-12),
        "padic-n1-p3" => (
            O::Padic { p: 3, betas: vec![1.0], radius: 12.0, nodes: 1601, gamma: None },
            D::Decreasing { v0: Start::Constant(1.0), n0: 2, sigma0: None },
            1e-10,
        ),
        "urysohn" => (
            O::Urysohn { eta: 1.0, alpha: 0.5, radius: 8.0, nodes: 2001 },
            D::Decreasing { v0: Start::Constant(1.0), n0: 1, sigma0: None },
            1e-12,
        ),
        "heat" => (
            O::Heat { xi: 1.0, radius: 8.0, nx: 201, horizon: 4.0, nt: 101 },
            D::General { v0: Start::Constant(1.0), n0: 2, r1: None, r2: None },
            1e-9,
        ),
        "uniqueness-scalar" => {
            (sqrt, D::Uniqueness { v0: Start::Constant(0.5), n0: 1, r1: 0.01, r2: 100.0, starts: 8 }, 1e-12)
        }
        "complement-sqrt" => {
            (sqrt, D::Complement { v0: Start::Constant(4.0), n0: 2, gamma0: 0.25, c: 0.5 }, 1e-12)
        }
        "sum-perturbation" => {
            (sqrt, D::Sum { v0: Start::Constant(4.0), n0: 1, c0: 0.5, slope: 0.5, cap: 1.0 }, 1e-13)
        }
        "periodic-collapse" => (
            sqrt,
            D::Periodic { v0: Start::Constant(0.5), n0: 3, m0: 3, i0: 0, j0: 2, d1: 0.5, d2: 2.0 },
            1e-12,
        ),
        "periodic-gcd2" => (
            O::CyclicPower { n: 2, alpha: 0.5 },
            D::Periodic { v0: Start::Values(vec![4.0, 0.25]), n0: 6, m0: 6, i0: 0, j0: 2, d1: 0.5, d2: 2.0 },
            1e-12,
        ),
        "counterexample-tilde" => {
            (O::Tilde { base: Box::new(linf), star: 1.0 }, D::Counterexample { samples: 100, probe_starts: 8 }, 1e-12)
        }
        "counterexample-hat" => (
            O::Hat { base: Box::new(linf), star: 1.0, lambda: 0.5 },
            D::Counterexample { samples: 100, probe_starts: 8 },
            1e-12,
        ),
        "audit-gallery" => (linf, D::Audit {}, 1e-12),
        _ => return None,
    };
    Some(ExperimentConfig {
        name: name.into(),
        operator,
        driver,
        tolerances: Tolerances { tol, ..Tolerances::default() },
        seed: default_seed(),
        audit_samples: default_audit_samples(),
        output: OutputConfig::default(),
    })
}

/// Text for `conefix list`.
pub fn list_experiments() -> String {
    BUILTINS.iter().map(|(n, d)| format!("{n:<24} {d}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_listed_builtin_resolves_and_validates() {
        for (name, _) in BUILTINS {
            let cfg = builtin(name).unwrap_or_else(|| panic!("{name}"));
            cfg.validate().unwrap();
            let text = serde_json::to_string(&cfg).unwrap();
            assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
        }
        let list = list_experiments();
        for name in ["linf-theorem1", "padic-n1-p3", "counterexample-tilde"] {
            assert!(list.contains(name));
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = serde_json::to_value(builtin("linf-theorem1").unwrap()).unwrap();
        v["extra"] = json!(1);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
        let mut v = serde_json::to_value(builtin("linf-theorem1").unwrap()).unwrap();
        v["driver"]["bogus"] = json!(1);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn sigma0_outside_unit_interval_is_a_validation_error() {
        let mut cfg = builtin("linf-theorem1").unwrap();
        cfg.driver = DriverConfig::Decreasing { v0: Start::Constant(2.0), n0: 1, sigma0: Some(1.2) };
        let e = cfg.validate().unwrap_err();
        assert!(e.to_string().contains("sigma0 must lie in (0,1)"));
        assert_eq!(exit_code(&e), 1);
    }

    #[test]
    fn small_builtins_pass() {
        for name in [
            "linf-theorem1",
            "characteristic-oracle",
            "scalar-rate",
            "phi-envelope",
            "uniqueness-scalar",
            "complement-sqrt",
            "sum-perturbation",
            "periodic-collapse",
            "periodic-gcd2",
            "counterexample-tilde",
            "counterexample-hat",
            "audit-gallery",
        ] {
            let out = run(&builtin(name).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(out.passed, "{name}: {}", serde_json::to_string_pretty(&out.report["checklist"]).unwrap());
        }
    }

    #[test]
    fn complement_examples() {
        let mut cfg = builtin("complement-sqrt").unwrap();
        let out = run(&cfg).unwrap();
        assert!((out.solution.unwrap().values()[0] - 1.75).abs() <= 1e-10);
        cfg.driver = DriverConfig::Complement { v0: Start::Constant(4.0), n0: 2, gamma0: 0.25, c: 1.0 };
        let out = run(&cfg).unwrap();
        assert!((out.solution.unwrap().values()[0] - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn reports_are_deterministic() {
        let cfg = builtin("counterexample-tilde").unwrap();
        let a = serde_json::to_string(&run(&cfg).unwrap().report).unwrap();
        let b = serde_json::to_string(&run(&cfg).unwrap().report).unwrap();
        assert_eq!(a, b);
    }
}
