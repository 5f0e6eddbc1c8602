//! Iteration drivers with a-priori certificates.
//!
//! Every driver first checks its hypothesis numerically (a two-sided bracket
//! between consecutive powers of the operator), derives the certificate from
//! the concavity profile, then runs successive approximations. A run stops at
//! the first step with `||A x_n - x_n|| <= tol * (1 - k)`, which bounds the
//! distance to the limit by `tol` through the geometric tail, and returns
//! `x_n`. The fixed-point residual is the last measured step, never inferred.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::concavity::{rate_k, rate_k_general, solve_delta, solve_tau, ConcavityProfile};
use crate::cone::{ConeVector, ConicalSegment, Grid, DEFAULT_ORDER_TOL};
use crate::error::{Error, Result};

pub type ApplyFn = dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync;

/// Upper corner of the sampling box used when an operator is declared
/// concave on the whole cone.
pub const WHOLE_CONE_BOX: f64 = 4.0;
/// Number of random points for sampled hypothesis checks.
pub const HYPOTHESIS_SAMPLES: usize = 50;
/// Number of random points for the monotonicity and concavity audits.
pub const AUDIT_SAMPLES: usize = 100;
/// Cap on the analytic squeeze horizon of the uniqueness probe.
pub const MAX_HORIZON: usize = 1_000_000;

/// Where the declared concavity inequality is claimed to hold.
#[derive(Debug, Clone)]
pub enum ConcavityDomain {
    Segment(ConicalSegment),
    WholeCone,
}

/// An evaluable monotone operator with its declared concavity profile.
#[derive(Clone)]
pub struct OperatorHandle {
    name: String,
    grid: Arc<Grid>,
    apply_fn: Arc<ApplyFn>,
    profile: Option<ConcavityProfile>,
    domain: ConcavityDomain,
    order_tol: f64,
}

impl fmt::Debug for OperatorHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorHandle")
            .field("name", &self.name)
            .field("grid", &self.grid.header())
            .field("profile", &self.profile)
            .field("domain", &self.domain)
            .finish()
    }
}

impl OperatorHandle {
    pub fn new(
        name: impl Into<String>,
        grid: Arc<Grid>,
        profile: Option<ConcavityProfile>,
        f: impl Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            grid,
            apply_fn: Arc::new(f),
            profile,
            domain: ConcavityDomain::WholeCone,
            order_tol: DEFAULT_ORDER_TOL,
        }
    }

    pub fn with_domain(mut self, domain: ConcavityDomain) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_order_tol(mut self, order_tol: f64) -> Self {
        self.order_tol = order_tol;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn profile(&self) -> Option<&ConcavityProfile> {
        self.profile.as_ref()
    }

    pub fn domain(&self) -> &ConcavityDomain {
        &self.domain
    }

    pub fn order_tol(&self) -> f64 {
        self.order_tol
    }

    pub fn require_profile(&self) -> Result<&ConcavityProfile> {
        self.profile
            .as_ref()
            .ok_or_else(|| Error::Precondition(format!("operator {} declares no concavity profile", self.name)))
    }

    /// Raw evaluation on values, without cone checks.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        (self.apply_fn)(x)
    }

    /// `A x`, checking grid compatibility and that the result lies in the cone.
    pub fn apply(&self, x: &ConeVector) -> Result<ConeVector> {
        if !(Arc::ptr_eq(x.grid(), &self.grid) || **x.grid() == *self.grid) {
            return Err(Error::IncompatibleGrid(format!(
                "operator {} lives on {}, input on {}",
                self.name,
                self.grid.header(),
                x.grid().header()
            )));
        }
        let out = (self.apply_fn)(x.values())?;
        ConeVector::new(self.grid.clone(), out, self.order_tol)
    }

    /// `A^n x`.
    pub fn power(&self, x: &ConeVector, n: usize) -> Result<ConeVector> {
        let mut y = x.clone();
        for _ in 0..n {
            y = self.apply(&y)?;
        }
        Ok(y)
    }
}

/// Tolerances shared by all drivers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveOptions {
    /// Target distance of the returned iterate to the limit.
    pub tol: f64,
    pub max_iter: usize,
    /// Slack for order comparisons and cone membership.
    pub order_tol: f64,
    /// Relative floor below which bracket ratios are not formed.
    pub floor: f64,
    /// Seed for sampled hypothesis checks and random starts.
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 10_000, order_tol: DEFAULT_ORDER_TOL, floor: 1e-8, seed: 20_240_601 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Decreasing,
    Increasing,
    General,
    Complement,
    Sum,
    Periodic,
    Probe,
}

/// The a-priori guarantees of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationCertificate {
    pub mode: Mode,
    pub n0: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r2: Option<f64>,
    /// Lower bracket factor (absent in increasing mode, where the start
    /// itself is the lower bracket).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub rate: f64,
}

/// Per-step record of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub mode: Mode,
    /// Number of steps that advanced the iterate.
    pub iterations: usize,
    /// Iterates held in memory at any time.
    pub iterates_kept: usize,
    /// `||x_{n+1} - x_n||` for every evaluated step, the last being the
    /// stopping step.
    pub residuals: Vec<f64>,
    /// A-priori bound on each residual (empty when the driver has none).
    pub certified_bounds: Vec<f64>,
    pub certified_rate: f64,
    /// Least-squares geometric rate over the last 10 positive residuals.
    pub observed_rate: Option<f64>,
    /// Whether the limit lies in the certified segment.
    pub bracket_ok: bool,
    /// Whether every residual respected its a-priori bound.
    pub bounds_ok: bool,
    /// `||A x* - x*||` measured at the returned iterate.
    pub fixed_point_residual: f64,
    /// Sup norm of the starting iterate, the natural scale of the residuals.
    pub scale: f64,
}

/// Outcome of checking `residuals[n] <= C k^n` with `C` fit at `n = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateCheck {
    pub constant: f64,
    pub checked: usize,
    pub violations: usize,
}

impl ConvergenceReport {
    fn new(mode: Mode, rate: f64, scale: f64) -> Self {
        Self {
            mode,
            iterations: 0,
            iterates_kept: 2,
            residuals: Vec::new(),
            certified_bounds: Vec::new(),
            certified_rate: rate,
            observed_rate: None,
            bracket_ok: false,
            bounds_ok: true,
            fixed_point_residual: f64::NAN,
            scale,
        }
    }

    fn finish(&mut self, order_tol: f64) {
        self.observed_rate = observed_rate(&self.residuals);
        self.bounds_ok = self
            .residuals
            .iter()
            .zip(&self.certified_bounds)
            .all(|(r, b)| *r <= b * (1.0 + 1e-12) + order_tol);
    }

    /// Checks `residuals[n] <= C rate^n` for every `n >= 1` whose residual is
    /// above `100 eps` times the scale.
    pub fn rate_dominance(&self, rate: f64) -> RateCheck {
        if self.residuals.len() < 2 {
            return RateCheck { constant: 0.0, checked: 0, violations: 0 };
        }
        let c = self.residuals[1] / rate;
        let floor = 100.0 * f64::EPSILON * self.scale.max(f64::MIN_POSITIVE);
        let mut checked = 0;
        let mut violations = 0;
        for (n, &r) in self.residuals.iter().enumerate().skip(1) {
            if r <= floor {
                continue;
            }
            checked += 1;
            if r > c * rate.powi(n as i32) * (1.0 + 1e-12) {
                violations += 1;
            }
        }
        RateCheck { constant: c, checked, violations }
    }

    /// Three-column CSV `n,residual,certified_bound`.
    pub fn residuals_csv(&self) -> String {
        let mut s = String::from("n,residual,certified_bound\n");
        for (n, r) in self.residuals.iter().enumerate() {
            let b = self.certified_bounds.get(n).map(|b| format!("{b:?}")).unwrap_or_default();
            s.push_str(&format!("{n},{r:?},{b}\n"));
        }
        s
    }
}

/// Slope of a least-squares line through `log r_n` over the last 10 positive
/// residuals, exponentiated.
pub fn observed_rate(residuals: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = residuals
        .iter()
        .enumerate()
        .filter(|(_, r)| **r > 0.0 && r.is_finite())
        .map(|(n, r)| (n as f64, r.ln()))
        .collect();
    let pts = &pts[pts.len().saturating_sub(10)..];
    if pts.len() < 3 {
        return None;
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / m, sy / m);
    let (num, den) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx) * (x - mx)));
    Some((num / den).exp())
}

/// A converged run.
#[derive(Debug, Clone)]
pub struct Solution {
    pub x_star: ConeVector,
    pub certificate: IterationCertificate,
    pub report: ConvergenceReport,
}

/// Successive approximations `x_{n+1} = A x_n` from `x0` with the shared
/// stopping rule. `bound(n)` is the a-priori bound on the `n`-th residual,
/// `check(n, x_n, x_{n+1})` enforces per-step invariants.
fn iterate(
    a: &OperatorHandle,
    x0: ConeVector,
    rate: f64,
    opts: &SolveOptions,
    mode: Mode,
    mut bound: impl FnMut(usize) -> Option<f64>,
    mut check: impl FnMut(usize, &ConeVector, &ConeVector) -> Result<()>,
) -> Result<(ConeVector, ConvergenceReport)> {
    let threshold = opts.tol * (1.0 - rate);
    let mut report = ConvergenceReport::new(mode, rate, x0.sup_norm());
    let mut x = x0;
    for n in 0..=opts.max_iter {
        let y = a.apply(&x)?;
        let d = y.distance(&x)?;
        report.residuals.push(d);
        if let Some(b) = bound(n) {
            report.certified_bounds.push(b);
        }
        check(n, &x, &y)?;
        if d <= threshold {
            report.iterations = n;
            report.fixed_point_residual = d;
            report.finish(opts.order_tol);
            return Ok((x, report));
        }
        x = y;
    }
    report.iterations = opts.max_iter;
    report.fixed_point_residual = *report.residuals.last().unwrap_or(&f64::NAN);
    report.finish(opts.order_tol);
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        last_step: report.fixed_point_residual,
        report: Box::new(report),
    })
}

/// First node where `a > b + tol`, with the excess.
fn first_excess(a: &ConeVector, b: &ConeVector, tol: f64) -> Option<(usize, f64)> {
    a.values()
        .iter()
        .zip(b.values())
        .enumerate()
        .find(|(_, (x, y))| **x > **y + tol)
        .map(|(i, (x, y))| (i, x - y))
}

fn check_open_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must lie in (0,1)")))
    }
}

/// `(r1, r2)`: the extreme componentwise ratios of `A^{n0} v0` to
/// `A^{n0-m0} v0` over nodes where the denominator is above
/// `floor * ||A^{n0-m0} v0||`. Nodes below the floor must also have a
/// numerator below the floor.
pub fn verify_bracket(a: &OperatorHandle, v0: &ConeVector, n0: usize, m0: usize, floor: f64) -> Result<(f64, f64)> {
    if m0 < 1 || n0 < m0 {
        return Err(Error::Domain(format!("need n0 >= m0 >= 1, got n0 = {n0}, m0 = {m0}")));
    }
    if !(floor > 0.0) {
        return Err(Error::Domain(format!("floor must be > 0, got {floor}")));
    }
    let den = a.power(v0, n0 - m0)?;
    let num = a.power(&den, m0)?;
    let (fd, fnum) = (floor * den.sup_norm(), floor * num.sup_norm());
    let mut r1 = f64::INFINITY;
    let mut r2 = f64::NEG_INFINITY;
    for (i, (&d, &q)) in den.values().iter().zip(num.values()).enumerate() {
        if d >= fd && d > 0.0 {
            let r = q / d;
            r1 = r1.min(r);
            r2 = r2.max(r);
        } else if q >= fnum && q > 0.0 {
            return Err(Error::Certification(format!(
                "bracket fails at node {i}: A^{n0} v0 = {q:e} while A^{} v0 = {d:e} is below the floor",
                n0 - m0
            )));
        }
    }
    if !r1.is_finite() {
        return Err(Error::Certification("bracket has no node above the floor".into()));
    }
    if r1 <= 0.0 {
        return Err(Error::Certification(format!("lower bracket ratio {r1} is not positive")));
    }
    Ok((r1, r2))
}

/// Monotonically decreasing iterations from `x0 = A^{n0-1} v0` under
/// `sigma0 x0 <= A x0 <= x0`.
pub fn solve_decreasing(a: &OperatorHandle, v0: &ConeVector, n0: usize, sigma0: f64, opts: &SolveOptions) -> Result<Solution> {
    check_open_unit("sigma0", sigma0)?;
    if n0 < 1 {
        return Err(Error::Domain("n0 must be >= 1".into()));
    }
    let phi = a.require_profile()?.clone();
    let (r1, r2) = verify_bracket(a, v0, n0, 1, opts.floor)?;
    if r2 > 1.0 + 1e-12 {
        return Err(Error::Precondition(format!(
            "A^{n0} v0 is not below A^{} v0 (largest ratio {r2})",
            n0 - 1
        )));
    }
    if sigma0 > r1 * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!("sigma0 = {sigma0} exceeds the certified ratio {r1}")));
    }
    let x0 = a.power(v0, n0 - 1)?;
    let scale = x0.sup_norm();
    if scale == 0.0 {
        return Err(Error::Degenerate("starting iterate is zero".into()));
    }
    let tau = solve_tau(&phi, sigma0)?;
    let k = rate_k(&phi, sigma0)?;
    let mut phi_n = sigma0;
    let bound = |n: usize| {
        if n > 0 {
            phi_n = phi.eval(phi_n);
        }
        Some((1.0 - phi_n) * scale)
    };
    let tol = opts.order_tol;
    let (x, mut report) = iterate(a, x0.clone(), k, opts, Mode::Decreasing, bound, |n, x, y| {
        match first_excess(y, x, tol) {
            Some((node, excess)) => Err(Error::Monotonicity { step: n, node, excess }),
            None => Ok(()),
        }
    })?;
    let seg = ConicalSegment::new(x0.scale(tau), x0, tol)?;
    report.bracket_ok = seg.contains(&x, tol)?;
    Ok(Solution {
        x_star: x,
        certificate: IterationCertificate {
            mode: Mode::Decreasing,
            n0,
            sigma0: Some(sigma0),
            r0: None,
            r1: Some(r1),
            r2: Some(r2),
            tau_star: Some(tau),
            delta: None,
            rate: k,
        },
        report,
    })
}

/// Monotonically increasing iterations from `x0 = A^{n0-1} v0` under
/// `x0 <= A x0 <= r0 x0`.
pub fn solve_increasing(a: &OperatorHandle, v0: &ConeVector, n0: usize, r0: f64, opts: &SolveOptions) -> Result<Solution> {
    if !(r0 > 1.0 && r0.is_finite()) {
        return Err(Error::Domain(format!("r0 must be > 1, got {r0}")));
    }
    if n0 < 1 {
        return Err(Error::Domain("n0 must be >= 1".into()));
    }
    let phi = a.require_profile()?.clone();
    let (r1, r2) = verify_bracket(a, v0, n0, 1, opts.floor)?;
    if r1 < 1.0 - 1e-12 {
        return Err(Error::Precondition(format!(
            "A^{n0} v0 is not above A^{} v0 (smallest ratio {r1})",
            n0 - 1
        )));
    }
    if r2 > r0 * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!("ratio {r2} exceeds r0 = {r0}")));
    }
    let x0 = a.power(v0, n0 - 1)?;
    let scale = x0.sup_norm();
    if scale == 0.0 {
        return Err(Error::Degenerate("starting iterate is zero".into()));
    }
    let delta = solve_delta(&phi, r0)?;
    let k = rate_k(&phi, 1.0 / r0)?;
    let mut phi_n = 1.0 / r0;
    let bound = |n: usize| {
        if n > 0 {
            phi_n = phi.eval(phi_n);
        }
        Some((1.0 / phi_n - 1.0) * delta * scale)
    };
    let tol = opts.order_tol;
    let (x, mut report) = iterate(a, x0.clone(), k, opts, Mode::Increasing, bound, |n, x, y| {
        match first_excess(x, y, tol) {
            Some((node, excess)) => Err(Error::Monotonicity { step: n, node, excess }),
            None => Ok(()),
        }
    })?;
    let seg = ConicalSegment::new(x0.clone(), x0.scale(delta), tol)?;
    report.bracket_ok = seg.contains(&x, tol)?;
    Ok(Solution {
        x_star: x,
        certificate: IterationCertificate {
            mode: Mode::Increasing,
            n0,
            sigma0: None,
            r0: Some(r0),
            r1: Some(r1),
            r2: Some(r2),
            tau_star: None,
            delta: Some(delta),
            rate: k,
        },
        report,
    })
}

/// Iterations from `x0 = A^{n0-1} v0` under `r1 x0 <= A x0 <= r2 x0`. Every
/// iterate must stay in `<tau1 x0, delta1 x0>`.
pub fn solve_general(
    a: &OperatorHandle,
    v0: &ConeVector,
    n0: usize,
    r1: f64,
    r2: f64,
    opts: &SolveOptions,
) -> Result<Solution> {
    if !(r1 > 0.0 && r1 < 1.0 && r2 > 1.0 && r2.is_finite()) {
        return Err(Error::Domain(format!("need 0 < r1 < 1 < r2, got r1 = {r1}, r2 = {r2}")));
    }
    if n0 < 1 {
        return Err(Error::Domain("n0 must be >= 1".into()));
    }
    let phi = a.require_profile()?.clone();
    let (q1, q2) = verify_bracket(a, v0, n0, 1, opts.floor)?;
    if q1 < r1 * (1.0 - 1e-12) || q2 > r2 * (1.0 + 1e-12) {
        return Err(Error::Certification(format!(
            "measured ratios [{q1}, {q2}] are not inside the declared bracket [{r1}, {r2}]"
        )));
    }
    let x0 = a.power(v0, n0 - 1)?;
    let scale = x0.sup_norm();
    if scale == 0.0 {
        return Err(Error::Degenerate("starting iterate is zero".into()));
    }
    let tau1 = solve_tau(&phi, r1)?;
    let delta1 = solve_delta(&phi, r2)?;
    let k = rate_k_general(&phi, r1, r2)?;
    let tol = opts.order_tol;
    let seg = ConicalSegment::new(x0.scale(tau1), x0.scale(delta1), tol)?;
    let (mut an, mut bn) = (1.0 / r2, r1);
    let bound = |n: usize| {
        if n > 0 {
            an = phi.eval(an);
            bn = phi.eval(bn);
        }
        Some((1.0 / an - 1.0).max(1.0 - bn) * delta1 * scale)
    };
    let (x, mut report) = iterate(a, x0.clone(), k, opts, Mode::General, bound, |n, _, y| {
        if seg.contains(y, tol)? {
            Ok(())
        } else {
            Err(Error::Certification(format!("iterate {} left the certified segment", n + 1)))
        }
    })?;
    report.bracket_ok = seg.contains(&x, tol)?;
    Ok(Solution {
        x_star: x,
        certificate: IterationCertificate {
            mode: Mode::General,
            n0,
            sigma0: None,
            r0: None,
            r1: Some(r1),
            r2: Some(r2),
            tau_star: Some(tau1),
            delta: Some(delta1),
            rate: k,
        },
        report,
    })
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random point of `<lo, hi>`, drawn componentwise.
fn sample_between(rng: &mut ChaCha8Rng, lo: &ConeVector, hi: &ConeVector) -> ConeVector {
    let vals = lo.values().iter().zip(hi.values()).map(|(l, h)| l + rng.gen::<f64>() * (h - l)).collect();
    ConeVector::signed(lo.grid().clone(), vals).expect("same grid")
}

/// Fixed point of a complement operator `A0` trapped between
/// `top - gamma0^{1-alpha} A(top - u)` and `top - A(top - u)`, with
/// `top = A^{n0-1} v0`.
#[derive(Debug, Clone)]
pub struct ComplementResult {
    pub x_tilde: ConeVector,
    pub x_star: ConeVector,
    pub top: ConeVector,
    pub report: ConvergenceReport,
}

#[allow(clippy::too_many_arguments)]
pub fn complement_fixed_point(
    a: &OperatorHandle,
    a0: &OperatorHandle,
    v0: &ConeVector,
    n0: usize,
    gamma0: f64,
    alpha: f64,
    opts: &SolveOptions,
) -> Result<ComplementResult> {
    check_open_unit("gamma0", gamma0)?;
    check_open_unit("alpha", alpha)?;
    match a.require_profile()? {
        ConcavityProfile::Power { gamma } if (gamma - alpha).abs() <= 1e-15 => {}
        other => {
            return Err(Error::Precondition(format!("A must have profile power:{alpha}, declares {other}")));
        }
    }
    let top = a.power(v0, n0.saturating_sub(1))?;
    let next = a.apply(&top)?;
    if next.distance(&top)? <= 10.0 * opts.tol {
        return Err(Error::Precondition("A^{n0} v0 coincides with A^{n0-1} v0".into()));
    }
    let (r1, _) = verify_bracket(a, v0, n0, 1, opts.floor)?;
    let star = solve_decreasing(a, v0, n0, r1.min(1.0 - 1e-6), opts)?;
    let x_star = star.x_star;
    let tol = opts.order_tol;

    // Two-sided inequality on random points of <0, top>.
    let mut r = rng(opts.seed);
    let zero = ConeVector::zeros(top.grid().clone());
    let lift = gamma0.powf(1.0 - alpha);
    for s in 0..HYPOTHESIS_SAMPLES {
        let u = sample_between(&mut r, &zero, &top);
        let au = a.apply(&ConeVector::new(top.grid().clone(), top.sub(&u)?.into_values(), tol)?)?;
        let a0u = a0.apply(&u)?;
        let upper = top.sub(&au.scale(lift))?;
        let lower = top.sub(&au)?;
        if let Some((node, excess)) = first_excess(&a0u, &upper, tol) {
            return Err(Error::Precondition(format!(
                "complement upper inequality fails on sample {s} at node {node} by {excess:e}"
            )));
        }
        if let Some((node, excess)) = first_excess(&lower, &a0u, tol) {
            return Err(Error::Precondition(format!(
                "complement lower inequality fails on sample {s} at node {node} by {excess:e}"
            )));
        }
    }

    let x0 = ConeVector::new(top.grid().clone(), top.sub(&x_star)?.into_values(), tol)?;
    let rate = star.certificate.rate;
    let (x, mut report) = iterate(a0, x0, rate, opts, Mode::Complement, |_| None, |n, x, y| {
        match first_excess(x, y, tol) {
            Some((node, excess)) => Err(Error::Monotonicity { step: n, node, excess }),
            None => Ok(()),
        }
    })?;
    if x.sup_norm() <= 10.0 * opts.tol {
        return Err(Error::Degenerate("complement fixed point is zero".into()));
    }
    if x.distance(&top)? <= 10.0 * opts.tol {
        return Err(Error::Degenerate("complement fixed point coincides with A^{n0-1} v0".into()));
    }
    let lo = top.sub(&x_star)?;
    let hi = top.sub(&x_star.scale(gamma0))?;
    report.bracket_ok = crate::cone::leq(&lo, &x, tol)? && crate::cone::leq(&x, &hi, tol)?;
    if !report.bracket_ok {
        return Err(Error::Certification("complement fixed point leaves its two-sided bound".into()));
    }
    Ok(ComplementResult { x_tilde: x, x_star, top, report })
}

/// Fixed point of `A + A0` bracketed in `<x*, r* x*>`, plus the return of
/// plain `A` iterations from it back to `x*`.
#[derive(Debug, Clone, Serialize)]
pub struct SumResult {
    #[serde(skip)]
    pub x_tilde: ConeVector,
    pub r_star: f64,
    pub profile: String,
    pub report: ConvergenceReport,
    /// `||A^n x~ - x*||` for `n = 0, 1, ...`.
    pub return_residuals: Vec<f64>,
    pub return_rate: f64,
    /// Constant fit at `n = 1` in `C1 r* ||x*|| k*^n`.
    pub return_constant: f64,
    pub return_ok: bool,
}

pub fn solve_sum(
    a: &OperatorHandle,
    a0: &OperatorHandle,
    x_star: &ConeVector,
    c0: f64,
    opts: &SolveOptions,
) -> Result<SumResult> {
    if !(c0 > 0.0 && c0.is_finite()) {
        return Err(Error::Domain(format!("C0 must be > 0, got {c0}")));
    }
    let phi = a.require_profile()?.clone();
    let tol = opts.order_tol;
    let fixed = a.apply(x_star)?.distance(x_star)?;
    if fixed > opts.tol {
        return Err(Error::Precondition(format!("x* is not fixed by A (residual {fixed:e})")));
    }
    let grid = x_star.grid().clone();
    let zero = ConeVector::zeros(grid.clone());
    if a0.apply(&zero)?.sup_norm() > tol {
        return Err(Error::Precondition("A0 is not critical (A0 0 != 0)".into()));
    }
    let r_star = solve_delta(&phi, c0 + 1.0)?;
    let big = x_star.scale(2.0 * r_star);
    let seg_hi = x_star.scale(r_star);
    let mut r = rng(opts.seed);
    for s in 0..HYPOTHESIS_SAMPLES {
        let u = sample_between(&mut r, &zero, &big);
        let bound = a.apply(&u)?.scale(c0);
        if let Some((node, excess)) = first_excess(&a0.apply(&u)?, &bound, tol) {
            return Err(Error::Precondition(format!("A0 u <= C0 A u fails on sample {s} at node {node} by {excess:e}")));
        }
        let v = sample_between(&mut r, &u, &big);
        if let Some((node, excess)) = first_excess(&a0.apply(&u)?, &a0.apply(&v)?, tol) {
            return Err(Error::Precondition(format!("A0 is not monotone on sample {s} at node {node} ({excess:e})")));
        }
        let w = sample_between(&mut r, x_star, &seg_hi);
        let t: f64 = r.gen();
        let lhs = a0.apply(&w.scale(t))?;
        let rhs = a0.apply(&w)?.scale(t);
        if let Some((node, excess)) = first_excess(&rhs, &lhs, tol) {
            return Err(Error::Precondition(format!("A0(t u) >= t A0 u fails on sample {s} at node {node} ({excess:e})")));
        }
    }

    let mix = ConcavityProfile::sum_mix(phi.clone(), c0)?;
    let (fa, fa0) = (a.clone(), a0.clone());
    let sum = OperatorHandle::new(format!("{} + {}", a.name(), a0.name()), grid.clone(), Some(mix.clone()), move |x| {
        let y = fa.eval(x)?;
        let z = fa0.eval(x)?;
        Ok(y.iter().zip(&z).map(|(p, q)| p + q).collect())
    })
    .with_order_tol(tol);
    let rate = rate_k(&mix, 1.0 / (c0 + 1.0))?;
    let (x, mut report) = iterate(&sum, x_star.clone(), rate, opts, Mode::Sum, |_| None, |n, x, y| {
        match first_excess(x, y, tol) {
            Some((node, excess)) => Err(Error::Monotonicity { step: n, node, excess }),
            None => Ok(()),
        }
    })?;
    let seg = ConicalSegment::new(x_star.clone(), seg_hi, tol)?;
    report.bracket_ok = seg.contains(&x, tol)?;
    if !report.bracket_ok {
        return Err(Error::Certification("fixed point of A + A0 leaves <x*, r* x*>".into()));
    }

    // Plain A iterations from the new fixed point return to x*.
    let k_star = rate_k(&phi, 1.0 / r_star)?;
    let norm = x_star.sup_norm();
    let mut errs = vec![x.distance(x_star)?];
    let mut y = x.clone();
    for _ in 0..opts.max_iter {
        y = a.apply(&y)?;
        let e = y.distance(x_star)?;
        errs.push(e);
        if e <= opts.tol {
            break;
        }
    }
    let scale = r_star * norm;
    let c1 = if errs.len() > 1 { errs[1] / (scale * k_star) } else { 0.0 };
    let floor = 100.0 * f64::EPSILON * norm.max(f64::MIN_POSITIVE) + opts.tol;
    let return_ok = errs
        .iter()
        .enumerate()
        .skip(1)
        .all(|(n, &e)| e <= floor || e <= c1 * scale * k_star.powi(n as i32) * (1.0 + 1e-9));
    Ok(SumResult {
        x_tilde: x,
        r_star,
        profile: mix.to_string(),
        report,
        return_residuals: errs,
        return_rate: k_star,
        return_constant: c1,
        return_ok,
    })
}

/// Limits of the interleaved subsequences `x_{m0 k + j}`.
#[derive(Debug, Clone)]
pub struct PeriodicResult {
    pub points: Vec<ConeVector>,
    pub r1: f64,
    pub r2: f64,
    pub rate: f64,
    pub report: ConvergenceReport,
}

pub fn periodic_points(a: &OperatorHandle, v0: &ConeVector, n0: usize, m0: usize, opts: &SolveOptions) -> Result<PeriodicResult> {
    if m0 < 1 || n0 < m0 {
        return Err(Error::Domain(format!("need n0 >= m0 >= 1, got n0 = {n0}, m0 = {m0}")));
    }
    let phi = a.require_profile()?.clone();
    let (q1, q2) = verify_bracket(a, v0, n0, m0, opts.floor)?;
    let r1 = q1.min(1.0 - 1e-3);
    let r2 = q2.max(1.0 + 1e-3);
    let rate = rate_k_general(&phi, r1, r2)?;
    let threshold = opts.tol * (1.0 - rate);
    let x0 = a.power(v0, n0 - m0)?;
    let mut report = ConvergenceReport::new(Mode::Periodic, rate, x0.sup_norm());
    report.iterates_kept = 2 * m0 + 1;
    // Ring of the last 2 m0 + 1 iterates, oldest first.
    let mut ring = std::collections::VecDeque::with_capacity(2 * m0 + 1);
    ring.push_back(x0);
    let mut small_run = 0;
    for n in 1..=opts.max_iter.saturating_mul(m0).max(m0) {
        let next = a.apply(ring.back().expect("nonempty"))?;
        ring.push_back(next);
        if ring.len() > 2 * m0 + 1 {
            ring.pop_front();
        }
        if n < m0 {
            continue;
        }
        let len = ring.len();
        let d = ring[len - 1].distance(&ring[len - 1 - m0])?;
        report.residuals.push(d);
        small_run = if d <= threshold { small_run + 1 } else { 0 };
        if small_run >= m0 && len == 2 * m0 + 1 {
            // The window x_{n-2m0+1..n-m0} maps onto x_{n-m0+1..n} under A^{m0}.
            let mut points = vec![ring[0].clone(); m0];
            for w in 0..m0 {
                let idx = n - 2 * m0 + 1 + w;
                points[idx % m0] = ring[w + 1].clone();
            }
            if let Some(j) = points.iter().position(|p| p.sup_norm() == 0.0) {
                return Err(Error::Degenerate(format!("periodic point {j} is zero")));
            }
            report.iterations = n;
            report.fixed_point_residual = (0..m0)
                .map(|w| ring[len - 1 - w].distance(&ring[len - 1 - w - m0]))
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            report.bracket_ok = true;
            report.finish(opts.order_tol);
            return Ok(PeriodicResult { points, r1, r2, rate, report });
        }
    }
    report.finish(opts.order_tol);
    let last = *report.residuals.last().unwrap_or(&f64::NAN);
    Err(Error::NonConvergence { iterations: opts.max_iter, last_step: last, report: Box::new(report) })
}

/// Outcome of comparing periodic points.
#[derive(Debug, Clone)]
pub enum Collapse {
    /// All points coincide: the common fixed point.
    Collapsed(ConeVector),
    /// `gcd(m0, |i0 - j0|) > 1`: only the residue classes modulo the gcd are
    /// forced to coincide, and they did.
    Classes { gcd: usize, classes: Vec<Vec<usize>> },
}

pub fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn collapse_check(points: &[ConeVector], i0: usize, j0: usize, d1: f64, d2: f64, tol: f64) -> Result<Collapse> {
    let m0 = points.len();
    if i0 == j0 || i0 >= m0 || j0 >= m0 {
        return Err(Error::Domain(format!("need distinct indices below {m0}, got {i0} and {j0}")));
    }
    check_open_unit("d1", d1)?;
    if !(d2 > 1.0) {
        return Err(Error::Domain(format!("d2 must be > 1, got {d2}")));
    }
    let g = gcd(m0, i0.abs_diff(j0));
    if g == 1 {
        let (pi, pj) = (&points[i0], &points[j0]);
        if !(crate::cone::leq(&pi.scale(d1), pj, tol)? && crate::cone::leq(pj, &pi.scale(d2), tol)?) {
            return Err(Error::Precondition(format!("points {i0} and {j0} are not bracketed by [{d1}, {d2}]")));
        }
        for (j, p) in points.iter().enumerate() {
            let d = p.distance(&points[0])?;
            if d > tol {
                return Err(Error::TheoremViolation(format!(
                    "periodic points 0 and {j} differ by {d:e} although the indices are coprime"
                )));
            }
        }
        return Ok(Collapse::Collapsed(points[0].clone()));
    }
    let classes: Vec<Vec<usize>> = (0..g).map(|r| (r..m0).step_by(g).collect()).collect();
    for class in &classes {
        for &j in &class[1..] {
            let d = points[j].distance(&points[class[0]])?;
            if d > tol {
                return Err(Error::TheoremViolation(format!(
                    "points {} and {j} of one residue class differ by {d:e}",
                    class[0]
                )));
            }
        }
    }
    Ok(Collapse::Classes { gcd: g, classes })
}

/// Result of the multi-start uniqueness probe.
#[derive(Debug, Clone, Serialize)]
pub struct UniquenessVerdict {
    pub unique: bool,
    /// First `n` with both squeeze factors within `tol` of 1.
    pub horizon: Option<usize>,
    pub starts: usize,
    pub converged_to_star: usize,
    /// Largest distance of a limit from `x*`.
    pub max_deviation: f64,
    /// One representative per cluster of limits.
    #[serde(skip)]
    pub distinct_limits: Vec<ConeVector>,
    pub distinct_count: usize,
}

pub fn squeeze_horizon(phi: &ConcavityProfile, r1: f64, r2: f64, tol: f64) -> Option<usize> {
    let (mut a, mut b) = (r1, 1.0 / r2);
    for n in 0..=MAX_HORIZON {
        if 1.0 - a <= tol && 1.0 - b <= tol {
            return Some(n);
        }
        a = phi.eval(a);
        b = phi.eval(b);
    }
    None
}

pub fn uniqueness_probe(
    a: &OperatorHandle,
    x_star: &ConeVector,
    r1: f64,
    r2: f64,
    n_starts: usize,
    opts: &SolveOptions,
) -> Result<UniquenessVerdict> {
    if !(r1 > 0.0 && r1 < 1.0 && r2 > 1.0) {
        return Err(Error::Domain(format!("need 0 < r1 < 1 < r2, got r1 = {r1}, r2 = {r2}")));
    }
    let fixed = a.apply(x_star)?.distance(x_star)?;
    if fixed > opts.tol {
        return Err(Error::Precondition(format!("x* is not fixed by A (residual {fixed:e})")));
    }
    let lo = x_star.scale(r1);
    let hi = x_star.scale(r2);
    let mut starts = vec![lo.clone(), hi.clone()];
    let mut r = rng(opts.seed);
    while starts.len() < n_starts {
        starts.push(sample_between(&mut r, &lo, &hi));
    }
    let rate = match a.profile() {
        Some(phi) => rate_k_general(phi, r1, r2)?,
        None => 0.0,
    };
    let threshold = opts.tol * (1.0 - rate);
    let close = 10.0 * opts.tol;
    let mut limits = Vec::with_capacity(starts.len());
    for s in &starts {
        let mut x = s.clone();
        for _ in 0..opts.max_iter {
            let y = a.apply(&x)?;
            let d = y.distance(&x)?;
            x = y;
            if d <= threshold {
                break;
            }
        }
        limits.push(x);
    }
    let mut converged = 0;
    let mut max_dev: f64 = 0.0;
    let mut distinct: Vec<ConeVector> = Vec::new();
    for l in &limits {
        let d = l.distance(x_star)?;
        max_dev = max_dev.max(d);
        if d <= close {
            converged += 1;
        }
        let mut seen = false;
        for rep in &distinct {
            if l.distance(rep)? <= close {
                seen = true;
                break;
            }
        }
        if !seen {
            distinct.push(l.clone());
        }
    }
    let horizon = a.profile().and_then(|phi| squeeze_horizon(phi, r1, r2, opts.tol));
    Ok(UniquenessVerdict {
        unique: converged == limits.len() && horizon.is_some(),
        horizon,
        starts: limits.len(),
        converged_to_star: converged,
        max_deviation: max_dev,
        distinct_count: distinct.len(),
        distinct_limits: distinct,
    })
}

/// Sampled check of an operator property.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditResult {
    pub kind: String,
    pub samples: usize,
    pub violations: usize,
    pub max_excess: f64,
}

impl AuditResult {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn audit_box(a: &OperatorHandle) -> (ConeVector, ConeVector) {
    match a.domain() {
        ConcavityDomain::Segment(seg) => (seg.lo().clone(), seg.hi().clone()),
        ConcavityDomain::WholeCone => (
            ConeVector::zeros(a.grid().clone()),
            ConeVector::constant(a.grid().clone(), WHOLE_CONE_BOX),
        ),
    }
}

/// `A u <= A v + order_tol` on random ordered pairs `u <= v` of the declared
/// domain.
pub fn audit_monotone(a: &OperatorHandle, samples: usize, seed: u64) -> Result<AuditResult> {
    let (lo, hi) = audit_box(a);
    let mut r = rng(seed);
    let mut violations = 0;
    let mut max_excess: f64 = 0.0;
    for _ in 0..samples {
        let u = sample_between(&mut r, &lo, &hi);
        let v = sample_between(&mut r, &u, &hi);
        let (au, av) = (a.apply(&u)?, a.apply(&v)?);
        let excess = au.values().iter().zip(av.values()).map(|(p, q)| p - q).fold(f64::NEG_INFINITY, f64::max);
        max_excess = max_excess.max(excess);
        if excess > a.order_tol() {
            violations += 1;
        }
    }
    Ok(AuditResult { kind: "monotonicity".into(), samples, violations, max_excess })
}

/// `A(s u) >= phi(s) A u - order_tol ||A u||` on random `u` of the declared
/// domain and `s` in [0,1]. `profile` overrides the declared one.
pub fn audit_concavity(a: &OperatorHandle, profile: Option<&ConcavityProfile>, samples: usize, seed: u64) -> Result<AuditResult> {
    let phi = match profile {
        Some(p) => p.clone(),
        None => a.require_profile()?.clone(),
    };
    let (lo, hi) = audit_box(a);
    let mut r = rng(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut violations = 0;
    let mut max_excess: f64 = 0.0;
    for _ in 0..samples {
        let u = sample_between(&mut r, &lo, &hi);
        let s: f64 = r.gen();
        let au = a.apply(&u)?;
        let asu = a.apply(&u.scale(s))?;
        let f = phi.eval(s);
        let slack = a.order_tol() * au.sup_norm().max(1.0);
        let excess = au.values().iter().zip(asu.values()).map(|(p, q)| f * p - q).fold(f64::NEG_INFINITY, f64::max);
        max_excess = max_excess.max(excess);
        if excess > slack {
            violations += 1;
        }
    }
    Ok(AuditResult { kind: "concavity".into(), samples, violations, max_excess })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery::{make_cyclic_power, make_linf_operator, make_scalar_power};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn scalar(v: f64) -> ConeVector {
        ConeVector::constant(Arc::new(Grid::scalar()), v)
    }

    fn sqrt_op() -> OperatorHandle {
        make_scalar_power(0.5).unwrap()
    }

    fn opts(tol: f64) -> SolveOptions {
        SolveOptions { tol, ..SolveOptions::default() }
    }

    #[test]
    fn bracket_examples() {
        let a = make_linf_operator(16).unwrap();
        let v0 = ConeVector::constant(a.grid().clone(), 2.0);
        assert_eq!(verify_bracket(&a, &v0, 1, 1, 1e-8).unwrap(), (0.5, 0.5));
        assert_eq!(verify_bracket(&sqrt_op(), &scalar(16.0), 1, 1, 1e-8).unwrap(), (0.25, 0.25));
        assert!(verify_bracket(&sqrt_op(), &scalar(16.0), 1, 2, 1e-8).is_err());
    }

    #[test]
    fn bracket_rejects_mixed_small_and_large_nodes() {
        let grid = Arc::new(Grid::index(2).unwrap());
        let a = OperatorHandle::new("lift", grid.clone(), None, |x| Ok(vec![x[0], 1.0]));
        let v0 = ConeVector::new(grid, vec![1.0, 0.0], 0.0).unwrap();
        assert!(matches!(verify_bracket(&a, &v0, 1, 1, 1e-8), Err(Error::Certification(_))));
    }

    #[test]
    fn decreasing_linf_example() {
        let a = make_linf_operator(64).unwrap();
        let v0 = ConeVector::constant(a.grid().clone(), 2.0);
        let sol = solve_decreasing(&a, &v0, 1, 1.0 / 3.0, &opts(1e-12)).unwrap();
        assert!(sol.x_star.values().iter().all(|&v| v == 1.0));
        assert_eq!(sol.report.fixed_point_residual, 0.0);
        assert_relative_eq!(sol.certificate.tau_star.unwrap(), 1.0 / 9.0, max_relative = 1e-14);
        assert!(sol.report.bracket_ok && sol.report.bounds_ok);
    }

    #[test]
    fn decreasing_scalar_closed_form_iterates() {
        // v0 = 0.9 violates A v0 <= v0, so the decreasing driver refuses it.
        let err = solve_decreasing(&sqrt_op(), &scalar(0.9), 1, 0.9, &opts(1e-13)).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
        // From above, iterates are v0^(2^-n).
        let v0 = 1.0 / 0.9;
        let sol = solve_decreasing(&sqrt_op(), &scalar(v0), 1, 0.9f64.sqrt(), &opts(1e-13)).unwrap();
        assert!((sol.x_star.values()[0] - 1.0).abs() < 1e-13);
        for (n, r) in sol.report.residuals.iter().enumerate() {
            let x = v0.powf(0.5f64.powi(n as i32));
            assert_relative_eq!(*r, x - x.sqrt(), max_relative = 1e-9, epsilon = 1e-15);
        }
    }

    #[test]
    fn increasing_examples() {
        let sol = solve_increasing(&sqrt_op(), &scalar(1.0 / 16.0), 1, 4.0, &opts(1e-13)).unwrap();
        assert!((sol.x_star.values()[0] - 1.0).abs() < 1e-13);
        assert_relative_eq!(sol.certificate.delta.unwrap(), 16.0, max_relative = 1e-12);
        assert!(sol.report.bracket_ok);
        let sol = solve_increasing(&sqrt_op(), &scalar(0.25), 1, 2.0, &opts(1e-13)).unwrap();
        assert_relative_eq!(sol.certificate.delta.unwrap(), 4.0, max_relative = 1e-12);
        // From below 1 the iterates 0.9^(2^-n) increase to 1.
        let sol = solve_increasing(&sqrt_op(), &scalar(0.9), 1, 1.1, &opts(1e-13)).unwrap();
        assert!((sol.x_star.values()[0] - 1.0).abs() < 1e-13);
        // Already fixed: zero iterations.
        let sol = solve_increasing(&sqrt_op(), &scalar(1.0), 1, 2.0, &opts(1e-13)).unwrap();
        assert_eq!(sol.report.iterations, 0);
        assert_eq!(sol.x_star.values()[0], 1.0);
    }

    #[test]
    fn general_examples() {
        let sol = solve_general(&sqrt_op(), &scalar(0.5), 1, 0.7, 1.5, &opts(1e-13)).unwrap();
        assert!((sol.x_star.values()[0] - 1.0).abs() < 1e-13);
        assert!(sol.report.bracket_ok && sol.report.bounds_ok);
        assert!(solve_general(&sqrt_op(), &scalar(0.5), 1, 0.7, 0.7, &opts(1e-13)).is_err());
        assert!(matches!(
            solve_general(&sqrt_op(), &scalar(0.5), 1, 0.9, 1.2, &opts(1e-13)),
            Err(Error::Certification(_))
        ));
    }

    #[test]
    fn periodic_scalar_and_collapse() {
        let res = periodic_points(&sqrt_op(), &scalar(0.5), 3, 3, &opts(1e-12)).unwrap();
        assert_eq!(res.points.len(), 3);
        for p in &res.points {
            assert!((p.values()[0] - 1.0).abs() < 1e-10);
        }
        match collapse_check(&res.points, 0, 2, 0.5, 2.0, 1e-10).unwrap() {
            Collapse::Collapsed(p) => assert!((p.values()[0] - 1.0).abs() < 1e-10),
            other => panic!("expected collapse, got {other:?}"),
        }
        let single = periodic_points(&sqrt_op(), &scalar(0.5), 1, 1, &opts(1e-12)).unwrap();
        let gen = solve_general(&sqrt_op(), &scalar(0.5), 1, 0.7, 1.5, &opts(1e-12)).unwrap();
        assert!((single.points[0].values()[0] - gen.x_star.values()[0]).abs() < 1e-11);
    }

    #[test]
    fn periodic_linf_collapses_with_two_points() {
        let a = make_linf_operator(8).unwrap();
        let v0 = ConeVector::constant(a.grid().clone(), 2.0);
        let res = periodic_points(&a, &v0, 2, 2, &opts(1e-12)).unwrap();
        assert!(res.points[0].distance(&res.points[1]).unwrap() <= 1e-11);
        assert!(matches!(collapse_check(&res.points, 0, 1, 0.5, 2.0, 1e-11).unwrap(), Collapse::Collapsed(_)));
    }

    #[test]
    fn gcd_two_yields_residue_classes() {
        let a = make_cyclic_power(2, 0.5).unwrap();
        let v0 = ConeVector::new(a.grid().clone(), vec![4.0, 0.25], 0.0).unwrap();
        let res = periodic_points(&a, &v0, 6, 6, &opts(1e-12)).unwrap();
        match collapse_check(&res.points, 0, 2, 0.5, 2.0, 1e-10).unwrap() {
            Collapse::Classes { gcd, classes } => {
                assert_eq!(gcd, 2);
                assert_eq!(classes, vec![vec![0, 2, 4], vec![1, 3, 5]]);
            }
            other => panic!("expected classes, got {other:?}"),
        }
    }

    #[test]
    fn collapse_flags_coprime_disagreement() {
        let pts = vec![scalar(1.0), scalar(1.1)];
        assert!(matches!(collapse_check(&pts, 0, 1, 0.5, 2.0, 1e-10), Err(Error::TheoremViolation(_))));
    }

    #[test]
    fn uniqueness_examples() {
        let v = uniqueness_probe(&sqrt_op(), &scalar(1.0), 0.01, 100.0, 8, &opts(1e-12)).unwrap();
        assert!(v.unique, "{v:?}");
        let a = make_linf_operator(16).unwrap();
        let ones = ConeVector::constant(a.grid().clone(), 1.0);
        let v = uniqueness_probe(&a, &ones, 0.5, 2.0, 8, &opts(1e-12)).unwrap();
        assert!(v.unique && v.distinct_count == 1);
    }

    #[test]
    fn audits_pass_on_scalar_power() {
        let a = sqrt_op();
        assert!(audit_monotone(&a, 100, 1).unwrap().passed());
        assert!(audit_concavity(&a, None, 100, 1).unwrap().passed());
        // Declaring a stronger profile than the operator has must fail.
        let strong = ConcavityProfile::power(0.2).unwrap();
        assert!(!audit_concavity(&a, Some(&strong), 100, 1).unwrap().passed());
    }

    #[test]
    fn residual_csv_has_three_columns() {
        let sol = solve_general(&sqrt_op(), &scalar(0.5), 1, 0.7, 1.5, &opts(1e-10)).unwrap();
        let csv = sol.report.residuals_csv();
        assert!(csv.starts_with("n,residual,certified_bound\n"));
        assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 3));
    }

    fn scalar_oracle(a: f64, x0: f64, tol: f64, k: f64) -> f64 {
        let mut x = x0;
        loop {
            let y = x.powf(a);
            if (y - x).abs() <= tol * (1.0 - k) {
                return x;
            }
            x = y;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn drivers_match_scalar_iteration(alpha in 0.1f64..0.9, v0 in 1.01f64..50.0) {
            let a = make_scalar_power(alpha).unwrap();
            let o = opts(1e-13);
            // Decreasing from above.
            let sigma0 = v0.powf(alpha - 1.0);
            let sol = solve_decreasing(&a, &scalar(v0), 1, sigma0, &o).unwrap();
            let oracle = scalar_oracle(alpha, v0, 1e-13, sol.certificate.rate);
            prop_assert!((sol.x_star.values()[0] - oracle).abs() <= 1e-12);
            // Increasing from below.
            let w0 = 1.0 / v0;
            let r0 = w0.powf(alpha - 1.0) * (1.0 + 1e-9);
            let sol = solve_increasing(&a, &scalar(w0), 1, r0, &o).unwrap();
            let oracle = scalar_oracle(alpha, w0, 1e-13, sol.certificate.rate);
            prop_assert!((sol.x_star.values()[0] - oracle).abs() <= 1e-12);
        }

        #[test]
        fn certified_rate_dominates(v0 in 1.01f64..1e6) {
            let a = sqrt_op();
            let sol = solve_decreasing(&a, &scalar(v0), 1, v0.powf(-0.5), &opts(1e-14)).unwrap();
            let check = sol.report.rate_dominance(sol.certificate.rate);
            prop_assert_eq!(check.violations, 0);
            prop_assert!(sol.report.bounds_ok);
        }
    }
}
