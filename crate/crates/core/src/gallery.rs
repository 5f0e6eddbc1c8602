//! Concrete operators: the sequence-space example, scalar oracles, the
//! p-adic string operator, a Urysohn instance, the heat mild-solution
//! operator and the counterexample constructors with continua of fixed
//! points.

use std::f64::consts::PI;
use std::sync::Arc;

use libm::{erf, erfc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::concavity::{ConcavityProfile, MAX_BISECTION_STEPS};
use crate::cone::{Axis, ConeVector, ConicalSegment, Grid, DEFAULT_ORDER_TOL};
use crate::engine::{ConcavityDomain, OperatorHandle};
use crate::error::{Error, Result};
use crate::quadrature::{
    gaussian_h, half_line_laplace, interior_sup, map_rows, simpson_weights, DifferenceKernel, HeatRule,
    QuadratureRule, Residual,
};

/// Largest tolerated deviation of a discrete kernel mass from its closed form.
pub const KERNEL_MASS_TOL: f64 = 1e-6;

/// `y_n = min(n^{1/4} sqrt(x_n), 1)` on the first `n` coordinates.
pub fn make_linf_operator(n: usize) -> Result<OperatorHandle> {
    let grid = Arc::new(Grid::index(n)?);
    let gains: Vec<f64> = (1..=n).map(|k| (k as f64).powf(0.25)).collect();
    Ok(OperatorHandle::new("linf", grid, Some(ConcavityProfile::power(0.5)?), move |x| {
        Ok(x.iter().zip(&gains).map(|(v, g)| (g * v.max(0.0).sqrt()).min(1.0)).collect())
    }))
}

/// `x -> x^alpha` on a single node.
pub fn make_scalar_power(alpha: f64) -> Result<OperatorHandle> {
    let profile = ConcavityProfile::power(alpha)?;
    Ok(OperatorHandle::new("scalar-power", Arc::new(Grid::scalar()), Some(profile), move |x| {
        Ok(x.iter().map(|v| v.max(0.0).powf(alpha)).collect())
    }))
}

/// `A(x)_i = x_{i+1}^alpha` with cyclic indices: its even powers decouple
/// the nodes, which produces periodic points that differ between residue
/// classes before they converge.
pub fn make_cyclic_power(n: usize, alpha: f64) -> Result<OperatorHandle> {
    let profile = ConcavityProfile::power(alpha)?;
    let grid = Arc::new(Grid::index(n)?);
    Ok(OperatorHandle::new("cyclic-power", grid, Some(profile), move |x| {
        Ok((0..x.len()).map(|i| x[(i + 1) % x.len()].max(0.0).powf(alpha)).collect())
    }))
}

/// `x -> slope * min(x, cap)` on a single node: a bounded, critical
/// perturbation. Linear near zero, so it has no strong concavity profile.
pub fn make_saturating_scalar(slope: f64, cap: f64) -> Result<OperatorHandle> {
    make_saturating_operator(Arc::new(Grid::scalar()), slope, cap)
}

/// `u -> slope * min(u, cap)` node by node on any grid.
pub fn make_saturating_operator(grid: Arc<Grid>, slope: f64, cap: f64) -> Result<OperatorHandle> {
    if !(slope > 0.0 && cap > 0.0) {
        return Err(Error::Domain(format!("slope and cap must be > 0, got {slope} and {cap}")));
    }
    Ok(OperatorHandle::new("saturating", grid, None, move |x| {
        Ok(x.iter().map(|v| slope * v.max(0.0).min(cap)).collect())
    }))
}

/// `A0 u = top - c A(top - u)` on `<0, top>`. For `c` in
/// `[gamma0^{1-alpha}, 1]` it satisfies both sides of the complement
/// inequality with equality at the ends of the range.
pub fn make_complement_operator(a: &OperatorHandle, top: &ConeVector, c: f64) -> Result<OperatorHandle> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::Domain(format!("c must lie in (0,1], got {c}")));
    }
    let inner = a.clone();
    let t = top.values().to_vec();
    let tol = a.order_tol();
    let seg = ConicalSegment::new(ConeVector::zeros(top.grid().clone()), top.clone(), tol)?;
    Ok(OperatorHandle::new("complement", top.grid().clone(), None, move |u| {
        let mut d = Vec::with_capacity(u.len());
        for (i, (ti, ui)) in t.iter().zip(u).enumerate() {
            if *ui > ti + tol {
                return Err(Error::Domain(format!("input exceeds the top element at node {i}")));
            }
            d.push((ti - ui).max(0.0));
        }
        let ad = inner.eval(&d)?;
        Ok(t.iter().zip(&ad).map(|(ti, v)| ti - c * v).collect())
    })
    .with_domain(ConcavityDomain::Segment(seg)))
}

/// Parameters of the p-adic string equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PadicSpec {
    pub n: usize,
    pub p: u32,
    pub betas: Vec<f64>,
    pub alpha: f64,
}

impl PadicSpec {
    pub fn new(n: usize, p: u32, betas: Vec<f64>) -> Result<Self> {
        let spec = Self { n, p, alpha: 1.0 / p as f64, betas };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n == 1 || self.n == 2) {
            return Err(Error::Domain(format!("p-adic dimension must be 1 or 2, got {}", self.n)));
        }
        if self.p < 3 || self.p.is_multiple_of(2) {
            return Err(Error::Domain(format!("p must be an odd integer >= 3, got {}", self.p)));
        }
        if self.alpha != 1.0 / self.p as f64 {
            return Err(Error::Domain(format!("alpha must equal 1/p, got {}", self.alpha)));
        }
        if self.betas.len() != self.n || self.betas.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(Error::Domain(format!("need {} positive betas, got {:?}", self.n, self.betas)));
        }
        Ok(())
    }
}

/// `A psi = K psi^alpha` with `K` the product of half-line difference
/// kernels, on `[0, R]^n`.
#[derive(Debug, Clone)]
pub struct PadicOperator {
    pub spec: PadicSpec,
    grid: Arc<Grid>,
    kernels: Vec<Arc<DifferenceKernel>>,
    handle: OperatorHandle,
}

impl PadicOperator {
    /// The grid axes must start at 0. The declared profile is `sigma^gamma`
    /// with `gamma` in `[alpha, 1)`.
    pub fn new(spec: PadicSpec, grid: Arc<Grid>, gamma: Option<f64>) -> Result<Self> {
        spec.validate()?;
        if grid.dim() != spec.n {
            return Err(Error::InvalidGrid(format!("p-adic grid needs {} axes, got {}", spec.n, grid.dim())));
        }
        let gamma = gamma.unwrap_or(spec.alpha);
        if !(gamma >= spec.alpha && gamma < 1.0) {
            return Err(Error::Domain(format!("gamma must lie in [alpha, 1), got {gamma}")));
        }
        let mut kernels = Vec::with_capacity(spec.n);
        for (j, beta) in spec.betas.iter().enumerate() {
            let k = DifferenceKernel::new(*beta, grid.axis(j), true)?;
            let err = k.mass_error(grid.axis(j), true);
            if err > KERNEL_MASS_TOL {
                return Err(Error::Construction(format!(
                    "axis {j} is too coarse: kernel mass deviates by {err:e}"
                )));
            }
            kernels.push(Arc::new(k));
        }
        let alpha = spec.alpha;
        let ks = kernels.clone();
        let handle = OperatorHandle::new("padic", grid.clone(), Some(ConcavityProfile::power(gamma)?), move |psi| {
            let phi: Vec<f64> = psi.iter().map(|v| v.max(0.0).powf(alpha)).collect();
            Ok(apply_kernels(&ks, &phi))
        });
        Ok(Self { spec, grid, kernels, handle })
    }

    /// Default instance: grid of `nodes` per axis on `[0, radius]`.
    pub fn on_cube(spec: PadicSpec, radius: f64, nodes: usize) -> Result<Self> {
        let axes = (0..spec.n).map(|_| Axis::uniform(0.0, radius, nodes)).collect::<Result<Vec<_>>>()?;
        Self::new(spec, Arc::new(Grid::new(axes)?), None)
    }

    pub fn handle(&self) -> &OperatorHandle {
        &self.handle
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Sum of the per-axis accuracy budgets.
    pub fn budget(&self) -> f64 {
        self.kernels.iter().map(|k| k.rule.budget).sum()
    }

    /// `K f` for a field on the half-domain grid.
    pub fn kernel_apply(&self, f: &[f64]) -> Vec<f64> {
        apply_kernels(&self.kernels, f)
    }

    /// `phi^p - K phi` over interior nodes for the unknown `phi = psi^alpha`.
    pub fn half_residual(&self, phi: &ConeVector) -> Result<Residual> {
        check_grid(phi, &self.grid)?;
        let lhs: Vec<f64> = phi.values().iter().map(|v| v.powi(self.spec.p as i32)).collect();
        let rhs = self.kernel_apply(phi.values());
        Ok(Residual { value: interior_sup(&self.grid, &lhs, &rhs), budget: self.budget() })
    }

    /// Full-line residual of the odd extension of `phi`.
    pub fn full_residual(&self, phi: &ConeVector) -> Result<Residual> {
        Ok(padic_extend_odd(phi, self)?.residual)
    }
}

fn check_grid(v: &ConeVector, grid: &Arc<Grid>) -> Result<()> {
    if v.grid().as_ref() != grid.as_ref() {
        return Err(Error::IncompatibleGrid(format!("expected {}, got {}", grid.header(), v.grid().header())));
    }
    Ok(())
}

fn apply_kernels(ks: &[Arc<DifferenceKernel>], f: &[f64]) -> Vec<f64> {
    match ks {
        [k] => k.apply(f),
        [k0, k1] => DifferenceKernel::apply_tensor(k0, k1, f),
        _ => unreachable!("dimension validated at construction"),
    }
}

/// Root `s` of `int_0^inf H_beta(u) exp(-s u) du = eps / 2`.
pub fn laplace_root(beta: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("eps must lie in (0,1), got {eps}")));
    }
    let target = 0.5 * eps;
    let f = |s: f64| half_line_laplace(beta, s) - target;
    let mut hi = 1.0;
    while f(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Solver("no bracket for the Laplace root".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let s = 0.5 * (lo + hi);
    if f(s).abs() > 1e-12 {
        return Err(Error::Solver(format!("Laplace root residual {:e}", f(s))));
    }
    Ok(s)
}

/// A-priori lower bound `eps^{alpha n} prod_j sigma_j` for the bracket ratio
/// of `A^2 1` to `A 1`, where `sigma_j` bounds
/// `Q_j(x) = eps (1 - exp(-s_j x)) / erf(x / (2 sqrt(beta_j)))` from below
/// over the grid and its limits at `0+` and infinity.
pub fn padic_sigma0_theoretical(spec: &PadicSpec, eps: f64, grid: &Grid) -> Result<f64> {
    spec.validate()?;
    let mut prod = 1.0;
    for (j, &beta) in spec.betas.iter().enumerate() {
        let s = laplace_root(beta, eps)?;
        let axis = grid.axis(j);
        let at_zero = eps * s * (PI * beta).sqrt();
        let mut low = at_zero.min(eps).min(eps * (1.0 - (-s * axis.upper).exp()));
        for x in axis.coords().into_iter().filter(|x| *x > 0.0) {
            low = low.min(eps * (1.0 - (-s * x).exp()) / erf(x / (2.0 * beta.sqrt())));
        }
        prod *= low;
    }
    let sigma0 = eps.powf(spec.alpha * spec.n as f64) * prod;
    if !(sigma0 > 0.0 && sigma0 < 1.0) {
        return Err(Error::Solver(format!("theoretical sigma0 {sigma0} is outside (0,1)")));
    }
    Ok(sigma0)
}

/// A half-domain solution mirrored to an odd function on `[-R, R]^n`.
#[derive(Debug, Clone)]
pub struct OddExtension {
    pub values: ConeVector,
    /// `f^p` against the full-line Gaussian convolution of `f`.
    pub residual: Residual,
}

/// Position of mirrored index `m` (of `2N - 1`) on the half axis, with sign.
fn mirror(m: usize, n: usize) -> (usize, f64) {
    if m >= n - 1 {
        (m - (n - 1), 1.0)
    } else {
        ((n - 1) - m, -1.0)
    }
}

/// Full-line Gaussian convolution on a symmetric axis, continuing the field
/// past each end by its end value.
struct FullLineKernel {
    kvec: Vec<f64>,
    weights: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
    rule: QuadratureRule,
}

impl FullLineKernel {
    fn new(beta: f64, axis: &Axis) -> Self {
        let h = axis.spacing();
        let n = axis.nodes;
        let kvec: Vec<f64> = (0..n).map(|d| gaussian_h(beta, d as f64 * h)).collect();
        let c = 2.0 * beta.sqrt();
        let x = axis.coords();
        let left = x.iter().map(|t| 0.5 * erfc((t - axis.lower) / c)).collect();
        let right = x.iter().map(|t| 0.5 * erfc((axis.upper - t) / c)).collect();
        let reference: Vec<f64> = x.iter().map(|s| gaussian_h(beta, *s)).collect();
        Self { kvec, weights: simpson_weights(axis), left, right, rule: QuadratureRule::new(axis, 0.0, &reference) }
    }

    fn apply(&self, f: &[f64]) -> Vec<f64> {
        let n = f.len();
        map_rows(n, |i| {
            let inner: f64 = (0..n).map(|j| self.weights[j] * self.kvec[i.abs_diff(j)] * f[j]).sum();
            inner + self.left[i] * f[0] + self.right[i] * f[n - 1]
        })
    }
}

pub fn padic_extend_odd(phi_half: &ConeVector, op: &PadicOperator) -> Result<OddExtension> {
    check_grid(phi_half, &op.grid)?;
    let spec = &op.spec;
    let half_axes = op.grid.axes();
    let full_axes: Vec<Axis> =
        half_axes.iter().map(|a| Axis::uniform(-a.upper, a.upper, 2 * a.nodes - 1)).collect::<Result<_>>()?;
    let full = Arc::new(Grid::new(full_axes.clone())?);
    let src = phi_half.values();
    let values: Vec<f64> = match spec.n {
        1 => {
            let n = half_axes[0].nodes;
            (0..2 * n - 1).map(|m| {
                let (i, s) = mirror(m, n);
                s * src[i]
            })
            .collect()
        }
        _ => {
            let (n0, n1) = (half_axes[0].nodes, half_axes[1].nodes);
            let (m0, m1) = (2 * n0 - 1, 2 * n1 - 1);
            let mut v = vec![0.0; m0 * m1];
            for a in 0..m0 {
                let (i, s0) = mirror(a, n0);
                for b in 0..m1 {
                    let (j, s1) = mirror(b, n1);
                    v[a * m1 + b] = s0 * s1 * src[i * n1 + j];
                }
            }
            v
        }
    };
    let kernels: Vec<FullLineKernel> =
        spec.betas.iter().zip(&full_axes).map(|(b, ax)| FullLineKernel::new(*b, ax)).collect();
    let rhs = match spec.n {
        1 => kernels[0].apply(&values),
        _ => {
            let (m0, m1) = (full_axes[0].nodes, full_axes[1].nodes);
            let inner: Vec<f64> = (0..m0).flat_map(|a| kernels[1].apply(&values[a * m1..(a + 1) * m1])).collect();
            let mut out = vec![0.0; m0 * m1];
            for b in 0..m1 {
                let col: Vec<f64> = (0..m0).map(|a| inner[a * m1 + b]).collect();
                for (a, v) in kernels[0].apply(&col).into_iter().enumerate() {
                    out[a * m1 + b] = v;
                }
            }
            out
        }
    };
    let lhs: Vec<f64> = values.iter().map(|v| v.powi(spec.p as i32)).collect();
    let budget = kernels.iter().map(|k| k.rule.budget).sum::<f64>() + op.budget();
    let residual = Residual { value: interior_sup(&full, &lhs, &rhs), budget };
    Ok(OddExtension { values: ConeVector::signed(full, values)?, residual })
}

/// Parameters of the Urysohn instance
/// `U(x, t, z) = c(x) k(x - t) eta^{1-alpha} z^alpha` with
/// `c(x) = 1 - 1/(2(1 + x^2))` and `k(u) = exp(-u^2)/sqrt(pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UrysohnSpec {
    pub eta: f64,
    pub alpha: f64,
}

impl Default for UrysohnSpec {
    fn default() -> Self {
        Self { eta: 1.0, alpha: 0.5 }
    }
}

impl UrysohnSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Domain(format!("eta must be > 0, got {}", self.eta)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Domain(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn amplitude(x: f64) -> f64 {
        1.0 - 0.5 / (1.0 + x * x)
    }

    pub fn base_kernel(u: f64) -> f64 {
        (-u * u).exp() / PI.sqrt()
    }
}

/// Numerical check of the boundedness condition on `x -> int U(x, t, eta) dt`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct UrysohnBoundCheck {
    /// Largest value on the grid.
    pub grid_max: f64,
    /// Value at `|x| = 1e4`, off the grid, by the same rule.
    pub far_value: f64,
    pub budget: f64,
}

/// Abscissa at which the limit of `int U(x, t, eta) dt` is probed.
pub const FAR_FIELD: f64 = 1e4;

#[derive(Debug, Clone)]
pub struct UrysohnOperator {
    pub spec: UrysohnSpec,
    grid: Arc<Grid>,
    axis: Axis,
    weights: Arc<Vec<f64>>,
    kvec: Arc<Vec<f64>>,
    pub rule: QuadratureRule,
    pub bound_check: UrysohnBoundCheck,
    handle: OperatorHandle,
}

impl UrysohnOperator {
    /// `grid` must be a symmetric line `[-R, R]`.
    pub fn new(spec: UrysohnSpec, grid: Arc<Grid>) -> Result<Self> {
        spec.validate()?;
        if grid.dim() != 1 {
            return Err(Error::InvalidGrid("Urysohn operator needs a 1-D grid".into()));
        }
        let axis = grid.axis(0).clone();
        if (axis.lower + axis.upper).abs() > 1e-12 * axis.upper.abs() {
            return Err(Error::InvalidGrid(format!("grid must be symmetric, got [{}, {}]", axis.lower, axis.upper)));
        }
        let h = axis.spacing();
        let weights = Arc::new(simpson_weights(&axis));
        let kvec: Arc<Vec<f64>> = Arc::new((0..axis.nodes).map(|d| UrysohnSpec::base_kernel(d as f64 * h)).collect());
        let reference: Vec<f64> = axis.coords().iter().map(|t| UrysohnSpec::base_kernel(*t)).collect();
        let rule = QuadratureRule::new(&axis, 0.0, &reference);
        let coords = Arc::new(axis.coords());
        let (w, k, c, ax) = (weights.clone(), kvec.clone(), coords.clone(), axis.clone());
        let handle = OperatorHandle::new(
            "urysohn",
            grid.clone(),
            Some(ConcavityProfile::power(spec.alpha)?),
            move |f| {
                let fa: Vec<f64> = f.iter().map(|v| v.max(0.0).powf(spec.alpha)).collect();
                Ok(map_rows(fa.len(), |i| urysohn_row(&spec, &ax, &w, &k, &fa, c[i], Some(i))))
            },
        );
        let mut op = Self {
            spec,
            grid,
            axis,
            weights,
            kvec,
            rule,
            bound_check: UrysohnBoundCheck { grid_max: 0.0, far_value: 0.0, budget: 0.0 },
            handle,
        };
        op.bound_check = op.check_bound()?;
        let eta = spec.eta;
        let bc = op.bound_check;
        if bc.grid_max > eta * (1.0 + bc.budget) + 1e-12 || bc.far_value < eta - 1e-6 {
            return Err(Error::Construction(format!(
                "bound check failed: grid max {} and far value {} against eta = {eta}",
                bc.grid_max, bc.far_value
            )));
        }
        Ok(op)
    }

    pub fn on_line(spec: UrysohnSpec, radius: f64, nodes: usize) -> Result<Self> {
        Self::new(spec, Arc::new(Grid::line(-radius, radius, nodes)?))
    }

    pub fn handle(&self) -> &OperatorHandle {
        &self.handle
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// `(A f)(x)` at an arbitrary abscissa by the operator's rule.
    pub fn eval_at(&self, x: f64, f: &[f64]) -> f64 {
        let fa: Vec<f64> = f.iter().map(|v| v.max(0.0).powf(self.spec.alpha)).collect();
        urysohn_row(&self.spec, &self.axis, &self.weights, &self.kvec, &fa, x, None)
    }

    fn check_bound(&self) -> Result<UrysohnBoundCheck> {
        let eta = ConeVector::constant(self.grid.clone(), self.spec.eta);
        let on_grid = self.handle.apply(&eta)?;
        let far = self.eval_at(FAR_FIELD, eta.values()).min(self.eval_at(-FAR_FIELD, eta.values()));
        Ok(UrysohnBoundCheck { grid_max: on_grid.sup_norm(), far_value: far, budget: self.rule.budget })
    }

    /// `sigma0 = min(mu, eta/2) / eta` with `mu` the smallest value of
    /// `int U(x, t, eta) dt` on the grid.
    pub fn sigma0(&self) -> Result<f64> {
        let eta = ConeVector::constant(self.grid.clone(), self.spec.eta);
        let mu = self.handle.apply(&eta)?.values().iter().copied().fold(f64::INFINITY, f64::min);
        Ok(mu.min(0.5 * self.spec.eta) / self.spec.eta)
    }

    /// `f - A f` over interior nodes.
    pub fn residual(&self, f: &ConeVector) -> Result<Residual> {
        check_grid(f, &self.grid)?;
        let af = self.handle.eval(f.values())?;
        Ok(Residual { value: interior_sup(&self.grid, f.values(), &af), budget: self.rule.budget })
    }
}

/// One output value of the Urysohn rule. `node` is the grid index of `x`
/// when it lies on the grid, which selects the Toeplitz kernel row.
fn urysohn_row(spec: &UrysohnSpec, axis: &Axis, w: &[f64], k: &[f64], fa: &[f64], x: f64, node: Option<usize>) -> f64 {
    let n = fa.len();
    let inner: f64 = match node {
        Some(i) => (0..n).map(|j| w[j] * k[i.abs_diff(j)] * fa[j]).sum(),
        None => {
            let h = axis.spacing();
            (0..n).map(|j| w[j] * UrysohnSpec::base_kernel(x - (axis.lower + j as f64 * h)) * fa[j]).sum()
        }
    };
    let tails = fa[0] * 0.5 * erfc(x - axis.lower) + fa[n - 1] * 0.5 * erfc(axis.upper - x);
    UrysohnSpec::amplitude(x) * spec.eta.powf(1.0 - spec.alpha) * (inner + tails)
}

/// Parameters of the semilinear heat instance: `u0 = 1 + exp(-x^2)`,
/// `lambda = exp(-t)(2 + sin x)/3`, `G = sqrt`, constant start `xi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatSpec {
    pub xi: f64,
    /// `inf u0`.
    pub c0: f64,
    /// `sup u0`.
    pub beta0_sup: f64,
}

impl Default for HeatSpec {
    fn default() -> Self {
        Self { xi: 1.0, c0: 1.0, beta0_sup: 2.0 }
    }
}

impl HeatSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0) {
            return Err(Error::Domain(format!("xi must be > 0, got {}", self.xi)));
        }
        if self.c0 != 1.0 || self.beta0_sup != 2.0 {
            return Err(Error::Domain("c0 and beta0_sup are fixed by the initial datum to 1 and 2".into()));
        }
        Ok(())
    }

    pub fn u0(x: f64) -> f64 {
        1.0 + (-x * x).exp()
    }

    pub fn lambda(x: f64, t: f64) -> f64 {
        (-t).exp() * (2.0 + x.sin()) / 3.0
    }

    pub fn lambda1(t: f64) -> f64 {
        (-t).exp() / 3.0
    }

    pub fn lambda2(t: f64) -> f64 {
        (-t).exp()
    }

    pub fn nonlinearity(u: f64) -> f64 {
        u.max(0.0).sqrt()
    }

    /// `g(x, t) = int U(x, y, t) u0(y) dy` in closed form.
    pub fn g(x: f64, t: f64) -> f64 {
        let s = 1.0 + 4.0 * t;
        1.0 + (-x * x / s).exp() / s.sqrt()
    }

    /// `inf_t int_0^t lambda1 / int_0^t lambda2`, constant here.
    pub fn delta0(&self) -> f64 {
        1.0 / 3.0
    }

    /// `delta0 G(c0) / G(xi + beta0)`.
    pub fn r1(&self) -> f64 {
        self.delta0() * Self::nonlinearity(self.c0) / Self::nonlinearity(self.xi + self.beta0_sup)
    }

    /// `(1/delta0) max(1, G(G(xi + beta0) ||lambda2||_1 + beta0) / G(xi + c0))`.
    pub fn r2(&self) -> f64 {
        let l1 = 1.0;
        let top = Self::nonlinearity(Self::nonlinearity(self.xi + self.beta0_sup) * l1 + self.beta0_sup);
        (1.0 / self.delta0()) * 1f64.max(top / Self::nonlinearity(self.xi + self.c0))
    }

    /// Lower and upper envelope of `A xi` at time `t`.
    pub fn envelope(&self, t: f64) -> (f64, f64) {
        let m = 1.0 - (-t).exp();
        (
            Self::nonlinearity(self.xi + self.c0) * m / 3.0,
            Self::nonlinearity(self.xi + self.beta0_sup) * m,
        )
    }
}

/// `(A v)(x,t) = int_0^t int U(x, y, t-s) lambda(y,s) G(v(y,s) + g(y,s)) dy ds`
/// on an `(x, t)` grid.
#[derive(Debug, Clone)]
pub struct HeatOperator {
    pub spec: HeatSpec,
    grid: Arc<Grid>,
    rule: Arc<HeatRule>,
    g: Arc<Vec<f64>>,
    handle: OperatorHandle,
}

impl HeatOperator {
    pub fn new(spec: HeatSpec, grid: Arc<Grid>) -> Result<Self> {
        spec.validate()?;
        let rule = Arc::new(HeatRule::new(&grid).map_err(|e| Error::Construction(format!("heat rule: {e}")))?);
        if rule.mass_error > KERNEL_MASS_TOL {
            return Err(Error::Construction(format!("heat rule mass error {:e}", rule.mass_error)));
        }
        let (ax, at) = (grid.axis(0).coords(), grid.axis(1).coords());
        let nt = at.len();
        let g: Arc<Vec<f64>> = Arc::new((0..grid.len()).map(|f| HeatSpec::g(ax[f / nt], at[f % nt])).collect());
        let lam: Arc<Vec<f64>> = Arc::new((0..grid.len()).map(|f| HeatSpec::lambda(ax[f / nt], at[f % nt])).collect());
        let (r, gg) = (rule.clone(), g.clone());
        let handle = OperatorHandle::new("heat", grid.clone(), Some(ConcavityProfile::power(0.5)?), move |v| {
            let f: Vec<f64> = v.iter().zip(gg.iter()).zip(lam.iter()).map(|((v, g), l)| l * HeatSpec::nonlinearity(v + g)).collect();
            Ok(r.integrate(&f))
        });
        Ok(Self { spec, grid, rule, g, handle })
    }

    /// `[-radius, radius] x [0, horizon]` with the given node counts.
    pub fn on_box(spec: HeatSpec, radius: f64, nx: usize, horizon: f64, nt: usize) -> Result<Self> {
        let grid = Grid::plane(Axis::uniform(-radius, radius, nx)?, Axis::uniform(0.0, horizon, nt)?)?;
        Self::new(spec, Arc::new(grid))
    }

    pub fn handle(&self) -> &OperatorHandle {
        &self.handle
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn g(&self) -> ConeVector {
        ConeVector::signed(self.grid.clone(), self.g.to_vec()).expect("same grid")
    }

    pub fn start(&self) -> ConeVector {
        ConeVector::constant(self.grid.clone(), self.spec.xi)
    }

    /// Mass error plus the error on the Gaussian reference integrand.
    pub fn budget(&self) -> f64 {
        self.rule.mass_error + self.rule.reference_error
    }

    /// Largest violation of the envelope of `A xi` (0 when it holds), with
    /// slack proportional to the rule's mass error.
    pub fn envelope_violation(&self, av0: &ConeVector) -> Result<f64> {
        check_grid(av0, &self.grid)?;
        let at = self.grid.axis(1).coords();
        let nt = at.len();
        let slack = 10.0 * self.rule.mass_error * self.spec.xi.max(1.0);
        Ok(av0
            .values()
            .iter()
            .enumerate()
            .map(|(f, v)| {
                let (lo, hi) = self.spec.envelope(at[f % nt]);
                (lo - v).max(v - hi).max(0.0) - slack
            })
            .fold(0.0, f64::max))
    }

    /// `u - g - A(u - g)` over interior nodes for the mild solution `u`.
    pub fn residual(&self, u: &ConeVector) -> Result<Residual> {
        check_grid(u, &self.grid)?;
        let v: Vec<f64> = u.values().iter().zip(self.g.iter()).map(|(u, g)| u - g).collect();
        let av = self.handle.eval(&v)?;
        Ok(Residual { value: interior_sup(&self.grid, &v, &av), budget: self.budget() })
    }
}

fn check_fixed(a: &OperatorHandle, x_star: &ConeVector) -> Result<()> {
    let d = a.apply(x_star)?.distance(x_star)?;
    if d > 1e-9 * x_star.sup_norm().max(1.0) {
        return Err(Error::Precondition(format!("x* is not fixed by {} (residual {d:e})", a.name())));
    }
    if x_star.sup_norm() == 0.0 {
        return Err(Error::Precondition("x* must be nonzero".into()));
    }
    Ok(())
}

/// `A(t u) >= t A u` on random `u` of `<0, 2 x*>`.
fn check_subhomogeneous(a: &OperatorHandle, x_star: &ConeVector, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in 0..20 {
        let u = ConeVector::new(
            x_star.grid().clone(),
            x_star.values().iter().map(|v| 2.0 * v * rng.gen::<f64>()).collect(),
            0.0,
        )?;
        let t: f64 = rng.gen();
        let lhs = a.apply(&u.scale(t))?;
        let rhs = a.apply(&u)?.scale(t);
        if !crate::cone::leq(&rhs, &lhs, a.order_tol())? {
            return Err(Error::Precondition(format!("A(t u) >= t A u fails on sample {s}")));
        }
    }
    Ok(())
}

/// `pi(x)`: `x*` inside the open ball of radius `||x*||` about `x*`, else the
/// point where the segment from `x` to `x*` meets the sphere.
pub fn tilde_projection(x: &[f64], x_star: &[f64], star_norm: f64) -> Vec<f64> {
    let d = x.iter().zip(x_star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if d < star_norm {
        return x_star.to_vec();
    }
    let s = star_norm / d;
    x.iter().zip(x_star).map(|(a, b)| a + s * (b - a)).collect()
}

/// `A~ x = x + A(pi(x)) - pi(x)`: its fixed points are exactly the closed
/// ball of radius `||x*||` about `x*` intersected with the cone. No
/// concavity profile is declared.
pub fn make_tilde_operator(a: &OperatorHandle, x_star: &ConeVector) -> Result<OperatorHandle> {
    check_fixed(a, x_star)?;
    check_subhomogeneous(a, x_star, 0x7117)?;
    let inner = a.clone();
    let star = x_star.values().to_vec();
    let norm = x_star.sup_norm();
    let seg = ConicalSegment::new(ConeVector::zeros(x_star.grid().clone()), x_star.scale(2.0), DEFAULT_ORDER_TOL)?;
    Ok(OperatorHandle::new("tilde", x_star.grid().clone(), None, move |x| {
        let p = tilde_projection(x, &star, norm);
        let ap = inner.eval(&p)?;
        Ok(x.iter().zip(&ap).zip(&p).map(|((x, a), p)| x + a - p).collect())
    })
    .with_domain(ConcavityDomain::Segment(seg)))
}

/// `P_lambda(x)`: `x* - x` when `||x - x*|| > lambda ||x*||`, else that
/// vector scaled by `||x - x*|| / (lambda ||x*||)`.
pub fn hat_projection(x: &[f64], x_star: &[f64], star_norm: f64, lambda: f64) -> Vec<f64> {
    let d = x.iter().zip(x_star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let s = if d > lambda * star_norm { 1.0 } else { d / (lambda * star_norm) };
    x.iter().zip(x_star).map(|(a, b)| s * (b - a)).collect()
}

/// `A^ x = A(P_lambda(x) + x) - P_lambda(x)` on `<0, x*>`: every point farther
/// than `lambda ||x*||` from `x*` is fixed.
pub fn make_hat_operator(a: &OperatorHandle, x_star: &ConeVector, lambda: f64) -> Result<OperatorHandle> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Domain(format!("lambda must lie in (0,1), got {lambda}")));
    }
    check_fixed(a, x_star)?;
    check_subhomogeneous(a, x_star, 0x4a7)?;
    let inner = a.clone();
    let star = x_star.values().to_vec();
    let norm = x_star.sup_norm();
    let tol = a.order_tol();
    let seg = ConicalSegment::new(ConeVector::zeros(x_star.grid().clone()), x_star.clone(), tol)?;
    Ok(OperatorHandle::new("hat", x_star.grid().clone(), None, move |x| {
        if let Some(i) = x.iter().zip(&star).position(|(v, s)| *v > s + tol || *v < -tol) {
            return Err(Error::Domain(format!("input leaves <0, x*> at node {i}")));
        }
        let p = hat_projection(x, &star, norm, lambda);
        let shifted: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + b).collect();
        let ap = inner.eval(&shifted)?;
        Ok(ap.iter().zip(&p).map(|(a, p)| a - p).collect())
    })
    .with_domain(ConcavityDomain::Segment(seg)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{audit_concavity, audit_monotone, solve_decreasing, SolveOptions};
    use crate::quadrature::simpson_weights;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn vec_on(a: &OperatorHandle, v: Vec<f64>) -> ConeVector {
        ConeVector::new(a.grid().clone(), v, 0.0).unwrap()
    }

    #[test]
    fn linf_examples() {
        let a = make_linf_operator(4).unwrap();
        assert_eq!(a.eval(&[1.0; 4]).unwrap(), vec![1.0; 4]);
        assert_eq!(a.eval(&[0.0; 4]).unwrap(), vec![0.0; 4]);
        assert_eq!(a.eval(&[0.25, 0.0, 0.0, 0.0]).unwrap(), vec![0.5, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn scalar_examples() {
        let a = make_scalar_power(0.5).unwrap();
        assert_eq!(a.eval(&[16.0]).unwrap(), vec![4.0]);
        assert_eq!(a.eval(&[1.0]).unwrap(), vec![1.0]);
        assert_eq!(a.eval(&[0.0]).unwrap(), vec![0.0]);
    }

    fn small_padic() -> PadicOperator {
        PadicOperator::on_cube(PadicSpec::new(1, 3, vec![1.0]).unwrap(), 12.0, 1601).unwrap()
    }

    #[test]
    fn padic_constant_input_matches_erf() {
        let op = small_padic();
        let ones = ConeVector::constant(op.grid().clone(), 1.0);
        let out = op.handle().apply(&ones).unwrap();
        for (t, v) in op.grid().axis(0).coords().iter().zip(out.values()) {
            assert!((v - erf(t / 2.0)).abs() <= 1e-10, "t = {t}: {:e}", v - erf(t / 2.0));
            assert!(*v <= 1.0 + op.budget(), "{:e} budget {:e}", v - 1.0, op.budget());
        }
        assert_eq!(op.handle().eval(&vec![0.0; 1601]).unwrap(), vec![0.0; 1601]);
    }

    #[test]
    fn padic_kernel_is_nonnegative() {
        let axis = Axis::uniform(0.0, 12.0, 201).unwrap();
        let k = DifferenceKernel::new(1.0, &axis, true).unwrap();
        for i in 0..k.len() {
            assert!(k.row(i).iter().all(|w| *w >= 0.0));
        }
    }

    #[test]
    fn padic_rejects_coarse_grid_and_bad_spec() {
        let spec = PadicSpec::new(1, 3, vec![1.0]).unwrap();
        assert!(matches!(PadicOperator::on_cube(spec, 12.0, 5), Err(Error::Construction(_))));
        assert!(PadicSpec::new(1, 4, vec![1.0]).is_err());
        assert!(PadicSpec::new(1, 1, vec![1.0]).is_err());
        assert!(PadicSpec::new(2, 3, vec![1.0]).is_err());
    }

    #[test]
    fn laplace_root_matches_independent_quadrature() {
        let s = laplace_root(1.0, 0.5).unwrap();
        let axis = Axis::uniform(0.0, 60.0, 600_001).unwrap();
        let w = simpson_weights(&axis);
        let q: f64 = axis.coords().iter().zip(&w).map(|(u, w)| w * gaussian_h(1.0, *u) * (-s * u).exp()).sum();
        assert!((q - 0.25).abs() <= 1e-10, "{q}");
        assert!(laplace_root(1.0, 1.0).is_err());
        assert_relative_eq!(half_line_laplace(1.0, 0.0), 0.5);
    }

    #[test]
    fn padic_theoretical_sigma0_is_below_numeric() {
        let op = small_padic();
        let v0 = ConeVector::constant(op.grid().clone(), 1.0);
        let (r1, _) = crate::engine::verify_bracket(op.handle(), &v0, 2, 1, 1e-8).unwrap();
        let th = padic_sigma0_theoretical(&op.spec, 0.5, op.grid()).unwrap();
        assert!(th > 0.0 && th <= r1, "{th} vs {r1}");
    }

    #[test]
    fn odd_extension_is_odd_and_zero_is_exact() {
        let op = small_padic();
        let phi = ConeVector::from_fn(op.grid().clone(), |i| (i as f64 * 0.01).min(1.0));
        let ext = padic_extend_odd(&phi, &op).unwrap();
        let v = ext.values.values();
        let m = v.len();
        for i in 0..m {
            assert_eq!(v[i], -v[m - 1 - i]);
        }
        assert_eq!(v[m / 2], 0.0);
        let zero = ConeVector::zeros(op.grid().clone());
        assert_eq!(padic_extend_odd(&zero, &op).unwrap().residual.value, 0.0);
        assert_eq!(op.half_residual(&zero).unwrap().value, 0.0);
    }

    #[test]
    fn padic_two_dimensional_power_equality() {
        let spec = PadicSpec::new(2, 3, vec![1.0, 2.0]).unwrap();
        let op = PadicOperator::on_cube(spec, 12.0, 121).unwrap();
        let psi = ConeVector::from_fn(op.grid().clone(), |i| 1.0 + (i % 7) as f64);
        let s = 0.3f64;
        let a = op.handle().apply(&psi.scale(s)).unwrap();
        let b = op.handle().apply(&psi).unwrap().scale(s.powf(1.0 / 3.0));
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1e-300) + 1e-300);
        }
    }

    #[test]
    fn urysohn_examples() {
        let op = UrysohnOperator::on_line(UrysohnSpec::default(), 8.0, 2001).unwrap();
        let eta = ConeVector::constant(op.grid().clone(), 1.0);
        let out = op.handle().apply(&eta).unwrap();
        for (x, v) in op.grid().axis(0).coords().iter().zip(out.values()) {
            assert!((v - UrysohnSpec::amplitude(*x)).abs() <= 1e-10, "{:e}", v - UrysohnSpec::amplitude(*x));
        }
        assert!((op.sigma0().unwrap() - 0.5).abs() <= 1e-6);
        assert!(op.bound_check.far_value >= 1.0 - 1e-6);
        assert_eq!(op.handle().eval(&vec![0.0; 2001]).unwrap(), vec![0.0; 2001]);
    }

    #[test]
    fn urysohn_solution_envelope() {
        let op = UrysohnOperator::on_line(UrysohnSpec::default(), 8.0, 401).unwrap();
        let v0 = ConeVector::constant(op.grid().clone(), 1.0);
        let (r1, _) = crate::engine::verify_bracket(op.handle(), &v0, 1, 1, 1e-8).unwrap();
        let sol = solve_decreasing(op.handle(), &v0, 1, r1, &SolveOptions::default()).unwrap();
        assert!(sol.x_star.values().iter().all(|f| *f >= 0.25 && *f <= 1.0));
        assert!(op.residual(&sol.x_star).unwrap().value <= 1e-10);
    }

    #[test]
    fn heat_spec_constants() {
        let s = HeatSpec::default();
        assert_relative_eq!(s.r1(), 1.0 / (3.0 * 3f64.sqrt()), max_relative = 1e-15);
        assert_relative_eq!(s.r2(), 3.0 * ((3f64.sqrt() + 2.0).sqrt() / 2f64.sqrt()), max_relative = 1e-15);
        assert!((s.r2() - 4.0981).abs() < 1e-4);
        // g solves the heat equation with datum u0 at t = 0.
        assert_relative_eq!(HeatSpec::g(0.7, 0.0), HeatSpec::u0(0.7), max_relative = 1e-15);
    }

    #[test]
    fn heat_operator_small_grid() {
        let op = HeatOperator::on_box(HeatSpec::default(), 8.0, 41, 2.0, 21).unwrap();
        let zero = ConeVector::zeros(op.grid().clone());
        let a0 = op.handle().apply(&zero).unwrap();
        let nt = 21;
        for (f, v) in a0.values().iter().enumerate() {
            if f % nt == 0 {
                assert_eq!(*v, 0.0);
            } else {
                assert!(*v > 0.0);
            }
        }
        let av0 = op.handle().apply(&op.start()).unwrap();
        assert_eq!(op.envelope_violation(&av0).unwrap(), 0.0);
    }

    #[test]
    fn tilde_examples() {
        let a = make_linf_operator(8).unwrap();
        let star = ConeVector::constant(a.grid().clone(), 1.0);
        let t = make_tilde_operator(&a, &star).unwrap();
        assert_eq!(t.apply(&star).unwrap().values(), star.values());
        for s in [0.0, 0.3, 1.0] {
            let x = star.scale(s);
            assert!(t.apply(&x).unwrap().distance(&x).unwrap() <= 1e-15);
        }
        let x3 = star.scale(3.0);
        let moved = t.apply(&x3).unwrap();
        assert!(moved.distance(&x3).unwrap() >= 0.5);
        assert_eq!(tilde_projection(x3.values(), star.values(), 1.0), vec![2.0; 8]);
    }

    #[test]
    fn hat_examples() {
        let a = make_linf_operator(8).unwrap();
        let star = ConeVector::constant(a.grid().clone(), 1.0);
        let lam = 0.5;
        let h = make_hat_operator(&a, &star, lam).unwrap();
        let x = star.scale((1.0 - lam) / 2.0);
        assert!(h.apply(&x).unwrap().distance(&x).unwrap() <= 1e-15);
        assert_eq!(h.apply(&star).unwrap().values(), star.values());
        assert!(matches!(h.apply(&star.scale(1.5)), Err(Error::Domain(_))));
        // Both branches agree on the sphere.
        let b = star.scale(1.0 - lam);
        let p = hat_projection(b.values(), star.values(), 1.0, lam);
        for (pi, (s, x)) in p.iter().zip(star.values().iter().zip(b.values())) {
            assert!((pi - (s - x)).abs() <= 1e-12);
        }
    }

    #[test]
    fn complement_operator_matches_scalar_formula() {
        let a = make_scalar_power(0.5).unwrap();
        let top = ConeVector::constant(a.grid().clone(), 2.0);
        let a0 = make_complement_operator(&a, &top, 0.5).unwrap();
        assert_relative_eq!(a0.eval(&[1.75]).unwrap()[0], 1.75, max_relative = 1e-15);
        assert!(a0.eval(&[2.5]).is_err());
    }

    #[test]
    fn gallery_audits_pass() {
        let ops = vec![
            make_linf_operator(16).unwrap(),
            make_scalar_power(0.3).unwrap(),
            make_cyclic_power(3, 0.5).unwrap(),
            small_padic().handle().clone(),
            UrysohnOperator::on_line(UrysohnSpec::default(), 8.0, 201).unwrap().handle().clone(),
        ];
        for a in &ops {
            assert!(audit_monotone(a, 100, 3).unwrap().passed(), "{}", a.name());
            assert!(audit_concavity(a, None, 100, 3).unwrap().passed(), "{}", a.name());
        }
    }

    #[test]
    fn counterexamples_fail_an_audit() {
        let a = make_linf_operator(16).unwrap();
        let star = ConeVector::constant(a.grid().clone(), 1.0);
        let sqrt = ConcavityProfile::power(0.5).unwrap();
        for op in [make_tilde_operator(&a, &star).unwrap(), make_hat_operator(&a, &star, 0.5).unwrap()] {
            let m = audit_monotone(&op, 100, 5).unwrap();
            let c = audit_concavity(&op, Some(&sqrt), 100, 5).unwrap();
            assert!(!m.passed() || !c.passed(), "{}", op.name());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn projections_stay_in_cone(xs in proptest::collection::vec(0.0f64..5.0, 6), lam in 0.05f64..0.95) {
            let star = vec![1.0; 6];
            prop_assert!(tilde_projection(&xs, &star, 1.0).iter().all(|v| *v >= -1e-15));
            let clipped: Vec<f64> = xs.iter().map(|v| v.min(1.0)).collect();
            let p = hat_projection(&clipped, &star, 1.0, lam);
            prop_assert!(p.iter().zip(&clipped).all(|(p, x)| p + x >= -1e-15));
        }

        #[test]
        fn urysohn_power_equality(s in 0.01f64..1.0, seed in 0u64..1000) {
            let op = UrysohnOperator::on_line(UrysohnSpec::default(), 8.0, 101).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = vec_on(op.handle(), (0..101).map(|_| rng.gen::<f64>() * 3.0).collect());
            let a = op.handle().apply(&f.scale(s)).unwrap();
            let b = op.handle().apply(&f).unwrap().scale(s.sqrt());
            prop_assert!(a.distance(&b).unwrap() <= 1e-12 * b.sup_norm());
        }
    }
}
