//! Quadrature rules for the Gaussian kernels of the operator gallery.
//!
//! Uniform-axis rules are composite Simpson (trapezoid when the node count is
//! even). Half-line difference kernels `H(x-y) - H(x+y)` get a dense matrix
//! with an optional closed-form tail column. The heat kernel gets an exact
//! product-integration rule: the integrand is interpolated piecewise linearly
//! in space and time, and each basis function is integrated against the
//! Gaussian analytically in space and by graded Gauss-Legendre in time.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use libm::{erf, erfc};
use serde::Serialize;

use crate::cone::{Axis, ConeVector, Grid};
use crate::error::{Error, Result};
use crate::gallery::{HeatOperator, PadicOperator, UrysohnOperator};

/// Default truncation budget for Gaussian tails.
pub const DEFAULT_TAIL_TOL: f64 = 1e-13;

static THREADS: AtomicUsize = AtomicUsize::new(0);

/// Sets the worker count for data-parallel kernel application. `0` keeps the
/// serial mode. Every output node is still summed serially in a fixed order,
/// so results do not depend on this setting.
pub fn set_threads(n: usize) {
    THREADS.store(n, Ordering::Relaxed);
}

pub fn threads() -> usize {
    THREADS.load(Ordering::Relaxed)
}

/// Evaluates `f(i)` for `i in 0..n`, splitting the range across worker
/// threads when enabled.
pub(crate) fn map_rows<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = threads().min(n);
    if workers <= 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(workers);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|start| s.spawn(move || (start..(start + chunk).min(n)).map(f).collect::<Vec<T>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Composite Simpson weights on a uniform axis, or trapezoid weights when the
/// node count is even.
pub fn simpson_weights(axis: &Axis) -> Vec<f64> {
    let n = axis.nodes;
    let h = axis.spacing();
    if n < 2 {
        return vec![0.0; n];
    }
    if n.is_multiple_of(2) {
        let mut w = vec![h; n];
        w[0] = 0.5 * h;
        w[n - 1] = 0.5 * h;
        return w;
    }
    let mut w: Vec<f64> = (0..n).map(|i| if i % 2 == 1 { 4.0 * h / 3.0 } else { 2.0 * h / 3.0 }).collect();
    w[0] = h / 3.0;
    w[n - 1] = h / 3.0;
    w
}

pub fn integrate(weights: &[f64], f: &[f64]) -> f64 {
    weights.iter().zip(f).map(|(w, v)| w * v).sum()
}

/// Error estimate `|S_h - S_2h| / 15` for Simpson on samples `f`, falling back
/// to `|S_h - T_h|` when the coarse rule is not available.
pub fn richardson_estimate(axis: &Axis, f: &[f64]) -> f64 {
    let fine = integrate(&simpson_weights(axis), f);
    if axis.nodes % 4 == 1 && axis.nodes >= 5 {
        let coarse_axis = Axis { nodes: axis.nodes.div_ceil(2), ..axis.clone() };
        let coarse: Vec<f64> = f.iter().step_by(2).copied().collect();
        (fine - integrate(&simpson_weights(&coarse_axis), &coarse)).abs() / 15.0
    } else {
        let even = Axis { nodes: axis.nodes, ..axis.clone() };
        let h = even.spacing();
        let trap: f64 = f.windows(2).map(|p| 0.5 * h * (p[0] + p[1])).sum();
        (fine - trap).abs()
    }
}

/// A one-axis rule with its accuracy budget.
#[derive(Debug, Clone, Serialize)]
pub struct QuadratureRule {
    #[serde(skip)]
    pub weights: Vec<f64>,
    /// Truncation radius of the axis.
    pub radius: f64,
    /// Bound on the neglected kernel mass beyond the radius.
    pub tail: f64,
    /// Richardson estimate of the discretization error on the reference
    /// integrand.
    pub simpson_err: f64,
    /// `tail + simpson_err`.
    pub budget: f64,
}

impl QuadratureRule {
    pub fn new(axis: &Axis, tail: f64, reference: &[f64]) -> Self {
        let simpson_err = richardson_estimate(axis, reference);
        Self {
            weights: simpson_weights(axis),
            radius: axis.upper.abs().max(axis.lower.abs()),
            tail,
            simpson_err,
            budget: tail + simpson_err,
        }
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        integrate(&self.weights, f)
    }
}

/// `H_beta(u) = exp(-u^2 / (4 beta)) / sqrt(4 pi beta)`.
pub fn gaussian_h(beta: f64, u: f64) -> f64 {
    (-u * u / (4.0 * beta)).exp() / (4.0 * PI * beta).sqrt()
}

/// Smallest `R` on the lattice `0, 0.5, 1, ...` whose one-sided tail
/// `int_R^inf H_beta` is at most `tol`.
pub fn gaussian_tail_radius(beta: f64, tol: f64) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Domain(format!("beta must be > 0, got {beta}")));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::Domain(format!("tail tolerance must lie in (0,1), got {tol}")));
    }
    let mut r = 0.0;
    while 0.5 * erfc(r / (2.0 * beta.sqrt())) > tol {
        r += 0.5;
    }
    Ok(r)
}

/// `int_0^inf H_beta(u) exp(-s u) du = exp(beta s^2) erfc(s sqrt(beta)) / 2`.
pub fn half_line_laplace(beta: f64, s: f64) -> f64 {
    let x = s * beta.sqrt();
    if x < 25.0 {
        0.5 * (x * x).exp() * erfc(x)
    } else {
        // Asymptotic series of the scaled complementary error function.
        let x2 = x * x;
        0.5 / (x * PI.sqrt()) * (1.0 - 0.5 / x2 + 0.75 / (x2 * x2))
    }
}

/// `int_R^inf (H(x-y) - H(x+y)) dy`.
pub fn difference_tail(beta: f64, x: f64, r: f64) -> f64 {
    let c = 2.0 * beta.sqrt();
    0.5 * (erfc((r - x) / c) - erfc((r + x) / c))
}

/// `int_0^R (H(x-y) - H(x+y)) dy`, the kernel mass on a truncated half-line.
pub fn difference_mass(beta: f64, x: f64, r: f64) -> f64 {
    erf(x / (2.0 * beta.sqrt())) - difference_tail(beta, x, r)
}

/// `int_R^inf H(x-y) dy`.
pub fn gaussian_right_tail(beta: f64, x: f64, r: f64) -> f64 {
    0.5 * erfc((r - x) / (2.0 * beta.sqrt()))
}

/// The half-line difference kernel `H(x-y) - H(x+y)` discretized on `[0, R]`.
///
/// With `with_tail`, the integrand is continued past `R` by its value at the
/// last node and the exact kernel mass of `(R, inf)` is folded into that
/// node's weight. The rule then reproduces constants exactly up to the
/// Simpson error.
#[derive(Debug, Clone)]
pub struct DifferenceKernel {
    pub beta: f64,
    n: usize,
    matrix: Vec<f64>,
    pub rule: QuadratureRule,
}

impl DifferenceKernel {
    pub fn new(beta: f64, axis: &Axis, with_tail: bool) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::Domain(format!("beta must be > 0, got {beta}")));
        }
        if axis.lower != 0.0 {
            return Err(Error::InvalidGrid(format!("half-line kernel needs an axis starting at 0, got {}", axis.lower)));
        }
        let n = axis.nodes;
        let x = axis.coords();
        let w = simpson_weights(axis);
        let r = axis.upper;
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            let row = &mut matrix[i * n..(i + 1) * n];
            for j in 0..n {
                row[j] = w[j] * (gaussian_h(beta, x[i] - x[j]) - gaussian_h(beta, x[i] + x[j]));
            }
            if with_tail {
                row[n - 1] += difference_tail(beta, x[i], r);
            }
        }
        // Reference integrand for the error estimate: the kernel row at the
        // node where it is steepest relative to the spacing.
        let mid = (2.0 * beta.sqrt() / axis.spacing()).round().clamp(1.0, (n - 1) as f64) as usize;
        let reference: Vec<f64> = x.iter().map(|&y| gaussian_h(beta, x[mid] - y) - gaussian_h(beta, x[mid] + y)).collect();
        let tail = if with_tail { 0.0 } else { 0.5 * erfc(r / (2.0 * beta.sqrt())) };
        let rule = QuadratureRule::new(axis, tail.max(DEFAULT_TAIL_TOL), &reference);
        let mut k = Self { beta, n, matrix, rule };
        // The Richardson estimate is not a bound, so the budget also covers
        // the measured error on constants.
        let mass = k.mass_error(axis, with_tail);
        k.rule.simpson_err = k.rule.simpson_err.max(mass);
        k.rule.budget = k.rule.tail + k.rule.simpson_err;
        Ok(k)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.n..(i + 1) * self.n]
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        map_rows(self.n, |i| integrate(self.row(i), f))
    }

    /// Applies the kernel along axis 0 (`rows`) and axis 1 (`self`) of a
    /// row-major 2-D field.
    pub fn apply_tensor(rows: &DifferenceKernel, cols: &DifferenceKernel, f: &[f64]) -> Vec<f64> {
        let (n0, n1) = (rows.n, cols.n);
        // Contract along axis 1 first, then along axis 0.
        let inner: Vec<f64> = (0..n0)
            .flat_map(|a| {
                let line = &f[a * n1..(a + 1) * n1];
                (0..n1).map(move |i| integrate(cols.row(i), line))
            })
            .collect();
        map_rows(n0, |i| {
            let w = rows.row(i);
            (0..n1).map(|b| (0..n0).map(|a| w[a] * inner[a * n1 + b]).sum::<f64>()).collect::<Vec<f64>>()
        })
        .into_iter()
        .flatten()
        .collect()
    }

    /// Largest deviation of the rule applied to `f = 1` from the closed form.
    pub fn mass_error(&self, axis: &Axis, with_tail: bool) -> f64 {
        let ones = vec![1.0; self.n];
        let got = self.apply(&ones);
        axis.coords()
            .iter()
            .zip(&got)
            .map(|(&x, g)| {
                let exact = if with_tail {
                    erf(x / (2.0 * self.beta.sqrt()))
                } else {
                    difference_mass(self.beta, x, axis.upper)
                };
                (g - exact).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// `g(x) = int_0^R (H(x-y) - H(x+y)) f(y) dy` by composite Simpson on a grid
/// over `[0, R]`, truncated at `R`.
pub fn apply_difference_kernel(beta: f64, f: &ConeVector, grid: &Grid) -> Result<ConeVector> {
    if grid.dim() != 1 || f.grid().as_ref() != grid {
        return Err(Error::IncompatibleGrid("difference kernel needs the vector's own 1-D grid".into()));
    }
    let k = DifferenceKernel::new(beta, grid.axis(0), false)?;
    ConeVector::signed(f.grid().clone(), k.apply(f.values()))
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// `int_{-inf}^u Phi(w / s) dw = u Phi(u/s) + s phi(u/s)`: a ramp smoothed by
/// a centered Gaussian of standard deviation `s`.
fn smoothed_ramp(u: f64, s: f64) -> f64 {
    let z = u / s;
    u * 0.5 * erfc(-z / std::f64::consts::SQRT_2) + s * (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Heat kernel at time `tau` integrated against an interior hat of half-width
/// `h` whose center sits `dist` nodes from the output point.
fn hat_response(dist: usize, h: f64, tau: f64) -> f64 {
    if tau <= 0.0 {
        return if dist == 0 { 1.0 } else { 0.0 };
    }
    let s = (2.0 * tau).sqrt();
    let z = -(dist as f64) * h;
    (smoothed_ramp(z + h, s) - 2.0 * smoothed_ramp(z, s) + smoothed_ramp(z - h, s)) / h
}

/// Same for the boundary basis: a half hat on the grid side continued by the
/// constant 1 beyond the boundary node.
fn edge_response(dist: usize, h: f64, tau: f64) -> f64 {
    if tau <= 0.0 {
        return if dist == 0 { 1.0 } else { 0.0 };
    }
    let s = (2.0 * tau).sqrt();
    let d = dist as f64 * h;
    (smoothed_ramp(h - d, s) - smoothed_ramp(-d, s)) / h
}

/// Number of geometric levels in panels touching `tau = 0`.
const GRADED_LEVELS: usize = 24;
const GL_POINTS: usize = 8;

/// `int_a^b w(tau) e(tau) dtau` with 8-point Gauss-Legendre.
fn gl_panel(a: f64, b: f64, gl: &(Vec<f64>, Vec<f64>), w: impl Fn(f64) -> f64, e: impl Fn(f64) -> f64) -> f64 {
    let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
    gl.0.iter().zip(&gl.1).map(|(x, wt)| {
        let t = c + r * x;
        wt * r * w(t) * e(t)
    }).sum()
}

/// `int_0^b w(tau) e(tau) dtau` on panels graded geometrically toward 0, with
/// the final panel collapsed to the `tau -> 0` limit of `e`.
fn graded_panel(b: f64, gl: &(Vec<f64>, Vec<f64>), w: impl Fn(f64) -> f64, e: impl Fn(f64) -> f64) -> f64 {
    let mut total = 0.0;
    let mut hi = b;
    for _ in 0..GRADED_LEVELS {
        let lo = 0.5 * hi;
        total += gl_panel(lo, hi, gl, &w, &e);
        hi = lo;
    }
    // Remaining `[0, hi]`: weight integrated by the midpoint rule, kernel
    // replaced by its limit.
    total + hi * w(0.5 * hi) * e(0.0)
}

/// Space-time rule for `int_0^t int_R U(x, y, t - s) F(y, s) dy ds` on an
/// `(x, t)` grid with `t` starting at 0.
#[derive(Debug, Clone)]
pub struct HeatRule {
    nx: usize,
    nt: usize,
    /// `mid[d]`: interior weights for a time node `d` steps back, indexed by
    /// signed node offset `m - i + nx - 1`.
    mid: Vec<Vec<f64>>,
    /// `first[k]`: interior weights for the time node `s = 0` seen from `t_k`.
    first: Vec<Vec<f64>>,
    /// Interior weights for the time node `s = t`.
    last: Vec<f64>,
    /// Boundary-basis weights, indexed by the distance to the boundary node.
    edge_mid: Vec<Vec<f64>>,
    edge_first: Vec<Vec<f64>>,
    edge_last: Vec<f64>,
    /// Largest deviation of the discrete kernel mass from `int U dy = 1`.
    pub mass_error: f64,
    /// Largest error on a Gaussian reference integrand with a closed form.
    pub reference_error: f64,
}

impl HeatRule {
    pub fn new(grid: &Grid) -> Result<Self> {
        if grid.dim() != 2 {
            return Err(Error::InvalidGrid("heat rule needs an (x, t) grid".into()));
        }
        let (ax, at) = (grid.axis(0), grid.axis(1));
        if at.lower != 0.0 {
            return Err(Error::InvalidGrid(format!("time axis must start at 0, got {}", at.lower)));
        }
        if ax.nodes < 3 {
            return Err(Error::InvalidGrid("heat rule needs at least 3 space nodes".into()));
        }
        let (nx, nt) = (ax.nodes, at.nodes);
        let (h, ht) = (ax.spacing(), at.spacing());
        let gl = gauss_legendre(GL_POINTS);

        let down = |tau: f64, d: usize| 1.0 - (tau - d as f64 * ht) / ht;
        let up = |tau: f64, d: usize| (tau - (d as f64 - 1.0) * ht) / ht;
        // Hi_d: hat part with tau above d * ht. Lo_d: part below.
        let hi_weight = |d: usize, e: &dyn Fn(f64) -> f64| -> f64 {
            let (a, b) = (d as f64 * ht, (d + 1) as f64 * ht);
            if d == 0 {
                graded_panel(b, &gl, |t| down(t, 0), e)
            } else {
                gl_panel(a, b, &gl, |t| down(t, d), e)
            }
        };
        let lo_weight = |d: usize, e: &dyn Fn(f64) -> f64| -> f64 {
            let (a, b) = ((d as f64 - 1.0) * ht, d as f64 * ht);
            if d == 1 {
                graded_panel(b, &gl, |t| up(t, 1), e)
            } else {
                gl_panel(a, b, &gl, |t| up(t, d), e)
            }
        };

        let tables = |response: fn(usize, f64, f64) -> f64| {
            let per_dist = |dist: usize| -> (Vec<f64>, Vec<f64>) {
                let e = move |tau: f64| response(dist, h, tau);
                let hi: Vec<f64> = (0..nt).map(|d| hi_weight(d, &e)).collect();
                let lo: Vec<f64> = (0..nt).map(|d| if d == 0 { 0.0 } else { lo_weight(d, &e) }).collect();
                (hi, lo)
            };
            map_rows(nx, per_dist)
        };
        let interior = tables(hat_response);
        let edge = tables(edge_response);

        let signed = |f: &dyn Fn(usize) -> f64| -> Vec<f64> {
            (0..2 * nx - 1).map(|o| f((o as isize - (nx as isize - 1)).unsigned_abs())).collect()
        };
        let mid: Vec<Vec<f64>> = (0..nt).map(|d| signed(&|dist| interior[dist].1[d] + interior[dist].0[d])).collect();
        let first: Vec<Vec<f64>> = (0..nt).map(|k| signed(&|dist| interior[dist].1[k])).collect();
        let last = signed(&|dist| interior[dist].0[0]);
        let edge_mid: Vec<Vec<f64>> = (0..nt).map(|d| (0..nx).map(|dist| edge[dist].1[d] + edge[dist].0[d]).collect()).collect();
        let edge_first: Vec<Vec<f64>> = (0..nt).map(|k| (0..nx).map(|dist| edge[dist].1[k]).collect()).collect();
        let edge_last: Vec<f64> = (0..nx).map(|dist| edge[dist].0[0]).collect();

        let mut rule =
            Self { nx, nt, mid, first, last, edge_mid, edge_first, edge_last, mass_error: 0.0, reference_error: 0.0 };
        // The bases sum to 1 in space, so F = 1 must integrate to t exactly.
        let ones = vec![1.0; nx * nt];
        let t = at.coords();
        let got = rule.integrate_time_major(&ones);
        rule.mass_error = (0..nt)
            .flat_map(|k| (0..nx).map(move |i| (k, i)))
            .map(|(k, i)| (got[k * nx + i] - t[k]).abs())
            .fold(0.0, f64::max);
        rule.reference_error = rule.gaussian_reference_error(ax, at);
        Ok(rule)
    }

    /// Largest error on `F(y, s) = exp(-y^2)`, whose space-time integral
    /// reduces to `int_0^t exp(-x^2/(1+4r)) / sqrt(1+4r) dr`. This measures
    /// the interpolation error of the piecewise-linear bases.
    fn gaussian_reference_error(&self, ax: &Axis, at: &Axis) -> f64 {
        let (nx, nt) = (self.nx, self.nt);
        let xs = ax.coords();
        let f: Vec<f64> = (0..nt).flat_map(|_| xs.iter().map(|x| (-x * x).exp())).collect();
        let got = self.integrate_time_major(&f);
        let sub = 16;
        let dr = at.spacing() / sub as f64;
        let errs = map_rows(nx, |i| {
            let x2 = xs[i] * xs[i];
            let e = |r: f64| (-x2 / (1.0 + 4.0 * r)).exp() / (1.0 + 4.0 * r).sqrt();
            let mut exact = 0.0;
            let mut worst: f64 = 0.0;
            for k in 1..nt {
                // Simpson on each time step split into `sub` panels.
                let r0 = (k - 1) as f64 * at.spacing();
                let mut acc = 0.0;
                for m in 0..sub {
                    let a = r0 + m as f64 * dr;
                    acc += dr / 6.0 * (e(a) + 4.0 * e(a + 0.5 * dr) + e(a + dr));
                }
                exact += acc;
                worst = worst.max((got[k * nx + i] - exact).abs());
            }
            worst
        });
        errs.into_iter().fold(0.0, f64::max)
    }

    /// Spatial weights for source time node `j` seen from output time `k`,
    /// for output node `i`. Returns the interior slice for sources
    /// `1..nx-1` and the two boundary weights.
    fn weights_for(&self, i: usize, j: usize, k: usize) -> (&[f64], f64, f64) {
        let nx = self.nx;
        let (table, edge) = if j == k {
            (&self.last, &self.edge_last)
        } else if j == 0 {
            (&self.first[k], &self.edge_first[k])
        } else {
            (&self.mid[k - j], &self.edge_mid[k - j])
        };
        // Offset of source m is m - i + nx - 1.
        let start = nx - i; // m = 1
        (&table[start..start + nx - 2], edge[i], edge[nx - 1 - i])
    }

    /// One output time row: `int_0^{t_k} int U F` at every space node, from a
    /// time-major field `f[j * nx + m]`.
    pub fn integrate_row(&self, f: &[f64], k: usize) -> Vec<f64> {
        let nx = self.nx;
        if k == 0 {
            return vec![0.0; nx];
        }
        (0..nx)
            .map(|i| {
                let mut acc = 0.0;
                for j in 0..=k {
                    let row = &f[j * nx..(j + 1) * nx];
                    let (w, left, right) = self.weights_for(i, j, k);
                    let inner: f64 = w.iter().zip(&row[1..nx - 1]).map(|(a, b)| a * b).sum();
                    acc += left * row[0] + inner + right * row[nx - 1];
                }
                acc
            })
            .collect()
    }

    /// All output rows, time-major in and out.
    pub fn integrate_time_major(&self, f: &[f64]) -> Vec<f64> {
        map_rows(self.nt, |k| self.integrate_row(f, k)).into_iter().flatten().collect()
    }

    /// All output nodes for a field stored in the grid's `(x, t)` row-major
    /// order.
    pub fn integrate(&self, f: &[f64]) -> Vec<f64> {
        let (nx, nt) = (self.nx, self.nt);
        let mut tm = vec![0.0; nx * nt];
        for i in 0..nx {
            for k in 0..nt {
                tm[k * nx + i] = f[i * nt + k];
            }
        }
        let out = self.integrate_time_major(&tm);
        let mut xm = vec![0.0; nx * nt];
        for i in 0..nx {
            for k in 0..nt {
                xm[i * nt + k] = out[k * nx + i];
            }
        }
        xm
    }

    pub fn space_nodes(&self) -> usize {
        self.nx
    }

    pub fn time_nodes(&self) -> usize {
        self.nt
    }
}

/// `int U(x, y, tau) dy` over the piecewise-linear bases of an axis with
/// `nx` nodes and spacing `h`, at every output node. The bases sum to 1, so
/// this equals 1 up to rounding for every `tau`.
pub fn heat_kernel_mass(nx: usize, h: f64, tau: f64) -> Vec<f64> {
    (0..nx)
        .map(|i| {
            let inner: f64 = (1..nx - 1).map(|m| hat_response(i.abs_diff(m), h, tau)).sum();
            inner + edge_response(i, h, tau) + edge_response(nx - 1 - i, h, tau)
        })
        .collect()
}

/// Rule for one output time index of the heat operator.
#[derive(Debug, Clone)]
pub struct HeatRowRule {
    pub t_index: usize,
    rule: Arc<HeatRule>,
}

impl HeatRowRule {
    pub fn is_empty(&self) -> bool {
        self.t_index == 0
    }

    /// Integrates a field in `(x, t)` order, returning one value per space
    /// node at the rule's time.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let (nx, nt) = (self.rule.nx, self.rule.nt);
        let mut tm = vec![0.0; nx * (self.t_index + 1)];
        for i in 0..nx {
            for k in 0..=self.t_index.min(nt - 1) {
                tm[k * nx + i] = f[i * nt + k];
            }
        }
        self.rule.integrate_row(&tm, self.t_index)
    }
}

/// The space-time rule for output time `t_index` on an `(x, t)` grid. Index 0
/// (where the time integral is empty) yields a rule that returns zeros.
pub fn heat_rule(grid: &Grid, t_index: usize) -> Result<HeatRowRule> {
    if grid.dim() != 2 || t_index >= grid.axis(1).nodes {
        return Err(Error::InvalidGrid(format!("time index {t_index} is outside the grid")));
    }
    Ok(HeatRowRule { t_index, rule: Arc::new(HeatRule::new(grid)?) })
}

/// Equations whose residual can be measured on a computed solution.
#[derive(Debug, Clone, Copy)]
pub enum Equation<'a> {
    /// `phi^p = int_{R+} (H(t-s) - H(t+s)) phi`, unknown `phi` on the half-line
    /// grid.
    PadicHalf(&'a PadicOperator),
    /// `f^p = int_R H(t-s) f`, unknown `f` on the mirrored full-line grid.
    PadicFull(&'a PadicOperator),
    /// `f = int U(x, t, f(t)) dt`.
    Urysohn(&'a UrysohnOperator),
    /// `u = g + int int U lambda G(u)`, unknown `u`.
    HeatMild(&'a HeatOperator),
}

/// A sup-norm residual with the accuracy budget of the rule used.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Residual {
    pub value: f64,
    pub budget: f64,
}

/// Sup-norm of `lhs - rhs` over interior nodes, both sides evaluated with the
/// rules of this module.
pub fn residual(equation: Equation<'_>, solution: &ConeVector) -> Result<Residual> {
    match equation {
        Equation::PadicHalf(op) => op.half_residual(solution),
        Equation::PadicFull(op) => op.full_residual(solution),
        Equation::Urysohn(op) => op.residual(solution),
        Equation::HeatMild(op) => op.residual(solution),
    }
}

/// Sup of `|a - b|` over nodes not on the boundary of `grid`.
pub(crate) fn interior_sup(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    let interior = |idx: usize| -> bool {
        match grid.dim() {
            1 => idx > 0 && idx + 1 < grid.len(),
            _ => {
                let n1 = grid.axis(1).nodes;
                let (i, j) = (idx / n1, idx % n1);
                i > 0 && i + 1 < grid.axis(0).nodes && j > 0 && j + 1 < n1
            }
        }
    };
    a.iter()
        .zip(b)
        .enumerate()
        .filter(|(i, _)| interior(*i))
        .map(|(_, (x, y))| (x - y).abs())
        .fold(0.0, f64::max)
}
