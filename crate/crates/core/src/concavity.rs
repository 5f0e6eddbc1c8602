//! Concavity profiles `phi: [0,1] -> [0,1]` and the scalar equations built on
//! them.
//!
//! A monotone operator `A` is strongly concave with profile `phi` on a set
//! when `A(s u) >= phi(s) A u` for every `u` in the set and `s` in `[0,1]`.
//! The profile determines everything the iteration engine certifies a priori:
//! the lower bracket `tau*` solving `phi(tau) = tau / sigma0`, the upper
//! bracket `delta` solving `delta * phi(1/delta) = r0`, and the geometric rate
//! `k = (1 - phi(sigma0)) / (1 - sigma0)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bisection step cap shared by both characteristic solvers.
pub const MAX_BISECTION_STEPS: usize = 200;
/// Residual tolerance for `sigma0 * phi(tau) = tau`, relative to `sigma0`.
pub const TAU_TOL: f64 = 1e-14;
/// Residual tolerance for `delta * phi(1/delta) = r0`, relative to `r0`.
pub const DELTA_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ConcavityProfile {
    /// `phi(s) = s^gamma`, `gamma` in (0,1).
    Power { gamma: f64 },
    /// `Phi(s) = (c0 * s + base(s)) / (1 + c0)`, the profile of `A + A0` when
    /// `A0 <= c0 * A`.
    SumMix { base: Box<ConcavityProfile>, c0: f64 },
}

impl ConcavityProfile {
    pub fn power(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Domain(format!("power profile exponent must lie in (0,1), got {gamma}")));
        }
        Ok(Self::Power { gamma })
    }

    pub fn sum_mix(base: ConcavityProfile, c0: f64) -> Result<Self> {
        if !(c0 > 0.0 && c0.is_finite()) {
            return Err(Error::Domain(format!("mixing weight c0 must be > 0, got {c0}")));
        }
        Ok(Self::SumMix { base: Box::new(base), c0 })
    }

    /// Evaluates without the domain check. Callers guarantee `sigma` in [0,1].
    pub fn eval(&self, sigma: f64) -> f64 {
        match self {
            Self::Power { gamma } => {
                if sigma == 0.0 {
                    0.0
                } else {
                    sigma.powf(*gamma)
                }
            }
            Self::SumMix { base, c0 } => (c0 * sigma + base.eval(sigma)) / (1.0 + c0),
        }
    }

    /// `phi'(1)`, the limit of the rate constant as its argument tends to 1.
    pub fn derivative_at_one(&self) -> f64 {
        match self {
            Self::Power { gamma } => *gamma,
            Self::SumMix { base, c0 } => (c0 + base.derivative_at_one()) / (1.0 + c0),
        }
    }

    /// Samples the profile on `samples + 1` equispaced points and checks the
    /// endpoint values, monotonicity, concavity and `phi(s) >= s`.
    pub fn validate(&self, samples: usize) -> Result<()> {
        if self.eval(0.0) != 0.0 || self.eval(1.0) != 1.0 {
            return Err(Error::Domain(format!("profile {self} does not fix the endpoints 0 and 1")));
        }
        let n = samples.max(2);
        let vals: Vec<f64> = (0..=n).map(|i| self.eval(i as f64 / n as f64)).collect();
        for i in 1..=n {
            let s = i as f64 / n as f64;
            if vals[i] <= vals[i - 1] {
                return Err(Error::Domain(format!("profile {self} is not increasing near {s}")));
            }
            if vals[i] < s - 1e-15 {
                return Err(Error::Domain(format!("profile {self} falls below the diagonal at {s}")));
            }
            if i < n && vals[i] < 0.5 * (vals[i - 1] + vals[i + 1]) - 1e-14 {
                return Err(Error::Domain(format!("profile {self} is not concave near {s}")));
            }
        }
        // phi'(0+) = +inf shows up as an unbounded difference quotient.
        let q = self.eval(1e-12) / 1e-12;
        if q < 1e3 {
            return Err(Error::Domain(format!("profile {self} has a finite slope at 0")));
        }
        Ok(())
    }
}

impl fmt::Display for ConcavityProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Power { gamma } => write!(f, "power:{gamma}"),
            Self::SumMix { base, c0 } => match base.as_ref() {
                Self::Power { gamma } => write!(f, "summix:{gamma}:{c0}"),
                other => write!(f, "summix({other}):{c0}"),
            },
        }
    }
}

impl FromStr for ConcavityProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |t: &str| t.parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
        match parts.as_slice() {
            ["power", g] => Self::power(num(g)?),
            ["summix", g, c0] => Self::sum_mix(Self::power(num(g)?)?, num(c0)?),
            _ => Err(Error::Parse(format!("unknown profile {s:?}; expected power:<gamma> or summix:<gamma>:<c0>"))),
        }
    }
}

impl TryFrom<String> for ConcavityProfile {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ConcavityProfile> for String {
    fn from(p: ConcavityProfile) -> String {
        p.to_string()
    }
}

fn check_unit(sigma: f64) -> Result<()> {
    if (0.0..=1.0).contains(&sigma) {
        Ok(())
    } else {
        Err(Error::Domain(format!("sigma must lie in [0,1], got {sigma}")))
    }
}

fn check_open_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must lie in (0,1), got {v}")))
    }
}

pub fn phi_eval(p: &ConcavityProfile, sigma: f64) -> Result<f64> {
    check_unit(sigma)?;
    Ok(p.eval(sigma))
}

/// The `n`-fold composition `phi(phi(...phi(sigma)))`.
pub fn phi_iterate(p: &ConcavityProfile, sigma: f64, n: usize) -> Result<f64> {
    check_unit(sigma)?;
    Ok((0..n).fold(sigma, |s, _| p.eval(s)))
}

/// Bisection that splits geometrically while the bracket spans more than a
/// factor of two, so brackets reaching down to tiny positive values still
/// resolve within [`MAX_BISECTION_STEPS`]. `pred(x)` must be true at `lo` and
/// false at `hi`.
fn bisect(mut lo: f64, mut hi: f64, pred: impl Fn(f64) -> bool) -> Result<(f64, f64)> {
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = if hi > 2.0 * lo && lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        if mid <= lo || mid >= hi {
            return Ok((lo, hi));
        }
        if pred(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Solver(format!("bisection did not close the bracket [{lo}, {hi}] in {MAX_BISECTION_STEPS} steps")))
}

/// The unique root `tau*` in `(0, sigma0)` of `phi(tau) = tau / sigma0`.
pub fn solve_tau(p: &ConcavityProfile, sigma0: f64) -> Result<f64> {
    check_open_unit("sigma0", sigma0)?;
    let chi = |t: f64| p.eval(t) / t - 1.0 / sigma0;
    let mut lo = 0.5 * sigma0;
    let mut halvings = 0;
    while chi(lo) <= 0.0 {
        lo *= 0.5;
        halvings += 1;
        if lo == 0.0 || halvings > 2000 {
            return Err(Error::Solver(format!("no positive lower bracket for tau with sigma0 = {sigma0}")));
        }
    }
    let (a, b) = bisect(lo, sigma0, |t| chi(t) > 0.0)?;
    let residual = |t: f64| (sigma0 * p.eval(t) - t).abs();
    let tau = if residual(a) <= residual(b) { a } else { b };
    if residual(tau) > TAU_TOL * sigma0 {
        return Err(Error::Solver(format!(
            "tau = {tau} leaves residual {:e} above {:e}",
            residual(tau),
            TAU_TOL * sigma0
        )));
    }
    Ok(tau)
}

/// The unique root `delta > r0` of `delta * phi(1/delta) = r0`.
pub fn solve_delta(p: &ConcavityProfile, r0: f64) -> Result<f64> {
    if !(r0 > 1.0 && r0.is_finite()) {
        return Err(Error::Domain(format!("r0 must be > 1, got {r0}")));
    }
    let lift = |d: f64| d * p.eval(1.0 / d);
    let mut hi = 2.0 * r0;
    while lift(hi) <= r0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Solver(format!("no upper bracket for delta with r0 = {r0}")));
        }
    }
    let (a, b) = bisect(r0, hi, |d| lift(d) < r0)?;
    let residual = |d: f64| (lift(d) - r0).abs();
    let delta = if residual(a) <= residual(b) { a } else { b };
    if residual(delta) > DELTA_TOL * r0 {
        return Err(Error::Solver(format!(
            "delta = {delta} leaves residual {:e} above {:e}",
            residual(delta),
            DELTA_TOL * r0
        )));
    }
    Ok(delta)
}

/// `k = (1 - phi(sigma0)) / (1 - sigma0)`.
pub fn rate_k(p: &ConcavityProfile, sigma0: f64) -> Result<f64> {
    check_open_unit("sigma0", sigma0)?;
    Ok((1.0 - p.eval(sigma0)) / (1.0 - sigma0))
}

/// `max{ k(1/r2), k(r1) }` for a two-sided bracket `r1 < 1 < r2`.
pub fn rate_k_general(p: &ConcavityProfile, r1: f64, r2: f64) -> Result<f64> {
    check_open_unit("r1", r1)?;
    if !(r2 > 1.0 && r2.is_finite()) {
        return Err(Error::Domain(format!("r2 must be > 1, got {r2}")));
    }
    Ok(rate_k(p, 1.0 / r2)?.max(rate_k(p, r1)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn sqrt_profile() -> ConcavityProfile {
        ConcavityProfile::power(0.5).unwrap()
    }

    #[test]
    fn phi_eval_examples() {
        assert_eq!(phi_eval(&sqrt_profile(), 0.25).unwrap(), 0.5);
        for g in [0.1, 1.0 / 3.0, 0.9] {
            assert_eq!(phi_eval(&ConcavityProfile::power(g).unwrap(), 1.0).unwrap(), 1.0);
        }
        let mix = ConcavityProfile::sum_mix(sqrt_profile(), 1.0).unwrap();
        assert_eq!(phi_eval(&mix, 0.25).unwrap(), 0.375);
        assert!(matches!(phi_eval(&mix, 1.5), Err(Error::Domain(_))));
        assert!(phi_eval(&mix, -0.1).is_err());
    }

    #[test]
    fn phi_iterate_examples() {
        let p = sqrt_profile();
        assert_eq!(phi_iterate(&p, 0.3, 0).unwrap(), 0.3);
        assert_relative_eq!(phi_iterate(&p, 1.0 / 16.0, 2).unwrap(), 0.5, max_relative = 1e-15);
        for n in 0..12 {
            let closed = 0.2f64.powf(0.5f64.powi(n as i32));
            assert_relative_eq!(phi_iterate(&p, 0.2, n).unwrap(), closed, max_relative = 1e-13);
        }
    }

    #[test]
    fn solve_tau_examples() {
        let p = sqrt_profile();
        assert_relative_eq!(solve_tau(&p, 0.5).unwrap(), 0.25, max_relative = 1e-14);
        assert_relative_eq!(solve_tau(&p, 1.0 / 3.0).unwrap(), 1.0 / 9.0, max_relative = 1e-14);
        for (alpha, s) in [(0.2, 0.7), (0.75, 0.05), (1.0 / 3.0, 0.999)] {
            let p = ConcavityProfile::power(alpha).unwrap();
            let tau = solve_tau(&p, s).unwrap();
            assert_relative_eq!(tau, s.powf(1.0 / (1.0 - alpha)), max_relative = 1e-12);
            assert!(tau > 0.0 && tau < s);
        }
        assert!(solve_tau(&p, 1.0).is_err());
        assert!(solve_tau(&p, 0.0).is_err());
    }

    #[test]
    fn solve_tau_reaches_tiny_roots() {
        let p = ConcavityProfile::power(0.75).unwrap();
        let tau = solve_tau(&p, 1e-20).unwrap();
        assert_relative_eq!(tau, 1e-80, max_relative = 1e-12);
    }

    #[test]
    fn solve_delta_examples() {
        let p = sqrt_profile();
        assert_relative_eq!(solve_delta(&p, 2.0).unwrap(), 4.0, max_relative = 1e-12);
        assert_relative_eq!(solve_delta(&p, 1.5).unwrap(), 2.25, max_relative = 1e-12);
        let p = ConcavityProfile::power(0.75).unwrap();
        assert_relative_eq!(solve_delta(&p, 3.0).unwrap(), 81.0, max_relative = 1e-10);
        assert!(solve_delta(&p, 1.0).is_err());
    }

    #[test]
    fn rate_examples() {
        let p = sqrt_profile();
        let k = rate_k(&p, 1.0 / 3.0).unwrap();
        assert_relative_eq!(k, (1.0 - (1.0f64 / 3.0).sqrt()) / (2.0 / 3.0), max_relative = 1e-15);
        assert!((k - 0.633975).abs() < 1e-6);
        assert_relative_eq!(rate_k(&p, 0.25).unwrap(), 2.0 / 3.0, max_relative = 1e-15);
        for alpha in [0.2, 0.5, 0.8] {
            let p = ConcavityProfile::power(alpha).unwrap();
            assert!((rate_k(&p, 1.0 - 1e-6).unwrap() - alpha).abs() < 1e-4);
        }
        assert!(rate_k(&p, 1.0).is_err());
    }

    #[test]
    fn rate_general_examples() {
        let p = sqrt_profile();
        assert_relative_eq!(rate_k_general(&p, 0.25, 4.0).unwrap(), 2.0 / 3.0, max_relative = 1e-15);
        let k = rate_k_general(&p, 0.81, 2.0).unwrap();
        assert!((k - 0.58579).abs() < 1e-5, "{k}");
        let k = rate_k_general(&p, 1.0 - 1e-6, 1.0 + 1e-6).unwrap();
        assert!((k - 0.5).abs() < 1e-4);
        assert!(rate_k_general(&p, 0.5, 0.5).is_err());
        assert!(rate_k_general(&p, 1.2, 2.0).is_err());
    }

    #[test]
    fn shipped_profiles_validate() {
        for p in [
            ConcavityProfile::power(0.2).unwrap(),
            ConcavityProfile::power(0.75).unwrap(),
            ConcavityProfile::sum_mix(sqrt_profile(), 0.5).unwrap(),
        ] {
            p.validate(10_000).unwrap();
        }
    }

    #[test]
    fn parse_round_trip() {
        let p: ConcavityProfile = "summix:0.5:0.25".parse().unwrap();
        assert_eq!(p, ConcavityProfile::sum_mix(sqrt_profile(), 0.25).unwrap());
        assert_eq!(p.to_string(), "summix:0.5:0.25");
        assert_eq!("power:0.5".parse::<ConcavityProfile>().unwrap(), sqrt_profile());
        assert!("power:1".parse::<ConcavityProfile>().is_err());
        assert!("linear".parse::<ConcavityProfile>().is_err());
    }

    fn profiles() -> impl Strategy<Value = ConcavityProfile> {
        prop_oneof![
            (0.05f64..0.95).prop_map(|g| ConcavityProfile::power(g).unwrap()),
            (0.05f64..0.95, 0.01f64..5.0)
                .prop_map(|(g, c)| ConcavityProfile::sum_mix(ConcavityProfile::power(g).unwrap(), c).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn tau_fixed_point_identity(p in profiles(), s in 0.001f64..0.999) {
            let tau = solve_tau(&p, s).unwrap();
            prop_assert!(tau > 0.0 && tau < s);
            prop_assert!((s * p.eval(tau) - tau).abs() <= 1e-13 * tau.max(s * 1e-1));
        }

        #[test]
        fn delta_identity(p in profiles(), r0 in 1.001f64..50.0) {
            let d = solve_delta(&p, r0).unwrap();
            prop_assert!(d > r0);
            prop_assert!((d * p.eval(1.0 / d) - r0).abs() <= 1e-12 * r0);
        }

        #[test]
        fn profiles_are_concave(p in profiles(), a in 0.0f64..=1.0, b in 0.0f64..=1.0, l in 0.0f64..=1.0) {
            let lhs = p.eval(l * a + (1.0 - l) * b);
            prop_assert!(lhs >= l * p.eval(a) + (1.0 - l) * p.eval(b) - 1e-12);
        }

        #[test]
        fn profiles_dominate_the_diagonal(p in profiles(), s in 0.0f64..=1.0) {
            prop_assert!(p.eval(s) >= s);
            prop_assert_eq!(p.eval(1.0), 1.0);
        }

        #[test]
        fn geometric_envelope(p in profiles(), s in 0.001f64..0.999) {
            let k = rate_k(&p, s).unwrap();
            let mut phi_n = s;
            for n in 0..=200 {
                let gap = 1.0 - phi_n;
                let bound = (1.0 - s) * k.powi(n);
                prop_assert!(gap <= bound + 1e-12, "n={} gap={:e} bound={:e}", n, gap, bound);
                phi_n = p.eval(phi_n);
            }
        }

        #[test]
        fn iterates_increase_to_one(p in profiles(), s in 0.01f64..0.99) {
            let mut prev = s;
            for n in 1..2000 {
                let v = phi_iterate(&p, prev, 1).unwrap();
                prop_assert!(v >= prev && v <= 1.0);
                prev = v;
                if n == 1999 {
                    prop_assert!(prev > 1.0 - 1e-3);
                }
            }
        }
    }
}
