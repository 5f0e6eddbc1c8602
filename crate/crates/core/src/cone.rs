//! Grid functions ordered by the cone of nonnegative vectors.
//!
//! A [`ConeVector`] is the discrete stand-in for an element of a cone of
//! nonnegative functions: one value per node of a uniform [`Grid`]. The order
//! is componentwise, the norm is the sup norm, so the normality constant of
//! the cone is exactly 1.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default slack for order comparisons and cone membership.
pub const DEFAULT_ORDER_TOL: f64 = 1e-10;

/// One uniform axis of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub nodes: usize,
}

impl Axis {
    pub fn uniform(lower: f64, upper: f64, nodes: usize) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::InvalidGrid(format!("axis needs at least 2 nodes, got {nodes}")));
        }
        if !(lower.is_finite() && upper.is_finite()) || upper <= lower {
            return Err(Error::InvalidGrid(format!("axis bounds [{lower}, {upper}] are not increasing")));
        }
        Ok(Self { lower, upper, nodes })
    }

    /// An index axis `1, 2, ..., n` with unit spacing (sequence spaces and the
    /// scalar cone, where `n = 1`).
    pub fn index(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGrid("index axis needs at least one node".into()));
        }
        Ok(Self { lower: 1.0, upper: n as f64, nodes: n })
    }

    pub fn spacing(&self) -> f64 {
        if self.nodes < 2 {
            1.0
        } else {
            (self.upper - self.lower) / (self.nodes - 1) as f64
        }
    }

    pub fn coord(&self, i: usize) -> f64 {
        if i + 1 == self.nodes {
            self.upper
        } else {
            self.lower + i as f64 * self.spacing()
        }
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.nodes).map(|i| self.coord(i)).collect()
    }
}

/// A tensor grid with one or two uniform axes, stored row-major (the last
/// axis varies fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    axes: Vec<Axis>,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::InvalidGrid(format!("grid must have 1 or 2 axes, got {}", axes.len())));
        }
        Ok(Self { axes })
    }

    pub fn line(lower: f64, upper: f64, nodes: usize) -> Result<Self> {
        Self::new(vec![Axis::uniform(lower, upper, nodes)?])
    }

    pub fn plane(first: Axis, second: Axis) -> Result<Self> {
        Self::new(vec![first, second])
    }

    pub fn index(n: usize) -> Result<Self> {
        Self::new(vec![Axis::index(n)?])
    }

    pub fn scalar() -> Self {
        Self { axes: vec![Axis { lower: 1.0, upper: 1.0, nodes: 1 }] }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, k: usize) -> &Axis {
        &self.axes[k]
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.nodes).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of node `(i, j)` on a 2-D grid.
    pub fn flat(&self, i: usize, j: usize) -> usize {
        i * self.axes[1].nodes + j
    }

    pub fn header(&self) -> String {
        let mut s = format!("# grid: dim={}", self.dim());
        for (k, a) in self.axes.iter().enumerate() {
            let _ = write!(s, " axis{k}={}:{}:{}", a.lower, a.upper, a.nodes);
        }
        s
    }

    pub fn parse_header(line: &str) -> Result<Self> {
        let rest = line
            .trim()
            .strip_prefix("# grid:")
            .ok_or_else(|| Error::Parse(format!("missing grid header in {line:?}")))?;
        let mut dim = None;
        let mut axes = Vec::new();
        for tok in rest.split_whitespace() {
            let (key, val) = tok
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad header token {tok:?}")))?;
            if key == "dim" {
                dim = Some(val.parse::<usize>().map_err(|e| Error::Parse(e.to_string()))?);
            } else if key.starts_with("axis") {
                let parts: Vec<&str> = val.split(':').collect();
                if parts.len() != 3 {
                    return Err(Error::Parse(format!("bad axis spec {val:?}")));
                }
                let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(e.to_string()));
                let nodes = parts[2].parse::<usize>().map_err(|e| Error::Parse(e.to_string()))?;
                axes.push(Axis { lower: num(parts[0])?, upper: num(parts[1])?, nodes });
            } else {
                return Err(Error::Parse(format!("unknown header key {key:?}")));
            }
        }
        if dim != Some(axes.len()) {
            return Err(Error::Parse(format!("header declares dim={dim:?} but lists {} axes", axes.len())));
        }
        Grid::new(axes)
    }
}

/// Values of a grid function, one per node.
///
/// Vectors built with [`ConeVector::new`] are checked to lie in the cone up to
/// `order_tol`. Arithmetic results (differences in particular) are not
/// re-checked and may be signed.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeVector {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ConeVector {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>, order_tol: f64) -> Result<Self> {
        let v = Self::signed(grid, values)?;
        v.check_in_cone(order_tol)?;
        Ok(v)
    }

    /// A grid function with no sign requirement.
    pub fn signed(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "{} values for a grid with {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Self {
        let n = grid.len();
        Self { grid, values: vec![c; n] }
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(usize) -> f64) -> Self {
        let values = (0..grid.len()).map(f).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_in_cone(&self, order_tol: f64) -> Result<()> {
        match self.values.iter().position(|&v| !(v >= -order_tol)) {
            Some(node) => Err(Error::NotInCone { node, value: self.values[node], tol: order_tol }),
            None => Ok(()),
        }
    }

    pub fn compatible(&self, other: &ConeVector) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid {
            Ok(())
        } else {
            Err(Error::IncompatibleGrid(format!("{} vs {}", self.grid.header(), other.grid.header())))
        }
    }

    pub fn sup_norm(&self) -> f64 {
        sup_norm(self)
    }

    pub fn scale(&self, alpha: f64) -> ConeVector {
        self.map(|v| alpha * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ConeVector {
        ConeVector { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn add(&self, other: &ConeVector) -> Result<ConeVector> {
        axpy(1.0, self, other)
    }

    pub fn sub(&self, other: &ConeVector) -> Result<ConeVector> {
        axpy(-1.0, other, self)
    }

    /// `sup |self - other|` without allocating.
    pub fn distance(&self, other: &ConeVector) -> Result<f64> {
        self.compatible(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs())))
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.grid.header();
        s.push('\n');
        for v in &self.values {
            let _ = writeln!(s, "{v:?}");
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<ConeVector> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty vector file".into()))?;
        let grid = Arc::new(Grid::parse_header(header)?);
        let values = lines
            .map(|l| l.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{l:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        ConeVector::signed(grid, values)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<ConeVector> {
        ConeVector::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// `a <= b + tol` at every node.
pub fn leq(a: &ConeVector, b: &ConeVector, tol: f64) -> Result<bool> {
    if tol < 0.0 {
        return Err(Error::Domain(format!("order tolerance must be >= 0, got {tol}")));
    }
    a.compatible(b)?;
    Ok(a.values.iter().zip(&b.values).all(|(x, y)| *x <= *y + tol))
}

pub fn sup_norm(a: &ConeVector) -> f64 {
    a.values.iter().fold(0.0, |m, v| f64::max(m, v.abs()))
}

/// `alpha * x + y`, componentwise.
pub fn axpy(alpha: f64, x: &ConeVector, y: &ConeVector) -> Result<ConeVector> {
    x.compatible(y)?;
    let values = x.values.iter().zip(&y.values).map(|(a, b)| alpha * a + b).collect();
    Ok(ConeVector { grid: y.grid.clone(), values })
}

/// The conical segment `<lo, hi> = { x : lo <= x <= hi }`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicalSegment {
    lo: ConeVector,
    hi: ConeVector,
}

impl ConicalSegment {
    pub fn new(lo: ConeVector, hi: ConeVector, order_tol: f64) -> Result<Self> {
        if !leq(&lo, &hi, order_tol)? {
            return Err(Error::Domain("segment endpoints are not ordered (lo <= hi fails)".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> &ConeVector {
        &self.lo
    }

    pub fn hi(&self) -> &ConeVector {
        &self.hi
    }

    pub fn contains(&self, x: &ConeVector, tol: f64) -> Result<bool> {
        segment_contains(self, x, tol)
    }
}

pub fn segment_contains(seg: &ConicalSegment, x: &ConeVector, tol: f64) -> Result<bool> {
    Ok(leq(&seg.lo, x, tol)? && leq(x, &seg.hi, tol)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(n: usize) -> Arc<Grid> {
        Arc::new(Grid::line(0.0, 1.0, n).unwrap())
    }

    #[test]
    fn leq_examples() {
        let g = line(2);
        let z = ConeVector::zeros(g.clone());
        assert!(leq(&z, &z, 0.0).unwrap());
        let ones = ConeVector::constant(g.clone(), 1.0);
        let twos = ConeVector::constant(g.clone(), 2.0);
        assert!(leq(&ones, &twos, 0.0).unwrap());
        let a = ConeVector::signed(g.clone(), vec![1.0, 1.0 + 5e-13]).unwrap();
        assert!(leq(&a, &ones, 1e-12).unwrap());
        assert!(!leq(&a, &ones, 1e-14).unwrap());
    }

    #[test]
    fn incompatible_grids_are_rejected() {
        let a = ConeVector::zeros(line(3));
        let b = ConeVector::zeros(line(4));
        assert!(matches!(leq(&a, &b, 0.0), Err(Error::IncompatibleGrid(_))));
        assert!(axpy(1.0, &a, &b).is_err());
    }

    #[test]
    fn norm_examples() {
        let g = line(2);
        assert_eq!(sup_norm(&ConeVector::zeros(g.clone())), 0.0);
        assert_eq!(sup_norm(&ConeVector::signed(g.clone(), vec![-3.0, 2.0]).unwrap()), 3.0);
        assert_eq!(sup_norm(&ConeVector::constant(line(17), 1.0)), 1.0);
    }

    #[test]
    fn segment_examples() {
        let g = line(5);
        let seg = ConicalSegment::new(
            ConeVector::zeros(g.clone()),
            ConeVector::constant(g.clone(), 1.0),
            0.0,
        )
        .unwrap();
        assert!(segment_contains(&seg, &ConeVector::constant(g.clone(), 0.5), 0.0).unwrap());
        assert!(!segment_contains(&seg, &ConeVector::constant(g.clone(), 1.5), 1e-12).unwrap());
        assert!(ConicalSegment::new(
            ConeVector::constant(g.clone(), 1.0),
            ConeVector::zeros(g),
            0.0
        )
        .is_err());
    }

    #[test]
    fn axpy_examples() {
        let g = line(3);
        let x = ConeVector::from_fn(g.clone(), |i| i as f64 + 0.5);
        let y = ConeVector::constant(g.clone(), 1.0);
        assert_eq!(axpy(0.0, &x, &y).unwrap(), y);
        assert_eq!(axpy(1.0, &y, &y).unwrap().values(), &[2.0; 3]);
        assert_eq!(axpy(-1.0, &x, &x).unwrap().values(), &[0.0; 3]);
    }

    #[test]
    fn cone_membership_permits_small_undershoot() {
        let g = line(2);
        assert!(ConeVector::new(g.clone(), vec![-1e-11, 1.0], DEFAULT_ORDER_TOL).is_ok());
        let err = ConeVector::new(g, vec![0.0, -1e-3], DEFAULT_ORDER_TOL).unwrap_err();
        assert!(matches!(err, Error::NotInCone { node: 1, .. }));
    }

    #[test]
    fn csv_header_for_plane() {
        let g = Grid::plane(Axis::uniform(-8.0, 8.0, 5).unwrap(), Axis::uniform(0.0, 4.0, 3).unwrap()).unwrap();
        assert_eq!(g.header(), "# grid: dim=2 axis0=-8:8:5 axis1=0:4:3");
        assert_eq!(Grid::parse_header(&g.header()).unwrap(), g);
    }

    #[test]
    fn index_axis_coordinates() {
        let a = Axis::index(4).unwrap();
        assert_eq!(a.coords(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(Grid::scalar().len(), 1);
    }

    fn vec3() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..10.0, 3)
    }

    proptest! {
        #[test]
        fn order_is_a_partial_order(a in vec3(), b in vec3(), c in vec3()) {
            let g = line(3);
            let a = ConeVector::signed(g.clone(), a).unwrap();
            let b = ConeVector::signed(g.clone(), b).unwrap();
            let c = ConeVector::signed(g.clone(), c).unwrap();
            prop_assert!(leq(&a, &a, 0.0).unwrap());
            if leq(&a, &b, 0.0).unwrap() && leq(&b, &a, 0.0).unwrap() {
                prop_assert_eq!(&a, &b);
            }
            if leq(&a, &b, 0.0).unwrap() && leq(&b, &c, 0.0).unwrap() {
                prop_assert!(leq(&a, &c, 0.0).unwrap());
            }
        }

        #[test]
        fn sup_norm_is_monotone_on_the_cone(x in vec3(), d in vec3()) {
            let g = line(3);
            let x = ConeVector::signed(g.clone(), x).unwrap();
            let y = x.add(&ConeVector::signed(g, d).unwrap()).unwrap();
            prop_assert!(sup_norm(&x) <= sup_norm(&y));
        }

        #[test]
        fn csv_round_trips_bit_exactly(v in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 1..40)) {
            let g = Arc::new(Grid::line(-1.5, 2.25, v.len().max(2)).unwrap());
            let mut vals = v.clone();
            vals.resize(g.len(), 0.0);
            let x = ConeVector::signed(g, vals).unwrap();
            let back = ConeVector::from_csv(&x.to_csv()).unwrap();
            prop_assert_eq!(back.grid(), x.grid());
            for (a, b) in back.values().iter().zip(x.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
