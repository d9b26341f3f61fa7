//! Tensor-product quadrature on axis-aligned boxes.
//!
//! Every axis is cut into equal cells; cells that contain a declared
//! breakpoint of the integrand are split there so that each piece sees a
//! smooth integrand. Node sums are reduced in fixed-size chunks with
//! pairwise summation, so results do not depend on the number of worker
//! threads.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::{pairwise_sum, Real};

/// Default ceiling on the number of tensor nodes.
pub const DEFAULT_NODE_BUDGET: usize = 4_000_000;

/// Order of the composite Gauss-Legendre rule.
pub const GAUSS_LEGENDRE_ORDER: usize = 5;

const CHUNK: usize = 2048;

/// Axis-aligned box `[lo_1, hi_1] x ... x [lo_d, hi_d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain<T> {
    lo: Vec<T>,
    hi: Vec<T>,
}

impl<T: Real> BoxDomain<T> {
    pub fn new(lo: Vec<T>, hi: Vec<T>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Dimension(format!(
                "box bounds have lengths {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        for (a, b) in lo.iter().zip(&hi) {
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::Domain("box bounds must be finite".into()));
            }
            if a >= b {
                return Err(Error::InvalidArgument(format!("empty box side [{a}, {b}]")));
            }
        }
        Ok(Self { lo, hi })
    }

    /// Cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: T, hi: T) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn interval(lo: T, hi: T) -> Result<Self> {
        Self::new(vec![lo], vec![hi])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[T] {
        &self.lo
    }

    pub fn hi(&self) -> &[T] {
        &self.hi
    }

    pub fn width(&self, axis: usize) -> T {
        self.hi[axis] - self.lo[axis]
    }

    pub fn volume(&self) -> T {
        (0..self.dim()).fold(T::one(), |acc, k| acc * self.width(k))
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&v, (&a, &b))| v >= a && v <= b)
    }

    pub fn padded(&self, pad: T) -> Self {
        Self {
            lo: self.lo.iter().map(|&a| a - pad).collect(),
            hi: self.hi.iter().map(|&b| b + pad).collect(),
        }
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &Self) -> Self {
        Self {
            lo: self.lo.iter().zip(&other.lo).map(|(&a, &b)| a.min(b)).collect(),
            hi: self.hi.iter().zip(&other.hi).map(|(&a, &b)| a.max(b)).collect(),
        }
    }

    pub fn intersect(&self, other: &Self) -> Option<Self> {
        let lo: Vec<T> = self.lo.iter().zip(&other.lo).map(|(&a, &b)| a.max(b)).collect();
        let hi: Vec<T> = self.hi.iter().zip(&other.hi).map(|(&a, &b)| a.min(b)).collect();
        if lo.iter().zip(&hi).all(|(a, b)| a < b) {
            Some(Self { lo, hi })
        } else {
            None
        }
    }

    /// Image under `x -> shift + scale * x` (scale > 0).
    pub fn affine(&self, shift: &[T], scale: T) -> Self {
        Self {
            lo: self.lo.iter().zip(shift).map(|(&a, &s)| s + scale * a).collect(),
            hi: self.hi.iter().zip(shift).map(|(&b, &s)| s + scale * b).collect(),
        }
    }
}

/// Per-cell rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    Midpoint,
    GaussLegendreComposite,
}

impl Rule {
    pub fn nodes_per_cell(self) -> usize {
        match self {
            Rule::Midpoint => 1,
            Rule::GaussLegendreComposite => GAUSS_LEGENDRE_ORDER,
        }
    }
}

/// Integration domain, rule and resolution used by every numerical norm and
/// divergence.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSpec<T> {
    pub domain: BoxDomain<T>,
    pub rule: Rule,
    /// Equal-width cells per axis before breakpoint splitting.
    pub points_per_axis: usize,
    pub tail_padding: T,
    pub node_budget: usize,
}

impl<T: Real> QuadratureSpec<T> {
    pub fn new(domain: BoxDomain<T>, rule: Rule, points_per_axis: usize) -> Result<Self> {
        let spec = Self {
            domain,
            rule,
            points_per_axis,
            tail_padding: T::zero(),
            node_budget: DEFAULT_NODE_BUDGET,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_padding(mut self, pad: T) -> Result<Self> {
        if !(pad >= T::zero()) || !pad.is_finite() {
            return Err(Error::InvalidArgument(
                "tail padding must be finite and nonnegative".into(),
            ));
        }
        self.tail_padding = pad;
        Ok(self)
    }

    pub fn with_budget(mut self, budget: usize) -> Result<Self> {
        self.node_budget = budget;
        self.validate()?;
        Ok(self)
    }

    /// Same rule and resolution on another box.
    pub fn with_domain(&self, domain: BoxDomain<T>) -> Self {
        Self {
            domain,
            tail_padding: T::zero(),
            ..self.clone()
        }
    }

    pub fn with_points(&self, points_per_axis: usize) -> Self {
        Self {
            points_per_axis,
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Integration box after tail padding.
    pub fn effective_domain(&self) -> BoxDomain<T> {
        self.domain.padded(self.tail_padding)
    }

    fn validate(&self) -> Result<()> {
        if self.points_per_axis < 2 {
            return Err(Error::InvalidArgument("points_per_axis must be at least 2".into()));
        }
        let nodes = self.base_node_count();
        if nodes > self.node_budget {
            return Err(Error::NodeBudget {
                nodes,
                budget: self.node_budget,
            });
        }
        Ok(())
    }

    fn base_node_count(&self) -> usize {
        let per_axis = self.points_per_axis.saturating_mul(self.rule.nodes_per_cell());
        (0..self.dim()).fold(1usize, |acc, _| acc.saturating_mul(per_axis))
    }

    /// Builds the tensor grid, splitting cells at the given per-axis
    /// breakpoints.
    pub fn grid(&self, breakpoints: &[Vec<T>]) -> Result<TensorGrid<T>> {
        let domain = self.effective_domain();
        let axes: Vec<AxisRule<T>> = (0..self.dim())
            .map(|k| {
                let bps = breakpoints.get(k).map(|v| v.as_slice()).unwrap_or(&[]);
                AxisRule::build(domain.lo()[k], domain.hi()[k], self.points_per_axis, self.rule, bps)
            })
            .collect();
        let grid = TensorGrid { axes };
        let nodes = grid.len();
        if nodes > self.node_budget {
            return Err(Error::NodeBudget {
                nodes,
                budget: self.node_budget,
            });
        }
        Ok(grid)
    }

    /// Grid at half the resolution, used for two-level error estimates.
    pub fn coarse(&self) -> Self {
        self.with_points((self.points_per_axis / 2).max(1))
    }
}

/// One-dimensional node/weight list.
#[derive(Debug, Clone)]
pub struct AxisRule<T> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Real> AxisRule<T> {
    pub fn build(lo: T, hi: T, cells: usize, rule: Rule, breakpoints: &[T]) -> Self {
        let cells = cells.max(1);
        let h = (hi - lo) / T::from_usize_lossy(cells);
        let mut cuts: Vec<T> = (0..=cells).map(|i| lo + h * T::from_usize_lossy(i)).collect();
        cuts[cells] = hi;
        let tiny = h * T::lit(1e-9);
        for &b in breakpoints {
            if b > lo + tiny && b < hi - tiny {
                cuts.push(b);
            }
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite cuts"));
        cuts.dedup_by(|a, b| (*a - *b).abs() <= tiny);

        let (ref_nodes, ref_weights) = match rule {
            Rule::Midpoint => (vec![T::zero()], vec![T::lit(2.0)]),
            Rule::GaussLegendreComposite => gauss_legendre(GAUSS_LEGENDRE_ORDER),
        };
        let half = T::lit(0.5);
        let mut nodes = Vec::with_capacity((cuts.len() - 1) * ref_nodes.len());
        let mut weights = Vec::with_capacity(nodes.capacity());
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let c = half * (a + b);
            let r = half * (b - a);
            for (&t, &wt) in ref_nodes.iter().zip(&ref_weights) {
                nodes.push(c + r * t);
                weights.push(r * wt);
            }
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Tensor product of axis rules.
#[derive(Debug, Clone)]
pub struct TensorGrid<T> {
    axes: Vec<AxisRule<T>>,
}

impl<T: Real> TensorGrid<T> {
    pub fn from_axes(axes: Vec<AxisRule<T>>) -> Self {
        Self { axes }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().fold(1usize, |acc, a| acc.saturating_mul(a.len()))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn axes(&self) -> &[AxisRule<T>] {
        &self.axes
    }

    /// Writes node `index` into `x` and returns its weight. The last axis
    /// varies fastest.
    pub fn node(&self, mut index: usize, x: &mut [T]) -> T {
        let mut w = T::one();
        for k in (0..self.axes.len()).rev() {
            let axis = &self.axes[k];
            let i = index % axis.len();
            index /= axis.len();
            x[k] = axis.nodes[i];
            w *= axis.weights[i];
        }
        w
    }

    /// `Σ w_i f(x_i)` with chunked pairwise reduction.
    pub fn integrate<F>(&self, f: F) -> T
    where
        F: Fn(&[T]) -> T + Sync,
    {
        let partial = self.chunk_map(|x, w| w * f(x));
        pairwise_sum(&partial)
    }

    /// Largest value of `f` over the nodes.
    pub fn max<F>(&self, f: F) -> T
    where
        F: Fn(&[T]) -> T + Sync,
    {
        let n = self.len();
        let chunks = n.div_ceil(CHUNK);
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut x = vec![T::zero(); self.dim()];
                let mut best = T::neg_infinity();
                for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    self.node(i, &mut x);
                    best = best.max(f(&x));
                }
                best
            })
            .collect::<Vec<T>>()
            .into_iter()
            .fold(T::neg_infinity(), T::max)
    }

    /// Values of `f` at every node, in node order.
    pub fn sample<F>(&self, f: F) -> Vec<T>
    where
        F: Fn(&[T]) -> T + Sync,
    {
        let n = self.len();
        (0..n)
            .into_par_iter()
            .with_min_len(CHUNK)
            .map_init(
                || vec![T::zero(); self.dim()],
                |x, i| {
                    self.node(i, x);
                    f(x)
                },
            )
            .collect()
    }

    /// Quadrature weights in node order.
    pub fn weights(&self) -> Vec<T> {
        let mut x = vec![T::zero(); self.dim()];
        (0..self.len()).map(|i| self.node(i, &mut x)).collect()
    }

    /// Node coordinates in node order.
    pub fn points(&self) -> Vec<Vec<T>> {
        let mut x = vec![T::zero(); self.dim()];
        (0..self.len())
            .map(|i| {
                self.node(i, &mut x);
                x.clone()
            })
            .collect()
    }

    /// First node (in order) where `pred` fails, if any.
    pub fn find_node<F>(&self, pred: F) -> Option<Vec<T>>
    where
        F: Fn(&[T]) -> bool + Sync,
    {
        let n = self.len();
        let chunks = n.div_ceil(CHUNK);
        (0..chunks)
            .into_par_iter()
            .filter_map(|c| {
                let mut x = vec![T::zero(); self.dim()];
                for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    self.node(i, &mut x);
                    if !pred(&x) {
                        return Some(x);
                    }
                }
                None
            })
            .find_first(|_| true)
    }

    fn chunk_map<F>(&self, f: F) -> Vec<T>
    where
        F: Fn(&[T], T) -> T + Sync,
    {
        let n = self.len();
        let chunks = n.div_ceil(CHUNK);
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut x = vec![T::zero(); self.dim()];
                let vals: Vec<T> = (c * CHUNK..((c + 1) * CHUNK).min(n))
                    .map(|i| {
                        let w = self.node(i, &mut x);
                        f(&x, w)
                    })
                    .collect();
                pairwise_sum(&vals)
            })
            .collect()
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` (Newton iteration on the
/// Legendre recurrence).
pub fn gauss_legendre<T: Real>(n: usize) -> (Vec<T>, Vec<T>) {
    let mut nodes = vec![T::zero(); n];
    let mut weights = vec![T::zero(); n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0f64, x);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 {
                1.0
            } else if n == 1 {
                x
            } else {
                p1
            };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = nf * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = T::lit(-x);
        nodes[n - 1 - i] = T::lit(x);
        weights[i] = T::lit(w);
        weights[n - 1 - i] = T::lit(w);
    }
    (nodes, weights)
}

/// Adaptive Gauss-Legendre integration of a scalar function on `[a, b]`.
///
/// Each interval is accepted when its 5-point estimate agrees with the sum
/// over its two halves to within `tol` scaled by the interval share.
pub fn adaptive_integrate<T, F>(f: F, a: T, b: T, tol: T) -> T
where
    T: Real,
    F: Fn(T) -> T,
{
    let (nodes, weights) = gauss_legendre::<T>(GAUSS_LEGENDRE_ORDER);
    let rule = |lo: T, hi: T| {
        let c = T::lit(0.5) * (lo + hi);
        let r = T::lit(0.5) * (hi - lo);
        nodes
            .iter()
            .zip(&weights)
            .fold(T::zero(), |acc, (&t, &w)| acc + w * f(c + r * t))
            * r
    };
    let total = b - a;
    let mut stack = vec![(a, b, rule(a, b), 0usize)];
    let mut pieces = Vec::new();
    while let Some((lo, hi, whole, depth)) = stack.pop() {
        let mid = T::lit(0.5) * (lo + hi);
        let left = rule(lo, mid);
        let right = rule(mid, hi);
        let share = (hi - lo) / total;
        if (left + right - whole).abs() <= tol * share || depth >= 50 {
            pieces.push(left + right);
        } else {
            stack.push((lo, mid, left, depth + 1));
            stack.push((mid, hi, right, depth + 1));
        }
    }
    pieces.sort_by(|x, y| x.abs().partial_cmp(&y.abs()).expect("finite pieces"));
    pairwise_sum(&pieces)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre::<f64>(5);
        // degree 9 is the highest exact degree for 5 nodes
        let integral: f64 = x.iter().zip(&w).map(|(&t, &wt)| wt * t.powi(8)).sum();
        assert!((integral - 2.0 / 9.0).abs() < 1e-14);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    #[test]
    fn breakpoints_split_cells() {
        let axis = AxisRule::<f64>::build(0.0, 1.0, 2, Rule::Midpoint, &[0.25]);
        assert_eq!(axis.len(), 3);
        assert!((axis.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        // a step at 0.25 is integrated exactly
        let step: f64 = axis
            .nodes
            .iter()
            .zip(&axis.weights)
            .map(|(&x, &w)| if x < 0.25 { w } else { 0.0 })
            .sum();
        assert!((step - 0.25).abs() < 1e-15);
    }

    #[test]
    fn tensor_grid_volume() {
        let spec = QuadratureSpec::new(
            BoxDomain::new(vec![0.0f64, -1.0], vec![2.0, 1.0]).unwrap(),
            Rule::GaussLegendreComposite,
            4,
        )
        .unwrap();
        let grid = spec.grid(&[]).unwrap();
        assert_eq!(grid.len(), 400);
        assert!((grid.integrate(|_| 1.0) - 4.0).abs() < 1e-13);
        let xy = grid.integrate(|x| x[0] * x[1] * x[1]);
        assert!((xy - 4.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn budget_is_enforced() {
        let err = QuadratureSpec::new(
            BoxDomain::cube(3, 0.0f64, 1.0).unwrap(),
            Rule::GaussLegendreComposite,
            400,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NodeBudget { .. }));
    }

    #[test]
    fn rejects_degenerate_spec() {
        assert!(QuadratureSpec::new(BoxDomain::interval(0.0f64, 1.0).unwrap(), Rule::Midpoint, 1).is_err());
        assert!(BoxDomain::interval(1.0f64, 1.0).is_err());
    }

    #[test]
    fn adaptive_handles_root_singularity() {
        let v = adaptive_integrate(|x: f64| x.sqrt(), 0.0, 1.0, 1e-12);
        assert!((v - 2.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn find_node_reports_first_failure() {
        let spec = QuadratureSpec::new(BoxDomain::interval(0.0f64, 1.0).unwrap(), Rule::Midpoint, 10).unwrap();
        let grid = spec.grid(&[]).unwrap();
        let bad = grid.find_node(|x| x[0] < 0.5).unwrap();
        assert!((bad[0] - 0.55).abs() < 1e-12);
        assert!(grid.find_node(|_| true).is_none());
    }
}
