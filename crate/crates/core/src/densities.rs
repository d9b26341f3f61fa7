//! Parental and target density families.

use std::fmt;
use std::sync::Arc;

use num_rational::Ratio;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::quadrature::{adaptive_integrate, BoxDomain};
use crate::scalar::Real;
use crate::seed;

/// Largest dimension accepted by the stock constructors.
pub const DEFAULT_MAX_DIM: usize = 3;

/// Half-width of the box treated as the support of a standard Gaussian.
pub const GAUSSIAN_SUPPORT_RADIUS: f64 = 12.0;

/// A probability density on `R^d`.
pub trait Density<T: Real>: Send + Sync {
    fn dim(&self) -> usize;

    /// Pointwise value without input validation.
    fn density(&self, x: &[T]) -> T;

    /// Box outside of which the density carries negligible mass.
    fn support(&self) -> Option<BoxDomain<T>>;

    /// Coordinates along `axis` where the density is not smooth.
    fn breakpoints(&self, _axis: usize) -> Vec<T> {
        Vec::new()
    }

    fn can_sample(&self) -> bool {
        false
    }

    /// Writes one exact draw into `out`.
    fn draw(&self, _rng: &mut dyn RngCore, _out: &mut [T]) -> Result<()> {
        Err(Error::Unsupported("density has no sampler".into()))
    }

    /// Validated evaluation.
    fn eval(&self, x: &[T]) -> Result<T> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "point has {} coordinates, density has dimension {}",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite evaluation point".into()));
        }
        Ok(self.density(x))
    }

    /// `count` i.i.d. draws, deterministic in `seed`.
    fn sample(&self, seed: u64, count: usize) -> Result<Vec<Vec<T>>> {
        if !self.can_sample() {
            return Err(Error::Unsupported("density has no sampler".into()));
        }
        let mut rng = seed::rng(seed);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut x = vec![T::zero(); self.dim()];
            self.draw(&mut rng, &mut x)?;
            out.push(x);
        }
        Ok(out)
    }
}

type EvalFn<T> = dyn Fn(&[T]) -> T + Send + Sync;
type DrawFn<T> = dyn Fn(&mut dyn RngCore, &mut [T]) + Send + Sync;

/// User-supplied density: evaluator, bounding box and optional sampler.
#[derive(Clone)]
pub struct CustomDensity<T> {
    pub name: String,
    dim: usize,
    eval: Arc<EvalFn<T>>,
    support: BoxDomain<T>,
    breakpoints: Vec<Vec<T>>,
    sampler: Option<Arc<DrawFn<T>>>,
}

impl<T: Real> CustomDensity<T> {
    pub fn new<F>(name: impl Into<String>, support: BoxDomain<T>, eval: F) -> Self
    where
        F: Fn(&[T]) -> T + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim: support.dim(),
            breakpoints: vec![Vec::new(); support.dim()],
            eval: Arc::new(eval),
            support,
            sampler: None,
        }
    }

    pub fn with_sampler<S>(mut self, sampler: S) -> Self
    where
        S: Fn(&mut dyn RngCore, &mut [T]) + Send + Sync + 'static,
    {
        self.sampler = Some(Arc::new(sampler));
        self
    }

    pub fn with_breakpoints(mut self, breakpoints: Vec<Vec<T>>) -> Self {
        self.breakpoints = breakpoints;
        self
    }
}

impl<T> fmt::Debug for CustomDensity<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomDensity")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("has_sampler", &self.sampler.is_some())
            .finish()
    }
}

impl<T: Real> Density<T> for CustomDensity<T> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn density(&self, x: &[T]) -> T {
        (self.eval)(x)
    }
    fn support(&self) -> Option<BoxDomain<T>> {
        Some(self.support.clone())
    }
    fn breakpoints(&self, axis: usize) -> Vec<T> {
        self.breakpoints.get(axis).cloned().unwrap_or_default()
    }
    fn can_sample(&self) -> bool {
        self.sampler.is_some()
    }
    fn draw(&self, rng: &mut dyn RngCore, out: &mut [T]) -> Result<()> {
        match &self.sampler {
            Some(s) => {
                s(rng, out);
                Ok(())
            }
            None => Err(Error::Unsupported(format!(
                "custom density '{}' has no sampler",
                self.name
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParentalFamily {
    Gaussian,
    TruncatedExponential,
    Custom,
}

#[derive(Debug, Clone)]
enum ParentalParams<T> {
    Gaussian,
    TruncatedExponential { rates: Vec<T>, bounds: Vec<T> },
    Custom(CustomDensity<T>),
}

/// Base density `φ` whose shifts and scalings form the conditional visible
/// laws of a DBN.
#[derive(Debug, Clone)]
pub struct ParentalDensity<T> {
    dim: usize,
    params: ParentalParams<T>,
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    if dim > DEFAULT_MAX_DIM {
        return Err(Error::InvalidArgument(format!(
            "dimension {dim} exceeds the cap of {DEFAULT_MAX_DIM}"
        )));
    }
    Ok(())
}

impl<T: Real> ParentalDensity<T> {
    /// Standard Gaussian `(2π)^{-d/2} exp(-|x|²/2)`.
    pub fn gaussian(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            dim,
            params: ParentalParams::Gaussian,
        })
    }

    /// Product of exponentials with rates `λ_i` truncated to `[0, b_i]`.
    pub fn truncated_exponential(rates: Vec<T>, bounds: Vec<T>) -> Result<Self> {
        check_dim(rates.len())?;
        if rates.len() != bounds.len() {
            return Err(Error::Dimension("rates and bounds differ in length".into()));
        }
        if rates.iter().chain(&bounds).any(|&v| !(v > T::zero()) || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "rates and bounds must be positive and finite".into(),
            ));
        }
        Ok(Self {
            dim: rates.len(),
            params: ParentalParams::TruncatedExponential { rates, bounds },
        })
    }

    pub fn custom(density: CustomDensity<T>) -> Result<Self> {
        check_dim(density.dim)?;
        Ok(Self {
            dim: density.dim,
            params: ParentalParams::Custom(density),
        })
    }

    pub fn family(&self) -> ParentalFamily {
        match self.params {
            ParentalParams::Gaussian => ParentalFamily::Gaussian,
            ParentalParams::TruncatedExponential { .. } => ParentalFamily::TruncatedExponential,
            ParentalParams::Custom(_) => ParentalFamily::Custom,
        }
    }

    /// `(rates, bounds)` of a truncated exponential.
    pub fn truncated_exponential_params(&self) -> Option<(&[T], &[T])> {
        match &self.params {
            ParentalParams::TruncatedExponential { rates, bounds } => Some((rates, bounds)),
            _ => None,
        }
    }

    /// Closed-form `‖φ‖_{L^q}`; `q = ∞` gives the supremum.
    pub fn lq_norm_closed_form(&self, q: T) -> Result<T> {
        if !(q >= T::one()) {
            return Err(Error::InvalidArgument(format!("q = {q} is below 1")));
        }
        let d = T::from_usize_lossy(self.dim);
        let two_pi = T::lit(2.0) * T::PI();
        match &self.params {
            ParentalParams::Gaussian => {
                if q.is_infinite() {
                    Ok(two_pi.powf(-d / T::lit(2.0)))
                } else {
                    let e = d / (T::lit(2.0) * q);
                    Ok(two_pi.powf(e * (T::one() - q)) * q.powf(-e))
                }
            }
            ParentalParams::TruncatedExponential { rates, bounds } => {
                let mut acc = T::one();
                for (&l, &b) in rates.iter().zip(bounds) {
                    let mass = -(-(b * l)).exp_m1();
                    if q.is_infinite() {
                        acc *= l / mass;
                    } else {
                        let tail = -(-(q * l * b)).exp_m1();
                        acc *= l.powf(T::one() - q.recip()) * q.powf(-q.recip()) * tail.powf(q.recip()) / mass;
                    }
                }
                Ok(acc)
            }
            ParentalParams::Custom(c) => Err(Error::Unsupported(format!(
                "no closed-form norm for custom density '{}'; use a numerical norm",
                c.name
            ))),
        }
    }

    pub fn sup_norm(&self) -> Result<T> {
        self.lq_norm_closed_form(T::infinity())
    }

    /// `φ_{μ,σ}`.
    pub fn shifted(&self, shift: Vec<T>, scale: T) -> Result<ShiftedScaled<T>> {
        ShiftedScaled::new(self.clone(), shift, scale)
    }
}

impl<T: Real> Density<T> for ParentalDensity<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn density(&self, x: &[T]) -> T {
        match &self.params {
            ParentalParams::Gaussian => {
                let r2 = x.iter().fold(T::zero(), |acc, &v| acc + v * v);
                let d = T::from_usize_lossy(self.dim);
                (T::lit(2.0) * T::PI()).powf(-d / T::lit(2.0)) * (-r2 / T::lit(2.0)).exp()
            }
            ParentalParams::TruncatedExponential { rates, bounds } => {
                let mut acc = T::one();
                for ((&v, &l), &b) in x.iter().zip(rates).zip(bounds) {
                    if v < T::zero() || v > b {
                        return T::zero();
                    }
                    acc *= l * (-l * v).exp() / -(-(b * l)).exp_m1();
                }
                acc
            }
            ParentalParams::Custom(c) => c.density(x),
        }
    }

    fn support(&self) -> Option<BoxDomain<T>> {
        match &self.params {
            ParentalParams::Gaussian => {
                let r = T::lit(GAUSSIAN_SUPPORT_RADIUS);
                BoxDomain::cube(self.dim, -r, r).ok()
            }
            ParentalParams::TruncatedExponential { bounds, .. } => {
                BoxDomain::new(vec![T::zero(); self.dim], bounds.clone()).ok()
            }
            ParentalParams::Custom(c) => c.support(),
        }
    }

    fn breakpoints(&self, axis: usize) -> Vec<T> {
        match &self.params {
            ParentalParams::Gaussian => Vec::new(),
            ParentalParams::TruncatedExponential { bounds, .. } => vec![T::zero(), bounds[axis]],
            ParentalParams::Custom(c) => c.breakpoints(axis),
        }
    }

    fn can_sample(&self) -> bool {
        match &self.params {
            ParentalParams::Custom(c) => c.can_sample(),
            _ => true,
        }
    }

    fn draw(&self, rng: &mut dyn RngCore, out: &mut [T]) -> Result<()> {
        match &self.params {
            ParentalParams::Gaussian => {
                for v in out.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v = T::lit(z);
                }
                Ok(())
            }
            ParentalParams::TruncatedExponential { rates, bounds } => {
                for ((v, &l), &b) in out.iter_mut().zip(rates).zip(bounds) {
                    // inverse CDF: F(x) = (1 - e^{-λx}) / (1 - e^{-λb})
                    let u = T::lit(rng.random::<f64>());
                    let mass = -(-(b * l)).exp_m1();
                    let x = -(-(u * mass)).ln_1p() / l;
                    *v = x.max(T::zero()).min(b);
                }
                Ok(())
            }
            ParentalParams::Custom(c) => c.draw(rng, out),
        }
    }
}

/// `φ_{μ,σ}(x) = σ^{-d} φ((x - μ)/σ)`.
#[derive(Debug, Clone)]
pub struct ShiftedScaled<T> {
    parent: ParentalDensity<T>,
    shift: Vec<T>,
    scale: T,
    norm: T,
}

impl<T: Real> ShiftedScaled<T> {
    pub fn new(parent: ParentalDensity<T>, shift: Vec<T>, scale: T) -> Result<Self> {
        if shift.len() != parent.dim() {
            return Err(Error::Dimension(format!(
                "shift has {} coordinates, parent has dimension {}",
                shift.len(),
                parent.dim()
            )));
        }
        if !(scale > T::zero()) || !scale.is_finite() {
            return Err(Error::InvalidArgument(format!("scale {scale} must be positive")));
        }
        if shift.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite shift".into()));
        }
        let norm = scale.powi(parent.dim() as i32).recip();
        Ok(Self {
            parent,
            shift,
            scale,
            norm,
        })
    }

    pub fn parent(&self) -> &ParentalDensity<T> {
        &self.parent
    }

    pub fn shift(&self) -> &[T] {
        &self.shift
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    /// `‖φ_{μ,σ}‖_{L^q} = σ^{-d(1-1/q)} ‖φ‖_{L^q}`.
    pub fn lq_norm(&self, q: T) -> Result<T> {
        Ok(scaled_norm_factor(self.scale, self.parent.dim(), q) * self.parent.lq_norm_closed_form(q)?)
    }

    /// Evaluates with a caller-provided scratch buffer.
    pub fn density_with(&self, x: &[T], scratch: &mut [T]) -> T {
        for ((s, &v), &m) in scratch.iter_mut().zip(x).zip(&self.shift) {
            *s = (v - m) / self.scale;
        }
        self.norm * self.parent.density(scratch)
    }
}

/// Factor `σ^{-d(1-1/q)}` relating `‖φ_{μ,σ}‖_q` to `‖φ‖_q`.
pub fn scaled_norm_factor<T: Real>(sigma: T, dim: usize, q: T) -> T {
    let d = T::from_usize_lossy(dim);
    let exponent = if q.is_infinite() {
        -d
    } else {
        -d * (T::one() - q.recip())
    };
    sigma.powf(exponent)
}

impl<T: Real> Density<T> for ShiftedScaled<T> {
    fn dim(&self) -> usize {
        self.parent.dim()
    }

    fn density(&self, x: &[T]) -> T {
        let mut buf = [T::zero(); DEFAULT_MAX_DIM];
        if x.len() <= DEFAULT_MAX_DIM {
            self.density_with(x, &mut buf[..x.len()])
        } else {
            let mut v = vec![T::zero(); x.len()];
            self.density_with(x, &mut v)
        }
    }

    fn support(&self) -> Option<BoxDomain<T>> {
        self.parent.support().map(|b| b.affine(&self.shift, self.scale))
    }

    fn breakpoints(&self, axis: usize) -> Vec<T> {
        self.parent
            .breakpoints(axis)
            .into_iter()
            .map(|b| self.shift[axis] + self.scale * b)
            .collect()
    }

    fn can_sample(&self) -> bool {
        self.parent.can_sample()
    }

    fn draw(&self, rng: &mut dyn RngCore, out: &mut [T]) -> Result<()> {
        self.parent.draw(rng, out)?;
        for (v, &m) in out.iter_mut().zip(&self.shift) {
            *v = m + self.scale * *v;
        }
        Ok(())
    }
}

/// Isotropic Gaussian mixture `Σ w_k N(μ_k, s_k² I)`.
#[derive(Debug, Clone)]
pub struct GaussianMixture<T> {
    pub weights: Vec<T>,
    pub means: Vec<Vec<T>>,
    pub std_devs: Vec<T>,
}

/// Piecewise-constant density on `[edges[0], edges[k]]`.
#[derive(Debug, Clone)]
pub struct PiecewiseConstant<T> {
    pub edges: Vec<T>,
    pub heights: Vec<T>,
}

impl<T: Real> PiecewiseConstant<T> {
    pub fn new(edges: Vec<T>, heights: Vec<T>) -> Result<Self> {
        if edges.len() != heights.len() + 1 || heights.is_empty() {
            return Err(Error::Dimension("need one more edge than heights".into()));
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("edges must be strictly increasing".into()));
        }
        if heights.iter().any(|&h| !(h >= T::zero()) || !h.is_finite()) {
            return Err(Error::InvalidArgument("heights must be nonnegative".into()));
        }
        let mass: T = edges
            .windows(2)
            .zip(&heights)
            .fold(T::zero(), |acc, (w, &h)| acc + h * (w[1] - w[0]));
        if (mass - T::one()).abs() > T::lit(1e-9) {
            return Err(Error::InvalidArgument(format!(
                "piecewise constant mass is {mass}, not 1"
            )));
        }
        Ok(Self { edges, heights })
    }

    /// Random density on `[0, 1]` with `cells` equal cells and values at
    /// least `floor`.
    pub fn random_with_floor(rng: &mut dyn RngCore, cells: usize, floor: T) -> Result<Self> {
        if !(floor >= T::zero()) || floor >= T::one() || cells == 0 {
            return Err(Error::InvalidArgument(
                "floor must lie in [0, 1) and cells be positive".into(),
            ));
        }
        let raw: Vec<T> = (0..cells).map(|_| T::lit(rng.random::<f64>() + 1e-3)).collect();
        let total: T = raw.iter().copied().sum();
        let n = T::from_usize_lossy(cells);
        // floor + (1 - floor) * (share of the remaining mass) / cell width
        let heights: Vec<T> = raw
            .iter()
            .map(|&r| floor + (T::one() - floor) * r / total * n)
            .collect();
        let edges: Vec<T> = (0..=cells).map(|i| T::from_usize_lossy(i) / n).collect();
        Self::new(edges, heights)
    }
}

/// The counterexample family `f_m(x) = C_m min(1, m x + 1/2)` on `[0, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct Counterexample {
    pub m: u64,
}

/// Normalising constant `C_m = 8m / (8m - 1)`, exact.
pub fn counterexample_constant(m: u64) -> Ratio<u64> {
    Ratio::new(8 * m, 8 * m - 1)
}

impl Counterexample {
    pub fn constant<T: Real>(&self) -> T {
        let c = counterexample_constant(self.m);
        T::from_u64(*c.numer()).expect("numerator") / T::from_u64(*c.denom()).expect("denominator")
    }

    /// End of the linear ramp, `1/(2m)`.
    pub fn kink<T: Real>(&self) -> T {
        T::one() / (T::lit(2.0) * T::from_u64(self.m).expect("m"))
    }
}

#[derive(Debug, Clone)]
pub enum TargetKind<T> {
    GaussianMixture(GaussianMixture<T>),
    /// Uniform on the box.
    Uniform(BoxDomain<T>),
    Parental(ParentalDensity<T>),
    PiecewiseConstant(PiecewiseConstant<T>),
    Counterexample(Counterexample),
    Custom(Arc<dyn Density<T>>),
}

impl<T> fmt::Debug for dyn Density<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("dyn Density")
    }
}

/// Density to be approximated.
#[derive(Debug, Clone)]
pub struct TargetDensity<T> {
    kind: TargetKind<T>,
    dim: usize,
    support_hint: Option<BoxDomain<T>>,
    lower_bound_eta: Option<T>,
}

impl<T: Real> TargetDensity<T> {
    fn from_kind(kind: TargetKind<T>, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let mut t = Self {
            kind,
            dim,
            support_hint: None,
            lower_bound_eta: None,
        };
        t.support_hint = t.natural_support();
        Ok(t)
    }

    pub fn standard_normal(dim: usize) -> Result<Self> {
        Self::gaussian_mixture(vec![T::one()], vec![vec![T::zero(); dim]], vec![T::one()])
    }

    pub fn gaussian_mixture(weights: Vec<T>, means: Vec<Vec<T>>, std_devs: Vec<T>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != std_devs.len() {
            return Err(Error::Dimension("mixture parameter lengths differ".into()));
        }
        let dim = means[0].len();
        if means.iter().any(|m| m.len() != dim) {
            return Err(Error::Dimension("mixture means differ in dimension".into()));
        }
        if weights.iter().any(|&w| !(w >= T::zero())) || std_devs.iter().any(|&s| !(s > T::zero())) {
            return Err(Error::InvalidArgument(
                "weights must be nonnegative, deviations positive".into(),
            ));
        }
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs() > T::lit(1e-9) {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {total}")));
        }
        Self::from_kind(
            TargetKind::GaussianMixture(GaussianMixture {
                weights,
                means,
                std_devs,
            }),
            dim,
        )
    }

    pub fn uniform(domain: BoxDomain<T>) -> Result<Self> {
        let dim = domain.dim();
        Self::from_kind(TargetKind::Uniform(domain), dim)
    }

    pub fn parental(parent: ParentalDensity<T>) -> Result<Self> {
        let dim = parent.dim();
        Self::from_kind(TargetKind::Parental(parent), dim)
    }

    pub fn piecewise_constant(p: PiecewiseConstant<T>) -> Result<Self> {
        Self::from_kind(TargetKind::PiecewiseConstant(p), 1)
    }

    pub fn counterexample(m: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("counterexample index must be positive".into()));
        }
        Self::from_kind(TargetKind::Counterexample(Counterexample { m }), 1)
    }

    pub fn custom(density: Arc<dyn Density<T>>) -> Result<Self> {
        let dim = density.dim();
        Self::from_kind(TargetKind::Custom(density), dim)
    }

    pub fn kind(&self) -> &TargetKind<T> {
        &self.kind
    }

    pub fn support_hint(&self) -> Option<&BoxDomain<T>> {
        self.support_hint.as_ref()
    }

    pub fn with_support_hint(mut self, hint: BoxDomain<T>) -> Result<Self> {
        if hint.dim() != self.dim {
            return Err(Error::Dimension("support hint dimension".into()));
        }
        self.support_hint = Some(hint);
        Ok(self)
    }

    pub fn lower_bound_eta(&self) -> Option<T> {
        self.lower_bound_eta
    }

    /// Declares `f ≥ η` on the support hint after checking it on a dense
    /// midpoint grid.
    pub fn with_lower_bound(mut self, eta: T) -> Result<Self> {
        let hint = self
            .support_hint
            .clone()
            .ok_or_else(|| Error::InvalidArgument("lower bound needs a support hint".into()))?;
        if eta > T::zero() {
            let per_axis = match self.dim {
                1 => 4001,
                2 => 201,
                _ => 41,
            };
            let spec = crate::quadrature::QuadratureSpec::new(hint, crate::quadrature::Rule::Midpoint, per_axis)?;
            let grid = spec.grid(&[])?;
            if let Some(x) = grid.find_node(|x| self.density(x) >= eta) {
                return Err(Error::Precondition {
                    location: format!("{x:?}"),
                    detail: format!("target value {} below declared floor {eta}", self.density(&x)),
                });
            }
        }
        self.lower_bound_eta = Some(eta);
        Ok(self)
    }

    fn natural_support(&self) -> Option<BoxDomain<T>> {
        match &self.kind {
            TargetKind::GaussianMixture(g) => {
                let r = T::lit(GAUSSIAN_SUPPORT_RADIUS);
                let mut lo = vec![T::infinity(); self.dim];
                let mut hi = vec![T::neg_infinity(); self.dim];
                for (m, &s) in g.means.iter().zip(&g.std_devs) {
                    for k in 0..self.dim {
                        lo[k] = lo[k].min(m[k] - r * s);
                        hi[k] = hi[k].max(m[k] + r * s);
                    }
                }
                BoxDomain::new(lo, hi).ok()
            }
            TargetKind::Uniform(b) => Some(b.clone()),
            TargetKind::Parental(p) => p.support(),
            TargetKind::PiecewiseConstant(p) => BoxDomain::interval(p.edges[0], *p.edges.last().expect("edges")).ok(),
            TargetKind::Counterexample(_) => BoxDomain::interval(T::zero(), T::one()).ok(),
            TargetKind::Custom(c) => c.support(),
        }
    }

    /// Gaussian-mixture parameters when the target is one.
    pub fn as_gaussian_mixture(&self) -> Option<&GaussianMixture<T>> {
        match &self.kind {
            TargetKind::GaussianMixture(g) => Some(g),
            _ => None,
        }
    }
}

impl<T: Real> Density<T> for TargetDensity<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn density(&self, x: &[T]) -> T {
        match &self.kind {
            TargetKind::GaussianMixture(g) => {
                let d = T::from_usize_lossy(self.dim);
                let two_pi = T::lit(2.0) * T::PI();
                let mut acc = T::zero();
                for ((&w, m), &s) in g.weights.iter().zip(&g.means).zip(&g.std_devs) {
                    let r2 = x.iter().zip(m).fold(T::zero(), |a, (&v, &c)| a + (v - c) * (v - c));
                    acc += w * (two_pi * s * s).powf(-d / T::lit(2.0)) * (-r2 / (T::lit(2.0) * s * s)).exp();
                }
                acc
            }
            TargetKind::Uniform(b) => {
                if b.contains(x) {
                    b.volume().recip()
                } else {
                    T::zero()
                }
            }
            TargetKind::Parental(p) => p.density(x),
            TargetKind::PiecewiseConstant(p) => {
                let v = x[0];
                let last = *p.edges.last().expect("edges");
                if v < p.edges[0] || v > last {
                    return T::zero();
                }
                let idx = p.edges.partition_point(|&e| e <= v).saturating_sub(1);
                p.heights[idx.min(p.heights.len() - 1)]
            }
            TargetKind::Counterexample(c) => {
                let v = x[0];
                if v < T::zero() || v > T::one() {
                    return T::zero();
                }
                let m = T::from_u64(c.m).expect("m");
                c.constant::<T>() * T::one().min(m * v + T::lit(0.5))
            }
            TargetKind::Custom(c) => c.density(x),
        }
    }

    fn support(&self) -> Option<BoxDomain<T>> {
        self.support_hint.clone()
    }

    fn breakpoints(&self, axis: usize) -> Vec<T> {
        match &self.kind {
            TargetKind::GaussianMixture(_) => Vec::new(),
            TargetKind::Uniform(b) => vec![b.lo()[axis], b.hi()[axis]],
            TargetKind::Parental(p) => p.breakpoints(axis),
            TargetKind::PiecewiseConstant(p) => p.edges.clone(),
            TargetKind::Counterexample(c) => vec![T::zero(), c.kink(), T::one()],
            TargetKind::Custom(c) => c.breakpoints(axis),
        }
    }

    fn can_sample(&self) -> bool {
        match &self.kind {
            TargetKind::Parental(p) => p.can_sample(),
            TargetKind::Custom(c) => c.can_sample(),
            _ => true,
        }
    }

    fn draw(&self, rng: &mut dyn RngCore, out: &mut [T]) -> Result<()> {
        match &self.kind {
            TargetKind::GaussianMixture(g) => {
                let k = pick_index(rng, &g.weights);
                for (v, &m) in out.iter_mut().zip(&g.means[k]) {
                    let z: f64 = StandardNormal.sample(rng);
                    *v = m + g.std_devs[k] * T::lit(z);
                }
                Ok(())
            }
            TargetKind::Uniform(b) => {
                for (k, v) in out.iter_mut().enumerate() {
                    *v = b.lo()[k] + b.width(k) * T::lit(rng.random::<f64>());
                }
                Ok(())
            }
            TargetKind::Parental(p) => p.draw(rng, out),
            TargetKind::PiecewiseConstant(p) => {
                let masses: Vec<T> = p
                    .edges
                    .windows(2)
                    .zip(&p.heights)
                    .map(|(w, &h)| h * (w[1] - w[0]))
                    .collect();
                let k = pick_index(rng, &masses);
                let u = T::lit(rng.random::<f64>());
                out[0] = p.edges[k] + u * (p.edges[k + 1] - p.edges[k]);
                Ok(())
            }
            TargetKind::Counterexample(c) => {
                let cm = c.constant::<T>();
                let m = T::from_u64(c.m).expect("m");
                let kink = c.kink::<T>();
                let u = T::lit(rng.random::<f64>());
                let ramp_mass = cm * T::lit(3.0) / (T::lit(8.0) * m);
                out[0] = if u < ramp_mass {
                    // solve C (m x²/2 + x/2) = u
                    let s = (T::lit(0.25) + T::lit(2.0) * m * u / cm).sqrt();
                    (s - T::lit(0.5)) / m
                } else {
                    kink + (u - ramp_mass) / cm
                }
                .max(T::zero())
                .min(T::one());
                Ok(())
            }
            TargetKind::Custom(c) => c.draw(rng, out),
        }
    }
}

/// Index drawn with probability proportional to `weights`.
pub fn pick_index<T: Real>(rng: &mut dyn RngCore, weights: &[T]) -> usize {
    let total: T = weights.iter().copied().sum();
    let u = T::lit(rng.random::<f64>()) * total;
    let mut acc = T::zero();
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights
        .iter()
        .rposition(|&w| w > T::zero())
        .unwrap_or(weights.len() - 1)
}

/// `Υ_q = max(1, E|X|^q)^{1/q}` for standard normal `X`, from the defining
/// integral.
pub fn upsilon<T: Real>(q: T) -> Result<T> {
    if !(q >= T::one()) || !q.is_finite() {
        return Err(Error::InvalidArgument(format!("q = {q} must lie in [1, ∞)")));
    }
    let moment = absolute_normal_moment(q);
    Ok(T::one().max(moment).powf(q.recip()))
}

/// `E|X|^q` for standard normal `X` by adaptive quadrature.
pub fn absolute_normal_moment<T: Real>(q: T) -> T {
    let c = T::lit(2.0) / (T::lit(2.0) * T::PI()).sqrt();
    let half = T::lit(0.5);
    // integrand vanishes to double precision well before 40
    let upper = T::lit(40.0).max(T::lit(4.0) * q.sqrt() * T::lit(3.0));
    let tol = T::lit(if std::mem::size_of::<T>() == 4 { 1e-6 } else { 1e-14 });
    let pieces = [T::zero(), T::one(), T::lit(4.0), T::lit(10.0), upper];
    let mut total = T::zero();
    for w in pieces.windows(2) {
        total += adaptive_integrate(|x: T| c * x.powf(q) * (-half * x * x).exp(), w[0], w[1], tol);
    }
    total
}

/// The alternative closed form `√2 π^{-1/(2q)} Γ((q+1)/2)` for `q > 2`,
/// kept for reporting its disagreement with [`upsilon`].
pub fn upsilon_gamma_form(q: f64) -> f64 {
    if q <= 2.0 {
        return 1.0;
    }
    2f64.sqrt() * std::f64::consts::PI.powf(-1.0 / (2.0 * q)) * statrs::function::gamma::gamma((q + 1.0) / 2.0)
}
