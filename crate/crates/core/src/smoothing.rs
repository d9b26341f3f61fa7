//! Convolution `f ⋆ φ_σ` of a target with the scaled parental density and
//! the choice of σ for a prescribed smoothing error.

use rand::RngCore;

use crate::densities::{Density, ParentalDensity, ParentalFamily, TargetDensity};
use crate::error::{Error, Result};
use crate::metrics::{self, DistanceReport};
use crate::quadrature::{AxisRule, BoxDomain, QuadratureSpec, Rule, TensorGrid};
use crate::scalar::{pairwise_sum, Real};

/// Default Monte-Carlo sample count for the convolution integral.
pub const DEFAULT_MC_SAMPLES: usize = 100_000;

/// Inner quadrature panels per unit of σ.
const PANELS_PER_SIGMA: f64 = 2.0;
const MAX_INNER_PANELS: usize = 96;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvaluatorMode {
    ClosedFormGaussian,
    Quadrature,
    MonteCarlo,
}

/// `(f ⋆ φ_σ)(x) = ∫ f(μ) φ_{μ,σ}(x) dμ`.
#[derive(Debug, Clone)]
pub struct SmoothedDensity<T> {
    target: TargetDensity<T>,
    parent: ParentalDensity<T>,
    sigma: T,
    mode: EvaluatorMode,
    mc_samples: usize,
    cache: Vec<Vec<T>>,
}

/// Smoothed density with an automatically chosen evaluator: closed form for
/// Gaussian targets and parent, quadrature when the target has a bounding
/// box, Monte Carlo otherwise.
pub fn convolve<T: Real>(
    target: &TargetDensity<T>,
    parent: &ParentalDensity<T>,
    sigma: T,
) -> Result<SmoothedDensity<T>> {
    let mode = if target.as_gaussian_mixture().is_some() && parent.family() == ParentalFamily::Gaussian {
        EvaluatorMode::ClosedFormGaussian
    } else if target.support_hint().is_some() && parent.support().is_some() {
        EvaluatorMode::Quadrature
    } else if target.can_sample() {
        EvaluatorMode::MonteCarlo
    } else {
        return Err(Error::Unsupported(
            "target has neither a bounding box nor a sampler".into(),
        ));
    };
    SmoothedDensity::with_mode(target, parent, sigma, mode, DEFAULT_MC_SAMPLES, 0)
}

impl<T: Real> SmoothedDensity<T> {
    /// Explicit evaluator choice; `seed` keys the Monte-Carlo sample cache.
    pub fn with_mode(
        target: &TargetDensity<T>,
        parent: &ParentalDensity<T>,
        sigma: T,
        mode: EvaluatorMode,
        mc_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        if !(sigma > T::zero()) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("σ = {sigma} must be positive")));
        }
        if target.dim() != parent.dim() {
            return Err(Error::Dimension("target and parent differ in dimension".into()));
        }
        let cache = match mode {
            EvaluatorMode::ClosedFormGaussian => {
                if target.as_gaussian_mixture().is_none() || parent.family() != ParentalFamily::Gaussian {
                    return Err(Error::Unsupported(
                        "closed form needs Gaussian target and parent".into(),
                    ));
                }
                Vec::new()
            }
            EvaluatorMode::Quadrature => {
                if target.support_hint().is_none() || parent.support().is_none() {
                    return Err(Error::Unsupported("quadrature mode needs bounded supports".into()));
                }
                Vec::new()
            }
            EvaluatorMode::MonteCarlo => {
                if mc_samples < 2 {
                    return Err(Error::InvalidArgument("need at least two Monte-Carlo samples".into()));
                }
                target.sample(seed, mc_samples)?
            }
        };
        Ok(Self {
            target: target.clone(),
            parent: parent.clone(),
            sigma,
            mode,
            mc_samples,
            cache,
        })
    }

    pub fn target(&self) -> &TargetDensity<T> {
        &self.target
    }

    pub fn parent(&self) -> &ParentalDensity<T> {
        &self.parent
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn mode(&self) -> EvaluatorMode {
        self.mode
    }

    pub fn mc_samples(&self) -> usize {
        self.mc_samples
    }

    /// Value and the evaluator's own error estimate (the standard error in
    /// Monte-Carlo mode, zero otherwise).
    pub fn eval_with_error(&self, x: &[T]) -> (T, T) {
        match self.mode {
            EvaluatorMode::MonteCarlo => {
                let vals: Vec<T> = self.cache.iter().map(|mu| self.kernel(x, mu)).collect();
                let n = T::from_usize_lossy(vals.len());
                let mean = pairwise_sum(&vals) / n;
                let dev: Vec<T> = vals.iter().map(|&v| (v - mean) * (v - mean)).collect();
                (mean, (pairwise_sum(&dev) / (n - T::one()) / n).sqrt())
            }
            _ => (self.density(x), T::zero()),
        }
    }

    fn kernel(&self, x: &[T], mu: &[T]) -> T {
        let d = self.parent.dim();
        let mut z = [T::zero(); crate::densities::DEFAULT_MAX_DIM];
        for k in 0..d {
            z[k] = (x[k] - mu[k]) / self.sigma;
        }
        self.parent.density(&z[..d]) / self.sigma.powi(d as i32)
    }

    fn closed_form(&self, x: &[T]) -> T {
        let g = self.target.as_gaussian_mixture().expect("checked at construction");
        let d = T::from_usize_lossy(x.len());
        let two_pi = T::lit(2.0) * T::PI();
        let s2 = self.sigma * self.sigma;
        let mut acc = T::zero();
        for ((&w, m), &s) in g.weights.iter().zip(&g.means).zip(&g.std_devs) {
            let v = s * s + s2;
            let r2 = x.iter().zip(m).fold(T::zero(), |a, (&p, &c)| a + (p - c) * (p - c));
            acc += w * (two_pi * v).powf(-d / T::lit(2.0)) * (-r2 / (T::lit(2.0) * v)).exp();
        }
        acc
    }

    /// Inner tensor rule over `supp f ∩ (x − σ supp φ)`.
    fn inner_grid(&self, x: &[T]) -> Option<TensorGrid<T>> {
        let tsup = self.target.support_hint()?;
        let psup = self.parent.support()?;
        let d = x.len();
        let reach = BoxDomain::new(
            (0..d).map(|k| x[k] - self.sigma * psup.hi()[k]).collect(),
            (0..d).map(|k| x[k] - self.sigma * psup.lo()[k]).collect(),
        )
        .ok()?;
        let inner = tsup.intersect(&reach)?;
        let axes = (0..d)
            .map(|k| {
                let w = inner.width(k);
                let cells = (w / (self.sigma / T::lit(PANELS_PER_SIGMA)))
                    .ceil()
                    .to_usize()
                    .unwrap_or(MAX_INNER_PANELS)
                    .clamp(2, MAX_INNER_PANELS);
                let mut bps = self.target.breakpoints(k);
                bps.extend(self.parent.breakpoints(k).into_iter().map(|b| x[k] - self.sigma * b));
                AxisRule::build(inner.lo()[k], inner.hi()[k], cells, Rule::GaussLegendreComposite, &bps)
            })
            .collect();
        Some(TensorGrid::from_axes(axes))
    }

    fn by_quadrature(&self, x: &[T]) -> T {
        let Some(grid) = self.inner_grid(x) else {
            return T::zero();
        };
        let d = x.len();
        let mut mu = vec![T::zero(); d];
        let vals: Vec<T> = (0..grid.len())
            .map(|i| {
                let w = grid.node(i, &mut mu);
                w * self.target.density(&mu) * self.kernel(x, &mu)
            })
            .collect();
        pairwise_sum(&vals).max(T::zero())
    }
}

impl<T: Real> Density<T> for SmoothedDensity<T> {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn density(&self, x: &[T]) -> T {
        match self.mode {
            EvaluatorMode::ClosedFormGaussian => self.closed_form(x),
            EvaluatorMode::Quadrature => self.by_quadrature(x),
            EvaluatorMode::MonteCarlo => self.eval_with_error(x).0,
        }
    }

    /// Minkowski sum of the target box and `σ supp φ`.
    fn support(&self) -> Option<BoxDomain<T>> {
        let t = self.target.support_hint()?;
        let p = self.parent.support()?;
        BoxDomain::new(
            t.lo().iter().zip(p.lo()).map(|(&a, &b)| a + self.sigma * b).collect(),
            t.hi().iter().zip(p.hi()).map(|(&a, &b)| a + self.sigma * b).collect(),
        )
        .ok()
    }

    fn breakpoints(&self, axis: usize) -> Vec<T> {
        let tb = self.target.breakpoints(axis);
        let pb = self.parent.breakpoints(axis);
        let mut out = Vec::with_capacity(tb.len() * pb.len());
        for &a in &tb {
            for &b in &pb {
                out.push(a + self.sigma * b);
            }
        }
        out
    }

    fn can_sample(&self) -> bool {
        self.target.can_sample() && self.parent.can_sample()
    }

    /// `X + σ Z` with `X ~ f`, `Z ~ φ`.
    fn draw(&self, rng: &mut dyn RngCore, out: &mut [T]) -> Result<()> {
        self.target.draw(rng, out)?;
        let mut z = vec![T::zero(); out.len()];
        self.parent.draw(rng, &mut z)?;
        for (v, &e) in out.iter_mut().zip(&z) {
            *v += self.sigma * e;
        }
        Ok(())
    }
}

/// Geometric σ grid `σ₀ 2^{-k}`, `k = 0..=k_max`.
#[derive(Debug, Clone, Copy)]
pub struct SigmaGrid<T> {
    pub sigma0: T,
    pub ratio: T,
    pub k_max: usize,
}

impl<T: Real> Default for SigmaGrid<T> {
    fn default() -> Self {
        Self {
            sigma0: T::one(),
            ratio: T::lit(0.5),
            k_max: 20,
        }
    }
}

impl<T: Real> SigmaGrid<T> {
    pub fn value(&self, k: usize) -> T {
        self.sigma0 * self.ratio.powi(k as i32)
    }
}

#[derive(Debug, Clone)]
pub struct SigmaChoice<T> {
    pub sigma: T,
    pub k: usize,
    pub error: DistanceReport<T>,
}

/// Box and resolution for measuring `‖f − f⋆φ_σ‖`: the spec's box widened
/// to the smoothed support, with at least two cells per σ along each axis.
pub fn smoothing_spec<T: Real>(spec: &QuadratureSpec<T>, smoothed: &SmoothedDensity<T>) -> Result<QuadratureSpec<T>> {
    let domain = match smoothed.support() {
        Some(s) => spec.effective_domain().union(&s),
        None => spec.effective_domain(),
    };
    let widest = (0..domain.dim()).map(|k| domain.width(k)).fold(T::zero(), T::max);
    let need = (widest / smoothed.sigma() * T::lit(2.0))
        .ceil()
        .to_usize()
        .unwrap_or(usize::MAX);
    let out = spec.with_domain(domain).with_points(spec.points_per_axis.max(need));
    out.grid(&[]).map(|_| out.clone())
}

/// `‖f − f ⋆ φ_σ‖_{L^q}`; `q = ∞` selects the sup norm.
pub fn smoothing_error<T: Real>(
    smoothed: &SmoothedDensity<T>,
    q: T,
    spec: &QuadratureSpec<T>,
) -> Result<DistanceReport<T>> {
    let s = smoothing_spec(spec, smoothed)?;
    let f = smoothed.target();
    if q.is_infinite() {
        metrics::sup_distance(f, smoothed, &s)
    } else {
        metrics::lq_distance(f, smoothed, q, &s)
    }
}

/// Largest σ on the grid with `‖f − f⋆φ_σ‖_{L^q} ≤ ε'`.
pub fn select_sigma<T: Real>(
    target: &TargetDensity<T>,
    parent: &ParentalDensity<T>,
    q: T,
    tolerance: T,
    spec: &QuadratureSpec<T>,
    grid: SigmaGrid<T>,
) -> Result<SigmaChoice<T>> {
    if !(tolerance > T::zero()) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let mut best = T::infinity();
    for k in 0..=grid.k_max {
        let sigma = grid.value(k);
        let smoothed = convolve(target, parent, sigma)?;
        let error = match smoothing_error(&smoothed, q, spec) {
            Ok(e) => e,
            Err(Error::NodeBudget { .. }) => break,
            Err(e) => return Err(e),
        };
        best = best.min(error.value);
        if error.value <= tolerance {
            return Ok(SigmaChoice { sigma, k, error });
        }
    }
    Err(Error::Convergence {
        stage: "select_sigma".into(),
        detail: format!("no σ on the grid reaches {tolerance}"),
        best: best.as_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::function::erf::erf;

    fn line(lo: f64, hi: f64, n: usize) -> QuadratureSpec<f64> {
        QuadratureSpec::new(BoxDomain::interval(lo, hi).unwrap(), Rule::GaussLegendreComposite, n).unwrap()
    }

    fn phi_cdf(x: f64) -> f64 {
        0.5 * (1.0 + erf(x / 2f64.sqrt()))
    }

    #[test]
    fn gaussian_convolution_identity() {
        let f = TargetDensity::<f64>::standard_normal(1).unwrap();
        let g = ParentalDensity::gaussian(1).unwrap();
        let s = convolve(&f, &g, 1.0).unwrap();
        assert_eq!(s.mode(), EvaluatorMode::ClosedFormGaussian);
        assert_relative_eq!(
            s.density(&[0.0]),
            1.0 / (2.0 * std::f64::consts::PI.sqrt()),
            epsilon = 1e-15
        );
        // the quadrature evaluator agrees with the closed form
        let q = SmoothedDensity::with_mode(&f, &g, 1.0, EvaluatorMode::Quadrature, 0, 0).unwrap();
        for x in [-2.0, 0.0, 0.7] {
            assert_relative_eq!(q.density(&[x]), s.density(&[x]), epsilon = 1e-10);
        }
    }

    #[test]
    fn uniform_gaussian_convolution_matches_erf() {
        let f = TargetDensity::uniform(BoxDomain::interval(0.0, 1.0).unwrap()).unwrap();
        let g = ParentalDensity::gaussian(1).unwrap();
        let s = convolve(&f, &g, 0.1).unwrap();
        assert_eq!(s.mode(), EvaluatorMode::Quadrature);
        for x in [0.5, 0.05, 1.02] {
            let oracle = phi_cdf(x / 0.1) - phi_cdf((x - 1.0) / 0.1);
            assert!((s.density(&[x]) - oracle).abs() < 1e-4);
        }
    }

    #[test]
    fn smoothed_density_integrates_to_one() {
        let g = ParentalDensity::gaussian(1).unwrap();
        let t = ParentalDensity::truncated_exponential(vec![1.0], vec![1.0]).unwrap();
        let f = TargetDensity::uniform(BoxDomain::interval(0.0, 1.0).unwrap()).unwrap();
        for parent in [g, t] {
            for sigma in [1.0, 0.25] {
                let s = convolve(&f, &parent, sigma).unwrap();
                let spec = line(-1.0, 1.0, 64).with_domain(s.support().unwrap());
                let mass = metrics::lq_norm(&s, 1.0, &spec).unwrap();
                assert!((mass.value - 1.0).abs() < 1e-6, "{sigma}: {}", mass.value);
            }
        }
    }

    #[test]
    fn monte_carlo_mode_reports_standard_error() {
        let f = TargetDensity::uniform(BoxDomain::interval(0.0, 1.0).unwrap()).unwrap();
        let g = ParentalDensity::gaussian(1).unwrap();
        let s = SmoothedDensity::with_mode(&f, &g, 0.2, EvaluatorMode::MonteCarlo, 20_000, 3).unwrap();
        let (v, se) = s.eval_with_error(&[0.5]);
        let oracle = phi_cdf(2.5) - phi_cdf(-2.5);
        assert!(se > 0.0);
        assert!((v - oracle).abs() < 5.0 * se);
    }

    #[test]
    fn select_sigma_gaussian_l2() {
        let f = TargetDensity::<f64>::standard_normal(1).unwrap();
        let g = ParentalDensity::gaussian(1).unwrap();
        let spec = line(-12.0, 12.0, 200);
        let c = select_sigma(&f, &g, 2.0, 0.05, &spec, SigmaGrid::default()).unwrap();
        // ‖N(0,1) − N(0,v)‖₂² = 1/(2√π) + 1/(2√(πv)) − 2/√(2π(1+v))
        let pi = std::f64::consts::PI;
        let closed = |s: f64| {
            let v = 1.0 + s * s;
            (1.0 / (2.0 * pi.sqrt()) + 1.0 / (2.0 * (pi * v).sqrt()) - 2.0 / (2.0 * pi * (1.0 + v)).sqrt()).sqrt()
        };
        assert!(closed(c.sigma) <= 0.05);
        assert!(closed(2.0 * c.sigma) > 0.05);
        assert_relative_eq!(c.error.value, closed(c.sigma), epsilon = 1e-9);
    }

    #[test]
    fn select_sigma_exits_early() {
        let f = TargetDensity::<f64>::standard_normal(1).unwrap();
        let g = ParentalDensity::gaussian(1).unwrap();
        let c = select_sigma(&f, &g, 2.0, 1.0, &line(-12.0, 12.0, 100), SigmaGrid::default()).unwrap();
        assert_eq!((c.sigma, c.k), (1.0, 0));
    }

    #[test]
    fn select_sigma_uniform_l1() {
        let f = TargetDensity::uniform(BoxDomain::interval(0.0, 1.0).unwrap()).unwrap();
        let g = ParentalDensity::gaussian(1).unwrap();
        let c = select_sigma(&f, &g, 1.0, 0.1, &line(-1.0, 2.0, 64), SigmaGrid::default()).unwrap();
        assert!(c.sigma > 0.0 && c.error.value <= 0.1);
        let s = convolve(&f, &g, c.sigma).unwrap();
        let check = smoothing_error(&s, 1.0, &line(-1.0, 2.0, 64).with_points(400)).unwrap();
        assert!(check.value <= 0.1);
    }

    #[test]
    fn smoothing_error_decreases_along_grid() {
        let f = TargetDensity::uniform(BoxDomain::interval(0.0, 1.0).unwrap()).unwrap();
        let g = ParentalDensity::gaussian(1).unwrap();
        let spec = line(-1.0, 2.0, 64);
        let mut prev = f64::INFINITY;
        for k in 0..6 {
            let s = convolve(&f, &g, 0.5f64.powi(k)).unwrap();
            let e = smoothing_error(&s, 2.0, &spec).unwrap().value;
            assert!(e <= prev);
            prev = e;
        }
    }

    #[test]
    fn sup_smoothing_error_vanishes_for_continuous_target() {
        let f = TargetDensity::<f64>::standard_normal(1).unwrap();
        let g = ParentalDensity::gaussian(1).unwrap();
        let c = select_sigma(
            &f,
            &g,
            f64::INFINITY,
            0.01,
            &line(-12.0, 12.0, 200),
            SigmaGrid::default(),
        )
        .unwrap();
        assert!(c.error.value <= 0.01);
    }

    #[test]
    fn smoothed_sampler_has_convolved_variance() {
        let f = TargetDensity::<f64>::standard_normal(1).unwrap();
        let g = ParentalDensity::gaussian(1).unwrap();
        let s = convolve(&f, &g, 1.0).unwrap();
        let xs = s.sample(8, 100_000).unwrap();
        let var = xs.iter().map(|x| x[0] * x[0]).sum::<f64>() / xs.len() as f64;
        assert!((var - 2.0).abs() < 0.05);
    }
}
