//! L^q, sup-norm and Kullback-Leibler distances between densities.

use crate::densities::Density;
use crate::error::{Error, Result};
use crate::quadrature::{BoxDomain, QuadratureSpec, Rule, TensorGrid};
use crate::scalar::{pairwise_sum, Real};

/// Values below this are treated as zero in the KL integrand.
pub const KL_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Quadrature,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceReport<T> {
    pub value: T,
    pub estimator: Estimator,
    pub error_estimate: T,
    pub nodes_or_samples: usize,
}

impl<T: Real> DistanceReport<T> {
    fn quadrature(fine: T, coarse: T, nodes: usize) -> Self {
        let err = if fine.is_finite() && coarse.is_finite() {
            (fine - coarse).abs()
        } else {
            T::zero()
        };
        Self {
            value: fine,
            estimator: Estimator::Quadrature,
            error_estimate: err,
            nodes_or_samples: nodes,
        }
    }
}

/// Union of the breakpoints of several densities, per axis.
pub fn merged_breakpoints<T: Real>(densities: &[&dyn Density<T>], dim: usize) -> Vec<Vec<T>> {
    (0..dim)
        .map(|k| {
            let mut v: Vec<T> = densities.iter().flat_map(|d| d.breakpoints(k)).collect();
            v.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
            v.dedup();
            v
        })
        .collect()
}

fn check_dims<T: Real>(f: &dyn Density<T>, g: &dyn Density<T>, spec: &QuadratureSpec<T>) -> Result<()> {
    if f.dim() != g.dim() || f.dim() != spec.dim() {
        return Err(Error::Dimension(format!(
            "densities have dimensions {} and {}, quadrature box {}",
            f.dim(),
            g.dim(),
            spec.dim()
        )));
    }
    Ok(())
}

fn check_q<T: Real>(q: T) -> Result<()> {
    if !(q >= T::one()) || !q.is_finite() {
        return Err(Error::InvalidArgument(format!("q = {q} must lie in [1, ∞)")));
    }
    Ok(())
}

/// `(∫ |h|^q)^{1/q}` on one grid.
pub fn lq_on_grid<T, F>(grid: &TensorGrid<T>, q: T, h: F) -> T
where
    T: Real,
    F: Fn(&[T]) -> T + Sync,
{
    let s = grid.integrate(|x| h(x).abs().powf(q));
    s.max(T::zero()).powf(q.recip())
}

/// `(∫ |h|^q)^{1/q}` with a two-level error estimate.
pub fn lq_norm_of<T, F>(h: F, q: T, spec: &QuadratureSpec<T>, breakpoints: &[Vec<T>]) -> Result<DistanceReport<T>>
where
    T: Real,
    F: Fn(&[T]) -> T + Sync,
{
    check_q(q)?;
    let fine = spec.grid(breakpoints)?;
    let coarse = spec.coarse().grid(breakpoints)?;
    Ok(DistanceReport::quadrature(
        lq_on_grid(&fine, q, &h),
        lq_on_grid(&coarse, q, &h),
        fine.len(),
    ))
}

/// `‖f‖_{L^q}` over the spec's box.
pub fn lq_norm<T: Real>(f: &dyn Density<T>, q: T, spec: &QuadratureSpec<T>) -> Result<DistanceReport<T>> {
    let bps = merged_breakpoints(&[f], f.dim());
    lq_norm_of(|x| f.density(x), q, spec, &bps)
}

/// `‖f − g‖_{L^q}` by tensor quadrature.
pub fn lq_distance<T: Real>(
    f: &dyn Density<T>,
    g: &dyn Density<T>,
    q: T,
    spec: &QuadratureSpec<T>,
) -> Result<DistanceReport<T>> {
    check_dims(f, g, spec)?;
    let bps = merged_breakpoints(&[f, g], f.dim());
    lq_norm_of(|x| f.density(x) - g.density(x), q, spec, &bps)
}

/// `‖f − g‖_{L^q}` by importance sampling with proposal `f`; the error
/// estimate is the delta-method standard error.
pub fn lq_distance_mc<T: Real>(
    f: &dyn Density<T>,
    g: &dyn Density<T>,
    q: T,
    samples: usize,
    seed: u64,
) -> Result<DistanceReport<T>> {
    check_q(q)?;
    if f.dim() != g.dim() {
        return Err(Error::Dimension("densities differ in dimension".into()));
    }
    if samples < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let draws = f.sample(seed, samples)?;
    let terms: Vec<T> = draws
        .iter()
        .map(|x| {
            let fx = f.density(x);
            if fx > T::zero() {
                (fx - g.density(x)).abs().powf(q) / fx
            } else {
                T::zero()
            }
        })
        .collect();
    let n = T::from_usize_lossy(samples);
    let mean = pairwise_sum(&terms) / n;
    let var: Vec<T> = terms.iter().map(|&t| (t - mean) * (t - mean)).collect();
    let se = (pairwise_sum(&var) / (n - T::one()) / n).sqrt();
    let value = mean.max(T::zero()).powf(q.recip());
    // d(m^{1/q})/dm = m^{1/q - 1} / q
    let err = if mean > T::zero() {
        se * mean.powf(q.recip() - T::one()) / q
    } else {
        se
    };
    Ok(DistanceReport {
        value,
        estimator: Estimator::MonteCarlo,
        error_estimate: err,
        nodes_or_samples: samples,
    })
}

/// Grid of cell centres for sup-norm scans: midpoints never sit on a
/// breakpoint, so jump discontinuities are measured from either side only.
pub fn sup_grid<T: Real>(spec: &QuadratureSpec<T>, breakpoints: &[Vec<T>]) -> Result<TensorGrid<T>> {
    let s = QuadratureSpec {
        rule: Rule::Midpoint,
        ..spec.clone()
    };
    s.grid(breakpoints)
}

/// `sup |h|` over two nested grids of cell centres.
pub fn sup_norm_of<T, F>(h: F, spec: &QuadratureSpec<T>, breakpoints: &[Vec<T>]) -> Result<DistanceReport<T>>
where
    T: Real,
    F: Fn(&[T]) -> T + Sync,
{
    let coarse = sup_grid(spec, breakpoints)?;
    let fine = sup_grid(&spec.with_points(spec.points_per_axis * 2), breakpoints)?;
    let a = fine.max(|x| h(x).abs());
    let b = coarse.max(|x| h(x).abs());
    Ok(DistanceReport::quadrature(a.max(b), b, fine.len()))
}

/// `sup |f − g|` over the spec's box.
pub fn sup_distance<T: Real>(
    f: &dyn Density<T>,
    g: &dyn Density<T>,
    spec: &QuadratureSpec<T>,
) -> Result<DistanceReport<T>> {
    check_dims(f, g, spec)?;
    let bps = merged_breakpoints(&[f, g], f.dim());
    sup_norm_of(|x| f.density(x) - g.density(x), spec, &bps)
}

fn kl_on_grid<T, F, G>(grid: &TensorGrid<T>, f: F, g: G) -> T
where
    T: Real,
    F: Fn(&[T]) -> T + Sync,
    G: Fn(&[T]) -> T + Sync,
{
    let floor = T::lit(KL_FLOOR);
    grid.integrate(|x| {
        let fx = f(x);
        if fx <= floor {
            return T::zero();
        }
        let gx = g(x);
        if gx <= floor {
            return T::infinity();
        }
        fx * (fx / gx).ln()
    })
}

/// `∫_Ω f log(f/g)` from evaluators. Infinite when `g` vanishes at a node
/// where `f` does not.
pub fn kl_of<T, F, G>(f: F, g: G, spec: &QuadratureSpec<T>, breakpoints: &[Vec<T>]) -> Result<DistanceReport<T>>
where
    T: Real,
    F: Fn(&[T]) -> T + Sync,
    G: Fn(&[T]) -> T + Sync,
{
    let fine = spec.grid(breakpoints)?;
    let coarse = spec.coarse().grid(breakpoints)?;
    let a = kl_on_grid(&fine, &f, &g);
    let b = kl_on_grid(&coarse, &f, &g);
    Ok(DistanceReport::quadrature(a, b, fine.len()))
}

/// `KL(f‖g)` restricted to `omega`, using the spec's rule and resolution.
pub fn kl_divergence<T: Real>(
    f: &dyn Density<T>,
    g: &dyn Density<T>,
    omega: &BoxDomain<T>,
    spec: &QuadratureSpec<T>,
) -> Result<DistanceReport<T>> {
    let spec = spec.with_domain(omega.clone());
    check_dims(f, g, &spec)?;
    let bps = merged_breakpoints(&[f, g], f.dim());
    kl_of(|x| f.density(x), |x| g.density(x), &spec, &bps)
}

/// Both sides of `KL(f‖g) ≤ ‖f − g‖²_{L²(Ω)} / η`.
#[derive(Debug, Clone, PartialEq)]
pub struct KlL2Check<T> {
    pub kl: T,
    pub l2_squared: T,
    pub bound: T,
    /// Quadrature uncertainty allowed on top of the bound.
    pub margin: T,
    pub holds: bool,
}

/// First grid node (if any) where `h < eta`.
pub fn floor_violation<T, F>(grid: &TensorGrid<T>, eta: T, h: F) -> Option<Vec<T>>
where
    T: Real,
    F: Fn(&[T]) -> T + Sync,
{
    grid.find_node(|x| h(x) >= eta)
}

/// Checks the KL-vs-L² inequality for densities bounded below by `eta` on
/// `omega`.
pub fn kl_l2_bound_check<T: Real>(
    f: &dyn Density<T>,
    g: &dyn Density<T>,
    omega: &BoxDomain<T>,
    eta: T,
    spec: &QuadratureSpec<T>,
) -> Result<KlL2Check<T>> {
    if !(eta > T::zero()) {
        return Err(Error::InvalidArgument("η must be positive".into()));
    }
    let spec = spec.with_domain(omega.clone());
    check_dims(f, g, &spec)?;
    let bps = merged_breakpoints(&[f, g], f.dim());
    let grid = spec.grid(&bps)?;
    for (name, d) in [("f", f), ("g", g)] {
        if let Some(x) = floor_violation(&grid, eta, |x| d.density(x)) {
            return Err(Error::Precondition {
                location: format!("{x:?}"),
                detail: format!("{name} = {} is below η = {eta}", d.density(&x)),
            });
        }
    }
    let kl = kl_of(|x| f.density(x), |x| g.density(x), &spec, &bps)?;
    let l2 = lq_norm_of(|x| f.density(x) - g.density(x), T::lit(2.0), &spec, &bps)?;
    let l2_squared = l2.value * l2.value;
    let bound = l2_squared / eta;
    let l2_sq_err = T::lit(2.0) * l2.value * l2.error_estimate + l2.error_estimate * l2.error_estimate;
    let margin = kl.error_estimate + l2_sq_err / eta + T::epsilon() * T::lit(64.0);
    Ok(KlL2Check {
        kl: kl.value,
        l2_squared,
        bound,
        margin,
        holds: kl.value <= bound + margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::{ParentalDensity, TargetDensity};
    use approx::assert_relative_eq;

    fn line(lo: f64, hi: f64, n: usize) -> QuadratureSpec<f64> {
        QuadratureSpec::new(BoxDomain::interval(lo, hi).unwrap(), Rule::GaussLegendreComposite, n).unwrap()
    }

    fn normal(mean: f64, sd: f64) -> TargetDensity<f64> {
        TargetDensity::gaussian_mixture(vec![1.0], vec![vec![mean]], vec![sd]).unwrap()
    }

    #[test]
    fn identical_inputs_give_zero() {
        let f = normal(0.0, 1.0);
        let spec = line(-12.0, 12.0, 200);
        assert_eq!(lq_distance(&f, &f, 2.0, &spec).unwrap().value, 0.0);
        assert_eq!(sup_distance(&f, &f, &spec).unwrap().value, 0.0);
        assert_eq!(
            kl_divergence(&f, &f, &spec.effective_domain(), &spec).unwrap().value,
            0.0
        );
    }

    #[test]
    fn gaussian_l2_distance_matches_inner_products() {
        let f = normal(0.0, 1.0);
        let g = normal(0.0, 2f64.sqrt());
        let spec = line(-10.0, 10.0, 200);
        let pi = std::f64::consts::PI;
        // ∫ N(0,a) N(0,b) = 1/√(2π(a+b))
        let oracle = 1.0 / (2.0 * pi.sqrt()) + 1.0 / (2.0 * (2.0 * pi).sqrt()) - 2.0 / (2.0 * pi * 3.0).sqrt();
        let r = lq_distance(&f, &g, 2.0, &spec).unwrap();
        assert_relative_eq!(r.value * r.value, oracle, epsilon = 1e-12);
        assert!(r.error_estimate < 1e-10);
        assert_eq!(r.estimator, Estimator::Quadrature);
    }

    #[test]
    fn uniform_vs_counterexample_l2() {
        let f = TargetDensity::uniform(BoxDomain::interval(0.0, 1.0).unwrap()).unwrap();
        let g = TargetDensity::<f64>::counterexample(2).unwrap();
        let spec = line(0.0, 1.0, 16);
        // (f_2 - 1)² integrated piecewise: ramp on [0,1/4], constant 1/15 after
        let c = 16.0 / 15.0;
        let ramp = {
            let h = |x: f64| (c * (2.0 * x + 0.5) - 1.0).powi(2);
            // Simpson is exact for quadratics
            0.25 / 6.0 * (h(0.0) + 4.0 * h(0.125) + h(0.25))
        };
        let oracle = ramp + 0.75 * (c - 1.0).powi(2);
        let r = lq_distance(&f, &g, 2.0, &spec).unwrap();
        assert_relative_eq!(r.value * r.value, oracle, epsilon = 1e-14);
    }

    #[test]
    fn sup_gap_of_counterexample() {
        let f = TargetDensity::uniform(BoxDomain::interval(0.0, 1.0).unwrap()).unwrap();
        let g = TargetDensity::<f64>::counterexample(2).unwrap();
        let spec = line(0.0, 1.0, 1000);
        let r = sup_distance(&f, &g, &spec).unwrap();
        // the gap at 0⁺ is 1 - C_2/2 = 7/15; the nearest centre is 1/4000 in
        assert!((r.value - 7.0 / 15.0).abs() < 2.0 * 16.0 / 15.0 / 4000.0);
    }

    #[test]
    fn sup_of_shifted_normals_matches_dense_scan() {
        let f = normal(0.0, 1.0);
        let g = normal(0.5, 1.0);
        let spec = line(-12.0, 12.0, 4000);
        let r = sup_distance(&f, &g, &spec).unwrap();
        let scan = (0..=200_000)
            .map(|i| -2.0 + 4.0 * i as f64 / 200_000.0)
            .map(|x| (f.density(&[x]) - g.density(&[x])).abs())
            .fold(0.0, f64::max);
        assert!((r.value - scan).abs() < 1e-6);
        assert!(r.error_estimate < 1e-5);
    }

    #[test]
    fn gaussian_kl_closed_form() {
        let f = normal(0.0, 1.0);
        let g = normal(0.7, 1.0);
        let omega = BoxDomain::interval(-12.0, 12.0).unwrap();
        let r = kl_divergence(&f, &g, &omega, &line(-12.0, 12.0, 200)).unwrap();
        assert!((r.value - 0.49 / 2.0).abs() < 1e-6);
    }

    #[test]
    fn kl_flags_support_violation() {
        let f = TargetDensity::uniform(BoxDomain::interval(0.0, 1.0).unwrap()).unwrap();
        let g = TargetDensity::uniform(BoxDomain::interval(0.0, 0.5).unwrap()).unwrap();
        let omega = BoxDomain::interval(0.0, 1.0).unwrap();
        let r = kl_divergence(&f, &g, &omega, &line(0.0, 1.0, 10)).unwrap();
        assert!(r.value.is_infinite());
    }

    #[test]
    fn counterexample_kl_converges_under_refinement() {
        let f = TargetDensity::uniform(BoxDomain::interval(0.0, 1.0).unwrap()).unwrap();
        let g = TargetDensity::<f64>::counterexample(2).unwrap();
        let omega = BoxDomain::interval(0.0, 1.0).unwrap();
        let coarse = kl_divergence(&f, &g, &omega, &line(0.0, 1.0, 64)).unwrap();
        let spec = line(0.0, 1.0, 200_000).with_budget(2_000_000).unwrap();
        let reference = kl_divergence(&f, &g, &omega, &spec).unwrap();
        assert!(coarse.value > 0.0);
        assert!((coarse.value - reference.value).abs() < 1e-6);
    }

    #[test]
    fn kl_l2_lemma_on_counterexamples() {
        let f = TargetDensity::uniform(BoxDomain::interval(0.0, 1.0).unwrap()).unwrap();
        let omega = BoxDomain::interval(0.0, 1.0).unwrap();
        for m in [1, 2, 4, 8] {
            let g = TargetDensity::<f64>::counterexample(m).unwrap();
            let c = kl_l2_bound_check(&f, &g, &omega, 0.5, &line(0.0, 1.0, 64)).unwrap();
            assert!(c.holds, "m = {m}: {c:?}");
            assert!(c.kl > 0.0);
        }
        let c = kl_l2_bound_check(&f, &f, &omega, 0.3, &line(0.0, 1.0, 8)).unwrap();
        assert_eq!((c.kl, c.bound, c.holds), (0.0, 0.0, true));
    }

    #[test]
    fn kl_l2_precondition_names_node() {
        let f = TargetDensity::uniform(BoxDomain::interval(0.0, 1.0).unwrap()).unwrap();
        let g = TargetDensity::<f64>::counterexample(2).unwrap();
        let omega = BoxDomain::interval(0.0, 1.0).unwrap();
        let err = kl_l2_bound_check(&f, &g, &omega, 0.9, &line(0.0, 1.0, 8)).unwrap_err();
        assert!(matches!(err, Error::Precondition { .. }));
    }

    #[test]
    fn parent_norm_numeric_matches_closed_form() {
        let g = ParentalDensity::<f64>::gaussian(1).unwrap();
        let spec = line(-12.0, 12.0, 200);
        for q in [1.0, 1.5, 2.0, 3.0, 4.0] {
            let r = lq_norm(&g, q, &spec).unwrap();
            assert_relative_eq!(r.value, g.lq_norm_closed_form(q).unwrap(), epsilon = 1e-10);
        }
    }

    #[test]
    fn monte_carlo_agrees_with_quadrature() {
        let f = normal(0.0, 1.0);
        let g = normal(0.3, 1.2);
        let q = lq_distance(&f, &g, 2.0, &line(-12.0, 12.0, 200)).unwrap();
        let mc = lq_distance_mc(&f, &g, 2.0, 200_000, 5).unwrap();
        assert_eq!(mc.estimator, Estimator::MonteCarlo);
        assert!((mc.value - q.value).abs() < 5.0 * mc.error_estimate + 1e-3);
    }

    #[test]
    fn refinement_stays_within_error_estimate() {
        let f = normal(0.0, 1.0);
        let g = normal(0.4, 0.8);
        let spec = line(-12.0, 12.0, 60);
        let a = lq_distance(&f, &g, 1.5, &spec).unwrap();
        let b = lq_distance(&f, &g, 1.5, &spec.with_points(120)).unwrap();
        assert!((a.value - b.value).abs() <= a.error_estimate + 1e-15);
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let f = normal(0.0, 1.0);
        let g = normal(0.4, 0.8);
        let spec = line(-12.0, 12.0, 5000);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| lq_distance(&f, &g, 2.0, &spec).unwrap().value);
        let b = four.install(|| lq_distance(&f, &g, 2.0, &spec).unwrap().value);
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
