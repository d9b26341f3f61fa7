//! Deep belief networks `p(v, h₁, h₂) = p(v | h₁) π(h₁, h₂)` with
//! `p(· | e_i) = φ_{μ_i,σ}` and zero conditional density off the unit
//! vectors, plus the end-to-end approximation pipelines.

use std::fmt::Write as _;

use rand::RngCore;

use crate::binary_rbm::{self, BinaryRbm, DiscreteDistribution, TextLines, UnitMarginals};
use crate::densities::{
    pick_index, scaled_norm_factor, upsilon, Density, ParentalDensity, ParentalFamily, ShiftedScaled, TargetDensity,
};
use crate::error::{Error, Result, StageExt};
use crate::metrics::{self, merged_breakpoints, DistanceReport};
use crate::mixture::{self, GreedyOptions, MixtureModel, NodeSet};
use crate::quadrature::{BoxDomain, QuadratureSpec};
use crate::scalar::{pairwise_sum, Real};
use crate::seed;
use crate::smoothing::{self, SigmaGrid};

/// Sampling refuses models whose deficiency reaches this value.
pub const MAX_SAMPLING_DEFICIENCY: f64 = 0.999;

#[derive(Debug, Clone)]
pub struct DeepBeliefNetwork<T> {
    rbm: BinaryRbm<T>,
    parent: ParentalDensity<T>,
    sigma: T,
    /// Component `i` is the conditional law given `h₁ = e_i`.
    components: Vec<ShiftedScaled<T>>,
    marginals: UnitMarginals<T>,
}

impl<T: Real> DeepBeliefNetwork<T> {
    /// Pairs component `i` of `mixture` with the unit vector `e_i`.
    pub fn assemble(mixture: &MixtureModel<T>, rbm: BinaryRbm<T>) -> Result<Self> {
        Self::from_parts(rbm, mixture.parent().clone(), mixture.sigma(), mixture.shifts())
    }

    pub fn from_parts(rbm: BinaryRbm<T>, parent: ParentalDensity<T>, sigma: T, shifts: Vec<Vec<T>>) -> Result<Self> {
        let m = shifts.len();
        if rbm.visible_count() != m || rbm.hidden_count() != m + 1 {
            return Err(Error::Dimension(format!(
                "an RBM of shape {}×{} cannot drive {m} components",
                rbm.visible_count(),
                rbm.hidden_count()
            )));
        }
        let components = shifts
            .into_iter()
            .map(|mu| ShiftedScaled::new(parent.clone(), mu, sigma))
            .collect::<Result<Vec<_>>>()?;
        let marginals = rbm.unit_marginals()?;
        Ok(Self {
            rbm,
            parent,
            sigma,
            components,
            marginals,
        })
    }

    pub fn m(&self) -> usize {
        self.components.len()
    }

    pub fn rbm(&self) -> &BinaryRbm<T> {
        &self.rbm
    }

    pub fn parent(&self) -> &ParentalDensity<T> {
        &self.parent
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn component(&self, i: usize) -> &ShiftedScaled<T> {
        &self.components[i]
    }

    /// Conditional law given `h₁`, defined on unit vectors only.
    pub fn component_for(&self, h1: &[bool]) -> Option<&ShiftedScaled<T>> {
        if h1.len() != self.m() || h1.iter().filter(|&&b| b).count() != 1 {
            return None;
        }
        h1.iter().position(|&b| b).map(|i| &self.components[i])
    }

    /// `π₁(e_i)` for every `i`.
    pub fn unit_probabilities(&self) -> &[T] {
        &self.marginals.unit
    }

    pub fn marginals(&self) -> &UnitMarginals<T> {
        &self.marginals
    }

    /// `1 − Σ_i π₁(e_i)`.
    pub fn deficiency(&self) -> T {
        self.marginals.deficiency
    }

    /// `Σ_i π₁(e_i) φ_{μ_i,σ}(x)`.
    pub fn eval_visible(&self, x: &[T]) -> T {
        let mut scratch = vec![T::zero(); x.len()];
        let terms: Vec<T> = self
            .components
            .iter()
            .zip(&self.marginals.unit)
            .map(|(c, &p)| p * c.density_with(x, &mut scratch))
            .collect();
        pairwise_sum(&terms)
    }

    /// Draws from the normalised visible density: `h₁` is redrawn until it
    /// is a unit vector, which is a categorical draw over `π₁(e_i)`.
    pub fn sample_visible(&self, seed: u64, count: usize) -> Result<Vec<Vec<T>>> {
        self.sample(seed, count)
    }

    pub fn to_text(&self) -> Result<String> {
        let mut s = String::from("dbn v1\n");
        s.push_str(&self.rbm.to_text());
        let _ = writeln!(s, "{}", parent_line(&self.parent)?);
        let d = self.parent.dim();
        let _ = writeln!(s, "components {} dim {d} sigma {:e}", self.m(), self.sigma);
        for (i, c) in self.components.iter().enumerate() {
            let coords: Vec<String> = c.shift().iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(s, "{i} {}", coords.join(" "));
        }
        Ok(s)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = TextLines::new(text);
        lines.expect("dbn v1")?;
        let rbm = BinaryRbm::read(&mut lines)?;
        let pl = lines.next_line()?;
        let parent = parse_parent(pl).map_err(|e| lines.error(e.to_string()))?;
        let header = lines.next_line()?;
        let tok: Vec<&str> = header.split_whitespace().collect();
        let (m, d, sigma) = match tok.as_slice() {
            ["components", m, "dim", d, "sigma", s] => (
                m.parse::<usize>().map_err(|_| lines.error("bad component count"))?,
                d.parse::<usize>().map_err(|_| lines.error("bad dimension"))?,
                s.parse::<T>().map_err(|_| lines.error("bad sigma"))?,
            ),
            _ => return Err(lines.error(format!("expected component header, found '{header}'"))),
        };
        if d != parent.dim() {
            return Err(lines.error("component dimension differs from the parent"));
        }
        let mut shifts = Vec::with_capacity(m);
        for i in 0..m {
            let row = lines.numbers::<T>(d + 1)?;
            if row[0] != T::from_usize_lossy(i) {
                return Err(lines.error(format!("expected component {i}")));
            }
            shifts.push(row[1..].to_vec());
        }
        Self::from_parts(rbm, parent, sigma, shifts)
    }
}

fn parent_line<T: Real>(p: &ParentalDensity<T>) -> Result<String> {
    let join = |v: &[T]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
    match p.family() {
        ParentalFamily::Gaussian => Ok(format!("parent gaussian {}", p.dim())),
        ParentalFamily::TruncatedExponential => {
            let (rates, bounds) = p.truncated_exponential_params().expect("family checked");
            Ok(format!(
                "parent truncated_exponential {} rates {} bounds {}",
                p.dim(),
                join(rates),
                join(bounds)
            ))
        }
        ParentalFamily::Custom => Err(Error::Unsupported("custom parents have no text form".into())),
    }
}

fn parse_parent<T: Real>(line: &str) -> Result<ParentalDensity<T>> {
    let tok: Vec<&str> = line.split_whitespace().collect();
    let bad = || Error::InvalidArgument(format!("bad parent line '{line}'"));
    match tok.as_slice() {
        ["parent", "gaussian", d] => ParentalDensity::gaussian(d.parse().map_err(|_| bad())?),
        ["parent", "truncated_exponential", d, rest @ ..] => {
            let d: usize = d.parse().map_err(|_| bad())?;
            if rest.len() != 2 * d + 2 || rest[0] != "rates" || rest[d + 1] != "bounds" {
                return Err(bad());
            }
            let nums = |s: &[&str]| {
                s.iter()
                    .map(|t| t.parse::<T>().map_err(|_| bad()))
                    .collect::<Result<Vec<T>>>()
            };
            ParentalDensity::truncated_exponential(nums(&rest[1..=d])?, nums(&rest[d + 2..])?)
        }
        _ => Err(bad()),
    }
}

impl<T: Real> Density<T> for DeepBeliefNetwork<T> {
    fn dim(&self) -> usize {
        self.parent.dim()
    }

    fn density(&self, x: &[T]) -> T {
        self.eval_visible(x)
    }

    fn support(&self) -> Option<BoxDomain<T>> {
        let mut it = self.components.iter().map(|c| c.support());
        let first = it.next()??;
        it.try_fold(first, |acc, s| s.map(|s| acc.union(&s)))
    }

    fn breakpoints(&self, axis: usize) -> Vec<T> {
        let mut v: Vec<T> = self.components.iter().flat_map(|c| c.breakpoints(axis)).collect();
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
        v.dedup();
        v
    }

    fn can_sample(&self) -> bool {
        self.parent.can_sample()
    }

    fn draw(&self, rng: &mut dyn RngCore, out: &mut [T]) -> Result<()> {
        if self.deficiency() >= T::lit(MAX_SAMPLING_DEFICIENCY) {
            return Err(Error::Degenerate(format!(
                "deficiency {} leaves almost no mass on unit vectors",
                self.deficiency()
            )));
        }
        let i = pick_index(rng, &self.marginals.unit);
        self.components[i].draw(rng, out)
    }
}

/// Measured errors of one pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproximationCertificate<T> {
    /// `∞` for the sup-norm pipeline.
    pub q: T,
    pub epsilon: T,
    pub m: usize,
    pub sigma: T,
    /// `‖f − p‖_q` of the assembled network.
    pub measured_error: T,
    pub smoothing_error: T,
    pub mixture_error: T,
    /// `max_v |α(v) − π₁(v)|`.
    pub rbm_tv: T,
    /// `Σ_i |α_i − π₁(e_i)| ‖φ_{μ_i,σ}‖_q`.
    pub rbm_term: T,
    pub deficiency: T,
    /// `deficiency · max_i ‖φ_{μ_i,σ}‖_q`.
    pub deficiency_term: T,
    /// Sum of the quadrature error estimates of the measured terms.
    pub quadrature_error: T,
    /// `ε + 2 Υ_q ‖φ‖_q m^{-(1-1/min(q,2))}` (the sup pipeline uses `ε`).
    pub paper_bound: T,
    /// The same with `‖φ_{μ,σ}‖_q` in place of `‖φ‖_q`.
    pub corrected_bound: T,
}

impl<T: Real> ApproximationCertificate<T> {
    /// Right-hand side of the triangle audit.
    pub fn audit_bound(&self) -> T {
        self.smoothing_error
            + self.mixture_error
            + self.rbm_term
            + self.deficiency_term
            + T::lit(3.0) * self.quadrature_error
    }

    pub fn audit_holds(&self) -> bool {
        self.measured_error <= self.audit_bound()
    }
}

#[derive(Debug, Clone)]
pub struct LqOptions<T> {
    pub sigma_grid: SigmaGrid<T>,
    pub greedy_iterations: usize,
}

impl<T: Real> Default for LqOptions<T> {
    fn default() -> Self {
        Self {
            sigma_grid: SigmaGrid::default(),
            greedy_iterations: 30,
        }
    }
}

/// `‖φ‖_q`, closed form when available.
fn parent_norm<T: Real>(parent: &ParentalDensity<T>, q: T, spec: &QuadratureSpec<T>) -> Result<T> {
    match parent.lq_norm_closed_form(q) {
        Ok(v) => Ok(v),
        Err(Error::Unsupported(_)) => {
            let s = match parent.support() {
                Some(b) => spec.with_domain(b),
                None => spec.clone(),
            };
            if q.is_infinite() {
                Ok(
                    metrics::sup_norm_of(|x| parent.density(x), &s, &merged_breakpoints(&[parent], parent.dim()))?
                        .value,
                )
            } else {
                Ok(metrics::lq_norm(parent, q, &s)?.value)
            }
        }
        Err(e) => Err(e),
    }
}

struct RbmStage<T> {
    rbm: BinaryRbm<T>,
    tv: T,
    l1: T,
}

/// Synthesises the RBM for mixture weights `alpha` at tolerance `tol`.
fn rbm_stage<T: Real>(alpha: &[T], tol: T) -> Result<RbmStage<T>> {
    let target = DiscreteDistribution::on_unit_vectors(alpha)?;
    let syn = binary_rbm::synthesize(&target, tol)?;
    let l1 = alpha
        .iter()
        .zip(&syn.marginals.unit)
        .fold(T::zero(), |a, (&x, &p)| a + (x - p).abs());
    Ok(RbmStage {
        rbm: syn.rbm,
        tv: syn.tv,
        l1,
    })
}

/// `ε/2` smoothing, an `m`-term mixture, `ε/4` for the RBM.
pub fn approximate_lq<T: Real>(
    target: &TargetDensity<T>,
    parent: &ParentalDensity<T>,
    q: T,
    m: usize,
    epsilon: T,
    seed: u64,
    spec: &QuadratureSpec<T>,
) -> Result<(DeepBeliefNetwork<T>, ApproximationCertificate<T>)> {
    approximate_lq_with(target, parent, q, m, epsilon, seed, spec, &LqOptions::default())
}

#[allow(clippy::too_many_arguments)]
pub fn approximate_lq_with<T: Real>(
    target: &TargetDensity<T>,
    parent: &ParentalDensity<T>,
    q: T,
    m: usize,
    epsilon: T,
    seed: u64,
    spec: &QuadratureSpec<T>,
    opts: &LqOptions<T>,
) -> Result<(DeepBeliefNetwork<T>, ApproximationCertificate<T>)> {
    if !(q > T::one()) || !q.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "q = {q} is outside (1, ∞); use approximate_sup for the sup norm"
        )));
    }
    if m == 0 || !(epsilon > T::zero()) {
        return Err(Error::InvalidArgument("need m ≥ 1 and ε > 0".into()));
    }
    let two = T::lit(2.0);
    let choice = smoothing::select_sigma(target, parent, q, epsilon / two, spec, opts.sigma_grid).stage("smoothing")?;
    let sigma = choice.sigma;
    let smoothed = smoothing::convolve(target, parent, sigma).stage("smoothing")?;
    let mspec = smoothing::smoothing_spec(spec, &smoothed).stage("mixture")?;

    let (mixture, mixture_report) = (|| -> Result<_> {
        let initial = mixture::maurey_sample(&smoothed, m, seed::derive(seed, &[1]))?;
        let e0 = metrics::lq_distance(&smoothed, &initial, q, &mspec)?;
        let greedy = GreedyOptions {
            iterations: opts.greedy_iterations,
            seed: seed::derive(seed, &[2]),
            ..GreedyOptions::default()
        };
        let refined = mixture::greedy_refine_with(&smoothed, &initial, &mspec, &greedy)?.mixture;
        let e1 = metrics::lq_distance(&smoothed, &refined, q, &mspec)?;
        Ok(if e1.value <= e0.value {
            (refined, e1)
        } else {
            (initial, e0)
        })
    })()
    .stage("mixture")?;

    let d = parent.dim();
    let phi_q = parent_norm(parent, q, spec).stage("rbm")?;
    let comp_norm = scaled_norm_factor(sigma, d, q) * phi_q;
    let tol = epsilon / T::lit(4.0) / (T::from_usize_lossy(m) * comp_norm);
    let rbm = rbm_stage(mixture.weights(), tol).stage("rbm")?;
    let dbn = DeepBeliefNetwork::assemble(&mixture, rbm.rbm).stage("assembly")?;

    let measured = metrics::lq_distance(target, &dbn, q, &mspec).stage("measurement")?;
    let rate = upsilon(q)? * two * T::from_usize_lossy(m).powf(-mixture::rate_exponent(q));
    let cert = ApproximationCertificate {
        q,
        epsilon,
        m,
        sigma,
        measured_error: measured.value,
        smoothing_error: choice.error.value,
        mixture_error: mixture_report.value,
        rbm_tv: rbm.tv,
        rbm_term: rbm.l1 * comp_norm,
        deficiency: dbn.deficiency(),
        deficiency_term: dbn.deficiency() * comp_norm,
        quadrature_error: measured.error_estimate + choice.error.error_estimate + mixture_report.error_estimate,
        paper_bound: epsilon + rate * phi_q,
        corrected_bound: epsilon + rate * comp_norm,
    };
    Ok((dbn, cert))
}

#[derive(Debug, Clone)]
pub struct SupOptions<T> {
    pub sigma_grid: SigmaGrid<T>,
    pub m_cap: usize,
    pub seed: u64,
    pub greedy_iterations: usize,
    /// Weight refits against the sup norm are applied up to this many
    /// components.
    pub refit_up_to: usize,
}

impl<T: Real> Default for SupOptions<T> {
    fn default() -> Self {
        Self {
            sigma_grid: SigmaGrid::default(),
            m_cap: 1024,
            seed: 0,
            greedy_iterations: 20,
            refit_up_to: 64,
        }
    }
}

/// Equal-weight shifts at the quantiles `(i − ½)/m` of a one-dimensional
/// target, read off a fine midpoint grid.
fn quantile_shifts<T: Real>(target: &TargetDensity<T>, domain: &BoxDomain<T>, m: usize) -> Vec<Vec<T>> {
    let cells = 16 * m.max(256);
    let (lo, w) = (domain.lo()[0], domain.width(0));
    let h = w / T::from_usize_lossy(cells);
    let mass: Vec<T> = (0..cells)
        .map(|i| target.density(&[lo + h * (T::from_usize_lossy(i) + T::lit(0.5))]) * h)
        .collect();
    let total = pairwise_sum(&mass);
    let mut out = Vec::with_capacity(m);
    let mut acc = T::zero();
    let mut i = 0;
    for k in 0..m {
        let want = total * (T::from_usize_lossy(k) + T::lit(0.5)) / T::from_usize_lossy(m);
        while i < cells - 1 && acc + mass[i] < want {
            acc += mass[i];
            i += 1;
        }
        let frac = if mass[i] > T::zero() {
            (want - acc) / mass[i]
        } else {
            T::lit(0.5)
        };
        out.push(vec![
            lo + h * (T::from_usize_lossy(i) + frac.min(T::one()).max(T::zero())),
        ]);
    }
    out
}

/// Sup-norm pipeline: `m` doubles from 1 until the assembled network is
/// within `ε` of the target on the spec's midpoint grid.
pub fn approximate_sup<T: Real>(
    target: &TargetDensity<T>,
    parent: &ParentalDensity<T>,
    epsilon: T,
    spec: &QuadratureSpec<T>,
) -> Result<(DeepBeliefNetwork<T>, ApproximationCertificate<T>)> {
    approximate_sup_with(target, parent, epsilon, spec, &SupOptions::default())
}

pub fn approximate_sup_with<T: Real>(
    target: &TargetDensity<T>,
    parent: &ParentalDensity<T>,
    epsilon: T,
    spec: &QuadratureSpec<T>,
    opts: &SupOptions<T>,
) -> Result<(DeepBeliefNetwork<T>, ApproximationCertificate<T>)> {
    if !(epsilon > T::zero()) {
        return Err(Error::InvalidArgument("ε must be positive".into()));
    }
    let phi_inf = parent_norm(parent, T::infinity(), spec).stage("smoothing")?;
    let half = epsilon / T::lit(2.0);

    // σ: largest grid value whose smoothing error on the spec's grid is ε/2
    let mut chosen = None;
    let mut best = T::infinity();
    for k in 0..=opts.sigma_grid.k_max {
        let sigma = opts.sigma_grid.value(k);
        let smoothed = smoothing::convolve(target, parent, sigma).stage("smoothing")?;
        let e = metrics::sup_distance(target, &smoothed, spec).stage("smoothing")?;
        best = best.min(e.value);
        if e.value <= half {
            chosen = Some((sigma, smoothed, e));
            break;
        }
    }
    let (sigma, smoothed, smooth_err) = chosen.ok_or(Error::Convergence {
        stage: "select_sigma".into(),
        detail: format!("no σ on the grid reaches {half}"),
        best: best.as_f64(),
    })?;

    let d = parent.dim();
    let comp_norm = scaled_norm_factor(sigma, d, T::infinity()) * phi_inf;
    let bps = merged_breakpoints(&[target], d);
    let sup_nodes = {
        let g = metrics::sup_grid(spec, &bps).stage("mixture")?;
        NodeSet {
            points: g.points(),
            weights: g.weights(),
        }
    };
    let f_vals = sup_nodes.eval(|x| target.density(x));
    let mspec = smoothing::smoothing_spec(spec, &smoothed).stage("mixture")?;
    let mixture_budget = T::lit(0.75) * epsilon;

    let mut best_error = T::infinity();
    let mut m = 1usize;
    while m <= opts.m_cap {
        let mseed = seed::derive(opts.seed, &[m as u64]);
        let mut candidates = vec![mixture::maurey_sample(&smoothed, m, mseed).stage("mixture")?];
        if d == 1 {
            let dom = target
                .support_hint()
                .cloned()
                .unwrap_or_else(|| spec.effective_domain());
            let shifts = quantile_shifts(target, &dom, m);
            candidates.push(MixtureModel::uniform(shifts, sigma, parent.clone()).stage("mixture")?);
        }
        if m <= opts.refit_up_to {
            let mut extra = Vec::new();
            for c in &candidates {
                let greedy = GreedyOptions {
                    iterations: opts.greedy_iterations,
                    seed: mseed,
                    ..GreedyOptions::default()
                };
                let refined = mixture::greedy_refine_with(target, c, &mspec, &greedy)
                    .stage("mixture")?
                    .mixture;
                let rows = mixture::component_rows(&refined.shifts(), sigma, parent, &sup_nodes).stage("mixture")?;
                let (w, _) = mixture::fit_weights_sup(&rows, &f_vals, 30).stage("mixture")?;
                extra.push(refined.reweighted(w).stage("mixture")?);
            }
            candidates.extend(extra);
        }
        let scored = candidates
            .into_iter()
            .map(|c| metrics::sup_distance(target, &c, spec).map(|e| (c, e)))
            .collect::<Result<Vec<_>>>()
            .stage("mixture")?;
        let (mix, mix_err) = scored
            .into_iter()
            .reduce(|a, b| if b.1.value < a.1.value { b } else { a })
            .expect("at least one candidate");
        best_error = best_error.min(mix_err.value);
        if mix_err.value <= mixture_budget {
            let tol = epsilon / T::lit(4.0) / (T::from_usize_lossy(m) * comp_norm);
            let rbm = rbm_stage(mix.weights(), tol).stage("rbm")?;
            let dbn = DeepBeliefNetwork::assemble(&mix, rbm.rbm).stage("assembly")?;
            let measured = metrics::sup_distance(target, &dbn, spec).stage("measurement")?;
            best_error = best_error.min(measured.value);
            if measured.value <= epsilon {
                let cert = ApproximationCertificate {
                    q: T::infinity(),
                    epsilon,
                    m,
                    sigma,
                    measured_error: measured.value,
                    smoothing_error: smooth_err.value,
                    mixture_error: mix_err.value,
                    rbm_tv: rbm.tv,
                    rbm_term: rbm.l1 * comp_norm,
                    deficiency: dbn.deficiency(),
                    deficiency_term: dbn.deficiency() * comp_norm,
                    quadrature_error: measured.error_estimate + mix_err.error_estimate,
                    paper_bound: epsilon,
                    corrected_bound: epsilon,
                };
                return Ok((dbn, cert));
            }
        }
        m *= 2;
    }
    Err(Error::Convergence {
        stage: "approximate_sup".into(),
        detail: format!("m cap {} reached", opts.m_cap),
        best: best_error.as_f64(),
    }
    .in_stage("mixture"))
}

#[derive(Debug, Clone)]
pub struct KlOptions<T> {
    pub sigma_grid: SigmaGrid<T>,
    /// Largest candidate dictionary for the representation stage.
    pub max_candidates: usize,
    /// Representation accepted once `‖f − g‖²_{L²(Ω)}` is at most this.
    pub representation_tolerance: T,
    pub m_cap: usize,
    /// Draws tried per `m` before giving up on the `η/2` floor.
    pub redraws: usize,
    /// RBM tolerance is this divided by `m`.
    pub rbm_tolerance: T,
}

impl<T: Real> Default for KlOptions<T> {
    fn default() -> Self {
        Self {
            sigma_grid: SigmaGrid {
                sigma0: T::one(),
                ratio: T::lit(0.5),
                k_max: 8,
            },
            max_candidates: 512,
            representation_tolerance: T::lit(1e-4),
            m_cap: 1024,
            redraws: 64,
            rbm_tolerance: T::lit(1e-4),
        }
    }
}

/// Precomputed stages of the KL pipeline on a compact `Ω`.
#[derive(Debug, Clone)]
pub struct KlPipeline<T> {
    target: TargetDensity<T>,
    parent: ParentalDensity<T>,
    omega: BoxDomain<T>,
    eta: T,
    spec: QuadratureSpec<T>,
    opts: KlOptions<T>,
    /// Scale of the representation.
    pub sigma: T,
    /// Dictionary atoms and their simplex weights.
    pub atoms: Vec<Vec<T>>,
    pub atom_weights: Vec<T>,
    pub representation_l2_squared: T,
    pub representation_sup: T,
    /// Smallest power of two whose truncated representation is within
    /// `η/2` of `f` in sup norm on `Ω`.
    pub big_m: usize,
    pub truncation_sup: T,
    /// `‖φ‖²_{L²}`.
    pub phi_l2_squared: T,
    /// `‖f − φ‖²_{L²(Ω)}`.
    pub f_minus_phi_l2_squared: T,
}

#[derive(Debug, Clone)]
pub struct KlApproximation<T> {
    pub dbn: DeepBeliefNetwork<T>,
    pub m: usize,
    pub kl: DistanceReport<T>,
    /// `(M/(η m))(8‖φ‖² + ‖f − φ‖²_{L²(Ω)})`.
    pub paper_bound: T,
    /// `‖f − p‖²_{L²(Ω)}`.
    pub l2_squared: T,
    /// `‖f − p‖²_{L²(Ω)} / (η/2)`.
    pub lemma_bound: T,
    /// Smallest value of `p` on the check grid.
    pub min_density: T,
    /// Draws used to reach the `η/2` floor.
    pub attempts: usize,
    /// The network is the crude `p = φ` choice because no draw reached the
    /// floor at `m < M`.
    pub fallback: bool,
}

fn dyadic_candidates<T: Real>(lo: T, hi: T, max: usize) -> Vec<T> {
    // finest power-of-two spacing with at most `max` points in [lo, hi]
    let mut h = T::one();
    let count = |h: T| ((hi / h).floor() - (lo / h).ceil()).to_usize().map_or(0, |c| c + 1);
    while count(h) > max {
        h *= T::lit(2.0);
    }
    while count(h * T::lit(0.5)) <= max && h > T::lit(1e-9) {
        h *= T::lit(0.5);
    }
    let start = (lo / h).ceil();
    (0..count(h)).map(|i| (start + T::from_usize_lossy(i)) * h).collect()
}

impl<T: Real> KlPipeline<T> {
    /// Checks the floors, fits the dictionary representation and finds `M`.
    pub fn prepare(
        target: &TargetDensity<T>,
        parent: &ParentalDensity<T>,
        omega: &BoxDomain<T>,
        eta: T,
        spec: &QuadratureSpec<T>,
        opts: KlOptions<T>,
    ) -> Result<Self> {
        if !(eta > T::zero()) {
            return Err(Error::InvalidArgument("η must be positive".into()));
        }
        let d = omega.dim();
        if d != target.dim() || d != parent.dim() {
            return Err(Error::Dimension("Ω, target and parent differ in dimension".into()));
        }
        let spec = spec.with_domain(omega.clone());
        let check = metrics::sup_grid(&spec, &merged_breakpoints(&[target, parent], d))?;
        for (name, f) in [
            ("target", target as &dyn Density<T>),
            ("parent", parent as &dyn Density<T>),
        ] {
            if let Some(x) = metrics::floor_violation(&check, eta, |x| f.density(x)) {
                return Err(Error::Precondition {
                    location: format!("{x:?}"),
                    detail: format!("{name} value {} below η = {eta}", f.density(&x)),
                });
            }
        }

        let phi2 = parent_norm(parent, T::lit(2.0), &spec)?;
        let fphi = metrics::lq_distance(target, parent, T::lit(2.0), &spec)?.value;

        // representation f ≈ Σ β_j φ_{μ_j,σ} on Ω
        let per_axis = ((opts.max_candidates as f64).powf(1.0 / d as f64).floor() as usize).max(2);
        let mut rep = None;
        let mut best = T::infinity();
        for k in 0..=opts.sigma_grid.k_max {
            let sigma = opts.sigma_grid.value(k);
            let reach = parent.support().unwrap_or_else(|| {
                BoxDomain::cube(
                    d,
                    -T::lit(crate::densities::GAUSSIAN_SUPPORT_RADIUS),
                    T::lit(crate::densities::GAUSSIAN_SUPPORT_RADIUS),
                )
                .expect("valid cube")
            });
            let axes: Vec<Vec<T>> = (0..d)
                .map(|a| {
                    // shifts whose component meets Ω
                    let lo = omega.lo()[a] - sigma * reach.hi()[a];
                    let hi = omega.hi()[a] - sigma * reach.lo()[a];
                    dyadic_candidates(lo, hi, per_axis)
                })
                .collect();
            let atoms = cartesian(&axes);
            let probe: Vec<ShiftedScaled<T>> = atoms
                .iter()
                .map(|mu| ShiftedScaled::new(parent.clone(), mu.clone(), sigma))
                .collect::<Result<_>>()?;
            let mut bps = merged_breakpoints(&[target], d);
            for (a, axis) in bps.iter_mut().enumerate() {
                axis.extend(probe.iter().flat_map(|c| c.breakpoints(a)));
            }
            let nodes = NodeSet::from_spec(&spec, &bps)?;
            let f_vals = nodes.eval(|x| target.density(x));
            let rows = mixture::component_rows(&atoms, sigma, parent, &nodes)?;
            let beta = mixture::fit_weights_l2(&rows, &f_vals, &nodes.weights)?;
            let g = MixtureModel::new(beta.clone(), atoms.clone(), sigma, parent.clone())?;
            let l2 = metrics::lq_distance(target, &g, T::lit(2.0), &spec)?.value;
            let sup = metrics::sup_distance(target, &g, &spec)?.value;
            let l2sq = l2 * l2;
            best = best.min(l2sq);
            if l2sq <= opts.representation_tolerance && sup <= eta / T::lit(4.0) {
                rep = Some((sigma, atoms, beta, l2sq, sup));
                break;
            }
        }
        let (sigma, atoms, beta, l2sq, sup) = rep.ok_or(Error::Convergence {
            stage: "kl representation".into(),
            detail: "no σ on the grid represents f on Ω".into(),
            best: best.as_f64(),
        })?;
        // keep atoms with mass
        let keep: Vec<usize> = (0..atoms.len()).filter(|&i| beta[i] > T::zero()).collect();
        let atoms: Vec<Vec<T>> = keep.iter().map(|&i| atoms[i].clone()).collect();
        let beta: Vec<T> = keep.iter().map(|&i| beta[i]).collect();

        // M from the top-weight truncations, weights refitted for sup norm
        let sup_g = metrics::sup_grid(&spec, &merged_breakpoints(&[target], d))?;
        let sup_nodes = NodeSet {
            points: sup_g.points(),
            weights: sup_g.weights(),
        };
        let f_sup = sup_nodes.eval(|x| target.density(x));
        let mut order: Vec<usize> = (0..atoms.len()).collect();
        order.sort_by(|&a, &b| beta[b].partial_cmp(&beta[a]).expect("finite weights").then(a.cmp(&b)));
        let mut big_m = 1usize;
        let truncation_sup = loop {
            let top: Vec<Vec<T>> = order.iter().take(big_m).map(|&i| atoms[i].clone()).collect();
            let rows = mixture::component_rows(&top, sigma, parent, &sup_nodes)?;
            let (w, _) = mixture::fit_weights_sup(&rows, &f_sup, 30)?;
            let p = MixtureModel::new(w, top, sigma, parent.clone())?;
            let s = metrics::sup_distance(target, &p, &spec)?.value;
            if s <= eta / T::lit(2.0) {
                break s;
            }
            if big_m >= atoms.len() || big_m >= opts.m_cap {
                return Err(Error::Convergence {
                    stage: "kl floor".into(),
                    detail: format!("η/2 sup floor unattainable within {} components", big_m),
                    best: s.as_f64(),
                });
            }
            big_m = (big_m * 2).min(atoms.len()).min(opts.m_cap);
        };

        Ok(Self {
            target: target.clone(),
            parent: parent.clone(),
            omega: omega.clone(),
            eta,
            spec,
            opts,
            sigma,
            atoms,
            atom_weights: beta,
            representation_l2_squared: l2sq,
            representation_sup: sup,
            big_m,
            truncation_sup,
            phi_l2_squared: phi2 * phi2,
            f_minus_phi_l2_squared: fphi * fphi,
        })
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    pub fn omega(&self) -> &BoxDomain<T> {
        &self.omega
    }

    /// `(M/(η m))(8‖φ‖² + ‖f − φ‖²_{L²(Ω)})`.
    pub fn paper_bound(&self, m: usize) -> T {
        T::from_usize_lossy(self.big_m) / (self.eta * T::from_usize_lossy(m))
            * (T::lit(8.0) * self.phi_l2_squared + self.f_minus_phi_l2_squared)
    }

    /// `m` atoms drawn from the representation weights, redrawn until the
    /// network stays above `η/2` on `Ω`.
    pub fn approximate(&self, m: usize, seed: u64) -> Result<KlApproximation<T>> {
        if m == 0 {
            return Err(Error::InvalidArgument("m must be at least 1".into()));
        }
        let d = self.omega.dim();
        let alpha = vec![T::from_usize_lossy(m).recip(); m];
        let rbm = rbm_stage(&alpha, self.opts.rbm_tolerance / T::from_usize_lossy(m)).stage("rbm")?;
        let floor = self.eta / T::lit(2.0);
        let min_on_grid = |dbn: &DeepBeliefNetwork<T>| -> Result<T> {
            let bps = merged_breakpoints(&[&self.target, dbn], d);
            let g = metrics::sup_grid(&self.spec, &bps)?;
            Ok(g.sample(|x| dbn.eval_visible(x))
                .into_iter()
                .fold(T::infinity(), T::min))
        };
        let mut chosen = None;
        for attempt in 0..self.opts.redraws {
            let s = seed::derive(seed, &[m as u64, attempt as u64]);
            let mix = mixture::resample_atoms(&self.atoms, &self.atom_weights, m, self.sigma, &self.parent, s)
                .stage("mixture")?;
            let dbn = DeepBeliefNetwork::assemble(&mix, rbm.rbm.clone()).stage("assembly")?;
            let low = min_on_grid(&dbn)?;
            if low >= floor {
                chosen = Some((dbn, low, attempt + 1, false));
                break;
            }
        }
        let (dbn, low, attempts, fallback) = match chosen {
            Some(c) => c,
            None if m < self.big_m => {
                // every component is φ itself
                let shifts = vec![vec![T::zero(); d]; m];
                let dbn = DeepBeliefNetwork::from_parts(rbm.rbm.clone(), self.parent.clone(), T::one(), shifts)?;
                let low = min_on_grid(&dbn)?;
                (dbn, low, self.opts.redraws, true)
            }
            None => {
                return Err(Error::Convergence {
                    stage: "kl floor".into(),
                    detail: format!("no draw at m = {m} stays above η/2 after {} tries", self.opts.redraws),
                    best: f64::NAN,
                })
            }
        };
        let kl = metrics::kl_divergence(&self.target, &dbn, &self.omega, &self.spec)?;
        let l2 = metrics::lq_distance(&self.target, &dbn, T::lit(2.0), &self.spec)?.value;
        Ok(KlApproximation {
            m,
            kl,
            paper_bound: self.paper_bound(m),
            l2_squared: l2 * l2,
            lemma_bound: l2 * l2 / floor,
            min_density: low,
            attempts,
            fallback,
            dbn,
        })
    }
}

fn cartesian<T: Real>(axes: &[Vec<T>]) -> Vec<Vec<T>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect()
    })
}

/// One-call form of [`KlPipeline`].
pub fn approximate_kl<T: Real>(
    target: &TargetDensity<T>,
    parent: &ParentalDensity<T>,
    omega: &BoxDomain<T>,
    eta: T,
    m: usize,
    seed: u64,
    spec: &QuadratureSpec<T>,
) -> Result<KlApproximation<T>> {
    KlPipeline::prepare(target, parent, omega, eta, spec, KlOptions::default())?.approximate(m, seed)
}
