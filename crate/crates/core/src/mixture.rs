//! Finite mixtures `Σ α_i φ_{μ_i,σ}` and their construction: i.i.d. shift
//! sampling, greedy refinement, weight fitting and empirical rate fits.

use rand::RngCore;
use rayon::prelude::*;

use crate::densities::{pick_index, Density, ParentalDensity, ShiftedScaled};
use crate::error::{Error, Result};
use crate::linalg::{simplex_least_squares, Matrix};
use crate::metrics::merged_breakpoints;
use crate::quadrature::{BoxDomain, QuadratureSpec};
use crate::scalar::{pairwise_sum, Real};
use crate::seed;
use crate::smoothing::{smoothing_spec, SmoothedDensity};
use crate::stats;

/// Element of the truncated convex hull `cv_m(𝒱_φ^σ)`.
#[derive(Debug, Clone)]
pub struct MixtureModel<T> {
    weights: Vec<T>,
    components: Vec<ShiftedScaled<T>>,
    sigma: T,
    parent: ParentalDensity<T>,
}

impl<T: Real> MixtureModel<T> {
    pub fn new(weights: Vec<T>, shifts: Vec<Vec<T>>, sigma: T, parent: ParentalDensity<T>) -> Result<Self> {
        if weights.is_empty() || weights.len() != shifts.len() {
            return Err(Error::Dimension(format!(
                "{} weights for {} shifts",
                weights.len(),
                shifts.len()
            )));
        }
        if weights.iter().any(|&w| !(w >= T::zero()) || !w.is_finite()) {
            return Err(Error::InvalidArgument("mixture weights must be nonnegative".into()));
        }
        let total = pairwise_sum(&weights);
        let tol = T::lit(1e-12).max(T::epsilon() * T::lit(64.0));
        if (total - T::one()).abs() > tol {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {total}")));
        }
        let components = shifts
            .into_iter()
            .map(|mu| ShiftedScaled::new(parent.clone(), mu, sigma))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            weights,
            components,
            sigma,
            parent,
        })
    }

    /// Equal weights `1/m`.
    pub fn uniform(shifts: Vec<Vec<T>>, sigma: T, parent: ParentalDensity<T>) -> Result<Self> {
        let m = T::from_usize_lossy(shifts.len().max(1));
        Self::new(vec![m.recip(); shifts.len()], shifts, sigma, parent)
    }

    pub fn m(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn shift(&self, i: usize) -> &[T] {
        self.components[i].shift()
    }

    pub fn shifts(&self) -> Vec<Vec<T>> {
        self.components.iter().map(|c| c.shift().to_vec()).collect()
    }

    pub fn component(&self, i: usize) -> &ShiftedScaled<T> {
        &self.components[i]
    }

    pub fn components(&self) -> &[ShiftedScaled<T>] {
        &self.components
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn parent(&self) -> &ParentalDensity<T> {
        &self.parent
    }

    /// Same shifts with new weights.
    pub fn reweighted(&self, weights: Vec<T>) -> Result<Self> {
        Self::new(weights, self.shifts(), self.sigma, self.parent.clone())
    }

    /// Drops zero-weight components.
    pub fn pruned(&self) -> Result<Self> {
        let (w, s): (Vec<T>, Vec<Vec<T>>) = self
            .weights
            .iter()
            .zip(self.shifts())
            .filter(|(&w, _)| w > T::zero())
            .map(|(&w, s)| (w, s))
            .unzip();
        Self::new(w, s, self.sigma, self.parent.clone())
    }
}

impl<T: Real> Density<T> for MixtureModel<T> {
    fn dim(&self) -> usize {
        self.parent.dim()
    }

    fn density(&self, x: &[T]) -> T {
        let mut scratch = [T::zero(); crate::densities::DEFAULT_MAX_DIM];
        let s = &mut scratch[..x.len().min(crate::densities::DEFAULT_MAX_DIM)];
        self.weights
            .iter()
            .zip(&self.components)
            .fold(T::zero(), |acc, (&w, c)| {
                if w > T::zero() {
                    acc + w * c.density_with(x, s)
                } else {
                    acc
                }
            })
    }

    fn support(&self) -> Option<BoxDomain<T>> {
        self.components
            .iter()
            .filter_map(|c| c.support())
            .reduce(|a, b| a.union(&b))
    }

    fn breakpoints(&self, axis: usize) -> Vec<T> {
        self.components.iter().flat_map(|c| c.breakpoints(axis)).collect()
    }

    fn can_sample(&self) -> bool {
        self.parent.can_sample()
    }

    fn draw(&self, rng: &mut dyn RngCore, out: &mut [T]) -> Result<()> {
        let i = pick_index(rng, &self.weights);
        self.components[i].draw(rng, out)
    }
}

/// Quadrature nodes and weights held in memory, for repeated error
/// evaluations against a fixed reference.
#[derive(Debug, Clone)]
pub struct NodeSet<T> {
    pub points: Vec<Vec<T>>,
    pub weights: Vec<T>,
}

impl<T: Real> NodeSet<T> {
    pub fn from_spec(spec: &QuadratureSpec<T>, breakpoints: &[Vec<T>]) -> Result<Self> {
        let grid = spec.grid(breakpoints)?;
        Ok(Self {
            points: grid.points(),
            weights: grid.weights(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Values of `f` at every node.
    pub fn eval<F>(&self, f: F) -> Vec<T>
    where
        F: Fn(&[T]) -> T + Sync,
    {
        self.points.par_iter().with_min_len(256).map(|x| f(x)).collect()
    }

    /// `(Σ w |a − b|^q)^{1/q}`.
    pub fn lq_distance(&self, a: &[T], b: &[T], q: T) -> T {
        let terms: Vec<T> = self
            .weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(&w, (&x, &y))| w * (x - y).abs().powf(q))
            .collect();
        pairwise_sum(&terms).max(T::zero()).powf(q.recip())
    }

    /// `max |a − b|` over the nodes.
    pub fn sup_distance(&self, a: &[T], b: &[T]) -> T {
        a.iter().zip(b).fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
    }

    /// `Σ w a b`.
    pub fn inner(&self, a: &[T], b: &[T]) -> T {
        let terms: Vec<T> = self
            .weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(&w, (&x, &y))| w * x * y)
            .collect();
        pairwise_sum(&terms)
    }
}

/// Mixture density at every node.
pub fn mixture_values<T: Real>(mixture: &MixtureModel<T>, nodes: &NodeSet<T>) -> Vec<T> {
    nodes.eval(|x| mixture.density(x))
}

/// Shifts drawn i.i.d. from the target with equal weights `1/m`: an
/// empirical version of `f ⋆ φ_σ = ∫ f(μ) φ_{μ,σ} dμ`.
pub fn maurey_sample<T: Real>(smoothed: &SmoothedDensity<T>, m: usize, seed: u64) -> Result<MixtureModel<T>> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    let shifts = smoothed.target().sample(seed, m)?;
    MixtureModel::uniform(shifts, smoothed.sigma(), smoothed.parent().clone())
}

/// Shifts drawn i.i.d. from a discrete law over `atoms`, equal weights.
pub fn resample_atoms<T: Real>(
    atoms: &[Vec<T>],
    probabilities: &[T],
    m: usize,
    sigma: T,
    parent: &ParentalDensity<T>,
    seed: u64,
) -> Result<MixtureModel<T>> {
    if m == 0 || atoms.is_empty() || atoms.len() != probabilities.len() {
        return Err(Error::InvalidArgument("need m ≥ 1 and one probability per atom".into()));
    }
    let mut rng = seed::rng(seed);
    let shifts = (0..m)
        .map(|_| atoms[pick_index(&mut rng, probabilities)].clone())
        .collect();
    MixtureModel::uniform(shifts, sigma, parent.clone())
}

/// Component values on the nodes, one row per shift.
pub fn component_rows<T: Real>(
    shifts: &[Vec<T>],
    sigma: T,
    parent: &ParentalDensity<T>,
    nodes: &NodeSet<T>,
) -> Result<Vec<Vec<T>>> {
    shifts
        .par_iter()
        .map(|mu| {
            let c = ShiftedScaled::new(parent.clone(), mu.clone(), sigma)?;
            let mut s = vec![T::zero(); mu.len()];
            Ok(nodes.points.iter().map(|x| c.density_with(x, &mut s)).collect())
        })
        .collect()
}

/// Simplex weights minimising `‖Σ α_i row_i − target‖²` in the node
/// inner product scaled by `node_weights`.
pub fn fit_weights_l2<T: Real>(rows: &[Vec<T>], target: &[T], node_weights: &[T]) -> Result<Vec<T>> {
    let n = rows.len();
    let wr: Vec<Vec<T>> = rows
        .iter()
        .map(|r| r.iter().zip(node_weights).map(|(&a, &w)| a * w).collect())
        .collect();
    let dot = |a: &[T], b: &[T]| pairwise_sum(&a.iter().zip(b).map(|(&x, &y)| x * y).collect::<Vec<T>>());
    let gram_entries: Vec<T> = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / n, k % n);
            if j < i {
                T::zero()
            } else {
                dot(&wr[i], &rows[j])
            }
        })
        .collect();
    let g = Matrix::from_fn(n, |i, j| {
        if j >= i {
            gram_entries[i * n + j]
        } else {
            gram_entries[j * n + i]
        }
    });
    let b: Vec<T> = wr.iter().map(|r| dot(r, target)).collect();
    simplex_least_squares(&g, &b)
}

/// Simplex weights approximately minimising `max |Σ α_i row_i − target|`
/// by Lawson's iteratively reweighted least squares. Returns the weights
/// and the achieved sup error.
pub fn fit_weights_sup<T: Real>(rows: &[Vec<T>], target: &[T], iterations: usize) -> Result<(Vec<T>, T)> {
    let n_nodes = target.len();
    let mut u = vec![T::from_usize_lossy(n_nodes).recip(); n_nodes];
    let mut best: Option<(Vec<T>, T)> = None;
    for _ in 0..iterations.max(1) {
        let alpha = fit_weights_l2(rows, target, &u)?;
        let resid: Vec<T> = (0..n_nodes)
            .map(|j| rows.iter().zip(&alpha).fold(T::zero(), |a, (r, &w)| a + w * r[j]) - target[j])
            .collect();
        let sup = resid.iter().fold(T::zero(), |m, r| m.max(r.abs()));
        if best.as_ref().is_none_or(|b| sup < b.1) {
            best = Some((alpha, sup));
        }
        let mut next: Vec<T> = u.iter().zip(&resid).map(|(&w, r)| w * r.abs()).collect();
        let s = pairwise_sum(&next);
        if !(s > T::zero()) {
            break;
        }
        for v in next.iter_mut() {
            *v /= s;
        }
        u = next;
    }
    Ok(best.expect("at least one iteration"))
}

/// Options for [`greedy_refine_with`].
#[derive(Debug, Clone)]
pub struct GreedyOptions {
    pub iterations: usize,
    pub pool_size: usize,
    /// Golden-section polish of the shifts after the swap phase; applied
    /// when `m` does not exceed this many components.
    pub polish_up_to: usize,
    pub seed: u64,
}

impl Default for GreedyOptions {
    fn default() -> Self {
        Self {
            iterations: 50,
            pool_size: 512,
            polish_up_to: 16,
            seed: 0,
        }
    }
}

/// Output of a greedy pass: the mixture and its L² error after every
/// iteration (index 0 is the initial mixture).
#[derive(Debug, Clone)]
pub struct Refinement<T> {
    pub mixture: MixtureModel<T>,
    pub errors: Vec<T>,
}

struct GreedyState<T> {
    shifts: Vec<Vec<T>>,
    rows: Vec<Vec<T>>,
    weights: Vec<T>,
    values: Vec<T>,
    error: T,
}

/// Deterministic improvement of `initial` against `reference` in L² over
/// the spec's box, holding `m` fixed.
pub fn greedy_refine<T: Real>(
    reference: &dyn Density<T>,
    initial: &MixtureModel<T>,
    iterations: usize,
    spec: &QuadratureSpec<T>,
) -> Result<Refinement<T>> {
    greedy_refine_with(
        reference,
        initial,
        spec,
        &GreedyOptions {
            iterations,
            ..GreedyOptions::default()
        },
    )
}

/// Frank-Wolfe style swaps: the pool candidate best correlated with the
/// residual replaces the lowest-weight component, weights are refitted on
/// the simplex and the swap is kept only if the error drops.
pub fn greedy_refine_with<T: Real>(
    reference: &dyn Density<T>,
    initial: &MixtureModel<T>,
    spec: &QuadratureSpec<T>,
    opts: &GreedyOptions,
) -> Result<Refinement<T>> {
    let two = T::lit(2.0);
    if opts.iterations == 0 {
        let bps = merged_breakpoints(&[reference], reference.dim());
        let nodes = NodeSet::from_spec(spec, &bps)?;
        let r = nodes.eval(|x| reference.density(x));
        let e = nodes.lq_distance(&r, &mixture_values(initial, &nodes), two);
        return Ok(Refinement {
            mixture: initial.clone(),
            errors: vec![e],
        });
    }
    let sigma = initial.sigma();
    let parent = initial.parent().clone();
    let bps = merged_breakpoints(&[reference], reference.dim());
    let nodes = NodeSet::from_spec(spec, &bps)?;
    let r = nodes.eval(|x| reference.density(x));

    let shifts = initial.shifts();
    let rows = component_rows(&shifts, sigma, &parent, &nodes)?;
    let values = combine(&rows, initial.weights(), nodes.len());
    let mut state = GreedyState {
        error: nodes.lq_distance(&r, &values, two),
        shifts,
        rows,
        weights: initial.weights().to_vec(),
        values,
    };
    let mut errors = vec![state.error];
    let accept = |state: &mut GreedyState<T>, cand: GreedyState<T>| -> bool {
        if cand.error < state.error {
            *state = cand;
            true
        } else {
            false
        }
    };

    // weight refit on the initial shifts
    let refit = refit_state(state.shifts.clone(), state.rows.clone(), &r, &nodes)?;
    accept(&mut state, refit);

    let pool = candidate_pool(reference, spec, opts.pool_size, opts.seed)?;
    let pool_rows = component_rows(&pool, sigma, &parent, &nodes)?;
    let mut tried = vec![false; pool.len()];

    for _ in 0..opts.iterations {
        let resid: Vec<T> = r.iter().zip(&state.values).map(|(&a, &b)| a - b).collect();
        let best = pool_rows
            .par_iter()
            .enumerate()
            .filter(|(c, _)| !tried[*c])
            .map(|(c, row)| (c, nodes.inner(row, &resid)))
            .reduce_with(|a, b| if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a });
        let Some((c, _)) = best else {
            errors.push(state.error);
            continue;
        };
        tried[c] = true;
        let mut order: Vec<usize> = (0..state.weights.len()).collect();
        order.sort_by(|&a, &b| state.weights[a].partial_cmp(&state.weights[b]).expect("finite weights"));
        let mut improved = false;
        for &j in order.iter().take(SWAP_SLOTS) {
            let mut shifts = state.shifts.clone();
            let mut rows = state.rows.clone();
            shifts[j] = pool[c].clone();
            rows[j] = pool_rows[c].clone();
            let cand = refit_state(shifts, rows, &r, &nodes)?;
            improved |= accept(&mut state, cand);
        }
        if improved {
            tried.iter_mut().for_each(|t| *t = false);
        }
        errors.push(state.error);
    }

    if state.shifts.len() <= opts.polish_up_to {
        // brackets of one σ around each coordinate, at least a pool cell wide
        let spacing: Vec<T> = pool_spacing(spec, opts.pool_size)
            .into_iter()
            .map(|h| h.max(sigma))
            .collect();
        for _sweep in 0..POLISH_SWEEPS {
            let before = state.error;
            for i in 0..state.shifts.len() {
                for (k, &step) in spacing.iter().enumerate() {
                    if let Some(cand) = polish_coordinate(&state, i, k, step, sigma, &parent, &r, &nodes)? {
                        accept(&mut state, cand);
                    }
                }
            }
            *errors.last_mut().expect("nonempty") = state.error;
            if !(state.error < before * (T::one() - T::lit(1e-6))) {
                break;
            }
        }
    }

    let mixture = MixtureModel::new(state.weights, state.shifts, sigma, parent)?;
    Ok(Refinement { mixture, errors })
}

const POLISH_SWEEPS: usize = 10;

/// Lowest-weight components tried as the slot for each candidate.
const SWAP_SLOTS: usize = 4;

fn combine<T: Real>(rows: &[Vec<T>], weights: &[T], n: usize) -> Vec<T> {
    (0..n)
        .map(|j| rows.iter().zip(weights).fold(T::zero(), |a, (r, &w)| a + w * r[j]))
        .collect()
}

fn refit_state<T: Real>(shifts: Vec<Vec<T>>, rows: Vec<Vec<T>>, r: &[T], nodes: &NodeSet<T>) -> Result<GreedyState<T>> {
    let weights = fit_weights_l2(&rows, r, &nodes.weights)?;
    let values = combine(&rows, &weights, nodes.len());
    let error = nodes.lq_distance(r, &values, T::lit(2.0));
    Ok(GreedyState {
        shifts,
        rows,
        weights,
        values,
        error,
    })
}

#[allow(clippy::too_many_arguments)]
fn polish_coordinate<T: Real>(
    state: &GreedyState<T>,
    i: usize,
    k: usize,
    h: T,
    sigma: T,
    parent: &ParentalDensity<T>,
    r: &[T],
    nodes: &NodeSet<T>,
) -> Result<Option<GreedyState<T>>> {
    let eval = |v: T| -> Result<GreedyState<T>> {
        let mut shifts = state.shifts.clone();
        shifts[i][k] = v;
        let mut rows = state.rows.clone();
        rows[i] = component_rows(&shifts[i..=i], sigma, parent, nodes)?.remove(0);
        refit_state(shifts, rows, r, nodes)
    };
    let centre = state.shifts[i][k];
    let (mut a, mut b) = (centre - h, centre + h);
    let g = T::lit(0.618_033_988_749_894_8);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    for _ in 0..40 {
        if fc.error < fd.error {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = eval(d)?;
        }
        if (b - a).abs() <= h * T::lit(1e-10) {
            break;
        }
    }
    let best = if fc.error < fd.error { fc } else { fd };
    Ok((best.error < state.error).then_some(best))
}

fn pool_spacing<T: Real>(spec: &QuadratureSpec<T>, pool_size: usize) -> Vec<T> {
    let dom = spec.effective_domain();
    let per_axis = grid_points_per_axis(pool_size / 2, dom.dim());
    (0..dom.dim())
        .map(|k| dom.width(k) / T::from_usize_lossy(per_axis))
        .collect()
}

fn grid_points_per_axis(budget: usize, dim: usize) -> usize {
    let mut n = 1usize;
    while (n + 1).pow(dim as u32) <= budget.max(1) {
        n += 1;
    }
    n
}

/// Half the pool drawn from the reference, half on a uniform grid over the
/// spec's box.
fn candidate_pool<T: Real>(
    reference: &dyn Density<T>,
    spec: &QuadratureSpec<T>,
    size: usize,
    seed: u64,
) -> Result<Vec<Vec<T>>> {
    let dom = spec.effective_domain();
    let d = dom.dim();
    let drawn = if reference.can_sample() { size / 2 } else { 0 };
    let mut pool = if drawn > 0 {
        reference.sample(seed::derive(seed, &[0x9001]), drawn)?
    } else {
        Vec::new()
    };
    let per_axis = grid_points_per_axis(size - drawn, d);
    let total = per_axis.pow(d as u32);
    for idx in 0..total {
        let mut rem = idx;
        let mut x = vec![T::zero(); d];
        for k in (0..d).rev() {
            let i = rem % per_axis;
            rem /= per_axis;
            x[k] = dom.lo()[k] + dom.width(k) * (T::from_usize_lossy(i) + T::lit(0.5)) / T::from_usize_lossy(per_axis);
        }
        pool.push(x);
    }
    Ok(pool)
}

/// One `(m, trial)` job of a rate experiment.
#[derive(Debug, Clone)]
pub struct TrialOutcome<T> {
    pub m: usize,
    pub trial: usize,
    pub seed: u64,
    pub error: std::result::Result<T, String>,
}

/// Empirical convergence-rate fit.
#[derive(Debug, Clone)]
pub struct RateFit<T> {
    pub q: T,
    pub m_values: Vec<usize>,
    pub mean_errors: Vec<T>,
    pub slope: T,
    pub slope_ci: (T, T),
    pub xi_estimate: T,
    pub upsilon: T,
    pub trials: Vec<TrialOutcome<T>>,
    pub failures: Vec<usize>,
}

impl<T: Real> RateFit<T> {
    /// Exponent `1 − 1/min(q, 2)`.
    pub fn theory_exponent(&self) -> T {
        rate_exponent(self.q)
    }

    /// `Υ_q ξ m^{-(1 − 1/min(q,2))}` at index `i`.
    pub fn bound(&self, i: usize) -> T {
        self.upsilon * self.xi_estimate * T::from_usize_lossy(self.m_values[i]).powf(-self.theory_exponent())
    }
}

pub fn rate_exponent<T: Real>(q: T) -> T {
    T::one() - q.min(T::lit(2.0)).recip()
}

/// Bootstrap resamples used for the slope interval.
pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Largest sampled `‖f ⋆ φ_σ − φ_{μ,σ}‖_q` over at most 256 shifts drawn
/// from the target.
pub fn xi_estimate<T: Real>(
    smoothed: &SmoothedDensity<T>,
    q: T,
    nodes: &NodeSet<T>,
    reference: &[T],
    seed: u64,
) -> Result<T> {
    let shifts = smoothed.target().sample(seed, 256)?;
    let rows = component_rows(&shifts, smoothed.sigma(), smoothed.parent(), nodes)?;
    Ok(rows
        .iter()
        .map(|row| nodes.lq_distance(reference, row, q))
        .fold(T::zero(), T::max))
}

/// Runs `maurey_sample` for every `(m, trial)`, measures the L^q error to
/// the smoothed density and fits the log-log slope of the means.
pub fn fit_rate<T: Real>(
    smoothed: &SmoothedDensity<T>,
    q: T,
    m_values: &[usize],
    trials: usize,
    seed: u64,
    spec: &QuadratureSpec<T>,
) -> Result<RateFit<T>> {
    let mut distinct = m_values.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InvalidArgument("need at least three distinct m values".into()));
    }
    if trials < 10 {
        return Err(Error::InvalidArgument("need at least ten trials".into()));
    }
    if !(q >= T::one()) || !q.is_finite() {
        return Err(Error::InvalidArgument(format!("q = {q} must lie in [1, ∞)")));
    }
    let spec = smoothing_spec(spec, smoothed)?;
    let bps = merged_breakpoints(&[smoothed], smoothed.dim());
    let nodes = NodeSet::from_spec(&spec, &bps)?;
    let reference = nodes.eval(|x| smoothed.density(x));

    let jobs: Vec<(usize, usize)> = distinct
        .iter()
        .flat_map(|&m| (0..trials).map(move |t| (m, t)))
        .collect();
    let outcomes: Vec<TrialOutcome<T>> = jobs
        .par_iter()
        .map(|&(m, trial)| {
            let s = seed::derive(seed, &[m as u64, trial as u64]);
            let error = maurey_sample(smoothed, m, s)
                .map(|mix| {
                    let vals = component_rows(&mix.shifts(), mix.sigma(), mix.parent(), &nodes)
                        .map(|rows| combine(&rows, mix.weights(), nodes.len()));
                    vals.map(|v| nodes.lq_distance(&reference, &v, q))
                })
                .and_then(|r| r)
                .map_err(|e| e.to_string());
            TrialOutcome {
                m,
                trial,
                seed: s,
                error,
            }
        })
        .collect();

    let mut mean_errors = Vec::with_capacity(distinct.len());
    let mut groups = Vec::with_capacity(distinct.len());
    let mut failures = Vec::with_capacity(distinct.len());
    for &m in &distinct {
        let ok: Vec<T> = outcomes
            .iter()
            .filter(|o| o.m == m)
            .filter_map(|o| o.error.as_ref().ok().copied())
            .collect();
        failures.push(trials - ok.len());
        if ok.is_empty() {
            return Err(Error::Convergence {
                stage: "fit_rate".into(),
                detail: format!("every trial failed at m = {m}"),
                best: f64::NAN,
            });
        }
        mean_errors.push(stats::mean(&ok));
        groups.push(ok);
    }
    let ms: Vec<T> = distinct.iter().map(|&m| T::from_usize_lossy(m)).collect();
    let slope = stats::log_log_slope(&ms, &mean_errors)?;
    let slope_ci = stats::bootstrap_slope_ci(&ms, &groups, BOOTSTRAP_RESAMPLES, 0.95, seed::derive(seed, &[0xb007]))?;
    let xi = xi_estimate(smoothed, q, &nodes, &reference, seed::derive(seed, &[0x5e1]))?;
    Ok(RateFit {
        q,
        m_values: distinct,
        mean_errors,
        slope,
        slope_ci,
        xi_estimate: xi,
        upsilon: crate::densities::upsilon(q)?,
        trials: outcomes,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::TargetDensity;
    use crate::metrics;
    use crate::quadrature::Rule;
    use crate::smoothing::convolve;

    fn line(lo: f64, hi: f64, n: usize) -> QuadratureSpec<f64> {
        QuadratureSpec::new(BoxDomain::interval(lo, hi).unwrap(), Rule::GaussLegendreComposite, n).unwrap()
    }

    fn gaussian_setup(sigma: f64) -> SmoothedDensity<f64> {
        let f = TargetDensity::standard_normal(1).unwrap();
        convolve(&f, &ParentalDensity::gaussian(1).unwrap(), sigma).unwrap()
    }

    #[test]
    fn weights_are_validated() {
        let p = ParentalDensity::<f64>::gaussian(1).unwrap();
        assert!(MixtureModel::new(vec![0.5, 0.6], vec![vec![0.0], vec![1.0]], 1.0, p.clone()).is_err());
        assert!(MixtureModel::new(vec![1.0], vec![vec![0.0], vec![1.0]], 1.0, p.clone()).is_err());
        assert!(MixtureModel::new(vec![1.5, -0.5], vec![vec![0.0], vec![1.0]], 1.0, p).is_err());
    }

    #[test]
    fn single_draw_is_one_component() {
        let s = gaussian_setup(0.5);
        let mix = maurey_sample(&s, 1, 3).unwrap();
        let c = mix.component(0).clone();
        for x in [-1.0, 0.0, 2.0] {
            assert_eq!(mix.density(&[x]), c.density(&[x]));
        }
        assert_eq!(mix.weights(), &[1.0]);
    }

    #[test]
    fn mixture_integrates_to_one() {
        let s = gaussian_setup(0.3);
        let mix = maurey_sample(&s, 16, 1).unwrap();
        let mass = metrics::lq_norm(&mix, 1.0, &line(-16.0, 16.0, 400)).unwrap();
        assert!((mass.value - 1.0).abs() < 1e-6);
        assert!((mix.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn maurey_is_deterministic() {
        let s = gaussian_setup(0.3);
        assert_eq!(
            maurey_sample(&s, 8, 4).unwrap().shifts(),
            maurey_sample(&s, 8, 4).unwrap().shifts()
        );
    }

    #[test]
    fn maurey_error_halves_per_fourfold_m() {
        let s = gaussian_setup(0.1);
        let spec = smoothing_spec(&line(-12.0, 12.0, 100), &s).unwrap();
        let nodes = NodeSet::from_spec(&spec, &[]).unwrap();
        let r = nodes.eval(|x| s.density(x));
        let mean_sq = |m: usize| {
            (0..50)
                .map(|t| {
                    let mix = maurey_sample(&s, m, 1000 + t).unwrap();
                    nodes.lq_distance(&r, &mixture_values(&mix, &nodes), 2.0).powi(2)
                })
                .sum::<f64>()
                / 50.0
        };
        let ratio = mean_sq(64) / mean_sq(256);
        assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn zero_iterations_is_identity() {
        let s = gaussian_setup(0.5);
        let mix = maurey_sample(&s, 4, 2).unwrap();
        let out = greedy_refine(&s, &mix, 0, &line(-14.0, 14.0, 100)).unwrap();
        assert_eq!(out.mixture.shifts(), mix.shifts());
        assert_eq!(out.mixture.weights(), mix.weights());
    }

    #[test]
    fn greedy_is_monotone() {
        let s = gaussian_setup(0.3);
        let mix = maurey_sample(&s, 6, 9).unwrap();
        let out = greedy_refine(&s, &mix, 20, &line(-14.0, 14.0, 200)).unwrap();
        assert!(out.errors.windows(2).all(|w| w[1] <= w[0]));
        assert!(out.errors.last().unwrap() < &out.errors[0]);
        assert!((out.mixture.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn greedy_recovers_planted_components() {
        // (½N(-1, 0.3²) + ½N(1.5, 0.3²)) ⋆ φ_0.4 has components of scale 0.5
        let f = TargetDensity::gaussian_mixture(vec![0.5, 0.5], vec![vec![-1.0], vec![1.5]], vec![0.3, 0.3]).unwrap();
        let parent = ParentalDensity::gaussian(1).unwrap();
        let s = convolve(&f, &parent, 0.4).unwrap();
        let start = MixtureModel::uniform(vec![vec![0.0], vec![0.3]], 0.5, parent).unwrap();
        let spec = line(-8.0, 8.0, 200);
        let out = greedy_refine(&s, &start, 30, &spec).unwrap();
        let err = *out.errors.last().unwrap();
        assert!(err <= 1e-3, "error {err}");
        let check = metrics::lq_distance(&s, &out.mixture, 2.0, &spec).unwrap();
        assert!(check.value <= 1e-3);
    }

    #[test]
    fn sup_weight_fit_beats_uniform_weights() {
        let s = gaussian_setup(0.3);
        let spec = line(-6.0, 6.0, 100);
        let nodes = NodeSet::from_spec(&spec, &[]).unwrap();
        let r = nodes.eval(|x| s.density(x));
        let shifts: Vec<Vec<f64>> = (0..9).map(|i| vec![-2.0 + 0.5 * i as f64]).collect();
        let rows = component_rows(&shifts, 0.3, s.parent(), &nodes).unwrap();
        let (w, sup) = fit_weights_sup(&rows, &r, 30).unwrap();
        let uniform = nodes.sup_distance(&r, &combine(&rows, &[1.0 / 9.0; 9], nodes.len()));
        assert!(sup < uniform);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rate_fit_gaussian_q2() {
        let s = gaussian_setup(0.1);
        let fit = fit_rate(&s, 2.0, &[4, 16, 64], 12, 5, &line(-12.0, 12.0, 100)).unwrap();
        assert!(fit.slope < -0.3 && fit.slope > -0.7, "slope {}", fit.slope);
        assert!(fit.slope_ci.0 <= fit.slope_ci.1);
        // ξ ≤ 2 σ^{-d/2} ‖φ‖₂ × 1.1
        let phi2 = ParentalDensity::<f64>::gaussian(1)
            .unwrap()
            .lq_norm_closed_form(2.0)
            .unwrap();
        assert!(fit.xi_estimate <= 2.0 * 0.1f64.powf(-0.5) * phi2 * 1.1);
        assert!(fit.failures.iter().all(|&f| f == 0));
        for i in 0..fit.m_values.len() {
            assert!(fit.mean_errors[i] <= 3.0 * fit.bound(i));
        }
    }

    #[test]
    fn rate_fit_preconditions() {
        let s = gaussian_setup(0.1);
        assert!(fit_rate(&s, 2.0, &[4, 16], 12, 5, &line(-12.0, 12.0, 100)).is_err());
        assert!(fit_rate(&s, 2.0, &[4, 16, 64], 5, 5, &line(-12.0, 12.0, 100)).is_err());
    }
}
