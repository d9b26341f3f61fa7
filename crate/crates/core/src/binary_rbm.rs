//! Binary-binary restricted Boltzmann machines with exact marginals.
//!
//! Energy `H(v, h) = ⟨v, W h⟩ + ⟨v, b⟩ + ⟨h, c⟩`, law `π ∝ exp(−H)`. All
//! sums are carried out in log space.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, pairwise_sum, Real};
use crate::seed;

/// Default cap on `m + n` for exhaustive enumeration.
pub const ENUMERATION_CAP: usize = 24;

/// Sharpness schedule for synthesis.
pub const SHARPNESS_SCHEDULE: [f64; 5] = [4.0, 8.0, 16.0, 32.0, 64.0];

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryRbm<T> {
    visible: usize,
    hidden: usize,
    /// Row-major `m × n`.
    weights: Vec<T>,
    visible_bias: Vec<T>,
    hidden_bias: Vec<T>,
}

/// Exact normaliser and visible marginal.
#[derive(Debug, Clone)]
pub struct Partition<T> {
    pub log_z: T,
    /// Indexed by the bit pattern of `v` (bit `i` is unit `i`).
    pub visible_marginal: Vec<T>,
}

impl<T: Real> Partition<T> {
    pub fn z(&self) -> T {
        self.log_z.exp()
    }
}

/// First-layer probabilities of the unit vectors.
#[derive(Debug, Clone)]
pub struct UnitMarginals<T> {
    pub log_z: T,
    /// `π(e_i)`.
    pub unit: Vec<T>,
    /// `1 − Σ_i π(e_i)`.
    pub deficiency: T,
    /// Largest probability of a non-unit state when it is known exactly.
    pub max_off_unit: Option<T>,
    pub method: MarginalMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginalMethod {
    Enumeration,
    /// Elementary-symmetric recursion for weight columns that are constant
    /// apart from at most one entry.
    Structured,
}

fn bit(pattern: usize, i: usize) -> bool {
    (pattern >> i) & 1 == 1
}

/// Bit pattern of a boolean vector.
pub fn pattern_of(bits: &[bool]) -> usize {
    bits.iter()
        .enumerate()
        .fold(0, |acc, (i, &b)| if b { acc | (1 << i) } else { acc })
}

pub fn bits_of(pattern: usize, len: usize) -> Vec<bool> {
    (0..len).map(|i| bit(pattern, i)).collect()
}

impl<T: Real> BinaryRbm<T> {
    pub fn new(
        visible: usize,
        hidden: usize,
        weights: Vec<T>,
        visible_bias: Vec<T>,
        hidden_bias: Vec<T>,
    ) -> Result<Self> {
        if visible == 0 || hidden == 0 {
            return Err(Error::InvalidArgument("layers must be nonempty".into()));
        }
        if weights.len() != visible * hidden || visible_bias.len() != visible || hidden_bias.len() != hidden {
            return Err(Error::Dimension(format!(
                "expected {visible}×{hidden} weights and biases of lengths {visible}, {hidden}"
            )));
        }
        if weights
            .iter()
            .chain(&visible_bias)
            .chain(&hidden_bias)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Domain("RBM parameters must be finite".into()));
        }
        Ok(Self {
            visible,
            hidden,
            weights,
            visible_bias,
            hidden_bias,
        })
    }

    pub fn zeros(visible: usize, hidden: usize) -> Result<Self> {
        Self::new(
            visible,
            hidden,
            vec![T::zero(); visible * hidden],
            vec![T::zero(); visible],
            vec![T::zero(); hidden],
        )
    }

    pub fn visible_count(&self) -> usize {
        self.visible
    }

    pub fn hidden_count(&self) -> usize {
        self.hidden
    }

    pub fn weight(&self, i: usize, j: usize) -> T {
        self.weights[i * self.hidden + j]
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn visible_bias(&self) -> &[T] {
        &self.visible_bias
    }

    pub fn hidden_bias(&self) -> &[T] {
        &self.hidden_bias
    }

    /// All parameters multiplied by `s`.
    pub fn scaled(&self, s: T) -> Self {
        Self {
            weights: self.weights.iter().map(|&w| w * s).collect(),
            visible_bias: self.visible_bias.iter().map(|&w| w * s).collect(),
            hidden_bias: self.hidden_bias.iter().map(|&w| w * s).collect(),
            ..self.clone()
        }
    }

    /// `⟨v, W h⟩ + ⟨v, b⟩ + ⟨h, c⟩`.
    pub fn energy(&self, v: &[bool], h: &[bool]) -> Result<T> {
        if v.len() != self.visible || h.len() != self.hidden {
            return Err(Error::Dimension(format!(
                "state lengths {}, {} for an RBM of shape {}×{}",
                v.len(),
                h.len(),
                self.visible,
                self.hidden
            )));
        }
        Ok(self.energy_bits(pattern_of(v), pattern_of(h)))
    }

    fn energy_bits(&self, v: usize, h: usize) -> T {
        let mut e = T::zero();
        for i in (0..self.visible).filter(|&i| bit(v, i)) {
            e += self.visible_bias[i];
            for j in (0..self.hidden).filter(|&j| bit(h, j)) {
                e += self.weight(i, j);
            }
        }
        for j in (0..self.hidden).filter(|&j| bit(h, j)) {
            e += self.hidden_bias[j];
        }
        e
    }

    /// `log Σ_h exp(−H(v, h))` with the hidden sum done analytically.
    fn log_unnormalised_visible(&self, v: usize) -> T {
        let mut acc = T::zero();
        for i in (0..self.visible).filter(|&i| bit(v, i)) {
            acc -= self.visible_bias[i];
        }
        for j in 0..self.hidden {
            let mut pre = -self.hidden_bias[j];
            for i in (0..self.visible).filter(|&i| bit(v, i)) {
                pre -= self.weight(i, j);
            }
            acc += pre.softplus();
        }
        acc
    }

    fn check_cap(&self, cap: usize) -> Result<()> {
        let units = self.visible + self.hidden;
        if units > cap {
            return Err(Error::EnumerationCap { units, cap });
        }
        Ok(())
    }

    /// Exact `Z` and visible marginal under the default cap.
    pub fn partition_and_marginals(&self) -> Result<Partition<T>> {
        self.partition_and_marginals_with_cap(ENUMERATION_CAP)
    }

    pub fn partition_and_marginals_with_cap(&self, cap: usize) -> Result<Partition<T>> {
        self.check_cap(cap)?;
        let logs: Vec<T> = (0..1usize << self.visible)
            .into_par_iter()
            .with_min_len(1024)
            .map(|v| self.log_unnormalised_visible(v))
            .collect();
        let log_z = log_sum_exp(&logs);
        let visible_marginal = logs.iter().map(|&l| (l - log_z).exp()).collect();
        Ok(Partition {
            log_z,
            visible_marginal,
        })
    }

    /// Full joint `π(v, h)`, indexed by `v | h << m`.
    pub fn joint(&self) -> Result<Vec<T>> {
        self.check_cap(ENUMERATION_CAP)?;
        let m = self.visible;
        let logs: Vec<T> = (0..1usize << (m + self.hidden))
            .into_par_iter()
            .with_min_len(1024)
            .map(|s| -self.energy_bits(s & ((1 << m) - 1), s >> m))
            .collect();
        let log_z = log_sum_exp(&logs);
        Ok(logs.iter().map(|&l| (l - log_z).exp()).collect())
    }

    /// Detects columns of the form `s_j + d_j [i = i_j]`.
    fn column_structure(&self) -> Option<Vec<(T, T, Option<usize>)>> {
        let m = self.visible;
        (0..self.hidden)
            .map(|j| {
                let col: Vec<T> = (0..m).map(|i| self.weight(i, j)).collect();
                if col.iter().all(|&v| v == col[0]) {
                    return Some((col[0], T::zero(), None));
                }
                // the constant is the value shared by at least two rows
                let s = if m >= 3 {
                    if col[0] == col[1] || col[0] == col[2] {
                        col[0]
                    } else {
                        col[1]
                    }
                } else {
                    return None;
                };
                let odd: Vec<usize> = (0..m).filter(|&i| col[i] != s).collect();
                (odd.len() == 1).then(|| (s, col[odd[0]] - s, Some(odd[0])))
            })
            .collect()
    }

    /// `π(e_i)` for every unit vector: by enumeration within the cap,
    /// otherwise by the structured recursion when the weights allow it.
    pub fn unit_marginals(&self) -> Result<UnitMarginals<T>> {
        let m = self.visible;
        if self.check_cap(ENUMERATION_CAP).is_ok() {
            let p = self.partition_and_marginals()?;
            let unit: Vec<T> = (0..m).map(|i| p.visible_marginal[1 << i]).collect();
            let max_off = p
                .visible_marginal
                .iter()
                .enumerate()
                .filter(|(v, _)| v.count_ones() != 1)
                .fold(T::zero(), |a, (_, &x)| a.max(x));
            return Ok(UnitMarginals {
                log_z: p.log_z,
                deficiency: (T::one() - pairwise_sum(&unit)).max(T::zero()),
                unit,
                max_off_unit: Some(max_off),
                method: MarginalMethod::Enumeration,
            });
        }
        let cols = self.column_structure().ok_or(Error::EnumerationCap {
            units: self.visible + self.hidden,
            cap: ENUMERATION_CAP,
        })?;
        // log P̃(v) = base(|v|) + Σ_{i ∈ v} x_i(|v|)
        let level = |r: usize| -> (T, Vec<T>) {
            let rr = T::from_usize_lossy(r);
            let mut base = T::zero();
            let mut x: Vec<T> = self.visible_bias.iter().map(|&b| -b).collect();
            for (j, &(s, d, spike)) in cols.iter().enumerate() {
                let c = self.hidden_bias[j];
                let off = (-s * rr - c).softplus();
                base += off;
                if let Some(i) = spike {
                    x[i] += (-s * rr - d - c).softplus() - off;
                }
            }
            (base, x)
        };
        let log_terms: Vec<T> = (0..=m)
            .into_par_iter()
            .map(|r| {
                let (base, x) = level(r);
                base + log_elementary_symmetric(&x, r)
            })
            .collect();
        let (base1, x1) = level(1);
        let unit_logs: Vec<T> = x1.iter().map(|&x| base1 + x).collect();
        let log_z = log_sum_exp(&log_terms);
        let unit: Vec<T> = unit_logs.iter().map(|&l| (l - log_z).exp()).collect();
        Ok(UnitMarginals {
            log_z,
            deficiency: (T::one() - pairwise_sum(&unit)).max(T::zero()),
            unit,
            max_off_unit: None,
            method: MarginalMethod::Structured,
        })
    }

    /// Exact draws `(v, h)` from the joint: `v` by inverse CDF over the
    /// visible marginal, then `h | v` coordinatewise.
    pub fn sample_hidden_pair(&self, seed: u64, count: usize) -> Result<Vec<(Vec<bool>, Vec<bool>)>> {
        let p = self.partition_and_marginals()?;
        let mut cdf = Vec::with_capacity(p.visible_marginal.len());
        let mut acc = T::zero();
        for &x in &p.visible_marginal {
            acc += x;
            cdf.push(acc);
        }
        let mut rng = seed::rng(seed);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let u = T::lit(rng.random::<f64>()) * acc;
            let v = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            let h: Vec<bool> = (0..self.hidden)
                .map(|j| {
                    let mut pre = -self.hidden_bias[j];
                    for i in (0..self.visible).filter(|&i| bit(v, i)) {
                        pre -= self.weight(i, j);
                    }
                    let prob = T::one() / (T::one() + (-pre).exp());
                    T::lit(rng.random::<f64>()) < prob
                })
                .collect();
            out.push((bits_of(v, self.visible), h));
        }
        Ok(out)
    }

    /// Flat text form; numbers use the shortest exact decimal.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let row = |s: &mut String, vals: &[T]| {
            let items: Vec<String> = vals.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(s, "{}", items.join(" "));
        };
        let _ = writeln!(s, "binary_rbm v1");
        let _ = writeln!(s, "visible {}", self.visible);
        let _ = writeln!(s, "hidden {}", self.hidden);
        let _ = writeln!(s, "weights");
        for i in 0..self.visible {
            row(&mut s, &self.weights[i * self.hidden..(i + 1) * self.hidden]);
        }
        let _ = writeln!(s, "visible_bias");
        row(&mut s, &self.visible_bias);
        let _ = writeln!(s, "hidden_bias");
        row(&mut s, &self.hidden_bias);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = TextLines::new(text);
        Self::read(&mut lines)
    }

    pub(crate) fn read(lines: &mut TextLines<'_>) -> Result<Self> {
        lines.expect("binary_rbm v1")?;
        let m = lines.keyed_usize("visible")?;
        let n = lines.keyed_usize("hidden")?;
        lines.expect("weights")?;
        let mut w = Vec::with_capacity(m * n);
        for _ in 0..m {
            w.extend(lines.numbers::<T>(n)?);
        }
        lines.expect("visible_bias")?;
        let b = lines.numbers(m)?;
        lines.expect("hidden_bias")?;
        let c = lines.numbers(n)?;
        Self::new(m, n, w, b, c)
    }
}

/// `log e_r(exp x_1, …, exp x_m)`.
fn log_elementary_symmetric<T: Real>(x: &[T], r: usize) -> T {
    let mut e = vec![T::neg_infinity(); r + 1];
    e[0] = T::zero();
    for &xi in x {
        for k in (1..=r).rev() {
            e[k] = e[k].log_add_exp(e[k - 1] + xi);
        }
    }
    e[r]
}

/// Line reader shared by the text formats.
pub(crate) struct TextLines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> TextLines<'a> {
    pub(crate) fn new(text: &'a str) -> Self {
        Self {
            iter: text.lines().enumerate(),
            line: 0,
        }
    }

    pub(crate) fn next_line(&mut self) -> Result<&'a str> {
        for (i, l) in self.iter.by_ref() {
            self.line = i + 1;
            let t = l.trim();
            if !t.is_empty() {
                return Ok(t);
            }
        }
        Err(Error::Parse {
            line: self.line + 1,
            message: "unexpected end of input".into(),
        })
    }

    pub(crate) fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            message: message.into(),
        }
    }

    pub(crate) fn expect(&mut self, header: &str) -> Result<()> {
        let l = self.next_line()?;
        if l != header {
            return Err(self.error(format!("expected '{header}', found '{l}'")));
        }
        Ok(())
    }

    pub(crate) fn keyed_usize(&mut self, key: &str) -> Result<usize> {
        let l = self.next_line()?;
        let mut parts = l.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(k), Some(v), None) if k == key => v.parse().map_err(|_| self.error(format!("bad integer '{v}'"))),
            _ => Err(self.error(format!("expected '{key} <n>', found '{l}'"))),
        }
    }

    pub(crate) fn numbers<T: Real>(&mut self, count: usize) -> Result<Vec<T>> {
        let l = self.next_line()?;
        let vals: Vec<T> = l
            .split_whitespace()
            .map(|t| t.parse::<T>().map_err(|_| self.error(format!("bad number '{t}'"))))
            .collect::<Result<_>>()?;
        if vals.len() != count {
            return Err(self.error(format!("expected {count} numbers, found {}", vals.len())));
        }
        Ok(vals)
    }
}

/// Distribution on `{0,1}^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution<T> {
    dim: usize,
    probabilities: BTreeMap<Vec<bool>, T>,
}

impl<T: Real> DiscreteDistribution<T> {
    pub fn new(dim: usize, probabilities: BTreeMap<Vec<bool>, T>) -> Result<Self> {
        if probabilities.keys().any(|k| k.len() != dim) {
            return Err(Error::Dimension("state length differs from dimension".into()));
        }
        if probabilities.values().any(|&p| !(p >= T::zero())) {
            return Err(Error::InvalidArgument("probabilities must be nonnegative".into()));
        }
        let vals: Vec<T> = probabilities.values().copied().collect();
        let total = pairwise_sum(&vals);
        if (total - T::one()).abs() > T::lit(1e-12).max(T::epsilon() * T::lit(64.0)) {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}")));
        }
        Ok(Self { dim, probabilities })
    }

    /// `Σ_i α_i δ_{e_i}`.
    pub fn on_unit_vectors(alpha: &[T]) -> Result<Self> {
        let m = alpha.len();
        let map = alpha
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let mut k = vec![false; m];
                k[i] = true;
                (k, a)
            })
            .collect();
        Self::new(m, map)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn probability(&self, state: &[bool]) -> T {
        self.probabilities.get(state).copied().unwrap_or(T::zero())
    }

    pub fn probabilities(&self) -> &BTreeMap<Vec<bool>, T> {
        &self.probabilities
    }

    pub fn support_size(&self) -> usize {
        self.probabilities.values().filter(|&&p| p > T::zero()).count()
    }

    /// `(α_1, …, α_m)` when the support lies on unit vectors.
    pub fn unit_weights(&self) -> Option<Vec<T>> {
        let mut alpha = vec![T::zero(); self.dim];
        for (k, &p) in &self.probabilities {
            if p == T::zero() {
                continue;
            }
            let ones: Vec<usize> = (0..self.dim).filter(|&i| k[i]).collect();
            if ones.len() != 1 {
                return None;
            }
            alpha[ones[0]] = p;
        }
        Some(alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthesisStage {
    Analytic,
    Gradient,
}

#[derive(Debug, Clone)]
pub struct Synthesis<T> {
    pub rbm: BinaryRbm<T>,
    /// Certified bound on `max_v |target(v) − π(v)|`.
    pub tv: T,
    pub sharpness: T,
    pub stage: SynthesisStage,
    pub marginals: UnitMarginals<T>,
}

/// Options for [`synthesize_with`].
#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    pub sharpness: Vec<f64>,
    pub gradient_iterations: usize,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            sharpness: SHARPNESS_SCHEDULE.to_vec(),
            gradient_iterations: 2000,
        }
    }
}

/// Analytic parameters at sharpness `w` for `α` on the unit vectors.
///
/// Hidden unit `j < m` carries energy weights `−4w(2δ_ij − 1)` and bias
/// `4w − τ_j` with `1 + e^{τ_j} = α_j e^{2w}`; the last hidden unit is
/// disconnected. Visible biases are `w`, which leaves mass about `e^{−w}`
/// off the unit vectors.
pub fn analytic_rbm<T: Real>(alpha: &[T], w: T) -> Result<BinaryRbm<T>> {
    let m = alpha.len();
    let n = m + 1;
    let a = T::lit(4.0) * w;
    let mut weights = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..m {
            weights[i * n + j] = if i == j { -a } else { a };
        }
    }
    let mut hidden_bias = vec![T::zero(); n];
    for j in 0..m {
        let lg = alpha[j].ln() + T::lit(2.0) * w;
        // τ = ln(e^{lg} − 1), stable on both ends
        let tau = if !(lg > T::zero()) || !lg.is_finite() {
            -a
        } else if lg > T::lit(30.0) {
            lg + (-(-lg).exp()).ln_1p()
        } else {
            lg.exp_m1().ln()
        };
        hidden_bias[j] = a - tau.max(-a);
    }
    BinaryRbm::new(m, n, weights, vec![w; m], hidden_bias)
}

fn tv_against<T: Real>(alpha: &[T], marg: &UnitMarginals<T>) -> T {
    let dev = alpha
        .iter()
        .zip(&marg.unit)
        .fold(T::zero(), |acc, (&a, &p)| acc.max((a - p).abs()));
    dev.max(marg.max_off_unit.unwrap_or(marg.deficiency))
}

/// RBM with `m + 1` hidden units whose first-layer marginal is within
/// `epsilon` of `target` in every state.
pub fn synthesize<T: Real>(target: &DiscreteDistribution<T>, epsilon: T) -> Result<Synthesis<T>> {
    synthesize_with(target, epsilon, &SynthesisOptions::default())
}

pub fn synthesize_with<T: Real>(
    target: &DiscreteDistribution<T>,
    epsilon: T,
    opts: &SynthesisOptions,
) -> Result<Synthesis<T>> {
    if !(epsilon > T::zero()) {
        return Err(Error::InvalidArgument("ε must be positive".into()));
    }
    let alpha = target
        .unit_weights()
        .ok_or_else(|| Error::InvalidArgument("target support must lie on unit vectors".into()))?;
    let mut best: Option<Synthesis<T>> = None;
    for &w in &opts.sharpness {
        let w = T::lit(w);
        let rbm = analytic_rbm(&alpha, w)?;
        let marginals = rbm.unit_marginals()?;
        let tv = tv_against(&alpha, &marginals);
        let cand = Synthesis {
            rbm,
            tv,
            sharpness: w,
            stage: SynthesisStage::Analytic,
            marginals,
        };
        if tv <= epsilon {
            return Ok(cand);
        }
        if best.as_ref().is_none_or(|b| tv < b.tv) {
            best = Some(cand);
        }
    }
    let start = best.expect("nonempty schedule");
    if start.rbm.check_cap(ENUMERATION_CAP).is_ok() {
        let refined = gradient_refine(&alpha, start.rbm.clone(), epsilon, opts.gradient_iterations)?;
        let marginals = refined.unit_marginals()?;
        let tv = tv_against(&alpha, &marginals);
        if tv <= epsilon {
            return Ok(Synthesis {
                rbm: refined,
                tv,
                sharpness: start.sharpness,
                stage: SynthesisStage::Gradient,
                marginals,
            });
        }
        return Err(Error::Convergence {
            stage: "rbm synthesis".into(),
            detail: format!("TV {} above ε = {epsilon}", tv.min(start.tv)),
            best: tv.min(start.tv).as_f64(),
        });
    }
    Err(Error::Convergence {
        stage: "rbm synthesis".into(),
        detail: format!("TV {} above ε = {epsilon}", start.tv),
        best: start.tv.as_f64(),
    })
}

/// Exact-gradient descent on `KL(target ‖ π_visible)` with step halving.
fn gradient_refine<T: Real>(alpha: &[T], mut rbm: BinaryRbm<T>, epsilon: T, iterations: usize) -> Result<BinaryRbm<T>> {
    let m = rbm.visible;
    let n = rbm.hidden;
    let kl = |r: &BinaryRbm<T>| -> Result<T> {
        let p = r.partition_and_marginals()?;
        Ok(alpha
            .iter()
            .enumerate()
            .filter(|(_, &a)| a > T::zero())
            .fold(T::zero(), |acc, (i, &a)| {
                acc + a * (a.ln() - (r.log_unnormalised_visible(1 << i) - p.log_z))
            }))
    };
    let mut current = kl(&rbm)?;
    let mut step = T::one();
    for _ in 0..iterations {
        let p = rbm.partition_and_marginals()?;
        // expectations of v_i h_j, v_i, h_j under data and model
        let mut grad_w = vec![T::zero(); m * n];
        let mut grad_b = vec![T::zero(); m];
        let mut grad_c = vec![T::zero(); n];
        let hidden_means = |v: usize| -> Vec<T> {
            (0..n)
                .map(|j| {
                    let mut pre = -rbm.hidden_bias[j];
                    for i in (0..m).filter(|&i| bit(v, i)) {
                        pre -= rbm.weight(i, j);
                    }
                    T::one() / (T::one() + (-pre).exp())
                })
                .collect()
        };
        let mut accumulate = |v: usize, weight: T, sign: T| {
            if weight == T::zero() {
                return;
            }
            let hm = hidden_means(v);
            for i in (0..m).filter(|&i| bit(v, i)) {
                grad_b[i] += sign * weight;
                for j in 0..n {
                    grad_w[i * n + j] += sign * weight * hm[j];
                }
            }
            for j in 0..n {
                grad_c[j] += sign * weight * hm[j];
            }
        };
        for (i, &a) in alpha.iter().enumerate() {
            accumulate(1 << i, a, T::one());
        }
        for (v, &pv) in p.visible_marginal.iter().enumerate() {
            accumulate(v, pv, -T::one());
        }
        let mut accepted = false;
        while step > T::lit(1e-12) {
            let cand = BinaryRbm {
                weights: rbm.weights.iter().zip(&grad_w).map(|(&w, &g)| w - step * g).collect(),
                visible_bias: rbm
                    .visible_bias
                    .iter()
                    .zip(&grad_b)
                    .map(|(&w, &g)| w - step * g)
                    .collect(),
                hidden_bias: rbm
                    .hidden_bias
                    .iter()
                    .zip(&grad_c)
                    .map(|(&w, &g)| w - step * g)
                    .collect(),
                ..rbm.clone()
            };
            let k = kl(&cand)?;
            if k < current {
                rbm = cand;
                current = k;
                step *= T::lit(2.0);
                accepted = true;
                break;
            }
            step *= T::lit(0.5);
        }
        if !accepted {
            break;
        }
        let marg = rbm.unit_marginals()?;
        if tv_against(alpha, &marg) <= epsilon {
            break;
        }
    }
    Ok(rbm)
}
