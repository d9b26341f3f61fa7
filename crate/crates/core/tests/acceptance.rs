//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 1 and 4 cannot pass as stated (see `KNOWN_UNATTAINABLE`); they
//! are evaluated exactly as written and reported as FAIL. The process exits
//! nonzero when the set of failing criteria differs from that list.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use dbnapprox::binary_rbm::{pattern_of, synthesize, DiscreteDistribution};
use dbnapprox::dbn::{approximate_lq, DeepBeliefNetwork, KlOptions, KlPipeline};
use dbnapprox::densities::{upsilon, upsilon_gamma_form, Density, PiecewiseConstant};
use dbnapprox::harness::{self, counterexample_demo, ExperimentConfig, ExperimentKind};
use dbnapprox::metrics::{kl_l2_bound_check, lq_norm};
use dbnapprox::mixture::fit_rate;
use dbnapprox::quadrature::Rule;
use dbnapprox::smoothing::convolve;
use dbnapprox::{seed, stats, BinaryRbm, BoxDomain, ParentalDensity, QuadratureSpec, TargetDensity};
use rand::Rng;

/// Criterion 1 names the Gaussian norm `q^{-d/(2q)}`, which misses the
/// factor `(2π)^{d(1−q)/(2q)}`; criterion 4 asks for a slope the sampled
/// mixtures do not show (their mean error decays like `m^{-1/2}`).
const KNOWN_UNATTAINABLE: [usize; 2] = [1, 4];

const NORM_TOL: f64 = 1e-6;
const UPSILON_EXACT_TOL: f64 = 1e-8;
const UPSILON_Q4_TOL: f64 = 1e-6;
const SLOPE_Q2: (f64, f64) = (-0.65, -0.35);
const SLOPE_Q15: (f64, f64) = (-0.48, -0.18);
const RATE_BOUND_FACTOR: f64 = 3.0;
const RBM_TV_TOL: f64 = 1e-3;
const L2_ABSOLUTE: f64 = 0.25;
const KL_SLOPE: (f64, f64) = (-1.4, -0.6);
const KL_L2_MARGIN: f64 = 1e-6;
const COUNTER_INTEGRAL_TOL: f64 = 1e-8;
const COUNTER_L2_FINAL: f64 = 0.05;
const COUNTER_KL_FINAL: f64 = 0.01;
const COUNTER_SUP_GAP: f64 = 0.4;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn within(v: f64, (lo, hi): (f64, f64)) -> bool {
    v >= lo && v <= hi
}

fn closed_form_norms() -> Verdict {
    let mut library_worst = 0f64;
    let mut printed_worst = 0f64;
    for d in [1usize, 2] {
        let g = ParentalDensity::gaussian(d).unwrap();
        let te = ParentalDensity::truncated_exponential(vec![1.0; d], vec![1.0; d]).unwrap();
        for p in [&g, &te] {
            let spec = QuadratureSpec::new(p.support().unwrap(), Rule::GaussLegendreComposite, 128).unwrap();
            for q in [1.0, 1.5, 2.0, 3.0, 4.0] {
                let quad = lq_norm(p, q, &spec).unwrap().value;
                library_worst = library_worst.max((p.lq_norm_closed_form(q).unwrap() - quad).abs());
                if std::ptr::eq(p, &g) {
                    let printed = q.powf(-(d as f64) / (2.0 * q));
                    printed_worst = printed_worst.max((printed - quad).abs());
                }
            }
        }
    }
    verdict(
        library_worst <= NORM_TOL && printed_worst <= NORM_TOL,
        format!(
            "library closed forms within {library_worst:.1e}; stated gaussian form q^(-d/(2q)) off by up to {printed_worst:.4}"
        ),
    )
}

fn upsilon_values() -> Verdict {
    let u1: f64 = upsilon(1.0).unwrap();
    let u2: f64 = upsilon(2.0).unwrap();
    let u4: f64 = upsilon(4.0).unwrap();
    let target = 3f64.powf(0.25);
    let pass = (u1 - 1.0).abs() <= UPSILON_EXACT_TOL
        && (u2 - 1.0).abs() <= UPSILON_EXACT_TOL
        && (u4 - target).abs() <= UPSILON_Q4_TOL;
    verdict(
        pass,
        format!(
            "Υ1={u1}, Υ2={u2}, Υ4={u4:.10} vs 3^(1/4)={target:.10}; Gamma form at q=4 gives {:.6} (reported only)",
            upsilon_gamma_form(4.0)
        ),
    )
}

fn maurey(q: f64, band: (f64, f64), check_bound: bool) -> Verdict {
    let target = TargetDensity::standard_normal(1).unwrap();
    let parent = ParentalDensity::gaussian(1).unwrap();
    let smoothed = convolve(&target, &parent, 0.1).unwrap();
    let spec = QuadratureSpec::new(
        BoxDomain::interval(-8.0, 8.0).unwrap(),
        Rule::GaussLegendreComposite,
        128,
    )
    .unwrap();
    let fit = fit_rate(&smoothed, q, &[4, 16, 64, 256], 50, 20240601, &spec).unwrap();
    let mut bound_ok = true;
    for i in 0..fit.m_values.len() {
        bound_ok &= fit.mean_errors[i] < RATE_BOUND_FACTOR * fit.bound(i);
    }
    let slope_ok = within(fit.slope, band);
    verdict(
        slope_ok && (!check_bound || bound_ok),
        format!(
            "slope {:.4} (band [{}, {}], theory {:.4}), 95% CI [{:.4}, {:.4}], means {:?}{}",
            fit.slope,
            band.0,
            band.1,
            -fit.theory_exponent(),
            fit.slope_ci.0,
            fit.slope_ci.1,
            fit.mean_errors.iter().map(|e| format!("{e:.4}")).collect::<Vec<_>>(),
            if check_bound {
                format!(", means below 3Υξm^(-1/2): {bound_ok}")
            } else {
                String::new()
            }
        ),
    )
}

fn rbm_synthesis() -> Verdict {
    let mut worst = 0f64;
    let mut failures = 0;
    for m in 2..=6usize {
        for trial in 0..10u64 {
            let mut rng = seed::rng(seed::derive(5, &[m as u64, trial]));
            let raw: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 1e-3).collect();
            let total: f64 = raw.iter().sum();
            let alpha: Vec<f64> = raw.iter().map(|r| r / total).collect();
            let target = DiscreteDistribution::on_unit_vectors(&alpha).unwrap();
            let Ok(syn) = synthesize(&target, RBM_TV_TOL) else {
                failures += 1;
                continue;
            };
            if syn.rbm.hidden_count() != m + 1 {
                failures += 1;
            }
            // independent enumeration of the visible marginal
            let marginal = syn.rbm.partition_and_marginals().unwrap().visible_marginal;
            let tv = (0..1usize << m).fold(0f64, |acc, pattern| {
                let want = (0..m)
                    .find(|&i| pattern == 1 << i)
                    .map_or(0.0, |i| target.probability(&unit(m, i)));
                acc.max((want - marginal[pattern]).abs())
            });
            worst = worst.max(tv);
        }
    }
    verdict(
        failures == 0 && worst <= RBM_TV_TOL,
        format!("50 syntheses, worst enumerated TV {worst:.3e}, failures {failures}"),
    )
}

fn unit(m: usize, i: usize) -> Vec<bool> {
    let mut v = vec![false; m];
    v[i] = true;
    debug_assert_eq!(pattern_of(&v), 1 << i);
    v
}

fn l2_certificate() -> Verdict {
    let target = TargetDensity::standard_normal(1).unwrap();
    let parent = ParentalDensity::gaussian(1).unwrap();
    let spec = QuadratureSpec::new(
        BoxDomain::interval(-8.0, 8.0).unwrap(),
        Rule::GaussLegendreComposite,
        64,
    )
    .unwrap();
    let (_, c) = approximate_lq(&target, &parent, 2.0, 64, 0.1, 5, &spec).unwrap();
    verdict(
        c.audit_holds() && c.measured_error <= L2_ABSOLUTE,
        format!(
            "measured {:.5}, audit bound {:.5} (smoothing {:.5}, mixture {:.2e}, rbm {:.2e}, deficiency {:.2e}), σ={}",
            c.measured_error,
            c.audit_bound(),
            c.smoothing_error,
            c.mixture_error,
            c.rbm_term,
            c.deficiency_term,
            c.sigma
        ),
    )
}

fn kl_pipeline() -> Verdict {
    let target =
        TargetDensity::parental(ParentalDensity::truncated_exponential(vec![1.0], vec![1.0]).unwrap()).unwrap();
    let parent = ParentalDensity::truncated_exponential(vec![0.5], vec![1.0]).unwrap();
    let omega = BoxDomain::interval(0.0, 1.0).unwrap();
    let spec = QuadratureSpec::new(omega.clone(), Rule::GaussLegendreComposite, 64).unwrap();
    let pipe = KlPipeline::prepare(&target, &parent, &omega, 0.5, &spec, KlOptions::default()).unwrap();
    let ms = [8usize, 16, 32, 64];
    let mut means = Vec::new();
    let mut bound_ok = true;
    for &m in &ms {
        let kls: Vec<f64> = (0..32u64)
            .map(|t| pipe.approximate(m, seed::derive(11, &[m as u64, t])).unwrap().kl.value)
            .collect();
        bound_ok &= kls.iter().all(|&k| k <= pipe.paper_bound(m));
        means.push(stats::mean(&kls));
    }
    let mf: Vec<f64> = ms.iter().map(|&m| m as f64).collect();
    let slope = stats::log_log_slope(&mf, &means).unwrap();
    verdict(
        bound_ok && within(slope, KL_SLOPE),
        format!(
            "M={}, σ={}, mean KL {:?}, bounds {:?}, slope {slope:.4}, every trial below bound: {bound_ok}",
            pipe.big_m,
            pipe.sigma,
            means.iter().map(|e| format!("{e:.4}")).collect::<Vec<_>>(),
            ms.iter()
                .map(|&m| format!("{:.4}", pipe.paper_bound(m)))
                .collect::<Vec<_>>()
        ),
    )
}

fn kl_l2_lemma() -> Verdict {
    let omega = BoxDomain::interval(0.0, 1.0).unwrap();
    let spec = QuadratureSpec::new(omega.clone(), Rule::GaussLegendreComposite, 32).unwrap();
    let mut rng = seed::rng(8);
    let mut worst_slack = f64::INFINITY;
    let mut violations = 0;
    for _ in 0..100 {
        let cells_f = rng.random_range(2..=12);
        let cells_g = rng.random_range(2..=12);
        let f =
            TargetDensity::piecewise_constant(PiecewiseConstant::random_with_floor(&mut rng, cells_f, 0.1).unwrap())
                .unwrap();
        let g =
            TargetDensity::piecewise_constant(PiecewiseConstant::random_with_floor(&mut rng, cells_g, 0.1).unwrap())
                .unwrap();
        let c = kl_l2_bound_check(&f, &g, &omega, 0.1, &spec).unwrap();
        let slack = c.l2_squared / 0.1 + KL_L2_MARGIN - c.kl;
        worst_slack = worst_slack.min(slack);
        violations += usize::from(slack < 0.0);
    }
    verdict(
        violations == 0,
        format!("100 pairs, {violations} violations, smallest slack {worst_slack:.3e}"),
    )
}

fn counterexample() -> Verdict {
    let ms = [1u64, 2, 4, 8, 16, 32, 64];
    let rows = counterexample_demo(&ms, 256).unwrap();
    let integral_ok = rows.iter().all(|r| (r.integral - 1.0).abs() <= COUNTER_INTEGRAL_TOL);
    let l2_dec = rows.windows(2).all(|w| w[1].l2 < w[0].l2);
    let kl_dec = rows.windows(2).all(|w| w[1].kl < w[0].kl);
    let last = rows.last().unwrap();
    let sup_ok = rows.iter().all(|r| r.sup_gap >= COUNTER_SUP_GAP);
    let c2 = rows[1].c_exact == num_rational::Ratio::new(16, 15);
    verdict(
        integral_ok && l2_dec && kl_dec && last.l2 < COUNTER_L2_FINAL && last.kl < COUNTER_KL_FINAL && sup_ok && c2,
        format!(
            "L2 {:.4}→{:.4}, KL {:.4}→{:.2e}, min sup gap {:.4}, C2 = {}",
            rows[0].l2,
            last.l2,
            rows[0].kl,
            last.kl,
            rows.iter().map(|r| r.sup_gap).fold(f64::INFINITY, f64::min),
            rows[1].c_exact
        ),
    )
}

const DETERMINISM_CONFIGS: [(ExperimentKind, &str); 6] = [
    (ExperimentKind::Norms, "[experiment]\nname = n\nseed = 1\n[run]\nq_values = 1, 2, 3\ndims = 1, 2\n"),
    (
        ExperimentKind::Rate,
        "[experiment]\nname = r\nseed = 2\n[target]\nkind = standard_normal\n[parent]\nkind = gaussian\n[run]\nq = 2\nsigma = 0.1\nm_values = 4, 16, 64\ntrials = 10\n[quadrature]\nlo = -8\nhi = 8\npoints = 64\n",
    ),
    (
        ExperimentKind::KlRate,
        "[experiment]\nname = k\nseed = 3\n[target]\nkind = truncated_exponential\nrates = 1\nbounds = 1\n[parent]\nkind = truncated_exponential\nrates = 0.5\nbounds = 1\n[run]\neta = 0.5\nm_values = 8, 16\ntrials = 4\n[quadrature]\nlo = 0\nhi = 1\npoints = 64\n",
    ),
    (
        ExperimentKind::Approximate,
        "[experiment]\nname = a\nseed = 4\n[target]\nkind = standard_normal\n[parent]\nkind = gaussian\n[run]\nq = 2\nm = 16\nepsilon = 0.2\n[quadrature]\nlo = -8\nhi = 8\npoints = 64\n",
    ),
    (
        ExperimentKind::SynthesizeRbm,
        "[experiment]\nname = s\nseed = 5\n[run]\nm_values = 2, 4\ntrials = 3\ntolerance = 0.001\n",
    ),
    (ExperimentKind::Counterexample, "[experiment]\nname = c\nseed = 6\n[run]\nm_values = 1, 2, 4\n"),
];

fn staged_files(cfg: &ExperimentConfig) -> Vec<(String, String)> {
    let s = harness::stage(cfg).unwrap();
    s.outputs
        .names()
        .filter(|n| !n.ends_with(".timings.csv"))
        .map(|n| (n.to_string(), s.outputs.contents(n).unwrap().to_string()))
        .collect()
}

fn determinism_and_serialization() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut differing = Vec::new();
    let mut dbn_text = String::new();
    for (kind, text) in DETERMINISM_CONFIGS {
        let cfg = ExperimentConfig::parse(text, kind, None, dir.path()).unwrap();
        let a = staged_files(&cfg);
        if a != staged_files(&cfg) {
            differing.push(kind.to_string());
        }
        if let Some((_, t)) = a.iter().find(|(n, _)| n.ends_with(".dbn")) {
            dbn_text = t.clone();
        }
    }
    std::fs::write(dir.path().join("a.dbn"), &dbn_text).unwrap();
    let eval = "[experiment]\nname = e\nseed = 7\n[run]\nmodel = a.dbn\npoints = -1; 0; 2\nsamples = 20\n";
    let cfg = ExperimentConfig::parse(eval, ExperimentKind::Eval, None, dir.path()).unwrap();
    if staged_files(&cfg) != staged_files(&cfg) {
        differing.push("eval".into());
    }

    let dbn = DeepBeliefNetwork::<f64>::from_text(&dbn_text).unwrap();
    let dbn_again = DeepBeliefNetwork::<f64>::from_text(&dbn.to_text().unwrap()).unwrap();
    let dbn_exact = dbn.to_text().unwrap() == dbn_text
        && [-1.0, 0.0, 0.3, 2.5]
            .iter()
            .all(|&x| dbn.eval_visible(&[x]).to_bits() == dbn_again.eval_visible(&[x]).to_bits());
    let rbm = dbn.rbm();
    let rbm_back = BinaryRbm::from_text(&rbm.to_text()).unwrap();
    let bits = |r: &BinaryRbm| -> Vec<u64> {
        r.weights()
            .iter()
            .chain(r.visible_bias())
            .chain(r.hidden_bias())
            .map(|v| v.to_bits())
            .collect()
    };
    let rbm_exact = bits(rbm) == bits(&rbm_back) && rbm_back.to_text() == rbm.to_text();
    verdict(
        differing.is_empty() && dbn_exact && rbm_exact,
        format!(
            "7 experiments rerun, differing: {differing:?}; DBN round trip bit-exact: {dbn_exact}; RBM round trip bit-exact: {rbm_exact}"
        ),
    )
}

type Criterion = (usize, &'static str, Duration, fn() -> Verdict);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (1, "closed-form norms", Duration::from_secs(10), closed_form_norms),
        (2, "Υ_q values", Duration::from_secs(1), upsilon_values),
        (3, "sampled mixture rate, q = 2", Duration::from_secs(300), || {
            maurey(2.0, SLOPE_Q2, true)
        }),
        (4, "sampled mixture rate, q = 1.5", Duration::from_secs(300), || {
            maurey(1.5, SLOPE_Q15, false)
        }),
        (5, "RBM synthesis", Duration::from_secs(120), rbm_synthesis),
        (6, "end-to-end L2 certificate", Duration::from_secs(180), l2_certificate),
        (7, "KL pipeline", Duration::from_secs(300), kl_pipeline),
        (8, "KL against L2/η", Duration::from_secs(30), kl_l2_lemma),
        (9, "counterexample", Duration::from_secs(30), counterexample),
        (
            10,
            "determinism and serialization",
            Duration::from_secs(60),
            determinism_and_serialization,
        ),
    ];
    let mut failing = Vec::new();
    for (id, name, limit, run) in criteria {
        let start = Instant::now();
        let v = run();
        let elapsed = start.elapsed();
        let pass = v.pass && elapsed <= limit;
        if !pass {
            failing.push(id);
        }
        println!(
            "{} criterion {id:>2} {name}: {} [{:.2}s of {}s]",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failing == KNOWN_UNATTAINABLE {
        println!(
            "acceptance: {} of 10 pass; failing {failing:?} match the documented list",
            10 - failing.len()
        );
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failing {failing:?}, expected exactly {KNOWN_UNATTAINABLE:?}");
        ExitCode::FAILURE
    }
}
