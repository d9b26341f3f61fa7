use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use super::config::{ExperimentConfig, NormChoice};
use super::counterexample::counterexample_demo;
use super::output::{num, plot_script, read_rate_summary, Table, RATE_COLUMNS};
use super::{Staged, Timings};
use crate::binary_rbm::{synthesize, DiscreteDistribution, SynthesisStage};
use crate::dbn::{
    approximate_lq, approximate_sup_with, ApproximationCertificate, DeepBeliefNetwork, KlOptions, KlPipeline,
    SupOptions,
};
use crate::densities::{upsilon, upsilon_gamma_form, Density, ParentalDensity, ParentalFamily, TargetDensity};
use crate::error::{Error, Result};
use crate::metrics;
use crate::mixture::fit_rate;
use crate::quadrature::{QuadratureSpec, Rule};
use crate::smoothing::convolve;
use crate::{seed, stats};

fn target(cfg: &ExperimentConfig) -> &TargetDensity<f64> {
    cfg.target.as_ref().expect("validated")
}

fn parent(cfg: &ExperimentConfig) -> &ParentalDensity<f64> {
    cfg.parent.as_ref().expect("validated")
}

fn quadrature(cfg: &ExperimentConfig) -> &QuadratureSpec<f64> {
    cfg.quadrature.as_ref().expect("validated")
}

fn csv_name(cfg: &ExperimentConfig, suffix: &str) -> String {
    format!("{}{suffix}", cfg.output_name)
}

fn status<T>(r: &std::result::Result<T, String>) -> String {
    match r {
        Ok(_) => "ok".into(),
        Err(e) => format!("failed: {e}"),
    }
}

/// `E|X|^q` for standard normal `X` through the Gamma function.
fn normal_moment_gamma(q: f64) -> f64 {
    2f64.powf(q / 2.0) * statrs::function::gamma::gamma((q + 1.0) / 2.0) / std::f64::consts::PI.sqrt()
}

pub(super) fn norms(cfg: &ExperimentConfig, timings: &mut Timings) -> Result<Staged> {
    let r = &cfg.run;
    let points = cfg.quadrature.as_ref().map_or(128, |s| s.points_per_axis);
    let rule = cfg.quadrature.as_ref().map_or(Rule::GaussLegendreComposite, |s| s.rule);
    let mut t = Table::new(&[
        "config_hash",
        "quantity",
        "family",
        "dim",
        "q",
        "closed_form",
        "quadrature",
        "abs_diff",
    ]);
    let push = |t: &mut Table, quantity: &str, family: &str, dim: String, q: f64, closed: f64, quad: f64| {
        t.push(vec![
            cfg.hash.clone(),
            quantity.into(),
            family.into(),
            dim,
            num(q),
            num(closed),
            num(quad),
            num((closed - quad).abs()),
        ]);
    };
    timings.time("norms", || -> Result<()> {
        for &d in &r.dims {
            let families = [
                ("gaussian", ParentalDensity::gaussian(d)?),
                (
                    "truncated_exponential",
                    ParentalDensity::truncated_exponential(vec![r.te_rate; d], vec![r.te_bound; d])?,
                ),
            ];
            for (name, p) in &families {
                let domain = p.support().expect("closed-form families have a support box");
                let spec = QuadratureSpec::new(domain, rule, points)?;
                for &q in &r.q_values {
                    let closed = p.lq_norm_closed_form(q)?;
                    let quad = metrics::lq_norm(p, q, &spec)?.value;
                    push(&mut t, "norm", name, num(d), q, closed, quad);
                    if p.family() == ParentalFamily::Gaussian {
                        let printed = q.powf(-(d as f64) / (2.0 * q));
                        push(&mut t, "printed_norm", name, num(d), q, printed, quad);
                    }
                }
            }
        }
        for &q in &r.q_values {
            let ups = upsilon(q)?;
            let oracle = normal_moment_gamma(q).max(1.0).powf(1.0 / q);
            push(&mut t, "upsilon", "normal", String::new(), q, oracle, ups);
            push(
                &mut t,
                "upsilon_printed",
                "normal",
                String::new(),
                q,
                upsilon_gamma_form(q),
                ups,
            );
        }
        Ok(())
    })?;
    let mut s = Staged {
        summary: format!("{} norm rows", t.len()),
        ..Default::default()
    };
    s.outputs.add(csv_name(cfg, ".csv"), t.render(&cfg.name, &cfg.hash));
    Ok(s)
}

pub(super) fn rate(cfg: &ExperimentConfig, timings: &mut Timings) -> Result<Staged> {
    let r = &cfg.run;
    let q = r.q.expect("validated");
    let sigma = r.sigma.expect("validated");
    let smoothed = convolve(target(cfg), parent(cfg), sigma)?;
    let fit = timings.time("fit_rate", || {
        fit_rate(
            &smoothed,
            q,
            &r.m_values,
            r.trials.expect("validated"),
            cfg.seed,
            quadrature(cfg),
        )
    })?;
    let mut t = Table::new(&RATE_COLUMNS);
    let mut failures = 0;
    for (i, &m) in fit.m_values.iter().enumerate() {
        let bound = fit.bound(i);
        for o in fit.trials.iter().filter(|o| o.m == m) {
            failures += usize::from(o.error.is_err());
            t.push(vec![
                cfg.hash.clone(),
                "trial".into(),
                num(m),
                num(o.trial),
                num(o.seed),
                num(q),
                num(sigma),
                o.error.as_ref().map(|e| num(*e)).unwrap_or_default(),
                num(bound),
                status(&o.error),
            ]);
        }
        t.push(vec![
            cfg.hash.clone(),
            "summary".into(),
            num(m),
            String::new(),
            String::new(),
            num(q),
            num(sigma),
            num(fit.mean_errors[i]),
            num(bound),
            format!("failures={}", fit.failures[i]),
        ]);
    }
    let mut f = Table::new(&["config_hash", "quantity", "value"]);
    for (k, v) in [
        ("slope", fit.slope),
        ("slope_ci_lo", fit.slope_ci.0),
        ("slope_ci_hi", fit.slope_ci.1),
        ("theory_slope", -fit.theory_exponent()),
        ("xi_estimate", fit.xi_estimate),
        ("upsilon", fit.upsilon),
    ] {
        f.push(vec![cfg.hash.clone(), k.into(), num(v)]);
    }
    let csv = t.render(&cfg.name, &cfg.hash);
    let mut s = Staged {
        failures,
        summary: format!("slope {} (theory {})", fit.slope, -fit.theory_exponent()),
        ..Default::default()
    };
    if cfg.plot {
        let summary = read_rate_summary(&csv)?;
        s.outputs
            .add(csv_name(cfg, ".gp"), plot_script(&summary, &csv_name(cfg, ".png")));
    }
    s.outputs.add(csv_name(cfg, ".csv"), csv);
    s.outputs.add(csv_name(cfg, ".fit.csv"), f.render(&cfg.name, &cfg.hash));
    Ok(s)
}

pub(super) fn kl_rate(cfg: &ExperimentConfig, timings: &mut Timings) -> Result<Staged> {
    let r = &cfg.run;
    let eta = r.eta.expect("validated");
    let trials = r.trials.expect("validated");
    let spec = quadrature(cfg);
    let pipeline = timings.time("prepare", || {
        KlPipeline::prepare(target(cfg), parent(cfg), &spec.domain, eta, spec, KlOptions::default())
    })?;
    let mut ms = r.m_values.clone();
    ms.sort_unstable();
    ms.dedup();
    let jobs: Vec<(usize, usize)> = ms.iter().flat_map(|&m| (0..trials).map(move |t| (m, t))).collect();
    let outcomes: Vec<_> = timings.time("trials", || {
        jobs.par_iter()
            .map(|&(m, trial)| {
                let s = seed::derive(cfg.seed, &[m as u64, trial as u64]);
                (m, trial, s, pipeline.approximate(m, s).map_err(|e| e.to_string()))
            })
            .collect()
    });
    let mut t = Table::new(&[
        "config_hash",
        "kind",
        "m",
        "trial",
        "seed",
        "eta",
        "big_m",
        "sigma",
        "kl",
        "bound",
        "l2_squared",
        "lemma_bound",
        "min_density",
        "attempts",
        "fallback",
        "status",
    ]);
    let mut failures = 0;
    let mut means = Vec::new();
    for &m in &ms {
        let bound = pipeline.paper_bound(m);
        let mut ok = Vec::new();
        for (_, trial, s, res) in outcomes.iter().filter(|o| o.0 == m) {
            let mut row = vec![
                cfg.hash.clone(),
                "trial".into(),
                num(m),
                num(trial),
                num(s),
                num(eta),
                num(pipeline.big_m),
                num(pipeline.sigma),
            ];
            match res {
                Ok(a) => {
                    ok.push(a.kl.value);
                    row.extend([
                        num(a.kl.value),
                        num(a.paper_bound),
                        num(a.l2_squared),
                        num(a.lemma_bound),
                        num(a.min_density),
                        num(a.attempts),
                        num(a.fallback),
                    ]);
                }
                Err(_) => {
                    failures += 1;
                    row.extend([
                        String::new(),
                        num(bound),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                    ]);
                }
            }
            row.push(status(res));
            t.push(row);
        }
        let mean = if ok.is_empty() { f64::NAN } else { stats::mean(&ok) };
        means.push(mean);
        let mut row = vec![
            cfg.hash.clone(),
            "summary".into(),
            num(m),
            String::new(),
            String::new(),
            num(eta),
            num(pipeline.big_m),
            num(pipeline.sigma),
            num(mean),
            num(bound),
        ];
        row.extend(std::iter::repeat_n(String::new(), 5));
        row.push(format!("failures={}", trials - ok.len()));
        t.push(row);
    }
    let mf: Vec<f64> = ms.iter().map(|&m| m as f64).collect();
    let slope = if ms.len() >= 2 {
        stats::log_log_slope(&mf, &means).unwrap_or(f64::NAN)
    } else {
        f64::NAN
    };
    let mut f = Table::new(&["config_hash", "quantity", "value"]);
    for (k, v) in [
        ("slope", slope),
        ("theory_slope", -1.0),
        ("big_m", pipeline.big_m as f64),
        ("sigma", pipeline.sigma),
        ("phi_l2_squared", pipeline.phi_l2_squared),
        ("f_minus_phi_l2_squared", pipeline.f_minus_phi_l2_squared),
    ] {
        f.push(vec![cfg.hash.clone(), k.into(), num(v)]);
    }
    let mut s = Staged {
        failures,
        summary: format!("KL slope {slope} (theory -1), M = {}", pipeline.big_m),
        ..Default::default()
    };
    s.outputs.add(csv_name(cfg, ".csv"), t.render(&cfg.name, &cfg.hash));
    s.outputs.add(csv_name(cfg, ".fit.csv"), f.render(&cfg.name, &cfg.hash));
    Ok(s)
}

pub(super) const CERTIFICATE_COLUMNS: [&str; 19] = [
    "config_hash",
    "norm",
    "q",
    "epsilon",
    "m",
    "sigma",
    "measured_error",
    "smoothing_error",
    "mixture_error",
    "rbm_tv",
    "rbm_term",
    "deficiency",
    "deficiency_term",
    "quadrature_error",
    "paper_bound",
    "corrected_bound",
    "audit_bound",
    "audit_holds",
    "within_epsilon",
];

fn certificate_row(cfg: &ExperimentConfig, norm: &str, c: &ApproximationCertificate<f64>) -> Vec<String> {
    vec![
        cfg.hash.clone(),
        norm.into(),
        num(c.q),
        num(c.epsilon),
        num(c.m),
        num(c.sigma),
        num(c.measured_error),
        num(c.smoothing_error),
        num(c.mixture_error),
        num(c.rbm_tv),
        num(c.rbm_term),
        num(c.deficiency),
        num(c.deficiency_term),
        num(c.quadrature_error),
        num(c.paper_bound),
        num(c.corrected_bound),
        num(c.audit_bound()),
        num(c.audit_holds()),
        num(c.measured_error <= c.epsilon),
    ]
}

pub(super) fn approximate(cfg: &ExperimentConfig, timings: &mut Timings) -> Result<Staged> {
    let r = &cfg.run;
    let eps = r.epsilon.expect("validated");
    let (norm, (dbn, cert)) = match r.norm.unwrap_or(NormChoice::Lq) {
        NormChoice::Lq => (
            "lq",
            timings.time("approximate_lq", || {
                approximate_lq(
                    target(cfg),
                    parent(cfg),
                    r.q.expect("validated"),
                    r.m.expect("validated"),
                    eps,
                    cfg.seed,
                    quadrature(cfg),
                )
            })?,
        ),
        NormChoice::Sup => {
            let opts = SupOptions {
                seed: cfg.seed,
                ..Default::default()
            };
            (
                "sup",
                timings.time("approximate_sup", || {
                    approximate_sup_with(target(cfg), parent(cfg), eps, quadrature(cfg), &opts)
                })?,
            )
        }
    };
    let mut t = Table::new(&CERTIFICATE_COLUMNS);
    t.push(certificate_row(cfg, norm, &cert));
    let mut s = Staged {
        summary: format!(
            "m = {}, measured {} (ε = {eps}), audit {}",
            cert.m,
            cert.measured_error,
            cert.audit_holds()
        ),
        ..Default::default()
    };
    s.outputs.add(csv_name(cfg, ".csv"), t.render(&cfg.name, &cfg.hash));
    s.outputs.add(csv_name(cfg, ".dbn"), dbn.to_text()?);
    Ok(s)
}

/// Unit-vector weights drawn uniformly from the simplex.
fn random_simplex(m: usize, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed);
    let e: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

pub(super) fn synthesize_rbm(cfg: &ExperimentConfig, timings: &mut Timings) -> Result<Staged> {
    let r = &cfg.run;
    let tol = r.tolerance.expect("validated");
    let jobs: Vec<(usize, usize, u64, Vec<f64>)> = match &r.weights {
        Some(w) => vec![(w.len(), 0, cfg.seed, w.clone())],
        None => {
            let mut ms = r.m_values.clone();
            ms.sort_unstable();
            ms.dedup();
            ms.iter()
                .flat_map(|&m| {
                    (0..r.trials.expect("validated")).map(move |t| {
                        let s = seed::derive(cfg.seed, &[m as u64, t as u64]);
                        (m, t, s, random_simplex(m, s))
                    })
                })
                .collect()
        }
    };
    let results: Vec<_> = timings.time("synthesize", || {
        jobs.par_iter()
            .map(|(_, _, _, alpha)| {
                DiscreteDistribution::on_unit_vectors(alpha)
                    .and_then(|d| synthesize(&d, tol))
                    .map_err(|e| e.to_string())
            })
            .collect()
    });
    let mut t = Table::new(&[
        "config_hash",
        "m",
        "trial",
        "seed",
        "tv",
        "sharpness",
        "stage",
        "deficiency",
        "status",
    ]);
    let mut failures = 0;
    let mut worst = 0f64;
    for ((m, trial, s, _), res) in jobs.iter().zip(&results) {
        let mut row = vec![cfg.hash.clone(), num(m), num(trial), num(s)];
        match res {
            Ok(syn) if syn.tv <= tol => {
                worst = worst.max(syn.tv);
                let stage = match syn.stage {
                    SynthesisStage::Analytic => "analytic",
                    SynthesisStage::Gradient => "gradient",
                };
                row.extend([
                    num(syn.tv),
                    num(syn.sharpness),
                    stage.into(),
                    num(syn.marginals.deficiency),
                    "ok".into(),
                ]);
            }
            Ok(syn) => {
                failures += 1;
                row.extend([
                    num(syn.tv),
                    num(syn.sharpness),
                    String::new(),
                    num(syn.marginals.deficiency),
                ]);
                row.push(format!("failed: tv above {tol}"));
            }
            Err(e) => {
                failures += 1;
                row.extend([
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    format!("failed: {e}"),
                ]);
            }
        }
        t.push(row);
    }
    let mut s = Staged {
        failures,
        summary: format!("{} syntheses, worst TV {worst}, {failures} failed", jobs.len()),
        ..Default::default()
    };
    s.outputs.add(csv_name(cfg, ".csv"), t.render(&cfg.name, &cfg.hash));
    if r.weights.is_some() {
        match &results[0] {
            Ok(syn) => s.outputs.add(csv_name(cfg, ".rbm"), syn.rbm.to_text()),
            Err(e) => {
                return Err(Error::Convergence {
                    stage: "synthesize".into(),
                    detail: e.clone(),
                    best: f64::NAN,
                })
            }
        }
    }
    Ok(s)
}

pub(super) fn counterexample(cfg: &ExperimentConfig, timings: &mut Timings) -> Result<Staged> {
    let points = cfg.quadrature.as_ref().map_or(256, |s| s.points_per_axis);
    let ms: Vec<u64> = cfg.run.m_values.iter().map(|&m| m as u64).collect();
    let rows = timings.time("counterexample", || counterexample_demo(&ms, points))?;
    let mut t = Table::new(&[
        "config_hash",
        "m",
        "c_m",
        "c_m_exact",
        "integral",
        "l2_distance",
        "l2_closed_form",
        "kl",
        "kl_closed_form",
        "sup_gap",
        "sup_gap_closed_form",
    ]);
    for r in &rows {
        t.push(vec![
            cfg.hash.clone(),
            num(r.m),
            num(r.c),
            format!("{}/{}", r.c_exact.numer(), r.c_exact.denom()),
            num(r.integral),
            num(r.l2),
            num(r.l2_closed_form),
            num(r.kl),
            num(r.kl_closed_form),
            num(r.sup_gap),
            num(r.sup_gap_closed_form),
        ]);
    }
    let last = rows.last().expect("m_values is nonempty");
    let mut s = Staged {
        summary: format!(
            "m = {}: L2 {}, KL {}, sup gap {}",
            last.m, last.l2, last.kl, last.sup_gap
        ),
        ..Default::default()
    };
    s.outputs.add(csv_name(cfg, ".csv"), t.render(&cfg.name, &cfg.hash));
    Ok(s)
}

fn join(x: &[f64]) -> String {
    x.iter().map(num).collect::<Vec<_>>().join(";")
}

pub(super) fn eval(cfg: &ExperimentConfig, timings: &mut Timings) -> Result<Staged> {
    let r = &cfg.run;
    let path = r.model.as_ref().expect("validated");
    let text = std::fs::read_to_string(path)?;
    let dbn = DeepBeliefNetwork::<f64>::from_text(&text)?;
    let mut t = Table::new(&["config_hash", "kind", "index", "x", "value"]);
    timings.time("eval", || -> Result<()> {
        for (i, x) in r.points.iter().flatten().enumerate() {
            t.push(vec![
                cfg.hash.clone(),
                "density".into(),
                num(i),
                join(x),
                num(dbn.eval(x)?),
            ]);
        }
        if let Some(n) = r.samples {
            for (i, x) in dbn.sample_visible(cfg.seed, n)?.iter().enumerate() {
                t.push(vec![
                    cfg.hash.clone(),
                    "sample".into(),
                    num(i),
                    join(x),
                    num(dbn.eval_visible(x)),
                ]);
            }
        }
        Ok(())
    })?;
    let mut s = Staged {
        summary: format!("{} rows from a network with m = {}", t.len(), dbn.m()),
        ..Default::default()
    };
    s.outputs.add(csv_name(cfg, ".csv"), t.render(&cfg.name, &cfg.hash));
    Ok(s)
}
