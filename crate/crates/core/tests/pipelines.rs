use dbnapprox::dbn::{approximate_lq, approximate_sup};
use dbnapprox::quadrature::Rule;
use dbnapprox::{stats, BoxDomain, ParentalDensity, QuadratureSpec, TargetDensity};

fn normal_setup() -> (TargetDensity, ParentalDensity, QuadratureSpec) {
    let spec = QuadratureSpec::new(
        BoxDomain::interval(-8.0, 8.0).unwrap(),
        Rule::GaussLegendreComposite,
        64,
    )
    .unwrap();
    (
        TargetDensity::standard_normal(1).unwrap(),
        ParentalDensity::gaussian(1).unwrap(),
        spec,
    )
}

#[test]
fn l2_error_within_corrected_bound_at_m_64() {
    let (f, phi, spec) = normal_setup();
    let (_, c) = approximate_lq(&f, &phi, 2.0, 64, 0.1, 21, &spec).unwrap();
    // ε + 2Υ₂‖φ_σ‖₂/√64 with the σ-scaled component norm
    let comp = phi.lq_norm_closed_form(2.0).unwrap() * c.sigma.powf(-0.5);
    assert!((c.corrected_bound - (0.1 + 2.0 * comp / 8.0)).abs() < 1e-12);
    assert!(c.measured_error <= c.corrected_bound + c.quadrature_error);
    assert!(c.audit_holds());
}

#[test]
fn doubling_m_does_not_worsen_the_mixture_error() {
    let (f, phi, spec) = normal_setup();
    let mut diffs = Vec::new();
    for seed in 0..20u64 {
        let (_, a) = approximate_lq(&f, &phi, 2.0, 8, 0.2, seed, &spec).unwrap();
        let (_, b) = approximate_lq(&f, &phi, 2.0, 16, 0.2, seed, &spec).unwrap();
        diffs.push(b.mixture_error - a.mixture_error);
    }
    let mean = stats::mean(&diffs);
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 19.0).sqrt();
    assert!(mean <= 2.0 * sd / 20f64.sqrt(), "mean change {mean}, sd {sd}");
}

#[test]
fn loose_sup_tolerance_succeeds_at_one_component() {
    let (f, phi, spec) = normal_setup();
    let (dbn, c) = approximate_sup(&f, &phi, 0.5, &spec).unwrap();
    assert_eq!(dbn.m(), 1);
    assert!(c.measured_error <= 0.5);
}
