//! The densities `f_m(x) = C_m min(1, m x + ½)` on `[0, 1]`: KL to the
//! uniform density tends to zero while the sup gap stays near ½.

use num_rational::Ratio;

use crate::densities::{counterexample_constant, Counterexample, Density, TargetDensity};
use crate::error::Result;
use crate::metrics;
use crate::quadrature::{BoxDomain, QuadratureSpec, Rule};

#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleRow {
    pub m: u64,
    pub c_exact: Ratio<u64>,
    pub c: f64,
    /// `∫₀¹ f_m` by quadrature.
    pub integral: f64,
    pub l2: f64,
    pub l2_closed_form: f64,
    pub kl: f64,
    pub kl_closed_form: f64,
    /// `max |f_m − 1|` over the grid and the kink.
    pub sup_gap: f64,
    pub sup_gap_closed_form: f64,
}

/// Piecewise closed forms `(‖f_m − 1‖₂, KL(f_m ‖ 1), ‖f_m − 1‖_∞)`.
pub fn closed_forms(m: u64) -> (f64, f64, f64) {
    let c = Counterexample { m }.constant::<f64>();
    let mf = m as f64;
    let a = 1.0 / (2.0 * mf);
    // on the ramp substitute y = c(mx + ½), dx = dy/(cm)
    let ramp_sq = ((c - 1.0).powi(3) - (c / 2.0 - 1.0).powi(3)) / (3.0 * c * mf);
    let l2 = (ramp_sq + (1.0 - a) * (c - 1.0).powi(2)).sqrt();
    let prim = |y: f64| y * y / 2.0 * y.ln() - y * y / 4.0;
    let kl = (prim(c) - prim(c / 2.0)) / (c * mf) + (1.0 - a) * c * c.ln();
    let sup = (1.0 - c / 2.0).max(c - 1.0);
    (l2, kl, sup)
}

/// One row per `m`, measured with composite Gauss–Legendre on `[0, 1]`.
pub fn counterexample_demo(m_values: &[u64], points: usize) -> Result<Vec<CounterexampleRow>> {
    let unit = BoxDomain::interval(0.0, 1.0)?;
    let spec = QuadratureSpec::new(unit.clone(), Rule::GaussLegendreComposite, points)?;
    let one = TargetDensity::uniform(unit.clone())?;
    m_values
        .iter()
        .map(|&m| {
            let f = TargetDensity::<f64>::counterexample(m)?;
            let integral = metrics::lq_norm(&f, 1.0, &spec)?.value;
            let l2 = metrics::lq_distance(&f, &one, 2.0, &spec)?.value;
            let kl = metrics::kl_divergence(&f, &one, &unit, &spec)?.value;
            let grid_sup = metrics::sup_distance(&f, &one, &spec)?.value;
            let kink = Counterexample { m }.kink::<f64>();
            let sup_gap = [0.0, kink, 1.0]
                .iter()
                .map(|&x| (f.density(&[x]) - 1.0).abs())
                .fold(grid_sup, f64::max);
            let (l2c, klc, supc) = closed_forms(m);
            Ok(CounterexampleRow {
                m,
                c_exact: counterexample_constant(m),
                c: Counterexample { m }.constant(),
                integral,
                l2,
                l2_closed_form: l2c,
                kl,
                kl_closed_form: klc,
                sup_gap,
                sup_gap_closed_form: supc,
            })
        })
        .collect()
}
