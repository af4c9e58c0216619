//! Multiplier-bootstrap uniform bands for coefficient curves and for the
//! latent and observed distribution functions.
//!
//!     cargo run --release --example uniform_bands

use selection_dr::estimate::{fit_two_step, FitOptions};
use selection_dr::inference::{functional_band, uniform_bands, BootstrapPlan, FunctionalGroup, FunctionalRequest};
use selection_dr::model::ThresholdGrid;
use selection_dr::simulate::{hsm_generate, wage_design_config};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = wage_design_config(4000, 3);
    let data = hsm_generate(&cfg)?;
    let taus: Vec<f64> = (1..20).map(|i| i as f64 * 0.05).collect();
    let grid = ThresholdGrid::from_quantiles(&data.selected_outcomes(), &taus)?;
    let spec = cfg.model_spec(vec!["intercept".into()], grid)?;
    let fit = fit_two_step(&data, &spec, &FitOptions::default())?;
    let plan = BootstrapPlan::new(500, 11, 0.95)?;

    let names = fit.coefficient_names();
    let unit = |name: &str| -> Vec<f64> { names.iter().map(|n| if n == name { 1.0 } else { 0.0 }).collect() };
    let contrasts = vec![unit("beta:college"), unit("delta:intercept")];
    let bands = uniform_bands(&fit, &contrasts, &plan)?;
    let rho = bands[1].mapped(f64::tanh, |v| 1.0 - v.tanh().powi(2));
    println!("critical values: college {:.3}, sorting {:.3}", bands[0].critical_value, bands[1].critical_value);
    println!("{:>8}{:>26}{:>26}", "y", "college [band]", "rho [band]");
    for j in 0..bands[0].grid.len() {
        let b = &bands[0];
        println!(
            "{:>8.3}{:>26}{:>26}",
            b.grid[j],
            format!("{:.3} [{:.3}, {:.3}]", b.center[j], b.lower[j], b.upper[j]),
            format!("{:.3} [{:.3}, {:.3}]", rho.center[j], rho.lower[j], rho.upper[j]),
        );
    }

    let groups = [FunctionalGroup { label: "all", fit: &fit, data: &data }];
    for (what, request) in [("latent", FunctionalRequest::Latent { group: 0 }), ("observed", FunctionalRequest::Observed { group: 0 })] {
        let curve = functional_band(&groups, request, &plan)?;
        let band = curve.band.as_ref().expect("banded");
        let width = band.lower.iter().zip(&band.upper).map(|(l, u)| u - l).fold(0.0, f64::max);
        println!("{what} distribution: max band width {width:.3}, critical value {:.3}", band.critical_value);
    }
    Ok(())
}
