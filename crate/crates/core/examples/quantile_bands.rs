//! Quantile curves with bands obtained by inverting a uniform band for the
//! distribution function, after rearrangement.
//!
//!     cargo run --release --example quantile_bands

use selection_dr::counterfactual::{quantile, rearrange};
use selection_dr::estimate::{fit_two_step, FitOptions};
use selection_dr::inference::{functional_band, quantile_band_by_inversion, BootstrapPlan, FunctionalGroup, FunctionalRequest};
use selection_dr::model::ThresholdGrid;
use selection_dr::simulate::{hsm_generate, wage_design_config};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = wage_design_config(4000, 5);
    let data = hsm_generate(&cfg)?;
    let grid_taus: Vec<f64> = (1..50).map(|i| i as f64 * 0.02).collect();
    let grid = ThresholdGrid::from_quantiles(&data.selected_outcomes(), &grid_taus)?;
    let spec = cfg.model_spec(vec!["intercept".into()], grid)?;
    let fit = fit_two_step(&data, &spec, &FitOptions::default())?;
    let groups = [FunctionalGroup { label: "all", fit: &fit, data: &data }];
    let plan = BootstrapPlan::new(300, 17, 0.9)?;

    let taus = [0.1, 0.25, 0.5, 0.75, 0.9];
    for (what, request) in [("latent", FunctionalRequest::Latent { group: 0 }), ("observed", FunctionalRequest::Observed { group: 0 })] {
        let curve = functional_band(&groups, request, &plan)?;
        let q = quantile_band_by_inversion(&curve, &taus)?;
        println!("{what} log wage quantiles (90% uniform band)");
        for m in 0..taus.len() {
            let edge = if q.truncated[m] { "  (band reaches grid edge)" } else { "" };
            println!("  tau {:.2}: {:.3} [{:.3}, {:.3}]{edge}", taus[m], q.center[m], q.lower[m], q.upper[m]);
        }
        println!("  median by direct inversion: {:?}", quantile(&rearrange(&curve), 0.5)?.value);
    }
    Ok(())
}
