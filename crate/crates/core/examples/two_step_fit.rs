//! Two-step fit on a simulated Heckman sample, compared with the true
//! coefficient curves and with the classical two-step estimator.
//!
//!     cargo run --release --example two_step_fit -- [n]

use selection_dr::estimate::{fit_two_step, FitOptions};
use selection_dr::model::ThresholdGrid;
use selection_dr::simulate::{heckman_two_step, hsm_generate, CovariateSource, HsmDgpConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(10_000);
    let cfg = HsmDgpConfig {
        beta: vec![0.5, 1.0],
        sigma: 1.0,
        pi: vec![0.2, 1.0, 0.5],
        rho: 0.4,
        covariates: CovariateSource::Gaussian { outcome: 1, excluded: 1 },
        n,
        seed: 2024,
    };
    let data = hsm_generate(&cfg)?;
    println!("n = {n}, selected share {:.3}", data.selected_share());

    let grid = ThresholdGrid::from_quantiles(&data.selected_outcomes(), &[0.1, 0.25, 0.5, 0.75, 0.9])?;
    let spec = cfg.model_spec(vec!["intercept".into()], grid)?;
    let fit = fit_two_step(&data, &spec, &FitOptions::default())?;
    println!("first stage: pi = {:.3?}", fit.first.pi_hat);

    println!("{:>8}{:>22}{:>22}{:>22}", "y", "beta0 (true)", "beta_x1 (true)", "rho (true)");
    for (j, t) in fit.thresholds.iter().enumerate() {
        let truth = cfg.true_theta(t.theta.y, 1);
        let se = fit.standard_errors(j);
        let rho = t.theta.delta[0].tanh();
        let cell = |est: f64, se: f64, tr: f64| format!("{est:.3}±{se:.3} ({tr:.3})");
        println!(
            "{:>8.3}{:>22}{:>22}{:>22}",
            t.theta.y,
            cell(t.theta.beta[0], se[0], truth.beta[0]),
            cell(t.theta.beta[1], se[1], truth.beta[1]),
            cell(rho, (1.0 - rho * rho) * se[2], cfg.rho),
        );
    }

    let h = heckman_two_step(&data)?;
    println!("classical two-step: beta {:.3?}, sigma {:.3}, rho {:.3}", h.beta, h.sigma, h.rho);
    Ok(())
}
