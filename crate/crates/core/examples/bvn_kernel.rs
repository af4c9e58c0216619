//! Bivariate normal CDF, its partial derivatives and the correlation solver.
//!
//!     cargo run --release --example bvn_kernel

use selection_dr::bvn::{bvn_cdf, bvn_cdf_partials, bvn_pdf, norm_cdf};
use selection_dr::identify::lgr_rho_solve;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("{:>6}{:>6}{:>7}{:>20}{:>14}", "h", "k", "rho", "Phi2(h,k;rho)", "density");
    for &(h, k, r) in &[(0.0, 0.0, 0.0), (0.0, 0.0, 0.5), (1.0, -0.5, 0.3), (-2.0, -2.0, -0.9), (3.0, 1.5, 0.99)] {
        println!("{h:>6}{k:>6}{r:>7}{:>20.15}{:>14.4e}", bvn_cdf(h, k, r), bvn_pdf(h, k, r)?);
    }

    // at the origin Φ₂ = 1/4 + asin(ρ)/(2π)
    let r: f64 = 0.5;
    let exact = 0.25 + r.asin() / (2.0 * std::f64::consts::PI);
    println!("\narcsine check at rho = {r}: |error| = {:.1e}", (bvn_cdf(0.0, 0.0, r) - exact).abs());

    let p = bvn_cdf_partials(0.4, -0.2, 0.6)?;
    println!("partials at (0.4, -0.2; 0.6): d/dh {:.10}  d/dk {:.10}  d/drho {:.10}", p.d_mu, p.d_nu, p.d_rho);

    // recover the correlation that reproduces a joint probability
    let (h, k, rho) = (0.3, -0.6, -0.45);
    let joint = bvn_cdf(h, k, rho);
    let solved = lgr_rho_solve(norm_cdf(h), norm_cdf(k), joint)?;
    println!("correlation from Pr = {joint:.12}: {solved:.12} (true {rho})");
    Ok(())
}
