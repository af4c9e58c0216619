//! Identification of (mu, rho) from the selection probabilities and the
//! distribution cells at two values of a binary excluded covariate.
//!
//!     cargo run --release --example identify_cells

use selection_dr::bvn::{bvn_cdf, norm_cdf};
use selection_dr::identify::{identify, CellProbabilities, DEFAULT_TOLERANCE};

/// Population cells for the Gaussian representation with parameters (mu, rho)
/// and selection indexes nu0 < nu1.
fn cells(mu: f64, rho: f64, nu0: f64, nu1: f64) -> CellProbabilities {
    let (p0, p1) = (norm_cdf(nu0), norm_cdf(nu1));
    CellProbabilities::new(p0, p1, bvn_cdf(mu, nu0, rho) + 1.0 - p0, bvn_cdf(mu, nu1, rho) + 1.0 - p1)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("interior points");
    for &(mu, rho) in &[(0.5, 0.3), (-1.0, -0.7), (0.0, 0.0), (1.2, 0.9)] {
        let r = identify(&cells(mu, rho, -0.3, 0.8), DEFAULT_TOLERANCE)?;
        println!("  mu {mu:>5} rho {rho:>5} -> case {} mu {:?} rho {:.10}", r.case_id, r.mu, r.rho);
    }

    println!("boundary points");
    let examples = [
        ("F(y,1|z) = 1 at both z", CellProbabilities::new(0.5, 0.7, 1.0, 1.0)),
        ("no mass below y among the selected", CellProbabilities::new(0.5, 0.7, 0.5, 0.3)),
        ("equal F(y,1|z)", CellProbabilities::new(0.6, 0.8, 0.55, 0.55)),
    ];
    for (what, c) in examples {
        let r = identify(&c, DEFAULT_TOLERANCE)?;
        println!("  {what:<38} case {} mu {:?} rho {}", r.case_id, r.mu, r.rho);
    }

    let bad = CellProbabilities::new(0.7, 0.5, 0.8, 0.8);
    println!("selection probability decreasing in z: {}", identify(&bad, DEFAULT_TOLERANCE).unwrap_err());
    Ok(())
}
