//! Coverage study on the synthetic wage design.
//!
//!     cargo run --release --example monte_carlo -- [reps] [n] [B]

use selection_dr::simulate::{run_monte_carlo, wage_design_mc};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let reps = args.first().copied().unwrap_or(20);
    let n = args.get(1).copied().unwrap_or(2000);
    let b = args.get(2).copied().unwrap_or(200);

    let design = wage_design_mc(n, reps, b, 20240601)?;
    let t0 = std::time::Instant::now();
    let s = run_monte_carlo(&design)?;
    println!("{} of {} replicates completed in {:.1?}", s.completed, s.reps, t0.elapsed());

    println!("{:<28}{:>10}{:>10}{:>10}", "", "college", "married", "rho");
    let row = |label: &str, f: &dyn Fn(usize) -> f64| {
        print!("{label:<28}");
        for m in 0..s.targets.len() {
            print!("{:>10.3}", f(m));
        }
        println!();
    };
    row("average length", &|m| s.targets[m].avg_band_length);
    row("average critical value", &|m| s.targets[m].avg_cv);
    row("coverage uniform", &|m| s.targets[m].coverage_uniform);
    row("coverage pointwise", &|m| s.targets[m].coverage_pointwise);
    row("average SE/SD", &|m| s.targets[m].avg_se_over_sd);
    row("max |bias|/SD", &|m| {
        let t = &s.targets[m];
        t.bias.iter().zip(&t.sd).map(|(b, d)| b.abs() / d).fold(0.0, f64::max)
    });
    println!("two-step rho: mean {:.3}, sd {:.3}", s.heckman_rho_mean, s.heckman_rho_sd);
    Ok(())
}
