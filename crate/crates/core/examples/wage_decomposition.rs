//! Two synthetic groups drawn from the wage design with different coefficients,
//! then a four-way decomposition of the observed wage distribution gap with
//! joint bands, and the employment-rate split.
//!
//!     cargo run --release --example wage_decomposition -- [path/to/write.csv]
//!
//! With a path, the pooled sample is also written as CSV in the layout the
//! `seldr` binary reads (group column `group`).

use selection_dr::counterfactual::{employment_decomposition, GroupInputs, DEFAULT_ORDER};
use selection_dr::data::ObservationSet;
use selection_dr::estimate::{fit_two_step, FitOptions};
use selection_dr::inference::{decomposition_with_bands, BootstrapPlan, DecompositionKind, FunctionalGroup};
use selection_dr::model::ThresholdGrid;
use selection_dr::simulate::{hsm_generate, wage_design_config, HsmDgpConfig};

fn groups(n: usize) -> Vec<(&'static str, HsmDgpConfig)> {
    let women = wage_design_config(n, 11);
    let mut men = wage_design_config(n, 12);
    men.beta[0] += 0.25;
    men.pi[0] += 0.45;
    men.pi[7] = 0.2;
    men.rho = 0.2;
    vec![("men", men), ("women", women)]
}

fn write_csv(path: &str, samples: &[(&str, ObservationSet)]) -> Result<(), Box<dyn std::error::Error>> {
    let mut w = csv::Writer::from_path(path)?;
    let x_names = samples[0].1.x().names()[1..].to_vec();
    let mut header = vec!["log_wage".to_string(), "employed".to_string()];
    header.extend(x_names.iter().cloned());
    header.push("benefit_std".into());
    header.push("group".into());
    w.write_record(&header)?;
    for (label, data) in samples {
        let bi = data.z().column_index("benefit_std").unwrap();
        for i in 0..data.len() {
            let mut row = vec![
                if data.d()[i] { format!("{}", data.y()[i]) } else { String::new() },
                (data.d()[i] as u8).to_string(),
            ];
            row.extend(data.x().row(i)[1..].iter().map(|v| format!("{v}")));
            row.push(format!("{}", data.z().row(i)[bi]));
            row.push(label.to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let samples: Vec<(&str, ObservationSet)> = groups(3000)
        .into_iter()
        .map(|(l, c)| Ok((l, hsm_generate(&c)?)))
        .collect::<Result<_, Box<dyn std::error::Error>>>()?;
    if let Some(path) = std::env::args().nth(1) {
        write_csv(&path, &samples)?;
        println!("wrote {path}");
    }

    let pooled: Vec<f64> = samples.iter().flat_map(|(_, d)| d.selected_outcomes()).collect();
    let grid = ThresholdGrid::from_quantiles(&pooled, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])?;
    let spec = groups(1)[0].1.model_spec(vec!["intercept".into()], grid)?;
    let fits = samples
        .iter()
        .map(|(_, d)| fit_two_step(d, &spec, &FitOptions::default()))
        .collect::<Result<Vec<_>, _>>()?;

    let fg = [
        FunctionalGroup { label: samples[0].0, fit: &fits[0], data: &samples[0].1 },
        FunctionalGroup { label: samples[1].0, fit: &fits[1], data: &samples[1].1 },
    ];
    let plan = BootstrapPlan::new(100, 5, 0.95)?;
    let report = decomposition_with_bands(&fg, &DecompositionKind::Four(DEFAULT_ORDER.to_vec()), &plan)?;

    println!("F_men(y) - F_women(y), observed wages");
    print!("{:>8}{:>10}", "y", "total");
    for c in &report.components {
        print!("{:>21}", c.component.name());
    }
    println!();
    for j in 0..report.grid.len() {
        print!("{:>8.3}{:>10.4}", report.grid[j], report.total[j]);
        for c in &report.components {
            let b = c.band.as_ref().unwrap();
            print!("  {:>7.4} [{:>5.2},{:>5.2}]", c.values[j], b.lower[j], b.upper[j]);
        }
        println!();
    }

    let gi: Vec<GroupInputs> = samples.iter().zip(&fits).map(|((l, d), f)| GroupInputs::from_fit(*l, f, d)).collect();
    let emp = employment_decomposition(&gi[0], &gi[1])?;
    println!(
        "employment gap {:.4} = structure {:.4} + composition {:.4}",
        emp.total, emp.structure, emp.composition
    );
    Ok(())
}
