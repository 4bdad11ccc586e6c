//! Empirical RMSE per level next to the a-priori error bound.
//!
//! cargo run --release --example rmse_bound

use picard_mlp::harness::{rmse_study, StudyConfig};
use picard_mlp::FamilyTag;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = StudyConfig::new(
        FamilyTag::ExponentialLinearF,
        10,
        vec![(1, 1), (2, 2), (3, 3), (4, 4)],
        500,
        7,
    )
    .with_param("c", 0.5);
    let report = rmse_study(&cfg)?;
    println!("reference u(0, ξ) = {:.6}", report.reference);
    println!("{:>3} {:>12} {:>12} {:>12} {:>10}", "N", "mean", "rmse", "bound", "draws");
    for r in &report.rows {
        println!(
            "{:>3} {:>12.6} {:>12.4e} {:>12.4e} {:>10}",
            r.n,
            r.mean,
            r.rmse,
            r.theorem_bound * r.inflation,
            r.rv_analytic
        );
    }
    report.write_csv(std::io::stdout())?;
    Ok(())
}
