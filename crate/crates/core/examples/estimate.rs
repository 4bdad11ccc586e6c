//! A single realization and a replicated mean of U_{n,m}(0, ξ) against the
//! closed-form solution of the quadratic family.
//!
//! cargo run --release --example estimate

use picard_mlp::harness::mean_and_stderr;
use picard_mlp::{evaluate, evaluate_replicated, make_family, FamilyTag, MlpConfig, MultiIndex};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fam = make_family(FamilyTag::QuadraticLinear, 10, 1.0, &Default::default())?;
    let x = fam.problem.xi().to_vec();
    let exact = fam.exact(0.0, &x)?;

    let cfg = MlpConfig::new(3, 3, 2024);
    let one = evaluate(&fam.problem, &cfg, &MultiIndex::root(), 0.0, &x)?;
    println!(
        "one draw: U_3,3(0, 0) = {:.5}  ({} normals, {} uniforms)",
        one.value, one.ledger.normals, one.ledger.uniforms
    );

    let reps = evaluate_replicated(&fam.problem, &cfg, 0.0, &x, 2000, 0)?;
    let values: Vec<f64> = reps.iter().map(|e| e.value).collect();
    let (mean, se) = mean_and_stderr(&values);
    println!("mean of {} draws: {mean:.5} ± {se:.5}   exact {exact}", values.len());
    Ok(())
}
