//! Deterministic reference solution for the sine family, its fixed-point
//! residual, and the on-disk cache.
//!
//! cargo run --release --example picard_oracle

use picard_mlp::oracle::{fixed_point_residual, picard_solve_cached, PicardOptions, QuadratureGrid};
use picard_mlp::{make_family, FamilyTag};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fam = make_family(FamilyTag::SineNonlinear, 1, 1.0, &Default::default())?;
    let grid = QuadratureGrid::new(64, 32);
    let opts = PicardOptions::for_problem(&fam.problem).with_tol(1e-10);
    let cache = std::env::temp_dir().join("picard-mlp-cache");

    let start = std::time::Instant::now();
    let sol = picard_solve_cached(&cache, "sine:g=cos,f=sin", &fam.problem, &grid, &opts)?;
    println!(
        "solved in {:.2}s: {} sweeps, last change {:.1e}",
        start.elapsed().as_secs_f64(),
        sol.iterations,
        sol.final_delta
    );
    for (i, d) in sol.deltas.iter().enumerate() {
        println!("  sweep {:>2}: {d:.3e}", i + 1);
    }

    for t in [0.0, 0.5, 1.0] {
        let row: Vec<String> = [-2.0, 0.0, 2.0].iter().map(|&x| format!("{:.8}", sol.value(t, &[x]))).collect();
        println!("u({t}, -2 | 0 | 2) = {}", row.join("  "));
    }

    let points: Vec<(f64, Vec<f64>)> = (0..20).map(|k| (0.05 * k as f64, vec![0.3 * k as f64 - 3.0])).collect();
    let r = fixed_point_residual(&fam.problem, &|t, x| sol.value(t, x), &grid, &points)?;
    println!("max fixed-point residual on 20 points: {r:.2e}");
    println!("cache directory: {}", cache.display());
    Ok(())
}
