//! Cost against accuracy: fitted log-log slope, the complexity constant (kept
//! as a logarithm; it overflows f64), and the per-level inequality.
//!
//! cargo run --release --example complexity

use picard_mlp::harness::{complexity_study, dim_scaling, StudyConfig};
use picard_mlp::{FamilyTag, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = StudyConfig::new(
        FamilyTag::ExponentialLinearF,
        10,
        vec![(1, 1), (2, 2), (3, 3), (4, 4), (5, 5)],
        200,
        11,
    );
    let report = complexity_study(&cfg)?;
    let cc = report.complexity.as_ref().expect("filled by complexity_study");
    println!("fitted slope of ln(draws) against ln(1/rmse): {:.3}", report.slope.unwrap_or(f64::NAN));
    println!("ln C = {:.1} (sup attained at n = {}, delta = {})", cc.constant.ln, cc.argmax, cc.delta);
    for r in &report.rows {
        println!(
            "N={} rmse {:.3e}: ln draws {:.2} <= {:.1} ({})",
            r.n,
            r.rmse,
            (r.rv_analytic as f64).ln(),
            r.ln_complexity_rhs.unwrap_or(f64::NAN),
            r.complexity_holds.map_or("n/a", |h| if h { "holds" } else { "violated" })
        );
    }

    println!("\ndraws per dimension at n = m = 3:");
    for row in dim_scaling(&[1, 10, 100, 1000, 10_000], 3, 3, Variant::SignedIndex)? {
        println!("  d={:>6}: {:>12} draws, {:.2} per dimension", row.dim, row.rv_analytic, row.rv_per_dim);
    }
    Ok(())
}
