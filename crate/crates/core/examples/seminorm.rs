//! Time-weighted semi-norms along the Brownian flow, for a constant field and
//! for the exact solution of the quadratic family.
//!
//! cargo run --release --example seminorm

use picard_mlp::harness::seminorm_estimate_with_se;
use picard_mlp::{make_family, FamilyTag};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fam = make_family(FamilyTag::QuadraticLinear, 2, 1.0, &Default::default())?;
    let u = fam.closed_form().expect("quadratic family has a closed form");
    let one = |_: f64, _: &[f64]| 1.0;
    println!("{:>2} {:>14} {:>14} {:>18}", "k", "|1|_k", "1/sqrt(k!)", "|u|_k ± se");
    for k in 0..=6u32 {
        let c = seminorm_estimate_with_se(&fam.problem, &one, k, 100_000, 1)?;
        let s = seminorm_estimate_with_se(&fam.problem, u, k, 100_000, 2)?;
        let fact: f64 = (1..=k).map(f64::from).product();
        println!("{k:>2} {:>14.10} {:>14.10} {:>10.5} ± {:.5}", c.value, fact.sqrt().recip(), s.value, s.stderr);
    }
    Ok(())
}
