//! Scalar draw counts: the exact recursion, the d(5m)^n bound, the count
//! measured on a live run, and arbitrary precision once u64 overflows.
//!
//! cargo run --release --example cost_table

use picard_mlp::cost::{self, CostModel, OverflowPolicy};
use picard_mlp::{evaluate, make_family, FamilyTag, MlpConfig, MultiIndex, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("{:>5} {:>3} {:>3} {:>12} {:>12} {:>12}", "d", "n", "m", "recursion", "measured", "bound");
    for d in [1usize, 10, 100] {
        let model = CostModel::new(d)?;
        let fam = make_family(FamilyTag::ConstantTerminal, d, 1.0, &Default::default())?;
        for n in 1..=4u32 {
            let m = n as u64;
            let rv = cost::rv_recursion(&model, n, m, Variant::SignedIndex)?;
            let est = evaluate(&fam.problem, &MlpConfig::new(n, m, 0), &MultiIndex::root(), 0.0, fam.problem.xi())?;
            let bound = cost::rv_bound(d, n, m)?;
            println!("{d:>5} {n:>3} {m:>3} {rv:>12} {:>12} {bound:>12}", est.ledger.total());
        }
    }

    let model = CostModel::new(1000)?;
    let big = cost::rv_count(&model, 20, 20, Variant::SignedIndex, OverflowPolicy::BigInt)?;
    println!("\nd=1000, n=m=20: {big} draws");
    println!("without BigInt: {:?}", cost::rv_recursion(&model, 20, 20, Variant::SignedIndex).err());
    Ok(())
}
