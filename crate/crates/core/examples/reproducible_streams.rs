//! Counter-based random streams: every node of the recursion tree owns its
//! draws, so results do not depend on evaluation order or thread count.
//!
//! cargo run --release --example reproducible_streams

use picard_mlp::mlp::with_workers;
use picard_mlp::rng::{normal_vector, uniform01, IndexKey, StreamKey};
use picard_mlp::{evaluate_replicated, make_family, FamilyTag, MlpConfig, MultiIndex};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let node = MultiIndex::new(vec![3, 2, -7])?;
    println!("node {node}:");
    println!("  uniform  {:.12}", uniform01(&StreamKey::new(42, node.clone(), 0)));
    println!("  normals  {:?}", normal_vector(&StreamKey::new(42, node.clone(), 1), 3));

    // the incremental key used inside the estimator agrees with the full path
    let inc = IndexKey::from_index(42, &MultiIndex::replicate(3)).child(2, -7);
    assert_eq!(inc, IndexKey::from_index(42, &node));

    let fam = make_family(FamilyTag::ExponentialLinearF, 4, 1.0, &Default::default())?;
    let cfg = MlpConfig::new(3, 3, 42);
    let run = |workers| {
        evaluate_replicated(&fam.problem, &cfg, 0.0, &[0.0; 4], 256, workers)
            .map(|v| v.iter().map(|e| e.value.to_bits()).collect::<Vec<_>>())
    };
    let serial = run(1)?;
    let parallel = run(4)?;
    println!("256 replications bit-identical on 1 and 4 workers: {}", serial == parallel);

    let in_pool = with_workers(2, rayon::current_num_threads)?;
    println!("dedicated pool size: {in_pool}");
    Ok(())
}
