use picard_mlp::rng::{brownian_increment, normal_vector, uniform01, IndexKey, MultiIndex, StreamKey};
use statrs::distribution::{ContinuousCDF, Normal};

fn normals_across_nodes(seed: u64, count: usize) -> Vec<f64> {
    let base = IndexKey::from_index(seed, &MultiIndex::root());
    let mut out = Vec::with_capacity(count);
    let mut buf = [0.0; 4];
    for s in 0..(count / 4) as i64 {
        base.child(1, s).stream(1).fill_normals(&mut buf);
        out.extend_from_slice(&buf);
    }
    out
}

fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

// Critical value of the one-sample KS statistic at level 0.001 is about 1.95/√n.
const KS_001: f64 = 1.95;

#[test]
fn normals_have_unit_moments() {
    let xs = normals_across_nodes(1, 200_000);
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let kurt = xs.iter().map(|x| x.powi(4)).sum::<f64>() / n;
    assert!(mean.abs() < 4.0 / n.sqrt(), "mean {mean}");
    // var(s²) = 2/(n−1) for Gaussian samples
    assert!((var - 1.0).abs() < 4.0 * (2.0 / n).sqrt(), "var {var}");
    // var(x⁴) = 105 − 9 = 96
    assert!((kurt - 3.0).abs() < 4.0 * (96.0 / n).sqrt(), "fourth moment {kurt}");
}

#[test]
fn normals_pass_kolmogorov_smirnov() {
    let xs = normals_across_nodes(2, 100_000);
    let n = xs.len() as f64;
    let std = Normal::standard();
    let d = ks_statistic(xs, |x| std.cdf(x));
    assert!(d < KS_001 / n.sqrt(), "D = {d}");
}

#[test]
fn uniforms_pass_kolmogorov_smirnov() {
    let us: Vec<f64> = (0..100_000)
        .map(|s| uniform01(&StreamKey::new(3, MultiIndex::new(vec![4, s]).unwrap(), 0)))
        .collect();
    assert!(us.iter().all(|u| (0.0..1.0).contains(u)));
    let n = us.len() as f64;
    let d = ks_statistic(us, |u| u.clamp(0.0, 1.0));
    assert!(d < KS_001 / n.sqrt(), "D = {d}");
}

#[test]
fn sibling_streams_agree_in_distribution() {
    // two-sample KS between level 1 and level 2 children of the same node
    let base = IndexKey::from_index(5, &MultiIndex::replicate(9));
    let draw = |level: i64| -> Vec<f64> {
        let mut v = vec![0.0; 1];
        (0..40_000)
            .map(|s| {
                base.child(level, s).stream(1).fill_normals(&mut v);
                v[0]
            })
            .collect()
    };
    let mut a = draw(1);
    let mut b = draw(2);
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    let n = a.len() as f64;
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / n).abs());
    }
    // two-sample critical value at 0.001 with equal sizes: 1.95·√(2/n)
    assert!(d < KS_001 * (2.0 / n).sqrt(), "D = {d}");
}

#[test]
fn coordinates_and_streams_are_uncorrelated() {
    let n = 50_000;
    let mut sum_within = 0.0;
    let mut sum_across = 0.0;
    let mut sum_time_space = 0.0;
    for s in 0..n {
        let idx = MultiIndex::new(vec![1, 2, s]).unwrap();
        let x = normal_vector(&StreamKey::new(6, idx.clone(), 1), 2);
        let y = normal_vector(&StreamKey::new(6, idx.child(3, 0), 1), 1);
        let u = uniform01(&StreamKey::new(6, idx, 0));
        sum_within += x[0] * x[1];
        sum_across += x[0] * y[0];
        // centered uniform has variance 1/12
        sum_time_space += x[0] * (u - 0.5) * 12f64.sqrt();
    }
    let bound = 4.0 / (n as f64).sqrt();
    for (name, s) in [("within", sum_within), ("across", sum_across), ("time/space", sum_time_space)] {
        let corr = s / n as f64;
        assert!(corr.abs() < bound, "{name} correlation {corr}");
    }
}

#[test]
fn brownian_increment_variance_scales_with_dt() {
    let dt = 0.37;
    let n = 50_000;
    let mut sq = 0.0;
    for s in 0..n {
        let w = brownian_increment(&StreamKey::new(8, MultiIndex::replicate(s), 1), 3, dt).unwrap();
        sq += w.iter().map(|v| v * v).sum::<f64>();
    }
    let var = sq / (3.0 * n as f64);
    // var of the per-coordinate sample variance: 2dt²/(3n)
    assert!((var - dt).abs() < 4.0 * dt * (2.0 / (3.0 * n as f64)).sqrt(), "var {var}");
    assert!(brownian_increment(&StreamKey::new(8, MultiIndex::root(), 1), 3, -1.0).is_err());
}

#[test]
fn distinct_seeds_give_distinct_streams() {
    let idx = MultiIndex::new(vec![1, 0, 5]).unwrap();
    let a = normal_vector(&StreamKey::new(1, idx.clone(), 1), 8);
    let b = normal_vector(&StreamKey::new(2, idx.clone(), 1), 8);
    let c = normal_vector(&StreamKey::new(1, idx, 2), 8);
    assert_ne!(a, b);
    assert_ne!(a, c);
}
