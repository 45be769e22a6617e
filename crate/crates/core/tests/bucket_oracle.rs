mod common;

use cachefair_core::{bucket_fill, Utility};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn bucket_fill_matches_projected_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xb0c4);
    let mut worst_gap = 0.0_f64;
    for case in 0..1000 {
        let buckets = random_buckets(&mut rng, 8);
        let u = random_utility(&mut rng);
        let rho = rng.random_range(0.1..5.0);
        let fill = bucket_fill(&buckets, &u, rho).unwrap();
        let oracle = subproblem_oracle(&buckets, &u, rho);
        let gap = fill.allocation.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_gap = worst_gap.max(gap);
        assert!(gap <= 1e-6, "case {case}: {:?} vs {oracle:?}", fill.allocation);
        let kkt = subproblem_kkt_violation(&buckets, &u, rho, &fill.allocation, 1e-12);
        assert!(kkt <= 1e-8, "case {case}: KKT violation {kkt}");
        // The oracle never beats the exact solution.
        assert!(
            subproblem_value(&buckets, &u, rho, &oracle) <= subproblem_value(&buckets, &u, rho, &fill.allocation) + 1e-12
        );
    }
    assert!(worst_gap < 1e-6);
}

#[test]
fn interior_components_are_rigidly_offset() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1e55);
    let mut checked = 0;
    for _ in 0..1000 {
        let buckets = random_buckets(&mut rng, 8);
        let u = random_utility(&mut rng);
        let rho = rng.random_range(0.1..5.0);
        let y = bucket_fill(&buckets, &u, rho).unwrap().allocation;
        let interior: Vec<usize> = (0..buckets.len()).filter(|&i| y[i] > 0.0 && y[i] < buckets[i].capacity).collect();
        for &i in &interior {
            for &j in &interior {
                let lhs = y[i] - y[j] - (buckets[i].coefficient - buckets[j].coefficient) / rho;
                assert!(lhs.abs() <= 1e-8, "{lhs}");
            }
        }
        checked += usize::from(interior.len() >= 2);
        // Saturated components sit at least as high as the interior level.
        let level = interior.first().map(|&i| rho * y[i] - buckets[i].coefficient);
        if let Some(level) = level {
            assert!((u.derivative(y.iter().sum()) - level).abs() < 1e-9);
        }
    }
    assert!(checked > 100, "only {checked} cases had two interior components");
}
