//! Hybrid factorisation round trips on desk and subarray geometries.

use isac_core::arrays::ArrayGeometry;
use isac_core::channels::SubcarrierGrid;
use isac_core::precoder::{hybrid_factorize, random_precoder, FactorizeOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn check(geom: ArrayGeometry, n_rf: usize, streams: usize, seeds: std::ops::Range<u64>) {
    let grid = SubcarrierGrid::new(100e9, 8e9, 16).unwrap();
    for seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = random_precoder(&geom, &grid, n_rf, streams, 1e-9, 2.0, &mut rng);
        let targets = truth.full_all(&grid);
        let opts = FactorizeOptions { seed, ..FactorizeOptions::default() };
        let (p, rep) = hybrid_factorize(&targets, &grid, &geom, n_rf, 1e-9, 2.0, opts).unwrap();
        assert!(rep.residual <= 1e-6, "seed {seed}: residual {}", rep.residual);
        assert!(rep.objective_history.windows(2).all(|w| w[1] <= w[0]), "seed {seed}: objective increased");
        assert!(p.ttd.iter().all(|&t| (0.0..=1e-9).contains(&t)));
        assert!(p.ps().iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        for m in 0..grid.m_count {
            let f = p.full(m, &grid);
            let power: f64 = f.iter().map(|z| z.norm_sqr()).sum();
            assert!((power - 2.0 / 16.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn six_chain_round_trip_on_full_delay_array() {
    check(ArrayGeometry::fully_delayed(8, 8, 100e9).unwrap(), 6, 6, 0..5);
}

#[test]
fn round_trip_with_shared_subarray_delays() {
    check(ArrayGeometry::new(8, 8, 4, 2, 100e9).unwrap(), 3, 3, 0..3);
}

#[test]
fn rank_deficient_digital_reports_residual_without_failing() {
    let geom = ArrayGeometry::fully_delayed(8, 8, 100e9).unwrap();
    let grid = SubcarrierGrid::new(100e9, 8e9, 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth = random_precoder(&geom, &grid, 6, 2, 1e-9, 2.0, &mut rng);
    let (p, rep) = hybrid_factorize(&truth.full_all(&grid), &grid, &geom, 6, 1e-9, 2.0, FactorizeOptions::default()).unwrap();
    assert!(rep.residual.is_finite() && rep.residual < 1.0);
    assert!(rep.objective_history.windows(2).all(|w| w[1] <= w[0]));
    assert!(p.ttd.iter().all(|&t| (0.0..=1e-9).contains(&t)));
}
