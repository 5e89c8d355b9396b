use kestenlab::batch::SampleBatch;
use kestenlab::env::Environment;
use kestenlab::grid::build_grid;
use kestenlab::recursion::{birkhoff_sums, sample_stationary, PathConfig, SeriesConfig};
use kestenlab::rng::substream;
use kestenlab::spectral::solve_kappa;
use kestenlab::stable::{empirical_cf, fit_stable_law, stable_fit_check, RadialSettings, StableConfig};
use kestenlab::tails::{check_product_structure, estimate_sigma, norm_thresholds};
use rand_distr::{Distribution, StandardNormal};

#[test]
fn gaussian_samples_fail_the_product_check() {
    let mut rng = substream(40, 0);
    let xs: Vec<f64> = (0..200_000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let samples = SampleBatch::from_scalars(xs);
    let grid = build_grid(1, 2).unwrap();
    let th = norm_thresholds(&samples, &[0.02, 0.005]);
    let ps = check_product_structure(&samples, 1.0, th[0], th[1], &grid).unwrap();
    assert!(ps.radial_error() > 1.0, "{ps:?}");
    // no stable index either: the fitted index keeps growing with the threshold
    assert!(ps.radial_index_upper > ps.radial_index);
}

#[test]
fn cf_deviation_does_not_grow_with_n() {
    let env = Environment::scalar_two_point();
    let grid = build_grid(1, 2).unwrap();
    let sol = solve_kappa(&env, &grid, (0.2, 3.0), 10_000, 1).unwrap();
    let st = sample_stationary(&env, &SeriesConfig::adaptive(1e-12, 2), 200_000).unwrap();
    let u = norm_thresholds(&st, &[0.01])[0];
    let sigma = estimate_sigma(&st, sol.kappa, env.q_symmetric, u, &grid).unwrap();
    let cfg = StableConfig {
        w_draws: 20_000,
        truncation: SeriesConfig::adaptive(1e-12, 3),
        radial: RadialSettings::default(),
    };
    let law = fit_stable_law(&env, sol.kappa, &sigma, &st, &grid.points, &cfg).unwrap();
    let s: Vec<f64> = (1..=20).map(|i| 0.1 * f64::from(i)).collect();
    let replicas = 4000;
    let floor = 2.0 * 2.0 / (replicas as f64).sqrt();
    let mut last = f64::INFINITY;
    for (i, n) in [1usize << 10, 1 << 12, 1 << 14].into_iter().enumerate() {
        let sums = birkhoff_sums(&env, &PathConfig::new(n, vec![0.0], replicas, 50 + i as u64)).unwrap();
        let dev = stable_fit_check(&empirical_cf(&sums, n, &law, &s), &law).unwrap().sup_deviation;
        assert!(dev <= last + floor, "n = {n}: {dev} after {last}");
        last = dev;
    }
    assert!(last < 0.15);
}
