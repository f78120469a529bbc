mod support;

use psnis::denoiser::{draw_cluster_samples, mmse_estimate, select_cluster, SampleStream};
use psnis::poisson_likelihood::poisson_loglik_slices;
use psnis::{denoise_patch, DenoiseConfig, NoisyPatch, SamplerState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::*;

const FLOOR: f64 = 1e-6;

fn random_pool(rng: &mut ChaCha8Rng, n: usize, m: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..m).map(|_| rng.gen_range(lo..hi)).collect()).collect()
}

fn state(i: u64) -> SamplerState {
    SamplerState { seed: 99, patch_index: i }
}

#[test]
fn loglik_matches_extended_precision_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let x: Vec<f64> = (0..8).map(|_| rng.gen_range(0.1..20.0)).collect();
        let y: Vec<u32> = (0..8).map(|_| rng.gen_range(0..=60)).collect();
        let got = poisson_loglik_slices(&y, &x, FLOOR).unwrap();
        let oracle: f64 = poisson_loglik_hp(&y, &x, FLOOR).to_f64();
        assert!((got - oracle).abs() < 1e-10, "{got} vs {oracle}");
    }
}

#[test]
fn six_member_pool_posterior_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..50 {
        let pool = random_pool(&mut rng, 6, 2, 0.1, 12.0);
        let model = vector_model(&[pool.clone()], FLOOR);
        let y: Vec<u32> = (0..2).map(|_| rng.gen_range(0..15)).collect();
        let (est, ess) = mmse_estimate(&NoisyPatch::new(y.clone(), 0, 0), 0, &model, 6, state(trial), 1).unwrap();
        let oracle = posterior_mean_hp(&y, &pool, FLOOR);
        for d in 0..2 {
            assert!((est[d] - oracle[d]).abs() < 1e-10, "{est:?} vs {oracle:?}");
        }
        assert!((1.0..=6.0 + 1e-9).contains(&ess));
    }
}

#[test]
fn full_pool_scores_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..50 {
        let pools: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|k| {
                let n = rng.gen_range(2..=10);
                random_pool(&mut rng, n, 2, 0.5 + 4.0 * k as f64, 6.0 + 4.0 * k as f64)
            })
            .collect();
        let model = vector_model(&pools, FLOOR);
        let y: Vec<u32> = (0..2).map(|_| rng.gen_range(0..20)).collect();
        let u: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..15.0)).collect();
        let choice = select_cluster(&NoisyPatch::new(y.clone(), 0, 0), &u, &model, 10, state(trial), 1).unwrap();
        let oracle: Vec<f64> = pools.iter().map(|p| expected_sq_error_hp(&y, &u, p, FLOOR)).collect();
        for k in 0..3 {
            assert!((choice.scores[k] - oracle[k]).abs() < 1e-10, "{:?} vs {oracle:?}", choice.scores);
        }
        assert_eq!(choice.cluster, argmin(&oracle));
    }
}

#[test]
fn alternation_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..50 {
        let pools: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|k| random_pool(&mut rng, 8, 2, 0.5 + 3.0 * k as f64, 5.0 + 3.0 * k as f64))
            .collect();
        let model = vector_model(&pools, FLOOR);
        let y: Vec<u32> = (0..2).map(|_| rng.gen_range(0..14)).collect();
        let cfg = DenoiseConfig { n1: 10, n2: 10, outer_iters: 2, ..DenoiseConfig::new(20.0, 0) };
        let got = denoise_patch(&NoisyPatch::new(y.clone(), 0, 0), &model, &cfg, state(trial)).unwrap();

        let mut u: Vec<f64> = y.iter().map(|&c| f64::from(c)).collect();
        let mut k = 0;
        for _ in 0..2 {
            let scores: Vec<f64> = pools.iter().map(|p| expected_sq_error_hp(&y, &u, p, FLOOR)).collect();
            k = argmin(&scores);
            u = posterior_mean_hp(&y, &pools[k], FLOOR);
        }
        assert_eq!(got.cluster, k);
        for d in 0..2 {
            assert!((got.values[d] - u[d]).abs() < 1e-10);
        }
    }
}

#[test]
fn subsampled_selection_matches_replay() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pools: Vec<Vec<Vec<f64>>> = (0..3)
        .map(|k| random_pool(&mut rng, 200, 4, 1.0 + 2.0 * k as f64, 6.0 + 2.0 * k as f64))
        .collect();
    let model = vector_model(&pools, FLOOR);
    for i in 0..40u64 {
        let y: Vec<u32> = (0..4).map(|_| rng.gen_range(0..12)).collect();
        let u: Vec<f64> = y.iter().map(|&c| f64::from(c)).collect();
        let round = 1 + (i as usize % 3);
        let choice = select_cluster(&NoisyPatch::new(y.clone(), 0, 0), &u, &model, 30, state(i), round).unwrap();
        let scores: Vec<f64> = (0..3)
            .map(|k| {
                let drawn: Vec<Vec<f64>> = draw_cluster_samples(&model, k, 30, state(i), round, SampleStream::ClusterSelection)
                    .unwrap()
                    .into_iter()
                    .map(|j| pools[k][j].clone())
                    .collect();
                assert_eq!(drawn.len(), 30);
                expected_sq_error_hp(&y, &u, &drawn, FLOOR)
            })
            .collect();
        assert_eq!(choice.cluster, argmin(&scores));
        for k in 0..3 {
            assert!((choice.scores[k] - scores[k]).abs() < 1e-9 * scores[k].max(1.0));
        }
    }
}

#[test]
fn estimate_stays_within_drawn_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pool = random_pool(&mut rng, 500, 4, 0.0, 9.0);
    let model = vector_model(&[pool.clone()], FLOOR);
    for i in 0..40u64 {
        let y: Vec<u32> = (0..4).map(|_| rng.gen_range(0..12)).collect();
        let (est, _) = mmse_estimate(&NoisyPatch::new(y, 0, 0), 0, &model, 50, state(i), 1).unwrap();
        let drawn = draw_cluster_samples(&model, 0, 50, state(i), 1, SampleStream::Estimate).unwrap();
        for d in 0..4 {
            let lo = drawn.iter().map(|&j| pool[j][d]).fold(f64::INFINITY, f64::min);
            let hi = drawn.iter().map(|&j| pool[j][d]).fold(f64::NEG_INFINITY, f64::max);
            assert!(est[d] >= lo - 1e-12 && est[d] <= hi + 1e-12);
        }
    }
}

#[test]
fn separated_pools_select_the_source_cluster() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let low = random_pool(&mut rng, 400, 4, 1.0, 3.0);
    let high = random_pool(&mut rng, 400, 4, 40.0, 45.0);
    let model = vector_model(&[high.clone(), low.clone()], FLOOR);
    let cfg = DenoiseConfig { n1: 100, n2: 20, outer_iters: 2, ..DenoiseConfig::new(45.0, 0) };
    for i in 0..30u64 {
        let source = &low[rng.gen_range(0..400)];
        let y: Vec<u32> = source.iter().map(|&v| v.round() as u32).collect();
        let y = NoisyPatch::new(y, 0, 0);
        let est = denoise_patch(&y, &model, &cfg, state(i)).unwrap();
        assert_eq!(est.cluster_history[0], 1);
        assert_eq!(est.cluster, 1);
        let replay = select_cluster(&y, &y.as_reals(), &model, 20, state(i), 1).unwrap();
        assert_eq!(replay.cluster, 1);
    }
}
