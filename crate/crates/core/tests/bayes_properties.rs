use proptest::prelude::*;
use tenfill::bayes::{init_state, run, run_from, HyperParams, InitMode, SolverConfig, StopRule};
use tenfill::synth::{add_gaussian_noise, observe, random_cp_tensor, sample_mask, NoiseSpec};
use tenfill::tensor::{relative_error, DenseTensor};
use tenfill::ObservationSet;

fn problem(dims: &[usize], rank: usize, ratio: f64, seed: u64) -> (DenseTensor, ObservationSet) {
    let (_, truth) = random_cp_tensor(dims, rank, seed).unwrap();
    let noisy = add_gaussian_noise(&truth, NoiseSpec::SnrDb(30.0), seed).unwrap();
    let obs = observe(&noisy, &sample_mask(dims, ratio, seed).unwrap()).unwrap();
    (truth, obs)
}

fn small_problem() -> impl Strategy<Value = (Vec<usize>, usize, f64, u64)> {
    (
        prop::collection::vec(2usize..=8, 3),
        1usize..=3,
        0.3f64..0.9,
        any::<u64>(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn elbo_never_decreases_without_pruning((dims, rank, ratio, seed) in small_problem()) {
        let (_, obs) = problem(&dims, rank, ratio, seed);
        for init in [InitMode::Spectral, InitMode::Random] {
            let cfg = SolverConfig { prune_enabled: false, max_iters: 60, seed, init, ..Default::default() };
            let res = run(&obs, &HyperParams::with_max_rank(rank + 1), &cfg).unwrap();
            for w in res.elbo_trace.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-8, "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn prediction_follows_the_data_scale((dims, rank, ratio, seed) in small_problem(), k in -30i32..=30, c in 1e-3f64..1e3) {
        let (_, obs) = problem(&dims, rank, ratio, seed);
        let cfg = SolverConfig { max_iters: 40, seed, ..Default::default() };
        let hyper = HyperParams::with_max_rank(rank + 1);
        let base = run(&obs, &hyper, &cfg).unwrap();
        // Powers of two scale every intermediate exactly.
        let p = 2f64.powi(k);
        let exact = run(&obs.map_values(|v| v * p).unwrap(), &hyper, &cfg).unwrap();
        prop_assert_eq!(exact.prediction, base.prediction.scale(p));
        let other = run(&obs.map_values(|v| v * c).unwrap(), &hyper, &cfg).unwrap();
        prop_assert_eq!(other.predicted_rank, base.predicted_rank);
        let norm = base.prediction.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let gap = other.prediction.sub(&base.prediction.scale(c)).unwrap();
        let gap = gap.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(gap <= 1e-6 * c * norm.max(f64::MIN_POSITIVE), "gap {gap}");
    }

    #[test]
    fn covariances_stay_positive_definite((dims, rank, ratio, seed) in small_problem()) {
        let (_, obs) = problem(&dims, rank, ratio, seed);
        let cfg = SolverConfig { seed, ..Default::default() };
        let mut state = init_state(&obs, &HyperParams::with_max_rank(3), &cfg).unwrap();
        for sweep in 0..20 {
            for k in 0..3 {
                state.update_factor(&obs, k).unwrap();
                let (min_eig, asym) = state.covariance_health();
                prop_assert!(min_eig > 0.0, "sweep {sweep} mode {k}: eigenvalue {min_eig}");
                prop_assert!(asym <= 1e-12);
            }
            state.update_tau(&obs).unwrap();
            state.update_lambda();
            state.rebalance();
            let (min_eig, _) = state.covariance_health();
            prop_assert!(min_eig > 0.0);
            if sweep >= 2 {
                state.prune(1e-4);
            }
        }
    }

    #[test]
    fn parallel_rows_match_sequential((dims, rank, ratio, seed) in small_problem()) {
        let (_, obs) = problem(&dims, rank, ratio, seed);
        let h = HyperParams::with_max_rank(4);
        let seq = run(&obs, &h, &SolverConfig { seed, max_iters: 40, ..Default::default() }).unwrap();
        let par = run(&obs, &h, &SolverConfig { seed, max_iters: 40, threads: 3, ..Default::default() }).unwrap();
        prop_assert_eq!(seq.prediction, par.prediction);
        prop_assert_eq!(seq.elbo_trace, par.elbo_trace);
    }
}

#[test]
fn permuting_components_permutes_the_fit() {
    let (_, obs) = problem(&[9, 8, 7], 2, 0.5, 21);
    let cfg = SolverConfig { seed: 21, prune_enabled: false, max_iters: 200, ..Default::default() };
    let h = HyperParams::with_max_rank(3);
    let base = init_state(&obs, &h, &cfg).unwrap();
    let perm = [2, 0, 1];
    let mut permuted = base.clone();
    permuted.permute_components(&perm).unwrap();

    let a = run_from(base, &obs, &cfg).unwrap();
    let b = run_from(permuted, &obs, &cfg).unwrap();
    assert!(relative_error(&b.prediction, &a.prediction).unwrap() <= 1e-10);
    for (k, fb) in b.model.factors().iter().enumerate() {
        let fa = &a.model.factors()[k];
        for (j, &p) in perm.iter().enumerate() {
            let diff = (fb.column(j) - fa.column(p)).norm();
            assert!(diff <= 1e-8 * fa.column(p).norm().max(1.0), "mode {k} column {j}");
        }
    }
}

#[test]
fn transposing_modes_transposes_the_prediction() {
    for seed in [3, 4] {
        let (_, obs) = problem(&[12, 10, 8], 2, 0.5, seed);
        let cfg = SolverConfig { seed, tol: 1e-12, max_iters: 5000, stop_rule: StopRule::Reconstruction, ..Default::default() };
        let h = HyperParams::with_max_rank(4);
        let a = run(&obs, &h, &cfg).unwrap();
        let b = run(&obs.permute_modes(&[1, 0, 2]).unwrap(), &h, &cfg).unwrap();
        let back = b.prediction.permute_modes(&[1, 0, 2]).unwrap();
        let gap = relative_error(&back, &a.prediction).unwrap();
        assert!(gap <= 1e-8, "seed {seed}: {gap} ranks {} {} iters {} {}", a.predicted_rank, b.predicted_rank, a.iterations, b.iterations);
    }
}

#[test]
fn observed_entries_fit_no_better_than_ten_times_the_rest() {
    let (_, truth) = random_cp_tensor(&[20, 20, 10], 3, 8).unwrap();
    let mask = sample_mask(truth.dims(), 0.4, 8).unwrap();
    let obs = observe(&truth, &mask).unwrap();
    let res = run(&obs, &HyperParams::with_max_rank(6), &SolverConfig { seed: 8, ..Default::default() }).unwrap();
    let max_observed = obs
        .iter()
        .map(|(idx, y)| (res.prediction.get(idx).unwrap() - y).abs())
        .fold(0.0, f64::max);
    let scale = tenfill::tensor::frobenius_norm(&truth) / (truth.len() as f64).sqrt();
    let unobserved = relative_error(&res.prediction, &truth).unwrap() * scale;
    assert!(max_observed <= 10.0 * unobserved.max(1e-12 * scale), "{max_observed} vs {unobserved}");
}

#[test]
fn predicted_rank_never_exceeds_max_rank() {
    let (_, obs) = problem(&[20, 20, 10], 4, 0.15, 5);
    for max_rank in [1, 2, 5, 10, 15] {
        let res = run(&obs, &HyperParams::with_max_rank(max_rank), &SolverConfig { seed: 5, ..Default::default() }).unwrap();
        assert!(res.predicted_rank() >= 1 && res.predicted_rank() <= max_rank);
        assert_eq!(res.expected_lambda.len(), res.predicted_rank());
    }
}

#[test]
fn same_seed_same_result() {
    let (_, obs) = problem(&[10, 9, 8], 2, 0.4, 1);
    for init in [InitMode::Spectral, InitMode::Random] {
        let cfg = SolverConfig { seed: 77, init, ..Default::default() };
        let a = run(&obs, &HyperParams::with_max_rank(4), &cfg).unwrap();
        let b = run(&obs, &HyperParams::with_max_rank(4), &cfg).unwrap();
        assert_eq!(a.prediction, b.prediction);
        assert_eq!(a.elbo_trace, b.elbo_trace);
    }
}
