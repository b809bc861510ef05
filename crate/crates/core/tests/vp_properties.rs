use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use tenfill::synth::{observe, random_cp_tensor, sample_mask, sample_mask_with};
use tenfill::tensor::relative_error;
use tenfill::vp::{
    adjoint_gap, dct_matrix, fista_lasso, kkt_residual, vp_recover_slice, vp_recover_stack, DctBasis2D, LambdaRule,
    LassoConfig, SubsampledDct, VpConfig,
};
use tenfill::{DenseTensor, MultiIndex, ObservationSet};

fn random_matrix(n1: usize, n2: usize, seed: u64) -> DMatrix<f64> {
    let (_, t) = random_cp_tensor(&[n1, n2, 1], n1.min(n2), seed).unwrap();
    t.frontal_slice(1).unwrap()
}

fn lasso_objective(a: &DMatrix<f64>, y: &DVector<f64>, c: &DVector<f64>, lambda: f64) -> f64 {
    0.5 * (a * c - y).norm_squared() + lambda * c.abs().sum()
}

/// Exact lasso minimizer by enumerating every sign pattern: solve the
/// stationarity system on the support and keep the feasible candidate with
/// the smallest objective.
fn lasso_active_set(a: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let n = a.ncols();
    let mut best = (f64::INFINITY, DVector::zeros(n));
    let patterns = 3usize.pow(n as u32);
    for code in 0..patterns {
        let mut signs = vec![0.0; n];
        let mut c = code;
        for s in signs.iter_mut() {
            *s = (c % 3) as f64 - 1.0;
            c /= 3;
        }
        let support: Vec<usize> = (0..n).filter(|&i| signs[i] != 0.0).collect();
        let mut coef = DVector::zeros(n);
        if !support.is_empty() {
            let sub = a.select_columns(&support);
            let rhs = sub.transpose() * y - DVector::from_iterator(support.len(), support.iter().map(|&i| lambda * signs[i]));
            let Some(sol) = (sub.transpose() * &sub).lu().solve(&rhs) else { continue };
            if support.iter().zip(sol.iter()).any(|(&i, &v)| v * signs[i] <= 0.0) {
                continue;
            }
            for (&i, &v) in support.iter().zip(sol.iter()) {
                coef[i] = v;
            }
        }
        let grad = a.transpose() * (a * &coef - y);
        if (0..n).any(|i| signs[i] == 0.0 && grad[i].abs() > lambda + 1e-12) {
            continue;
        }
        let obj = lasso_objective(a, y, &coef, lambda);
        if obj < best.0 {
            best = (obj, coef);
        }
    }
    best.1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dct_roundtrip(n1 in 1usize..=64, n2 in 1usize..=64, seed in any::<u64>()) {
        let basis = DctBasis2D::new(n1, n2).unwrap();
        let s = random_matrix(n1, n2, seed);
        let back = basis.synthesis(&basis.analysis(&s));
        prop_assert!((&back - &s).amax() <= 1e-10 * s.amax().max(1.0));
        let c = dct_matrix(n1).unwrap();
        prop_assert!((c.transpose() * &c - DMatrix::identity(n1, n1)).amax() <= 1e-10);
    }

    #[test]
    fn sensing_operator_adjoint(n1 in 1usize..=16, n2 in 1usize..=16, ratio in 0.05f64..=1.0, seed in any::<u64>()) {
        let sites: Vec<(usize, usize)> = sample_mask(&[n1, n2], ratio, seed)
            .unwrap()
            .iter()
            .map(|m| (m.as_slice()[0] - 1, m.as_slice()[1] - 1))
            .collect();
        let op = SubsampledDct::new(DctBasis2D::new(n1, n2).unwrap(), sites).unwrap();
        prop_assert!(adjoint_gap(&op, seed) <= 1e-10);
    }

    #[test]
    fn fista_objective_never_increases(rows in 3usize..=12, cols in 2usize..=10, frac in 0.001f64..0.5, seed in any::<u64>()) {
        let a = random_matrix(rows, cols, seed);
        let y = DVector::from_column_slice(random_matrix(rows, 1, seed ^ 1).as_slice());
        let lambda = frac * (a.transpose() * &y).amax();
        let sol = fista_lasso(&a, y.as_slice(), &LassoConfig { lambda, max_iters: 500, ..Default::default() }).unwrap();
        for w in sol.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn three_variable_lasso_matches_enumeration(seed in any::<u64>(), frac in 0.01f64..0.9) {
        let a = random_matrix(5, 3, seed);
        let y = DVector::from_column_slice(random_matrix(5, 1, seed ^ 7).as_slice());
        let lambda = frac * (a.transpose() * &y).amax();
        let cfg = LassoConfig { lambda, max_iters: 200_000, tol: 1e-12, ..Default::default() };
        let sol = fista_lasso(&a, y.as_slice(), &cfg).unwrap();
        let oracle = lasso_active_set(&a, &y, lambda);
        let got = DVector::from_column_slice(&sol.coef);
        prop_assert!((&got - &oracle).amax() <= 1e-6, "{got} vs {oracle}");
        prop_assert!(kkt_residual(&a, y.as_slice(), &sol.coef, lambda) <= 1e-4 * lambda.max(1.0));
    }
}

fn slice_obs(s: &DMatrix<f64>, ratio: f64, seed: u64) -> ObservationSet {
    let mask = sample_mask(&[s.nrows(), s.ncols()], ratio, seed).unwrap();
    ObservationSet::new(
        vec![s.nrows(), s.ncols()],
        mask.into_iter()
            .map(|m| {
                let v = s[(m.as_slice()[0] - 1, m.as_slice()[1] - 1)];
                (m, v)
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn sparse_slice_is_recovered_from_half_the_sites() {
    let basis = DctBasis2D::new(8, 8).unwrap();
    let mut coef = DMatrix::zeros(8, 8);
    coef[(0, 0)] = 3.0;
    coef[(1, 2)] = -1.5;
    coef[(3, 1)] = 0.8;
    let truth = basis.synthesis(&coef);
    let obs = slice_obs(&truth, 0.5, 2);
    let cfg = VpConfig { lambda: LambdaRule::Fraction { fraction: 1e-5 }, max_iters: 50_000, tol: 1e-14, ..Default::default() };
    let rec = vp_recover_slice(&obs, &cfg).unwrap();
    let err = (&rec.slice - &truth).norm() / truth.norm();
    assert!(err <= 1e-3, "error {err}");
}

#[test]
fn random_low_rank_slice_defeats_the_baseline() {
    let (_, t) = random_cp_tensor(&[30, 30, 15], 3, 1).unwrap();
    let truth = t.frontal_slice(1).unwrap();
    let obs = slice_obs(&truth, 0.1, 1);
    let rec = vp_recover_slice(&obs, &VpConfig::default()).unwrap();
    let err = (&rec.slice - &truth).norm() / truth.norm();
    assert!(err >= 0.5, "error {err}");
}

#[test]
fn smooth_stack_is_recovered_slice_by_slice() {
    let (n1, n2, n3) = (24, 24, 20);
    let truth = DenseTensor::from_fn(vec![n1, n2, n3], |i| {
        let x = (i[0] as f64 - 0.5) / n1 as f64;
        let y = (i[1] as f64 - 0.5) / n2 as f64;
        let g = 1.0 + 0.02 * i[2] as f64;
        g * (1.0 + 0.5 * (std::f64::consts::PI * x).cos() + 0.3 * (std::f64::consts::PI * y).cos() * (std::f64::consts::PI * x).cos())
    })
    .unwrap();
    let obs = observe(&truth, &sample_mask(&[n1, n2, n3], 0.3, 4).unwrap()).unwrap();
    let rec = vp_recover_stack(&obs, &VpConfig::default()).unwrap();
    let err = relative_error(&rec.tensor, &truth).unwrap();
    assert!(err < 0.1, "error {err}");
    assert!(rec.empty_slices().is_empty());
}

#[test]
fn stack_is_independent_of_thread_count() {
    let (_, t) = random_cp_tensor(&[10, 12, 6], 2, 3).unwrap();
    let obs = observe(&t, &sample_mask(&[10, 12, 6], 0.3, 3).unwrap()).unwrap();
    let seq = vp_recover_stack(&obs, &VpConfig::default()).unwrap();
    let par = vp_recover_stack(&obs, &VpConfig { threads: 3, ..Default::default() }).unwrap();
    assert_eq!(seq.tensor, par.tensor);
}

#[test]
fn cross_validation_is_seeded() {
    let (_, t) = random_cp_tensor(&[12, 12, 1], 1, 9).unwrap();
    let s = t.frontal_slice(1).unwrap();
    let obs = slice_obs(&s, 0.5, 9);
    let cfg = VpConfig { lambda: LambdaRule::default_cross_validation(), seed: 5, ..Default::default() };
    let a = vp_recover_slice(&obs, &cfg).unwrap();
    let b = vp_recover_slice(&obs, &cfg).unwrap();
    assert_eq!(a.lambda, b.lambda);
    assert_eq!(a.slice, b.slice);
    assert!(a.lambda > 0.0);
}

#[test]
fn mask_rng_helper_matches_seeded_mask() {
    let mut rng = tenfill::rng::stream_rng(4, tenfill::rng::stream::MASK, 0);
    let a: Vec<MultiIndex> = sample_mask_with(&[5, 5], 0.4, &mut rng).unwrap();
    assert_eq!(a, sample_mask(&[5, 5], 0.4, 4).unwrap());
}
