//! Slice-wise compressed-sensing baseline ("virtual probe").
//!
//! Each `n1 x n2` slice is modeled as a sparse combination of orthonormal
//! 2-D DCT-II basis functions. With `D1`, `D2` the DCT matrices (rows are
//! basis vectors), a coefficient array `C` synthesizes the slice
//! `S = D1^T C D2`; analysis is `C = D1 S D2^T`. The coefficients are found
//! by l1-regularized least squares on the observed sites,
//! `min 1/2 ||P_Omega(D1^T C D2) - y||^2 + lambda ||C||_1`, solved with a
//! monotone FISTA. Because synthesis is orthonormal and subsampling drops
//! rows of the identity, the gradient's Lipschitz constant is 1.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};
use crate::tensor::{DenseTensor, ObservationSet};

/// Orthonormal DCT-II matrix: row 1 is `1/sqrt(n)`, row `p > 1` has entry
/// `sqrt(2/n) cos(pi (p-1) (2q-1) / (2n))` in column `q` (1-based).
pub fn dct_matrix(n: usize) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::arg("DCT size must be at least 1"));
    }
    let nf = n as f64;
    Ok(DMatrix::from_fn(n, n, |p, q| {
        if p == 0 {
            1.0 / nf.sqrt()
        } else {
            (2.0 / nf).sqrt() * (std::f64::consts::PI * p as f64 * (2 * q + 1) as f64 / (2.0 * nf)).cos()
        }
    }))
}

/// The pair of DCT matrices for `n1 x n2` slices.
#[derive(Debug, Clone)]
pub struct DctBasis2D {
    d1: DMatrix<f64>,
    d2: DMatrix<f64>,
}

impl DctBasis2D {
    pub fn new(n1: usize, n2: usize) -> Result<Self> {
        Ok(DctBasis2D {
            d1: dct_matrix(n1)?,
            d2: dct_matrix(n2)?,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.d1.nrows(), self.d2.nrows())
    }

    /// Coefficients of a slice.
    pub fn analysis(&self, slice: &DMatrix<f64>) -> DMatrix<f64> {
        &self.d1 * slice * self.d2.transpose()
    }

    /// Slice from coefficients.
    pub fn synthesis(&self, coef: &DMatrix<f64>) -> DMatrix<f64> {
        self.d1.transpose() * coef * &self.d2
    }
}

/// A real linear map with an explicit adjoint.
pub trait LinearOperator {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64>;
}

/// Wraps a pair of closures as a [`LinearOperator`].
pub struct FnOperator<F, G> {
    pub input_len: usize,
    pub output_len: usize,
    pub forward: F,
    pub adjoint: G,
}

impl<F, G> LinearOperator for FnOperator<F, G>
where
    F: Fn(&[f64]) -> Vec<f64>,
    G: Fn(&[f64]) -> Vec<f64>,
{
    fn input_len(&self) -> usize {
        self.input_len
    }
    fn output_len(&self) -> usize {
        self.output_len
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (self.forward)(x)
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        (self.adjoint)(y)
    }
}

impl LinearOperator for DMatrix<f64> {
    fn input_len(&self) -> usize {
        self.ncols()
    }
    fn output_len(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (self * nalgebra::DVector::from_column_slice(x)).as_slice().to_vec()
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        (self.transpose() * nalgebra::DVector::from_column_slice(y)).as_slice().to_vec()
    }
}

/// `coefficients -> observed slice values`: 2-D DCT synthesis followed by
/// sampling at the given 0-based sites. Coefficients are flattened
/// row-major (`c[p * n2 + q]`).
#[derive(Debug, Clone)]
pub struct SubsampledDct {
    basis: DctBasis2D,
    sites: Vec<(usize, usize)>,
}

impl SubsampledDct {
    pub fn new(basis: DctBasis2D, sites: Vec<(usize, usize)>) -> Result<Self> {
        let (n1, n2) = basis.shape();
        if sites.iter().any(|&(a, b)| a >= n1 || b >= n2) {
            return Err(Error::arg("sample site outside the slice"));
        }
        Ok(SubsampledDct { basis, sites })
    }

    fn to_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let (n1, n2) = self.basis.shape();
        DMatrix::from_row_slice(n1, n2, x)
    }
}

impl LinearOperator for SubsampledDct {
    fn input_len(&self) -> usize {
        let (n1, n2) = self.basis.shape();
        n1 * n2
    }
    fn output_len(&self) -> usize {
        self.sites.len()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let s = self.basis.synthesis(&self.to_matrix(x));
        self.sites.iter().map(|&(a, b)| s[(a, b)]).collect()
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        let (n1, n2) = self.basis.shape();
        let mut s = DMatrix::zeros(n1, n2);
        for (&(a, b), &v) in self.sites.iter().zip(y) {
            s[(a, b)] += v;
        }
        let c = self.basis.analysis(&s);
        let mut out = Vec::with_capacity(n1 * n2);
        for p in 0..n1 {
            for q in 0..n2 {
                out.push(c[(p, q)]);
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Randomized probe of `<A x, y> = <x, A^T y>`; returns the relative gap.
pub fn adjoint_gap(op: &dyn LinearOperator, seed: u64) -> f64 {
    let mut rng = stream_rng(seed, stream::PROBE, 0);
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let x = draw(op.input_len());
    let y = draw(op.output_len());
    let ax = op.apply(&x);
    let aty = op.apply_adjoint(&y);
    let scale = norm(&ax) * norm(&y) + norm(&x) * norm(&aty);
    if scale == 0.0 {
        return 0.0;
    }
    (dot(&ax, &y) - dot(&x, &aty)).abs() / scale
}

/// Largest eigenvalue of `A^T A` by power iteration, inflated by 2% so the
/// step stays admissible.
pub fn estimate_lipschitz(op: &dyn LinearOperator, seed: u64) -> f64 {
    let mut rng = stream_rng(seed, stream::PROBE, 1);
    let mut x: Vec<f64> = (0..op.input_len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut est = 0.0;
    for _ in 0..200 {
        let n = norm(&x);
        if n == 0.0 {
            return 0.0;
        }
        x.iter_mut().for_each(|v| *v /= n);
        let next = op.apply_adjoint(&op.apply(&x));
        let new_est = dot(&x, &next);
        x = next;
        if (new_est - est).abs() <= 1e-10 * new_est.abs() {
            est = new_est;
            break;
        }
        est = new_est;
    }
    est * 1.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig {
    /// l1 weight, `>= 0`.
    pub lambda: f64,
    pub max_iters: usize,
    /// Stop when an accepted proximal-gradient step is shorter than this
    /// fraction of the iterate's norm.
    pub tol: f64,
    /// Lipschitz constant of the gradient; estimated when absent.
    pub lipschitz: Option<f64>,
    /// Run the randomized adjoint check before solving.
    pub check_adjoint: bool,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            lambda: 0.0,
            max_iters: 2000,
            tol: 1e-8,
            lipschitz: None,
            check_adjoint: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LassoSolution {
    pub coef: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every iteration (never increasing).
    pub objective_trace: Vec<f64>,
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn lasso_objective(residual: &[f64], coef: &[f64], lambda: f64) -> f64 {
    0.5 * dot(residual, residual) + lambda * coef.iter().map(|c| c.abs()).sum::<f64>()
}

/// Optimality violation of `coef` for `min 1/2||A c - y||^2 + lambda||c||_1`:
/// the largest of `|g_i + lambda sign(c_i)|` on the support and
/// `max(|g_i| - lambda, 0)` off it, with `g = A^T (A c - y)`.
pub fn kkt_residual(op: &dyn LinearOperator, y: &[f64], coef: &[f64], lambda: f64) -> f64 {
    let r: Vec<f64> = op.apply(coef).iter().zip(y).map(|(a, b)| a - b).collect();
    let g = op.apply_adjoint(&r);
    g.iter()
        .zip(coef)
        .map(|(&gi, &ci)| {
            if ci != 0.0 {
                (gi + lambda * ci.signum()).abs()
            } else {
                (gi.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Monotone FISTA for the lasso. Momentum restarts whenever a proximal step
/// would raise the objective, so the objective never increases.
pub fn fista_lasso(op: &dyn LinearOperator, y: &[f64], cfg: &LassoConfig) -> Result<LassoSolution> {
    if !(cfg.lambda >= 0.0) || !cfg.lambda.is_finite() {
        return Err(Error::arg(format!("lambda must be non-negative, got {}", cfg.lambda)));
    }
    if cfg.max_iters == 0 {
        return Err(Error::arg("max_iters must be at least 1"));
    }
    if y.len() != op.output_len() {
        return Err(Error::arg(format!(
            "{} observations for an operator with {} outputs",
            y.len(),
            op.output_len()
        )));
    }
    if cfg.check_adjoint {
        let gap = adjoint_gap(op, 0);
        if gap > 1e-8 {
            return Err(Error::Adjoint { gap });
        }
    }
    let n = op.input_len();
    let lip = match cfg.lipschitz {
        Some(l) if l > 0.0 => l,
        Some(l) => return Err(Error::arg(format!("Lipschitz constant must be positive, got {l}"))),
        None => estimate_lipschitz(op, 0),
    };
    let mut x = vec![0.0; n];
    if lip == 0.0 {
        // A = 0: the minimizer is c = 0.
        let obj = 0.5 * dot(y, y);
        return Ok(LassoSolution {
            coef: x,
            objective: obj,
            iterations: 0,
            converged: true,
            objective_trace: vec![obj],
        });
    }
    let step = 1.0 / lip;
    let thresh = cfg.lambda * step;

    let mut ax = vec![0.0; y.len()];
    let resid_x: Vec<f64> = ax.iter().zip(y).map(|(a, b)| a - b).collect();
    let mut f_x = lasso_objective(&resid_x, &x, cfg.lambda);
    let mut yk = x.clone();
    let mut ayk = ax.clone();
    let mut t = 1.0f64;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=cfg.max_iters {
        iterations = it;
        let resid: Vec<f64> = ayk.iter().zip(y).map(|(a, b)| a - b).collect();
        let grad = op.apply_adjoint(&resid);
        let z: Vec<f64> = yk
            .iter()
            .zip(&grad)
            .map(|(v, g)| soft_threshold(v - step * g, thresh))
            .collect();
        let az = op.apply(&z);
        let resid_z: Vec<f64> = az.iter().zip(y).map(|(a, b)| a - b).collect();
        let f_z = lasso_objective(&resid_z, &z, cfg.lambda);
        if f_z <= f_x {
            // Length of the proximal-gradient step; zero exactly at a minimizer.
            let step_len = z.iter().zip(&yk).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let change = step_len / norm(&z).max(f64::MIN_POSITIVE);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            yk = z.iter().zip(&x).map(|(zi, xi)| zi + beta * (zi - xi)).collect();
            ayk = az.iter().zip(&ax).map(|(zi, xi)| zi + beta * (zi - xi)).collect();
            x = z;
            ax = az;
            f_x = f_z;
            t = t_next;
            trace.push(f_x);
            if change <= cfg.tol {
                converged = true;
                break;
            }
        } else {
            t = 1.0;
            yk = x.clone();
            ayk = ax.clone();
            trace.push(f_x);
        }
    }
    Ok(LassoSolution {
        coef: x,
        objective: f_x,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// How the l1 weight of a slice solve is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum LambdaRule {
    Fixed { value: f64 },
    /// `fraction * ||A^T y||_inf`; the default fraction is 0.01.
    Fraction { fraction: f64 },
    /// k-fold cross-validation over `||A^T y||_inf * grid[i]`.
    CrossValidate { folds: usize, grid: Vec<f64> },
}

impl LambdaRule {
    /// Five folds over fractions `1e-1 .. 1e-4` (log spaced, 7 points).
    pub fn default_cross_validation() -> Self {
        LambdaRule::CrossValidate {
            folds: 5,
            grid: (0..7).map(|i| 10f64.powf(-1.0 - 0.5 * i as f64)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VpConfig {
    pub lambda: LambdaRule,
    pub max_iters: usize,
    pub tol: f64,
    /// Seeds the cross-validation folds.
    pub seed: u64,
    /// Worker threads for slice-parallel stacks; 0 runs sequentially.
    pub threads: usize,
}

impl Default for VpConfig {
    fn default() -> Self {
        VpConfig {
            lambda: LambdaRule::Fraction { fraction: 0.01 },
            max_iters: 2000,
            tol: 1e-8,
            seed: 0,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SliceRecovery {
    pub slice: DMatrix<f64>,
    /// DCT coefficients, `n1 x n2`.
    pub coefficients: DMatrix<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn slice_problem(obs: &ObservationSet) -> Result<(SubsampledDct, Vec<f64>)> {
    if obs.order() != 2 {
        return Err(Error::arg("slice recovery needs order-2 observations"));
    }
    let (n1, n2) = (obs.dims()[0], obs.dims()[1]);
    let sites = obs.iter().map(|(idx, _)| (idx[0] - 1, idx[1] - 1)).collect();
    let op = SubsampledDct::new(DctBasis2D::new(n1, n2)?, sites)?;
    Ok((op, obs.values().to_vec()))
}

fn solve_fixed(op: &SubsampledDct, y: &[f64], lambda: f64, cfg: &VpConfig) -> Result<LassoSolution> {
    fista_lasso(
        op,
        y,
        &LassoConfig {
            lambda,
            max_iters: cfg.max_iters,
            tol: cfg.tol,
            lipschitz: Some(1.0),
            check_adjoint: false,
        },
    )
}

fn cross_validate(obs: &ObservationSet, folds: usize, grid: &[f64], lambda_max: f64, cfg: &VpConfig) -> Result<f64> {
    if folds < 2 || grid.is_empty() {
        return Err(Error::arg("cross-validation needs >= 2 folds and a non-empty grid"));
    }
    let n = obs.len();
    if n < folds {
        return Ok(lambda_max * grid[grid.len() / 2]);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(cfg.seed, stream::CV, 0));
    let (n1, n2) = (obs.dims()[0], obs.dims()[1]);
    let basis = DctBasis2D::new(n1, n2)?;
    let site = |e: usize| (obs.index(e)[0] - 1, obs.index(e)[1] - 1);

    let mut best = (f64::INFINITY, lambda_max * grid[0]);
    for &frac in grid {
        let lambda = lambda_max * frac;
        let mut err = 0.0;
        for f in 0..folds {
            let (held, kept): (Vec<usize>, Vec<usize>) = order.iter().enumerate().fold(
                (Vec::new(), Vec::new()),
                |(mut h, mut k), (pos, &e)| {
                    if pos % folds == f {
                        h.push(e);
                    } else {
                        k.push(e);
                    }
                    (h, k)
                },
            );
            let op = SubsampledDct::new(basis.clone(), kept.iter().map(|&e| site(e)).collect())?;
            let y: Vec<f64> = kept.iter().map(|&e| obs.value(e)).collect();
            let sol = solve_fixed(&op, &y, lambda, cfg)?;
            let slice = basis.synthesis(&DMatrix::from_row_slice(n1, n2, &sol.coef));
            err += held
                .iter()
                .map(|&e| {
                    let (a, b) = site(e);
                    (slice[(a, b)] - obs.value(e)).powi(2)
                })
                .sum::<f64>();
        }
        if err < best.0 {
            best = (err, lambda);
        }
    }
    Ok(best.1)
}

/// Recovers one `n1 x n2` slice from its observed sites.
pub fn vp_recover_slice(obs: &ObservationSet, cfg: &VpConfig) -> Result<SliceRecovery> {
    let (op, y) = slice_problem(obs)?;
    let lambda_max = op.apply_adjoint(&y).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let lambda = match &cfg.lambda {
        LambdaRule::Fixed { value } => *value,
        LambdaRule::Fraction { fraction } => fraction * lambda_max,
        LambdaRule::CrossValidate { folds, grid } => cross_validate(obs, *folds, grid, lambda_max, cfg)?,
    };
    let sol = solve_fixed(&op, &y, lambda, cfg)?;
    let (n1, n2) = (obs.dims()[0], obs.dims()[1]);
    let coefficients = DMatrix::from_row_slice(n1, n2, &sol.coef);
    Ok(SliceRecovery {
        slice: op.basis.synthesis(&coefficients),
        coefficients,
        lambda,
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

#[derive(Debug, Clone)]
pub struct StackRecovery {
    pub tensor: DenseTensor,
    /// One entry per slice; `None` for slices without observations, which
    /// are returned as zeros.
    pub slices: Vec<Option<SliceRecovery>>,
}

impl StackRecovery {
    /// 1-based indices of slices that had no observations.
    pub fn empty_slices(&self) -> Vec<usize> {
        self.slices
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_none())
            .map(|(i, _)| i + 1)
            .collect()
    }
}

/// Recovers an order-3 tensor slice by slice along mode 3.
pub fn vp_recover_stack(obs: &ObservationSet, cfg: &VpConfig) -> Result<StackRecovery> {
    if obs.order() != 3 {
        return Err(Error::arg("stack recovery needs order-3 observations"));
    }
    let (n1, n2, n3) = (obs.dims()[0], obs.dims()[1], obs.dims()[2]);
    let solve = |i3: usize| -> Result<Option<SliceRecovery>> {
        match obs.frontal_slice(i3)? {
            None => Ok(None),
            Some(s) => vp_recover_slice(&s, cfg)
                .map(Some)
                .map_err(|e| Error::Numerical(format!("slice {i3}: {e}"))),
        }
    };
    let results: Vec<Result<Option<SliceRecovery>>> = if cfg.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
        pool.install(|| (1..=n3).into_par_iter().map(solve).collect())
    } else {
        (1..=n3).map(solve).collect()
    };
    let slices = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mats: Vec<DMatrix<f64>> = slices
        .iter()
        .map(|s| s.as_ref().map_or_else(|| DMatrix::zeros(n1, n2), |s| s.slice.clone()))
        .collect();
    Ok(StackRecovery {
        tensor: DenseTensor::from_frontal_slices(&mats)?,
        slices,
    })
}
