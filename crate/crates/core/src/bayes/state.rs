use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::function::gamma::{digamma, ln_gamma};

use super::{HyperParams, InitMode, SolverConfig};
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};
use crate::tensor::{unfold_column, CpModel, ObservationSet};

/// Floor applied to the Gamma rates `b` and `d(j)`.
pub const RATE_FLOOR: f64 = 1e-12;

const JITTER_START: f64 = 1e-12;
const JITTER_MAX: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Mean-field posterior over CP factors, component precisions and noise
/// precision.
///
/// `q(U_k) = prod_i N(u_{k,i} | mean_{k,i}, V_{k,i})`,
/// `q(lambda) = prod_j Ga(lambda_j | c_j, d_j)`, `q(tau) = Ga(tau | a, b)`,
/// all Gamma densities in shape-rate form.
///
/// Modes are 0-based in this API. Row means and covariances are stored
/// row-major: the mean of row `i` of mode `k` is
/// `means[k][i*r..(i+1)*r]`, its covariance `covs[k][i*r*r..(i+1)*r*r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    dims: Vec<usize>,
    rank: usize,
    means: Vec<Vec<f64>>,
    covs: Vec<Vec<f64>>,
    a: f64,
    b: f64,
    c: Vec<f64>,
    d: Vec<f64>,
    a0: f64,
    b0: f64,
    c0: Vec<f64>,
    d0: Vec<f64>,
    // For each mode and row, the observations whose index hits that row.
    rows: Vec<Vec<Vec<u32>>>,
    num_obs: usize,
    elbo_trace: Vec<f64>,
}

fn cholesky_with_jitter(a: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if let Some(ch) = Cholesky::new(a.clone()) {
        return Some(ch);
    }
    let r = a.nrows();
    let scale = (a.trace() / r as f64).abs().max(1.0);
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX {
        let mut shifted = a.clone();
        for j in 0..r {
            shifted[(j, j)] += jitter * scale;
        }
        if let Some(ch) = Cholesky::new(shifted) {
            return Some(ch);
        }
        jitter *= 10.0;
    }
    None
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let r = m.nrows();
    for i in 0..r {
        for j in i + 1..r {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
}

/// Initial `E[tau]` is `INIT_SNR / var(y)`: the noise starts at 1% of the
/// data variance.
const INIT_SNR: f64 = 100.0;
/// Initial factor row covariance, relative to the squared random-init scale.
const INIT_COV: f64 = 0.1;

impl PosteriorState {
    /// Builds the initial state: `r = max_rank`, row covariances
    /// `0.1 s^{2/d} I`, `q(lambda)` at its prior and `q(tau)` with the prior
    /// shape and mean `100 / s^2`.
    ///
    /// Random mode draws every row mean i.i.d. `N(0, s^{2/d})` where `s` is
    /// the sample standard deviation of the observed values (their root mean
    /// square if the values are constant). Spectral mode uses the leading
    /// eigenvectors of the Gram matrix of each zero-filled unfolding, column
    /// `j` scaled by `(sigma_j / p)^{1/d}` with `p` the sampling ratio;
    /// columns beyond the available spectrum fall back to random draws.
    pub fn init(obs: &ObservationSet, hyper: &HyperParams, cfg: &SolverConfig) -> Result<Self> {
        hyper.validate()?;
        cfg.validate()?;
        if obs.is_empty() {
            return Err(Error::arg("cannot initialize from an empty observation set"));
        }
        let dims = obs.dims().to_vec();
        let d = dims.len();
        let r = hyper.max_rank();

        let n = obs.len() as f64;
        let mean = obs.values().iter().sum::<f64>() / n;
        let var = if obs.len() > 1 {
            obs.values().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let mut spread = var.sqrt();
        if spread == 0.0 {
            spread = (obs.values().iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        }
        if spread == 0.0 {
            spread = 1.0;
        }
        let scale = spread.powf(1.0 / d as f64);

        let mut rng = stream_rng(cfg.seed, stream::INIT, 0);
        let mut means: Vec<Vec<f64>> = dims
            .iter()
            .map(|&nk| {
                (0..nk * r)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        scale * z
                    })
                    .collect::<Vec<f64>>()
            })
            .collect();

        if cfg.init == InitMode::Spectral {
            let ratio = obs.sampling_ratio();
            for (k, &nk) in dims.iter().enumerate() {
                let unfolded = zero_filled_unfolding(obs, k);
                let gram = &unfolded * unfolded.transpose();
                let eig = gram.symmetric_eigen();
                let mut order: Vec<usize> = (0..nk).collect();
                order.sort_by(|&x, &y| {
                    eig.eigenvalues[y]
                        .partial_cmp(&eig.eigenvalues[x])
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(x.cmp(&y))
                });
                for (j, &col) in order.iter().take(r).enumerate() {
                    let sigma = eig.eigenvalues[col].max(0.0).sqrt() / ratio;
                    let w = sigma.powf(1.0 / d as f64);
                    for i in 0..nk {
                        means[k][i * r + j] = w * eig.eigenvectors[(i, col)];
                    }
                }
            }
        }

        let covs = dims
            .iter()
            .map(|&nk| {
                let mut v = vec![0.0; nk * r * r];
                for i in 0..nk {
                    for j in 0..r {
                        v[i * r * r + j * r + j] = INIT_COV * scale * scale;
                    }
                }
                v
            })
            .collect();

        let mut rows: Vec<Vec<Vec<u32>>> = dims.iter().map(|&nk| vec![Vec::new(); nk]).collect();
        for (e, (idx, _)) in obs.iter().enumerate() {
            for k in 0..d {
                rows[k][idx[k] - 1].push(e as u32);
            }
        }

        Ok(PosteriorState {
            dims,
            rank: r,
            means,
            covs,
            a: hyper.a0,
            b: hyper.a0 * spread * spread / INIT_SNR,
            c: hyper.c0.clone(),
            d: hyper.d0.clone(),
            a0: hyper.a0,
            b0: hyper.b0,
            c0: hyper.c0.clone(),
            d0: hyper.d0.clone(),
            rows,
            num_obs: obs.len(),
            elbo_trace: Vec::new(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Posterior mean of row `i` (0-based) of factor `k`.
    pub fn row_mean(&self, k: usize, i: usize) -> DVector<f64> {
        let r = self.rank;
        DVector::from_column_slice(&self.means[k][i * r..(i + 1) * r])
    }

    /// Posterior covariance of row `i` (0-based) of factor `k`.
    pub fn row_cov(&self, k: usize, i: usize) -> DMatrix<f64> {
        let rr = self.rank * self.rank;
        DMatrix::from_row_slice(self.rank, self.rank, &self.covs[k][i * rr..(i + 1) * rr])
    }

    /// Overwrites the posterior of one factor row.
    pub fn set_row(&mut self, k: usize, i: usize, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<()> {
        let r = self.rank;
        if mean.len() != r || cov.shape() != (r, r) {
            return Err(Error::arg(format!("row posterior must be {r}-dimensional")));
        }
        self.means[k][i * r..(i + 1) * r].copy_from_slice(mean.as_slice());
        for a in 0..r {
            for b in 0..r {
                self.covs[k][i * r * r + a * r + b] = cov[(a, b)];
            }
        }
        Ok(())
    }

    /// Factor means of mode `k` as an `n_k x r` matrix.
    pub fn factor_mean(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dims[k], self.rank, &self.means[k])
    }

    /// The CP model formed by the posterior means.
    pub fn model(&self) -> CpModel {
        CpModel::new((0..self.order()).map(|k| self.factor_mean(k)).collect())
            .expect("posterior means form a consistent CP model")
    }

    pub fn tau_shape(&self) -> f64 {
        self.a
    }

    pub fn tau_rate(&self) -> f64 {
        self.b
    }

    pub fn expected_tau(&self) -> f64 {
        self.a / self.b
    }

    pub fn lambda_shape(&self) -> &[f64] {
        &self.c
    }

    pub fn lambda_rate(&self) -> &[f64] {
        &self.d
    }

    pub fn expected_lambda(&self) -> Vec<f64> {
        self.c.iter().zip(&self.d).map(|(c, d)| c / d).collect()
    }

    /// Sets `q(tau) = Ga(shape, rate)`.
    pub fn set_tau(&mut self, shape: f64, rate: f64) -> Result<()> {
        if !(shape > 0.0 && rate > 0.0) {
            return Err(Error::arg("Gamma parameters must be positive"));
        }
        self.a = shape;
        self.b = rate;
        Ok(())
    }

    /// Sets `q(lambda_j) = Ga(shape, rate)`.
    pub fn set_lambda(&mut self, j: usize, shape: f64, rate: f64) -> Result<()> {
        if !(shape > 0.0 && rate > 0.0) {
            return Err(Error::arg("Gamma parameters must be positive"));
        }
        self.c[j] = shape;
        self.d[j] = rate;
        Ok(())
    }

    /// ELBO after each completed sweep of [`super::run`].
    pub fn elbo_trace(&self) -> &[f64] {
        &self.elbo_trace
    }

    pub(crate) fn push_elbo(&mut self, v: f64) {
        self.elbo_trace.push(v);
    }

    fn check_obs(&self, obs: &ObservationSet) -> Result<()> {
        if obs.dims() != self.dims.as_slice() || obs.len() != self.num_obs {
            return Err(Error::arg(
                "observation set does not match the one the state was built from",
            ));
        }
        Ok(())
    }

    /// `E[u u^T] = mean mean^T + V` for every row of every mode, flattened
    /// like `covs`.
    fn second_moments(&self) -> Vec<Vec<f64>> {
        let r = self.rank;
        if r == 0 {
            return self.covs.clone();
        }
        self.means
            .iter()
            .zip(&self.covs)
            .map(|(m, v)| {
                let mut s = v.clone();
                for (i, row) in m.chunks_exact(r).enumerate() {
                    let base = i * r * r;
                    for a in 0..r {
                        for b in 0..r {
                            s[base + a * r + b] += row[a] * row[b];
                        }
                    }
                }
                s
            })
            .collect()
    }

    /// Closed-form update of `q(U_k)` (mode `k` is 0-based).
    ///
    /// For each row `i`:
    /// `V = (E[tau] sum_e B_e + diag(E[lambda]))^{-1}` and
    /// `mean = E[tau] V sum_e y_e h_e`, where the sums run over observations
    /// whose mode-`k` index is `i`, `h_e` is the Hadamard product of the
    /// other modes' row means and `B_e` the Hadamard product of their second
    /// moments. Unobserved rows revert to the prior.
    pub fn update_factor(&mut self, obs: &ObservationSet, k: usize) -> Result<()> {
        self.update_factor_in(obs, k, None)
    }

    pub(crate) fn update_factor_in(
        &mut self,
        obs: &ObservationSet,
        k: usize,
        pool: Option<&rayon::ThreadPool>,
    ) -> Result<()> {
        self.check_obs(obs)?;
        if k >= self.order() {
            return Err(Error::arg(format!("mode {k} out of range")));
        }
        let r = self.rank;
        if r == 0 {
            return Ok(());
        }
        let moments = self.second_moments();
        let tau = self.expected_tau();
        let lambda = self.expected_lambda();
        let d = self.order();
        let means = &self.means;

        let solve_row = |i: usize| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut p = vec![0.0; r * r];
            let mut q = vec![0.0; r];
            let mut h = vec![0.0; r];
            let mut bmat = vec![0.0; r * r];
            for &e in &self.rows[k][i] {
                let idx = obs.index(e as usize);
                let y = obs.value(e as usize);
                h.iter_mut().for_each(|v| *v = 1.0);
                bmat.iter_mut().for_each(|v| *v = 1.0);
                for m in (0..d).filter(|&m| m != k) {
                    let row = idx[m] - 1;
                    let mu = &means[m][row * r..(row + 1) * r];
                    let s = &moments[m][row * r * r..(row + 1) * r * r];
                    h.iter_mut().zip(mu).for_each(|(a, b)| *a *= b);
                    bmat.iter_mut().zip(s).for_each(|(a, b)| *a *= b);
                }
                p.iter_mut().zip(&bmat).for_each(|(a, b)| *a += b);
                q.iter_mut().zip(&h).for_each(|(a, b)| *a += y * b);
            }
            let mut system = DMatrix::from_row_slice(r, r, &p) * tau;
            for j in 0..r {
                system[(j, j)] += lambda[j];
            }
            let ch = cholesky_with_jitter(&system)
                .ok_or(Error::NotPositiveDefinite { mode: k + 1, row: i + 1 })?;
            let mut cov = ch.inverse();
            symmetrize(&mut cov);
            let mean = &cov * DVector::from_vec(q) * tau;
            let mut cov_rows = vec![0.0; r * r];
            for a in 0..r {
                for b in 0..r {
                    cov_rows[a * r + b] = cov[(a, b)];
                }
            }
            Ok((mean.as_slice().to_vec(), cov_rows))
        };

        let nk = self.dims[k];
        let solved: Vec<Result<(Vec<f64>, Vec<f64>)>> = match pool {
            Some(pool) => pool.install(|| (0..nk).into_par_iter().map(solve_row).collect()),
            None => (0..nk).map(solve_row).collect(),
        };
        let mut new_means = vec![0.0; nk * r];
        let mut new_covs = vec![0.0; nk * r * r];
        for (i, res) in solved.into_iter().enumerate() {
            let (m, v) = res?;
            new_means[i * r..(i + 1) * r].copy_from_slice(&m);
            new_covs[i * r * r..(i + 1) * r * r].copy_from_slice(&v);
        }
        self.means[k] = new_means;
        self.covs[k] = new_covs;
        Ok(())
    }

    /// Per-component sums `sum_k sum_i (mean_{k,i}(j)^2 + V_{k,i}(j,j))`.
    fn column_energies(&self) -> Vec<f64> {
        let r = self.rank;
        let mut out = vec![0.0; r];
        if r == 0 {
            return out;
        }
        for (m, v) in self.means.iter().zip(&self.covs) {
            for (i, row) in m.chunks_exact(r).enumerate() {
                for j in 0..r {
                    out[j] += row[j] * row[j] + v[i * r * r + j * r + j];
                }
            }
        }
        out
    }

    /// `c(j) = c0(j) + sum_k n_k / 2`,
    /// `d(j) = d0(j) + sum_k sum_i (mean(j)^2 + V(j,j)) / 2`.
    pub fn update_lambda(&mut self) {
        let half_n: f64 = self.dims.iter().sum::<usize>() as f64 / 2.0;
        let energy = self.column_energies();
        for j in 0..self.rank {
            self.c[j] = self.c0[j] + half_n;
            self.d[j] = (self.d0[j] + 0.5 * energy[j]).max(RATE_FLOOR);
        }
    }

    /// `sum_{e in Omega} E[(y_e - <u_1,...,u_d>)^2]` under the current `q(U)`.
    pub fn expected_squared_residual(&self, obs: &ObservationSet) -> Result<f64> {
        self.check_obs(obs)?;
        let r = self.rank;
        let moments = self.second_moments();
        let mut h = vec![0.0; r];
        let mut bmat = vec![0.0; r * r];
        let mut total = 0.0;
        for (idx, y) in obs.iter() {
            h.iter_mut().for_each(|v| *v = 1.0);
            bmat.iter_mut().for_each(|v| *v = 1.0);
            for (k, &i) in idx.iter().enumerate() {
                let row = i - 1;
                let mu = &self.means[k][row * r..(row + 1) * r];
                let s = &moments[k][row * r * r..(row + 1) * r * r];
                h.iter_mut().zip(mu).for_each(|(a, b)| *a *= b);
                bmat.iter_mut().zip(s).for_each(|(a, b)| *a *= b);
            }
            let mean_pred: f64 = h.iter().sum();
            let second: f64 = bmat.iter().sum();
            total += y * y - 2.0 * y * mean_pred + second;
        }
        Ok(total)
    }

    /// `a = a0 + |Omega| / 2`, `b = b0 + sum_e E[resid_e^2] / 2`.
    pub fn update_tau(&mut self, obs: &ObservationSet) -> Result<()> {
        let resid = self.expected_squared_residual(obs)?;
        let scale: f64 = obs.values().iter().map(|v| v * v).sum::<f64>().max(1.0);
        if !resid.is_finite() || resid < -1e-8 * scale {
            return Err(Error::Numerical(format!(
                "expected squared residual {resid:e} is not a valid second moment"
            )));
        }
        self.a = self.a0 + obs.len() as f64 / 2.0;
        self.b = (self.b0 + 0.5 * resid).max(RATE_FLOOR);
        Ok(())
    }

    /// Evidence lower bound `E_q[ln p(Y_Omega, U, lambda, tau)] + H[q]`,
    /// with every normalizing constant included.
    pub fn elbo(&self, obs: &ObservationSet) -> Result<f64> {
        let r = self.rank as f64;
        let n_obs = obs.len() as f64;
        let resid = self.expected_squared_residual(obs)?;

        let e_tau = self.a / self.b;
        let e_ln_tau = digamma(self.a) - self.b.ln();
        let e_lambda = self.expected_lambda();
        let e_ln_lambda: Vec<f64> = self.c.iter().zip(&self.d).map(|(c, d)| digamma(*c) - d.ln()).collect();
        let sum_ln_lambda: f64 = e_ln_lambda.iter().sum();

        let likelihood = 0.5 * n_obs * (e_ln_tau - LN_2PI) - 0.5 * e_tau * resid;

        let total_rows = self.dims.iter().sum::<usize>() as f64;
        let energy = self.column_energies();
        let factor_prior = total_rows * (-0.5 * r * LN_2PI + 0.5 * sum_ln_lambda)
            - 0.5 * e_lambda.iter().zip(&energy).map(|(l, e)| l * e).sum::<f64>();

        let lambda_prior: f64 = (0..self.rank)
            .map(|j| {
                let (c0, d0) = (self.c0[j], self.d0[j]);
                c0 * d0.ln() - ln_gamma(c0) + (c0 - 1.0) * e_ln_lambda[j] - d0 * e_lambda[j]
            })
            .sum();
        let tau_prior =
            self.a0 * self.b0.ln() - ln_gamma(self.a0) + (self.a0 - 1.0) * e_ln_tau - self.b0 * e_tau;

        let rr = self.rank * self.rank;
        let mut factor_entropy = total_rows * 0.5 * r * (1.0 + LN_2PI);
        for (k, covs) in self.covs.iter().enumerate() {
            for i in 0..self.dims[k] {
                if rr == 0 {
                    break;
                }
                let v = DMatrix::from_row_slice(self.rank, self.rank, &covs[i * rr..(i + 1) * rr]);
                let ch = Cholesky::new(v).ok_or(Error::NotPositiveDefinite { mode: k + 1, row: i + 1 })?;
                let ln_det: f64 = ch.l().diagonal().iter().map(|x| 2.0 * x.ln()).sum();
                factor_entropy += 0.5 * ln_det;
            }
        }
        let gamma_entropy = |shape: f64, rate: f64| {
            shape - rate.ln() + ln_gamma(shape) + (1.0 - shape) * digamma(shape)
        };
        let lambda_entropy: f64 = self.c.iter().zip(&self.d).map(|(c, d)| gamma_entropy(*c, *d)).sum();
        let tau_entropy = gamma_entropy(self.a, self.b);

        let elbo = likelihood
            + factor_prior
            + lambda_prior
            + tau_prior
            + factor_entropy
            + lambda_entropy
            + tau_entropy;
        if !elbo.is_finite() {
            return Err(Error::Numerical("ELBO is not finite".into()));
        }
        Ok(elbo)
    }

    /// Rescales every component across modes to the ELBO-optimal balance.
    ///
    /// Scaling column `j` of `q(U_k)` by `s_k` (mean by `s_k`, covariance
    /// row and column by `s_k`) with `prod_k s_k = 1` leaves the likelihood
    /// term unchanged, so only the prior and entropy terms move:
    /// `f(t) = -E[lambda_j]/2 sum_k e^{2 t_k} E_k + sum_k n_k t_k`,
    /// `t_k = ln s_k`, `E_k = sum_i (mean(j)^2 + V(j,j))`. `f` is concave and
    /// its constrained maximizer is `e^{2 t_k} = (n_k - mu) / (E[lambda_j] E_k)`
    /// with `mu` fixed by `sum_k t_k = 0`, found by bisection. The step
    /// therefore never decreases the ELBO.
    pub fn rebalance(&mut self) {
        let r = self.rank;
        let d = self.order();
        if r == 0 || d < 2 {
            return;
        }
        let lambda = self.expected_lambda();
        for j in 0..r {
            let energy: Vec<f64> = (0..d)
                .map(|k| {
                    (0..self.dims[k])
                        .map(|i| {
                            let m = self.means[k][i * r + j];
                            m * m + self.covs[k][i * r * r + j * r + j]
                        })
                        .sum::<f64>()
                })
                .collect();
            if energy.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
                continue;
            }
            let n: Vec<f64> = self.dims.iter().map(|&v| v as f64).collect();
            let log_scale = |mu: f64| -> Vec<f64> {
                (0..d)
                    .map(|k| 0.5 * ((n[k] - mu) / (lambda[j] * energy[k])).ln())
                    .collect()
            };
            let g = |mu: f64| log_scale(mu).iter().sum::<f64>();
            let n_min = n.iter().cloned().fold(f64::INFINITY, f64::min);
            // g decreases in mu on (-inf, n_min); bracket the root.
            let mut hi = n_min - 1e-12 * n_min.max(1.0);
            if g(hi) > 0.0 {
                continue;
            }
            let mut lo = n_min - 1.0;
            let mut step = 1.0;
            while g(lo) < 0.0 {
                step *= 2.0;
                lo = n_min - step;
                if !lo.is_finite() || step > 1e300 {
                    break;
                }
            }
            if g(lo) < 0.0 {
                continue;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if g(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * hi.abs().max(1.0) {
                    break;
                }
            }
            let mut t = log_scale(0.5 * (lo + hi));
            let excess: f64 = t.iter().sum::<f64>() / d as f64;
            t.iter_mut().for_each(|v| *v -= excess);
            for k in 0..d {
                let s = t[k].exp();
                for i in 0..self.dims[k] {
                    self.means[k][i * r + j] *= s;
                    let base = i * r * r;
                    for a in 0..r {
                        self.covs[k][base + a * r + j] *= s;
                        self.covs[k][base + j * r + a] *= s;
                    }
                }
            }
        }
    }

    /// Frobenius norm of each rank-1 component of the mean model:
    /// `prod_k ||mean_k(:, j)||`.
    pub fn component_powers(&self) -> Vec<f64> {
        let r = self.rank;
        let mut powers = vec![1.0; r];
        if r == 0 {
            return powers;
        }
        for m in &self.means {
            let mut sq = vec![0.0; r];
            for row in m.chunks_exact(r) {
                for j in 0..r {
                    sq[j] += row[j] * row[j];
                }
            }
            for j in 0..r {
                powers[j] *= sq[j].sqrt();
            }
        }
        powers
    }

    /// Drops components whose power is below `threshold` times the largest
    /// power, keeping at least one. Returns the removed (pre-pruning)
    /// component positions.
    pub fn prune(&mut self, threshold: f64) -> Vec<usize> {
        let powers = self.component_powers();
        let max = powers.iter().cloned().fold(0.0, f64::max);
        let mut keep: Vec<usize> = (0..self.rank).filter(|&j| !(powers[j] < threshold * max)).collect();
        if keep.is_empty() {
            // Everything is degenerate: keep the strongest.
            let best = (0..self.rank)
                .max_by(|&x, &y| powers[x].partial_cmp(&powers[y]).unwrap_or(std::cmp::Ordering::Equal))
                .unwrap_or(0);
            keep.push(best);
        }
        if keep.len() == self.rank {
            return Vec::new();
        }
        let removed: Vec<usize> = (0..self.rank).filter(|j| !keep.contains(j)).collect();
        self.select_components(&keep);
        removed
    }

    /// Reorders components: new component `j` is old component `perm[j]`.
    pub fn permute_components(&mut self, perm: &[usize]) -> Result<()> {
        let mut seen = vec![false; self.rank];
        if perm.len() != self.rank
            || perm.iter().any(|&p| p >= self.rank || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::arg(format!("{perm:?} is not a permutation of the components")));
        }
        self.select_components(perm);
        Ok(())
    }

    fn select_components(&mut self, keep: &[usize]) {
        let r = self.rank;
        let nr = keep.len();
        for k in 0..self.order() {
            let nk = self.dims[k];
            let mut m = Vec::with_capacity(nk * nr);
            let mut v = Vec::with_capacity(nk * nr * nr);
            for i in 0..nk {
                for &j in keep {
                    m.push(self.means[k][i * r + j]);
                }
                for &a in keep {
                    for &b in keep {
                        v.push(self.covs[k][i * r * r + a * r + b]);
                    }
                }
            }
            self.means[k] = m;
            self.covs[k] = v;
        }
        let pick = |v: &[f64]| keep.iter().map(|&j| v[j]).collect::<Vec<f64>>();
        self.c = pick(&self.c);
        self.d = pick(&self.d);
        self.c0 = pick(&self.c0);
        self.d0 = pick(&self.d0);
        self.rank = nr;
    }

    /// Smallest eigenvalue over all row covariances and the largest
    /// asymmetry `|V - V^T|`; used to audit the SPD invariant.
    pub fn covariance_health(&self) -> (f64, f64) {
        let mut min_eig = f64::INFINITY;
        let mut asym: f64 = 0.0;
        for k in 0..self.order() {
            for i in 0..self.dims[k] {
                let v = self.row_cov(k, i);
                asym = asym.max((&v - v.transpose()).amax());
                if self.rank > 0 {
                    let e = v.symmetric_eigenvalues().min();
                    min_eig = min_eig.min(e);
                }
            }
        }
        (min_eig, asym)
    }
}

fn zero_filled_unfolding(obs: &ObservationSet, mode: usize) -> DMatrix<f64> {
    let dims = obs.dims();
    let cols = dims.iter().product::<usize>() / dims[mode];
    let mut m = DMatrix::zeros(dims[mode], cols);
    for (idx, v) in obs.iter() {
        m[(idx[mode] - 1, unfold_column(idx, dims, mode))] = v;
    }
    m
}
