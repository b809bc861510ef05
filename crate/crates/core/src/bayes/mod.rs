//! Variational Bayesian CP completion with automatic rank determination.
//!
//! Observation model: `y_i = <u_{1,i_1}, ..., u_{d,i_d}> + eps`, with
//! `eps ~ N(0, 1/tau)` for `i` in `Omega`. Every factor row has the prior
//! `N(0, diag(lambda)^{-1})`; `lambda_j ~ Ga(c0_j, d0_j)` and
//! `tau ~ Ga(a0, b0)` (shape-rate). Inference is mean-field coordinate
//! ascent: each factor matrix, then `tau`, then `lambda`, repeated until the
//! relative change of the objective drops below `tol`. Components whose
//! precision grows large collapse toward zero and are pruned, which is how
//! the rank is determined.

mod state;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use state::{PosteriorState, RATE_FLOOR};

use crate::error::{Error, Result};
use crate::tensor::{relative_error, CpModel, DenseTensor, ObservationSet};

/// Gamma hyper-priors (shape-rate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub a0: f64,
    pub b0: f64,
    /// Per-component shapes; the length is the maximum rank.
    pub c0: Vec<f64>,
    pub d0: Vec<f64>,
}

impl HyperParams {
    pub const DEFAULT: f64 = 1e-6;

    /// Broad priors, all parameters `1e-6`.
    pub fn with_max_rank(max_rank: usize) -> Self {
        HyperParams {
            a0: Self::DEFAULT,
            b0: Self::DEFAULT,
            c0: vec![Self::DEFAULT; max_rank],
            d0: vec![Self::DEFAULT; max_rank],
        }
    }

    pub fn max_rank(&self) -> usize {
        self.c0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if self.c0.is_empty() {
            return Err(Error::arg("max_rank must be at least 1"));
        }
        if self.c0.len() != self.d0.len() {
            return Err(Error::arg("c0 and d0 must have the same length"));
        }
        if !(pos(self.a0) && pos(self.b0) && self.c0.iter().chain(&self.d0).all(|&v| pos(v))) {
            return Err(Error::arg("hyper-parameters must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Random,
    Spectral,
}

/// What the convergence test compares between sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// `|L_t - L_{t-1}| / |L_{t-1}|` on the ELBO.
    Elbo,
    /// `||X_t - X_{t-1}||_F / ||X_{t-1}||_F` on the mean reconstruction at
    /// the observed entries.
    Reconstruction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub stop_rule: StopRule,
    /// Relative component power below which a component is removed.
    pub prune_threshold: f64,
    pub prune_enabled: bool,
    /// Pruning starts after this many completed sweeps.
    pub prune_after: usize,
    /// Rebalance component scales across modes after every sweep (see
    /// [`PosteriorState::rebalance`]).
    pub rebalance: bool,
    pub seed: u64,
    pub init: InitMode,
    /// Worker threads for the per-row factor updates; 0 runs sequentially.
    /// Results do not depend on this value.
    pub threads: usize,
    /// Affine map applied to the observed values before fitting and undone
    /// on the prediction.
    pub normalize: Normalize,
}

/// Value normalization before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalize {
    /// Fit the raw values.
    None,
    /// Divide by the root mean square of the observed values. Keeps the CP
    /// structure intact and makes the fit independent of the data's units.
    Scale,
    /// Subtract the mean, then divide by the standard deviation. The offset
    /// costs one extra component when the data has a non-zero mean.
    Standardize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 500,
            tol: 1e-6,
            stop_rule: StopRule::Elbo,
            prune_threshold: 1e-4,
            prune_enabled: true,
            prune_after: 2,
            rebalance: true,
            seed: 0,
            init: InitMode::Spectral,
            threads: 0,
            normalize: Normalize::Scale,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::arg("max_iters must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::arg("tol must be positive"));
        }
        if !(self.prune_threshold >= 0.0) {
            return Err(Error::arg("prune_threshold must be non-negative"));
        }
        Ok(())
    }
}

/// Affine map applied to observed values before fitting:
/// `fitted = (y - shift) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueTransform {
    pub shift: f64,
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct CompletionResult {
    /// The completed tensor: `cp_reconstruct(model)`, mapped back through
    /// `transform` when one was applied.
    pub prediction: DenseTensor,
    /// CP model of the posterior factor means.
    pub model: CpModel,
    pub predicted_rank: usize,
    /// Completed sweeps.
    pub iterations: usize,
    pub final_elbo: f64,
    pub expected_tau: f64,
    pub expected_lambda: Vec<f64>,
    pub converged: bool,
    pub elbo_trace: Vec<f64>,
    pub transform: Option<ValueTransform>,
    pub wall_time_seconds: f64,
}

impl CompletionResult {
    /// Number of surviving components.
    pub fn predicted_rank(&self) -> usize {
        self.predicted_rank
    }

    pub fn relative_error(&self, truth: &DenseTensor) -> Result<f64> {
        relative_error(&self.prediction, truth)
    }
}

/// Initial posterior for [`run_from`]; see [`PosteriorState::init`].
pub fn init_state(obs: &ObservationSet, hyper: &HyperParams, cfg: &SolverConfig) -> Result<PosteriorState> {
    PosteriorState::init(obs, hyper, cfg)
}

fn normalize(obs: &ObservationSet, mode: Normalize) -> Result<Option<(ObservationSet, ValueTransform)>> {
    let n = obs.len() as f64;
    let (shift, spread) = match mode {
        Normalize::None => return Ok(None),
        Normalize::Scale => (0.0, obs.values().iter().map(|v| v * v).sum::<f64>() / n),
        Normalize::Standardize => {
            let mean = obs.values().iter().sum::<f64>() / n;
            (mean, obs.values().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
        }
    };
    let scale = if spread > 0.0 { spread.sqrt() } else { 1.0 };
    let t = ValueTransform { shift, scale };
    Ok(Some((obs.map_values(|v| (v - shift) / scale)?, t)))
}

/// Full solve: initialize, then sweep until convergence.
pub fn run(obs: &ObservationSet, hyper: &HyperParams, cfg: &SolverConfig) -> Result<CompletionResult> {
    cfg.validate()?;
    hyper.validate()?;
    match normalize(obs, cfg.normalize)? {
        Some((fitted, t)) => {
            let state = init_state(&fitted, hyper, cfg)?;
            let mut res = run_from(state, &fitted, cfg)?;
            res.prediction = DenseTensor::new(
                res.prediction.dims().to_vec(),
                res.prediction.data().iter().map(|v| v * t.scale + t.shift).collect(),
            )?;
            res.transform = Some(t);
            Ok(res)
        }
        None => {
            let state = init_state(obs, hyper, cfg)?;
            run_from(state, obs, cfg)
        }
    }
}

fn observed_mean_predictions(state: &PosteriorState, obs: &ObservationSet) -> Vec<f64> {
    let model = state.model();
    obs.iter()
        .map(|(idx, _)| model.evaluate(idx).unwrap_or(0.0))
        .collect()
}

/// Sweeps from a given state. One sweep updates every factor in mode order,
/// then `tau`, then `lambda`, then (after `prune_after` sweeps) prunes.
pub fn run_from(mut state: PosteriorState, obs: &ObservationSet, cfg: &SolverConfig) -> Result<CompletionResult> {
    cfg.validate()?;
    let start = Instant::now();
    let pool = if cfg.threads > 0 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let mut prev_elbo = state.elbo(obs)?;
    let mut prev_fit = match cfg.stop_rule {
        StopRule::Reconstruction => Some(observed_mean_predictions(&state, obs)),
        StopRule::Elbo => None,
    };
    let mut converged = false;
    let mut iterations = 0;
    let mut elbo = prev_elbo;
    for sweep in 1..=cfg.max_iters {
        for k in 0..state.order() {
            state.update_factor_in(obs, k, pool.as_ref())?;
        }
        state.update_tau(obs)?;
        state.update_lambda();
        if cfg.rebalance {
            state.rebalance();
            state.update_lambda();
        }
        let pruned = cfg.prune_enabled && sweep > cfg.prune_after && !state.prune(cfg.prune_threshold).is_empty();
        elbo = state.elbo(obs)?;
        state.push_elbo(elbo);
        iterations = sweep;

        let change = match cfg.stop_rule {
            StopRule::Elbo => (elbo - prev_elbo).abs() / prev_elbo.abs().max(f64::MIN_POSITIVE),
            StopRule::Reconstruction => {
                let fit = observed_mean_predictions(&state, obs);
                let old = prev_fit.replace(fit.clone()).unwrap_or_default();
                let num: f64 = fit.iter().zip(&old).map(|(a, b)| (a - b) * (a - b)).sum();
                let den: f64 = old.iter().map(|b| b * b).sum();
                (num / den.max(f64::MIN_POSITIVE)).sqrt()
            }
        };
        prev_elbo = elbo;
        if !pruned && sweep > 1 && change < cfg.tol {
            converged = true;
            break;
        }
    }

    let model = state.model();
    let prediction = model.reconstruct();
    Ok(CompletionResult {
        prediction,
        predicted_rank: model.rank(),
        model,
        iterations,
        final_elbo: elbo,
        expected_tau: state.expected_tau(),
        expected_lambda: state.expected_lambda(),
        converged,
        elbo_trace: state.elbo_trace().to_vec(),
        transform: None,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Number of surviving components of a completed run.
pub fn predicted_rank(result: &CompletionResult) -> usize {
    result.predicted_rank
}
