//! Experiment protocols shared by the subcommands and the acceptance suite.
//!
//! Seeds: the noise added to a truth tensor comes from the `"noise"` stream
//! of the user seed, index 0, and is drawn once per protocol. Mask number `m`
//! comes from the `"mask"` stream, index `m`. The solver gets the user seed
//! itself.

use tenfill::bayes::{self, HyperParams, SolverConfig};
use tenfill::report::{CompareRow, Method, RankStudyRow, SweepRow};
use tenfill::rng::{stream, stream_rng, sub_seed};
use tenfill::synth::{add_gaussian_noise, observe, sample_mask_with, NoiseSpec};
use tenfill::vp::{vp_recover_stack, VpConfig};
use tenfill::{DenseTensor, ObservationSet, Result};

/// `exp(linspace(ln 0.03, ln 0.5, 10))`, rounded to 6 decimals.
pub fn default_ratios() -> Vec<f64> {
    let (lo, hi) = (0.03f64.ln(), 0.5f64.ln());
    (0..10)
        .map(|i| {
            let r = (lo + (hi - lo) * i as f64 / 9.0).exp();
            (r * 1e6).round() / 1e6
        })
        .collect()
}

pub fn noise_spec(snr_db: Option<f64>) -> NoiseSpec {
    snr_db.map_or(NoiseSpec::None, NoiseSpec::SnrDb)
}

/// The tensor the observations are drawn from: `truth` plus seeded noise.
pub fn noisy_source(truth: &DenseTensor, snr_db: Option<f64>, seed: u64) -> Result<DenseTensor> {
    add_gaussian_noise(truth, noise_spec(snr_db), seed)
}

/// Observations of `source` through mask number `index`, with the mask's
/// sub-seed.
pub fn draw(source: &DenseTensor, ratio: f64, seed: u64, index: u64) -> Result<(ObservationSet, u64)> {
    let mut rng = stream_rng(seed, stream::MASK, index);
    let mask = sample_mask_with(source.dims(), ratio, &mut rng)?;
    Ok((observe(source, &mask)?, sub_seed(seed, stream::MASK, index)))
}

/// One row per (ratio, repetition); mask `r * reps + rep`.
pub fn sweep(
    truth: &DenseTensor,
    ratios: &[f64],
    reps: usize,
    snr_db: Option<f64>,
    max_rank: usize,
    cfg: &SolverConfig,
) -> Result<Vec<SweepRow>> {
    let source = noisy_source(truth, snr_db, cfg.seed)?;
    let hyper = HyperParams::with_max_rank(max_rank);
    let mut rows = Vec::with_capacity(ratios.len() * reps);
    for (r, &ratio) in ratios.iter().enumerate() {
        for rep in 0..reps {
            let (obs, mask_seed) = draw(&source, ratio, cfg.seed, (r * reps + rep) as u64)?;
            let res = bayes::run(&obs, &hyper, cfg)?;
            rows.push(SweepRow {
                ratio,
                rep,
                mask_seed,
                observed_entries: obs.len(),
                relative_error: res.relative_error(truth)?,
                predicted_rank: res.predicted_rank,
                iterations: res.iterations,
                converged: res.converged,
                wall_time_seconds: res.wall_time_seconds,
            });
        }
    }
    Ok(rows)
}

/// The same observations (mask 0) completed under each maximum rank.
pub fn rank_study(
    truth: &DenseTensor,
    ratio: f64,
    max_ranks: &[usize],
    snr_db: Option<f64>,
    cfg: &SolverConfig,
) -> Result<Vec<RankStudyRow>> {
    let source = noisy_source(truth, snr_db, cfg.seed)?;
    let (obs, _) = draw(&source, ratio, cfg.seed, 0)?;
    max_ranks
        .iter()
        .map(|&max_rank| {
            let res = bayes::run(&obs, &HyperParams::with_max_rank(max_rank), cfg)?;
            Ok(RankStudyRow {
                max_rank,
                predicted_rank: res.predicted_rank,
                relative_error: res.relative_error(truth)?,
                iterations: res.iterations,
                converged: res.converged,
                wall_time_seconds: res.wall_time_seconds,
            })
        })
        .collect()
}

fn failed(method: Method, ratio: f64, err: tenfill::Error) -> CompareRow {
    CompareRow {
        method,
        ratio,
        relative_error: None,
        predicted_rank: None,
        iterations: None,
        wall_time_seconds: None,
        status: err.to_string(),
    }
}

/// Bayesian CP on the whole tensor and the slice baseline on the same
/// observations (mask 0). A failure of one method becomes its row's status.
pub fn compare(
    truth: &DenseTensor,
    ratio: f64,
    snr_db: Option<f64>,
    max_rank: usize,
    cfg: &SolverConfig,
    vp: &VpConfig,
) -> Result<Vec<CompareRow>> {
    let source = noisy_source(truth, snr_db, cfg.seed)?;
    let (obs, _) = draw(&source, ratio, cfg.seed, 0)?;

    let tc = bayes::run(&obs, &HyperParams::with_max_rank(max_rank), cfg).and_then(|res| {
        Ok(CompareRow {
            method: Method::BayesCp,
            ratio,
            relative_error: Some(res.relative_error(truth)?),
            predicted_rank: Some(res.predicted_rank),
            iterations: Some(res.iterations),
            wall_time_seconds: Some(res.wall_time_seconds),
            status: "ok".into(),
        })
    });

    let start = std::time::Instant::now();
    let vp_row = vp_recover_stack(&obs, vp).and_then(|rec| {
        let secs = start.elapsed().as_secs_f64();
        Ok(CompareRow {
            method: Method::Vp,
            ratio,
            relative_error: Some(tenfill::tensor::relative_error(&rec.tensor, truth)?),
            predicted_rank: None,
            iterations: Some(rec.slices.iter().flatten().map(|s| s.iterations).sum()),
            wall_time_seconds: Some(secs),
            status: "ok".into(),
        })
    });

    Ok(vec![
        tc.unwrap_or_else(|e| failed(Method::BayesCp, ratio, e)),
        vp_row.unwrap_or_else(|e| failed(Method::Vp, ratio, e)),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid() {
        let r = default_ratios();
        assert_eq!(r.len(), 10);
        assert_eq!(r[0], 0.03);
        assert_eq!(r[9], 0.5);
        assert!(r.windows(2).all(|w| w[0] < w[1]));
        // Constant log spacing, up to the 6-decimal rounding.
        let q = (0.5f64 / 0.03).powf(1.0 / 9.0);
        for w in r.windows(2) {
            assert!((w[1] / w[0] - q).abs() < 1e-3);
        }
    }
}
