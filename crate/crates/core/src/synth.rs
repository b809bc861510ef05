//! Seeded synthetic data: low-rank CP tensors, Gaussian noise, uniform
//! observation masks and a wafer-like multi-die pattern.
//!
//! Every generator is a pure function of its arguments and seed; see
//! [`crate::rng`] for how sub-streams are derived.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng, Rng};
use crate::tensor::{
    frobenius_norm, num_entries, unravel_index, CpModel, DenseTensor,
    MultiIndex, ObservationSet,
};

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Largest rank for which a generic CP tensor of these dims is still
/// guaranteed to be representable with fewer terms than entries: the
/// product of all extents except the largest.
pub fn generic_rank_bound(dims: &[usize]) -> usize {
    let max_pos = dims
        .iter()
        .enumerate()
        .max_by_key(|(_, &n)| n)
        .map(|(k, _)| k)
        .unwrap_or(0);
    dims.iter()
        .enumerate()
        .filter(|&(k, _)| k != max_pos)
        .map(|(_, &n)| n)
        .product()
}

/// A rank-`rank` CP model with i.i.d. standard normal factor entries and its
/// dense reconstruction.
///
/// Factors are drawn mode by mode, row by row, from the `"factors"` stream.
/// A rank above [`generic_rank_bound`] is allowed (CP rank may exceed every
/// extent); callers may want to warn about it.
pub fn random_cp_tensor(dims: &[usize], rank: usize, seed: u64) -> Result<(CpModel, DenseTensor)> {
    num_entries(dims)?;
    if rank == 0 {
        return Err(Error::arg("rank must be at least 1"));
    }
    let mut rng = stream_rng(seed, stream::FACTORS, 0);
    let factors = dims
        .iter()
        .map(|&n| {
            let mut f = DMatrix::zeros(n, rank);
            for i in 0..n {
                for j in 0..rank {
                    f[(i, j)] = normal(&mut rng);
                }
            }
            f
        })
        .collect();
    let model = CpModel::new(factors)?;
    let dense = model.reconstruct();
    Ok((model, dense))
}

/// How much Gaussian noise to add.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum NoiseSpec {
    /// Leave the tensor untouched (the infinite-precision limit).
    None,
    /// Signal-to-noise ratio in decibels relative to the mean squared entry.
    SnrDb(f64),
    /// Exact noise precision `tau = 1 / variance`.
    Precision(f64),
}

impl NoiseSpec {
    fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::None => Ok(()),
            NoiseSpec::SnrDb(s) if s.is_finite() => Ok(()),
            NoiseSpec::SnrDb(s) => Err(Error::arg(format!("SNR must be finite, got {s}"))),
            NoiseSpec::Precision(t) if t > 0.0 && t.is_finite() => Ok(()),
            NoiseSpec::Precision(t) => Err(Error::arg(format!("noise precision must be positive, got {t}"))),
        }
    }

    /// Noise variance for the given signal.
    pub fn variance(&self, x: &DenseTensor) -> Result<f64> {
        self.validate()?;
        match *self {
            NoiseSpec::None => Ok(0.0),
            NoiseSpec::Precision(t) => Ok(1.0 / t),
            NoiseSpec::SnrDb(snr) => {
                let norm = frobenius_norm(x);
                if norm == 0.0 {
                    return Err(Error::arg("SNR noise on a zero-signal tensor"));
                }
                Ok(norm * norm / x.len() as f64 * 10f64.powf(-snr / 10.0))
            }
        }
    }
}

/// `x + eps` with `eps` i.i.d. `N(0, sigma^2)` from the `"noise"` stream.
pub fn add_gaussian_noise(x: &DenseTensor, spec: NoiseSpec, seed: u64) -> Result<DenseTensor> {
    let var = spec.variance(x)?;
    if var == 0.0 {
        return Ok(x.clone());
    }
    let sigma = var.sqrt();
    let mut rng = stream_rng(seed, stream::NOISE, 0);
    DenseTensor::new(
        x.dims().to_vec(),
        x.data().iter().map(|&v| v + sigma * normal(&mut rng)).collect(),
    )
}

/// `round(ratio * total)` with halves rounded away from zero, at least 1.
pub fn sample_count(total: usize, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::arg(format!("sampling ratio must lie in (0, 1], got {ratio}")));
    }
    Ok(((ratio * total as f64).round() as usize).clamp(1, total))
}

/// Exactly [`sample_count`] distinct indices drawn uniformly without
/// replacement, returned in canonical (row-major) order.
///
/// Uses a partial Fisher-Yates shuffle over the linear index space; the
/// displaced slots are tracked sparsely, so memory is proportional to the
/// sample size rather than the tensor size.
pub fn sample_mask_with(dims: &[usize], ratio: f64, rng: &mut Rng) -> Result<Vec<MultiIndex>> {
    let total = num_entries(dims)?;
    let count = sample_count(total, ratio)?;
    let mut swapped: HashMap<usize, usize> = HashMap::with_capacity(count);
    let mut picked = Vec::with_capacity(count);
    for i in 0..count {
        let j = rng.random_range(i..total);
        let vj = *swapped.get(&j).unwrap_or(&j);
        let vi = *swapped.get(&i).unwrap_or(&i);
        swapped.insert(j, vi);
        picked.push(vj);
    }
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|pos| {
            let mut idx = vec![0; dims.len()];
            unravel_index(pos, dims, &mut idx);
            MultiIndex::new(idx)
        })
        .collect())
}

/// [`sample_mask_with`] on the `"mask"` stream of `seed`.
pub fn sample_mask(dims: &[usize], ratio: f64, seed: u64) -> Result<Vec<MultiIndex>> {
    sample_mask_with(dims, ratio, &mut stream_rng(seed, stream::MASK, 0))
}

/// The entries of `truth` at the masked indices.
pub fn observe(truth: &DenseTensor, mask: &[MultiIndex]) -> Result<ObservationSet> {
    let entries = mask
        .iter()
        .map(|idx| Ok((idx.clone(), truth.get(idx.as_slice())?)))
        .collect::<Result<Vec<_>>>()?;
    ObservationSet::new(truth.dims().to_vec(), entries)
}

/// Shape parameters for [`wafer_pattern`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaferParams {
    /// Total degree of the shared 2-D polynomial surface.
    pub degree: usize,
    /// Mean level added to every die.
    pub baseline: f64,
    /// Standard deviation of the per-die gain around 1.
    pub gain_spread: f64,
    /// Standard deviation of the per-die offset around `baseline`.
    pub offset_spread: f64,
    /// Standard deviation of the i.i.d. per-site roughness.
    pub roughness: f64,
}

impl Default for WaferParams {
    fn default() -> Self {
        WaferParams {
            degree: 2,
            baseline: 1.0,
            gain_spread: 0.2,
            offset_spread: 0.1,
            roughness: 0.02,
        }
    }
}

/// A generated multi-die pattern together with its ingredients.
#[derive(Debug, Clone)]
pub struct WaferPattern {
    /// `n1 x n2 x n3`; die `i3` is the frontal slice `i3`.
    pub tensor: DenseTensor,
    /// The shared polynomial surface, `n1 x n2`.
    pub surface: DMatrix<f64>,
    pub gains: Vec<f64>,
    pub offsets: Vec<f64>,
}

/// Dies stacked along mode 3: each die is `gain * surface + offset +
/// roughness`, where the surface is a random polynomial of total degree
/// `params.degree` in coordinates scaled to `[-1, 1]`. The result is smooth
/// within a die and unstructured across dies.
pub fn wafer_pattern(dims: &[usize], params: &WaferParams, seed: u64) -> Result<WaferPattern> {
    if dims.len() != 3 {
        return Err(Error::arg(format!("wafer pattern needs 3 dims, got {dims:?}")));
    }
    num_entries(dims)?;
    if !(params.roughness >= 0.0 && params.gain_spread >= 0.0 && params.offset_spread >= 0.0) {
        return Err(Error::arg("wafer spreads must be non-negative"));
    }
    let (n1, n2, n3) = (dims[0], dims[1], dims[2]);
    let mut rng = stream_rng(seed, stream::WAFER, 0);

    let mut coeffs = Vec::new();
    for p in 0..=params.degree {
        for q in 0..=(params.degree - p) {
            coeffs.push((p as i32, q as i32, normal(&mut rng)));
        }
    }
    let coord = |i: usize, n: usize| {
        if n == 1 {
            0.0
        } else {
            2.0 * i as f64 / (n - 1) as f64 - 1.0
        }
    };
    let surface = DMatrix::from_fn(n1, n2, |a, b| {
        let (x, y) = (coord(a, n1), coord(b, n2));
        coeffs.iter().map(|&(p, q, c)| c * x.powi(p) * y.powi(q)).sum()
    });

    let gains: Vec<f64> = (0..n3).map(|_| 1.0 + params.gain_spread * normal(&mut rng)).collect();
    let offsets: Vec<f64> = (0..n3)
        .map(|_| params.baseline + params.offset_spread * normal(&mut rng))
        .collect();

    let mut data = vec![0.0; n1 * n2 * n3];
    let mut idx = [0usize; 3];
    for (pos, v) in data.iter_mut().enumerate() {
        unravel_index(pos, dims, &mut idx);
        let die = idx[2] - 1;
        *v = gains[die] * surface[(idx[0] - 1, idx[1] - 1)] + offsets[die];
    }
    if params.roughness > 0.0 {
        for v in data.iter_mut() {
            *v += params.roughness * normal(&mut rng);
        }
    }
    Ok(WaferPattern {
        tensor: DenseTensor::new(dims.to_vec(), data)?,
        surface,
        gains,
        offsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::relative_error;

    #[test]
    fn cp_tensor_is_deterministic() {
        let (m1, x1) = random_cp_tensor(&[4, 3, 2], 2, 11).unwrap();
        let (m2, x2) = random_cp_tensor(&[4, 3, 2], 2, 11).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(x1, x2);
        let (_, x3) = random_cp_tensor(&[4, 3, 2], 2, 12).unwrap();
        assert_ne!(x1, x3);
        assert!(random_cp_tensor(&[4, 3], 0, 1).is_err());
    }

    #[test]
    fn rank_one_matrix_is_singular() {
        let (_, x) = random_cp_tensor(&[2, 2], 1, 3).unwrap();
        let d = x.data();
        let det = d[0] * d[3] - d[1] * d[2];
        assert!(det.abs() < 1e-12 * (d[0] * d[3]).abs().max(1.0));
    }

    #[test]
    fn generic_rank_bound_excludes_largest() {
        assert_eq!(generic_rank_bound(&[30, 30, 15]), 450);
        assert_eq!(generic_rank_bound(&[5]), 1);
    }

    #[test]
    fn noise_passthrough_and_errors() {
        let (_, x) = random_cp_tensor(&[3, 3], 1, 1).unwrap();
        assert_eq!(add_gaussian_noise(&x, NoiseSpec::None, 5).unwrap(), x);
        let z = DenseTensor::zeros(vec![3, 3]).unwrap();
        assert!(matches!(
            add_gaussian_noise(&z, NoiseSpec::SnrDb(30.0), 1),
            Err(Error::Argument(_))
        ));
        assert!(add_gaussian_noise(&x, NoiseSpec::Precision(0.0), 1).is_err());
        assert!(add_gaussian_noise(&x, NoiseSpec::SnrDb(f64::NAN), 1).is_err());
    }

    #[test]
    fn snr_30db_energy_ratio() {
        // Unit-variance signal with 10^4 entries: ||eps||^2 / ||x||^2 is a
        // scaled chi-square with 10^4 dof, so within ~5 sigma of 1e-3 the
        // band [0.0008, 0.00125] holds.
        let mut rng = stream_rng(1, "test", 0);
        let x = DenseTensor::new(vec![100, 100], (0..10_000).map(|_| normal(&mut rng)).collect()).unwrap();
        let y = add_gaussian_noise(&x, NoiseSpec::SnrDb(30.0), 9).unwrap();
        let e = y.sub(&x).unwrap();
        let ratio = (frobenius_norm(&e) / frobenius_norm(&x)).powi(2);
        assert!((0.0008..=0.00125).contains(&ratio), "{ratio}");
    }

    #[test]
    fn noise_seeds_differ_but_scale_matches() {
        let x = DenseTensor::filled(vec![100, 100], 1.0).unwrap();
        let e1 = add_gaussian_noise(&x, NoiseSpec::Precision(4.0), 1).unwrap().sub(&x).unwrap();
        let e2 = add_gaussian_noise(&x, NoiseSpec::Precision(4.0), 2).unwrap().sub(&x).unwrap();
        assert_ne!(e1, e2);
        let (n1, n2) = (frobenius_norm(&e1), frobenius_norm(&e2));
        assert!((n1 / n2 - 1.0).abs() < 0.05);
        // sigma = 1/2, 10^4 entries
        assert!((n1 / 50.0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn mask_counts() {
        assert_eq!(sample_mask(&[144, 256, 20], 0.15, 1).unwrap().len(), 110_592);
        let full = sample_mask(&[3, 4], 1.0, 2).unwrap();
        assert_eq!(full.len(), 12);
        let mut seen: Vec<_> = full.iter().map(|m| m.as_slice().to_vec()).collect();
        seen.dedup();
        assert_eq!(seen.len(), 12);
        assert_eq!(sample_mask(&[10], 0.01, 2).unwrap().len(), 1);
        assert_eq!(sample_count(4, 0.625).unwrap(), 3);
        assert!(sample_mask(&[4, 4], 0.0, 1).is_err());
        assert!(sample_mask(&[4, 4], 1.5, 1).is_err());
        assert!(sample_mask(&[4, 4], f64::NAN, 1).is_err());
    }

    #[test]
    fn mask_small_exhaustive() {
        for seed in 0..50 {
            let m = sample_mask(&[4, 4], 0.25, seed).unwrap();
            assert_eq!(m.len(), 4);
            for idx in &m {
                idx.check(&[4, 4]).unwrap();
            }
            for a in 0..m.len() {
                for b in a + 1..m.len() {
                    assert_ne!(m[a], m[b]);
                }
            }
        }
    }

    #[test]
    fn observe_examples() {
        let (model, x) = random_cp_tensor(&[5, 4, 3], 2, 4).unwrap();
        let full = sample_mask(x.dims(), 1.0, 0).unwrap();
        let obs = observe(&x, &full).unwrap();
        assert_eq!(obs.to_dense().unwrap(), x);

        let one = observe(&x, &[MultiIndex::new(vec![1, 1, 1])]).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.value(0), x.data()[0]);

        let part = observe(&x, &sample_mask(x.dims(), 0.15, 3).unwrap()).unwrap();
        for (idx, v) in part.iter() {
            assert_eq!(v, model.evaluate(idx).unwrap());
        }
        assert!(matches!(
            observe(&x, &[MultiIndex::new(vec![6, 1, 1])]),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn wafer_single_die_is_scaled_surface() {
        let params = WaferParams {
            roughness: 0.0,
            ..WaferParams::default()
        };
        let w = wafer_pattern(&[6, 5, 1], &params, 3).unwrap();
        let slice = w.tensor.frontal_slice(1).unwrap();
        let expect = w.surface.map(|s| w.gains[0] * s + w.offsets[0]);
        assert_eq!(slice, expect);
    }

    #[test]
    fn wafer_dies_share_surface() {
        let params = WaferParams {
            roughness: 0.0,
            ..WaferParams::default()
        };
        let w = wafer_pattern(&[7, 9, 2], &params, 8).unwrap();
        assert_ne!(w.gains[0], w.gains[1]);
        let s1 = w.tensor.frontal_slice(1).unwrap().add_scalar(-w.offsets[0]);
        let s2 = w.tensor.frontal_slice(2).unwrap().add_scalar(-w.offsets[1]);
        let scaled = s1 * (w.gains[1] / w.gains[0]);
        for (a, b) in s2.iter().zip(scaled.iter()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn wafer_rejects_wrong_order() {
        assert!(wafer_pattern(&[4, 4], &WaferParams::default(), 1).is_err());
        let w1 = wafer_pattern(&[4, 4, 3], &WaferParams::default(), 1).unwrap();
        let w2 = wafer_pattern(&[4, 4, 3], &WaferParams::default(), 1).unwrap();
        assert_eq!(relative_error(&w1.tensor, &w2.tensor).unwrap(), 0.0);
    }
}
