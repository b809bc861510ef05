//! Dense tensors, CP models, observation lists and the basic reductions on
//! them.
//!
//! All reductions accumulate sequentially in canonical (row-major, last index
//! fastest) order so results are reproducible bit-for-bit.

use std::collections::HashSet;
use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() {
        return Err(Error::arg("tensor order must be at least 1"));
    }
    let mut total: usize = 1;
    for &n in dims {
        if n == 0 {
            return Err(Error::arg(format!("zero extent in dims {dims:?}")));
        }
        total = total
            .checked_mul(n)
            .ok_or_else(|| Error::arg(format!("dims {dims:?} overflow the index space")))?;
    }
    Ok(total)
}

/// Number of entries implied by `dims`, validating the extents.
pub fn num_entries(dims: &[usize]) -> Result<usize> {
    check_dims(dims)
}

/// A 1-based multi-index `(i_1, ..., i_d)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    pub fn new(indices: Vec<usize>) -> Self {
        MultiIndex(indices)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }

    pub fn check(&self, dims: &[usize]) -> Result<()> {
        check_index(&self.0, dims)
    }
}

impl From<Vec<usize>> for MultiIndex {
    fn from(v: Vec<usize>) -> Self {
        MultiIndex(v)
    }
}

impl From<&[usize]> for MultiIndex {
    fn from(v: &[usize]) -> Self {
        MultiIndex(v.to_vec())
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, i) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, ")")
    }
}

fn check_index(idx: &[usize], dims: &[usize]) -> Result<()> {
    if idx.len() != dims.len() || idx.iter().zip(dims).any(|(&i, &n)| i == 0 || i > n) {
        return Err(Error::Index {
            index: idx.to_vec(),
            dims: dims.to_vec(),
        });
    }
    Ok(())
}

/// Row-major linear position of a 1-based multi-index.
pub fn linear_index(idx: &[usize], dims: &[usize]) -> Result<usize> {
    check_index(idx, dims)?;
    Ok(linear_index_unchecked(idx, dims))
}

pub(crate) fn linear_index_unchecked(idx: &[usize], dims: &[usize]) -> usize {
    idx.iter()
        .zip(dims)
        .fold(0usize, |acc, (&i, &n)| acc * n + (i - 1))
}

/// Inverse of [`linear_index`]: writes the 1-based multi-index of `pos`.
pub fn unravel_index(mut pos: usize, dims: &[usize], out: &mut [usize]) {
    for k in (0..dims.len()).rev() {
        out[k] = pos % dims[k] + 1;
        pos /= dims[k];
    }
}

/// A d-way array of finite reals in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n = check_dims(&dims)?;
        if data.len() != n {
            return Err(Error::Data(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        if let Some(p) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at linear position {p}")));
        }
        Ok(DenseTensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let n = check_dims(&dims)?;
        Ok(DenseTensor {
            dims,
            data: vec![0.0; n],
        })
    }

    pub fn filled(dims: Vec<usize>, value: f64) -> Result<Self> {
        let mut t = Self::zeros(dims)?;
        t.data.iter_mut().for_each(|v| *v = value);
        Self::new(t.dims, t.data)
    }

    /// Builds a tensor by evaluating `f` at every 1-based multi-index in
    /// canonical order.
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let n = check_dims(&dims)?;
        let mut idx = vec![1; dims.len()];
        let mut data = Vec::with_capacity(n);
        for pos in 0..n {
            unravel_index(pos, &dims, &mut idx);
            data.push(f(&idx));
        }
        Self::new(dims, data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, idx: &[usize]) -> Result<f64> {
        Ok(self.data[linear_index(idx, &self.dims)?])
    }

    pub fn set(&mut self, idx: &[usize], value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Data(format!("non-finite value {value}")));
        }
        let p = linear_index(idx, &self.dims)?;
        self.data[p] = value;
        Ok(())
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.zip_with(other, |a, b| a + b)
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> DenseTensor {
        DenseTensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    fn zip_with(&self, other: &DenseTensor, f: impl Fn(f64, f64) -> f64) -> Result<DenseTensor> {
        same_shape(self, other)?;
        DenseTensor::new(
            self.dims.clone(),
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    /// Reorders the modes: mode `k` of the result is mode `perm[k]` of `self`.
    pub fn permute_modes(&self, perm: &[usize]) -> Result<DenseTensor> {
        let d = self.order();
        let mut seen = vec![false; d];
        if perm.len() != d || perm.iter().any(|&p| p >= d || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::arg(format!("{perm:?} is not a permutation of 0..{d}")));
        }
        let dims: Vec<usize> = perm.iter().map(|&p| self.dims[p]).collect();
        let mut src = vec![0; d];
        DenseTensor::from_fn(dims, |idx| {
            for (k, &p) in perm.iter().enumerate() {
                src[p] = idx[k];
            }
            self.data[linear_index_unchecked(&src, &self.dims)]
        })
    }

    /// Mode-`mode` unfolding (0-based mode): an `n_mode x (N / n_mode)`
    /// matrix whose columns run over the remaining indices in row-major
    /// order.
    pub fn unfold(&self, mode: usize) -> Result<DMatrix<f64>> {
        if mode >= self.order() {
            return Err(Error::arg(format!("mode {mode} out of range for order {}", self.order())));
        }
        let rows = self.dims[mode];
        let cols = self.len() / rows;
        let mut m = DMatrix::zeros(rows, cols);
        let mut idx = vec![0; self.order()];
        for (pos, &v) in self.data.iter().enumerate() {
            unravel_index(pos, &self.dims, &mut idx);
            let col = unfold_column(&idx, &self.dims, mode);
            m[(idx[mode] - 1, col)] = v;
        }
        Ok(m)
    }

    /// The `i3`-th (1-based) frontal slice of an order-3 tensor as an
    /// `n1 x n2` matrix.
    pub fn frontal_slice(&self, i3: usize) -> Result<DMatrix<f64>> {
        if self.order() != 3 {
            return Err(Error::arg("frontal slices need an order-3 tensor"));
        }
        let (n1, n2, n3) = (self.dims[0], self.dims[1], self.dims[2]);
        if i3 == 0 || i3 > n3 {
            return Err(Error::Index {
                index: vec![1, 1, i3],
                dims: self.dims.clone(),
            });
        }
        Ok(DMatrix::from_fn(n1, n2, |a, b| {
            self.data[(a * n2 + b) * n3 + (i3 - 1)]
        }))
    }

    /// Stacks `n1 x n2` slices along a third mode.
    pub fn from_frontal_slices(slices: &[DMatrix<f64>]) -> Result<DenseTensor> {
        let first = slices
            .first()
            .ok_or_else(|| Error::arg("no slices to stack"))?;
        let (n1, n2) = first.shape();
        if let Some(s) = slices.iter().find(|s| s.shape() != (n1, n2)) {
            return Err(Error::Shape {
                left: vec![n1, n2],
                right: vec![s.nrows(), s.ncols()],
            });
        }
        let n3 = slices.len();
        DenseTensor::from_fn(vec![n1, n2, n3], |idx| {
            slices[idx[2] - 1][(idx[0] - 1, idx[1] - 1)]
        })
    }
}

pub(crate) fn unfold_column(idx: &[usize], dims: &[usize], mode: usize) -> usize {
    let mut col = 0;
    for (k, (&i, &n)) in idx.iter().zip(dims).enumerate() {
        if k != mode {
            col = col * n + (i - 1);
        }
    }
    col
}

fn same_shape(x: &DenseTensor, y: &DenseTensor) -> Result<()> {
    if x.dims != y.dims {
        return Err(Error::Shape {
            left: x.dims.clone(),
            right: y.dims.clone(),
        });
    }
    Ok(())
}

/// `<x, y>`: sum of elementwise products.
pub fn inner_product(x: &DenseTensor, y: &DenseTensor) -> Result<f64> {
    same_shape(x, y)?;
    Ok(x.data.iter().zip(&y.data).fold(0.0, |acc, (a, b)| acc + a * b))
}

/// Sum over all indices of the n-way elementwise product.
pub fn generalized_inner_product(tensors: &[&DenseTensor]) -> Result<f64> {
    let (first, rest) = tensors
        .split_first()
        .ok_or_else(|| Error::arg("generalized inner product of an empty list"))?;
    for t in rest {
        same_shape(first, t)?;
    }
    let mut acc = 0.0;
    for (pos, &v) in first.data.iter().enumerate() {
        acc += rest.iter().fold(v, |p, t| p * t.data[pos]);
    }
    Ok(acc)
}

pub fn frobenius_norm(x: &DenseTensor) -> f64 {
    x.data.iter().fold(0.0, |acc, v| acc + v * v).sqrt()
}

/// `||pred - truth||_F / ||truth||_F`.
pub fn relative_error(pred: &DenseTensor, truth: &DenseTensor) -> Result<f64> {
    same_shape(pred, truth)?;
    let denom = frobenius_norm(truth);
    if denom == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let num = pred
        .data
        .iter()
        .zip(&truth.data)
        .fold(0.0, |acc, (p, t)| acc + (p - t) * (p - t))
        .sqrt();
    Ok(num / denom)
}

/// Rank-`r` CP model: `X = sum_j u_1^j o u_2^j o ... o u_d^j`.
///
/// Factor `k` is an `n_k x r` matrix whose column `j` is `u_k^j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CpModel {
    factors: Vec<DMatrix<f64>>,
}

impl CpModel {
    pub fn new(factors: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = factors
            .first()
            .ok_or_else(|| Error::Model("a CP model needs at least one factor".into()))?;
        let r = first.ncols();
        if let Some((k, f)) = factors.iter().enumerate().find(|(_, f)| f.ncols() != r) {
            return Err(Error::Model(format!(
                "factor {} has {} columns, factor 1 has {r}",
                k + 1,
                f.ncols()
            )));
        }
        if let Some(k) = factors.iter().position(|f| f.nrows() == 0) {
            return Err(Error::Model(format!("factor {} has no rows", k + 1)));
        }
        if factors.iter().any(|f| f.iter().any(|v| !v.is_finite())) {
            return Err(Error::Model("non-finite factor entry".into()));
        }
        Ok(CpModel { factors })
    }

    /// The rank-0 model of the given dims (the zero tensor).
    pub fn zero(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        Self::new(dims.iter().map(|&n| DMatrix::zeros(n, 0)).collect())
    }

    pub fn rank(&self) -> usize {
        self.factors[0].ncols()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn into_factors(self) -> Vec<DMatrix<f64>> {
        self.factors
    }

    /// `sum_j prod_k U_k(i_k, j)` at a 1-based index.
    pub fn evaluate(&self, idx: &[usize]) -> Result<f64> {
        check_index(idx, &self.dims())?;
        Ok(self.evaluate_unchecked(idx))
    }

    fn evaluate_unchecked(&self, idx: &[usize]) -> f64 {
        let mut sum = 0.0;
        for j in 0..self.rank() {
            let mut prod = 1.0;
            for (f, &i) in self.factors.iter().zip(idx) {
                prod *= f[(i - 1, j)];
            }
            sum += prod;
        }
        sum
    }

    /// Dense tensor with every entry equal to [`CpModel::evaluate`].
    pub fn reconstruct(&self) -> DenseTensor {
        let dims = self.dims();
        let n: usize = dims.iter().product();
        let mut idx = vec![1; dims.len()];
        let mut data = Vec::with_capacity(n);
        for pos in 0..n {
            unravel_index(pos, &dims, &mut idx);
            data.push(self.evaluate_unchecked(&idx));
        }
        DenseTensor { dims, data }
    }

    /// Product over modes of the column norms of component `j`, i.e. the
    /// Frobenius norm of the rank-1 term.
    pub fn component_power(&self, j: usize) -> f64 {
        self.factors
            .iter()
            .map(|f| f.column(j).norm())
            .product()
    }
}

/// Convenience alias for [`CpModel::evaluate`].
pub fn cp_evaluate_entry(model: &CpModel, idx: &MultiIndex) -> Result<f64> {
    model.evaluate(idx.as_slice())
}

/// Convenience alias for [`CpModel::reconstruct`].
pub fn cp_reconstruct(model: &CpModel) -> DenseTensor {
    model.reconstruct()
}

/// Observed entries `{(i, y_i) : i in Omega}` of a tensor with known dims.
///
/// Indices are unique, in bounds and 1-based; values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    dims: Vec<usize>,
    // Flattened 1-based indices, `order` per entry.
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl ObservationSet {
    pub fn new(dims: Vec<usize>, entries: Vec<(MultiIndex, f64)>) -> Result<Self> {
        let mut builder = ObservationBuilder::new(dims)?;
        for (idx, v) in entries {
            builder.push(idx.as_slice(), v)?;
        }
        builder.finish()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    /// `|Omega|`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index(&self, e: usize) -> &[usize] {
        let d = self.order();
        &self.indices[e * d..(e + 1) * d]
    }

    pub fn value(&self, e: usize) -> f64 {
        self.values[e]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], f64)> + '_ {
        self.indices
            .chunks_exact(self.order())
            .zip(self.values.iter().copied())
    }

    /// `|Omega| / prod n_k`.
    pub fn sampling_ratio(&self) -> f64 {
        let total: usize = self.dims.iter().product();
        self.len() as f64 / total as f64
    }

    /// Materializes a dense tensor when every index is observed.
    pub fn to_dense(&self) -> Result<DenseTensor> {
        let total: usize = self.dims.iter().product();
        if self.len() != total {
            return Err(Error::Data(format!(
                "{} of {total} entries observed; cannot materialize a dense tensor",
                self.len()
            )));
        }
        let mut data = vec![0.0; total];
        for (idx, v) in self.iter() {
            data[linear_index_unchecked(idx, &self.dims)] = v;
        }
        DenseTensor::new(self.dims.clone(), data)
    }

    /// Every entry of a dense tensor as an observation set.
    pub fn from_dense(t: &DenseTensor) -> Self {
        let d = t.order();
        let mut indices = Vec::with_capacity(t.len() * d);
        let mut idx = vec![1; d];
        for pos in 0..t.len() {
            unravel_index(pos, t.dims(), &mut idx);
            indices.extend_from_slice(&idx);
        }
        ObservationSet {
            dims: t.dims().to_vec(),
            indices,
            values: t.data().to_vec(),
        }
    }

    /// Applies `f` to every value, keeping the index set.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite value after transform".into()));
        }
        Ok(ObservationSet {
            dims: self.dims.clone(),
            indices: self.indices.clone(),
            values,
        })
    }

    /// Restricts to the entries whose 1-based third index equals `i3`,
    /// returned as an order-2 set over the first two modes.
    pub fn frontal_slice(&self, i3: usize) -> Result<Option<ObservationSet>> {
        if self.order() != 3 {
            return Err(Error::arg("frontal slices need order-3 observations"));
        }
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (idx, v) in self.iter() {
            if idx[2] == i3 {
                indices.extend_from_slice(&idx[..2]);
                values.push(v);
            }
        }
        if values.is_empty() {
            return Ok(None);
        }
        Ok(Some(ObservationSet {
            dims: self.dims[..2].to_vec(),
            indices,
            values,
        }))
    }

    /// Same entries with the modes reordered (see [`DenseTensor::permute_modes`]).
    pub fn permute_modes(&self, perm: &[usize]) -> Result<Self> {
        let d = self.order();
        let mut seen = vec![false; d];
        if perm.len() != d || perm.iter().any(|&p| p >= d || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::arg(format!("{perm:?} is not a permutation of 0..{d}")));
        }
        let mut indices = Vec::with_capacity(self.indices.len());
        for idx in self.indices.chunks_exact(d) {
            indices.extend(perm.iter().map(|&p| idx[p]));
        }
        Ok(ObservationSet {
            dims: perm.iter().map(|&p| self.dims[p]).collect(),
            indices,
            values: self.values.clone(),
        })
    }
}

/// Incremental, validating constructor for [`ObservationSet`].
#[derive(Debug)]
pub struct ObservationBuilder {
    dims: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
    seen: HashSet<usize>,
}

impl ObservationBuilder {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        check_dims(&dims)?;
        Ok(ObservationBuilder {
            dims,
            indices: Vec::new(),
            values: Vec::new(),
            seen: HashSet::new(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn push(&mut self, idx: &[usize], value: f64) -> Result<()> {
        check_index(idx, &self.dims)?;
        if !value.is_finite() {
            return Err(Error::Data(format!(
                "non-finite value at {}",
                MultiIndex::from(idx)
            )));
        }
        if !self.seen.insert(linear_index_unchecked(idx, &self.dims)) {
            return Err(Error::Data(format!(
                "duplicate index {}",
                MultiIndex::from(idx)
            )));
        }
        self.indices.extend_from_slice(idx);
        self.values.push(value);
        Ok(())
    }

    pub fn finish(self) -> Result<ObservationSet> {
        if self.values.is_empty() {
            return Err(Error::arg("observation set is empty"));
        }
        Ok(ObservationSet {
            dims: self.dims,
            indices: self.indices,
            values: self.values,
        })
    }
}
