//! Parsers for list-valued command-line arguments such as `30,30,15`.

use std::str::FromStr;

use crate::error::{Error, Result};

/// Comma-separated values; surrounding whitespace is ignored, empty items
/// are rejected.
pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>> {
    if s.trim().is_empty() {
        return Err(Error::arg("empty list"));
    }
    s.split(',')
        .map(|item| {
            let item = item.trim();
            item.parse::<T>()
                .map_err(|_| Error::arg(format!("cannot parse list item `{item}`")))
        })
        .collect()
}

/// Tensor extents, separated by `,` or `x` (`64,64,10` or `64x64x10`).
/// Every extent must be at least 1 and the product must fit in `usize`.
pub fn parse_dims(s: &str) -> Result<Vec<usize>> {
    let normalized = s.replace(['x', 'X'], ",");
    let dims: Vec<usize> = parse_list(&normalized)?;
    crate::tensor::num_entries(&dims)?;
    Ok(dims)
}

/// Sampling ratios in `(0, 1]`.
pub fn parse_ratios(s: &str) -> Result<Vec<f64>> {
    let ratios: Vec<f64> = parse_list(s)?;
    if let Some(bad) = ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(Error::arg(format!("sampling ratio {bad} is outside (0, 1]")));
    }
    Ok(ratios)
}
