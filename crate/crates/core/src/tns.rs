//! Plain-text sparse tensor files (`.tns`).
//!
//! ```text
//! 3            <- order d
//! 2 2 2        <- extents n_1 .. n_d
//! 1 1 1 5.0    <- i_1 .. i_d value, 1-based
//! 2 1 2 -0.25
//! ```
//!
//! Tokens are separated by ASCII whitespace. Blank lines and lines whose
//! first non-blank character is `#` are ignored everywhere. Values are
//! written in shortest round-trip form, so `write` followed by `read`
//! reproduces every value bit for bit. Line numbers in errors count
//! physical lines from 1.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{num_entries, unravel_index, DenseTensor, MultiIndex, ObservationSet};

/// Contents of a `.tns` file.
#[derive(Debug, Clone, PartialEq)]
pub enum TnsData {
    Sparse(ObservationSet),
    Dense(DenseTensor),
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_usize(tok: &str, line: usize, what: &str) -> Result<usize> {
    tok.parse::<usize>().map_err(|_| Error::Parse {
        line,
        msg: format!("{what} `{tok}` is not a non-negative integer"),
    })
}

/// Parses the text of a `.tns` file.
pub fn parse_tns(text: &str) -> Result<ObservationSet> {
    let mut lines = content_lines(text);
    let (line, order_tok) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "missing order line".into(),
    })?;
    let mut toks = order_tok.split_ascii_whitespace();
    let order = parse_usize(toks.next().unwrap_or(""), line, "order")?;
    if toks.next().is_some() {
        return Err(Error::Parse { line, msg: "order line must hold a single integer".into() });
    }
    if order == 0 {
        return Err(Error::Parse { line, msg: "order must be at least 1".into() });
    }

    let (line, dims_tok) = lines.next().ok_or(Error::Parse {
        line: line + 1,
        msg: "missing extents line".into(),
    })?;
    let dims = dims_tok
        .split_ascii_whitespace()
        .map(|t| parse_usize(t, line, "extent"))
        .collect::<Result<Vec<usize>>>()?;
    if dims.len() != order {
        return Err(Error::Parse {
            line,
            msg: format!("expected {order} extents, found {}", dims.len()),
        });
    }
    num_entries(&dims).map_err(|e| Error::Parse { line, msg: e.to_string() })?;

    let mut seen: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut entries = Vec::new();
    for (line, text) in lines {
        let toks: Vec<&str> = text.split_ascii_whitespace().collect();
        if toks.len() != order + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", order + 1, toks.len()),
            });
        }
        let idx = toks[..order]
            .iter()
            .map(|t| parse_usize(t, line, "index"))
            .collect::<Result<Vec<usize>>>()?;
        if idx.iter().zip(&dims).any(|(&i, &n)| i == 0 || i > n) {
            return Err(Error::Bounds { line, index: idx, dims });
        }
        let value: f64 = toks[order].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("value `{}` is not a number", toks[order]),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse { line, msg: format!("value `{}` is not finite", toks[order]) });
        }
        if let Some(&first) = seen.get(&idx) {
            return Err(Error::Duplicate { line, first, index: idx });
        }
        seen.insert(idx.clone(), line);
        entries.push((MultiIndex::new(idx), value));
    }
    if entries.is_empty() {
        return Err(Error::Data("file has no entries".into()));
    }
    ObservationSet::new(dims, entries)
}

/// Reads a `.tns` file as an observation set.
pub fn read_tns(path: impl AsRef<Path>) -> Result<ObservationSet> {
    parse_tns(&std::fs::read_to_string(path)?)
}

/// Reads a `.tns` file; with `dense` set, the file must cover every index
/// and is returned as a [`DenseTensor`].
pub fn load_tns(path: impl AsRef<Path>, dense: bool) -> Result<TnsData> {
    let obs = read_tns(path)?;
    if !dense {
        return Ok(TnsData::Sparse(obs));
    }
    let total = num_entries(obs.dims())?;
    if obs.len() != total {
        return Err(Error::Data(format!(
            "file has {} of {total} entries; a dense tensor needs all of them",
            obs.len()
        )));
    }
    Ok(TnsData::Dense(obs.to_dense()?))
}

fn header(out: &mut String, dims: &[usize]) {
    let _ = writeln!(out, "{}", dims.len());
    let extents: Vec<String> = dims.iter().map(|n| n.to_string()).collect();
    let _ = writeln!(out, "{}", extents.join(" "));
}

fn entry(out: &mut String, idx: &[usize], v: f64) {
    for i in idx {
        let _ = write!(out, "{i} ");
    }
    // `{:?}` is the shortest representation that parses back to `v`.
    let _ = writeln!(out, "{v:?}");
}

pub fn format_observations(obs: &ObservationSet) -> String {
    let mut out = String::new();
    header(&mut out, obs.dims());
    for (idx, v) in obs.iter() {
        entry(&mut out, idx, v);
    }
    out
}

/// Every entry of `t` in row-major order.
pub fn format_dense(t: &DenseTensor) -> String {
    let mut out = String::new();
    header(&mut out, t.dims());
    let mut idx = vec![0; t.order()];
    for (pos, &v) in t.data().iter().enumerate() {
        unravel_index(pos, t.dims(), &mut idx);
        entry(&mut out, &idx, v);
    }
    out
}

pub fn write_tns(path: impl AsRef<Path>, obs: &ObservationSet) -> Result<()> {
    std::fs::write(path, format_observations(obs))?;
    Ok(())
}

pub fn write_dense_tns(path: impl AsRef<Path>, t: &DenseTensor) -> Result<()> {
    std::fs::write(path, format_dense(t))?;
    Ok(())
}
