//! Communication graphs with doubly stochastic weights.
//!
//! A [`MixingMatrix`] is always validated on construction: rows and columns
//! sum to one, the digraph of strictly positive off-diagonal weights is
//! strongly connected, and the contraction factor
//! `kappa = ||A - (1/N) 1 1^T||_2` is strictly below one. Entry `a_ij > 0`
//! means agent `i` listens to agent `j`.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::spectral_norm;

/// Row/column sum tolerance for matrices built in code.
pub const BUILTIN_TOL: f64 = 1e-12;
/// Row/column sum tolerance for matrices read from text.
pub const LOAD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    weights: DMatrix<f64>,
    kappa: f64,
}

impl MixingMatrix {
    /// Uniform averaging over all agents; `kappa = 0`.
    pub fn complete(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSize("complete graph needs at least one agent".into()));
        }
        let weights = DMatrix::from_element(n, n, 1.0 / n as f64);
        Self::validated(weights, BUILTIN_TOL)
    }

    /// Symmetric ring: `self_weight` on the diagonal and
    /// `(1 - self_weight) / 2` on each of the two ring neighbours.
    pub fn ring(n: usize, self_weight: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidSize(format!("ring needs n >= 3, got {n}")));
        }
        if !(self_weight > 0.0 && self_weight < 1.0) {
            return Err(Error::Parameter(format!(
                "ring self weight must lie in (0, 1), got {self_weight}"
            )));
        }
        let side = (1.0 - self_weight) / 2.0;
        let mut weights = DMatrix::zeros(n, n);
        for i in 0..n {
            weights[(i, i)] = self_weight;
            weights[(i, (i + 1) % n)] += side;
            weights[(i, (i + n - 1) % n)] += side;
        }
        Self::validated(weights, BUILTIN_TOL)
    }

    /// Validates an arbitrary square matrix of nonnegative weights.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidSize("empty matrix".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidSize(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
        }
        let weights = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::validated(weights, LOAD_TOL)
    }

    pub fn from_matrix(weights: DMatrix<f64>) -> Result<Self> {
        if weights.nrows() != weights.ncols() || weights.nrows() == 0 {
            return Err(Error::InvalidSize(format!(
                "expected a nonempty square matrix, got {}x{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        Self::validated(weights, LOAD_TOL)
    }

    fn validated(weights: DMatrix<f64>, tol: f64) -> Result<Self> {
        let n = weights.nrows();
        for v in weights.iter() {
            if !v.is_finite() || *v < 0.0 || *v > 1.0 + tol {
                return Err(Error::NotDoublyStochastic(format!(
                    "entry {v} is outside [0, 1]"
                )));
            }
        }
        for i in 0..n {
            let row: f64 = weights.row(i).sum();
            if (row - 1.0).abs() > tol {
                return Err(Error::NotDoublyStochastic(format!("row {i} sums to {row}")));
            }
            let col: f64 = weights.column(i).sum();
            if (col - 1.0).abs() > tol {
                return Err(Error::NotDoublyStochastic(format!("column {i} sums to {col}")));
            }
        }
        if !strongly_connected(&weights) {
            return Err(Error::NotStronglyConnected);
        }
        let kappa = compute_kappa(&weights);
        if kappa >= 1.0 - 1e-12 {
            return Err(Error::DegenerateSpectrum { kappa });
        }
        Ok(Self { weights, kappa })
    }

    pub fn n_agents(&self) -> usize {
        self.weights.nrows()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Agents `j != i` with `a_ij > 0`, in index order.
    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n_agents())
            .filter(|&j| j != i && self.weights[(i, j)] > 0.0)
            .collect()
    }

    /// Number of agents that listen to `j` (excluding `j` itself).
    pub fn out_degree(&self, j: usize) -> usize {
        (0..self.n_agents())
            .filter(|&i| i != j && self.weights[(i, j)] > 0.0)
            .count()
    }

    /// Applies `A ⊗ I_d` to a stacked vector of `N` blocks of length `d`.
    pub fn mix(&self, stacked: &[f64], d: usize) -> Vec<f64> {
        let n = self.n_agents();
        assert_eq!(stacked.len(), n * d, "stacked vector has wrong length");
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..n {
                let a = self.weights[(i, j)];
                if a == 0.0 {
                    continue;
                }
                for c in 0..d {
                    out[i * d + c] += a * stacked[j * d + c];
                }
            }
        }
        out
    }

    /// Parses the plain-text format: first line `N`, then `N` lines of `N`
    /// whitespace-separated decimal weights.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("missing size line".into()))?;
        let n: usize = header
            .parse()
            .map_err(|_| Error::Parse(format!("bad size line {header:?}")))?;
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("missing row {i}")))?;
            let row = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad weight {tok:?} in row {i}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        if lines.next().is_some() {
            return Err(Error::Parse("trailing content after matrix rows".into()));
        }
        Self::from_rows(&rows)
    }

    /// Serializes in the format read by [`MixingMatrix::parse`], 17 significant digits.
    pub fn to_text(&self) -> String {
        let n = self.n_agents();
        let mut out = format!("{n}\n");
        for i in 0..n {
            for j in 0..n {
                if j > 0 {
                    out.push(' ');
                }
                write!(out, "{:.16e}", self.weights[(i, j)]).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Largest singular value of `A - (1/N) 1 1^T`.
pub fn compute_kappa(weights: &DMatrix<f64>) -> f64 {
    let n = weights.nrows();
    let avg = 1.0 / n as f64;
    let deflated = DMatrix::from_fn(n, n, |i, j| weights[(i, j)] - avg);
    spectral_norm(&deflated)
}

fn strongly_connected(weights: &DMatrix<f64>) -> bool {
    let n = weights.nrows();
    // j -> i whenever a_ij > 0
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                let w = if forward { weights[(v, u)] } else { weights[(u, v)] };
                if v != u && w > 0.0 && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}
