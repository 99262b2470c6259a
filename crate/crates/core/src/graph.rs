//! Finite weighted complete graphs, as seen by the samplers and solvers.
//!
//! Vertices are addressed by a dense `0..vertex_count()` index. Weights are
//! symmetric, nonnegative and zero on the diagonal.

use serde::{Deserialize, Serialize};

pub trait WeightedGraph: Sync {
    fn vertex_count(&self) -> usize;

    /// Weight of the edge `{a, b}`; zero when `a == b`.
    fn weight(&self, a: usize, b: usize) -> f64;

    /// Human-readable vertex name used in reports.
    fn label(&self, v: usize) -> String {
        v.to_string()
    }

    fn dense_weights(&self) -> DenseWeights {
        let n = self.vertex_count();
        let mut w = vec![0.0; n * n];
        for a in 0..n {
            for b in (a + 1)..n {
                let x = self.weight(a, b);
                w[a * n + b] = x;
                w[b * n + a] = x;
            }
        }
        DenseWeights { n, w }
    }
}

/// Row-major symmetric weight matrix with zero diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseWeights {
    n: usize,
    w: Vec<f64>,
}

impl DenseWeights {
    /// Builds a graph from the strict upper triangle; `weight(a, b)` is
    /// queried for `a < b` only.
    pub fn from_fn(n: usize, mut weight: impl FnMut(usize, usize) -> f64) -> Self {
        let mut w = vec![0.0; n * n];
        for a in 0..n {
            for b in (a + 1)..n {
                let x = weight(a, b);
                w[a * n + b] = x;
                w[b * n + a] = x;
            }
        }
        DenseWeights { n, w }
    }

    /// Graph from an explicit edge list; missing edges get weight zero and
    /// repeated edges accumulate.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut w = vec![0.0; n * n];
        for &(a, b, x) in edges {
            assert!(a != b && a < n && b < n, "bad edge ({a}, {b})");
            w[a * n + b] += x;
            w[b * n + a] += x;
        }
        DenseWeights { n, w }
    }

    #[inline]
    pub fn row(&self, a: usize) -> &[f64] {
        &self.w[a * self.n..(a + 1) * self.n]
    }

    pub fn row_sum(&self, a: usize) -> f64 {
        self.row(a).iter().sum()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }
}

impl WeightedGraph for DenseWeights {
    fn vertex_count(&self) -> usize {
        self.n
    }

    #[inline]
    fn weight(&self, a: usize, b: usize) -> f64 {
        self.w[a * self.n + b]
    }

    fn dense_weights(&self) -> DenseWeights {
        self.clone()
    }
}
