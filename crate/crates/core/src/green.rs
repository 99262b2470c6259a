//! The Schrödinger matrix `H_β = 2β − P_W`, its Green's function and the
//! pinned effective field `u`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DenseWeights, WeightedGraph};
use crate::linalg::PackedCholesky;
use crate::stats::{moment_estimate, RobustEstimate, RobustOptions};

/// Dense symmetric `H` with `H_ii = 2β_i` and `H_ij = −W_ij`.
#[derive(Clone, Debug, PartialEq)]
pub struct SchrodingerMatrix {
    n: usize,
    h: Vec<f64>,
}

impl SchrodingerMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.h
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.h[i * self.n + j]
    }
}

pub fn assemble_h(beta: &[f64], w: &DenseWeights) -> SchrodingerMatrix {
    let n = w.vertex_count();
    assert_eq!(
        beta.len(),
        n,
        "beta has {} entries for {n} vertices",
        beta.len()
    );
    let mut h: Vec<f64> = w.as_slice().iter().map(|x| -x).collect();
    for i in 0..n {
        h[i * n + i] = 2.0 * beta[i];
    }
    SchrodingerMatrix { n, h }
}

/// Factorized `H`; columns of `G = H⁻¹` are produced on demand.
#[derive(Clone, Debug)]
pub struct GreenView {
    chol: PackedCholesky,
}

/// Factors `H`. Failure means the β sample lies outside the support and
/// must be discarded, not repaired.
pub fn green(h: &SchrodingerMatrix) -> Result<GreenView> {
    Ok(GreenView {
        chol: PackedCholesky::factor(&h.h, h.n)?,
    })
}

impl GreenView {
    pub fn dim(&self) -> usize {
        self.chol.dim()
    }

    /// `G(·, j)`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.chol.inverse_column(j)
    }

    pub fn factor(&self) -> &PackedCholesky {
        &self.chol
    }

    /// Solves `H x = b`.
    pub fn solve(&self, b: &mut [f64]) {
        self.chol.solve(b)
    }
}

/// `u_i = log G(pin, i) − log G(pin, pin)` together with `G(pin, pin)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UField {
    pub pin: usize,
    pub u: Vec<f64>,
    pub g_pin: f64,
}

impl UField {
    /// Rebuilds a field from a Green's-function column.
    pub fn from_column(pin: usize, col: &[f64]) -> Result<Self> {
        let g_pin = col[pin];
        if !(g_pin > 0.0) || !g_pin.is_finite() {
            return Err(Error::Numerical(format!(
                "G({pin},{pin}) = {g_pin:e} is not positive"
            )));
        }
        let lg = g_pin.ln();
        let mut u = Vec::with_capacity(col.len());
        for (i, &g) in col.iter().enumerate() {
            if !(g > 0.0) || !g.is_finite() {
                return Err(Error::Numerical(format!(
                    "G({pin},{i}) = {g:e} is not positive"
                )));
            }
            u.push(g.ln() - lg);
        }
        u[pin] = 0.0;
        Ok(UField { pin, u, g_pin })
    }

    /// `γ = 1/(2 G(pin, pin))`.
    pub fn gamma(&self) -> f64 {
        0.5 / self.g_pin
    }

    pub fn exp_u(&self, i: usize) -> f64 {
        self.u[i].exp()
    }

    /// `e^{u_B}` as the arithmetic mean of `e^{u_i}` over the block.
    pub fn block_exp_u(&self, block: &[usize]) -> f64 {
        block.iter().map(|&i| self.u[i].exp()).sum::<f64>() / block.len() as f64
    }
}

pub fn ufield_pinned(g: &GreenView, pin: usize) -> Result<UField> {
    if pin >= g.dim() {
        return Err(Error::param(
            "pin",
            format!("vertex {pin} is outside a graph of {} vertices", g.dim()),
        ));
    }
    UField::from_column(pin, &g.column(pin))
}

/// Which scalar of a [`UField`] a moment is taken of.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Selector {
    Vertex(usize),
    /// Block average of `e^{u}`.
    Block(Vec<usize>),
}

impl Selector {
    pub fn exp_u(&self, f: &UField) -> f64 {
        match self {
            Selector::Vertex(i) => f.exp_u(*i),
            Selector::Block(b) => f.block_exp_u(b),
        }
    }
}

/// Estimate of `E e^{s u}` for `0 < s < ½` over at least 8 fields.
pub fn fractional_moment(
    samples: &[UField],
    s: f64,
    selector: &Selector,
    opts: &RobustOptions,
) -> Result<RobustEstimate> {
    check_moment_order(s)?;
    if samples.len() < 8 {
        return Err(Error::param(
            "samples",
            format!("need at least 8 fields, got {}", samples.len()),
        ));
    }
    let vals: Vec<f64> = samples.iter().map(|f| selector.exp_u(f).powf(s)).collect();
    moment_estimate(&vals, opts)
}

/// Rejects orders at which `E G(i,i)^s` is infinite.
pub fn check_moment_order(s: f64) -> Result<()> {
    if s >= 0.5 {
        return Err(Error::Divergent { s });
    }
    if !(s > 0.0) {
        return Err(Error::param("s", format!("must lie in (0, 1/2), got {s}")));
    }
    Ok(())
}
