//! The hierarchical lattice and its finite boxes with a wired boundary vertex.
//!
//! Sites are the positive integers. A finite box of scale `n` holds the sites
//! `1..=2^n` plus one extra vertex `δ_n` that carries the summed weight of
//! everything outside the box. Inside a [`HierGraph`] the site `i` lives at
//! index `i - 1` and `δ_n` at index `2^n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::WeightedGraph;

/// Largest box built without an explicit capacity override.
pub const DEFAULT_MAX_VERTICES: usize = (1 << 13) + 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeParams {
    pub rho: f64,
    pub wbar: f64,
    pub n: u32,
    /// Exponent `k` of the polynomial correction `Q(x) = x^k`; only allowed
    /// at `rho == 2`.
    #[serde(default)]
    pub q_exponent: i32,
}

impl LatticeParams {
    pub fn new(rho: f64, wbar: f64, n: u32) -> Result<Self> {
        Self::with_q(rho, wbar, n, 0)
    }

    pub fn with_q(rho: f64, wbar: f64, n: u32, q_exponent: i32) -> Result<Self> {
        let p = LatticeParams {
            rho,
            wbar,
            n,
            q_exponent,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 1.0) || !self.rho.is_finite() {
            return Err(Error::param(
                "rho",
                format!("must be > 1, got {}", self.rho),
            ));
        }
        if !(self.wbar > 0.0) || !self.wbar.is_finite() {
            return Err(Error::param(
                "wbar",
                format!("must be > 0, got {}", self.wbar),
            ));
        }
        if self.n > 62 {
            return Err(Error::param(
                "n",
                format!("scale {} is out of range", self.n),
            ));
        }
        if self.q_exponent != 0 && self.rho != 2.0 {
            return Err(Error::param(
                "q_exponent",
                format!(
                    "a polynomial weight correction requires rho = 2, got rho = {}",
                    self.rho
                ),
            ));
        }
        Ok(())
    }

    /// Same weights, different box scale.
    pub fn at_scale(&self, n: u32) -> Self {
        LatticeParams { n, ..*self }
    }

    pub fn sites(&self) -> usize {
        1usize << self.n
    }

    fn q(&self, d: u32) -> f64 {
        if self.q_exponent == 0 {
            1.0
        } else {
            (d as f64).powi(self.q_exponent)
        }
    }

    /// Weight at hierarchical distance `d >= 1`.
    #[inline]
    pub fn weight_at_distance(&self, d: u32) -> f64 {
        if d == 0 {
            return 0.0;
        }
        self.wbar * (2.0 * self.rho).powi(-(d as i32)) * self.q(d)
    }

    /// Total weight from one site to all of `X \ Λ_n`, i.e. the sum over
    /// distances `d > n` of `2^{d-1}` sites at weight `W(d)`.
    pub fn outside_weight(&self, n: u32) -> f64 {
        if self.q_exponent == 0 {
            return self.wbar * self.rho.powi(-(n as i32)) / (2.0 * (self.rho - 1.0));
        }
        // rho = 2: (wbar/2) * sum_{d>n} 2^{-d} d^k, summed until the tail is negligible.
        let mut total = 0.0;
        let mut d = n + 1;
        loop {
            let term = 0.5 * self.wbar * 0.5f64.powi(d as i32) * self.q(d);
            total += term;
            let past_peak =
                (d as f64) > 2.0 * (self.q_exponent.max(0) as f64) / std::f64::consts::LN_2;
            if (past_peak && term <= 1e-18 * total) || d > n + 4000 {
                break;
            }
            d += 1;
        }
        total
    }
}

/// Order of the smallest dyadic block containing both sites (1-based).
#[inline]
pub fn hier_distance(i: u64, j: u64) -> u32 {
    debug_assert!(i >= 1 && j >= 1);
    let x = (i - 1) ^ (j - 1);
    u64::BITS - x.leading_zeros()
}

/// `d = 2 log 2 / log rho`.
pub fn spectral_dimension(rho: f64) -> Result<f64> {
    if !(rho > 1.0) {
        return Err(Error::param("rho", format!("must be > 1, got {rho}")));
    }
    Ok(2.0 * std::f64::consts::LN_2 / rho.ln())
}

/// Inverse of [`spectral_dimension`].
pub fn rho_for_dimension(d: f64) -> Result<f64> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::param("d", format!("must be positive, got {d}")));
    }
    Ok((2.0 * std::f64::consts::LN_2 / d).exp())
}

/// `W_{i,j}` between two sites (1-based).
#[inline]
pub fn edge_weight(i: u64, j: u64, params: &LatticeParams) -> f64 {
    params.weight_at_distance(hier_distance(i, j))
}

/// `W_{δ_n, i}`, the same for every site of the box.
pub fn boundary_weight(i: u64, params: &LatticeParams) -> Result<f64> {
    if i < 1 || i > params.sites() as u64 {
        return Err(Error::param(
            "i",
            format!(
                "site {i} is outside Λ_{} = 1..={}",
                params.n,
                params.sites()
            ),
        ));
    }
    Ok(params.outside_weight(params.n))
}

/// Sum of `W_{i,j}` over all sites `j != i` of the infinite lattice.
pub fn full_row_sum(params: &LatticeParams) -> f64 {
    params.outside_weight(0)
}

/// The box `Λ̃_n`: weights are evaluated on demand from hierarchical distances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierGraph {
    params: LatticeParams,
    sites: usize,
    boundary: f64,
}

pub fn build_finite_box(params: LatticeParams) -> Result<HierGraph> {
    build_finite_box_with_cap(params, DEFAULT_MAX_VERTICES)
}

pub fn build_finite_box_with_cap(params: LatticeParams, max_vertices: usize) -> Result<HierGraph> {
    params.validate()?;
    let requested = (1usize << params.n) + 1;
    if requested > max_vertices {
        return Err(Error::Capacity {
            requested,
            cap: max_vertices,
        });
    }
    Ok(HierGraph {
        params,
        sites: requested - 1,
        boundary: params.outside_weight(params.n),
    })
}

impl HierGraph {
    pub fn params(&self) -> &LatticeParams {
        &self.params
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    /// Index of `δ_n`.
    pub fn delta(&self) -> usize {
        self.sites
    }

    /// Index of the 1-based site `i`.
    pub fn index_of(&self, site: u64) -> usize {
        assert!(
            site >= 1 && site as usize <= self.sites,
            "site {site} outside box"
        );
        site as usize - 1
    }

    pub fn boundary_weight(&self) -> f64 {
        self.boundary
    }
}

impl WeightedGraph for HierGraph {
    fn vertex_count(&self) -> usize {
        self.sites + 1
    }

    #[inline]
    fn weight(&self, a: usize, b: usize) -> f64 {
        if a == b {
            0.0
        } else if a == self.sites || b == self.sites {
            self.boundary
        } else {
            edge_weight(a as u64 + 1, b as u64 + 1, &self.params)
        }
    }

    fn label(&self, v: usize) -> String {
        if v == self.sites {
            "delta".to_string()
        } else {
            (v + 1).to_string()
        }
    }
}

/// Site at hierarchical distance exactly `k` from site 1 (`k >= 1`).
pub fn representative_site(k: u32) -> u64 {
    (1u64 << (k - 1)) + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(rho: f64, wbar: f64, n: u32) -> LatticeParams {
        LatticeParams::new(rho, wbar, n).unwrap()
    }

    /// Definition-level distance: smallest k such that both sites share a block
    /// `{2^k (m-1) + 1, ..., m 2^k}`.
    fn distance_by_blocks(i: u64, j: u64) -> u32 {
        (0..64)
            .find(|&k| (i - 1) >> k == (j - 1) >> k)
            .expect("sites always share a block")
    }

    #[test]
    fn distance_examples() {
        assert_eq!(hier_distance(1, 1), 0);
        assert_eq!(hier_distance(1, 7), 3);
        assert_eq!(hier_distance(5, 17), 5);
        assert_eq!(hier_distance(1, 2), 1);
        for n in 0..10 {
            for i in 1..=(1u64 << n) {
                assert_eq!(hier_distance(i, (1 << n) + 1), n + 1);
            }
        }
    }

    #[test]
    fn distance_matches_block_definition() {
        for i in 1..=128u64 {
            for j in 1..=128u64 {
                assert_eq!(hier_distance(i, j), distance_by_blocks(i, j));
            }
        }
    }

    #[test]
    fn distance_is_ultrametric() {
        for i in 1..=64u64 {
            for j in 1..=64u64 {
                assert_eq!(hier_distance(i, j), hier_distance(j, i));
                for k in 1..=64u64 {
                    let dik = hier_distance(i, k);
                    assert!(dik <= hier_distance(i, j).max(hier_distance(j, k)));
                }
            }
        }
    }

    #[test]
    fn dimension() {
        assert_eq!(spectral_dimension(2.0).unwrap(), 2.0);
        assert!((spectral_dimension(4.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(spectral_dimension(3.0).unwrap() < 2.0);
        assert!(spectral_dimension(1.5).unwrap() > 2.0);
        assert!(spectral_dimension(1.0).is_err());
        assert!(spectral_dimension(0.5).is_err());

        // Solve 2 log2 / log rho = 3 by bisection, independently of the closed form.
        let (mut lo, mut hi) = (1.0 + 1e-12, 2.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if spectral_dimension(mid).unwrap() > 3.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let rho3 = rho_for_dimension(3.0).unwrap();
        assert!((rho3 - 0.5 * (lo + hi)).abs() < 1e-12);
        assert!((rho3 - 2f64.powf(2.0 / 3.0)).abs() < 1e-12);
        assert!((rho3 - 1.5874).abs() < 1e-4);
        assert!((spectral_dimension(rho3).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn weights() {
        let params = p(4.0, 1.0, 3);
        assert_eq!(edge_weight(1, 2, &params), 1.0 / 8.0);
        assert_eq!(edge_weight(3, 3, &params), 0.0);
        assert!((edge_weight(1, 7, &params) - 8f64.powi(-3)).abs() < 1e-18);
    }

    #[test]
    fn row_sum_matches_partial_sums() {
        for &rho in &[1.3, 2.0, 4.0, 7.5] {
            let params = p(rho, 0.7, 0);
            let closed = 0.7 / (2.0 * (rho - 1.0));
            assert!((full_row_sum(&params) - closed).abs() < 1e-14 * closed);
            // Sum W_{1,j} over j = 2..=2^K; the missing tail is the weight outside Λ_K.
            for k in [4u32, 8, 14] {
                let brute: f64 = (2..=(1u64 << k)).map(|j| edge_weight(1, j, &params)).sum();
                let tail = params.outside_weight(k);
                assert!(
                    (brute + tail - closed).abs() < 1e-12 * closed,
                    "rho={rho} K={k}"
                );
            }
        }
    }

    #[test]
    fn boundary_weight_values() {
        let params = p(4.0, 1.0, 3);
        assert!((boundary_weight(1, &params).unwrap() - 1.0 / 384.0).abs() < 1e-18);
        assert!(boundary_weight(0, &params).is_err());
        assert!(boundary_weight(9, &params).is_err());
        assert_eq!(
            boundary_weight(1, &params).unwrap(),
            boundary_weight(8, &params).unwrap()
        );

        let single = p(4.0, 1.0, 0);
        assert!((boundary_weight(1, &single).unwrap() - full_row_sum(&single)).abs() < 1e-16);

        // Partial sums over 2^n + 1 ..= 2^{n+6} approach the boundary weight
        // from below, short by exactly the weight outside Λ_{n+6}.
        for &rho in &[1.5, 2.0, 4.0] {
            let params = p(rho, 1.0, 3);
            let bw = boundary_weight(5, &params).unwrap();
            let brute: f64 = ((1u64 << 3) + 1..=(1u64 << 9))
                .map(|j| edge_weight(5, j, &params))
                .sum();
            assert!(brute < bw);
            let tail = params.outside_weight(9);
            assert!((bw - brute - tail).abs() < 1e-13 * bw);
        }
    }

    #[test]
    fn q_weights_require_rho_two() {
        assert!(LatticeParams::with_q(3.0, 1.0, 2, 1).is_err());
        let params = LatticeParams::with_q(2.0, 1.0, 3, 2).unwrap();
        assert_eq!(edge_weight(1, 2, &params), 0.25);
        assert!((edge_weight(1, 3, &params) - 4.0 / 16.0).abs() < 1e-16);
        // Series boundary weight matches a long sum over distance shells,
        // each holding 2^{d-1} sites.
        let brute: f64 = (4..400u32)
            .map(|d| 2f64.powi(d as i32 - 1) * params.weight_at_distance(d))
            .sum();
        let bw = boundary_weight(1, &params).unwrap();
        assert!((brute - bw).abs() < 1e-14 * bw, "brute {brute} vs {bw}");
        let neg = LatticeParams::with_q(2.0, 1.0, 3, -1).unwrap();
        assert!(neg.outside_weight(3) < params.outside_weight(3));
    }

    #[test]
    fn finite_box() {
        let g = build_finite_box(p(4.0, 1.0, 10)).unwrap();
        assert_eq!(g.vertex_count(), 1025);
        let g0 = build_finite_box(p(4.0, 1.0, 0)).unwrap();
        assert_eq!(g0.vertex_count(), 2);
        assert_eq!(g0.label(1), "delta");
        assert!(matches!(
            build_finite_box_with_cap(p(4.0, 1.0, 10), 1000),
            Err(Error::Capacity {
                requested: 1025,
                cap: 1000
            })
        ));
        assert!(build_finite_box(p(4.0, 1.0, 20)).is_err());

        let g = build_finite_box(p(3.0, 0.5, 5)).unwrap();
        let n = g.vertex_count();
        for a in 0..n {
            assert_eq!(g.weight(a, a), 0.0);
            for b in 0..n {
                assert_eq!(g.weight(a, b), g.weight(b, a));
                if a != b {
                    assert!(g.weight(a, b) > 0.0);
                }
            }
        }
    }

    #[test]
    fn box_row_sums_are_constant() {
        for &rho in &[1.4, 2.0, 4.0] {
            let g = build_finite_box(p(rho, 1.3, 6)).unwrap();
            let expected = 1.3 / (2.0 * (rho - 1.0));
            for a in 0..g.sites() {
                let s: f64 = (0..g.vertex_count()).map(|b| g.weight(a, b)).sum();
                assert!((s - expected).abs() < 1e-12 * expected);
            }
        }
    }

    #[test]
    fn critical_weights_survive_pairing() {
        // At rho = 2, merging {2m-1, 2m} pairs gives block weights equal to
        // the site weights one level down.
        let params = p(2.0, 1.0, 6);
        for a in 1..=32u64 {
            for b in 1..=32u64 {
                if a == b {
                    continue;
                }
                let block: f64 = [2 * a - 1, 2 * a]
                    .iter()
                    .flat_map(|&x| [2 * b - 1, 2 * b].map(move |y| (x, y)))
                    .map(|(x, y)| edge_weight(x, y, &params))
                    .sum();
                assert!((block - edge_weight(a, b, &params)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn representatives() {
        for k in 1..=12 {
            assert_eq!(hier_distance(1, representative_site(k)), k);
        }
    }
}
