//! Block partitions of a box and the coarse-grained graphs they induce.
//!
//! Partitions index the vertices of the graph they partition; for a
//! [`HierGraph`](crate::lattice::HierGraph) site `i` is index `i - 1` and the
//! boundary vertex is index `2^n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DenseWeights, WeightedGraph};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    blocks: Vec<Vec<usize>>,
    labels: Vec<String>,
    /// Block of each vertex.
    owner: Vec<usize>,
}

impl Partition {
    /// Validates disjointness and covering of `0..n_vertices`. Members are
    /// sorted and blocks ordered by their smallest member.
    pub fn new(n_vertices: usize, blocks: Vec<Vec<usize>>, labels: Vec<String>) -> Result<Self> {
        if blocks.len() != labels.len() {
            return Err(Error::Partition(format!(
                "{} blocks but {} labels",
                blocks.len(),
                labels.len()
            )));
        }
        let mut pairs: Vec<(Vec<usize>, String)> = blocks.into_iter().zip(labels).collect();
        let mut owner = vec![usize::MAX; n_vertices];
        for (b, label) in pairs.iter_mut() {
            if b.is_empty() {
                return Err(Error::Partition(format!("block {label} is empty")));
            }
            b.sort_unstable();
        }
        pairs.sort_by_key(|(b, _)| b[0]);
        for (k, (b, label)) in pairs.iter().enumerate() {
            for &v in b {
                if v >= n_vertices {
                    return Err(Error::Partition(format!(
                        "block {label} contains vertex {v}, graph has {n_vertices}"
                    )));
                }
                if owner[v] != usize::MAX {
                    return Err(Error::Partition(format!(
                        "vertex {v} is in both {} and {label}",
                        pairs[owner[v]].1
                    )));
                }
                owner[v] = k;
            }
        }
        if let Some(v) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(Error::Partition(format!("vertex {v} is in no block")));
        }
        let (blocks, labels) = pairs.into_iter().unzip();
        Ok(Partition {
            blocks,
            labels,
            owner,
        })
    }

    pub fn singletons(n_vertices: usize) -> Self {
        Partition::new(
            n_vertices,
            (0..n_vertices).map(|v| vec![v]).collect(),
            (0..n_vertices).map(|v| v.to_string()).collect(),
        )
        .expect("singletons always partition")
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        self.owner.len()
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block(&self, k: usize) -> &[usize] {
        &self.blocks[k]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn block_of(&self, v: usize) -> usize {
        self.owner[v]
    }

    pub fn index_of_label(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Composes with a partition of this partition's blocks.
    pub fn compose(&self, outer: &Partition) -> Result<Partition> {
        if outer.vertex_count() != self.len() {
            return Err(Error::Partition(format!(
                "outer partition covers {} blocks, inner has {}",
                outer.vertex_count(),
                self.len()
            )));
        }
        let blocks = outer
            .blocks
            .iter()
            .map(|ob| {
                ob.iter()
                    .flat_map(|&b| self.blocks[b].iter().copied())
                    .collect()
            })
            .collect();
        Partition::new(self.vertex_count(), blocks, outer.labels.clone())
    }
}

/// A graph whose vertices are the blocks of a partition of a parent graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseGraph {
    weights: DenseWeights,
    partition: Partition,
    /// Weight inside each block, which the coarse graph does not carry.
    internal: Vec<f64>,
}

/// `W'(A, B) = Σ_{u∈A, v∈B} W(u, v)`.
pub fn coarsen<G: WeightedGraph + ?Sized>(graph: &G, partition: &Partition) -> Result<CoarseGraph> {
    let n = graph.vertex_count();
    if partition.vertex_count() != n {
        return Err(Error::Partition(format!(
            "partition covers {} vertices, graph has {n}",
            partition.vertex_count()
        )));
    }
    let m = partition.len();
    let mut acc = vec![0.0; m * m];
    for a in 0..n {
        let ba = partition.block_of(a);
        for b in (a + 1)..n {
            let bb = partition.block_of(b);
            let x = graph.weight(a, b);
            acc[ba * m + bb] += x;
            if ba != bb {
                acc[bb * m + ba] += x;
            }
        }
    }
    let mut internal = vec![0.0; m];
    for k in 0..m {
        internal[k] = acc[k * m + k];
    }
    let weights = DenseWeights::from_fn(m, |a, b| acc[a * m + b]);
    Ok(CoarseGraph {
        weights,
        partition: partition.clone(),
        internal,
    })
}

impl CoarseGraph {
    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn weights(&self) -> &DenseWeights {
        &self.weights
    }

    /// Total weight of edges with both ends in block `k`.
    pub fn internal_weight(&self, k: usize) -> f64 {
        self.internal[k]
    }

    pub fn block_weight(&self, a: &str, b: &str) -> Option<f64> {
        let ia = self.partition.index_of_label(a)?;
        let ib = self.partition.index_of_label(b)?;
        Some(self.weights.weight(ia, ib))
    }
}

impl WeightedGraph for CoarseGraph {
    fn vertex_count(&self) -> usize {
        self.partition.len()
    }

    #[inline]
    fn weight(&self, a: usize, b: usize) -> f64 {
        self.weights.weight(a, b)
    }

    fn label(&self, v: usize) -> String {
        self.partition.labels[v].clone()
    }

    fn dense_weights(&self) -> DenseWeights {
        self.weights.clone()
    }
}

/// Indices of sites `lo..=hi` (1-based) of a box.
fn sites(lo: u64, hi: u64) -> Vec<usize> {
    (lo..=hi).map(|s| s as usize - 1).collect()
}

/// `{B_k', B_k, B_{k+1}, …, B_{n−1}, δ_n}` with `B_k' = {1, …, 2^k}` and
/// `B_j = {2^j + 1, …, 2^{j+1}}`.
pub fn standard_partition(n: u32, k: u32) -> Result<Partition> {
    if k >= n {
        return Err(Error::param(
            "k",
            format!("need 0 <= k < n, got k = {k}, n = {n}"),
        ));
    }
    let mut blocks = vec![sites(1, 1 << k)];
    let mut labels = vec![format!("B{k}'")];
    for j in k..n {
        blocks.push(sites((1 << j) + 1, 1 << (j + 1)));
        labels.push(format!("B{j}"));
    }
    blocks.push(vec![1usize << n]);
    labels.push("delta".into());
    Partition::new((1usize << n) + 1, blocks, labels)
}

/// Partition of `Λ̃_n` adapted to the pair `(1, 2^m + 1)` at level `k`:
/// `{B_0', B_0, B_1, …, B_{m−1}, C_k', C_k, …, C_{m−1}, B_{m+1}, …, B_{n−1}, δ_n}`
/// with `C_i = 2^m + B_i` and `C_k' = 2^m + {1, …, 2^k}`.
pub fn twopoint_partition(n: u32, m: u32, k: u32) -> Result<Partition> {
    if !(1..n).contains(&m) {
        return Err(Error::param(
            "m",
            format!("need 1 <= m <= n-1, got m = {m}, n = {n}"),
        ));
    }
    if k >= m {
        return Err(Error::param(
            "k",
            format!("need 0 <= k < m, got k = {k}, m = {m}"),
        ));
    }
    let off = 1u64 << m;
    let mut blocks = vec![sites(1, 1), sites(2, 2)];
    let mut labels = vec!["B0'".to_string(), "B0".to_string()];
    for j in 1..m {
        blocks.push(sites((1 << j) + 1, 1 << (j + 1)));
        labels.push(format!("B{j}"));
    }
    blocks.push(sites(off + 1, off + (1 << k)));
    labels.push(format!("C{k}'"));
    for i in k..m {
        blocks.push(sites(off + (1 << i) + 1, off + (1 << (i + 1))));
        labels.push(format!("C{i}"));
    }
    for j in (m + 1)..n {
        blocks.push(sites((1 << j) + 1, 1 << (j + 1)));
        labels.push(format!("B{j}"));
    }
    blocks.push(vec![1usize << n]);
    labels.push("delta".into());
    Partition::new((1usize << n) + 1, blocks, labels)
}

/// Result of [`normalize_pair`]: `phi` maps sites of the original pair's
/// frame to the frame where the pair is `(1, 2^m + 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairFrame {
    pub m: u32,
    xor_all: u64,
    xor_sibling: u64,
}

impl PairFrame {
    /// Image of a 1-based site. The map is an isometry of the hierarchical
    /// distance and a bijection of every box `Λ_n` with `n > m`.
    pub fn map(&self, site: u64) -> u64 {
        let mut x = (site - 1) ^ self.xor_all;
        // Inside the sibling subtree at level m, flip the low m bits.
        if (x >> self.m) == 1 {
            x ^= self.xor_sibling;
        }
        x + 1
    }
}

/// Reduces a pair of distinct sites to `(1, 2^m + 1)` with `m = d(i, j) − 1`
/// by a hierarchical automorphism: translate `i` to `1` by xor, then flip the
/// low bits inside the subtree that now holds `j`.
pub fn normalize_pair(i: u64, j: u64) -> Result<PairFrame> {
    if i == 0 || j == 0 || i == j {
        return Err(Error::param(
            "pair",
            format!("need distinct sites >= 1, got ({i}, {j})"),
        ));
    }
    let d = crate::lattice::hier_distance(i, j);
    let m = d - 1;
    let xor_all = i - 1;
    let jj = (j - 1) ^ xor_all;
    let xor_sibling = jj & ((1u64 << m) - 1);
    Ok(PairFrame {
        m,
        xor_all,
        xor_sibling,
    })
}

/// `e^{u_B}` per block: the mean of `e^{u_i}` over the block's members.
pub fn block_average(exp_u: &[f64], partition: &Partition) -> Vec<f64> {
    partition
        .blocks()
        .iter()
        .map(|b| b.iter().map(|&i| exp_u[i]).sum::<f64>() / b.len() as f64)
        .collect()
}

/// `W(B_j, B_k) = 2^{j+k} W̄ (2ρ)^{−(j∨k)−1}` for `j ≠ k`.
pub fn dyadic_block_weight(j: u32, k: u32, rho: f64, wbar: f64) -> f64 {
    2f64.powi((j + k) as i32) * wbar * (2.0 * rho).powi(-(j.max(k) as i32) - 1)
}

/// `W(B_k', B_k) = 2^{2k} W̄ (2ρ)^{−k−1}`.
pub fn first_step_weight(k: u32, rho: f64, wbar: f64) -> f64 {
    dyadic_block_weight(k, k, rho, wbar)
}

/// `W(δ_n, B_j) = 2^j W̄ ρ^{−n} / (2(ρ−1))`.
pub fn boundary_block_weight(j: u32, n: u32, rho: f64, wbar: f64) -> f64 {
    2f64.powi(j as i32) * wbar * rho.powi(-(n as i32)) / (2.0 * (rho - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_finite_box, edge_weight, hier_distance, LatticeParams};
    use proptest::prelude::*;

    fn boxed(rho: f64, wbar: f64, n: u32) -> crate::lattice::HierGraph {
        build_finite_box(LatticeParams::new(rho, wbar, n).unwrap()).unwrap()
    }

    fn brute_cross(g: &impl WeightedGraph, a: &[usize], b: &[usize]) -> f64 {
        a.iter()
            .flat_map(|&u| b.iter().map(move |&v| g.weight(u, v)))
            .sum()
    }

    #[test]
    fn partition_validation() {
        assert!(Partition::new(
            3,
            vec![vec![0, 1], vec![1, 2]],
            vec!["a".into(), "b".into()]
        )
        .is_err());
        assert!(Partition::new(3, vec![vec![0, 1]], vec!["a".into()]).is_err());
        assert!(
            Partition::new(3, vec![vec![0, 1, 2], vec![]], vec!["a".into(), "b".into()]).is_err()
        );
        assert!(Partition::new(3, vec![vec![0, 1, 5]], vec!["a".into()]).is_err());
        let p = Partition::new(3, vec![vec![2, 1], vec![0]], vec!["b".into(), "a".into()]).unwrap();
        assert_eq!(p.blocks(), &[vec![0], vec![1, 2]]);
        assert_eq!(p.labels(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn singleton_partition_is_identity() {
        let g = boxed(4.0, 1.0, 3);
        let c = coarsen(&g, &Partition::singletons(9)).unwrap();
        for a in 0..9 {
            for b in 0..9 {
                assert_eq!(c.weight(a, b), g.weight(a, b));
            }
        }
    }

    #[test]
    fn small_examples() {
        let g = boxed(4.0, 1.0, 2);
        let p = Partition::new(
            5,
            vec![vec![0, 1], vec![2], vec![3], vec![4]],
            vec!["B".into(), "3".into(), "4".into(), "delta".into()],
        )
        .unwrap();
        let c = coarsen(&g, &p).unwrap();
        assert!((c.block_weight("B", "3").unwrap() - 1.0 / 32.0).abs() < 1e-17);

        let g = boxed(2.0, 1.0, 4);
        let p = Partition::new(
            17,
            vec![vec![0, 1], vec![2, 3]]
                .into_iter()
                .chain((4..17).map(|v| vec![v]))
                .collect(),
            (0..15).map(|k| k.to_string()).collect(),
        )
        .unwrap();
        let c = coarsen(&g, &p).unwrap();
        assert!((c.weight(0, 1) - edge_weight(1, 2, g.params())).abs() < 1e-16);
    }

    proptest! {
        #[test]
        fn mass_is_conserved(assign in proptest::collection::vec(0usize..5, 17)) {
            let g = boxed(3.0, 1.0, 4);
            let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); 5];
            for (v, &b) in assign.iter().enumerate() {
                blocks[b].push(v);
            }
            blocks.retain(|b| !b.is_empty());
            let labels = (0..blocks.len()).map(|k| k.to_string()).collect();
            let p = Partition::new(17, blocks, labels).unwrap();
            let c = coarsen(&g, &p).unwrap();
            let fine: f64 = (0..17).flat_map(|a| ((a + 1)..17).map(move |b| (a, b)))
                .map(|(a, b)| g.weight(a, b)).sum();
            let m = p.len();
            let cross: f64 = (0..m).flat_map(|a| ((a + 1)..m).map(move |b| (a, b)))
                .map(|(a, b)| c.weight(a, b)).sum();
            let internal: f64 = (0..m).map(|k| c.internal_weight(k)).sum();
            prop_assert!((fine - cross - internal).abs() < 1e-14 * fine);
            for a in 0..m {
                for b in 0..m {
                    if a != b {
                        let bf = brute_cross(&g, p.block(a), p.block(b));
                        prop_assert!((c.weight(a, b) - bf).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn two_stage_coarsening_composes() {
        let g = boxed(4.0, 1.0, 4);
        let inner = standard_partition(4, 0).unwrap();
        let c1 = coarsen(&g, &inner).unwrap();
        // Merge B0' with B0 and B2 with B3.
        let outer = Partition::new(
            inner.len(),
            vec![vec![0, 1], vec![2], vec![3, 4], vec![5]],
            vec!["x".into(), "y".into(), "z".into(), "w".into()],
        )
        .unwrap();
        let two_stage = coarsen(&c1, &outer).unwrap();
        let once = coarsen(&g, &inner.compose(&outer).unwrap()).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                assert!((two_stage.weight(a, b) - once.weight(a, b)).abs() < 1e-16);
            }
        }
    }

    #[test]
    fn standard_partition_layout() {
        let p = standard_partition(4, 0).unwrap();
        let labels: Vec<&str> = p.labels().iter().map(String::as_str).collect();
        assert_eq!(labels, ["B0'", "B0", "B1", "B2", "B3", "delta"]);
        assert_eq!(p.block(2), &[2, 3]);
        assert!(standard_partition(4, 4).is_err());
    }

    #[test]
    fn standard_block_weights_match_closed_form() {
        for &(rho, wbar) in &[(4.0, 1.0), (2.0, 0.3), (1.5, 2.0)] {
            let n = 5;
            let g = boxed(rho, wbar, n);
            for k in 0..n {
                let p = standard_partition(n, k).unwrap();
                let c = coarsen(&g, &p).unwrap();
                // Labels B_k', B_k, ..., B_{n-1}, delta at positions 0..
                let level = |idx: usize| -> Option<u32> {
                    match idx {
                        0 => None,
                        i if i == p.len() - 1 => None,
                        i => Some(k + i as u32 - 1),
                    }
                };
                for a in 0..p.len() {
                    for b in 0..p.len() {
                        if a == b {
                            continue;
                        }
                        let got = c.weight(a, b);
                        let brute = brute_cross(&g, p.block(a), p.block(b));
                        assert!((got - brute).abs() < 1e-15 * brute.max(1.0));
                        let delta = p.len() - 1;
                        let expected = match (a, b) {
                            (x, y) if x == delta || y == delta => {
                                let other = if x == delta { y } else { x };
                                let j = level(other).unwrap_or(k);
                                boundary_block_weight(j, n, rho, wbar)
                            }
                            (0, y) | (y, 0) => {
                                let j = level(y).unwrap();
                                dyadic_block_weight(k, j, rho, wbar)
                            }
                            (x, y) => {
                                dyadic_block_weight(level(x).unwrap(), level(y).unwrap(), rho, wbar)
                            }
                        };
                        assert!(
                            (got - expected).abs() < 1e-13 * expected,
                            "rho={rho} k={k} {}-{}: {got} vs {expected}",
                            p.labels()[a],
                            p.labels()[b]
                        );
                    }
                }
            }
        }
        assert!((dyadic_block_weight(1, 2, 4.0, 1.0) - 1.0 / 64.0).abs() < 1e-17);
    }

    #[test]
    fn same_gap_weights_decay_above_two_and_grow_below() {
        let seq = |rho: f64| -> Vec<f64> {
            (0..12)
                .map(|j| dyadic_block_weight(j, j + 1, rho, 1.0))
                .collect()
        };
        assert!(seq(4.0).windows(2).all(|w| w[1] < w[0]));
        assert!(seq(1.5).windows(2).all(|w| w[1] > w[0]));
        assert!(seq(2.0).windows(2).all(|w| (w[1] - w[0]).abs() < 1e-15));
    }

    #[test]
    fn twopoint_layout_and_weights() {
        let p = twopoint_partition(5, 3, 0).unwrap();
        let labels: Vec<&str> = p.labels().iter().map(String::as_str).collect();
        assert_eq!(
            labels,
            ["B0'", "B0", "B1", "B2", "C0'", "C0", "C1", "C2", "B4", "delta"]
        );
        let c0p = p.index_of_label("C0'").unwrap();
        let c0 = p.index_of_label("C0").unwrap();
        assert_eq!(p.block(c0p), &[8]);
        assert_eq!(p.block(c0), &[9]);
        let p1 = twopoint_partition(5, 3, 1).unwrap();
        assert_eq!(p1.block(p1.index_of_label("C1'").unwrap()), &[8, 9]);
        assert!(twopoint_partition(5, 0, 0).is_err());
        assert!(twopoint_partition(5, 5, 0).is_err());
        assert!(twopoint_partition(5, 3, 3).is_err());

        let (rho, wbar, n, m) = (4.0, 1.0, 5u32, 3u32);
        let g = boxed(rho, wbar, n);
        for k in 0..m {
            let p = twopoint_partition(n, m, k).unwrap();
            let c = coarsen(&g, &p).unwrap();
            let w = |a: &str, b: &str| c.block_weight(a, b).unwrap();
            let ckp = format!("C{k}'");
            assert!((w(&ckp, &format!("C{k}")) - first_step_weight(k, rho, wbar)).abs() < 1e-15);
            for l in (k + 1)..m {
                let bkl = dyadic_block_weight(k, l, rho, wbar);
                assert!((w(&format!("C{k}"), &format!("C{l}")) - bkl).abs() < 1e-15);
                assert!((w(&ckp, &format!("C{l}")) - bkl).abs() < 1e-15);
            }
            for i in (0..n).filter(|&i| i != m) {
                let bi = if i == 0 {
                    "B0".to_string()
                } else {
                    format!("B{i}")
                };
                // B_0 and B_0' are both single sites at level 0.
                let expected = if i < m {
                    2f64.powi((k + i) as i32) * wbar * (2.0 * rho).powi(-(m as i32) - 1)
                } else {
                    2f64.powi((k + i) as i32) * wbar * (2.0 * rho).powi(-(i as i32) - 1)
                };
                let got = w(&ckp, &bi);
                assert!(
                    (got - expected).abs() < 1e-15,
                    "k={k} i={i}: {got} vs {expected}"
                );
                if i == 0 {
                    assert!((w(&ckp, "B0'") - expected).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn pair_normalization_is_an_isometry() {
        for i in 1..=32u64 {
            for j in 1..=32u64 {
                if i == j {
                    continue;
                }
                let f = normalize_pair(i, j).unwrap();
                assert_eq!(f.map(i), 1);
                assert_eq!(f.map(j), (1 << f.m) + 1);
                let mut seen = [false; 32];
                for a in 1..=32u64 {
                    let fa = f.map(a);
                    assert!((1..=32).contains(&fa));
                    seen[fa as usize - 1] = true;
                    for b in 1..=32u64 {
                        assert_eq!(hier_distance(a, b), hier_distance(fa, f.map(b)));
                    }
                }
                assert!(seen.iter().all(|&s| s));
            }
        }
        assert!(normalize_pair(3, 3).is_err());
    }

    #[test]
    fn block_averages() {
        let p = Partition::new(3, vec![vec![0], vec![1, 2]], vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(block_average(&[0.3, 0.5, 1.5], &p), vec![0.3, 1.0]);
        assert_eq!(block_average(&[1.0, 1.0, 1.0], &p), vec![1.0, 1.0]);
    }
}
