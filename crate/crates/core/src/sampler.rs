//! Exact draws of the β-field of the H^{2|2} model on a finite weighted graph.
//!
//! The sequential sampler adds one vertex at a time. With `T` the vertices
//! already drawn, the law of `β_T` is the same model on `T` with the tilt
//! `η_i = Σ_{j∉T} W_ij`, and the next vertex `v` is, conditionally on `β_T`,
//! `β_v = γ + ½ W_{vT} H_T⁻¹ W_{Tv}` with `γ ~ GIG(½)` of offset
//! `a = η'_v + W_{vT} H_T⁻¹ η'_T`, primes denoting tilts relative to `T ∪ {v}`.
//! The Cholesky factor of `H_T` grows by one row per vertex.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gig::{sample_gamma_half, sample_gig_half};
use crate::graph::{DenseWeights, WeightedGraph};
use crate::green::UField;
use crate::linalg::{dot, PackedCholesky};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMethod {
    Sequential,
    Gibbs,
}

impl SamplerMethod {
    fn code(self) -> u8 {
        match self {
            SamplerMethod::Sequential => 0,
            SamplerMethod::Gibbs => 1,
        }
    }
}

/// One draw of `(β_i)`, with the stream it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaSample {
    pub beta: Vec<f64>,
    pub seed: u64,
    pub stream: u64,
    pub method: SamplerMethod,
    pub gibbs_sweeps: u64,
}

/// External tilt `η` added to the row sums, for graphs that are the marginal
/// of a larger one. A standalone box has zero tilt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TiltVector {
    pub eta: Vec<f64>,
}

impl TiltVector {
    pub fn zero(n: usize) -> Self {
        TiltVector { eta: vec![0.0; n] }
    }
}

/// Where a draw came from, for the sample's provenance fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamId {
    pub seed: u64,
    pub stream: u64,
}

/// Vertex order used by the sequential sampler: the last vertex (the wired
/// boundary in a box) first, then ascending indices.
pub fn sampling_order(n: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    std::iter::once(n - 1).chain(0..n - 1).collect()
}

pub fn sample_beta_sequential<R: Rng + ?Sized>(
    w: &DenseWeights,
    id: StreamId,
    rng: &mut R,
) -> Result<BetaSample> {
    let beta = sample_beta_sequential_tilted(w, None, rng)?;
    Ok(BetaSample {
        beta,
        seed: id.seed,
        stream: id.stream,
        method: SamplerMethod::Sequential,
        gibbs_sweeps: 0,
    })
}

/// Sequential sampler with an optional external tilt; returns `β` in vertex order.
pub fn sample_beta_sequential_tilted<R: Rng + ?Sized>(
    w: &DenseWeights,
    tilt: Option<&TiltVector>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = w.vertex_count();
    if let Some(t) = tilt {
        if t.eta.len() != n || t.eta.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::param(
                "tilt",
                "must be finite, nonnegative, one per vertex",
            ));
        }
    }
    let ext = |v: usize| tilt.map_or(0.0, |t| t.eta[v]);
    let order = sampling_order(n);
    let mut in_t = vec![false; n];
    let mut chol = PackedCholesky::with_capacity(n);
    // y = L⁻¹ η_T with η relative to the current T.
    let mut y: Vec<f64> = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n);
    let mut beta = vec![0.0; n];

    for (step, &v) in order.iter().enumerate() {
        let row = w.row(v);
        // z = L⁻¹ W_{Tv}; the factor's rows carry the sign of H.
        z.clear();
        z.extend(order[..step].iter().map(|&t| row[t]));
        chol.forward_solve(&mut z);
        // η_T relative to T ∪ {v} loses the edges to v.
        for (yi, zi) in y.iter_mut().zip(&z) {
            *yi -= zi;
        }
        let eta_v = ext(v)
            + row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != v && !in_t[j])
                .map(|(_, &x)| x)
                .sum::<f64>();
        let zy = dot(&z, &y);
        let a = (eta_v + zy).max(0.0);
        let gamma = sample_gig_half(a, rng);
        let zz = dot(&z, &z);
        let b = gamma + 0.5 * zz;
        if !(gamma > 0.0) || !b.is_finite() || !a.is_finite() {
            return Err(Error::Numerical(format!(
                "sequential step {step} (vertex {v}): gamma = {gamma:e}, offset = {a:e}"
            )));
        }
        beta[v] = b;
        let pivot = 2.0 * gamma;
        y.push((eta_v + zy) / pivot.sqrt());
        // H_{vT} = −W_{vT}, so the new factor row is −z.
        for zi in z.iter_mut() {
            *zi = -*zi;
        }
        chol.push_row(&z, pivot)?;
        in_t[v] = true;
    }
    Ok(beta)
}

/// Counters reported by the Gibbs sampler.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GibbsDiagnostics {
    pub sweeps: u64,
    pub reinitializations: u64,
}

/// Default starting point: `β_i = ½ Σ_j W_ij + ½`, diagonally dominant.
pub fn gibbs_default_init(w: &DenseWeights) -> Vec<f64> {
    (0..w.vertex_count())
        .map(|i| 0.5 * w.row_sum(i) + 0.5)
        .collect()
}

/// Systematic-scan Gibbs sampler from `init` (or the default point).
///
/// Each site update draws `β_i = β_i − 1/(2G_ii) + Gamma(½, 1)` and adjusts
/// `G` by a rank-one correction; `G` is recomputed from scratch after every
/// sweep to keep the updates from drifting.
pub fn sample_beta_gibbs<R: Rng + ?Sized>(
    w: &DenseWeights,
    id: StreamId,
    rng: &mut R,
    sweeps: u64,
    init: Option<&[f64]>,
) -> Result<(BetaSample, GibbsDiagnostics)> {
    if sweeps == 0 {
        return Err(Error::param("sweeps", "must be at least 1"));
    }
    let n = w.vertex_count();
    let mut beta: Vec<f64> = match init {
        Some(b) if b.len() == n => b.to_vec(),
        Some(b) => {
            return Err(Error::param(
                "init",
                format!("has {} entries for {n} vertices", b.len()),
            ))
        }
        None => gibbs_default_init(w),
    };
    let mut diag = GibbsDiagnostics::default();
    let mut g = match inverse_of_h(&beta, w) {
        Ok(g) => g,
        Err(_) => {
            diag.reinitializations += 1;
            beta = gibbs_default_init(w);
            inverse_of_h(&beta, w)?
        }
    };
    let mut col = vec![0.0; n];
    for _ in 0..sweeps {
        for i in 0..n {
            let gii = g[i * n + i];
            let new_beta = beta[i] - 0.5 / gii + sample_gamma_half(rng);
            let delta = 2.0 * (new_beta - beta[i]);
            // Sherman–Morrison for H + Δ e_i e_iᵀ; the denominator equals 2γ·G_ii > 0.
            let denom = 1.0 + delta * gii;
            col.copy_from_slice(&g[i * n..(i + 1) * n]);
            let scale = delta / denom;
            for a in 0..n {
                let ca = scale * col[a];
                let ga = &mut g[a * n..(a + 1) * n];
                for (gab, &cb) in ga.iter_mut().zip(&col) {
                    *gab -= ca * cb;
                }
            }
            beta[i] = new_beta;
        }
        diag.sweeps += 1;
        match inverse_of_h(&beta, w) {
            Ok(fresh) => g = fresh,
            Err(_) => {
                diag.reinitializations += 1;
                beta = gibbs_default_init(w);
                g = inverse_of_h(&beta, w)?;
            }
        }
    }
    Ok((
        BetaSample {
            beta,
            seed: id.seed,
            stream: id.stream,
            method: SamplerMethod::Gibbs,
            gibbs_sweeps: diag.sweeps,
        },
        diag,
    ))
}

fn inverse_of_h(beta: &[f64], w: &DenseWeights) -> Result<Vec<f64>> {
    let h = crate::green::assemble_h(beta, w);
    Ok(PackedCholesky::factor(h.as_slice(), h.dim())?.inverse())
}

/// Monte Carlo and closed-form values of `E exp(−Σ_{i∈U} λ_i β_i)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplaceCheck {
    pub empirical: f64,
    pub theoretical: f64,
    pub stderr: f64,
}

/// Closed-form Laplace transform of the marginal of `β_U`. Pairs inside `U`
/// are unordered; the tilt of `U` collects the external tilt and every
/// weight leaving `U`.
pub fn laplace_transform(
    w: &DenseWeights,
    tilt: Option<&TiltVector>,
    lambda: &[f64],
    subset: &[usize],
) -> f64 {
    let n = w.vertex_count();
    let mut in_u = vec![false; n];
    for &i in subset {
        in_u[i] = true;
    }
    let r: Vec<f64> = lambda.iter().map(|l| (1.0 + l).sqrt()).collect();
    let mut expo = 0.0;
    let mut prefactor = 1.0;
    for (a, &i) in subset.iter().enumerate() {
        for &j in &subset[a + 1..] {
            expo -= w.weight(i, j) * (r[i] * r[j] - 1.0);
        }
        let outside: f64 = (0..n).filter(|&j| !in_u[j]).map(|j| w.weight(i, j)).sum();
        let eta = tilt.map_or(0.0, |t| t.eta[i]) + outside;
        expo -= eta * (r[i] - 1.0);
        prefactor /= r[i];
    }
    prefactor * expo.exp()
}

pub fn laplace_check(
    samples: &[BetaSample],
    w: &DenseWeights,
    tilt: Option<&TiltVector>,
    lambda: &[f64],
    subset: &[usize],
) -> Result<LaplaceCheck> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = w.vertex_count();
    if lambda.len() != n || lambda.iter().any(|&l| !(l >= 0.0)) {
        return Err(Error::param(
            "lambda",
            "must be nonnegative, one per vertex",
        ));
    }
    if subset.iter().any(|&i| i >= n) {
        return Err(Error::param("subset", "vertex out of range"));
    }
    let vals: Vec<f64> = samples
        .iter()
        .map(|s| (-subset.iter().map(|&i| lambda[i] * s.beta[i]).sum::<f64>()).exp())
        .collect();
    let (empirical, stderr) = crate::stats::mean_se(&vals);
    Ok(LaplaceCheck {
        empirical,
        theoretical: laplace_transform(w, tilt, lambda, subset),
        stderr: if stderr.is_nan() { 0.0 } else { stderr },
    })
}

/// Inverse of `β ↦ (u, G(pin,pin))`:
/// `2β_i = Σ_j W_ij e^{u_j − u_i} + 1_{i=pin} / G(pin,pin)`.
pub fn beta_from_u(field: &UField, w: &DenseWeights) -> Result<Vec<f64>> {
    let n = w.vertex_count();
    if field.u.len() != n || field.pin >= n || field.u[field.pin] != 0.0 {
        return Err(Error::param(
            "u",
            "must be a field pinned at one of the graph's vertices",
        ));
    }
    if !(field.g_pin > 0.0) {
        return Err(Error::param("g_pin", "must be positive"));
    }
    let eu: Vec<f64> = field.u.iter().map(|x| x.exp()).collect();
    let mut beta = Vec::with_capacity(n);
    for i in 0..n {
        let s = dot(w.row(i), &eu) / eu[i];
        let b = 0.5
            * (s + if i == field.pin {
                1.0 / field.g_pin
            } else {
                0.0
            });
        if !b.is_finite() || !eu[i].is_finite() || eu[i] == 0.0 {
            return Err(Error::Overflow(format!("beta at vertex {i} is {b:e}")));
        }
        beta.push(b);
    }
    Ok(beta)
}

const DUMP_MAGIC: &[u8; 8] = b"HLBETA01";

impl BetaSample {
    /// Binary dump: magic, vertex count (u64 LE), β values (f64 LE), then
    /// seed, stream and sweeps (u64 LE) and the method code (u8).
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(DUMP_MAGIC)?;
        out.write_all(&(self.beta.len() as u64).to_le_bytes())?;
        for b in &self.beta {
            out.write_all(&b.to_le_bytes())?;
        }
        out.write_all(&self.seed.to_le_bytes())?;
        out.write_all(&self.stream.to_le_bytes())?;
        out.write_all(&self.gibbs_sweeps.to_le_bytes())?;
        out.write_all(&[self.method.code()])
    }

    pub fn read_from(mut input: impl Read) -> std::io::Result<Self> {
        let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(bad("not a beta sample dump"));
        }
        let mut word = [0u8; 8];
        let mut next_u64 = |input: &mut dyn Read| -> std::io::Result<u64> {
            input.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let n = next_u64(&mut input)? as usize;
        let mut beta = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            beta.push(f64::from_bits(next_u64(&mut input)?));
        }
        let seed = next_u64(&mut input)?;
        let stream = next_u64(&mut input)?;
        let gibbs_sweeps = next_u64(&mut input)?;
        let mut code = [0u8; 1];
        input.read_exact(&mut code)?;
        let method = match code[0] {
            0 => SamplerMethod::Sequential,
            1 => SamplerMethod::Gibbs,
            _ => return Err(bad("unknown sampler method code")),
        };
        Ok(BetaSample {
            beta,
            seed,
            stream,
            method,
            gibbs_sweeps,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f)).map_err(|e| Error::io(path, e))
    }
}
