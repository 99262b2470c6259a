//! The VRJP, its discrete-time random-conductance skeleton, and the
//! electrical-network quantities behind the recurrence diagnostics.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DenseWeights, WeightedGraph};
use crate::green::{assemble_h, green, ufield_pinned, UField};
use crate::lattice::{build_finite_box, LatticeParams};
use crate::linalg::PackedCholesky;
use crate::rng::{derive_seed, rng_stream};
use crate::sampler::sample_beta_sequential_tilted;
use crate::stats::{median, quantile_sorted};

pub const DEFAULT_MAX_EVENTS: u64 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stop {
    Hit(usize),
    /// Continuous time for the VRJP, number of steps for the skeleton.
    Horizon(f64),
    /// First of: hitting the target, or jumping back onto the start vertex.
    HitOrReturn(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    HitTarget,
    ReturnedToStart,
    Horizon,
    EventCap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<usize>,
    /// `jump_times[e]` is the time of the jump into `states[e + 1]`.
    pub jump_times: Vec<f64>,
    pub local_times: Vec<f64>,
    pub elapsed: f64,
    pub reason: StopReason,
}

impl Trajectory {
    /// True when the event cap ended the run before the stop rule did.
    pub fn truncated(&self) -> bool {
        self.reason == StopReason::EventCap
    }

    pub fn last(&self) -> usize {
        *self.states.last().expect("a trajectory has a start state")
    }

    /// Columns `event,time,vertex`; event 0 is the start at time 0.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["event", "time", "vertex"])
            .map_err(csv_err)?;
        for (e, &v) in self.states.iter().enumerate() {
            let t = if e == 0 { 0.0 } else { self.jump_times[e - 1] };
            w.write_record([e.to_string(), t.to_string(), v.to_string()])
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn check_vertex(n: usize, v: usize, field: &'static str) -> Result<()> {
    if v >= n {
        return Err(Error::param(
            field,
            format!("vertex {v} outside a graph of {n} vertices"),
        ));
    }
    Ok(())
}

fn check_stop(n: usize, start: usize, stop: Stop) -> Result<()> {
    match stop {
        Stop::Hit(t) | Stop::HitOrReturn(t) => {
            check_vertex(n, t, "target")?;
            if t == start {
                return Err(Error::param("target", "must differ from the start vertex"));
            }
        }
        Stop::Horizon(h) => {
            if !(h >= 0.0) {
                return Err(Error::param(
                    "horizon",
                    format!("must be nonnegative, got {h}"),
                ));
            }
        }
    }
    Ok(())
}

/// Picks `j` with probability `rates[j] / total`.
fn pick<R: Rng + ?Sized>(rates: &[f64], total: f64, rng: &mut R) -> usize {
    let mut r = rng.random::<f64>() * total;
    let mut last = 0;
    for (j, &x) in rates.iter().enumerate() {
        if x > 0.0 {
            if r < x {
                return j;
            }
            r -= x;
            last = j;
        }
    }
    last
}

fn arrival(stop: Stop, start: usize, next: usize) -> Option<StopReason> {
    match stop {
        Stop::Hit(t) if next == t => Some(StopReason::HitTarget),
        Stop::HitOrReturn(t) if next == t => Some(StopReason::HitTarget),
        Stop::HitOrReturn(_) if next == start => Some(StopReason::ReturnedToStart),
        _ => None,
    }
}

/// Direct simulation of the VRJP with jump rate `W_ij (1 + L_j(t))` from `i`.
///
/// Local times of vertices other than the current one are frozen between
/// jumps, so every holding time is exponential with the current total rate.
pub fn simulate_vrjp<R: Rng + ?Sized>(
    w: &DenseWeights,
    start: usize,
    stop: Stop,
    max_events: u64,
    rng: &mut R,
) -> Result<Trajectory> {
    let n = w.vertex_count();
    check_vertex(n, start, "start")?;
    check_stop(n, start, stop)?;
    let mut local = vec![0.0; n];
    let mut states = vec![start];
    let mut jump_times = Vec::new();
    let mut rates = vec![0.0; n];
    let mut t = 0.0;
    let mut cur = start;
    let horizon = match stop {
        Stop::Horizon(h) => h,
        _ => f64::INFINITY,
    };
    let mut events = 0u64;
    let reason = loop {
        if events == max_events {
            break StopReason::EventCap;
        }
        let row = w.row(cur);
        let mut total = 0.0;
        for j in 0..n {
            rates[j] = row[j] * (1.0 + local[j]);
            total += rates[j];
        }
        if !(total > 0.0) {
            return Err(Error::SingularNetwork(format!("vertex {cur} has no edges")));
        }
        let hold = -(-rng.random::<f64>()).ln_1p() / total;
        if t + hold >= horizon {
            local[cur] += horizon - t;
            t = horizon;
            break StopReason::Horizon;
        }
        local[cur] += hold;
        t += hold;
        let next = pick(&rates, total, rng);
        states.push(next);
        jump_times.push(t);
        events += 1;
        cur = next;
        if let Some(r) = arrival(stop, start, next) {
            break r;
        }
    };
    Ok(Trajectory {
        states,
        jump_times,
        local_times: local,
        elapsed: t,
        reason,
    })
}

/// Symmetric conductances `C_ij` stored as `C_ij e^{−log_scale}` with the
/// largest entry of order one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConductanceNetwork {
    n: usize,
    c: Vec<f64>,
    pi: Vec<f64>,
    log_scale: f64,
}

impl ConductanceNetwork {
    /// The network with `C = W`.
    pub fn from_weights(w: &DenseWeights) -> Result<Self> {
        Self::from_scaled(w.vertex_count(), w.as_slice().to_vec(), 0.0)
    }

    fn from_scaled(n: usize, c: Vec<f64>, log_scale: f64) -> Result<Self> {
        let pi: Vec<f64> = (0..n).map(|i| c[i * n..(i + 1) * n].iter().sum()).collect();
        if let Some(i) = pi.iter().position(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::SingularNetwork(format!(
                "vertex {i} has total conductance {:e}",
                pi[i]
            )));
        }
        Ok(ConductanceNetwork {
            n,
            c,
            pi,
            log_scale,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    /// `C_ij` in stored units; multiply by `e^{log_scale}` for the true value.
    #[inline]
    pub fn scaled(&self, i: usize, j: usize) -> f64 {
        self.c[i * self.n + j]
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn conductance(&self, i: usize, j: usize) -> f64 {
        self.scaled(i, j) * self.log_scale.exp()
    }

    /// `π_i = Σ_j C_ij` in stored units.
    pub fn pi_scaled(&self, i: usize) -> f64 {
        self.pi[i]
    }

    pub fn pi(&self, i: usize) -> f64 {
        self.pi[i] * self.log_scale.exp()
    }

    /// `C_ij / π_i`.
    pub fn transition(&self, i: usize, j: usize) -> f64 {
        self.scaled(i, j) / self.pi[i]
    }
}

/// `C_ij = W_ij e^{u_i + u_j}`, evaluated as `exp(ln W_ij + u_i + u_j − M)`
/// with `M` the largest exponent over the edges.
pub fn conductances(field: &UField, w: &DenseWeights) -> Result<ConductanceNetwork> {
    let n = w.vertex_count();
    if field.u.len() != n {
        return Err(Error::param(
            "u",
            format!("field has {} entries for {n} vertices", field.u.len()),
        ));
    }
    let mut m = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            let x = w.row(i)[j];
            if x > 0.0 {
                m = m.max(x.ln() + field.u[i] + field.u[j]);
            }
        }
    }
    if !m.is_finite() {
        return Err(Error::SingularNetwork(
            "no edge with positive conductance".into(),
        ));
    }
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let x = w.row(i)[j];
            if x > 0.0 {
                c[i * n + j] = (x.ln() + field.u[i] + field.u[j] - m).exp();
            }
        }
    }
    ConductanceNetwork::from_scaled(n, c, m)
}

/// Skeleton chain with transition probabilities `C_ij / π_i`. Time counts steps.
pub fn skeleton_walk<R: Rng + ?Sized>(
    net: &ConductanceNetwork,
    start: usize,
    stop: Stop,
    max_events: u64,
    rng: &mut R,
) -> Result<Trajectory> {
    let n = net.n;
    check_vertex(n, start, "start")?;
    check_stop(n, start, stop)?;
    let horizon = match stop {
        Stop::Horizon(h) => h.floor() as u64,
        _ => u64::MAX,
    };
    let mut local = vec![0.0; n];
    let mut states = vec![start];
    let mut jump_times = Vec::new();
    let mut cur = start;
    let mut steps = 0u64;
    let reason = loop {
        if steps == horizon {
            break StopReason::Horizon;
        }
        if steps == max_events {
            break StopReason::EventCap;
        }
        let next = pick(&net.c[cur * n..(cur + 1) * n], net.pi[cur], rng);
        local[cur] += 1.0;
        steps += 1;
        states.push(next);
        jump_times.push(steps as f64);
        cur = next;
        if let Some(r) = arrival(stop, start, next) {
            break r;
        }
    };
    Ok(Trajectory {
        states,
        jump_times,
        local_times: local,
        elapsed: steps as f64,
        reason,
    })
}

/// Harmonic potential with `v_a = 1`, `v_z = 0`, and the current leaving `a`
/// in stored units.
fn dirichlet(net: &ConductanceNetwork, a: usize, z: usize) -> Result<(Vec<f64>, f64)> {
    let n = net.n;
    check_vertex(n, a, "a")?;
    check_vertex(n, z, "z")?;
    if a == z {
        return Err(Error::param("z", "must differ from a"));
    }
    let interior: Vec<usize> = (0..n).filter(|&i| i != a && i != z).collect();
    let m = interior.len();
    let mut v = vec![0.0; n];
    v[a] = 1.0;
    if m > 0 {
        // Jacobi-scaled interior Laplacian D^{−½} L_II D^{−½}.
        let d: Vec<f64> = interior.iter().map(|&i| net.pi[i].sqrt()).collect();
        let mut l = vec![0.0; m * m];
        let mut rhs = vec![0.0; m];
        for (p, &i) in interior.iter().enumerate() {
            for (q, &j) in interior.iter().enumerate() {
                l[p * m + q] = if p == q {
                    1.0
                } else {
                    -net.scaled(i, j) / (d[p] * d[q])
                };
            }
            rhs[p] = net.scaled(i, a) / d[p];
        }
        let chol = PackedCholesky::factor(&l, m)
            .map_err(|e| Error::SingularNetwork(format!("interior Laplacian is singular ({e})")))?;
        chol.solve(&mut rhs);
        for (p, &i) in interior.iter().enumerate() {
            v[i] = rhs[p] / d[p];
        }
    }
    let current: f64 = (0..n).map(|j| net.scaled(a, j) * (1.0 - v[j])).sum();
    if !(current > 0.0) || !current.is_finite() {
        return Err(Error::SingularNetwork(format!(
            "no current flows from {a} to {z}"
        )));
    }
    Ok((v, current))
}

/// `P_a(τ_z < τ_a^+) = C_eff(a, z) / π_a`.
pub fn escape_probability(net: &ConductanceNetwork, a: usize, z: usize) -> Result<f64> {
    let (_, current) = dirichlet(net, a, z)?;
    Ok((current / net.pi[a]).min(1.0))
}

pub fn effective_conductance(net: &ConductanceNetwork, a: usize, z: usize) -> Result<f64> {
    let (_, current) = dirichlet(net, a, z)?;
    let c = current * net.log_scale.exp();
    if !c.is_finite() || c == 0.0 {
        return Err(Error::Overflow(format!(
            "effective conductance {current:e}·e^{} is not representable",
            net.log_scale
        )));
    }
    Ok(c)
}

pub fn effective_resistance(net: &ConductanceNetwork, a: usize, z: usize) -> Result<f64> {
    Ok(1.0 / effective_conductance(net, a, z)?)
}

/// `v` of [`dirichlet`], exposed for tests and reports.
pub fn harmonic_potential(net: &ConductanceNetwork, a: usize, z: usize) -> Result<Vec<f64>> {
    Ok(dirichlet(net, a, z)?.0)
}

/// Antisymmetric edge flow `θ_ij = −θ_ji`, dense row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Flow {
    pub n: usize,
    pub theta: Vec<f64>,
}

impl Flow {
    /// Net flow out of `i`.
    pub fn divergence(&self, i: usize) -> f64 {
        self.theta[i * self.n..(i + 1) * self.n].iter().sum()
    }
}

/// The unit current flow from `a` to `z`: `θ_ij = C_ij (v_i − v_j) / C_eff`.
pub fn unit_current_flow(net: &ConductanceNetwork, a: usize, z: usize) -> Result<Flow> {
    let (v, current) = dirichlet(net, a, z)?;
    let n = net.n;
    let mut theta = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            theta[i * n + j] = net.scaled(i, j) * (v[i] - v[j]) / current;
        }
    }
    Ok(Flow { n, theta })
}

/// `Σ_{i<j} θ_ij² / C_ij`; infinite if flow crosses a missing edge.
pub fn flow_energy(net: &ConductanceNetwork, flow: &Flow) -> f64 {
    let n = net.n;
    let mut e = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let t = flow.theta[i * n + j];
            if t != 0.0 {
                e += t * t / net.conductance(i, j);
            }
        }
    }
    e
}

/// Monte Carlo estimate of `P_a(τ_z < τ_a^+)` from `runs` skeleton walks,
/// with its standard error.
pub fn escape_probability_mc<R: Rng + ?Sized>(
    net: &ConductanceNetwork,
    a: usize,
    z: usize,
    runs: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if runs == 0 {
        return Err(Error::EmptySample);
    }
    let mut hits = 0usize;
    for _ in 0..runs {
        let t = skeleton_walk(net, a, Stop::HitOrReturn(z), DEFAULT_MAX_EVENTS, rng)?;
        match t.reason {
            StopReason::HitTarget => hits += 1,
            StopReason::ReturnedToStart => {}
            _ => return Err(Error::Numerical("escape walk hit the event cap".into())),
        }
    }
    let p = hits as f64 / runs as f64;
    Ok((p, (p * (1.0 - p) / runs as f64).sqrt()))
}

/// Environment of the VRJP started at `start`: `β` on the graph, then the
/// field pinned at `start`.
pub fn sample_environment<R: Rng + ?Sized>(
    w: &DenseWeights,
    start: usize,
    rng: &mut R,
) -> Result<UField> {
    let beta = sample_beta_sequential_tilted(w, None, rng)?;
    let g = green(&assemble_h(&beta, w))?;
    ufield_pinned(&g, start)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceRow {
    pub n: u32,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub mean: f64,
    pub replicas: usize,
    /// Environments whose factorization failed; they are excluded.
    pub failures: usize,
}

/// Distribution of `P_1(τ_{δ_n} < τ_1^+)` over sampled environments of `Λ̃_n`
/// for every `n` in `levels`. Replica `r` at level `n` uses stream
/// `(derive_seed(seed, [n]), r)`.
pub fn recurrence_diagnostic(
    base: &LatticeParams,
    levels: &[u32],
    replicas: usize,
    seed: u64,
) -> Result<Vec<RecurrenceRow>> {
    if replicas == 0 {
        return Err(Error::param("replicas", "must be at least 1"));
    }
    levels
        .iter()
        .map(|&n| {
            let g = build_finite_box(base.at_scale(n))?;
            let w = g.dense_weights();
            let level_seed = derive_seed(seed, &[n as u64]);
            let results: Vec<Result<f64>> = (0..replicas)
                .into_par_iter()
                .map(|r| {
                    let mut rng = rng_stream(level_seed, r as u64);
                    let f = sample_environment(&w, 0, &mut rng)?;
                    escape_probability(&conductances(&f, &w)?, 0, g.delta())
                })
                .collect();
            let mut vals = Vec::with_capacity(replicas);
            let mut failures = 0;
            for r in results {
                match r {
                    Ok(p) => vals.push(p),
                    Err(e) if e.is_numerical() => failures += 1,
                    Err(e) => return Err(e),
                }
            }
            if vals.is_empty() {
                return Err(Error::Numerical(format!(
                    "every environment failed at n = {n}"
                )));
            }
            vals.sort_by(|a, b| a.total_cmp(b));
            Ok(RecurrenceRow {
                n,
                median: median(&vals),
                q25: quantile_sorted(&vals, 0.25),
                q75: quantile_sorted(&vals, 0.75),
                mean: vals.iter().sum::<f64>() / vals.len() as f64,
                replicas: vals.len(),
                failures,
            })
        })
        .collect()
}
