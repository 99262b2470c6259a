//! Experiment configuration and seeded, replica-parallel execution.
//!
//! Replica `r` of a sampling family draws from stream `r` of the family's
//! derived seed, and results are collected in replica order, so every
//! statistic is a function of the config alone, whatever the worker count.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, BoundParams};
use crate::coarse::{block_average, coarsen, standard_partition};
use crate::error::{Error, Result};
use crate::graph::{DenseWeights, WeightedGraph};
use crate::green::{assemble_h, check_moment_order, green, ufield_pinned, UField};
use crate::lattice::{build_finite_box, representative_site, HierGraph, LatticeParams};
use crate::rng::{derive_seed, resolve_seed, rng_stream, tag_f64, ReplicaRng};
use crate::sampler::{sample_beta_gibbs, sample_beta_sequential_tilted, SamplerMethod, StreamId};
use crate::stats::{
    gamma_half_cdf, ks_one_sample, ks_two_sample, linear_fit, mean_se, moment_estimate,
    RobustOptions,
};
use crate::walk::recurrence_diagnostic;

/// Sweeps per independent Gibbs chain, started from the default point.
pub const GIBBS_SWEEPS: u64 = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Figure1,
    GammaLaw,
    Ward,
    CoarseCheck,
    DecaySlope,
    RecurrenceScan,
    TransienceScan,
    BoundsTable,
    SamplerCrosscheck,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::Figure1,
        Experiment::GammaLaw,
        Experiment::Ward,
        Experiment::CoarseCheck,
        Experiment::DecaySlope,
        Experiment::RecurrenceScan,
        Experiment::TransienceScan,
        Experiment::BoundsTable,
        Experiment::SamplerCrosscheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Figure1 => "figure1",
            Experiment::GammaLaw => "gamma_law",
            Experiment::Ward => "ward",
            Experiment::CoarseCheck => "coarse_check",
            Experiment::DecaySlope => "decay_slope",
            Experiment::RecurrenceScan => "recurrence_scan",
            Experiment::TransienceScan => "transience_scan",
            Experiment::BoundsTable => "bounds_table",
            Experiment::SamplerCrosscheck => "sampler_crosscheck",
        }
    }

    /// Experiments whose rows form a series over scales, drawn as a chart.
    pub fn is_series(self) -> bool {
        matches!(
            self,
            Experiment::Figure1
                | Experiment::DecaySlope
                | Experiment::RecurrenceScan
                | Experiment::TransienceScan
        )
    }
}

/// One value or a list; configs may give several `rho` for series experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhoValues {
    One(f64),
    Many(Vec<f64>),
}

impl RhoValues {
    pub fn values(&self) -> Vec<f64> {
        match self {
            RhoValues::One(r) => vec![*r],
            RhoValues::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub rho: RhoValues,
    pub wbar: f64,
    pub n: u32,
    pub s: f64,
    pub replicas: usize,
    /// 0 draws a seed from the OS; the drawn value is recorded.
    pub seed: u64,
    pub method: SamplerMethod,
    pub q_exponent: i32,
    pub workers: usize,
    pub output_dir: PathBuf,
    /// Block level of `coarse_check`.
    #[serde(default = "default_k")]
    pub k: u32,
}

fn default_k() -> u32 {
    1
}

impl ExperimentConfig {
    /// Defaults for each experiment, at the sizes used by the checks.
    pub fn preset(experiment: Experiment) -> Self {
        let base = ExperimentConfig {
            experiment,
            rho: RhoValues::One(4.0),
            wbar: 1.0,
            n: 6,
            s: 0.25,
            replicas: 2000,
            seed: 1,
            method: SamplerMethod::Sequential,
            q_exponent: 0,
            workers: 1,
            output_dir: PathBuf::from("out"),
            k: 1,
        };
        match experiment {
            Experiment::Figure1 => ExperimentConfig {
                rho: RhoValues::Many(vec![4.0, 2.0, 1.4]),
                n: 10,
                replicas: 50,
                ..base
            },
            Experiment::GammaLaw => base,
            Experiment::Ward => ExperimentConfig {
                replicas: 5000,
                ..base
            },
            Experiment::CoarseCheck => ExperimentConfig { n: 5, ..base },
            Experiment::DecaySlope => ExperimentConfig {
                n: 8,
                replicas: 200,
                ..base
            },
            Experiment::RecurrenceScan => ExperimentConfig {
                rho: RhoValues::Many(vec![4.0, std::f64::consts::SQRT_2]),
                n: 7,
                replicas: 200,
                ..base
            },
            Experiment::TransienceScan => ExperimentConfig {
                rho: RhoValues::One(2.0),
                n: 7,
                replicas: 200,
                q_exponent: 2,
                ..base
            },
            Experiment::BoundsTable => ExperimentConfig {
                n: 5,
                replicas: 1000,
                ..base
            },
            Experiment::SamplerCrosscheck => ExperimentConfig { n: 3, ..base },
        }
    }

    pub fn rhos(&self) -> Vec<f64> {
        self.rho.values()
    }

    pub fn lattice(&self, rho: f64) -> Result<LatticeParams> {
        LatticeParams::with_q(rho, self.wbar, self.n, self.q_exponent)
    }

    /// Field-level validation of everything the experiment will use.
    pub fn validate(&self) -> Result<()> {
        let rhos = self.rhos();
        if rhos.is_empty() {
            return Err(Error::param("rho", "needs at least one value"));
        }
        if !self.experiment.is_series() && rhos.len() > 1 {
            return Err(Error::param(
                "rho",
                format!("{} takes a single value", self.experiment.name()),
            ));
        }
        for &r in &rhos {
            self.lattice(r)?;
        }
        check_moment_order(self.s)?;
        if self.workers == 0 {
            return Err(Error::param("workers", "must be at least 1"));
        }
        if self.n == 0 {
            return Err(Error::param("n", "must be at least 1"));
        }
        let min_replicas = match self.experiment {
            Experiment::BoundsTable => 0,
            Experiment::RecurrenceScan | Experiment::TransienceScan => 1,
            _ => 8,
        };
        if self.replicas < min_replicas {
            return Err(Error::param(
                "replicas",
                format!("{} needs at least {min_replicas}", self.experiment.name()),
            ));
        }
        match self.experiment {
            Experiment::CoarseCheck if self.k >= self.n => Err(Error::param(
                "k",
                format!("block level must be below n = {}, got {}", self.n, self.k),
            )),
            Experiment::RecurrenceScan | Experiment::TransienceScan if self.n < 3 => Err(
                Error::param("n", "scans run over levels 3..=n and need n >= 3"),
            ),
            Experiment::BoundsTable if rhos[0] <= 2.0 && self.replicas > 0 && self.n > 12 => {
                Err(Error::param("n", "recursion check is limited to n <= 12"))
            }
            Experiment::Ward if self.n < 4 => {
                Err(Error::param("n", "ward picks 10 sites and needs n >= 4"))
            }
            _ => Ok(()),
        }
    }
}

/// Partial config, as read from a file or assembled from flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigPatch {
    pub experiment: Option<Experiment>,
    pub rho: Option<RhoValues>,
    pub wbar: Option<f64>,
    pub n: Option<u32>,
    pub s: Option<f64>,
    pub replicas: Option<usize>,
    pub seed: Option<u64>,
    pub method: Option<SamplerMethod>,
    pub q_exponent: Option<i32>,
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub k: Option<u32>,
}

impl ConfigPatch {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    /// Later patches win.
    pub fn merge(self, over: ConfigPatch) -> ConfigPatch {
        ConfigPatch {
            experiment: over.experiment.or(self.experiment),
            rho: over.rho.or(self.rho),
            wbar: over.wbar.or(self.wbar),
            n: over.n.or(self.n),
            s: over.s.or(self.s),
            replicas: over.replicas.or(self.replicas),
            seed: over.seed.or(self.seed),
            method: over.method.or(self.method),
            q_exponent: over.q_exponent.or(self.q_exponent),
            workers: over.workers.or(self.workers),
            output_dir: over.output_dir.or(self.output_dir),
            k: over.k.or(self.k),
        }
    }

    /// Fills unset fields from the experiment's preset and validates.
    pub fn resolve(self, experiment: Experiment) -> Result<ExperimentConfig> {
        if let Some(e) = self.experiment {
            if e != experiment {
                return Err(Error::Config(format!(
                    "config names experiment {} but {} was requested",
                    e.name(),
                    experiment.name()
                )));
            }
        }
        let p = ExperimentConfig::preset(experiment);
        let cfg = ExperimentConfig {
            experiment,
            rho: self.rho.unwrap_or(p.rho),
            wbar: self.wbar.unwrap_or(p.wbar),
            n: self.n.unwrap_or(p.n),
            s: self.s.unwrap_or(p.s),
            replicas: self.replicas.unwrap_or(p.replicas),
            seed: self.seed.unwrap_or(p.seed),
            method: self.method.unwrap_or(p.method),
            q_exponent: self.q_exponent.unwrap_or(p.q_exponent),
            workers: self.workers.unwrap_or(p.workers),
            output_dir: self.output_dir.unwrap_or(p.output_dir),
            k: self.k.unwrap_or(p.k),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One reported statistic. `vertex_or_scale` names a vertex, a block or a
/// scale, and is empty for whole-run statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub statistic: String,
    pub rho: f64,
    pub vertex_or_scale: String,
    pub value: f64,
    pub stderr: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub replicas: usize,
}

impl StatRow {
    pub fn scalar(
        statistic: &str,
        rho: f64,
        key: impl ToString,
        value: f64,
        replicas: usize,
    ) -> Self {
        StatRow {
            statistic: statistic.into(),
            rho,
            vertex_or_scale: key.to_string(),
            value,
            stderr: None,
            ci_lo: None,
            ci_hi: None,
            replicas,
        }
    }
}

/// A family of replica streams: replica `r` used `rng_stream(seed, r)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub label: String,
    pub seed: u64,
    pub replicas: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    /// Rows up to the failure are kept.
    Failed {
        message: String,
        numerical: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Snapshot with the resolved seed.
    pub config: ExperimentConfig,
    pub status: RunStatus,
    pub rows: Vec<StatRow>,
    pub wall_clock_seconds: f64,
    pub code_version: String,
    pub seeds: Vec<SeedRecord>,
    /// Replicas dropped because their sample failed numerically.
    pub failed_replicas: usize,
    pub notes: Vec<String>,
}

impl RunRecord {
    pub fn is_complete(&self) -> bool {
        self.status == RunStatus::Complete
    }

    /// First row with this statistic and key.
    pub fn find(&self, statistic: &str, rho: f64, key: &str) -> Option<&StatRow> {
        self.rows
            .iter()
            .find(|r| r.statistic == statistic && r.rho == rho && r.vertex_or_scale == key)
    }

    pub fn series(&self, statistic: &str, rho: f64) -> Vec<&StatRow> {
        self.rows
            .iter()
            .filter(|r| r.statistic == statistic && r.rho == rho)
            .collect()
    }
}

/// Accumulates rows and seed families while an experiment runs.
struct Run<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    rows: Vec<StatRow>,
    seeds: Vec<SeedRecord>,
    failed: usize,
    notes: Vec<String>,
}

fn label_tag(label: &str) -> u64 {
    // FNV-1a.
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// `β` from the chosen sampler, then the field pinned at `pin`.
pub fn draw_field(
    w: &DenseWeights,
    pin: usize,
    method: SamplerMethod,
    id: StreamId,
    rng: &mut ReplicaRng,
) -> Result<UField> {
    let beta = match method {
        SamplerMethod::Sequential => sample_beta_sequential_tilted(w, None, rng)?,
        SamplerMethod::Gibbs => sample_beta_gibbs(w, id, rng, GIBBS_SWEEPS, None)?.0.beta,
    };
    ufield_pinned(&green(&assemble_h(&beta, w))?, pin)
}

impl<'a> Run<'a> {
    /// Seed of the family `label` at parameter `rho`.
    fn family(&mut self, label: &str, rho: f64, replicas: usize) -> u64 {
        let seed = derive_seed(self.seed, &[label_tag(label), tag_f64(rho)]);
        self.seeds.push(SeedRecord {
            label: format!("{label}@rho={rho}"),
            seed,
            replicas,
        });
        seed
    }

    /// Runs `f` once per replica in parallel; drops numerical failures.
    fn replicate<T: Send>(
        &mut self,
        label: &str,
        rho: f64,
        replicas: usize,
        f: impl Fn(StreamId, &mut ReplicaRng) -> Result<T> + Sync,
    ) -> Result<Vec<T>> {
        let seed = self.family(label, rho, replicas);
        let out: Vec<Result<T>> = (0..replicas as u64)
            .into_par_iter()
            .map(|r| {
                let mut rng = rng_stream(seed, r);
                f(StreamId { seed, stream: r }, &mut rng)
            })
            .collect();
        let mut ok = Vec::with_capacity(replicas);
        for r in out {
            match r {
                Ok(v) => ok.push(v),
                Err(e) if e.is_numerical() => self.failed += 1,
                Err(e) => return Err(e),
            }
        }
        if ok.len() < replicas / 2 {
            return Err(Error::Numerical(format!(
                "{label}: {} of {replicas} replicas failed",
                replicas - ok.len()
            )));
        }
        Ok(ok)
    }

    fn fields(
        &mut self,
        label: &str,
        rho: f64,
        w: &DenseWeights,
        pin: usize,
    ) -> Result<Vec<UField>> {
        let method = self.cfg.method;
        let replicas = self.cfg.replicas;
        self.replicate(label, rho, replicas, |id, rng| {
            draw_field(w, pin, method, id, rng)
        })
    }

    fn push(&mut self, row: StatRow) {
        self.rows.push(row);
    }

    /// Mean, robust estimate and bootstrap interval of `values`.
    fn moment_row(
        &mut self,
        statistic: &str,
        rho: f64,
        key: impl ToString,
        values: &[f64],
    ) -> Result<f64> {
        let est = moment_estimate(values, &RobustOptions::default())?;
        self.push(StatRow {
            statistic: statistic.into(),
            rho,
            vertex_or_scale: key.to_string(),
            value: est.mean,
            stderr: Some(est.stderr),
            ci_lo: Some(est.ci_lo),
            ci_hi: Some(est.ci_hi),
            replicas: values.len(),
        });
        Ok(est.mean)
    }

    fn graph(&self, rho: f64) -> Result<(HierGraph, DenseWeights)> {
        let g = build_finite_box(self.cfg.lattice(rho)?)?;
        let w = g.dense_weights();
        Ok((g, w))
    }
}

/// Executes the configured experiment on a pool of `workers` threads.
/// Invalid configs are errors; failures during the run are reported in the
/// record's status with the rows computed so far.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunRecord> {
    config.validate()?;
    let mut cfg = config.clone();
    cfg.seed = resolve_seed(config.seed);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let start = Instant::now();
    let mut run = Run {
        cfg: &cfg,
        seed: cfg.seed,
        rows: Vec::new(),
        seeds: Vec::new(),
        failed: 0,
        notes: Vec::new(),
    };
    if config.seed == 0 {
        run.notes
            .push(format!("seed drawn from entropy: {}", cfg.seed));
    }
    let result = pool.install(|| match cfg.experiment {
        Experiment::Figure1 => figure1(&mut run),
        Experiment::GammaLaw => gamma_law(&mut run),
        Experiment::Ward => ward(&mut run),
        Experiment::CoarseCheck => coarse_check(&mut run),
        Experiment::DecaySlope => decay_slope(&mut run),
        Experiment::RecurrenceScan | Experiment::TransienceScan => escape_scan(&mut run),
        Experiment::BoundsTable => bounds_table(&mut run),
        Experiment::SamplerCrosscheck => sampler_crosscheck(&mut run),
    });
    let status = match result {
        Ok(()) => RunStatus::Complete,
        Err(e) => RunStatus::Failed {
            numerical: e.is_numerical(),
            message: e.to_string(),
        },
    };
    let Run {
        rows,
        seeds,
        failed,
        notes,
        ..
    } = run;
    Ok(RunRecord {
        config: cfg.clone(),
        status,
        rows,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seeds,
        failed_replicas: failed,
        notes,
    })
}

/// `E e^{s u^{(1)}}` at site 1 and at the representative sites
/// `2^{k−1} + 1`, `k = 1..=n`, for each `rho`.
fn scale_moments(run: &mut Run, label: &str, rho: f64) -> Result<Vec<(u32, f64)>> {
    let (g, w) = run.graph(rho)?;
    let fields = run.fields(label, rho, &w, 0)?;
    let s = run.cfg.s;
    let mut out = Vec::new();
    for k in 0..=run.cfg.n {
        let idx = if k == 0 {
            0
        } else {
            g.index_of(representative_site(k))
        };
        let vals: Vec<f64> = fields.iter().map(|f| (s * f.u[idx]).exp()).collect();
        let m = run.moment_row("moment", rho, k, &vals)?;
        run.push(StatRow::scalar("log_moment", rho, k, m.ln(), vals.len()));
        out.push((k, m));
    }
    Ok(out)
}

fn figure1(run: &mut Run) -> Result<()> {
    run.notes.push(
        "x-axis: hierarchical scale k of the representative site 2^(k-1)+1; k = 0 is site 1".into(),
    );
    for rho in run.cfg.rhos() {
        scale_moments(run, "figure1", rho)?;
    }
    Ok(())
}

fn decay_slope(run: &mut Run) -> Result<()> {
    let s = run.cfg.s;
    for rho in run.cfg.rhos() {
        let m = scale_moments(run, "decay_slope", rho)?;
        let pts: Vec<&(u32, f64)> = m.iter().filter(|(k, _)| *k >= 1).collect();
        let xs: Vec<f64> = pts.iter().map(|(k, _)| *k as f64).collect();
        let ys: Vec<f64> = pts.iter().map(|(_, v)| v.ln()).collect();
        let fit = linear_fit(&xs, &ys);
        let reps = run.cfg.replicas;
        let predicted = -s * (2.0 * rho).ln();
        run.push(StatRow {
            stderr: Some(fit.slope_se),
            ..StatRow::scalar("slope", rho, "", fit.slope, reps)
        });
        run.push(StatRow::scalar("predicted_slope", rho, "", predicted, reps));
        run.push(StatRow::scalar(
            "slope_relative_error",
            rho,
            "",
            (fit.slope - predicted).abs() / predicted.abs(),
            reps,
        ));
        // Two-sided sandwich with constants fitted on k <= 3.
        if rho > 2.0 {
            let p = BoundParams::new(s, rho, run.cfg.wbar)?;
            let fit_pts: Vec<(u32, f64)> =
                pts.iter().filter(|(k, _)| *k <= 3).map(|&&x| x).collect();
            let kind = bounds::DecayKind::TwoPointSubcritical;
            let upper = bounds::fit_constant(kind, &p, &fit_pts)?;
            let lower = fit_pts
                .iter()
                .map(|&(k, v)| v / bounds::two_point_lower_bound(&p, 1.0, k))
                .fold(f64::INFINITY, f64::min);
            run.push(StatRow::scalar(
                "fitted_upper_constant",
                rho,
                "",
                upper,
                reps,
            ));
            run.push(StatRow::scalar(
                "fitted_lower_constant",
                rho,
                "",
                lower,
                reps,
            ));
            for &&(k, v) in pts.iter().filter(|(k, _)| *k > 3) {
                let hi = bounds::decay_bound(kind, &p, upper, k)?;
                let lo = bounds::two_point_lower_bound(&p, lower, k);
                run.push(StatRow::scalar(
                    "sandwich_upper_ratio",
                    rho,
                    k,
                    v / hi,
                    reps,
                ));
                run.push(StatRow::scalar(
                    "sandwich_lower_ratio",
                    rho,
                    k,
                    v / lo,
                    reps,
                ));
            }
        }
    }
    Ok(())
}

fn gamma_law(run: &mut Run) -> Result<()> {
    let rho = run.cfg.rhos()[0];
    let (g, w) = run.graph(rho)?;
    let fields = run.fields("gamma_law", rho, &w, g.delta())?;
    let gammas: Vec<f64> = fields.iter().map(|f| f.gamma()).collect();
    let ks = ks_one_sample(&gammas, gamma_half_cdf);
    let n = gammas.len();
    run.push(StatRow::scalar(
        "ks_statistic",
        rho,
        "delta",
        ks.statistic,
        n,
    ));
    run.push(StatRow::scalar("ks_p_value", rho, "delta", ks.p_value, n));
    let (m, se) = mean_se(&gammas);
    run.push(StatRow {
        stderr: Some(se),
        ..StatRow::scalar("mean_gamma", rho, "delta", m, n)
    });
    Ok(())
}

fn ward(run: &mut Run) -> Result<()> {
    let rho = run.cfg.rhos()[0];
    let (g, w) = run.graph(rho)?;
    let mut pick = rng_stream(derive_seed(run.seed, &[label_tag("ward_sites")]), 0);
    let mut sites: Vec<usize> = sample_indices(&mut pick, g.sites(), 10).into_vec();
    sites.sort_unstable();
    let fields = run.fields("ward", rho, &w, g.delta())?;
    for &i in &sites {
        let vals: Vec<f64> = fields.iter().map(|f| f.exp_u(i)).collect();
        let (m, se) = mean_se(&vals);
        let label = g.label(i);
        run.moment_row("mean_exp_u", rho, &label, &vals)?;
        run.push(StatRow::scalar(
            "ward_z",
            rho,
            &label,
            (m - 1.0) / se,
            vals.len(),
        ));
    }
    Ok(())
}

fn sampler_crosscheck(run: &mut Run) -> Result<()> {
    let rho = run.cfg.rhos()[0];
    let (g, w) = run.graph(rho)?;
    let reps = run.cfg.replicas;
    let delta = g.delta();
    let site = g.index_of(1);
    let sample = |method: SamplerMethod| {
        let w = &w;
        move |id: StreamId, rng: &mut ReplicaRng| {
            draw_field(w, delta, method, id, rng).map(|f| f.exp_u(site))
        }
    };
    let seq = run.replicate(
        "crosscheck_sequential",
        rho,
        reps,
        sample(SamplerMethod::Sequential),
    )?;
    let gib = run.replicate("crosscheck_gibbs", rho, reps, sample(SamplerMethod::Gibbs))?;
    let ks = ks_two_sample(&seq, &gib);
    let n = seq.len().min(gib.len());
    run.push(StatRow::scalar("ks_statistic", rho, "1", ks.statistic, n));
    run.push(StatRow::scalar("ks_p_value", rho, "1", ks.p_value, n));
    run.moment_row("mean_exp_u_sequential", rho, "1", &seq)?;
    run.moment_row("mean_exp_u_gibbs", rho, "1", &gib)?;
    Ok(())
}

fn coarse_check(run: &mut Run) -> Result<()> {
    let rho = run.cfg.rhos()[0];
    let (g, w) = run.graph(rho)?;
    let part = standard_partition(run.cfg.n, run.cfg.k)?;
    let coarse = coarsen(&g, &part)?;
    let cw = coarse.weights().clone();
    let fine = run.fields("coarse_fine", rho, &w, g.delta())?;
    let coarse_fields = run.fields("coarse_coarse", rho, &cw, part.len() - 1)?;
    for (b, label) in part.labels().iter().enumerate().take(part.len() - 1) {
        let fine_vals: Vec<f64> = fine
            .iter()
            .map(|f| {
                let eu: Vec<f64> = f.u.iter().map(|x| x.exp()).collect();
                block_average(&eu, &part)[b]
            })
            .collect();
        let coarse_vals: Vec<f64> = coarse_fields.iter().map(|f| f.exp_u(b)).collect();
        let ks = ks_two_sample(&fine_vals, &coarse_vals);
        let n = fine_vals.len().min(coarse_vals.len());
        run.push(StatRow::scalar("ks_statistic", rho, label, ks.statistic, n));
        run.push(StatRow::scalar("ks_p_value", rho, label, ks.p_value, n));
        run.moment_row("mean_exp_u_fine", rho, label, &fine_vals)?;
        run.moment_row("mean_exp_u_coarse", rho, label, &coarse_vals)?;
    }
    Ok(())
}

fn escape_scan(run: &mut Run) -> Result<()> {
    let levels: Vec<u32> = (3..=run.cfg.n).collect();
    for rho in run.cfg.rhos() {
        let base = run.cfg.lattice(rho)?;
        let seed = run.family("escape", rho, run.cfg.replicas);
        let rows = recurrence_diagnostic(&base, &levels, run.cfg.replicas, seed)?;
        for r in &rows {
            run.failed += r.failures;
            run.push(StatRow {
                ci_lo: Some(r.q25),
                ci_hi: Some(r.q75),
                ..StatRow::scalar("median_escape", rho, r.n, r.median, r.replicas)
            });
            run.push(StatRow::scalar("mean_escape", rho, r.n, r.mean, r.replicas));
        }
        let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.median.ln()).collect();
        if xs.len() >= 2 {
            let fit = linear_fit(&xs, &ys);
            run.push(StatRow {
                stderr: Some(fit.slope_se).filter(|x| x.is_finite()),
                ..StatRow::scalar("log_median_slope", rho, "", fit.slope, run.cfg.replicas)
            });
        }
    }
    Ok(())
}

/// One `k` of the Monte Carlo check of the recursive inequality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecursionRow {
    pub k: u32,
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub rhs: f64,
}

/// For every `k < n`: `E e^{s u_{B_k'}}` on the coarse graph `Λ̃_n^{(k)}`
/// pinned at `δ_n`, against the recursion's right-hand side evaluated with
/// the Monte Carlo moments `E e^{s u_{B_ℓ}}` on `Λ̃_n^{(ℓ)}` and `m_n = 1`.
fn recursion_rows(run: &mut Run, rho: f64) -> Result<Vec<RecursionRow>> {
    let n = run.cfg.n;
    let s = run.cfg.s;
    let p = BoundParams::new(s, rho, run.cfg.wbar)?;
    let (g, _) = run.graph(rho)?;
    // lhs[k] = E e^{s u_{B_k'}}, rest[k] = E e^{s u_{B_k}} (with its stderr).
    let mut lhs = Vec::new();
    let mut rest = Vec::new();
    for k in 0..n {
        let part = standard_partition(n, k)?;
        let cw = coarsen(&g, &part)?.weights().clone();
        let fields = run.fields(&format!("recursion_k{k}"), rho, &cw, part.len() - 1)?;
        let prime: Vec<f64> = fields.iter().map(|f| (s * f.u[0]).exp()).collect();
        let block: Vec<f64> = fields.iter().map(|f| (s * f.u[1]).exp()).collect();
        lhs.push(mean_se(&prime));
        rest.push(mean_se(&block).0);
    }
    let mut out = Vec::new();
    for k in 0..n {
        let moments: Vec<f64> = (k + 1..=n)
            .map(|l| if l == n { 1.0 } else { rest[l as usize] })
            .collect();
        out.push(RecursionRow {
            k,
            lhs: lhs[k as usize].0,
            lhs_stderr: lhs[k as usize].1,
            rhs: bounds::recursion_rhs(k, n, &p, &moments)?,
        });
    }
    Ok(out)
}

/// Critical value of the one-sided 95% z-test used for bound checks.
pub const Z95_ONE_SIDED: f64 = 1.6448536269514722;

fn bounds_table(run: &mut Run) -> Result<()> {
    let rho = run.cfg.rhos()[0];
    let p = BoundParams::new(run.cfg.s, rho, run.cfg.wbar)?;
    for r in bounds::bounds_table(&p, run.cfg.n)? {
        run.push(StatRow::scalar(&r.name, rho, r.scale, r.value, 0));
    }
    if run.cfg.replicas > 0 {
        for r in recursion_rows(run, rho)? {
            let reps = run.cfg.replicas;
            run.push(StatRow {
                stderr: Some(r.lhs_stderr),
                ..StatRow::scalar("recursion_lhs", rho, r.k, r.lhs, reps)
            });
            run.push(StatRow::scalar("recursion_rhs", rho, r.k, r.rhs, reps));
            let holds = r.lhs - Z95_ONE_SIDED * r.lhs_stderr <= r.rhs;
            run.push(StatRow::scalar(
                "recursion_holds",
                rho,
                r.k,
                holds as u8 as f64,
                reps,
            ));
        }
    }
    Ok(())
}
