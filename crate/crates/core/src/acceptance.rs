//! The acceptance checks, each at its pinned size, seed and tolerance.

use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, BoundParams};
use crate::error::Result;
use crate::experiment::{run_experiment, Experiment, ExperimentConfig, RhoValues, RunRecord};
use crate::graph::WeightedGraph;
use crate::lattice::{build_finite_box, LatticeParams};
use crate::report::to_csv;
use crate::rng::{derive_seed, rng_stream};
use crate::sampler::beta_from_u;
use crate::walk::{
    conductances, escape_probability, sample_environment, simulate_vrjp, Stop, StopReason,
    DEFAULT_MAX_EVENTS,
};

pub const SEED: u64 = 1;

pub const GAMMA_KS_MAX: f64 = 0.04;
pub const GAMMA_RUNTIME: Duration = Duration::from_secs(120);
pub const WARD_Z_MAX: f64 = 4.0;
pub const KS_P_MIN: f64 = 0.01;
pub const ROUNDTRIP_REL_MAX: f64 = 1e-8;
pub const PATHSUM_REL_MAX: f64 = 1e-12;
pub const SLOPE_REL_MAX: f64 = 0.30;
pub const SLOPE_RUNTIME: Duration = Duration::from_secs(600);
pub const LOG_MEDIAN_SLOPE_MAX: f64 = -0.1;
pub const MEDIAN_RETAINED_MIN: f64 = 0.5;
pub const C_WBAR_TINY: f64 = 1e-9;
pub const C_WBAR_LIMIT_TOL: f64 = 1e-6;
pub const C_S_ROUTE_TOL: f64 = 1e-6;
pub const VRJP_AGREEMENT_TOL: f64 = 0.02;
pub const VRJP_RUNS: usize = 10_000;
pub const DETERMINISM_SEED: u64 = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: String,
    pub title: String,
    pub passed: bool,
    pub detail: String,
}

impl CriterionResult {
    fn new(id: &str, title: &str, passed: bool, detail: String) -> Self {
        CriterionResult {
            id: id.into(),
            title: title.into(),
            passed,
            detail,
        }
    }

    fn errored(id: &str, title: &str, e: crate::Error) -> Self {
        Self::new(id, title, false, format!("error: {e}"))
    }

    /// `PASS [id] title: detail` or `FAIL [id] ...`.
    pub fn line(&self) -> String {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        format!("{tag} [{}] {}: {}", self.id, self.title, self.detail)
    }
}

fn preset(e: Experiment, workers: usize) -> ExperimentConfig {
    ExperimentConfig {
        seed: SEED,
        workers,
        ..ExperimentConfig::preset(e)
    }
}

fn complete(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let rec = run_experiment(cfg)?;
    match &rec.status {
        crate::experiment::RunStatus::Complete => Ok(rec),
        crate::experiment::RunStatus::Failed { message, .. } => {
            Err(crate::Error::Numerical(message.clone()))
        }
    }
}

fn value(rec: &RunRecord, stat: &str, rho: f64, key: &str) -> f64 {
    rec.find(stat, rho, key).map_or(f64::NAN, |r| r.value)
}

fn guard(id: &str, title: &str, f: impl FnOnce() -> Result<CriterionResult>) -> CriterionResult {
    f().unwrap_or_else(|e| CriterionResult::errored(id, title, e))
}

pub fn gamma_law(workers: usize) -> CriterionResult {
    let title = "Gamma(1/2) law of 1/(2G(delta,delta)) on the n=6 box";
    guard("1", title, || {
        let t = Instant::now();
        let rec = complete(&preset(Experiment::GammaLaw, workers))?;
        let elapsed = t.elapsed();
        let ks = value(&rec, "ks_statistic", 4.0, "delta");
        let ok = ks < GAMMA_KS_MAX && elapsed < GAMMA_RUNTIME;
        Ok(CriterionResult::new(
            "1",
            title,
            ok,
            format!(
                "KS = {ks:.4} (< {GAMMA_KS_MAX}), p = {:.3}, {:.1}s (< {}s)",
                value(&rec, "ks_p_value", 4.0, "delta"),
                elapsed.as_secs_f64(),
                GAMMA_RUNTIME.as_secs()
            ),
        ))
    })
}

pub fn ward(workers: usize) -> CriterionResult {
    let title = "Ward identity E e^u_i = 1 at 10 random sites, N=5000";
    guard("2", title, || {
        let rec = complete(&preset(Experiment::Ward, workers))?;
        let zs: Vec<(String, f64, f64)> = rec
            .rows
            .iter()
            .filter(|r| r.statistic == "ward_z")
            .map(|r| {
                (
                    r.vertex_or_scale.clone(),
                    value(&rec, "mean_exp_u", 4.0, &r.vertex_or_scale),
                    r.value,
                )
            })
            .collect();
        let worst = zs.iter().map(|z| z.2.abs()).fold(0.0, f64::max);
        let ok = zs.len() == 10 && zs.iter().all(|z| z.2.abs() <= WARD_Z_MAX);
        let list: Vec<String> = zs
            .iter()
            .map(|(i, m, z)| format!("{i}:{m:.3}({z:+.1})"))
            .collect();
        Ok(CriterionResult::new(
            "2",
            title,
            ok,
            format!(
                "max |z| = {worst:.2} (<= {WARD_Z_MAX}); site:mean(z) {}",
                list.join(" ")
            ),
        ))
    })
}

pub fn sampler_equivalence(workers: usize) -> CriterionResult {
    let title = "sequential vs Gibbs law of e^u_1 on the n=3 box";
    guard("3", title, || {
        let rec = complete(&preset(Experiment::SamplerCrosscheck, workers))?;
        let p = value(&rec, "ks_p_value", 4.0, "1");
        Ok(CriterionResult::new(
            "3",
            title,
            p > KS_P_MIN,
            format!(
                "KS p = {p:.4} (> {KS_P_MIN}), D = {:.4}",
                value(&rec, "ks_statistic", 4.0, "1")
            ),
        ))
    })
}

pub fn coarse_grain(workers: usize) -> CriterionResult {
    let title = "coarse graining preserves the law of e^u_B1 (n=5, k=1)";
    guard("4", title, || {
        let rec = complete(&preset(Experiment::CoarseCheck, workers))?;
        let p = value(&rec, "ks_p_value", 4.0, "B1");
        Ok(CriterionResult::new(
            "4",
            title,
            p > KS_P_MIN,
            format!(
                "KS p = {p:.4} (> {KS_P_MIN}), D = {:.4}",
                value(&rec, "ks_statistic", 4.0, "B1")
            ),
        ))
    })
}

pub fn roundtrip() -> CriterionResult {
    let title = "beta -> (u, gamma) -> beta roundtrip on the n=6 box, 100 samples";
    guard("5", title, || {
        let g = build_finite_box(LatticeParams::new(4.0, 1.0, 6)?)?;
        let w = g.dense_weights();
        let seed = derive_seed(SEED, &[5]);
        let worst = (0..100u64)
            .into_par_iter()
            .map(|r| -> Result<f64> {
                let mut rng = rng_stream(seed, r);
                let beta = crate::sampler::sample_beta_sequential_tilted(&w, None, &mut rng)?;
                let field = crate::green::ufield_pinned(
                    &crate::green::green(&crate::green::assemble_h(&beta, &w))?,
                    g.delta(),
                )?;
                let back = beta_from_u(&field, &w)?;
                Ok(beta
                    .iter()
                    .zip(&back)
                    .map(|(a, b)| (a - b).abs() / a.abs())
                    .fold(0.0, f64::max))
            })
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        Ok(CriterionResult::new(
            "5",
            title,
            worst < ROUNDTRIP_REL_MAX,
            format!("max relative error = {worst:.2e} (< {ROUNDTRIP_REL_MAX:e})"),
        ))
    })
}

pub fn path_sum() -> CriterionResult {
    let title = "path-sum enumeration vs closed form, 1000 instances with n-k <= 12";
    guard("6", title, || {
        let mut rng = rng_stream(derive_seed(SEED, &[6]), 0);
        let mut worst = 0.0f64;
        let mut bounded = true;
        for _ in 0..1000 {
            let p = BoundParams::new(
                rng.random_range(0.01..0.49),
                rng.random_range(1.05..20.0),
                (rng.random_range(-6.0..3.0f64)).exp(),
            )?;
            let k = rng.random_range(0..20u32);
            let n = k + rng.random_range(1..=12u32);
            let ps = bounds::pathsum_exact(k, n, &bounds::a_sequence(k, n, &p))?;
            worst = worst.max((ps.exact - ps.closed_form).abs() / ps.closed_form);
            bounded &= ps.exact <= ps.full_product;
        }
        Ok(CriterionResult::new(
            "6",
            title,
            worst < PATHSUM_REL_MAX && bounded,
            format!("max relative error = {worst:.2e} (< {PATHSUM_REL_MAX:e}), bounded by the full product: {bounded}"),
        ))
    })
}

pub fn recursion(workers: usize) -> CriterionResult {
    let title = "Monte Carlo E e^{s u_Bk'} below the recursion bound (n=5, N=1000)";
    guard("7", title, || {
        let mut details = Vec::new();
        let mut ok = true;
        for (rho, wbar) in [(4.0, 1.0), (2.0, 0.1)] {
            let cfg = ExperimentConfig {
                rho: RhoValues::One(rho),
                wbar,
                ..preset(Experiment::BoundsTable, workers)
            };
            let rec = complete(&cfg)?;
            for k in 0..cfg.n {
                let key = k.to_string();
                let holds = value(&rec, "recursion_holds", rho, &key) == 1.0;
                ok &= holds;
                details.push(format!(
                    "rho={rho} k={k}: {:.3} vs {:.3}{}",
                    value(&rec, "recursion_lhs", rho, &key),
                    value(&rec, "recursion_rhs", rho, &key),
                    if holds { "" } else { " (violated)" }
                ));
            }
        }
        Ok(CriterionResult::new("7", title, ok, details.join("; ")))
    })
}

pub fn decay_slope(workers: usize) -> CriterionResult {
    let title = "decay slope of log E e^{s u} vs scale k within 30% of -s log(2 rho)";
    guard("8", title, || {
        let t = Instant::now();
        let rec = complete(&preset(Experiment::DecaySlope, workers))?;
        let elapsed = t.elapsed();
        let slope = value(&rec, "slope", 4.0, "");
        let predicted = value(&rec, "predicted_slope", 4.0, "");
        let rel = (slope - predicted).abs() / predicted.abs();
        Ok(CriterionResult::new(
            "8",
            title,
            rel <= SLOPE_REL_MAX && elapsed < SLOPE_RUNTIME,
            format!(
                "slope = {slope:.4} vs {predicted:.4}, relative error {rel:.3} (<= {SLOPE_REL_MAX}), {:.1}s (< {}s)",
                elapsed.as_secs_f64(),
                SLOPE_RUNTIME.as_secs()
            ),
        ))
    })
}

pub fn phase_transition(workers: usize) -> CriterionResult {
    let title = "median escape decays at rho=4 and persists at rho=sqrt2 (n=3..7)";
    guard("9", title, || {
        let rec = complete(&preset(Experiment::RecurrenceScan, workers))?;
        let med = |rho: f64| -> Vec<f64> {
            rec.series("median_escape", rho)
                .iter()
                .map(|r| r.value)
                .collect()
        };
        let fast = med(4.0);
        let slow = med(std::f64::consts::SQRT_2);
        let monotone = fast.windows(2).all(|p| p[1] < p[0]);
        let slope = value(&rec, "log_median_slope", 4.0, "");
        let retained = slow.iter().cloned().fold(f64::INFINITY, f64::min) / slow[0];
        let ok = monotone && slope < LOG_MEDIAN_SLOPE_MAX && retained >= MEDIAN_RETAINED_MIN;
        Ok(CriterionResult::new(
            "9",
            title,
            ok,
            format!(
                "rho=4: strictly decreasing {monotone}, log-median slope {slope:.3} (< {LOG_MEDIAN_SLOPE_MAX}); rho=sqrt2: min/first = {retained:.3} (>= {MEDIAN_RETAINED_MIN})"
            ),
        ))
    })
}

pub fn c_wbar_limit() -> CriterionResult {
    let title = "c(W, 1/4) within 1e-6 of 2 at W = 1e-9";
    guard("10a", title, || {
        let c = bounds::const_c_wbar_s(C_WBAR_TINY, 0.25)?;
        Ok(CriterionResult::new(
            "10a",
            title,
            (2.0 - c).abs() < C_WBAR_LIMIT_TOL,
            format!(
                "c = {c:.9}, 2 - c = {:.3e} (< {C_WBAR_LIMIT_TOL:e})",
                2.0 - c
            ),
        ))
    })
}

pub fn c_s_routes() -> CriterionResult {
    let title = "c_s closed form vs quadrature and double integral, s = 0.05..0.45";
    guard("10b", title, || {
        let mut worst = 0.0f64;
        for i in 1..=9 {
            let s = 0.05 * i as f64;
            let closed = bounds::const_c_s_pow(s)?;
            for other in [
                bounds::c_s_pow_quadrature(s)?,
                bounds::c_s_double_integral(s)?,
            ] {
                worst = worst.max((other - closed).abs() / closed);
            }
        }
        Ok(CriterionResult::new(
            "10b",
            title,
            worst < C_S_ROUTE_TOL,
            format!("max relative disagreement = {worst:.2e} (< {C_S_ROUTE_TOL:e})"),
        ))
    })
}

pub fn vrjp_consistency() -> CriterionResult {
    let title = "direct VRJP vs conductance mixture, P(return before delta) on the n=2 box";
    guard("11", title, || {
        let g = build_finite_box(LatticeParams::new(2.0, 1.0, 2)?)?;
        let w = g.dense_weights();
        let delta = g.delta();
        let seed = derive_seed(SEED, &[11]);
        let direct = (0..VRJP_RUNS as u64)
            .into_par_iter()
            .map(|r| -> Result<f64> {
                let mut rng = rng_stream(derive_seed(seed, &[0]), r);
                let t = simulate_vrjp(
                    &w,
                    0,
                    Stop::HitOrReturn(delta),
                    DEFAULT_MAX_EVENTS,
                    &mut rng,
                )?;
                Ok((t.reason == StopReason::ReturnedToStart) as u8 as f64)
            })
            .collect::<Result<Vec<f64>>>()?;
        let mixture = (0..VRJP_RUNS as u64)
            .into_par_iter()
            .map(|r| -> Result<f64> {
                let mut rng = rng_stream(derive_seed(seed, &[1]), r);
                let field = sample_environment(&w, 0, &mut rng)?;
                Ok(1.0 - escape_probability(&conductances(&field, &w)?, 0, delta)?)
            })
            .collect::<Result<Vec<f64>>>()?;
        let (pd, sd) = crate::stats::mean_se(&direct);
        let (pm, sm) = crate::stats::mean_se(&mixture);
        Ok(CriterionResult::new(
            "11",
            title,
            (pd - pm).abs() < VRJP_AGREEMENT_TOL,
            format!("direct {pd:.4} ± {sd:.4}, mixture {pm:.4} ± {sm:.4}, |diff| = {:.4} (< {VRJP_AGREEMENT_TOL})", (pd - pm).abs()),
        ))
    })
}

/// In-process determinism: figure1 CSV bytes at 1 and 8 workers, and on a repeat.
pub fn determinism() -> CriterionResult {
    let title = "figure1 seed 7 gives byte-identical CSV across runs and worker counts";
    guard("12", title, || {
        let csv = |workers| -> Result<Vec<u8>> {
            let cfg = ExperimentConfig {
                seed: DETERMINISM_SEED,
                workers,
                ..ExperimentConfig::preset(Experiment::Figure1)
            };
            to_csv(&complete(&cfg)?)
        };
        let a = csv(1)?;
        let b = csv(8)?;
        let c = csv(8)?;
        Ok(CriterionResult::new(
            "12",
            title,
            a == b && b == c && !a.is_empty(),
            format!(
                "{} bytes; 1 vs 8 workers equal: {}, repeat equal: {}",
                a.len(),
                a == b,
                b == c
            ),
        ))
    })
}

/// Every criterion except determinism (which callers may check out of process).
pub fn run_statistical(workers: usize) -> Vec<CriterionResult> {
    vec![
        gamma_law(1),
        ward(workers),
        sampler_equivalence(workers),
        coarse_grain(workers),
        roundtrip(),
        path_sum(),
        recursion(workers),
        decay_slope(workers),
        phase_transition(workers),
        c_wbar_limit(),
        c_s_routes(),
        vrjp_consistency(),
    ]
}

pub fn run_all(workers: usize) -> Vec<CriterionResult> {
    let mut out = run_statistical(workers);
    out.push(determinism());
    out
}
