//! Closed-form constants and recursive fractional-moment bounds on the
//! hierarchical lattice.
//!
//! Scales are block levels: `B_j = {2^j + 1, …, 2^{j+1}}` and level `n` is the
//! wired boundary `δ_n`.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::GaussLegendre;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use statrs::function::gamma::gamma;

use crate::coarse::{boundary_block_weight, dyadic_block_weight, first_step_weight};
use crate::error::{Error, Result};
use crate::green::check_moment_order;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub s: f64,
    pub rho: f64,
    pub wbar: f64,
}

impl BoundParams {
    pub fn new(s: f64, rho: f64, wbar: f64) -> Result<Self> {
        check_moment_order(s)?;
        if !(rho > 1.0) || !rho.is_finite() {
            return Err(Error::param(
                "rho",
                format!("must be finite and > 1, got {rho}"),
            ));
        }
        if !(wbar > 0.0) || !wbar.is_finite() {
            return Err(Error::param(
                "wbar",
                format!("must be finite and > 0, got {wbar}"),
            ));
        }
        Ok(BoundParams { s, rho, wbar })
    }

    pub fn is_critical(&self) -> bool {
        self.rho == 2.0
    }

    /// `x_i = c_s W̄/(2ρ) · (2/ρ)^i`, so that `c_s^s W(B_i', B_i)^s = x_i^s`.
    pub fn x(&self, i: u32) -> f64 {
        let cs = const_c_s(self.s).expect("s validated on construction");
        cs * self.wbar / (2.0 * self.rho) * (2.0 / self.rho).powi(i as i32)
    }

    /// `A_i = (1 + x_i^s) x_i^s`.
    pub fn a(&self, i: u32) -> f64 {
        let xs = self.x(i).powf(self.s);
        (1.0 + xs) * xs
    }
}

fn legendre() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(NonZeroUsize::new(40).unwrap()))
}

/// Composite 40-point Gauss–Legendre over `pieces` equal panels.
fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, pieces: usize) -> f64 {
    let rule = legendre();
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|p| {
            let lo = a + p as f64 * h;
            rule.integrate(lo, lo + h, &f)
        })
        .sum()
}

/// `c_s^s = E[G(i,i)^s] = E[(2γ)^{−s}]` for `γ ~ Gamma(½, 1)`, from
/// `E γ^{−s} = Γ(½ − s)/Γ(½)`.
pub fn const_c_s_pow(s: f64) -> Result<f64> {
    check_moment_order(s)?;
    Ok(2f64.powf(-s) * gamma(0.5 - s) / std::f64::consts::PI.sqrt())
}

/// `c_s = (c_s^s)^{1/s}`.
pub fn const_c_s(s: f64) -> Result<f64> {
    Ok(const_c_s_pow(s)?.powf(1.0 / s))
}

/// `E[(2γ)^{−s}]` by quadrature. The substitution `v = γ^{½−s}` turns the
/// weakly singular integrand into `exp(−v^p)/(½−s)` with `p = 1/(½−s)`.
pub fn c_s_pow_quadrature(s: f64) -> Result<f64> {
    check_moment_order(s)?;
    let q = 0.5 - s;
    let p = 1.0 / q;
    let f = |v: f64| (-v.powf(p)).exp();
    let top = 745f64.powf(q).max(1.0);
    let body = integrate(f, 0.0, 1.0, 8) + integrate(f, 1.0, top, 64);
    Ok(2f64.powf(-s) / (std::f64::consts::PI.sqrt() * q) * body)
}

/// `∫_0^∞ ∫_0^{(2 b^{1/s})^{−1}} (πt)^{−½} e^{−t} dt db`. The inner integral
/// is `erf(√((2 b^{1/s})^{−1}))`, and the whole expression equals `c_s^s`,
/// not `c_s`.
pub fn c_s_double_integral(s: f64) -> Result<f64> {
    check_moment_order(s)?;
    // With b = e^y the integrand is erf(e^{−y/(2s)}/√2)·e^y: it behaves like
    // e^y for y → −∞ and like e^{−y(1/(2s) − 1)} for y → ∞.
    let f = |y: f64| erf((-y / (2.0 * s)).exp() / std::f64::consts::SQRT_2) * y.exp();
    let hi = 40.0 / (0.5 / s - 1.0);
    Ok(integrate(f, -40.0, 0.0, 64) + integrate(f, 0.0, hi, 256))
}

/// `c(W̄, s) = 2 / (1 + (1 + x) x)^{1/s}` with `x = (c_s W̄/4)^s`.
pub fn const_c_wbar_s(wbar: f64, s: f64) -> Result<f64> {
    let x = (const_c_s(s)? * wbar / 4.0).powf(s);
    Ok(2.0 / (1.0 + (1.0 + x) * x).powf(1.0 / s))
}

/// The `W̄*` with `c(W̄*, s) = 1`, by bisection on `log W̄`. Below it the
/// critical per-scale factor is `< 2^s`.
pub fn wbar_threshold(s: f64) -> Result<f64> {
    check_moment_order(s)?;
    let (mut lo, mut hi) = (-60.0f64, 60.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if const_c_wbar_s(mid.exp(), s)? > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// The left side of the critical-dimension condition,
/// `1 + (1 + (c_s W̄/4)^s)(c_s W̄/4)^s`, to be compared with `2^s`.
pub fn critical_factor(wbar: f64, s: f64) -> Result<f64> {
    let x = (const_c_s(s)? * wbar / 4.0).powf(s);
    Ok(1.0 + (1.0 + x) * x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayKind {
    DeltaPinSubcritical,
    DeltaPinCritical,
    TwoPointSubcritical,
    TwoPointCritical,
}

impl DecayKind {
    pub fn is_critical(self) -> bool {
        matches!(
            self,
            DecayKind::DeltaPinCritical | DecayKind::TwoPointCritical
        )
    }

    pub fn is_two_point(self) -> bool {
        matches!(
            self,
            DecayKind::TwoPointSubcritical | DecayKind::TwoPointCritical
        )
    }
}

/// Right-hand side of the decay bound. `scale` is the box level `n` for the
/// δ-pinned kinds and the hierarchical distance for the two-point kinds.
pub fn decay_bound(kind: DecayKind, params: &BoundParams, c: f64, scale: u32) -> Result<f64> {
    if kind.is_critical() != params.is_critical() {
        return Err(Error::param(
            "kind",
            format!("{kind:?} does not apply at rho = {}", params.rho),
        ));
    }
    if kind == DecayKind::DeltaPinSubcritical && params.rho < 2.0 {
        return Err(Error::param(
            "kind",
            format!("subcritical bound needs rho > 2, got {}", params.rho),
        ));
    }
    let base = match kind {
        DecayKind::DeltaPinSubcritical => params.rho,
        DecayKind::DeltaPinCritical => const_c_wbar_s(params.wbar, params.s)?,
        DecayKind::TwoPointSubcritical => 2.0 * params.rho,
        DecayKind::TwoPointCritical => 2.0 * const_c_wbar_s(params.wbar, params.s)?,
    };
    Ok(c * base.powf(-params.s * scale as f64))
}

/// Lower companion `c · (2ρ)^{−s d}` of the two-point bound.
pub fn two_point_lower_bound(params: &BoundParams, c: f64, d: u32) -> f64 {
    c * (2.0 * params.rho).powf(-params.s * d as f64)
}

/// Smallest `C` with `value ≤ decay_bound(kind, params, C, scale)` on every
/// observation `(scale, value)`.
pub fn fit_constant(kind: DecayKind, params: &BoundParams, obs: &[(u32, f64)]) -> Result<f64> {
    if obs.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut c = 0.0f64;
    for &(scale, v) in obs {
        c = c.max(v / decay_bound(kind, params, 1.0, scale)?);
    }
    Ok(c)
}

/// Block weight from `B_a` to `B_b` for `a < b ≤ n`, with `B_n = δ_n`.
fn forward_block_weight(a: u32, b: u32, n: u32, p: &BoundParams) -> f64 {
    if b == n {
        boundary_block_weight(a, n, p.rho, p.wbar)
    } else {
        dyadic_block_weight(a, b, p.rho, p.wbar)
    }
}

/// `(1 + c_s^s W(B_a', B_a)^s) c_s^s W(B_a, B_b)^s`.
pub fn step_factor(a: u32, b: u32, n: u32, p: &BoundParams) -> f64 {
    let cs = const_c_s_pow(p.s).expect("s validated on construction");
    (1.0 + cs * first_step_weight(a, p.rho, p.wbar).powf(p.s))
        * cs
        * forward_block_weight(a, b, n, p).powf(p.s)
}

fn check_scales(k: u32, n: u32) -> Result<()> {
    if k >= n {
        return Err(Error::param(
            "k",
            format!("need k < n, got k = {k}, n = {n}"),
        ));
    }
    if n > 62 {
        return Err(Error::param("n", format!("scale {n} exceeds 62")));
    }
    Ok(())
}

/// `(1 + c_s^s W(B_k', B_k)^s) c_s^s Σ_{ℓ=k+1}^{n} W(B_k, B_ℓ)^s m_ℓ`, where
/// `moments[ℓ − k − 1] = m_ℓ` and `W(B_k, B_n)` is the boundary weight.
pub fn recursion_rhs(k: u32, n: u32, params: &BoundParams, moments: &[f64]) -> Result<f64> {
    check_scales(k, n)?;
    if moments.len() != (n - k) as usize {
        return Err(Error::param(
            "moments",
            format!(
                "need {} entries for l = {}..={n}, got {}",
                n - k,
                k + 1,
                moments.len()
            ),
        ));
    }
    let cs = const_c_s_pow(params.s)?;
    let sum: f64 = (k + 1..=n)
        .zip(moments)
        .map(|(l, m)| forward_block_weight(k, l, n, params).powf(params.s) * m)
        .sum();
    Ok((1.0 + cs * first_step_weight(k, params.rho, params.wbar).powf(params.s)) * cs * sum)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSum {
    /// `Σ_{k=k_0<…<k_ℓ=n} Π_{i<ℓ} A_{k_i}` by enumeration.
    pub exact: f64,
    /// `Π_{i=k}^{n−1} (1 + A_i)`.
    pub full_product: f64,
    /// `A_k Π_{i=k+1}^{n−1} (1 + A_i)`.
    pub closed_form: f64,
}

pub const PATHSUM_MAX_SPAN: u32 = 20;

/// Enumerates every increasing path from `k` to `n`; `a[i − k] = A_i`.
pub fn pathsum_exact(k: u32, n: u32, a: &[f64]) -> Result<PathSum> {
    check_scales(k, n)?;
    let span = n - k;
    if span > PATHSUM_MAX_SPAN {
        return Err(Error::param(
            "n",
            format!("span n - k = {span} exceeds the enumeration limit {PATHSUM_MAX_SPAN}"),
        ));
    }
    if a.len() != span as usize {
        return Err(Error::param(
            "a",
            format!("need {span} values, got {}", a.len()),
        ));
    }
    // Bit t of the mask selects intermediate vertex k + 1 + t.
    let inner = span as usize - 1;
    let mut exact = 0.0;
    for mask in 0u32..(1u32 << inner) {
        let mut prod = a[0];
        for t in 0..inner {
            if mask >> t & 1 == 1 {
                prod *= a[t + 1];
            }
        }
        exact += prod;
    }
    let tail: f64 = a[1..].iter().map(|x| 1.0 + x).product();
    Ok(PathSum {
        exact,
        full_product: (1.0 + a[0]) * tail,
        closed_form: a[0] * tail,
    })
}

/// `A_k, …, A_{n−1}` for the lattice parameters.
pub fn a_sequence(k: u32, n: u32, params: &BoundParams) -> Vec<f64> {
    (k..n).map(|i| params.a(i)).collect()
}

/// `(1/(4(ρ−1)ρ))^s ρ^{−s(n−k)} Π_{i=k}^{n−1} (1 + A_i)`, in the form in
/// which the bound is usually displayed.
pub fn product_bound(k: u32, n: u32, params: &BoundParams) -> Result<f64> {
    if k > n {
        return Err(Error::param(
            "k",
            format!("need k <= n, got k = {k}, n = {n}"),
        ));
    }
    let p = params;
    let lead = (1.0 / (4.0 * (p.rho - 1.0) * p.rho)).powf(p.s);
    let prod: f64 = (k..n).map(|i| 1.0 + p.a(i)).product();
    Ok(lead * p.rho.powf(-p.s * (n - k) as f64) * prod)
}

/// The same bound with the boundary-step prefactor `(ρ/(ρ−1))^s` that the
/// block weight `W(B_j, δ_n)` actually produces.
pub fn product_bound_boundary(k: u32, n: u32, params: &BoundParams) -> Result<f64> {
    let p = params;
    let lead = 1.0 / (4.0 * (p.rho - 1.0) * p.rho);
    let corrected = (p.rho / (p.rho - 1.0)).powf(p.s);
    Ok(product_bound(k, n, p)? / lead.powf(p.s) * corrected)
}

/// `Σ_{i≥0} A_i`, whose exponential bounds every partial product for `ρ > 2`.
pub fn a_series_sum(params: &BoundParams) -> Result<f64> {
    if params.rho <= 2.0 {
        return Err(Error::param(
            "rho",
            format!("the series diverges for rho <= 2, got {}", params.rho),
        ));
    }
    let mut sum = 0.0;
    for i in 0..10_000u32 {
        let t = params.a(i);
        sum += t;
        if t < 1e-18 * sum {
            break;
        }
    }
    Ok(sum)
}

/// `C = max(1, ρ/(ρ−1))^s Π_{i≥0} (1 + A_i)`, a constant with
/// `onepath_sum(k, t, n) ≤ C ρ^{−s(t−k)}` for every `k ≤ t ≤ n` when `ρ > 2`.
pub fn path_constant(params: &BoundParams) -> Result<f64> {
    let series = a_series_sum(params)?;
    let mut prod = 1.0f64;
    for i in 0..10_000u32 {
        let t = params.a(i);
        prod *= 1.0 + t;
        if t < 1e-18 {
            break;
        }
    }
    debug_assert!(prod <= series.exp() * (1.0 + 1e-12));
    let boundary = (params.rho / (params.rho - 1.0)).max(1.0);
    Ok(boundary.powf(params.s) * prod)
}

/// `P_t(a)`: sum over increasing paths `a = k_0 < … < k_ℓ = t` of
/// `Π f(k_i, k_{i+1})`, for all `a ≤ t`; the empty path contributes 1.
fn paths_to(t: u32, f: &impl Fn(u32, u32) -> f64) -> Vec<f64> {
    let mut p = vec![0.0; t as usize + 1];
    p[t as usize] = 1.0;
    for a in (0..t).rev() {
        p[a as usize] = (a + 1..=t).map(|c| f(a, c) * p[c as usize]).sum();
    }
    p
}

/// Iterated-recursion path sum from `k` to `t` inside `Λ̃_n`.
pub fn onepath_sum(k: u32, t: u32, n: u32, params: &BoundParams) -> Result<f64> {
    if k > t || t > n {
        return Err(Error::param(
            "t",
            format!("need k <= t <= n, got {k}, {t}, {n}"),
        ));
    }
    Ok(paths_to(t, &|a, b| step_factor(a, b, n, params))[k as usize])
}

/// `Σ_{t=m}^{n} P_t(k) P_t(m)` for a step factor `f(a, b)`: two particles
/// leave `k` and `m` along increasing paths and meet at `t`.
pub fn twoparticle_sum(k: u32, m: u32, n: u32, f: impl Fn(u32, u32) -> f64) -> Result<f64> {
    if !(k < m && m <= n) {
        return Err(Error::param(
            "m",
            format!("need k < m <= n, got k = {k}, m = {m}, n = {n}"),
        ));
    }
    Ok((m..=n)
        .map(|t| {
            let p = paths_to(t, &f);
            p[k as usize] * p[m as usize]
        })
        .sum())
}

pub fn twoparticle_bound(k: u32, m: u32, n: u32, params: &BoundParams) -> Result<f64> {
    check_scales(k, n)?;
    twoparticle_sum(k, m, n, |a, b| step_factor(a, b, n, params))
}

/// `C² ρ^{−s(m−k)} / (1 − ρ^{−2s})` with `C` from [`path_constant`].
pub fn twoparticle_closed_bound(k: u32, m: u32, params: &BoundParams) -> Result<f64> {
    let c = path_constant(params)?;
    let s = params.s;
    Ok(c * c * params.rho.powf(-s * (m - k) as f64) / (1.0 - params.rho.powf(-2.0 * s)))
}

/// One row of the bounds table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub name: String,
    pub scale: u32,
    pub value: f64,
}

/// Constants and per-scale bounds for `k = 0` up to level `n`.
pub fn bounds_table(params: &BoundParams, n: u32) -> Result<Vec<BoundRow>> {
    let s = params.s;
    let row = |name: &str, scale, value| BoundRow {
        name: name.into(),
        scale,
        value,
    };
    let mut rows = vec![
        row("c_s_pow", 0, const_c_s_pow(s)?),
        row("c_s", 0, const_c_s(s)?),
        row("c_s_pow_quadrature", 0, c_s_pow_quadrature(s)?),
        row("c_s_double_integral", 0, c_s_double_integral(s)?),
        row("c_wbar_s", 0, const_c_wbar_s(params.wbar, s)?),
        row("wbar_threshold", 0, wbar_threshold(s)?),
        row("critical_factor", 0, critical_factor(params.wbar, s)?),
    ];
    for level in 1..=n {
        rows.push(row(
            "product_bound",
            level,
            product_bound(0, level, params)?,
        ));
        rows.push(row(
            "onepath_sum",
            level,
            onepath_sum(0, level, level, params)?,
        ));
        let a = a_sequence(0, level, params);
        if level <= PATHSUM_MAX_SPAN {
            let ps = pathsum_exact(0, level, &a)?;
            rows.push(row("pathsum_exact", level, ps.exact));
            rows.push(row("pathsum_full_product", level, ps.full_product));
        }
    }
    Ok(rows)
}
