use hierlab::bounds::{self, BoundParams};
use statrs::function::gamma::gamma;

#[test]
fn c_s_pow_against_gamma_function() {
    // c_s^s = 2^{-s} Γ(1/2 − s) / √π, computed here with statrs.
    for i in 1..=9 {
        let s = 0.05 * i as f64;
        let oracle = 2f64.powf(-s) * gamma(0.5 - s) / std::f64::consts::PI.sqrt();
        let v = bounds::const_c_s_pow(s).unwrap();
        assert!(
            (v - oracle).abs() < 1e-12 * oracle,
            "s={s}: {v} vs {oracle}"
        );
    }
}

#[test]
fn threshold_solves_the_critical_product_condition() {
    for s in [0.1, 0.25, 0.4] {
        let w = bounds::wbar_threshold(s).unwrap();
        let c = bounds::const_c_wbar_s(w, s).unwrap();
        // At the threshold c = 1, equivalently the critical factor equals 2^s.
        assert!((c - 1.0).abs() < 1e-9, "s={s}: c = {c}");
        let f = bounds::critical_factor(w, s).unwrap();
        assert!((f - 2f64.powf(s)).abs() < 1e-9, "s={s}: factor = {f}");
        assert!(bounds::const_c_wbar_s(w * 0.5, s).unwrap() > c);
    }
}

fn paths(k: u32, n: u32, a: &dyn Fn(u32) -> f64) -> f64 {
    // Recursive enumeration: each path from k steps to some j in (k, n].
    if k == n {
        return 1.0;
    }
    (k + 1..=n).map(|j| a(k) * paths(j, n, a)).sum()
}

#[test]
fn recursive_path_enumeration_matches() {
    let p = BoundParams::new(0.25, 3.0, 0.7).unwrap();
    for (k, n) in [(0, 1), (0, 5), (2, 9), (3, 14)] {
        let a = bounds::a_sequence(k, n, &p);
        let ps = bounds::pathsum_exact(k, n, &a).unwrap();
        let oracle = paths(k, n, &|i| p.a(i));
        assert!((ps.exact - oracle).abs() < 1e-12 * oracle, "{k}..{n}");
        assert!(ps.exact <= ps.full_product);
    }
}
