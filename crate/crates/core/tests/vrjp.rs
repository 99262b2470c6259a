use hierlab::lattice::{build_finite_box, LatticeParams};
use hierlab::rng::rng_stream;
use hierlab::walk::{simulate_vrjp, Stop, StopReason, DEFAULT_MAX_EVENTS};
use hierlab::{DenseWeights, WeightedGraph};

#[test]
fn local_times_add_up_to_elapsed_time() {
    let g = build_finite_box(LatticeParams::new(2.0, 1.0, 3).unwrap()).unwrap();
    let w = g.dense_weights();
    for r in 0..20 {
        let t = simulate_vrjp(
            &w,
            0,
            Stop::Horizon(5.0),
            DEFAULT_MAX_EVENTS,
            &mut rng_stream(3, r),
        )
        .unwrap();
        assert_eq!(t.reason, StopReason::Horizon);
        let total: f64 = t.local_times.iter().sum();
        assert!((total - t.elapsed).abs() < 1e-9 * t.elapsed.max(1.0));
        assert!((t.elapsed - 5.0).abs() < 1e-12);
        assert_eq!(t.states.len(), t.jump_times.len() + 1);
        assert!(t.jump_times.windows(2).all(|p| p[0] <= p[1]));
        for (e, pair) in t.states.windows(2).enumerate() {
            assert_ne!(pair[0], pair[1], "event {e} is a self-jump");
        }
        // Time spent in each vertex, rebuilt from the jump log.
        let mut rebuilt = vec![0.0; w.vertex_count()];
        let mut prev = 0.0;
        for (e, &jt) in t.jump_times.iter().enumerate() {
            rebuilt[t.states[e]] += jt - prev;
            prev = jt;
        }
        rebuilt[t.last()] += t.elapsed - prev;
        for (a, b) in rebuilt.iter().zip(&t.local_times) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn two_vertex_first_jump_is_exponential() {
    // With no local time at the other vertex the first jump has rate W.
    let w = DenseWeights::from_edges(2, &[(0, 1, 2.5)]);
    let times: Vec<f64> = (0..20_000)
        .map(|r| {
            let t = simulate_vrjp(
                &w,
                0,
                Stop::Hit(1),
                DEFAULT_MAX_EVENTS,
                &mut rng_stream(8, r),
            )
            .unwrap();
            assert_eq!(t.reason, StopReason::HitTarget);
            t.jump_times[0]
        })
        .collect();
    let (m, se) = hierlab::stats::mean_se(&times);
    assert!((m - 0.4).abs() < 4.0 * se, "{m} ± {se}");
}

#[test]
fn two_vertex_second_jump_is_reinforced() {
    // Back at 0 after holding L_1 at 1, the rate of jumping to 1 is W (1 + L_1).
    let w = DenseWeights::from_edges(2, &[(0, 1, 1.0)]);
    let mut scaled = Vec::new();
    for r in 0..20_000 {
        let t = simulate_vrjp(
            &w,
            0,
            Stop::Horizon(f64::INFINITY),
            4,
            &mut rng_stream(9, r),
        )
        .unwrap();
        let l1 = t.jump_times[1] - t.jump_times[0];
        let hold = t.jump_times[2] - t.jump_times[1];
        scaled.push(hold * (1.0 + l1));
    }
    let (m, se) = hierlab::stats::mean_se(&scaled);
    assert!((m - 1.0).abs() < 4.0 * se, "{m} ± {se}");
}

#[test]
fn event_cap_marks_truncation() {
    let w = DenseWeights::from_edges(2, &[(0, 1, 1.0)]);
    let t = simulate_vrjp(&w, 0, Stop::Horizon(1e9), 10, &mut rng_stream(1, 0)).unwrap();
    assert!(t.truncated());
    assert_eq!(t.jump_times.len(), 10);
}
