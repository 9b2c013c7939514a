mod common;

use proptest::prelude::*;

use common::Instance;
use spotmpc_core::comfort::Season;
use spotmpc_core::mpc::{
    build_problem, energy_terms, hour_block_constraints, solve_mpc, ControllerVariant, HourClock, MpcConfig, SlotForecast, HORIZON,
};
use spotmpc_core::scenario::{ComfortSpec, Layout, Scenario};
use spotmpc_core::thermal::RoomState;
use spotmpc_nlp::{sample_start, solve_multistart, NlpProblem, SolverSettings};

fn season() -> impl Strategy<Value = Season> {
    prop_oneof![Just(Season::Winter), Just(Season::Summer)]
}

fn variant() -> impl Strategy<Value = ControllerVariant> {
    prop_oneof![Just(ControllerVariant::Sa), Just(ControllerVariant::Ns), Just(ControllerVariant::Su)]
}

fn layout() -> impl Strategy<Value = Layout> {
    prop_oneof![Just(Layout::S1), Just(Layout::S2), Just(Layout::S3)]
}

proptest! {
    #[test]
    fn hour_blocks_partition_the_horizon(q in 0usize..6, horizon in 1usize..49) {
        let b = hour_block_constraints(q, horizon);
        let mut seen = vec![0u32; horizon];
        for &k in b.pinned.iter().chain(b.chains.iter().flatten()) {
            seen[k] += 1;
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        // Every chain lies inside one clock hour.
        for c in &b.chains {
            let hour = (q + c[0]) / 6;
            prop_assert!(c.iter().all(|&k| (q + k) / 6 == hour));
            prop_assert!(c.windows(2).all(|w| w[1] == w[0] + 1));
        }
        if q != 0 {
            prop_assert_eq!(b.pinned.len(), (6 - q).min(horizon));
        } else {
            prop_assert!(b.pinned.is_empty());
        }
    }

    #[test]
    fn energy_terms_are_nonnegative(
        u in 12.0..30.0f64, tm in -10.0..30.0f64, drop in 0.0..15.0f64,
        v in prop::collection::vec(0.0..4.5f64, 1..3),
        w in prop::collection::vec(0.0..1.0f64, 0..6),
        va in prop::collection::vec(0.0..1.0f64, 0..6),
    ) {
        let tc = (tm - drop).min(u);
        let e = energy_terms(u, &v, tm, tc, &w, &va, &MpcConfig::default(), 1.2041, 1.0);
        for term in [e.hvac_heat, e.hvac_cool, e.hvac_fan, e.spot_heat, e.spot_fan] {
            prop_assert!(term >= 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dimensions_depend_only_on_layout_variant_and_q(
        layout in layout(), s in season(), v in variant(), q in 0usize..6, relaxed in any::<bool>(), seed_a in 0u64..1000, seed_b in 0u64..1000,
    ) {
        let scenario = Scenario::new(layout, s, ComfortSpec::Homogeneous);
        let b = scenario.building();
        let nr = b.num_rooms();
        let cfg = MpcConfig::for_season(s);
        let dims = |seed: u64| {
            let inst = Instance::random(s, nr, HORIZON, seed);
            let clock = HourClock { slot: 6 * (seed as usize % 20) + q, carried_u: Some(20.0) };
            let p = build_problem(&b, &inst.states, clock, &inst.forecasts, &cfg, v, relaxed).unwrap();
            (p.num_variables(), p.num_constraints(), p.jacobian_structure().len(), p.hessian_structure().len())
        };
        prop_assert_eq!(dims(seed_a), dims(seed_b));
    }

    #[test]
    fn relaxed_objective_adds_exactly_w_at_zero_slack(s in season(), seed in 0u64..10_000, rooms in 1usize..4) {
        let inst = Instance::random(s, rooms, 6, seed);
        let strict = inst.problem(ControllerVariant::Sa, false);
        let relaxed = inst.problem(ControllerVariant::Sa, true);
        let z = sample_start(&strict, seed, 0);
        let mut zr = vec![0.0; relaxed.num_variables()];
        zr[..z.len()].copy_from_slice(&z);
        let f = strict.objective(&z);
        let fr = relaxed.objective(&zr);
        prop_assert!((fr - (f + inst.cfg.w_penalty)).abs() <= 1e-9 * f.abs().max(1.0));
    }
}

#[test]
fn feasible_strict_point_is_feasible_for_relaxed_problem() {
    let inst = Instance::random(Season::Summer, 2, 6, 11);
    let strict = inst.problem(ControllerVariant::Sa, false);
    let settings = SolverSettings { starts: 5, ..SolverSettings::default() };
    let sol = solve_multistart(&strict, &settings).unwrap();
    assert!(sol.status.is_feasible());
    let relaxed = inst.problem(ControllerVariant::Sa, true);
    let mut zr = vec![0.0; relaxed.num_variables()];
    zr[..sol.x.len()].copy_from_slice(&sol.x);
    let worst = relaxed.residuals(&zr).into_iter().fold(0.0, f64::max);
    assert!(worst < 1e-5, "violation {worst}");
    assert!((relaxed.objective(&zr) - sol.objective - inst.cfg.w_penalty).abs() < 1e-6 * sol.objective.abs().max(1.0));
}

/// Central differences of objective and constraints at `points` random points.
fn max_gradient_error(p: &dyn NlpProblem, points: usize, seed: u64) -> f64 {
    let n = p.num_variables();
    let m = p.num_constraints();
    let (mut lo, mut hi) = (vec![0.0; n], vec![0.0; n]);
    p.variable_bounds(&mut lo, &mut hi);
    let jac = p.jacobian_structure();
    let mut worst: f64 = 0.0;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1.0);
    for k in 0..points as u64 {
        let mut x = sample_start(p, seed, k);
        for i in 0..n {
            if lo[i] < hi[i] {
                x[i] = x[i].clamp(lo[i], hi[i]);
            }
        }
        let mut g = vec![0.0; n];
        p.gradient(&x, &mut g);
        let mut jv = vec![0.0; jac.len()];
        p.jacobian_values(&x, &mut jv);
        let mut dense = vec![vec![0.0; n]; m];
        for (&(r, c), v) in jac.iter().zip(&jv) {
            dense[r][c] += v;
        }
        let (mut cp, mut cm) = (vec![0.0; m], vec![0.0; m]);
        for i in 0..n {
            let h = 1e-6 * x[i].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            worst = worst.max(rel((p.objective(&xp) - p.objective(&xm)) / (2.0 * h), g[i]));
            p.constraints(&xp, &mut cp);
            p.constraints(&xm, &mut cm);
            for r in 0..m {
                worst = worst.max(rel((cp[r] - cm[r]) / (2.0 * h), dense[r][i]));
            }
        }
    }
    worst
}

#[test]
fn derivatives_match_central_differences() {
    let inst = Instance::random(Season::Winter, 2, 6, 5);
    for (variant, relaxed) in [(ControllerVariant::Sa, true), (ControllerVariant::Ns, false)] {
        let p = inst.problem(variant, relaxed);
        let err = max_gradient_error(&p, 10, 3);
        assert!(err <= 1e-4, "{variant} relaxed={relaxed}: {err}");
    }
}

#[test]
fn devices_stay_off_in_empty_slots() {
    let mut inst = Instance::random(Season::Summer, 2, 6, 21);
    for (k, f) in inst.forecasts.iter_mut().enumerate() {
        f.occupied = vec![k % 2 == 0, k % 3 == 0];
        f.occupied_fraction = f.occupied.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect();
    }
    inst.cfg.starts = 4;
    let out = solve_mpc(&inst.building, &inst.states, inst.clock, &inst.forecasts, &inst.cfg, ControllerVariant::Sa, true, None).unwrap();
    let l = &out.problem.layout;
    for k in 0..6 {
        for (s, &j) in l.device_rooms.iter().enumerate() {
            if !inst.forecasts[k].occupied[j] {
                assert!(out.solution.x[l.w(k, s)].abs() < 1e-9);
                assert!(out.solution.x[l.va(k, s)].abs() < 1e-9);
            }
        }
    }
}

#[test]
fn mid_hour_plan_keeps_the_committed_supply_temperature() {
    let mut inst = Instance::random(Season::Winter, 2, 6, 8);
    inst.clock = HourClock { slot: 9, carried_u: Some(23.5) };
    inst.cfg.starts = 3;
    let out = solve_mpc(&inst.building, &inst.states, inst.clock, &inst.forecasts, &inst.cfg, ControllerVariant::Ns, false, None).unwrap();
    assert!(!out.plan.u_updated);
    assert_eq!(out.plan.u, 23.5);
    let l = &out.problem.layout;
    for k in 0..3 {
        assert!((out.solution.x[l.u(k)] - 23.5).abs() < 1e-9);
    }
}

#[test]
fn mid_hour_plan_without_carried_value_is_rejected() {
    let inst = Instance::random(Season::Winter, 2, 6, 8);
    let clock = HourClock { slot: 7, carried_u: None };
    let r = build_problem(&inst.building, &inst.states, clock, &inst.forecasts, &inst.cfg, ControllerVariant::Sa, false);
    assert!(r.is_err());
}

#[test]
fn forecast_length_must_match_horizon() {
    let inst = Instance::random(Season::Winter, 2, 6, 8);
    let short: Vec<SlotForecast> = inst.forecasts[..5].to_vec();
    let r = build_problem(&inst.building, &[RoomState::at(21.0); 2], inst.clock, &short, &inst.cfg, ControllerVariant::Sa, false);
    assert!(r.is_err());
}
