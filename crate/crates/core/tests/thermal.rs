use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use spotmpc_core::thermal::{
    build_discrete_matrices, continuous_rhs, mixer_temp, spot_rhs, step_room, step_zone, Exogenous, RoomInput, RoomKind,
    RoomState, ThermalParams,
};

fn input(u: f64, v: f64, t_o: f64, occupied: bool) -> RoomInput {
    RoomInput {
        u,
        v,
        exo: Exogenous { t_o, occupied, d: 0.2 },
    }
}

fn kind() -> impl Strategy<Value = RoomKind> {
    prop_oneof![Just(RoomKind::TypeS), Just(RoomKind::TypeSBar)]
}

proptest! {
    #[test]
    fn equilibrium_is_a_fixed_point(t in 12.0..30.0f64, v in 0.0..4.5f64, n in 1usize..6, tau in prop_oneof![Just(30.0), Just(600.0)]) {
        let m = build_discrete_matrices(&ThermalParams::default(), tau, n).unwrap();
        let states = vec![RoomState::at(t); n];
        let inputs = vec![input(t, v / n as f64, t, false); n];
        let next = step_zone(&m, &states, &inputs, &vec![0.0; n], &vec![RoomKind::TypeS; n]);
        for s in next {
            prop_assert!((s.x - t).abs() <= 1e-12 * t.abs().max(1.0));
        }
    }

    #[test]
    fn mixer_stays_between_inputs(r in 0.0..=0.8f64, te in 10.0..35.0f64, to in -20.0..40.0f64) {
        let tm = mixer_temp(r, te, to, 0.8).unwrap();
        prop_assert!(tm >= te.min(to) - 1e-12 && tm <= te.max(to) + 1e-12);
    }

    #[test]
    fn fan_only_operation_leaves_region_unchanged(steps in 1usize..200, x in 15.0..30.0f64, u in 12.0..30.0f64, v in 0.0..1.0f64) {
        let m = build_discrete_matrices(&ThermalParams::default(), 30.0, 1).unwrap();
        let mut s = RoomState::at(x);
        for _ in 0..steps {
            s = step_room(&m, 0, &[s.x], &s, &input(u, v, 5.0, true), 0.0, RoomKind::TypeS);
            prop_assert_eq!(s.delta_x, 0.0);
        }
    }

    #[test]
    fn warmer_supply_heats_more(x in 15.0..28.0f64, u in 12.0..29.0f64, du in 0.01..1.0f64, v in 0.01..4.5f64, to in -10.0..30.0f64) {
        let m = build_discrete_matrices(&ThermalParams::default(), 600.0, 1).unwrap();
        let s = RoomState::at(x);
        let a = step_room(&m, 0, &[x], &s, &input(u, v, to, false), 0.0, RoomKind::TypeSBar);
        let b = step_room(&m, 0, &[x], &s, &input(u + du, v, to, false), 0.0, RoomKind::TypeSBar);
        prop_assert!(b.x > a.x);
    }

    #[test]
    fn zone_step_equals_room_steps(
        rooms in prop::collection::vec((15.0..30.0f64, -1.0..3.0f64, 0.0..1.0f64, 0.0..1.5f64, any::<bool>(), kind()), 1..6),
        coupling in 0.0..0.05f64,
        u in 12.0..30.0f64,
        to in -10.0..30.0f64,
    ) {
        let n = rooms.len();
        let mut p = ThermalParams::default();
        p.alpha_inter = (0..n).map(|i| (0..n).map(|j| if i == j { 0.0 } else { coupling }).collect()).collect();
        let m = build_discrete_matrices(&p, 30.0, n).unwrap();
        let states: Vec<RoomState> = rooms.iter().map(|r| RoomState { x: r.0, delta_x: r.1, delta_x_prev: 0.0 }).collect();
        let inputs: Vec<RoomInput> = rooms.iter().map(|r| input(u, r.3, to, r.4)).collect();
        let w: Vec<f64> = rooms.iter().map(|r| r.2).collect();
        let kinds: Vec<RoomKind> = rooms.iter().map(|r| r.5).collect();
        let zone_x: Vec<f64> = states.iter().map(|s| s.x).collect();
        let matrix = step_zone(&m, &states, &inputs, &w, &kinds);
        for j in 0..n {
            let scalar = step_room(&m, j, &zone_x, &states[j], &inputs[j], w[j], kinds[j]);
            prop_assert_eq!(matrix[j], scalar);
        }
    }

    #[test]
    fn euler_step_matches_rhs(x in 15.0..30.0f64, u in 12.0..30.0f64, v in 0.0..4.5f64, to in -10.0..30.0f64, occ in any::<bool>(), dx in 0.0..4.0f64, w in 0.0..1.0f64) {
        let p = ThermalParams::default();
        let tau = 30.0;
        let m = build_discrete_matrices(&p, tau, 1).unwrap();
        let inp = input(u, v, to, occ);
        let s = RoomState { x, delta_x: dx, delta_x_prev: 0.0 };
        let next = step_room(&m, 0, &[x], &s, &inp, w, RoomKind::TypeS);
        let expect = x + tau * continuous_rhs(x, &[], u, v, &inp.exo, &p);
        prop_assert!((next.x - expect).abs() < 1e-10);
        prop_assert!((next.delta_x - (dx + tau * spot_rhs(dx, w, &p))).abs() < 1e-12);
    }
}

#[test]
fn heater_lift_per_check_period() {
    // 0.7 kW into 200 kJ/K for 30 s, no decay from zero lift.
    let m = build_discrete_matrices(&ThermalParams::default(), 30.0, 1).unwrap();
    let s = step_room(&m, 0, &[20.0], &RoomState::at(20.0), &input(20.0, 0.0, 20.0, true), 1.0, RoomKind::TypeS);
    assert_abs_diff_eq!(s.delta_x, 0.105, epsilon = 1e-12);
}

#[test]
fn heater_lift_saturates_at_steady_state() {
    let p = ThermalParams::default();
    let m = build_discrete_matrices(&p, 30.0, 1).unwrap();
    let mut s = RoomState::at(20.0);
    for _ in 0..2000 {
        s = step_room(&m, 0, &[s.x], &s, &input(20.0, 0.0, 20.0, false), 1.0, RoomKind::TypeS);
    }
    assert_abs_diff_eq!(s.delta_x, p.q_h / p.alpha_r, epsilon = 1e-6);
}
