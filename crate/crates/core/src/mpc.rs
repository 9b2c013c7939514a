//! Two time-scale MPC for the central HVAC.
//!
//! Every 10 minutes a 24-step (4 h) plan of supply temperature, zone flows,
//! reuse ratio and, for the device-aware variant, device heater duty and fan
//! speed is optimized. The supply temperature can only change on the hour, so
//! its 24 values are tied together in hourly blocks.
//!
//! Variable layout, stage-major for steps `k = 0..N`:
//! `u, v_1..v_m, r, T_m, T_c, (w, v_a) per device room`, followed by the state
//! at `k + 1`: `x` per room, then `(Δx, P)` per device room. Relaxation
//! variables `(ε_l, ε_h)` per room come last.

use serde::{Deserialize, Serialize};
use serde_json::json;
use spotmpc_nlp::{
    solve_multistart_with, NlpProblem, ProductPenalty, QuadExpr, QuadraticModel, Solution, SolverSettings, Status,
};

use crate::comfort::{Season, SimplifiedPmvModel};
use crate::error::{Error, Result};
use crate::scenario::{kappa, Building};
use crate::spot::{fan_speed, nearest_level};
use crate::thermal::{build_discrete_matrices, DiscreteMatrices, RoomKind, RoomState};

pub const HORIZON: usize = 24;
pub const SLOTS_PER_HOUR: usize = 6;
pub const MPC_STEP_S: f64 = 600.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControllerVariant {
    /// Device-aware planning.
    #[serde(rename = "SA")]
    Sa,
    /// No devices installed.
    #[serde(rename = "NS")]
    Ns,
    /// Devices installed, planning unaware of them.
    #[serde(rename = "SU")]
    Su,
}

impl ControllerVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            ControllerVariant::Sa => "SA",
            ControllerVariant::Ns => "NS",
            ControllerVariant::Su => "SU",
        }
    }

    /// Whether the planner models the devices.
    pub fn plans_devices(self) -> bool {
        self == ControllerVariant::Sa
    }

    /// Whether devices are present in the building.
    pub fn has_devices(self) -> bool {
        self != ControllerVariant::Ns
    }
}

impl std::fmt::Display for ControllerVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ControllerVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SA" => Ok(ControllerVariant::Sa),
            "NS" => Ok(ControllerVariant::Ns),
            "SU" => Ok(ControllerVariant::Su),
            _ => Err(Error::invalid(format!("unknown variant '{s}'"))),
        }
    }
}

/// How a zone's supply flow reaches its rooms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowSplit {
    /// Each of the `n` rooms receives `v_i / n`.
    Even,
    /// Each room receives the full zone flow `v_i`.
    Replicated,
}

/// Which slots gate the comfort limits at a planning instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComfortGate {
    /// The state at instant `k+1` is checked when slot `k`, whose controls
    /// produced it, is occupied.
    EndOfSlot,
    /// Also checked at the start of an occupied slot, so rooms are
    /// conditioned before arrivals. Device rooms are checked there with the
    /// fan speed of the slot, since the fan acts at once while the heater
    /// needs time.
    BothEnds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    pub horizon: usize,
    pub tau: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// Aggregate flow bounds (m³/s).
    pub v_min: f64,
    pub v_max: f64,
    pub va_max: f64,
    pub r_max: f64,
    pub eta_h: f64,
    pub eta_c: f64,
    pub theta3: f64,
    pub theta4: f64,
    pub theta5: f64,
    /// Discomfort weight of the relaxed problem.
    pub w_penalty: f64,
    pub gamma: (f64, f64),
    pub kappa: (f64, f64),
    pub pmv: SimplifiedPmvModel,
    /// Back-off applied to every comfort limit (K; PMV limits use `c_t` times this).
    pub comfort_margin: f64,
    pub flow_split: FlowSplit,
    pub comfort_gate: ComfortGate,
    /// Random starts per solve, in addition to any warm start.
    pub starts: usize,
    pub seed: u64,
    pub max_iterations: usize,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig::for_season(Season::Winter)
    }
}

impl MpcConfig {
    pub fn for_season(season: Season) -> Self {
        MpcConfig {
            horizon: HORIZON,
            tau: MPC_STEP_S,
            u_min: 12.0,
            u_max: 30.0,
            v_min: 0.236,
            v_max: 4.5,
            va_max: 1.0,
            r_max: 0.8,
            eta_h: 0.9,
            eta_c: 0.9,
            theta3: 0.094,
            theta4: 0.7,
            theta5: 0.03,
            w_penalty: 1000.0,
            gamma: (18.0, 28.0),
            kappa: kappa(season),
            pmv: SimplifiedPmvModel::for_season(season),
            comfort_margin: 0.1,
            flow_split: FlowSplit::Even,
            comfort_gate: ComfortGate::BothEnds,
            starts: 15,
            seed: 0,
            max_iterations: 500,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.horizon >= 1
            && self.tau > 0.0
            && self.u_min < self.u_max
            && 0.0 <= self.v_min
            && self.v_min < self.v_max
            && self.va_max > 0.0
            && (0.0..=1.0).contains(&self.r_max)
            && self.eta_h > 0.0
            && self.eta_c > 0.0
            && self.w_penalty > 0.0
            && self.gamma.0 < self.gamma.1
            && self.kappa.0 < self.kappa.1
            && self.comfort_margin >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("inconsistent MPC configuration"))
        }
    }

    pub fn theta1(&self, rho: f64, sigma: f64) -> f64 {
        rho * sigma / self.eta_h
    }

    pub fn theta2(&self, rho: f64, sigma: f64) -> f64 {
        rho * sigma / self.eta_c
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            starts: self.starts,
            seed: self.seed,
            max_iterations: self.max_iterations,
            ..SolverSettings::default()
        }
    }
}

/// Position of a planning instant inside the hour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourClock {
    /// Index `ℓ = 6p + q` of the 10-minute slot.
    pub slot: usize,
    /// Supply temperature committed at the start of the current hour.
    pub carried_u: Option<f64>,
}

impl HourClock {
    pub fn p(&self) -> usize {
        self.slot / SLOTS_PER_HOUR
    }

    pub fn q(&self) -> usize {
        self.slot % SLOTS_PER_HOUR
    }
}

/// Partition of the horizon's supply temperatures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HourBlocks {
    /// Steps pinned to the carried value.
    pub pinned: Vec<usize>,
    /// Groups of steps constrained equal.
    pub chains: Vec<Vec<usize>>,
}

impl HourBlocks {
    pub fn block_sizes(&self) -> Vec<usize> {
        let mut s = Vec::new();
        if !self.pinned.is_empty() {
            s.push(self.pinned.len());
        }
        s.extend(self.chains.iter().map(Vec::len));
        s
    }

    pub fn free_values(&self) -> usize {
        self.chains.len()
    }
}

pub fn hour_block_constraints(q: usize, horizon: usize) -> HourBlocks {
    let q = q % SLOTS_PER_HOUR;
    let mut pinned = Vec::new();
    let mut start = 0;
    if q != 0 {
        pinned = (0..(SLOTS_PER_HOUR - q).min(horizon)).collect();
        start = pinned.len();
    }
    let mut chains = Vec::new();
    while start < horizon {
        let end = (start + SLOTS_PER_HOUR).min(horizon);
        chains.push((start..end).collect());
        start = end;
    }
    HourBlocks { pinned, chains }
}

/// Forecast for one 10-minute slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotForecast {
    pub t_o: f64,
    /// Whether each room is occupied at some point of the slot.
    pub occupied: Vec<bool>,
    /// Occupied fraction of the slot per room.
    pub occupied_fraction: Vec<f64>,
}

/// Instantaneous powers of one step (kW).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyTerms {
    pub hvac_heat: f64,
    pub hvac_cool: f64,
    pub hvac_fan: f64,
    pub spot_heat: f64,
    pub spot_fan: f64,
}

impl EnergyTerms {
    pub fn total(&self) -> f64 {
        self.hvac_heat + self.hvac_cool + self.hvac_fan + self.spot_heat + self.spot_fan
    }

    pub fn hvac(&self) -> f64 {
        self.hvac_heat + self.hvac_cool + self.hvac_fan
    }
}

pub fn energy_terms(
    u: f64,
    v: &[f64],
    t_m: f64,
    t_c: f64,
    w: &[f64],
    va: &[f64],
    cfg: &MpcConfig,
    rho: f64,
    sigma: f64,
) -> EnergyTerms {
    let vs: f64 = v.iter().sum();
    EnergyTerms {
        hvac_heat: vs * cfg.theta1(rho, sigma) * (u - t_c),
        hvac_cool: vs * cfg.theta2(rho, sigma) * (t_m - t_c),
        hvac_fan: cfg.theta3 * vs * vs,
        spot_heat: cfg.theta4 * w.iter().sum::<f64>(),
        spot_fan: cfg.theta5 * va.iter().sum::<f64>(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MpcLayout {
    pub horizon: usize,
    pub rooms: usize,
    pub zones: usize,
    /// Rooms that carry device variables, in order.
    pub device_rooms: Vec<usize>,
    pub ctl_len: usize,
    pub stage_len: usize,
    pub relaxed: bool,
}

impl MpcLayout {
    fn new(horizon: usize, rooms: usize, zones: usize, device_rooms: Vec<usize>, relaxed: bool) -> Self {
        let s = device_rooms.len();
        let ctl_len = 4 + zones + 2 * s;
        MpcLayout {
            horizon,
            rooms,
            zones,
            device_rooms,
            ctl_len,
            stage_len: ctl_len + rooms + 2 * s,
            relaxed,
        }
    }

    fn stage(&self, k: usize) -> usize {
        k * self.stage_len
    }

    pub fn u(&self, k: usize) -> usize {
        self.stage(k)
    }

    pub fn v(&self, k: usize, zone: usize) -> usize {
        self.stage(k) + 1 + zone
    }

    pub fn r(&self, k: usize) -> usize {
        self.stage(k) + 1 + self.zones
    }

    pub fn t_m(&self, k: usize) -> usize {
        self.stage(k) + 2 + self.zones
    }

    pub fn t_c(&self, k: usize) -> usize {
        self.stage(k) + 3 + self.zones
    }

    /// Heater duty of device `s` during step `k`.
    pub fn w(&self, k: usize, s: usize) -> usize {
        self.stage(k) + 4 + self.zones + 2 * s
    }

    pub fn va(&self, k: usize, s: usize) -> usize {
        self.w(k, s) + 1
    }

    /// Room temperature at instant `k1 ∈ 1..=N`.
    pub fn x(&self, k1: usize, room: usize) -> usize {
        self.stage(k1 - 1) + self.ctl_len + room
    }

    pub fn dx(&self, k1: usize, s: usize) -> usize {
        self.stage(k1 - 1) + self.ctl_len + self.rooms + 2 * s
    }

    pub fn p(&self, k1: usize, s: usize) -> usize {
        self.dx(k1, s) + 1
    }

    pub fn eps_l(&self, room: usize) -> Option<usize> {
        self.relaxed.then(|| self.horizon * self.stage_len + 2 * room)
    }

    pub fn eps_h(&self, room: usize) -> Option<usize> {
        self.eps_l(room).map(|i| i + 1)
    }

    pub fn num_variables(&self) -> usize {
        self.horizon * self.stage_len + if self.relaxed { 2 * self.rooms } else { 0 }
    }

    /// Human-readable name of variable `i`.
    pub fn name(&self, i: usize) -> String {
        let base = self.horizon * self.stage_len;
        if i >= base {
            let room = (i - base) / 2;
            let side = if (i - base) % 2 == 0 { "eps_l" } else { "eps_h" };
            return format!("{side}[{room}]");
        }
        let k = i / self.stage_len;
        let o = i % self.stage_len;
        let z = self.zones;
        if o == 0 {
            format!("u[{k}]")
        } else if o <= z {
            format!("v[{k}][{}]", o - 1)
        } else if o == z + 1 {
            format!("r[{k}]")
        } else if o == z + 2 {
            format!("T_m[{k}]")
        } else if o == z + 3 {
            format!("T_c[{k}]")
        } else if o < self.ctl_len {
            let s = (o - z - 4) / 2;
            let room = self.device_rooms[s];
            if (o - z - 4) % 2 == 0 {
                format!("w[{k}][{room}]")
            } else {
                format!("va[{k}][{room}]")
            }
        } else if o < self.ctl_len + self.rooms {
            format!("x[{}][{}]", k + 1, o - self.ctl_len)
        } else {
            let s = (o - self.ctl_len - self.rooms) / 2;
            let room = self.device_rooms[s];
            if (o - self.ctl_len - self.rooms) % 2 == 0 {
                format!("dx[{}][{room}]", k + 1)
            } else {
                format!("P[{}][{room}]", k + 1)
            }
        }
    }
}

/// A value that is either a known constant (the measured state) or a
/// decision variable.
#[derive(Debug, Clone, Copy)]
enum Term {
    Const(f64),
    Var(usize),
}

impl Term {
    fn add_scaled(self, e: QuadExpr, a: f64) -> QuadExpr {
        match self {
            Term::Const(c) => e.constant(a * c),
            Term::Var(i) => e.lin(i, a),
        }
    }

    /// Adds `a · self · x_j`.
    fn add_product(self, e: QuadExpr, j: usize, a: f64) -> QuadExpr {
        match self {
            Term::Const(c) => e.lin(j, a * c),
            Term::Var(i) => e.quad(i, j, a),
        }
    }
}

/// Which comfort limit applies to a row and in which units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
enum ComfortRow {
    Pmv,
    Temperature,
}

/// One MPC instance: the optimization model plus what is needed to complete
/// partial starting points.
#[derive(Debug, Clone)]
pub struct MpcProblem {
    pub model: QuadraticModel,
    pub layout: MpcLayout,
    pub blocks: HourBlocks,
    pub variant: ControllerVariant,
    pub clock: HourClock,
    x0: Vec<RoomState>,
    forecasts: Vec<SlotForecast>,
    mats: Vec<DiscreteMatrices>,
    /// Zone and flow share of each room.
    room_zone: Vec<(usize, f64)>,
    room_pos: Vec<usize>,
    /// Per room and instant `k1`: gated comfort row indices `(lower, upper)`.
    comfort_rows: Vec<Vec<(usize, usize)>>,
    load: f64,
    cfg: MpcConfig,
}

/// Builds the MPC instance for the state measured at `clock.slot`.
pub fn build_problem(
    building: &Building,
    states: &[RoomState],
    clock: HourClock,
    forecasts: &[SlotForecast],
    cfg: &MpcConfig,
    variant: ControllerVariant,
    relaxed: bool,
) -> Result<MpcProblem> {
    cfg.validate()?;
    let n = cfg.horizon;
    let nr = building.num_rooms();
    let m = building.num_zones();
    if forecasts.len() != n {
        return Err(Error::invalid(format!("{} forecast slots for a horizon of {n}", forecasts.len())));
    }
    if states.len() != nr || forecasts.iter().any(|f| f.occupied.len() != nr || f.occupied_fraction.len() != nr) {
        return Err(Error::invalid("state or forecast size does not match the building"));
    }
    if clock.q() != 0 && clock.carried_u.is_none() {
        return Err(Error::invalid("mid-hour planning needs the carried supply temperature"));
    }
    let device_rooms: Vec<usize> = if variant.plans_devices() {
        (0..nr).filter(|&j| building.rooms[j].kind == RoomKind::TypeS).collect()
    } else {
        Vec::new()
    };
    let layout = MpcLayout::new(n, nr, m, device_rooms.clone(), relaxed);
    let mut dev_of = vec![None; nr];
    for (s, &j) in device_rooms.iter().enumerate() {
        dev_of[j] = Some(s);
    }
    let p = &building.params;
    let mats: Vec<DiscreteMatrices> = building
        .zones
        .iter()
        .map(|z| build_discrete_matrices(p, cfg.tau, z.len()))
        .collect::<Result<_>>()?;
    let room_zone: Vec<(usize, f64)> = (0..nr)
        .map(|j| {
            let z = building.rooms[j].zone;
            let share = match cfg.flow_split {
                FlowSplit::Even => 1.0 / building.zones[z].len() as f64,
                FlowSplit::Replicated => 1.0,
            };
            (z, share)
        })
        .collect();
    let room_pos: Vec<usize> = (0..nr).map(|j| building.position_in_zone(j)).collect();
    let blocks = hour_block_constraints(clock.q(), n);
    let theta1 = cfg.theta1(p.rho, p.sigma);
    let theta2 = cfg.theta2(p.rho, p.sigma);
    let pmv = cfg.pmv;

    let t_lo = states.iter().map(|s| s.x).fold(cfg.gamma.0, f64::min);
    let t_hi = states.iter().map(|s| s.x).fold(cfg.gamma.1, f64::max);
    let to_lo = forecasts.iter().map(|f| f.t_o).fold(f64::INFINITY, f64::min);
    let to_hi = forecasts.iter().map(|f| f.t_o).fold(f64::NEG_INFINITY, f64::max);
    let tm_lo = t_lo.min(to_lo) - 1.0;
    let tm_hi = t_hi.max(to_hi) + 1.0;

    let mut model = QuadraticModel::new();
    for k in 0..n {
        let occ = &forecasts[k].occupied;
        let (ulo, uhi) = if blocks.pinned.contains(&k) {
            let u = clock.carried_u.unwrap_or(cfg.u_min);
            (u, u)
        } else {
            (cfg.u_min, cfg.u_max)
        };
        model.add_variable(ulo, uhi);
        for _ in 0..m {
            model.add_variable(0.0, cfg.v_max);
        }
        model.add_variable(0.0, cfg.r_max);
        model.add_variable(tm_lo, tm_hi);
        model.add_variable(tm_lo.min(cfg.u_min), cfg.u_max);
        for &j in &device_rooms {
            let on = if occ[j] { 1.0 } else { 0.0 };
            model.add_variable(0.0, on);
            model.add_variable(0.0, on * cfg.va_max);
        }
        for _ in 0..nr {
            model.add_variable(cfg.gamma.0, cfg.gamma.1);
        }
        for _ in &device_rooms {
            model.add_variable(0.0, 2.0 * p.q_h / p.alpha_r);
            model.add_variable(-10.0, 10.0);
        }
    }
    if relaxed {
        for _ in 0..nr {
            model.add_variable(0.0, 10.0);
            model.add_variable(0.0, 10.0);
        }
    }
    debug_assert_eq!(model.lower.len(), layout.num_variables());

    // Objective (kJ over the horizon).
    let mut obj = QuadExpr::new();
    for k in 0..n {
        let (u, r_tm, tc) = (layout.u(k), layout.t_m(k), layout.t_c(k));
        let tau = cfg.tau;
        for i in 0..m {
            let v = layout.v(k, i);
            obj = obj
                .quad(v, u, tau * theta1)
                .quad(v, tc, -tau * theta1)
                .quad(v, r_tm, tau * theta2)
                .quad(v, tc, -tau * theta2);
            for i2 in 0..m {
                obj = obj.quad(v, layout.v(k, i2), tau * cfg.theta3);
            }
        }
        for s in 0..device_rooms.len() {
            obj = obj.lin(layout.w(k, s), tau * cfg.theta4).lin(layout.va(k, s), tau * cfg.theta5);
        }
    }
    model.objective = obj;
    if relaxed {
        model.penalty = ProductPenalty {
            weight: cfg.w_penalty,
            groups: (0..nr)
                .map(|j| vec![layout.eps_l(j).unwrap(), layout.eps_h(j).unwrap()])
                .collect(),
        };
    }

    let x_term = |k: usize, j: usize| {
        if k == 0 {
            Term::Const(states[j].x)
        } else {
            Term::Var(layout.x(k, j))
        }
    };
    let dx_term = |k: usize, s: usize| {
        if k == 0 {
            Term::Const(states[device_rooms[s]].delta_x)
        } else {
            Term::Var(layout.dx(k, s))
        }
    };

    // Hour blocks.
    for chain in &blocks.chains {
        for w in chain.windows(2) {
            model.add_row(QuadExpr::new().lin(layout.u(w[0]), 1.0).lin(layout.u(w[1]), -1.0), 0.0, 0.0);
        }
    }

    for k in 0..n {
        let f = &forecasts[k];
        // Room dynamics.
        for j in 0..nr {
            let (z, share) = room_zone[j];
            let mz = &mats[z];
            let pos = room_pos[j];
            let v = layout.v(k, z);
            let mut e = QuadExpr::new().lin(layout.x(k + 1, j), 1.0);
            for (l_pos, &l) in building.zones[z].iter().enumerate() {
                e = x_term(k, l).add_scaled(e, -mz.a0[(pos, l_pos)]);
            }
            e = x_term(k, j).add_product(e, v, -mz.a1[(pos, pos)] * share);
            e = e.quad(layout.u(k), v, -mz.b[pos] * share);
            e = e.constant(-mz.d1[pos] * f.t_o - mz.d2[(pos, pos)] * building.internal_load * f.occupied_fraction[j]);
            model.add_row(e, 0.0, 0.0);
        }
        // Device region and PMV.
        for (s, &j) in device_rooms.iter().enumerate() {
            let mz = &mats[room_zone[j].0];
            let pos = room_pos[j];
            let e = QuadExpr::new().lin(layout.dx(k + 1, s), 1.0).lin(layout.w(k, s), -mz.b_tilde[(pos, pos)]);
            let e = dx_term(k, s).add_scaled(e, -mz.a0_tilde[(pos, pos)]);
            model.add_row(e, 0.0, 0.0);
            let va = layout.va(k, s);
            let e = QuadExpr::new()
                .lin(layout.p(k + 1, s), 1.0)
                .lin(layout.x(k + 1, j), -pmv.c_t)
                .lin(layout.dx(k + 1, s), -pmv.c_t)
                .quad(va, va, -pmv.c_v2)
                .lin(va, -pmv.c_v1)
                .constant(-pmv.c_0);
            model.add_row(e, 0.0, 0.0);
        }
        // Mixer: T_m = r·mean(x) + (1 − r)·T_o.
        let mut e = QuadExpr::new().lin(layout.t_m(k), 1.0).lin(layout.r(k), f.t_o).constant(-f.t_o);
        let r = layout.r(k);
        for j in 0..nr {
            e = x_term(k, j).add_product(e, r, -1.0 / nr as f64);
        }
        model.add_row(e, 0.0, 0.0);
        model.add_row(QuadExpr::new().lin(layout.t_c(k), 1.0).lin(layout.t_m(k), -1.0), f64::NEG_INFINITY, 0.0);
        model.add_row(QuadExpr::new().lin(layout.u(k), 1.0).lin(layout.t_c(k), -1.0), 0.0, f64::INFINITY);
        let mut e = QuadExpr::new();
        for i in 0..m {
            e = e.lin(layout.v(k, i), 1.0);
        }
        model.add_row(e, cfg.v_min, cfg.v_max);
    }

    // Comfort.
    let mut comfort_rows = vec![Vec::with_capacity(n); nr];
    for j in 0..nr {
        let room = &building.rooms[j];
        let kind = if room.kind == RoomKind::TypeSBar { ComfortRow::Temperature } else { ComfortRow::Pmv };
        let (lo, hi) = match kind {
            ComfortRow::Pmv => {
                let b = pmv.c_t * cfg.comfort_margin;
                (room.band.lo + b, room.band.hi - b)
            }
            ComfortRow::Temperature => (cfg.kappa.0 + cfg.comfort_margin, cfg.kappa.1 - cfg.comfort_margin),
        };
        for k1 in 1..=n {
            // Device rooms get their own start-of-slot rows below.
            let gated = forecasts[k1 - 1].occupied[j]
                || (cfg.comfort_gate == ComfortGate::BothEnds && dev_of[j].is_none() && k1 < n && forecasts[k1].occupied[j]);
            let base = match (kind, dev_of[j]) {
                (ComfortRow::Pmv, Some(s)) => QuadExpr::new().lin(layout.p(k1, s), 1.0),
                (ComfortRow::Pmv, None) => QuadExpr::new().lin(layout.x(k1, j), pmv.c_t).constant(pmv.c_0),
                (ComfortRow::Temperature, _) => QuadExpr::new().lin(layout.x(k1, j), 1.0),
            };
            let mut lower = base.clone();
            let mut upper = base;
            if let (Some(el), Some(eh)) = (layout.eps_l(j), layout.eps_h(j)) {
                lower = lower.lin(el, 1.0);
                upper = upper.lin(eh, -1.0);
            }
            let (l, h) = if gated { (lo, hi) } else { (f64::NEG_INFINITY, f64::INFINITY) };
            let rl = model.add_row(lower, l, f64::INFINITY);
            let rh = model.add_row(upper, f64::NEG_INFINITY, h);
            comfort_rows[j].push((rl, rh));
        }
        if let (Some(s), ComfortGate::BothEnds) = (dev_of[j], cfg.comfort_gate) {
            for k1 in 1..n {
                let va = layout.va(k1, s);
                let base = QuadExpr::new()
                    .lin(layout.x(k1, j), pmv.c_t)
                    .lin(layout.dx(k1, s), pmv.c_t)
                    .quad(va, va, pmv.c_v2)
                    .lin(va, pmv.c_v1)
                    .constant(pmv.c_0);
                let mut lower = base.clone();
                let mut upper = base;
                if let (Some(el), Some(eh)) = (layout.eps_l(j), layout.eps_h(j)) {
                    lower = lower.lin(el, 1.0);
                    upper = upper.lin(eh, -1.0);
                }
                let (l, h) = if forecasts[k1].occupied[j] { (lo, hi) } else { (f64::NEG_INFINITY, f64::INFINITY) };
                let rl = model.add_row(lower, l, f64::INFINITY);
                let rh = model.add_row(upper, f64::NEG_INFINITY, h);
                comfort_rows[j].push((rl, rh));
            }
        }
        // Rest of a device room stays within the wide limits while occupied.
        if let Some(s) = dev_of[j] {
            let mz = &mats[room_zone[j].0];
            let d3 = mz.d3[(room_pos[j], room_pos[j])];
            for k1 in 1..=n {
                let gated = forecasts[k1 - 1].occupied[j];
                let e = QuadExpr::new().lin(layout.x(k1, j), 1.0);
                let e = dx_term(k1 - 1, s).add_scaled(e, d3);
                let (l, h) = if gated { cfg.gamma } else { (f64::NEG_INFINITY, f64::INFINITY) };
                model.add_row(e, l, h);
            }
        }
    }
    model.finalize();

    Ok(MpcProblem {
        model,
        layout,
        blocks,
        variant,
        clock,
        x0: states.to_vec(),
        forecasts: forecasts.to_vec(),
        mats,
        room_zone,
        room_pos,
        comfort_rows,
        load: building.internal_load,
        cfg: cfg.clone(),
    })
}

impl MpcProblem {
    /// Objective without the relaxation penalty (kJ).
    pub fn energy_objective(&self, z: &[f64]) -> f64 {
        self.model.objective.eval(z)
    }

    /// Shifts a previous solution one step forward for use as a warm start.
    pub fn shifted_start(&self, previous: &[f64]) -> Option<Vec<f64>> {
        let l = &self.layout;
        if previous.len() != l.num_variables() {
            return None;
        }
        let mut z = previous.to_vec();
        for k in 0..l.horizon - 1 {
            let (a, b) = (l.stage(k), l.stage(k + 1));
            z.copy_within(b..b + l.stage_len, a);
        }
        self.complete(&mut z);
        Some(z)
    }

    /// Makes a point consistent: hour blocks, clamped controls, states
    /// obtained by simulating the planning model and the smallest
    /// relaxation that covers the resulting comfort violations.
    fn complete(&self, z: &mut [f64]) {
        let l = &self.layout;
        let cfg = &self.cfg;
        let lo = &self.model.lower;
        let hi = &self.model.upper;
        for i in 0..z.len() {
            z[i] = z[i].clamp(lo[i], hi[i]);
        }
        for chain in &self.blocks.chains {
            let u = z[l.u(chain[0])];
            for &k in chain {
                z[l.u(k)] = u;
            }
        }
        let nr = l.rooms;
        let mut x: Vec<f64> = self.x0.iter().map(|s| s.x).collect();
        let mut dx: Vec<f64> = l.device_rooms.iter().map(|&j| self.x0[j].delta_x).collect();
        for k in 0..l.horizon {
            let f = &self.forecasts[k];
            let vs: f64 = (0..l.zones).map(|i| z[l.v(k, i)]).sum();
            if vs < cfg.v_min {
                let add = (cfg.v_min - vs) / l.zones as f64;
                for i in 0..l.zones {
                    z[l.v(k, i)] += add;
                }
            } else if vs > cfg.v_max {
                for i in 0..l.zones {
                    z[l.v(k, i)] *= cfg.v_max / vs;
                }
            }
            let mean = x.iter().sum::<f64>() / nr as f64;
            let r = z[l.r(k)];
            let tm = r * mean + (1.0 - r) * f.t_o;
            z[l.t_m(k)] = tm;
            let u = z[l.u(k)];
            z[l.t_c(k)] = u.min(tm);
            let mut next = vec![0.0; nr];
            for j in 0..nr {
                let (zone, share) = self.room_zone[j];
                let mz = &self.mats[zone];
                let pos = self.room_pos[j];
                let v = z[l.v(k, zone)] * share;
                let mut acc = 0.0;
                for (l_pos, xl) in self.zone_members(zone).map(|r| (self.room_pos[r], x[r])) {
                    acc += mz.a0[(pos, l_pos)] * xl;
                }
                acc += mz.a1[(pos, pos)] * x[j] * v + mz.b[pos] * u * v;
                acc += mz.d1[pos] * f.t_o + mz.d2[(pos, pos)] * self.load * f.occupied_fraction[j];
                next[j] = acc;
            }
            for (s, &j) in l.device_rooms.iter().enumerate() {
                let mz = &self.mats[self.room_zone[j].0];
                let pos = self.room_pos[j];
                dx[s] = mz.a0_tilde[(pos, pos)] * dx[s] + mz.b_tilde[(pos, pos)] * z[l.w(k, s)];
                z[l.dx(k + 1, s)] = dx[s];
                z[l.p(k + 1, s)] = self.cfg.pmv.eval(next[j] + dx[s], z[l.va(k, s)]);
            }
            for j in 0..nr {
                z[l.x(k + 1, j)] = next[j];
            }
            x = next;
        }
        if l.relaxed {
            let mut probe = vec![0.0; self.model.num_rows()];
            for j in 0..nr {
                z[l.eps_l(j).unwrap()] = 0.0;
                z[l.eps_h(j).unwrap()] = 0.0;
            }
            self.model.constraints(z, &mut probe);
            for j in 0..nr {
                let (mut el, mut eh) = (0.0f64, 0.0f64);
                for &(rl, rh) in &self.comfort_rows[j] {
                    el = el.max(self.model.row_lower[rl] - probe[rl]);
                    eh = eh.max(probe[rh] - self.model.row_upper[rh]);
                }
                z[l.eps_l(j).unwrap()] = el.clamp(0.0, 10.0);
                z[l.eps_h(j).unwrap()] = eh.clamp(0.0, 10.0);
            }
        }
    }

    fn zone_members(&self, zone: usize) -> impl Iterator<Item = usize> + '_ {
        self.room_zone.iter().enumerate().filter(move |(_, (z, _))| *z == zone).map(|(j, _)| j)
    }

    /// Largest absolute residual of each constraint row at `z`.
    pub fn residuals(&self, z: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; self.model.num_rows()];
        self.model.constraints(z, &mut c);
        c.iter()
            .enumerate()
            .map(|(i, &v)| (self.model.row_lower[i] - v).max(v - self.model.row_upper[i]).max(0.0))
            .collect()
    }

    /// Debug dump: variable layout, bounds and, if a point is given, values
    /// and row residuals.
    pub fn dump(&self, point: Option<&[f64]>) -> serde_json::Value {
        let vars: Vec<serde_json::Value> = (0..self.layout.num_variables())
            .map(|i| {
                let mut v = json!({
                    "name": self.layout.name(i),
                    "lower": finite_or_null(self.model.lower[i]),
                    "upper": finite_or_null(self.model.upper[i]),
                });
                if let Some(z) = point {
                    v["value"] = json!(z[i]);
                }
                v
            })
            .collect();
        let mut out = json!({
            "variant": self.variant.as_str(),
            "slot": self.clock.slot,
            "relaxed": self.layout.relaxed,
            "variables": vars,
            "rows": self.model.num_rows(),
            "row_lower": self.model.row_lower.iter().map(|&v| finite_or_null(v)).collect::<Vec<_>>(),
            "row_upper": self.model.row_upper.iter().map(|&v| finite_or_null(v)).collect::<Vec<_>>(),
        });
        if let Some(z) = point {
            out["residuals"] = json!(self.residuals(z));
            out["objective"] = json!(self.objective(z));
        }
        out
    }

    /// Number of supply-temperature values that are free in this instance.
    pub fn free_ahu_values(&self) -> usize {
        self.blocks.free_values()
    }
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        serde_json::Value::Null
    }
}

impl NlpProblem for MpcProblem {
    fn num_variables(&self) -> usize {
        self.model.num_variables()
    }
    fn num_constraints(&self) -> usize {
        self.model.num_constraints()
    }
    fn variable_bounds(&self, lower: &mut [f64], upper: &mut [f64]) {
        self.model.variable_bounds(lower, upper)
    }
    fn constraint_bounds(&self, lower: &mut [f64], upper: &mut [f64]) {
        self.model.constraint_bounds(lower, upper)
    }
    fn objective(&self, x: &[f64]) -> f64 {
        self.model.objective(x)
    }
    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        self.model.gradient(x, g)
    }
    fn constraints(&self, x: &[f64], c: &mut [f64]) {
        self.model.constraints(x, c)
    }
    fn jacobian_structure(&self) -> Vec<(usize, usize)> {
        self.model.jacobian_structure()
    }
    fn jacobian_values(&self, x: &[f64], values: &mut [f64]) {
        self.model.jacobian_values(x, values)
    }
    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        self.model.hessian_structure()
    }
    fn hessian_values(&self, x: &[f64], obj_factor: f64, lambda: &[f64], values: &mut [f64]) {
        self.model.hessian_values(x, obj_factor, lambda, values)
    }
    fn complete_start(&self, x: &mut [f64]) {
        self.complete(x)
    }
}

/// Commands to implement for the next 10 minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    /// Supply temperature to apply; a new value only when `u_updated`.
    pub u: f64,
    pub u_updated: bool,
    pub v: Vec<f64>,
    pub r: f64,
    /// Predicted first-step heater duty per room (0 where no device variable).
    pub w: Vec<f64>,
    /// Predicted first-step fan speed per room, rounded to a device level.
    pub va: Vec<f64>,
    /// Predicted room temperatures at instants 1..=N.
    pub predicted_x: Vec<Vec<f64>>,
    pub objective: f64,
    pub status: String,
    pub relaxed: bool,
}

pub fn extract_plan(problem: &MpcProblem, solution: &Solution) -> Result<Plan> {
    if !solution.status.is_feasible() {
        return Err(Error::MpcInfeasible {
            step: problem.clock.slot,
            violation: solution.violation,
        });
    }
    let l = &problem.layout;
    let z = &solution.x;
    let q0 = problem.clock.q() == 0;
    let u = if q0 {
        z[l.u(0)]
    } else {
        problem.clock.carried_u.unwrap_or(z[l.u(0)])
    };
    let mut w = vec![0.0; l.rooms];
    let mut va = vec![0.0; l.rooms];
    for (s, &j) in l.device_rooms.iter().enumerate() {
        w[j] = z[l.w(0, s)].clamp(0.0, 1.0);
        va[j] = fan_speed(nearest_level(z[l.va(0, s)]));
    }
    Ok(Plan {
        u,
        u_updated: q0,
        v: (0..l.zones).map(|i| z[l.v(0, i)].max(0.0)).collect(),
        r: z[l.r(0)].clamp(0.0, problem.cfg.r_max),
        w,
        va,
        predicted_x: (1..=l.horizon).map(|k| (0..l.rooms).map(|j| z[l.x(k, j)]).collect()).collect(),
        objective: problem.energy_objective(z),
        status: solution.status.as_str().to_string(),
        relaxed: l.relaxed,
    })
}

/// Result of one planning step.
#[derive(Debug, Clone)]
pub struct MpcOutcome {
    pub plan: Plan,
    pub solution: Solution,
    pub problem: MpcProblem,
}

/// Solves the strict problem and falls back to the relaxed one when it is
/// infeasible; `always_relax` skips the strict attempt.
pub fn solve_mpc(
    building: &Building,
    states: &[RoomState],
    clock: HourClock,
    forecasts: &[SlotForecast],
    cfg: &MpcConfig,
    variant: ControllerVariant,
    always_relax: bool,
    warm: Option<&[f64]>,
) -> Result<MpcOutcome> {
    let settings = cfg.solver_settings();
    let mut last_violation = f64::INFINITY;
    let attempts: &[bool] = if always_relax { &[true] } else { &[false, true] };
    for &relaxed in attempts {
        let problem = build_problem(building, states, clock, forecasts, cfg, variant, relaxed)?;
        let mut extra = Vec::new();
        if let Some(prev) = warm {
            if let Some(z) = problem.shifted_start(prev) {
                extra.push(z);
            } else if let Some(z) = problem.relaxed_to_strict(prev) {
                extra.push(z);
            }
        }
        let sol = solve_multistart_with(&problem, &settings, &extra)?;
        if sol.status.is_feasible() {
            let plan = extract_plan(&problem, &sol)?;
            return Ok(MpcOutcome {
                plan,
                solution: sol,
                problem,
            });
        }
        last_violation = sol.violation;
    }
    Err(Error::MpcInfeasible {
        step: clock.slot,
        violation: last_violation,
    })
}

impl MpcProblem {
    /// Adapts a warm start whose layout differs only by relaxation variables.
    fn relaxed_to_strict(&self, previous: &[f64]) -> Option<Vec<f64>> {
        let core = self.layout.horizon * self.layout.stage_len;
        if previous.len() < core {
            return None;
        }
        let mut z = vec![0.0; self.layout.num_variables()];
        z[..core].copy_from_slice(&previous[..core]);
        self.shifted_start(&z)
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn forecasts(&self) -> &[SlotForecast] {
        &self.forecasts
    }

    pub fn initial_states(&self) -> &[RoomState] {
        &self.x0
    }

    /// Whether `status` came from a converged local solve.
    pub fn is_optimal(status: Status) -> bool {
        status == Status::OptimalLocal
    }
}
