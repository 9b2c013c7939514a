//! Closed-loop simulation of one day.
//!
//! Rooms are stepped every 30 s with the bilinear model; devices react every
//! 30 s; the MPC re-plans every 10 minutes with exact forecasts taken from
//! the trace, and the supply temperature is committed once per hour.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::comfort::ComfortBand;
use crate::error::{Error, Result};
use crate::mpc::{energy_terms, solve_mpc, ControllerVariant, EnergyTerms, HourClock, MpcConfig, SlotForecast};
use crate::scenario::{Building, ComfortSpec, Scenario};
use crate::spot::{react, SpotDeviceState, SpotPolicyParams, CHECK_PERIOD_S};
use crate::thermal::{build_discrete_matrices, step_zone, DiscreteMatrices, Exogenous, RoomInput, RoomKind, RoomState};
use crate::trace::{Trace, SAMPLES_PER_DAY, SAMPLES_PER_SLOT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub mpc: MpcConfig,
    /// Random starts of every re-plan after the first one, besides the
    /// shifted previous solution. The first plan uses `mpc.starts`.
    pub replan_starts: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            mpc: MpcConfig::default(),
            replan_starts: 1,
        }
    }
}

impl SimConfig {
    pub fn for_scenario(scenario: &Scenario) -> Self {
        SimConfig {
            mpc: MpcConfig::for_season(scenario.season),
            ..SimConfig::default()
        }
    }
}

/// Discomfort of one occupant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserDiscomfort {
    pub room: String,
    pub occupied_intervals: usize,
    pub discomfort_intervals: usize,
    /// Share of occupied intervals outside the band; 0 for a room never occupied.
    pub d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MpcStats {
    pub solves: usize,
    pub relaxed: usize,
    /// Solves that stopped short of local optimality.
    pub suboptimal: usize,
    pub iterations: usize,
}

/// AHU commands and powers of one 30 s interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Start of the interval (s since midnight).
    pub t: f64,
    pub u: f64,
    pub v: Vec<f64>,
    pub r: f64,
    /// Powers over the interval (kW).
    pub power: EnergyTerms,
}

/// State of one room at the end of a 30 s interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomRecord {
    pub x: f64,
    pub x1: f64,
    pub x2: f64,
    pub pmv: f64,
    /// Flow into the room (m³/s).
    pub v: f64,
    /// Heater duty over the interval.
    pub w: f64,
    /// Fan speed over the interval (m/s).
    pub va: f64,
    pub occupied: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Timeline {
    pub steps: Vec<StepRecord>,
    /// Per interval, one record per room.
    pub rooms: Vec<Vec<RoomRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayResult {
    pub scenario: Scenario,
    pub variant: ControllerVariant,
    pub date: String,
    /// Energy per component (kWh).
    pub energy: EnergyTerms,
    pub total_kwh: f64,
    pub discomfort: Vec<UserDiscomfort>,
    /// Mean of the per-user discomfort.
    pub mean_discomfort: f64,
    /// Time-averaged supply temperature (°C).
    pub mean_supply_temp: f64,
    pub mpc: MpcStats,
    #[serde(skip)]
    pub timeline: Timeline,
}

impl DayResult {
    /// Component energies re-summed from the timeline (kWh).
    pub fn energy_from_timeline(&self) -> EnergyTerms {
        let h = CHECK_PERIOD_S / 3600.0;
        let mut e = EnergyTerms::default();
        for s in &self.timeline.steps {
            e.hvac_heat += s.power.hvac_heat * h;
            e.hvac_cool += s.power.hvac_cool * h;
            e.hvac_fan += s.power.hvac_fan * h;
            e.spot_heat += s.power.spot_heat * h;
            e.spot_fan += s.power.spot_fan * h;
        }
        e
    }

    /// Writes `t,room,x,x1,x2,pmv,u,v,r,w,va`, one row per interval and room.
    pub fn write_timeline_csv<W: Write>(&self, w: W, room_ids: &[String]) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "room", "x", "x1", "x2", "pmv", "u", "v", "r", "w", "va"])?;
        for (step, rooms) in self.timeline.steps.iter().zip(&self.timeline.rooms) {
            for (id, rec) in room_ids.iter().zip(rooms) {
                wr.write_record([
                    format!("{}", step.t),
                    id.clone(),
                    format!("{}", rec.x),
                    format!("{}", rec.x1),
                    format!("{}", rec.x2),
                    format!("{}", rec.pmv),
                    format!("{}", step.u),
                    format!("{}", rec.v),
                    format!("{}", step.r),
                    format!("{}", rec.w),
                    format!("{}", rec.va),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Per-user discomfort from aligned PMV and occupancy series.
///
/// `pmv[i][t]` and `occupied[i][t]` describe user `i` in interval `t`.
pub fn compute_discomfort(pmv: &[Vec<f64>], occupied: &[Vec<bool>], bands: &[ComfortBand]) -> Result<(Vec<f64>, f64)> {
    if pmv.len() != occupied.len() || pmv.len() != bands.len() {
        return Err(Error::invalid("discomfort inputs cover different users"));
    }
    let mut d = Vec::with_capacity(pmv.len());
    for ((p, o), band) in pmv.iter().zip(occupied).zip(bands) {
        if p.len() != o.len() {
            return Err(Error::invalid("PMV and occupancy timelines are not aligned"));
        }
        let occ = o.iter().filter(|&&b| b).count();
        let bad = p.iter().zip(o).filter(|&(&v, &b)| b && !band.contains(v)).count();
        d.push(if occ == 0 { 0.0 } else { bad as f64 / occ as f64 });
    }
    let mean = if d.is_empty() { 0.0 } else { d.iter().sum::<f64>() / d.len() as f64 };
    Ok((d, mean))
}

/// Forecast of slot `slot` from the trace.
fn slot_forecast(trace: &Trace, rooms: &[usize], slot: usize) -> SlotForecast {
    let from = slot * SAMPLES_PER_SLOT;
    let to = from + SAMPLES_PER_SLOT;
    let t_o = trace.weather[from..to].iter().sum::<f64>() / SAMPLES_PER_SLOT as f64;
    SlotForecast {
        t_o,
        occupied: rooms.iter().map(|&j| trace.occupancy[j][from..to].iter().any(|&b| b)).collect(),
        occupied_fraction: rooms.iter().map(|&j| trace.occupied_fraction(j, from, to)).collect(),
    }
}

/// One simulated building driven by the shared planner.
struct Plant {
    variant: ControllerVariant,
    states: Vec<RoomState>,
    devices: Vec<Option<SpotDeviceState>>,
    energy: EnergyTerms,
    occupied: Vec<usize>,
    uncomfortable: Vec<usize>,
    u_sum: f64,
    timeline: Timeline,
}

/// Simulates one day under `variant`.
pub fn run_closed_loop(scenario: &Scenario, trace: &Trace, variant: ControllerVariant, cfg: &SimConfig) -> Result<DayResult> {
    let mut r = run_variants(scenario, trace, &[variant], cfg)?;
    Ok(r.remove(0))
}

/// Simulates several variants on the same day. NS and SU share one planner:
/// devices do not change the room temperatures the planner observes, so both
/// receive the same HVAC commands.
pub fn run_variants(
    scenario: &Scenario,
    trace: &Trace,
    variants: &[ControllerVariant],
    cfg: &SimConfig,
) -> Result<Vec<DayResult>> {
    let building = scenario.building();
    let ids: Vec<String> = building.rooms.iter().map(|r| r.id.clone()).collect();
    trace.validate(&ids)?;
    let cols: Vec<usize> = ids.iter().map(|id| trace.room_index(id).expect("validated")).collect();

    let mut results: Vec<Option<DayResult>> = vec![None; variants.len()];
    let sa: Vec<usize> = (0..variants.len()).filter(|&i| variants[i] == ControllerVariant::Sa).collect();
    let ns: Vec<usize> = (0..variants.len()).filter(|&i| variants[i] != ControllerVariant::Sa).collect();
    for (planner, group) in [(ControllerVariant::Sa, sa), (ControllerVariant::Ns, ns)] {
        if group.is_empty() {
            continue;
        }
        let plant_variants: Vec<ControllerVariant> = group.iter().map(|&i| variants[i]).collect();
        let days = simulate(scenario, &building, trace, &cols, planner, &plant_variants, cfg)?;
        for (i, d) in group.into_iter().zip(days) {
            results[i] = Some(d);
        }
    }
    Ok(results.into_iter().map(|r| r.expect("every variant simulated")).collect())
}

fn simulate(
    scenario: &Scenario,
    building: &Building,
    trace: &Trace,
    cols: &[usize],
    planner: ControllerVariant,
    plant_variants: &[ControllerVariant],
    cfg: &SimConfig,
) -> Result<Vec<DayResult>> {
    let nr = building.num_rooms();
    let p = &building.params;
    let model = scenario.pmv_model();
    let always_relax = scenario.comfort == ComfortSpec::Heterogeneous;
    let physics: Vec<DiscreteMatrices> = building
        .zones
        .iter()
        .map(|z| build_discrete_matrices(p, CHECK_PERIOD_S, z.len()))
        .collect::<Result<_>>()?;
    let share: Vec<f64> = (0..nr)
        .map(|j| match cfg.mpc.flow_split {
            crate::mpc::FlowSplit::Even => 1.0 / building.zones[building.rooms[j].zone].len() as f64,
            crate::mpc::FlowSplit::Replicated => 1.0,
        })
        .collect();
    let d3: Vec<f64> = (0..nr)
        .map(|j| {
            let z = building.rooms[j].zone;
            let pos = building.position_in_zone(j);
            physics[z].d3[(pos, pos)]
        })
        .collect();
    let policies: Vec<SpotPolicyParams> = building
        .rooms
        .iter()
        .map(|r| SpotPolicyParams { band: r.band, model })
        .collect();

    let x0 = scenario.initial_temperature();
    let mut plants: Vec<Plant> = plant_variants
        .iter()
        .map(|&v| Plant {
            variant: v,
            states: vec![RoomState::at(x0); nr],
            devices: (0..nr)
                .map(|j| (v.has_devices() && building.has_device(j)).then(SpotDeviceState::default))
                .collect(),
            energy: EnergyTerms::default(),
            occupied: vec![0; nr],
            uncomfortable: vec![0; nr],
            u_sum: 0.0,
            timeline: Timeline::default(),
        })
        .collect();

    let slots = SAMPLES_PER_DAY / SAMPLES_PER_SLOT;
    let horizon = cfg.mpc.horizon;
    let mut stats = MpcStats::default();
    let mut warm: Option<Vec<f64>> = None;
    let mut carried_u: Option<f64> = None;
    for slot in 0..slots {
        let forecasts: Vec<SlotForecast> = (slot..slot + horizon).map(|k| slot_forecast(trace, cols, k)).collect();
        let clock = HourClock { slot, carried_u };
        let mut mpc_cfg = cfg.mpc.clone();
        if warm.is_some() {
            mpc_cfg.starts = cfg.replan_starts;
            mpc_cfg.seed = cfg.mpc.seed.wrapping_add(slot as u64);
        }
        let states = plants[0].states.clone();
        let outcome = match solve_mpc(building, &states, clock, &forecasts, &mpc_cfg, planner, always_relax, warm.as_deref()) {
            Ok(o) => o,
            // A poor warm start can strand the few re-plan starts; retry with
            // the full start budget before giving up.
            Err(_) if warm.is_some() => solve_mpc(building, &states, clock, &forecasts, &cfg.mpc, planner, always_relax, None)?,
            Err(e) => return Err(e),
        };
        stats.solves += 1;
        stats.iterations += outcome.solution.iterations;
        stats.relaxed += usize::from(outcome.plan.relaxed);
        stats.suboptimal += usize::from(outcome.solution.status != spotmpc_nlp::Status::OptimalLocal);
        let plan = outcome.plan;
        if clock.q() == 0 {
            carried_u = Some(plan.u);
        }
        let u = carried_u.unwrap_or(plan.u);
        warm = Some(outcome.solution.x);

        for plant in &mut plants {
            for dev in plant.devices.iter_mut().flatten() {
                dev.start_slot();
            }
        }
        for t in slot * SAMPLES_PER_SLOT..(slot + 1) * SAMPLES_PER_SLOT {
            let t_o = trace.weather[t];
            for plant in &mut plants {
                step_plant(plant, building, &physics, &policies, &share, &d3, trace, cols, t, t_o, u, &plan.v, plan.r, &cfg.mpc);
            }
        }
    }

    let date = trace.start.date_naive().to_string();
    plants
        .into_iter()
        .map(|plant| {
            let mut discomfort = Vec::with_capacity(nr);
            for j in 0..nr {
                let occ = plant.occupied[j];
                let bad = plant.uncomfortable[j];
                discomfort.push(UserDiscomfort {
                    room: building.rooms[j].id.clone(),
                    occupied_intervals: occ,
                    discomfort_intervals: bad,
                    d: if occ == 0 { 0.0 } else { bad as f64 / occ as f64 },
                });
            }
            let mean_discomfort = discomfort.iter().map(|d| d.d).sum::<f64>() / nr as f64;
            Ok(DayResult {
                scenario: *scenario,
                variant: plant.variant,
                date: date.clone(),
                total_kwh: plant.energy.total(),
                energy: plant.energy,
                discomfort,
                mean_discomfort,
                mean_supply_temp: plant.u_sum / SAMPLES_PER_DAY as f64,
                mpc: stats,
                timeline: plant.timeline,
            })
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn step_plant(
    plant: &mut Plant,
    building: &Building,
    physics: &[DiscreteMatrices],
    policies: &[SpotPolicyParams],
    share: &[f64],
    d3: &[f64],
    trace: &Trace,
    cols: &[usize],
    t: usize,
    t_o: f64,
    u: f64,
    v: &[f64],
    r: f64,
    cfg: &MpcConfig,
) {
    let nr = building.num_rooms();
    let p = &building.params;
    let occupied: Vec<bool> = cols.iter().map(|&c| trace.occupancy[c][t]).collect();

    // Devices measure and react before the interval starts.
    let mut w = vec![0.0; nr];
    let mut va = vec![0.0; nr];
    for j in 0..nr {
        if let Some(dev) = plant.devices[j].as_mut() {
            let (next, action) = react(dev, plant.states[j].x2(), occupied[j], &policies[j]);
            *dev = next;
            w[j] = if action.heater_on { 1.0 } else { 0.0 };
            va[j] = action.fan_speed;
        }
    }

    let t_e = plant.states.iter().map(|s| s.x).sum::<f64>() / nr as f64;
    let t_m = r * t_e + (1.0 - r) * t_o;
    let t_c = u.min(t_m);
    let power = energy_terms(u, v, t_m, t_c, &w, &va, cfg, p.rho, p.sigma);
    let h = CHECK_PERIOD_S / 3600.0;
    plant.energy.hvac_heat += power.hvac_heat * h;
    plant.energy.hvac_cool += power.hvac_cool * h;
    plant.energy.hvac_fan += power.hvac_fan * h;
    plant.energy.spot_heat += power.spot_heat * h;
    plant.energy.spot_fan += power.spot_fan * h;
    plant.u_sum += u;

    let mut next = plant.states.clone();
    for (z, members) in building.zones.iter().enumerate() {
        let states: Vec<RoomState> = members.iter().map(|&j| plant.states[j]).collect();
        let inputs: Vec<RoomInput> = members
            .iter()
            .map(|&j| RoomInput {
                u,
                v: v[z] * share[j],
                exo: Exogenous {
                    t_o,
                    occupied: occupied[j],
                    d: building.internal_load,
                },
            })
            .collect();
        let heater: Vec<f64> = members.iter().map(|&j| w[j]).collect();
        let kinds: Vec<RoomKind> = members.iter().map(|&j| building.rooms[j].kind).collect();
        for (k, s) in step_zone(&physics[z], &states, &inputs, &heater, &kinds).into_iter().enumerate() {
            next[members[k]] = s;
        }
    }
    plant.states = next;

    let model = policies[0].model;
    let mut records = Vec::with_capacity(nr);
    for j in 0..nr {
        let s = plant.states[j];
        let pmv = model.eval(s.x2(), va[j]);
        if occupied[j] {
            plant.occupied[j] += 1;
            if !building.rooms[j].band.contains(pmv) {
                plant.uncomfortable[j] += 1;
            }
        }
        records.push(RoomRecord {
            x: s.x,
            x1: s.x1(d3[j]),
            x2: s.x2(),
            pmv,
            v: v[building.rooms[j].zone] * share[j],
            w: w[j],
            va: va[j],
            occupied: occupied[j],
        });
    }
    plant.timeline.steps.push(StepRecord {
        t: t as f64 * CHECK_PERIOD_S,
        u,
        v: v.to_vec(),
        r,
        power,
    });
    plant.timeline.rooms.push(records);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn band() -> ComfortBand {
        ComfortBand { lo: -0.5, hi: 0.5 }
    }

    #[test]
    fn discomfort_all_in_band() {
        let (d, mean) = compute_discomfort(&[vec![0.0; 10]], &[vec![true; 10]], &[band()]).unwrap();
        assert_eq!(d, vec![0.0]);
        assert_eq!(mean, 0.0);
    }

    #[test]
    fn discomfort_ratio_and_mean() {
        let mut pmv = vec![0.0; 120];
        let mut occ = vec![false; 120];
        occ[..100].fill(true);
        pmv[..25].fill(1.0);
        // Out of band while absent does not count.
        pmv[110] = 2.0;
        let (d, _) = compute_discomfort(&[pmv], &[occ], &[band()]).unwrap();
        assert_abs_diff_eq!(d[0], 0.25);

        let a = (vec![1.0, 0.0, 0.0, 0.0, 0.0], vec![true; 5]);
        let b = (vec![1.0, 1.0, 0.0, 0.0, 0.0], vec![true; 5]);
        let (d, mean) = compute_discomfort(&[a.0, b.0], &[a.1, b.1], &[band(), band()]).unwrap();
        assert_abs_diff_eq!(d[0], 0.2);
        assert_abs_diff_eq!(d[1], 0.4);
        assert_abs_diff_eq!(mean, 0.3, epsilon = 1e-15);
    }

    #[test]
    fn never_occupied_user_counts_zero() {
        let (d, mean) = compute_discomfort(&[vec![3.0; 4], vec![0.0, 1.0]], &[vec![false; 4], vec![true, true]], &[band(), band()]).unwrap();
        assert_eq!(d, vec![0.0, 0.5]);
        assert_abs_diff_eq!(mean, 0.25);
    }

    #[test]
    fn misaligned_inputs_rejected() {
        assert!(compute_discomfort(&[vec![0.0; 3]], &[vec![true; 2]], &[band()]).is_err());
        assert!(compute_discomfort(&[vec![0.0; 3]], &[], &[band()]).is_err());
    }
}
