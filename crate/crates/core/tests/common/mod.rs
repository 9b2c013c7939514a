#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spotmpc_core::comfort::Season;
use spotmpc_core::mpc::{build_problem, ControllerVariant, HourClock, MpcConfig, MpcProblem, SlotForecast};
use spotmpc_core::scenario::{homogeneous_band, Building, RoomSpec};
use spotmpc_core::thermal::{RoomKind, RoomState, ThermalParams};

/// One zone of `n` rooms with devices and the seasonal band.
pub fn device_zone(n: usize, season: Season) -> Building {
    let rooms = (0..n)
        .map(|j| RoomSpec {
            id: format!("r{}", j + 1),
            zone: 0,
            kind: RoomKind::TypeS,
            band: homogeneous_band(season),
        })
        .collect();
    Building::from_rooms(rooms, ThermalParams::default()).unwrap()
}

/// Seeded small planning instance: random initial temperatures, outside
/// temperatures and occupancy.
pub struct Instance {
    pub building: Building,
    pub states: Vec<RoomState>,
    pub clock: HourClock,
    pub forecasts: Vec<SlotForecast>,
    pub cfg: MpcConfig,
}

impl Instance {
    pub fn random(season: Season, rooms: usize, horizon: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t_lo, t_hi, to_lo, to_hi) = match season {
            Season::Winter => (20.5, 23.0, -10.0, -2.0),
            Season::Summer => (22.5, 25.5, 16.0, 28.0),
        };
        let states = (0..rooms).map(|_| RoomState::at(rng.gen_range(t_lo..t_hi))).collect();
        let t0 = rng.gen_range(to_lo..to_hi);
        let forecasts = (0..horizon)
            .map(|k| {
                let occupied: Vec<bool> = (0..rooms).map(|_| rng.gen_bool(0.6)).collect();
                SlotForecast {
                    t_o: (t0 + 0.1 * k as f64).clamp(to_lo, to_hi),
                    occupied_fraction: occupied.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect(),
                    occupied,
                }
            })
            .collect();
        let slot = rng.gen_range(0..144);
        let mut cfg = MpcConfig::for_season(season);
        cfg.horizon = horizon;
        Instance {
            building: device_zone(rooms, season),
            states,
            clock: HourClock {
                slot,
                carried_u: Some(rng.gen_range(16.0..26.0)),
            },
            forecasts,
            cfg,
        }
    }

    pub fn problem(&self, variant: ControllerVariant, relaxed: bool) -> MpcProblem {
        build_problem(&self.building, &self.states, self.clock, &self.forecasts, &self.cfg, variant, relaxed).unwrap()
    }
}
