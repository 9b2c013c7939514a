//! Reactive controller of a desk comfort device.
//!
//! Every 30 s the device measures the temperature of its region and the
//! occupancy of the room, evaluates the surrogate PMV at its current fan speed
//! and switches heater or fan accordingly. The measured temperature trend over
//! the last cycle is used to anticipate band crossings.

use serde::{Deserialize, Serialize};

use crate::comfort::{ComfortBand, SimplifiedPmvModel};

/// Fan speed steps (m/s).
pub const FAN_STEP: f64 = 0.1;
pub const FAN_LEVELS: u8 = 10;
pub const CHECK_PERIOD_S: f64 = 30.0;
pub const CHECKS_PER_SLOT: u32 = 20;

/// Speed of fan level `i`.
pub fn fan_speed(level: u8) -> f64 {
    f64::from(level.min(FAN_LEVELS)) * FAN_STEP
}

/// Level closest to `v`, ties rounded up.
pub fn nearest_level(v: f64) -> u8 {
    let scaled = (v.clamp(0.0, 1.0) / FAN_STEP * 1e9).round() / 1e9;
    (scaled + 0.5).floor().clamp(0.0, f64::from(FAN_LEVELS)) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum SpotMode {
    #[default]
    Off,
    Heat,
    Fan,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpotDeviceState {
    pub mode: SpotMode,
    pub fan_level: u8,
    /// Heated 30 s intervals in the current 10-minute slot.
    pub heated_intervals: u32,
    /// Region temperature at the previous check.
    pub prev_x2: Option<f64>,
}

impl SpotDeviceState {
    pub fn fan_speed(&self) -> f64 {
        fan_speed(self.fan_level)
    }

    /// Clears the duty accumulator at a 10-minute boundary.
    pub fn start_slot(&mut self) {
        self.heated_intervals = 0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpotPolicyParams {
    pub band: ComfortBand,
    pub model: SimplifiedPmvModel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpotAction {
    pub heater_on: bool,
    pub fan_speed: f64,
}

/// One 30 s decision of the device.
pub fn react(
    dev: &SpotDeviceState,
    x2: f64,
    occupied: bool,
    params: &SpotPolicyParams,
) -> (SpotDeviceState, SpotAction) {
    let mut next = *dev;
    next.prev_x2 = Some(x2);
    if !occupied {
        next.mode = SpotMode::Off;
        next.fan_level = 0;
        return (
            next,
            SpotAction {
                heater_on: false,
                fan_speed: 0.0,
            },
        );
    }
    let band = params.band;
    let pmv = |t: f64, level: u8| params.model.eval(t, fan_speed(level));
    let trend = dev.prev_x2.map_or(0.0, |p| x2 - p);
    let ahead = x2 + trend;
    let now = pmv(x2, dev.fan_level);

    let mut heater = false;
    if now > band.hi || pmv(ahead, dev.fan_level) > band.hi {
        next.fan_level = (dev.fan_level + 1).min(FAN_LEVELS);
    } else if now < band.lo {
        if dev.fan_level > 0 {
            let mut level = dev.fan_level - 1;
            while level > 0 && pmv(x2, level) < band.lo {
                level -= 1;
            }
            next.fan_level = level;
            heater = level == 0 && pmv(x2, 0) < band.lo;
        } else {
            heater = true;
        }
    } else if dev.fan_level > 0 {
        if pmv(ahead, dev.fan_level - 1) <= band.hi {
            next.fan_level = dev.fan_level - 1;
        }
    } else {
        heater = pmv(ahead, 0) < band.lo;
    }

    next.mode = if heater {
        SpotMode::Heat
    } else if next.fan_level > 0 {
        SpotMode::Fan
    } else {
        SpotMode::Off
    };
    if heater {
        next.heated_intervals += 1;
    }
    (
        next,
        SpotAction {
            heater_on: heater,
            fan_speed: next.fan_speed(),
        },
    )
}

/// Heater duty of the current slot.
pub fn duty_fraction(dev: &SpotDeviceState) -> f64 {
    (f64::from(dev.heated_intervals) / f64::from(CHECKS_PER_SLOT)).min(1.0)
}
