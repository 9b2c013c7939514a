//! Building layouts and comfort requirements of the simulated scenarios.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::comfort::{ComfortBand, Season, SimplifiedPmvModel};
use crate::error::{Error, Result};
use crate::thermal::{RoomKind, ThermalParams};

/// Internal load of an occupied room (kW).
pub const INTERNAL_LOAD_KW: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// One zone, five rooms with devices.
    S1,
    /// One zone, four rooms with devices and one without.
    S2,
    /// Zone 1 as in S1; zone 2 holds one room without a device.
    S3,
}

impl Layout {
    pub fn as_str(self) -> &'static str {
        match self {
            Layout::S1 => "s1",
            Layout::S2 => "s2",
            Layout::S3 => "s3",
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Layout {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(Layout::S1),
            "s2" => Ok(Layout::S2),
            "s3" => Ok(Layout::S3),
            _ => Err(Error::invalid(format!("unknown scenario layout '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComfortSpec {
    /// Every occupant shares the seasonal band.
    Homogeneous,
    /// Occupants of rooms with devices have individual bands.
    Heterogeneous,
}

impl FromStr for ComfortSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "homogeneous" | "hom" => Ok(ComfortSpec::Homogeneous),
            "heterogeneous" | "het" => Ok(ComfortSpec::Heterogeneous),
            _ => Err(Error::invalid(format!("unknown comfort spec '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub id: String,
    pub zone: usize,
    pub kind: RoomKind,
    /// PMV band of the occupant.
    pub band: ComfortBand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub rooms: Vec<RoomSpec>,
    /// Room indices per zone.
    pub zones: Vec<Vec<usize>>,
    pub params: ThermalParams,
    pub internal_load: f64,
}

impl Building {
    pub fn from_rooms(rooms: Vec<RoomSpec>, params: ThermalParams) -> Result<Self> {
        if rooms.is_empty() {
            return Err(Error::invalid("building has no rooms"));
        }
        let m = rooms.iter().map(|r| r.zone).max().unwrap_or(0) + 1;
        let mut zones = vec![Vec::new(); m];
        for (j, r) in rooms.iter().enumerate() {
            zones[r.zone].push(j);
        }
        if zones.iter().any(Vec::is_empty) {
            return Err(Error::invalid("zone numbering has gaps"));
        }
        params.validate()?;
        Ok(Building {
            rooms,
            zones,
            params,
            internal_load: INTERNAL_LOAD_KW,
        })
    }

    pub fn num_rooms(&self) -> usize {
        self.rooms.len()
    }

    pub fn num_zones(&self) -> usize {
        self.zones.len()
    }

    /// Position of room `j` within its zone.
    pub fn position_in_zone(&self, j: usize) -> usize {
        let z = self.rooms[j].zone;
        self.zones[z].iter().position(|&r| r == j).unwrap_or(0)
    }

    pub fn has_device(&self, j: usize) -> bool {
        self.rooms[j].kind == RoomKind::TypeS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scenario {
    pub layout: Layout,
    pub season: Season,
    pub comfort: ComfortSpec,
}

/// Seasonal band shared by all occupants.
pub fn homogeneous_band(season: Season) -> ComfortBand {
    match season {
        Season::Winter => ComfortBand { lo: -0.29, hi: 0.21 },
        Season::Summer => ComfortBand { lo: -0.7, hi: 0.0 },
    }
}

/// Individual bands of the five device users.
pub fn heterogeneous_bands(season: Season) -> [ComfortBand; 5] {
    let b = |lo, hi| ComfortBand { lo, hi };
    match season {
        Season::Winter => [b(-0.4, -0.16), b(-0.29, -0.04), b(-0.16, 0.08), b(-0.04, 0.21), b(0.08, 0.33)],
        Season::Summer => [b(-0.92, -0.56), b(-0.74, -0.37), b(-0.56, -0.19), b(-0.37, 0.0), b(-0.19, 0.18)],
    }
}

/// Temperature limits of occupied rooms without a device (°C).
pub fn kappa(season: Season) -> (f64, f64) {
    match season {
        Season::Winter => (21.0, 23.0),
        Season::Summer => (23.0, 25.0),
    }
}

impl Scenario {
    pub fn new(layout: Layout, season: Season, comfort: ComfortSpec) -> Self {
        Scenario { layout, season, comfort }
    }

    pub fn pmv_model(&self) -> SimplifiedPmvModel {
        SimplifiedPmvModel::for_season(self.season)
    }

    pub fn building(&self) -> Building {
        let hom = homogeneous_band(self.season);
        let het = heterogeneous_bands(self.season);
        let band = |device_index: usize| match self.comfort {
            ComfortSpec::Homogeneous => hom,
            ComfortSpec::Heterogeneous => het[device_index % het.len()],
        };
        let room = |id: String, zone, kind, band| RoomSpec { id, zone, kind, band };
        let rooms: Vec<RoomSpec> = match self.layout {
            Layout::S1 => (0..5)
                .map(|j| room(format!("r{}", j + 1), 0, RoomKind::TypeS, band(j)))
                .collect(),
            Layout::S2 => (0..5)
                .map(|j| {
                    if j < 4 {
                        room(format!("r{}", j + 1), 0, RoomKind::TypeS, band(j))
                    } else {
                        room(format!("r{}", j + 1), 0, RoomKind::TypeSBar, hom)
                    }
                })
                .collect(),
            Layout::S3 => {
                let mut v: Vec<RoomSpec> = (0..5)
                    .map(|j| room(format!("r{}", j + 1), 0, RoomKind::TypeS, band(j)))
                    .collect();
                v.push(room("meeting".to_string(), 1, RoomKind::TypeSBar, hom));
                v
            }
        };
        Building::from_rooms(rooms, ThermalParams::default()).expect("built-in layouts are valid")
    }

    /// Starting room temperature: the temperature at the centre of the
    /// seasonal band with the fan off.
    pub fn initial_temperature(&self) -> f64 {
        self.pmv_model().temperature_for(homogeneous_band(self.season).midpoint(), 0.0)
    }

    pub fn label(&self) -> String {
        let c = match self.comfort {
            ComfortSpec::Homogeneous => "hom",
            ComfortSpec::Heterogeneous => "het",
        };
        format!("{}-{}-{}", self.layout, self.season.as_str(), c)
    }
}
