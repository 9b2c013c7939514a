//! Occupancy and weather traces at the 30 s simulation cadence.
//!
//! Traces are read from and written to CSV (`timestamp,room_id,occupied` and
//! `timestamp,temp_c`, ISO-8601 UTC). When no recorded data is at hand the
//! synthetic generators below produce seeded office-like occupancy and a
//! sinusoidal outside temperature.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{DateTime, Duration, NaiveDate, SecondsFormat, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comfort::Season;
use crate::error::{Error, Result};
use crate::mpc::{HORIZON, MPC_STEP_S};
use crate::spot::CHECK_PERIOD_S;

/// Samples per simulated day.
pub const SAMPLES_PER_DAY: usize = 2880;
/// Samples per 10-minute slot.
pub const SAMPLES_PER_SLOT: usize = (MPC_STEP_S / CHECK_PERIOD_S) as usize;
/// Samples a trace must hold: one day plus the planning lookahead.
pub const TRACE_SAMPLES: usize = SAMPLES_PER_DAY + HORIZON * SAMPLES_PER_SLOT;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    /// Timestamp of sample 0.
    pub start: DateTime<Utc>,
    pub room_ids: Vec<String>,
    /// Occupancy per room and sample.
    pub occupancy: Vec<Vec<bool>>,
    /// Outside temperature per sample (°C).
    pub weather: Vec<f64>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.weather.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weather.is_empty()
    }

    pub fn timestamp(&self, sample: usize) -> DateTime<Utc> {
        self.start + Duration::seconds(sample as i64 * CHECK_PERIOD_S as i64)
    }

    pub fn room_index(&self, id: &str) -> Option<usize> {
        self.room_ids.iter().position(|r| r == id)
    }

    /// Checks shape and that the trace covers a day plus the lookahead.
    pub fn validate(&self, room_ids: &[String]) -> Result<()> {
        if self.len() < TRACE_SAMPLES {
            return Err(Error::Trace(format!(
                "trace holds {} samples, {} needed for a day plus lookahead",
                self.len(),
                TRACE_SAMPLES
            )));
        }
        if self.occupancy.len() != self.room_ids.len() || self.occupancy.iter().any(|o| o.len() != self.len()) {
            return Err(Error::Trace("occupancy series do not match the weather series".into()));
        }
        for id in room_ids {
            if self.room_index(id).is_none() {
                return Err(Error::Trace(format!("no occupancy series for room '{id}'")));
            }
        }
        if self.weather.iter().any(|t| !t.is_finite()) {
            return Err(Error::Trace("non-finite outside temperature".into()));
        }
        Ok(())
    }

    /// Occupied share of the samples of room `j` in `[from, to)`.
    pub fn occupied_fraction(&self, j: usize, from: usize, to: usize) -> f64 {
        let s = &self.occupancy[j][from..to];
        s.iter().filter(|&&o| o).count() as f64 / s.len().max(1) as f64
    }

    pub fn write_occupancy_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["timestamp", "room_id", "occupied"])?;
        for t in 0..self.len() {
            let ts = format_ts(self.timestamp(t));
            for (j, id) in self.room_ids.iter().enumerate() {
                wr.write_record([ts.as_str(), id, if self.occupancy[j][t] { "1" } else { "0" }])?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_weather_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["timestamp", "temp_c"])?;
        for (t, temp) in self.weather.iter().enumerate() {
            wr.write_record([format_ts(self.timestamp(t)), format!("{temp}")])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Combines separately read occupancy and weather series.
    pub fn from_csv<R1: Read, R2: Read>(occupancy: R1, weather: R2) -> Result<Trace> {
        let (start, room_ids, occ) = read_occupancy_csv(occupancy)?;
        let (w_start, temps) = read_weather_csv(weather)?;
        if start != w_start {
            return Err(Error::Trace(format!("occupancy starts at {start}, weather at {w_start}")));
        }
        if occ.iter().any(|o| o.len() != temps.len()) {
            return Err(Error::Trace(format!(
                "occupancy covers {} samples, weather {}",
                occ.first().map_or(0, Vec::len),
                temps.len()
            )));
        }
        Ok(Trace {
            start,
            room_ids,
            occupancy: occ,
            weather: temps,
        })
    }
}

fn format_ts(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn parse_ts(s: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::Trace(format!("bad timestamp '{s}': {e}")))
}

/// Checks that `times` advance in exact 30 s steps.
fn check_cadence(times: &[DateTime<Utc>], what: &str) -> Result<()> {
    for w in times.windows(2) {
        let dt = (w[1] - w[0]).num_seconds();
        if dt <= 0 {
            return Err(Error::Trace(format!("{what}: timestamps not increasing at {}", w[1])));
        }
        if dt != CHECK_PERIOD_S as i64 {
            return Err(Error::Trace(format!("{what}: gap of {dt} s at {}", w[1])));
        }
    }
    Ok(())
}

type OccupancySeries = (DateTime<Utc>, Vec<String>, Vec<Vec<bool>>);

/// Reads `timestamp,room_id,occupied` rows. Rooms keep their order of first
/// appearance.
pub fn read_occupancy_csv<R: Read>(r: R) -> Result<OccupancySeries> {
    let mut rd = csv::Reader::from_reader(r);
    let mut ids: Vec<String> = Vec::new();
    let mut series: BTreeMap<String, Vec<(DateTime<Utc>, bool)>> = BTreeMap::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::Trace(format!("occupancy row with {} fields", rec.len())));
        }
        let t = parse_ts(&rec[0])?;
        let id = rec[1].trim().to_string();
        let occ = match rec[2].trim() {
            "0" => false,
            "1" => true,
            other => return Err(Error::Trace(format!("occupancy value '{other}' is not 0 or 1"))),
        };
        if !series.contains_key(&id) {
            ids.push(id.clone());
        }
        series.entry(id).or_default().push((t, occ));
    }
    if ids.is_empty() {
        return Err(Error::Trace("empty occupancy trace".into()));
    }
    let mut start = None;
    let mut out = Vec::with_capacity(ids.len());
    for id in &ids {
        let s = &series[id];
        let times: Vec<DateTime<Utc>> = s.iter().map(|p| p.0).collect();
        check_cadence(&times, &format!("room '{id}'"))?;
        match start {
            None => start = Some(times[0]),
            Some(t0) if t0 != times[0] => {
                return Err(Error::Trace(format!("room '{id}' starts at {}, expected {t0}", times[0])));
            }
            _ => {}
        }
        out.push(s.iter().map(|p| p.1).collect::<Vec<bool>>());
    }
    let len = out[0].len();
    if out.iter().any(|o| o.len() != len) {
        return Err(Error::Trace("rooms cover different periods".into()));
    }
    Ok((start.expect("at least one room"), ids, out))
}

pub fn read_weather_csv<R: Read>(r: R) -> Result<(DateTime<Utc>, Vec<f64>)> {
    let mut rd = csv::Reader::from_reader(r);
    let mut times = Vec::new();
    let mut temps = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::Trace(format!("weather row with {} fields", rec.len())));
        }
        times.push(parse_ts(&rec[0])?);
        let v: f64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::Trace(format!("bad temperature '{}'", &rec[1])))?;
        if !v.is_finite() {
            return Err(Error::Trace("non-finite temperature".into()));
        }
        temps.push(v);
    }
    if times.is_empty() {
        return Err(Error::Trace("empty weather trace".into()));
    }
    check_cadence(&times, "weather")?;
    Ok((times[0], temps))
}

/// Synthetic occupancy patterns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OccupancyProfile {
    AlwaysAbsent,
    /// Present without interruption between two fixed hours.
    FixedHours { arrival_h: f64, departure_h: f64 },
    /// Random arrival and departure; away on breaks for about `break_rate`
    /// of the time in between. A room stays empty all day with probability
    /// `absence_prob`.
    Office { break_rate: f64, absence_prob: f64 },
}

impl OccupancyProfile {
    pub const NINE_TO_FIVE: OccupancyProfile = OccupancyProfile::FixedHours {
        arrival_h: 8.0,
        departure_h: 17.0,
    };

    /// Office profile with roughly half of the working hours occupied.
    pub const HALF_OCCUPIED: OccupancyProfile = OccupancyProfile::Office {
        break_rate: 0.3,
        absence_prob: 0.2,
    };

    pub fn validate(&self) -> Result<()> {
        match *self {
            OccupancyProfile::AlwaysAbsent => Ok(()),
            OccupancyProfile::FixedHours { arrival_h, departure_h } => {
                if (0.0..=24.0).contains(&arrival_h) && (0.0..=24.0).contains(&departure_h) && arrival_h <= departure_h {
                    Ok(())
                } else {
                    Err(Error::invalid("fixed-hours profile needs 0 ≤ arrival ≤ departure ≤ 24"))
                }
            }
            OccupancyProfile::Office { break_rate, absence_prob } => {
                if (0.0..1.0).contains(&break_rate) && (0.0..=1.0).contains(&absence_prob) {
                    Ok(())
                } else {
                    Err(Error::invalid("office profile needs break_rate in [0, 1) and absence_prob in [0, 1]"))
                }
            }
        }
    }
}

/// Earliest and latest arrival and departure of the office profile (hours).
const OFFICE_ARRIVAL: (f64, f64) = (7.5, 9.5);
const OFFICE_DEPARTURE: (f64, f64) = (16.0, 18.5);
/// Mean break length (minutes).
const MEAN_BREAK_MIN: f64 = 20.0;

const SAMPLES_PER_HOUR: f64 = 3600.0 / CHECK_PERIOD_S;

/// Occupancy of `rooms` rooms over `samples` samples starting at midnight.
/// Every day of the trace repeats the pattern drawn for its own day.
pub fn generate_synthetic_occupancy(rooms: usize, samples: usize, seed: u64, profile: OccupancyProfile) -> Result<Vec<Vec<bool>>> {
    profile.validate()?;
    let mut out = vec![vec![false; samples]; rooms];
    let days = samples.div_ceil(SAMPLES_PER_DAY);
    for (j, series) in out.iter_mut().enumerate() {
        for day in 0..days {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((j * days + day) as u64);
            let offset = day * SAMPLES_PER_DAY;
            let day_pattern = day_occupancy(&mut rng, profile);
            for (t, o) in day_pattern.into_iter().enumerate() {
                if offset + t < samples {
                    series[offset + t] = o;
                }
            }
        }
    }
    Ok(out)
}

fn hour_sample(h: f64) -> usize {
    ((h * SAMPLES_PER_HOUR).round() as usize).min(SAMPLES_PER_DAY)
}

fn day_occupancy(rng: &mut ChaCha8Rng, profile: OccupancyProfile) -> Vec<bool> {
    let mut day = vec![false; SAMPLES_PER_DAY];
    match profile {
        OccupancyProfile::AlwaysAbsent => {}
        OccupancyProfile::FixedHours { arrival_h, departure_h } => {
            day[hour_sample(arrival_h)..hour_sample(departure_h)].fill(true);
        }
        OccupancyProfile::Office { break_rate, absence_prob } => {
            if rng.gen_bool(absence_prob) {
                return day;
            }
            let a = hour_sample(rng.gen_range(OFFICE_ARRIVAL.0..OFFICE_ARRIVAL.1));
            let d = hour_sample(rng.gen_range(OFFICE_DEPARTURE.0..OFFICE_DEPARTURE.1));
            let away_mean = MEAN_BREAK_MIN * 2.0;
            let present_mean = if break_rate > 0.0 {
                away_mean * (1.0 - break_rate) / break_rate
            } else {
                f64::INFINITY
            };
            let mut t = a;
            let mut present = true;
            while t < d {
                let mean = if present { present_mean } else { away_mean };
                let len = if mean.is_finite() {
                    // Exponential length in samples, at least one.
                    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
                    ((-u.ln() * mean).round() as usize).max(1)
                } else {
                    d - t
                };
                let end = (t + len).min(d);
                if present {
                    day[t..end].fill(true);
                }
                t = end;
                present = !present;
            }
        }
    }
    day
}

/// Daily outside temperature range of the built-in weather generator (°C).
pub fn season_weather(season: Season) -> (f64, f64) {
    match season {
        Season::Winter => (-10.0, -2.0),
        Season::Summer => (16.0, 28.0),
    }
}

/// Sinusoidal outside temperature with its minimum at 04:00 and maximum at
/// 16:00. The daily range is shifted by up to ±2 K per seeded day.
pub fn generate_weather(season: Season, samples: usize, seed: u64) -> Vec<f64> {
    let (lo, hi) = season_weather(season);
    let days = samples.div_ceil(SAMPLES_PER_DAY);
    let shifts: Vec<f64> = (0..days)
        .map(|d| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1_000_000 + d as u64);
            rng.gen_range(-2.0..2.0)
        })
        .collect();
    (0..samples)
        .map(|t| {
            let h = t as f64 / SAMPLES_PER_HOUR;
            let phase = (h - 16.0) / 24.0 * std::f64::consts::TAU;
            let mean = 0.5 * (lo + hi) + shifts[t / SAMPLES_PER_DAY];
            mean + 0.5 * (hi - lo) * phase.cos()
        })
        .collect()
}

/// Calendar day used for synthetic day `day` of `season`.
pub fn synthetic_date(season: Season, day: u32) -> DateTime<Utc> {
    let base = match season {
        Season::Winter => NaiveDate::from_ymd_opt(2024, 1, 8),
        Season::Summer => NaiveDate::from_ymd_opt(2024, 7, 1),
    }
    .expect("valid date");
    (base + Duration::days(i64::from(day)))
        .and_hms_opt(0, 0, 0)
        .expect("midnight exists")
        .and_utc()
}

/// Synthetic trace for one day plus lookahead.
pub fn synthetic_trace(room_ids: &[String], season: Season, day: u32, seed: u64, profile: OccupancyProfile) -> Result<Trace> {
    let day_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(u64::from(day));
    Ok(Trace {
        start: synthetic_date(season, day),
        room_ids: room_ids.to_vec(),
        occupancy: generate_synthetic_occupancy(room_ids.len(), TRACE_SAMPLES, day_seed, profile)?,
        weather: generate_weather(season, TRACE_SAMPLES, day_seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|j| format!("r{j}")).collect()
    }

    #[test]
    fn always_absent_is_empty() {
        let o = generate_synthetic_occupancy(3, TRACE_SAMPLES, 1, OccupancyProfile::AlwaysAbsent).unwrap();
        assert!(o.iter().flatten().all(|&b| !b));
    }

    #[test]
    fn nine_to_five_span() {
        let o = generate_synthetic_occupancy(1, SAMPLES_PER_DAY, 0, OccupancyProfile::NINE_TO_FIVE).unwrap();
        let first = o[0].iter().position(|&b| b).unwrap();
        let last = o[0].iter().rposition(|&b| b).unwrap();
        assert_eq!(first, 8 * 120);
        assert_eq!(last, 17 * 120 - 1);
        assert_eq!(o[0].iter().filter(|&&b| b).count(), 9 * 120);
    }

    #[test]
    fn office_is_reproducible() {
        let p = OccupancyProfile::Office {
            break_rate: 0.3,
            absence_prob: 0.0,
        };
        let a = generate_synthetic_occupancy(5, TRACE_SAMPLES, 42, p).unwrap();
        let b = generate_synthetic_occupancy(5, TRACE_SAMPLES, 42, p).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_occupancy(5, TRACE_SAMPLES, 43, p).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn office_break_share() {
        let p = OccupancyProfile::Office {
            break_rate: 0.3,
            absence_prob: 0.0,
        };
        let mut present = 0usize;
        let mut span = 0usize;
        for seed in 0..40 {
            let o = generate_synthetic_occupancy(5, SAMPLES_PER_DAY, seed, p).unwrap();
            for room in &o {
                let first = room.iter().position(|&b| b).unwrap();
                let last = room.iter().rposition(|&b| b).unwrap();
                span += last + 1 - first;
                present += room.iter().filter(|&&b| b).count();
            }
        }
        let away = 1.0 - present as f64 / span as f64;
        assert!((away - 0.3).abs() < 0.05, "away share {away}");
    }

    #[test]
    fn weather_range() {
        let w = generate_weather(Season::Summer, SAMPLES_PER_DAY, 3);
        let lo = w.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((hi - lo - 12.0).abs() < 1e-3);
        let peak = w.iter().position(|&t| t == hi).unwrap();
        assert_eq!(peak, 16 * 120);
    }

    #[test]
    fn csv_round_trip() {
        let t = synthetic_trace(&ids(2), Season::Winter, 3, 9, OccupancyProfile::HALF_OCCUPIED).unwrap();
        let mut occ = Vec::new();
        let mut wx = Vec::new();
        t.write_occupancy_csv(&mut occ).unwrap();
        t.write_weather_csv(&mut wx).unwrap();
        let header = String::from_utf8(occ[..60].to_vec()).unwrap();
        assert!(header.starts_with("timestamp,room_id,occupied\n2024-01-11T00:00:00Z,r1,"));
        let back = Trace::from_csv(occ.as_slice(), wx.as_slice()).unwrap();
        assert_eq!(back, t);
        back.validate(&ids(2)).unwrap();
    }

    #[test]
    fn rejects_gaps_and_bad_values() {
        let gap = "timestamp,temp_c\n2024-01-01T00:00:00Z,1\n2024-01-01T00:01:00Z,2\n";
        assert!(read_weather_csv(gap.as_bytes()).is_err());
        let back = "timestamp,temp_c\n2024-01-01T00:00:30Z,1\n2024-01-01T00:00:00Z,2\n";
        assert!(read_weather_csv(back.as_bytes()).is_err());
        let bad = "timestamp,room_id,occupied\n2024-01-01T00:00:00Z,r1,2\n";
        assert!(read_occupancy_csv(bad.as_bytes()).is_err());
    }

    #[test]
    fn short_trace_rejected() {
        let mut t = synthetic_trace(&ids(1), Season::Summer, 0, 0, OccupancyProfile::AlwaysAbsent).unwrap();
        t.weather.truncate(SAMPLES_PER_DAY);
        t.occupancy[0].truncate(SAMPLES_PER_DAY);
        assert!(t.validate(&ids(1)).is_err());
    }
}
