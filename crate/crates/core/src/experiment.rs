//! Batches of simulated days and the comparison report built from them.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comfort::Season;
use crate::error::{Error, Result};
use crate::mpc::{ControllerVariant, EnergyTerms};
use crate::scenario::{ComfortSpec, Layout, Scenario};
use crate::sim::{run_variants, DayResult, MpcStats, SimConfig};
use crate::trace::{synthetic_trace, OccupancyProfile, Trace, SAMPLES_PER_DAY};

const STEPS_PER_HOUR: usize = SAMPLES_PER_DAY / 24;

/// Everything that defines a batch of simulated days. Field names double as
/// the keys of the TOML configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: Layout,
    pub season: Season,
    pub comfort: ComfortSpec,
    pub variants: Vec<ControllerVariant>,
    pub days: u32,
    pub first_day: u32,
    /// Seeds the synthetic traces and the MPC start sampling.
    pub seed: u64,
    pub profile: OccupancyProfile,
    /// Directory holding `occupancy-<day>.csv` and `weather-<day>.csv`; days
    /// without files fall back to synthetic traces.
    pub trace_dir: Option<PathBuf>,
    /// Discomfort weights for the sweep; empty skips it.
    pub w_values: Vec<f64>,
    /// Discomfort weight of the main runs.
    pub w_penalty: f64,
    pub starts: usize,
    pub replan_starts: usize,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            scenario: Layout::S1,
            season: Season::Summer,
            comfort: ComfortSpec::Homogeneous,
            variants: vec![ControllerVariant::Sa, ControllerVariant::Ns],
            days: 1,
            first_day: 0,
            seed: 0,
            profile: OccupancyProfile::HALF_OCCUPIED,
            trace_dir: None,
            w_values: Vec::new(),
            w_penalty: 1000.0,
            starts: 15,
            replan_starts: 1,
            out: None,
        }
    }
}

impl ExperimentSpec {
    pub fn scenario(&self) -> Scenario {
        Scenario::new(self.scenario, self.season, self.comfort)
    }

    pub fn validate(&self) -> Result<()> {
        if self.days == 0 {
            return Err(Error::invalid("experiment needs at least one day"));
        }
        if self.variants.is_empty() {
            return Err(Error::invalid("experiment needs at least one variant"));
        }
        let mut seen = self.variants.clone();
        seen.sort_by_key(|v| v.as_str());
        seen.dedup();
        if seen.len() != self.variants.len() {
            return Err(Error::invalid("variant listed twice"));
        }
        if self.w_values.iter().chain([&self.w_penalty]).any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("discomfort weights must be positive"));
        }
        if self.starts == 0 {
            return Err(Error::invalid("MPC needs at least one start"));
        }
        self.profile.validate()
    }

    pub fn sim_config(&self, day: u32, w: f64) -> SimConfig {
        let mut cfg = SimConfig::for_scenario(&self.scenario());
        cfg.mpc.w_penalty = w;
        cfg.mpc.starts = self.starts;
        cfg.mpc.seed = self.seed.wrapping_add(u64::from(day));
        cfg.replan_starts = self.replan_starts;
        cfg
    }

    /// Trace of day `day`, read from `trace_dir` when present there.
    pub fn trace(&self, day: u32) -> Result<Trace> {
        let ids: Vec<String> = self.scenario().building().rooms.iter().map(|r| r.id.clone()).collect();
        if let Some(dir) = &self.trace_dir {
            let (occ, weather) = trace_files(dir, day);
            if occ.exists() && weather.exists() {
                let trace = Trace::from_csv(File::open(occ)?, File::open(weather)?)?;
                trace.validate(&ids)?;
                return Ok(trace);
            }
        }
        synthetic_trace(&ids, self.season, day, self.seed, self.profile)
    }
}

/// File names used for day `day` inside a trace directory.
pub fn trace_files(dir: &Path, day: u32) -> (PathBuf, PathBuf) {
    (dir.join(format!("occupancy-{day}.csv")), dir.join(format!("weather-{day}.csv")))
}

/// Summary of one variant on one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantDay {
    pub variant: ControllerVariant,
    pub energy: EnergyTerms,
    pub total_kwh: f64,
    /// Per-user discomfort, in room order.
    pub discomfort: Vec<f64>,
    pub mean_discomfort: f64,
    pub mean_supply_temp: f64,
    pub hourly_kwh: Vec<f64>,
    pub hourly_supply_temp: Vec<f64>,
    pub mpc: MpcStats,
}

impl VariantDay {
    pub fn from_result(r: &DayResult) -> Self {
        let steps = &r.timeline.steps;
        let h = crate::spot::CHECK_PERIOD_S / 3600.0;
        let mut hourly_kwh = Vec::new();
        let mut hourly_supply_temp = Vec::new();
        for hour in steps.chunks(STEPS_PER_HOUR) {
            hourly_kwh.push(hour.iter().map(|s| s.power.total() * h).sum());
            hourly_supply_temp.push(hour.iter().map(|s| s.u).sum::<f64>() / hour.len() as f64);
        }
        VariantDay {
            variant: r.variant,
            energy: r.energy,
            total_kwh: r.total_kwh,
            discomfort: r.discomfort.iter().map(|d| d.d).collect(),
            mean_discomfort: r.mean_discomfort,
            mean_supply_temp: r.mean_supply_temp,
            hourly_kwh,
            hourly_supply_temp,
            mpc: r.mpc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayReport {
    pub day: u32,
    pub date: String,
    pub results: Vec<VariantDay>,
    /// Savings of SA relative to NS (%), when both ran.
    pub savings_pct: Option<f64>,
}

impl DayReport {
    pub fn get(&self, variant: ControllerVariant) -> Option<&VariantDay> {
        self.results.iter().find(|r| r.variant == variant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayFailure {
    pub day: u32,
    pub w: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: ControllerVariant,
    pub days: usize,
    pub mean_kwh: f64,
    pub mean_discomfort: f64,
    pub mean_supply_temp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WSweepRow {
    pub w: f64,
    pub variant: ControllerVariant,
    pub days: usize,
    pub mean_kwh: f64,
    pub mean_discomfort: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub spec: ExperimentSpec,
    pub days: Vec<DayReport>,
    pub summary: Vec<VariantSummary>,
    /// Mean of the per-day savings over days where SA and NS both ran.
    pub mean_savings_pct: Option<f64>,
    pub w_sweep: Vec<WSweepRow>,
    pub failures: Vec<DayFailure>,
}

impl ComparisonReport {
    /// Per-day savings in ascending order, with their day index.
    pub fn sorted_savings(&self) -> Vec<(u32, f64)> {
        let mut s: Vec<(u32, f64)> = self.days.iter().filter_map(|d| d.savings_pct.map(|p| (d.day, p))).collect();
        s.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Savings of `sa` relative to `ns` (%).
pub fn savings_pct(e_ns: f64, e_sa: f64) -> f64 {
    100.0 * (e_ns - e_sa) / e_ns
}

/// Simulates every day of `spec` at weight `w`. Failed days are returned as
/// failures rather than aborting the batch.
pub fn run_days(spec: &ExperimentSpec, w: f64) -> (Vec<(u32, String, Vec<DayResult>)>, Vec<DayFailure>) {
    let scenario = spec.scenario();
    let outcomes: Vec<(u32, Result<(String, Vec<DayResult>)>)> = (spec.first_day..spec.first_day + spec.days)
        .into_par_iter()
        .map(|day| {
            let r = spec.trace(day).and_then(|trace| {
                let date = trace.start.date_naive().to_string();
                run_variants(&scenario, &trace, &spec.variants, &spec.sim_config(day, w)).map(|res| (date, res))
            });
            (day, r)
        })
        .collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (day, r) in outcomes {
        match r {
            Ok((date, res)) => ok.push((day, date, res)),
            Err(e) => failed.push(DayFailure {
                day,
                w,
                message: e.to_string(),
            }),
        }
    }
    (ok, failed)
}

fn summarize(days: &[DayReport], variants: &[ControllerVariant]) -> Vec<VariantSummary> {
    variants
        .iter()
        .map(|&v| {
            let rs: Vec<&VariantDay> = days.iter().filter_map(|d| d.get(v)).collect();
            let n = rs.len();
            let mean = |f: &dyn Fn(&VariantDay) -> f64| if n == 0 { 0.0 } else { rs.iter().map(|r| f(r)).sum::<f64>() / n as f64 };
            VariantSummary {
                variant: v,
                days: n,
                mean_kwh: mean(&|r| r.total_kwh),
                mean_discomfort: mean(&|r| r.mean_discomfort),
                mean_supply_temp: mean(&|r| r.mean_supply_temp),
            }
        })
        .collect()
}

/// Builds the report from finished days.
pub fn build_report(spec: &ExperimentSpec, days: Vec<(u32, String, Vec<DayResult>)>, failures: Vec<DayFailure>) -> ComparisonReport {
    let days: Vec<DayReport> = days
        .into_iter()
        .map(|(day, date, res)| {
            let results: Vec<VariantDay> = res.iter().map(VariantDay::from_result).collect();
            let total = |v| results.iter().find(|r| r.variant == v).map(|r| r.total_kwh);
            let savings = match (total(ControllerVariant::Ns), total(ControllerVariant::Sa)) {
                (Some(ns), Some(sa)) => Some(savings_pct(ns, sa)),
                _ => None,
            };
            DayReport {
                day,
                date,
                results,
                savings_pct: savings,
            }
        })
        .collect();
    let savings: Vec<f64> = days.iter().filter_map(|d| d.savings_pct).collect();
    let mean_savings_pct = (!savings.is_empty()).then(|| savings.iter().sum::<f64>() / savings.len() as f64);
    ComparisonReport {
        spec: spec.clone(),
        summary: summarize(&days, &spec.variants),
        days,
        mean_savings_pct,
        w_sweep: Vec::new(),
        failures,
    }
}

/// Runs the days of `spec`, then the weight sweep if one is configured.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ComparisonReport> {
    spec.validate()?;
    let (days, failures) = run_days(spec, spec.w_penalty);
    let mut report = build_report(spec, days, failures);
    for &w in &spec.w_values {
        let (days, failures) = run_days(spec, w);
        let reports: Vec<DayReport> = build_report(spec, days, Vec::new()).days;
        for s in summarize(&reports, &spec.variants) {
            report.w_sweep.push(WSweepRow {
                w,
                variant: s.variant,
                days: s.days,
                mean_kwh: s.mean_kwh,
                mean_discomfort: s.mean_discomfort,
            });
        }
        report.failures.extend(failures);
    }
    Ok(report)
}

fn csv_writer(dir: &Path, name: &str) -> Result<(PathBuf, csv::Writer<BufWriter<File>>)> {
    let path = dir.join(name);
    let w = csv::Writer::from_writer(BufWriter::new(File::create(&path)?));
    Ok((path, w))
}

/// Writes the plot-data CSVs of `report` into `dir` and returns their paths.
///
/// * `daily-savings.csv`: per-day savings sorted ascending.
/// * `daily-results.csv`: energy and discomfort per day and variant.
/// * `energy-vs-time.csv`: hourly energy per day and variant.
/// * `supply-air-temperature.csv`: hourly mean supply temperature.
/// * `w-sweep.csv`: mean energy and discomfort per weight and variant.
pub fn emit_plot_data(report: &ComparisonReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    let f = |x: f64| format!("{x}");

    let (p, mut w) = csv_writer(dir, "daily-savings.csv")?;
    w.write_record(["rank", "day", "savings_pct"])?;
    for (rank, (day, s)) in report.sorted_savings().into_iter().enumerate() {
        w.write_record([rank.to_string(), day.to_string(), f(s)])?;
    }
    w.flush()?;
    paths.push(p);

    let (p, mut w) = csv_writer(dir, "daily-results.csv")?;
    w.write_record(["day", "date", "variant", "total_kwh", "hvac_kwh", "spot_kwh", "mean_discomfort", "mean_supply_temp_c"])?;
    for d in &report.days {
        for r in &d.results {
            w.write_record([
                d.day.to_string(),
                d.date.clone(),
                r.variant.to_string(),
                f(r.total_kwh),
                f(r.energy.hvac()),
                f(r.energy.spot_heat + r.energy.spot_fan),
                f(r.mean_discomfort),
                f(r.mean_supply_temp),
            ])?;
        }
    }
    w.flush()?;
    paths.push(p);

    for (name, col, pick) in [
        ("energy-vs-time.csv", "energy_kwh", (|r: &VariantDay| &r.hourly_kwh) as fn(&VariantDay) -> &Vec<f64>),
        ("supply-air-temperature.csv", "supply_temp_c", |r: &VariantDay| &r.hourly_supply_temp),
    ] {
        let (p, mut w) = csv_writer(dir, name)?;
        w.write_record(["day", "variant", "hour", col])?;
        for d in &report.days {
            for r in &d.results {
                for (hour, x) in pick(r).iter().enumerate() {
                    w.write_record([d.day.to_string(), r.variant.to_string(), hour.to_string(), f(*x)])?;
                }
            }
        }
        w.flush()?;
        paths.push(p);
    }

    let (p, mut w) = csv_writer(dir, "w-sweep.csv")?;
    w.write_record(["w", "variant", "days", "mean_kwh", "mean_discomfort"])?;
    for row in &report.w_sweep {
        w.write_record([f(row.w), row.variant.to_string(), row.days.to_string(), f(row.mean_kwh), f(row.mean_discomfort)])?;
    }
    w.flush()?;
    paths.push(p);
    Ok(paths)
}

/// Writes `report.json` into `dir`.
pub fn write_report(report: &ComparisonReport, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("report.json");
    std::fs::write(&path, report.to_json()?)?;
    Ok(path)
}

/// Mean per-day value of `f` for `variant`, keyed by day.
pub fn per_day<F: Fn(&VariantDay) -> f64>(report: &ComparisonReport, variant: ControllerVariant, f: F) -> BTreeMap<u32, f64> {
    report.days.iter().filter_map(|d| d.get(variant).map(|r| (d.day, f(r)))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn savings_sign() {
        assert_eq!(savings_pct(10.0, 6.0), 40.0);
        assert_eq!(savings_pct(10.0, 12.0), -20.0);
    }

    #[test]
    fn spec_validation() {
        assert!(ExperimentSpec::default().validate().is_ok());
        let bad = ExperimentSpec {
            days: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ExperimentSpec {
            w_values: vec![100.0, 0.0],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ExperimentSpec {
            variants: vec![ControllerVariant::Sa, ControllerVariant::Sa],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn spec_round_trips_through_toml_keys() {
        let spec = ExperimentSpec {
            w_values: vec![100.0, 1000.0],
            ..Default::default()
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentSpec>(&json).unwrap(), spec);
    }
}
