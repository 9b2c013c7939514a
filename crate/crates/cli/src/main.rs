use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use spotmpc_core::comfort::{default_grid, fit_simplified, model_rmse, pmv_full, PmvContext, Season, SimplifiedPmvModel, FORMS};
use spotmpc_core::experiment::{build_report, emit_plot_data, run_days, run_experiment, trace_files, write_report, ComparisonReport, ExperimentSpec};
use spotmpc_core::mpc::ControllerVariant;
use spotmpc_core::scenario::{ComfortSpec, Layout};

const DEFAULT_OUT: &str = "out";
const DEFAULT_SWEEP: [f64; 3] = [100.0, 1000.0, 10000.0];

#[derive(Parser)]
#[command(name = "spotmpc", version, about = "HVAC MPC experiments with personal comfort devices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the comfort surrogate against the full PMV model.
    FitPmv {
        /// Fit one season only.
        #[arg(long)]
        season: Option<Season>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate days and write per-day results and timelines.
    Simulate(ExperimentArgs),
    /// Compare variants over several days and write the report.
    Compare(ExperimentArgs),
    /// Repeat a comparison for several discomfort weights.
    SweepW {
        #[command(flatten)]
        args: ExperimentArgs,
        /// Comma-separated weights.
        #[arg(long, value_delimiter = ',')]
        w: Vec<f64>,
    },
    /// Write synthetic occupancy and weather traces.
    GenTraces(ExperimentArgs),
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    /// TOML file with experiment fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Building layout: s1, s2 or s3.
    #[arg(long)]
    scenario: Option<Layout>,
    #[arg(long)]
    season: Option<Season>,
    /// hom or het.
    #[arg(long)]
    comfort: Option<ComfortSpec>,
    /// Comma-separated variants (SA, NS, SU).
    #[arg(long, value_delimiter = ',')]
    variant: Vec<ControllerVariant>,
    #[arg(long)]
    days: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Error in the request itself, reported with exit code 1.
#[derive(Debug)]
struct SpecError(anyhow::Error);

impl ExperimentArgs {
    fn spec(&self) -> Result<ExperimentSpec, SpecError> {
        let mut spec = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))
                    .map_err(SpecError)?;
                toml::from_str(&text)
                    .with_context(|| format!("parsing {}", path.display()))
                    .map_err(SpecError)?
            }
            None => ExperimentSpec::default(),
        };
        if let Some(s) = self.scenario {
            spec.scenario = s;
        }
        if let Some(s) = self.season {
            spec.season = s;
        }
        if let Some(c) = self.comfort {
            spec.comfort = c;
        }
        if !self.variant.is_empty() {
            spec.variants = self.variant.clone();
        }
        if let Some(d) = self.days {
            spec.days = d;
        }
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        if let Some(o) = &self.out {
            spec.out = Some(o.clone());
        }
        spec.validate().map_err(|e| SpecError(e.into()))?;
        Ok(spec)
    }
}

fn out_dir(spec: &ExperimentSpec) -> PathBuf {
    spec.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn print_report(report: &ComparisonReport) {
    for d in &report.days {
        let cols: Vec<String> = d
            .results
            .iter()
            .map(|r| format!("{} {:.2} kWh D {:.4}", r.variant, r.total_kwh, r.mean_discomfort))
            .collect();
        let savings = d.savings_pct.map(|s| format!("  savings {s:.1}%")).unwrap_or_default();
        println!("day {} ({}): {}{}", d.day, d.date, cols.join(", "), savings);
    }
    for s in &report.summary {
        println!(
            "{}: {} days, mean {:.2} kWh, mean D {:.4}, mean supply {:.2} °C",
            s.variant, s.days, s.mean_kwh, s.mean_discomfort, s.mean_supply_temp
        );
    }
    if let Some(m) = report.mean_savings_pct {
        println!("mean savings of SA over NS: {m:.1}%");
    }
    for row in &report.w_sweep {
        println!("W {}: {} mean {:.2} kWh, mean D {:.4} over {} days", row.w, row.variant, row.mean_kwh, row.mean_discomfort, row.days);
    }
    for f in &report.failures {
        eprintln!("day {} (W {}) failed: {}", f.day, f.w, f.message);
    }
}

fn finish(report: &ComparisonReport) -> ExitCode {
    if report.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn fit_pmv(season: Option<Season>, out: Option<&Path>) -> Result<()> {
    let grid = default_grid();
    let seasons = match season {
        Some(s) => vec![s],
        None => vec![Season::Winter, Season::Summer],
    };
    let mut all = serde_json::Map::new();
    for s in seasons {
        let ctx = PmvContext::for_season(s);
        let oracle = |t: f64, v: f64| pmv_full(t, v, &ctx);
        let report = fit_simplified(&grid, oracle, &FORMS)?;
        let builtin = SimplifiedPmvModel::for_season(s);
        let builtin_rmse = model_rmse(&builtin, &grid, oracle)?;
        println!("{}:", s.as_str());
        for f in &report.fits {
            let mark = if f.form == report.selected_fit().form { " (selected)" } else { "" };
            println!("  form {} rmse {:.4} coefficients {:?}{}", f.form, f.rmse, f.coefficients, mark);
        }
        println!("  built-in coefficients rmse {builtin_rmse:.4}");
        all.insert(
            s.as_str().to_string(),
            serde_json::json!({ "fit": report, "builtin_rmse": builtin_rmse }),
        );
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("fit-pmv.json");
        std::fs::write(&path, serde_json::to_string_pretty(&all)?)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn simulate(spec: &ExperimentSpec) -> Result<ExitCode> {
    let dir = out_dir(spec);
    std::fs::create_dir_all(&dir)?;
    let ids: Vec<String> = spec.scenario().building().rooms.iter().map(|r| r.id.clone()).collect();
    let (days, failures) = run_days(spec, spec.w_penalty);
    for (day, _, results) in &days {
        for r in results {
            let stem = format!("day-{day}-{}", r.variant);
            std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(r)?)?;
            r.write_timeline_csv(BufWriter::new(File::create(dir.join(format!("{stem}-timeline.csv")))?), &ids)?;
        }
    }
    let report = build_report(spec, days, failures);
    print_report(&report);
    println!("results in {}", dir.display());
    Ok(finish(&report))
}

fn compare(spec: &ExperimentSpec) -> Result<ExitCode> {
    let report = run_experiment(spec)?;
    let dir = out_dir(spec);
    write_report(&report, &dir)?;
    emit_plot_data(&report, &dir)?;
    print_report(&report);
    println!("report in {}", dir.display());
    Ok(finish(&report))
}

fn gen_traces(spec: &ExperimentSpec) -> Result<()> {
    let dir = out_dir(spec);
    std::fs::create_dir_all(&dir)?;
    let plain = ExperimentSpec {
        trace_dir: None,
        ..spec.clone()
    };
    for day in spec.first_day..spec.first_day + spec.days {
        let trace = plain.trace(day)?;
        let (occ, weather) = trace_files(&dir, day);
        trace.write_occupancy_csv(BufWriter::new(File::create(&occ)?))?;
        trace.write_weather_csv(BufWriter::new(File::create(&weather)?))?;
    }
    println!("wrote {} days of traces to {}", spec.days, dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, SpecError> {
    let runtime = |r: Result<ExitCode>| match r {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    };
    Ok(match cli.command {
        Command::FitPmv { season, out } => runtime(fit_pmv(season, out.as_deref()).map(|()| ExitCode::SUCCESS)),
        Command::Simulate(args) => runtime(simulate(&args.spec()?)),
        Command::Compare(args) => runtime(compare(&args.spec()?)),
        Command::SweepW { args, w } => {
            let mut spec = args.spec()?;
            if args.config.is_none() && args.comfort.is_none() {
                spec.comfort = ComfortSpec::Heterogeneous;
            }
            if !w.is_empty() {
                spec.w_values = w;
            }
            if spec.w_values.is_empty() {
                spec.w_values = DEFAULT_SWEEP.to_vec();
            }
            spec.validate().map_err(|e| SpecError(e.into()))?;
            runtime(compare(&spec))
        }
        Command::GenTraces(args) => runtime(gen_traces(&args.spec()?).map(|()| ExitCode::SUCCESS)),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(SpecError(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
