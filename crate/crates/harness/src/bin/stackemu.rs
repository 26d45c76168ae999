use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stackemu::export::artifact_path;
use stackemu::scenario::ScenarioRun;
use stackemu::{
    compare_scenarios, export, run_scenario_with, schema_json, threads_from_env, Format,
    HarnessError, RunPlan, ScenarioConfig, Stage,
};
use stackemu_core::sensors::HotspotError;
use stackemu_core::LayerStats;

/// Thermal, power-delivery and reliability emulation of 3D chip stacks.
#[derive(Parser)]
#[command(name = "stackemu", version)]
struct Cli {
    /// Scenario file (TOML); repeat for `compare`.
    #[arg(long, global = true)]
    config: Vec<PathBuf>,
    /// Output path prefix for exported artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Forces fixed-order reductions in every solve.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Overwrite existing output files.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario without solving.
    Validate,
    /// Steady-state temperatures.
    Steady,
    /// Transient run with the configured management policy.
    Transient,
    /// Sensor placement and tracking error.
    PlaceSensors,
    /// Power-delivery IR drop, droop and coupling.
    Pdn,
    /// Per-layer comparison of two or more scenarios.
    Compare,
    /// Full pipeline; prints the report.
    Report,
    /// Prints the JSON schema of the scenario format.
    Schema,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load(cli: &Cli, path: &Path) -> Result<ScenarioConfig, HarnessError> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.deterministic {
        cfg.solve.deterministic = true;
    }
    Ok(cfg)
}

fn single(cli: &Cli) -> Result<ScenarioConfig, HarnessError> {
    match cli.config.as_slice() {
        [p] => load(cli, p),
        [] => Err(HarnessError::config("--config <path> is required")),
        _ => Err(HarnessError::config("this command takes exactly one --config")),
    }
}

fn require(present: bool, section: &str) -> Result<(), HarnessError> {
    if present {
        Ok(())
    } else {
        Err(HarnessError::config(format!("scenario has no [{section}] section")))
    }
}

fn write_out(cli: &Cli, run: &ScenarioRun, formats: &[Format]) -> Result<(), HarnessError> {
    let Some(prefix) = &cli.out else {
        return Ok(());
    };
    for &f in formats {
        for p in export(run, f, prefix, cli.force)? {
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn print_layers(title: &str, layers: &[LayerStats]) {
    println!("{title}");
    println!("  {:<6} {:>10} {:>10} {:>10}  hotspot (mm)", "layer", "mean C", "max C", "min C");
    for l in layers {
        println!(
            "  {:<6} {:>10.3} {:>10.3} {:>10.3}  ({:.3}, {:.3})",
            l.role.to_string(),
            l.mean_c,
            l.max_c,
            l.min_c,
            l.hotspot.x_mm,
            l.hotspot.y_mm
        );
    }
}

fn run(cli: &Cli) -> Result<(), HarnessError> {
    if let Some(n) = threads_from_env()? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::config(e.to_string()))?;
    }
    match cli.command {
        Command::Schema => {
            print!("{}", schema_json());
        }
        Command::Validate => {
            let cfg = single(cli)?;
            cfg.validate()?;
            println!("ok: {}", cfg.name);
        }
        Command::Steady => {
            let run = run_scenario_with(&single(cli)?, RunPlan::steady_only())?;
            let b = &run.report.body;
            println!("{}: {:.6} W, {} unknowns", b.name, b.total_power_w, b.grid.unknowns);
            print_layers("steady", &b.steady.layers);
            write_out(cli, &run, &[Format::Csv, Format::Pgm])?;
        }
        Command::Transient => {
            let cfg = single(cli)?;
            require(cfg.transient.is_some(), "transient")?;
            let plan = RunPlan {
                sensors: true,
                transient: true,
                policy: true,
                ..RunPlan::steady_only()
            };
            let run = run_scenario_with(&cfg, plan)?;
            let t = run.report.body.transient.as_ref().expect("transient ran");
            println!("{}: {} steps of {} s", run.report.body.name, t.steps, t.dt);
            print_layers("final", &t.final_layers);
            if let Some(m) = t.final_max_reading {
                println!("final max reading {m:.3} C");
            }
            for e in &t.events {
                let layer = e.layer.map_or(String::new(), |l| format!(" layer {l}"));
                println!(
                    "  t={:.6} {:?}{layer} sensor {} read {:.3} C",
                    e.time, e.action, e.sensor, e.reading
                );
            }
            write_out(cli, &run, &[Format::Csv, Format::Pgm])?;
        }
        Command::PlaceSensors => {
            let cfg = single(cli)?;
            require(cfg.sensors.is_some(), "sensors")?;
            let plan = RunPlan {
                sensors: true,
                ..RunPlan::steady_only()
            };
            let run = run_scenario_with(&cfg, plan)?;
            let s = run.report.body.sensors.as_ref().expect("sensors ran");
            println!("{} sensors, {} training fields", s.sites.len(), s.training_fields);
            for (i, site) in s.sites.iter().enumerate() {
                println!(
                    "  {i}: {} ({:.3}, {:.3}) mm reads {:.3} C",
                    site.role, site.x_mm, site.y_mm, s.steady_readings[i]
                );
            }
            match s.hotspot_error {
                HotspotError::Measured { mean, max } => {
                    println!("hotspot error mean {mean:.4} K, max {max:.4} K")
                }
                HotspotError::Unobserved => println!("hotspot unobserved"),
            }
            write_out(cli, &run, &[Format::Csv])?;
        }
        Command::Pdn => {
            let cfg = single(cli)?;
            require(cfg.pdn.is_some(), "pdn")?;
            let plan = RunPlan {
                pdn: true,
                ..RunPlan::steady_only()
            };
            let run = run_scenario_with(&cfg, plan)?;
            let p = run.report.body.pdn.as_ref().expect("pdn ran");
            println!("{} nodes, {:.6} A, max drop {:.4} mV", p.nodes, p.total_current_a, p.max_drop_mv);
            for l in &p.layers {
                println!("  {:<4} drop {:>10.4} mV  droop {:>10.4} mV", l.role.to_string(), l.max_drop_mv, l.droop_mv);
            }
            println!(
                "coupling: {} A per node on {}",
                p.coupling.step_a, p.coupling.aggressor_role
            );
            for v in &p.coupling.victims {
                println!("  {:<4} {:.6} mV", v.role.to_string(), v.drop_mv);
            }
            write_out(cli, &run, &[Format::Csv, Format::Pgm])?;
        }
        Command::Compare => {
            let cfgs = cli
                .config
                .iter()
                .map(|p| load(cli, p))
                .collect::<Result<Vec<_>, _>>()?;
            let table = compare_scenarios(&cfgs)?.to_table();
            print!("{table}");
            if let Some(prefix) = &cli.out {
                let path = artifact_path(prefix, "compare.txt");
                if path.exists() && !cli.force {
                    return Err(HarnessError::io(&path, "already exists (use --force to overwrite)"));
                }
                std::fs::write(&path, table)
                    .map_err(|e| HarnessError::io(&path, e).at(Stage::Compare))?;
                println!("wrote {}", path.display());
            }
        }
        Command::Report => {
            let run = run_scenario_with(&single(cli)?, RunPlan::full())?;
            print!("{}", run.report.to_text());
            write_out(cli, &run, &[Format::Text, Format::Csv, Format::Pgm])?;
        }
    }
    Ok(())
}
