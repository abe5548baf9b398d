//! Command-line driver for the obstacle-scattering benchmark.
//!
//! Subcommands:
//!
//! * `mesh gen|refine|info` — generate, uniformly refine, or describe the
//!   obstacle mesh,
//! * `run` — simulate the scenario with a chosen method and write snapshot
//!   and energy files,
//! * `convergence` — the nested-mesh error study (CSV: `h,dofs,error,eoc`),
//! * `cfl` — certified step bounds per level (CSV: `h,C_nc1,C_n0plus`),
//! * `export` — run and export the field nearest a requested time as CSV or
//!   legacy-VTK.
//!
//! Scenario parameters come from built-in defaults, overridden by a JSON
//! config file (`--config`), overridden by individual flags.  The runner
//! checks the requested step against the certified bound and *warns* when it
//! exceeds it; the simulation still runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use fetd::bench::{
    cfl_csv, cfl_table, convergence_csv, convergence_study, energy_csv, export_snapshot,
    BenchMethod, BenchRun, RhsMode, Scenario, SnapshotFormat,
};
use fetd::mesh::io::{read_mesh_file, write_mesh_file};
use fetd::mesh::scatterer::{generate_scatterer_mesh, ScattererGeometry};
use fetd::timestep::{default_step_bracket, estimate_tau_max, EnergyRecording, SolutionRecord};
use fetd::{Error, Result};

#[derive(Parser)]
#[command(
    name = "fetd",
    version,
    about = "Edge-element time-domain solver for the obstacle-scattering benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate, refine or inspect obstacle meshes.
    Mesh {
        #[command(subcommand)]
        action: MeshAction,
    },
    /// Run the scattering scenario and write snapshots and the energy trace.
    Run(RunArgs),
    /// Nested-mesh convergence study.
    Convergence(ConvergenceArgs),
    /// Certified step-bound table over refinement levels.
    Cfl(CflArgs),
    /// Run the scenario and export the snapshot nearest a requested time.
    Export(ExportArgs),
}

#[derive(Subcommand)]
enum MeshAction {
    /// Generate the obstacle mesh at a refinement level.
    Gen {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Refinement level (0 is the coarsest).
        #[arg(long, default_value_t = 0)]
        level: u32,
        /// Output mesh file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Uniformly refine a mesh file once.
    Refine {
        /// Input mesh file.
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Output mesh file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print mesh statistics.
    Info {
        /// Input mesh file.
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
    },
}

/// Scenario overrides shared by the simulation subcommands.  Precedence:
/// defaults, then `--config`, then these flags.
#[derive(Args, Clone)]
struct ScenarioArgs {
    /// JSON file with scenario fields (all optional).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Obstacle circumradius.
    #[arg(long)]
    radius: Option<f64>,
    /// Obstacle corner count (8 or 16).
    #[arg(long)]
    segments: Option<usize>,
    /// Final simulation time.
    #[arg(long = "T", value_name = "TIME")]
    final_time: Option<f64>,
    /// Conductivity inside the obstacle.
    #[arg(long)]
    sigma: Option<f64>,
}

/// The JSON config mirrors the scenario fields; everything is optional.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ScenarioConfig {
    radius: Option<f64>,
    segments: Option<usize>,
    wave_dir: Option<[f64; 2]>,
    amplitude: Option<f64>,
    decay: Option<f64>,
    offset: Option<f64>,
    final_time: Option<f64>,
    eps: Option<f64>,
    sigma: Option<f64>,
    nu: Option<f64>,
    snapshot_times: Option<Vec<f64>>,
}

impl ScenarioArgs {
    fn build(&self) -> Result<Scenario> {
        let mut sc = Scenario::standard();
        let mut radius = sc.geometry.radius;
        let mut segments = sc.geometry.segments;
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)?;
            let cfg: ScenarioConfig = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            radius = cfg.radius.unwrap_or(radius);
            segments = cfg.segments.unwrap_or(segments);
            if let Some(k) = cfg.wave_dir {
                sc.wave_dir = k;
            }
            sc.amplitude = cfg.amplitude.unwrap_or(sc.amplitude);
            sc.decay = cfg.decay.unwrap_or(sc.decay);
            sc.offset = cfg.offset.unwrap_or(sc.offset);
            sc.final_time = cfg.final_time.unwrap_or(sc.final_time);
            sc.eps = cfg.eps.unwrap_or(sc.eps);
            sc.sigma = cfg.sigma.unwrap_or(sc.sigma);
            sc.nu = cfg.nu.unwrap_or(sc.nu);
            if let Some(times) = cfg.snapshot_times {
                sc.snapshot_times = times;
            }
        }
        radius = self.radius.unwrap_or(radius);
        segments = self.segments.unwrap_or(segments);
        sc.geometry = ScattererGeometry::new(radius, segments)?;
        sc.final_time = self.final_time.unwrap_or(sc.final_time);
        sc.sigma = self.sigma.unwrap_or(sc.sigma);
        sc.validate()?;
        Ok(sc)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Discretisation: nc1, n0plus or n0.
    #[arg(long, default_value = "nc1")]
    method: String,
    /// Load path for merged methods: lifted or direct.
    #[arg(long, default_value = "lifted")]
    rhs: String,
    /// Mesh refinement level.
    #[arg(long, default_value_t = 2)]
    level: u32,
    /// Step size as a multiple of the mesh size.
    #[arg(long, default_value_t = 0.28)]
    cfl: f64,
    /// Record the energy every this many steps (0 disables).
    #[arg(long, default_value_t = 1)]
    energy_every: usize,
    /// Snapshot format: csv or vtk-legacy.
    #[arg(long, default_value = "csv")]
    format: String,
    /// Skip the certified step-bound check.
    #[arg(long, default_value_t = false)]
    no_stability_check: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Discretisation: nc1, n0plus or n0.
    #[arg(long, default_value = "nc1")]
    method: String,
    /// Load path for merged methods: lifted or direct.
    #[arg(long, default_value = "lifted")]
    rhs: String,
    /// Level range, e.g. 1..4 (half-open), 1..=3 or 1,2,3.
    #[arg(long)]
    levels: String,
    /// Step size as a multiple of the mesh size.
    #[arg(long, default_value_t = 0.28)]
    cfl: f64,
    /// Output CSV file ('-' for stdout).
    #[arg(long, default_value = "-")]
    out: String,
}

#[derive(Args)]
struct CflArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Level range, e.g. 0..5 (half-open), 0..=4 or 0,1,2,3,4.
    #[arg(long)]
    levels: String,
    /// Output CSV file ('-' for stdout).
    #[arg(long, default_value = "-")]
    out: String,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Discretisation: nc1, n0plus or n0.
    #[arg(long, default_value = "nc1")]
    method: String,
    /// Load path for merged methods: lifted or direct.
    #[arg(long, default_value = "lifted")]
    rhs: String,
    /// Mesh refinement level.
    #[arg(long, default_value_t = 2)]
    level: u32,
    /// Step size as a multiple of the mesh size.
    #[arg(long, default_value_t = 0.28)]
    cfl: f64,
    /// Time to export (must sit near a configured snapshot time).
    #[arg(long)]
    t: f64,
    /// Output format: csv or vtk-legacy.
    #[arg(long, default_value = "csv")]
    format: String,
    /// Output file ('-' for stdout).
    #[arg(long, default_value = "-")]
    out: String,
}

/// Parses `3..6`, `3..=5`, `4` or `3,4,5` into an explicit level list.
fn parse_levels(spec: &str) -> Result<Vec<u32>> {
    let bad = |why: &str| Error::Config(format!("level range '{spec}': {why}"));
    let parse_one = |s: &str| -> Result<u32> {
        s.trim()
            .parse::<u32>()
            .map_err(|_| bad("expected an unsigned integer"))
    };
    let levels: Vec<u32> = if let Some((lo, hi)) = spec.split_once("..=") {
        let (lo, hi) = (parse_one(lo)?, parse_one(hi)?);
        if hi < lo {
            return Err(bad("empty range"));
        }
        (lo..=hi).collect()
    } else if let Some((lo, hi)) = spec.split_once("..") {
        let (lo, hi) = (parse_one(lo)?, parse_one(hi)?);
        if hi <= lo {
            return Err(bad("empty range"));
        }
        (lo..hi).collect()
    } else if spec.contains(',') {
        spec.split(',').map(parse_one).collect::<Result<_>>()?
    } else {
        vec![parse_one(spec)?]
    };
    Ok(levels)
}

/// Prints a warning when the requested step exceeds the certified bound for
/// the run's discretisation (the simulation proceeds regardless).
fn stability_warning(run: &BenchRun) -> Result<()> {
    let bracket = default_step_bracket(&run.mesh, &run.materials);
    let tau_max = match (run.method, run.reduction.as_ref()) {
        (BenchMethod::Nc1, _) | (_, None) => {
            estimate_tau_max(&run.mesh, &run.full_map, &run.materials, None, 0.0, bracket)?
        }
        (_, Some(red)) => {
            estimate_tau_max(&run.mesh, &run.full_map, &run.materials, Some(red), 1.0, bracket)?
        }
    };
    if run.tau() > tau_max {
        eprintln!(
            "warning: step {:.6e} exceeds the certified bound {:.6e} for method {}; \
             the run may be unstable",
            run.tau(),
            tau_max,
            run.method.name()
        );
    }
    Ok(())
}

fn write_output(out: &str, content: &str) -> Result<()> {
    if out == "-" {
        print!("{content}");
    } else {
        fs::write(Path::new(out), content)?;
    }
    Ok(())
}

fn cmd_mesh(action: MeshAction) -> Result<()> {
    match action {
        MeshAction::Gen {
            scenario,
            level,
            out,
        } => {
            let sc = scenario.build()?;
            let mesh = generate_scatterer_mesh(&sc.geometry, level)?;
            write_mesh_file(&out, &mesh)?;
            println!(
                "wrote level-{level} mesh: {} vertices, {} triangles, h = {:.6}",
                mesh.n_vertices(),
                mesh.n_triangles(),
                mesh.max_edge_length()
            );
            Ok(())
        }
        MeshAction::Refine { input, out } => {
            let mesh = read_mesh_file(&input)?;
            let fine = mesh.refine_uniform()?;
            write_mesh_file(&out, &fine)?;
            println!(
                "refined level {} -> {}: {} triangles, h = {:.6}",
                mesh.level,
                fine.level,
                fine.n_triangles(),
                fine.max_edge_length()
            );
            Ok(())
        }
        MeshAction::Info { input } => {
            let mesh = read_mesh_file(&input)?;
            let obstacle = mesh.labels.iter().filter(|&&l| l == 1).count();
            let boundary = mesh.boundary_edges().count();
            println!("level:      {}", mesh.level);
            println!("vertices:   {}", mesh.n_vertices());
            println!("triangles:  {} ({obstacle} in the obstacle)", mesh.n_triangles());
            println!("edges:      {} ({boundary} on the boundary)", mesh.n_edges());
            println!("mesh size:  {:.6}", mesh.max_edge_length());
            Ok(())
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let sc = args.scenario.build()?;
    let method = BenchMethod::parse(&args.method)?;
    let rhs = RhsMode::parse(&args.rhs)?;
    let format = SnapshotFormat::parse(&args.format)?;
    if !(args.cfl > 0.0) || !args.cfl.is_finite() {
        return Err(Error::Config(format!(
            "the step factor must be positive, got {}",
            args.cfl
        )));
    }
    let mesh = generate_scatterer_mesh(&sc.geometry, args.level)?;
    let h = mesh.max_edge_length();
    let run = BenchRun::new(&sc, mesh, method, rhs, args.cfl * h)?;
    if !args.no_stability_check {
        stability_warning(&run)?;
    }
    let energy = match args.energy_every {
        0 => EnergyRecording::None,
        1 => EnergyRecording::EveryStep,
        k => EnergyRecording::EveryN(k),
    };
    let config = run.schedule(energy);
    let energy_ops = match energy {
        EnergyRecording::None => None,
        _ => Some(fetd::timestep::EnergyOperators::new(
            &run.mesh,
            &run.full_map,
            &run.materials,
            run.reduction.as_ref(),
        )?),
    };
    let record = run.run(&config, energy_ops.as_ref())?;

    fs::create_dir_all(&args.out)?;
    if !record.energy.is_empty() {
        fs::write(args.out.join("energy.csv"), energy_csv(&record.energy))?;
    }
    // Snapshots are stored on the stepping space; export wants full-space
    // fields, so prolong merged ones.
    let full_snapshots: Vec<(usize, fetd::fem::dofmap::DofVector)> = record
        .snapshots
        .iter()
        .map(|(s, v)| -> Result<_> {
            let vf = match run.reduction.as_ref() {
                Some(red) => red.prolong(v)?,
                None => v.clone(),
            };
            Ok((*s, vf))
        })
        .collect::<Result<_>>()?;
    let full_record = SolutionRecord {
        tau: record.tau,
        snapshots: full_snapshots,
        energy: Vec::new(),
        state: record.state,
    };
    let ext = match format {
        SnapshotFormat::Csv => "csv",
        SnapshotFormat::VtkLegacy => "vtk",
    };
    for &(step, _) in &full_record.snapshots {
        let t = step as f64 * full_record.tau;
        let content = export_snapshot(&run.mesh, &run.full_map, &full_record, t, format)?;
        fs::write(args.out.join(format!("snapshot_t{t:.4}.{ext}")), content)?;
    }
    println!(
        "ran {} ({} loads) at level {}: {} dofs, tau = {:.6e}, {} steps, {} snapshots",
        method.name(),
        rhs.name(),
        args.level,
        run.n_dofs(),
        run.tau(),
        config.final_step,
        full_record.snapshots.len()
    );
    Ok(())
}

fn cmd_convergence(args: ConvergenceArgs) -> Result<()> {
    let sc = args.scenario.build()?;
    let method = BenchMethod::parse(&args.method)?;
    let rhs = RhsMode::parse(&args.rhs)?;
    let levels = parse_levels(&args.levels)?;
    let rows = convergence_study(&sc, method, rhs, &levels, args.cfl)?;
    write_output(&args.out, &convergence_csv(&rows))
}

fn cmd_cfl(args: CflArgs) -> Result<()> {
    let sc = args.scenario.build()?;
    let levels = parse_levels(&args.levels)?;
    let rows = cfl_table(&sc, &levels)?;
    write_output(&args.out, &cfl_csv(&rows))
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let mut sc = args.scenario.build()?;
    let method = BenchMethod::parse(&args.method)?;
    let rhs = RhsMode::parse(&args.rhs)?;
    let format = SnapshotFormat::parse(&args.format)?;
    // Make sure the requested time is recorded even when the configured
    // snapshot list does not contain it.
    if !sc.snapshot_times.iter().any(|&t| (t - args.t).abs() < 1e-12) {
        sc.snapshot_times.push(args.t);
    }
    if sc.final_time < args.t {
        return Err(Error::Config(format!(
            "requested time {} lies beyond the final time {}",
            args.t, sc.final_time
        )));
    }
    let mesh = generate_scatterer_mesh(&sc.geometry, args.level)?;
    let h = mesh.max_edge_length();
    let run = BenchRun::new(&sc, mesh, method, rhs, args.cfl * h)?;
    let config = run.schedule(EnergyRecording::None);
    let record = run.run(&config, None)?;
    let full_snapshots: Vec<(usize, fetd::fem::dofmap::DofVector)> = record
        .snapshots
        .iter()
        .map(|(s, v)| -> Result<_> {
            let vf = match run.reduction.as_ref() {
                Some(red) => red.prolong(v)?,
                None => v.clone(),
            };
            Ok((*s, vf))
        })
        .collect::<Result<_>>()?;
    let full_record = SolutionRecord {
        tau: record.tau,
        snapshots: full_snapshots,
        energy: Vec::new(),
        state: record.state,
    };
    let content = export_snapshot(&run.mesh, &run.full_map, &full_record, args.t, format)?;
    write_output(&args.out, &content)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Mesh { action } => cmd_mesh(action),
        Command::Run(args) => cmd_run(args),
        Command::Convergence(args) => cmd_convergence(args),
        Command::Cfl(args) => cmd_cfl(args),
        Command::Export(args) => cmd_export(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_ranges_parse_in_all_supported_forms() {
        assert_eq!(parse_levels("3..6").unwrap(), vec![3, 4, 5]);
        assert_eq!(parse_levels("1..=3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_levels("0,2,4").unwrap(), vec![0, 2, 4]);
        assert_eq!(parse_levels("4").unwrap(), vec![4]);
        assert!(parse_levels("5..2").is_err());
        assert!(parse_levels("a..b").is_err());
    }

    #[test]
    fn scenario_flags_override_config_which_overrides_defaults() {
        let dir = std::env::temp_dir().join(format!("fetd-cli-test-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let cfg = dir.join("scenario.json");
        fs::write(&cfg, r#"{"sigma": 50.0, "final_time": 1.0}"#).unwrap();
        let args = ScenarioArgs {
            config: Some(cfg.clone()),
            radius: None,
            segments: None,
            final_time: Some(2.0),
            sigma: None,
        };
        let sc = args.build().unwrap();
        assert_eq!(sc.sigma, 50.0); // from config
        assert_eq!(sc.final_time, 2.0); // flag wins
        assert_eq!(sc.geometry.segments, 16); // default survives
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = std::env::temp_dir().join(format!("fetd-cli-junk-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let cfg = dir.join("scenario.json");
        fs::write(&cfg, r#"{"sigm": 50.0}"#).unwrap();
        let args = ScenarioArgs {
            config: Some(cfg.clone()),
            radius: None,
            segments: None,
            final_time: None,
            sigma: None,
        };
        assert!(matches!(args.build(), Err(Error::Config(_))));
        fs::remove_dir_all(&dir).unwrap();
    }
}
