use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use sweptplan::pipeline::{self, PipelineError, RunOptions, Stage};
use sweptplan::scenario::parse_scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StageArg {
    Plan,
    Sweep,
    Track,
    Metrics,
    All,
}

/// Swept-area-aware trajectory planning and tracking for swerve-drive vehicles.
#[derive(Debug, Parser)]
#[command(name = "sweptplan", version)]
struct Cli {
    /// Stage to run; missing inputs are read from the output directory.
    #[arg(value_enum)]
    stage: StageArg,
    /// Scenario JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Swept-field grid resolution in metres.
    #[arg(long)]
    grid_res: Option<f64>,
    /// Run everything twice, with and without the swept-area cost.
    #[arg(long)]
    ablate_sv: bool,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Use the legacy wheel velocity matrix (`Vx + ω·Y`) for allocation.
    #[arg(long)]
    compat_paper_wheel_matrix: bool,
}

fn report_failure(out: &std::path::Path, err: &PipelineError) {
    eprintln!("error: {err}");
    if let Err(e) = pipeline::write_error_report(out, err) {
        eprintln!("error: cannot write error report: {e}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match std::env::var("SWEPTPLAN_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) => Some(n),
            Err(_) => {
                eprintln!("error: SWEPTPLAN_THREADS must be a nonnegative integer, got {v:?}");
                return ExitCode::from(2);
            }
        },
        Err(_) => None,
    };
    let scenario = match parse_scenario(&cli.config) {
        Ok(s) => s,
        Err(e) => {
            let err = PipelineError {
                stage: Stage::Scenario,
                module: "scenario".into(),
                kind: match &e {
                    sweptplan::scenario::ScenarioError::FileNotFound(_) => "FileNotFound",
                    sweptplan::scenario::ScenarioError::Io(_) => "Io",
                    sweptplan::scenario::ScenarioError::ParseError { .. } => "ParseError",
                    sweptplan::scenario::ScenarioError::ValidationError(..) => "ValidationError",
                }
                .into(),
                message: e.to_string(),
            };
            report_failure(&cli.out, &err);
            return ExitCode::from(2);
        }
    };
    let opts = RunOptions {
        out_dir: cli.out.clone(),
        threads,
        grid_res: cli.grid_res,
        seed: cli.seed,
        legacy_wheel_matrix: cli.compat_paper_wheel_matrix,
    };

    if cli.ablate_sv {
        if cli.stage != StageArg::All {
            eprintln!("error: --ablate-sv runs every stage; use it with `all`");
            return ExitCode::from(2);
        }
        return match pipeline::run_ablation(&scenario, &opts) {
            Ok(r) => {
                println!("excess swept area with sweep cost:    {:.4} m^2", r.sv_on.excess_swept_area);
                println!("excess swept area without sweep cost: {:.4} m^2", r.sv_off.excess_swept_area);
                println!("sweep cost not worse: {}", r.sv_on_not_worse);
                ExitCode::SUCCESS
            }
            Err(e) => {
                report_failure(&cli.out, &e);
                ExitCode::from(1)
            }
        };
    }

    let stages: Vec<Stage> = match cli.stage {
        StageArg::Plan => vec![Stage::Plan],
        StageArg::Sweep => vec![Stage::Sweep],
        StageArg::Track => vec![Stage::Track],
        StageArg::Metrics => vec![Stage::Metrics],
        StageArg::All => vec![Stage::Plan, Stage::Sweep, Stage::Track, Stage::Metrics],
    };
    match pipeline::run_pipeline(&scenario, &stages, &opts) {
        Ok(summary) => {
            if let Some(t) = summary.planning_time_s {
                println!("planning time: {t:.3} s");
            }
            if let Some(a) = summary.sweep_area {
                println!(
                    "planned swept area: {:.4} m^2 (baseline {:.4}, excess {:.4})",
                    a.swept_area, a.baseline_area, a.excess_area
                );
            }
            if let Some(m) = summary.metrics {
                println!("driven excess swept area: {:.4} m^2", m.excess_swept_area);
                println!("max |e_y|: {:.4} m, max |e_phi|: {:.4} deg", m.max_abs_e_y, m.max_abs_e_phi_deg);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            report_failure(&cli.out, &e);
            ExitCode::from(1)
        }
    }
}
