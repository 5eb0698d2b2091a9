//! `tmsm`: analyze, simulate, anonymize, diagnose and compare.
//!
//! Exit status is 0 on success, 2 for unusable input and 3 when a model fit
//! fails.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tmsm_core::pipelines::{Method, PipelineConfig};
use tmsm_core::weights::TreatmentCovariates;

#[derive(Debug, Parser)]
#[command(
    name = "tmsm",
    version,
    about = "Hazard-ratio analyses of longitudinal transfusion cohorts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one or all analyses on a cohort file.
    Analyze {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
        #[arg(long, value_enum, default_value_t = MethodArg::All)]
        method: MethodArg,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Simulate a cohort with known truth.
    Simulate {
        /// Scenario TOML file; defaults apply to missing keys.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Shuffle baseline columns across subjects.
    Anonymize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Columns to permute.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "Arm,Hospital,Patient_ABORh,Transfusion_Year_first"
        )]
        columns: Vec<String>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Weight distributions by follow-up time and percentile summaries.
    Diagnose {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
        #[arg(long, default_value_t = 1)]
        binwidth: i32,
        #[arg(long, default_value_t = 28)]
        horizon: i32,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Replication study: simulate, analyze with each method, summarize.
    Compare {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 200)]
        replications: usize,
        #[arg(long, value_enum, default_value_t = MethodArg::All)]
        method: MethodArg,
        #[command(flatten)]
        out: OutputArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Directory for the output files; created if missing.
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Cap for the combined weights.
    #[arg(long)]
    truncate: Option<f64>,
    #[arg(long)]
    no_hospital: bool,
    #[arg(long)]
    no_blood_group: bool,
    #[arg(long)]
    no_year: bool,
    /// Interact the cumulative-count spline with hospital.
    #[arg(long)]
    spline_by_hospital: bool,
}

impl ModelArgs {
    fn config(&self) -> PipelineConfig {
        PipelineConfig {
            hospital: !self.no_hospital,
            blood_group: !self.no_blood_group,
            year: !self.no_year,
            spline_by_hospital: self.spline_by_hospital,
            treatment: TreatmentCovariates {
                year: !self.no_year,
                blood_group: !self.no_blood_group,
                hospital: !self.no_hospital,
            },
            truncation_cap: self.truncate,
            ..PipelineConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Restriction,
    Timevarying,
    Ipw,
    All,
}

impl MethodArg {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodArg::Restriction => vec![Method::Restriction],
            MethodArg::Timevarying => vec![Method::TimeVarying],
            MethodArg::Ipw => vec![Method::IpwMsm],
            MethodArg::All => Method::ALL.to_vec(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze {
            input,
            out,
            method,
            model,
        } => commands::analyze(&input, &out.output_dir, &method.methods(), &model.config()),
        Command::Simulate {
            scenario,
            seed,
            out,
        } => commands::simulate(scenario.as_deref(), seed, &out.output_dir),
        Command::Anonymize {
            input,
            seed,
            columns,
            out,
        } => commands::anonymize(&input, &columns, seed, &out.output_dir),
        Command::Diagnose {
            input,
            out,
            binwidth,
            horizon,
            model,
        } => commands::diagnose(&input, &out.output_dir, binwidth, horizon, &model.config()),
        Command::Compare {
            scenario,
            seed,
            replications,
            method,
            out,
            model,
        } => commands::compare(
            scenario.as_deref(),
            seed,
            replications,
            &method.methods(),
            &model.config(),
            &out.output_dir,
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
