use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use tmsm_core::data_model::{
    read_cohort, summarize_cohort, write_cohort_to_string, CohortSummary, DataError,
};
use tmsm_core::pipelines::{
    check_protocol, render_table, run_method, AnalysisReport, Finding, Method, PipelineConfig,
    PipelineError, ProtocolSpec,
};
use tmsm_core::simulator::{
    permutation_null, simulate_cohort, BaselineColumn, SimError, SimScenario,
};
use tmsm_core::study::{run_study, MethodSummary, StudyReport};
use tmsm_core::weights::{
    combine_and_truncate, ipcw_survival, iptw_point, render_bins, weight_distribution_by_time,
    Percentiles, WeightError,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl From<WeightError> for CliError {
    fn from(e: WeightError) -> Self {
        PipelineError::Weights(e).into()
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn to_json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

fn load_scenario(path: Option<&Path>, seed: Option<u64>) -> Result<SimScenario, CliError> {
    let mut s = match path {
        Some(p) => SimScenario::load(p)?,
        None => SimScenario::default(),
    };
    if let Some(seed) = seed {
        s.seed = seed;
    }
    s.validate()?;
    Ok(s)
}

#[derive(Serialize)]
struct AnalyzeOutput<'a> {
    summary: &'a CohortSummary,
    protocol_findings: Vec<Finding>,
    reports: &'a [AnalysisReport],
}

/// Writes `report.json`, `table.tsv` and `summary.tsv`. Stops at the first
/// failing method.
pub fn analyze(
    input: &Path,
    out: &Path,
    methods: &[Method],
    config: &PipelineConfig,
) -> Result<(), CliError> {
    let cohort = read_cohort(input)?;
    let summary = summarize_cohort(&cohort);
    let findings = check_protocol(&ProtocolSpec::canonical(), cohort.rows());
    let reports = methods
        .iter()
        .map(|&m| run_method(m, &cohort, config).map_err(CliError::from))
        .collect::<Result<Vec<_>, _>>()?;
    let output = AnalyzeOutput {
        summary: &summary,
        protocol_findings: findings,
        reports: &reports,
    };
    write(out, "report.json", &to_json(&output))?;
    write(out, "table.tsv", &render_table(&reports))?;
    write(out, "summary.tsv", &summary.to_string())?;
    print!("{}", render_table(&reports));
    Ok(())
}

/// Writes `cohort.csv`, `truth.json` and the resolved `scenario.toml`.
pub fn simulate(scenario: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let s = load_scenario(scenario, seed)?;
    let (cohort, truth) = simulate_cohort(&s)?;
    write(out, "cohort.csv", &write_cohort_to_string(&cohort))?;
    write(out, "truth.json", &to_json(&truth))?;
    write(out, "scenario.toml", &s.to_toml())?;
    println!(
        "{} subjects, {} rows, scenario {}",
        cohort.n_subjects(),
        cohort.rows().len(),
        truth.scenario_hash
    );
    Ok(())
}

/// Writes the permuted cohort to `cohort.csv`.
pub fn anonymize(input: &Path, columns: &[String], seed: u64, out: &Path) -> Result<(), CliError> {
    let columns = columns
        .iter()
        .map(|c| c.parse::<BaselineColumn>())
        .collect::<Result<Vec<_>, _>>()?;
    let cohort = read_cohort(input)?;
    let permuted = permutation_null(&cohort, &columns, seed);
    write(out, "cohort.csv", &write_cohort_to_string(&permuted))?;
    Ok(())
}

#[derive(Serialize)]
struct DiagnoseOutput {
    iptw: Percentiles,
    ipcw: Percentiles,
    combined: Percentiles,
    truncation_cap: Option<f64>,
    n_extreme: usize,
    n_censoring_events: usize,
}

/// Weights on the arm 0/1 rows: `weight_summary.json`, the combined weights
/// by time in `weights_by_time.tsv` and the censoring weights by time in
/// `ipcw_by_time.tsv`.
pub fn diagnose(
    input: &Path,
    out: &Path,
    binwidth: i32,
    horizon: i32,
    config: &PipelineConfig,
) -> Result<(), CliError> {
    let cohort = read_cohort(input)?;
    let iptw = iptw_point(&cohort, config.treatment)?;
    let contrast = cohort
        .contrast_arms()
        .ok_or(PipelineError::NoContrastSubjects)?;
    let iptw_c = iptw.weights.restrict(&cohort, &contrast)?;
    let ipcw = ipcw_survival(&contrast, &config.censoring, &iptw_c)?;
    let combined = combine_and_truncate(&iptw_c, &ipcw.weights, config.truncation_cap)?;
    let bins = weight_distribution_by_time(&combined, &contrast, binwidth, horizon)?;
    let ipcw_bins = weight_distribution_by_time(&ipcw.weights, &contrast, binwidth, horizon)?;
    let summary = DiagnoseOutput {
        iptw: iptw_c.percentiles,
        ipcw: ipcw.weights.percentiles,
        combined: combined.pre_truncation.unwrap_or(combined.percentiles),
        truncation_cap: combined.truncation_cap,
        n_extreme: combined.n_extreme,
        n_censoring_events: ipcw.n_censoring_events,
    };
    write(out, "weight_summary.json", &to_json(&summary))?;
    write(out, "weights_by_time.tsv", &render_bins(&bins))?;
    write(out, "ipcw_by_time.tsv", &render_bins(&ipcw_bins))?;
    Ok(())
}

fn render_study(methods: &[MethodSummary]) -> String {
    let mut out = String::from(
        "Method\tOK\tFailed\tMean log-HR\tBias\tEmpirical SE\tMean robust SE\tCoverage\n",
    );
    for m in methods {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.3}",
            m.method.label(),
            m.n_ok,
            m.n_failed,
            m.mean_log_hr,
            m.bias,
            m.empirical_se,
            m.mean_robust_se,
            m.coverage
        );
    }
    out
}

/// Writes `compare.json` and `compare.tsv`.
pub fn compare(
    scenario: Option<&Path>,
    seed: Option<u64>,
    replications: usize,
    methods: &[Method],
    config: &PipelineConfig,
    out: &Path,
) -> Result<(), CliError> {
    if replications == 0 {
        return Err(CliError::Input("replications must be positive".into()));
    }
    let s = load_scenario(scenario, seed)?;
    let report: StudyReport = run_study(&s, replications, methods, config)?;
    let table = render_study(&report.methods);
    write(out, "compare.json", &to_json(&report))?;
    write(out, "compare.tsv", &table)?;
    print!("{table}");
    Ok(())
}
