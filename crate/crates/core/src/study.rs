//! Replication studies: simulate, analyze with every method, summarize.

use rayon::prelude::*;
use serde::Serialize;

use crate::pipelines::{run_method, Method, PipelineConfig};
use crate::simulator::{simulate_cohort, SimError, SimScenario};
use crate::stats::{mean, sample_sd};

/// Seed of replicate `r`.
pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateResult {
    pub method: Method,
    pub log_hr: Option<f64>,
    pub robust_se: Option<f64>,
    pub covers_truth: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replicate {
    pub index: usize,
    pub seed: u64,
    pub feedback_correlation: f64,
    pub results: Vec<ReplicateResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean_log_hr: f64,
    pub bias: f64,
    /// Standard deviation of the estimates across replicates.
    pub empirical_se: f64,
    pub mean_robust_se: f64,
    /// Share of replicates whose interval covers the true hazard ratio.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub scenario_hash: String,
    pub true_log_hr: f64,
    pub n_subjects: usize,
    pub replications: usize,
    pub seed: u64,
    pub methods: Vec<MethodSummary>,
    pub replicates: Vec<Replicate>,
}

/// Runs `replications` independent simulate-then-analyze rounds. Replicates
/// run in parallel; results are ordered by replicate index.
pub fn run_study(
    scenario: &SimScenario,
    replications: usize,
    methods: &[Method],
    config: &PipelineConfig,
) -> Result<StudyReport, SimError> {
    scenario.validate()?;
    let truth_hr = scenario.true_log_hr.exp();
    let replicates = (0..replications)
        .into_par_iter()
        .map(|r| {
            let seed = replicate_seed(scenario.seed, r);
            let s = SimScenario {
                seed,
                ..scenario.clone()
            };
            let (cohort, truth) = simulate_cohort(&s)?;
            let results = methods
                .iter()
                .map(|&m| match run_method(m, &cohort, config) {
                    Ok(rep) => ReplicateResult {
                        method: m,
                        log_hr: Some(rep.log_hr),
                        robust_se: Some(rep.robust_se),
                        covers_truth: Some(rep.covers(truth_hr)),
                        error: None,
                    },
                    Err(e) => ReplicateResult {
                        method: m,
                        log_hr: None,
                        robust_se: None,
                        covers_truth: None,
                        error: Some(e.to_string()),
                    },
                })
                .collect();
            Ok(Replicate {
                index: r,
                seed,
                feedback_correlation: truth.feedback_correlation,
                results,
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;

    let summaries = methods
        .iter()
        .map(|&m| {
            let ok: Vec<&ReplicateResult> = replicates
                .iter()
                .flat_map(|r| r.results.iter())
                .filter(|x| x.method == m && x.log_hr.is_some())
                .collect();
            let est: Vec<f64> = ok.iter().filter_map(|x| x.log_hr).collect();
            let ses: Vec<f64> = ok.iter().filter_map(|x| x.robust_se).collect();
            let covered = ok.iter().filter(|x| x.covers_truth == Some(true)).count();
            let m_est = mean(&est).unwrap_or(f64::NAN);
            MethodSummary {
                method: m,
                n_ok: ok.len(),
                n_failed: replications - ok.len(),
                mean_log_hr: m_est,
                bias: m_est - scenario.true_log_hr,
                empirical_se: sample_sd(&est).unwrap_or(f64::NAN),
                mean_robust_se: mean(&ses).unwrap_or(f64::NAN),
                coverage: if ok.is_empty() {
                    f64::NAN
                } else {
                    covered as f64 / ok.len() as f64
                },
            }
        })
        .collect();

    Ok(StudyReport {
        scenario_hash: scenario.hash(),
        true_log_hr: scenario.true_log_hr,
        n_subjects: scenario.n_subjects,
        replications,
        seed: scenario.seed,
        methods: summaries,
        replicates,
    })
}
