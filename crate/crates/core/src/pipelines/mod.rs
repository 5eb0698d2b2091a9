//! The three hazard-ratio analyses and the protocol check.
//!
//! * Restriction keeps subjects who never left their initial arm and fits a
//!   baseline-covariate Cox model on one record per subject.
//! * Time-varying adjustment fits the counting-process rows with a restricted
//!   cubic spline of the cumulative transfusion count.
//! * The IPW marginal structural model chains treatment weights, censoring
//!   weights and a weighted Cox model of death on arm alone.
//!
//! All three report the hazard ratio of arm 1 versus arm 0 with a Wald
//! interval built from the cluster-robust standard error. The final IPW
//! model uses arm as a covariate, not as a stratum.

mod protocol;
mod report;

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::cox::{fit_cox, rcs_basis, CoxError, CoxFit, SplineError, SurvivalRecord};
use crate::data_model::{ArmCode, Cohort, IntervalRow};
use crate::design::DesignMatrix;
use crate::stats::thousands;
use crate::weights::{
    combine_and_truncate, ipcw_survival, iptw_point, CensoringCovariate, Percentiles,
    TreatmentCovariates, WeightError,
};

pub use protocol::{check_protocol, Finding, ProtocolSpec};
pub use report::{format_hr, render_table, ArmTally};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("NoAdherentSubjects: every subject in arms 0/1 was censored")]
    NoAdherentSubjects,
    #[error("no subjects in arms 0 and 1")]
    NoContrastSubjects,
    #[error("the analysis population contains only arm {0}")]
    SingleArm(ArmCode),
    #[error("{0}")]
    Cox(#[from] CoxError),
    #[error("{0}")]
    Weights(#[from] WeightError),
}

impl PipelineError {
    /// Failures of a model fit rather than of the input.
    pub fn is_numerical(&self) -> bool {
        match self {
            PipelineError::Cox(CoxError::NoEvents) => false,
            PipelineError::Cox(_) => true,
            PipelineError::Weights(
                WeightError::Glm(_) | WeightError::Cox(_) | WeightError::NonPositive { .. },
            ) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Restriction,
    TimeVarying,
    IpwMsm,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Restriction, Method::TimeVarying, Method::IpwMsm];

    pub fn label(self) -> &'static str {
        match self {
            Method::Restriction => "Restriction",
            Method::TimeVarying => "Time-varying",
            Method::IpwMsm => "IPW",
        }
    }
}

/// Covariates and weighting options shared by the pipelines.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    /// Categorical baseline covariates of the restriction and time-varying
    /// models.
    pub hospital: bool,
    pub blood_group: bool,
    pub year: bool,
    /// Spline-by-hospital interaction in the time-varying model.
    pub spline_by_hospital: bool,
    /// Denominator covariates of the treatment model.
    pub treatment: TreatmentCovariates,
    /// Denominator covariates of the censoring model.
    pub censoring: Vec<CensoringCovariate>,
    /// Cap for the combined weights; `None` or infinite means no cap.
    pub truncation_cap: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            hospital: true,
            blood_group: true,
            year: true,
            spline_by_hospital: false,
            treatment: TreatmentCovariates::default(),
            censoring: vec![CensoringCovariate::ArmTotalCum],
            truncation_cap: None,
        }
    }
}

/// Weight summaries carried by the IPW report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSummary {
    pub iptw: Percentiles,
    pub ipcw: Percentiles,
    pub combined: Percentiles,
    /// Summary of the weights actually used, after any truncation.
    pub used: Percentiles,
    pub truncation_cap: Option<f64>,
    pub n_extreme: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub method: Method,
    pub hr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub log_hr: f64,
    pub robust_se: f64,
    /// Arms 0 and 1, in that order.
    pub arms: Vec<ArmTally>,
    pub weight_percentiles: Option<WeightSummary>,
    pub notes: Vec<String>,
    pub n_events: usize,
    pub converged: bool,
}

impl AnalysisReport {
    /// Confidence interval covers `hr`.
    pub fn covers(&self, hr: f64) -> bool {
        self.ci_low <= hr && hr <= self.ci_high
    }

    pub fn formatted_hr(&self) -> String {
        format_hr(self.hr, self.ci_low, self.ci_high)
    }
}

fn tally(subjects: impl Iterator<Item = (ArmCode, bool)>) -> Vec<ArmTally> {
    let mut arms = vec![
        ArmTally::new(ArmCode::Reference),
        ArmTally::new(ArmCode::ExposedEverPregnant),
    ];
    for (arm, death) in subjects {
        if let Some(t) = arms.iter_mut().find(|t| t.arm == arm.code()) {
            t.recipients += 1;
            t.deaths += usize::from(death);
        }
    }
    arms
}

fn check_both_arms(arms: &[ArmTally]) -> Result<(), PipelineError> {
    if arms[1].recipients == 0 {
        return Err(PipelineError::SingleArm(ArmCode::Reference));
    }
    if arms[0].recipients == 0 {
        return Err(PipelineError::SingleArm(ArmCode::ExposedEverPregnant));
    }
    Ok(())
}

/// Adds the categorical baseline covariates for `rows`, using `cohort`'s
/// level order.
fn push_baseline(
    design: &mut DesignMatrix,
    rows: &[&IntervalRow],
    cohort: &Cohort,
    config: &PipelineConfig,
) {
    if config.hospital {
        let labels: Vec<&str> = rows.iter().map(|r| r.hospital.as_str()).collect();
        design
            .push_categorical_with_levels("Hospital", &labels, cohort.hospital_levels())
            .expect("fresh names");
    }
    if config.blood_group {
        let labels: Vec<&str> = rows.iter().map(|r| r.patient_abo_rh.as_str()).collect();
        design
            .push_categorical_with_levels("Patient_ABORh", &labels, cohort.abo_levels())
            .expect("fresh names");
    }
    if config.year {
        let labels: Vec<String> = rows
            .iter()
            .map(|r| r.transfusion_year_first.to_string())
            .collect();
        let levels: Vec<String> = cohort.year_levels().iter().map(|y| y.to_string()).collect();
        design
            .push_categorical_with_levels("Transfusion_Year_first", &labels, &levels)
            .expect("fresh names");
    }
}

fn cluster_ids(cohort: &Cohort) -> Vec<usize> {
    let mut ids: HashMap<&str, usize> = HashMap::new();
    cohort
        .subjects()
        .iter()
        .map(|s| {
            let next = ids.len();
            *ids.entry(s.cluster.as_str()).or_insert(next)
        })
        .collect()
}

struct ArmFit {
    fit: CoxFit,
    index: usize,
    dropped: Vec<String>,
}

/// Fits a Cox model whose first design column is the arm indicator,
/// dropping constant or aliased columns first.
fn fit_with_arm(
    design: &DesignMatrix,
    spans: &[(f64, f64, bool)],
    clusters: &[usize],
    weights: Option<&[f64]>,
) -> Result<ArmFit, PipelineError> {
    let (keep, mut dropped) = design.independent_columns(true);
    let mut design = design.select(&keep);
    let mut diverged = Vec::new();
    loop {
        let index = design
            .names()
            .iter()
            .position(|n| n == "Arm")
            .ok_or(PipelineError::SingleArm(ArmCode::Reference))?;
        let records: Vec<SurvivalRecord> = spans
            .iter()
            .enumerate()
            .map(|(i, &(t_begin, t_end, event))| SurvivalRecord {
                cluster: clusters[i],
                t_begin,
                t_end,
                event,
                covariates: design.row(i),
                weight: weights.map_or(1.0, |w| w[i]),
                stratum: None,
            })
            .collect();
        match fit_cox(&records) {
            Ok(fit) => {
                dropped.extend(diverged);
                return Ok(ArmFit {
                    fit,
                    index,
                    dropped,
                });
            }
            // A nuisance level without events (or with only events) has no
            // finite coefficient; it is merged into the reference level.
            Err(CoxError::MonotoneLikelihood { coefficient }) if coefficient != index => {
                diverged.push(format!("{} (diverged)", design.columns()[coefficient].name));
                let keep: Vec<usize> = (0..design.n_cols()).filter(|&j| j != coefficient).collect();
                design = design.select(&keep);
            }
            Err(e) => return Err(e.into()),
        }
    }
}

fn report(
    method: Method,
    af: ArmFit,
    arms: Vec<ArmTally>,
    mut notes: Vec<String>,
) -> AnalysisReport {
    let beta = af.fit.beta[af.index];
    let se = af.fit.robust_se()[af.index];
    if !af.dropped.is_empty() {
        notes.push(format!(
            "dropped constant or aliased columns: {}",
            af.dropped.join(", ")
        ));
    }
    AnalysisReport {
        method,
        hr: beta.exp(),
        ci_low: (beta - Z95 * se).exp(),
        ci_high: (beta + Z95 * se).exp(),
        log_hr: beta,
        robust_se: se,
        arms,
        weight_percentiles: None,
        notes,
        n_events: af.fit.n_events,
        converged: af.fit.converged,
    }
}

/// Cox model on subjects who were never censored, one record per subject
/// from day 0 to the end of follow-up.
pub fn run_restriction(
    cohort: &Cohort,
    config: &PipelineConfig,
) -> Result<AnalysisReport, PipelineError> {
    let adherent = cohort
        .filter_subjects(|rows| rows[0].arm.in_contrast() && !rows[rows.len() - 1].censored)
        .ok_or(PipelineError::NoAdherentSubjects)?;
    let finals: Vec<&IntervalRow> = adherent.final_rows().collect();
    let arms = tally(finals.iter().map(|r| (r.arm, r.death)));
    check_both_arms(&arms)?;

    let mut design = DesignMatrix::new(finals.len());
    design
        .push_continuous(
            "Arm",
            finals.iter().map(|r| r.arm.exposure_indicator()).collect(),
        )
        .expect("fresh");
    push_baseline(&mut design, &finals, &adherent, config);
    let spans: Vec<_> = finals
        .iter()
        .map(|r| (0.0, f64::from(r.t_end_new), r.death))
        .collect();
    let af = fit_with_arm(&design, &spans, &cluster_ids(&adherent), None)?;
    Ok(report(Method::Restriction, af, arms, Vec::new()))
}

/// Counting-process Cox model with arm, a spline of `Arm_Total_cum` and the
/// baseline covariates. Censored subjects leave the risk set without an
/// event at their censoring time.
pub fn run_time_varying(
    cohort: &Cohort,
    config: &PipelineConfig,
) -> Result<AnalysisReport, PipelineError> {
    let contrast = cohort
        .contrast_arms()
        .ok_or(PipelineError::NoContrastSubjects)?;
    let arms = tally(contrast.final_rows().map(|r| (r.arm, r.death)));
    check_both_arms(&arms)?;
    let rows: Vec<&IntervalRow> = contrast.rows().iter().collect();
    let mut notes = Vec::new();

    let mut design = DesignMatrix::new(rows.len());
    design
        .push_continuous(
            "Arm",
            rows.iter().map(|r| r.arm.exposure_indicator()).collect(),
        )
        .expect("fresh");
    let count: Vec<f64> = rows.iter().map(|r| f64::from(r.arm_total_cum)).collect();
    let spline = match rcs_basis(&count, None) {
        Ok(b) => {
            design
                .push_continuous("rcs(Arm_Total_cum)", b.linear.clone())
                .expect("fresh");
            design
                .push_continuous("rcs(Arm_Total_cum)'", b.nonlinear.clone())
                .expect("fresh");
            Some(b)
        }
        Err(SplineError::DegenerateKnots(k)) => {
            notes.push(format!(
                "spline knots {k:?} are degenerate; Arm_Total_cum enters linearly"
            ));
            design
                .push_continuous("Arm_Total_cum", count.clone())
                .expect("fresh");
            None
        }
        Err(SplineError::Empty) => None,
    };
    push_baseline(&mut design, &rows, &contrast, config);
    if config.spline_by_hospital {
        let hospitals = contrast.hospital_levels();
        let terms: Vec<(String, Vec<f64>)> = match &spline {
            Some(b) => vec![
                ("rcs".into(), b.linear.clone()),
                ("rcs'".into(), b.nonlinear.clone()),
            ],
            None => vec![("Arm_Total_cum".into(), count.clone())],
        };
        for h in hospitals.iter().skip(1) {
            for (name, values) in &terms {
                let col = rows
                    .iter()
                    .zip(values)
                    .map(|(r, v)| if &r.hospital == h { *v } else { 0.0 })
                    .collect();
                design
                    .push_continuous(&format!("{name}:Hospital={h}"), col)
                    .expect("fresh");
            }
        }
    }

    let row_cluster = row_clusters(&contrast);
    let spans: Vec<_> = rows
        .iter()
        .map(|r| (f64::from(r.t_begin), f64::from(r.t_end_new), r.death))
        .collect();
    let af = fit_with_arm(&design, &spans, &row_cluster, None)?;
    Ok(report(Method::TimeVarying, af, arms, notes))
}

fn row_clusters(cohort: &Cohort) -> Vec<usize> {
    let per_subject = cluster_ids(cohort);
    let mut out = vec![0; cohort.rows().len()];
    for (s, c) in cohort.subjects().iter().zip(per_subject) {
        out[s.rows.clone()].iter_mut().for_each(|x| *x = c);
    }
    out
}

/// Treatment weights on all arms, then censoring weights on arms 0/1, then a
/// weighted Cox model of death on arm alone over the uncensored rows.
pub fn run_ipw_msm(
    cohort: &Cohort,
    config: &PipelineConfig,
) -> Result<AnalysisReport, PipelineError> {
    let iptw = iptw_point(cohort, config.treatment)?;
    let mut notes = Vec::new();
    if let Some(p) = &iptw.positivity {
        notes.push(format!(
            "PositivityWarning: {} subjects with a treatment probability below 0.001 (min {:.2e})",
            thousands(p.n_subjects),
            p.min_probability
        ));
    }
    if !iptw.separated_columns.is_empty() {
        notes.push(format!(
            "treatment model dropped diverging columns: {}",
            iptw.separated_columns.join(", ")
        ));
    }
    if !iptw.denominator.converged {
        notes.push("treatment model did not converge".into());
    }
    let contrast = cohort
        .contrast_arms()
        .ok_or(PipelineError::NoContrastSubjects)?;
    let arms = tally(contrast.final_rows().map(|r| (r.arm, r.death)));
    check_both_arms(&arms)?;
    let iptw_c = iptw.weights.restrict(cohort, &contrast)?;
    let ipcw = ipcw_survival(&contrast, &config.censoring, &iptw_c)?;
    if !ipcw.dropped_columns.is_empty() {
        notes.push(format!(
            "censoring model dropped: {}",
            ipcw.dropped_columns.join(", ")
        ));
    }
    let untruncated = combine_and_truncate(&iptw_c, &ipcw.weights, None)?;
    let used = match config.truncation_cap.filter(|c| c.is_finite()) {
        Some(_) => combine_and_truncate(&iptw_c, &ipcw.weights, config.truncation_cap)?,
        None => untruncated.clone(),
    };

    let row_cluster = row_clusters(&contrast);
    let keep: Vec<usize> = (0..contrast.rows().len())
        .filter(|&i| !contrast.rows()[i].censored)
        .collect();
    let rows = contrast.rows();
    let mut design = DesignMatrix::new(keep.len());
    design
        .push_continuous(
            "Arm",
            keep.iter()
                .map(|&i| rows[i].arm.exposure_indicator())
                .collect(),
        )
        .expect("fresh");
    let spans: Vec<_> = keep
        .iter()
        .map(|&i| {
            (
                f64::from(rows[i].t_begin),
                f64::from(rows[i].t_end_new),
                rows[i].death,
            )
        })
        .collect();
    let clusters: Vec<usize> = keep.iter().map(|&i| row_cluster[i]).collect();
    let weights: Vec<f64> = keep.iter().map(|&i| used.values[i]).collect();
    let af = fit_with_arm(&design, &spans, &clusters, Some(&weights))?;

    let mut out = report(Method::IpwMsm, af, arms, notes);
    out.weight_percentiles = Some(WeightSummary {
        iptw: iptw_c.percentiles,
        ipcw: ipcw.weights.percentiles,
        combined: untruncated.percentiles,
        used: used.percentiles,
        truncation_cap: used.truncation_cap,
        n_extreme: untruncated.n_extreme,
    });
    Ok(out)
}

pub fn run_method(
    method: Method,
    cohort: &Cohort,
    config: &PipelineConfig,
) -> Result<AnalysisReport, PipelineError> {
    match method {
        Method::Restriction => run_restriction(cohort, config),
        Method::TimeVarying => run_time_varying(cohort, config),
        Method::IpwMsm => run_ipw_msm(cohort, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{expand_followup, validate_cohort, RawFollowup};

    fn raw(
        pin: usize,
        arm: ArmCode,
        hospital: &str,
        exit: i32,
        death: bool,
        switch: Option<i32>,
    ) -> RawFollowup {
        RawFollowup {
            pin: pin.to_string(),
            arm,
            transfusion_year_first: 2010 + (pin % 2) as i32,
            patient_abo_rh: if pin.is_multiple_of(3) { "A+" } else { "O+" }.into(),
            hospital: hospital.into(),
            exit_day: exit,
            death_at_exit: death,
            switch_day: switch,
            transfusion_days: vec![0],
        }
    }

    fn cohort(raws: &[RawFollowup]) -> Cohort {
        validate_cohort(
            raws.iter()
                .flat_map(|r| expand_followup(r).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn all_censored_has_no_adherent_subjects() {
        let raws: Vec<_> = (0..4)
            .map(|i| {
                raw(
                    i,
                    if i % 2 == 0 {
                        ArmCode::Reference
                    } else {
                        ArmCode::ExposedEverPregnant
                    },
                    "H",
                    10,
                    false,
                    Some(3),
                )
            })
            .collect();
        assert_eq!(
            run_restriction(&cohort(&raws), &PipelineConfig::default()).unwrap_err(),
            PipelineError::NoAdherentSubjects
        );
    }

    #[test]
    fn counts_are_per_arm() {
        let raws = vec![
            raw(0, ArmCode::Reference, "H", 10, true, None),
            raw(1, ArmCode::Reference, "H", 12, false, None),
            raw(2, ArmCode::ExposedEverPregnant, "H", 8, true, None),
            raw(3, ArmCode::ExposedEverPregnant, "H", 40, false, Some(4)),
            raw(4, ArmCode::OtherMixed, "H", 40, true, None),
            raw(5, ArmCode::Reference, "H", 7, true, None),
        ];
        let c = cohort(&raws);
        let config = PipelineConfig {
            hospital: false,
            blood_group: false,
            year: false,
            ..Default::default()
        };
        let r = run_restriction(&c, &config).unwrap();
        assert_eq!(
            r.arms[0],
            ArmTally {
                arm: 0,
                deaths: 2,
                recipients: 3
            }
        );
        assert_eq!(
            r.arms[1],
            ArmTally {
                arm: 1,
                deaths: 1,
                recipients: 1
            }
        );
        let t = run_time_varying(&c, &config).unwrap();
        assert_eq!(
            t.arms[1],
            ArmTally {
                arm: 1,
                deaths: 1,
                recipients: 2
            }
        );
        assert!(t.ci_low <= t.hr && t.hr <= t.ci_high);
        assert!(t.notes.iter().any(|n| n.contains("degenerate")));
    }

    #[test]
    fn single_arm_is_rejected() {
        let raws: Vec<_> = (0..3)
            .map(|i| raw(i, ArmCode::Reference, "H", 5 + i as i32, true, None))
            .collect();
        assert!(matches!(
            run_time_varying(&cohort(&raws), &PipelineConfig::default()),
            Err(PipelineError::SingleArm(_))
        ));
    }
}
