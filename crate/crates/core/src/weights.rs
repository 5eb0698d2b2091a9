//! Stabilized treatment weights, censoring weights, their product and the
//! weight diagnostics.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::cox::{fit_cox, CoxError, CoxFit, PathSegment, SurvivalRecord};
use crate::data_model::{ArmCode, Cohort};
use crate::design::DesignMatrix;
use crate::glm::{
    fit_multinomial_with, predict_probabilities, GlmError, MultinomialFit, MultinomialOptions,
};
use crate::stats::{mean, quantile_sorted};

/// Denominator probabilities below this are reported.
pub const POSITIVITY_THRESHOLD: f64 = 0.001;
/// Weights above this are counted as extreme.
pub const EXTREME_WEIGHT: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error("AlignmentMismatch: {found} weights for {expected} rows")]
    AlignmentMismatch { expected: usize, found: usize },
    #[error("weight on row {row} is not a positive finite number")]
    NonPositive { row: usize },
    #[error("truncation cap must be positive, got {0}")]
    InvalidCap(f64),
    #[error("binwidth must be at least one day")]
    InvalidBinwidth,
    #[error("subject {0} has no weights")]
    UnknownSubject(String),
    #[error("treatment model: {0}")]
    Glm(#[from] GlmError),
    #[error("censoring model: {0}")]
    Cox(#[from] CoxError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Iptw,
    Ipcw,
    Combined,
    Truncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Percentiles {
    pub min: f64,
    /// 0.5th percentile.
    pub p005: f64,
    /// 99.5th percentile.
    pub p995: f64,
    pub max: f64,
    pub mean: f64,
}

impl Percentiles {
    pub fn of(values: &[f64]) -> Percentiles {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q = |p| quantile_sorted(&sorted, p).unwrap_or(f64::NAN);
        Percentiles {
            min: q(0.0),
            p005: q(0.005),
            p995: q(0.995),
            max: q(1.0),
            mean: mean(values).unwrap_or(f64::NAN),
        }
    }
}

/// Per-row weights aligned with the rows of the cohort they were built for.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSeries {
    pub kind: WeightKind,
    pub values: Vec<f64>,
    pub truncation_cap: Option<f64>,
    pub percentiles: Percentiles,
    /// Percentiles of the untruncated product, when a cap was applied.
    pub pre_truncation: Option<Percentiles>,
    /// Rows with weight above 10 before truncation; retained, only counted.
    pub n_extreme: usize,
}

impl WeightSeries {
    pub fn new(kind: WeightKind, values: Vec<f64>) -> Result<WeightSeries, WeightError> {
        if let Some(row) = values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(WeightError::NonPositive { row });
        }
        let n_extreme = values.iter().filter(|&&v| v > EXTREME_WEIGHT).count();
        Ok(WeightSeries {
            kind,
            percentiles: Percentiles::of(&values),
            values,
            truncation_cap: None,
            pre_truncation: None,
            n_extreme,
        })
    }

    pub fn ones(kind: WeightKind, n: usize) -> WeightSeries {
        WeightSeries::new(kind, vec![1.0; n]).expect("ones are valid weights")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_aligned(&self, cohort: &Cohort) -> Result<(), WeightError> {
        if self.values.len() != cohort.rows().len() {
            return Err(WeightError::AlignmentMismatch {
                expected: cohort.rows().len(),
                found: self.values.len(),
            });
        }
        Ok(())
    }

    /// Re-aligns weights built for `from` to the rows of `to`, a subject
    /// subset of `from`.
    pub fn restrict(&self, from: &Cohort, to: &Cohort) -> Result<WeightSeries, WeightError> {
        self.check_aligned(from)?;
        let ranges: HashMap<&str, std::ops::Range<usize>> = from.subject_index().collect();
        let mut values = Vec::with_capacity(to.rows().len());
        for (pin, range) in to.subject_index() {
            let src = ranges
                .get(pin)
                .ok_or_else(|| WeightError::UnknownSubject(pin.to_string()))?;
            if src.len() != range.len() {
                return Err(WeightError::AlignmentMismatch {
                    expected: range.len(),
                    found: src.len(),
                });
            }
            values.extend_from_slice(&self.values[src.clone()]);
        }
        let mut out = WeightSeries::new(self.kind, values)?;
        out.truncation_cap = self.truncation_cap;
        Ok(out)
    }
}

/// Denominator covariates of the treatment model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TreatmentCovariates {
    /// First-transfusion year, continuous.
    pub year: bool,
    pub blood_group: bool,
    pub hospital: bool,
}

impl Default for TreatmentCovariates {
    fn default() -> Self {
        TreatmentCovariates {
            year: true,
            blood_group: true,
            hospital: true,
        }
    }
}

impl TreatmentCovariates {
    pub const NONE: TreatmentCovariates = TreatmentCovariates {
        year: false,
        blood_group: false,
        hospital: false,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositivityWarning {
    /// Subjects with some arm probability below the threshold.
    pub n_subjects: usize,
    pub min_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IptwResult {
    pub weights: WeightSeries,
    /// One weight per subject, in cohort order.
    pub subject_weights: Vec<f64>,
    pub numerator: MultinomialFit,
    pub denominator: MultinomialFit,
    pub positivity: Option<PositivityWarning>,
    /// Denominator columns removed because their coefficient diverged.
    pub separated_columns: Vec<String>,
}

/// Stabilized weights `P(A = a) / P(A = a | L)` from multinomial models fit
/// on one baseline record per subject, broadcast to every row.
///
/// A denominator column whose coefficient diverges (a sparse level seen in
/// one arm only) is removed and the model refit; removed columns are listed
/// in the result.
pub fn iptw_point(
    cohort: &Cohort,
    covariates: TreatmentCovariates,
) -> Result<IptwResult, WeightError> {
    let base: Vec<_> = cohort.baseline_rows().collect();
    let n = base.len();
    let arms: Vec<String> = base.iter().map(|r| r.arm.code().to_string()).collect();
    let categories: Vec<String> = ArmCode::ALL
        .iter()
        .map(|a| a.code().to_string())
        .filter(|c| arms.contains(c))
        .collect();

    let intercept = DesignMatrix::with_intercept(n);
    let mut design = DesignMatrix::with_intercept(n);
    if covariates.year {
        design
            .push_continuous(
                "Transfusion_Year_first",
                base.iter()
                    .map(|r| f64::from(r.transfusion_year_first))
                    .collect(),
            )
            .expect("fresh design");
    }
    if covariates.blood_group {
        let labels: Vec<&str> = base.iter().map(|r| r.patient_abo_rh.as_str()).collect();
        design
            .push_categorical_with_levels("Patient_ABORh", &labels, cohort.abo_levels())
            .expect("fresh design");
    }
    if covariates.hospital {
        let labels: Vec<&str> = base.iter().map(|r| r.hospital.as_str()).collect();
        design
            .push_categorical_with_levels("Hospital", &labels, cohort.hospital_levels())
            .expect("fresh design");
    }

    let options = MultinomialOptions::default();
    let numerator = fit_multinomial_with(&intercept, &arms, &categories, options)?;
    let mut separated = Vec::new();
    let denominator = loop {
        if design.n_cols() == 1 {
            break numerator.clone();
        }
        match fit_multinomial_with(&design, &arms, &categories, options) {
            Ok(fit) => break fit,
            Err(GlmError::SeparationDetected { column, .. }) if column != "(Intercept)" => {
                let keep: Vec<usize> = (0..design.n_cols())
                    .filter(|&j| design.columns()[j].name != column)
                    .collect();
                design = design.select(&keep);
                separated.push(column);
            }
            Err(e) => return Err(e.into()),
        }
    };
    let p_num = predict_probabilities(&numerator, &intercept)?;
    let p_den = predict_probabilities(&denominator, &design)?;

    let mut subject_weights = Vec::with_capacity(n);
    let mut flagged = 0;
    let mut min_probability = f64::INFINITY;
    for (i, arm) in arms.iter().enumerate() {
        let k = categories
            .iter()
            .position(|c| c == arm)
            .expect("category list built from arms");
        subject_weights.push(p_num[(i, k)] / p_den[(i, k)]);
        let row_min = p_den.row(i).min();
        min_probability = min_probability.min(row_min);
        if row_min < POSITIVITY_THRESHOLD {
            flagged += 1;
        }
    }
    let positivity = (flagged > 0).then_some(PositivityWarning {
        n_subjects: flagged,
        min_probability,
    });

    let mut values = Vec::with_capacity(cohort.rows().len());
    for (s, w) in cohort.subjects().iter().zip(&subject_weights) {
        values.extend(std::iter::repeat_n(*w, s.rows.len()));
    }
    Ok(IptwResult {
        weights: WeightSeries::new(WeightKind::Iptw, values)?,
        subject_weights,
        numerator,
        denominator,
        positivity,
        separated_columns: separated,
    })
}

/// Time-varying covariates of the censoring model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CensoringCovariate {
    ArmTotalCum,
    Arm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IpcwResult {
    pub weights: WeightSeries,
    pub n_censoring_events: usize,
    /// Denominator coefficients by covariate name.
    pub denominator_coefficients: Vec<(String, f64)>,
    /// Covariates dropped because they were constant or aliased.
    pub dropped_columns: Vec<String>,
}

/// Censoring weights `S_num(t) / S_den(t | history)` from two weighted Cox
/// models of the censoring hazard on `(t_begin, t_end_new]` rows.
///
/// The numerator model has no covariates. The weight of a row includes the
/// hazard accumulated through the end of that row.
pub fn ipcw_survival(
    cohort: &Cohort,
    covariates: &[CensoringCovariate],
    prior: &WeightSeries,
) -> Result<IpcwResult, WeightError> {
    prior.check_aligned(cohort)?;
    let rows = cohort.rows();
    let n_events = rows.iter().filter(|r| r.censored).count();
    if n_events == 0 {
        return Ok(IpcwResult {
            weights: WeightSeries::ones(WeightKind::Ipcw, rows.len()),
            n_censoring_events: 0,
            denominator_coefficients: Vec::new(),
            dropped_columns: Vec::new(),
        });
    }

    let mut design = DesignMatrix::new(rows.len());
    for c in covariates {
        match c {
            CensoringCovariate::ArmTotalCum => design.push_continuous(
                "Arm_Total_cum",
                rows.iter().map(|r| f64::from(r.arm_total_cum)).collect(),
            ),
            CensoringCovariate::Arm => design.push_continuous(
                "Arm",
                rows.iter().map(|r| r.arm.exposure_indicator()).collect(),
            ),
        }
        .map_err(|e| {
            WeightError::Cox(CoxError::InvalidRecord {
                index: 0,
                reason: e.to_string(),
            })
        })?;
    }
    let (keep, dropped_columns) = design.independent_columns(true);
    let design = design.select(&keep);

    let mut cluster = vec![0; rows.len()];
    for (k, s) in cohort.subjects().iter().enumerate() {
        cluster[s.rows.clone()].iter_mut().for_each(|c| *c = k);
    }
    let records = |with_covariates: bool| -> Vec<SurvivalRecord> {
        rows.iter()
            .enumerate()
            .map(|(i, r)| SurvivalRecord {
                cluster: cluster[i],
                t_begin: f64::from(r.t_begin),
                t_end: f64::from(r.t_end_new),
                event: r.censored,
                covariates: if with_covariates {
                    design.row(i)
                } else {
                    Vec::new()
                },
                weight: prior.values[i],
                stratum: None,
            })
            .collect()
    };
    let numerator = fit_cox(&records(false))?;
    let denominator = if design.n_cols() == 0 {
        numerator.clone()
    } else {
        fit_cox(&records(true))?
    };

    let mut values = Vec::with_capacity(rows.len());
    for s in cohort.subjects() {
        let path = |fit: &CoxFit| -> Vec<PathSegment> {
            s.rows
                .clone()
                .map(|i| PathSegment {
                    t_begin: f64::from(rows[i].t_begin),
                    t_end: f64::from(rows[i].t_end_new),
                    covariates: if fit.beta.is_empty() {
                        Vec::new()
                    } else {
                        design.row(i)
                    },
                })
                .collect()
        };
        let num = numerator.path_cumulative_hazard(None, &path(&numerator))?;
        let den = denominator.path_cumulative_hazard(None, &path(&denominator))?;
        values.extend(num.iter().zip(&den).map(|(a, b)| (b - a).exp()));
    }
    Ok(IpcwResult {
        weights: WeightSeries::new(WeightKind::Ipcw, values)?,
        n_censoring_events: n_events,
        denominator_coefficients: design
            .names()
            .into_iter()
            .zip(denominator.beta.iter().copied())
            .collect(),
        dropped_columns,
    })
}

/// Elementwise product, optionally capped. A cap of `+inf` is the same as
/// no cap.
pub fn combine_and_truncate(
    iptw: &WeightSeries,
    ipcw: &WeightSeries,
    cap: Option<f64>,
) -> Result<WeightSeries, WeightError> {
    if iptw.len() != ipcw.len() {
        return Err(WeightError::AlignmentMismatch {
            expected: iptw.len(),
            found: ipcw.len(),
        });
    }
    if let Some(c) = cap {
        if c.is_nan() || c <= 0.0 {
            return Err(WeightError::InvalidCap(c));
        }
    }
    let product: Vec<f64> = iptw
        .values
        .iter()
        .zip(&ipcw.values)
        .map(|(a, b)| a * b)
        .collect();
    let combined = WeightSeries::new(WeightKind::Combined, product)?;
    match cap.filter(|c| c.is_finite()) {
        None => Ok(combined),
        Some(c) => truncate(&combined, c),
    }
}

/// Caps values at `cap`, keeping the pre-truncation summary.
pub fn truncate(w: &WeightSeries, cap: f64) -> Result<WeightSeries, WeightError> {
    if cap.is_nan() || cap <= 0.0 {
        return Err(WeightError::InvalidCap(cap));
    }
    let mut out = WeightSeries::new(
        WeightKind::Truncated,
        w.values.iter().map(|v| v.min(cap)).collect(),
    )?;
    out.truncation_cap = Some(w.truncation_cap.map_or(cap, |c| c.min(cap)));
    out.pre_truncation = Some(w.pre_truncation.unwrap_or(w.percentiles));
    out.n_extreme = w.n_extreme;
    Ok(out)
}

/// Distribution of the weights of rows whose `t_end` falls in `(lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightBin {
    pub lo: i32,
    pub hi: i32,
    pub count: usize,
    pub min: Option<f64>,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
    pub max: Option<f64>,
}

/// Bins `(k * binwidth, (k + 1) * binwidth]` covering `(0, horizon]`.
pub fn weight_distribution_by_time(
    w: &WeightSeries,
    cohort: &Cohort,
    binwidth: i32,
    horizon: i32,
) -> Result<Vec<WeightBin>, WeightError> {
    if binwidth < 1 {
        return Err(WeightError::InvalidBinwidth);
    }
    w.check_aligned(cohort)?;
    let n_bins = if horizon <= 0 {
        0
    } else {
        ((horizon + binwidth - 1) / binwidth) as usize
    };
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    for (r, &v) in cohort.rows().iter().zip(&w.values) {
        if r.t_end > 0 && r.t_end <= horizon {
            groups[((r.t_end - 1) / binwidth) as usize].push(v);
        }
    }
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(k, mut g)| {
            g.sort_by(f64::total_cmp);
            let q = |p| quantile_sorted(&g, p);
            WeightBin {
                lo: k as i32 * binwidth,
                hi: (k as i32 + 1) * binwidth,
                count: g.len(),
                min: q(0.0),
                q1: q(0.25),
                median: q(0.5),
                q3: q(0.75),
                max: q(1.0),
            }
        })
        .collect())
}

/// Tab-separated table: bin, count, min, q1, median, q3, max.
pub fn render_bins(bins: &[WeightBin]) -> String {
    let mut out = String::from("bin\tcount\tmin\tq1\tmedian\tq3\tmax\n");
    let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for b in bins {
        let _ = writeln!(
            out,
            "({},{}]\t{}\t{}\t{}\t{}\t{}\t{}",
            b.lo,
            b.hi,
            b.count,
            f(b.min),
            f(b.q1),
            f(b.median),
            f(b.q3),
            f(b.max)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{expand_followup, validate_cohort, RawFollowup};

    fn subject(
        pin: usize,
        arm: ArmCode,
        hospital: &str,
        exit: i32,
        switch: Option<i32>,
    ) -> RawFollowup {
        RawFollowup {
            pin: pin.to_string(),
            arm,
            transfusion_year_first: 2010,
            patient_abo_rh: "O+".into(),
            hospital: hospital.into(),
            exit_day: exit,
            death_at_exit: false,
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
    fn two_hospital_bayes_weights() {
        // H1: 8 exposed, 2 reference; H2: 2 exposed, 8 reference.
        let mut raws = Vec::new();
        for i in 0..20 {
            let (h, exposed) = if i < 10 {
                ("H1", i < 8)
            } else {
                ("H2", i < 12)
            };
            let arm = if exposed {
                ArmCode::ExposedEverPregnant
            } else {
                ArmCode::Reference
            };
            raws.push(subject(i, arm, h, 3, None));
        }
        let c = cohort(&raws);
        let cov = TreatmentCovariates {
            year: false,
            blood_group: false,
            hospital: true,
        };
        let r = iptw_point(&c, cov).unwrap();
        let expected = |i: usize| match (i < 10, i < 8 || (10..12).contains(&i)) {
            (true, true) | (false, false) => 0.625,
            _ => 2.5,
        };
        for (i, w) in r.subject_weights.iter().enumerate() {
            assert!((w - expected(i)).abs() < 1e-8, "subject {i}: {w}");
        }
        assert_eq!(r.weights.len(), 60);
        assert!(r.positivity.is_none());
    }

    #[test]
    fn intercept_only_denominator_gives_exact_ones() {
        let raws: Vec<_> = (0..6)
            .map(|i| {
                subject(
                    i,
                    if i % 3 == 0 {
                        ArmCode::OtherMixed
                    } else {
                        ArmCode::Reference
                    },
                    "H",
                    2,
                    None,
                )
            })
            .collect();
        let r = iptw_point(&cohort(&raws), TreatmentCovariates::NONE).unwrap();
        assert!(r.weights.values.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn no_censoring_gives_unit_ipcw() {
        let raws: Vec<_> = (0..4)
            .map(|i| subject(i, ArmCode::Reference, "H", 5 + i as i32, None))
            .collect();
        let c = cohort(&raws);
        let prior = WeightSeries::ones(WeightKind::Iptw, c.rows().len());
        let r = ipcw_survival(&c, &[CensoringCovariate::ArmTotalCum], &prior).unwrap();
        assert_eq!(r.n_censoring_events, 0);
        assert!(r.weights.values.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn constant_censoring_covariate_gives_unit_ipcw() {
        let raws = vec![
            subject(0, ArmCode::Reference, "H", 10, Some(3)),
            subject(1, ArmCode::Reference, "H", 10, None),
            subject(2, ArmCode::Reference, "H", 10, Some(6)),
        ];
        let c = cohort(&raws);
        let prior = WeightSeries::ones(WeightKind::Iptw, c.rows().len());
        let r = ipcw_survival(&c, &[CensoringCovariate::ArmTotalCum], &prior).unwrap();
        assert_eq!(r.dropped_columns, ["Arm_Total_cum"]);
        assert!(r.weights.values.iter().all(|&w| (w - 1.0).abs() < 1e-8));
    }

    fn series(values: &[f64]) -> WeightSeries {
        WeightSeries::new(WeightKind::Combined, values.to_vec()).unwrap()
    }

    #[test]
    fn truncation_caps_values() {
        let ones = series(&[1.0, 1.0, 1.0]);
        let t = combine_and_truncate(&series(&[0.5, 12.0, 10.0]), &ones, Some(10.0)).unwrap();
        assert_eq!(t.values, vec![0.5, 10.0, 10.0]);
        assert_eq!(t.pre_truncation.unwrap().max, 12.0);
        assert_eq!(t.percentiles.max, 10.0);
        assert_eq!(t.n_extreme, 1);
        let u = combine_and_truncate(&series(&[0.5, 12.0, 10.0]), &series(&[2.0, 0.5, 1.0]), None)
            .unwrap();
        assert_eq!(u.values, vec![1.0, 6.0, 10.0]);
        let inf =
            combine_and_truncate(&series(&[0.5, 12.0, 10.0]), &ones, Some(f64::INFINITY)).unwrap();
        assert_eq!(
            inf,
            combine_and_truncate(&series(&[0.5, 12.0, 10.0]), &ones, None).unwrap()
        );
    }

    #[test]
    fn truncation_reports_untruncated_maximum() {
        let t = combine_and_truncate(&series(&[1.0, 60.21509]), &series(&[1.0, 1.0]), Some(10.0))
            .unwrap();
        assert_eq!(t.pre_truncation.unwrap().max, 60.21509);
        assert_eq!(t.percentiles.max, 10.0);
    }

    #[test]
    fn truncation_is_idempotent_and_monotone() {
        let w = series(&[0.2, 3.0, 14.0, 8.0, 40.0]);
        let once = truncate(&w, 5.0).unwrap();
        let twice = truncate(&once, 5.0).unwrap();
        assert_eq!(once.values, twice.values);
        let wider = truncate(&w, 9.0).unwrap();
        assert!(once.values.iter().zip(&wider.values).all(|(a, b)| a <= b));
    }

    #[test]
    fn misaligned_and_invalid_inputs() {
        assert!(matches!(
            combine_and_truncate(&series(&[1.0]), &series(&[1.0, 2.0]), None),
            Err(WeightError::AlignmentMismatch { .. })
        ));
        assert!(matches!(
            combine_and_truncate(&series(&[1.0]), &series(&[1.0]), Some(0.0)),
            Err(WeightError::InvalidCap(_))
        ));
        assert!(matches!(
            WeightSeries::new(WeightKind::Iptw, vec![1.0, 0.0]),
            Err(WeightError::NonPositive { row: 1 })
        ));
    }

    #[test]
    fn bins_cover_horizon_in_order() {
        let raws: Vec<_> = (0..3)
            .map(|i| subject(i, ArmCode::Reference, "H", 10, None))
            .collect();
        let c = cohort(&raws);
        let w = WeightSeries::ones(WeightKind::Combined, c.rows().len());
        let bins = weight_distribution_by_time(&w, &c, 1, 28).unwrap();
        assert_eq!(bins.len(), 28);
        assert!(bins.windows(2).all(|b| b[0].hi == b[1].lo));
        assert_eq!(bins[0].count, 3);
        assert_eq!(bins[0].median, Some(1.0));
        assert_eq!(bins[0].q3.unwrap() - bins[0].q1.unwrap(), 0.0);
        assert_eq!(bins[20].count, 0);
        assert_eq!(bins[20].median, None);
        assert_eq!(render_bins(&bins).lines().count(), 29);
        assert!(matches!(
            weight_distribution_by_time(&w, &c, 0, 28),
            Err(WeightError::InvalidBinwidth)
        ));
    }

    #[test]
    fn restrict_follows_subject_order() {
        let raws = vec![
            subject(0, ArmCode::Reference, "H", 2, None),
            subject(1, ArmCode::OtherMixed, "H", 3, None),
            subject(2, ArmCode::ExposedEverPregnant, "H", 1, None),
        ];
        let c = cohort(&raws);
        let w = WeightSeries::new(WeightKind::Iptw, vec![1.0, 1.0, 2.0, 2.0, 2.0, 3.0]).unwrap();
        let sub = c.contrast_arms().unwrap();
        assert_eq!(w.restrict(&c, &sub).unwrap().values, vec![1.0, 1.0, 3.0]);
    }
}
