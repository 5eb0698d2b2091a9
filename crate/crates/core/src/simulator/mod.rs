//! Synthetic cohorts with a treatment-confounder feedback loop.
//!
//! Each subject gets hospital, blood group and first-transfusion year, a
//! frailty `U` and an arm drawn from a multinomial logit in those
//! covariates. Time runs in days. On each day, in this order:
//!
//! 1. an on-arm transfusion with probability `transfusion_demand_base *
//!    exp(-day / demand_decay_days) * exp(frailty_demand_loading * U) *
//!    (1 + hb_dose_gap * A * (L - 1))`, capped at 0.95, where `L` is the
//!    cumulative on-arm count,
//! 2. a first off-arm unit (censoring) with hazard `switch_hazard_base *
//!    exp(-day / demand_decay_days) * exp(switch_slope * (L - 1))`,
//! 3. death with hazard `death_hazard_base * exp(true_log_hr * A +
//!    frailty_death_loading * U + hospital effect)`.
//!
//! Leaving the arm depends on the observed count only, so censoring is
//! ignorable given the `Arm_Total_cum` history. Every subject draws from its
//! own ChaCha stream selected by `(seed, subject number)`.

mod scenario;

use std::collections::HashMap;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::data_model::{expand_followup, ArmCode, Cohort, IntervalRow, RawFollowup, TimeGrid};
use crate::stats::correlation;

pub use scenario::{SimScenario, BLOOD_GROUPS};

const MAX_DAILY_PROBABILITY: f64 = 0.95;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("InvalidScenario: {0}")]
    InvalidScenario(String),
    #[error("NonBaselineColumn: {0} is not a subject-level baseline column")]
    NonBaselineColumn(String),
}

/// Oracle bookkeeping for a simulated cohort.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimTruth {
    pub true_log_hr: f64,
    pub scenario_hash: String,
    /// Correlation, over arm 0/1 subjects, between the arm indicator and the
    /// number of transfusions after the first.
    pub feedback_correlation: f64,
    pub n_subjects: usize,
    pub n_lost_to_linkage: usize,
}

pub fn hospital_label(k: usize) -> String {
    format!("H{}", k + 1)
}

fn subject_rng(seed: u64, subject: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(subject);
    rng
}

struct Sampler<'a> {
    s: &'a SimScenario,
    hospital: WeightedIndex<f64>,
    blood_group: WeightedIndex<f64>,
    frailty: Option<Normal<f64>>,
}

impl Sampler<'_> {
    fn subject(&self, index: usize) -> (RawFollowup, bool) {
        let s = self.s;
        let mut rng = subject_rng(s.seed, index as u64);
        let h = self.hospital.sample(&mut rng);
        let g = self.blood_group.sample(&mut rng);
        let year = rng.random_range(s.year_first..=s.year_last);
        let u = self.frailty.map_or(0.0, |d| d.sample(&mut rng));

        let eta1 = s.arm1_log_odds_by_hospital[h]
            + s.arm1_year_slope * f64::from(year - s.year_first)
            + s.arm1_log_odds_by_blood_group[g];
        let (e1, e9) = (eta1.exp(), s.arm9_log_odds.exp());
        let draw: f64 = rng.random::<f64>() * (1.0 + e1 + e9);
        let arm = if draw < 1.0 {
            ArmCode::Reference
        } else if draw < 1.0 + e1 {
            ArmCode::ExposedEverPregnant
        } else {
            ArmCode::OtherMixed
        };
        let a = arm.exposure_indicator();

        let death_hazard = s.death_hazard_base
            * (s.true_log_hr * a + s.frailty_death_loading * u + s.hospital_death_log_hr[h]).exp();
        let p_death = 1.0 - (-death_hazard).exp();
        let demand_scale = s.transfusion_demand_base * (s.frailty_demand_loading * u).exp();

        let mut count = 1u32;
        let mut days = vec![0];
        let mut exit_day = s.max_followup_days;
        let mut death = false;
        let mut switch_day = None;
        for day in 1..=s.max_followup_days {
            let decay = (-f64::from(day) / s.demand_decay_days).exp();
            let feedback = 1.0 + s.hb_dose_gap * a * f64::from(count - 1);
            let demand = (demand_scale * decay * feedback).min(MAX_DAILY_PROBABILITY);
            if rng.random::<f64>() < demand {
                count += 1;
                days.push(day);
            }
            let switch_hazard =
                s.switch_hazard_base * decay * (s.switch_slope * f64::from(count - 1)).exp();
            if rng.random::<f64>() < 1.0 - (-switch_hazard).exp() {
                exit_day = day;
                switch_day = Some(day);
                break;
            }
            if rng.random::<f64>() < p_death {
                exit_day = day;
                death = true;
                break;
            }
        }
        let lost = s.linkage_loss > 0.0 && rng.random::<f64>() < s.linkage_loss;
        let raw = RawFollowup {
            pin: (index + 1).to_string(),
            arm,
            transfusion_year_first: year,
            patient_abo_rh: BLOOD_GROUPS[g].to_string(),
            hospital: hospital_label(h),
            exit_day,
            death_at_exit: death,
            switch_day,
            transfusion_days: days,
        };
        (raw, lost)
    }
}

/// Per-subject follow-up before expansion, in subject order, with the
/// linkage-loss flag.
pub fn simulate_followups(s: &SimScenario) -> Result<Vec<(RawFollowup, bool)>, SimError> {
    s.validate()?;
    let invalid = |e: rand_distr::weighted::Error| SimError::InvalidScenario(e.to_string());
    let sampler = Sampler {
        s,
        hospital: WeightedIndex::new(&s.hospital_probs).map_err(invalid)?,
        blood_group: WeightedIndex::new(&s.blood_group_probs).map_err(invalid)?,
        frailty: (s.frailty_sd > 0.0)
            .then(|| Normal::new(0.0, s.frailty_sd).expect("validated sd")),
    };
    Ok((0..s.n_subjects)
        .into_par_iter()
        .map(|i| sampler.subject(i))
        .collect())
}

pub fn simulate_cohort(s: &SimScenario) -> Result<(Cohort, SimTruth), SimError> {
    let subjects = simulate_followups(s)?;
    let kept: Vec<&RawFollowup> = subjects
        .iter()
        .filter(|(_, lost)| !lost)
        .map(|(r, _)| r)
        .collect();
    if kept.is_empty() {
        return Err(SimError::InvalidScenario(
            "every subject was lost to linkage".into(),
        ));
    }
    let rows: Vec<IntervalRow> = kept
        .par_iter()
        .map(|r| expand_followup(r).expect("simulated follow-up is valid"))
        .flatten_iter()
        .collect();
    let cohort = crate::data_model::validate_cohort(rows).expect("simulated rows are valid");

    let (mut arm, mut extra) = (Vec::new(), Vec::new());
    for last in cohort.final_rows().filter(|r| r.arm.in_contrast()) {
        arm.push(last.arm.exposure_indicator());
        extra.push(f64::from(last.arm_total_cum - 1));
    }
    let truth = SimTruth {
        true_log_hr: s.true_log_hr,
        scenario_hash: s.hash(),
        feedback_correlation: correlation(&arm, &extra).unwrap_or(0.0),
        n_subjects: cohort.n_subjects(),
        n_lost_to_linkage: subjects.len() - kept.len(),
    };
    Ok((cohort, truth))
}

/// Subject-level columns that may be permuted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineColumn {
    Arm,
    Hospital,
    BloodGroup,
    Year,
}

impl FromStr for BaselineColumn {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        match s {
            "Arm" | "arm" => Ok(BaselineColumn::Arm),
            "Hospital" | "hospital" => Ok(BaselineColumn::Hospital),
            "Patient_ABORh" | "blood_group" => Ok(BaselineColumn::BloodGroup),
            "Transfusion_Year_first" | "year" => Ok(BaselineColumn::Year),
            other => Err(SimError::NonBaselineColumn(other.to_string())),
        }
    }
}

/// Shuffles each listed column across subjects with its own permutation and
/// writes the drawn value to all of the subject's rows.
pub fn permutation_null(cohort: &Cohort, columns: &[BaselineColumn], seed: u64) -> Cohort {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<&IntervalRow> = cohort.baseline_rows().collect();
    let mut order: HashMap<BaselineColumn, Vec<usize>> = HashMap::new();
    for &c in columns {
        if order.contains_key(&c) {
            continue;
        }
        let mut p: Vec<usize> = (0..base.len()).collect();
        p.shuffle(&mut rng);
        order.insert(c, p);
    }
    let clusters = cohort.clusters_per_row();
    let mut rows = cohort.rows().to_vec();
    for (k, s) in cohort.subjects().iter().enumerate() {
        let src = |c: BaselineColumn| order.get(&c).map(|p| base[p[k]]);
        for r in &mut rows[s.rows.clone()] {
            if let Some(b) = src(BaselineColumn::Arm) {
                r.arm = b.arm;
            }
            if let Some(b) = src(BaselineColumn::Hospital) {
                r.hospital = b.hospital.clone();
            }
            if let Some(b) = src(BaselineColumn::BloodGroup) {
                r.patient_abo_rh = b.patient_abo_rh.clone();
            }
            if let Some(b) = src(BaselineColumn::Year) {
                r.transfusion_year_first = b.transfusion_year_first;
            }
        }
    }
    Cohort::build(rows, clusters, TimeGrid::default())
        .expect("permuting baseline columns keeps validity")
}
