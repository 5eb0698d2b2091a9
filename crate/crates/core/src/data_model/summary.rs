use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ArmCode, Cohort};
use crate::stats::{quantile_sorted, thousands};

const DAYS_PER_YEAR: f64 = 365.25;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmCount {
    pub subjects: usize,
    pub deaths: usize,
}

/// Cohort characteristics: counts, deaths, follow-up and person-time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub n_subjects: usize,
    pub n_deaths: usize,
    pub person_time_years: f64,
    pub followup_median_days: f64,
    pub followup_q1_days: f64,
    pub followup_q3_days: f64,
    pub by_arm: BTreeMap<ArmCode, ArmCount>,
}

impl CohortSummary {
    pub fn death_percent(&self) -> f64 {
        percent(self.n_deaths, self.n_subjects)
    }
}

fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

/// Follow-up of a subject is the `t_end_new` of its final row.
pub fn summarize_cohort(cohort: &Cohort) -> CohortSummary {
    let mut by_arm: BTreeMap<ArmCode, ArmCount> = ArmCode::ALL
        .iter()
        .map(|&a| (a, ArmCount::default()))
        .collect();
    let mut followup = Vec::with_capacity(cohort.n_subjects());
    let mut n_deaths = 0;
    for last in cohort.final_rows() {
        let entry = by_arm.entry(last.arm).or_default();
        entry.subjects += 1;
        if last.death {
            entry.deaths += 1;
            n_deaths += 1;
        }
        followup.push(f64::from(last.t_end_new));
    }
    followup.sort_by(f64::total_cmp);
    let q = |p| quantile_sorted(&followup, p).unwrap_or(0.0);
    CohortSummary {
        n_subjects: cohort.n_subjects(),
        n_deaths,
        person_time_years: followup.iter().sum::<f64>() / DAYS_PER_YEAR,
        followup_median_days: q(0.5),
        followup_q1_days: q(0.25),
        followup_q3_days: q(0.75),
        by_arm,
    }
}

impl fmt::Display for CohortSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Number of patients\tN={}", thousands(self.n_subjects))?;
        writeln!(
            f,
            "Number of deaths, (%)\t{} ({:.0}%)",
            thousands(self.n_deaths),
            self.death_percent()
        )?;
        writeln!(
            f,
            "Follow-up, median (IQR), days\t{} ({}-{})",
            thousands(self.followup_median_days.round() as usize),
            thousands(self.followup_q1_days.round() as usize),
            thousands(self.followup_q3_days.round() as usize)
        )?;
        writeln!(
            f,
            "Person-time, sum in years\t{:.2}",
            self.person_time_years
        )?;
        for (arm, c) in &self.by_arm {
            writeln!(
                f,
                "Arm {arm}\t{} patients, {} deaths ({:.0}%)",
                thousands(c.subjects),
                thousands(c.deaths),
                percent(c.deaths, c.subjects)
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{expand_followup, validate_cohort, RawFollowup};

    fn subject(pin: &str, exit_day: i32, death: bool) -> Vec<crate::IntervalRow> {
        expand_followup(&RawFollowup {
            pin: pin.into(),
            arm: ArmCode::Reference,
            transfusion_year_first: 2010,
            patient_abo_rh: "O+".into(),
            hospital: "H".into(),
            exit_day,
            death_at_exit: death,
            switch_day: None,
            transfusion_days: vec![0],
        })
        .unwrap()
    }

    #[test]
    fn two_subject_followup_and_person_time() {
        let mut rows = subject("a", 341, false);
        rows.extend(subject("b", 2253, true));
        let s = summarize_cohort(&validate_cohort(rows).unwrap());
        // (341 + 2253) / 2 and (341 + 2253) / 365.25 by hand.
        assert_eq!(s.followup_median_days, 1297.0);
        assert!((s.person_time_years - 7.1020).abs() < 1e-4);
        assert!(s.to_string().contains("Person-time, sum in years\t7.10"));
    }

    #[test]
    fn empty_arm_renders_zero_percent() {
        let s = summarize_cohort(&validate_cohort(subject("a", 5, true)).unwrap());
        assert_eq!(
            s.by_arm[&ArmCode::ExposedEverPregnant],
            ArmCount {
                subjects: 0,
                deaths: 0
            }
        );
        assert!(s.to_string().contains("Arm 1\t0 patients, 0 deaths (0%)"));
    }

    #[test]
    fn single_death_is_hundred_percent() {
        let s = summarize_cohort(&validate_cohort(subject("a", 5, true)).unwrap());
        assert_eq!(s.n_deaths, 1);
        assert_eq!(s.death_percent(), 100.0);
        assert!(s.to_string().contains("1 (100%)"));
    }
}
