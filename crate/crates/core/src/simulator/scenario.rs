use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SimError;

pub const BLOOD_GROUPS: [&str; 8] = ["O+", "A+", "B+", "AB+", "O-", "A-", "B-", "AB-"];

/// Generative parameters. Every edge of the feedback loop has its own knob:
///
/// * frailty `U ~ N(0, frailty_sd)` raises transfusion demand through
///   `frailty_demand_loading` and shifts the death hazard through
///   `frailty_death_loading`,
/// * arm 1 scales demand by `1 + hb_dose_gap` per on-arm unit already received,
/// * the daily hazard of leaving the arm grows with the cumulative count
///   through `switch_slope`,
/// * `true_log_hr` is the direct effect of arm 1 on the death hazard.
///
/// The scenario file is a flat TOML table with these keys; missing keys take
/// their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimScenario {
    pub n_subjects: usize,
    pub seed: u64,
    pub true_log_hr: f64,
    pub frailty_sd: f64,
    pub frailty_demand_loading: f64,
    pub frailty_death_loading: f64,
    pub hb_dose_gap: f64,
    /// Transfusion probability on day 1 for `U = 0` and no feedback.
    pub transfusion_demand_base: f64,
    /// Demand and switching decay as `exp(-day / demand_decay_days)`.
    pub demand_decay_days: f64,
    pub death_hazard_base: f64,
    /// Daily hazard of a first off-arm unit at `Arm_Total_cum = 1`, day 0.
    pub switch_hazard_base: f64,
    pub switch_slope: f64,
    pub max_followup_days: i32,
    pub hospital_probs: Vec<f64>,
    /// Log-odds of arm 1 versus arm 0 in each hospital.
    pub arm1_log_odds_by_hospital: Vec<f64>,
    /// Change in the arm 1 log-odds per calendar year after `year_first`.
    pub arm1_year_slope: f64,
    /// Log-odds shift of arm 1 per blood group, in `BLOOD_GROUPS` order.
    pub arm1_log_odds_by_blood_group: Vec<f64>,
    /// Log-odds of arm 9 versus arm 0.
    pub arm9_log_odds: f64,
    pub hospital_death_log_hr: Vec<f64>,
    pub blood_group_probs: Vec<f64>,
    pub year_first: i32,
    pub year_last: i32,
    /// Fraction of subjects dropped at random after simulation.
    pub linkage_loss: f64,
}

impl Default for SimScenario {
    fn default() -> Self {
        SimScenario {
            n_subjects: 2000,
            seed: 20240501,
            true_log_hr: 0.0,
            frailty_sd: 1.0,
            frailty_demand_loading: 1.0,
            frailty_death_loading: -1.0,
            hb_dose_gap: 0.8,
            transfusion_demand_base: 0.3,
            demand_decay_days: 10.0,
            death_hazard_base: 0.002,
            switch_hazard_base: 0.01,
            switch_slope: 0.12,
            max_followup_days: 365,
            hospital_probs: vec![0.4, 0.3, 0.2, 0.1],
            arm1_log_odds_by_hospital: vec![-2.4, -2.0, -1.6, -1.2],
            arm1_year_slope: 0.05,
            arm1_log_odds_by_blood_group: vec![0.0; 8],
            arm9_log_odds: -1.5,
            hospital_death_log_hr: vec![0.0, 0.2, 0.4, 0.6],
            blood_group_probs: vec![0.39, 0.35, 0.08, 0.03, 0.07, 0.06, 0.015, 0.005],
            year_first: 2005,
            year_last: 2015,
            linkage_loss: 0.0,
        }
    }
}

impl SimScenario {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let s: SimScenario =
            toml::from_str(text).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| SimError::InvalidScenario(format!("{}: {e}", path.as_ref().display())))?;
        SimScenario::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario fields serialize")
    }

    /// SHA-256 of the canonical TOML serialization, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn n_hospitals(&self) -> usize {
        self.hospital_probs.len()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |m: String| Err(SimError::InvalidScenario(m));
        if self.n_subjects == 0 {
            return fail("n_subjects must be positive".into());
        }
        let nonneg = [
            ("frailty_sd", self.frailty_sd),
            ("hb_dose_gap", self.hb_dose_gap),
            ("death_hazard_base", self.death_hazard_base),
            ("switch_hazard_base", self.switch_hazard_base),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be a nonnegative number, got {v}"));
            }
        }
        let finite = [
            ("true_log_hr", self.true_log_hr),
            ("frailty_demand_loading", self.frailty_demand_loading),
            ("frailty_death_loading", self.frailty_death_loading),
            ("switch_slope", self.switch_slope),
            ("arm1_year_slope", self.arm1_year_slope),
            ("arm9_log_odds", self.arm9_log_odds),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return fail(format!("{name} must be finite"));
            }
        }
        if !(0.0..=1.0).contains(&self.transfusion_demand_base) {
            return fail("transfusion_demand_base must be a probability".into());
        }
        if !(self.demand_decay_days.is_finite() && self.demand_decay_days > 0.0) {
            return fail("demand_decay_days must be positive".into());
        }
        if !(0.0..1.0).contains(&self.linkage_loss) {
            return fail("linkage_loss must be in [0, 1)".into());
        }
        if self.max_followup_days < 1 {
            return fail("max_followup_days must be at least 1".into());
        }
        if self.year_last < self.year_first {
            return fail("year_last precedes year_first".into());
        }
        check_probs("hospital_probs", &self.hospital_probs)?;
        check_probs("blood_group_probs", &self.blood_group_probs)?;
        if self.blood_group_probs.len() != BLOOD_GROUPS.len() {
            return fail(format!(
                "blood_group_probs needs {} entries",
                BLOOD_GROUPS.len()
            ));
        }
        let k = self.n_hospitals();
        for (name, v) in [
            ("arm1_log_odds_by_hospital", &self.arm1_log_odds_by_hospital),
            ("hospital_death_log_hr", &self.hospital_death_log_hr),
        ] {
            if v.len() != k || v.iter().any(|x| !x.is_finite()) {
                return fail(format!("{name} needs {k} finite entries"));
            }
        }
        if self.arm1_log_odds_by_blood_group.len() != BLOOD_GROUPS.len()
            || self
                .arm1_log_odds_by_blood_group
                .iter()
                .any(|x| !x.is_finite())
        {
            return fail(format!(
                "arm1_log_odds_by_blood_group needs {} finite entries",
                BLOOD_GROUPS.len()
            ));
        }
        Ok(())
    }
}

fn check_probs(name: &str, p: &[f64]) -> Result<(), SimError> {
    if p.is_empty()
        || p.iter().any(|v| !(0.0..=1.0).contains(v))
        || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(SimError::InvalidScenario(format!(
            "{name} must be probabilities summing to 1"
        )));
    }
    Ok(())
}
