use serde::{Deserialize, Serialize};

use crate::data_model::IntervalRow;

/// The seven components of the emulated trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub eligibility: String,
    pub treatment_strategies: String,
    pub treatment_assignment: String,
    pub time_zero: String,
    pub follow_up_end: String,
    pub outcome: String,
    pub causal_contrast: String,
}

impl ProtocolSpec {
    pub fn canonical() -> Self {
        ProtocolSpec {
            eligibility: "patients receiving a first red blood cell transfusion".into(),
            treatment_strategies: "only units from the exposure donor group (arm 1) versus only units from the reference donor group (arm 0)".into(),
            treatment_assignment: "source of the first unit, observational".into(),
            time_zero: "first transfusion".into(),
            follow_up_end: "death, end of follow-up, or the first unit from outside the assigned arm".into(),
            outcome: "all-cause mortality".into(),
            causal_contrast: "per-protocol effect".into(),
        }
    }

    fn components(&self) -> [(&'static str, &str); 7] {
        [
            ("eligibility", &self.eligibility),
            ("treatment strategies", &self.treatment_strategies),
            ("treatment assignment", &self.treatment_assignment),
            ("time zero", &self.time_zero),
            ("follow-up end", &self.follow_up_end),
            ("outcome", &self.outcome),
            ("causal contrast", &self.causal_contrast),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub message: String,
}

impl Finding {
    fn new(message: String) -> Self {
        Finding { message }
    }
}

/// Checks that the protocol is complete and that the rows can represent it:
/// follow-up starts at the first transfusion (`t_begin = -1`), the arm is
/// fixed at time zero, and censoring (leaving the assigned arm) ends
/// follow-up. Rows are read, never changed.
pub fn check_protocol(protocol: &ProtocolSpec, rows: &[IntervalRow]) -> Vec<Finding> {
    let mut findings: Vec<Finding> = protocol
        .components()
        .iter()
        .filter(|(_, text)| text.trim().is_empty())
        .map(|(name, _)| Finding::new(format!("incomplete protocol: {name}")))
        .collect();

    let mut late_start = Violations::default();
    let mut arm_change = Violations::default();
    let mut early_censoring = Violations::default();
    let mut start = 0;
    for i in 1..=rows.len() {
        if i < rows.len() && rows[i].pin == rows[start].pin {
            continue;
        }
        let block = &rows[start..i];
        let pin = &block[0].pin;
        if block[0].t_begin != -1 {
            late_start.add(pin);
        }
        if block.iter().any(|r| r.arm != block[0].arm) {
            arm_change.add(pin);
        }
        if block[..block.len() - 1].iter().any(|r| r.censored) {
            early_censoring.add(pin);
        }
        start = i;
    }
    late_start.report(
        &mut findings,
        "time zero is not the first transfusion (t_begin = -1)",
    );
    arm_change.report(
        &mut findings,
        "assignment at time zero violated: arm changes within subject",
    );
    early_censoring.report(
        &mut findings,
        "censoring rule violated: follow-up continues after leaving the assigned arm",
    );
    findings
}

#[derive(Default)]
struct Violations {
    count: usize,
    first: Option<String>,
}

impl Violations {
    fn add(&mut self, pin: &str) {
        self.count += 1;
        self.first.get_or_insert_with(|| pin.to_string());
    }

    fn report(self, findings: &mut Vec<Finding>, what: &str) {
        if let Some(pin) = self.first {
            findings.push(Finding::new(format!(
                "{what} ({} subjects, first PIN {pin})",
                self.count
            )));
        }
    }
}
