use std::fmt::Write as _;

use serde::Serialize;

use super::AnalysisReport;
use crate::data_model::ArmCode;
use crate::stats::thousands;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ArmTally {
    pub arm: u8,
    pub deaths: usize,
    pub recipients: usize,
}

impl ArmTally {
    pub fn new(arm: ArmCode) -> Self {
        ArmTally {
            arm: arm.code(),
            deaths: 0,
            recipients: 0,
        }
    }
}

/// `"1.22 (1.05-1.42)"`.
pub fn format_hr(hr: f64, lo: f64, hi: f64) -> String {
    format!("{hr:.2} ({lo:.2}-{hi:.2})")
}

/// Tab-separated table with one row per method and arm; the reference arm
/// carries no hazard ratio.
pub fn render_table(reports: &[AnalysisReport]) -> String {
    let mut out = String::from("Method\tArm\tNo. of Deaths\tNo. of Recipients\tHR (95% CI)\n");
    for r in reports {
        for (k, a) in r.arms.iter().enumerate() {
            let label = if k == 0 { r.method.label() } else { "" };
            let hr = if k == 0 {
                "1 (reference)".to_string()
            } else {
                r.formatted_hr()
            };
            let _ = writeln!(
                out,
                "{label}\t{}\t{}\t{}\t{hr}",
                a.arm,
                thousands(a.deaths),
                thousands(a.recipients)
            );
        }
    }
    out
}
