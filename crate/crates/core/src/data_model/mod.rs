//! Counting-process cohort tables.
//!
//! Every subject contributes consecutive `(t_begin, t_end]` rows on a fixed
//! grid: the first row is `(-1, 1]`, then one row per day up to day 28, then
//! 28-day blocks `(28, 56]`, `(56, 84]`, ... The last row of a subject may end
//! before its block boundary; `t_end_new` then carries the real end of
//! follow-up while `t_end` keeps the grid boundary.
//!
//! A [`Cohort`] can only be obtained through validation, so downstream code
//! may rely on every invariant listed on [`validate_cohort`].

mod expand;
mod io;
mod summary;

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use expand::{expand_followup, RawFollowup};
pub use io::{read_cohort, read_cohort_from_reader, write_cohort, write_cohort_to_string, COLUMNS};
pub use summary::{summarize_cohort, ArmCount, CohortSummary};

/// Exposure group defined by the source of a subject's first unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArmCode {
    /// Code 0: first unit from the reference donor group.
    Reference,
    /// Code 1: first unit from the exposure donor group.
    ExposedEverPregnant,
    /// Code 9: any other or mixed first exposure.
    OtherMixed,
}

impl ArmCode {
    pub const ALL: [ArmCode; 3] = [
        ArmCode::Reference,
        ArmCode::ExposedEverPregnant,
        ArmCode::OtherMixed,
    ];

    pub fn code(self) -> u8 {
        match self {
            ArmCode::Reference => 0,
            ArmCode::ExposedEverPregnant => 1,
            ArmCode::OtherMixed => 9,
        }
    }

    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            0 => Some(ArmCode::Reference),
            1 => Some(ArmCode::ExposedEverPregnant),
            9 => Some(ArmCode::OtherMixed),
            _ => None,
        }
    }

    /// True for the two arms compared in the analyses (codes 0 and 1).
    pub fn in_contrast(self) -> bool {
        !matches!(self, ArmCode::OtherMixed)
    }

    /// 1.0 for the exposed arm, 0.0 otherwise.
    pub fn exposure_indicator(self) -> f64 {
        if self == ArmCode::ExposedEverPregnant {
            1.0
        } else {
            0.0
        }
    }
}

impl fmt::Display for ArmCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// One counting-process row in the eleven-column cohort schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub pin: String,
    pub arm: ArmCode,
    pub transfusion_year_first: i32,
    pub patient_abo_rh: String,
    pub hospital: String,
    pub censored: bool,
    pub arm_total_cum: u32,
    pub t_begin: i32,
    pub t_end: i32,
    pub t_end_new: i32,
    pub death: bool,
}

/// Row boundaries: daily rows up to `daily_until`, then blocks of `block_len`
/// days. The first row always starts at `first_begin`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub first_begin: i32,
    pub daily_until: i32,
    pub block_len: i32,
}

impl Default for TimeGrid {
    fn default() -> Self {
        TimeGrid {
            first_begin: -1,
            daily_until: 28,
            block_len: 28,
        }
    }
}

impl TimeGrid {
    /// End of the grid row that contains follow-up day `day` (day >= 1).
    pub fn row_end_for_day(&self, day: i32) -> i32 {
        if day <= self.daily_until {
            day.max(1)
        } else {
            let over = day - self.daily_until;
            self.daily_until + ((over + self.block_len - 1) / self.block_len) * self.block_len
        }
    }

    /// The `t_begin` that a row ending at `t_end` must have, or `None` when
    /// `t_end` is not a grid boundary.
    pub fn begin_for_end(&self, t_end: i32) -> Option<i32> {
        if t_end == 1 {
            Some(self.first_begin)
        } else if (2..=self.daily_until).contains(&t_end) {
            Some(t_end - 1)
        } else if t_end > self.daily_until && (t_end - self.daily_until) % self.block_len == 0 {
            Some(t_end - self.block_len)
        } else {
            None
        }
    }

    pub fn next_end(&self, t_end: i32) -> i32 {
        if t_end < self.daily_until {
            t_end + 1
        } else {
            t_end + self.block_len
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("cohort has no rows")]
    Empty,
    #[error("OverlappingIntervals: subject {pin}, row {row}: {detail}")]
    OverlappingIntervals {
        pin: String,
        row: usize,
        detail: String,
    },
    #[error("NonCanonicalGrid: subject {pin}, row {row}: {detail}")]
    NonCanonicalGrid {
        pin: String,
        row: usize,
        detail: String,
    },
    #[error("ArmChangesWithinSubject: subject {pin}, row {row}")]
    ArmChangesWithinSubject { pin: String, row: usize },
    #[error("BaselineChangesWithinSubject: subject {pin}, row {row}, column {column}")]
    BaselineChangesWithinSubject {
        pin: String,
        row: usize,
        column: &'static str,
    },
    #[error("NonTerminalCensoring: subject {pin}, row {row}")]
    NonTerminalCensoring { pin: String, row: usize },
    #[error("NonTerminalDeath: subject {pin}, row {row}")]
    NonTerminalDeath { pin: String, row: usize },
    #[error("CensoredAndDeath: subject {pin}, row {row}")]
    CensoredAndDeath { pin: String, row: usize },
    #[error("DecreasingCumulativeCount: subject {pin}, row {row}")]
    DecreasingCumulativeCount { pin: String, row: usize },
    #[error("InvalidCount: subject {pin}, row {row}: Arm_Total_cum must be at least 1")]
    InvalidCount { pin: String, row: usize },
    #[error("MissingColumn(\"{0}\")")]
    MissingColumn(String),
    #[error("UnknownColumn(\"{0}\")")]
    UnknownColumn(String),
    #[error("UnparsableCell: row {row}, column {column}: {value:?}")]
    UnparsableCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("EmptyFollowup: subject {pin} has exit day {exit_day}")]
    EmptyFollowup { pin: String, exit_day: i32 },
    #[error("InvalidFollowup: subject {pin}: {detail}")]
    InvalidFollowup { pin: String, detail: String },
    #[error("io error: {0}")]
    Io(String),
}

/// Contiguous row range of one subject plus the cluster it belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subject {
    pub pin: String,
    pub cluster: String,
    pub rows: Range<usize>,
}

/// A validated, immutable cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    rows: Vec<IntervalRow>,
    subjects: Vec<Subject>,
    index: HashMap<String, usize>,
    hospital_levels: Vec<String>,
    abo_levels: Vec<String>,
    year_levels: Vec<i32>,
}

/// Validates `rows` against every cohort invariant.
///
/// Rows must be grouped by subject. Within a subject the first row is
/// `(-1, 1]`, rows follow the grid without gaps, `t_begin < t_end_new <=
/// t_end` with `t_end_new == t_end` except on the final row, baseline columns
/// are constant, `Arm_Total_cum` is at least one and never decreases, and
/// censoring and death only occur on the final row (never both).
pub fn validate_cohort(rows: Vec<IntervalRow>) -> Result<Cohort, DataError> {
    let clusters = rows.iter().map(|r| r.pin.clone()).collect();
    Cohort::build(rows, clusters, TimeGrid::default())
}

impl Cohort {
    /// `clusters[i]` is the cluster label of row `i`; it must be constant
    /// within a subject.
    pub(crate) fn build(
        rows: Vec<IntervalRow>,
        clusters: Vec<String>,
        grid: TimeGrid,
    ) -> Result<Cohort, DataError> {
        if rows.is_empty() {
            return Err(DataError::Empty);
        }
        let mut subjects: Vec<Subject> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut start = 0;
        for i in 1..=rows.len() {
            if i == rows.len() || rows[i].pin != rows[start].pin {
                let pin = rows[start].pin.clone();
                if index.contains_key(&pin) {
                    return Err(DataError::OverlappingIntervals {
                        pin,
                        row: start + 1,
                        detail: "subject rows are not contiguous".into(),
                    });
                }
                check_subject(&rows[start..i], start, grid)?;
                index.insert(pin.clone(), subjects.len());
                subjects.push(Subject {
                    pin,
                    cluster: clusters[start].clone(),
                    rows: start..i,
                });
                start = i;
            }
        }

        let mut hospital_levels: Vec<String> = Vec::new();
        let mut abo_levels: Vec<String> = Vec::new();
        let mut year_levels: Vec<i32> = Vec::new();
        for s in &subjects {
            let r = &rows[s.rows.start];
            if !hospital_levels.contains(&r.hospital) {
                hospital_levels.push(r.hospital.clone());
            }
            if !abo_levels.contains(&r.patient_abo_rh) {
                abo_levels.push(r.patient_abo_rh.clone());
            }
            if !year_levels.contains(&r.transfusion_year_first) {
                year_levels.push(r.transfusion_year_first);
            }
        }
        Ok(Cohort {
            rows,
            subjects,
            index,
            hospital_levels,
            abo_levels,
            year_levels,
        })
    }

    pub fn rows(&self) -> &[IntervalRow] {
        &self.rows
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    /// Row range of the subject with identifier `pin`.
    pub fn subject_rows(&self, pin: &str) -> Option<&[IntervalRow]> {
        self.index
            .get(pin)
            .map(|&i| &self.rows[self.subjects[i].rows.clone()])
    }

    pub fn subject_index(&self) -> impl Iterator<Item = (&str, Range<usize>)> {
        self.subjects
            .iter()
            .map(|s| (s.pin.as_str(), s.rows.clone()))
    }

    /// Baseline (first) row of every subject, in cohort order.
    pub fn baseline_rows(&self) -> impl Iterator<Item = &IntervalRow> {
        self.subjects.iter().map(|s| &self.rows[s.rows.start])
    }

    /// Final row of every subject, in cohort order.
    pub fn final_rows(&self) -> impl Iterator<Item = &IntervalRow> {
        self.subjects.iter().map(|s| &self.rows[s.rows.end - 1])
    }

    /// Hospital labels in first-appearance order; the first is the reference.
    pub fn hospital_levels(&self) -> &[String] {
        &self.hospital_levels
    }

    pub fn abo_levels(&self) -> &[String] {
        &self.abo_levels
    }

    pub fn year_levels(&self) -> &[i32] {
        &self.year_levels
    }

    /// Keeps the subjects for which `keep` returns true.
    pub fn filter_subjects(&self, mut keep: impl FnMut(&[IntervalRow]) -> bool) -> Option<Cohort> {
        let mut rows = Vec::new();
        let mut clusters = Vec::new();
        for s in &self.subjects {
            let block = &self.rows[s.rows.clone()];
            if keep(block) {
                rows.extend_from_slice(block);
                clusters.extend(std::iter::repeat_n(s.cluster.clone(), block.len()));
            }
        }
        if rows.is_empty() {
            return None;
        }
        Some(
            Cohort::build(rows, clusters, TimeGrid::default())
                .expect("subset of a valid cohort is valid"),
        )
    }

    /// Subjects in arms 0 and 1 only.
    pub fn contrast_arms(&self) -> Option<Cohort> {
        self.filter_subjects(|rows| rows[0].arm.in_contrast())
    }

    /// Cluster label of each row (the subject's cluster, broadcast).
    pub fn row_clusters(&self) -> Vec<&str> {
        let mut out = vec![""; self.rows.len()];
        for s in &self.subjects {
            for slot in &mut out[s.rows.clone()] {
                *slot = s.cluster.as_str();
            }
        }
        out
    }

    pub(crate) fn clusters_per_row(&self) -> Vec<String> {
        self.row_clusters().into_iter().map(str::to_owned).collect()
    }
}

fn check_subject(rows: &[IntervalRow], offset: usize, grid: TimeGrid) -> Result<(), DataError> {
    let first = &rows[0];
    let last_idx = rows.len() - 1;
    let mut prev_end = grid.first_begin;
    let mut prev_cum = 0u32;
    for (k, r) in rows.iter().enumerate() {
        let row = offset + k + 1;
        let pin = || r.pin.clone();
        if r.t_begin < prev_end {
            return Err(DataError::OverlappingIntervals {
                pin: pin(),
                row,
                detail: format!("t_begin {} precedes previous t_end {}", r.t_begin, prev_end),
            });
        }
        if r.t_begin > prev_end {
            let detail = if k == 0 {
                format!(
                    "first row starts at {} instead of {}",
                    r.t_begin, grid.first_begin
                )
            } else {
                format!("gap between {} and {}", prev_end, r.t_begin)
            };
            return Err(DataError::NonCanonicalGrid {
                pin: pin(),
                row,
                detail,
            });
        }
        if grid.begin_for_end(r.t_end) != Some(r.t_begin) {
            return Err(DataError::NonCanonicalGrid {
                pin: pin(),
                row,
                detail: format!("({}, {}] is not a grid row", r.t_begin, r.t_end),
            });
        }
        if !(r.t_begin < r.t_end_new && r.t_end_new <= r.t_end) {
            return Err(DataError::NonCanonicalGrid {
                pin: pin(),
                row,
                detail: format!(
                    "t_end_new {} outside ({}, {}]",
                    r.t_end_new, r.t_begin, r.t_end
                ),
            });
        }
        if k < last_idx && r.t_end_new != r.t_end {
            return Err(DataError::NonCanonicalGrid {
                pin: pin(),
                row,
                detail: "t_end_new differs from t_end before the final row".into(),
            });
        }
        if r.arm != first.arm {
            return Err(DataError::ArmChangesWithinSubject { pin: pin(), row });
        }
        let baseline_change = if r.transfusion_year_first != first.transfusion_year_first {
            Some("Transfusion_Year_first")
        } else if r.patient_abo_rh != first.patient_abo_rh {
            Some("Patient_ABORh")
        } else if r.hospital != first.hospital {
            Some("Hospital")
        } else {
            None
        };
        if let Some(column) = baseline_change {
            return Err(DataError::BaselineChangesWithinSubject {
                pin: pin(),
                row,
                column,
            });
        }
        if r.arm_total_cum < 1 {
            return Err(DataError::InvalidCount { pin: pin(), row });
        }
        if r.arm_total_cum < prev_cum {
            return Err(DataError::DecreasingCumulativeCount { pin: pin(), row });
        }
        if r.censored && r.death {
            return Err(DataError::CensoredAndDeath { pin: pin(), row });
        }
        if k < last_idx && r.censored {
            return Err(DataError::NonTerminalCensoring { pin: pin(), row });
        }
        if k < last_idx && r.death {
            return Err(DataError::NonTerminalDeath { pin: pin(), row });
        }
        prev_end = r.t_end;
        prev_cum = r.arm_total_cum;
    }
    Ok(())
}
