use serde::{Deserialize, Serialize};

use super::{ArmCode, DataError, IntervalRow, TimeGrid};

/// Per-subject follow-up before expansion onto the row grid.
///
/// Day 0 is the first transfusion. `exit_day` is the last observed day (death
/// or end of observation); `switch_day` is the first day a unit from outside
/// the subject's arm was received.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFollowup {
    pub pin: String,
    pub arm: ArmCode,
    pub transfusion_year_first: i32,
    pub patient_abo_rh: String,
    pub hospital: String,
    pub exit_day: i32,
    pub death_at_exit: bool,
    pub switch_day: Option<i32>,
    /// On-arm transfusion days, sorted; the first element must be 0.
    pub transfusion_days: Vec<i32>,
}

impl RawFollowup {
    /// Last day of analyzable follow-up: `min(exit_day, switch_day)`.
    pub fn end_day(&self) -> i32 {
        self.switch_day
            .map_or(self.exit_day, |s| s.min(self.exit_day))
    }

    /// A switch on the exit day of a death counts as death (death first);
    /// otherwise a switch no later than exit censors.
    pub fn is_censored(&self) -> bool {
        match self.switch_day {
            Some(s) if s < self.exit_day => true,
            Some(s) if s == self.exit_day => !self.death_at_exit,
            _ => false,
        }
    }

    fn check(&self) -> Result<(), DataError> {
        let invalid = |detail: String| DataError::InvalidFollowup {
            pin: self.pin.clone(),
            detail,
        };
        if self.exit_day < 1 {
            return Err(DataError::EmptyFollowup {
                pin: self.pin.clone(),
                exit_day: self.exit_day,
            });
        }
        if let Some(s) = self.switch_day {
            if s < 1 || s > self.exit_day {
                return Err(invalid(format!(
                    "switch day {s} outside 1..={}",
                    self.exit_day
                )));
            }
        }
        match self.transfusion_days.first() {
            Some(0) => {}
            Some(d) => {
                return Err(invalid(format!(
                    "first transfusion on day {d}, expected day 0"
                )))
            }
            None => return Err(invalid("no transfusion days".into())),
        }
        if self.transfusion_days.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("transfusion days are not sorted".into()));
        }
        Ok(())
    }
}

/// Expands one subject's follow-up into grid rows.
///
/// Rows run from `(-1, 1]` to the row containing `min(exit_day, switch_day)`;
/// the final row's `t_end_new` is that day. `Arm_Total_cum` counts the
/// transfusion days up to each row's `t_end_new`.
pub fn expand_followup(raw: &RawFollowup) -> Result<Vec<IntervalRow>, DataError> {
    expand_on_grid(raw, TimeGrid::default())
}

pub(crate) fn expand_on_grid(
    raw: &RawFollowup,
    grid: TimeGrid,
) -> Result<Vec<IntervalRow>, DataError> {
    raw.check()?;
    let end = raw.end_day();
    let censored = raw.is_censored();
    let death = raw.death_at_exit && !censored;
    let last_end = grid.row_end_for_day(end);

    let mut rows = Vec::new();
    let mut t_begin = grid.first_begin;
    let mut t_end = 1;
    let mut counted = 0usize;
    loop {
        let is_last = t_end == last_end;
        let t_end_new = if is_last { end } else { t_end };
        while counted < raw.transfusion_days.len() && raw.transfusion_days[counted] <= t_end_new {
            counted += 1;
        }
        rows.push(IntervalRow {
            pin: raw.pin.clone(),
            arm: raw.arm,
            transfusion_year_first: raw.transfusion_year_first,
            patient_abo_rh: raw.patient_abo_rh.clone(),
            hospital: raw.hospital.clone(),
            censored: is_last && censored,
            arm_total_cum: counted as u32,
            t_begin,
            t_end,
            t_end_new,
            death: is_last && death,
        });
        if is_last {
            break;
        }
        t_begin = t_end;
        t_end = grid.next_end(t_end);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::validate_cohort;

    fn raw(exit_day: i32, death: bool, switch_day: Option<i32>) -> RawFollowup {
        RawFollowup {
            pin: "1".into(),
            arm: ArmCode::Reference,
            transfusion_year_first: 2009,
            patient_abo_rh: "A+".into(),
            hospital: "H".into(),
            exit_day,
            death_at_exit: death,
            switch_day,
            transfusion_days: vec![0],
        }
    }

    #[test]
    fn short_followup_with_death() {
        let rows = expand_followup(&raw(3, true, None)).unwrap();
        let spans: Vec<_> = rows.iter().map(|r| (r.t_begin, r.t_end)).collect();
        assert_eq!(spans, vec![(-1, 1), (1, 2), (2, 3)]);
        assert!(rows[2].death);
        assert!(!rows[0].death && !rows[1].death);
    }

    #[test]
    fn death_on_day_thirty_lands_in_first_block() {
        let rows = expand_followup(&raw(30, true, None)).unwrap();
        assert_eq!(rows.len(), 29);
        let last = rows.last().unwrap();
        assert_eq!((last.t_begin, last.t_end, last.t_end_new), (28, 56, 30));
        assert!(last.death);
    }

    #[test]
    fn switch_censors_at_switch_day() {
        // Grid boundaries enumerated by hand: (-1,1], (1,2], ..., (4,5].
        let rows = expand_followup(&raw(100, true, Some(5))).unwrap();
        assert_eq!(rows.len(), 5);
        let last = rows.last().unwrap();
        assert_eq!((last.t_end, last.t_end_new), (5, 5));
        assert!(last.censored);
        assert!(!last.death);
    }

    #[test]
    fn switch_on_death_day_counts_as_death() {
        let rows = expand_followup(&raw(7, true, Some(7))).unwrap();
        let last = rows.last().unwrap();
        assert!(last.death && !last.censored);
        let rows = expand_followup(&raw(7, false, Some(7))).unwrap();
        assert!(rows.last().unwrap().censored);
    }

    #[test]
    fn cumulative_count_tracks_transfusion_days() {
        let mut r = raw(60, false, None);
        r.transfusion_days = vec![0, 0, 2, 30, 59, 70];
        let rows = expand_followup(&r).unwrap();
        assert_eq!(rows[0].arm_total_cum, 2);
        assert_eq!(rows[1].arm_total_cum, 3);
        assert_eq!(rows[27].arm_total_cum, 3);
        assert_eq!(rows[28].arm_total_cum, 4);
        let last = rows.last().unwrap();
        assert_eq!((last.t_begin, last.t_end, last.t_end_new), (56, 84, 60));
        assert_eq!(last.arm_total_cum, 5);
        validate_cohort(rows).unwrap();
    }

    #[test]
    fn invalid_raw_followups() {
        assert!(matches!(
            expand_followup(&raw(0, false, None)),
            Err(DataError::EmptyFollowup { .. })
        ));
        assert!(matches!(
            expand_followup(&raw(5, false, Some(6))),
            Err(DataError::InvalidFollowup { .. })
        ));
        let mut r = raw(5, false, None);
        r.transfusion_days = vec![1];
        assert!(matches!(
            expand_followup(&r),
            Err(DataError::InvalidFollowup { .. })
        ));
        r.transfusion_days = vec![0, 3, 2];
        assert!(matches!(
            expand_followup(&r),
            Err(DataError::InvalidFollowup { .. })
        ));
    }
}
