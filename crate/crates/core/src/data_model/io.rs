use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{ArmCode, Cohort, DataError, IntervalRow, TimeGrid};

/// Cohort file header, in canonical order.
pub const COLUMNS: [&str; 11] = [
    "PIN",
    "Arm",
    "Transfusion_Year_first",
    "Patient_ABORh",
    "Hospital",
    "Censored",
    "Arm_Total_cum",
    "t_begin",
    "t_end",
    "t_end_new",
    "Death",
];

/// Optional column splitting a patient into several transfusion episodes.
const EPISODE: &str = "Episode";

pub fn read_cohort(path: impl AsRef<Path>) -> Result<Cohort, DataError> {
    let file = File::open(path.as_ref())
        .map_err(|e| DataError::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_cohort_from_reader(file)
}

/// Parses a comma-delimited cohort table and validates it.
///
/// Columns may appear in any order but all eleven must be present. When an
/// `Episode` column is present, each (PIN, Episode) pair becomes its own
/// subject `PIN#Episode` while the robust-variance cluster stays the PIN.
pub fn read_cohort_from_reader(reader: impl Read) -> Result<Cohort, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DataError::Io(e.to_string()))?
        .clone();
    let mut position = [usize::MAX; 11];
    let mut episode_col = None;
    for (i, h) in headers.iter().enumerate() {
        if let Some(k) = COLUMNS.iter().position(|c| *c == h) {
            position[k] = i;
        } else if h == EPISODE {
            episode_col = Some(i);
        } else {
            return Err(DataError::UnknownColumn(h.to_string()));
        }
    }
    if let Some(k) = position.iter().position(|&p| p == usize::MAX) {
        return Err(DataError::MissingColumn(COLUMNS[k].to_string()));
    }

    let mut rows = Vec::new();
    let mut clusters = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| DataError::Io(e.to_string()))?;
        let cell = |k: usize| rec.get(position[k]).unwrap_or("");
        let bad = |k: usize| DataError::UnparsableCell {
            row: line,
            column: COLUMNS[k].to_string(),
            value: cell(k).to_string(),
        };
        let int = |k: usize| cell(k).parse::<i64>().map_err(|_| bad(k));
        let flag = |k: usize| match cell(k) {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(bad(k)),
        };
        let small = |k: usize| int(k).and_then(|v| i32::try_from(v).map_err(|_| bad(k)));

        let pin = cell(0).to_string();
        if pin.is_empty() {
            return Err(bad(0));
        }
        let arm = ArmCode::from_code(int(1)?).ok_or_else(|| bad(1))?;
        let cum = int(6).and_then(|v| u32::try_from(v).map_err(|_| bad(6)))?;
        let (subject, cluster) = match episode_col {
            Some(c) => {
                let ep = rec.get(c).unwrap_or("");
                if ep.is_empty() {
                    return Err(DataError::UnparsableCell {
                        row: line,
                        column: EPISODE.into(),
                        value: ep.into(),
                    });
                }
                (format!("{pin}#{ep}"), pin)
            }
            None => (pin.clone(), pin),
        };
        rows.push(IntervalRow {
            pin: subject,
            arm,
            transfusion_year_first: small(2)?,
            patient_abo_rh: cell(3).to_string(),
            hospital: cell(4).to_string(),
            censored: flag(5)?,
            arm_total_cum: cum,
            t_begin: small(7)?,
            t_end: small(8)?,
            t_end_new: small(9)?,
            death: flag(10)?,
        });
        clusters.push(cluster);
    }
    Cohort::build(rows, clusters, TimeGrid::default())
}

/// Writes the cohort in canonical column order, one line per row.
pub fn write_cohort(cohort: &Cohort, writer: impl Write) -> Result<(), DataError> {
    write_rows(cohort.rows(), writer)
}

pub fn write_cohort_to_string(cohort: &Cohort) -> String {
    let mut buf = Vec::new();
    write_cohort(cohort, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("cohort labels are UTF-8")
}

pub(crate) fn write_rows(rows: &[IntervalRow], writer: impl Write) -> Result<(), DataError> {
    let io = |e: csv::Error| DataError::Io(e.to_string());
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(COLUMNS).map_err(io)?;
    for r in rows {
        w.write_record([
            r.pin.as_str(),
            &r.arm.code().to_string(),
            &r.transfusion_year_first.to_string(),
            &r.patient_abo_rh,
            &r.hospital,
            if r.censored { "1" } else { "0" },
            &r.arm_total_cum.to_string(),
            &r.t_begin.to_string(),
            &r.t_end.to_string(),
            &r.t_end_new.to_string(),
            if r.death { "1" } else { "0" },
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| DataError::Io(e.to_string()))?;
    Ok(())
}
