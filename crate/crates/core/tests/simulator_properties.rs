//! Distributional properties of the feedback simulator and the permutation
//! null.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use tmsm_core::pipelines::{Method, PipelineConfig};
use tmsm_core::simulator::{permutation_null, simulate_cohort, BaselineColumn, SimScenario};
use tmsm_core::study::run_study;
use tmsm_core::{ArmCode, Cohort};

fn mean_extra_by_arm(c: &Cohort) -> (f64, f64) {
    let (mut sum, mut n) = ([0.0; 2], [0.0; 2]);
    for r in c.final_rows().filter(|r| r.arm.in_contrast()) {
        let k = r.arm.exposure_indicator() as usize;
        sum[k] += f64::from(r.arm_total_cum);
        n[k] += 1.0;
    }
    (sum[0] / n[0], sum[1] / n[1])
}

#[test]
fn without_feedback_arm_and_count_are_uncorrelated() {
    let s = SimScenario {
        n_subjects: 50_000,
        hb_dose_gap: 0.0,
        frailty_sd: 0.0,
        ..SimScenario::default()
    };
    let (_, truth) = simulate_cohort(&s).unwrap();
    assert!(
        truth.feedback_correlation.abs() < 0.02,
        "{}",
        truth.feedback_correlation
    );
}

#[test]
fn feedback_raises_arm_one_transfusion_count() {
    let s = SimScenario {
        n_subjects: 50_000,
        ..SimScenario::default()
    };
    let (c, truth) = simulate_cohort(&s).unwrap();
    let (m0, m1) = mean_extra_by_arm(&c);
    assert!(m1 > m0, "arm 0 {m0}, arm 1 {m1}");
    assert!(truth.feedback_correlation > 0.0);
}

fn arm_by_hospital_chi_square(c: &Cohort) -> (f64, f64) {
    let hospitals = c.hospital_levels().to_vec();
    let mut table = vec![[0.0f64; 3]; hospitals.len()];
    for r in c.baseline_rows() {
        let h = hospitals.iter().position(|x| *x == r.hospital).unwrap();
        let a = ArmCode::ALL.iter().position(|x| *x == r.arm).unwrap();
        table[h][a] += 1.0;
    }
    let n: f64 = table.iter().flatten().sum();
    let col: Vec<f64> = (0..3)
        .map(|a| table.iter().map(|row| row[a]).sum())
        .collect();
    let mut stat = 0.0;
    for row in &table {
        let row_sum: f64 = row.iter().sum();
        for a in 0..3 {
            let e = row_sum * col[a] / n;
            stat += (row[a] - e).powi(2) / e;
        }
    }
    (stat, ((hospitals.len() - 1) * 2) as f64)
}

#[test]
fn permuted_arm_is_independent_of_hospital() {
    let s = SimScenario {
        n_subjects: 10_000,
        ..SimScenario::default()
    };
    let (c, _) = simulate_cohort(&s).unwrap();
    let (stat, df) = arm_by_hospital_chi_square(&c);
    let q99 = ChiSquared::new(df).unwrap().inverse_cdf(0.99);
    assert!(
        stat > q99,
        "simulated arm should depend on hospital: {stat}"
    );

    let seeds = 100;
    let below = (0..seeds)
        .filter(|&k| {
            arm_by_hospital_chi_square(&permutation_null(&c, &[BaselineColumn::Arm], k)).0 < q99
        })
        .count();
    assert!(
        below * 100 >= 95 * seeds as usize,
        "{below}/{seeds} below the 99% quantile"
    );
}

#[test]
fn permutation_preserves_every_column_multiset() {
    let s = SimScenario {
        n_subjects: 500,
        ..SimScenario::default()
    };
    let (c, _) = simulate_cohort(&s).unwrap();
    let all = [
        BaselineColumn::Arm,
        BaselineColumn::Hospital,
        BaselineColumn::BloodGroup,
        BaselineColumn::Year,
    ];
    let p = permutation_null(&c, &all, 11);
    let key = |c: &Cohort| {
        let base: Vec<_> = c.baseline_rows().collect();
        let mut arms: Vec<ArmCode> = base.iter().map(|r| r.arm).collect();
        let mut hosp: Vec<&str> = base.iter().map(|r| r.hospital.as_str()).collect();
        let mut abo: Vec<&str> = base.iter().map(|r| r.patient_abo_rh.as_str()).collect();
        let mut year: Vec<i32> = base.iter().map(|r| r.transfusion_year_first).collect();
        arms.sort();
        hosp.sort();
        abo.sort();
        year.sort();
        (
            arms,
            hosp.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
            abo.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
            year,
        )
    };
    assert_eq!(key(&c), key(&p));
    assert_eq!(c.rows().len(), p.rows().len());
    for (a, b) in c.rows().iter().zip(p.rows()) {
        assert_eq!(
            (a.t_end_new, a.arm_total_cum, a.death, a.censored),
            (b.t_end_new, b.arm_total_cum, b.death, b.censored)
        );
    }
}

/// Without frailty, switching and death share no cause.
#[test]
fn no_frailty_gives_nominal_coverage_for_every_method() {
    let s = SimScenario {
        frailty_sd: 0.0,
        true_log_hr: 0.0,
        ..SimScenario::default()
    };
    let report = run_study(&s, 100, &Method::ALL, &PipelineConfig::default()).unwrap();
    for m in &report.methods {
        assert!(
            m.coverage >= 0.90,
            "{}: coverage {} bias {}",
            m.method.label(),
            m.coverage,
            m.bias
        );
    }
}
