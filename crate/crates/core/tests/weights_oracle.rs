//! Censoring and treatment weights against hand-computed values.

use tmsm_core::data_model::{expand_followup, validate_cohort};
use tmsm_core::weights::{
    ipcw_survival, iptw_point, weight_distribution_by_time, CensoringCovariate,
    TreatmentCovariates, WeightKind, WeightSeries,
};
use tmsm_core::{ArmCode, Cohort, RawFollowup};

fn subject(pin: &str, arm: ArmCode, days: &[i32], exit: i32, switch: Option<i32>) -> RawFollowup {
    subject_in(pin, arm, "H1", "O+", days, exit, switch)
}

fn subject_in(
    pin: &str,
    arm: ArmCode,
    hospital: &str,
    abo: &str,
    days: &[i32],
    exit: i32,
    switch: Option<i32>,
) -> RawFollowup {
    RawFollowup {
        pin: pin.into(),
        arm,
        transfusion_year_first: 2010,
        patient_abo_rh: abo.into(),
        hospital: hospital.into(),
        exit_day: exit,
        death_at_exit: false,
        switch_day: switch,
        transfusion_days: days.to_vec(),
    }
}

fn cohort(subjects: &[RawFollowup]) -> Cohort {
    let rows = subjects
        .iter()
        .flat_map(|s| expand_followup(s).unwrap())
        .collect();
    validate_cohort(rows).unwrap()
}

/// Four subjects with `Arm_Total_cum` in {1, 2} and censoring at days 3 and 5.
///
/// Risk set counts are {1, 2, 2, 1} at day 3 (event at count 1) and {2, 2, 1}
/// at day 5 (event at count 2). With `u = exp(beta)` the partial likelihood is
/// `u / (2u + 2u^2) * u^2 / (u + 2u^2)`, maximized at `u = 1 / sqrt(2)`.
#[test]
fn censoring_weights_match_hand_breslow() {
    let c = cohort(&[
        subject("S1", ArmCode::Reference, &[0], 10, Some(3)),
        subject("S2", ArmCode::ExposedEverPregnant, &[0, 1], 10, None),
        subject("S3", ArmCode::ExposedEverPregnant, &[0, 1], 10, Some(5)),
        subject("S4", ArmCode::Reference, &[0], 10, None),
    ]);
    let prior = WeightSeries::ones(WeightKind::Iptw, c.rows().len());
    let res = ipcw_survival(&c, &[CensoringCovariate::ArmTotalCum], &prior).unwrap();
    assert_eq!(res.n_censoring_events, 2);

    let u = 0.5f64.sqrt();
    assert!((res.denominator_coefficients[0].1 - u.ln()).abs() < 1e-8);
    let s0 = [(3, 2.0 * u + 2.0 * u * u, 4.0), (5, u + 2.0 * u * u, 3.0)];
    let expected = |count: u32, t: i32| -> f64 {
        let risk = u.powi(count as i32);
        s0.iter()
            .filter(|&&(s, _, _)| s <= t)
            .map(|&(_, d, n)| risk / d - 1.0 / n)
            .sum::<f64>()
            .exp()
    };
    for (r, w) in c.rows().iter().zip(&res.weights.values) {
        let want = expected(r.arm_total_cum, r.t_end_new);
        assert!(
            (w - want).abs() < 1e-8,
            "{} t={}: {w} vs {want}",
            r.pin,
            r.t_end_new
        );
    }
    let s1_last = c.subject_rows("S1").unwrap().last().unwrap();
    assert!(s1_last.censored && s1_last.t_end_new == 3);
}

/// Hospital and blood group drawn independently of arm in exactly balanced
/// proportions: the denominator equals the numerator.
#[test]
fn covariates_independent_of_arm_give_unit_weights() {
    let mut subjects = Vec::new();
    let mut k = 0;
    for hospital in ["H1", "H2", "H3"] {
        for abo in ["O+", "A+"] {
            for arm in [
                ArmCode::Reference,
                ArmCode::Reference,
                ArmCode::ExposedEverPregnant,
                ArmCode::OtherMixed,
            ] {
                k += 1;
                subjects.push(subject_in(
                    &format!("P{k}"),
                    arm,
                    hospital,
                    abo,
                    &[0],
                    4 + k % 5,
                    None,
                ));
            }
        }
    }
    let c = cohort(&subjects);
    let res = iptw_point(
        &c,
        TreatmentCovariates {
            year: false,
            blood_group: true,
            hospital: true,
        },
    )
    .unwrap();
    for w in &res.weights.values {
        assert!((w - 1.0).abs() < 1e-6, "{w}");
    }
}

#[test]
fn bins_of_unit_weights_and_empty_bins() {
    let c = cohort(&[
        subject("S1", ArmCode::Reference, &[0], 3, None),
        subject("S2", ArmCode::ExposedEverPregnant, &[0], 5, None),
    ]);
    let w = WeightSeries::ones(WeightKind::Combined, c.rows().len());
    let bins = weight_distribution_by_time(&w, &c, 1, 8).unwrap();
    assert_eq!(bins.len(), 8);
    for b in &bins[..3] {
        assert_eq!(b.count, 2);
        assert_eq!(b.median, Some(1.0));
        assert_eq!(b.q3.zip(b.q1).map(|(a, b)| a - b), Some(0.0));
    }
    assert_eq!(bins[4].count, 1);
    for b in &bins[5..] {
        assert_eq!(b.count, 0);
        assert_eq!(b.median, None);
    }
}
