//! Cox engine against brute-force oracles: score-residual sandwich, Breslow
//! baseline and stratified likelihood.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use tmsm_core::cox::{fit_cox, SurvivalRecord};

fn eta(r: &SurvivalRecord, beta: &[f64]) -> f64 {
    r.covariates.iter().zip(beta).map(|(x, b)| x * b).sum()
}

fn at_risk(r: &SurvivalRecord, t: f64) -> bool {
    r.t_begin < t && t <= r.t_end
}

fn event_times(records: &[SurvivalRecord]) -> Vec<f64> {
    let mut t: Vec<f64> = records
        .iter()
        .filter(|r| r.event)
        .map(|r| r.t_end)
        .collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

/// Weighted risk-set sums S0, S1, S2 at `t`.
fn sums(records: &[SurvivalRecord], beta: &[f64], t: f64) -> (f64, DVector<f64>, DMatrix<f64>) {
    let p = beta.len();
    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(p);
    let mut s2 = DMatrix::zeros(p, p);
    for r in records.iter().filter(|r| at_risk(r, t)) {
        let x = DVector::from_column_slice(&r.covariates);
        let w = r.weight * eta(r, beta).exp();
        s0 += w;
        s1 += &x * w;
        s2 += &x * x.transpose() * w;
    }
    (s0, s1, s2)
}

/// `V M V` with `V` the inverse weighted information and `M` the sum over
/// clusters of outer products of summed weighted score residuals.
fn oracle_robust_se(records: &[SurvivalRecord], beta: &[f64]) -> Vec<f64> {
    let p = beta.len();
    let mut info = DMatrix::zeros(p, p);
    let mut residual: Vec<DVector<f64>> = vec![DVector::zeros(p); records.len()];
    for t in event_times(records) {
        let (s0, s1, s2) = sums(records, beta, t);
        let xbar = &s1 / s0;
        let d: f64 = records
            .iter()
            .filter(|r| r.event && r.t_end == t)
            .map(|r| r.weight)
            .sum();
        info += (&s2 / s0 - &xbar * xbar.transpose()) * d;
        let dlambda = d / s0;
        for (i, r) in records.iter().enumerate() {
            let x = DVector::from_column_slice(&r.covariates);
            if r.event && r.t_end == t {
                residual[i] += (&x - &xbar) * r.weight;
            }
            if at_risk(r, t) {
                residual[i] -= (&x - &xbar) * (r.weight * eta(r, beta).exp() * dlambda);
            }
        }
    }
    let v = info.try_inverse().unwrap();
    let n_clusters = records.iter().map(|r| r.cluster).max().unwrap() + 1;
    let mut by_cluster = vec![DVector::zeros(p); n_clusters];
    for (r, u) in records.iter().zip(&residual) {
        by_cluster[r.cluster] += u;
    }
    let meat = by_cluster
        .iter()
        .fold(DMatrix::zeros(p, p), |m, u| m + u * u.transpose());
    let cov = &v * meat * &v;
    (0..p).map(|j| cov[(j, j)].sqrt()).collect()
}

fn instance(rng: &mut ChaCha8Rng, weighted: bool) -> Vec<SurvivalRecord> {
    let clusters = rng.random_range(15..=40);
    let p = rng.random_range(1..=3);
    let mut out = Vec::new();
    for c in 0..clusters {
        let mut t = f64::from(rng.random_range(0..3));
        for _ in 0..rng.random_range(1..=3) {
            let x: Vec<f64> = (0..p).map(|_| StandardNormal.sample(rng)).collect();
            let wait: f64 = Exp::new((0.4 * x[0]).exp()).unwrap().sample(rng);
            let end = t + (wait * 4.0).ceil();
            let w = if weighted {
                rng.random_range(0.3..3.0)
            } else {
                1.0
            };
            out.push(SurvivalRecord::new(c, t, end, rng.random_bool(0.7), x).weighted(w));
            t = end;
        }
    }
    out
}

#[test]
fn robust_se_matches_score_residual_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    while checked < 30 {
        let records = instance(&mut rng, checked % 2 == 1);
        let Ok(fit) = fit_cox(&records) else { continue };
        checked += 1;
        let oracle = oracle_robust_se(&records, &fit.beta);
        for (a, b) in fit.robust_se().iter().zip(&oracle) {
            assert!(
                (a - b).abs() <= 1e-8 * b.max(1.0),
                "robust SE {a} vs oracle {b}"
            );
        }
    }
}

#[test]
fn breslow_baseline_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let records = loop {
        let r = instance(&mut rng, true);
        if fit_cox(&r).is_ok() {
            break r;
        }
    };
    let fit = fit_cox(&records).unwrap();
    let mut cumulative = 0.0;
    for t in event_times(&records) {
        let (s0, _, _) = sums(&records, &fit.beta, t);
        let d: f64 = records
            .iter()
            .filter(|r| r.event && r.t_end == t)
            .map(|r| r.weight)
            .sum();
        cumulative += d / s0;
        let got = fit.baseline[0].at(t);
        assert!(
            (got - cumulative).abs() <= 1e-9 * cumulative.max(1.0),
            "t={t}: {got} vs {cumulative}"
        );
    }
}

#[test]
fn stratified_fit_maximizes_sum_of_stratum_likelihoods() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut records: Vec<SurvivalRecord> = Vec::new();
    for i in 0..60 {
        let stratum = i % 2;
        let x: f64 = StandardNormal.sample(&mut rng);
        let base = if stratum == 0 { 1.0 } else { 4.0 };
        let wait: f64 = Exp::new(base * (0.7 * x).exp()).unwrap().sample(&mut rng);
        let mut r =
            SurvivalRecord::new(i, 0.0, (wait * 10.0).ceil(), rng.random_bool(0.8), vec![x]);
        r.stratum = Some(stratum);
        records.push(r);
    }
    let fit = fit_cox(&records).unwrap();
    let loglik = |b: f64| -> f64 {
        (0..2)
            .map(|s| {
                let group: Vec<SurvivalRecord> = records
                    .iter()
                    .filter(|r| r.stratum == Some(s))
                    .cloned()
                    .collect();
                group
                    .iter()
                    .filter(|r| r.event)
                    .map(|r| {
                        let risk: f64 = group
                            .iter()
                            .filter(|q| at_risk(q, r.t_end))
                            .map(|q| (q.covariates[0] * b).exp())
                            .sum();
                        r.covariates[0] * b - risk.ln()
                    })
                    .sum::<f64>()
            })
            .sum()
    };
    let (mut lo, mut hi) = (-5.0f64, 5.0f64);
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if loglik(m1) < loglik(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    assert!((fit.beta[0] - 0.5 * (lo + hi)).abs() < 1e-6);
    assert_eq!(fit.baseline.len(), 2);
}
