//! Weighted Cox regression on counting-process data.
//!
//! Each [`SurvivalRecord`] is at risk on `(t_begin, t_end]`. Ties are handled
//! with the Breslow approximation, record weights multiply both the event
//! contributions and the risk-set sums, and strata contribute separate
//! partial likelihoods with separate baseline hazards.
//!
//! The robust covariance is the usual sandwich `V M V` where `V` is the
//! inverse weighted information and `M` sums, over clusters, the outer
//! product of the weighted score residuals of all records in the cluster.
//! Multiplying every weight by a constant leaves it unchanged.

mod spline;

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

pub use spline::{rcs_basis, rcs_nonlinear_term, RcsBasis, SplineError};

/// Coefficients beyond this magnitude with a non-vanishing Newton step mean
/// the partial likelihood has no finite maximum.
const MONOTONE_BOUND: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoxError {
    #[error("no records")]
    Empty,
    #[error("NoEvents: the records contain no events")]
    NoEvents,
    #[error("record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("MonotoneLikelihood: coefficient {coefficient} diverges")]
    MonotoneLikelihood { coefficient: usize },
    #[error("singular information matrix")]
    Singular,
    #[error("PathGap: segment {index} does not start where the previous one ended")]
    PathGap { index: usize },
    #[error("path segment {index} has {found} covariates, model has {expected}")]
    PathCovariates {
        index: usize,
        expected: usize,
        found: usize,
    },
}

/// One at-risk interval of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalRecord {
    /// Cluster for the robust variance (typically the patient).
    pub cluster: usize,
    pub t_begin: f64,
    pub t_end: f64,
    pub event: bool,
    pub covariates: Vec<f64>,
    pub weight: f64,
    pub stratum: Option<usize>,
}

impl SurvivalRecord {
    pub fn new(
        cluster: usize,
        t_begin: f64,
        t_end: f64,
        event: bool,
        covariates: Vec<f64>,
    ) -> Self {
        SurvivalRecord {
            cluster,
            t_begin,
            t_end,
            event,
            covariates,
            weight: 1.0,
            stratum: None,
        }
    }

    pub fn weighted(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Ties {
    Breslow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoxOptions {
    pub max_iter: usize,
    pub gradient_tol: f64,
}

impl Default for CoxOptions {
    fn default() -> Self {
        CoxOptions {
            max_iter: 50,
            gradient_tol: 1e-8,
        }
    }
}

/// Breslow cumulative baseline hazard (covariates at zero) of one stratum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineHazard {
    pub stratum: Option<usize>,
    /// Distinct event times, ascending.
    pub times: Vec<f64>,
    pub increments: Vec<f64>,
    /// Running sum of `increments`.
    pub cumulative: Vec<f64>,
}

impl BaselineHazard {
    /// Right-continuous step function value at `t`.
    pub fn at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoxFit {
    pub beta: Vec<f64>,
    #[serde(skip)]
    pub naive_covariance: DMatrix<f64>,
    #[serde(skip)]
    pub robust_covariance: DMatrix<f64>,
    pub baseline: Vec<BaselineHazard>,
    pub log_partial_likelihood: f64,
    pub null_log_partial_likelihood: f64,
    pub converged: bool,
    pub n_iterations: usize,
    pub n_events: usize,
    pub gradient_norm: f64,
    pub ties: Ties,
}

impl CoxFit {
    pub fn naive_se(&self) -> Vec<f64> {
        (0..self.beta.len())
            .map(|j| self.naive_covariance[(j, j)].max(0.0).sqrt())
            .collect()
    }

    pub fn robust_se(&self) -> Vec<f64> {
        robust_se(self)
    }

    pub fn hazard_ratio(&self, j: usize) -> f64 {
        self.beta[j].exp()
    }

    /// Wald interval `exp(beta +- z * robust SE)`.
    pub fn robust_ci(&self, j: usize, z: f64) -> (f64, f64) {
        let se = self.robust_se()[j];
        ((self.beta[j] - z * se).exp(), (self.beta[j] + z * se).exp())
    }

    pub fn baseline_for(&self, stratum: Option<usize>) -> Option<&BaselineHazard> {
        self.baseline.iter().find(|b| b.stratum == stratum)
    }

    /// Cumulative hazard accumulated along `path`, after each segment.
    pub fn path_cumulative_hazard(
        &self,
        stratum: Option<usize>,
        path: &[PathSegment],
    ) -> Result<Vec<f64>, CoxError> {
        let base = self.baseline_for(stratum);
        let mut out = Vec::with_capacity(path.len());
        let mut total = 0.0;
        for (i, seg) in path.iter().enumerate() {
            if i > 0 && seg.t_begin != path[i - 1].t_end {
                return Err(CoxError::PathGap { index: i });
            }
            if seg.covariates.len() != self.beta.len() {
                return Err(CoxError::PathCovariates {
                    index: i,
                    expected: self.beta.len(),
                    found: seg.covariates.len(),
                });
            }
            if let Some(b) = base {
                let d = b.at(seg.t_end) - b.at(seg.t_begin);
                if d > 0.0 {
                    total += d * dot(&self.beta, &seg.covariates).exp();
                }
            }
            out.push(total);
        }
        Ok(out)
    }
}

/// One constant-covariate stretch of a subject's history.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSegment {
    pub t_begin: f64,
    pub t_end: f64,
    pub covariates: Vec<f64>,
}

/// `exp(-sum_k [L0(t_end) - L0(t_begin)] exp(beta'x_k))` over contiguous
/// segments.
pub fn survival_given_path(
    fit: &CoxFit,
    stratum: Option<usize>,
    path: &[PathSegment],
) -> Result<f64, CoxError> {
    let cum = fit.path_cumulative_hazard(stratum, path)?;
    Ok((-cum.last().copied().unwrap_or(0.0)).exp())
}

pub fn robust_se(fit: &CoxFit) -> Vec<f64> {
    (0..fit.beta.len())
        .map(|j| fit.robust_covariance[(j, j)].max(0.0).sqrt())
        .collect()
}

pub fn fit_cox(records: &[SurvivalRecord]) -> Result<CoxFit, CoxError> {
    fit_cox_with(records, CoxOptions::default())
}

/// Maximizes the Breslow partial likelihood by Newton-Raphson with
/// step-halving.
///
/// Convergence requires the gradient norm below `gradient_tol` and a
/// vanishing Newton step; a coefficient passing 30 in magnitude before that
/// happens is reported as [`CoxError::MonotoneLikelihood`].
pub fn fit_cox_with(records: &[SurvivalRecord], options: CoxOptions) -> Result<CoxFit, CoxError> {
    let data = Prepared::new(records)?;
    if data.n_events == 0 {
        return Err(CoxError::NoEvents);
    }
    let p = data.p;
    let mut beta = DVector::zeros(p);
    let mut sweep = data.sweep(beta.as_slice(), true);
    let null_ll = sweep.loglik;
    let mut converged = p == 0;
    let mut iterations = 0;

    while !converged && iterations < options.max_iter {
        let step = solve(&sweep.information, &sweep.gradient).ok_or(CoxError::Singular)?;
        let grad_norm = sweep.gradient.norm();
        if grad_norm <= options.gradient_tol && step.amax() <= 1e-7 {
            converged = true;
            break;
        }
        if let Some(j) = (0..p).find(|&j| beta[j].abs() > MONOTONE_BOUND) {
            return Err(CoxError::MonotoneLikelihood { coefficient: j });
        }
        iterations += 1;
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let candidate = &beta + &step * t;
            let ll = data.loglik(candidate.as_slice());
            if ll.is_finite() && ll >= sweep.loglik - 1e-12 * (1.0 + sweep.loglik.abs()) {
                accepted = Some(candidate);
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some(next) => {
                beta = next;
                sweep = data.sweep(beta.as_slice(), true);
            }
            None => {
                converged = grad_norm <= options.gradient_tol.sqrt();
                break;
            }
        }
    }
    if !converged {
        if let Some(j) = (0..p).find(|&j| beta[j].abs() > MONOTONE_BOUND) {
            return Err(CoxError::MonotoneLikelihood { coefficient: j });
        }
    }

    let naive = if p == 0 {
        DMatrix::zeros(0, 0)
    } else {
        invert_spd(&sweep.information).ok_or(CoxError::Singular)?
    };
    let meat = data.cluster_meat(beta.as_slice(), &sweep);
    let robust = &naive * meat * &naive;
    let robust = (&robust + robust.transpose()) * 0.5;
    let baseline = data.baseline(beta.as_slice(), &sweep);

    Ok(CoxFit {
        beta: beta.as_slice().to_vec(),
        naive_covariance: naive,
        robust_covariance: robust,
        baseline,
        log_partial_likelihood: sweep.loglik,
        null_log_partial_likelihood: null_ll,
        converged,
        n_iterations: iterations,
        n_events: data.n_events,
        gradient_norm: sweep.gradient.norm(),
        ties: Ties::Breslow,
    })
}

/// Breslow baseline cumulative hazard for fixed coefficients.
///
/// At each event time the increment is the summed weight of the events
/// divided by the weighted sum of `exp(beta'x)` over the risk set.
pub fn baseline_cumhaz(
    beta: &[f64],
    records: &[SurvivalRecord],
) -> Result<Vec<BaselineHazard>, CoxError> {
    let data = Prepared::new(records)?;
    if beta.len() != data.p {
        return Err(CoxError::InvalidRecord {
            index: 0,
            reason: format!("expected {} coefficients", data.p),
        });
    }
    let sweep = data.sweep(beta, false);
    Ok(data.baseline(beta, &sweep))
}

/// Log partial likelihood, its gradient and the observed information at
/// `beta`.
pub fn partial_likelihood(
    records: &[SurvivalRecord],
    beta: &[f64],
) -> Result<(f64, Vec<f64>, DMatrix<f64>), CoxError> {
    let data = Prepared::new(records)?;
    let s = data.sweep(beta, true);
    Ok((s.loglik, s.gradient.as_slice().to_vec(), s.information))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn solve(information: &DMatrix<f64>, gradient: &DVector<f64>) -> Option<DVector<f64>> {
    if gradient.is_empty() {
        return Some(DVector::zeros(0));
    }
    information.clone().cholesky().map(|c| c.solve(gradient))
}

fn invert_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.inverse())
}

/// Records in flat arrays with covariates centered, grouped by stratum.
struct Prepared {
    n: usize,
    p: usize,
    x: Vec<f64>,
    center: Vec<f64>,
    w: Vec<f64>,
    t0: Vec<f64>,
    t1: Vec<f64>,
    event: Vec<bool>,
    cluster: Vec<usize>,
    groups: Vec<Group>,
    n_events: usize,
}

struct Group {
    stratum: Option<usize>,
    by_end: Vec<usize>,
    by_begin: Vec<usize>,
    /// Distinct event times, descending.
    times: Vec<f64>,
    events_at: Vec<Vec<usize>>,
}

/// Risk-set quantities at one event time (centered scale).
struct EventSummary {
    time: f64,
    /// Breslow hazard increment for centered covariates.
    hazard: f64,
    /// Weighted risk-set mean of the centered covariates.
    mean: Vec<f64>,
}

struct Sweep {
    loglik: f64,
    gradient: DVector<f64>,
    information: DMatrix<f64>,
    /// Per group, event summaries in ascending time.
    events: Vec<Vec<EventSummary>>,
}

impl Prepared {
    fn new(records: &[SurvivalRecord]) -> Result<Self, CoxError> {
        let first = records.first().ok_or(CoxError::Empty)?;
        let p = first.covariates.len();
        let n = records.len();
        let mut x = Vec::with_capacity(n * p);
        for (index, r) in records.iter().enumerate() {
            let invalid = |reason: &str| CoxError::InvalidRecord {
                index,
                reason: reason.into(),
            };
            if r.covariates.len() != p {
                return Err(invalid("covariate count differs from the first record"));
            }
            if !(r.t_begin.is_finite() && r.t_end.is_finite()) || r.t_begin >= r.t_end {
                return Err(invalid("t_begin must be before t_end"));
            }
            if !(r.weight.is_finite() && r.weight > 0.0) {
                return Err(invalid("weight must be positive"));
            }
            if r.covariates.iter().any(|v| !v.is_finite()) {
                return Err(invalid("non-finite covariate"));
            }
            x.extend_from_slice(&r.covariates);
        }
        let total_w: f64 = records.iter().map(|r| r.weight).sum();
        let mut center = vec![0.0; p];
        for (i, r) in records.iter().enumerate() {
            for j in 0..p {
                center[j] += r.weight * x[i * p + j];
            }
        }
        center.iter_mut().for_each(|c| *c /= total_w);
        for i in 0..n {
            for j in 0..p {
                x[i * p + j] -= center[j];
            }
        }

        let mut by_stratum: HashMap<Option<usize>, Vec<usize>> = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            by_stratum.entry(r.stratum).or_default().push(i);
        }
        let mut keys: Vec<_> = by_stratum.keys().copied().collect();
        keys.sort();
        let t0: Vec<f64> = records.iter().map(|r| r.t_begin).collect();
        let t1: Vec<f64> = records.iter().map(|r| r.t_end).collect();
        let event: Vec<bool> = records.iter().map(|r| r.event).collect();
        let mut groups = Vec::new();
        let mut n_events = 0;
        for key in keys {
            let members = &by_stratum[&key];
            let mut by_end = members.clone();
            by_end.sort_by(|&a, &b| t1[b].total_cmp(&t1[a]));
            let mut by_begin = members.clone();
            by_begin.sort_by(|&a, &b| t0[b].total_cmp(&t0[a]));
            let mut times: Vec<f64> = Vec::new();
            let mut events_at: Vec<Vec<usize>> = Vec::new();
            for &i in &by_end {
                if !event[i] {
                    continue;
                }
                n_events += 1;
                if times.last() != Some(&t1[i]) {
                    times.push(t1[i]);
                    events_at.push(Vec::new());
                }
                events_at.last_mut().expect("pushed above").push(i);
            }
            groups.push(Group {
                stratum: key,
                by_end,
                by_begin,
                times,
                events_at,
            });
        }
        Ok(Prepared {
            n,
            p,
            x,
            center,
            w: records.iter().map(|r| r.weight).collect(),
            t0,
            t1,
            event,
            cluster: records.iter().map(|r| r.cluster).collect(),
            groups,
            n_events,
        })
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    /// Linear predictor on the centered scale.
    fn eta(&self, beta: &[f64], i: usize) -> f64 {
        dot(beta, self.row(i))
    }

    fn loglik(&self, beta: &[f64]) -> f64 {
        let mut ll = 0.0;
        for g in &self.groups {
            let (mut s0, mut ia, mut ib, mut active) = (0.0, 0, 0, 0usize);
            for (k, &t) in g.times.iter().enumerate() {
                while ia < g.by_end.len() && self.t1[g.by_end[ia]] >= t {
                    let i = g.by_end[ia];
                    s0 += self.w[i] * self.eta(beta, i).exp();
                    active += 1;
                    ia += 1;
                }
                while ib < g.by_begin.len() && self.t0[g.by_begin[ib]] >= t {
                    let i = g.by_begin[ib];
                    s0 -= self.w[i] * self.eta(beta, i).exp();
                    active -= 1;
                    ib += 1;
                }
                if active == 0 {
                    s0 = 0.0;
                }
                let mut wsum = 0.0;
                for &i in &g.events_at[k] {
                    ll += self.w[i] * self.eta(beta, i);
                    wsum += self.w[i];
                }
                ll -= wsum * s0.ln();
            }
        }
        ll
    }

    /// One pass over all event times accumulating risk-set sums.
    fn sweep(&self, beta: &[f64], with_information: bool) -> Sweep {
        let p = self.p;
        let mut ll = 0.0;
        let mut grad = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        let mut all_events = Vec::with_capacity(self.groups.len());
        let risk: Vec<f64> = (0..self.n)
            .map(|i| self.w[i] * self.eta(beta, i).exp())
            .collect();

        for g in &self.groups {
            let mut s0 = 0.0;
            let mut s1 = vec![0.0; p];
            let mut s2 = vec![0.0; if with_information { p * p } else { 0 }];
            let (mut ia, mut ib, mut active) = (0, 0, 0usize);
            let mut summaries = Vec::with_capacity(g.times.len());
            let update = |i: usize, sign: f64, s0: &mut f64, s1: &mut [f64], s2: &mut [f64]| {
                let r = sign * risk[i];
                *s0 += r;
                let xi = self.row(i);
                for a in 0..p {
                    s1[a] += r * xi[a];
                }
                if with_information {
                    for a in 0..p {
                        let ra = r * xi[a];
                        for b in a..p {
                            s2[a * p + b] += ra * xi[b];
                        }
                    }
                }
            };
            for (k, &t) in g.times.iter().enumerate() {
                while ia < g.by_end.len() && self.t1[g.by_end[ia]] >= t {
                    update(g.by_end[ia], 1.0, &mut s0, &mut s1, &mut s2);
                    active += 1;
                    ia += 1;
                }
                while ib < g.by_begin.len() && self.t0[g.by_begin[ib]] >= t {
                    update(g.by_begin[ib], -1.0, &mut s0, &mut s1, &mut s2);
                    active -= 1;
                    ib += 1;
                }
                if active == 0 {
                    s0 = 0.0;
                    s1.iter_mut().for_each(|v| *v = 0.0);
                    s2.iter_mut().for_each(|v| *v = 0.0);
                }
                let mut wsum = 0.0;
                for &i in &g.events_at[k] {
                    let wi = self.w[i];
                    wsum += wi;
                    ll += wi * self.eta(beta, i);
                    let xi = self.row(i);
                    for a in 0..p {
                        grad[a] += wi * xi[a];
                    }
                }
                let mean: Vec<f64> = s1.iter().map(|v| v / s0).collect();
                ll -= wsum * s0.ln();
                for a in 0..p {
                    grad[a] -= wsum * mean[a];
                }
                if with_information {
                    for a in 0..p {
                        for b in a..p {
                            info[(a, b)] += wsum * (s2[a * p + b] / s0 - mean[a] * mean[b]);
                        }
                    }
                }
                summaries.push(EventSummary {
                    time: t,
                    hazard: wsum / s0,
                    mean,
                });
            }
            summaries.reverse();
            all_events.push(summaries);
        }
        for a in 0..p {
            for b in 0..a {
                info[(a, b)] = info[(b, a)];
            }
        }
        Sweep {
            loglik: ll,
            gradient: grad,
            information: info,
            events: all_events,
        }
    }

    /// Sum over clusters of the outer product of per-cluster score residuals.
    fn cluster_meat(&self, beta: &[f64], sweep: &Sweep) -> DMatrix<f64> {
        let p = self.p;
        let mut meat = DMatrix::zeros(p, p);
        if p == 0 {
            return meat;
        }
        let mut cluster_index: HashMap<usize, usize> = HashMap::new();
        let mut scores: Vec<Vec<f64>> = Vec::new();
        for (g, events) in self.groups.iter().zip(&sweep.events) {
            let times: Vec<f64> = events.iter().map(|e| e.time).collect();
            // Running sums over ascending event times of dL and mean * dL.
            let mut cum_h = vec![0.0; events.len() + 1];
            let mut cum_m = vec![vec![0.0; p]; events.len() + 1];
            for (k, e) in events.iter().enumerate() {
                cum_h[k + 1] = cum_h[k] + e.hazard;
                let next: Vec<f64> = cum_m[k]
                    .iter()
                    .zip(&e.mean)
                    .map(|(c, m)| c + m * e.hazard)
                    .collect();
                cum_m[k + 1] = next;
            }
            let upto = |t: f64| times.partition_point(|&s| s <= t);
            for &i in &g.by_end {
                let xi = self.row(i);
                let (kb, ke) = (upto(self.t0[i]), upto(self.t1[i]));
                let r = self.eta(beta, i).exp();
                let mut u = vec![0.0; p];
                if ke > kb {
                    let dh = cum_h[ke] - cum_h[kb];
                    for a in 0..p {
                        u[a] -= r * (xi[a] * dh - (cum_m[ke][a] - cum_m[kb][a]));
                    }
                }
                if self.event[i] {
                    let e = &events[ke - 1];
                    for a in 0..p {
                        u[a] += xi[a] - e.mean[a];
                    }
                }
                let next = cluster_index.len();
                let c = *cluster_index.entry(self.cluster[i]).or_insert(next);
                if c == scores.len() {
                    scores.push(vec![0.0; p]);
                }
                for a in 0..p {
                    scores[c][a] += self.w[i] * u[a];
                }
            }
        }
        for s in &scores {
            for a in 0..p {
                for b in 0..p {
                    meat[(a, b)] += s[a] * s[b];
                }
            }
        }
        meat
    }

    /// Baseline hazard at covariates zero on the original scale.
    fn baseline(&self, beta: &[f64], sweep: &Sweep) -> Vec<BaselineHazard> {
        let shift = (-dot(beta, &self.center)).exp();
        self.groups
            .iter()
            .zip(&sweep.events)
            .map(|(g, events)| {
                let times: Vec<f64> = events.iter().map(|e| e.time).collect();
                let increments: Vec<f64> = events.iter().map(|e| e.hazard * shift).collect();
                let mut acc = 0.0;
                let cumulative = increments
                    .iter()
                    .map(|d| {
                        acc += d;
                        acc
                    })
                    .collect();
                BaselineHazard {
                    stratum: g.stratum,
                    times,
                    increments,
                    cumulative,
                }
            })
            .collect()
    }
}
