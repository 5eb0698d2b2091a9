//! Multinomial logistic regression by Newton-Raphson.
//!
//! The first category is the reference and carries an implicit zero
//! coefficient row. With two categories this is ordinary binomial logistic
//! regression. Continuous columns are centered and scaled internally; all
//! reported coefficients are on the original scale.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::design::{ColumnKind, DesignMatrix};

/// Coefficients beyond this magnitude (standardized logit scale) with a
/// non-vanishing Newton step indicate separation.
const SEPARATION_BOUND: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlmError {
    #[error("need at least two observed categories, found {0}")]
    TooFewCategories(usize),
    #[error("{found} outcomes for a design with {expected} rows")]
    LengthMismatch { expected: usize, found: usize },
    #[error("SeparationDetected: coefficient {column} for category {category} diverges")]
    SeparationDetected { category: String, column: String },
    #[error("RankDeficient: the intercept is aliased")]
    RankDeficient,
    #[error("DesignMismatch: design lacks column {0}")]
    DesignMismatch(String),
    #[error("unknown category {0}")]
    UnknownCategory(String),
    #[error("singular information matrix")]
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultinomialOptions {
    /// Ridge penalty on non-intercept coefficients (standardized scale).
    pub ridge: f64,
    pub max_iter: usize,
    pub gradient_tol: f64,
}

impl Default for MultinomialOptions {
    fn default() -> Self {
        MultinomialOptions {
            ridge: 0.0,
            max_iter: 100,
            gradient_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultinomialFit {
    /// Category labels; `categories[0]` is the reference.
    pub categories: Vec<String>,
    /// Names of the design columns used, in coefficient order.
    pub columns: Vec<String>,
    /// Columns dropped because they were aliased with earlier ones.
    pub dropped_columns: Vec<String>,
    /// (K-1) x p coefficients on the original scale; row k-1 is category k.
    #[serde(skip)]
    pub coefficients: DMatrix<f64>,
    pub log_likelihood: f64,
    /// Penalized log-likelihood after every accepted iteration, starting
    /// with the value at zero.
    pub log_likelihood_trace: Vec<f64>,
    pub n_iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
}

impl MultinomialFit {
    /// Coefficient of `column` for category `category`; 0 for the reference.
    pub fn coefficient(&self, category: &str, column: &str) -> Option<f64> {
        let k = self.categories.iter().position(|c| c == category)?;
        let j = self.columns.iter().position(|c| c == column)?;
        Some(if k == 0 {
            0.0
        } else {
            self.coefficients[(k - 1, j)]
        })
    }

    pub fn category_index(&self, category: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == category)
    }
}

/// Fits with categories in first-appearance order.
pub fn fit_multinomial<S: AsRef<str>>(
    x: &DesignMatrix,
    y: &[S],
    ridge: f64,
) -> Result<MultinomialFit, GlmError> {
    let mut categories: Vec<String> = Vec::new();
    for label in y {
        if !categories.iter().any(|c| c == label.as_ref()) {
            categories.push(label.as_ref().to_string());
        }
    }
    fit_multinomial_with(
        x,
        y,
        &categories,
        MultinomialOptions {
            ridge,
            ..Default::default()
        },
    )
}

/// Fits with an explicit category order (`categories[0]` is the reference).
pub fn fit_multinomial_with<S: AsRef<str>>(
    x: &DesignMatrix,
    y: &[S],
    categories: &[String],
    options: MultinomialOptions,
) -> Result<MultinomialFit, GlmError> {
    if y.len() != x.n_rows() {
        return Err(GlmError::LengthMismatch {
            expected: x.n_rows(),
            found: y.len(),
        });
    }
    let y_idx = y
        .iter()
        .map(|l| {
            categories
                .iter()
                .position(|c| c == l.as_ref())
                .ok_or_else(|| GlmError::UnknownCategory(l.as_ref().into()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let observed = (0..categories.len()).filter(|k| y_idx.contains(k)).count();
    if observed < 2 {
        return Err(GlmError::TooFewCategories(observed));
    }

    let (keep, dropped) = x.independent_columns(false);
    let intercept = x
        .columns()
        .iter()
        .position(|c| c.kind == ColumnKind::Intercept);
    if let Some(i) = intercept {
        if !keep.contains(&i) {
            return Err(GlmError::RankDeficient);
        }
    }
    let design = x.select(&keep);
    let scaling = Scaling::new(&design);
    let xs = scaling.apply(&design);
    let penalized: Vec<bool> = design
        .columns()
        .iter()
        .map(|c| c.kind != ColumnKind::Intercept)
        .collect();

    let k1 = categories.len() - 1;
    let p = design.n_cols();
    let problem = Problem {
        x: &xs,
        y: &y_idx,
        k1,
        p,
        ridge: options.ridge,
        penalized: &penalized,
    };
    let mut theta = DVector::zeros(k1 * p);
    let mut state = problem.evaluate(&theta, true);
    let mut trace = vec![state.loglik];
    let mut converged = false;
    let mut iterations = 0;
    let step_tol = 1e-7;

    while iterations < options.max_iter {
        let step = solve_newton(&state.neg_hessian, &state.gradient).ok_or(GlmError::Singular)?;
        let max_step = step.amax();
        if state.gradient.norm() <= options.gradient_tol && max_step <= step_tol {
            converged = true;
            break;
        }
        if let Some(idx) = (0..theta.len()).find(|&i| theta[i].abs() > SEPARATION_BOUND) {
            return Err(GlmError::SeparationDetected {
                category: categories[idx / p + 1].clone(),
                column: design.columns()[idx % p].name.clone(),
            });
        }
        iterations += 1;
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let candidate = &theta + &step * t;
            let ll = problem.loglik(&candidate);
            if ll >= state.loglik - 1e-12 * (1.0 + state.loglik.abs()) {
                accepted = Some(candidate);
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some(next) => {
                theta = next;
                state = problem.evaluate(&theta, true);
                trace.push(state.loglik);
            }
            None => {
                // No ascent possible at working precision.
                converged = state.gradient.norm() <= options.gradient_tol.sqrt();
                break;
            }
        }
    }

    let mut coefficients = DMatrix::zeros(k1, p);
    for k in 0..k1 {
        let row = scaling.unscale(&theta.as_slice()[k * p..(k + 1) * p]);
        for j in 0..p {
            coefficients[(k, j)] = row[j];
        }
    }
    Ok(MultinomialFit {
        categories: categories.to_vec(),
        columns: design.names(),
        dropped_columns: dropped,
        coefficients,
        log_likelihood: state.loglik,
        log_likelihood_trace: trace,
        n_iterations: iterations,
        converged,
        gradient_norm: state.gradient.norm(),
    })
}

/// Category probabilities, one row per design row, columns in
/// `fit.categories` order.
pub fn predict_probabilities(
    fit: &MultinomialFit,
    x: &DesignMatrix,
) -> Result<DMatrix<f64>, GlmError> {
    let cols = fit
        .columns
        .iter()
        .map(|name| {
            x.column(name)
                .map(|c| &c.values)
                .ok_or_else(|| GlmError::DesignMismatch(name.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let k = fit.categories.len();
    let mut out = DMatrix::zeros(x.n_rows(), k);
    let mut eta = vec![0.0; k];
    for i in 0..x.n_rows() {
        eta[0] = 0.0;
        for (c, e) in eta.iter_mut().enumerate().skip(1) {
            *e = cols
                .iter()
                .enumerate()
                .map(|(j, v)| fit.coefficients[(c - 1, j)] * v[i])
                .sum();
        }
        let probs = softmax(&eta);
        for c in 0..k {
            out[(i, c)] = probs[c];
        }
    }
    Ok(out)
}

/// Multinomial log-likelihood at `coefficients` ((K-1) x p, reference
/// omitted) for outcome indices `y` into `0..K`.
pub fn log_likelihood(x: &DesignMatrix, y: &[usize], coefficients: &DMatrix<f64>) -> f64 {
    let xs = to_rows(x);
    let k1 = coefficients.nrows();
    let problem = Problem {
        x: &xs,
        y,
        k1,
        p: x.n_cols(),
        ridge: 0.0,
        penalized: &vec![false; x.n_cols()],
    };
    problem.loglik(&flatten(coefficients))
}

/// Analytic gradient matching [`log_likelihood`], same layout as the
/// coefficients.
pub fn gradient(x: &DesignMatrix, y: &[usize], coefficients: &DMatrix<f64>) -> DMatrix<f64> {
    let xs = to_rows(x);
    let (k1, p) = (coefficients.nrows(), x.n_cols());
    let problem = Problem {
        x: &xs,
        y,
        k1,
        p,
        ridge: 0.0,
        penalized: &vec![false; p],
    };
    let g = problem.evaluate(&flatten(coefficients), false).gradient;
    DMatrix::from_fn(k1, p, |k, j| g[k * p + j])
}

fn flatten(m: &DMatrix<f64>) -> DVector<f64> {
    let (k1, p) = m.shape();
    DVector::from_fn(k1 * p, |i, _| m[(i / p, i % p)])
}

fn to_rows(x: &DesignMatrix) -> Vec<Vec<f64>> {
    (0..x.n_rows()).map(|i| x.row(i)).collect()
}

fn softmax(eta: &[f64]) -> Vec<f64> {
    let m = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = eta.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn solve_newton(neg_hessian: &DMatrix<f64>, gradient: &DVector<f64>) -> Option<DVector<f64>> {
    if gradient.is_empty() {
        return Some(DVector::zeros(0));
    }
    neg_hessian.clone().cholesky().map(|c| c.solve(gradient))
}

/// Centering and scaling of continuous columns.
struct Scaling {
    center: Vec<f64>,
    scale: Vec<f64>,
    intercept: Option<usize>,
}

impl Scaling {
    fn new(x: &DesignMatrix) -> Self {
        let intercept = x
            .columns()
            .iter()
            .position(|c| c.kind == ColumnKind::Intercept);
        let n = x.n_rows().max(1) as f64;
        let mut center = vec![0.0; x.n_cols()];
        let mut scale = vec![1.0; x.n_cols()];
        for (j, c) in x.columns().iter().enumerate() {
            if c.kind != ColumnKind::Continuous {
                continue;
            }
            let m = c.values.iter().sum::<f64>() / n;
            let sd = (c.values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            if intercept.is_some() {
                center[j] = m;
            }
            if sd > 0.0 {
                scale[j] = sd;
            }
        }
        Scaling {
            center,
            scale,
            intercept,
        }
    }

    fn apply(&self, x: &DesignMatrix) -> Vec<Vec<f64>> {
        (0..x.n_rows())
            .map(|i| {
                x.columns()
                    .iter()
                    .enumerate()
                    .map(|(j, c)| (c.values[i] - self.center[j]) / self.scale[j])
                    .collect()
            })
            .collect()
    }

    fn unscale(&self, beta: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = beta.iter().zip(&self.scale).map(|(b, s)| b / s).collect();
        if let Some(i) = self.intercept {
            let shift: f64 = out.iter().zip(&self.center).map(|(b, c)| b * c).sum();
            out[i] -= shift;
        }
        out
    }
}

struct Problem<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    k1: usize,
    p: usize,
    ridge: f64,
    penalized: &'a [bool],
}

struct State {
    loglik: f64,
    gradient: DVector<f64>,
    neg_hessian: DMatrix<f64>,
}

impl Problem<'_> {
    fn linear_predictors(&self, theta: &DVector<f64>, xi: &[f64], eta: &mut [f64]) {
        eta[0] = 0.0;
        for k in 0..self.k1 {
            let b = &theta.as_slice()[k * self.p..(k + 1) * self.p];
            eta[k + 1] = xi.iter().zip(b).map(|(a, c)| a * c).sum();
        }
    }

    fn penalty(&self, theta: &DVector<f64>) -> f64 {
        if self.ridge == 0.0 {
            return 0.0;
        }
        let mut s = 0.0;
        for k in 0..self.k1 {
            for j in 0..self.p {
                if self.penalized[j] {
                    s += theta[k * self.p + j].powi(2);
                }
            }
        }
        0.5 * self.ridge * s
    }

    fn loglik(&self, theta: &DVector<f64>) -> f64 {
        let mut eta = vec![0.0; self.k1 + 1];
        let mut ll = 0.0;
        for (xi, &yi) in self.x.iter().zip(self.y) {
            self.linear_predictors(theta, xi, &mut eta);
            ll += eta[yi] - log_sum_exp(&eta);
        }
        ll - self.penalty(theta)
    }

    fn evaluate(&self, theta: &DVector<f64>, with_hessian: bool) -> State {
        let (k1, p) = (self.k1, self.p);
        let dim = k1 * p;
        let mut g = DVector::zeros(dim);
        let mut h = DMatrix::zeros(
            if with_hessian { dim } else { 0 },
            if with_hessian { dim } else { 0 },
        );
        let mut eta = vec![0.0; k1 + 1];
        let mut ll = 0.0;
        for (xi, &yi) in self.x.iter().zip(self.y) {
            self.linear_predictors(theta, xi, &mut eta);
            ll += eta[yi] - log_sum_exp(&eta);
            let pr = softmax(&eta);
            for k in 0..k1 {
                let resid = f64::from(u8::from(yi == k + 1)) - pr[k + 1];
                for j in 0..p {
                    g[k * p + j] += resid * xi[j];
                }
                if !with_hessian {
                    continue;
                }
                for l in k..k1 {
                    let w = if k == l {
                        pr[k + 1] * (1.0 - pr[k + 1])
                    } else {
                        -pr[k + 1] * pr[l + 1]
                    };
                    if w == 0.0 {
                        continue;
                    }
                    for a in 0..p {
                        let wa = w * xi[a];
                        for b in 0..p {
                            h[(k * p + a, l * p + b)] += wa * xi[b];
                        }
                    }
                }
            }
        }
        if with_hessian {
            for r in 0..dim {
                for c in 0..r {
                    h[(r, c)] = h[(c, r)];
                }
            }
        }
        if self.ridge > 0.0 {
            for k in 0..k1 {
                for j in 0..p {
                    if self.penalized[j] {
                        let idx = k * p + j;
                        g[idx] -= self.ridge * theta[idx];
                        if with_hessian {
                            h[(idx, idx)] += self.ridge;
                        }
                    }
                }
            }
        }
        State {
            loglik: ll - self.penalty(theta),
            gradient: g,
            neg_hessian: h,
        }
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(counts: &[(&str, usize)]) -> Vec<String> {
        counts
            .iter()
            .flat_map(|(l, n)| std::iter::repeat_n(l.to_string(), *n))
            .collect()
    }

    #[test]
    fn intercept_only_recovers_log_odds() {
        let y = labels(&[("A", 3), ("B", 1)]);
        let x = DesignMatrix::with_intercept(y.len());
        let fit = fit_multinomial(&x, &y, 0.0).unwrap();
        assert!(fit.converged);
        assert!((fit.coefficient("B", "(Intercept)").unwrap() - (1.0f64 / 3.0).ln()).abs() < 1e-10);
        let p = predict_probabilities(&fit, &x).unwrap();
        for i in 0..4 {
            assert!((p[(i, 0)] - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn balanced_counts_give_zero_coefficients() {
        let y = labels(&[("A", 2), ("B", 2), ("C", 2)]);
        let fit = fit_multinomial(&DesignMatrix::with_intercept(6), &y, 0.0).unwrap();
        assert!(fit.coefficients.iter().all(|b| b.abs() < 1e-12));
    }

    #[test]
    fn independent_binary_covariate_has_zero_effect() {
        let y = labels(&[("A", 2), ("B", 2), ("A", 2), ("B", 2)]);
        let mut x = DesignMatrix::with_intercept(8);
        x.push_continuous("z", vec![0., 0., 0., 0., 1., 1., 1., 1.])
            .unwrap();
        let fit = fit_multinomial(&x, &y, 0.0).unwrap();
        assert!(fit.coefficient("B", "z").unwrap().abs() < 1e-10);
    }

    #[test]
    fn zero_coefficients_give_uniform_probabilities() {
        let fit = MultinomialFit {
            categories: vec!["a".into(), "b".into(), "c".into()],
            columns: vec!["(Intercept)".into()],
            dropped_columns: vec![],
            coefficients: DMatrix::zeros(2, 1),
            log_likelihood: 0.0,
            log_likelihood_trace: vec![],
            n_iterations: 0,
            converged: true,
            gradient_norm: 0.0,
        };
        let p = predict_probabilities(&fit, &DesignMatrix::with_intercept(2)).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn saturated_coefficient_gives_near_certain_probability() {
        let fit = MultinomialFit {
            categories: vec!["A".into(), "B".into()],
            columns: vec!["(Intercept)".into()],
            dropped_columns: vec![],
            coefficients: DMatrix::from_element(1, 1, 30.0),
            log_likelihood: 0.0,
            log_likelihood_trace: vec![],
            n_iterations: 0,
            converged: true,
            gradient_norm: 0.0,
        };
        let p = predict_probabilities(&fit, &DesignMatrix::with_intercept(1)).unwrap();
        assert!(p[(0, 1)] >= 1.0 - 1e-9);
    }

    #[test]
    fn missing_design_column_is_a_mismatch() {
        let y = labels(&[("A", 3), ("B", 3)]);
        let mut x = DesignMatrix::with_intercept(6);
        x.push_continuous("z", vec![1., 2., 3., 1., 2., 4.])
            .unwrap();
        let fit = fit_multinomial(&x, &y, 0.0).unwrap();
        let other = DesignMatrix::with_intercept(6);
        assert_eq!(
            predict_probabilities(&fit, &other).unwrap_err(),
            GlmError::DesignMismatch("z".into())
        );
    }

    #[test]
    fn perfect_separation_is_detected() {
        let y = labels(&[("A", 3), ("B", 3)]);
        let mut x = DesignMatrix::with_intercept(6);
        x.push_continuous("z", vec![0., 1., 2., 3., 4., 5.])
            .unwrap();
        assert!(matches!(
            fit_multinomial(&x, &y, 0.0),
            Err(GlmError::SeparationDetected { .. })
        ));
        // The ridge escape hatch gives a finite fit.
        let fit = fit_multinomial(&x, &y, 1.0).unwrap();
        assert!(fit.converged);
    }

    #[test]
    fn aliased_indicator_is_dropped() {
        let y = labels(&[("A", 3), ("B", 3)]);
        let mut x = DesignMatrix::with_intercept(6);
        x.push_continuous("z", vec![0., 1., 0., 1., 1., 0.])
            .unwrap();
        x.push_continuous("z_copy", vec![0., 1., 0., 1., 1., 0.])
            .unwrap();
        let fit = fit_multinomial(&x, &y, 0.0).unwrap();
        assert_eq!(fit.dropped_columns, ["z_copy"]);
        assert_eq!(fit.columns, ["(Intercept)", "z"]);
    }

    #[test]
    fn single_category_is_rejected() {
        let y = labels(&[("A", 3)]);
        assert_eq!(
            fit_multinomial(&DesignMatrix::with_intercept(3), &y, 0.0).unwrap_err(),
            GlmError::TooFewCategories(1)
        );
    }
}
