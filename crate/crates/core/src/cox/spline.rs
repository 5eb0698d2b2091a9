//! Restricted cubic splines with three knots.

use serde::Serialize;
use thiserror::Error;

use crate::stats::quantile_sorted;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("DegenerateKnots: knots {0:?} are not strictly increasing")]
    DegenerateKnots([f64; 3]),
    #[error("no values to place knots on")]
    Empty,
}

/// Linear term plus one nonlinear term, linear beyond the boundary knots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RcsBasis {
    pub knots: [f64; 3],
    pub linear: Vec<f64>,
    pub nonlinear: Vec<f64>,
}

fn cube_plus(v: f64) -> f64 {
    if v > 0.0 {
        v * v * v
    } else {
        0.0
    }
}

/// Nonlinear restricted term, scaled by the squared outer-knot span.
pub fn rcs_nonlinear_term(x: f64, knots: [f64; 3]) -> f64 {
    let [t1, t2, t3] = knots;
    let span = t3 - t1;
    (cube_plus(x - t1) - cube_plus(x - t2) * (t3 - t1) / (t3 - t2)
        + cube_plus(x - t3) * (t2 - t1) / (t3 - t2))
        / (span * span)
}

/// Builds the basis; default knots are the 0.10/0.50/0.90 type-7 quantiles.
pub fn rcs_basis(x: &[f64], knots: Option<[f64; 3]>) -> Result<RcsBasis, SplineError> {
    let knots = match knots {
        Some(k) => k,
        None => {
            let mut sorted = x.to_vec();
            sorted.sort_by(f64::total_cmp);
            let q = |p| quantile_sorted(&sorted, p).ok_or(SplineError::Empty);
            [q(0.1)?, q(0.5)?, q(0.9)?]
        }
    };
    if !(knots[0] < knots[1] && knots[1] < knots[2]) {
        return Err(SplineError::DegenerateKnots(knots));
    }
    Ok(RcsBasis {
        knots,
        linear: x.to_vec(),
        nonlinear: x.iter().map(|&v| rcs_nonlinear_term(v, knots)).collect(),
    })
}
