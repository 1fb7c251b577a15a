//! Generalized extreme value distribution and its maximum-likelihood fit.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{mean, variance};

/// Below this `|shape|` the Gumbel limit is used.
pub const GUMBEL_SHAPE: f64 = 1e-6;

/// Admissible shape range during fitting.
const SHAPE_RANGE: (f64, f64) = (-1.0, 2.0);

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gev {
    /// ε
    pub location: f64,
    /// η > 0
    pub scale: f64,
    /// ξ
    pub shape: f64,
}

impl Gev {
    pub fn new(location: f64, scale: f64, shape: f64) -> Result<Self> {
        if !(scale > 0.0) || !location.is_finite() || !shape.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "GEV({location}, {scale}, {shape}) needs a positive scale and finite parameters"
            )));
        }
        Ok(Gev {
            location,
            scale,
            shape,
        })
    }

    fn is_gumbel(&self) -> bool {
        self.shape.abs() < GUMBEL_SHAPE
    }

    /// `1 + ξ (x - ε)/η`, positive inside the support.
    pub fn support_term(&self, x: f64) -> f64 {
        1.0 + self.shape * (x - self.location) / self.scale
    }

    pub fn in_support(&self, x: f64) -> bool {
        self.is_gumbel() || self.support_term(x) > 0.0
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let z = (x - self.location) / self.scale;
        if self.is_gumbel() {
            return (-(-z).exp()).exp();
        }
        let t = 1.0 + self.shape * z;
        if t <= 0.0 {
            return if self.shape > 0.0 { 0.0 } else { 1.0 };
        }
        (-t.powf(-1.0 / self.shape)).exp()
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x - self.location) / self.scale;
        if self.is_gumbel() {
            return -self.scale.ln() - z - (-z).exp();
        }
        let t = 1.0 + self.shape * z;
        if t <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let lt = t.ln();
        -self.scale.ln() - (1.0 + 1.0 / self.shape) * lt - (-lt / self.shape).exp()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    /// Inverse CDF for `u` in (0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        let w = -u.ln();
        if self.is_gumbel() {
            self.location - self.scale * w.ln()
        } else {
            self.location + self.scale * (w.powf(-self.shape) - 1.0) / self.shape
        }
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevFit {
    pub gev: Gev,
    pub neg_log_likelihood: f64,
    pub samples: usize,
}

pub const MIN_GEV_SAMPLES: usize = 100;

struct NegLogLik<'a> {
    x: &'a [f64],
}

impl NegLogLik<'_> {
    /// Mean negative log-likelihood per sample; parameters are `(ε, ln η, ξ)`.
    fn eval(&self, p: &[f64]) -> f64 {
        let (loc, scale, shape) = (p[0], p[1].exp(), p[2]);
        if !(SHAPE_RANGE.0 < shape && shape < SHAPE_RANGE.1) || !scale.is_finite() || scale <= 0.0 {
            return f64::INFINITY;
        }
        let n = self.x.len() as f64;
        let mut acc = n * scale.ln();
        if shape.abs() < GUMBEL_SHAPE {
            for &x in self.x {
                let z = (x - loc) / scale;
                acc += z + (-z).exp();
            }
        } else {
            let k = 1.0 + 1.0 / shape;
            for &x in self.x {
                let t = 1.0 + shape * (x - loc) / scale;
                if t <= 0.0 {
                    return f64::INFINITY;
                }
                let lt = t.ln();
                acc += k * lt + (-lt / shape).exp();
            }
        }
        if acc.is_finite() {
            acc / n
        } else {
            f64::INFINITY
        }
    }
}

impl CostFunction for NegLogLik<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.eval(p))
    }
}

fn nelder_mead(
    problem: NegLogLik<'_>,
    start: Vec<f64>,
    steps: [f64; 3],
) -> Option<(Vec<f64>, f64)> {
    let mut simplex = vec![start.clone()];
    for (i, s) in steps.iter().enumerate() {
        let mut v = start.clone();
        v[i] += s;
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex).with_sd_tolerance(1e-12).ok()?;
    let res = Executor::new(problem, solver)
        .configure(|s| s.max_iters(4000))
        .run()
        .ok()?;
    let state = res.state();
    let p = state.get_best_param()?.clone();
    Some((p, state.get_best_cost()))
}

/// Maximum-likelihood GEV fit (at least [`MIN_GEV_SAMPLES`] samples).
pub fn fit_gev(samples: &[f64]) -> Result<GevFit> {
    if samples.len() < MIN_GEV_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "GEV fit needs {MIN_GEV_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("GEV fit: non-finite sample".into()));
    }
    if samples.iter().all(|&v| v == samples[0]) {
        return Err(Error::Degenerate("GEV fit: all samples identical".into()));
    }
    // Gumbel method-of-moments start
    let sd = variance(samples).sqrt();
    let scale0 = (sd * 6f64.sqrt() / std::f64::consts::PI).max(1e-9);
    let loc0 = mean(samples) - EULER_GAMMA * scale0;
    let mut best: Option<(Vec<f64>, f64)> = None;
    for shape0 in [0.1, -0.1, 0.4] {
        let start = vec![loc0, scale0.ln(), shape0];
        let steps = [0.2 * scale0, 0.2, 0.1];
        let mut cand = nelder_mead(NegLogLik { x: samples }, start, steps);
        // one restart from the optimum shakes off a collapsed simplex
        if let Some((p, _)) = cand.clone() {
            if let Some(again) =
                nelder_mead(NegLogLik { x: samples }, p, [0.02 * scale0, 0.02, 0.02])
            {
                if cand.as_ref().is_none_or(|c| again.1 <= c.1) {
                    cand = Some(again);
                }
            }
        }
        if let Some(c) = cand {
            if c.1.is_finite() && best.as_ref().is_none_or(|b| c.1 < b.1) {
                best = Some(c);
            }
        }
    }
    let (p, nll) = best.ok_or_else(|| Error::FitFailure {
        what: "GEV".into(),
        residual: f64::INFINITY,
    })?;
    let gev = Gev::new(p[0], p[1].exp(), p[2])?;
    if !samples.iter().all(|&x| gev.in_support(x)) {
        return Err(Error::FitFailure {
            what: "GEV support".into(),
            residual: nll * samples.len() as f64,
        });
    }
    Ok(GevFit {
        gev,
        neg_log_likelihood: nll * samples.len() as f64,
        samples: samples.len(),
    })
}
