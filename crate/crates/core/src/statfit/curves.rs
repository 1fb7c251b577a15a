//! Least-squares curve families used for trends and magnitude profiles.
//!
//! Models that are linear in all but one or two parameters are solved by
//! variable projection (linear coefficients solved exactly for each trial of
//! the nonlinear ones), then polished with Levenberg-Marquardt.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{DMatrix, DVector, Dyn, Owned};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub slope: f64,
    pub intercept: f64,
}

impl Linear {
    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// `p1 * k^p2 + p3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

impl PowerLaw {
    pub fn eval(&self, k: f64) -> f64 {
        self.p1 * k.powf(self.p2) + self.p3
    }
}

/// `a e^{b x} + c e^{d x}` with `b, d <= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubleExp {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl DoubleExp {
    pub fn eval(&self, x: f64) -> f64 {
        self.a * (self.b * x).exp() + self.c * (self.d * x).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trend {
    Linear { slope: f64, intercept: f64 },
    PowerLaw { p1: f64, p2: f64, p3: f64 },
}

impl Trend {
    pub fn eval(&self, k: f64) -> f64 {
        match *self {
            Trend::Linear { slope, intercept } => Linear { slope, intercept }.eval(k),
            Trend::PowerLaw { p1, p2, p3 } => PowerLaw { p1, p2, p3 }.eval(k),
        }
    }
}

impl From<Linear> for Trend {
    fn from(l: Linear) -> Self {
        Trend::Linear {
            slope: l.slope,
            intercept: l.intercept,
        }
    }
}

impl From<PowerLaw> for Trend {
    fn from(p: PowerLaw) -> Self {
        Trend::PowerLaw {
            p1: p.p1,
            p2: p.p2,
            p3: p.p3,
        }
    }
}

/// Fitted parameters with the residual norm `||model - y||` and the number
/// of points used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveFit<T> {
    pub params: T,
    pub residual: f64,
    pub points: usize,
}

impl<T> CurveFit<T> {
    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> CurveFit<U> {
        CurveFit {
            params: f(self.params),
            residual: self.residual,
            points: self.points,
        }
    }
}

fn check_xy(x: &[f64], y: &[f64], min: usize, what: &str) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "{what}: x and y lengths differ"
        )));
    }
    if x.len() < min {
        return Err(Error::InsufficientData(format!(
            "{what} needs {min} points, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what}: non-finite input")));
    }
    Ok(())
}

/// Minimum-norm least squares on the given columns. Columns are rescaled to
/// unit max-norm first; near-collinear columns are handled by the SVD cutoff.
/// Returns `(coefficients, residual sum of squares)`.
pub(crate) fn solve_columns(columns: &[Vec<f64>], y: &[f64]) -> Option<(Vec<f64>, f64)> {
    let (m, n) = (y.len(), columns.len());
    let scales: Vec<f64> = columns
        .iter()
        .map(|c| {
            let s = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if s > 0.0 && s.is_finite() {
                s
            } else {
                1.0
            }
        })
        .collect();
    let a = DMatrix::from_fn(m, n, |i, j| columns[j][i] / scales[j]);
    if a.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let b = DVector::from_column_slice(y);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let coef = svd.solve(&b, smax * 1e-12).ok()?;
    let rss = (a * &coef - b).norm_squared();
    let coef = coef.iter().zip(&scales).map(|(c, s)| c / s).collect();
    Some((coef, rss))
}

/// Ordinary least-squares line.
pub fn fit_linear(x: &[f64], y: &[f64]) -> Result<CurveFit<Linear>> {
    check_xy(x, y, 2, "linear fit")?;
    if x.iter().all(|&v| v == x[0]) {
        return Err(Error::Degenerate(
            "linear fit: all x values identical".into(),
        ));
    }
    let (c, rss) =
        solve_columns(&[x.to_vec(), vec![1.0; x.len()]], y).ok_or_else(|| Error::FitFailure {
            what: "linear".into(),
            residual: f64::NAN,
        })?;
    Ok(CurveFit {
        params: Linear {
            slope: c[0],
            intercept: c[1],
        },
        residual: rss.sqrt(),
        points: x.len(),
    })
}

/// Least-squares line through the origin.
pub fn fit_proportional(x: &[f64], y: &[f64]) -> Result<CurveFit<Linear>> {
    check_xy(x, y, 1, "proportional fit")?;
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate(
            "proportional fit: all x values zero".into(),
        ));
    }
    let slope = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / sxx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (slope * a - b).powi(2)).sum();
    Ok(CurveFit {
        params: Linear {
            slope,
            intercept: 0.0,
        },
        residual: rss.sqrt(),
        points: x.len(),
    })
}

/// Golden-section minimisation of `f` on `[lo, hi]`.
pub(crate) fn golden_min(mut lo: f64, mut hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

type Model = fn(&[f64], f64, &mut [f64]) -> f64;

/// Generic Levenberg-Marquardt problem over `model(params, x) -> value`
/// which also fills the gradient with respect to the parameters.
struct Problem<'a> {
    x: &'a [f64],
    y: &'a [f64],
    p: DVector<f64>,
    model: Model,
}

impl LeastSquaresProblem<f64, Dyn, Dyn> for Problem<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, p: &DVector<f64>) {
        self.p.copy_from(p);
    }

    fn params(&self) -> DVector<f64> {
        self.p.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let mut g = vec![0.0; self.p.len()];
        let r = DVector::from_iterator(
            self.x.len(),
            self.x
                .iter()
                .zip(self.y)
                .map(|(&x, &y)| (self.model)(self.p.as_slice(), x, &mut g) - y),
        );
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let n = self.p.len();
        let mut j = DMatrix::zeros(self.x.len(), n);
        let mut g = vec![0.0; n];
        for (i, &x) in self.x.iter().enumerate() {
            (self.model)(self.p.as_slice(), x, &mut g);
            for (c, v) in g.iter().enumerate() {
                j[(i, c)] = *v;
            }
        }
        j.iter().all(|v| v.is_finite()).then_some(j)
    }
}

fn rss_of(model: Model, p: &[f64], x: &[f64], y: &[f64]) -> f64 {
    let mut g = vec![0.0; p.len()];
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| (model(p, xi, &mut g) - yi).powi(2))
        .sum()
}

/// Polishes `start` with Levenberg-Marquardt; keeps the start unless the
/// polished point is finite, admissible and no worse.
fn polish(
    model: Model,
    start: Vec<f64>,
    x: &[f64],
    y: &[f64],
    admissible: impl Fn(&[f64]) -> bool,
) -> (Vec<f64>, f64) {
    let base = rss_of(model, &start, x, y);
    let problem = Problem {
        x,
        y,
        p: DVector::from_vec(start.clone()),
        model,
    };
    let (done, _) = LevenbergMarquardt::new()
        .with_patience(200)
        .minimize(problem);
    let p: Vec<f64> = done.p.iter().copied().collect();
    let rss = rss_of(model, &p, x, y);
    if rss.is_finite() && rss <= base && admissible(&p) {
        (p, rss)
    } else {
        (start, base)
    }
}

fn power_law_model(p: &[f64], k: f64, g: &mut [f64]) -> f64 {
    let kp = k.powf(p[1]);
    g[0] = kp;
    g[1] = p[0] * kp * k.ln();
    g[2] = 1.0;
    p[0] * kp + p[2]
}

fn double_exp_model(p: &[f64], x: f64, g: &mut [f64]) -> f64 {
    let (e1, e2) = ((p[1] * x).exp(), (p[3] * x).exp());
    g[0] = e1;
    g[1] = p[0] * x * e1;
    g[2] = e2;
    g[3] = p[2] * x * e2;
    p[0] * e1 + p[2] * e2
}

/// Fits `y = p1 k^p2 + p3` for `k >= 1`.
pub fn fit_power_law(k: &[f64], y: &[f64]) -> Result<CurveFit<PowerLaw>> {
    check_xy(k, y, 4, "power-law fit")?;
    if k.iter().any(|&v| v < 1.0) {
        return Err(Error::InvalidArgument(
            "power-law fit requires k >= 1".into(),
        ));
    }
    let profile = |p2: f64| -> Option<(Vec<f64>, f64)> {
        solve_columns(
            &[k.iter().map(|v| v.powf(p2)).collect(), vec![1.0; k.len()]],
            y,
        )
    };
    let cost = |p2: f64| profile(p2).map_or(f64::INFINITY, |(_, r)| r);
    let step = 0.05;
    let grid: Vec<f64> = (0..=160).map(|i| -4.0 + step * i as f64).collect();
    let (best, best_cost) =
        grid.iter()
            .map(|&p2| (p2, cost(p2)))
            .fold(
                (f64::NAN, f64::INFINITY),
                |acc, c| if c.1 < acc.1 { c } else { acc },
            );
    if !best_cost.is_finite() {
        return Err(Error::FitFailure {
            what: "power law".into(),
            residual: f64::INFINITY,
        });
    }
    let (p2, _) = golden_min(best - step, best + step, 1e-12, cost);
    let (c, _) = profile(p2).expect("profile is finite near the grid optimum");
    let (p, rss) = polish(power_law_model, vec![c[0], p2, c[1]], k, y, |_| true);
    let fit = PowerLaw {
        p1: p[0],
        p2: p[1],
        p3: p[2],
    };
    if !rss.is_finite() {
        return Err(Error::FitFailure {
            what: "power law".into(),
            residual: rss.sqrt(),
        });
    }
    Ok(CurveFit {
        params: fit,
        residual: rss.sqrt(),
        points: k.len(),
    })
}

/// Fits `y = a e^{bx} + c e^{dx}` with both rates constrained to `<= 0`.
///
/// The returned fit orders the terms so that `b >= d` (the first term is the
/// slower one).
pub fn fit_double_exponential(x: &[f64], y: &[f64]) -> Result<CurveFit<DoubleExp>> {
    check_xy(x, y, 6, "double-exponential fit")?;
    if y.iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidArgument(
            "double-exponential fit requires y > 0".into(),
        ));
    }
    let xmax = x.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    let profile = |b: f64, d: f64| -> Option<(Vec<f64>, f64)> {
        solve_columns(
            &[
                x.iter().map(|v| (b * v).exp()).collect(),
                x.iter().map(|v| (d * v).exp()).collect(),
            ],
            y,
        )
    };
    // rates spaced logarithmically from ~1e-4/xmax to ~50/xmax, plus zero
    let mut rates = vec![0.0];
    rates.extend((0..=60).map(|i| -(10f64.powf(-4.0 + 0.1 * i as f64)) * 25.0 / xmax));
    let mut best = (0.0, 0.0, f64::INFINITY);
    for (i, &b) in rates.iter().enumerate() {
        for &d in &rates[i..] {
            if let Some((_, r)) = profile(b, d) {
                if r < best.2 {
                    best = (b, d, r);
                }
            }
        }
    }
    if !best.2.is_finite() {
        return Err(Error::FitFailure {
            what: "double exponential".into(),
            residual: f64::INFINITY,
        });
    }
    let (c, _) = profile(best.0, best.1).expect("finite at grid optimum");
    let start = vec![c[0], best.0, c[1], best.1];
    let (p, rss) = polish(double_exp_model, start, x, y, |p| {
        p[1] <= 0.0 && p[3] <= 0.0
    });
    if !rss.is_finite() {
        return Err(Error::FitFailure {
            what: "double exponential".into(),
            residual: rss.sqrt(),
        });
    }
    let (mut a, mut b, mut c, mut d) = (p[0], p[1], p[2], p[3]);
    if d > b {
        std::mem::swap(&mut a, &mut c);
        std::mem::swap(&mut b, &mut d);
    }
    Ok(CurveFit {
        params: DoubleExp { a, b, c, d },
        residual: rss.sqrt(),
        points: x.len(),
    })
}
