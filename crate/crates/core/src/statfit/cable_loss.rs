//! Frequency- and distance-dependent cable loss
//! `A(f, d) = exp(-(a0(d) + a1(d) f^k)) exp(-j b0(d) f)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::curves::{fit_proportional, golden_min, solve_columns, Linear};
use crate::cable::CableSpec;
use crate::error::{Error, Result};
use crate::tlsolver::{series_abcd, FrequencyGrid, FrequencyResponse};

/// Largest wrapped phase step between adjacent bins accepted by the unwrapper.
pub const UNWRAP_MARGIN: f64 = PI / 2.0;

pub const MIN_LOSS_DISTANCES: usize = 10;

const EXPONENT_RANGE: (f64, f64) = (0.05, 2.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CableLoss {
    /// Shared frequency exponent `k`.
    pub exponent: f64,
    /// Nepers as a function of distance.
    pub a0: Linear,
    /// Nepers per Hz^k as a function of distance.
    pub a1: Linear,
    /// Radians per Hz as a function of distance.
    pub b0: Linear,
}

impl CableLoss {
    /// No loss and no delay.
    pub fn none() -> Self {
        let zero = Linear {
            slope: 0.0,
            intercept: 0.0,
        };
        CableLoss {
            exponent: 1.0,
            a0: zero,
            a1: zero,
            b0: zero,
        }
    }

    /// Attenuation in nepers at `f` Hz after `d` metres.
    pub fn attenuation(&self, f: f64, d: f64) -> f64 {
        self.a0.eval(d) + self.a1.eval(d) * f.powf(self.exponent)
    }

    pub fn response(&self, f: f64, d: f64) -> Complex64 {
        Complex64::from_polar((-self.attenuation(f, d)).exp(), -self.b0.eval(d) * f)
    }

    /// `A(f, d)` over the frequencies of `f_grid`.
    pub fn response_over(&self, f_grid: &[f64], d: f64) -> Vec<Complex64> {
        f_grid.iter().map(|&f| self.response(f, d)).collect()
    }
}

/// Coefficients fitted at one distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceLoss {
    pub distance: f64,
    pub a0: f64,
    pub a1: f64,
    pub b0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CableLossFit {
    pub model: CableLoss,
    pub per_distance: Vec<DistanceLoss>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSweep {
    pub distance: f64,
    pub response: FrequencyResponse,
}

/// Matched-line transfer functions `H = Z_L/(A Z_L + B)` with `Z_L = Z0(f)`
/// and an ideal source, one per distance. The DC bin copies bin 1.
pub fn matched_line_sweeps(
    cable: &CableSpec,
    distances: &[f64],
    grid: &FrequencyGrid,
) -> Result<Vec<LossSweep>> {
    grid.validate()?;
    let f_grid = grid.frequencies();
    distances
        .iter()
        .map(|&d| {
            let mut h = vec![Complex64::new(1.0, 0.0); grid.bins];
            for m in 1..grid.bins {
                let f = f_grid[m];
                let z0 = cable.characteristic_impedance(f)?;
                h[m] = series_abcd(cable, d, f)?.voltage_transfer(Complex64::new(0.0, 0.0), z0);
            }
            h[0] = h[1];
            Ok(LossSweep {
                distance: d,
                response: FrequencyResponse {
                    f_grid: f_grid.clone(),
                    h,
                },
            })
        })
        .collect()
}

fn wrap(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

/// Unwrapped phase; errors if any wrapped step exceeds [`UNWRAP_MARGIN`].
pub fn unwrap_phase(h: &[Complex64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(h.len());
    let mut prev = match h.first() {
        Some(v) => v.arg(),
        None => return Ok(out),
    };
    out.push(prev);
    for v in &h[1..] {
        let step = wrap(v.arg() - prev);
        if step.abs() > UNWRAP_MARGIN {
            return Err(Error::BinDensity { step });
        }
        let next = out[out.len() - 1] + step;
        out.push(next);
        prev = v.arg();
    }
    Ok(out)
}

struct Prepared {
    distance: f64,
    f: Vec<f64>,
    loss: Vec<f64>,
    b0: f64,
}

fn prepare(sweep: &LossSweep) -> Result<Prepared> {
    let fr = &sweep.response;
    if fr.f_grid.len() != fr.h.len() || fr.h.len() < 3 {
        return Err(Error::InvalidArgument(
            "cable-loss sweep needs matching grid and gains".into(),
        ));
    }
    // skip the duplicated DC bin
    let f: Vec<f64> = fr.f_grid[1..].to_vec();
    let h = &fr.h[1..];
    if h.iter().any(|v| v.norm() == 0.0 || !v.norm().is_finite()) {
        return Err(Error::Degenerate(
            "cable-loss sweep has zero or non-finite gain".into(),
        ));
    }
    let loss: Vec<f64> = h.iter().map(|v| -v.norm().ln()).collect();
    let phase = unwrap_phase(h)?;
    // phase through the origin: -b0 f
    let sff: f64 = f.iter().map(|v| v * v).sum();
    let b0 = -f.iter().zip(&phase).map(|(a, b)| a * b).sum::<f64>() / sff;
    Ok(Prepared {
        distance: sweep.distance,
        f,
        loss,
        b0,
    })
}

fn loss_at(p: &Prepared, k: f64) -> (f64, f64, f64) {
    if p.loss.iter().all(|&v| v == 0.0) {
        return (0.0, 0.0, 0.0);
    }
    let fk: Vec<f64> = p.f.iter().map(|v| v.powf(k)).collect();
    match solve_columns(&[vec![1.0; p.f.len()], fk], &p.loss) {
        Some((c, rss)) => (c[0], c[1], rss),
        None => (f64::NAN, f64::NAN, f64::INFINITY),
    }
}

/// Fits the cable-loss model to matched-line sweeps at several distances.
///
/// Per distance, `-ln|H| = a0 + a1 f^k` (with `k` shared across all
/// distances) and the unwrapped phase slope `b0`; the coefficients are then
/// fitted as proportional to distance.
pub fn fit_cable_loss(sweeps: &[LossSweep]) -> Result<CableLossFit> {
    if sweeps.len() < MIN_LOSS_DISTANCES {
        return Err(Error::InsufficientData(format!(
            "cable-loss fit needs {MIN_LOSS_DISTANCES} distances, got {}",
            sweeps.len()
        )));
    }
    let prepared = sweeps.iter().map(prepare).collect::<Result<Vec<_>>>()?;
    let total = |k: f64| prepared.iter().map(|p| loss_at(p, k).2).sum::<f64>();
    let grid: Vec<f64> = (0..=39)
        .map(|i| EXPONENT_RANGE.0 + 0.05 * i as f64)
        .collect();
    let (i_best, _) = grid
        .iter()
        .enumerate()
        .map(|(i, &k)| (i, total(k)))
        .fold((0, f64::INFINITY), |a, c| if c.1 < a.1 { c } else { a });
    let lo = grid[i_best.saturating_sub(1)];
    let hi = grid[(i_best + 1).min(grid.len() - 1)];
    let (k, cost) = golden_min(lo, hi, 1e-10, total);
    if !cost.is_finite() {
        return Err(Error::FitFailure {
            what: "cable loss exponent".into(),
            residual: cost,
        });
    }
    let per_distance: Vec<DistanceLoss> = prepared
        .iter()
        .map(|p| {
            let (a0, a1, _) = loss_at(p, k);
            DistanceLoss {
                distance: p.distance,
                a0,
                a1,
                b0: p.b0,
            }
        })
        .collect();
    let d: Vec<f64> = per_distance.iter().map(|p| p.distance).collect();
    let col = |g: fn(&DistanceLoss) -> f64| per_distance.iter().map(g).collect::<Vec<_>>();
    let model = CableLoss {
        exponent: k,
        a0: fit_proportional(&d, &col(|p| p.a0))?.params,
        a1: fit_proportional(&d, &col(|p| p.a1))?.params,
        b0: fit_proportional(&d, &col(|p| p.b0))?.params,
    };
    Ok(CableLossFit {
        model,
        per_distance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cable::CableCatalog;

    fn planted(distances: &[f64], grid: &FrequencyGrid, v: f64) -> Vec<LossSweep> {
        let f_grid = grid.frequencies();
        distances
            .iter()
            .map(|&d| {
                let h = f_grid
                    .iter()
                    .map(|&f| {
                        let alpha = (1e-4 + 1e-11 * f.powf(0.7)) * d;
                        Complex64::from_polar((-alpha).exp(), -2.0 * PI * f * d / v)
                    })
                    .collect();
                LossSweep {
                    distance: d,
                    response: FrequencyResponse {
                        f_grid: f_grid.clone(),
                        h,
                    },
                }
            })
            .collect()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn planted_coefficients_recovered() {
        let grid = FrequencyGrid::default();
        let v = 1.431e8;
        let d: Vec<f64> = (1..=10).map(|i| 10.0 * i as f64).collect();
        let fit = fit_cable_loss(&planted(&d, &grid, v)).unwrap();
        let m = fit.model;
        assert!(rel(m.exponent, 0.7) < 0.01, "{m:?}");
        assert!(rel(m.a0.slope, 1e-4) < 0.01, "{m:?}");
        assert!(rel(m.a1.slope, 1e-11) < 0.01, "{m:?}");
        assert!(rel(m.b0.slope, 2.0 * PI / v) < 0.01, "{m:?}");
    }

    #[test]
    fn lossless_line_has_only_delay() {
        let cable = CableSpec::lossless("ideal", 250e-9, 100e-12);
        let grid = FrequencyGrid {
            bins: 1024,
            bandwidth: 30e6,
        };
        let d: Vec<f64> = (0..10).map(|i| 12.0 * i as f64).collect();
        let fit = fit_cable_loss(&matched_line_sweeps(&cable, &d, &grid).unwrap()).unwrap();
        for p in &fit.per_distance {
            assert!(p.a0.abs() < 1e-9 && p.a1.abs() < 1e-9, "{p:?}");
            let want = 2.0 * PI * p.distance / cable.phase_velocity();
            assert!((p.b0 - want).abs() <= 1e-9 * want.max(1e-9), "{p:?}");
        }
        // zero distance: all coefficients vanish
        let z = fit.per_distance[0];
        assert_eq!((z.a0, z.a1), (0.0, 0.0));
        assert!(z.b0.abs() < 1e-15);
    }

    #[test]
    fn lossy_cable_gives_positive_increasing_loss() {
        let catalog = CableCatalog::builtin();
        let cable = catalog.get("NAYY150").unwrap();
        let grid = FrequencyGrid {
            bins: 1024,
            bandwidth: 30e6,
        };
        let d: Vec<f64> = (1..=11).map(|i| 10.0 * i as f64).collect();
        let fit = fit_cable_loss(&matched_line_sweeps(cable, &d, &grid).unwrap())
            .unwrap()
            .model;
        assert!(fit.a1.slope > 0.0 && fit.exponent > 0.0);
        // the model tracks the exact attenuation within a few percent across the band
        for &f in &[2e6, 10e6, 25e6] {
            let exact = cable.propagation_constant(f).re * 50.0;
            assert!(rel(fit.attenuation(f, 50.0), exact) < 0.05, "{f}");
        }
    }

    #[test]
    fn response_properties() {
        let m = CableLoss {
            exponent: 0.7,
            a0: Linear {
                slope: 1e-4,
                intercept: 0.0,
            },
            a1: Linear {
                slope: 1e-11,
                intercept: 0.0,
            },
            b0: Linear {
                slope: 4e-8,
                intercept: 0.0,
            },
        };
        let f: Vec<f64> = (0..100).map(|i| i as f64 * 3e5).collect();
        assert!(m
            .response_over(&f, 0.0)
            .iter()
            .all(|v| *v == Complex64::new(1.0, 0.0)));
        for d in [10.0, 50.0] {
            let a = m.response_over(&f, d);
            assert!(a.windows(2).all(|w| w[1].norm() <= w[0].norm()));
            let b = m.response_over(&f, d + 10.0);
            assert!(a.iter().zip(&b).all(|(x, y)| y.norm() <= x.norm()));
        }
        // independent evaluation of the closed form
        let (ff, d): (f64, f64) = (12.5e6, 37.0);
        let alpha = 1e-4 * d + 1e-11 * d * ff.powf(0.7);
        let want = Complex64::new(
            (-alpha).exp() * (4e-8 * d * ff).cos(),
            -(-alpha).exp() * (4e-8 * d * ff).sin(),
        );
        assert!((m.response(ff, d) - want).norm() < 1e-15);
    }

    #[test]
    fn unwrap_guards_bin_density() {
        let h: Vec<Complex64> = (0..50)
            .map(|i| Complex64::from_polar(1.0, -0.3 * i as f64))
            .collect();
        let p = unwrap_phase(&h).unwrap();
        assert!((p[49] + 0.3 * 49.0).abs() < 1e-12);
        let h: Vec<Complex64> = (0..50)
            .map(|i| Complex64::from_polar(1.0, -2.0 * i as f64))
            .collect();
        assert!(matches!(unwrap_phase(&h), Err(Error::BinDensity { .. })));
    }

    #[test]
    fn too_few_distances() {
        let grid = FrequencyGrid {
            bins: 64,
            bandwidth: 30e6,
        };
        assert!(matches!(
            fit_cable_loss(&planted(&[10.0, 20.0], &grid, 1.431e8)),
            Err(Error::InsufficientData(_))
        ));
    }
}
