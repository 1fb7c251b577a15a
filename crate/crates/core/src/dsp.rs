//! Spectrum/impulse transforms and a Farrow-structure fractional resampler.

use std::cell::RefCell;
use std::ops::{Add, Mul};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Result<Arc<dyn Fft<f64>>> {
    if !len.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(len));
    }
    Ok(PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    }))
}

/// Complex-baseband inverse DFT of gains sampled uniformly over `[0, B)`.
///
/// `taps[n] = (1/N) Σ_k H[k] e^{+j2πkn/N}`, so a flat unit spectrum maps to a
/// unit delta and `Σ|taps|² = mean(|H|²)`.
pub fn inverse_spectrum(gains: &[Complex64]) -> Result<Vec<Complex64>> {
    let fft = plan(gains.len(), true)?;
    let mut buf = gains.to_vec();
    fft.process(&mut buf);
    let scale = 1.0 / gains.len() as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
    Ok(buf)
}

/// Forward DFT, `H[k] = Σ_n taps[n] e^{-j2πkn/N}`; inverse of [`inverse_spectrum`].
pub fn forward_spectrum(taps: &[Complex64]) -> Result<Vec<Complex64>> {
    let fft = plan(taps.len(), false)?;
    let mut buf = taps.to_vec();
    fft.process(&mut buf);
    Ok(buf)
}

/// Rounding slack when locating output instants on the input grid, so that
/// e.g. `R = 3` followed by `R = 1/3` lands exactly on the original samples.
const POSITION_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleSpec {
    /// `t_a / t_a'`: input sample period over output sample period.
    pub ratio: f64,
    /// Interpolating polynomial order, 1 to 3.
    pub order: u8,
}

impl ResampleSpec {
    pub fn new(ratio: f64) -> Self {
        ResampleSpec { ratio, order: 3 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "ratio {} must be positive",
                self.ratio
            )));
        }
        if !(1..=3).contains(&self.order) {
            return Err(Error::InvalidArgument(format!(
                "order {} not in 1..=3",
                self.order
            )));
        }
        Ok(())
    }

    /// Output length for an input of `len` samples: every output instant
    /// `n / R` that falls inside `[0, len - 1]`, i.e. `floor((len - 1) R) + 1`.
    /// Instants within `POSITION_SLACK` of an input sample count as landing on it.
    pub fn output_len(&self, len: usize) -> usize {
        if len == 0 {
            return 0;
        }
        ((len - 1) as f64 * self.ratio + POSITION_SLACK).floor() as usize + 1
    }
}

/// Lagrange Farrow branches: `(first tap offset, rows)` where row `p` holds the
/// FIR coefficients of the sub-filter multiplying `μ^p`.
fn farrow_branches(order: u8) -> (isize, &'static [&'static [f64]]) {
    const LINEAR: &[&[f64]] = &[&[1.0, 0.0], &[-1.0, 1.0]];
    const QUADRATIC: &[&[f64]] = &[&[0.0, 1.0, 0.0], &[-0.5, 0.0, 0.5], &[0.5, -1.0, 0.5]];
    const CUBIC: &[&[f64]] = &[
        &[0.0, 1.0, 0.0, 0.0],
        &[-1.0 / 3.0, -0.5, 1.0, -1.0 / 6.0],
        &[0.5, -1.0, 0.5, 0.0],
        &[-1.0 / 6.0, 0.5, -0.5, 1.0 / 6.0],
    ];
    match order {
        1 => (0, LINEAR),
        2 => (-1, QUADRATIC),
        _ => (-1, CUBIC),
    }
}

/// Resamples `input` (period `t_a`) onto the grid `t_a / R`.
///
/// Output sample `n` interpolates the input at fractional position `n / R`.
/// With `m = floor(n / R)` and `μ = n / R - m`, each Farrow branch filters the
/// input around `m` and the branch outputs are combined in Horner form in `μ`.
/// Samples beyond the ends are replicated from the nearest edge.
pub fn farrow_resample<T>(input: &[T], spec: &ResampleSpec) -> Result<Vec<T>>
where
    T: Copy + Add<Output = T> + Mul<f64, Output = T>,
{
    spec.validate()?;
    if input.is_empty() {
        return Err(Error::InvalidArgument("empty input".into()));
    }
    let (offset, rows) = farrow_branches(spec.order);
    let last = input.len() as isize - 1;
    let at = |i: isize| input[i.clamp(0, last) as usize];
    let out_len = spec.output_len(input.len());
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let t = n as f64 / spec.ratio;
        let m = ((t + POSITION_SLACK).floor() as isize).min(last);
        let mu = t - m as f64;
        let branch = |row: &[f64]| {
            row.iter()
                .enumerate()
                .map(|(j, &c)| at(m + offset + j as isize) * c)
                .reduce(|a, b| a + b)
                .expect("non-empty branch")
        };
        let mut acc = branch(rows[rows.len() - 1]);
        for row in rows[..rows.len() - 1].iter().rev() {
            acc = acc * mu + branch(row);
        }
        out.push(acc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn naive_dft(x: &[Complex64], sign: f64) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(i, v)| {
                        v * Complex64::from_polar(1.0, sign * 2.0 * PI * (k * i) as f64 / n as f64)
                    })
                    .sum()
            })
            .collect()
    }

    fn pseudo_random(n: usize, seed: u64) -> Vec<Complex64> {
        let mut s = seed;
        let mut next = || {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        (0..n).map(|_| Complex64::new(next(), next())).collect()
    }

    #[test]
    fn delta_and_flat_spectrum() {
        let ones = vec![Complex64::new(1.0, 0.0); 64];
        let taps = inverse_spectrum(&ones).unwrap();
        assert!((taps[0] - 1.0).norm() < 1e-15);
        assert!(taps[1..].iter().all(|t| t.norm() < 1e-15));
        let back = forward_spectrum(&taps).unwrap();
        assert!(back.iter().all(|v| (v - 1.0).norm() < 1e-13));
    }

    #[test]
    fn matches_naive_dft_and_round_trips() {
        let x = pseudo_random(256, 3);
        let fast = forward_spectrum(&x).unwrap();
        let slow = naive_dft(&x, -1.0);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).norm() < 1e-10);
        }
        let back = inverse_spectrum(&fast).unwrap();
        let num: f64 = back.iter().zip(&x).map(|(a, b)| (a - b).norm_sqr()).sum();
        let den: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        assert!((num / den).sqrt() < 1e-10);
    }

    #[test]
    fn parseval() {
        let h = pseudo_random(1024, 9);
        let taps = inverse_spectrum(&h).unwrap();
        let e_t: f64 = taps.iter().map(|v| v.norm_sqr()).sum();
        let e_f: f64 = h.iter().map(|v| v.norm_sqr()).sum::<f64>() / h.len() as f64;
        assert!(((e_t - e_f) / e_f).abs() < 1e-10);
    }

    #[test]
    fn shift_theorem() {
        let n = 4096;
        for k in [0usize, 1, 17, 1000] {
            let h: Vec<Complex64> = (0..n)
                .map(|m| Complex64::from_polar(1.0, -2.0 * PI * (m * k) as f64 / n as f64))
                .collect();
            let taps = inverse_spectrum(&h).unwrap();
            for (i, t) in taps.iter().enumerate() {
                let want = if i == k { 1.0 } else { 0.0 };
                assert!((t - want).norm() < 1e-10, "k={k} i={i}");
            }
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(matches!(
            inverse_spectrum(&[Complex64::new(1.0, 0.0); 6]),
            Err(Error::NotPowerOfTwo(6))
        ));
        assert!(forward_spectrum(&[Complex64::new(1.0, 0.0); 12]).is_err());
    }

    #[test]
    fn unit_ratio_is_identity() {
        let x: Vec<f64> = (0..100)
            .map(|i| (i as f64 * 0.37).sin() + 0.1 * i as f64)
            .collect();
        for order in 1..=3 {
            let y = farrow_resample(&x, &ResampleSpec { ratio: 1.0, order }).unwrap();
            assert_eq!(y.len(), x.len());
            for (a, b) in x.iter().zip(&y) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn upsampled_sine_error() {
        let f = 0.05;
        let x: Vec<f64> = (0..400).map(|n| (2.0 * PI * f * n as f64).sin()).collect();
        let spec = ResampleSpec::new(2.0);
        let y = farrow_resample(&x, &spec).unwrap();
        assert_eq!(y.len(), 799);
        // interior only: edge replication is not band-limited
        let err = y[4..y.len() - 4]
            .iter()
            .enumerate()
            .map(|(i, v)| (v - (2.0 * PI * f * (i + 4) as f64 / 2.0).sin()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn dc_is_preserved() {
        let x = vec![3.25; 50];
        for order in 1..=3 {
            for ratio in [0.3, 1.7, 2.0, 5.5] {
                let y = farrow_resample(&x, &ResampleSpec { ratio, order }).unwrap();
                assert!(y.iter().all(|v| (v - 3.25).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn output_length_is_documented() {
        let spec = ResampleSpec::new(1.7);
        assert_eq!(spec.output_len(10), 16);
        assert_eq!(farrow_resample(&[0.0; 10], &spec).unwrap().len(), 16);
        assert_eq!(ResampleSpec::new(0.5).output_len(10), 5);
        assert_eq!(ResampleSpec::new(0.5).output_len(1), 1);
    }

    #[test]
    fn complex_input() {
        let x: Vec<Complex64> = (0..64)
            .map(|n| Complex64::from_polar(1.0, 0.1 * n as f64))
            .collect();
        let y = farrow_resample(&x, &ResampleSpec::new(2.0)).unwrap();
        for (n, v) in y.iter().enumerate().skip(4).take(100) {
            assert!((v - Complex64::from_polar(1.0, 0.05 * n as f64)).norm() < 1e-3);
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(farrow_resample(
            &[1.0],
            &ResampleSpec {
                ratio: 0.0,
                order: 3
            }
        )
        .is_err());
        assert!(farrow_resample(
            &[1.0],
            &ResampleSpec {
                ratio: 1.0,
                order: 4
            }
        )
        .is_err());
        assert!(farrow_resample::<f64>(&[], &ResampleSpec::new(1.0)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn linear_in_input(
                xs in proptest::collection::vec(-10.0f64..10.0, 2..60),
                a in -3.0f64..3.0,
                b in -3.0f64..3.0,
                ratio in 0.2f64..5.0,
                order in 1u8..=3,
            ) {
                let ys: Vec<f64> = xs.iter().map(|v| v.cos() * 4.0).collect();
                let spec = ResampleSpec { ratio, order };
                let combo: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| a * x + b * y).collect();
                let lhs = farrow_resample(&combo, &spec).unwrap();
                let rx = farrow_resample(&xs, &spec).unwrap();
                let ry = farrow_resample(&ys, &spec).unwrap();
                for i in 0..lhs.len() {
                    prop_assert!((lhs[i] - (a * rx[i] + b * ry[i])).abs() < 1e-12);
                }
            }

            #[test]
            fn integer_round_trip_of_band_limited_signal(
                up in 2usize..=4,
                freqs in proptest::collection::vec(0.0f64..0.2, 1..4),
                phases in proptest::collection::vec(0.0f64..6.28, 4),
            ) {
                // components below 40 % of Nyquist (0.2 cycles/sample)
                let x: Vec<f64> = (0..300)
                    .map(|n| freqs.iter().zip(&phases).map(|(f, p)| (2.0 * PI * f * n as f64 + p).sin()).sum())
                    .collect();
                let r = up as f64;
                let y = farrow_resample(&x, &ResampleSpec::new(r)).unwrap();
                let z = farrow_resample(&y, &ResampleSpec::new(1.0 / r)).unwrap();
                prop_assert_eq!(z.len(), x.len());
                let rmse = (x.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
                prop_assert!(rmse < 1e-3);
            }
        }
    }

    #[test]
    fn fractional_round_trip_of_slow_signal() {
        // Two fractional interpolations compound the Lagrange error, so the
        // non-integer round trip is checked on a signal at 10 % of Nyquist.
        let x: Vec<f64> = (0..400)
            .map(|n| (2.0 * PI * 0.05 * n as f64).sin())
            .collect();
        let y = farrow_resample(&x, &ResampleSpec::new(1.7)).unwrap();
        let z = farrow_resample(&y, &ResampleSpec::new(1.0 / 1.7)).unwrap();
        let n = z.len().min(x.len()) - 4;
        let rmse = (x[4..n]
            .iter()
            .zip(&z[4..n])
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / (n - 4) as f64)
            .sqrt();
        assert!(rmse < 1e-3, "{rmse}");
    }
}
