//! Splitting a cluster into dispersion classes by first-path magnitude.
//!
//! Boundaries sit where the mean path count changes abruptly as a function
//! of first-path magnitude. A sliding window compares the mean count just
//! above and just below each candidate magnitude; significant, well
//! separated peaks of that contrast become thresholds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{mean, variance};

pub const CLASSES: usize = 5;

/// Candidate thresholds scanned across the magnitude range.
pub const SCAN_POINTS: usize = 400;
/// Half-window as a fraction of the magnitude range.
pub const WINDOW_FRACTION: f64 = 0.05;
/// Contrast (in pooled standard errors) needed for a change point.
pub const SIGNIFICANCE: f64 = 3.0;
/// Fallback thresholds are these magnitude quantiles.
pub const FALLBACK_QUANTILES: [f64; 4] = [0.8, 0.6, 0.4, 0.2];

const MIN_SIDE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassBoundaries {
    /// Strictly decreasing magnitudes `t1 > t2 > t3 > t4`.
    pub thresholds: [f64; 4],
    /// Set when fewer than four change points were found and quantiles
    /// were used instead.
    pub fallback: bool,
}

impl ClassBoundaries {
    pub fn new(thresholds: [f64; 4]) -> Result<Self> {
        let b = ClassBoundaries {
            thresholds,
            fallback: false,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.thresholds;
        if t.iter().any(|v| !v.is_finite()) || !t.windows(2).all(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument(format!(
                "class thresholds {t:?} must be strictly decreasing"
            )));
        }
        Ok(())
    }
}

/// Class (1 to 5) of a channel. Single-path channels are Class I; otherwise
/// the first-path magnitude picks the band, with a magnitude exactly on a
/// threshold going to the higher-magnitude class. Multi-path channels above
/// the top threshold are Class II.
pub fn classify(first_magnitude: f64, path_count: usize, boundaries: &ClassBoundaries) -> u8 {
    if path_count <= 1 {
        return 1;
    }
    let band = boundaries
        .thresholds
        .iter()
        .take_while(|&&t| first_magnitude < t)
        .count();
    (band as u8 + 1).max(2)
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn strictly_decreasing(mut t: [f64; 4]) -> [f64; 4] {
    for i in 1..4 {
        if t[i] >= t[i - 1] {
            t[i] = t[i - 1].next_down();
        }
    }
    t
}

/// Mean-shift contrast at each scan point: `(x, z)` pairs.
pub fn contrast_profile(samples: &[(f64, usize)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = samples.iter().map(|&(m, n)| (m, n as f64)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (lo, hi) = (pts[0].0, pts[pts.len() - 1].0);
    let range = hi - lo;
    if !(range > 0.0) {
        return Vec::new();
    }
    let w = WINDOW_FRACTION * range;
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let counts: Vec<f64> = pts.iter().map(|p| p.1).collect();
    (1..SCAN_POINTS)
        .map(|s| {
            let g = lo + range * s as f64 / SCAN_POINTS as f64;
            let a = xs.partition_point(|&x| x < g - w);
            let b = xs.partition_point(|&x| x < g);
            let c = xs.partition_point(|&x| x <= g + w);
            let (below, above) = (&counts[a..b], &counts[b..c]);
            if below.len() < MIN_SIDE || above.len() < MIN_SIDE {
                return (g, 0.0);
            }
            // counts fall as magnitude rises, so positive z marks a step down
            let diff = mean(below) - mean(above);
            let se = (variance(below) / below.len() as f64 + variance(above) / above.len() as f64)
                .sqrt();
            let z = if se > 0.0 {
                diff / se
            } else if diff != 0.0 {
                diff.signum() * f64::INFINITY
            } else {
                0.0
            };
            (g, z)
        })
        .collect()
}

/// Four class thresholds for one cluster from `(first-path magnitude, path
/// count)` pairs.
pub fn detect_class_boundaries(
    samples: &[(f64, usize)],
    min_records: usize,
) -> Result<ClassBoundaries> {
    if samples.len() < min_records.max(2) {
        return Err(Error::InsufficientData(format!(
            "boundary detection needs {} channels, got {}",
            min_records.max(2),
            samples.len()
        )));
    }
    if samples.iter().any(|s| !s.0.is_finite()) {
        return Err(Error::InvalidArgument("non-finite magnitude".into()));
    }
    let profile = contrast_profile(samples);
    let mut sorted: Vec<f64> = samples.iter().map(|s| s.0).collect();
    sorted.sort_by(f64::total_cmp);
    let range = sorted[sorted.len() - 1] - sorted[0];

    let mut peaks: Vec<(f64, f64)> = (0..profile.len())
        .filter(|&i| {
            let z = profile[i].1.abs();
            let left = if i > 0 { profile[i - 1].1.abs() } else { 0.0 };
            let right = if i + 1 < profile.len() {
                profile[i + 1].1.abs()
            } else {
                0.0
            };
            z > SIGNIFICANCE && z >= left && z > right
        })
        .map(|i| (profile[i].0, profile[i].1.abs()))
        .collect();
    // strongest first, suppress anything within a window of a stronger peak
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
    let w = WINDOW_FRACTION * range;
    let mut kept: Vec<f64> = Vec::new();
    for (x, _) in peaks {
        if kept.iter().all(|k| (k - x).abs() > w) {
            kept.push(x);
        }
        if kept.len() == 4 {
            break;
        }
    }
    if kept.len() == 4 {
        kept.sort_by(|a, b| b.total_cmp(a));
        return Ok(ClassBoundaries {
            thresholds: [kept[0], kept[1], kept[2], kept[3]],
            fallback: false,
        });
    }
    log::warn!(
        "{} change points found, using magnitude quantiles",
        kept.len()
    );
    let q = FALLBACK_QUANTILES.map(|p| quantile_sorted(&sorted, p));
    Ok(ClassBoundaries {
        thresholds: strictly_decreasing(q),
        fallback: true,
    })
}

/// Sample mean and unbiased variance of path counts.
pub fn fit_gaussian_counts(counts: &[usize]) -> Result<(f64, f64)> {
    if counts.len() < 2 {
        return Err(Error::InsufficientData(
            "path-count variance needs two or more records".into(),
        ));
    }
    let xs: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let (m, v) = (mean(&xs), variance(&xs));
    if v == 0.0 {
        log::warn!("path counts are all {m}: zero variance");
    }
    Ok((m, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn staircase(truth: [f64; 4], n: usize, seed: u64) -> Vec<(f64, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|_| {
                let m: f64 = rng.random();
                let level = truth.iter().take_while(|&&t| m < t).count();
                let c = (1.0 + 3.0 * level as f64 + noise.sample(&mut rng))
                    .round()
                    .max(1.0);
                (m, c as usize)
            })
            .collect()
    }

    #[test]
    fn planted_staircase_recovered() {
        let truth = [0.85, 0.55, 0.4, 0.15];
        let b = detect_class_boundaries(&staircase(truth, 4000, 3), 1000).unwrap();
        assert!(!b.fallback);
        // within half of the narrowest step
        let half_step = 0.15 / 2.0;
        for (got, want) in b.thresholds.iter().zip(truth) {
            assert!((got - want).abs() < half_step, "{:?}", b.thresholds);
        }
        b.validate().unwrap();
    }

    #[test]
    fn single_path_ensemble_is_all_class_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples: Vec<(f64, usize)> = (0..1500).map(|_| (rng.random::<f64>(), 1)).collect();
        let b = detect_class_boundaries(&samples, 1000).unwrap();
        assert!(b.fallback);
        assert!(samples.iter().all(|&(m, n)| classify(m, n, &b) == 1));
    }

    #[test]
    fn flat_counts_fall_back_to_quantiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples: Vec<(f64, usize)> = (0..2000)
            .map(|_| (rng.random::<f64>(), rng.random_range(2..=8)))
            .collect();
        let b = detect_class_boundaries(&samples, 1000).unwrap();
        assert!(b.fallback);
        let mut mags: Vec<f64> = samples.iter().map(|s| s.0).collect();
        mags.sort_by(f64::total_cmp);
        for (t, q) in b.thresholds.iter().zip(FALLBACK_QUANTILES) {
            assert!((t - quantile_sorted(&mags, q)).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_magnitudes_still_yield_ordered_thresholds() {
        let samples = vec![(0.3, 3usize); 1200];
        let b = detect_class_boundaries(&samples, 1000).unwrap();
        b.validate().unwrap();
    }

    #[test]
    fn too_few_records() {
        assert!(matches!(
            detect_class_boundaries(&[(0.1, 2); 10], 1000),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn classification_rules() {
        let b = ClassBoundaries::new([0.8, 0.6, 0.4, 0.2]).unwrap();
        assert_eq!(classify(0.9, 1, &b), 1);
        assert_eq!(classify(0.1, 1, &b), 1);
        assert_eq!(classify(0.9, 4, &b), 2);
        assert_eq!(classify(0.7, 4, &b), 2);
        assert_eq!(classify(0.5, 4, &b), 3);
        assert_eq!(classify(0.3, 4, &b), 4);
        assert_eq!(classify(0.1, 4, &b), 5);
        // ties go to the higher-magnitude class
        assert_eq!(classify(0.6, 3, &b), 2);
        assert_eq!(classify(0.2, 3, &b), 4);
        assert!(ClassBoundaries::new([0.8, 0.8, 0.4, 0.2]).is_err());
    }

    #[test]
    fn gaussian_counts() {
        assert_eq!(fit_gaussian_counts(&[7; 40]).unwrap(), (7.0, 0.0));
        assert_eq!(fit_gaussian_counts(&[4, 6]).unwrap(), (5.0, 2.0));
        assert!(fit_gaussian_counts(&[3]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let dist = Normal::new(12.0, 3.0).unwrap();
        let counts: Vec<usize> = (0..10_000)
            .map(|_| f64::round(dist.sample(&mut rng)).max(0.0) as usize)
            .collect();
        let (m, v) = fit_gaussian_counts(&counts).unwrap();
        assert!((m - 12.0).abs() < 0.1, "{m}");
        // rounding adds 1/12 to the variance
        assert!((v - 9.0).abs() < 0.5, "{v}");
    }
}
