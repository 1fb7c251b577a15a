//! Applications on top of channel responses: Shannon capacity under transmit
//! and noise masks, and propagation of an impulsive noise event to several
//! receiving nodes.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::changen::GeneratedChannel;
use crate::error::{Error, Result};
use crate::tlsolver::{FrequencyResponse, PATH_THRESHOLD};

/// Power spectral density over the band, specified in dBm/Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectralMask {
    Flat {
        dbm_per_hz: f64,
    },
    /// `floor + excess · exp(-f / f0)` in dBm/Hz: a background level plus a
    /// low-frequency excess that decays with frequency.
    ExpDecay {
        floor_dbm_per_hz: f64,
        excess_db: f64,
        f0: f64,
    },
    /// Values on an explicit grid, which must match the channel grid.
    Sampled {
        f_grid: Vec<f64>,
        dbm_per_hz: Vec<f64>,
    },
}

/// Relative tolerance when matching a sampled mask to a channel grid.
const GRID_TOLERANCE: f64 = 1e-9;

impl SpectralMask {
    /// Transmit level used when no mask is given.
    pub fn default_transmit() -> Self {
        SpectralMask::Flat { dbm_per_hz: -50.0 }
    }

    /// Background noise used when no mask is given.
    pub fn default_noise() -> Self {
        SpectralMask::ExpDecay {
            floor_dbm_per_hz: -140.0,
            excess_db: 38.75,
            f0: 0.72e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            SpectralMask::Flat { dbm_per_hz } => dbm_per_hz.is_finite(),
            SpectralMask::ExpDecay {
                floor_dbm_per_hz,
                excess_db,
                f0,
            } => floor_dbm_per_hz.is_finite() && excess_db.is_finite() && *f0 > 0.0,
            SpectralMask::Sampled { f_grid, dbm_per_hz } => {
                f_grid.len() == dbm_per_hz.len()
                    && !f_grid.is_empty()
                    && dbm_per_hz.iter().all(|v| v.is_finite())
            }
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "invalid spectral mask {self:?}"
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: SpectralMask = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    fn dbm_at(&self, f: f64) -> f64 {
        match self {
            SpectralMask::Flat { dbm_per_hz } => *dbm_per_hz,
            SpectralMask::ExpDecay {
                floor_dbm_per_hz,
                excess_db,
                f0,
            } => floor_dbm_per_hz + excess_db * (-f / f0).exp(),
            SpectralMask::Sampled { .. } => unreachable!("sampled masks are evaluated by index"),
        }
    }

    /// PSD in W/Hz at each frequency of `f_grid`.
    pub fn psd_over(&self, f_grid: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        let dbm: Vec<f64> = match self {
            SpectralMask::Sampled {
                f_grid: own,
                dbm_per_hz,
            } => {
                let scale = f_grid.last().copied().unwrap_or(1.0).abs().max(1.0);
                let same = own.len() == f_grid.len()
                    && own
                        .iter()
                        .zip(f_grid)
                        .all(|(a, b)| (a - b).abs() <= GRID_TOLERANCE * scale);
                if !same {
                    return Err(Error::GridMismatch {
                        expected: f_grid.len(),
                        got: own.len(),
                    });
                }
                dbm_per_hz.clone()
            }
            _ => f_grid.iter().map(|&f| self.dbm_at(f)).collect(),
        };
        Ok(dbm
            .into_iter()
            .map(|v| 10f64.powf((v - 30.0) / 10.0))
            .collect())
    }
}

/// `C = Σ Δf log2(1 + |H|² tx / noise)` in bits per second.
pub fn shannon_capacity(
    h: &FrequencyResponse,
    tx: &SpectralMask,
    noise: &SpectralMask,
) -> Result<f64> {
    if h.f_grid.len() != h.h.len() {
        return Err(Error::GridMismatch {
            expected: h.f_grid.len(),
            got: h.h.len(),
        });
    }
    let df = h.spacing();
    let (t, n) = (tx.psd_over(&h.f_grid)?, noise.psd_over(&h.f_grid)?);
    Ok(h.h
        .iter()
        .zip(t.iter().zip(&n))
        .map(|(g, (t, n))| df * (1.0 + g.norm_sqr() * t / n).log2())
        .sum())
}

/// Default quantile levels reported with a capacity ensemble.
pub const DEFAULT_QUANTILES: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    /// Bits per second.
    pub capacity: f64,
    /// Fraction of channels with capacity at or below `capacity`.
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitySummary {
    pub count: usize,
    pub mean: f64,
    /// Empirical CDF with one step per distinct capacity.
    pub cdf: Vec<CdfPoint>,
    /// `(level, capacity)` from the empirical quantile function.
    pub quantiles: Vec<(f64, f64)>,
    /// Per-channel capacities in input order.
    pub capacities: Vec<f64>,
}

pub fn capacity_ensemble(
    channels: &[FrequencyResponse],
    tx: &SpectralMask,
    noise: &SpectralMask,
    levels: &[f64],
) -> Result<CapacitySummary> {
    if channels.is_empty() {
        return Err(Error::InsufficientData(
            "capacity ensemble needs at least one channel".into(),
        ));
    }
    if channels.len() < 100 {
        log::warn!("capacity ensemble of only {} channels", channels.len());
    }
    if let Some(q) = levels.iter().find(|q| !(0.0..=1.0).contains(*q)) {
        return Err(Error::InvalidArgument(format!(
            "quantile level {q} outside [0, 1]"
        )));
    }
    let capacities: Vec<f64> = channels
        .par_iter()
        .map(|h| shannon_capacity(h, tx, noise))
        .collect::<Result<_>>()?;
    crate::pipeline::summarize_capacities(capacities, levels)
}

/// An impulsive noise waveform leaving a source node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseEvent {
    pub source: String,
    /// Samples at the tap period `tau`.
    pub waveform: Vec<f64>,
    /// Seconds.
    pub tau: f64,
}

impl ImpulseEvent {
    /// Rectangular pulse spanning `width` tap periods, that is `width + 1`
    /// samples from its first to its last edge.
    pub fn rectangular(source: &str, amplitude: f64, width: usize, tau: f64) -> Result<Self> {
        let e = ImpulseEvent {
            source: source.into(),
            waveform: vec![amplitude; width + 1],
            tau,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if self.waveform.is_empty() || !self.waveform.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(
                "impulse waveform must be non-empty and finite".into(),
            ));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidArgument(
                "impulse tap period must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Full linear convolution, `len(a) + len(b) - 1` samples.
pub fn convolve(a: &[f64], b: &[Complex64]) -> Vec<Complex64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![Complex64::new(0.0, 0.0); a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &h) in b.iter().enumerate() {
            out[i + j] += h * x;
        }
    }
    out
}

/// Waveform observed at each node: the event convolved with that node's CIR.
pub fn propagate_impulse(
    event: &ImpulseEvent,
    channels: &BTreeMap<String, GeneratedChannel>,
) -> Result<BTreeMap<String, Vec<Complex64>>> {
    event.validate()?;
    channels
        .iter()
        .map(|(node, ch)| {
            if (ch.cir.tau - event.tau).abs() > 1e-9 * event.tau {
                return Err(Error::InvalidArgument(format!(
                    "node {node}: channel tap period {} differs from the event's {}",
                    ch.cir.tau, event.tau
                )));
            }
            Ok((node.clone(), convolve(&event.waveform, &ch.cir.taps)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpulseMeasure {
    /// Peak amplitude `M = max |w|`.
    pub peak: f64,
    /// Seconds between the first and last samples at or above `M/10`.
    pub spread: f64,
}

pub fn measure_impulse(waveform: &[Complex64], tau: f64) -> Result<ImpulseMeasure> {
    let mags: Vec<f64> = waveform.iter().map(|w| w.norm()).collect();
    let peak = mags.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument(
            "cannot measure an all-zero waveform".into(),
        ));
    }
    let floor = peak * PATH_THRESHOLD;
    let first = mags.iter().position(|&m| m >= floor).unwrap_or(0);
    let last = mags.iter().rposition(|&m| m >= floor).unwrap_or(first);
    Ok(ImpulseMeasure {
        peak,
        spread: (last - first) as f64 * tau,
    })
}

/// [`measure_impulse`] for a real waveform.
pub fn measure_real(waveform: &[f64], tau: f64) -> Result<ImpulseMeasure> {
    let c: Vec<Complex64> = waveform.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    measure_impulse(&c, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tlsolver::{ImpulseResponse, PathList};
    use proptest::prelude::*;

    const TAU: f64 = 1.0 / 30e6;

    fn flat(h: Complex64, n: usize) -> FrequencyResponse {
        let df = 30e6 / n as f64;
        FrequencyResponse {
            f_grid: (0..n).map(|m| m as f64 * df).collect(),
            h: vec![h; n],
        }
    }

    fn channel(taps: Vec<Complex64>) -> GeneratedChannel {
        GeneratedChannel {
            distance: 0.0,
            cluster: 0,
            class: 1,
            paths: PathList::default(),
            cir: ImpulseResponse { tau: TAU, taps },
        }
    }

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn capacity_reference_values() {
        let tx = SpectralMask::Flat { dbm_per_hz: -60.0 };
        let noise = SpectralMask::Flat { dbm_per_hz: -60.0 };
        assert_eq!(
            shannon_capacity(&flat(c(0.0), 4096), &tx, &noise).unwrap(),
            0.0
        );
        let cap = shannon_capacity(&flat(c(1.0), 4096), &tx, &noise).unwrap();
        assert!((cap - 30e6).abs() < 1e-6, "{cap}");
        let h = flat(Complex64::new(0.01, 0.02), 1024);
        let lo = shannon_capacity(
            &h,
            &SpectralMask::default_transmit(),
            &SpectralMask::default_noise(),
        )
        .unwrap();
        let hi = shannon_capacity(
            &h,
            &SpectralMask::Flat {
                dbm_per_hz: -50.0 + 10.0 * 2f64.log10(),
            },
            &SpectralMask::default_noise(),
        )
        .unwrap();
        assert!(hi > lo);
    }

    #[test]
    fn sampled_masks_must_share_the_grid() {
        let h = flat(c(1.0), 64);
        let same = SpectralMask::Sampled {
            f_grid: h.f_grid.clone(),
            dbm_per_hz: vec![-80.0; 64],
        };
        assert!(shannon_capacity(&h, &same, &same).is_ok());
        let other = SpectralMask::Sampled {
            f_grid: flat(c(1.0), 32).f_grid,
            dbm_per_hz: vec![-80.0; 32],
        };
        assert!(matches!(
            shannon_capacity(&h, &other, &same),
            Err(Error::GridMismatch { .. })
        ));
        assert!(SpectralMask::from_json(r#"{"kind":"flat","dbm_per_hz":-50}"#).is_ok());
        assert!(SpectralMask::from_json(
            r#"{"kind":"exp_decay","floor_dbm_per_hz":-140,"excess_db":30,"f0":0}"#
        )
        .is_err());
    }

    #[test]
    fn default_noise_decays() {
        let f: Vec<f64> = (0..100).map(|i| i as f64 * 3e5).collect();
        let p = SpectralMask::default_noise().psd_over(&f).unwrap();
        assert!(p.windows(2).all(|w| w[1] <= w[0]) && p.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn ensemble_statistics() {
        let tx = SpectralMask::Flat { dbm_per_hz: -60.0 };
        let same: Vec<FrequencyResponse> = (0..5).map(|_| flat(c(1.0), 256)).collect();
        let s = capacity_ensemble(&same, &tx, &tx, &DEFAULT_QUANTILES).unwrap();
        assert_eq!(s.cdf.len(), 1);
        assert_eq!(s.cdf[0].probability, 1.0);
        let two = vec![flat(c(1.0), 256), flat(c(3f64.sqrt()), 256)];
        let s = capacity_ensemble(&two, &tx, &tx, &[0.5, 1.0]).unwrap();
        assert_eq!(s.cdf.len(), 2);
        assert!((s.cdf[0].capacity - 30e6).abs() < 1e-6 && (s.cdf[1].capacity - 60e6).abs() < 1e-6);
        assert_eq!((s.cdf[0].probability, s.cdf[1].probability), (0.5, 1.0));
        assert!((s.mean - 45e6).abs() < 1e-6);
        assert_eq!(s.quantiles[0].1, s.cdf[0].capacity);
        assert!(capacity_ensemble(&[], &tx, &tx, &[]).is_err());
    }

    #[test]
    fn measurement_conventions() {
        let rect = ImpulseEvent::rectangular("a", 1.0, 8, TAU).unwrap();
        let m = measure_real(&rect.waveform, TAU).unwrap();
        assert_eq!(m.peak, 1.0);
        assert!((m.spread - 8.0 * TAU).abs() < 1e-20);
        let scaled: Vec<f64> = rect.waveform.iter().map(|v| 0.3 * v).collect();
        let s = measure_real(&scaled, TAU).unwrap();
        assert!((s.peak - 0.3).abs() < 1e-15 && s.spread == m.spread);
        let delta = ImpulseEvent::rectangular("a", 2.0, 0, TAU).unwrap();
        assert_eq!(measure_real(&delta.waveform, TAU).unwrap().spread, 0.0);
        assert!(measure_real(&[0.0; 4], TAU).is_err());
        assert!(ImpulseEvent::rectangular("a", 1.0, 3, 0.0).is_err());
    }

    #[test]
    fn propagation_through_simple_channels() {
        let event = ImpulseEvent::rectangular("a", 1.0, 4, TAU).unwrap();
        let mut delta = vec![c(0.0); 32];
        delta[0] = c(1.0);
        let mut shifted = vec![c(0.0); 32];
        shifted[10] = c(0.5);
        let nodes: BTreeMap<String, GeneratedChannel> = [
            ("b".to_string(), channel(delta)),
            ("c".to_string(), channel(shifted)),
        ]
        .into_iter()
        .collect();
        let out = propagate_impulse(&event, &nodes).unwrap();
        let b = &out["b"];
        assert_eq!(b.len(), 5 + 32 - 1);
        assert!(b
            .iter()
            .enumerate()
            .all(|(n, v)| *v == if n < 5 { c(1.0) } else { c(0.0) }));
        let cc = &out["c"];
        assert!(cc.iter().enumerate().all(|(n, v)| *v
            == if (10..15).contains(&n) {
                c(0.5)
            } else {
                c(0.0)
            }));
        let mut wrong = nodes.clone();
        wrong.get_mut("b").unwrap().cir.tau *= 2.0;
        assert!(propagate_impulse(&event, &wrong).is_err());
    }

    proptest! {
        #[test]
        fn propagation_is_linear_and_spreads(amp in 0.1f64..10.0, width in 0usize..12, gaps in proptest::collection::vec((1usize..20, 0.15f64..1.0), 1..5)) {
            let mut taps = vec![c(0.0); 128];
            taps[3] = c(1.0);
            let mut at = 3;
            for (g, m) in &gaps {
                at += g;
                taps[at] = c(*m);
            }
            let nodes: BTreeMap<String, GeneratedChannel> = [("n".to_string(), channel(taps))].into_iter().collect();
            let unit = ImpulseEvent::rectangular("s", 1.0, width, TAU).unwrap();
            let big = ImpulseEvent::rectangular("s", amp, width, TAU).unwrap();
            let a = &propagate_impulse(&unit, &nodes).unwrap()["n"];
            let b = &propagate_impulse(&big, &nodes).unwrap()["n"];
            prop_assert!(a.iter().zip(b).all(|(x, y)| (x * amp - y).norm() <= 1e-12 * amp));
            let input = measure_real(&unit.waveform, TAU).unwrap();
            prop_assert!(measure_impulse(a, TAU).unwrap().spread >= input.spread);
        }
    }
}
