use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cable_loss::{fit_cable_loss, matched_line_sweeps, CableLoss};
use super::classes::{
    classify, detect_class_boundaries, fit_gaussian_counts, ClassBoundaries, CLASSES,
};
use super::curves::{
    fit_double_exponential, fit_linear, fit_power_law, CurveFit, DoubleExp, Linear, Trend,
};
use super::gev::{fit_gev, Gev};
use super::{ChannelRecord, ClusterGeometry};
use crate::cable::CableCatalog;
use crate::changen::Synthesizer;
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::tlsolver::FrequencyGrid;

pub const MODEL_VERSION: u32 = 1;

/// Evaluated variances are floored here so a degenerate trend still yields
/// a valid normal distribution.
const MIN_VARIANCE: f64 = 1e-9;
/// Bounds applied to GEV parameters evaluated from trends.
const MIN_GEV_SCALE: f64 = 0.05;
const GEV_SHAPE_BOUNDS: (f64, f64) = (-0.9, 1.5);
/// Floor for magnitudes evaluated from fitted profiles.
const MIN_MAGNITUDE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendFit {
    pub trend: Trend,
    pub points: usize,
    pub residual: f64,
}

impl TrendFit {
    pub fn eval(&self, k: f64) -> f64 {
        self.trend.eval(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathCountTrend {
    pub mean: TrendFit,
    pub variance: TrendFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevTrend {
    pub location: TrendFit,
    pub scale: TrendFit,
    pub shape: TrendFit,
}

/// Per-(class, cluster) statistics behind the trends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub class: u8,
    pub cluster: usize,
    pub records: usize,
    pub count_mean: f64,
    pub count_variance: Option<f64>,
    pub first_path_mean: f64,
    pub intervals: usize,
    pub gev: Option<Gev>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatModelParams {
    pub version: u32,
    pub cluster_geometry: ClusterGeometry,
    /// Seconds per tap.
    pub sample_period: f64,
    /// Metres per second on the backbone cable.
    pub phase_velocity: f64,
    pub grid: FrequencyGrid,
    pub class_boundaries: BTreeMap<usize, ClassBoundaries>,
    /// Empirical class probabilities per cluster, classes I to V.
    pub class_frequencies: BTreeMap<usize, [f64; CLASSES]>,
    /// Classes II to V.
    pub path_count_trend: BTreeMap<u8, PathCountTrend>,
    /// Classes I to V, as a function of cluster index.
    pub first_path_magnitude: BTreeMap<u8, CurveFit<DoubleExp>>,
    /// Per cluster, mean magnitude of later paths against tap index.
    pub pdp: BTreeMap<usize, CurveFit<DoubleExp>>,
    /// Classes II to V.
    pub gev_trends: BTreeMap<u8, GevTrend>,
    pub cable_loss: CableLoss,
    /// Path magnitudes were divided by the peak gain the cable-loss filter
    /// gives a unit path at the same tap, so applying the filter again at
    /// generation reproduces the observed peaks.
    pub loss_compensated: bool,
    pub cells: Vec<CellSummary>,
}

fn missing(what: String) -> Error {
    Error::Config(format!("model has no {what}"))
}

impl StatModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(Error::Config(format!(
                "unsupported model version {} (expected {MODEL_VERSION})",
                self.version
            )));
        }
        if !(self.sample_period > 0.0 && self.phase_velocity > 0.0) {
            return Err(Error::Config(
                "sample period and phase velocity must be positive".into(),
            ));
        }
        self.grid.validate()?;
        for b in self.class_boundaries.values() {
            b.validate()?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: StatModelParams = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Clusters the model can generate.
    pub fn clusters(&self) -> impl Iterator<Item = usize> + '_ {
        self.class_frequencies.keys().copied()
    }

    /// Cluster of `d`, which must be one the model was fitted for.
    pub fn cluster_of(&self, d: f64) -> Result<usize> {
        let k = self.cluster_geometry.index(d)?;
        if self.class_frequencies.contains_key(&k) {
            return Ok(k);
        }
        let lo = self.clusters().next().map_or(0, |c| c);
        let hi = self.clusters().last().map_or(0, |c| c);
        Err(Error::OutOfRange {
            distance: d,
            min: self.cluster_geometry.band(lo).0,
            max: self.cluster_geometry.band(hi).1,
        })
    }

    /// Metres travelled per tap.
    pub fn tap_distance(&self) -> f64 {
        self.phase_velocity * self.sample_period
    }

    /// Tap index of the direct path, `round(d / (v_p τ))`.
    pub fn first_index(&self, d: f64) -> usize {
        (d / self.tap_distance()).round() as usize
    }

    /// Class probabilities of cluster `k`, renormalised if needed.
    pub fn class_probabilities(&self, k: usize) -> Result<[f64; CLASSES]> {
        let p = self
            .class_frequencies
            .get(&k)
            .ok_or_else(|| missing(format!("class frequencies for cluster {k}")))?;
        if p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!(
                "invalid class frequencies {p:?} for cluster {k}"
            )));
        }
        let sum: f64 = p.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::Config(format!(
                "class frequencies for cluster {k} sum to zero"
            )));
        }
        if (sum - 1.0).abs() > 1e-9 {
            log::warn!("class frequencies for cluster {k} sum to {sum}; renormalising");
        }
        Ok(p.map(|v| v / sum))
    }

    /// Mean and variance of the path count for class `i` in cluster `k`.
    pub fn path_count_moments(&self, i: u8, k: usize) -> Result<(f64, f64)> {
        let t = self
            .path_count_trend
            .get(&i)
            .ok_or_else(|| missing(format!("path-count trend for class {i}")))?;
        let (m, v) = (t.mean.eval(k as f64), t.variance.eval(k as f64));
        if !m.is_finite() || !v.is_finite() {
            return Err(Error::Config(format!(
                "path-count trend for class {i} is not finite at cluster {k}"
            )));
        }
        Ok((m, v.max(MIN_VARIANCE)))
    }

    /// Mean first-path magnitude of class `i` in cluster `k`.
    pub fn first_path_mean(&self, i: u8, k: usize) -> Result<f64> {
        let f = self
            .first_path_magnitude
            .get(&i)
            .ok_or_else(|| missing(format!("first-path magnitude fit for class {i}")))?;
        Ok(f.params.eval(k as f64).max(MIN_MAGNITUDE))
    }

    /// Mean magnitude of a later path at tap `j` in cluster `k`.
    pub fn pdp_mean(&self, k: usize, j: usize) -> Result<f64> {
        let f = self
            .pdp
            .get(&k)
            .ok_or_else(|| missing(format!("delay profile for cluster {k}")))?;
        Ok(f.params.eval(j as f64).max(MIN_MAGNITUDE))
    }

    /// Interval distribution of class `i` in cluster `k`.
    pub fn gev(&self, i: u8, k: usize) -> Result<Gev> {
        let t = self
            .gev_trends
            .get(&i)
            .ok_or_else(|| missing(format!("interval trend for class {i}")))?;
        let x = k as f64;
        Gev::new(
            t.location.eval(x),
            t.scale.eval(x).max(MIN_GEV_SCALE),
            t.shape
                .eval(x)
                .clamp(GEV_SHAPE_BOUNDS.0, GEV_SHAPE_BOUNDS.1),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub geometry: ClusterGeometry,
    pub grid: FrequencyGrid,
    pub backbone_cable: String,
    /// Matched-line lengths for the cable-loss fit, metres.
    pub loss_distances: Vec<f64>,
    pub min_cluster_records: usize,
    pub min_gaussian_records: usize,
    pub min_gev_samples: usize,
    /// Observations needed before a tap index enters the delay profile.
    pub min_pdp_observations: usize,
    pub compensate_loss: bool,
    /// Seeds the dither applied to integer intervals before the GEV fit.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            geometry: ClusterGeometry::default(),
            grid: FrequencyGrid::default(),
            backbone_cable: "NAYY150".into(),
            loss_distances: (1..=11).map(|i| 10.0 * i as f64).collect(),
            min_cluster_records: 1000,
            min_gaussian_records: 30,
            min_gev_samples: super::gev::MIN_GEV_SAMPLES,
            min_pdp_observations: 20,
            compensate_loss: true,
            seed: 0,
        }
    }
}

/// Trend through `(k, value)` points: the preferred family when there are
/// enough points, otherwise the simplest one that fits.
fn fit_trend(points: &[(f64, f64)], power: bool) -> Result<Option<TrendFit>> {
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let n = points.len();
    let fit = match n {
        0 => return Ok(None),
        1 => TrendFit {
            trend: Trend::Linear {
                slope: 0.0,
                intercept: y[0],
            },
            points: 1,
            residual: 0.0,
        },
        _ if power && n >= 4 => {
            let f = fit_power_law(&x, &y)?;
            TrendFit {
                trend: f.params.into(),
                points: n,
                residual: f.residual,
            }
        }
        _ => {
            let f = fit_linear(&x, &y)?;
            TrendFit {
                trend: f.params.into(),
                points: n,
                residual: f.residual,
            }
        }
    };
    if n > 1 && n < 4 && power {
        log::warn!("only {n} points for a power-law trend; using a line");
    }
    Ok(Some(fit))
}

/// Decaying profile through `(x, y > 0)` points: a double exponential when
/// there are six or more points, otherwise a single exponential.
fn fit_profile(points: &[(f64, f64)]) -> Result<Option<CurveFit<DoubleExp>>> {
    let pts: Vec<(f64, f64)> = points.iter().copied().filter(|p| p.1 > 0.0).collect();
    let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let single = |a: f64, b: f64| DoubleExp {
        a,
        b,
        c: 0.0,
        d: 0.0,
    };
    Ok(match pts.len() {
        0 => None,
        1 => Some(CurveFit {
            params: single(y[0], 0.0),
            residual: 0.0,
            points: 1,
        }),
        n if n < 6 => {
            log::warn!("only {n} points for a double-exponential profile; using one exponential");
            let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
            let l = if x.iter().all(|&v| v == x[0]) {
                Linear {
                    slope: 0.0,
                    intercept: crate::stats::mean(&ly),
                }
            } else {
                fit_linear(&x, &ly)?.params
            };
            let b = l.slope.min(0.0);
            let a = (crate::stats::mean(&ly) - b * crate::stats::mean(&x)).exp();
            let params = single(a, b);
            let residual = x
                .iter()
                .zip(&y)
                .map(|(&xi, &yi)| (params.eval(xi) - yi).powi(2))
                .sum::<f64>()
                .sqrt();
            Some(CurveFit {
                params,
                residual,
                points: n,
            })
        }
        _ => Some(fit_double_exponential(&x, &y)?),
    })
}

#[derive(Default)]
struct Cell {
    counts: Vec<usize>,
    first: Vec<f64>,
    intervals: Vec<usize>,
}

/// Fits a complete model to classified-or-not oracle records.
pub fn fit_model(
    records: &[ChannelRecord],
    config: &FitConfig,
    catalog: &CableCatalog,
) -> Result<StatModelParams> {
    config.grid.validate()?;
    let cable = catalog.get(&config.backbone_cable)?;
    let phase_velocity = cable.phase_velocity();
    let sample_period = config.grid.sample_period();

    let sweeps = matched_line_sweeps(cable, &config.loss_distances, &config.grid)?;
    let cable_loss = fit_cable_loss(&sweeps)?.model;

    let synth = Synthesizer::new(config.grid, phase_velocity, Some(cable_loss));
    let mut gains: HashMap<usize, f64> = HashMap::new();
    let mut gain = |j: usize| -> Result<f64> {
        if !config.compensate_loss {
            return Ok(1.0);
        }
        if let Some(g) = gains.get(&j) {
            return Ok(*g);
        }
        let g = synth.peak_gain(j)?;
        gains.insert(j, g);
        Ok(g)
    };

    let mut by_cluster: BTreeMap<usize, Vec<&ChannelRecord>> = BTreeMap::new();
    for r in records {
        if r.paths.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "record at {} m has no paths",
                r.distance
            )));
        }
        let k = config.geometry.index(r.distance)?;
        if k != r.cluster {
            return Err(Error::InvalidArgument(format!(
                "record at {} m is labelled cluster {} but lies in {k}",
                r.distance, r.cluster
            )));
        }
        by_cluster.entry(k).or_default().push(r);
    }

    let mut class_boundaries = BTreeMap::new();
    let mut class_frequencies = BTreeMap::new();
    let mut cells: BTreeMap<(u8, usize), Cell> = BTreeMap::new();
    let mut pdp = BTreeMap::new();
    for (&k, recs) in &by_cluster {
        if k == 0 {
            log::warn!(
                "cluster 0 is outside the modelled clusters; {} records skipped",
                recs.len()
            );
            continue;
        }
        if recs.len() < config.min_cluster_records {
            log::warn!(
                "cluster {k}: {} records, {} needed; skipped",
                recs.len(),
                config.min_cluster_records
            );
            continue;
        }
        let samples: Vec<(f64, usize)> = recs
            .iter()
            .map(|r| (r.first_magnitude(), r.paths.len()))
            .collect();
        let b = detect_class_boundaries(&samples, config.min_cluster_records)?;
        let mut freq = [0.0; CLASSES];
        let mut tail: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for r in recs {
            let i = classify(r.first_magnitude(), r.paths.len(), &b);
            freq[i as usize - 1] += 1.0;
            let first = r.paths.paths[0];
            let cell = cells.entry((i, k)).or_default();
            cell.counts.push(r.paths.len());
            cell.first.push(first.magnitude / gain(first.index)?);
            cell.intervals.extend(r.intervals());
            if i >= 2 {
                for p in &r.paths.paths[1..] {
                    let e = tail.entry(p.index).or_insert((0.0, 0));
                    e.0 += p.magnitude / gain(p.index)?;
                    e.1 += 1;
                }
            }
        }
        let total = recs.len() as f64;
        class_frequencies.insert(k, freq.map(|c| c / total));
        class_boundaries.insert(k, b);
        let profile: Vec<(f64, f64)> = tail
            .iter()
            .filter(|(_, v)| v.1 >= config.min_pdp_observations)
            .map(|(&j, v)| (j as f64, v.0 / v.1 as f64))
            .collect();
        if let Some(f) = fit_profile(&profile)? {
            pdp.insert(k, f);
        }
    }
    if class_frequencies.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no cluster has the {} records needed for a fit",
            config.min_cluster_records
        )));
    }

    let mut summaries = Vec::new();
    for (&(i, k), cell) in &cells {
        let dithered = {
            let mut rng = rng_for(config.seed, &[k as u64, i as u64]);
            cell.intervals
                .iter()
                .map(|&g| g as f64 + rng.random::<f64>() - 0.5)
                .collect::<Vec<_>>()
        };
        let gev = if i >= 2 && dithered.len() >= config.min_gev_samples {
            Some(fit_gev(&dithered)?.gev)
        } else {
            None
        };
        let count_variance = (cell.counts.len() >= 2)
            .then(|| fit_gaussian_counts(&cell.counts))
            .transpose()?
            .map(|m| m.1);
        summaries.push(CellSummary {
            class: i,
            cluster: k,
            records: cell.counts.len(),
            count_mean: crate::stats::mean(
                &cell.counts.iter().map(|&c| c as f64).collect::<Vec<_>>(),
            ),
            count_variance,
            first_path_mean: crate::stats::mean(&cell.first),
            intervals: cell.intervals.len(),
            gev,
        });
    }

    let enough = |c: &&CellSummary| c.records >= config.min_gaussian_records;
    let mut path_count_trend = BTreeMap::new();
    let mut gev_trends = BTreeMap::new();
    let mut first_path_magnitude = BTreeMap::new();
    for i in 1..=CLASSES as u8 {
        let class_cells: Vec<&CellSummary> = summaries
            .iter()
            .filter(|c| c.class == i)
            .filter(enough)
            .collect();
        let first: Vec<(f64, f64)> = class_cells
            .iter()
            .map(|c| (c.cluster as f64, c.first_path_mean))
            .collect();
        if let Some(f) = fit_profile(&first)? {
            first_path_magnitude.insert(i, f);
        }
        if i == 1 {
            continue;
        }
        let means: Vec<(f64, f64)> = class_cells
            .iter()
            .map(|c| (c.cluster as f64, c.count_mean))
            .collect();
        let vars: Vec<(f64, f64)> = class_cells
            .iter()
            .filter_map(|c| c.count_variance.map(|v| (c.cluster as f64, v)))
            .collect();
        if let (Some(mean), Some(variance)) = (fit_trend(&means, true)?, fit_trend(&vars, true)?) {
            path_count_trend.insert(i, PathCountTrend { mean, variance });
        }
        let gevs: Vec<(f64, Gev)> = summaries
            .iter()
            .filter(|c| c.class == i)
            .filter_map(|c| c.gev.map(|g| (c.cluster as f64, g)))
            .collect();
        let track = |f: fn(&Gev) -> f64| gevs.iter().map(|(k, g)| (*k, f(g))).collect::<Vec<_>>();
        let power = i == 2;
        if let (Some(location), Some(scale), Some(shape)) = (
            fit_trend(&track(|g| g.location), false)?,
            fit_trend(&track(|g| g.scale), power)?,
            fit_trend(&track(|g| g.shape), power)?,
        ) {
            gev_trends.insert(
                i,
                GevTrend {
                    location,
                    scale,
                    shape,
                },
            );
        }
    }

    // a class can only be generated where every piece it needs was fitted
    let mut kept = BTreeMap::new();
    for (k, mut freq) in class_frequencies {
        for i in 1..=CLASSES as u8 {
            let ok = first_path_magnitude.contains_key(&i)
                && (i == 1
                    || (path_count_trend.contains_key(&i)
                        && gev_trends.contains_key(&i)
                        && pdp.contains_key(&k)));
            if !ok && freq[i as usize - 1] > 0.0 {
                log::warn!("cluster {k}: class {i} lacks fitted statistics and is dropped");
                freq[i as usize - 1] = 0.0;
            }
        }
        let sum: f64 = freq.iter().sum();
        if sum > 0.0 {
            kept.insert(k, freq.map(|v| v / sum));
        } else {
            log::warn!("cluster {k}: no class could be fitted; cluster dropped");
            class_boundaries.remove(&k);
        }
    }
    if kept.is_empty() {
        return Err(Error::InsufficientData(
            "no cluster retained a usable class".into(),
        ));
    }

    let params = StatModelParams {
        version: MODEL_VERSION,
        cluster_geometry: config.geometry,
        sample_period,
        phase_velocity,
        grid: config.grid,
        class_boundaries,
        class_frequencies: kept,
        path_count_trend,
        first_path_magnitude,
        pdp,
        gev_trends,
        cable_loss,
        loss_compensated: config.compensate_loss,
        cells: summaries,
    };
    params.validate()?;
    Ok(params)
}

/// Hand-built parameters with simple closed-form trends, for tests.
#[cfg(test)]
pub(crate) fn planted_params() -> StatModelParams {
    use crate::cable::SPEED_OF_LIGHT;

    let geometry = ClusterGeometry::default();
    let grid = FrequencyGrid::default();
    let phase_velocity = SPEED_OF_LIGHT / 4.388965209986995f64.sqrt();
    let fit = |trend: Trend| TrendFit {
        trend,
        points: 20,
        residual: 0.0,
    };
    let line = |slope: f64, intercept: f64| fit(Trend::Linear { slope, intercept });
    let curve = |a: f64, b: f64, c: f64, d: f64| CurveFit {
        params: DoubleExp { a, b, c, d },
        residual: 0.0,
        points: 20,
    };
    let mut class_boundaries = BTreeMap::new();
    let mut class_frequencies = BTreeMap::new();
    let mut pdp = BTreeMap::new();
    for k in 1..=geometry.count {
        class_boundaries.insert(k, ClassBoundaries::new([0.8, 0.65, 0.5, 0.35]).unwrap());
        class_frequencies.insert(k, [0.1, 0.3, 0.25, 0.2, 0.15]);
        pdp.insert(k, curve(0.3, -0.05, 0.05, -0.005));
    }
    let mut path_count_trend = BTreeMap::new();
    let mut gev_trends = BTreeMap::new();
    let mut first_path_magnitude = BTreeMap::new();
    for i in 1..=CLASSES as u8 {
        first_path_magnitude.insert(i, curve(0.95 - 0.15 * (i - 1) as f64, -0.01, 0.0, 0.0));
        if i >= 2 {
            path_count_trend.insert(
                i,
                PathCountTrend {
                    mean: line(0.2, 1.0 + i as f64),
                    variance: line(0.0, 2.0),
                },
            );
            gev_trends.insert(
                i,
                GevTrend {
                    location: line(0.1, 3.0),
                    scale: line(0.0, 1.5),
                    shape: line(0.0, 0.1),
                },
            );
        }
    }
    let slope = |s: f64| Linear {
        slope: s,
        intercept: 0.0,
    };
    StatModelParams {
        version: MODEL_VERSION,
        cluster_geometry: geometry,
        sample_period: grid.sample_period(),
        phase_velocity,
        grid,
        class_boundaries,
        class_frequencies,
        path_count_trend,
        first_path_magnitude,
        pdp,
        gev_trends,
        cable_loss: CableLoss {
            exponent: 0.7,
            a0: slope(1e-4),
            a1: slope(2e-8),
            b0: slope(std::f64::consts::TAU / phase_velocity),
        },
        loss_compensated: false,
        cells: Vec::new(),
    }
}
