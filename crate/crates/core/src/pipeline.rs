//! End-to-end workflows: oracle ensembles, their storage, and the side-by-side
//! comparison of oracle and statistical channels.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::apps::{shannon_capacity, CapacitySummary, CdfPoint, SpectralMask, DEFAULT_QUANTILES};
use crate::cable::CableCatalog;
use crate::changen::{Generator, GeneratorConfig};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_for};
use crate::statfit::{ChannelRecord, ClusterGeometry, StatModelParams};
use crate::stats::{ks_two_sample, mean, spearman};
use crate::tlsolver::{
    channel_response, extract_paths, impulse_response, FrequencyGrid, FrequencyResponse, PathList,
};
use crate::topology::{generate, TopologyConfig};

/// Settings shared by every oracle ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub clusters: Vec<usize>,
    pub per_cluster: usize,
    pub seed: u64,
    pub topology: TopologyConfig,
    pub grid: FrequencyGrid,
    pub geometry: ClusterGeometry,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        let geometry = ClusterGeometry::default();
        EnsembleConfig {
            clusters: (1..=geometry.count).collect(),
            per_cluster: 1000,
            seed: 0,
            topology: TopologyConfig::default(),
            grid: FrequencyGrid::default(),
            geometry,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.topology.validate()?;
        if self.per_cluster == 0 {
            return Err(Error::InvalidArgument(
                "per-cluster count must be positive".into(),
            ));
        }
        if let Some(k) = self.clusters.iter().find(|&&k| k > self.geometry.count) {
            return Err(Error::InvalidArgument(format!(
                "cluster {k} exceeds {}",
                self.geometry.count
            )));
        }
        Ok(())
    }

    /// Distance and topology seed of channel `index` in cluster `k`, uniform
    /// over the cluster band.
    pub fn draw(&self, k: usize, index: usize) -> (f64, u64) {
        let (lo, hi) = self.geometry.band(k);
        let mut rng = rng_for(self.seed, &[k as u64, index as u64]);
        let u: f64 = rng.random();
        let d = (hi - (hi - lo) * u).max(self.geometry.span().0.next_up());
        (d, derive_seed(self.seed, &[k as u64, index as u64, 1]))
    }
}

/// One oracle channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleChannel {
    pub distance: f64,
    pub cluster: usize,
    pub branches: usize,
    pub paths: PathList,
    pub response: FrequencyResponse,
}

/// Topology, sweep and path extraction for one channel.
pub fn oracle_channel(
    distance: f64,
    seed: u64,
    config: &EnsembleConfig,
    catalog: &CableCatalog,
) -> Result<OracleChannel> {
    let cluster = config.geometry.index(distance)?;
    let topo = generate(distance, config.topology.density, seed, &config.topology)?;
    let sweep = channel_response(&topo, catalog, &config.grid)?;
    let paths = extract_paths(&impulse_response(&sweep.response)?)?;
    Ok(OracleChannel {
        distance,
        cluster,
        branches: topo.branches.len(),
        paths,
        response: sweep.response,
    })
}

/// Oracle records for every configured cluster, ordered by cluster and index.
pub fn build_ensemble(
    config: &EnsembleConfig,
    catalog: &CableCatalog,
) -> Result<Vec<ChannelRecord>> {
    config.validate()?;
    let jobs: Vec<(usize, usize)> = config
        .clusters
        .iter()
        .flat_map(|&k| (0..config.per_cluster).map(move |i| (k, i)))
        .collect();
    jobs.par_iter()
        .map(|&(k, i)| {
            let (d, seed) = config.draw(k, i);
            let ch = oracle_channel(d, seed, config, catalog)?;
            Ok(ChannelRecord {
                distance: d,
                cluster: ch.cluster,
                class: None,
                paths: ch.paths,
            })
        })
        .collect()
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn cluster_file(k: usize) -> String {
    format!("cluster_{k:02}.json")
}

/// Stores records as one JSON file per cluster.
pub fn write_ensemble(dir: &Path, records: &[ChannelRecord]) -> Result<Vec<PathBuf>> {
    let mut by_cluster: BTreeMap<usize, Vec<&ChannelRecord>> = BTreeMap::new();
    for r in records {
        by_cluster.entry(r.cluster).or_default().push(r);
    }
    let mut written = Vec::new();
    for (k, recs) in by_cluster {
        let path = dir.join(cluster_file(k));
        write_atomic(&path, serde_json::to_string(&recs)?.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Reads every per-cluster file of `dir`, in cluster order.
pub fn read_ensemble(dir: &Path) -> Result<Vec<ChannelRecord>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("cluster_") && n.ends_with(".json"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no cluster files in {}",
            dir.display()
        )));
    }
    let mut out = Vec::new();
    for f in files {
        let recs: Vec<ChannelRecord> = serde_json::from_str(&std::fs::read_to_string(&f)?)?;
        out.extend(recs);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub ensemble: EnsembleConfig,
    /// Equal-width frequency bands for the gain table.
    pub bands: usize,
    pub tx: SpectralMask,
    pub noise: SpectralMask,
    pub generator: GeneratorConfig,
    pub quantiles: Vec<f64>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            ensemble: EnsembleConfig {
                clusters: vec![5, 10, 15, 20],
                per_cluster: 500,
                ..Default::default()
            },
            bands: 10,
            tx: SpectralMask::default_transmit(),
            noise: SpectralMask::default_noise(),
            generator: GeneratorConfig::default(),
            quantiles: DEFAULT_QUANTILES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSide {
    /// Mean `|H|²` per band in dB.
    pub gain_db: Vec<f64>,
    pub capacity: CapacitySummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterComparison {
    pub cluster: usize,
    pub oracle: ModelSide,
    pub statistical: ModelSide,
    /// `|C_stat - C_oracle| / C_oracle` of the mean capacities.
    pub capacity_discrepancy: f64,
    /// Two-sample KS statistic and p-value between the capacity samples.
    pub capacity_ks: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    /// Band edges in Hz, `bands + 1` values.
    pub band_edges: Vec<f64>,
    pub clusters: Vec<ClusterComparison>,
    /// Rank correlation of mean capacity with cluster index.
    pub capacity_trend_oracle: f64,
    pub capacity_trend_statistical: f64,
}

/// Mean `|H|²` per band, linear.
fn band_power(h: &FrequencyResponse, bands: usize) -> Vec<f64> {
    let n = h.h.len();
    (0..bands)
        .map(|b| {
            let (lo, hi) = (b * n / bands, (b + 1) * n / bands);
            h.h[lo..hi].iter().map(|v| v.norm_sqr()).sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Mean, CDF and quantiles of capacity samples.
pub fn summarize_capacities(capacities: Vec<f64>, levels: &[f64]) -> Result<CapacitySummary> {
    if capacities.is_empty() {
        return Err(Error::InsufficientData("no capacities to summarize".into()));
    }
    let mut sorted = capacities.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut cdf: Vec<CdfPoint> = Vec::new();
    for (i, &c) in sorted.iter().enumerate() {
        let p = (i + 1) as f64 / n as f64;
        match cdf.last_mut() {
            Some(last) if last.capacity == c => last.probability = p,
            _ => cdf.push(CdfPoint {
                capacity: c,
                probability: p,
            }),
        }
    }
    let quantiles = levels
        .iter()
        .map(|&q| (q, sorted[((q * n as f64).ceil() as usize).clamp(1, n) - 1]))
        .collect();
    Ok(CapacitySummary {
        count: n,
        mean: mean(&capacities),
        cdf,
        quantiles,
        capacities,
    })
}

fn side(samples: Vec<(Vec<f64>, f64)>, levels: &[f64]) -> Result<ModelSide> {
    let bands = samples[0].0.len();
    let gain_db = (0..bands)
        .map(|b| {
            10.0 * (samples.iter().map(|s| s.0[b]).sum::<f64>() / samples.len() as f64).log10()
        })
        .collect();
    Ok(ModelSide {
        gain_db,
        capacity: summarize_capacities(samples.into_iter().map(|s| s.1).collect(), levels)?,
    })
}

/// Oracle and statistical ensembles at the same distances, per cluster.
pub fn compare(
    params: &StatModelParams,
    config: &CompareConfig,
    catalog: &CableCatalog,
) -> Result<CompareReport> {
    let ens = &config.ensemble;
    ens.validate()?;
    if config.bands == 0 || config.bands > ens.grid.bins {
        return Err(Error::InvalidArgument(format!(
            "band count {} out of range",
            config.bands
        )));
    }
    if params.grid != ens.grid {
        return Err(Error::GridMismatch {
            expected: ens.grid.bins,
            got: params.grid.bins,
        });
    }
    let generator = Generator::new(params, config.generator)?;
    let mut clusters = Vec::new();
    for &k in &ens.clusters {
        let pairs: Vec<((Vec<f64>, f64), (Vec<f64>, f64))> = (0..ens.per_cluster)
            .into_par_iter()
            .map(|i| {
                let (d, seed) = ens.draw(k, i);
                let oracle = oracle_channel(d, seed, ens, catalog)?.response;
                let stat = generator
                    .generate(d, derive_seed(ens.seed, &[k as u64, i as u64, 2]))?
                    .frequency_response()?;
                let eval = |h: &FrequencyResponse| -> Result<(Vec<f64>, f64)> {
                    Ok((
                        band_power(h, config.bands),
                        shannon_capacity(h, &config.tx, &config.noise)?,
                    ))
                };
                Ok((eval(&oracle)?, eval(&stat)?))
            })
            .collect::<Result<_>>()?;
        let (o, s): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let oracle = side(o, &config.quantiles)?;
        let statistical = side(s, &config.quantiles)?;
        let capacity_discrepancy =
            (statistical.capacity.mean - oracle.capacity.mean).abs() / oracle.capacity.mean;
        let capacity_ks = ks_two_sample(
            &oracle.capacity.capacities,
            &statistical.capacity.capacities,
        );
        clusters.push(ClusterComparison {
            cluster: k,
            oracle,
            statistical,
            capacity_discrepancy,
            capacity_ks,
        });
    }
    let ks: Vec<f64> = clusters.iter().map(|c| c.cluster as f64).collect();
    let trend = |f: fn(&ClusterComparison) -> f64| {
        if ks.len() < 2 {
            return f64::NAN;
        }
        spearman(&ks, &clusters.iter().map(f).collect::<Vec<_>>())
    };
    let capacity_trend_oracle = trend(|c| c.oracle.capacity.mean);
    let capacity_trend_statistical = trend(|c| c.statistical.capacity.mean);
    let bw = ens.grid.bandwidth;
    let band_edges = (0..=config.bands)
        .map(|b| bw * b as f64 / config.bands as f64)
        .collect();
    Ok(CompareReport {
        band_edges,
        clusters,
        capacity_trend_oracle,
        capacity_trend_statistical,
    })
}

/// File name and contents of every artifact of a comparison.
pub fn render_compare(report: &CompareReport) -> Result<Vec<(&'static str, Vec<u8>)>> {
    let mut gain = csv::Writer::from_writer(Vec::new());
    gain.write_record([
        "cluster",
        "band_lo_hz",
        "band_hi_hz",
        "oracle_gain_db",
        "statistical_gain_db",
    ])?;
    for c in &report.clusters {
        for b in 0..c.oracle.gain_db.len() {
            gain.write_record([
                c.cluster.to_string(),
                report.band_edges[b].to_string(),
                report.band_edges[b + 1].to_string(),
                c.oracle.gain_db[b].to_string(),
                c.statistical.gain_db[b].to_string(),
            ])?;
        }
    }
    let mut cap = csv::Writer::from_writer(Vec::new());
    cap.write_record([
        "cluster",
        "oracle_mean_bps",
        "statistical_mean_bps",
        "relative_discrepancy",
        "ks_statistic",
        "ks_p_value",
    ])?;
    for c in &report.clusters {
        cap.write_record([
            c.cluster.to_string(),
            c.oracle.capacity.mean.to_string(),
            c.statistical.capacity.mean.to_string(),
            c.capacity_discrepancy.to_string(),
            c.capacity_ks.0.to_string(),
            c.capacity_ks.1.to_string(),
        ])?;
    }
    let mut cdf = csv::Writer::from_writer(Vec::new());
    cdf.write_record(["cluster", "model", "capacity_bps", "probability"])?;
    for c in &report.clusters {
        for (name, s) in [("oracle", &c.oracle), ("statistical", &c.statistical)] {
            for p in &s.capacity.cdf {
                cdf.write_record([
                    c.cluster.to_string(),
                    name.to_string(),
                    p.capacity.to_string(),
                    p.probability.to_string(),
                ])?;
            }
        }
    }
    let finish = |w: csv::Writer<Vec<u8>>| w.into_inner().map_err(|e| Error::Io(e.into_error()));
    let summary = serde_json::json!({
        "band_edges_hz": report.band_edges,
        "capacity_trend_oracle": report.capacity_trend_oracle,
        "capacity_trend_statistical": report.capacity_trend_statistical,
        "clusters": report.clusters.iter().map(|c| serde_json::json!({
            "cluster": c.cluster,
            "oracle_mean_capacity_bps": c.oracle.capacity.mean,
            "statistical_mean_capacity_bps": c.statistical.capacity.mean,
            "capacity_discrepancy": c.capacity_discrepancy,
            "capacity_ks": [c.capacity_ks.0, c.capacity_ks.1],
            "oracle_quantiles": c.oracle.capacity.quantiles,
            "statistical_quantiles": c.statistical.capacity.quantiles,
        })).collect::<Vec<_>>(),
    });
    Ok(vec![
        ("gain.csv", finish(gain)?),
        ("capacity.csv", finish(cap)?),
        ("capacity_cdf.csv", finish(cdf)?),
        ("summary.json", serde_json::to_vec_pretty(&summary)?),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statfit::model::planted_params;

    fn small() -> EnsembleConfig {
        EnsembleConfig {
            clusters: vec![3, 9],
            per_cluster: 6,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn draws_stay_in_their_band() {
        let cfg = EnsembleConfig::default();
        for k in 1..=20 {
            for i in 0..50 {
                let (d, _) = cfg.draw(k, i);
                assert_eq!(cfg.geometry.index(d).unwrap(), k);
            }
        }
    }

    #[test]
    fn ensemble_is_deterministic_and_round_trips() {
        let cat = CableCatalog::builtin();
        let a = build_ensemble(&small(), &cat).unwrap();
        let b = build_ensemble(&small(), &cat).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 12);
        assert!(a[..6].iter().all(|r| r.cluster == 3) && a[6..].iter().all(|r| r.cluster == 9));
        let dir = tempfile::tempdir().unwrap();
        let files = write_ensemble(dir.path(), &a).unwrap();
        assert_eq!(files.len(), 2);
        assert_eq!(read_ensemble(dir.path()).unwrap(), a);
        assert!(read_ensemble(tempfile::tempdir().unwrap().path()).is_err());
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x/out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn capacity_summary() {
        let s = summarize_capacities(vec![3.0, 1.0, 2.0, 2.0], &[0.5, 1.0]).unwrap();
        assert_eq!(s.cdf.len(), 3);
        assert_eq!(
            s.cdf[1],
            CdfPoint {
                capacity: 2.0,
                probability: 0.75
            }
        );
        assert_eq!(s.quantiles, vec![(0.5, 2.0), (1.0, 3.0)]);
        assert_eq!(s.mean, 2.0);
    }

    #[test]
    fn comparison_renders_identically() {
        let params = planted_params();
        let config = CompareConfig {
            ensemble: small(),
            ..Default::default()
        };
        let cat = CableCatalog::builtin();
        let a = render_compare(&compare(&params, &config, &cat).unwrap()).unwrap();
        let b = render_compare(&compare(&params, &config, &cat).unwrap()).unwrap();
        assert_eq!(a, b);
        let names: Vec<&str> = a.iter().map(|f| f.0).collect();
        assert_eq!(
            names,
            [
                "gain.csv",
                "capacity.csv",
                "capacity_cdf.csv",
                "summary.json"
            ]
        );
        let gain = String::from_utf8(a[0].1.clone()).unwrap();
        assert_eq!(gain.lines().count(), 1 + 2 * 10);
    }
}
