//! Random tree-reduced network topologies: one backbone run from transmitter
//! to receiver with first-order branches tapped off it.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Resistive terminations are drawn from `RESISTANCE_STEP..=RESISTANCE_MAX`
/// in `RESISTANCE_STEP` increments.
pub const RESISTANCE_STEP: f64 = 5.0;
pub const RESISTANCE_MAX: f64 = 200.0;
pub const RESISTANCE_LEVELS: u32 = (RESISTANCE_MAX / RESISTANCE_STEP) as u32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerminalLoad {
    Open,
    Resistive { resistance: f64 },
}

impl TerminalLoad {
    pub fn is_open(&self) -> bool {
        matches!(self, TerminalLoad::Open)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    /// Metres from the transmitter along the backbone.
    pub position: f64,
    pub length: f64,
    pub cable: String,
    pub termination: TerminalLoad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub distance: f64,
    pub branches: Vec<Branch>,
    pub backbone_cable: String,
    pub source_impedance: f64,
    pub load_impedance: f64,
}

impl Topology {
    /// A bare backbone with no branches.
    pub fn line(distance: f64, cable: &str, source_impedance: f64, load_impedance: f64) -> Self {
        Topology {
            distance,
            branches: Vec::new(),
            backbone_cable: cable.to_string(),
            source_impedance,
            load_impedance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidTopology(m));
        if !(self.distance > 0.0 && self.distance.is_finite()) {
            return bad(format!("distance {} must be positive", self.distance));
        }
        let mut prev = 0.0;
        for (i, b) in self.branches.iter().enumerate() {
            if !(b.position > 0.0 && b.position < self.distance) {
                return bad(format!("branch {i} position {} outside (0, d)", b.position));
            }
            if b.position < prev {
                return bad(format!("branch {i} is out of order"));
            }
            if !(b.length > 0.0 && b.length.is_finite()) {
                return bad(format!("branch {i} length {} must be positive", b.length));
            }
            if let TerminalLoad::Resistive { resistance } = b.termination {
                if !(resistance > 0.0 && resistance.is_finite()) {
                    return bad(format!(
                        "branch {i} resistance {resistance} must be positive"
                    ));
                }
            }
            prev = b.position;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let topo: Topology = serde_json::from_str(text)?;
        topo.validate()?;
        Ok(topo)
    }
}

/// Distribution of branch lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BranchLength {
    Uniform { min: f64, max: f64 },
    Fixed { length: f64 },
}

impl BranchLength {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            BranchLength::Uniform { min, max } => min + (max - min) * rng.random::<f64>(),
            BranchLength::Fixed { length } => length,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    /// Mean number of branches per 100 m of backbone.
    pub density: f64,
    pub branch_length: BranchLength,
    pub max_branch_length: f64,
    pub backbone_cable: String,
    pub branch_cable: String,
    pub source_impedance: f64,
    pub load_impedance: f64,
    pub open_probability: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            density: 5.0,
            branch_length: BranchLength::Uniform {
                min: 1.0,
                max: 20.0,
            },
            max_branch_length: 20.0,
            backbone_cable: "NAYY150".to_string(),
            branch_cable: "NAYY35".to_string(),
            source_impedance: 50.0,
            load_impedance: 50.0,
            open_probability: 0.5,
        }
    }
}

impl TopologyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.density > 0.0) {
            return Err(Error::InvalidArgument(
                "branch density must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.open_probability) {
            return Err(Error::InvalidArgument(
                "open probability outside [0, 1]".into(),
            ));
        }
        let ok = match self.branch_length {
            BranchLength::Uniform { min, max } => {
                min > 0.0 && max >= min && max <= self.max_branch_length
            }
            BranchLength::Fixed { length } => length > 0.0 && length <= self.max_branch_length,
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "branch length distribution {:?} must lie in (0, {}]",
                self.branch_length, self.max_branch_length
            )));
        }
        Ok(())
    }

    /// One branch length, capped at `max_branch_length`.
    pub fn branch_length_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.branch_length.sample(rng).min(self.max_branch_length)
    }

    pub fn sample_termination<R: Rng + ?Sized>(&self, rng: &mut R) -> TerminalLoad {
        if rng.random::<f64>() < self.open_probability {
            TerminalLoad::Open
        } else {
            let level = rng.random_range(1..=RESISTANCE_LEVELS);
            TerminalLoad::Resistive {
                resistance: level as f64 * RESISTANCE_STEP,
            }
        }
    }

    /// Draws a topology of backbone length `distance` using `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, distance: f64, rng: &mut R) -> Result<Topology> {
        if !(distance > 0.0 && distance.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "distance {distance} must be positive"
            )));
        }
        self.validate()?;
        let mean = self.density * distance / 100.0;
        let count = Poisson::new(mean)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .sample(rng) as usize;
        let mut positions: Vec<f64> = (0..count)
            .map(|_| loop {
                let p = distance * rng.random::<f64>();
                if p > 0.0 {
                    break p;
                }
            })
            .collect();
        positions.sort_by(f64::total_cmp);
        let branches = positions
            .into_iter()
            .map(|position| {
                let length = self.branch_length_sample(rng);
                let termination = self.sample_termination(rng);
                Branch {
                    position,
                    length,
                    cable: self.branch_cable.clone(),
                    termination,
                }
            })
            .collect();
        Ok(Topology {
            distance,
            branches,
            backbone_cable: self.backbone_cable.clone(),
            source_impedance: self.source_impedance,
            load_impedance: self.load_impedance,
        })
    }
}

/// Deterministic topology for `(distance, density, seed)` with the remaining
/// settings taken from `config`.
pub fn generate(
    distance: f64,
    density: f64,
    seed: u64,
    config: &TopologyConfig,
) -> Result<Topology> {
    let config = TopologyConfig {
        density,
        ..config.clone()
    };
    config.sample(distance, &mut rng_for(seed, &[]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use crate::stats::ks_one_sample;

    #[test]
    fn branch_count_is_poisson() {
        let cfg = TopologyConfig::default();
        let n = 100_000;
        let counts: Vec<f64> = (0..n)
            .map(|s| generate(100.0, 5.0, s, &cfg).unwrap().branches.len() as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / n as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 5.0).abs() < 0.05, "mean {mean}");
        assert!((var - 5.0).abs() < 0.15, "var {var}");
    }

    #[test]
    fn half_of_terminations_are_open() {
        let cfg = TopologyConfig::default();
        let mut rng = rng_for(11, &[]);
        let loads: Vec<TerminalLoad> = (0..100_000)
            .map(|_| cfg.sample_termination(&mut rng))
            .collect();
        let open = loads.iter().filter(|l| l.is_open()).count() as f64 / loads.len() as f64;
        assert!((open - 0.5).abs() < 0.01, "{open}");
        for l in &loads {
            if let TerminalLoad::Resistive { resistance } = l {
                assert!(*resistance >= 5.0 && *resistance <= 200.0);
                assert_eq!(resistance % 5.0, 0.0);
            }
        }
    }

    #[test]
    fn branch_length_moments_and_support() {
        let cfg = TopologyConfig::default();
        let mut rng = rng_for(5, &[]);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| cfg.branch_length_sample(&mut rng))
            .collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - 10.5).abs() < 0.1, "{mean}");
        assert!(xs.iter().all(|&x| x > 0.0 && x <= 20.0));

        let fixed = TopologyConfig {
            branch_length: BranchLength::Fixed { length: 7.0 },
            ..TopologyConfig::default()
        };
        assert!((0..100).all(|_| fixed.branch_length_sample(&mut rng) == 7.0));
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        let cfg = TopologyConfig::default();
        for seed in 0..200 {
            let a = generate(63.0, 5.0, seed, &cfg).unwrap();
            let b = generate(63.0, 5.0, seed, &cfg).unwrap();
            assert_eq!(a, b);
            a.validate().unwrap();
        }
    }

    #[test]
    fn positions_are_sorted_uniforms() {
        // For a fixed count n, the j-th sorted position divided by d is Beta(j, n-j+1);
        // pooling all positions of fixed-n topologies gives back Uniform(0, 1).
        let cfg = TopologyConfig::default();
        let mut pooled = Vec::new();
        let mut seed = 0;
        let mut ensembles = 0;
        while ensembles < 10_000 {
            let t = generate(80.0, 5.0, seed, &cfg).unwrap();
            seed += 1;
            if t.branches.len() == 4 {
                pooled.extend(t.branches.iter().map(|b| b.position / 80.0));
                ensembles += 1;
            }
        }
        let (_, p) = ks_one_sample(&pooled, |x| x.clamp(0.0, 1.0));
        assert!(p > 0.01, "p = {p}");
        // smallest of four uniforms: CDF 1 - (1-x)^4
        let mins: Vec<f64> = pooled.chunks(4).map(|c| c[0]).collect();
        let (_, p) = ks_one_sample(&mins, |x| 1.0 - (1.0 - x.clamp(0.0, 1.0)).powi(4));
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn json_round_trip() {
        let empty = Topology::line(30.0, "NAYY150", 50.0, 50.0);
        assert_eq!(
            Topology::from_json(&empty.to_json().unwrap()).unwrap(),
            empty
        );

        let cfg = TopologyConfig::default();
        let mut seed = 0;
        let t = loop {
            let t = generate(100.0, 5.0, seed, &cfg).unwrap();
            if t.branches.len() == 5 {
                break t;
            }
            seed += 1;
        };
        let back = Topology::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
        for (a, b) in back.branches.iter().zip(&t.branches) {
            assert_eq!(a.position.to_bits(), b.position.to_bits());
            assert_eq!(a.length.to_bits(), b.length.to_bits());
        }
    }

    #[test]
    fn missing_distance_is_reported() {
        let text = r#"{"branches":[],"backbone_cable":"NAYY150","source_impedance":50.0,"load_impedance":50.0}"#;
        let err = Topology::from_json(text).unwrap_err().to_string();
        assert!(err.contains("distance"), "{err}");
        assert!(err.contains("line"), "{err}");
    }
}
