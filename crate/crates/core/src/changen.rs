//! Synthetic channel impulse responses drawn from a fitted [`StatModelParams`].
//!
//! A channel is a sparse set of paths on the tap grid: the direct path at
//! `round(d / (v_p τ))`, followed by paths separated by GEV-distributed
//! intervals. Magnitudes come from the fitted first-path and delay-profile
//! curves with Rayleigh dispersion, and each path is finally filtered by the
//! cable loss of its own travel distance.

use std::f64::consts::{PI, TAU};
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Normal, Weibull};
use serde::{Deserialize, Serialize};

use crate::dsp::{forward_spectrum, inverse_spectrum};
use crate::error::{Error, Result};
use crate::rng::{rng_for, ModelRng};
use crate::statfit::{CableLoss, Gev, StatModelParams, CLASSES};
use crate::tlsolver::{
    FrequencyGrid, FrequencyResponse, ImpulseResponse, Path, PathList, PATH_THRESHOLD,
};

/// How the fitted mean magnitude parameterizes the Rayleigh distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RayleighScale {
    /// Scale chosen so the Rayleigh mean equals the fitted magnitude.
    Mean,
    /// The fitted magnitude is used as the Rayleigh scale itself.
    Scale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Filter every path by the fitted cable loss.
    pub cable_loss: bool,
    /// Draw magnitudes from Rayleigh distributions instead of using the
    /// fitted means directly.
    pub dispersion: bool,
    pub rayleigh_scale: RayleighScale,
    /// Frequency at which the direct-path phase is evaluated; half the
    /// bandwidth when unset.
    pub reference_frequency: Option<f64>,
    /// Rejection-sampling attempts before the parameters are declared
    /// pathological.
    pub max_retries: usize,
    /// Drop later paths weaker than the analysis threshold relative to the
    /// strongest path. Every path is drawn first, so the random stream is
    /// the same either way.
    #[serde(default)]
    pub prune_weak_paths: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            cable_loss: true,
            dispersion: true,
            rayleigh_scale: RayleighScale::Mean,
            reference_frequency: None,
            max_retries: 1000,
            prune_weak_paths: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedChannel {
    pub distance: f64,
    pub cluster: usize,
    pub class: u8,
    /// Sparse paths before cable-loss filtering.
    pub paths: PathList,
    /// Impulse response after cable-loss filtering.
    pub cir: ImpulseResponse,
}

impl GeneratedChannel {
    /// Spectrum of the filtered impulse response over `[0, B)`.
    pub fn frequency_response(&self) -> Result<FrequencyResponse> {
        let h = forward_spectrum(&self.cir.taps)?;
        let spacing = 1.0 / (self.cir.tau * h.len() as f64);
        let f_grid = (0..h.len()).map(|m| m as f64 * spacing).collect();
        Ok(FrequencyResponse { f_grid, h })
    }
}

/// Builds filtered impulse responses from sparse paths.
///
/// The frequency response of a unit path at tap `j` is `A(f, j v_p τ)`; its
/// phase `-b0(d) f` carries the propagation delay, so no separate delay
/// factor is applied. Per-tap responses are cached since they depend on the
/// tap alone.
#[derive(Debug)]
pub struct Synthesizer {
    grid: FrequencyGrid,
    tap_distance: f64,
    loss: Option<CableLoss>,
    f_pow: Vec<f64>,
    f: Vec<f64>,
    cache: Vec<OnceLock<Arc<Vec<Complex64>>>>,
}

impl Synthesizer {
    pub fn new(grid: FrequencyGrid, phase_velocity: f64, loss: Option<CableLoss>) -> Self {
        let f = grid.frequencies();
        let f_pow = match &loss {
            Some(l) => f.iter().map(|v| v.powf(l.exponent)).collect(),
            None => Vec::new(),
        };
        Synthesizer {
            grid,
            tap_distance: phase_velocity * grid.sample_period(),
            loss,
            f_pow,
            f,
            cache: (0..grid.bins).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    /// Causal taps available to paths.
    pub fn max_index(&self) -> usize {
        self.grid.bins / 2 - 1
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j > self.max_index() {
            return Err(Error::InvalidArgument(format!(
                "tap {j} lies beyond the causal window of {} taps",
                self.max_index() + 1
            )));
        }
        Ok(())
    }

    /// Spectrum of a unit path at tap `j`.
    pub fn path_response(&self, j: usize) -> Result<Arc<Vec<Complex64>>> {
        self.check_index(j)?;
        Ok(self.cache[j]
            .get_or_init(|| {
                let n = self.grid.bins;
                Arc::new(match &self.loss {
                    Some(l) => {
                        let d = j as f64 * self.tap_distance;
                        let (a0, a1, b0) = (l.a0.eval(d), l.a1.eval(d), l.b0.eval(d));
                        (0..n)
                            .map(|m| {
                                Complex64::from_polar(
                                    (-(a0 + a1 * self.f_pow[m])).exp(),
                                    -b0 * self.f[m],
                                )
                            })
                            .collect()
                    }
                    None => (0..n)
                        .map(|m| Complex64::from_polar(1.0, -TAU * ((m * j) % n) as f64 / n as f64))
                        .collect(),
                })
            })
            .clone())
    }

    /// Impulse response of a set of paths.
    pub fn cir(&self, paths: &[Path]) -> Result<ImpulseResponse> {
        let tau = self.grid.sample_period();
        if self.loss.is_none() {
            let mut taps = vec![Complex64::new(0.0, 0.0); self.grid.bins];
            for p in paths {
                self.check_index(p.index)?;
                taps[p.index] += Complex64::from_polar(p.magnitude, p.phase);
            }
            return Ok(ImpulseResponse { tau, taps });
        }
        let mut spectrum = vec![Complex64::new(0.0, 0.0); self.grid.bins];
        for p in paths {
            let a = self.path_response(p.index)?;
            let w = Complex64::from_polar(p.magnitude, p.phase);
            spectrum
                .iter_mut()
                .zip(a.iter())
                .for_each(|(s, v)| *s += w * v);
        }
        Ok(ImpulseResponse {
            tau,
            taps: inverse_spectrum(&spectrum)?,
        })
    }

    /// Peak `|CIR|` of a unit path at tap `j` after filtering.
    pub fn peak_gain(&self, j: usize) -> Result<f64> {
        if self.loss.is_none() {
            self.check_index(j)?;
            return Ok(1.0);
        }
        let taps = inverse_spectrum(&self.path_response(j)?)?;
        Ok(taps.iter().map(|t| t.norm()).fold(0.0, f64::max))
    }
}

/// `A(f, d)` of the model over `f_grid`.
pub fn cable_loss_response(
    params: &StatModelParams,
    f_grid: &[f64],
    d_path: f64,
) -> Result<Vec<Complex64>> {
    if !(d_path >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "path distance {d_path} must be non-negative"
        )));
    }
    Ok(params.cable_loss.response_over(f_grid, d_path))
}

/// Channel generator bound to one parameter set.
#[derive(Debug)]
pub struct Generator<'a> {
    params: &'a StatModelParams,
    config: GeneratorConfig,
    synth: Synthesizer,
}

impl<'a> Generator<'a> {
    pub fn new(params: &'a StatModelParams, config: GeneratorConfig) -> Result<Self> {
        params.validate()?;
        if config.max_retries == 0 {
            return Err(Error::Config("max_retries must be positive".into()));
        }
        let loss = config.cable_loss.then_some(params.cable_loss);
        let synth = Synthesizer::new(params.grid, params.phase_velocity, loss);
        Ok(Generator {
            params,
            config,
            synth,
        })
    }

    pub fn params(&self) -> &StatModelParams {
        self.params
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    fn rayleigh_draw(&self, mean: f64, rng: &mut ModelRng) -> Result<f64> {
        if !self.config.dispersion {
            return Ok(mean);
        }
        let sigma = match self.config.rayleigh_scale {
            RayleighScale::Mean => mean / (PI / 2.0).sqrt(),
            RayleighScale::Scale => mean,
        };
        // Rayleigh(σ) is Weibull with scale σ√2 and shape 2
        let w = Weibull::new(sigma * std::f64::consts::SQRT_2, 2.0)
            .map_err(|e| Error::Pathological(format!("Rayleigh scale {sigma}: {e}")))?;
        Ok(w.sample(rng))
    }

    pub fn sample_class(&self, k: usize, rng: &mut ModelRng) -> Result<u8> {
        let p = self.params.class_probabilities(k)?;
        let dist =
            WeightedIndex::new(p).map_err(|e| Error::Config(format!("class frequencies: {e}")))?;
        Ok(dist.sample(rng) as u8 + 1)
    }

    pub fn sample_path_count(&self, i: u8, k: usize, rng: &mut ModelRng) -> Result<usize> {
        if i == 1 {
            return Ok(1);
        }
        let (mu, var) = self.params.path_count_moments(i, k)?;
        let normal = Normal::new(mu, var.sqrt())
            .map_err(|e| Error::Pathological(format!("path count N({mu}, {var}): {e}")))?;
        for _ in 0..self.config.max_retries {
            let n = normal.sample(rng).round();
            if n >= 1.0 {
                return Ok(n as usize);
            }
        }
        Err(Error::Pathological(format!(
            "class {i}, cluster {k}: no positive path count in {} draws from N({mu}, {var})",
            self.config.max_retries
        )))
    }

    /// Direct path of class `i` at distance `d`: `(index, magnitude, phase)`.
    pub fn first_path(&self, i: u8, d: f64, rng: &mut ModelRng) -> Result<(usize, f64, f64)> {
        let k = self.params.cluster_of(d)?;
        let index = self.params.first_index(d);
        let mean = self.params.first_path_mean(i, k)?;
        let magnitude = if i == 1 {
            mean
        } else {
            self.rayleigh_draw(mean, rng)?
        };
        let fc = self
            .config
            .reference_frequency
            .unwrap_or(self.params.grid.bandwidth / 2.0);
        let phase = wrap_phase(-self.params.cable_loss.b0.eval(d) * fc);
        Ok((index, magnitude, phase))
    }

    /// One interval of class `i`, cluster `k` with its continuous draw,
    /// rejecting draws that round below one tap or above `max_gap`.
    fn draw_interval(&self, gev: &Gev, max_gap: usize, rng: &mut ModelRng) -> Result<(f64, usize)> {
        for _ in 0..self.config.max_retries {
            let u: f64 = rng.random();
            if u <= 0.0 {
                continue;
            }
            let x = gev.quantile(u);
            let g = x.round();
            if x.is_finite() && g >= 1.0 && g <= max_gap as f64 {
                return Ok((x, g as usize));
            }
        }
        Err(Error::Pathological(format!(
            "{gev:?}: no admissible interval in {} draws",
            self.config.max_retries
        )))
    }

    /// `n - 1` intervals with the continuous draws they were rounded from.
    pub fn sample_raw_intervals(
        &self,
        i: u8,
        k: usize,
        n: usize,
        rng: &mut ModelRng,
    ) -> Result<Vec<(f64, usize)>> {
        if n <= 1 {
            return Ok(Vec::new());
        }
        if i == 1 {
            return Err(Error::InvalidArgument(
                "Class I channels have a single path".into(),
            ));
        }
        let gev = self.params.gev(i, k)?;
        (1..n)
            .map(|_| self.draw_interval(&gev, usize::MAX, rng))
            .collect()
    }

    /// `n - 1` positive integer gaps between consecutive paths.
    pub fn sample_intervals(
        &self,
        i: u8,
        k: usize,
        n: usize,
        rng: &mut ModelRng,
    ) -> Result<Vec<usize>> {
        Ok(self
            .sample_raw_intervals(i, k, n, rng)?
            .into_iter()
            .map(|g| g.1)
            .collect())
    }

    /// Magnitudes and uniform phases of later paths at taps `indices`.
    pub fn sample_tail_magnitudes(
        &self,
        k: usize,
        indices: &[usize],
        rng: &mut ModelRng,
    ) -> Result<Vec<(f64, f64)>> {
        indices
            .iter()
            .map(|&j| {
                let m = self.rayleigh_draw(self.params.pdp_mean(k, j)?, rng)?;
                Ok((m, rng.random::<f64>() * TAU))
            })
            .collect()
    }

    pub fn generate(&self, d: f64, seed: u64) -> Result<GeneratedChannel> {
        let k = self.params.cluster_of(d)?;
        let mut rng = rng_for(seed, &[]);
        let i = self.sample_class(k, &mut rng)?;
        self.assemble(d, k, i, &mut rng)
    }

    /// A channel of a given class, bypassing the class draw.
    pub fn generate_in_class(&self, d: f64, class: u8, seed: u64) -> Result<GeneratedChannel> {
        if !(1..=CLASSES as u8).contains(&class) {
            return Err(Error::InvalidArgument(format!(
                "class {class} outside 1..={CLASSES}"
            )));
        }
        let k = self.params.cluster_of(d)?;
        let mut rng = rng_for(seed, &[]);
        self.assemble(d, k, class, &mut rng)
    }

    fn assemble(&self, d: f64, k: usize, i: u8, rng: &mut ModelRng) -> Result<GeneratedChannel> {
        let tau = self.params.sample_period;
        let n = self.sample_path_count(i, k, rng)?;
        let (first, magnitude, phase) = self.first_path(i, d, rng)?;
        let limit = self.synth.max_index();
        if first > limit {
            return Err(Error::InvalidArgument(format!(
                "direct path at tap {first} exceeds the causal window"
            )));
        }
        let mut indices = Vec::with_capacity(n.saturating_sub(1));
        if n > 1 {
            let gev = self.params.gev(i, k)?;
            let mut at = first;
            for _ in 1..n {
                // later paths must stay inside the causal window
                let (_, g) = self.draw_interval(&gev, limit - at, rng)?;
                at += g;
                indices.push(at);
            }
        }
        let tails = self.sample_tail_magnitudes(k, &indices, rng)?;
        let mut paths = Vec::with_capacity(n);
        paths.push(Path {
            index: first,
            delay: first as f64 * tau,
            magnitude,
            phase,
        });
        paths.extend(indices.iter().zip(tails).map(|(&j, (m, ph))| Path {
            index: j,
            delay: j as f64 * tau,
            magnitude: m,
            phase: ph,
        }));
        if self.config.prune_weak_paths {
            let peak = paths.iter().map(|p| p.magnitude).fold(0.0, f64::max);
            let first = paths[0];
            paths.retain(|p| p.index == first.index || p.magnitude >= PATH_THRESHOLD * peak);
        }
        let cir = self.synth.cir(&paths)?;
        Ok(GeneratedChannel {
            distance: d,
            cluster: k,
            class: i,
            paths: PathList { paths },
            cir,
        })
    }
}

/// One channel at distance `d` with the default generator settings.
pub fn generate(d: f64, params: &StatModelParams, seed: u64) -> Result<GeneratedChannel> {
    Generator::new(params, GeneratorConfig::default())?.generate(d, seed)
}

fn wrap_phase(p: f64) -> f64 {
    let w = p.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}
