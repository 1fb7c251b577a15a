//! Exact channel responses by cascading ABCD (transmission) matrices of
//! backbone segments and branch shunts, plus the impulse response and path
//! extraction that feed the statistical fits.

use std::collections::BTreeMap;
use std::ops::Mul;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cable::{CableCatalog, CableSpec};
use crate::dsp::inverse_spectrum;
use crate::error::{Error, Result};
use crate::topology::{Branch, TerminalLoad, Topology};

const ONE: Complex64 = Complex64::new(1.0, 0.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// A branch whose input impedance magnitude falls below this fraction of its
/// characteristic impedance is treated as a dead short.
const SINGULAR_REL: f64 = 1e-9;

/// Paths are reported at `PATH_THRESHOLD` times the peak tap magnitude or above (−20 dB).
pub const PATH_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransmissionMatrix {
    pub a: Complex64,
    pub b: Complex64,
    pub c: Complex64,
    pub d: Complex64,
}

impl TransmissionMatrix {
    pub const IDENTITY: TransmissionMatrix = TransmissionMatrix {
        a: ONE,
        b: ZERO,
        c: ZERO,
        d: ONE,
    };

    pub fn new(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Self {
        TransmissionMatrix { a, b, c, d }
    }

    pub fn det(&self) -> Complex64 {
        self.a * self.d - self.b * self.c
    }

    pub fn inverse(&self) -> Option<TransmissionMatrix> {
        let det = self.det();
        if det == ZERO {
            return None;
        }
        Some(TransmissionMatrix::new(
            self.d / det,
            -self.b / det,
            -self.c / det,
            self.a / det,
        ))
    }

    /// Uniform line section from its propagation constant and characteristic impedance.
    pub fn line(gamma: Complex64, z0: Complex64, length: f64) -> Self {
        if length == 0.0 {
            return Self::IDENTITY;
        }
        let e = (gamma * length).exp();
        let inv = e.inv();
        let cosh = (e + inv) * 0.5;
        let sinh = (e - inv) * 0.5;
        TransmissionMatrix::new(cosh, z0 * sinh, sinh / z0, cosh)
    }

    pub fn shunt(admittance: Complex64) -> Self {
        TransmissionMatrix::new(ONE, ZERO, admittance, ONE)
    }

    /// `H = Z_L / (A Z_L + B + C Z_S Z_L + D Z_S)`.
    pub fn voltage_transfer(&self, zs: Complex64, zl: Complex64) -> Complex64 {
        zl / (self.a * zl + self.b + self.c * zs * zl + self.d * zs)
    }

    fn max_abs_diff(&self, other: &TransmissionMatrix) -> f64 {
        [
            (self.a - other.a).norm(),
            (self.b - other.b).norm(),
            (self.c - other.c).norm(),
            (self.d - other.d).norm(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn approx_eq(&self, other: &TransmissionMatrix, tol: f64) -> bool {
        self.max_abs_diff(other) <= tol
    }
}

impl Mul for TransmissionMatrix {
    type Output = TransmissionMatrix;

    fn mul(self, o: TransmissionMatrix) -> TransmissionMatrix {
        TransmissionMatrix::new(
            self.a * o.a + self.b * o.c,
            self.a * o.b + self.b * o.d,
            self.c * o.a + self.d * o.c,
            self.c * o.b + self.d * o.d,
        )
    }
}

/// ABCD matrix of `length` metres of `cable` at `f` Hz.
pub fn series_abcd(cable: &CableSpec, length: f64, f: f64) -> Result<TransmissionMatrix> {
    if !(length >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "segment length {length} is negative"
        )));
    }
    if length == 0.0 {
        return Ok(TransmissionMatrix::IDENTITY);
    }
    Ok(TransmissionMatrix::line(
        cable.propagation_constant(f),
        cable.characteristic_impedance(f)?,
        length,
    ))
}

/// Admittance seen looking into a terminated stub; `None` when it is a dead short.
fn stub_admittance(
    gamma: Complex64,
    z0: Complex64,
    length: f64,
    load: TerminalLoad,
) -> Option<Complex64> {
    let t = TransmissionMatrix::line(gamma, z0, length);
    // Z_in = (A Z_T + B) / (C Z_T + D); for an open end Z_in = A / C.
    let (num, den) = match load {
        TerminalLoad::Open => (t.a, t.c),
        TerminalLoad::Resistive { resistance } => {
            let zt = Complex64::new(resistance, 0.0);
            (t.a * zt + t.b, t.c * zt + t.d)
        }
    };
    if den == ZERO {
        return Some(ZERO);
    }
    let z_in = num / den;
    if z_in.norm() <= SINGULAR_REL * z0.norm() {
        None
    } else {
        Some(z_in.inv())
    }
}

/// Shunt matrix `((1, 0), (1/Z_in, 1))` of a terminated branch at `f` Hz.
pub fn shunt_abcd(branch: &Branch, cable: &CableSpec, f: f64) -> Result<TransmissionMatrix> {
    let y = stub_admittance(
        cable.propagation_constant(f),
        cable.characteristic_impedance(f)?,
        branch.length,
        branch.termination,
    )
    .ok_or(Error::SingularShunt { frequency: f })?;
    Ok(TransmissionMatrix::shunt(y))
}

/// Ordered product of `matrices`, transmitter side first.
pub fn chain(matrices: &[TransmissionMatrix]) -> Result<TransmissionMatrix> {
    let (first, rest) = matrices
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("cannot chain an empty list".into()))?;
    Ok(rest.iter().fold(*first, |acc, m| acc * *m))
}

/// Uniform frequency grid `f_m = m·B/N`, `m = 0..N`, spanning `[0, B)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub bins: usize,
    pub bandwidth: f64,
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        FrequencyGrid {
            bins: 4096,
            bandwidth: 30e6,
        }
    }
}

impl FrequencyGrid {
    pub fn validate(&self) -> Result<()> {
        if !self.bins.is_power_of_two() || self.bins < 2 {
            return Err(Error::NotPowerOfTwo(self.bins));
        }
        if !(self.bandwidth > 0.0) {
            return Err(Error::InvalidArgument("bandwidth must be positive".into()));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        self.bandwidth / self.bins as f64
    }

    /// Tap period of the matching impulse response, `1/B`.
    pub fn sample_period(&self) -> f64 {
        1.0 / self.bandwidth
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.bins).map(|m| m as f64 * self.spacing()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyResponse {
    pub f_grid: Vec<f64>,
    pub h: Vec<Complex64>,
}

impl FrequencyResponse {
    pub fn spacing(&self) -> f64 {
        if self.f_grid.len() < 2 {
            return 0.0;
        }
        self.f_grid[1] - self.f_grid[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseResponse {
    /// Tap period in seconds.
    pub tau: f64,
    pub taps: Vec<Complex64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub index: usize,
    /// Seconds.
    pub delay: f64,
    pub magnitude: f64,
    /// Radians.
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PathList {
    pub paths: Vec<Path>,
}

impl PathList {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn first(&self) -> Option<&Path> {
        self.paths.first()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub response: FrequencyResponse,
    /// Bins where a branch shorted the line; their values are interpolated.
    pub singular_bins: Vec<usize>,
}

struct CableTable {
    gamma: Vec<Complex64>,
    z0: Vec<Complex64>,
}

impl CableTable {
    fn new(cable: &CableSpec, freqs: &[f64]) -> Result<Self> {
        let mut gamma = vec![ZERO; freqs.len()];
        let mut z0 = vec![ZERO; freqs.len()];
        // bin 0 is DC and never evaluated directly
        for (m, &f) in freqs.iter().enumerate().skip(1) {
            gamma[m] = cable.propagation_constant(f);
            z0[m] = cable.characteristic_impedance(f)?;
        }
        Ok(CableTable { gamma, z0 })
    }
}

/// Voltage transfer function of `topology` over `grid`, per the cascade
/// `series(0→p1) · shunt(b1) · series(p1→p2) · … · series(pn→d)`.
///
/// The DC bin copies the first AC bin. Bins where a branch presents a dead
/// short are flagged and linearly interpolated from their neighbours.
pub fn transfer_function(
    topology: &Topology,
    catalog: &CableCatalog,
    grid: &FrequencyGrid,
    zs: Complex64,
    zl: Complex64,
) -> Result<Sweep> {
    grid.validate()?;
    topology.validate()?;
    if zl == ZERO {
        return Err(Error::InvalidArgument(
            "load impedance must be non-zero".into(),
        ));
    }
    let freqs = grid.frequencies();
    let backbone = CableTable::new(catalog.get(&topology.backbone_cable)?, &freqs)?;
    let mut stubs: BTreeMap<&str, CableTable> = BTreeMap::new();
    for b in &topology.branches {
        if !stubs.contains_key(b.cable.as_str()) {
            stubs.insert(&b.cable, CableTable::new(catalog.get(&b.cable)?, &freqs)?);
        }
    }

    let mut h = vec![ZERO; grid.bins];
    let mut singular = Vec::new();
    'bins: for m in 1..grid.bins {
        let (gb, zb) = (backbone.gamma[m], backbone.z0[m]);
        let mut t = TransmissionMatrix::IDENTITY;
        let mut pos = 0.0;
        for b in &topology.branches {
            t = t * TransmissionMatrix::line(gb, zb, b.position - pos);
            let table = &stubs[b.cable.as_str()];
            match stub_admittance(table.gamma[m], table.z0[m], b.length, b.termination) {
                Some(y) => t = t * TransmissionMatrix::shunt(y),
                None => {
                    singular.push(m);
                    continue 'bins;
                }
            }
            pos = b.position;
        }
        t = t * TransmissionMatrix::line(gb, zb, topology.distance - pos);
        h[m] = t.voltage_transfer(zs, zl);
    }
    if !singular.is_empty() {
        log::warn!("{} singular-shunt bins interpolated", singular.len());
        interpolate_bins(&mut h, &singular)?;
    }
    h[0] = h[1];
    Ok(Sweep {
        response: FrequencyResponse { f_grid: freqs, h },
        singular_bins: singular,
    })
}

fn interpolate_bins(h: &mut [Complex64], flagged: &[usize]) -> Result<()> {
    let bad: std::collections::BTreeSet<usize> = flagged.iter().copied().collect();
    let good = |m: usize| m >= 1 && !bad.contains(&m);
    for &m in flagged {
        let left = (1..m).rev().find(|&i| good(i));
        let right = (m + 1..h.len()).find(|&i| good(i));
        h[m] = match (left, right) {
            (Some(l), Some(r)) => {
                let w = (m - l) as f64 / (r - l) as f64;
                h[l] * (1.0 - w) + h[r] * w
            }
            (Some(l), None) => h[l],
            (None, Some(r)) => h[r],
            (None, None) => {
                return Err(Error::Degenerate("every bin is singular".into()));
            }
        };
    }
    Ok(())
}

/// Factor turning the raw voltage transfer into the transducer (power-wave)
/// gain, `2 sqrt(Re Z_S Re Z_L) / |Z_L|`; it bounds passive responses by 1.
pub fn transducer_scale(zs: Complex64, zl: Complex64) -> f64 {
    if zs.re > 0.0 && zl.re > 0.0 {
        2.0 * (zs.re * zl.re).sqrt() / zl.norm()
    } else {
        1.0
    }
}

/// Normalized channel response of `topology` with its own source and load
/// impedances; this is the convention used by every ensemble statistic.
pub fn channel_response(
    topology: &Topology,
    catalog: &CableCatalog,
    grid: &FrequencyGrid,
) -> Result<Sweep> {
    let zs = Complex64::new(topology.source_impedance, 0.0);
    let zl = Complex64::new(topology.load_impedance, 0.0);
    let mut sweep = transfer_function(topology, catalog, grid, zs, zl)?;
    let scale = transducer_scale(zs, zl);
    sweep.response.h.iter_mut().for_each(|v| *v *= scale);
    Ok(sweep)
}

/// Complex-baseband impulse response with tap period `1/B`.
pub fn impulse_response(fr: &FrequencyResponse) -> Result<ImpulseResponse> {
    let n = fr.h.len();
    let spacing = fr.spacing();
    if n < 2 || !(spacing > 0.0) {
        return Err(Error::InvalidArgument(
            "frequency grid needs two or more ascending bins".into(),
        ));
    }
    Ok(ImpulseResponse {
        tau: 1.0 / (spacing * n as f64),
        taps: inverse_spectrum(&fr.h)?,
    })
}

/// Local maxima of `|taps|` at or above −20 dB of the peak, in index order.
///
/// Only the causal half of the buffer (`index < N/2`) is searched; the upper
/// half holds the circular wrap of pre-cursor leakage.
pub fn extract_paths(ir: &ImpulseResponse) -> Result<PathList> {
    extract_paths_with(ir, PATH_THRESHOLD)
}

pub fn extract_paths_with(ir: &ImpulseResponse, threshold: f64) -> Result<PathList> {
    if ir.taps.is_empty() {
        return Err(Error::EmptyPaths);
    }
    let span = if ir.taps.len() >= 4 {
        ir.taps.len() / 2
    } else {
        ir.taps.len()
    };
    let mags: Vec<f64> = ir.taps[..span].iter().map(|t| t.norm()).collect();
    let peak = mags.iter().copied().fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::EmptyPaths);
    }
    let floor = peak * threshold;
    let paths = (0..span)
        .filter(|&n| {
            let m = mags[n];
            m >= floor && (n == 0 || m >= mags[n - 1]) && (n + 1 == span || m > mags[n + 1])
        })
        .map(|n| Path {
            index: n,
            delay: n as f64 * ir.tau,
            magnitude: mags[n],
            phase: ir.taps[n].arg(),
        })
        .collect();
    Ok(PathList { paths })
}
