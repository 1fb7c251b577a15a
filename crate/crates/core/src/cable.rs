//! Cable types and their per-unit-length electrical behaviour.
//!
//! A cable is described by the classic RLCG line model with a skin-effect
//! series resistance `R(f) = k_r * sqrt(f)` and a dielectric-loss shunt
//! conductance `G(f) = g0 * f`. Inductance and capacitance are taken as
//! frequency independent.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Current version of the cable catalog document.
pub const CATALOG_VERSION: u32 = 1;

/// Environment variable naming a catalog file that replaces the built-in one.
pub const CATALOG_ENV: &str = "PLCSIM_CABLE_CATALOG";

const DEFAULT_CATALOG: &str = include_str!("../data/cables.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CableSpec {
    #[serde(skip)]
    pub name: String,
    /// Skin-effect coefficient, Ω/(m·√Hz).
    pub k_r: f64,
    /// Inductance per metre, H/m.
    pub l_pul: f64,
    /// Dielectric conductance slope, S/(m·Hz).
    pub g0: f64,
    /// Capacitance per metre, F/m.
    pub c_pul: f64,
    /// Relative permittivity of the insulation.
    pub eps_r: f64,
}

impl CableSpec {
    /// A lossless line; `eps_r` is derived from `l_pul * c_pul`.
    pub fn lossless(name: &str, l_pul: f64, c_pul: f64) -> Self {
        CableSpec {
            name: name.to_string(),
            k_r: 0.0,
            l_pul,
            g0: 0.0,
            c_pul,
            eps_r: SPEED_OF_LIGHT * SPEED_OF_LIGHT * l_pul * c_pul,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::InvalidCable {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        let finite = [self.k_r, self.l_pul, self.g0, self.c_pul, self.eps_r]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return bad("non-finite parameter");
        }
        if self.k_r < 0.0 || self.g0 < 0.0 {
            return bad("R and G must be non-negative");
        }
        if self.l_pul <= 0.0 || self.c_pul <= 0.0 {
            return bad("L and C must be positive");
        }
        if self.eps_r < 1.0 {
            return bad("relative permittivity below 1");
        }
        let v_lc = 1.0 / (self.l_pul * self.c_pul).sqrt();
        if (v_lc / self.phase_velocity() - 1.0).abs() > 1e-3 {
            return bad("1/sqrt(LC) disagrees with c/sqrt(eps_r)");
        }
        Ok(())
    }

    pub fn is_lossless(&self) -> bool {
        self.k_r == 0.0 && self.g0 == 0.0
    }

    pub fn r_pul(&self, f: f64) -> f64 {
        self.k_r * f.sqrt()
    }

    pub fn g_pul(&self, f: f64) -> f64 {
        self.g0 * f
    }

    /// Series impedance per metre, `R + jωL`.
    pub fn series_impedance(&self, f: f64) -> Complex64 {
        Complex64::new(self.r_pul(f), 2.0 * PI * f * self.l_pul)
    }

    /// Shunt admittance per metre, `G + jωC`.
    pub fn shunt_admittance(&self, f: f64) -> Complex64 {
        Complex64::new(self.g_pul(f), 2.0 * PI * f * self.c_pul)
    }

    /// `γ = sqrt((R + jωL)(G + jωC))`, per metre.
    ///
    /// Evaluated as `sqrt(Z)·sqrt(Y)` so both square roots stay in the first
    /// quadrant and `Re γ, Im γ ≥ 0` without branch-cut surprises.
    pub fn propagation_constant(&self, f: f64) -> Complex64 {
        self.series_impedance(f).sqrt() * self.shunt_admittance(f).sqrt()
    }

    /// `Z0 = sqrt((R + jωL)/(G + jωC))`.
    pub fn characteristic_impedance(&self, f: f64) -> Result<Complex64> {
        let y = self.shunt_admittance(f);
        if y == Complex64::new(0.0, 0.0) {
            if self.is_lossless() {
                return Ok(Complex64::new((self.l_pul / self.c_pul).sqrt(), 0.0));
            }
            return Err(Error::UndefinedAtDc);
        }
        Ok(self.series_impedance(f).sqrt() / y.sqrt())
    }

    /// TEM phase velocity `c / sqrt(eps_r)`.
    pub fn phase_velocity(&self) -> f64 {
        SPEED_OF_LIGHT / self.eps_r.sqrt()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CatalogDocument {
    version: u32,
    cables: BTreeMap<String, CableSpec>,
}

/// Named collection of cable types.
#[derive(Debug, Clone, PartialEq)]
pub struct CableCatalog {
    cables: BTreeMap<String, CableSpec>,
}

impl CableCatalog {
    /// The built-in NAYY35 / NAYY150 catalog.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_CATALOG).expect("built-in cable catalog is valid")
    }

    /// Catalog from `PLCSIM_CABLE_CATALOG` if set, otherwise the built-in one.
    pub fn from_env() -> Result<Self> {
        match std::env::var_os(CATALOG_ENV) {
            Some(path) => Self::load(Path::new(&path)),
            None => Ok(Self::builtin()),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CatalogDocument = serde_json::from_str(text)?;
        if doc.version != CATALOG_VERSION {
            return Err(Error::Config(format!(
                "unsupported cable catalog version {} (expected {CATALOG_VERSION})",
                doc.version
            )));
        }
        let mut cables = BTreeMap::new();
        for (name, mut spec) in doc.cables {
            spec.name = name.clone();
            spec.validate()?;
            cables.insert(name, spec);
        }
        Ok(CableCatalog { cables })
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = CatalogDocument {
            version: CATALOG_VERSION,
            cables: self.cables.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn insert(&mut self, spec: CableSpec) -> Result<()> {
        spec.validate()?;
        self.cables.insert(spec.name.clone(), spec);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&CableSpec> {
        self.cables
            .get(name)
            .ok_or_else(|| Error::UnknownCable(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.cables.keys().map(String::as_str)
    }
}

impl FromIterator<CableSpec> for CableCatalog {
    fn from_iter<I: IntoIterator<Item = CableSpec>>(iter: I) -> Self {
        CableCatalog {
            cables: iter.into_iter().map(|c| (c.name.clone(), c)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn lossless_gamma_is_imaginary() {
        let cable = CableSpec::lossless("ideal", 250e-9, 100e-12);
        for f in [1e3, 1e6, 2.5e7] {
            let g = cable.propagation_constant(f);
            assert_eq!(g.re, 0.0);
            let expected = 2.0 * PI * f * (250e-9f64 * 100e-12).sqrt();
            assert!(rel(g.im, expected) < 1e-14);
        }
    }

    #[test]
    fn dc_limit_of_gamma_is_zero() {
        let cable = CableCatalog::builtin().get("NAYY150").unwrap().clone();
        let g = cable.propagation_constant(0.0);
        assert_eq!(g, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn fifty_ohm_lossless_line() {
        let cable = CableSpec::lossless("ideal", 250e-9, 100e-12);
        for f in [0.0, 1e5, 3e7] {
            let z0 = cable.characteristic_impedance(f).unwrap();
            assert!((z0.re - 50.0).abs() < 1e-12 && z0.im.abs() < 1e-12);
        }
    }

    #[test]
    fn lossy_z0_undefined_at_dc() {
        let cable = CableCatalog::builtin().get("NAYY35").unwrap().clone();
        assert!(matches!(
            cable.characteristic_impedance(0.0),
            Err(Error::UndefinedAtDc)
        ));
    }

    // Frozen from a 40-digit evaluation of the RLCG closed forms.
    #[test]
    fn nayy150_gamma_at_10mhz() {
        let cable = CableCatalog::builtin().get("NAYY150").unwrap().clone();
        let g = cable.propagation_constant(10e6);
        assert!(rel(g.re, 0.005294106369099089) < 1e-12);
        assert!(rel(g.im, 0.4390903874937551) < 1e-12);
    }

    #[test]
    fn nayy35_z0_at_20mhz() {
        let cable = CableCatalog::builtin().get("NAYY35").unwrap().clone();
        let z0 = cable.characteristic_impedance(20e6).unwrap();
        assert!(rel(z0.re, 49.99338319173935) < 1e-12);
        assert!(rel(z0.im, 0.4184054541693122) < 1e-12);
    }

    #[test]
    fn phase_velocity_from_permittivity() {
        let mut cable = CableSpec::lossless("vac", 1.0, 1.0);
        cable.eps_r = 1.0;
        assert_eq!(cable.phase_velocity(), SPEED_OF_LIGHT);
        cable.eps_r = 4.0;
        assert_eq!(cable.phase_velocity(), SPEED_OF_LIGHT / 2.0);
    }

    #[test]
    fn default_cables_step_4_77_m_per_sample() {
        let tau = 1.0 / 30e6;
        let catalog = CableCatalog::builtin();
        for name in catalog.names() {
            let v = catalog.get(name).unwrap().phase_velocity();
            assert!(rel(v, 1.431e8) < 1e-12, "{name}: {v}");
            assert!((v * tau - 4.77).abs() < 1e-9);
            assert!(v > 0.0 && v <= SPEED_OF_LIGHT);
        }
    }

    #[test]
    fn attenuation_monotone_and_gamma_z0_identities() {
        let catalog = CableCatalog::builtin();
        for name in catalog.names() {
            let cable = catalog.get(name).unwrap();
            let mut prev = cable.propagation_constant(1e4);
            for i in 2..=3000 {
                let f = i as f64 * 1e4;
                let g = cable.propagation_constant(f);
                assert!(g.re >= prev.re, "{name}: alpha decreased at {f}");
                assert!(g.im > prev.im, "{name}: beta not increasing at {f}");
                let z0 = cable.characteristic_impedance(f).unwrap();
                assert!(z0.re > 0.0);
                let z = cable.series_impedance(f);
                let y = cable.shunt_admittance(f);
                assert!((g * z0 - z).norm() / z.norm() < 1e-12);
                assert!((g / z0 - y).norm() / y.norm() < 1e-12);
                prev = g;
            }
        }
    }

    #[test]
    fn catalog_round_trip_and_validation() {
        let catalog = CableCatalog::builtin();
        let back = CableCatalog::from_json(&catalog.to_json().unwrap()).unwrap();
        assert_eq!(back, catalog);
        let text = r#"{"version":1,"cables":{"x":{"k_r":-1.0,"l_pul":1e-7,"g0":0.0,"c_pul":1e-10,"eps_r":1.0}}}"#;
        assert!(CableCatalog::from_json(text).is_err());
        let text = r#"{"version":2,"cables":{}}"#;
        assert!(matches!(
            CableCatalog::from_json(text),
            Err(Error::Config(_))
        ));
    }
}
