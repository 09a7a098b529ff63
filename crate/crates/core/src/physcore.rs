//! Physical constants, unit conversions and Gaussian-beam flux arithmetic.
//!
//! Everything inside the crate is SI. The helpers in [`units`] are the only
//! place where nanoseconds, millimetres or micrometres appear.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// CODATA 2018 exact and recommended values.
pub mod constants {
    /// Elementary charge (C), exact.
    pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
    /// Electron mass (kg).
    pub const ELECTRON_MASS: f64 = 9.109_383_701_5e-31;
    /// Planck constant (J s), exact.
    pub const PLANCK: f64 = 6.626_070_15e-34;
    /// Speed of light in vacuum (m/s), exact.
    pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
    /// Unified atomic mass unit (kg).
    pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
    /// Atomic mass of 87Rb in units of u.
    pub const RB87_ATOMIC_MASS_U: f64 = 86.909_180_531;
    /// Mass of the neutral 87Rb atom (kg).
    pub const RB87_ATOM_MASS: f64 = RB87_ATOMIC_MASS_U * ATOMIC_MASS_UNIT;
    /// Mass of the singly charged 87Rb ion: atom minus one electron (kg).
    pub const RB87_ION_MASS: f64 = RB87_ATOM_MASS - ELECTRON_MASS;
    /// Lifetime of the 5P3/2 intermediate level (s).
    pub const RB87_5P32_LIFETIME: f64 = 26.2e-9;
}

/// Conversions between SI and the I/O units used in files and on the CLI.
pub mod units {
    pub fn ns_to_s(ns: f64) -> f64 {
        ns * 1e-9
    }
    pub fn s_to_ns(s: f64) -> f64 {
        s * 1e9
    }
    pub fn mm_to_m(mm: f64) -> f64 {
        mm * 1e-3
    }
    pub fn m_to_mm(m: f64) -> f64 {
        m * 1e3
    }
    pub fn um_to_m(um: f64) -> f64 {
        um * 1e-6
    }
    pub fn m_to_um(m: f64) -> f64 {
        m * 1e6
    }
    pub fn kv_to_v(kv: f64) -> f64 {
        kv * 1e3
    }
    pub fn mw_to_w(mw: f64) -> f64 {
        mw * 1e-3
    }
    pub fn uw_to_w(uw: f64) -> f64 {
        uw * 1e-6
    }
    pub fn nm_to_m(nm: f64) -> f64 {
        nm * 1e-9
    }
}

/// A focused TEM00 beam. `waist` is the 1/e² intensity radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBeam {
    wavelength: f64,
    waist: f64,
    power: f64,
}

impl GaussianBeam {
    pub fn new(wavelength: f64, waist: f64, power: f64) -> Result<Self> {
        if !(wavelength > 0.0 && wavelength.is_finite()) {
            return Err(Error::invalid("wavelength", format!("{wavelength} must be > 0")));
        }
        if !(waist > 0.0 && waist.is_finite()) {
            return Err(Error::invalid("waist", format!("{waist} must be > 0")));
        }
        if !(power >= 0.0 && power.is_finite()) {
            return Err(Error::invalid("power", format!("{power} must be >= 0")));
        }
        Ok(Self {
            wavelength,
            waist,
            power,
        })
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn waist(&self) -> f64 {
        self.waist
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    /// On-axis intensity 2P/(πw²) in W/m².
    pub fn peak_intensity(&self) -> f64 {
        2.0 * self.power / (std::f64::consts::PI * self.waist * self.waist)
    }

    /// Energy of one photon at the beam wavelength (J).
    pub fn photon_energy(&self) -> f64 {
        constants::PLANCK * constants::SPEED_OF_LIGHT / self.wavelength
    }

    /// On-axis photon flux in photons m⁻² s⁻¹.
    pub fn photon_flux(&self) -> f64 {
        self.peak_intensity() / self.photon_energy()
    }
}

pub fn peak_intensity(beam: &GaussianBeam) -> f64 {
    beam.peak_intensity()
}

pub fn photon_flux(beam: &GaussianBeam) -> f64 {
    beam.photon_flux()
}

#[cfg(test)]
mod tests {
    use super::constants::*;
    use super::units::*;
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn zero_power_has_zero_intensity_and_flux() {
        let beam = GaussianBeam::new(473e-9, 1e-6, 0.0).unwrap();
        assert_eq!(beam.peak_intensity(), 0.0);
        assert_eq!(beam.photon_flux(), 0.0);
    }

    #[test]
    fn unit_normalized_intensity() {
        let beam = GaussianBeam::new(1e-6, 1.0, std::f64::consts::FRAC_PI_2).unwrap();
        assert!(rel(beam.peak_intensity(), 1.0) < 1e-15);
    }

    #[test]
    fn one_photon_per_square_metre() {
        // pick P so that the peak intensity equals one photon energy per m² per s
        let wavelength = 500e-9;
        let e_photon = PLANCK * SPEED_OF_LIGHT / wavelength;
        let power = e_photon * std::f64::consts::PI / 2.0;
        let beam = GaussianBeam::new(wavelength, 1.0, power).unwrap();
        assert!(rel(beam.photon_flux(), 1.0) < 1e-12);
    }

    #[test]
    fn ionization_beam_of_first_experiment() {
        let beam = GaussianBeam::new(nm_to_m(473.0), um_to_m(1.13), mw_to_w(32.8)).unwrap();
        // 2 * 0.0328 / (pi * (1.13e-6)^2)
        assert!(rel(peak_intensity(&beam), 1.636e10) < 1e-3);
        // 1.6353e10 / (6.62607015e-34 * 299792458 / 473e-9)
        assert!(rel(photon_flux(&beam), 3.894e28) < 1e-3);
    }

    #[test]
    fn rejects_invalid_beams() {
        assert!(GaussianBeam::new(0.0, 1e-6, 1.0).is_err());
        assert!(GaussianBeam::new(473e-9, 0.0, 1.0).is_err());
        assert!(GaussianBeam::new(473e-9, 1e-6, -1.0).is_err());
        assert!(GaussianBeam::new(473e-9, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn ion_mass_is_atom_minus_electron() {
        const { assert!(RB87_ION_MASS < RB87_ATOM_MASS) };
        assert!(((RB87_ATOM_MASS - RB87_ION_MASS) - ELECTRON_MASS).abs() < 1e-40);
        let ratio = (RB87_ION_MASS / ELECTRON_MASS).sqrt();
        assert!((ratio - 398.0).abs() < 0.1);
    }

    proptest! {
        #[test]
        fn unit_round_trips(x in -1e6f64..1e6) {
            let tol = 1e-12 * x.abs().max(f64::MIN_POSITIVE);
            prop_assert!((s_to_ns(ns_to_s(x)) - x).abs() <= tol);
            prop_assert!((ns_to_s(s_to_ns(x)) - x).abs() <= tol);
            prop_assert!((m_to_mm(mm_to_m(x)) - x).abs() <= tol);
            prop_assert!((mm_to_m(m_to_mm(x)) - x).abs() <= tol);
            prop_assert!((m_to_um(um_to_m(x)) - x).abs() <= tol);
            prop_assert!((um_to_m(m_to_um(x)) - x).abs() <= tol);
        }

        #[test]
        fn flux_linear_in_power_and_inverse_square_in_waist(
            wl in 200e-9f64..2e-6,
            w in 1e-7f64..1e-2,
            p in 1e-9f64..10.0,
            k in 0.1f64..10.0,
        ) {
            let base = GaussianBeam::new(wl, w, p).unwrap().photon_flux();
            let more_power = GaussianBeam::new(wl, w, k * p).unwrap().photon_flux();
            let wider = GaussianBeam::new(wl, k * w, p).unwrap().photon_flux();
            prop_assert!(rel(more_power, k * base) < 1e-12);
            prop_assert!(rel(wider, base / (k * k)) < 1e-12);
        }
    }
}
