//! Time of flight of the photoion and photoelectron between two opposing CEMs.
//!
//! Each fragment is accelerated from rest in the homogeneous gap field
//! `U_acc / d` up to its cone entrance and then crosses one more uniform-field
//! segment inside its CEM before the primary hit. All times follow from
//! closed-form uniform-acceleration kinematics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physcore::constants::{ELECTRON_MASS, ELEMENTARY_CHARGE, RB87_ION_MASS};
use crate::physcore::units::{mm_to_m, ns_to_s, s_to_ns};

/// Below this acceleration voltage the uniform-gap model is not trusted.
pub const MODEL_VALIDITY_MIN_U_ACC: f64 = 1600.0;

/// Uniform-field segment between cone entrance and primary hit.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CemSegment {
    /// Potential drop over the segment (V). Positive values decelerate the
    /// particle entering this CEM.
    pub potential_drop: f64,
    /// Path length (m).
    pub length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorGeometry {
    /// Cone entrance to cone entrance (m).
    pub gap: f64,
    /// Ionization position measured from the electron-CEM entrance (m).
    pub z0: f64,
    /// Total acceleration voltage across the gap (V).
    pub u_acc: f64,
    pub ion_cem: CemSegment,
    pub electron_cem: CemSegment,
    /// Electron avalanche transit time inside a CEM (s).
    pub transit_time: f64,
}

impl DetectorGeometry {
    pub fn new(
        gap: f64,
        z0: f64,
        u_acc: f64,
        ion_cem: CemSegment,
        electron_cem: CemSegment,
        transit_time: f64,
    ) -> Result<Self> {
        let geom = Self {
            gap,
            z0,
            u_acc,
            ion_cem,
            electron_cem,
            transit_time,
        };
        geom.validate()?;
        Ok(geom)
    }

    /// 15.7 mm gap, ionization at the centre, 3.8 kV, no in-CEM segments, 26 ns transit.
    pub fn reference() -> Self {
        let gap = mm_to_m(15.7);
        Self {
            gap,
            z0: gap / 2.0,
            u_acc: 3800.0,
            ion_cem: CemSegment::default(),
            electron_cem: CemSegment::default(),
            transit_time: ns_to_s(26.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gap > 0.0 && self.gap.is_finite()) {
            return Err(Error::invalid("gap", format!("{} must be > 0", self.gap)));
        }
        if !(self.z0 > 0.0 && self.z0 < self.gap) {
            return Err(Error::invalid("z0", format!("{} must lie inside (0, {})", self.z0, self.gap)));
        }
        if !(self.u_acc > 0.0 && self.u_acc.is_finite()) {
            return Err(Error::invalid("u_acc", format!("{} must be > 0", self.u_acc)));
        }
        for (name, seg) in [("ion_cem.length", &self.ion_cem), ("electron_cem.length", &self.electron_cem)] {
            if !(seg.length >= 0.0 && seg.length.is_finite()) {
                return Err(Error::invalid(name, format!("{} must be >= 0", seg.length)));
            }
        }
        if !(self.transit_time >= 0.0) {
            return Err(Error::invalid("transit_time", format!("{} must be >= 0", self.transit_time)));
        }
        Ok(())
    }

    pub fn with_u_acc(&self, u_acc: f64) -> Self {
        Self { u_acc, ..*self }
    }

    pub fn gap_field(&self) -> f64 {
        self.u_acc / self.gap
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fragment {
    /// kg
    pub mass: f64,
    /// Signed charge (C). Positive fragments fly to the ion CEM.
    pub charge: f64,
    /// Kinetic energy at the ionization point (J).
    pub start_energy: f64,
}

impl Fragment {
    pub fn new(mass: f64, charge: f64, start_energy: f64) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::invalid("mass", format!("{mass} must be > 0")));
        }
        if charge == 0.0 || !charge.is_finite() {
            return Err(Error::invalid("charge", "must be nonzero"));
        }
        if !(start_energy >= 0.0) {
            return Err(Error::invalid("start_energy", format!("{start_energy} must be >= 0")));
        }
        Ok(Self {
            mass,
            charge,
            start_energy,
        })
    }

    pub fn rb87_ion() -> Self {
        Self {
            mass: RB87_ION_MASS,
            charge: ELEMENTARY_CHARGE,
            start_energy: 0.0,
        }
    }

    pub fn electron() -> Self {
        Self {
            mass: ELECTRON_MASS,
            charge: -ELEMENTARY_CHARGE,
            start_energy: 0.0,
        }
    }

    fn start_speed(&self) -> f64 {
        (2.0 * self.start_energy / self.mass).sqrt()
    }
}

/// Time to cover `length` starting at speed `v0` under constant acceleration `a`.
///
/// Uses `t = 2s / (v0 + sqrt(v0² + 2as))`, which has no cancellation as `a → 0`.
pub fn segment_time(length: f64, v0: f64, a: f64) -> Result<f64> {
    if length < 0.0 || length.is_nan() {
        return Err(Error::invalid("length", format!("{length} must be >= 0")));
    }
    if length == 0.0 {
        return Ok(0.0);
    }
    let disc = v0 * v0 + 2.0 * a * length;
    if disc < 0.0 || (v0 <= 0.0 && a < 0.0) {
        let turning_point = if a < 0.0 { (v0.max(0.0)).powi(2) / (-2.0 * a) } else { 0.0 };
        return Err(Error::Reflected {
            turning_point,
            length,
        });
    }
    let denom = v0 + disc.sqrt();
    if denom <= 0.0 {
        return Err(Error::Stalled);
    }
    Ok(2.0 * length / denom)
}

/// Flight time split into gap and in-CEM parts (s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlightTime {
    pub gap: f64,
    pub in_cem: f64,
}

impl FlightTime {
    pub fn total(&self) -> f64 {
        self.gap + self.in_cem
    }
}

fn route<'a>(geom: &'a DetectorGeometry, frag: &Fragment) -> Result<(f64, &'a CemSegment)> {
    if frag.charge > 0.0 {
        Ok((geom.gap - geom.z0, &geom.ion_cem))
    } else if frag.charge < 0.0 {
        Ok((geom.z0, &geom.electron_cem))
    } else {
        Err(Error::Routing("zero charge".into()))
    }
}

/// Kinetic energy at the cone entrance (J).
pub fn entrance_energy(geom: &DetectorGeometry, frag: &Fragment) -> Result<f64> {
    let (distance, _) = route(geom, frag)?;
    Ok(frag.start_energy + frag.charge.abs() * geom.u_acc * distance / geom.gap)
}

pub fn flight_time(geom: &DetectorGeometry, frag: &Fragment) -> Result<FlightTime> {
    geom.validate()?;
    let (distance, segment) = route(geom, frag)?;
    let q = frag.charge.abs();
    let v0 = frag.start_speed();
    let a_gap = q * geom.gap_field() / frag.mass;
    let gap = segment_time(distance, v0, a_gap)?;
    let v_entrance = (v0 * v0 + 2.0 * a_gap * distance).sqrt();
    let in_cem = if segment.length > 0.0 {
        let a_cem = -q * segment.potential_drop / (segment.length * frag.mass);
        segment_time(segment.length, v_entrance, a_cem)?
    } else {
        0.0
    };
    Ok(FlightTime { gap, in_cem })
}

/// Δt = t_i − t_e, the only flight-time quantity visible in coincidences.
pub fn tof_difference(geom: &DetectorGeometry, ion: &Fragment, electron: &Fragment) -> Result<f64> {
    Ok(flight_time(geom, ion)?.total() - flight_time(geom, electron)?.total())
}

/// Time from ionization until the first anode pulse: Δt + t_e + t_transit.
pub fn detection_time(geom: &DetectorGeometry, ion: &Fragment, electron: &Fragment) -> Result<f64> {
    Ok(timing(geom, ion, electron)?.t_det)
}

/// Full timing breakdown at one acceleration voltage, all in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtPoint {
    pub u_acc: f64,
    pub t_i: f64,
    pub t_e: f64,
    pub dt: f64,
    pub t_det: f64,
    pub within_validity: bool,
}

pub fn timing(geom: &DetectorGeometry, ion: &Fragment, electron: &Fragment) -> Result<DtPoint> {
    let t_i = flight_time(geom, ion)?.total();
    let t_e = flight_time(geom, electron)?.total();
    let dt = t_i - t_e;
    Ok(DtPoint {
        u_acc: geom.u_acc,
        t_i,
        t_e,
        dt,
        t_det: dt + t_e + geom.transit_time,
        within_validity: geom.u_acc >= MODEL_VALIDITY_MIN_U_ACC,
    })
}

/// Tabulates the timing over `voltages`. Points below 1.6 kV are computed but
/// flagged, and a warning is logged.
pub fn dt_curve(
    geom: &DetectorGeometry,
    ion: &Fragment,
    electron: &Fragment,
    voltages: &[f64],
) -> Result<Vec<DtPoint>> {
    voltages
        .iter()
        .map(|&u| {
            if !(u > 0.0) {
                return Err(Error::invalid("u_acc", format!("{u} must be > 0")));
            }
            let point = timing(&geom.with_u_acc(u), ion, electron)?;
            if !point.within_validity {
                log::warn!("U_acc = {u} V is below the {MODEL_VALIDITY_MIN_U_ACC} V validity limit of the uniform-field model");
            }
            Ok(point)
        })
        .collect()
}

pub fn write_dt_csv<W: Write>(writer: W, points: &[DtPoint]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["U_acc_V", "t_i_ns", "t_e_ns", "dt_ns", "t_det_ns"])?;
    for p in points {
        wtr.write_record(&[
            format!("{}", p.u_acc),
            format!("{:.6}", s_to_ns(p.t_i)),
            format!("{:.6}", s_to_ns(p.t_e)),
            format!("{:.6}", s_to_ns(p.dt)),
            format!("{:.6}", s_to_ns(p.t_det)),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Measured timing at one voltage that the in-CEM segments are tuned to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TofAnchors {
    pub u_acc: f64,
    /// Ion minus electron flight time (s).
    pub dt: f64,
    /// Electron flight time (s).
    pub t_e: f64,
}

impl TofAnchors {
    /// 388.81 ns and 0.95 ns at 3.8 kV.
    pub fn reference() -> Self {
        Self {
            u_acc: 3800.0,
            dt: ns_to_s(388.81),
            t_e: ns_to_s(0.95),
        }
    }
}

/// Solves for one in-CEM segment shared by both detectors with mirrored
/// polarity: the ion is decelerated by `U` and the electron accelerated by
/// `U` over the same length `L`. The two anchors fix (`U`, `L`).
///
/// Returns the geometry with both segments filled in; the remaining fields of
/// `geom` are kept.
pub fn calibrate_cem(
    geom: &DetectorGeometry,
    ion: &Fragment,
    electron: &Fragment,
    anchors: &TofAnchors,
) -> Result<DetectorGeometry> {
    let base = DetectorGeometry {
        ion_cem: CemSegment::default(),
        electron_cem: CemSegment::default(),
        ..geom.with_u_acc(anchors.u_acc)
    };
    let gap_i = flight_time(&base, ion)?.gap;
    let gap_e = flight_time(&base, electron)?.gap;
    let need_e = anchors.t_e - gap_e;
    let need_i = anchors.dt + anchors.t_e - gap_i;
    if !(need_e > 0.0 && need_i > 0.0) {
        return Err(Error::Calibration(format!(
            "anchors leave no time for the in-CEM segment (electron {need_e:e} s, ion {need_i:e} s)"
        )));
    }

    let e_i = entrance_energy(&base, ion)?;
    let e_e = entrance_energy(&base, electron)?;
    let v_i = (2.0 * e_i / ion.mass).sqrt();
    let v_e = (2.0 * e_e / electron.mass).sqrt();
    let q_i = ion.charge.abs();
    let q_e = electron.charge.abs();

    // time per unit length for a given potential drop seen by the particle
    let per_length = |v: f64, q: f64, m: f64, drop: f64| segment_time(1.0, v, -q * drop / m);
    let residual = |u: f64| -> Result<f64> {
        let length = need_e / per_length(v_e, q_e, electron.mass, -u)?;
        Ok(length * per_length(v_i, q_i, ion.mass, u)? - need_i)
    };

    // the ion must not be stopped and the electron must not be reflected
    let span = (e_i / q_i).min(e_e / q_e);
    let mut lo = -(e_e / q_e) * (1.0 - 1e-12);
    let mut hi = (e_i / q_i) * (1.0 - 1e-12);
    let (r_lo, r_hi) = (residual(lo)?, residual(hi)?);
    if r_lo.signum() == r_hi.signum() {
        return Err(Error::Calibration(format!(
            "no in-CEM potential within ±{span:.1} V matches the anchors"
        )));
    }
    let rising = r_hi > r_lo;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let r = residual(mid)?;
        if (r > 0.0) == rising {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-13 * hi.abs().max(1.0) {
            break;
        }
    }
    let u = 0.5 * (lo + hi);
    let length = need_e / per_length(v_e, q_e, electron.mass, -u)?;
    Ok(DetectorGeometry {
        ion_cem: CemSegment {
            potential_drop: u,
            length,
        },
        electron_cem: CemSegment {
            potential_drop: -u,
            length,
        },
        ..*geom
    })
}
