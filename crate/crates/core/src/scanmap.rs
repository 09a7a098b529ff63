//! Spatial dependence of the detection efficiency: synthetic 2D maps, line
//! scans and the sensitive-area diameter.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physcore::units::{m_to_mm, mm_to_m};

/// Flat-topped, roughly circular efficiency profile
/// `eta(r) = eta_max * exp(-(2r/D)^n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauModel {
    pub eta_max: f64,
    /// Diameter parameter `D` (m).
    pub diameter: f64,
    pub order: f64,
    pub center: (f64, f64),
}

impl PlateauModel {
    pub const DEFAULT_ORDER: f64 = 8.0;

    pub fn new(eta_max: f64, diameter: f64, order: f64, center: (f64, f64)) -> Result<Self> {
        let m = Self {
            eta_max,
            diameter,
            order,
            center,
        };
        m.validate()?;
        Ok(m)
    }

    /// Model whose `threshold` contour has diameter `contour_diameter`.
    pub fn with_contour(
        eta_max: f64,
        threshold: f64,
        contour_diameter: f64,
        order: f64,
        center: (f64, f64),
    ) -> Result<Self> {
        if !(threshold > 0.0 && threshold < eta_max) {
            return Err(Error::invalid(
                "threshold",
                format!("{threshold} must lie in (0, eta_max = {eta_max})"),
            ));
        }
        let d = contour_diameter / (eta_max / threshold).ln().powf(1.0 / order);
        Self::new(eta_max, d, order, center)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta_max) {
            return Err(Error::invalid("eta_max", format!("{} must lie in [0, 1]", self.eta_max)));
        }
        if !(self.diameter > 0.0 && self.diameter.is_finite()) {
            return Err(Error::invalid("diameter", format!("{} must be > 0", self.diameter)));
        }
        if !(self.order >= 2.0 && self.order.is_finite()) {
            return Err(Error::invalid("order", format!("{} must be >= 2", self.order)));
        }
        Ok(())
    }

    pub fn eta_at_radius(&self, r: f64) -> f64 {
        self.eta_max * (-(2.0 * r / self.diameter).powf(self.order)).exp()
    }

    pub fn eta(&self, x: f64, y: f64) -> f64 {
        self.eta_at_radius((x - self.center.0).hypot(y - self.center.1))
    }

    /// Analytic diameter of the `threshold` contour, `None` if the plateau
    /// never exceeds it.
    pub fn contour_diameter(&self, threshold: f64) -> Option<f64> {
        if !(threshold > 0.0 && threshold < self.eta_max) {
            return None;
        }
        Some(self.diameter * (self.eta_max / threshold).ln().powf(1.0 / self.order))
    }

    /// Radial distance over which the profile falls from 90 % to 10 % of
    /// `eta_max`.
    pub fn edge_width(&self) -> f64 {
        let r = |f: f64| 0.5 * self.diameter * (1.0 / f).ln().powf(1.0 / self.order);
        r(0.1) - r(0.9)
    }
}

/// Logistic saturation of an efficiency with a voltage, used for the plateau
/// height against CEM gain voltage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationCurve {
    pub saturated: f64,
    /// Voltage at half the saturated value (V).
    pub half_voltage: f64,
    /// Logistic width (V).
    pub width: f64,
}

impl SaturationCurve {
    /// Curve through `value` at `voltage`.
    pub fn through(value: f64, voltage: f64, half_voltage: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::invalid("width", format!("{width} must be > 0")));
        }
        let shape = Self {
            saturated: 1.0,
            half_voltage,
            width,
        };
        let saturated = value / shape.at(voltage);
        if !(0.0..=1.0).contains(&saturated) {
            return Err(Error::invalid("saturated", format!("{saturated} exceeds 1")));
        }
        Ok(Self { saturated, ..shape })
    }

    pub fn at(&self, voltage: f64) -> f64 {
        self.saturated / (1.0 + (-(voltage - self.half_voltage) / self.width).exp())
    }

    pub fn scale(&self, model: &PlateauModel, gain_voltage: f64) -> PlateauModel {
        PlateauModel {
            eta_max: self.at(gain_voltage),
            ..*model
        }
    }
}

/// Uniform rectangular scan grid (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub step: f64,
}

impl GridSpec {
    /// Square grid of half-width `half` around the origin.
    pub fn centered(half: f64, step: f64) -> Self {
        Self {
            x_min: -half,
            x_max: half,
            y_min: -half,
            y_max: half,
            step,
        }
    }

    fn axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        (0..n).map(|k| lo + step * k as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invalid("step", format!("{} must be > 0", self.step)));
        }
        if !(self.x_max >= self.x_min && self.y_max >= self.y_min) {
            return Err(Error::invalid("grid", "max must not be below min"));
        }
        Ok(())
    }

    pub fn xs(&self) -> Vec<f64> {
        Self::axis(self.x_min, self.x_max, self.step)
    }

    pub fn ys(&self) -> Vec<f64> {
        Self::axis(self.y_min, self.y_max, self.step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapMetadata {
    pub gain_voltage: f64,
    pub u_acc: f64,
    /// Axial scan plane (m).
    pub z: f64,
}

impl Default for MapMetadata {
    fn default() -> Self {
        Self {
            gain_voltage: 2800.0,
            u_acc: 3800.0,
            z: 0.0,
        }
    }
}

/// Efficiency values on a uniform grid, row-major with `y` as the row index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyMap {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub eta: Vec<f64>,
    pub sigma: Vec<f64>,
    pub metadata: MapMetadata,
}

impl EfficiencyMap {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, eta: Vec<f64>, sigma: Vec<f64>, metadata: MapMetadata) -> Result<Self> {
        if xs.is_empty() || ys.is_empty() {
            return Err(Error::InsufficientData { needed: 1, found: 0 });
        }
        if eta.len() != xs.len() * ys.len() || sigma.len() != eta.len() {
            return Err(Error::invalid("map", "value count does not match grid"));
        }
        if let Some(v) = eta.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid("eta", format!("{v} is not a probability")));
        }
        for axis in [&xs, &ys] {
            if axis.len() > 1 {
                let h = axis[1] - axis[0];
                if !(h > 0.0) || axis.windows(2).any(|w| ((w[1] - w[0]) / h - 1.0).abs() > 1e-6) {
                    return Err(Error::invalid("grid", "spacing must be uniform and increasing"));
                }
            }
        }
        Ok(Self {
            xs,
            ys,
            eta,
            sigma,
            metadata,
        })
    }

    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.eta[iy * self.xs.len() + ix]
    }

    pub fn sigma_at(&self, ix: usize, iy: usize) -> f64 {
        self.sigma[iy * self.xs.len() + ix]
    }

    /// Grid spacing; the smaller one if the axes differ.
    pub fn step(&self) -> f64 {
        let h = |a: &[f64]| if a.len() > 1 { a[1] - a[0] } else { f64::INFINITY };
        h(&self.xs).min(h(&self.ys))
    }

    pub fn max(&self) -> f64 {
        self.eta.iter().copied().fold(0.0, f64::max)
    }

    fn points(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.ys
            .iter()
            .flat_map(move |&y| self.xs.iter().map(move |&x| (x, y)))
            .zip(&self.eta)
            .map(|((x, y), &e)| (x, y, e))
    }

    /// Bilinear interpolation, `None` outside the grid.
    pub fn interpolate(&self, x: f64, y: f64) -> Option<f64> {
        let locate = |a: &[f64], v: f64| -> Option<(usize, f64)> {
            if a.len() == 1 {
                return ((v - a[0]).abs() < 1e-12).then_some((0, 0.0));
            }
            let h = a[1] - a[0];
            let u = (v - a[0]) / h;
            if u < -1e-9 || u > (a.len() - 1) as f64 + 1e-9 {
                return None;
            }
            let k = (u.floor().max(0.0) as usize).min(a.len() - 2);
            Some((k, (u - k as f64).clamp(0.0, 1.0)))
        };
        let (ix, fx) = locate(&self.xs, x)?;
        let (iy, fy) = locate(&self.ys, y)?;
        let ix1 = (ix + 1).min(self.xs.len() - 1);
        let iy1 = (iy + 1).min(self.ys.len() - 1);
        let a = self.at(ix, iy) * (1.0 - fx) + self.at(ix1, iy) * fx;
        let b = self.at(ix, iy1) * (1.0 - fx) + self.at(ix1, iy1) * fx;
        Some(a * (1.0 - fy) + b * fy)
    }
}

/// Evaluates `model` on `grid`. With `trials`, each point carries the
/// binomial error of a scan with that many attempts.
pub fn synth_map(model: &PlateauModel, grid: &GridSpec, metadata: MapMetadata, trials: Option<u64>) -> Result<EfficiencyMap> {
    model.validate()?;
    grid.validate()?;
    let xs = grid.xs();
    let ys = grid.ys();
    let eta: Vec<f64> = ys
        .par_iter()
        .flat_map_iter(|&y| xs.iter().map(move |&x| model.eta(x, y)))
        .collect();
    let sigma = eta
        .iter()
        .map(|&e| match trials {
            Some(n) if n > 0 => (e * (1.0 - e) / n as f64).sqrt(),
            _ => 0.0,
        })
        .collect();
    EfficiencyMap::new(xs, ys, eta, sigma, metadata)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub position: f64,
    pub eta: f64,
    pub sigma: f64,
}

/// Scan along `axis` through the grid line nearest to `offset` on the other
/// axis. No interpolation across lines.
pub fn line_scan(map: &EfficiencyMap, axis: Axis, offset: f64) -> Result<Vec<ScanPoint>> {
    let across = match axis {
        Axis::X => &map.ys,
        Axis::Y => &map.xs,
    };
    let (min, max) = (across[0], across[across.len() - 1]);
    let tol = 1e-9 * map.step().min(1.0);
    if offset < min - tol || offset > max + tol {
        return Err(Error::OffsetOutsideGrid { offset, min, max });
    }
    let line = across
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - offset).abs().total_cmp(&(b.1 - offset).abs()))
        .map(|(k, _)| k)
        .expect("nonempty axis");
    Ok(match axis {
        Axis::X => map
            .xs
            .iter()
            .enumerate()
            .map(|(ix, &x)| ScanPoint {
                position: x,
                eta: map.at(ix, line),
                sigma: map.sigma_at(ix, line),
            })
            .collect(),
        Axis::Y => map
            .ys
            .iter()
            .enumerate()
            .map(|(iy, &y)| ScanPoint {
                position: y,
                eta: map.at(line, iy),
                sigma: map.sigma_at(line, iy),
            })
            .collect(),
    })
}

/// Centroid of the points exceeding `level`.
pub fn plateau_center(map: &EfficiencyMap, level: f64) -> (f64, f64) {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    for (x, y, e) in map.points() {
        if e > level {
            sx += x;
            sy += y;
            n += 1.0;
        }
    }
    (sx / n, sy / n)
}

/// Diameter of the largest disk around the centroid of the super-threshold
/// points whose grid points all exceed `threshold`.
///
/// The disk edge lies between the outermost passing and the innermost
/// failing radius; the midpoint is returned. A map that passes everywhere
/// yields the largest centred disk that fits in the grid.
pub fn sensitive_diameter(map: &EfficiencyMap, threshold: f64) -> Result<f64> {
    if !map.eta.iter().any(|&e| e > threshold) {
        return Err(Error::NoPointAboveThreshold(threshold));
    }
    let (cx, cy) = plateau_center(map, threshold);
    let fit_in_grid = 2.0
        * [
            cx - map.xs[0],
            map.xs[map.xs.len() - 1] - cx,
            cy - map.ys[0],
            map.ys[map.ys.len() - 1] - cy,
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min)
        .max(0.0);
    let radii: Vec<(f64, bool)> = map
        .points()
        .map(|(x, y, e)| ((x - cx).hypot(y - cy), e > threshold))
        .collect();
    let r_fail = radii
        .iter()
        .filter(|p| !p.1)
        .map(|p| p.0)
        .fold(f64::INFINITY, f64::min);
    if r_fail.is_infinite() {
        return Ok(fit_in_grid);
    }
    let r_pass = radii
        .iter()
        .filter(|p| p.0 < r_fail)
        .map(|p| p.0)
        .fold(f64::NEG_INFINITY, f64::max);
    if r_pass.is_infinite() {
        return Ok(0.0);
    }
    Ok((r_pass + r_fail).min(fit_in_grid))
}

/// Mean diameter of the interpolated `threshold` contour, found along `rays`
/// directions from the centroid of the super-threshold points.
pub fn contour_diameter(map: &EfficiencyMap, threshold: f64, rays: usize) -> Result<f64> {
    if !map.eta.iter().any(|&e| e > threshold) {
        return Err(Error::NoPointAboveThreshold(threshold));
    }
    let rays = rays.max(4);
    let (cx, cy) = plateau_center(map, threshold);
    let step = map.step();
    let mut total = 0.0;
    for k in 0..rays {
        let phi = 2.0 * std::f64::consts::PI * k as f64 / rays as f64;
        let (dx, dy) = (phi.cos(), phi.sin());
        let value = |r: f64| map.interpolate(cx + r * dx, cy + r * dy);
        let mut inside = 0.0;
        let mut r = 0.0;
        let edge = loop {
            r += 0.25 * step;
            match value(r) {
                Some(v) if v > threshold => inside = r,
                Some(_) => break Some(r),
                None => break None,
            }
        };
        let radius = match edge {
            None => inside,
            Some(mut hi) => {
                let mut lo = inside;
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if value(mid).is_some_and(|v| v > threshold) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        };
        total += 2.0 * radius;
    }
    Ok(total / rays as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiameterSummary {
    pub threshold: f64,
    pub center: (f64, f64),
    pub containment: f64,
    pub contour: f64,
    pub step: f64,
}

pub fn summarize(map: &EfficiencyMap, threshold: f64) -> Result<DiameterSummary> {
    Ok(DiameterSummary {
        threshold,
        center: plateau_center(map, threshold),
        containment: sensitive_diameter(map, threshold)?,
        contour: contour_diameter(map, threshold, 64)?,
        step: map.step(),
    })
}

pub fn write_map_csv<W: Write>(writer: W, map: &EfficiencyMap) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["x_mm", "y_mm", "eta", "sigma"])?;
    for (iy, &y) in map.ys.iter().enumerate() {
        for (ix, &x) in map.xs.iter().enumerate() {
            wtr.write_record([
                format!("{:.6}", m_to_mm(x)),
                format!("{:.6}", m_to_mm(y)),
                format!("{}", map.at(ix, iy)),
                format!("{}", map.sigma_at(ix, iy)),
            ])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_scan_csv<W: Write>(writer: W, scan: &[ScanPoint]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["position_mm", "eta", "sigma"])?;
    for p in scan {
        wtr.write_record([format!("{:.6}", m_to_mm(p.position)), format!("{}", p.eta), format!("{}", p.sigma)])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Reads `x_mm,y_mm,eta,sigma` rows in any order.
pub fn read_map_csv<R: Read>(reader: R, metadata: MapMetadata) -> Result<EfficiencyMap> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| -> Result<f64> {
            rec.get(k)
                .ok_or_else(|| Error::Parse {
                    line: i + 2,
                    reason: format!("missing column {k}"),
                })?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse {
                    line: i + 2,
                    reason: e.to_string(),
                })
        };
        rows.push((mm_to_m(field(0)?), mm_to_m(field(1)?), field(2)?, field(3).unwrap_or(0.0)));
    }
    let key = |v: f64| (v * 1e9).round() as i64;
    let mut xs: Vec<i64> = rows.iter().map(|r| key(r.0)).collect();
    let mut ys: Vec<i64> = rows.iter().map(|r| key(r.1)).collect();
    xs.sort_unstable();
    xs.dedup();
    ys.sort_unstable();
    ys.dedup();
    if xs.len() * ys.len() != rows.len() {
        return Err(Error::invalid("map", "rows do not form a complete rectangular grid"));
    }
    let mut eta = vec![f64::NAN; rows.len()];
    let mut sigma = vec![0.0; rows.len()];
    for r in &rows {
        let ix = xs.binary_search(&key(r.0)).expect("present");
        let iy = ys.binary_search(&key(r.1)).expect("present");
        let k = iy * xs.len() + ix;
        if !eta[k].is_nan() {
            return Err(Error::invalid("map", "duplicate grid point"));
        }
        eta[k] = r.2;
        sigma[k] = r.3;
    }
    let xs = xs.into_iter().map(|v| v as f64 * 1e-9).collect();
    let ys = ys.into_iter().map(|v| v as f64 * 1e-9).collect();
    EfficiencyMap::new(xs, ys, eta, sigma, metadata)
}

pub fn read_map_csv_file(path: &Path, metadata: MapMetadata) -> Result<EfficiencyMap> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_map_csv(f, metadata)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mm(v: f64) -> f64 {
        mm_to_m(v)
    }

    fn reference_model() -> PlateauModel {
        PlateauModel::with_contour(0.995, 0.988, mm(0.84), 8.0, (0.0, mm(-0.4))).unwrap()
    }

    /// Independent oracle: radius where the profile crosses `theta`.
    fn bisect_radius(m: &PlateauModel, theta: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 10.0 * m.diameter);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if m.eta_at_radius(mid) > theta {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn zero_height_gives_zero_map() {
        let m = PlateauModel::new(0.0, mm(1.0), 8.0, (0.0, 0.0)).unwrap();
        let map = synth_map(&m, &GridSpec::centered(mm(1.0), mm(0.1)), MapMetadata::default(), None).unwrap();
        assert!(map.eta.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn centre_has_peak_value() {
        let m = reference_model();
        assert_eq!(m.eta(0.0, mm(-0.4)), 0.995);
    }

    #[test]
    fn contour_matches_bisection() {
        let m = reference_model();
        let d = m.contour_diameter(0.988).unwrap();
        assert!((d / mm(0.84) - 1.0).abs() < 1e-12);
        assert!((2.0 * bisect_radius(&m, 0.988) / d - 1.0).abs() < 1e-9);
    }

    #[test]
    fn reference_diameter_within_one_step() {
        let m = reference_model();
        let grid = GridSpec::centered(mm(1.0), mm(0.02));
        let map = synth_map(&m, &grid, MapMetadata::default(), Some(1000)).unwrap();
        let d = sensitive_diameter(&map, 0.988).unwrap();
        assert!((d - mm(0.84)).abs() <= mm(0.02), "{d}");
        let c = contour_diameter(&map, 0.988, 64).unwrap();
        assert!((c - mm(0.84)).abs() <= mm(0.02), "{c}");
    }

    #[test]
    fn uniform_maps() {
        let grid = GridSpec::centered(mm(0.5), mm(0.05));
        let xs = grid.xs();
        let ys = grid.ys();
        let n = xs.len() * ys.len();
        let high = EfficiencyMap::new(xs.clone(), ys.clone(), vec![0.99; n], vec![0.0; n], MapMetadata::default()).unwrap();
        assert!((sensitive_diameter(&high, 0.988).unwrap() - mm(1.0)).abs() < 1e-12);
        let low = EfficiencyMap::new(xs, ys, vec![0.5; n], vec![0.0; n], MapMetadata::default()).unwrap();
        assert!(matches!(sensitive_diameter(&low, 0.988), Err(Error::NoPointAboveThreshold(_))));
    }

    #[test]
    fn line_scan_rows() {
        let m = reference_model();
        let grid = GridSpec::centered(mm(1.0), mm(0.05));
        let map = synth_map(&m, &grid, MapMetadata::default(), None).unwrap();
        let scan = line_scan(&map, Axis::X, mm(-0.4)).unwrap();
        for p in &scan {
            assert!((p.eta - m.eta(p.position, mm(-0.4))).abs() < 1e-12);
        }
        let peak = scan.iter().max_by(|a, b| a.eta.total_cmp(&b.eta)).unwrap();
        assert!(peak.position.abs() < 1e-12);
        assert!(matches!(line_scan(&map, Axis::X, mm(1.5)), Err(Error::OffsetOutsideGrid { .. })));

        let n = map.eta.len();
        let flat = EfficiencyMap::new(map.xs.clone(), map.ys.clone(), vec![0.7; n], vec![0.01; n], MapMetadata::default()).unwrap();
        assert!(line_scan(&flat, Axis::Y, 0.0).unwrap().iter().all(|p| p.eta == 0.7));
    }

    #[test]
    fn gain_scales_plateau_height() {
        let g = SaturationCurve {
            saturated: 0.995,
            half_voltage: 2300.0,
            width: 60.0,
        };
        let m = reference_model();
        let heights: Vec<f64> = [2400.0, 2500.0, 2600.0, 2800.0, 3200.0]
            .iter()
            .map(|&v| g.scale(&m, v).eta_max)
            .collect();
        assert!(heights.windows(2).all(|w| w[1] > w[0]));
        assert!(g.at(1e5) <= 0.995);
        let t = SaturationCurve::through(0.9, 2800.0, 2300.0, 60.0).unwrap();
        assert!((t.at(2800.0) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn edge_width_shrinks_with_order() {
        let a = PlateauModel::new(1.0, mm(1.0), 4.0, (0.0, 0.0)).unwrap();
        let b = PlateauModel::new(1.0, mm(1.0), 16.0, (0.0, 0.0)).unwrap();
        assert!(b.edge_width() < a.edge_width());
        assert!(PlateauModel::new(1.0, mm(1.0), 1.0, (0.0, 0.0)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let m = reference_model();
        let map = synth_map(&m, &GridSpec::centered(mm(0.6), mm(0.1)), MapMetadata::default(), Some(500)).unwrap();
        let mut buf = Vec::new();
        write_map_csv(&mut buf, &map).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x_mm,y_mm,eta,sigma\n"));
        let back = read_map_csv(&buf[..], MapMetadata::default()).unwrap();
        assert_eq!(back.eta, map.eta);
        assert_eq!(back.xs.len(), map.xs.len());
        assert!((back.step() - map.step()).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn round_trip_within_one_step(
            eta_max in 0.99f64..1.0,
            d_mm in 0.3f64..1.2,
            order in 4.0f64..16.0,
            cx in -0.1f64..0.1,
            cy in -0.1f64..0.1,
        ) {
            let theta = 0.988;
            let m = PlateauModel::with_contour(eta_max, theta, mm(d_mm), order, (mm(cx), mm(cy))).unwrap();
            let step = mm(0.02);
            let map = synth_map(&m, &GridSpec::centered(mm(1.0), step), MapMetadata::default(), None).unwrap();
            let d = sensitive_diameter(&map, theta).unwrap();
            prop_assert!((d - mm(d_mm)).abs() <= step, "{} vs {}", d, mm(d_mm));
        }

        #[test]
        fn higher_threshold_never_grows_diameter(
            d_mm in 0.3f64..1.5,
            order in 2.0f64..12.0,
            t1 in 0.5f64..0.99,
            t2 in 0.5f64..0.99,
        ) {
            let m = PlateauModel::new(0.995, mm(d_mm), order, (mm(0.03), 0.0)).unwrap();
            let map = synth_map(&m, &GridSpec::centered(mm(1.0), mm(0.04)), MapMetadata::default(), None).unwrap();
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let a = sensitive_diameter(&map, lo).unwrap();
            let b = sensitive_diameter(&map, hi).unwrap();
            prop_assert!(b <= a + 1e-15);
        }
    }
}
