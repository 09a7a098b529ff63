//! Scenario configuration. Files are TOML; every leaf is addressed by its
//! dotted key (`montecarlo.fwhm_ns`), unknown keys are rejected and values
//! not given keep the reference defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::coincidence::{HistogramSpec, PairingRule, WindowSpec};
use crate::error::{Error, Result};
use crate::ionization::{Weighting, REFERENCE_FIT_GRID_NS, REFERENCE_PLATEAU_GRID_NS};
use crate::montecarlo::{ScenarioConfig, TargetCounts};
use crate::physcore::units::{mm_to_m, ns_to_s};
use crate::tof::{DetectorGeometry, TofAnchors};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSection {
    pub label: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeamSection {
    pub wavelength_nm: f64,
    pub waist_um: f64,
    pub power_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IonizationSection {
    pub p_inf: f64,
    pub tau_ns: f64,
    /// Constant ionization probability of the dark state.
    pub p_f1: f64,
    pub trials: u64,
    pub fit_grid_ns: Vec<f64>,
    pub plateau_grid_ns: Vec<f64>,
    pub fit_max_ns: f64,
    pub weighting: Weighting,
    /// Seeded repetitions for the τ coverage check.
    pub coverage_runs: usize,
    pub coverage_band_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TofSection {
    pub gap_mm: f64,
    pub z0_mm: f64,
    pub u_acc_v: f64,
    pub transit_ns: f64,
    pub anchor_dt_ns: f64,
    pub anchor_te_ns: f64,
    pub sweep_v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSection {
    pub duration_s: f64,
    pub n_ion: f64,
    pub n_background_ion: f64,
    pub n_electron: f64,
    pub n_background_electron: f64,
    pub n_coincidence: f64,
    pub fwhm_ns: f64,
    pub tail_fraction: f64,
    pub tail_ns: f64,
    pub electron_jitter_share: f64,
    pub slices: usize,
    pub workers: usize,
    /// Seeded runs for the estimator consistency check.
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoincidenceSection {
    pub bin_ns: f64,
    pub span_lo_ns: f64,
    pub span_hi_ns: f64,
    pub pairing: PairingRule,
    pub window_before_ns: f64,
    pub window_after_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyScanSection {
    pub voltages_v: Vec<f64>,
    pub ion_half_v: f64,
    pub ion_width_v: f64,
    pub electron_half_v: f64,
    pub electron_width_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanMapSection {
    pub eta_max: f64,
    pub threshold: f64,
    pub contour_mm: f64,
    pub order: f64,
    pub center_x_mm: f64,
    pub center_y_mm: f64,
    pub half_width_mm: f64,
    pub step_mm: f64,
    /// Attempts per map point for binomial errors; 0 leaves them at zero.
    pub trials: u64,
    pub line_offset_mm: f64,
    pub reference_gain_v: f64,
    pub gain_voltages_v: Vec<f64>,
    pub gain_half_v: f64,
    pub gain_width_v: f64,
    pub z_planes_mm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSection {
    /// Claims file, relative to the config file.
    pub claims: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Config {
    pub run: RunSection,
    pub beam: BeamSection,
    pub ionization: IonizationSection,
    pub tof: TofSection,
    pub montecarlo: MonteCarloSection,
    pub coincidence: CoincidenceSection,
    pub efficiency_scan: EfficiencyScanSection,
    pub scanmap: ScanMapSection,
    pub report: ReportSection,
    /// Directory relative paths in the file are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        let t = TargetCounts::reference();
        Self {
            run: RunSection {
                label: "reference".into(),
                seed: 7,
            },
            beam: BeamSection {
                wavelength_nm: 473.0,
                waist_um: 1.13,
                power_mw: 32.8,
            },
            ionization: IonizationSection {
                p_inf: 0.993,
                tau_ns: 64.4,
                p_f1: 0.0068,
                trials: 300,
                fit_grid_ns: REFERENCE_FIT_GRID_NS.to_vec(),
                plateau_grid_ns: REFERENCE_PLATEAU_GRID_NS.to_vec(),
                fit_max_ns: 475.0,
                weighting: Weighting::Unweighted,
                coverage_runs: 100,
                coverage_band_ns: 3.0,
            },
            tof: TofSection {
                gap_mm: 15.7,
                z0_mm: 7.85,
                u_acc_v: 3800.0,
                transit_ns: 26.0,
                anchor_dt_ns: 388.81,
                anchor_te_ns: 0.95,
                sweep_v: (0..=24).map(|k| 1400.0 + 100.0 * k as f64).collect(),
            },
            montecarlo: MonteCarloSection {
                duration_s: t.duration,
                n_ion: t.n_ion,
                n_background_ion: t.n_background_ion,
                n_electron: t.n_electron,
                n_background_electron: t.n_background_electron,
                n_coincidence: t.n_coincidence,
                fwhm_ns: 8.5,
                tail_fraction: 0.02,
                tail_ns: 20.0,
                electron_jitter_share: 0.0,
                slices: 64,
                workers: 0,
                runs: 200,
            },
            coincidence: CoincidenceSection {
                bin_ns: 1.0,
                span_lo_ns: 0.0,
                span_hi_ns: 1000.0,
                pairing: PairingRule::NearestSubsequent,
                window_before_ns: 20.0,
                window_after_ns: 80.0,
            },
            efficiency_scan: EfficiencyScanSection {
                voltages_v: (0..=11).map(|k| 1600.0 + 200.0 * k as f64).collect(),
                ion_half_v: 1500.0,
                ion_width_v: 400.0,
                electron_half_v: 900.0,
                electron_width_v: 500.0,
            },
            scanmap: ScanMapSection {
                eta_max: 0.995,
                threshold: 0.988,
                contour_mm: 0.84,
                order: 8.0,
                center_x_mm: 0.0,
                center_y_mm: -0.4,
                half_width_mm: 1.2,
                step_mm: 0.02,
                trials: 0,
                line_offset_mm: -0.4,
                reference_gain_v: 2800.0,
                gain_voltages_v: vec![2400.0, 2500.0, 2600.0, 2800.0, 3200.0],
                gain_half_v: 2300.0,
                gain_width_v: 70.0,
                z_planes_mm: vec![-2.5, 0.0, 2.5],
            },
            report: ReportSection {
                claims: PathBuf::from("claims.toml"),
            },
            base_dir: PathBuf::from("."),
        }
    }
}

fn flatten(prefix: &str, value: toml::Value, out: &mut BTreeMap<String, toml::Value>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other);
        }
    }
}

/// Flat view of a parsed file; each accessor consumes its key.
struct Keys(BTreeMap<String, toml::Value>);

fn bad(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn as_f64(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(x) => Ok(*x),
        toml::Value::Integer(i) => Ok(*i as f64),
        other => Err(bad(key, format!("expected a number, found {}", other.type_str()))),
    }
}

impl Keys {
    fn f64(&mut self, key: &str, slot: &mut f64) -> Result<()> {
        if let Some(v) = self.0.remove(key) {
            let x = as_f64(key, &v)?;
            if !x.is_finite() {
                return Err(bad(key, "must be finite"));
            }
            *slot = x;
        }
        Ok(())
    }

    fn u64(&mut self, key: &str, slot: &mut u64) -> Result<()> {
        if let Some(v) = self.0.remove(key) {
            *slot = match v {
                toml::Value::Integer(i) if i >= 0 => i as u64,
                toml::Value::Integer(_) => return Err(bad(key, "must be >= 0")),
                other => return Err(bad(key, format!("expected an integer, found {}", other.type_str()))),
            };
        }
        Ok(())
    }

    fn usize(&mut self, key: &str, slot: &mut usize) -> Result<()> {
        let mut v = *slot as u64;
        self.u64(key, &mut v)?;
        *slot = v as usize;
        Ok(())
    }

    fn vec(&mut self, key: &str, slot: &mut Vec<f64>) -> Result<()> {
        if let Some(v) = self.0.remove(key) {
            let toml::Value::Array(items) = v else {
                return Err(bad(key, format!("expected an array, found {}", v.type_str())));
            };
            *slot = items.iter().map(|x| as_f64(key, x)).collect::<Result<_>>()?;
        }
        Ok(())
    }

    fn string(&mut self, key: &str) -> Result<Option<String>> {
        match self.0.remove(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s)),
            Some(other) => Err(bad(key, format!("expected a string, found {}", other.type_str()))),
        }
    }

    fn finish(self) -> Result<()> {
        match self.0.into_keys().next() {
            None => Ok(()),
            Some(key) => Err(bad(&key, "unknown key")),
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Value = text.parse().map_err(|e: toml::de::Error| bad("<file>", e.message().to_string()))?;
        let mut flat = BTreeMap::new();
        flatten("", value, &mut flat);
        let mut k = Keys(flat);
        let mut c = Self::default();

        if let Some(s) = k.string("run.label")? {
            c.run.label = s;
        }
        k.u64("run.seed", &mut c.run.seed)?;

        k.f64("beam.wavelength_nm", &mut c.beam.wavelength_nm)?;
        k.f64("beam.waist_um", &mut c.beam.waist_um)?;
        k.f64("beam.power_mw", &mut c.beam.power_mw)?;

        let i = &mut c.ionization;
        k.f64("ionization.p_inf", &mut i.p_inf)?;
        k.f64("ionization.tau_ns", &mut i.tau_ns)?;
        k.f64("ionization.p_f1", &mut i.p_f1)?;
        k.u64("ionization.trials", &mut i.trials)?;
        k.vec("ionization.fit_grid_ns", &mut i.fit_grid_ns)?;
        k.vec("ionization.plateau_grid_ns", &mut i.plateau_grid_ns)?;
        k.f64("ionization.fit_max_ns", &mut i.fit_max_ns)?;
        if let Some(s) = k.string("ionization.weighting")? {
            i.weighting = match s.as_str() {
                "unweighted" => Weighting::Unweighted,
                "inverse_binomial" => Weighting::InverseBinomial,
                _ => return Err(bad("ionization.weighting", format!("`{s}` is not unweighted|inverse_binomial"))),
            };
        }
        k.usize("ionization.coverage_runs", &mut i.coverage_runs)?;
        k.f64("ionization.coverage_band_ns", &mut i.coverage_band_ns)?;

        let t = &mut c.tof;
        k.f64("tof.gap_mm", &mut t.gap_mm)?;
        k.f64("tof.z0_mm", &mut t.z0_mm)?;
        k.f64("tof.u_acc_v", &mut t.u_acc_v)?;
        k.f64("tof.transit_ns", &mut t.transit_ns)?;
        k.f64("tof.anchor_dt_ns", &mut t.anchor_dt_ns)?;
        k.f64("tof.anchor_te_ns", &mut t.anchor_te_ns)?;
        k.vec("tof.sweep_v", &mut t.sweep_v)?;

        let m = &mut c.montecarlo;
        k.f64("montecarlo.duration_s", &mut m.duration_s)?;
        k.f64("montecarlo.n_ion", &mut m.n_ion)?;
        k.f64("montecarlo.n_background_ion", &mut m.n_background_ion)?;
        k.f64("montecarlo.n_electron", &mut m.n_electron)?;
        k.f64("montecarlo.n_background_electron", &mut m.n_background_electron)?;
        k.f64("montecarlo.n_coincidence", &mut m.n_coincidence)?;
        k.f64("montecarlo.fwhm_ns", &mut m.fwhm_ns)?;
        k.f64("montecarlo.tail_fraction", &mut m.tail_fraction)?;
        k.f64("montecarlo.tail_ns", &mut m.tail_ns)?;
        k.f64("montecarlo.electron_jitter_share", &mut m.electron_jitter_share)?;
        k.usize("montecarlo.slices", &mut m.slices)?;
        k.usize("montecarlo.workers", &mut m.workers)?;
        k.usize("montecarlo.runs", &mut m.runs)?;

        let h = &mut c.coincidence;
        k.f64("coincidence.bin_ns", &mut h.bin_ns)?;
        k.f64("coincidence.span_lo_ns", &mut h.span_lo_ns)?;
        k.f64("coincidence.span_hi_ns", &mut h.span_hi_ns)?;
        if let Some(s) = k.string("coincidence.pairing")? {
            h.pairing = match s.as_str() {
                "nearest_subsequent" => PairingRule::NearestSubsequent,
                "all_pairs" => PairingRule::AllPairs,
                _ => return Err(bad("coincidence.pairing", format!("`{s}` is not nearest_subsequent|all_pairs"))),
            };
        }
        k.f64("coincidence.window_before_ns", &mut h.window_before_ns)?;
        k.f64("coincidence.window_after_ns", &mut h.window_after_ns)?;

        let e = &mut c.efficiency_scan;
        k.vec("efficiency_scan.voltages_v", &mut e.voltages_v)?;
        k.f64("efficiency_scan.ion_half_v", &mut e.ion_half_v)?;
        k.f64("efficiency_scan.ion_width_v", &mut e.ion_width_v)?;
        k.f64("efficiency_scan.electron_half_v", &mut e.electron_half_v)?;
        k.f64("efficiency_scan.electron_width_v", &mut e.electron_width_v)?;

        let s = &mut c.scanmap;
        k.f64("scanmap.eta_max", &mut s.eta_max)?;
        k.f64("scanmap.threshold", &mut s.threshold)?;
        k.f64("scanmap.contour_mm", &mut s.contour_mm)?;
        k.f64("scanmap.order", &mut s.order)?;
        k.f64("scanmap.center_x_mm", &mut s.center_x_mm)?;
        k.f64("scanmap.center_y_mm", &mut s.center_y_mm)?;
        k.f64("scanmap.half_width_mm", &mut s.half_width_mm)?;
        k.f64("scanmap.step_mm", &mut s.step_mm)?;
        k.u64("scanmap.trials", &mut s.trials)?;
        k.f64("scanmap.line_offset_mm", &mut s.line_offset_mm)?;
        k.f64("scanmap.reference_gain_v", &mut s.reference_gain_v)?;
        k.vec("scanmap.gain_voltages_v", &mut s.gain_voltages_v)?;
        k.f64("scanmap.gain_half_v", &mut s.gain_half_v)?;
        k.f64("scanmap.gain_width_v", &mut s.gain_width_v)?;
        k.vec("scanmap.z_planes_mm", &mut s.z_planes_mm)?;

        if let Some(p) = k.string("report.claims")? {
            c.report.claims = PathBuf::from(p);
        }
        k.finish()?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::from_toml_str(&text)?;
        c.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(c)
    }

    pub fn claims_path(&self) -> PathBuf {
        self.base_dir.join(&self.report.claims)
    }

    /// Range and consistency checks, reported against the offending key.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("beam.wavelength_nm", self.beam.wavelength_nm),
            ("beam.waist_um", self.beam.waist_um),
            ("ionization.tau_ns", self.ionization.tau_ns),
            ("ionization.fit_max_ns", self.ionization.fit_max_ns),
            ("ionization.coverage_band_ns", self.ionization.coverage_band_ns),
            ("tof.gap_mm", self.tof.gap_mm),
            ("tof.u_acc_v", self.tof.u_acc_v),
            ("tof.anchor_dt_ns", self.tof.anchor_dt_ns),
            ("tof.anchor_te_ns", self.tof.anchor_te_ns),
            ("montecarlo.duration_s", self.montecarlo.duration_s),
            ("montecarlo.fwhm_ns", self.montecarlo.fwhm_ns),
            ("coincidence.bin_ns", self.coincidence.bin_ns),
            ("efficiency_scan.ion_width_v", self.efficiency_scan.ion_width_v),
            ("efficiency_scan.electron_width_v", self.efficiency_scan.electron_width_v),
            ("scanmap.contour_mm", self.scanmap.contour_mm),
            ("scanmap.half_width_mm", self.scanmap.half_width_mm),
            ("scanmap.step_mm", self.scanmap.step_mm),
            ("scanmap.gain_width_v", self.scanmap.gain_width_v),
        ];
        for (key, v) in positive {
            if !(v > 0.0) {
                return Err(bad(key, format!("{v} must be > 0")));
            }
        }
        let probabilities = [
            ("ionization.p_inf", self.ionization.p_inf),
            ("ionization.p_f1", self.ionization.p_f1),
            ("montecarlo.tail_fraction", self.montecarlo.tail_fraction),
            ("montecarlo.electron_jitter_share", self.montecarlo.electron_jitter_share),
            ("scanmap.eta_max", self.scanmap.eta_max),
            ("scanmap.threshold", self.scanmap.threshold),
        ];
        for (key, v) in probabilities {
            if !(0.0..=1.0).contains(&v) {
                return Err(bad(key, format!("{v} must lie in [0, 1]")));
            }
        }
        if self.beam.power_mw < 0.0 {
            return Err(bad("beam.power_mw", "must be >= 0"));
        }
        if self.ionization.trials == 0 {
            return Err(bad("ionization.trials", "must be >= 1"));
        }
        if self.ionization.fit_grid_ns.len() < 2 {
            return Err(bad("ionization.fit_grid_ns", "needs at least two pulse lengths"));
        }
        if self.ionization.fit_grid_ns.iter().chain(&self.ionization.plateau_grid_ns).any(|&t| !(t > 0.0)) {
            return Err(bad("ionization.fit_grid_ns", "pulse lengths must be > 0"));
        }
        if self.ionization.plateau_grid_ns.is_empty() {
            return Err(bad("ionization.plateau_grid_ns", "must not be empty"));
        }
        if !(self.tof.z0_mm > 0.0 && self.tof.z0_mm < self.tof.gap_mm) {
            return Err(bad("tof.z0_mm", format!("{} must lie inside (0, gap_mm)", self.tof.z0_mm)));
        }
        if self.tof.transit_ns < 0.0 {
            return Err(bad("tof.transit_ns", "must be >= 0"));
        }
        if self.tof.sweep_v.iter().any(|&u| !(u > 0.0)) {
            return Err(bad("tof.sweep_v", "voltages must be > 0"));
        }
        if self.efficiency_scan.voltages_v.iter().any(|&u| !(u > 0.0)) {
            return Err(bad("efficiency_scan.voltages_v", "voltages must be > 0"));
        }
        if self.montecarlo.slices == 0 {
            return Err(bad("montecarlo.slices", "must be >= 1"));
        }
        if self.montecarlo.runs < 2 {
            return Err(bad("montecarlo.runs", "must be >= 2"));
        }
        if !(self.coincidence.span_hi_ns > self.coincidence.span_lo_ns) {
            return Err(bad("coincidence.span_hi_ns", "must exceed span_lo_ns"));
        }
        if self.coincidence.window_before_ns < 0.0 || self.coincidence.window_after_ns < 0.0 {
            return Err(bad("coincidence.window_before_ns", "window offsets must be >= 0"));
        }
        if !(self.scanmap.threshold < self.scanmap.eta_max) {
            return Err(bad("scanmap.threshold", "must be below scanmap.eta_max"));
        }
        if !(self.scanmap.order >= 2.0) {
            return Err(bad("scanmap.order", "must be >= 2"));
        }
        self.scenario()
            .map_err(|e| bad("montecarlo", e.to_string()))?;
        Ok(())
    }

    pub fn geometry(&self) -> Result<DetectorGeometry> {
        let r = DetectorGeometry::reference();
        DetectorGeometry::new(
            mm_to_m(self.tof.gap_mm),
            mm_to_m(self.tof.z0_mm),
            self.tof.u_acc_v,
            r.ion_cem,
            r.electron_cem,
            ns_to_s(self.tof.transit_ns),
        )
    }

    pub fn anchors(&self) -> TofAnchors {
        TofAnchors {
            u_acc: self.tof.u_acc_v,
            dt: ns_to_s(self.tof.anchor_dt_ns),
            t_e: ns_to_s(self.tof.anchor_te_ns),
        }
    }

    pub fn target_counts(&self) -> TargetCounts {
        let m = &self.montecarlo;
        TargetCounts {
            duration: m.duration_s,
            n_ion: m.n_ion,
            n_background_ion: m.n_background_ion,
            n_electron: m.n_electron,
            n_background_electron: m.n_background_electron,
            n_coincidence: m.n_coincidence,
        }
    }

    /// Monte Carlo description matching the target counts and the
    /// configured peak shape. `dt` stays at the anchor value.
    pub fn scenario(&self) -> Result<ScenarioConfig> {
        let m = &self.montecarlo;
        let cfg = ScenarioConfig {
            fwhm: ns_to_s(m.fwhm_ns),
            tail_fraction: m.tail_fraction,
            tail_time: ns_to_s(m.tail_ns),
            electron_jitter_share: m.electron_jitter_share,
            electron_flight: ns_to_s(self.tof.anchor_te_ns),
            dt: ns_to_s(self.tof.anchor_dt_ns),
            slices: m.slices,
            workers: m.workers,
            seed: self.run.seed,
            ..ScenarioConfig::from_target_counts(&self.target_counts())?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn histogram_spec(&self) -> HistogramSpec {
        HistogramSpec {
            bin_width: ns_to_s(self.coincidence.bin_ns),
            span_lo: ns_to_s(self.coincidence.span_lo_ns),
            span_hi: ns_to_s(self.coincidence.span_hi_ns),
            rule: self.coincidence.pairing,
        }
    }

    pub fn window(&self) -> WindowSpec {
        WindowSpec {
            before: ns_to_s(self.coincidence.window_before_ns),
            after: ns_to_s(self.coincidence.window_after_ns),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::from_toml_str("").unwrap(), Config::default());
    }

    #[test]
    fn values_override_defaults() {
        let c = Config::from_toml_str("[run]\nseed = 3\n[montecarlo]\nfwhm_ns = 7\nruns = 10\n").unwrap();
        assert_eq!(c.run.seed, 3);
        assert_eq!(c.montecarlo.fwhm_ns, 7.0);
        assert_eq!(c.montecarlo.runs, 10);
        let dotted = Config::from_toml_str("montecarlo.fwhm_ns = 7.0\n").unwrap();
        assert_eq!(dotted.montecarlo.fwhm_ns, 7.0);
    }

    #[test]
    fn errors_name_the_key() {
        let key_of = |text: &str| match Config::from_toml_str(text) {
            Err(Error::Config { key, .. }) => key,
            other => panic!("{other:?}"),
        };
        assert_eq!(key_of("[tof]\ngap_mn = 3\n"), "tof.gap_mn");
        assert_eq!(key_of("[tof]\ngap_mm = \"wide\"\n"), "tof.gap_mm");
        assert_eq!(key_of("[scanmap]\nthreshold = 1.5\n"), "scanmap.threshold");
        assert_eq!(key_of("[coincidence]\npairing = \"first\"\n"), "coincidence.pairing");
        assert_eq!(key_of("[tof]\nz0_mm = 20\n"), "tof.z0_mm");
    }

    #[test]
    fn reference_scenario_matches_targets() {
        let s = Config::default().scenario().unwrap();
        assert!((s.eta_ion - 45099.0 / 48702.0).abs() < 1e-12);
        assert_eq!(s.seed, 7);
    }
}
