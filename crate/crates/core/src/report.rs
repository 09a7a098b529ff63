//! End-to-end scenario runs. A scenario file configures every module; a
//! claims file lists the reproduced figures with their tolerances. The run
//! computes all quantities, scores the claims and writes plot-ready data.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coincidence::{self, CoincidenceResult, CountSummary};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::ionization::{self, FidelityInputs, FitOptions, HyperfineState, IonizationDataset, IonizationModel};
use crate::measurement::Measurement;
use crate::montecarlo::{generate, generate_background, ScenarioConfig};
use crate::physcore::units::{m_to_mm, mm_to_m, mw_to_w, nm_to_m, ns_to_s, s_to_ns, um_to_m};
use crate::physcore::GaussianBeam;
use crate::scanmap::{self, Axis, GridSpec, MapMetadata, PlateauModel, SaturationCurve};
use crate::tof::{self, Fragment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    ExactArithmetic,
    MonteCarlo,
    ModelCalibration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// `|computed - expected| <= tolerance`
    #[default]
    Within,
    /// `computed <= expected`
    AtMost,
    /// `computed >= expected`
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimSpec {
    pub id: String,
    pub criterion: u32,
    /// Name of the computed quantity the claim is scored on.
    pub quantity: String,
    pub expected: f64,
    #[serde(default)]
    pub tolerance: f64,
    /// Tolerance is a fraction of `expected`.
    #[serde(default)]
    pub relative: bool,
    #[serde(default)]
    pub comparison: Comparison,
    pub provenance: Provenance,
    /// Where the reference value comes from.
    pub anchor: String,
}

impl ClaimSpec {
    pub fn holds(&self, computed: f64) -> bool {
        let tol = if self.relative {
            self.tolerance * self.expected.abs()
        } else {
            self.tolerance
        };
        match self.comparison {
            Comparison::Within => (computed - self.expected).abs() <= tol,
            Comparison::AtMost => computed <= self.expected + tol,
            Comparison::AtLeast => computed >= self.expected - tol,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClaimsFile {
    #[serde(default)]
    claim: Vec<ClaimSpec>,
}

pub fn parse_claims(text: &str) -> Result<Vec<ClaimSpec>> {
    let file: ClaimsFile = toml::from_str(text).map_err(|e| Error::Config {
        key: "claim".into(),
        reason: e.message().to_string(),
    })?;
    let mut seen = std::collections::BTreeSet::new();
    for c in &file.claim {
        if !seen.insert(c.id.as_str()) {
            return Err(Error::Config {
                key: format!("claim.{}", c.id),
                reason: "duplicate claim id".into(),
            });
        }
    }
    Ok(file.claim)
}

pub fn load_claims(path: &Path) -> Result<Vec<ClaimSpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_claims(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimStatus {
    Pass,
    Fail,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub id: String,
    pub criterion: u32,
    pub quantity: String,
    pub expected: f64,
    pub computed: Option<f64>,
    pub tolerance: f64,
    pub relative: bool,
    pub comparison: Comparison,
    pub provenance: Provenance,
    pub anchor: String,
    pub status: ClaimStatus,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproductionReport {
    pub label: String,
    pub seed: u64,
    pub passed: bool,
    pub claims: Vec<ClaimRecord>,
    /// Every computed quantity by name.
    pub quantities: BTreeMap<String, f64>,
    /// Quantity groups that failed to compute, with the error.
    pub errors: BTreeMap<String, String>,
    pub artifacts: Vec<String>,
}

impl ReproductionReport {
    pub fn claim(&self, id: &str) -> Option<&ClaimRecord> {
        self.claims.iter().find(|c| c.id == id)
    }
}

/// Scores `claims` against computed quantities. Claims on quantities whose
/// group failed are marked as errors; the rest are still evaluated.
pub fn score(claims: &[ClaimSpec], quantities: &BTreeMap<String, f64>, errors: &BTreeMap<String, String>) -> Vec<ClaimRecord> {
    claims
        .iter()
        .map(|c| {
            let computed = quantities.get(&c.quantity).copied();
            let (status, message) = match computed {
                Some(v) if v.is_finite() && c.holds(v) => (ClaimStatus::Pass, None),
                Some(v) if v.is_finite() => (ClaimStatus::Fail, None),
                Some(_) => (ClaimStatus::Error, Some("quantity is not finite".to_string())),
                None => {
                    let group = c.quantity.split('.').next().unwrap_or_default();
                    let msg = errors
                        .get(group)
                        .cloned()
                        .unwrap_or_else(|| format!("unknown quantity `{}`", c.quantity));
                    (ClaimStatus::Error, Some(msg))
                }
            };
            ClaimRecord {
                id: c.id.clone(),
                criterion: c.criterion,
                quantity: c.quantity.clone(),
                expected: c.expected,
                computed,
                tolerance: c.tolerance,
                relative: c.relative,
                comparison: c.comparison,
                provenance: c.provenance,
                anchor: c.anchor.clone(),
                status,
                message,
            }
        })
        .collect()
}

type Quantities = Vec<(String, f64)>;

struct Outputs<'a> {
    dir: &'a Path,
}

impl Outputs<'_> {
    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        Ok(BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?))
    }
}

fn put(q: &mut Quantities, group: &str, name: &str, value: f64) {
    q.push((format!("{group}.{name}"), value));
}

fn put_measurement(q: &mut Quantities, group: &str, name: &str, m: Measurement) {
    put(q, group, name, m.value);
    put(q, group, &format!("{name}_sigma"), m.sigma);
}

/// Exact arithmetic on the configured counts and model parameters.
fn exact_block(cfg: &Config, t_det: f64) -> Result<Quantities> {
    let mut q = Vec::new();
    let g = "exact";
    let t = cfg.target_counts();
    let counts = CountSummary::from_counts(
        t.n_ion,
        t.n_background_ion,
        t.n_electron,
        t.n_background_electron,
        t.n_coincidence,
        t.duration,
        cfg.window(),
    );
    let e = coincidence::efficiencies(&counts)?;
    put_measurement(&mut q, g, "eta_ion", e.eta_ion);
    put_measurement(&mut q, g, "eta_electron", e.eta_electron);
    put_measurement(&mut q, g, "eta_det", e.eta_det);
    put(&mut q, g, "accidentals", coincidence::accidental_count(&counts, t.duration));
    put(&mut q, g, "accidental_ratio_total", coincidence::accidental_ratio(&counts, t.duration)?);
    put(
        &mut q,
        g,
        "accidental_ratio_background",
        coincidence::accidental_ratio_background(&counts, t.duration)?,
    );

    let model = IonizationModel::new(cfg.ionization.p_inf, ns_to_s(cfg.ionization.tau_ns))?;
    let t_ion = model.ionization_time();
    let p_f2 = model.probability(t_ion)?;
    put(&mut q, g, "t_ion_ns", s_to_ns(t_ion));
    put(&mut q, g, "p_ion_f2", p_f2);
    let fidelity = ionization::readout_fidelity(&FidelityInputs::new(p_f2, cfg.ionization.p_f1)?);
    put(&mut q, g, "fidelity", fidelity);
    let overall = coincidence::overall(
        &e,
        Measurement::exact(p_f2),
        Measurement::exact(t_ion),
        Measurement::exact(t_det),
    )?;
    put(&mut q, g, "eta", overall.eta.value);
    put(&mut q, g, "t_tot_ns", s_to_ns(overall.t_tot.value));

    let beam = GaussianBeam::new(
        nm_to_m(cfg.beam.wavelength_nm),
        um_to_m(cfg.beam.waist_um),
        mw_to_w(cfg.beam.power_mw),
    )?;
    put(&mut q, g, "beam_peak_intensity", beam.peak_intensity());
    put(&mut q, g, "beam_photon_flux", beam.photon_flux());
    Ok(q)
}

/// Flight-time model: gap-only closed form and the anchor-calibrated model.
fn tof_block(cfg: &Config, out: &Outputs) -> Result<(Quantities, f64)> {
    let mut q = Vec::new();
    let g = "tof";
    let geom = cfg.geometry()?;
    let (ion, electron) = (Fragment::rb87_ion(), Fragment::electron());
    let gap_only = tof::timing(&geom, &ion, &electron)?;
    put(&mut q, g, "gap_only_t_i_ns", s_to_ns(gap_only.t_i));
    put(&mut q, g, "gap_only_t_e_ns", s_to_ns(gap_only.t_e));
    let calibrated = tof::calibrate_cem(&geom, &ion, &electron, &cfg.anchors())?;
    let at_anchor = tof::timing(&calibrated.with_u_acc(cfg.tof.u_acc_v), &ion, &electron)?;
    put(&mut q, g, "cem_potential_v", calibrated.ion_cem.potential_drop);
    put(&mut q, g, "cem_length_mm", m_to_mm(calibrated.ion_cem.length));
    put(&mut q, g, "dt_ns", s_to_ns(at_anchor.dt));
    put(&mut q, g, "t_e_ns", s_to_ns(at_anchor.t_e));
    put(&mut q, g, "t_det_ns", s_to_ns(at_anchor.t_det));

    let curve = tof::dt_curve(&calibrated, &ion, &electron, &cfg.tof.sweep_v)?;
    tof::write_dt_csv(out.create("dt_curve.csv")?, &curve)?;
    let gap_curve = tof::dt_curve(&geom, &ion, &electron, &cfg.tof.sweep_v)?;
    tof::write_dt_csv(out.create("tof_gap_only.csv")?, &gap_curve)?;
    Ok((q, at_anchor.t_det))
}

/// Seeded ionization-curve measurement, τ fit and its coverage over repeats.
fn ionization_block(cfg: &Config, out: &Outputs) -> Result<Quantities> {
    let mut q = Vec::new();
    let g = "ionization";
    let ic = &cfg.ionization;
    let model = IonizationModel::new(ic.p_inf, ns_to_s(ic.tau_ns))?;
    let fit_grid: Vec<f64> = ic.fit_grid_ns.iter().map(|&t| ns_to_s(t)).collect();
    let plateau_grid: Vec<f64> = ic.plateau_grid_ns.iter().map(|&t| ns_to_s(t)).collect();
    let all_grid: Vec<f64> = fit_grid.iter().chain(&plateau_grid).copied().collect();
    let t_max = ns_to_s(ic.fit_max_ns);
    let opts = FitOptions {
        weighting: ic.weighting,
        ..FitOptions::default()
    };

    let exact = IonizationDataset::expected(HyperfineState::F2, &fit_grid, 1_000_000_000_000, |t| model.probability(t))?;
    let noiseless = ionization::fit_tau(&exact, ic.p_inf, t_max, &opts)?;
    put(&mut q, g, "noiseless_tau_rel_err", (noiseless.tau / model.tau() - 1.0).abs());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let f2 = IonizationDataset::sample(HyperfineState::F2, &all_grid, ic.trials, |t| model.probability(t), &mut rng)?;
    let f1 = IonizationDataset::sample(HyperfineState::F1, &all_grid, ic.trials, |_| Ok(ic.p_f1), &mut rng)?;
    let p_inf = ionization::estimate_p_inf(&f2, t_max)?;
    let fit = ionization::fit_tau(&f2, p_inf.value, t_max, &opts)?;
    let p_f1 = ionization::estimate_constant_probability(&f1)?;
    put_measurement(&mut q, g, "p_inf", p_inf);
    put_measurement(&mut q, g, "tau_ns", Measurement::new(s_to_ns(fit.tau), s_to_ns(fit.std_error)));
    put_measurement(&mut q, g, "p_f1", p_f1);
    let fitted = IonizationModel::new(p_inf.value, fit.tau)?;
    let t_ion = fitted.ionization_time();
    let p_f2 = fitted.probability(t_ion)?;
    put(&mut q, g, "t_ion_ns", s_to_ns(t_ion));
    put(&mut q, g, "p_ion_f2", p_f2);
    put(
        &mut q,
        g,
        "fidelity",
        ionization::readout_fidelity(&FidelityInputs::new(p_f2, p_f1.value)?),
    );

    ionization::write_csv(out.create("ionization_data.csv")?, &[f2.clone(), f1])?;
    let mut w = csv::Writer::from_writer(out.create("ionization_curve.csv")?);
    w.write_record(["t_p_ns", "p_model", "p_fit"])?;
    for k in 0..=400 {
        let t = ns_to_s(5.0 * k as f64);
        w.write_record([
            format!("{:.1}", s_to_ns(t)),
            format!("{:.9}", model.probability(t)?),
            format!("{:.9}", fitted.probability(t)?),
        ])?;
    }
    w.flush().map_err(|e| Error::io("ionization_curve.csv", e))?;

    let band = ns_to_s(ic.coverage_band_ns);
    let runs = ic.coverage_runs.max(1);
    let hits: Vec<bool> = (0..runs as u64)
        .into_par_iter()
        .map(|k| -> Result<bool> {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed.wrapping_add(1 + k));
            let d = IonizationDataset::sample(HyperfineState::F2, &fit_grid, ic.trials, |t| model.probability(t), &mut rng)?;
            let f = ionization::fit_tau(&d, ic.p_inf, t_max, &opts)?;
            Ok((f.tau - model.tau()).abs() <= band)
        })
        .collect::<Result<_>>()?;
    put(&mut q, g, "tau_coverage", hits.iter().filter(|&&h| h).count() as f64 / runs as f64);
    Ok(q)
}

fn analyze_run(mc: &ScenarioConfig, cfg: &Config) -> Result<CoincidenceResult> {
    let signal = generate(mc)?;
    let background = generate_background(mc)?;
    coincidence::analyze(&signal, &background, &cfg.histogram_spec(), &cfg.window())
}

/// Closed-loop check of the coincidence estimators on seeded runs.
fn montecarlo_block(cfg: &Config, out: &Outputs) -> Result<Quantities> {
    let mut q = Vec::new();
    let g = "montecarlo";
    let base = cfg.scenario()?;
    let n = cfg.montecarlo.runs;
    let results: Vec<CoincidenceResult> = (0..n as u64)
        .into_par_iter()
        .map(|k| {
            analyze_run(
                &ScenarioConfig {
                    seed: base.seed.wrapping_add(k),
                    ..base
                },
                cfg,
            )
        })
        .collect::<Result<_>>()?;

    let stats = |f: &dyn Fn(&CoincidenceResult) -> f64| {
        let v: Vec<f64> = results.iter().map(f).collect();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (mean, (var / n as f64).sqrt())
    };
    let (mi, se_i) = stats(&|r| r.efficiencies.eta_ion.value);
    let (me, se_e) = stats(&|r| r.efficiencies.eta_electron.value);
    put(&mut q, g, "mean_eta_ion", mi);
    put(&mut q, g, "mean_eta_electron", me);
    put(&mut q, g, "bias_eta_ion_in_se", (mi - base.eta_ion).abs() / se_i);
    put(&mut q, g, "bias_eta_electron_in_se", (me - base.eta_electron).abs() / se_e);
    let pulls: Vec<f64> = results
        .iter()
        .map(|r| (r.peak.center.value - base.dt) / r.peak.center.sigma)
        .collect();
    put(&mut q, g, "mean_center_pull", pulls.iter().sum::<f64>() / n as f64);
    put(&mut q, g, "max_center_pull", pulls.iter().fold(0.0, |a: f64, p| a.max(p.abs())));
    let fwhm_err = results
        .iter()
        .map(|r| (r.peak.fwhm / base.fwhm - 1.0).abs())
        .fold(0.0, f64::max);
    put(&mut q, g, "max_fwhm_rel_err", fwhm_err);

    let mut w = csv::Writer::from_writer(out.create("mc_runs.csv")?);
    w.write_record(["seed", "eta_ion", "eta_electron", "eta_det", "center_ns", "center_sigma_ns", "fwhm_ns", "n_coincidence"])?;
    for (k, r) in results.iter().enumerate() {
        w.write_record([
            format!("{}", base.seed.wrapping_add(k as u64)),
            format!("{:.9}", r.efficiencies.eta_ion.value),
            format!("{:.9}", r.efficiencies.eta_electron.value),
            format!("{:.9}", r.efficiencies.eta_det.value),
            format!("{:.6}", s_to_ns(r.peak.center.value)),
            format!("{:.6}", s_to_ns(r.peak.center.sigma)),
            format!("{:.6}", s_to_ns(r.peak.fwhm)),
            format!("{}", r.counts.n_coincidence),
        ])?;
    }
    w.flush().map_err(|e| Error::io("mc_runs.csv", e))?;

    // the first run stands in for the measured 60 s calibration
    let r = &results[0];
    coincidence::write_histogram_csv(out.create("dt_histogram.csv")?, &r.histogram)?;
    let g = "calibration";
    put(&mut q, g, "n_ion", r.counts.n_ion);
    put(&mut q, g, "n_background_ion", r.counts.n_background_ion);
    put(&mut q, g, "n_electron", r.counts.n_electron);
    put(&mut q, g, "n_background_electron", r.counts.n_background_electron);
    put(&mut q, g, "n_coincidence", r.counts.n_coincidence);
    put_measurement(&mut q, g, "center_ns", Measurement::new(s_to_ns(r.peak.center.value), s_to_ns(r.peak.center.sigma)));
    put(&mut q, g, "fwhm_ns", s_to_ns(r.peak.fwhm));
    put_measurement(&mut q, g, "eta_ion", r.efficiencies.eta_ion);
    put_measurement(&mut q, g, "eta_electron", r.efficiencies.eta_electron);
    put_measurement(&mut q, g, "eta_det", r.efficiencies.eta_det);
    if let Some(a) = r.efficiencies.accidental_ratio {
        put(&mut q, g, "accidental_ratio_total", a);
    }
    if let Some(a) = r.accidental_ratio_background {
        put(&mut q, g, "accidental_ratio_background", a);
    }
    Ok(q)
}

/// Regenerates the reference run on one worker and on the default pool and
/// compares events and analysis output.
fn determinism_block(cfg: &Config) -> Result<Quantities> {
    let base = cfg.scenario()?;
    let one = ScenarioConfig { workers: 1, ..base };
    let many = ScenarioConfig { workers: 0, ..base };
    let same_events = generate(&one)?.events == generate(&many)?.events;
    let a = serde_json::to_vec(&analyze_run(&one, cfg)?)?;
    let b = serde_json::to_vec(&analyze_run(&many, cfg)?)?;
    Ok(vec![("determinism.identical".into(), f64::from(u8::from(same_events && a == b)))])
}

/// Efficiency against acceleration voltage from seeded calibration runs.
fn efficiency_scan_block(cfg: &Config, out: &Outputs) -> Result<Quantities> {
    let base = cfg.scenario()?;
    let es = &cfg.efficiency_scan;
    let u_ref = cfg.tof.u_acc_v;
    let ion_curve = SaturationCurve::through(base.eta_ion, u_ref, es.ion_half_v, es.ion_width_v)?;
    let e_curve = SaturationCurve::through(base.eta_electron, u_ref, es.electron_half_v, es.electron_width_v)?;
    let geom = tof::calibrate_cem(&cfg.geometry()?, &Fragment::rb87_ion(), &Fragment::electron(), &cfg.anchors())?;
    let timings = tof::dt_curve(&geom, &Fragment::rb87_ion(), &Fragment::electron(), &es.voltages_v)?;
    let rows: Vec<(f64, CoincidenceResult)> = timings
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            let mc = ScenarioConfig {
                eta_ion: ion_curve.at(p.u_acc),
                eta_electron: e_curve.at(p.u_acc),
                dt: p.dt,
                electron_flight: p.t_e,
                seed: base.seed.wrapping_add(10_000 + k as u64),
                ..base
            };
            Ok((p.u_acc, analyze_run(&mc, cfg)?))
        })
        .collect::<Result<_>>()?;

    let mut w = csv::Writer::from_writer(out.create("efficiency_vs_uacc.csv")?);
    w.write_record([
        "U_acc_V",
        "eta_ion",
        "eta_ion_sigma",
        "eta_electron",
        "eta_electron_sigma",
        "eta_det",
        "eta_det_sigma",
        "eta_ion_true",
        "eta_electron_true",
    ])?;
    for (u, r) in &rows {
        let e = &r.efficiencies;
        w.write_record([
            format!("{u}"),
            format!("{:.6}", e.eta_ion.value),
            format!("{:.6}", e.eta_ion.sigma),
            format!("{:.6}", e.eta_electron.value),
            format!("{:.6}", e.eta_electron.sigma),
            format!("{:.6}", e.eta_det.value),
            format!("{:.6}", e.eta_det.sigma),
            format!("{:.6}", ion_curve.at(*u)),
            format!("{:.6}", e_curve.at(*u)),
        ])?;
    }
    w.flush().map_err(|e| Error::io("efficiency_vs_uacc.csv", e))?;
    Ok(Vec::new())
}

fn scanmap_block(cfg: &Config, out: &Outputs) -> Result<Quantities> {
    let mut q = Vec::new();
    let g = "scanmap";
    let s = &cfg.scanmap;
    let model = PlateauModel::with_contour(
        s.eta_max,
        s.threshold,
        mm_to_m(s.contour_mm),
        s.order,
        (mm_to_m(s.center_x_mm), mm_to_m(s.center_y_mm)),
    )?;
    let grid = GridSpec::centered(mm_to_m(s.half_width_mm), mm_to_m(s.step_mm));
    let trials = (s.trials > 0).then_some(s.trials);
    let meta = |gain: f64, z: f64| MapMetadata {
        gain_voltage: gain,
        u_acc: cfg.tof.u_acc_v,
        z,
    };
    let map = scanmap::synth_map(&model, &grid, meta(s.reference_gain_v, 0.0), trials)?;
    let summary = scanmap::summarize(&map, s.threshold)?;
    put(&mut q, g, "diameter_mm", m_to_mm(summary.containment));
    put(&mut q, g, "contour_diameter_mm", m_to_mm(summary.contour));
    put(&mut q, g, "analytic_diameter_mm", m_to_mm(model.contour_diameter(s.threshold).unwrap_or(0.0)));
    put(&mut q, g, "step_mm", s.step_mm);
    put(&mut q, g, "edge_width_mm", m_to_mm(model.edge_width()));
    scanmap::write_map_csv(out.create("area_map.csv")?, &map)?;

    let gain = SaturationCurve::through(s.eta_max, s.reference_gain_v, s.gain_half_v, s.gain_width_v)?;
    let mut w = csv::Writer::from_writer(out.create("line_scans.csv")?);
    w.write_record(["gain_V", "position_mm", "eta", "sigma"])?;
    for &v in &s.gain_voltages_v {
        let m = scanmap::synth_map(&gain.scale(&model, v), &grid, meta(v, 0.0), trials)?;
        for p in scanmap::line_scan(&m, Axis::X, mm_to_m(s.line_offset_mm))? {
            w.write_record([
                format!("{v}"),
                format!("{:.6}", m_to_mm(p.position)),
                format!("{:.9}", p.eta),
                format!("{:.9}", p.sigma),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("line_scans.csv", e))?;

    for &z in &s.z_planes_mm {
        let m = scanmap::synth_map(&model, &grid, meta(s.reference_gain_v, mm_to_m(z)), trials)?;
        put(&mut q, g, &format!("diameter_mm_at_z{z}"), m_to_mm(scanmap::sensitive_diameter(&m, s.threshold)?));
    }
    Ok(q)
}

/// Runs every quantity group for `cfg`, writes artifacts to `out_dir` and
/// scores `claims`. Deterministic for a fixed seed.
pub fn run_with_claims(cfg: &Config, claims: &[ClaimSpec], out_dir: &Path) -> Result<ReproductionReport> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let out = Outputs { dir: out_dir };

    let mut groups: Vec<(&str, Result<Quantities>)> = Vec::new();
    let tof = tof_block(cfg, &out);
    let t_det = tof.as_ref().ok().map(|(_, t)| *t);
    groups.push(("tof", tof.map(|(q, _)| q)));
    groups.push((
        "exact",
        match t_det {
            Some(t) => exact_block(cfg, t),
            None => Err(Error::Calibration("detection time unavailable".into())),
        },
    ));

    type Block<'a> = (&'static str, Box<dyn Fn() -> Result<Quantities> + Sync + 'a>);
    let blocks: Vec<Block> = vec![
        ("ionization", Box::new(|| ionization_block(cfg, &out))),
        ("montecarlo", Box::new(|| montecarlo_block(cfg, &out))),
        ("determinism", Box::new(|| determinism_block(cfg))),
        ("efficiency_scan", Box::new(|| efficiency_scan_block(cfg, &out))),
        ("scanmap", Box::new(|| scanmap_block(cfg, &out))),
    ];
    let results: Vec<(&str, Result<Quantities>)> = blocks.par_iter().map(|(name, f)| (*name, f())).collect();
    groups.extend(results);

    let mut quantities = BTreeMap::new();
    let mut errors = BTreeMap::new();
    for (name, r) in groups {
        match r {
            Ok(q) => quantities.extend(q),
            Err(e) => {
                log::error!("{name}: {e}");
                errors.insert(name.to_string(), e.to_string());
            }
        }
    }
    // the montecarlo group also fills the calibration quantities
    if let Some(e) = errors.get("montecarlo").cloned() {
        errors.insert("calibration".into(), e);
    }

    let records = score(claims, &quantities, &errors);
    let passed = errors.is_empty() && records.iter().all(|r| r.status == ClaimStatus::Pass);
    let mut report = ReproductionReport {
        label: cfg.run.label.clone(),
        seed: cfg.run.seed,
        passed,
        claims: records,
        quantities,
        errors,
        artifacts: Vec::new(),
    };
    let mut artifacts: Vec<String> = std::fs::read_dir(out_dir)
        .map_err(|e| Error::io(out_dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    artifacts.push("report.json".into());
    artifacts.sort();
    report.artifacts = artifacts;

    let path = out_dir.join("report.json");
    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

/// Loads the scenario file and its claims file and runs it.
pub fn run_scenario(config_path: &Path, out_dir: &Path) -> Result<ReproductionReport> {
    let cfg = Config::from_file(config_path)?;
    run_config(&cfg, out_dir)
}

pub fn run_config(cfg: &Config, out_dir: &Path) -> Result<ReproductionReport> {
    let claims = load_claims(&cfg.claims_path())?;
    run_with_claims(cfg, &claims, out_dir)
}

/// Shipped reference scenario.
pub fn reference_scenario_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join("reference.toml")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(expected: f64, tolerance: f64, comparison: Comparison) -> ClaimSpec {
        ClaimSpec {
            id: "x".into(),
            criterion: 1,
            quantity: "g.x".into(),
            expected,
            tolerance,
            relative: false,
            comparison,
            provenance: Provenance::ExactArithmetic,
            anchor: String::new(),
        }
    }

    #[test]
    fn comparisons() {
        assert!(spec(1.0, 0.1, Comparison::Within).holds(1.05));
        assert!(!spec(1.0, 0.1, Comparison::Within).holds(1.2));
        assert!(spec(3.0, 0.0, Comparison::AtMost).holds(2.0));
        assert!(!spec(3.0, 0.0, Comparison::AtMost).holds(3.1));
        assert!(spec(0.95, 0.0, Comparison::AtLeast).holds(0.96));
        let rel = ClaimSpec {
            relative: true,
            ..spec(241.7, 1e-3, Comparison::Within)
        };
        assert!(rel.holds(241.9) && !rel.holds(242.0));
    }

    #[test]
    fn scoring_marks_missing_groups_as_errors() {
        let q = BTreeMap::from([("g.x".to_string(), 1.0)]);
        let mut errors = BTreeMap::new();
        errors.insert("h".to_string(), "boom".to_string());
        let a = spec(1.0, 0.0, Comparison::Within);
        let b = ClaimSpec {
            id: "y".into(),
            quantity: "h.y".into(),
            ..a.clone()
        };
        let r = score(&[a, b], &q, &errors);
        assert_eq!(r[0].status, ClaimStatus::Pass);
        assert_eq!(r[1].status, ClaimStatus::Error);
        assert_eq!(r[1].message.as_deref(), Some("boom"));
    }

    #[test]
    fn claims_file_parsing() {
        assert!(parse_claims("").unwrap().is_empty());
        let one = "[[claim]]\nid = \"a\"\ncriterion = 1\nquantity = \"exact.eta_ion\"\nexpected = 0.926\ntolerance = 5e-4\nprovenance = \"exact-arithmetic\"\nanchor = \"counts\"\n";
        assert_eq!(parse_claims(one).unwrap().len(), 1);
        assert!(parse_claims(&format!("{one}{one}")).is_err());
        assert!(parse_claims("[[claim]]\nid = \"a\"\n").is_err());
    }

    #[test]
    fn shipped_claims_cover_every_criterion_once_per_id() {
        let cfg = Config::from_file(&reference_scenario_path()).unwrap();
        let claims = load_claims(&cfg.claims_path()).unwrap();
        let criteria: std::collections::BTreeSet<u32> = claims.iter().map(|c| c.criterion).collect();
        assert_eq!(criteria, (1..=9).collect());
    }

    #[test]
    fn exact_group_reproduces_counts_arithmetic() {
        let q: BTreeMap<String, f64> = exact_block(&Config::default(), ns_to_s(415.8)).unwrap().into_iter().collect();
        assert!((q["exact.eta_ion"] - 0.9260).abs() < 5e-4);
        assert!((q["exact.eta_electron"] - 0.8752).abs() < 5e-4);
        assert!((q["exact.eta_det"] - 0.9908).abs() < 5e-4);
        assert!((q["exact.t_tot_ns"] - 802.2).abs() < 0.1);
    }
}
