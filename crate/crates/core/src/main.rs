use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ionsim::coincidence::{self, HistogramSpec, WindowSpec};
use ionsim::config::Config;
use ionsim::ionization::{self, FitOptions, HyperfineState, IonizationDataset, IonizationModel};
use ionsim::montecarlo::{self, RunKind, RunWindow};
use ionsim::physcore::units::{m_to_mm, mm_to_m, ns_to_s, s_to_ns};
use ionsim::report;
use ionsim::scanmap::{self, Axis, GridSpec, MapMetadata, PlateauModel};
use ionsim::tof::{self, Fragment};

#[derive(Parser)]
#[command(name = "ionsim", version, about = "Single-atom photoionization detection: simulation and calibration")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file; defaults to the shipped reference scenario.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a signal run and its laser-off run as timestamp CSVs.
    Simulate,
    /// Fit the ionization time constant to a `t_p_ns,trials,ionized,state` CSV.
    Fit {
        /// Measurement file; simulated from the scenario when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Fit only pulse lengths up to this value.
        #[arg(long, default_value_t = 475.0)]
        t_max_ns: f64,
    },
    /// Efficiencies from a signal and a background timestamp CSV.
    Calibrate(CalibrateArgs),
    /// Flight-time model: anchor calibration and Δt over the voltage sweep.
    Tof,
    /// Sensitive-area map, line scan and diameter.
    Scan {
        /// `x_mm,y_mm,eta,sigma` map; synthesized from the scenario when absent.
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        line_offset_mm: Option<f64>,
    },
    /// Full reproduction report; exits non-zero unless every claim passes.
    Report,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    signal: PathBuf,
    #[arg(long)]
    background: PathBuf,
    #[arg(long, default_value_t = 60.0)]
    signal_duration_s: f64,
    #[arg(long, default_value_t = 60.0)]
    background_duration_s: f64,
    #[arg(long, default_value_t = 20.0)]
    window_before_ns: f64,
    #[arg(long, default_value_t = 80.0)]
    window_after_ns: f64,
    #[arg(long, default_value_t = 1.0)]
    bin_ns: f64,
}

fn load_config(common: &Common) -> Result<Config> {
    let path = common.config.clone().unwrap_or_else(report::reference_scenario_path);
    let mut cfg = Config::from_file(&path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    Ok(cfg)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn simulate(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let mc = cfg.scenario()?;
    let signal = montecarlo::generate(&mc)?;
    let background = montecarlo::generate_background(&mc)?;
    montecarlo::write_csv_file(&common.out.join("signal.csv"), &signal)?;
    montecarlo::write_csv_file(&common.out.join("background.csv"), &background)?;
    write_json(
        &common.out.join("simulate.json"),
        &json!({
            "seed": mc.seed,
            "duration_s": mc.duration,
            "expected_pairs": mc.expected_pairs(),
            "signal": {"ion": signal.count(montecarlo::Channel::Ion), "electron": signal.count(montecarlo::Channel::Electron)},
            "background": {"ion": background.count(montecarlo::Channel::Ion), "electron": background.count(montecarlo::Channel::Electron)},
        }),
    )?;
    println!("wrote {} and {} events", signal.events.len(), background.events.len());
    Ok(())
}

fn fit(common: &Common, data: Option<&Path>, t_max_ns: f64) -> Result<()> {
    let cfg = load_config(common)?;
    let sets = match data {
        Some(path) => ionization::read_csv_file(path)?,
        None => {
            use rand::SeedableRng;
            let model = IonizationModel::new(cfg.ionization.p_inf, ns_to_s(cfg.ionization.tau_ns))?;
            let grid: Vec<f64> = cfg
                .ionization
                .fit_grid_ns
                .iter()
                .chain(&cfg.ionization.plateau_grid_ns)
                .map(|&t| ns_to_s(t))
                .collect();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.run.seed);
            let f2 = IonizationDataset::sample(HyperfineState::F2, &grid, cfg.ionization.trials, |t| model.probability(t), &mut rng)?;
            let f1 = IonizationDataset::sample(HyperfineState::F1, &grid, cfg.ionization.trials, |_| Ok(cfg.ionization.p_f1), &mut rng)?;
            ionization::write_csv(std::fs::File::create(common.out.join("ionization.csv"))?, &[f2.clone(), f1.clone()])?;
            vec![f2, f1]
        }
    };
    let t_max = ns_to_s(t_max_ns);
    let bright = sets
        .iter()
        .find(|d| d.state() == HyperfineState::F2)
        .context("no F=2 points in the data")?;
    let p_inf = ionization::estimate_p_inf(bright, t_max)?;
    let opts = FitOptions {
        weighting: cfg.ionization.weighting,
        ..FitOptions::default()
    };
    let tau = ionization::fit_tau(bright, p_inf.value, t_max, &opts)?;
    let model = IonizationModel::new(p_inf.value, tau.tau)?;
    let t_ion = model.ionization_time();
    let p_f2 = model.probability(t_ion)?;
    let mut out = json!({
        "p_inf": p_inf.value, "p_inf_sigma": p_inf.sigma,
        "tau_ns": s_to_ns(tau.tau), "tau_sigma_ns": s_to_ns(tau.std_error),
        "points_used": tau.points_used, "iterations": tau.iterations,
        "t_ion_ns": s_to_ns(t_ion), "p_ion_f2": p_f2,
    });
    if let Some(dark) = sets.iter().find(|d| d.state() == HyperfineState::F1) {
        let p_f1 = ionization::estimate_constant_probability(dark)?;
        out["p_ion_f1"] = json!(p_f1.value);
        out["p_ion_f1_sigma"] = json!(p_f1.sigma);
        out["fidelity"] = json!(ionization::readout_fidelity(&ionization::FidelityInputs::new(p_f2, p_f1.value)?));
    }
    write_json(&common.out.join("fit.json"), &out)?;
    println!("tau = {:.2} ± {:.2} ns", s_to_ns(tau.tau), s_to_ns(tau.std_error));
    Ok(())
}

fn calibrate(common: &Common, a: &CalibrateArgs) -> Result<()> {
    let signal = montecarlo::read_csv_file(
        &a.signal,
        RunWindow {
            start: 0.0,
            end: a.signal_duration_s,
        },
        RunKind::Signal,
    )?;
    let background = montecarlo::read_csv_file(
        &a.background,
        RunWindow {
            start: 0.0,
            end: a.background_duration_s,
        },
        RunKind::Background,
    )?;
    let spec = HistogramSpec {
        bin_width: ns_to_s(a.bin_ns),
        ..HistogramSpec::default()
    };
    let window = WindowSpec {
        before: ns_to_s(a.window_before_ns),
        after: ns_to_s(a.window_after_ns),
    };
    let r = coincidence::analyze(&signal, &background, &spec, &window)?;
    coincidence::write_histogram_csv(std::fs::File::create(common.out.join("histogram.csv"))?, &r.histogram)?;
    let c = &r.counts;
    let e = &r.efficiencies;
    write_json(
        &common.out.join("calibration.json"),
        &json!({
            "peak": {
                "center_ns": s_to_ns(r.peak.center.value), "center_sigma_ns": s_to_ns(r.peak.center.sigma),
                "sigma_ns": s_to_ns(r.peak.sigma.value), "fwhm_ns": s_to_ns(r.peak.fwhm),
                "reduced_chi2": r.peak.reduced_chi2,
            },
            "counts": {
                "n_ion": c.n_ion, "n_electron": c.n_electron,
                "n_background_ion": c.n_background_ion, "n_background_electron": c.n_background_electron,
                "raw_background_ion": c.raw_background_ion, "raw_background_electron": c.raw_background_electron,
                "n_coincidence": c.n_coincidence,
                "window_lo_ns": s_to_ns(c.window.0), "window_hi_ns": s_to_ns(c.window.1),
                "signal_duration_s": c.signal_duration, "background_duration_s": c.background_duration,
            },
            "efficiencies": {
                "eta_ion": e.eta_ion.value, "eta_ion_sigma": e.eta_ion.sigma,
                "eta_electron": e.eta_electron.value, "eta_electron_sigma": e.eta_electron.sigma,
                "eta_det": e.eta_det.value, "eta_det_sigma": e.eta_det.sigma,
                "accidental_ratio": e.accidental_ratio,
                "accidental_ratio_background": r.accidental_ratio_background,
            },
        }),
    )?;
    println!(
        "eta_i = {:.4}, eta_e = {:.4}, eta_det = {:.4}",
        e.eta_ion, e.eta_electron, e.eta_det
    );
    Ok(())
}

fn run_tof(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let (ion, electron) = (Fragment::rb87_ion(), Fragment::electron());
    let geom = tof::calibrate_cem(&cfg.geometry()?, &ion, &electron, &cfg.anchors())?;
    let curve = tof::dt_curve(&geom, &ion, &electron, &cfg.tof.sweep_v)?;
    tof::write_dt_csv(std::fs::File::create(common.out.join("dt_curve.csv"))?, &curve)?;
    let at = tof::timing(&geom, &ion, &electron)?;
    write_json(
        &common.out.join("tof.json"),
        &json!({
            "u_acc_v": at.u_acc,
            "cem_potential_v": geom.ion_cem.potential_drop,
            "cem_length_mm": m_to_mm(geom.ion_cem.length),
            "t_i_ns": s_to_ns(at.t_i), "t_e_ns": s_to_ns(at.t_e),
            "dt_ns": s_to_ns(at.dt), "t_det_ns": s_to_ns(at.t_det),
        }),
    )?;
    println!("t_det = {:.2} ns at {} V", s_to_ns(at.t_det), at.u_acc);
    Ok(())
}

fn scan(common: &Common, map: Option<&Path>, threshold: Option<f64>, offset_mm: Option<f64>) -> Result<()> {
    let cfg = load_config(common)?;
    let s = &cfg.scanmap;
    let threshold = threshold.unwrap_or(s.threshold);
    let map = match map {
        Some(path) => scanmap::read_map_csv_file(path, MapMetadata::default())?,
        None => {
            let model = PlateauModel::with_contour(
                s.eta_max,
                s.threshold,
                mm_to_m(s.contour_mm),
                s.order,
                (mm_to_m(s.center_x_mm), mm_to_m(s.center_y_mm)),
            )?;
            let grid = GridSpec::centered(mm_to_m(s.half_width_mm), mm_to_m(s.step_mm));
            let m = scanmap::synth_map(&model, &grid, MapMetadata::default(), (s.trials > 0).then_some(s.trials))?;
            scanmap::write_map_csv(std::fs::File::create(common.out.join("map.csv"))?, &m)?;
            m
        }
    };
    let offset = mm_to_m(offset_mm.unwrap_or(s.line_offset_mm));
    let line = scanmap::line_scan(&map, Axis::X, offset)?;
    scanmap::write_scan_csv(std::fs::File::create(common.out.join("line_scan.csv"))?, &line)?;
    let d = scanmap::summarize(&map, threshold)?;
    write_json(
        &common.out.join("scan.json"),
        &json!({
            "threshold": threshold,
            "d_containment_mm": m_to_mm(d.containment),
            "d_contour_mm": m_to_mm(d.contour),
            "center_mm": [m_to_mm(d.center.0), m_to_mm(d.center.1)],
            "step_mm": m_to_mm(d.step),
        }),
    )?;
    println!("d = {:.3} mm (contour {:.3} mm)", m_to_mm(d.containment), m_to_mm(d.contour));
    Ok(())
}

fn run_report(common: &Common) -> Result<bool> {
    let cfg = load_config(common)?;
    let r = report::run_config(&cfg, &common.out)?;
    for c in &r.claims {
        let value = c.computed.map_or("-".to_string(), |v| format!("{v:.6}"));
        println!("{:<5} {:<22} {:>14}  expected {}", format!("{:?}", c.status).to_uppercase(), c.id, value, c.expected);
    }
    for (group, e) in &r.errors {
        eprintln!("error in {group}: {e}");
    }
    Ok(r.passed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = std::fs::create_dir_all(&cli.common.out)
        .with_context(|| format!("creating {}", cli.common.out.display()))
        .and_then(|_| match &cli.command {
            Command::Simulate => simulate(&cli.common).map(|_| true),
            Command::Fit { data, t_max_ns } => fit(&cli.common, data.as_deref(), *t_max_ns).map(|_| true),
            Command::Calibrate(a) => calibrate(&cli.common, a).map(|_| true),
            Command::Tof => run_tof(&cli.common).map(|_| true),
            Command::Scan {
                map,
                threshold,
                line_offset_mm,
            } => scan(&cli.common, map.as_deref(), *threshold, *line_offset_mm).map(|_| true),
            Command::Report => run_report(&cli.common),
        });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
