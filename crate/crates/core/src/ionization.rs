//! Two-step photoionization rate model, τ fitting and readout fidelity.
//!
//! For an atom prepared in the ionizable hyperfine state the probability to be
//! ionized by an excitation pulse of length `t_p` is
//!
//! ```text
//! p(t_p) = p_inf * (1 - exp(-t_p / tau)),   tau = 1 / (rho_ee * sigma_2i * phi_2i)
//! ```
//!
//! The estimation follows a two-stage procedure: `p_inf` is taken from the
//! plateau of long pulses ([`estimate_p_inf`]) and is then held fixed while
//! `tau` is fitted to the short pulses ([`fit_tau`]). A joint two-parameter fit
//! is available as [`fit_joint`].

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::Measurement;
use crate::physcore::constants::RB87_5P32_LIFETIME;
use crate::physcore::units::{ns_to_s, s_to_ns};

/// Pulse lengths (ns) used for the τ fit region of the reference scenario.
pub const REFERENCE_FIT_GRID_NS: [f64; 25] = [
    36.0, 40.0, 45.0, 50.0, 55.0, 60.0, 65.0, 70.0, 75.0, 80.0, 90.0, 100.0, 110.0, 120.0, 130.0,
    140.0, 150.0, 175.0, 200.0, 225.0, 250.0, 300.0, 350.0, 400.0, 475.0,
];

/// Pulse lengths (ns) on the plateau, used to estimate `p_inf`.
pub const REFERENCE_PLATEAU_GRID_NS: [f64; 7] = [600.0, 800.0, 1000.0, 1250.0, 1500.0, 1750.0, 2000.0];

/// Hyperfine ground state the atom was prepared in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HyperfineState {
    F1,
    F2,
}

impl std::str::FromStr for HyperfineState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "F1" | "f1" => Ok(Self::F1),
            "F2" | "f2" => Ok(Self::F2),
            other => Err(Error::invalid("state", format!("unknown hyperfine state `{other}`"))),
        }
    }
}

impl std::fmt::Display for HyperfineState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::F1 => "F1",
            Self::F2 => "F2",
        })
    }
}

/// The microscopic parameters that combine into `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateTriple {
    /// Steady-state population of the intermediate level.
    pub rho_ee: f64,
    /// Ionization cross section (m²).
    pub sigma_2i: f64,
    /// Photon flux of the ionizing laser (m⁻² s⁻¹).
    pub phi_2i: f64,
}

impl RateTriple {
    pub fn rate(&self) -> f64 {
        self.rho_ee * self.sigma_2i * self.phi_2i
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IonizationModel {
    p_inf: f64,
    tau: f64,
    triple: Option<RateTriple>,
}

impl IonizationModel {
    pub fn new(p_inf: f64, tau: f64) -> Result<Self> {
        check_probability("p_inf", p_inf)?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::invalid("tau", format!("{tau} must be > 0")));
        }
        Ok(Self {
            p_inf,
            tau,
            triple: None,
        })
    }

    /// Builds the model from ρ_ee, σ_2i and Φ_2i; `tau` is their inverse product.
    pub fn from_rates(p_inf: f64, triple: RateTriple) -> Result<Self> {
        let rate = triple.rate();
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::invalid("rate", format!("rho_ee*sigma*phi = {rate} must be > 0")));
        }
        let mut model = Self::new(p_inf, 1.0 / rate)?;
        model.triple = Some(triple);
        Ok(model)
    }

    pub fn p_inf(&self) -> f64 {
        self.p_inf
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn triple(&self) -> Option<&RateTriple> {
        self.triple.as_ref()
    }

    pub fn probability(&self, t_p: f64) -> Result<f64> {
        if t_p < 0.0 || t_p.is_nan() {
            return Err(Error::NegativePulseLength(t_p));
        }
        Ok(self.p_inf * -(-t_p / self.tau).exp_m1())
    }

    /// Ionization time, six characteristic times.
    pub fn ionization_time(&self) -> f64 {
        6.0 * self.tau
    }
}

pub fn ionization_probability(model: &IonizationModel, t_p: f64) -> Result<f64> {
    model.probability(t_p)
}

pub fn ionization_time(model: &IonizationModel) -> f64 {
    model.ionization_time()
}

fn check_probability(name: &'static str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("{p} is not a probability")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IonizationPoint {
    /// Excitation pulse length (s).
    pub t_p: f64,
    pub trials: u64,
    pub ionized: u64,
}

impl IonizationPoint {
    pub fn fraction(&self) -> f64 {
        self.ionized as f64 / self.trials as f64
    }
}

/// Atom-loss measurements for one prepared state, sorted by pulse length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IonizationDataset {
    state: HyperfineState,
    points: Vec<IonizationPoint>,
}

impl IonizationDataset {
    pub fn new(state: HyperfineState, mut points: Vec<IonizationPoint>) -> Result<Self> {
        for p in &points {
            if p.t_p < 0.0 || p.t_p.is_nan() {
                return Err(Error::NegativePulseLength(p.t_p));
            }
            if p.trials == 0 {
                return Err(Error::invalid("trials", format!("zero trials at t_p={} s", p.t_p)));
            }
            if p.ionized > p.trials {
                return Err(Error::invalid(
                    "ionized",
                    format!("{} ionized out of {} trials", p.ionized, p.trials),
                ));
            }
        }
        points.sort_by(|a, b| a.t_p.total_cmp(&b.t_p));
        Ok(Self { state, points })
    }

    /// Draws binomial atom-loss counts for each pulse length from `probability`.
    pub fn sample<R, F>(
        state: HyperfineState,
        pulse_lengths: &[f64],
        trials: u64,
        mut probability: F,
        rng: &mut R,
    ) -> Result<Self>
    where
        R: Rng + ?Sized,
        F: FnMut(f64) -> Result<f64>,
    {
        let mut points = Vec::with_capacity(pulse_lengths.len());
        for &t_p in pulse_lengths {
            let p = probability(t_p)?;
            check_probability("probability", p)?;
            let ionized = Binomial::new(trials, p)
                .map_err(|e| Error::invalid("probability", e.to_string()))?
                .sample(rng);
            points.push(IonizationPoint {
                t_p,
                trials,
                ionized,
            });
        }
        Self::new(state, points)
    }

    /// Noise-free counts: `ionized` is `probability * trials` rounded.
    pub fn expected<F>(state: HyperfineState, pulse_lengths: &[f64], trials: u64, mut probability: F) -> Result<Self>
    where
        F: FnMut(f64) -> Result<f64>,
    {
        let mut points = Vec::with_capacity(pulse_lengths.len());
        for &t_p in pulse_lengths {
            let p = probability(t_p)?;
            check_probability("probability", p)?;
            points.push(IonizationPoint {
                t_p,
                trials,
                ionized: (p * trials as f64).round() as u64,
            });
        }
        Self::new(state, points)
    }

    pub fn state(&self) -> HyperfineState {
        self.state
    }

    pub fn points(&self) -> &[IonizationPoint] {
        &self.points
    }
}

/// Loss weighting for [`fit_tau`] and [`fit_joint`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Unweighted,
    /// Inverse binomial variance of each observed fraction.
    InverseBinomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub weighting: Weighting,
    pub max_iterations: usize,
    /// Relative step size in τ that counts as converged.
    pub tolerance: f64,
    /// Refuse to fit points shorter than the intermediate-state lifetime.
    pub enforce_validity: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            weighting: Weighting::Unweighted,
            max_iterations: 200,
            tolerance: 1e-12,
            enforce_validity: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauFit {
    pub tau: f64,
    pub std_error: f64,
    pub iterations: usize,
    pub points_used: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointFit {
    pub p_inf: Measurement,
    pub tau: Measurement,
    pub iterations: usize,
    pub points_used: usize,
}

struct FitPoint {
    t: f64,
    y: f64,
    w: f64,
}

fn select_points(data: &IonizationDataset, t_p_max: f64, opts: &FitOptions) -> Result<Vec<FitPoint>> {
    let selected: Vec<&IonizationPoint> = data.points.iter().filter(|p| p.t_p <= t_p_max).collect();
    if selected.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            found: selected.len(),
        });
    }
    if opts.enforce_validity {
        if let Some(p) = selected.iter().find(|p| p.t_p < RB87_5P32_LIFETIME) {
            log::warn!(
                "refusing tau fit: pulse length {:.1} ns is shorter than the intermediate-state lifetime",
                s_to_ns(p.t_p)
            );
            return Err(Error::RateModelInvalid {
                t_p: p.t_p,
                lifetime: RB87_5P32_LIFETIME,
            });
        }
    }
    let first = selected[0].fraction();
    if selected.iter().all(|p| p.fraction() == first) {
        return Err(Error::DegenerateData(format!(
            "all {} observed fractions equal {first}",
            selected.len()
        )));
    }
    Ok(selected
        .into_iter()
        .map(|p| {
            let w = match opts.weighting {
                Weighting::Unweighted => 1.0,
                Weighting::InverseBinomial => {
                    // shrink toward 1/2 so that 0 or trials ionized keeps a finite weight
                    let n = p.trials as f64;
                    let q = (p.ionized as f64 + 0.5) / (n + 1.0);
                    n / (q * (1.0 - q))
                }
            };
            FitPoint {
                t: p.t_p,
                y: p.fraction(),
                w,
            }
        })
        .collect())
}

fn initial_tau(points: &[FitPoint], p_inf: f64, t_p_max: f64) -> f64 {
    let lo = ns_to_s(1.0);
    let hi = t_p_max.max(lo);
    let first = &points[0];
    let guess = -first.t / (1.0 - first.y / p_inf).ln();
    if guess.is_nan() {
        hi
    } else {
        guess.clamp(lo, hi)
    }
}

fn tau_loss(points: &[FitPoint], p_inf: f64, tau: f64) -> f64 {
    points
        .iter()
        .map(|p| {
            let r = p.y - p_inf * -(-p.t / tau).exp_m1();
            p.w * r * r
        })
        .sum()
}

/// Least-squares estimate of τ with `p_inf` held fixed, using points with
/// `t_p <= t_p_max`.
///
/// Damped Gauss–Newton on ln τ. The standard error comes from the curvature of
/// the loss at the minimum; for the unweighted loss it is scaled by the
/// residual variance.
pub fn fit_tau(data: &IonizationDataset, p_inf: f64, t_p_max: f64, opts: &FitOptions) -> Result<TauFit> {
    if !(p_inf > 0.0 && p_inf <= 1.0) {
        return Err(Error::invalid("p_inf", format!("{p_inf} must lie in (0, 1]")));
    }
    let points = select_points(data, t_p_max, opts)?;
    let mut log_tau = initial_tau(&points, p_inf, t_p_max).ln();
    let mut loss = tau_loss(&points, p_inf, log_tau.exp());
    let mut lambda = 1e-3;

    for iteration in 1..=opts.max_iterations {
        let tau = log_tau.exp();
        let (mut grad, mut curv) = (0.0, 0.0);
        for p in &points {
            let e = (-p.t / tau).exp();
            let r = p.y - p_inf * (1.0 - e);
            // d r / d ln(tau)
            let j = p_inf * p.t / tau * e;
            grad += p.w * j * r;
            curv += p.w * j * j;
        }
        if curv <= 0.0 || !curv.is_finite() {
            return Err(Error::DegenerateData("zero sensitivity to tau".into()));
        }
        let mut accepted = false;
        let mut step = 0.0;
        for _ in 0..60 {
            step = -grad / (curv * (1.0 + lambda));
            let trial = log_tau + step;
            let trial_loss = tau_loss(&points, p_inf, trial.exp());
            if trial_loss <= loss {
                log_tau = trial;
                loss = trial_loss;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted || step.abs() < opts.tolerance {
            let tau = log_tau.exp();
            let curvature = points
                .iter()
                .map(|p| {
                    let j = p_inf * p.t / (tau * tau) * (-p.t / tau).exp();
                    p.w * j * j
                })
                .sum::<f64>();
            let variance = match opts.weighting {
                Weighting::Unweighted => loss / (points.len() as f64 - 1.0) / curvature,
                Weighting::InverseBinomial => 1.0 / curvature,
            };
            return Ok(TauFit {
                tau,
                std_error: variance.sqrt(),
                iterations: iteration,
                points_used: points.len(),
                loss,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iterations,
    })
}

/// Joint least-squares fit of (`p_inf`, τ) on points with `t_p <= t_p_max`.
pub fn fit_joint(data: &IonizationDataset, t_p_max: f64, opts: &FitOptions) -> Result<JointFit> {
    let points = select_points(data, t_p_max, opts)?;
    let y_max = points.iter().map(|p| p.y).fold(0.0, f64::max);
    let mut p_inf = y_max.clamp(1e-6, 1.0);
    let mut log_tau = initial_tau(&points, p_inf.max(y_max + 1e-9), t_p_max).ln();
    let mut loss = tau_loss(&points, p_inf, log_tau.exp());
    let mut lambda = 1e-3;

    let normal = |p_inf: f64, log_tau: f64| {
        let tau = log_tau.exp();
        let mut h = [[0.0; 2]; 2];
        let mut g = [0.0; 2];
        for p in &points {
            let e = (-p.t / tau).exp();
            let r = p.y - p_inf * (1.0 - e);
            // model derivatives d f / d(p_inf, ln tau)
            let j = [1.0 - e, -p_inf * p.t / tau * e];
            for a in 0..2 {
                g[a] += p.w * j[a] * r;
                for b in 0..2 {
                    h[a][b] += p.w * j[a] * j[b];
                }
            }
        }
        (h, g)
    };

    for iteration in 1..=opts.max_iterations {
        let (h, g) = normal(p_inf, log_tau);
        let mut accepted = false;
        let mut step = [0.0; 2];
        for _ in 0..60 {
            let a = h[0][0] * (1.0 + lambda);
            let d = h[1][1] * (1.0 + lambda);
            let det = a * d - h[0][1] * h[1][0];
            if det <= 0.0 || !det.is_finite() {
                lambda *= 10.0;
                continue;
            }
            // solve H' * step = g, where residual r = y - model
            step = [(d * g[0] - h[0][1] * g[1]) / det, (a * g[1] - h[1][0] * g[0]) / det];
            let trial_p = p_inf + step[0];
            let trial_t = log_tau + step[1];
            if !(trial_p > 0.0) {
                lambda *= 10.0;
                continue;
            }
            let trial_loss = tau_loss(&points, trial_p, trial_t.exp());
            if trial_loss <= loss {
                p_inf = trial_p;
                log_tau = trial_t;
                loss = trial_loss;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        let small = step[0].abs() < opts.tolerance && step[1].abs() < opts.tolerance;
        if !accepted || small {
            let (h, _) = normal(p_inf, log_tau);
            let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
            if det <= 0.0 {
                return Err(Error::DegenerateData("singular joint-fit curvature".into()));
            }
            let scale = match opts.weighting {
                Weighting::Unweighted => loss / (points.len() as f64 - 2.0).max(1.0),
                Weighting::InverseBinomial => 1.0,
            };
            let var_p = scale * h[1][1] / det;
            let var_log_tau = scale * h[0][0] / det;
            let tau = log_tau.exp();
            return Ok(JointFit {
                p_inf: Measurement::new(p_inf, var_p.sqrt()),
                tau: Measurement::new(tau, tau * var_log_tau.sqrt()),
                iterations: iteration,
                points_used: points.len(),
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iterations,
    })
}

/// Trials-weighted plateau average over points with `t_p > t_p_min`.
pub fn estimate_p_inf(data: &IonizationDataset, t_p_min: f64) -> Result<Measurement> {
    let (ionized, trials) = data
        .points
        .iter()
        .filter(|p| p.t_p > t_p_min)
        .fold((0u64, 0u64), |(k, n), p| (k + p.ionized, n + p.trials));
    if trials == 0 {
        return Err(Error::InsufficientData { needed: 1, found: 0 });
    }
    let p = ionized as f64 / trials as f64;
    Ok(Measurement::new(p, (p * (1.0 - p) / trials as f64).sqrt()))
}

/// Constant ionization probability of the dark state, pooled over all pulse lengths.
pub fn estimate_constant_probability(data: &IonizationDataset) -> Result<Measurement> {
    estimate_p_inf(data, f64::NEG_INFINITY)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityInputs {
    pub p_ion_f2: f64,
    pub p_ion_f1: f64,
}

impl FidelityInputs {
    pub fn new(p_ion_f2: f64, p_ion_f1: f64) -> Result<Self> {
        check_probability("p_ion_f2", p_ion_f2)?;
        check_probability("p_ion_f1", p_ion_f1)?;
        Ok(Self { p_ion_f2, p_ion_f1 })
    }
}

/// Mean probability of identifying the prepared state correctly.
pub fn readout_fidelity(f: &FidelityInputs) -> f64 {
    0.5 * (f.p_ion_f2 + (1.0 - f.p_ion_f1))
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    t_p_ns: f64,
    trials: u64,
    ionized: u64,
    state: String,
}

/// Reads `t_p_ns,trials,ionized,state` rows, one dataset per state present.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<IonizationDataset>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut f1 = Vec::new();
    let mut f2 = Vec::new();
    for row in rdr.deserialize() {
        let row: CsvRow = row?;
        let point = IonizationPoint {
            t_p: ns_to_s(row.t_p_ns),
            trials: row.trials,
            ionized: row.ionized,
        };
        match row.state.parse::<HyperfineState>()? {
            HyperfineState::F1 => f1.push(point),
            HyperfineState::F2 => f2.push(point),
        }
    }
    let mut out = Vec::new();
    if !f1.is_empty() {
        out.push(IonizationDataset::new(HyperfineState::F1, f1)?);
    }
    if !f2.is_empty() {
        out.push(IonizationDataset::new(HyperfineState::F2, f2)?);
    }
    Ok(out)
}

pub fn read_csv_file(path: &Path) -> Result<Vec<IonizationDataset>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

pub fn write_csv<W: Write>(writer: W, datasets: &[IonizationDataset]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for data in datasets {
        for p in &data.points {
            wtr.serialize(CsvRow {
                t_p_ns: s_to_ns(p.t_p),
                trials: p.trials,
                ionized: p.ionized,
                state: data.state.to_string(),
            })?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ns(x: f64) -> f64 {
        ns_to_s(x)
    }

    fn reference() -> IonizationModel {
        IonizationModel::new(0.993, ns(64.4)).unwrap()
    }

    fn noiseless(model: &IonizationModel, grid_ns: &[f64]) -> IonizationDataset {
        let grid: Vec<f64> = grid_ns.iter().map(|&t| ns(t)).collect();
        IonizationDataset::expected(HyperfineState::F2, &grid, 1_000_000_000_000, |t| model.probability(t)).unwrap()
    }

    #[test]
    fn probability_at_zero_is_zero() {
        assert_eq!(reference().probability(0.0).unwrap(), 0.0);
    }

    #[test]
    fn probability_at_six_tau() {
        let m = reference();
        let p = m.probability(ns(386.4)).unwrap();
        assert!((p - 0.9905).abs() < 5e-4, "{p}");
    }

    #[test]
    fn probability_at_one_tau() {
        // 0.993 * (1 - 1/e)
        let p = reference().probability(ns(64.4)).unwrap();
        assert!((p - 0.6277).abs() < 1e-4, "{p}");
    }

    #[test]
    fn negative_pulse_rejected() {
        assert!(matches!(
            reference().probability(-1e-9),
            Err(Error::NegativePulseLength(_))
        ));
    }

    #[test]
    fn ionization_time_is_six_tau() {
        assert!((s_to_ns(reference().ionization_time()) - 386.4).abs() < 1e-9);
        assert_eq!(IonizationModel::new(0.5, 1.0).unwrap().ionization_time(), 6.0);
        assert!((ionization_time(&IonizationModel::new(0.5, ns(100.0)).unwrap()) - ns(600.0)).abs() < 1e-18);
    }

    #[test]
    fn model_from_rates_inverts_product() {
        let triple = RateTriple {
            rho_ee: 0.5,
            sigma_2i: 1.0e-21,
            phi_2i: 3.1e28,
        };
        let m = IonizationModel::from_rates(0.993, triple).unwrap();
        assert!((m.tau() * triple.rate() - 1.0).abs() < 1e-9);
        assert!(IonizationModel::new(1.2, 1.0).is_err());
        assert!(IonizationModel::new(0.5, 0.0).is_err());
    }

    #[test]
    fn fit_recovers_generator_on_noiseless_data() {
        let model = reference();
        let data = noiseless(&model, &REFERENCE_FIT_GRID_NS);
        let fit = fit_tau(&data, 0.993, ns(475.0), &FitOptions::default()).unwrap();
        assert!((fit.tau / model.tau() - 1.0).abs() < 1e-6, "{}", fit.tau);
        assert_eq!(fit.points_used, REFERENCE_FIT_GRID_NS.len());
    }

    #[test]
    fn weighted_fit_recovers_generator_on_noiseless_data() {
        let model = reference();
        let data = noiseless(&model, &REFERENCE_FIT_GRID_NS);
        let opts = FitOptions {
            weighting: Weighting::InverseBinomial,
            ..FitOptions::default()
        };
        let fit = fit_tau(&data, 0.993, ns(475.0), &opts).unwrap();
        assert!((fit.tau / model.tau() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn joint_fit_recovers_both_parameters() {
        let model = reference();
        let mut grid = REFERENCE_FIT_GRID_NS.to_vec();
        grid.extend_from_slice(&REFERENCE_PLATEAU_GRID_NS);
        let data = noiseless(&model, &grid);
        let fit = fit_joint(&data, ns(2000.0), &FitOptions::default()).unwrap();
        assert!((fit.tau.value / model.tau() - 1.0).abs() < 1e-6);
        assert!((fit.p_inf.value - 0.993).abs() < 1e-8);
    }

    #[test]
    fn fit_uses_only_points_up_to_cutoff() {
        let model = reference();
        let mut grid = REFERENCE_FIT_GRID_NS.to_vec();
        grid.extend_from_slice(&REFERENCE_PLATEAU_GRID_NS);
        let data = noiseless(&model, &grid);
        let fit = fit_tau(&data, 0.993, ns(475.0), &FitOptions::default()).unwrap();
        assert_eq!(fit.points_used, 25);
    }

    #[test]
    fn fit_refuses_pulses_shorter_than_lifetime() {
        let model = reference();
        let data = noiseless(&model, &[10.0, 50.0, 100.0, 200.0]);
        let err = fit_tau(&data, 0.993, ns(475.0), &FitOptions::default()).unwrap_err();
        assert!(matches!(err, Error::RateModelInvalid { .. }));
        let relaxed = FitOptions {
            enforce_validity: false,
            ..FitOptions::default()
        };
        assert!(fit_tau(&data, 0.993, ns(475.0), &relaxed).is_ok());
    }

    #[test]
    fn fit_reports_degenerate_and_insufficient_data() {
        let flat = IonizationDataset::new(
            HyperfineState::F2,
            (1..=5)
                .map(|k| IonizationPoint {
                    t_p: ns(50.0 * k as f64),
                    trials: 100,
                    ionized: 40,
                })
                .collect(),
        )
        .unwrap();
        assert!(matches!(
            fit_tau(&flat, 0.993, ns(475.0), &FitOptions::default()),
            Err(Error::DegenerateData(_))
        ));
        let few = noiseless(&reference(), &[50.0, 100.0]);
        assert!(matches!(
            fit_tau(&few, 0.993, ns(475.0), &FitOptions::default()),
            Err(Error::InsufficientData { needed: 3, found: 2 })
        ));
        assert!(fit_tau(&few, 0.0, ns(475.0), &FitOptions::default()).is_err());
    }

    #[test]
    fn fit_reports_non_convergence() {
        // the closed-form start is exact on noiseless data, so use sampled counts
        let model = reference();
        let grid: Vec<f64> = REFERENCE_FIT_GRID_NS.iter().map(|&t| ns(t)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = IonizationDataset::sample(HyperfineState::F2, &grid, 300, |t| model.probability(t), &mut rng).unwrap();
        let opts = FitOptions {
            max_iterations: 1,
            ..FitOptions::default()
        };
        assert!(matches!(
            fit_tau(&data, 0.993, ns(475.0), &opts),
            Err(Error::NonConvergence { iterations: 1 })
        ));
    }

    #[test]
    fn curvature_error_agrees_with_bootstrap() {
        let model = reference();
        let grid: Vec<f64> = REFERENCE_FIT_GRID_NS.iter().map(|&t| ns(t)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = IonizationDataset::sample(HyperfineState::F2, &grid, 300, |t| model.probability(t), &mut rng).unwrap();
        let opts = FitOptions::default();
        let fit = fit_tau(&data, 0.993, ns(475.0), &opts).unwrap();

        // parametric bootstrap around the observed fractions
        let taus: Vec<f64> = (0..400)
            .map(|_| {
                let resampled = IonizationDataset::sample(
                    HyperfineState::F2,
                    &grid,
                    300,
                    |t| {
                        let idx = grid.iter().position(|&g| g == t).unwrap();
                        Ok(data.points()[idx].fraction())
                    },
                    &mut rng,
                )
                .unwrap();
                fit_tau(&resampled, 0.993, ns(475.0), &opts).unwrap().tau
            })
            .collect();
        let mean = taus.iter().sum::<f64>() / taus.len() as f64;
        let sd = (taus.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (taus.len() - 1) as f64).sqrt();
        let ratio = fit.std_error / sd;
        assert!((0.75..1.33).contains(&ratio), "curvature {} vs bootstrap {}", fit.std_error, sd);
    }

    #[test]
    fn p_inf_single_point() {
        let data = IonizationDataset::new(
            HyperfineState::F2,
            vec![IonizationPoint {
                t_p: ns(1000.0),
                trials: 1000,
                ionized: 993,
            }],
        )
        .unwrap();
        let est = estimate_p_inf(&data, ns(475.0)).unwrap();
        assert!((est.value - 0.993).abs() < 1e-12);
        assert!((est.sigma - (0.993f64 * 0.007 / 1000.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn p_inf_is_trials_weighted() {
        let data = IonizationDataset::new(
            HyperfineState::F2,
            vec![
                IonizationPoint {
                    t_p: ns(100.0),
                    trials: 100,
                    ionized: 70,
                },
                IonizationPoint {
                    t_p: ns(800.0),
                    trials: 800,
                    ionized: 792,
                },
                IonizationPoint {
                    t_p: ns(1500.0),
                    trials: 500,
                    ionized: 498,
                },
            ],
        )
        .unwrap();
        let est = estimate_p_inf(&data, ns(475.0)).unwrap();
        // (792 + 498) / (800 + 500)
        assert!((est.value - 0.992_307_692_307_692_3).abs() < 1e-12);
        assert!(estimate_p_inf(&data, ns(5000.0)).is_err());
    }

    #[test]
    fn fidelity_examples() {
        let f = |a, b| readout_fidelity(&FidelityInputs::new(a, b).unwrap());
        assert_eq!(f(1.0, 0.0), 1.0);
        assert_eq!(f(0.5, 0.5), 0.5);
        assert!((f(0.9905, 0.0068) - 0.991_85).abs() < 1e-12);
        assert!(FidelityInputs::new(1.1, 0.0).is_err());
    }

    #[test]
    fn dataset_validation() {
        let bad = IonizationPoint {
            t_p: ns(10.0),
            trials: 10,
            ionized: 11,
        };
        assert!(IonizationDataset::new(HyperfineState::F1, vec![bad]).is_err());
        let neg = IonizationPoint {
            t_p: -1.0,
            trials: 10,
            ionized: 1,
        };
        assert!(IonizationDataset::new(HyperfineState::F1, vec![neg]).is_err());
    }

    #[test]
    fn csv_round_trip_groups_states() {
        let f2 = noiseless(&reference(), &[50.0, 100.0]);
        let f1 = IonizationDataset::new(
            HyperfineState::F1,
            vec![IonizationPoint {
                t_p: ns(100.0),
                trials: 1000,
                ionized: 7,
            }],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &[f2.clone(), f1.clone()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t_p_ns,trials,ionized,state\n"));
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].state(), HyperfineState::F1);
        assert_eq!(back[1].points().len(), 2);
        assert_eq!(back[1].points()[1].ionized, f2.points()[1].ionized);
    }

    proptest! {
        #[test]
        fn probability_monotone_in_pulse_and_rate(
            p_inf in 0.01f64..=1.0,
            tau_ns in 1.0f64..10_000.0,
            t1 in 0.0f64..5000.0,
            dt in 0.0f64..5000.0,
            shrink in 0.1f64..1.0,
        ) {
            let m = IonizationModel::new(p_inf, ns(tau_ns)).unwrap();
            let faster = IonizationModel::new(p_inf, ns(tau_ns * shrink)).unwrap();
            let a = m.probability(ns(t1)).unwrap();
            let b = m.probability(ns(t1 + dt)).unwrap();
            prop_assert!(b >= a);
            prop_assert!(b <= p_inf);
            prop_assert!(faster.probability(ns(t1)).unwrap() >= a);
        }

        #[test]
        fn fit_inverts_noiseless_generation(p_inf in 0.05f64..=1.0, tau_ns in 1.0f64..10_000.0) {
            let model = IonizationModel::new(p_inf, ns(tau_ns)).unwrap();
            // grid spans the rise of this model; the validity guard is about
            // the physical lifetime and is off for synthetic time scales
            let grid: Vec<f64> = (1..=20).map(|k| ns(tau_ns * 0.15 * k as f64)).collect();
            let data = IonizationDataset::expected(HyperfineState::F2, &grid, 1_000_000_000_000, |t| model.probability(t)).unwrap();
            let opts = FitOptions { enforce_validity: false, ..FitOptions::default() };
            let fit = fit_tau(&data, p_inf, grid[grid.len() - 1], &opts).unwrap();
            prop_assert!((fit.tau / model.tau() - 1.0).abs() < 1e-6, "{} vs {}", fit.tau, model.tau());
        }

        #[test]
        fn fidelity_is_affine(p2 in 0.0f64..=1.0, p1 in 0.0f64..=1.0) {
            let a = readout_fidelity(&FidelityInputs::new(p2, p1).unwrap());
            let b = readout_fidelity(&FidelityInputs::new(1.0 - p2, 1.0 - p1).unwrap());
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }
}
