//! Coincidence analysis: ion–electron time-difference histogram, correlation
//! peak fit, windowed coincidence counting and absolute detector efficiencies.
//!
//! With `N_c` windowed coincidences and background-corrected singles
//! `N'_i = N_i - N_bi`, `N'_e = N_e - N_be`, the ion efficiency is the fraction
//! of pair electrons whose ion was also seen, `eta_i = N_c / N'_e`, and
//! likewise `eta_e = N_c / N'_i`. A pair is detected if either fragment is, so
//! `eta_det = eta_i + eta_e - eta_i * eta_e`.

use std::io::Write;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::measurement::Measurement;
use crate::montecarlo::{Channel, EventStream, RunKind, FWHM_PER_SIGMA};
use crate::physcore::units::{ns_to_s, s_to_ns};

/// How electron hits are matched to ion hits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingRule {
    /// Each electron takes the earliest not-yet-used ion inside the span.
    #[default]
    NearestSubsequent,
    /// Every ion inside the span counts for every electron (start–multi-stop).
    AllPairs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub bin_width: f64,
    /// Lower edge of the accepted ion − electron difference (s).
    pub span_lo: f64,
    /// Upper edge (s).
    pub span_hi: f64,
    pub rule: PairingRule,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self {
            bin_width: ns_to_s(1.0),
            span_lo: 0.0,
            span_hi: ns_to_s(1000.0),
            rule: PairingRule::NearestSubsequent,
        }
    }
}

impl HistogramSpec {
    fn validate(&self) -> Result<()> {
        if !(self.bin_width > 0.0) {
            return Err(Error::invalid("bin_width", format!("{} must be > 0", self.bin_width)));
        }
        if !(self.span_hi > self.span_lo) {
            return Err(Error::invalid("span", "upper edge must exceed lower edge"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeDiffHistogram {
    pub bin_width: f64,
    /// Lower edge of bin 0 (s).
    pub origin: f64,
    pub counts: Vec<f64>,
    pub pairs_considered: u64,
}

impl TimeDiffHistogram {
    pub fn empty(spec: &HistogramSpec) -> Result<Self> {
        spec.validate()?;
        let bins = ((spec.span_hi - spec.span_lo) / spec.bin_width).ceil() as usize;
        Ok(Self {
            bin_width: spec.bin_width,
            origin: spec.span_lo,
            counts: vec![0.0; bins],
            pairs_considered: 0,
        })
    }

    pub fn span(&self) -> (f64, f64) {
        (self.origin, self.origin + self.bin_width * self.counts.len() as f64)
    }

    pub fn bin_lo(&self, k: usize) -> f64 {
        self.origin + self.bin_width * k as f64
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        self.bin_lo(k) + 0.5 * self.bin_width
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn fill(&mut self, dt: f64) {
        let x = (dt - self.origin) / self.bin_width;
        if x >= 0.0 {
            let k = x.floor() as usize;
            if let Some(c) = self.counts.get_mut(k) {
                *c += 1.0;
            } else if dt == self.span().1 {
                // closed upper edge
                *self.counts.last_mut().expect("nonempty histogram") += 1.0;
            }
        }
        self.pairs_considered += 1;
    }

    /// Adds another shard with identical binning.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if self.bin_width != other.bin_width || self.origin != other.origin || self.counts.len() != other.counts.len() {
            return Err(Error::invalid("histogram", "binning differs between shards"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.pairs_considered += other.pairs_considered;
        Ok(())
    }
}

/// Matches electron hits to ion hits with `lo <= t_ion - t_e <= hi`.
/// Both slices must be sorted. Returns the accepted time differences.
pub fn pair_differences(electrons: &[f64], ions: &[f64], lo: f64, hi: f64, rule: PairingRule) -> Vec<f64> {
    let mut out = Vec::new();
    let mut used = vec![false; ions.len()];
    let mut start = 0usize;
    for &te in electrons {
        while start < ions.len() && (ions[start] - te < lo || (rule == PairingRule::NearestSubsequent && used[start])) {
            start += 1;
        }
        let mut j = start;
        while j < ions.len() {
            let dt = ions[j] - te;
            if dt > hi {
                break;
            }
            match rule {
                PairingRule::NearestSubsequent => {
                    if !used[j] {
                        used[j] = true;
                        out.push(dt);
                        break;
                    }
                }
                PairingRule::AllPairs => out.push(dt),
            }
            j += 1;
        }
    }
    out
}

pub fn histogram(signal: &EventStream, spec: &HistogramSpec) -> Result<TimeDiffHistogram> {
    let electrons = signal.times(Channel::Electron);
    let ions = signal.times(Channel::Ion);
    if electrons.is_empty() {
        return Err(Error::EmptyChannel("electron"));
    }
    if ions.is_empty() {
        return Err(Error::EmptyChannel("ion"));
    }
    let mut h = TimeDiffHistogram::empty(spec)?;
    for dt in pair_differences(&electrons, &ions, spec.span_lo, spec.span_hi, spec.rule) {
        h.fill(dt);
    }
    Ok(h)
}

/// Gaussian correlation peak on a flat floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakFit {
    pub center: Measurement,
    pub sigma: Measurement,
    /// Total counts in the Gaussian.
    pub amplitude: Measurement,
    /// Floor counts per bin.
    pub floor: f64,
    pub fwhm: f64,
    pub reduced_chi2: f64,
    pub bins_used: usize,
    pub iterations: usize,
    /// Span of the histogram the fit came from.
    pub span: (f64, f64),
}

pub fn fwhm_from_sigma(sigma: f64) -> f64 {
    FWHM_PER_SIGMA * sigma
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

struct Bin {
    lo: f64,
    hi: f64,
    y: f64,
    w: f64,
}

fn peak_model(bin: &Bin, p: &Vector4<f64>) -> (f64, Vector4<f64>) {
    let (amp, mu, sigma, floor) = (p[0], p[1], p[2], p[3]);
    let zl = (bin.lo - mu) / sigma;
    let zh = (bin.hi - mu) / sigma;
    let frac = normal_cdf(zh) - normal_cdf(zl);
    let (pl, ph) = (normal_pdf(zl), normal_pdf(zh));
    let value = floor + amp * frac;
    let grad = Vector4::new(frac, amp * (pl - ph) / sigma, amp * (pl * zl - ph * zh) / sigma, 1.0);
    (value, grad)
}

fn chi2(bins: &[Bin], p: &Vector4<f64>) -> f64 {
    bins.iter()
        .map(|b| {
            let r = b.y - peak_model(b, p).0;
            b.w * r * r
        })
        .sum()
}

/// Levenberg–Marquardt fit of bin-integrated Gaussian plus floor around the
/// highest bin, with weights `1 / max(counts, 1)`.
///
/// The fit region is ±2.5 FWHM of the initial width estimate. Parameter
/// errors are scaled by the reduced χ².
pub fn fit_peak(h: &TimeDiffHistogram) -> Result<PeakFit> {
    let n = h.counts.len();
    if n < 5 {
        return Err(Error::InsufficientData { needed: 5, found: n });
    }
    let (k_max, &peak) = h
        .counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("nonempty");
    let mut sorted = h.counts.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    if peak < median + 10.0 {
        return Err(Error::NoSignificantPeak {
            peak: peak as u64,
            median,
        });
    }

    let half = median + 0.5 * (peak - median);
    let mut left = k_max;
    while left > 0 && h.counts[left - 1] >= half {
        left -= 1;
    }
    let mut right = k_max;
    while right + 1 < n && h.counts[right + 1] >= half {
        right += 1;
    }
    let width0 = (right - left + 1) as f64 * h.bin_width;
    let sigma0 = (width0 / FWHM_PER_SIGMA).max(0.5 * h.bin_width);
    let half_range = (2.5 * FWHM_PER_SIGMA * sigma0).max(5.0 * h.bin_width);
    let reach = (half_range / h.bin_width).ceil() as usize;
    let first = k_max.saturating_sub(reach);
    let last = (k_max + reach).min(n - 1);
    let bins: Vec<Bin> = (first..=last)
        .map(|k| Bin {
            lo: h.bin_lo(k),
            hi: h.bin_lo(k) + h.bin_width,
            y: h.counts[k],
            w: 1.0 / h.counts[k].max(1.0),
        })
        .collect();
    if bins.len() <= 4 {
        return Err(Error::InsufficientData {
            needed: 5,
            found: bins.len(),
        });
    }

    let region_sum: f64 = bins.iter().map(|b| b.y).sum();
    let mut p = Vector4::new(
        (region_sum - median * bins.len() as f64).max(peak),
        h.bin_center(k_max),
        sigma0,
        median,
    );
    let mut cost = chi2(&bins, &p);
    let mut lambda = 1e-3;
    let max_iterations = 200;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iterations {
        iterations += 1;
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for b in &bins {
            let (m, g) = peak_model(b, &p);
            jtj += b.w * g * g.transpose();
            jtr += b.w * (b.y - m) * g;
        }
        let mut improved = false;
        let mut step_norm = 0.0;
        for _ in 0..40 {
            let mut a = jtj;
            for i in 0..4 {
                a[(i, i)] *= 1.0 + lambda;
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = p + step;
            if !(trial[2] > 0.0 && trial[0] > 0.0) {
                lambda *= 10.0;
                continue;
            }
            let trial_cost = chi2(&bins, &trial);
            if trial_cost <= cost {
                step_norm = (step[1] / p[2]).abs().max((step[2] / p[2]).abs());
                let drop = cost - trial_cost;
                p = trial;
                improved = true;
                lambda = (lambda * 0.1).max(1e-15);
                if drop <= 1e-14 * cost.max(1e-300) || step_norm < 1e-13 {
                    converged = true;
                }
                cost = trial_cost;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // no downhill step left: at the minimum to working precision
            converged = true;
        }
        if converged {
            break;
        }
        let _ = step_norm;
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations: max_iterations,
        });
    }

    let mut jtj = Matrix4::<f64>::zeros();
    for b in &bins {
        let (_, g) = peak_model(b, &p);
        jtj += b.w * g * g.transpose();
    }
    let dof = (bins.len() - 4) as f64;
    let reduced = cost / dof;
    let cov = jtj
        .try_inverse()
        .ok_or_else(|| Error::DegenerateData("singular peak-fit curvature".into()))?
        * reduced;
    let err = |i: usize| cov[(i, i)].max(0.0).sqrt();
    Ok(PeakFit {
        center: Measurement::new(p[1], err(1)),
        sigma: Measurement::new(p[2], err(2)),
        amplitude: Measurement::new(p[0], err(0)),
        floor: p[3],
        fwhm: fwhm_from_sigma(p[2]),
        reduced_chi2: reduced,
        bins_used: bins.len(),
        iterations,
        span: h.span(),
    })
}

/// Coincidence window as offsets from the fitted peak centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub before: f64,
    pub after: f64,
}

impl Default for WindowSpec {
    /// 20 ns before to 80 ns after the peak.
    fn default() -> Self {
        Self {
            before: ns_to_s(20.0),
            after: ns_to_s(80.0),
        }
    }
}

impl WindowSpec {
    pub fn width(&self) -> f64 {
        self.before + self.after
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountSummary {
    pub n_ion: f64,
    pub n_electron: f64,
    /// Background singles scaled to the signal live time.
    pub n_background_ion: f64,
    pub n_background_electron: f64,
    /// Raw counts in the laser-off run.
    pub raw_background_ion: f64,
    pub raw_background_electron: f64,
    pub n_coincidence: f64,
    /// Closed interval of accepted ion − electron differences (s).
    pub window: (f64, f64),
    pub signal_duration: f64,
    pub background_duration: f64,
}

impl CountSummary {
    /// Summary from bare counts with equal signal and background live time.
    pub fn from_counts(
        n_ion: f64,
        n_background_ion: f64,
        n_electron: f64,
        n_background_electron: f64,
        n_coincidence: f64,
        duration: f64,
        window: WindowSpec,
    ) -> Self {
        Self {
            n_ion,
            n_electron,
            n_background_ion,
            n_background_electron,
            raw_background_ion: n_background_ion,
            raw_background_electron: n_background_electron,
            n_coincidence,
            window: (-window.before, window.after),
            signal_duration: duration,
            background_duration: duration,
        }
    }

    pub fn live_time_ratio(&self) -> f64 {
        self.signal_duration / self.background_duration
    }

    pub fn corrected_ion(&self) -> f64 {
        self.n_ion - self.n_background_ion
    }

    pub fn corrected_electron(&self) -> f64 {
        self.n_electron - self.n_background_electron
    }

    pub fn window_width(&self) -> f64 {
        self.window.1 - self.window.0
    }
}

pub fn count_window(
    signal: &EventStream,
    background: &EventStream,
    peak: &PeakFit,
    window: &WindowSpec,
) -> Result<CountSummary> {
    if background.kind != RunKind::Background {
        return Err(Error::NotBackgroundRun);
    }
    if !(window.before >= 0.0 && window.after >= 0.0) {
        return Err(Error::invalid("window", "offsets must be >= 0"));
    }
    let lo = peak.center.value - window.before;
    let hi = peak.center.value + window.after;
    if lo < peak.span.0 || hi > peak.span.1 {
        return Err(Error::WindowOutsideSpan {
            lo,
            hi,
            span_lo: peak.span.0,
            span_hi: peak.span.1,
        });
    }
    if !(background.duration() > 0.0) {
        return Err(Error::invalid("background", "run has zero duration"));
    }
    let electrons = signal.times(Channel::Electron);
    let ions = signal.times(Channel::Ion);
    let n_c = pair_differences(&electrons, &ions, lo, hi, PairingRule::NearestSubsequent).len() as f64;
    let scale = signal.duration() / background.duration();
    let raw_bi = background.count(Channel::Ion) as f64;
    let raw_be = background.count(Channel::Electron) as f64;
    Ok(CountSummary {
        n_ion: ions.len() as f64,
        n_electron: electrons.len() as f64,
        n_background_ion: raw_bi * scale,
        n_background_electron: raw_be * scale,
        raw_background_ion: raw_bi,
        raw_background_electron: raw_be,
        n_coincidence: n_c,
        window: (lo, hi),
        signal_duration: signal.duration(),
        background_duration: background.duration(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyResult {
    pub eta_ion: Measurement,
    pub eta_electron: Measurement,
    pub eta_det: Measurement,
    /// Accidental-to-true ratio from total singles rates, when defined.
    pub accidental_ratio: Option<f64>,
}

/// Probability that at least one of two independent detectors fires.
pub fn combined_efficiency(eta_ion: f64, eta_electron: f64) -> f64 {
    eta_ion + eta_electron - eta_ion * eta_electron
}

/// Background-corrected efficiencies with first-order Poisson errors.
///
/// The raw data split into independent Poisson categories: coincidences,
/// unmatched ion singles, unmatched electron singles and the two background
/// counts. Errors are propagated over those five.
pub fn efficiencies(c: &CountSummary) -> Result<EfficiencyResult> {
    let ci = c.corrected_ion();
    let ce = c.corrected_electron();
    let nc = c.n_coincidence;
    if !(ci > 0.0 && ce > 0.0) || ci < nc || ce < nc || nc < 0.0 {
        return Err(Error::CalibrationInvalid {
            corrected_ion: ci,
            corrected_electron: ce,
            coincidences: nc,
        });
    }
    let eta_i = nc / ce;
    let eta_e = nc / ci;
    let eta_det = combined_efficiency(eta_i, eta_e);

    let s = c.live_time_ratio();
    let unmatched_e = c.n_electron - nc;
    let unmatched_i = c.n_ion - nc;
    // gradients w.r.t. [N_c, U_e, U_i, B_e, B_i]
    let d_eta_i = [(ce - nc) / (ce * ce), -nc / (ce * ce), 0.0, s * nc / (ce * ce), 0.0];
    let d_eta_e = [(ci - nc) / (ci * ci), 0.0, -nc / (ci * ci), 0.0, s * nc / (ci * ci)];
    let variances = [nc, unmatched_e, unmatched_i, c.raw_background_electron, c.raw_background_ion];
    let propagate = |grad: &[f64; 5]| -> f64 {
        grad.iter()
            .zip(&variances)
            .map(|(g, v)| g * g * v)
            .sum::<f64>()
            .sqrt()
    };
    let d_det: [f64; 5] = std::array::from_fn(|k| (1.0 - eta_e) * d_eta_i[k] + (1.0 - eta_i) * d_eta_e[k]);

    Ok(EfficiencyResult {
        eta_ion: Measurement::new(eta_i, propagate(&d_eta_i)),
        eta_electron: Measurement::new(eta_e, propagate(&d_eta_e)),
        eta_det: Measurement::new(eta_det, propagate(&d_det)),
        accidental_ratio: accidental_ratio(c, c.signal_duration).ok(),
    })
}

fn ratio_from_rates(rate_a: f64, rate_b: f64, width: f64, duration: f64, coincidences: f64) -> Result<f64> {
    if !(duration > 0.0) {
        return Err(Error::invalid("duration", format!("{duration} must be > 0")));
    }
    let accidentals = rate_a * rate_b * width * duration;
    if accidentals == 0.0 {
        return Ok(0.0);
    }
    if coincidences <= accidentals {
        return Err(Error::NoTrueCoincidences {
            coincidences,
            accidentals,
        });
    }
    Ok(accidentals / (coincidences - accidentals))
}

/// Expected accidental coincidences from the total singles rates.
pub fn accidental_count(c: &CountSummary, duration: f64) -> f64 {
    (c.n_ion / duration) * (c.n_electron / duration) * c.window_width() * duration
}

/// Accidental-to-true ratio using total singles rates; an upper bound.
pub fn accidental_ratio(c: &CountSummary, duration: f64) -> Result<f64> {
    ratio_from_rates(
        c.n_ion / duration,
        c.n_electron / duration,
        c.window_width(),
        duration,
        c.n_coincidence,
    )
}

/// Accidental-to-true ratio using only the uncorrelated background rates.
pub fn accidental_ratio_background(c: &CountSummary, duration: f64) -> Result<f64> {
    ratio_from_rates(
        c.n_background_ion / duration,
        c.n_background_electron / duration,
        c.window_width(),
        duration,
        c.n_coincidence,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverallResult {
    pub eta: Measurement,
    pub t_tot: Measurement,
}

/// Combines ionization and detection: `eta = p_ion * eta_det`,
/// `t_tot = t_ion + t_det`, with independent errors.
pub fn overall(e: &EfficiencyResult, p_ion_f2: Measurement, t_ion: Measurement, t_det: Measurement) -> Result<OverallResult> {
    if !(0.0..=1.0).contains(&p_ion_f2.value) {
        return Err(Error::invalid("p_ion_f2", format!("{} is not a probability", p_ion_f2.value)));
    }
    let eta = p_ion_f2.value * e.eta_det.value;
    let eta_sigma = ((e.eta_det.value * p_ion_f2.sigma).powi(2) + (p_ion_f2.value * e.eta_det.sigma).powi(2)).sqrt();
    Ok(OverallResult {
        eta: Measurement::new(eta, eta_sigma),
        t_tot: Measurement::new(t_ion.value + t_det.value, t_ion.sigma.hypot(t_det.sigma)),
    })
}

/// Histogram, peak, windowed counts and efficiencies of one signal run
/// against its laser-off run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceResult {
    pub histogram: TimeDiffHistogram,
    pub peak: PeakFit,
    pub counts: CountSummary,
    pub efficiencies: EfficiencyResult,
    pub accidental_ratio_background: Option<f64>,
}

pub fn analyze(
    signal: &EventStream,
    background: &EventStream,
    spec: &HistogramSpec,
    window: &WindowSpec,
) -> Result<CoincidenceResult> {
    let histogram = histogram(signal, spec)?;
    let peak = fit_peak(&histogram)?;
    let counts = count_window(signal, background, &peak, window)?;
    let efficiencies = efficiencies(&counts)?;
    Ok(CoincidenceResult {
        accidental_ratio_background: accidental_ratio_background(&counts, counts.signal_duration).ok(),
        histogram,
        peak,
        counts,
        efficiencies,
    })
}

pub fn write_histogram_csv<W: Write>(writer: W, h: &TimeDiffHistogram) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["bin_center_ns", "counts"])?;
    for (k, c) in h.counts.iter().enumerate() {
        wtr.write_record([format!("{}", s_to_ns(h.bin_center(k))), format!("{c}")])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montecarlo::{Event, RunWindow, Truth};

    fn ns(x: f64) -> f64 {
        ns_to_s(x)
    }

    fn stream(hits: &[(f64, Channel)], kind: RunKind) -> EventStream {
        EventStream::from_events(
            hits.iter()
                .map(|&(t, channel)| Event {
                    time: t,
                    channel,
                    truth: None,
                })
                .collect(),
            RunWindow { start: 0.0, end: 1.0 },
            kind,
        )
        .unwrap()
    }

    fn measured_counts() -> CountSummary {
        CountSummary::from_counts(53762.0, 2235.0, 196547.0, 147845.0, 45099.0, 60.0, WindowSpec::default())
    }

    /// Histogram filled with exact bin integrals of a Gaussian.
    fn analytic_histogram(amp: f64, mu: f64, sigma: f64, floor: f64, spec: &HistogramSpec) -> TimeDiffHistogram {
        let mut h = TimeDiffHistogram::empty(spec).unwrap();
        for k in 0..h.counts.len() {
            let lo = h.bin_lo(k);
            let hi = lo + h.bin_width;
            h.counts[k] = floor + amp * (normal_cdf((hi - mu) / sigma) - normal_cdf((lo - mu) / sigma));
        }
        h
    }

    #[test]
    fn single_pair_lands_in_its_bin() {
        let s = stream(&[(ns(1000.0), Channel::Electron), (ns(1388.81), Channel::Ion)], RunKind::Signal);
        let h = histogram(&s, &HistogramSpec::default()).unwrap();
        assert_eq!(h.total(), 1.0);
        let k = h.counts.iter().position(|&c| c == 1.0).unwrap();
        assert!((s_to_ns(h.bin_lo(k)) - 388.0).abs() < 1e-9);
    }

    #[test]
    fn empty_channel_is_an_error() {
        let s = stream(&[(ns(1.0), Channel::Electron)], RunKind::Signal);
        assert!(matches!(histogram(&s, &HistogramSpec::default()), Err(Error::EmptyChannel("ion"))));
    }

    #[test]
    fn nearest_subsequent_uses_each_ion_once() {
        let electrons = [0.0, ns(1.0)];
        let ions = [ns(10.0)];
        let nearest = pair_differences(&electrons, &ions, 0.0, ns(100.0), PairingRule::NearestSubsequent);
        assert_eq!(nearest.len(), 1);
        assert!((nearest[0] - ns(10.0)).abs() < 1e-18);
        let all = pair_differences(&electrons, &ions, 0.0, ns(100.0), PairingRule::AllPairs);
        assert_eq!(all.len(), 2);
    }

    #[test]
    fn fit_recovers_exact_gaussian() {
        let spec = HistogramSpec::default();
        let h = analytic_histogram(1.0e6, ns(388.81), ns(3.609), 2.0, &spec);
        let fit = fit_peak(&h).unwrap();
        assert!((fit.center.value / ns(388.81) - 1.0).abs() < 1e-9, "{:?}", fit.center);
        assert!((fit.sigma.value / ns(3.609) - 1.0).abs() < 1e-9, "{:?}", fit.sigma);
        assert!((fit.amplitude.value / 1.0e6 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fwhm_of_sigma() {
        assert!((s_to_ns(fwhm_from_sigma(ns(3.609))) - 8.5).abs() < 2e-3);
    }

    #[test]
    fn flat_histogram_has_no_peak() {
        let spec = HistogramSpec::default();
        let mut h = TimeDiffHistogram::empty(&spec).unwrap();
        h.counts.iter_mut().for_each(|c| *c = 5.0);
        h.counts[400] = 14.0;
        assert!(matches!(fit_peak(&h), Err(Error::NoSignificantPeak { .. })));
    }

    #[test]
    fn window_boundaries_are_closed() {
        let peak = PeakFit {
            center: Measurement::exact(ns(388.81)),
            sigma: Measurement::exact(ns(3.6)),
            amplitude: Measurement::exact(1.0),
            floor: 0.0,
            fwhm: ns(8.5),
            reduced_chi2: 1.0,
            bins_used: 10,
            iterations: 1,
            span: (0.0, ns(1000.0)),
        };
        let bg = stream(&[], RunKind::Background);
        let count = |offset_ns: f64| {
            let s = stream(
                &[(ns(100.0), Channel::Electron), (ns(100.0 + 388.81 + offset_ns), Channel::Ion)],
                RunKind::Signal,
            );
            count_window(&s, &bg, &peak, &WindowSpec::default()).unwrap().n_coincidence
        };
        assert_eq!(count(0.0), 1.0);
        assert_eq!(count(79.0), 1.0);
        assert_eq!(count(81.0), 0.0);
        assert_eq!(count(-19.0), 1.0);
        assert_eq!(count(-21.0), 0.0);

        // background run must be laser-off
        let s = stream(&[(ns(100.0), Channel::Electron)], RunKind::Signal);
        assert!(matches!(
            count_window(&s, &s, &peak, &WindowSpec::default()),
            Err(Error::NotBackgroundRun)
        ));
        let narrow = PeakFit {
            span: (ns(380.0), ns(420.0)),
            ..peak
        };
        assert!(matches!(
            count_window(&s, &bg, &narrow, &WindowSpec::default()),
            Err(Error::WindowOutsideSpan { .. })
        ));
    }

    #[test]
    fn background_scaled_by_live_time() {
        let peak = PeakFit {
            center: Measurement::exact(ns(388.81)),
            sigma: Measurement::exact(ns(3.6)),
            amplitude: Measurement::exact(1.0),
            floor: 0.0,
            fwhm: ns(8.5),
            reduced_chi2: 1.0,
            bins_used: 10,
            iterations: 1,
            span: (0.0, ns(1000.0)),
        };
        let s = stream(&[(0.1, Channel::Electron), (0.2, Channel::Ion)], RunKind::Signal);
        let bg = EventStream::from_events(
            vec![
                Event {
                    time: 0.5,
                    channel: Channel::Ion,
                    truth: Some(Truth::Background),
                },
                Event {
                    time: 1.5,
                    channel: Channel::Electron,
                    truth: Some(Truth::Background),
                },
            ],
            RunWindow { start: 0.0, end: 2.0 },
            RunKind::Background,
        )
        .unwrap();
        let c = count_window(&s, &bg, &peak, &WindowSpec::default()).unwrap();
        assert_eq!(c.live_time_ratio(), 0.5);
        assert_eq!(c.n_background_ion, 0.5);
        assert_eq!(c.raw_background_electron, 1.0);
    }

    #[test]
    fn measured_counts_give_reference_efficiencies() {
        let e = efficiencies(&measured_counts()).unwrap();
        // 45099 / 48702, 45099 / 51527
        assert!((e.eta_ion.value - 0.926_019_465).abs() < 1e-8);
        assert!((e.eta_electron.value - 0.875_249_869).abs() < 1e-8);
        assert!((e.eta_det.value - 0.990_770_919).abs() < 1e-8);
        // statistical errors to three decimals
        assert!((e.eta_ion.sigma * 1e3).round() <= 10.0, "{}", e.eta_ion.sigma);
        assert!((e.eta_electron.sigma * 1e3).round() <= 2.0, "{}", e.eta_electron.sigma);
        assert!((e.eta_det.sigma * 1e3).round() <= 2.0, "{}", e.eta_det.sigma);
    }

    #[test]
    fn efficiency_error_matches_finite_differences() {
        // central differences on the five independent categories
        let c = measured_counts();
        let base = efficiencies(&c).unwrap();
        let cats = [45099.0, 196547.0 - 45099.0, 53762.0 - 45099.0, 147845.0, 2235.0];
        let eval = |x: [f64; 5]| {
            let cs = CountSummary::from_counts(x[2] + x[0], x[4], x[1] + x[0], x[3], x[0], 60.0, WindowSpec::default());
            let e = efficiencies(&cs).unwrap();
            [e.eta_ion.value, e.eta_electron.value, e.eta_det.value]
        };
        let mut var = [0.0; 3];
        for k in 0..5 {
            let h = 1e-3 * cats[k];
            let mut up = cats;
            let mut dn = cats;
            up[k] += h;
            dn[k] -= h;
            let (a, b) = (eval(up), eval(dn));
            for q in 0..3 {
                let d = (a[q] - b[q]) / (2.0 * h);
                var[q] += d * d * cats[k];
            }
        }
        assert!((var[0].sqrt() / base.eta_ion.sigma - 1.0).abs() < 1e-5);
        assert!((var[1].sqrt() / base.eta_electron.sigma - 1.0).abs() < 1e-5);
        assert!((var[2].sqrt() / base.eta_det.sigma - 1.0).abs() < 1e-5);
    }

    #[test]
    fn lossless_and_inclusion_exclusion() {
        let c = CountSummary::from_counts(1000.0, 0.0, 1000.0, 0.0, 1000.0, 1.0, WindowSpec::default());
        let e = efficiencies(&c).unwrap();
        assert_eq!((e.eta_ion.value, e.eta_electron.value, e.eta_det.value), (1.0, 1.0, 1.0));
        assert_eq!(combined_efficiency(0.5, 0.5), 0.75);
    }

    #[test]
    fn nonpositive_corrected_singles_rejected() {
        let c = CountSummary::from_counts(100.0, 200.0, 1000.0, 0.0, 10.0, 1.0, WindowSpec::default());
        assert!(matches!(efficiencies(&c), Err(Error::CalibrationInvalid { .. })));
    }

    #[test]
    fn accidental_estimates_on_measured_counts() {
        let c = measured_counts();
        // (53762/60)(196547/60) * 100e-9 * 60
        let n_acc = accidental_count(&c, 60.0);
        assert!((n_acc - 17.611).abs() < 0.01, "{n_acc}");
        let r = accidental_ratio(&c, 60.0).unwrap();
        assert!((r - 17.611 / (45099.0 - 17.611)).abs() < 1e-6);
        assert!(r > 1e-4 && r < 4e-4 + 1e-5);
        let rb = accidental_ratio_background(&c, 60.0).unwrap();
        assert!(rb < 1e-4, "{rb}");
    }

    #[test]
    fn accidental_edge_cases() {
        let zero = CountSummary::from_counts(0.0, 0.0, 100.0, 0.0, 0.0, 1.0, WindowSpec::default());
        assert_eq!(accidental_ratio(&zero, 1.0).unwrap(), 0.0);
        let base = CountSummary::from_counts(1e4, 0.0, 1e4, 0.0, 1e3, 1.0, WindowSpec::default());
        let doubled = CountSummary::from_counts(2e4, 0.0, 2e4, 0.0, 1e3, 1.0, WindowSpec::default());
        assert!((accidental_count(&doubled, 1.0) / accidental_count(&base, 1.0) - 4.0).abs() < 1e-12);
        let swamped = CountSummary::from_counts(1e6, 0.0, 1e6, 0.0, 10.0, 1.0, WindowSpec::default());
        assert!(matches!(accidental_ratio(&swamped, 1.0), Err(Error::NoTrueCoincidences { .. })));
        assert!(accidental_ratio(&base, 0.0).is_err());
    }

    #[test]
    fn overall_figures() {
        let e = EfficiencyResult {
            eta_ion: Measurement::exact(0.926),
            eta_electron: Measurement::exact(0.875),
            eta_det: Measurement::exact(0.99077),
            accidental_ratio: None,
        };
        let o = overall(
            &e,
            Measurement::exact(0.99054),
            Measurement::exact(ns(386.0)),
            Measurement::exact(ns(415.8)),
        )
        .unwrap();
        assert!((o.eta.value - 0.981_397).abs() < 1e-5);
        assert!((s_to_ns(o.t_tot.value) - 801.8).abs() < 1e-9);
        let one = EfficiencyResult {
            eta_det: Measurement::exact(1.0),
            ..e
        };
        assert_eq!(overall(&one, Measurement::exact(1.0), Measurement::exact(0.0), Measurement::exact(0.0)).unwrap().eta.value, 1.0);
        assert_eq!(overall(&e, Measurement::exact(0.0), Measurement::exact(0.0), Measurement::exact(0.0)).unwrap().eta.value, 0.0);
    }

    #[test]
    fn histogram_shards_merge() {
        let spec = HistogramSpec::default();
        let mut a = analytic_histogram(100.0, ns(300.0), ns(5.0), 0.0, &spec);
        let b = analytic_histogram(50.0, ns(300.0), ns(5.0), 1.0, &spec);
        let total = a.total() + b.total();
        a.merge(&b).unwrap();
        assert!((a.total() - total).abs() < 1e-9);
        let other = TimeDiffHistogram::empty(&HistogramSpec {
            bin_width: ns(2.0),
            ..spec
        })
        .unwrap();
        assert!(a.merge(&other).is_err());
    }

    #[test]
    fn efficiency_invariants_hold() {
        for (ni, ne, nc) in [(1000.0, 900.0, 800.0), (5e4, 2e5, 4e4), (10.0, 10.0, 1.0)] {
            let c = CountSummary::from_counts(ni, 0.0, ne, 0.0, nc, 1.0, WindowSpec::default());
            let e = efficiencies(&c).unwrap();
            let (i, el, d) = (e.eta_ion.value, e.eta_electron.value, e.eta_det.value);
            assert!(d >= i.max(el) && d <= i + el);
        }
    }
}
