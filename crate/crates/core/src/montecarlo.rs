//! Synthetic detector event streams for the two-CEM coincidence experiment.
//!
//! Ionization pairs are created by a homogeneous Poisson process over the run.
//! Each pair produces an electron hit with probability `eta_electron` and an
//! ion hit with probability `eta_ion`; the ion trails the electron by `dt`
//! plus Gaussian jitter and, for a small fraction of ions, an exponential late
//! tail. Uncorrelated background and dark counts are independent Poisson
//! processes on each channel.
//!
//! Generation is split into a fixed number of time slices. Slice `k` draws
//! from its own ChaCha stream keyed by `(seed, k)`, so the output does not
//! depend on how many worker threads run the slices.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physcore::units::{ns_to_s, s_to_ns};

/// FWHM of a Gaussian in units of its standard deviation.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Ion,
    Electron,
}

impl Channel {
    pub fn as_str(&self) -> &'static str {
        match self {
            Channel::Ion => "ion",
            Channel::Electron => "electron",
        }
    }
}

impl std::str::FromStr for Channel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ion" => Ok(Channel::Ion),
            "electron" => Ok(Channel::Electron),
            other => Err(Error::invalid("channel", format!("unknown channel `{other}`"))),
        }
    }
}

/// Origin of a simulated hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truth {
    Pair(u64),
    Background,
    Dark,
}

impl std::fmt::Display for Truth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Truth::Pair(id) => write!(f, "pair:{id}"),
            Truth::Background => f.write_str("background"),
            Truth::Dark => f.write_str("dark"),
        }
    }
}

impl std::str::FromStr for Truth {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "background" => Ok(Truth::Background),
            "dark" => Ok(Truth::Dark),
            _ => s
                .strip_prefix("pair:")
                .and_then(|id| id.parse().ok())
                .map(Truth::Pair)
                .ok_or_else(|| Error::invalid("truth", format!("unknown truth tag `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Seconds from the start of the run clock.
    pub time: f64,
    pub channel: Channel,
    pub truth: Option<Truth>,
}

/// Whether the excitation laser was on (signal) or off (background) during the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Signal,
    Background,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunWindow {
    pub start: f64,
    pub end: f64,
}

impl RunWindow {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStream {
    pub events: Vec<Event>,
    pub window: RunWindow,
    pub kind: RunKind,
    pub config: Option<ScenarioConfig>,
}

impl EventStream {
    /// Wraps measured hits; events are sorted by time.
    pub fn from_events(mut events: Vec<Event>, window: RunWindow, kind: RunKind) -> Result<Self> {
        if !(window.end >= window.start) {
            return Err(Error::invalid("window", "end precedes start"));
        }
        if let Some(e) = events.iter().find(|e| !window.contains(e.time)) {
            return Err(Error::invalid(
                "timestamp",
                format!("{} s outside run window [{}, {}]", e.time, window.start, window.end),
            ));
        }
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(Self {
            events,
            window,
            kind,
            config: None,
        })
    }

    pub fn duration(&self) -> f64 {
        self.window.duration()
    }

    pub fn times(&self, channel: Channel) -> Vec<f64> {
        self.events
            .iter()
            .filter(|e| e.channel == channel)
            .map(|e| e.time)
            .collect()
    }

    pub fn count(&self, channel: Channel) -> usize {
        self.events.iter().filter(|e| e.channel == channel).count()
    }

    pub fn has_truth(&self) -> bool {
        self.events.iter().any(|e| e.truth.is_some())
    }

    /// Drops truth tags, as for data coming off real hardware.
    pub fn without_truth(&self) -> Self {
        let mut out = self.clone();
        out.events.iter_mut().for_each(|e| e.truth = None);
        out
    }
}

/// All parameters of one synthetic run. Times in seconds, rates in s⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub duration: f64,
    pub rate_pair: f64,
    pub eta_ion: f64,
    pub eta_electron: f64,
    /// Laser-off rates, dark counts included.
    pub rate_background_ion: f64,
    pub rate_background_electron: f64,
    /// Extra dark-count rates on top of the background rates.
    pub rate_dark_ion: f64,
    pub rate_dark_electron: f64,
    /// Electron flight time from ionization to primary hit.
    pub electron_flight: f64,
    /// Mean ion minus electron detection time.
    pub dt: f64,
    /// FWHM of the Gaussian part of the correlation peak.
    pub fwhm: f64,
    /// Share of the jitter variance put on the electron channel.
    pub electron_jitter_share: f64,
    pub tail_fraction: f64,
    pub tail_time: f64,
    pub seed: u64,
    /// 0 picks the rayon default.
    pub workers: usize,
    pub slices: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            duration: 60.0,
            rate_pair: 0.0,
            eta_ion: 1.0,
            eta_electron: 1.0,
            rate_background_ion: 0.0,
            rate_background_electron: 0.0,
            rate_dark_ion: 0.0,
            rate_dark_electron: 0.0,
            electron_flight: ns_to_s(0.95),
            dt: ns_to_s(388.81),
            fwhm: ns_to_s(8.5),
            electron_jitter_share: 0.0,
            tail_fraction: 0.02,
            tail_time: ns_to_s(20.0),
            seed: 0,
            workers: 0,
            slices: 64,
        }
    }
}

/// Singles and coincidence counts a run is tuned to reproduce on average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetCounts {
    pub duration: f64,
    pub n_ion: f64,
    pub n_background_ion: f64,
    pub n_electron: f64,
    pub n_background_electron: f64,
    pub n_coincidence: f64,
}

impl TargetCounts {
    /// The 60 s run at 3.8 kV.
    pub fn reference() -> Self {
        Self {
            duration: 60.0,
            n_ion: 53762.0,
            n_background_ion: 2235.0,
            n_electron: 196547.0,
            n_background_electron: 147845.0,
            n_coincidence: 45099.0,
        }
    }
}

impl ScenarioConfig {
    /// Chooses pair rate, efficiencies and background rates whose expected
    /// counts equal `target`.
    pub fn from_target_counts(target: &TargetCounts) -> Result<Self> {
        let corrected_ion = target.n_ion - target.n_background_ion;
        let corrected_electron = target.n_electron - target.n_background_electron;
        if !(corrected_ion > 0.0 && corrected_electron > 0.0 && target.n_coincidence > 0.0) {
            return Err(Error::invalid("target", "corrected singles and coincidences must be positive"));
        }
        let pairs = corrected_ion * corrected_electron / target.n_coincidence;
        let cfg = Self {
            duration: target.duration,
            rate_pair: pairs / target.duration,
            eta_ion: target.n_coincidence / corrected_electron,
            eta_electron: target.n_coincidence / corrected_ion,
            rate_background_ion: target.n_background_ion / target.duration,
            rate_background_electron: target.n_background_electron / target.duration,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn reference_counts(seed: u64) -> Self {
        Self {
            seed,
            ..Self::from_target_counts(&TargetCounts::reference()).expect("reference counts are consistent")
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("duration", self.duration),
            ("rate_pair", self.rate_pair),
            ("rate_background_ion", self.rate_background_ion),
            ("rate_background_electron", self.rate_background_electron),
            ("rate_dark_ion", self.rate_dark_ion),
            ("rate_dark_electron", self.rate_dark_electron),
            ("electron_flight", self.electron_flight),
            ("tail_time", self.tail_time),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("{v} must be >= 0")));
            }
        }
        let probs = [
            ("eta_ion", self.eta_ion),
            ("eta_electron", self.eta_electron),
            ("electron_jitter_share", self.electron_jitter_share),
            ("tail_fraction", self.tail_fraction),
        ];
        for (name, v) in probs {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(name, format!("{v} must lie in [0, 1]")));
            }
        }
        if !(self.fwhm >= 0.0 && self.fwhm.is_finite()) {
            return Err(Error::invalid("fwhm", format!("{} must be >= 0", self.fwhm)));
        }
        if !self.dt.is_finite() {
            return Err(Error::invalid("dt", "must be finite"));
        }
        if self.slices == 0 {
            return Err(Error::invalid("slices", "must be >= 1"));
        }
        Ok(())
    }

    pub fn expected_pairs(&self) -> f64 {
        self.rate_pair * self.duration
    }
}

struct Slice {
    events: Vec<Event>,
    pairs: u64,
}

fn poisson<R: Rng>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as u64
}

fn uniform_hits<R: Rng>(
    rate: f64,
    t0: f64,
    t1: f64,
    channel: Channel,
    truth: Truth,
    rng: &mut R,
    out: &mut Vec<Event>,
) {
    let n = poisson(rate * (t1 - t0), rng);
    for _ in 0..n {
        out.push(Event {
            time: rng.gen_range(t0..t1),
            channel,
            truth: Some(truth),
        });
    }
}

fn generate_slice(cfg: &ScenarioConfig, kind: RunKind, index: usize) -> Slice {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let stream = match kind {
        RunKind::Signal => index as u64,
        RunKind::Background => (1u64 << 32) | index as u64,
    };
    rng.set_stream(stream);

    let width = cfg.duration / cfg.slices as f64;
    let t0 = index as f64 * width;
    let t1 = if index + 1 == cfg.slices {
        cfg.duration
    } else {
        (index + 1) as f64 * width
    };
    let mut events = Vec::new();
    let mut pairs = 0;

    if kind == RunKind::Signal {
        let sigma = cfg.fwhm / FWHM_PER_SIGMA;
        let sigma_e = sigma * cfg.electron_jitter_share.sqrt();
        let sigma_i = sigma * (1.0 - cfg.electron_jitter_share).sqrt();
        let jitter_e = Normal::new(0.0, sigma_e).expect("finite sigma");
        let jitter_i = Normal::new(0.0, sigma_i).expect("finite sigma");
        let tail = (cfg.tail_time > 0.0).then(|| Exp::new(1.0 / cfg.tail_time).expect("positive rate"));

        pairs = poisson(cfg.rate_pair * (t1 - t0), &mut rng);
        for local in 0..pairs {
            let t = rng.gen_range(t0..t1);
            // fixed draw order per pair keeps streams reproducible
            let hit_e = rng.gen::<f64>() < cfg.eta_electron;
            let hit_i = rng.gen::<f64>() < cfg.eta_ion;
            let de = jitter_e.sample(&mut rng);
            let di = jitter_i.sample(&mut rng);
            let late = rng.gen::<f64>() < cfg.tail_fraction;
            let extra = match (&tail, late) {
                (Some(dist), true) => dist.sample(&mut rng),
                _ => 0.0,
            };
            let te = t + cfg.electron_flight + de;
            let ti = t + cfg.electron_flight + cfg.dt + di + extra;
            if hit_e {
                events.push(Event {
                    time: te,
                    channel: Channel::Electron,
                    truth: Some(Truth::Pair(local)),
                });
            }
            if hit_i {
                events.push(Event {
                    time: ti,
                    channel: Channel::Ion,
                    truth: Some(Truth::Pair(local)),
                });
            }
        }
    }

    uniform_hits(cfg.rate_background_ion, t0, t1, Channel::Ion, Truth::Background, &mut rng, &mut events);
    uniform_hits(
        cfg.rate_background_electron,
        t0,
        t1,
        Channel::Electron,
        Truth::Background,
        &mut rng,
        &mut events,
    );
    uniform_hits(cfg.rate_dark_ion, t0, t1, Channel::Ion, Truth::Dark, &mut rng, &mut events);
    uniform_hits(cfg.rate_dark_electron, t0, t1, Channel::Electron, Truth::Dark, &mut rng, &mut events);

    Slice { events, pairs }
}

fn generate_kind(cfg: &ScenarioConfig, kind: RunKind) -> Result<EventStream> {
    cfg.validate()?;
    let run = || -> Vec<Slice> {
        (0..cfg.slices)
            .into_par_iter()
            .map(|k| generate_slice(cfg, kind, k))
            .collect()
    };
    let slices = if cfg.workers == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::invalid("workers", e.to_string()))?
            .install(run)
    };

    let total: usize = slices.iter().map(|s| s.events.len()).sum();
    let mut events = Vec::with_capacity(total);
    let mut offset = 0u64;
    for s in slices {
        events.extend(s.events.into_iter().map(|mut e| {
            if let Some(Truth::Pair(id)) = e.truth {
                e.truth = Some(Truth::Pair(id + offset));
            }
            e
        }));
        offset += s.pairs;
    }
    let window = RunWindow {
        start: 0.0,
        end: cfg.duration,
    };
    events.retain(|e| window.contains(e.time));
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(EventStream {
        events,
        window,
        kind,
        config: Some(*cfg),
    })
}

/// Generates the signal run (both lasers on).
pub fn generate(cfg: &ScenarioConfig) -> Result<EventStream> {
    generate_kind(cfg, RunKind::Signal)
}

/// Generates the matching laser-off run: same backgrounds, no pairs.
pub fn generate_background(cfg: &ScenarioConfig) -> Result<EventStream> {
    generate_kind(cfg, RunKind::Background)
}

/// Stable time-ordered merge.
///
/// Streams sharing one run window are superposed; streams with disjoint
/// windows are concatenated. Partially overlapping windows are rejected.
pub fn merge_and_sort(streams: &[EventStream]) -> Result<EventStream> {
    let Some(first) = streams.first() else {
        return Err(Error::InsufficientData { needed: 1, found: 0 });
    };
    for (i, a) in streams.iter().enumerate() {
        if a.kind != first.kind {
            return Err(Error::invalid("kind", "cannot merge signal and background runs"));
        }
        for b in &streams[i + 1..] {
            let same = a.window == b.window;
            let disjoint = a.window.end <= b.window.start || b.window.end <= a.window.start;
            if !same && !disjoint {
                return Err(Error::OverlappingRuns {
                    a_start: a.window.start,
                    a_end: a.window.end,
                    b_start: b.window.start,
                    b_end: b.window.end,
                });
            }
        }
    }
    let start = streams.iter().map(|s| s.window.start).fold(f64::INFINITY, f64::min);
    let end = streams.iter().map(|s| s.window.end).fold(f64::NEG_INFINITY, f64::max);
    let mut events: Vec<Event> = streams.iter().flat_map(|s| s.events.iter().copied()).collect();
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    let config = if streams.iter().all(|s| s.config == first.config) {
        first.config
    } else {
        None
    };
    Ok(EventStream {
        events,
        window: RunWindow { start, end },
        kind: first.kind,
        config,
    })
}

/// Writes `timestamp_ns,channel[,truth]`. The truth column is emitted only
/// when the stream carries truth tags.
pub fn write_csv<W: Write>(writer: W, stream: &EventStream) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let truth = stream.has_truth();
    if truth {
        wtr.write_record(["timestamp_ns", "channel", "truth"])?;
    } else {
        wtr.write_record(["timestamp_ns", "channel"])?;
    }
    for e in &stream.events {
        let ts = format!("{}", s_to_ns(e.time));
        if truth {
            let tag = e.truth.map(|t| t.to_string()).unwrap_or_default();
            wtr.write_record([ts.as_str(), e.channel.as_str(), tag.as_str()])?;
        } else {
            wtr.write_record([ts.as_str(), e.channel.as_str()])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Reads an event CSV. The caller supplies the run window and kind, which are
/// not part of the file.
pub fn read_csv<R: Read>(reader: R, window: RunWindow, kind: RunKind) -> Result<EventStream> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let ts_col = col("timestamp_ns").ok_or(Error::Parse {
        line: 1,
        reason: "missing `timestamp_ns` column".into(),
    })?;
    let ch_col = col("channel").ok_or(Error::Parse {
        line: 1,
        reason: "missing `channel` column".into(),
    })?;
    let truth_col = col("truth");
    let mut events = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |c: usize| {
            rec.get(c).ok_or(Error::Parse {
                line,
                reason: "short record".into(),
            })
        };
        let ts: f64 = field(ts_col)?.parse().map_err(|e| Error::Parse {
            line,
            reason: format!("timestamp: {e}"),
        })?;
        let channel = field(ch_col)?.parse()?;
        let truth = match truth_col.and_then(|c| rec.get(c)) {
            Some("") | None => None,
            Some(tag) => Some(tag.parse()?),
        };
        events.push(Event {
            time: ns_to_s(ts),
            channel,
            truth,
        });
    }
    EventStream::from_events(events, window, kind)
}

pub fn read_csv_file(path: &Path, window: RunWindow, kind: RunKind) -> Result<EventStream> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file), window, kind)
}

pub fn write_csv_file(path: &Path, stream: &EventStream) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(std::io::BufWriter::new(file), stream)
}
