//! Closed-loop calibration: simulate a 60 s run and its laser-off run, build
//! the time-difference histogram, fit the peak and recover the efficiencies.

use ionsim::coincidence::{analyze, HistogramSpec, WindowSpec};
use ionsim::montecarlo::{generate, generate_background, Channel, ScenarioConfig};
use ionsim::physcore::units::s_to_ns;

fn main() -> ionsim::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(42);
    let cfg = ScenarioConfig::reference_counts(seed);
    let signal = generate(&cfg)?;
    let background = generate_background(&cfg)?;
    println!(
        "signal: {} ion / {} electron hits; background: {} / {}",
        signal.count(Channel::Ion),
        signal.count(Channel::Electron),
        background.count(Channel::Ion),
        background.count(Channel::Electron)
    );

    let r = analyze(&signal, &background, &HistogramSpec::default(), &WindowSpec::default())?;
    println!(
        "peak: centre {:.3} ± {:.3} ns, FWHM {:.2} ns, reduced chi2 {:.2}",
        s_to_ns(r.peak.center.value),
        s_to_ns(r.peak.center.sigma),
        s_to_ns(r.peak.fwhm),
        r.peak.reduced_chi2
    );
    println!("N_c = {}", r.counts.n_coincidence);
    println!("eta_i = {:.4} (true {:.4})", r.efficiencies.eta_ion, cfg.eta_ion);
    println!("eta_e = {:.4} (true {:.4})", r.efficiencies.eta_electron, cfg.eta_electron);
    println!("eta_det = {:.4}", r.efficiencies.eta_det);
    Ok(())
}
