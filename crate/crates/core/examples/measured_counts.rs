//! Efficiencies, accidental rates and overall figures from the measured
//! 60 s singles and coincidence counts.

use ionsim::coincidence::{
    accidental_count, accidental_ratio, accidental_ratio_background, efficiencies, overall, CountSummary, WindowSpec,
};
use ionsim::physcore::units::{ns_to_s, s_to_ns};
use ionsim::Measurement;

fn main() -> ionsim::Result<()> {
    let c = CountSummary::from_counts(53762.0, 2235.0, 196547.0, 147845.0, 45099.0, 60.0, WindowSpec::default());
    println!("corrected singles: ions {}, electrons {}", c.corrected_ion(), c.corrected_electron());

    let e = efficiencies(&c)?;
    println!("eta_i   = {:.4}", e.eta_ion);
    println!("eta_e   = {:.4}", e.eta_electron);
    println!("eta_det = {:.4}", e.eta_det);

    println!("accidentals in window: {:.1}", accidental_count(&c, 60.0));
    println!("accidental/true, total singles:     {:.2e}", accidental_ratio(&c, 60.0)?);
    println!("accidental/true, background rates:  {:.2e}", accidental_ratio_background(&c, 60.0)?);

    let o = overall(
        &e,
        Measurement::new(0.9905, 0.0010),
        Measurement::exact(ns_to_s(386.0)),
        Measurement::exact(ns_to_s(415.8)),
    )?;
    println!("eta = {:.4}, t_tot = {:.1} ns", o.eta, s_to_ns(o.t_tot.value));
    Ok(())
}
