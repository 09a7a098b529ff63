//! Peak intensity and photon flux of the focused ionization beam.

use ionsim::physcore::units::{mw_to_w, nm_to_m, um_to_m};
use ionsim::physcore::GaussianBeam;

fn main() -> ionsim::Result<()> {
    let beam = GaussianBeam::new(nm_to_m(473.0), um_to_m(1.13), mw_to_w(32.8))?;
    println!("peak intensity  {:.4e} W/m^2", beam.peak_intensity());
    println!("photon energy   {:.4e} J", beam.photon_energy());
    println!("photon flux     {:.4e} photons/(m^2 s)", beam.photon_flux());

    // flux scales linearly with power and inversely with the waist area
    for p_mw in [1.0, 10.0, 32.8] {
        let b = GaussianBeam::new(nm_to_m(473.0), um_to_m(1.13), mw_to_w(p_mw))?;
        println!("P = {p_mw:>5.1} mW  ->  {:.3e}", b.photon_flux());
    }
    Ok(())
}
