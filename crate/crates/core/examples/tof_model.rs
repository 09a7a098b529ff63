//! Flight times in the uniform gap field, calibration of the in-CEM segment
//! against the 3.8 kV timing anchors and the resulting Δt curve.

use ionsim::physcore::units::s_to_ns;
use ionsim::tof::{calibrate_cem, dt_curve, timing, DetectorGeometry, Fragment, TofAnchors};

fn main() -> ionsim::Result<()> {
    let (ion, electron) = (Fragment::rb87_ion(), Fragment::electron());
    let gap_only = DetectorGeometry::reference();
    let t = timing(&gap_only, &ion, &electron)?;
    println!("gap only at 3.8 kV: t_i = {:.2} ns, t_e = {:.3} ns", s_to_ns(t.t_i), s_to_ns(t.t_e));

    let geom = calibrate_cem(&gap_only, &ion, &electron, &TofAnchors::reference())?;
    println!(
        "in-CEM segment: U = {:.2} V over L = {:.3} mm",
        geom.ion_cem.potential_drop,
        geom.ion_cem.length * 1e3
    );

    let voltages: Vec<f64> = (12..=38).step_by(2).map(|k| 100.0 * k as f64).collect();
    println!("{:>8} {:>10} {:>8} {:>10} {:>10}", "U_acc/V", "t_i/ns", "t_e/ns", "dt/ns", "t_det/ns");
    for p in dt_curve(&geom, &ion, &electron, &voltages)? {
        let flag = if p.within_validity { "" } else { "  (outside model validity)" };
        println!(
            "{:>8.0} {:>10.2} {:>8.3} {:>10.2} {:>10.2}{flag}",
            p.u_acc,
            s_to_ns(p.t_i),
            s_to_ns(p.t_e),
            s_to_ns(p.dt),
            s_to_ns(p.t_det)
        );
    }
    Ok(())
}
