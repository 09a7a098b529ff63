//! Synthetic sensitive-area map, the line scan through its centre and the
//! diameter above the 98.8 % threshold by both extraction rules.

use ionsim::physcore::units::{m_to_mm, mm_to_m};
use ionsim::scanmap::{
    line_scan, summarize, synth_map, Axis, GridSpec, MapMetadata, PlateauModel, SaturationCurve,
};

fn main() -> ionsim::Result<()> {
    let model = PlateauModel::with_contour(0.995, 0.988, mm_to_m(0.84), 8.0, (0.0, mm_to_m(-0.4)))?;
    let grid = GridSpec::centered(mm_to_m(1.2), mm_to_m(0.02));
    let map = synth_map(&model, &grid, MapMetadata::default(), Some(2000))?;

    let d = summarize(&map, 0.988)?;
    println!("centre ({:.3}, {:.3}) mm", m_to_mm(d.center.0), m_to_mm(d.center.1));
    println!("containment diameter {:.3} mm", m_to_mm(d.containment));
    println!("contour diameter     {:.3} mm", m_to_mm(d.contour));
    println!("edge width (90-10 %) {:.3} mm", m_to_mm(model.edge_width()));

    let gain = SaturationCurve::through(0.995, 2800.0, 2300.0, 70.0)?;
    for v in [2400.0, 2600.0, 2800.0, 3200.0] {
        let m = synth_map(&gain.scale(&model, v), &grid, MapMetadata { gain_voltage: v, ..MapMetadata::default() }, None)?;
        let scan = line_scan(&m, Axis::X, mm_to_m(-0.4))?;
        let centre = scan.iter().map(|p| p.eta).fold(0.0, f64::max);
        println!("gain {v:.0} V: plateau {centre:.3}");
    }
    Ok(())
}
