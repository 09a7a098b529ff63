//! Runs the shipped reference scenario and prints the claim table.
//! Output goes to the directory given as first argument (default `out`).

use std::path::PathBuf;

use ionsim::report::{reference_scenario_path, run_scenario};

fn main() -> ionsim::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out"));
    let report = run_scenario(&reference_scenario_path(), &out)?;
    for c in &report.claims {
        println!(
            "[{}] {:<22} computed {:>12.6}  reference {}",
            c.criterion,
            c.id,
            c.computed.unwrap_or(f64::NAN),
            c.expected
        );
    }
    println!("{} artifacts in {}", report.artifacts.len(), out.display());
    println!("{}", if report.passed { "all claims pass" } else { "some claims fail" });
    Ok(())
}
