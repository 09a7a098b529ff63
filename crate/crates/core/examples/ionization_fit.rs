//! Simulated state-selective ionization curves, the time-constant fit and the
//! readout fidelity that follows from it.

use ionsim::ionization::{
    estimate_constant_probability, estimate_p_inf, fit_joint, fit_tau, readout_fidelity, FidelityInputs,
    FitOptions, HyperfineState, IonizationDataset, IonizationModel, REFERENCE_FIT_GRID_NS,
    REFERENCE_PLATEAU_GRID_NS,
};
use ionsim::physcore::units::{ns_to_s, s_to_ns};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ionsim::Result<()> {
    let truth = IonizationModel::new(0.993, ns_to_s(64.4))?;
    let t_ion = truth.ionization_time();
    println!("model: t_ion = {:.1} ns, p(t_ion) = {:.4}", s_to_ns(t_ion), truth.probability(t_ion)?);

    let grid: Vec<f64> = REFERENCE_FIT_GRID_NS
        .iter()
        .chain(&REFERENCE_PLATEAU_GRID_NS)
        .map(|&t| ns_to_s(t))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let bright = IonizationDataset::sample(HyperfineState::F2, &grid, 300, |t| truth.probability(t), &mut rng)?;
    let dark = IonizationDataset::sample(HyperfineState::F1, &grid, 300, |_| Ok(0.0068), &mut rng)?;

    let t_max = ns_to_s(475.0);
    let p_inf = estimate_p_inf(&bright, t_max)?;
    let fit = fit_tau(&bright, p_inf.value, t_max, &FitOptions::default())?;
    println!("plateau p_inf = {:.4}", p_inf);
    println!("tau = {:.2} ± {:.2} ns ({} points, {} iterations)",
        s_to_ns(fit.tau), s_to_ns(fit.std_error), fit.points_used, fit.iterations);

    let joint = fit_joint(&bright, ns_to_s(2000.0), &FitOptions::default())?;
    println!("joint fit: p_inf = {:.4}, tau = {:.2} ns", joint.p_inf, s_to_ns(joint.tau.value));

    let fitted = IonizationModel::new(p_inf.value, fit.tau)?;
    let p_f2 = fitted.probability(fitted.ionization_time())?;
    let p_f1 = estimate_constant_probability(&dark)?;
    let f = readout_fidelity(&FidelityInputs::new(p_f2, p_f1.value)?);
    println!("p(F=2) = {p_f2:.4}, p(F=1) = {:.4}, fidelity = {:.4}", p_f1, f);

    // pulses shorter than the intermediate-state lifetime are refused
    let short = IonizationDataset::expected(HyperfineState::F2, &[ns_to_s(10.0), ns_to_s(50.0), ns_to_s(100.0)], 300, |t| truth.probability(t))?;
    match fit_tau(&short, 0.993, t_max, &FitOptions::default()) {
        Err(e) => println!("short pulses rejected: {e}"),
        Ok(f) => println!("unexpected fit {:?}", f),
    }
    Ok(())
}
