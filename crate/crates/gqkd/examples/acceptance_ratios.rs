//! Acceptance ratios of the post-selection rules: Monte Carlo counts against
//! the closed-form expectations.

use gqkd::postselect::{
    acceptance_ratio_theory, apply_rule, bob_outcome_variance, sample_pairs, PostSelectionRule,
};
use gqkd::{ChannelSpec, EprSource, StandardFormCm};

fn main() {
    let n = 500_000;

    println!("Attenuation on vacuum input: ratio -> nu^2");
    println!("  nu     theory    monte carlo");
    let vacuum = StandardFormCm::vacuum();
    for nu in [0.9, 0.7, 0.5, 0.3] {
        let rule = PostSelectionRule::Attenuate { nu };
        let theory = acceptance_ratio_theory(&rule, 0.5).unwrap();
        let batch = sample_pairs(&vacuum, n, 7).unwrap();
        let accepted = apply_rule(&batch, rule, 11).unwrap();
        println!("  {nu:<5}  {theory:<8.5}  {:<8.5}", accepted.acceptance_ratio);
    }
    println!();

    let cm = ChannelSpec::loss(0.8, 0.0)
        .unwrap()
        .apply(EprSource::from_lambda(0.5).unwrap().cm())
        .unwrap();
    let v_b = bob_outcome_variance(&cm);
    println!("Modulated input after loss (V_B = {v_b:.4}):");
    println!("  rule                                    theory    monte carlo");
    let cutoff = (10.0 * 2.0 * v_b).sqrt();
    for rule in [
        PostSelectionRule::Attenuate { nu: 0.8 },
        PostSelectionRule::Attenuate { nu: 0.6 },
        PostSelectionRule::AmplifyCutoff { gain: 1.1, gamma_max: cutoff },
    ] {
        let theory = acceptance_ratio_theory(&rule, v_b).unwrap();
        let batch = sample_pairs(&cm, n, 13).unwrap();
        let accepted = apply_rule(&batch, rule, 17).unwrap();
        let label = match rule {
            PostSelectionRule::Attenuate { nu } => format!("attenuate nu = {nu}"),
            PostSelectionRule::AmplifyCutoff { gain, gamma_max } => {
                format!("cutoff g = {gain}, gamma_M^2 = {:.2}", gamma_max * gamma_max)
            }
            PostSelectionRule::AmplifyAdaptive { gain } => format!("adaptive g = {gain}"),
        };
        println!("  {label:<38}  {theory:<8.5}  {:<8.5}", accepted.acceptance_ratio);
    }
    println!();

    println!("Adaptive amplification has no closed form; emulation only works");
    println!("below the divergence threshold 2 V_B (1 - g^-2) < 1:");
    for (v_b, g2) in [(0.5, 1.5), (1.0, 1.5), (2.0, 1.5)] {
        let rule = PostSelectionRule::AmplifyAdaptive { gain: (g2 as f64).sqrt() };
        let verdict = match rule.check_convergence(v_b) {
            Ok(()) => "converges".to_string(),
            Err(e) => format!("{e}"),
        };
        println!("  V_B = {v_b}, g^2 = {g2}: {verdict}");
    }
}
