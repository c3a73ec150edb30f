//! The core equivalence: post-selecting and rescaling heterodyne data
//! reproduces, in distribution, the heterodyne data of the virtually
//! filtered state. Moments of the accepted record are compared against the
//! covariance calculus for attenuation and cutoff amplification.

use gqkd::postselect::{apply_rule, empirical_cm, sample_pairs, PostSelectionRule};
use gqkd::{ChannelSpec, EprSource, FilterSpec};

fn main() {
    let n = 400_000;
    let seed = 42;

    // EPR source through a mildly lossy channel; Bob post-selects.
    let cm = ChannelSpec::loss(0.8, 0.0)
        .unwrap()
        .apply(EprSource::from_lambda(0.5).unwrap().cm())
        .unwrap();
    let v_b = (cm.b + 1.0) / 4.0;
    println!("state after channel: ({:.5}, {:.5}, {:.5}), V_B = {v_b:.5}", cm.a, cm.b, cm.c);
    println!("samples per rule: {n}");
    println!();

    let rules = [
        PostSelectionRule::Attenuate { nu: 0.7 },
        PostSelectionRule::Attenuate { nu: 0.9 },
        PostSelectionRule::AmplifyCutoff {
            gain: 1.1,
            gamma_max: (10.0 * 2.0 * v_b).sqrt(),
        },
    ];

    for (i, rule) in rules.iter().enumerate() {
        let batch = sample_pairs(&cm, n, seed + i as u64).unwrap();
        let accepted = apply_rule(&batch, *rule, seed + 100 + i as u64).unwrap();
        let estimate = empirical_cm(&accepted, 100).unwrap();
        let predicted = cm.apply_filter(FilterSpec::new(rule.gain()).unwrap()).unwrap();

        println!("{rule:?}");
        println!("  kept {} of {} ({:.4})", accepted.n_acc, n, accepted.acceptance_ratio);
        println!(
            "  empirical  a = {:.4} +- {:.4}, b = {:.4} +- {:.4}, c = {:.4} +- {:.4}",
            estimate.a, estimate.a_se, estimate.b, estimate.b_se, estimate.c, estimate.c_se
        );
        println!(
            "  filtered CM ({:.4}, {:.4}, {:.4}) -> worst deviation {:.2} SE",
            predicted.a,
            predicted.b,
            predicted.c,
            estimate.deviation_in_se(&predicted)
        );
        println!();
    }
}
