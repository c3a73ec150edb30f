//! The noiseless filter g^n at the covariance-matrix level: the TMSV mapping
//! lambda -> g*lambda, its action on noisy states, and the divergence wall
//! for amplification.

use gqkd::{ChannelSpec, EprSource, FilterSpec, StandardFormCm};

fn epr(lambda: f64) -> StandardFormCm {
    EprSource::from_lambda(lambda).unwrap().cm()
}

fn main() {
    println!("Filtering a two-mode squeezed vacuum maps EPR(l) to EPR(g*l):");
    println!("  lambda  g     filtered (a, b, c)          EPR(g*lambda)");
    for (lambda, g) in [(0.5, 1.2), (0.5, 0.6), (0.3, 2.0), (0.8, 1.1)] {
        let filtered = epr(lambda).apply_filter(FilterSpec::new(g).unwrap()).unwrap();
        let target = epr(g * lambda);
        println!(
            "  {lambda:<6} {g:<5} ({:.6}, {:.6}, {:.6})  ({:.6}, {:.6}, {:.6})",
            filtered.a, filtered.b, filtered.c, target.a, target.b, target.c
        );
    }
    println!();

    println!("Amplifying a noisy state reshapes variances and correlations:");
    let noisy = ChannelSpec::loss(0.7, 0.1).unwrap().apply(epr(0.5)).unwrap();
    println!("  input         : ({:.5}, {:.5}, {:.5})", noisy.a, noisy.b, noisy.c);
    for g in [0.8, 1.1, 1.2, 1.3] {
        match noisy.apply_filter(FilterSpec::new(g).unwrap()) {
            Ok(out) => {
                println!("  g = {g:<4}      : ({:.5}, {:.5}, {:.5})", out.a, out.b, out.c)
            }
            Err(e) => println!("  g = {g:<4}      : {e}"),
        }
    }
    println!();

    println!("The filter has no normalizable output once g*lambda reaches 1:");
    for g in [1.05, 1.1, 1.11, 1.12] {
        let result = epr(0.9).apply_filter(FilterSpec::new(g).unwrap());
        match result {
            Ok(out) => println!("  g = {g:<5} on EPR(0.9): ok, a' = {:.4}", out.a),
            Err(e) => println!("  g = {g:<5} on EPR(0.9): {e}"),
        }
    }
}
