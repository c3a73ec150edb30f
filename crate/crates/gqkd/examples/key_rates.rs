//! Key rates of the coherent-state/heterodyne protocol over lossy and
//! amplifying channels, straight from the covariance calculus.

use gqkd::{key_rate, ChannelSpec, EprSource};

fn main() {
    let eta = 0.9;

    println!("Lossy channel, V = 0.5, n_th = 0, eta = {eta}");
    println!("  T      I_AB     chi_AE   chi_BE   K_direct  K_reverse");
    let source = EprSource::from_variance(0.5).unwrap();
    for t in [1.0, 0.8, 0.6, 0.4, 0.2, 0.1] {
        let cm = ChannelSpec::loss(t, 0.0).unwrap().apply(source.cm()).unwrap();
        let r = key_rate(&cm, eta).unwrap();
        println!(
            "  {t:<5} {:>8.5} {:>8.5} {:>8.5} {:>9.5} {:>9.5}",
            r.i_ab, r.chi_ae, r.chi_be, r.k_direct, r.k_reverse
        );
    }
    println!("  (reverse reconciliation survives arbitrary loss when noiseless)");
    println!();

    println!("Excess thermal noise eats the key (T = 0.6, V = 0.5):");
    println!("  n_th    K");
    for i in 0..=6 {
        let n_th = 0.01 * i as f64;
        let cm = ChannelSpec::loss(0.6, n_th).unwrap().apply(source.cm()).unwrap();
        let r = key_rate(&cm, eta).unwrap();
        println!("  {n_th:<6.2} {:>8.5}", r.k);
    }
    println!();

    println!("Amplifying channel, n_th = 0.05, eta = {eta} (optimum V varies):");
    println!("  G      V_best  K_best");
    for g in [1.5, 2.0, 3.0, 4.0] {
        let channel = ChannelSpec::amplify(g, 0.05).unwrap();
        let (mut best_k, mut best_v) = (f64::NEG_INFINITY, 0.0);
        for i in 0..200 {
            let v = 10f64.powf(-2.0 + 4.0 * i as f64 / 199.0);
            let cm = channel.apply(EprSource::from_variance(v).unwrap().cm()).unwrap();
            let k = key_rate(&cm, eta).unwrap().k;
            if k > best_k {
                best_k = k;
                best_v = v;
            }
        }
        println!("  {g:<5}  {best_v:<7.3} {best_k:>8.5}");
    }
}
