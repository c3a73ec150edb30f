//! Security boundaries: the maximum tolerable excess noise with and without
//! virtual filtering, over amplifying and lossy channels.

use gqkd::boundary::{lin_spaced, log_spaced, scan_boundary, SearchConfig, SearchMode};
use gqkd::ChannelKind;

fn main() {
    // Coarser grids than the defaults keep this demo fast; the shapes are
    // already stable at this resolution.
    let cfg = SearchConfig {
        v_grid: log_spaced(1e-2, 1e2, 16),
        attenuation_grid: lin_spaced(0.2, 1.0, 12),
        amplification_grid: lin_spaced(1.0, 3.0, 12),
        eta: 0.9,
        bisect_tol: 1e-3,
        noise_cap: 50.0,
        refine: true,
    };

    println!("Amplifying channel (eta = 0.9): standard vs virtual attenuation");
    println!("  G     n_max(standard)  n_max(attenuate)  status");
    let rows = scan_boundary(
        ChannelKind::Amplify,
        &[1.5, 2.0, 3.0, 4.0, 6.0, 8.0],
        &cfg,
        &[SearchMode::Standard, SearchMode::Attenuate],
    )
    .unwrap();
    for pair in rows.chunks(2) {
        println!(
            "  {:<5} {:<16.4} {:<17.4} {} / {}",
            pair[0].param, pair[0].n_th_max, pair[1].n_th_max, pair[0].status, pair[1].status
        );
    }
    println!("  (standard rates die around G ~ 5; post-selection keeps a key alive)");
    println!();

    println!("Lossy channel (eta = 0.9): standard vs virtual amplification");
    println!("  T     n_max(standard)  n_max(amplify)");
    let rows = scan_boundary(
        ChannelKind::Loss,
        &[1.0, 0.8, 0.6, 0.4, 0.2],
        &cfg,
        &[SearchMode::Standard, SearchMode::Amplify],
    )
    .unwrap();
    for pair in rows.chunks(2) {
        println!(
            "  {:<5} {:<16.4} {:<17.4}",
            pair[0].param, pair[0].n_th_max, pair[1].n_th_max
        );
    }
}
