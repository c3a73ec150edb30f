//! # gqkd
//!
//! Key rates and Gaussian post-selection for continuous-variable quantum key
//! distribution with coherent states and heterodyne detection.
//!
//! The crate models the entanglement-based picture of the protocol: a
//! two-mode squeezed vacuum source, one mode sent through a lossy or
//! amplifying Gaussian channel with excess thermal noise, and a heralded
//! noiseless filter `g^n` (amplification `g > 1` or attenuation `g < 1`)
//! applied to the received mode. The filter never has to be implemented
//! physically: because it is immediately followed by heterodyne detection it
//! can be emulated on the measurement record by rescaling outcomes and
//! accepting them with outcome-dependent probabilities (Gaussian
//! post-selection).
//!
//! ## Layers
//!
//! * [`cm`] — covariance-matrix calculus in standard form `(a, b, c)`:
//!   Q-form transform, filter action, symplectic spectra, entropies,
//!   heterodyne conditioning, physicality checks.
//! * [`channel`] — EPR source and one-mode loss/amplifier channels with
//!   excess thermal noise.
//! * [`keyrate`] — mutual information, Holevo bounds and the collective-attack
//!   key rate `K = max(eta I_AB - chi_AE, eta I_AB - chi_BE)`.
//! * [`postselect`] — seeded Monte Carlo emulation of the virtual filter:
//!   heterodyne sampling, acceptance rules, acceptance-ratio theory, the
//!   sublinear-scaling experiment, and empirical covariance estimation.
//! * [`fock`] — truncated Fock-basis oracle: exact filter action, photon-loss
//!   Kraus channel, covariance extraction and Husimi evaluation, used to
//!   verify the Gaussian calculus from first principles.
//! * [`boundary`] — security-boundary searches: optimize the key rate over
//!   modulation and virtual gain, bisect the maximum tolerable excess noise.
//! * [`cli`] — the `gqkd` command-line surface with reproducible CSV/JSON
//!   emission.
//!
//! ## Conventions
//!
//! Quadrature variances of vacuum are 1/2 and covariance matrices are scaled
//! so the vacuum CM is the identity. Heterodyne outcomes are complex
//! amplitudes with vacuum per-component variance 1/2; for a state with CM
//! entry `b`, Bob's outcome variance per component is `V_B = (b + 1)/4`.
//!
//! All randomness flows through counter-based ChaCha8 streams keyed by
//! `(seed, domain, index)` ([`rng`]), so every result is reproducible bit for
//! bit regardless of threading or chunking.

pub mod boundary;
pub mod channel;
pub mod cli;
pub mod cm;
pub mod error;
pub mod fock;
pub mod keyrate;
pub mod postselect;
pub mod rng;

pub use channel::{ChannelKind, ChannelSpec, EprSource};
pub use cm::{entropy_of_mu, FilterSpec, Party, QForm, StandardFormCm, SymplecticSpectrum};
pub use error::{Error, Result};
pub use keyrate::{holevo_ae, holevo_be, key_rate, mutual_information, Direction, KeyRateReport};

/// Crate version, embedded in every serialized report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
