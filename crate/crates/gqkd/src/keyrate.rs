//! Secret key rates against collective attacks for double-heterodyne
//! protocols, from the two-mode covariance matrix alone.
//!
//! With both parties heterodyning, the mutual information is
//! `I_AB = log2[(a+1)(b+1) / ((a+1)(b+1) - c^2)]` and the Holevo bounds
//! follow from the purification argument: Eve's entropy equals the entropy of
//! the joint state, so `chi_AE = S_AB - S_B` and `chi_BE = S_AB - S_A`, with
//! the conditional entropies taken after an ideal heterodyne measurement of
//! the reference side.

use serde::{Deserialize, Serialize};

use crate::cm::{entropy_of_mu, Party, StandardFormCm};
use crate::error::{Error, Result};

/// Reconciliation direction of the better key rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Direct,
    Reverse,
}

/// Full key-rate breakdown. All entropic quantities are in bits per symbol;
/// negative rates are reported as-is so that boundary solvers can track the
/// sign change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub i_ab: f64,
    pub chi_ae: f64,
    pub chi_be: f64,
    pub k_direct: f64,
    pub k_reverse: f64,
    /// `max(k_direct, k_reverse)`; ties resolve to reverse reconciliation.
    pub k: f64,
    pub direction: Direction,
    pub eta: f64,
}

impl KeyRateReport {
    /// Rate per emitted (rather than per accepted) symbol when the state was
    /// produced by post-selection with the given acceptance ratio.
    pub fn throughput_adjusted(&self, acceptance_ratio: f64) -> f64 {
        self.k * acceptance_ratio
    }
}

/// Shannon mutual information between the two heterodyne records, in bits.
pub fn mutual_information(cm: &StandardFormCm) -> Result<f64> {
    cm.ensure_physical()?;
    let num = (cm.a + 1.0) * (cm.b + 1.0);
    let den = num - cm.c * cm.c;
    if den <= 0.0 {
        return Err(Error::UnphysicalCovariance(format!(
            "(a+1)(b+1) - c^2 = {den} <= 0"
        )));
    }
    Ok((num / den).log2())
}

/// Joint-state entropy `S_AB`, summed over the symplectic spectrum.
fn joint_entropy(cm: &StandardFormCm) -> Result<f64> {
    let spec = cm.symplectic_spectrum()?;
    Ok(entropy_of_mu(spec.mu1) + entropy_of_mu(spec.mu2))
}

/// Holevo bound on Eve's information about Alice's data (direct
/// reconciliation): `S_AB - S_B`.
pub fn holevo_ae(cm: &StandardFormCm) -> Result<f64> {
    let s_b = entropy_of_mu(cm.conditional_mu(Party::Bob)?);
    Ok(joint_entropy(cm)? - s_b)
}

/// Holevo bound on Eve's information about Bob's data (reverse
/// reconciliation): `S_AB - S_A`.
pub fn holevo_be(cm: &StandardFormCm) -> Result<f64> {
    let s_a = entropy_of_mu(cm.conditional_mu(Party::Alice)?);
    Ok(joint_entropy(cm)? - s_a)
}

/// Key rate `K = max(eta I_AB - chi_AE, eta I_AB - chi_BE)` with
/// reconciliation efficiency `eta` in `(0, 1]`.
pub fn key_rate(cm: &StandardFormCm, eta: f64) -> Result<KeyRateReport> {
    if !eta.is_finite() || !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidParam(format!(
            "reconciliation efficiency must lie in (0, 1], got {eta}"
        )));
    }
    let i_ab = mutual_information(cm)?;
    let chi_ae = holevo_ae(cm)?;
    let chi_be = holevo_be(cm)?;
    let k_direct = eta * i_ab - chi_ae;
    let k_reverse = eta * i_ab - chi_be;
    let (k, direction) = if k_direct > k_reverse {
        (k_direct, Direction::Direct)
    } else {
        (k_reverse, Direction::Reverse)
    };
    Ok(KeyRateReport {
        i_ab,
        chi_ae,
        chi_be,
        k_direct,
        k_reverse,
        k,
        direction,
        eta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelSpec, EprSource};
    use crate::cm::FilterSpec;
    use approx::assert_abs_diff_eq;

    fn mixed_cm() -> StandardFormCm {
        StandardFormCm::new(3.0, 2.0, 2.0).unwrap()
    }

    #[test]
    fn uncorrelated_states_share_nothing() {
        let cm = StandardFormCm::new(3.0, 2.0, 0.0).unwrap();
        assert_eq!(mutual_information(&cm).unwrap(), 0.0);
    }

    #[test]
    fn mutual_information_fixtures() {
        let pure = StandardFormCm::new(3.0, 3.0, 8.0f64.sqrt()).unwrap();
        assert_abs_diff_eq!(mutual_information(&pure).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            mutual_information(&mixed_cm()).unwrap(),
            0.584962500721156,
            epsilon = 1e-12
        );
    }

    #[test]
    fn holevo_fixtures() {
        let pure = StandardFormCm::new(3.0, 3.0, 8.0f64.sqrt()).unwrap();
        assert_abs_diff_eq!(holevo_ae(&pure).unwrap(), 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(holevo_be(&pure).unwrap(), 0.0, epsilon = 1e-7);

        // (3, 2, 2): mu = (2, 1), S_AB = g(2), conditional mus 1 and 5/3.
        assert_abs_diff_eq!(holevo_ae(&mixed_cm()).unwrap(), 1.377443751081734, epsilon = 1e-12);
        assert_abs_diff_eq!(holevo_be(&mixed_cm()).unwrap(), 0.295739585136224, epsilon = 1e-12);

        // Product state: conditioning does nothing, chi reduces to one
        // marginal entropy.
        let prod = StandardFormCm::new(3.0, 2.0, 0.0).unwrap();
        assert_abs_diff_eq!(holevo_ae(&prod).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(holevo_be(&prod).unwrap(), 1.377443751081734, epsilon = 1e-12);
    }

    #[test]
    fn key_rate_pure_state() {
        let pure = StandardFormCm::new(3.0, 3.0, 8.0f64.sqrt()).unwrap();
        let report = key_rate(&pure, 1.0).unwrap();
        assert_abs_diff_eq!(report.k, 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(report.k_direct, report.k_reverse, epsilon = 1e-7);
        assert_eq!(report.direction, Direction::Reverse);
    }

    #[test]
    fn key_rate_fixture() {
        let report = key_rate(&mixed_cm(), 0.9).unwrap();
        assert_abs_diff_eq!(report.k_reverse, 0.230726665512817, epsilon = 1e-12);
        assert!(report.k_direct < 0.0);
        assert_eq!(report.direction, Direction::Reverse);
        assert_abs_diff_eq!(report.k, report.k_reverse, epsilon = 0.0);
        assert_abs_diff_eq!(report.throughput_adjusted(0.5), report.k * 0.5, epsilon = 0.0);
    }

    #[test]
    fn no_correlations_no_key() {
        for (a, b) in [(1.0, 1.0), (3.0, 2.0), (10.0, 1.5)] {
            let cm = StandardFormCm::new(a, b, 0.0).unwrap();
            for eta in [0.1, 0.5, 1.0] {
                assert!(key_rate(&cm, eta).unwrap().k <= 0.0);
            }
        }
    }

    #[test]
    fn eta_validation() {
        let cm = mixed_cm();
        assert!(key_rate(&cm, 0.0).is_err());
        assert!(key_rate(&cm, 1.1).is_err());
        assert!(key_rate(&cm, f64::NAN).is_err());
    }

    #[test]
    fn unit_filter_is_transparent_to_key_rate() {
        let cm = mixed_cm();
        let filtered = cm.apply_filter(FilterSpec { gain: 1.0 }).unwrap();
        let r0 = key_rate(&cm, 0.9).unwrap();
        let r1 = key_rate(&filtered, 0.9).unwrap();
        assert_eq!(r0, r1);
    }

    #[test]
    fn pure_loss_reverse_rate_stays_positive() {
        // Reverse reconciliation beats the loss-only channel at every
        // distance when eta = 1; checked on a coarse grid.
        for &t in &[0.06, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0] {
            for &lambda in &[0.12, 0.2, 0.35, 0.5, 0.65, 0.78] {
                let cm = EprSource::from_lambda(lambda).unwrap().cm();
                let cm = ChannelSpec::loss(t, 0.0).unwrap().apply(cm).unwrap();
                let report = key_rate(&cm, 1.0).unwrap();
                assert!(
                    report.k_reverse > 0.0,
                    "K_rev = {} at T = {t}, lambda = {lambda}",
                    report.k_reverse
                );
            }
        }
    }

    #[test]
    fn excess_noise_degrades_key() {
        let src = EprSource::from_lambda(0.5).unwrap();
        let mut last = f64::INFINITY;
        for i in 0..=20 {
            let n_th = 0.01 * i as f64;
            let cm = ChannelSpec::loss(0.6, n_th).unwrap().apply(src.cm()).unwrap();
            let k = key_rate(&cm, 0.9).unwrap().k;
            assert!(k <= last + 1e-12, "K rose from {last} to {k} at n_th = {n_th}");
            last = k;
        }
    }
}
