//! EPR source and one-mode Gaussian channels with excess thermal noise.

use serde::{Deserialize, Serialize};

use crate::cm::{StandardFormCm, MAX_CM_ENTRY};
use crate::error::{Error, Result};

/// Two-mode squeezed vacuum source, the entanglement-based equivalent of
/// Gaussian coherent-state modulation with variance `V`.
///
/// The squeezing parameter and the modulation variance are locked together by
/// `lambda^2 = 2V / (2V + 1)`; either one determines the other.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EprSource {
    v: f64,
    lambda: f64,
}

impl EprSource {
    /// From the squeezing parameter `lambda` in `[0, 1)`.
    pub fn from_lambda(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || !(0.0..1.0).contains(&lambda) {
            return Err(Error::InvalidParam(format!(
                "lambda must lie in [0, 1), got {lambda}"
            )));
        }
        let src = Self {
            v: lambda * lambda / (2.0 * (1.0 - lambda * lambda)),
            lambda,
        };
        src.reject_degenerate()?;
        Ok(src)
    }

    /// From Alice's modulation variance `V >= 0`.
    pub fn from_variance(v: f64) -> Result<Self> {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidParam(format!(
                "modulation variance must be >= 0, got {v}"
            )));
        }
        let src = Self {
            v,
            lambda: (2.0 * v / (2.0 * v + 1.0)).sqrt(),
        };
        src.reject_degenerate()?;
        Ok(src)
    }

    fn reject_degenerate(&self) -> Result<()> {
        // lambda -> 1 sends the CM entry a -> infinity; cut off at the
        // float-safe range shared with StandardFormCm.
        if self.marginal_entry() > MAX_CM_ENTRY {
            return Err(Error::InvalidParam(format!(
                "source too close to lambda = 1: a = {} exceeds {MAX_CM_ENTRY:e}",
                self.marginal_entry()
            )));
        }
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn variance(&self) -> f64 {
        self.v
    }

    fn marginal_entry(&self) -> f64 {
        let l2 = self.lambda * self.lambda;
        (1.0 + l2) / (1.0 - l2)
    }

    /// Covariance matrix `(a, a, sqrt(a^2 - 1))` with
    /// `a = (1 + lambda^2)/(1 - lambda^2) = cosh(2r)`, `r = atanh(lambda)`.
    pub fn cm(&self) -> StandardFormCm {
        let a = self.marginal_entry();
        StandardFormCm {
            a,
            b: a,
            c: (a * a - 1.0).sqrt(),
        }
    }
}

/// One-mode Gaussian channel acting on Bob's mode: quantum-limited loss or
/// amplification plus `n_th` mean excess thermal photons injected into the
/// signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSpec {
    Loss { t: f64, n_th: f64 },
    Amplify { g: f64, n_th: f64 },
}

/// Channel family selector used by boundary scans, where the noise is the
/// search variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Loss,
    Amplify,
}

impl ChannelKind {
    pub fn spec(self, param: f64, n_th: f64) -> Result<ChannelSpec> {
        match self {
            ChannelKind::Loss => ChannelSpec::loss(param, n_th),
            ChannelKind::Amplify => ChannelSpec::amplify(param, n_th),
        }
    }
}

impl ChannelSpec {
    pub fn loss(t: f64, n_th: f64) -> Result<Self> {
        if !t.is_finite() || !(t > 0.0 && t <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "transmittance T must lie in (0, 1], got {t}"
            )));
        }
        Self::check_noise(n_th)?;
        Ok(Self::Loss { t, n_th })
    }

    pub fn amplify(g: f64, n_th: f64) -> Result<Self> {
        if !g.is_finite() || g < 1.0 {
            return Err(Error::InvalidParam(format!(
                "channel gain G must be >= 1, got {g}"
            )));
        }
        Self::check_noise(n_th)?;
        // The ancilla thermal occupation n_th/(G-1) is singular at G = 1;
        // a unit-gain channel must be noiseless.
        if g == 1.0 && n_th > 0.0 {
            return Err(Error::InvalidParam(
                "amplifier with G = 1 cannot carry excess noise (n_th must be 0)".into(),
            ));
        }
        Ok(Self::Amplify { g, n_th })
    }

    fn check_noise(n_th: f64) -> Result<()> {
        if !n_th.is_finite() || n_th < 0.0 {
            return Err(Error::InvalidParam(format!(
                "excess thermal photon number must be >= 0, got {n_th}"
            )));
        }
        Ok(())
    }

    pub fn n_th(&self) -> f64 {
        match self {
            Self::Loss { n_th, .. } | Self::Amplify { n_th, .. } => *n_th,
        }
    }

    /// Propagates Bob's mode:
    ///
    /// * loss: `b' = T b + (1 - T) + 2 n_th`, `c' = sqrt(T) c`;
    /// * amplify: `b' = G b + (G - 1) + 2 n_th`, `c' = sqrt(G) c`;
    ///
    /// `a` is untouched. For an EPR input (`b = a`, `c = sqrt(a^2 - 1)`) these
    /// reduce to the familiar single-pass expressions; the general form is
    /// what makes channels compose.
    pub fn apply(&self, cm: StandardFormCm) -> Result<StandardFormCm> {
        cm.ensure_physical()?;
        let out = match *self {
            Self::Loss { t, n_th } => StandardFormCm {
                a: cm.a,
                b: t * cm.b + (1.0 - t) + 2.0 * n_th,
                c: t.sqrt() * cm.c,
            },
            Self::Amplify { g, n_th } => StandardFormCm {
                a: cm.a,
                b: g * cm.b + (g - 1.0) + 2.0 * n_th,
                c: g.sqrt() * cm.c,
            },
        };
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn source_constructors_agree() {
        let from_l = EprSource::from_lambda(0.5f64.sqrt()).unwrap();
        let from_v = EprSource::from_variance(0.5).unwrap();
        assert_abs_diff_eq!(from_l.lambda(), from_v.lambda(), epsilon = 1e-15);
        assert_abs_diff_eq!(from_l.variance(), 0.5, epsilon = 1e-15);

        let cm = from_v.cm();
        assert_abs_diff_eq!(cm.a, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cm.b, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cm.c, 2.828427124746190, epsilon = 1e-12);
    }

    #[test]
    fn zero_modulation_is_vacuum() {
        let cm = EprSource::from_lambda(0.0).unwrap().cm();
        assert_eq!((cm.a, cm.b, cm.c), (1.0, 1.0, 0.0));
    }

    #[test]
    fn degenerate_sources_rejected() {
        assert!(EprSource::from_lambda(1.0).is_err());
        assert!(EprSource::from_lambda(0.9999999999).is_err());
        assert!(EprSource::from_variance(1e9).is_err());
        assert!(EprSource::from_lambda(-0.1).is_err());
    }

    #[test]
    fn identity_channels() {
        let cm = EprSource::from_variance(0.5).unwrap().cm();
        let out = ChannelSpec::loss(1.0, 0.0).unwrap().apply(cm).unwrap();
        assert_eq!(out, cm);
        let out = ChannelSpec::amplify(1.0, 0.0).unwrap().apply(cm).unwrap();
        assert_eq!(out, cm);
    }

    #[test]
    fn loss_and_amplifier_examples() {
        let cm = EprSource::from_variance(0.5).unwrap().cm();

        let out = ChannelSpec::loss(0.5, 0.0).unwrap().apply(cm).unwrap();
        assert_abs_diff_eq!(out.a, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.b, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.c, 2.0, epsilon = 1e-12);

        let out = ChannelSpec::amplify(2.0, 0.5).unwrap().apply(cm).unwrap();
        assert_abs_diff_eq!(out.a, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.b, 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.c, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn parameter_validation() {
        assert!(ChannelSpec::loss(0.0, 0.0).is_err());
        assert!(ChannelSpec::loss(1.5, 0.0).is_err());
        assert!(ChannelSpec::loss(0.5, -0.1).is_err());
        assert!(ChannelSpec::amplify(0.9, 0.0).is_err());
        // Singular ancilla occupation: unit gain with excess noise.
        assert!(ChannelSpec::amplify(1.0, 0.5).is_err());
        assert!(ChannelSpec::amplify(1.0, 0.0).is_ok());
        // Full transmission with injected noise is a valid thermal channel.
        assert!(ChannelSpec::loss(1.0, 0.5).is_ok());
    }

    proptest! {
        #[test]
        fn prop_channel_output_physical(
            lambda in 0.0f64..0.95,
            t in 0.01f64..1.0,
            g in 1.0f64..10.0,
            n_th in 0.0f64..5.0,
        ) {
            let cm = EprSource::from_lambda(lambda).unwrap().cm();
            let lossy = ChannelSpec::loss(t, n_th).unwrap().apply(cm).unwrap();
            prop_assert!(lossy.check_physical().physical);
            if g > 1.0 || n_th == 0.0 {
                let amped = ChannelSpec::amplify(g, n_th).unwrap().apply(cm).unwrap();
                prop_assert!(amped.check_physical().physical);
            }
        }

        #[test]
        fn prop_loss_composes(lambda in 0.0f64..0.9, t1 in 0.05f64..1.0, t2 in 0.05f64..1.0) {
            let cm = EprSource::from_lambda(lambda).unwrap().cm();
            let seq = ChannelSpec::loss(t2, 0.0).unwrap()
                .apply(ChannelSpec::loss(t1, 0.0).unwrap().apply(cm).unwrap())
                .unwrap();
            let joint = ChannelSpec::loss(t1 * t2, 0.0).unwrap().apply(cm).unwrap();
            prop_assert!((seq.a - joint.a).abs() <= 1e-12 * joint.a);
            prop_assert!((seq.b - joint.b).abs() <= 1e-12 * joint.b);
            prop_assert!((seq.c - joint.c).abs() <= 1e-12 * joint.c.max(1.0));
        }

        #[test]
        fn prop_noise_moves_only_b(lambda in 0.1f64..0.9, t in 0.1f64..1.0, n in 0.0f64..3.0) {
            let cm = EprSource::from_lambda(lambda).unwrap().cm();
            let quiet = ChannelSpec::loss(t, n).unwrap().apply(cm).unwrap();
            let noisy = ChannelSpec::loss(t, n + 0.25).unwrap().apply(cm).unwrap();
            prop_assert!(noisy.b > quiet.b);
            prop_assert_eq!(noisy.c, quiet.c);
            prop_assert_eq!(noisy.a, quiet.a);
        }
    }
}
