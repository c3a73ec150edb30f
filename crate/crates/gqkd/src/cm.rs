//! Covariance-matrix calculus for two-mode Gaussian states in standard form.
//!
//! Conventions: quadrature variances of vacuum are 1/2 and covariance-matrix
//! entries are twice the symmetrized covariances, so the vacuum CM is the
//! identity. A standard-form state is fully described by three numbers
//! `(a, b, c)`:
//!
//! ```text
//!         | a  0  c  0 |
//! gamma = | 0  a  0 -c |
//!         | c  0  b  0 |
//!         | 0 -c  0  b |
//! ```
//!
//! Every state produced in this crate (EPR source, Gaussian channels, the
//! noiseless filter `g^n` on one mode, heterodyne conditioning) stays in this
//! form, so no general 4x4 type is exposed; generic matrix routes exist only
//! inside test oracles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for physicality checks: symplectic eigenvalues in
/// `[1 - TOL_PHYS, 1)` are treated as floating-point noise around a pure mode
/// and clamped to 1.
pub const TOL_PHYS: f64 = 1e-9;

/// Largest accepted CM entry. Larger values are outside the float-safe range
/// of the entropy formulas and physically meaningless here.
pub const MAX_CM_ENTRY: f64 = 1e6;

/// One of the two modes of a bipartite state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Party {
    Alice,
    Bob,
}

/// Two-mode covariance matrix in standard form, entries `(a, b, c)`.
///
/// `a` and `b` are the per-quadrature entries of Alice's and Bob's marginals
/// (vacuum = 1); `c` is the correlation entry (`+c` on the x-x block, `-c` on
/// the p-p block).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardFormCm {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Entries `(A, B, C)` of `Gamma = (gamma + I)^-1` in the same block
/// structure as [`StandardFormCm`]. `Gamma` is the exponent matrix of the
/// state's Husimi Q-function, which is where the noiseless filter acts in
/// closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QForm {
    /// Alice block entry `A`.
    pub a: f64,
    /// Bob block entry `B`.
    pub b: f64,
    /// Correlation entry `C`.
    pub c: f64,
}

/// Gain of the noiseless filter `g^n` applied to a single mode.
/// `gain > 1` amplifies, `gain < 1` attenuates, `gain = 1` is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub gain: f64,
}

impl FilterSpec {
    pub fn new(gain: f64) -> Result<Self> {
        if !gain.is_finite() || gain <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "filter gain must be finite and positive, got {gain}"
            )));
        }
        Ok(Self { gain })
    }
}

/// Symplectic eigenvalues of a two-mode CM, in descending order.
/// Both equal 1 exactly for a pure state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymplecticSpectrum {
    pub mu1: f64,
    pub mu2: f64,
}

/// Outcome of a physicality check with the offending quantity, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Physicality {
    pub physical: bool,
    /// Smallest symplectic eigenvalue (NaN if the spectrum itself failed).
    pub mu_min: f64,
    pub failure: Option<String>,
}

impl StandardFormCm {
    /// Validated constructor: entries in range and the full state physical.
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        let cm = Self { a, b, c };
        cm.ensure_physical()?;
        Ok(cm)
    }

    /// Vacuum in both modes.
    pub fn vacuum() -> Self {
        Self { a: 1.0, b: 1.0, c: 0.0 }
    }

    /// The same state with the two modes swapped.
    pub fn swapped(self) -> Self {
        Self { a: self.b, b: self.a, c: self.c }
    }

    /// Physicality check: `a >= 1`, `b >= 1`, finite entries below
    /// [`MAX_CM_ENTRY`], and `mu_min >= 1 - TOL_PHYS`.
    pub fn check_physical(&self) -> Physicality {
        let fail = |msg: String, mu_min: f64| Physicality {
            physical: false,
            mu_min,
            failure: Some(msg),
        };
        if !(self.a.is_finite() && self.b.is_finite() && self.c.is_finite()) {
            return fail(format!("non-finite entries ({}, {}, {})", self.a, self.b, self.c), f64::NAN);
        }
        if self.a.max(self.b).max(self.c.abs()) > MAX_CM_ENTRY {
            return fail(format!("entry exceeds {MAX_CM_ENTRY:e}"), f64::NAN);
        }
        if self.a < 1.0 {
            return fail(format!("a = {} < 1", self.a), f64::NAN);
        }
        if self.b < 1.0 {
            return fail(format!("b = {} < 1", self.b), f64::NAN);
        }
        match self.symplectic_spectrum() {
            Ok(spec) => {
                if spec.mu2 < 1.0 - TOL_PHYS {
                    fail(format!("mu_min = {} < 1", spec.mu2), spec.mu2)
                } else {
                    Physicality { physical: true, mu_min: spec.mu2, failure: None }
                }
            }
            Err(e) => fail(format!("symplectic spectrum failed: {e}"), f64::NAN),
        }
    }

    pub(crate) fn ensure_physical(&self) -> Result<()> {
        let check = self.check_physical();
        if check.physical {
            Ok(())
        } else {
            Err(Error::UnphysicalCovariance(check.failure.unwrap_or_default()))
        }
    }

    /// `Gamma = (gamma + I)^-1`, reduced to its three independent entries:
    /// `A = (b+1)/D`, `B = (a+1)/D`, `C = -c/D` with `D = (a+1)(b+1) - c^2`.
    pub fn to_qform(&self) -> Result<QForm> {
        self.ensure_physical()?;
        let d = (self.a + 1.0) * (self.b + 1.0) - self.c * self.c;
        if d <= 0.0 {
            return Err(Error::UnphysicalCovariance(format!(
                "det of (gamma + I) quadrature block = {d} <= 0"
            )));
        }
        Ok(QForm {
            a: (self.b + 1.0) / d,
            b: (self.a + 1.0) / d,
            c: -self.c / d,
        })
    }

    /// Applies the noiseless filter `g^n` to Bob's mode.
    ///
    /// In the Q-form the action is `(A, B, C) -> (A, g^2 (B - 1/2) + 1/2,
    /// g C)`; the result is transformed back and must be physical, otherwise
    /// the filter has no normalizable output on this state.
    pub fn apply_filter(&self, filter: FilterSpec) -> Result<Self> {
        self.ensure_physical()?;
        let g = filter.gain;
        if g == 1.0 {
            return Ok(*self);
        }
        let q = self.to_qform()?;
        let filtered = QForm {
            a: q.a,
            b: g * g * (q.b - 0.5) + 0.5,
            c: g * q.c,
        };
        let diverged = |reason: String| Error::FilterDiverges { gain: g, reason };
        filtered
            .validate()
            .map_err(|e| diverged(format!("filtered Q-form invalid: {e}")))?;
        let cm = filtered
            .to_cm()
            .map_err(|e| diverged(format!("{e}")))?;
        let check = cm.check_physical();
        if !check.physical {
            return Err(diverged(check.failure.unwrap_or_default()));
        }
        Ok(cm)
    }

    /// Filter on Alice's mode, realized by swapping the modes around
    /// [`Self::apply_filter`].
    pub fn apply_filter_alice(&self, filter: FilterSpec) -> Result<Self> {
        Ok(self.swapped().apply_filter(filter)?.swapped())
    }

    /// Symplectic eigenvalues via the standard-form closed form
    /// `mu^2 = (Delta +- sqrt(Delta^2 - 4 det^2)) / 2` with
    /// `Delta = a^2 + b^2 - 2 c^2` and `det = a b - c^2`.
    ///
    /// The discriminant is evaluated through its exact factorization
    /// `(a - b)^2 ((a + b)^2 - 4 c^2)` and the smaller root through
    /// `mu2 = det / mu1`; the naive expressions lose half the mantissa on
    /// degenerate spectra (pure states), where the result must be 1 to well
    /// inside [`TOL_PHYS`].
    pub fn symplectic_spectrum(&self) -> Result<SymplecticSpectrum> {
        let delta = self.a * self.a + self.b * self.b - 2.0 * self.c * self.c;
        let det = self.a * self.b - self.c * self.c;
        let p = (self.a - self.b) * (self.a - self.b);
        let q = (self.a + self.b - 2.0 * self.c) * (self.a + self.b + 2.0 * self.c);
        let disc = p * q;
        let scale = (delta * delta).max(1.0);
        if disc < -1e-9 * scale {
            return Err(Error::NumericalDomain(format!(
                "Delta^2 - 4 det^2 = {disc} < 0 for (a, b, c) = ({}, {}, {})",
                self.a, self.b, self.c
            )));
        }
        let root = disc.max(0.0).sqrt();
        let mu1 = ((delta + root) / 2.0).max(0.0).sqrt();
        let mu2 = if mu1 > 0.0 { det / mu1 } else { 0.0 };
        Ok(SymplecticSpectrum { mu1, mu2 })
    }

    /// Symplectic eigenvalue of the mode kept after an ideal heterodyne
    /// measurement of the other mode: `b - c^2/(a+1)` when Bob is kept,
    /// `a - c^2/(b+1)` when Alice is kept. The conditional state is thermal,
    /// so this single number is its full covariance description.
    pub fn conditional_mu(&self, kept: Party) -> Result<f64> {
        self.ensure_physical()?;
        let mu = match kept {
            Party::Bob => self.b - self.c * self.c / (self.a + 1.0),
            Party::Alice => self.a - self.c * self.c / (self.b + 1.0),
        };
        if mu < 1.0 - TOL_PHYS {
            return Err(Error::UnphysicalCovariance(format!(
                "conditional mu = {mu} < 1"
            )));
        }
        Ok(mu)
    }
}

impl QForm {
    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.b.is_finite() && self.c.is_finite()) {
            return Err(Error::NumericalDomain("non-finite Q-form entries".into()));
        }
        if self.a <= 0.0 || self.b <= 0.0 {
            return Err(Error::DegenerateQForm { det: self.a.min(self.b) });
        }
        let det = self.a * self.b - self.c * self.c;
        if det <= 0.0 {
            return Err(Error::DegenerateQForm { det });
        }
        Ok(())
    }

    /// Inverts the Q-form relation: `gamma = Gamma^-1 - I`. The result is not
    /// guaranteed physical; callers check.
    pub fn to_cm(&self) -> Result<StandardFormCm> {
        let det = self.a * self.b - self.c * self.c;
        if det <= 0.0 || !det.is_finite() {
            return Err(Error::DegenerateQForm { det });
        }
        Ok(StandardFormCm {
            a: self.b / det - 1.0,
            b: self.a / det - 1.0,
            c: -self.c / det,
        })
    }
}

/// Von Neumann entropy, in bits, of a Gaussian mode with symplectic
/// eigenvalue `mu`:
///
/// ```text
/// g(mu) = (mu+1)/2 log2((mu+1)/2) - (mu-1)/2 log2((mu-1)/2)
/// ```
///
/// Continuous at `mu = 1` with value 0; inputs below 1 are clamped to 1.
pub fn entropy_of_mu(mu: f64) -> f64 {
    if mu <= 1.0 {
        return 0.0;
    }
    let p = (mu + 1.0) / 2.0;
    let m = (mu - 1.0) / 2.0;
    p * p.log2() - m * m.log2()
}
