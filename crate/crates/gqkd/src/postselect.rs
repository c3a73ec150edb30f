//! Monte Carlo emulation of virtual noiseless amplification and attenuation
//! on heterodyne data.
//!
//! The filter `g^n` followed by heterodyne detection is equivalent to
//! post-processing the unfiltered record: rescale each outcome `gamma` to
//! `beta = gamma / g` and keep it with a probability proportional to
//! `e^{(1 - g^-2) |gamma|^2}`. For attenuation (`g = nu < 1`) that weight is
//! already below one; for amplification it diverges and must be normalized
//! against a reference `|gamma_M|^2`, either the running batch maximum
//! (adaptive rule, exact but sublinearly scaling) or a fixed cutoff
//! (linear scaling, slightly non-Gaussian tails).
//!
//! Unit bookkeeping: outcomes are stored as complex amplitudes whose vacuum
//! per-component variance is 1/2, i.e. the per-component covariance of
//! `(alice, bob)` is `(gamma_AB + I)/4` and Bob's outcome variance is
//! `V_B = (b + 1)/4`. The filter weights above are only correct in these
//! units (they come from `g^n |beta> = e^{(g^2-1)|beta|^2/2} |g beta>`), and
//! the attenuation acceptance ratio of a vacuum input then equals `nu^2`
//! exactly.
//!
//! Determinism: sample `i` draws from the ChaCha8 stream keyed
//! `(seed, SAMPLE, i)` and its acceptance decision from `(seed, ACCEPT, i)`,
//! so batches and decisions are reproducible independently of each other, of
//! execution order, and of thread count. Moment aggregation is chunked
//! pairwise with a fixed chunk size, recorded in every summary.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::cm::StandardFormCm;
use crate::error::{Error, Result};
use crate::rng::{self, domain};

/// Fixed aggregation chunk size; partial sums over chunks of this many
/// samples are combined pairwise.
pub const DEFAULT_CHUNK: usize = 1 << 16;

/// Default number of bootstrap resamples for empirical-covariance errors.
pub const DEFAULT_BOOTSTRAP: usize = 100;

/// One double-heterodyne event: Alice's and Bob's complex outcomes, split
/// into real components (`x` the real part, `p` the imaginary part).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomePair {
    pub alice_x: f64,
    pub alice_p: f64,
    pub bob_x: f64,
    pub bob_p: f64,
}

impl OutcomePair {
    /// `|gamma|^2` of Bob's outcome.
    #[inline]
    pub fn bob_mag_sq(&self) -> f64 {
        self.bob_x * self.bob_x + self.bob_p * self.bob_p
    }
}

/// Seeded batch of heterodyne outcome pairs drawn from the Husimi
/// distribution of a two-mode Gaussian state.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub cm: StandardFormCm,
    pub seed: u64,
    pub pairs: Vec<OutcomePair>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Per-component variance of Bob's outcomes, `V_B = (b + 1)/4`.
    pub fn bob_outcome_variance(&self) -> f64 {
        (self.cm.b + 1.0) / 4.0
    }
}

/// Per-component outcome variance `V_B = (b + 1)/4` of a state's heterodyne
/// record on Bob's side.
pub fn bob_outcome_variance(cm: &StandardFormCm) -> f64 {
    (cm.b + 1.0) / 4.0
}

/// Post-selection rule emulating a noiseless filter on Bob's mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PostSelectionRule {
    /// Amplification with the batch maximum as normalization; exact
    /// emulation, sublinear yield.
    AmplifyAdaptive { gain: f64 },
    /// Amplification normalized at a fixed cutoff radius `gamma_max`;
    /// outcomes beyond the cutoff are kept with probability 1.
    AmplifyCutoff { gain: f64, gamma_max: f64 },
    /// Attenuation by `nu`; `nu = 1` is the degenerate identity rule
    /// (useful in tests).
    Attenuate { nu: f64 },
}

impl PostSelectionRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::AmplifyAdaptive { gain } => {
                if !gain.is_finite() || gain <= 1.0 {
                    return Err(Error::InvalidParam(format!(
                        "adaptive amplification needs gain > 1, got {gain}"
                    )));
                }
            }
            Self::AmplifyCutoff { gain, gamma_max } => {
                if !gain.is_finite() || gain <= 1.0 {
                    return Err(Error::InvalidParam(format!(
                        "cutoff amplification needs gain > 1, got {gain}"
                    )));
                }
                if !gamma_max.is_finite() || gamma_max <= 0.0 {
                    return Err(Error::InvalidParam(format!(
                        "cutoff radius must be positive, got {gamma_max}"
                    )));
                }
            }
            Self::Attenuate { nu } => {
                if !nu.is_finite() || !(nu > 0.0 && nu <= 1.0) {
                    return Err(Error::InvalidParam(format!(
                        "attenuation needs nu in (0, 1], got {nu}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Filter gain emulated by this rule.
    pub fn gain(&self) -> f64 {
        match *self {
            Self::AmplifyAdaptive { gain } | Self::AmplifyCutoff { gain, .. } => gain,
            Self::Attenuate { nu } => nu,
        }
    }

    /// `2 V_B (1 - g^-2)` must stay below 1 for the amplification weights to
    /// have a finite Gaussian average; attenuation always converges.
    pub fn check_convergence(&self, v_b: f64) -> Result<()> {
        match *self {
            Self::Attenuate { .. } => Ok(()),
            Self::AmplifyAdaptive { gain } | Self::AmplifyCutoff { gain, .. } => {
                let value = 2.0 * v_b * (1.0 - 1.0 / (gain * gain));
                if value >= 1.0 {
                    Err(Error::NonconvergentRule { value })
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Post-selected, rescaled subset of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptedSet {
    pub rule: PostSelectionRule,
    /// Seed of the acceptance stream (not of the batch).
    pub seed: u64,
    /// Size of the batch the selection ran on.
    pub n: usize,
    pub n_acc: usize,
    pub acceptance_ratio: f64,
    /// Accepted pairs with Bob's outcome rescaled by `1/g` (or `1/nu`);
    /// Alice's outcome kept as-is.
    pub pairs: Vec<OutcomePair>,
    /// Normalization `|gamma_M|^2` used by the amplification rules
    /// (batch maximum for the adaptive rule, cutoff^2 otherwise).
    pub gamma_max_sq: Option<f64>,
}

/// Draws `n` heterodyne outcome pairs from the two-mode Gaussian outcome law
/// of `cm`: zero mean, per-component covariance `(gamma + I)/4`, x-components
/// correlated by `+c/4` and p-components by `-c/4`.
pub fn sample_pairs(cm: &StandardFormCm, n: usize, seed: u64) -> Result<SampleBatch> {
    cm.ensure_physical()?;
    if n == 0 {
        return Err(Error::InvalidParam("batch size must be >= 1".into()));
    }
    // Cholesky factors of the per-quadrature 2x2 covariance block.
    let var_a = (cm.a + 1.0) / 4.0;
    let cov = cm.c / 4.0;
    let la = var_a.sqrt();
    let lc = cov / la;
    let lb = ((cm.b + 1.0) / 4.0 - lc * lc).sqrt();

    let mut pairs = vec![
        OutcomePair { alice_x: 0.0, alice_p: 0.0, bob_x: 0.0, bob_p: 0.0 };
        n
    ];
    pairs
        .par_chunks_mut(DEFAULT_CHUNK)
        .enumerate()
        .for_each(|(chunk, slot)| {
            let base = chunk * DEFAULT_CHUNK;
            for (off, out) in slot.iter_mut().enumerate() {
                let i = (base + off) as u64;
                let mut rng = rng::stream(seed, domain::SAMPLE, i);
                let (z1, z2) = rng::normal_pair(&mut rng);
                let (z3, z4) = rng::normal_pair(&mut rng);
                *out = OutcomePair {
                    alice_x: la * z1,
                    alice_p: la * z3,
                    bob_x: lc * z1 + lb * z2,
                    bob_p: -lc * z3 + lb * z4,
                };
            }
        });
    Ok(SampleBatch { cm: *cm, seed, pairs })
}

/// Acceptance probability of one outcome under a rule, given the
/// normalization `gamma_max_sq` (ignored by attenuation).
#[inline]
fn acceptance_probability(rule: &PostSelectionRule, mag_sq: f64, gamma_max_sq: f64) -> f64 {
    match *rule {
        PostSelectionRule::Attenuate { nu } => (-(1.0 / (nu * nu) - 1.0) * mag_sq).exp(),
        PostSelectionRule::AmplifyAdaptive { gain } => {
            ((1.0 - 1.0 / (gain * gain)) * (mag_sq - gamma_max_sq)).exp()
        }
        PostSelectionRule::AmplifyCutoff { gain, .. } => {
            ((1.0 - 1.0 / (gain * gain)) * (mag_sq - gamma_max_sq)).exp().min(1.0)
        }
    }
}

/// Applies a post-selection rule to a batch: accept each outcome with its
/// rule probability (one uniform draw from the stream `(seed, ACCEPT, i)`
/// per sample) and rescale accepted Bob outcomes by the inverse gain.
///
/// The adaptive rule is batch-mode: the normalization `|gamma_M|^2` is the
/// maximum over the full batch, computed in a first pass, so the point
/// attaining it is always kept.
pub fn apply_rule(
    batch: &SampleBatch,
    rule: PostSelectionRule,
    seed: u64,
) -> Result<AcceptedSet> {
    rule.validate()?;
    rule.check_convergence(batch.bob_outcome_variance())?;

    let gamma_max_sq = match rule {
        PostSelectionRule::AmplifyAdaptive { .. } => Some(
            batch
                .pairs
                .par_iter()
                .map(OutcomePair::bob_mag_sq)
                .reduce(|| f64::NEG_INFINITY, f64::max),
        ),
        PostSelectionRule::AmplifyCutoff { gamma_max, .. } => Some(gamma_max * gamma_max),
        PostSelectionRule::Attenuate { .. } => None,
    };
    let norm = gamma_max_sq.unwrap_or(0.0);
    let gain = rule.gain();

    let chunks: Vec<Vec<OutcomePair>> = batch
        .pairs
        .par_chunks(DEFAULT_CHUNK)
        .enumerate()
        .map(|(chunk, slot)| {
            let base = chunk * DEFAULT_CHUNK;
            let mut kept = Vec::new();
            for (off, pair) in slot.iter().enumerate() {
                let i = (base + off) as u64;
                let p = acceptance_probability(&rule, pair.bob_mag_sq(), norm);
                let mut rng = rng::stream(seed, domain::ACCEPT, i);
                if rng::uniform_co(&mut rng) < p {
                    kept.push(OutcomePair {
                        alice_x: pair.alice_x,
                        alice_p: pair.alice_p,
                        bob_x: pair.bob_x / gain,
                        bob_p: pair.bob_p / gain,
                    });
                }
            }
            kept
        })
        .collect();

    let pairs: Vec<OutcomePair> = chunks.into_iter().flatten().collect();
    let n_acc = pairs.len();
    Ok(AcceptedSet {
        rule,
        seed,
        n: batch.len(),
        n_acc,
        acceptance_ratio: n_acc as f64 / batch.len() as f64,
        pairs,
        gamma_max_sq,
    })
}

/// Expected acceptance ratio for a Gaussian outcome distribution with
/// per-component variance `v_b`:
///
/// * attenuation: `nu^2 / (nu^2 + 2 V_B (1 - nu^2))` (exact);
/// * cutoff amplification:
///   `g^2/(g^2 + 2 V_B (1 - g^2)) [e^{-(1-g^-2) gamma_M^2} - e^{-gamma_M^2/(2 V_B)}]`,
///   the yield of the region inside the cutoff (a lower bound that is tight
///   once the cutoff sits far out in the tail);
/// * adaptive amplification: no closed form exists.
pub fn acceptance_ratio_theory(rule: &PostSelectionRule, v_b: f64) -> Result<f64> {
    rule.validate()?;
    if !v_b.is_finite() || v_b <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "outcome variance must be positive, got {v_b}"
        )));
    }
    rule.check_convergence(v_b)?;
    match *rule {
        PostSelectionRule::Attenuate { nu } => {
            let nu2 = nu * nu;
            Ok(nu2 / (nu2 + 2.0 * v_b * (1.0 - nu2)))
        }
        PostSelectionRule::AmplifyCutoff { gain, gamma_max } => {
            let g2 = gain * gain;
            let gm2 = gamma_max * gamma_max;
            let prefactor = g2 / (g2 + 2.0 * v_b * (1.0 - g2));
            Ok(prefactor * (((1.0 / g2 - 1.0) * gm2).exp() - (-gm2 / (2.0 * v_b)).exp()))
        }
        PostSelectionRule::AmplifyAdaptive { .. } => Err(Error::NoClosedForm),
    }
}

/// Moment estimate of the standard-form CM behind a set of outcome pairs,
/// with bootstrap standard errors.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CmEstimate {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub a_se: f64,
    pub b_se: f64,
    pub c_se: f64,
    pub n_acc: usize,
    pub resamples: usize,
}

impl CmEstimate {
    /// Largest entrywise deviation from `target` in units of the bootstrap
    /// standard error.
    pub fn deviation_in_se(&self, target: &StandardFormCm) -> f64 {
        let dev = |x: f64, t: f64, se: f64| {
            let d = (x - t).abs();
            if d == 0.0 {
                0.0
            } else {
                d / se
            }
        };
        dev(self.a, target.a, self.a_se)
            .max(dev(self.b, target.b, self.b_se))
            .max(dev(self.c, target.c, self.c_se))
    }
}

/// `[sum x, sum x^2 terms ...]` for the moment estimator, accumulated per
/// chunk and combined pairwise so the floating-point result is independent
/// of threading.
fn pairwise_combine<const K: usize>(mut partials: Vec<[f64; K]>) -> [f64; K] {
    if partials.is_empty() {
        return [0.0; K];
    }
    while partials.len() > 1 {
        partials = partials
            .chunks(2)
            .map(|pair| {
                let mut s = pair[0];
                if let Some(second) = pair.get(1) {
                    for (acc, x) in s.iter_mut().zip(second.iter()) {
                        *acc += x;
                    }
                }
                s
            })
            .collect();
    }
    partials[0]
}

/// Standard-form CM entries from a slice of outcome pairs: inverts the
/// sampling law, `a = 4 Var(alpha_x) - 1` averaged over both quadratures,
/// `c` from the x and p cross-covariances with their opposite signs.
fn moments_of(pairs: &[OutcomePair], lookup: Option<&[usize]>) -> (f64, f64, f64) {
    let n = lookup.map_or(pairs.len(), <[usize]>::len);
    let get = |i: usize| lookup.map_or(pairs[i], |idx| pairs[idx[i]]);

    fn chunk_sums<F: Fn(usize) -> [f64; 6] + Sync>(n: usize, f: F) -> [f64; 6] {
        let partials: Vec<[f64; 6]> = (0..n)
            .collect::<Vec<_>>()
            .par_chunks(DEFAULT_CHUNK)
            .map(|chunk| {
                let mut acc = [0.0f64; 6];
                for &i in chunk {
                    let v = f(i);
                    for (a, x) in acc.iter_mut().zip(v.iter()) {
                        *a += x;
                    }
                }
                acc
            })
            .collect();
        pairwise_combine(partials)
    }

    let sums = chunk_sums(n, |i| {
        let p = get(i);
        [p.alice_x, p.alice_p, p.bob_x, p.bob_p, 0.0, 0.0]
    });
    let inv_n = 1.0 / n as f64;
    let (m_ax, m_ap, m_bx, m_bp) = (sums[0] * inv_n, sums[1] * inv_n, sums[2] * inv_n, sums[3] * inv_n);

    let sq = chunk_sums(n, |i| {
        let p = get(i);
        let (ax, ap, bx, bp) = (p.alice_x - m_ax, p.alice_p - m_ap, p.bob_x - m_bx, p.bob_p - m_bp);
        [ax * ax, ap * ap, bx * bx, bp * bp, ax * bx, ap * bp]
    });
    let var_ax = sq[0] * inv_n;
    let var_ap = sq[1] * inv_n;
    let var_bx = sq[2] * inv_n;
    let var_bp = sq[3] * inv_n;
    let cov_x = sq[4] * inv_n;
    let cov_p = sq[5] * inv_n;

    (
        2.0 * (var_ax + var_ap) - 1.0,
        2.0 * (var_bx + var_bp) - 1.0,
        2.0 * (cov_x - cov_p),
    )
}

/// Estimates the standard-form CM of the state behind an accepted set, with
/// bootstrap standard errors (`resamples` resamples drawn from the stream
/// `(accepted.seed, BOOTSTRAP, r)`).
pub fn empirical_cm(accepted: &AcceptedSet, resamples: usize) -> Result<CmEstimate> {
    if accepted.n_acc < 100 {
        return Err(Error::InsufficientSamples { needed: 100, got: accepted.n_acc });
    }
    if resamples < 2 {
        return Err(Error::InvalidParam(format!(
            "need at least 2 bootstrap resamples, got {resamples}"
        )));
    }
    let (a, b, c) = moments_of(&accepted.pairs, None);

    let n = accepted.n_acc;
    let estimates: Vec<(f64, f64, f64)> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(accepted.seed, domain::BOOTSTRAP, r as u64);
            let lookup: Vec<usize> = (0..n).map(|_| rng::index_below(&mut rng, n)).collect();
            moments_of(&accepted.pairs, Some(&lookup))
        })
        .collect();

    let se = |pick: &dyn Fn(&(f64, f64, f64)) -> f64| {
        let mean = estimates.iter().map(pick).sum::<f64>() / resamples as f64;
        let var = estimates
            .iter()
            .map(|e| {
                let d = pick(e) - mean;
                d * d
            })
            .sum::<f64>()
            / (resamples - 1) as f64;
        var.sqrt()
    };

    Ok(CmEstimate {
        a,
        b,
        c,
        a_se: se(&|e| e.0),
        b_se: se(&|e| e.1),
        c_se: se(&|e| e.2),
        n_acc: n,
        resamples,
    })
}

/// Serializable record of one Monte Carlo post-selection run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub rule: PostSelectionRule,
    pub n: usize,
    pub n_acc: usize,
    pub ratio: f64,
    /// Closed-form expectation, absent for the adaptive rule.
    pub theory_ratio: Option<f64>,
    pub empirical_cm: CmEstimate,
    /// CM of the filtered state predicted by the covariance calculus, when
    /// the filter converges on this state.
    pub predicted_cm: Option<StandardFormCm>,
    pub seed: u64,
    pub chunk_size: usize,
    pub sampling_version: String,
}

/// Bundles a finished run into its serializable summary.
pub fn summarize(
    batch: &SampleBatch,
    accepted: &AcceptedSet,
    resamples: usize,
) -> Result<MonteCarloSummary> {
    let theory_ratio = match acceptance_ratio_theory(&accepted.rule, batch.bob_outcome_variance())
    {
        Ok(r) => Some(r),
        Err(Error::NoClosedForm) => None,
        Err(e) => return Err(e),
    };
    let predicted_cm = batch
        .cm
        .apply_filter(crate::cm::FilterSpec::new(accepted.rule.gain())?)
        .ok();
    Ok(MonteCarloSummary {
        rule: accepted.rule,
        n: accepted.n,
        n_acc: accepted.n_acc,
        ratio: accepted.acceptance_ratio,
        theory_ratio,
        empirical_cm: empirical_cm(accepted, resamples)?,
        predicted_cm,
        seed: batch.seed,
        chunk_size: DEFAULT_CHUNK,
        sampling_version: rng::SAMPLING_VERSION.to_string(),
    })
}

/// One grid point of the scaling experiment.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub n: usize,
    pub mean_n_acc: f64,
}

/// Least-squares fit of `log N_acc` against `log N` for the adaptive rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingFit {
    pub kappa: f64,
    pub std_error: f64,
    /// Residual degrees of freedom of the fit (`points - 2`).
    pub dof: usize,
    pub gain: f64,
    pub v_b: f64,
    pub runs: usize,
    pub seed: u64,
    pub points: Vec<ScalingPoint>,
}

impl ScalingFit {
    /// One-sided p-value of `kappa < 1` from the regression t-statistic.
    pub fn sublinearity_p_value(&self) -> f64 {
        if self.std_error == 0.0 {
            return if self.kappa < 1.0 { 0.0 } else { 1.0 };
        }
        let t = (1.0 - self.kappa) / self.std_error;
        let dist = StudentsT::new(0.0, 1.0, self.dof as f64).expect("valid dof");
        dist.sf(t)
    }

    /// 95% confidence half-width of `kappa`.
    pub fn ci95_half_width(&self) -> f64 {
        let dist = StudentsT::new(0.0, 1.0, self.dof as f64).expect("valid dof");
        self.std_error * dist.inverse_cdf(0.975)
    }
}

/// Runs the adaptive-amplification scaling experiment: for each batch size
/// in `n_grid`, `runs` independent seeded repetitions against a state with
/// Bob outcome variance `v_b` (Alice uncorrelated), then the power-law fit
/// `N_acc ~ N^kappa`.
pub fn fit_scaling_exponent(
    v_b: f64,
    gain: f64,
    n_grid: &[usize],
    runs: usize,
    seed: u64,
) -> Result<ScalingFit> {
    if v_b < 0.5 {
        return Err(Error::InvalidParam(format!(
            "outcome variance below the vacuum floor 0.5: {v_b}"
        )));
    }
    if n_grid.len() < 3 || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParam(
            "batch-size grid must be strictly increasing with at least 3 points".into(),
        ));
    }
    if runs == 0 {
        return Err(Error::InvalidParam("need at least one run".into()));
    }
    let rule = PostSelectionRule::AmplifyAdaptive { gain };
    rule.validate()?;
    rule.check_convergence(v_b)?;

    // Uncorrelated stand-in state with the requested outcome variance.
    let cm = StandardFormCm::new(1.0, 4.0 * v_b - 1.0, 0.0)?;

    let counts: Vec<usize> = (0..n_grid.len() * runs)
        .into_par_iter()
        .map(|idx| {
            let n = n_grid[idx / runs];
            let mut sub = rng::stream(seed, domain::SCALING, idx as u64);
            let sample_seed = rng::uniform_bits(&mut sub);
            let accept_seed = rng::uniform_bits(&mut sub);
            let batch = sample_pairs(&cm, n, sample_seed).expect("validated above");
            let accepted = apply_rule(&batch, rule, accept_seed).expect("validated above");
            accepted.n_acc
        })
        .collect();

    let points: Vec<ScalingPoint> = n_grid
        .iter()
        .enumerate()
        .map(|(gi, &n)| ScalingPoint {
            n,
            mean_n_acc: counts[gi * runs..(gi + 1) * runs]
                .iter()
                .map(|&c| c as f64)
                .sum::<f64>()
                / runs as f64,
        })
        .collect();

    let xs: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean_n_acc.max(1.0).ln()).collect();
    let k = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / k;
    let y_mean = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean) * (x - x_mean)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - x_mean) * (y - y_mean)).sum();
    let kappa = sxy / sxx;
    let intercept = y_mean - kappa * x_mean;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + kappa * x);
            r * r
        })
        .sum();
    let dof = xs.len() - 2;
    let std_error = (rss / dof as f64 / sxx).sqrt();

    Ok(ScalingFit {
        kappa,
        std_error,
        dof,
        gain,
        v_b,
        runs,
        seed,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelSpec, EprSource};
    use crate::cm::FilterSpec;
    use approx::assert_abs_diff_eq;

    fn vacuum_batch(n: usize, seed: u64) -> SampleBatch {
        sample_pairs(&StandardFormCm::vacuum(), n, seed).unwrap()
    }

    #[test]
    fn sampling_is_deterministic() {
        let cm = EprSource::from_variance(0.5).unwrap().cm();
        let one = sample_pairs(&cm, 5000, 99).unwrap();
        let two = sample_pairs(&cm, 5000, 99).unwrap();
        assert_eq!(one, two);
        let other = sample_pairs(&cm, 5000, 100).unwrap();
        assert_ne!(one, other);
    }

    #[test]
    fn empirical_moments_match_the_outcome_law() {
        let n = 1_000_000;
        let batch = vacuum_batch(n, 7);
        let var: f64 =
            batch.pairs.iter().map(|p| p.bob_x * p.bob_x).sum::<f64>() / n as f64;
        // Var(gamma_x) = 1/2 for vacuum; 4-sigma band of the variance
        // estimator (variance 2 V^2 / n).
        let tol = 4.0 * (2.0f64 / n as f64).sqrt() * 0.5;
        assert_abs_diff_eq!(var, 0.5, epsilon = tol);

        let cm = EprSource::from_variance(0.5).unwrap().cm();
        let batch = sample_pairs(&cm, n, 7).unwrap();
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for p in &batch.pairs {
            cov += p.alice_x * p.bob_x;
            va += p.alice_x * p.alice_x;
            vb += p.bob_x * p.bob_x;
        }
        let corr = cov / (va.sqrt() * vb.sqrt());
        // Corr = c / sqrt((a+1)(b+1)) = sqrt(1/2); correlation estimator
        // sigma ~ (1 - rho^2)/sqrt(n).
        let want = 0.5f64.sqrt();
        let tol = 4.0 * (1.0 - want * want) / (n as f64).sqrt();
        assert_abs_diff_eq!(corr, want, epsilon = tol);
    }

    #[test]
    fn attenuation_identity_rule_keeps_everything() {
        let batch = vacuum_batch(10_000, 3);
        let accepted = apply_rule(&batch, PostSelectionRule::Attenuate { nu: 1.0 }, 5).unwrap();
        assert_eq!(accepted.n_acc, batch.len());
        assert_eq!(accepted.pairs, batch.pairs);
    }

    #[test]
    fn vacuum_attenuation_accepts_nu_squared() {
        let n = 1_000_000;
        let batch = vacuum_batch(n, 11);
        let nu = 0.5f64.sqrt();
        let accepted = apply_rule(&batch, PostSelectionRule::Attenuate { nu }, 13).unwrap();
        let p = 0.5;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert_abs_diff_eq!(accepted.acceptance_ratio, p, epsilon = 4.0 * sigma);
    }

    #[test]
    fn cutoff_ratio_matches_theory() {
        // b = 3 gives V_B = 1; g^2 = 1.5, gamma_M^2 = 10.
        let cm = StandardFormCm::new(1.0, 3.0, 0.0).unwrap();
        let n = 1_000_000;
        let batch = sample_pairs(&cm, n, 17).unwrap();
        let rule = PostSelectionRule::AmplifyCutoff {
            gain: 1.5f64.sqrt(),
            gamma_max: 10.0f64.sqrt(),
        };
        let accepted = apply_rule(&batch, rule, 19).unwrap();
        let theory = acceptance_ratio_theory(&rule, 1.0).unwrap();
        let sigma = (theory * (1.0 - theory) / n as f64).sqrt();
        // The closed form excludes the mass beyond the cutoff, which is kept
        // with probability 1; allow it on top of the binomial band.
        let tail = (-10.0f64 / 2.0).exp();
        assert_abs_diff_eq!(accepted.acceptance_ratio, theory, epsilon = 4.0 * sigma + tail);
    }

    #[test]
    fn acceptance_theory_fixtures() {
        let nu_rule = PostSelectionRule::Attenuate { nu: 0.5f64.sqrt() };
        assert_abs_diff_eq!(acceptance_ratio_theory(&nu_rule, 0.5).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(
            acceptance_ratio_theory(&PostSelectionRule::Attenuate { nu: 1.0 }, 2.0).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        // Frozen from a 40-digit evaluation of the closed form.
        let cutoff = PostSelectionRule::AmplifyCutoff {
            gain: 1.5f64.sqrt(),
            gamma_max: 10.0f64.sqrt(),
        };
        assert_abs_diff_eq!(
            acceptance_ratio_theory(&cutoff, 0.5).unwrap(),
            0.053442890126235,
            epsilon = 1e-12
        );
        assert!(matches!(
            acceptance_ratio_theory(&PostSelectionRule::AmplifyAdaptive { gain: 1.2 }, 0.5),
            Err(Error::NoClosedForm)
        ));
        // 2 V_B (1 - g^-2) = 4/3 >= 1.
        assert!(matches!(
            acceptance_ratio_theory(&cutoff, 2.0),
            Err(Error::NonconvergentRule { .. })
        ));
    }

    #[test]
    fn nonconvergent_rule_rejected_exactly_at_threshold() {
        // 2 V_B (1 - g^-2) >= 1 with V_B = (b+1)/4. g^2 = 1.5 puts the
        // threshold at V_B = 1.5.
        let gain = 1.5f64.sqrt();
        let rule = PostSelectionRule::AmplifyAdaptive { gain };
        assert!(rule.check_convergence(1.5 + 1e-9).is_err());
        assert!(rule.check_convergence(1.5 - 1e-9).is_ok());
        // g^2 = 2 with V_B = 1 sits exactly on the threshold.
        let exact = PostSelectionRule::AmplifyAdaptive { gain: 2.0 };
        assert!(exact.check_convergence(2.0 / 3.0 + 1e-9).is_err());
        assert!(exact.check_convergence(2.0 / 3.0 - 1e-9).is_ok());

        let cm = StandardFormCm::new(1.0, 7.0, 0.0).unwrap(); // V_B = 2
        let batch = sample_pairs(&cm, 100, 1).unwrap();
        assert!(matches!(
            apply_rule(&batch, rule, 2),
            Err(Error::NonconvergentRule { .. })
        ));
    }

    #[test]
    fn adaptive_rule_audit() {
        let cm = StandardFormCm::new(1.0, 3.0, 0.0).unwrap();
        let batch = sample_pairs(&cm, 50_000, 23).unwrap();
        let gain = 1.5f64.sqrt();
        let accepted =
            apply_rule(&batch, PostSelectionRule::AmplifyAdaptive { gain }, 29).unwrap();

        // Replay every decision from the stored fields.
        let gamma_max_sq = accepted.gamma_max_sq.unwrap();
        let batch_max = batch
            .pairs
            .iter()
            .map(OutcomePair::bob_mag_sq)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(gamma_max_sq, batch_max);

        let mut replayed = Vec::new();
        let mut max_weight = 0.0f64;
        for (i, pair) in batch.pairs.iter().enumerate() {
            let w = ((1.0 - 1.0 / (gain * gain)) * (pair.bob_mag_sq() - gamma_max_sq)).exp();
            assert!(w <= 1.0);
            max_weight = max_weight.max(w);
            let mut rng = rng::stream(29, domain::ACCEPT, i as u64);
            if rng::uniform_co(&mut rng) < w {
                replayed.push(OutcomePair {
                    alice_x: pair.alice_x,
                    alice_p: pair.alice_p,
                    bob_x: pair.bob_x / gain,
                    bob_p: pair.bob_p / gain,
                });
            }
        }
        assert_eq!(replayed, accepted.pairs);
        assert_eq!(max_weight, 1.0);

        // Determinism of the whole selection.
        let again = apply_rule(&batch, PostSelectionRule::AmplifyAdaptive { gain }, 29).unwrap();
        assert_eq!(again, accepted);
    }

    #[test]
    fn empirical_cm_recovers_unfiltered_states() {
        let batch = vacuum_batch(200_000, 31);
        let all = apply_rule(&batch, PostSelectionRule::Attenuate { nu: 1.0 }, 37).unwrap();
        let est = empirical_cm(&all, DEFAULT_BOOTSTRAP).unwrap();
        let vac = StandardFormCm::vacuum();
        assert!(est.deviation_in_se(&vac) < 5.0, "{est:?}");

        let cm = EprSource::from_variance(0.5).unwrap().cm();
        let batch = sample_pairs(&cm, 200_000, 41).unwrap();
        let all = apply_rule(&batch, PostSelectionRule::Attenuate { nu: 1.0 }, 43).unwrap();
        let est = empirical_cm(&all, DEFAULT_BOOTSTRAP).unwrap();
        assert!(est.deviation_in_se(&cm) < 5.0, "{est:?}");
    }

    #[test]
    fn postselected_moments_match_the_filtered_state() {
        // EPR(lambda = 0.5) attenuated by nu: the equivalence behind the
        // whole construction, at moderate size for unit-test speed.
        let cm = EprSource::from_lambda(0.5).unwrap().cm();
        let batch = sample_pairs(&cm, 400_000, 47).unwrap();
        let nu = 0.8;
        let accepted = apply_rule(&batch, PostSelectionRule::Attenuate { nu }, 53).unwrap();
        let est = empirical_cm(&accepted, DEFAULT_BOOTSTRAP).unwrap();
        let filtered = cm.apply_filter(FilterSpec::new(nu).unwrap()).unwrap();
        assert!(
            est.deviation_in_se(&filtered) < 5.0,
            "estimate {est:?} vs filtered {filtered:?}"
        );
        // And the acceptance ratio against the closed form.
        let theory =
            acceptance_ratio_theory(&accepted.rule, bob_outcome_variance(&cm)).unwrap();
        let sigma = (theory * (1.0 - theory) / 400_000.0).sqrt();
        assert_abs_diff_eq!(accepted.acceptance_ratio, theory, epsilon = 4.0 * sigma);
    }

    #[test]
    fn insufficient_samples_rejected() {
        let batch = vacuum_batch(120, 59);
        let nearly_none =
            apply_rule(&batch, PostSelectionRule::Attenuate { nu: 0.05 }, 61).unwrap();
        assert!(matches!(
            empirical_cm(&nearly_none, 100),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn summary_serializes_with_theory() {
        let cm = ChannelSpec::loss(0.8, 0.0)
            .unwrap()
            .apply(EprSource::from_lambda(0.5).unwrap().cm())
            .unwrap();
        let batch = sample_pairs(&cm, 50_000, 67).unwrap();
        let accepted = apply_rule(&batch, PostSelectionRule::Attenuate { nu: 0.7 }, 71).unwrap();
        let summary = summarize(&batch, &accepted, DEFAULT_BOOTSTRAP).unwrap();
        assert!(summary.theory_ratio.is_some());
        assert!(summary.predicted_cm.is_some());
        let json = serde_json::to_string(&summary).unwrap();
        assert!(json.contains("\"kind\":\"attenuate\""));
        assert!(json.contains("chunk_size"));
    }

    #[test]
    fn scaling_fit_approaches_linear_for_weak_gain() {
        let fit = fit_scaling_exponent(
            1.0,
            1.0005,
            &[1_000, 3_162, 10_000, 31_623],
            10,
            73,
        )
        .unwrap();
        assert!(fit.kappa > 0.9, "kappa = {}", fit.kappa);
        assert!(fit.kappa < 1.05, "kappa = {}", fit.kappa);
    }

    #[test]
    fn scaling_fit_validation() {
        assert!(fit_scaling_exponent(1.0, 1.2, &[10, 10, 20], 5, 1).is_err());
        assert!(fit_scaling_exponent(1.0, 1.2, &[10, 20], 5, 1).is_err());
        assert!(fit_scaling_exponent(0.2, 1.2, &[10, 20, 40], 5, 1).is_err());
        assert!(fit_scaling_exponent(1.0, 0.9, &[10, 20, 40], 5, 1).is_err());
        // 2 V_B (1 - g^-2) >= 1.
        assert!(matches!(
            fit_scaling_exponent(2.0, 1.5f64.sqrt(), &[10, 20, 40], 5, 1),
            Err(Error::NonconvergentRule { .. })
        ));
    }
}
