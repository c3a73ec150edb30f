//! Truncated Fock-basis oracle.
//!
//! Everything in this module works on dense density matrices in a photon
//! number basis cut off at `n_cut`, with no Gaussian assumptions: the filter
//! `g^n` is an element-wise rescaling, photon loss is a Kraus sum, covariance
//! entries come from ladder-operator moments, and the Husimi function from
//! coherent-state overlaps. It exists to check the closed-form covariance
//! calculus in [`crate::cm`] and [`crate::channel`] from first principles, so
//! it deliberately shares no formulas with them.

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSpec, EprSource};
use crate::cm::{FilterSpec, Party, StandardFormCm};
use crate::error::{Error, Result};

/// Default Fock cutoff; states occupy levels `0..=n_cut`.
pub const DEFAULT_N_CUT: usize = 60;

/// Acceptable truncation leakage `1 - tr(stored block)` for constructors with
/// a known untruncated reference.
pub const LEAK_TOL: f64 = 1e-10;

/// Dense one- or two-mode density operator in a truncated Fock basis.
///
/// Two-mode matrices are indexed as `rho[(j d + k, l d + m)]` where `j, l`
/// are Alice's and `k, m` Bob's photon numbers and `d = n_cut + 1`. States
/// produced by filtering are left unnormalized; their trace is the filter
/// success weight.
#[derive(Debug, Clone)]
pub struct FockDensity {
    modes: usize,
    dim: usize,
    mat: Array2<Complex64>,
}

/// Standard-form covariance entries extracted from a Fock-basis state,
/// together with the residual of all matrix entries that must vanish in
/// standard form and the magnitude of the first moments (which must be 0).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CmExtraction {
    pub cm: StandardFormCm,
    pub residual: f64,
    pub mean_magnitude: f64,
}

impl FockDensity {
    fn zeros(modes: usize, n_cut: usize) -> Self {
        let dim = n_cut + 1;
        let side = dim.pow(modes as u32);
        Self {
            modes,
            dim,
            mat: Array2::zeros((side, side)),
        }
    }

    /// Vacuum state.
    pub fn vacuum(modes: usize, n_cut: usize) -> Result<Self> {
        if !(modes == 1 || modes == 2) {
            return Err(Error::InvalidParam("modes must be 1 or 2".into()));
        }
        let mut rho = Self::zeros(modes, n_cut);
        rho.mat[(0, 0)] = Complex64::new(1.0, 0.0);
        Ok(rho)
    }

    /// Two-mode squeezed vacuum `sqrt(1 - lambda^2) sum lambda^n |n,n>`,
    /// stored with its exact untruncated amplitudes (trace `1 -
    /// lambda^(2(n_cut+1))`).
    pub fn tmsv(lambda: f64, n_cut: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::InvalidParam(format!(
                "lambda must lie in [0, 1), got {lambda}"
            )));
        }
        let leakage = lambda.powi(2 * (n_cut as i32 + 1));
        if leakage >= LEAK_TOL {
            return Err(Error::CutoffTooSmall { leakage, tol: LEAK_TOL });
        }
        let dim = n_cut + 1;
        let norm = (1.0 - lambda * lambda).sqrt();
        let amps: Vec<f64> = (0..dim).map(|n| norm * lambda.powi(n as i32)).collect();
        let mut rho = Self::zeros(2, n_cut);
        for (n, &an) in amps.iter().enumerate() {
            for (m, &am) in amps.iter().enumerate() {
                rho.mat[(n * dim + n, m * dim + m)] = Complex64::new(an * am, 0.0);
            }
        }
        Ok(rho)
    }

    /// Single-mode thermal state with Boltzmann ratio `w` (mean photon
    /// number `w / (1 - w)`).
    pub fn thermal(w: f64, n_cut: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&w) {
            return Err(Error::InvalidParam(format!(
                "thermal ratio must lie in [0, 1), got {w}"
            )));
        }
        let leakage = w.powi(n_cut as i32 + 1);
        if leakage >= LEAK_TOL {
            return Err(Error::CutoffTooSmall { leakage, tol: LEAK_TOL });
        }
        let mut rho = Self::zeros(1, n_cut);
        for n in 0..=n_cut {
            rho.mat[(n, n)] = Complex64::new((1.0 - w) * w.powi(n as i32), 0.0);
        }
        Ok(rho)
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// Per-mode dimension `n_cut + 1`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_cut(&self) -> usize {
        self.dim - 1
    }

    /// Matrix element in the photon-number basis. Two-mode states take
    /// `(j k, l m)` packed as `(j d + k, l d + m)`.
    pub fn element(&self, row: usize, col: usize) -> Complex64 {
        self.mat[(row, col)]
    }

    pub fn trace(&self) -> f64 {
        (0..self.mat.nrows()).map(|i| self.mat[(i, i)].re).sum()
    }

    /// Largest deviation from Hermiticity, for validity checks in tests.
    pub fn hermiticity_residual(&self) -> f64 {
        let n = self.mat.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                let d = (self.mat[(i, j)] - self.mat[(j, i)].conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }

    /// Filter `g^n` on the selected mode: `rho[jk,lm] -> g^(k+m) rho[jk,lm]`
    /// for Bob, `g^(j+l)` for Alice. The output trace carries the success
    /// weight. Single-mode states have only one mode and ignore the selector.
    pub fn apply_filter(&self, filter: FilterSpec, mode: Party) -> Result<Self> {
        let g = filter.gain;
        if g > 1.0 && 2.0 * self.n_cut() as f64 * g.ln() > 700.0 {
            return Err(Error::Overflow { gain: g, n_cut: self.n_cut() });
        }
        let powers: Vec<f64> = (0..self.dim).map(|n| g.powi(n as i32)).collect();
        let d = self.dim;
        let side = self.mat.nrows();
        let factors: Vec<f64> = if self.modes == 1 {
            powers.clone()
        } else {
            (0..side)
                .map(|r| match mode {
                    Party::Bob => powers[r % d],
                    Party::Alice => powers[r / d],
                })
                .collect()
        };
        let mut out = self.clone();
        for (r, row) in out
            .mat
            .as_slice_mut()
            .expect("standard layout")
            .chunks_mut(side)
            .enumerate()
        {
            let fr = factors[r];
            for (v, fc) in row.iter_mut().zip(&factors) {
                *v *= fr * fc;
            }
        }
        Ok(out)
    }

    /// Pure photon loss with transmittance `t` on the selected mode, as the
    /// Kraus sum `sum_q K_q rho K_q^+` with
    /// `K_q |n> = sqrt(binom(n, q) t^(n-q) (1-t)^q) |n-q>`.
    pub fn apply_pure_loss(&self, t: f64, mode: Party) -> Result<Self> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "transmittance must lie in (0, 1], got {t}"
            )));
        }
        if t == 1.0 {
            return Ok(self.clone());
        }
        if self.modes == 2 && mode == Party::Alice {
            Ok(self.swap_modes().loss_on_last_mode(t).swap_modes())
        } else {
            Ok(self.loss_on_last_mode(t))
        }
    }

    /// Kraus coefficients `coef[q][n'] = K_q[n', n' + q]`, evaluated in log
    /// space (binomials overflow exact f64 integers beyond n = 56).
    fn kraus_coefficients(&self, t: f64) -> Vec<Vec<f64>> {
        let d = self.dim;
        let mut ln_fact = vec![0.0f64; d];
        for n in 1..d {
            ln_fact[n] = ln_fact[n - 1] + (n as f64).ln();
        }
        let (ln_t, ln_r) = (t.ln(), (1.0 - t).ln());
        (0..d)
            .map(|q| {
                (0..d - q)
                    .map(|n_out| {
                        let n = n_out + q;
                        let ln_binom = ln_fact[n] - ln_fact[q] - ln_fact[n - q];
                        (0.5 * (ln_binom + (n - q) as f64 * ln_t + q as f64 * ln_r)).exp()
                    })
                    .collect()
            })
            .collect()
    }

    /// Loss on Bob's mode (or the only mode). Output rows are independent,
    /// so the accumulation parallelizes without changing any result. Input
    /// rows that are exactly zero contribute nothing and are skipped, which
    /// makes the Kraus sum cheap on the sparse states this oracle starts
    /// from without changing a single bit of the result.
    fn loss_on_last_mode(&self, t: f64) -> Self {
        let d = self.dim;
        let blocks = if self.modes == 2 { d } else { 1 };
        let coef = self.kraus_coefficients(t);
        let side = self.mat.nrows();
        let input = self.mat.as_slice().expect("standard layout");
        let row_live: Vec<bool> = (0..side)
            .map(|r| input[r * side..(r + 1) * side].iter().any(|v| v.re != 0.0 || v.im != 0.0))
            .collect();
        let mut out = Self::zeros(self.modes, self.n_cut());
        out.mat
            .as_slice_mut()
            .expect("standard layout")
            .par_chunks_mut(side)
            .enumerate()
            .for_each(|(row, out_row)| {
                let (j, k_out) = (row / d, row % d);
                for (q, cq) in coef.iter().enumerate().take(d - k_out) {
                    let in_row_idx = j * d + k_out + q;
                    if !row_live[in_row_idx] {
                        continue;
                    }
                    let wk = cq[k_out];
                    let in_row = &input[in_row_idx * side..][..side];
                    for l in 0..blocks {
                        let out_seg = &mut out_row[l * d..l * d + d - q];
                        let in_seg = &in_row[l * d + q..(l + 1) * d];
                        for (o, (i, cm)) in out_seg.iter_mut().zip(in_seg.iter().zip(cq)) {
                            let w = wk * cm;
                            o.re += w * i.re;
                            o.im += w * i.im;
                        }
                    }
                }
            });
        out
    }

    /// Two-mode index swap `(j k, l m) -> (k j, m l)`.
    pub fn swap_modes(&self) -> Self {
        assert_eq!(self.modes, 2, "swap_modes needs a two-mode state");
        let d = self.dim;
        let mut out = Self::zeros(2, self.n_cut());
        for ((r, c), v) in self.mat.indexed_iter() {
            out.mat[((r % d) * d + r / d, (c % d) * d + c / d)] = *v;
        }
        out
    }

    /// Reduced state of one mode of a two-mode density operator.
    pub fn partial_trace(&self, keep: Party) -> Result<Self> {
        if self.modes != 2 {
            return Err(Error::InvalidParam("partial_trace needs a two-mode state".into()));
        }
        let d = self.dim;
        let mut out = Self::zeros(1, self.n_cut());
        for i in 0..d {
            for j in 0..d {
                let mut s = Complex64::default();
                for r in 0..d {
                    s += match keep {
                        Party::Bob => self.mat[(r * d + i, r * d + j)],
                        Party::Alice => self.mat[(i * d + r, j * d + r)],
                    };
                }
                out.mat[(i, j)] = s;
            }
        }
        Ok(out)
    }

    /// Husimi Q-function `<beta| rho |beta> / pi` of a single-mode state via
    /// the coherent-state expansion.
    pub fn husimi_at(&self, beta: Complex64) -> Result<f64> {
        if self.modes != 1 {
            return Err(Error::InvalidParam("husimi_at needs a single-mode state".into()));
        }
        let d = self.dim;
        let mut coherent = Vec::with_capacity(d);
        let mut c = Complex64::new((-0.5 * beta.norm_sqr()).exp(), 0.0);
        coherent.push(c);
        for n in 1..d {
            c = c * beta / (n as f64).sqrt();
            coherent.push(c);
        }
        let mut acc = Complex64::default();
        for n in 0..d {
            let mut row = Complex64::default();
            for m in 0..d {
                row += self.mat[(n, m)] * coherent[m];
            }
            acc += coherent[n].conj() * row;
        }
        Ok(acc.re / std::f64::consts::PI)
    }

    /// Standard-form covariance entries from ladder-operator moments of a
    /// two-mode state (normalized internally):
    ///
    /// ```text
    /// a = 2<n_A> + 1,  b = 2<n_B> + 1,  c = 2 Re<a b>
    /// ```
    ///
    /// The residual gathers everything standard form forbids: `<a^2>`,
    /// `<b^2>`, `<a b^+>` and `Im<a b>`. Fails with `NotStandardForm` when
    /// the residual or a first moment exceeds 1e-8.
    pub fn covariance(&self) -> Result<CmExtraction> {
        if self.modes != 2 {
            return Err(Error::InvalidParam("covariance needs a two-mode state".into()));
        }
        let d = self.dim;
        let tr = self.trace();
        if tr <= 0.0 {
            return Err(Error::NumericalDomain(format!("trace = {tr} <= 0")));
        }
        let root = |n: usize| (n as f64).sqrt();

        let mut mean_a = Complex64::default();
        let mut mean_b = Complex64::default();
        let mut num_a = 0.0f64;
        let mut num_b = 0.0f64;
        let mut sq_a = Complex64::default();
        let mut sq_b = Complex64::default();
        let mut ab = Complex64::default();
        let mut a_bdag = Complex64::default();

        // Tr[O rho] = sum over columns of <j,k| O rho |j,k>, with
        // <j,k| a = sqrt(j+1) <j+1,k| and so on.
        for j in 0..d {
            for k in 0..d {
                let col = j * d + k;
                let diag = self.mat[(col, col)].re;
                num_a += j as f64 * diag;
                num_b += k as f64 * diag;
                if j + 1 < d {
                    mean_a += root(j + 1) * self.mat[((j + 1) * d + k, col)];
                }
                if k + 1 < d {
                    mean_b += root(k + 1) * self.mat[(j * d + k + 1, col)];
                }
                if j + 2 < d {
                    sq_a += root(j + 1) * root(j + 2) * self.mat[((j + 2) * d + k, col)];
                }
                if k + 2 < d {
                    sq_b += root(k + 1) * root(k + 2) * self.mat[(j * d + k + 2, col)];
                }
                if j + 1 < d && k + 1 < d {
                    ab += root(j + 1) * root(k + 1) * self.mat[((j + 1) * d + k + 1, col)];
                }
                if j + 1 < d && k > 0 {
                    a_bdag += root(j + 1) * root(k) * self.mat[((j + 1) * d + k - 1, col)];
                }
            }
        }
        mean_a /= tr;
        mean_b /= tr;
        num_a /= tr;
        num_b /= tr;
        sq_a /= tr;
        sq_b /= tr;
        ab /= tr;
        a_bdag /= tr;

        let cm = StandardFormCm {
            a: 2.0 * num_a + 1.0,
            b: 2.0 * num_b + 1.0,
            c: 2.0 * ab.re,
        };
        let residual = (2.0 * sq_a.norm())
            .max(2.0 * sq_b.norm())
            .max(2.0 * a_bdag.norm())
            .max(2.0 * ab.im.abs());
        let mean_magnitude = mean_a.norm().max(mean_b.norm());
        if residual > 1e-8 || mean_magnitude > 1e-8 {
            return Err(Error::NotStandardForm {
                residual: residual.max(mean_magnitude),
            });
        }
        Ok(CmExtraction { cm, residual, mean_magnitude })
    }
}

/// Side-by-side run of the Gaussian and Fock pipelines
/// (EPR/TMSV -> pure loss -> filter) with the entrywise deviation between
/// their covariance matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleCheckReport {
    pub lambda: f64,
    pub gain: f64,
    pub transmittance: f64,
    pub n_cut: usize,
    pub leak_tol: f64,
    pub gaussian_cm: StandardFormCm,
    pub fock_cm: StandardFormCm,
    /// Non-standard-form residual of the Fock extraction.
    pub fock_residual: f64,
    /// Filter success weight measured as the Fock trace ratio.
    pub fock_filter_weight: f64,
    pub max_abs_deviation: f64,
}

/// Runs `tmsv -> pure loss -> filter` through both the covariance calculus
/// and the truncated Fock basis and compares the results entry by entry.
pub fn oracle_check(lambda: f64, gain: f64, t: f64, n_cut: usize) -> Result<OracleCheckReport> {
    let filter = FilterSpec::new(gain)?;

    let gaussian_cm = ChannelSpec::loss(t, 0.0)?
        .apply(EprSource::from_lambda(lambda)?.cm())?
        .apply_filter(filter)?;

    let rho = FockDensity::tmsv(lambda, n_cut)?;
    let rho = rho.apply_pure_loss(t, Party::Bob)?;
    let before = rho.trace();
    let rho = rho.apply_filter(filter, Party::Bob)?;
    let extraction = rho.covariance()?;
    let fock_cm = extraction.cm;

    let max_abs_deviation = (gaussian_cm.a - fock_cm.a)
        .abs()
        .max((gaussian_cm.b - fock_cm.b).abs())
        .max((gaussian_cm.c - fock_cm.c).abs());

    Ok(OracleCheckReport {
        lambda,
        gain,
        transmittance: t,
        n_cut,
        leak_tol: LEAK_TOL,
        gaussian_cm,
        fock_cm,
        fock_residual: extraction.residual,
        fock_filter_weight: rho.trace() / before,
        max_abs_deviation,
    })
}
