//! Regularized generalized power iteration for the RIS phase shifts.
//!
//! Works on the normalized relaxed vector `w = phi / sqrt(L M)`. The
//! unit-modulus constraint is replaced by a LogSumExp-smoothed penalty on
//! `max_i |w_i|^2 - min_i |w_i|^2`; the result is projected back onto the
//! unit circle.

use std::time::Instant;

use nalgebra::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelEstimate;
use crate::gpi_precoder::{eigen_residual, signless_step, GpiSettings};
use crate::linalg::{block_diag_solve, cholesky_solve_in_place, norm, norm2, BlockDiag, CMat, CVec};
use crate::metrics::{nmse_unit_modulus, theta_block, PhaseShifts, Precoder};
use crate::scalar::{abs2, cis, lit, real, to_f64, Real};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerSettings {
    pub mu: f64,
    pub tau: f64,
    pub r_sigma: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl RegularizerSettings {
    /// `tau = 1/(L M)` and `alpha1 = alpha2 = 2`.
    pub fn new(mu: f64, r_sigma: f64, n_phase: usize) -> Self {
        Self {
            mu,
            tau: 1.0 / n_phase as f64,
            r_sigma,
            alpha1: 2.0,
            alpha2: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(Error::Config(format!("mu must be nonnegative, got {}", self.mu)));
        }
        positive("tau", self.tau)?;
        positive("r_sigma", self.r_sigma)?;
        positive("alpha1", self.alpha1)?;
        positive("alpha2", self.alpha2)
    }
}

#[derive(Debug, Clone)]
pub struct RisQuadratics<T: Real> {
    /// `c_blocks[k][l] = L M (H_{k,l}^H Q H_{k,l} + Theta_{k,l}) + (sigma^2/P) I`.
    pub c_blocks: Vec<Vec<CMat<T>>>,
    /// As `c_blocks` with `Q` replaced by `Qbar_k = Q - f_k f_k^H` in the signal term.
    pub d_blocks: Vec<Vec<CMat<T>>>,
    /// `g_{k,l} = sqrt(L M) H_{k,l}^H f_k`, so `C_{k,l} - D_{k,l} = g_{k,l} g_{k,l}^H`.
    pub signal_gains: Vec<Vec<CVec<T>>>,
    pub q_mat: CMat<T>,
    pub qbar_mats: Vec<CMat<T>>,
    pub n_ris: usize,
    pub n_elems: usize,
}

pub fn build_ris_quadratics<T: Real>(
    est: &ChannelEstimate<T>,
    f: &Precoder<T>,
    noise_over_power: T,
) -> Result<RisQuadratics<T>> {
    if f.n_users() != est.n_users() || f.n_antennas() != est.n_antennas() {
        return Err(Error::Shape(format!(
            "precoder {}x{} vs channel N={} K={}",
            f.n_antennas(),
            f.n_users(),
            est.n_antennas(),
            est.n_users()
        )));
    }
    let (l, m) = (est.n_ris(), est.n_elems());
    let lm = real(lit::<T>((l * m) as f64));
    let shift = CMat::identity(m, m) * real(noise_over_power);
    let q_mat = f.covariance();
    let qbar_mats: Vec<CMat<T>> = f.vectors.iter().map(|fk| &q_mat - fk * fk.adjoint()).collect();
    let mut c_blocks = Vec::with_capacity(est.n_users());
    let mut d_blocks = Vec::with_capacity(est.n_users());
    let root_lm = real(lit::<T>(((l * m) as f64).sqrt()));
    let signal_gains = est
        .cascaded_est
        .iter()
        .zip(&f.vectors)
        .map(|(row, fk)| row.iter().map(|h| h.ad_mul(fk) * root_lm).collect())
        .collect();
    for (k, row) in est.cascaded_est.iter().enumerate() {
        let mut c_row = Vec::with_capacity(l);
        let mut d_row = Vec::with_capacity(l);
        for (ell, h) in row.iter().enumerate() {
            let theta = theta_block(&est.error_cov[k][ell], &q_mat, m);
            let hh = h.adjoint();
            let ups = &hh * &q_mat * h;
            let ups_bar = &hh * &qbar_mats[k] * h;
            c_row.push((ups + &theta) * lm + &shift);
            d_row.push((ups_bar + theta) * lm + &shift);
        }
        c_blocks.push(c_row);
        d_blocks.push(d_row);
    }
    Ok(RisQuadratics {
        c_blocks,
        d_blocks,
        signal_gains,
        q_mat,
        qbar_mats,
        n_ris: l,
        n_elems: m,
    })
}

/// `y = b x` for a square column-major block.
fn block_product<T: Real>(b: &CMat<T>, x: &[Complex<T>], y: &mut [Complex<T>]) {
    for (col, xj) in b.as_slice().chunks_exact(x.len()).zip(x) {
        for (yi, bij) in y.iter_mut().zip(col) {
            *yi += *bij * *xj;
        }
    }
}

fn blockwise_quad<T: Real>(blocks: &[CMat<T>], w: &CVec<T>, m: usize) -> T {
    let mut acc = T::zero();
    for (l, b) in blocks.iter().enumerate() {
        let x = &w.as_slice()[l * m..(l + 1) * m];
        for (j, xj) in x.iter().enumerate() {
            let col = b.column(j);
            let mut s = Complex::new(T::zero(), T::zero());
            for (i, xi) in x.iter().enumerate() {
                s += xi.conj() * col[i];
            }
            acc += (s * xj).re;
        }
    }
    acc
}

impl<T: Real> RisQuadratics<T> {
    pub fn n_users(&self) -> usize {
        self.c_blocks.len()
    }

    pub fn dim(&self) -> usize {
        self.n_ris * self.n_elems
    }

    fn check(&self, w: &CVec<T>) -> Result<()> {
        if w.len() != self.dim() {
            return Err(Error::Shape(format!("phase vector length {} vs L M = {}", w.len(), self.dim())));
        }
        Ok(())
    }

    /// `w^H C_k w` for every user.
    pub fn numerators(&self, w: &CVec<T>) -> Result<Vec<T>> {
        self.check(w)?;
        Ok(self.c_blocks.iter().map(|b| blockwise_quad(b, w, self.n_elems)).collect())
    }

    /// `w^H D_k w` for every user.
    pub fn denominators(&self, w: &CVec<T>) -> Result<Vec<T>> {
        self.check(w)?;
        Ok(self.d_blocks.iter().map(|b| blockwise_quad(b, w, self.n_elems)).collect())
    }

    pub fn c_dense(&self, k: usize) -> CMat<T> {
        BlockDiag::new(self.c_blocks[k].clone()).to_dense()
    }

    pub fn d_dense(&self, k: usize) -> CMat<T> {
        BlockDiag::new(self.d_blocks[k].clone()).to_dense()
    }
}

/// `|w_i|^2`, the quadratic form of the `i`-th single-entry selector.
pub fn penalty_quadratic<T: Real>(w: &CVec<T>, i: usize) -> Result<T> {
    if i >= w.len() {
        return Err(Error::Domain(format!("selector index {i} out of range for length {}", w.len())));
    }
    Ok(abs2(w[i]))
}

fn max_of<T: Real>(values: &[T]) -> T {
    values.iter().skip(1).fold(values[0], |m, &v| if v > m { v } else { m })
}

fn check_smooth_args<T: Real>(values: &[T], alpha: T) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Domain("LogSumExp of an empty list".into()));
    }
    if !(alpha > T::zero()) {
        return Err(Error::Domain(format!("LogSumExp sharpness must be positive, got {alpha}")));
    }
    Ok(())
}

/// Stabilized `ln sum_i exp(z_i)`.
fn log_sum_exp<T: Real>(z: &[T]) -> T {
    let top = max_of(z);
    top + z.iter().fold(T::zero(), |acc, &v| acc + (v - top).exp()).ln()
}

/// `(1/alpha) ln sum_i exp(alpha x_i)`, an upper bound on the maximum.
pub fn smooth_max<T: Real>(values: &[T], alpha: T) -> Result<T> {
    check_smooth_args(values, alpha)?;
    if values.len() == 1 {
        return Ok(values[0]);
    }
    let z: Vec<T> = values.iter().map(|&x| alpha * x).collect();
    Ok(log_sum_exp(&z) / alpha)
}

/// `-alpha ln sum_i exp(-x_i / alpha)`, a lower bound on the minimum.
pub fn smooth_min<T: Real>(values: &[T], alpha: T) -> Result<T> {
    check_smooth_args(values, alpha)?;
    if values.len() == 1 {
        return Ok(values[0]);
    }
    let z: Vec<T> = values.iter().map(|&x| -x / alpha).collect();
    Ok(-alpha * log_sum_exp(&z))
}

fn normalized_exp<T: Real>(z: &[T]) -> Vec<T> {
    let top = max_of(z);
    let e: Vec<T> = z.iter().map(|&v| (v - top).exp()).collect();
    let s = e.iter().fold(T::zero(), |a, &b| a + b);
    e.into_iter().map(|v| v / s).collect()
}

/// Gradient weights of [`smooth_max`]: `exp(alpha x_i) / sum_j exp(alpha x_j)`.
pub fn softmax_weights<T: Real>(values: &[T], alpha: T) -> Vec<T> {
    normalized_exp(&values.iter().map(|&x| alpha * x).collect::<Vec<_>>())
}

/// Gradient weights of [`smooth_min`]: `exp(-x_i/alpha) / sum_j exp(-x_j/alpha)`.
pub fn softmin_weights<T: Real>(values: &[T], alpha: T) -> Vec<T> {
    normalized_exp(&values.iter().map(|&x| -x / alpha).collect::<Vec<_>>())
}

fn moduli<T: Real>(w: &CVec<T>) -> Vec<T> {
    w.iter().map(|z| abs2(*z)).collect()
}

fn ratio_terms<T: Real>(q: &RisQuadratics<T>, w: &CVec<T>) -> Result<(Vec<T>, Vec<T>)> {
    let c = q.numerators(w)?;
    let d = q.denominators(w)?;
    for (k, (ck, dk)) in c.iter().zip(&d).enumerate() {
        if !(*ck > T::zero()) {
            return Err(Error::NonPositiveQuadratic {
                context: format!("w^H C_{k} w"),
                value: to_f64(*ck),
            });
        }
        if !(*dk > T::zero()) {
            return Err(Error::NonPositiveQuadratic {
                context: format!("w^H D_{k} w"),
                value: to_f64(*dk),
            });
        }
    }
    Ok((c, d))
}

/// `log2 lambda_RIS(w)`: the smoothed regularized objective.
pub fn log2_lambda_ris<T: Real>(q: &RisQuadratics<T>, reg: &RegularizerSettings, w: &CVec<T>) -> Result<T> {
    reg.validate()?;
    let (c, d) = ratio_terms(q, w)?;
    Ok(log2_lambda_from(&c, &d, &moduli(w), reg))
}

fn log2_ratio_term<T: Real>(c: &[T], d: &[T], reg: &RegularizerSettings) -> T {
    c.iter().zip(d).fold(T::zero(), |acc, (ck, dk)| acc + (*ck / *dk).log2()) / lit::<T>(reg.r_sigma)
}

/// Both log-sum-exp sums of the penalty and their gradient weights from one
/// pass of exponentials per direction.
struct SmoothTerms<T> {
    lse_max: T,
    lse_min: T,
    softmax: Vec<T>,
    softmin: Vec<T>,
}

impl<T: Real> SmoothTerms<T> {
    fn new(x: &[T], reg: &RegularizerSettings) -> Self {
        let (a1, a2) = (lit::<T>(reg.alpha1), lit::<T>(reg.alpha2));
        let (lo, hi) = x.iter().skip(1).fold((x[0], x[0]), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let (top_max, top_min) = (a1 * hi, -lo / a2);
        let mut softmax = Vec::with_capacity(x.len());
        let mut softmin = Vec::with_capacity(x.len());
        let (mut sum_max, mut sum_min) = (T::zero(), T::zero());
        for &v in x {
            let (e1, e2) = ((a1 * v - top_max).exp(), (-v / a2 - top_min).exp());
            sum_max += e1;
            sum_min += e2;
            softmax.push(e1);
            softmin.push(e2);
        }
        let (inv_max, inv_min) = (T::one() / sum_max, T::one() / sum_min);
        softmax.iter_mut().for_each(|v| *v *= inv_max);
        softmin.iter_mut().for_each(|v| *v *= inv_min);
        SmoothTerms {
            lse_max: top_max + sum_max.ln(),
            lse_min: top_min + sum_min.ln(),
            softmax,
            softmin,
        }
    }

    /// `-(mu/tau) (smax_{alpha1} - smin_{alpha2})` in log2 units.
    fn log2_penalty(&self, reg: &RegularizerSettings) -> T {
        let (a1, a2) = (lit::<T>(reg.alpha1), lit::<T>(reg.alpha2));
        let mu_tau = lit::<T>(reg.mu / reg.tau);
        -mu_tau * (self.lse_max / a1 + a2 * self.lse_min)
    }
}

fn log2_lambda_from<T: Real>(c: &[T], d: &[T], x: &[T], reg: &RegularizerSettings) -> T {
    let ratio = log2_ratio_term(c, d, reg);
    if reg.mu == 0.0 {
        return ratio;
    }
    ratio + SmoothTerms::new(x, reg).log2_penalty(reg)
}

pub fn lambda_ris<T: Real>(q: &RisQuadratics<T>, reg: &RegularizerSettings, w: &CVec<T>) -> Result<T> {
    Ok(log2_lambda_ris(q, reg, w)?.exp2())
}

/// `Cbar` and `Dbar` at one iterate, eigenvalue folded into `Cbar`.
#[derive(Debug, Clone)]
pub struct RisGpiMatrices<T: Real> {
    pub c_bar: BlockDiag<T>,
    pub d_bar: BlockDiag<T>,
    pub softmax: Vec<T>,
    pub softmin: Vec<T>,
    pub log2_lambda: T,
}

impl<T: Real> RisGpiMatrices<T> {
    /// `Dbar^{-1} Cbar w`.
    pub fn step(&self, w: &CVec<T>) -> Result<CVec<T>> {
        block_diag_solve(&self.d_bar.blocks, &self.c_bar.apply(w)?)
    }
}

/// `acc += s * b` without a temporary.
fn accumulate<T: Real>(acc: &mut CMat<T>, b: &CMat<T>, s: T) {
    for (a, v) in acc.iter_mut().zip(b.iter()) {
        a.re += v.re * s;
        a.im += v.im * s;
    }
}

pub fn ris_gpi_matrices<T: Real>(
    q: &RisQuadratics<T>,
    reg: &RegularizerSettings,
    w: &CVec<T>,
) -> Result<RisGpiMatrices<T>> {
    if norm2(w).is_zero() {
        return Err(Error::Domain("GPI iterate is the zero vector".into()));
    }
    reg.validate()?;
    let (c, d) = ratio_terms(q, w)?;
    let x = moduli(w);
    let log2_lambda = log2_lambda_from(&c, &d, &x, reg);
    let m = q.n_elems;
    let scale = T::one() / (lit::<T>(reg.r_sigma) * lit::<T>(std::f64::consts::LN_2));
    let softmax = softmax_weights(&x, lit(reg.alpha1));
    let softmin = softmin_weights(&x, lit(reg.alpha2));
    let mu_tau = lit::<T>(reg.mu / reg.tau);
    let mut c_bar = Vec::with_capacity(q.n_ris);
    let mut d_bar = Vec::with_capacity(q.n_ris);
    for l in 0..q.n_ris {
        let mut cb = CMat::zeros(m, m);
        let mut db = CMat::zeros(m, m);
        for k in 0..q.n_users() {
            accumulate(&mut cb, &q.c_blocks[k][l], scale / c[k]);
            accumulate(&mut db, &q.d_blocks[k][l], scale / d[k]);
        }
        if reg.mu > 0.0 {
            for i in 0..m {
                cb[(i, i)] += real(mu_tau * softmin[l * m + i]);
                db[(i, i)] += real(mu_tau * softmax[l * m + i]);
            }
        }
        c_bar.push(cb);
        d_bar.push(db);
    }
    Ok(RisGpiMatrices {
        c_bar: BlockDiag::new(c_bar),
        d_bar: BlockDiag::new(d_bar),
        softmax,
        softmin,
        log2_lambda,
    })
}

#[derive(Debug, Clone)]
pub struct RisGpiOutcome<T: Real> {
    /// Relaxed unit-norm solution.
    pub w: CVec<T>,
    /// `exp(j arg(w))`, all moduli exactly one.
    pub phases: PhaseShifts<T>,
    pub iterations: usize,
    pub converged: bool,
    /// `||Dbar^{-1} Cbar w - w||` (eigenvalue folded).
    pub residual: T,
    /// `||y - c w|| / |c|` with `y = Dbar^{-1} Cbar w`, `c = w^H y`.
    pub eigen_residual: T,
    pub nmse: T,
    pub log2_lambda: T,
    pub trace: Vec<T>,
    /// Wall time of the iteration loop body.
    pub loop_secs: f64,
}

pub fn run_gpi_ris<T: Real>(
    q: &RisQuadratics<T>,
    reg: &RegularizerSettings,
    w_init: &CVec<T>,
    settings: &GpiSettings,
) -> Result<RisGpiOutcome<T>> {
    settings.validate()?;
    reg.validate()?;
    let init_norm = norm(w_init);
    if init_norm.is_zero() {
        return Err(Error::Domain("initial phase vector has zero norm".into()));
    }
    let tol = lit::<T>(settings.tol);
    let mut w = w_init * real(T::one() / init_norm);
    let start = Instant::now();
    let (mut y, mut log2_lambda) = gpi_step(q, reg, &w)?;
    let mut trace = vec![log2_lambda];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < settings.max_iters {
        let next = &y * real(T::one() / norm(&y));
        let step = signless_step(&next, &w);
        w = next;
        iterations += 1;
        (y, log2_lambda) = gpi_step(q, reg, &w)?;
        trace.push(log2_lambda);
        if step <= tol {
            converged = true;
            break;
        }
    }
    let loop_secs = start.elapsed().as_secs_f64();
    let residual = norm(&(&y - &w));
    let eigen_residual = eigen_residual(&y, &w);
    let phases = PhaseShifts::from_relaxed(&w, q.n_ris)?.project();
    let nmse = nmse_unit_modulus(&w)?;
    Ok(RisGpiOutcome {
        w,
        phases,
        iterations,
        converged,
        residual,
        eigen_residual,
        nmse,
        log2_lambda,
        trace,
        loop_secs,
    })
}

/// `(Dbar^{-1} Cbar w, log2 lambda_RIS(w))` without assembling `Cbar`.
///
/// `Cbar w` is formed from the products `C_{k,l} w_l` that the quadratic
/// forms need anyway, and only the lower triangle of each `Dbar` block is
/// accumulated since the factorization reads nothing else.
pub fn gpi_step<T: Real>(q: &RisQuadratics<T>, reg: &RegularizerSettings, w: &CVec<T>) -> Result<(CVec<T>, T)> {
    q.check(w)?;
    let (m, n_users, lm) = (q.n_elems, q.n_users(), q.dim());
    let zero = Complex::new(T::zero(), T::zero());
    let one = real(T::one());
    // column k holds C_k w
    let mut cw = CMat::zeros(lm, n_users);
    let mut c = Vec::with_capacity(n_users);
    let mut d = Vec::with_capacity(n_users);
    for k in 0..n_users {
        let mut col = cw.column_mut(k);
        for (l, b) in q.c_blocks[k].iter().enumerate() {
            block_product(b, &w.as_slice()[l * m..(l + 1) * m], &mut col.as_mut_slice()[l * m..(l + 1) * m]);
        }
        let ck = w.dotc(&col).re;
        let signal = q.signal_gains[k]
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (l, g)| acc + abs2(g.dotc(&w.rows(l * m, m))));
        c.push(ck);
        d.push(ck - signal);
    }
    for k in 0..n_users {
        for (name, v) in [("C", c[k]), ("D", d[k])] {
            if !(v > T::zero()) {
                return Err(Error::NonPositiveQuadratic {
                    context: format!("w^H {name}_{k} w"),
                    value: to_f64(v),
                });
            }
        }
    }
    let scale = T::one() / (lit::<T>(reg.r_sigma) * lit::<T>(std::f64::consts::LN_2));
    let mu_tau = lit::<T>(reg.mu / reg.tau);
    let penalized = reg.mu > 0.0;
    let smooth = penalized.then(|| SmoothTerms::new(&moduli(w), reg));
    let log2_lambda = log2_ratio_term(&c, &d, reg) + smooth.as_ref().map_or(T::zero(), |t| t.log2_penalty(reg));

    let weights: Vec<Complex<T>> = c.iter().map(|ck| real(scale / *ck)).collect();
    let mut out = CVec::zeros(lm);
    out.gemv(one, &cw, &CVec::from_vec(weights), zero);
    if let Some(t) = &smooth {
        for (i, r) in out.iter_mut().enumerate() {
            *r += w[i] * real(mu_tau * t.softmin[i]);
        }
    }

    let mut blk = vec![zero; m * m];
    for l in 0..q.n_ris {
        blk.iter_mut().for_each(|v| *v = zero);
        for k in 0..n_users {
            let s = scale / d[k];
            let src = q.d_blocks[k][l].as_slice();
            for j in 0..m {
                let range = j * m + j..(j + 1) * m;
                for (a, b) in blk[range.clone()].iter_mut().zip(&src[range]) {
                    a.re += b.re * s;
                    a.im += b.im * s;
                }
            }
        }
        if let Some(t) = &smooth {
            for i in 0..m {
                blk[i * m + i].re += mu_tau * t.softmax[l * m + i];
            }
        }
        if !cholesky_solve_in_place(&mut blk, m, &mut out.as_mut_slice()[l * m..(l + 1) * m]) {
            return Err(Error::NotPositiveDefinite { index: l });
        }
    }
    Ok((out, log2_lambda))
}

/// `exp(j theta) / sqrt(n)` with i.i.d. uniform phases.
pub fn random_relaxed_init<T: Real, R: Rng + ?Sized>(n: usize, rng: &mut R) -> CVec<T> {
    let s = lit::<T>(1.0 / (n as f64).sqrt());
    CVec::from_fn(n, |_, _| cis(lit::<T>(rng.random::<f64>() * std::f64::consts::TAU)) * real(s))
}
