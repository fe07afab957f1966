//! Generalized power iteration for the stacked precoder `f = vec(F)`.
//!
//! `A_k = blkdiag(G_k, ..., G_k)` with `G_k = h_k h_k^H + Xi_k + (sigma^2/P) I`,
//! and `B_k` equals `A_k` with the signal term removed from block `k`.
//! Both are stored as their `N x N` blocks only.

use serde::{Deserialize, Serialize};

use crate::channel::ChannelEstimate;
use crate::linalg::{block_diag_solve, norm, norm2, quad_form, BlockDiag, CMat, CVec};
use crate::metrics::{effective_channels, xi_matrix, PhaseShifts, Precoder};
use crate::scalar::{lit, real, to_f64, Real};
use crate::{Error, Result};

/// Stopping rule shared by both GPI loops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpiSettings {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for GpiSettings {
    fn default() -> Self {
        Self {
            tol: 0.01,
            max_iters: 20,
        }
    }
}

impl GpiSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::Config(format!("GPI tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("GPI max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PrecoderQuadratics<T: Real> {
    /// `G_k`, the repeated diagonal block of `A_k`.
    pub a_blocks: Vec<CMat<T>>,
    /// `G_k - h_k h_k^H`, the `k`-th diagonal block of `B_k`.
    pub b_blocks: Vec<CMat<T>>,
    /// Estimated effective channels `h_k`.
    pub channels: Vec<CVec<T>>,
    pub n_antennas: usize,
}

pub fn build_precoder_quadratics<T: Real>(
    est: &ChannelEstimate<T>,
    phases: &PhaseShifts<T>,
    noise_over_power: T,
) -> Result<PrecoderQuadratics<T>> {
    if phases.n_ris() != est.n_ris() || phases.n_elems() != est.n_elems() {
        return Err(Error::Shape(format!(
            "phases {}x{} vs channel {}x{}",
            phases.n_ris(),
            phases.n_elems(),
            est.n_ris(),
            est.n_elems()
        )));
    }
    let n = est.n_antennas();
    let channels = effective_channels(&est.cascaded_est, phases);
    let shift = CMat::identity(n, n) * real(noise_over_power);
    let mut a_blocks = Vec::with_capacity(channels.len());
    let mut b_blocks = Vec::with_capacity(channels.len());
    for (h, row) in channels.iter().zip(&est.error_cov) {
        let b = xi_matrix(row, phases, n) + &shift;
        a_blocks.push(&b + h * h.adjoint());
        b_blocks.push(b);
    }
    Ok(PrecoderQuadratics {
        a_blocks,
        b_blocks,
        channels,
        n_antennas: n,
    })
}

impl<T: Real> PrecoderQuadratics<T> {
    pub fn n_users(&self) -> usize {
        self.a_blocks.len()
    }

    pub fn dim(&self) -> usize {
        self.n_antennas * self.n_users()
    }

    fn check(&self, f: &CVec<T>) -> Result<()> {
        if f.len() != self.dim() {
            return Err(Error::Shape(format!("precoder length {} vs N K = {}", f.len(), self.dim())));
        }
        Ok(())
    }

    /// `f^H A_k f` for every user.
    pub fn numerators(&self, f: &CVec<T>) -> Result<Vec<T>> {
        self.check(f)?;
        let n = self.n_antennas;
        let parts: Vec<CVec<T>> = (0..self.n_users()).map(|i| f.rows(i * n, n).into_owned()).collect();
        Ok(self
            .a_blocks
            .iter()
            .map(|g| parts.iter().fold(T::zero(), |acc, p| acc + quad_form(g, p)))
            .collect())
    }

    /// `f^H B_k f` for every user.
    pub fn denominators(&self, f: &CVec<T>) -> Result<Vec<T>> {
        let nums = self.numerators(f)?;
        let n = self.n_antennas;
        Ok(nums
            .into_iter()
            .enumerate()
            .map(|(k, a)| {
                let s = self.channels[k].dotc(&f.rows(k * n, n).into_owned());
                a - (s.re * s.re + s.im * s.im)
            })
            .collect())
    }

    /// Dense `A_k`, for tests.
    pub fn a_dense(&self, k: usize) -> CMat<T> {
        BlockDiag::new(vec![self.a_blocks[k].clone(); self.n_users()]).to_dense()
    }

    /// Dense `B_k`, for tests.
    pub fn b_dense(&self, k: usize) -> CMat<T> {
        let mut blocks = vec![self.a_blocks[k].clone(); self.n_users()];
        blocks[k] = self.b_blocks[k].clone();
        BlockDiag::new(blocks).to_dense()
    }

    /// `log2 lambda_BS(f) = sum_k log2(f^H A_k f / f^H B_k f)`.
    pub fn log2_lambda(&self, f: &CVec<T>) -> Result<T> {
        let a = self.numerators(f)?;
        let b = self.denominators(f)?;
        let mut total = T::zero();
        for (k, (ak, bk)) in a.iter().zip(&b).enumerate() {
            if !(*bk > T::zero()) {
                return Err(Error::NonPositiveQuadratic {
                    context: format!("f^H B_{k} f"),
                    value: to_f64(*bk),
                });
            }
            total += (*ak / *bk).log2();
        }
        Ok(total)
    }
}

/// `Abar` and `Bbar` at one iterate, with the eigenvalue folded into `Abar`
/// so that fixed points satisfy `Bbar^{-1} Abar f = f`.
#[derive(Debug, Clone)]
pub struct PrecoderGpiMatrices<T: Real> {
    /// Every diagonal block of `sum_k A_k / a_k` is this matrix.
    pub a_bar_block: CMat<T>,
    pub b_bar: BlockDiag<T>,
    pub log2_lambda: T,
}

impl<T: Real> PrecoderGpiMatrices<T> {
    pub fn apply_a(&self, f: &CVec<T>) -> CVec<T> {
        let n = self.a_bar_block.nrows();
        let mut out = CVec::zeros(f.len());
        for i in 0..f.len() / n {
            out.rows_mut(i * n, n).copy_from(&(&self.a_bar_block * f.rows(i * n, n)));
        }
        out
    }

    /// `Bbar^{-1} Abar f`.
    pub fn step(&self, f: &CVec<T>) -> Result<CVec<T>> {
        block_diag_solve(&self.b_bar.blocks, &self.apply_a(f))
    }
}

pub fn gpi_matrices<T: Real>(q: &PrecoderQuadratics<T>, f: &CVec<T>) -> Result<PrecoderGpiMatrices<T>> {
    if norm2(f).is_zero() {
        return Err(Error::Domain("GPI iterate is the zero vector".into()));
    }
    let a = q.numerators(f)?;
    let b = q.denominators(f)?;
    let n = q.n_antennas;
    let mut a_bar_block = CMat::zeros(n, n);
    let mut b_sum = CMat::zeros(n, n);
    let mut log2_lambda = T::zero();
    for k in 0..q.n_users() {
        if !(b[k] > T::zero()) {
            return Err(Error::NonPositiveQuadratic {
                context: format!("f^H B_{k} f"),
                value: to_f64(b[k]),
            });
        }
        a_bar_block += &q.a_blocks[k] * real(T::one() / a[k]);
        b_sum += &q.a_blocks[k] * real(T::one() / b[k]);
        log2_lambda += (a[k] / b[k]).log2();
    }
    let blocks = (0..q.n_users())
        .map(|i| {
            let h = &q.channels[i];
            &b_sum - (h * h.adjoint()) * real(T::one() / b[i])
        })
        .collect();
    Ok(PrecoderGpiMatrices {
        a_bar_block,
        b_bar: BlockDiag::new(blocks),
        log2_lambda,
    })
}

/// `||y - c x|| / |c|` with `c = x^H y`, for unit-norm `x`.
pub fn eigen_residual<T: Real>(y: &CVec<T>, x: &CVec<T>) -> T {
    let c = x.dotc(y);
    let mag = (c.re * c.re + c.im * c.im).sqrt();
    if mag.is_zero() {
        return T::max_value().unwrap_or_else(T::one);
    }
    norm(&(y - x * c)) / mag
}

/// Step length between unit vectors, insensitive to a sign flip.
pub(crate) fn signless_step<T: Real>(next: &CVec<T>, prev: &CVec<T>) -> T {
    let a = norm(&(next - prev));
    let b = norm(&(next + prev));
    if a < b {
        a
    } else {
        b
    }
}

#[derive(Debug, Clone)]
pub struct PrecoderGpiOutcome<T: Real> {
    /// Unit-norm stacked precoder.
    pub f: CVec<T>,
    pub iterations: usize,
    pub converged: bool,
    /// `||Bbar^{-1} Abar f - f||` at the returned iterate (eigenvalue folded).
    pub residual: T,
    pub log2_lambda: T,
    /// `log2 lambda_BS` at the initial point and after every iteration.
    pub trace: Vec<T>,
}

impl<T: Real> PrecoderGpiOutcome<T> {
    pub fn precoder(&self, n: usize) -> Result<Precoder<T>> {
        Precoder::from_stacked(&self.f, n, self.f.len() / n.max(1))
    }
}

pub fn run_gpi_precoder<T: Real>(
    q: &PrecoderQuadratics<T>,
    f_init: &CVec<T>,
    settings: &GpiSettings,
) -> Result<PrecoderGpiOutcome<T>> {
    settings.validate()?;
    let init_norm = norm(f_init);
    if init_norm.is_zero() {
        return Err(Error::Domain("initial precoder has zero norm".into()));
    }
    let tol = lit::<T>(settings.tol);
    let mut f = f_init * real(T::one() / init_norm);
    let mut mats = gpi_matrices(q, &f)?;
    let mut trace = vec![mats.log2_lambda];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < settings.max_iters {
        let y = mats.step(&f)?;
        let next = &y * real(T::one() / norm(&y));
        let step = signless_step(&next, &f);
        f = next;
        iterations += 1;
        mats = gpi_matrices(q, &f)?;
        trace.push(mats.log2_lambda);
        if step <= tol {
            converged = true;
            break;
        }
    }
    let residual = norm(&(mats.step(&f)? - &f));
    Ok(PrecoderGpiOutcome {
        f,
        iterations,
        converged,
        residual,
        log2_lambda: mats.log2_lambda,
        trace,
    })
}
