//! Sum spectral efficiency and the Jensen lower bound on instantaneous SE.
//!
//! The bound is available in two algebraic forms that must agree:
//! the precoder form uses `Xi_k = sum_l (phi_l^T (x) I_N) R^e_{k,l} (phi_l^T (x) I_N)^H`,
//! the phase form uses `Theta_{k,l} = sum_i (f_i^T (x) I_M) P conj(R^e_{k,l}) P^T (f_i^T (x) I_M)^H`.
//! Both are contracted blockwise from `R^e` without building Kronecker
//! products; the dense constructions are kept as test references.

use nalgebra::{Complex, DMatrix};
use rand::Rng;
use serde::Serialize;

use crate::channel::{ChannelEstimate, Covariance};
use crate::linalg::{kron, norm2, unvec, vec_cols, CMat, CVec};
use crate::scalar::{abs2, arg, cis, lit, real, to_f64, Real};
use crate::{Error, Result};

/// Stacked precoder `[f_1; ...; f_K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Precoder<T: Real> {
    pub vectors: Vec<CVec<T>>,
}

impl<T: Real> Precoder<T> {
    pub fn new(vectors: Vec<CVec<T>>) -> Result<Self> {
        if let Some(first) = vectors.first() {
            if vectors.iter().any(|v| v.len() != first.len()) {
                return Err(Error::Shape("precoding vectors differ in length".into()));
            }
        }
        Ok(Self { vectors })
    }

    pub fn zeros(n: usize, k: usize) -> Self {
        Self {
            vectors: vec![CVec::zeros(n); k],
        }
    }

    pub fn n_antennas(&self) -> usize {
        self.vectors.first().map_or(0, |v| v.len())
    }

    pub fn n_users(&self) -> usize {
        self.vectors.len()
    }

    /// `vec(F)`, length `N K`.
    pub fn stacked(&self) -> CVec<T> {
        let n = self.n_antennas();
        let mut out = CVec::zeros(n * self.n_users());
        for (k, f) in self.vectors.iter().enumerate() {
            out.rows_mut(k * n, n).copy_from(f);
        }
        out
    }

    pub fn from_stacked(v: &CVec<T>, n: usize, k: usize) -> Result<Self> {
        if v.len() != n * k {
            return Err(Error::Shape(format!(
                "stacked precoder has length {}, expected {n}*{k}",
                v.len()
            )));
        }
        Ok(Self {
            vectors: (0..k).map(|i| v.rows(i * n, n).into_owned()).collect(),
        })
    }

    /// `N x K` matrix `F`.
    pub fn matrix(&self) -> CMat<T> {
        CMat::from_columns(&self.vectors)
    }

    pub fn total_power(&self) -> T {
        self.vectors.iter().fold(T::zero(), |acc, f| acc + norm2(f))
    }

    /// Scaled to unit total power; a zero precoder is returned unchanged.
    pub fn normalized(&self) -> Self {
        let p = self.total_power();
        if p.is_zero() {
            return self.clone();
        }
        let s = real(T::one() / p.sqrt());
        Self {
            vectors: self.vectors.iter().map(|f| f * s).collect(),
        }
    }

    /// `Q = sum_i f_i f_i^H`.
    pub fn covariance(&self) -> CMat<T> {
        let m = self.matrix();
        &m * m.adjoint()
    }
}

/// RIS phase shifts, one length-`M` vector per surface.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseShifts<T: Real> {
    pub per_ris: Vec<CVec<T>>,
    /// Set when every entry has been projected onto the unit circle.
    pub projected: bool,
}

impl<T: Real> PhaseShifts<T> {
    pub fn new(per_ris: Vec<CVec<T>>, projected: bool) -> Self {
        Self { per_ris, projected }
    }

    pub fn ones(l: usize, m: usize) -> Self {
        Self {
            per_ris: vec![CVec::from_element(m, real(T::one())); l],
            projected: true,
        }
    }

    pub fn n_ris(&self) -> usize {
        self.per_ris.len()
    }

    pub fn n_elems(&self) -> usize {
        self.per_ris.first().map_or(0, |p| p.len())
    }

    pub fn stacked(&self) -> CVec<T> {
        let m = self.n_elems();
        let mut out = CVec::zeros(m * self.n_ris());
        for (l, p) in self.per_ris.iter().enumerate() {
            out.rows_mut(l * m, m).copy_from(p);
        }
        out
    }

    pub fn from_stacked(v: &CVec<T>, l: usize, projected: bool) -> Result<Self> {
        if l == 0 || v.len() % l != 0 {
            return Err(Error::Shape(format!(
                "cannot split {} phases over {l} surfaces",
                v.len()
            )));
        }
        let m = v.len() / l;
        Ok(Self {
            per_ris: (0..l).map(|i| v.rows(i * m, m).into_owned()).collect(),
            projected,
        })
    }

    /// `w = phi / sqrt(L M)`.
    pub fn normalized(&self) -> CVec<T> {
        let lm = lit::<T>((self.n_ris() * self.n_elems()) as f64);
        self.stacked() * real(T::one() / lm.sqrt())
    }

    /// Inverse of [`normalized`](Self::normalized): `phi = sqrt(L M) w`, unprojected.
    pub fn from_relaxed(w: &CVec<T>, l: usize) -> Result<Self> {
        let lm = lit::<T>(w.len() as f64);
        Self::from_stacked(&(w * real(lm.sqrt())), l, false)
    }

    /// `exp(j arg(phi))` entrywise.
    pub fn project(&self) -> Self {
        Self {
            per_ris: self
                .per_ris
                .iter()
                .map(|p| p.map(|z| cis(arg(z))))
                .collect(),
            projected: true,
        }
    }

    /// Largest deviation of any modulus from 1.
    pub fn max_modulus_error(&self) -> T {
        self.per_ris
            .iter()
            .flat_map(|p| p.iter())
            .fold(T::zero(), |m, z| {
                let d = (abs2(*z).sqrt() - T::one()).abs();
                if d > m {
                    d
                } else {
                    m
                }
            })
    }

    /// Multiplies every entry by the same complex scalar.
    pub fn rotated(&self, c: Complex<T>) -> Self {
        Self {
            per_ris: self.per_ris.iter().map(|p| p * c).collect(),
            projected: self.projected,
        }
    }
}

/// `h_k = sum_l H^r_{k,l} phi_l` for every user.
pub fn effective_channels<T: Real>(cascaded: &[Vec<CMat<T>>], phases: &PhaseShifts<T>) -> Vec<CVec<T>> {
    cascaded
        .iter()
        .map(|row| {
            row.iter()
                .zip(&phases.per_ris)
                .fold(CVec::zeros(row[0].nrows()), |acc, (h, p)| acc + h * p)
        })
        .collect()
}

fn check_shapes<T: Real>(cascaded: &[Vec<CMat<T>>], f: &Precoder<T>, phi: &PhaseShifts<T>) -> Result<()> {
    let k = cascaded.len();
    if f.n_users() != k {
        return Err(Error::Shape(format!("{} precoders for {k} users", f.n_users())));
    }
    for row in cascaded {
        if row.len() != phi.n_ris() {
            return Err(Error::Shape(format!("{} phase vectors for {} surfaces", phi.n_ris(), row.len())));
        }
        for h in row {
            if h.nrows() != f.n_antennas() || h.ncols() != phi.n_elems() {
                return Err(Error::Shape(format!(
                    "cascaded channel {}x{} vs N={} M={}",
                    h.nrows(),
                    h.ncols(),
                    f.n_antennas(),
                    phi.n_elems()
                )));
            }
        }
    }
    Ok(())
}

/// Per-user `log2(1 + |h_k^H f_k|^2 / (sum_{i!=k} |h_k^H f_i|^2 + extra_k + noise))`.
pub fn per_user_se<T: Real>(eff: &[CVec<T>], f: &Precoder<T>, extra: &[T], noise_over_power: T) -> Vec<T> {
    eff.iter()
        .enumerate()
        .map(|(k, h)| {
            let gains: Vec<T> = f.vectors.iter().map(|fi| abs2(h.dotc(fi))).collect();
            let signal = gains[k];
            let interference = gains.iter().enumerate().filter(|(i, _)| *i != k).fold(T::zero(), |a, (_, g)| a + *g);
            let denom = interference + extra[k] + noise_over_power;
            (T::one() + signal / denom).log2()
        })
        .collect()
}

fn sum<T: Real>(v: impl IntoIterator<Item = T>) -> T {
    v.into_iter().fold(T::zero(), |a, b| a + b)
}

/// Exact sum SE on the given (true) cascaded channels.
pub fn exact_sum_se<T: Real>(
    cascaded: &[Vec<CMat<T>>],
    f: &Precoder<T>,
    phi: &PhaseShifts<T>,
    noise_over_power: T,
) -> Result<T> {
    check_shapes(cascaded, f, phi)?;
    let eff = effective_channels(cascaded, phi);
    let zeros = vec![T::zero(); eff.len()];
    Ok(sum(per_user_se(&eff, f, &zeros, noise_over_power)))
}

/// `Xi_{k,l} = (phi^T (x) I_N) R (phi^T (x) I_N)^H`, contracted over the
/// `N x N` blocks of `R`.
pub fn xi_block<T: Real>(cov: &Covariance<T>, phi: &CVec<T>, n: usize) -> CMat<T> {
    match cov {
        Covariance::ScaledIdentity { scale, .. } => CMat::identity(n, n) * real(*scale * norm2(phi)),
        Covariance::Dense(r) => {
            let m = phi.len();
            let mut xi = CMat::zeros(n, n);
            for a in 0..m {
                for b in 0..m {
                    let c = phi[a] * phi[b].conj();
                    if c.re.is_zero() && c.im.is_zero() {
                        continue;
                    }
                    xi += r.view((n * a, n * b), (n, n)) * c;
                }
            }
            xi
        }
    }
}

/// `Xi_k = sum_l Xi_{k,l}`.
pub fn xi_matrix<T: Real>(error_cov: &[Covariance<T>], phases: &PhaseShifts<T>, n: usize) -> CMat<T> {
    error_cov
        .iter()
        .zip(&phases.per_ris)
        .fold(CMat::zeros(n, n), |acc, (cov, phi)| acc + xi_block(cov, phi, n))
}

/// Dense Kronecker reference for [`xi_block`].
pub fn xi_block_dense<T: Real>(r: &CMat<T>, phi: &CVec<T>, n: usize) -> CMat<T> {
    let sel = kron(&CMat::from_row_slice(1, phi.len(), phi.as_slice()), &CMat::identity(n, n));
    &sel * r * sel.adjoint()
}

/// `Theta_{k,l}` for one error covariance and precoder covariance `Q`.
///
/// Entry `(a, b)` is `conj(sum_i f_i^H R_{ab} f_i)` where `R_{ab}` is the
/// `(a, b)` block of `R`.
pub fn theta_block<T: Real>(cov: &Covariance<T>, q: &CMat<T>, m: usize) -> CMat<T> {
    match cov {
        Covariance::ScaledIdentity { scale, .. } => {
            let power = sum((0..q.nrows()).map(|i| q[(i, i)].re));
            CMat::identity(m, m) * real(*scale * power)
        }
        Covariance::Dense(r) => {
            let n = q.nrows();
            let qt = q.transpose();
            CMat::from_fn(m, m, |a, b| {
                let blk = r.view((n * a, n * b), (n, n));
                // sum_{n,n'} R_ab[n,n'] Q[n',n] = sum of entrywise R_ab .* Q^T
                let s = blk.iter().zip(qt.iter()).fold(Complex::new(T::zero(), T::zero()), |acc, (x, y)| acc + x * y);
                s.conj()
            })
        }
    }
}

/// Commutation matrix `P` with `P vec(E) = vec(E^T)` for `E` of shape `n x m`.
pub fn commutation_matrix<T: Real>(n: usize, m: usize) -> DMatrix<T> {
    let mut p = DMatrix::zeros(n * m, n * m);
    for i in 0..n {
        for j in 0..m {
            p[(j + m * i, i + n * j)] = T::one();
        }
    }
    p
}

/// Dense reference for [`theta_block`] through the commutation matrix.
pub fn theta_block_dense<T: Real>(r: &CMat<T>, f: &Precoder<T>, m: usize) -> CMat<T> {
    let n = f.n_antennas();
    let p = commutation_matrix::<T>(n, m).map(real);
    let core = &p * r.conjugate() * p.transpose();
    let eye = CMat::identity(m, m);
    f.vectors.iter().fold(CMat::zeros(m, m), |acc, fi| {
        let sel = kron(&CMat::from_row_slice(1, fi.len(), fi.as_slice()), &eye);
        acc + &sel * &core * sel.adjoint()
    })
}

/// Error-induced interference `sum_i f_i^H Xi_k f_i` for every user.
pub fn error_terms_precoder_form<T: Real>(est: &ChannelEstimate<T>, f: &Precoder<T>, phi: &PhaseShifts<T>) -> Vec<T> {
    let n = est.n_antennas();
    let q = f.covariance();
    est.error_cov
        .iter()
        .map(|row| {
            let xi = xi_matrix(row, phi, n);
            // sum_i f_i^H Xi f_i = tr(Xi Q)
            sum((0..n).flat_map(|a| (0..n).map(move |b| (a, b))).map(|(a, b)| (xi[(a, b)] * q[(b, a)]).re))
        })
        .collect()
}

/// Error-induced interference `sum_l phi_l^H Theta_{k,l} phi_l` for every user.
pub fn error_terms_phase_form<T: Real>(est: &ChannelEstimate<T>, f: &Precoder<T>, phi: &PhaseShifts<T>) -> Vec<T> {
    let m = est.n_elems();
    let q = f.covariance();
    est.error_cov
        .iter()
        .map(|row| {
            sum(row
                .iter()
                .zip(&phi.per_ris)
                .map(|(cov, p)| p.dotc(&(theta_block(cov, &q, m) * p)).re))
        })
        .collect()
}

/// Per-user Jensen lower bound on instantaneous SE (precoder form).
pub fn lower_bound_per_user<T: Real>(
    est: &ChannelEstimate<T>,
    f: &Precoder<T>,
    phi: &PhaseShifts<T>,
    noise_over_power: T,
) -> Result<Vec<T>> {
    check_shapes(&est.cascaded_est, f, phi)?;
    let eff = effective_channels(&est.cascaded_est, phi);
    let extra = error_terms_precoder_form(est, f, phi);
    Ok(per_user_se(&eff, f, &extra, noise_over_power))
}

/// Sum of the instantaneous-SE lower bounds, precoder form.
pub fn lower_bound_sum_se<T: Real>(
    est: &ChannelEstimate<T>,
    f: &Precoder<T>,
    phi: &PhaseShifts<T>,
    noise_over_power: T,
) -> Result<T> {
    Ok(sum(lower_bound_per_user(est, f, phi, noise_over_power)?))
}

/// Same bound evaluated through the phase-domain quadratics `Theta_{k,l}`.
pub fn lower_bound_phase_form<T: Real>(
    est: &ChannelEstimate<T>,
    f: &Precoder<T>,
    phi: &PhaseShifts<T>,
    noise_over_power: T,
) -> Result<T> {
    check_shapes(&est.cascaded_est, f, phi)?;
    let eff = effective_channels(&est.cascaded_est, phi);
    let extra = error_terms_phase_form(est, f, phi);
    Ok(sum(per_user_se(&eff, f, &extra, noise_over_power)))
}

/// `||sqrt(LM) |w| - 1||^2 / LM`.
pub fn nmse_unit_modulus<T: Real>(w: &CVec<T>) -> Result<T> {
    if w.is_empty() || norm2(w).is_zero() {
        return Err(Error::Domain("NMSE of a zero vector is undefined".into()));
    }
    let lm = lit::<T>(w.len() as f64);
    let scale = lm.sqrt();
    let err = w.iter().fold(T::zero(), |acc, z| {
        let d = scale * abs2(*z).sqrt() - T::one();
        acc + d * d
    });
    Ok(err / lm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n_draws: usize,
}

/// Monte Carlo instantaneous SE: mean of the exact sum SE over channels
/// `Hhat + E` with `E ~ CN(0, R^e)`.
pub fn mc_instantaneous_se<T: Real, R: Rng + ?Sized>(
    est: &ChannelEstimate<T>,
    f: &Precoder<T>,
    phi: &PhaseShifts<T>,
    noise_over_power: T,
    n_draws: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    if n_draws == 0 {
        return Err(Error::Domain("n_draws must be at least 1".into()));
    }
    check_shapes(&est.cascaded_est, f, phi)?;
    let (n, m) = (est.n_antennas(), est.n_elems());
    let all_zero = est.error_cov.iter().flatten().all(|c| c.is_zero());
    if all_zero {
        let v = to_f64(exact_sum_se(&est.cascaded_est, f, phi, noise_over_power)?);
        return Ok(McEstimate {
            mean: v,
            std_err: 0.0,
            n_draws,
        });
    }
    let mut samples = Vec::with_capacity(n_draws);
    let mut channel = est.cascaded_est.clone();
    for _ in 0..n_draws {
        for (k, row) in est.cascaded_est.iter().enumerate() {
            for (l, hhat) in row.iter().enumerate() {
                let e = est.error_cov[k][l].sample(rng)?;
                channel[k][l] = unvec(&(vec_cols(hhat) + e), n, m)?;
            }
        }
        samples.push(to_f64(exact_sum_se(&channel, f, phi, noise_over_power)?));
    }
    let count = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / count;
    let var = if samples.len() > 1 {
        samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1.0)
    } else {
        0.0
    };
    Ok(McEstimate {
        mean,
        std_err: (var / count).sqrt(),
        n_draws,
    })
}
