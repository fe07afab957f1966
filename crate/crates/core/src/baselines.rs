//! Reference schemes: RZF precoding and uniformly random phase shifts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelEstimate;
use crate::gpi_precoder::{build_precoder_quadratics, run_gpi_precoder, GpiSettings, PrecoderGpiOutcome};
use crate::linalg::{hermitian_pd_inverse, CMat, CVec};
use crate::metrics::{effective_channels, PhaseShifts, Precoder};
use crate::scalar::{cis, lit, real, Real};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecoderKind {
    Rzf,
    Gpi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    Random,
    GpiRegularized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub precoder_kind: PrecoderKind,
    pub phase_kind: PhaseKind,
    pub rzf_regularizer: f64,
}

impl BaselineSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rzf_regularizer > 0.0) || !self.rzf_regularizer.is_finite() {
            return Err(Error::Config(format!(
                "RZF regularizer must be positive, got {}",
                self.rzf_regularizer
            )));
        }
        Ok(())
    }
}

/// `K sigma^2 / P`.
pub fn default_rzf_regularizer(n_users: usize, noise_over_power: f64) -> f64 {
    n_users as f64 * noise_over_power
}

/// `(H H^H + reg I)^{-1} H`, scaled to unit total power.
pub fn rzf_precoder<T: Real>(channels: &[CVec<T>], reg: T) -> Result<Precoder<T>> {
    if !(reg > T::zero()) {
        return Err(Error::Domain(format!("RZF regularizer must be positive, got {reg}")));
    }
    if channels.is_empty() {
        return Err(Error::Shape("RZF needs at least one user".into()));
    }
    let n = channels[0].len();
    let h = CMat::from_columns(channels);
    let gram = &h * h.adjoint() + CMat::identity(n, n) * real(reg);
    let f = hermitian_pd_inverse(&gram, "RZF Gram matrix")? * &h;
    let out = Precoder::new(f.column_iter().map(|c| c.into_owned()).collect())?;
    if out.total_power().is_zero() {
        return Err(Error::Domain("RZF precoder has zero power".into()));
    }
    Ok(out.normalized())
}

/// RZF on the estimated effective channels for the given phases.
pub fn rzf_for_phases<T: Real>(est: &ChannelEstimate<T>, phases: &PhaseShifts<T>, reg: T) -> Result<Precoder<T>> {
    rzf_precoder(&effective_channels(&est.cascaded_est, phases), reg)
}

/// Every element `exp(j theta)`, `theta` uniform on `[0, 2 pi)`.
pub fn random_phases<T: Real, R: Rng + ?Sized>(n_ris: usize, n_elems: usize, rng: &mut R) -> PhaseShifts<T> {
    let per_ris = (0..n_ris)
        .map(|_| CVec::from_fn(n_elems, |_, _| cis(lit::<T>(rng.random::<f64>() * std::f64::consts::TAU))))
        .collect();
    PhaseShifts::new(per_ris, true)
}

/// Precoder GPI started from RZF, phases held fixed.
pub fn gpi_for_phases<T: Real>(
    est: &ChannelEstimate<T>,
    phases: &PhaseShifts<T>,
    noise_over_power: T,
    reg: T,
    settings: &GpiSettings,
) -> Result<(Precoder<T>, PrecoderGpiOutcome<T>)> {
    let init = rzf_for_phases(est, phases, reg)?;
    let q = build_precoder_quadratics(est, phases, noise_over_power)?;
    let out = run_gpi_precoder(&q, &init.stacked(), settings)?;
    Ok((out.precoder(est.n_antennas())?, out))
}
