//! Binary dump/load of channel realizations for regression fixtures.
//!
//! Layout: the magic bytes `GPIF`, a little-endian `u32` header length, a
//! UTF-8 JSON header describing shapes, then every complex entry as two
//! little-endian `f64` values `(re, im)`. Matrices are written column-major in
//! the order listed by the header (`bs_ris`, `ris_user`, then for estimates
//! `cascaded_est` and any dense covariances, user-major then RIS).

use std::io::{Read, Write};

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelEstimate, ChannelSet, Covariance};
use crate::linalg::{CMat, CVec};
use crate::scalar::{lit, to_f64, Real};
use crate::scenario::Point;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"GPIF";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum CovHeader {
    ScaledIdentity { scale: f64 },
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Header {
    ChannelSet {
        n_antennas: usize,
        n_users: usize,
        n_ris: usize,
        n_elems: usize,
        gain_bs_ris: Vec<f64>,
        gain_ris_user: Vec<Vec<f64>>,
        user_positions: Vec<Point>,
    },
    ChannelEstimate {
        n_antennas: usize,
        n_users: usize,
        n_ris: usize,
        n_elems: usize,
        error_cov: Vec<Vec<CovHeader>>,
        prior_cov: Vec<Vec<CovHeader>>,
    },
}

fn put<T: Real>(buf: &mut Vec<u8>, values: &[Complex<T>]) {
    for z in values {
        buf.extend_from_slice(&to_f64(z.re).to_le_bytes());
        buf.extend_from_slice(&to_f64(z.im).to_le_bytes());
    }
}

struct Payload<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Payload<'_> {
    fn take<T: Real>(&mut self, count: usize) -> Result<Vec<Complex<T>>> {
        let need = count * 16;
        if self.pos + need > self.bytes.len() {
            return Err(Error::Shape(format!(
                "fixture payload truncated: need {need} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + need];
        self.pos += need;
        Ok(slice
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
                let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
                Complex::new(lit(re), lit(im))
            })
            .collect())
    }

    fn matrix<T: Real>(&mut self, rows: usize, cols: usize) -> Result<CMat<T>> {
        Ok(CMat::from_vec(rows, cols, self.take(rows * cols)?))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Shape(format!(
                "fixture has {} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn write_frame(w: &mut impl Write, header: &Header, payload: &[u8]) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Shape("fixture header too large".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(payload)?;
    Ok(())
}

fn read_frame(r: &mut impl Read) -> Result<(Header, Vec<u8>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Shape("not a channel fixture (bad magic)".into()));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header = serde_json::from_slice(&json)?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    Ok((header, payload))
}

pub fn write_channel_set<T: Real>(w: &mut impl Write, set: &ChannelSet<T>) -> Result<()> {
    let header = Header::ChannelSet {
        n_antennas: set.n_antennas(),
        n_users: set.n_users(),
        n_ris: set.n_ris(),
        n_elems: set.n_elems(),
        gain_bs_ris: set.gain_bs_ris.clone(),
        gain_ris_user: set.gain_ris_user.clone(),
        user_positions: set.user_positions.clone(),
    };
    let mut payload = Vec::new();
    for h in &set.bs_ris {
        put(&mut payload, h.as_slice());
    }
    for per_ris in &set.ris_user {
        for h in per_ris {
            put(&mut payload, h.as_slice());
        }
    }
    write_frame(w, &header, &payload)
}

pub fn read_channel_set<T: Real>(r: &mut impl Read) -> Result<ChannelSet<T>> {
    let (header, bytes) = read_frame(r)?;
    let Header::ChannelSet {
        n_antennas,
        n_users,
        n_ris,
        n_elems,
        gain_bs_ris,
        gain_ris_user,
        user_positions,
    } = header
    else {
        return Err(Error::Shape("fixture holds a channel estimate, not a channel set".into()));
    };
    let mut p = Payload { bytes: &bytes, pos: 0 };
    let bs_ris = (0..n_ris)
        .map(|_| p.matrix(n_antennas, n_elems))
        .collect::<Result<Vec<_>>>()?;
    let ris_user = (0..n_ris)
        .map(|_| {
            (0..n_users)
                .map(|_| Ok(CVec::from_vec(p.take(n_elems)?)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    p.finish()?;
    let mut set = ChannelSet::from_parts(bs_ris, ris_user, gain_bs_ris, gain_ris_user)?;
    set.user_positions = user_positions;
    Ok(set)
}

fn cov_header<T: Real>(c: &Covariance<T>) -> CovHeader {
    match c {
        Covariance::ScaledIdentity { scale, .. } => CovHeader::ScaledIdentity { scale: to_f64(*scale) },
        Covariance::Dense(_) => CovHeader::Dense,
    }
}

pub fn write_channel_estimate<T: Real>(w: &mut impl Write, est: &ChannelEstimate<T>) -> Result<()> {
    let grid = |g: &Vec<Vec<Covariance<T>>>| g.iter().map(|r| r.iter().map(cov_header).collect()).collect();
    let header = Header::ChannelEstimate {
        n_antennas: est.n_antennas(),
        n_users: est.n_users(),
        n_ris: est.n_ris(),
        n_elems: est.n_elems(),
        error_cov: grid(&est.error_cov),
        prior_cov: grid(&est.prior_cov),
    };
    let mut payload = Vec::new();
    for h in est.cascaded_est.iter().flatten() {
        put(&mut payload, h.as_slice());
    }
    for c in est.error_cov.iter().chain(&est.prior_cov).flatten() {
        if let Covariance::Dense(m) = c {
            put(&mut payload, m.as_slice());
        }
    }
    write_frame(w, &header, &payload)
}

pub fn read_channel_estimate<T: Real>(r: &mut impl Read) -> Result<ChannelEstimate<T>> {
    let (header, bytes) = read_frame(r)?;
    let Header::ChannelEstimate {
        n_antennas,
        n_users,
        n_ris,
        n_elems,
        error_cov,
        prior_cov,
    } = header
    else {
        return Err(Error::Shape("fixture holds a channel set, not an estimate".into()));
    };
    let mut p = Payload { bytes: &bytes, pos: 0 };
    let cascaded_est = (0..n_users)
        .map(|_| {
            (0..n_ris)
                .map(|_| p.matrix(n_antennas, n_elems))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let dim = n_antennas * n_elems;
    let mut grid = |g: Vec<Vec<CovHeader>>| -> Result<Vec<Vec<Covariance<T>>>> {
        if g.len() != n_users || g.iter().any(|r| r.len() != n_ris) {
            return Err(Error::Shape("covariance grid does not match K x L".into()));
        }
        g.into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|c| match c {
                        CovHeader::ScaledIdentity { scale } => Ok(Covariance::ScaledIdentity { dim, scale: lit(scale) }),
                        CovHeader::Dense => Ok(Covariance::Dense(p.matrix(dim, dim)?)),
                    })
                    .collect()
            })
            .collect()
    };
    let error_cov = grid(error_cov)?;
    let prior_cov = grid(prior_cov)?;
    p.finish()?;
    Ok(ChannelEstimate {
        cascaded_est,
        error_cov,
        prior_cov,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::estimate_channels;
    use crate::scenario::SystemConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> SystemConfig {
        let mut c = SystemConfig::default().with_ris_elems(2, 2);
        c.n_bs_antennas = 3;
        c.n_users = 2;
        c
    }

    #[test]
    fn channel_set_round_trip() {
        let set = ChannelSet::<f64>::synthesize(&cfg(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut buf = Vec::new();
        write_channel_set(&mut buf, &set).unwrap();
        let back: ChannelSet<f64> = read_channel_set(&mut buf.as_slice()).unwrap();
        assert_eq!(back.bs_ris, set.bs_ris);
        assert_eq!(back.ris_user, set.ris_user);
        assert_eq!(back.cascaded, set.cascaded);
        assert_eq!(back.gain_ris_user, set.gain_ris_user);
        assert_eq!(back.user_positions, set.user_positions);
    }

    #[test]
    fn estimate_round_trip_with_dense_covariance() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let set = ChannelSet::<f64>::synthesize(&c, &mut rng).unwrap();
        let mut est = estimate_channels(&set, &c, &mut rng).unwrap();
        est.error_cov[1][0] = Covariance::Dense(est.error_cov[1][0].to_dense());
        let mut buf = Vec::new();
        write_channel_estimate(&mut buf, &est).unwrap();
        let back: ChannelEstimate<f64> = read_channel_estimate(&mut buf.as_slice()).unwrap();
        assert_eq!(back.cascaded_est, est.cascaded_est);
        assert_eq!(back.error_cov, est.error_cov);
        assert_eq!(back.prior_cov, est.prior_cov);
    }

    #[test]
    fn wrong_kind_and_truncation_rejected() {
        let set = ChannelSet::<f64>::synthesize(&cfg(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut buf = Vec::new();
        write_channel_set(&mut buf, &set).unwrap();
        assert!(read_channel_estimate::<f64>(&mut buf.as_slice()).is_err());
        buf.pop();
        assert!(read_channel_set::<f64>(&mut buf.as_slice()).is_err());
        assert!(read_channel_set::<f64>(&mut &b"XXXX"[..]).is_err());
    }
}
