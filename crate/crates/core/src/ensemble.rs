//! Ensemble container, sample statistics and RTPS inflation.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// `M` state vectors of a common dimension, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    dim: usize,
    data: Vec<f64>,
}

impl Ensemble {
    pub fn from_members(members: Vec<Vec<f64>>) -> Result<Self> {
        let dim = members
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Config("ensemble needs at least one member".into()))?;
        let mut data = Vec::with_capacity(dim * members.len());
        for m in &members {
            check_dim(dim, m.len())?;
            data.extend_from_slice(m);
        }
        Ok(Self { dim, data })
    }

    /// Wraps a row-major `size x dim` buffer.
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(Error::Config(format!(
                "flat buffer of length {} is not a whole number of members of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn size(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn member(&self, m: usize) -> &[f64] {
        &self.data[m * self.dim..(m + 1) * self.dim]
    }

    pub fn member_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.data[m * self.dim..(m + 1) * self.dim]
    }

    pub fn members(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }

    pub fn members_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.data.chunks_mut(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    /// Member mean, accumulated as departures from the first member so that
    /// identical members give their exact value.
    pub fn mean(&self) -> Vec<f64> {
        let first = self.member(0);
        let mut acc = vec![0.0; self.dim];
        for m in self.members().skip(1) {
            for ((a, b), f) in acc.iter_mut().zip(m).zip(first) {
                *a += b - f;
            }
        }
        let inv = 1.0 / self.size() as f64;
        first.iter().zip(acc).map(|(f, a)| f + a * inv).collect()
    }

    /// Per-component sample standard deviation (divisor `M - 1`).
    pub fn spread(&self) -> Result<Vec<f64>> {
        Ok(decompose(self)?.spread)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Mean, perturbations and per-component spread of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub mean: Vec<f64>,
    /// Member minus mean, row-major like the ensemble.
    pub perts: Ensemble,
    pub spread: Vec<f64>,
}

impl EnsembleStats {
    /// `mean + perts`, member by member.
    pub fn recompose(&self) -> Ensemble {
        let mut out = self.perts.clone();
        for row in out.members_mut() {
            for (v, m) in row.iter_mut().zip(&self.mean) {
                *v += m;
            }
        }
        out
    }

    /// Mean of the per-component spread.
    pub fn mean_spread(&self) -> f64 {
        self.spread.iter().sum::<f64>() / self.spread.len() as f64
    }
}

pub fn decompose(ens: &Ensemble) -> Result<EnsembleStats> {
    let m = ens.size();
    if m < 2 {
        return Err(Error::Config(format!(
            "ensemble statistics need at least 2 members, got {m}"
        )));
    }
    let mean = ens.mean();
    let mut perts = ens.clone();
    let mut var = vec![0.0; ens.dim()];
    for row in perts.members_mut() {
        for ((v, mu), s) in row.iter_mut().zip(&mean).zip(var.iter_mut()) {
            *v -= mu;
            *s += *v * *v;
        }
    }
    let inv = 1.0 / (m - 1) as f64;
    let spread = var.into_iter().map(|s| (s * inv).sqrt()).collect();
    Ok(EnsembleStats { mean, perts, spread })
}

/// Relaxation to prior spread, applied per component.
///
/// Analysis perturbations are scaled by `1 + alpha (sb - sa) / sa`; components
/// whose analysis spread is zero keep factor 1. Returns the rescaled ensemble
/// and the number of such collapsed components.
pub fn apply_rtps(prior_spread: &[f64], analysis: &Ensemble, alpha: f64) -> Result<(Ensemble, usize)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("RTPS coefficient must lie in [0, 1], got {alpha}")));
    }
    check_dim(analysis.dim(), prior_spread.len())?;
    let stats = decompose(analysis)?;
    let mut collapsed = 0;
    let factor = stats
        .spread
        .iter()
        .zip(prior_spread)
        .map(|(&sa, &sb)| {
            if sa > 0.0 {
                1.0 + alpha * (sb - sa) / sa
            } else {
                collapsed += 1;
                1.0
            }
        })
        .collect::<Vec<_>>();
    if collapsed > 0 {
        log::warn!("RTPS: {collapsed} components with zero analysis spread left unscaled");
    }
    let mut out = stats.perts;
    for row in out.members_mut() {
        for ((v, f), mu) in row.iter_mut().zip(&factor).zip(&stats.mean) {
            *v = mu + *v * f;
        }
    }
    Ok((out, collapsed))
}
