//! Error statistics and kinetic-energy spectra.

use std::io::Write;
use std::path::Path;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::error::{check_dim, Error, Result};
use crate::sqg::SqgModel;

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::Config("rmse of empty vectors".into()));
    }
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// KE density binned by integer total wavenumber, bins `1..=nx/3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub wavenumbers: Vec<usize>,
    pub values: Vec<f64>,
}

impl Spectrum {
    fn zeros(max_bin: usize) -> Self {
        Self {
            wavenumbers: (1..=max_bin).collect(),
            values: vec![0.0; max_bin],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    fn check_bins(&self, other: &Spectrum) -> Result<()> {
        if self.wavenumbers != other.wavenumbers {
            return Err(Error::Config("spectra have different wavenumber bins".into()));
        }
        Ok(())
    }

    /// Bin-wise mean of several spectra.
    pub fn average(spectra: &[Spectrum]) -> Result<Spectrum> {
        let first = spectra
            .first()
            .ok_or_else(|| Error::Config("cannot average zero spectra".into()))?;
        let mut out = Spectrum::zeros(first.len());
        out.wavenumbers = first.wavenumbers.clone();
        for s in spectra {
            first.check_bins(s)?;
            for (o, v) in out.values.iter_mut().zip(&s.values) {
                *o += v;
            }
        }
        let n = spectra.len() as f64;
        out.values.iter_mut().for_each(|v| *v /= n);
        Ok(out)
    }
}

/// Largest bin reported for a model grid.
pub fn max_bin(model: &SqgModel) -> usize {
    model.params().nx.min(model.params().ny) / 3
}

/// Kinetic energy spectrum of the flow induced by a two-surface theta field,
/// summed over both surfaces. Values are domain-mean KE (m^2/s^2) per bin.
pub fn ke_spectrum(theta_grid: &[f64], model: &SqgModel) -> Result<Spectrum> {
    let spec = model.to_spectral(theta_grid)?;
    spectrum_of_spec(&spec, model)
}

fn spectrum_of_spec(theta_spec: &[Complex64], model: &SqgModel) -> Result<Spectrum> {
    let psi = model.invert_theta(theta_spec)?;
    let p = model.params();
    let (ny, nkx) = (p.ny, model.nkx());
    let norm = 1.0 / ((p.nx * p.ny) as f64).powi(2);
    let top = max_bin(model);
    let mut out = Spectrum::zeros(top);
    let plane = ny * nkx;
    for (idx, c) in psi.iter().enumerate() {
        let k = idx % plane;
        let (j, i) = (k / nkx, k % nkx);
        if !model.is_resolved(j, i) {
            continue;
        }
        let bin = model.wavenumber_bin(j, i);
        if bin == 0 || bin > top {
            continue;
        }
        let (kx, ky) = model.wavenumber(j, i);
        // half-plane storage: interior x-wavenumbers stand for a conjugate pair
        let mult = if i == 0 || 2 * i == p.nx { 1.0 } else { 2.0 };
        out.values[bin - 1] += mult * 0.5 * (kx * kx + ky * ky) * c.norm_sqr() * norm;
    }
    Ok(out)
}

/// Error spectrum of the ensemble mean and perturbation spectrum (member
/// average scaled by `M/(M-1)`).
pub fn error_and_spread_spectra(analysis: &Ensemble, truth: &[f64], model: &SqgModel) -> Result<(Spectrum, Spectrum)> {
    let m = analysis.size();
    if m < 2 {
        return Err(Error::Config(format!("spread spectrum needs at least 2 members, got {m}")));
    }
    check_dim(analysis.dim(), truth.len())?;
    let mean = analysis.mean();
    let err = mean.iter().zip(truth).map(|(a, t)| a - t).collect::<Vec<_>>();
    let error = ke_spectrum(&err, model)?;
    let perts = analysis
        .members()
        .map(|x| {
            let d = x.iter().zip(&mean).map(|(a, b)| a - b).collect::<Vec<_>>();
            ke_spectrum(&d, model)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut spread = Spectrum::average(&perts)?;
    let scale = m as f64 / (m - 1) as f64;
    spread.values.iter_mut().for_each(|v| *v *= scale);
    Ok((error, spread))
}

/// Spread over error per bin; `None` where the error bin is zero.
pub fn consistency_ratio(spread: &Spectrum, error: &Spectrum) -> Result<Vec<Option<f64>>> {
    spread.check_bins(error)?;
    Ok(spread
        .values
        .iter()
        .zip(&error.values)
        .map(|(s, e)| (*e > 0.0).then(|| s / e))
        .collect())
}

/// `100 (reference - candidate) / reference` per bin; `None` where the
/// reference bin is zero.
pub fn percent_improvement(reference: &Spectrum, candidate: &Spectrum) -> Result<Vec<Option<f64>>> {
    reference.check_bins(candidate)?;
    Ok(reference
        .values
        .iter()
        .zip(&candidate.values)
        .map(|(r, c)| (*r > 0.0).then(|| 100.0 * (r - c) / r))
        .collect())
}

/// Writes a `wavenumber,value` CSV; undefined bins are written as `nan`.
pub fn write_spectrum_csv(path: &Path, wavenumbers: &[usize], values: &[Option<f64>]) -> Result<()> {
    check_dim(wavenumbers.len(), values.len())?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "wavenumber,value")?;
    for (k, v) in wavenumbers.iter().zip(values) {
        match v {
            Some(v) => writeln!(out, "{k},{v}")?,
            None => writeln!(out, "{k},nan")?,
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_spectrum(path: &Path, spectrum: &Spectrum) -> Result<()> {
    let values = spectrum.values.iter().map(|v| Some(*v)).collect::<Vec<_>>();
    write_spectrum_csv(path, &spectrum.wavenumbers, &values)
}

/// Reads a `wavenumber,value` CSV back; `nan` entries become `None`.
pub fn read_spectrum_csv(path: &Path) -> Result<(Vec<usize>, Vec<Option<f64>>)> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["wavenumber", "value"] {
        return Err(Error::Schema(format!("{}: unexpected header {:?}", path.display(), headers)));
    }
    let mut ks = Vec::new();
    let mut vs = Vec::new();
    for row in reader.records() {
        let row = row?;
        let parse_err = |what: &str| Error::Schema(format!("{}: bad {what} in {:?}", path.display(), row));
        ks.push(row[0].parse().map_err(|_| parse_err("wavenumber"))?);
        let v: f64 = row[1].parse().map_err(|_| parse_err("value"))?;
        vs.push((!v.is_nan()).then_some(v));
    }
    Ok((ks, vs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sqg::SqgParams;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> SqgModel {
        SqgModel::new(SqgParams::for_grid(32)).unwrap()
    }

    fn band_limited(m: &SqgModel, seed: u64) -> Vec<f64> {
        let g = crate::rng::standard_normal_vec(&mut ChaCha8Rng::seed_from_u64(seed), m.grid_len());
        let s = m.state_from_grid(&g, 0.0).unwrap();
        m.grid(&s).unwrap()
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_relative_eq!(rmse(&[1.5, -2.0, 0.0], &[-0.5, -4.0, -2.0]).unwrap(), 2.0);
        assert_relative_eq!(rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 12.5f64.sqrt());
        assert!(rmse(&[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_field_has_zero_spectrum() {
        let m = model();
        let s = ke_spectrum(&vec![0.0; m.grid_len()], &m).unwrap();
        assert!(s.values.iter().all(|v| *v == 0.0));
        assert_eq!(s.wavenumbers, (1..=10).collect::<Vec<_>>());
    }

    #[test]
    fn single_harmonic_lands_in_its_bin() {
        let m = model();
        let mut g = vec![0.0; m.grid_len()];
        for j in 0..32 {
            for i in 0..32 {
                let phase = 2.0 * std::f64::consts::PI * (3.0 * i as f64 + 4.0 * j as f64) / 32.0;
                g[32 * 32 + j * 32 + i] = phase.cos();
            }
        }
        let s = ke_spectrum(&g, &m).unwrap();
        for (k, v) in s.wavenumbers.iter().zip(&s.values) {
            if *k == 5 {
                assert!(*v > 0.0);
            } else {
                assert!(v.abs() < 1e-12 * s.total());
            }
        }
    }

    #[test]
    fn parseval_matches_grid_kinetic_energy() {
        // an independent estimate: winds on the grid, mean of (u^2 + v^2)/2
        let m = model();
        let g = band_limited(&m, 4);
        let spec = m.to_spectral(&g).unwrap();
        let psi = m.invert_theta(&spec).unwrap();
        let nkx = m.nkx();
        let plane = 32 * nkx;
        let i_unit = Complex64::new(0.0, 1.0);
        let mut u = psi.clone();
        let mut v = psi.clone();
        let mut kept = psi.clone();
        for (idx, c) in psi.iter().enumerate() {
            let k = idx % plane;
            let (j, i) = (k / nkx, k % nkx);
            let in_band = (1..=10).contains(&m.wavenumber_bin(j, i));
            kept[idx] = if in_band { *c } else { Complex64::new(0.0, 0.0) };
            let (kx, ky) = m.wavenumber(j, i);
            u[idx] = -i_unit * ky * kept[idx];
            v[idx] = i_unit * kx * kept[idx];
        }
        let ug = m.to_grid(&u).unwrap();
        let vg = m.to_grid(&v).unwrap();
        let ke: f64 = ug.iter().zip(&vg).map(|(a, b)| 0.5 * (a * a + b * b)).sum::<f64>() / (32.0 * 32.0);
        let s = ke_spectrum(&g, &m).unwrap();
        assert_relative_eq!(s.total(), ke, max_relative = 1e-10);
    }

    #[test]
    fn spread_spectrum_examples() {
        let m = model();
        let truth = band_limited(&m, 1);
        let p = band_limited(&m, 2);
        let plus = truth.iter().zip(&p).map(|(a, b)| a + b).collect::<Vec<_>>();
        let minus = truth.iter().zip(&p).map(|(a, b)| a - b).collect::<Vec<_>>();
        let ens = Ensemble::from_members(vec![plus, minus]).unwrap();
        let (err, spread) = error_and_spread_spectra(&ens, &truth, &m).unwrap();
        assert!(err.values.iter().all(|v| v.abs() < 1e-20));
        let single = ke_spectrum(&p, &m).unwrap();
        for (a, b) in spread.values.iter().zip(&single.values) {
            assert_relative_eq!(*a, 2.0 * b, max_relative = 1e-10);
        }

        let flat = Ensemble::from_members(vec![truth.clone(), truth.clone(), truth.clone()]).unwrap();
        let (_, spread) = error_and_spread_spectra(&flat, &truth, &m).unwrap();
        assert!(spread.values.iter().all(|v| v.abs() < 1e-25));
    }

    #[test]
    fn ratio_and_improvement_examples() {
        let a = Spectrum {
            wavenumbers: vec![1, 2, 3],
            values: vec![4.0, 2.0, 0.0],
        };
        let b = Spectrum {
            wavenumbers: vec![1, 2, 3],
            values: vec![3.0, 2.0, 1.0],
        };
        assert_eq!(consistency_ratio(&a, &a).unwrap(), vec![Some(1.0), Some(1.0), None]);
        let imp = percent_improvement(&a, &b).unwrap();
        assert_eq!(imp[0], Some(25.0));
        assert_eq!(imp[1], Some(0.0));
        assert_eq!(imp[2], None);
        let c = Spectrum {
            wavenumbers: vec![1, 2],
            values: vec![1.0, 1.0],
        };
        assert!(consistency_ratio(&a, &c).is_err());
    }

    #[test]
    fn spectrum_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ratio.csv");
        write_spectrum_csv(&path, &[1, 2], &[Some(0.5), None]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("wavenumber,value\n"));
        let (k, v) = read_spectrum_csv(&path).unwrap();
        assert_eq!(k, vec![1, 2]);
        assert_eq!(v, vec![Some(0.5), None]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn spectrum_is_translation_invariant(seed in 0u64..100, sx in 0usize..32, sy in 0usize..32) {
            let m = model();
            let g = band_limited(&m, seed);
            let mut shifted = vec![0.0; g.len()];
            for s in 0..2 {
                for j in 0..32 {
                    for i in 0..32 {
                        shifted[s * 1024 + ((j + sy) % 32) * 32 + (i + sx) % 32] = g[s * 1024 + j * 32 + i];
                    }
                }
            }
            let a = ke_spectrum(&g, &m).unwrap();
            let b = ke_spectrum(&shifted, &m).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-300));
            }
        }

        #[test]
        fn rmse_triangle_inequality(
            a in prop::collection::vec(-10.0f64..10.0, 6),
            b in prop::collection::vec(-10.0f64..10.0, 6),
            c in prop::collection::vec(-10.0f64..10.0, 6),
        ) {
            let ab = rmse(&a, &b).unwrap();
            let bc = rmse(&b, &c).unwrap();
            let ac = rmse(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }
    }
}
