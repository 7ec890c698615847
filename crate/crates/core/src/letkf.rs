//! Local Ensemble Transform Kalman Filter with Gaspari-Cohn R-localization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{apply_rtps, Ensemble};
use crate::error::{check_dim, Error, Result};
use crate::obs::{predicted_obs, ObservationBatch};

/// Taper values below this are treated as outside the patch.
pub const MIN_TAPER: f64 = 1e-6;

/// Fifth-order piecewise rational correlation function with support `2c`.
pub fn gaspari_cohn(r: f64, c: f64) -> f64 {
    if c.is_infinite() {
        return 1.0;
    }
    let z = r.abs() / c;
    if z >= 2.0 {
        0.0
    } else if z <= 1.0 {
        ((((-0.25 * z + 0.5) * z + 0.625) * z - 5.0 / 3.0) * z * z + 1.0).clamp(0.0, 1.0)
    } else {
        let v = ((((z / 12.0 - 0.5) * z + 0.625) * z + 5.0 / 3.0) * z - 5.0) * z + 4.0 - 2.0 / (3.0 * z);
        v.clamp(0.0, 1.0)
    }
}

/// Doubly periodic grid of `surfaces` stacked `ny x nx` levels, flattened in
/// (surface, y, x) order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicDomain {
    pub nx: usize,
    pub ny: usize,
    pub surfaces: usize,
    pub lx_km: f64,
    pub ly_km: f64,
}

impl PeriodicDomain {
    pub fn square(n: usize, surfaces: usize, side_km: f64) -> Self {
        Self {
            nx: n,
            ny: n,
            surfaces,
            lx_km: side_km,
            ly_km: side_km,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.surfaces * self.nx * self.ny
    }

    /// `(surface, y, x)` of a flattened index.
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let plane = self.nx * self.ny;
        (index / plane, (index % plane) / self.nx, index % self.nx)
    }

    /// Minimum-image horizontal distance (km) between two flattened indices.
    pub fn horizontal_distance(&self, a: usize, b: usize) -> f64 {
        let (_, ya, xa) = self.coords(a);
        let (_, yb, xb) = self.coords(b);
        let dx = wrapped_cells(xa, xb, self.nx) as f64 * self.lx_km / self.nx as f64;
        let dy = wrapped_cells(ya, yb, self.ny) as f64 * self.ly_km / self.ny as f64;
        dx.hypot(dy)
    }

    fn cell_km(&self) -> (f64, f64) {
        (self.lx_km / self.nx as f64, self.ly_km / self.ny as f64)
    }
}

fn wrapped_cells(a: usize, b: usize, n: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(n - d)
}

/// Minimum-image distance between two points on a periodic line.
pub fn periodic_distance(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

/// Cross-surface coupling: an observation on another surface behaves as if it
/// were offset horizontally by `rossby_radius_km * separation_km / depth_km`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerticalCoupling {
    pub rossby_radius_km: f64,
    pub separation_km: f64,
    pub depth_km: f64,
}

impl VerticalCoupling {
    pub fn offset_km(&self, surface_gap: usize) -> f64 {
        self.rossby_radius_km * surface_gap as f64 * self.separation_km / self.depth_km
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationConfig {
    /// Cutoff radius in km: the taper vanishes at and beyond this distance.
    /// Infinite means no localization.
    pub loc_km: f64,
    /// `None` treats all surfaces as colocated.
    pub vertical: Option<VerticalCoupling>,
}

impl LocalizationConfig {
    pub fn new(loc_km: f64, vertical: Option<VerticalCoupling>) -> Result<Self> {
        if !(loc_km > 0.0) {
            return Err(Error::Config(format!("letkf.loc_km must be positive, got {loc_km}")));
        }
        Ok(Self { loc_km, vertical })
    }

    pub fn global() -> Self {
        Self {
            loc_km: f64::INFINITY,
            vertical: None,
        }
    }

    /// Gaspari-Cohn half-width `c`, half the cutoff radius.
    pub fn half_width(&self) -> f64 {
        self.loc_km / 2.0
    }

    pub fn effective_distance(&self, horizontal_km: f64, surface_gap: usize) -> f64 {
        match (self.vertical, surface_gap) {
            (Some(v), g) if g > 0 => horizontal_km.hypot(v.offset_km(g)),
            _ => horizontal_km,
        }
    }

    pub fn taper(&self, horizontal_km: f64, surface_gap: usize) -> f64 {
        gaspari_cohn(self.effective_distance(horizontal_km, surface_gap), self.half_width())
    }
}

/// Observations influencing one grid variable.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocalPatch {
    pub point: usize,
    /// Positions in the observation batch, not state indices.
    pub obs: Vec<usize>,
    pub distances_km: Vec<f64>,
    pub tapers: Vec<f64>,
}

impl LocalPatch {
    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    fn push(&mut self, obs: usize, distance: f64, taper: f64) {
        if taper >= MIN_TAPER {
            self.obs.push(obs);
            self.distances_km.push(distance);
            self.tapers.push(taper);
        }
    }
}

/// Brute-force patch: every observation (given as state indices) within the
/// cutoff of `point`.
pub fn build_local_patch(
    point: usize,
    obs_locations: &[usize],
    config: &LocalizationConfig,
    domain: &PeriodicDomain,
) -> LocalPatch {
    let (sp, _, _) = domain.coords(point);
    let mut patch = LocalPatch {
        point,
        ..Default::default()
    };
    for (k, &loc) in obs_locations.iter().enumerate() {
        let (so, _, _) = domain.coords(loc);
        let d = config.effective_distance(domain.horizontal_distance(point, loc), sp.abs_diff(so));
        patch.push(k, d, gaspari_cohn(d, config.half_width()));
    }
    patch
}

/// Observations bucketed by grid column, with the horizontal offsets that can
/// fall inside the cutoff.
struct PatchIndex<'a> {
    domain: PeriodicDomain,
    config: LocalizationConfig,
    by_cell: Vec<Vec<(usize, usize)>>,
    offsets: Vec<(usize, usize, f64)>,
    obs_locations: &'a [usize],
    global: bool,
}

impl<'a> PatchIndex<'a> {
    fn new(obs_locations: &'a [usize], config: LocalizationConfig, domain: PeriodicDomain) -> Self {
        let plane = domain.nx * domain.ny;
        let mut by_cell = vec![Vec::new(); plane];
        for (k, &loc) in obs_locations.iter().enumerate() {
            by_cell[loc % plane].push((k, loc / plane));
        }
        let (cx, cy) = domain.cell_km();
        let mut offsets = Vec::new();
        for oy in 0..domain.ny {
            for ox in 0..domain.nx {
                let d = (wrapped_cells(0, ox, domain.nx) as f64 * cx)
                    .hypot(wrapped_cells(0, oy, domain.ny) as f64 * cy);
                if d < config.loc_km {
                    offsets.push((oy, ox, d));
                }
            }
        }
        Self {
            domain,
            config,
            by_cell,
            offsets,
            obs_locations,
            global: config.loc_km.is_infinite(),
        }
    }

    fn patch(&self, point: usize) -> LocalPatch {
        if self.global {
            return build_local_patch(point, self.obs_locations, &self.config, &self.domain);
        }
        let (sp, y, x) = self.domain.coords(point);
        let mut patch = LocalPatch {
            point,
            ..Default::default()
        };
        for &(oy, ox, dh) in &self.offsets {
            let cell = ((y + oy) % self.domain.ny) * self.domain.nx + (x + ox) % self.domain.nx;
            for &(k, so) in &self.by_cell[cell] {
                let d = self.config.effective_distance(dh, sp.abs_diff(so));
                patch.push(k, d, gaspari_cohn(d, self.config.half_width()));
            }
        }
        patch
    }
}

/// Observation-space quantities for a local update.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalObs {
    pub values: Vec<f64>,
    /// Predicted observations, one row per member (`M x p`).
    pub predicted: Vec<Vec<f64>>,
    /// Error variances already divided by the taper.
    pub tapered_var: Vec<f64>,
}

/// Ensemble weights `w_bar + W[:, m]` for each member, as an `M x M` matrix
/// whose column `m` produces analysis member `m`.
fn transform_weights(
    yp: &DMatrix<f64>,
    innovation: &DVector<f64>,
    rinv: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let m = yp.ncols();
    let scale = (m - 1) as f64;
    let mut c = yp.transpose();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col *= rinv[j];
    }
    let mut a = &c * yp;
    for i in 0..m {
        a[(i, i)] += scale;
    }
    let eig = SymmetricEigen::new(a);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 1e-12 * max) || !max.is_finite() {
        return Err(Error::Numerical(format!(
            "ETKF inner matrix not positive definite: eigenvalues in [{min:e}, {max:e}]"
        )));
    }
    let q = &eig.eigenvectors;
    let inv = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
    let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| (scale / l).sqrt()));
    let p = q * inv * q.transpose();
    let wbar = &p * (&c * innovation);
    let mut w = q * sqrt * q.transpose();
    for mut col in w.column_iter_mut() {
        col += &wbar;
    }
    Ok(w)
}

fn perturbations(rows: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let m = rows.len();
    let p = rows[0].len();
    let x = DMatrix::from_fn(p, m, |i, j| rows[j][i]);
    let mean = x.column_mean();
    let mut xp = x;
    for mut col in xp.column_iter_mut() {
        col -= &mean;
    }
    (mean, xp)
}

/// Local ETKF update of a (restricted) forecast ensemble.
pub fn etkf_local_update(local_forecast: &Ensemble, local_obs: &LocalObs) -> Result<Ensemble> {
    let m = local_forecast.size();
    if m < 2 {
        return Err(Error::Config(format!("ETKF needs at least 2 members, got {m}")));
    }
    if local_obs.values.is_empty() {
        return Ok(local_forecast.clone());
    }
    check_dim(m, local_obs.predicted.len())?;
    let p = local_obs.values.len();
    for row in &local_obs.predicted {
        check_dim(p, row.len())?;
    }
    check_dim(p, local_obs.tapered_var.len())?;
    if local_obs.tapered_var.iter().any(|v| !(*v > 0.0) || v.is_nan()) {
        return Err(Error::Numerical("tapered observation variances must be positive".into()));
    }
    let (ybar, yp) = perturbations(&local_obs.predicted);
    let innovation = DVector::from_iterator(p, local_obs.values.iter().zip(ybar.iter()).map(|(y, m)| y - m));
    let rinv = DVector::from_iterator(p, local_obs.tapered_var.iter().map(|v| 1.0 / v));
    let w = transform_weights(&yp, &innovation, &rinv)?;

    let members = local_forecast.members().map(<[f64]>::to_vec).collect::<Vec<_>>();
    let (xbar, xp) = perturbations(&members);
    let xa = xp * w;
    let out = (0..m)
        .map(|j| xa.column(j).iter().zip(xbar.iter()).map(|(d, mu)| mu + d).collect())
        .collect();
    Ensemble::from_members(out)
}

/// Global ETKF: every observation, untapered, updates every variable.
pub fn etkf_global(forecast: &Ensemble, obs: &ObservationBatch) -> Result<Ensemble> {
    let predicted = forecast
        .members()
        .map(|x| predicted_obs(x, obs))
        .collect::<Result<Vec<_>>>()?;
    etkf_local_update(
        forecast,
        &LocalObs {
            values: obs.values.clone(),
            predicted,
            tapered_var: obs.error_var.clone(),
        },
    )
}

/// LETKF analysis: each grid variable gets its own local ETKF update from the
/// observations in its patch, then RTPS with `rtps_alpha`.
pub fn letkf_analysis(
    forecast: &Ensemble,
    obs: &ObservationBatch,
    loc: &LocalizationConfig,
    domain: &PeriodicDomain,
    rtps_alpha: f64,
) -> Result<Ensemble> {
    let m = forecast.size();
    let dim = forecast.dim();
    if m < 2 {
        return Err(Error::Config(format!("LETKF needs at least 2 forecast members, got {m}")));
    }
    check_dim(domain.state_dim(), dim)?;
    check_dim(obs.state_dim, dim)?;
    obs.validate()?;

    let predicted = forecast
        .members()
        .map(|x| predicted_obs(x, obs))
        .collect::<Result<Vec<_>>>()?;
    let (ybar, yp) = perturbations_or_empty(&predicted, obs.len());
    let index = PatchIndex::new(&obs.indices, *loc, *domain);

    let columns = (0..dim)
        .into_par_iter()
        .map(|point| -> Result<Vec<f64>> {
            let col = forecast.members().map(|x| x[point]).collect::<Vec<_>>();
            let patch = index.patch(point);
            if patch.is_empty() {
                return Ok(col);
            }
            let p = patch.obs.len();
            let ylocal = DMatrix::from_fn(p, m, |i, j| yp[(patch.obs[i], j)]);
            let innovation = DVector::from_iterator(p, patch.obs.iter().map(|&k| obs.values[k] - ybar[k]));
            let rinv = DVector::from_iterator(
                p,
                patch.obs.iter().zip(&patch.tapers).map(|(&k, t)| t / obs.error_var[k]),
            );
            let w = transform_weights(&ylocal, &innovation, &rinv)
                .map_err(|e| Error::Numerical(format!("grid point {point}: {e}")))?;
            let mean = col.iter().sum::<f64>() / m as f64;
            let xp = DVector::from_iterator(m, col.iter().map(|v| v - mean));
            Ok((w.transpose() * xp).iter().map(|d| mean + d).collect())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut data = vec![0.0; m * dim];
    for (point, col) in columns.into_iter().enumerate() {
        for (j, v) in col.into_iter().enumerate() {
            data[j * dim + point] = v;
        }
    }
    let analysis = Ensemble::from_flat(dim, data)?;
    if !analysis.is_finite() {
        return Err(Error::Numerical("LETKF produced non-finite analysis members".into()));
    }
    if rtps_alpha == 0.0 {
        return Ok(analysis);
    }
    Ok(apply_rtps(&forecast.spread()?, &analysis, rtps_alpha)?.0)
}

fn perturbations_or_empty(rows: &[Vec<f64>], p: usize) -> (DVector<f64>, DMatrix<f64>) {
    if p == 0 {
        (DVector::zeros(0), DMatrix::zeros(0, rows.len()))
    } else {
        perturbations(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::decompose;
    use crate::obs::ObsKind;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear_obs(indices: Vec<usize>, values: Vec<f64>, var: f64, dim: usize) -> ObservationBatch {
        let n = indices.len();
        ObservationBatch {
            values,
            indices,
            kind: ObsKind::Linear,
            error_var: vec![var; n],
            state_dim: dim,
        }
    }

    fn random_ensemble(m: usize, n: usize, seed: u64) -> Ensemble {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ensemble::from_flat(n, crate::rng::standard_normal_vec(&mut rng, m * n)).unwrap()
    }

    fn sample_cov(ens: &Ensemble) -> DMatrix<f64> {
        let s = decompose(ens).unwrap();
        let rows = s.perts.members().map(<[f64]>::to_vec).collect::<Vec<_>>();
        let x = DMatrix::from_fn(ens.dim(), ens.size(), |i, j| rows[j][i]);
        &x * x.transpose() / (ens.size() - 1) as f64
    }

    #[test]
    fn gaspari_cohn_examples() {
        assert_eq!(gaspari_cohn(0.0, 3.0), 1.0);
        assert_eq!(gaspari_cohn(6.0, 3.0), 0.0);
        assert_eq!(gaspari_cohn(9.0, 3.0), 0.0);
        assert_relative_eq!(gaspari_cohn(3.0, 3.0), 5.0 / 24.0, max_relative = 1e-12);
    }

    #[test]
    fn gaspari_cohn_matches_reference_polynomial() {
        // textbook form, written independently
        let reference = |z: f64| -> f64 {
            if z <= 1.0 {
                -0.25 * z.powi(5) + 0.5 * z.powi(4) + 0.625 * z.powi(3) - 5.0 / 3.0 * z.powi(2) + 1.0
            } else if z < 2.0 {
                z.powi(5) / 12.0 - 0.5 * z.powi(4) + 0.625 * z.powi(3) + 5.0 / 3.0 * z.powi(2) - 5.0 * z + 4.0
                    - 2.0 / (3.0 * z)
            } else {
                0.0
            }
        };
        for i in 0..=1000 {
            let r = 2.2 * i as f64 / 1000.0;
            assert!((gaspari_cohn(r, 1.0) - reference(r).max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn gaspari_cohn_is_monotone_and_continuous() {
        let c = 1.7;
        let mut prev = gaspari_cohn(0.0, c);
        for i in 1..=1000 {
            let r = 2.0 * c * i as f64 / 1000.0;
            let v = gaspari_cohn(r, c);
            assert!(v <= prev + 1e-15);
            assert!((prev - v) < 5e-3);
            assert!((0.0..=1.0).contains(&v));
            prev = v;
        }
        assert_eq!(prev, 0.0);
    }

    #[test]
    fn patch_examples() {
        let domain = PeriodicDomain::square(20, 1, 20_000.0);
        let cfg = LocalizationConfig::new(2000.0, None).unwrap();
        // point (0,0); obs at x = 19 cells = 19,000 km
        let patch = build_local_patch(0, &[19], &cfg, &domain);
        assert_relative_eq!(patch.distances_km[0], 1000.0, max_relative = 1e-12);
        assert_eq!(periodic_distance(0.0, 19_000.0, 20_000.0), 1000.0);

        let patch = build_local_patch(0, &[0], &cfg, &domain);
        assert_eq!(patch.tapers, vec![1.0]);

        let patch = build_local_patch(0, &[10, 200], &cfg, &domain);
        assert!(patch.is_empty());
    }

    #[test]
    fn cross_surface_observations_are_pushed_away() {
        let domain = PeriodicDomain::square(16, 2, 16_000.0);
        let coupling = VerticalCoupling {
            rossby_radius_km: 1000.0,
            separation_km: 10.0,
            depth_km: 10.0,
        };
        let cfg = LocalizationConfig::new(3000.0, Some(coupling)).unwrap();
        let patch = build_local_patch(0, &[256], &cfg, &domain);
        assert_relative_eq!(patch.distances_km[0], 1000.0, max_relative = 1e-12);
        assert_relative_eq!(patch.tapers[0], gaspari_cohn(1000.0, 1500.0), max_relative = 1e-12);
    }

    #[test]
    fn indexed_patches_match_brute_force() {
        let domain = PeriodicDomain::square(12, 2, 12_000.0);
        let coupling = VerticalCoupling {
            rossby_radius_km: 800.0,
            separation_km: 10.0,
            depth_km: 10.0,
        };
        let cfg = LocalizationConfig::new(3500.0, Some(coupling)).unwrap();
        let locs = (0..domain.state_dim()).filter(|i| i % 3 != 1).collect::<Vec<_>>();
        let index = PatchIndex::new(&locs, cfg, domain);
        for point in [0, 5, 77, 143, 150, 287] {
            let mut a = index.patch(point);
            let b = build_local_patch(point, &locs, &cfg, &domain);
            let mut order = (0..a.obs.len()).collect::<Vec<_>>();
            order.sort_by_key(|&i| a.obs[i]);
            a.obs = order.iter().map(|&i| a.obs[i]).collect();
            a.tapers = order.iter().map(|&i| a.tapers[i]).collect();
            assert_eq!(a.obs, b.obs);
            for (x, y) in a.tapers.iter().zip(&b.tapers) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scalar_update_example() {
        let f = Ensemble::from_members(vec![vec![-1.0], vec![1.0]]).unwrap();
        let obs = LocalObs {
            values: vec![1.0],
            predicted: vec![vec![-1.0], vec![1.0]],
            tapered_var: vec![2.0],
        };
        let a = etkf_local_update(&f, &obs).unwrap();
        let s = decompose(&a).unwrap();
        assert_relative_eq!(s.mean[0], 0.5, max_relative = 1e-12);
        assert_relative_eq!(s.spread[0].powi(2), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn empty_and_vanishing_observations_leave_forecast() {
        let f = random_ensemble(5, 3, 1);
        let none = LocalObs {
            values: vec![],
            predicted: vec![vec![]; 5],
            tapered_var: vec![],
        };
        assert_eq!(etkf_local_update(&f, &none).unwrap(), f);

        let weak = LocalObs {
            values: vec![3.0],
            predicted: f.members().map(|x| vec![x[0]]).collect(),
            tapered_var: vec![1.0 / 1e-12],
        };
        let a = etkf_local_update(&f, &weak).unwrap();
        for (x, y) in a.as_flat().iter().zip(f.as_flat()) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn matches_kalman_filter_on_linear_gaussian_toy() {
        let n = 3;
        let m = 6;
        let f = random_ensemble(m, n, 3);
        let obs = linear_obs(vec![0, 2], vec![0.7, -0.4], 0.5, n);
        let a = etkf_global(&f, &obs).unwrap();

        // Kalman oracle on the sample covariance
        let pb = sample_cov(&f);
        let h = DMatrix::from_fn(2, n, |i, j| if obs.indices[i] == j { 1.0 } else { 0.0 });
        let r = DMatrix::identity(2, 2) * 0.5;
        let s = &h * &pb * h.transpose() + r;
        let k = &pb * h.transpose() * s.try_inverse().unwrap();
        let xb = DVector::from_vec(f.mean());
        let y = DVector::from_vec(obs.values.clone());
        let xa = &xb + &k * (y - &h * &xb);
        let pa = (DMatrix::identity(n, n) - &k * &h) * &pb;

        let got_mean = DVector::from_vec(a.mean());
        assert!((got_mean - xa).amax() < 1e-8);
        assert!((sample_cov(&a) - pa).amax() < 1e-8);

        let perts = decompose(&a).unwrap().perts;
        for i in 0..n {
            assert!(perts.members().map(|p| p[i]).sum::<f64>().abs() < 1e-10);
        }
    }

    #[test]
    fn global_letkf_equals_etkf() {
        let domain = PeriodicDomain::square(4, 1, 4000.0);
        let f = random_ensemble(8, 16, 5);
        let obs = linear_obs(vec![1, 4, 9, 15], vec![0.3, -1.0, 0.2, 0.9], 0.8, 16);
        let a = letkf_analysis(&f, &obs, &LocalizationConfig::global(), &domain, 0.0).unwrap();
        let b = etkf_global(&f, &obs).unwrap();
        for (x, y) in a.as_flat().iter().zip(b.as_flat()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn unobserved_variable_is_untouched() {
        let domain = PeriodicDomain {
            nx: 2,
            ny: 1,
            surfaces: 1,
            lx_km: 10_000.0,
            ly_km: 1.0,
        };
        let f = random_ensemble(6, 2, 8);
        let obs = linear_obs(vec![0], vec![2.0], 1.0, 2);
        let cfg = LocalizationConfig::new(1000.0, None).unwrap();
        let a = letkf_analysis(&f, &obs, &cfg, &domain, 0.0).unwrap();
        for (x, y) in a.members().zip(f.members()) {
            assert_eq!(x[1], y[1]);
        }
        assert!(a.members().zip(f.members()).any(|(x, y)| x[0] != y[0]));
    }

    #[test]
    fn no_observations_returns_forecast() {
        let domain = PeriodicDomain::square(4, 1, 4000.0);
        let f = random_ensemble(5, 16, 2);
        let obs = linear_obs(vec![], vec![], 1.0, 16);
        let a = letkf_analysis(&f, &obs, &LocalizationConfig::new(1500.0, None).unwrap(), &domain, 0.7).unwrap();
        for (x, y) in a.as_flat().iter().zip(f.as_flat()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn observation_order_does_not_matter(seed in 0u64..1000, shift in 1usize..6) {
            let domain = PeriodicDomain::square(6, 2, 6000.0);
            let f = random_ensemble(7, domain.state_dim(), seed);
            let idx: Vec<usize> = (0..domain.state_dim()).step_by(5).collect();
            let vals: Vec<f64> = idx.iter().map(|&i| (i as f64 * 0.37).sin()).collect();
            let obs = linear_obs(idx.clone(), vals.clone(), 0.6, domain.state_dim());
            let mut perm: Vec<usize> = (0..idx.len()).collect();
            perm.rotate_left(shift % idx.len());
            perm.reverse();
            let shuffled = linear_obs(
                perm.iter().map(|&k| idx[k]).collect(),
                perm.iter().map(|&k| vals[k]).collect(),
                0.6,
                domain.state_dim(),
            );
            let cfg = LocalizationConfig::new(2500.0, Some(VerticalCoupling {
                rossby_radius_km: 1000.0, separation_km: 10.0, depth_km: 10.0,
            })).unwrap();
            let a = letkf_analysis(&f, &obs, &cfg, &domain, 0.3).unwrap();
            let b = letkf_analysis(&f, &shuffled, &cfg, &domain, 0.3).unwrap();
            for (x, y) in a.as_flat().iter().zip(b.as_flat()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn analysis_perturbations_sum_to_zero(seed in 0u64..1000) {
            let f = random_ensemble(9, 4, seed);
            let obs = linear_obs(vec![0, 1, 3], vec![0.5, 0.1, -0.2], 0.9, 4);
            let a = etkf_global(&f, &obs).unwrap();
            let perts = decompose(&a).unwrap().perts;
            for i in 0..4 {
                prop_assert!(perts.members().map(|p| p[i]).sum::<f64>().abs() < 1e-10);
            }
        }
    }
}
