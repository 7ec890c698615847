//! Ensemble Score Filter analysis.
//!
//! The prior score is a Monte Carlo estimate over (a mini-batch of) the
//! forecast members, built from the Gaussian transition kernel of the forward
//! process; the likelihood score is analytic. Their damped sum drives the
//! reverse-time sampler, whose outputs become the analysis members.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{linear_coefficients, sample_reverse_sde_batched, DiffusionSchedule};
use crate::ensemble::{apply_rtps, decompose, Ensemble};
use crate::error::{check_dim, Error, Result};
use crate::obs::ObservationBatch;

/// Indices (0-based) of the forecast members entering one score estimate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniBatch {
    indices: Vec<usize>,
}

impl MiniBatch {
    pub fn new(indices: Vec<usize>, ensemble_size: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Config("mini-batch must hold at least one member".into()));
        }
        let mut seen = vec![false; ensemble_size];
        for &i in &indices {
            if i >= ensemble_size || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Config(format!(
                    "mini-batch index {i} duplicated or outside ensemble of size {ensemble_size}"
                )));
            }
        }
        Ok(Self { indices })
    }

    pub fn full(ensemble_size: usize) -> Self {
        Self {
            indices: (0..ensemble_size).collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Gaussian observation likelihood `p(y | x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodModel {
    obs: ObservationBatch,
}

impl LikelihoodModel {
    pub fn new(obs: ObservationBatch) -> Result<Self> {
        obs.validate()?;
        check_dim(obs.indices.len(), obs.values.len())?;
        Ok(Self { obs })
    }

    pub fn obs(&self) -> &ObservationBatch {
        &self.obs
    }

    pub fn state_dim(&self) -> usize {
        self.obs.state_dim
    }

    fn score_into(&self, z: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let kind = self.obs.kind;
        for ((&i, y), r) in self.obs.indices.iter().zip(&self.obs.values).zip(&self.obs.error_var) {
            let x = z[i];
            out[i] += kind.derivative(x) * (y - kind.apply(x)) / r;
        }
    }
}

/// Gradient of the log-likelihood, `J^T R^-1 (y - h(z))`. Unobserved
/// components get zero.
pub fn likelihood_score(z: &[f64], model: &LikelihoodModel) -> Result<Vec<f64>> {
    check_dim(model.state_dim(), z.len())?;
    let mut out = vec![0.0; z.len()];
    model.score_into(z, &mut out);
    Ok(out)
}

fn check_kernel_time(t: f64) -> Result<()> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Domain(format!(
            "kernel weights need 0 < t < 1 (beta^2 > 0), got {t}"
        )));
    }
    Ok(())
}

/// Normalized weights of `Q(z | x_j)` over the batch members, computed in log
/// space.
pub fn kernel_log_weights(z: &[f64], batch_members: &[&[f64]], t: f64) -> Result<Vec<f64>> {
    check_kernel_time(t)?;
    if batch_members.is_empty() {
        return Err(Error::Config("kernel weights need at least one member".into()));
    }
    let c = linear_coefficients(t);
    let mut logw = Vec::with_capacity(batch_members.len());
    for x in batch_members {
        check_dim(z.len(), x.len())?;
        logw.push(-sq_dist_scaled(z, x, c.alpha) / (2.0 * c.beta2));
    }
    normalize_log_weights(&mut logw);
    Ok(logw)
}

fn sq_dist_scaled(z: &[f64], x: &[f64], alpha: f64) -> f64 {
    z.iter().zip(x).map(|(a, b)| (a - alpha * b).powi(2)).sum()
}

/// In-place log-sum-exp normalization.
fn normalize_log_weights(logw: &mut [f64]) {
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for w in logw.iter_mut() {
        *w = (*w - max).exp();
        total += *w;
    }
    logw.iter_mut().for_each(|w| *w /= total);
}

/// Monte Carlo prior score `sum_j -(z - alpha x_j)/beta^2 w_j`.
pub fn prior_score(z: &[f64], batch_members: &[&[f64]], t: f64) -> Result<Vec<f64>> {
    let w = kernel_log_weights(z, batch_members, t)?;
    let c = linear_coefficients(t);
    let mut out = vec![0.0; z.len()];
    prior_score_into(z, batch_members, &w, c.alpha, c.beta2, &mut out);
    Ok(out)
}

fn prior_score_into(z: &[f64], members: &[&[f64]], w: &[f64], alpha: f64, beta2: f64, out: &mut [f64]) {
    // sum_j w_j = 1, so the score is -(z - alpha * weighted_mean)/beta^2
    out.iter_mut().for_each(|v| *v = 0.0);
    for (x, wj) in members.iter().zip(w) {
        if *wj == 0.0 {
            continue;
        }
        for (o, xi) in out.iter_mut().zip(x.iter()) {
            *o += wj * xi;
        }
    }
    for (o, zi) in out.iter_mut().zip(z) {
        *o = -(zi - alpha * *o) / beta2;
    }
}

/// Damped posterior score: prior score plus `h(t)` times the likelihood
/// score.
pub fn posterior_score(
    z: &[f64],
    t: f64,
    forecast: &Ensemble,
    batch: &MiniBatch,
    model: &LikelihoodModel,
    schedule: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    check_dim(forecast.dim(), z.len())?;
    check_dim(model.state_dim(), z.len())?;
    let members = batch
        .indices()
        .iter()
        .map(|&j| {
            if j < forecast.size() {
                Ok(forecast.member(j))
            } else {
                Err(Error::Config(format!("batch index {j} outside forecast ensemble")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = prior_score(z, &members, t)?;
    let h = schedule.damping_at(t);
    if h != 0.0 {
        let lik = likelihood_score(z, model)?;
        for (o, l) in out.iter_mut().zip(lik) {
            *o += h * l;
        }
    }
    Ok(out)
}

/// How per-trajectory mini-batches are drawn when `J < M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BatchPairing {
    /// `J` members drawn uniformly without replacement.
    #[default]
    Random,
    /// Trajectory `m` always includes forecast member `m`, plus `J - 1`
    /// members drawn uniformly from the rest. `J = 1` pairs trajectory `m`
    /// with member `m`.
    Anchored,
}

impl BatchPairing {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(Self::Random),
            "anchored" | "paired" => Ok(Self::Anchored),
            other => Err(Error::Config(format!("unknown ensf.pairing `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Anchored => "anchored",
        }
    }
}

/// EnSF analysis settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsfConfig {
    pub schedule: DiffusionSchedule,
    /// Mini-batch size `J`; `None` uses the whole ensemble as one shared batch.
    pub batch_size: Option<usize>,
    pub pairing: BatchPairing,
    /// RTPS coefficient applied after sampling.
    pub rtps: f64,
}

impl Default for EnsfConfig {
    fn default() -> Self {
        Self {
            schedule: DiffusionSchedule::default(),
            batch_size: None,
            pairing: BatchPairing::Random,
            rtps: 1.0,
        }
    }
}

/// Per-trajectory batches, or one shared batch.
enum Batches {
    Shared(Vec<usize>),
    PerTrajectory(Vec<Vec<usize>>),
}

impl Batches {
    fn draw<R: Rng + ?Sized>(m: usize, j: usize, pairing: BatchPairing, rng: &mut R) -> Self {
        if j >= m {
            return Batches::Shared((0..m).collect());
        }
        let per = (0..m)
            .map(|traj| match pairing {
                BatchPairing::Random => sample(rng, m, j).into_vec(),
                BatchPairing::Anchored => {
                    let mut b = vec![traj];
                    // draw from the other m - 1 members and shift past `traj`
                    b.extend(
                        sample(rng, m - 1, j - 1)
                            .into_iter()
                            .map(|i| if i >= traj { i + 1 } else { i }),
                    );
                    b
                }
            })
            .collect();
        Batches::PerTrajectory(per)
    }

    fn for_trajectory(&self, m: usize) -> &[usize] {
        match self {
            Batches::Shared(b) => b,
            Batches::PerTrajectory(b) => &b[m],
        }
    }
}

/// Full EnSF analysis step.
///
/// Samples `M` analysis members with the damped posterior score, each reverse
/// trajectory scoring against its own mini-batch of forecast members, then
/// relaxes the analysis spread towards the forecast spread.
pub fn ensf_analysis<R: Rng + ?Sized>(
    forecast: &Ensemble,
    model: &LikelihoodModel,
    config: &EnsfConfig,
    rng: &mut R,
) -> Result<Ensemble> {
    let m = forecast.size();
    let dim = forecast.dim();
    if m < 2 {
        return Err(Error::Config(format!("EnSF needs at least 2 forecast members, got {m}")));
    }
    check_dim(model.state_dim(), dim)?;
    let j = config.batch_size.unwrap_or(m);
    if j == 0 || j > m {
        return Err(Error::Config(format!("ensf.batch_size must lie in [1, {m}], got {j}")));
    }
    let batches = Batches::draw(m, j, config.pairing, rng);
    let refs = |idx: &[usize]| idx.iter().map(|&i| forecast.member(i)).collect::<Vec<_>>();
    let shared = match &batches {
        Batches::Shared(idx) => Some(refs(idx)),
        Batches::PerTrajectory(_) => None,
    };
    let schedule = &config.schedule;

    let flat = sample_reverse_sde_batched(schedule, m, dim, rng, |z, t, out| {
        check_kernel_time(t)?;
        let c = linear_coefficients(t);
        let h = schedule.damping_at(t);
        z.par_chunks(dim)
            .zip(out.par_chunks_mut(dim))
            .enumerate()
            .for_each_init(
                || (Vec::new(), vec![0.0; dim]),
                |(logw, lik), (traj, (zrow, orow))| {
                    let own;
                    let members = match &shared {
                        Some(all) => all,
                        None => {
                            own = refs(batches.for_trajectory(traj));
                            &own
                        }
                    };
                    logw.clear();
                    logw.extend(
                        members
                            .iter()
                            .map(|x| -sq_dist_scaled(zrow, x, c.alpha) / (2.0 * c.beta2)),
                    );
                    normalize_log_weights(logw);
                    prior_score_into(zrow, members, logw, c.alpha, c.beta2, orow);
                    if h != 0.0 {
                        model.score_into(zrow, lik);
                        for (o, l) in orow.iter_mut().zip(lik.iter()) {
                            *o += h * l;
                        }
                    }
                },
            );
        Ok(())
    })?;
    let analysis = Ensemble::from_flat(dim, flat)?;
    if !analysis.is_finite() {
        return Err(Error::Numerical("EnSF produced non-finite analysis members".into()));
    }

    let prior = decompose(forecast)?;
    if prior.spread.iter().all(|&s| s == 0.0) {
        log::warn!("EnSF: forecast ensemble has zero spread; RTPS skipped");
        return Ok(analysis);
    }
    if config.rtps == 0.0 {
        return Ok(analysis);
    }
    Ok(apply_rtps(&prior.spread, &analysis, config.rtps)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::obs::ObsKind;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(kind: ObsKind, indices: Vec<usize>, values: Vec<f64>, var: f64, dim: usize) -> LikelihoodModel {
        let n = indices.len();
        LikelihoodModel::new(ObservationBatch {
            values,
            indices,
            kind,
            error_var: vec![var; n],
            state_dim: dim,
        })
        .unwrap()
    }

    #[test]
    fn weight_examples() {
        assert_eq!(kernel_log_weights(&[0.3], &[&[7.0]], 0.4).unwrap(), vec![1.0]);

        // z = alpha * 1 sits midway between alpha * 0 and alpha * 2
        let t = 0.5;
        let w = kernel_log_weights(&[0.5], &[&[0.0], &[2.0]], t).unwrap();
        assert_relative_eq!(w[0], 0.5, max_relative = 1e-12);

        let w = kernel_log_weights(&[0.0], &[&[0.0], &[2.0]], 0.5).unwrap();
        let e = (-1f64).exp();
        assert_relative_eq!(w[0], 1.0 / (1.0 + e), max_relative = 1e-12);
        assert_relative_eq!(w[1], e / (1.0 + e), max_relative = 1e-12);
        assert_relative_eq!(w[0], 0.7311, epsilon = 1e-4);

        assert!(matches!(kernel_log_weights(&[0.0], &[&[1.0]], 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn weights_survive_huge_exponents() {
        let dim = 8192;
        let z = vec![0.0; dim];
        let a = vec![30.0; dim];
        let b = vec![31.0; dim];
        let w = kernel_log_weights(&z, &[&a, &b], 0.01).unwrap();
        assert!(w.iter().all(|v| v.is_finite()));
        assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_eq!(w[0], 1.0);
    }

    #[test]
    fn prior_score_examples() {
        let s = prior_score(&[0.0], &[&[1.0]], 0.5).unwrap();
        assert_relative_eq!(s[0], 1.0, max_relative = 1e-12);
        // at the kernel mode the score vanishes
        let s = prior_score(&[0.35, -0.7], &[&[0.5, -1.0]], 0.3).unwrap();
        assert!(s.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn likelihood_score_examples() {
        let m = model(ObsKind::Linear, vec![0], vec![2.0], 1.0, 1);
        assert_eq!(likelihood_score(&[1.0], &m).unwrap(), vec![1.0]);

        let m = model(ObsKind::Arctan, vec![0], vec![0.1], 0.01, 1);
        assert_relative_eq!(likelihood_score(&[0.0], &m).unwrap()[0], 10.0, max_relative = 1e-12);

        let m = model(ObsKind::Arctan, vec![0], vec![0.1], 0.01, 2);
        let s = likelihood_score(&[0.0, 5.0], &m).unwrap();
        assert_relative_eq!(s[0], 10.0, max_relative = 1e-12);
        assert_eq!(s[1], 0.0);

        assert!(likelihood_score(&[0.0], &m).is_err());
    }

    #[test]
    fn arctan_likelihood_matches_finite_differences() {
        let dim = 4;
        let m = model(ObsKind::Arctan, vec![0, 2, 3], vec![0.3, -1.0, 1.2], 0.01, dim);
        let loglik = |z: &[f64]| -> f64 {
            m.obs()
                .indices
                .iter()
                .zip(&m.obs().values)
                .map(|(&i, y)| -0.5 * (y - z[i].atan()).powi(2) / 0.01)
                .sum()
        };
        let z = vec![0.4, -2.0, -0.7, 2.5];
        let g = likelihood_score(&z, &m).unwrap();
        let h = 1e-5;
        for i in 0..dim {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            let fd = (loglik(&zp) - loglik(&zm)) / (2.0 * h);
            if fd == 0.0 {
                assert_eq!(g[i], 0.0);
            } else {
                assert_relative_eq!(g[i], fd, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn posterior_score_composition() {
        let forecast = Ensemble::from_members(vec![vec![1.0]]).unwrap();
        let batch = MiniBatch::full(1);
        let m = model(ObsKind::Arctan, vec![0], vec![0.1], 0.01, 1);
        let sched = DiffusionSchedule::default();
        let s = posterior_score(&[0.0], 0.5, &forecast, &batch, &m, &sched).unwrap();
        assert_relative_eq!(s[0], 6.0, max_relative = 1e-12);
        // at the horizon only the prior remains
        let s = posterior_score(&[0.0], 0.999, &forecast, &batch, &m, &sched).unwrap();
        let p = prior_score(&[0.0], &[&[1.0]], 0.999).unwrap();
        assert_relative_eq!(s[0], p[0] + 0.001 * 10.0, max_relative = 1e-9);
        assert_eq!(sched.damping_at(1.0), 0.0);
    }

    #[test]
    fn mini_batch_validation() {
        assert!(MiniBatch::new(vec![], 3).is_err());
        assert!(MiniBatch::new(vec![0, 0], 3).is_err());
        assert!(MiniBatch::new(vec![3], 3).is_err());
        assert_eq!(MiniBatch::new(vec![2, 0], 3).unwrap().len(), 2);
    }

    #[test]
    fn anchored_batches_contain_their_own_member() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        match Batches::draw(10, 4, BatchPairing::Anchored, &mut rng) {
            Batches::PerTrajectory(b) => {
                for (m, idx) in b.iter().enumerate() {
                    assert_eq!(idx[0], m);
                    let mut s = idx.clone();
                    s.sort_unstable();
                    s.dedup();
                    assert_eq!(s.len(), 4);
                    assert!(idx.iter().all(|&i| i < 10));
                }
            }
            Batches::Shared(_) => panic!("expected per-trajectory batches"),
        }
    }

    #[test]
    fn degenerate_forecast_returns_finite_members() {
        let forecast = Ensemble::from_members(vec![vec![2.0, -1.0]; 5]).unwrap();
        let m = model(ObsKind::Linear, vec![0, 1], vec![0.0, 0.0], 1.0, 2);
        let cfg = EnsfConfig {
            schedule: DiffusionSchedule::new(30, 1e-3).unwrap(),
            ..Default::default()
        };
        let a = ensf_analysis(&forecast, &m, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(a.is_finite());
        assert_eq!(a.size(), 5);
    }

    #[test]
    fn analysis_is_seed_deterministic() {
        let forecast = Ensemble::from_members((0..6).map(|i| vec![i as f64, -(i as f64)]).collect()).unwrap();
        let m = model(ObsKind::Linear, vec![1], vec![0.5], 1.0, 2);
        let cfg = EnsfConfig {
            schedule: DiffusionSchedule::new(20, 1e-3).unwrap(),
            batch_size: Some(3),
            ..Default::default()
        };
        let run = |s| ensf_analysis(&forecast, &m, &cfg, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
        assert_eq!(run(4), run(4));
        assert_eq!(run(4).dim(), 2);
    }

    #[test]
    fn rejects_bad_batch_size() {
        let forecast = Ensemble::from_members(vec![vec![0.0], vec![1.0]]).unwrap();
        let m = model(ObsKind::Linear, vec![0], vec![0.5], 1.0, 1);
        let cfg = EnsfConfig {
            batch_size: Some(3),
            ..Default::default()
        };
        assert!(ensf_analysis(&forecast, &m, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    proptest! {
        #[test]
        fn weights_are_a_distribution(
            z in prop::collection::vec(-5.0f64..5.0, 3),
            xs in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..8),
            t in 0.01f64..0.99,
        ) {
            let members: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
            let w = kernel_log_weights(&z, &members, t).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(w.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn prior_score_is_permutation_invariant(
            z in prop::collection::vec(-5.0f64..5.0, 2),
            xs in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 2..6),
            t in 0.05f64..0.95,
        ) {
            let members: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
            let mut reversed = members.clone();
            reversed.reverse();
            let a = prior_score(&z, &members, t).unwrap();
            let b = prior_score(&z, &reversed, t).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
            }
        }
    }

    proptest::proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn analysis_is_finite_and_shaped_like_the_forecast(
            seed in 0u64..10_000,
            m in 2usize..8,
            dim in 1usize..6,
            arctan in proptest::bool::ANY,
            batch in proptest::option::of(1usize..8),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let members = (0..m).map(|_| crate::rng::standard_normal_vec(&mut rng, dim).iter().map(|v| 3.0 * v).collect()).collect();
            let forecast = Ensemble::from_members(members).unwrap();
            let kind = if arctan { ObsKind::Arctan } else { ObsKind::Linear };
            let lik = model(kind, vec![0], vec![0.5], kind.default_error_var(), dim);
            let config = EnsfConfig {
                schedule: DiffusionSchedule::new(20, 1e-3).unwrap(),
                batch_size: batch.map(|j| j.min(m)),
                pairing: BatchPairing::Anchored,
                rtps: 0.5,
            };
            let out = ensf_analysis(&forecast, &lik, &config, &mut rng).unwrap();
            prop_assert_eq!((out.size(), out.dim()), (m, dim));
            prop_assert!(out.is_finite());
        }
    }
}
