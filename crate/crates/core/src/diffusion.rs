//! Variance-preserving-style diffusion schedule and the reverse-time Euler
//! sampler.
//!
//! The forward process uses `alpha(t) = 1 - t` and `beta^2(t) = t`, which
//! gives the drift `b(t) = d log(alpha)/dt = -1/(1 - t)` and the squared
//! diffusion `sigma^2(t) = d beta^2/dt - 2 b(t) beta^2(t) = (1 + t)/(1 - t)`.
//! Both diverge at `t = 1`, so the pseudo-time grid stops at `1 - eps`.

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::rng::{child, fill_standard_normal, standard_normal_vec};

/// Pseudo-time horizon `T`.
pub const HORIZON: f64 = 1.0;

/// Default number of pseudo-time steps.
pub const DEFAULT_STEPS: usize = 100;

/// Default endpoint clamp.
pub const DEFAULT_EPS: f64 = 1e-3;

/// Schedule coefficients at one pseudo-time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub alpha: f64,
    pub beta2: f64,
    /// Drift coefficient `b(t)`.
    pub drift: f64,
    /// Squared diffusion coefficient `sigma^2(t)`.
    pub sigma2: f64,
}

/// Closed-form coefficients of the linear schedule. Total on `[0, 1)`.
pub fn linear_coefficients(t: f64) -> Coefficients {
    Coefficients {
        alpha: 1.0 - t,
        beta2: t,
        drift: -1.0 / (1.0 - t),
        sigma2: (1.0 + t) / (1.0 - t),
    }
}

/// Damping weight applied to the likelihood score: `h(t) = T - t`.
pub fn damping(t: f64, horizon: f64) -> f64 {
    horizon - t
}

/// Signature of a damping function `h(t, T)`.
pub type DampingFn = fn(f64, f64) -> f64;

/// Uniform pseudo-time grid on `[0, T - eps]`.
#[derive(Debug, Clone)]
pub struct DiffusionSchedule {
    horizon: f64,
    steps: usize,
    eps: f64,
    grid: Vec<f64>,
    damping: DampingFn,
}

impl DiffusionSchedule {
    /// Builds the grid `t_0 = 0 < t_1 < ... < t_N = T - eps`.
    pub fn new(steps: usize, eps: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("diffusion.steps must be at least 1".into()));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Config(format!(
                "diffusion.eps must lie in (0, 1), got {eps}"
            )));
        }
        let end = HORIZON - eps;
        let grid = (0..=steps)
            .map(|n| end * n as f64 / steps as f64)
            .collect::<Vec<_>>();
        Ok(Self {
            horizon: HORIZON,
            steps,
            eps,
            grid,
            damping,
        })
    }

    /// Swaps in another damping function.
    pub fn with_damping(mut self, damping: DampingFn) -> Self {
        self.damping = damping;
        self
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Last grid time `T - eps`, where sampling starts.
    pub fn end(&self) -> f64 {
        self.grid[self.steps]
    }

    pub fn damping_at(&self, t: f64) -> f64 {
        (self.damping)(t, self.horizon)
    }

    /// Coefficients at `t`, rejecting times outside `[0, T - eps]`.
    pub fn coefficients(&self, t: f64) -> Result<Coefficients> {
        // tolerate the rounding of the last grid point
        let end = self.horizon - self.eps;
        if !(0.0..=end + 1e-12).contains(&t) {
            return Err(Error::Domain(format!(
                "pseudo-time {t} outside [0, {end}]"
            )));
        }
        Ok(linear_coefficients(t.min(end)))
    }
}

// damping functions are compared by their values on the grid
impl PartialEq for DiffusionSchedule {
    fn eq(&self, other: &Self) -> bool {
        self.horizon == other.horizon
            && self.steps == other.steps
            && self.eps == other.eps
            && self.grid.iter().all(|&t| self.damping_at(t) == other.damping_at(t))
    }
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self::new(DEFAULT_STEPS, DEFAULT_EPS).expect("default schedule is valid")
    }
}

/// Sample position and pseudo-time passed to a score callback.
#[derive(Debug, Clone, Copy)]
pub struct ScoreQuery<'a> {
    pub z: &'a [f64],
    pub t: f64,
}

/// One reverse-time Euler step evaluated at `t_next`:
///
/// `z - [b(t_next) z - sigma^2(t_next) s] dt - sigma(t_next) noise`
///
/// `noise` must already carry the `sqrt(dt)` Brownian scaling.
pub fn reverse_euler_step(
    z: &[f64],
    t_next: f64,
    dt: f64,
    score: &[f64],
    noise: &[f64],
) -> Result<Vec<f64>> {
    let mut out = z.to_vec();
    reverse_euler_step_in_place(&mut out, t_next, dt, score, noise)?;
    Ok(out)
}

pub(crate) fn reverse_euler_step_in_place(
    z: &mut [f64],
    t_next: f64,
    dt: f64,
    score: &[f64],
    noise: &[f64],
) -> Result<()> {
    check_dim(z.len(), score.len())?;
    check_dim(z.len(), noise.len())?;
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("step size must be positive, got {dt}")));
    }
    if !(0.0..1.0).contains(&t_next) {
        return Err(Error::Domain(format!("pseudo-time {t_next} outside [0, 1)")));
    }
    let c = linear_coefficients(t_next);
    let sigma = c.sigma2.sqrt();
    for ((zi, si), ni) in z.iter_mut().zip(score).zip(noise) {
        *zi -= (c.drift * *zi - c.sigma2 * si) * dt + sigma * ni;
    }
    Ok(())
}

/// Runs the reverse SDE for a batch of `m` trajectories of dimension `dim`.
///
/// `score_batch(z, t, out)` receives all trajectories row-major (`m x dim`)
/// and must write the matching score rows into `out`. Every trajectory owns a
/// noise stream derived from `rng`, so results do not depend on how the
/// callback partitions its work.
pub fn sample_reverse_sde_batched<R, F>(
    schedule: &DiffusionSchedule,
    m: usize,
    dim: usize,
    rng: &mut R,
    mut score_batch: F,
) -> Result<Vec<f64>>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64], f64, &mut [f64]) -> Result<()>,
{
    if m == 0 {
        return Err(Error::Config("sample count must be positive".into()));
    }
    let mut streams = (0..m).map(|_| child(rng)).collect::<Vec<_>>();
    let mut z = vec![0.0; m * dim];
    for (row, s) in z.chunks_mut(dim).zip(streams.iter_mut()) {
        fill_standard_normal(s, row);
    }
    let mut score = vec![0.0; m * dim];
    let mut noise = vec![0.0; dim];
    let grid = schedule.grid();
    for n in (0..schedule.steps()).rev() {
        let t_next = grid[n + 1];
        let dt = t_next - grid[n];
        score_batch(&z, t_next, &mut score)?;
        let sqrt_dt = dt.sqrt();
        for ((row, srow), s) in z
            .chunks_mut(dim)
            .zip(score.chunks(dim))
            .zip(streams.iter_mut())
        {
            fill_standard_normal(s, &mut noise);
            noise.iter_mut().for_each(|v| *v *= sqrt_dt);
            reverse_euler_step_in_place(row, t_next, dt, srow, &noise)?;
        }
    }
    Ok(z)
}

/// Draws `m` samples by integrating the reverse SDE from a standard Gaussian
/// at `T - eps` down to `t = 0` with a per-sample score callback.
pub fn sample_reverse_sde<R, F>(
    schedule: &DiffusionSchedule,
    dim: usize,
    m: usize,
    rng: &mut R,
    mut score_fn: F,
) -> Result<Vec<Vec<f64>>>
where
    R: Rng + ?Sized,
    F: FnMut(ScoreQuery<'_>) -> Result<Vec<f64>>,
{
    let flat = sample_reverse_sde_batched(schedule, m, dim, rng, |z, t, out| {
        for (row, orow) in z.chunks(dim).zip(out.chunks_mut(dim)) {
            let s = score_fn(ScoreQuery { z: row, t })?;
            check_dim(dim, s.len())?;
            orow.copy_from_slice(&s);
        }
        Ok(())
    })?;
    Ok(flat.chunks(dim).map(<[f64]>::to_vec).collect())
}

/// Standard-normal draws for a single trajectory, exposed for callers that
/// drive `reverse_euler_step` themselves.
pub fn brownian_increment(rng: &mut impl Rng, dim: usize, dt: f64) -> Vec<f64> {
    let mut v = standard_normal_vec(rng, dim);
    let s = dt.sqrt();
    v.iter_mut().for_each(|x| *x *= s);
    v
}
