//! Two-surface SQG (nonlinear Eady) pseudospectral model.
//!
//! Potential temperature on the bottom and top boundaries of a uniformly
//! stratified, zero interior PV fluid is advected by the streamfunction it
//! induces. The base state is a zonal jet maintained by thermal relaxation
//! towards a balanced equilibrium temperature.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::standard_normal_vec;

pub const GRAVITY: f64 = 9.8;
pub const THETA_REF: f64 = 300.0;
pub const SECONDS_PER_DAY: f64 = 86_400.0;
pub const SURFACES: usize = 2;

/// Hyperdiffusion e-folding time at the grid Nyquist wavenumber.
pub const DEFAULT_DIFFUSION_EFOLD_S: f64 = 8.0 * 3600.0;
pub const DEFAULT_SPINUP_DAYS: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqgParams {
    pub nx: usize,
    pub ny: usize,
    /// Domain side length (m).
    pub l: f64,
    /// Fluid depth (m).
    pub h: f64,
    pub f: f64,
    pub n_bv: f64,
    /// Jet speed difference between the surfaces (m/s).
    pub u: f64,
    pub nu: f64,
    pub diff_order: u32,
    pub dt: f64,
    /// Thermal relaxation time scale; `None` disables relaxation.
    pub relax_days: Option<f64>,
}

impl SqgParams {
    /// Defaults on an `n x n` grid: 900 s steps at 64 and coarser, 600 s above.
    pub fn for_grid(n: usize) -> Self {
        let l = 20_000e3;
        let diff_order = 8;
        Self {
            nx: n,
            ny: n,
            l,
            h: 10e3,
            f: 1e-4,
            n_bv: 1e-2,
            u: 20.0,
            nu: efold_viscosity(n, l, diff_order, DEFAULT_DIFFUSION_EFOLD_S),
            diff_order,
            dt: if n <= 64 { 900.0 } else { 600.0 },
            relax_days: Some(10.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.nx % 2 != 0 || self.ny % 2 != 0 || self.nx < 16 || self.ny < 16 {
            return bad(format!("model grid must be even and >= 16, got {}x{}", self.nx, self.ny));
        }
        for (name, v) in [("l", self.l), ("h", self.h), ("f", self.f), ("n_bv", self.n_bv), ("dt", self.dt)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("model.{name} must be positive, got {v}"));
            }
        }
        if !(self.u >= 0.0 && self.nu >= 0.0) {
            return bad(format!("model.u and model.nu must be non-negative, got {} and {}", self.u, self.nu));
        }
        if self.diff_order == 0 || self.diff_order % 2 != 0 {
            return bad(format!("model.diff_order must be even, got {}", self.diff_order));
        }
        if let Some(r) = self.relax_days {
            if !(r > 0.0) {
                return bad(format!("model.relax_days must be positive, got {r}"));
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        SURFACES * self.nx * self.ny
    }

    /// Rossby radius of deformation `N H / f` (m).
    pub fn deformation_radius(&self) -> f64 {
        self.n_bv * self.h / self.f
    }
}

/// Hyperviscosity giving an e-folding time `efold_s` at wavenumber `pi n / L`.
pub fn efold_viscosity(n: usize, l: f64, order: u32, efold_s: f64) -> f64 {
    let kmax = std::f64::consts::PI * n as f64 / l;
    // explicit product: `powi` may be constant-folded to a different rounding
    let scale = (0..order).fold(1.0, |acc, _| acc * kmax);
    1.0 / (efold_s * scale)
}

/// Spectral potential temperature on both surfaces, `2 x ny x (nx/2+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SqgState {
    pub theta_spec: Vec<Complex64>,
    /// Model time (s).
    pub time: f64,
}

/// Same-surface and cross-surface inversion coefficients at wavenumber
/// magnitude `kappa`: `psi_0 = -same theta_0 + cross theta_1`,
/// `psi_1 = -cross theta_0 + same theta_1`.
pub fn inversion_coefficients(kappa: f64, params: &SqgParams) -> (f64, f64) {
    if kappa == 0.0 {
        return (0.0, 0.0);
    }
    let mu = kappa * params.n_bv * params.h / params.f;
    let scale = GRAVITY / (THETA_REF * kappa * params.n_bv);
    (scale / mu.tanh(), scale / mu.sinh())
}

/// Integrating-factor RK4 step of `du/dt = -D u + N(u)` with diagonal `D`.
/// `e_half` and `e_full` hold `exp(-D h/2)` and `exp(-D h)`.
pub fn integrating_factor_rk4<F>(u: &mut [Complex64], e_half: &[f64], e_full: &[f64], h: f64, mut tendency: F) -> Result<()>
where
    F: FnMut(&[Complex64], &mut [Complex64]) -> Result<()>,
{
    let n = u.len();
    check_dim(n, e_half.len())?;
    check_dim(n, e_full.len())?;
    let zero = Complex64::new(0.0, 0.0);
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![zero; n], vec![zero; n], vec![zero; n], vec![zero; n], vec![zero; n]);

    tendency(u, &mut k1)?;
    for i in 0..n {
        tmp[i] = e_half[i] * (u[i] + 0.5 * h * k1[i]);
    }
    tendency(&tmp, &mut k2)?;
    for i in 0..n {
        tmp[i] = e_half[i] * u[i] + 0.5 * h * k2[i];
    }
    tendency(&tmp, &mut k3)?;
    for i in 0..n {
        tmp[i] = e_full[i] * u[i] + h * e_half[i] * k3[i];
    }
    tendency(&tmp, &mut k4)?;
    for i in 0..n {
        u[i] = e_full[i] * u[i] + h / 6.0 * (e_full[i] * k1[i] + 2.0 * e_half[i] * (k2[i] + k3[i]) + k4[i]);
    }
    Ok(())
}

/// Scratch buffers for transforms and tendencies.
pub struct Workspace {
    row: Vec<f64>,
    trans: Vec<Complex64>,
    spec: Vec<Complex64>,
    fft_scratch: Vec<Complex64>,
    r2c_scratch: Vec<Complex64>,
    c2r_scratch: Vec<Complex64>,
    psi: Vec<Complex64>,
    theta_g: Vec<f64>,
    u_g: Vec<f64>,
    v_g: Vec<f64>,
    flux_x: Vec<Complex64>,
    flux_y: Vec<Complex64>,
}

/// Precomputed transforms, wavenumbers and operators for one parameter set.
pub struct SqgModel {
    params: SqgParams,
    nkx: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fft_y: Arc<dyn Fft<f64>>,
    ifft_y: Arc<dyn Fft<f64>>,
    kx: Vec<f64>,
    ky: Vec<f64>,
    keep: Vec<bool>,
    same: Vec<f64>,
    cross: Vec<f64>,
    e_half: Vec<f64>,
    e_full: Vec<f64>,
    theta_eq: Vec<Complex64>,
}

impl std::fmt::Debug for SqgModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SqgModel").field("params", &self.params).finish_non_exhaustive()
    }
}

impl SqgModel {
    pub fn new(params: SqgParams) -> Result<Self> {
        params.validate()?;
        let (nx, ny) = (params.nx, params.ny);
        let nkx = nx / 2 + 1;
        let mut real_planner = RealFftPlanner::<f64>::new();
        let mut planner = FftPlanner::<f64>::new();
        let dk = 2.0 * std::f64::consts::PI / params.l;
        let kx = (0..nkx).map(|i| i as f64 * dk).collect::<Vec<_>>();
        let ky = (0..ny).map(|j| signed_index(j, ny) as f64 * dk).collect::<Vec<_>>();
        let (cut_x, cut_y) = ((nx - 1) / 3, (ny - 1) / 3);

        let plane = ny * nkx;
        let mut keep = vec![false; plane];
        let mut same = vec![0.0; plane];
        let mut cross = vec![0.0; plane];
        let mut damp = vec![0.0; plane];
        for j in 0..ny {
            for i in 0..nkx {
                let idx = j * nkx + i;
                keep[idx] = i <= cut_x && signed_index(j, ny).unsigned_abs() as usize <= cut_y;
                let kappa = kx[i].hypot(ky[j]);
                (same[idx], cross[idx]) = inversion_coefficients(kappa, &params);
                damp[idx] = params.nu * kappa.powi(params.diff_order as i32);
            }
        }
        let e_half = damp.iter().map(|d| (-d * params.dt / 2.0).exp()).collect::<Vec<_>>();
        let e_full = damp.iter().map(|d| (-d * params.dt).exp()).collect::<Vec<_>>();
        let e_half = [e_half.clone(), e_half].concat();
        let e_full = [e_full.clone(), e_full].concat();

        let mut model = Self {
            r2c: real_planner.plan_fft_forward(nx),
            c2r: real_planner.plan_fft_inverse(nx),
            fft_y: planner.plan_fft_forward(ny),
            ifft_y: planner.plan_fft_inverse(ny),
            params,
            nkx,
            kx,
            ky,
            keep,
            same,
            cross,
            e_half,
            e_full,
            theta_eq: Vec::new(),
        };
        model.theta_eq = model.equilibrium_theta()?;
        Ok(model)
    }

    pub fn params(&self) -> &SqgParams {
        &self.params
    }

    pub fn spec_len(&self) -> usize {
        SURFACES * self.params.ny * self.nkx
    }

    pub fn grid_len(&self) -> usize {
        self.params.state_dim()
    }

    pub fn nkx(&self) -> usize {
        self.nkx
    }

    /// Wavenumbers (rad/m) of spectral slot `(j, i)`.
    pub fn wavenumber(&self, j: usize, i: usize) -> (f64, f64) {
        (self.kx[i], self.ky[j])
    }

    /// Integer total-wavenumber bin `round(|k| L / 2 pi)` of slot `(j, i)`.
    pub fn wavenumber_bin(&self, j: usize, i: usize) -> usize {
        (i as f64).hypot(signed_index(j, self.params.ny) as f64).round() as usize
    }

    /// Whether slot `(j, i)` survives the 2/3 truncation.
    pub fn is_resolved(&self, j: usize, i: usize) -> bool {
        self.keep[j * self.nkx + i]
    }

    pub fn workspace(&self) -> Workspace {
        let (nx, ny, nkx) = (self.params.nx, self.params.ny, self.nkx);
        let plane = ny * nkx;
        let fft_len = self.fft_y.get_inplace_scratch_len().max(self.ifft_y.get_inplace_scratch_len());
        let zero = Complex64::new(0.0, 0.0);
        Workspace {
            row: vec![0.0; nx],
            trans: vec![zero; plane],
            spec: vec![zero; plane],
            fft_scratch: vec![zero; fft_len],
            r2c_scratch: self.r2c.make_scratch_vec(),
            c2r_scratch: self.c2r.make_scratch_vec(),
            psi: vec![zero; SURFACES * plane],
            theta_g: vec![0.0; nx * ny],
            u_g: vec![0.0; nx * ny],
            v_g: vec![0.0; nx * ny],
            flux_x: vec![zero; plane],
            flux_y: vec![zero; plane],
        }
    }

    fn transpose_into(&self, src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
        for r in 0..rows {
            for c in 0..cols {
                dst[c * rows + r] = src[r * cols + c];
            }
        }
    }

    fn forward_plane(&self, grid: &[f64], spec: &mut [Complex64], ws: &mut Workspace) -> Result<()> {
        let (nx, ny, nkx) = (self.params.nx, self.params.ny, self.nkx);
        for j in 0..ny {
            ws.row.copy_from_slice(&grid[j * nx..(j + 1) * nx]);
            self.r2c
                .process_with_scratch(&mut ws.row, &mut spec[j * nkx..(j + 1) * nkx], &mut ws.r2c_scratch)
                .map_err(|e| Error::Numerical(format!("forward FFT: {e}")))?;
        }
        self.transpose_into(spec, &mut ws.trans, ny, nkx);
        self.fft_y.process_with_scratch(&mut ws.trans, &mut ws.fft_scratch);
        self.transpose_into(&ws.trans, spec, nkx, ny);
        Ok(())
    }

    fn inverse_plane(&self, spec: &[Complex64], grid: &mut [f64], ws: &mut Workspace) -> Result<()> {
        let (nx, ny, nkx) = (self.params.nx, self.params.ny, self.nkx);
        self.transpose_into(spec, &mut ws.trans, ny, nkx);
        self.ifft_y.process_with_scratch(&mut ws.trans, &mut ws.fft_scratch);
        self.transpose_into(&ws.trans, &mut ws.spec, nkx, ny);
        let norm = 1.0 / (nx * ny) as f64;
        for j in 0..ny {
            let row = &mut ws.spec[j * nkx..(j + 1) * nkx];
            // a real field has real zero and Nyquist x-coefficients after the y pass
            row[0].im = 0.0;
            row[nkx - 1].im = 0.0;
            let out = &mut grid[j * nx..(j + 1) * nx];
            self.c2r
                .process_with_scratch(row, out, &mut ws.c2r_scratch)
                .map_err(|e| Error::Numerical(format!("inverse FFT: {e}")))?;
            out.iter_mut().for_each(|v| *v *= norm);
        }
        Ok(())
    }

    /// Unnormalized forward transform of a `2 x ny x nx` grid field.
    pub fn to_spectral(&self, grid: &[f64]) -> Result<Vec<Complex64>> {
        check_dim(self.grid_len(), grid.len())?;
        let mut ws = self.workspace();
        let plane = self.params.ny * self.nkx;
        let gp = self.params.nx * self.params.ny;
        let mut spec = vec![Complex64::new(0.0, 0.0); SURFACES * plane];
        for s in 0..SURFACES {
            self.forward_plane(&grid[s * gp..(s + 1) * gp], &mut spec[s * plane..(s + 1) * plane], &mut ws)?;
        }
        Ok(spec)
    }

    /// Inverse of [`SqgModel::to_spectral`].
    pub fn to_grid(&self, spec: &[Complex64]) -> Result<Vec<f64>> {
        check_dim(self.spec_len(), spec.len())?;
        let mut ws = self.workspace();
        let plane = self.params.ny * self.nkx;
        let gp = self.params.nx * self.params.ny;
        let mut grid = vec![0.0; SURFACES * gp];
        for s in 0..SURFACES {
            self.inverse_plane(&spec[s * plane..(s + 1) * plane], &mut grid[s * gp..(s + 1) * gp], &mut ws)?;
        }
        Ok(grid)
    }

    /// Grid RMS of `a - b` over both surfaces, evaluated on the spectral
    /// coefficients (Parseval).
    pub fn rms_difference(&self, a: &[Complex64], b: &[Complex64]) -> Result<f64> {
        check_dim(self.spec_len(), a.len())?;
        check_dim(self.spec_len(), b.len())?;
        let nx = self.params.nx;
        let sum: f64 = a
            .iter()
            .zip(b)
            .enumerate()
            .map(|(idx, (x, y))| {
                let i = idx % self.nkx;
                let w = if i == 0 || 2 * i == nx { 1.0 } else { 2.0 };
                w * (x - y).norm_sqr()
            })
            .sum();
        let n = (nx * self.params.ny) as f64;
        Ok((sum / (SURFACES as f64 * n * n)).sqrt())
    }

    /// Zeroes every coefficient outside the 2/3 truncation.
    pub fn truncate(&self, spec: &mut [Complex64]) {
        let plane = self.params.ny * self.nkx;
        for (idx, c) in spec.iter_mut().enumerate() {
            if !self.keep[idx % plane] {
                *c = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// Streamfunction on both surfaces from potential temperature.
    pub fn invert_theta(&self, theta_spec: &[Complex64]) -> Result<Vec<Complex64>> {
        check_dim(self.spec_len(), theta_spec.len())?;
        let mut psi = vec![Complex64::new(0.0, 0.0); theta_spec.len()];
        self.invert_into(theta_spec, &mut psi);
        Ok(psi)
    }

    fn invert_into(&self, theta: &[Complex64], psi: &mut [Complex64]) {
        let plane = self.params.ny * self.nkx;
        let (bottom, top) = theta.split_at(plane);
        let (psi0, psi1) = psi.split_at_mut(plane);
        for idx in 0..plane {
            let (s, c) = (self.same[idx], self.cross[idx]);
            psi0[idx] = -s * bottom[idx] + c * top[idx];
            psi1[idx] = -c * bottom[idx] + s * top[idx];
        }
    }

    fn equilibrium_theta(&self) -> Result<Vec<Complex64>> {
        let p = &self.params;
        let gp = p.nx * p.ny;
        if p.u == 0.0 {
            return Ok(vec![Complex64::new(0.0, 0.0); self.spec_len()]);
        }
        // theta of the balanced jet u = -/+ (U/2) cos(l y) on the bottom/top
        let l = 2.0 * std::f64::consts::PI / p.l;
        let mu = l * p.n_bv * p.h / p.f;
        let amp = -(THETA_REF / GRAVITY) * (p.u / (2.0 * l)) * (p.f * mu / (p.h * (mu / 2.0).tanh()));
        let mut grid = vec![0.0; SURFACES * gp];
        for s in 0..SURFACES {
            for j in 0..p.ny {
                let y = j as f64 * p.l / p.ny as f64;
                let v = amp * (l * y).sin();
                grid[s * gp + j * p.nx..s * gp + (j + 1) * p.nx].iter_mut().for_each(|g| *g = v);
            }
        }
        let mut spec = self.to_spectral(&grid)?;
        self.truncate(&mut spec);
        Ok(spec)
    }

    /// Equilibrium temperature the relaxation pulls towards (grid form).
    pub fn equilibrium_grid(&self) -> Result<Vec<f64>> {
        self.to_grid(&self.theta_eq)
    }

    /// Advective tendency plus thermal relaxation, truncated to the resolved
    /// modes. Hyperdiffusion is left to the stepper.
    pub fn tendency(&self, state: &SqgState) -> Result<Vec<Complex64>> {
        check_dim(self.spec_len(), state.theta_spec.len())?;
        let mut ws = self.workspace();
        let mut out = vec![Complex64::new(0.0, 0.0); self.spec_len()];
        let mut theta = state.theta_spec.clone();
        self.truncate(&mut theta);
        self.tendency_into(&theta, &mut out, &mut ws)?;
        Ok(out)
    }

    fn tendency_into(&self, theta: &[Complex64], out: &mut [Complex64], ws: &mut Workspace) -> Result<()> {
        let (ny, nkx) = (self.params.ny, self.nkx);
        let plane = ny * nkx;
        let mut psi = std::mem::take(&mut ws.psi);
        self.invert_into(theta, &mut psi);
        let mut theta_g = std::mem::take(&mut ws.theta_g);
        let mut u_g = std::mem::take(&mut ws.u_g);
        let mut v_g = std::mem::take(&mut ws.v_g);
        let mut fx = std::mem::take(&mut ws.flux_x);
        let mut fy = std::mem::take(&mut ws.flux_y);
        let i_unit = Complex64::new(0.0, 1.0);
        let relax = self.params.relax_days.map(|d| 1.0 / (d * SECONDS_PER_DAY));

        for s in 0..SURFACES {
            let th = &theta[s * plane..(s + 1) * plane];
            let ps = &psi[s * plane..(s + 1) * plane];
            self.inverse_plane(th, &mut theta_g, ws)?;
            // u = -psi_y, v = psi_x
            for j in 0..ny {
                for i in 0..nkx {
                    fx[j * nkx + i] = -i_unit * self.ky[j] * ps[j * nkx + i];
                    fy[j * nkx + i] = i_unit * self.kx[i] * ps[j * nkx + i];
                }
            }
            self.inverse_plane(&fx, &mut u_g, ws)?;
            self.inverse_plane(&fy, &mut v_g, ws)?;
            u_g.iter_mut().zip(&theta_g).for_each(|(u, t)| *u *= t);
            v_g.iter_mut().zip(&theta_g).for_each(|(v, t)| *v *= t);
            self.forward_plane(&u_g, &mut fx, ws)?;
            self.forward_plane(&v_g, &mut fy, ws)?;

            let o = &mut out[s * plane..(s + 1) * plane];
            let eq = &self.theta_eq[s * plane..(s + 1) * plane];
            for j in 0..ny {
                for i in 0..nkx {
                    let idx = j * nkx + i;
                    if !self.keep[idx] {
                        o[idx] = Complex64::new(0.0, 0.0);
                        continue;
                    }
                    let mut v = -i_unit * (self.kx[i] * fx[idx] + self.ky[j] * fy[idx]);
                    if let Some(r) = relax {
                        if idx != 0 {
                            v += r * (eq[idx] - th[idx]);
                        }
                    }
                    o[idx] = v;
                }
            }
        }
        ws.psi = psi;
        ws.theta_g = theta_g;
        ws.u_g = u_g;
        ws.v_g = v_g;
        ws.flux_x = fx;
        ws.flux_y = fy;
        Ok(())
    }

    /// One integrating-factor RK4 step of length `dt`.
    pub fn rk4_step(&self, state: &mut SqgState, ws: &mut Workspace) -> Result<()> {
        check_dim(self.spec_len(), state.theta_spec.len())?;
        self.truncate(&mut state.theta_spec);
        integrating_factor_rk4(&mut state.theta_spec, &self.e_half, &self.e_full, self.params.dt, |u, k| {
            self.tendency_into(u, k, ws)
        })?;
        self.truncate(&mut state.theta_spec);
        state.time += self.params.dt;
        if state.theta_spec.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::BlowUp { time: state.time });
        }
        Ok(())
    }

    pub fn advance(&self, state: &SqgState, n_steps: usize) -> Result<SqgState> {
        let mut out = state.clone();
        self.advance_in_place(&mut out, n_steps)?;
        Ok(out)
    }

    pub fn advance_in_place(&self, state: &mut SqgState, n_steps: usize) -> Result<()> {
        let mut ws = self.workspace();
        for _ in 0..n_steps {
            self.rk4_step(state, &mut ws)?;
        }
        Ok(())
    }

    /// Number of steps covering `seconds`, rounded to the nearest step.
    pub fn steps_for(&self, seconds: f64) -> usize {
        (seconds / self.params.dt).round() as usize
    }

    pub fn state_from_grid(&self, grid: &[f64], time: f64) -> Result<SqgState> {
        let mut theta_spec = self.to_spectral(grid)?;
        self.truncate(&mut theta_spec);
        Ok(SqgState { theta_spec, time })
    }

    pub fn grid(&self, state: &SqgState) -> Result<Vec<f64>> {
        self.to_grid(&state.theta_spec)
    }

    /// Random grid field with RMS `rms` whose energy lies in total wavenumbers
    /// 1 through `max_bin`; independent on both surfaces.
    pub fn band_limited_noise<R: Rng + ?Sized>(&self, rng: &mut R, max_bin: usize, rms: f64) -> Result<Vec<f64>> {
        if max_bin == 0 {
            return Err(Error::Config("noise band must include wavenumber 1".into()));
        }
        let noise = standard_normal_vec(rng, self.grid_len());
        let mut spec = self.to_spectral(&noise)?;
        let plane = self.params.ny * self.nkx;
        for (idx, c) in spec.iter_mut().enumerate() {
            let k = idx % plane;
            let bin = self.wavenumber_bin(k / self.nkx, k % self.nkx);
            if bin == 0 || bin > max_bin || !self.keep[k] {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        let mut grid = self.to_grid(&spec)?;
        let actual = (theta_square_sum(&grid) / grid.len() as f64).sqrt();
        if actual > 0.0 {
            grid.iter_mut().for_each(|g| *g *= rms / actual);
        }
        Ok(grid)
    }

    /// Equilibrium jet plus large-scale noise of RMS `amplitude` K, limited to
    /// total wavenumbers 1 through 4.
    pub fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R, amplitude: f64) -> Result<SqgState> {
        let mut grid = self.band_limited_noise(rng, 4, amplitude)?;
        for (g, e) in grid.iter_mut().zip(self.equilibrium_grid()?) {
            *g += e;
        }
        self.state_from_grid(&grid, 0.0)
    }

    /// Perturbed equilibrium integrated for `duration_s` seconds.
    pub fn spin_up<R: Rng + ?Sized>(&self, rng: &mut R, duration_s: f64) -> Result<SqgState> {
        let mut state = self.initial_state(rng, 1.0)?;
        self.advance_in_place(&mut state, self.steps_for(duration_s))?;
        Ok(state)
    }
}

fn signed_index(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Sum of squared grid values on both surfaces.
pub fn theta_square_sum(grid: &[f64]) -> f64 {
    grid.iter().map(|v| v * v).sum()
}

/// Sidecar metadata of a field dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub nx: usize,
    pub ny: usize,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "H")]
    pub h: f64,
    pub time: f64,
    pub seed: u64,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes raw little-endian f64 values in (surface, y, x) order to `path` and
/// the metadata to `path` with a `.json` extension.
pub fn write_field(path: &Path, grid: &[f64], meta: &FieldMeta) -> Result<()> {
    check_dim(SURFACES * meta.nx * meta.ny, grid.len())?;
    let bytes = grid.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<_>>();
    fs::write(path, bytes)?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<(Vec<f64>, FieldMeta)> {
    let meta: FieldMeta = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Schema(format!("{}: length not a multiple of 8 bytes", path.display())));
    }
    let grid = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect::<Vec<_>>();
    check_dim(SURFACES * meta.nx * meta.ny, grid.len())?;
    Ok((grid, meta))
}
