//! Fourier inversion of characteristic exponents onto uniform spatial
//! grids, with automatic frequency-extent selection from the measured
//! decay of Re Psi, a heavy-tail model fitted at the window edges for
//! aliasing-aware mass correction, and spectral derivatives.

use super::{characteristic_exponent, FrozenKernelSpec};
use crate::error::{Error, Result};
use crate::quad::{self, Improper};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

/// Frequency-grid configuration for density synthesis.
#[derive(Debug, Clone)]
pub struct GridConfig {
    /// Grid size per axis; a power of two.
    pub n: usize,
    /// Frequency half-extent; chosen automatically when absent.
    pub freq_extent: Option<f64>,
    /// Required |exp Psi| at the frequency boundary.
    pub boundary_floor: f64,
    /// Multiplies the automatic extent: oversampling in frequency refines
    /// the spatial sampling of the density.
    pub oversample: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n: 4096, freq_extent: None, boundary_floor: 1e-16, oversample: 1.0 }
    }
}

impl GridConfig {
    pub fn with_n(n: usize) -> Self {
        GridConfig { n, ..Default::default() }
    }
}

/// A density sampled on a uniform spatial grid, with the trapezoid mass,
/// a fitted one-jump tail model and the tail-corrected mass.
#[derive(Debug, Clone)]
pub struct GridDensity {
    pub dim: usize,
    pub n: usize,
    pub step: f64,
    /// Coordinate of index 0 (both axes in d = 2).
    pub origin: f64,
    /// Row-major for d = 2.
    pub values: Vec<f64>,
    pub t: f64,
    pub s: f64,
    pub mass_raw: f64,
    pub mass_corrected: f64,
    pub min_value: f64,
    pub max_value: f64,
    /// min >= -1e-8 max (FFT ringing tolerance).
    pub ringing_ok: bool,
    /// Fitted tail coefficients: p(x) ~ (s-t) C / (|x|^d phi(|x|)) at the
    /// left/right window edges (radial for d = 2, both entries equal).
    pub tail_coeff: (f64, f64),
    pub(crate) shape: TailShape,
}

/// Radial shape |x|^d phi(|x|) of the tail model, tabulated so the grid
/// density can extend itself beyond the window without the profile.
#[derive(Debug, Clone)]
pub(crate) struct TailShape {
    samples: Vec<(f64, f64)>, // (ln |x|, ln(|x|^d phi(|x|)))
}

impl TailShape {
    pub(crate) fn build_for(profile: &crate::profiles::ScalingProfile, hi: f64) -> TailShape {
        let grid = crate::profiles::log_grid(1e-8, hi.max(1.0) * 8.0, 240);
        let d = profile.dim as i32;
        TailShape {
            samples: grid
                .iter()
                .map(|&r| (r.ln(), (r.powi(d) * profile.phi(r)).ln()))
                .collect(),
        }
    }

    pub(crate) fn build(spec: &FrozenKernelSpec, hi: f64) -> TailShape {
        Self::build_for(&spec.profile, hi)
    }

    pub(crate) fn eval(&self, r: f64) -> f64 {
        let lr = r.ln();
        let s = &self.samples;
        let n = s.len();
        if lr <= s[0].0 {
            return s[0].1.exp();
        }
        if lr >= s[n - 1].0 {
            let sl = (s[n - 1].1 - s[n - 2].1) / (s[n - 1].0 - s[n - 2].0);
            return (s[n - 1].1 + sl * (lr - s[n - 1].0)).exp();
        }
        let idx = s.partition_point(|&(x, _)| x < lr).max(1) - 1;
        let (x0, y0) = s[idx];
        let (x1, y1) = s[idx + 1];
        (y0 + (y1 - y0) * (lr - x0) / (x1 - x0)).exp()
    }
}

impl GridDensity {
    pub fn x(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.step
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.n - 1)
    }

    /// The fitted one-jump tail model at |x| beyond the window.
    pub fn tail_value(&self, x: f64) -> f64 {
        let c = if x < 0.0 { self.tail_coeff.0 } else { self.tail_coeff.1 };
        (self.s - self.t) * c / self.shape.eval(x.abs().max(self.step))
    }

    /// d = 1 value with C^1 cubic (Catmull-Rom) interpolation inside the
    /// window and the fitted tail model outside. The interpolant must be
    /// C^1: slope kinks at nodes would make the first-order compensated
    /// difference operator genuinely divergent.
    pub fn value_at(&self, x: f64) -> f64 {
        debug_assert_eq!(self.dim, 1);
        let u = (x - self.origin) / self.step;
        if !(1.0..=(self.n - 3) as f64).contains(&u) {
            return self.tail_value(x);
        }
        let j = u.floor() as usize;
        let f = u - j as f64;
        let (a, b, c, d) = (
            self.values[j - 1],
            self.values[j],
            self.values[j + 1],
            self.values[j + 2],
        );
        let m0 = 0.5 * (c - a);
        let m1 = 0.5 * (d - b);
        let f2 = f * f;
        let f3 = f2 * f;
        let h00 = 2.0 * f3 - 3.0 * f2 + 1.0;
        let h10 = f3 - 2.0 * f2 + f;
        let h01 = -2.0 * f3 + 3.0 * f2;
        let h11 = f3 - f2;
        h00 * b + h10 * m0 + h01 * c + h11 * m1
    }

    /// Centered-difference spatial derivative at a grid index (d = 1).
    pub fn fd_derivative(&self, i: usize) -> f64 {
        debug_assert_eq!(self.dim, 1);
        let i = i.clamp(1, self.n - 2);
        (self.values[i + 1] - self.values[i - 1]) / (2.0 * self.step)
    }

    /// Analytic derivative of the C^1 interpolant at x, consistent with
    /// `value_at` (d = 1); the tail model derivative is approximated by
    /// differences.
    pub fn deriv_at(&self, x: f64) -> f64 {
        debug_assert_eq!(self.dim, 1);
        let u = (x - self.origin) / self.step;
        if !(1.0..=(self.n - 3) as f64).contains(&u) {
            let h = self.step;
            return (self.tail_value(x + h) - self.tail_value(x - h)) / (2.0 * h);
        }
        let j = u.floor() as usize;
        let f = u - j as f64;
        let (a, b, c, d) = (
            self.values[j - 1],
            self.values[j],
            self.values[j + 1],
            self.values[j + 2],
        );
        let m0 = 0.5 * (c - a);
        let m1 = 0.5 * (d - b);
        let f2 = f * f;
        let dh00 = 6.0 * f2 - 6.0 * f;
        let dh10 = 3.0 * f2 - 4.0 * f + 1.0;
        let dh01 = -6.0 * f2 + 6.0 * f;
        let dh11 = 3.0 * f2 - 2.0 * f;
        (dh00 * b + dh10 * m0 + dh01 * c + dh11 * m1) / self.step
    }

    /// Cumulative distribution at x (d = 1): trapezoid cumulative inside
    /// the window with tail-model mass at both ends.
    pub fn cdf(&self) -> Cdf {
        debug_assert_eq!(self.dim, 1);
        let left_tail = tail_mass_beyond(self, self.origin.abs());
        let mut cum = Vec::with_capacity(self.n);
        let mut acc = left_tail;
        cum.push(acc);
        for i in 1..self.n {
            acc += 0.5 * (self.values[i - 1] + self.values[i]) * self.step;
            cum.push(acc);
        }
        Cdf { origin: self.origin, step: self.step, cum }
    }
}

/// Piecewise-linear CDF over the density grid.
#[derive(Debug, Clone)]
pub struct Cdf {
    origin: f64,
    step: f64,
    cum: Vec<f64>,
}

impl Cdf {
    pub fn eval(&self, x: f64) -> f64 {
        let u = (x - self.origin) / self.step;
        if u <= 0.0 {
            return self.cum[0];
        }
        let n = self.cum.len();
        if u >= (n - 1) as f64 {
            return self.cum[n - 1];
        }
        let j = u.floor() as usize;
        let f = u - j as f64;
        self.cum[j] * (1.0 - f) + self.cum[j + 1] * f
    }

    pub fn total(&self) -> f64 {
        *self.cum.last().unwrap()
    }
}

/// Tail-model mass in |x| > b on one side.
fn tail_mass_beyond(g: &GridDensity, b: f64) -> f64 {
    let c = 0.5 * (g.tail_coeff.0 + g.tail_coeff.1);
    let shape = g.shape.clone();
    let st = g.s - g.t;
    match quad::integrate_to_inf(move |r| st * c / shape.eval(r), b.max(1e-6), 1e-10) {
        Improper::Converged(v) => v,
        _ => 0.0,
    }
}

/// Measures the frequency u* where Re Psi first reaches ln(floor), then
/// returns 1.1 u*.
fn auto_extent(spec: &FrozenKernelSpec, t: f64, s: f64, floor: f64) -> Result<f64> {
    let target = floor.ln();
    let probe = |u: f64| -> Result<f64> {
        let xi: Vec<f64> = match spec.profile.dim {
            1 => vec![u],
            _ => vec![u, 0.0],
        };
        Ok(characteristic_exponent(spec, t, s, &xi)?.re)
    };
    let mut hi = 1.0f64;
    let mut guard = 0;
    while probe(hi)? > target {
        hi *= 2.0;
        guard += 1;
        if guard > 64 {
            return Err(Error::Numeric(
                "characteristic function does not reach the boundary floor".into(),
            ));
        }
    }
    let mut lo = if guard == 0 {
        // already below floor at u = 1: bisect down
        let mut lo = hi / 2.0;
        let mut g2 = 0;
        while probe(lo)? <= target {
            hi = lo;
            lo *= 0.5;
            g2 += 1;
            if g2 > 40 {
                break;
            }
        }
        lo
    } else {
        hi / 2.0
    };
    for _ in 0..24 {
        let mid = 0.5 * (lo + hi);
        if probe(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(1.1 * hi)
}

/// Resolves the frequency extent: user-provided extents are verified
/// against the boundary-decay requirement.
fn resolve_extent(spec: &FrozenKernelSpec, t: f64, s: f64, cfg: &GridConfig) -> Result<f64> {
    match cfg.freq_extent {
        None => auto_extent(spec, t, s, cfg.boundary_floor).map(|e| e * cfg.oversample.max(1.0)),
        Some(xi) => {
            let probe: Vec<f64> = match spec.profile.dim {
                1 => vec![xi],
                _ => vec![xi, 0.0],
            };
            let re = characteristic_exponent(spec, t, s, &probe)?.re;
            if re > cfg.boundary_floor.ln() {
                let needed = auto_extent(spec, t, s, cfg.boundary_floor)?;
                return Err(Error::Config(format!(
                    "frequency box too small: |exp Psi({xi})| = {:.3e} exceeds the boundary floor {:.1e}; required extent ~ {needed:.4}",
                    re.exp(),
                    cfg.boundary_floor
                )));
            }
            Ok(xi)
        }
    }
}

/// Builds the full frequency table weight(xi, exp(Psi(xi))) on the
/// centered grid, exploiting the Hermitian symmetry
/// Psi(-xi) = conj(Psi(xi)).
fn frequency_table_d1(
    spec: &FrozenKernelSpec,
    t: f64,
    s: f64,
    n: usize,
    dxi: f64,
    weight: impl Fn(f64, Complex64) -> Complex64 + Sync,
) -> Result<Vec<Complex64>> {
    // raw exp(Psi) at xi = i dxi, i = 0..=n/2
    let half: Vec<Complex64> = (0..=n / 2)
        .into_par_iter()
        .map(|i| {
            characteristic_exponent(spec, t, s, &[i as f64 * dxi]).map(|p| p.exp())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..n)
        .map(|k| {
            let xi = (k as f64 - n as f64 / 2.0) * dxi;
            let i = (k as i64 - (n / 2) as i64).unsigned_abs() as usize;
            let e = if k >= n / 2 { half[i] } else { half[i].conj() };
            weight(xi, e)
        })
        .collect())
}

/// Centered inverse DFT: p_j = (dxi / 2 pi) (-1)^{j + n/2} FFT[(-1)^k F_k]_j.
fn centered_ifft_d1(f: &[Complex64], dxi: f64) -> Vec<f64> {
    let n = f.len();
    let mut buf: Vec<Complex64> = f
        .iter()
        .enumerate()
        .map(|(k, &v)| if k % 2 == 0 { v } else { -v })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let base_sign = if (n / 2) % 2 == 0 { 1.0 } else { -1.0 };
    let coeff = dxi / (2.0 * std::f64::consts::PI);
    buf.iter()
        .enumerate()
        .map(|(j, v)| {
            let sign = if j % 2 == 0 { base_sign } else { -base_sign };
            coeff * sign * v.re
        })
        .collect()
}

/// Fits the one-jump tail coefficient on each side, iteratively removing
/// the aliasing images of the model (damped fixed point; the image
/// contribution near the band is a sizable fraction of the signal).
fn fit_tail_d1(
    values: &[f64],
    n: usize,
    dx: f64,
    x0: f64,
    st: f64,
    shape: &TailShape,
) -> (f64, f64) {
    let l = n as f64 * dx; // window period
    let model = |y: f64, cl: f64, cr: f64| -> f64 {
        let c = if y < 0.0 { cl } else { cr };
        st * c / shape.eval(y.abs().max(dx))
    };
    let band = |side_right: bool, cl: f64, cr: f64| -> f64 {
        let mut samples: Vec<f64> = Vec::new();
        for j in 0..n {
            let x = x0 + j as f64 * dx;
            let frac = x.abs() / (0.5 * l);
            if !(0.55..=0.8).contains(&frac) || (x > 0.0) != side_right {
                continue;
            }
            let mut img = 0.0;
            for k in 1..=3 {
                let kl = k as f64 * l;
                img += model(x - kl, cl, cr) + model(x + kl, cl, cr);
            }
            samples.push((values[j] - img) * shape.eval(x.abs()) / st);
        }
        if samples.is_empty() {
            return 0.0;
        }
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        samples[samples.len() / 2]
    };
    let (mut cl, mut cr) = (0.0, 0.0);
    for it in 0..12 {
        let nl = band(false, cl, cr).max(0.0);
        let nr = band(true, cl, cr).max(0.0);
        let w = if it == 0 { 1.0 } else { 0.6 };
        cl = (1.0 - w) * cl + w * nl;
        cr = (1.0 - w) * cr + w * nr;
    }
    (cl, cr)
}

/// Tail-corrected window mass: the raw trapezoid mass minus the in-window
/// aliasing images (8 image pairs plus an analytic closing tail) plus the
/// model mass beyond the window.
fn corrected_mass_d1(
    values: &[f64],
    n: usize,
    dx: f64,
    x0: f64,
    st: f64,
    (cl, cr): (f64, f64),
    shape: &TailShape,
) -> (f64, f64) {
    let raw: f64 = values.iter().sum::<f64>() * dx;
    let l = n as f64 * dx;
    let n_img = 8;
    let mut alias = 0.0;
    for j in 0..n {
        let x = x0 + j as f64 * dx;
        for img in 1..=n_img {
            let k = img as f64;
            alias += st * cr / shape.eval((x - k * l).abs()) * dx;
            alias += st * cl / shape.eval((x + k * l).abs()) * dx;
        }
    }
    // the image sums tile [l/2, (2 n_img + 1) l/2]; close the remainder
    let far_edge = (2.0 * n_img as f64 + 1.0) * 0.5 * l;
    let sh = shape.clone();
    let closing = match quad::integrate_to_inf(move |r| st * (cl + cr) / sh.eval(r), far_edge, 1e-10)
    {
        Improper::Converged(v) => v,
        _ => 0.0,
    };
    alias += closing;
    let edge = 0.5 * l;
    let sh = shape.clone();
    let beyond = match quad::integrate_to_inf(move |r| st * (cl + cr) / sh.eval(r), edge, 1e-10) {
        Improper::Converged(v) => v,
        _ => 0.0,
    };
    (raw, raw - alias + beyond)
}

pub(crate) fn assemble_d1(
    profile: &crate::profiles::ScalingProfile,
    t: f64,
    s: f64,
    n: usize,
    dxi: f64,
    values: Vec<f64>,
) -> GridDensity {
    let dx = 2.0 * std::f64::consts::PI / (n as f64 * dxi);
    let x0 = -(n as f64 / 2.0) * dx;
    let shape = TailShape::build_for(profile, n as f64 * dx);
    let st = s - t;
    let tail = fit_tail_d1(&values, n, dx, x0, st, &shape);
    let (mass_raw, mass_corrected) = corrected_mass_d1(&values, n, dx, x0, st, tail, &shape);
    let min_value = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_value = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    GridDensity {
        dim: 1,
        n,
        step: dx,
        origin: x0,
        values,
        t,
        s,
        mass_raw,
        mass_corrected,
        min_value,
        max_value,
        ringing_ok: min_value >= -1e-8 * max_value,
        tail_coeff: tail,
        shape,
    }
}

/// Samples the density of the increment over [t, s] on a uniform grid via
/// the discrete inverse Fourier transform of exp Psi.
pub fn density_fft(spec: &FrozenKernelSpec, t: f64, s: f64, cfg: &GridConfig) -> Result<GridDensity> {
    if !(t >= 0.0 && s > t) {
        return Err(Error::Domain(format!("need 0 <= t < s, got ({t}, {s})")));
    }
    if !cfg.n.is_power_of_two() || cfg.n < 16 {
        return Err(Error::Config(format!("grid size {} must be a power of two >= 16", cfg.n)));
    }
    match spec.profile.dim {
        1 => {
            let extent = resolve_extent(spec, t, s, cfg)?;
            let n = cfg.n;
            let dxi = 2.0 * extent / n as f64;
            let f = frequency_table_d1(spec, t, s, n, dxi, |_, e| e)?;
            let values = centered_ifft_d1(&f, dxi);
            Ok(assemble_d1(&spec.profile, t, s, n, dxi, values))
        }
        2 => density_fft_d2(spec, t, s, cfg),
        d => Err(Error::Config(format!("density_fft: unsupported dimension {d}"))),
    }
}

/// Spectral gradient: multiplies exp Psi by (i xi) componentwise before
/// inversion. Returns one grid per component.
pub fn gradient(spec: &FrozenKernelSpec, t: f64, s: f64, cfg: &GridConfig) -> Result<Vec<GridDensity>> {
    if spec.profile.dim != 1 {
        return Err(Error::Config("gradient implemented for d = 1".into()));
    }
    let extent = resolve_extent(spec, t, s, cfg)?;
    let n = cfg.n;
    let dxi = 2.0 * extent / n as f64;
    // d/dx of (1/2pi) int e^{-i x xi} F dxi carries the weight -i xi
    let f = frequency_table_d1(spec, t, s, n, dxi, |xi, e| Complex64::new(0.0, -xi) * e)?;
    let values = centered_ifft_d1(&f, dxi);
    let mut g = assemble_d1(&spec.profile, t, s, n, dxi, values);
    // tail model does not apply to the derivative
    g.tail_coeff = (0.0, 0.0);
    g.mass_corrected = g.mass_raw;
    g.ringing_ok = true;
    Ok(vec![g])
}

/// Evaluates the density at arbitrary points via the scaling reduction:
/// p_{t,s}(x) = phi^{-1}(s-t)^{-d} p~_{0,1}(x / phi^{-1}(s-t)) with the
/// rescaled kernel and profile, on the frequency grid the direct transform
/// would use for (t, s).
pub fn density_scaled_at(
    spec: &FrozenKernelSpec,
    t: f64,
    s: f64,
    xs: &[f64],
    cfg: &GridConfig,
) -> Result<Vec<f64>> {
    if !(t >= 0.0 && s > t && s <= 1.0) {
        return Err(Error::Domain(format!("need 0 <= t < s <= 1, got ({t}, {s})")));
    }
    if spec.profile.dim != 1 {
        return Err(Error::Config("density_scaled implemented for d = 1".into()));
    }
    let c = spec.profile.phi_inverse(s - t)?;
    let unit = spec.rescale_to_unit(t, s)?;
    let extent = resolve_extent(spec, t, s, cfg)?;
    let n = cfg.n;
    let dxi = 2.0 * extent / n as f64;
    // scaled grid: eta_k = c xi_k
    let deta = c * dxi;
    let f: Vec<Complex64> = (0..=n / 2)
        .into_par_iter()
        .map(|i| {
            let eta = i as f64 * deta;
            characteristic_exponent(&unit, 0.0, 1.0, &[eta]).map(|p| p.exp())
        })
        .collect::<Result<Vec<_>>>()?;
    let coeff = deta / (2.0 * std::f64::consts::PI);
    Ok(xs
        .iter()
        .map(|&x| {
            let xt = x / c;
            // Hermitian sum over the centered grid [-n/2, n/2)
            let mut acc = f[0].re; // eta = 0 term
            for (i, fk) in f.iter().enumerate().skip(1) {
                let eta = i as f64 * deta;
                let ph = Complex64::new(0.0, -xt * eta).exp();
                let w = if i == n / 2 { 1.0 } else { 2.0 };
                acc += w * (fk * ph).re;
            }
            coeff * acc / c
        })
        .collect())
}

fn density_fft_d2(spec: &FrozenKernelSpec, t: f64, s: f64, cfg: &GridConfig) -> Result<GridDensity> {
    if !spec.kappa.isotropic() {
        return Err(Error::Config(
            "density_fft in d = 2 requires a z-isotropic kappa".into(),
        ));
    }
    let extent = resolve_extent(spec, t, s, cfg)?;
    let n = cfg.n;
    let dxi = 2.0 * extent / n as f64;
    // radial table of Psi on [0, sqrt(2) extent]
    let rmax = extent * std::f64::consts::SQRT_2 * 1.0001;
    let nr = 1536;
    let dr = rmax / (nr - 1) as f64;
    let radial: Vec<Complex64> = (0..nr)
        .into_par_iter()
        .map(|i| characteristic_exponent(spec, t, s, &[i as f64 * dr, 0.0]))
        .collect::<Result<Vec<_>>>()?;
    let interp = |rho: f64| -> Complex64 {
        let u = (rho / dr).min((nr - 2) as f64);
        let j = u.floor() as usize;
        let f = u - j as f64;
        radial[j] * (1.0 - f) + radial[j + 1] * f
    };
    // frequency table
    let mut field: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); n * n];
    for k1 in 0..n {
        let x1 = (k1 as f64 - n as f64 / 2.0) * dxi;
        for k2 in 0..n {
            let x2 = (k2 as f64 - n as f64 / 2.0) * dxi;
            let rho = (x1 * x1 + x2 * x2).sqrt();
            let sign = if (k1 + k2) % 2 == 0 { 1.0 } else { -1.0 };
            field[k1 * n + k2] = interp(rho).exp() * sign;
        }
    }
    // row-column FFT
    let planner = FftPlanner::new().plan_fft_forward(n);
    for row in field.chunks_mut(n) {
        planner.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for c in 0..n {
        for r in 0..n {
            col[r] = field[r * n + c];
        }
        planner.process(&mut col);
        for r in 0..n {
            field[r * n + c] = col[r];
        }
    }
    let dx = 2.0 * std::f64::consts::PI / (n as f64 * dxi);
    let x0 = -(n as f64 / 2.0) * dx;
    let coeff = (dxi / (2.0 * std::f64::consts::PI)).powi(2);
    let base_sign = 1.0; // (-1)^{n/2 + n/2} = 1 for even n
    let values: Vec<f64> = field
        .iter()
        .enumerate()
        .map(|(idx, v)| {
            let (j1, j2) = (idx / n, idx % n);
            let sign = if (j1 + j2) % 2 == 0 { base_sign } else { -base_sign };
            coeff * sign * v.re
        })
        .collect();
    let raw: f64 = values.iter().sum::<f64>() * dx * dx;
    // radial tail fit on the outer annulus
    let shape = TailShape::build(spec, n as f64 * dx);
    let st = s - t;
    let mut samples: Vec<f64> = Vec::new();
    for j1 in 0..n {
        for j2 in 0..n {
            let (x1, x2) = (x0 + j1 as f64 * dx, x0 + j2 as f64 * dx);
            let r = (x1 * x1 + x2 * x2).sqrt();
            let frac = r / (0.5 * n as f64 * dx);
            if (0.55..=0.8).contains(&frac) {
                samples.push(values[j1 * n + j2] * shape.eval(r) / st);
            }
        }
    }
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let c_tail = if samples.is_empty() { 0.0 } else { samples[samples.len() / 2] };
    // mass of the model outside a centered square of half-width a:
    // the angular measure outside the square at radius r is
    // 8 acos(a/r) on (a, a sqrt(2)) and 2 pi beyond
    let l = n as f64 * dx;
    let outside_square = |a: f64| -> f64 {
        let sh = shape.clone();
        let f = move |r: f64| {
            let ang = if r <= a {
                0.0
            } else if r < a * std::f64::consts::SQRT_2 {
                8.0 * (a / r).acos()
            } else {
                2.0 * std::f64::consts::PI
            };
            st * c_tail / sh.eval(r) * r * ang
        };
        match quad::integrate_to_inf(f, a * 0.99, 1e-10) {
            Improper::Converged(v) => v,
            _ => 0.0,
        }
    };
    // folded-in aliasing: discrete image sums over the 8 neighbour tiles,
    // closed by the model mass outside the 3x3 tile block
    let mut alias = 0.0;
    for j1 in 0..n {
        for j2 in 0..n {
            let (x1, x2) = (x0 + j1 as f64 * dx, x0 + j2 as f64 * dx);
            for (v1, v2) in [
                (l, 0.0),
                (-l, 0.0),
                (0.0, l),
                (0.0, -l),
                (l, l),
                (l, -l),
                (-l, l),
                (-l, -l),
            ] {
                let r = ((x1 - v1).powi(2) + (x2 - v2).powi(2)).sqrt();
                alias += st * c_tail / shape.eval(r.max(dx)) * dx * dx;
            }
        }
    }
    alias += outside_square(1.5 * l);
    let beyond = outside_square(0.5 * l);
    let min_value = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_value = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(GridDensity {
        dim: 2,
        n,
        step: dx,
        origin: x0,
        values,
        t,
        s,
        mass_raw: raw,
        mass_corrected: raw - alias + beyond,
        min_value,
        max_value,
        ringing_ok: min_value >= -1e-8 * max_value,
        tail_coeff: (c_tail, c_tail),
        shape,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frozen::tests::{cauchy_spec, power_profile};
    use crate::frozen::KappaFrozen;

    fn cauchy_density() -> GridDensity {
        density_fft(&cauchy_spec(), 0.0, 1.0, &GridConfig::default()).unwrap()
    }

    #[test]
    fn cauchy_density_matches_closed_form() {
        // p(x) = 1 / (pi^2 + x^2)
        let g = cauchy_density();
        let mut worst: f64 = 0.0;
        for i in 0..g.n {
            let x = g.x(i);
            if x.abs() <= 10.0 {
                let oracle = 1.0 / (std::f64::consts::PI.powi(2) + x * x);
                worst = worst.max((g.values[i] - oracle).abs() / oracle);
            }
        }
        assert!(worst < 1e-3, "max relative error {worst}");
        let p0 = g.value_at(0.0);
        assert!((p0 - 1.0 / std::f64::consts::PI.powi(2)).abs() < 1e-5, "p(0) = {p0}");
        let ppi = g.value_at(std::f64::consts::PI);
        assert!((ppi - 0.5 / std::f64::consts::PI.powi(2)).abs() < 2e-5, "p(pi) = {ppi}");
    }

    #[test]
    fn density_even_for_symmetric_spec() {
        let g = cauchy_density();
        let n = g.n;
        for i in 1..n / 2 {
            let a = g.values[n / 2 + i];
            let b = g.values[n / 2 - i];
            assert!((a - b).abs() <= 1e-12 * g.max_value, "asymmetry at i = {i}");
        }
    }

    #[test]
    fn mass_and_ringing() {
        let g = cauchy_density();
        assert!((g.mass_raw - 1.0).abs() < 1e-10, "raw mass {})", g.mass_raw);
        assert!((g.mass_corrected - 1.0).abs() < 1e-4, "corrected {}", g.mass_corrected);
        assert!(g.ringing_ok);
        // tail coefficient should recover kappa = 1
        assert!((g.tail_coeff.0 - 1.0).abs() < 0.05, "tail {:?}", g.tail_coeff);
        assert!((g.tail_coeff.1 - 1.0).abs() < 0.05);
    }

    #[test]
    fn boundary_check_rejects_small_extent() {
        let r = density_fft(
            &cauchy_spec(),
            0.0,
            1.0,
            &GridConfig { n: 4096, freq_extent: Some(3.0), ..Default::default() },
        );
        match r {
            Err(Error::Config(msg)) => assert!(msg.contains("required extent")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn scaled_matches_direct_power_law() {
        // exact self-similarity for power-law phi
        let spec = cauchy_spec();
        let (t, s) = (0.0, 0.5);
        let g = density_fft(&spec, t, s, &GridConfig::default()).unwrap();
        let idx: Vec<usize> = (0..g.n).step_by(97).collect();
        let xs: Vec<f64> = idx.iter().map(|&i| g.x(i)).collect();
        let scaled = density_scaled_at(&spec, t, s, &xs, &GridConfig::default()).unwrap();
        let sup = g.max_value;
        for (k, &i) in idx.iter().enumerate() {
            let diff = (scaled[k] - g.values[i]).abs() / sup;
            assert!(diff < 1e-8, "x = {}: {} vs {} (rel {diff})", xs[k], scaled[k], g.values[i]);
        }
    }

    #[test]
    fn scaled_density_value_scaling_identity() {
        // p_{0,s}(0) = s^{-1/alpha} p_{0,1}(0) for power laws
        let spec = cauchy_spec();
        let p1 = density_scaled_at(&spec, 0.0, 1.0, &[0.0], &GridConfig::default()).unwrap()[0];
        let ps = density_scaled_at(&spec, 0.0, 0.25, &[0.0], &GridConfig::default()).unwrap()[0];
        assert!((ps - p1 / 0.25).abs() < 1e-6 * (p1 / 0.25));
    }

    #[test]
    fn spectral_gradient_matches_finite_differences() {
        let g = cauchy_density();
        let dg = &gradient(&cauchy_spec(), 0.0, 1.0, &GridConfig::default()).unwrap()[0];
        let mut worst: f64 = 0.0;
        for i in 1..g.n - 1 {
            if g.x(i).abs() > 15.0 {
                continue;
            }
            let fd = g.fd_derivative(i);
            worst = worst.max((dg.values[i] - fd).abs());
        }
        // centered differences are O(step^2)
        assert!(worst < 5e-4, "worst |spectral - fd| = {worst}");
        // gradient of an even density vanishes at the origin
        assert!(dg.value_at(0.0).abs() < 1e-10);
    }

    #[test]
    fn gradient_bounded_by_rho() {
        let spec = cauchy_spec();
        let dg = &gradient(&spec, 0.0, 1.0, &GridConfig::default()).unwrap()[0];
        let mut c: f64 = 0.0;
        for i in 0..dg.n {
            let x = dg.x(i);
            if x.abs() <= 20.0 {
                let rho = spec.profile.rho(1.0, x.abs()).unwrap();
                c = c.max(dg.values[i].abs() / rho);
            }
        }
        assert!(c.is_finite() && c > 0.0 && c < 5.0, "gradient/rho sweep constant {c}");
    }

    #[test]
    fn semigroup_two_steps_matches_direct() {
        // p_{0,2} = p_{0,1} * p_{1,2} (grid convolution) within 1e-6
        let spec = cauchy_spec();
        let cfg = GridConfig::default();
        let ext = super::resolve_extent(&spec, 0.0, 1.0, &cfg).unwrap();
        let forced = GridConfig { n: 4096, freq_extent: Some(ext), ..Default::default() };
        let p1 = density_fft(&spec, 0.0, 1.0, &forced).unwrap();
        let p2 = density_fft(&spec, 1.0, 2.0, &forced).unwrap();
        let direct = density_fft(&spec, 0.0, 2.0, &forced).unwrap();
        for x in [-4.0, -1.0, 0.0, 2.5] {
            let j = ((x - p1.origin) / p1.step).round() as usize;
            let xj = p1.x(j);
            let mut conv = 0.0;
            for i in 0..p1.n {
                conv += p1.values[i] * p2.value_at(xj - p1.x(i)) * p1.step;
            }
            let d = direct.value_at(xj);
            assert!((conv - d).abs() < 1e-6, "x = {xj}: conv {conv} vs direct {d}");
        }
    }

    #[test]
    fn d2_isotropic_mass() {
        let spec = FrozenKernelSpec::new(
            KappaFrozen::Const(1.0),
            1.0,
            true,
            power_profile(1.0, 2),
        )
        .unwrap();
        let g = density_fft(&spec, 0.0, 1.0, &GridConfig { n: 256, ..Default::default() }).unwrap();
        assert!(g.ringing_ok);
        assert!((g.mass_corrected - 1.0).abs() < 5e-3, "d2 mass {}", g.mass_corrected);
        // radial symmetry spot check
        let c = g.n / 2;
        let v1 = g.values[(c + 10) * g.n + c];
        let v2 = g.values[c * g.n + (c + 10)];
        assert!((v1 - v2).abs() < 1e-10 * g.max_value);
    }
}
