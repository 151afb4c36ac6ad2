//! Densities of the x-independent (frozen-coefficient) time-inhomogeneous
//! jump process: characteristic exponents, Fourier-inversion densities,
//! scaling reduction, derivatives, the nonlocal difference operators, the
//! big/small-jump decomposition and the compensator drift.

pub mod charexp;
pub mod decompose;
pub mod delta;
pub mod fft;

use crate::error::{Error, Result};
use crate::profiles::{CaseTag, ScalingProfile};
use crate::quad;
use num_complex::Complex64;
use std::fmt;
use std::sync::Arc;

pub use decompose::{decompose_small_large, drift_vector, Decomposition};
pub use delta::{apply_generator, delta_phi_apply, DeltaBranch};
pub use fft::{density_fft, density_scaled_at, gradient, GridConfig, GridDensity};

/// x-independent jump intensity ratio kappa(t, z), bounded between
/// 1/kappa0 and kappa0.
#[derive(Clone)]
pub enum KappaFrozen {
    Const(f64),
    /// base + amp * sin(omega * t), isotropic in z.
    TimeSin { base: f64, amp: f64, omega: f64 },
    /// d = 1 only: `plus` for z > 0, `minus` for z < 0.
    SignSplit { plus: f64, minus: f64 },
    /// kappa(t0 + dt * r, c * z): the scaling-reduction image of `inner`.
    Rescaled { inner: Box<KappaFrozen>, t0: f64, dt: f64, c: f64 },
    Custom {
        f: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>,
        time_dependent: bool,
        z_symmetric: bool,
        isotropic: bool,
        /// radii where kappa jumps or kinks in |z| (quadrature splits there)
        breakpoints: Vec<f64>,
    },
}

impl fmt::Debug for KappaFrozen {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KappaFrozen::Const(c) => write!(f, "Const({c})"),
            KappaFrozen::TimeSin { base, amp, omega } => {
                write!(f, "TimeSin(base={base}, amp={amp}, omega={omega})")
            }
            KappaFrozen::SignSplit { plus, minus } => write!(f, "SignSplit({plus}, {minus})"),
            KappaFrozen::Rescaled { inner, t0, dt, c } => {
                write!(f, "Rescaled({inner:?}, t0={t0}, dt={dt}, c={c})")
            }
            KappaFrozen::Custom { .. } => write!(f, "Custom"),
        }
    }
}

impl KappaFrozen {
    pub fn eval(&self, t: f64, z: &[f64]) -> f64 {
        match self {
            KappaFrozen::Const(c) => *c,
            KappaFrozen::TimeSin { base, amp, omega } => base + amp * (omega * t).sin(),
            KappaFrozen::SignSplit { plus, minus } => {
                if z [0] >= 0.0 {
                    *plus
                } else {
                    *minus
                }
            }
            KappaFrozen::Rescaled { inner, t0, dt, c } => {
                let zz: Vec<f64> = z.iter().map(|v| c * v).collect();
                inner.eval(t0 + dt * t, &zz)
            }
            KappaFrozen::Custom { f, .. } => f(t, z),
        }
    }

    pub fn time_dependent(&self) -> bool {
        match self {
            KappaFrozen::Const(_) | KappaFrozen::SignSplit { .. } => false,
            KappaFrozen::TimeSin { amp, .. } => *amp != 0.0,
            KappaFrozen::Rescaled { inner, .. } => inner.time_dependent(),
            KappaFrozen::Custom { time_dependent, .. } => *time_dependent,
        }
    }

    pub fn z_symmetric(&self) -> bool {
        match self {
            KappaFrozen::Const(_) | KappaFrozen::TimeSin { .. } => true,
            KappaFrozen::SignSplit { plus, minus } => plus == minus,
            KappaFrozen::Rescaled { inner, .. } => inner.z_symmetric(),
            KappaFrozen::Custom { z_symmetric, .. } => *z_symmetric,
        }
    }

    /// Radii where kappa has jumps or kinks in |z|.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            KappaFrozen::Const(_) | KappaFrozen::TimeSin { .. } | KappaFrozen::SignSplit { .. } => {
                vec![]
            }
            KappaFrozen::Rescaled { inner, c, .. } => {
                inner.breakpoints().iter().map(|b| b / c).collect()
            }
            KappaFrozen::Custom { breakpoints, .. } => breakpoints.clone(),
        }
    }

    /// Isotropy in z (relevant for d = 2 radial caching).
    pub fn isotropic(&self) -> bool {
        match self {
            KappaFrozen::Const(_) | KappaFrozen::TimeSin { .. } => true,
            KappaFrozen::SignSplit { plus, minus } => plus == minus,
            KappaFrozen::Rescaled { inner, .. } => inner.isotropic(),
            KappaFrozen::Custom { isotropic, .. } => *isotropic,
        }
    }
}

/// The frozen-coefficient kernel specification.
#[derive(Debug, Clone)]
pub struct FrozenKernelSpec {
    pub kappa: KappaFrozen,
    pub kappa0: f64,
    pub symmetric_in_z: bool,
    pub profile: ScalingProfile,
}

impl FrozenKernelSpec {
    /// Validates the kappa bounds on a sampled lattice, the symmetry
    /// declaration, and (in the truncated-compensator case for
    /// non-symmetric kernels) the odd-part cancellation.
    pub fn new(
        kappa: KappaFrozen,
        kappa0: f64,
        symmetric_in_z: bool,
        profile: ScalingProfile,
    ) -> Result<Self> {
        if kappa0 < 1.0 {
            return Err(Error::Domain(format!("kappa0 = {kappa0} must be >= 1")));
        }
        let spec = FrozenKernelSpec { kappa, kappa0, symmetric_in_z, profile };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let radii = crate::profiles::log_grid(1e-6, 1e3, 24);
        let times = [0.0, 0.17, 0.5, 0.93, 1.0];
        let dirs: Vec<Vec<f64>> = match self.profile.dim {
            1 => vec![vec![1.0], vec![-1.0]],
            _ => (0..8)
                .map(|k| {
                    let th = k as f64 * std::f64::consts::PI / 4.0;
                    vec![th.cos(), th.sin()]
                })
                .collect(),
        };
        for &t in &times {
            for &r in &radii {
                for dir in &dirs {
                    let z: Vec<f64> = dir.iter().map(|d| d * r).collect();
                    let v = self.kappa.eval(t, &z);
                    if !(v >= 1.0 / self.kappa0 - 1e-12 && v <= self.kappa0 + 1e-12) {
                        return Err(Error::Domain(format!(
                            "kappa({t}, {z:?}) = {v} outside [1/{0}, {0}]",
                            self.kappa0
                        )));
                    }
                    if self.symmetric_in_z {
                        let zn: Vec<f64> = z.iter().map(|v| -v).collect();
                        if (v - self.kappa.eval(t, &zn)).abs() > 1e-12 {
                            return Err(Error::Domain(
                                "kappa declared symmetric in z but is not".into(),
                            ));
                        }
                    }
                }
            }
        }
        // odd-part cancellation in the truncated-compensator case
        if self.profile.case_tag == CaseTag::Case2 && !self.symmetric_in_z {
            if self.profile.dim != 1 {
                return Err(Error::Config(
                    "odd-part cancellation check implemented for d = 1".into(),
                ));
            }
            for &t in &times {
                for &r in &[0.1, 0.5, 1.0, 3.0] {
                    let m = quad::gl16(|z| z * self.kappa.eval(t, &[z]), -r, r);
                    if m.abs() > 1e-8 {
                        return Err(Error::Domain(format!(
                            "odd-part integral over |z| <= {r} at t = {t} is {m}, not 0"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// The time-averaged kappa over [t, s] at fixed z (16-point Gauss).
    pub fn kappa_time_avg(&self, t: f64, s: f64, z: &[f64]) -> f64 {
        if !self.kappa.time_dependent() {
            return self.kappa.eval(t, z);
        }
        quad::gl16(|r| self.kappa.eval(r, z), t, s) / (s - t)
    }

    /// The scaling-reduction image: unit-interval spec with
    /// kappa~(r, z) = kappa(t + (s-t) r, phi^{-1}(s-t) z) and the rescaled
    /// profile. Satisfies the same bounds with the same kappa0.
    pub fn rescale_to_unit(&self, t: f64, s: f64) -> Result<FrozenKernelSpec> {
        let lambda = s - t;
        let c = self.profile.phi_inverse(lambda)?;
        Ok(FrozenKernelSpec {
            kappa: KappaFrozen::Rescaled {
                inner: Box::new(self.kappa.clone()),
                t0: t,
                dt: lambda,
                c,
            },
            kappa0: self.kappa0,
            symmetric_in_z: self.symmetric_in_z,
            profile: self.profile.rescaled(lambda)?,
        })
    }
}

struct SpecWeight<'a>(&'a FrozenKernelSpec);

impl charexp::DirectionalWeight for SpecWeight<'_> {
    fn weight(&self, tau: f64, theta: &[f64], r: f64) -> f64 {
        let z: Vec<f64> = theta.iter().map(|d| d * r).collect();
        self.0.kappa.eval(tau, &z)
    }
}

/// The characteristic exponent Psi(t, s, xi) of the increment over [t, s]:
/// (s-t) int_0^1 int (e^{i xi.z} - 1 - i xi.z-comp) kappa(t + (s-t)r, z)
/// / (|z|^d phi(|z|)) dz dr, with the small-|z| integrand series-compensated.
/// Re Psi <= 0 and Psi(t, s, 0) = 0.
pub fn characteristic_exponent(
    spec: &FrozenKernelSpec,
    t: f64,
    s: f64,
    xi: &[f64],
) -> Result<Complex64> {
    exponent_region(spec, t, s, xi, 0.0, f64::INFINITY)
}

/// Characteristic exponent restricted to jumps with |z| in [lo, hi].
pub fn exponent_region(
    spec: &FrozenKernelSpec,
    t: f64,
    s: f64,
    xi: &[f64],
    lo: f64,
    hi: f64,
) -> Result<Complex64> {
    if !(t >= 0.0 && s > t) {
        return Err(Error::Domain(format!("need 0 <= t < s, got ({t}, {s})")));
    }
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite frequency".into()));
    }
    if xi.len() != spec.profile.dim {
        return Err(Error::Domain(format!(
            "frequency dimension {} does not match d = {}",
            xi.len(),
            spec.profile.dim
        )));
    }
    let w = SpecWeight(spec);
    let mut cuts: Vec<f64> = spec
        .kappa
        .breakpoints()
        .into_iter()
        .filter(|b| *b > lo && *b < hi && b.is_finite())
        .collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let mut edges = vec![lo];
    edges.extend(cuts);
    edges.push(hi);
    let space = |tau: f64| -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for seg in edges.windows(2) {
            acc += match spec.profile.dim {
                1 => charexp::space_exponent_d1(&w, &spec.profile, tau, xi[0], seg[0], seg[1]),
                _ => charexp::space_exponent_d2(&w, &spec.profile, tau, xi, seg[0], seg[1], 64),
            };
        }
        acc
    };
    if !spec.kappa.time_dependent() {
        let v = space(t) * (s - t);
        return check_finite(v);
    }
    // 16-point Gauss in time, refined adaptively on rule-doubling
    // discrepancy > 1e-9
    let coarse = gl16_c(&space, t, s);
    let m = 0.5 * (t + s);
    let fine = gl16_c(&space, t, m) + gl16_c(&space, m, s);
    if (coarse - fine).norm() <= 1e-9 * fine.norm().max(1.0) {
        return check_finite(fine);
    }
    let mut acc = Complex64::new(0.0, 0.0);
    let panels = 16;
    for k in 0..panels {
        let a = t + (s - t) * k as f64 / panels as f64;
        let b = t + (s - t) * (k + 1) as f64 / panels as f64;
        acc += gl16_c(&space, a, b);
    }
    check_finite(acc)
}

fn gl16_c<F: Fn(f64) -> Complex64>(f: &F, a: f64, b: f64) -> Complex64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..16 {
        acc += quad::GL16_W[i] * f(c + h * quad::GL16_X[i]);
    }
    acc * h
}

fn check_finite(v: Complex64) -> Result<Complex64> {
    if v.re.is_finite() && v.im.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric("characteristic exponent quadrature did not converge".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::{PhiFamily, ScalingDeclaration};

    pub(crate) fn power_profile(alpha: f64, dim: usize) -> ScalingProfile {
        ScalingProfile::new(
            PhiFamily::Power { alpha },
            ScalingDeclaration { beta1: alpha, beta2: alpha, c1: 1.0, c2: 1.0 },
            dim,
        )
        .unwrap()
    }

    pub(crate) fn cauchy_spec() -> FrozenKernelSpec {
        FrozenKernelSpec::new(KappaFrozen::Const(1.0), 1.0, true, power_profile(1.0, 1)).unwrap()
    }

    #[test]
    fn exponent_zero_frequency() {
        let spec = cauchy_spec();
        let v = characteristic_exponent(&spec, 0.0, 1.0, &[0.0]).unwrap();
        assert_eq!(v, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn exponent_cauchy_closed_form() {
        let spec = cauchy_spec();
        for &xi in &[0.4, 1.0, 3.7, 11.0] {
            let v = characteristic_exponent(&spec, 0.0, 1.0, &[xi]).unwrap();
            assert!((v.re + std::f64::consts::PI * xi).abs() < 1e-8 * (1.0 + xi));
            assert!(v.im.abs() < 1e-9 * (1.0 + xi));
        }
    }

    #[test]
    fn exponent_decay_rate_beta1() {
        // Re Psi <= -c |xi|^{beta1} (s-t) for |xi| >= 1, c > 0 by sweep
        for alpha in [0.5, 1.0, 1.5] {
            let spec =
                FrozenKernelSpec::new(KappaFrozen::Const(1.0), 1.0, true, power_profile(alpha, 1))
                    .unwrap();
            let mut c_min = f64::INFINITY;
            for &xi in &[1.0, 2.0, 5.0, 11.0, 31.0] {
                let v = characteristic_exponent(&spec, 0.2, 0.7, &[xi]).unwrap();
                assert!(v.re <= 1e-12);
                c_min = c_min.min(-v.re / (xi.powf(alpha) * 0.5));
            }
            assert!(c_min > 0.0, "alpha = {alpha}: c = {c_min}");
        }
    }

    #[test]
    fn exponent_additive_in_time() {
        let spec = FrozenKernelSpec::new(
            KappaFrozen::TimeSin { base: 1.0, amp: 0.3, omega: 5.0 },
            2.0,
            true,
            power_profile(1.0, 1),
        )
        .unwrap();
        let xi = [1.7];
        let whole = characteristic_exponent(&spec, 0.0, 1.0, &xi).unwrap();
        let a = characteristic_exponent(&spec, 0.0, 0.35, &xi).unwrap();
        let b = characteristic_exponent(&spec, 0.35, 1.0, &xi).unwrap();
        assert!((whole - a - b).norm() < 1e-9 * whole.norm());
    }

    #[test]
    fn kappa_bound_violation_rejected() {
        let r = FrozenKernelSpec::new(KappaFrozen::Const(3.0), 2.0, true, power_profile(1.0, 1));
        assert!(r.is_err());
    }

    #[test]
    fn case2_asymmetric_without_cancellation_rejected() {
        let r = FrozenKernelSpec::new(
            KappaFrozen::SignSplit { plus: 1.5, minus: 0.5 },
            2.0,
            false,
            power_profile(1.0, 1),
        );
        assert!(r.is_err(), "Case2 asymmetric kernel must satisfy the odd-part cancellation");
    }

    #[test]
    fn case1_asymmetric_allowed() {
        let spec = FrozenKernelSpec::new(
            KappaFrozen::SignSplit { plus: 1.5, minus: 0.5 },
            2.0,
            false,
            power_profile(0.5, 1),
        )
        .unwrap();
        let v = characteristic_exponent(&spec, 0.0, 1.0, &[1.0]).unwrap();
        assert!(v.re < 0.0);
        assert!(v.im.abs() > 1e-6, "asymmetric kernel should have drift: {v:?}");
    }

    #[test]
    fn rescaled_spec_exponent_consistency() {
        // Psi_{t,s}(xi) = Psi~_{0,1}(phi^{-1}(s-t) xi) by the scaling identity
        let spec = cauchy_spec();
        let (t, s) = (0.1, 0.45);
        let c = spec.profile.phi_inverse(s - t).unwrap();
        let unit = spec.rescale_to_unit(t, s).unwrap();
        for &xi in &[0.8, 4.0] {
            let a = characteristic_exponent(&spec, t, s, &[xi]).unwrap();
            let b = characteristic_exponent(&unit, 0.0, 1.0, &[c * xi]).unwrap();
            assert!((a - b).norm() < 1e-9 * a.norm().max(1.0), "{a} vs {b}");
        }
    }
}
