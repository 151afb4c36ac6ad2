//! The big/small-jump decomposition of the increment and the compensator
//! drift between truncation conventions.

use super::{exponent_region, FrozenKernelSpec};
use crate::error::{Error, Result};
use crate::profiles::CaseTag;
use crate::quad::{self, Improper};
use num_complex::Complex64;

/// The drift b integrated over [t, s] converting the case-dependent
/// compensator convention into the common truncated form:
/// Case1 uses -int_{|z|<=1} z kappa nu(dz), Case2 vanishes, Case3 uses
/// +int_{|z|>1} z kappa nu(dz).
pub fn drift_vector(spec: &FrozenKernelSpec, t: f64, s: f64) -> Result<Vec<f64>> {
    if !(t >= 0.0 && s > t) {
        return Err(Error::Domain(format!("need 0 <= t < s, got ({t}, {s})")));
    }
    let d = spec.profile.dim;
    match spec.profile.case_tag {
        CaseTag::Case2 => Ok(vec![0.0; d]),
        CaseTag::Case1 => signed_moment(spec, t, s, 0.0, 1.0).map(|v| v.iter().map(|x| -x).collect()),
        CaseTag::Case3 => signed_moment(spec, t, s, 1.0, f64::INFINITY),
    }
}

/// int_t^s int_{lo<|z|<=hi} z kappa(r, z) / (|z|^d phi(|z|)) dz dr.
pub(crate) fn signed_moment(
    spec: &FrozenKernelSpec,
    t: f64,
    s: f64,
    lo: f64,
    hi: f64,
) -> Result<Vec<f64>> {
    let d = spec.profile.dim;
    let time_avg = |z: &[f64]| spec.kappa_time_avg(t, s, z) * (s - t);
    let radial_diff = |dir_a: Vec<f64>, dir_b: Vec<f64>| -> Result<f64> {
        // int (kappa(r a) - kappa(r b)) / phi(r) dr over the radial range
        let f = |r: f64| {
            let za: Vec<f64> = dir_a.iter().map(|v| v * r).collect();
            let zb: Vec<f64> = dir_b.iter().map(|v| v * r).collect();
            (time_avg(&za) - time_avg(&zb)) / spec.profile.phi(r)
        };
        let inner = if lo == 0.0 {
            match quad::integrate_to_zero(f, hi.min(1.0), 1e-12) {
                Improper::Converged(v) => v,
                other => return Err(Error::Numeric(format!("drift inner integral: {other:?}"))),
            }
        } else {
            0.0
        };
        let outer = if hi > 1.0 {
            let a = lo.max(1.0);
            if hi.is_finite() {
                quad::integrate_geometric(f, a, hi, 32)
            } else {
                match quad::integrate_to_inf(f, a, 1e-12) {
                    Improper::Converged(v) => v,
                    other => {
                        return Err(Error::Numeric(format!("drift tail integral: {other:?}")))
                    }
                }
            }
        } else {
            0.0
        };
        Ok(inner + outer)
    };
    match d {
        1 => Ok(vec![radial_diff(vec![1.0], vec![-1.0])?]),
        2 => {
            // component i: int theta_i (kappa(r theta) - mean) ... expressed
            // via opposite-direction differences over the half circle
            let m = 16;
            let mut b = vec![0.0, 0.0];
            let dth = std::f64::consts::PI / m as f64;
            for k in 0..m {
                let th = (k as f64 + 0.5) * dth;
                let dir = vec![th.cos(), th.sin()];
                let neg: Vec<f64> = dir.iter().map(|v| -v).collect();
                let diff = radial_diff(dir.clone(), neg)?;
                b[0] += dir[0] * diff * dth;
                b[1] += dir[1] * diff * dth;
            }
            Ok(b)
        }
        _ => Err(Error::Config("drift_vector: unsupported dimension".into())),
    }
}

/// The two independent pieces of the increment: compensated small jumps on
/// |z| <= 1 and the finite-intensity large-jump part with total rate
/// lambda and its compensator drift.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub spec: FrozenKernelSpec,
    pub t: f64,
    pub s: f64,
    /// Total mass of 1_{|z|>1} (int_t^s kappa(r,z) dr) nu(dz).
    pub lambda: f64,
    /// b = int_{|z|>1} z^(phi) (int_t^s kappa dr) nu(dz): the shift between
    /// the raw compound Poisson sum and the large-jump piece.
    pub compensator_shift: Vec<f64>,
}

impl Decomposition {
    pub fn small_exponent(&self, xi: &[f64]) -> Result<Complex64> {
        exponent_region(&self.spec, self.t, self.s, xi, 0.0, 1.0)
    }

    pub fn large_exponent(&self, xi: &[f64]) -> Result<Complex64> {
        exponent_region(&self.spec, self.t, self.s, xi, 1.0, f64::INFINITY)
    }
}

/// Splits the increment over [t, s] at jump size 1.
pub fn decompose_small_large(spec: &FrozenKernelSpec, t: f64, s: f64) -> Result<Decomposition> {
    let d = spec.profile.dim;
    // lambda by radial-angular quadrature of the time-averaged intensity
    let time_mass = |z: &[f64]| spec.kappa_time_avg(t, s, z) * (s - t);
    let radial = |dir: Vec<f64>| -> Result<f64> {
        let f = |r: f64| {
            let z: Vec<f64> = dir.iter().map(|v| v * r).collect();
            time_mass(&z) / (r * spec.profile.phi(r))
        };
        match quad::integrate_to_inf(f, 1.0, 1e-12) {
            Improper::Converged(v) => Ok(v),
            other => Err(Error::Numeric(format!("large-jump intensity: {other:?}"))),
        }
    };
    let lambda = match d {
        1 => radial(vec![1.0])? + radial(vec![-1.0])?,
        2 => {
            let m = 32;
            let dth = 2.0 * std::f64::consts::PI / m as f64;
            let mut acc = 0.0;
            for k in 0..m {
                let th = k as f64 * dth;
                acc += radial(vec![th.cos(), th.sin()])? * dth;
            }
            acc
        }
        _ => return Err(Error::Config("decompose: unsupported dimension".into())),
    };
    let compensator_shift = match spec.profile.case_tag {
        // z^(phi) vanishes on |z| > 1 unless the compensator is full
        CaseTag::Case1 | CaseTag::Case2 => vec![0.0; d],
        CaseTag::Case3 => signed_moment(spec, t, s, 1.0, f64::INFINITY)?,
    };
    Ok(Decomposition { spec: spec.clone(), t, s, lambda, compensator_shift })
}
