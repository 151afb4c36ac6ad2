//! The radial jump-scale function phi: evaluation, inversion, case
//! classification, scaling-bound verification, the integrability
//! conditions A^(0)/A^(1), and the reference weight rho.
//!
//! phi is strictly increasing with phi(0) = 0 and phi(1) = 1, and
//! c0 = int_0^inf (r^2 /\ 1) / (r phi(r)) dr must be finite so that
//! dz / (|z|^d phi(|z|)) is a Levy measure. The integrability of 1/phi
//! at 0 and at infinity splits profiles into three cases which fix the
//! first-order compensator: none, truncated at |z| <= 1, or full.

use crate::error::{Error, Result};
use crate::quad::{self, Improper};
use std::fmt;
use std::sync::Arc;

/// Case classification of the profile per the integrability of 1/phi.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseTag {
    /// 1/phi integrable at 0 (no compensator needed).
    Case1,
    /// 1/phi non-integrable at both 0 and infinity (truncated compensator).
    Case2,
    /// 1/phi non-integrable at 0, integrable at infinity (full compensator).
    Case3,
}

/// First-order compensator convention attached to the jump measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompensatorMode {
    None,
    Truncated,
    Full,
}

impl CaseTag {
    pub fn compensator(self) -> CompensatorMode {
        match self {
            CaseTag::Case1 => CompensatorMode::None,
            CaseTag::Case2 => CompensatorMode::Truncated,
            CaseTag::Case3 => CompensatorMode::Full,
        }
    }
}

/// Built-in scale function families plus user callables.
#[derive(Clone)]
pub enum PhiFamily {
    /// r^alpha, 0 < alpha < 2.
    Power { alpha: f64 },
    /// r^alpha on (0,1], r^beta on (1,inf); continuous at 1.
    PiecewisePower { alpha: f64, beta: f64 },
    /// sum_i w_i r^{a_i} with sum w_i = 1 (so phi(1) = 1).
    Mixture { terms: Vec<(f64, f64)> },
    /// 1 / sum_i w_i r^{-a_i} with sum w_i = 1.
    HarmonicMixture { terms: Vec<(f64, f64)> },
    /// r (1 + ln(1/r)) on (0,1], r^beta on (1,inf). Slow lower scaling.
    SlowLog { beta: f64 },
    /// User callable with optional derivative; inversion by bisection.
    Custom {
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        df: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
        name: String,
    },
    /// Monotone knot table (log-log linear interpolation), knots strictly
    /// increasing in both coordinates, must bracket r = 1.
    Knots { r: Vec<f64>, v: Vec<f64> },
}

impl fmt::Debug for PhiFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhiFamily::Power { alpha } => write!(f, "Power(alpha={alpha})"),
            PhiFamily::PiecewisePower { alpha, beta } => {
                write!(f, "PiecewisePower(alpha={alpha}, beta={beta})")
            }
            PhiFamily::Mixture { terms } => write!(f, "Mixture({terms:?})"),
            PhiFamily::HarmonicMixture { terms } => write!(f, "HarmonicMixture({terms:?})"),
            PhiFamily::SlowLog { beta } => write!(f, "SlowLog(beta={beta})"),
            PhiFamily::Custom { name, .. } => write!(f, "Custom({name})"),
            PhiFamily::Knots { r, .. } => write!(f, "Knots({} points)", r.len()),
        }
    }
}

/// Declared scaling data accompanying a profile: the exponents and
/// constants of the two-sided bound
/// c1 (R/r)^beta1 1_{R<=1} <= phi(R)/phi(r) <= c2 (R/r)^beta2.
#[derive(Debug, Clone, Copy)]
pub struct ScalingDeclaration {
    pub beta1: f64,
    pub beta2: f64,
    pub c1: f64,
    pub c2: f64,
}

/// The radial scale function with verified normalization, declared
/// scaling exponents and case classification.
#[derive(Clone)]
pub struct ScalingProfile {
    family: PhiFamily,
    rescale: Option<RescaleData>,
    pub decl: ScalingDeclaration,
    pub dim: usize,
    pub case_tag: CaseTag,
    pub compensator: CompensatorMode,
}

/// Data for phi_lambda(u) = phi(u c) / lambda with c = phi^{-1}(lambda).
#[derive(Debug, Clone, Copy)]
struct RescaleData {
    lambda: f64,
    c: f64,
}

impl fmt::Debug for ScalingProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalingProfile")
            .field("family", &self.family)
            .field("rescale", &self.rescale)
            .field("decl", &self.decl)
            .field("dim", &self.dim)
            .field("case_tag", &self.case_tag)
            .finish()
    }
}

/// Result of `compute_a_phi`: either the finite supremum or a divergence
/// flag from the decade detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum APhi {
    Finite(f64),
    Divergent,
}

impl APhi {
    pub fn value(self) -> Option<f64> {
        match self {
            APhi::Finite(v) => Some(v),
            APhi::Divergent => None,
        }
    }
    pub fn is_divergent(self) -> bool {
        matches!(self, APhi::Divergent)
    }
}

/// Worst-case violation report for the declared scaling bounds.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub pass: bool,
    /// Largest relative violation of the lower bound (0 when satisfied).
    pub worst_lower: f64,
    /// Largest relative violation of the upper bound (0 when satisfied).
    pub worst_upper: f64,
    pub lower_witness: Option<(f64, f64)>,
    pub upper_witness: Option<(f64, f64)>,
}

const BOUND_SLACK: f64 = 1e-9;

impl ScalingProfile {
    /// Builds a profile, verifying normalization (phi(0)=0, phi(1)=1,
    /// strict increase), finiteness of the c0 integral, case
    /// classification, and the declared scaling bounds on a default
    /// lattice. Declared exponents are verified, never trusted.
    pub fn new(family: PhiFamily, decl: ScalingDeclaration, dim: usize) -> Result<Self> {
        let p = Self::new_unchecked(family, decl, dim)?;
        let report = p.verify_scaling_bounds(&default_lattice());
        if !report.pass {
            return Err(Error::Domain(format!(
                "declared scaling bounds violated: lower margin {:.3e} at {:?}, upper margin {:.3e} at {:?}",
                report.worst_lower, report.lower_witness, report.worst_upper, report.upper_witness
            )));
        }
        Ok(p)
    }

    /// Builds a profile with normalization/case checks but without the
    /// scaling-bound lattice verification (used to exercise
    /// `verify_scaling_bounds` on candidate declarations).
    pub fn new_unchecked(family: PhiFamily, decl: ScalingDeclaration, dim: usize) -> Result<Self> {
        if dim == 0 || dim > 2 {
            return Err(Error::Domain(format!("dimension {dim} unsupported (d in {{1,2}})")));
        }
        if !(decl.beta1 > 0.0 && decl.beta2 >= decl.beta1 && decl.c1 > 0.0 && decl.c2 >= decl.c1) {
            return Err(Error::Domain("invalid scaling declaration".into()));
        }
        let mut p = ScalingProfile {
            family,
            rescale: None,
            decl,
            dim,
            case_tag: CaseTag::Case2,
            compensator: CompensatorMode::Truncated,
        };
        // Normalization.
        let at1 = p.phi(1.0);
        if (at1 - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("phi(1) = {at1}, expected 1")));
        }
        if p.phi(1e-12) > 1e-6 {
            return Err(Error::Domain("phi does not vanish at 0".into()));
        }
        let mut prev = 0.0;
        for k in -60..=60 {
            let r = 2f64.powi(k);
            let v = p.phi(r);
            if !(v > prev) {
                return Err(Error::Domain(format!("phi not strictly increasing near r={r}")));
            }
            prev = v;
        }
        // c0 integral must converge at both ends.
        let inner = quad::integrate_to_zero(|r| r / p.phi(r), 1.0, 1e-12);
        let outer = quad::integrate_to_inf(|r| 1.0 / (r * p.phi(r)), 1.0, 1e-12);
        match (inner, outer) {
            (Improper::Converged(_), Improper::Converged(_)) => {}
            _ => {
                return Err(Error::Domain(format!(
                    "c0 integral not finite: inner {inner:?}, outer {outer:?}"
                )))
            }
        }
        let tag = p.classify_case()?;
        p.case_tag = tag;
        p.compensator = tag.compensator();
        Ok(p)
    }

    /// Evaluates phi(r).
    pub fn phi(&self, r: f64) -> f64 {
        if let Some(rs) = self.rescale {
            return self.phi_raw(r * rs.c) / rs.lambda;
        }
        self.phi_raw(r)
    }

    fn phi_raw(&self, r: f64) -> f64 {
        if r < 0.0 || !r.is_finite() {
            return f64::NAN;
        }
        if r == 0.0 {
            return 0.0;
        }
        match &self.family {
            PhiFamily::Power { alpha } => r.powf(*alpha),
            PhiFamily::PiecewisePower { alpha, beta } => {
                if r <= 1.0 {
                    r.powf(*alpha)
                } else {
                    r.powf(*beta)
                }
            }
            PhiFamily::Mixture { terms } => terms.iter().map(|(w, a)| w * r.powf(*a)).sum(),
            PhiFamily::HarmonicMixture { terms } => {
                1.0 / terms.iter().map(|(w, a)| w * r.powf(-*a)).sum::<f64>()
            }
            PhiFamily::SlowLog { beta } => {
                if r <= 1.0 {
                    r * (1.0 + (1.0 / r).ln())
                } else {
                    r.powf(*beta)
                }
            }
            PhiFamily::Custom { f, .. } => f(r),
            PhiFamily::Knots { r: xs, v } => {
                // log-log linear interpolation, extended by the edge slopes
                let lx = r.ln();
                let n = xs.len();
                let idx = match xs.binary_search_by(|p| p.partial_cmp(&r).unwrap()) {
                    Ok(i) => i.min(n - 2),
                    Err(i) => i.clamp(1, n - 1) - 1,
                };
                let (x0, x1) = (xs[idx].ln(), xs[idx + 1].ln());
                let (y0, y1) = (v[idx].ln(), v[idx + 1].ln());
                (y0 + (y1 - y0) * (lx - x0) / (x1 - x0)).exp()
            }
        }
    }

    /// Analytic derivative phi'(r) when the family provides one.
    pub fn phi_prime(&self, r: f64) -> Option<f64> {
        if let Some(rs) = self.rescale {
            return self.phi_prime_raw(r * rs.c).map(|d| d * rs.c / rs.lambda);
        }
        self.phi_prime_raw(r)
    }

    fn phi_prime_raw(&self, r: f64) -> Option<f64> {
        if r <= 0.0 {
            return None;
        }
        match &self.family {
            PhiFamily::Power { alpha } => Some(alpha * r.powf(alpha - 1.0)),
            PhiFamily::PiecewisePower { alpha, beta } => Some(if r <= 1.0 {
                alpha * r.powf(alpha - 1.0)
            } else {
                beta * r.powf(beta - 1.0)
            }),
            PhiFamily::Mixture { terms } => {
                Some(terms.iter().map(|(w, a)| w * a * r.powf(a - 1.0)).sum())
            }
            PhiFamily::HarmonicMixture { terms } => {
                let s: f64 = terms.iter().map(|(w, a)| w * r.powf(-*a)).sum();
                let ds: f64 = terms.iter().map(|(w, a)| w * a * r.powf(-*a - 1.0)).sum();
                Some(ds / (s * s))
            }
            PhiFamily::SlowLog { beta } => Some(if r <= 1.0 {
                (1.0 / r).ln()
            } else {
                beta * r.powf(beta - 1.0)
            }),
            PhiFamily::Custom { df, .. } => df.as_ref().map(|d| d(r)),
            PhiFamily::Knots { .. } => None,
        }
    }

    /// Evaluates phi^{-1}(t) by analytic inversion for the families that
    /// allow it and unconditionally safe bisection otherwise.
    pub fn phi_inverse(&self, t: f64) -> Result<f64> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::Domain(format!("phi_inverse: t = {t}")));
        }
        if let Some(rs) = self.rescale {
            let inner = self.inverse_raw(t * rs.lambda)?;
            return Ok(inner / rs.c);
        }
        self.inverse_raw(t)
    }

    fn inverse_raw(&self, t: f64) -> Result<f64> {
        if t == 0.0 {
            return Ok(0.0);
        }
        match &self.family {
            PhiFamily::Power { alpha } => Ok(t.powf(1.0 / alpha)),
            PhiFamily::PiecewisePower { alpha, beta } => Ok(if t <= 1.0 {
                t.powf(1.0 / alpha)
            } else {
                t.powf(1.0 / beta)
            }),
            _ => self.bisect_inverse(t),
        }
    }

    fn bisect_inverse(&self, t: f64) -> Result<f64> {
        let mut hi = 1.0f64;
        let mut guard = 0;
        while self.phi_raw(hi) < t {
            hi *= 2.0;
            guard += 1;
            if guard > 2100 {
                return Err(Error::Range(format!("phi_inverse: t = {t} beyond numeric range")));
            }
        }
        let mut lo = 0.0f64;
        // bisection to relative bracket width 1e-13 is unconditionally
        // safe by monotonicity
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.phi_raw(mid) < t {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-13 * hi.max(1.0) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Classifies the profile per the integrability of 1/phi at 0 and
    /// infinity, with divergence detected by decade-growth extrapolation.
    pub fn classify_case(&self) -> Result<CaseTag> {
        let near_zero = quad::integrate_to_zero(|r| 1.0 / self.phi(r), 1.0, 1e-12);
        match near_zero {
            Improper::Converged(_) => Ok(CaseTag::Case1),
            Improper::Divergent => {
                let tail = quad::integrate_to_inf(|r| 1.0 / self.phi(r), 1.0, 1e-12);
                match tail {
                    Improper::Divergent => Ok(CaseTag::Case2),
                    Improper::Converged(_) => Ok(CaseTag::Case3),
                    Improper::Indeterminate => Err(Error::Indeterminate(
                        "1/phi tail integral: partial sums neither stabilize nor grow beyond threshold".into(),
                    )),
                }
            }
            Improper::Indeterminate => Err(Error::Indeterminate(
                "1/phi near zero: partial sums neither stabilize nor grow beyond threshold".into(),
            )),
        }
    }

    /// Verifies the declared two-sided scaling bounds over a lattice of
    /// pairs (r, R) with r < R. The lower bound applies for R <= 1, the
    /// upper bound everywhere. Violations beyond 1e-9 relative slack fail.
    pub fn verify_scaling_bounds(&self, radii: &[f64]) -> BoundReport {
        let d = &self.decl;
        let mut worst_lower = 0.0f64;
        let mut worst_upper = 0.0f64;
        let mut lower_witness = None;
        let mut upper_witness = None;
        for (i, &r) in radii.iter().enumerate() {
            let pr = self.phi(r);
            for &rr in radii.iter().skip(i + 1) {
                let ratio = self.phi(rr) / pr;
                let q = rr / r;
                if rr <= 1.0 {
                    let lower = d.c1 * q.powf(d.beta1);
                    let margin = (lower - ratio) / lower;
                    if margin > worst_lower {
                        worst_lower = margin;
                        lower_witness = Some((r, rr));
                    }
                }
                let upper = d.c2 * q.powf(d.beta2);
                let margin = (ratio - upper) / upper;
                if margin > worst_upper {
                    worst_upper = margin;
                    upper_witness = Some((r, rr));
                }
            }
        }
        BoundReport {
            pass: worst_lower <= BOUND_SLACK && worst_upper <= BOUND_SLACK,
            worst_lower,
            worst_upper,
            lower_witness,
            upper_witness,
        }
    }

    /// The integrand weight gamma^(i) of the A-condition.
    pub fn gamma_i(&self, i: u8, r: f64) -> Result<f64> {
        match i {
            0 => Ok((r * r).min(1.0)),
            1 => Ok(match self.case_tag {
                CaseTag::Case1 => r.min(1.0),
                CaseTag::Case2 => (r * r).min(1.0),
                CaseTag::Case3 => (r * r).min(r),
            }),
            _ => Err(Error::Domain(format!("gamma index {i} not in {{0,1}}"))),
        }
    }

    /// Computes A^(i) = sup over lambda in (0,1] of
    /// int_0^inf phi(lambda) gamma^(i)(r) / (r phi(lambda r)) dr.
    /// The sup is approximated on a log grid of lambda (with endpoint 1);
    /// divergence is declared when the per-lambda integral diverges or the
    /// sup grows steadily as lambda -> 0.
    pub fn compute_a_phi(&self, i: u8, lambda_grid: &[f64]) -> Result<APhi> {
        let mut values: Vec<(f64, f64)> = Vec::with_capacity(lambda_grid.len());
        for &lam in lambda_grid {
            if !(lam > 0.0 && lam <= 1.0) {
                return Err(Error::Domain(format!("lambda = {lam} not in (0,1]")));
            }
            match self.a_phi_at(i, lam)? {
                Some(v) => values.push((lam, v)),
                None => return Ok(APhi::Divergent),
            }
        }
        // Divergence of the sup: growth of F(lambda) by >= 1.05 per decade
        // for 3 consecutive decades toward small lambda.
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let mut decades: Vec<f64> = Vec::new();
        let mut next_cut = 0.1f64;
        for &(lam, v) in &sorted {
            if lam <= next_cut {
                decades.push(v);
                next_cut *= 0.1;
            }
        }
        if decades.len() >= 4 {
            let grew = (decades.len() - 3..decades.len()).all(|k| {
                decades[k] / decades[k - 1].abs().max(f64::MIN_POSITIVE) >= DECADE_SUP_GROWTH
            });
            if grew {
                return Ok(APhi::Divergent);
            }
        }
        let sup = values.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
        Ok(APhi::Finite(sup))
    }

    /// Per-lambda integral of the A-condition; None when divergent.
    fn a_phi_at(&self, i: u8, lam: f64) -> Result<Option<f64>> {
        let plam = self.phi(lam);
        let f = |r: f64| plam * self.gamma_i(i, r).unwrap() / (r * self.phi(lam * r));
        // Split at r = 1 and r = 1/lambda (kinks of built-in families).
        let mid_hi = (1.0 / lam).max(1.0);
        let inner = quad::integrate_to_zero(&f, 1.0, 1e-12);
        let inner = match inner {
            Improper::Converged(v) => v,
            Improper::Divergent => return Ok(None),
            Improper::Indeterminate => {
                return Err(Error::Indeterminate(format!(
                    "A^({i}) integral near 0 at lambda {lam}"
                )))
            }
        };
        let middle = if mid_hi > 1.0 {
            quad::integrate_geometric(&f, 1.0, mid_hi, 24)
        } else {
            0.0
        };
        let tail = quad::integrate_to_inf(&f, mid_hi, 1e-12);
        let tail = match tail {
            Improper::Converged(v) => v,
            Improper::Divergent => return Ok(None),
            Improper::Indeterminate => {
                return Err(Error::Indeterminate(format!(
                    "A^({i}) tail integral at lambda {lam}"
                )))
            }
        };
        Ok(Some(inner + middle + tail))
    }

    /// The reference weight rho(t, r) = 1 / (t phi^{-1}(t)^d + r^d phi(r)).
    pub fn rho(&self, t: f64, r: f64) -> Result<f64> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Domain(format!("rho: t = {t} must be positive")));
        }
        let c = self.phi_inverse(t)?;
        Ok(1.0 / (t * c.powi(self.dim as i32) + r.powi(self.dim as i32) * self.phi(r)))
    }

    /// rho with phi^{-1}(t) precomputed (hot paths).
    #[inline]
    pub fn rho_with_inv(&self, t: f64, inv_t: f64, r: f64) -> f64 {
        1.0 / (t * inv_t.powi(self.dim as i32) + r.powi(self.dim as i32) * self.phi(r))
    }

    /// The rescaled profile phi_lambda(u) = phi(u phi^{-1}(lambda)) / lambda
    /// of the scaling reduction; same declared constants, same case.
    pub fn rescaled(&self, lambda: f64) -> Result<ScalingProfile> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Domain(format!("rescale: lambda = {lambda}")));
        }
        if self.rescale.is_some() {
            return Err(Error::Domain("nested rescaling not supported".into()));
        }
        let c = self.phi_inverse(lambda)?;
        Ok(ScalingProfile {
            family: self.family.clone(),
            rescale: Some(RescaleData { lambda, c }),
            decl: self.decl,
            dim: self.dim,
            case_tag: self.case_tag,
            compensator: self.compensator,
        })
    }

    pub fn family(&self) -> &PhiFamily {
        &self.family
    }

    /// True when phi is exactly self-similar (pure power law), in which
    /// case the rescaled profile coincides with the original.
    pub fn is_power_law(&self) -> bool {
        matches!(self.family, PhiFamily::Power { .. })
    }
}

const DECADE_SUP_GROWTH: f64 = 1.05;

/// Default (r, R) lattice for scaling-bound verification: 9 decades.
pub fn default_lattice() -> Vec<f64> {
    log_grid(1e-4, 1e5, 64)
}

/// Log-spaced grid, endpoints included.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == 0 {
                lo
            } else if i == n - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Default lambda grid for the A-condition sup: 64 log points + endpoint.
pub fn default_lambda_grid() -> Vec<f64> {
    let mut g = log_grid(1e-6, 1.0, 64);
    if *g.last().unwrap() < 1.0 {
        g.push(1.0);
    }
    g
}
