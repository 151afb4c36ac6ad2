//! Continuity moduli ell on (0,1], extended by ell(t) = ell(1) for t >= 1:
//! class membership (slowly varying S0, Dini D0, regularly varying R_alpha),
//! the integrals Gamma and M, Potter-type bound estimation, the convolution
//! weight h, and numeric verification of the convolution inequalities.

use crate::error::{Error, Result};
use crate::profiles::ScalingProfile;
use crate::quad::{self, Improper};

/// Built-in modulus families. All are evaluated on (0,1] and extended by
/// the value at 1 beyond.
#[derive(Debug, Clone)]
pub enum EllFamily {
    /// scale (a positive constant).
    Const(f64),
    /// scale * t^eta.
    Power { eta: f64, scale: f64 },
    /// scale * (log(1 + 1/t))^a.
    LogPower { a: f64, scale: f64 },
    /// scale * t^eta * (log(1 + 1/t))^a.
    PowerLog { eta: f64, a: f64, scale: f64 },
    /// ell(phi^{-1}(t)) for an inner modulus and profile.
    Composite(Box<Modulus>, Box<ScalingProfile>),
}

/// Claimed classes, verified at construction.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClassTags {
    pub s0: bool,
    pub d0: bool,
    pub r_alpha: Option<f64>,
}

/// A continuity modulus with verified class tags.
#[derive(Debug, Clone)]
pub struct Modulus {
    family: EllFamily,
    pub class: ClassTags,
}

/// Outcome of the M integral: a value or a divergence flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MPhiEll {
    Finite(f64),
    Divergent,
}

impl MPhiEll {
    pub fn value(self) -> Option<f64> {
        match self {
            MPhiEll::Finite(v) => Some(v),
            MPhiEll::Divergent => None,
        }
    }
    pub fn is_divergent(self) -> bool {
        matches!(self, MPhiEll::Divergent)
    }
}

impl Modulus {
    /// Builds a modulus and verifies every claimed class tag numerically:
    /// D0 needs increase plus a convergent Dini integral, S0 needs the
    /// slowly-varying limit at 0 (Richardson over t = 2^-k, k = 10..40),
    /// R_alpha needs ell / t^alpha slowly varying.
    pub fn new(family: EllFamily, class: ClassTags) -> Result<Self> {
        let m = Modulus { family, class };
        for &t in &[1e-12, 1e-6, 1e-3, 0.5, 1.0] {
            let v = m.ell(t);
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("ell({t}) = {v} not in (0, inf)")));
            }
        }
        if class.d0 && !m.dini_holds() {
            return Err(Error::Domain("claimed D0 but Dini check fails".into()));
        }
        if class.s0 && !m.slowly_varying_holds(0.0) {
            return Err(Error::Domain("claimed S0 but slowly-varying limit fails".into()));
        }
        if let Some(alpha) = class.r_alpha {
            if alpha < 0.0 {
                return Err(Error::Domain("R_alpha index must be >= 0".into()));
            }
            if !m.slowly_varying_holds(alpha) {
                return Err(Error::Domain(format!(
                    "claimed R_alpha({alpha}) but ell/t^alpha not slowly varying"
                )));
            }
        }
        Ok(m)
    }

    /// Evaluates ell(t) with the extension rule ell(t) = ell(1) for t >= 1.
    pub fn ell(&self, t: f64) -> f64 {
        let t = t.min(1.0);
        match &self.family {
            EllFamily::Const(c) => *c,
            EllFamily::Power { eta, scale } => scale * t.powf(*eta),
            EllFamily::LogPower { a, scale } => scale * (1.0 + 1.0 / t).ln().powf(*a),
            EllFamily::PowerLog { eta, a, scale } => {
                scale * t.powf(*eta) * (1.0 + 1.0 / t).ln().powf(*a)
            }
            EllFamily::Composite(inner, p) => inner.ell(p.phi_inverse(t).unwrap_or(f64::NAN)),
        }
    }

    /// The squared modulus ell^2 (oscillation bounds store ell and square
    /// on demand; this returns it as a first-class modulus).
    pub fn squared(&self) -> Result<Modulus> {
        let family = match &self.family {
            EllFamily::Const(c) => EllFamily::Const(c * c),
            EllFamily::Power { eta, scale } => EllFamily::Power { eta: 2.0 * eta, scale: scale * scale },
            EllFamily::LogPower { a, scale } => EllFamily::LogPower { a: 2.0 * a, scale: scale * scale },
            EllFamily::PowerLog { eta, a, scale } => EllFamily::PowerLog {
                eta: 2.0 * eta,
                a: 2.0 * a,
                scale: scale * scale,
            },
            EllFamily::Composite(inner, p) => {
                EllFamily::Composite(Box::new(inner.squared()?), p.clone())
            }
        };
        let class = ClassTags {
            s0: self.class.s0,
            d0: self.class.d0 || self.class.r_alpha.map(|a| a > 0.0).unwrap_or(false),
            r_alpha: self.class.r_alpha.map(|a| 2.0 * a),
        };
        Modulus::new(family, class)
    }

    fn dini_holds(&self) -> bool {
        // increase on (0,1], sampled
        let grid = crate::profiles::log_grid(1e-10, 1.0, 120);
        for w in grid.windows(2) {
            if self.ell(w[1]) < self.ell(w[0]) * (1.0 - 1e-9) {
                return false;
            }
        }
        matches!(
            quad::integrate_to_zero(|t| self.ell(t) / t, 1.0, 1e-13),
            Improper::Converged(_)
        )
    }

    /// Numeric limit check of ell(lambda t) / (lambda^alpha ell(t)) -> 1
    /// for lambda in {0.5, 2}, via Richardson extrapolation.
    fn slowly_varying_holds(&self, alpha: f64) -> bool {
        for lambda in [0.5f64, 2.0] {
            let samples: Vec<(f64, f64)> = (10..=40)
                .map(|k| {
                    let t = 2f64.powi(-k);
                    let ratio = self.ell(lambda * t) / (lambda.powf(alpha) * self.ell(t));
                    (k as f64, ratio)
                })
                .collect();
            let lim = quad::richardson_limit(&samples[samples.len() - 8..]);
            if (lim - 1.0).abs() > 1e-3 {
                return false;
            }
        }
        true
    }

    /// Gamma(t) = int_0^t ell(s)/s ds by graded quadrature.
    pub fn gamma(&self, t: f64) -> Result<f64> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Domain(format!("gamma: t = {t}")));
        }
        match quad::integrate_to_zero(|s| self.ell(s) / s, t, 1e-13) {
            Improper::Converged(v) => Ok(v),
            Improper::Divergent => Err(Error::Numeric(
                "Dini integral divergent: Gamma undefined for this modulus".into(),
            )),
            Improper::Indeterminate => Err(Error::Indeterminate("Gamma integral".into())),
        }
    }

    /// ell_phi(t) = ell(phi^{-1}(t)).
    pub fn ell_phi(&self, p: &ScalingProfile, t: f64) -> Result<f64> {
        Ok(self.ell(p.phi_inverse(t)?))
    }

    /// The Stieltjes integral
    /// M(t) = int_0^t (1/r) (ell(r)/ell(t) + phi(r)/phi(t)) dphi(r)
    /// for t in (0,1], integrated against the analytic phi' when the
    /// family provides one and centered log-scale differences otherwise.
    pub fn m_phi_ell(&self, p: &ScalingProfile, t: f64) -> Result<MPhiEll> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Domain(format!("m_phi_ell: t = {t} not in (0,1]")));
        }
        let lt = self.ell(t);
        let pt = p.phi(t);
        let g = |r: f64| {
            let dphi = p.phi_prime(r).unwrap_or_else(|| {
                let h = 1.0002f64;
                (p.phi(r * h) - p.phi(r / h)) / (r * (h - 1.0 / h))
            });
            (self.ell(r) / lt + p.phi(r) / pt) * dphi / r
        };
        match quad::integrate_to_zero(g, t, 1e-13) {
            Improper::Converged(v) => Ok(MPhiEll::Finite(v)),
            Improper::Divergent => Ok(MPhiEll::Divergent),
            Improper::Indeterminate => Err(Error::Indeterminate("M integral".into())),
        }
    }

    /// True iff ell is increasing on (0,1] (sampled) and the Dini integral
    /// converges.
    pub fn check_dini(&self) -> bool {
        self.dini_holds()
    }

    /// Empirical smallest C with ell(s)/ell(t) <= C max((s/t)^d,(s/t)^-d)
    /// over a lattice of pairs. Requires the S0 tag.
    pub fn potter_bound(&self, delta: f64, lattice: &[f64]) -> Result<f64> {
        if !self.class.s0 {
            return Err(Error::Domain("potter_bound requires an S0 modulus".into()));
        }
        if !(delta > 0.0) {
            return Err(Error::Domain("delta must be positive".into()));
        }
        let mut c = 0.0f64;
        for &s in lattice {
            let ls = self.ell(s);
            for &t in lattice {
                let q = s / t;
                let envelope = q.powf(delta).max(q.powf(-delta));
                c = c.max(ls / (self.ell(t) * envelope));
            }
        }
        Ok(c)
    }

    /// The convolution weight h(t, r) = ell(phi^{-1}(t) + r) rho(t, r).
    pub fn h_ell_phi(&self, p: &ScalingProfile, t: f64, r: f64) -> Result<f64> {
        let c = p.phi_inverse(t)?;
        Ok(self.ell(c + r) * p.rho_with_inv(t, c, r))
    }

    pub fn family(&self) -> &EllFamily {
        &self.family
    }
}

/// Measured ratios for the two convolution inequalities.
#[derive(Debug, Clone)]
pub struct ConvolutionReport {
    /// (t, ratio of int h^ell(t,x) dx to ell_phi(t)/t).
    pub mass_ratios: Vec<(f64, f64)>,
    /// ((t, s, x), ratio of the space convolution to the bound shape).
    pub convolution_ratios: Vec<((f64, f64, f64), f64)>,
    pub max_mass_ratio: f64,
    pub max_convolution_ratio: f64,
}

/// Numeric verification of the convolution inequalities for moduli in
/// R_alpha with alpha in [0,1): (a) the mass of h^ell(t, .) against
/// ell_phi(t)/t and (b) the space convolution of h^ell1(t-s) with
/// h^ell2(s) against (ell1_phi(t-s)/(t-s) + ell2_phi(s)/s) h^(ell1 v ell2)(t).
pub fn verify_convolution(
    m1: &Modulus,
    m2: &Modulus,
    p: &ScalingProfile,
    times: &[(f64, f64)],
    xs: &[f64],
) -> Result<ConvolutionReport> {
    for (name, m) in [("ell1", m1), ("ell2", m2)] {
        let in_r = m.class.r_alpha.map(|a| a < 1.0).unwrap_or(false) || m.class.s0;
        if !in_r {
            return Err(Error::Domain(format!(
                "{name} must lie in R_alpha with alpha in [0,1)"
            )));
        }
    }
    convolution_sweep(m1, m2, p, times, xs)
}

/// The measurement behind `verify_convolution`, without the class gate:
/// the convergence-radius estimator sweeps ell^2, which for a modulus of
/// index 1/2 sits at the boundary index 1.
pub(crate) fn convolution_sweep(
    m1: &Modulus,
    m2: &Modulus,
    p: &ScalingProfile,
    times: &[(f64, f64)],
    xs: &[f64],
) -> Result<ConvolutionReport> {
    if p.dim != 1 {
        return Err(Error::Config("verify_convolution implemented for d = 1".into()));
    }
    let mut mass_ratios = Vec::new();
    let mut convolution_ratios = Vec::new();
    for &(t, s) in times {
        if !(0.0 < s && s < t) {
            return Err(Error::Domain(format!("need 0 < s < t, got ({t}, {s})")));
        }
        for (m, tt) in [(m1, t - s), (m2, s), (m1, t)] {
            let mass = h_mass(m, p, tt)?;
            mass_ratios.push((tt, mass / (m.ell_phi(p, tt)? / tt)));
        }
        for &x in xs {
            let conv = quad::integrate_real_line(
                |y| {
                    m1.h_ell_phi(p, t - s, (x - y).abs()).unwrap_or(0.0)
                        * m2.h_ell_phi(p, s, y.abs()).unwrap_or(0.0)
                },
                &[0.0, x],
                1e-11,
            );
            let conv = conv.value().ok_or_else(|| {
                Error::Numeric(format!("convolution quadrature failed at (t={t}, s={s}, x={x})"))
            })?;
            let c = p.phi_inverse(t)?;
            let hmax = m1.ell(c + x.abs()).max(m2.ell(c + x.abs())) * p.rho_with_inv(t, c, x.abs());
            let rhs = (m1.ell_phi(p, t - s)? / (t - s) + m2.ell_phi(p, s)? / s) * hmax;
            convolution_ratios.push(((t, s, x), conv / rhs));
        }
    }
    let max_mass_ratio = mass_ratios.iter().map(|&(_, r)| r).fold(0.0, f64::max);
    let max_convolution_ratio = convolution_ratios.iter().map(|&(_, r)| r).fold(0.0, f64::max);
    Ok(ConvolutionReport {
        mass_ratios,
        convolution_ratios,
        max_mass_ratio,
        max_convolution_ratio,
    })
}

/// The d-dimensional mass of h^ell(t, .) by radial quadrature.
pub fn h_mass(m: &Modulus, p: &ScalingProfile, t: f64) -> Result<f64> {
    let c = p.phi_inverse(t)?;
    let radial = |r: f64| {
        let h = m.ell(c + r) * p.rho_with_inv(t, c, r);
        match p.dim {
            1 => 2.0 * h,
            _ => 2.0 * std::f64::consts::PI * r * h,
        }
    };
    let near = quad::integrate_to_zero(&radial, c.max(1e-12), 1e-12);
    let far = quad::integrate_to_inf(&radial, c.max(1e-12), 1e-12);
    match (near, far) {
        (Improper::Converged(a), Improper::Converged(b)) => Ok(a + b),
        other => Err(Error::Numeric(format!("h mass quadrature failed: {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::{PhiFamily, ScalingDeclaration, ScalingProfile};

    fn power_profile(alpha: f64) -> ScalingProfile {
        ScalingProfile::new(
            PhiFamily::Power { alpha },
            ScalingDeclaration { beta1: alpha, beta2: alpha, c1: 1.0, c2: 1.0 },
            1,
        )
        .unwrap()
    }

    fn power_mod(eta: f64) -> Modulus {
        Modulus::new(
            EllFamily::Power { eta, scale: 1.0 },
            ClassTags { s0: false, d0: true, r_alpha: Some(eta) },
        )
        .unwrap()
    }

    fn log_mod(a: f64) -> Modulus {
        Modulus::new(
            EllFamily::LogPower { a, scale: 1.0 },
            ClassTags { s0: true, d0: a < -1.0, r_alpha: Some(0.0) },
        )
        .unwrap()
    }

    #[test]
    fn gamma_power_closed_form() {
        // Gamma(t) = t^eta / eta
        let m = power_mod(0.5);
        assert!((m.gamma(1.0).unwrap() - 2.0).abs() < 1e-10);
        assert!((m.gamma(0.09).unwrap() - 0.09f64.sqrt() * 2.0).abs() < 1e-10);
    }

    #[test]
    fn gamma_over_ell_tends_to_inverse_alpha() {
        let m = power_mod(0.5);
        let t = 1e-6;
        let ratio = m.gamma(t).unwrap() / m.ell(t);
        assert!((ratio - 2.0).abs() < 0.04, "ratio = {ratio}");
    }

    #[test]
    fn gamma_divergent_for_constant() {
        let m = Modulus::new(
            EllFamily::Const(1.0),
            ClassTags { s0: true, d0: false, r_alpha: Some(0.0) },
        )
        .unwrap();
        assert!(m.gamma(1.0).is_err());
    }

    #[test]
    fn constant_claimed_dini_rejected() {
        let r = Modulus::new(
            EllFamily::Const(1.0),
            ClassTags { s0: true, d0: true, r_alpha: None },
        );
        assert!(r.is_err());
    }

    #[test]
    fn ell_phi_composition() {
        let m = power_mod(0.5);
        let p = power_profile(0.8);
        for &t in &[1e-4, 0.3, 0.9] {
            let v = m.ell_phi(&p, t).unwrap();
            assert!((v - t.powf(0.5 / 0.8)).abs() < 1e-12);
        }
        // any ell, any phi: ell_phi(1) = ell(1)
        let lm = log_mod(-2.0);
        assert!((lm.ell_phi(&p, 1.0).unwrap() - lm.ell(1.0)).abs() < 1e-12);
        // direct-composition oracle
        let p2 = power_profile(0.5);
        let v = lm.ell_phi(&p2, 1e-4).unwrap();
        let direct = (1.0 + 1.0 / (1e-4f64).powf(2.0)).ln().powf(-2.0);
        assert!((v - direct).abs() <= 1e-12 * direct);
    }

    #[test]
    fn m_phi_ell_closed_form() {
        // (alpha/(alpha+eta-1) + alpha/(2 alpha - 1)) t^{alpha-1} = 3 at
        // alpha = 1, eta = 0.5
        let m = power_mod(0.5);
        let p = power_profile(1.0);
        for &t in &[0.7, 0.2, 1.0] {
            let v = m.m_phi_ell(&p, t).unwrap().value().unwrap();
            assert!((v - 3.0).abs() < 1e-6, "M({t}) = {v}");
        }
    }

    #[test]
    fn m_phi_ell_comparable_to_gamma_over_ell() {
        // for Dini slowly varying ell and phi = r:
        // M(t) = Gamma(t)/ell(t) + 1, so M ell / Gamma stays in a bracket
        let m = log_mod(-2.0);
        let p = power_profile(1.0);
        for &t in &[0.9, 0.5, 0.1] {
            let mv = m.m_phi_ell(&p, t).unwrap().value().unwrap();
            let ratio = mv * m.ell(t) / m.gamma(t).unwrap();
            assert!(ratio > 0.9 && ratio < 2.6, "ratio = {ratio} at t = {t}");
        }
    }

    #[test]
    fn m_phi_ell_divergent_slowlog() {
        // ell = (log(1+1/s))^-2 with phi = s(1+log(1/s)) near 0: the
        // Stieltjes integrand ~ 1/(s log(1/s)) diverges
        let m = log_mod(-2.0);
        let p = ScalingProfile::new(
            PhiFamily::SlowLog { beta: 1.0 },
            ScalingDeclaration { beta1: 0.5, beta2: 1.0, c1: 0.5, c2: 30.0 },
            1,
        )
        .unwrap();
        let v = m.m_phi_ell(&p, 0.5).unwrap();
        assert!(v.is_divergent(), "expected divergence, got {v:?}");
    }

    #[test]
    fn check_dini_examples() {
        assert!(log_mod(-2.0).check_dini());
        let one = Modulus::new(
            EllFamily::Const(1.0),
            ClassTags { s0: true, d0: false, r_alpha: Some(0.0) },
        )
        .unwrap();
        assert!(!one.check_dini());
        assert!(power_mod(0.3).check_dini());
    }

    #[test]
    fn potter_bounds() {
        let one = Modulus::new(
            EllFamily::Const(1.0),
            ClassTags { s0: true, d0: false, r_alpha: Some(0.0) },
        )
        .unwrap();
        let lattice = crate::profiles::log_grid(1e-4, 1.0, 48);
        let c = one.potter_bound(0.5, &lattice).unwrap();
        assert!((c - 1.0).abs() < 1e-12);

        let lp = Modulus::new(
            EllFamily::LogPower { a: 1.0, scale: 1.0 },
            ClassTags { s0: true, d0: false, r_alpha: Some(0.0) },
        )
        .unwrap();
        let c = lp.potter_bound(0.25, &lattice).unwrap();
        assert!(c.is_finite() && c >= 1.0 && c < 50.0, "C = {c}");

        let c = log_mod(-2.0).potter_bound(0.1, &lattice).unwrap();
        assert!(c.is_finite() && c >= 1.0 && c < 500.0, "C = {c}");

        // requires S0
        assert!(power_mod(0.5).potter_bound(0.1, &lattice).is_err());
    }

    #[test]
    fn h_ell_phi_examples() {
        let p = power_profile(1.0);
        let one = Modulus::new(
            EllFamily::Const(1.0),
            ClassTags { s0: true, d0: false, r_alpha: Some(0.0) },
        )
        .unwrap();
        for &(t, r) in &[(0.3, 0.0), (1.0, 2.0), (0.05, 0.7)] {
            assert!((one.h_ell_phi(&p, t, r).unwrap() - p.rho(t, r).unwrap()).abs() < 1e-14);
        }
        let m = power_mod(0.5);
        assert!((m.h_ell_phi(&p, 1.0, 0.0).unwrap() - m.ell(1.0)).abs() < 1e-12);
        // hand evaluation: ell(0.25 + 0.5) * 1/(0.25^2 + 0.5^2)
        let v = m.h_ell_phi(&p, 0.25, 0.5).unwrap();
        let oracle = 0.75f64.sqrt() / 0.3125;
        assert!((v - oracle).abs() < 1e-12);
    }

    #[test]
    fn convolution_report_const_modulus() {
        // DK2 for ell = 1, phi = r, d = 1: int rho(t,x) dx = pi/t, so the
        // ratio to ell_phi(t)/t = 1/t is pi
        let p = power_profile(1.0);
        let one = Modulus::new(
            EllFamily::Const(1.0),
            ClassTags { s0: true, d0: false, r_alpha: Some(0.0) },
        )
        .unwrap();
        let rep = verify_convolution(&one, &one, &p, &[(0.5, 0.25)], &[0.0, 1.0]).unwrap();
        for &(_, r) in &rep.mass_ratios {
            assert!((r - std::f64::consts::PI).abs() < 1e-6, "mass ratio {r}");
        }
        assert!(rep.max_convolution_ratio.is_finite() && rep.max_convolution_ratio < 10.0);
    }

    #[test]
    fn convolution_report_power_moduli() {
        let p = power_profile(1.0);
        let m = Modulus::new(
            EllFamily::Power { eta: 0.4, scale: 1.0 },
            ClassTags { s0: false, d0: true, r_alpha: Some(0.4) },
        )
        .unwrap();
        let rep = verify_convolution(&m, &m, &p, &[(0.5, 0.25)], &[0.0]).unwrap();
        // frozen regression constant for the DK1 ratio at this fixture
        assert!(rep.max_convolution_ratio < 4.0, "{}", rep.max_convolution_ratio);
        // symmetric point s = t/2: both terms of the bound shape agree
        let t = 0.5;
        let s = 0.25;
        let lhs = m.ell_phi(&p, t - s).unwrap() / (t - s);
        let rhs = m.ell_phi(&p, s).unwrap() / s;
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn composite_modulus_stays_dini_slowly_varying() {
        // ell_phi in S0 cap D0 when ell is
        let pairs = [
            (log_mod(-2.0), power_profile(0.5)),
            (log_mod(-2.0), power_profile(1.5)),
            (power_mod(0.5), power_profile(1.0)),
        ];
        for (m, p) in pairs {
            let comp = Modulus::new(
                EllFamily::Composite(Box::new(m), Box::new(p)),
                ClassTags::default(),
            )
            .unwrap();
            assert!(comp.check_dini());
        }
    }

    #[test]
    fn h_radially_non_increasing() {
        // exactly rho for a constant modulus: non-increasing everywhere
        let p = power_profile(1.0);
        let one = Modulus::new(
            EllFamily::Const(1.0),
            ClassTags { s0: true, d0: false, r_alpha: Some(0.0) },
        )
        .unwrap();
        let mut prev = f64::INFINITY;
        for &r in &[0.0, 0.1, 0.4, 1.0, 3.0, 10.0, 50.0] {
            let h = one.h_ell_phi(&p, 0.3, r).unwrap();
            assert!(h <= prev * (1.0 + 1e-12), "h not non-increasing at r = {r}");
            prev = h;
        }
        // for an increasing modulus the decay of rho dominates once the
        // denominator growth r^d phi(r) outpaces ell(phi^{-1}(t) + r)
        let m = power_mod(0.5);
        let t = 0.3;
        let mut prev = f64::INFINITY;
        for &r in &[0.4, 1.0, 3.0, 10.0, 50.0] {
            let h = m.h_ell_phi(&p, t, r).unwrap();
            assert!(h <= prev * (1.0 + 1e-12), "h not non-increasing at r = {r}");
            prev = h;
        }
    }

    #[test]
    fn quadrature_refinement_stability() {
        // refining the dyadic slices changes Gamma by < 1e-8 relative
        let m = power_mod(0.5);
        let coarse = quad::integrate_to_zero(|s| m.ell(s) / s, 0.7, 1e-13)
            .value()
            .unwrap();
        let fine = quad::integrate_to_zero_refined(|s| m.ell(s) / s, 0.7, 1e-13, 4)
            .value()
            .unwrap();
        assert!(((coarse - fine) / fine).abs() < 1e-8);
    }

    #[test]
    fn squared_modulus() {
        let m = power_mod(0.5);
        let sq = m.squared().unwrap();
        for &t in &[0.01, 0.3, 1.0, 2.0] {
            assert!((sq.ell(t) - m.ell(t) * m.ell(t)).abs() < 1e-14);
        }
        assert_eq!(sq.class.r_alpha, Some(1.0));
    }
}
