//! The Levi construction for variable coefficients kappa(t, x, z): the
//! defect kernel, its Picard series, assembly of the two-point heat
//! kernel, the convergence radius, and the Chapman-Kolmogorov extension
//! to arbitrary intervals.
//!
//! Variable kernels are separable sums kappa = base + sum_m a_m(t,x)
//! psi_m(z). This makes the frozen-at-a-point exponents linear in the
//! per-point coefficients, so the engine can synthesize every frozen
//! density and generator-applied curve from a handful of spectral
//! building blocks per time pair.

pub mod engine;

use crate::error::{Error, Result};
use crate::frozen::{self, FrozenKernelSpec, KappaFrozen};
use crate::moduli::Modulus;
use crate::profiles::{APhi, CaseTag, ScalingProfile};
use crate::quad;
use std::sync::Arc;

pub use engine::{
    assemble_p, build_defect_field, extend_ck, picard_step, solve_q, DefectField, EngineConfig,
    EngineGrid, HeatKernelField, IntervalMethod, IntervalRecord, QSolution, SpaceTimeKernel,
};

/// Spatial coefficient factors a(t, x).
#[derive(Debug, Clone)]
pub enum SpaceFactor {
    Const(f64),
    /// base + amp sin(omega x + phase).
    Sin { base: f64, amp: f64, omega: f64, phase: f64 },
    /// base + amp exp(-(x/width)^2).
    Bump { base: f64, amp: f64, width: f64 },
    /// inner(x) (1 + amp sin(omega t)).
    TimeSin { inner: Box<SpaceFactor>, amp: f64, omega: f64 },
}

impl SpaceFactor {
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        match self {
            SpaceFactor::Const(c) => *c,
            SpaceFactor::Sin { base, amp, omega, phase } => base + amp * (omega * x + phase).sin(),
            SpaceFactor::Bump { base, amp, width } => base + amp * (-(x / width).powi(2)).exp(),
            SpaceFactor::TimeSin { inner, amp, omega } => {
                inner.eval(t, x) * (1.0 + amp * (omega * t).sin())
            }
        }
    }

    pub fn is_x_independent(&self) -> bool {
        match self {
            SpaceFactor::Const(_) => true,
            SpaceFactor::Sin { amp, .. } | SpaceFactor::Bump { amp, .. } => *amp == 0.0,
            SpaceFactor::TimeSin { inner, .. } => inner.is_x_independent(),
        }
    }

    pub fn time_dependent(&self) -> bool {
        matches!(self, SpaceFactor::TimeSin { amp, .. } if *amp != 0.0)
    }
}

/// Jump-size factors psi(z) (d = 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZFactor {
    One,
    /// 1_{|z| <= 1}.
    IndicatorBall,
    /// 1_{|z| > 1}.
    IndicatorTail,
    /// exp(-rate |z|).
    Exp { rate: f64 },
    /// sign(z) exp(-rate |z|) (odd; only admissible outside the
    /// truncated-compensator case).
    SignExp { rate: f64 },
}

impl ZFactor {
    pub fn eval(&self, z: f64) -> f64 {
        match self {
            ZFactor::One => 1.0,
            ZFactor::IndicatorBall => {
                if z.abs() <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ZFactor::IndicatorTail => {
                if z.abs() > 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ZFactor::Exp { rate } => (-rate * z.abs()).exp(),
            ZFactor::SignExp { rate } => z.signum() * (-rate * z.abs()).exp(),
        }
    }

    pub fn even(&self) -> bool {
        !matches!(self, ZFactor::SignExp { .. })
    }
}

/// kappa(t, x, z) = base + sum_m a_m(t, x) psi_m(z).
#[derive(Debug, Clone)]
pub struct SeparableKappa {
    pub base: f64,
    pub terms: Vec<(SpaceFactor, ZFactor)>,
}

impl SeparableKappa {
    pub fn eval(&self, t: f64, x: f64, z: f64) -> f64 {
        self.base + self.terms.iter().map(|(a, p)| a.eval(t, x) * p.eval(z)).sum::<f64>()
    }

    pub fn is_x_independent(&self) -> bool {
        self.terms.iter().all(|(a, _)| a.is_x_independent())
    }

    pub fn z_symmetric(&self) -> bool {
        self.terms.iter().all(|(_, p)| p.even())
    }

    pub fn time_dependent(&self) -> bool {
        self.terms.iter().any(|(a, _)| a.time_dependent())
    }
}

/// The variable-coefficient kernel specification (d = 1).
#[derive(Debug, Clone)]
pub struct VariableKernelSpec {
    pub kappa: SeparableKappa,
    pub kappa0: f64,
    /// The modulus ell whose square bounds the spatial oscillation.
    pub modulus: Modulus,
    pub symmetric_in_z: bool,
    profile: ScalingProfile,
}

impl VariableKernelSpec {
    /// Validates kappa bounds, the declared z-symmetry, the ell^2
    /// oscillation bound on sampled triples and (in the
    /// truncated-compensator case) the odd-part cancellation.
    pub fn new(
        kappa: SeparableKappa,
        kappa0: f64,
        modulus: Modulus,
        symmetric_in_z: bool,
        profile: ScalingProfile,
    ) -> Result<Self> {
        if profile.dim != 1 {
            return Err(Error::Config("variable kernels implemented for d = 1".into()));
        }
        if kappa0 < 1.0 {
            return Err(Error::Domain(format!("kappa0 = {kappa0} must be >= 1")));
        }
        if symmetric_in_z != kappa.z_symmetric() {
            return Err(Error::Domain(
                "declared z-symmetry does not match the kernel structure".into(),
            ));
        }
        let spec = VariableKernelSpec { kappa, kappa0, modulus, symmetric_in_z, profile };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let xs = [-7.3, -2.0, -0.4, 0.0, 0.9, 3.1, 11.0];
        let zs = crate::profiles::log_grid(1e-6, 1e3, 16);
        let times = [0.0, 0.3, 0.8];
        let sq = self.modulus.squared()?;
        for &t in &times {
            for &x in &xs {
                for &z in &zs {
                    for zz in [z, -z] {
                        let v = self.kappa.eval(t, x, zz);
                        if !(v >= 1.0 / self.kappa0 - 1e-12 && v <= self.kappa0 + 1e-12) {
                            return Err(Error::Domain(format!(
                                "kappa({t},{x},{zz}) = {v} outside [1/{0}, {0}]",
                                self.kappa0
                            )));
                        }
                    }
                }
                for &y in &xs {
                    if x == y {
                        continue;
                    }
                    let bound = sq.ell((x - y).abs());
                    for &z in &zs[..8] {
                        let osc = (self.kappa.eval(t, x, z) - self.kappa.eval(t, y, z)).abs();
                        if osc > bound * (1.0 + 1e-9) {
                            return Err(Error::Domain(format!(
                                "|kappa(t,{x},z) - kappa(t,{y},z)| = {osc} exceeds ell^2 = {bound}"
                            )));
                        }
                    }
                }
            }
        }
        if self.profile.case_tag == CaseTag::Case2 && !self.symmetric_in_z {
            // in d = 1 the per-ball cancellation forces z-symmetry
            for &t in &times {
                for &x in &xs {
                    for &r in &[0.3, 1.0, 2.5] {
                        let m = quad::gl16(|z| z * self.kappa.eval(t, x, z), -r, r);
                        if m.abs() > 1e-8 {
                            return Err(Error::Domain(format!(
                                "odd-part integral over |z| <= {r} at (t={t}, x={x}) is {m}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn profile(&self) -> &ScalingProfile {
        &self.profile
    }

    /// Radii where the z factors jump or kink.
    fn z_breakpoints(&self) -> Vec<f64> {
        let has_cut = self.kappa.terms.iter().any(|(_, zf)| {
            matches!(zf, ZFactor::IndicatorBall | ZFactor::IndicatorTail)
        });
        if has_cut {
            vec![1.0]
        } else {
            vec![]
        }
    }

    /// The frozen kernel with kappa fixed at the state point (and, for
    /// the Euler scheme, at the step's start time).
    pub fn frozen_at(&self, t0: f64, x: &[f64]) -> Result<FrozenKernelSpec> {
        let kap = self.kappa.clone();
        let x0 = x[0];
        let f = Arc::new(move |_t: f64, z: &[f64]| kap.eval(t0, x0, z[0]));
        FrozenKernelSpec::new(
            KappaFrozen::Custom {
                f,
                time_dependent: false,
                z_symmetric: self.symmetric_in_z,
                isotropic: false,
                breakpoints: self.z_breakpoints(),
            },
            self.kappa0,
            self.symmetric_in_z,
            self.profile.clone(),
        )
    }

    /// The freezing-operator kernel at a spatial point y, keeping the
    /// time dependence.
    pub fn frozen_at_space(&self, y: f64) -> Result<FrozenKernelSpec> {
        let kap = self.kappa.clone();
        let td = self.kappa.time_dependent();
        let f = Arc::new(move |t: f64, z: &[f64]| kap.eval(t, y, z[0]));
        FrozenKernelSpec::new(
            KappaFrozen::Custom {
                f,
                time_dependent: td,
                z_symmetric: self.symmetric_in_z,
                isotropic: false,
                breakpoints: self.z_breakpoints(),
            },
            self.kappa0,
            self.symmetric_in_z,
            self.profile.clone(),
        )
    }

    /// When kappa does not depend on x, the exact frozen sampler applies.
    pub fn as_frozen_if_x_independent(&self) -> Result<Option<FrozenKernelSpec>> {
        if !self.kappa.is_x_independent() {
            return Ok(None);
        }
        self.frozen_at_space(0.0).map(Some)
    }
}

/// Which hypothesis gate admitted the spec.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    H1,
    H2,
}

#[derive(Debug, Clone)]
pub struct GateReport {
    pub hypothesis: Hypothesis,
    pub a0: APhi,
    pub a1: Option<APhi>,
    pub m_condition: Option<bool>,
    pub pass: bool,
}

/// Checks the hypothesis gate: symmetric kernels need A^(0) finite;
/// non-symmetric kernels need A^(1) finite, the odd-part cancellation in
/// the truncated-compensator case, and the gradient condition in the
/// truncated/full cases.
pub fn check_hypotheses(spec: &VariableKernelSpec) -> Result<GateReport> {
    let grid = crate::profiles::default_lambda_grid();
    let a0 = spec.profile.compute_a_phi(0, &grid)?;
    if spec.symmetric_in_z {
        let pass = !a0.is_divergent();
        return Ok(GateReport { hypothesis: Hypothesis::H1, a0, a1: None, m_condition: None, pass });
    }
    let a1 = spec.profile.compute_a_phi(1, &grid)?;
    let m_needed = matches!(spec.profile.case_tag, CaseTag::Case2 | CaseTag::Case3);
    let m_ok = if m_needed {
        match spec.modulus.m_phi_ell(&spec.profile, 0.5)? {
            crate::moduli::MPhiEll::Finite(_) => true,
            crate::moduli::MPhiEll::Divergent => false,
        }
    } else {
        true
    };
    let pass = !a1.is_divergent() && m_ok;
    Ok(GateReport {
        hypothesis: Hypothesis::H2,
        a0,
        a1: Some(a1),
        m_condition: if m_needed { Some(m_ok) } else { None },
        pass,
    })
}

/// Direct quadrature evaluation of the defect kernel
/// q0(t, s, x, y) = int Delta_{p^(y)}(x - y, z)(kappa(t,x,z) -
/// kappa(t,y,z)) dz via the scaling reduction; the oracle path against
/// which the engine's spectral kernels are tested.
pub fn q0_direct(spec: &VariableKernelSpec, t: f64, s: f64, x: f64, y: f64) -> Result<f64> {
    if !(t >= 0.0 && s > t && s - t <= 1.0) {
        return Err(Error::Domain(format!("need 0 <= t < s <= t+1, got ({t}, {s})")));
    }
    let frozen_y = spec.frozen_at_space(y)?;
    let unit = frozen_y.rescale_to_unit(t, s)?;
    let c = spec.profile.phi_inverse(s - t)?;
    let dens = frozen::density_fft(
        &unit,
        0.0,
        1.0,
        &frozen::GridConfig { n: 8192, oversample: 3.0, ..Default::default() },
    )?;
    // the parametrix differentiates w -> p(-w)
    let f = |w: f64| dens.value_at(-w);
    let w0 = (x - y) / c;
    let fp = -dens.deriv_at(-w0);
    let kdiff = |v: f64| {
        let zv = c * v;
        spec.kappa.eval(t, x, zv) - spec.kappa.eval(t, y, zv)
    };
    let (value, _) = frozen::delta::apply_generator(
        &unit.profile,
        &kdiff,
        &f,
        fp,
        w0,
        if spec.symmetric_in_z {
            frozen::DeltaBranch::SecondDifference
        } else {
            frozen::DeltaBranch::FirstOrder
        },
        dens.step * 3e-4,
        // the z factors of the separable kernel jump or kink at |z| = 1,
        // i.e. at radius 1/c in the scaled coordinates
        &[1.0 / c],
    )?;
    Ok(value / ((s - t) * c))
}

/// The empirically certified convergence radius: the largest dyadic
/// epsilon with Gamma_{ell^2_phi}(epsilon) <= 1 / (2 C2_hat), halved once
/// more; C2_hat = 2 C0_hat C1_hat from a defect-kernel sweep and a
/// convolution sweep.
pub fn epsilon0(spec: &VariableKernelSpec) -> Result<f64> {
    let sq = spec.modulus.squared()?;
    // C0_hat: sup |q0| / h^{ell^2} over a small lattice
    let mut c0_hat: f64 = 0.0;
    let s_ref = 0.25;
    for &dt in &[0.0625, 0.25] {
        for &x in &[-1.5, 0.0, 0.8, 2.5] {
            for &y in &[-0.7, 0.4, 1.9] {
                let q = q0_direct(spec, s_ref - dt * 0.0, s_ref + dt, x, y)?;
                let h = sq.h_ell_phi(&spec.profile, dt, (x - y).abs())?;
                c0_hat = c0_hat.max(q.abs() / h);
            }
        }
    }
    // C1_hat from the convolution sweep for ell^2 (the squared modulus
    // can sit at the boundary index, so the sweep skips the class gate)
    let rep = crate::moduli::convolution_sweep(
        &sq,
        &sq,
        &spec.profile,
        &[(0.25, 0.125), (0.0625, 0.03125)],
        &[0.0, 0.5, 2.0],
    )?;
    let c1_hat = rep.max_mass_ratio.max(rep.max_convolution_ratio).max(1.0);
    let c2_hat = 2.0 * c0_hat.max(1e-3) * c1_hat;
    let target = 1.0 / (2.0 * c2_hat);
    // largest dyadic epsilon with Gamma(epsilon) <= target, then halve
    let mut eps = 1.0f64;
    let comp = crate::moduli::EllFamily::Composite(
        Box::new(sq.clone()),
        Box::new(spec.profile.clone()),
    );
    let sq_phi = Modulus::new(comp, Default::default())?;
    for _ in 0..40 {
        if sq_phi.gamma(eps)? <= target {
            break;
        }
        eps *= 0.5;
    }
    Ok((eps * 0.5).min(0.25))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moduli::{ClassTags, EllFamily};
    use crate::profiles::{PhiFamily, ScalingDeclaration};

    pub(crate) fn fixture_profile() -> ScalingProfile {
        ScalingProfile::new(
            PhiFamily::Power { alpha: 1.0 },
            ScalingDeclaration { beta1: 1.0, beta2: 1.0, c1: 1.0, c2: 1.0 },
            1,
        )
        .unwrap()
    }

    pub(crate) fn fixture_modulus(scale2: f64) -> Modulus {
        // ell = sqrt(scale2) r^{1/2}: ell^2 = scale2 * r dominates the
        // |sin x - sin y| oscillation when scale2 >= 2 amp
        Modulus::new(
            EllFamily::Power { eta: 0.5, scale: scale2.sqrt() },
            ClassTags { s0: false, d0: true, r_alpha: Some(0.5) },
        )
        .unwrap()
    }

    /// kappa(x, z) = 1 + amp (1 + sin x) / 2 on |z| <= 1.
    pub(crate) fn fixture_spec(amp: f64) -> VariableKernelSpec {
        let kappa = SeparableKappa {
            base: 1.0,
            terms: vec![(
                SpaceFactor::Sin { base: amp / 2.0, amp: amp / 2.0, omega: 1.0, phase: 0.0 },
                ZFactor::IndicatorBall,
            )],
        };
        VariableKernelSpec::new(
            kappa,
            1.0 + amp,
            fixture_modulus(2.0 * amp),
            true,
            fixture_profile(),
        )
        .unwrap()
    }

    #[test]
    fn oscillation_bound_gate() {
        // a modulus too small to dominate the oscillation is rejected
        let kappa = SeparableKappa {
            base: 1.0,
            terms: vec![(
                SpaceFactor::Sin { base: 0.2, amp: 0.2, omega: 1.0, phase: 0.0 },
                ZFactor::IndicatorBall,
            )],
        };
        let r = VariableKernelSpec::new(
            kappa,
            1.4,
            fixture_modulus(0.05),
            true,
            fixture_profile(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn hypothesis_gate_h1() {
        let spec = fixture_spec(0.2);
        let g = check_hypotheses(&spec).unwrap();
        assert_eq!(g.hypothesis, Hypothesis::H1);
        assert!(g.pass);
    }

    #[test]
    fn hypothesis_gate_h2_divergent_a1() {
        // piecewise alpha = 1, beta = 2 has divergent A^(1): the
        // non-symmetric gate must close
        let p = ScalingProfile::new(
            PhiFamily::PiecewisePower { alpha: 1.0, beta: 2.0 },
            ScalingDeclaration { beta1: 1.0, beta2: 2.0, c1: 1.0, c2: 1.0 },
            1,
        )
        .unwrap();
        // Case3 allows an odd factor
        let kappa = SeparableKappa {
            base: 1.0,
            terms: vec![(
                SpaceFactor::Bump { base: 0.1, amp: 0.1, width: 2.0 },
                ZFactor::SignExp { rate: 1.0 },
            )],
        };
        let spec = VariableKernelSpec::new(
            kappa,
            1.3,
            fixture_modulus(0.5),
            false,
            p,
        )
        .unwrap();
        let g = check_hypotheses(&spec).unwrap();
        assert_eq!(g.hypothesis, Hypothesis::H2);
        assert!(!g.pass, "A^(1) divergence must close the H2 gate");
    }

    #[test]
    fn q0_vanishes_for_x_independent_kappa() {
        let kappa = SeparableKappa {
            base: 1.0,
            terms: vec![(SpaceFactor::Const(0.2), ZFactor::IndicatorBall)],
        };
        let spec = VariableKernelSpec::new(
            kappa,
            1.2,
            fixture_modulus(0.4),
            true,
            fixture_profile(),
        )
        .unwrap();
        for &(x, y) in &[(0.0, 0.5), (1.0, -2.0)] {
            let q = q0_direct(&spec, 0.0, 0.25, x, y).unwrap();
            assert!(q.abs() < 1e-12, "q0({x},{y}) = {q}");
        }
    }

    #[test]
    fn q0_vanishes_on_diagonal() {
        let spec = fixture_spec(0.2);
        for &x in &[-1.0, 0.3, 2.0] {
            let q = q0_direct(&spec, 0.0, 0.25, x, x).unwrap();
            assert!(q.abs() < 1e-12, "q0({x},{x}) = {q}");
        }
    }

    #[test]
    fn q0_bounded_by_weighted_profile() {
        let spec = fixture_spec(0.2);
        let sq = spec.modulus.squared().unwrap();
        let (t, s) = (0.1, 0.35);
        let mut c: f64 = 0.0;
        for &x in &[-2.0, -0.5, 0.0, 0.7, 1.6, 4.0] {
            for &y in &[-1.2, 0.2, 2.4] {
                let q = q0_direct(&spec, t, s, x, y).unwrap();
                let h = sq.h_ell_phi(&spec.profile, s - t, (x - y).abs()).unwrap();
                c = c.max(q.abs() / h);
            }
        }
        assert!(c.is_finite() && c > 0.0 && c < 30.0, "C0 sweep {c}");
    }

    #[test]
    fn epsilon0_monotone_in_modulus() {
        let big = fixture_spec(0.2);
        // halving the oscillation (and the modulus) cannot shrink epsilon0
        let small = fixture_spec(0.1);
        let e_big = epsilon0(&big).unwrap();
        let e_small = epsilon0(&small).unwrap();
        assert!(e_small >= e_big, "eps0 {e_small} vs {e_big}");
        assert!(e_big > 0.0);
    }
}
