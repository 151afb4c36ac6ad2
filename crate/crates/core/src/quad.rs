//! Quadrature primitives: Gauss-Legendre panels, geometric (graded) slice
//! integration with divergence detection, tail extrapolation, alternating
//! series acceleration for oscillatory tails, and Richardson limits.
//!
//! The divergence detector follows a fixed policy: an integral over
//! cutoffs 2^{-k} (or 2^k) is declared divergent when the partial
//! integrals grow by a factor >= 1.05 per decade for 3 consecutive
//! decades. This is robust for log-type divergences.

/// Outcome of an improper integral with endpoint classification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Improper {
    Converged(f64),
    Divergent,
    /// Partial sums neither stabilized nor grew beyond the threshold.
    Indeterminate,
}

impl Improper {
    pub fn value(self) -> Option<f64> {
        match self {
            Improper::Converged(v) => Some(v),
            _ => None,
        }
    }
    pub fn is_divergent(self) -> bool {
        matches!(self, Improper::Divergent)
    }
}

// 8-point Gauss-Legendre rule on [-1, 1].
pub const GL8_X: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329_0,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
pub const GL8_W: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362_0,
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

// 16-point Gauss-Legendre rule on [-1, 1].
pub const GL16_X: [f64; 16] = [
    -0.989_400_934_991_649_9,
    -0.944_575_023_073_232_6,
    -0.865_631_202_387_831_8,
    -0.755_404_408_355_003_0,
    -0.617_876_244_402_643_8,
    -0.458_016_777_657_227_4,
    -0.281_603_550_779_258_9,
    -0.095_012_509_837_637_44,
    0.095_012_509_837_637_44,
    0.281_603_550_779_258_9,
    0.458_016_777_657_227_4,
    0.617_876_244_402_643_8,
    0.755_404_408_355_003_0,
    0.865_631_202_387_831_8,
    0.944_575_023_073_232_6,
    0.989_400_934_991_649_9,
];
pub const GL16_W: [f64; 16] = [
    0.027_152_459_411_754_09,
    0.062_253_523_938_647_89,
    0.095_158_511_682_492_78,
    0.124_628_971_255_533_9,
    0.149_595_988_816_576_7,
    0.169_156_519_395_002_5,
    0.182_603_415_044_923_6,
    0.189_450_610_455_068_5,
    0.189_450_610_455_068_5,
    0.182_603_415_044_923_6,
    0.169_156_519_395_002_5,
    0.149_595_988_816_576_7,
    0.124_628_971_255_533_9,
    0.095_158_511_682_492_78,
    0.062_253_523_938_647_89,
    0.027_152_459_411_754_09,
];

/// 8-point Gauss-Legendre panel over [a, b].
#[inline]
pub fn gl8<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut acc = 0.0;
    for i in 0..8 {
        acc += GL8_W[i] * f(c + h * GL8_X[i]);
    }
    acc * h
}

/// 16-point Gauss-Legendre panel over [a, b].
#[inline]
pub fn gl16<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut acc = 0.0;
    for i in 0..16 {
        acc += GL16_W[i] * f(c + h * GL16_X[i]);
    }
    acc * h
}

/// Number of dyadic halvings per decade (log2 10).
const HALVINGS_PER_DECADE: f64 = 3.321_928_094_887_362;
const DECADE_GROWTH: f64 = 1.05;
const PARTIAL_CEILING: f64 = 1e250;

/// Integrates `f` over (0, b] with geometric refinement toward 0
/// (dyadic slices, GL8 per slice). Classifies the endpoint behaviour and
/// adds a geometric tail extrapolation of the unresolved remainder.
pub fn integrate_to_zero<F: FnMut(f64) -> f64>(mut f: F, b: f64, rel_tol: f64) -> Improper {
    assert!(b > 0.0 && b.is_finite());
    improper_dyadic(move |lo, hi| gl8(&mut f, lo, hi), b, rel_tol, true)
}

/// Integrates `f` over [a, inf) with geometric extension (dyadic slices).
pub fn integrate_to_inf<F: FnMut(f64) -> f64>(mut f: F, a: f64, rel_tol: f64) -> Improper {
    assert!(a > 0.0 && a.is_finite());
    improper_dyadic(move |lo, hi| gl8(&mut f, lo, hi), a, rel_tol, false)
}

/// Shared driver: runs dyadic slices to full depth, then classifies.
///
/// Divergence is declared when (a) the partial integral exceeds the
/// ceiling, (b) the partial integrals at the deepest decades still grow by
/// >= 1.05 per decade for 3 consecutive decades, or (c) the per-decade
/// increments fail to decay geometrically at depth (log- and iterated-log
/// type divergences, whose decade ratios tend to 1 from either side).
fn improper_dyadic<S: FnMut(f64, f64) -> f64>(
    mut slice: S,
    start: f64,
    rel_tol: f64,
    toward_zero: bool,
) -> Improper {
    let max_steps = 220;
    let mut edge = start;
    let mut partial = 0.0;
    let mut slices: Vec<f64> = Vec::with_capacity(max_steps);
    let mut decade_partials: Vec<f64> = vec![];
    let mut small_streak = 0usize;
    for step in 0..max_steps {
        let (lo, hi) = if toward_zero {
            (edge * 0.5, edge)
        } else {
            (edge, edge * 2.0)
        };
        let s = slice(lo, hi);
        partial += s;
        slices.push(s);
        if !partial.is_finite() || partial.abs() > PARTIAL_CEILING {
            return Improper::Divergent;
        }
        let decade = ((step + 1) as f64 / HALVINGS_PER_DECADE).floor() as usize;
        if decade > decade_partials.len() {
            decade_partials.push(partial);
        }
        let scale = partial.abs().max(1e-300);
        if s.abs() <= rel_tol * scale {
            small_streak += 1;
            if small_streak >= 3 {
                return Improper::Converged(partial + tail_estimate(&slices));
            }
        } else {
            small_streak = 0;
        }
        edge = if toward_zero { lo } else { hi };
    }
    classify_at_depth(partial, &slices, &decade_partials)
}

fn classify_at_depth(partial: f64, slices: &[f64], decades: &[f64]) -> Improper {
    let scale = partial.abs().max(1e-300);
    // (b) sustained growth of the partials at the deepest decades
    let n = decades.len();
    if n >= 4 {
        let grew = (n - 3..n).all(|i| {
            decades[i].abs() / decades[i - 1].abs().max(f64::MIN_POSITIVE) >= DECADE_GROWTH
        });
        if grew {
            return Improper::Divergent;
        }
    }
    // (c) per-decade increments: geometric decay means convergence, ratios
    // near 1 mean log-type divergence
    if n >= 8 {
        let incs: Vec<f64> = (n - 7..n)
            .map(|i| (decades[i] - decades[i - 1]).abs())
            .collect();
        let mut ratios: Vec<f64> = incs
            .windows(2)
            .filter(|w| w[0] > 1e-14 * scale)
            .map(|w| w[1] / w[0])
            .collect();
        if ratios.is_empty() {
            return Improper::Converged(partial + tail_estimate(slices));
        }
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = ratios[ratios.len() / 2];
        if med >= 0.98 {
            return Improper::Divergent;
        }
        if med <= 0.9 {
            // geometric tail of the decade increments
            let last = *incs.last().unwrap();
            let tail = last * med / (1.0 - med);
            return Improper::Converged(partial + tail.copysign(partial));
        }
        let last = *incs.last().unwrap();
        let tail = last * med / (1.0 - med);
        if tail <= 0.5 * scale {
            return Improper::Converged(partial + tail.copysign(partial));
        }
    }
    Improper::Indeterminate
}

/// Geometric extrapolation of the unresolved remainder from the trailing
/// slice ratio. Only applied when the ratio is stably below 1.
fn tail_estimate(slices: &[f64]) -> f64 {
    let n = slices.len();
    if n < 4 {
        return 0.0;
    }
    let s_last = slices[n - 1];
    let s_prev = slices[n - 2];
    if s_prev.abs() <= f64::MIN_POSITIVE {
        return 0.0;
    }
    let rho = s_last / s_prev;
    let rho_prev = if slices[n - 3].abs() > f64::MIN_POSITIVE {
        s_prev / slices[n - 3]
    } else {
        rho
    };
    if rho > 0.0 && rho < 0.95 && (rho - rho_prev).abs() < 0.1 {
        s_last * rho / (1.0 - rho)
    } else {
        0.0
    }
}

/// Integrates `f` over the whole real line when the integrand decays at
/// infinity and may be sharply peaked at the given points. Slices are
/// graded geometrically toward every peak and extended dyadically outward.
pub fn integrate_real_line<F: Fn(f64) -> f64>(f: F, peaks: &[f64], rel_tol: f64) -> Improper {
    let mut ps: Vec<f64> = peaks.to_vec();
    ps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ps.dedup_by(|a, b| (*a - *b).abs() < 1e-300);
    if ps.is_empty() {
        ps.push(0.0);
    }
    let mut total = 0.0;
    // interior segments: grade toward both bounding peaks
    for w in ps.windows(2) {
        let (a, b) = (w[0], w[1]);
        let m = 0.5 * (a + b);
        let left = integrate_to_zero(|u| f(a + u), m - a, rel_tol);
        let right = integrate_to_zero(|u| f(b - u), b - m, rel_tol);
        match (left, right) {
            (Improper::Converged(l), Improper::Converged(r)) => total += l + r,
            _ => return Improper::Indeterminate,
        }
    }
    // outer tails, graded toward the outermost peaks then extended outward
    let first = ps[0];
    let last = *ps.last().unwrap();
    for (peak, dir) in [(first, -1.0), (last, 1.0)] {
        let near = integrate_to_zero(|u| f(peak + dir * u), 1.0, rel_tol);
        let far = integrate_to_inf(|u| f(peak + dir * u), 1.0, rel_tol);
        match (near, far) {
            (Improper::Converged(n), Improper::Converged(fv)) => total += n + fv,
            (Improper::Divergent, _) | (_, Improper::Divergent) => return Improper::Divergent,
            _ => return Improper::Indeterminate,
        }
    }
    Improper::Converged(total)
}

/// `integrate_to_zero` with `nsub` GL8 sub-panels per dyadic slice, for
/// quadrature-refinement convergence checks.
pub fn integrate_to_zero_refined<F: FnMut(f64) -> f64>(
    mut f: F,
    b: f64,
    rel_tol: f64,
    nsub: usize,
) -> Improper {
    assert!(b > 0.0 && b.is_finite() && nsub >= 1);
    improper_dyadic(
        move |lo, hi| {
            let mut acc = 0.0;
            let h = (hi - lo) / nsub as f64;
            for k in 0..nsub {
                acc += gl8(&mut f, lo + k as f64 * h, lo + (k + 1) as f64 * h);
            }
            acc
        },
        b,
        rel_tol,
        true,
    )
}

/// Fixed geometric partition of [a, b] with `per_decade` slices per decade,
/// GL8 on each slice. Both endpoints must be positive.
pub fn integrate_geometric<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, per_decade: usize) -> f64 {
    assert!(a > 0.0 && b > a);
    let ratio = 10f64.powf(1.0 / per_decade as f64);
    let mut acc = 0.0;
    let mut lo = a;
    while lo < b {
        let hi = (lo * ratio).min(b);
        acc += gl8(&mut f, lo, hi);
        lo = hi;
    }
    acc
}

/// Euler transform of an eventually alternating series given its raw terms.
/// Returns the accelerated sum of the whole term list.
pub fn euler_sum(terms: &[f64]) -> f64 {
    if terms.is_empty() {
        return 0.0;
    }
    // Sum the head directly, accelerate the last portion.
    let split = terms.len().saturating_sub(24);
    let head: f64 = terms[..split].iter().sum();
    let tail = &terms[split..];
    let mut rows: Vec<f64> = tail.to_vec();
    let mut sum = 0.0;
    let mut sign = 1.0;
    // Work on magnitudes with explicit sign of the first element: the
    // classic Euler transform assumes strict alternation; fall back to a
    // direct sum when alternation does not hold.
    let alternating = tail.windows(2).all(|w| w[0] * w[1] <= 0.0);
    if !alternating || tail.len() < 4 {
        return head + tail.iter().sum::<f64>();
    }
    let s0 = if tail[0] >= 0.0 { 1.0 } else { -1.0 };
    for r in rows.iter_mut() {
        *r = r.abs();
    }
    // Euler transformation: sum_k (-1)^k a_k = sum_j (Delta^j a)_0 / 2^{j+1}.
    let mut pow = 0.5;
    for _ in 0..rows.len() {
        sum += sign * pow * rows[0];
        pow *= 0.5;
        sign = 1.0;
        for i in 0..rows.len() - 1 {
            rows[i] = rows[i] - rows[i + 1];
        }
        rows.pop();
        if rows.is_empty() {
            break;
        }
    }
    head + s0 * sum
}

/// Richardson/Neville extrapolation of samples y(k) ~ y(inf) + c/k + ...
/// to k -> inf, given pairs (k, y). Uses polynomial extrapolation in 1/k.
pub fn richardson_limit(samples: &[(f64, f64)]) -> f64 {
    let n = samples.len();
    assert!(n >= 2);
    let xs: Vec<f64> = samples.iter().map(|(k, _)| 1.0 / *k).collect();
    let mut ys: Vec<f64> = samples.iter().map(|(_, y)| *y).collect();
    // Neville tableau evaluated at x = 0.
    for j in 1..n {
        for i in 0..n - j {
            let x0 = xs[i];
            let x1 = xs[i + j];
            ys[i] = (x1 * ys[i] - x0 * ys[i + 1]) / (x1 - x0);
        }
    }
    ys[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl8_exact_on_polynomials() {
        // degree 15 is integrated exactly
        let v = gl8(|x| x.powi(14), 0.0, 1.0);
        assert!((v - 1.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn zero_endpoint_convergent_power() {
        // int_0^1 r^{-1/2} dr = 2
        match integrate_to_zero(|r| r.powf(-0.5), 1.0, 1e-13) {
            Improper::Converged(v) => assert!((v - 2.0).abs() < 1e-9, "v={v}"),
            other => panic!("expected convergence, got {other:?}"),
        }
    }

    #[test]
    fn zero_endpoint_divergent_log() {
        // int_0 1/r dr diverges logarithmically
        assert!(integrate_to_zero(|r| 1.0 / r, 1.0, 1e-13).is_divergent());
    }

    #[test]
    fn zero_endpoint_divergent_power() {
        assert!(integrate_to_zero(|r| r.powf(-1.5), 1.0, 1e-13).is_divergent());
    }

    #[test]
    fn inf_endpoint_convergent() {
        // int_1^inf r^{-2} dr = 1
        match integrate_to_inf(|r| r.powi(-2), 1.0, 1e-13) {
            Improper::Converged(v) => assert!((v - 1.0).abs() < 1e-9, "v={v}"),
            other => panic!("expected convergence, got {other:?}"),
        }
    }

    #[test]
    fn inf_endpoint_divergent_log() {
        assert!(integrate_to_inf(|r| 1.0 / r, 1.0, 1e-13).is_divergent());
    }

    #[test]
    fn euler_sum_alternating_tail() {
        // sum_{k>=1} (-1)^{k+1}/k = ln 2
        let terms: Vec<f64> = (1..60).map(|k| if k % 2 == 1 { 1.0 / k as f64 } else { -1.0 / k as f64 }).collect();
        let s = euler_sum(&terms);
        assert!((s - std::f64::consts::LN_2).abs() < 1e-10, "s={s}");
    }

    #[test]
    fn richardson_reaches_limit() {
        // y(k) = 3 + 5/k + 2/k^2
        let samples: Vec<(f64, f64)> = (10..20).map(|k| {
            let k = k as f64;
            (k, 3.0 + 5.0 / k + 2.0 / (k * k))
        }).collect();
        let lim = richardson_limit(&samples);
        assert!((lim - 3.0).abs() < 1e-7, "lim={lim}");
    }
}
