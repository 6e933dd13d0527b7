//! Mittag-Leffler function and inverse Laplace kernels of the form
//! `s^{α₁-1} / Π_j (s^{α_j} + μ_j)`.
//!
//! Three kernel evaluators are provided:
//!
//! - [`inv_lt_distinct`]: partial fractions over Mittag-Leffler values, for
//!   pairwise separated `μ` and a common order.
//! - [`inv_lt_general`] and [`inv_lt_multi_order`]: the power series in
//!   `t^α`, valid for any `μ` (repeats allowed) and per-factor orders. The
//!   series alternates, so its rounding error grows like the sum of absolute
//!   terms; both report that alongside the certified truncation bound.
//! - [`inv_lt_contour`]: trapezoidal quadrature of the Bromwich integral on a
//!   deformed contour. Used where the alternating series cannot reach the
//!   requested accuracy.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::quad::{self, QuadConfig};
use crate::Estimate;

/// Relative gap below which `μ` values count as coincident.
pub const DEGENERACY_TOLERANCE: f64 = 1e-8;

/// Magnitude of `z` up to which [`mittag_leffler`] certifies its accuracy.
pub const ML_CERTIFIED_RADIUS: f64 = 50.0;

/// Below `-ML_SERIES_SWITCH` the Mittag-Leffler function is computed from
/// its integral representation instead of the power series.
pub const ML_SERIES_SWITCH: f64 = 1.0;

/// Default cap on the number of series terms.
pub const DEFAULT_SERIES_TERMS: usize = 200_000;

/// Default cap on the multi-indices visited by the multi-order series.
pub const DEFAULT_MULTI_ORDER_TERMS: usize = 2_000_000;

/// Minimum of `Γ` on the positive axis, attained at `x ≈ 1.4616`.
const GAMMA_MIN: f64 = 0.885_603_194_410_888_6;
const GAMMA_ARGMIN: f64 = 1.461_632_144_968_362_3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlValue {
    pub value: f64,
    pub error_bound: f64,
    /// `false` when `|z|` exceeds the certified radius or the value overflowed.
    pub certified: bool,
}

fn check_order(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "fractional order must lie in (0, 1], got {alpha}"
        )))
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "time must be finite and non-negative, got {t}"
        )))
    }
}

fn check_rates(mu: &[f64]) -> Result<()> {
    if mu.is_empty() {
        return Err(Error::InvalidParameter(
            "at least one rate is required".into(),
        ));
    }
    if let Some(bad) = mu.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "rates must be finite and positive, got {bad}"
        )));
    }
    Ok(())
}

/// Neumaier compensated sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `E_{α,1}(z) = Σ_j z^j / Γ(jα + 1)`.
pub fn mittag_leffler(alpha: f64, z: f64) -> Result<MlValue> {
    check_order(alpha)?;
    if !z.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "argument must be finite, got {z}"
        )));
    }
    let in_radius = z.abs() <= ML_CERTIFIED_RADIUS;
    if alpha == 1.0 {
        let v = z.exp();
        return Ok(MlValue {
            value: v,
            error_bound: 2.0 * f64::EPSILON * v,
            certified: in_radius && v.is_finite(),
        });
    }
    if z == 0.0 {
        return Ok(MlValue {
            value: 1.0,
            error_bound: 0.0,
            certified: true,
        });
    }
    let (value, error_bound) = if z >= -ML_SERIES_SWITCH {
        if z > 0.0 && z.powf(1.0 / alpha) > 700.0 {
            (f64::INFINITY, f64::INFINITY)
        } else {
            ml_series(alpha, z)
        }
    } else {
        ml_integral(alpha, -z)?
    };
    Ok(MlValue {
        value,
        error_bound,
        certified: in_radius && value.is_finite(),
    })
}

fn ml_series(alpha: f64, z: f64) -> (f64, f64) {
    let lz = z.abs().ln();
    let negative = z < 0.0;
    let mut acc = KahanSum::default();
    acc.add(1.0);
    let mut abs_sum = 1.0;
    let mut prev = 1.0f64;
    let mut rounding = 0.0;
    for j in 1..DEFAULT_SERIES_TERMS {
        let jf = j as f64;
        let lg = libm::lgamma(jf * alpha + 1.0);
        let mag = (jf * lz - lg).exp();
        let term = if negative && j % 2 == 1 { -mag } else { mag };
        acc.add(term);
        abs_sum += mag;
        rounding += mag * (lg.abs() + (jf * lz).abs());
        if mag < prev && jf * alpha > 2.0 && mag <= 1e-17 * acc.value().abs() {
            break;
        }
        prev = mag;
    }
    let v = acc.value();
    // exp amplifies the absolute rounding of its argument.
    (v, f64::EPSILON * (8.0 * abs_sum + rounding))
}

/// `E_α(-x) = sin(απ)/(απ) ∫_0^∞ x e^{-w^{1/α}} / (w² + 2wx cos(απ) + x²) dw`.
fn ml_integral(alpha: f64, x: f64) -> Result<(f64, f64)> {
    let (s, c) = (alpha * PI).sin_cos();
    let inv = 1.0 / alpha;
    let upper = 50f64.powf(alpha);
    let peak = -x * c;
    let integrand = |w: f64| {
        let d = (w + x * c).powi(2) + (x * s).powi(2);
        x * (-w.powf(inv)).exp() / d
    };
    // The GK21 error estimate floors at 50ε per panel; ask for just above it.
    let cfg = QuadConfig {
        abs_tol: 0.0,
        rel_tol: 1e-13,
        max_subdivisions: 2000,
    };
    let mut breaks = vec![1.0];
    if peak > 0.0 {
        breaks.push(peak);
    }
    let r = quad::integrate(integrand, 0.0, upper, &breaks, &cfg)?;
    let scale = s / (alpha * PI);
    // The neglected tail beyond `upper` is below e^{-50} times the integrand scale.
    let tail = (-50.0f64).exp() / (x * s * s).max(f64::MIN_POSITIVE);
    Ok((
        scale * r.value,
        scale * (r.error + tail) + 4.0 * f64::EPSILON * (scale * r.value).abs(),
    ))
}

/// Inverse Laplace transform of `s^{α-1} / Π_j (s^α + μ_j)` for pairwise
/// separated `μ`: `Σ_i E_α(-μ_i t^α) / Π_{l≠i} (μ_l - μ_i)`.
pub fn inv_lt_distinct(alpha: f64, mu: &[f64], t: f64) -> Result<Estimate> {
    check_order(alpha)?;
    check_rates(mu)?;
    check_time(t)?;
    let gap = min_relative_gap(mu);
    if gap <= DEGENERACY_TOLERANCE {
        return Err(Error::NearDegenerate {
            gap,
            tolerance: DEGENERACY_TOLERANCE,
        });
    }
    let x = t.powf(alpha);
    let ml: Vec<MlValue> = mu
        .iter()
        .map(|&m| mittag_leffler(alpha, -m * x))
        .collect::<Result<_>>()?;
    Ok(distinct_combination(mu, &ml))
}

/// Combines precomputed `E_α(-μ_i t^α)` values into the partial-fraction sum.
pub(crate) fn distinct_combination(mu: &[f64], ml: &[MlValue]) -> Estimate {
    let n = mu.len();
    let mut acc = KahanSum::default();
    let mut err = 0.0;
    let mut abs_sum = 0.0;
    for i in 0..n {
        let mut denom = 1.0;
        for l in 0..n {
            if l != i {
                denom *= mu[l] - mu[i];
            }
        }
        let c = ml[i].value / denom;
        acc.add(c);
        abs_sum += c.abs();
        err += ml[i].error_bound / denom.abs();
    }
    Estimate::new(
        acc.value(),
        err + (2 * n + 2) as f64 * f64::EPSILON * abs_sum,
    )
}

/// Smallest `|μ_l - μ_i| / max μ` over pairs; infinite for a single rate.
pub fn min_relative_gap(mu: &[f64]) -> f64 {
    if mu.len() < 2 {
        return f64::INFINITY;
    }
    let mut sorted = mu.to_vec();
    sorted.sort_by(f64::total_cmp);
    let max = sorted[sorted.len() - 1];
    sorted
        .windows(2)
        .map(|w| (w[1] - w[0]) / max)
        .fold(f64::INFINITY, f64::min)
}

/// Complete homogeneous symmetric polynomials `h_0, …, h_{r_max}` of `mu`.
pub fn complete_homogeneous(mu: &[f64], r_max: usize) -> Vec<f64> {
    let mut h = vec![0.0; r_max + 1];
    h[0] = 1.0;
    for &m in mu {
        for r in 1..=r_max {
            h[r] += m * h[r - 1];
        }
    }
    h
}

/// Bound on the magnitude of the level-`r` group of series terms.
struct LevelBound {
    n: usize,
    ln_mu_max: f64,
    ln_t: f64,
    base: f64,
    alpha_min: f64,
    alpha_max: f64,
}

impl LevelBound {
    /// Exponents at level `r` lie in `[base + r α_min, base + r α_max]`.
    fn ln_bound(&self, r: usize) -> f64 {
        let rf = r as f64;
        let e_lo = self.base + rf * self.alpha_min;
        let e_hi = self.base + rf * self.alpha_max;
        let ln_pow = (e_lo * self.ln_t).max(e_hi * self.ln_t);
        let ln_gamma = if 1.0 + e_lo >= GAMMA_ARGMIN {
            libm::lgamma(1.0 + e_lo)
        } else {
            GAMMA_MIN.ln()
        };
        ln_binomial(r + self.n - 1, self.n - 1) + rf * self.ln_mu_max + ln_pow - ln_gamma
    }

    /// Certified bound on the sum of all levels beyond `r`, if the bounds are
    /// already in their geometrically decaying regime.
    fn tail_after(&self, r: usize) -> Option<f64> {
        let e_next = self.base + (r + 1) as f64 * self.alpha_min;
        if 1.0 + e_next < GAMMA_ARGMIN {
            return None;
        }
        let b1 = self.ln_bound(r + 1);
        let b2 = self.ln_bound(r + 2);
        let ratio = (b2 - b1).exp();
        if ratio < 1.0 {
            Some(b1.exp() / (1.0 - ratio))
        } else {
            None
        }
    }
}

fn ln_binomial(n: usize, r: usize) -> f64 {
    if r == 0 || r == n {
        return 0.0;
    }
    let (n, r) = (n as f64, r as f64);
    libm::lgamma(n + 1.0) - libm::lgamma(r + 1.0) - libm::lgamma(n - r + 1.0)
}

/// Inverse Laplace transform of `s^{α-1} / Π_j (s^α + μ_j)` for arbitrary
/// positive `μ` by the power series
/// `Σ_{r≥0} (-1)^r h_r(μ) t^{α(r+n-1)} / Γ(α(r+n-1) + 1)`.
///
/// The series is truncated once its certified tail is below `eps / 2`. The
/// returned bound adds the rounding error, which grows with the sum of the
/// absolute terms; it may therefore exceed `eps` when `μ t^α` is large.
pub fn inv_lt_general(alpha: f64, mu: &[f64], t: f64, eps: f64) -> Result<Estimate> {
    let orders = vec![alpha; mu.len()];
    inv_lt_multi_order(&orders, mu, t, eps)
}

/// Inverse Laplace transform of `s^{α_1-1} / Π_j (s^{α_j} + μ_j)`:
/// `Σ_{r∈ℕ^d} (-1)^{|r|} Π_g h_{r_g}(μ_g) t^{E(r)} / Γ(1 + E(r))` where the
/// factors are grouped by distinct order `α_g` and
/// `E(r) = Σ_{j≥2} α_j + Σ_g r_g α_g`.
pub fn inv_lt_multi_order(alphas: &[f64], mu: &[f64], t: f64, eps: f64) -> Result<Estimate> {
    inv_lt_multi_order_with(alphas, mu, t, eps, DEFAULT_MULTI_ORDER_TERMS)
}

pub fn inv_lt_multi_order_with(
    alphas: &[f64],
    mu: &[f64],
    t: f64,
    eps: f64,
    max_terms: usize,
) -> Result<Estimate> {
    check_rates(mu)?;
    check_time(t)?;
    if alphas.len() != mu.len() {
        return Err(Error::InvalidParameter(format!(
            "{} orders supplied for {} rates",
            alphas.len(),
            mu.len()
        )));
    }
    for &a in alphas {
        check_order(a)?;
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    let n = mu.len();
    if t == 0.0 {
        return Ok(Estimate::exact(if n == 1 { 1.0 } else { 0.0 }));
    }
    if n == 1 {
        let v = mittag_leffler(alphas[0], -mu[0] * t.powf(alphas[0]))?;
        return Ok(Estimate::new(v.value, v.error_bound));
    }

    // Group factors by order.
    let mut groups: Vec<(f64, Vec<f64>)> = Vec::new();
    for (&a, &m) in alphas.iter().zip(mu) {
        match groups.iter_mut().find(|(ga, _)| *ga == a) {
            Some((_, ms)) => ms.push(m),
            None => groups.push((a, vec![m])),
        }
    }
    let base: f64 = alphas[1..].iter().sum();
    let mu_max = mu.iter().copied().fold(0.0, f64::max);
    let bound = LevelBound {
        n,
        ln_mu_max: mu_max.ln(),
        ln_t: t.ln(),
        base,
        alpha_min: alphas.iter().copied().fold(f64::INFINITY, f64::min),
        alpha_max: alphas.iter().copied().fold(0.0, f64::max),
    };
    let ln_t = t.ln();
    let d = groups.len();

    // Normalised h_r(μ_g / μ_max), grown on demand.
    let mut h: Vec<Vec<f64>> = groups
        .iter()
        .map(|(_, ms)| complete_homogeneous_scaled(ms, mu_max, 0))
        .collect();
    let mut acc = KahanSum::default();
    let mut abs_sum = 0.0;
    let mut rounding = 0.0;
    let mut r_vec = vec![0usize; d];
    let mut visited = 0usize;
    let mut level = 0usize;
    while visited <= max_terms {
        for (g, (_, ms)) in groups.iter().enumerate() {
            if h[g].len() <= level {
                h[g] = complete_homogeneous_scaled(ms, mu_max, level + 16);
            }
        }
        let sign = if level.is_multiple_of(2) { 1.0 } else { -1.0 };
        let mut visit = |r: &[usize]| {
            let mut coef = 1.0;
            let mut expo = base;
            for g in 0..d {
                coef *= h[g][r[g]];
                expo += r[g] as f64 * groups[g].0;
            }
            if coef == 0.0 {
                return;
            }
            let lg = libm::lgamma(1.0 + expo);
            let ln_scale = level as f64 * bound.ln_mu_max;
            let mag = (coef.ln() + ln_scale + expo * ln_t - lg).exp();
            acc.add(sign * mag);
            abs_sum += mag;
            // exp amplifies the absolute rounding of its argument.
            rounding +=
                mag * (8.0 + lg.abs() + ln_scale.abs() + (expo * ln_t).abs()) * f64::EPSILON;
        };
        for_each_level(d, level, &mut r_vec, &mut visit);
        visited += ln_binomial(level + d - 1, d - 1).exp().round() as usize;
        if let Some(tail) = bound.tail_after(level) {
            if tail <= 0.5 * eps || tail <= 1e-300 {
                let rounding = rounding + 4.0 * f64::EPSILON * abs_sum;
                return Ok(Estimate::new(acc.value(), tail + rounding));
            }
        }
        if !abs_sum.is_finite() {
            break;
        }
        level += 1;
    }
    let tail = bound.tail_after(level).unwrap_or(f64::INFINITY);
    Err(Error::TailNotCertified {
        partial: acc.value(),
        bound: tail,
        target: eps,
        terms: visited,
    })
}

/// `h_r(μ / scale)` for `r = 0..=r_max`.
fn complete_homogeneous_scaled(mu: &[f64], scale: f64, r_max: usize) -> Vec<f64> {
    let scaled: Vec<f64> = mu.iter().map(|m| m / scale).collect();
    complete_homogeneous(&scaled, r_max)
}

/// Visits every `r ∈ ℕ^d` with `|r| = level`.
fn for_each_level<F: FnMut(&[usize])>(d: usize, level: usize, r: &mut [usize], visit: &mut F) {
    fn rec<F: FnMut(&[usize])>(pos: usize, left: usize, r: &mut [usize], visit: &mut F) {
        if pos + 1 == r.len() {
            r[pos] = left;
            visit(r);
            return;
        }
        for v in 0..=left {
            r[pos] = v;
            rec(pos + 1, left - v, r, visit);
        }
    }
    if d == 0 {
        return;
    }
    rec(0, level, r, visit);
}

/// Number of contour nodes used by [`inv_lt_contour`].
pub const CONTOUR_NODES: usize = 32;

/// Numerical inverse Laplace transform at `t > 0` of a transform that is
/// analytic off the negative real axis, by the trapezoidal rule on the
/// cotangent contour `z(θ) = N(a θ cot(bθ) - c + i d θ)`, `s = z / t`.
///
/// Returns the value with an error estimate from comparing two node counts.
pub fn inv_lt_contour<F>(transform: F, t: f64) -> Result<Estimate>
where
    F: Fn(Complex64) -> Complex64,
{
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "contour inversion needs t > 0, got {t}"
        )));
    }
    let (v1, a1) = contour_sum(&transform, t, CONTOUR_NODES);
    let (v2, a2) = contour_sum(&transform, t, CONTOUR_NODES - 8);
    let err = (v1 - v2).abs() + 16.0 * f64::EPSILON * a1.max(a2);
    Ok(Estimate::new(v1, err))
}

/// Contour nodes and weights: `f(t) ≈ Σ_k Im(w_k F(s_k))`.
pub fn contour_nodes(t: f64, nodes: usize) -> Vec<(Complex64, Complex64)> {
    const A: f64 = 0.5017;
    const B: f64 = 0.6407;
    const C: f64 = 0.6122;
    const D: f64 = 0.2645;
    let nf = nodes as f64;
    (0..nodes / 2)
        .map(|j| {
            let theta = (j as f64 + 0.5) * 2.0 * PI / nf;
            let (sb, cb) = (B * theta).sin_cos();
            let cot = cb / sb;
            let z = Complex64::new(nf * (A * theta * cot - C), nf * D * theta);
            let dz = Complex64::new(nf * (A * cot - A * B * theta / (sb * sb)), nf * D);
            let w = z.exp() * dz * (2.0 / (nf * t));
            (z / t, w)
        })
        .collect()
}

fn contour_sum<F>(transform: &F, t: f64, nodes: usize) -> (f64, f64)
where
    F: Fn(Complex64) -> Complex64,
{
    let mut acc = KahanSum::default();
    let mut abs_sum = 0.0;
    for (s, w) in contour_nodes(t, nodes) {
        let term = (w * transform(s)).im;
        acc.add(term);
        abs_sum += term.abs();
    }
    (acc.value(), abs_sum)
}

/// `s^{α₁-1} / Π_j (s^{α_j} + μ_j)` at complex `s`, principal branch.
pub fn kernel_transform(alphas: &[f64], mu: &[f64], s: Complex64) -> Complex64 {
    let ln_s = s.ln();
    let mut den = Complex64::new(1.0, 0.0);
    for (&a, &m) in alphas.iter().zip(mu) {
        den *= (ln_s * a).exp() + m;
    }
    (ln_s * (alphas[0] - 1.0)).exp() / den
}

/// Kernel inverse by contour quadrature; see [`inv_lt_contour`].
pub fn inv_lt_kernel_contour(alphas: &[f64], mu: &[f64], t: f64) -> Result<Estimate> {
    check_rates(mu)?;
    check_time(t)?;
    for &a in alphas {
        check_order(a)?;
    }
    if t == 0.0 {
        return Ok(Estimate::exact(if mu.len() == 1 { 1.0 } else { 0.0 }));
    }
    inv_lt_contour(|s| kernel_transform(alphas, mu, s), t)
}

/// `Σ_i Π_{j≠i} (x + λ_j) / (λ_j - λ_i)`, identically one for distinct `λ`.
pub fn partial_fraction_unity(x: f64, lambdas: &[f64]) -> Result<f64> {
    if lambdas.len() < 2 {
        return Err(Error::InvalidParameter(
            "the identity needs at least two values".into(),
        ));
    }
    for (i, a) in lambdas.iter().enumerate() {
        if lambdas[i + 1..].contains(a) {
            return Err(Error::InvalidParameter(format!(
                "values must be distinct; {a} is repeated"
            )));
        }
    }
    // The terms are large and alternate, so they are formed and summed in
    // double-double arithmetic.
    let mut acc = Dd::from(0.0);
    for (i, &li) in lambdas.iter().enumerate() {
        let mut num = Dd::from(1.0);
        let mut den = Dd::from(1.0);
        for (j, &lj) in lambdas.iter().enumerate() {
            if j != i {
                num = num.mul(Dd::sum(x, lj));
                den = den.mul(Dd::sum(lj, -li));
            }
        }
        acc = acc.add(num.div(den));
    }
    Ok(acc.hi + acc.lo)
}

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi) / 2`.
#[derive(Debug, Clone, Copy)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl From<f64> for Dd {
    fn from(hi: f64) -> Self {
        Dd { hi, lo: 0.0 }
    }
}

impl Dd {
    /// Exact `a + b`.
    fn sum(a: f64, b: f64) -> Dd {
        let hi = a + b;
        let bb = hi - a;
        Dd {
            hi,
            lo: (a - (hi - bb)) + (b - bb),
        }
    }

    fn renorm(hi: f64, lo: f64) -> Dd {
        let s = hi + lo;
        Dd {
            hi: s,
            lo: lo - (s - hi),
        }
    }

    fn add(self, o: Dd) -> Dd {
        let s = Dd::sum(self.hi, o.hi);
        let t = Dd::sum(self.lo, o.lo);
        let r = Dd::renorm(s.hi, s.lo + t.hi);
        Dd::renorm(r.hi, r.lo + t.lo)
    }

    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        Dd::renorm(p, e + (self.hi * o.lo + self.lo * o.hi))
    }

    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.add(o.mul(Dd::from(-q1)));
        let q2 = r.hi / o.hi;
        let r = r.add(o.mul(Dd::from(-q2)));
        let q3 = r.hi / o.hi;
        Dd::renorm(q1, q2).add(Dd::from(q3))
    }
}
