//! Analytic state probabilities.
//!
//! For `m ≥ 1` the probability of `n0 + m` is a sum over jump patterns of
//! the product of the jump rates along the path times the inverse Laplace
//! transform of `s^{α-1} / Π_l (s^{α_l} + μ_l)`, where `μ_l` are the total
//! rates out of the visited levels. [`pmf_table`] assembles whole tables and
//! switches to a transform-domain recursion once enumerating patterns
//! becomes too expensive.

use std::collections::{BTreeMap, HashMap};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combinat::{self, EpochSet, JumpPattern};
use crate::error::{Error, Result};
use crate::rates::RateModel;
use crate::special::{self, KahanSum, MlValue};
use crate::table::{PmfTable, TableFlag, TableSource};
use crate::Estimate;

/// Default cap on `|Θ|` per probability.
pub const DEFAULT_PATTERN_BUDGET: u128 = 2_000_000;

/// Fractional order: one value, or one per state.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum OrderSpec {
    Constant(f64),
    PerState(PerStateOrders),
}

impl<'de> Deserialize<'de> for OrderSpec {
    // Untagged derive buffers map keys as strings, which integer state keys
    // cannot be read back from.
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let v = serde_json::Value::deserialize(d)?;
        match v {
            serde_json::Value::Number(n) => n
                .as_f64()
                .map(OrderSpec::Constant)
                .ok_or_else(|| D::Error::custom("order must be a number")),
            other => PerStateOrders::deserialize(other)
                .map(OrderSpec::PerState)
                .map_err(D::Error::custom),
        }
    }
}

/// Orders `α_n` keyed by state, with an optional fallback.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PerStateOrders {
    pub orders: BTreeMap<u64, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<f64>,
}

fn check_alpha(alpha: f64) -> Result<f64> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(alpha)
    } else {
        Err(Error::InvalidParameter(format!(
            "fractional order must lie in (0, 1], got {alpha}"
        )))
    }
}

impl PerStateOrders {
    pub fn new(orders: BTreeMap<u64, f64>, default: Option<f64>) -> Result<Self> {
        let p = PerStateOrders { orders, default };
        p.validate()?;
        Ok(p)
    }

    pub fn uniform(alpha: f64) -> Result<Self> {
        Self::new(BTreeMap::new(), Some(alpha))
    }

    pub fn validate(&self) -> Result<()> {
        for &a in self.orders.values().chain(self.default.iter()) {
            check_alpha(a)?;
        }
        Ok(())
    }

    pub fn order(&self, n: u64) -> Result<f64> {
        match self.orders.get(&n).copied().or(self.default) {
            Some(a) => check_alpha(a),
            None => Err(Error::InvalidParameter(format!(
                "no fractional order given for state {n}"
            ))),
        }
    }
}

impl OrderSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            OrderSpec::Constant(a) => check_alpha(*a).map(|_| ()),
            OrderSpec::PerState(p) => p.validate(),
        }
    }

    pub fn order(&self, n: u64) -> Result<f64> {
        match self {
            OrderSpec::Constant(a) => check_alpha(*a),
            OrderSpec::PerState(p) => p.order(n),
        }
    }
}

/// One pattern together with the quantities its term needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRateProfile {
    pub pattern: JumpPattern,
    pub epochs: EpochSet,
    /// `μ_l = total_rate(n0 + (j)_l)`.
    pub mu: Vec<f64>,
    /// `Π_{j<m} λ(n0 + j, x_{j+1})`, with `λ(·, 0) = 1`.
    pub jump_rate_product: f64,
}

pub fn path_rate_profile(model: &RateModel, pattern: &JumpPattern) -> Result<PathRateProfile> {
    let n0 = model.n0();
    let epochs = combinat::epoch_set(pattern);
    let mu = epochs
        .epochs()
        .iter()
        .map(|&j| model.total_rate(n0 + j as u64).map(|r| r.value))
        .collect::<Result<Vec<_>>>()?;
    let mut product = 1.0;
    for (j, &x) in pattern.as_slice().iter().enumerate() {
        if x != 0 {
            product *= model.rate(n0 + j as u64, x as usize)?;
        }
    }
    Ok(PathRateProfile {
        pattern: pattern.clone(),
        epochs,
        mu,
        jump_rate_product: product,
    })
}

/// Knobs for the pattern-sum engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmfConfig {
    pub pattern_budget: u128,
    /// Truncation target for the kernel series.
    pub kernel_tolerance: f64,
    /// A kernel whose error bound exceeds this is recomputed on the contour.
    pub fallback_tolerance: f64,
    pub contour_fallback: bool,
}

impl Default for PmfConfig {
    fn default() -> Self {
        PmfConfig {
            pattern_budget: DEFAULT_PATTERN_BUDGET,
            kernel_tolerance: 1e-14,
            fallback_tolerance: 1e-12,
            contour_fallback: true,
        }
    }
}

/// How many kernels each evaluator produced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct KernelCounts {
    pub distinct: usize,
    pub series: usize,
    pub contour: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmfEvaluation {
    pub estimate: Estimate,
    pub patterns: u128,
    pub kernels: KernelCounts,
}

/// Rates and total rates for levels `0..=m` above `n0`.
struct Levels {
    /// `lam[j][i - 1] = λ(n0 + j, i)` for `i ≤ min(k, m - j)`.
    lam: Vec<Vec<f64>>,
    mu: Vec<f64>,
    mu_tail: Vec<f64>,
    alphas: Vec<f64>,
}

fn levels(model: &RateModel, order: &OrderSpec, m: usize, k: usize) -> Result<Levels> {
    let n0 = model.n0();
    let mut lam = Vec::with_capacity(m + 1);
    let mut mu = Vec::with_capacity(m + 1);
    let mut mu_tail = Vec::with_capacity(m + 1);
    let mut alphas = Vec::with_capacity(m + 1);
    for j in 0..=m {
        let n = n0 + j as u64;
        let row = (1..=k.min(m - j))
            .map(|i| model.rate(n, i))
            .collect::<Result<Vec<_>>>()?;
        lam.push(row);
        let total = model.total_rate(n)?;
        mu.push(total.value);
        mu_tail.push(total.tail_bound);
        alphas.push(order.order(n)?);
    }
    Ok(Levels {
        lam,
        mu,
        mu_tail,
        alphas,
    })
}

/// Kernel evaluator with per-call caches.
struct KernelEngine<'a> {
    cfg: &'a PmfConfig,
    t: f64,
    ml_cache: HashMap<(u64, u64), MlValue>,
    cache: HashMap<Vec<u64>, Estimate>,
    counts: KernelCounts,
}

impl<'a> KernelEngine<'a> {
    fn new(cfg: &'a PmfConfig, t: f64) -> Self {
        KernelEngine {
            cfg,
            t,
            ml_cache: HashMap::new(),
            cache: HashMap::new(),
            counts: KernelCounts::default(),
        }
    }

    fn kernel(&mut self, alphas: &[f64], mu: &[f64]) -> Result<Estimate> {
        let uniform = alphas.iter().all(|&a| a == alphas[0]);
        let key: Vec<u64> = if uniform {
            // The common-order kernel is symmetric in μ.
            let mut k: Vec<u64> = mu.iter().map(|m| m.to_bits()).collect();
            k.sort_unstable();
            k.push(alphas[0].to_bits());
            k
        } else {
            alphas
                .iter()
                .zip(mu)
                .flat_map(|(a, m)| [a.to_bits(), m.to_bits()])
                .collect()
        };
        if let Some(hit) = self.cache.get(&key) {
            return Ok(*hit);
        }
        let value = self.evaluate(alphas, mu, uniform)?;
        self.cache.insert(key, value);
        Ok(value)
    }

    fn evaluate(&mut self, alphas: &[f64], mu: &[f64], uniform: bool) -> Result<Estimate> {
        let t = self.t;
        let tol = self.cfg.fallback_tolerance;
        if uniform && special::min_relative_gap(mu) > special::DEGENERACY_TOLERANCE {
            let alpha = alphas[0];
            let x = t.powf(alpha);
            let mut ml = Vec::with_capacity(mu.len());
            for &m in mu {
                let key = (alpha.to_bits(), m.to_bits());
                let v = match self.ml_cache.get(&key) {
                    Some(v) => *v,
                    None => {
                        let v = special::mittag_leffler(alpha, -m * x)?;
                        self.ml_cache.insert(key, v);
                        v
                    }
                };
                ml.push(v);
            }
            let est = special::distinct_combination(mu, &ml);
            if est.error_bound <= tol || !self.cfg.contour_fallback {
                self.counts.distinct += 1;
                return Ok(est);
            }
        }
        let series = special::inv_lt_multi_order(alphas, mu, t, self.cfg.kernel_tolerance);
        match series {
            Ok(est) if est.error_bound <= tol || !self.cfg.contour_fallback => {
                self.counts.series += 1;
                Ok(est)
            }
            Err(e) if !self.cfg.contour_fallback => Err(e),
            _ => {
                self.counts.contour += 1;
                special::inv_lt_kernel_contour(alphas, mu, t)
            }
        }
    }
}

fn check_state(model: &RateModel, n: u64) -> Result<usize> {
    n.checked_sub(model.n0())
        .map(|m| m as usize)
        .ok_or(Error::StateBelowInitial {
            state: n,
            n0: model.n0(),
        })
}

fn check_budget(m: usize, k: usize, budget: u128) -> Result<u128> {
    let count = combinat::theta_count(m, k);
    if count > budget {
        return Err(Error::PatternBudget {
            count,
            limit: budget,
        });
    }
    Ok(count)
}

/// `p(n, t)` for a constant order.
pub fn pmf(model: &RateModel, alpha: f64, n: u64, t: f64) -> Result<Estimate> {
    pmf_with(
        model,
        &OrderSpec::Constant(alpha),
        n,
        t,
        &PmfConfig::default(),
    )
    .map(|e| e.estimate)
}

/// `q(n, t)` for per-state orders.
pub fn pmf_state_dependent(
    model: &RateModel,
    orders: &PerStateOrders,
    n: u64,
    t: f64,
) -> Result<Estimate> {
    pmf_with(
        model,
        &OrderSpec::PerState(orders.clone()),
        n,
        t,
        &PmfConfig::default(),
    )
    .map(|e| e.estimate)
}

/// Pattern-sum evaluation with explicit configuration and diagnostics.
pub fn pmf_with(
    model: &RateModel,
    order: &OrderSpec,
    n: u64,
    t: f64,
    cfg: &PmfConfig,
) -> Result<PmfEvaluation> {
    order.validate()?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "time must be finite and non-negative, got {t}"
        )));
    }
    let m = check_state(model, n)?;
    let n0 = model.n0();
    if m == 0 {
        let alpha = order.order(n0)?;
        let total = model.total_rate(n0)?;
        let v = special::mittag_leffler(alpha, -total.value * t.powf(alpha))?;
        // E_α(-x) has derivative bounded by 1/Γ(1+α) in x.
        let trunc = total.tail_bound * t.powf(alpha) / libm::tgamma(1.0 + alpha);
        return Ok(PmfEvaluation {
            estimate: Estimate::new(v.value, v.error_bound + trunc),
            patterns: 1,
            kernels: KernelCounts::default(),
        });
    }
    let k = model.k().effective(m);
    let patterns = check_budget(m, k, cfg.pattern_budget)?;
    if t == 0.0 {
        return Ok(PmfEvaluation {
            estimate: Estimate::exact(0.0),
            patterns,
            kernels: KernelCounts::default(),
        });
    }
    let lv = levels(model, order, m, k)?;
    let mut engine = KernelEngine::new(cfg, t);
    let mut acc = KahanSum::default();
    let mut err = 0.0;
    let mut mu_buf = Vec::with_capacity(m + 1);
    let mut alpha_buf = Vec::with_capacity(m + 1);
    combinat::for_each_jump_sequence(m, k, |jumps| {
        let mut weight = 1.0;
        let mut level = 0usize;
        mu_buf.clear();
        alpha_buf.clear();
        let mut tail = 0.0;
        for &i in jumps {
            mu_buf.push(lv.mu[level]);
            alpha_buf.push(lv.alphas[level]);
            tail += lv.mu_tail[level];
            weight *= lv.lam[level][i - 1];
            level += i;
        }
        mu_buf.push(lv.mu[m]);
        alpha_buf.push(lv.alphas[m]);
        tail += lv.mu_tail[m];
        let kern = engine.kernel(&alpha_buf, &mu_buf)?;
        acc.add(weight * kern.value);
        err += weight * kern.error_bound;
        if tail > 0.0 {
            // The kernel decreases in each μ with slope at most t^{αn}/Γ(αn+1).
            let a = alpha_buf.iter().copied().fold(0.0, f64::max);
            let e = a * mu_buf.len() as f64;
            let slope = t.powf(e).max(t.powf(e * alpha_buf[0] / a)) / 0.885_603_194_410_888_6;
            err += weight * tail * slope.min(f64::MAX);
        }
        Ok(())
    })?;
    let value = acc.value();
    Ok(PmfEvaluation {
        estimate: Estimate::new(value, err + 4.0 * f64::EPSILON * value.abs()),
        patterns,
        kernels: engine.counts,
    })
}

/// `L[p(n, ·)](s) = s^{α_{n0}-1} Σ_Θ Πλ / Π_{l} (s^{α_l} + μ_l)`.
pub fn pmf_laplace(model: &RateModel, order: &OrderSpec, n: u64, s: f64) -> Result<f64> {
    pmf_laplace_with(model, order, n, s, DEFAULT_PATTERN_BUDGET)
}

pub fn pmf_laplace_with(
    model: &RateModel,
    order: &OrderSpec,
    n: u64,
    s: f64,
    budget: u128,
) -> Result<f64> {
    order.validate()?;
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "Laplace variable must be positive, got {s}"
        )));
    }
    let m = check_state(model, n)?;
    let n0 = model.n0();
    let a0 = order.order(n0)?;
    let lead = s.powf(a0 - 1.0);
    if m == 0 {
        return Ok(lead / (s.powf(a0) + model.total_rate(n0)?.value));
    }
    let k = model.k().effective(m);
    check_budget(m, k, budget)?;
    let lv = levels(model, order, m, k)?;
    let factor: Vec<f64> = (0..=m)
        .map(|j| 1.0 / (s.powf(lv.alphas[j]) + lv.mu[j]))
        .collect();
    let mut acc = KahanSum::default();
    combinat::for_each_jump_sequence(m, k, |jumps| {
        let mut term = factor[m];
        let mut level = 0;
        for &i in jumps {
            term *= lv.lam[level][i - 1] * factor[level];
            level += i;
        }
        acc.add(term);
        Ok(())
    })?;
    Ok(lead * acc.value())
}

/// `Pr{W₁ > t} = E_{α_{n0}}(-μ₀ t^{α_{n0}})`.
pub fn survival_first_wait(model: &RateModel, order: &OrderSpec, t: f64) -> Result<f64> {
    let n0 = model.n0();
    let alpha = order.order(n0)?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "time must be finite and non-negative, got {t}"
        )));
    }
    let mu0 = model.total_rate(n0)?.value;
    Ok(special::mittag_leffler(alpha, -mu0 * t.powf(alpha))?.value)
}

/// Transform-domain values `L[p(n0 + j, ·)](s)` for `j = 0..count` at the
/// given complex points, by `P_j = Σ_i λ(n0+j-i, i) P_{j-i} / (s^{α_j} + μ_j)`.
struct Recursion<'a> {
    model: &'a RateModel,
    order: &'a OrderSpec,
    points: Vec<Complex64>,
    ln_s: Vec<Complex64>,
    history: Vec<Vec<Complex64>>,
}

impl<'a> Recursion<'a> {
    fn new(model: &'a RateModel, order: &'a OrderSpec, points: Vec<Complex64>) -> Self {
        let ln_s = points.iter().map(|s| s.ln()).collect();
        Recursion {
            model,
            order,
            points,
            ln_s,
            history: Vec::new(),
        }
    }

    fn next(&mut self) -> Result<&[Complex64]> {
        let j = self.history.len();
        let n0 = self.model.n0();
        let n = n0 + j as u64;
        let alpha = self.order.order(n)?;
        let total = self.model.total_rate(n)?.value;
        let kmax = self.model.k().effective(j.max(1)).min(j);
        let mut lam = Vec::with_capacity(kmax);
        for i in 1..=kmax {
            lam.push(self.model.rate(n - i as u64, i)?);
        }
        let a0 = self.order.order(n0)?;
        let row: Vec<Complex64> = (0..self.points.len())
            .map(|p| {
                let ln_s = self.ln_s[p];
                let den = (ln_s * alpha).exp() + total;
                if j == 0 {
                    (ln_s * (a0 - 1.0)).exp() / den
                } else {
                    let mut num = Complex64::new(0.0, 0.0);
                    for (idx, &l) in lam.iter().enumerate() {
                        num += self.history[j - idx - 1][p] * l;
                    }
                    num / den
                }
            })
            .collect();
        self.history.push(row);
        Ok(&self.history[j])
    }
}

/// Probabilities of `n0, n0+1, …` at one time from the transform-domain
/// recursion, stopping when the cumulative mass reaches `1 - mass_tol`
/// or `max_states` states were produced. Needs `t > 0`.
pub fn pmf_column_contour(
    model: &RateModel,
    order: &OrderSpec,
    t: f64,
    mass_tol: f64,
    max_states: usize,
) -> Result<Vec<Estimate>> {
    order.validate()?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "contour evaluation needs t > 0, got {t}"
        )));
    }
    let fine = special::contour_nodes(t, special::CONTOUR_NODES);
    let coarse = special::contour_nodes(t, special::CONTOUR_NODES - 8);
    let points: Vec<Complex64> = fine.iter().chain(&coarse).map(|(s, _)| *s).collect();
    let weights: Vec<Complex64> = fine.iter().chain(&coarse).map(|(_, w)| *w).collect();
    let nf = fine.len();
    let mut rec = Recursion::new(model, order, points);
    let mut out = Vec::new();
    let mut mass = KahanSum::default();
    while out.len() < max_states {
        let row = rec.next()?;
        let mut v_fine = KahanSum::default();
        let mut v_coarse = KahanSum::default();
        let mut abs_sum = 0.0;
        for (p, (&f, &w)) in row.iter().zip(&weights).enumerate() {
            let term = (w * f).im;
            abs_sum += term.abs();
            if p < nf {
                v_fine.add(term);
            } else {
                v_coarse.add(term);
            }
        }
        let v = v_fine.value();
        let err = (v - v_coarse.value()).abs() + 16.0 * f64::EPSILON * abs_sum;
        out.push(Estimate::new(v, err));
        mass.add(v);
        if 1.0 - mass.value() <= mass_tol {
            break;
        }
    }
    Ok(out)
}

/// Probabilities of `n0, n0+1, …` at one time for integer order, by
/// uniformization of the chain truncated above the last state (exact for
/// the retained states since the chain only moves up). Grows the state
/// range until the mass target is met or `max_states` is reached.
pub fn pmf_column_uniformized(
    model: &RateModel,
    t: f64,
    mass_tol: f64,
    max_states: usize,
) -> Result<Vec<Estimate>> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "time must be finite and non-negative, got {t}"
        )));
    }
    let mut size = 64usize.min(max_states.max(1));
    loop {
        let col = uniformized(model, t, size)?;
        let mut mass = KahanSum::default();
        for e in &col {
            mass.add(e.value);
        }
        if 1.0 - mass.value() <= mass_tol || size >= max_states {
            let mut acc = KahanSum::default();
            let mut out = Vec::new();
            for e in col {
                acc.add(e.value);
                out.push(e);
                if 1.0 - acc.value() <= mass_tol {
                    break;
                }
            }
            return Ok(out);
        }
        size = (size * 4).min(max_states);
    }
}

fn uniformized(model: &RateModel, t: f64, size: usize) -> Result<Vec<Estimate>> {
    let n0 = model.n0();
    let mut mu = Vec::with_capacity(size);
    let mut lam: Vec<Vec<f64>> = Vec::with_capacity(size);
    for j in 0..size {
        let n = n0 + j as u64;
        mu.push(model.total_rate(n)?.value);
        // Rates into state j from j - i.
        let kmax = model.k().effective(j.max(1)).min(j);
        let row = (1..=kmax)
            .map(|i| model.rate(n - i as u64, i))
            .collect::<Result<Vec<_>>>()?;
        lam.push(row);
    }
    let rate = mu.iter().copied().fold(0.0, f64::max);
    let x = rate * t;
    let mut v = vec![0.0; size];
    v[0] = 1.0;
    let mut out = vec![KahanSum::default(); size];
    if x == 0.0 {
        return Ok(v.into_iter().map(Estimate::exact).collect());
    }
    // Poisson(x) weights by the recurrence from the mode, in log space.
    let ln_w = |k: f64| k * x.ln() - x - libm::lgamma(k + 1.0);
    let mut weight_sum = 0.0;
    let mut k = 0usize;
    let mut next = vec![0.0; size];
    loop {
        let w = ln_w(k as f64).exp();
        weight_sum += w;
        for (o, &p) in out.iter_mut().zip(&v) {
            o.add(w * p);
        }
        if k as f64 > x && 1.0 - weight_sum < 1e-17 {
            break;
        }
        if k > 10 * (x as usize) + 1000 {
            break;
        }
        for j in 0..size {
            let mut acc = v[j] * (1.0 - mu[j] / rate);
            for (idx, &l) in lam[j].iter().enumerate() {
                acc += v[j - idx - 1] * l / rate;
            }
            next[j] = acc;
        }
        std::mem::swap(&mut v, &mut next);
        k += 1;
    }
    let tail = (1.0 - weight_sum).max(0.0);
    let steps = k as f64 + 1.0;
    Ok(out
        .into_iter()
        .map(|o| {
            let val = o.value();
            Estimate::new(
                val,
                tail + 4.0 * steps * f64::EPSILON * val.abs().max(1e-300),
            )
        })
        .collect())
}

fn integer_order(order: &OrderSpec) -> bool {
    match order {
        OrderSpec::Constant(a) => *a == 1.0,
        OrderSpec::PerState(p) => {
            p.default.is_none_or(|a| a == 1.0) && p.orders.values().all(|&a| a == 1.0)
        }
    }
}

/// How [`pmf_table`] evaluates probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// Pattern sums while cheap and accurate, transform recursion beyond.
    Auto,
    /// Pattern sums only; stops at the pattern budget.
    Series,
    /// Transform recursion only.
    Contour,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableConfig {
    pub pmf: PmfConfig,
    pub engine: Engine,
    pub max_states: usize,
    /// In `Auto` mode, pattern sums are used while `|Θ|` stays below this.
    pub series_patterns: u128,
    /// In `Auto` mode, pattern sums are replaced when their bound exceeds this.
    pub series_accuracy: f64,
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig {
            pmf: PmfConfig::default(),
            engine: Engine::Auto,
            max_states: 250_000,
            series_patterns: 20_000,
            series_accuracy: 1e-10,
        }
    }
}

/// Probabilities on a time grid for states `n0, n0+1, …` until the missing
/// mass is at most `mass_tolerance` at every time, or a budget is hit (the
/// table is then flagged, not rejected).
pub fn pmf_table(
    model: &RateModel,
    order: &OrderSpec,
    times: &[f64],
    mass_tolerance: f64,
    cfg: &TableConfig,
) -> Result<PmfTable> {
    order.validate()?;
    if times.is_empty() {
        return Err(Error::Grid("time grid is empty".into()));
    }
    if let Some(bad) = times.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(Error::Grid(format!(
            "times must be finite and non-negative, got {bad}"
        )));
    }
    if !(mass_tolerance > 0.0) {
        return Err(Error::InvalidParameter(
            "mass tolerance must be positive".into(),
        ));
    }
    let n0 = model.n0();
    let mut flags = Vec::new();

    let columns: Vec<(Vec<Estimate>, Option<TableFlag>)> = times
        .par_iter()
        .map(|&t| table_column(model, order, t, mass_tolerance, cfg))
        .collect::<Result<_>>()?;
    let n_states = columns
        .iter()
        .map(|(c, _)| c.len())
        .max()
        .unwrap_or(1)
        .max(1);

    let mut values = vec![vec![0.0; times.len()]; n_states];
    let mut bounds = vec![vec![0.0; times.len()]; n_states];
    for (ti, (col, flag)) in columns.into_iter().enumerate() {
        let mut col = col;
        if col.len() < n_states && times[ti] > 0.0 {
            // Columns that met the mass target early are extended so the
            // table is rectangular.
            let (extra, flag) = extend_column(model, order, times[ti], col.len(), n_states, cfg)?;
            col.extend(extra);
            flags.extend(flag);
        }
        flags.extend(flag);
        for (si, e) in col.iter().enumerate() {
            values[si][ti] = e.value;
            bounds[si][ti] = e.error_bound;
        }
    }
    let mut table = PmfTable::new(n0, times.to_vec(), values, bounds, TableSource::Analytic)?;
    let worst = table
        .deficit()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if worst > mass_tolerance {
        flags.push(TableFlag::StateBudget {
            states: n_states,
            deficit: worst,
        });
    }
    table.flags.extend(flags);
    Ok(table)
}

/// Pattern-sum probabilities for the fixed states `n0..n0 + n_states` on a
/// time grid.
pub fn pmf_states(
    model: &RateModel,
    order: &OrderSpec,
    n_states: usize,
    times: &[f64],
    cfg: &PmfConfig,
) -> Result<PmfTable> {
    order.validate()?;
    if n_states == 0 || times.is_empty() {
        return Err(Error::Grid("need at least one state and one time".into()));
    }
    let n0 = model.n0();
    let rows: Vec<Vec<Estimate>> = (0..n_states)
        .into_par_iter()
        .map(|j| {
            times
                .iter()
                .map(|&t| pmf_with(model, order, n0 + j as u64, t, cfg).map(|e| e.estimate))
                .collect()
        })
        .collect::<Result<_>>()?;
    let values = rows
        .iter()
        .map(|r| r.iter().map(|e| e.value).collect())
        .collect();
    let bounds = rows
        .iter()
        .map(|r| r.iter().map(|e| e.error_bound).collect())
        .collect();
    PmfTable::new(n0, times.to_vec(), values, bounds, TableSource::Analytic)
}

/// Uniformization for integer order, where contour inversion loses accuracy
/// on chains with many widely spread rates; contour recursion otherwise.
fn aggregate_column(
    model: &RateModel,
    order: &OrderSpec,
    t: f64,
    mass_tol: f64,
    max_states: usize,
) -> Result<Vec<Estimate>> {
    if integer_order(order) {
        let mut col = pmf_column_uniformized(model, t, mass_tol, max_states)?;
        if mass_tol == 0.0 {
            col.truncate(max_states);
        }
        Ok(col)
    } else {
        pmf_column_contour(model, order, t, mass_tol, max_states)
    }
}

fn table_column(
    model: &RateModel,
    order: &OrderSpec,
    t: f64,
    mass_tol: f64,
    cfg: &TableConfig,
) -> Result<(Vec<Estimate>, Option<TableFlag>)> {
    if t == 0.0 {
        return Ok((vec![Estimate::exact(1.0)], None));
    }
    match cfg.engine {
        Engine::Contour => Ok((
            pmf_column_contour(model, order, t, mass_tol, cfg.max_states)?,
            None,
        )),
        Engine::Series => series_prefix(model, order, t, mass_tol, cfg.max_states, cfg),
        Engine::Auto => {
            let mut col = aggregate_column(model, order, t, mass_tol, cfg.max_states)?;
            let (prefix, _) = series_prefix(model, order, t, mass_tol, col.len(), cfg)?;
            col[..prefix.len()].copy_from_slice(&prefix);
            Ok((col, None))
        }
    }
}

/// Pattern-sum probabilities from `n0` upward, stopping at the first state
/// that is too expensive or too inaccurate, at `limit` states, or once the
/// mass target is met.
fn series_prefix(
    model: &RateModel,
    order: &OrderSpec,
    t: f64,
    mass_tol: f64,
    limit: usize,
    cfg: &TableConfig,
) -> Result<(Vec<Estimate>, Option<TableFlag>)> {
    let n0 = model.n0();
    let auto = cfg.engine == Engine::Auto;
    let mut out = Vec::new();
    let mut mass = KahanSum::default();
    for j in 0..limit {
        let m = j;
        let k = model.k().effective(m.max(1));
        let count = combinat::theta_count(m, k);
        let budget = if auto {
            cfg.series_patterns.min(cfg.pmf.pattern_budget)
        } else {
            cfg.pmf.pattern_budget
        };
        if m > 0 && count > budget {
            let flag = TableFlag::PatternBudget {
                state: n0 + m as u64,
                patterns: count,
            };
            return Ok((out, Some(flag)));
        }
        let e = pmf_with(model, order, n0 + m as u64, t, &cfg.pmf)?.estimate;
        if auto && e.error_bound > cfg.series_accuracy {
            return Ok((out, None));
        }
        out.push(e);
        mass.add(e.value);
        if !auto && 1.0 - mass.value() <= mass_tol {
            break;
        }
    }
    Ok((out, None))
}

fn extend_column(
    model: &RateModel,
    order: &OrderSpec,
    t: f64,
    from: usize,
    to: usize,
    cfg: &TableConfig,
) -> Result<(Vec<Estimate>, Option<TableFlag>)> {
    if cfg.engine != Engine::Series {
        let col = match cfg.engine {
            Engine::Contour => pmf_column_contour(model, order, t, 0.0, to)?,
            _ => aggregate_column(model, order, t, 0.0, to)?,
        };
        return Ok((col[from..].to_vec(), None));
    }
    let mut out = Vec::with_capacity(to - from);
    for j in from..to {
        match pmf_with(model, order, model.n0() + j as u64, t, &cfg.pmf) {
            Ok(e) => out.push(e.estimate),
            Err(Error::PatternBudget { count, .. }) => {
                out.resize(to - from, Estimate::new(f64::NAN, f64::NAN));
                let flag = TableFlag::PatternBudget {
                    state: model.n0() + j as u64,
                    patterns: count,
                };
                return Ok((out, Some(flag)));
            }
            Err(e) => return Err(e),
        }
    }
    Ok((out, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::JumpBound;

    fn generic() -> RateModel {
        RateModel::from_fn(
            1,
            JumpBound::Finite(2),
            |n, i| if i == 1 { n as f64 } else { 1.0 },
        )
        .unwrap()
    }

    #[test]
    fn initial_conditions() {
        let m = generic();
        assert_eq!(pmf(&m, 0.6, 1, 0.0).unwrap().value, 1.0);
        for n in 2..6 {
            assert_eq!(pmf(&m, 0.6, n, 0.0).unwrap().value, 0.0);
        }
        assert!(matches!(
            pmf(&m, 0.6, 0, 1.0),
            Err(Error::StateBelowInitial { .. })
        ));
    }

    #[test]
    fn poisson_at_order_one() {
        let m = RateModel::tfpp(1.0).unwrap();
        let v = pmf(&m, 1.0, 2, 1.0).unwrap();
        assert!((v.value - (-1.0f64).exp() / 2.0).abs() < 1e-14);
    }

    #[test]
    fn laplace_first_states() {
        let m = generic();
        let (alpha, s) = (0.7, 1.3f64);
        let o = OrderSpec::Constant(alpha);
        let mu0 = 2.0;
        let sa = s.powf(alpha);
        let p0 = pmf_laplace(&m, &o, 1, s).unwrap();
        assert!((p0 - s.powf(alpha - 1.0) / (sa + mu0)).abs() < 1e-15);
        let p1 = pmf_laplace(&m, &o, 2, s).unwrap();
        let want = 1.0 * s.powf(alpha - 1.0) / ((sa + 2.0) * (sa + 3.0));
        assert!((p1 - want).abs() < 1e-15);
    }

    #[test]
    fn path_profile_uses_unit_rate_for_zero_entries() {
        let m = generic();
        let x = JumpPattern::new(vec![1, 2, 0]).unwrap();
        let p = path_rate_profile(&m, &x).unwrap();
        assert_eq!(p.epochs.epochs(), &[0, 1, 3]);
        assert_eq!(p.mu, vec![2.0, 3.0, 5.0]);
        assert_eq!(p.jump_rate_product, 1.0 * 1.0);
    }

    #[test]
    fn pattern_budget_is_enforced() {
        let m = RateModel::gfcp(&[1.0, 1.0]).unwrap();
        let cfg = PmfConfig {
            pattern_budget: 10,
            ..PmfConfig::default()
        };
        let r = pmf_with(&m, &OrderSpec::Constant(0.5), 8, 1.0, &cfg);
        assert!(matches!(
            r,
            Err(Error::PatternBudget {
                count: 34,
                limit: 10
            })
        ));
    }

    #[test]
    fn contour_column_matches_pattern_sums() {
        let m = generic();
        for alpha in [0.5, 0.8, 1.0] {
            let o = OrderSpec::Constant(alpha);
            let col = pmf_column_contour(&m, &o, 1.3, 0.0, 8).unwrap();
            for (j, e) in col.iter().enumerate() {
                let s = pmf(&m, alpha, 1 + j as u64, 1.3).unwrap();
                assert!((e.value - s.value).abs() < 1e-12, "α = {alpha}, j = {j}");
            }
        }
    }

    #[test]
    fn uniformization_matches_pattern_sums() {
        let m = generic();
        let col = pmf_column_uniformized(&m, 1.3, 0.0, 10).unwrap();
        for (j, e) in col.iter().enumerate() {
            let s = pmf(&m, 1.0, 1 + j as u64, 1.3).unwrap();
            assert!((e.value - s.value).abs() < 1e-13, "j = {j}");
        }
        let col = pmf_column_uniformized(&m, 2.0, 1e-6, 10_000).unwrap();
        let mass: f64 = col.iter().map(|e| e.value).sum();
        assert!(1.0 - mass <= 1e-6 && 1.0 - mass > -1e-12);
    }

    #[test]
    fn survival_is_first_state() {
        let m = RateModel::gfcp(&[1.0, 3.0]).unwrap();
        let o = OrderSpec::Constant(0.5);
        let s = survival_first_wait(&m, &o, 2.0).unwrap();
        let want = special::mittag_leffler(0.5, -4.0 * 2f64.sqrt())
            .unwrap()
            .value;
        assert_eq!(s, want);
        assert_eq!(survival_first_wait(&m, &o, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn table_at_zero_is_initial_condition() {
        let m = generic();
        let t = pmf_table(
            &m,
            &OrderSpec::Constant(0.5),
            &[0.0],
            1e-8,
            &TableConfig::default(),
        )
        .unwrap();
        assert_eq!(t.states().count(), 1);
        assert_eq!(t.values[0][0], 1.0);
    }
}
