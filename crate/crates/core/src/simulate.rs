//! Monte Carlo for the birth process: exact trajectories, the Brownian
//! time change at order one half, and empirical distributions.
//!
//! Every random draw goes through ChaCha20 and pure-software `log`, so
//! a given [`RngSpec`] produces the same path on every platform.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rates::{JumpBound, RateModel};
use crate::table::{fmt_f64, PmfTable, TableSource};

/// Explosion guard: paths stop after this many events.
pub const DEFAULT_EVENT_GUARD: usize = 1_000_000;

/// The diffusion `∂u/∂t = ∂²u/∂x²` has unit diffusivity, so its fundamental
/// solution `e^{-x²/4t}/√(4πt)` is Gaussian with variance `2t`.
pub const HEAT_VARIANCE_PER_TIME: f64 = 2.0;

/// Two-sided 99% standard normal quantile.
pub const WILSON_Z_99: f64 = 2.575_829_303_548_901;

/// Paths per RNG substream in ensembles. Fixing the batch size keeps
/// results independent of the number of workers.
pub const PATHS_PER_STREAM: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngSpec {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngSpec { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Uniform on the open interval `(0, 1)` from 53 random bits.
fn open_uniform<R: RngCore>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal quantile, algorithm AS 241 (PPND16), relative accuracy
/// about 1e-16.
#[allow(clippy::excessive_precision, clippy::inconsistent_digit_grouping)]
pub fn inverse_normal_cdf(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2509.080_928_730_122_7 * r + 33430.575_583_588_128) * r
                + 67265.770_927_008_700)
                * r
                + 45921.953_931_549_871)
                * r
                + 13731.693_765_509_461)
                * r
                + 1971.590_950_306_551_3)
                * r
                + 133.141_667_891_784_38)
                * r
                + 3.387_132_872_796_366_5)
            / (((((((5226.495_278_852_545_4 * r + 28729.085_735_721_943) * r
                + 39307.895_800_092_710)
                * r
                + 21213.794_301_586_595)
                * r
                + 5394.196_021_424_751_1)
                * r
                + 687.187_007_492_057_91)
                * r
                + 42.313_330_701_600_911)
                * r
                + 1.0);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-libm::log(tail)).sqrt();
    let value = if r <= 5.0 {
        r -= 1.6;
        (((((((7.745_450_142_783_414_1e-4 * r + 0.022_723_844_989_269_184) * r
            + 0.241_780_725_177_450_61)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691_4)
            * r
            + 4.630_337_846_156_545_3)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_344_9e-4) * r
                + 0.015_198_666_563_616_457)
                * r
                + 0.148_103_976_427_480_07)
                * r
                + 0.689_767_334_985_100_05)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_758_8)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 0.001_242_660_947_388_078_4)
            * r
            + 0.026_532_189_526_576_123)
            * r
            + 0.296_560_571_828_504_89)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114_4)
            * r
            + 6.657_904_643_501_103_8)
            / (((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
                + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_132_6e-4)
                * r
                + 0.014_875_361_290_850_615)
                * r
                + 0.136_929_880_922_735_81)
                * r
                + 0.599_832_206_555_887_94)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    pub n0: u64,
    pub horizon: f64,
    pub events: Vec<Event>,
    /// The path stopped at the event guard before reaching the horizon.
    pub guard_hit: bool,
}

impl SamplePath {
    /// State at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> u64 {
        let idx = self.events.partition_point(|e| e.t <= t);
        if idx == 0 {
            self.n0
        } else {
            self.events[idx - 1].n
        }
    }

    pub fn final_state(&self) -> u64 {
        self.events.last().map_or(self.n0, |e| e.n)
    }

    /// One `{"t": …, "n": …}` object per line.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }
}

/// Cached per-state quantities for jump sampling.
struct StateRates {
    total: f64,
    cumulative: Vec<f64>,
}

struct Sampler<'a> {
    model: &'a RateModel,
    cache: BTreeMap<u64, StateRates>,
}

impl<'a> Sampler<'a> {
    fn new(model: &'a RateModel) -> Self {
        Sampler {
            model,
            cache: BTreeMap::new(),
        }
    }

    fn state(&mut self, n: u64) -> Result<&StateRates> {
        if !self.cache.contains_key(&n) {
            let total = self.model.total_rate(n)?;
            if !(total.value > 0.0 && total.value.is_finite()) {
                return Err(Error::DivergentRates {
                    state: n,
                    terms: total.terms,
                });
            }
            let mut cumulative = Vec::new();
            let mut acc = 0.0;
            match self.model.k() {
                JumpBound::Finite(k) => {
                    for i in 1..=k {
                        acc += self.model.rate(n, i)?;
                        cumulative.push(acc);
                    }
                }
                JumpBound::Unbounded => {
                    // Sum until the remaining mass is negligible.
                    let stop = total.value * (1.0 - self.model.tail_tolerance());
                    let limit = self.model.max_terms().max(1);
                    for i in 1..=limit {
                        acc += self.model.rate(n, i)?;
                        cumulative.push(acc);
                        if acc >= stop || (total.terms > 0 && i >= total.terms) {
                            break;
                        }
                    }
                }
            }
            self.cache.insert(
                n,
                StateRates {
                    total: total.value,
                    cumulative,
                },
            );
        }
        Ok(&self.cache[&n])
    }

    fn holding_time<R: RngCore>(&mut self, n: u64, rng: &mut R) -> Result<f64> {
        let total = self.state(n)?.total;
        Ok(-libm::log(open_uniform(rng)) / total)
    }

    /// Inverse CDF over the jump sizes; mass beyond the summed terms goes to
    /// the largest one.
    fn jump<R: RngCore>(&mut self, n: u64, rng: &mut R) -> Result<usize> {
        let st = self.state(n)?;
        let target = open_uniform(rng) * st.cumulative.last().copied().unwrap_or(st.total);
        let idx = st.cumulative.partition_point(|&c| c < target);
        Ok(idx.min(st.cumulative.len() - 1) + 1)
    }

    fn path<R: RngCore>(&mut self, horizon: f64, guard: usize, rng: &mut R) -> Result<SamplePath> {
        let n0 = self.model.n0();
        let mut n = n0;
        let mut t = 0.0;
        let mut events = Vec::new();
        let mut guard_hit = false;
        loop {
            let wait = self.holding_time(n, rng)?;
            if t + wait > horizon {
                break;
            }
            if events.len() >= guard {
                guard_hit = true;
                break;
            }
            t += wait;
            n += self.jump(n, rng)? as u64;
            events.push(Event { t, n });
        }
        Ok(SamplePath {
            n0,
            horizon,
            events,
            guard_hit,
        })
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if horizon > 0.0 && horizon.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "horizon must be positive and finite, got {horizon}"
        )))
    }
}

/// One trajectory on `[0, horizon]`.
pub fn simulate_gbp(model: &RateModel, horizon: f64, rng: RngSpec) -> Result<SamplePath> {
    simulate_gbp_with(model, horizon, rng, DEFAULT_EVENT_GUARD)
}

pub fn simulate_gbp_with(
    model: &RateModel,
    horizon: f64,
    rng: RngSpec,
    guard: usize,
) -> Result<SamplePath> {
    check_horizon(horizon)?;
    Sampler::new(model).path(horizon, guard, &mut rng.rng())
}

/// Holding times at state `n`, drawn exactly as trajectories draw them.
pub fn holding_times(model: &RateModel, n: u64, count: usize, rng: RngSpec) -> Result<Vec<f64>> {
    let mut sampler = Sampler::new(model);
    let mut r = rng.rng();
    (0..count)
        .map(|_| sampler.holding_time(n, &mut r))
        .collect()
}

/// A draw of the process of order one half at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeChangedSample {
    /// The random clock `|G|`, `G ~ N(0, 2t)`.
    pub tau: f64,
    pub state: u64,
    pub guard_hit: bool,
}

fn draw_clock<R: RngCore>(t: f64, rng: &mut R) -> f64 {
    let g = inverse_normal_cdf(open_uniform(rng));
    g.abs() * (HEAT_VARIANCE_PER_TIME * t).sqrt()
}

fn time_changed<R: RngCore>(
    sampler: &mut Sampler<'_>,
    t: f64,
    guard: usize,
    rng: &mut R,
) -> Result<TimeChangedSample> {
    let tau = draw_clock(t, rng);
    if tau == 0.0 {
        return Ok(TimeChangedSample {
            tau,
            state: sampler.model.n0(),
            guard_hit: false,
        });
    }
    let path = sampler.path(tau, guard, rng)?;
    Ok(TimeChangedSample {
        tau,
        state: path.final_state(),
        guard_hit: path.guard_hit,
    })
}

/// The state of the order-one-half process at time `t`, sampled as the
/// ordinary process at the reflected Brownian time `|B(t)|`.
pub fn sample_gfbp_half(model: &RateModel, t: f64, rng: RngSpec) -> Result<TimeChangedSample> {
    check_horizon(t)?;
    time_changed(
        &mut Sampler::new(model),
        t,
        DEFAULT_EVENT_GUARD,
        &mut rng.rng(),
    )
}

/// Random clock values alone, for checking the heat-kernel variance.
pub fn sample_clock(t: f64, count: usize, rng: RngSpec) -> Result<Vec<f64>> {
    check_horizon(t)?;
    let mut r = rng.rng();
    Ok((0..count).map(|_| draw_clock(t, &mut r)).collect())
}

/// Runs `count` independent draws in batches of [`PATHS_PER_STREAM`], batch
/// `b` on stream `b` of `seed`, and concatenates in batch order.
fn ensemble<T, F>(count: usize, seed: u64, model: &RateModel, draw: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut Sampler<'_>, &mut ChaCha20Rng) -> Result<T> + Sync,
{
    let batches = count.div_ceil(PATHS_PER_STREAM);
    let chunks: Vec<Vec<T>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = RngSpec::new(seed, b as u64).rng();
            let mut sampler = Sampler::new(model);
            let size = PATHS_PER_STREAM.min(count - b * PATHS_PER_STREAM);
            (0..size).map(|_| draw(&mut sampler, &mut rng)).collect()
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Full trajectories for an ensemble.
pub fn simulate_ensemble(
    model: &RateModel,
    horizon: f64,
    paths: usize,
    seed: u64,
) -> Result<Vec<SamplePath>> {
    check_horizon(horizon)?;
    ensemble(paths, seed, model, |s, r| {
        s.path(horizon, DEFAULT_EVENT_GUARD, r)
    })
}

/// States of an ensemble at each requested time.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSamples {
    pub times: Vec<f64>,
    /// `states[i][p]`: state of path `p` at `times[i]`.
    pub states: Vec<Vec<u64>>,
    pub guard_hits: usize,
}

/// Simulates `paths` trajectories to the largest time and records the state
/// at every requested time.
pub fn ensemble_states(
    model: &RateModel,
    times: &[f64],
    paths: usize,
    seed: u64,
) -> Result<StateSamples> {
    let horizon = times.iter().copied().fold(f64::NAN, f64::max);
    check_horizon(horizon)?;
    if times.iter().any(|&t| t < 0.0) {
        return Err(Error::InvalidParameter(
            "sample times must be non-negative".into(),
        ));
    }
    let rows = ensemble(paths, seed, model, |s, r| {
        let p = s.path(horizon, DEFAULT_EVENT_GUARD, r)?;
        Ok((
            times.iter().map(|&t| p.state_at(t)).collect::<Vec<_>>(),
            p.guard_hit,
        ))
    })?;
    let guard_hits = rows.iter().filter(|r| r.1).count();
    let states = (0..times.len())
        .map(|i| rows.iter().map(|r| r.0[i]).collect())
        .collect();
    Ok(StateSamples {
        times: times.to_vec(),
        states,
        guard_hits,
    })
}

/// Order-one-half draws at time `t` for an ensemble.
pub fn sample_gfbp_half_ensemble(
    model: &RateModel,
    t: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<TimeChangedSample>> {
    check_horizon(t)?;
    ensemble(samples, seed, model, |s, r| {
        time_changed(s, t, DEFAULT_EVENT_GUARD, r)
    })
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Relative frequencies over a contiguous state range with Wilson 99%
/// intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalPmf {
    /// Smallest observed state.
    pub n_min: u64,
    pub samples: u64,
    pub counts: Vec<u64>,
    pub p: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

pub fn empirical_pmf(samples: &[u64]) -> Result<EmpiricalPmf> {
    let (&lo, &hi) = match (samples.iter().min(), samples.iter().max()) {
        (Some(lo), Some(hi)) => (lo, hi),
        _ => {
            return Err(Error::InvalidParameter(
                "an empirical pmf needs at least one sample".into(),
            ))
        }
    };
    let mut counts = vec![0u64; (hi - lo + 1) as usize];
    for &s in samples {
        counts[(s - lo) as usize] += 1;
    }
    let total = samples.len() as u64;
    let p = counts.iter().map(|&c| c as f64 / total as f64).collect();
    let (lower, upper) = counts
        .iter()
        .map(|&c| wilson_interval(c, total, WILSON_Z_99))
        .unzip();
    Ok(EmpiricalPmf {
        n_min: lo,
        samples: total,
        counts,
        p,
        lower,
        upper,
    })
}

impl EmpiricalPmf {
    /// Frequency of state `n`, zero outside the observed range.
    pub fn prob(&self, n: u64) -> f64 {
        n.checked_sub(self.n_min)
            .and_then(|i| self.p.get(i as usize))
            .copied()
            .unwrap_or(0.0)
    }

    /// Wilson interval of state `n`, including unobserved states.
    pub fn interval(&self, n: u64) -> (f64, f64) {
        match n.checked_sub(self.n_min).map(|i| i as usize) {
            Some(i) if i < self.counts.len() => (self.lower[i], self.upper[i]),
            _ => wilson_interval(0, self.samples, WILSON_Z_99),
        }
    }

    pub fn n_max(&self) -> u64 {
        self.n_min + self.counts.len() as u64 - 1
    }

    /// One-column table from `n0`; the error bound is the larger Wilson
    /// half-width.
    pub fn to_table(&self, n0: u64, t: f64) -> Result<PmfTable> {
        if self.n_min < n0 {
            return Err(Error::StateBelowInitial {
                state: self.n_min,
                n0,
            });
        }
        let states = n0..=self.n_max();
        let values = states.clone().map(|n| vec![self.prob(n)]).collect();
        let bounds = states
            .map(|n| {
                let (lo, hi) = self.interval(n);
                let p = self.prob(n);
                vec![(p - lo).max(hi - p)]
            })
            .collect();
        PmfTable::new(n0, vec![t], values, bounds, TableSource::Empirical)
    }

    /// `n,count,p,lower,upper` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,count,p,lower,upper\n");
        for (i, &c) in self.counts.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                self.n_min + i as u64,
                c,
                fmt_f64(self.p[i]),
                fmt_f64(self.lower[i]),
                fmt_f64(self.upper[i])
            );
        }
        out
    }
}

/// `½ Σ_n |p(n) - q(n)|` for an empirical pmf against a reference.
pub fn tv_distance<F: Fn(u64) -> f64>(
    emp: &EmpiricalPmf,
    reference: F,
    n_lo: u64,
    n_hi: u64,
) -> f64 {
    let lo = n_lo.min(emp.n_min);
    let hi = n_hi.max(emp.n_max());
    0.5 * (lo..=hi)
        .map(|n| (emp.prob(n) - reference(n)).abs())
        .sum::<f64>()
}

/// Kolmogorov–Smirnov statistic against `Exponential(rate)` and its
/// asymptotic p-value.
pub fn ks_exponential(samples: &[f64], rate: f64) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = 1.0 - (-rate * x).exp();
            (cdf - i as f64 / n).max((i + 1) as f64 / n - cdf)
        })
        .fold(0.0, f64::max);
    let sq = n.sqrt();
    (d, kolmogorov_q((sq + 0.12 + 0.11 / sq) * d))
}

/// `P(K > x)` for the Kolmogorov distribution.
fn kolmogorov_q(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = 2.0 * (-2.0 * jf * jf * x * x).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}
