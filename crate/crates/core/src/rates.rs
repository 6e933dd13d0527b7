//! Rate models `λ(n, i)`: jump of size `i` out of state `n`.
//!
//! A [`RateModel`] is an immutable evaluation function plus the document it
//! was built from. Models with unbounded jump sizes are summed numerically
//! (or in closed form where a preset knows it) when a total rate is needed.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::expr::Formula;

pub const DEFAULT_TAIL_TOLERANCE: f64 = 1e-12;
pub const DEFAULT_MAX_TERMS: usize = 1_000_000;

/// Largest jump size: a finite `k` or no upper limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JumpBound {
    Finite(usize),
    Unbounded,
}

impl JumpBound {
    /// Largest jump that can occur within `m` levels.
    pub fn effective(self, m: usize) -> usize {
        match self {
            JumpBound::Finite(k) => k.min(m),
            JumpBound::Unbounded => m,
        }
    }

    pub fn allows(self, i: usize) -> bool {
        match self {
            JumpBound::Finite(k) => i <= k,
            JumpBound::Unbounded => true,
        }
    }
}

impl fmt::Display for JumpBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JumpBound::Finite(k) => write!(f, "{k}"),
            JumpBound::Unbounded => f.write_str("unbounded"),
        }
    }
}

impl Serialize for JumpBound {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            JumpBound::Finite(k) => s.serialize_u64(*k as u64),
            JumpBound::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

impl<'de> Deserialize<'de> for JumpBound {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(0) => Err(serde::de::Error::custom("k must be at least 1")),
            Raw::Int(k) => Ok(JumpBound::Finite(k as usize)),
            Raw::Text(t) if t == "unbounded" => Ok(JumpBound::Unbounded),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "k must be a positive integer or \"unbounded\", got {t:?}"
            ))),
        }
    }
}

/// A parameter sequence given either explicitly or as a formula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sequence {
    List(Vec<f64>),
    Formula(String),
}

/// Named special cases of the process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "lowercase")]
pub enum Preset {
    /// Time-fractional Poisson: `n0 = 0`, `k = 1`, `λ(n, 1) = λ`.
    Tfpp { lambda: f64 },
    /// Fractional pure birth: `n0 = 1`, `k = 1`, `λ(n, 1) = λ_n`; a formula is in `n`.
    Fpbp { rates: Sequence },
    /// Generalized fractional counting: `n0 = 0`, `λ(n, i) = λ_i`.
    Gfcp { lambdas: Vec<f64> },
    /// Convoluted fractional Poisson: `λ(n, i) = β_{i-1} - β_i`; a formula is in `i`.
    Cfpp { betas: Sequence },
    /// Space-time fractional Poisson: `λ(n, i) = (-1)^{i+1} λ^β C(β, i)`.
    Stfpp { lambda: f64, beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtensionPolicy {
    Error,
    RepeatLastRow,
}

/// Where the rates come from; this is what a model document stores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RateSource {
    Preset(Preset),
    Table {
        rates: Vec<Vec<f64>>,
        extension: ExtensionPolicy,
    },
    Formula {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rate: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rates: Option<Vec<String>>,
    },
    #[serde(skip)]
    Custom,
}

/// JSON form of a rate model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n0: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<JumpBound>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_tolerance: Option<f64>,
    #[serde(flatten)]
    pub source: RateSource,
}

type RateFn = dyn Fn(u64, usize) -> Option<f64> + Send + Sync;
type TotalFn = dyn Fn(u64) -> f64 + Send + Sync;

/// Jump rates `λ(n, i)` for `n ≥ n0`, `1 ≤ i ≤ k`.
#[derive(Clone)]
pub struct RateModel {
    n0: u64,
    k: JumpBound,
    tail_tolerance: f64,
    max_terms: usize,
    source: RateSource,
    rate_fn: Arc<RateFn>,
    exact_total: Option<Arc<TotalFn>>,
}

impl fmt::Debug for RateModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RateModel")
            .field("n0", &self.n0)
            .field("k", &self.k)
            .field("tail_tolerance", &self.tail_tolerance)
            .field("source", &self.source)
            .finish()
    }
}

/// Sum of the jump rates out of one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TotalRate {
    pub value: f64,
    /// Estimated size of the discarded tail (zero for finite `k` or closed forms).
    pub tail_bound: f64,
    /// Number of rate terms summed.
    pub terms: usize,
}

impl RateModel {
    /// Builds a model from an arbitrary rate function. Such models cannot be
    /// serialized.
    pub fn from_fn<F>(n0: u64, k: JumpBound, f: F) -> Result<Self>
    where
        F: Fn(u64, usize) -> f64 + Send + Sync + 'static,
    {
        if k == JumpBound::Finite(0) {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        Ok(RateModel {
            n0,
            k,
            tail_tolerance: DEFAULT_TAIL_TOLERANCE,
            max_terms: DEFAULT_MAX_TERMS,
            source: RateSource::Custom,
            rate_fn: Arc::new(move |n, i| Some(f(n, i))),
            exact_total: None,
        })
    }

    pub fn tfpp(lambda: f64) -> Result<Self> {
        Self::preset(Preset::Tfpp { lambda })
    }

    pub fn gfcp(lambdas: &[f64]) -> Result<Self> {
        Self::preset(Preset::Gfcp {
            lambdas: lambdas.to_vec(),
        })
    }

    pub fn fpbp(rates: Sequence) -> Result<Self> {
        Self::preset(Preset::Fpbp { rates })
    }

    pub fn cfpp(betas: Sequence) -> Result<Self> {
        Self::preset(Preset::Cfpp { betas })
    }

    pub fn stfpp(lambda: f64, beta: f64) -> Result<Self> {
        Self::preset(Preset::Stfpp { lambda, beta })
    }

    pub fn preset(preset: Preset) -> Result<Self> {
        let source = RateSource::Preset(preset.clone());
        let base = |n0, k, rate_fn: Arc<RateFn>| RateModel {
            n0,
            k,
            tail_tolerance: DEFAULT_TAIL_TOLERANCE,
            max_terms: DEFAULT_MAX_TERMS,
            source: source.clone(),
            rate_fn,
            exact_total: None,
        };
        match preset {
            Preset::Tfpp { lambda } => {
                require_positive("TFPP λ", lambda)?;
                Ok(base(
                    0,
                    JumpBound::Finite(1),
                    Arc::new(move |_, _| Some(lambda)),
                ))
            }
            Preset::Fpbp { rates } => {
                let f: Arc<RateFn> = match rates {
                    Sequence::List(list) => {
                        if list.is_empty() {
                            return Err(Error::InvalidParameter(
                                "FPBP needs at least one rate".into(),
                            ));
                        }
                        for (j, &l) in list.iter().enumerate() {
                            require_positive(&format!("FPBP λ_{}", j + 1), l)?;
                        }
                        Arc::new(move |n, _| list.get((n as usize).checked_sub(1)?).copied())
                    }
                    Sequence::Formula(src) => {
                        let formula = Formula::parse(&src)?;
                        Arc::new(move |n, _| Some(formula.eval(n as f64, 1.0)))
                    }
                };
                Ok(base(1, JumpBound::Finite(1), f))
            }
            Preset::Gfcp { lambdas } => {
                if lambdas.is_empty() {
                    return Err(Error::InvalidParameter(
                        "GFCP needs at least one rate λ_1".into(),
                    ));
                }
                for (j, &l) in lambdas.iter().enumerate() {
                    require_positive(&format!("GFCP λ_{}", j + 1), l)?;
                }
                let k = lambdas.len();
                Ok(base(
                    0,
                    JumpBound::Finite(k),
                    Arc::new(move |_, i| lambdas.get(i - 1).copied()),
                ))
            }
            Preset::Cfpp { betas } => {
                let Sequence::Formula(src) = betas else {
                    return Err(Error::InvalidParameter(
                        "CFPP needs an infinite β sequence: give β_i as a formula in i".into(),
                    ));
                };
                let formula = Formula::parse(&src)?;
                let beta = move |i: usize| formula.eval(0.0, i as f64);
                let beta0 = beta(0);
                require_positive("CFPP β_0", beta0)?;
                // β must decrease strictly to zero fast enough for the
                // telescoping sum to converge within the term budget.
                let mut prev = beta0;
                let mut i = 1;
                loop {
                    let b = beta(i);
                    if !(b > 0.0 && b.is_finite()) {
                        return Err(Error::InvalidParameter(format!(
                            "CFPP requires β_i > 0 for all i; β_{i} = {b}"
                        )));
                    }
                    if b >= prev {
                        return Err(Error::InvalidParameter(format!(
                            "CFPP requires β_i > β_(i+1); β_{} = {prev} ≤ β_{i} = {b}",
                            i - 1
                        )));
                    }
                    if b < DEFAULT_TAIL_TOLERANCE * beta0 {
                        break;
                    }
                    if i >= DEFAULT_MAX_TERMS {
                        return Err(Error::InvalidParameter(format!(
                            "CFPP requires lim β_(i+1)/β_i < 1; ratio is {} after {i} terms",
                            b / prev
                        )));
                    }
                    prev = b;
                    i += 1;
                }
                let mut m = base(
                    0,
                    JumpBound::Unbounded,
                    Arc::new(move |_, i| Some(beta(i - 1) - beta(i))),
                );
                m.exact_total = Some(Arc::new(move |_| beta0));
                Ok(m)
            }
            Preset::Stfpp { lambda, beta } => {
                require_positive("STFPP λ", lambda)?;
                if !(beta > 0.0 && beta <= 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "STFPP requires β in (0, 1]; got {beta}"
                    )));
                }
                if beta == 1.0 {
                    // Every binomial term with i ≥ 2 vanishes.
                    return Ok(base(
                        0,
                        JumpBound::Finite(1),
                        Arc::new(move |_, _| Some(lambda)),
                    ));
                }
                let scale = libm::pow(lambda, beta);
                for i in 1..=1000 {
                    let c = stfpp_coefficient(beta, i);
                    if !(c > 0.0 && c.is_finite()) {
                        return Err(Error::InvalidParameter(format!(
                            "STFPP coefficient {i} is not positive ({c}) for β = {beta}"
                        )));
                    }
                }
                let mut m = base(
                    0,
                    JumpBound::Unbounded,
                    Arc::new(move |_, i| Some(scale * stfpp_coefficient(beta, i))),
                );
                m.exact_total = Some(Arc::new(move |_| scale));
                Ok(m)
            }
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        let mut model = match &doc.source {
            RateSource::Preset(p) => {
                let m = Self::preset(p.clone())?;
                if let Some(n0) = doc.n0 {
                    if n0 != m.n0 {
                        return Err(Error::Document(format!(
                            "preset fixes n0 = {}, document says {n0}",
                            m.n0
                        )));
                    }
                }
                if let Some(k) = doc.k {
                    if k != m.k {
                        return Err(Error::Document(format!(
                            "preset fixes k = {}, document says {k}",
                            m.k
                        )));
                    }
                }
                m
            }
            RateSource::Table { rates, extension } => {
                let n0 = doc
                    .n0
                    .ok_or_else(|| Error::Document("table models need n0".into()))?;
                let width = rates.first().map(Vec::len).unwrap_or(0);
                if width == 0 {
                    return Err(Error::Document("rate table is empty".into()));
                }
                let k = doc.k.unwrap_or(JumpBound::Finite(width));
                if k != JumpBound::Finite(width) {
                    return Err(Error::Document(format!(
                        "table rows have {width} columns but k = {k}"
                    )));
                }
                for (r, row) in rates.iter().enumerate() {
                    if row.len() != width {
                        return Err(Error::Document(format!(
                            "rate table is not rectangular: row {r} has {} entries, expected {width}",
                            row.len()
                        )));
                    }
                    for (c, &v) in row.iter().enumerate() {
                        require_positive(
                            &format!("table rate λ({}, {})", n0 + r as u64, c + 1),
                            v,
                        )?;
                    }
                }
                let rows = rates.clone();
                let ext = *extension;
                RateModel {
                    n0,
                    k,
                    tail_tolerance: DEFAULT_TAIL_TOLERANCE,
                    max_terms: DEFAULT_MAX_TERMS,
                    source: doc.source.clone(),
                    rate_fn: Arc::new(move |n, i| {
                        let r = (n - n0) as usize;
                        let row = match rows.get(r) {
                            Some(row) => row,
                            None if ext == ExtensionPolicy::RepeatLastRow => rows.last()?,
                            None => return None,
                        };
                        row.get(i - 1).copied()
                    }),
                    exact_total: None,
                }
            }
            RateSource::Formula { rate, rates } => {
                let n0 = doc
                    .n0
                    .ok_or_else(|| Error::Document("formula models need n0".into()))?;
                let rate_fn: Arc<RateFn>;
                let k;
                match (rate, rates) {
                    (Some(src), None) => {
                        let f = Formula::parse(src)?;
                        k = doc.k.ok_or_else(|| {
                            Error::Document("a single rate formula needs k".into())
                        })?;
                        rate_fn = Arc::new(move |n, i| Some(f.eval(n as f64, i as f64)));
                    }
                    (None, Some(list)) => {
                        if list.is_empty() {
                            return Err(Error::Document("rates list is empty".into()));
                        }
                        let fs = list
                            .iter()
                            .map(|s| Formula::parse(s))
                            .collect::<Result<Vec<_>>>()?;
                        k = JumpBound::Finite(fs.len());
                        if let Some(dk) = doc.k {
                            if dk != k {
                                return Err(Error::Document(format!(
                                    "{} rate formulas given but k = {dk}",
                                    fs.len()
                                )));
                            }
                        }
                        rate_fn = Arc::new(move |n, i| Some(fs[i - 1].eval(n as f64, i as f64)));
                    }
                    _ => {
                        return Err(Error::Document(
                            "formula models need exactly one of `rate` or `rates`".into(),
                        ))
                    }
                }
                RateModel {
                    n0,
                    k,
                    tail_tolerance: DEFAULT_TAIL_TOLERANCE,
                    max_terms: DEFAULT_MAX_TERMS,
                    source: doc.source.clone(),
                    rate_fn,
                    exact_total: None,
                }
            }
            RateSource::Custom => {
                return Err(Error::Document(
                    "custom rate functions have no document".into(),
                ))
            }
        };
        if let Some(tol) = doc.tail_tolerance {
            model = model.with_tail_tolerance(tol)?;
        }
        Ok(model)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }

    pub fn to_document(&self) -> Result<ModelDocument> {
        if self.source == RateSource::Custom {
            return Err(Error::Document(
                "custom rate functions cannot be serialized".into(),
            ));
        }
        Ok(ModelDocument {
            n0: Some(self.n0),
            k: Some(self.k),
            tail_tolerance: (self.tail_tolerance != DEFAULT_TAIL_TOLERANCE)
                .then_some(self.tail_tolerance),
            source: self.source.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document()?)?)
    }

    pub fn with_tail_tolerance(mut self, tol: f64) -> Result<Self> {
        require_positive("tail tolerance", tol)?;
        self.tail_tolerance = tol;
        Ok(self)
    }

    pub fn with_max_terms(mut self, max_terms: usize) -> Self {
        self.max_terms = max_terms.max(1);
        self
    }

    pub fn n0(&self) -> u64 {
        self.n0
    }

    pub fn k(&self) -> JumpBound {
        self.k
    }

    pub fn tail_tolerance(&self) -> f64 {
        self.tail_tolerance
    }

    pub fn max_terms(&self) -> usize {
        self.max_terms
    }

    pub fn source(&self) -> &RateSource {
        &self.source
    }

    /// `λ(n, i)`; errors unless the rate is defined, finite and positive.
    pub fn rate(&self, n: u64, i: usize) -> Result<f64> {
        if n < self.n0 {
            return Err(Error::StateBelowInitial {
                state: n,
                n0: self.n0,
            });
        }
        if i == 0 || !self.k.allows(i) {
            return Err(Error::RateUndefined {
                state: n,
                jump: i,
                reason: format!("jump size must lie in 1..={}", self.k),
            });
        }
        match (self.rate_fn)(n, i) {
            Some(v) if v > 0.0 && v.is_finite() => Ok(v),
            Some(v) => Err(Error::RateUndefined {
                state: n,
                jump: i,
                reason: format!("rate must be finite and positive, got {v}"),
            }),
            None => Err(Error::RateUndefined {
                state: n,
                jump: i,
                reason: "outside the supplied rates".into(),
            }),
        }
    }

    /// `Σ_i λ(n, i)`.
    pub fn total_rate(&self, n: u64) -> Result<TotalRate> {
        match self.k {
            JumpBound::Finite(k) => {
                let mut sum = 0.0;
                for i in 1..=k {
                    sum += self.rate(n, i)?;
                }
                Ok(TotalRate {
                    value: sum,
                    tail_bound: 0.0,
                    terms: k,
                })
            }
            JumpBound::Unbounded => {
                if n < self.n0 {
                    return Err(Error::StateBelowInitial {
                        state: n,
                        n0: self.n0,
                    });
                }
                match &self.exact_total {
                    Some(total) => Ok(TotalRate {
                        value: total(n),
                        tail_bound: 0.0,
                        terms: 0,
                    }),
                    None => self.truncated_rate_sum(n),
                }
            }
        }
    }

    /// Numerically truncated `Σ_i λ(n, i)` for unbounded `k`, ignoring any
    /// closed form. Stops once a term is below `tail_tolerance` times the
    /// running sum while terms decrease.
    pub fn truncated_rate_sum(&self, n: u64) -> Result<TotalRate> {
        let mut sum = 0.0;
        let mut comp = 0.0;
        let mut prev = f64::INFINITY;
        for i in 1..=self.max_terms {
            let term = self.rate(n, i)?;
            let y = term - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
            if term < prev && term < self.tail_tolerance * sum {
                let ratio = term / prev;
                let tail_bound = if ratio < 1.0 {
                    term * ratio / (1.0 - ratio)
                } else {
                    f64::INFINITY
                };
                return Ok(TotalRate {
                    value: sum,
                    tail_bound,
                    terms: i,
                });
            }
            prev = term;
        }
        Err(Error::DivergentRates {
            state: n,
            terms: self.max_terms,
        })
    }
}

fn require_positive(what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{what} must be finite and positive, got {v}"
        )))
    }
}

/// `(-1)^{i+1} β(β-1)⋯(β-i+1)/i! = β Γ(i-β) / (Γ(1-β) Γ(i+1))` for `0 < β < 1`.
fn stfpp_coefficient(beta: f64, i: usize) -> f64 {
    if i == 1 {
        return beta;
    }
    let ln =
        libm::lgamma(i as f64 - beta) - libm::lgamma(i as f64 + 1.0) - libm::lgamma(1.0 - beta);
    beta * ln.exp()
}

/// Classification of the non-explosion series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Explosion {
    NonExploding,
    PossiblyExploding,
    Inconclusive,
}

/// Thresholds for [`explosion_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplosionConfig {
    /// Fitted exponent `γ` in `S_M ~ M^γ` at or above which the series is
    /// declared divergent.
    pub growth_threshold: f64,
    /// Last increment below which the series is declared convergent.
    pub increment_tolerance: f64,
    /// Fitted decay exponent `p` of the increments (`a_m ~ m^{-p}`) at or
    /// above which the series is declared convergent.
    pub decay_threshold: f64,
}

impl Default for ExplosionConfig {
    fn default() -> Self {
        ExplosionConfig {
            growth_threshold: 0.5,
            increment_tolerance: 1e-10,
            decay_threshold: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplosionReport {
    pub verdict: Explosion,
    /// `S_M` for `M = 0, 1, …`, i.e. partial sums starting at `m = n0`.
    pub partial_sums: Vec<f64>,
    pub growth_exponent: f64,
    pub decay_exponent: f64,
}

/// Increment of the non-explosion series at level `m`:
/// `(Σ_{i=1}^{k} Σ_{j=1}^{i} λ(m-j+1, i)²)^{-1/2}`, skipping states below `n0`.
pub fn explosion_increment(model: &RateModel, m: u64) -> Result<f64> {
    let n0 = model.n0();
    let mut acc = 0.0;
    let mut i = 1usize;
    let mut prev_block = f64::INFINITY;
    loop {
        match model.k() {
            JumpBound::Finite(k) if i > k => break,
            _ => {}
        }
        let mut block = 0.0;
        for j in 1..=i {
            let Some(state) = (m + 1).checked_sub(j as u64) else {
                break;
            };
            if state < n0 {
                break;
            }
            let r = model.rate(state, i)?;
            block += r * r;
        }
        acc += block;
        if model.k() == JumpBound::Unbounded {
            if block < prev_block && block < model.tail_tolerance() * acc {
                break;
            }
            if i >= model.max_terms() {
                return Err(Error::DivergentRates { state: m, terms: i });
            }
        }
        prev_block = block;
        i += 1;
    }
    Ok(1.0 / acc.sqrt())
}

/// Partial sums of the non-explosion series over `m = n0, …, n0 + terms`
/// and a heuristic classification. A finite trace can never prove
/// divergence or convergence, so the full trace is returned with the verdict.
pub fn explosion_check(
    model: &RateModel,
    terms: usize,
    config: &ExplosionConfig,
) -> Result<ExplosionReport> {
    if terms < 1 {
        return Err(Error::InvalidParameter(
            "explosion check needs at least one term".into(),
        ));
    }
    let n0 = model.n0();
    let mut partial_sums = Vec::with_capacity(terms + 1);
    let mut increments = Vec::with_capacity(terms + 1);
    let mut s = 0.0;
    for m in n0..=n0 + terms as u64 {
        let a = explosion_increment(model, m)?;
        s += a;
        increments.push(a);
        partial_sums.push(s);
    }
    let half = partial_sums.len() / 2;
    let xs: Vec<f64> = (half..partial_sums.len())
        .map(|idx| ((idx + 1) as f64).ln())
        .collect();
    let growth_exponent = slope(
        &xs,
        &partial_sums[half..]
            .iter()
            .map(|s| s.ln())
            .collect::<Vec<_>>(),
    );
    let decay_exponent = -slope(
        &xs,
        &increments[half..]
            .iter()
            .map(|a| a.ln())
            .collect::<Vec<_>>(),
    );
    let last_increment = *increments.last().unwrap_or(&0.0);
    let verdict = if growth_exponent >= config.growth_threshold {
        Explosion::NonExploding
    } else if last_increment < config.increment_tolerance
        || decay_exponent >= config.decay_threshold
    {
        Explosion::PossiblyExploding
    } else {
        Explosion::Inconclusive
    };
    Ok(ExplosionReport {
        verdict,
        partial_sums,
        growth_exponent,
        decay_exponent,
    })
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tfpp_preset() {
        let m = RateModel::tfpp(2.0).unwrap();
        assert_eq!(m.n0(), 0);
        assert_eq!(m.k(), JumpBound::Finite(1));
        assert_eq!(m.rate(7, 1).unwrap(), 2.0);
        assert_eq!(m.total_rate(5).unwrap().value, 2.0);
        assert!(m.rate(0, 2).is_err());
    }

    #[test]
    fn gfcp_preset() {
        let m = RateModel::gfcp(&[1.0, 3.0]).unwrap();
        assert_eq!(m.n0(), 0);
        assert_eq!(m.k(), JumpBound::Finite(2));
        assert_eq!(m.rate(0, 1).unwrap(), 1.0);
        assert_eq!(m.rate(0, 2).unwrap(), 3.0);
        assert_eq!(m.total_rate(0).unwrap().value, 4.0);
    }

    #[test]
    fn stfpp_beta_one_collapses_to_tfpp() {
        let m = RateModel::stfpp(1.0, 1.0).unwrap();
        assert_eq!(m.k(), JumpBound::Finite(1));
        assert_eq!(m.rate(3, 1).unwrap(), 1.0);
        assert!(m.rate(3, 2).is_err());
    }

    #[test]
    fn stfpp_coefficients_match_falling_factorial() {
        let (lambda, beta) = (2.0_f64, 0.4);
        let m = RateModel::stfpp(lambda, beta).unwrap();
        let mut falling = 1.0;
        let mut fact = 1.0;
        for i in 1..=12usize {
            falling *= beta - (i as f64 - 1.0);
            fact *= i as f64;
            let sign = if (i + 1) % 2 == 0 { 1.0 } else { -1.0 };
            let expected = sign * lambda.powf(beta) * falling / fact;
            let got = m.rate(0, i).unwrap();
            assert!(
                (got - expected).abs() <= 1e-13 * expected,
                "i={i}: {got} vs {expected}"
            );
        }
        assert!((m.total_rate(4).unwrap().value - lambda.powf(beta)).abs() < 1e-15);
    }

    #[test]
    fn cfpp_telescopes_to_beta0() {
        let m = RateModel::cfpp(Sequence::Formula("2^(0-i)".into())).unwrap();
        assert_eq!(m.k(), JumpBound::Unbounded);
        for n in [0, 3, 17] {
            let t = m.truncated_rate_sum(n).unwrap();
            assert!((t.value - 1.0).abs() < 1e-11, "{t:?}");
            assert!(t.tail_bound < 1e-11);
            assert!((m.total_rate(n).unwrap().value - 1.0).abs() < 1e-15);
        }
        for i in 1..60 {
            assert!(m.rate(0, i).unwrap() > 0.0);
        }
    }

    #[test]
    fn preset_parameter_errors_name_the_constraint() {
        let e = RateModel::tfpp(0.0).unwrap_err().to_string();
        assert!(e.contains("TFPP λ"), "{e}");
        let e = RateModel::gfcp(&[1.0, -2.0]).unwrap_err().to_string();
        assert!(e.contains("λ_2"), "{e}");
        let e = RateModel::cfpp(Sequence::Formula("1 + i".into()))
            .unwrap_err()
            .to_string();
        assert!(e.contains("β_i > β_(i+1)"), "{e}");
        let e = RateModel::cfpp(Sequence::Formula("1/(i+1)".into()))
            .unwrap_err()
            .to_string();
        assert!(e.contains("lim"), "{e}");
        let e = RateModel::stfpp(1.0, 1.5).unwrap_err().to_string();
        assert!(e.contains("(0, 1]"), "{e}");
    }

    #[test]
    fn unbounded_divergent_sum_is_rejected() {
        let m = RateModel::from_fn(0, JumpBound::Unbounded, |_, i| 1.0 / i as f64)
            .unwrap()
            .with_max_terms(10_000);
        assert!(matches!(
            m.total_rate(0),
            Err(Error::DivergentRates { terms: 10_000, .. })
        ));
    }

    #[test]
    fn explosion_constant_rate_is_non_exploding() {
        let m = RateModel::tfpp(3.0).unwrap();
        let r = explosion_check(&m, 1000, &ExplosionConfig::default()).unwrap();
        assert_eq!(r.verdict, Explosion::NonExploding);
        assert!((r.partial_sums[9] - 10.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn explosion_square_rates_possibly_explode() {
        let m =
            RateModel::from_fn(0, JumpBound::Finite(1), |n, _| ((n + 1) * (n + 1)) as f64).unwrap();
        let r = explosion_check(&m, 10_000, &ExplosionConfig::default()).unwrap();
        assert_eq!(r.verdict, Explosion::PossiblyExploding);
        let limit = std::f64::consts::PI.powi(2) / 6.0;
        assert!((r.partial_sums.last().unwrap() - limit).abs() < 1e-3);
    }

    #[test]
    fn explosion_k2_unit_rates_increment() {
        let m = RateModel::from_fn(0, JumpBound::Finite(2), |_, _| 1.0).unwrap();
        // At m = n0 the j = 2 term reaches below n0 and is absent.
        assert!((explosion_increment(&m, 0).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        for level in 1..20 {
            let a = explosion_increment(&m, level).unwrap();
            assert!((a - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        }
        let r = explosion_check(&m, 500, &ExplosionConfig::default()).unwrap();
        assert_eq!(r.verdict, Explosion::NonExploding);
    }

    #[test]
    fn explosion_rejects_zero_terms() {
        let m = RateModel::tfpp(1.0).unwrap();
        assert!(explosion_check(&m, 0, &ExplosionConfig::default()).is_err());
    }

    #[test]
    fn table_extension_policies() {
        let doc = r#"{"n0": 2, "kind": "table", "rates": [[1, 2], [3, 4]], "extension": "error"}"#;
        let m = RateModel::from_json(doc).unwrap();
        assert_eq!(m.k(), JumpBound::Finite(2));
        assert_eq!(m.rate(3, 2).unwrap(), 4.0);
        assert!(m.rate(4, 1).is_err());
        let doc = doc.replace("\"error\"", "\"repeat-last-row\"");
        let m = RateModel::from_json(&doc).unwrap();
        assert_eq!(m.rate(40, 1).unwrap(), 3.0);
        let bad = r#"{"n0": 0, "kind": "table", "rates": [[1, 2], [3]], "extension": "error"}"#;
        assert!(RateModel::from_json(bad).is_err());
    }

    #[test]
    fn formula_documents() {
        let doc = r#"{"n0": 1, "kind": "formula", "rates": ["n", "1"]}"#;
        let m = RateModel::from_json(doc).unwrap();
        assert_eq!(m.k(), JumpBound::Finite(2));
        assert_eq!(m.rate(5, 1).unwrap(), 5.0);
        assert_eq!(m.rate(5, 2).unwrap(), 1.0);
        let doc = r#"{"n0": 0, "k": "unbounded", "kind": "formula", "rate": "(n+1)/2^i"}"#;
        let m = RateModel::from_json(doc).unwrap();
        assert!((m.total_rate(3).unwrap().value - 4.0).abs() < 1e-10);
        let missing_k = r#"{"n0": 0, "kind": "formula", "rate": "n"}"#;
        assert!(RateModel::from_json(missing_k).is_err());
    }

    #[test]
    fn zero_rate_is_an_error_at_evaluation() {
        let doc = r#"{"n0": 0, "kind": "formula", "rates": ["n"]}"#;
        let m = RateModel::from_json(doc).unwrap();
        assert!(m.rate(0, 1).is_err());
        assert_eq!(m.rate(2, 1).unwrap(), 2.0);
    }

    #[test]
    fn custom_models_do_not_serialize() {
        let m = RateModel::from_fn(0, JumpBound::Finite(1), |_, _| 1.0).unwrap();
        assert!(m.to_json().is_err());
    }
}
