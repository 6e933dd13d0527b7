//! Jump patterns, epoch sets and the compositions indexing the inverse
//! Laplace series.
//!
//! A jump pattern of length `m` encodes a sequence of jump sizes summing to
//! `m`: a jump of size `i` taken from level `ℓ` writes `i` at position
//! `ℓ + 1` followed by `i − 1` zeros. The set of all patterns with jump
//! sizes at most `k` is built by the recursion "first jump `i`, then any
//! pattern of length `m − i`", memoized per `(m, min(k, m))`.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use serde::Serialize;

use crate::error::{Error, Result};

/// Patterns up to this length are kept in the shared cache.
pub const DEFAULT_CACHE_LIMIT: usize = 25;

/// One element of the pattern set for `m` levels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct JumpPattern(Vec<u32>);

impl JumpPattern {
    /// Validates the block structure `(i, 0^{i-1})(i', 0^{i'-1})…`.
    pub fn new(x: Vec<u32>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidParameter("jump pattern is empty".into()));
        }
        let n = x.len();
        let mut pos = 0;
        while pos < n {
            let i = x[pos] as usize;
            if i == 0 {
                return Err(Error::InvalidParameter(format!(
                    "jump pattern {x:?}: position {} starts a block with 0",
                    pos + 1
                )));
            }
            if pos + i > n {
                return Err(Error::InvalidParameter(format!(
                    "jump pattern {x:?}: jump {i} at position {} overruns length {n}",
                    pos + 1
                )));
            }
            if x[pos + 1..pos + i].iter().any(|&z| z != 0) {
                return Err(Error::InvalidParameter(format!(
                    "jump pattern {x:?}: jump {i} at position {} must be followed by {} zeros",
                    pos + 1,
                    i - 1
                )));
            }
            pos += i;
        }
        Ok(JumpPattern(x))
    }

    /// Encodes a sequence of jump sizes.
    pub fn from_jumps(jumps: &[usize]) -> Result<Self> {
        if jumps.is_empty() || jumps.contains(&0) {
            return Err(Error::InvalidParameter(
                "jump sizes must be positive and non-empty".into(),
            ));
        }
        let n: usize = jumps.iter().sum();
        let mut x = vec![0u32; n];
        let mut pos = 0;
        for &i in jumps {
            x[pos] = i as u32;
            pos += i;
        }
        Ok(JumpPattern(x))
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    /// Number of levels `m` covered by the pattern.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The jump sizes in the order they occur.
    pub fn jumps(&self) -> Vec<usize> {
        self.0
            .iter()
            .filter(|&&v| v != 0)
            .map(|&v| v as usize)
            .collect()
    }

    pub fn max_jump(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(0) as usize
    }
}

/// Levels visited by the jump path of a pattern, relative to the start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EpochSet {
    levels: Vec<usize>,
}

impl EpochSet {
    /// Sorted visited levels `(j)_1 = 0 < (j)_2 < … < (j)_{n*} = m`.
    pub fn epochs(&self) -> &[usize] {
        &self.levels
    }

    /// `n* = |Λ|`.
    pub fn n_star(&self) -> usize {
        self.levels.len()
    }

    pub fn contains(&self, level: usize) -> bool {
        self.levels.binary_search(&level).is_ok()
    }
}

/// `Λ = {0, …, m} \ { j ∈ 1..m−1 : x_{j+1} = 0 }`, listed in increasing order.
pub fn epoch_set(pattern: &JumpPattern) -> EpochSet {
    let x = pattern.as_slice();
    let m = x.len();
    let levels = (0..=m).filter(|&j| j == 0 || j == m || x[j] != 0).collect();
    EpochSet { levels }
}

/// Epoch set of a sequence of jump sizes, without building the pattern.
pub fn epochs_of_jumps(jumps: &[usize]) -> Vec<usize> {
    let mut levels = Vec::with_capacity(jumps.len() + 1);
    let mut level = 0;
    levels.push(0);
    for &i in jumps {
        level += i;
        levels.push(level);
    }
    levels
}

/// `|Θ_m^k|` by the recurrence `T(m) = Σ_{i=1}^{min(k,m)} T(m−i)`, `T(0) = 1`.
/// Saturates at `u128::MAX`.
pub fn theta_count(m: usize, k: usize) -> u128 {
    let mut t = vec![0u128; m + 1];
    t[0] = 1;
    for n in 1..=m {
        let mut s: u128 = 0;
        for i in 1..=k.min(n) {
            s = s.saturating_add(t[n - i]);
        }
        t[n] = s;
    }
    t[m]
}

type ThetaCache = RwLock<HashMap<(usize, usize), Arc<Vec<JumpPattern>>>>;

fn cache() -> &'static ThetaCache {
    static CACHE: OnceLock<ThetaCache> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// All patterns for `n` levels with jumps of size at most `k`, in
/// lexicographic order.
pub fn enumerate_theta(n: usize, k: usize) -> Result<Arc<Vec<JumpPattern>>> {
    if n == 0 || k == 0 {
        return Err(Error::InvalidParameter(format!(
            "pattern sets need n ≥ 1 and k ≥ 1, got n = {n}, k = {k}"
        )));
    }
    Ok(theta_cached(n, k.min(n)))
}

fn theta_cached(n: usize, k: usize) -> Arc<Vec<JumpPattern>> {
    let key = (n, k.min(n));
    if let Some(hit) = cache().read().unwrap().get(&key) {
        return Arc::clone(hit);
    }
    let mut out = Vec::new();
    for i in 1..=key.1 {
        if i == n {
            let mut x = vec![0u32; n];
            x[0] = n as u32;
            out.push(JumpPattern(x));
            continue;
        }
        let tails = theta_cached(n - i, k);
        for tail in tails.iter() {
            let mut x = Vec::with_capacity(n);
            x.push(i as u32);
            x.extend(std::iter::repeat_n(0, i - 1));
            x.extend_from_slice(tail.as_slice());
            out.push(JumpPattern(x));
        }
    }
    let out = Arc::new(out);
    if n <= DEFAULT_CACHE_LIMIT {
        cache().write().unwrap().insert(key, Arc::clone(&out));
    }
    out
}

/// Visits every jump sequence summing to `m` with sizes at most `k`, in the
/// lexicographic order of the corresponding patterns, without storing them.
pub fn for_each_jump_sequence<F>(m: usize, k: usize, mut visit: F) -> Result<()>
where
    F: FnMut(&[usize]) -> Result<()>,
{
    fn rec<F>(remaining: usize, k: usize, stack: &mut Vec<usize>, visit: &mut F) -> Result<()>
    where
        F: FnMut(&[usize]) -> Result<()>,
    {
        if remaining == 0 {
            return visit(stack);
        }
        for i in 1..=k.min(remaining) {
            stack.push(i);
            rec(remaining - i, k, stack, visit)?;
            stack.pop();
        }
        Ok(())
    }
    if m == 0 || k == 0 {
        return Err(Error::InvalidParameter(format!(
            "pattern sets need m ≥ 1 and k ≥ 1, got m = {m}, k = {k}"
        )));
    }
    rec(m, k, &mut Vec::with_capacity(m), &mut visit)
}

/// `y ∈ ℕ^n` with `Σ y = i`, `y_1 ≥ 0` and `y_j ≥ 1` for `j ≥ 2`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct Composition(Vec<u32>);

impl Composition {
    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn weight(&self) -> u64 {
        self.0.iter().map(|&v| v as u64).sum()
    }
}

/// All compositions in `Ω^n_i`, lexicographically ordered. Empty when
/// `i < n − 1`.
pub fn enumerate_omega(n: usize, i: usize) -> Result<Vec<Composition>> {
    if n == 0 {
        return Err(Error::InvalidParameter("Ω needs n ≥ 1".into()));
    }
    let mut out = Vec::new();
    if i + 1 < n {
        return Ok(out);
    }
    fn rec(pos: usize, n: usize, remaining: usize, cur: &mut Vec<u32>, out: &mut Vec<Composition>) {
        if pos == n - 1 {
            let min = if pos == 0 { 0 } else { 1 };
            if remaining >= min {
                cur.push(remaining as u32);
                out.push(Composition(cur.clone()));
                cur.pop();
            }
            return;
        }
        let min = if pos == 0 { 0 } else { 1 };
        // Later positions each need at least one unit.
        let reserve = n - 1 - pos;
        if remaining < min + reserve {
            return;
        }
        for v in min..=remaining - reserve {
            cur.push(v as u32);
            rec(pos + 1, n, remaining - v, cur, out);
            cur.pop();
        }
    }
    rec(0, n, i, &mut Vec::with_capacity(n), &mut out);
    Ok(out)
}

/// `C(n, r)` as a float (exact for moderate arguments).
pub fn binomial(n: u64, r: u64) -> f64 {
    if r > n {
        return 0.0;
    }
    let r = r.min(n - r);
    let mut acc = 1.0;
    for j in 0..r {
        acc = acc * (n - j) as f64 / (j + 1) as f64;
    }
    // Exact integers below 2^53 come out as x.999… or x.000…1.
    if acc < 9.0e15 {
        acc.round()
    } else {
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pats(n: usize, k: usize) -> Vec<Vec<u32>> {
        enumerate_theta(n, k)
            .unwrap()
            .iter()
            .map(|p| p.as_slice().to_vec())
            .collect()
    }

    #[test]
    fn theta_small_tables() {
        assert_eq!(
            pats(3, 2),
            vec![vec![1, 1, 1], vec![1, 2, 0], vec![2, 0, 1]]
        );
        assert_eq!(pats(5, 1), vec![vec![1, 1, 1, 1, 1]]);
        assert_eq!(pats(1, 7), vec![vec![1]]);
        assert_eq!(
            pats(4, 2),
            vec![
                vec![1, 1, 1, 1],
                vec![1, 1, 2, 0],
                vec![1, 2, 0, 1],
                vec![2, 0, 1, 1],
                vec![2, 0, 2, 0]
            ]
        );
    }

    #[test]
    fn theta_rejects_zero() {
        assert!(enumerate_theta(0, 2).is_err());
        assert!(enumerate_theta(3, 0).is_err());
    }

    #[test]
    fn epoch_examples() {
        let e = epoch_set(&JumpPattern::new(vec![1, 1, 1]).unwrap());
        assert_eq!(e.epochs(), &[0, 1, 2, 3]);
        assert_eq!(e.n_star(), 4);
        let e = epoch_set(&JumpPattern::new(vec![1, 2, 0]).unwrap());
        assert_eq!(e.epochs(), &[0, 1, 3]);
        let e = epoch_set(&JumpPattern::new(vec![3, 0, 0]).unwrap());
        assert_eq!(e.epochs(), &[0, 3]);
        assert_eq!(e.n_star(), 2);
    }

    #[test]
    fn invalid_patterns_rejected() {
        assert!(JumpPattern::new(vec![0, 1]).is_err());
        assert!(JumpPattern::new(vec![2, 1]).is_err());
        assert!(JumpPattern::new(vec![1, 3, 0]).is_err());
        assert!(JumpPattern::new(vec![]).is_err());
        assert!(JumpPattern::new(vec![2, 0, 1]).is_ok());
    }

    #[test]
    fn omega_examples() {
        let w: Vec<Vec<u32>> = enumerate_omega(2, 3)
            .unwrap()
            .into_iter()
            .map(|c| c.as_slice().to_vec())
            .collect();
        assert_eq!(w, vec![vec![0, 3], vec![1, 2], vec![2, 1]]);
        let w = enumerate_omega(4, 3).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].as_slice(), &[0, 1, 1, 1]);
        assert!(enumerate_omega(4, 2).unwrap().is_empty());
        assert_eq!(enumerate_omega(1, 5).unwrap().len(), 1);
    }

    #[test]
    fn visitor_matches_enumeration_order() {
        for (m, k) in [(6, 2), (7, 3), (5, 5)] {
            let mut seen = Vec::new();
            for_each_jump_sequence(m, k, |j| {
                seen.push(JumpPattern::from_jumps(j).unwrap());
                Ok(())
            })
            .unwrap();
            assert_eq!(&seen, enumerate_theta(m, k).unwrap().as_ref());
        }
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(5, 2), 10.0);
        assert_eq!(binomial(20, 10), 184756.0);
        assert_eq!(binomial(3, 5), 0.0);
    }
}
