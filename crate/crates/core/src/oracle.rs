//! Independent numerical ground truth for the analytic engine.
//!
//! The forward equations are lower triangular: the equation for state `n`
//! only involves states `≤ n`. Each state is therefore solved as a scalar
//! Caputo equation `D^α y = -μ y + g(t)` whose forcing `g` comes from the
//! already solved lower states on the same grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pmf::OrderSpec;
use crate::quad::{self, QuadConfig};
use crate::rates::RateModel;
use crate::table::{PmfTable, TableSource};
use crate::Estimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Classical Runge–Kutta; integer order only.
    Rk4,
    /// Fractional Adams–Bashforth–Moulton with the corrector solved exactly.
    FractionalAbm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub step: f64,
    /// States `n0..=n0 + n_max` are solved.
    pub n_max: usize,
    /// Keep only this many past steps in the memory sums; `None` keeps all.
    pub max_memory_terms: Option<usize>,
    pub scheme: Scheme,
    /// Values outside `[-tol, 1 + tol]` abort the solve.
    pub stability_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            step: 1e-3,
            n_max: 10,
            max_memory_terms: None,
            scheme: Scheme::FractionalAbm,
            stability_tolerance: 1e-6,
        }
    }
}

fn grid_len(t_end: f64, step: f64) -> Result<usize> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "end time must be positive, got {t_end}"
        )));
    }
    if !(step > 0.0 && step <= t_end) {
        return Err(Error::InvalidParameter(format!(
            "step must lie in (0, t_end], got {step}"
        )));
    }
    let steps = (t_end / step).round();
    if ((steps * step) - t_end).abs() > 1e-9 * t_end {
        return Err(Error::Grid(format!(
            "end time {t_end} is not a multiple of the step {step}"
        )));
    }
    Ok(steps as usize)
}

/// Rates feeding state `j` (index above `n0`): `(source index, λ)`.
fn inflows(model: &RateModel, j: usize) -> Result<Vec<(usize, f64)>> {
    let n = model.n0() + j as u64;
    let kmax = model.k().effective(j.max(1)).min(j);
    (1..=kmax)
        .map(|i| Ok((j - i, model.rate(n - i as u64, i)?)))
        .collect()
}

/// Solves the forward equations on `[0, t_end]` with a uniform step and
/// returns every grid point, tagged as an oracle table.
pub fn solve_fractional_system(
    model: &RateModel,
    order: &OrderSpec,
    t_end: f64,
    cfg: &SolverConfig,
) -> Result<PmfTable> {
    order.validate()?;
    let steps = grid_len(t_end, cfg.step)?;
    if cfg.n_max < 1 {
        return Err(Error::InvalidParameter("n_max must be at least 1".into()));
    }
    let n0 = model.n0();
    let h = cfg.step;
    let times: Vec<f64> = (0..=steps).map(|i| i as f64 * h).collect();
    let mut sol: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_max + 1);
    // RK4 forcing needs every stage value of the lower states.
    let mut stages: Vec<Vec<[f64; 4]>> = Vec::new();
    for j in 0..=cfg.n_max {
        let n = n0 + j as u64;
        let alpha = order.order(n)?;
        let mu = model.total_rate(n)?.value;
        let inflow = inflows(model, j)?;
        let y0 = if j == 0 { 1.0 } else { 0.0 };
        let y = match cfg.scheme {
            Scheme::Rk4 => {
                if alpha != 1.0 {
                    return Err(Error::InvalidParameter(
                        "RK4 applies to integer order only".into(),
                    ));
                }
                let (y, st) = rk4_scalar(mu, &inflow, &stages, y0, h, steps);
                stages.push(st);
                y
            }
            Scheme::FractionalAbm => {
                let g: Vec<f64> = (0..=steps)
                    .map(|s| inflow.iter().map(|&(src, l)| l * sol[src][s]).sum())
                    .collect();
                product_integration(alpha, mu, &g, y0, h, cfg.max_memory_terms)
            }
        };
        let tol = cfg.stability_tolerance;
        if let Some((s, v)) = y
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= -tol && **v <= 1.0 + tol))
        {
            return Err(Error::Unstable {
                time: times[s],
                state: n,
                value: *v,
            });
        }
        sol.push(y);
    }
    let values: Vec<Vec<f64>> = sol;
    let bounds = vec![vec![f64::NAN; times.len()]; values.len()];
    PmfTable::new(n0, times, values, bounds, TableSource::Oracle)
}

/// Fractional Adams–Bashforth–Moulton product integration for
/// `D^α y = -μ y + g`, `y(0) = y0`. The corrector is iterated to its fixed
/// point, which for this linear equation is solved in closed form; every
/// state then sees its sources at their corrected values, and for a constant
/// order the scheme conserves mass.
fn product_integration(
    alpha: f64,
    mu: f64,
    g: &[f64],
    y0: f64,
    h: f64,
    memory: Option<usize>,
) -> Vec<f64> {
    let steps = g.len() - 1;
    let gamma_a2 = libm::tgamma(alpha + 2.0);
    let ha = h.powf(alpha);
    let c_corr = ha / gamma_a2;
    // Power tables: k^α and k^{α+1}.
    let pa: Vec<f64> = (0..=steps + 1).map(|k| (k as f64).powf(alpha)).collect();
    let pa1: Vec<f64> = (0..=steps + 1)
        .map(|k| (k as f64).powf(alpha + 1.0))
        .collect();
    let mut y = vec![0.0; steps + 1];
    let mut f = vec![0.0; steps + 1];
    y[0] = y0;
    f[0] = -mu * y0 + g[0];
    for n in 0..steps {
        let lo = memory.map(|m| (n + 1).saturating_sub(m)).unwrap_or(0);
        // Corrector history: Σ_{j=0}^{n} a_{j,n+1} f_j.
        let mut hist = 0.0;
        for j in lo..=n {
            let a = if j == 0 {
                pa1[n] - (n as f64 - alpha) * pa[n + 1]
            } else {
                pa1[n - j + 2] + pa1[n - j] - 2.0 * pa1[n - j + 1]
            };
            hist += a * f[j];
        }
        let next = (y0 + c_corr * (g[n + 1] + hist)) / (1.0 + c_corr * mu);
        y[n + 1] = next;
        f[n + 1] = -mu * next + g[n + 1];
    }
    y
}

/// RK4 for `y' = -μ y + Σ λ y_src`, with stage values of the sources taken
/// from their own RK4 solves so the result matches a whole-system RK4.
fn rk4_scalar(
    mu: f64,
    inflow: &[(usize, f64)],
    stages: &[Vec<[f64; 4]>],
    y0: f64,
    h: f64,
    steps: usize,
) -> (Vec<f64>, Vec<[f64; 4]>) {
    let mut y = vec![0.0; steps + 1];
    let mut st = vec![[0.0; 4]; steps];
    y[0] = y0;
    let forcing = |step: usize, stage: usize| -> f64 {
        inflow
            .iter()
            .map(|&(src, l)| l * stages[src][step][stage])
            .sum()
    };
    for s in 0..steps {
        let yn = y[s];
        let y1 = yn;
        let k1 = -mu * y1 + forcing(s, 0);
        let y2 = yn + 0.5 * h * k1;
        let k2 = -mu * y2 + forcing(s, 1);
        let y3 = yn + 0.5 * h * k2;
        let k3 = -mu * y3 + forcing(s, 2);
        let y4 = yn + h * k3;
        let k4 = -mu * y4 + forcing(s, 3);
        st[s] = [y1, y2, y3, y4];
        y[s + 1] = yn + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    (y, st)
}

/// Whole-system RK4 on states `n0..=n0 + n_max`; integer order only.
pub fn solve_simultaneous(
    model: &RateModel,
    t_end: f64,
    step: f64,
    n_max: usize,
) -> Result<PmfTable> {
    let steps = grid_len(t_end, step)?;
    let n0 = model.n0();
    let size = n_max + 1;
    let mu: Vec<f64> = (0..size)
        .map(|j| model.total_rate(n0 + j as u64).map(|r| r.value))
        .collect::<Result<_>>()?;
    let inflow: Vec<Vec<(usize, f64)>> = (0..size)
        .map(|j| inflows(model, j))
        .collect::<Result<_>>()?;
    let rhs = |y: &[f64]| -> Vec<f64> {
        (0..size)
            .map(|j| -mu[j] * y[j] + inflow[j].iter().map(|&(src, l)| l * y[src]).sum::<f64>())
            .collect()
    };
    let mut y = vec![0.0; size];
    y[0] = 1.0;
    let mut values = vec![vec![0.0; steps + 1]; size];
    for j in 0..size {
        values[j][0] = y[j];
    }
    let axpy = |a: &[f64], c: f64, b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(x, d)| x + c * d).collect()
    };
    for s in 0..steps {
        let k1 = rhs(&y);
        let k2 = rhs(&axpy(&y, 0.5 * step, &k1));
        let k3 = rhs(&axpy(&y, 0.5 * step, &k2));
        let k4 = rhs(&axpy(&y, step, &k3));
        for j in 0..size {
            y[j] += step / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            values[j][s + 1] = y[j];
        }
    }
    let times = (0..=steps).map(|i| i as f64 * step).collect();
    let bounds = vec![vec![f64::NAN; steps + 1]; size];
    PmfTable::new(n0, times, values, bounds, TableSource::Oracle)
}

/// `∫_0^∞ e^{-st} f(t) dt` for `0 ≤ f ≤ 1`: adaptive quadrature on
/// `[0, t_cut]` plus the bound `e^{-s t_cut} / s` on the remainder.
pub fn numeric_laplace<F>(f: F, s: f64, t_cut: f64) -> Result<Estimate>
where
    F: Fn(f64) -> f64,
{
    if !(s > 0.0 && t_cut > 0.0) {
        return Err(Error::InvalidParameter(
            "Laplace quadrature needs s > 0 and t_cut > 0".into(),
        ));
    }
    let cfg = QuadConfig {
        abs_tol: 1e-12,
        rel_tol: 1e-12,
        max_subdivisions: 4000,
    };
    // Geometric breakpoints resolve the t^α behaviour near zero.
    let breaks: Vec<f64> = (1..12).map(|k| t_cut * 0.5f64.powi(k)).collect();
    let r = quad::integrate(|t| (-s * t).exp() * f(t), 0.0, t_cut, &breaks, &cfg)?;
    let tail = (-s * t_cut).exp() / s;
    Ok(Estimate::new(r.value, r.error + tail))
}

/// Per-state residual of the forward equations for a tabulated solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Residual {
    pub state: u64,
    pub sup_norm: f64,
    /// Time at which the supremum is attained.
    pub at: f64,
}

/// Sup-norm over `t ≥ t_min` of `D^α p(n, ·) - (right-hand side)` for each
/// state of a table on a uniform grid starting at zero. At integer order the
/// derivative is the ordinary one, taken by second-order differences.
pub fn caputo_residual(
    model: &RateModel,
    order: &OrderSpec,
    table: &PmfTable,
    t_min: f64,
    rule: DerivativeRule,
) -> Result<Vec<Residual>> {
    order.validate()?;
    let times = &table.times;
    if times.len() < 3 || times[0] != 0.0 {
        return Err(Error::Grid(
            "residuals need at least three grid points starting at 0".into(),
        ));
    }
    let h = times[1] - times[0];
    if times
        .windows(2)
        .any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1e-300))
    {
        return Err(Error::Grid("residuals need a uniform time grid".into()));
    }
    let n0 = table.n0;
    if n0 != model.n0() {
        return Err(Error::Grid(format!(
            "table starts at state {n0} but the model at {}",
            model.n0()
        )));
    }
    let last = times.len() - 1;
    let mut out = Vec::with_capacity(table.n_states());
    for (j, row) in table.values.iter().enumerate() {
        let n = n0 + j as u64;
        let alpha = order.order(n)?;
        let mu = model.total_rate(n)?.value;
        let inflow = inflows(model, j)?;
        let deriv = caputo_derivative(alpha, row, h, rule);
        let mut sup = 0.0f64;
        let mut at = f64::NAN;
        for (s, &t) in times.iter().enumerate() {
            if t < t_min - 1e-12 || s == 0 || (alpha == 1.0 && s == last) {
                continue;
            }
            let rhs = -mu * row[s]
                + inflow
                    .iter()
                    .map(|&(src, l)| l * table.values[src][s])
                    .sum::<f64>();
            let r = (deriv[s] - rhs).abs();
            if r > sup || at.is_nan() {
                sup = r;
                at = t;
            }
        }
        if at.is_nan() {
            return Err(Error::Grid(format!(
                "no grid points at or after t = {t_min}"
            )));
        }
        out.push(Residual {
            state: n,
            sup_norm: sup,
            at,
        });
    }
    Ok(out)
}

/// Discretisation of the Caputo derivative on a uniform grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeRule {
    /// Plain L1 product integration.
    L1,
    /// L1 plus starting weights that make it exact on `t^{jα}`, the
    /// singular terms of the solutions near zero.
    CorrectedL1,
    /// Piecewise-quadratic product integration (L1-2), with the same
    /// starting weights.
    #[default]
    CorrectedL12,
}

/// At most this many singular exponents get correction weights.
const MAX_CORRECTIONS: usize = 3;

/// Caputo derivative at every grid point. Integer order uses central
/// differences.
pub fn caputo_derivative(alpha: f64, y: &[f64], h: f64, rule: DerivativeRule) -> Vec<f64> {
    let len = y.len();
    if alpha == 1.0 {
        let mut d = vec![0.0; len];
        for s in 1..len {
            d[s] = if s + 1 < len {
                (y[s + 1] - y[s - 1]) / (2.0 * h)
            } else {
                (y[s] - y[s - 1]) / h
            };
        }
        return d;
    }
    let base = match rule {
        DerivativeRule::L1 | DerivativeRule::CorrectedL1 => l1_unit,
        DerivativeRule::CorrectedL12 => l12_unit,
    };
    let mut d = base(alpha, y);
    if rule != DerivativeRule::L1 {
        let sigmas: Vec<f64> = (1..=MAX_CORRECTIONS)
            .map(|k| k as f64 * alpha)
            .filter(|&s| s < 2.0)
            .collect();
        let m = sigmas.len().min(len - 1);
        if m > 0 {
            let weights = correction_weights(alpha, &sigmas[..m], len, base);
            for n in 1..len {
                d[n] += (0..m)
                    .map(|j| weights[n][j] * (y[j + 1] - y[0]))
                    .sum::<f64>();
            }
        }
    }
    let scale = h.powf(-alpha);
    d.iter_mut().for_each(|v| *v *= scale);
    d
}

/// L1 approximation of the Caputo derivative at every grid point:
/// `h^{-α}/Γ(2-α) Σ_{j<n} b_j (y_{n-j} - y_{n-j-1})`, `b_j = (j+1)^{1-α} - j^{1-α}`.
/// Central differences at integer order.
pub fn caputo_l1(alpha: f64, y: &[f64], h: f64) -> Vec<f64> {
    caputo_derivative(alpha, y, h, DerivativeRule::L1)
}

/// L1 sums on the unit grid.
fn l1_unit(alpha: f64, y: &[f64]) -> Vec<f64> {
    let len = y.len();
    let b: Vec<f64> = (0..len)
        .map(|j| ((j + 1) as f64).powf(1.0 - alpha) - (j as f64).powf(1.0 - alpha))
        .collect();
    let scale = 1.0 / libm::tgamma(2.0 - alpha);
    let diff: Vec<f64> = (1..len).map(|s| y[s] - y[s - 1]).collect();
    let mut d = vec![0.0; len];
    for n in 1..len {
        let mut acc = 0.0;
        for j in 0..n {
            acc += b[j] * diff[n - j - 1];
        }
        d[n] = scale * acc;
    }
    d
}

/// Unit-grid sums of the L1-2 rule: linear on the first cell, then on each
/// cell the quadratic through the cell and its left neighbour.
fn l12_unit(alpha: f64, y: &[f64]) -> Vec<f64> {
    let len = y.len();
    // Moments of (a - u)^{-α} over u ∈ [0, 1], for a = 1, 2, …
    let p = |a: f64, e: f64| if a > 0.0 { a.powf(e) } else { 0.0 };
    let i0: Vec<f64> = (0..len)
        .map(|a| {
            let a = a as f64;
            (p(a, 1.0 - alpha) - p(a - 1.0, 1.0 - alpha)) / (1.0 - alpha)
        })
        .collect();
    let i1: Vec<f64> = (0..len)
        .map(|ai| {
            let a = ai as f64;
            a * i0[ai] - (p(a, 2.0 - alpha) - p(a - 1.0, 2.0 - alpha)) / (2.0 - alpha)
        })
        .collect();
    let scale = 1.0 / libm::tgamma(1.0 - alpha);
    let mut d = vec![0.0; len];
    for n in 1..len {
        let mut acc = (y[1] - y[0]) * i0[n];
        for j in 2..=n {
            let d1 = 0.5 * (y[j] - y[j - 2]);
            let d2 = y[j] - 2.0 * y[j - 1] + y[j - 2];
            let a = n - j + 1;
            acc += d1 * i0[a] + d2 * i1[a];
        }
        d[n] = scale * acc;
    }
    d
}

/// `w[n][j]` such that the corrected sum at node `n` is exact on `t^σ` for
/// every given exponent, using the values at nodes `1..=m`.
fn correction_weights(
    alpha: f64,
    sigmas: &[f64],
    len: usize,
    base: fn(f64, &[f64]) -> Vec<f64>,
) -> Vec<Vec<f64>> {
    let m = sigmas.len();
    // Residuals of plain L1 on each power, per node.
    let defects: Vec<Vec<f64>> = sigmas
        .iter()
        .map(|&sig| {
            let powers: Vec<f64> = (0..len).map(|j| (j as f64).powf(sig)).collect();
            let approx = base(alpha, &powers);
            let c = libm::tgamma(sig + 1.0) / libm::tgamma(sig + 1.0 - alpha);
            (0..len)
                .map(|n| c * (n as f64).powf(sig - alpha) - approx[n])
                .collect()
        })
        .collect();
    let matrix: Vec<Vec<f64>> = sigmas
        .iter()
        .map(|&sig| (1..=m).map(|j| (j as f64).powf(sig)).collect())
        .collect();
    (0..len)
        .map(|n| {
            let rhs: Vec<f64> = defects.iter().map(|d| d[n]).collect();
            solve_small(matrix.clone(), rhs)
        })
        .collect()
}

/// Gaussian elimination with partial pivoting for tiny dense systems.
fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let (top, bottom) = a.split_at_mut(row);
            for (x, p) in bottom[0][col..].iter_mut().zip(&top[col][col..]) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::JumpBound;

    fn poisson(lambda: f64, n: u64, t: f64) -> f64 {
        let fact: f64 = (1..=n).map(|k| k as f64).product();
        (-lambda * t).exp() * (lambda * t).powi(n as i32) / fact
    }

    #[test]
    fn rk4_reproduces_poisson() {
        let m = RateModel::tfpp(1.0).unwrap();
        let cfg = SolverConfig {
            step: 1e-3,
            n_max: 6,
            scheme: Scheme::Rk4,
            ..SolverConfig::default()
        };
        let table = solve_fractional_system(&m, &OrderSpec::Constant(1.0), 1.0, &cfg).unwrap();
        let last = table.times.len() - 1;
        for n in 0..=6 {
            assert!((table.get(n, last) - poisson(1.0, n, 1.0)).abs() < 1e-12);
        }
        assert_eq!(table.get(0, 0), 1.0);
        assert_eq!(table.get(3, 0), 0.0);
    }

    #[test]
    fn sequential_rk4_equals_simultaneous() {
        let m = RateModel::from_fn(
            1,
            JumpBound::Finite(2),
            |n, i| if i == 1 { n as f64 } else { 1.0 },
        )
        .unwrap();
        let cfg = SolverConfig {
            step: 1e-2,
            n_max: 8,
            scheme: Scheme::Rk4,
            ..SolverConfig::default()
        };
        let a = solve_fractional_system(&m, &OrderSpec::Constant(1.0), 2.0, &cfg).unwrap();
        let b = solve_simultaneous(&m, 2.0, 1e-2, 8).unwrap();
        for (ra, rb) in a.values.iter().zip(&b.values) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn abm_first_state_matches_mittag_leffler() {
        let m = RateModel::tfpp(1.0).unwrap();
        let cfg = SolverConfig {
            step: 1e-3,
            n_max: 2,
            ..SolverConfig::default()
        };
        let table = solve_fractional_system(&m, &OrderSpec::Constant(0.6), 1.0, &cfg).unwrap();
        let want = crate::special::mittag_leffler(0.6, -1.0).unwrap().value;
        let got = table.get(0, table.times.len() - 1);
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn abm_convergence_order_on_poisson() {
        let m = RateModel::tfpp(1.0).unwrap();
        for alpha in [0.5, 0.8, 1.0] {
            let at_one = |step: f64| {
                let cfg = SolverConfig {
                    step,
                    n_max: 4,
                    ..SolverConfig::default()
                };
                let t =
                    solve_fractional_system(&m, &OrderSpec::Constant(alpha), 1.0, &cfg).unwrap();
                t.column(t.times.len() - 1)
            };
            let (a, b, c) = (at_one(4e-3), at_one(2e-3), at_one(1e-3));
            let diff = |x: &[f64], y: &[f64]| {
                x.iter()
                    .zip(y)
                    .map(|(u, v)| (u - v).abs())
                    .fold(0.0, f64::max)
            };
            let order = (diff(&a, &b) / diff(&b, &c)).log2();
            assert!(order >= 1.0 + alpha - 0.1, "alpha {alpha}: order {order}");
        }
    }

    #[test]
    fn rk4_rejects_fractional_order() {
        let m = RateModel::tfpp(1.0).unwrap();
        let cfg = SolverConfig {
            scheme: Scheme::Rk4,
            ..SolverConfig::default()
        };
        assert!(solve_fractional_system(&m, &OrderSpec::Constant(0.5), 1.0, &cfg).is_err());
    }

    #[test]
    fn coarse_step_on_stiff_rates_is_reported() {
        let m = RateModel::tfpp(500.0).unwrap();
        let cfg = SolverConfig {
            step: 0.1,
            n_max: 2,
            ..SolverConfig::default()
        };
        let r = solve_fractional_system(&m, &OrderSpec::Constant(1.0), 1.0, &cfg);
        assert!(matches!(r, Err(Error::Unstable { .. })));
    }

    #[test]
    fn laplace_of_simple_functions() {
        let one = numeric_laplace(|_| 1.0, 2.0, 40.0).unwrap();
        assert!((one.value - 0.5).abs() < 1e-10);
        let e = numeric_laplace(|t| (-t).exp(), 1.0, 40.0).unwrap();
        assert!((e.value - 0.5).abs() < 1e-10);
    }

    #[test]
    fn residual_examples() {
        let m = RateModel::tfpp(1.0).unwrap();
        let h = 1e-3;
        let times: Vec<f64> = (0..=2000).map(|i| i as f64 * h).collect();
        let values: Vec<Vec<f64>> = (0..4)
            .map(|n| times.iter().map(|&t| poisson(1.0, n, t)).collect())
            .collect();
        let bounds = vec![vec![0.0; times.len()]; 4];
        let table = PmfTable::new(0, times.clone(), values, bounds, TableSource::Analytic).unwrap();
        let r = caputo_residual(
            &m,
            &OrderSpec::Constant(1.0),
            &table,
            0.1,
            DerivativeRule::L1,
        )
        .unwrap();
        assert!(r.iter().all(|x| x.sup_norm < 1e-6), "{r:?}");

        // A constant first state has zero Caputo derivative.
        let flat = PmfTable::new(
            0,
            times.clone(),
            vec![vec![1.0; times.len()], vec![0.0; times.len()]],
            vec![vec![0.0; times.len()]; 2],
            TableSource::Analytic,
        )
        .unwrap();
        let r = caputo_residual(
            &m,
            &OrderSpec::Constant(0.7),
            &flat,
            0.1,
            DerivativeRule::CorrectedL1,
        )
        .unwrap();
        assert!((r[0].sup_norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn corrected_rule_is_exact_on_singular_powers() {
        let alpha = 0.6;
        let h = 0.01;
        let y: Vec<f64> = (0..=100)
            .map(|i| {
                let t = i as f64 * h;
                2.0 + t.powf(alpha) - 3.0 * t.powf(2.0 * alpha)
            })
            .collect();
        let exact = |t: f64| {
            libm::tgamma(1.0 + alpha)
                - 3.0 * libm::tgamma(1.0 + 2.0 * alpha) / libm::tgamma(1.0 + alpha) * t.powf(alpha)
        };
        let d = caputo_derivative(alpha, &y, h, DerivativeRule::CorrectedL1);
        let plain = caputo_derivative(alpha, &y, h, DerivativeRule::L1);
        let (mut worst, mut worst_plain) = (0.0f64, 0.0f64);
        for n in 1..=100 {
            let e = exact(n as f64 * h);
            worst = worst.max((d[n] - e).abs());
            worst_plain = worst_plain.max((plain[n] - e).abs());
        }
        assert!(worst < 1e-9, "{worst}");
        assert!(worst_plain > 1e-3);
        let d = caputo_derivative(alpha, &y, h, DerivativeRule::CorrectedL12);
        let worst = (1..=100)
            .map(|n| (d[n] - exact(n as f64 * h)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-9, "{worst}");
    }
}
