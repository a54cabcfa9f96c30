//! Error measurement on tensor grids and empirical convergence orders.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{tensor_grid, uniform_cube, PointSet};
use crate::interpolant::SparseGridInterpolant;

/// Quadrature points above which [`l2_error`] refuses to run unless told otherwise.
pub const DEFAULT_QUADRATURE_BUDGET: usize = 1 << 26;

/// Evaluation points handled per call to [`SparseGridInterpolant::evaluate`].
const SLAB_POINTS: usize = 1 << 21;

/// Points per reduction chunk; chunk sums are added in index order.
const REDUCE_CHUNK: usize = 1 << 12;

/// Nodes and weights on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(Error::invalid("quadrature needs matching, non-empty nodes and weights"));
        }
        if nodes.iter().any(|x| !(0.0..=1.0).contains(x)) || weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::invalid("quadrature nodes must lie in [0, 1] with positive weights"));
        }
        Ok(Self { nodes, weights })
    }

    /// Four-point Gauss–Legendre rule mapped to `[0, 1]`.
    pub fn gauss_legendre_4() -> Self {
        let s = (6.0_f64 / 5.0).sqrt();
        let inner = (3.0 / 7.0 - 2.0 / 7.0 * s).sqrt();
        let outer = (3.0 / 7.0 + 2.0 / 7.0 * s).sqrt();
        let w_inner = (18.0 + 30.0_f64.sqrt()) / 36.0;
        let w_outer = (18.0 - 30.0_f64.sqrt()) / 36.0;
        let t = [-outer, -inner, inner, outer];
        let w = [w_outer, w_inner, w_inner, w_outer];
        Self {
            nodes: t.iter().map(|t| 0.5 * (1.0 + t)).collect(),
            weights: w.iter().map(|w| 0.5 * w).collect(),
        }
    }

    /// The rule repeated on `panels` equal subintervals.
    pub fn composite(&self, panels: usize) -> Result<Self> {
        if panels == 0 {
            return Err(Error::invalid("at least one quadrature panel is required"));
        }
        let h = 1.0 / panels as f64;
        let mut nodes = Vec::with_capacity(panels * self.nodes.len());
        let mut weights = Vec::with_capacity(nodes.capacity());
        for p in 0..panels {
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                nodes.push((p as f64 + x) * h);
                weights.push(w * h);
            }
        }
        Ok(Self { nodes, weights })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, w)| w * f(x)).sum()
    }

    /// Tensorized rule on `[0, 1]^d`: points in [`tensor_grid`] order and their weights.
    pub fn tensorized(&self, d: usize) -> Result<(PointSet, Vec<f64>)> {
        let points = tensor_grid(&PointSet::new(1, self.nodes.clone())?, d)?;
        let one_d = PointSet::new(1, self.weights.clone())?;
        let weights = tensor_grid(&one_d, d)?
            .iter()
            .map(|w| w.iter().product())
            .collect();
        Ok((points, weights))
    }
}

pub fn gauss_legendre_4() -> QuadratureRule {
    QuadratureRule::gauss_legendre_4()
}

/// Panels per dimension used when none are requested.
pub fn default_panels(total_dim: usize) -> usize {
    if total_dim <= 3 {
        4
    } else {
        1
    }
}

/// `sum_k weight(k) (f(x_k) - u(x_k))^2` over the tensor grid `grids[0] x ... x grids[m-1]`,
/// with `weight(k) = prod_i weights[i][k_i]` (all ones when `weights` is `None`).
fn squared_error_sum(
    interp: &SparseGridInterpolant,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    grids: &[PointSet],
    weights: Option<&[Vec<f64>]>,
) -> Result<f64> {
    let m = interp.directions();
    if grids.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: grids.len(),
        });
    }
    let rest: usize = grids[1..].iter().map(|g| g.len()).product();
    let rows = (SLAB_POINTS / rest.max(1)).max(1);
    let total_dim: usize = grids.iter().map(|g| g.dim()).sum();
    let mut total = 0.0;
    let mut start = 0;
    while start < grids[0].len() {
        let end = (start + rows).min(grids[0].len());
        let mut slab_grids = grids.to_vec();
        slab_grids[0] = grids[0].subset(&(start..end).collect::<Vec<_>>());
        let u = interp.evaluate(&slab_grids)?;
        let extents = u.shape().extents().to_vec();
        let partial: Vec<f64> = u
            .data()
            .par_chunks(REDUCE_CHUNK)
            .enumerate()
            .map(|(c, values)| {
                let mut x = Vec::with_capacity(total_dim);
                let mut k = vec![0; m];
                let mut acc = 0.0;
                for (o, &uv) in values.iter().enumerate() {
                    let mut p = c * REDUCE_CHUNK + o;
                    for i in (0..m).rev() {
                        k[i] = p % extents[i];
                        p /= extents[i];
                    }
                    x.clear();
                    let mut w = 1.0;
                    for i in 0..m {
                        let ki = if i == 0 { start + k[0] } else { k[i] };
                        x.extend_from_slice(grids[i].point(ki));
                        if let Some(ws) = weights {
                            w *= ws[i][ki];
                        }
                    }
                    let e = f(&x) - uv;
                    acc += w * e * e;
                }
                acc
            })
            .collect();
        total += partial.iter().sum::<f64>();
        start = end;
    }
    Ok(total)
}

/// L² error on the product of unit cubes by tensorized composite Gauss–Legendre quadrature
/// with `panels` subintervals per coordinate.
pub fn l2_error(
    interp: &SparseGridInterpolant,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    panels: usize,
    budget: usize,
) -> Result<f64> {
    let rule = gauss_legendre_4().composite(panels)?;
    let dims = interp.kernel().dims();
    let points = dims
        .iter()
        .try_fold(1usize, |acc, &d| {
            u32::try_from(d).ok().and_then(|d| rule.len().checked_pow(d)).and_then(|n| acc.checked_mul(n))
        })
        .unwrap_or(usize::MAX);
    if points > budget {
        return Err(Error::Budget { points, budget });
    }
    let (grids, weights): (Vec<PointSet>, Vec<Vec<f64>>) = dims
        .iter()
        .map(|&d| rule.tensorized(d))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok(squared_error_sum(interp, f, &grids, Some(&weights))?.sqrt())
}

/// Root-mean-square difference between aligned predictions and references.
pub fn rms_error(predictions: &[f64], references: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::invalid("RMS error of an empty sample"));
    }
    if predictions.len() != references.len() {
        return Err(Error::DimensionMismatch {
            expected: references.len(),
            got: predictions.len(),
        });
    }
    let s: f64 = predictions.iter().zip(references).map(|(p, r)| (p - r) * (p - r)).sum();
    Ok((s / predictions.len() as f64).sqrt())
}

/// RMS error of the interpolant against `f` over the product of the given grids.
pub fn rms_error_on_grids(
    interp: &SparseGridInterpolant,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    grids: &[PointSet],
) -> Result<f64> {
    let count: usize = grids.iter().map(|g| g.len()).product();
    if count == 0 {
        return Err(Error::invalid("RMS error of an empty sample"));
    }
    Ok((squared_error_sum(interp, f, grids, None)? / count as f64).sqrt())
}

/// Per direction `n` uniform points in `[inset, 1 - inset]^{d_i}`; direction `i` uses seed `seed + i`.
pub fn random_eval_grids(dims: &[usize], n: usize, inset: f64, seed: u64) -> Result<Vec<PointSet>> {
    if !(0.0..0.5).contains(&inset) {
        return Err(Error::invalid(format!("inset {inset} must lie in [0, 0.5)")));
    }
    dims.iter()
        .enumerate()
        .map(|(i, &d)| uniform_cube(n, d, inset, 1.0 - inset, seed.wrapping_add(i as u64)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub level: usize,
    /// Total number of sparse-grid points.
    pub dof: usize,
    pub error: f64,
    /// `log(e_prev / e) / log(N / N_prev)`; absent on the first row.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceRecord {
    rows: Vec<ConvergenceRow>,
}

impl ConvergenceRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, level: usize, dof: usize, error: f64) -> Result<()> {
        if !error.is_finite() || error < 0.0 {
            return Err(Error::invalid(format!("error {error} at level {level} is not a finite nonnegative number")));
        }
        let order = match self.rows.last() {
            None => None,
            Some(prev) => {
                if dof <= prev.dof {
                    return Err(Error::invalid(format!(
                        "degrees of freedom must increase: {} at level {}, {dof} at level {level}",
                        prev.dof, prev.level
                    )));
                }
                (prev.error > 0.0 && error > 0.0)
                    .then(|| (prev.error / error).ln() / (dof as f64 / prev.dof as f64).ln())
            }
        };
        self.rows.push(ConvergenceRow {
            level,
            dof,
            error,
            order,
        });
        Ok(())
    }

    pub fn rows(&self) -> &[ConvergenceRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("J,N,error,order\n");
        for r in &self.rows {
            let order = r.order.map(|o| format!("{o:.6}")).unwrap_or_default();
            let _ = writeln!(s, "{},{},{:.10e},{}", r.level, r.dof, r.error, order);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderFit {
    /// Negated least-squares slope of `log(error)` against `log(N)`.
    pub slope: f64,
    /// Per-step orders over the same rows.
    pub steps: Vec<f64>,
}

/// Fits the convergence order over the last `tail` rows of `record`.
pub fn fit_order(record: &ConvergenceRecord, tail: usize) -> Result<OrderFit> {
    if tail < 2 || tail > record.len() {
        return Err(Error::invalid(format!(
            "order fit needs 2 <= tail <= {} rows, got {tail}",
            record.len()
        )));
    }
    let rows = &record.rows[record.len() - tail..];
    if let Some(r) = rows.iter().find(|r| !(r.error > 0.0)) {
        return Err(Error::invalid(format!("nonpositive error {} at level {}", r.error, r.level)));
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.dof as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.error.ln()).collect();
    let n = tail as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let steps = rows
        .windows(2)
        .map(|w| (w[0].error / w[1].error).log2() / (w[1].dof as f64 / w[0].dof as f64).log2())
        .collect();
    Ok(OrderFit {
        slope: -sxy / sxx,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(pairs: &[(usize, f64)]) -> ConvergenceRecord {
        let mut r = ConvergenceRecord::new();
        for (j, &(n, e)) in pairs.iter().enumerate() {
            r.push(j, n, e).unwrap();
        }
        r
    }

    #[test]
    fn gauss_legendre_exactness() {
        let q = gauss_legendre_4();
        assert!((q.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for k in 0..=7 {
            let exact = 1.0 / (k as f64 + 1.0);
            assert!((q.integrate(|x| x.powi(k)) - exact).abs() < 1e-14, "degree {k}");
        }
        let gap = (q.integrate(|x| x.powi(8)) - 1.0 / 9.0).abs();
        assert!(gap > 1e-6, "degree 8 integrated exactly? gap {gap}");
        let c = q.composite(5).unwrap();
        assert_eq!(c.len(), 20);
        for k in 0..=7 {
            assert!((c.integrate(|x| x.powi(k)) - 1.0 / (k as f64 + 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn tensorized_weights() {
        let (p, w) = gauss_legendre_4().composite(2).unwrap().tensorized(2).unwrap();
        assert_eq!(p.len(), 64);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let xy: f64 = p.iter().zip(&w).map(|(x, w)| w * x[0].powi(3) * x[1].powi(5)).sum();
        assert!((xy - 1.0 / 24.0).abs() < 1e-14);
    }

    #[test]
    fn rms_examples() {
        assert_eq!(rms_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rms_error(&[1.5, 2.5, -0.5], &[1.0, 2.0, -1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(rms_error(&[], &[]).is_err());
        assert!(rms_error(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn exact_power_law() {
        let pairs: Vec<(usize, f64)> = [10usize, 20, 40, 80].iter().map(|&n| (n, (n as f64).powi(-2))).collect();
        let fit = fit_order(&record(&pairs), 4).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!(fit.steps.iter().all(|s| (s - 2.0).abs() < 1e-12));
        let r = record(&pairs);
        assert!(r.rows()[0].order.is_none());
        assert!((r.rows()[3].order.unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn logarithmic_factor_biases_slope_downward() {
        let fit = |lo: u32| {
            let pairs: Vec<(usize, f64)> = (lo..lo + 4)
                .map(|k| {
                    let n = 1usize << k;
                    (n, (n as f64).powi(-2) * (n as f64).ln())
                })
                .collect();
            fit_order(&record(&pairs), 4).unwrap().slope
        };
        let (coarse, fine) = (fit(4), fit(16));
        assert!(coarse < 2.0 && fine < 2.0);
        assert!(fine > coarse);
    }

    #[test]
    fn record_validation() {
        let mut r = ConvergenceRecord::new();
        r.push(1, 3, 0.1).unwrap();
        assert!(r.push(2, 3, 0.05).is_err());
        assert!(r.push(2, 7, f64::NAN).is_err());
        r.push(2, 7, 0.0).unwrap();
        assert!(fit_order(&r, 2).is_err());
        assert!(fit_order(&r, 3).is_err());
        assert_eq!(
            record(&[(3, 0.5), (7, 0.125)]).to_csv().lines().next().unwrap(),
            "J,N,error,order"
        );
    }

    proptest! {
        #[test]
        fn fit_is_scale_invariant(
            errors in prop::collection::vec(1e-8f64..1.0, 3..7),
            scale in 1e-3f64..1e3,
        ) {
            let pairs: Vec<(usize, f64)> = errors.iter().enumerate().map(|(k, &e)| (3 << k, e)).collect();
            let scaled: Vec<(usize, f64)> = pairs.iter().map(|&(n, e)| (n, scale * e)).collect();
            let a = fit_order(&record(&pairs), pairs.len()).unwrap();
            let b = fit_order(&record(&scaled), pairs.len()).unwrap();
            prop_assert!((a.slope - b.slope).abs() < 1e-9);
            for (x, y) in a.steps.iter().zip(&b.steps) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
