//! Weighted combination technique: index sets, coefficients, weight choices
//! and predicted cost-complexity rates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for `j^T w <= J` when the weights are not exact rationals.
const MEMBERSHIP_RTOL: f64 = 1e-12;

/// Positive weights normalised to `max w_i = 1`.
///
/// When the weights are known exactly as ratios of integers, membership tests
/// `j^T w <= J` are carried out in integer arithmetic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    values: Vec<f64>,
    /// Integers `a_i` with `w_i = a_i / max_k a_k`, when exact.
    ratio: Option<Vec<u64>>,
}

impl WeightVector {
    /// `w = 1`.
    pub fn ones(m: usize) -> Self {
        Self::from_ratio(&vec![1; m.max(1)]).expect("unit weights are valid")
    }

    /// Exact weights `a_i / max_k a_k`.
    pub fn from_ratio(a: &[u64]) -> Result<Self> {
        if a.is_empty() || a.contains(&0) {
            return Err(Error::invalid("weights must be a nonempty list of positive values"));
        }
        let g = a.iter().copied().fold(0, gcd);
        let ratio: Vec<u64> = a.iter().map(|&v| v / g).collect();
        let max = *ratio.iter().max().unwrap() as f64;
        Ok(Self {
            values: ratio.iter().map(|&v| v as f64 / max).collect(),
            ratio: Some(ratio),
        })
    }

    /// Weights from floating-point values, rescaled by their maximum. The flag
    /// reports whether rescaling changed them.
    pub fn normalized(values: &[f64]) -> Result<(Self, bool)> {
        check_positive("weight", values)?;
        let max = values.iter().copied().fold(0.0, f64::max);
        let scaled: Vec<f64> = values.iter().map(|v| v / max).collect();
        let changed = max != 1.0;
        let ratio = exact_ratio(values);
        Ok((
            Self {
                values: scaled,
                ratio,
            },
            changed,
        ))
    }

    /// Weights that must already satisfy `max w_i = 1`.
    pub fn new(values: &[f64]) -> Result<Self> {
        let (w, changed) = Self::normalized(values)?;
        if changed {
            return Err(Error::invalid(format!(
                "weights {values:?} are not normalised to a maximum of 1"
            )));
        }
        Ok(w)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_exact(&self) -> bool {
        self.ratio.is_some()
    }

    pub fn l1(&self) -> f64 {
        self.values.iter().sum()
    }

    /// `j^T w <= level`, exactly for rational weights, else up to a relative tolerance.
    pub fn within(&self, j: &[usize], level: usize) -> bool {
        debug_assert_eq!(j.len(), self.values.len());
        match &self.ratio {
            Some(a) => {
                let max = *a.iter().max().unwrap() as i128;
                let lhs: i128 = j.iter().zip(a).map(|(&ji, &ai)| ji as i128 * ai as i128).sum();
                lhs <= level as i128 * max
            }
            None => {
                let lhs: f64 = j.iter().zip(&self.values).map(|(&ji, &wi)| ji as f64 * wi).sum();
                lhs <= level as f64 + MEMBERSHIP_RTOL * (level as f64).max(1.0)
            }
        }
    }

    /// Largest `j_i` with `j_i w_i <= level`.
    fn axis_bound(&self, i: usize, level: usize) -> usize {
        let mut b = (level as f64 / self.values[i]).floor() as usize + 1;
        let mut unit = vec![0; self.values.len()];
        loop {
            unit[i] = b;
            if self.within(&unit, level) {
                return b;
            }
            if b == 0 {
                return 0;
            }
            b -= 1;
        }
    }
}

impl fmt::Display for WeightVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.ratio {
            Some(a) => {
                let max = *a.iter().max().unwrap();
                let parts: Vec<String> = a
                    .iter()
                    .map(|&v| {
                        let g = gcd(v, max);
                        if max / g == 1 {
                            format!("{}", v / g)
                        } else {
                            format!("{}/{}", v / g, max / g)
                        }
                    })
                    .collect();
                write!(f, "({})", parts.join(", "))
            }
            None => {
                let parts: Vec<String> = self.values.iter().map(|v| format!("{v}")).collect();
                write!(f, "({})", parts.join(", "))
            }
        }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn check_positive(what: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::invalid(format!("{what} list is empty")));
    }
    if let Some(bad) = v.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::invalid(format!("{what}s must be positive and finite, got {bad}")));
    }
    Ok(())
}

/// Common integer multiples of finite binary fractions, if small enough.
fn exact_ratio(values: &[f64]) -> Option<Vec<u64>> {
    const LIMIT: f64 = (1u64 << 52) as f64;
    let shift = values
        .iter()
        .map(|&v| (0..=52).find(|&k| (v * (1u64 << k) as f64).fract() == 0.0))
        .collect::<Option<Vec<u32>>>()?
        .into_iter()
        .max()?;
    let scale = (1u64 << shift) as f64;
    let ints: Option<Vec<u64>> = values
        .iter()
        .map(|&v| {
            let s = v * scale;
            (s <= LIMIT).then_some(s as u64)
        })
        .collect();
    let ints = ints?;
    let g = ints.iter().copied().fold(0, gcd);
    Some(ints.into_iter().map(|v| v / g).collect())
}

/// Odometer over the box `0 <= j_i <= bounds[i]`, last index fastest.
fn for_each_in_box(bounds: &[usize], mut f: impl FnMut(&[usize])) {
    let mut j = vec![0usize; bounds.len()];
    loop {
        f(&j);
        let mut i = bounds.len();
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if j[i] < bounds[i] {
                j[i] += 1;
                break;
            }
            j[i] = 0;
        }
    }
}

fn check_m(m: usize, w: &WeightVector) -> Result<()> {
    if m == 0 {
        return Err(Error::invalid("at least one direction is required"));
    }
    if w.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: w.len(),
        });
    }
    Ok(())
}

/// `{ j : j^T w <= level }` in lexicographic order.
pub fn downward_set(m: usize, level: usize, w: &WeightVector) -> Result<Vec<Vec<usize>>> {
    check_m(m, w)?;
    let bounds: Vec<usize> = (0..m).map(|i| w.axis_bound(i, level)).collect();
    let mut out = Vec::new();
    for_each_in_box(&bounds, |j| {
        if w.within(j, level) {
            out.push(j.to_vec());
        }
    });
    Ok(out)
}

fn in_index_set(j: &[usize], level: usize, w: &WeightVector) -> bool {
    // J - |w|_1 < j^T w  <=>  not ((j + 1)^T w <= J)
    let up: Vec<usize> = j.iter().map(|&v| v + 1).collect();
    w.within(j, level) && !w.within(&up, level)
}

/// `{ j : J - |w|_1 < j^T w <= J }` in lexicographic order.
pub fn index_set(m: usize, level: usize, w: &WeightVector) -> Result<Vec<Vec<usize>>> {
    Ok(downward_set(m, level, w)?
        .into_iter()
        .filter(|j| in_index_set(j, level, w))
        .collect())
}

/// `sum over j' in {0,1}^m with (j + j')^T w <= J of (-1)^|j'|`.
pub fn coefficient(j: &[usize], w: &WeightVector, level: usize) -> Result<i64> {
    check_m(j.len(), w)?;
    let m = j.len();
    if m >= 63 {
        return Err(Error::invalid(format!("{m} directions are too many for corner enumeration")));
    }
    let mut c = 0i64;
    let mut corner = vec![0usize; m];
    for mask in 0u64..(1u64 << m) {
        for (i, slot) in corner.iter_mut().enumerate() {
            *slot = j[i] + ((mask >> i) & 1) as usize;
        }
        if w.within(&corner, level) {
            c += if mask.count_ones() % 2 == 0 { 1 } else { -1 };
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub index: Vec<usize>,
    pub coefficient: i64,
}

/// Nonzero-coefficient members of the combination index set, lexicographically sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationPlan {
    directions: usize,
    level: usize,
    weights: WeightVector,
    entries: Vec<PlanEntry>,
}

impl CombinationPlan {
    pub fn new(m: usize, level: usize, w: WeightVector) -> Result<Self> {
        let entries = index_set(m, level, &w)?
            .into_iter()
            .map(|index| {
                let coefficient = coefficient(&index, &w, level)?;
                Ok(PlanEntry { index, coefficient })
            })
            .filter(|e: &Result<PlanEntry>| e.as_ref().map_or(true, |e| e.coefficient != 0))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            directions: m,
            level,
            weights: w,
            entries,
        })
    }

    pub fn directions(&self) -> usize {
        self.directions
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn entries(&self) -> &[PlanEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn coefficient_sum(&self) -> i64 {
        self.entries.iter().map(|e| e.coefficient).sum()
    }

    /// Highest level used in direction `i`.
    pub fn max_level(&self, i: usize) -> usize {
        self.entries.iter().map(|e| e.index[i]).max().unwrap_or(0)
    }

    /// Sorted distinct levels used in direction `i`.
    pub fn levels_in_direction(&self, i: usize) -> Vec<usize> {
        let mut l: Vec<usize> = self.entries.iter().map(|e| e.index[i]).collect();
        l.sort_unstable();
        l.dedup();
        l
    }

    /// One line `j_1 ... j_m : c` per entry.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let idx: Vec<String> = e.index.iter().map(|v| v.to_string()).collect();
            s.push_str(&format!("{} : {}\n", idx.join(" "), e.coefficient));
        }
        s
    }

    /// Parses [`CombinationPlan::to_text`] output.
    pub fn parse_entries(text: &str) -> Result<Vec<PlanEntry>> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, line)| {
                let bad = || Error::invalid(format!("plan line {}: cannot parse {line:?}", n + 1));
                let (idx, c) = line.split_once(':').ok_or_else(bad)?;
                let index = idx
                    .split_whitespace()
                    .map(|t| t.parse::<usize>().map_err(|_| bad()))
                    .collect::<Result<Vec<_>>>()?;
                let coefficient = c.trim().parse::<i64>().map_err(|_| bad())?;
                Ok(PlanEntry { index, coefficient })
            })
            .collect()
    }
}

/// Number of sparse-grid points `sum_{j^T w <= J} prod_i (|X_{j_i}| - |X_{j_i - 1}|)`
/// for nested per-direction level sizes.
pub fn degrees_of_freedom(level: usize, w: &WeightVector, sizes: &[Vec<usize>]) -> Result<usize> {
    let m = sizes.len();
    let mut total = 0usize;
    for j in downward_set(m, level, w)? {
        let mut prod = 1usize;
        for (i, &ji) in j.iter().enumerate() {
            let n = *sizes[i].get(ji).ok_or_else(|| {
                Error::invalid(format!("direction {i} has no level {ji}"))
            })?;
            let prev = if ji == 0 { 0 } else { sizes[i][ji - 1] };
            prod *= n - prev;
        }
        total += prod;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightStrategy {
    /// `w_i ~ t'_i - t_i`
    Accuracy,
    /// `w_i ~ d_i`
    Dof,
    /// `w_i ~ d_i + t'_i - t_i`
    CostBenefit,
}

impl WeightStrategy {
    pub const ALL: [WeightStrategy; 3] = [Self::Accuracy, Self::Dof, Self::CostBenefit];

    pub fn name(self) -> &'static str {
        match self {
            Self::Accuracy => "accuracy",
            Self::Dof => "dof",
            Self::CostBenefit => "cost-benefit",
        }
    }
}

impl fmt::Display for WeightStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "accuracy" => Ok(Self::Accuracy),
            "dof" => Ok(Self::Dof),
            "cost-benefit" => Ok(Self::CostBenefit),
            other => Err(Error::invalid(format!(
                "unknown weight strategy {other:?} (expected accuracy, dof or cost-benefit)"
            ))),
        }
    }
}

fn check_dims_gains(dims: &[usize], gains: &[f64]) -> Result<()> {
    if dims.len() != gains.len() {
        return Err(Error::DimensionMismatch {
            expected: dims.len(),
            got: gains.len(),
        });
    }
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::invalid("dimensions must be a nonempty list of positive integers"));
    }
    check_positive("smoothness gain", gains)
}

/// Weight vector of the given equilibration strategy.
pub fn weight_strategy(kind: WeightStrategy, dims: &[usize], gains: &[f64]) -> Result<WeightVector> {
    check_dims_gains(dims, gains)?;
    let raw: Vec<f64> = dims
        .iter()
        .zip(gains)
        .map(|(&d, &g)| match kind {
            WeightStrategy::Accuracy => g,
            WeightStrategy::Dof => d as f64,
            WeightStrategy::CostBenefit => d as f64 + g,
        })
        .collect();
    Ok(WeightVector::normalized(&raw)?.0)
}

/// Predicted cost-complexity rate `N^-beta (log N)^((P-1) + beta (R-1))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    pub dims: Vec<usize>,
    pub gains: Vec<f64>,
    pub weights: Vec<f64>,
    pub beta: f64,
    /// Multiplicity of `min (t'_i - t_i) / w_i`.
    pub p: usize,
    /// Multiplicity of `max d_i / w_i`.
    pub r: usize,
    /// `min (t'_i - t_i) / d_i`, the best rate over all weights.
    pub beta_star: f64,
    /// Whether `w` satisfies the sufficient condition for `beta = beta_star`.
    pub in_optimal_band: bool,
}

impl RateModel {
    pub fn log_exponent(&self) -> f64 {
        (self.p as f64 - 1.0) + self.beta * (self.r as f64 - 1.0)
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

pub fn predicted_rate(dims: &[usize], gains: &[f64], w: &WeightVector) -> Result<RateModel> {
    check_dims_gains(dims, gains)?;
    if w.len() != dims.len() {
        return Err(Error::DimensionMismatch {
            expected: dims.len(),
            got: w.len(),
        });
    }
    let wv = w.values();
    let acc: Vec<f64> = gains.iter().zip(wv).map(|(g, w)| g / w).collect();
    let cost: Vec<f64> = dims.iter().zip(wv).map(|(&d, w)| d as f64 / w).collect();
    let min_acc = acc.iter().copied().fold(f64::INFINITY, f64::min);
    let max_cost = cost.iter().copied().fold(0.0, f64::max);
    let per_dim: Vec<f64> = gains.iter().zip(dims).map(|(g, &d)| g / d as f64).collect();
    let beta_star = per_dim.iter().copied().fold(f64::INFINITY, f64::min);
    let l = per_dim.iter().position(|&v| v == beta_star).unwrap();
    let in_optimal_band = (0..dims.len()).all(|i| {
        let ratio = wv[l] / wv[i];
        let lower = gains[l] / gains[i];
        let upper = dims[l] as f64 / dims[i] as f64;
        (ratio >= lower || close(ratio, lower)) && (ratio <= upper || close(ratio, upper))
    });
    Ok(RateModel {
        dims: dims.to_vec(),
        gains: gains.to_vec(),
        weights: wv.to_vec(),
        beta: min_acc / max_cost,
        p: acc.iter().filter(|&&a| close(a, min_acc)).count(),
        r: cost.iter().filter(|&&c| close(c, max_cost)).count(),
        beta_star,
        in_optimal_band,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(a: &[u64]) -> WeightVector {
        WeightVector::from_ratio(a).unwrap()
    }

    #[test]
    fn index_set_examples() {
        assert_eq!(index_set(1, 3, &w(&[1])).unwrap(), vec![vec![3]]);
        assert_eq!(
            index_set(2, 2, &w(&[1, 1])).unwrap(),
            vec![vec![0, 1], vec![0, 2], vec![1, 0], vec![1, 1], vec![2, 0]]
        );
        assert_eq!(
            index_set(2, 1, &w(&[1, 2])).unwrap(),
            vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![2, 0]]
        );
    }

    #[test]
    fn coefficient_examples() {
        let ww = w(&[1, 1]);
        assert_eq!(coefficient(&[1, 1], &ww, 2).unwrap(), 1);
        assert_eq!(coefficient(&[0, 1], &ww, 2).unwrap(), -1);
        assert_eq!(coefficient(&[0, 0], &ww, 2).unwrap(), 0);
        for level in 0..6 {
            assert_eq!(coefficient(&[level], &w(&[1]), level).unwrap(), 1);
        }
    }

    #[test]
    fn classical_two_dimensional_plan() {
        let plan = CombinationPlan::new(2, 2, w(&[1, 1])).unwrap();
        let got: Vec<(Vec<usize>, i64)> =
            plan.entries().iter().map(|e| (e.index.clone(), e.coefficient)).collect();
        assert_eq!(
            got,
            vec![
                (vec![0, 1], -1),
                (vec![0, 2], 1),
                (vec![1, 0], -1),
                (vec![1, 1], 1),
                (vec![2, 0], 1)
            ]
        );
        assert_eq!(plan.levels_in_direction(0), vec![0, 1, 2]);
        let text = plan.to_text();
        assert!(text.starts_with("0 1 : -1\n"));
        assert_eq!(CombinationPlan::parse_entries(&text).unwrap(), plan.entries());
        assert!(CombinationPlan::parse_entries("0 1 -1\n").is_err());
    }

    #[test]
    fn univariate_plan_is_top_level() {
        for level in 0..9 {
            let plan = CombinationPlan::new(1, level, WeightVector::ones(1)).unwrap();
            assert_eq!(plan.entries(), &[PlanEntry { index: vec![level], coefficient: 1 }]);
        }
    }

    #[test]
    fn strategy_examples() {
        let dims = [1, 2, 3];
        let gains = [25.0 / 8.0; 3];
        let acc = weight_strategy(WeightStrategy::Accuracy, &dims, &gains).unwrap();
        assert_eq!(acc.values(), &[1.0, 1.0, 1.0]);
        let dof = weight_strategy(WeightStrategy::Dof, &dims, &gains).unwrap();
        assert_eq!(dof.to_string(), "(1/3, 2/3, 1)");
        let cb = weight_strategy(WeightStrategy::CostBenefit, &dims, &gains).unwrap();
        assert_eq!(cb.to_string(), "(33/49, 41/49, 1)");
        assert!(cb.is_exact());
        assert!(weight_strategy(WeightStrategy::Dof, &[1, 0], &[1.0, 1.0]).is_err());
        assert!(weight_strategy(WeightStrategy::Dof, &[1, 2], &[1.0, -1.0]).is_err());
        assert!(weight_strategy(WeightStrategy::Dof, &[1, 2], &[1.0]).is_err());
        assert_eq!("cost_benefit".parse::<WeightStrategy>().unwrap(), WeightStrategy::CostBenefit);
        assert!("best".parse::<WeightStrategy>().is_err());
    }

    #[test]
    fn rate_examples() {
        let dims = [1, 2, 3];
        let gains = [25.0 / 8.0; 3];
        let r = predicted_rate(&dims, &gains, &WeightVector::ones(3)).unwrap();
        assert!((r.beta - 25.0 / 24.0).abs() < 1e-15);
        // the minimum (25/8)/w_i is attained in every direction
        assert_eq!((r.p, r.r), (3, 1));
        assert!(r.in_optimal_band);
        let dof = weight_strategy(WeightStrategy::Dof, &dims, &gains).unwrap();
        let r = predicted_rate(&dims, &gains, &dof).unwrap();
        assert!((r.beta - 25.0 / 24.0).abs() < 1e-15);
        assert_eq!((r.p, r.r), (1, 3));
        assert!((r.beta_star - 25.0 / 24.0).abs() < 1e-15);

        let s = 25.0 / 16.0;
        let r = predicted_rate(&[1; 4], &[2.0 * s; 4], &WeightVector::ones(4)).unwrap();
        assert_eq!((r.beta, r.p, r.r), (2.0 * s, 4, 4));
        assert!(r.in_optimal_band);

        let off = WeightVector::new(&[1.0, 0.25]).unwrap();
        let r = predicted_rate(&[1, 1], &[3.0, 3.0], &off).unwrap();
        assert!(!r.in_optimal_band);
        assert!(r.beta < r.beta_star);
    }

    #[test]
    fn explicit_weights_normalise() {
        let (ww, changed) = WeightVector::normalized(&[2.0, 4.0]).unwrap();
        assert!(changed);
        assert_eq!(ww.values(), &[0.5, 1.0]);
        assert!(WeightVector::new(&[0.5, 0.9]).is_err());
        assert!(WeightVector::normalized(&[0.0, 1.0]).is_err());
        let third = WeightVector::new(&[1.0 / 3.0, 1.0]).unwrap();
        assert!(!third.is_exact());
        // floating-point 1/3 still places (3, 0) on the boundary J = 1
        assert!(third.within(&[3, 0], 1));
    }

    #[test]
    fn degrees_of_freedom_counts_distinct_points() {
        let sizes = vec![vec![1, 3, 7, 15], vec![1, 3, 7, 15]];
        // |j| <= 2 over increments 1, 2, 4: 1 + 2*2 + (4 + 4 + 2*2) = 17
        assert_eq!(degrees_of_freedom(2, &WeightVector::ones(2), &sizes).unwrap(), 17);
        assert_eq!(degrees_of_freedom(3, &WeightVector::ones(1), &sizes[..1]).unwrap(), 15);
    }

    fn arb_weights() -> impl Strategy<Value = WeightVector> {
        prop::collection::vec(1u64..6, 1..5).prop_map(|a| WeightVector::from_ratio(&a).unwrap())
    }

    proptest! {
        #[test]
        fn partition_of_unity(ww in arb_weights(), level in 0usize..7) {
            let plan = CombinationPlan::new(ww.len(), level, ww).unwrap();
            prop_assert_eq!(plan.coefficient_sum(), 1);
        }

        #[test]
        fn coefficients_vanish_outside_index_set(ww in arb_weights(), level in 0usize..6) {
            let m = ww.len();
            let set = index_set(m, level, &ww).unwrap();
            let bounds = vec![level + 2; m];
            let mut ok = true;
            for_each_in_box(&bounds, |j| {
                if !set.iter().any(|s| s == j) && coefficient(j, &ww, level).unwrap() != 0 {
                    ok = false;
                }
            });
            prop_assert!(ok);
        }
    }
}
