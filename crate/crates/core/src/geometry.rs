//! Point sets, nested point hierarchies and their quasi-uniformity diagnostics.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::distance;

/// Ordered list of points of a common dimension; the position of a point is its identity.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("point dimension must be at least 1"));
        }
        if coords.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "{} coordinates do not form points of dimension {dim}",
                coords.len()
            )));
        }
        if let Some(pos) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::invalid(format!(
                "point {} has a non-finite coordinate",
                pos / dim
            )));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points(dim: usize, points: &[Vec<f64>]) -> Result<Self> {
        let mut coords = Vec::with_capacity(points.len() * dim);
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::invalid(format!(
                    "point {i} has {} coordinates, expected {dim}",
                    p.len()
                )));
            }
            coords.extend_from_slice(p);
        }
        Self::new(dim, coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    /// Points at the given positions, in the given order.
    pub fn subset(&self, indices: &[usize]) -> PointSet {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
        }
        PointSet {
            dim: self.dim,
            coords,
        }
    }

    /// Componentwise minimum and maximum.
    pub fn bounding_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let first = self.iter().next()?;
        let mut lo = first.to_vec();
        let mut hi = first.to_vec();
        for p in self.iter() {
            for o in 0..self.dim {
                lo[o] = lo[o].min(p[o]);
                hi[o] = hi[o].max(p[o]);
            }
        }
        Some((lo, hi))
    }
}

/// Fill distance, separation radius and their ratio for one point set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSetStats {
    pub count: usize,
    /// Largest distance from a probe point to its nearest point of the set.
    pub fill_distance: f64,
    /// Smallest pairwise distance; `None` for a single point.
    pub separation_radius: Option<f64>,
    /// `fill_distance / separation_radius`, when the latter is positive.
    pub cqu_estimate: Option<f64>,
}

impl PointSetStats {
    pub fn compute(points: &PointSet, probes: &PointSet) -> Result<Self> {
        let fill = fill_distance(points, probes)?;
        let sep = if points.len() >= 2 {
            Some(separation_radius(points)?)
        } else {
            None
        };
        Ok(Self {
            count: points.len(),
            fill_distance: fill,
            separation_radius: sep,
            cqu_estimate: sep.filter(|&q| q > 0.0).map(|q| fill / q),
        })
    }

    /// Coinciding points were found.
    pub fn is_degenerate(&self) -> bool {
        self.separation_radius == Some(0.0)
    }
}

/// `max_{p in probes} min_{x in points} |p - x|`, by brute force.
pub fn fill_distance(points: &PointSet, probes: &PointSet) -> Result<f64> {
    if points.is_empty() || probes.is_empty() {
        return Err(Error::invalid("fill distance needs nonempty point and probe sets"));
    }
    if points.dim() != probes.dim() {
        return Err(Error::DimensionMismatch {
            expected: points.dim(),
            got: probes.dim(),
        });
    }
    let per_probe: Vec<f64> = (0..probes.len())
        .into_par_iter()
        .map(|i| {
            let p = probes.point(i);
            points
                .iter()
                .map(|x| distance(p, x))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok(per_probe.into_iter().fold(0.0, f64::max))
}

/// `min_{i != j} |x_i - x_j|` (no factor 1/2), by brute force.
pub fn separation_radius(points: &PointSet) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "separation radius needs at least two points, got {n}"
        )));
    }
    let per_point: Vec<f64> = (0..n - 1)
        .into_par_iter()
        .map(|i| {
            let p = points.point(i);
            (i + 1..n)
                .map(|j| distance(p, points.point(j)))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok(per_point.into_iter().fold(f64::INFINITY, f64::min))
}

/// Selection rule for equally distant candidates in [`uniform_subsample`].
#[derive(Debug)]
pub enum TieBreak {
    /// Keep the candidate with the smallest index.
    FirstSeen,
    /// Pick uniformly among the tied candidates.
    Random(ChaCha8Rng),
}

impl TieBreak {
    pub fn from_seed(seed: Option<u64>) -> Self {
        match seed {
            None => TieBreak::FirstSeen,
            Some(s) => TieBreak::Random(ChaCha8Rng::seed_from_u64(s)),
        }
    }
}

/// Adds to `selected` one not-yet-selected point per occupied cuboid of the
/// `2^level` per-axis subdivision of the bounding box of `x`, namely the one
/// closest to the cuboid midpoint.
///
/// Coordinates are rescaled to the unit cube through the bounding box; axes of
/// zero extent are ignored. Returns the sorted union.
pub fn uniform_subsample(
    selected: &[usize],
    x: &PointSet,
    level: usize,
    tie: &mut TieBreak,
) -> Result<Vec<usize>> {
    uniform_subsample_in(selected, x, level, tie, None)
}

/// [`uniform_subsample`] over the box `[lo, hi]` instead of the bounding box.
/// Points outside the box are assigned to the nearest boundary cuboid.
pub fn uniform_subsample_in(
    selected: &[usize],
    x: &PointSet,
    level: usize,
    tie: &mut TieBreak,
    bounds: Option<(&[f64], &[f64])>,
) -> Result<Vec<usize>> {
    let (lo, hi) = x
        .bounding_box()
        .ok_or_else(|| Error::invalid("cannot subsample an empty point set"))?;
    let (lo, hi) = match bounds {
        None => (lo, hi),
        Some((l, h)) => {
            if l.len() != x.dim() || h.len() != x.dim() {
                return Err(Error::DimensionMismatch {
                    expected: x.dim(),
                    got: l.len().min(h.len()),
                });
            }
            if l.iter().zip(h).any(|(a, b)| !(a <= b)) {
                return Err(Error::invalid("subsampling box has lower corner above upper corner"));
            }
            (l.to_vec(), h.to_vec())
        }
    };
    if let Some(&bad) = selected.iter().find(|&&i| i >= x.len()) {
        return Err(Error::invalid(format!(
            "selected index {bad} out of range for {} points",
            x.len()
        )));
    }
    let axes: Vec<(usize, f64, f64)> = (0..x.dim())
        .filter(|&o| hi[o] > lo[o])
        .map(|o| (o, lo[o], hi[o] - lo[o]))
        .collect();
    if axes.len() * level > 120 {
        return Err(Error::invalid(format!(
            "level {level} is too deep for {} active axes",
            axes.len()
        )));
    }
    let cells = 1u128 << level;
    let scale = (1u64 << level) as f64;

    let mut in_set = vec![false; x.len()];
    for &i in selected {
        in_set[i] = true;
    }

    struct Champion {
        index: usize,
        dist2: f64,
        ties: u32,
    }
    let mut champions: HashMap<u128, Champion> = HashMap::new();
    for p in (0..x.len()).filter(|&p| !in_set[p]) {
        let point = x.point(p);
        let mut key = 0u128;
        let mut dist2 = 0.0;
        for &(o, lo_o, a_o) in &axes {
            let u = (point[o] - lo_o) / a_o;
            let c = (u * scale).floor().clamp(0.0, scale - 1.0);
            key = key * cells + c as u128;
            let mid = (c + 0.5) / scale;
            dist2 += (u - mid) * (u - mid);
        }
        match champions.get_mut(&key) {
            None => {
                champions.insert(
                    key,
                    Champion {
                        index: p,
                        dist2,
                        ties: 1,
                    },
                );
            }
            Some(ch) => {
                if dist2 < ch.dist2 {
                    *ch = Champion {
                        index: p,
                        dist2,
                        ties: 1,
                    };
                } else if dist2 == ch.dist2 {
                    ch.ties += 1;
                    if let TieBreak::Random(rng) = tie {
                        if rng.random_range(0..ch.ties) == 0 {
                            ch.index = p;
                        }
                    }
                }
            }
        }
    }
    let mut out: Vec<usize> = selected.to_vec();
    out.extend(champions.values().map(|c| c.index));
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Nested index sets `I_0 ⊆ I_1 ⊆ ... ⊆ I_J` into a base point set.
///
/// Each level's indices are kept sorted, which fixes the order of that level's
/// points everywhere downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedHierarchy {
    base: PointSet,
    levels: Vec<Vec<usize>>,
    stats: Vec<PointSetStats>,
}

impl NestedHierarchy {
    /// Validates nesting and computes per-level statistics with the base set as probes.
    pub fn from_levels(base: PointSet, levels: Vec<Vec<usize>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::invalid("a hierarchy needs at least one level"));
        }
        for (j, level) in levels.iter().enumerate() {
            if level.is_empty() {
                return Err(Error::invalid(format!("level {j} is empty")));
            }
            if level.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(format!("level {j} indices are not strictly increasing")));
            }
            if level.last().is_some_and(|&i| i >= base.len()) {
                return Err(Error::invalid(format!("level {j} indexes past the base set")));
            }
        }
        for j in 1..levels.len() {
            if !is_subset(&levels[j - 1], &levels[j]) {
                return Err(Error::invalid(format!("level {} is not contained in level {j}", j - 1)));
            }
        }
        let stats = levels
            .iter()
            .map(|l| PointSetStats::compute(&base.subset(l), &base))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            base,
            levels,
            stats,
        })
    }

    /// Dyadic grids `{k / 2^(j+1)}^dim` for `j = 0..=max_level`, with or without
    /// the boundary points; the base set is the finest grid in lexicographic order.
    pub fn dyadic_grid(dim: usize, max_level: usize, include_boundary: bool) -> Result<Self> {
        let base = tensor_grid(&equidistant_grid(max_level, include_boundary), dim)?;
        let fine = 1usize << (max_level + 1);
        let levels = (0..=max_level)
            .map(|j| {
                let step = 1usize << (max_level - j);
                (0..base.len())
                    .filter(|&p| {
                        base.point(p).iter().all(|&c| {
                            // coordinates are exact dyadic rationals
                            let k = (c * fine as f64).round() as usize;
                            k % step == 0
                        })
                    })
                    .collect()
            })
            .collect();
        Self::from_levels(base, levels)
    }

    pub fn base(&self) -> &PointSet {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// Number of levels, `J + 1`.
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn max_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level_indices(&self, j: usize) -> &[usize] {
        &self.levels[j]
    }

    pub fn level_size(&self, j: usize) -> usize {
        self.levels[j].len()
    }

    pub fn level_points(&self, j: usize) -> PointSet {
        self.base.subset(&self.levels[j])
    }

    pub fn stats(&self) -> &[PointSetStats] {
        &self.stats
    }

    /// Hex SHA-256 over the base coordinates and all level index lists.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.base.dim() as u64).to_le_bytes());
        h.update((self.base.len() as u64).to_le_bytes());
        for c in self.base.coords() {
            h.update(c.to_le_bytes());
        }
        for level in &self.levels {
            h.update((level.len() as u64).to_le_bytes());
            for &i in level {
                h.update((i as u64).to_le_bytes());
            }
        }
        h.finalize().iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Restriction to levels `0..=max_level`.
    pub fn truncated(&self, max_level: usize) -> Result<Self> {
        if max_level >= self.levels.len() {
            return Err(Error::invalid(format!(
                "cannot truncate a hierarchy of depth {} to level {max_level}",
                self.levels.len()
            )));
        }
        Ok(Self {
            base: self.base.clone(),
            levels: self.levels[..=max_level].to_vec(),
            stats: self.stats[..=max_level].to_vec(),
        })
    }
}

fn is_subset(small: &[usize], large: &[usize]) -> bool {
    let mut it = large.iter();
    small.iter().all(|s| it.any(|l| l == s))
}

/// Iterates [`uniform_subsample`] for `j = 0..=max_level` starting from the empty set.
pub fn build_hierarchy(x: &PointSet, max_level: usize, seed: Option<u64>) -> Result<NestedHierarchy> {
    build_hierarchy_in(x, max_level, seed, None)
}

/// [`build_hierarchy`] with the cuboids laid over `[lo, hi]` rather than the bounding box.
pub fn build_hierarchy_in(
    x: &PointSet,
    max_level: usize,
    seed: Option<u64>,
    bounds: Option<(&[f64], &[f64])>,
) -> Result<NestedHierarchy> {
    if x.is_empty() {
        return Err(Error::invalid("cannot build a hierarchy on an empty point set"));
    }
    let mut tie = TieBreak::from_seed(seed);
    let mut levels: Vec<Vec<usize>> = Vec::with_capacity(max_level + 1);
    let mut current = Vec::new();
    for j in 0..=max_level {
        current = uniform_subsample_in(&current, x, j, &mut tie, bounds)?;
        levels.push(current.clone());
    }
    NestedHierarchy::from_levels(x.clone(), levels)
}

/// `{k / 2^(j+1)}` on `[0, 1]`: `k = 1..2^(j+1)-1` without, `k = 0..=2^(j+1)` with boundary.
pub fn equidistant_grid(j: usize, include_boundary: bool) -> PointSet {
    let n = 1usize << (j + 1);
    let ks: Vec<usize> = if include_boundary {
        (0..=n).collect()
    } else {
        (1..n).collect()
    };
    let h = 1.0 / n as f64;
    PointSet {
        dim: 1,
        coords: ks.into_iter().map(|k| k as f64 * h).collect(),
    }
}

/// Cartesian power `g^d` of a one-dimensional grid, last coordinate fastest.
pub fn tensor_grid(g: &PointSet, d: usize) -> Result<PointSet> {
    if g.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: g.dim(),
        });
    }
    if d == 0 {
        return Err(Error::invalid("tensor grid dimension must be at least 1"));
    }
    let n = g.len();
    let total = u32::try_from(d)
        .ok()
        .and_then(|d| n.checked_pow(d))
        .and_then(|t| t.checked_mul(d).map(|_| t))
        .ok_or_else(|| Error::invalid(format!("tensor grid {n}^{d} overflows")))?;
    let mut coords = Vec::with_capacity(total * d);
    let mut digits = vec![0usize; d];
    for _ in 0..total {
        coords.extend(digits.iter().map(|&k| g.coords[k]));
        for o in (0..d).rev() {
            digits[o] += 1;
            if digits[o] < n {
                break;
            }
            digits[o] = 0;
        }
    }
    Ok(PointSet { dim: d, coords })
}

/// `n` independent uniform points on `[lo, hi]^dim`.
pub fn uniform_cube(n: usize, dim: usize, lo: f64, hi: f64, seed: u64) -> Result<PointSet> {
    if !(hi > lo) {
        return Err(Error::invalid(format!("empty interval [{lo}, {hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = (0..n * dim).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
    PointSet::new(dim, coords)
}

/// `n` independent uniform points on the unit sphere in `R^3` (normalised Gaussian triples).
pub fn uniform_sphere(n: usize, seed: u64) -> Result<PointSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::with_capacity(3 * n);
    while coords.len() < 3 * n {
        let v: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if r > 1e-12 {
            coords.extend(v.iter().map(|c| c / r));
        }
    }
    PointSet::new(3, coords)
}

/// Parses whitespace- or comma-separated coordinates, one point per line.
/// Blank lines and lines starting with `#` are skipped; the first data line fixes the dimension.
pub fn parse_points(text: &str, path: &Path) -> Result<PointSet> {
    let mut dim = None;
    let mut coords = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let values = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(format!("invalid coordinate {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(parse_err(format!(
                    "expected {d} coordinates, found {}",
                    values.len()
                )))
            }
            _ => {}
        }
        coords.extend(values);
    }
    let dim = dim.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: "no points found".into(),
    })?;
    PointSet::new(dim, coords)
}

pub fn read_points(path: &Path) -> Result<PointSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_points(&text, path)
}

pub fn format_points(points: &PointSet) -> String {
    let mut s = String::new();
    for p in points.iter() {
        let row: Vec<String> = p.iter().map(|c| format!("{c:.17e}")).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> PointSet {
        PointSet::new(1, points.to_vec()).unwrap()
    }

    #[test]
    fn single_point_subsample() {
        let x = PointSet::new(2, vec![0.3, 0.7]).unwrap();
        for j in 0..4 {
            let mut tie = TieBreak::FirstSeen;
            assert_eq!(uniform_subsample(&[], &x, j, &mut tie).unwrap(), vec![0]);
        }
    }

    #[test]
    fn one_point_per_quadrant() {
        let x = PointSet::new(2, vec![0.25, 0.25, 0.75, 0.25, 0.25, 0.75, 0.75, 0.75]).unwrap();
        let mut tie = TieBreak::FirstSeen;
        assert_eq!(uniform_subsample(&[], &x, 1, &mut tie).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn picks_point_nearest_the_midpoint() {
        // bounding box [0, 1]; level 0 midpoint is 0.5
        let x = line(&[0.0, 0.9, 0.45, 1.0]);
        let mut tie = TieBreak::FirstSeen;
        assert_eq!(uniform_subsample(&[], &x, 0, &mut tie).unwrap(), vec![2]);
        // level 1: cells [0, .5) and [.5, 1]; 2 is already selected
        let next = uniform_subsample(&[2], &x, 1, &mut tie).unwrap();
        assert_eq!(next, vec![0, 1, 2]);
    }

    #[test]
    fn degenerate_axis_is_ignored() {
        let x = PointSet::new(2, vec![0.0, 5.0, 0.5, 5.0, 1.0, 5.0]).unwrap();
        let mut tie = TieBreak::FirstSeen;
        assert_eq!(uniform_subsample(&[], &x, 0, &mut tie).unwrap(), vec![1]);
    }

    #[test]
    fn ties_first_seen_and_seeded() {
        // 0.25 and 0.75 are equidistant from the level-0 midpoint
        let x = line(&[0.0, 0.25, 0.75, 1.0]);
        let mut tie = TieBreak::FirstSeen;
        assert_eq!(uniform_subsample(&[], &x, 0, &mut tie).unwrap(), vec![1]);
        let pick = |seed| {
            let mut tie = TieBreak::from_seed(Some(seed));
            uniform_subsample(&[], &x, 0, &mut tie).unwrap()
        };
        assert_eq!(pick(11), pick(11));
        let picks: std::collections::BTreeSet<_> = (0..32).map(|s| pick(s)[0]).collect();
        assert_eq!(picks.into_iter().collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn empty_input_rejected() {
        let x = PointSet::new(2, vec![]).unwrap();
        let mut tie = TieBreak::FirstSeen;
        assert!(uniform_subsample(&[], &x, 0, &mut tie).is_err());
        assert!(build_hierarchy(&x, 2, None).is_err());
    }

    #[test]
    fn hierarchy_of_single_level() {
        let x = uniform_cube(50, 2, 0.0, 1.0, 3).unwrap();
        let h = build_hierarchy(&x, 0, None).unwrap();
        assert_eq!(h.depth(), 1);
        assert_eq!(h.level_size(0), 1);
        assert_eq!(h.stats()[0].separation_radius, None);
    }

    #[test]
    fn equidistant_input_is_exhausted_over_unit_interval() {
        for top in 0..7 {
            let x = equidistant_grid(top, false);
            let h = build_hierarchy_in(&x, top, None, Some((&[0.0], &[1.0]))).unwrap();
            assert_eq!(h.level_size(top), x.len(), "J = {top}");
            assert_eq!(h.level_points(top), x);
        }
    }

    #[test]
    fn bounding_box_cuboids_miss_part_of_an_equidistant_grid() {
        // box [1/8, 7/8]: level-2 cuboid [1/2, 11/16) holds 1/2 and 5/8, both taken earlier
        let x = equidistant_grid(2, false);
        let h = build_hierarchy(&x, 2, None).unwrap();
        assert_eq!(h.level_size(1), 3);
        assert!(h.level_size(2) < x.len());
    }

    #[test]
    fn grids() {
        assert_eq!(equidistant_grid(0, false).coords(), &[0.5]);
        assert_eq!(
            equidistant_grid(2, false).coords(),
            &[0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875]
        );
        assert_eq!(equidistant_grid(1, true).coords(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = equidistant_grid(0, true);
        let t = tensor_grid(&g, 2).unwrap();
        assert_eq!(t.len(), 9);
        assert_eq!(t.point(1), &[0.0, 0.5]);
        assert_eq!(tensor_grid(&g, 1).unwrap(), g);
        let two = line(&[0.0, 1.0]);
        let cube = tensor_grid(&two, 3).unwrap();
        assert_eq!(cube.len(), 8);
        assert_eq!(cube.point(5), &[1.0, 0.0, 1.0]);
        assert!(tensor_grid(&line(&[0.0, 1.0, 2.0]), 200).is_err());
    }

    #[test]
    fn dyadic_hierarchy_counts() {
        let h = NestedHierarchy::dyadic_grid(1, 5, false).unwrap();
        let sizes: Vec<_> = (0..=5).map(|j| h.level_size(j)).collect();
        assert_eq!(sizes, vec![1, 3, 7, 15, 31, 63]);
        assert_eq!(h.level_points(2), equidistant_grid(2, false));
        let h = NestedHierarchy::dyadic_grid(2, 2, true).unwrap();
        assert_eq!(h.level_size(0), 9);
        assert_eq!(h.level_size(2), 81);
    }

    #[test]
    fn diagnostics() {
        let x = line(&[0.0, 1.0]);
        let probes = equidistant_grid(9, true);
        let h = fill_distance(&x, &probes).unwrap();
        assert!((h - 0.5).abs() < 1e-12);
        assert_eq!(fill_distance(&x, &x).unwrap(), 0.0);
        assert!(fill_distance(&x, &PointSet::new(2, vec![0.0, 0.0]).unwrap()).is_err());

        let g = equidistant_grid(3, true);
        assert!((separation_radius(&g).unwrap() - 1.0 / 16.0).abs() < 1e-15);
        assert_eq!(separation_radius(&line(&[0.1, 0.4, 0.1])).unwrap(), 0.0);
        assert!(separation_radius(&line(&[0.1])).is_err());
        let stats = PointSetStats::compute(&line(&[0.1, 0.4, 0.1]), &g).unwrap();
        assert!(stats.is_degenerate());
        assert_eq!(stats.cqu_estimate, None);
    }

    #[test]
    fn nesting_violation_rejected() {
        let base = line(&[0.0, 0.5, 1.0]);
        assert!(NestedHierarchy::from_levels(base.clone(), vec![vec![1], vec![0, 2]]).is_err());
        assert!(NestedHierarchy::from_levels(base, vec![vec![1], vec![0, 1, 2]]).is_ok());
    }

    #[test]
    fn fingerprint_sensitivity() {
        let a = NestedHierarchy::dyadic_grid(1, 3, false).unwrap();
        let b = NestedHierarchy::dyadic_grid(1, 3, true).unwrap();
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }

    #[test]
    fn parse_formats() {
        let p = Path::new("pts.txt");
        let ps = parse_points("# header\n0.1, 0.2\n\n0.3 0.4\n", p).unwrap();
        assert_eq!(ps.dim(), 2);
        assert_eq!(ps.len(), 2);
        match parse_points("0.1 0.2\n0.3\n", p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_points("0.1 abc\n", p), Err(Error::Parse { line: 1, .. })));
        assert!(parse_points("# nothing\n", p).is_err());
        let round = parse_points(&format_points(&ps), p).unwrap();
        assert_eq!(round, ps);
    }

    #[test]
    fn sphere_points_are_unit() {
        let s = uniform_sphere(100, 5).unwrap();
        for p in s.iter() {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((r - 1.0).abs() < 1e-14);
        }
    }
}
