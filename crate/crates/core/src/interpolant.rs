//! Sparse-grid kernel interpolant: coefficient computation by directional
//! solves and evaluation on tensor grids or scattered points.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combitech::{degrees_of_freedom, CombinationPlan, PlanEntry, WeightVector};
use crate::error::{Error, Result};
use crate::geometry::{NestedHierarchy, PointSet};
use crate::kernel::{kernel_matrix, ProductKernel};
use crate::linalg::Matrix;
use crate::solver::{build_cache, FactorCache};
use crate::tensor::{dematricize, matricize, mode_product, to_multi_index, LinearTensor, Shape};

/// Plan entries evaluated concurrently before their ordered accumulation.
const ENTRY_BATCH: usize = 8;

/// Data values keyed by per-direction indices into the hierarchies' base sets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValueTable {
    values: HashMap<Vec<usize>, f64>,
}

impl ValueTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: Vec<usize>, value: f64) {
        self.values.insert(key, value);
    }

    pub fn remove(&mut self, key: &[usize]) -> Option<f64> {
        self.values.remove(key)
    }

    pub fn get(&self, key: &[usize]) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Tabulates `f` on every tuple of base points of the given hierarchies.
    pub fn tabulate(hierarchies: &[NestedHierarchy], f: &(dyn Fn(&[f64]) -> f64 + Sync)) -> Result<Self> {
        let shape = Shape::new(hierarchies.iter().map(|h| h.base().len()).collect())?;
        let mut table = ValueTable::new();
        let mut x = Vec::new();
        for p in 0..shape.len() {
            let k = to_multi_index(p, &shape)?;
            x.clear();
            for (h, &ki) in hierarchies.iter().zip(&k) {
                x.extend_from_slice(h.base().point(ki));
            }
            table.insert(k, f(&x));
        }
        Ok(table)
    }

    /// Lines `i_1 ... i_m value`; `#` comments and blank lines are skipped.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut table = ValueTable::new();
        let mut width = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message,
            };
            let tokens: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .collect();
            if tokens.len() < 2 {
                return Err(err("expected point indices followed by a value".into()));
            }
            if *width.get_or_insert(tokens.len()) != tokens.len() {
                return Err(err(format!("expected {} columns, found {}", width.unwrap(), tokens.len())));
            }
            let (idx, value) = tokens.split_at(tokens.len() - 1);
            let key = idx
                .iter()
                .map(|t| t.parse::<usize>().map_err(|_| err(format!("invalid point index {t:?}"))))
                .collect::<Result<Vec<_>>>()?;
            let value = value[0]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("invalid value {:?}", value[0])))?;
            table.insert(key, value);
        }
        Ok(table)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

/// Where right-hand sides come from.
pub enum DataSource<'a> {
    /// Function of the concatenated coordinates `(x_1, ..., x_m)`.
    Function(&'a (dyn Fn(&[f64]) -> f64 + Sync)),
    Table(&'a ValueTable),
}

fn check_levels(hierarchies: &[NestedHierarchy], j: &[usize]) -> Result<()> {
    if j.len() != hierarchies.len() {
        return Err(Error::DimensionMismatch {
            expected: hierarchies.len(),
            got: j.len(),
        });
    }
    for (i, (h, &ji)) in hierarchies.iter().zip(j).enumerate() {
        if ji > h.max_level() {
            return Err(Error::invalid(format!(
                "level {ji} requested in direction {i}, hierarchy stops at {}",
                h.max_level()
            )));
        }
    }
    Ok(())
}

/// Data values on the tensor grid `X_{j_1} x ... x X_{j_m}` in stride order.
pub fn assemble_rhs(data: &DataSource<'_>, hierarchies: &[NestedHierarchy], j: &[usize]) -> Result<LinearTensor> {
    check_levels(hierarchies, j)?;
    let levels: Vec<&[usize]> = hierarchies.iter().zip(j).map(|(h, &ji)| h.level_indices(ji)).collect();
    let shape = Shape::new(levels.iter().map(|l| l.len()).collect())?;
    let values: Vec<std::result::Result<f64, Vec<usize>>> = (0..shape.len())
        .into_par_iter()
        .map(|p| {
            let k = to_multi_index(p, &shape).expect("index within shape");
            let global: Vec<usize> = k.iter().zip(&levels).map(|(&ki, l)| l[ki]).collect();
            match data {
                DataSource::Function(f) => {
                    let mut x = Vec::new();
                    for (h, &g) in hierarchies.iter().zip(&global) {
                        x.extend_from_slice(h.base().point(g));
                    }
                    Ok(f(&x))
                }
                DataSource::Table(t) => t.get(&global).ok_or(global),
            }
        })
        .collect();
    let mut out = Vec::with_capacity(values.len());
    for v in values {
        match v {
            Ok(v) => out.push(v),
            Err(indices) => return Err(Error::MissingData { indices }),
        }
    }
    LinearTensor::new(shape, out)
}

/// Summary of a coefficient computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeReport {
    pub plan_entries: usize,
    /// Number of distinct sparse-grid points.
    pub degrees_of_freedom: usize,
    pub factorizations: usize,
    /// Largest `|| K F^{-1} e_k - e_k ||_inf` over probed unit vectors.
    pub max_unit_residual: f64,
    pub max_jitter: f64,
    pub max_condition_estimate: f64,
}

/// Combination-technique interpolant `sum_j c_j u_j` with `K_j alpha_j = f_j`.
#[derive(Debug, Clone)]
pub struct SparseGridInterpolant {
    plan: CombinationPlan,
    kernel: ProductKernel,
    hierarchies: Vec<NestedHierarchy>,
    coefficients: Vec<LinearTensor>,
    report: Option<ComputeReport>,
}

/// Applies `K_j^{-1}` to `t` direction by direction, in direction order.
fn directional_solve(cache: &FactorCache, j: &[usize], mut t: LinearTensor) -> Result<LinearTensor> {
    for (i, &ji) in j.iter().enumerate() {
        let factor = cache
            .get(i, ji)
            .ok_or_else(|| Error::invalid(format!("no factorization for direction {i}, level {ji}")))?;
        let mut m = matricize(&t, i)?;
        factor.solve_in_place(&mut m)?;
        t = dematricize(&m, i, t.shape())?;
    }
    Ok(t)
}

fn entry_context(e: &PlanEntry) -> String {
    format!("interpolant: plan entry {:?}", e.index)
}

/// Computes the interpolant of `data` on the combination plan of level `level` and weights `w`.
pub fn compute(
    kernel: &ProductKernel,
    hierarchies: &[NestedHierarchy],
    data: &DataSource<'_>,
    w: WeightVector,
    level: usize,
) -> Result<SparseGridInterpolant> {
    let m = kernel.len();
    let plan = CombinationPlan::new(m, level, w)?;
    let cache = build_cache(kernel, hierarchies, &plan)?;
    let coefficients = plan
        .entries()
        .par_iter()
        .map(|e| {
            let rhs = assemble_rhs(data, hierarchies, &e.index)?;
            directional_solve(&cache, &e.index, rhs)
        })
        .zip(plan.entries().par_iter())
        .map(|(r, e)| r.map_err(|err| err.context(entry_context(e))))
        .collect::<Result<Vec<_>>>()?;
    let sizes: Vec<Vec<usize>> = hierarchies
        .iter()
        .map(|h| (0..h.depth()).map(|j| h.level_size(j)).collect())
        .collect();
    let report = ComputeReport {
        plan_entries: plan.len(),
        degrees_of_freedom: degrees_of_freedom(level, plan.weights(), &sizes)?,
        factorizations: cache.len(),
        max_unit_residual: cache.max_residual(),
        max_jitter: cache.max_jitter(),
        max_condition_estimate: cache
            .iter()
            .map(|(_, c)| c.factor.condition_estimate())
            .fold(0.0, f64::max),
    };
    Ok(SparseGridInterpolant {
        plan,
        kernel: kernel.clone(),
        hierarchies: hierarchies.to_vec(),
        coefficients,
        report: Some(report),
    })
}

impl SparseGridInterpolant {
    pub fn plan(&self) -> &CombinationPlan {
        &self.plan
    }

    pub fn kernel(&self) -> &ProductKernel {
        &self.kernel
    }

    pub fn hierarchies(&self) -> &[NestedHierarchy] {
        &self.hierarchies
    }

    /// `alpha_j` per plan entry, in plan order.
    pub fn coefficients(&self) -> &[LinearTensor] {
        &self.coefficients
    }

    /// Present for freshly computed interpolants, absent for loaded ones.
    pub fn report(&self) -> Option<&ComputeReport> {
        self.report.as_ref()
    }

    pub fn directions(&self) -> usize {
        self.kernel.len()
    }

    /// Largest `|| K_j alpha_j - f_j ||_inf / || f_j ||_inf` over the plan entries.
    pub fn max_relative_residual(&self, data: &DataSource<'_>) -> Result<f64> {
        let grams: BTreeMap<(usize, usize), Matrix> = self.level_keys()
            .into_par_iter()
            .map(|(i, l)| {
                let pts = self.hierarchies[i].level_points(l);
                Ok(((i, l), kernel_matrix(self.kernel.factor(i), &pts, None)?))
            })
            .collect::<Result<_>>()?;
        let worst = self
            .plan
            .entries()
            .par_iter()
            .zip(self.coefficients.par_iter())
            .map(|(e, alpha)| {
                let f = assemble_rhs(data, &self.hierarchies, &e.index)?;
                let mut t = alpha.clone();
                for (i, &ji) in e.index.iter().enumerate() {
                    t = mode_product(&t, i, &grams[&(i, ji)])?;
                }
                let scale = f.data().iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
                let diff = t.data().iter().zip(f.data()).fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()));
                Ok(diff / scale)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(worst.into_iter().fold(0.0, f64::max))
    }

    fn level_keys(&self) -> Vec<(usize, usize)> {
        (0..self.directions())
            .flat_map(|i| self.plan.levels_in_direction(i).into_iter().map(move |l| (i, l)))
            .collect()
    }

    /// Values on the tensor grid `E_1 x ... x E_m`, in stride order over the grid sizes.
    pub fn evaluate(&self, grids: &[PointSet]) -> Result<LinearTensor> {
        let m = self.directions();
        if grids.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: grids.len(),
            });
        }
        for (i, g) in grids.iter().enumerate() {
            if g.dim() != self.kernel.factor(i).dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.kernel.factor(i).dim(),
                    got: g.dim(),
                }
                .context(format!("evaluation grid of direction {i}")));
            }
        }
        let out_shape = Shape::new(grids.iter().map(|g| g.len()).collect())?;
        let cross: BTreeMap<(usize, usize), Matrix> = self
            .level_keys()
            .into_par_iter()
            .map(|(i, l)| {
                let pts = self.hierarchies[i].level_points(l);
                Ok(((i, l), kernel_matrix(self.kernel.factor(i), &grids[i], Some(&pts))?))
            })
            .collect::<Result<_>>()?;
        let mut acc = vec![0.0; out_shape.len()];
        let entries: Vec<(&PlanEntry, &LinearTensor)> =
            self.plan.entries().iter().zip(&self.coefficients).collect();
        for batch in entries.chunks(ENTRY_BATCH) {
            let parts = batch
                .par_iter()
                .map(|(e, alpha)| {
                    let mut t = (*alpha).clone();
                    for i in mode_order(&e.index, alpha.shape(), &out_shape) {
                        t = mode_product(&t, i, &cross[&(i, e.index[i])])?;
                    }
                    Ok(t)
                })
                .collect::<Result<Vec<_>>>()?;
            for ((e, _), t) in batch.iter().zip(parts) {
                let c = e.coefficient as f64;
                acc.iter_mut().zip(t.data()).for_each(|(a, v)| *a += c * v);
            }
        }
        LinearTensor::new(out_shape, acc)
    }

    /// Values at scattered points of the full dimension, each split into direction blocks.
    pub fn evaluate_at_points(&self, points: &PointSet) -> Result<Vec<f64>> {
        let dims = self.kernel.dims();
        let total: usize = dims.iter().sum();
        if points.dim() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                got: points.dim(),
            });
        }
        (0..points.len())
            .into_par_iter()
            .map(|p| {
                let x = points.point(p);
                let mut offset = 0;
                let mut grids = Vec::with_capacity(dims.len());
                for &d in &dims {
                    grids.push(PointSet::new(d, x[offset..offset + d].to_vec())?);
                    offset += d;
                }
                Ok(self.evaluate(&grids)?.data()[0])
            })
            .collect()
    }

    /// Writes the plan, entry shapes, coefficient arrays and a manifest into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, bytes: &[u8]| {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
        };
        write(PLAN_FILE, self.plan.to_text().as_bytes())?;
        let mut shapes = String::new();
        let mut files = Vec::new();
        for (n, (e, alpha)) in self.plan.entries().iter().zip(&self.coefficients).enumerate() {
            let idx: Vec<String> = e.index.iter().map(|v| v.to_string()).collect();
            let ext: Vec<String> = alpha.shape().extents().iter().map(|v| v.to_string()).collect();
            shapes.push_str(&format!("{} : {}\n", idx.join(" "), ext.join(" ")));
            let name = format!("coef_{n:05}.bin");
            let bytes: Vec<u8> = alpha.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            write(&name, &bytes)?;
            files.push(name);
        }
        write(SHAPES_FILE, shapes.as_bytes())?;
        let manifest = Manifest {
            format: MANIFEST_FORMAT,
            level: self.plan.level(),
            weights: self.plan.weights().clone(),
            kernel: self.kernel.clone(),
            fingerprints: self.hierarchies.iter().map(|h| h.fingerprint()).collect(),
            coefficient_files: files,
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::invalid(e.to_string()))?;
        write(MANIFEST_FILE, json.as_bytes())
    }

    /// Loads an interpolant saved by [`SparseGridInterpolant::save`], checking that
    /// `hierarchies` are the ones it was computed on.
    pub fn load(dir: &Path, hierarchies: &[NestedHierarchy]) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read(&p).map_err(|e| Error::io(&p, e))
        };
        let manifest: Manifest = serde_json::from_slice(&read(MANIFEST_FILE)?)
            .map_err(|e| Error::invalid(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::invalid(format!("unsupported interpolant format {}", manifest.format)));
        }
        if hierarchies.len() != manifest.fingerprints.len() {
            return Err(Error::StaleInterpolant(format!(
                "interpolant has {} directions, {} hierarchies supplied",
                manifest.fingerprints.len(),
                hierarchies.len()
            )));
        }
        for (i, (h, fp)) in hierarchies.iter().zip(&manifest.fingerprints).enumerate() {
            if &h.fingerprint() != fp {
                return Err(Error::StaleInterpolant(format!(
                    "hierarchy of direction {i} differs from the one the interpolant was computed on"
                )));
            }
        }
        let plan = CombinationPlan::new(hierarchies.len(), manifest.level, manifest.weights)?;
        let listed = String::from_utf8_lossy(&read(PLAN_FILE)?).into_owned();
        if CombinationPlan::parse_entries(&listed)? != plan.entries() {
            return Err(Error::StaleInterpolant("stored plan does not match the manifest".into()));
        }
        if manifest.coefficient_files.len() != plan.len() {
            return Err(Error::StaleInterpolant("coefficient file count does not match the plan".into()));
        }
        let coefficients = plan
            .entries()
            .iter()
            .zip(&manifest.coefficient_files)
            .map(|(e, name)| {
                let shape = Shape::new(
                    e.index
                        .iter()
                        .zip(hierarchies)
                        .map(|(&j, h)| h.level_size(j))
                        .collect(),
                )?;
                let bytes = read(name)?;
                if bytes.len() != 8 * shape.len() {
                    return Err(Error::StaleInterpolant(format!(
                        "{name} holds {} bytes, expected {}",
                        bytes.len(),
                        8 * shape.len()
                    )));
                }
                let data = bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                LinearTensor::new(shape, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            plan,
            kernel: manifest.kernel,
            hierarchies: hierarchies.to_vec(),
            coefficients,
            report: None,
        })
    }
}

/// Mode order for evaluation: each mode product costs the current size times the
/// output extent, so modes that shrink (or grow least) go first.
fn mode_order(j: &[usize], input: &Shape, output: &Shape) -> Vec<usize> {
    let mut order: Vec<usize> = (0..j.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = output.extent(a) as f64 / input.extent(a) as f64;
        let rb = output.extent(b) as f64 / input.extent(b) as f64;
        ra.total_cmp(&rb).then(a.cmp(&b))
    });
    order
}

const MANIFEST_FORMAT: u32 = 1;
const MANIFEST_FILE: &str = "manifest.json";
const PLAN_FILE: &str = "plan.txt";
const SHAPES_FILE: &str = "shapes.txt";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    level: usize,
    weights: WeightVector,
    kernel: ProductKernel,
    fingerprints: Vec<String>,
    coefficient_files: Vec<String>,
}
