use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sparse_kernel::combitech::{weight_strategy, CombinationPlan, WeightStrategy, WeightVector};
use sparse_kernel::geometry::{
    build_hierarchy_in, read_points, tensor_grid, uniform_cube, uniform_sphere, NestedHierarchy,
    PointSet,
};
use sparse_kernel::kernel::{MaternKernel, ProductKernel};
use sparse_kernel::metrics::DEFAULT_QUADRATURE_BUDGET;
use sparse_kernel::{Error, Result};

/// Sobolev order assumed for directions without an explicit Matérn order.
pub const DEFAULT_SMOOTHNESS: f64 = 25.0 / 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    /// Dyadic grids `{k / 2^(j+1)}^dim`.
    Grid,
    /// Points read from a file, coarsened by subsampling.
    Points,
    /// Uniform random points in the unit cube, coarsened by subsampling.
    Random,
    /// Uniform random points on the unit sphere, coarsened by subsampling.
    Sphere,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DirectionConfig {
    pub kind: SourceKind,
    pub dim: usize,
    pub boundary: bool,
    pub path: Option<PathBuf>,
    pub count: usize,
    pub seed: u64,
    /// Seed for breaking ties between equally central points; none keeps the first.
    pub tie_seed: Option<u64>,
    /// Lay the subsampling cuboids over the unit cube instead of the bounding box.
    pub unit_box: bool,
    pub beta: Option<f64>,
    pub sigma: Option<f64>,
}

impl Default for DirectionConfig {
    fn default() -> Self {
        Self {
            kind: SourceKind::Grid,
            dim: 1,
            boundary: false,
            path: None,
            count: 1000,
            seed: 1,
            tie_seed: None,
            unit_box: false,
            beta: None,
            sigma: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("invalid value {value:?} for {key}")))
}

impl DirectionConfig {
    /// `KIND[,key=value...]`, e.g. `grid,dim=2,boundary` or `points,path=x.txt,tie-seed=3`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut parts = spec.split(',').map(str::trim);
        let kind = match parts.next().unwrap_or("") {
            "grid" => SourceKind::Grid,
            "points" => SourceKind::Points,
            "random" => SourceKind::Random,
            "sphere" => SourceKind::Sphere,
            other => {
                return Err(Error::invalid(format!(
                    "unknown direction kind {other:?} in {spec:?} (expected grid, points, random or sphere)"
                )))
            }
        };
        let mut d = DirectionConfig {
            kind,
            dim: if kind == SourceKind::Sphere { 3 } else { 1 },
            ..Default::default()
        };
        for part in parts.filter(|p| !p.is_empty()) {
            let (key, value) = part.split_once('=').unwrap_or((part, ""));
            match key {
                "dim" => d.dim = parse_num(key, value)?,
                "boundary" => d.boundary = value.is_empty() || parse_num(key, value)?,
                "unit-box" => d.unit_box = value.is_empty() || parse_num(key, value)?,
                "path" => d.path = Some(PathBuf::from(value)),
                "count" => d.count = parse_num(key, value)?,
                "seed" => d.seed = parse_num(key, value)?,
                "tie-seed" => d.tie_seed = Some(parse_num(key, value)?),
                "beta" => d.beta = Some(parse_num(key, value)?),
                "sigma" => d.sigma = Some(parse_num(key, value)?),
                other => return Err(Error::invalid(format!("unknown direction option {other:?} in {spec:?}"))),
            }
        }
        Ok(d)
    }

    pub fn points_file(path: PathBuf) -> Self {
        Self {
            kind: SourceKind::Points,
            path: Some(path),
            ..Default::default()
        }
    }

    fn base_points(&self) -> Result<PointSet> {
        match self.kind {
            SourceKind::Grid => Err(Error::invalid("grid directions have no base sample")),
            SourceKind::Points => {
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::invalid("points direction needs path=FILE"))?;
                read_points(path)
            }
            SourceKind::Random => uniform_cube(self.count, self.dim, 0.0, 1.0, self.seed),
            SourceKind::Sphere => uniform_sphere(self.count, self.seed),
        }
    }

    /// Dimension of the direction's points.
    pub fn resolved_dim(&self) -> Result<usize> {
        match self.kind {
            SourceKind::Sphere => Ok(3),
            SourceKind::Points => Ok(self.base_points()?.dim()),
            _ => Ok(self.dim),
        }
    }

    pub fn hierarchy(&self, depth: usize) -> Result<NestedHierarchy> {
        match self.kind {
            SourceKind::Grid => NestedHierarchy::dyadic_grid(self.dim, depth, self.boundary),
            _ => {
                let x = self.base_points()?;
                let (lo, hi) = (vec![0.0; x.dim()], vec![1.0; x.dim()]);
                let bounds = self.unit_box.then_some((lo.as_slice(), hi.as_slice()));
                build_hierarchy_in(&x, depth, self.tie_seed, bounds)
            }
        }
    }

    pub fn kernel(&self, dim: usize) -> Result<MaternKernel> {
        let sigma = self.sigma.unwrap_or_else(|| MaternKernel::default_sigma(dim));
        match self.beta {
            Some(beta) => MaternKernel::new(beta, sigma, dim),
            None => MaternKernel::for_smoothness(DEFAULT_SMOOTHNESS, sigma, dim).map_err(|e| {
                e.context(format!("no Matérn order given for a {dim}-dimensional direction; pass beta=..."))
            }),
        }
    }

    /// Whether the direction's region is the unit cube, so tensor quadrature applies.
    pub fn is_unit_cube(&self) -> bool {
        matches!(self.kind, SourceKind::Grid | SourceKind::Random) || (self.kind == SourceKind::Points && self.unit_box)
    }

    /// Evaluation points: `n` per axis on a grid, or `n` random points, inside the region inset by `inset`.
    pub fn eval_points(&self, dim: usize, n: usize, random: bool, inset: f64, seed: u64) -> Result<PointSet> {
        if self.kind == SourceKind::Sphere {
            return uniform_sphere(n, seed);
        }
        let (lo, hi) = if self.kind == SourceKind::Points && !self.unit_box {
            self.base_points()?
                .bounding_box()
                .ok_or_else(|| Error::invalid("empty points file"))?
        } else {
            (vec![0.0; dim], vec![1.0; dim])
        };
        let unit = if random {
            uniform_cube(n, dim, inset, 1.0 - inset, seed)?
        } else {
            let axis = if n == 1 {
                vec![0.5]
            } else {
                (0..n).map(|k| inset + (1.0 - 2.0 * inset) * k as f64 / (n - 1) as f64).collect()
            };
            tensor_grid(&PointSet::new(1, axis)?, dim)?
        };
        let coords = unit
            .iter()
            .flat_map(|p| p.iter().enumerate().map(|(o, u)| lo[o] + u * (hi[o] - lo[o])).collect::<Vec<_>>())
            .collect();
        PointSet::new(dim, coords)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Points per axis of a tensor evaluation grid in every direction.
    pub grid: Option<usize>,
    /// Random points per direction; predictions are made on their product.
    pub random: Option<usize>,
    /// Full-dimensional points, one per line.
    pub points: Option<PathBuf>,
    pub inset: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            grid: None,
            random: None,
            points: None,
            inset: 0.1,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub directions: Vec<DirectionConfig>,
    /// Sparse-grid level `J`; the last level of a convergence run.
    pub level: usize,
    /// First level of a convergence run.
    pub min_level: usize,
    /// `accuracy`, `dof`, `cost-benefit` or an explicit list such as `1,2` or `33/41,1`.
    pub weights: String,
    /// Rate gain per direction for the weight strategies; defaults to twice the Sobolev order.
    pub gains: Option<Vec<f64>>,
    pub function: String,
    pub values: Option<PathBuf>,
    pub eval: EvalConfig,
    pub panels: Option<usize>,
    pub budget: usize,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            directions: vec![DirectionConfig::default()],
            level: 4,
            min_level: 0,
            weights: "accuracy".into(),
            gains: None,
            function: "const1".into(),
            values: None,
            eval: EvalConfig::default(),
            panels: None,
            budget: DEFAULT_QUADRATURE_BUDGET,
            threads: None,
            out: None,
        }
    }
}

/// `J` or `a..b` (inclusive).
pub fn parse_levels(spec: &str) -> Result<(usize, usize)> {
    match spec.split_once("..") {
        Some((a, b)) => {
            let (a, b): (usize, usize) = (parse_num("levels", a)?, parse_num("levels", b.trim_start_matches('='))?);
            if a > b {
                return Err(Error::invalid(format!("empty level range {spec:?}")));
            }
            Ok((a, b))
        }
        None => {
            let j = parse_num("levels", spec)?;
            Ok((j, j))
        }
    }
}

/// Number or fraction `p/q`.
fn parse_ratio(s: &str) -> Result<f64> {
    match s.split_once('/') {
        Some((p, q)) => Ok(parse_num::<f64>("weight", p)? / parse_num::<f64>("weight", q)?),
        None => parse_num("weight", s),
    }
}

pub fn parse_list(spec: &str) -> Result<Vec<f64>> {
    spec.split(',').map(parse_ratio).collect()
}

/// `beta=...,sigma=...`.
pub fn apply_kernel_spec(d: &mut DirectionConfig, spec: &str) -> Result<()> {
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("kernel option {part:?} is not key=value")))?;
        match key {
            "beta" => d.beta = Some(parse_ratio(value)?),
            "sigma" => d.sigma = Some(parse_ratio(value)?),
            other => return Err(Error::invalid(format!("unknown kernel option {other:?}"))),
        }
    }
    Ok(())
}

/// Everything needed to compute on a configuration.
pub struct Problem {
    pub kernel: ProductKernel,
    pub hierarchies: Vec<NestedHierarchy>,
    pub weights: WeightVector,
    pub dims: Vec<usize>,
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs serialize")
    }

    pub fn kernel(&self) -> Result<(ProductKernel, Vec<usize>)> {
        if self.directions.is_empty() {
            return Err(Error::invalid("at least one direction is required"));
        }
        let mut dims = Vec::with_capacity(self.directions.len());
        let mut factors = Vec::with_capacity(self.directions.len());
        for (i, d) in self.directions.iter().enumerate() {
            let dim = d.resolved_dim().map_err(|e| e.context(format!("geometry: direction {}", i + 1)))?;
            factors.push(d.kernel(dim).map_err(|e| e.context(format!("kernel: direction {}", i + 1)))?);
            dims.push(dim);
        }
        Ok((ProductKernel::new(factors)?, dims))
    }

    /// Weight vector and whether explicit values had to be normalized.
    pub fn weight_vector(&self, kernel: &ProductKernel) -> Result<(WeightVector, bool)> {
        let dims = kernel.dims();
        let gains = match &self.gains {
            Some(g) => g.clone(),
            None => kernel.factors().iter().map(|k| 2.0 * k.smoothness()).collect(),
        };
        match self.weights.parse::<WeightStrategy>() {
            Ok(kind) => Ok((weight_strategy(kind, &dims, &gains)?, false)),
            Err(_) => {
                let values = parse_list(&self.weights)
                    .map_err(|e| e.context(format!("combitech: weights {:?}", self.weights)))?;
                if values.len() != dims.len() {
                    return Err(Error::DimensionMismatch {
                        expected: dims.len(),
                        got: values.len(),
                    }
                    .context(format!("combitech: weights {:?}", self.weights)));
                }
                WeightVector::normalized(&values)
            }
        }
    }

    /// Kernel, hierarchies deep enough for level `self.level`, and weights.
    pub fn problem(&self, warn: &mut dyn FnMut(String)) -> Result<Problem> {
        let (kernel, dims) = self.kernel()?;
        let (weights, changed) = self.weight_vector(&kernel)?;
        if changed {
            warn(format!("weights {:?} normalized to {weights}", self.weights));
        }
        let plan = CombinationPlan::new(dims.len(), self.level, weights.clone())?;
        let hierarchies = self
            .directions
            .iter()
            .enumerate()
            .map(|(i, d)| {
                d.hierarchy(plan.max_level(i))
                    .map_err(|e| e.context(format!("geometry: direction {}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Problem {
            kernel,
            hierarchies,
            weights,
            dims,
        })
    }
}
