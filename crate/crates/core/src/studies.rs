//! Desk-scale reproduction studies.
//!
//! Each study measures one group of properties, compares every measurement
//! with an admissible range and renders a Markdown report. Every acceptance
//! criterion (numbered 1 to 10) is owned by exactly one study.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::combitech::{
    coefficient, index_set, predicted_rate, weight_strategy, CombinationPlan, WeightStrategy, WeightVector,
};
use crate::error::{Error, Result};
use crate::functions::TestFunction;
use crate::geometry::{build_hierarchy, equidistant_grid, tensor_grid, uniform_cube, NestedHierarchy, PointSet};
use crate::interpolant::{assemble_rhs, compute, DataSource, SparseGridInterpolant, ValueTable};
use crate::kernel::{kernel_matrix, MaternKernel, ProductKernel};
use crate::linalg::Matrix;
use crate::metrics::{
    fit_order, gauss_legendre_4, l2_error, random_eval_grids, rms_error_on_grids, ConvergenceRecord,
    DEFAULT_QUADRATURE_BUDGET,
};
use crate::solver::factorize;
use crate::tensor::{
    dematricize, matricize, matricize_index, to_multi_index, to_scalar_index, LinearTensor, Shape,
};

pub const STUDY_NAMES: [&str; 10] = [
    "tensor-algebra",
    "kronecker-oracle",
    "combination-coefficients",
    "sparse-grid-exactness",
    "fig4-analog",
    "fig7-analog",
    "table1-analog",
    "fig1-analog",
    "numerical-hygiene",
    "timing-sweep",
];

/// A study as shipped in `bench/`: its configuration file and what a run should show.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyScript {
    pub name: &'static str,
    /// Path of the JSON configuration, relative to the workspace root.
    pub config: &'static str,
    /// Acceptance criteria decided by this study.
    pub criteria: &'static [u32],
    pub expected: &'static str,
    pub tolerances: &'static str,
}

pub const SCRIPTS: [StudyScript; 10] = [
    StudyScript {
        name: "tensor-algebra",
        config: "bench/tensor-algebra.json",
        criteria: &[1],
        expected: "index round trips and mode unfoldings are bijections for every shape",
        tolerances: "exact; under 10 s",
    },
    StudyScript {
        name: "kronecker-oracle",
        config: "bench/kronecker-oracle.json",
        criteria: &[2],
        expected: "directional solves match dense solves of the assembled Kronecker system",
        tolerances: "relative error <= 1e-10 over 50 trials; under 30 s",
    },
    StudyScript {
        name: "combination-coefficients",
        config: "bench/combination-coefficients.json",
        criteria: &[3],
        expected: "coefficients sum to one, vanish outside the index set and match brute force",
        tolerances: "exact integers; under 5 s",
    },
    StudyScript {
        name: "sparse-grid-exactness",
        config: "bench/sparse-grid-exactness.json",
        criteria: &[4],
        expected: "the combined interpolant reproduces the data at every plan node",
        tolerances: "relative error <= 1e-6; under 2 min",
    },
    StudyScript {
        name: "fig4-analog",
        config: "bench/fig4-analog.json",
        criteria: &[5, 6],
        expected: "L2 error of f = 1 against N for m = 1, 2, 3 with isotropic weights",
        tolerances: "order in [2.8, 3.4] for m = 1 (under 1 min); >= 2.5 for m = 2 and >= 2.2 for m = 3 (under 10 min)",
    },
    StudyScript {
        name: "fig7-analog",
        config: "bench/fig7-analog.json",
        criteria: &[7],
        expected: "RMS error against N for mixed dimensions under the three weight strategies",
        tolerances: "order in [1.2, 1.9] for dims (1,2); dims (1,2,3) soft in [0.7, 1.4]; under 15 min",
    },
    StudyScript {
        name: "table1-analog",
        config: "bench/table1-analog.json",
        criteria: &[8],
        expected: "interval hierarchies hold 1, 3, 7, 15, ... points and tensor grids (2^(j+1)+1)^d",
        tolerances: "exact",
    },
    StudyScript {
        name: "fig1-analog",
        config: "bench/fig1-analog.json",
        criteria: &[9],
        expected: "subsampling 1000 points on the unit square is nested and matches the occupancy oracle",
        tolerances: "exact counts; fill distance <= sqrt(2) 2^-j; under 5 s",
    },
    StudyScript {
        name: "numerical-hygiene",
        config: "bench/numerical-hygiene.json",
        criteria: &[10],
        expected: "closed forms, quadrature exactness, scaling invariance and thread-count determinism",
        tolerances: "1e-12, 1e-14, 1e-12 and byte-identical output",
    },
    StudyScript {
        name: "timing-sweep",
        config: "bench/timing-sweep.json",
        criteria: &[],
        expected: "wall time of compute and evaluate as N grows; trends only",
        tolerances: "none",
    },
];

pub fn script(name: &str) -> Result<&'static StudyScript> {
    SCRIPTS
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::invalid(format!("unknown study {name:?} (known: {})", STUDY_NAMES.join(", "))))
}

/// One measured quantity and its admissible closed range.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub criterion: u32,
    pub label: String,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    /// Reported only; does not decide the study outcome.
    pub soft: bool,
}

impl Check {
    fn new(criterion: u32, label: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            criterion,
            label: label.into(),
            value,
            lo,
            hi,
            soft: false,
        }
    }

    fn soft(mut self) -> Self {
        self.soft = true;
        self
    }

    pub fn passed(&self) -> bool {
        self.lo <= self.value && self.value <= self.hi
    }

    pub fn range(&self) -> String {
        match (self.lo.is_finite(), self.hi.is_finite()) {
            (true, true) if self.lo == self.hi => format!("= {}", fmt_num(self.lo)),
            (true, true) => format!("in [{}, {}]", fmt_num(self.lo), fmt_num(self.hi)),
            (true, false) => format!(">= {}", fmt_num(self.lo)),
            (false, true) => format!("<= {}", fmt_num(self.hi)),
            (false, false) => "unbounded".into(),
        }
    }
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 || (1e-3..1e5).contains(&v.abs()) {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.3e}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(title: impl Into<String>, header: &[&str]) -> Self {
        Self {
            title: title.into(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub name: String,
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
    pub notes: Vec<String>,
    pub elapsed_secs: f64,
}

impl StudyReport {
    fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            checks: Vec::new(),
            tables: Vec::new(),
            notes: Vec::new(),
            elapsed_secs: 0.0,
        }
    }

    /// All hard checks passed.
    pub fn passed(&self) -> bool {
        self.checks.iter().filter(|c| !c.soft).all(Check::passed)
    }

    pub fn checks_for(&self, criterion: u32) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(move |c| c.criterion == criterion)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        let _ = writeln!(s, "## {} ({verdict}, {:.1} s)\n", self.name, self.elapsed_secs);
        if !self.checks.is_empty() {
            s.push_str("| criterion | check | measured | target | result |\n|---|---|---|---|---|\n");
            for c in &self.checks {
                let result = match (c.passed(), c.soft) {
                    (true, _) => "pass",
                    (false, true) => "outside (reported only)",
                    (false, false) => "FAIL",
                };
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {result} |",
                    c.criterion,
                    c.label,
                    fmt_num(c.value),
                    c.range()
                );
            }
            s.push('\n');
        }
        for t in &self.tables {
            let _ = writeln!(s, "**{}**\n", t.title);
            let _ = writeln!(s, "| {} |", t.header.join(" | "));
            let _ = writeln!(s, "|{}", "---|".repeat(t.header.len()));
            for r in &t.rows {
                let _ = writeln!(s, "| {} |", r.join(" | "));
            }
            s.push('\n');
        }
        for n in &self.notes {
            let _ = writeln!(s, "- {n}");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TensorAlgebraParams {
    pub max_modes: usize,
    pub max_extent: usize,
    pub max_len: usize,
    /// Long shapes checked exhaustively in addition to the small-extent family.
    pub extra_shapes: Vec<Vec<usize>>,
    pub max_runtime_secs: f64,
}

impl Default for TensorAlgebraParams {
    fn default() -> Self {
        Self {
            max_modes: 4,
            max_extent: 10,
            max_len: 10_000,
            extra_shapes: vec![
                vec![10_000],
                vec![1, 10_000],
                vec![100, 100],
                vec![7, 1, 1_428],
                vec![2, 5_000],
                vec![25, 20, 20],
                vec![3, 1, 3_333],
                vec![10, 10, 10, 10],
                vec![16, 5, 25, 5],
            ],
            max_runtime_secs: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KroneckerParams {
    pub trials: usize,
    pub modes: Vec<usize>,
    pub max_size: usize,
    pub max_point_dim: usize,
    /// Matérn orders and length scales are drawn uniformly from these intervals.
    pub beta_range: [f64; 2],
    pub sigma_range: [f64; 2],
    /// Points of a set keep at least `separation * n^(-1/d)` apart.
    pub separation: f64,
    pub seed: u64,
    pub tolerance: f64,
    pub max_runtime_secs: f64,
}

impl Default for KroneckerParams {
    fn default() -> Self {
        Self {
            trials: 50,
            modes: vec![2, 3],
            max_size: 12,
            max_point_dim: 2,
            beta_range: [0.5, 1.5],
            sigma_range: [0.1, 0.3],
            separation: 0.25,
            seed: 20_240_601,
            tolerance: 1e-10,
            max_runtime_secs: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoefficientParams {
    pub max_modes: usize,
    pub max_level: usize,
    /// Direction dimensions and smoothness gains fed to the weight strategies.
    pub dims: Vec<usize>,
    pub gains: Vec<f64>,
    pub max_runtime_secs: f64,
}

impl Default for CoefficientParams {
    fn default() -> Self {
        Self {
            max_modes: 4,
            max_level: 8,
            dims: vec![1, 2, 3, 2],
            gains: vec![25.0 / 8.0, 2.0, 1.5, 3.0],
            max_runtime_secs: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExactnessParams {
    pub max_level: usize,
    pub scattered_points: usize,
    pub seed: u64,
    pub function: String,
    pub tolerance: f64,
    pub max_runtime_secs: f64,
}

impl Default for ExactnessParams {
    fn default() -> Self {
        Self {
            max_level: 5,
            scattered_points: 600,
            seed: 11,
            function: "prodexp".into(),
            tolerance: 1e-6,
            max_runtime_secs: 120.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig4Params {
    pub beta: f64,
    pub sigma: f64,
    pub univariate_levels: [usize; 2],
    pub bivariate_levels: [usize; 2],
    pub trivariate_levels: [usize; 2],
    /// Panels are doubled from this value until the finest-level error changes by less than
    /// `panel_tolerance` (relative), or the quadrature budget is reached.
    pub panel_start: usize,
    pub panel_tolerance: f64,
    pub budget: usize,
    pub univariate_order: [f64; 2],
    pub bivariate_min_order: f64,
    pub trivariate_min_order: f64,
    pub univariate_max_runtime_secs: f64,
    pub multivariate_max_runtime_secs: f64,
}

impl Default for Fig4Params {
    fn default() -> Self {
        Self {
            beta: 17.0 / 16.0,
            sigma: 2.0,
            univariate_levels: [5, 8],
            bivariate_levels: [3, 7],
            trivariate_levels: [3, 6],
            panel_start: 4,
            panel_tolerance: 0.01,
            budget: 1 << 28,
            univariate_order: [2.8, 3.4],
            bivariate_min_order: 2.5,
            trivariate_min_order: 2.2,
            univariate_max_runtime_secs: 60.0,
            multivariate_max_runtime_secs: 600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixedCase {
    pub dims: Vec<usize>,
    /// Largest hierarchy level available per direction.
    pub level_caps: Vec<usize>,
    pub max_level: usize,
    /// Rows with `J` below this are recorded but left out of the fit.
    pub fit_from: usize,
    pub order: [f64; 2],
    pub soft: bool,
}

impl Default for MixedCase {
    fn default() -> Self {
        Self {
            dims: vec![1, 2],
            level_caps: vec![10, 5],
            max_level: 6,
            fit_from: 1,
            order: [1.2, 1.9],
            soft: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig7Params {
    /// Sobolev order of every direction; the Matérn order is this minus `d/2`.
    pub smoothness: f64,
    /// Rate gain per direction for the weight strategies.
    pub gain: f64,
    pub cases: Vec<MixedCase>,
    pub eval_points: usize,
    pub inset: f64,
    pub seed: u64,
    pub max_runtime_secs: f64,
}

impl Default for Fig7Params {
    fn default() -> Self {
        Self {
            smoothness: 25.0 / 16.0,
            gain: 25.0 / 8.0,
            cases: vec![
                MixedCase::default(),
                MixedCase {
                    dims: vec![1, 2, 3],
                    level_caps: vec![10, 5, 3],
                    max_level: 5,
                    fit_from: 1,
                    order: [0.7, 1.4],
                    soft: true,
                },
            ],
            eval_points: 100,
            inset: 0.1,
            seed: 53,
            max_runtime_secs: 900.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Table1Params {
    /// Counts reported for the interval, levels `0, 1, 2, ...`.
    pub interval_counts: Vec<usize>,
    /// Deepest level for which full hierarchies (with statistics) are built.
    pub hierarchy_level: usize,
    /// Random sample coarsened by the subsampling algorithm.
    pub random_points: usize,
    pub random_level: usize,
    pub seed: u64,
    /// Deepest hierarchy level per tensor dimension `1, 2, 3`.
    pub tensor_levels: Vec<usize>,
    pub tensor_count_levels: usize,
}

impl Default for Table1Params {
    fn default() -> Self {
        Self {
            interval_counts: vec![
                1, 3, 7, 15, 31, 63, 127, 255, 511, 1023, 2047, 4095, 8191, 16383, 32767, 65535, 131071, 262143,
            ],
            hierarchy_level: 10,
            random_points: 1 << 16,
            random_level: 10,
            seed: 4_319,
            tensor_levels: vec![10, 5, 3],
            tensor_count_levels: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig1Params {
    pub points: usize,
    pub max_level: usize,
    pub seed: u64,
    pub max_runtime_secs: f64,
}

impl Default for Fig1Params {
    fn default() -> Self {
        Self {
            points: 1000,
            max_level: 3,
            seed: 1,
            max_runtime_secs: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HygieneParams {
    pub closed_form_tolerance: f64,
    pub quadrature_tolerance: f64,
    pub scaling_tolerance: f64,
    pub scalings: Vec<f64>,
    pub thread_counts: Vec<usize>,
}

impl Default for HygieneParams {
    fn default() -> Self {
        Self {
            closed_form_tolerance: 1e-12,
            quadrature_tolerance: 1e-14,
            scaling_tolerance: 1e-12,
            scalings: vec![3.7, 0.29],
            thread_counts: vec![1, 2, 3, 8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingParams {
    pub bivariate_levels: [usize; 2],
    pub trivariate_levels: [usize; 2],
    pub eval_points: usize,
}

impl Default for TimingParams {
    fn default() -> Self {
        Self {
            bivariate_levels: [2, 9],
            trivariate_levels: [2, 7],
            eval_points: 32,
        }
    }
}

/// A study together with its parameters; the JSON form is `{"study": name, ...params}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "kebab-case")]
pub enum StudyConfig {
    TensorAlgebra(TensorAlgebraParams),
    KroneckerOracle(KroneckerParams),
    CombinationCoefficients(CoefficientParams),
    SparseGridExactness(ExactnessParams),
    #[serde(rename = "fig4-analog")]
    Fig4Analog(Fig4Params),
    #[serde(rename = "fig7-analog")]
    Fig7Analog(Fig7Params),
    #[serde(rename = "table1-analog")]
    Table1Analog(Table1Params),
    #[serde(rename = "fig1-analog")]
    Fig1Analog(Fig1Params),
    NumericalHygiene(HygieneParams),
    TimingSweep(TimingParams),
}

impl StudyConfig {
    pub fn default_for(name: &str) -> Result<Self> {
        Ok(match name {
            "tensor-algebra" => Self::TensorAlgebra(Default::default()),
            "kronecker-oracle" => Self::KroneckerOracle(Default::default()),
            "combination-coefficients" => Self::CombinationCoefficients(Default::default()),
            "sparse-grid-exactness" => Self::SparseGridExactness(Default::default()),
            "fig4-analog" => Self::Fig4Analog(Default::default()),
            "fig7-analog" => Self::Fig7Analog(Default::default()),
            "table1-analog" => Self::Table1Analog(Default::default()),
            "fig1-analog" => Self::Fig1Analog(Default::default()),
            "numerical-hygiene" => Self::NumericalHygiene(Default::default()),
            "timing-sweep" => Self::TimingSweep(Default::default()),
            other => {
                return Err(Error::invalid(format!(
                    "unknown study {other:?} (known: {})",
                    STUDY_NAMES.join(", ")
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::TensorAlgebra(_) => "tensor-algebra",
            Self::KroneckerOracle(_) => "kronecker-oracle",
            Self::CombinationCoefficients(_) => "combination-coefficients",
            Self::SparseGridExactness(_) => "sparse-grid-exactness",
            Self::Fig4Analog(_) => "fig4-analog",
            Self::Fig7Analog(_) => "fig7-analog",
            Self::Table1Analog(_) => "table1-analog",
            Self::Fig1Analog(_) => "fig1-analog",
            Self::NumericalHygiene(_) => "numerical-hygiene",
            Self::TimingSweep(_) => "timing-sweep",
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("study config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("study configs serialize")
    }
}

/// Runs the named study with its default parameters.
pub fn run_study(name: &str) -> Result<StudyReport> {
    run_config(&StudyConfig::default_for(name)?)
}

pub fn run_config(config: &StudyConfig) -> Result<StudyReport> {
    let start = Instant::now();
    let mut report = match config {
        StudyConfig::TensorAlgebra(p) => tensor_algebra(p),
        StudyConfig::KroneckerOracle(p) => kronecker_oracle(p),
        StudyConfig::CombinationCoefficients(p) => combination_coefficients(p),
        StudyConfig::SparseGridExactness(p) => sparse_grid_exactness(p),
        StudyConfig::Fig4Analog(p) => fig4_analog(p),
        StudyConfig::Fig7Analog(p) => fig7_analog(p),
        StudyConfig::Table1Analog(p) => table1_analog(p),
        StudyConfig::Fig1Analog(p) => fig1_analog(p),
        StudyConfig::NumericalHygiene(p) => numerical_hygiene(p),
        StudyConfig::TimingSweep(p) => timing_sweep(p),
    }
    .map_err(|e| e.context(format!("study {}", config.name())))?;
    report.elapsed_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

fn runtime_check(criterion: u32, start: Instant, limit: f64) -> Check {
    Check::new(criterion, "runtime [s]", start.elapsed().as_secs_f64(), 0.0, limit)
}

/// Calls `f` for every extent vector with `modes` entries in `1..=max_extent` and product `<= max_len`.
fn for_each_shape(modes: usize, max_extent: usize, max_len: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(prefix: &mut Vec<usize>, left: usize, max_extent: usize, budget: usize, f: &mut dyn FnMut(&[usize])) {
        if left == 0 {
            f(prefix);
            return;
        }
        for n in 1..=max_extent.min(budget) {
            prefix.push(n);
            rec(prefix, left - 1, max_extent, budget / n, f);
            prefix.pop();
        }
    }
    rec(&mut Vec::with_capacity(modes), modes, max_extent, max_len, f);
}

/// Mismatches found while checking index round trips and unfoldings of one shape.
fn check_shape(extents: &[usize]) -> Result<usize> {
    let shape = Shape::new(extents.to_vec())?;
    let len = shape.len();
    let mut bad = 0;
    for p in 0..len {
        let k = to_multi_index(p, &shape)?;
        if k.iter().zip(extents).any(|(a, n)| a >= n) || to_scalar_index(&k, &shape)? != p {
            bad += 1;
        }
    }
    let t = LinearTensor::new(shape.clone(), (0..len).map(|v| v as f64).collect())?;
    for mode in 0..extents.len() {
        let n = extents[mode];
        let cols = len / n;
        let rest: Vec<usize> = (0..extents.len()).filter(|&o| o != mode).collect();
        let mut seen = vec![false; len];
        let unfolded = matricize(&t, mode)?;
        for o in 0..n {
            for q in 0..cols {
                let z = matricize_index(mode, o, q, &shape)?;
                // column q enumerates the remaining modes in order, last fastest
                let mut k = vec![0; extents.len()];
                k[mode] = o;
                let mut r = q;
                for &i in rest.iter().rev() {
                    k[i] = r % extents[i];
                    r /= extents[i];
                }
                if z >= len || seen[z] || z != to_scalar_index(&k, &shape)? || unfolded[(o, q)] != z as f64 {
                    bad += 1;
                } else {
                    seen[z] = true;
                }
            }
        }
        bad += seen.iter().filter(|s| !**s).count();
        if dematricize(&unfolded, mode, &shape)? != t {
            bad += 1;
        }
    }
    Ok(bad)
}

fn tensor_algebra(p: &TensorAlgebraParams) -> Result<StudyReport> {
    let start = Instant::now();
    let mut report = StudyReport::new("tensor-algebra");
    let mut mismatches = 0;
    let mut shapes = 0usize;
    let mut entries = 0usize;
    let mut failure: Option<Error> = None;
    for modes in 1..=p.max_modes {
        for_each_shape(modes, p.max_extent, p.max_len, &mut |ext| {
            if failure.is_some() {
                return;
            }
            match check_shape(ext) {
                Ok(b) => mismatches += b,
                Err(e) => failure = Some(e),
            }
            shapes += 1;
            entries += ext.iter().product::<usize>();
        });
    }
    for ext in &p.extra_shapes {
        if ext.len() > p.max_modes || ext.iter().product::<usize>() > p.max_len {
            return Err(Error::invalid(format!("extra shape {ext:?} exceeds the study limits")));
        }
        mismatches += check_shape(ext)?;
        shapes += 1;
        entries += ext.iter().product::<usize>();
    }
    if let Some(e) = failure {
        return Err(e);
    }
    report.checks.push(Check::new(1, "index and unfolding mismatches", mismatches as f64, 0.0, 0.0));
    report.checks.push(runtime_check(1, start, p.max_runtime_secs));
    report.notes.push(format!(
        "{shapes} shapes with up to {} modes (every extent vector with entries up to {} plus {} long shapes), {entries} entries in total",
        p.max_modes,
        p.max_extent,
        p.extra_shapes.len()
    ));
    Ok(report)
}

/// Gaussian elimination with partial pivoting.
fn dense_solve(mut a: Matrix, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = a.rows();
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&x, &y| a[(x, c)].abs().total_cmp(&a[(y, c)].abs()))
            .unwrap();
        if a[(piv, c)] == 0.0 {
            return Err(Error::invalid("singular dense system"));
        }
        if piv != c {
            for k in 0..n {
                let tmp = a[(c, k)];
                a.as_mut_slice()[c * n + k] = a[(piv, k)];
                a.as_mut_slice()[piv * n + k] = tmp;
            }
            b.swap(c, piv);
        }
        let pivot = a[(c, c)];
        for r in c + 1..n {
            let factor = a[(r, c)] / pivot;
            if factor != 0.0 {
                let data = a.as_mut_slice();
                for k in c..n {
                    data[r * n + k] -= factor * data[c * n + k];
                }
                b[r] -= factor * b[c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[(r, k)] * x[k]).sum();
        x[r] = (b[r] - s) / a[(r, r)];
    }
    Ok(x)
}

/// Explicit Kronecker product of the factors, rows and columns in stride order.
fn kronecker(factors: &[Matrix]) -> Matrix {
    let n: usize = factors.iter().map(|f| f.rows()).product();
    let extents: Vec<usize> = factors.iter().map(|f| f.rows()).collect();
    let shape = Shape::new(extents).expect("nonempty factors");
    let idx: Vec<Vec<usize>> = (0..n).map(|p| to_multi_index(p, &shape).unwrap()).collect();
    Matrix::from_fn(n, n, |r, c| {
        factors
            .iter()
            .enumerate()
            .map(|(i, f)| f[(idx[r][i], idx[c][i])])
            .product()
    })
}

fn separated_points(rng: &mut ChaCha8Rng, n: usize, d: usize, separation: f64) -> Result<PointSet> {
    let min_dist = separation * (n as f64).powf(-1.0 / d as f64);
    let mut coords: Vec<f64> = Vec::with_capacity(n * d);
    let mut attempts = 0;
    while coords.len() < n * d {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::invalid("could not place separated random points"));
        }
        let cand: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let ok = coords.chunks(d).all(|p| {
            p.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= min_dist
        });
        if ok {
            coords.extend(cand);
        }
    }
    PointSet::new(d, coords)
}

fn kronecker_oracle(p: &KroneckerParams) -> Result<StudyReport> {
    let start = Instant::now();
    let mut report = StudyReport::new("kronecker-oracle");
    if p.modes.is_empty() || p.max_size == 0 || p.max_point_dim == 0 {
        return Err(Error::invalid("kronecker study needs modes, sizes and point dimensions"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut worst: f64 = 0.0;
    let mut table = Table::new("Trials", &["trial", "m", "sizes", "condition estimate", "relative error"]);
    for trial in 0..p.trials {
        let m = p.modes[trial % p.modes.len()];
        let mut factors = Vec::with_capacity(m);
        let mut hierarchies = Vec::with_capacity(m);
        for _ in 0..m {
            let d = rng.random_range(1..=p.max_point_dim);
            let n = rng.random_range(1..=p.max_size);
            let beta = rng.random_range(p.beta_range[0]..=p.beta_range[1]);
            let sigma = rng.random_range(p.sigma_range[0]..=p.sigma_range[1]);
            let pts = separated_points(&mut rng, n, d, p.separation)?;
            factors.push(MaternKernel::new(beta, sigma, d)?);
            hierarchies.push(NestedHierarchy::from_levels(pts, vec![(0..n).collect()])?);
        }
        let kernel = ProductKernel::new(factors)?;
        let mut values = ValueTable::new();
        let shape = Shape::new(hierarchies.iter().map(|h| h.base().len()).collect())?;
        let mut rhs = Vec::with_capacity(shape.len());
        for q in 0..shape.len() {
            let v: f64 = rng.sample(StandardNormal);
            values.insert(to_multi_index(q, &shape)?, v);
            rhs.push(v);
        }
        let interp = compute(&kernel, &hierarchies, &DataSource::Table(&values), WeightVector::ones(m), 0)?;
        let grams = hierarchies
            .iter()
            .enumerate()
            .map(|(i, h)| kernel_matrix(kernel.factor(i), h.base(), None))
            .collect::<Result<Vec<_>>>()?;
        let condition: f64 = grams
            .iter()
            .map(|g| factorize(g).map(|f| f.condition_estimate()))
            .product::<Result<f64>>()?;
        let dense = dense_solve(kronecker(&grams), rhs)?;
        let alpha = interp.coefficients()[0].data();
        let scale = dense.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let err = alpha
            .iter()
            .zip(&dense)
            .fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()))
            / scale;
        worst = worst.max(err);
        if trial < 10 || err > p.tolerance {
            table.push(vec![
                trial.to_string(),
                m.to_string(),
                format!("{:?}", shape.extents()),
                format!("{condition:.1e}"),
                format!("{err:.2e}"),
            ]);
        }
    }
    report.checks.push(Check::new(2, "max relative error vs dense Kronecker solve", worst, 0.0, p.tolerance));
    report.checks.push(runtime_check(2, start, p.max_runtime_secs));
    report.tables.push(table);
    Ok(report)
}

/// `sum_{z in {0,1}^m} (-1)^|z| [j + z in the downward set]`, by enumeration.
fn brute_coefficient(j: &[usize], w: &WeightVector, level: usize) -> i64 {
    let m = j.len();
    (0u32..1 << m)
        .map(|mask| {
            let shifted: Vec<usize> = (0..m).map(|i| j[i] + ((mask >> i) & 1) as usize).collect();
            if w.within(&shifted, level) {
                if mask.count_ones() % 2 == 0 {
                    1
                } else {
                    -1
                }
            } else {
                0
            }
        })
        .sum()
}

fn combination_coefficients(p: &CoefficientParams) -> Result<StudyReport> {
    let start = Instant::now();
    let mut report = StudyReport::new("combination-coefficients");
    if p.dims.len() < p.max_modes || p.gains.len() < p.max_modes {
        return Err(Error::invalid("dims and gains must cover max_modes directions"));
    }
    let mut worst_sum = 0i64;
    let mut outside = 0usize;
    let mut mismatched = 0usize;
    let mut plans = 0usize;
    for m in 1..=p.max_modes {
        let mut weights: Vec<WeightVector> = vec![WeightVector::ones(m)];
        for kind in WeightStrategy::ALL {
            weights.push(weight_strategy(kind, &p.dims[..m], &p.gains[..m])?);
        }
        for w in &weights {
            for level in 0..=p.max_level {
                let plan = CombinationPlan::new(m, level, w.clone())?;
                plans += 1;
                worst_sum = worst_sum.max((plan.coefficient_sum() - 1).abs());
                for e in plan.entries() {
                    if brute_coefficient(&e.index, w, level) != e.coefficient {
                        mismatched += 1;
                    }
                }
                let members = index_set(m, level, w)?;
                let wmin = w.values().iter().copied().fold(f64::INFINITY, f64::min);
                let edge = (level as f64 / wmin).floor() as usize + 2;
                let shape = Shape::new(vec![edge + 1; m])?;
                for q in 0..shape.len() {
                    let j = to_multi_index(q, &shape)?;
                    let inside = members.binary_search(&j).is_ok();
                    let c = coefficient(&j, w, level)?;
                    if !inside && c != 0 {
                        outside += 1;
                    }
                    if inside && c != brute_coefficient(&j, w, level) {
                        mismatched += 1;
                    }
                }
            }
        }
    }
    let expected: Vec<(Vec<usize>, i64)> = vec![
        (vec![0, 1], -1),
        (vec![0, 2], 1),
        (vec![1, 0], -1),
        (vec![1, 1], 1),
        (vec![2, 0], 1),
    ];
    let plan = CombinationPlan::new(2, 2, WeightVector::ones(2))?;
    let got: Vec<(Vec<usize>, i64)> = plan
        .entries()
        .iter()
        .map(|e| (e.index.clone(), e.coefficient))
        .collect();
    report.checks.push(Check::new(3, "max |sum of coefficients - 1|", worst_sum as f64, 0.0, 0.0));
    report.checks.push(Check::new(3, "nonzero coefficients outside the index set", outside as f64, 0.0, 0.0));
    report.checks.push(Check::new(3, "coefficients differing from brute force", mismatched as f64, 0.0, 0.0));
    report.checks.push(Check::new(
        3,
        "m=2, w=(1,1), J=2 plan equals the classical one",
        f64::from(u8::from(got == expected)),
        1.0,
        1.0,
    ));
    report.checks.push(runtime_check(3, start, p.max_runtime_secs));
    report.notes.push(format!("{plans} plans checked; plan m=2, J=2: {}", plan.to_text().trim().replace('\n', "; ")));
    Ok(report)
}

fn sparse_grid_exactness(p: &ExactnessParams) -> Result<StudyReport> {
    let start = Instant::now();
    let mut report = StudyReport::new("sparse-grid-exactness");
    let f: TestFunction = p.function.parse()?;
    let func = move |x: &[f64]| f.eval(x);
    let top = p.max_level;
    let line = || -> Result<(MaternKernel, NestedHierarchy)> {
        Ok((
            MaternKernel::new(17.0 / 16.0, 2.0, 1)?,
            NestedHierarchy::dyadic_grid(1, 2 * top, false)?,
        ))
    };
    let scattered = build_hierarchy(&uniform_cube(p.scattered_points, 2, 0.0, 1.0, p.seed)?, top, Some(p.seed))?;
    let plane = (MaternKernel::with_default_sigma(9.0 / 16.0, 2)?, scattered);
    let mut cases: Vec<(String, Vec<(MaternKernel, NestedHierarchy)>, WeightVector, usize)> = Vec::new();
    cases.push(("m=1 interval".into(), vec![line()?], WeightVector::ones(1), top));
    cases.push(("m=2 intervals, w=(1,1)".into(), vec![line()?, line()?], WeightVector::ones(2), top));
    cases.push((
        "m=2 interval x scattered square, w=(1/2,1)".into(),
        vec![line()?, plane.clone()],
        WeightVector::from_ratio(&[1, 2])?,
        top,
    ));
    cases.push((
        "m=3 intervals, w=(1,1,1)".into(),
        vec![line()?, line()?, line()?],
        WeightVector::ones(3),
        top,
    ));
    cases.push((
        "m=3 interval x square x interval, w=(1,1,1)".into(),
        vec![line()?, plane.clone(), line()?],
        WeightVector::ones(3),
        top.min(4),
    ));
    let mut table = Table::new("Node reproduction", &["case", "J", "plan entries", "N", "max relative error"]);
    let mut worst: f64 = 0.0;
    for (name, dirs, w, level) in cases {
        let kernel = ProductKernel::new(dirs.iter().map(|d| d.0).collect())?;
        let hierarchies: Vec<NestedHierarchy> = dirs.into_iter().map(|d| d.1).collect();
        let data = DataSource::Function(&func);
        let interp = compute(&kernel, &hierarchies, &data, w, level)?;
        let mut err: f64 = 0.0;
        for e in interp.plan().entries() {
            let grids: Vec<PointSet> = e
                .index
                .iter()
                .zip(&hierarchies)
                .map(|(&j, h)| h.level_points(j))
                .collect();
            let u = interp.evaluate(&grids)?;
            let fj = assemble_rhs(&data, &hierarchies, &e.index)?;
            let scale = fj.data().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            let diff = u.data().iter().zip(fj.data()).fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()));
            err = err.max(diff / scale);
        }
        worst = worst.max(err);
        let r = interp.report().expect("fresh interpolant");
        table.push(vec![
            name,
            level.to_string(),
            r.plan_entries.to_string(),
            r.degrees_of_freedom.to_string(),
            format!("{err:.2e}"),
        ]);
    }
    report.checks.push(Check::new(4, "max relative error at plan nodes", worst, 0.0, p.tolerance));
    report.checks.push(runtime_check(4, start, p.max_runtime_secs));
    report.tables.push(table);
    Ok(report)
}

/// Isotropic intervals setting: `m` boundary-free dyadic interval hierarchies.
fn interval_problem(m: usize, beta: f64, sigma: f64, top: usize) -> Result<(ProductKernel, Vec<NestedHierarchy>)> {
    let kernel = ProductKernel::new(vec![MaternKernel::new(beta, sigma, 1)?; m])?;
    let h = NestedHierarchy::dyadic_grid(1, top, false)?;
    Ok((kernel, vec![h; m]))
}

struct PanelChoice {
    panels: usize,
    error: f64,
    change: f64,
    converged: bool,
}

/// Doubles the panel count until the error changes by less than `tol`, or the budget stops it.
fn converged_panels(
    interp: &SparseGridInterpolant,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    start: usize,
    tol: f64,
    budget: usize,
) -> Result<PanelChoice> {
    let mut panels = start.max(1);
    let mut error = l2_error(interp, f, panels, budget)?;
    let mut change = f64::INFINITY;
    loop {
        match l2_error(interp, f, 2 * panels, budget) {
            Ok(next) => {
                change = (next - error).abs() / next.abs().max(f64::MIN_POSITIVE);
                panels *= 2;
                error = next;
                if change < tol {
                    return Ok(PanelChoice {
                        panels,
                        error,
                        change,
                        converged: true,
                    });
                }
            }
            Err(Error::Budget { .. }) => {
                return Ok(PanelChoice {
                    panels,
                    error,
                    change,
                    converged: false,
                })
            }
            Err(e) => return Err(e),
        }
    }
}

struct ConvergenceRun {
    record: ConvergenceRecord,
    single_panel: ConvergenceRecord,
    choice: PanelChoice,
}

fn isotropic_run(m: usize, levels: [usize; 2], p: &Fig4Params) -> Result<ConvergenceRun> {
    let (kernel, hierarchies) = interval_problem(m, p.beta, p.sigma, levels[1])?;
    let one = |_: &[f64]| 1.0;
    let data = DataSource::Function(&one);
    let mut interps = BTreeMap::new();
    for j in levels[0]..=levels[1] {
        interps.insert(j, compute(&kernel, &hierarchies, &data, WeightVector::ones(m), j)?);
    }
    let finest = &interps[&levels[1]];
    let choice = converged_panels(finest, &one, p.panel_start, p.panel_tolerance, p.budget)?;
    let mut record = ConvergenceRecord::new();
    let mut single_panel = ConvergenceRecord::new();
    for (&j, interp) in &interps {
        let n = interp.report().expect("fresh interpolant").degrees_of_freedom;
        let e = if j == levels[1] {
            choice.error
        } else {
            l2_error(interp, &one, choice.panels, p.budget)?
        };
        record.push(j, n, e)?;
        single_panel.push(j, n, l2_error(interp, &one, 1, p.budget)?)?;
    }
    Ok(ConvergenceRun {
        record,
        single_panel,
        choice,
    })
}

fn record_table(title: String, run: &ConvergenceRun) -> Table {
    let mut t = Table::new(title, &["J", "N", "L2 error", "order", "L2 error (4-point, 1 panel)", "order"]);
    for (a, b) in run.record.rows().iter().zip(run.single_panel.rows()) {
        let order = |o: Option<f64>| o.map(|o| format!("{o:.3}")).unwrap_or_default();
        t.push(vec![
            a.level.to_string(),
            a.dof.to_string(),
            format!("{:.4e}", a.error),
            order(a.order),
            format!("{:.4e}", b.error),
            order(b.order),
        ]);
    }
    t
}

fn fig4_analog(p: &Fig4Params) -> Result<StudyReport> {
    let mut report = StudyReport::new("fig4-analog");
    let cases: [(u32, usize, [usize; 2], [f64; 2], f64, &str); 3] = [
        (5, 1, p.univariate_levels, p.univariate_order, p.univariate_max_runtime_secs, "m=1"),
        (6, 2, p.bivariate_levels, [p.bivariate_min_order, f64::INFINITY], p.multivariate_max_runtime_secs, "m=2"),
        (6, 3, p.trivariate_levels, [p.trivariate_min_order, f64::INFINITY], p.multivariate_max_runtime_secs, "m=3"),
    ];
    let mut multivariate_start = None;
    for (criterion, m, levels, range, limit, tag) in cases {
        let start = Instant::now();
        if criterion == 6 && multivariate_start.is_none() {
            multivariate_start = Some(start);
        }
        let run = isotropic_run(m, levels, p)?;
        let rows = run.record.len();
        let fit = fit_order(&run.record, rows)?;
        let single_panel_fit = fit_order(&run.single_panel, rows)?;
        let span = format!("J={}..{}", levels[0], levels[1]);
        report.checks.push(Check::new(
            criterion,
            format!("{tag} L2 order vs N, {span}, {} panels", run.choice.panels),
            fit.slope,
            range[0],
            range[1],
        ));
        report.checks.push(
            Check::new(
                criterion,
                format!("{tag} L2 order vs N, {span}, single-panel 4-point rule (supplementary)"),
                single_panel_fit.slope,
                range[0],
                range[1],
            )
            .soft(),
        );
        if criterion == 5 {
            report.checks.push(runtime_check(5, start, limit));
        }
        report.tables.push(record_table(format!("{tag}, w = 1, f = 1"), &run));
        report.notes.push(format!(
            "{tag}: {} panels per coordinate, last doubling changed the finest error by {:.2}%{}; per-step orders {}",
            run.choice.panels,
            100.0 * run.choice.change,
            if run.choice.converged {
                ""
            } else {
                " (quadrature budget reached before the 1% self-consistency target)"
            },
            fit.steps.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>().join(", ")
        ));
    }
    if let Some(start) = multivariate_start {
        report.checks.push(runtime_check(6, start, p.multivariate_max_runtime_secs));
    }
    Ok(report)
}

/// Hierarchies of dyadic tensor grids with boundary, one per direction dimension.
fn mixed_problem(dims: &[usize], caps: &[usize], smoothness: f64) -> Result<(ProductKernel, Vec<NestedHierarchy>)> {
    let factors = dims
        .iter()
        .map(|&d| MaternKernel::for_smoothness(smoothness, MaternKernel::default_sigma(d), d))
        .collect::<Result<Vec<_>>>()?;
    let hierarchies = dims
        .iter()
        .zip(caps)
        .map(|(&d, &c)| NestedHierarchy::dyadic_grid(d, c, true))
        .collect::<Result<Vec<_>>>()?;
    Ok((ProductKernel::new(factors)?, hierarchies))
}

fn fig7_analog(p: &Fig7Params) -> Result<StudyReport> {
    let start = Instant::now();
    let mut report = StudyReport::new("fig7-analog");
    let one = |_: &[f64]| 1.0;
    for case in &p.cases {
        if case.dims.len() != case.level_caps.len() {
            return Err(Error::invalid("each mixed case needs one level cap per direction"));
        }
        let tag = format!(
            "dims ({})",
            case.dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
        );
        let (kernel, hierarchies) = mixed_problem(&case.dims, &case.level_caps, p.smoothness)?;
        let grids = random_eval_grids(&case.dims, p.eval_points, p.inset, p.seed)?;
        let gains = vec![p.gain; case.dims.len()];
        for kind in WeightStrategy::ALL {
            let w = weight_strategy(kind, &case.dims, &gains)?;
            let rate = predicted_rate(&case.dims, &gains, &w)?;
            let mut record = ConvergenceRecord::new();
            for level in 0..=case.max_level {
                let plan = CombinationPlan::new(case.dims.len(), level, w.clone())?;
                if (0..case.dims.len()).any(|i| plan.max_level(i) > case.level_caps[i]) {
                    break;
                }
                let interp = compute(&kernel, &hierarchies, &DataSource::Function(&one), w.clone(), level)?;
                let n = interp.report().expect("fresh interpolant").degrees_of_freedom;
                record.push(level, n, rms_error_on_grids(&interp, &one, &grids)?)?;
            }
            let fitted: Vec<_> = record.rows().iter().filter(|r| r.level >= case.fit_from).collect();
            if fitted.len() < 2 {
                return Err(Error::invalid(format!("{tag}, {kind}: fewer than two levels fit the caps")));
            }
            let fit = fit_order(&record, fitted.len())?;
            let last = record.rows().last().unwrap().level;
            let check = Check::new(
                7,
                format!("{tag}, {kind} weights, RMS order vs N, J={}..{last}", case.fit_from),
                fit.slope,
                case.order[0],
                case.order[1],
            );
            report.checks.push(if case.soft { check.soft() } else { check });
            let mut t = Table::new(
                format!("{tag}, {kind} weights {w}, predicted rate {:.4}", rate.beta),
                &["J", "N", "RMS error", "order"],
            );
            for r in record.rows() {
                t.push(vec![
                    r.level.to_string(),
                    r.dof.to_string(),
                    format!("{:.4e}", r.error),
                    r.order.map(|o| format!("{o:.3}")).unwrap_or_default(),
                ]);
            }
            report.tables.push(t);
        }
    }
    report.checks.push(runtime_check(7, start, p.max_runtime_secs));
    report.notes.push(format!(
        "errors are RMS over the product of {} uniform points per direction in the cube inset by {}; f = 1",
        p.eval_points, p.inset
    ));
    Ok(report)
}

fn table1_analog(p: &Table1Params) -> Result<StudyReport> {
    let mut report = StudyReport::new("table1-analog");
    let mut grid_mismatch = 0usize;
    let mut table = Table::new(
        "Interval points per level",
        &["j", "reported", "dyadic grid", "dyadic hierarchy", "subsampled random sample"],
    );
    let dyadic = NestedHierarchy::dyadic_grid(1, p.hierarchy_level, false)?;
    let sample = uniform_cube(p.random_points, 1, 0.0, 1.0, p.seed)?;
    let subsampled = build_hierarchy(&sample, p.random_level, Some(p.seed))?;
    let mut random_mismatch = 0usize;
    for (j, &count) in p.interval_counts.iter().enumerate() {
        let grid = equidistant_grid(j, false).len();
        let hier = (j <= p.hierarchy_level).then(|| dyadic.level_size(j));
        let sub = (j <= p.random_level).then(|| subsampled.level_size(j));
        if grid != count || grid != (1 << (j + 1)) - 1 || hier.is_some_and(|h| h != count) {
            grid_mismatch += 1;
        }
        if sub.is_some_and(|s| s != count) {
            random_mismatch += 1;
        }
        let show = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
        table.push(vec![j.to_string(), count.to_string(), grid.to_string(), show(hier), show(sub)]);
    }
    let mut tensor_mismatch = 0usize;
    let mut tensor_table = Table::new("Tensor grid points per level, (2^(j+1)+1)^i", &["i", "j", "expected", "grid", "hierarchy"]);
    for (i, &top) in (1..).zip(&p.tensor_levels) {
        let h = NestedHierarchy::dyadic_grid(i, top, true)?;
        for j in 0..p.tensor_count_levels {
            let expected = ((1usize << (j + 1)) + 1).pow(i as u32);
            let grid = tensor_grid(&equidistant_grid(j, true), i)?.len();
            let hier = (j <= top).then(|| h.level_size(j));
            if grid != expected || hier.is_some_and(|v| v != expected) {
                tensor_mismatch += 1;
            }
            tensor_table.push(vec![
                i.to_string(),
                j.to_string(),
                expected.to_string(),
                grid.to_string(),
                hier.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
            ]);
        }
    }
    report.checks.push(Check::new(8, "interval count mismatches (grids and hierarchies)", grid_mismatch as f64, 0.0, 0.0));
    report.checks.push(Check::new(8, "interval count mismatches (subsampled random sample)", random_mismatch as f64, 0.0, 0.0));
    report.checks.push(Check::new(8, "tensor grid count mismatches", tensor_mismatch as f64, 0.0, 0.0));
    report.tables.push(table);
    report.tables.push(tensor_table);
    report.notes.push(format!(
        "the random sample has {} uniform points on [0, 1] (seed {})",
        p.random_points, p.seed
    ));
    Ok(report)
}

/// Cell of `point` in the `2^level` subdivision of the box `[lo, lo + extent]`, degenerate axes skipped.
fn cell_of(point: &[f64], lo: &[f64], extent: &[f64], level: usize) -> Vec<usize> {
    let cells = (1usize << level) as f64;
    (0..point.len())
        .filter(|&o| extent[o] > 0.0)
        .map(|o| (((point[o] - lo[o]) / extent[o] * cells).floor().clamp(0.0, cells - 1.0)) as usize)
        .collect()
}

fn fig1_analog(p: &Fig1Params) -> Result<StudyReport> {
    let start = Instant::now();
    let mut report = StudyReport::new("fig1-analog");
    let x = uniform_cube(p.points, 2, 0.0, 1.0, p.seed)?;
    let h = build_hierarchy(&x, p.max_level, Some(p.seed))?;
    let (lo, hi) = x.bounding_box().expect("nonempty sample");
    let extent: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| b - a).collect();
    let mut nesting = 0usize;
    let mut count_mismatch = 0usize;
    let mut worst_ratio: f64 = 0.0;
    let mut table = Table::new(
        "Levels",
        &["j", "points", "oracle", "occupied cells", "fill distance", "sqrt(2) 2^-j", "separation"],
    );
    let mut previous: Vec<usize> = Vec::new();
    for j in 0..=p.max_level {
        let current = h.level_indices(j);
        if !previous.iter().all(|i| current.binary_search(i).is_ok()) {
            nesting += 1;
        }
        // occupancy oracle: one new point per cell holding a point not chosen before
        let mut cells_with_new = std::collections::BTreeSet::new();
        let mut occupied = std::collections::BTreeSet::new();
        for (i, pt) in x.iter().enumerate() {
            let c = cell_of(pt, &lo, &extent, j);
            if previous.binary_search(&i).is_err() {
                cells_with_new.insert(c.clone());
            }
            occupied.insert(c);
        }
        let oracle = previous.len() + cells_with_new.len();
        if oracle != current.len() {
            count_mismatch += 1;
        }
        let stats = h.stats()[j];
        let bound = std::f64::consts::SQRT_2 * (0.5f64).powi(j as i32);
        let everywhere = occupied.len() == 1 << (2 * j);
        if everywhere {
            worst_ratio = worst_ratio.max(stats.fill_distance / bound);
        }
        table.push(vec![
            j.to_string(),
            current.len().to_string(),
            oracle.to_string(),
            format!("{}/{}", occupied.len(), 1 << (2 * j)),
            format!("{:.4}", stats.fill_distance),
            format!("{bound:.4}"),
            stats.separation_radius.map(|q| format!("{q:.4}")).unwrap_or_else(|| "-".into()),
        ]);
        previous = current.to_vec();
    }
    report.checks.push(Check::new(9, "nesting violations", nesting as f64, 0.0, 0.0));
    report.checks.push(Check::new(9, "level counts differing from the occupancy oracle", count_mismatch as f64, 0.0, 0.0));
    report.checks.push(Check::new(
        9,
        "max fill distance / (sqrt(2) 2^-j) on fully occupied levels",
        worst_ratio,
        0.0,
        1.0,
    ));
    report.checks.push(runtime_check(9, start, p.max_runtime_secs));
    report.tables.push(table);
    Ok(report)
}

/// Closed forms of the Matérn kernel for half-integer orders, `x = r / sigma`.
fn half_integer_closed_form(beta: f64, x: f64) -> f64 {
    let e = (-x).exp();
    match (2.0 * beta) as u32 {
        1 => e,
        3 => (1.0 + x) * e,
        5 => (1.0 + x + x * x / 3.0) * e,
        7 => (1.0 + x + 2.0 * x * x / 5.0 + x * x * x / 15.0) * e,
        _ => unreachable!("half-integer orders up to 7/2"),
    }
}

fn determinism_fingerprint() -> Result<String> {
    let (kernel, hierarchies) = interval_problem(2, 17.0 / 16.0, 2.0, 6)?;
    let f = |x: &[f64]| TestFunction::SinSum.eval(x);
    let data = DataSource::Function(&f);
    let mut out = String::new();
    let mut record = ConvergenceRecord::new();
    for level in 2..=6 {
        let interp = compute(&kernel, &hierarchies, &data, WeightVector::ones(2), level)?;
        let n = interp.report().expect("fresh interpolant").degrees_of_freedom;
        record.push(level, n, l2_error(&interp, &f, 4, DEFAULT_QUADRATURE_BUDGET)?)?;
        for a in interp.coefficients() {
            for v in a.data() {
                let _ = write!(out, "{:016x}", v.to_bits());
            }
        }
        let grids = random_eval_grids(&[1, 1], 50, 0.0, 3)?;
        for v in interp.evaluate(&grids)?.data() {
            let _ = write!(out, "{:016x}", v.to_bits());
        }
    }
    let (kernel2, h2) = mixed_problem(&[1, 2], &[4, 3], 25.0 / 16.0)?;
    let interp = compute(&kernel2, &h2, &data, WeightVector::from_ratio(&[33, 41])?, 3)?;
    for v in interp.evaluate(&random_eval_grids(&[1, 2], 40, 0.1, 9)?)?.data() {
        let _ = write!(out, "{:016x}", v.to_bits());
    }
    out.push_str(&record.to_csv());
    Ok(out)
}

fn numerical_hygiene(p: &HygieneParams) -> Result<StudyReport> {
    let mut report = StudyReport::new("numerical-hygiene");

    let mut closed: f64 = 0.0;
    for beta in [0.5, 1.5, 2.5, 3.5] {
        for sigma in [0.5, 1.0, 2.0] {
            let k = MaternKernel::new(beta, sigma, 1)?;
            for i in 0..=400 {
                let r = i as f64 * 0.025;
                closed = closed.max((k.eval(r)? - half_integer_closed_form(beta, r / sigma)).abs());
            }
        }
    }
    report.checks.push(Check::new(10, "max deviation from half-integer closed forms", closed, 0.0, p.closed_form_tolerance));

    let mut quad: f64 = 0.0;
    for panels in [1, 2, 3, 8] {
        let rule = gauss_legendre_4().composite(panels)?;
        for k in 0..=7 {
            quad = quad.max((rule.integrate(|x| x.powi(k)) - 1.0 / (k as f64 + 1.0)).abs());
        }
    }
    report.checks.push(Check::new(10, "max quadrature error on degree <= 7", quad, 0.0, p.quadrature_tolerance));

    let f = |x: &[f64]| TestFunction::Gaussian.eval(x);
    let data = DataSource::Function(&f);
    let (kernel, hierarchies) = mixed_problem(&[1, 2], &[5, 3], 25.0 / 16.0)?;
    let w = WeightVector::from_ratio(&[33, 41])?;
    let grids = random_eval_grids(&[1, 2], 30, 0.0, 17)?;
    let base = compute(&kernel, &hierarchies, &data, w.clone(), 3)?.evaluate(&grids)?;
    let scaled_kernel = ProductKernel::new(
        kernel
            .factors()
            .iter()
            .zip(p.scalings.iter().cycle())
            .map(|(k, &c)| k.scaled(c))
            .collect::<Result<Vec<_>>>()?,
    )?;
    let scaled = compute(&scaled_kernel, &hierarchies, &data, w, 3)?.evaluate(&grids)?;
    let scale = base.data().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let scaling = base
        .data()
        .iter()
        .zip(scaled.data())
        .fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()))
        / scale;
    report.checks.push(Check::new(10, "relative change of predictions under kernel scaling", scaling, 0.0, p.scaling_tolerance));

    let mut outputs = Vec::new();
    for &t in &p.thread_counts {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        outputs.push(pool.install(determinism_fingerprint)?);
    }
    let differing = outputs.iter().filter(|o| **o != outputs[0]).count();
    report.checks.push(Check::new(10, "thread counts with differing output bytes", differing as f64, 0.0, 0.0));
    report.notes.push(format!(
        "determinism compared {} bytes of coefficients, predictions and CSV across {:?} threads",
        outputs[0].len(),
        p.thread_counts
    ));
    Ok(report)
}

fn timing_sweep(p: &TimingParams) -> Result<StudyReport> {
    let mut report = StudyReport::new("timing-sweep");
    let f = |x: &[f64]| TestFunction::ProdExp.eval(x);
    for (m, levels) in [(2usize, p.bivariate_levels), (3, p.trivariate_levels)] {
        let (kernel, hierarchies) = interval_problem(m, 17.0 / 16.0, 2.0, levels[1])?;
        let grids = random_eval_grids(&vec![1; m], p.eval_points, 0.0, 1)?;
        let mut table = Table::new(
            format!("m={m}, w = 1, evaluation on {}^{m} points", p.eval_points),
            &["J", "N", "plan entries", "factorizations", "compute [s]", "evaluate [s]"],
        );
        let mut ns = Vec::new();
        let mut ts = Vec::new();
        for level in levels[0]..=levels[1] {
            let t0 = Instant::now();
            let interp = compute(&kernel, &hierarchies, &DataSource::Function(&f), WeightVector::ones(m), level)?;
            let tc = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            interp.evaluate(&grids)?;
            let te = t1.elapsed().as_secs_f64();
            let r = interp.report().expect("fresh interpolant");
            ns.push(r.degrees_of_freedom as f64);
            ts.push(tc);
            table.push(vec![
                level.to_string(),
                r.degrees_of_freedom.to_string(),
                r.plan_entries.to_string(),
                r.factorizations.to_string(),
                format!("{tc:.4}"),
                format!("{te:.4}"),
            ]);
        }
        let k = ns.len();
        if k >= 3 {
            let slope = (ts[k - 1] / ts[k - 3]).ln() / (ns[k - 1] / ns[k - 3]).ln();
            report.notes.push(format!("m={m}: compute time grows like N^{slope:.2} over the last two levels"));
        }
        report.tables.push(table);
    }
    report.notes.push("timings are hardware dependent and reported as trends only".into());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn configs_round_trip_through_json() {
        for name in STUDY_NAMES {
            let c = StudyConfig::default_for(name).unwrap();
            assert_eq!(c.name(), name);
            assert_eq!(StudyConfig::from_json(&c.to_json()).unwrap(), c);
        }
        assert!(StudyConfig::default_for("fig2-analog").is_err());
        assert!(run_study("nope").is_err());
        let partial = StudyConfig::from_json(r#"{"study": "fig1-analog", "points": 50}"#).unwrap();
        match partial {
            StudyConfig::Fig1Analog(p) => assert_eq!((p.points, p.max_level), (50, 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shape_enumeration_counts() {
        let mut n = 0;
        for_each_shape(2, 3, 4, &mut |e| {
            assert!(e.iter().product::<usize>() <= 4);
            n += 1;
        });
        // (1,1) (1,2) (1,3) (2,1) (2,2) (3,1)
        assert_eq!(n, 6);
    }

    #[test]
    fn dense_solver_oracle() {
        let a = Matrix::from_rows(&[vec![0.0, 2.0, 1.0], vec![1.0, 1.0, 0.0], vec![3.0, 0.0, 1.0]]).unwrap();
        let x = dense_solve(a.clone(), vec![5.0, 3.0, 6.0]).unwrap();
        let back = a.matvec(&x).unwrap();
        for (b, e) in back.iter().zip([5.0, 3.0, 6.0]) {
            assert!((b - e).abs() < 1e-14);
        }
    }

    #[test]
    fn closed_forms_agree_at_zero() {
        for beta in [0.5, 1.5, 2.5, 3.5] {
            assert_eq!(half_integer_closed_form(beta, 0.0), 1.0);
        }
    }

    #[test]
    fn small_studies_pass() {
        let r = run_config(&StudyConfig::Fig1Analog(Fig1Params::default())).unwrap();
        assert!(r.passed(), "{}", r.to_markdown());
        assert!(r.to_markdown().contains("| 9 |"));
    }
}
