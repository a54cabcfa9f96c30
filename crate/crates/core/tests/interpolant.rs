use proptest::prelude::*;
use sparse_kernel::combitech::{CombinationPlan, WeightVector};
use sparse_kernel::geometry::{uniform_cube, NestedHierarchy, PointSet};
use sparse_kernel::interpolant::{compute, DataSource, ValueTable};
use sparse_kernel::kernel::{MaternKernel, ProductKernel};

fn problem(dims: &[usize], level: usize) -> (ProductKernel, Vec<NestedHierarchy>) {
    let factors = dims
        .iter()
        .map(|&d| MaternKernel::with_default_sigma(1.5, d).unwrap())
        .collect();
    let hierarchies = dims
        .iter()
        .map(|&d| NestedHierarchy::dyadic_grid(d, level, false).unwrap())
        .collect();
    (ProductKernel::new(factors).unwrap(), hierarchies)
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting; `a` is row-major `n x n`.
fn dense_solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i * n + c].abs().total_cmp(&a[j * n + c].abs())).unwrap();
        for k in 0..n {
            a.swap(c * n + k, p * n + k);
        }
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r * n + c] / a[c * n + c];
            for k in c..n {
                a[r * n + k] -= f * a[c * n + k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r * n + k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r * n + r];
    }
    x
}

/// Full-dimensional points of the tensor grid `X_{j_1} x ... x X_{j_m}`, last direction fastest.
fn product_points(hierarchies: &[NestedHierarchy], j: &[usize]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for (h, &ji) in hierarchies.iter().zip(j) {
        let level = h.level_points(ji);
        out = out
            .into_iter()
            .flat_map(|prefix| {
                level.iter().map(move |x| {
                    let mut p = prefix.clone();
                    p.extend_from_slice(x);
                    p
                })
            })
            .collect();
    }
    out
}

/// Combination of dense tensor-product interpolants, each from an explicitly assembled Gram matrix.
fn dense_oracle(
    kernel: &ProductKernel,
    hierarchies: &[NestedHierarchy],
    w: &WeightVector,
    level: usize,
    f: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
) -> f64 {
    let plan = CombinationPlan::new(kernel.len(), level, w.clone()).unwrap();
    let mut total = 0.0;
    for e in plan.entries() {
        let nodes = product_points(hierarchies, &e.index);
        let n = nodes.len();
        let mut a = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                a[r * n + c] = kernel.eval(&nodes[r], &nodes[c]).unwrap();
            }
        }
        let coef = dense_solve(a, nodes.iter().map(|p| f(p)).collect());
        let u: f64 = nodes.iter().zip(&coef).map(|(p, c)| c * kernel.eval(p, x).unwrap()).sum();
        total += e.coefficient as f64 * u;
    }
    total
}

#[test]
fn matches_dense_combination_oracle() {
    let f = |x: &[f64]| (x[0] - 0.3 * x[1]).cos() + x.iter().sum::<f64>();
    for (dims, level, w) in [
        (vec![1, 1], 3, WeightVector::ones(2)),
        (vec![1, 2], 2, WeightVector::new(&[0.5, 1.0]).unwrap()),
        (vec![1, 1, 1], 2, WeightVector::ones(3)),
    ] {
        let plan = CombinationPlan::new(dims.len(), level, w.clone()).unwrap();
        let (kernel, mut hierarchies) = problem(&dims, level);
        for (i, h) in hierarchies.iter_mut().enumerate() {
            *h = NestedHierarchy::dyadic_grid(dims[i], plan.max_level(i), false).unwrap();
        }
        let interp = compute(&kernel, &hierarchies, &DataSource::Function(&f), w.clone(), level).unwrap();
        let total: usize = dims.iter().sum();
        let points = uniform_cube(10, total, 0.0, 1.0, 5).unwrap();
        let got = interp.evaluate_at_points(&points).unwrap();
        for (x, g) in points.iter().zip(got) {
            let want = dense_oracle(&kernel, &hierarchies, &w, level, &f, x);
            assert!((g - want).abs() <= 1e-9 * want.abs().max(1.0), "dims {dims:?}: {g} vs {want} at {x:?}");
        }
    }
}

#[test]
fn grid_evaluation_agrees_with_pointwise() {
    let f = |x: &[f64]| (2.0 * x[0]).sin() * (1.0 + x[1] * x[2]);
    let (kernel, hierarchies) = problem(&[1, 2], 3);
    let interp = compute(&kernel, &hierarchies, &DataSource::Function(&f), WeightVector::ones(2), 3).unwrap();
    let grids = vec![
        uniform_cube(4, 1, 0.0, 1.0, 1).unwrap(),
        uniform_cube(3, 2, 0.0, 1.0, 2).unwrap(),
    ];
    let u = interp.evaluate(&grids).unwrap();
    assert_eq!(u.shape().extents(), &[4, 3]);
    let mut coords = Vec::new();
    for a in grids[0].iter() {
        for b in grids[1].iter() {
            coords.extend_from_slice(a);
            coords.extend_from_slice(b);
        }
    }
    let pointwise = interp.evaluate_at_points(&PointSet::new(3, coords).unwrap()).unwrap();
    for (g, p) in u.data().iter().zip(&pointwise) {
        assert!((g - p).abs() < 1e-12);
    }
}

#[test]
fn example_sizes() {
    let one = |_: &[f64]| 1.0;
    let (kernel, hierarchies) = problem(&[1], 4);
    let r = compute(&kernel, &hierarchies, &DataSource::Function(&one), WeightVector::ones(1), 4).unwrap();
    assert_eq!(r.report().unwrap().degrees_of_freedom, 31);
    assert_eq!(r.report().unwrap().plan_entries, 1);

    let (kernel, hierarchies) = problem(&[1, 1], 2);
    let r = compute(&kernel, &hierarchies, &DataSource::Function(&one), WeightVector::ones(2), 2).unwrap();
    assert_eq!(r.report().unwrap().plan_entries, 5);
    assert_eq!(r.report().unwrap().factorizations, 6);
}

#[test]
fn table_data_matches_function_data() {
    let f = |x: &[f64]| x[0] * x[0] - x[1];
    let (kernel, hierarchies) = problem(&[1, 1], 3);
    let table = ValueTable::tabulate(&hierarchies, &f).unwrap();
    let w = WeightVector::ones(2);
    let a = compute(&kernel, &hierarchies, &DataSource::Function(&f), w.clone(), 3).unwrap();
    let b = compute(&kernel, &hierarchies, &DataSource::Table(&table), w, 3).unwrap();
    assert_eq!(a.coefficients(), b.coefficients());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn interpolation_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, shift in 0.0f64..1.0) {
        let f = move |x: &[f64]| (x[0] + shift).exp() * x[1];
        let g = |x: &[f64]| (3.0 * x[1]).cos() - x[0];
        let h = move |x: &[f64]| a * f(x) + b * g(x);
        let (kernel, hierarchies) = problem(&[1, 1], 3);
        let w = WeightVector::ones(2);
        let points = uniform_cube(20, 2, 0.0, 1.0, 9).unwrap();
        let eval = |d: &(dyn Fn(&[f64]) -> f64 + Sync)| {
            compute(&kernel, &hierarchies, &DataSource::Function(d), w.clone(), 3)
                .unwrap()
                .evaluate_at_points(&points)
                .unwrap()
        };
        let (uf, ug, uh) = (eval(&f), eval(&g), eval(&h));
        for k in 0..points.len() {
            let want = a * uf[k] + b * ug[k];
            prop_assert!((uh[k] - want).abs() <= 1e-10 * (1.0 + want.abs()));
        }
    }
}
