//! Dense Cholesky factorizations of univariate kernel matrices and the
//! multi-right-hand-side solves of the directional sweeps.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::combitech::CombinationPlan;
use crate::error::{Error, Result};
use crate::geometry::NestedHierarchy;
use crate::kernel::{kernel_matrix, ProductKernel};
use crate::linalg::{dot, Matrix};

/// Diagonal shifts tried in turn, relative to the largest diagonal entry.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-14, 1e-12, 1e-10];

const BLOCK: usize = 64;
/// Column chunk width for parallel solves; fixed so results do not depend on the thread count.
const COLUMN_CHUNK: usize = 128;

/// `K + delta I = L L^T`.
#[derive(Debug, Clone)]
pub struct Factorization {
    /// Lower triangle holds `L`; the strict upper triangle is zero.
    lower: Matrix,
    jitter_used: f64,
    condition_estimate: f64,
}

impl Factorization {
    pub fn size(&self) -> usize {
        self.lower.rows()
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    /// Absolute diagonal shift that made the factorization succeed.
    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    /// `(max L_ii / min L_ii)^2`, a cheap lower bound on the condition number.
    pub fn condition_estimate(&self) -> f64 {
        self.condition_estimate
    }

    /// Overwrites the `N x q` matrix `m` with `(L L^T)^{-1} m`.
    pub fn solve_in_place(&self, m: &mut Matrix) -> Result<()> {
        let n = self.size();
        if m.rows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: m.rows(),
            });
        }
        let q = m.cols();
        if q <= COLUMN_CHUNK {
            let mut buf = std::mem::replace(m, Matrix::zeros(0, 0)).into_vec();
            self.solve_contiguous(&mut buf, q);
            *m = Matrix::from_vec(n, q, buf)?;
            return Ok(());
        }
        let chunks: Vec<(usize, usize)> = (0..q)
            .step_by(COLUMN_CHUNK)
            .map(|c0| (c0, (c0 + COLUMN_CHUNK).min(q)))
            .collect();
        let src = m.as_slice();
        let solved: Vec<Vec<f64>> = chunks
            .par_iter()
            .map(|&(c0, c1)| {
                let w = c1 - c0;
                let mut buf = Vec::with_capacity(n * w);
                for i in 0..n {
                    buf.extend_from_slice(&src[i * q + c0..i * q + c1]);
                }
                self.solve_contiguous(&mut buf, w);
                buf
            })
            .collect();
        let dst = m.as_mut_slice();
        for (&(c0, c1), buf) in chunks.iter().zip(&solved) {
            let w = c1 - c0;
            for i in 0..n {
                dst[i * q + c0..i * q + c1].copy_from_slice(&buf[i * w..(i + 1) * w]);
            }
        }
        Ok(())
    }

    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut m = Matrix::from_vec(b.len(), 1, b.to_vec())?;
        self.solve_in_place(&mut m)?;
        Ok(m.into_vec())
    }

    /// Forward and backward substitution on a contiguous row-major `n x q` block.
    fn solve_contiguous(&self, x: &mut [f64], q: usize) {
        let n = self.size();
        let l = self.lower.as_slice();
        // L y = b
        for b0 in (0..n).step_by(BLOCK) {
            let b1 = (b0 + BLOCK).min(n);
            if b0 > 0 {
                // x[b0..b1] -= L[b0..b1, 0..b0] x[0..b0]
                // SAFETY: rows 0..b0 and b0..b1 of x are disjoint; strides stay inside the buffers.
                unsafe {
                    matrixmultiply::dgemm(
                        b1 - b0,
                        b0,
                        q,
                        -1.0,
                        l.as_ptr().add(b0 * n),
                        n as isize,
                        1,
                        x.as_ptr(),
                        q as isize,
                        1,
                        1.0,
                        x.as_mut_ptr().add(b0 * q),
                        q as isize,
                        1,
                    );
                }
            }
            for i in b0..b1 {
                let (done, rest) = x.split_at_mut(i * q);
                let row = &mut rest[..q];
                for p in b0..i {
                    let lip = l[i * n + p];
                    if lip != 0.0 {
                        let xp = &done[p * q..(p + 1) * q];
                        row.iter_mut().zip(xp).for_each(|(r, v)| *r -= lip * v);
                    }
                }
                let d = l[i * n + i];
                row.iter_mut().for_each(|r| *r /= d);
            }
        }
        // L^T x = y
        let nblocks = n.div_ceil(BLOCK);
        for bi in (0..nblocks).rev() {
            let b0 = bi * BLOCK;
            let b1 = (b0 + BLOCK).min(n);
            if b1 < n {
                // x[b0..b1] -= L[b1..n, b0..b1]^T x[b1..n]
                // SAFETY: as above; the transposed view of L uses swapped strides.
                unsafe {
                    matrixmultiply::dgemm(
                        b1 - b0,
                        n - b1,
                        q,
                        -1.0,
                        l.as_ptr().add(b1 * n + b0),
                        1,
                        n as isize,
                        x.as_ptr().add(b1 * q),
                        q as isize,
                        1,
                        1.0,
                        x.as_mut_ptr().add(b0 * q),
                        q as isize,
                        1,
                    );
                }
            }
            for i in (b0..b1).rev() {
                let (head, tail) = x.split_at_mut((i + 1) * q);
                let row = &mut head[i * q..];
                for p in i + 1..b1 {
                    let lpi = l[p * n + i];
                    if lpi != 0.0 {
                        let xp = &tail[(p - i - 1) * q..(p - i) * q];
                        row.iter_mut().zip(xp).for_each(|(r, v)| *r -= lpi * v);
                    }
                }
                let d = l[i * n + i];
                row.iter_mut().for_each(|r| *r /= d);
            }
        }
    }
}

/// In-place blocked Cholesky of the lower triangle of the row-major `n x n` buffer.
/// Returns `false` on a nonpositive or non-finite pivot.
fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for k0 in (0..n).step_by(BLOCK) {
        let k1 = (k0 + BLOCK).min(n);
        // diagonal block
        for i in k0..k1 {
            for j in k0..=i {
                let s = a[i * n + j] - dot(&a[i * n + k0..i * n + j], &a[j * n + k0..j * n + j]);
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return false;
                    }
                    a[i * n + i] = s.sqrt();
                } else {
                    a[i * n + j] = s / a[j * n + j];
                }
            }
        }
        if k1 == n {
            break;
        }
        // panel below the diagonal block
        let (top, bottom) = a.split_at_mut(k1 * n);
        let diag = &top[k0 * n..];
        bottom.par_chunks_mut(n).for_each(|row| {
            for j in k0..k1 {
                let s = row[j] - dot(&row[k0..j], &diag[(j - k0) * n + k0..(j - k0) * n + j]);
                row[j] = s / diag[(j - k0) * n + j];
            }
        });
        // trailing lower triangle: A[i, j] -= L[i, k0..k1] . L[j, k0..k1]
        let kb = k1 - k0;
        for r0 in (k1..n).step_by(BLOCK) {
            let r1 = (r0 + BLOCK).min(n);
            // SAFETY: reads columns k0..k1 and writes columns k1..r1 of rows r0..r1;
            // the regions are disjoint and inside the buffer.
            unsafe {
                let base = a.as_mut_ptr();
                matrixmultiply::dgemm(
                    r1 - r0,
                    kb,
                    r1 - k1,
                    -1.0,
                    base.add(r0 * n + k0),
                    n as isize,
                    1,
                    base.add(k1 * n + k0),
                    1,
                    n as isize,
                    1.0,
                    base.add(r0 * n + k1),
                    n as isize,
                    1,
                );
            }
        }
    }
    true
}

/// Cholesky factorization with diagonal-shift escalation along [`JITTER_LADDER`].
pub fn factorize(k: &Matrix) -> Result<Factorization> {
    let n = k.rows();
    if k.cols() != n {
        return Err(Error::invalid(format!(
            "kernel matrix must be square, got {} x {}",
            n,
            k.cols()
        )));
    }
    if n == 0 {
        return Err(Error::invalid("cannot factorize an empty matrix"));
    }
    let scale = (0..n).map(|i| k[(i, i)]).fold(0.0, f64::max);
    let mut last = 0.0;
    for &rel in &JITTER_LADDER {
        let delta = rel * scale;
        last = delta;
        let mut a = k.as_slice().to_vec();
        for i in 0..n {
            a[i * n + i] += delta;
        }
        if cholesky_in_place(&mut a, n) {
            for i in 0..n {
                a[i * n + i + 1..(i + 1) * n].fill(0.0);
            }
            let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
            for i in 0..n {
                lo = lo.min(a[i * n + i]);
                hi = hi.max(a[i * n + i]);
            }
            return Ok(Factorization {
                lower: Matrix::from_vec(n, n, a)?,
                jitter_used: delta,
                condition_estimate: (hi / lo).powi(2),
            });
        }
    }
    Err(Error::IllConditioned {
        size: n,
        last_jitter: last,
    })
}

/// `max_k || K (F^{-1} e_k) - e_k ||_inf` over up to `samples` evenly spaced unit vectors.
pub fn unit_residual(k: &Matrix, f: &Factorization, samples: usize) -> Result<f64> {
    let n = k.rows();
    let count = samples.clamp(1, n);
    let mut worst = 0.0_f64;
    for s in 0..count {
        let idx = s * n / count;
        let mut e = vec![0.0; n];
        e[idx] = 1.0;
        let x = f.solve_vec(&e)?;
        let kx = k.matvec(&x)?;
        for (i, v) in kx.iter().enumerate() {
            let target = if i == idx { 1.0 } else { 0.0 };
            worst = worst.max((v - target).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct CachedFactor {
    pub factor: Arc<Factorization>,
    /// See [`unit_residual`].
    pub residual: f64,
}

/// One factorization per `(direction, level)` used by a plan.
#[derive(Debug, Clone, Default)]
pub struct FactorCache {
    entries: BTreeMap<(usize, usize), CachedFactor>,
}

impl FactorCache {
    pub fn get(&self, direction: usize, level: usize) -> Option<&Arc<Factorization>> {
        self.entries.get(&(direction, level)).map(|c| &c.factor)
    }

    /// Number of factorizations held.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.entries.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &CachedFactor)> {
        self.entries.iter()
    }

    pub fn max_residual(&self) -> f64 {
        self.entries.values().map(|c| c.residual).fold(0.0, f64::max)
    }

    pub fn max_jitter(&self) -> f64 {
        self.entries.values().map(|c| c.factor.jitter_used).fold(0.0, f64::max)
    }
}

/// Residual probes per cached factorization.
const RESIDUAL_SAMPLES: usize = 4;

/// Factorizes the Gram matrix of every `(direction, level)` pair occurring in the plan.
pub fn build_cache(
    kernel: &ProductKernel,
    hierarchies: &[NestedHierarchy],
    plan: &CombinationPlan,
) -> Result<FactorCache> {
    let m = plan.directions();
    if kernel.len() != m || hierarchies.len() != m {
        return Err(Error::invalid(format!(
            "plan has {m} directions but {} kernel factors and {} hierarchies were given",
            kernel.len(),
            hierarchies.len()
        )));
    }
    let mut keys = Vec::new();
    for (i, h) in hierarchies.iter().enumerate() {
        if h.dim() != kernel.factor(i).dim() {
            return Err(Error::DimensionMismatch {
                expected: kernel.factor(i).dim(),
                got: h.dim(),
            }
            .context(format!("solver: direction {i}")));
        }
        for level in plan.levels_in_direction(i) {
            if level > h.max_level() {
                return Err(Error::invalid(format!(
                    "plan needs level {level} in direction {i}, hierarchy stops at {}",
                    h.max_level()
                )));
            }
            keys.push((i, level));
        }
    }
    let built = keys
        .par_iter()
        .map(|&(i, level)| {
            let points = hierarchies[i].level_points(level);
            let k = kernel_matrix(kernel.factor(i), &points, None)?;
            let factor = factorize(&k)?;
            let residual = unit_residual(&k, &factor, RESIDUAL_SAMPLES)?;
            Ok((
                (i, level),
                CachedFactor {
                    factor: Arc::new(factor),
                    residual,
                },
            ))
        })
        .map(|r: Result<_>| {
            r.map_err(|e: Error| e.context("solver: factorizing kernel matrix".to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FactorCache {
        entries: built.into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{uniform_cube, PointSet};
    use crate::kernel::MaternKernel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spd(n: usize, seed: u64) -> Matrix {
        let x = uniform_cube(n, 1, 0.0, 1.0, seed).unwrap();
        kernel_matrix(&MaternKernel::new(1.5, 0.5, 1).unwrap(), &x, None).unwrap()
    }

    /// Gauss-Jordan inverse with partial pivoting.
    fn inverse(a: &Matrix) -> Matrix {
        let n = a.rows();
        let mut m = a.clone();
        let mut inv = Matrix::identity(n);
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| m[(i, c)].abs().total_cmp(&m[(j, c)].abs())).unwrap();
            for j in 0..n {
                let (t, u) = (m[(c, j)], inv[(c, j)]);
                m[(c, j)] = m[(p, j)];
                inv[(c, j)] = inv[(p, j)];
                m[(p, j)] = t;
                inv[(p, j)] = u;
            }
            let d = m[(c, c)];
            for j in 0..n {
                m[(c, j)] /= d;
                inv[(c, j)] /= d;
            }
            for i in 0..n {
                if i != c {
                    let f = m[(i, c)];
                    for j in 0..n {
                        m[(i, j)] -= f * m[(c, j)];
                        inv[(i, j)] -= f * inv[(c, j)];
                    }
                }
            }
        }
        inv
    }

    #[test]
    fn one_by_one() {
        let f = factorize(&Matrix::identity(1)).unwrap();
        assert_eq!(f.lower()[(0, 0)], 1.0);
        assert_eq!(f.jitter_used(), 0.0);
        let mut m = Matrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        f.solve_in_place(&mut m).unwrap();
        assert_eq!(m.as_slice(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn two_by_two_by_hand() {
        let e = (-1.0f64).exp();
        let k = Matrix::from_rows(&[vec![1.0, e], vec![e, 1.0]]).unwrap();
        let f = factorize(&k).unwrap();
        let l = f.lower();
        assert_eq!(l[(0, 0)], 1.0);
        assert!((l[(1, 0)] - e).abs() < 1e-16);
        assert!((l[(1, 1)] - (1.0 - e * e).sqrt()).abs() < 1e-15);
        assert_eq!(l[(0, 1)], 0.0);
        let x = f.solve_vec(&[1.0, 1.0]).unwrap();
        for v in x {
            assert!((v - 1.0 / (1.0 + e)).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [3, 7, 12] {
            let k = spd(n, n as u64);
            let inv = inverse(&k);
            let f = factorize(&k).unwrap();
            let b = Matrix::from_fn(n, 5, |_, _| rng.random::<f64>() - 0.5);
            let mut x = b.clone();
            f.solve_in_place(&mut x).unwrap();
            let expect = inv.matmul(&b).unwrap();
            let scale = expect.max_abs();
            for (a, e) in x.as_slice().iter().zip(expect.as_slice()) {
                assert!((a - e).abs() <= 1e-10 * scale, "n={n}");
            }
        }
    }

    #[test]
    fn blocked_paths_agree_with_residual() {
        // larger than one block and more columns than one chunk
        let n = 150;
        let k = spd(n, 3);
        let f = factorize(&k).unwrap();
        let l = f.lower();
        let llt = l.matmul(&l.transpose()).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert!((llt[(i, j)] - k[(i, j)] - if i == j { f.jitter_used() } else { 0.0 }).abs() < 1e-12);
            }
        }
        let b = Matrix::from_fn(n, 300, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let mut x = b.clone();
        f.solve_in_place(&mut x).unwrap();
        // column-by-column solves give the same bits
        for c in [0, 127, 128, 299] {
            let col: Vec<f64> = (0..n).map(|i| b[(i, c)]).collect();
            let xc = f.solve_vec(&col).unwrap();
            for i in 0..n {
                assert!((xc[i] - x[(i, c)]).abs() <= 1e-9 * xc[i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn near_coincident_points_need_jitter() {
        let mut coords = Vec::new();
        for i in 0..100 {
            let x = i as f64 / 99.0;
            coords.push(x);
            coords.push(x + 1e-8);
        }
        let x = PointSet::new(1, coords).unwrap();
        let k = kernel_matrix(&MaternKernel::new(1.5, 0.5, 1).unwrap(), &x, None).unwrap();
        let f = factorize(&k).unwrap();
        assert!(f.jitter_used() > 0.0);
        // data sampled from a smooth function is nearly orthogonal to the
        // near-null directions spanned by the coincident pairs
        let b: Vec<f64> = x.iter().map(|p| (3.0 * p[0]).sin() + 0.5).collect();
        let sol = f.solve_vec(&b).unwrap();
        let kb = k.matvec(&sol).unwrap();
        let res = kb.iter().zip(&b).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
        let norm = b.iter().map(|c| c * c).sum::<f64>().sqrt();
        assert!(res / norm <= 1e-6, "relative residual {}", res / norm);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let k = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        match factorize(&k) {
            Err(Error::IllConditioned { size, last_jitter }) => {
                assert_eq!(size, 2);
                assert_eq!(last_jitter, 1e-10);
            }
            other => panic!("{other:?}"),
        }
        assert!(factorize(&Matrix::zeros(2, 3)).is_err());
        let f = factorize(&Matrix::identity(2)).unwrap();
        assert!(f.solve_in_place(&mut Matrix::zeros(3, 1)).is_err());
    }
}
