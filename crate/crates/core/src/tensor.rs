//! Index arithmetic for row-major tensors and their mode unfoldings.
//!
//! Multi-indices and modes are 0-based. The last mode varies fastest.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{gemm_strided, Matrix};

/// Per-mode extents together with their strides.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Shape {
    extents: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl Shape {
    pub fn new(extents: Vec<usize>) -> Result<Self> {
        if extents.is_empty() {
            return Err(Error::invalid("a shape needs at least one mode"));
        }
        if let Some(i) = extents.iter().position(|&n| n == 0) {
            return Err(Error::invalid(format!("mode {i} has zero extent")));
        }
        let strides = strides(&extents)?;
        let len = strides[0] * extents[0];
        Ok(Self {
            extents,
            strides,
            len,
        })
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn modes(&self) -> usize {
        self.extents.len()
    }

    pub fn extent(&self, mode: usize) -> usize {
        self.extents[mode]
    }

    /// Number of entries, the product of the extents.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The same shape with the extent of `mode` replaced.
    pub fn with_extent(&self, mode: usize, extent: usize) -> Result<Shape> {
        self.check_mode(mode)?;
        let mut e = self.extents.clone();
        e[mode] = extent;
        Shape::new(e)
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.modes() {
            return Err(Error::invalid(format!(
                "mode {mode} out of range for a {}-mode tensor",
                self.modes()
            )));
        }
        Ok(())
    }

    /// `(pre, n_k, post)`: the tensor is a stack of `pre` row-major `n_k x post` blocks.
    fn split(&self, mode: usize) -> (usize, usize, usize) {
        let post = self.strides[mode];
        let n = self.extents[mode];
        (self.len / (n * post), n, post)
    }
}

/// `b_i = n_{i+1} * ... * n_m`, so `b_m = 1`.
pub fn strides(extents: &[usize]) -> Result<Vec<usize>> {
    let mut b = vec![1usize; extents.len()];
    let mut acc = 1usize;
    for i in (0..extents.len()).rev() {
        b[i] = acc;
        acc = acc
            .checked_mul(extents[i])
            .ok_or_else(|| Error::invalid(format!("shape {extents:?} overflows the index range")))?;
    }
    Ok(b)
}

pub fn to_scalar_index(k: &[usize], shape: &Shape) -> Result<usize> {
    if k.len() != shape.modes() {
        return Err(Error::DimensionMismatch {
            expected: shape.modes(),
            got: k.len(),
        });
    }
    let mut p = 0;
    for (i, (&ki, &ni)) in k.iter().zip(&shape.extents).enumerate() {
        if ki >= ni {
            return Err(Error::invalid(format!(
                "index {ki} out of range for mode {i} of extent {ni}"
            )));
        }
        p += ki * shape.strides[i];
    }
    Ok(p)
}

pub fn to_multi_index(p: usize, shape: &Shape) -> Result<Vec<usize>> {
    if p >= shape.len() {
        return Err(Error::invalid(format!(
            "linear index {p} out of range for {} entries",
            shape.len()
        )));
    }
    let mut rest = p;
    Ok(shape
        .strides
        .iter()
        .map(|&b| {
            let k = rest / b;
            rest %= b;
            k
        })
        .collect())
}

/// Linear address of entry `(o, p)` of the mode-`mode` unfolding. Columns `p`
/// enumerate the remaining modes in their original order, last fastest.
pub fn matricize_index(mode: usize, o: usize, p: usize, shape: &Shape) -> Result<usize> {
    shape.check_mode(mode)?;
    let (pre, n, post) = shape.split(mode);
    if o >= n || p >= pre * post {
        return Err(Error::invalid(format!(
            "entry ({o}, {p}) outside the {n} x {} unfolding along mode {mode}",
            pre * post
        )));
    }
    Ok((p / post) * n * post + o * post + p % post)
}

/// Flat tensor data in stride order.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl LinearTensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::DimensionMismatch {
                expected: shape.len(),
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        let data = vec![0.0; shape.len()];
        Self { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, k: &[usize]) -> Result<f64> {
        Ok(self.data[to_scalar_index(k, &self.shape)?])
    }
}

/// Mode-`mode` unfolding as an `n_k x (len / n_k)` matrix (a copy).
pub fn matricize(t: &LinearTensor, mode: usize) -> Result<Matrix> {
    t.shape.check_mode(mode)?;
    let (pre, n, post) = t.shape.split(mode);
    let cols = pre * post;
    let mut m = vec![0.0; t.data.len()];
    for a in 0..pre {
        let block = &t.data[a * n * post..(a + 1) * n * post];
        for o in 0..n {
            m[o * cols + a * post..o * cols + (a + 1) * post]
                .copy_from_slice(&block[o * post..(o + 1) * post]);
        }
    }
    Matrix::from_vec(n, cols, m)
}

/// Inverse of [`matricize`].
pub fn dematricize(m: &Matrix, mode: usize, shape: &Shape) -> Result<LinearTensor> {
    shape.check_mode(mode)?;
    let (pre, n, post) = shape.split(mode);
    let cols = pre * post;
    if m.shape() != (n, cols) {
        return Err(Error::invalid(format!(
            "unfolding has shape {:?}, expected ({n}, {cols}) for mode {mode} of {:?}",
            m.shape(),
            shape.extents()
        )));
    }
    let src = m.as_slice();
    let mut data = vec![0.0; shape.len()];
    for a in 0..pre {
        let block = &mut data[a * n * post..(a + 1) * n * post];
        for o in 0..n {
            block[o * post..(o + 1) * post]
                .copy_from_slice(&src[o * cols + a * post..o * cols + (a + 1) * post]);
        }
    }
    LinearTensor::new(shape.clone(), data)
}

/// Mode product `t x_mode a`: applies the `r x n_k` matrix `a` along `mode`.
pub fn mode_product(t: &LinearTensor, mode: usize, a: &Matrix) -> Result<LinearTensor> {
    t.shape.check_mode(mode)?;
    if a.cols() != t.shape.extent(mode) {
        return Err(Error::DimensionMismatch {
            expected: t.shape.extent(mode),
            got: a.cols(),
        });
    }
    let (_, n, post) = t.shape.split(mode);
    let r = a.rows();
    let shape = t.shape.with_extent(mode, r)?;
    let mut out = vec![0.0; shape.len()];
    if post == 1 {
        // rows of the (pre x n) view times a^T
        let rows = (MODE_PRODUCT_CHUNK / (n + r).max(1)).max(1);
        out.par_chunks_mut(rows * r)
            .zip(t.data.par_chunks(rows * n))
            .for_each(|(c, b)| {
                let m = b.len() / n;
                gemm_strided(m, n, r, b, (n, 1), a.as_slice(), (1, n), c);
            });
    } else {
        out.par_chunks_mut(r * post)
            .zip(t.data.par_chunks(n * post))
            .with_min_len((MODE_PRODUCT_CHUNK / ((n + r) * post)).max(1))
            .for_each(|(c, b)| gemm_strided(r, n, post, a.as_slice(), (n, 1), b, (post, 1), c));
    }
    LinearTensor::new(shape, out)
}

/// Rough number of touched entries per parallel task in [`mode_product`].
const MODE_PRODUCT_CHUNK: usize = 1 << 16;
