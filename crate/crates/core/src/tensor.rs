//! Dense complex tensor algebra: shapes, vectorized storage, Kronecker
//! products, mode unfoldings and the Khatri-Rao product.
//!
//! Vectorization convention: an order-(d+1) tensor with data dimensions
//! `T_1..T_d` and `N` antennas stores entry `(t_1, ..., t_d, n)` at the
//! mixed-radix position
//!
//! ```text
//! idx = ((t_1 * T_2 + t_2) * T_3 + ...) * N + n
//! ```
//!
//! i.e. row-major with the first data mode slowest and the antenna index
//! fastest. Under this layout the vectorized rank-1 tensor built from mode
//! vectors `x_1, ..., x_d, h` equals `kron_chain([x_1, ..., x_d, h])` with
//! the usual Kronecker convention `(a ⊗ b)[i*len(b)+j] = a[i]*b[j]`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Tensor dimensions: data modes `T_1..T_d` plus the antenna count `N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorShape {
    dims: Vec<usize>,
    antennas: usize,
}

impl TensorShape {
    /// Requires `d >= 2`, every `T_i >= 2` and `N >= 1`.
    pub fn new(dims: Vec<usize>, antennas: usize) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidShape(format!(
                "need at least 2 data modes, got {}",
                dims.len()
            )));
        }
        if let Some(&bad) = dims.iter().find(|&&t| t < 2) {
            return Err(Error::InvalidShape(format!("data dimension {bad} < 2")));
        }
        if antennas < 1 {
            return Err(Error::InvalidShape("antenna count must be >= 1".into()));
        }
        Ok(Self { dims, antennas })
    }

    /// Data-mode dimensions `T_1..T_d`.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    /// Number of data modes `d`.
    pub fn order(&self) -> usize {
        self.dims.len()
    }

    /// Blocklength `T = prod T_i`.
    pub fn block_len(&self) -> usize {
        self.dims.iter().product()
    }

    /// Total vectorized length `T * N`.
    pub fn total_len(&self) -> usize {
        self.block_len() * self.antennas
    }

    /// All d+1 mode dimensions, antenna mode last.
    pub fn mode_dims(&self) -> Vec<usize> {
        let mut m = self.dims.clone();
        m.push(self.antennas);
        m
    }
}

/// Dense complex order-(d+1) tensor in the vectorized layout above.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: TensorShape,
    data: Vec<C64>,
}

impl DenseTensor {
    pub fn zeros(shape: TensorShape) -> Self {
        let n = shape.total_len();
        Self {
            shape,
            data: vec![C64::new(0.0, 0.0); n],
        }
    }

    pub fn from_data(shape: TensorShape, data: Vec<C64>) -> Result<Self> {
        if data.len() != shape.total_len() {
            return Err(Error::ShapeMismatch(format!(
                "data length {} != shape total {}",
                data.len(),
                shape.total_len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &TensorShape {
        &self.shape
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    /// Frobenius norm of the tensor.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// View as the `T x N` received-signal matrix (rows = channel uses,
    /// columns = antennas). The layout makes this a plain reshape.
    pub fn as_rx_matrix(&self) -> DMatrix<C64> {
        let t = self.shape.block_len();
        let n = self.shape.antennas;
        DMatrix::from_fn(t, n, |r, c| self.data[r * n + c])
    }

    /// Inverse of [`as_rx_matrix`](Self::as_rx_matrix).
    pub fn from_rx_matrix(shape: TensorShape, m: &DMatrix<C64>) -> Result<Self> {
        if m.nrows() != shape.block_len() || m.ncols() != shape.antennas {
            return Err(Error::ShapeMismatch(format!(
                "matrix {}x{} does not match shape {}x{}",
                m.nrows(),
                m.ncols(),
                shape.block_len(),
                shape.antennas
            )));
        }
        let n = shape.antennas;
        let data = (0..shape.total_len())
            .map(|idx| m[(idx / n, idx % n)])
            .collect();
        Ok(Self { shape, data })
    }

    /// Mode-`mode` unfolding (0-based; `mode == d` is the antenna mode).
    ///
    /// Row `i` of the result collects all entries whose `mode`-index is `i`;
    /// columns run over the remaining modes in their original order with the
    /// original relative significance. For a rank-1 tensor this yields
    /// `x_mode * kron_chain(other modes)^T`, so `unfold(compose(f), m)`
    /// equals `X_m * khatri_rao(other factor matrices)^T`.
    pub fn unfold(&self, mode: usize) -> Result<DMatrix<C64>> {
        let dims = self.shape.mode_dims();
        if mode >= dims.len() {
            return Err(Error::ModeOutOfRange {
                mode,
                order: dims.len(),
            });
        }
        let rows = dims[mode];
        let cols = self.shape.total_len() / rows;
        // stride of `mode` in the flat layout, and the split of the flat
        // index into the part above and below it
        let inner: usize = dims[mode + 1..].iter().product();
        let outer_len: usize = dims[..mode].iter().product();
        let mut m = DMatrix::from_element(rows, cols, C64::new(0.0, 0.0));
        for outer in 0..outer_len {
            for i in 0..rows {
                let base = (outer * rows + i) * inner;
                let col_base = outer * inner;
                for j in 0..inner {
                    m[(i, col_base + j)] = self.data[base + j];
                }
            }
        }
        Ok(m)
    }

    /// Exact inverse of [`unfold`](Self::unfold).
    pub fn refold(shape: TensorShape, mode: usize, m: &DMatrix<C64>) -> Result<Self> {
        let dims = shape.mode_dims();
        if mode >= dims.len() {
            return Err(Error::ModeOutOfRange {
                mode,
                order: dims.len(),
            });
        }
        let rows = dims[mode];
        let cols = shape.total_len() / rows;
        if m.nrows() != rows || m.ncols() != cols {
            return Err(Error::ShapeMismatch(format!(
                "unfolding is {}x{}, expected {}x{}",
                m.nrows(),
                m.ncols(),
                rows,
                cols
            )));
        }
        let inner: usize = dims[mode + 1..].iter().product();
        let outer_len: usize = dims[..mode].iter().product();
        let mut data = vec![C64::new(0.0, 0.0); shape.total_len()];
        for outer in 0..outer_len {
            for i in 0..rows {
                let base = (outer * rows + i) * inner;
                let col_base = outer * inner;
                for j in 0..inner {
                    data[base + j] = m[(i, col_base + j)];
                }
            }
        }
        Ok(Self { shape, data })
    }
}

/// Kronecker product of the given vectors, in order.
///
/// Output length is the product of the input lengths; bilinear in every
/// argument. Errors on an empty list.
pub fn kron_chain(vectors: &[DVector<C64>]) -> Result<DVector<C64>> {
    if vectors.is_empty() {
        return Err(Error::EmptyInput("kron_chain"));
    }
    let mut out: Vec<C64> = vectors[0].iter().copied().collect();
    for v in &vectors[1..] {
        let mut next = Vec::with_capacity(out.len() * v.len());
        for &a in &out {
            for &b in v.iter() {
                next.push(a * b);
            }
        }
        out = next;
    }
    Ok(DVector::from_vec(out))
}

/// Column-wise Kronecker (Khatri-Rao) product.
///
/// All matrices must share the column count; column `j` of the result is
/// `kron_chain` of the inputs' columns `j`.
pub fn khatri_rao(matrices: &[DMatrix<C64>]) -> Result<DMatrix<C64>> {
    if matrices.is_empty() {
        return Err(Error::EmptyInput("khatri_rao"));
    }
    let k = matrices[0].ncols();
    for m in matrices {
        if m.ncols() != k {
            return Err(Error::ShapeMismatch(format!(
                "khatri_rao column counts differ: {} vs {}",
                m.ncols(),
                k
            )));
        }
    }
    let rows: usize = matrices.iter().map(|m| m.nrows()).product();
    let mut out = DMatrix::from_element(rows, k, C64::new(0.0, 0.0));
    for j in 0..k {
        let cols: Vec<DVector<C64>> = matrices.iter().map(|m| m.column(j).into_owned()).collect();
        let col = kron_chain(&cols)?;
        out.set_column(j, &col);
    }
    Ok(out)
}
