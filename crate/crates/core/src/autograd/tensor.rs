use crate::exec::Exec;
use crate::{Error, Result};

/// Work (multiply-adds) above which a matrix product is split across threads.
const PARALLEL_MATMUL_WORK: usize = 1 << 16;

/// Dense row-major `f64` tensor with positive extents.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&s| s == 0) {
            return Err(Error::Parameter(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::new(shape.to_vec(), vec![0.0; numel]).expect("zero-sized tensor")
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self::new(vec![data.len()], data).expect("empty vector")
    }

    /// Builds a matrix from rows of equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Parameter("ragged rows".into()));
        }
        Self::new(vec![r, c], rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(vec![rows, cols], data).expect("empty matrix")
    }

    pub fn shape(&self) -> &[usize] {
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows of a matrix; a vector counts as a single column.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        let c = self.cols();
        (0..self.rows()).map(|i| self.data[i * c + j]).collect()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.iter().any(|&s| s == 0) {
            return Err(Error::Dimension {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor {
            shape: vec![c, r],
            data: out,
        }
    }

    /// Matrix product `self · rhs` for `m×k` and `k×n` operands.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.matmul_with(rhs, Exec::default())
    }

    pub fn matmul_with(&self, rhs: &Tensor, exec: Exec) -> Result<Tensor> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (rhs.rows(), rhs.cols());
        if k != k2 || self.shape.len() > 2 || rhs.shape.len() > 2 {
            return Err(Error::Dimension {
                op: "matmul",
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        let exec = if m * k * n >= PARALLEL_MATMUL_WORK {
            exec
        } else {
            Exec::Sequential
        };
        let (a, b) = (&self.data, &rhs.data);
        exec.for_chunks(&mut out, n, |i, row| {
            let a_row = &a[i * k..(i + 1) * k];
            for (p, &a_ip) in a_row.iter().enumerate() {
                if a_ip == 0.0 {
                    continue;
                }
                let b_row = &b[p * n..(p + 1) * n];
                for (o, &b_pj) in row.iter_mut().zip(b_row) {
                    *o += a_ip * b_pj;
                }
            }
        });
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub(crate) fn t_matmul(&self, rhs: &Tensor) -> Tensor {
        let (k, m) = (self.rows(), self.cols());
        let n = rhs.cols();
        debug_assert_eq!(k, rhs.rows());
        let mut out = vec![0.0; m * n];
        let exec = if m * k * n >= PARALLEL_MATMUL_WORK {
            Exec::default()
        } else {
            Exec::Sequential
        };
        let (a, b) = (&self.data, &rhs.data);
        exec.for_chunks(&mut out, n, |i, row| {
            for p in 0..k {
                let a_pi = a[p * m + i];
                if a_pi == 0.0 {
                    continue;
                }
                let b_row = &b[p * n..(p + 1) * n];
                for (o, &b_pj) in row.iter_mut().zip(b_row) {
                    *o += a_pi * b_pj;
                }
            }
        });
        Tensor {
            shape: vec![m, n],
            data: out,
        }
    }

    /// `self · rhsᵀ`. The transpose is materialized so the product runs in
    /// row-update form, which vectorizes; the dot-product form does not.
    pub(crate) fn matmul_t(&self, rhs: &Tensor) -> Tensor {
        debug_assert_eq!(self.cols(), rhs.cols());
        self.matmul(&rhs.transpose()).expect("inner dimensions agree")
    }
}

/// Handle to a parameter tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors in declaration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.values
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }
}
