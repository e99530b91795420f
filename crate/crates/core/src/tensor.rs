//! Dense row-major `f32` tensors.
//!
//! Tensors are immutable once built. Image batches use the NHWC layout and
//! convolution kernels are stored as `[kh, kw, cin, cout]`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor from external data, rejecting zero-sized axes,
    /// length mismatches and non-finite elements.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let t = Self::from_shape_vec(shape, data)?;
        if let Some(pos) = t.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("tensor element {pos} (shape {:?})", t.shape),
            });
        }
        Ok(t)
    }

    /// Shape-checked constructor that skips the finiteness scan. Used for
    /// values computed from already-validated tensors.
    pub(crate) fn from_shape_vec(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} must have at least one axis and no zero-sized axes"),
            ));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} holds {n} elements but {} were given", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape.to_vec(), vec![value; n])
    }

    pub fn vector(data: Vec<f32>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Same data, new shape. Element count must match.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Self::from_shape_vec(shape, self.data.clone())
    }

    /// Applies `f` elementwise.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Size of the leading (batch) axis.
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Elements per entry of the leading axis.
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    /// Copies entries `range` of the leading axis into a new tensor.
    pub fn slice_batch(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.batch() {
            return Err(Error::dim(
                "slice_batch",
                format!("range {range:?} outside leading axis of size {}", self.batch()),
            ));
        }
        let row = self.row_len();
        let mut shape = self.shape.clone();
        shape[0] = range.len();
        Self::from_shape_vec(shape, self.data[range.start * row..range.end * row].to_vec())
    }

    /// Gathers the given entries of the leading axis, in order.
    pub fn select_batch(&self, indices: &[usize]) -> Result<Self> {
        let row = self.row_len();
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            if i >= self.batch() {
                return Err(Error::dim(
                    "select_batch",
                    format!("index {i} outside leading axis of size {}", self.batch()),
                ));
            }
            data.extend_from_slice(&self.data[i * row..(i + 1) * row]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Self::from_shape_vec(shape, data)
    }

    /// Concatenates tensors along the leading axis. Trailing axes must agree.
    pub fn concat_batch(parts: &[Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let tail = &first.shape[1..];
        let mut data = Vec::with_capacity(parts.iter().map(Tensor::len).sum());
        let mut n = 0;
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(Error::dim(
                    "concat_batch",
                    format!("trailing axes {:?} vs {:?}", &p.shape[1..], tail),
                ));
            }
            n += p.batch();
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = n;
        Self::from_shape_vec(shape, data)
    }

    /// Keeps only the listed indices along `axis`, in the given order.
    pub fn gather_axis(&self, axis: usize, indices: &[usize]) -> Result<Self> {
        if axis >= self.rank() {
            return Err(Error::dim(
                "gather_axis",
                format!("axis {axis} out of range for rank {}", self.rank()),
            ));
        }
        let dim = self.shape[axis];
        if let Some(&bad) = indices.iter().find(|&&i| i >= dim) {
            return Err(Error::dim(
                "gather_axis",
                format!("index {bad} out of range for axis {axis} of size {dim}"),
            ));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            let base = o * dim * inner;
            for &i in indices {
                let start = base + i * inner;
                data.extend_from_slice(&self.data[start..start + inner]);
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = indices.len();
        Self::from_shape_vec(shape, data)
    }
}

/// Rank-2 view used for per-filter output maps and PCA inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix(Tensor);

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data).map(Matrix)
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::dim(
                "matrix",
                format!("expected a rank-2 tensor, got shape {:?}", t.shape()),
            ));
        }
        Ok(Matrix(t))
    }

    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        Matrix(Tensor::from_shape_vec(vec![rows, cols], data).expect("matrix shape"))
    }

    pub fn rows(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.0.data()[r * self.cols() + c]
    }

    pub fn data(&self) -> &[f32] {
        self.0.data()
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    /// Scales every entry by `s`.
    pub fn scaled(&self, s: f32) -> Self {
        Matrix(self.0.map(|v| v * s))
    }
}
