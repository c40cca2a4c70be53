use crate::error::{Error, Result};

/// Floating point type used for all tensors.
///
/// Defaults to `f64`; the `single` feature switches to `f32` for faster training.
#[cfg(not(feature = "single"))]
pub type Scalar = f64;
#[cfg(feature = "single")]
pub type Scalar = f32;

/// Dtype code written to checkpoints (0 = f32, 1 = f64).
pub const SCALAR_DTYPE: u8 = if std::mem::size_of::<Scalar>() == 8 { 1 } else { 0 };

/// Dense row-major tensor with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<Scalar>,
    grad: Option<Vec<Scalar>>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<Scalar>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "dims {:?} need {} elements, got {}",
                dims,
                n,
                data.len()
            )));
        }
        Ok(Self { dims, data, grad: None })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Self { dims: dims.to_vec(), data: vec![0.0; n], grad: None }
    }

    pub fn filled(dims: &[usize], value: Scalar) -> Self {
        let n = dims.iter().product();
        Self { dims: dims.to_vec(), data: vec![value; n], grad: None }
    }

    /// Builds a matrix from nested rows. Panics on ragged input; intended for tests and fixtures.
    pub fn from_rows(rows: &[Vec<Scalar>]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flatten().copied().collect();
        Self { dims: vec![rows.len(), cols], data, grad: None }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[Scalar] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Scalar] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Scalar> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a matrix (first extent). Vectors count as a single row.
    pub fn rows(&self) -> usize {
        match self.dims.len() {
            0 => 1,
            1 => 1,
            _ => self.dims[0],
        }
    }

    /// Columns of a matrix (product of trailing extents).
    pub fn cols(&self) -> usize {
        match self.dims.len() {
            0 => 1,
            1 => self.dims[0],
            _ => self.dims[1..].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[Scalar] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [Scalar] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, r: usize, c: usize) -> Scalar {
        self.data[r * self.cols() + c]
    }

    pub fn grad(&self) -> Option<&[Scalar]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [Scalar]> {
        self.grad.as_deref_mut()
    }

    /// Attaches a zeroed gradient buffer (marks the tensor trainable).
    pub fn enable_grad(&mut self) {
        self.grad = Some(vec![0.0; self.data.len()]);
    }

    /// Drops the gradient buffer (marks the tensor frozen).
    pub fn disable_grad(&mut self) {
        self.grad = None;
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Copy of the values without any gradient buffer.
    pub fn detached(&self) -> Self {
        Self { dims: self.dims.clone(), data: self.data.clone(), grad: None }
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.rows() {
            return Err(Error::Shape(format!(
                "row slice {start}..{end} of {} rows",
                self.rows()
            )));
        }
        let c = self.cols();
        Ok(Self {
            dims: vec![end - start, c],
            data: self.data[start * c..end * c].to_vec(),
            grad: None,
        })
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Self> {
        let cols = match parts.first() {
            Some(t) => t.cols(),
            None => return Err(Error::Shape("concat of zero tensors".into())),
        };
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols() != cols {
                return Err(Error::Shape(format!("concat: {} vs {} columns", p.cols(), cols)));
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        Ok(Self { dims: vec![rows, cols], data, grad: None })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// A named, possibly trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        Self { name: name.into(), tensor }
    }
}
