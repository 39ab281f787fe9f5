use super::Shape;
use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Shape>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.has_deferred() || shape.numel() != data.len() {
            return Err(Error::shape(
                "tensor data length",
                &shape,
                &Shape::from([data.len()]),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: vec![v],
        }
    }

    pub fn full(shape: impl Into<Shape>, v: f64) -> Self {
        let shape = shape.into();
        let n = shape.numel();
        Tensor {
            shape,
            data: vec![v; n],
        }
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Shape>) -> Self {
        Self::full(shape, 1.0)
    }

    /// One-dimensional tensor holding `v`.
    pub fn vector(v: impl Into<Vec<f64>>) -> Self {
        let data = v.into();
        Tensor {
            shape: Shape::from([data.len()]),
            data,
        }
    }

    /// Two-dimensional tensor from equal-length rows.
    pub fn matrix(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape(
                    "matrix rows",
                    &Shape::from([cols]),
                    &Shape::from([r.len()]),
                ));
            }
            data.extend_from_slice(r);
        }
        Tensor::new([rows.len(), cols], data)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::shape("item", &Shape::scalar(), &self.shape))
        }
    }

    pub fn reshape(&self, shape: impl Into<Shape>) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Row `i` along the leading axis.
    pub fn row(&self, i: usize) -> Result<Tensor> {
        if self.rank() == 0 || i >= self.dims()[0] {
            return Err(Error::shape("row index", &self.shape, &Shape::from([i])));
        }
        let rest = self.shape.drop_leading(1);
        let n = rest.numel();
        Ok(Tensor {
            shape: rest,
            data: self.data[i * n..(i + 1) * n].to_vec(),
        })
    }

    /// Elementwise binary op under trailing-aligned broadcasting.
    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape == other.shape {
            let data = self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Ok(Tensor {
                shape: self.shape.clone(),
                data,
            });
        }
        let out = Shape::broadcast(&self.shape, &other.shape)
            .ok_or_else(|| Error::shape("broadcast", &self.shape, &other.shape))?;
        let ia = broadcast_index(&self.shape, &out);
        let ib = broadcast_index(&other.shape, &out);
        let data = ia
            .iter()
            .zip(&ib)
            .map(|(&i, &j)| f(self.data[i], other.data[j]))
            .collect();
        Ok(Tensor { shape: out, data })
    }

    pub fn broadcast_to(&self, shape: &Shape) -> Result<Tensor> {
        if &self.shape == shape {
            return Ok(self.clone());
        }
        match Shape::broadcast(&self.shape, shape) {
            Some(s) if &s == shape => {
                let idx = broadcast_index(&self.shape, shape);
                Ok(Tensor {
                    shape: shape.clone(),
                    data: idx.iter().map(|&i| self.data[i]).collect(),
                })
            }
            _ => Err(Error::shape("broadcast_to", &self.shape, shape)),
        }
    }

    /// Sum a broadcast result back down to `shape` (the adjoint of broadcasting).
    pub fn sum_to_shape(&self, shape: &Shape) -> Result<Tensor> {
        if &self.shape == shape {
            return Ok(self.clone());
        }
        match Shape::broadcast(shape, &self.shape) {
            Some(s) if s == self.shape => {}
            _ => return Err(Error::shape("sum_to_shape", &self.shape, shape)),
        }
        let idx = broadcast_index(shape, &self.shape);
        let mut data = vec![0.0; shape.numel()];
        for (k, &i) in idx.iter().enumerate() {
            data[i] += self.data[k];
        }
        Ok(Tensor {
            shape: shape.clone(),
            data,
        })
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|x| x * s)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a * b)
    }

    /// Mean over the leading axis.
    pub fn mean_axis0(&self) -> Result<Tensor> {
        if self.rank() == 0 || self.dims()[0] == 0 {
            return Err(Error::shape("mean over axis 0", &self.shape, &Shape::scalar()));
        }
        let t = self.dims()[0];
        let rest = self.shape.drop_leading(1);
        let n = rest.numel();
        let mut data = vec![0.0; n];
        for r in 0..t {
            for (d, x) in data.iter_mut().zip(&self.data[r * n..(r + 1) * n]) {
                *d += x;
            }
        }
        for d in &mut data {
            *d /= t as f64;
        }
        Ok(Tensor { shape: rest, data })
    }
}

/// For each flat index of `out`, the flat index into a tensor of shape
/// `input` that broadcasts to it.
pub(crate) fn broadcast_index(input: &Shape, out: &Shape) -> Vec<usize> {
    let n = out.numel();
    if input.numel() == 1 {
        return vec![0; n];
    }
    let offset = out.rank() - input.rank();
    let in_strides = input.strides();
    let mut strides = vec![0; out.rank()];
    for i in 0..input.rank() {
        if input.dim(i) != 1 {
            strides[i + offset] = in_strides[i];
        }
    }
    let dims = out.dims();
    let mut idx = vec![0usize; out.rank()];
    let mut result = Vec::with_capacity(n);
    let mut cur = 0usize;
    for _ in 0..n {
        result.push(cur);
        for ax in (0..dims.len()).rev() {
            idx[ax] += 1;
            cur += strides[ax];
            if idx[ax] < dims[ax] {
                break;
            }
            cur -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    result
}

impl From<f64> for Tensor {
    fn from(v: f64) -> Self {
        Tensor::scalar(v)
    }
}

impl From<Vec<f64>> for Tensor {
    fn from(v: Vec<f64>) -> Self {
        Tensor::vector(v)
    }
}
