use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use super::NnError;

/// Element type of every tensor: `f32` for training, `f64` for checks.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any float")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dense row-major array with an optional gradient buffer of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()], grad: None }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; shape.iter().product()], grad: None }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, NnError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NnError::Shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { shape: shape.to_vec(), data, grad: None })
    }

    /// Zero-initialized parameter with an allocated gradient slot.
    pub fn parameter(shape: &[usize], data: Vec<T>) -> Result<Self, NnError> {
        let mut t = Self::from_vec(shape, data)?;
        t.grad = Some(vec![T::zero(); t.data.len()]);
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated on first use.
    pub fn grad_mut(&mut self) -> &mut [T] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, NnError> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(NnError::Shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// `(batch, channels, height, width)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize), NnError> {
        match self.shape[..] {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(NnError::Shape(format!("expected (batch, channels, height, width), got {:?}", self.shape))),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize), NnError> {
        match self.shape[..] {
            [b, f] => Ok((b, f)),
            _ => Err(NnError::Shape(format!("expected (batch, features), got {:?}", self.shape))),
        }
    }

    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Values of sample `b` along the leading axis.
    pub fn sample(&self, b: usize) -> &[T] {
        let per = self.data.len() / self.batch().max(1);
        &self.data[b * per..(b + 1) * per]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [T] {
        let per = self.data.len() / self.batch().max(1);
        &mut self.data[b * per..(b + 1) * per]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            grad: self.grad.as_ref().map(|g| g.iter().map(|v| U::of(v.as_f64())).collect()),
        }
    }

    pub fn same_shape(&self, other: &Self) -> Result<(), NnError> {
        if self.shape != other.shape {
            return Err(NnError::Shape(format!("shape mismatch {:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<(), NnError> {
        self.same_shape(other)?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a += b);
        Ok(())
    }

    pub fn dot(&self, other: &Self) -> Result<f64, NnError> {
        self.same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a.as_f64() * b.as_f64()).sum())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self, NnError> {
        let first = items.first().ok_or_else(|| NnError::Shape("cannot stack zero tensors".into()))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            first.same_shape(t)?;
            data.extend_from_slice(&t.data);
        }
        Ok(Self { shape, data, grad: None })
    }
}
