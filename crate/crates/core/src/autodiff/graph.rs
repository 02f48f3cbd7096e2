use super::params::{ParamId, ParamStore};
use crate::error::Result;
use crate::tensor::{self, Real, Tensor4};

/// The operation set a network is written against. [`Eval`] runs it eagerly
/// without recording; [`super::Tape`] records it for reverse-mode
/// differentiation.
pub trait Graph<T: Real> {
    type Value: Clone;

    fn constant(&mut self, t: Tensor4<T>) -> Self::Value;
    fn tensor<'v>(&'v self, v: &'v Self::Value) -> &'v Tensor4<T>;
    fn conv2d(&mut self, x: &Self::Value, weight: ParamId, bias: ParamId) -> Result<Self::Value>;
    fn relu(&mut self, x: &Self::Value) -> Self::Value;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn scale(&mut self, x: &Self::Value, alpha: T) -> Self::Value;
    fn concat(&mut self, parts: &[&Self::Value]) -> Result<Self::Value>;
    fn split(&mut self, x: &Self::Value, sizes: &[usize]) -> Result<Vec<Self::Value>>;
    fn pixel_shuffle(&mut self, x: &Self::Value, r: usize) -> Result<Self::Value>;
}

/// Eager evaluation against a borrowed parameter store.
pub struct Eval<'a, T> {
    params: &'a ParamStore<T>,
}

impl<'a, T: Real> Eval<'a, T> {
    pub fn new(params: &'a ParamStore<T>) -> Self {
        Self { params }
    }
}

impl<T: Real> Graph<T> for Eval<'_, T> {
    type Value = Tensor4<T>;

    fn constant(&mut self, t: Tensor4<T>) -> Tensor4<T> {
        t
    }

    fn tensor<'v>(&'v self, v: &'v Tensor4<T>) -> &'v Tensor4<T> {
        v
    }

    fn conv2d(&mut self, x: &Tensor4<T>, weight: ParamId, bias: ParamId) -> Result<Tensor4<T>> {
        tensor::conv2d(x, self.params.value(weight), self.params.value(bias).data())
    }

    fn relu(&mut self, x: &Tensor4<T>) -> Tensor4<T> {
        tensor::relu(x)
    }

    fn add(&mut self, a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
        tensor::add(a, b)
    }

    fn scale(&mut self, x: &Tensor4<T>, alpha: T) -> Tensor4<T> {
        tensor::scale(x, alpha)
    }

    fn concat(&mut self, parts: &[&Tensor4<T>]) -> Result<Tensor4<T>> {
        tensor::concat_channels(parts)
    }

    fn split(&mut self, x: &Tensor4<T>, sizes: &[usize]) -> Result<Vec<Tensor4<T>>> {
        tensor::split_channels(x, sizes)
    }

    fn pixel_shuffle(&mut self, x: &Tensor4<T>, r: usize) -> Result<Tensor4<T>> {
        tensor::pixel_shuffle(x, r)
    }
}
