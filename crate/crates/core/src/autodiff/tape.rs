use std::borrow::Cow;

use super::graph::Graph;
use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{self, Real, Tensor4};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Constant,
    Param(ParamId),
    Conv { x: Var, weight: Var, bias: Var },
    Relu(Var),
    Add(Var, Var),
    Scale(Var, T),
    Concat(Vec<Var>),
    Split { x: Var, start: usize, len: usize },
    Shuffle { x: Var, r: usize },
    Sum(Var),
    L1 { pred: Var, target: Var },
}

struct Node<'a, T: Real> {
    value: Cow<'a, Tensor4<T>>,
    op: Op<T>,
}

/// Append-only record of a computation. Node inputs always precede the
/// node, so a single reverse sweep visits every node once.
pub struct Tape<'a, T: Real> {
    params: &'a ParamStore<T>,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node<'a, T>>,
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new(params: &'a ParamStore<T>) -> Self {
        Self {
            params,
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor4<T>>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor4<T> {
        &self.nodes[v.0].value
    }

    /// Leaf for a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(Cow::Borrowed(self.params.value(id)), Op::Param(id));
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn conv2d_vars(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = tensor::conv2d(self.value(x), self.value(weight), self.value(bias).data())?;
        Ok(self.push(Cow::Owned(out), Op::Conv { x, weight, bias }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let mut s = T::ZERO;
        for &v in self.value(x).data() {
            s += v;
        }
        self.push(Cow::Owned(Tensor4::filled([1, 1, 1, 1], s)), Op::Sum(x))
    }

    /// Mean absolute error between two equally shaped values.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(Error::shape("l1_loss", &p.shape(), &t.shape()));
        }
        let mut s = T::ZERO;
        for (&a, &b) in p.data().iter().zip(t.data()) {
            s += (a - b).abs();
        }
        let mean = s / T::from_f64(p.len() as f64);
        Ok(self.push(
            Cow::Owned(Tensor4::filled([1, 1, 1, 1], mean)),
            Op::L1 { pred, target },
        ))
    }

    /// Activation pattern of every ReLU input and L1 residual on the tape.
    /// Two evaluations with equal patterns lie on the same smooth piece.
    pub fn kink_pattern(&self) -> Vec<i8> {
        let sign = |v: T| {
            if v > T::ZERO {
                1
            } else if v < T::ZERO {
                -1
            } else {
                0
            }
        };
        let mut out = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::Relu(x) => out.extend(self.value(x).data().iter().map(|&v| sign(v))),
                Op::L1 { pred, target } => out.extend(
                    self.value(pred)
                        .data()
                        .iter()
                        .zip(self.value(target).data())
                        .map(|(&a, &b)| sign(a - b)),
                ),
                _ => {}
            }
        }
        out
    }

    /// Reverse sweep from a scalar node. Parameter leaves receive
    /// `d loss / d param`; constants receive nothing.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", lv.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor4<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor4::filled(lv.shape(), T::ONE));
        let mut out = Gradients {
            slots: vec![None; self.params.len()],
        };

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Constant => {}
                Op::Param(id) => out.slots[id.0] = Some(g),
                Op::Conv { x, weight, bias } => {
                    let w = self.value(*weight);
                    let k = w.shape()[2];
                    let gx = tensor::conv2d_grad_input(&g, w);
                    let (gw, gb) = tensor::conv2d_grad_params(self.value(*x), &g, k);
                    let gb = Tensor4::from_vec(self.value(*bias).shape(), gb)?;
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *weight, gw);
                    accumulate(&mut grads, *bias, gb);
                }
                Op::Relu(x) => {
                    let input = self.value(*x);
                    let mut gx = g;
                    for (gv, &xv) in gx.data_mut().iter_mut().zip(input.data()) {
                        if xv <= T::ZERO {
                            *gv = T::ZERO;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Scale(x, alpha) => accumulate(&mut grads, *x, tensor::scale(&g, *alpha)),
                Op::Concat(parts) => {
                    let sizes: Vec<usize> = parts.iter().map(|p| self.value(*p).channels()).collect();
                    for (p, gp) in parts.iter().zip(tensor::split_channels(&g, &sizes)?) {
                        accumulate(&mut grads, *p, gp);
                    }
                }
                Op::Split { x, start, len } => {
                    let shape = self.value(*x).shape();
                    let slot = grads[x.0].get_or_insert_with(|| Tensor4::zeros(shape));
                    add_channel_slice(slot, &g, *start, *len);
                }
                Op::Shuffle { x, r } => accumulate(&mut grads, *x, tensor::pixel_unshuffle(&g, *r)?),
                Op::Sum(x) => {
                    let gv = g.data()[0];
                    accumulate(&mut grads, *x, Tensor4::filled(self.value(*x).shape(), gv));
                }
                Op::L1 { pred, target } => {
                    let p = self.value(*pred);
                    let t = self.value(*target);
                    let scale = g.data()[0] / T::from_f64(p.len() as f64);
                    let gp: Vec<T> = p
                        .data()
                        .iter()
                        .zip(t.data())
                        .map(|(&a, &b)| {
                            if a > b {
                                scale
                            } else if a < b {
                                -scale
                            } else {
                                T::ZERO
                            }
                        })
                        .collect();
                    let gp = Tensor4::from_vec(p.shape(), gp)?;
                    if !matches!(self.nodes[target.0].op, Op::Constant) {
                        accumulate(&mut grads, *target, tensor::scale(&gp, -T::ONE));
                    }
                    accumulate(&mut grads, *pred, gp);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor4<T>>], v: Var, g: Tensor4<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += *x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn add_channel_slice<T: Real>(dst: &mut Tensor4<T>, src: &Tensor4<T>, start: usize, len: usize) {
    let [n, c, h, w] = dst.shape();
    let plane = h * w;
    let data = dst.data_mut();
    for b in 0..n {
        let d = &mut data[(b * c + start) * plane..(b * c + start + len) * plane];
        let s = &src.data()[b * len * plane..(b + 1) * len * plane];
        for (dv, &sv) in d.iter_mut().zip(s) {
            *dv += sv;
        }
    }
}

impl<'a, T: Real> Graph<T> for Tape<'a, T> {
    type Value = Var;

    fn constant(&mut self, t: Tensor4<T>) -> Var {
        self.push(Cow::Owned(t), Op::Constant)
    }

    fn tensor<'v>(&'v self, v: &'v Var) -> &'v Tensor4<T> {
        self.value(*v)
    }

    fn conv2d(&mut self, x: &Var, weight: ParamId, bias: ParamId) -> Result<Var> {
        let (w, b) = (self.param(weight), self.param(bias));
        self.conv2d_vars(*x, w, b)
    }

    fn relu(&mut self, x: &Var) -> Var {
        let out = tensor::relu(self.value(*x));
        self.push(Cow::Owned(out), Op::Relu(*x))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = tensor::add(self.value(*a), self.value(*b))?;
        Ok(self.push(Cow::Owned(out), Op::Add(*a, *b)))
    }

    fn scale(&mut self, x: &Var, alpha: T) -> Var {
        let out = tensor::scale(self.value(*x), alpha);
        self.push(Cow::Owned(out), Op::Scale(*x, alpha))
    }

    fn concat(&mut self, parts: &[&Var]) -> Result<Var> {
        let values: Vec<&Tensor4<T>> = parts.iter().map(|p| self.value(**p)).collect();
        let out = tensor::concat_channels(&values)?;
        Ok(self.push(Cow::Owned(out), Op::Concat(parts.iter().map(|p| **p).collect())))
    }

    fn split(&mut self, x: &Var, sizes: &[usize]) -> Result<Vec<Var>> {
        let pieces = tensor::split_channels(self.value(*x), sizes)?;
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for (piece, &len) in pieces.into_iter().zip(sizes) {
            out.push(self.push(Cow::Owned(piece), Op::Split { x: *x, start, len }));
            start += len;
        }
        Ok(out)
    }

    fn pixel_shuffle(&mut self, x: &Var, r: usize) -> Result<Var> {
        let out = tensor::pixel_shuffle(self.value(*x), r)?;
        Ok(self.push(Cow::Owned(out), Op::Shuffle { x: *x, r }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[(&str, Vec<usize>, Vec<f64>)]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (name, dims, data) in values {
            s.insert(*name, dims, data.clone()).unwrap();
        }
        s
    }

    #[test]
    fn scale_then_sum() {
        let s = store(&[("x", vec![1, 1, 2, 2], vec![1.0, -2.0, 3.0, 0.5])]);
        let id = s.id("x").unwrap();
        let mut tape = Tape::new(&s);
        let x = tape.param(id);
        let y = tape.scale(&x, 3.0);
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(id).unwrap().data(), &[3.0; 4]);
    }

    #[test]
    fn relu_subgradient() {
        let s = store(&[("x", vec![2], vec![-1.0, 2.0])]);
        let id = s.id("x").unwrap();
        let mut tape = Tape::new(&s);
        let x = tape.param(id);
        let y = tape.relu(&x);
        let loss = tape.sum(y);
        assert_eq!(tape.backward(loss).unwrap().get(id).unwrap().data(), &[0.0, 1.0]);

        let z = store(&[("x", vec![3], vec![0.0, -0.0, -5.0])]);
        let zid = z.id("x").unwrap();
        let mut tape = Tape::new(&z);
        let x = tape.param(zid);
        let y = tape.relu(&x);
        let loss = tape.sum(y);
        assert_eq!(tape.backward(loss).unwrap().get(zid).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let s = store(&[("x", vec![2], vec![1.0, 2.0])]);
        let mut tape = Tape::new(&s);
        let x = tape.param(s.id("x").unwrap());
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = sum(x + x) + sum(2x) -> grad 4
        let s = store(&[("x", vec![3], vec![1.0, 2.0, 3.0])]);
        let id = s.id("x").unwrap();
        let mut tape = Tape::new(&s);
        let x = tape.param(id);
        let a = tape.add(&x, &x).unwrap();
        let b = tape.scale(&x, 2.0);
        let c = tape.add(&a, &b).unwrap();
        let loss = tape.sum(c);
        assert_eq!(tape.backward(loss).unwrap().get(id).unwrap().data(), &[4.0; 3]);
    }

    #[test]
    fn concat_and_split_route_gradients() {
        let s = store(&[
            ("a", vec![1, 1, 1, 2], vec![1.0, 2.0]),
            ("b", vec![1, 2, 1, 2], vec![3.0, 4.0, 5.0, 6.0]),
        ]);
        let (ia, ib) = (s.id("a").unwrap(), s.id("b").unwrap());
        let mut tape = Tape::new(&s);
        let a = tape.param(ia);
        let b = tape.param(ib);
        let cat = tape.concat(&[&a, &b]).unwrap();
        let parts = tape.split(&cat, &[2, 1]).unwrap();
        let w = tape.scale(&parts[0], 10.0);
        let s0 = tape.sum(w);
        let s1 = tape.sum(parts[1]);
        let total = tape.add(&s0, &s1).unwrap();
        let g = tape.backward(total).unwrap();
        assert_eq!(g.get(ia).unwrap().data(), &[10.0, 10.0]);
        assert_eq!(g.get(ib).unwrap().data(), &[10.0, 10.0, 1.0, 1.0]);
    }

    #[test]
    fn constants_get_no_gradient_and_unused_params_are_none() {
        let s = store(&[("x", vec![2], vec![1.0, 2.0]), ("unused", vec![1], vec![0.0])]);
        let mut tape = Tape::new(&s);
        let x = tape.param(s.id("x").unwrap());
        let c = tape.constant(Tensor4::from_vec([1, 1, 1, 2], vec![0.0, 5.0]).unwrap());
        let loss = tape.l1_loss(x, c).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(s.id("x").unwrap()).unwrap().data(), &[0.5, -0.5]);
        assert!(g.get(s.id("unused").unwrap()).is_none());
    }

    #[test]
    fn l1_gradient_is_signed_mean() {
        let s = store(&[("p", vec![4], vec![1.0, 2.0, 3.0, 4.0])]);
        let id = s.id("p").unwrap();
        let mut tape = Tape::new(&s);
        let p = tape.param(id);
        let t = tape.constant(Tensor4::from_vec([1, 1, 1, 4], vec![0.0, 2.0, 5.0, 4.5]).unwrap());
        let loss = tape.l1_loss(p, t).unwrap();
        assert_eq!(tape.value(loss).data()[0], (1.0 + 0.0 + 2.0 + 0.5) / 4.0);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(id).unwrap().data(), &[0.25, 0.0, -0.25, -0.25]);
    }

    #[test]
    fn backward_twice_is_identical() {
        let s = store(&[
            ("w", vec![2, 1, 3, 3], (0..18).map(|i| (i as f64 * 0.7).sin()).collect()),
            ("b", vec![2], vec![0.1, -0.1]),
        ]);
        let run = || {
            let mut tape = Tape::new(&s);
            let x = tape.constant(Tensor4::from_fn([1, 1, 4, 4], |[_, _, y, x]| (y * 4 + x) as f64 * 0.1));
            let y = Graph::conv2d(&mut tape, &x, s.id("w").unwrap(), s.id("b").unwrap()).unwrap();
            let r = tape.relu(&y);
            let sh = tape.pixel_shuffle(&r, 1).unwrap();
            let loss = tape.sum(sh);
            tape.backward(loss).unwrap().slots
        };
        assert_eq!(
            format!("{:?}", run()),
            format!("{:?}", run())
        );
    }
}
