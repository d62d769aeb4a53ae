use super::real::Real;
use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv { x: Var, w: Var, b: Var, stride: usize },
    Relu(Var),
    Sigmoid(Var),
    Up2(Var),
    Concat(Vec<Var>),
    Add(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation so gradients can be pulled back through it.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    checked: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients for every node reached by the backward pass.
#[derive(Debug)]
pub struct Grads<T> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.slots.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.slots.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            checked: false,
        }
    }

    /// A tape that verifies every value and gradient is finite.
    pub fn checked() -> Self {
        Tape {
            nodes: Vec::new(),
            checked: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Trainable input.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Constant input; no gradient is propagated into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op, inputs: &[Var]) -> Result<Var> {
        if self.checked && !value.all_finite() {
            return Err(Error::Numeric(format!("non-finite output from {}", op_name(&op))));
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push_raw(value, op, needs_grad))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let y = tensor::conv2d(self.value(x), self.value(w), self.value(b), stride)?;
        self.push(y, Op::Conv { x, w, b, stride }, &[x, w, b])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let mut y = self.value(x).clone();
        for v in y.data_mut() {
            if !(*v > T::ZERO) {
                *v = T::ZERO;
            }
        }
        self.push(y, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let mut y = self.value(x).clone();
        for v in y.data_mut() {
            *v = T::ONE / (T::ONE + (-*v).exp());
        }
        self.push(y, Op::Sigmoid(x), &[x])
    }

    pub fn up2(&mut self, x: Var) -> Result<Var> {
        let y = tensor::up2(self.value(x));
        self.push(y, Op::Up2(x), &[x])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let y = tensor::concat(&refs)?;
        self.push(y, Op::Concat(parts.to_vec()), parts)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim(format!("add {:?} and {:?}", ta.shape(), tb.shape())));
        }
        let mut y = ta.clone();
        y.add_assign(tb);
        self.push(y, Op::Add(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let f = T::from_f64(s);
        let mut y = self.value(x).clone();
        for v in y.data_mut() {
            *v = *v * f;
        }
        self.push(y, Op::Scale(x, s), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        let f = T::from_f64(s);
        let mut y = self.value(x).clone();
        for v in y.data_mut() {
            *v += f;
        }
        self.push(y, Op::AddScalar(x), &[x])
    }

    /// Reverse pass from externally supplied output gradients.
    pub fn backward(&self, seeds: &[(Var, Tensor<T>)]) -> Result<Grads<T>> {
        let mut slots: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        for (v, g) in seeds {
            if g.shape() != self.value(*v).shape() {
                return Err(Error::dim(format!(
                    "seed gradient {:?} for value {:?}",
                    g.shape(),
                    self.value(*v).shape()
                )));
            }
            accumulate(&mut slots[v.0], g.clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = slots[idx].take() else { continue };
            if self.checked && !g.all_finite() {
                return Err(Error::Numeric(format!("non-finite gradient into {}", op_name(&node.op))));
            }
            match &node.op {
                Op::Leaf => {
                    slots[idx] = Some(g);
                    continue;
                }
                Op::Conv { x, w, b, stride } => {
                    let want_dx = self.nodes[x.0].needs_grad;
                    let (dx, dw, db) =
                        tensor::conv2d_backward(self.value(*x), self.value(*w), &g, *stride, want_dx);
                    if let Some(dx) = dx {
                        accumulate(&mut slots[x.0], dx);
                    }
                    if self.nodes[w.0].needs_grad {
                        accumulate(&mut slots[w.0], dw);
                    }
                    if self.nodes[b.0].needs_grad {
                        let shape = self.value(*b).shape();
                        accumulate(&mut slots[b.0], Tensor::from_vec(shape, db.into_data())?);
                    }
                }
                Op::Relu(x) => {
                    let mut dx = g;
                    for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        if !(y > T::ZERO) {
                            *d = T::ZERO;
                        }
                    }
                    accumulate(&mut slots[x.0], dx);
                }
                Op::Sigmoid(x) => {
                    let mut dx = g;
                    for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        *d = *d * y * (T::ONE - y);
                    }
                    accumulate(&mut slots[x.0], dx);
                }
                Op::Up2(x) => {
                    let dx = tensor::up2_backward(&g, self.value(*x).shape());
                    accumulate(&mut slots[x.0], dx);
                }
                Op::Concat(parts) => {
                    let chans: Vec<usize> = parts.iter().map(|p| self.value(*p).channels()).collect();
                    for (p, d) in parts.iter().zip(tensor::concat_backward(&g, &chans)) {
                        if self.nodes[p.0].needs_grad {
                            accumulate(&mut slots[p.0], d);
                        }
                    }
                }
                Op::Add(a, b) => {
                    if self.nodes[b.0].needs_grad {
                        accumulate(&mut slots[b.0], g.clone());
                    }
                    if self.nodes[a.0].needs_grad {
                        accumulate(&mut slots[a.0], g);
                    }
                }
                Op::Scale(x, s) => {
                    let f = T::from_f64(*s);
                    let mut dx = g;
                    for d in dx.data_mut() {
                        *d = *d * f;
                    }
                    accumulate(&mut slots[x.0], dx);
                }
                Op::AddScalar(x) => accumulate(&mut slots[x.0], g),
            }
        }
        Ok(Grads { slots })
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Conv { .. } => "conv2d",
        Op::Relu(_) => "relu",
        Op::Sigmoid(_) => "sigmoid",
        Op::Up2(_) => "up2",
        Op::Concat(_) => "concat",
        Op::Add(..) => "add",
        Op::Scale(..) => "scale",
        Op::AddScalar(_) => "add_scalar",
    }
}
