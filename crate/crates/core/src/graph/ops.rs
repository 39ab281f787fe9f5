//! Deterministic ops: static shape rules, forward kernels and their adjoints.

use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Axis selection for reductions. `axis: None` reduces every dimension.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reduce {
    pub axis: Option<isize>,
    pub keep_dims: bool,
}

impl Reduce {
    pub const ALL: Reduce = Reduce {
        axis: None,
        keep_dims: false,
    };

    pub fn axis(axis: isize) -> Self {
        Reduce {
            axis: Some(axis),
            keep_dims: false,
        }
    }

    pub fn keep(mut self) -> Self {
        self.keep_dims = true;
        self
    }
}

/// Value domain of a distribution, used to mask densities outside the support.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Support {
    Real,
    Positive,
    NonNegative,
    /// Closed interval `[0, 1]`.
    UnitInterval,
    /// Open interval `(0, 1)`.
    OpenUnitInterval,
    Binary,
    NonNegativeInteger,
    /// Integers in `0..k`.
    Index(usize),
    /// Non-negative vectors summing to one along the event axis.
    Simplex,
}

/// Parameter constraint checked at evaluation time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Constraint {
    Positive,
    NonNegative,
    UnitInterval,
}

pub(crate) const INTEGER_TOLERANCE: f64 = 1e-9;

fn is_integral(x: f64) -> bool {
    (x - x.round()).abs() <= INTEGER_TOLERANCE
}

impl Support {
    fn contains(&self, x: f64) -> bool {
        match self {
            Support::Real => x.is_finite(),
            Support::Positive => x > 0.0 && x.is_finite(),
            Support::NonNegative => x >= 0.0 && x.is_finite(),
            Support::UnitInterval => (0.0..=1.0).contains(&x),
            Support::OpenUnitInterval => x > 0.0 && x < 1.0,
            Support::Binary => is_integral(x) && (x.round() == 0.0 || x.round() == 1.0),
            Support::NonNegativeInteger => x.is_finite() && is_integral(x) && x.round() >= 0.0,
            Support::Index(k) => is_integral(x) && x.round() >= 0.0 && (x.round() as usize) < *k,
            Support::Simplex => (0.0..=1.0 + 1e-12).contains(&x),
        }
    }
}

/// Op codes with their attributes.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    /// `[m, k] x [k, n] -> [m, n]`.
    MatMul,
    /// Matrix-vector `[n, d] . [d] -> [n]` or inner product `[d] . [d] -> []`.
    Dot,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Softplus,
    Square,
    Sqrt,
    PowConst(f64),
    ReduceSum(Reduce),
    ReduceMean(Reduce),
    ReduceMax(Reduce),
    /// Rows of the first input selected by the integer-valued second input.
    Gather,
    /// Target dims; at most one `-1`.
    Reshape(Vec<isize>),
    BroadcastTo(Shape),
    Concat(usize),
    /// Stack equal-shaped inputs along a new leading axis.
    Stack,
    SliceRow(usize),
    /// Inputs `(logits, labels)`.
    SigmoidCrossEntropyWithLogits,
    /// `x * log(y)` with the convention `0 * log(0) = 0`.
    XLogY,
    Lgamma,
    OneHot(usize),
    StopGradient,
    /// Inputs `(log_density, value)`; `-inf` wherever the value's event block
    /// falls outside the support.
    MaskSupport { support: Support, event_rank: usize },
    /// Identity that fails evaluation when the constraint is violated.
    Check(Constraint),
}

/// Optional attributes for ops constructed by name.
#[derive(Clone, Debug, Default)]
pub struct Attributes {
    pub axis: Option<isize>,
    pub keep_dims: bool,
    pub exponent: Option<f64>,
    pub shape: Option<Vec<isize>>,
    pub index: Option<usize>,
    pub depth: Option<usize>,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::MatMul => "matmul",
            Op::Dot => "dot",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Softplus => "softplus",
            Op::Square => "square",
            Op::Sqrt => "sqrt",
            Op::PowConst(_) => "pow_const",
            Op::ReduceSum(_) => "reduce_sum",
            Op::ReduceMean(_) => "reduce_mean",
            Op::ReduceMax(_) => "reduce_max",
            Op::Gather => "gather",
            Op::Reshape(_) => "reshape",
            Op::BroadcastTo(_) => "broadcast_to",
            Op::Concat(_) => "concat",
            Op::Stack => "stack",
            Op::SliceRow(_) => "slice_row",
            Op::SigmoidCrossEntropyWithLogits => "sigmoid_cross_entropy_with_logits",
            Op::XLogY => "xlogy",
            Op::Lgamma => "lgamma",
            Op::OneHot(_) => "one_hot",
            Op::StopGradient => "stop_gradient",
            Op::MaskSupport { .. } => "mask_support",
            Op::Check(_) => "check",
        }
    }

    /// Build an op from its name. Ops needing structured attributes
    /// (`mask_support`, `check`) are only available through the enum.
    pub fn from_name(name: &str, attrs: &Attributes) -> Result<Op> {
        let reduce = Reduce {
            axis: attrs.axis,
            keep_dims: attrs.keep_dims,
        };
        let missing = |what: &str| Error::InvalidParam(format!("op `{name}` needs attribute `{what}`"));
        Ok(match name {
            "add" => Op::Add,
            "sub" => Op::Sub,
            "mul" => Op::Mul,
            "div" => Op::Div,
            "neg" => Op::Neg,
            "matmul" => Op::MatMul,
            "dot" => Op::Dot,
            "tanh" => Op::Tanh,
            "sigmoid" => Op::Sigmoid,
            "exp" => Op::Exp,
            "log" => Op::Log,
            "softplus" => Op::Softplus,
            "square" => Op::Square,
            "sqrt" => Op::Sqrt,
            "pow_const" => Op::PowConst(attrs.exponent.ok_or_else(|| missing("exponent"))?),
            "reduce_sum" => Op::ReduceSum(reduce),
            "reduce_mean" => Op::ReduceMean(reduce),
            "reduce_max" => Op::ReduceMax(reduce),
            "gather" => Op::Gather,
            "reshape" => Op::Reshape(attrs.shape.clone().ok_or_else(|| missing("shape"))?),
            "broadcast_to" => {
                let dims = attrs.shape.clone().ok_or_else(|| missing("shape"))?;
                Op::BroadcastTo(Shape::new(dims.into_iter().map(|d| d as usize).collect::<Vec<_>>()))
            }
            "concat" => Op::Concat(attrs.axis.unwrap_or(0) as usize),
            "stack" => Op::Stack,
            "slice_row" => Op::SliceRow(attrs.index.ok_or_else(|| missing("index"))?),
            "sigmoid_cross_entropy_with_logits" => Op::SigmoidCrossEntropyWithLogits,
            "xlogy" => Op::XLogY,
            "lgamma" => Op::Lgamma,
            "one_hot" => Op::OneHot(attrs.depth.ok_or_else(|| missing("depth"))?),
            "stop_gradient" => Op::StopGradient,
            other => return Err(Error::UnknownOp(other.to_string())),
        })
    }

    pub fn arity(&self) -> Option<usize> {
        match self {
            Op::Add
            | Op::Sub
            | Op::Mul
            | Op::Div
            | Op::MatMul
            | Op::Dot
            | Op::Gather
            | Op::SigmoidCrossEntropyWithLogits
            | Op::XLogY
            | Op::MaskSupport { .. } => Some(2),
            Op::Concat(_) | Op::Stack => None,
            _ => Some(1),
        }
    }

    /// Whether gradients may flow into input slot `i`.
    pub fn differentiable_input(&self, i: usize) -> bool {
        match self {
            Op::Gather => i == 0,
            Op::OneHot(_) => false,
            _ => true,
        }
    }

    /// Inputs whose adjoint is identically zero (not an error to reach).
    pub(crate) fn zero_gradient_input(&self, i: usize) -> bool {
        matches!(self, Op::MaskSupport { .. } if i == 1)
    }

    pub fn infer_shape(&self, inputs: &[&Shape]) -> Result<Shape> {
        if let Some(n) = self.arity() {
            if inputs.len() != n {
                return Err(Error::InvalidParam(format!(
                    "op `{}` takes {n} inputs, got {}",
                    self.name(),
                    inputs.len()
                )));
            }
        } else if inputs.is_empty() {
            return Err(Error::InvalidParam(format!("op `{}` needs inputs", self.name())));
        }
        let ctx = self.name();
        match self {
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::XLogY | Op::SigmoidCrossEntropyWithLogits => {
                Shape::broadcast(inputs[0], inputs[1]).ok_or_else(|| Error::shape(ctx, inputs[0], inputs[1]))
            }
            Op::Neg
            | Op::Tanh
            | Op::Sigmoid
            | Op::Exp
            | Op::Log
            | Op::Softplus
            | Op::Square
            | Op::Sqrt
            | Op::PowConst(_)
            | Op::Lgamma
            | Op::StopGradient
            | Op::Check(_) => Ok(inputs[0].clone()),
            Op::MatMul => {
                let (a, b) = (inputs[0], inputs[1]);
                if a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0) {
                    return Err(Error::shape(ctx, a, b));
                }
                Ok(Shape::from([a.dim(0), b.dim(1)]))
            }
            Op::Dot => {
                let (a, b) = (inputs[0], inputs[1]);
                match (a.rank(), b.rank()) {
                    (2, 1) if a.dim(1) == b.dim(0) => Ok(Shape::from([a.dim(0)])),
                    (1, 1) if a.dim(0) == b.dim(0) => Ok(Shape::scalar()),
                    _ => Err(Error::shape(ctx, a, b)),
                }
            }
            Op::ReduceSum(r) | Op::ReduceMean(r) | Op::ReduceMax(r) => reduced_shape(inputs[0], r),
            Op::Gather => {
                let (params, idx) = (inputs[0], inputs[1]);
                if params.rank() == 0 {
                    return Err(Error::shape(ctx, params, idx));
                }
                Ok(idx.concat(&params.drop_leading(1)))
            }
            Op::Reshape(target) => reshape_target(inputs[0], target),
            Op::BroadcastTo(s) => match Shape::broadcast(inputs[0], s) {
                Some(b) if &b == s => Ok(s.clone()),
                _ => Err(Error::shape(ctx, inputs[0], s)),
            },
            Op::Concat(axis) => {
                let first = inputs[0];
                if *axis >= first.rank() {
                    return Err(Error::shape(ctx, first, &Shape::from([*axis])));
                }
                let mut dims = first.dims().to_vec();
                for s in &inputs[1..] {
                    if s.rank() != first.rank()
                        || (0..first.rank()).any(|i| i != *axis && s.dim(i) != first.dim(i))
                    {
                        return Err(Error::shape(ctx, first, s));
                    }
                    dims[*axis] = if dims[*axis] == Shape::DEFERRED || s.dim(*axis) == Shape::DEFERRED {
                        Shape::DEFERRED
                    } else {
                        dims[*axis] + s.dim(*axis)
                    };
                }
                Ok(Shape::new(dims))
            }
            Op::Stack => {
                let first = inputs[0];
                if let Some(bad) = inputs.iter().find(|s| **s != first) {
                    return Err(Error::shape(ctx, first, bad));
                }
                Ok(first.with_leading(inputs.len()))
            }
            Op::SliceRow(i) => {
                let s = inputs[0];
                if s.rank() == 0 || (s.dim(0) != Shape::DEFERRED && *i >= s.dim(0)) {
                    return Err(Error::shape(ctx, s, &Shape::from([*i])));
                }
                Ok(s.drop_leading(1))
            }
            Op::OneHot(k) => Ok(inputs[0].concat(&Shape::from([*k]))),
            Op::MaskSupport { event_rank, .. } => {
                let (logp, value) = (inputs[0], inputs[1]);
                if value.rank() < *event_rank {
                    return Err(Error::shape(ctx, logp, value));
                }
                let batch = value.drop_trailing(*event_rank);
                Shape::broadcast(logp, &batch).ok_or_else(|| Error::shape(ctx, logp, &batch))
            }
        }
    }

    pub fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let shapes: Vec<&Shape> = inputs.iter().map(|t| t.shape()).collect();
        let out_shape = self.infer_shape(&shapes)?;
        let a = inputs[0];
        Ok(match self {
            Op::Add => a.zip_with(inputs[1], |x, y| x + y)?,
            Op::Sub => a.zip_with(inputs[1], |x, y| x - y)?,
            Op::Mul => a.zip_with(inputs[1], |x, y| x * y)?,
            Op::Div => a.zip_with(inputs[1], |x, y| x / y)?,
            Op::XLogY => a.zip_with(inputs[1], xlogy)?,
            Op::SigmoidCrossEntropyWithLogits => a.zip_with(inputs[1], |l, z| {
                l.max(0.0) - l * z + (-l.abs()).exp().ln_1p()
            })?,
            Op::Neg => a.map(|x| -x),
            Op::Tanh => a.map(f64::tanh),
            Op::Sigmoid => a.map(sigmoid),
            Op::Exp => a.map(f64::exp),
            Op::Log => a.map(f64::ln),
            Op::Softplus => a.map(softplus),
            Op::Square => a.map(|x| x * x),
            Op::Sqrt => a.map(f64::sqrt),
            Op::PowConst(c) => a.map(|x| x.powf(*c)),
            Op::Lgamma => a.map(statrs::function::gamma::ln_gamma),
            Op::StopGradient => a.clone(),
            Op::Check(c) => {
                check_constraint(*c, a)?;
                a.clone()
            }
            Op::MatMul => matmul(a, inputs[1], false, false)?,
            Op::Dot => {
                let b = inputs[1];
                if a.rank() == 1 {
                    Tensor::scalar(a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum())
                } else {
                    let b2 = b.reshape([b.numel(), 1])?;
                    matmul(a, &b2, false, false)?.reshape(out_shape)?
                }
            }
            Op::ReduceSum(r) => reduce(a, r, ReduceKind::Sum)?,
            Op::ReduceMean(r) => reduce(a, r, ReduceKind::Mean)?,
            Op::ReduceMax(r) => reduce(a, r, ReduceKind::Max)?,
            Op::Gather => gather(a, inputs[1])?,
            Op::Reshape(_) => a.reshape(out_shape)?,
            Op::BroadcastTo(s) => a.broadcast_to(s)?,
            Op::Concat(axis) => concat(inputs, *axis, out_shape)?,
            Op::Stack => {
                let mut data = Vec::with_capacity(out_shape.numel());
                for t in inputs {
                    data.extend_from_slice(t.data());
                }
                Tensor::new(out_shape, data)?
            }
            Op::SliceRow(i) => a.row(*i)?,
            Op::OneHot(k) => {
                let mut data = vec![0.0; a.numel() * k];
                // Non-integral or out-of-range entries give an all-zero row.
                for (j, &x) in a.data().iter().enumerate() {
                    let c = x.round();
                    if is_integral(x) && c >= 0.0 && (c as usize) < *k {
                        data[j * k + c as usize] = 1.0;
                    }
                }
                Tensor::new(out_shape, data)?
            }
            Op::MaskSupport { support, event_rank } => {
                let mask = support_mask(inputs[1], *support, *event_rank)?;
                let logp = a.broadcast_to(&out_shape)?;
                let mask = mask.broadcast_to(&out_shape)?;
                logp.zip_with(&mask, |l, m| if m > 0.0 { l } else { f64::NEG_INFINITY })?
            }
        })
    }

    /// Adjoints for the inputs flagged in `needs`.
    pub fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let mut out: Vec<Option<Tensor>> = vec![None; inputs.len()];
        let a = inputs[0];
        let unary = |f: &dyn Fn(f64, f64) -> f64| -> Result<Tensor> {
            // f(input, output) is the local derivative.
            let local = a.zip_with(output, f)?;
            grad.mul(&local)
        };
        match self {
            Op::Add | Op::Sub => {
                let sign = if matches!(self, Op::Sub) { -1.0 } else { 1.0 };
                if needs[0] {
                    out[0] = Some(grad.sum_to_shape(a.shape())?);
                }
                if needs[1] {
                    out[1] = Some(grad.scale(sign).sum_to_shape(inputs[1].shape())?);
                }
            }
            Op::Mul => {
                let b = inputs[1];
                if needs[0] {
                    out[0] = Some(grad.mul(b)?.sum_to_shape(a.shape())?);
                }
                if needs[1] {
                    out[1] = Some(grad.mul(a)?.sum_to_shape(b.shape())?);
                }
            }
            Op::Div => {
                let b = inputs[1];
                if needs[0] {
                    out[0] = Some(grad.zip_with(b, |g, y| g / y)?.sum_to_shape(a.shape())?);
                }
                if needs[1] {
                    // d(x/y)/dy = -out / y
                    let local = output.zip_with(b, |o, y| -o / y)?;
                    out[1] = Some(grad.mul(&local)?.sum_to_shape(b.shape())?);
                }
            }
            Op::XLogY => {
                let b = inputs[1];
                if needs[0] {
                    let local = a.zip_with(b, |_, y| y.ln())?;
                    out[0] = Some(grad.mul(&local)?.sum_to_shape(a.shape())?);
                }
                if needs[1] {
                    let local = a.zip_with(b, |x, y| if x == 0.0 { 0.0 } else { x / y })?;
                    out[1] = Some(grad.mul(&local)?.sum_to_shape(b.shape())?);
                }
            }
            Op::SigmoidCrossEntropyWithLogits => {
                let z = inputs[1];
                if needs[0] {
                    let local = a.zip_with(z, |l, z| sigmoid(l) - z)?;
                    out[0] = Some(grad.mul(&local)?.sum_to_shape(a.shape())?);
                }
                if needs[1] {
                    let local = a.zip_with(z, |l, _| -l)?;
                    out[1] = Some(grad.mul(&local)?.sum_to_shape(z.shape())?);
                }
            }
            Op::Neg => out[0] = Some(grad.scale(-1.0)),
            Op::Tanh => out[0] = Some(unary(&|_, y| 1.0 - y * y)?),
            Op::Sigmoid => out[0] = Some(unary(&|_, y| y * (1.0 - y))?),
            Op::Exp => out[0] = Some(unary(&|_, y| y)?),
            Op::Log => out[0] = Some(unary(&|x, _| 1.0 / x)?),
            Op::Softplus => out[0] = Some(unary(&|x, _| sigmoid(x))?),
            Op::Square => out[0] = Some(unary(&|x, _| 2.0 * x)?),
            Op::Sqrt => out[0] = Some(unary(&|_, y| 0.5 / y)?),
            Op::PowConst(c) => {
                let c = *c;
                out[0] = Some(unary(&|x, _| c * x.powf(c - 1.0))?)
            }
            Op::Lgamma => out[0] = Some(unary(&|x, _| statrs::function::gamma::digamma(x))?),
            Op::StopGradient => {}
            Op::Check(_) => out[0] = Some(grad.clone()),
            Op::MatMul => {
                let b = inputs[1];
                if needs[0] {
                    out[0] = Some(matmul(grad, b, false, true)?);
                }
                if needs[1] {
                    out[1] = Some(matmul(a, grad, true, false)?);
                }
            }
            Op::Dot => {
                let b = inputs[1];
                if a.rank() == 1 {
                    let g = grad.item()?;
                    if needs[0] {
                        out[0] = Some(b.scale(g));
                    }
                    if needs[1] {
                        out[1] = Some(a.scale(g));
                    }
                } else {
                    let g2 = grad.reshape([grad.numel(), 1])?;
                    if needs[0] {
                        let b2 = b.reshape([1, b.numel()])?;
                        out[0] = Some(matmul(&g2, &b2, false, false)?);
                    }
                    if needs[1] {
                        out[1] = Some(matmul(a, &g2, true, false)?.reshape(b.shape().clone())?);
                    }
                }
            }
            Op::ReduceSum(r) | Op::ReduceMean(r) => {
                let (outer, n, inner) = reduce_layout(a.shape(), r)?;
                let scale = if matches!(self, Op::ReduceMean(_)) { 1.0 / n as f64 } else { 1.0 };
                let g = grad.data();
                let mut data = vec![0.0; a.numel()];
                for o in 0..outer {
                    for k in 0..n {
                        for i in 0..inner {
                            data[(o * n + k) * inner + i] = g[o * inner + i] * scale;
                        }
                    }
                }
                out[0] = Some(Tensor::new(a.shape().clone(), data)?);
            }
            Op::ReduceMax(r) => {
                let (outer, n, inner) = reduce_layout(a.shape(), r)?;
                let x = a.data();
                let g = grad.data();
                let mut data = vec![0.0; a.numel()];
                for o in 0..outer {
                    for i in 0..inner {
                        // Ties resolve to the first maximal index.
                        let mut best = 0;
                        for k in 1..n {
                            if x[(o * n + k) * inner + i] > x[(o * n + best) * inner + i] {
                                best = k;
                            }
                        }
                        data[(o * n + best) * inner + i] = g[o * inner + i];
                    }
                }
                out[0] = Some(Tensor::new(a.shape().clone(), data)?);
            }
            Op::Gather => {
                if needs[0] {
                    let idx = inputs[1];
                    let row = a.shape().drop_leading(1).numel();
                    let mut data = vec![0.0; a.numel()];
                    for (j, &ix) in idx.data().iter().enumerate() {
                        let r = ix.round() as usize;
                        for c in 0..row {
                            data[r * row + c] += grad.data()[j * row + c];
                        }
                    }
                    out[0] = Some(Tensor::new(a.shape().clone(), data)?);
                }
            }
            Op::Reshape(_) => out[0] = Some(grad.reshape(a.shape().clone())?),
            Op::BroadcastTo(_) => out[0] = Some(grad.sum_to_shape(a.shape())?),
            Op::Concat(axis) => {
                let dims = output.dims();
                let outer: usize = dims[..*axis].iter().product();
                let inner: usize = dims[axis + 1..].iter().product();
                let total = dims[*axis];
                let mut start = 0;
                for (j, t) in inputs.iter().enumerate() {
                    let len = t.dims()[*axis];
                    if needs[j] {
                        let mut data = Vec::with_capacity(t.numel());
                        for o in 0..outer {
                            let base = (o * total + start) * inner;
                            data.extend_from_slice(&grad.data()[base..base + len * inner]);
                        }
                        out[j] = Some(Tensor::new(t.shape().clone(), data)?);
                    }
                    start += len;
                }
            }
            Op::Stack => {
                let n = a.numel();
                for (j, t) in inputs.iter().enumerate() {
                    if needs[j] {
                        out[j] = Some(Tensor::new(
                            t.shape().clone(),
                            grad.data()[j * n..(j + 1) * n].to_vec(),
                        )?);
                    }
                }
            }
            Op::SliceRow(i) => {
                let n = grad.numel();
                let mut data = vec![0.0; a.numel()];
                data[i * n..(i + 1) * n].copy_from_slice(grad.data());
                out[0] = Some(Tensor::new(a.shape().clone(), data)?);
            }
            Op::OneHot(_) => {}
            Op::MaskSupport { support, event_rank } => {
                if needs[0] {
                    let mask = support_mask(inputs[1], *support, *event_rank)?.broadcast_to(output.shape())?;
                    let g = grad.zip_with(&mask, |g, m| if m > 0.0 { g } else { 0.0 })?;
                    out[0] = Some(g.sum_to_shape(a.shape())?);
                }
                if needs[1] {
                    out[1] = Some(Tensor::zeros(inputs[1].shape().clone()));
                }
            }
        }
        Ok(out)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 && !y.is_nan() {
        0.0
    } else {
        x * y.ln()
    }
}

fn check_constraint(c: Constraint, t: &Tensor) -> Result<()> {
    let ok = |x: f64| match c {
        Constraint::Positive => x > 0.0,
        Constraint::NonNegative => x >= 0.0,
        Constraint::UnitInterval => (0.0..=1.0).contains(&x),
    };
    match t.data().iter().find(|&&x| !ok(x)) {
        Some(bad) => Err(Error::InvalidParam(format!("{c:?} constraint violated by {bad}"))),
        None => Ok(()),
    }
}

/// 1.0 where the event block of `value` is in the support, 0.0 elsewhere;
/// shape is `value` without its `event_rank` trailing dims.
fn support_mask(value: &Tensor, support: Support, event_rank: usize) -> Result<Tensor> {
    let batch = value.shape().drop_trailing(event_rank);
    let block = value.shape().drop_leading(value.rank() - event_rank).numel();
    let mut data = Vec::with_capacity(batch.numel());
    for chunk in value.data().chunks(block.max(1)) {
        let mut ok = chunk.iter().all(|&x| support.contains(x));
        if ok && support == Support::Simplex {
            ok = (chunk.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        }
        data.push(if ok { 1.0 } else { 0.0 });
    }
    Tensor::new(batch, data)
}

fn reduced_shape(s: &Shape, r: &Reduce) -> Result<Shape> {
    match r.axis {
        None => Ok(if r.keep_dims {
            Shape::new(vec![1; s.rank()])
        } else {
            Shape::scalar()
        }),
        Some(ax) => {
            let a = s
                .axis(ax)
                .ok_or_else(|| Error::shape("reduce axis", s, &Shape::from([ax.unsigned_abs()])))?;
            let mut dims = s.dims().to_vec();
            if r.keep_dims {
                dims[a] = 1;
            } else {
                dims.remove(a);
            }
            Ok(Shape::new(dims))
        }
    }
}

fn reduce_layout(s: &Shape, r: &Reduce) -> Result<(usize, usize, usize)> {
    match r.axis {
        None => Ok((1, s.numel(), 1)),
        Some(ax) => {
            let a = s
                .axis(ax)
                .ok_or_else(|| Error::shape("reduce axis", s, &Shape::from([ax.unsigned_abs()])))?;
            let d = s.dims();
            Ok((d[..a].iter().product(), d[a], d[a + 1..].iter().product()))
        }
    }
}

enum ReduceKind {
    Sum,
    Mean,
    Max,
}

fn reduce(a: &Tensor, r: &Reduce, kind: ReduceKind) -> Result<Tensor> {
    let out_shape = reduced_shape(a.shape(), r)?;
    let (outer, n, inner) = reduce_layout(a.shape(), r)?;
    let x = a.data();
    let mut data = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let vals = (0..n).map(|k| x[(o * n + k) * inner + i]);
            data.push(match kind {
                ReduceKind::Sum => vals.sum(),
                ReduceKind::Mean => vals.sum::<f64>() / n as f64,
                ReduceKind::Max => vals.fold(f64::NEG_INFINITY, f64::max),
            });
        }
    }
    Tensor::new(out_shape, data)
}

fn reshape_target(s: &Shape, target: &[isize]) -> Result<Shape> {
    let err = || Error::shape("reshape", s, &Shape::new(target.iter().map(|&d| d.max(0) as usize).collect::<Vec<_>>()));
    let wild = target.iter().filter(|&&d| d == -1).count();
    if wild > 1 || target.iter().any(|&d| d < -1) {
        return Err(err());
    }
    let known: usize = target.iter().filter(|&&d| d >= 0).map(|&d| d as usize).product();
    let dims: Vec<usize> = if s.has_deferred() {
        if wild != 1 {
            return Err(err());
        }
        target
            .iter()
            .map(|&d| if d == -1 { Shape::DEFERRED } else { d as usize })
            .collect()
    } else {
        let n = s.numel();
        target
            .iter()
            .map(|&d| {
                if d == -1 {
                    if known == 0 || !n.is_multiple_of(known) {
                        Err(err())
                    } else {
                        Ok(n / known)
                    }
                } else {
                    Ok(d as usize)
                }
            })
            .collect::<Result<_>>()?
    };
    let out = Shape::new(dims);
    if !s.has_deferred() && out.numel() != s.numel() {
        return Err(err());
    }
    Ok(out)
}

/// `op(a) x op(b)` for rank-2 tensors, with optional transposes.
pub(crate) fn matmul(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (ar, ac) = (a.dims()[0], a.dims()[1]);
    let (br, bc) = (b.dims()[0], b.dims()[1]);
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let x = a.data();
    let y = b.data();
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = if ta { x[p * ac + i] } else { x[i * ac + p] };
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                let bv = if tb { y[j * bc + p] } else { y[p * bc + j] };
                data[i * n + j] += av * bv;
            }
        }
    }
    Tensor::new([m, n], data)
}

fn gather(params: &Tensor, idx: &Tensor) -> Result<Tensor> {
    let rows = params.dims()[0];
    let row = params.shape().drop_leading(1).numel();
    let out_shape = idx.shape().concat(&params.shape().drop_leading(1));
    let mut data = Vec::with_capacity(out_shape.numel());
    for &ix in idx.data() {
        if !is_integral(ix) || ix < 0.0 || ix.round() as usize >= rows {
            return Err(Error::InvalidParam(format!("gather index {ix} out of range 0..{rows}")));
        }
        let r = ix.round() as usize;
        data.extend_from_slice(&params.data()[r * row..(r + 1) * row]);
    }
    Tensor::new(out_shape, data)
}

fn concat(inputs: &[&Tensor], axis: usize, out_shape: Shape) -> Result<Tensor> {
    let dims = out_shape.dims();
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(out_shape.numel());
    for o in 0..outer {
        for t in inputs {
            let len = t.dims()[axis] * inner;
            data.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
        }
    }
    Tensor::new(out_shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        let y = Op::Softplus.forward(&[&Tensor::scalar(0.0)]).unwrap();
        assert!((y.item().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn matmul_shape_rule() {
        let s = Op::MatMul
            .infer_shape(&[&Shape::from([1, 2]), &Shape::from([2, 1])])
            .unwrap();
        assert_eq!(s, Shape::from([1, 1]));
        assert!(Op::MatMul
            .infer_shape(&[&Shape::from([1, 2]), &Shape::from([3, 1])])
            .is_err());
    }

    #[test]
    fn reduce_axes() {
        let x = t(&[2, 3], &[1.0, 5.0, 3.0, 4.0, 2.0, 6.0]);
        let s = Op::ReduceSum(Reduce::axis(0)).forward(&[&x]).unwrap();
        assert_eq!(s.data(), &[5.0, 7.0, 9.0]);
        let m = Op::ReduceMax(Reduce::axis(-1).keep()).forward(&[&x]).unwrap();
        assert_eq!(m.dims(), &[2, 1]);
        assert_eq!(m.data(), &[5.0, 6.0]);
        let mean = Op::ReduceMean(Reduce::ALL).forward(&[&x]).unwrap();
        assert_eq!(mean.item().unwrap(), 3.5);
    }

    #[test]
    fn reduce_max_ties_go_to_first_index() {
        let x = t(&[3], &[2.0, 2.0, 1.0]);
        let y = Op::ReduceMax(Reduce::ALL).forward(&[&x]).unwrap();
        let g = Op::ReduceMax(Reduce::ALL)
            .backward(&[&x], &y, &Tensor::scalar(1.0), &[true])
            .unwrap();
        assert_eq!(g[0].as_ref().unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn gather_rows_and_scatter_back() {
        let p = t(&[3, 2], &[0.0, 1.0, 10.0, 11.0, 20.0, 21.0]);
        let idx = t(&[4], &[2.0, 0.0, 2.0, 1.0]);
        let y = Op::Gather.forward(&[&p, &idx]).unwrap();
        assert_eq!(y.dims(), &[4, 2]);
        assert_eq!(y.data(), &[20.0, 21.0, 0.0, 1.0, 20.0, 21.0, 10.0, 11.0]);
        let g = Op::Gather
            .backward(&[&p, &idx], &y, &Tensor::ones([4, 2]), &[true, false])
            .unwrap();
        assert_eq!(g[0].as_ref().unwrap().data(), &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0]);
        assert!(Op::Gather.forward(&[&p, &t(&[1], &[3.0])]).is_err());
    }

    #[test]
    fn reshape_with_wildcard() {
        let s = Op::Reshape(vec![-1]).infer_shape(&[&Shape::from([4, 1])]).unwrap();
        assert_eq!(s, Shape::from([4]));
        let d = Op::Reshape(vec![-1])
            .infer_shape(&[&Shape::from([Shape::DEFERRED, 1])])
            .unwrap();
        assert!(d.has_deferred());
        assert!(Op::Reshape(vec![3]).infer_shape(&[&Shape::from([4])]).is_err());
    }

    #[test]
    fn concat_and_stack() {
        let a = t(&[2, 1], &[1.0, 2.0]);
        let b = t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]);
        let c = Op::Concat(1).forward(&[&a, &b]).unwrap();
        assert_eq!(c.data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let s = Op::Stack.forward(&[&a, &a]).unwrap();
        assert_eq!(s.dims(), &[2, 2, 1]);
    }

    #[test]
    fn xlogy_zero_convention() {
        let y = Op::XLogY
            .forward(&[&t(&[2], &[0.0, 2.0]), &t(&[2], &[0.0, 1.0])])
            .unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
    }

    #[test]
    fn mask_support_blocks_outside_values() {
        let logp = t(&[3], &[-1.0, -2.0, -3.0]);
        let v = t(&[3], &[0.5, 1.5, -0.1]);
        let op = Op::MaskSupport {
            support: Support::UnitInterval,
            event_rank: 0,
        };
        let y = op.forward(&[&logp, &v]).unwrap();
        assert_eq!(y.data()[0], -1.0);
        assert_eq!(y.data()[1], f64::NEG_INFINITY);
        assert_eq!(y.data()[2], f64::NEG_INFINITY);
    }

    #[test]
    fn one_hot_zero_row_outside_range() {
        let z = Op::OneHot(3).forward(&[&t(&[2], &[0.5, 3.0])]).unwrap();
        assert!(z.data().iter().all(|&x| x == 0.0));
        let y = Op::OneHot(3).forward(&[&t(&[2], &[2.0, 0.0])]).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn unknown_op_name() {
        assert_eq!(
            Op::from_name("conv2d", &Attributes::default()),
            Err(Error::UnknownOp("conv2d".into()))
        );
        assert_eq!(Op::from_name("tanh", &Attributes::default()), Ok(Op::Tanh));
    }
}
