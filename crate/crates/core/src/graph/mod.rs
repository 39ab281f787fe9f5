//! Append-only expression graph with forward evaluation and reverse-mode
//! differentiation.

mod ops;
mod rng;
mod shape;
mod tensor;

pub use ops::{Attributes, Constraint, Op, Reduce, Support};
pub(crate) use ops::sigmoid;
pub use rng::RngState;
pub use shape::Shape;
pub use tensor::Tensor;

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Dense index of a node in its [`Graph`].
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Stochastic kernel behind a sample node. Inputs are the evaluated
/// parameter nodes, in order.
pub trait SampleOp: Send + Sync {
    fn name(&self) -> &str;
    fn sample(&self, inputs: &[&Tensor], rng: &mut RngState) -> Result<Tensor>;
}

impl fmt::Debug for dyn SampleOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SampleOp({})", self.name())
    }
}

#[derive(Clone, Debug)]
pub enum NodeKind {
    Constant(Tensor),
    /// Current value lives in the graph's parameter store.
    Parameter,
    Placeholder,
    Op(Op),
    Sample(Arc<dyn SampleOp>),
}

#[derive(Clone, Debug)]
pub struct Node {
    pub kind: NodeKind,
    pub inputs: Vec<NodeId>,
    pub shape: Shape,
}

/// Values bound for one evaluation: placeholders, plus optional overrides of
/// any other node (typically sample nodes).
#[derive(Clone, Debug, Default)]
pub struct Feed {
    bindings: BTreeMap<NodeId, Tensor>,
}

impl Feed {
    pub fn new() -> Self {
        Feed::default()
    }

    pub fn with(mut self, id: impl Into<NodeId>, value: impl Into<Tensor>) -> Self {
        self.insert(id, value);
        self
    }

    pub fn insert(&mut self, id: impl Into<NodeId>, value: impl Into<Tensor>) {
        self.bindings.insert(id.into(), value.into());
    }

    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.bindings.get(&id)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.bindings.contains_key(&id)
    }

    pub fn remove(&mut self, id: NodeId) -> Option<Tensor> {
        self.bindings.remove(&id)
    }

    /// Copy every binding of `other` into this feed, overwriting duplicates.
    pub fn extend(&mut self, other: &Feed) {
        for (k, v) in &other.bindings {
            self.bindings.insert(*k, v.clone());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Tensor)> {
        self.bindings.iter().map(|(k, v)| (*k, v))
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }
}

/// Result of a joint forward/backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub loss: Tensor,
    /// One gradient per requested node, in request order.
    pub grads: Vec<Tensor>,
    /// Values of the extra fetches, from the same forward pass.
    pub fetched: Vec<Tensor>,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<NodeId, Tensor>,
}

macro_rules! unary_ops {
    ($($name:ident => $op:expr),* $(,)?) => {
        $(pub fn $name(&mut self, x: impl Into<NodeId>) -> Result<NodeId> {
            self.add_op($op, &[x.into()])
        })*
    };
}

macro_rules! binary_ops {
    ($($name:ident => $op:expr),* $(,)?) => {
        $(pub fn $name(&mut self, a: impl Into<NodeId>, b: impl Into<NodeId>) -> Result<NodeId> {
            self.add_op($op, &[a.into(), b.into()])
        })*
    };
}

/// Per-node forward values, borrowed where no computation was needed.
type Values<'a> = Vec<Option<Cow<'a, Tensor>>>;

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes.get(id.0).ok_or(Error::UnknownNode(id))
    }

    pub fn shape(&self, id: NodeId) -> &Shape {
        &self.nodes[id.0].shape
    }

    pub fn kind(&self, id: NodeId) -> &NodeKind {
        &self.nodes[id.0].kind
    }

    pub fn inputs(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    pub fn is_parameter(&self, id: NodeId) -> bool {
        matches!(self.nodes.get(id.0).map(|n| &n.kind), Some(NodeKind::Parameter))
    }

    fn push(&mut self, kind: NodeKind, inputs: Vec<NodeId>, shape: Shape) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { kind, inputs, shape });
        id
    }

    fn check_exists(&self, inputs: &[NodeId]) -> Result<()> {
        match inputs.iter().find(|id| id.0 >= self.nodes.len()) {
            Some(bad) => Err(Error::UnknownNode(*bad)),
            None => Ok(()),
        }
    }

    pub fn constant(&mut self, value: impl Into<Tensor>) -> NodeId {
        let value = value.into();
        let shape = value.shape().clone();
        self.push(NodeKind::Constant(value), Vec::new(), shape)
    }

    pub fn parameter(&mut self, init: impl Into<Tensor>) -> NodeId {
        let init = init.into();
        let shape = init.shape().clone();
        let id = self.push(NodeKind::Parameter, Vec::new(), shape);
        self.params.insert(id, init);
        id
    }

    /// A placeholder whose leading dimension may be [`Shape::DEFERRED`].
    pub fn placeholder(&mut self, shape: impl Into<Shape>) -> Result<NodeId> {
        let shape = shape.into();
        if shape.dims().iter().skip(1).any(|&d| d == Shape::DEFERRED) {
            return Err(Error::InvalidParam(format!(
                "only the leading dimension of a placeholder may be deferred, got {shape}"
            )));
        }
        Ok(self.push(NodeKind::Placeholder, Vec::new(), shape))
    }

    pub fn add_op(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        self.check_exists(inputs)?;
        let shapes: Vec<&Shape> = inputs.iter().map(|id| &self.nodes[id.0].shape).collect();
        let shape = op.infer_shape(&shapes)?;
        Ok(self.push(NodeKind::Op(op), inputs.to_vec(), shape))
    }

    pub fn add_op_by_name(&mut self, name: &str, inputs: &[NodeId], attrs: &Attributes) -> Result<NodeId> {
        let op = Op::from_name(name, attrs)?;
        self.add_op(op, inputs)
    }

    /// A stochastic node producing tensors of `shape` from `inputs`.
    pub fn sample(&mut self, op: Arc<dyn SampleOp>, inputs: &[NodeId], shape: Shape) -> Result<NodeId> {
        self.check_exists(inputs)?;
        Ok(self.push(NodeKind::Sample(op), inputs.to_vec(), shape))
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    unary_ops! {
        neg => Op::Neg,
        tanh => Op::Tanh,
        sigmoid => Op::Sigmoid,
        exp => Op::Exp,
        log => Op::Log,
        softplus => Op::Softplus,
        square => Op::Square,
        sqrt => Op::Sqrt,
        lgamma => Op::Lgamma,
        stop_gradient => Op::StopGradient,
        sum => Op::ReduceSum(Reduce::ALL),
        mean => Op::ReduceMean(Reduce::ALL),
    }

    binary_ops! {
        add => Op::Add,
        sub => Op::Sub,
        mul => Op::Mul,
        div => Op::Div,
        matmul => Op::MatMul,
        dot => Op::Dot,
        gather => Op::Gather,
        xlogy => Op::XLogY,
        sigmoid_cross_entropy_with_logits => Op::SigmoidCrossEntropyWithLogits,
    }

    pub fn pow(&mut self, x: impl Into<NodeId>, c: f64) -> Result<NodeId> {
        self.add_op(Op::PowConst(c), &[x.into()])
    }

    pub fn reduce_sum(&mut self, x: impl Into<NodeId>, r: Reduce) -> Result<NodeId> {
        self.add_op(Op::ReduceSum(r), &[x.into()])
    }

    pub fn reduce_mean(&mut self, x: impl Into<NodeId>, r: Reduce) -> Result<NodeId> {
        self.add_op(Op::ReduceMean(r), &[x.into()])
    }

    pub fn reduce_max(&mut self, x: impl Into<NodeId>, r: Reduce) -> Result<NodeId> {
        self.add_op(Op::ReduceMax(r), &[x.into()])
    }

    pub fn reshape(&mut self, x: impl Into<NodeId>, dims: &[isize]) -> Result<NodeId> {
        self.add_op(Op::Reshape(dims.to_vec()), &[x.into()])
    }

    pub fn broadcast_to(&mut self, x: impl Into<NodeId>, shape: impl Into<Shape>) -> Result<NodeId> {
        self.add_op(Op::BroadcastTo(shape.into()), &[x.into()])
    }

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        self.add_op(Op::Concat(axis), xs)
    }

    pub fn stack(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        self.add_op(Op::Stack, xs)
    }

    pub fn slice_row(&mut self, x: impl Into<NodeId>, i: usize) -> Result<NodeId> {
        self.add_op(Op::SliceRow(i), &[x.into()])
    }

    pub fn one_hot(&mut self, x: impl Into<NodeId>, depth: usize) -> Result<NodeId> {
        self.add_op(Op::OneHot(depth), &[x.into()])
    }

    pub fn check(&mut self, x: impl Into<NodeId>, c: Constraint) -> Result<NodeId> {
        self.add_op(Op::Check(c), &[x.into()])
    }

    pub fn mask_support(
        &mut self,
        logp: NodeId,
        value: NodeId,
        support: Support,
        event_rank: usize,
    ) -> Result<NodeId> {
        self.add_op(Op::MaskSupport { support, event_rank }, &[logp, value])
    }

    /// Numerically stable `log(sum(exp(x)))` along `axis`.
    pub fn logsumexp(&mut self, x: impl Into<NodeId>, axis: isize) -> Result<NodeId> {
        let x = x.into();
        let m = self.reduce_max(x, Reduce::axis(axis).keep())?;
        let m = self.stop_gradient(m)?;
        let shifted = self.sub(x, m)?;
        let e = self.exp(shifted)?;
        let s = self.reduce_sum(e, Reduce::axis(axis).keep())?;
        let l = self.log(s)?;
        let out = self.add(l, m)?;
        let mut dims: Vec<isize> = self.shape(out).dims().iter().map(|&d| d as isize).collect();
        let ax = self.shape(out).axis(axis).expect("axis validated by reduce");
        dims.remove(ax);
        if self.shape(out).has_deferred() {
            dims[0] = -1;
        }
        self.reshape(out, &dims)
    }

    /// Current value of a parameter.
    pub fn value(&self, param: NodeId) -> Result<&Tensor> {
        self.params.get(&param).ok_or(Error::NotAParameter(param))
    }

    pub fn parameters(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.params.keys().copied()
    }

    pub fn assign(&mut self, param: NodeId, value: Tensor) -> Result<()> {
        let slot = self.params.get_mut(&param).ok_or(Error::NotAParameter(param))?;
        if slot.shape() != value.shape() {
            return Err(Error::shape("assign", slot.shape(), value.shape()));
        }
        *slot = value;
        Ok(())
    }

    /// Overwrite row `row` (along the leading axis) of a parameter in place.
    pub fn assign_row(&mut self, param: NodeId, row: usize, value: &Tensor) -> Result<()> {
        let slot = self.params.get_mut(&param).ok_or(Error::NotAParameter(param))?;
        let rest = slot.shape().drop_leading(1);
        if slot.rank() == 0 || row >= slot.dims()[0] || &rest != value.shape() {
            return Err(Error::shape("assign_row", slot.shape(), value.shape()));
        }
        let n = rest.numel();
        slot.data_mut()[row * n..(row + 1) * n].copy_from_slice(value.data());
        Ok(())
    }

    /// Mask over node ids: true for `roots` and everything they depend on.
    pub fn ancestors(&self, roots: &[NodeId]) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack: Vec<NodeId> = roots.to_vec();
        while let Some(id) = stack.pop() {
            if seen[id.0] {
                continue;
            }
            seen[id.0] = true;
            stack.extend(self.nodes[id.0].inputs.iter().copied());
        }
        seen
    }

    fn reachable(&self, roots: &[NodeId], feed: &Feed) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack: Vec<NodeId> = roots.to_vec();
        while let Some(id) = stack.pop() {
            if seen[id.0] {
                continue;
            }
            seen[id.0] = true;
            if !feed.contains(id) {
                stack.extend(self.nodes[id.0].inputs.iter().copied());
            }
        }
        seen
    }

    fn forward<'a>(
        &'a self,
        roots: &[NodeId],
        feed: &'a Feed,
        rng: &mut RngState,
    ) -> Result<(Vec<bool>, Values<'a>)> {
        self.check_exists(roots)?;
        let live = self.reachable(roots, feed);
        let mut values: Values<'a> = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if !live[i] {
                continue;
            }
            let id = NodeId(i);
            if let Some(t) = feed.get(id) {
                if !node.shape.accepts(t.shape()) {
                    return Err(Error::shape(format!("feed for node {id}"), &node.shape, t.shape()));
                }
                values[i] = Some(Cow::Borrowed(t));
                continue;
            }
            let v = match &node.kind {
                NodeKind::Constant(t) => Cow::Borrowed(t),
                NodeKind::Parameter => Cow::Borrowed(&self.params[&id]),
                NodeKind::Placeholder => return Err(Error::UnboundPlaceholder(id)),
                NodeKind::Op(op) => {
                    let ins: Vec<&Tensor> = node.inputs.iter().map(|j| values[j.0].as_deref().unwrap()).collect();
                    Cow::Owned(op.forward(&ins)?)
                }
                NodeKind::Sample(s) => {
                    let ins: Vec<&Tensor> = node.inputs.iter().map(|j| values[j.0].as_deref().unwrap()).collect();
                    let t = s.sample(&ins, rng)?;
                    if !node.shape.accepts(t.shape()) {
                        return Err(Error::shape(format!("sampler `{}`", s.name()), &node.shape, t.shape()));
                    }
                    Cow::Owned(t)
                }
            };
            values[i] = Some(v);
        }
        Ok((live, values))
    }

    pub fn eval(&self, fetch: NodeId, feed: &Feed, rng: &mut RngState) -> Result<Tensor> {
        Ok(self.eval_many(&[fetch], feed, rng)?.pop().unwrap())
    }

    /// Evaluate several nodes in one pass; shared nodes (and sample nodes in
    /// particular) are computed once.
    pub fn eval_many(&self, fetches: &[NodeId], feed: &Feed, rng: &mut RngState) -> Result<Vec<Tensor>> {
        let (_, values) = self.forward(fetches, feed, rng)?;
        Ok(fetches
            .iter()
            .map(|f| values[f.0].as_deref().unwrap().clone())
            .collect())
    }

    /// `d loss / d w` for each `w` in `wrt`.
    pub fn gradients(
        &self,
        loss: NodeId,
        wrt: &[NodeId],
        feed: &Feed,
        rng: &mut RngState,
    ) -> Result<BTreeMap<NodeId, Tensor>> {
        let g = self.value_and_gradients(loss, wrt, &[], feed, rng)?;
        Ok(wrt.iter().copied().zip(g.grads).collect())
    }

    /// Loss value, gradients and extra fetches from one forward pass. Sample
    /// values are held fixed during the backward pass.
    pub fn value_and_gradients(
        &self,
        loss: NodeId,
        wrt: &[NodeId],
        extra: &[NodeId],
        feed: &Feed,
        rng: &mut RngState,
    ) -> Result<Gradients> {
        self.check_exists(&[loss])?;
        self.check_exists(wrt)?;
        if self.nodes[loss.0].shape.numel() != 1 {
            return Err(Error::NonScalarLoss(self.nodes[loss.0].shape.clone()));
        }
        for w in wrt {
            if !matches!(self.nodes[w.0].kind, NodeKind::Parameter | NodeKind::Placeholder) {
                return Err(Error::InvalidGradientTarget(*w));
            }
        }
        let mut roots = vec![loss];
        roots.extend_from_slice(extra);
        let (live, values) = self.forward(&roots, feed, rng)?;

        let n = self.nodes.len();
        let mut active = vec![false; n];
        for w in wrt {
            active[w.0] = live[w.0];
        }
        for i in 0..n {
            if !live[i] || active[i] || feed.contains(NodeId(i)) {
                continue;
            }
            if let NodeKind::Op(op) = &self.nodes[i].kind {
                if !matches!(op, Op::StopGradient) {
                    active[i] = self.nodes[i].inputs.iter().any(|j| active[j.0]);
                }
            }
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        if active[loss.0] {
            grads[loss.0] = Some(Tensor::ones(values[loss.0].as_deref().unwrap().shape().clone()));
        }
        for i in (0..n).rev() {
            if !active[i] {
                continue;
            }
            let NodeKind::Op(op) = &self.nodes[i].kind else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            let mut needs = Vec::with_capacity(node.inputs.len());
            for (slot, j) in node.inputs.iter().enumerate() {
                let a = active[j.0];
                if a && !op.differentiable_input(slot) {
                    return Err(Error::NonDifferentiableOp(format!(
                        "input {slot} of `{}` at node {}",
                        op.name(),
                        NodeId(i)
                    )));
                }
                needs.push(a && !op.zero_gradient_input(slot));
            }
            if !needs.iter().any(|&b| b) {
                continue;
            }
            let ins: Vec<&Tensor> = node.inputs.iter().map(|j| values[j.0].as_deref().unwrap()).collect();
            let out = values[i].as_deref().unwrap();
            let local = op.backward(&ins, out, &g, &needs)?;
            for (slot, (j, lg)) in node.inputs.iter().zip(local).enumerate() {
                if !needs[slot] {
                    continue;
                }
                if let Some(lg) = lg {
                    grads[j.0] = Some(match grads[j.0].take() {
                        Some(acc) => acc.add(&lg)?,
                        None => lg,
                    });
                }
            }
        }

        let loss_value = values[loss.0].as_deref().unwrap().clone();
        let grads_out = wrt
            .iter()
            .map(|w| {
                grads[w.0].clone().unwrap_or_else(|| {
                    let shape = values[w.0]
                        .as_deref()
                        .map(|t| t.shape().clone())
                        .unwrap_or_else(|| self.nodes[w.0].shape.clone());
                    Tensor::zeros(if shape.has_deferred() { Shape::scalar() } else { shape })
                })
            })
            .collect();
        let fetched = extra
            .iter()
            .map(|f| values[f.0].as_deref().unwrap().clone())
            .collect();
        Ok(Gradients {
            loss: loss_value,
            grads: grads_out,
            fetched,
        })
    }

    /// Compare reverse-mode gradients of `loss` against central differences
    /// with step `h`. Every evaluation reuses a clone of `rng`, so sample
    /// nodes see the same draws throughout. Parameter values are restored.
    pub fn gradcheck(&mut self, loss: NodeId, wrt: &[NodeId], feed: &Feed, h: f64, rng: &RngState) -> Result<GradCheck> {
        let analytic = self.value_and_gradients(loss, wrt, &[], feed, &mut rng.clone())?.grads;
        let mut feed = feed.clone();
        let mut report = GradCheck {
            max_rel_error: 0.0,
            worst: None,
            checked: 0,
        };
        for (w, grad) in wrt.iter().zip(&analytic) {
            let fed = feed.contains(*w);
            let base = if fed { feed.get(*w).unwrap().clone() } else { self.value(*w)?.clone() };
            for k in 0..base.numel() {
                let at = |g: &mut Graph, feed: &mut Feed, delta: f64| -> Result<f64> {
                    let mut v = base.clone();
                    v.data_mut()[k] += delta;
                    if fed {
                        feed.insert(*w, v);
                    } else {
                        g.assign(*w, v)?;
                    }
                    g.eval(loss, feed, &mut rng.clone())?.item()
                };
                let up = at(self, &mut feed, h)?;
                let down = at(self, &mut feed, -h)?;
                let numeric = (up - down) / (2.0 * h);
                let a = grad.data()[k];
                let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
                report.checked += 1;
                if !(err <= report.max_rel_error) {
                    report.max_rel_error = err;
                    report.worst = Some((*w, k, a, numeric));
                }
            }
            if fed {
                feed.insert(*w, base);
            } else {
                self.assign(*w, base)?;
            }
        }
        Ok(report)
    }
}

/// Outcome of [`Graph::gradcheck`]. Relative error is
/// `|a - n| / max(1, |a|, |n|)` for analytic `a` and numeric `n`.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(node, flat index, analytic, numeric)` at the largest error.
    pub worst: Option<(NodeId, usize, f64, f64)>,
    pub checked: usize,
}
