//! Random per-op gradient cases shared by the gradient tests and the
//! acceptance runner.

use probgraph::graph::{Constraint, GradCheck, Reduce, Support};
use probgraph::{Graph, NodeId, Result, RngState, Shape, Tensor};

pub const STEP: f64 = 1e-5;

pub struct Gen {
    pub rng: RngState,
}

impl Gen {
    pub fn new(seed: u64) -> Self {
        Gen { rng: RngState::seed(seed) }
    }

    pub fn int(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.rng.below(hi - lo + 1)
    }

    pub fn shape(&mut self, min_rank: usize, max_rank: usize) -> Vec<usize> {
        let rank = self.int(min_rank, max_rank);
        (0..rank).map(|_| self.int(1, 4)).collect()
    }

    pub fn tensor(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| lo + (hi - lo) * self.rng.uniform()).collect();
        Tensor::new(Shape::new(shape.to_vec()), data).unwrap()
    }

    /// A random shape that broadcasts against `shape`: a suffix with some
    /// dims replaced by 1.
    pub fn broadcastable(&mut self, shape: &[usize]) -> Vec<usize> {
        let keep = self.int(0, shape.len());
        shape[shape.len() - keep..]
            .iter()
            .map(|&d| if self.rng.uniform() < 0.3 { 1 } else { d })
            .collect()
    }
}

/// `(output, inputs to differentiate)` for one random instance.
pub type Built = (NodeId, Vec<NodeId>);

pub struct Case {
    pub name: &'static str,
    pub build: fn(&mut Graph, &mut Gen) -> Result<Built>,
}

fn param(g: &mut Graph, gen: &mut Gen, shape: &[usize], lo: f64, hi: f64) -> NodeId {
    let t = gen.tensor(shape, lo, hi);
    g.parameter(t)
}

fn unary(g: &mut Graph, gen: &mut Gen, lo: f64, hi: f64, f: fn(&mut Graph, NodeId) -> Result<NodeId>) -> Result<Built> {
    let shape = gen.shape(0, 3);
    let x = param(g, gen, &shape, lo, hi);
    Ok((f(g, x)?, vec![x]))
}

fn binary(
    g: &mut Graph,
    gen: &mut Gen,
    a: (f64, f64),
    b: (f64, f64),
    f: fn(&mut Graph, NodeId, NodeId) -> Result<NodeId>,
) -> Result<Built> {
    let shape = gen.shape(0, 3);
    let other = gen.broadcastable(&shape);
    let (sa, sb) = if gen.rng.uniform() < 0.5 { (shape, other) } else { (other, shape) };
    let x = param(g, gen, &sa, a.0, a.1);
    let y = param(g, gen, &sb, b.0, b.1);
    Ok((f(g, x, y)?, vec![x, y]))
}

fn reduce(g: &mut Graph, gen: &mut Gen, f: fn(&mut Graph, NodeId, Reduce) -> Result<NodeId>) -> Result<Built> {
    let shape = gen.shape(1, 3);
    let x = param(g, gen, &shape, -2.0, 2.0);
    let mut r = if gen.rng.uniform() < 0.25 {
        Reduce::ALL
    } else {
        let axis = gen.int(0, shape.len() - 1) as isize;
        Reduce::axis(if gen.rng.uniform() < 0.5 { axis } else { axis - shape.len() as isize })
    };
    if gen.rng.uniform() < 0.5 {
        r = r.keep();
    }
    Ok((f(g, x, r)?, vec![x]))
}

fn positive_signed(gen: &mut Gen, shape: &[usize]) -> Tensor {
    let mut t = gen.tensor(shape, 0.5, 2.0);
    for v in t.data_mut() {
        if gen.rng.uniform() < 0.5 {
            *v = -*v;
        }
    }
    t
}

pub fn cases() -> Vec<Case> {
    vec![
        Case { name: "add", build: |g, r| binary(g, r, (-2.0, 2.0), (-2.0, 2.0), |g, a, b| g.add(a, b)) },
        Case { name: "sub", build: |g, r| binary(g, r, (-2.0, 2.0), (-2.0, 2.0), |g, a, b| g.sub(a, b)) },
        Case { name: "mul", build: |g, r| binary(g, r, (-2.0, 2.0), (-2.0, 2.0), |g, a, b| g.mul(a, b)) },
        Case {
            name: "div",
            build: |g, r| {
                let shape = r.shape(0, 3);
                let other = r.broadcastable(&shape);
                let x = param(g, r, &shape, -2.0, 2.0);
                let d = positive_signed(r, &other);
                let y = g.parameter(d);
                Ok((g.div(x, y)?, vec![x, y]))
            },
        },
        Case { name: "neg", build: |g, r| unary(g, r, -2.0, 2.0, |g, x| g.neg(x)) },
        Case { name: "tanh", build: |g, r| unary(g, r, -2.0, 2.0, |g, x| g.tanh(x)) },
        Case { name: "sigmoid", build: |g, r| unary(g, r, -4.0, 4.0, |g, x| g.sigmoid(x)) },
        Case { name: "exp", build: |g, r| unary(g, r, -2.0, 2.0, |g, x| g.exp(x)) },
        Case { name: "log", build: |g, r| unary(g, r, 0.5, 3.0, |g, x| g.log(x)) },
        Case { name: "softplus", build: |g, r| unary(g, r, -4.0, 4.0, |g, x| g.softplus(x)) },
        Case { name: "square", build: |g, r| unary(g, r, -2.0, 2.0, |g, x| g.square(x)) },
        Case { name: "sqrt", build: |g, r| unary(g, r, 0.5, 3.0, |g, x| g.sqrt(x)) },
        Case { name: "lgamma", build: |g, r| unary(g, r, 0.5, 5.0, |g, x| g.lgamma(x)) },
        Case {
            name: "pow",
            build: |g, r| {
                let c = [-1.5, 0.5, 2.0, 3.0][r.int(0, 3)];
                let shape = r.shape(0, 3);
                let x = param(g, r, &shape, 0.5, 2.0);
                Ok((g.pow(x, c)?, vec![x]))
            },
        },
        Case { name: "reduce_sum", build: |g, r| reduce(g, r, |g, x, a| g.reduce_sum(x, a)) },
        Case { name: "reduce_mean", build: |g, r| reduce(g, r, |g, x, a| g.reduce_mean(x, a)) },
        Case { name: "reduce_max", build: |g, r| reduce(g, r, |g, x, a| g.reduce_max(x, a)) },
        Case {
            name: "logsumexp",
            build: |g, r| {
                let shape = r.shape(1, 3);
                let x = param(g, r, &shape, -3.0, 3.0);
                let axis = r.int(0, shape.len() - 1) as isize;
                Ok((g.logsumexp(x, axis)?, vec![x]))
            },
        },
        Case {
            name: "matmul",
            build: |g, r| {
                let (m, k, n) = (r.int(1, 4), r.int(1, 4), r.int(1, 4));
                let a = param(g, r, &[m, k], -2.0, 2.0);
                let b = param(g, r, &[k, n], -2.0, 2.0);
                Ok((g.matmul(a, b)?, vec![a, b]))
            },
        },
        Case {
            name: "dot",
            build: |g, r| {
                let d = r.int(1, 4);
                let lead = if r.rng.uniform() < 0.5 { vec![r.int(1, 4), d] } else { vec![d] };
                let a = param(g, r, &lead, -2.0, 2.0);
                let b = param(g, r, &[d], -2.0, 2.0);
                Ok((g.dot(a, b)?, vec![a, b]))
            },
        },
        Case {
            name: "gather",
            build: |g, r| {
                let mut shape = r.shape(1, 3);
                shape[0] = r.int(2, 5);
                let x = param(g, r, &shape, -2.0, 2.0);
                let idx_shape = r.shape(0, 2);
                let n: usize = idx_shape.iter().product();
                let idx: Vec<f64> = (0..n).map(|_| r.rng.below(shape[0]) as f64).collect();
                let idx = g.constant(Tensor::new(Shape::new(idx_shape), idx)?);
                Ok((g.gather(x, idx)?, vec![x]))
            },
        },
        Case {
            name: "reshape",
            build: |g, r| {
                let shape = r.shape(1, 3);
                let n: usize = shape.iter().product();
                let x = param(g, r, &shape, -2.0, 2.0);
                let target: Vec<isize> = match r.int(0, 2) {
                    0 => vec![-1],
                    1 => vec![1, n as isize],
                    _ => vec![n as isize, -1],
                };
                Ok((g.reshape(x, &target)?, vec![x]))
            },
        },
        Case {
            name: "broadcast_to",
            build: |g, r| {
                let target = r.shape(1, 3);
                let from = r.broadcastable(&target);
                let x = param(g, r, &from, -2.0, 2.0);
                Ok((g.broadcast_to(x, Shape::new(target))?, vec![x]))
            },
        },
        Case {
            name: "concat",
            build: |g, r| {
                let shape = r.shape(1, 3);
                let axis = r.int(0, shape.len() - 1);
                let k = r.int(2, 3);
                let xs: Vec<NodeId> = (0..k)
                    .map(|_| {
                        let mut s = shape.clone();
                        s[axis] = r.int(1, 3);
                        param(g, r, &s, -2.0, 2.0)
                    })
                    .collect();
                Ok((g.concat(&xs, axis)?, xs))
            },
        },
        Case {
            name: "stack",
            build: |g, r| {
                let shape = r.shape(0, 2);
                let k = r.int(1, 3);
                let xs: Vec<NodeId> = (0..k).map(|_| param(g, r, &shape, -2.0, 2.0)).collect();
                Ok((g.stack(&xs)?, xs))
            },
        },
        Case {
            name: "slice_row",
            build: |g, r| {
                let shape = r.shape(1, 3);
                let x = param(g, r, &shape, -2.0, 2.0);
                let i = r.int(0, shape[0] - 1);
                Ok((g.slice_row(x, i)?, vec![x]))
            },
        },
        Case {
            name: "sigmoid_cross_entropy_with_logits",
            build: |g, r| binary(g, r, (-4.0, 4.0), (0.0, 1.0), |g, a, b| g.sigmoid_cross_entropy_with_logits(a, b)),
        },
        Case { name: "xlogy", build: |g, r| binary(g, r, (-2.0, 2.0), (0.5, 3.0), |g, a, b| g.xlogy(a, b)) },
        Case {
            name: "mask_support",
            build: |g, r| {
                let shape = r.shape(0, 3);
                let logp = param(g, r, &shape, -3.0, 0.0);
                let value = r.tensor(&shape, 0.1, 2.0);
                let value = g.constant(value);
                Ok((g.mask_support(logp, value, Support::Positive, 0)?, vec![logp]))
            },
        },
        Case {
            name: "check",
            build: |g, r| {
                let shape = r.shape(0, 3);
                let x = param(g, r, &shape, 0.1, 2.0);
                Ok((g.check(x, Constraint::Positive)?, vec![x]))
            },
        },
    ]
}

/// Build one random instance of `case`, contract its output against random
/// weights, and compare gradients.
pub fn check(case: &Case, seed: u64) -> Result<GradCheck> {
    let mut gen = Gen::new(seed);
    let mut g = Graph::new();
    let (out, wrt) = (case.build)(&mut g, &mut gen)?;
    let shape = g.shape(out).dims().to_vec();
    let weights = gen.tensor(&shape, -1.0, 1.0);
    let w = g.constant(weights);
    let prod = g.mul(out, w)?;
    let loss = g.sum(prod)?;
    g.gradcheck(loss, &wrt, &probgraph::Feed::new(), STEP, &gen.rng)
}
