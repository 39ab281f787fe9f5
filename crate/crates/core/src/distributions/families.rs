use std::sync::Arc;

use super::samplers::{gamma, poisson};
use super::Family;
use crate::error::{Error, Result};
use crate::graph::{sigmoid, Graph, NodeId, Reduce, RngState, SampleOp, Shape, Support, Tensor};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal noise shaped like the broadcast of its inputs.
pub(crate) struct StdNormalNoise;

impl SampleOp for StdNormalNoise {
    fn name(&self) -> &str {
        "std_normal"
    }

    fn sample(&self, inputs: &[&Tensor], rng: &mut RngState) -> Result<Tensor> {
        let mut s = Shape::scalar();
        for t in inputs {
            s = Shape::broadcast(&s, t.shape()).ok_or_else(|| Error::shape("noise", &s, t.shape()))?;
        }
        let data = (0..s.numel()).map(|_| rng.standard_normal()).collect();
        Tensor::new(s, data)
    }
}

fn broadcast_params(params: &[&Tensor]) -> Result<(Shape, Vec<Tensor>)> {
    let mut s = Shape::scalar();
    for t in params {
        s = Shape::broadcast(&s, t.shape()).ok_or_else(|| Error::shape("parameters", &s, t.shape()))?;
    }
    let out = params.iter().map(|t| t.broadcast_to(&s)).collect::<Result<_>>()?;
    Ok((s, out))
}

pub(crate) fn sample_n(family: &Family, n: usize, params: &[&Tensor], rng: &mut RngState) -> Result<Tensor> {
    let elementwise = |rng: &mut RngState, f: &mut dyn FnMut(&mut RngState, &[f64]) -> f64| -> Result<Tensor> {
        let (s, ps) = broadcast_params(params)?;
        let m = s.numel();
        let mut data = Vec::with_capacity(n * m);
        let mut args = vec![0.0; ps.len()];
        for _ in 0..n {
            for i in 0..m {
                for (a, p) in args.iter_mut().zip(&ps) {
                    *a = p.data()[i];
                }
                data.push(f(rng, &args));
            }
        }
        Tensor::new(s.with_leading(n), data)
    };
    match family {
        Family::Normal | Family::MultivariateNormalDiag => {
            elementwise(rng, &mut |r, a| a[0] + a[1] * r.standard_normal())
        }
        Family::LogitNormal => elementwise(rng, &mut |r, a| sigmoid(a[0] + a[1] * r.standard_normal())),
        Family::Bernoulli => elementwise(rng, &mut |r, a| if r.uniform() < a[0] { 1.0 } else { 0.0 }),
        Family::BernoulliLogits => {
            elementwise(rng, &mut |r, a| if r.uniform() < sigmoid(a[0]) { 1.0 } else { 0.0 })
        }
        Family::Beta => elementwise(rng, &mut |r, a| {
            let x = gamma(r, a[0]);
            let y = gamma(r, a[1]);
            x / (x + y)
        }),
        Family::Exponential => elementwise(rng, &mut |r, a| -r.uniform_open().ln() / a[0]),
        Family::Poisson => elementwise(rng, &mut |r, a| poisson(r, a[0])),
        Family::PointMass => {
            let t = params[0];
            let mut data = Vec::with_capacity(n * t.numel());
            for _ in 0..n {
                data.extend_from_slice(t.data());
            }
            Tensor::new(t.shape().with_leading(n), data)
        }
        Family::Empirical => {
            let t = params[0];
            let rows = t.dims()[0];
            let m = t.numel() / rows;
            let mut data = Vec::with_capacity(n * m);
            for _ in 0..n {
                let i = rng.below(rows);
                data.extend_from_slice(&t.data()[i * m..(i + 1) * m]);
            }
            Tensor::new(t.shape().drop_leading(1).with_leading(n), data)
        }
        Family::Categorical => {
            let t = params[0];
            let k = *t.dims().last().unwrap();
            let batch = t.shape().drop_trailing(1);
            let mut probs = Vec::with_capacity(t.numel());
            for row in t.data().chunks(k) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
                let z: f64 = e.iter().sum();
                probs.extend(e.into_iter().map(|x| x / z));
            }
            let mut data = Vec::with_capacity(n * batch.numel());
            for _ in 0..n {
                for row in probs.chunks(k) {
                    let u = rng.uniform();
                    let mut acc = 0.0;
                    let mut pick = k - 1;
                    for (j, p) in row.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            pick = j;
                            break;
                        }
                    }
                    data.push(pick as f64);
                }
            }
            Tensor::new(batch.with_leading(n), data)
        }
        Family::Dirichlet => {
            let t = params[0];
            let k = *t.dims().last().unwrap();
            let mut data = Vec::with_capacity(n * t.numel());
            for _ in 0..n {
                for row in t.data().chunks(k) {
                    let g: Vec<f64> = row.iter().map(|&a| gamma(rng, a)).collect();
                    let z: f64 = g.iter().sum();
                    data.extend(g.into_iter().map(|x| x / z));
                }
            }
            Tensor::new(t.shape().with_leading(n), data)
        }
        Family::Custom(c) => {
            let shapes: Vec<&Shape> = params.iter().map(|t| t.shape()).collect();
            let (batch, event) = family.shapes(&shapes)?;
            let expected = batch.concat(&event).with_leading(n);
            let out = match (&c.sampler, &c.value) {
                (Some(f), _) => f(n, params, rng)?,
                (None, Some(v)) => {
                    let mut data = Vec::with_capacity(n * v.numel());
                    for _ in 0..n {
                        data.extend_from_slice(v.data());
                    }
                    Tensor::new(v.shape().with_leading(n), data)?
                }
                (None, None) => return Err(Error::UnsupportedSample(c.name.clone())),
            };
            if out.shape() != &expected {
                return Err(Error::shape(format!("sampler of `{}`", c.name), &expected, out.shape()));
            }
            Ok(out)
        }
    }
}

fn normal_log_prob(g: &mut Graph, v: NodeId, mu: NodeId, sigma: NodeId) -> Result<NodeId> {
    let d = g.sub(v, mu)?;
    let z = g.div(d, sigma)?;
    let z2 = g.square(z)?;
    let half = g.scalar(-0.5);
    let q = g.mul(half, z2)?;
    let ls = g.log(sigma)?;
    let a = g.sub(q, ls)?;
    let c = g.scalar(HALF_LN_2PI);
    g.sub(a, c)
}

fn one_minus(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let one = g.scalar(1.0);
    g.sub(one, x)
}

fn minus_one(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let one = g.scalar(1.0);
    g.sub(x, one)
}

/// `x - logsumexp(x)` along the last axis, keeping dims.
fn log_softmax(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let m = g.reduce_max(x, Reduce::axis(-1).keep())?;
    let m = g.stop_gradient(m)?;
    let shifted = g.sub(x, m)?;
    let e = g.exp(shifted)?;
    let s = g.reduce_sum(e, Reduce::axis(-1).keep())?;
    let l = g.log(s)?;
    g.sub(shifted, l)
}

pub(crate) fn log_prob_node(family: &Family, g: &mut Graph, v: NodeId, p: &[NodeId]) -> Result<NodeId> {
    let (lp, support, event_rank) = match family {
        Family::Normal => (normal_log_prob(g, v, p[0], p[1])?, Support::Real, 0),
        Family::MultivariateNormalDiag => {
            let lp = normal_log_prob(g, v, p[0], p[1])?;
            (g.reduce_sum(lp, Reduce::axis(-1))?, Support::Real, 1)
        }
        Family::LogitNormal => {
            let lv = g.log(v)?;
            let om = one_minus(g, v)?;
            let l1v = g.log(om)?;
            let t = g.sub(lv, l1v)?;
            let n = normal_log_prob(g, t, p[0], p[1])?;
            let a = g.sub(n, lv)?;
            (g.sub(a, l1v)?, Support::OpenUnitInterval, 0)
        }
        Family::Bernoulli => {
            let a = g.xlogy(v, p[0])?;
            let ov = one_minus(g, v)?;
            let op = one_minus(g, p[0])?;
            let b = g.xlogy(ov, op)?;
            (g.add(a, b)?, Support::Binary, 0)
        }
        Family::BernoulliLogits => {
            let ce = g.sigmoid_cross_entropy_with_logits(p[0], v)?;
            (g.neg(ce)?, Support::Binary, 0)
        }
        Family::Beta => {
            let am1 = minus_one(g, p[0])?;
            let bm1 = minus_one(g, p[1])?;
            let ov = one_minus(g, v)?;
            let x = g.xlogy(am1, v)?;
            let y = g.xlogy(bm1, ov)?;
            let ab = g.add(p[0], p[1])?;
            let lab = g.lgamma(ab)?;
            let la = g.lgamma(p[0])?;
            let lb = g.lgamma(p[1])?;
            let s = g.add(x, y)?;
            let s = g.add(s, lab)?;
            let s = g.sub(s, la)?;
            (g.sub(s, lb)?, Support::UnitInterval, 0)
        }
        Family::Categorical => {
            let k = *g.shape(p[0]).dims().last().unwrap();
            let ls = log_softmax(g, p[0])?;
            let oh = g.one_hot(v, k)?;
            let picked = g.mul(oh, ls)?;
            (g.reduce_sum(picked, Reduce::axis(-1))?, Support::Index(k), 0)
        }
        Family::Exponential => {
            let ll = g.log(p[0])?;
            let lv = g.mul(p[0], v)?;
            (g.sub(ll, lv)?, Support::NonNegative, 0)
        }
        Family::Poisson => {
            let a = g.xlogy(v, p[0])?;
            let b = g.sub(a, p[0])?;
            let one = g.scalar(1.0);
            let vp1 = g.add(v, one)?;
            let lf = g.lgamma(vp1)?;
            (g.sub(b, lf)?, Support::NonNegativeInteger, 0)
        }
        Family::Dirichlet => {
            let am1 = minus_one(g, p[0])?;
            let x = g.xlogy(am1, v)?;
            let sx = g.reduce_sum(x, Reduce::axis(-1))?;
            let sa = g.reduce_sum(p[0], Reduce::axis(-1))?;
            let lsa = g.lgamma(sa)?;
            let la = g.lgamma(p[0])?;
            let sla = g.reduce_sum(la, Reduce::axis(-1))?;
            let s = g.add(sx, lsa)?;
            (g.sub(s, sla)?, Support::Simplex, 1)
        }
        Family::PointMass | Family::Empirical => {
            return Err(Error::UnsupportedLogProb(family.name().to_string()));
        }
        Family::Custom(c) => return (c.log_prob)(g, v, p),
    };
    g.mask_support(lp, v, support, event_rank)
}

pub(crate) fn mean_node(family: &Family, g: &mut Graph, p: &[NodeId]) -> Result<NodeId> {
    match family {
        Family::Normal | Family::MultivariateNormalDiag => {
            let zero = g.scalar(0.0);
            let z = g.mul(zero, p[1])?;
            g.add(p[0], z)
        }
        Family::Bernoulli | Family::PointMass | Family::Poisson => {
            let zero = g.scalar(0.0);
            g.add(p[0], zero)
        }
        Family::BernoulliLogits => g.sigmoid(p[0]),
        Family::Beta => {
            let s = g.add(p[0], p[1])?;
            g.div(p[0], s)
        }
        Family::Exponential => {
            let one = g.scalar(1.0);
            g.div(one, p[0])
        }
        Family::Dirichlet => {
            let s = g.reduce_sum(p[0], Reduce::axis(-1).keep())?;
            g.div(p[0], s)
        }
        Family::Empirical => g.reduce_mean(p[0], Reduce::axis(0)),
        Family::Custom(c) => match &c.mean {
            Some(f) => f(g, p),
            None => Err(Error::MeanUndefined(c.name.clone())),
        },
        Family::Categorical | Family::LogitNormal => Err(Error::MeanUndefined(family.name().to_string())),
    }
}

pub(crate) fn reparam_node(family: &Family, g: &mut Graph, p: &[NodeId]) -> Result<Option<NodeId>> {
    let gaussian = |g: &mut Graph| -> Result<NodeId> {
        let shape = Shape::broadcast(g.shape(p[0]), g.shape(p[1]))
            .ok_or_else(|| Error::shape("reparameterized draw", g.shape(p[0]), g.shape(p[1])))?;
        let eps = g.sample(Arc::new(StdNormalNoise), &[p[0], p[1]], shape)?;
        let se = g.mul(p[1], eps)?;
        g.add(p[0], se)
    };
    Ok(match family {
        Family::Normal | Family::MultivariateNormalDiag => Some(gaussian(g)?),
        Family::LogitNormal => {
            let z = gaussian(g)?;
            Some(g.sigmoid(z)?)
        }
        Family::PointMass => Some(p[0]),
        _ => None,
    })
}
