//! Random variables on top of the graph: construction, log-joint densities
//! with value substitution, and subgraph copies.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::distributions::{CustomFamily, Family, FamilyDraw, FamilyRegistry};
use crate::error::{Error, Result};
use crate::graph::{Feed, Graph, NodeId, NodeKind, RngState, Shape, Tensor};

/// Handle to a random variable; `node` is its sample node in the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rv {
    pub id: usize,
    pub node: NodeId,
}

impl From<Rv> for NodeId {
    fn from(rv: Rv) -> NodeId {
        rv.node
    }
}

#[derive(Clone, Debug)]
pub struct RvInfo {
    pub family: Family,
    pub params: Vec<NodeId>,
    pub node: NodeId,
    pub batch_shape: Shape,
    pub event_shape: Shape,
}

impl RvInfo {
    /// `batch_shape + event_shape`.
    pub fn value_shape(&self) -> Shape {
        self.batch_shape.concat(&self.event_shape)
    }
}

/// A distribution parameter: an existing node or a value to embed as a constant.
#[derive(Clone, Debug)]
pub enum Param {
    Node(NodeId),
    Value(Tensor),
}

impl From<NodeId> for Param {
    fn from(n: NodeId) -> Self {
        Param::Node(n)
    }
}

impl From<Rv> for Param {
    fn from(rv: Rv) -> Self {
        Param::Node(rv.node)
    }
}

impl From<Tensor> for Param {
    fn from(t: Tensor) -> Self {
        Param::Value(t)
    }
}

impl From<f64> for Param {
    fn from(v: f64) -> Self {
        Param::Value(Tensor::scalar(v))
    }
}

impl From<Vec<f64>> for Param {
    fn from(v: Vec<f64>) -> Self {
        Param::Value(Tensor::vector(v))
    }
}

/// A graph together with the random variables defined on it.
#[derive(Clone, Default)]
pub struct Program {
    pub graph: Graph,
    rvs: Vec<RvInfo>,
    by_node: BTreeMap<NodeId, usize>,
    registry: FamilyRegistry,
}

impl Program {
    pub fn new() -> Self {
        Program::default()
    }

    pub fn register_family(&mut self, family: CustomFamily) -> Result<Family> {
        self.registry.register(family)
    }

    pub fn family_named(&self, name: &str) -> Option<&Family> {
        self.registry.get(name)
    }

    /// Instantiate a random variable of `family`.
    pub fn rv(&mut self, family: Family, params: Vec<Param>) -> Result<Rv> {
        let nodes: Vec<NodeId> = params
            .into_iter()
            .map(|p| match p {
                Param::Node(n) => self.graph.node(n).map(|_| n),
                Param::Value(t) => Ok(self.graph.constant(t)),
            })
            .collect::<Result<_>>()?;
        let shapes: Vec<Shape> = nodes.iter().map(|n| self.graph.shape(*n).clone()).collect();
        let refs: Vec<&Shape> = shapes.iter().collect();
        let (batch_shape, event_shape) = family.shapes(&refs)?;
        let constants: Option<Vec<&Tensor>> = nodes
            .iter()
            .map(|n| match self.graph.kind(*n) {
                NodeKind::Constant(t) => Some(t),
                _ => None,
            })
            .collect();
        if let Some(values) = constants {
            family.validate(&values)?;
        }
        let node = match family {
            Family::Normal | Family::MultivariateNormalDiag | Family::LogitNormal => family
                .reparam_node(&mut self.graph, &nodes)?
                .expect("reparameterizable family"),
            _ => self.graph.sample(
                Arc::new(FamilyDraw(family.clone())),
                &nodes,
                batch_shape.concat(&event_shape),
            )?,
        };
        Ok(self.push(RvInfo {
            family,
            params: nodes,
            node,
            batch_shape,
            event_shape,
        }))
    }

    fn push(&mut self, info: RvInfo) -> Rv {
        let id = self.rvs.len();
        let node = info.node;
        self.by_node.insert(node, id);
        self.rvs.push(info);
        Rv { id, node }
    }

    pub fn normal(&mut self, mu: impl Into<Param>, sigma: impl Into<Param>) -> Result<Rv> {
        self.rv(Family::Normal, vec![mu.into(), sigma.into()])
    }

    pub fn mvn_diag(&mut self, mu: impl Into<Param>, sigma: impl Into<Param>) -> Result<Rv> {
        self.rv(Family::MultivariateNormalDiag, vec![mu.into(), sigma.into()])
    }

    pub fn logit_normal(&mut self, mu: impl Into<Param>, sigma: impl Into<Param>) -> Result<Rv> {
        self.rv(Family::LogitNormal, vec![mu.into(), sigma.into()])
    }

    pub fn bernoulli(&mut self, p: impl Into<Param>) -> Result<Rv> {
        self.rv(Family::Bernoulli, vec![p.into()])
    }

    pub fn bernoulli_logits(&mut self, logits: impl Into<Param>) -> Result<Rv> {
        self.rv(Family::BernoulliLogits, vec![logits.into()])
    }

    pub fn beta(&mut self, a: impl Into<Param>, b: impl Into<Param>) -> Result<Rv> {
        self.rv(Family::Beta, vec![a.into(), b.into()])
    }

    pub fn categorical(&mut self, logits: impl Into<Param>) -> Result<Rv> {
        self.rv(Family::Categorical, vec![logits.into()])
    }

    pub fn exponential(&mut self, lam: impl Into<Param>) -> Result<Rv> {
        self.rv(Family::Exponential, vec![lam.into()])
    }

    pub fn poisson(&mut self, lam: impl Into<Param>) -> Result<Rv> {
        self.rv(Family::Poisson, vec![lam.into()])
    }

    pub fn dirichlet(&mut self, alpha: impl Into<Param>) -> Result<Rv> {
        self.rv(Family::Dirichlet, vec![alpha.into()])
    }

    pub fn point_mass(&mut self, params: impl Into<Param>) -> Result<Rv> {
        self.rv(Family::PointMass, vec![params.into()])
    }

    pub fn empirical(&mut self, samples: impl Into<Param>) -> Result<Rv> {
        self.rv(Family::Empirical, vec![samples.into()])
    }

    pub fn info(&self, rv: Rv) -> &RvInfo {
        &self.rvs[rv.id]
    }

    pub fn get(&self, id: usize) -> Result<Rv> {
        self.rvs
            .get(id)
            .map(|i| Rv { id, node: i.node })
            .ok_or(Error::MissingValue(id))
    }

    pub fn rvs(&self) -> impl Iterator<Item = Rv> + '_ {
        self.rvs.iter().enumerate().map(|(id, i)| Rv { id, node: i.node })
    }

    /// The random variable whose sample node is `node`, if any.
    pub fn rv_at(&self, node: NodeId) -> Option<Rv> {
        self.by_node.get(&node).map(|&id| Rv { id, node })
    }

    /// Random variables reachable from the parameters of `rv`.
    pub fn parents(&self, rv: Rv) -> Vec<Rv> {
        let mask = self.graph.ancestors(&self.rvs[rv.id].params);
        self.rvs()
            .filter(|r| r.id != rv.id && mask.get(r.node.index()).copied().unwrap_or(false))
            .collect()
    }

    pub fn mean(&mut self, rv: Rv) -> Result<NodeId> {
        let info = self.rvs[rv.id].clone();
        info.family.mean_node(&mut self.graph, &info.params)
    }

    /// Unreduced `log p(value | params)` for one random variable.
    pub fn log_prob(&mut self, rv: Rv, value: NodeId) -> Result<NodeId> {
        let info = self.rvs[rv.id].clone();
        info.family.log_prob_node(&mut self.graph, value, &info.params)
    }

    pub fn eval(&self, node: impl Into<NodeId>, feed: &Feed, rng: &mut RngState) -> Result<Tensor> {
        self.graph.eval(node.into(), feed, rng)
    }

    /// Rebuild the ancestry of `roots` with `swap` applied, returning the
    /// image of every visited node. With `fresh`, every sample node is
    /// re-instantiated; otherwise only nodes whose inputs changed are.
    fn substitute(
        &mut self,
        roots: &[NodeId],
        swap: &BTreeMap<NodeId, NodeId>,
        fresh: bool,
    ) -> Result<BTreeMap<NodeId, NodeId>> {
        for (&key, &val) in swap {
            self.graph.node(key)?;
            self.graph.node(val)?;
            if key != val && self.graph.ancestors(&[val])[key.index()] {
                return Err(Error::CycleIntroduced(key));
            }
        }
        let mask = self.graph.ancestors(roots);
        let mut image: BTreeMap<NodeId, NodeId> = BTreeMap::new();
        for (i, &live) in mask.iter().enumerate() {
            if !live {
                continue;
            }
            let id = NodeId(i);
            if let Some(&v) = swap.get(&id) {
                image.insert(id, v);
                continue;
            }
            let node = self.graph.node(id)?.clone();
            let inputs: Vec<NodeId> = node.inputs.iter().map(|j| image[j]).collect();
            let changed = inputs != node.inputs;
            let new = match node.kind {
                NodeKind::Op(op) if changed => self.graph.add_op(op, &inputs)?,
                NodeKind::Sample(s) if changed || fresh => {
                    let shapes: Vec<Shape> = inputs.iter().map(|j| self.graph.shape(*j).clone()).collect();
                    let shape = sample_shape(&node.shape, &shapes, self.rv_at(id).map(|r| &self.rvs[r.id]));
                    self.graph.sample(s, &inputs, shape)?
                }
                _ => id,
            };
            image.insert(id, new);
        }
        Ok(image)
    }

    /// Copy the ancestral subgraph of `target` with `swap` substitutions.
    /// Every random variable on the way is re-instantiated with fresh sample
    /// nodes; parameters, placeholders and constants are shared.
    pub fn copy(&mut self, target: Rv, swap: &[(NodeId, NodeId)]) -> Result<Rv> {
        let swap: BTreeMap<NodeId, NodeId> = swap.iter().copied().collect();
        let image = self.substitute(&[target.node], &swap, true)?;
        let mut out = None;
        let copied: Vec<(usize, NodeId)> = image
            .iter()
            .filter(|(k, v)| k != v && !swap.contains_key(k))
            .filter_map(|(k, v)| self.by_node.get(k).map(|&id| (id, *v)))
            .collect();
        for (id, new_node) in copied {
            let old = self.rvs[id].clone();
            let params = old.params.iter().map(|p| image.get(p).copied().unwrap_or(*p)).collect();
            let rv = self.push(RvInfo {
                params,
                node: new_node,
                ..old
            });
            if id == target.id {
                out = Some(rv);
            }
        }
        out.ok_or_else(|| Error::InvalidProblem("copy target was swapped out".into()))
    }

    /// Copy an arbitrary node's ancestry under `swap`.
    pub fn copy_node(&mut self, target: NodeId, swap: &[(NodeId, NodeId)]) -> Result<NodeId> {
        let swap: BTreeMap<NodeId, NodeId> = swap.iter().copied().collect();
        let image = self.substitute(&[target], &swap, true)?;
        Ok(image[&target])
    }

    /// Per-term scaled log densities `scale * sum(log p(value | params))`,
    /// with parent values substituted into children.
    pub fn log_joint_terms(
        &mut self,
        terms: &[Rv],
        values: &BTreeMap<Rv, NodeId>,
        scale: &BTreeMap<Rv, f64>,
    ) -> Result<Vec<NodeId>> {
        for rv in terms.iter().chain(values.keys()) {
            if rv.id >= self.rvs.len() || self.rvs[rv.id].node != rv.node {
                return Err(Error::MissingValue(rv.id));
            }
        }
        let swap: BTreeMap<NodeId, NodeId> = values.iter().map(|(k, v)| (k.node, *v)).collect();
        let mut roots = Vec::new();
        for rv in terms {
            roots.extend_from_slice(&self.rvs[rv.id].params);
            roots.push(rv.node);
        }
        let image = self.substitute(&roots, &swap, false)?;
        let mut out = Vec::with_capacity(terms.len());
        for rv in terms {
            let info = self.rvs[rv.id].clone();
            let params: Vec<NodeId> = info.params.iter().map(|p| image[p]).collect();
            let value = image[&rv.node];
            let lp = info.family.log_prob_node(&mut self.graph, value, &params)?;
            let mut s = self.graph.sum(lp)?;
            let c = scale.get(rv).copied().unwrap_or(1.0);
            if c != 1.0 {
                let cn = self.graph.scalar(c);
                s = self.graph.mul(cn, s)?;
            }
            out.push(s);
        }
        Ok(out)
    }

    /// Scalar `sum_rv scale(rv) * sum_batch log p(value(rv) | parents)`.
    pub fn log_joint(
        &mut self,
        terms: &[Rv],
        values: &BTreeMap<Rv, NodeId>,
        scale: &BTreeMap<Rv, f64>,
    ) -> Result<NodeId> {
        let parts = self.log_joint_terms(terms, values, scale)?;
        let mut total = self.graph.scalar(0.0);
        for p in parts {
            total = self.graph.add(total, p)?;
        }
        Ok(total)
    }
}

/// Static shape of a re-instantiated sample node.
fn sample_shape(old: &Shape, inputs: &[Shape], info: Option<&RvInfo>) -> Shape {
    if let Some(info) = info {
        let refs: Vec<&Shape> = inputs.iter().collect();
        if let Ok((b, e)) = info.family.shapes(&refs) {
            return b.concat(&e);
        }
        return old.clone();
    }
    let mut s = Shape::scalar();
    for i in inputs {
        match Shape::broadcast(&s, i) {
            Some(b) => s = b,
            None => return old.clone(),
        }
    }
    s
}
