//! Distribution families: densities as differentiable graph fragments,
//! samplers with the `(n,) + batch + event` contract, and closed-form means.

mod families;
pub mod samplers;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{Feed, Graph, NodeId, RngState, SampleOp, Shape, Tensor};

/// Builds `log p(value | params)` in the graph, reduced over event dims.
pub type LogProbFn = Arc<dyn Fn(&mut Graph, NodeId, &[NodeId]) -> Result<NodeId> + Send + Sync>;
/// Draws `n` samples of shape `(n,) + batch + event` from parameter values.
pub type SampleFn = Arc<dyn Fn(usize, &[&Tensor], &mut RngState) -> Result<Tensor> + Send + Sync>;
/// Builds the mean in the graph.
pub type MeanFn = Arc<dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId> + Send + Sync>;
/// Maps parameter shapes to `(batch_shape, event_shape)`.
pub type ShapeFn = Arc<dyn Fn(&[&Shape]) -> Result<(Shape, Shape)> + Send + Sync>;

/// User-defined family. Needs a sampler or a fixed value.
#[derive(Clone)]
pub struct CustomFamily {
    pub name: String,
    pub log_prob: LogProbFn,
    pub sampler: Option<SampleFn>,
    pub value: Option<Tensor>,
    pub mean: Option<MeanFn>,
    pub shape: Option<ShapeFn>,
}

impl CustomFamily {
    pub fn new(
        name: impl Into<String>,
        log_prob: impl Fn(&mut Graph, NodeId, &[NodeId]) -> Result<NodeId> + Send + Sync + 'static,
    ) -> Self {
        CustomFamily {
            name: name.into(),
            log_prob: Arc::new(log_prob),
            sampler: None,
            value: None,
            mean: None,
            shape: None,
        }
    }

    pub fn with_sampler(
        mut self,
        f: impl Fn(usize, &[&Tensor], &mut RngState) -> Result<Tensor> + Send + Sync + 'static,
    ) -> Self {
        self.sampler = Some(Arc::new(f));
        self
    }

    /// Fix every draw to `value` instead of sampling.
    pub fn with_value(mut self, value: Tensor) -> Self {
        self.value = Some(value);
        self
    }

    pub fn with_mean(mut self, f: impl Fn(&mut Graph, &[NodeId]) -> Result<NodeId> + Send + Sync + 'static) -> Self {
        self.mean = Some(Arc::new(f));
        self
    }

    pub fn with_shape(mut self, f: impl Fn(&[&Shape]) -> Result<(Shape, Shape)> + Send + Sync + 'static) -> Self {
        self.shape = Some(Arc::new(f));
        self
    }
}

#[derive(Clone)]
pub enum Family {
    /// `(mu, sigma)` with `sigma` the standard deviation.
    Normal,
    /// `(p,)`.
    Bernoulli,
    /// `(logits,)`.
    BernoulliLogits,
    /// `(a, b)`.
    Beta,
    /// `(logits,)` with the category axis last.
    Categorical,
    /// `(lam,)`.
    Exponential,
    /// `(alpha,)` with the category axis last.
    Dirichlet,
    /// `(mu, sigma)`; the last axis is the event.
    MultivariateNormalDiag,
    /// `(params,)`.
    PointMass,
    /// `(samples,)` with atoms along the leading axis.
    Empirical,
    /// `(lam,)`.
    Poisson,
    /// `sigmoid` of a `Normal(mu, sigma)`; support `(0, 1)`.
    LogitNormal,
    Custom(Arc<CustomFamily>),
}

impl fmt::Debug for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl PartialEq for Family {
    fn eq(&self, other: &Self) -> bool {
        self.name() == other.name()
    }
}

pub(crate) const BUILTIN_NAMES: [&str; 12] = [
    "Normal",
    "Bernoulli",
    "BernoulliLogits",
    "Beta",
    "Categorical",
    "Exponential",
    "Dirichlet",
    "MultivariateNormalDiag",
    "PointMass",
    "Empirical",
    "Poisson",
    "LogitNormal",
];

impl Family {
    pub fn name(&self) -> &str {
        match self {
            Family::Normal => "Normal",
            Family::Bernoulli => "Bernoulli",
            Family::BernoulliLogits => "BernoulliLogits",
            Family::Beta => "Beta",
            Family::Categorical => "Categorical",
            Family::Exponential => "Exponential",
            Family::Dirichlet => "Dirichlet",
            Family::MultivariateNormalDiag => "MultivariateNormalDiag",
            Family::PointMass => "PointMass",
            Family::Empirical => "Empirical",
            Family::Poisson => "Poisson",
            Family::LogitNormal => "LogitNormal",
            Family::Custom(c) => &c.name,
        }
    }

    /// Expected number of parameters, `None` for custom families.
    pub fn arity(&self) -> Option<usize> {
        match self {
            Family::Normal | Family::Beta | Family::MultivariateNormalDiag | Family::LogitNormal => Some(2),
            Family::Custom(_) => None,
            _ => Some(1),
        }
    }

    /// Whether draws are a differentiable function of the parameters.
    pub fn is_reparameterizable(&self) -> bool {
        matches!(
            self,
            Family::Normal | Family::MultivariateNormalDiag | Family::LogitNormal | Family::PointMass
        )
    }

    pub fn is_discrete(&self) -> bool {
        matches!(
            self,
            Family::Bernoulli | Family::BernoulliLogits | Family::Categorical | Family::Poisson
        )
    }

    /// `(batch_shape, event_shape)` implied by parameter shapes.
    pub fn shapes(&self, params: &[&Shape]) -> Result<(Shape, Shape)> {
        if let Some(n) = self.arity() {
            if params.len() != n {
                return Err(Error::InvalidParam(format!(
                    "{self} takes {n} parameters, got {}",
                    params.len()
                )));
            }
        }
        let broadcast_all = |ctx: &str| -> Result<Shape> {
            let mut s = Shape::scalar();
            for p in params {
                s = Shape::broadcast(&s, p).ok_or_else(|| Error::shape(ctx, &s, p))?;
            }
            Ok(s)
        };
        let need_rank1 = |s: &Shape| -> Result<()> {
            if s.rank() == 0 {
                Err(Error::InvalidParam(format!("{self} needs parameters of rank >= 1, got {s}")))
            } else {
                Ok(())
            }
        };
        match self {
            Family::Normal
            | Family::Beta
            | Family::LogitNormal
            | Family::Bernoulli
            | Family::BernoulliLogits
            | Family::Exponential
            | Family::Poisson
            | Family::PointMass => Ok((broadcast_all(self.name())?, Shape::scalar())),
            Family::Categorical => {
                need_rank1(params[0])?;
                Ok((params[0].drop_trailing(1), Shape::scalar()))
            }
            Family::Dirichlet | Family::MultivariateNormalDiag => {
                let s = broadcast_all(self.name())?;
                need_rank1(&s)?;
                Ok((s.drop_trailing(1), s.drop_leading(s.rank() - 1)))
            }
            Family::Empirical => {
                let s = params[0];
                need_rank1(s)?;
                if s.dim(0) == 0 {
                    return Err(Error::InvalidParam("Empirical needs at least one sample".into()));
                }
                Ok((s.drop_leading(1), Shape::scalar()))
            }
            Family::Custom(c) => match (&c.shape, &c.value) {
                (Some(f), _) => f(params),
                (None, Some(v)) => Ok((v.shape().clone(), Shape::scalar())),
                (None, None) => Ok((broadcast_all(&c.name)?, Shape::scalar())),
            },
        }
    }

    /// Check parameter constraints on concrete values.
    pub fn validate(&self, params: &[&Tensor]) -> Result<()> {
        let all = |t: &Tensor, what: &str, ok: fn(f64) -> bool| -> Result<()> {
            match t.data().iter().find(|&&x| !ok(x)) {
                Some(bad) => Err(Error::InvalidParam(format!("{self}: {what}, got {bad}"))),
                None => Ok(()),
            }
        };
        let shapes: Vec<&Shape> = params.iter().map(|t| t.shape()).collect();
        self.shapes(&shapes)?;
        match self {
            Family::Normal | Family::MultivariateNormalDiag | Family::LogitNormal => {
                all(params[0], "mu must be finite", f64::is_finite)?;
                all(params[1], "sigma must be positive", |x| x > 0.0 && x.is_finite())
            }
            Family::Bernoulli => all(params[0], "p must lie in [0, 1]", |x| (0.0..=1.0).contains(&x)),
            Family::BernoulliLogits | Family::Categorical => {
                all(params[0], "logits must not be NaN", |x| !x.is_nan() && x != f64::INFINITY)
            }
            Family::Beta => {
                all(params[0], "a must be positive", |x| x > 0.0 && x.is_finite())?;
                all(params[1], "b must be positive", |x| x > 0.0 && x.is_finite())
            }
            Family::Exponential => all(params[0], "lam must be positive", |x| x > 0.0 && x.is_finite()),
            Family::Dirichlet => all(params[0], "alpha must be positive", |x| x > 0.0 && x.is_finite()),
            Family::Poisson => all(params[0], "lam must be non-negative", |x| x >= 0.0 && x.is_finite()),
            Family::PointMass | Family::Empirical | Family::Custom(_) => Ok(()),
        }
    }

    /// `n` draws, shaped `(n,) + batch + event`.
    pub fn sample_n(&self, n: usize, params: &[&Tensor], rng: &mut RngState) -> Result<Tensor> {
        if n == 0 {
            return Err(Error::InvalidParam("sample_n needs n >= 1".into()));
        }
        self.validate(params)?;
        families::sample_n(self, n, params, rng)
    }

    /// Graph fragment for `log p(value | params)`; shape is the broadcast of
    /// the batch shape with the value's batch dims.
    pub fn log_prob_node(&self, g: &mut Graph, value: NodeId, params: &[NodeId]) -> Result<NodeId> {
        let shapes: Vec<Shape> = params.iter().map(|p| g.shape(*p).clone()).collect();
        let refs: Vec<&Shape> = shapes.iter().collect();
        let (batch, event) = self.shapes(&refs)?;
        let vshape = g.shape(value).clone();
        let full = batch.concat(&event);
        if Shape::broadcast(&vshape, &full).is_none() {
            return Err(Error::shape(format!("{self} log_prob value"), &vshape, &full));
        }
        families::log_prob_node(self, g, value, params)
    }

    pub fn mean_node(&self, g: &mut Graph, params: &[NodeId]) -> Result<NodeId> {
        families::mean_node(self, g, params)
    }

    /// A fresh draw wired so gradients reach the parameters, or `None` when
    /// the family has no reparameterization.
    pub fn reparam_node(&self, g: &mut Graph, params: &[NodeId]) -> Result<Option<NodeId>> {
        families::reparam_node(self, g, params)
    }

    /// Tensor-level log density.
    pub fn log_prob(&self, value: &Tensor, params: &[&Tensor]) -> Result<Tensor> {
        match self {
            Family::PointMass => indicator(value, params[0], false),
            Family::Empirical => indicator(value, params[0], true),
            _ => {
                self.validate(params)?;
                let mut g = Graph::new();
                let ps: Vec<NodeId> = params.iter().map(|t| g.constant((*t).clone())).collect();
                let v = g.constant(value.clone());
                let lp = self.log_prob_node(&mut g, v, &ps)?;
                g.eval(lp, &Feed::new(), &mut RngState::seed(0))
            }
        }
    }

    /// Tensor-level mean, shaped `batch + event`.
    pub fn mean(&self, params: &[&Tensor]) -> Result<Tensor> {
        self.validate(params)?;
        let mut g = Graph::new();
        let ps: Vec<NodeId> = params.iter().map(|t| g.constant((*t).clone())).collect();
        let m = self.mean_node(&mut g, &ps)?;
        g.eval(m, &Feed::new(), &mut RngState::seed(0))
    }
}

/// 0 where `value` equals a stored atom exactly, `-inf` elsewhere.
fn indicator(value: &Tensor, atoms: &Tensor, leading_atoms: bool) -> Result<Tensor> {
    let rows: Vec<Tensor> = if leading_atoms {
        (0..atoms.dims()[0]).map(|i| atoms.row(i)).collect::<Result<_>>()?
    } else {
        vec![atoms.clone()]
    };
    let mut hit: Option<Tensor> = None;
    for r in &rows {
        let eq = value.zip_with(r, |v, a| if v == a { 1.0 } else { 0.0 })?;
        hit = Some(match hit {
            None => eq,
            Some(h) => h.zip_with(&eq, f64::max)?,
        });
    }
    Ok(hit
        .expect("at least one atom")
        .map(|h| if h > 0.0 { 0.0 } else { f64::NEG_INFINITY }))
}

/// Sample node drawing one value of a family from its parameter inputs.
pub(crate) struct FamilyDraw(pub Family);

impl SampleOp for FamilyDraw {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn sample(&self, inputs: &[&Tensor], rng: &mut RngState) -> Result<Tensor> {
        let t = self.0.sample_n(1, inputs, rng)?;
        let shape = t.shape().drop_leading(1);
        t.reshape(shape)
    }
}

/// Registered custom families, keyed by name.
#[derive(Clone, Default)]
pub struct FamilyRegistry {
    families: BTreeMap<String, Family>,
}

impl FamilyRegistry {
    pub fn register(&mut self, family: CustomFamily) -> Result<Family> {
        if family.sampler.is_none() && family.value.is_none() {
            return Err(Error::NeitherSamplerNorValue(family.name));
        }
        if BUILTIN_NAMES.contains(&family.name.as_str()) || self.families.contains_key(&family.name) {
            return Err(Error::DuplicateName(family.name));
        }
        let name = family.name.clone();
        let f = Family::Custom(Arc::new(family));
        self.families.insert(name, f.clone());
        Ok(f)
    }

    pub fn get(&self, name: &str) -> Option<&Family> {
        self.families.get(name)
    }
}

/// A family with concrete parameter values, for tensor-level use.
#[derive(Clone, Debug)]
pub struct Distribution {
    family: Family,
    params: Vec<Tensor>,
    batch_shape: Shape,
    event_shape: Shape,
}

impl Distribution {
    pub fn new(family: Family, params: Vec<Tensor>) -> Result<Self> {
        let refs: Vec<&Tensor> = params.iter().collect();
        family.validate(&refs)?;
        let shapes: Vec<&Shape> = params.iter().map(|t| t.shape()).collect();
        let (batch_shape, event_shape) = family.shapes(&shapes)?;
        Ok(Distribution {
            family,
            params,
            batch_shape,
            event_shape,
        })
    }

    pub fn normal(mu: impl Into<Tensor>, sigma: impl Into<Tensor>) -> Result<Self> {
        Self::new(Family::Normal, vec![mu.into(), sigma.into()])
    }

    pub fn bernoulli(p: impl Into<Tensor>) -> Result<Self> {
        Self::new(Family::Bernoulli, vec![p.into()])
    }

    pub fn beta(a: impl Into<Tensor>, b: impl Into<Tensor>) -> Result<Self> {
        Self::new(Family::Beta, vec![a.into(), b.into()])
    }

    pub fn categorical(logits: impl Into<Tensor>) -> Result<Self> {
        Self::new(Family::Categorical, vec![logits.into()])
    }

    pub fn exponential(lam: impl Into<Tensor>) -> Result<Self> {
        Self::new(Family::Exponential, vec![lam.into()])
    }

    pub fn poisson(lam: impl Into<Tensor>) -> Result<Self> {
        Self::new(Family::Poisson, vec![lam.into()])
    }

    pub fn dirichlet(alpha: impl Into<Tensor>) -> Result<Self> {
        Self::new(Family::Dirichlet, vec![alpha.into()])
    }

    pub fn point_mass(params: impl Into<Tensor>) -> Result<Self> {
        Self::new(Family::PointMass, vec![params.into()])
    }

    pub fn empirical(samples: impl Into<Tensor>) -> Result<Self> {
        Self::new(Family::Empirical, vec![samples.into()])
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn batch_shape(&self) -> &Shape {
        &self.batch_shape
    }

    pub fn event_shape(&self) -> &Shape {
        &self.event_shape
    }

    fn refs(&self) -> Vec<&Tensor> {
        self.params.iter().collect()
    }

    pub fn log_prob(&self, value: &Tensor) -> Result<Tensor> {
        self.family.log_prob(value, &self.refs())
    }

    pub fn sample_n(&self, n: usize, rng: &mut RngState) -> Result<Tensor> {
        self.family.sample_n(n, &self.refs(), rng)
    }

    pub fn mean(&self) -> Result<Tensor> {
        self.family.mean(&self.refs())
    }
}
