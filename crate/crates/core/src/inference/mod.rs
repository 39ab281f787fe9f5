//! Inference algorithms sharing one lifecycle: `initialize`, repeated
//! `update`, `finalize`.

mod monte_carlo;
mod optimizer;
mod variational;

pub use monte_carlo::{hmc, leapfrog, mh, sgld, Hmc, Kernel, MetropolisHastings, MonteCarlo, Sgld, SgldSchedule, Target};
pub use optimizer::{Optimizer, OptimizerKind};
pub use variational::{klpq, klqp, laplace, map, FinalizeContext, KlPq, KlQp, Laplace, Map, Objective, VariationalInference};

use std::collections::BTreeMap;
use std::time::SystemTime;

use crate::distributions::Family;
use crate::error::{Error, Result};
use crate::graph::{Feed, NodeId, RngState, Shape, Tensor};
use crate::model::{Program, Rv};

/// What an observed random variable is bound to.
#[derive(Clone, Debug)]
pub enum Binding {
    Tensor(Tensor),
    /// Any node, typically a placeholder fed per update.
    Node(NodeId),
    /// Another random variable, typically a posterior from a separate run.
    /// Its draws enter the loss without passing gradients back.
    Rv(Rv),
}

impl From<Tensor> for Binding {
    fn from(t: Tensor) -> Self {
        Binding::Tensor(t)
    }
}

impl From<NodeId> for Binding {
    fn from(n: NodeId) -> Self {
        Binding::Node(n)
    }
}

impl From<Rv> for Binding {
    fn from(rv: Rv) -> Self {
        Binding::Rv(rv)
    }
}

/// Latent prior/posterior pairs, data bindings and per-variable scales.
#[derive(Clone, Debug, Default)]
pub struct InferenceProblem {
    pub latent: Vec<(Rv, Rv)>,
    pub data: Vec<(Rv, Binding)>,
    pub scale: BTreeMap<Rv, f64>,
}

fn compatible(a: &Shape, b: &Shape) -> bool {
    a.rank() == b.rank()
        && a
            .dims()
            .iter()
            .zip(b.dims())
            .all(|(&x, &y)| x == y || x == Shape::DEFERRED || y == Shape::DEFERRED)
}

impl InferenceProblem {
    pub fn new() -> Self {
        InferenceProblem::default()
    }

    pub fn latent(mut self, prior: Rv, posterior: Rv) -> Self {
        self.latent.push((prior, posterior));
        self
    }

    pub fn data(mut self, rv: Rv, binding: impl Into<Binding>) -> Self {
        self.data.push((rv, binding.into()));
        self
    }

    pub fn scale(mut self, rv: Rv, factor: f64) -> Self {
        self.scale.insert(rv, factor);
        self
    }

    pub fn validate(&self, program: &Program) -> Result<()> {
        let rv_ok = |rv: &Rv| program.get(rv.id).map(|r| r == *rv).unwrap_or(false);
        let mut keys = BTreeMap::new();
        for (prior, posterior) in &self.latent {
            if !rv_ok(prior) || !rv_ok(posterior) {
                return Err(Error::InvalidProblem(format!("unknown random variable {}", prior.id)));
            }
            if keys.insert(*prior, "latent").is_some() {
                return Err(Error::InvalidProblem(format!("random variable {} is listed twice", prior.id)));
            }
            let want = program.info(*prior).value_shape();
            let q = program.info(*posterior);
            let got = if q.family == Family::Empirical {
                program.graph.shape(q.params[0]).drop_leading(1)
            } else {
                q.value_shape()
            };
            if !compatible(&want, &got) {
                return Err(Error::shape(format!("posterior of random variable {}", prior.id), &want, &got));
            }
        }
        for (rv, binding) in &self.data {
            if !rv_ok(rv) {
                return Err(Error::InvalidProblem(format!("unknown random variable {}", rv.id)));
            }
            if keys.insert(*rv, "data").is_some() {
                return Err(Error::InvalidProblem(format!(
                    "random variable {} is both latent and observed, or observed twice",
                    rv.id
                )));
            }
            let want = program.info(*rv).value_shape();
            let got = match binding {
                Binding::Tensor(t) => t.shape().clone(),
                Binding::Node(n) => program.graph.node(*n)?.shape.clone(),
                Binding::Rv(b) => {
                    if !rv_ok(b) {
                        return Err(Error::InvalidProblem(format!("unknown random variable {}", b.id)));
                    }
                    program.info(*b).value_shape()
                }
            };
            if !compatible(&want, &got) {
                return Err(Error::shape(format!("data for random variable {}", rv.id), &want, &got));
            }
        }
        for (rv, s) in &self.scale {
            if !(*s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidProblem(format!(
                    "scale for random variable {} must be positive, got {s}",
                    rv.id
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn keys(&self) -> Vec<Rv> {
        self.latent
            .iter()
            .map(|(z, _)| *z)
            .chain(self.data.iter().map(|(x, _)| *x))
            .collect()
    }
}

/// Diagnostics from one update.
#[derive(Clone, Debug)]
pub struct InfoDict {
    pub iteration: usize,
    pub loss: Option<f64>,
    pub acceptance_rate: Option<f64>,
    pub timestamp: SystemTime,
}

impl InfoDict {
    pub(crate) fn loss(iteration: usize, loss: f64) -> Self {
        InfoDict {
            iteration,
            loss: Some(loss),
            acceptance_rate: None,
            timestamp: SystemTime::now(),
        }
    }

    pub(crate) fn acceptance(iteration: usize, rate: f64) -> Self {
        InfoDict {
            iteration,
            loss: None,
            acceptance_rate: Some(rate),
            timestamp: SystemTime::now(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunReport {
    pub infos: Vec<InfoDict>,
}

impl RunReport {
    pub fn losses(&self) -> Vec<f64> {
        self.infos.iter().filter_map(|i| i.loss).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Options {
    pub n_samples: usize,
    /// Progress goes to stderr every `n_print` updates; 0 disables it.
    pub n_print: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Parameters to optimize; by default every parameter feeding the model
    /// or the posteriors.
    pub var_list: Option<Vec<NodeId>>,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            n_samples: 1,
            n_print: 100,
            seed: 0,
            optimizer: OptimizerKind::default(),
            var_list: None,
        }
    }
}

impl Options {
    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn n_samples(mut self, n: usize) -> Self {
        self.n_samples = n;
        self
    }

    pub fn n_print(mut self, n: usize) -> Self {
        self.n_print = n;
        self
    }

    pub fn optimizer(mut self, kind: OptimizerKind) -> Self {
        self.optimizer = kind;
        self
    }

    pub fn step_size(mut self, step: f64) -> Self {
        self.optimizer = match self.optimizer {
            OptimizerKind::Sgd { .. } => OptimizerKind::sgd(step),
            OptimizerKind::Adam { .. } => OptimizerKind::adam(step),
        };
        self
    }

    pub fn var_list(mut self, vars: Vec<NodeId>) -> Self {
        self.var_list = Some(vars);
        self
    }
}

/// The base lifecycle.
pub trait Inference {
    fn initialize(&mut self, program: &mut Program) -> Result<()>;

    /// One optimizer step or one Markov transition.
    fn update(&mut self, program: &mut Program, feed: &Feed) -> Result<InfoDict>;

    fn finalize(&mut self, _program: &mut Program) -> Result<()> {
        Ok(())
    }

    fn n_print(&self) -> usize {
        0
    }

    /// `initialize`, then `n_iter` updates with feeds from `feeds`, then `finalize`.
    fn run(&mut self, program: &mut Program, n_iter: usize, feeds: &mut dyn FnMut(usize) -> Feed) -> Result<RunReport> {
        self.initialize(program)?;
        let mut report = RunReport::default();
        let every = self.n_print();
        for i in 0..n_iter {
            let info = self.update(program, &feeds(i))?;
            if every > 0 && (i + 1) % every == 0 {
                match (info.loss, info.acceptance_rate) {
                    (Some(l), _) => eprintln!("iteration {:>6}  loss {l:.6}", i + 1),
                    (_, Some(a)) => eprintln!("iteration {:>6}  acceptance {a:.4}", i + 1),
                    _ => eprintln!("iteration {:>6}", i + 1),
                }
            }
            report.infos.push(info);
        }
        self.finalize(program)?;
        Ok(report)
    }
}

/// Graph-building helpers handed to objectives and kernels.
pub struct LossContext<'a> {
    pub program: &'a mut Program,
    pub problem: &'a InferenceProblem,
    pub options: &'a Options,
    data_values: BTreeMap<Rv, NodeId>,
}

impl<'a> LossContext<'a> {
    pub(crate) fn new(program: &'a mut Program, problem: &'a InferenceProblem, options: &'a Options) -> Result<Self> {
        problem.validate(program)?;
        let mut data_values = BTreeMap::new();
        for (rv, binding) in &problem.data {
            let node = match binding {
                Binding::Tensor(t) => program.graph.constant(t.clone()),
                Binding::Node(n) => *n,
                Binding::Rv(b) => program.graph.stop_gradient(b.node)?,
            };
            data_values.insert(*rv, node);
        }
        Ok(LossContext {
            program,
            problem,
            options,
            data_values,
        })
    }

    pub fn data_value(&self, rv: Rv) -> Option<NodeId> {
        self.data_values.get(&rv).copied()
    }

    /// Scaled log joint over latent and observed variables, with latent
    /// values taken from `latent_values`.
    pub fn log_joint(&mut self, latent_values: &BTreeMap<Rv, NodeId>) -> Result<NodeId> {
        let mut values = self.data_values.clone();
        for (z, _) in &self.problem.latent {
            let v = latent_values
                .get(z)
                .ok_or(Error::MissingValue(z.id))?;
            values.insert(*z, *v);
        }
        let terms = self.problem.keys();
        self.program.log_joint(&terms, &values, &self.problem.scale)
    }

    /// Fresh reparameterized draw from a posterior.
    pub fn posterior_draw(&mut self, algorithm: &str, prior: Rv, q: Rv) -> Result<NodeId> {
        let info = self.program.info(q).clone();
        info.family
            .reparam_node(&mut self.program.graph, &info.params)?
            .ok_or_else(|| Error::WrongPosteriorFamily {
                algorithm: algorithm.to_string(),
                family: info.family.name().to_string(),
                rv: prior.id,
            })
    }

    /// `scale(prior) * sum(log q(value))`; zero for point masses.
    pub fn posterior_log_prob(&mut self, prior: Rv, q: Rv, value: NodeId) -> Result<NodeId> {
        let info = self.program.info(q).clone();
        if info.family == Family::PointMass {
            return Ok(self.program.graph.scalar(0.0));
        }
        let lp = info.family.log_prob_node(&mut self.program.graph, value, &info.params)?;
        let s = self.program.graph.sum(lp)?;
        match self.problem.scale.get(&prior) {
            Some(&c) if c != 1.0 => {
                let cn = self.program.graph.scalar(c);
                self.program.graph.mul(cn, s)
            }
            _ => Ok(s),
        }
    }

    /// Parameters feeding the model variables or the posteriors.
    pub fn default_var_list(&self) -> Vec<NodeId> {
        let mut roots: Vec<NodeId> = self.problem.keys().iter().map(|r| r.node).collect();
        for (_, q) in &self.problem.latent {
            roots.extend_from_slice(&self.program.info(*q).params);
        }
        let mask = self.program.graph.ancestors(&roots);
        self.program
            .graph
            .parameters()
            .filter(|p| mask[p.index()])
            .collect()
    }
}

/// Normal posterior with `mu` drawn as `0.1 * N(0, 1)` and
/// `sigma = softplus(rho)`, `rho = 0`.
pub fn normal_posterior(program: &mut Program, shape: impl Into<Shape>, rng: &mut RngState) -> Result<Rv> {
    let shape = shape.into();
    let mu0: Vec<f64> = (0..shape.numel()).map(|_| 0.1 * rng.standard_normal()).collect();
    let mu = program.graph.parameter(Tensor::new(shape.clone(), mu0)?);
    let rho = program.graph.parameter(Tensor::zeros(shape));
    let sigma = program.graph.softplus(rho)?;
    program.normal(mu, sigma)
}

/// Point mass at a parameter initialized like [`normal_posterior`]'s mean.
pub fn point_mass_posterior(program: &mut Program, shape: impl Into<Shape>, rng: &mut RngState) -> Result<Rv> {
    let shape = shape.into();
    let init: Vec<f64> = (0..shape.numel()).map(|_| 0.1 * rng.standard_normal()).collect();
    let p = program.graph.parameter(Tensor::new(shape, init)?);
    program.point_mass(p)
}

/// Empirical posterior with a zeroed buffer of `t` rows.
pub fn empirical_posterior(program: &mut Program, t: usize, shape: impl Into<Shape>) -> Result<Rv> {
    let shape = shape.into().with_leading(t);
    let buf = program.graph.parameter(Tensor::zeros(shape));
    program.empirical(buf)
}
