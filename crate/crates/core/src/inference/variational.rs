use std::collections::BTreeMap;
use std::sync::Arc;

use super::{Inference, InferenceProblem, InfoDict, LossContext, Optimizer, Options};
use crate::distributions::{Family, FamilyDraw};
use crate::error::{Error, Result};
use crate::graph::{Feed, NodeId, RngState, Tensor};
use crate::model::{Program, Rv};

/// A variational objective: posterior-family rules plus a scalar loss
/// builder. New algorithms only need to implement this.
pub trait Objective {
    fn name(&self) -> &str;

    fn check_posterior(&self, program: &Program, prior: Rv, posterior: Rv) -> Result<()>;

    fn build_loss(&mut self, ctx: &mut LossContext<'_>) -> Result<NodeId>;

    /// Nodes fetched with every loss evaluation and passed to [`Objective::check`].
    fn extra_fetches(&self) -> Vec<NodeId> {
        Vec::new()
    }

    fn check(&self, _fetched: &[Tensor]) -> Result<()> {
        Ok(())
    }

    fn finalize(&mut self, _ctx: &mut FinalizeContext<'_>) -> Result<()> {
        Ok(())
    }
}

pub struct FinalizeContext<'a> {
    pub program: &'a mut Program,
    pub problem: &'a InferenceProblem,
    pub loss: NodeId,
    pub feed: &'a Feed,
    pub rng: &'a mut RngState,
}

fn wrong_family(algorithm: &str, program: &Program, prior: Rv, posterior: Rv) -> Error {
    Error::WrongPosteriorFamily {
        algorithm: algorithm.to_string(),
        family: program.info(posterior).family.name().to_string(),
        rv: prior.id,
    }
}

struct State {
    loss: NodeId,
    var_list: Vec<NodeId>,
    optimizer: Optimizer,
    iteration: usize,
    last_feed: Feed,
}

/// Gradient-based optimization of an [`Objective`].
pub struct VariationalInference<O> {
    pub objective: O,
    problem: InferenceProblem,
    options: Options,
    rng: RngState,
    state: Option<State>,
}

impl<O: Objective> VariationalInference<O> {
    pub fn new(objective: O, problem: InferenceProblem, options: Options) -> Self {
        let rng = RngState::seed(options.seed);
        VariationalInference {
            objective,
            problem,
            options,
            rng,
            state: None,
        }
    }

    pub fn problem(&self) -> &InferenceProblem {
        &self.problem
    }

    pub fn loss_node(&self) -> Option<NodeId> {
        self.state.as_ref().map(|s| s.loss)
    }

    pub fn var_list(&self) -> &[NodeId] {
        self.state.as_ref().map_or(&[], |s| &s.var_list)
    }
}

impl<O: Objective> Inference for VariationalInference<O> {
    fn initialize(&mut self, program: &mut Program) -> Result<()> {
        for (z, q) in &self.problem.latent {
            self.objective.check_posterior(program, *z, *q)?;
        }
        let mut ctx = LossContext::new(program, &self.problem, &self.options)?;
        let loss = self.objective.build_loss(&mut ctx)?;
        let shape = ctx.program.graph.shape(loss);
        if shape.numel() != 1 {
            return Err(Error::NonScalarLoss(shape.clone()));
        }
        let var_list = match &self.options.var_list {
            Some(v) => {
                if let Some(bad) = v.iter().find(|p| !ctx.program.graph.is_parameter(**p)) {
                    return Err(Error::NotAParameter(*bad));
                }
                v.clone()
            }
            None => {
                let reach = ctx.program.graph.ancestors(&[loss]);
                ctx.default_var_list()
                    .into_iter()
                    .filter(|p| reach[p.index()])
                    .collect()
            }
        };
        if self.problem.latent.is_empty() && var_list.is_empty() {
            return Err(Error::EmptyLatentAndNoParameters);
        }
        self.rng = RngState::seed(self.options.seed);
        self.state = Some(State {
            loss,
            var_list,
            optimizer: Optimizer::new(self.options.optimizer)?,
            iteration: 0,
            last_feed: Feed::new(),
        });
        Ok(())
    }

    fn update(&mut self, program: &mut Program, feed: &Feed) -> Result<InfoDict> {
        let state = self
            .state
            .as_mut()
            .ok_or_else(|| Error::Lifecycle("update called before initialize".into()))?;
        let extra = self.objective.extra_fetches();
        let out = program
            .graph
            .value_and_gradients(state.loss, &state.var_list, &extra, feed, &mut self.rng)?;
        let loss = out.loss.item()?;
        let iteration = state.iteration;
        if !loss.is_finite() || out.grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::DivergedLoss { iteration });
        }
        self.objective.check(&out.fetched)?;
        let pairs: Vec<(NodeId, Tensor)> = state.var_list.iter().copied().zip(out.grads).collect();
        state.optimizer.apply(&mut program.graph, &pairs)?;
        state.iteration += 1;
        state.last_feed = feed.clone();
        Ok(InfoDict::loss(iteration, loss))
    }

    fn finalize(&mut self, program: &mut Program) -> Result<()> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| Error::Lifecycle("finalize called before initialize".into()))?;
        let mut ctx = FinalizeContext {
            program,
            problem: &self.problem,
            loss: state.loss,
            feed: &state.last_feed,
            rng: &mut self.rng,
        };
        self.objective.finalize(&mut ctx)
    }

    fn n_print(&self) -> usize {
        self.options.n_print
    }
}

/// `-(1/S) sum_s [log p(x, z_s) - log q(z_s)]` over reparameterized draws.
fn elbo_loss(ctx: &mut LossContext<'_>, algorithm: &str) -> Result<NodeId> {
    let s = ctx.options.n_samples.max(1);
    let latent = ctx.problem.latent.clone();
    let mut total = ctx.program.graph.scalar(0.0);
    for _ in 0..s {
        let mut values = BTreeMap::new();
        let mut lq = ctx.program.graph.scalar(0.0);
        for (z, q) in &latent {
            let draw = ctx.posterior_draw(algorithm, *z, *q)?;
            values.insert(*z, draw);
            let l = ctx.posterior_log_prob(*z, *q, draw)?;
            lq = ctx.program.graph.add(lq, l)?;
        }
        let lj = ctx.log_joint(&values)?;
        let term = ctx.program.graph.sub(lj, lq)?;
        total = ctx.program.graph.add(total, term)?;
    }
    let c = ctx.program.graph.scalar(-1.0 / s as f64);
    ctx.program.graph.mul(c, total)
}

/// Reparameterized `KL(q || p)` minimization.
#[derive(Clone, Debug, Default)]
pub struct KlQp;

impl Objective for KlQp {
    fn name(&self) -> &str {
        "KLqp"
    }

    fn check_posterior(&self, program: &Program, prior: Rv, posterior: Rv) -> Result<()> {
        if program.info(posterior).family.is_reparameterizable() {
            Ok(())
        } else {
            Err(wrong_family(self.name(), program, prior, posterior))
        }
    }

    fn build_loss(&mut self, ctx: &mut LossContext<'_>) -> Result<NodeId> {
        elbo_loss(ctx, "KLqp")
    }
}

/// Point estimation: `-log p(x, z)` at point-mass posteriors.
#[derive(Clone, Debug, Default)]
pub struct Map;

impl Objective for Map {
    fn name(&self) -> &str {
        "MAP"
    }

    fn check_posterior(&self, program: &Program, prior: Rv, posterior: Rv) -> Result<()> {
        if program.info(posterior).family == Family::PointMass {
            Ok(())
        } else {
            Err(wrong_family(self.name(), program, prior, posterior))
        }
    }

    fn build_loss(&mut self, ctx: &mut LossContext<'_>) -> Result<NodeId> {
        elbo_loss(ctx, "MAP")
    }
}

/// Self-normalized importance sampling estimate of `KL(p || q)` gradients.
#[derive(Clone, Debug, Default)]
pub struct KlPq {
    log_weights: Option<NodeId>,
}

impl Objective for KlPq {
    fn name(&self) -> &str {
        "KLpq"
    }

    fn check_posterior(&self, program: &Program, prior: Rv, posterior: Rv) -> Result<()> {
        match program.info(posterior).family {
            Family::PointMass | Family::Empirical => Err(wrong_family(self.name(), program, prior, posterior)),
            _ => Ok(()),
        }
    }

    fn build_loss(&mut self, ctx: &mut LossContext<'_>) -> Result<NodeId> {
        let s = ctx.options.n_samples.max(1);
        let latent = ctx.problem.latent.clone();
        let mut log_w = Vec::with_capacity(s);
        let mut log_q = Vec::with_capacity(s);
        for _ in 0..s {
            let mut values = BTreeMap::new();
            let mut lq = ctx.program.graph.scalar(0.0);
            for (z, q) in &latent {
                let info = ctx.program.info(*q).clone();
                let g = &mut ctx.program.graph;
                let draw = match info.family.reparam_node(g, &info.params)? {
                    Some(d) => g.stop_gradient(d)?,
                    None => g.sample(
                        Arc::new(FamilyDraw(info.family.clone())),
                        &info.params,
                        info.value_shape(),
                    )?,
                };
                values.insert(*z, draw);
                let l = ctx.posterior_log_prob(*z, *q, draw)?;
                lq = ctx.program.graph.add(lq, l)?;
            }
            let lj = ctx.log_joint(&values)?;
            let g = &mut ctx.program.graph;
            let lw = g.sub(lj, lq)?;
            log_w.push(g.stop_gradient(lw)?);
            log_q.push(lq);
        }
        let g = &mut ctx.program.graph;
        let lw = g.stack(&log_w)?;
        let lse = g.logsumexp(lw, 0)?;
        let shifted = g.sub(lw, lse)?;
        let w = g.exp(shifted)?;
        let lq = g.stack(&log_q)?;
        let wl = g.mul(w, lq)?;
        let total = g.sum(wl)?;
        self.log_weights = Some(lw);
        g.neg(total)
    }

    fn extra_fetches(&self) -> Vec<NodeId> {
        self.log_weights.into_iter().collect()
    }

    fn check(&self, fetched: &[Tensor]) -> Result<()> {
        let Some(lw) = fetched.first() else {
            return Ok(());
        };
        let max = lw.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() || lw.data().iter().any(|x| x.is_nan()) {
            return Err(Error::DegenerateWeights);
        }
        Ok(())
    }
}

/// MAP over the means of Normal posteriors, followed by a diagonal Hessian
/// fit of their scales at the mode.
#[derive(Clone, Debug)]
pub struct Laplace {
    /// Finite-difference step for the Hessian diagonal.
    pub h: f64,
}

impl Default for Laplace {
    fn default() -> Self {
        Laplace { h: 1e-4 }
    }
}

impl Objective for Laplace {
    fn name(&self) -> &str {
        "Laplace"
    }

    fn check_posterior(&self, program: &Program, prior: Rv, posterior: Rv) -> Result<()> {
        let info = program.info(posterior);
        let ok = matches!(info.family, Family::Normal | Family::MultivariateNormalDiag)
            && info.params.iter().all(|p| program.graph.is_parameter(*p))
            && program.graph.shape(info.params[0]) == program.graph.shape(info.params[1]);
        if ok {
            Ok(())
        } else {
            Err(wrong_family(self.name(), program, prior, posterior))
        }
    }

    fn build_loss(&mut self, ctx: &mut LossContext<'_>) -> Result<NodeId> {
        let mut values = BTreeMap::new();
        for (z, q) in ctx.problem.latent.clone() {
            values.insert(z, ctx.program.info(q).params[0]);
        }
        let lj = ctx.log_joint(&values)?;
        ctx.program.graph.neg(lj)
    }

    fn finalize(&mut self, ctx: &mut FinalizeContext<'_>) -> Result<()> {
        let h = self.h;
        let mut offset = 0;
        for (_, q) in ctx.problem.latent.clone() {
            let info = ctx.program.info(q).clone();
            let (mu, sigma) = (info.params[0], info.params[1]);
            let mode = ctx.program.graph.value(mu)?.clone();
            let mut scales = Vec::with_capacity(mode.numel());
            for i in 0..mode.numel() {
                let mut grad_at = |delta: f64| -> Result<f64> {
                    let mut v = mode.clone();
                    v.data_mut()[i] += delta;
                    ctx.program.graph.assign(mu, v)?;
                    let mut rng = ctx.rng.clone();
                    let g = ctx.program.graph.gradients(ctx.loss, &[mu], ctx.feed, &mut rng)?;
                    Ok(g[&mu].data()[i])
                };
                let curvature = (grad_at(h)? - grad_at(-h)?) / (2.0 * h);
                if !(curvature > 0.0) || !curvature.is_finite() {
                    ctx.program.graph.assign(mu, mode.clone())?;
                    return Err(Error::NonPositiveCurvature {
                        index: offset + i,
                        curvature,
                    });
                }
                scales.push(1.0 / curvature.sqrt());
            }
            ctx.program.graph.assign(mu, mode.clone())?;
            ctx.program.graph.assign(sigma, Tensor::new(mode.shape().clone(), scales)?)?;
            offset += mode.numel();
        }
        Ok(())
    }
}

pub fn klqp(problem: InferenceProblem, options: Options) -> VariationalInference<KlQp> {
    VariationalInference::new(KlQp, problem, options)
}

pub fn klpq(problem: InferenceProblem, options: Options) -> VariationalInference<KlPq> {
    VariationalInference::new(KlPq::default(), problem, options)
}

pub fn map(problem: InferenceProblem, options: Options) -> VariationalInference<Map> {
    VariationalInference::new(Map, problem, options)
}

pub fn laplace(problem: InferenceProblem, options: Options) -> VariationalInference<Laplace> {
    VariationalInference::new(Laplace::default(), problem, options)
}
