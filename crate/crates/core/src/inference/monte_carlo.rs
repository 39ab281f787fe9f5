use std::collections::BTreeMap;

use super::{Inference, InferenceProblem, InfoDict, LossContext, Options};
use crate::distributions::Family;
use crate::error::{Error, Result};
use crate::graph::{Feed, NodeId, RngState, Tensor};
use crate::model::Program;

/// The log joint as a function of the latent values, which enter through
/// placeholders.
pub struct Target<'a> {
    pub program: &'a Program,
    log_joint: NodeId,
    slots: &'a [NodeId],
}

impl Target<'_> {
    fn bind(&self, values: &[Tensor], feed: &Feed) -> Feed {
        let mut full = feed.clone();
        for (slot, v) in self.slots.iter().zip(values) {
            full.insert(*slot, v.clone());
        }
        full
    }

    pub fn log_joint(&self, values: &[Tensor], feed: &Feed, rng: &mut RngState) -> Result<f64> {
        self.program.graph.eval(self.log_joint, &self.bind(values, feed), rng)?.item()
    }

    /// Log joint and its gradient with respect to each latent value.
    pub fn log_joint_and_grad(&self, values: &[Tensor], feed: &Feed, rng: &mut RngState) -> Result<(f64, Vec<Tensor>)> {
        let out = self
            .program
            .graph
            .value_and_gradients(self.log_joint, self.slots, &[], &self.bind(values, feed), rng)?;
        Ok((out.loss.item()?, out.grads))
    }
}

/// One Markov transition from `state`, updated in place. Returns whether
/// the proposal was accepted.
pub trait Kernel {
    fn name(&self) -> &str;

    fn step(
        &mut self,
        target: &Target<'_>,
        state: &mut [Tensor],
        iteration: usize,
        feed: &Feed,
        rng: &mut RngState,
    ) -> Result<bool>;
}

struct Chain {
    log_joint: NodeId,
    slots: Vec<NodeId>,
    buffers: Vec<NodeId>,
    capacity: usize,
    t: usize,
    accepted: usize,
}

/// Fills Empirical posterior buffers one row per update.
pub struct MonteCarlo<K> {
    pub kernel: K,
    problem: InferenceProblem,
    options: Options,
    rng: RngState,
    chain: Option<Chain>,
}

impl<K: Kernel> MonteCarlo<K> {
    pub fn new(kernel: K, problem: InferenceProblem, options: Options) -> Self {
        let rng = RngState::seed(options.seed);
        MonteCarlo {
            kernel,
            problem,
            options,
            rng,
            chain: None,
        }
    }

    /// Number of rows written so far.
    pub fn samples_drawn(&self) -> usize {
        self.chain.as_ref().map_or(0, |c| c.t)
    }

    pub fn acceptance_rate(&self) -> Option<f64> {
        self.chain
            .as_ref()
            .filter(|c| c.t > 0)
            .map(|c| c.accepted as f64 / c.t as f64)
    }
}

impl<K: Kernel> Inference for MonteCarlo<K> {
    fn initialize(&mut self, program: &mut Program) -> Result<()> {
        let mut buffers = Vec::new();
        let mut capacity = usize::MAX;
        for (z, q) in &self.problem.latent {
            let info = program.info(*q);
            let buf = info.params.first().copied();
            match buf {
                Some(b) if info.family == Family::Empirical && program.graph.is_parameter(b) => {
                    capacity = capacity.min(program.graph.shape(b).dim(0));
                    buffers.push(b);
                }
                _ => {
                    return Err(Error::WrongPosteriorFamily {
                        algorithm: self.kernel.name().to_string(),
                        family: info.family.name().to_string(),
                        rv: z.id,
                    })
                }
            }
        }
        if buffers.is_empty() {
            return Err(Error::InvalidProblem("Monte Carlo needs at least one latent variable".into()));
        }
        let mut ctx = LossContext::new(program, &self.problem, &self.options)?;
        let mut slots = Vec::new();
        let mut values = BTreeMap::new();
        for (z, _) in &self.problem.latent {
            let shape = ctx.program.info(*z).value_shape();
            let slot = ctx.program.graph.placeholder(shape)?;
            slots.push(slot);
            values.insert(*z, slot);
        }
        let log_joint = ctx.log_joint(&values)?;
        self.rng = RngState::seed(self.options.seed);
        self.chain = Some(Chain {
            log_joint,
            slots,
            buffers,
            capacity,
            t: 0,
            accepted: 0,
        });
        Ok(())
    }

    fn update(&mut self, program: &mut Program, feed: &Feed) -> Result<InfoDict> {
        let chain = self
            .chain
            .as_mut()
            .ok_or_else(|| Error::Lifecycle("update called before initialize".into()))?;
        if chain.t >= chain.capacity {
            return Err(Error::BufferFull(chain.capacity));
        }
        let read = chain.t.saturating_sub(1);
        let mut state = chain
            .buffers
            .iter()
            .map(|b| program.graph.value(*b)?.row(read))
            .collect::<Result<Vec<_>>>()?;
        let target = Target {
            program,
            log_joint: chain.log_joint,
            slots: &chain.slots,
        };
        let accepted = self.kernel.step(&target, &mut state, chain.t, feed, &mut self.rng)?;
        for (b, v) in chain.buffers.iter().zip(&state) {
            program.graph.assign_row(*b, chain.t, v)?;
        }
        chain.accepted += accepted as usize;
        chain.t += 1;
        Ok(InfoDict::acceptance(chain.t - 1, chain.accepted as f64 / chain.t as f64))
    }

    fn n_print(&self) -> usize {
        self.options.n_print
    }
}

fn flatten(state: &[Tensor]) -> Vec<f64> {
    state.iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn unflatten(template: &[Tensor], flat: &[f64]) -> Result<Vec<Tensor>> {
    let mut offset = 0;
    template
        .iter()
        .map(|t| {
            let n = t.numel();
            let out = Tensor::new(t.shape().clone(), flat[offset..offset + n].to_vec());
            offset += n;
            out
        })
        .collect()
}

/// Random-walk Metropolis with an isotropic Gaussian proposal.
#[derive(Clone, Debug)]
pub struct MetropolisHastings {
    pub proposal_scale: f64,
}

impl Kernel for MetropolisHastings {
    fn name(&self) -> &str {
        "MetropolisHastings"
    }

    fn step(&mut self, target: &Target<'_>, state: &mut [Tensor], _: usize, feed: &Feed, rng: &mut RngState) -> Result<bool> {
        let proposal: Vec<Tensor> = state
            .iter()
            .map(|t| t.map(|x| x + self.proposal_scale * rng.standard_normal()))
            .collect();
        let shared = rng.fork();
        let old = target.log_joint(state, feed, &mut shared.clone())?;
        let new = target.log_joint(&proposal, feed, &mut shared.clone())?;
        let u = rng.uniform_open();
        let accept = new.is_finite() && (!old.is_finite() || u.ln() < new - old);
        if accept {
            state.clone_from_slice(&proposal);
        }
        Ok(accept)
    }
}

/// Leapfrog integration of `steps` steps for potential `U` with unit mass.
/// `grad_u` returns the gradient of `U` at a position.
pub fn leapfrog(
    z: &mut [f64],
    r: &mut [f64],
    eps: f64,
    steps: usize,
    grad_u: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<()> {
    let mut g = grad_u(z)?;
    for _ in 0..steps {
        for (ri, gi) in r.iter_mut().zip(&g) {
            *ri -= 0.5 * eps * gi;
        }
        for (zi, ri) in z.iter_mut().zip(r.iter()) {
            *zi += eps * ri;
        }
        g = grad_u(z)?;
        for (ri, gi) in r.iter_mut().zip(&g) {
            *ri -= 0.5 * eps * gi;
        }
    }
    Ok(())
}

/// Hamiltonian Monte Carlo with a fixed step size and trajectory length.
#[derive(Clone, Debug)]
pub struct Hmc {
    pub step_size: f64,
    pub n_steps: usize,
}

impl Hmc {
    /// Energy errors above this are reported as a divergence.
    pub const DIVERGENCE: f64 = 1000.0;
}

impl Kernel for Hmc {
    fn name(&self) -> &str {
        "HMC"
    }

    fn step(&mut self, target: &Target<'_>, state: &mut [Tensor], _: usize, feed: &Feed, rng: &mut RngState) -> Result<bool> {
        let shared = rng.fork();
        let z0 = flatten(state);
        let mut z = z0.clone();
        let mut r: Vec<f64> = (0..z.len()).map(|_| rng.standard_normal()).collect();
        let kinetic = |r: &[f64]| 0.5 * r.iter().map(|x| x * x).sum::<f64>();
        let h0 = -target.log_joint(state, feed, &mut shared.clone())? + kinetic(&r);

        let mut grad_u = |x: &[f64]| -> Result<Vec<f64>> {
            let (_, g) = target.log_joint_and_grad(&unflatten(state, x)?, feed, &mut shared.clone())?;
            Ok(g.iter().flat_map(|t| t.data().iter().map(|v| -v)).collect())
        };
        let integrated = leapfrog(&mut z, &mut r, self.step_size, self.n_steps, &mut grad_u);
        if integrated.is_err() || z.iter().chain(&r).any(|x| !x.is_finite()) {
            return Ok(false);
        }
        let proposal = unflatten(state, &z)?;
        let h1 = -target.log_joint(&proposal, feed, &mut shared.clone())? + kinetic(&r);
        if !h1.is_finite() {
            return Ok(false);
        }
        let dh = h1 - h0;
        if h0.is_finite() && dh.abs() > Self::DIVERGENCE {
            return Err(Error::DivergedTrajectory(dh.abs()));
        }
        let accept = !h0.is_finite() || rng.uniform_open().ln() < -dh;
        if accept {
            state.clone_from_slice(&proposal);
        }
        Ok(accept)
    }
}

/// Polynomially decaying step sizes `a * (b + t)^-gamma`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgldSchedule {
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
}

impl Default for SgldSchedule {
    fn default() -> Self {
        SgldSchedule {
            a: 0.1,
            b: 10.0,
            gamma: 0.55,
        }
    }
}

impl SgldSchedule {
    pub fn at(&self, t: usize) -> f64 {
        self.a * (self.b + t as f64).powf(-self.gamma)
    }
}

/// Stochastic gradient Langevin dynamics. Every move is kept.
#[derive(Clone, Debug, Default)]
pub struct Sgld {
    pub schedule: SgldSchedule,
}

impl Kernel for Sgld {
    fn name(&self) -> &str {
        "SGLD"
    }

    fn step(&mut self, target: &Target<'_>, state: &mut [Tensor], t: usize, feed: &Feed, rng: &mut RngState) -> Result<bool> {
        let eps = self.schedule.at(t);
        let (_, grads) = target.log_joint_and_grad(state, feed, rng)?;
        let noise = eps.sqrt();
        for (z, g) in state.iter_mut().zip(&grads) {
            for (zi, gi) in z.data_mut().iter_mut().zip(g.data()) {
                *zi += 0.5 * eps * gi + noise * rng.standard_normal();
            }
            if !z.is_finite() {
                return Err(Error::DivergedLoss { iteration: t });
            }
        }
        Ok(true)
    }
}

pub fn mh(problem: InferenceProblem, options: Options, proposal_scale: f64) -> MonteCarlo<MetropolisHastings> {
    MonteCarlo::new(MetropolisHastings { proposal_scale }, problem, options)
}

pub fn hmc(problem: InferenceProblem, options: Options, step_size: f64, n_steps: usize) -> MonteCarlo<Hmc> {
    MonteCarlo::new(Hmc { step_size, n_steps }, problem, options)
}

pub fn sgld(problem: InferenceProblem, options: Options, schedule: SgldSchedule) -> MonteCarlo<Sgld> {
    MonteCarlo::new(Sgld { schedule }, problem, options)
}
