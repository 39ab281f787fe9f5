mod classify;
mod coin;
mod mixture;
mod regression;

use std::collections::BTreeMap;

use probgraph::criticism;
use probgraph::distributions::Family;
use probgraph::inference::{self, Inference, InferenceProblem, Options, SgldSchedule};
use probgraph::{Error, Feed, NodeId, Program, RngState, Rv, Shape, Tensor};

use crate::config::{Algo, RunConfig};
use crate::output::{Output, TraceKind};
use crate::CliError;

/// What a run produced besides its files.
#[derive(Clone, Debug, Default)]
pub struct Report {
    pub metrics: BTreeMap<String, f64>,
    /// Human-readable lines for stdout.
    pub summary: Vec<String>,
}

pub fn run(config: &RunConfig) -> Result<Report, CliError> {
    use crate::config::Example::*;
    let out = Output::create(&config.out)?;
    let report = match config.example {
        Coin => coin::run(config, &out)?,
        GettingStarted => regression::getting_started(config, &out)?,
        Linreg => regression::linreg(config, &out)?,
        Logreg => classify::run(config, &out, false)?,
        BnnClassify => classify::run(config, &out, true)?,
        MixtureSubsample => mixture::run(config, &out)?,
    };
    out.metrics(&report.metrics)?;
    Ok(report)
}

/// Where a latent variable lives; picks the posterior family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Domain {
    Real,
    UnitInterval,
}

/// Starting point of the posterior parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Init {
    /// Location 0 and unconstrained scale 0.
    Zeros,
    /// Location and unconstrained scale drawn from N(0, 1).
    RandomNormal,
    Constant(f64),
}

pub(crate) struct Latent {
    pub name: &'static str,
    pub q: Rv,
}

/// Per-example defaults that flags may override.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Defaults {
    pub algo: Algo,
    pub n_iter: usize,
    pub n_samples: usize,
    pub optimizer_step: f64,
    pub hmc_step: f64,
    pub mh_scale: f64,
    pub sgld_a: f64,
}

impl Default for Defaults {
    fn default() -> Self {
        Defaults {
            algo: Algo::Klqp,
            n_iter: 1000,
            n_samples: 1,
            optimizer_step: 0.01,
            hmc_step: 0.02,
            mh_scale: 0.2,
            sgld_a: 0.1,
        }
    }
}

/// Resolved settings shared by the example drivers.
pub(crate) struct Session {
    pub algo: Algo,
    pub n_iter: usize,
    pub options: Options,
    pub config: RunConfig,
    defaults: Defaults,
    /// Independent streams for data simulation, initialization and criticism.
    pub data_rng: RngState,
    pub init_rng: RngState,
    pub eval_rng: RngState,
}

impl Session {
    pub fn new(config: &RunConfig, defaults: Defaults, allowed: &[Algo]) -> Result<Self, CliError> {
        let algo = config.algo.unwrap_or(defaults.algo);
        if !allowed.contains(&algo) {
            return Err(CliError::Config(format!(
                "{} does not support --algo {}",
                config.example.name(),
                algo.name()
            )));
        }
        let n_iter = config.n_iter.unwrap_or(defaults.n_iter);
        if algo.is_monte_carlo() && n_iter == 0 {
            return Err(CliError::Config("Monte Carlo runs need --n-iter >= 1".into()));
        }
        let n_samples = config.n_samples.unwrap_or(defaults.n_samples);
        if n_samples == 0 {
            return Err(CliError::Config("--n-samples must be at least 1".into()));
        }
        let step = if algo.is_monte_carlo() {
            defaults.optimizer_step
        } else {
            config.step_size.unwrap_or(defaults.optimizer_step)
        };
        if !(step > 0.0) {
            return Err(CliError::Config(format!("--step-size must be positive, got {step}")));
        }
        let options = Options::default()
            .seed(config.seed)
            .n_samples(n_samples)
            .n_print(config.n_print)
            .step_size(step);
        let root = RngState::seed(config.seed);
        Ok(Session {
            algo,
            n_iter,
            options,
            config: config.clone(),
            defaults,
            data_rng: root.split(0),
            init_rng: root.split(1),
            eval_rng: root.split(2),
        })
    }

    /// Samples discarded from the front of Monte Carlo buffers.
    pub fn burn_in(&self) -> usize {
        if self.algo.is_monte_carlo() {
            self.n_iter / 10
        } else {
            0
        }
    }

    /// Posterior for a latent of the given shape, in the family `algo` needs.
    pub fn posterior(&mut self, program: &mut Program, shape: impl Into<Shape>, domain: Domain, init: Init) -> Result<Rv, CliError> {
        let shape = shape.into();
        let n = shape.numel();
        let rng = &mut self.init_rng;
        let mut draw = |init: Init, zero: f64| -> Result<Tensor, CliError> {
            let data = match init {
                Init::Zeros => vec![zero; n],
                Init::RandomNormal => (0..n).map(|_| rng.standard_normal()).collect(),
                Init::Constant(c) => vec![c; n],
            };
            Ok(Tensor::new(shape.clone(), data)?)
        };
        let unit_zero = if domain == Domain::UnitInterval { 0.5 } else { 0.0 };
        let q = match self.algo {
            Algo::Klqp | Algo::Klpq => {
                let loc_init = match (domain, init) {
                    (Domain::UnitInterval, Init::Constant(c)) => Init::Constant((c / (1.0 - c)).ln()),
                    _ => init,
                };
                let mu = program.graph.parameter(draw(loc_init, 0.0)?);
                let rho_init = if matches!(init, Init::RandomNormal) { Init::RandomNormal } else { Init::Zeros };
                let rho = program.graph.parameter(draw(rho_init, 0.0)?);
                let sigma = program.graph.softplus(rho)?;
                match domain {
                    Domain::Real => program.normal(mu, sigma)?,
                    Domain::UnitInterval => program.logit_normal(mu, sigma)?,
                }
            }
            Algo::Map => {
                let p = program.graph.parameter(draw(init, unit_zero)?);
                program.point_mass(p)?
            }
            Algo::Hmc | Algo::Mh | Algo::Sgld => {
                let start = draw(init, unit_zero)?;
                let mut buf = Tensor::zeros(shape.with_leading(self.n_iter));
                buf.data_mut()[..n].copy_from_slice(start.data());
                let b = program.graph.parameter(buf);
                program.empirical(b)?
            }
        };
        Ok(q)
    }

    pub fn inference(&self, problem: InferenceProblem) -> Box<dyn Inference> {
        let opts = self.options.clone();
        let c = &self.config;
        let d = &self.defaults;
        match self.algo {
            Algo::Klqp => Box::new(inference::klqp(problem, opts)),
            Algo::Klpq => Box::new(inference::klpq(problem, opts)),
            Algo::Map => Box::new(inference::map(problem, opts)),
            Algo::Hmc => Box::new(inference::hmc(problem, opts, c.step_size.unwrap_or(d.hmc_step), c.leapfrog_steps)),
            Algo::Mh => Box::new(inference::mh(problem, opts, c.step_size.unwrap_or(d.mh_scale))),
            Algo::Sgld => Box::new(inference::sgld(
                problem,
                opts,
                SgldSchedule {
                    a: c.sgld_a.unwrap_or(d.sgld_a),
                    b: c.sgld_b,
                    gamma: c.sgld_gamma,
                },
            )),
        }
    }

    /// Run `n_iter` updates, writing `trace.csv` even when an update fails.
    pub fn drive(
        &self,
        inference: &mut dyn Inference,
        program: &mut Program,
        feeds: &mut dyn FnMut(usize) -> Feed,
        out: &Output,
    ) -> Result<(), CliError> {
        let kind = if self.algo.is_monte_carlo() {
            TraceKind::AcceptanceRate
        } else {
            TraceKind::Loss
        };
        let mut rows = Vec::with_capacity(self.n_iter);
        let result = (|| -> Result<(), Error> {
            inference.initialize(program)?;
            for i in 0..self.n_iter {
                let info = inference.update(program, &feeds(i))?;
                let v = info.loss.or(info.acceptance_rate).unwrap_or(f64::NAN);
                rows.push((i, v));
                let every = self.config.n_print;
                if every > 0 && (i + 1) % every == 0 {
                    eprintln!("iteration {:>6}  {} {v:.6}", i + 1, if kind == TraceKind::Loss { "loss" } else { "acceptance" });
                }
            }
            inference.finalize(program)
        })();
        out.trace(kind, &rows)?;
        Ok(result?)
    }

    /// Plug-in point estimate of a posterior as a graph node.
    pub fn point(&mut self, program: &mut Program, q: Rv) -> Result<NodeId, CliError> {
        let info = program.info(q).clone();
        Ok(match info.family {
            Family::Normal | Family::MultivariateNormalDiag | Family::PointMass => info.params[0],
            Family::Empirical => {
                let tail = criticism::discard_prefix(program, q, self.burn_in())?;
                program.mean(tail)?
            }
            _ => {
                let mean = draw_mean(program, q, 4000, &mut self.eval_rng)?;
                program.graph.constant(mean)
            }
        })
    }

    /// Node drawing from a posterior, without the burn-in prefix.
    pub fn sampler(&self, program: &mut Program, q: Rv) -> Result<NodeId, CliError> {
        if program.info(q).family == Family::Empirical {
            Ok(criticism::discard_prefix(program, q, self.burn_in())?.node)
        } else {
            Ok(q.node)
        }
    }

    /// Per-coordinate posterior summaries, or the raw chain for Monte Carlo.
    pub fn write_posterior(&mut self, program: &mut Program, latents: &[Latent], out: &Output) -> Result<(), CliError> {
        if self.algo.is_monte_carlo() {
            let mut header = vec!["sample".to_string()];
            let mut columns = Vec::new();
            for l in latents {
                let buf = program.graph.value(program.info(l.q).params[0])?.clone();
                let width = buf.shape().drop_leading(1).numel();
                for j in 0..width {
                    header.push(if width == 1 && buf.rank() == 1 { l.name.to_string() } else { format!("{}[{j}]", l.name) });
                }
                columns.push((buf, width));
            }
            let rows: Vec<Vec<String>> = (0..self.n_iter)
                .map(|t| {
                    let mut row = vec![t.to_string()];
                    for (buf, w) in &columns {
                        row.extend(buf.data()[t * w..(t + 1) * w].iter().map(|v| v.to_string()));
                    }
                    row
                })
                .collect();
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            return out.posterior(&header, &rows);
        }
        let mut rows = Vec::new();
        for l in latents {
            let (mean, sd) = self.moments(program, l.q)?;
            for (j, (m, s)) in mean.data().iter().zip(sd.data()).enumerate() {
                rows.push(vec![l.name.to_string(), j.to_string(), m.to_string(), s.to_string()]);
            }
        }
        out.posterior(&["variable", "index", "mean", "sd"], &rows)
    }

    /// Posterior mean and standard deviation per coordinate.
    pub fn moments(&mut self, program: &mut Program, q: Rv) -> Result<(Tensor, Tensor), CliError> {
        let info = program.info(q).clone();
        let feed = Feed::new();
        Ok(match info.family {
            Family::Normal | Family::MultivariateNormalDiag => (
                program.eval(info.params[0], &feed, &mut self.eval_rng)?,
                program.eval(info.params[1], &feed, &mut self.eval_rng)?,
            ),
            Family::PointMass => {
                let v = program.eval(info.params[0], &feed, &mut self.eval_rng)?;
                let zero = Tensor::zeros(v.shape().clone());
                (v, zero)
            }
            Family::Empirical => {
                let buf = program.eval(info.params[0], &feed, &mut self.eval_rng)?;
                column_moments(&buf, self.burn_in())?
            }
            _ => {
                let mut draws = Vec::new();
                for _ in 0..4000 {
                    draws.push(program.eval(q.node, &feed, &mut self.eval_rng)?);
                }
                let stacked = stack(&draws)?;
                column_moments(&stacked, 0)?
            }
        })
    }
}

fn stack(rows: &[Tensor]) -> Result<Tensor, Error> {
    let shape = rows[0].shape().with_leading(rows.len());
    let data = rows.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::new(shape, data)
}

/// Mean and standard deviation over the leading axis, skipping `skip` rows.
pub(crate) fn column_moments(buf: &Tensor, skip: usize) -> Result<(Tensor, Tensor), Error> {
    let rest = buf.shape().drop_leading(1);
    let w = rest.numel();
    let rows = buf.dims()[0] - skip;
    let mut mean = vec![0.0; w];
    let mut sq = vec![0.0; w];
    for r in skip..buf.dims()[0] {
        for (j, x) in buf.data()[r * w..(r + 1) * w].iter().enumerate() {
            mean[j] += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    for r in skip..buf.dims()[0] {
        for (j, x) in buf.data()[r * w..(r + 1) * w].iter().enumerate() {
            sq[j] += (x - mean[j]) * (x - mean[j]);
        }
    }
    let sd = sq.iter().map(|s| (s / rows as f64).sqrt()).collect();
    Ok((Tensor::new(rest.clone(), mean)?, Tensor::new(rest, sd)?))
}

fn draw_mean(program: &Program, q: Rv, n: usize, rng: &mut RngState) -> Result<Tensor, Error> {
    let mut sum = program.eval(q.node, &Feed::new(), rng)?;
    for _ in 1..n {
        sum = sum.add(&program.eval(q.node, &Feed::new(), rng)?)?;
    }
    Ok(sum.scale(1.0 / n as f64))
}

/// Standard-normal tensor of the given shape.
pub(crate) fn randn(rng: &mut RngState, shape: impl Into<Shape>) -> Tensor {
    let shape = shape.into();
    let data = (0..shape.numel()).map(|_| rng.standard_normal()).collect();
    Tensor::new(shape, data).expect("length matches shape")
}

pub(crate) fn no_feed(_: usize) -> Feed {
    Feed::new()
}
