use std::collections::BTreeMap;

use probgraph::criticism;
use probgraph::inference::InferenceProblem;
use probgraph::{Feed, NodeId, Program, Rv, Tensor};

use super::{no_feed, Defaults, Domain, Init, Latent, Report, Session};
use crate::config::{Algo, RunConfig};
use crate::data::load_csv;
use crate::output::Output;
use crate::CliError;

const LOGREG_REFERENCE: (f64, f64) = (-3.12, 0.71);
const BNN_REFERENCE: (f64, f64) = (-0.170941, 0.81);

/// `n` rows drawn with replacement from a 50 x 50 grid on [-3, 3]^2, with
/// labels from `Bernoulli(logistic(5 x0^2 + 5 x1^3))`.
pub fn simulate(n: usize, rng: &mut probgraph::RngState) -> Result<(Tensor, Tensor), probgraph::Error> {
    let grid: Vec<f64> = (0..50).map(|i| -3.0 + 6.0 * i as f64 / 49.0).collect();
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.below(grid.len() * grid.len());
        let (x0, x1) = (grid[r / grid.len()], grid[r % grid.len()]);
        let logit = 5.0 * x0 * x0 + 5.0 * x1.powi(3);
        let prob = 1.0 / (1.0 + (-logit).exp());
        x.extend([x0, x1]);
        y.push((rng.uniform() < prob) as u8 as f64);
    }
    Ok((Tensor::new([n, 2], x)?, Tensor::vector(y)))
}

/// Logistic regression, or a two-hidden-layer tanh network with `H = 2`.
pub(super) fn run(config: &RunConfig, out: &Output, network: bool) -> Result<Report, CliError> {
    let all = [Algo::Klqp, Algo::Klpq, Algo::Map, Algo::Hmc, Algo::Mh, Algo::Sgld];
    let defaults = Defaults {
        n_samples: 5,
        hmc_step: 0.05,
        mh_scale: 0.1,
        sgld_a: 0.01,
        ..Defaults::default()
    };
    let mut s = Session::new(config, defaults, &all)?;
    let (x_train, y_train) = match &config.data {
        Some(path) => load_csv(path)?,
        None => simulate(100, &mut s.data_rng)?,
    };
    let d = x_train.dims()[1];
    let mut p = Program::new();
    let x = p.graph.constant(x_train);

    let mut priors: Vec<(&'static str, Rv)> = Vec::new();
    let logits: NodeId = if network {
        let h = 2;
        let mut normal = |p: &mut Program, name: &'static str, shape: &[usize]| -> Result<Rv, CliError> {
            let rv = p.normal(Tensor::zeros(shape), Tensor::ones(shape))?;
            priors.push((name, rv));
            Ok(rv)
        };
        let w0 = normal(&mut p, "W_0", &[d, h])?;
        let w1 = normal(&mut p, "W_1", &[h, h])?;
        let w2 = normal(&mut p, "W_2", &[h, 1])?;
        let b0 = normal(&mut p, "b_0", &[h])?;
        let b1 = normal(&mut p, "b_1", &[h])?;
        let b2 = normal(&mut p, "b_2", &[1])?;
        let g = &mut p.graph;
        let a = g.matmul(x, w0)?;
        let a = g.add(a, b0)?;
        let a = g.tanh(a)?;
        let a = g.matmul(a, w1)?;
        let a = g.add(a, b1)?;
        let a = g.tanh(a)?;
        let a = g.matmul(a, w2)?;
        let a = g.add(a, b2)?;
        g.reshape(a, &[-1])?
    } else {
        let w = p.normal(Tensor::zeros([d]), Tensor::ones([d]))?;
        let b = p.normal(Tensor::zeros([1]), Tensor::ones([1]))?;
        priors.push(("W", w));
        priors.push(("b", b));
        let xw = p.graph.dot(x, w)?;
        p.graph.add(xw, b)?
    };
    let y = p.bernoulli_logits(logits)?;

    let mut problem = InferenceProblem::new();
    let mut latents = Vec::new();
    for &(name, prior) in &priors {
        let shape = p.info(prior).value_shape();
        let q = s.posterior(&mut p, shape, Domain::Real, Init::RandomNormal)?;
        problem = problem.latent(prior, q);
        latents.push(Latent { name, q });
    }
    problem = problem.data(y, y_train.clone());
    let mut inference = s.inference(problem);
    s.drive(inference.as_mut(), &mut p, &mut no_feed, out)?;
    s.write_posterior(&mut p, &latents, out)?;

    let mut swap = Vec::new();
    for (&(_, prior), l) in priors.iter().zip(&latents) {
        swap.push((prior.node, s.point(&mut p, l.q)?));
    }
    let y_post = p.copy(y, &swap)?;
    let values = criticism::evaluate(
        &mut p,
        &["log_lik", "binary_accuracy"],
        y_post,
        &y_train,
        &Feed::new(),
        1,
        &mut s.eval_rng,
    )?;
    let (reference_ll, reference_acc) = if network { BNN_REFERENCE } else { LOGREG_REFERENCE };
    let mut metrics = BTreeMap::new();
    let mut summary = vec![format!("algorithm: {}", s.algo.name())];
    for (m, v) in &values {
        metrics.insert(m.name().to_string(), *v);
    }
    metrics.insert("reference_log_likelihood".into(), reference_ll);
    metrics.insert("reference_binary_accuracy".into(), reference_acc);
    summary.push(format!("log_likelihood: {:.6} (reference {reference_ll})", values[0].1));
    summary.push(format!("binary_accuracy: {:.6} (reference {reference_acc})", values[1].1));
    Ok(Report { metrics, summary })
}
