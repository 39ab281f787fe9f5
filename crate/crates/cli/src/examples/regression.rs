use std::collections::BTreeMap;

use probgraph::criticism::{self, Metric};
use probgraph::inference::InferenceProblem;
use probgraph::{Feed, Program, Shape, Tensor};

use super::{no_feed, randn, Defaults, Domain, Init, Latent, Report, Session};
use crate::config::{Algo, RunConfig};
use crate::data::load_csv;
use crate::output::Output;
use crate::CliError;

const ALL: [Algo; 6] = [Algo::Klqp, Algo::Klpq, Algo::Map, Algo::Hmc, Algo::Mh, Algo::Sgld];

fn record(metrics: &mut BTreeMap<String, f64>, summary: &mut Vec<String>, values: &[(Metric, f64)]) {
    for (m, v) in values {
        metrics.insert(m.name().to_string(), *v);
        summary.push(format!("{m}: {v:.6}"));
    }
}

/// Two-layer tanh network with Normal priors fit to a noisy cosine.
pub(super) fn getting_started(config: &RunConfig, out: &Output) -> Result<Report, CliError> {
    let defaults = Defaults { optimizer_step: 0.05, hmc_step: 0.005, mh_scale: 0.05, sgld_a: 1e-4, ..Defaults::default() };
    let mut s = Session::new(config, defaults, &ALL)?;
    let (x_train, y_train) = match &config.data {
        Some(path) => {
            let (x, y) = load_csv(path)?;
            if x.dims()[1] != 1 {
                return Err(CliError::Config(format!("getting-started needs one feature column, found {}", x.dims()[1])));
            }
            let n = y.numel();
            (x, Tensor::new([n, 1], y.into_data())?)
        }
        None => {
            let n = 50;
            let xs: Vec<f64> = (0..n).map(|i| -3.0 + 6.0 * i as f64 / (n - 1) as f64).collect();
            let ys: Vec<f64> = xs.iter().map(|x| x.cos() + 0.1 * s.data_rng.standard_normal()).collect();
            (Tensor::new([n, 1], xs)?, Tensor::new([n, 1], ys)?)
        }
    };

    let mut p = Program::new();
    let w0 = p.normal(Tensor::zeros([1, 2]), Tensor::ones([1, 2]))?;
    let w1 = p.normal(Tensor::zeros([2, 1]), Tensor::ones([2, 1]))?;
    let b0 = p.normal(Tensor::zeros([2]), Tensor::ones([2]))?;
    let b1 = p.normal(Tensor::zeros([1]), Tensor::ones([1]))?;
    let x = p.graph.constant(x_train.clone());
    let g = &mut p.graph;
    let h = g.matmul(x, w0)?;
    let h = g.add(h, b0)?;
    let h = g.tanh(h)?;
    let h = g.matmul(h, w1)?;
    let mu = g.add(h, b1)?;
    let y = p.normal(mu, 0.1)?;

    let mut latents = Vec::new();
    let mut problem = InferenceProblem::new();
    for (name, prior) in [("W_0", w0), ("b_0", b0), ("W_1", w1), ("b_1", b1)] {
        let shape = p.info(prior).value_shape();
        let q = s.posterior(&mut p, shape, Domain::Real, Init::Zeros)?;
        problem = problem.latent(prior, q);
        latents.push((name, prior, q));
    }
    problem = problem.data(y, y_train.clone());
    let mut inference = s.inference(problem);
    s.drive(inference.as_mut(), &mut p, &mut no_feed, out)?;

    let listed: Vec<Latent> = latents.iter().map(|&(name, _, q)| Latent { name, q }).collect();
    s.write_posterior(&mut p, &listed, out)?;
    let mut swap = Vec::new();
    for &(_, prior, q) in &latents {
        swap.push((prior.node, s.sampler(&mut p, q)?));
    }
    let y_post = p.copy(y, &swap)?;
    let values = criticism::evaluate(
        &mut p,
        &["mean_squared_error", "mean_absolute_error", "log_likelihood"],
        y_post,
        &y_train,
        &Feed::new(),
        100,
        &mut s.eval_rng,
    )?;
    let mut metrics = BTreeMap::new();
    let mut summary = vec![format!("algorithm: {}", s.algo.name())];
    record(&mut metrics, &mut summary, &values);
    Ok(Report { metrics, summary })
}

const REFERENCE_MSE: f64 = 0.012107;
const REFERENCE_MAE: f64 = 0.0867875;

/// Bayesian linear regression on simulated data with five features.
pub(super) fn linreg(config: &RunConfig, out: &Output) -> Result<Report, CliError> {
    let defaults = Defaults { optimizer_step: 0.05, hmc_step: 0.01, mh_scale: 0.02, sgld_a: 1e-4, ..Defaults::default() };
    let mut s = Session::new(config, defaults, &ALL)?;
    let (n, d) = (500, 5);
    let mut w_true = None;
    let ((x_train, y_train), (x_test, y_test)) = match &config.data {
        Some(path) => {
            let train = load_csv(path)?;
            (train.clone(), train)
        }
        None => {
            let rng = &mut s.data_rng;
            let w: Vec<f64> = (0..d).map(|_| 10.0 * (rng.uniform() - 0.5)).collect();
            let build = |rng: &mut probgraph::RngState| -> Result<(Tensor, Tensor), CliError> {
                let x = randn(rng, [n, d]);
                let y: Vec<f64> = (0..n)
                    .map(|i| {
                        let row = &x.data()[i * d..(i + 1) * d];
                        row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 0.1 * rng.standard_normal()
                    })
                    .collect();
                Ok((x, Tensor::vector(y)))
            };
            let train = build(rng)?;
            let test = build(rng)?;
            w_true = Some(w);
            (train, test)
        }
    };
    let d = x_train.dims()[1];

    let mut p = Program::new();
    let x = p.graph.placeholder(Shape::new([Shape::DEFERRED, d]))?;
    let w = p.normal(Tensor::zeros([d]), Tensor::ones([d]))?;
    let b = p.normal(Tensor::zeros([1]), Tensor::ones([1]))?;
    let xw = p.graph.dot(x, w)?;
    let mu = p.graph.add(xw, b)?;
    let y = p.normal(mu, 1.0)?;

    let qw = s.posterior(&mut p, [d], Domain::Real, Init::RandomNormal)?;
    let qb = s.posterior(&mut p, [1], Domain::Real, Init::RandomNormal)?;
    let problem = InferenceProblem::new().latent(w, qw).latent(b, qb).data(y, y_train.clone());
    let train_feed = Feed::new().with(x, x_train.clone());
    let mut inference = s.inference(problem);
    s.drive(inference.as_mut(), &mut p, &mut |_| train_feed.clone(), out)?;
    s.write_posterior(&mut p, &[Latent { name: "w", q: qw }, Latent { name: "b", q: qb }], out)?;

    let swap = [(w.node, s.sampler(&mut p, qw)?), (b.node, s.sampler(&mut p, qb)?)];
    let y_post = p.copy(y, &swap)?;
    let test_feed = Feed::new().with(x, x_test);
    let values = criticism::evaluate(
        &mut p,
        &["mean_squared_error", "mean_absolute_error"],
        y_post,
        &y_test,
        &test_feed,
        100,
        &mut s.eval_rng,
    )?;
    let mut metrics = BTreeMap::new();
    let mut summary = vec![format!("algorithm: {}", s.algo.name())];
    record(&mut metrics, &mut summary, &values);
    metrics.insert("reference_mean_squared_error".into(), REFERENCE_MSE);
    metrics.insert("reference_mean_absolute_error".into(), REFERENCE_MAE);
    summary.push(format!("published reference (different seed): mean_squared_error {REFERENCE_MSE}, mean_absolute_error {REFERENCE_MAE}"));

    let (w_mean, _) = s.moments(&mut p, qw)?;
    if let Some(truth) = &w_true {
        let mut worst: f64 = 0.0;
        for (j, (m, t)) in w_mean.data().iter().zip(truth).enumerate() {
            metrics.insert(format!("w_mean_{j}"), *m);
            metrics.insert(format!("w_true_{j}"), *t);
            summary.push(format!("w[{j}] posterior mean {m:.4}  true {t:.4}"));
            worst = worst.max((m - t).abs());
        }
        metrics.insert("max_abs_w_error".into(), worst);
    }

    let result = criticism::ppc(
        &p,
        |xs, _| Ok(Tensor::scalar(xs[&y_post].data().iter().cloned().fold(f64::NEG_INFINITY, f64::max))),
        &[(y_post, y_train)],
        &[],
        &train_feed,
        500,
        &mut s.eval_rng,
    )?;
    out.ppc(&result)?;
    metrics.insert("ppc_max_p_value".into(), result.p_value);
    summary.push(format!("ppc T=max: t_obs {:.4}, p_value {:.4}", result.t_obs, result.p_value));
    Ok(Report { metrics, summary })
}
