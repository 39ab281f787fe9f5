use std::collections::BTreeMap;
use std::f64::consts::PI;

use probgraph::graph::Reduce;
use probgraph::inference::InferenceProblem;
use probgraph::{CustomFamily, Error, Feed, Graph, NodeId, Program, RngState, Shape, Tensor};

use super::{randn, Defaults, Domain, Init, Latent, Report, Session};
use crate::config::{Algo, RunConfig};
use crate::output::Output;
use crate::CliError;

const N: usize = 100_000;
const M: usize = 128;
const D: usize = 2;
const K: usize = 5;
const HELD_OUT: usize = 10_000;

/// Equal-weight mixture of unit-variance Gaussians with the assignment
/// summed out. Parameters: cluster means `[K, D]` and a `[M]` plate
/// template fixing the batch shape. Values are `[M, D]`.
pub fn gaussian_mixture() -> CustomFamily {
    CustomFamily::new("GaussianMixture", |g: &mut Graph, v: NodeId, p: &[NodeId]| {
        let beta = p[0];
        let (k, d) = (g.shape(beta).dim(0), g.shape(beta).dim(1));
        let x = g.reshape(v, &[-1, 1, d as isize])?;
        let diff = g.sub(x, beta)?;
        let sq = g.square(diff)?;
        let dist = g.reduce_sum(sq, Reduce::axis(-1))?;
        let half = g.scalar(-0.5);
        let comp = g.mul(half, dist)?;
        let lse = g.logsumexp(comp, -1)?;
        let shift = g.scalar(-(k as f64).ln() - 0.5 * d as f64 * (2.0 * PI).ln());
        g.add(lse, shift)
    })
    .with_shape(|shapes: &[&Shape]| {
        if shapes.len() != 2 || shapes[0].rank() != 2 || shapes[1].rank() != 1 {
            return Err(Error::InvalidParam("GaussianMixture takes ([K, D] means, [M] plate)".into()));
        }
        Ok((shapes[1].clone(), Shape::new([shapes[0].dim(1)])))
    })
    .with_sampler(|n: usize, p: &[&Tensor], rng: &mut RngState| {
        let (beta, m) = (p[0], p[1].numel());
        let (k, d) = (beta.dims()[0], beta.dims()[1]);
        let mut out = Vec::with_capacity(n * m * d);
        for _ in 0..n * m {
            let c = rng.below(k);
            out.extend((0..d).map(|j| beta.data()[c * d + j] + rng.standard_normal()));
        }
        Tensor::new([n, m, d], out)
    })
}

fn simulate(beta: &Tensor, n: usize, rng: &mut RngState) -> Result<Tensor, Error> {
    let (k, d) = (beta.dims()[0], beta.dims()[1]);
    let mut out = Vec::with_capacity(n * d);
    for _ in 0..n {
        let c = rng.below(k);
        out.extend((0..d).map(|j| beta.data()[c * d + j] + rng.standard_normal()));
    }
    Tensor::new([n, d], out)
}

/// Per-datapoint mean log density of `x` under cluster means `beta`.
fn mean_log_density(beta: &Tensor, x: &Tensor) -> f64 {
    let (k, d) = (beta.dims()[0], beta.dims()[1]);
    let n = x.dims()[0];
    let c = -(k as f64).ln() - 0.5 * d as f64 * (2.0 * PI).ln();
    let mut total = 0.0;
    for i in 0..n {
        let row = &x.data()[i * d..(i + 1) * d];
        let comps: Vec<f64> = (0..k)
            .map(|j| {
                let mu = &beta.data()[j * d..(j + 1) * d];
                -0.5 * row.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .collect();
        let m = comps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        total += m + comps.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + c;
    }
    total / n as f64
}

/// Mixture of Gaussians fit to 10^5 points through minibatches of 128,
/// with the minibatch log-likelihood scaled by N / M.
pub(super) fn run(config: &RunConfig, out: &Output) -> Result<Report, CliError> {
    let defaults = Defaults {
        sgld_a: 1e-4,
        hmc_step: 1e-3,
        mh_scale: 0.01,
        ..Defaults::default()
    };
    let mut s = Session::new(config, defaults, &[Algo::Klqp, Algo::Map, Algo::Sgld])?;
    if config.data.is_some() {
        return Err(CliError::Config("mixture-subsample simulates its own data; --data is not supported".into()));
    }
    let beta_true = randn(&mut s.data_rng, [K, D]);
    let x_all = simulate(&beta_true, N, &mut s.data_rng)?;
    let x_held = simulate(&beta_true, HELD_OUT, &mut s.data_rng)?;

    let mut p = Program::new();
    let family = p.register_family(gaussian_mixture())?;
    let beta = p.normal(Tensor::zeros([K, D]), Tensor::ones([K, D]))?;
    let plate = p.graph.constant(Tensor::zeros([M]));
    let x = p.rv(family, vec![beta.into(), plate.into()])?;
    let x_ph = p.graph.placeholder([M, D])?;

    let qbeta = s.posterior(&mut p, [K, D], Domain::Real, Init::Zeros)?;
    let problem = InferenceProblem::new()
        .latent(beta, qbeta)
        .data(x, x_ph)
        .scale(x, N as f64 / M as f64);
    let batches = N / M;
    let mut feeds = |i: usize| {
        let start = (i % batches) * M * D;
        let batch = Tensor::new([M, D], x_all.data()[start..start + M * D].to_vec()).expect("batch shape");
        Feed::new().with(x_ph, batch)
    };
    let mut inference = s.inference(problem);
    s.drive(inference.as_mut(), &mut p, &mut feeds, out)?;
    s.write_posterior(&mut p, &[Latent { name: "beta", q: qbeta }], out)?;

    let (mean, _) = s.moments(&mut p, qbeta)?;
    let fitted = mean_log_density(&mean, &x_held);
    let truth = mean_log_density(&beta_true, &x_held);
    let metrics = BTreeMap::from([
        ("heldout_log_likelihood".to_string(), fitted),
        ("heldout_log_likelihood_true_means".to_string(), truth),
    ]);
    let summary = vec![
        format!("algorithm: {}", s.algo.name()),
        format!("held-out log likelihood per point: fitted {fitted:.6}, true means {truth:.6}"),
    ];
    Ok(Report { metrics, summary })
}
