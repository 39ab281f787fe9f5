use std::collections::BTreeMap;

use probgraph::inference::InferenceProblem;
use probgraph::{Program, Tensor};

use super::{no_feed, Defaults, Domain, Init, Latent, Report, Session};
use crate::config::{Algo, RunConfig};
use crate::output::Output;
use crate::CliError;

const FLIPS: [f64; 10] = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];

/// Beta(1, 1) prior and ten Bernoulli flips; the posterior is Beta(3, 9).
pub(super) fn run(config: &RunConfig, out: &Output) -> Result<Report, CliError> {
    let algo = config.algo.unwrap_or(Algo::Klqp);
    let defaults = Defaults {
        n_iter: if algo.is_monte_carlo() { 11_000 } else { 2000 },
        n_samples: 5,
        sgld_a: 0.001,
        ..Defaults::default()
    };
    let all = [Algo::Klqp, Algo::Klpq, Algo::Map, Algo::Hmc, Algo::Mh, Algo::Sgld];
    let mut s = Session::new(config, defaults, &all)?;
    let mut p = Program::new();
    let theta = p.beta(1.0, 1.0)?;
    let ones = p.graph.constant(Tensor::ones([FLIPS.len()]));
    let probs = p.graph.mul(ones, theta)?;
    let x = p.bernoulli(probs)?;

    let q = s.posterior(&mut p, [], Domain::UnitInterval, Init::Constant(0.5))?;
    let problem = InferenceProblem::new().latent(theta, q).data(x, Tensor::vector(FLIPS.to_vec()));
    let mut inference = s.inference(problem);
    s.drive(inference.as_mut(), &mut p, &mut no_feed, out)?;

    let latents = [Latent { name: "theta", q }];
    s.write_posterior(&mut p, &latents, out)?;
    let (mean, sd) = s.moments(&mut p, q)?;
    let (a, b) = (3.0f64, 9.0);
    let exact_mean = a / (a + b);
    let exact_sd = (a * b / ((a + b) * (a + b) * (a + b + 1.0))).sqrt();
    let metrics = BTreeMap::from([
        ("posterior_mean".to_string(), mean.item()?),
        ("posterior_sd".to_string(), sd.item()?),
        ("exact_mean".to_string(), exact_mean),
        ("exact_sd".to_string(), exact_sd),
    ]);
    let summary = vec![
        format!("algorithm: {}", s.algo.name()),
        format!("E[theta]  posterior {:.6}  exact {:.6}", mean.item()?, exact_mean),
        format!("sd[theta] posterior {:.6}  exact {:.6}", sd.item()?, exact_sd),
    ];
    Ok(Report { metrics, summary })
}
