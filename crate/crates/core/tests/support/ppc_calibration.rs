//! Posterior predictive p-values for a conjugate Gaussian location model.

use probgraph::criticism::ppc;
use probgraph::{Feed, Program, Result, RngState, Tensor};

pub const N: usize = 50;
pub const PRIOR_SD: f64 = 0.1;
pub const N_REP: usize = 500;

/// One trial: draw `mu` from its prior, data from `N(mu + shift, 1)`, and
/// check `T = mean` against the exact posterior predictive.
pub fn trial(seed: u64, shift: f64) -> Result<f64> {
    let mut rng = RngState::seed(seed);
    let mu_true = PRIOR_SD * rng.standard_normal();
    let obs: Vec<f64> = (0..N).map(|_| mu_true + shift + rng.standard_normal()).collect();

    let precision = 1.0 / (PRIOR_SD * PRIOR_SD) + N as f64;
    let post_mean = obs.iter().sum::<f64>() / precision;
    let post_sd = precision.powf(-0.5);

    let mut p = Program::new();
    let mu = p.normal(0.0, PRIOR_SD)?;
    let ones = p.graph.constant(Tensor::ones([N]));
    let loc = p.graph.mul(ones, mu)?;
    let x = p.normal(loc, 1.0)?;
    let q = p.normal(post_mean, post_sd)?;
    let x_post = p.copy(x, &[(mu.node, q.node)])?;
    let result = ppc(
        &p,
        |xs, _| Ok(Tensor::scalar(xs[&x_post].mean())),
        &[(x_post, Tensor::vector(obs))],
        &[],
        &Feed::new(),
        N_REP,
        &mut rng,
    )?;
    Ok(result.p_value)
}
