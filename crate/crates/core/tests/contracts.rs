use std::collections::BTreeMap;

use probgraph::graph::Reduce;
use probgraph::inference::{self, FinalizeContext, Inference, InferenceProblem, LossContext, Objective, Options, VariationalInference};
use probgraph::{Error, Family, Feed, NodeId, Program, RngState, Rv, Shape, Tensor};

fn quiet() -> Options {
    Options::default().n_print(0)
}

fn no_feed(_: usize) -> Feed {
    Feed::new()
}

fn gauss_model(p: &mut Program) -> (Rv, Rv) {
    let z = p.normal(0.0, 1.0).unwrap();
    let x = p.normal(z, 1.0).unwrap();
    (z, x)
}

fn scalar(p: &Program, node: NodeId) -> f64 {
    p.eval(node, &Feed::new(), &mut RngState::seed(0)).unwrap().item().unwrap()
}

#[test]
fn klqp_loss_is_unbiased() {
    let build = |s: usize| {
        let mut p = Program::new();
        let (z, x) = gauss_model(&mut p);
        let mu = p.graph.parameter(0.3);
        let sigma = p.graph.parameter(0.8);
        let q = p.normal(mu, sigma).unwrap();
        let problem = InferenceProblem::new().latent(z, q).data(x, Tensor::scalar(1.0));
        let mut inf = inference::klqp(problem, quiet().n_samples(s));
        inf.initialize(&mut p).unwrap();
        let loss = inf.loss_node().unwrap();
        (p, loss)
    };
    let (p1, l1) = build(1);
    let mut rng = RngState::seed(1);
    let draws: Vec<f64> = (0..10_000).map(|_| p1.eval(l1, &Feed::new(), &mut rng).unwrap().item().unwrap()).collect();
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let sd = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();

    let (p2, l2) = build(10_000);
    let big = p2.eval(l2, &Feed::new(), &mut RngState::seed(2)).unwrap().item().unwrap();
    let se = sd * (2.0 / n).sqrt();
    assert!((mean - big).abs() < 3.0 * se, "{mean} vs {big}, se {se}");
}

#[test]
fn elbo_vanishes_when_q_equals_p() {
    let mut p = Program::new();
    let z = p.normal(0.0, 1.0).unwrap();
    let mu = p.graph.parameter(0.0);
    let sigma = p.graph.parameter(1.0);
    let q = p.normal(mu, sigma).unwrap();
    let mut inf = inference::klqp(InferenceProblem::new().latent(z, q), quiet().n_samples(50));
    inf.initialize(&mut p).unwrap();
    let loss = scalar(&p, inf.loss_node().unwrap());
    assert!(loss.abs() < 1e-12, "{loss}");
}

#[test]
fn map_equals_klqp_with_point_mass() {
    let mut p = Program::new();
    let (z, x) = gauss_model(&mut p);
    let t = p.graph.parameter(0.7);
    let q = p.point_mass(t).unwrap();
    let problem = InferenceProblem::new().latent(z, q).data(x, Tensor::scalar(2.0));
    let mut a = inference::map(problem.clone(), quiet());
    let mut b = inference::klqp(problem, quiet());
    a.initialize(&mut p).unwrap();
    b.initialize(&mut p).unwrap();
    let (la, lb) = (scalar(&p, a.loss_node().unwrap()), scalar(&p, b.loss_node().unwrap()));
    assert_eq!(la, lb);
    let direct = 0.5 * 0.7f64.powi(2) + 0.5 * 1.3f64.powi(2) + (2.0 * std::f64::consts::PI).ln();
    assert!((la - direct).abs() < 1e-12);
}

#[test]
fn map_mode_and_model_parameters() {
    let mut p = Program::new();
    let (z, x) = gauss_model(&mut p);
    let t = p.graph.parameter(0.0);
    let q = p.point_mass(t).unwrap();
    let mut inf = inference::map(InferenceProblem::new().latent(z, q).data(x, Tensor::scalar(2.0)), quiet().step_size(0.05));
    inf.run(&mut p, 2000, &mut no_feed).unwrap();
    let mode = p.graph.value(t).unwrap().item().unwrap();
    assert!((mode - 1.0).abs() < 1e-3, "{mode}");

    let mut p = Program::new();
    let theta = p.graph.parameter(0.0);
    let zero = p.graph.constant(Tensor::zeros([4]));
    let loc = p.graph.add(zero, theta).unwrap();
    let x = p.normal(loc, 1.0).unwrap();
    let data = Tensor::vector(vec![0.1, 0.5, 0.2, 0.68]);
    let mut inf = inference::map(InferenceProblem::new().data(x, data), quiet().step_size(0.05));
    inf.run(&mut p, 2000, &mut no_feed).unwrap();
    let mle = p.graph.value(theta).unwrap().item().unwrap();
    assert!((mle - 0.37).abs() < 1e-3, "{mle}");
}

#[test]
fn run_counts_updates_and_zero_iterations_is_a_no_op() {
    let mut p = Program::new();
    let (z, x) = gauss_model(&mut p);
    let mut rng = RngState::seed(0);
    let q = inference::normal_posterior(&mut p, [], &mut rng).unwrap();
    let mu = p.info(q).params[0];
    let before = p.graph.value(mu).unwrap().clone();
    let problem = InferenceProblem::new().latent(z, q).data(x, Tensor::scalar(1.0));
    let mut inf = inference::klqp(problem.clone(), quiet());
    let report = inf.run(&mut p, 0, &mut no_feed).unwrap();
    assert!(report.infos.is_empty());
    assert_eq!(p.graph.value(mu).unwrap(), &before);
    let report = inference::klqp(problem, quiet()).run(&mut p, 37, &mut no_feed).unwrap();
    assert_eq!(report.infos.len(), 37);
    assert_eq!(report.infos.last().unwrap().iteration, 36);
}

#[test]
fn same_seed_same_trajectory() {
    let trajectory = || {
        let mut p = Program::new();
        let (z, x) = gauss_model(&mut p);
        let mu = p.graph.parameter(0.0);
        let rho = p.graph.parameter(0.0);
        let s = p.graph.softplus(rho).unwrap();
        let q = p.normal(mu, s).unwrap();
        let mut inf = inference::klqp(InferenceProblem::new().latent(z, q).data(x, Tensor::scalar(1.0)), quiet().seed(8));
        let losses = inf.run(&mut p, 50, &mut no_feed).unwrap().losses();
        (losses, p.graph.value(mu).unwrap().item().unwrap())
    };
    let (a, b) = (trajectory(), trajectory());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1.to_bits(), b.1.to_bits());
}

#[test]
fn wrong_shape_feed_is_rejected() {
    let mut p = Program::new();
    let xs = p.graph.placeholder(Shape::new([Shape::DEFERRED])).unwrap();
    let z = p.normal(0.0, 1.0).unwrap();
    let ones = p.graph.constant(Tensor::ones([3]));
    let loc = p.graph.mul(ones, z).unwrap();
    let x = p.normal(loc, 1.0).unwrap();
    let mut rng = RngState::seed(0);
    let q = inference::normal_posterior(&mut p, [], &mut rng).unwrap();
    let mut inf = inference::klqp(InferenceProblem::new().latent(z, q).data(x, xs), quiet());
    inf.initialize(&mut p).unwrap();
    let feed = Feed::new().with(xs, Tensor::zeros([4, 2]));
    assert!(matches!(inf.update(&mut p, &feed), Err(Error::ShapeMismatch { .. })));
    let feed = Feed::new().with(xs, Tensor::zeros([3]));
    inf.update(&mut p, &feed).unwrap();
}

#[test]
fn posterior_family_rules() {
    let mut p = Program::new();
    let (z, x) = gauss_model(&mut p);
    let logits = p.graph.parameter(Tensor::zeros([3]));
    let cat = p.categorical(logits).unwrap();
    let e = inference::klqp(InferenceProblem::new().latent(z, cat).data(x, Tensor::scalar(1.0)), quiet()).initialize(&mut p);
    assert!(matches!(e, Err(Error::WrongPosteriorFamily { .. })), "{e:?}");

    let mut rng = RngState::seed(0);
    let q = inference::normal_posterior(&mut p, [], &mut rng).unwrap();
    let e = inference::hmc(InferenceProblem::new().latent(z, q), quiet(), 0.1, 3).initialize(&mut p);
    assert!(matches!(e, Err(Error::WrongPosteriorFamily { .. })));
    let e = inference::map(InferenceProblem::new().latent(z, q), quiet()).initialize(&mut p);
    assert!(matches!(e, Err(Error::WrongPosteriorFamily { .. })));

    let e = inference::map(InferenceProblem::new().data(x, Tensor::scalar(1.0)), quiet()).initialize(&mut p);
    assert_eq!(e, Err(Error::EmptyLatentAndNoParameters));

    let e = inference::klqp(InferenceProblem::new().latent(z, q).data(z, q), quiet()).initialize(&mut p);
    assert!(matches!(e, Err(Error::InvalidProblem(_))), "{e:?}");
}

#[test]
fn laplace_flat_direction_has_no_curvature() {
    let mut p = Program::new();
    let z = p.normal(Tensor::zeros([2]), Tensor::vector(vec![1.0, 1e200])).unwrap();
    let mu = p.graph.parameter(Tensor::vector(vec![0.3, 0.3]));
    let sigma = p.graph.parameter(Tensor::ones([2]));
    let q = p.normal(mu, sigma).unwrap();
    let mut inf = inference::laplace(InferenceProblem::new().latent(z, q), quiet());
    let err = inf.run(&mut p, 10, &mut no_feed).unwrap_err();
    assert!(matches!(err, Error::NonPositiveCurvature { index: 1, .. }), "{err:?}");
}

fn coin(p: &mut Program) -> (Rv, Rv) {
    let theta = p.beta(1.0, 1.0).unwrap();
    let ones = p.graph.constant(Tensor::ones([10]));
    let probs = p.graph.mul(ones, theta).unwrap();
    let x = p.bernoulli(probs).unwrap();
    (theta, x)
}

const COIN: [f64; 10] = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];

#[test]
fn metropolis_edge_cases() {
    let mut p = Program::new();
    let (theta, x) = coin(&mut p);
    let buf = p.graph.parameter(Tensor::full([500], 0.3));
    let q = p.empirical(buf).unwrap();
    let problem = InferenceProblem::new().latent(theta, q).data(x, Tensor::vector(COIN.to_vec()));
    let mut still = inference::mh(problem.clone(), quiet(), 0.0);
    still.run(&mut p, 500, &mut no_feed).unwrap();
    assert_eq!(still.acceptance_rate(), Some(1.0));
    assert!(p.graph.value(buf).unwrap().data().iter().all(|&v| v == 0.3));

    let mut wide = inference::mh(problem, quiet().seed(4), 5.0);
    wide.run(&mut p, 500, &mut no_feed).unwrap();
    let chain = p.graph.value(buf).unwrap();
    assert!(chain.data().iter().all(|&v| v > 0.0 && v < 1.0));
    assert!(wide.acceptance_rate().unwrap() < 0.2);
}

#[test]
fn chains_write_each_row_once_and_reproducibly() {
    let chain = |seed: u64| {
        let mut p = Program::new();
        let z = p.normal(0.0, 1.0).unwrap();
        let mut init = vec![f64::NAN; 300];
        init[0] = 0.0;
        let buf = p.graph.parameter(Tensor::vector(init));
        let q = p.empirical(buf).unwrap();
        let mut inf = inference::hmc(InferenceProblem::new().latent(z, q), quiet().seed(seed), 0.4, 4);
        let report = inf.run(&mut p, 300, &mut no_feed).unwrap();
        assert_eq!(inf.samples_drawn(), 300);
        let rate = inf.acceptance_rate().unwrap();
        assert_eq!(report.infos.last().unwrap().acceptance_rate, Some(rate));
        (p.graph.value(buf).unwrap().clone(), rate)
    };
    let (a, ra) = chain(12);
    assert!(a.is_finite());
    let (b, rb) = chain(12);
    assert_eq!(a, b);
    assert_eq!(ra, rb);
}

#[test]
fn hamiltonian_is_conserved_for_small_steps() {
    let mut grad = |z: &[f64]| -> probgraph::Result<Vec<f64>> { Ok(z.iter().map(|v| 2.0 * v).collect()) };
    let h = |z: &[f64], r: &[f64]| z.iter().map(|v| v * v).sum::<f64>() + 0.5 * r.iter().map(|v| v * v).sum::<f64>();
    let (mut z, mut r) = (vec![0.8, -0.4, 1.3], vec![-0.2, 1.1, 0.5]);
    let h0 = h(&z, &r);
    inference::leapfrog(&mut z, &mut r, 1e-3, 10, &mut grad).unwrap();
    assert!((h(&z, &r) - h0).abs() < 1e-5);
}

#[test]
fn sgld_on_a_flat_target_adds_only_noise() {
    let mut p = Program::new();
    let z = p.normal(0.0, 1e150).unwrap();
    let buf = p.graph.parameter(Tensor::zeros([10_001]));
    let q = p.empirical(buf).unwrap();
    let b = 1e9f64;
    let schedule = inference::SgldSchedule { a: 0.01 * b.powf(0.55), b, gamma: 0.55 };
    let mut inf = inference::sgld(InferenceProblem::new().latent(z, q), quiet().seed(2), schedule);
    inf.run(&mut p, 10_001, &mut no_feed).unwrap();
    let chain = p.graph.value(buf).unwrap().data();
    let steps: Vec<f64> = chain.windows(2).map(|w| w[1] - w[0]).collect();
    let var = steps.iter().map(|s| s * s).sum::<f64>() / steps.len() as f64;
    let eps = schedule.at(5000);
    assert!((var / eps - 1.0).abs() < 0.05, "{var} vs {eps}");
}

#[test]
fn minibatch_gradients_average_to_the_full_gradient() {
    let n = 12;
    let m = 4;
    let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() * 2.0 + 0.5).collect();
    let mut p = Program::new();
    let z = p.normal(0.0, 1.0).unwrap();
    let batch = p.graph.placeholder([m]).unwrap();
    let ones = p.graph.constant(Tensor::ones([m]));
    let loc = p.graph.mul(ones, z).unwrap();
    let x = p.normal(loc, 1.0).unwrap();
    let t = p.graph.parameter(0.4);
    let qz = p.point_mass(t).unwrap();
    let mut sub = inference::map(InferenceProblem::new().latent(z, qz).data(x, batch).scale(x, (n / m) as f64), quiet());
    sub.initialize(&mut p).unwrap();
    let sub_loss = sub.loss_node().unwrap();

    let mut avg = 0.0;
    for k in 0..n / m {
        let feed = Feed::new().with(batch, Tensor::vector(xs[k * m..(k + 1) * m].to_vec()));
        let g = p.graph.gradients(sub_loss, &[t], &feed, &mut RngState::seed(0)).unwrap();
        avg += g[&t].item().unwrap() / (n / m) as f64;
    }

    let mut full = Program::new();
    let zf = full.normal(0.0, 1.0).unwrap();
    let onesf = full.graph.constant(Tensor::ones([n]));
    let locf = full.graph.mul(onesf, zf).unwrap();
    let xf = full.normal(locf, 1.0).unwrap();
    let tf = full.graph.parameter(0.4);
    let qf = full.point_mass(tf).unwrap();
    let mut whole = inference::map(InferenceProblem::new().latent(zf, qf).data(xf, Tensor::vector(xs.clone())), quiet());
    whole.initialize(&mut full).unwrap();
    let g = full.graph.gradients(whole.loss_node().unwrap(), &[tf], &Feed::new(), &mut RngState::seed(0)).unwrap();
    let exact = g[&tf].item().unwrap();
    let oracle = 0.4 - xs.iter().map(|x| x - 0.4).sum::<f64>();
    assert!((exact - oracle).abs() < 1e-12);
    assert!((avg - exact).abs() < 1e-10, "{avg} vs {exact}");
}

/// Enumerated `KL(q || p)` for a per-point Categorical assignment in a
/// unit-variance 1-D mixture, with cluster means taken from a bound
/// posterior.
struct AssignmentStep {
    x: Tensor,
    beta: Rv,
}

impl Objective for AssignmentStep {
    fn name(&self) -> &str {
        "AssignmentStep"
    }

    fn check_posterior(&self, program: &Program, _prior: Rv, posterior: Rv) -> probgraph::Result<()> {
        if program.info(posterior).family == Family::Categorical {
            Ok(())
        } else {
            Err(Error::InvalidProblem("AssignmentStep needs a Categorical posterior".into()))
        }
    }

    fn build_loss(&mut self, ctx: &mut LossContext<'_>) -> probgraph::Result<NodeId> {
        let (_, qz) = ctx.problem.latent[0];
        let logits = ctx.program.info(qz).params[0];
        let beta = ctx.data_value(self.beta).ok_or(Error::MissingValue(self.beta.id))?;
        let n = self.x.numel();
        let g = &mut ctx.program.graph;
        let x = g.constant(Tensor::new([n, 1], self.x.data().to_vec())?);
        let k = g.shape(logits).dim(1) as f64;
        let diff = g.sub(x, beta)?;
        let sq = g.square(diff)?;
        let half = g.scalar(-0.5);
        let loglik = g.mul(half, sq)?;
        let lse = g.logsumexp(logits, -1)?;
        let lse = g.reshape(lse, &[-1, 1])?;
        let log_q = g.sub(logits, lse)?;
        let q = g.exp(log_q)?;
        let prior = g.scalar(-k.ln());
        let lp = g.add(loglik, prior)?;
        let gap = g.sub(log_q, lp)?;
        let kl = g.mul(q, gap)?;
        g.reduce_sum(kl, Reduce::ALL)
    }
}

#[test]
fn variational_em_recovers_mixture_means() {
    let n = 100;
    let mut rng = RngState::seed(31);
    let xs: Vec<f64> = (0..n)
        .map(|i| if i % 2 == 0 { -2.0 } else { 2.0 } + rng.standard_normal())
        .collect();
    let mut p = Program::new();
    let beta = p.normal(Tensor::zeros([2]), Tensor::full([2], 10.0)).unwrap();
    let z = p.categorical(Tensor::zeros([n, 2])).unwrap();
    let loc = p.graph.gather(beta, z).unwrap();
    let x = p.normal(loc, 1.0).unwrap();

    let logits = p.graph.parameter(Tensor::zeros([n, 2]));
    let qz = p.categorical(logits).unwrap();
    let b = p.graph.parameter(Tensor::vector(vec![-0.5, 0.5]));
    let qbeta = p.point_mass(b).unwrap();

    let data = Tensor::vector(xs.clone());
    let e_problem = InferenceProblem::new().latent(z, qz).data(x, data.clone()).data(beta, qbeta);
    let mut e_step = VariationalInference::new(AssignmentStep { x: data.clone(), beta }, e_problem, quiet().step_size(0.1));
    let mut m_step = inference::map(InferenceProblem::new().latent(beta, qbeta).data(x, data).data(z, qz), quiet().step_size(0.05).seed(1));
    e_step.initialize(&mut p).unwrap();
    m_step.initialize(&mut p).unwrap();
    assert_eq!(e_step.var_list(), &[logits]);
    assert_eq!(m_step.var_list(), &[b]);
    for _ in 0..1500 {
        e_step.update(&mut p, &Feed::new()).unwrap();
        m_step.update(&mut p, &Feed::new()).unwrap();
    }
    e_step.finalize(&mut p).unwrap();
    m_step.finalize(&mut p).unwrap();
    let mut means = p.graph.value(b).unwrap().data().to_vec();
    means.sort_by(f64::total_cmp);
    assert!((means[0] + 2.0).abs() < 0.3 && (means[1] - 2.0).abs() < 0.3, "{means:?}");
}

#[test]
fn unbound_latents_are_marginalized_by_one_prior_draw() {
    let mut p = Program::new();
    let beta = p.normal(0.0, 1.0).unwrap();
    let noise = p.normal(Tensor::zeros([5]), 1.0).unwrap();
    let loc = p.graph.add(noise, beta).unwrap();
    let x = p.normal(loc, 1.0).unwrap();
    let t = p.graph.parameter(0.0);
    let qbeta = p.point_mass(t).unwrap();
    let mut inf = inference::map(InferenceProblem::new().latent(beta, qbeta).data(x, Tensor::full([5], 1.5)), quiet().step_size(0.02));
    let report = inf.run(&mut p, 2000, &mut no_feed).unwrap();
    let losses = report.losses();
    assert!(losses.windows(2).any(|w| w[0] != w[1]));
    let est = p.graph.value(t).unwrap().item().unwrap();
    assert!((est - 1.5 * 5.0 / 5.5).abs() < 0.3, "{est}");
}

#[test]
fn finalize_context_is_available_to_custom_objectives() {
    struct Counting(usize);
    impl Objective for Counting {
        fn name(&self) -> &str {
            "Counting"
        }
        fn check_posterior(&self, _: &Program, _: Rv, _: Rv) -> probgraph::Result<()> {
            Ok(())
        }
        fn build_loss(&mut self, ctx: &mut LossContext<'_>) -> probgraph::Result<NodeId> {
            let mut values = BTreeMap::new();
            for (z, q) in ctx.problem.latent.clone() {
                let d = ctx.posterior_draw(self.name(), z, q)?;
                values.insert(z, d);
            }
            let lj = ctx.log_joint(&values)?;
            ctx.program.graph.neg(lj)
        }
        fn finalize(&mut self, ctx: &mut FinalizeContext<'_>) -> probgraph::Result<()> {
            self.0 = ctx.program.graph.len();
            Ok(())
        }
    }
    let mut p = Program::new();
    let (z, x) = gauss_model(&mut p);
    let t = p.graph.parameter(0.0);
    let q = p.point_mass(t).unwrap();
    let mut inf = VariationalInference::new(Counting(0), InferenceProblem::new().latent(z, q).data(x, Tensor::scalar(1.0)), quiet().step_size(0.05));
    inf.run(&mut p, 1500, &mut no_feed).unwrap();
    assert!(inf.objective.0 > 0);
    assert!((p.graph.value(t).unwrap().item().unwrap() - 0.5).abs() < 1e-3);
}
