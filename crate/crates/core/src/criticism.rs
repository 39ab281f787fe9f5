//! Point-based evaluation of posterior predictives and posterior
//! predictive checks.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::distributions::Family;
use crate::error::{Error, Result};
use crate::graph::{Feed, NodeId, RngState, Tensor};
use crate::model::{Program, Rv};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    MeanSquaredError,
    MeanAbsoluteError,
    BinaryAccuracy,
    CategoricalAccuracy,
    LogLikelihood,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::MeanSquaredError,
        Metric::MeanAbsoluteError,
        Metric::BinaryAccuracy,
        Metric::CategoricalAccuracy,
        Metric::LogLikelihood,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::MeanSquaredError => "mean_squared_error",
            Metric::MeanAbsoluteError => "mean_absolute_error",
            Metric::BinaryAccuracy => "binary_accuracy",
            Metric::CategoricalAccuracy => "categorical_accuracy",
            Metric::LogLikelihood => "log_likelihood",
        }
    }

    /// Whether the metric compares point predictions (as opposed to scoring
    /// the predictive density).
    fn uses_predictions(self) -> bool {
        self != Metric::LogLikelihood
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mean_squared_error" | "mse" => Metric::MeanSquaredError,
            "mean_absolute_error" | "mae" => Metric::MeanAbsoluteError,
            "binary_accuracy" => Metric::BinaryAccuracy,
            "categorical_accuracy" => Metric::CategoricalAccuracy,
            "log_likelihood" | "log_lik" => Metric::LogLikelihood,
            other => return Err(Error::MetricUnknown(other.to_string())),
        })
    }
}

fn check_same(what: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::shape(what, a.shape(), b.shape()))
    }
}

pub fn mean_squared_error(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    check_same("mean_squared_error", pred, truth)?;
    Ok(pred.zip_with(truth, |p, t| (p - t) * (p - t))?.mean())
}

pub fn mean_absolute_error(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    check_same("mean_absolute_error", pred, truth)?;
    Ok(pred.zip_with(truth, |p, t| (p - t).abs())?.mean())
}

/// Fraction of `pred > 0.5` agreeing with binary truths.
pub fn binary_accuracy(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    check_same("binary_accuracy", pred, truth)?;
    let hit = |p: f64, t: f64| (((p > 0.5) as u8 as f64) == t) as u8 as f64;
    Ok(pred.zip_with(truth, hit)?.mean())
}

/// Accuracy of class predictions. `pred` is either class indices shaped
/// like `truth`, or per-class scores with one extra trailing axis.
pub fn categorical_accuracy(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    let classes = if pred.rank() == truth.rank() + 1 && pred.shape().drop_trailing(1) == *truth.shape() {
        let k = pred.dims()[pred.rank() - 1];
        let data = pred
            .data()
            .chunks(k.max(1))
            .map(|row| argmax(row) as f64)
            .collect();
        Tensor::new(truth.shape().clone(), data)?
    } else {
        check_same("categorical_accuracy", pred, truth)?;
        pred.map(f64::round)
    };
    Ok(classes.zip_with(truth, |p, t| (p == t) as u8 as f64)?.mean())
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn softmax_rows(logits: &Tensor) -> Tensor {
    let k = logits.dims().last().copied().unwrap_or(1).max(1);
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for x in row.iter_mut() {
            *x = (*x - m).exp();
            z += *x;
        }
        row.iter_mut().for_each(|x| *x /= z);
    }
    out
}

/// How the point prediction of a predictive is computed from one forward pass.
enum Prediction {
    Mean(NodeId),
    ClassProbs(NodeId),
    Draw(NodeId),
}

/// Evaluate `metrics` for a posterior predictive against `truth`.
///
/// Point predictions are the predictive mean averaged over `n_samples`
/// forward passes (each pass redraws the posterior), falling back to the
/// average of predictive draws when the family has no closed-form mean.
/// Categorical predictives predict through averaged class probabilities.
/// `log_likelihood` averages over passes the per-datapoint mean log density.
pub fn evaluate(
    program: &mut Program,
    metrics: &[&str],
    predictive: Rv,
    truth: &Tensor,
    feed: &Feed,
    n_samples: usize,
    rng: &mut RngState,
) -> Result<Vec<(Metric, f64)>> {
    let metrics = metrics.iter().map(|m| m.parse()).collect::<Result<Vec<Metric>>>()?;
    if n_samples == 0 {
        return Err(Error::InvalidParam("n_samples must be at least 1".into()));
    }
    let info = program.info(predictive).clone();
    let want = info.value_shape();
    if !want.accepts(truth.shape()) {
        return Err(Error::shape("evaluate truth", &want, truth.shape()));
    }

    let mut fetches = Vec::new();
    let prediction = if metrics.iter().any(|m| m.uses_predictions()) {
        let p = match info.family {
            Family::Categorical => Prediction::ClassProbs(info.params[0]),
            _ => match program.mean(predictive) {
                Ok(m) => Prediction::Mean(m),
                Err(Error::MeanUndefined(_)) => Prediction::Draw(predictive.node),
                Err(e) => return Err(e),
            },
        };
        let node = match p {
            Prediction::Mean(n) | Prediction::ClassProbs(n) | Prediction::Draw(n) => n,
        };
        fetches.push(node);
        Some(p)
    } else {
        None
    };
    let log_lik = if metrics.contains(&Metric::LogLikelihood) {
        let value = program.graph.constant(truth.clone());
        let lp = program.log_prob(predictive, value)?;
        let m = program.graph.mean(lp)?;
        fetches.push(m);
        true
    } else {
        false
    };

    let mut pred_sum: Option<Tensor> = None;
    let mut ll_sum = 0.0;
    for _ in 0..n_samples {
        let out = program.graph.eval_many(&fetches, feed, rng)?;
        let mut it = out.into_iter();
        if let Some(p) = &prediction {
            let mut t = it.next().unwrap();
            if matches!(p, Prediction::ClassProbs(_)) {
                t = softmax_rows(&t);
            }
            pred_sum = Some(match pred_sum {
                None => t,
                Some(s) => s.add(&t)?,
            });
        }
        if log_lik {
            ll_sum += it.next().unwrap().item()?;
        }
    }
    let pred = pred_sum.map(|s| s.scale(1.0 / n_samples as f64));

    metrics
        .into_iter()
        .map(|m| {
            let v = match m {
                Metric::LogLikelihood => ll_sum / n_samples as f64,
                _ => {
                    let p = pred.as_ref().unwrap();
                    match m {
                        Metric::MeanSquaredError => mean_squared_error(p, truth)?,
                        Metric::MeanAbsoluteError => mean_absolute_error(p, truth)?,
                        Metric::BinaryAccuracy => binary_accuracy(p, truth)?,
                        _ => categorical_accuracy(p, truth)?,
                    }
                }
            };
            Ok((m, v))
        })
        .collect()
}

/// Outcome of a posterior predictive check.
#[derive(Clone, Debug, PartialEq)]
pub struct PpcResult {
    /// Discrepancy on the observed data, averaged over replications. It
    /// only varies between replications when the statistic reads latents.
    pub t_obs: f64,
    pub t_obs_reps: Vec<f64>,
    pub t_reps: Vec<f64>,
    /// Fraction of replications with `t_rep >= t_obs`.
    pub p_value: f64,
}

/// Values handed to a discrepancy: one tensor per replicated (or observed)
/// variable and one per latent variable, keyed by the prior.
pub type Values = BTreeMap<Rv, Tensor>;

/// Posterior predictive check of the discrepancy `stat`.
///
/// `data` pairs each predictive variable (typically a copy of a model
/// variable with priors swapped for posteriors) with its observed value.
/// `latent` pairs priors with posteriors whose draws are passed to `stat`.
/// Every replication draws the posteriors once, sharing that draw between
/// the replicated data and the latents.
pub fn ppc(
    program: &Program,
    mut stat: impl FnMut(&Values, &Values) -> Result<Tensor>,
    data: &[(Rv, Tensor)],
    latent: &[(Rv, Rv)],
    feed: &Feed,
    n_rep: usize,
    rng: &mut RngState,
) -> Result<PpcResult> {
    let observed: Values = data.iter().cloned().collect();
    let fetches: Vec<NodeId> = data
        .iter()
        .map(|(x, _)| x.node)
        .chain(latent.iter().map(|(_, q)| q.node))
        .collect();
    let scalar = |t: Tensor| -> Result<f64> {
        if t.numel() == 1 {
            Ok(t.data()[0])
        } else {
            Err(Error::NonScalarStatistic(t.shape().clone()))
        }
    };
    let base = rng.fork();
    let mut t_reps = Vec::with_capacity(n_rep);
    let mut t_obs_reps = Vec::with_capacity(n_rep);
    for r in 0..n_rep {
        let mut stream = base.split(r as u64);
        let mut out = program.graph.eval_many(&fetches, feed, &mut stream)?.into_iter();
        let reps: Values = data.iter().map(|(x, _)| (*x, out.next().unwrap())).collect();
        let zs: Values = latent.iter().map(|(z, _)| (*z, out.next().unwrap())).collect();
        t_reps.push(scalar(stat(&reps, &zs)?)?);
        t_obs_reps.push(scalar(stat(&observed, &zs)?)?);
    }
    let n = n_rep.max(1) as f64;
    let exceed = t_reps.iter().zip(&t_obs_reps).filter(|(r, o)| r >= o).count();
    Ok(PpcResult {
        t_obs: t_obs_reps.iter().sum::<f64>() / n,
        p_value: exceed as f64 / n,
        t_obs_reps,
        t_reps,
    })
}

/// Empirical posterior over the rows of `q` after the first `discard`.
pub fn discard_prefix(program: &mut Program, q: Rv, discard: usize) -> Result<Rv> {
    let info = program.info(q).clone();
    if info.family != Family::Empirical {
        return Err(Error::InvalidParam(format!(
            "discard_prefix needs an Empirical posterior, got `{}`",
            info.family.name()
        )));
    }
    let buf = program.eval(info.params[0], &Feed::new(), &mut RngState::seed(0))?;
    let t = buf.dims()[0];
    if discard >= t {
        return Err(Error::InvalidParam(format!("cannot discard {discard} of {t} samples")));
    }
    let n = buf.shape().drop_leading(1).numel();
    let tail = Tensor::new(buf.shape().drop_leading(1).with_leading(t - discard), buf.data()[discard * n..].to_vec())?;
    let node = program.graph.constant(tail);
    program.empirical(node)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_names_and_aliases() {
        assert_eq!("log_lik".parse::<Metric>().unwrap(), Metric::LogLikelihood);
        assert_eq!("mse".parse::<Metric>().unwrap(), Metric::MeanSquaredError);
        assert_eq!(
            "f1".parse::<Metric>().unwrap_err(),
            Error::MetricUnknown("f1".into())
        );
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
    }

    #[test]
    fn point_metrics() {
        let t = Tensor::vector(vec![1.0, 2.0, 3.0]);
        assert_eq!(mean_squared_error(&t, &t).unwrap(), 0.0);
        let p = Tensor::vector(vec![2.0, 2.0, 1.0]);
        assert!((mean_squared_error(&p, &t).unwrap() - 5.0 / 3.0).abs() < 1e-12);
        assert!((mean_absolute_error(&p, &t).unwrap() - 1.0).abs() < 1e-12);
        let scores = Tensor::matrix(&[vec![0.1, 0.7, 0.2], vec![0.5, 0.2, 0.3]]).unwrap();
        let y = Tensor::vector(vec![1.0, 2.0]);
        assert_eq!(categorical_accuracy(&scores, &y).unwrap(), 0.5);
        assert!(mean_squared_error(&y, &t).is_err());
    }

    #[test]
    fn bernoulli_binary_accuracy() {
        let mut p = Program::new();
        let x = p.bernoulli(Tensor::full([4], 0.9)).unwrap();
        let truth = Tensor::vector(vec![1.0, 1.0, 0.0, 1.0]);
        let out = evaluate(&mut p, &["binary_accuracy"], x, &truth, &Feed::new(), 3, &mut RngState::seed(0)).unwrap();
        assert_eq!(out, vec![(Metric::BinaryAccuracy, 0.75)]);
    }

    #[test]
    fn log_likelihood_is_per_datapoint_mean() {
        let mut p = Program::new();
        let x = p.normal(Tensor::zeros([2]), Tensor::ones([2])).unwrap();
        let truth = Tensor::vector(vec![0.0, 1.0]);
        let out = evaluate(&mut p, &["log_lik"], x, &truth, &Feed::new(), 1, &mut RngState::seed(0)).unwrap();
        let want = -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.25;
        assert!((out[0].1 - want).abs() < 1e-12);
    }

    #[test]
    fn constant_statistic_has_unit_p_value() {
        let mut p = Program::new();
        let x = p.normal(Tensor::zeros([5]), Tensor::ones([5])).unwrap();
        let res = ppc(
            &p,
            |_, _| Ok(Tensor::scalar(3.0)),
            &[(x, Tensor::zeros([5]))],
            &[],
            &Feed::new(),
            20,
            &mut RngState::seed(1),
        )
        .unwrap();
        assert_eq!(res.t_reps, vec![3.0; 20]);
        assert_eq!(res.p_value, 1.0);
    }

    #[test]
    fn non_scalar_statistic_is_rejected() {
        let mut p = Program::new();
        let x = p.normal(Tensor::zeros([5]), Tensor::ones([5])).unwrap();
        let err = ppc(
            &p,
            |v, _| Ok(v.values().next().unwrap().clone()),
            &[(x, Tensor::zeros([5]))],
            &[],
            &Feed::new(),
            2,
            &mut RngState::seed(1),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonScalarStatistic(_)));
    }

    #[test]
    fn discard_prefix_keeps_tail() {
        let mut p = Program::new();
        let q = p.empirical(Tensor::vector(vec![9.0, 9.0, 1.0, 2.0])).unwrap();
        let tail = discard_prefix(&mut p, q, 2).unwrap();
        let m = p.mean(tail).unwrap();
        assert_eq!(p.eval(m, &Feed::new(), &mut RngState::seed(0)).unwrap().item().unwrap(), 1.5);
    }
}
