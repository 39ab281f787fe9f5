//! Normalization and shape-lattice checks for the built-in families.

use std::f64::consts::PI;

use probgraph::{Distribution, Family, Result, RngState, Shape, Tensor};

/// Sum of `exp(log_prob)` over the support of a scalar-batch discrete
/// distribution. Poisson is summed until the remaining tail is below
/// `1e-16` by the ratio bound.
pub fn discrete_total(d: &Distribution) -> Result<f64> {
    let support: Vec<f64> = match d.family() {
        Family::Bernoulli | Family::BernoulliLogits => vec![0.0, 1.0],
        Family::Categorical => (0..d.params()[0].numel()).map(|k| k as f64).collect(),
        Family::Poisson => {
            let lam = d.params()[0].item()?;
            let mut k = 0usize;
            let mut p = (-lam).exp();
            let mut ks = Vec::new();
            loop {
                ks.push(k as f64);
                k += 1;
                p *= lam / k as f64;
                let ratio = lam / (k + 1) as f64;
                if (k as f64) > lam && ratio < 1.0 && p / (1.0 - ratio) < 1e-16 {
                    break;
                }
            }
            ks
        }
        other => panic!("{other} is not discrete"),
    };
    let lp = d.log_prob(&Tensor::vector(support))?;
    Ok(neumaier(lp.data().iter().map(|v| v.exp())))
}

/// Compensated sum.
pub fn neumaier(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    s + c
}

/// Tanh-sinh quadrature of `exp(log_prob)` over `(lo, hi)`. Nodes that
/// round onto an endpoint are dropped.
pub fn tanh_sinh(d: &Distribution, lo: f64, hi: f64) -> Result<f64> {
    let h = 1.0 / 128.0;
    let (mut xs, mut ws) = (Vec::new(), Vec::new());
    let mut k = -(6.0 / h) as i64;
    while (k as f64) * h <= 6.0 {
        let t = k as f64 * h;
        let u = 0.5 * PI * t.sinh();
        let s = 1.0 / (1.0 + (-u).exp());
        let x = lo + (hi - lo) * s;
        let w = (hi - lo) * s * (1.0 - s) * 0.5 * PI * t.cosh() * h;
        if x > lo && x < hi && w > 0.0 {
            xs.push(x);
            ws.push(w);
        }
        k += 1;
    }
    let lp = d.log_prob(&Tensor::vector(xs))?;
    Ok(neumaier(lp.data().iter().zip(&ws).map(|(l, w)| l.exp() * w)))
}

/// Integral of the density of a continuous scalar distribution over its
/// support. Unbounded supports are truncated where the tail is below 1e-30.
pub fn continuous_total(d: &Distribution) -> Result<f64> {
    let p = d.params();
    match d.family() {
        Family::Normal => {
            let (mu, sigma) = (p[0].item()?, p[1].item()?);
            tanh_sinh(d, mu - 12.0 * sigma, mu + 12.0 * sigma)
        }
        Family::Exponential => tanh_sinh(d, 0.0, 70.0 / p[0].item()?),
        Family::Beta | Family::LogitNormal => tanh_sinh(d, 0.0, 1.0),
        other => panic!("no quadrature rule for {other}"),
    }
}

/// Scalar distributions exercised by the normalization checks.
pub fn discrete_grid() -> Result<Vec<Distribution>> {
    let mut out = Vec::new();
    for p in [0.0, 0.1, 0.5, 0.93, 1.0] {
        out.push(Distribution::bernoulli(p)?);
    }
    for l in [-30.0, -2.0, 0.0, 4.0] {
        out.push(Distribution::new(Family::BernoulliLogits, vec![Tensor::scalar(l)])?);
    }
    for k in [1, 2, 5, 10] {
        let logits: Vec<f64> = (0..k).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.9).collect();
        out.push(Distribution::categorical(Tensor::vector(logits))?);
    }
    for lam in [0.0, 0.3, 1.0, 7.5, 40.0] {
        out.push(Distribution::poisson(lam)?);
    }
    Ok(out)
}

pub fn continuous_grid() -> Result<Vec<Distribution>> {
    let mut out = Vec::new();
    for (mu, sigma) in [(0.0, 1.0), (-3.0, 0.2), (5.0, 4.0)] {
        out.push(Distribution::normal(mu, sigma)?);
    }
    for (a, b) in [(1.0, 1.0), (3.0, 9.0), (0.5, 0.5), (2.5, 0.7), (20.0, 3.0)] {
        out.push(Distribution::beta(a, b)?);
    }
    for lam in [0.2, 1.0, 15.0] {
        out.push(Distribution::exponential(lam)?);
    }
    for (mu, sigma) in [(0.0, 1.0), (1.5, 0.5)] {
        out.push(Distribution::new(Family::LogitNormal, vec![Tensor::scalar(mu), Tensor::scalar(sigma)])?);
    }
    Ok(out)
}

fn full(dims: &[usize], v: f64) -> Tensor {
    Tensor::full(Shape::new(dims.to_vec()), v)
}

/// A distribution of `family` with the given batch shape (and a length-3
/// event or category axis where the family has one).
pub fn with_batch(family: &Family, batch: &[usize]) -> Result<Distribution> {
    let mut vec3 = batch.to_vec();
    vec3.push(3);
    let params = match family {
        Family::Normal | Family::LogitNormal => vec![full(batch, 0.3), full(batch, 1.2)],
        Family::Beta => vec![full(batch, 2.0), full(batch, 3.0)],
        Family::Bernoulli => vec![full(batch, 0.4)],
        Family::BernoulliLogits => vec![full(batch, -0.5)],
        Family::Exponential | Family::Poisson => vec![full(batch, 2.0)],
        Family::Categorical => vec![full(&vec3, 0.1)],
        Family::Dirichlet => vec![full(&vec3, 1.5)],
        Family::MultivariateNormalDiag => vec![full(&vec3, 0.0), full(&vec3, 2.0)],
        Family::PointMass => vec![full(batch, 0.7)],
        Family::Empirical => {
            let mut s = vec![4];
            s.extend_from_slice(batch);
            let n: usize = s.iter().product();
            vec![Tensor::new(Shape::new(s), (0..n).map(|i| i as f64).collect())?]
        }
        Family::Custom(_) => unreachable!("custom families carry their own shapes"),
    };
    Distribution::new(family.clone(), params)
}

pub fn builtin_families() -> Vec<Family> {
    vec![
        Family::Normal,
        Family::Bernoulli,
        Family::BernoulliLogits,
        Family::Beta,
        Family::Categorical,
        Family::Exponential,
        Family::Dirichlet,
        Family::MultivariateNormalDiag,
        Family::PointMass,
        Family::Empirical,
        Family::Poisson,
        Family::LogitNormal,
    ]
}

/// Check `sample_n` returns `(n,) + batch + event` and that `log_prob` of the
/// draws has shape `(n,) + batch` with finite entries, for every built-in
/// family over a lattice of `n` and batch shapes. Returns the number of
/// combinations checked, or a description of the first failure.
pub fn shape_lattice(rng: &mut RngState) -> std::result::Result<usize, String> {
    let batches: [&[usize]; 4] = [&[], &[2], &[3, 1], &[2, 3]];
    let mut checked = 0;
    for family in builtin_families() {
        for batch in batches {
            let d = with_batch(&family, batch).map_err(|e| format!("{family} batch {batch:?}: {e}"))?;
            if d.batch_shape().dims() != batch {
                return Err(format!("{family}: batch {} != {batch:?}", d.batch_shape()));
            }
            for n in [1, 2, 5] {
                let x = d.sample_n(n, rng).map_err(|e| format!("{family}: {e}"))?;
                let expect = d.batch_shape().with_leading(n).concat(d.event_shape());
                if x.shape() != &expect {
                    return Err(format!("{family} n={n} batch {batch:?}: sample {} != {expect}", x.shape()));
                }
                let lp = d.log_prob(&x).map_err(|e| format!("{family}: {e}"))?;
                let expect_lp = d.batch_shape().with_leading(n);
                if lp.shape() != &expect_lp {
                    return Err(format!("{family} n={n} batch {batch:?}: log_prob {} != {expect_lp}", lp.shape()));
                }
                if !lp.data().iter().all(|v| v.is_finite()) && !matches!(family, Family::Empirical) {
                    return Err(format!("{family}: non-finite log_prob of its own draws"));
                }
                checked += 1;
            }
        }
    }
    Ok(checked)
}
