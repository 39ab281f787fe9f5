use std::collections::BTreeMap;

use probgraph::{Feed, Program, RngState, Tensor};
use proptest::prelude::*;

#[test]
fn ancestral_draws_match_prior_predictive() {
    let mut p = Program::new();
    let theta = p.beta(1.0, 1.0).unwrap();
    let ones = p.graph.constant(Tensor::ones([10]));
    let probs = p.graph.mul(ones, theta).unwrap();
    let x = p.bernoulli(probs).unwrap();
    let mut rng = RngState::seed(21);
    let mut hits = 0.0;
    let draws = 10_000;
    for _ in 0..draws {
        hits += p.eval(x, &Feed::new(), &mut rng).unwrap().data()[0];
    }
    let freq = hits / draws as f64;
    assert!((freq - 0.5).abs() < 0.02, "{freq}");
}

#[test]
fn copies_draw_independently() {
    let mut p = Program::new();
    let z = p.normal(0.0, 1.0).unwrap();
    let z2 = p.copy(z, &[]).unwrap();
    let mut rng = RngState::seed(5);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for _ in 0..1000 {
        let v = p.graph.eval_many(&[z.node, z2.node], &Feed::new(), &mut rng).unwrap();
        a.push(v[0].item().unwrap());
        b.push(v[1].item().unwrap());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(&a), mean(&b));
    let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    let corr = cov / (va * vb).sqrt();
    assert!(corr.abs() < 0.1, "{corr}");
}

#[test]
fn parents_precede_children() {
    let mut p = Program::new();
    let a = p.normal(0.0, 1.0).unwrap();
    let b = p.normal(a, 1.0).unwrap();
    assert!(a.node < b.node);
    assert_eq!(p.parents(b), vec![a]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn log_joint_is_linear_in_scale(s_z in 0.1f64..5.0, s_x in 0.1f64..50.0, z in -2.0f64..2.0, xs in prop::collection::vec(-3.0f64..3.0, 1..8)) {
        let mut p = Program::new();
        let zr = p.normal(0.0, 1.0).unwrap();
        let ones = p.graph.constant(Tensor::ones([xs.len()]));
        let loc = p.graph.mul(ones, zr).unwrap();
        let xr = p.normal(loc, 0.5).unwrap();
        let zv = p.graph.constant(Tensor::scalar(z));
        let xv = p.graph.constant(Tensor::vector(xs.clone()));
        let values = BTreeMap::from([(zr, zv), (xr, xv)]);

        let terms = p.log_joint_terms(&[zr, xr], &values, &BTreeMap::new()).unwrap();
        let scaled = BTreeMap::from([(zr, s_z), (xr, s_x)]);
        let total = p.log_joint(&[zr, xr], &values, &scaled).unwrap();
        let doubled = BTreeMap::from([(zr, s_z), (xr, 2.0 * s_x)]);
        let total2 = p.log_joint(&[zr, xr], &values, &doubled).unwrap();

        let mut rng = RngState::seed(0);
        let v = p.graph.eval_many(&[terms[0], terms[1], total, total2], &Feed::new(), &mut rng).unwrap();
        let (lz, lx) = (v[0].item().unwrap(), v[1].item().unwrap());
        let t = v[2].item().unwrap();
        let t2 = v[3].item().unwrap();
        prop_assert!((t - (s_z * lz + s_x * lx)).abs() <= 1e-9 * (1.0 + t.abs()));
        prop_assert!((t2 - t - s_x * lx).abs() <= 1e-9 * (1.0 + t2.abs()));
    }
}
