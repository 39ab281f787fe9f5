use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd { step_size: f64 },
    Adam { step_size: f64, beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn adam(step_size: f64) -> Self {
        OptimizerKind::Adam {
            step_size,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn sgd(step_size: f64) -> Self {
        OptimizerKind::Sgd { step_size }
    }

    pub fn step_size(&self) -> f64 {
        match self {
            OptimizerKind::Sgd { step_size } | OptimizerKind::Adam { step_size, .. } => *step_size,
        }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::adam(0.01)
    }
}

/// First-order optimizer state over a set of parameters.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: BTreeMap<NodeId, Vec<f64>>,
    v: BTreeMap<NodeId, Vec<f64>>,
    iteration: usize,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Result<Self> {
        if !(kind.step_size() > 0.0) {
            return Err(Error::InvalidParam(format!(
                "step size must be positive, got {}",
                kind.step_size()
            )));
        }
        Ok(Optimizer {
            kind,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Descend one step along `grads` and write the new values into `graph`.
    pub fn apply(&mut self, graph: &mut Graph, grads: &[(NodeId, Tensor)]) -> Result<()> {
        self.iteration += 1;
        let t = self.iteration as f64;
        for (id, g) in grads {
            let mut value = graph.value(*id)?.clone();
            match self.kind {
                OptimizerKind::Sgd { step_size } => {
                    for (x, d) in value.data_mut().iter_mut().zip(g.data()) {
                        *x -= step_size * d;
                    }
                }
                OptimizerKind::Adam {
                    step_size,
                    beta1,
                    beta2,
                    epsilon,
                } => {
                    let n = g.numel();
                    let m = self.m.entry(*id).or_insert_with(|| vec![0.0; n]);
                    let v = self.v.entry(*id).or_insert_with(|| vec![0.0; n]);
                    let c1 = 1.0 - beta1.powf(t);
                    let c2 = 1.0 - beta2.powf(t);
                    for (((x, d), mi), vi) in value.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = beta1 * *mi + (1.0 - beta1) * d;
                        *vi = beta2 * *vi + (1.0 - beta2) * d * d;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *x -= step_size * mhat / (vhat.sqrt() + epsilon);
                    }
                }
            }
            graph.assign(*id, value)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_step_size() {
        let mut g = Graph::new();
        let w = g.parameter(Tensor::vector(vec![1.0, -1.0]));
        let mut opt = Optimizer::new(OptimizerKind::adam(0.01)).unwrap();
        opt.apply(&mut g, &[(w, Tensor::vector(vec![3.0, -0.2]))]).unwrap();
        let v = g.value(w).unwrap().data().to_vec();
        // Bias correction makes the first update exactly step_size * sign(g).
        assert!((v[0] - 0.99).abs() < 1e-9);
        assert!((v[1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn adam_matches_reference_recursion() {
        let mut g = Graph::new();
        let w = g.parameter(0.5);
        let mut opt = Optimizer::new(OptimizerKind::adam(0.1)).unwrap();
        let (mut x, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for t in 1..=20 {
            let grad = 2.0 * x - 1.0;
            opt.apply(&mut g, &[(w, Tensor::scalar(grad))]).unwrap();
            m = 0.9 * m + 0.1 * grad;
            v = 0.999 * v + 0.001 * grad * grad;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((g.value(w).unwrap().item().unwrap() - x).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_positive_step() {
        assert!(Optimizer::new(OptimizerKind::sgd(0.0)).is_err());
    }
}
