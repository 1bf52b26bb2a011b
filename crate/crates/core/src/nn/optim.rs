use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    SgdMomentum { momentum: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn sgd_momentum() -> Self {
        OptimizerKind::SgdMomentum { momentum: 0.9 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Adam { .. } => "adam",
            OptimizerKind::SgdMomentum { .. } => "sgd-momentum",
        }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::adam()
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "adam" => Ok(Self::adam()),
            "sgd" | "sgd-momentum" => Ok(Self::sgd_momentum()),
            other => Err(crate::Error::invalid(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Optimizer state for one parameter list. Moment buffers are kept in
/// `f64` regardless of parameter precision.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new<T: Scalar>(kind: OptimizerKind, lr: f64, params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.len()]).collect::<Vec<_>>();
        let second = match kind {
            OptimizerKind::Adam { .. } => zeros(),
            OptimizerKind::SgdMomentum { .. } => Vec::new(),
        };
        Self { kind, lr, step: 0, first: zeros(), second }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update with `grads` aligned to `params`.
    pub fn step<T: Scalar>(&mut self, params: &mut [Tensor<T>], grads: &[Vec<T>]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        self.step += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for (j, (w, &gj)) in p.values.iter_mut().zip(g).enumerate() {
                        let gj = gj.f64();
                        m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                        let update = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                        *w = T::of(w.f64() - update);
                    }
                }
            }
            OptimizerKind::SgdMomentum { momentum } => {
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let vel = &mut self.first[i];
                    for (j, (w, &gj)) in p.values.iter_mut().zip(g).enumerate() {
                        vel[j] = momentum * vel[j] + gj.f64();
                        *w = T::of(w.f64() - lr * vel[j]);
                    }
                }
            }
        }
    }
}
