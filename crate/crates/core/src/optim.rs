//! First-order parameter updates used by the toy optimization and the
//! architecture search.
//!
//! [`Optimizer::ascend`] moves the parameters along the supplied direction;
//! callers that minimize pass the negated gradient.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self::Adam { lr, beta1, beta2, eps: 1e-8 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sgd { .. } => "sgd",
            Self::Adam { .. } => "adam",
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            Self::Sgd { lr } | Self::Adam { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::InvalidParameter(format!("step size must be positive, got {lr}")));
        }
        if let Self::Adam { beta1, beta2, eps, .. } = *self {
            for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
                if !(0.0..1.0).contains(&b) {
                    return Err(Error::InvalidParameter(format!("{name} must lie in [0, 1), got {b}")));
                }
            }
            if !(eps > 0.0) {
                return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
            }
        }
        Ok(())
    }
}

/// Optimizer state for a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, len: usize) -> Result<Self> {
        kind.validate()?;
        Ok(Self { kind, m: vec![0.0; len], v: vec![0.0; len], t: 0 })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// `params += update(direction)`.
    pub fn ascend(&mut self, params: &mut [f64], direction: &[f64]) {
        assert_eq!(params.len(), direction.len());
        assert_eq!(params.len(), self.m.len());
        match self.kind {
            OptimizerKind::Sgd { lr } => {
                for (x, g) in params.iter_mut().zip(direction) {
                    *x += lr * g;
                }
            }
            OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                self.t = self.t.saturating_add(1);
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for k in 0..params.len() {
                    let g = direction[k];
                    self.m[k] = beta1 * self.m[k] + (1.0 - beta1) * g;
                    self.v[k] = beta2 * self.v[k] + (1.0 - beta2) * g * g;
                    params[k] += lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + eps);
                }
            }
        }
    }

    /// Like [`Optimizer::ascend`] but steps against the direction.
    pub fn descend(&mut self, params: &mut [f64], gradient: &[f64]) {
        let neg: Vec<f64> = gradient.iter().map(|g| -g).collect();
        self.ascend(params, &neg);
    }
}
