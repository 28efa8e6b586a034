//! SGD with momentum and coupled weight decay.
//!
//! Update rule per parameter tensor:
//!
//! ```text
//! v <- momentum * v + grad + weight_decay * param
//! param <- param - lr * v
//! ```

use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::param::{ParamVisitor, Parametrized};
use crate::nn::{c, Scalar};

/// The update kernel on one tensor; exposed for direct arithmetic tests.
pub fn sgd_update<F: Scalar>(
    mut param: ArrayViewMutD<'_, F>,
    grad: ArrayViewD<'_, F>,
    velocity: &mut ArrayD<F>,
    lr: F,
    momentum: F,
    weight_decay: F,
) {
    ndarray::Zip::from(&mut param)
        .and(velocity)
        .and(&grad)
        .for_each(|p, v, &g| {
            *v = momentum * *v + g + weight_decay * *p;
            *p -= lr * *v;
        });
}

/// Momentum buffers aligned with the network's parameter traversal order.
#[derive(Debug, Clone, Default)]
pub struct SgdState<F: Scalar> {
    pub velocity: Vec<(String, ArrayD<F>)>,
}

impl<F: Scalar> SgdState<F> {
    pub fn new() -> Self {
        SgdState {
            velocity: Vec::new(),
        }
    }

    /// Applies one optimizer step over every parameter. All gradients are
    /// validated before anything mutates, so a non-finite gradient leaves
    /// the parameters untouched.
    pub fn step(&mut self, net: &mut dyn Parametrized<F>, cfg: &TrainConfig) -> Result<()> {
        struct Check {
            bad: Option<String>,
        }
        impl<F: Scalar> ParamVisitor<F> for Check {
            fn visit(&mut self, name: &str, _: ArrayViewMutD<'_, F>, grad: ArrayViewMutD<'_, F>) {
                if self.bad.is_none() && !grad.iter().all(|v| v.is_finite()) {
                    self.bad = Some(name.to_string());
                }
            }
        }
        let mut check = Check { bad: None };
        net.visit_params("", &mut check);
        if let Some(name) = check.bad {
            return Err(Error::Numeric(format!(
                "non-finite gradient for parameter {name}"
            )));
        }

        struct Apply<'a, F: Scalar> {
            state: &'a mut SgdState<F>,
            index: usize,
            lr: F,
            momentum: F,
            weight_decay: F,
            error: Option<Error>,
        }
        impl<F: Scalar> ParamVisitor<F> for Apply<'_, F> {
            fn visit(&mut self, name: &str, param: ArrayViewMutD<'_, F>, grad: ArrayViewMutD<'_, F>) {
                if self.error.is_some() {
                    return;
                }
                if self.index == self.state.velocity.len() {
                    self.state
                        .velocity
                        .push((name.to_string(), ArrayD::zeros(grad.raw_dim())));
                }
                let Some((vname, v)) = self.state.velocity.get_mut(self.index) else {
                    self.error = Some(Error::State(format!(
                        "optimizer state has {} entries but parameter {name} follows",
                        self.index
                    )));
                    return;
                };
                if vname != name || v.shape() != param.shape() {
                    self.error = Some(Error::State(format!(
                        "optimizer state entry {} is {vname:?} {:?}, parameter is {name:?} {:?}",
                        self.index,
                        v.shape(),
                        param.shape()
                    )));
                    return;
                }
                sgd_update(param, grad.view(), v, self.lr, self.momentum, self.weight_decay);
                self.index += 1;
            }
        }
        let mut apply = Apply {
            state: self,
            index: 0,
            lr: c(cfg.learning_rate),
            momentum: c(cfg.momentum),
            weight_decay: c(cfg.weight_decay),
            error: None,
        };
        net.visit_params("", &mut apply);
        let seen = apply.index;
        if let Some(e) = apply.error {
            return Err(e);
        }
        if seen != self.velocity.len() {
            return Err(Error::State(format!(
                "optimizer state has {} entries but the network exposes {seen} parameters",
                self.velocity.len()
            )));
        }
        Ok(())
    }
}
