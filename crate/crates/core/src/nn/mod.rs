//! Dense-network substrate: feed-forward networks, reverse-mode gradients
//! and the adaptive-moment optimizer.

mod adam;
pub mod gradcheck;
mod mlp;

pub use adam::{AdamState, DEFAULT_LEARNING_RATE};
pub use mlp::{param_count_for, Activation, Mlp, Tape};

use crate::error::Result;

/// A network together with its gradient buffer and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub net: Mlp,
    pub grad: Vec<f64>,
    pub adam: AdamState,
}

impl ParamStore {
    pub fn new(net: Mlp, learning_rate: f64) -> Self {
        let n = net.param_count();
        Self {
            net,
            grad: vec![0.0; n],
            adam: AdamState::new(n, learning_rate),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Applies the accumulated gradient and clears it.
    pub fn apply(&mut self, block: &str) -> Result<()> {
        let grad = std::mem::take(&mut self.grad);
        let res = self.adam.step(block, self.net.params_mut(), &grad);
        self.grad = grad;
        self.zero_grad();
        res
    }
}
