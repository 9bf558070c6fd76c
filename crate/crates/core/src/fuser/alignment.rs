use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::ModelConfig;

/// Which sender layer feeds each receiver layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentMap {
    /// `(receiver_layer, sender_layer)`, receiver layers `0..n` in order.
    pub pairs: Vec<(usize, usize)>,
}

impl AlignmentMap {
    pub fn validate(&self, sender_layers: usize, receiver_layers: usize) -> Result<()> {
        if self.pairs.len() != receiver_layers {
            return Err(Error::Config(format!(
                "alignment covers {} receiver layers, receiver has {receiver_layers}",
                self.pairs.len()
            )));
        }
        for (i, &(r, s)) in self.pairs.iter().enumerate() {
            if r != i || s >= sender_layers {
                return Err(Error::Config(format!("invalid alignment pair ({r}, {s}) at index {i}")));
            }
        }
        Ok(())
    }

    pub fn sender_layer(&self, receiver_layer: usize) -> usize {
        self.pairs[receiver_layer].1
    }
}

/// Bottom-up layer alignment. Receiver layer `r` reads sender layer `r`
/// when the sender is at least as deep; otherwise `floor(r * Ls / Lr)`.
pub fn align_layers(sender: &ModelConfig, receiver: &ModelConfig) -> AlignmentMap {
    let (ls, lr) = (sender.n_layers, receiver.n_layers);
    let pairs = (0..lr).map(|r| (r, if ls >= lr { r } else { r * ls / lr })).collect();
    AlignmentMap { pairs }
}
