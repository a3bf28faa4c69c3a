use crate::error::Result;
use crate::linalg::Vector;

/// A trainable map from one model's weights (or features derived from
/// them) to an output vector.
///
/// Parameters are exposed as a fixed, ordered list of flat tensors so a
/// single optimizer can drive every architecture.
pub trait Metanet: Clone + Send + Sync {
    type Input: Sync;

    fn output_dim(&self) -> usize;

    fn forward(&self, x: &Self::Input) -> Result<Vector>;

    /// Gradient of the loss w.r.t. every parameter tensor, given `dL/dy`,
    /// in the order of [`Metanet::tensors`].
    fn gradients(&self, x: &Self::Input, upstream: &[f64]) -> Result<Vec<Vec<f64>>>;

    fn tensors(&self) -> Vec<(String, &[f64])>;

    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}
