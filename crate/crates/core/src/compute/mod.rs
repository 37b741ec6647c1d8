//! Differentiable numeric primitives: a per-utterance tape, LSTM stacks,
//! parameter storage, gradient checking and the checkpoint container.

mod checkpoint;
mod gradcheck;
mod graph;
mod lstm;
mod params;
mod tensor;

pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, relative_error, CoordinateCheck, GradCheckReport};
pub use graph::{Graph, NodeGrads, Var};
pub use lstm::{CellState, LstmLayer, LstmStack, StackState};
pub use params::{Gradients, ParamId, ParameterStore};
pub use tensor::Tensor;

/// Single affine readout `W x + b` (used for scalar heads and projections).
#[derive(Debug, Clone)]
pub struct Affine {
    pub w: ParamId,
    pub b: ParamId,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Affine {
    pub fn new<R: rand::Rng>(
        store: &mut ParameterStore,
        name: &str,
        input_dim: usize,
        output_dim: usize,
        rng: &mut R,
    ) -> crate::Result<Self> {
        let w = store.register_uniform(format!("{name}.w"), output_dim, input_dim, input_dim, rng)?;
        let b = store.register(format!("{name}.b"), Tensor::vector(vec![0.0; output_dim]))?;
        Ok(Affine {
            w,
            b,
            input_dim,
            output_dim,
        })
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> Var {
        let wx = g.matvec(self.w, x, 0);
        let b = g.param(self.b);
        g.add(wx, b)
    }
}
