//! The mini-CNN: a trunk of conv/pool/dense layers feeding one softmax head
//! per attribute group, with hand-written backpropagation.

mod backward;
mod checkpoint;
mod forward;
mod gradcheck;
mod loss;
mod params;
mod sgd;
mod spec;

pub use backward::{
    backward, backward_accumulate, backward_from_layer, backward_with, BackwardOptions, Gradients,
    HeadGrad,
};
pub use checkpoint::{checkpoint_bytes, read_checkpoint, write_checkpoint};
pub use forward::{forward, forward_to_layer, softmax, ForwardTrace, Mode};
pub use gradcheck::{gradient_check, relative_error, Coordinate, GradCheckReport};
pub use loss::{multihead_loss, MultiheadLoss};
pub use params::{FreezeMask, LayerParams, Parameters};
pub use sgd::sgd_step;
pub use spec::{heads_for, ArchitectureOptions, HeadSpec, LayerSpec, NetworkSpec};
