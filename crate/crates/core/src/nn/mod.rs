//! Minimal dense-tensor engine: exactly the layers the LCNN needs, their
//! backward passes, Adam, and a finite-difference checker.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod ops;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use ops::{
    conv2d, conv2d_backward, dropout, fully_connected, fully_connected_backward, maxpool2d,
    mfm_halves, mfm_thirds, softmax_cross_entropy, Conv2dGrads, DropoutMask, FcGrads, Padding,
    Routing,
};
pub use tensor::{Scalar, Tensor};
