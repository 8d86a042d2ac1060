//! Numerical core: scalar abstraction, reverse-mode tape, forward duals and
//! fully connected networks.

pub mod dual;
pub mod mlp;
pub mod real;
pub mod tape;

pub use dual::Dual;
pub use mlp::{mixed_grad, Activation, FinalActivation, Layer, Mlp, MlpParams, MlpSpec, TapeMlp};
pub use real::{sigmoid, small, softplus, Real};
pub use tape::{Tape, Var};
