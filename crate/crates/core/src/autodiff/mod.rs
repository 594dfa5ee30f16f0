//! Reverse-mode automatic differentiation over a Wengert-list tape.
//!
//! Values on the tape are dynamic-dimension `f64` arrays (scalars are
//! 1-element vectors). The op set is the minimum needed by the recurrent
//! encoder-decoder and the sequence losses. Graph construction and backward
//! are single-threaded per loss evaluation; independent evaluations may run
//! concurrently against read-only parameters.

mod check;
mod optim;
mod params;
mod tape;

pub use check::finite_diff_check;
pub use optim::AdaDeltaState;
pub use params::{BoundParams, Params};
pub use tape::{logsumexp, Gradients, Tape, Var};
