//! Dense matrix arithmetic, seeded RNG, and the reverse-mode expression
//! graph every trainable module builds on.

mod eigh;
mod gradcheck;
mod matrix;
mod rng;
mod tape;

pub use eigh::eigh;
pub use gradcheck::gradient_check;
pub use matrix::Matrix;
pub use rng::Rng;
pub use tape::{NodeId, Tape, LOG_FLOOR};
