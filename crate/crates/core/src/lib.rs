//! Group distributionally robust optimization (GDRO) under per-round sample
//! budgets, played as a two-player game: a weight player runs follow-the-
//! regularized-leader over the group simplex with partial feedback, and a
//! model player runs projected online gradient descent over a Euclidean ball.
//!
//! The crate is organised around the round loop in [`gdro::run`]:
//! the environment reveals a budget, the weight player picks groups to
//! query, the model player takes a gradient step on the anchor group's
//! sample, and both sides fold the round's feedback into their state.

pub mod depround;
pub mod env;
pub mod gdro;
pub mod oco;
pub mod pla;
pub mod types;
