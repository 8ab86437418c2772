//! Solvers for evolutionarily stable Stackelberg equilibria.
//!
//! * [`game`], [`ess`], [`replicator`]: discrete follower games, ESS checks and
//!   replicator dynamics.
//! * [`discrete`]: support enumeration for optimistic SESS in normal-form games.
//! * [`cancer`]: the continuous-trait cancer treatment model, its Stackelberg
//!   baseline and the generate-and-certify OSESS driver.
//! * [`nlp`]: the multistart augmented-Lagrangian solver behind both.
//! * [`io`]: file formats and reports used by the `sess` binary.

pub mod cancer;
pub mod discrete;
pub mod error;
pub mod ess;
pub mod game;
pub mod io;
pub mod nlp;
pub mod replicator;

pub use error::{Error, Result};
pub use game::{DiscreteSEG, InducedMatrix, SimplexVector, ToleranceSet};
