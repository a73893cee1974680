//! Hierarchical Fisher-Wright system with a layered seed-bank.
//!
//! Colonies sit on the truncated hierarchical group of order `N`. Each colony
//! carries an active type frequency `x` and dormant frequencies `y_0..y_k`,
//! one per seed-bank colour. The crate provides:
//!
//! * [`hiergeo`]: addresses, the migration kernel and its time-t transition law;
//! * [`params`]: model parameters, derived constants, regime classification
//!   and the clustering coefficients `A_n`;
//! * [`forward`]: Euler-type simulation of the interacting SDE system;
//! * [`dual`]: the block-counting coalescent and moment duality;
//! * [`renorm`]: effective-process equilibria, the renormalisation map and
//!   its orbit, the interaction chain.
//!
//! Randomness always comes from an explicit caller-owned stream, see [`rng`].

pub mod ctmc;
pub mod diffusion;
pub mod dual;
pub mod error;
pub mod forward;
pub mod hiergeo;
pub mod params;
pub mod renorm;
pub mod rng;
pub mod stats;

pub use diffusion::{DiffusionFn, GridFunction};
pub use error::{Error, Result};
