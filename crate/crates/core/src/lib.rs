//! Simulation and analysis of PAM4 intensity-modulated links impaired by a
//! single optical reflection (multipath interference).
//!
//! * [`model`]: PAM4 alphabet, Gray labelling, link configuration.
//! * [`channel`]: square-law synthesis with Wiener phase noise and AWGN.
//! * [`analytic`]: closed-form achievable BER under ideal beat cancellation.
//! * [`genie`]: Monte Carlo of the same bound.
//! * [`equalizer`]: two-stage FFE with common and level-scaled bias tracking.
//! * [`sweep`]: parameter grids, parallel execution, CSV/JSON tables and
//!   simulation-vs-analytic comparison.

pub mod analytic;
pub mod channel;
pub mod equalizer;
pub mod error;
pub mod genie;
pub mod model;
pub mod rng;
pub mod sweep;

pub use error::{Error, Result};
pub use model::{LinkConfig, SymbolFrame};
