//! Desk-scale laboratory for online Direct Preference Optimization.
//!
//! Linear softmax policies over finite response sets stand in for language
//! models, parametric Bradley–Terry judges stand in for reward models, and a
//! synthetic universe supplies prompts, a latent true reward and capability
//! probes. On top of that the crate runs the online DPO loop with either
//! uniform-random or uncertainty-based (APL) pair selection under a matched
//! labelling budget, and measures proxy win-rate against capability drift.
//!
//! Module map:
//!
//! * [`universe`]: synthetic prompts, features, true reward, probe answers
//! * [`policy`]: softmax policy, log-probs, sampling, gradients, entropy
//! * [`dpo`]: DPO loss and gradient, implicit reward, optimiser, schedule
//! * [`judges`]: proxy preference oracles with a misalignment knob
//! * [`selection`]: candidates, pair pools, Random and APL selectors, op counts
//! * [`trainer`]: SFT initialisation and the online loop
//! * [`eval`]: win-rate, probe accuracy, capability delta, collapse
//! * [`harness`]: config files, sweeps, run directories, aggregation, reports

pub mod dpo;
pub mod error;
pub mod eval;
pub mod harness;
pub mod judges;
pub mod linalg;
pub mod policy;
pub mod selection;
pub mod stats;
pub mod streams;
pub mod trainer;
pub mod universe;

pub use error::{Error, Result};
