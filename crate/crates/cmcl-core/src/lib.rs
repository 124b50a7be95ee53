//! Ensembles of small feedforward classifiers trained under independent
//! ensemble (IE), multiple choice learning (MCL), and confident multiple
//! choice learning (CMCL) objectives, with stochastic feature sharing,
//! exact and stochastic-label KL gradients, and the evaluation metrics that
//! go with them (oracle error, top-1 error from averaged probabilities,
//! predictive entropy, class-wise accuracy).
//!
//! Everything runs in `f64` on a single-threaded deterministic path;
//! analytic gradients are verifiable against central finite differences via
//! [`gradcheck`].

pub mod checkpoint;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod seeds;

pub use error::{Error, Result};
