//! Particle simulation of McKean-Vlasov SDEs with measure-dependent
//! coefficients, a tamed Euler-Maruyama stepper, and harnesses that measure
//! the propagation-of-chaos rate empirically.
//!
//! Modules: [`model`] (coefficients, scenarios), [`engine`] (noise and time
//! stepping), [`metrics`] (coupled errors, rate fits), [`harness`] (studies),
//! [`cli`] (config files and result emission).

pub mod cli;
pub mod engine;
pub mod harness;
pub mod metrics;
pub mod model;
