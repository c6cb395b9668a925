//! Simulation of polarization-basis tracking for polarization-encoded BB84.
//!
//! Bob keeps his two measurement bases aligned with Alice's by feeding the
//! sifted bits that are revealed anyway during error estimation into a
//! dither-gradient controller driving a four-squeezer polarization
//! controller in each basis arm.
//!
//! - [`poincare`]: Stokes vectors and quaternion rotations.
//! - [`optics`]: squeezer controller, fiber channel and link budget models.
//! - [`photon_sim`]: Monte Carlo detection, measurement matrix, error rate.
//! - [`feedback`]: the feedback signal and the tracking controller.
//! - [`stats`]: finite-sample accuracy of the revealed-bit estimate.
//! - [`series`] and [`harness`]: run records, scenarios, presets and output.

pub mod error;
pub mod feedback;
pub mod harness;
pub mod optics;
pub mod photon_sim;
pub mod poincare;
pub mod series;
pub mod stats;

pub use error::{Error, Result};
pub use photon_sim::Basis;
pub use poincare::{Rotation, StokesVector};
