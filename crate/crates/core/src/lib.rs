//! Visuomotor policy learning on the synthetic tabletop, and transfer of the
//! learned perception to new objects in clutter.
//!
//! The stack has four pieces: a trajectory VAE ([`trajgen`]) that reduces
//! control to choosing one latent per episode, a perception + policy pair
//! trained with bandit PPO on a clutter-free template object ([`policy`]),
//! the source and weakly labelled target corpora ([`datasets`]), and the
//! adversarial transfer stage with its baselines ([`transfer`]). [`eval`]
//! holds the trial protocol, feature projections and domain-gap metrics.

mod binio;
pub mod error;
pub mod arch;
pub mod nets;
pub mod policy;
pub mod rng;
pub mod datasets;
pub mod eval;
pub mod transfer;
pub mod trajgen;

pub use error::{CoreError, Result};

/// Hex SHA-256 of a string.
pub fn hash_str(s: &str) -> String {
    use sha2::{Digest, Sha256};
    let d = Sha256::digest(s.as_bytes());
    d.iter().map(|b| format!("{b:02x}")).collect()
}
