//! Causal transfer learning for individual treatment effect (ITE) estimation.
//!
//! The crate is organised bottom-up:
//!
//! * [`nnkernel`]: a small deterministic MLP with exact reverse-mode gradients.
//! * [`datagen`]: synthetic causal task families with full potential-outcome tables.
//! * [`balance`]: 1-Wasserstein distances between latent point clouds (entropic and exact).
//! * [`tarnet`]: the two-headed representation model and its balanced training loop.
//! * [`affinity`]: diagonal Fisher signatures and the label-invariant task distance.
//! * [`metrics`]: PEHE, factual/counterfactual losses and numerical bound checks.

pub mod affinity;
pub mod balance;
pub mod datagen;
pub mod error;
pub mod metrics;
pub mod nnkernel;
pub mod numfmt;
pub mod tarnet;

pub use error::{Error, Result};

/// Hex-encoded SHA-256 of `bytes`, used for provenance ids.
pub fn content_hash(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
