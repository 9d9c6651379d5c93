//! Latent density estimation for anomaly detection.
//!
//! The pipeline has four stages:
//!
//! 1. A fully-connected [`autoencoder`] compresses each scaled sample
//!    into a latent code `z` and reports how well it was reconstructed. The
//!    density stage sees the *augmented latent* `o = [z, ‖x − x̂‖², cos(x, x̂)]`.
//! 2. A [`fourier`] feature map `φ(o) = √(2/D)·cos(W·o + b)` approximates a
//!    Gaussian kernel. It starts as random Fourier features and is then
//!    fitted to the exact kernel on sampled latent pairs (adaptive Fourier
//!    features).
//! 3. A [`density`] matrix `ρ = (1/N) Σ φ̄ᵢφ̄ᵢᵀ` over normalized features
//!    estimates the kernel density as `f̂(o) = φ̄ᵀρφ̄ / M_γ`. It is stored as a
//!    low-rank factorization `ρ ≈ VᵀΛV` and trained jointly with the
//!    autoencoder by maximum likelihood.
//! 4. The [`detector`] calibrates a threshold `τ` as a lower quantile of the
//!    training densities; anything with `f̂ < τ` is an anomaly.
//!
//! [`evaluation`] holds the metrics, grid search, ablation harness and the
//! Friedman statistic; [`cli`] wires it all into the `leand` binary.
//!
//! ```no_run
//! use leand::dataset::{load_csv, split, CsvOptions, SplitSpec};
//! use leand::detector::{fit, LeandConfig};
//!
//! let table = load_csv("data/glass.csv", &CsvOptions::default())?;
//! let (train, test) = split(&table, &SplitSpec::new(42, 0.7))?;
//! let model = fit(&train, &LeandConfig::default())?.model;
//! let flagged = model.predict_table(&test)?;
//! # Ok::<(), leand::Error>(())
//! ```

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autoencoder;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod density;
pub mod detector;
pub mod evaluation;
pub mod fourier;
pub mod gradcheck;
pub mod optim;
mod rng;

mod error;

pub use error::{Error, Result};
pub use rng::derive_seed;
