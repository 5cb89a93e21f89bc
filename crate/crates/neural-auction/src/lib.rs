//! End-to-end learnable multi-slot ad auctions.
//!
//! A page view triggers one auction: `N` candidate ads compete for `K`
//! slots. This crate learns a context-aware, bid-monotone rank score for
//! each ad, sorts by score through a temperature-controlled softmax
//! relaxation of `argsort` so the whole mechanism is differentiable, and
//! charges each winner the critical (minimum slot-retaining) bid via the
//! closed-form inverse of the score network.
//!
//! What's in the box:
//!
//! - [`autodiff`]: a small tape-based reverse-mode engine (64-bit, no
//!   broadcasting beyond scalars) that the networks are built on.
//! - [`data`]: auction domain types, a seeded synthetic log generator, and
//!   line-delimited dataset I/O.
//! - [`encoder`]: permutation-invariant leave-one-out set encoder that
//!   embeds the competitive context of each auction.
//! - [`rankscore`]: partially monotone min/max-of-affine score network with
//!   an exact closed-form inverse for payments.
//! - [`sort`]: soft (row-stochastic) and hard argsort, plus sorted payment
//!   and metric recovery.
//! - [`training`]: listwise losses, temperature annealing, Adam, and the
//!   offline training loop.
//! - [`baselines`]: second-price mechanisms ranked by quality-weighted bids
//!   (with squashing exponent), utility-weighted variants, and a
//!   first-price counterpart.
//! - [`evaluation`]: platform metrics, bid-perturbation incentive regret,
//!   score/objective correlation, and multi-objective sweeps.
//! - [`checkpoint`] / [`config`] / [`cli`]: persistence, flat config files,
//!   and the command-line front end.
//!
//! Start with the runnable examples (`cargo run --example run_auction`) or
//! the `neural-auction` binary (`gen-data`, `train`, `infer`, `eval`,
//! `ic-eval`, `sweep`, `export-embeddings`).

pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod evaluation;
pub mod model;
pub mod rankscore;
pub mod seeds;
pub mod sort;
pub mod training;

pub use autodiff::{Graph, Tensor};
pub use data::{AdCandidate, AuctionInstance, GeneratorConfig, MetricId, ObjectiveSpec};
pub use evaluation::{AuctionOutcome, Mechanism};
pub use model::AuctionModel;
pub use training::TrainConfig;
