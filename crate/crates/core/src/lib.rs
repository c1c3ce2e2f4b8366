//! Tensor-based modulation for unsourced massive random access on
//! block-fading MIMO channels.
//!
//! Transmitters encode payloads as rank-1 tensors built from Grassmannian
//! sub-constellations; the receiver separates users with a canonical
//! polyadic decomposition and demaps each component independently. The
//! crate provides the tensor algebra and ALS solver, closed-form
//! identifiability and degrees-of-freedom calculators, the sub-constellation
//! design with its demappers, a shortened BCH codec, the transmit/channel/
//! receive pipeline, and a Monte-Carlo evaluation harness.

pub mod bch;
pub mod constellation;
pub mod cpd;
pub mod error;
pub mod eval;
pub mod identifiability;
pub mod link;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{kron_chain, khatri_rao, C64, DenseTensor, TensorShape};
pub use cpd::{compose, cpd_als, residual, CpdOptions, CpdOutcome, FactorSet, FixedComponent};
pub use identifiability::{dof_bounds, dof_curve, dof_tbm, rank_bounds, DofReport, RankBounds, Regime};
pub use constellation::{split_bits, BitSplit, SubConstellation};
pub use bch::BchCode;
pub use link::{
    best_channel, channel_apply, ml_decode_oracle, rx_decode, tx_encode, DecodeOutcome, Message,
    TbmConfig,
};
pub use eval::{mer, per_sourced, pupe, run_sweep, Metric, SweepAxis, SweepSpec, TrialResult};
