//! Core of an incomplete-multimodal transformer for response prediction and
//! survival analysis.
//!
//! Every case carries up to four modalities (clinical records, radiology
//! slices, pathology patches, genomic profiles). Each modality is tokenized,
//! refined by per-modality self-attention with a learnable class token, and the
//! class tokens then exchange information through cross-modal attention. A
//! missing modality keeps its class token as a placeholder, so the network
//! accepts any non-empty subset of modalities. Training distills an EMA teacher
//! that sees all available modalities into students fed every non-empty subset.
//!
//! The crate is `no_std` (with `alloc`). File formats, the CLI and the training
//! harness live in the `imfuse` crate.
#![no_std]
#![forbid(unsafe_op_in_unsafe_fn)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod attention;
pub mod data;
pub mod distill;
pub mod error;
pub mod explain;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod tokenizer;

pub use data::{Availability, CaseRecord, Label, Modality, SurvivalLabel};
pub use error::{Error, Result};
pub use numerics::{ParamId, ParamStore, Rng, Tape, Tensor, Var};
