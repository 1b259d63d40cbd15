//! Expression editing toolkit.
//!
//! * [`expression_db`]: the expression-tag database and story-prompt template.
//! * [`retrieval`]: free text → ranked tags (BM25, optional LLM adapter).
//! * [`prompting`]: tag-format prompt assembly and LoRA trigger words.
//! * [`pipeline`]: region-locked edits that never touch unselected pixels.
//! * [`backends`]: stub, HTTP and timing implementations of the generator.
//! * [`diff`]: L1 noise forensics.
//! * [`bench`]: latency harness.
//!
//! Per-pixel work runs on rayon when the `parallel` feature is enabled
//! (default) and sequentially otherwise; both paths give identical results.

pub mod backends;
pub mod bench;
pub mod diff;
pub mod expression_db;
pub mod par;
pub mod pipeline;
pub mod prompting;
pub mod raster;
pub mod retrieval;

pub use raster::{GrayMap, RasterImage, SelectionMask};
