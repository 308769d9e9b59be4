//! Joint supervised training over multiple datasets whose label spaces only
//! partially overlap.
//!
//! One shared residual network carries a single output layer spanning the
//! union of every dataset's classes. Each training sample contributes a
//! sigmoid cross-entropy restricted to the label positions its own dataset
//! annotates — out-of-mask positions receive exactly zero gradient — so
//! datasets labeled for different tasks train one model together without
//! penalizing each other's labels. The crate ships the two baselines this
//! is measured against (per-task networks and a classical shared-trunk,
//! per-task-head setup fed by alternating batches), a synthetic
//! emotion/action-unit benchmark with known generative structure, and the
//! evaluation stack that scores all three.
//!
//! ## Examples
//!
//! Each major capability has a runnable example:
//!
//! ```bash
//! cargo run --release --example autodiff_basics    # tensors, tape, backward
//! cargo run --release --example gradient_check     # finite-difference verification
//! cargo run --release --example selective_loss     # masked loss vs. full BCE
//! cargo run --release --example generate_dataset   # synthetic benchmark files
//! cargo run --release --example train_strategies   # three strategies, one budget
//! cargo run --release --example au_coherence       # emotion × AU score matrix
//! cargo run --release --example compound_emotions  # few-shot compound classes
//! cargo run --release --example full_pipeline      # config-driven end to end
//! ```
//!
//! ## Command line
//!
//! The same pipeline is scriptable through the `sjmt` binary:
//!
//! ```bash
//! sjmt generate  --config experiment.toml
//! sjmt train     --config experiment.toml --strategy all
//! sjmt eval      --config experiment.toml
//! sjmt report    --config experiment.toml
//! sjmt gradcheck --size small
//! ```

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
