//! Soft-sparsity convolution: multiplications whose MSB-estimated magnitude
//! falls far below the dominant product of their window are skipped without
//! being computed.
//!
//! - [`msb`]: MSB extraction, threshold mapping and the pruned dot product.
//! - [`conv`]: exact / zero-skip / approximate convolution with MAC counters.
//! - [`accel`]: cycle-level model of the 4x4-window accelerator.
//! - [`lenet`]: LeNet-5 training, quantization and instrumented inference.
//! - [`io`]: MNIST IDX files, the `LNW1` weight container, reports.

pub mod accel;
pub mod conv;
pub mod error;
pub mod io;
pub mod lenet;
pub mod msb;
pub mod tensor;

pub use conv::{conv2d, Activation, ConvLayerSpec, ConvMode, MacCounters};
pub use error::{Error, Result};
pub use msb::{
    approx_dot, msb_pos, product_magnitude, MsbMagnitude, ProductMagnitude, PruneOutcome,
    PruneThreshold,
};
pub use tensor::{QuantTensor, Rounding};

/// Environment variable naming the default MNIST directory.
pub const DATA_DIR_ENV: &str = "MSBPRUNE_DATA_DIR";
