//! Advantage distillation with quantization correction (ADQC) for
//! source-model secret key agreement, together with the NEC and guard-band
//! baselines, adversarial quantizer design and the experiment drivers.

pub mod error;
pub mod experiment;
pub mod metrics;
pub mod optimizer;
pub mod protocol;
pub mod quantizer;
pub mod simplex;
pub mod source;

pub use error::{Error, Result};
