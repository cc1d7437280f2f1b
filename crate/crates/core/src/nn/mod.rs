//! Tensors-in, tensors-out network substrate: reference classifier and mask policy with
//! hand-written backward passes, Adam, and checkpoint serialization.

mod adam;
mod checkpoint;
mod classifier;
pub mod layers;
mod params;
mod policy;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, TensorData, FORMAT_VERSION, MAGIC};
pub use classifier::{argmax_rows, ClassifierArch, ClassifierModel, ConvAttribution};
pub use params::{Grads, Parameterized};
pub use policy::{PolicyArch, PolicyModel};
