//! Wavelet fusion and the trainable residual network.

pub mod net;
pub mod params;
pub mod tape;
pub mod wavelet;

pub use net::{refine_patch, residual_forward, ForwardPass, NetConfig, PatchInputs, ResidualNet};
pub use params::{Gradients, ParamId, Parameter, ParameterStore, CHECKPOINT_MAGIC};
pub use wavelet::{haar_dwt, haar_idwt, WaveletBands};
