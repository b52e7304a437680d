//! Tensor, FFT, window, pooling and convolution primitives.

pub mod conv;
pub mod fft;
pub mod pool;
pub mod tensor;
pub mod window;

pub use conv::{conv2d_same, Conv2d};
pub use fft::{fft2d, ifft2d, ifft2d_with_residue, Spectrum};
pub use pool::{pool, pool_backward, PoolAxis, PoolKind};
pub use tensor::{sigmoid, Tensor3};
pub use window::{gaussian_label, hann_window};
