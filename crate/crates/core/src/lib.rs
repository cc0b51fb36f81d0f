//! Detection of local bearing damage in vibration signals with impulsive,
//! non-Gaussian noise.
//!
//! The signal is cut into segments; each segment's spectrogram yields a map
//! of Pearson correlations between frequency bins. The stack of maps is
//! factorized with β-divergence non-negative tensor factorization, and every
//! frequency factor is tried as a band-pass characteristic. The class whose
//! filtered signal shows the strongest fault harmonics in its squared
//! envelope spectrum (measured by ENVSI) decides the verdict.

pub mod dependence;
pub mod diagnosis;
pub mod efficiency;
pub mod error;
pub mod io;
pub mod ntf;
pub mod par;
pub mod pipeline;
pub mod selectors;
pub mod signal;
pub mod spectral;

pub use error::{Error, Result};
pub use signal::{simulate, Signal, SimConfig};
