//! Fourier-domain utilities: radial band masks, low/high splitting,
//! radial energy spectra and band-resolved error decomposition.
//!
//! Shell membership of a bin is `round(|k|)` with `k` in integer grid-index
//! units, so shell `k` and the cutoff share one unit throughout.

mod band;
mod fft;
mod probe;
mod spectrum;

pub use band::{
    band_split, plancherel_decompose_error, BandErrors, BandMask, SpectralConfig, SpectralFeatures,
};
pub(crate) use band::low_pass;
pub use fft::{shell_count, shell_index, wavenumber, Fft2};
pub use probe::{frequency_response_probe, shell_probe_field};
pub use spectrum::{
    fit_spectrum_slope, mean_radial_spectrum, radial_energy_spectrum, smooth, write_spectrum_csv,
};
