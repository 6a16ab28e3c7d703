//! Audio front end: WAV I/O, resampling, lowpass simulation, STFT/mel
//! analysis and the lower-frequency-replacement baseline.

pub mod filter;
pub mod lfr;
pub mod mel;
pub mod resample;
pub mod simulate;
pub mod stft;
pub mod wav;
mod waveform;

pub use filter::{lowpass_apply, sample_filter, FilterFamily, FilterSpec, LowpassSimConfig};
pub use lfr::{lfr_postprocess, LfrOutput};
pub use mel::{mel_spectrogram, stft_mag, MelConfig, MelSpectrogram};
pub use resample::resample_sinc;
pub use simulate::{degrade, simulate_lr};
pub use wav::{read_wav, write_wav, WavEncoding};
pub use waveform::Waveform;
