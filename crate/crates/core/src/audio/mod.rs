//! Audio feature extraction at token rate and beat detection.

mod features;
mod rhythm;
pub mod spectral;
mod wav;

pub use features::{build_feature_stack, FeatureConfig, FeatureGroup, FeatureTrack, TokenRate};
pub use rhythm::{detect_beats, dominant_lag, onset_envelope, tempogram, BeatConfig};
pub use spectral::{delta, mfcc};
pub use wav::{read_wav, write_wav, AudioBuffer};
