//! Foreground-background pixel matching.
//!
//! Every value is a biased distance `1 - 2 / (1 + exp(||e_p - e_q||^2 + b))`
//! minimised over a candidate set: the whole first frame (global matching)
//! or nested windows of the previous frame (multi-local matching). The
//! foreground set of object `o` is the pixels labelled `o`; its background
//! set is every other pixel, other objects included. An empty set yields `1`.

mod distance;
mod global;
mod guidance;
mod kernel;
mod local;

pub use distance::{biased_distance, biased_distance_tensor, pairwise_distance, BiasPair, EXPONENT_CLAMP};
pub use global::{global_match, global_match_objects, GlobalMatch};
pub use guidance::{assemble_pixel_guidance, GuidanceLayout, MatchMaps, PixelGuidance};
pub use local::{multi_local_match, multi_local_match_objects, LocalMatch, WindowSet};

pub(crate) use guidance::assemble_objects;
