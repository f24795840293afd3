//! Frames, label maps, pixel embeddings and the toy encoder that produces them.

mod encoder;
pub mod resample;
mod types;

pub use encoder::{extract_embedding, Encoder, EncoderConfig};
pub use types::{EmbeddingMap, Frame, LabelMap};

use crate::error::{Error, Result};

/// Foreground pixels of one object and its relative background
/// (everything else, other objects included), as row-major indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PixelSets {
    pub foreground: Vec<usize>,
    pub background: Vec<usize>,
}

pub fn split_pixel_sets(label: &LabelMap, object_id: u8) -> Result<PixelSets> {
    if object_id == 0 {
        return Err(Error::input("object id 0 is reserved for background"));
    }
    let mut sets = PixelSets::default();
    for (i, &l) in label.labels().iter().enumerate() {
        if l == object_id {
            sets.foreground.push(i);
        } else {
            sets.background.push(i);
        }
    }
    Ok(sets)
}

/// Aligns a full-resolution label map with an embedding grid of `stride`.
pub fn downsample_label(label: &LabelMap, stride: usize) -> Result<LabelMap> {
    label.downsample(stride)
}

/// Halves (or otherwise divides) an embedding's resolution bilinearly.
pub fn downsample_embedding(emb: &EmbeddingMap, factor: usize) -> Result<EmbeddingMap> {
    emb.downsample(factor)
}
