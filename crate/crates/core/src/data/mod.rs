//! Video sequences, the on-disk dataset layout and the synthetic generator.
//!
//! Layout (one directory per sequence):
//!
//! ```text
//! <root>/<sequence>/frames/00000.png   RGB, 8 bit
//! <root>/<sequence>/masks/00000.png    single channel, 8 bit, 0 = background
//! ```
//!
//! Frames are sorted by file name and masks are matched to frames by file
//! stem. Only the first mask is required for inference.

mod io;
mod synth;

pub use io::{load_dataset, load_masks, load_sequence, write_masks, write_sequence};
pub use synth::{generate_sequences, generate_synthetic, ShapeKind, SynthConfig};

use crate::embedding::{Frame, LabelMap};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRecord {
    pub id: String,
    /// File stems, one per frame.
    pub names: Vec<String>,
    pub frames: Vec<Frame>,
    pub masks: Vec<Option<LabelMap>>,
}

impl SequenceRecord {
    /// A fully annotated sequence with frames named `00000`, `00001`, ...
    pub fn new(id: impl Into<String>, frames: Vec<Frame>, labels: Vec<LabelMap>) -> Result<Self> {
        let names = (0..frames.len()).map(|i| format!("{i:05}")).collect();
        Self::with_masks(id, names, frames, labels.into_iter().map(Some).collect())
    }

    pub fn with_masks(
        id: impl Into<String>,
        names: Vec<String>,
        frames: Vec<Frame>,
        masks: Vec<Option<LabelMap>>,
    ) -> Result<Self> {
        let id = id.into();
        if frames.len() != masks.len() || frames.len() != names.len() {
            return Err(Error::data(format!(
                "sequence `{id}`: {} frames, {} masks, {} names",
                frames.len(),
                masks.len(),
                names.len()
            )));
        }
        if let Some(first) = frames.first() {
            let size = (first.height(), first.width());
            for (i, (f, m)) in frames.iter().zip(&masks).enumerate() {
                if (f.height(), f.width()) != size {
                    return Err(Error::data(format!("sequence `{id}`: frame {i} changes resolution")));
                }
                if let Some(m) = m {
                    if (m.height(), m.width()) != size {
                        return Err(Error::data(format!(
                            "sequence `{id}`: mask {i} is {}x{}, frame is {}x{}",
                            m.height(),
                            m.width(),
                            size.0,
                            size.1
                        )));
                    }
                }
            }
        }
        Ok(Self { id, names, frames, masks })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames.first().map_or(0, Frame::height)
    }

    pub fn width(&self) -> usize {
        self.frames.first().map_or(0, Frame::width)
    }

    pub fn first_mask(&self) -> Result<&LabelMap> {
        self.masks
            .first()
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::MissingFirstMask(self.id.clone()))
    }

    /// Object ids of the first mask.
    pub fn object_ids(&self) -> Result<Vec<u8>> {
        Ok(self.first_mask()?.object_ids())
    }

    /// Every mask, failing if any frame is unannotated.
    pub fn labels(&self) -> Result<Vec<&LabelMap>> {
        self.masks
            .iter()
            .enumerate()
            .map(|(i, m)| {
                m.as_ref()
                    .ok_or_else(|| Error::data(format!("sequence `{}`: frame {i} has no mask", self.id)))
            })
            .collect()
    }
}
