use rand::Rng;

use crate::data::SequenceRecord;
use crate::embedding::{Frame, LabelMap};
use crate::error::{Error, Result};

/// A crop window `(y0, x0, size)` shared by every frame of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropWindow {
    pub y0: usize,
    pub x0: usize,
    pub size: usize,
}

/// One training example: the first frame, the previous frame and `N`
/// current frames, all cut by the same window.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub reference: (Frame, LabelMap),
    pub previous: (Frame, LabelMap),
    pub current: Vec<(Frame, LabelMap)>,
    /// Objects of the (uncropped) first mask; some may be absent from the crop.
    pub object_ids: Vec<u8>,
    pub window: CropWindow,
    /// Index of the previous frame in the sequence.
    pub previous_index: usize,
    /// Foreground pixels inside the reference crop.
    pub reference_foreground: usize,
    /// Set when no draw reached the foreground threshold and the best-seen
    /// window was used instead.
    pub below_threshold: bool,
}

impl TrainSample {
    pub fn frames(&self) -> impl Iterator<Item = &(Frame, LabelMap)> {
        std::iter::once(&self.reference)
            .chain(std::iter::once(&self.previous))
            .chain(self.current.iter())
    }
}

fn foreground_in(label: &LabelMap, w: CropWindow) -> usize {
    (w.y0..w.y0 + w.size)
        .map(|y| (w.x0..w.x0 + w.size).filter(|&x| label.get(y, x) != 0).count())
        .sum()
}

/// Samples a previous-frame index in `1..=T-N-1` and a square window.
///
/// Windows are drawn uniformly; the first whose reference-frame crop holds at
/// least `min_fg_pixels` foreground pixels is taken. After `1 + max_retries`
/// draws without success the window with the most foreground (earliest on
/// ties) is used and the sample is flagged.
pub fn balanced_random_crop<R: Rng>(
    sequence: &SequenceRecord,
    n: usize,
    crop_size: usize,
    min_fg_pixels: usize,
    max_retries: usize,
    rng: &mut R,
) -> Result<TrainSample> {
    if n == 0 {
        return Err(Error::input("at least one current frame is required"));
    }
    if sequence.len() < n + 2 {
        return Err(Error::input(format!(
            "sequence `{}` has {} frames, training with N = {n} needs at least {}",
            sequence.id,
            sequence.len(),
            n + 2
        )));
    }
    let (h, w) = (sequence.height(), sequence.width());
    if crop_size == 0 || crop_size > h || crop_size > w {
        return Err(Error::input(format!("crop size {crop_size} does not fit {h}x{w} frames")));
    }
    let labels = sequence.labels()?;
    let object_ids = labels[0].object_ids();
    let previous_index = rng.random_range(1..=sequence.len() - n - 1);

    let mut best: Option<(CropWindow, usize)> = None;
    let mut accepted = false;
    for _ in 0..=max_retries {
        let window = CropWindow {
            y0: rng.random_range(0..=h - crop_size),
            x0: rng.random_range(0..=w - crop_size),
            size: crop_size,
        };
        let fg = foreground_in(labels[0], window);
        if best.is_none_or(|(_, b)| fg > b) {
            best = Some((window, fg));
        }
        if fg >= min_fg_pixels {
            best = Some((window, fg));
            accepted = true;
            break;
        }
    }
    let (window, reference_foreground) = best.expect("at least one draw");
    let cut = |i: usize| -> Result<(Frame, LabelMap)> {
        Ok((
            sequence.frames[i].crop(window.y0, window.x0, crop_size, crop_size)?,
            labels[i].retain_ids(&object_ids).crop(window.y0, window.x0, crop_size, crop_size)?,
        ))
    };
    Ok(TrainSample {
        reference: cut(0)?,
        previous: cut(previous_index)?,
        current: (previous_index + 1..=previous_index + n).map(cut).collect::<Result<_>>()?,
        object_ids,
        window,
        previous_index,
        reference_foreground,
        below_threshold: !accepted,
    })
}
