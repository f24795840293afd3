use std::fs;
use std::path::{Path, PathBuf};

use image::DynamicImage;

use super::SequenceRecord;
use crate::embedding::{Frame, LabelMap};
use crate::error::{Error, Result};

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn read_mask(path: &Path) -> Result<LabelMap> {
    match image::open(path)? {
        DynamicImage::ImageLuma8(img) => Ok(LabelMap::from_luma8(&img)),
        other => Err(Error::data(format!(
            "{}: masks must be 8-bit single-channel images, found {:?}",
            path.display(),
            other.color()
        ))),
    }
}

/// Loads one `<dir>/frames` + `<dir>/masks` sequence.
pub fn load_sequence(dir: &Path) -> Result<SequenceRecord> {
    let frames_dir = dir.join("frames");
    if !frames_dir.is_dir() {
        return Err(Error::NotFound(format!("{} has no frames directory", dir.display())));
    }
    let frame_files = png_files(&frames_dir)?;
    if frame_files.is_empty() {
        return Err(Error::NotFound(format!("no frames in {}", frames_dir.display())));
    }
    let id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    let masks_dir = dir.join("masks");
    let mut names = Vec::with_capacity(frame_files.len());
    let mut frames = Vec::with_capacity(frame_files.len());
    let mut masks = Vec::with_capacity(frame_files.len());
    for path in &frame_files {
        let name = stem(path);
        frames.push(Frame::from_rgb8(&image::open(path)?.to_rgb8()));
        let mask_path = masks_dir.join(format!("{name}.png"));
        masks.push(if mask_path.is_file() { Some(read_mask(&mask_path)?) } else { None });
        names.push(name);
    }
    if masks[0].is_none() {
        return Err(Error::MissingFirstMask(id));
    }
    SequenceRecord::with_masks(id, names, frames, masks)
}

/// Loads every sequence directory under `root`, sorted by name.
pub fn load_dataset(root: &Path) -> Result<Vec<SequenceRecord>> {
    if !root.is_dir() {
        return Err(Error::NotFound(format!("dataset directory {} does not exist", root.display())));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("frames").is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::NotFound(format!("no sequences under {}", root.display())));
    }
    dirs.iter().map(|d| load_sequence(d)).collect()
}

/// Loads the `(name, mask)` pairs of `<dir>/masks`, sorted by name.
pub fn load_masks(dir: &Path) -> Result<Vec<(String, LabelMap)>> {
    let masks_dir = dir.join("masks");
    if !masks_dir.is_dir() {
        return Err(Error::NotFound(format!("{} has no masks directory", dir.display())));
    }
    png_files(&masks_dir)?
        .iter()
        .map(|p| Ok((stem(p), read_mask(p)?)))
        .collect()
}

/// Writes masks as `<dir>/masks/<name>.png`.
pub fn write_masks(dir: &Path, names: &[String], masks: &[&LabelMap]) -> Result<()> {
    let masks_dir = dir.join("masks");
    fs::create_dir_all(&masks_dir)?;
    for (name, mask) in names.iter().zip(masks) {
        mask.to_luma8().save(masks_dir.join(format!("{name}.png")))?;
    }
    Ok(())
}

/// Writes a sequence as `<root>/<id>/{frames,masks}/<name>.png`.
pub fn write_sequence(root: &Path, seq: &SequenceRecord) -> Result<PathBuf> {
    let dir = root.join(&seq.id);
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir)?;
    for (name, frame) in seq.names.iter().zip(&seq.frames) {
        frame.to_rgb8().save(frames_dir.join(format!("{name}.png")))?;
    }
    let (names, masks): (Vec<String>, Vec<&LabelMap>) = seq
        .names
        .iter()
        .zip(&seq.masks)
        .filter_map(|(n, m)| m.as_ref().map(|m| (n.clone(), m)))
        .unzip();
    write_masks(&dir, &names, &masks)?;
    Ok(dir)
}
