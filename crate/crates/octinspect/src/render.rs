//! Slice overlay rendering: one volume slice re-encoded as a PPM (P6)
//! image with ground-truth boxes in green and predictions in red.
//!
//! Output is deterministic byte-for-byte: fixed colors, fixed draw order
//! (ground truth first, predictions on top), no metadata in the header.

use std::fs;
use std::path::Path;

use crate::annotation::{AbsRect, Annotation, Prediction};
use crate::error::{Error, Result};
use crate::volume::Volume;

pub const GT_COLOR: [u8; 3] = [0, 255, 0];
pub const PRED_COLOR: [u8; 3] = [255, 0, 0];

/// Integer pixel rectangle (inclusive bounds) from rounded, clamped
/// absolute coordinates. The exclusive right/bottom edges shift in by one
/// pixel; sub-pixel boxes collapse to a single row or column.
fn pixel_rect(r: &AbsRect, width: u32, height: u32) -> (u32, u32, u32, u32) {
    let clamp = |v: f64, max: u32| (v.round() as i64).clamp(0, max as i64 - 1) as u32;
    let x0 = clamp(r.x0, width);
    let y0 = clamp(r.y0, height);
    let x1 = clamp(r.x1.round() - 1.0, width).max(x0);
    let y1 = clamp(r.y1.round() - 1.0, height).max(y0);
    (x0, y0, x1, y1)
}

fn draw_outline(rgb: &mut [u8], width: u32, rect: (u32, u32, u32, u32), color: [u8; 3]) {
    let (x0, y0, x1, y1) = rect;
    let mut put = |x: u32, y: u32| {
        let i = (y as usize * width as usize + x as usize) * 3;
        rgb[i..i + 3].copy_from_slice(&color);
    };
    for x in x0..=x1 {
        put(x, y0);
        put(x, y1);
    }
    for y in y0..=y1 {
        put(x0, y);
        put(x1, y);
    }
}

/// Render slice `z` with box overlays as PPM (P6) bytes. Boxes whose
/// `slice_index` differs from `z` are ignored, so whole-volume label sets
/// can be passed as-is.
pub fn render_slice(
    volume: &Volume,
    z: u32,
    gts: &[Annotation],
    preds: &[Prediction],
) -> Result<Vec<u8>> {
    if z >= volume.depth() {
        return Err(Error::SliceOutOfRange {
            z,
            depth: volume.depth(),
        });
    }
    let (w, h) = (volume.width(), volume.height());
    let slice = volume.slice(z)?;
    let max = volume.max_value() as u32;

    let mut rgb = Vec::with_capacity(w as usize * h as usize * 3);
    for &v in slice.values() {
        let gray = (v as u32 * 255 / max) as u8;
        rgb.extend_from_slice(&[gray, gray, gray]);
    }
    for gt in gts.iter().filter(|a| a.slice_index == z) {
        let rect = pixel_rect(&gt.bbox.to_absolute(w, h)?, w, h);
        draw_outline(&mut rgb, w, rect, GT_COLOR);
    }
    for pred in preds.iter().filter(|p| p.slice_index == z) {
        let rect = pixel_rect(&pred.bbox.to_absolute(w, h)?, w, h);
        draw_outline(&mut rgb, w, rect, PRED_COLOR);
    }

    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&rgb);
    Ok(out)
}

/// [`render_slice`] straight to a file.
pub fn render_to_file(
    volume: &Volume,
    z: u32,
    gts: &[Annotation],
    preds: &[Prediction],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = render_slice(volume, z, gts, preds)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
