//! Bounding-box annotations, label files and the dataset manifest.
//!
//! Boxes use the normalized center format common to grid-based detectors:
//! each label line is `class_id cx cy w h` with coordinates relative to the
//! slice width/height. Prediction files append a sixth `confidence` token.
//! One label file per slice, `slice_<z, 4 digits>.txt`, under a labels
//! directory; a JSON manifest binds volumes to their label directories.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The four defect classes, with stable integer ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DefectClass {
    Void = 0,
    Crack = 1,
    SurfaceIrregularity = 2,
    Agglomerate = 3,
}

impl DefectClass {
    pub const ALL: [DefectClass; 4] = [
        DefectClass::Void,
        DefectClass::Crack,
        DefectClass::SurfaceIrregularity,
        DefectClass::Agglomerate,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: i64) -> Option<Self> {
        match id {
            0 => Some(DefectClass::Void),
            1 => Some(DefectClass::Crack),
            2 => Some(DefectClass::SurfaceIrregularity),
            3 => Some(DefectClass::Agglomerate),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DefectClass::Void => "void",
            DefectClass::Crack => "crack",
            DefectClass::SurfaceIrregularity => "surface_irregularity",
            DefectClass::Agglomerate => "agglomerate",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        DefectClass::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl Serialize for DefectClass {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for DefectClass {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        DefectClass::from_name(&name)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown defect class {name:?}")))
    }
}

/// Normalized center-format box. `cx`,`cy` lie in [0,1]; `w`,`h` in (0,1].
/// A box may overhang the slice edge by up to half its size; conversion to
/// pixels clamps to the slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let centered = |coord: &'static str, value: f64| {
            if value.is_finite() && (0.0..=1.0).contains(&value) {
                Ok(())
            } else {
                Err(Error::OutOfRangeCoordinate { coord, value })
            }
        };
        let extent = |coord: &'static str, value: f64| {
            if value.is_finite() && value > 0.0 && value <= 1.0 {
                Ok(())
            } else {
                Err(Error::OutOfRangeCoordinate { coord, value })
            }
        };
        centered("cx", cx)?;
        centered("cy", cy)?;
        extent("w", w)?;
        extent("h", h)?;
        Ok(Self { cx, cy, w, h })
    }

    /// Convert to pixel coordinates, clamping to the slice bounds.
    pub fn to_absolute(&self, width: u32, height: u32) -> Result<AbsRect> {
        let (width, height) = (width as f64, height as f64);
        let x0 = ((self.cx - self.w / 2.0) * width).clamp(0.0, width);
        let x1 = ((self.cx + self.w / 2.0) * width).clamp(0.0, width);
        let y0 = ((self.cy - self.h / 2.0) * height).clamp(0.0, height);
        let y1 = ((self.cy + self.h / 2.0) * height).clamp(0.0, height);
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::DegenerateAfterClamp);
        }
        Ok(AbsRect { x0, y0, x1, y1 })
    }
}

/// Axis-aligned rectangle in pixel coordinates, corners (x0,y0)..(x1,y1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbsRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl AbsRect {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// One labelled box on one slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annotation {
    pub slice_index: u32,
    pub class: DefectClass,
    pub bbox: BoundingBox,
}

/// A detector output: an annotation plus a confidence score in [0,1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub slice_index: u32,
    pub class: DefectClass,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

impl Prediction {
    pub fn new(
        slice_index: u32,
        class: DefectClass,
        bbox: BoundingBox,
        confidence: f64,
    ) -> Result<Self> {
        if !confidence.is_finite() || !(0.0..=1.0).contains(&confidence) {
            return Err(Error::OutOfRangeCoordinate {
                coord: "confidence",
                value: confidence,
            });
        }
        Ok(Self {
            slice_index,
            class,
            bbox,
            confidence,
        })
    }
}

/// Optional squareness check applied while parsing, in pixel units.
#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// When set to the slice dimensions, every box must satisfy
    /// |w·width − h·height| ≤ 1 px.
    pub force_square: Option<(u32, u32)>,
}

fn check_square(opts: ParseOptions, bbox: &BoundingBox, line: usize) -> Result<()> {
    if let Some((width, height)) = opts.force_square {
        let w_px = bbox.w * width as f64;
        let h_px = bbox.h * height as f64;
        if (w_px - h_px).abs() > 1.0 {
            return Err(Error::NonSquareBox { line, w_px, h_px });
        }
    }
    Ok(())
}

fn split_tokens(line: &str, expected: usize) -> Result<Vec<&str>> {
    let tokens: Vec<&str> = line.split_ascii_whitespace().collect();
    if tokens.len() != expected {
        return Err(Error::MalformedLine {
            line: 0,
            reason: format!("expected {expected} fields, found {}", tokens.len()),
        });
    }
    Ok(tokens)
}

fn parse_class(token: &str) -> Result<DefectClass> {
    let id: i64 = token.parse().map_err(|_| Error::MalformedLine {
        line: 0,
        reason: format!("class id {token:?} is not an integer"),
    })?;
    DefectClass::from_id(id).ok_or(Error::UnknownClassId { line: 0, id })
}

fn parse_coord(token: &str) -> Result<f64> {
    token.parse().map_err(|_| Error::MalformedLine {
        line: 0,
        reason: format!("{token:?} is not a number"),
    })
}

fn parse_box(tokens: &[&str]) -> Result<BoundingBox> {
    BoundingBox::new(
        parse_coord(tokens[0])?,
        parse_coord(tokens[1])?,
        parse_coord(tokens[2])?,
        parse_coord(tokens[3])?,
    )
}

/// Parse a ground-truth label file. Blank lines are ignored; every other
/// line must hold exactly `class_id cx cy w h`.
pub fn parse_label_file(path: impl AsRef<Path>, slice_index: u32) -> Result<Vec<Annotation>> {
    parse_label_file_with(path, slice_index, ParseOptions::default())
}

pub fn parse_label_file_with(
    path: impl AsRef<Path>,
    slice_index: u32,
    opts: ParseOptions,
) -> Result<Vec<Annotation>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let n = idx + 1;
        let parsed = (|| {
            let tokens = split_tokens(line, 5)?;
            let class = parse_class(tokens[0])?;
            let bbox = parse_box(&tokens[1..5])?;
            check_square(opts, &bbox, n)?;
            Ok(Annotation {
                slice_index,
                class,
                bbox,
            })
        })();
        out.push(parsed.map_err(|e: Error| e.at_line(n))?);
    }
    Ok(out)
}

/// Parse a prediction file: the label format plus a sixth confidence token.
pub fn parse_prediction_file(path: impl AsRef<Path>, slice_index: u32) -> Result<Vec<Prediction>> {
    parse_prediction_file_with(path, slice_index, ParseOptions::default())
}

pub fn parse_prediction_file_with(
    path: impl AsRef<Path>,
    slice_index: u32,
    opts: ParseOptions,
) -> Result<Vec<Prediction>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let n = idx + 1;
        let parsed = (|| {
            let tokens = split_tokens(line, 6)?;
            let class = parse_class(tokens[0])?;
            let bbox = parse_box(&tokens[1..5])?;
            check_square(opts, &bbox, n)?;
            Prediction::new(slice_index, class, bbox, parse_coord(tokens[5])?)
        })();
        out.push(parsed.map_err(|e: Error| e.at_line(n))?);
    }
    Ok(out)
}

fn render_label_line(class: DefectClass, b: &BoundingBox) -> String {
    format!("{} {:.6} {:.6} {:.6} {:.6}", class.id(), b.cx, b.cy, b.w, b.h)
}

/// Write one slice's annotations; coordinates are rendered with 6 decimals.
/// All annotations must share one slice index. An empty list writes an
/// empty file.
pub fn write_label_file(annotations: &[Annotation], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    debug_assert!(annotations.windows(2).all(|w| w[0].slice_index == w[1].slice_index));
    let mut text = String::new();
    for a in annotations {
        text.push_str(&render_label_line(a.class, &a.bbox));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write one slice's predictions in the 6-token format.
pub fn write_prediction_file(predictions: &[Prediction], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    debug_assert!(predictions.windows(2).all(|w| w[0].slice_index == w[1].slice_index));
    let mut text = String::new();
    for p in predictions {
        text.push_str(&render_label_line(p.class, &p.bbox));
        text.push_str(&format!(" {:.6}\n", p.confidence));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// File name for the label file of slice `z`.
pub fn label_file_name(z: u32) -> String {
    format!("slice_{z:04}.txt")
}

/// Slice index encoded in a label file name, if it is one.
fn slice_index_of(name: &str) -> Option<u32> {
    let digits = name.strip_prefix("slice_")?.strip_suffix(".txt")?;
    if digits.len() < 4 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

fn label_files(dir: &Path) -> Result<Vec<(u32, PathBuf)>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if let Some(z) = name.to_str().and_then(slice_index_of) {
            files.push((z, entry.path()));
        }
    }
    files.sort();
    Ok(files)
}

/// Load every `slice_*.txt` under `dir`, in slice order. Other files (for
/// example run metadata) are ignored; an empty directory yields no boxes.
pub fn load_labels_dir(dir: impl AsRef<Path>) -> Result<Vec<Annotation>> {
    load_labels_dir_with(dir, &ParseOptions::default())
}

/// [`load_labels_dir`] with explicit parse options.
pub fn load_labels_dir_with(
    dir: impl AsRef<Path>,
    options: &ParseOptions,
) -> Result<Vec<Annotation>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for (z, path) in label_files(dir)? {
        out.extend(parse_label_file_with(&path, z, *options)?);
    }
    Ok(out)
}

/// Counterpart of [`load_labels_dir`] for prediction files.
pub fn load_predictions_dir(dir: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    load_predictions_dir_with(dir, &ParseOptions::default())
}

/// [`load_predictions_dir`] with explicit parse options.
pub fn load_predictions_dir_with(
    dir: impl AsRef<Path>,
    options: &ParseOptions,
) -> Result<Vec<Prediction>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for (z, path) in label_files(dir)? {
        out.extend(parse_prediction_file_with(&path, z, *options)?);
    }
    Ok(out)
}

/// Write annotations as one label file per slice under `dir` (created if
/// missing). Slices without boxes get no file.
pub fn save_labels_dir(annotations: &[Annotation], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut slices: Vec<u32> = annotations.iter().map(|a| a.slice_index).collect();
    slices.sort_unstable();
    slices.dedup();
    for z in slices {
        let on_slice: Vec<Annotation> = annotations
            .iter()
            .filter(|a| a.slice_index == z)
            .copied()
            .collect();
        write_label_file(&on_slice, dir.join(label_file_name(z)))?;
    }
    Ok(())
}

/// Counterpart of [`save_labels_dir`] for predictions.
pub fn save_predictions_dir(predictions: &[Prediction], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut slices: Vec<u32> = predictions.iter().map(|p| p.slice_index).collect();
    slices.sort_unstable();
    slices.dedup();
    for z in slices {
        let on_slice: Vec<Prediction> = predictions
            .iter()
            .filter(|p| p.slice_index == z)
            .copied()
            .collect();
        write_prediction_file(&on_slice, dir.join(label_file_name(z)))?;
    }
    Ok(())
}

/// One volume's entry in a dataset manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeEntry {
    pub volume_id: String,
    pub volume_path: PathBuf,
    pub labels_dir: PathBuf,
}

/// A named dataset: class map plus per-volume data locations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub class_names: Vec<String>,
    pub volumes: Vec<VolumeEntry>,
}

impl DatasetManifest {
    /// Class names in id order for the four defect classes.
    pub fn default_class_names() -> Vec<String> {
        DefectClass::ALL.iter().map(|c| c.name().to_string()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.len() != 4 {
            return Err(Error::InvalidManifest(format!(
                "expected 4 class names, found {}",
                self.class_names.len()
            )));
        }
        let mut seen = HashSet::new();
        for v in &self.volumes {
            if !seen.insert(&v.volume_id) {
                return Err(Error::InvalidManifest(format!(
                    "duplicate volume id {:?}",
                    v.volume_id
                )));
            }
        }
        Ok(())
    }

    pub fn volume(&self, volume_id: &str) -> Result<&VolumeEntry> {
        self.volumes
            .iter()
            .find(|v| v.volume_id == volume_id)
            .ok_or_else(|| Error::UnknownVolumeId(volume_id.to_string()))
    }
}

/// Load a manifest, validating it and resolving relative paths against the
/// manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::JsonFailure {
            path: path.to_path_buf(),
            source: e,
        })?;
    manifest.validate()?;
    if let Some(base) = path.parent() {
        for v in &mut manifest.volumes {
            if v.volume_path.is_relative() {
                v.volume_path = base.join(&v.volume_path);
            }
            if v.labels_dir.is_relative() {
                v.labels_dir = base.join(&v.labels_dir);
            }
        }
    }
    Ok(manifest)
}

/// Write a manifest as pretty JSON. Paths are written as stored, so keep
/// them relative when the dataset should be relocatable.
pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    manifest.validate()?;
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Total annotations per class for one volume of the dataset, indexed by
/// class id.
pub fn count_by_class(manifest: &DatasetManifest, volume_id: &str) -> Result<[usize; 4]> {
    let entry = manifest.volume(volume_id)?;
    let mut counts = [0usize; 4];
    if entry.labels_dir.exists() {
        for a in load_labels_dir(&entry.labels_dir)? {
            counts[a.class.id()] += 1;
        }
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    fn write(path: &Path, text: &str) {
        fs::write(path, text).unwrap();
    }

    #[test]
    fn parses_basic_line() {
        let dir = tmp();
        let path = dir.path().join("slice_0000.txt");
        write(&path, "0 0.5 0.5 0.1 0.1\n");
        let anns = parse_label_file(&path, 0).unwrap();
        assert_eq!(anns.len(), 1);
        assert_eq!(anns[0].class, DefectClass::Void);
        assert_eq!(anns[0].bbox, BoundingBox::new(0.5, 0.5, 0.1, 0.1).unwrap());
    }

    #[test]
    fn overhanging_box_is_accepted() {
        let dir = tmp();
        let path = dir.path().join("l.txt");
        write(&path, "3 0.9 0.9 0.3 0.3\n");
        let anns = parse_label_file(&path, 4).unwrap();
        assert_eq!(anns[0].class, DefectClass::Agglomerate);
        assert_eq!(anns[0].slice_index, 4);
    }

    #[test]
    fn zero_width_is_rejected() {
        let dir = tmp();
        let path = dir.path().join("l.txt");
        write(&path, "0 0.5 0.5 0 0.1\n");
        match parse_label_file(&path, 0) {
            Err(Error::OutOfRangeCoordinate { coord: "w", value }) => assert_eq!(value, 0.0),
            other => panic!("expected OutOfRangeCoordinate, got {other:?}"),
        }
    }

    #[test]
    fn unknown_class_and_line_numbers() {
        let dir = tmp();
        let path = dir.path().join("l.txt");
        write(&path, "\n0 0.5 0.5 0.1 0.1\n9 0.5 0.5 0.1 0.1\n");
        match parse_label_file(&path, 0) {
            Err(Error::UnknownClassId { line, id }) => {
                assert_eq!((line, id), (3, 9));
            }
            other => panic!("expected UnknownClassId, got {other:?}"),
        }
    }

    #[test]
    fn malformed_lines_are_rejected() {
        let dir = tmp();
        let path = dir.path().join("l.txt");
        for text in ["0 0.5 0.5 0.1", "0 0.5 0.5 0.1 0.1 0.9", "x 0.5 0.5 0.1 0.1", "0 a b c d"] {
            write(&path, text);
            assert!(
                matches!(parse_label_file(&path, 0), Err(Error::MalformedLine { line: 1, .. })),
                "accepted {text:?}"
            );
        }
    }

    #[test]
    fn blank_lines_are_skipped() {
        let dir = tmp();
        let path = dir.path().join("l.txt");
        write(&path, "\n  \n1 0.25 0.25 0.2 0.4\n\n");
        let anns = parse_label_file(&path, 0).unwrap();
        assert_eq!(anns.len(), 1);
        assert_eq!(anns[0].class, DefectClass::Crack);
    }

    #[test]
    fn one_third_renders_to_six_decimals() {
        let dir = tmp();
        let path = dir.path().join("l.txt");
        let a = Annotation {
            slice_index: 0,
            class: DefectClass::Void,
            bbox: BoundingBox::new(1.0 / 3.0, 0.5, 0.1, 0.1).unwrap(),
        };
        write_label_file(&[a], &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "0 0.333333 0.500000 0.100000 0.100000\n");
        let back = parse_label_file(&path, 0).unwrap();
        assert!((back[0].bbox.cx - 1.0 / 3.0).abs() <= 5e-7);
    }

    #[test]
    fn empty_list_writes_empty_file() {
        let dir = tmp();
        let path = dir.path().join("l.txt");
        write_label_file(&[], &path).unwrap();
        assert_eq!(fs::read(&path).unwrap().len(), 0);
        assert!(parse_label_file(&path, 0).unwrap().is_empty());
    }

    #[test]
    fn label_roundtrip_of_many_boxes() {
        let dir = tmp();
        let path = dir.path().join("l.txt");
        // Deterministic pseudo-random coordinates over the valid domain.
        let mut state = 0x9E3779B97F4A7C15u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let anns: Vec<Annotation> = (0..100)
            .map(|i| Annotation {
                slice_index: 7,
                class: DefectClass::ALL[i % 4],
                bbox: BoundingBox::new(
                    next(),
                    next(),
                    next().max(1e-3),
                    next().max(1e-3),
                )
                .unwrap(),
            })
            .collect();
        write_label_file(&anns, &path).unwrap();
        let back = parse_label_file(&path, 7).unwrap();
        assert_eq!(back.len(), anns.len());
        for (a, b) in anns.iter().zip(&back) {
            assert_eq!(a.class, b.class);
            for (x, y) in [
                (a.bbox.cx, b.bbox.cx),
                (a.bbox.cy, b.bbox.cy),
                (a.bbox.w, b.bbox.w),
                (a.bbox.h, b.bbox.h),
            ] {
                assert!((x - y).abs() <= 5e-7, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn prediction_roundtrip_and_confidence_range() {
        let dir = tmp();
        let path = dir.path().join("p.txt");
        let p = Prediction::new(
            2,
            DefectClass::Crack,
            BoundingBox::new(0.5, 0.25, 0.2, 0.1).unwrap(),
            0.75,
        )
        .unwrap();
        write_prediction_file(&[p], &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "1 0.500000 0.250000 0.200000 0.100000 0.750000\n");
        let back = parse_prediction_file(&path, 2).unwrap();
        assert_eq!(back[0].confidence, 0.75);

        write(&path, "1 0.5 0.25 0.2 0.1 1.5\n");
        assert!(matches!(
            parse_prediction_file(&path, 2),
            Err(Error::OutOfRangeCoordinate { coord: "confidence", .. })
        ));

        write(&path, "1 0.5 0.25 0.2 0.1\n");
        assert!(matches!(
            parse_prediction_file(&path, 2),
            Err(Error::MalformedLine { line: 1, .. })
        ));
    }

    #[test]
    fn to_absolute_matches_hand_values() {
        let b = BoundingBox::new(0.5, 0.5, 0.5, 0.5).unwrap();
        let r = b.to_absolute(400, 400).unwrap();
        assert_eq!((r.x0, r.y0, r.x1, r.y1), (100.0, 100.0, 300.0, 300.0));

        let b = BoundingBox::new(0.0, 0.5, 0.2, 0.2).unwrap();
        let r = b.to_absolute(400, 400).unwrap();
        assert_eq!((r.x0, r.y0, r.x1, r.y1), (0.0, 160.0, 40.0, 240.0));
    }

    #[test]
    fn negative_center_is_rejected_at_construction() {
        assert!(matches!(
            BoundingBox::new(-0.6, 0.5, 0.2, 0.2),
            Err(Error::OutOfRangeCoordinate { coord: "cx", .. })
        ));
    }

    #[test]
    fn force_square_tolerates_one_pixel() {
        let dir = tmp();
        let path = dir.path().join("l.txt");
        let opts = ParseOptions {
            force_square: Some((400, 400)),
        };
        // 40 px vs 41 px: within the 1 px tolerance.
        write(&path, "0 0.5 0.5 0.100000 0.102500\n");
        assert!(parse_label_file_with(&path, 0, opts).is_ok());
        // 40 px vs 48 px: rejected.
        write(&path, "0 0.5 0.5 0.1 0.1\n0 0.5 0.5 0.100000 0.120000\n");
        match parse_label_file_with(&path, 0, opts) {
            Err(Error::NonSquareBox { line, w_px, h_px }) => {
                assert_eq!(line, 2);
                assert!((w_px - 40.0).abs() < 1e-9 && (h_px - 48.0).abs() < 1e-9);
            }
            other => panic!("expected NonSquareBox, got {other:?}"),
        }
    }

    #[test]
    fn labels_dir_roundtrip_skips_empty_slices() {
        let dir = tmp();
        let labels = dir.path().join("labels");
        let anns = vec![
            Annotation {
                slice_index: 3,
                class: DefectClass::Void,
                bbox: BoundingBox::new(0.5, 0.5, 0.1, 0.1).unwrap(),
            },
            Annotation {
                slice_index: 0,
                class: DefectClass::Crack,
                bbox: BoundingBox::new(0.2, 0.2, 0.1, 0.3).unwrap(),
            },
            Annotation {
                slice_index: 3,
                class: DefectClass::Void,
                bbox: BoundingBox::new(0.7, 0.7, 0.1, 0.1).unwrap(),
            },
        ];
        save_labels_dir(&anns, &labels).unwrap();
        let mut names: Vec<String> = fs::read_dir(&labels)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        assert_eq!(names, ["slice_0000.txt", "slice_0003.txt"]);

        // A stray metadata file must not confuse the loader.
        write(&labels.join("run.json"), "{}");
        let back = load_labels_dir(&labels).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[0].slice_index, 0);
        assert_eq!(back[1].slice_index, 3);
        assert_eq!(back[2].slice_index, 3);
    }

    #[test]
    fn label_file_names_are_four_digit() {
        assert_eq!(label_file_name(7), "slice_0007.txt");
        assert_eq!(label_file_name(123), "slice_0123.txt");
        assert_eq!(slice_index_of("slice_0042.txt"), Some(42));
        assert_eq!(slice_index_of("slice_42.txt"), None);
        assert_eq!(slice_index_of("run.json"), None);
        assert_eq!(slice_index_of("slice_00a2.txt"), None);
    }

    fn fixture_manifest(dir: &Path, volumes: &[(&str, &[usize; 4])]) -> DatasetManifest {
        let mut entries = Vec::new();
        for (id, counts) in volumes {
            let labels = dir.join(format!("{id}_labels"));
            let mut anns = Vec::new();
            let mut z = 0u32;
            for (class_id, &n) in counts.iter().enumerate() {
                for i in 0..n {
                    anns.push(Annotation {
                        slice_index: z % 10,
                        class: DefectClass::from_id(class_id as i64).unwrap(),
                        bbox: BoundingBox::new(0.5, 0.5, 0.1 + 0.001 * (i % 5) as f64, 0.1)
                            .unwrap(),
                    });
                    z += 1;
                }
            }
            save_labels_dir(&anns, &labels).unwrap();
            entries.push(VolumeEntry {
                volume_id: id.to_string(),
                volume_path: dir.join(format!("{id}.ovf")),
                labels_dir: labels,
            });
        }
        DatasetManifest {
            name: "fixture".into(),
            class_names: DatasetManifest::default_class_names(),
            volumes: entries,
        }
    }

    #[test]
    fn per_volume_class_counts() {
        let dir = tmp();
        let manifest = fixture_manifest(
            dir.path(),
            &[("fA", &[87, 78, 0, 0]), ("cB", &[270, 0, 16, 3])],
        );
        assert_eq!(count_by_class(&manifest, "fA").unwrap(), [87, 78, 0, 0]);
        assert_eq!(count_by_class(&manifest, "cB").unwrap(), [270, 0, 16, 3]);
        assert!(matches!(
            count_by_class(&manifest, "zz"),
            Err(Error::UnknownVolumeId(_))
        ));
    }

    #[test]
    fn counts_ignore_slice_distribution() {
        let dir = tmp();
        let bbox = BoundingBox::new(0.5, 0.5, 0.1, 0.1).unwrap();
        let spread: Vec<Annotation> = (0..12)
            .map(|i| Annotation {
                slice_index: i,
                class: DefectClass::ALL[(i % 4) as usize],
                bbox,
            })
            .collect();
        let bunched: Vec<Annotation> = (0..12)
            .map(|i| Annotation {
                slice_index: 0,
                class: DefectClass::ALL[(i % 4) as usize],
                bbox,
            })
            .collect();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        save_labels_dir(&spread, &a).unwrap();
        save_labels_dir(&bunched, &b).unwrap();
        let manifest = DatasetManifest {
            name: "m".into(),
            class_names: DatasetManifest::default_class_names(),
            volumes: vec![
                VolumeEntry {
                    volume_id: "a".into(),
                    volume_path: dir.path().join("a.ovf"),
                    labels_dir: a,
                },
                VolumeEntry {
                    volume_id: "b".into(),
                    volume_path: dir.path().join("b.ovf"),
                    labels_dir: b,
                },
            ],
        };
        assert_eq!(
            count_by_class(&manifest, "a").unwrap(),
            count_by_class(&manifest, "b").unwrap()
        );
    }

    #[test]
    fn empty_labels_dir_counts_zero() {
        let dir = tmp();
        let labels = dir.path().join("labels");
        fs::create_dir(&labels).unwrap();
        let manifest = DatasetManifest {
            name: "m".into(),
            class_names: DatasetManifest::default_class_names(),
            volumes: vec![VolumeEntry {
                volume_id: "v".into(),
                volume_path: dir.path().join("v.ovf"),
                labels_dir: labels,
            }],
        };
        assert_eq!(count_by_class(&manifest, "v").unwrap(), [0, 0, 0, 0]);
    }

    #[test]
    fn manifest_roundtrip_resolves_relative_paths() {
        let dir = tmp();
        let manifest = DatasetManifest {
            name: "demo".into(),
            class_names: DatasetManifest::default_class_names(),
            volumes: vec![VolumeEntry {
                volume_id: "v0".into(),
                volume_path: "v0.ovf".into(),
                labels_dir: "v0_labels".into(),
            }],
        };
        let path = dir.path().join("manifest.json");
        save_manifest(&manifest, &path).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(back.volumes[0].volume_path, dir.path().join("v0.ovf"));
        assert_eq!(back.volumes[0].labels_dir, dir.path().join("v0_labels"));
        assert_eq!(back.name, "demo");
    }

    #[test]
    fn manifest_validation() {
        let entry = |id: &str| VolumeEntry {
            volume_id: id.into(),
            volume_path: "v.ovf".into(),
            labels_dir: "l".into(),
        };
        let dup = DatasetManifest {
            name: "m".into(),
            class_names: DatasetManifest::default_class_names(),
            volumes: vec![entry("a"), entry("a")],
        };
        assert!(matches!(dup.validate(), Err(Error::InvalidManifest(_))));

        let short = DatasetManifest {
            name: "m".into(),
            class_names: vec!["void".into()],
            volumes: vec![],
        };
        assert!(matches!(short.validate(), Err(Error::InvalidManifest(_))));
    }

    proptest! {
        #[test]
        fn to_absolute_is_monotone_in_extent(
            cx in 0.0f64..=1.0,
            cy in 0.0f64..=1.0,
            w in 0.01f64..=0.5,
            h in 0.01f64..=0.5,
            grow_w in 0.0f64..=0.5,
            grow_h in 0.0f64..=0.5,
        ) {
            let small = BoundingBox::new(cx, cy, w, h).unwrap();
            let big = BoundingBox::new(cx, cy, w + grow_w, h + grow_h).unwrap();
            let rs = small.to_absolute(400, 300).unwrap();
            let rb = big.to_absolute(400, 300).unwrap();
            prop_assert!(rb.x0 <= rs.x0 && rb.y0 <= rs.y0);
            prop_assert!(rb.x1 >= rs.x1 && rb.y1 >= rs.y1);
        }

        #[test]
        fn roundtrip_error_is_bounded(
            cx in 0.0f64..=1.0,
            cy in 0.0f64..=1.0,
            w in 0.001f64..=1.0,
            h in 0.001f64..=1.0,
        ) {
            let a = Annotation {
                slice_index: 0,
                class: DefectClass::Void,
                bbox: BoundingBox::new(cx, cy, w, h).unwrap(),
            };
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("l.txt");
            write_label_file(&[a], &path).unwrap();
            let back = parse_label_file(&path, 0).unwrap();
            prop_assert!((back[0].bbox.cx - cx).abs() <= 5e-7);
            prop_assert!((back[0].bbox.cy - cy).abs() <= 5e-7);
            prop_assert!((back[0].bbox.w - w).abs() <= 5e-7);
            prop_assert!((back[0].bbox.h - h).abs() <= 5e-7);
        }
    }
}
