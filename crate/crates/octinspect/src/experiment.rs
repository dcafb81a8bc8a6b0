//! Leave-one-out evaluation over a dataset manifest and report emission.
//!
//! Each fold holds one volume out for inference; the rest form the train
//! set, which for the built-in detector only shapes the fold label (its
//! parameters are fixed, nothing is learned). Predictions either come from
//! running the detector or are imported from prediction-file directories,
//! so externally trained models can be scored through the same pipeline.
//!
//! Reports render as an aligned text table, CSV, or JSON. All three are
//! pure functions of the report list: no timestamps, byte-identical output
//! for identical inputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotation::{
    load_labels_dir_with, load_predictions_dir_with, Annotation, DatasetManifest, DefectClass,
    ParseOptions, Prediction,
};
use crate::detector::{detect_volume, DetectorConfig};
use crate::error::{Error, Result};
use crate::metrics::{
    average_precision, average_precision_11point, map50, match_detections_with, pr_curve, ClassAP,
};
use crate::volume::load_ovf;

/// One leave-one-out split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train_volume_ids: Vec<String>,
    pub eval_volume_id: String,
}

impl Fold {
    /// Row label used in reports, e.g. `train fB fC - inference fA`.
    pub fn label(&self) -> String {
        if self.train_volume_ids.is_empty() {
            return format!("inference {}", self.eval_volume_id);
        }
        format!(
            "train {} - inference {}",
            self.train_volume_ids.join(" "),
            self.eval_volume_id
        )
    }
}

/// One fold per volume, in input order; fold i evaluates volume i.
pub fn make_loo_splits(volume_ids: &[String]) -> Result<Vec<Fold>> {
    if volume_ids.len() < 2 {
        return Err(Error::TooFewVolumes(volume_ids.len()));
    }
    Ok((0..volume_ids.len())
        .map(|i| Fold {
            train_volume_ids: volume_ids
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, id)| id.clone())
                .collect(),
            eval_volume_id: volume_ids[i].clone(),
        })
        .collect())
}

/// Per-class slice of an [`EvalReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: DefectClass,
    /// Average precision; absent when the eval volume has no ground truth
    /// of this class.
    pub ap: Option<f64>,
    pub gt: usize,
    pub pred: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_count: usize,
}

/// Everything measured on one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fold: String,
    pub classes: Vec<ClassReport>,
    /// Mean AP over classes with ground truth; absent when none have any.
    pub map50: Option<f64>,
    /// Passthrough from imported run metadata; the built-in detector does
    /// not train.
    pub train_time_hours: Option<f64>,
    pub inference_ms_per_slice: Option<f64>,
}

impl EvalReport {
    pub fn class(&self, class: DefectClass) -> &ClassReport {
        &self.classes[class.id()]
    }
}

/// Sidecar metadata a detection run writes next to its prediction files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub detector: String,
    #[serde(default)]
    pub hyperparameters: serde_json::Map<String, serde_json::Value>,
    pub train_time_hours: Option<f64>,
    pub inference_ms_per_slice: Option<f64>,
}

pub fn load_run_metadata(path: impl AsRef<Path>) -> Result<RunMetadata> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn save_run_metadata(meta: &RunMetadata, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(meta).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Where a fold's predictions come from.
#[derive(Debug, Clone)]
pub enum PredictionSource {
    /// Run the classical detector on the eval volume.
    Baseline(DetectorConfig),
    /// Read prediction files from `<dir>/<volume_id>/slice_*.txt`, with an
    /// optional `run.json` in either directory supplying timing metadata.
    ImportedDir(PathBuf),
}

/// Evaluation knobs shared by the eval and loo commands.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub iou_threshold: f64,
    /// Gate matches with `>` instead of `>=`.
    pub strict: bool,
    /// 11-point interpolated AP instead of all-points AP.
    pub eleven_point: bool,
    /// Measure per-slice inference time (forces sequential detection).
    pub timing: bool,
    /// Reject label lines whose box is not square in pixels.
    pub force_square: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            strict: false,
            eleven_point: false,
            timing: false,
            force_square: false,
        }
    }
}

/// Score one fold: pool ground truth and predictions across all slices of
/// the eval volume, match per class, and derive AP, mAP50 and counts.
pub fn evaluate_fold(
    manifest: &DatasetManifest,
    fold: &Fold,
    source: &PredictionSource,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let entry = manifest.volume(&fold.eval_volume_id)?;
    let volume = load_ovf(&entry.volume_path)?;
    let parse_options = ParseOptions {
        force_square: options
            .force_square
            .then_some((volume.width(), volume.height())),
    };
    let gts: Vec<Annotation> = load_labels_dir_with(&entry.labels_dir, &parse_options)?;

    let (preds, train_time_hours, inference_ms_per_slice) = match source {
        PredictionSource::Baseline(cfg) => {
            let detection = detect_volume(&volume, cfg, options.timing)?;
            (detection.predictions, None, detection.inference_ms_per_slice)
        }
        PredictionSource::ImportedDir(root) => {
            let dir = root.join(&fold.eval_volume_id);
            if !dir.is_dir() {
                return Err(Error::MissingPredictions(dir));
            }
            let preds = load_predictions_dir_with(&dir, &parse_options)?;
            let meta = [dir.join("run.json"), root.join("run.json")]
                .into_iter()
                .find(|p| p.is_file())
                .map(load_run_metadata)
                .transpose()?;
            let (train, infer) = meta
                .map(|m| (m.train_time_hours, m.inference_ms_per_slice))
                .unwrap_or((None, None));
            (preds, train, infer)
        }
    };

    let mut classes = Vec::with_capacity(4);
    let mut class_aps = Vec::with_capacity(4);
    for class in DefectClass::ALL {
        let class_gts: Vec<Annotation> =
            gts.iter().filter(|g| g.class == class).copied().collect();
        let class_preds: Vec<Prediction> =
            preds.iter().filter(|p| p.class == class).copied().collect();
        let matched =
            match_detections_with(&class_preds, &class_gts, options.iou_threshold, options.strict);
        let ap = if class_gts.is_empty() {
            None
        } else {
            let curve = pr_curve(&matched.verdicts, class_gts.len());
            Some(if options.eleven_point {
                average_precision_11point(&curve)
            } else {
                average_precision(&curve)
            })
        };
        classes.push(ClassReport {
            class,
            ap,
            gt: class_gts.len(),
            pred: class_preds.len(),
            tp: matched.tp_count(),
            fp: matched.fp_count(),
            fn_count: matched.fn_count(),
        });
        class_aps.push(ClassAP { class, ap });
    }
    let map50 = match map50(&class_aps) {
        Ok(v) => Some(v),
        Err(Error::NoGroundTruth) => None,
        Err(e) => return Err(e),
    };

    Ok(EvalReport {
        fold: fold.label(),
        classes,
        map50,
        train_time_hours,
        inference_ms_per_slice,
    })
}

/// Output document format for [`emit_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

/// Render a value to 3 significant figures with trailing zeros trimmed, the
/// way the report table prints APs: 0.785 → "0.785", 0.56 → "0.56",
/// 0.0351 → "0.0351", 0 → "0".
pub fn format_sig3(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let decimals = (2 - v.abs().log10().floor() as i32).max(0) as usize;
    let s = format!("{v:.decimals$}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn ap_cell(ap: Option<f64>) -> String {
    ap.map_or_else(|| "-".to_string(), format_sig3)
}

fn time_cell(train_hours: Option<f64>, inference_ms: Option<f64>) -> String {
    match (train_hours, inference_ms) {
        (None, None) => "-".to_string(),
        (t, i) => format!(
            "{}/{}",
            t.map_or_else(|| "-".to_string(), |v| format!("{v:.3}h")),
            i.map_or_else(|| "-".to_string(), |v| format!("{v:.1}ms")),
        ),
    }
}

const TABLE_HEADER: [&str; 6] = [
    "Model",
    "Voids",
    "Cracks",
    "Surface irreg.",
    "Agglom.",
    "Train/Inference time",
];

fn emit_table(reports: &[EvalReport]) -> String {
    let mut rows: Vec<[String; 6]> = vec![TABLE_HEADER.map(str::to_string)];
    for r in reports {
        rows.push([
            r.fold.clone(),
            ap_cell(r.class(DefectClass::Void).ap),
            ap_cell(r.class(DefectClass::Crack).ap),
            ap_cell(r.class(DefectClass::SurfaceIrregularity).ap),
            ap_cell(r.class(DefectClass::Agglomerate).ap),
            time_cell(r.train_time_hours, r.inference_ms_per_slice),
        ]);
    }
    let widths: Vec<usize> = (0..6)
        .map(|c| rows.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            if c > 0 {
                line.push_str("  ");
            }
            line.push_str(cell);
            if c < 5 {
                line.push_str(&" ".repeat(widths[c] - cell.len()));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

fn csv_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn emit_csv(reports: &[EvalReport]) -> String {
    let mut header = vec!["fold".to_string()];
    for class in DefectClass::ALL {
        for field in ["ap", "gt", "pred", "tp", "fp", "fn"] {
            header.push(format!("{}_{}", class.name(), field));
        }
    }
    header.extend(
        ["map50", "train_time_hours", "inference_ms_per_slice"]
            .map(str::to_string),
    );
    let mut out = header.join(",");
    out.push('\n');
    for r in reports {
        let mut fields = vec![r.fold.clone()];
        for class in DefectClass::ALL {
            let c = r.class(class);
            fields.push(csv_opt(c.ap));
            fields.extend([c.gt, c.pred, c.tp, c.fp, c.fn_count].map(|n| n.to_string()));
        }
        fields.push(csv_opt(r.map50));
        fields.push(csv_opt(r.train_time_hours));
        fields.push(csv_opt(r.inference_ms_per_slice));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Render reports as an aligned table, CSV, or pretty JSON. Pure: identical
/// report lists produce identical bytes.
pub fn emit_report(reports: &[EvalReport], format: ReportFormat) -> String {
    match format {
        ReportFormat::Table => emit_table(reports),
        ReportFormat::Csv => emit_csv(reports),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(reports)
                .expect("reports always serialize");
            s.push('\n');
            s
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{
        save_labels_dir, save_predictions_dir, BoundingBox, VolumeEntry,
    };
    use crate::synth::{generate, DefectSpec, SynthConfig};
    use crate::volume::{save_ovf, Volume};

    fn ids(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn loo_splits_match_row_labels() {
        let folds = make_loo_splits(&ids(&["fA", "fB", "fC"])).unwrap();
        assert_eq!(folds.len(), 3);
        assert_eq!(folds[0].label(), "train fB fC - inference fA");
        assert_eq!(folds[1].label(), "train fA fC - inference fB");
        assert_eq!(folds[2].label(), "train fA fB - inference fC");
        // Partition property: each volume evaluated exactly once, never in
        // its own train set.
        for fold in &folds {
            assert!(!fold.train_volume_ids.contains(&fold.eval_volume_id));
            assert_eq!(fold.train_volume_ids.len(), 2);
        }
    }

    #[test]
    fn loo_needs_two_volumes() {
        match make_loo_splits(&ids(&["v1"])) {
            Err(Error::TooFewVolumes(1)) => {}
            other => panic!("expected TooFewVolumes, got {other:?}"),
        }
        let four = make_loo_splits(&ids(&["a", "b", "c", "d"])).unwrap();
        assert_eq!(four.len(), 4);
        assert!(four.iter().all(|f| f.train_volume_ids.len() == 3));
    }

    #[test]
    fn sig3_matches_report_style() {
        assert_eq!(format_sig3(0.785), "0.785");
        assert_eq!(format_sig3(0.103), "0.103");
        assert_eq!(format_sig3(0.0351), "0.0351");
        assert_eq!(format_sig3(0.56), "0.56");
        assert_eq!(format_sig3(0.238), "0.238");
        assert_eq!(format_sig3(0.0), "0");
        assert_eq!(format_sig3(1.0), "1");
        assert_eq!(format_sig3(0.9996), "1");
        assert_eq!(format_sig3(0.12345), "0.123");
    }

    fn fixture_report(
        fold: &str,
        aps: [Option<f64>; 4],
        train: Option<f64>,
        infer: Option<f64>,
    ) -> EvalReport {
        let classes = DefectClass::ALL
            .iter()
            .zip(aps)
            .map(|(&class, ap)| ClassReport {
                class,
                ap,
                gt: usize::from(ap.is_some()),
                pred: 0,
                tp: 0,
                fp: 0,
                fn_count: usize::from(ap.is_some()),
            })
            .collect();
        let present: Vec<f64> = aps.iter().flatten().copied().collect();
        EvalReport {
            fold: fold.to_string(),
            classes,
            map50: (!present.is_empty())
                .then(|| present.iter().sum::<f64>() / present.len() as f64),
            train_time_hours: train,
            inference_ms_per_slice: infer,
        }
    }

    fn cells(line: &str) -> Vec<&str> {
        line.split("  ")
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect()
    }

    #[test]
    fn table_rows_render_fold_cells() {
        let reports = vec![
            fixture_report(
                "train fA fC - inference fB",
                [Some(0.785), Some(0.103), None, None],
                Some(0.128),
                Some(0.9),
            ),
            fixture_report(
                "train cB cC - inference cA",
                [Some(0.701), None, Some(0.0), Some(0.501)],
                Some(0.134),
                Some(2.1),
            ),
        ];
        let table = emit_report(&reports, ReportFormat::Table);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(
            cells(lines[0]),
            vec!["Model", "Voids", "Cracks", "Surface irreg.", "Agglom.", "Train/Inference time"]
        );
        assert_eq!(
            cells(lines[1]),
            vec!["train fA fC - inference fB", "0.785", "0.103", "-", "-", "0.128h/0.9ms"]
        );
        assert_eq!(
            cells(lines[2]),
            vec!["train cB cC - inference cA", "0.701", "-", "0", "0.501", "0.134h/2.1ms"]
        );
        // Pure: same input, same bytes.
        assert_eq!(table, emit_report(&reports, ReportFormat::Table));
    }

    #[test]
    fn time_cell_handles_absent_sides() {
        assert_eq!(time_cell(None, None), "-");
        assert_eq!(time_cell(None, Some(2.1)), "-/2.1ms");
        assert_eq!(time_cell(Some(0.136), Some(1.0)), "0.136h/1.0ms");
        assert_eq!(time_cell(Some(0.099), None), "0.099h/-");
    }

    #[test]
    fn csv_roundtrips_numeric_fields() {
        let reports = vec![fixture_report(
            "train a - inference b",
            [Some(0.1 + 0.2), Some(1.0 / 3.0), None, Some(0.0)],
            Some(0.136),
            Some(1.7),
        )];
        let csv = emit_report(&reports, ReportFormat::Csv);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        let header: Vec<&str> = lines[0].split(',').collect();
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(header.len(), fields.len());
        let get = |name: &str| fields[header.iter().position(|h| *h == name).unwrap()];
        assert_eq!(get("fold"), "train a - inference b");
        assert_eq!(get("void_ap").parse::<f64>().unwrap(), 0.1 + 0.2);
        assert_eq!(get("crack_ap").parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(get("surface_irregularity_ap"), "");
        assert_eq!(get("agglomerate_ap").parse::<f64>().unwrap(), 0.0);
        assert_eq!(get("train_time_hours").parse::<f64>().unwrap(), 0.136);
        assert_eq!(get("void_gt"), "1");
    }

    #[test]
    fn json_roundtrips_and_uses_fn_key() {
        let reports = vec![fixture_report(
            "train x - inference y",
            [Some(0.5), None, None, None],
            None,
            Some(1.0),
        )];
        let json = emit_report(&reports, ReportFormat::Json);
        assert!(json.contains("\"fn\""));
        assert!(json.contains("\"void\""));
        let parsed: Vec<EvalReport> = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed, reports);
    }

    /// Build a dataset of synthetic void volumes on disk and return the
    /// manifest.
    fn synth_dataset(dir: &Path, n: usize, noise: f64) -> DatasetManifest {
        let mut volumes = Vec::new();
        for i in 0..n {
            let id = format!("v{i}");
            let mut cfg = SynthConfig::new(&id, 7 + i as u64, 96, 96, 8);
            cfg.noise_sigma = noise;
            cfg.defects = vec![DefectSpec::default_voids(3, 0.5)];
            let out = generate(&cfg).unwrap();
            let volume_path = dir.join(format!("{id}.ovf"));
            let labels_dir = dir.join(format!("{id}_labels"));
            save_ovf(&out.volume, &volume_path).unwrap();
            save_labels_dir(&out.annotations, &labels_dir).unwrap();
            volumes.push(VolumeEntry {
                volume_id: id,
                volume_path,
                labels_dir,
            });
        }
        DatasetManifest {
            name: "synthetic".to_string(),
            class_names: DatasetManifest::default_class_names(),
            volumes,
        }
    }

    #[test]
    fn baseline_fold_reports_voids_only() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_dataset(dir.path(), 2, 0.02);
        let folds = make_loo_splits(&ids(&["v0", "v1"])).unwrap();
        let cfg = DetectorConfig {
            median_k: 1,
            ..DetectorConfig::default()
        };
        let report = evaluate_fold(
            &manifest,
            &folds[0],
            &PredictionSource::Baseline(cfg),
            &EvalOptions::default(),
        )
        .unwrap();

        assert_eq!(report.fold, "train v1 - inference v0");
        let void = report.class(DefectClass::Void);
        assert!(void.gt > 0);
        assert!(void.ap.is_some());
        assert_eq!(void.tp + void.fn_count, void.gt);
        for class in [DefectClass::Crack, DefectClass::SurfaceIrregularity, DefectClass::Agglomerate] {
            assert_eq!(report.class(class).gt, 0);
            assert!(report.class(class).ap.is_none());
        }
        // map50 consistent with the stored per-class APs.
        let aps: Vec<ClassAP> = report
            .classes
            .iter()
            .map(|c| ClassAP { class: c.class, ap: c.ap })
            .collect();
        let expected = crate::metrics::map50(&aps).unwrap();
        assert!((report.map50.unwrap() - expected).abs() < 1e-12);
        // No training happened and timing was off.
        assert!(report.train_time_hours.is_none());
        assert!(report.inference_ms_per_slice.is_none());
    }

    #[test]
    fn timing_option_fills_inference_time() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_dataset(dir.path(), 2, 0.02);
        let folds = make_loo_splits(&ids(&["v0", "v1"])).unwrap();
        let options = EvalOptions { timing: true, ..EvalOptions::default() };
        let report = evaluate_fold(
            &manifest,
            &folds[1],
            &PredictionSource::Baseline(DetectorConfig::default()),
            &options,
        )
        .unwrap();
        assert!(report.inference_ms_per_slice.unwrap() > 0.0);
    }

    fn bbox(cx: f64, cy: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(cx, cy, w, h).unwrap()
    }

    #[test]
    fn imported_predictions_match_hand_counts() {
        let dir = tempfile::tempdir().unwrap();
        // Tiny real volume so the fold can load dimensions.
        let volume = Volume::new("ev", 32, 32, 2, 8, vec![0u16; 32 * 32 * 2]).unwrap();
        let volume_path = dir.path().join("ev.ovf");
        save_ovf(&volume, &volume_path).unwrap();

        // Ground truth: two voids on slice 0, one crack on slice 1.
        let gt_a = Annotation { slice_index: 0, class: DefectClass::Void, bbox: bbox(0.3, 0.3, 0.2, 0.2) };
        let gt_b = Annotation { slice_index: 0, class: DefectClass::Void, bbox: bbox(0.7, 0.7, 0.2, 0.2) };
        let gt_c = Annotation { slice_index: 1, class: DefectClass::Crack, bbox: bbox(0.5, 0.5, 0.4, 0.1) };
        let labels_dir = dir.path().join("ev_labels");
        save_labels_dir(&[gt_a, gt_b, gt_c], &labels_dir).unwrap();

        // Five predictions with hand-matched outcomes:
        //  p1 exact hit on A            -> TP
        //  p2 half-size shift off B     -> FP (IoU 1/3)
        //  p3 exact hit on B            -> TP
        //  p4 duplicate of A            -> FP (A already taken)
        //  p5 crack on the wrong slice  -> FP
        let mk = |z, class, b: BoundingBox, conf| Prediction::new(z, class, b, conf).unwrap();
        let preds = vec![
            mk(0, DefectClass::Void, bbox(0.3, 0.3, 0.2, 0.2), 0.9),
            mk(0, DefectClass::Void, bbox(0.8, 0.7, 0.2, 0.2), 0.8),
            mk(0, DefectClass::Void, bbox(0.7, 0.7, 0.2, 0.2), 0.7),
            mk(0, DefectClass::Void, bbox(0.3, 0.3, 0.2, 0.2), 0.6),
            mk(0, DefectClass::Crack, bbox(0.5, 0.5, 0.4, 0.1), 0.95),
        ];
        let pred_root = dir.path().join("preds");
        save_predictions_dir(&preds, pred_root.join("ev")).unwrap();

        let manifest = DatasetManifest {
            name: "hand".to_string(),
            class_names: DatasetManifest::default_class_names(),
            volumes: vec![
                VolumeEntry {
                    volume_id: "tr".to_string(),
                    volume_path: volume_path.clone(),
                    labels_dir: labels_dir.clone(),
                },
                VolumeEntry {
                    volume_id: "ev".to_string(),
                    volume_path,
                    labels_dir,
                },
            ],
        };
        let fold = Fold {
            train_volume_ids: vec!["tr".to_string()],
            eval_volume_id: "ev".to_string(),
        };
        let report = evaluate_fold(
            &manifest,
            &fold,
            &PredictionSource::ImportedDir(pred_root.clone()),
            &EvalOptions::default(),
        )
        .unwrap();

        let void = report.class(DefectClass::Void);
        assert_eq!((void.gt, void.pred, void.tp, void.fp, void.fn_count), (2, 4, 2, 2, 0));
        // Sweep: TP(0.9), FP(0.8), TP(0.7), FP(0.6) over 2 GT -> AP 5/6.
        assert!((void.ap.unwrap() - 5.0 / 6.0).abs() < 1e-12);
        let crack = report.class(DefectClass::Crack);
        assert_eq!((crack.gt, crack.pred, crack.tp, crack.fp, crack.fn_count), (1, 1, 0, 1, 1));
        assert_eq!(crack.ap, Some(0.0));
        assert!((report.map50.unwrap() - 5.0 / 12.0).abs() < 1e-12);
        // No run.json anywhere: timing stays absent.
        assert!(report.train_time_hours.is_none());

        // Missing per-volume subdirectory is a hard error.
        let missing = evaluate_fold(
            &manifest,
            &fold,
            &PredictionSource::ImportedDir(dir.path().join("nowhere")),
            &EvalOptions::default(),
        );
        assert!(matches!(missing, Err(Error::MissingPredictions(_))));
    }

    #[test]
    fn imported_run_metadata_flows_into_report() {
        let dir = tempfile::tempdir().unwrap();
        let volume = Volume::new("ev", 32, 32, 1, 8, vec![0u16; 32 * 32]).unwrap();
        let volume_path = dir.path().join("ev.ovf");
        save_ovf(&volume, &volume_path).unwrap();
        let labels_dir = dir.path().join("ev_labels");
        save_labels_dir(
            &[Annotation { slice_index: 0, class: DefectClass::Void, bbox: bbox(0.5, 0.5, 0.2, 0.2) }],
            &labels_dir,
        )
        .unwrap();
        let pred_root = dir.path().join("preds");
        std::fs::create_dir_all(pred_root.join("ev")).unwrap();
        let meta = RunMetadata {
            detector: "external".to_string(),
            hyperparameters: serde_json::Map::new(),
            train_time_hours: Some(0.128),
            inference_ms_per_slice: Some(0.9),
        };
        save_run_metadata(&meta, pred_root.join("run.json")).unwrap();
        assert_eq!(load_run_metadata(pred_root.join("run.json")).unwrap(), meta);

        let manifest = DatasetManifest {
            name: "meta".to_string(),
            class_names: DatasetManifest::default_class_names(),
            volumes: vec![
                VolumeEntry {
                    volume_id: "tr".to_string(),
                    volume_path: volume_path.clone(),
                    labels_dir: labels_dir.clone(),
                },
                VolumeEntry { volume_id: "ev".to_string(), volume_path, labels_dir },
            ],
        };
        let fold = Fold {
            train_volume_ids: vec!["tr".to_string()],
            eval_volume_id: "ev".to_string(),
        };
        let report = evaluate_fold(
            &manifest,
            &fold,
            &PredictionSource::ImportedDir(pred_root),
            &EvalOptions::default(),
        )
        .unwrap();
        assert_eq!(report.train_time_hours, Some(0.128));
        assert_eq!(report.inference_ms_per_slice, Some(0.9));
        // One GT void, zero predictions: AP 0, not absent.
        assert_eq!(report.class(DefectClass::Void).ap, Some(0.0));
    }

    #[test]
    fn all_absent_report_has_no_map50() {
        let dir = tempfile::tempdir().unwrap();
        let volume = Volume::new("ev", 32, 32, 1, 8, vec![0u16; 32 * 32]).unwrap();
        let volume_path = dir.path().join("ev.ovf");
        save_ovf(&volume, &volume_path).unwrap();
        let labels_dir = dir.path().join("ev_labels");
        std::fs::create_dir_all(&labels_dir).unwrap();
        let pred_root = dir.path().join("preds");
        std::fs::create_dir_all(pred_root.join("ev")).unwrap();

        let manifest = DatasetManifest {
            name: "empty".to_string(),
            class_names: DatasetManifest::default_class_names(),
            volumes: vec![
                VolumeEntry {
                    volume_id: "tr".to_string(),
                    volume_path: volume_path.clone(),
                    labels_dir: labels_dir.clone(),
                },
                VolumeEntry { volume_id: "ev".to_string(), volume_path, labels_dir },
            ],
        };
        let fold = Fold {
            train_volume_ids: vec!["tr".to_string()],
            eval_volume_id: "ev".to_string(),
        };
        let report = evaluate_fold(
            &manifest,
            &fold,
            &PredictionSource::ImportedDir(pred_root),
            &EvalOptions::default(),
        )
        .unwrap();
        assert!(report.map50.is_none());
        assert!(report.classes.iter().all(|c| c.ap.is_none()));
    }
}
