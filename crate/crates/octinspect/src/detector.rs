//! Classical baseline detector: background subtraction via a large median
//! filter, sigma thresholding, connected components, and a rule-based
//! classifier over component shape, brightness and surface contact.
//!
//! Everything here is deterministic; identical inputs and config always
//! produce identical predictions.

use std::collections::VecDeque;
use std::time::Instant;

use rayon::prelude::*;

use crate::annotation::{AbsRect, BoundingBox, DefectClass, Prediction};
use crate::error::{Error, Result};
use crate::preprocess::{find_surface, median_filter, normalize, FloatSlice, SurfaceProfile};
use crate::volume::{SliceView, Volume};

/// Tuning knobs of the baseline detector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    /// Denoising median kernel applied before background estimation.
    pub median_k: u32,
    /// Background-estimation median kernel; defects must be small against it.
    pub bg_k: u32,
    /// Anomaly threshold in per-slice standard deviations of the residual.
    pub z_thresh: f64,
    /// Minimum component area in pixels.
    pub min_area: usize,
    /// Pixel connectivity for component grouping, 4 or 8.
    pub connectivity: u8,
    /// Vertical distance (px) within which a component counts as touching
    /// the surface.
    pub surface_band: u32,
    /// Major/minor axis ratio at which a component is called a crack.
    pub crack_elongation: f64,
    /// Intensity threshold for the surface finder.
    pub surface_theta: f32,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            median_k: 3,
            bg_k: 31,
            z_thresh: 3.0,
            min_area: 9,
            connectivity: 8,
            surface_band: 6,
            crack_elongation: 4.0,
            surface_theta: 0.35,
        }
    }
}

impl DetectorConfig {
    // The negated float comparisons deliberately reject NaN along with the
    // out-of-range values.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.median_k == 0 || self.median_k.is_multiple_of(2) {
            return Err(Error::BadConfig(format!("median_k {} must be odd", self.median_k)));
        }
        if self.bg_k == 0 || self.bg_k.is_multiple_of(2) {
            return Err(Error::BadConfig(format!("bg_k {} must be odd", self.bg_k)));
        }
        if !(self.z_thresh > 0.0) {
            return Err(Error::BadConfig(format!("z_thresh {} must be > 0", self.z_thresh)));
        }
        if self.min_area < 1 {
            return Err(Error::BadConfig("min_area must be at least 1".into()));
        }
        if self.connectivity != 4 && self.connectivity != 8 {
            return Err(Error::BadConfig(format!(
                "connectivity {} must be 4 or 8",
                self.connectivity
            )));
        }
        if self.crack_elongation < 1.0 {
            return Err(Error::BadConfig(format!(
                "crack_elongation {} must be at least 1",
                self.crack_elongation
            )));
        }
        if !(self.surface_theta > 0.0 && self.surface_theta < 1.0) {
            return Err(Error::BadConfig(format!(
                "surface_theta {} must lie strictly between 0 and 1",
                self.surface_theta
            )));
        }
        Ok(())
    }
}

/// Signed residual image: input minus estimated background. Unlike
/// [`FloatSlice`] this may hold negative values (dark defects).
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSlice {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl ResidualSlice {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn at(&self, x: u32, y: u32) -> f32 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    /// Population standard deviation of all residuals.
    pub fn sigma(&self) -> f64 {
        let n = self.values.len() as f64;
        let mean = self.values.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = self
            .values
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        var.sqrt()
    }
}

/// Residual of a slice against its median-estimated background:
/// `s − median_filter(s, bg_k)`. Dark defects come out negative, bright
/// ones positive.
pub fn anomaly_map(s: &FloatSlice, cfg: &DetectorConfig) -> Result<ResidualSlice> {
    cfg.validate()?;
    let background = median_filter(s, cfg.bg_k)?;
    let values = s
        .values()
        .iter()
        .zip(background.values())
        .map(|(&v, &b)| v - b)
        .collect();
    Ok(ResidualSlice {
        width: s.width(),
        height: s.height(),
        values,
    })
}

/// One connected anomaly region.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    /// Member pixels as (x, y), sorted row-major.
    pub pixels: Vec<(u32, u32)>,
    pub area: usize,
    /// Tight pixel bounding box; x1/y1 are exclusive.
    pub bbox: AbsRect,
    /// Mean signed residual over the member pixels.
    pub mean_residual: f64,
    /// Major/minor axis ratio from second moments, always ≥ 1.
    pub elongation: f64,
    /// Filled in during classification once a surface profile is known;
    /// [`threshold_components`] leaves it false.
    pub touches_surface: bool,
}

/// Threshold the residual slice at `z_thresh` per-slice standard
/// deviations (of either sign) and group pixels into components. Components
/// smaller than `min_area` are dropped; the rest are sorted by area
/// descending, then bbox x0, then bbox y0. A zero-variance slice yields
/// nothing.
pub fn threshold_components(res: &ResidualSlice, cfg: &DetectorConfig) -> Vec<Component> {
    let sigma = res.sigma();
    if sigma == 0.0 {
        return Vec::new();
    }
    let thresh = (cfg.z_thresh * sigma) as f32;
    let (w, h) = (res.width as usize, res.height as usize);
    let mask: Vec<bool> = res.values.iter().map(|v| v.abs() >= thresh).collect();

    let neighbors_8 = [
        (-1i64, -1i64), (0, -1), (1, -1),
        (-1, 0), (1, 0),
        (-1, 1), (0, 1), (1, 1),
    ];
    let neighbors_4 = [(0i64, -1i64), (-1, 0), (1, 0), (0, 1)];
    let offsets: &[(i64, i64)] = if cfg.connectivity == 8 {
        &neighbors_8
    } else {
        &neighbors_4
    };

    let mut visited = vec![false; w * h];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(idx) = queue.pop_front() {
            let (x, y) = ((idx % w) as i64, (idx / w) as i64);
            pixels.push((x as u32, y as u32));
            for &(dx, dy) in offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let nidx = ny as usize * w + nx as usize;
                if mask[nidx] && !visited[nidx] {
                    visited[nidx] = true;
                    queue.push_back(nidx);
                }
            }
        }
        if pixels.len() < cfg.min_area {
            continue;
        }
        pixels.sort_unstable_by_key(|&(x, y)| (y, x));
        components.push(build_component(pixels, res));
    }

    components.sort_by(|a, b| {
        b.area
            .cmp(&a.area)
            .then(a.bbox.x0.total_cmp(&b.bbox.x0))
            .then(a.bbox.y0.total_cmp(&b.bbox.y0))
    });
    components
}

fn build_component(pixels: Vec<(u32, u32)>, res: &ResidualSlice) -> Component {
    let area = pixels.len();
    let n = area as f64;
    let (mut min_x, mut min_y, mut max_x, mut max_y) = (u32::MAX, u32::MAX, 0u32, 0u32);
    let (mut sum_x, mut sum_y, mut sum_res) = (0f64, 0f64, 0f64);
    for &(x, y) in &pixels {
        min_x = min_x.min(x);
        min_y = min_y.min(y);
        max_x = max_x.max(x);
        max_y = max_y.max(y);
        sum_x += x as f64;
        sum_y += y as f64;
        sum_res += res.at(x, y) as f64;
    }
    let (mx, my) = (sum_x / n, sum_y / n);
    let (mut cxx, mut cyy, mut cxy) = (0f64, 0f64, 0f64);
    for &(x, y) in &pixels {
        let dx = x as f64 - mx;
        let dy = y as f64 - my;
        cxx += dx * dx;
        cyy += dy * dy;
        cxy += dx * dy;
    }
    // Each pixel is treated as a unit square (variance 1/12 per axis), so
    // even a single-pixel component has well-defined finite axes.
    cxx = cxx / n + 1.0 / 12.0;
    cyy = cyy / n + 1.0 / 12.0;
    cxy /= n;
    let half_trace = (cxx + cyy) / 2.0;
    let spread = (((cxx - cyy) / 2.0).powi(2) + cxy * cxy).sqrt();
    let l1 = half_trace + spread;
    let l2 = (half_trace - spread).max(1e-12);
    Component {
        pixels,
        area,
        bbox: AbsRect {
            x0: min_x as f64,
            y0: min_y as f64,
            x1: (max_x + 1) as f64,
            y1: (max_y + 1) as f64,
        },
        mean_residual: sum_res / n,
        elongation: (l1 / l2).sqrt(),
        touches_surface: false,
    }
}

/// Whether the component's bbox comes within `band` rows of the surface
/// profile anywhere along its columns.
fn surface_contact(bbox: &AbsRect, surface: &SurfaceProfile, band: u32) -> bool {
    let col_lo = bbox.x0.floor().max(0.0) as usize;
    let col_hi = (bbox.x1.ceil() as usize).min(surface.width());
    for col in col_lo..col_hi {
        if let Some(row) = surface.row(col as u32) {
            let lo = row as f64 - band as f64;
            let hi = row as f64 + band as f64;
            if bbox.y0 <= hi && bbox.y1 > lo {
                return true;
            }
        }
    }
    false
}

/// Rule-based class assignment, in priority order: near the surface →
/// surface irregularity; elongated → crack; bright → agglomerate;
/// otherwise a void.
pub fn classify_component(
    c: &Component,
    surface: &SurfaceProfile,
    cfg: &DetectorConfig,
) -> DefectClass {
    if c.touches_surface || surface_contact(&c.bbox, surface, cfg.surface_band) {
        DefectClass::SurfaceIrregularity
    } else if c.elongation >= cfg.crack_elongation {
        DefectClass::Crack
    } else if c.mean_residual > 0.0 {
        DefectClass::Agglomerate
    } else {
        DefectClass::Void
    }
}

fn detect_prepared(
    slice: SliceView<'_>,
    cfg: &DetectorConfig,
    given_surface: Option<&SurfaceProfile>,
) -> Result<Vec<Prediction>> {
    cfg.validate()?;
    let denoised = median_filter(&normalize(slice), cfg.median_k)?;
    let computed;
    let surface = match given_surface {
        Some(s) => s,
        None => {
            computed = find_surface(&denoised, cfg.surface_theta);
            &computed
        }
    };
    let res = anomaly_map(&denoised, cfg)?;
    let sigma = res.sigma();
    let mut components = threshold_components(&res, cfg);
    let (w, h) = (slice.width() as f64, slice.height() as f64);

    let mut out = Vec::with_capacity(components.len());
    for c in &mut components {
        c.touches_surface = surface_contact(&c.bbox, surface, cfg.surface_band);
        let class = classify_component(c, surface, cfg);
        let confidence = (c.mean_residual.abs() / (cfg.z_thresh * sigma)).min(1.0);
        if confidence == 0.0 {
            continue;
        }
        let bbox = BoundingBox::new(
            (c.bbox.x0 + c.bbox.x1) / 2.0 / w,
            (c.bbox.y0 + c.bbox.y1) / 2.0 / h,
            c.bbox.width() / w,
            c.bbox.height() / h,
        )?;
        out.push(Prediction::new(slice.z(), class, bbox, confidence)?);
    }
    Ok(out)
}

/// Detect defects on one slice, given a precomputed surface profile:
/// normalize → denoise → background residual → threshold → classify.
/// Confidence is `min(1, |mean residual| / (z_thresh·σ))`; it is a
/// pragmatic normalization, not a probability.
pub fn detect_slice(
    slice: SliceView<'_>,
    surface: &SurfaceProfile,
    cfg: &DetectorConfig,
) -> Result<Vec<Prediction>> {
    detect_prepared(slice, cfg, Some(surface))
}

/// [`detect_slice`] with the surface profile computed from the denoised
/// slice itself at `cfg.surface_theta`.
pub fn detect_slice_auto(slice: SliceView<'_>, cfg: &DetectorConfig) -> Result<Vec<Prediction>> {
    detect_prepared(slice, cfg, None)
}

/// Detector output for a whole volume.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeDetection {
    /// Predictions ordered by slice, then component sort order.
    pub predictions: Vec<Prediction>,
    /// Mean wall-clock per slice in milliseconds, when timing was requested.
    /// The first three slices warm caches and are excluded from the mean
    /// (unless the volume is too shallow to spare them).
    pub inference_ms_per_slice: Option<f64>,
}

/// Run the detector over every slice. With `timed` the slices run
/// sequentially and per-slice wall-clock is averaged; otherwise slices are
/// processed in parallel on the current rayon pool. Results are identical
/// either way.
pub fn detect_volume(v: &Volume, cfg: &DetectorConfig, timed: bool) -> Result<VolumeDetection> {
    cfg.validate()?;
    if timed {
        let mut predictions = Vec::new();
        let mut times = Vec::with_capacity(v.depth() as usize);
        for z in 0..v.depth() {
            let start = Instant::now();
            let preds = detect_slice_auto(v.slice(z)?, cfg)?;
            times.push(start.elapsed().as_secs_f64() * 1e3);
            predictions.extend(preds);
        }
        let warm_up = if times.len() > 3 { 3 } else { 0 };
        let measured = &times[warm_up..];
        let mean = measured.iter().sum::<f64>() / measured.len() as f64;
        Ok(VolumeDetection {
            predictions,
            inference_ms_per_slice: Some(mean),
        })
    } else {
        let per_slice: Vec<Vec<Prediction>> = (0..v.depth())
            .into_par_iter()
            .map(|z| detect_slice_auto(v.slice(z)?, cfg))
            .collect::<Result<_>>()?;
        Ok(VolumeDetection {
            predictions: per_slice.into_iter().flatten().collect(),
            inference_ms_per_slice: None,
        })
    }
}
