//! Seeded generator of OCT-like volumes with injected defects and exact
//! per-slice ground truth.
//!
//! The random stream is pinned to a specific algorithm (SplitMix64 for
//! uniforms, Box-Muller for gaussians) so a given config produces
//! bit-identical volumes and annotations on every platform.
//!
//! Scene model: air (near-zero intensity) above a per-column surface
//! height, exponentially attenuated material below it. Voids are dark
//! flat-contrast ellipsoids, cracks dark dilated segments repeated over a
//! few slices, agglomerates bright 3D Gaussian blobs, and surface
//! irregularities raised-cosine bumps of the surface height itself.
//! Placement is rejection-sampled so defects never overlap; every slice
//! where a defect's footprint covers at least 4 pixels gets a tight
//! ground-truth box.

use serde::Serialize;

use crate::annotation::{Annotation, BoundingBox, DefectClass};
use crate::error::{Error, Result};
use crate::volume::Volume;

/// Intensity of air above the surface, before noise.
const AIR_LEVEL: f64 = 0.02;
/// Minimum in-plane distance kept between a defect and the slice border.
const EDGE_MARGIN: f64 = 8.0;
/// Extra rows kept between the surface and any sub-surface defect, on top
/// of the defect's own half-extent, so off-surface defects never read as
/// surface contact downstream.
const SURFACE_CLEARANCE: f64 = 12.0;
/// Inflation applied to 3D bounding boxes during overlap rejection.
const PLACEMENT_GAP_XY: f64 = 3.0;
const PLACEMENT_GAP_Z: f64 = 1.0;
/// Placement attempts per defect before giving up.
const MAX_PLACEMENT_RETRIES: usize = 1000;
/// A slice annotation is emitted only when the footprint covers at least
/// this many pixels.
const MIN_FOOTPRINT_PX: usize = 4;

/// SplitMix64: the pinned uniform generator.
///
/// state += 0x9E3779B97F4A7C15; z = state;
/// z = (z ^ (z >> 30)) · 0xBF58476D1CE4E5B9;
/// z = (z ^ (z >> 27)) · 0x94D049BB133111EB;
/// output = z ^ (z >> 31)
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1): the high 53 bits over 2^53.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in [lo, hi].
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [lo, hi] via modulo (bias is irrelevant here and
    /// the reduction keeps the algorithm one line).
    pub fn range_u32(&mut self, lo: u32, hi: u32) -> u32 {
        lo + (self.next_u64() % (hi - lo + 1) as u64) as u32
    }

    /// Standard gaussian via Box-Muller: sqrt(−2·ln(1−u1))·cos(2π·u2).
    /// The second variate of the pair is discarded.
    pub fn gauss(&mut self) -> f64 {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// What to inject, per defect class. All sizes are in pixels; ranges are
/// inclusive (lo, hi) pairs sampled uniformly.
#[derive(Debug, Clone, PartialEq)]
pub enum DefectSpec {
    /// Dark ellipsoids. `contrast` must be negative.
    Voids {
        count: usize,
        contrast: f64,
        rx: (f64, f64),
        ry: (f64, f64),
        rz: (f64, f64),
    },
    /// Dark dilated segments repeated across a run of slices.
    /// `contrast` must be negative.
    Cracks {
        count: usize,
        contrast: f64,
        length: (f64, f64),
        thickness: (f64, f64),
        orientation_deg: (f64, f64),
        slices: (u32, u32),
    },
    /// Bright 3D Gaussian blobs. `contrast` must be positive.
    Agglomerates {
        count: usize,
        contrast: f64,
        sigma_xy: (f64, f64),
        sigma_z: (f64, f64),
    },
    /// Raised-cosine bumps of the surface height.
    SurfaceBumps {
        count: usize,
        height: (f64, f64),
        width: (f64, f64),
    },
}

impl DefectSpec {
    pub fn class(&self) -> DefectClass {
        match self {
            DefectSpec::Voids { .. } => DefectClass::Void,
            DefectSpec::Cracks { .. } => DefectClass::Crack,
            DefectSpec::SurfaceBumps { .. } => DefectClass::SurfaceIrregularity,
            DefectSpec::Agglomerates { .. } => DefectClass::Agglomerate,
        }
    }

    pub fn count(&self) -> usize {
        match *self {
            DefectSpec::Voids { count, .. }
            | DefectSpec::Cracks { count, .. }
            | DefectSpec::Agglomerates { count, .. }
            | DefectSpec::SurfaceBumps { count, .. } => count,
        }
    }

    /// Signed intensity amplitude; bumps move geometry, not intensity.
    pub fn contrast(&self) -> Option<f64> {
        match *self {
            DefectSpec::Voids { contrast, .. }
            | DefectSpec::Cracks { contrast, .. }
            | DefectSpec::Agglomerates { contrast, .. } => Some(contrast),
            DefectSpec::SurfaceBumps { .. } => None,
        }
    }

    /// Voids with stock size ranges (in-plane semi-axes 5..9 px).
    pub fn default_voids(count: usize, contrast_magnitude: f64) -> Self {
        DefectSpec::Voids {
            count,
            contrast: -contrast_magnitude,
            rx: (5.0, 9.0),
            ry: (5.0, 9.0),
            rz: (1.0, 2.5),
        }
    }

    /// Cracks with stock ranges (24..40 px long, 2..3.5 px thick).
    pub fn default_cracks(count: usize, contrast_magnitude: f64) -> Self {
        DefectSpec::Cracks {
            count,
            contrast: -contrast_magnitude,
            length: (24.0, 40.0),
            thickness: (2.0, 3.5),
            orientation_deg: (0.0, 180.0),
            slices: (2, 4),
        }
    }

    /// Agglomerates with stock ranges (σ 3..5 px in plane).
    pub fn default_agglomerates(count: usize, contrast_magnitude: f64) -> Self {
        DefectSpec::Agglomerates {
            count,
            contrast: contrast_magnitude,
            sigma_xy: (3.0, 5.0),
            sigma_z: (1.0, 2.0),
        }
    }

    /// Surface bumps with stock ranges (3..6 rows high, 8..16 px wide).
    pub fn default_bumps(count: usize) -> Self {
        DefectSpec::SurfaceBumps {
            count,
            height: (3.0, 6.0),
            width: (8.0, 16.0),
        }
    }
}

/// Recipe for one synthetic volume.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Volume id carried into the generated [`Volume`].
    pub id: String,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub depth: u32,
    /// Baseline row of the air/material interface.
    pub surface_row: f64,
    /// Per-row exponential intensity decay below the surface.
    pub attenuation_alpha: f64,
    /// Gaussian noise level; additive, or multiplicative with `speckle`.
    pub noise_sigma: f64,
    pub speckle: bool,
    pub defects: Vec<DefectSpec>,
}

impl SynthConfig {
    /// Config with stock scene parameters and no defects.
    pub fn new(id: impl Into<String>, seed: u64, width: u32, height: u32, depth: u32) -> Self {
        Self {
            id: id.into(),
            seed,
            width,
            height,
            depth,
            surface_row: height as f64 / 8.0,
            attenuation_alpha: 0.004,
            noise_sigma: 0.05,
            speckle: false,
            defects: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::BadConfig(msg));
        if self.width < 32 || self.height < 32 {
            return fail(format!(
                "slice dims {}x{} too small, need at least 32x32",
                self.width, self.height
            ));
        }
        if self.depth < 1 {
            return fail("depth must be at least 1".into());
        }
        if !(0.0..0.5).contains(&self.noise_sigma) {
            return fail(format!("noise_sigma {} outside [0, 0.5)", self.noise_sigma));
        }
        if !(1.0..=self.height as f64 - 2.0).contains(&self.surface_row) {
            return fail(format!(
                "surface_row {} outside [1, height-2]",
                self.surface_row
            ));
        }
        if self.attenuation_alpha < 0.0 {
            return fail(format!("attenuation_alpha {} negative", self.attenuation_alpha));
        }
        for spec in &self.defects {
            self.validate_spec(spec)?;
        }
        Ok(())
    }

    // The negated float comparison deliberately rejects NaN contrasts.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    fn validate_spec(&self, spec: &DefectSpec) -> Result<()> {
        let fail = |msg: String| Err(Error::BadConfig(msg));
        let range_ok = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi.is_finite();
        if let Some(c) = spec.contrast() {
            if !(c.abs() <= 1.0) || c == 0.0 {
                return fail(format!("contrast {c} outside [-1, 1] or zero"));
            }
        }
        // Worst-case half extents; checked against the volume so placement
        // can only fail by crowding, never by geometry.
        let (half_x, half_y, half_z): (f64, f64, f64);
        match *spec {
            DefectSpec::Voids { contrast, rx, ry, rz, .. } => {
                if contrast >= 0.0 {
                    return fail("void contrast must be negative (dark)".into());
                }
                if !(range_ok(rx) && range_ok(ry) && range_ok(rz)) {
                    return fail("void semi-axis ranges must be positive and ordered".into());
                }
                (half_x, half_y, half_z) = (rx.1, ry.1, rz.1);
            }
            DefectSpec::Cracks { contrast, length, thickness, orientation_deg, slices, .. } => {
                if contrast >= 0.0 {
                    return fail("crack contrast must be negative (dark)".into());
                }
                if !(range_ok(length) && range_ok(thickness)) {
                    return fail("crack size ranges must be positive and ordered".into());
                }
                if orientation_deg.0 > orientation_deg.1 {
                    return fail("crack orientation range must be ordered".into());
                }
                if slices.0 < 1 || slices.0 > slices.1 || slices.1 > self.depth {
                    return fail("crack slice-extent range must fit the volume depth".into());
                }
                let h = (length.1 + thickness.1) / 2.0;
                (half_x, half_y, half_z) = (h, h, 0.0);
            }
            DefectSpec::Agglomerates { contrast, sigma_xy, sigma_z, .. } => {
                if contrast <= 0.0 {
                    return fail("agglomerate contrast must be positive (bright)".into());
                }
                if !(range_ok(sigma_xy) && range_ok(sigma_z)) {
                    return fail("agglomerate sigma ranges must be positive and ordered".into());
                }
                let hz = sigma_z.1 * (2.0 * 2.0f64.ln()).sqrt();
                (half_x, half_y, half_z) = (2.0 * sigma_xy.1, 2.0 * sigma_xy.1, hz);
            }
            DefectSpec::SurfaceBumps { height, width, .. } => {
                if !(range_ok(height) && range_ok(width)) {
                    return fail("bump ranges must be positive and ordered".into());
                }
                if height.1 > self.surface_row - 1.0 {
                    return fail(format!(
                        "bump height {} would push the surface above row 1",
                        height.1
                    ));
                }
                (half_x, half_y, half_z) = (width.1 / 2.0, 0.0, 0.0);
            }
        }
        let (wf, hf, df) = (
            self.width as f64 - 1.0,
            self.height as f64 - 1.0,
            self.depth as f64 - 1.0,
        );
        let fits_x = 2.0 * (half_x + EDGE_MARGIN) <= wf;
        // Bumps live on the surface; everything else sits below it with
        // clearance.
        let fits_y = half_y == 0.0
            || self.surface_row + half_y + SURFACE_CLEARANCE <= hf - half_y - EDGE_MARGIN;
        let fits_z = 2.0 * half_z <= df;
        if !(fits_x && fits_y && fits_z) {
            return fail(format!("{:?} defect cannot fit the volume", spec.class()));
        }
        Ok(())
    }
}

/// Mean |contrast| over all injected defects divided by the noise level:
/// the knob acceptance fixtures are parameterized by.
pub fn snr_of(cfg: &SynthConfig) -> Result<f64> {
    cfg.validate()?;
    if cfg.noise_sigma == 0.0 {
        return Err(Error::BadConfig("snr undefined at noise_sigma 0".into()));
    }
    let (mut total, mut n) = (0.0f64, 0usize);
    for spec in &cfg.defects {
        if let Some(c) = spec.contrast() {
            total += c.abs() * spec.count() as f64;
            n += spec.count();
        }
    }
    if n == 0 {
        return Err(Error::BadConfig(
            "snr needs at least one contrast-bearing defect".into(),
        ));
    }
    Ok(total / n as f64 / cfg.noise_sigma)
}

/// A placed defect with its exact 3D parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum PlacedDefect {
    Void {
        cx: f64,
        cy: f64,
        cz: f64,
        ax: f64,
        ay: f64,
        az: f64,
        contrast: f64,
    },
    Crack {
        cx: f64,
        cy: f64,
        theta_deg: f64,
        half_len: f64,
        half_thick: f64,
        z0: u32,
        z1: u32,
        contrast: f64,
    },
    Agglomerate {
        cx: f64,
        cy: f64,
        cz: f64,
        sigma_xy: f64,
        sigma_z: f64,
        contrast: f64,
    },
    SurfaceBump {
        cx: f64,
        cz: f64,
        height: f64,
        radius: f64,
    },
}

impl PlacedDefect {
    pub fn class(&self) -> DefectClass {
        match self {
            PlacedDefect::Void { .. } => DefectClass::Void,
            PlacedDefect::Crack { .. } => DefectClass::Crack,
            PlacedDefect::SurfaceBump { .. } => DefectClass::SurfaceIrregularity,
            PlacedDefect::Agglomerate { .. } => DefectClass::Agglomerate,
        }
    }

    /// Inflated axis-aligned 3D bounds used for overlap rejection:
    /// (x0, x1, y0, y1, z0, z1).
    fn bounds(&self) -> (f64, f64, f64, f64, f64, f64) {
        let (x0, x1, y0, y1, z0, z1) = match *self {
            PlacedDefect::Void { cx, cy, cz, ax, ay, az, .. } => {
                (cx - ax, cx + ax, cy - ay, cy + ay, cz - az, cz + az)
            }
            PlacedDefect::Crack { cx, cy, theta_deg, half_len, half_thick, z0, z1, .. } => {
                let (hx, hy) = crack_half_extent(theta_deg, half_len, half_thick);
                (cx - hx, cx + hx, cy - hy, cy + hy, z0 as f64, z1 as f64)
            }
            PlacedDefect::Agglomerate { cx, cy, cz, sigma_xy, sigma_z, .. } => {
                let r = 2.0 * sigma_xy;
                (cx - r, cx + r, cy - r, cy + r, cz - 2.0 * sigma_z, cz + 2.0 * sigma_z)
            }
            PlacedDefect::SurfaceBump { cx, cz, height, radius } => (
                cx - radius,
                cx + radius,
                // Stand-in row band near the top of the volume. Bump-bump
                // overlap is then decided purely by x/z (both bands contain
                // row 0), and sub-surface defects sit at least
                // SURFACE_CLEARANCE below the surface so the bands stay
                // disjoint from theirs.
                -height,
                height,
                cz - radius,
                cz + radius,
            ),
        };
        (
            x0 - PLACEMENT_GAP_XY,
            x1 + PLACEMENT_GAP_XY,
            y0 - PLACEMENT_GAP_XY,
            y1 + PLACEMENT_GAP_XY,
            z0 - PLACEMENT_GAP_Z,
            z1 + PLACEMENT_GAP_Z,
        )
    }

    fn overlaps(&self, other: &PlacedDefect) -> bool {
        let a = self.bounds();
        let b = other.bounds();
        a.0 < b.1 && b.0 < a.1 && a.2 < b.3 && b.2 < a.3 && a.4 < b.5 && b.4 < a.5
    }
}

fn crack_half_extent(theta_deg: f64, half_len: f64, half_thick: f64) -> (f64, f64) {
    let theta = theta_deg.to_radians();
    (
        theta.cos().abs() * half_len + half_thick,
        theta.sin().abs() * half_len + half_thick,
    )
}

/// Everything `generate` produces for one volume.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub volume: Volume,
    /// Per-slice ground-truth boxes, ordered by slice then placement order.
    pub annotations: Vec<Annotation>,
    /// The placed defects with exact 3D parameters.
    pub defects: Vec<PlacedDefect>,
    /// Surface height per (x, z) column, indexed `z·width + x`.
    pub surface: Vec<f64>,
}

impl SynthOutput {
    pub fn surface_at(&self, x: u32, z: u32) -> f64 {
        self.surface[z as usize * self.volume.width() as usize + x as usize]
    }
}

/// Generate one volume. Deterministic: a fixed config yields bit-identical
/// voxels, annotations and defect metadata.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = SplitMix64::new(cfg.seed);
    let defects = place_defects(cfg, &mut rng)?;
    let surface = surface_field(cfg, &defects);

    let (w, h, d) = (cfg.width as usize, cfg.height as usize, cfg.depth as usize);
    let mut values = vec![0.0f64; w * h * d];
    for z in 0..d {
        for x in 0..w {
            let surf = surface[z * w + x];
            for y in 0..h {
                let v = if (y as f64) < surf {
                    AIR_LEVEL
                } else {
                    (-cfg.attenuation_alpha * (y as f64 - surf)).exp()
                };
                values[(z * h + y) * w + x] = v;
            }
        }
    }
    for defect in &defects {
        paint_defect(cfg, defect, &mut values);
    }
    if cfg.noise_sigma > 0.0 {
        for v in values.iter_mut() {
            let g = rng.gauss() * cfg.noise_sigma;
            *v = if cfg.speckle { *v * (1.0 + g) } else { *v + g };
        }
    }
    let voxels: Vec<u16> = values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u16)
        .collect();
    let volume = Volume::new(cfg.id.clone(), cfg.width, cfg.height, cfg.depth, 8, voxels)?;

    let mut annotations = Vec::new();
    for defect in &defects {
        annotations.extend(annotate_defect(cfg, defect)?);
    }
    annotations.sort_by_key(|a| a.slice_index);

    Ok(SynthOutput {
        volume,
        annotations,
        defects,
        surface,
    })
}

fn place_defects(cfg: &SynthConfig, rng: &mut SplitMix64) -> Result<Vec<PlacedDefect>> {
    let mut placed: Vec<PlacedDefect> = Vec::new();
    let mut index = 0usize;
    for spec in &cfg.defects {
        for _ in 0..spec.count() {
            let mut accepted = None;
            for _ in 0..MAX_PLACEMENT_RETRIES {
                let candidate = sample_defect(cfg, spec, rng)?;
                if placed.iter().all(|p| !candidate.overlaps(p)) {
                    accepted = Some(candidate);
                    break;
                }
            }
            match accepted {
                Some(d) => placed.push(d),
                None => {
                    return Err(Error::PlacementOverflow {
                        index,
                        retries: MAX_PLACEMENT_RETRIES,
                    })
                }
            }
            index += 1;
        }
    }
    Ok(placed)
}

/// Uniform center in [lo, hi]; an empty interval means the defect cannot
/// fit the volume at all.
fn center_range(rng: &mut SplitMix64, lo: f64, hi: f64, what: &str) -> Result<f64> {
    if lo > hi {
        return Err(Error::BadConfig(format!("{what} does not fit the volume")));
    }
    Ok(rng.range(lo, hi))
}

fn sample_defect(cfg: &SynthConfig, spec: &DefectSpec, rng: &mut SplitMix64) -> Result<PlacedDefect> {
    let (wf, hf, df) = (
        cfg.width as f64 - 1.0,
        cfg.height as f64 - 1.0,
        cfg.depth as f64 - 1.0,
    );
    match *spec {
        DefectSpec::Voids { contrast, rx, ry, rz, .. } => {
            let ax = rng.range(rx.0, rx.1);
            let ay = rng.range(ry.0, ry.1);
            let az = rng.range(rz.0, rz.1);
            let cx = center_range(rng, ax + EDGE_MARGIN, wf - ax - EDGE_MARGIN, "void")?;
            let cy = center_range(
                rng,
                cfg.surface_row + ay + SURFACE_CLEARANCE,
                hf - ay - EDGE_MARGIN,
                "void",
            )?;
            let cz = center_range(rng, az, df - az, "void")?;
            Ok(PlacedDefect::Void { cx, cy, cz, ax, ay, az, contrast })
        }
        DefectSpec::Cracks { contrast, length, thickness, orientation_deg, slices, .. } => {
            let half_len = rng.range(length.0, length.1) / 2.0;
            let half_thick = rng.range(thickness.0, thickness.1) / 2.0;
            let theta_deg = rng.range(orientation_deg.0, orientation_deg.1);
            let span = rng.range_u32(slices.0, slices.1);
            let (hx, hy) = crack_half_extent(theta_deg, half_len, half_thick);
            let cx = center_range(rng, hx + EDGE_MARGIN, wf - hx - EDGE_MARGIN, "crack")?;
            let cy = center_range(
                rng,
                cfg.surface_row + hy + SURFACE_CLEARANCE,
                hf - hy - EDGE_MARGIN,
                "crack",
            )?;
            let z0 = rng.range_u32(0, cfg.depth - span);
            Ok(PlacedDefect::Crack {
                cx,
                cy,
                theta_deg,
                half_len,
                half_thick,
                z0,
                z1: z0 + span - 1,
                contrast,
            })
        }
        DefectSpec::Agglomerates { contrast, sigma_xy, sigma_z, .. } => {
            let sxy = rng.range(sigma_xy.0, sigma_xy.1);
            let sz = rng.range(sigma_z.0, sigma_z.1);
            let r = 2.0 * sxy;
            let cx = center_range(rng, r + EDGE_MARGIN, wf - r - EDGE_MARGIN, "agglomerate")?;
            let cy = center_range(
                rng,
                cfg.surface_row + r + SURFACE_CLEARANCE,
                hf - r - EDGE_MARGIN,
                "agglomerate",
            )?;
            let hz = (sz * (2.0f64.ln() * 2.0).sqrt()).min(df / 2.0);
            let cz = center_range(rng, hz, df - hz, "agglomerate")?;
            Ok(PlacedDefect::Agglomerate { cx, cy, cz, sigma_xy: sxy, sigma_z: sz, contrast })
        }
        DefectSpec::SurfaceBumps { height, width, .. } => {
            let bump_height = rng.range(height.0, height.1);
            let radius = rng.range(width.0, width.1) / 2.0;
            let cx = center_range(rng, radius + EDGE_MARGIN, wf - radius - EDGE_MARGIN, "bump")?;
            let cz = center_range(rng, 0.0, df, "bump")?;
            Ok(PlacedDefect::SurfaceBump { cx, cz, height: bump_height, radius })
        }
    }
}

/// Raised-cosine bump weight at distance r for a bump of the given radius.
fn bump_weight(r: f64, radius: f64) -> f64 {
    if r >= radius {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * r / radius).cos())
    }
}

fn surface_field(cfg: &SynthConfig, defects: &[PlacedDefect]) -> Vec<f64> {
    let (w, d) = (cfg.width as usize, cfg.depth as usize);
    let mut field = vec![cfg.surface_row; w * d];
    for defect in defects {
        if let PlacedDefect::SurfaceBump { cx, cz, height, radius } = *defect {
            let x_lo = ((cx - radius).floor().max(0.0)) as usize;
            let x_hi = ((cx + radius).ceil() as usize).min(w - 1);
            let z_lo = ((cz - radius).floor().max(0.0)) as usize;
            let z_hi = ((cz + radius).ceil() as usize).min(d - 1);
            for z in z_lo..=z_hi {
                for x in x_lo..=x_hi {
                    let r = ((x as f64 - cx).powi(2) + (z as f64 - cz).powi(2)).sqrt();
                    field[z * w + x] -= height * bump_weight(r, radius);
                }
            }
        }
    }
    field
}

/// In-plane footprint scale of an ellipsoid at slice z: the squared
/// remaining fraction of the semi-axes, or `None` past the poles.
fn void_scale_sq(cz: f64, az: f64, z: f64) -> Option<f64> {
    let t = (z - cz) / az;
    let s = 1.0 - t * t;
    (s > 0.0).then_some(s)
}

fn inside_void(d: &PlacedDefect, x: f64, y: f64, z: f64) -> bool {
    let PlacedDefect::Void { cx, cy, cz, ax, ay, az, .. } = *d else {
        return false;
    };
    let dx = (x - cx) / ax;
    let dy = (y - cy) / ay;
    let dz = (z - cz) / az;
    dx * dx + dy * dy + dz * dz <= 1.0
}

fn inside_crack(d: &PlacedDefect, x: f64, y: f64) -> bool {
    let PlacedDefect::Crack { cx, cy, theta_deg, half_len, half_thick, .. } = *d else {
        return false;
    };
    let theta = theta_deg.to_radians();
    let (ux, uy) = (theta.cos(), theta.sin());
    // Distance from (x, y) to the centered segment of direction (ux, uy).
    let (px, py) = (x - cx, y - cy);
    let t = (px * ux + py * uy).clamp(-half_len, half_len);
    let (qx, qy) = (px - t * ux, py - t * uy);
    qx * qx + qy * qy <= half_thick * half_thick
}

/// Gaussian exponent q = Σ dᵢ²/σᵢ²; the blob's half-max footprint is
/// q ≤ 2·ln 2.
fn agglomerate_q(d: &PlacedDefect, x: f64, y: f64, z: f64) -> f64 {
    let PlacedDefect::Agglomerate { cx, cy, cz, sigma_xy, sigma_z, .. } = *d else {
        return f64::INFINITY;
    };
    let dx = (x - cx) / sigma_xy;
    let dy = (y - cy) / sigma_xy;
    let dz = (z - cz) / sigma_z;
    dx * dx + dy * dy + dz * dz
}

fn paint_defect(cfg: &SynthConfig, defect: &PlacedDefect, values: &mut [f64]) {
    let (w, h, d) = (cfg.width as usize, cfg.height as usize, cfg.depth as usize);
    let clamp_box = |lo: f64, hi: f64, max: usize| -> (usize, usize) {
        (
            lo.floor().max(0.0) as usize,
            (hi.ceil() as usize).min(max - 1),
        )
    };
    match *defect {
        PlacedDefect::Void { cx, cy, cz, ax, ay, az, contrast } => {
            let (z0, z1) = clamp_box(cz - az, cz + az, d);
            let (y0, y1) = clamp_box(cy - ay, cy + ay, h);
            let (x0, x1) = clamp_box(cx - ax, cx + ax, w);
            for z in z0..=z1 {
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        if inside_void(defect, x as f64, y as f64, z as f64) {
                            values[(z * h + y) * w + x] += contrast;
                        }
                    }
                }
            }
        }
        PlacedDefect::Crack { cx, cy, theta_deg, half_len, half_thick, z0, z1, contrast } => {
            let (hx, hy) = crack_half_extent(theta_deg, half_len, half_thick);
            let (y0, y1) = clamp_box(cy - hy, cy + hy, h);
            let (x0, x1) = clamp_box(cx - hx, cx + hx, w);
            for z in z0 as usize..=(z1 as usize).min(d - 1) {
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        if inside_crack(defect, x as f64, y as f64) {
                            values[(z * h + y) * w + x] += contrast;
                        }
                    }
                }
            }
        }
        PlacedDefect::Agglomerate { cx, cy, cz, sigma_xy, sigma_z, contrast } => {
            let (z0, z1) = clamp_box(cz - 4.0 * sigma_z, cz + 4.0 * sigma_z, d);
            let (y0, y1) = clamp_box(cy - 4.0 * sigma_xy, cy + 4.0 * sigma_xy, h);
            let (x0, x1) = clamp_box(cx - 4.0 * sigma_xy, cx + 4.0 * sigma_xy, w);
            for z in z0..=z1 {
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        let q = agglomerate_q(defect, x as f64, y as f64, z as f64);
                        values[(z * h + y) * w + x] += contrast * (-q / 2.0).exp();
                    }
                }
            }
        }
        // Bumps act through the surface field; nothing to paint here.
        PlacedDefect::SurfaceBump { .. } => {}
    }
}

/// Tight integer bbox and area of a defect's footprint on one slice.
struct Footprint {
    min_x: u32,
    min_y: u32,
    max_x: u32,
    max_y: u32,
    area: usize,
}

impl Footprint {
    fn new() -> Self {
        Self {
            min_x: u32::MAX,
            min_y: u32::MAX,
            max_x: 0,
            max_y: 0,
            area: 0,
        }
    }

    fn add(&mut self, x: u32, y: u32) {
        self.min_x = self.min_x.min(x);
        self.min_y = self.min_y.min(y);
        self.max_x = self.max_x.max(x);
        self.max_y = self.max_y.max(y);
        self.area += 1;
    }

    fn to_annotation(&self, cfg: &SynthConfig, z: u32, class: DefectClass) -> Result<Option<Annotation>> {
        if self.area < MIN_FOOTPRINT_PX {
            return Ok(None);
        }
        let (w, h) = (cfg.width as f64, cfg.height as f64);
        let (x0, x1) = (self.min_x as f64, (self.max_x + 1) as f64);
        let (y0, y1) = (self.min_y as f64, (self.max_y + 1) as f64);
        let bbox = BoundingBox::new(
            (x0 + x1) / 2.0 / w,
            (y0 + y1) / 2.0 / h,
            (x1 - x0) / w,
            (y1 - y0) / h,
        )?;
        Ok(Some(Annotation {
            slice_index: z,
            class,
            bbox,
        }))
    }
}

fn annotate_defect(cfg: &SynthConfig, defect: &PlacedDefect) -> Result<Vec<Annotation>> {
    let (w, h, d) = (cfg.width, cfg.height, cfg.depth);
    let mut out = Vec::new();
    let mut emit = |fp: &Footprint, z: u32| -> Result<()> {
        if let Some(a) = fp.to_annotation(cfg, z, defect.class())? {
            out.push(a);
        }
        Ok(())
    };
    match *defect {
        PlacedDefect::Void { cx, cy, cz, ax, ay, az, .. } => {
            let z_lo = ((cz - az).ceil().max(0.0)) as u32;
            let z_hi = ((cz + az).floor() as u32).min(d - 1);
            for z in z_lo..=z_hi {
                if void_scale_sq(cz, az, z as f64).is_none() {
                    continue;
                }
                let mut fp = Footprint::new();
                let y_lo = ((cy - ay).floor().max(0.0)) as u32;
                let y_hi = ((cy + ay).ceil() as u32).min(h - 1);
                let x_lo = ((cx - ax).floor().max(0.0)) as u32;
                let x_hi = ((cx + ax).ceil() as u32).min(w - 1);
                for y in y_lo..=y_hi {
                    for x in x_lo..=x_hi {
                        if inside_void(defect, x as f64, y as f64, z as f64) {
                            fp.add(x, y);
                        }
                    }
                }
                emit(&fp, z)?;
            }
        }
        PlacedDefect::Crack { cx, cy, theta_deg, half_len, half_thick, z0, z1, .. } => {
            let (hx, hy) = crack_half_extent(theta_deg, half_len, half_thick);
            let mut fp = Footprint::new();
            let y_lo = ((cy - hy).floor().max(0.0)) as u32;
            let y_hi = ((cy + hy).ceil() as u32).min(h - 1);
            let x_lo = ((cx - hx).floor().max(0.0)) as u32;
            let x_hi = ((cx + hx).ceil() as u32).min(w - 1);
            for y in y_lo..=y_hi {
                for x in x_lo..=x_hi {
                    if inside_crack(defect, x as f64, y as f64) {
                        fp.add(x, y);
                    }
                }
            }
            for z in z0..=z1.min(d - 1) {
                emit(&fp, z)?;
            }
        }
        PlacedDefect::Agglomerate { cx, cy, cz, sigma_xy, sigma_z, .. } => {
            let half_max = 2.0 * 2.0f64.ln();
            let hz = sigma_z * half_max.sqrt();
            let z_lo = ((cz - hz).ceil().max(0.0)) as u32;
            let z_hi = ((cz + hz).floor() as u32).min(d - 1);
            for z in z_lo..=z_hi {
                let mut fp = Footprint::new();
                let r = sigma_xy * half_max.sqrt();
                let y_lo = ((cy - r).floor().max(0.0)) as u32;
                let y_hi = ((cy + r).ceil() as u32).min(h - 1);
                let x_lo = ((cx - r).floor().max(0.0)) as u32;
                let x_hi = ((cx + r).ceil() as u32).min(w - 1);
                for y in y_lo..=y_hi {
                    for x in x_lo..=x_hi {
                        if agglomerate_q(defect, x as f64, y as f64, z as f64) <= half_max {
                            fp.add(x, y);
                        }
                    }
                }
                emit(&fp, z)?;
            }
        }
        PlacedDefect::SurfaceBump { cx, cz, height, radius } => {
            let base = cfg.surface_row;
            let z_lo = ((cz - radius).floor().max(0.0)) as u32;
            let z_hi = ((cz + radius).ceil() as u32).min(d - 1);
            for z in z_lo..=z_hi {
                let mut fp = Footprint::new();
                let x_lo = ((cx - radius).floor().max(0.0)) as u32;
                let x_hi = ((cx + radius).ceil() as u32).min(w - 1);
                for x in x_lo..=x_hi {
                    let r = ((x as f64 - cx).powi(2) + (z as f64 - cz).powi(2)).sqrt();
                    let lift = height * bump_weight(r, radius);
                    // Rows where material replaced air on this column.
                    let new_top = (base - lift).ceil() as i64;
                    let old_top = base.ceil() as i64;
                    for y in new_top..old_top {
                        if y >= 0 && (y as u32) < h {
                            fp.add(x, y as u32);
                        }
                    }
                }
                emit(&fp, z)?;
            }
        }
    }
    Ok(out)
}
