//! Deterministic slice conditioning: min-max normalization, median
//! filtering for speckle suppression, and threshold-based surface finding.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::volume::SliceView;

/// A slice of intensities in [0,1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatSlice {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl FloatSlice {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self> {
        if values.len() != width as usize * height as usize {
            return Err(Error::BadConfig(format!(
                "slice of {}x{} needs {} values, got {}",
                width,
                height,
                width as usize * height as usize,
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(Error::BadConfig(
                "slice values must be finite within [0,1]".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

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
        debug_assert!(x < self.width && y < self.height);
        self.values[y as usize * self.width as usize + x as usize]
    }
}

/// Per-column row of the first material interface; `None` where no column
/// pixel reaches the threshold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SurfaceProfile {
    rows: Vec<Option<u32>>,
}

impl SurfaceProfile {
    pub fn new(rows: Vec<Option<u32>>) -> Self {
        Self { rows }
    }

    pub fn width(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, col: u32) -> Option<u32> {
        self.rows[col as usize]
    }

    pub fn rows(&self) -> &[Option<u32>] {
        &self.rows
    }
}

/// Linear min-max stretch of a raw slice to [0,1]; a constant slice maps
/// to all zeros.
pub fn normalize(slice: SliceView<'_>) -> FloatSlice {
    let values = slice.values();
    let min = values.iter().copied().min().unwrap_or(0);
    let max = values.iter().copied().max().unwrap_or(0);
    let stretched: Vec<f32> = if min == max {
        vec![0.0; values.len()]
    } else {
        let span = (max - min) as f32;
        values.iter().map(|&v| (v - min) as f32 / span).collect()
    };
    FloatSlice {
        width: slice.width(),
        height: slice.height(),
        values: stretched,
    }
}

/// Min-max stretch of an already-float slice. Since the stretch maps min to
/// exactly 0 and max to exactly 1, applying it twice equals applying it
/// once, bit for bit.
pub fn normalize_floats(s: &FloatSlice) -> FloatSlice {
    let min = s.values.iter().copied().fold(f32::INFINITY, f32::min);
    let max = s.values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let values = if min == max {
        vec![0.0; s.values.len()]
    } else {
        let span = max - min;
        s.values.iter().map(|&v| (v - min) / span).collect()
    };
    FloatSlice {
        width: s.width,
        height: s.height,
        values,
    }
}

/// k×k median filter with replicate borders.
///
/// Exact: every output pixel is the true median of its (odd-sized) window,
/// and therefore one of the input values. Runs as a sliding histogram over
/// the slice's value ranks, so cost per pixel is O(k) plus amortized
/// rebalancing rather than O(k² log k) window sorts.
pub fn median_filter(s: &FloatSlice, k: u32) -> Result<FloatSlice> {
    let (w, h) = (s.width as usize, s.height as usize);
    if k == 0 || k.is_multiple_of(2) || k as usize > w.min(h) {
        return Err(Error::BadKernel {
            k,
            width: s.width,
            height: s.height,
        });
    }
    if k == 1 {
        return Ok(s.clone());
    }

    // Quantize to ranks over the slice's distinct values. total_cmp is used
    // throughout so -0.0 vs 0.0 cannot split a level between sort and search.
    let mut levels = s.values.clone();
    levels.sort_unstable_by(f32::total_cmp);
    levels.dedup_by(|a, b| a.total_cmp(b) == Ordering::Equal);
    let ranks: Vec<u32> = s
        .values
        .iter()
        .map(|v| {
            levels
                .binary_search_by(|l| l.total_cmp(v))
                .expect("every value has a level") as u32
        })
        .collect();

    // The histogram path counts in u16, so the kernel population k*k must fit.
    if levels.len() <= SMALL_ALPHABET_BINS && k <= 255 {
        return Ok(FloatSlice {
            width: s.width,
            height: s.height,
            values: median_small_alphabet(&ranks, &levels, w, h, k),
        });
    }

    let r = (k / 2) as isize;
    let target = k * k / 2;
    let clamp_x = |x: isize| x.clamp(0, w as isize - 1) as usize;
    let mut out = vec![0.0f32; w * h];
    let mut counts = vec![0u32; levels.len()];
    let mut rows = vec![0usize; k as usize];

    for y in 0..h {
        counts.fill(0);
        for (i, dy) in (-r..=r).enumerate() {
            rows[i] = (y as isize + dy).clamp(0, h as isize - 1) as usize;
        }
        for dx in -r..=r {
            let cx = clamp_x(dx);
            for &ry in &rows {
                counts[ranks[ry * w + cx] as usize] += 1;
            }
        }
        // `med` is the current median bin, `below` the number of window
        // entries in strictly lower bins.
        let mut med = 0usize;
        let mut below = 0u32;
        while below + counts[med] <= target {
            below += counts[med];
            med += 1;
        }
        out[y * w] = levels[med];

        for x in 1..w {
            let drop_col = clamp_x(x as isize - 1 - r);
            let add_col = clamp_x(x as isize + r);
            // Branchless below-counter updates: the comparisons depend on
            // pixel data and would mispredict constantly as branches.
            for &ry in &rows {
                let b = ranks[ry * w + add_col] as usize;
                counts[b] += 1;
                below += (b < med) as u32;
                let b = ranks[ry * w + drop_col] as usize;
                counts[b] -= 1;
                below -= (b < med) as u32;
            }
            while below > target {
                med -= 1;
                below -= counts[med];
            }
            while below + counts[med] <= target {
                below += counts[med];
                med += 1;
            }
            out[y * w + x] = levels[med];
        }
    }

    Ok(FloatSlice {
        width: s.width,
        height: s.height,
        values: out,
    })
}

/// Rank alphabets at most this large take the histogram-per-column path.
/// Volumes imported from 8-bit data never exceed it.
const SMALL_ALPHABET_BINS: usize = 256;

/// Median filter specialised for slices with at most 256 distinct values.
///
/// Keeps one 256-bin histogram per column covering the current k-row band,
/// plus a 16-bucket coarse summary. Sliding the kernel one pixel right then
/// costs two whole-histogram adds (tight fixed-length loops the compiler
/// vectorises) instead of 2k scattered updates, and the median is found by
/// walking at most 16 coarse plus 16 fine buckets. Border handling matches
/// the general path: indices are clamped, so edge rows and columns repeat.
fn median_small_alphabet(ranks: &[u32], levels: &[f32], w: usize, h: usize, k: u32) -> Vec<f32> {
    let r = (k / 2) as usize;
    let target = k * k / 2;
    let clamp_x = |x: usize, d: usize| (x + d).min(w - 1 + r).saturating_sub(r).min(w - 1);
    let mut out = vec![0.0f32; w * h];

    // Per-column histograms over rows y-r..=y+r (clamped), fine and coarse.
    let mut cols = vec![[0u16; 256]; w];
    let mut coarse_cols = vec![[0u16; 16]; w];
    for dy in 0..k as usize {
        let ry = dy.min(h - 1 + r).saturating_sub(r).min(h - 1);
        let row = &ranks[ry * w..ry * w + w];
        for (x, &b) in row.iter().enumerate() {
            cols[x][b as usize] += 1;
            coarse_cols[x][(b >> 4) as usize] += 1;
        }
    }

    let mut kern = [0u16; 256];
    let mut coarse = [0u16; 16];
    for y in 0..h {
        if y > 0 {
            // Shift the row band down by one: the multiset of clamped rows
            // gains clamp(y + r) and loses clamp(y - 1 - r).
            let add_row = (y + r).min(h - 1);
            let drop_row = (y - 1).saturating_sub(r);
            if add_row != drop_row {
                let add = &ranks[add_row * w..add_row * w + w];
                let drop = &ranks[drop_row * w..drop_row * w + w];
                for x in 0..w {
                    let a = add[x] as usize;
                    let d = drop[x] as usize;
                    cols[x][a] += 1;
                    cols[x][d] -= 1;
                    coarse_cols[x][a >> 4] += 1;
                    coarse_cols[x][d >> 4] -= 1;
                }
            }
        }

        kern.fill(0);
        coarse.fill(0);
        for dx in 0..k as usize {
            hist_add::<256>(&mut kern, &cols[clamp_x(0, dx)]);
        }
        for dx in 0..k as usize {
            hist_add::<16>(&mut coarse, &coarse_cols[clamp_x(0, dx)]);
        }

        let row_out = &mut out[y * w..y * w + w];
        row_out[0] = levels[select_bin(&kern, &coarse, target)];
        for (x, out_px) in row_out.iter_mut().enumerate().skip(1) {
            let add_col = clamp_x(x, k as usize - 1);
            let drop_col = clamp_x(x - 1, 0);
            hist_slide::<256>(&mut kern, &cols[add_col], &cols[drop_col]);
            hist_slide::<16>(&mut coarse, &coarse_cols[add_col], &coarse_cols[drop_col]);
            *out_px = levels[select_bin(&kern, &coarse, target)];
        }
    }
    out
}

#[inline]
fn hist_add<const N: usize>(kern: &mut [u16; N], add: &[u16; N]) {
    for i in 0..N {
        kern[i] = kern[i].wrapping_add(add[i]);
    }
}

#[inline]
fn hist_slide<const N: usize>(kern: &mut [u16; N], add: &[u16; N], drop: &[u16; N]) {
    // Wrapping keeps the loop free of overflow branches; the drop column is
    // part of the kernel before removal, so counts never actually go negative.
    for i in 0..N {
        kern[i] = kern[i].wrapping_add(add[i]).wrapping_sub(drop[i]);
    }
}

/// First bin whose cumulative count exceeds `target`, located via the
/// coarse buckets first.
#[inline]
fn select_bin(kern: &[u16; 256], coarse: &[u16; 16], target: u32) -> usize {
    let mut acc = 0u32;
    let mut seg = 0usize;
    while acc + coarse[seg] as u32 <= target {
        acc += coarse[seg] as u32;
        seg += 1;
    }
    let mut bin = seg * 16;
    while acc + kern[bin] as u32 <= target {
        acc += kern[bin] as u32;
        bin += 1;
    }
    bin
}

/// Per column, the smallest row whose intensity reaches `theta`.
/// `theta` must lie strictly between 0 and 1.
pub fn find_surface(s: &FloatSlice, theta: f32) -> SurfaceProfile {
    debug_assert!(theta > 0.0 && theta < 1.0);
    let (w, h) = (s.width as usize, s.height as usize);
    let rows = (0..w)
        .map(|col| (0..h).find(|&row| s.values[row * w + col] >= theta).map(|r| r as u32))
        .collect();
    SurfaceProfile { rows }
}
