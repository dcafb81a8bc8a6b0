//! Volume container and I/O.
//!
//! Volumes are stacks of grayscale slices stored voxel-per-voxel in the OVF
//! format: a fixed 20-byte header followed by the raw payload.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "OCTV"
//! 4       2     version, u16 little-endian, always 1
//! 6       1     bit depth, 8 or 16
//! 7       1     pad, always 0
//! 8       4     width  (u32 LE)
//! 12      4     height (u32 LE)
//! 16      4     depth  (u32 LE)
//! 20      ...   voxels, row-major within a slice, slices in z order;
//!               one byte each at bit depth 8, u16 LE at bit depth 16
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

const OVF_MAGIC: &[u8; 4] = b"OCTV";
const OVF_VERSION: u16 = 1;
const OVF_HEADER_LEN: usize = 20;

/// A 3D grayscale voxel container.
///
/// Voxels are indexed `z * width * height + y * width + x` and stored as
/// `u16` regardless of bit depth; every value is below `2^bit_depth`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Volume {
    id: String,
    width: u32,
    height: u32,
    depth: u32,
    bit_depth: u8,
    voxels: Vec<u16>,
}

impl Volume {
    pub fn new(
        id: impl Into<String>,
        width: u32,
        height: u32,
        depth: u32,
        bit_depth: u8,
        voxels: Vec<u16>,
    ) -> Result<Self> {
        let count = checked_voxel_count(width, height, depth)?;
        if bit_depth != 8 && bit_depth != 16 {
            return Err(Error::UnsupportedBitDepth(bit_depth));
        }
        if voxels.len() as u64 != count {
            return Err(Error::TruncatedFile {
                expected: count,
                actual: voxels.len() as u64,
            });
        }
        if bit_depth == 8 && voxels.iter().any(|&v| v > u8::MAX as u16) {
            return Err(Error::UnsupportedBitDepth(8));
        }
        Ok(Self {
            id: id.into(),
            width,
            height,
            depth,
            bit_depth,
            voxels,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn voxels(&self) -> &[u16] {
        &self.voxels
    }

    /// Largest value representable at this volume's bit depth.
    pub fn max_value(&self) -> u16 {
        if self.bit_depth == 8 {
            u8::MAX as u16
        } else {
            u16::MAX
        }
    }

    pub fn voxel(&self, x: u32, y: u32, z: u32) -> u16 {
        debug_assert!(x < self.width && y < self.height && z < self.depth);
        let idx = (z as usize * self.height as usize + y as usize) * self.width as usize
            + x as usize;
        self.voxels[idx]
    }

    pub fn slice(&self, z: u32) -> Result<SliceView<'_>> {
        if z >= self.depth {
            return Err(Error::SliceOutOfRange {
                z,
                depth: self.depth,
            });
        }
        Ok(SliceView { volume: self, z })
    }

    /// Rename; volume identity is not stored in the OVF payload.
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

/// Read-only view of one slice of a volume.
#[derive(Debug, Clone, Copy)]
pub struct SliceView<'a> {
    volume: &'a Volume,
    z: u32,
}

impl<'a> SliceView<'a> {
    pub fn z(&self) -> u32 {
        self.z
    }

    pub fn width(&self) -> u32 {
        self.volume.width
    }

    pub fn height(&self) -> u32 {
        self.volume.height
    }

    pub fn volume(&self) -> &'a Volume {
        self.volume
    }

    pub fn value(&self, x: u32, y: u32) -> u16 {
        self.volume.voxel(x, y, self.z)
    }

    /// The slice's voxels as one contiguous row-major run.
    pub fn values(&self) -> &'a [u16] {
        let len = self.volume.width as usize * self.volume.height as usize;
        let start = self.z as usize * len;
        &self.volume.voxels[start..start + len]
    }
}

fn checked_voxel_count(width: u32, height: u32, depth: u32) -> Result<u64> {
    if width == 0 || height == 0 || depth == 0 {
        return Err(Error::DimensionOverflow);
    }
    let count = width as u128 * height as u128 * depth as u128;
    if count >= 1u128 << 63 {
        return Err(Error::DimensionOverflow);
    }
    Ok(count as u64)
}

/// Load an OVF volume. The volume id is the file stem.
pub fn load_ovf(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_ovf(&bytes, id)
}

fn parse_ovf(bytes: &[u8], id: String) -> Result<Volume> {
    if bytes.len() < OVF_HEADER_LEN {
        if bytes.len() < 4 || &bytes[..4] != OVF_MAGIC {
            return Err(Error::BadMagic);
        }
        return Err(Error::TruncatedFile {
            expected: OVF_HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    if &bytes[..4] != OVF_MAGIC {
        return Err(Error::BadMagic);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != OVF_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let bit_depth = bytes[6];
    if bit_depth != 8 && bit_depth != 16 {
        return Err(Error::UnsupportedBitDepth(bit_depth));
    }
    if bytes[7] != 0 {
        return Err(Error::CorruptHeader("nonzero pad byte"));
    }
    let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let depth = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
    let count = checked_voxel_count(width, height, depth)?;

    let bytes_per_voxel = if bit_depth == 8 { 1u64 } else { 2u64 };
    let expected = OVF_HEADER_LEN as u64 + count * bytes_per_voxel;
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(Error::TruncatedFile { expected, actual });
    }
    if actual > expected {
        return Err(Error::TrailingData(actual - expected));
    }

    let payload = &bytes[OVF_HEADER_LEN..];
    let voxels: Vec<u16> = if bit_depth == 8 {
        payload.iter().map(|&b| b as u16).collect()
    } else {
        payload
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect()
    };
    Volume::new(id, width, height, depth, bit_depth, voxels)
}

/// Serialize a volume to OVF bytes.
pub fn ovf_bytes(v: &Volume) -> Vec<u8> {
    let bytes_per_voxel = if v.bit_depth == 8 { 1 } else { 2 };
    let mut out = Vec::with_capacity(OVF_HEADER_LEN + v.voxels.len() * bytes_per_voxel);
    out.extend_from_slice(OVF_MAGIC);
    out.extend_from_slice(&OVF_VERSION.to_le_bytes());
    out.push(v.bit_depth);
    out.push(0);
    out.extend_from_slice(&v.width.to_le_bytes());
    out.extend_from_slice(&v.height.to_le_bytes());
    out.extend_from_slice(&v.depth.to_le_bytes());
    if v.bit_depth == 8 {
        out.extend(v.voxels.iter().map(|&x| x as u8));
    } else {
        for &x in &v.voxels {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

/// Write a volume as OVF. Overwrites; byte layout is fully deterministic.
pub fn save_ovf(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = ovf_bytes(v);
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Stack a directory of binary PGM (P5) slices into a volume.
///
/// Slices are ordered by ascending file name; all must share one
/// width/height. Bit depth is 16 if any slice has maxval > 255, else 8.
pub fn import_slice_dir(dir: impl AsRef<Path>, id: impl Into<String>) -> Result<Volume> {
    let dir = dir.as_ref();
    let mut names: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok())
        .filter(|entry| entry.path().is_file())
        .map(|entry| entry.file_name())
        .filter(|name| {
            Path::new(name)
                .extension()
                .is_some_and(|ext| ext.eq_ignore_ascii_case("pgm"))
        })
        .collect();
    if names.is_empty() {
        return Err(Error::EmptyDirectory(dir.to_path_buf()));
    }
    names.sort();

    let mut slices = Vec::with_capacity(names.len());
    let mut dims: Option<(u32, u32)> = None;
    let mut any_wide = false;
    for name in &names {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let pgm = parse_pgm(&bytes).map_err(|reason| Error::UnsupportedFormat {
            path: path.clone(),
            reason,
        })?;
        match dims {
            None => dims = Some((pgm.width, pgm.height)),
            Some((w, h)) if (w, h) != (pgm.width, pgm.height) => {
                return Err(Error::MixedDimensions {
                    path,
                    expected_w: w,
                    expected_h: h,
                    found_w: pgm.width,
                    found_h: pgm.height,
                });
            }
            Some(_) => {}
        }
        any_wide |= pgm.maxval > 255;
        slices.push(pgm.pixels);
    }

    let (width, height) = dims.unwrap();
    let depth = slices.len() as u32;
    let voxels: Vec<u16> = slices.into_iter().flatten().collect();
    Volume::new(id, width, height, depth, if any_wide { 16 } else { 8 }, voxels)
}

struct Pgm {
    width: u32,
    height: u32,
    maxval: u32,
    pixels: Vec<u16>,
}

/// Minimal binary-PGM parser: "P5", three decimal header tokens with
/// optional '#' comments, one whitespace byte, then the raw raster
/// (big-endian u16 when maxval > 255, per the netpbm convention).
fn parse_pgm(bytes: &[u8]) -> std::result::Result<Pgm, String> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err("missing P5 magic".into());
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        pos = skip_pgm_separators(bytes, pos)?;
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err("expected a decimal header field".into());
        }
        let token = std::str::from_utf8(&bytes[start..pos]).unwrap();
        *field = token.parse::<u32>().map_err(|e| e.to_string())?;
    }
    // Exactly one whitespace byte between maxval and the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing separator before raster".into());
    }
    pos += 1;

    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err("zero dimension".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} out of range"));
    }
    let count = width as usize * height as usize;
    let raster = &bytes[pos..];
    let pixels = if maxval <= 255 {
        if raster.len() != count {
            return Err(format!("raster holds {} bytes, expected {count}", raster.len()));
        }
        raster.iter().map(|&b| b as u16).collect()
    } else {
        if raster.len() != count * 2 {
            return Err(format!(
                "raster holds {} bytes, expected {}",
                raster.len(),
                count * 2
            ));
        }
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    Ok(Pgm {
        width,
        height,
        maxval,
        pixels,
    })
}

fn skip_pgm_separators(bytes: &[u8], mut pos: usize) -> std::result::Result<usize, String> {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return if pos < bytes.len() {
                Ok(pos)
            } else {
                Err("truncated header".into())
            };
        }
    }
}
