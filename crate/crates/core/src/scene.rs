//! Depth maps, per-pixel photon levels and synthetic scenes.
//!
//! Two on-disk depth formats are supported:
//!
//! * CSV: one line per image row, comma-separated meters, with an optional
//!   leading `# width height` line.
//! * raw_f32: `EDHD` magic, little-endian `u32` width and height, then
//!   `width * height` little-endian `f32` meters in row-major order.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor;

pub const DEPTH_MAGIC: [u8; 4] = *b"EDHD";

/// Per-pixel scene truth and photon levels (per-cycle totals).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelConfig {
    pub z: f64,
    pub phi_sig_total: f64,
    pub phi_bkg_total: f64,
}

impl PixelConfig {
    pub fn new(z: f64, phi_sig_total: f64, phi_bkg_total: f64) -> Result<Self> {
        let p = PixelConfig {
            z,
            phi_sig_total,
            phi_bkg_total,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phi_sig_total >= 0.0 && self.phi_bkg_total >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "photon levels must be non-negative (sig {}, bkg {})",
                self.phi_sig_total, self.phi_bkg_total
            )));
        }
        if self.phi_sig_total == 0.0 && self.phi_bkg_total == 0.0 {
            return Err(Error::InvalidParams(
                "signal and background are both zero".into(),
            ));
        }
        if !self.z.is_finite() {
            return Err(Error::InvalidParams(format!("distance {}", self.z)));
        }
        Ok(())
    }
}

/// Mean signal and background photons per laser cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonLevels {
    pub sig: f64,
    pub bkg: f64,
}

impl PhotonLevels {
    pub fn new(sig: f64, bkg: f64) -> Self {
        PhotonLevels { sig, bkg }
    }
}

impl std::fmt::Display for PhotonLevels {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.sig, self.bkg)
    }
}

/// Row-major grid of scene distances in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    depths: Vec<f64>,
}

impl DepthMap {
    /// Validated depth map: every depth must lie in `(0, z_max]`.
    pub fn new(width: usize, height: usize, depths: Vec<f64>, z_max: f64) -> Result<Self> {
        let map = Self::unchecked(width, height, depths)?;
        if let Some(&d) = map.depths.iter().find(|d| !(**d > 0.0 && **d <= z_max)) {
            return Err(Error::DepthOutOfRange {
                value: d,
                limit: z_max,
            });
        }
        Ok(map)
    }

    /// Shape-checked map without range validation (estimates may be 0).
    pub fn unchecked(width: usize, height: usize, depths: Vec<f64>) -> Result<Self> {
        if width * height != depths.len() {
            return Err(Error::ShapeMismatch(format!(
                "{width}x{height} map with {} depths",
                depths.len()
            )));
        }
        Ok(DepthMap {
            width,
            height,
            depths,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.depths[row * self.width + col]
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# {} {}", self.width, self.height)?;
        for row in self.depths.chunks(self.width.max(1)) {
            let line: Vec<String> = row.iter().map(|d| d.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn to_raw_f32(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.depths.len());
        out.extend_from_slice(&DEPTH_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for &d in &self.depths {
            out.extend_from_slice(&(d as f32).to_le_bytes());
        }
        out
    }

    pub fn save(&self, path: &Path, format: DepthFormat) -> Result<()> {
        match format {
            DepthFormat::Csv => {
                let mut buf = Vec::new();
                self.write_csv(&mut buf)?;
                fs::write(path, buf)?;
            }
            DepthFormat::RawF32 => fs::write(path, self.to_raw_f32())?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthFormat {
    Csv,
    RawF32,
}

impl DepthFormat {
    /// `.csv` is CSV, anything else is raw_f32.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DepthFormat::Csv,
            _ => DepthFormat::RawF32,
        }
    }
}

impl std::str::FromStr for DepthFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DepthFormat::Csv),
            "raw_f32" | "raw" => Ok(DepthFormat::RawF32),
            other => Err(Error::InvalidParams(format!(
                "unknown depth format {other}"
            ))),
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

/// Parses the CSV depth format. `width` overrides the header and is needed
/// when the file has neither a header nor more than one value per line.
pub fn parse_depth_csv(text: &str, width: Option<usize>) -> Result<(usize, usize, Vec<f64>)> {
    let mut header: Option<(usize, usize)> = None;
    let mut depths = Vec::new();
    let mut row_width: Option<usize> = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if header.is_none() && rows == 0 {
                let dims: Vec<&str> = rest.split_whitespace().collect();
                if let [w, h] = dims[..] {
                    let w = w
                        .parse()
                        .map_err(|_| Error::parse(format!("line {}", lineno + 1), "bad width"))?;
                    let h = h
                        .parse()
                        .map_err(|_| Error::parse(format!("line {}", lineno + 1), "bad height"))?;
                    header = Some((w, h));
                }
            }
            continue;
        }
        let mut n = 0;
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::parse(
                    format!("line {}", lineno + 1),
                    format!("not a number: {:?}", field.trim()),
                )
            })?;
            depths.push(v);
            n += 1;
        }
        if *row_width.get_or_insert(n) != n {
            return Err(Error::parse(
                format!("line {}", lineno + 1),
                "ragged row length",
            ));
        }
        rows += 1;
    }
    let w = width.or(header.map(|h| h.0)).or(row_width).unwrap_or(0);
    if w == 0 || depths.len() % w != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{} values do not fill rows of width {w}",
            depths.len()
        )));
    }
    let h = depths.len() / w;
    if let Some((hw, hh)) = header {
        if width.is_none() && (hw != w || hh != h) {
            return Err(Error::ShapeMismatch(format!(
                "header says {hw}x{hh}, data is {w}x{h}"
            )));
        }
    }
    Ok((w, h, depths))
}

fn parse_depth_raw(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    if bytes.len() < 16 {
        return Err(Error::parse("offset 0", "truncated header"));
    }
    if bytes[..4] != DEPTH_MAGIC {
        return Err(Error::parse("offset 0", "bad magic, expected EDHD"));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[16..];
    let n = width * height;
    if payload.len() != 4 * n {
        return Err(Error::parse(
            "offset 16",
            format!("expected {} payload bytes, found {}", 4 * n, payload.len()),
        ));
    }
    let depths = tensor::decode_f32(payload)
        .into_iter()
        .map(f64::from)
        .collect();
    Ok((width, height, depths))
}

/// Loads and validates a ground-truth depth map.
pub fn load_depth_map(
    path: &Path,
    format: DepthFormat,
    width: Option<usize>,
    z_max: f64,
) -> Result<DepthMap> {
    let (w, h, depths) = read_depth_values(path, format, width)?;
    DepthMap::new(w, h, depths, z_max)
}

/// Loads an estimated distance map; values must lie in `[0, z_max]`.
pub fn load_distance_map(
    path: &Path,
    format: DepthFormat,
    width: Option<usize>,
    z_max: f64,
) -> Result<DepthMap> {
    let (w, h, depths) = read_depth_values(path, format, width)?;
    if let Some(&d) = depths.iter().find(|d| !(**d >= 0.0 && **d <= z_max)) {
        return Err(Error::DepthOutOfRange {
            value: d,
            limit: z_max,
        });
    }
    DepthMap::unchecked(w, h, depths)
}

fn read_depth_values(
    path: &Path,
    format: DepthFormat,
    width: Option<usize>,
) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = read_file(path)?;
    match format {
        DepthFormat::Csv => {
            let text = String::from_utf8(bytes).map_err(|e| {
                Error::parse(
                    format!("byte {}", e.utf8_error().valid_up_to()),
                    "not UTF-8",
                )
            })?;
            parse_depth_csv(&text, width)
        }
        DepthFormat::RawF32 => parse_depth_raw(&bytes),
    }
}

/// Photon levels of a scene: one pair for every pixel, or one per pixel.
#[derive(Debug, Clone, PartialEq)]
pub enum PixelLevels {
    Uniform(PhotonLevels),
    PerPixel(Vec<PhotonLevels>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    depth_map: DepthMap,
    levels: PixelLevels,
}

impl Scene {
    pub fn new(depth_map: DepthMap, levels: PixelLevels) -> Result<Self> {
        if let PixelLevels::PerPixel(v) = &levels {
            if v.len() != depth_map.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} pixel configs for {} pixels",
                    v.len(),
                    depth_map.len()
                )));
            }
        }
        Ok(Scene { depth_map, levels })
    }

    pub fn depth_map(&self) -> &DepthMap {
        &self.depth_map
    }

    pub fn levels(&self) -> &PixelLevels {
        &self.levels
    }

    /// Same geometry with every pixel at `levels`.
    pub fn with_levels(&self, levels: PhotonLevels) -> Scene {
        Scene {
            depth_map: self.depth_map.clone(),
            levels: PixelLevels::Uniform(levels),
        }
    }

    pub fn len(&self) -> usize {
        self.depth_map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth_map.is_empty()
    }

    pub fn pixel(&self, index: usize) -> Result<PixelConfig> {
        let levels = match &self.levels {
            PixelLevels::Uniform(l) => *l,
            PixelLevels::PerPixel(v) => v[index],
        };
        PixelConfig::new(self.depth_map.depths[index], levels.sig, levels.bkg)
    }
}

/// Parameters of the built-in synthetic scenes.
#[derive(Debug, Clone, PartialEq)]
pub enum SceneKind {
    /// `n_steps` equal-width column bands with depths spaced linearly over
    /// `[z_min, z_max]`, left to right.
    Staircase {
        n_steps: usize,
        z_min: f64,
        z_max: f64,
        width: usize,
        height: usize,
    },
    Constant {
        z: f64,
        width: usize,
        height: usize,
    },
    /// `z1` for columns left of `width / 2`, `z2` for the rest.
    TwoPlane {
        z1: f64,
        z2: f64,
        width: usize,
        height: usize,
    },
}

impl SceneKind {
    /// Staircase one pixel per step, one row high.
    pub fn staircase(n_steps: usize, z_min: f64, z_max: f64) -> Self {
        SceneKind::Staircase {
            n_steps,
            z_min,
            z_max,
            width: n_steps,
            height: 1,
        }
    }
}

/// Linearly spaced depths over `[lo, hi]`, endpoints included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Deterministic synthetic depth map for `kind`; `range_limit` is the
/// sensor's z_max.
pub fn synth_depth_map(kind: &SceneKind, range_limit: f64) -> Result<DepthMap> {
    let check = |z: f64| {
        if z > 0.0 && z <= range_limit {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "depth {z} outside (0, {range_limit}]"
            )))
        }
    };
    let nonempty = |w: usize, h: usize| {
        if w == 0 || h == 0 {
            Err(Error::InvalidParams(format!("empty {w}x{h} scene")))
        } else {
            Ok(())
        }
    };
    match *kind {
        SceneKind::Staircase {
            n_steps,
            z_min,
            z_max,
            width,
            height,
        } => {
            if n_steps < 1 {
                return Err(Error::InvalidParams("staircase needs n_steps >= 1".into()));
            }
            if width < n_steps {
                return Err(Error::InvalidParams(format!(
                    "staircase width {width} < n_steps {n_steps}"
                )));
            }
            nonempty(width, height)?;
            check(z_min)?;
            check(z_max)?;
            if z_min > z_max {
                return Err(Error::InvalidParams("z_min > z_max".into()));
            }
            let steps = linspace(z_min, z_max, n_steps);
            let row: Vec<f64> = (0..width).map(|c| steps[c * n_steps / width]).collect();
            let depths = row.iter().copied().cycle().take(width * height).collect();
            DepthMap::new(width, height, depths, range_limit)
        }
        SceneKind::Constant { z, width, height } => {
            nonempty(width, height)?;
            check(z)?;
            DepthMap::new(width, height, vec![z; width * height], range_limit)
        }
        SceneKind::TwoPlane {
            z1,
            z2,
            width,
            height,
        } => {
            nonempty(width, height)?;
            check(z1)?;
            check(z2)?;
            let split = width / 2;
            let depths = (0..width * height)
                .map(|i| if i % width < split { z1 } else { z2 })
                .collect();
            DepthMap::new(width, height, depths, range_limit)
        }
    }
}

/// Synthetic scene with uniform photon levels.
pub fn synth_scene(kind: &SceneKind, levels: PhotonLevels, range_limit: f64) -> Result<Scene> {
    PixelConfig::new(1.0, levels.sig, levels.bkg)?;
    Scene::new(
        synth_depth_map(kind, range_limit)?,
        PixelLevels::Uniform(levels),
    )
}
