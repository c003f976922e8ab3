//! On-disk formats: PFM disparity, PNG images, masks and pattern layers,
//! heatmap rendering, and the dataset directory with its JSON manifest.
//!
//! Layout of a dataset root:
//!
//! ```text
//! manifest.json
//! frame_0000/left.png  right.png  disp_gt.pfm  valid.png  seg.png  shadow.png
//!            pat_l_01.png ... pat_l_TT.png  pat_r_01.png ... pat_r_TT.png
//! ```

use std::fs;
use std::path::{Path, PathBuf};

pub use image::RgbImage;
use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::codec::{PatternSpec, PatternStack};
use crate::disparity::DisparityMap;
use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};
use crate::scene::{CameraModel, CameraPose, ProjectorRig, RenderOutput, SceneConfig, StereoFrame};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

// ---------------------------------------------------------------- PFM

/// Serialize a disparity map as a little-endian greyscale PFM. Rows are
/// stored bottom-to-top; invalid pixels become `+inf`.
pub fn encode_pfm(map: &DisparityMap) -> Vec<u8> {
    let (w, h) = (map.width(), map.height());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            let v = map.get(x, y).map_or(f32::INFINITY, |d| d as f32);
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parse a greyscale PFM. Non-finite samples are read as invalid (value 0).
/// `path` is only used in error messages.
pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<DisparityMap> {
    let bad = |what: &str| Error::malformed(path, format!("PFM {what}"));
    let mut pos = 0;
    let mut next_line = || -> Result<String> {
        let rest = &bytes[pos.min(bytes.len())..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("header"))?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end])
            .map(|s| s.trim().to_string())
            .map_err(|_| bad("header"))
    };
    match next_line()?.as_str() {
        "Pf" => {}
        "PF" => return Err(bad("colour channels (only greyscale is supported)")),
        _ => return Err(bad("magic")),
    }
    let dims = next_line()?;
    let mut it = dims.split_whitespace().map(str::parse::<usize>);
    let (w, h) = match (it.next(), it.next(), it.next()) {
        (Some(Ok(w)), Some(Ok(h)), None) if w > 0 && h > 0 => (w, h),
        _ => return Err(bad("dimensions")),
    };
    let scale: f64 = next_line()?.parse().map_err(|_| bad("scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("scale"));
    }
    let little = scale < 0.0;
    let payload = &bytes[pos..];
    if payload.len() != w * h * 4 {
        return Err(bad("payload length"));
    }
    let mut values = Grid::filled(w, h, 0.0);
    let mut valid = Grid::filled(w, h, false);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let raw: [u8; 4] = chunk.try_into().expect("chunk of four");
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (x, y) = (i % w, h - 1 - i / w);
        if v.is_finite() {
            values.set(x, y, v as f64);
            valid.set(x, y, true);
        }
    }
    DisparityMap::new(values, valid)
}

pub fn write_pfm(path: impl AsRef<Path>, map: &DisparityMap) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pfm(map)).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<DisparityMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes, path)
}

// ---------------------------------------------------------------- PNG

fn save(img: &DynamicImage, path: &Path) -> Result<()> {
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

fn open(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn to_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Write values in `[0, 1]` as a 16-bit greyscale PNG.
pub fn write_gray16(path: impl AsRef<Path>, grid: &Grid<f64>) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_vec(
        grid.width() as u32,
        grid.height() as u32,
        grid.as_slice().iter().map(|&v| to_u16(v)).collect(),
    )
    .expect("buffer matches grid");
    save(&DynamicImage::ImageLuma16(buf), path.as_ref())
}

/// Read a greyscale PNG as values in `[0, 1]` (8-bit data scaled by 1/255,
/// 16-bit by 1/65535).
pub fn read_gray(path: impl AsRef<Path>) -> Result<Grid<f64>> {
    let path = path.as_ref();
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        _ => return Err(Error::malformed(path, "image (expected single-channel greyscale)")),
    };
    Grid::from_vec(w, h, data)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_vec(
        mask.width() as u32,
        mask.height() as u32,
        mask.as_slice().iter().map(|&b| if b { 255 } else { 0 }).collect(),
    )
    .expect("buffer matches mask");
    save(&DynamicImage::ImageLuma8(buf), path.as_ref())
}

/// Any nonzero sample is `true`.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let g = read_gray(path)?;
    Ok(g.map(|&v| v > 0.0))
}

/// Write one pattern layer: 8-bit {0, 255} when the layer is binary,
/// otherwise 16-bit.
pub fn write_layer(path: impl AsRef<Path>, layer: &Grid<f64>) -> Result<()> {
    if layer.as_slice().iter().all(|&v| v == 0.0 || v == 1.0) {
        write_mask(path, &layer.map(|&v| v == 1.0))
    } else {
        write_gray16(path, layer)
    }
}

/// 16-bit code map (codes fit since `t ≤ 16`).
pub fn write_codes(path: impl AsRef<Path>, codes: &Grid<u32>) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_vec(
        codes.width() as u32,
        codes.height() as u32,
        codes
            .as_slice()
            .iter()
            .map(|&c| c.min(u16::MAX as u32) as u16)
            .collect(),
    )
    .expect("buffer matches grid");
    save(&DynamicImage::ImageLuma16(buf), path.as_ref())
}

pub fn read_codes(path: impl AsRef<Path>) -> Result<Grid<u32>> {
    let path = path.as_ref();
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let DynamicImage::ImageLuma16(b) = img else {
        return Err(Error::malformed(path, "code map (expected 16-bit greyscale)"));
    };
    Grid::from_vec(w, h, b.into_raw().into_iter().map(u32::from).collect())
}

/// 16-bit preview of a disparity map, `round(d · 256)`, invalid pixels 0.
pub fn write_disparity_preview(path: impl AsRef<Path>, map: &DisparityMap) -> Result<()> {
    let data: Vec<u16> = (0..map.height())
        .flat_map(|y| (0..map.width()).map(move |x| (x, y)))
        .map(|(x, y)| {
            map.get(x, y)
                .map_or(0, |d| (d * 256.0).round().clamp(0.0, 65535.0) as u16)
        })
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_vec(map.width() as u32, map.height() as u32, data).expect("buffer matches map");
    save(&DynamicImage::ImageLuma16(buf), path.as_ref())
}

// ---------------------------------------------------------------- heatmaps

/// Jet-like gradient anchors `(position, rgb)`: dark blue, cyan, yellow,
/// orange, red.
pub const JET_ANCHORS: [(f64, [u8; 3]); 5] = [
    (0.0, [0, 0, 128]),
    (0.25, [0, 255, 255]),
    (0.5, [255, 255, 0]),
    (0.75, [255, 128, 0]),
    (1.0, [255, 0, 0]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Colormap {
    #[default]
    Jet,
    Grayscale,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueRange {
    /// Min and max over valid pixels.
    #[default]
    Auto,
    Fixed {
        min: f64,
        max: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HeatmapStyle {
    pub colormap: Colormap,
    pub range: ValueRange,
}

impl Colormap {
    /// Colour at normalized position `t ∈ [0, 1]`.
    pub fn color(&self, t: f64) -> [u8; 3] {
        let t = t.clamp(0.0, 1.0);
        match self {
            Colormap::Grayscale => {
                let v = (t * 255.0).round() as u8;
                [v, v, v]
            }
            Colormap::Jet => {
                let i = JET_ANCHORS
                    .windows(2)
                    .position(|w| t <= w[1].0)
                    .unwrap_or(JET_ANCHORS.len() - 2);
                let ((t0, c0), (t1, c1)) = (JET_ANCHORS[i], JET_ANCHORS[i + 1]);
                let f = (t - t0) / (t1 - t0);
                std::array::from_fn(|k| (c0[k] as f64 + f * (c1[k] as f64 - c0[k] as f64)).round() as u8)
            }
        }
    }
}

/// Min-max map valid values through the colormap; invalid pixels black.
/// A constant map under the auto range renders at the colormap midpoint.
pub fn render_heatmap(values: &Grid<f64>, valid: &Mask, style: &HeatmapStyle) -> Result<RgbImage> {
    crate::grid::ensure_same_shape(values, valid, "heatmap values vs mask")?;
    let usable = |x: usize, y: usize| *valid.get(x, y) && values.get(x, y).is_finite();
    let (lo, hi) = match style.range {
        ValueRange::Fixed { min, max } => {
            if !(min < max) {
                return Err(Error::Config(format!("heatmap range [{min}, {max}]")));
            }
            (min, max)
        }
        ValueRange::Auto => {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for y in 0..values.height() {
                for x in 0..values.width() {
                    if usable(x, y) {
                        lo = lo.min(*values.get(x, y));
                        hi = hi.max(*values.get(x, y));
                    }
                }
            }
            (lo, hi)
        }
    };
    let mut img = RgbImage::new(values.width() as u32, values.height() as u32);
    for y in 0..values.height() {
        for x in 0..values.width() {
            if !usable(x, y) {
                continue;
            }
            let t = if hi > lo {
                (values.get(x, y) - lo) / (hi - lo)
            } else {
                0.5
            };
            img.put_pixel(x as u32, y as u32, Rgb(style.colormap.color(t)));
        }
    }
    Ok(img)
}

pub fn write_rgb(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    save(&DynamicImage::ImageRgb8(img.clone()), path.as_ref())
}

// ---------------------------------------------------------------- dataset

/// Relative paths of one frame's files plus its camera pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub left: String,
    pub right: String,
    pub disp_gt: String,
    pub valid: String,
    pub seg: String,
    pub shadow: String,
    pub pat_l: Vec<String>,
    pub pat_r: Vec<String>,
    pub pose: CameraPose,
}

impl FrameEntry {
    fn for_index(k: usize, t: usize, pose: CameraPose) -> Self {
        let d = format!("frame_{k:04}");
        let p = |name: &str| format!("{d}/{name}");
        Self {
            left: p("left.png"),
            right: p("right.png"),
            disp_gt: p("disp_gt.pfm"),
            valid: p("valid.png"),
            seg: p("seg.png"),
            shadow: p("shadow.png"),
            pat_l: (1..=t).map(|n| p(&format!("pat_l_{n:02}.png"))).collect(),
            pat_r: (1..=t).map(|n| p(&format!("pat_r_{n:02}.png"))).collect(),
            pose,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub patterns: PatternSpec,
    pub camera: CameraModel,
    pub projector: ProjectorRig,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneConfig>,
    pub frames: Vec<FrameEntry>,
}

impl DatasetManifest {
    /// Manifest header without frames; [`write_dataset`] fills them in.
    pub fn new(patterns: PatternSpec, camera: CameraModel, projector: ProjectorRig, seed: u64) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            patterns,
            camera,
            projector,
            seed,
            scene: None,
            frames: Vec::new(),
        }
    }
}

/// One stored view: images, ground truth, both pattern stacks and pose.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFrame {
    pub frame: StereoFrame,
    pub left_stack: PatternStack,
    pub right_stack: PatternStack,
    pub pose: CameraPose,
}

impl DatasetFrame {
    pub fn from_render(pose: CameraPose, out: RenderOutput) -> Self {
        Self {
            frame: out.frame,
            left_stack: out.left_stack,
            right_stack: out.right_stack,
            pose,
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Write frames under `dir` and a manifest describing them. Returns the
/// manifest as written.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    frames: &[DatasetFrame],
    header: &DatasetManifest,
) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    header.patterns.validate()?;
    let t = header.patterns.t;
    create_dir(dir)?;
    let mut manifest = header.clone();
    manifest.format_version = FORMAT_VERSION;
    manifest.frames.clear();
    for (k, f) in frames.iter().enumerate() {
        let (w, h) = (f.frame.width(), f.frame.height());
        if f.left_stack.layers() != t || f.right_stack.layers() != t {
            return Err(Error::Shape(format!(
                "frame {k}: stacks have {}/{} layers, patterns say {t}",
                f.left_stack.layers(),
                f.right_stack.layers()
            )));
        }
        if f.left_stack.width() != w || f.left_stack.height() != h || !f.left_stack.same_shape(&f.right_stack) {
            return Err(Error::Shape(format!("frame {k}: stack size differs from images")));
        }
        let entry = FrameEntry::for_index(k, t, f.pose);
        create_dir(&dir.join(format!("frame_{k:04}")))?;
        write_gray16(dir.join(&entry.left), &f.frame.image_left)?;
        write_gray16(dir.join(&entry.right), &f.frame.image_right)?;
        write_pfm(dir.join(&entry.disp_gt), &f.frame.gt_disparity)?;
        write_mask(dir.join(&entry.valid), f.frame.valid_mask())?;
        write_mask(dir.join(&entry.seg), &f.frame.seg_mask)?;
        write_mask(dir.join(&entry.shadow), &f.frame.shadow_mask)?;
        for n in 0..t {
            write_layer(dir.join(&entry.pat_l[n]), &f.left_stack.layer_grid(n))?;
            write_layer(dir.join(&entry.pat_r[n]), &f.right_stack.layer_grid(n))?;
        }
        manifest.frames.push(entry);
    }
    let path = dir.join(MANIFEST_NAME);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_NAME);
    if !path.is_file() {
        return Err(Error::ManifestNotFound(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::malformed(&path, format!("manifest ({e})")))?;
    let found = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::malformed(&path, "manifest (no format_version)"))?;
    if found != FORMAT_VERSION as u64 {
        return Err(Error::Version {
            found: found.min(u32::MAX as u64) as u32,
            expected: FORMAT_VERSION,
        });
    }
    let manifest: DatasetManifest =
        serde_json::from_value(value).map_err(|e| Error::malformed(&path, format!("manifest ({e})")))?;
    manifest.patterns.validate()?;
    let t = manifest.patterns.t;
    for (k, f) in manifest.frames.iter().enumerate() {
        if f.pat_l.len() != t || f.pat_r.len() != t {
            return Err(Error::malformed(
                &path,
                format!("manifest frame {k} (expected {t} pattern files per view)"),
            ));
        }
    }
    Ok(manifest)
}

fn read_stack(dir: &Path, files: &[String], w: usize, h: usize) -> Result<PatternStack> {
    let layers = files
        .iter()
        .map(|f| {
            let p = dir.join(f);
            let g = read_gray(&p)?;
            if g.width() != w || g.height() != h {
                return Err(Error::malformed(&p, format!("pattern layer size (expected {w}x{h})")));
            }
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    PatternStack::from_layers(&layers)
}

/// Load frame `k` of a dataset.
pub fn read_frame(dir: impl AsRef<Path>, manifest: &DatasetManifest, k: usize) -> Result<DatasetFrame> {
    let dir = dir.as_ref();
    let entry = manifest
        .frames
        .get(k)
        .ok_or_else(|| Error::OutOfRange(format!("frame {k} of {}", manifest.frames.len())))?;
    let left_path = dir.join(&entry.left);
    let image_left = read_gray(&left_path)?;
    let (w, h) = (image_left.width(), image_left.height());
    let same = |p: PathBuf, g: &Grid<f64>| -> Result<()> {
        if g.width() != w || g.height() != h {
            return Err(Error::malformed(p, format!("image size (expected {w}x{h})")));
        }
        Ok(())
    };
    let image_right = read_gray(dir.join(&entry.right))?;
    same(dir.join(&entry.right), &image_right)?;
    let disp = read_pfm(dir.join(&entry.disp_gt))?;
    let valid = read_mask(dir.join(&entry.valid))?;
    let seg = read_mask(dir.join(&entry.seg))?;
    let shadow = read_mask(dir.join(&entry.shadow))?;
    for (name, m) in [
        (&entry.disp_gt, &disp.valid),
        (&entry.valid, &valid),
        (&entry.seg, &seg),
        (&entry.shadow, &shadow),
    ] {
        if m.width() != w || m.height() != h {
            return Err(Error::malformed(dir.join(name), format!("size (expected {w}x{h})")));
        }
    }
    if disp.valid != valid {
        return Err(Error::malformed(
            dir.join(&entry.valid),
            "validity mask (disagrees with disparity)",
        ));
    }
    let left_stack = read_stack(dir, &entry.pat_l, w, h)?;
    let right_stack = read_stack(dir, &entry.pat_r, w, h)?;
    Ok(DatasetFrame {
        frame: StereoFrame {
            image_left,
            image_right,
            gt_disparity: disp,
            seg_mask: seg,
            shadow_mask: shadow,
        },
        left_stack,
        right_stack,
        pose: entry.pose,
    })
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<(Vec<DatasetFrame>, DatasetManifest)> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let frames = (0..manifest.frames.len())
        .map(|k| read_frame(dir, &manifest, k))
        .collect::<Result<Vec<_>>>()?;
    Ok((frames, manifest))
}
