//! Binary and Gray stripe patterns, binarization, and column-code decoding.
//!
//! Pattern `n` (1-based) carries bit `n` of the projector column code,
//! counted from the most significant of `t` bits, so pattern 1 holds the
//! coarsest stripes. For the binary kind pattern `n` has exactly `2^n`
//! alternating runs across the projector width.

use serde::{Deserialize, Serialize};

use crate::disparity::DisparityMap;
use crate::error::{Error, Result};
use crate::grid::{ensure_same_shape, Grid, Mask};

/// Largest supported pattern count; codes must fit a 16-bit PNG.
pub const MAX_PATTERNS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    Binary,
    Gray,
}

impl std::str::FromStr for PatternKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(PatternKind::Binary),
            "gray" => Ok(PatternKind::Gray),
            other => Err(Error::Config(format!("unknown pattern kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub kind: PatternKind,
    /// Number of projected patterns.
    pub t: usize,
    /// Projector columns.
    pub code_width: usize,
}

impl Default for PatternSpec {
    fn default() -> Self {
        Self {
            kind: PatternKind::Binary,
            t: 8,
            code_width: 256,
        }
    }
}

impl PatternSpec {
    pub fn new(kind: PatternKind, t: usize, code_width: usize) -> Result<Self> {
        let spec = Self { kind, t, code_width };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.t > MAX_PATTERNS {
            return Err(Error::Config(format!(
                "pattern count {} not in 1..={MAX_PATTERNS}",
                self.t
            )));
        }
        if self.code_width == 0 {
            return Err(Error::Config("code width must be positive".into()));
        }
        Ok(())
    }

    /// The code a column resolves to: `⌊col·2^t / W⌋`.
    pub fn column_code(&self, col: usize) -> Result<u32> {
        self.check_col(col)?;
        Ok(((col as u64) << self.t).div_euclid(self.code_width as u64) as u32)
    }

    fn check_col(&self, col: usize) -> Result<()> {
        if col >= self.code_width {
            return Err(Error::OutOfRange(format!(
                "projector column {col} (width {})",
                self.code_width
            )));
        }
        Ok(())
    }
}

#[inline]
pub fn gray_encode(code: u32) -> u32 {
    code ^ (code >> 1)
}

/// Inverse of [`gray_encode`] by prefix XOR.
#[inline]
pub fn gray_decode(gray: u32) -> u32 {
    let mut b = gray;
    let mut shift = 1;
    while shift < 32 {
        b ^= b >> shift;
        shift <<= 1;
    }
    b
}

/// Stripe value of pattern `n` (1-based) at projector column `col`.
pub fn stripe(spec: &PatternSpec, n: usize, col: usize) -> Result<bool> {
    spec.validate()?;
    if n == 0 || n > spec.t {
        return Err(Error::OutOfRange(format!("pattern index {n} (t = {})", spec.t)));
    }
    spec.check_col(col)?;
    Ok(stripe_unchecked(spec, n, col))
}

#[inline]
fn stripe_unchecked(spec: &PatternSpec, n: usize, col: usize) -> bool {
    match spec.kind {
        PatternKind::Binary => ((col as u64) << n) / spec.code_width as u64 % 2 == 1,
        PatternKind::Gray => {
            let code = (((col as u64) << spec.t) / spec.code_width as u64) as u32;
            (gray_encode(code) >> (spec.t - n)) & 1 == 1
        }
    }
}

/// `h × w × t` stack of per-pixel pattern values in `[0, 1]`, stored
/// layer-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternStack {
    width: usize,
    height: usize,
    layers: usize,
    values: Vec<f64>,
}

impl PatternStack {
    pub fn zeros(width: usize, height: usize, layers: usize) -> Self {
        Self {
            width,
            height,
            layers,
            values: vec![0.0; width * height * layers],
        }
    }

    pub fn filled(width: usize, height: usize, layers: usize, value: f64) -> Result<Self> {
        check_unit(value)?;
        Ok(Self {
            width,
            height,
            layers,
            values: vec![value; width * height * layers],
        })
    }

    /// Build from layer-major values; every element must lie in `[0, 1]`.
    pub fn from_vec(width: usize, height: usize, layers: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height * layers {
            return Err(Error::Shape(format!(
                "{} values for {width}x{height}x{layers}",
                values.len()
            )));
        }
        values.iter().try_for_each(|&v| check_unit(v))?;
        Ok(Self {
            width,
            height,
            layers,
            values,
        })
    }

    pub fn from_layers(layers: &[Grid<f64>]) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::Shape("empty layer list".into()))?;
        let mut values = Vec::with_capacity(first.len() * layers.len());
        for layer in layers {
            ensure_same_shape(first, layer, "pattern layer")?;
            values.extend_from_slice(layer.as_slice());
        }
        Self::from_vec(first.width(), first.height(), layers.len(), values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Layer `n` (0-based) as a row-major slice.
    pub fn layer(&self, n: usize) -> &[f64] {
        let sz = self.width * self.height;
        &self.values[n * sz..(n + 1) * sz]
    }

    pub fn layer_grid(&self, n: usize) -> Grid<f64> {
        Grid::from_vec(self.width, self.height, self.layer(n).to_vec()).expect("layer slice has grid size")
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, n: usize) -> f64 {
        self.values[(n * self.height + y) * self.width + x]
    }

    /// Clamps into `[0, 1]`.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, n: usize, value: f64) {
        self.values[(n * self.height + y) * self.width + x] = value.clamp(0.0, 1.0);
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn same_shape(&self, other: &PatternStack) -> bool {
        self.width == other.width && self.height == other.height && self.layers == other.layers
    }

    pub(crate) fn ensure_same_shape(&self, other: &PatternStack) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "pattern stacks {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.layers, other.width, other.height, other.layers
            )))
        }
    }

    /// Apply `f` to every element, clamping the result into `[0, 1]`.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> PatternStack {
        PatternStack {
            width: self.width,
            height: self.height,
            layers: self.layers,
            values: self.values.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
        }
    }

    /// Append copies of another stack's layers (same image size).
    pub fn concat(&self, other: &PatternStack) -> Result<PatternStack> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Shape("stack image sizes differ".into()));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Ok(PatternStack {
            width: self.width,
            height: self.height,
            layers: self.layers + other.layers,
            values,
        })
    }
}

fn check_unit(v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("pattern value {v}")))
    }
}

/// Thresholded pattern stack, layer-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitStack {
    width: usize,
    height: usize,
    layers: usize,
    bits: Vec<bool>,
}

impl BitStack {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, n: usize) -> bool {
        self.bits[(n * self.height + y) * self.width + x]
    }

    pub fn to_stack(&self) -> PatternStack {
        PatternStack {
            width: self.width,
            height: self.height,
            layers: self.layers,
            values: self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// `bit = value ≥ threshold`; a value exactly at the threshold is white.
pub fn binarize(stack: &PatternStack, threshold: f64) -> BitStack {
    BitStack {
        width: stack.width,
        height: stack.height,
        layers: stack.layers,
        bits: stack.values.iter().map(|&v| v >= threshold).collect(),
    }
}

/// Decoded per-pixel column codes.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMap {
    pub codes: Grid<u32>,
    pub valid: Mask,
}

impl CodeMap {
    pub fn width(&self) -> usize {
        self.codes.width()
    }

    pub fn height(&self) -> usize {
        self.codes.height()
    }

    /// Invalidate every pixel where `mask` is false.
    pub fn restrict(mut self, mask: &Mask) -> Result<Self> {
        self.valid = self.valid.and(mask)?;
        Ok(self)
    }

    #[inline]
    pub fn code(&self, x: usize, y: usize) -> Option<u32> {
        if *self.valid.get(x, y) {
            Some(*self.codes.get(x, y))
        } else {
            None
        }
    }
}

/// Stack of stripe values for a per-pixel projector column map. Pixels
/// outside `valid` are black in every layer.
pub fn generate_stack(spec: &PatternSpec, columns: &Grid<u32>, valid: &Mask) -> Result<PatternStack> {
    spec.validate()?;
    ensure_same_shape(columns, valid, "column map vs mask")?;
    let (w, h) = (columns.width(), columns.height());
    let mut stack = PatternStack::zeros(w, h, spec.t);
    for y in 0..h {
        for x in 0..w {
            if !*valid.get(x, y) {
                continue;
            }
            let col = *columns.get(x, y) as usize;
            spec.check_col(col)?;
            for n in 1..=spec.t {
                if stripe_unchecked(spec, n, col) {
                    stack.set(x, y, n - 1, 1.0);
                }
            }
        }
    }
    Ok(stack)
}

/// Per-pixel code from `t` bit layers, most significant first. Every pixel
/// is marked valid; use [`CodeMap::restrict`] to apply a shadow or
/// visibility mask.
pub fn decode(spec: &PatternSpec, bits: &BitStack) -> Result<CodeMap> {
    spec.validate()?;
    if bits.layers != spec.t {
        return Err(Error::Shape(format!("{} bit layers for t = {}", bits.layers, spec.t)));
    }
    let codes = Grid::from_fn(bits.width, bits.height, |x, y| {
        let word = (0..spec.t).fold(0u32, |acc, n| (acc << 1) | bits.get(x, y, n) as u32);
        match spec.kind {
            PatternKind::Binary => word,
            PatternKind::Gray => gray_decode(word),
        }
    });
    Ok(CodeMap {
        codes,
        valid: Grid::filled(bits.width, bits.height, true),
    })
}

/// Exact code-equality matching along rows: the disparity of a valid left
/// pixel is the smallest `s ∈ [0, max_disp]` whose right pixel `(x − s, y)`
/// is valid and carries the same code.
pub fn code_match_disparity(left: &CodeMap, right: &CodeMap, max_disp: i64) -> Result<DisparityMap> {
    if max_disp <= 0 {
        return Err(Error::Config(format!("max disparity {max_disp} must be positive")));
    }
    ensure_same_shape(&left.codes, &right.codes, "code maps")?;
    let (w, h) = (left.width(), left.height());
    let u = max_disp as usize;
    let mut out = DisparityMap::invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            let Some(code) = left.code(x, y) else {
                continue;
            };
            let found = (0..=u.min(x)).find(|&s| right.code(x - s, y) == Some(code));
            if let Some(s) = found {
                out.values.set(x, y, s as f64);
                out.valid.set(x, y, true);
            }
        }
    }
    Ok(out)
}
