//! Grayscale images, blur operators and the deblurring least-squares setup.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::blocks::BlockStructure;
use crate::error::{check_dim, Error, Result};
use crate::io::write_atomic;
use crate::problems::{BilevelProblem, LeastSquaresInstance};

/// Largest pixel count for which a dense blur matrix is built.
pub const MAX_DENSE_PIXELS: usize = 4096;

/// Row-major grayscale image; intensities nominally in `[0, 1]`.
///
/// Values are kept as given so solver iterates can be wrapped without
/// clamping; clamping happens on write.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        check_dim(width * height, pixels.len())?;
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.pixels[row * self.width + col] = v;
    }

    /// Smooth synthetic test scene: a shaded background with two soft blobs.
    pub fn synthetic(width: usize, height: usize) -> Result<Self> {
        let mut px = Vec::with_capacity(width * height);
        let (w, h) = (width as f64, height as f64);
        for r in 0..height {
            for c in 0..width {
                let (y, x) = ((r as f64 + 0.5) / h, (c as f64 + 0.5) / w);
                let blob = |cx: f64, cy: f64, s: f64| {
                    (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp()
                };
                let v = 0.15 + 0.2 * x + 0.5 * blob(0.35, 0.4, 0.15) + 0.3 * blob(0.7, 0.7, 0.1);
                px.push(v.clamp(0.0, 1.0));
            }
        }
        Self::new(width, height, px)
    }

    /// Adds i.i.d. Gaussian noise with standard deviation `sigma`.
    pub fn with_noise(&self, sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise level must be nonnegative, got {sigma}"
            )));
        }
        if sigma == 0.0 {
            return Ok(self.clone());
        }
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pixels = self
            .pixels
            .iter()
            .map(|p| p + normal.sample(&mut rng))
            .collect();
        Self::new(self.width, self.height, pixels)
    }
}

/// Square, odd-sized, nonnegative kernel with unit sum.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    size: usize,
    taps: Vec<f64>,
}

impl BlurKernel {
    pub fn new(size: usize, taps: Vec<f64>) -> Result<Self> {
        if size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "kernel size must be odd, got {size}"
            )));
        }
        check_dim(size * size, taps.len())?;
        if taps.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(Error::InvalidArgument("kernel taps must be nonnegative".into()));
        }
        let sum: f64 = taps.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "kernel taps must sum to 1, got {sum}"
            )));
        }
        Ok(Self { size, taps })
    }

    /// Rescales arbitrary nonnegative taps to unit sum.
    pub fn normalized(size: usize, taps: Vec<f64>) -> Result<Self> {
        let sum: f64 = taps.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kernel taps must have a positive sum, got {sum}"
            )));
        }
        Self::new(size, taps.into_iter().map(|t| t / sum).collect())
    }

    pub fn identity() -> Self {
        Self {
            size: 1,
            taps: vec![1.0],
        }
    }

    pub fn uniform(size: usize) -> Result<Self> {
        Self::normalized(size, vec![1.0; size * size])
    }

    pub fn gaussian(size: usize, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "gaussian sigma must be positive, got {sigma}"
            )));
        }
        let half = (size / 2) as f64;
        let taps = (0..size * size)
            .map(|i| {
                let (dy, dx) = ((i / size) as f64 - half, (i % size) as f64 - half);
                (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        Self::normalized(size, taps)
    }

    /// Whitespace-separated square grid of taps, normalized to unit sum.
    pub fn from_text(text: &str) -> Result<Self> {
        let rows = crate::io::parse_matrix_text(text)?;
        let size = rows.len();
        if rows[0].len() != size {
            return Err(Error::InvalidArgument(format!(
                "kernel grid must be square, got {}x{}",
                size,
                rows[0].len()
            )));
        }
        Self::normalized(size, rows.concat())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    fn tap(&self, dy: isize, dx: isize) -> f64 {
        let h = (self.size / 2) as isize;
        self.taps[((dy + h) as usize) * self.size + (dx + h) as usize]
    }

    fn half(&self) -> isize {
        (self.size / 2) as isize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Pixels outside the image contribute zero.
    Zero,
    /// Out-of-range coordinates clamp to the nearest edge pixel.
    Replicate,
}

impl Boundary {
    fn resolve(self, i: isize, len: usize) -> Option<usize> {
        if (0..len as isize).contains(&i) {
            return Some(i as usize);
        }
        match self {
            Boundary::Zero => None,
            Boundary::Replicate => Some(i.clamp(0, len as isize - 1) as usize),
        }
    }
}

/// Dense `n × n` matrix of the 2-D blur on a `width × height` grid.
///
/// Row `i` produces blurred pixel `i` (row-major) as
/// `Σ_{dy,dx} k[dy,dx] · image[r+dy, c+dx]` under the boundary rule.
pub fn blur_matrix(
    kernel: &BlurKernel,
    width: usize,
    height: usize,
    boundary: Boundary,
) -> Result<DMatrix<f64>> {
    let n = width * height;
    if n > MAX_DENSE_PIXELS {
        return Err(Error::SizeLimit {
            what: "pixels",
            actual: n,
            limit: MAX_DENSE_PIXELS,
        });
    }
    if kernel.size().is_multiple_of(2) {
        return Err(Error::InvalidArgument("kernel size must be odd".into()));
    }
    let mut a = DMatrix::zeros(n, n);
    let h = kernel.half();
    for r in 0..height {
        for c in 0..width {
            let row = r * width + c;
            for dy in -h..=h {
                let Some(rr) = boundary.resolve(r as isize + dy, height) else {
                    continue;
                };
                for dx in -h..=h {
                    let Some(cc) = boundary.resolve(c as isize + dx, width) else {
                        continue;
                    };
                    a[(row, rr * width + cc)] += kernel.tap(dy, dx);
                }
            }
        }
    }
    Ok(a)
}

/// Direct 2-D convolution; equals `blur_matrix · flatten(image)`.
pub fn apply_blur(kernel: &BlurKernel, image: &GrayImage, boundary: Boundary) -> GrayImage {
    let (w, hgt) = (image.width, image.height);
    let h = kernel.half();
    let mut out = vec![0.0; w * hgt];
    for r in 0..hgt {
        for c in 0..w {
            let mut acc = 0.0;
            for dy in -h..=h {
                let Some(rr) = boundary.resolve(r as isize + dy, hgt) else {
                    continue;
                };
                for dx in -h..=h {
                    let Some(cc) = boundary.resolve(c as isize + dx, w) else {
                        continue;
                    };
                    acc += kernel.tap(dy, dx) * image.get(rr, cc);
                }
            }
            out[r * w + c] = acc;
        }
    }
    GrayImage {
        width: w,
        height: hgt,
        pixels: out,
    }
}

// ---------------------------------------------------------------------------
// PGM
// ---------------------------------------------------------------------------

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self, what: &str) -> Result<(usize, &str)> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Parse {
                offset: start,
                message: format!("missing {what}"),
            });
        }
        let s = std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| Error::Parse {
            offset: start,
            message: format!("non-ASCII {what}"),
        })?;
        Ok((start, s))
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let (offset, tok) = self.token(what)?;
        tok.parse().map_err(|_| Error::Parse {
            offset,
            message: format!("invalid {what} {tok:?}"),
        })
    }
}

/// Decodes a P2 (ASCII) or P5 (binary) PGM, scaling samples by `maxval`.
pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut cur = HeaderCursor { bytes, pos: 0 };
    let (_, magic) = cur.token("magic number")?;
    let binary = match magic {
        "P2" => false,
        "P5" => true,
        other => {
            return Err(Error::Parse {
                offset: 0,
                message: format!("unsupported magic {other:?}, expected P2 or P5"),
            })
        }
    };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_offset = {
        cur.skip_ws_and_comments();
        cur.pos
    };
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Parse {
            offset: 0,
            message: format!("image dimensions must be positive, got {width}x{height}"),
        });
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Parse {
            offset: maxval_offset,
            message: format!("maxval must be in 1..=65535, got {maxval}"),
        });
    }
    let count = width.checked_mul(height).ok_or_else(|| Error::Parse {
        offset: 0,
        message: "image dimensions overflow".into(),
    })?;
    let scale = maxval as f64;
    let mut pixels = Vec::with_capacity(count);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = cur.pos + 1;
        let bytes_per = if maxval < 256 { 1 } else { 2 };
        let expected = count * bytes_per;
        let available = bytes.len().saturating_sub(start);
        if available < expected {
            return Err(Error::Parse {
                offset: bytes.len(),
                message: format!(
                    "truncated P5 payload: expected {expected} bytes, found {available}"
                ),
            });
        }
        let raster = &bytes[start..start + expected];
        for i in 0..count {
            let v = if bytes_per == 1 {
                raster[i] as usize
            } else {
                ((raster[2 * i] as usize) << 8) | raster[2 * i + 1] as usize
            };
            if v > maxval {
                return Err(Error::Parse {
                    offset: start + i * bytes_per,
                    message: format!("sample {v} exceeds maxval {maxval}"),
                });
            }
            pixels.push(v as f64 / scale);
        }
    } else {
        for i in 0..count {
            let (offset, tok) = cur.token("sample").map_err(|_| Error::Parse {
                offset: bytes.len(),
                message: format!("truncated P2 payload: expected {count} samples, found {i}"),
            })?;
            let v: usize = tok.parse().map_err(|_| Error::Parse {
                offset,
                message: format!("invalid sample {tok:?}"),
            })?;
            if v > maxval {
                return Err(Error::Parse {
                    offset,
                    message: format!("sample {v} exceeds maxval {maxval}"),
                });
            }
            pixels.push(v as f64 / scale);
        }
    }
    GrayImage::new(width, height, pixels)
}

/// Encodes as 8-bit binary P5: clamp to `[0, 1]`, then round to `0..=255`.
pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(
        image
            .pixels
            .iter()
            .map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes)
}

/// Atomic write of [`encode_pgm`] output.
pub fn write_pgm(image: &GrayImage, path: &Path) -> Result<()> {
    write_atomic(path, &encode_pgm(image))
}

// ---------------------------------------------------------------------------
// Deblurring instance
// ---------------------------------------------------------------------------

/// Least-squares data plus the minimum-norm bilevel problem built on it.
#[derive(Debug, Clone)]
pub struct DeblurInstance {
    pub least_squares: Arc<LeastSquaresInstance>,
    pub problem: BilevelProblem,
    pub width: usize,
    pub height: usize,
}

/// `f(x) = ‖Ax − b‖²` with `A` the blur matrix and `b` the flattened blurred
/// image, `g(x) = ‖x‖²`, unconstrained pixels split into `blocks` contiguous
/// blocks.
pub fn make_deblur_instance(
    blurred: &GrayImage,
    kernel: &BlurKernel,
    boundary: Boundary,
    blocks: usize,
) -> Result<DeblurInstance> {
    let a = blur_matrix(kernel, blurred.width, blurred.height, boundary)?;
    let b = DVector::from_column_slice(&blurred.pixels);
    let ls = Arc::new(LeastSquaresInstance::new(a, b)?);
    let structure = BlockStructure::split_even(blurred.pixels.len(), blocks)?;
    let problem = BilevelProblem::min_norm_least_squares(ls.clone(), structure)?;
    Ok(DeblurInstance {
        least_squares: ls,
        problem,
        width: blurred.width,
        height: blurred.height,
    })
}

impl DeblurInstance {
    /// Wraps a solution vector as an image of the instance's shape.
    pub fn to_image(&self, x: &[f64]) -> Result<GrayImage> {
        GrayImage::new(self.width, self.height, x.to_vec())
    }
}
