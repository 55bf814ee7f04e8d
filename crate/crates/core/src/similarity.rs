//! Structural similarity between frame thumbnails.
//!
//! Frames are reduced to 25x25 greyscale thumbnails with a Lanczos-3
//! resampler, then compared with a Gaussian-weighted sliding-window SSIM
//! averaged over every window position.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const THUMB_SIDE: usize = 25;
pub const THUMB_LEN: usize = THUMB_SIDE * THUMB_SIDE;

/// 25x25 greyscale intensity grid, row-major, values in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Thumbnail {
    pixels: Vec<f64>,
}

impl Thumbnail {
    pub fn new(pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != THUMB_LEN {
            return Err(Error::ShapeMismatch(format!(
                "thumbnail needs {THUMB_LEN} values, got {}",
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=255.0).contains(*v)) {
            return Err(Error::ShapeMismatch(format!("intensity {v} outside [0,255]")));
        }
        Ok(Thumbnail { pixels })
    }

    pub fn uniform(value: f64) -> Result<Self> {
        Thumbnail::new(vec![value; THUMB_LEN])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Thumbnail::new(bytes.iter().map(|&b| b as f64).collect())
    }

    /// Rounds each intensity to the nearest byte.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|v| v.round() as u8).collect()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * THUMB_SIDE + col]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / THUMB_LEN as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SsimParams {
    pub window: usize,
    pub stride: usize,
    pub gaussian_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            stride: 1,
            gaussian_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 255.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window.is_multiple_of(2) || self.window == 0 || self.window > THUMB_SIDE {
            return Err(Error::config("ssim.window", "must be odd and <= 25"));
        }
        if self.stride == 0 {
            return Err(Error::config("ssim.stride", "must be positive"));
        }
        if !(self.gaussian_sigma > 0.0) {
            return Err(Error::config("ssim.gaussian_sigma", "must be positive"));
        }
        if !(self.c1() > 0.0) || !(self.c2() > 0.0) {
            return Err(Error::config("ssim.k1/k2", "stabilizers must be positive"));
        }
        Ok(())
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    fn taps(&self) -> Vec<f64> {
        let c = (self.window / 2) as f64;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - c;
                (-d * d / (2.0 * self.gaussian_sigma * self.gaussian_sigma)).exp()
            })
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }
}

/// Mean SSIM over every window position (15x15 with the default window).
pub fn ssim(a: &Thumbnail, b: &Thumbnail, params: &SsimParams) -> Result<f64> {
    params.validate()?;
    if a.pixels.len() != b.pixels.len() {
        return Err(Error::ShapeMismatch("thumbnails differ in size".into()));
    }
    let n = THUMB_SIDE;
    let win = params.window;
    let taps = params.taps();
    let positions: Vec<usize> = (0..=n - win).step_by(params.stride).collect();

    // Horizontal pass over the five moment images: x, y, x^2, y^2, xy.
    let mut horiz = vec![[0.0f64; 5]; n * positions.len()];
    for row in 0..n {
        for (pi, &col) in positions.iter().enumerate() {
            let acc = &mut horiz[row * positions.len() + pi];
            for (j, g) in taps.iter().enumerate() {
                let x = a.get(row, col + j);
                let y = b.get(row, col + j);
                acc[0] += g * x;
                acc[1] += g * y;
                acc[2] += g * x * x;
                acc[3] += g * y * y;
                acc[4] += g * x * y;
            }
        }
    }

    let (c1, c2) = (params.c1(), params.c2());
    let mut total = 0.0;
    for &row in &positions {
        for pi in 0..positions.len() {
            let mut m = [0.0f64; 5];
            for (i, g) in taps.iter().enumerate() {
                let h = &horiz[(row + i) * positions.len() + pi];
                for k in 0..5 {
                    m[k] += g * h[k];
                }
            }
            let (mu_x, mu_y) = (m[0], m[1]);
            let var_x = m[2] - mu_x * mu_x;
            let var_y = m[3] - mu_y * mu_y;
            let cov = m[4] - mu_x * mu_y;
            total += ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2))
                / ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2));
        }
    }
    Ok(total / (positions.len() * positions.len()) as f64)
}

/// Greyscale image of arbitrary size, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if pixels.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{width}x{height} image needs {} values, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }
}

const LANCZOS_RADIUS: f64 = 3.0;

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

fn lanczos(x: f64) -> f64 {
    if x.abs() < LANCZOS_RADIUS {
        sinc(x) * sinc(x / LANCZOS_RADIUS)
    } else {
        0.0
    }
}

/// Per-output-sample list of (source index, weight), weights summing to 1.
fn resample_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    let filter_scale = scale.max(1.0);
    let support = LANCZOS_RADIUS * filter_scale;
    (0..dst)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale;
            let lo = (center - support).floor() as i64;
            let hi = (center + support).ceil() as i64;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            for j in lo..=hi {
                let w = lanczos((j as f64 + 0.5 - center) / filter_scale);
                if w == 0.0 {
                    continue;
                }
                let idx = j.clamp(0, src as i64 - 1) as usize;
                match taps.iter_mut().find(|(k, _)| *k == idx) {
                    Some(t) => t.1 += w,
                    None => taps.push((idx, w)),
                }
            }
            let sum: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= sum;
            }
            taps
        })
        .collect()
}

/// Downsamples an image to a 25x25 thumbnail with separable Lanczos-3.
pub fn make_thumbnail(image: &GrayImage) -> Result<Thumbnail> {
    if image.width == 0 || image.height == 0 || image.pixels.is_empty() {
        return Err(Error::EmptyImage);
    }
    let xw = resample_weights(image.width, THUMB_SIDE);
    let yw = resample_weights(image.height, THUMB_SIDE);

    let mut rows = vec![0.0; image.height * THUMB_SIDE];
    for r in 0..image.height {
        let src = &image.pixels[r * image.width..(r + 1) * image.width];
        for (c, taps) in xw.iter().enumerate() {
            rows[r * THUMB_SIDE + c] = taps.iter().map(|&(k, w)| src[k] * w).sum();
        }
    }
    let mut out = vec![0.0; THUMB_LEN];
    for (r, taps) in yw.iter().enumerate() {
        for c in 0..THUMB_SIDE {
            let v: f64 = taps.iter().map(|&(k, w)| rows[k * THUMB_SIDE + c] * w).sum();
            out[r * THUMB_SIDE + c] = v.clamp(0.0, 255.0);
        }
    }
    Thumbnail::new(out)
}
