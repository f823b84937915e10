//! Image inputs for multi-modal forecasters.
//!
//! A composed image is 128×128: a 16-row grayscale stripe of the standardized
//! series on top, and a 112-row Morlet scalogram below it with the highest
//! frequencies (smallest scales) first. Line plots are drawn on a white
//! canvas. All rendering is deterministic.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::ingest::standardize;

pub const IMAGE_SIZE: usize = 128;
pub const STRIPE_ROWS: usize = crate::perturb::STRIPE_ROWS;
pub const SPECTROGRAM_ROWS: usize = IMAGE_SIZE - STRIPE_ROWS;
pub const DEFAULT_OMEGA0: f64 = 5.0;

/// 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    data: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, px: [u8; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![px; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.data[y * self.width + x]
    }

    pub fn put(&mut self, x: usize, y: usize, px: [u8; 3]) {
        self.data[y * self.width + x] = px;
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[u8; 3]> {
        self.data.iter()
    }

    pub fn pixels_mut(&mut self) -> impl Iterator<Item = &mut [u8; 3]> {
        self.data.iter_mut()
    }

    /// Number of pixels that differ; panics on size mismatch.
    pub fn diff_count(&self, other: &RgbImage) -> usize {
        assert_eq!((self.width, self.height), (other.width, other.height));
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| a != b)
            .count()
    }

    pub fn raw_bytes(&self) -> Vec<u8> {
        self.data.iter().flatten().copied().collect()
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut buf, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header()?;
            writer.write_image_data(&self.raw_bytes())?;
        }
        Ok(buf)
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let bytes = self.encode_png()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }
}

/// Morlet wavelet `sqrt(1/s) π^{-1/4} exp(-x²/(2s²)) exp(i ω0 x / s)`.
pub fn morlet(x: f64, s: f64, omega0: f64) -> Result<Complex64> {
    if !(s > 0.0) {
        return Err(Error::param("s", format!("scale must be > 0, got {s}")));
    }
    let u = x / s;
    let envelope = (1.0 / s).sqrt() * PI.powf(-0.25) * (-0.5 * u * u).exp();
    Ok(Complex64::from_polar(envelope, omega0 * u))
}

/// Magnitudes on a `(scales × time)` grid; row 0 is the smallest scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub magnitudes: Vec<Vec<f64>>,
    pub scales: Vec<f64>,
    pub omega0: f64,
}

impl Spectrogram {
    pub fn rows(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn cols(&self) -> usize {
        self.magnitudes.first().map_or(0, Vec::len)
    }
}

/// Scale whose Morlet response peaks near a sinusoid of the given period.
pub fn scale_for_period(period: f64, omega0: f64) -> f64 {
    omega0 * period / (2.0 * PI)
}

/// `rows` scales, log-spaced in period from `min_period` to `max_period`.
pub fn log_scales(rows: usize, min_period: f64, max_period: f64, omega0: f64) -> Vec<f64> {
    if rows == 1 {
        return vec![scale_for_period(min_period, omega0)];
    }
    let (lo, hi) = (min_period.ln(), max_period.ln());
    (0..rows)
        .map(|i| {
            let t = i as f64 / (rows - 1) as f64;
            scale_for_period((lo + t * (hi - lo)).exp(), omega0)
        })
        .collect()
}

/// Default grid for an `n`-sample window: one scale per spectrogram row, periods 2..n.
pub fn default_scales(n: usize, omega0: f64) -> Vec<f64> {
    log_scales(SPECTROGRAM_ROWS, 2.0, (n.max(3)) as f64, omega0)
}

/// Direct-convolution continuous wavelet transform with zero padding.
///
/// `magnitudes[i][t] = |Σ_u values[u] · conj(ψ(u − t; scales[i]))|`.
pub fn cwt(values: &[f64], scales: &[f64], omega0: f64) -> Result<Spectrogram> {
    if values.len() < 2 {
        return Err(Error::param("values", "need at least 2 samples"));
    }
    if scales.is_empty() {
        return Err(Error::param("scales", "empty scale grid"));
    }
    if scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::param("scales", "scales must be positive and finite"));
    }
    if scales.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("scales", "scales must be strictly ascending"));
    }
    let n = values.len();
    let mut magnitudes = Vec::with_capacity(scales.len());
    for &s in scales {
        // Tabulate the kernel once per scale for every lag in -(n-1)..=(n-1).
        let kernel: Vec<Complex64> = (0..2 * n - 1)
            .map(|k| morlet(k as f64 - (n - 1) as f64, s, omega0).map(|c| c.conj()))
            .collect::<Result<_>>()?;
        let row = (0..n)
            .map(|t| {
                values
                    .iter()
                    .enumerate()
                    .fold(Complex64::new(0.0, 0.0), |acc, (u, &v)| {
                        acc + kernel[u + n - 1 - t] * v
                    })
                    .norm()
            })
            .collect();
        magnitudes.push(row);
    }
    Ok(Spectrogram {
        magnitudes,
        scales: scales.to_vec(),
        omega0,
    })
}

/// Linear interpolation of `values` onto `len` evenly spaced points.
pub fn resample(values: &[f64], len: usize) -> Vec<f64> {
    if values.len() == len {
        return values.to_vec();
    }
    if values.len() == 1 || len == 1 {
        return vec![values[0]; len];
    }
    let step = (values.len() - 1) as f64 / (len - 1) as f64;
    (0..len)
        .map(|i| {
            let pos = i as f64 * step;
            let lo = (pos.floor() as usize).min(values.len() - 2);
            let frac = pos - lo as f64;
            values[lo] * (1.0 - frac) + values[lo + 1] * frac
        })
        .collect()
}

/// Min-max scale to `0..=255`; a constant input maps to mid-gray.
fn to_levels(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) || !span.is_finite() {
        return vec![128; values.len()];
    }
    values
        .iter()
        .map(|v| ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

const COLORMAP: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

/// Five-stop viridis-style colormap.
pub fn colormap(level: u8) -> [u8; 3] {
    let t = f64::from(level) / 255.0 * (COLORMAP.len() - 1) as f64;
    let i = (t.floor() as usize).min(COLORMAP.len() - 2);
    let f = t - i as f64;
    let (a, b) = (COLORMAP[i], COLORMAP[i + 1]);
    [0, 1, 2].map(|c| (a[c] + (b[c] - a[c]) * f).round() as u8)
}

/// 128×128 composed image: stripe of `stripe_values` over the colour-mapped scalogram.
pub fn compose_image(spec: &Spectrogram, stripe_values: &[f64]) -> Result<RgbImage> {
    if spec.rows() == 0 || spec.cols() == 0 {
        return Err(Error::param("spectrogram", "empty magnitude grid"));
    }
    if stripe_values.is_empty() {
        return Err(Error::param("stripe_values", "empty stripe"));
    }
    let mut img = RgbImage::filled(IMAGE_SIZE, IMAGE_SIZE, [0, 0, 0]);

    let stripe = to_levels(&resample(stripe_values, IMAGE_SIZE));
    for (x, &g) in stripe.iter().enumerate() {
        for y in 0..STRIPE_ROWS {
            img.put(x, y, [g, g, g]);
        }
    }

    // Resample rows to the image width, then rows to the 112-row body.
    let widened: Vec<Vec<f64>> = spec
        .magnitudes
        .iter()
        .map(|row| resample(row, IMAGE_SIZE))
        .collect();
    let mut body = vec![0.0; SPECTROGRAM_ROWS * IMAGE_SIZE];
    for x in 0..IMAGE_SIZE {
        let column: Vec<f64> = widened.iter().map(|r| r[x]).collect();
        for (y, v) in resample(&column, SPECTROGRAM_ROWS).into_iter().enumerate() {
            body[y * IMAGE_SIZE + x] = v;
        }
    }
    for (i, level) in to_levels(&body).into_iter().enumerate() {
        img.put(i % IMAGE_SIZE, STRIPE_ROWS + i / IMAGE_SIZE, colormap(level));
    }
    Ok(img)
}

/// Standardize `values`, transform with the default scale grid and compose.
pub fn spectrogram_image(values: &[f64], omega0: f64) -> Result<RgbImage> {
    let z = standardize(values)?;
    let spec = cwt(&z, &default_scales(values.len(), omega0), omega0)?;
    compose_image(&spec, &z)
}

pub const PLOT_MARGIN: usize = 8;
const LINE_COLOR: [u8; 3] = [31, 119, 180];

/// Pixel row for each sample of a min-max scaled line plot (y grows downward).
pub fn plot_ordinates(values: &[f64], height: usize) -> Vec<usize> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let top = PLOT_MARGIN as f64;
    let bottom = (height - 1 - PLOT_MARGIN) as f64;
    values
        .iter()
        .map(|v| {
            let frac = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            (bottom - frac * (bottom - top)).round() as usize
        })
        .collect()
}

fn plot_abscissas(count: usize, width: usize) -> Vec<usize> {
    let left = PLOT_MARGIN as f64;
    let right = (width - 1 - PLOT_MARGIN) as f64;
    (0..count)
        .map(|i| {
            let frac = if count > 1 { i as f64 / (count - 1) as f64 } else { 0.5 };
            (left + frac * (right - left)).round() as usize
        })
        .collect()
}

fn draw_segment(img: &mut RgbImage, (x0, y0): (usize, usize), (x1, y1): (usize, usize)) {
    // Bresenham.
    let (mut x, mut y) = (x0 as i64, y0 as i64);
    let (x1, y1) = (x1 as i64, y1 as i64);
    let dx = (x1 - x).abs();
    let dy = -(y1 - y).abs();
    let sx = if x < x1 { 1 } else { -1 };
    let sy = if y < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        img.put(x as usize, y as usize, LINE_COLOR);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Polyline of `values` on a white `size × size` canvas.
pub fn render_lineplot_sized(values: &[f64], size: usize) -> Result<RgbImage> {
    if values.len() < 2 {
        return Err(Error::param("values", "need at least 2 samples to plot"));
    }
    if size <= 2 * PLOT_MARGIN + 1 {
        return Err(Error::param("size", "canvas smaller than its margins"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("values", "cannot plot non-finite values"));
    }
    let mut img = RgbImage::filled(size, size, [255, 255, 255]);
    let xs = plot_abscissas(values.len(), size);
    let ys = plot_ordinates(values, size);
    let points: Vec<(usize, usize)> = xs.into_iter().zip(ys).collect();
    for seg in points.windows(2) {
        draw_segment(&mut img, seg[0], seg[1]);
    }
    Ok(img)
}

pub fn render_lineplot(values: &[f64]) -> Result<RgbImage> {
    render_lineplot_sized(values, IMAGE_SIZE)
}
