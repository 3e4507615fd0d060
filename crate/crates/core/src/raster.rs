//! Floating-point image rasters and the small set of pixel operations the
//! inverters need: luminance conversion, padded crops, bilinear resampling,
//! display rescaling and PNG/PGM I/O.

use std::path::Path;

use crate::error::{Error, Result};

/// Luminance weights applied to RGB rasters.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// An inverter's output before and after display rescaling.
#[derive(Debug, Clone, PartialEq)]
pub struct Inversion {
    pub raw: Image,
    pub display: Image,
}

impl Inversion {
    pub fn new(raw: Image) -> Self {
        let display = raw.display_rescaled();
        Self { raw, display }
    }
}

/// Row-major raster with interleaved channels. Loaded images hold values in
/// `[0, 1]`; intermediate results may leave that range and are clamped on save.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Dimension(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "{}x{}x{} image needs {} values, got {}",
                width,
                height,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(channels == 1 || channels == 3);
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    /// Grayscale image from a function of `(x, y)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f64) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Three-channel copy; grayscale values are replicated.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        Image {
            width: self.width,
            height: self.height,
            channels: 3,
            data: self.data.iter().flat_map(|&v| [v, v, v]).collect(),
        }
    }

    /// Single-channel luminance copy; grayscale images are cloned.
    pub fn to_luminance(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2])
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Crop `w x h` pixels at `(x, y)`. The rectangle may extend past the
    /// image; outside pixels replicate the nearest edge pixel.
    pub fn crop_padded(&self, x: i64, y: i64, w: usize, h: usize) -> Image {
        let mut out = Image::zeros(w, h, self.channels);
        let max_x = self.width as i64 - 1;
        let max_y = self.height as i64 - 1;
        for oy in 0..h {
            let sy = (y + oy as i64).clamp(0, max_y) as usize;
            for ox in 0..w {
                let sx = (x + ox as i64).clamp(0, max_x) as usize;
                for c in 0..self.channels {
                    out.set(ox, oy, c, self.get(sx, sy, c));
                }
            }
        }
        out
    }

    /// Exact crop; the rectangle must lie inside the image.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Image> {
        if x + w > self.width || y + h > self.height {
            return Err(Error::Geometry(format!(
                "crop {w}x{h} at ({x}, {y}) leaves the {}x{} image",
                self.width, self.height
            )));
        }
        Ok(self.crop_padded(x as i64, y as i64, w, h))
    }

    /// Bilinear resampling with pixel-centre alignment. Resizing to the same
    /// geometry returns an identical copy.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let axis = |dst: usize, scale: f64, len: usize| -> (usize, usize, f64) {
            let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, pos - i0 as f64)
        };
        let cols: Vec<_> = (0..width).map(|x| axis(x, sx, self.width)).collect();
        let mut out = Image::zeros(width, height, self.channels);
        for y in 0..height {
            let (y0, y1, fy) = axis(y, sy, self.height);
            for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
                for c in 0..self.channels {
                    let top = self.get(x0, y0, c) * (1.0 - fx) + self.get(x1, y0, c) * fx;
                    let bottom = self.get(x0, y1, c) * (1.0 - fx) + self.get(x1, y1, c) * fx;
                    out.set(x, y, c, top * (1.0 - fy) + bottom * fy);
                }
            }
        }
        out
    }

    pub fn clamped(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Affine map sending the 1st/99th percentiles to 0/1, then clamp.
    /// A flat image maps to mid-gray.
    pub fn display_rescaled(&self) -> Image {
        let lo = percentile(&self.data, 0.01);
        let hi = percentile(&self.data, 0.99);
        let span = hi - lo;
        if !(span > 1e-12) {
            return self.map(|_| 0.5);
        }
        self.map(|v| ((v - lo) / span).clamp(0.0, 1.0))
    }

    /// Variance of the 4-neighbour Laplacian over interior pixels of the
    /// luminance image; a simple high-frequency energy measure.
    pub fn laplacian_energy(&self) -> f64 {
        let g = self.to_luminance();
        if g.width < 3 || g.height < 3 {
            return 0.0;
        }
        let mut values = Vec::with_capacity((g.width - 2) * (g.height - 2));
        for y in 1..g.height - 1 {
            for x in 1..g.width - 1 {
                let lap = g.get(x - 1, y, 0)
                    + g.get(x + 1, y, 0)
                    + g.get(x, y - 1, 0)
                    + g.get(x, y + 1, 0)
                    - 4.0 * g.get(x, y, 0);
                values.push(lap);
            }
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
    }

    /// Concatenate images left to right. Grayscale parts are replicated into
    /// colour montages and shorter parts are padded with black.
    pub fn hconcat(parts: &[&Image]) -> Image {
        let channels = parts.iter().map(|p| p.channels).max().unwrap_or(1);
        let width = parts.iter().map(|p| p.width).sum();
        let height = parts.iter().map(|p| p.height).max().unwrap_or(0);
        let mut out = Image::zeros(width, height, channels);
        let mut x0 = 0;
        for part in parts {
            for y in 0..part.height {
                for x in 0..part.width {
                    for c in 0..channels {
                        let src_c = if part.channels == 1 { 0 } else { c };
                        out.set(x0 + x, y, c, part.get(x, y, src_c));
                    }
                }
            }
            x0 += part.width;
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let decoded = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Codec {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })?;
        let (width, height) = (decoded.width() as usize, decoded.height() as usize);
        let gray = matches!(
            decoded.color(),
            image::ColorType::L8
                | image::ColorType::L16
                | image::ColorType::La8
                | image::ColorType::La16
        );
        let image = if gray {
            let buf = decoded.to_luma16();
            let data = buf
                .into_raw()
                .into_iter()
                .map(|v| v as f64 / 65535.0)
                .collect();
            Image::new(width, height, 1, data)?
        } else {
            let buf = decoded.to_rgb16();
            let data = buf
                .into_raw()
                .into_iter()
                .map(|v| v as f64 / 65535.0)
                .collect();
            Image::new(width, height, 3, data)?
        };
        Ok(image)
    }

    /// Save as 8-bit PNG or PGM/PPM (chosen by extension) after clamping.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        let format = match ext.as_deref() {
            Some("pgm") | Some("ppm") | Some("pnm") => image::ImageFormat::Pnm,
            _ => image::ImageFormat::Png,
        };
        image::save_buffer_with_format(
            path,
            &bytes,
            self.width as u32,
            self.height as u32,
            color,
            format,
        )
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Codec {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })
    }
}

/// Linear-interpolated percentile of `values`, `q` in `[0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}
