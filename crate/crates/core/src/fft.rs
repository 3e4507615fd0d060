//! Zero-padded 2-D cross-correlation through FFTs, used to accumulate
//! offset-indexed second moments over whole images.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Smallest `n >= min` whose only prime factors are 2, 3, 5 and 7.
pub fn fast_len(min: usize) -> usize {
    let mut n = min.max(1);
    loop {
        let mut m = n;
        for p in [2, 3, 5, 7] {
            while m % p == 0 {
                m /= p;
            }
        }
        if m == 1 {
            return n;
        }
        n += 1;
    }
}

/// A planned `width x height` complex 2-D transform.
pub struct Fft2 {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

/// A real raster transformed into the frequency domain.
pub struct Spectrum(Vec<Complex64>);

impl Fft2 {
    pub fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    fn transform(&self, buf: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        let (w, h) = (self.width, self.height);
        // Every row at once, then every column via a transposed copy.
        row.process(buf);
        let mut transposed = vec![Complex64::default(); w * h];
        for y in 0..h {
            for x in 0..w {
                transposed[x * h + y] = buf[y * w + x];
            }
        }
        col.process(&mut transposed);
        for x in 0..w {
            for y in 0..h {
                buf[y * w + x] = transposed[x * h + y];
            }
        }
    }

    /// Transform a real `w x h` raster (row-major, `w <= width`,
    /// `h <= height`) zero-padded to the plan size.
    pub fn forward(&self, data: &[f64], w: usize, h: usize) -> Spectrum {
        assert!(w <= self.width && h <= self.height && data.len() == w * h);
        let mut buf = vec![Complex64::default(); self.width * self.height];
        for y in 0..h {
            for x in 0..w {
                buf[y * self.width + x].re = data[y * w + x];
            }
        }
        self.transform(&mut buf, &self.row_fwd, &self.col_fwd);
        Spectrum(buf)
    }

    /// `out(dx, dy) = sum_z a(z) * b(z + d)` for `|dx| <= rx`, `|dy| <= ry`,
    /// laid out row-major over `(2ry+1) x (2rx+1)` with `d = 0` at the centre.
    /// The plan must be at least input size plus radius on each axis so no
    /// circular wrap reaches the requested offsets.
    pub fn cross_correlate(&self, a: &Spectrum, b: &Spectrum, rx: usize, ry: usize) -> Vec<f64> {
        let mut buf: Vec<Complex64> = a.0.iter().zip(&b.0).map(|(p, q)| p.conj() * q).collect();
        self.transform(&mut buf, &self.row_inv, &self.col_inv);
        let scale = 1.0 / (self.width * self.height) as f64;
        let (ow, oh) = (2 * rx + 1, 2 * ry + 1);
        let mut out = vec![0.0; ow * oh];
        for oy in 0..oh {
            let dy = (oy + self.height - ry) % self.height;
            for ox in 0..ow {
                let dx = (ox + self.width - rx) % self.width;
                out[oy * ow + ox] = buf[dy * self.width + dx].re * scale;
            }
        }
        out
    }
}
