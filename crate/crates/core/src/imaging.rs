//! Float image containers and the gamma transfer used at the 8-bit boundary.

use image::RgbImage;

/// Transfer exponent assumed for 8-bit inputs.
pub const GAMMA: f64 = 2.2;

pub type Rgb = [f64; 3];

/// Linear-light RGB image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage {
    width: u32,
    height: u32,
    data: Vec<Rgb>,
}

impl LinearImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: u32, height: u32, value: Rgb) -> Self {
        Self { width, height, data: vec![value; width as usize * height as usize] }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> Rgb) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<Rgb>) -> Self {
        assert_eq!(data.len(), width as usize * height as usize, "pixel count mismatch");
        Self { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [Rgb] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Rgb {
        self.data[self.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: Rgb) {
        let i = self.index(x, y);
        self.data[i] = v;
    }

    /// Bilinear sample at continuous image coordinates (pixel centers at +0.5),
    /// clamped at the border.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> Rgb {
        let fx = (u - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (v - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as u32;
        let y0 = fy.floor() as u32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = fx - x0 as f64;
        let ay = fy - y0 as f64;
        let (p00, p10, p01, p11) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = p00[c] + (p10[c] - p00[c]) * ax;
            let bottom = p01[c] + (p11[c] - p01[c]) * ax;
            out[c] = top + (bottom - top) * ay;
        }
        out
    }
}

/// Single-channel float map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl ScalarMap {
    pub fn filled(width: u32, height: u32, value: f64) -> Self {
        Self { width, height, data: vec![value; width as usize * height as usize] }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width as usize * height as usize, "pixel count mismatch");
        Self { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: f64) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = v;
    }
}

fn linear_lut() -> &'static [f64; 256] {
    use std::sync::OnceLock;
    static LUT: OnceLock<[f64; 256]> = OnceLock::new();
    LUT.get_or_init(|| std::array::from_fn(|i| (i as f64 / 255.0).powf(GAMMA)))
}

/// Decode an 8-bit value to linear light.
#[inline]
pub fn to_linear(v: u8) -> f64 {
    linear_lut()[v as usize]
}

/// Clamp to `[0, 1]`, apply the inverse gamma and quantize.
#[inline]
pub fn to_u8(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v.powf(1.0 / GAMMA) * 255.0).round() as u8
}

pub fn linearize(img: &RgbImage) -> LinearImage {
    let data = img.pixels().map(|p| [to_linear(p[0]), to_linear(p[1]), to_linear(p[2])]).collect();
    LinearImage { width: img.width(), height: img.height(), data }
}

pub fn delinearize(img: &LinearImage) -> RgbImage {
    let mut out = RgbImage::new(img.width, img.height);
    for (dst, src) in out.pixels_mut().zip(img.data.iter()) {
        *dst = image::Rgb([to_u8(src[0]), to_u8(src[1]), to_u8(src[2])]);
    }
    out
}
