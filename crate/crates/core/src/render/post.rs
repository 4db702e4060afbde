use image::RgbImage;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::imaging::{to_linear, to_u8, LinearImage};
use crate::lighting::luminance;

use super::{RenderError, RenderLayers};

/// Sensor and shadow adjustments applied to the rendered layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocessParams {
    /// Multiplier on the shadow layer, in [0, 1].
    pub shadow_strength: f64,
    /// Saturation factor, in [0, 2]; 1 keeps colors, 0 gives gray.
    pub saturation: f64,
    /// Gaussian blur sigma in pixels, in [0, 1.5].
    pub blur_sigma: f64,
    /// Per-channel Gaussian noise sigma in linear units, in [0, 0.1].
    pub noise_sigma: f64,
}

impl Default for PostprocessParams {
    fn default() -> Self {
        Self { shadow_strength: 0.8, saturation: 1.0, blur_sigma: 0.0, noise_sigma: 0.0 }
    }
}

pub const SHADOW_STRENGTH_RANGE: (f64, f64) = (0.0, 1.0);
pub const SATURATION_RANGE: (f64, f64) = (0.0, 2.0);
pub const BLUR_SIGMA_RANGE: (f64, f64) = (0.0, 1.5);
pub const NOISE_SIGMA_RANGE: (f64, f64) = (0.0, 0.1);

pub(crate) fn check_range(name: &'static str, value: f64, (min, max): (f64, f64)) -> Result<(), RenderError> {
    if value >= min && value <= max {
        Ok(())
    } else {
        Err(RenderError::OutOfRange { name, value, min, max })
    }
}

impl PostprocessParams {
    pub fn validate(&self) -> Result<(), RenderError> {
        check_range("shadow_strength", self.shadow_strength, SHADOW_STRENGTH_RANGE)?;
        check_range("saturation", self.saturation, SATURATION_RANGE)?;
        check_range("blur_sigma", self.blur_sigma, BLUR_SIGMA_RANGE)?;
        check_range("noise_sigma", self.noise_sigma, NOISE_SIGMA_RANGE)
    }
}

/// Scale the shadow layer and apply saturation, blur and noise to the object
/// colors. Alpha is never modified.
pub fn postprocess(layers: &RenderLayers, params: &PostprocessParams, rng: &mut impl Rng) -> Result<RenderLayers, RenderError> {
    params.validate()?;
    let mut out = layers.clone();
    for s in out.shadow.iter_mut() {
        *s = (*s * params.shadow_strength).clamp(0.0, 1.0);
    }
    if params.saturation != 1.0 {
        for p in out.object.iter_mut().filter(|p| p[3] > 0.0) {
            let y = luminance(&[p[0], p[1], p[2]]);
            for v in p.iter_mut().take(3) {
                *v = (y + params.saturation * (*v - y)).max(0.0);
            }
        }
    }
    if params.blur_sigma > 0.0 {
        masked_blur(&mut out, params.blur_sigma);
    }
    if params.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, params.noise_sigma).expect("validated sigma");
        for p in out.object.iter_mut().filter(|p| p[3] > 0.0) {
            let a = p[3];
            for v in p.iter_mut().take(3) {
                *v = (*v / a + noise.sample(rng)).max(0.0) * a;
            }
        }
    }
    Ok(out)
}

/// Blur premultiplied color and alpha together, then restore the original
/// alpha so nothing bleeds outside the asset mask.
fn masked_blur(layers: &mut RenderLayers, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let (w, h) = (layers.width() as i64, layers.height() as i64);
    let pass = |src: &[[f64; 4]], horizontal: bool| -> Vec<[f64; 4]> {
        let mut dst = vec![[0.0; 4]; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 4];
                let mut norm = 0.0;
                for (k, kw) in (-radius..=radius).zip(&kernel) {
                    let (sx, sy) = if horizontal { (x + k, y) } else { (x, y + k) };
                    if sx < 0 || sy < 0 || sx >= w || sy >= h {
                        continue;
                    }
                    let p = src[(sy * w + sx) as usize];
                    for c in 0..4 {
                        acc[c] += kw * p[c];
                    }
                    norm += kw;
                }
                dst[(y * w + x) as usize] = acc.map(|v| v / norm);
            }
        }
        dst
    };
    let blurred = pass(&pass(&layers.object, true), false);
    for (p, b) in layers.object.iter_mut().zip(blurred) {
        if p[3] > 0.0 && b[3] > 0.0 {
            for c in 0..3 {
                p[c] = b[c] / b[3] * p[3];
            }
        }
    }
}

fn check_size(frame: (u32, u32), layers: &RenderLayers) -> Result<(), RenderError> {
    let l = (layers.width(), layers.height());
    if frame != l {
        return Err(RenderError::ResolutionMismatch { frame, layers: l });
    }
    Ok(())
}

/// Premultiplied over-operator in linear space.
#[inline]
fn over(obj: &[f64; 4], shadow: f64, real: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|c| obj[c] + (1.0 - obj[3]) * real[c] * (1.0 - shadow))
}

/// Composite onto an 8-bit frame. Pixels untouched by both layers keep their
/// original bytes.
pub fn composite(real: &RgbImage, layers: &RenderLayers) -> Result<RgbImage, RenderError> {
    check_size(real.dimensions(), layers)?;
    let mut out = real.clone();
    for (i, px) in out.pixels_mut().enumerate() {
        let (obj, shadow) = (&layers.object[i], layers.shadow[i]);
        if obj[3] == 0.0 && shadow == 0.0 {
            continue;
        }
        let lin = over(obj, shadow, px.0.map(to_linear));
        px.0 = lin.map(to_u8);
    }
    Ok(out)
}

/// Composite in linear space without quantization.
pub fn composite_linear(real: &LinearImage, layers: &RenderLayers) -> Result<LinearImage, RenderError> {
    check_size((real.width(), real.height()), layers)?;
    let data = real
        .pixels()
        .iter()
        .enumerate()
        .map(|(i, p)| over(&layers.object[i], layers.shadow[i], *p))
        .collect();
    Ok(LinearImage::from_vec(real.width(), real.height(), data))
}
