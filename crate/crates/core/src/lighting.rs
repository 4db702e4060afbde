//! Environment lighting: LDR to HDR expansion through a pluggable estimator,
//! the peak direction / intensity encodings, env-map fusion, ego lights for
//! dark scenes and the spherical-harmonic irradiance used for shading.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{LinearImage, Rgb, ScalarMap};
use crate::panorama::{pixel_solid_angle, DirectionEncoding, Panorama};

/// Sharpness of the peak direction encoding.
pub const PEAK_SHARPNESS: f64 = 100.0;
/// `I_peak` level at or above which the peak intensity is written.
pub const PEAK_INTENSITY_THRESHOLD: f64 = 0.98;
/// Linear LDR level at or above which a channel counts as saturated.
pub const SATURATION_THRESHOLD: f64 = 0.9;
/// Mean env luminance strictly below which the ego lights switch on.
pub const EGO_LIGHT_THRESHOLD: f64 = 0.5;
pub const LATENT_DIM: usize = 64;

const UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LightingError {
    #[error("peak direction must be unit length (norm {0})")]
    NotUnit(f64),
    #[error("panorama has uncovered pixels; inpaint it first")]
    NotInpainted,
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimensionMismatch((u32, u32), (u32, u32)),
    #[error("estimator failed: {0}")]
    Estimator(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkyFeatures {
    /// Unit direction towards the dominant light, ego frame.
    pub peak_direction: [f64; 3],
    /// Linear radiance of the dominant light.
    pub peak_intensity: [f64; 3],
    /// Estimator-specific summary.
    pub latent: Vec<f64>,
}

impl SkyFeatures {
    pub fn peak_direction(&self) -> Vector3<f64> {
        Vector3::from(self.peak_direction)
    }
}

/// HDR radiance panorama used to light the inserted assets.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentMap {
    pub panorama: Panorama,
    pub sky: SkyFeatures,
}

/// Rec. 709 relative luminance.
#[inline]
pub fn luminance(rgb: &Rgb) -> f64 {
    0.2126 * rgb[0] + 0.7152 * rgb[1] + 0.0722 * rgb[2]
}

/// `exp(100 (d . f_d - 1))` per pixel.
pub fn peak_direction_map(pe: &DirectionEncoding, f_d: &Vector3<f64>) -> Result<ScalarMap, LightingError> {
    let n = f_d.norm();
    if n.is_nan() || (n - 1.0).abs() > UNIT_TOL {
        return Err(LightingError::NotUnit(n));
    }
    let data = pe.directions().iter().map(|d| (PEAK_SHARPNESS * (d.dot(f_d) - 1.0)).exp()).collect();
    Ok(ScalarMap::from_vec(pe.width(), pe.height(), data))
}

/// `f_i` where the peak map is at least 0.98, zero elsewhere.
pub fn peak_intensity_map(peak: &ScalarMap, f_i: &Rgb) -> LinearImage {
    let data = peak
        .values()
        .iter()
        .map(|&p| if p >= PEAK_INTENSITY_THRESHOLD { *f_i } else { [0.0; 3] })
        .collect();
    LinearImage::from_vec(peak.width(), peak.height(), data)
}

/// LDR -> HDR panorama expansion. Implementations must be usable from several
/// threads at once.
pub trait HdrEstimator: Send + Sync {
    fn estimate(&self, ldr: &Panorama, pe: &DirectionEncoding) -> Result<(Panorama, SkyFeatures), LightingError>;
}

/// Deterministic stand-in for a learned sky model.
///
/// The peak direction is the radiance- and solid-angle-weighted mean direction
/// of the brightest `top_fraction` of pixels. When anything is saturated the
/// peak intensity is `sun_scale` times the brightest pixel and is added back
/// onto saturated channels following the peak encodings; otherwise the panorama
/// passes through unchanged and the peak intensity is the brightest pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyticHdrEstimator {
    pub sun_scale: f64,
    pub top_fraction: f64,
}

impl Default for AnalyticHdrEstimator {
    fn default() -> Self {
        Self { sun_scale: 50.0, top_fraction: 0.01 }
    }
}

impl HdrEstimator for AnalyticHdrEstimator {
    fn estimate(&self, ldr: &Panorama, pe: &DirectionEncoding) -> Result<(Panorama, SkyFeatures), LightingError> {
        let (w, h) = (ldr.width(), ldr.height());
        if (pe.width(), pe.height()) != (w, h) {
            return Err(LightingError::DimensionMismatch((w, h), (pe.width(), pe.height())));
        }
        if !(self.sun_scale >= 1.0 && self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return Err(LightingError::Estimator("sun_scale must be >= 1 and top_fraction in (0, 1]".into()));
        }
        let px = ldr.pixels.pixels();
        let lum: Vec<f64> = px.iter().map(luminance).collect();

        let k = ((self.top_fraction * lum.len() as f64).ceil() as usize).clamp(1, lum.len());
        let mut order: Vec<usize> = (0..lum.len()).collect();
        let by_brightness = |a: &usize, b: &usize| lum[*b].total_cmp(&lum[*a]).then(a.cmp(b));
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, by_brightness);
        }
        let mut top = order[..k].to_vec();
        top.sort_unstable();
        let mut mean = Vector3::zeros();
        for &i in &top {
            let v = (i / w as usize) as u32;
            mean += pe.directions()[i] * (lum[i] * pixel_solid_angle(v, w, h));
        }
        let f_d = if mean.norm() > 1e-12 { mean.normalize() } else { Vector3::z() };

        let brightest = (0..lum.len()).min_by(by_brightness).unwrap();
        let saturated = px.iter().any(|p| p.iter().any(|c| *c >= SATURATION_THRESHOLD));
        let f_i = if saturated { px[brightest].map(|c| c * self.sun_scale) } else { px[brightest] };

        let mut hdr = ldr.clone();
        if saturated {
            let peak = peak_direction_map(pe, &f_d)?;
            let core = peak_intensity_map(&peak, &f_i);
            for (i, out) in hdr.pixels.pixels_mut().iter_mut().enumerate() {
                let p = peak.values()[i];
                let c = core.pixels()[i];
                for ch in 0..3 {
                    if px[i][ch] >= SATURATION_THRESHOLD {
                        out[ch] = px[i][ch] + c[ch].max(p * f_i[ch]);
                    }
                }
            }
        }

        let latent = block_luminance(&lum, w as usize, h as usize);
        Ok((hdr, SkyFeatures { peak_direction: f_d.into(), peak_intensity: f_i, latent }))
    }
}

/// 8x8 grid of mean luminance.
fn block_luminance(lum: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut sums = vec![0.0; LATENT_DIM];
    let mut counts = vec![0usize; LATENT_DIM];
    for y in 0..h {
        for x in 0..w {
            let b = (y * 8 / h) * 8 + x * 8 / w;
            sums[b] += lum[y * w + x];
            counts[b] += 1;
        }
    }
    sums.iter().zip(counts).map(|(s, n)| if n > 0 { s / n as f64 } else { 0.0 }).collect()
}

pub fn expand_hdr(
    ldr: &Panorama,
    pe: &DirectionEncoding,
    estimator: &dyn HdrEstimator,
) -> Result<(Panorama, SkyFeatures), LightingError> {
    if !ldr.is_fully_covered() {
        return Err(LightingError::NotInpainted);
    }
    estimator.estimate(ldr, pe)
}

/// Per channel: the HDR value where the LDR value is at least 0.9, else the LDR value.
pub fn fuse_envmap(ldr: &Panorama, hdr: &Panorama, sky: SkyFeatures) -> Result<EnvironmentMap, LightingError> {
    let (a, b) = ((ldr.width(), ldr.height()), (hdr.width(), hdr.height()));
    if a != b {
        return Err(LightingError::DimensionMismatch(a, b));
    }
    let mut out = ldr.clone();
    for (o, hp) in out.pixels.pixels_mut().iter_mut().zip(hdr.pixels.pixels()) {
        for c in 0..3 {
            if o[c] >= SATURATION_THRESHOLD {
                o[c] = hp[c];
            }
        }
    }
    Ok(EnvironmentMap { panorama: out, sky })
}

/// Solid-angle weighted mean luminance over the sphere.
pub fn mean_luminance(p: &Panorama) -> f64 {
    let (w, h) = (p.width(), p.height());
    let mut acc = 0.0;
    for v in 0..h {
        let row: f64 = (0..w).map(|u| luminance(&p.pixels.get(u, v))).sum();
        acc += row * pixel_solid_angle(v, w, h);
    }
    acc / (4.0 * PI)
}

/// Conic point light attached to the ego vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoLight {
    pub position: [f64; 3],
    pub axis: [f64; 3],
    pub half_angle: f64,
    /// Radiant intensity per channel.
    pub color: [f64; 3],
}

impl EgoLight {
    /// Radiance reflected by a Lambertian point with unit albedo.
    pub fn shade(&self, point: &Vector3<f64>, normal: &Vector3<f64>) -> Rgb {
        let to_light = Vector3::from(self.position) - point;
        let d2 = to_light.norm_squared();
        if d2 < 1e-12 {
            return [0.0; 3];
        }
        let l = to_light / d2.sqrt();
        if (-l).dot(&Vector3::from(self.axis)) < self.half_angle.cos() {
            return [0.0; 3];
        }
        let cos = normal.dot(&l).max(0.0);
        self.color.map(|c| c * cos / (PI * d2))
    }
}

/// Mounting geometry and colors of the ego head and rear lights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EgoLightConfig {
    pub headlight_positions: Vec<[f64; 3]>,
    pub headlight_axis: [f64; 3],
    pub rear_positions: Vec<[f64; 3]>,
    pub rear_axis: [f64; 3],
    pub half_angle: f64,
    pub headlight_color: [f64; 3],
    pub headlight_intensity: f64,
    pub rear_color: [f64; 3],
    pub rear_intensity: f64,
}

impl Default for EgoLightConfig {
    fn default() -> Self {
        Self {
            headlight_positions: vec![[3.7, 0.75, 0.7], [3.7, -0.75, 0.7]],
            headlight_axis: [1.0, 0.0, -0.05],
            rear_positions: vec![[-0.9, 0.7, 0.9], [-0.9, -0.7, 0.9]],
            rear_axis: [-1.0, 0.0, 0.0],
            half_angle: 30f64.to_radians(),
            headlight_color: [1.0, 0.95, 0.85],
            headlight_intensity: 40.0,
            rear_color: [1.0, 0.1, 0.1],
            rear_intensity: 2.0,
        }
    }
}

pub fn lights_needed(mean_luminance: f64) -> bool {
    mean_luminance < EGO_LIGHT_THRESHOLD
}

/// Head and rear light cones when the environment is dark, nothing otherwise.
pub fn ego_lights(env: &EnvironmentMap, config: &EgoLightConfig) -> Vec<EgoLight> {
    if !lights_needed(mean_luminance(&env.panorama)) {
        return Vec::new();
    }
    let half_angle = config.half_angle.clamp(1e-6, PI / 2.0);
    let mk = |pos: &[f64; 3], axis: &[f64; 3], color: &[f64; 3], intensity: f64| EgoLight {
        position: *pos,
        axis: Vector3::from(*axis).normalize().into(),
        half_angle,
        color: color.map(|c| (c * intensity).max(0.0)),
    };
    config
        .headlight_positions
        .iter()
        .map(|p| mk(p, &config.headlight_axis, &config.headlight_color, config.headlight_intensity))
        .chain(config.rear_positions.iter().map(|p| mk(p, &config.rear_axis, &config.rear_color, config.rear_intensity)))
        .collect()
}

/// Second-order spherical-harmonic radiance coefficients (9 per channel).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShIrradiance {
    coeffs: [Rgb; 9],
}

fn sh_basis(d: &Vector3<f64>) -> [f64; 9] {
    let (x, y, z) = (d.x, d.y, d.z);
    [
        0.282_094_791_773_878_14,
        0.488_602_511_902_919_9 * y,
        0.488_602_511_902_919_9 * z,
        0.488_602_511_902_919_9 * x,
        1.092_548_430_592_079_2 * x * y,
        1.092_548_430_592_079_2 * y * z,
        0.315_391_565_252_520_05 * (3.0 * z * z - 1.0),
        1.092_548_430_592_079_2 * x * z,
        0.546_274_215_296_039_6 * (x * x - y * y),
    ]
}

/// Clamped-cosine convolution weights per band.
const BAND_WEIGHTS: [f64; 9] = [
    PI,
    2.0 * PI / 3.0,
    2.0 * PI / 3.0,
    2.0 * PI / 3.0,
    PI / 4.0,
    PI / 4.0,
    PI / 4.0,
    PI / 4.0,
    PI / 4.0,
];

impl ShIrradiance {
    pub fn from_panorama(p: &Panorama) -> Self {
        let (w, h) = (p.width(), p.height());
        let mut coeffs = [[0.0; 3]; 9];
        for v in 0..h {
            let dw = pixel_solid_angle(v, w, h);
            for u in 0..w {
                let d = crate::panorama::pixel_direction(u, v, w, h);
                let basis = sh_basis(&d);
                let l = p.pixels.get(u, v);
                for (k, b) in basis.iter().enumerate() {
                    for c in 0..3 {
                        coeffs[k][c] += l[c] * b * dw;
                    }
                }
            }
        }
        Self { coeffs }
    }

    /// Irradiance `E(n)` arriving at a surface with unit normal `n`.
    pub fn irradiance(&self, n: &Vector3<f64>) -> Rgb {
        let basis = sh_basis(n);
        let mut e = [0.0; 3];
        for k in 0..9 {
            for (c, ec) in e.iter_mut().enumerate() {
                *ec += BAND_WEIGHTS[k] * self.coeffs[k][c] * basis[k];
            }
        }
        e.map(|v| v.max(0.0))
    }
}
