//! Equirectangular panoramas: per-pixel directions, multi-camera stitching
//! with per-channel max pooling, and hole filling.
//!
//! Pixel `(u, v)` of a `W x H` panorama looks along azimuth
//! `phi = 2 pi (u + 0.5) / W - pi` (counter-clockwise from ego +x) and
//! elevation `lambda = pi / 2 - pi (v + 0.5) / H`, i.e. the direction
//! `(cos lambda cos phi, cos lambda sin phi, sin lambda)` in the ego frame.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::CameraModel;
use crate::imaging::{LinearImage, Rgb};

const INPAINT_TOL: f64 = 1e-4;
const INPAINT_MAX_SWEEPS: usize = 20_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PanoramaError {
    #[error("panorama width must be twice its height, got {width}x{height}")]
    AspectRatio { width: u32, height: u32 },
    #[error("at least one camera image is required")]
    NoCameras,
    #[error("camera {index}: image is {got:?} but the camera expects {expected:?}")]
    ResolutionMismatch { index: usize, got: (u32, u32), expected: (u32, u32) },
    #[error("cannot inpaint a panorama without any covered pixel")]
    NothingCovered,
}

fn check_size(width: u32, height: u32) -> Result<(), PanoramaError> {
    if height == 0 || width != 2 * height {
        return Err(PanoramaError::AspectRatio { width, height });
    }
    Ok(())
}

/// Azimuth and elevation of a pixel center.
pub fn pixel_angles(u: u32, v: u32, width: u32, height: u32) -> (f64, f64) {
    let phi = 2.0 * PI * (u as f64 + 0.5) / width as f64 - PI;
    let lambda = PI / 2.0 - PI * (v as f64 + 0.5) / height as f64;
    (phi, lambda)
}

pub fn pixel_direction(u: u32, v: u32, width: u32, height: u32) -> Vector3<f64> {
    let (phi, lambda) = pixel_angles(u, v, width, height);
    let (sl, cl) = lambda.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vector3::new(cl * cp, cl * sp, sl)
}

/// Continuous panorama coordinates of a direction.
pub fn direction_to_pixel(dir: &Vector3<f64>, width: u32, height: u32) -> (f64, f64) {
    let d = dir.normalize();
    let phi = d.y.atan2(d.x);
    let lambda = d.z.clamp(-1.0, 1.0).asin();
    let u = (phi + PI) / (2.0 * PI) * width as f64;
    let v = (PI / 2.0 - lambda) / PI * height as f64;
    (u, v)
}

/// Exact solid angle of one pixel in row `v`.
pub fn pixel_solid_angle(v: u32, width: u32, height: u32) -> f64 {
    let top = PI / 2.0 - PI * v as f64 / height as f64;
    let bottom = PI / 2.0 - PI * (v + 1) as f64 / height as f64;
    2.0 * PI / width as f64 * (top.sin() - bottom.sin())
}

/// Per-pixel unit viewing directions.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionEncoding {
    width: u32,
    height: u32,
    dirs: Vec<Vector3<f64>>,
}

pub fn direction_encoding(width: u32, height: u32) -> Result<DirectionEncoding, PanoramaError> {
    check_size(width, height)?;
    let mut dirs = Vec::with_capacity(width as usize * height as usize);
    for v in 0..height {
        for u in 0..width {
            dirs.push(pixel_direction(u, v, width, height));
        }
    }
    Ok(DirectionEncoding { width, height, dirs })
}

impl DirectionEncoding {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn directions(&self) -> &[Vector3<f64>] {
        &self.dirs
    }

    pub fn get(&self, u: u32, v: u32) -> Vector3<f64> {
        self.dirs[v as usize * self.width as usize + u as usize]
    }
}

/// Radiance panorama plus the mask of pixels some camera actually saw.
#[derive(Debug, Clone, PartialEq)]
pub struct Panorama {
    pub pixels: LinearImage,
    pub coverage: Vec<bool>,
}

impl Panorama {
    pub fn new(width: u32, height: u32) -> Result<Self, PanoramaError> {
        check_size(width, height)?;
        Ok(Self {
            pixels: LinearImage::new(width, height),
            coverage: vec![false; width as usize * height as usize],
        })
    }

    /// Fully covered panorama built from a closure.
    pub fn from_fn(width: u32, height: u32, f: impl FnMut(u32, u32) -> Rgb) -> Result<Self, PanoramaError> {
        check_size(width, height)?;
        Ok(Self {
            pixels: LinearImage::from_fn(width, height, f),
            coverage: vec![true; width as usize * height as usize],
        })
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn is_fully_covered(&self) -> bool {
        self.coverage.iter().all(|c| *c)
    }

    /// Fraction of the sphere's solid angle that is covered.
    pub fn coverage_fraction(&self) -> f64 {
        let (w, h) = (self.width(), self.height());
        let mut covered = 0.0;
        for v in 0..h {
            let row = &self.coverage[v as usize * w as usize..(v as usize + 1) * w as usize];
            covered += row.iter().filter(|c| **c).count() as f64 * pixel_solid_angle(v, w, h);
        }
        covered / (4.0 * PI)
    }
}

/// Precomputed panorama-to-camera lookup for a fixed rig and panorama size.
/// Stitching many frames from the same rig reuses it.
#[derive(Debug, Clone)]
pub struct StitchMap {
    width: u32,
    height: u32,
    resolutions: Vec<(u32, u32)>,
    /// Per camera, per panorama pixel: sampling location in that camera.
    lookups: Vec<Vec<Option<[f32; 2]>>>,
}

impl StitchMap {
    pub fn new(cameras: &[&CameraModel], width: u32, height: u32) -> Result<Self, PanoramaError> {
        check_size(width, height)?;
        if cameras.is_empty() {
            return Err(PanoramaError::NoCameras);
        }
        let lookups = cameras
            .iter()
            .map(|cam| {
                (0..width as usize * height as usize)
                    .into_par_iter()
                    .map(|i| {
                        let u = (i % width as usize) as u32;
                        let v = (i / width as usize) as u32;
                        let d = pixel_direction(u, v, width, height);
                        cam.project_direction(&d)
                            .filter(|px| cam.contains_pixel(px))
                            .map(|px| [px.x as f32, px.y as f32])
                    })
                    .collect()
            })
            .collect();
        let resolutions = cameras.iter().map(|c| (c.width(), c.height())).collect();
        Ok(Self { width, height, resolutions, lookups })
    }

    pub fn camera_count(&self) -> usize {
        self.lookups.len()
    }

    /// Sampling location of panorama pixel `(u, v)` in camera `cam`.
    pub fn lookup(&self, cam: usize, u: u32, v: u32) -> Option<[f32; 2]> {
        self.lookups[cam][v as usize * self.width as usize + u as usize]
    }

    /// Solid-angle fraction seen by at least one camera.
    pub fn coverage_fraction(&self) -> f64 {
        let (w, h) = (self.width, self.height);
        let mut covered = 0.0;
        for v in 0..h {
            let n = (0..w)
                .filter(|&u| (0..self.lookups.len()).any(|c| self.lookup(c, u, v).is_some()))
                .count();
            covered += n as f64 * pixel_solid_angle(v, w, h);
        }
        covered / (4.0 * PI)
    }

    /// Forward-map every panorama pixel into each camera, bilinear sample and
    /// keep the per-channel maximum. `images[i]` must belong to camera `i`.
    pub fn stitch(&self, images: &[&LinearImage]) -> Result<Panorama, PanoramaError> {
        if images.is_empty() {
            return Err(PanoramaError::NoCameras);
        }
        assert_eq!(images.len(), self.lookups.len(), "one image per mapped camera");
        for (index, (img, res)) in images.iter().zip(&self.resolutions).enumerate() {
            if (img.width(), img.height()) != *res {
                return Err(PanoramaError::ResolutionMismatch {
                    index,
                    got: (img.width(), img.height()),
                    expected: *res,
                });
            }
        }
        let (w, h) = (self.width, self.height);
        let mut pixels = vec![[0.0; 3]; w as usize * h as usize];
        let mut coverage = vec![false; w as usize * h as usize];
        pixels
            .par_chunks_mut(w as usize)
            .zip(coverage.par_chunks_mut(w as usize))
            .enumerate()
            .for_each(|(v, (row, cov))| {
                for u in 0..w as usize {
                    let idx = v * w as usize + u;
                    let mut acc: Option<Rgb> = None;
                    for (lookup, img) in self.lookups.iter().zip(images) {
                        if let Some([x, y]) = lookup[idx] {
                            let s = img.sample_bilinear(x as f64, y as f64);
                            acc = Some(match acc {
                                None => s,
                                Some(a) => [a[0].max(s[0]), a[1].max(s[1]), a[2].max(s[2])],
                            });
                        }
                    }
                    if let Some(a) = acc {
                        row[u] = a;
                        cov[u] = true;
                    }
                }
            });
        Ok(Panorama { pixels: LinearImage::from_vec(w, h, pixels), coverage })
    }
}

/// Stitch linear camera images into one panorama of `width x height`.
pub fn stitch(inputs: &[(&LinearImage, &CameraModel)], width: u32, height: u32) -> Result<Panorama, PanoramaError> {
    if inputs.is_empty() {
        return Err(PanoramaError::NoCameras);
    }
    let cams: Vec<&CameraModel> = inputs.iter().map(|(_, c)| *c).collect();
    let images: Vec<&LinearImage> = inputs.iter().map(|(i, _)| *i).collect();
    StitchMap::new(&cams, width, height)?.stitch(&images)
}

/// Fill uncovered pixels by Laplacian diffusion from the covered ones.
///
/// Holes are seeded coarse-to-fine from a masked image pyramid, then relaxed
/// with Gauss-Seidel sweeps until the largest update drops below `1e-4`.
/// Columns wrap around in azimuth. Covered pixels are never written.
pub fn inpaint(p: &Panorama) -> Result<Panorama, PanoramaError> {
    if !p.coverage.iter().any(|c| *c) {
        return Err(PanoramaError::NothingCovered);
    }
    if p.is_fully_covered() {
        return Ok(p.clone());
    }
    let (w, h) = (p.width() as usize, p.height() as usize);

    // Masked pyramid down to full coverage.
    let mut levels: Vec<Level> = vec![Level {
        w,
        h,
        values: p.pixels.pixels().to_vec(),
        known: p.coverage.clone(),
    }];
    while levels.last().unwrap().known.iter().any(|k| !k) {
        let next = levels.last().unwrap().downsample();
        let done = next.w == 1 && next.h == 1;
        levels.push(next);
        if done {
            break;
        }
    }

    // Seed each level's holes from its parent, then smooth at that level.
    for k in (0..levels.len() - 1).rev() {
        let (fine, coarse) = {
            let (a, b) = levels.split_at_mut(k + 1);
            (&mut a[k], &b[0])
        };
        for y in 0..fine.h {
            for x in 0..fine.w {
                let i = y * fine.w + x;
                if !fine.known[i] {
                    fine.values[i] = coarse.values[(y / 2).min(coarse.h - 1) * coarse.w + (x / 2).min(coarse.w - 1)];
                }
            }
        }
        let sweeps = if k == 0 { INPAINT_MAX_SWEEPS } else { 32 };
        fine.relax(sweeps, if k == 0 { INPAINT_TOL } else { 0.0 });
    }

    let base = levels.swap_remove(0);
    let mut out = p.clone();
    for (i, known) in p.coverage.iter().enumerate() {
        if !known {
            out.pixels.pixels_mut()[i] = base.values[i];
        }
    }
    out.coverage.iter_mut().for_each(|c| *c = true);
    Ok(out)
}

struct Level {
    w: usize,
    h: usize,
    values: Vec<Rgb>,
    known: Vec<bool>,
}

impl Level {
    fn downsample(&self) -> Level {
        let w = self.w.div_ceil(2);
        let h = self.h.div_ceil(2);
        let mut values = vec![[0.0; 3]; w * h];
        let mut known = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut sum = [0.0; 3];
                let mut n = 0usize;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let (sx, sy) = (2 * x + dx, 2 * y + dy);
                        if sx < self.w && sy < self.h && self.known[sy * self.w + sx] {
                            let v = self.values[sy * self.w + sx];
                            for c in 0..3 {
                                sum[c] += v[c];
                            }
                            n += 1;
                        }
                    }
                }
                if n > 0 {
                    values[y * w + x] = sum.map(|s| s / n as f64);
                    known[y * w + x] = true;
                }
            }
        }
        Level { w, h, values, known }
    }

    /// Gauss-Seidel on unknown pixels; stops once the max update is below `tol`.
    fn relax(&mut self, max_sweeps: usize, tol: f64) {
        let holes: Vec<usize> = (0..self.w * self.h).filter(|&i| !self.known[i]).collect();
        if holes.is_empty() {
            return;
        }
        for _ in 0..max_sweeps {
            let mut max_delta: f64 = 0.0;
            for &i in &holes {
                let (x, y) = (i % self.w, i / self.w);
                let mut sum = [0.0; 3];
                let mut n = 0.0;
                let mut add = |j: usize| {
                    let v = self.values[j];
                    for c in 0..3 {
                        sum[c] += v[c];
                    }
                    n += 1.0;
                };
                if self.w > 1 {
                    add(y * self.w + (x + self.w - 1) % self.w);
                    add(y * self.w + (x + 1) % self.w);
                }
                if y > 0 {
                    add(i - self.w);
                }
                if y + 1 < self.h {
                    add(i + self.w);
                }
                if n == 0.0 {
                    continue;
                }
                let new = sum.map(|s| s / n);
                let old = self.values[i];
                for c in 0..3 {
                    max_delta = max_delta.max((new[c] - old[c]).abs());
                }
                self.values[i] = new;
            }
            if max_delta < tol {
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Resolution, RigidTransform};

    #[test]
    fn encoding_requires_two_to_one() {
        assert!(direction_encoding(10, 4).is_err());
        assert!(direction_encoding(8, 4).is_ok());
    }

    #[test]
    fn encoding_corner_pixel_by_hand() {
        let pe = direction_encoding(8, 4).unwrap();
        let phi = -PI + PI / 8.0;
        let lambda = PI / 2.0 - PI / 8.0;
        let expected = Vector3::new(lambda.cos() * phi.cos(), lambda.cos() * phi.sin(), lambda.sin());
        assert!((pe.get(0, 0) - expected).norm() < 1e-15);
        for d in pe.directions() {
            assert!((d.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn encoding_rows_span_up_to_horizon() {
        let (w, h) = (512, 256);
        let pe = direction_encoding(w, h).unwrap();
        // rows just above and below the horizon
        assert!(pe.get(10, h / 2 - 1).z.abs() < 1e-2);
        assert!(pe.get(10, h / 2).z.abs() < 1e-2);
        assert!(pe.get(10, 0).z > (PI / 2.0 - PI / h as f64).sin() - 1e-12);
    }

    #[test]
    fn direction_pixel_round_trip() {
        let (w, h) = (64, 32);
        for v in 0..h {
            for u in 0..w {
                let (x, y) = direction_to_pixel(&pixel_direction(u, v, w, h), w, h);
                assert!((x - (u as f64 + 0.5)).abs() < 1e-9 && (y - (v as f64 + 0.5)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn solid_angles_sum_to_sphere() {
        let (w, h) = (64, 32);
        let total: f64 = (0..h).map(|v| pixel_solid_angle(v, w, h) * w as f64).sum();
        assert!((total - 4.0 * PI).abs() < 1e-12);
    }

    fn cam(yaw: f64) -> CameraModel {
        CameraModel::pinhole(
            40.0,
            40.0,
            [32.0, 24.0],
            Resolution { width: 64, height: 48 },
            RigidTransform::camera_mount(Vector3::zeros(), yaw, 0.0),
        )
        .unwrap()
    }

    #[test]
    fn single_camera_passes_values_through() {
        let c = cam(0.0);
        let img = LinearImage::filled(64, 48, [0.3, 0.3, 0.3]);
        let pano = stitch(&[(&img, &c)], 64, 32).unwrap();
        let (u, v) = direction_to_pixel(&Vector3::x(), 64, 32);
        let i = v as usize * 64 + u as usize;
        assert!(pano.coverage[i]);
        assert_eq!(pano.pixels.pixels()[i], [0.3, 0.3, 0.3]);
        // straight back is unseen
        let (u, v) = direction_to_pixel(&-Vector3::x(), 64, 32);
        let j = (v as usize).min(31) * 64 + (u as usize).min(63);
        assert!(!pano.coverage[j]);
        assert_eq!(pano.pixels.pixels()[j], [0.0; 3]);
    }

    #[test]
    fn overlap_takes_channel_max() {
        let a = cam(0.0);
        let b = cam(0.2);
        let ia = LinearImage::filled(64, 48, [0.3, 0.9, 0.1]);
        let ib = LinearImage::filled(64, 48, [0.7, 0.2, 0.1]);
        let pano = stitch(&[(&ia, &a), (&ib, &b)], 64, 32).unwrap();
        let (u, v) = direction_to_pixel(&Vector3::new(1.0, 0.1, 0.0), 64, 32);
        assert_eq!(pano.pixels.get(u as u32, v as u32), [0.7, 0.9, 0.1]);
    }

    #[test]
    fn stitch_errors() {
        assert_eq!(stitch(&[], 64, 32).unwrap_err(), PanoramaError::NoCameras);
        let c = cam(0.0);
        let wrong = LinearImage::new(10, 10);
        assert!(matches!(stitch(&[(&wrong, &c)], 64, 32), Err(PanoramaError::ResolutionMismatch { .. })));
    }

    #[test]
    fn inpaint_noop_when_covered() {
        let p = Panorama::from_fn(16, 8, |u, v| [u as f64 / 16.0, v as f64 / 8.0, 0.5]).unwrap();
        assert_eq!(inpaint(&p).unwrap(), p);
    }

    #[test]
    fn inpaint_constant_field() {
        let mut p = Panorama::from_fn(32, 16, |_, _| [0.4; 3]).unwrap();
        for v in 4..10 {
            for u in 5..20 {
                p.coverage[v * 32 + u] = false;
                p.pixels.set(u as u32, v as u32, [0.0; 3]);
            }
        }
        let out = inpaint(&p).unwrap();
        assert!(out.is_fully_covered());
        for px in out.pixels.pixels() {
            for c in px {
                assert!((c - 0.4).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn inpaint_empty_errors() {
        let p = Panorama::new(8, 4).unwrap();
        assert_eq!(inpaint(&p).unwrap_err(), PanoramaError::NothingCovered);
    }
}
