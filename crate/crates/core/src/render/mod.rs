//! Object and shadow layers for placed assets, and compositing onto real frames.

mod mesh;
mod post;
mod raster;
mod shadow;

use thiserror::Error;

pub use mesh::MeshAsset;
pub(crate) use post::check_range;
pub use post::{
    composite, composite_linear, postprocess, PostprocessParams, BLUR_SIGMA_RANGE, NOISE_SIGMA_RANGE, SATURATION_RANGE,
    SHADOW_STRENGTH_RANGE,
};
pub use raster::{render_objects, Lighting};
pub use shadow::{render_shadows, shadow_taps, ShadowParams};

#[cfg(test)]
pub(crate) use raster::tests as raster_tests;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("OBJ load failed: {0}")]
    Obj(String),
    #[error("parameter {name} = {value} outside [{min}, {max}]")]
    OutOfRange { name: &'static str, value: f64, min: f64, max: f64 },
    #[error("resolution mismatch: frame {frame:?}, layers {layers:?}")]
    ResolutionMismatch { frame: (u32, u32), layers: (u32, u32) },
}

/// Value of the instance layer where no asset is drawn.
pub const NO_INSTANCE: u32 = 0;

/// Per-camera render output. Colors are linear and premultiplied by alpha.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderLayers {
    width: u32,
    height: u32,
    pub object: Vec<[f64; 4]>,
    /// 1 = fully shadowed.
    pub shadow: Vec<f64>,
    /// Distance from the camera center, infinite where empty.
    pub depth: Vec<f64>,
    /// `i + 1` for instance `i`, [`NO_INSTANCE`] where empty.
    pub instance: Vec<u32>,
    /// Zero-area triangles that were skipped.
    pub degenerate_triangles: usize,
}

impl RenderLayers {
    pub fn empty(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            object: vec![[0.0; 4]; n],
            shadow: vec![0.0; n],
            depth: vec![f64::INFINITY; n],
            instance: vec![NO_INSTANCE; n],
            degenerate_triangles: 0,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn is_empty(&self) -> bool {
        self.object.iter().all(|p| p[3] == 0.0) && self.shadow.iter().all(|s| *s == 0.0)
    }

    /// Pixel bounds `[x0, y0, x1, y1)` of an instance, if drawn.
    pub fn instance_bounds(&self, id: u32) -> Option<[u32; 4]> {
        let mut b: Option<[u32; 4]> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.instance[self.index(x, y)] == id {
                    let r = b.get_or_insert([x, y, x + 1, y + 1]);
                    *r = [r[0].min(x), r[1].min(y), r[2].max(x + 1), r[3].max(y + 1)];
                }
            }
        }
        b
    }
}
