//! Sketch-specific view generation for the BYOL branch.
//!
//! Line skip, rotation and horizontal flip act on stroke coordinates; the
//! random sized crop acts on the 256-pixel raster and resamples to the model
//! resolution. Each view draws its own coins from the caller's random source.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{rasterize_default, Polarity, RasterSketch, StrokeSketch};
use crate::error::{Error, Result};

/// Resolution at which views are rendered before cropping.
pub const VIEW_RENDER_SIDE: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub p_line_skip: f64,
    pub skip_fraction: f64,
    pub p_rotate: f64,
    pub angle_min_deg: f64,
    pub angle_max_deg: f64,
    pub p_hflip: f64,
    pub p_crop: f64,
    pub crop_scale_min: f64,
    pub crop_scale_max: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            p_line_skip: 0.5,
            skip_fraction: 0.1,
            p_rotate: 0.5,
            angle_min_deg: -30.0,
            angle_max_deg: 30.0,
            p_hflip: 0.5,
            p_crop: 1.0,
            crop_scale_min: 0.3,
            crop_scale_max: 1.0,
        }
    }
}

impl AugmentationConfig {
    /// Every transformation disabled, crop pinned to the whole image.
    pub fn identity() -> Self {
        AugmentationConfig {
            p_line_skip: 0.0,
            p_rotate: 0.0,
            p_hflip: 0.0,
            p_crop: 0.0,
            crop_scale_min: 1.0,
            crop_scale_max: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_line_skip", self.p_line_skip),
            ("p_rotate", self.p_rotate),
            ("p_hflip", self.p_hflip),
            ("p_crop", self.p_crop),
            ("skip_fraction", self.skip_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if !(self.crop_scale_min > 0.0
            && self.crop_scale_min <= self.crop_scale_max
            && self.crop_scale_max <= 1.0)
        {
            return Err(Error::Config(format!(
                "crop scale range ({}, {}) must lie in (0, 1]",
                self.crop_scale_min, self.crop_scale_max
            )));
        }
        if (self.angle_min_deg + self.angle_max_deg).abs() > 1e-12
            || self.angle_min_deg > self.angle_max_deg
        {
            return Err(Error::Config("rotation range must be symmetric".into()));
        }
        Ok(())
    }
}

/// Number of strokes removed by [`line_skip`] from a sketch with `strokes` strokes.
pub fn skip_count(strokes: usize, skip_fraction: f64) -> usize {
    if strokes <= 1 {
        return 0;
    }
    ((skip_fraction * strokes as f64).floor() as usize)
        .max(1)
        .min(strokes - 1)
}

/// Delete `max(1, floor(fraction * S))` strokes chosen uniformly without
/// replacement. Single-stroke sketches come back unchanged.
pub fn line_skip<R: Rng + ?Sized>(
    sketch: &StrokeSketch,
    skip_fraction: f64,
    rng: &mut R,
) -> StrokeSketch {
    let n = sketch.num_strokes();
    let d = skip_count(n, skip_fraction);
    if d == 0 {
        return sketch.clone();
    }
    let mut drop = vec![false; n];
    for i in index::sample(rng, n, d) {
        drop[i] = true;
    }
    StrokeSketch {
        strokes: sketch
            .strokes
            .iter()
            .zip(&drop)
            .filter(|(_, &d)| !d)
            .map(|(s, _)| s.clone())
            .collect(),
        canvas: sketch.canvas,
    }
}

/// Rotate every point about the canvas center. Points may leave the canvas.
pub fn rotate(sketch: &StrokeSketch, angle_deg: f64) -> StrokeSketch {
    let c = sketch.center();
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let mut out = sketch.clone();
    for p in out.strokes.iter_mut().flat_map(|s| s.points.iter_mut()) {
        let (dx, dy) = (p.x - c.x, p.y - c.y);
        p.x = c.x + dx * cos - dy * sin;
        p.y = c.y + dx * sin + dy * cos;
    }
    out
}

/// Mirror `x -> (W-1) - x`.
pub fn hflip(sketch: &StrokeSketch) -> StrokeSketch {
    let xmax = sketch.canvas.0 as f64 - 1.0;
    let mut out = sketch.clone();
    for p in out.strokes.iter_mut().flat_map(|s| s.points.iter_mut()) {
        p.x = xmax - p.x;
    }
    out
}

/// Side of the square crop taken at `scale`.
pub fn crop_side(scale: f64, height: usize, width: usize) -> usize {
    (scale * height.min(width) as f64).floor() as usize
}

/// Square crop of side `floor(scale * min(H, W))` at `top_left`, resampled to
/// `out_resolution` (nearest for binary rasters, bilinear for gray).
pub fn sized_crop(
    image: &RasterSketch,
    scale: f64,
    top_left: (usize, usize),
    out_resolution: (usize, usize),
) -> Result<RasterSketch> {
    let side = crop_side(scale, image.height, image.width);
    if side == 0 {
        return Err(Error::Precondition(format!("crop scale {scale} yields an empty side")));
    }
    let (top, left) = top_left;
    match image.polarity {
        Polarity::BinaryStroke0 => {
            image.resize_window_nearest(top, left, side, side, out_resolution)
        }
        Polarity::Gray0255 => image.resize_window_bilinear(top, left, side, side, out_resolution),
    }
}

/// Parameters actually drawn for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewTrace {
    pub line_skip: bool,
    pub angle_deg: Option<f64>,
    pub hflip: bool,
    pub crop_scale: f64,
    pub crop_top_left: (usize, usize),
    pub crop_side: usize,
}

/// One augmented view plus the parameters that produced it.
pub fn make_view_traced<R: Rng + ?Sized>(
    sketch: &StrokeSketch,
    cfg: &AugmentationConfig,
    out_resolution: (usize, usize),
    rng: &mut R,
) -> (RasterSketch, ViewTrace) {
    let mut s = sketch.clone();
    let do_skip = rng.gen_bool(cfg.p_line_skip);
    if do_skip {
        s = line_skip(&s, cfg.skip_fraction, rng);
    }
    let angle = if rng.gen_bool(cfg.p_rotate) {
        let a = if cfg.angle_max_deg > cfg.angle_min_deg {
            rng.gen_range(cfg.angle_min_deg..=cfg.angle_max_deg)
        } else {
            cfg.angle_min_deg
        };
        s = rotate(&s, a);
        Some(a)
    } else {
        None
    };
    let do_flip = rng.gen_bool(cfg.p_hflip);
    if do_flip {
        s = hflip(&s);
    }
    let raster = rasterize_default(
        &s,
        (VIEW_RENDER_SIDE, VIEW_RENDER_SIDE),
        Polarity::Gray0255,
    );
    let (scale, top_left) = if rng.gen_bool(cfg.p_crop) {
        let scale = if cfg.crop_scale_max > cfg.crop_scale_min {
            rng.gen_range(cfg.crop_scale_min..=cfg.crop_scale_max)
        } else {
            cfg.crop_scale_min
        };
        let side = crop_side(scale, raster.height, raster.width).max(1);
        let top = rng.gen_range(0..=raster.height - side);
        let left = rng.gen_range(0..=raster.width - side);
        (scale, (top, left))
    } else {
        (1.0, (0, 0))
    };
    let side = crop_side(scale, raster.height, raster.width).max(1);
    let scale = side as f64 / raster.height.min(raster.width) as f64;
    let view = sized_crop(&raster, scale, top_left, out_resolution)
        .expect("sampled crop window is in bounds");
    (
        view,
        ViewTrace {
            line_skip: do_skip,
            angle_deg: angle,
            hflip: do_flip,
            crop_scale: scale,
            crop_top_left: top_left,
            crop_side: side,
        },
    )
}

/// Two independent views of one sketch, both in `GRAY_0_255` at `out_resolution`.
pub fn make_view_pair<R: Rng + ?Sized>(
    sketch: &StrokeSketch,
    cfg: &AugmentationConfig,
    out_resolution: (usize, usize),
    rng: &mut R,
) -> (RasterSketch, RasterSketch) {
    let (a, _) = make_view_traced(sketch, cfg, out_resolution, rng);
    let (b, _) = make_view_traced(sketch, cfg, out_resolution, rng);
    (a, b)
}
