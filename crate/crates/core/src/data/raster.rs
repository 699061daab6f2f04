use serde::{Deserialize, Serialize};

use super::sketch::{Point, StrokeSketch};
use crate::error::{Error, Result};

/// Stroke thickness in pixels at a 256-pixel render.
pub const DEFAULT_LINE_WIDTH: u32 = 2;

/// Smallest pen radius that keeps diagonal strokes 8-connected.
const MIN_PEN_RADIUS: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Pixel convention of a rendered sketch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Polarity {
    /// Strokes 0, background 1.
    BinaryStroke0,
    /// Values 0..=255 with dark strokes on a 255 background.
    Gray0255,
}

impl Polarity {
    pub fn background(self) -> u8 {
        match self {
            Polarity::BinaryStroke0 => 1,
            Polarity::Gray0255 => 255,
        }
    }

    pub fn max_value(self) -> f32 {
        self.background() as f32
    }
}

/// A single-channel rendered sketch, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterSketch {
    pub pixels: Vec<u8>,
    pub height: usize,
    pub width: usize,
    pub polarity: Polarity,
}

impl RasterSketch {
    pub fn blank(height: usize, width: usize, polarity: Polarity) -> Self {
        RasterSketch {
            pixels: vec![polarity.background(); height * width],
            height,
            width,
            polarity,
        }
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    /// Number of stroke (value 0) pixels.
    pub fn stroke_pixels(&self) -> usize {
        self.pixels.iter().filter(|&&v| v == 0).count()
    }

    /// Pixel values normalized so strokes are 1 and background 0.
    pub fn to_ink(&self) -> Vec<f32> {
        let max = self.polarity.max_value();
        self.pixels.iter().map(|&v| 1.0 - v as f32 / max).collect()
    }

    /// Pixel values as reals in the native polarity range.
    pub fn to_f32(&self) -> Vec<f32> {
        self.pixels.iter().map(|&v| v as f32).collect()
    }

    pub fn check_polarity(&self) -> bool {
        match self.polarity {
            Polarity::BinaryStroke0 => self.pixels.iter().all(|&v| v <= 1),
            Polarity::Gray0255 => true,
        }
    }

    /// Re-express the pixels under another polarity (binarizing at the midpoint).
    pub fn convert(&self, polarity: Polarity) -> RasterSketch {
        if polarity == self.polarity {
            return self.clone();
        }
        let pixels = match (self.polarity, polarity) {
            (Polarity::BinaryStroke0, Polarity::Gray0255) => {
                self.pixels.iter().map(|&v| if v == 0 { 0 } else { 255 }).collect()
            }
            _ => self.pixels.iter().map(|&v| u8::from(v >= 128)).collect(),
        };
        RasterSketch {
            pixels,
            polarity,
            ..*self
        }
    }

    /// Nearest-neighbour resample of a `side x side` window at `(top, left)`.
    pub fn resize_window_nearest(
        &self,
        top: usize,
        left: usize,
        side_h: usize,
        side_w: usize,
        out: (usize, usize),
    ) -> Result<RasterSketch> {
        self.check_window(top, left, side_h, side_w, out)?;
        let (oh, ow) = out;
        let mut pixels = Vec::with_capacity(oh * ow);
        for r in 0..oh {
            let sr = top + ((r as f64 + 0.5) * side_h as f64 / oh as f64).floor() as usize;
            let sr = sr.min(top + side_h - 1);
            for c in 0..ow {
                let sc = left + ((c as f64 + 0.5) * side_w as f64 / ow as f64).floor() as usize;
                let sc = sc.min(left + side_w - 1);
                pixels.push(self.get(sr, sc));
            }
        }
        Ok(RasterSketch {
            pixels,
            height: oh,
            width: ow,
            polarity: self.polarity,
        })
    }

    /// Bilinear resample (half-pixel centers, edge clamped) of a window.
    pub fn resize_window_bilinear(
        &self,
        top: usize,
        left: usize,
        side_h: usize,
        side_w: usize,
        out: (usize, usize),
    ) -> Result<RasterSketch> {
        self.check_window(top, left, side_h, side_w, out)?;
        let (oh, ow) = out;
        let sy = side_h as f64 / oh as f64;
        let sx = side_w as f64 / ow as f64;
        let mut pixels = Vec::with_capacity(oh * ow);
        for r in 0..oh {
            let fy = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (side_h - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(side_h - 1);
            let wy = fy - y0 as f64;
            for c in 0..ow {
                let fx = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (side_w - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(side_w - 1);
                let wx = fx - x0 as f64;
                let v = |yy: usize, xx: usize| self.get(top + yy, left + xx) as f64;
                let top_row = v(y0, x0) * (1.0 - wx) + v(y0, x1) * wx;
                let bottom_row = v(y1, x0) * (1.0 - wx) + v(y1, x1) * wx;
                let value = top_row * (1.0 - wy) + bottom_row * wy;
                pixels.push(value.round().clamp(0.0, 255.0) as u8);
            }
        }
        Ok(RasterSketch {
            pixels,
            height: oh,
            width: ow,
            polarity: self.polarity,
        })
    }

    /// Whole-image resample, interpolation chosen by polarity.
    pub fn resize(&self, out: (usize, usize)) -> RasterSketch {
        let r = match self.polarity {
            Polarity::BinaryStroke0 => {
                self.resize_window_nearest(0, 0, self.height, self.width, out)
            }
            Polarity::Gray0255 => self.resize_window_bilinear(0, 0, self.height, self.width, out),
        };
        r.expect("whole-image window is always in bounds")
    }

    fn check_window(
        &self,
        top: usize,
        left: usize,
        side_h: usize,
        side_w: usize,
        out: (usize, usize),
    ) -> Result<()> {
        if side_h == 0 || side_w == 0 || out.0 == 0 || out.1 == 0 {
            return Err(Error::Precondition("empty crop window or output".into()));
        }
        if top + side_h > self.height || left + side_w > self.width {
            return Err(Error::Precondition(format!(
                "crop window {side_h}x{side_w} at ({top}, {left}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Render with the default 2-pixel pen.
pub fn rasterize_default(
    sketch: &StrokeSketch,
    resolution: (usize, usize),
    polarity: Polarity,
) -> RasterSketch {
    rasterize(sketch, resolution, polarity, DEFAULT_LINE_WIDTH)
}

/// Render a stroke sketch as connected thick segments.
///
/// Canvas coordinates are clamped to the canvas, then mapped linearly so that
/// canvas pixel centers `0..W-1` land on output pixel centers `0..W_out-1`. The
/// pen is a disk whose diameter is `line_width_px` scaled by `min(H, W) / 256`,
/// never thinner than what keeps diagonals 8-connected. A pixel is inked when
/// its center lies within the pen radius of a segment; single-point strokes
/// become a dot.
pub fn rasterize(
    sketch: &StrokeSketch,
    resolution: (usize, usize),
    polarity: Polarity,
    line_width_px: u32,
) -> RasterSketch {
    let (h, w) = resolution;
    assert!(h > 0 && w > 0, "resolution must be positive");
    let mut out = RasterSketch::blank(h, w, polarity);
    let scale_x = if sketch.canvas.0 > 1 {
        (w as f64 - 1.0) / (sketch.canvas.0 as f64 - 1.0)
    } else {
        1.0
    };
    let scale_y = if sketch.canvas.1 > 1 {
        (h as f64 - 1.0) / (sketch.canvas.1 as f64 - 1.0)
    } else {
        1.0
    };
    let radius = (line_width_px as f64 * h.min(w) as f64 / 256.0 / 2.0).max(MIN_PEN_RADIUS);
    let (cx_max, cy_max) = (sketch.canvas.0 as f64 - 1.0, sketch.canvas.1 as f64 - 1.0);
    let map = |p: &Point| {
        Point::new(
            p.x.clamp(0.0, cx_max) * scale_x,
            p.y.clamp(0.0, cy_max) * scale_y,
        )
    };
    for stroke in &sketch.strokes {
        let pts: Vec<Point> = stroke.points.iter().map(map).collect();
        if pts.len() == 1 {
            stamp_segment(&mut out, pts[0], pts[0], radius);
        }
        for seg in pts.windows(2) {
            stamp_segment(&mut out, seg[0], seg[1], radius);
        }
    }
    out
}

fn stamp_segment(img: &mut RasterSketch, a: Point, b: Point, radius: f64) {
    let r2 = radius * radius + 1e-9;
    let row_lo = (a.y.min(b.y) - radius).floor().max(0.0) as usize;
    let row_hi = ((a.y.max(b.y) + radius).ceil() as usize).min(img.height - 1);
    let col_lo = (a.x.min(b.x) - radius).floor().max(0.0) as usize;
    let col_hi = ((a.x.max(b.x) + radius).ceil() as usize).min(img.width - 1);
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    for row in row_lo..=row_hi {
        for col in col_lo..=col_hi {
            let (px, py) = (col as f64, row as f64);
            let t = if len2 > 0.0 {
                (((px - a.x) * dx + (py - a.y) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (qx, qy) = (a.x + t * dx - px, a.y + t * dy - py);
            if qx * qx + qy * qy <= r2 {
                img.pixels[row * img.width + col] = 0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sketch::Stroke;

    fn sketch(strokes: Vec<Vec<(f64, f64)>>) -> StrokeSketch {
        StrokeSketch::new(
            strokes
                .into_iter()
                .map(|s| Stroke::new(s.into_iter().map(|(x, y)| Point::new(x, y)).collect()))
                .collect(),
            (256, 256),
        )
        .unwrap()
    }

    #[test]
    fn horizontal_stroke_spans_full_width() {
        let s = sketch(vec![vec![(0.0, 128.0), (255.0, 128.0)]]);
        let img = rasterize_default(&s, (256, 256), Polarity::BinaryStroke0);
        assert!(img.check_polarity());
        let inked_rows: Vec<usize> = (0..256)
            .filter(|&r| (0..256).any(|c| img.get(r, c) == 0))
            .collect();
        assert!(inked_rows.contains(&128));
        // contiguous band of rows
        assert_eq!(
            inked_rows.last().unwrap() - inked_rows.first().unwrap() + 1,
            inked_rows.len()
        );
        for &r in &inked_rows {
            assert!((0..256).all(|c| img.get(r, c) == 0), "row {r} has a gap");
        }
        assert!(inked_rows.len() <= 3);
    }

    #[test]
    fn single_point_is_a_dot() {
        let s = sketch(vec![vec![(100.0, 50.0)]]);
        let img = rasterize_default(&s, (256, 256), Polarity::Gray0255);
        assert_eq!(img.get(50, 100), 0);
        assert!(img.stroke_pixels() >= 1);
        assert!(img.stroke_pixels() < 20);
    }

    #[test]
    fn every_valid_sketch_inks_something() {
        for res in [8usize, 28, 64, 224, 256] {
            let s = sketch(vec![vec![(255.0, 0.0)]]);
            let img = rasterize_default(&s, (res, res), Polarity::BinaryStroke0);
            assert!(img.stroke_pixels() >= 1, "res {res}");
        }
    }

    #[test]
    fn diagonals_stay_connected_at_low_resolution() {
        let s = sketch(vec![vec![(0.0, 0.0), (255.0, 200.0)]]);
        let img = rasterize_default(&s, (32, 32), Polarity::BinaryStroke0);
        for c in 0..32 {
            assert!((0..32).any(|r| img.get(r, c) == 0), "column {c} empty");
        }
    }

    #[test]
    fn off_canvas_points_are_clamped() {
        let s = StrokeSketch {
            strokes: vec![Stroke::new(vec![Point::new(-40.0, 300.0)])],
            canvas: (256, 256),
        };
        let img = rasterize_default(&s, (256, 256), Polarity::BinaryStroke0);
        assert_eq!(img.get(255, 0), 0);
    }

    #[test]
    fn downsampled_render_agrees_with_direct_render() {
        let s = sketch(vec![
            vec![(20.0, 30.0), (200.0, 40.0), (220.0, 230.0)],
            vec![(60.0, 200.0), (128.0, 100.0)],
            vec![(10.0, 10.0)],
        ]);
        let big = rasterize_default(&s, (256, 256), Polarity::BinaryStroke0);
        let down = big.resize((224, 224));
        let direct = rasterize_default(&s, (224, 224), Polarity::BinaryStroke0);
        let agree = down
            .pixels
            .iter()
            .zip(&direct.pixels)
            .filter(|(a, b)| a == b)
            .count();
        assert!(agree as f64 / (224.0 * 224.0) >= 0.9);
    }

    #[test]
    fn window_out_of_bounds_is_rejected() {
        let img = RasterSketch::blank(10, 10, Polarity::Gray0255);
        assert!(img.resize_window_bilinear(5, 5, 6, 6, (4, 4)).is_err());
        assert!(img.resize_window_nearest(4, 4, 6, 6, (4, 4)).is_ok());
    }

    #[test]
    fn identity_resize_is_exact() {
        let s = sketch(vec![vec![(3.0, 4.0), (120.0, 240.0)]]);
        for pol in [Polarity::BinaryStroke0, Polarity::Gray0255] {
            let img = rasterize_default(&s, (64, 64), pol);
            assert_eq!(img.resize((64, 64)), img);
        }
    }
}
