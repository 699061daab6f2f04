use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canvas of the simplified QuickDraw format.
pub const DEFAULT_CANVAS: (u32, u32) = (256, 256);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// One continuous pen-down polyline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub points: Vec<Point>,
}

impl Stroke {
    pub fn new(points: Vec<Point>) -> Self {
        Stroke { points }
    }

    pub fn from_xy(xs: &[f64], ys: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::Structural(format!(
                "stroke has {} x-values and {} y-values",
                xs.len(),
                ys.len()
            )));
        }
        if xs.is_empty() {
            return Err(Error::Structural("stroke has no points".into()));
        }
        Ok(Stroke {
            points: xs.iter().zip(ys).map(|(&x, &y)| Point { x, y }).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A sketch as an ordered sequence of strokes in canvas coordinates.
///
/// Coordinates are kept as reals so the vector-space augmentations stay exact;
/// clamping to the canvas happens at parse time and again at rasterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeSketch {
    pub strokes: Vec<Stroke>,
    pub canvas: (u32, u32),
}

impl StrokeSketch {
    pub fn new(strokes: Vec<Stroke>, canvas: (u32, u32)) -> Result<Self> {
        let sketch = StrokeSketch { strokes, canvas };
        sketch.validate()?;
        Ok(sketch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.strokes.is_empty() {
            return Err(Error::Structural("drawing has no strokes".into()));
        }
        if self.canvas.0 == 0 || self.canvas.1 == 0 {
            return Err(Error::Structural("canvas has zero extent".into()));
        }
        if let Some(i) = self.strokes.iter().position(Stroke::is_empty) {
            return Err(Error::Structural(format!("stroke {i} has no points")));
        }
        Ok(())
    }

    pub fn num_strokes(&self) -> usize {
        self.strokes.len()
    }

    pub fn num_points(&self) -> usize {
        self.strokes.iter().map(Stroke::len).sum()
    }

    /// Center of the canvas in pixel-index coordinates, `((W-1)/2, (H-1)/2)`.
    pub fn center(&self) -> Point {
        Point::new(
            (self.canvas.0 as f64 - 1.0) / 2.0,
            (self.canvas.1 as f64 - 1.0) / 2.0,
        )
    }

    pub fn points(&self) -> impl Iterator<Item = &Point> {
        self.strokes.iter().flat_map(|s| s.points.iter())
    }

    /// Clamp every coordinate into `[0, W-1] x [0, H-1]`.
    pub fn clamp_to_canvas(&mut self) {
        let (xmax, ymax) = (self.canvas.0 as f64 - 1.0, self.canvas.1 as f64 - 1.0);
        for p in self.strokes.iter_mut().flat_map(|s| s.points.iter_mut()) {
            p.x = p.x.clamp(0.0, xmax);
            p.y = p.y.clamp(0.0, ymax);
        }
    }
}
