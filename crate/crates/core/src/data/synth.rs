//! Procedural stroke sketches in the simplified QuickDraw layout.
//!
//! Used for desk-scale experiments and tests where the real corpus is not
//! available. Each category is a hand-written template in the unit square,
//! drawn with random placement, scale, aspect, tilt and pen wobble.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::record::to_ndjson_line;
use super::sketch::{Point, Stroke, StrokeSketch, DEFAULT_CANVAS};
use crate::error::Result;
use crate::util;

pub const CATEGORY_NAMES: [&str; 24] = [
    "circle", "square", "triangle", "star", "spiral", "zigzag", "plus", "x_mark", "house",
    "arrow", "heart", "hexagon", "wave", "ladder", "grid", "rings", "moon", "lightning",
    "diamond", "spring", "flower", "smiley", "sun", "fish",
];

type Poly = Vec<(f64, f64)>;

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from: f64, to: f64, n: usize) -> Poly {
    (0..=n)
        .map(|i| {
            let t = from + (to - from) * i as f64 / n as f64;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

fn polygon(sides: usize, radius: f64, phase: f64) -> Poly {
    (0..=sides)
        .map(|i| {
            let t = phase + TAU * i as f64 / sides as f64;
            (radius * t.cos(), radius * t.sin())
        })
        .collect()
}

fn template<R: Rng>(category: usize, rng: &mut R) -> Vec<Poly> {
    match category {
        0 => vec![arc(0.0, 0.0, 1.0, 1.0, 0.0, TAU, 24)],
        1 => vec![vec![(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0)]],
        2 => vec![vec![(0.0, -1.0), (1.0, 0.9), (-1.0, 0.9), (0.0, -1.0)]],
        3 => {
            let pts = (0..=10)
                .map(|i| {
                    let r = if i % 2 == 0 { 1.0 } else { 0.4 };
                    let t = -PI / 2.0 + PI * i as f64 / 5.0;
                    (r * t.cos(), r * t.sin())
                })
                .collect();
            vec![pts]
        }
        4 => vec![(0..60)
            .map(|i| {
                let t = i as f64 / 59.0;
                let a = t * 3.0 * TAU;
                (t * a.cos(), t * a.sin())
            })
            .collect()],
        5 => vec![(0..7)
            .map(|i| (-1.0 + i as f64 / 3.0, if i % 2 == 0 { -0.6 } else { 0.6 }))
            .collect()],
        6 => vec![vec![(0.0, -1.0), (0.0, 1.0)], vec![(-1.0, 0.0), (1.0, 0.0)]],
        7 => vec![vec![(-1.0, -1.0), (1.0, 1.0)], vec![(1.0, -1.0), (-1.0, 1.0)]],
        8 => vec![
            vec![(-0.8, -0.1), (-0.8, 1.0), (0.8, 1.0), (0.8, -0.1)],
            vec![(-1.0, -0.1), (0.0, -1.0), (1.0, -0.1)],
            vec![(-0.2, 1.0), (-0.2, 0.45), (0.2, 0.45), (0.2, 1.0)],
        ],
        9 => vec![
            vec![(-1.0, 0.0), (1.0, 0.0)],
            vec![(0.45, -0.5), (1.0, 0.0), (0.45, 0.5)],
        ],
        10 => {
            let pts = (0..=40)
                .map(|i| {
                    let t = TAU * i as f64 / 40.0;
                    let x = 16.0 * t.sin().powi(3);
                    let y = 13.0 * t.cos() - 5.0 * (2.0 * t).cos() - 2.0 * (3.0 * t).cos()
                        - (4.0 * t).cos();
                    (x / 16.0, -y / 16.0)
                })
                .collect();
            vec![pts]
        }
        11 => vec![polygon(6, 1.0, 0.0)],
        12 => vec![(0..40)
            .map(|i| {
                let x = -1.0 + 2.0 * i as f64 / 39.0;
                (x, 0.5 * (x * 2.0 * PI).sin())
            })
            .collect()],
        13 => {
            let mut s = vec![vec![(-0.5, -1.0), (-0.5, 1.0)], vec![(0.5, -1.0), (0.5, 1.0)]];
            for k in 0..4 {
                let y = -0.75 + 0.5 * k as f64;
                s.push(vec![(-0.5, y), (0.5, y)]);
            }
            s
        }
        14 => vec![
            vec![(-0.33, -1.0), (-0.33, 1.0)],
            vec![(0.33, -1.0), (0.33, 1.0)],
            vec![(-1.0, -0.33), (1.0, -0.33)],
            vec![(-1.0, 0.33), (1.0, 0.33)],
        ],
        15 => vec![
            arc(0.0, 0.0, 1.0, 1.0, 0.0, TAU, 24),
            arc(0.0, 0.0, 0.45, 0.45, 0.0, TAU, 16),
        ],
        16 => {
            let mut outer = arc(0.0, 0.0, 1.0, 1.0, PI / 2.0, 3.0 * PI / 2.0, 16);
            let inner = arc(-0.35, 0.0, 0.75, 1.0, 3.0 * PI / 2.0, PI / 2.0, 16);
            outer.extend(inner.into_iter().map(|(x, y)| (x + 0.0, y)));
            vec![outer]
        }
        17 => vec![vec![
            (0.3, -1.0),
            (-0.4, 0.1),
            (0.2, 0.1),
            (-0.3, 1.0),
        ]],
        18 => vec![polygon(4, 1.0, PI / 2.0)],
        19 => vec![(0..80)
            .map(|i| {
                let t = i as f64 / 79.0;
                let a = t * 5.0 * TAU;
                (-1.0 + 2.0 * t + 0.25 * a.cos(), 0.6 * a.sin())
            })
            .collect()],
        20 => {
            let mut s = vec![arc(0.0, 0.0, 0.25, 0.25, 0.0, TAU, 12)];
            for k in 0..5 {
                let a = TAU * k as f64 / 5.0;
                let (c, d) = (0.62 * a.cos(), 0.62 * a.sin());
                let petal: Poly = arc(0.0, 0.0, 0.37, 0.18, 0.0, TAU, 12)
                    .into_iter()
                    .map(|(x, y)| (c + x * a.cos() - y * a.sin(), d + x * a.sin() + y * a.cos()))
                    .collect();
                s.push(petal);
            }
            s
        }
        21 => vec![
            arc(0.0, 0.0, 1.0, 1.0, 0.0, TAU, 24),
            vec![(-0.35, -0.3)],
            vec![(0.35, -0.3)],
            arc(0.0, 0.1, 0.5, 0.45, 0.2, PI - 0.2, 10),
        ],
        22 => {
            let mut s = vec![arc(0.0, 0.0, 0.45, 0.45, 0.0, TAU, 16)];
            let rays = 8 + rng.gen_range(0..3);
            for k in 0..rays {
                let a = TAU * k as f64 / rays as f64;
                s.push(vec![(0.6 * a.cos(), 0.6 * a.sin()), (a.cos(), a.sin())]);
            }
            s
        }
        23 => vec![
            arc(0.15, 0.0, 0.75, 0.45, 0.0, TAU, 20),
            vec![(-0.6, 0.0), (-1.0, -0.4), (-1.0, 0.4), (-0.6, 0.0)],
            vec![(0.55, -0.1)],
        ],
        _ => panic!("unknown synthetic category {category}"),
    }
}

/// Draw one random instance of a synthetic category on the 256 canvas.
pub fn generate<R: Rng>(category: usize, rng: &mut R) -> StrokeSketch {
    let polys = template(category, rng);
    let scale = rng.gen_range(0.45..0.95) * 127.5;
    let aspect: f64 = rng.gen_range(0.8..1.25);
    let tilt = rng.gen_range(-0.35..0.35f64);
    let (sx, sy) = (scale * aspect.sqrt(), scale / aspect.sqrt());
    let margin_x = 127.5 - sx.max(sy) * 0.9;
    let margin_y = 127.5 - sx.max(sy) * 0.9;
    let cx = 127.5 + rng.gen_range(-margin_x.max(0.0)..=margin_x.max(0.0));
    let cy = 127.5 + rng.gen_range(-margin_y.max(0.0)..=margin_y.max(0.0));
    let wobble = Normal::new(0.0, 0.025).unwrap();
    let (cos, sin) = (tilt.cos(), tilt.sin());
    let strokes = polys
        .into_iter()
        .map(|poly| {
            // low-frequency pen drift shared by consecutive points
            let (mut dx, mut dy) = (0.0, 0.0);
            let points = poly
                .into_iter()
                .map(|(x, y)| {
                    dx = 0.7 * dx + wobble.sample(rng);
                    dy = 0.7 * dy + wobble.sample(rng);
                    let (x, y) = (x + dx, y + dy);
                    let (rx, ry) = (x * cos - y * sin, x * sin + y * cos);
                    Point::new(
                        (cx + rx * sx).round().clamp(0.0, 255.0),
                        (cy + ry * sy).round().clamp(0.0, 255.0),
                    )
                })
                .collect();
            Stroke::new(points)
        })
        .collect();
    StrokeSketch::new(strokes, DEFAULT_CANVAS).expect("templates are non-empty")
}

/// Write `per_class` instances of the first `n_categories` templates as one
/// NDJSON file per category.
pub fn write_dataset(dir: &Path, n_categories: usize, per_class: usize, seed: u64) -> Result<()> {
    if n_categories > CATEGORY_NAMES.len() {
        return Err(crate::Error::Config(format!(
            "only {} synthetic categories exist",
            CATEGORY_NAMES.len()
        )));
    }
    for (c, name) in CATEGORY_NAMES.iter().enumerate().take(n_categories) {
        let mut rng = util::derived_rng(seed, &format!("synth/{name}"));
        let mut text = String::new();
        for _ in 0..per_class {
            text.push_str(&to_ndjson_line(name, &generate(c, &mut rng)));
            text.push('\n');
        }
        util::write_file(&dir.join(format!("{name}.ndjson")), text.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_record;

    #[test]
    fn every_template_is_valid_and_in_canvas() {
        let mut rng = util::rng_from_seed(1);
        for c in 0..CATEGORY_NAMES.len() {
            for _ in 0..20 {
                let s = generate(c, &mut rng);
                s.validate().unwrap();
                assert!(s.points().all(|p| (0.0..=255.0).contains(&p.x)
                    && (0.0..=255.0).contains(&p.y)));
                let line = to_ndjson_line(CATEGORY_NAMES[c], &s);
                assert_eq!(parse_record(&line).unwrap().sketch, s);
            }
        }
    }
}
