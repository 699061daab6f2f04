use proptest::prelude::*;

use sketchssl::augment::{
    crop_side, hflip, line_skip, make_view_pair, make_view_traced, rotate, sized_crop, skip_count,
    AugmentationConfig, VIEW_RENDER_SIDE,
};
use sketchssl::data::{Point, Polarity, RasterSketch, Stroke, StrokeSketch, DEFAULT_CANVAS};
use sketchssl::util::derived_rng;

fn sketch(integer: bool) -> impl Strategy<Value = StrokeSketch> {
    let coord = if integer {
        (0u32..=255).prop_map(|v| v as f64).boxed()
    } else {
        (0.0f64..=255.0).boxed()
    };
    prop::collection::vec(prop::collection::vec((coord.clone(), coord), 1..10), 1..30).prop_map(
        |strokes| {
            let strokes = strokes
                .into_iter()
                .map(|pts| Stroke::new(pts.into_iter().map(|(x, y)| Point::new(x, y)).collect()))
                .collect();
            StrokeSketch::new(strokes, DEFAULT_CANVAS).unwrap()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn hflip_is_an_involution_on_integer_coordinates(s in sketch(true)) {
        prop_assert_eq!(hflip(&hflip(&s)), s);
    }

    #[test]
    fn hflip_mirrors_about_the_canvas(s in sketch(false)) {
        let f = hflip(&s);
        for (a, b) in s.points().zip(f.points()) {
            prop_assert!((a.x + b.x - 255.0).abs() < 1e-9);
            prop_assert_eq!(a.y, b.y);
        }
    }

    #[test]
    fn rotation_is_rigid(s in sketch(false), angle in -180.0f64..180.0) {
        let r = rotate(&s, angle);
        prop_assert_eq!(r.num_strokes(), s.num_strokes());
        prop_assert_eq!(r.num_points(), s.num_points());
        let a: Vec<&Point> = s.points().collect();
        let b: Vec<&Point> = r.points().collect();
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                prop_assert!((a[i].distance(a[j]) - b[i].distance(b[j])).abs() <= 1e-6);
            }
        }
        let back = rotate(&r, -angle);
        for (p, q) in s.points().zip(back.points()) {
            prop_assert!(p.distance(q) < 1e-9);
        }
    }

    #[test]
    fn line_skip_drops_the_advertised_count(s in sketch(false), seed in any::<u64>()) {
        let mut rng = derived_rng(seed, "skip");
        let n = s.num_strokes();
        let out = line_skip(&s, 0.1, &mut rng);
        prop_assert!(out.num_strokes() >= 1);
        let expected = if n == 1 { 0 } else { ((n as f64 * 0.1).floor() as usize).max(1) };
        prop_assert_eq!(n - out.num_strokes(), expected);
        prop_assert_eq!(skip_count(n, 0.1), expected);
        let mut it = s.strokes.iter();
        prop_assert!(out.strokes.iter().all(|st| it.any(|o| o == st)));
    }

    #[test]
    fn crops_stay_in_bounds(
        s in sketch(false),
        seed in any::<u64>(),
        side in prop::sample::select(vec![8usize, 32, 64, 224]),
        lo in 0.05f64..0.6,
    ) {
        let cfg = AugmentationConfig { crop_scale_min: lo, ..AugmentationConfig::default() };
        let mut rng = derived_rng(seed, "crop");
        let (view, trace) = make_view_traced(&s, &cfg, (side, side), &mut rng);
        prop_assert_eq!(view.resolution(), (side, side));
        prop_assert_eq!(view.polarity, Polarity::Gray0255);
        prop_assert!(trace.crop_top_left.0 + trace.crop_side <= VIEW_RENDER_SIDE);
        prop_assert!(trace.crop_top_left.1 + trace.crop_side <= VIEW_RENDER_SIDE);
        prop_assert!(trace.crop_scale >= lo - 1.0 / VIEW_RENDER_SIDE as f64 && trace.crop_scale <= 1.0);
    }

    #[test]
    fn sized_crop_rejects_windows_past_the_edge(scale in 0.05f64..1.0, overshoot in 1usize..20) {
        let img = RasterSketch::blank(64, 64, Polarity::BinaryStroke0);
        let side = crop_side(scale, 64, 64);
        prop_assume!(side > 0);
        prop_assert!(sized_crop(&img, scale, (64 - side, 64 - side), (16, 16)).is_ok());
        prop_assert!(sized_crop(&img, scale, (64 - side + overshoot, 0), (16, 16)).is_err());
        prop_assert!(sized_crop(&img, scale, (0, 64 - side + overshoot), (16, 16)).is_err());
    }
}

#[test]
fn identity_config_reproduces_the_plain_render() {
    let s = StrokeSketch::new(
        vec![Stroke::new(vec![Point::new(10.0, 10.0), Point::new(200.0, 120.0)])],
        DEFAULT_CANVAS,
    )
    .unwrap();
    let mut rng = derived_rng(0, "identity");
    let (a, b) = make_view_pair(&s, &AugmentationConfig::identity(), (64, 64), &mut rng);
    assert_eq!(a, b);
    assert!(a.stroke_pixels() > 0);
}
