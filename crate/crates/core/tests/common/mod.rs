#![allow(dead_code)]

use std::path::Path;

use sketchssl::data::{synth, DatasetSplit, RecordId, SketchRecord};
use sketchssl::util::derived_rng;

/// `n_known` training categories and `n_unknown` held-out ones, drawn from the
/// synthetic generator.
pub fn toy_split(
    n_known: usize,
    n_unknown: usize,
    train_per_class: usize,
    test_per_class: usize,
    label_fraction: f64,
    seed: u64,
) -> DatasetSplit {
    let mut split = DatasetSplit {
        train: Vec::new(),
        test_known: Vec::new(),
        test_unknown: Vec::new(),
        categories: Vec::new(),
        n_train_categories: n_known,
        label_fraction,
        seed,
        manifest_hash: format!("toy-{seed}"),
    };
    for c in 0..n_known + n_unknown {
        let name = synth::CATEGORY_NAMES[c].to_string();
        split.categories.push(name.clone());
        let mut rng = derived_rng(seed, &format!("toy/{name}"));
        let per = if c < n_known { train_per_class + test_per_class } else { test_per_class };
        for i in 0..per {
            let visible = c < n_known && i < train_per_class
                && (i as f64) < (label_fraction * train_per_class as f64).round();
            let rec = SketchRecord {
                id: RecordId {
                    file: format!("{name}.ndjson"),
                    line_index: i,
                },
                sketch: synth::generate(c, &mut rng),
                category: name.clone(),
                category_id: c,
                label_visible: visible,
            };
            if c >= n_known {
                split.test_unknown.push(rec);
            } else if i < train_per_class {
                split.train.push(rec);
            } else {
                split.test_known.push(rec);
            }
        }
    }
    split
}

pub fn write_png(path: &Path, raster: &sketchssl::data::RasterSketch) {
    let g = raster.convert(sketchssl::data::Polarity::Gray0255);
    let img = image::GrayImage::from_raw(g.width as u32, g.height as u32, g.pixels.clone()).unwrap();
    img.save(path).unwrap();
}

pub fn repo_root() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// A shipped JSON config under `configs/`.
pub fn config_path(rel: &str) -> std::path::PathBuf {
    repo_root().join("configs").join(rel)
}

pub fn load_config<T>(rel: &str) -> T
where
    T: serde::Serialize + serde::de::DeserializeOwned + Default,
{
    sketchssl::app::resolve(Some(&config_path(rel)), &[]).unwrap()
}
