//! Stroke-format sketch ingestion, dataset splits and rasterization.

mod raster;
mod record;
pub(crate) use record::load_lines;
mod sketch;
mod split;
pub mod synth;

pub use raster::{rasterize, rasterize_default, Polarity, RasterSketch, DEFAULT_LINE_WIDTH};
pub use record::{load_category_file, parse_record, to_ndjson_line, RecordId, SketchRecord};
pub use sketch::{Point, Stroke, StrokeSketch, DEFAULT_CANVAS};
pub use split::{
    build_manifest, scan_catalog, CategoryEntry, DatasetSplit, LabelMode, Manifest,
    ManifestRecord, SplitName, SplitParams,
};
