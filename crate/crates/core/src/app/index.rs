use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::data::{Polarity, RasterSketch, SketchRecord};
use crate::error::{Error, Result};
use crate::retrieval::{retrieve, Embedder, EmbeddingMatrix, Metric, RetrievalResult};

/// Embeddings of a sketch collection together with the network that made them.
pub struct SketchIndex {
    em: EmbeddingMatrix,
    embedder: Embedder,
    pub metric: Metric,
}

impl SketchIndex {
    pub fn new(embedder: Embedder, em: EmbeddingMatrix, metric: Metric) -> Result<Self> {
        if em.dim() != embedder.header.embed_dim {
            return Err(Error::Config(format!(
                "index has dimension {}, the checkpoint embeds to {}",
                em.dim(),
                embedder.header.embed_dim
            )));
        }
        if em.meta.config_hash != embedder.header.config_hash {
            return Err(Error::Config(format!(
                "index was built by run {} but the checkpoint is from run {}",
                em.meta.config_hash, embedder.header.config_hash
            )));
        }
        Ok(SketchIndex { em, embedder, metric })
    }

    pub fn build(embedder: Embedder, records: &[SketchRecord], metric: Metric) -> Result<Self> {
        let em = embedder.extract(records, "index")?;
        Self::new(embedder, em, metric)
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.em
    }

    pub fn spec(&self) -> &crate::models::ModelSpec {
        &self.embedder.header.spec
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.embedder.resolution()
    }

    pub fn polarity(&self) -> Polarity {
        self.embedder.polarity()
    }

    pub fn query_raster(&self, raster: &RasterSketch, query_id: &str, k: usize) -> Result<RetrievalResult> {
        let v = self.embedder.embed_rasters(std::slice::from_ref(raster))?;
        retrieve(&self.em, query_id, &v[0], k, self.metric)
    }

    /// Load an edge-map image, normalize it to the index's input format and
    /// return its `k` nearest sketches.
    pub fn query_image(&self, path: &Path, k: usize) -> Result<(RasterSketch, RetrievalResult)> {
        let raster = load_edge_map(path, self.resolution(), self.polarity())?;
        let result = self.query_raster(&raster, &path.display().to_string(), k)?;
        Ok((raster, result))
    }
}

/// Read a grayscale image as dark-on-light strokes: inverted when its mean
/// intensity is below 128, padded to a square with background, resized, and
/// binarized at the midpoint for binary-input models.
pub fn load_edge_map(path: &Path, resolution: (usize, usize), polarity: Polarity) -> Result<RasterSketch> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Structural(format!("{} is empty", path.display())));
    }
    let mean = img.pixels().map(|p| p.0[0] as f64).sum::<f64>() / (w * h) as f64;
    let invert = mean < 128.0;
    let side = w.max(h);
    let (top, left) = ((side - h) / 2, (side - w) / 2);
    let mut square = RasterSketch::blank(side, side, Polarity::Gray0255);
    for (x, y, p) in img.enumerate_pixels() {
        let v = if invert { 255 - p.0[0] } else { p.0[0] };
        square.pixels[(y as usize + top) * side + x as usize + left] = v;
    }
    Ok(square.resize(resolution).convert(polarity))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryHit {
    pub id: String,
    pub label: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutput {
    pub query: String,
    pub k: usize,
    pub results: Vec<QueryHit>,
}

impl From<&RetrievalResult> for QueryOutput {
    fn from(r: &RetrievalResult) -> Self {
        QueryOutput {
            query: r.query_id.clone(),
            k: r.ranked_ids.len(),
            results: r
                .ranked_ids
                .iter()
                .zip(&r.ranked_labels)
                .zip(&r.distances)
                .map(|((id, &label), &distance)| QueryHit {
                    id: id.clone(),
                    label,
                    distance,
                })
                .collect(),
        }
    }
}

/// Look up records by their `file:line` ids in the category files under `data_dir`.
pub fn load_records_by_id(data_dir: &Path, ids: &[String]) -> Result<Vec<SketchRecord>> {
    let mut wanted: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    let mut parsed_ids = Vec::with_capacity(ids.len());
    for id in ids {
        let (file, line) = id
            .rsplit_once(':')
            .and_then(|(f, l)| l.parse::<usize>().ok().map(|l| (f.to_string(), l)))
            .ok_or_else(|| Error::Config(format!("record id {id:?} is not file:line")))?;
        wanted.entry(file.clone()).or_default().insert(line);
        parsed_ids.push((file, line));
    }
    let mut found = BTreeMap::new();
    for (file, lines) in &wanted {
        for (line, rec) in crate::data::load_lines(&data_dir.join(file), file, lines)? {
            found.insert((file.clone(), line), rec);
        }
    }
    parsed_ids
        .into_iter()
        .map(|key| {
            found
                .get(&key)
                .cloned()
                .ok_or_else(|| Error::Config(format!("record {}:{} not found", key.0, key.1)))
        })
        .collect()
}

/// Query followed by its hits in one row, each tile upscaled to at least 96 px.
pub fn contact_sheet(query: &RasterSketch, hits: &[RasterSketch]) -> GrayImage {
    let (h, w) = query.resolution();
    let scale = (96 / h.max(1)).max(1);
    let gap = 4;
    let tiles: Vec<&RasterSketch> = std::iter::once(query).chain(hits.iter()).collect();
    let tw = w * scale;
    let width = tiles.len() * tw + (tiles.len() + 1) * gap;
    let height = h * scale + 2 * gap;
    let mut img = GrayImage::from_pixel(width as u32, height as u32, image::Luma([200]));
    for (t, tile) in tiles.iter().enumerate() {
        let g = tile.convert(Polarity::Gray0255);
        let (th, tw_px) = g.resolution();
        let x0 = gap + t * (tw + gap);
        for y in 0..th.min(h) * scale {
            for x in 0..tw_px.min(w) * scale {
                let v = g.get(y / scale, x / scale);
                img.put_pixel((x0 + x) as u32, (gap + y) as u32, image::Luma([v]));
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dark_background_is_inverted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("edge.png");
        let mut img = GrayImage::from_pixel(32, 32, image::Luma([0]));
        for x in 0..32 {
            img.put_pixel(x, 16, image::Luma([255]));
        }
        img.save(&p).unwrap();
        let r = load_edge_map(&p, (32, 32), Polarity::Gray0255).unwrap();
        assert_eq!(r.get(16, 5), 0);
        assert_eq!(r.get(3, 3), 255);
        let b = load_edge_map(&p, (32, 32), Polarity::BinaryStroke0).unwrap();
        assert_eq!(b.get(16, 5), 0);
        assert_eq!(b.get(3, 3), 1);
    }

    #[test]
    fn pgm_and_non_square_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("edge.pgm");
        let img = GrayImage::from_pixel(40, 20, image::Luma([255]));
        img.save(&p).unwrap();
        let r = load_edge_map(&p, (16, 16), Polarity::Gray0255).unwrap();
        assert_eq!(r.resolution(), (16, 16));
        assert!(load_edge_map(&dir.path().join("missing.png"), (16, 16), Polarity::Gray0255).is_err());
    }

    #[test]
    fn contact_sheet_layout() {
        let q = RasterSketch::blank(32, 32, Polarity::BinaryStroke0);
        let sheet = contact_sheet(&q, &[q.clone(), q.clone()]);
        assert_eq!(sheet.width() as usize, 3 * 96 + 4 * 4);
        assert_eq!(sheet.height() as usize, 96 + 8);
    }
}
