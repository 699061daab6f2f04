use std::io::{Read, Write};
use std::path::Path;

use candle_core::{DType, Device};
use serde::{Deserialize, Serialize};

use crate::data::{Polarity, RasterSketch, SketchRecord, StrokeSketch};
use crate::error::{Error, Result};
use crate::models::{images_to_tensor, load_checkpoint, render_for, AnyModel, CheckpointHeader};

const MAGIC: &[u8; 8] = b"SKEMB\x00\x01\x00";
const EMBED_BATCH: usize = 64;

/// Provenance stored with an embedding matrix.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub model_kind: Option<String>,
    pub backbone: Option<String>,
    pub config_hash: String,
    pub seed: u64,
    pub manifest_hash: String,
    pub split: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FileHeader {
    n: usize,
    dim: usize,
    #[serde(flatten)]
    meta: EmbeddingMeta,
}

/// `N x D` embeddings with a category label and record id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    vectors: Vec<f32>,
    dim: usize,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
    pub meta: EmbeddingMeta,
}

impl EmbeddingMatrix {
    pub fn new(
        vectors: Vec<f32>,
        dim: usize,
        labels: Vec<usize>,
        ids: Vec<String>,
        meta: EmbeddingMeta,
    ) -> Result<Self> {
        let n = labels.len();
        if ids.len() != n || vectors.len() != n * dim {
            return Err(Error::Structural(format!(
                "embedding matrix with {n} labels, {} ids and {} values for dimension {dim}",
                ids.len(),
                vectors.len()
            )));
        }
        if let Some(pos) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::Structural(format!(
                "non-finite embedding in row {}",
                pos / dim.max(1)
            )));
        }
        Ok(EmbeddingMatrix {
            vectors,
            dim,
            labels,
            ids,
            meta,
        })
    }

    /// Rows given as vectors; ids default to the row index.
    pub fn from_rows(rows: &[Vec<f32>], labels: Vec<usize>, ids: Option<Vec<String>>) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Structural("rows differ in length".into()));
        }
        let ids = ids.unwrap_or_else(|| (0..rows.len()).map(|i| i.to_string()).collect());
        Self::new(rows.concat(), dim, labels, ids, EmbeddingMeta::default())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        Self::new(self.vectors.clone(), self.dim, labels, self.ids.clone(), self.meta.clone())
    }

    /// Rows whose index satisfies `keep`, in order.
    pub fn select(&self, keep: impl Fn(usize) -> bool) -> Result<Self> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        let vectors = idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self::new(
            vectors,
            self.dim,
            idx.iter().map(|&i| self.labels[i]).collect(),
            idx.iter().map(|&i| self.ids[i].clone()).collect(),
            self.meta.clone(),
        )
    }

    /// Magic, `u32` header length, JSON header, little-endian `f32` rows,
    /// `u32` labels, then each id as `u32` length plus UTF-8 bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&FileHeader {
            n: self.len(),
            dim: self.dim,
            meta: self.meta.clone(),
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + self.vectors.len() * 4 + self.len() * 24);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.vectors {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &l in &self.labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Structural("not an embedding file".into()));
        }
        let header_len = read_u32(&mut r)? as usize;
        let mut header = vec![0u8; header_len];
        read_exact(&mut r, &mut header)?;
        let header: FileHeader = serde_json::from_slice(&header)?;
        let total = header
            .n
            .checked_mul(header.dim)
            .filter(|&t| t.saturating_mul(4) <= r.len())
            .ok_or_else(|| Error::Structural("embedding file is truncated".into()))?;
        let mut vectors = Vec::with_capacity(total);
        for _ in 0..total {
            vectors.push(f32::from_le_bytes(read_array(&mut r)?));
        }
        let labels = (0..header.n)
            .map(|_| read_u32(&mut r).map(|l| l as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut ids = Vec::with_capacity(header.n);
        for _ in 0..header.n {
            let len = read_u32(&mut r)? as usize;
            let mut buf = vec![0u8; len];
            read_exact(&mut r, &mut buf)?;
            ids.push(String::from_utf8(buf).map_err(|_| Error::Structural("id is not UTF-8".into()))?);
        }
        if !r.is_empty() {
            return Err(Error::Structural("trailing bytes in embedding file".into()));
        }
        Self::new(vectors, header.dim, labels, ids, header.meta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Structural("embedding file is truncated".into()))
}

fn read_array<const N: usize>(r: &mut &[u8]) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    read_exact(r, &mut b)?;
    Ok(b)
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

/// A trained network ready to embed sketches, with its checkpoint header.
#[derive(Clone)]
pub struct Embedder {
    pub model: AnyModel,
    pub header: CheckpointHeader,
    dtype: DType,
}

impl Embedder {
    pub fn new(model: AnyModel, header: CheckpointHeader, dtype: DType) -> Self {
        Embedder { model, header, dtype }
    }

    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Config(format!("checkpoint {} does not exist", path.display())));
        }
        let (model, _, header) = load_checkpoint(path, DType::F32, &Device::Cpu)?;
        Ok(Embedder::new(model, header, DType::F32))
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.header.spec.resolution()
    }

    pub fn polarity(&self) -> Polarity {
        self.header.spec.polarity()
    }

    /// Embed rasters already at the model's resolution and polarity.
    pub fn embed_rasters(&self, rasters: &[RasterSketch]) -> Result<Vec<Vec<f32>>> {
        for r in rasters {
            if r.resolution() != self.resolution() || r.polarity != self.polarity() {
                return Err(Error::Config(format!(
                    "input is {:?} {:?}, the checkpoint expects {:?} {:?}",
                    r.resolution(),
                    r.polarity,
                    self.resolution(),
                    self.polarity()
                )));
            }
        }
        let mut out = Vec::with_capacity(rasters.len());
        for chunk in rasters.chunks(EMBED_BATCH) {
            let refs: Vec<&RasterSketch> = chunk.iter().collect();
            let x = images_to_tensor(&refs, self.dtype, &Device::Cpu)?;
            let e = self.model.embed(&x)?.to_dtype(DType::F32)?;
            out.extend(e.to_vec2::<f32>()?);
        }
        Ok(out)
    }

    pub fn embed_sketches(&self, sketches: &[&StrokeSketch]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(sketches.len());
        for chunk in sketches.chunks(EMBED_BATCH) {
            out.extend(self.embed_rasters(&render_for(chunk, &self.header.spec))?);
        }
        Ok(out)
    }

    /// Evaluation-mode embeddings of `records`, labelled by category id.
    pub fn extract(&self, records: &[SketchRecord], split: &str) -> Result<EmbeddingMatrix> {
        let sketches: Vec<&StrokeSketch> = records.iter().map(|r| &r.sketch).collect();
        let rows = self.embed_sketches(&sketches)?;
        let dim = rows.first().map_or(self.header.embed_dim, |r| r.len());
        let meta = EmbeddingMeta {
            model_kind: Some(self.header.model_kind.to_string()),
            backbone: serde_json::to_value(self.header.backbone)?.as_str().map(str::to_string),
            config_hash: self.header.config_hash.clone(),
            seed: self.header.seed,
            manifest_hash: self.header.manifest_hash.clone(),
            split: split.to_string(),
        };
        EmbeddingMatrix::new(
            rows.concat(),
            dim,
            records.iter().map(|r| r.category_id).collect(),
            records.iter().map(|r| r.id.to_string()).collect(),
            meta,
        )
    }
}
