use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::record::{load_lines, RecordId, SketchRecord};
use crate::error::{Error, Result};
use crate::util;

/// One category file available for split construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryEntry {
    pub file: String,
    pub count: usize,
}

/// How visible labels are distributed over the training records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// `round(f * samples_per_class)` visible labels in every category.
    #[default]
    Stratified,
    /// `round(f * total)` visible labels drawn over the whole training set.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitParams {
    pub n_categories: usize,
    pub samples_per_class: usize,
    pub test_per_class: usize,
    pub label_fraction: f64,
    pub label_mode: LabelMode,
    pub seed: u64,
}

impl Default for SplitParams {
    fn default() -> Self {
        SplitParams {
            n_categories: 128,
            samples_per_class: 1000,
            test_per_class: 100,
            label_fraction: 0.0,
            label_mode: LabelMode::Stratified,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    TestKnown,
    TestUnknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub file: String,
    pub line_index: usize,
    pub category_id: usize,
    pub label_visible: bool,
    pub split: SplitName,
}

/// Serialized description of every selection made by split construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub label_fraction: f64,
    pub label_mode: LabelMode,
    pub samples_per_class: usize,
    pub test_per_class: usize,
    pub train_categories: Vec<String>,
    pub unknown_categories: Vec<String>,
    pub records: Vec<ManifestRecord>,
    /// Hash of the split parameters that produced this manifest.
    pub config_hash: String,
    /// Hash of everything above; checkpoints record it to detect mismatches.
    pub manifest_hash: String,
}

impl Manifest {
    /// Category table: training categories then unknown categories.
    pub fn category_table(&self) -> Vec<String> {
        self.train_categories
            .iter()
            .chain(&self.unknown_categories)
            .cloned()
            .collect()
    }

    pub fn n_train_categories(&self) -> usize {
        self.train_categories.len()
    }

    fn content_hash(&self) -> Result<String> {
        let mut probe = self.clone();
        probe.manifest_hash = String::new();
        util::json_hash(&probe)
    }

    pub fn verify_hash(&self) -> Result<()> {
        if self.content_hash()? != self.manifest_hash {
            return Err(Error::Config("manifest hash does not match its content".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Manifest = util::read_json(path)?;
        m.verify_hash()?;
        Ok(m)
    }
}

/// Count the non-blank records in every `*.ndjson` file of a directory.
/// The category name is the file stem.
pub fn scan_catalog(dir: &Path) -> Result<BTreeMap<String, CategoryEntry>> {
    let mut catalog = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("ndjson") {
            continue;
        }
        let name = path.file_stem().unwrap().to_string_lossy().into_owned();
        let file = path.file_name().unwrap().to_string_lossy().into_owned();
        let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut count = 0;
        for line in BufReader::new(f).lines() {
            if !line.map_err(|e| Error::io(&path, e))?.trim().is_empty() {
                count += 1;
            }
        }
        catalog.insert(name, CategoryEntry { file, count });
    }
    Ok(catalog)
}

/// Select training/unknown categories and per-category samples, deterministic
/// given `params.seed`.
pub fn build_manifest(
    catalog: &BTreeMap<String, CategoryEntry>,
    params: &SplitParams,
) -> Result<Manifest> {
    if params.n_categories == 0 || params.samples_per_class == 0 || params.test_per_class == 0 {
        return Err(Error::Config("split sizes must be positive".into()));
    }
    if !(0.0..=1.0).contains(&params.label_fraction) {
        return Err(Error::Config(format!(
            "label_fraction {} outside [0, 1]",
            params.label_fraction
        )));
    }
    let need = params.samples_per_class + params.test_per_class;
    let eligible: Vec<&String> = catalog
        .iter()
        .filter(|(_, e)| e.count >= need)
        .map(|(name, _)| name)
        .collect();
    if eligible.len() < 2 * params.n_categories {
        return Err(Error::Config(format!(
            "need {} categories with at least {need} records each, found {}",
            2 * params.n_categories,
            eligible.len()
        )));
    }

    let mut rng = util::derived_rng(params.seed, "categories");
    let mut shuffled = eligible.clone();
    shuffled.shuffle(&mut rng);
    let mut train_categories: Vec<String> = shuffled[..params.n_categories]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut unknown_categories: Vec<String> = shuffled
        [params.n_categories..2 * params.n_categories]
        .iter()
        .map(|s| s.to_string())
        .collect();
    train_categories.sort();
    unknown_categories.sort();

    let mut records = Vec::new();
    let mut train_positions = Vec::new();
    for (cid, name) in train_categories.iter().enumerate() {
        let entry = &catalog[name];
        let mut rng = util::derived_rng(params.seed, &format!("samples/{name}"));
        let mut lines: Vec<usize> = (0..entry.count).collect();
        lines.shuffle(&mut rng);
        let visible = match params.label_mode {
            LabelMode::Stratified => {
                (params.label_fraction * params.samples_per_class as f64).round() as usize
            }
            LabelMode::Global => 0,
        };
        for (j, &line_index) in lines[..params.samples_per_class].iter().enumerate() {
            train_positions.push(records.len());
            records.push(ManifestRecord {
                file: entry.file.clone(),
                line_index,
                category_id: cid,
                label_visible: j < visible,
                split: SplitName::Train,
            });
        }
        for &line_index in &lines[params.samples_per_class..need] {
            records.push(ManifestRecord {
                file: entry.file.clone(),
                line_index,
                category_id: cid,
                label_visible: true,
                split: SplitName::TestKnown,
            });
        }
    }
    if params.label_mode == LabelMode::Global {
        let total = (params.label_fraction * train_positions.len() as f64).round() as usize;
        let mut rng = util::derived_rng(params.seed, "global-labels");
        train_positions.shuffle(&mut rng);
        for &pos in &train_positions[..total] {
            records[pos].label_visible = true;
        }
    }
    for (j, name) in unknown_categories.iter().enumerate() {
        let entry = &catalog[name];
        let mut rng = util::derived_rng(params.seed, &format!("samples/{name}"));
        let mut lines: Vec<usize> = (0..entry.count).collect();
        lines.shuffle(&mut rng);
        for &line_index in &lines[..params.test_per_class] {
            records.push(ManifestRecord {
                file: entry.file.clone(),
                line_index,
                category_id: params.n_categories + j,
                label_visible: true,
                split: SplitName::TestUnknown,
            });
        }
    }

    let mut manifest = Manifest {
        seed: params.seed,
        label_fraction: params.label_fraction,
        label_mode: params.label_mode,
        samples_per_class: params.samples_per_class,
        test_per_class: params.test_per_class,
        train_categories,
        unknown_categories,
        records,
        config_hash: util::json_hash(params)?,
        manifest_hash: String::new(),
    };
    manifest.manifest_hash = manifest.content_hash()?;
    Ok(manifest)
}

/// Materialized train / known-test / unknown-test records.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<SketchRecord>,
    pub test_known: Vec<SketchRecord>,
    pub test_unknown: Vec<SketchRecord>,
    pub categories: Vec<String>,
    pub n_train_categories: usize,
    pub label_fraction: f64,
    pub seed: u64,
    pub manifest_hash: String,
}

impl DatasetSplit {
    /// Parse the manifest's records from the category files in `data_dir`.
    pub fn load(manifest: &Manifest, data_dir: &Path) -> Result<Self> {
        let mut wanted: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
        for r in &manifest.records {
            wanted.entry(&r.file).or_default().insert(r.line_index);
        }
        let mut parsed: BTreeMap<RecordId, SketchRecord> = BTreeMap::new();
        for (file, lines) in wanted {
            for (_, rec) in load_lines(&data_dir.join(file), file, &lines)? {
                parsed.insert(rec.id.clone(), rec);
            }
        }
        Self::assemble(manifest, |id| {
            parsed
                .get(id)
                .cloned()
                .ok_or_else(|| Error::Config(format!("record {id} missing")))
        })
    }

    /// Build from a manifest with records supplied by `lookup`.
    pub fn assemble(
        manifest: &Manifest,
        mut lookup: impl FnMut(&RecordId) -> Result<SketchRecord>,
    ) -> Result<Self> {
        let categories = manifest.category_table();
        let mut split = DatasetSplit {
            train: Vec::new(),
            test_known: Vec::new(),
            test_unknown: Vec::new(),
            categories,
            n_train_categories: manifest.n_train_categories(),
            label_fraction: manifest.label_fraction,
            seed: manifest.seed,
            manifest_hash: manifest.manifest_hash.clone(),
        };
        for r in &manifest.records {
            let id = RecordId {
                file: r.file.clone(),
                line_index: r.line_index,
            };
            let mut rec = lookup(&id)?;
            if r.category_id >= split.categories.len() {
                return Err(Error::Config(format!("category id {} out of range", r.category_id)));
            }
            rec.id = id;
            rec.category = split.categories[r.category_id].clone();
            rec.category_id = r.category_id;
            rec.label_visible = r.label_visible;
            match r.split {
                SplitName::Train => split.train.push(rec),
                SplitName::TestKnown => split.test_known.push(rec),
                SplitName::TestUnknown => split.test_unknown.push(rec),
            }
        }
        Ok(split)
    }

    pub fn records(&self, name: SplitName) -> &[SketchRecord] {
        match name {
            SplitName::Train => &self.train,
            SplitName::TestKnown => &self.test_known,
            SplitName::TestUnknown => &self.test_unknown,
        }
    }
}
