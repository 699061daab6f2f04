mod common;

use candle_core::{DType, Device};
use proptest::prelude::*;
use rand::Rng;

use sketchssl::models::{BackboneConfig, BackboneKind, CheckpointHeader, ModelKind, ModelSpec, ParamStore};
use sketchssl::retrieval::{
    average_precision_at_k, knn_accuracy, map_at_k, nearest, project_2d, projection_csv, retrieve,
    split_metrics, Embedder, EmbeddingMatrix, Metric, TsneConfig,
};
use sketchssl::training::TrainConfig;
use sketchssl::util::derived_rng;

fn random_matrix(seed: u64, n: usize, d: usize, classes: usize) -> EmbeddingMatrix {
    let mut rng = derived_rng(seed, "matrix");
    let rows: Vec<Vec<f32>> = (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
        .collect();
    let labels = (0..n).map(|i| i % classes).collect();
    EmbeddingMatrix::from_rows(&rows, labels, None).unwrap()
}

fn transformed(em: &EmbeddingMatrix, f: impl Fn(&[f32]) -> Vec<f32>) -> EmbeddingMatrix {
    let rows: Vec<Vec<f32>> = (0..em.len()).map(|i| f(em.row(i))).collect();
    EmbeddingMatrix::from_rows(&rows, em.labels.clone(), None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // signed axis permutations and integer translations are exact in f32
    #[test]
    fn metrics_are_isometry_invariant(
        seed in any::<u64>(),
        perm in Just((0..8).collect::<Vec<usize>>()).prop_shuffle(),
        signs in prop::collection::vec(prop::bool::ANY, 8),
        shift in prop::collection::vec(-4i32..4, 8),
    ) {
        let em = random_matrix(seed, 80, 8, 6);
        let moved = transformed(&em, |r| {
            (0..8)
                .map(|i| {
                    let v = r[perm[i]];
                    (if signs[i] { -v } else { v }) + shift[i] as f32
                })
                .collect()
        });
        let a = split_metrics(&em, 5, Metric::Euclidean).unwrap();
        let b = split_metrics(&moved, 5, Metric::Euclidean).unwrap();
        prop_assert!((a.knn_accuracy - b.knn_accuracy).abs() <= 1e-9);
        prop_assert!((a.map_at_5 - b.map_at_5).abs() <= 1e-9);
    }

    #[test]
    fn duplicate_in_gallery_never_lowers_ap(seed in any::<u64>(), q in 0usize..60) {
        let em = random_matrix(seed, 60, 6, 5);
        let ap = |g: &EmbeddingMatrix| {
            let nn = nearest(g, em.row(q), 5, Metric::Euclidean, Some(q));
            let rel: Vec<bool> = nn.iter().map(|&(j, _)| g.labels[j] == em.labels[q]).collect();
            let r = g.labels.iter().filter(|&&l| l == em.labels[q]).count() - 1;
            average_precision_at_k(&rel, r, 5)
        };
        let mut rows: Vec<Vec<f32>> = (0..em.len()).map(|i| em.row(i).to_vec()).collect();
        let mut labels = em.labels.clone();
        rows.push(em.row(q).to_vec());
        labels.push(em.labels[q]);
        let dup = EmbeddingMatrix::from_rows(&rows, labels, None).unwrap();
        let (before, after) = (ap(&em), ap(&dup));
        prop_assert!(after >= before);
        if before < 1.0 {
            prop_assert!(after > before);
        }
    }
}

#[test]
fn separated_clusters_score_perfectly() {
    let mut rng = derived_rng(1, "clusters");
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for c in 0..6 {
        for _ in 0..20 {
            rows.push((0..4).map(|d| (if d == c % 4 { 100.0 * (c + 1) as f32 } else { 0.0 }) + rng.gen_range(-0.01f32..0.01)).collect());
            labels.push(c);
        }
    }
    let em = EmbeddingMatrix::from_rows(&rows, labels, None).unwrap();
    assert_eq!(knn_accuracy(&em, 5, Metric::Euclidean).unwrap(), 1.0);
    assert_eq!(map_at_k(&em, 5, Metric::Euclidean).unwrap(), 1.0);
}

#[test]
fn full_gallery_ranking_is_sorted_and_excludes_nothing_else() {
    let em = random_matrix(3, 40, 5, 4);
    let res = retrieve(&em, "outside", &[0.1, 0.2, 0.3, 0.4, 0.5], em.len(), Metric::Cosine).unwrap();
    assert_eq!(res.ranked_ids.len(), em.len());
    assert!(res.distances.windows(2).all(|w| w[0] <= w[1]));
    assert!(retrieve(&em, "bad", &[0.0; 3], 5, Metric::Euclidean).is_err());
}

#[test]
fn too_small_gallery_is_a_config_error() {
    let em = random_matrix(4, 5, 3, 2);
    assert!(knn_accuracy(&em, 5, Metric::Euclidean).is_err());
    assert!(map_at_k(&em, 0, Metric::Euclidean).is_err());
}

#[test]
fn report_schema_has_exactly_two_metrics() {
    let em = random_matrix(5, 30, 4, 3);
    let m = split_metrics(&em, 5, Metric::Euclidean).unwrap();
    let v = serde_json::to_value(m).unwrap();
    let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["knn_accuracy", "map_at_5"]);
}

#[test]
fn paper_embedding_widths() {
    let vae: TrainConfig = common::load_config("paper/vae.json");
    let m2: TrainConfig = common::load_config("paper/m2.json");
    let ssvae: TrainConfig = common::load_config("paper/ssvae.json");
    let byol: TrainConfig = common::load_config("paper/byol.json");
    assert_eq!(vae.model.embed_dim(), 32);
    assert_eq!(m2.model.embed_dim(), 160);
    assert_eq!(ssvae.model.embed_dim(), 32);
    assert_eq!(byol.model.embed_dim(), 2048);
    assert_eq!(byol.model.backbone.kind, BackboneKind::Resnet50);
}

fn tiny_embedder(kind: ModelKind, seed: u64) -> Embedder {
    let spec = ModelSpec {
        model_kind: kind,
        backbone: BackboneConfig::small(8),
        latent_dim: 32,
        n_classes: 128,
        resolution: Some(32),
        proj_hidden: 16,
        proj_out: 8,
        ..ModelSpec::default()
    };
    let store = ParamStore::new(DType::F32, &Device::Cpu, seed);
    let model = spec.build(&store).unwrap();
    Embedder::new(model, CheckpointHeader::new(&spec, "h", seed, "m"), DType::F32)
}

#[test]
fn extracted_widths_and_repeatability() {
    let split = common::toy_split(3, 3, 4, 6, 0.0, 11);
    for (kind, dim) in [(ModelKind::Vae, 32), (ModelKind::M2, 160), (ModelKind::Ssvae, 32), (ModelKind::Byol, 8), (ModelKind::Supervised, 8)] {
        let e = tiny_embedder(kind, 2);
        let a = e.extract(&split.test_known, "test_known").unwrap();
        let b = e.extract(&split.test_known, "test_known").unwrap();
        assert_eq!(a.dim(), dim, "{kind:?}");
        assert_eq!(a.len(), 18);
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        assert_eq!(a.ids[0], split.test_known[0].id.to_string());
    }
}

#[test]
fn projection_keeps_eight_classes_and_is_deterministic() {
    let em = random_matrix(6, 12 * 15, 6, 12);
    let cfg = TsneConfig {
        iterations: 250,
        ..TsneConfig::default()
    };
    let rows = project_2d(&em, 8, &cfg).unwrap();
    assert_eq!(rows.len(), 8 * 15);
    let labels: std::collections::BTreeSet<usize> = rows.iter().map(|r| r.label).collect();
    assert_eq!(labels.len(), 8);
    let again = project_2d(&em, 8, &cfg).unwrap();
    assert_eq!(projection_csv(&rows), projection_csv(&again));
    assert!(projection_csv(&rows).starts_with("id,label,x,y\n"));
}

#[test]
fn embeddings_roundtrip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let em = random_matrix(7, 10, 3, 2);
    let path = dir.path().join("e.emb");
    em.save(&path).unwrap();
    let back = EmbeddingMatrix::load(&path).unwrap();
    assert_eq!(back.to_bytes().unwrap(), em.to_bytes().unwrap());
    std::fs::write(&path, b"not an embedding file").unwrap();
    assert!(EmbeddingMatrix::load(&path).is_err());
}
