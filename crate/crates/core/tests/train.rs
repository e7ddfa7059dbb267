mod support;

use std::collections::BTreeMap;

use partgroup::encode::ProjectionHead;
use partgroup::store::{decode_checkpoint, encode_checkpoint};
use partgroup::train::balance::{balance_dataset, Augmentation, BalanceConfig, InventoryPart, MeshInventory};
use partgroup::train::{train_projection_head, MaterialKey, TrainConfig, TrainSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use support::{balance_count_oracle, gradient_check, random_batch};

#[test]
fn small_head_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for seed in 0..5 {
        let head = ProjectionHead::init(12, 10, 6, seed);
        let (x, labels) = random_batch(&mut rng, 8, 12);
        let all: Vec<usize> = (0..head.param_count()).collect();
        let err = gradient_check(&head, &x, &labels, 0.07, &all, 1e-5, 1e-8);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn full_size_head_gradient_on_sampled_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let head = ProjectionHead::init(1152, 512, 128, 1);
    let (x, labels) = random_batch(&mut rng, 8, 1152);
    let n = head.param_count();
    let picks: Vec<usize> = (0..40).map(|_| rng.random_range(0..n)).collect();
    let err = gradient_check(&head, &x, &labels, 0.07, &picks, 1e-5, 1e-8);
    assert!(err < 1e-4, "{err}");
}

fn part(id: u32, material: u32, group: usize, views: usize) -> InventoryPart {
    InventoryPart { part_id: id, material_id: material, group, extra_views: views }
}

fn counts(samples: &[partgroup::train::SampleRef]) -> BTreeMap<u32, usize> {
    let mut out = BTreeMap::new();
    for s in samples {
        *out.entry(s.material_id).or_default() += 1;
    }
    out
}

#[test]
fn floor_prefers_instances_over_views() {
    // Material 0: one group of 3 instances, one of 2; each exemplar has 5 views.
    let inv = MeshInventory {
        mesh_id: "m".into(),
        parts: vec![part(0, 0, 0, 5), part(1, 0, 0, 5), part(2, 0, 0, 5), part(3, 0, 1, 5), part(4, 0, 1, 5)],
    };
    let out = balance_dataset(std::slice::from_ref(&inv), &BalanceConfig::default());
    assert_eq!(counts(&out), balance_count_oracle(&inv, 8, 100, 5.0));
    let aug: Vec<Augmentation> = out.iter().map(|s| s.augmentation).collect();
    let first_view = aug.iter().position(|a| matches!(a, Augmentation::ExtraView(_))).unwrap();
    assert_eq!(aug.iter().filter(|a| **a == Augmentation::ExtraInstance).count(), 3);
    assert!(aug[..first_view].iter().all(|a| !matches!(a, Augmentation::ExtraView(_))));
    assert_eq!(out.len(), 8);
}

#[test]
fn cap_and_ratio_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for trial in 0..200 {
        let mut parts = Vec::new();
        let mut id = 0;
        for m in 0..rng.random_range(1..5u32) {
            for _ in 0..rng.random_range(1..250) {
                let group = if rng.random_bool(0.3) { 0 } else { id as usize + 1 };
                parts.push(part(id, m, group + 1000 * m as usize, rng.random_range(0..4)));
                id += 1;
            }
        }
        let inv = MeshInventory { mesh_id: format!("m{trial}"), parts };
        let cfg = BalanceConfig { seed: trial, ..Default::default() };
        let out = balance_dataset(std::slice::from_ref(&inv), &cfg);
        let got = counts(&out);
        assert_eq!(got, balance_count_oracle(&inv, 8, 100, 5.0), "trial {trial}");
        if let (Some(lo), Some(hi)) = (got.values().min(), got.values().max()) {
            assert!(*hi <= 100 && *hi as f64 <= 5.0 * *lo as f64);
        }
    }
}

#[test]
fn training_separates_toy_clusters_and_checkpoints_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut samples = Vec::new();
    for m in 0..4u32 {
        let centre: Vec<f32> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        for p in 0..10 {
            samples.push(TrainSample {
                key: MaterialKey { mesh_id: "toy".into(), material_id: m },
                part_id: m * 10 + p,
                augmentation: Augmentation::Base,
                x: centre.iter().map(|c| c + rng.random_range(-0.3..0.3)).collect(),
            });
        }
    }
    let cfg = TrainConfig { steps: 300, batch_size: 16, learning_rate: 1e-3, hidden_dim: 32, output_dim: 8, ..Default::default() };
    let out = train_projection_head(&samples, &cfg).unwrap();
    let first: f64 = out.losses[..20].iter().map(|l| l.1).sum::<f64>() / 20.0;
    let last: f64 = out.losses[280..].iter().map(|l| l.1).sum::<f64>() / 20.0;
    // With 4 keys of 4 samples per batch the loss is bounded below by ln 3.
    assert!(last < first - 0.05 && last < 3f64.ln() + 0.02, "{first} -> {last}");
    let again = train_projection_head(&samples, &cfg).unwrap();
    assert_eq!(out.head, again.head);

    let bytes = encode_checkpoint(&out.head, cfg.seed, serde_json::json!({"steps": 300})).unwrap();
    let (header, head) = decode_checkpoint(&bytes).unwrap();
    let stored: Vec<f64> = out.head.params().map(|p| p as f32 as f64).collect();
    assert_eq!(head.params().collect::<Vec<_>>(), stored);
    assert_eq!(header.seed, cfg.seed);
}
