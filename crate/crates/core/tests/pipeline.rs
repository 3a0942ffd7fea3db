use std::collections::{BTreeSet, VecDeque};

use image::{GrayImage, ImageBuffer, Luma, RgbImage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::tempdir;
use vinseg::mask_ops::{connected_components, BinaryMask, Connectivity, InstanceLabelMap, Sample};
use vinseg::model::{Model, ModelConfig};
use vinseg::optim::{OptimizerConfig, SgdConfig};
use vinseg::pipeline::io::{load_labels, load_sample, save_labels, save_sample};
use vinseg::pipeline::synth::place_rectangles;
use vinseg::pipeline::*;
use vinseg::tensor::{Graph, Shape, Tensor};
use vinseg::Error;

fn random_sample(seed: u64, h: usize, w: usize) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img: Vec<f32> = (0..3 * h * w)
        .map(|_| rng.random_range(0..=255u8) as f32 / 255.0)
        .collect();
    let raw: Vec<u32> = (0..h * w)
        .map(|_| {
            if rng.random_bool(0.3) {
                rng.random_range(1..6)
            } else {
                0
            }
        })
        .collect();
    let labels = InstanceLabelMap::relabeled(h, w, raw).unwrap();
    Sample::from_labels(Tensor::new(Shape::new(1, 3, h, w), img).unwrap(), labels, 0).unwrap()
}

#[test]
fn sample_round_trip_is_bit_identical() {
    let dir = tempdir().unwrap();
    for seed in 0..5 {
        let s = random_sample(seed, 17, 23);
        let (ip, lp) = (dir.path().join("i.png"), dir.path().join("l.png"));
        save_sample(&s, &ip, &lp).unwrap();
        let back = load_sample(&ip, &lp).unwrap();
        assert_eq!(back, s);
    }
}

#[test]
fn loaded_ids_are_relabeled_contiguously() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("l.png");
    let raw: Vec<u16> = vec![0, 3, 3, 0, 7, 7, 0, 0, 3];
    ImageBuffer::<Luma<u16>, _>::from_raw(3, 3, raw.clone())
        .unwrap()
        .save(&p)
        .unwrap();
    let l = load_labels(&p).unwrap();
    assert_eq!(l.count(), 2);
    let want: Vec<u32> = raw
        .iter()
        .map(|&v| match v {
            3 => 1,
            7 => 2,
            _ => 0,
        })
        .collect();
    assert_eq!(l.data(), &want[..]);
}

#[test]
fn format_errors_are_distinct() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    GrayImage::new(4, 4).save(d.join("grey8.png")).unwrap();
    ImageBuffer::<Luma<u16>, _>::from_raw(4, 4, vec![0u16; 16])
        .unwrap()
        .save(d.join("labels4.png"))
        .unwrap();
    ImageBuffer::<Luma<u16>, _>::from_raw(5, 4, vec![0u16; 20])
        .unwrap()
        .save(d.join("labels5.png"))
        .unwrap();
    RgbImage::new(4, 4).save(d.join("rgb.png")).unwrap();
    std::fs::write(d.join("junk.png"), b"not an image").unwrap();

    assert!(matches!(
        load_labels(&d.join("grey8.png")),
        Err(Error::BitDepth { .. })
    ));
    assert!(matches!(
        vinseg::pipeline::io::load_image(&d.join("labels4.png")),
        Err(Error::BitDepth { .. })
    ));
    assert!(matches!(
        load_sample(&d.join("rgb.png"), &d.join("labels5.png")),
        Err(Error::Extent(_))
    ));
    assert!(matches!(
        load_labels(&d.join("junk.png")),
        Err(Error::Image { .. })
    ));
    assert!(matches!(
        load_labels(&d.join("missing.png")),
        Err(Error::Io { .. })
    ));
    assert!(load_sample(&d.join("rgb.png"), &d.join("labels4.png")).is_ok());
}

#[test]
fn manifest_round_trip_and_validation() {
    let dir = tempdir().unwrap();
    let mut m = Manifest::new(128, 9, dir.path());
    for (i, split) in [Split::Train, Split::Val, Split::Test]
        .into_iter()
        .enumerate()
    {
        m.records.push(Record {
            image: format!("images/{i}.png").into(),
            labels: format!("labels/{i}.png").into(),
            split,
        });
    }
    let p = dir.path().join("manifest.json");
    m.save(&p).unwrap();
    assert_eq!(Manifest::load(&p).unwrap(), m);

    let text = std::fs::read_to_string(&p).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["patch_size"], 128);
    assert_eq!(v["records"][1]["split"], "val");

    let mut dup = m.clone();
    dup.records[2].image = dup.records[0].image.clone();
    dup.save(&p).unwrap();
    assert!(matches!(Manifest::load(&p), Err(Error::Data(_))));

    std::fs::write(&p, r#"{"patch_size":1,"seed":0,"records":[],"extra":1}"#).unwrap();
    assert!(matches!(Manifest::load(&p), Err(Error::Data(_))));
}

#[test]
fn manifest_summary_counts_instances_and_pixels() {
    let dir = tempdir().unwrap();
    let cfg = DatasetConfig {
        scene: SceneConfig {
            height: 64,
            width: 64,
            count: 5,
            touching_pairs: 1,
            ..Default::default()
        },
        train: 3,
        val: 1,
        test: 2,
        seed: 4,
    };
    let m = synth_dataset(dir.path(), &cfg).unwrap();
    let loaded = Manifest::load(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(loaded.records, m.records);
    let summary = loaded.summarize().unwrap();
    let samples = synth_samples(&cfg).unwrap();
    for s in &summary {
        let of_split: Vec<&Sample> = samples
            .iter()
            .filter(|(sp, _)| *sp == s.split)
            .map(|(_, x)| x)
            .collect();
        assert_eq!(s.images, of_split.len());
        assert_eq!(s.instances, 5 * of_split.len() as u64);
        let fg: usize = of_split.iter().map(|x| x.seg.count_ones()).sum();
        assert_eq!(s.foreground_pixels, fg as u64);
    }
}

#[test]
fn empty_scene_has_no_instances() {
    let cfg = SceneConfig {
        count: 0,
        touching_pairs: 0,
        ..Default::default()
    };
    let s = synth_scene(&cfg, 1).unwrap();
    assert_eq!(s.labels.count(), 0);
    assert_eq!(s.seg.count_ones(), 0);
}

#[test]
fn separated_scenes_have_one_component_per_instance() {
    for seed in 0..30 {
        let cfg = SceneConfig {
            count: 12,
            touching_pairs: 0,
            ..Default::default()
        };
        let s = synth_scene(&cfg, seed).unwrap();
        assert_eq!(s.labels.count(), 12);
        for conn in [Connectivity::Four, Connectivity::Eight] {
            assert_eq!(
                connected_components(&s.seg, conn).count(),
                12,
                "seed {seed}"
            );
        }
    }
}

/// Distinct id pairs that are 4-adjacent somewhere, by scanning neighbours.
fn adjacent_pairs(l: &InstanceLabelMap) -> BTreeSet<(u32, u32)> {
    let (h, w) = (l.height(), l.width());
    let mut out = BTreeSet::new();
    for y in 0..h {
        for x in 0..w {
            let a = l.get(y, x);
            for (ny, nx) in [(y + 1, x), (y, x + 1)] {
                if ny < h && nx < w {
                    let b = l.get(ny, nx);
                    if a != 0 && b != 0 && a != b {
                        out.insert((a.min(b), a.max(b)));
                    }
                }
            }
        }
    }
    out
}

#[test]
fn touching_pairs_share_a_full_edge() {
    for seed in 0..30 {
        let cfg = SceneConfig {
            count: 10,
            touching_pairs: 3,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (labels, rects) = place_rectangles(&cfg, &mut rng).unwrap();
        let pairs = adjacent_pairs(&labels);
        assert_eq!(
            pairs,
            BTreeSet::from([(1, 2), (3, 4), (5, 6)]),
            "seed {seed}"
        );
        for p in 0..3 {
            let (a, b) = (rects[2 * p], rects[2 * p + 1]);
            let horizontal = a.y == b.y && a.h == b.h && (a.x + a.w == b.x || b.x + b.w == a.x);
            let vertical = a.x == b.x && a.w == b.w && (a.y + a.h == b.y || b.y + b.h == a.y);
            assert!(horizontal || vertical, "seed {seed} pair {p}: {a:?} {b:?}");
        }
        let s = synth_scene(&cfg, seed).unwrap();
        assert_eq!(adjacent_pairs(&s.labels).len(), 3);
    }
}

#[test]
fn synthesized_targets_are_consistent() {
    for seed in 0..10 {
        let s = synth_scene(&SceneConfig::default(), seed).unwrap();
        for (i, &id) in s.labels.data().iter().enumerate() {
            assert_eq!(s.seg.data()[i], (id > 0) as u8);
            if s.boundary.data()[i] == 1 {
                assert_eq!(s.seg.data()[i], 1);
            }
        }
        assert_eq!(s, synth_scene(&SceneConfig::default(), seed).unwrap());
        assert!(s.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn infeasible_scenes_are_rejected() {
    let crowded = SceneConfig {
        height: 40,
        width: 40,
        count: 40,
        touching_pairs: 0,
        max_attempts: 50,
        ..Default::default()
    };
    assert!(matches!(synth_scene(&crowded, 0), Err(Error::Config(_))));
    let too_many_pairs = SceneConfig {
        count: 3,
        touching_pairs: 2,
        ..Default::default()
    };
    assert!(synth_scene(&too_many_pairs, 0).is_err());
}

fn small_model(branches: usize, seed: u64) -> Model {
    let mut cfg = if branches == 2 {
        ModelConfig::boundary_aware(seed)
    } else {
        ModelConfig::resfcn(seed)
    };
    cfg.backbone.stem_channels = 4;
    cfg.backbone.stage_channels = [4, 6, 8];
    cfg.backbone.blocks_per_stage = [1, 1, 1];
    Model::new(cfg).unwrap()
}

fn random_image(seed: u64, h: usize, w: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(
        Shape::new(1, 3, h, w),
        (0..3 * h * w).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
    .unwrap()
}

#[test]
fn single_window_prediction_equals_direct_forward() {
    let model = small_model(2, 3);
    let img = random_image(5, 64, 64);
    let probs = predict(
        &model,
        &img,
        &PredictConfig {
            patch: 64,
            overlap: 16,
        },
    )
    .unwrap();
    let mut g = Graph::new();
    let x = g.leaf(img, false);
    let p = model.forward(&mut g, x).unwrap();
    assert_eq!(probs.seg, g.value(p.seg).data());
    assert_eq!(
        probs.boundary.as_deref(),
        Some(g.value(p.boundary.unwrap()).data())
    );
}

#[test]
fn zero_heads_give_one_half_under_any_tiling() {
    let mut model = small_model(2, 4);
    let names: Vec<String> = model
        .param_names()
        .iter()
        .filter(|n| n.starts_with("head."))
        .cloned()
        .collect();
    for n in names {
        model.param_mut(&n).unwrap().data_mut().fill(0.0);
    }
    let img = random_image(6, 96, 160);
    for (patch, overlap) in [(32, 0), (64, 16), (64, 40), (96, 31)] {
        let p = predict(&model, &img, &PredictConfig { patch, overlap }).unwrap();
        assert!(
            p.seg.iter().all(|&v| v == 0.5),
            "patch {patch} overlap {overlap}"
        );
        assert!(p.boundary.unwrap().iter().all(|&v| v == 0.5));
    }
}

#[test]
fn prediction_extent_matches_input() {
    let model = small_model(1, 5);
    for (h, w, patch, overlap) in [(64, 64, 32, 8), (96, 70, 64, 13), (33, 100, 32, 31)] {
        let img = random_image(7, h, w);
        let p = predict(&model, &img, &PredictConfig { patch, overlap }).unwrap();
        assert_eq!((p.height, p.width, p.seg.len()), (h, w, h * w));
        assert!(p.boundary.is_none());
    }
    let img = random_image(7, 20, 64);
    assert!(predict(
        &model,
        &img,
        &PredictConfig {
            patch: 32,
            overlap: 0
        }
    )
    .is_err());
    assert!(predict(
        &model,
        &random_image(7, 64, 64),
        &PredictConfig {
            patch: 32,
            overlap: 32
        }
    )
    .is_err());
}

#[test]
fn overlapping_tiles_agree_with_whole_image_pass() {
    // A briefly trained model, so the maps are not flat.
    let scene = SceneConfig {
        height: 256,
        width: 256,
        count: 40,
        touching_pairs: 4,
        ..Default::default()
    };
    let samples: Vec<Sample> = (0..4).map(|s| synth_scene(&scene, s).unwrap()).collect();
    let train_set = patches(&samples[..3], 128).unwrap();
    let cfg = TrainConfig {
        max_epochs: 2,
        augment: Augmentation::None,
        ..Default::default()
    };
    let mut mc = ModelConfig::boundary_aware(1);
    mc.backbone.stem_channels = 8;
    mc.backbone.stage_channels = [8, 16, 16];
    mc.backbone.blocks_per_stage = [1, 1, 1];
    let out = train(&mc, &cfg, &train_set[..10], &train_set[10..], |_| {}).unwrap();
    let img = &samples[3].image;
    let whole = predict(
        &out.model,
        img,
        &PredictConfig {
            patch: 256,
            overlap: 0,
        },
    )
    .unwrap();
    let tiled = predict(
        &out.model,
        img,
        &PredictConfig {
            patch: 128,
            overlap: 32,
        },
    )
    .unwrap();
    let spread = whole.seg.iter().cloned().fold(0.0f32, f32::max)
        - whole.seg.iter().cloned().fold(1.0f32, f32::min);
    assert!(spread > 0.1, "model output is flat ({spread})");
    let mad: f64 = whole
        .seg
        .iter()
        .zip(&tiled.seg)
        .map(|(a, b)| (a - b).abs() as f64)
        .sum::<f64>()
        / whole.seg.len() as f64;
    assert!(mad < 0.05, "mean absolute difference {mad}");
}

fn probs(h: usize, w: usize, seg: Vec<f32>) -> Probabilities {
    Probabilities {
        height: h,
        width: w,
        seg,
        boundary: None,
    }
}

#[test]
fn extraction_cases() {
    // two bumps with a 0.3 valley between them
    let row = [0.1, 0.8, 0.9, 0.3, 0.9, 0.6, 0.0];
    let p = probs(1, 7, row.to_vec());
    assert_eq!(
        extract_instances(&p, &ExtractConfig::default())
            .unwrap()
            .count(),
        2
    );
    let p = probs(3, 3, vec![0.49; 9]);
    assert_eq!(
        extract_instances(&p, &ExtractConfig::default())
            .unwrap()
            .count(),
        0
    );
    // threshold is inclusive
    let p = probs(1, 1, vec![0.5]);
    assert_eq!(
        extract_instances(&p, &ExtractConfig::default())
            .unwrap()
            .count(),
        1
    );
}

#[test]
fn boundary_subtraction_splits_touching_blobs() {
    let seg = vec![0.9f32; 7];
    let mut b = vec![0.1f32; 7];
    b[3] = 0.8;
    let p = Probabilities {
        height: 1,
        width: 7,
        seg,
        boundary: Some(b),
    };
    assert_eq!(
        extract_instances(&p, &ExtractConfig::default())
            .unwrap()
            .count(),
        1
    );
    let cfg = ExtractConfig {
        boundary_subtraction: true,
        ..Default::default()
    };
    assert_eq!(extract_instances(&p, &cfg).unwrap().count(), 2);
    let no_boundary = probs(1, 7, vec![0.9; 7]);
    assert!(extract_instances(&no_boundary, &cfg).is_err());
}

/// Threshold, then breadth-first flood fill from every unvisited foreground
/// pixel in row-major order.
fn flood_fill_oracle(p: &[f32], h: usize, w: usize, t: f32, eight: bool) -> Vec<u32> {
    let mut out = vec![0u32; h * w];
    let mut next = 0;
    for start in 0..h * w {
        if p[start] < t || out[start] != 0 {
            continue;
        }
        next += 1;
        out[start] = next;
        let mut q = VecDeque::from([start]);
        while let Some(i) = q.pop_front() {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    if (dy == 0 && dx == 0) || (!eight && dy != 0 && dx != 0) {
                        continue;
                    }
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if p[j] >= t && out[j] == 0 {
                        out[j] = next;
                        q.push_back(j);
                    }
                }
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn extraction_equals_threshold_then_flood_fill(
        h in 1usize..24,
        w in 1usize..24,
        seed in any::<u64>(),
        t in 0.05f32..0.95,
        eight in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f32> = (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect();
        let cfg = ExtractConfig {
            threshold: t,
            connectivity: if eight { 8 } else { 4 },
            ..Default::default()
        };
        let got = extract_instances(&probs(h, w, p.clone()), &cfg).unwrap();
        // Both label in first-encounter order, so the ids agree exactly.
        prop_assert_eq!(got.data(), &flood_fill_oracle(&p, h, w, t, eight)[..]);
    }
}

fn tiny_set(n: usize, seed: u64) -> Vec<Sample> {
    let scene = SceneConfig {
        height: 64,
        width: 64,
        count: 4,
        touching_pairs: 1,
        ..Default::default()
    };
    (0..n as u64)
        .map(|s| synth_scene(&scene, seed * 1000 + s).unwrap())
        .collect()
}

fn tiny_model_config(branches: usize) -> ModelConfig {
    small_model(branches, 2).config().clone()
}

#[test]
fn training_is_deterministic() {
    let data = tiny_set(10, 1);
    let cfg = TrainConfig {
        max_epochs: 2,
        augment: Augmentation::Random,
        ..Default::default()
    };
    let run = || train(&tiny_model_config(2), &cfg, &data[..8], &data[8..], |_| {}).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.checkpoint_bytes().unwrap(), b.checkpoint_bytes().unwrap());
    let losses = |o: &TrainOutcome| -> Vec<(f64, f64)> {
        o.log.iter().map(|e| (e.train_loss, e.val_loss)).collect()
    };
    assert_eq!(losses(&a), losses(&b));
}

#[test]
fn training_reduces_the_loss() {
    let data = tiny_set(24, 2);
    let cfg = TrainConfig {
        max_epochs: 6,
        patience: 10,
        augment: Augmentation::None,
        optimizer: OptimizerConfig::Nadam(vinseg::optim::NadamConfig {
            lr: 2e-3,
            ..Default::default()
        }),
        ..Default::default()
    };
    let out = train(
        &tiny_model_config(2),
        &cfg,
        &data[..20],
        &data[20..],
        |_| {},
    )
    .unwrap();
    let (first, last) = (out.log[0].train_loss, out.log.last().unwrap().train_loss);
    assert!(last < first, "train loss {first} -> {last}");
    assert_eq!(out.log.len(), 6);
}

#[test]
fn early_stopping_fires_on_a_stalled_run() {
    let data = tiny_set(12, 3);
    let cfg = TrainConfig {
        max_epochs: 40,
        patience: 2,
        augment: Augmentation::None,
        optimizer: OptimizerConfig::Sgd(SgdConfig {
            lr: 1e-30,
            momentum: 0.0,
        }),
        ..Default::default()
    };
    let mut seen = 0;
    let out = train(
        &tiny_model_config(1),
        &cfg,
        &data[..10],
        &data[10..],
        |_| seen += 1,
    )
    .unwrap();
    assert!(out.stopped_early);
    assert!(out.log.len() < 40);
    assert_eq!(seen, out.log.len());
    let best = out.log[out.best_epoch - 1].val_loss;
    assert!(out.log.iter().all(|e| e.val_loss >= best));
    assert!(out.log[out.best_epoch..].iter().all(|e| e.val_loss >= best));
}

#[test]
fn training_errors() {
    let data = tiny_set(3, 4);
    let cfg = TrainConfig::default();
    let mc = tiny_model_config(2);
    assert!(matches!(
        train(&mc, &cfg, &[], &data, |_| {}),
        Err(Error::Data(_))
    ));
    assert!(matches!(
        train(&mc, &cfg, &data, &[], |_| {}),
        Err(Error::Data(_))
    ));
    let bad = TrainConfig {
        val_fraction: 1.0,
        ..Default::default()
    };
    assert!(matches!(
        train(&mc, &bad, &data, &data, |_| {}),
        Err(Error::Config(_))
    ));
    let diverging = TrainConfig {
        max_epochs: 5,
        optimizer: OptimizerConfig::Sgd(SgdConfig {
            lr: 1e4,
            momentum: 0.9,
        }),
        augment: Augmentation::None,
        ..Default::default()
    };
    let err = train(&mc, &diverging, &data[..2], &data[2..], |_| {}).unwrap_err();
    assert!(err.is_numeric(), "{err}");
}

#[test]
fn hold_out_splits_by_fraction() {
    let data = tiny_set(20, 5);
    let (tr, va) = hold_out(data.clone(), 0.1, 7).unwrap();
    assert_eq!((tr.len(), va.len()), (18, 2));
    let (tr2, va2) = hold_out(data.clone(), 0.1, 7).unwrap();
    assert_eq!((tr, va), (tr2, va2));
    let (_, va3) = hold_out(data, 0.01, 7).unwrap();
    assert_eq!(va3.len(), 1);
    assert!(hold_out(tiny_set(1, 6), 0.1, 0).is_err());
}

#[test]
fn oversized_samples_are_cut_into_patches() {
    let scene = SceneConfig {
        height: 96,
        width: 160,
        count: 3,
        touching_pairs: 0,
        ..Default::default()
    };
    let s = synth_scene(&scene, 1).unwrap();
    let p = patches(std::slice::from_ref(&s), 64).unwrap();
    assert_eq!(p.len(), 2 * 3);
    assert!(p.iter().all(|x| x.height() == 64 && x.width() == 64));
    assert_eq!(patches(&[s], 96).unwrap().len(), 2);
}

#[test]
fn ablation_writes_every_artifact() {
    let dir = tempdir().unwrap();
    let cfg = DatasetConfig {
        scene: SceneConfig {
            height: 64,
            width: 64,
            count: 4,
            touching_pairs: 1,
            ..Default::default()
        },
        train: 6,
        val: 0,
        test: 2,
        seed: 1,
    };
    let m = synth_dataset(&dir.path().join("data"), &cfg).unwrap();
    let ab = AblationConfig {
        seeds: vec![3],
        backbone: tiny_model_config(1).backbone,
        train: TrainConfig {
            max_epochs: 1,
            augment: Augmentation::None,
            ..Default::default()
        },
        ..Default::default()
    };
    let out = dir.path().join("out");
    let rep = ablate(&m, &ab, Some(&out), |_, _, _| {}).unwrap();
    assert_eq!(rep.seeds.len(), 1);
    assert_eq!(rep.seeds[0].resfcn.branches, 1);
    assert_eq!(rep.seeds[0].boundary_aware.branches, 2);
    for f in [
        "ablation.json",
        "resfcn_seed3.ckpt",
        "b-resfcn_seed3.ckpt",
        "resfcn_seed3.log.jsonl",
        "b-resfcn_seed3.metrics.json",
        "b-resfcn_seed3/test_0001.labels.png",
        "resfcn_seed3/test_0000.seg.png",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let ck = vinseg::checkpoint::load(&out.join("b-resfcn_seed3.ckpt")).unwrap();
    assert_eq!(ck.model.config().branches, 2);
    let log = std::fs::read_to_string(out.join("resfcn_seed3.log.jsonl")).unwrap();
    let line: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for k in ["epoch", "train_loss", "val_loss", "lr", "wall_ms"] {
        assert!(line.get(k).is_some(), "log lacks {k}");
    }
}

#[test]
fn predicted_labels_round_trip_through_png() {
    let dir = tempdir().unwrap();
    let mask = BinaryMask::from_fn(20, 20, |y, x| (y / 5 + x / 5) % 2 == 0);
    let l = connected_components(&mask, Connectivity::Four);
    let p = dir.path().join("l.png");
    save_labels(&p, &l).unwrap();
    assert_eq!(load_labels(&p).unwrap(), l);
}
