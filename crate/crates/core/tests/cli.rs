use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use tempfile::{tempdir, TempDir};
use vinseg::cli::run;
use vinseg::mask_ops::{BinaryMask, InstanceLabelMap};
use vinseg::pipeline::io::{load_labels, load_mask, save_labels, save_probability};

fn vinseg(args: &[&str]) -> i32 {
    run(std::iter::once("vinseg").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Three separated square blobs of probability 0.9, 0.7 and 0.6.
fn three_blobs(dir: &TempDir) -> PathBuf {
    let (h, w) = (24, 40);
    let mut prob = vec![0.05f32; h * w];
    for (x0, v) in [(2, 0.9), (15, 0.7), (28, 0.6)] {
        for y in 5..15 {
            for x in x0..x0 + 8 {
                prob[y * w + x] = v;
            }
        }
    }
    let path = dir.path().join("prob.png");
    save_probability(&path, &prob, h, w).unwrap();
    path
}

fn labels_file(dir: &TempDir, name: &str, f: impl Fn(usize, usize) -> u32) -> PathBuf {
    let (h, w) = (32, 32);
    let data = (0..h * w).map(|i| f(i / w, i % w)).collect();
    let l = InstanceLabelMap::relabeled(h, w, data).unwrap();
    let path = dir.path().join(name);
    save_labels(&path, &l).unwrap();
    path
}

fn two_squares(y: usize, x: usize) -> u32 {
    if (2..12).contains(&y) && (2..12).contains(&x) {
        1
    } else if (16..28).contains(&y) && (10..30).contains(&x) {
        2
    } else {
        0
    }
}

#[test]
fn eval_instance_on_identical_maps_is_perfect() {
    let dir = tempdir().unwrap();
    let gt = labels_file(&dir, "gt.png", two_squares);
    let out = dir.path().join("report.json");
    assert_eq!(
        vinseg(&[
            "eval-instance",
            "--pred",
            p(&gt),
            "--gt",
            p(&gt),
            "--out",
            p(&out)
        ]),
        0
    );
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let agg = &v["aggregate"];
    assert_eq!(agg["instance"]["f1"], 1.0);
    assert_eq!(agg["instance"]["precision"], 1.0);
    assert_eq!(agg["instance_dice"], 1.0);
    assert_eq!(agg["pixel"]["f1"], 1.0);
    assert_eq!(v["per_image"][0]["name"], "gt");
}

#[test]
fn eval_pixel_accepts_masks_and_instance_maps() {
    let dir = tempdir().unwrap();
    let gt = labels_file(&dir, "gt.png", two_squares);
    let pred = labels_file(&dir, "pred.png", |y, x| (two_squares(y, x) == 1) as u32);
    let out = dir.path().join("px.json");
    assert_eq!(
        vinseg(&[
            "eval-pixel",
            "--pred",
            p(&pred),
            "--gt",
            p(&gt),
            "--erode",
            "3",
            "--out",
            p(&out)
        ]),
        0
    );
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    // 100 of 340 foreground pixels predicted, no false positives
    let f1 = v["pixel"]["f1"].as_f64().unwrap();
    assert!((f1 - 2.0 * 100.0 / (100.0 + 340.0)).abs() < 1e-12, "{f1}");
    assert!(v["pixel_eroded"]["f1"].as_f64().unwrap() < 1.0);

    let mask_path = dir.path().join("mask.png");
    let bnd = dir.path().join("bnd.png");
    assert_eq!(
        vinseg(&["boundaries", "--labels", p(&gt), "--out", p(&bnd)]),
        0
    );
    let b = load_mask(&bnd).unwrap();
    assert!(b.count_ones() > 0);
    vinseg::pipeline::io::save_mask(
        &mask_path,
        &BinaryMask::from_fn(32, 32, |y, x| two_squares(y, x) > 0),
    )
    .unwrap();
    assert_eq!(
        vinseg(&["eval-pixel", "--pred", p(&mask_path), "--gt", p(&gt)]),
        0
    );
    // erosion needs an instance map as ground truth
    assert_eq!(
        vinseg(&[
            "eval-pixel",
            "--pred",
            p(&gt),
            "--gt",
            p(&mask_path),
            "--erode",
            "3"
        ]),
        1
    );
}

#[test]
fn erode_writes_labels_and_ignore_band() {
    let dir = tempdir().unwrap();
    let gt = labels_file(&dir, "gt.png", two_squares);
    let (el, ig) = (dir.path().join("el.png"), dir.path().join("ig.png"));
    assert_eq!(
        vinseg(&[
            "erode",
            "--labels",
            p(&gt),
            "--out-labels",
            p(&el),
            "--out-ignore",
            p(&ig)
        ]),
        0
    );
    let eroded = load_labels(&el).unwrap();
    let ignore = load_mask(&ig).unwrap();
    let orig = load_labels(&gt).unwrap();
    let near_fg = |y: isize, x: isize| {
        (-3..=3isize).any(|dy| {
            (-3..=3isize).any(|dx| {
                let (ny, nx) = (y + dy, x + dx);
                dy * dy + dx * dx <= 9
                    && (0..32).contains(&ny)
                    && (0..32).contains(&nx)
                    && orig.get(ny as usize, nx as usize) != 0
            })
        })
    };
    for i in 0..32 * 32 {
        let (o, e, band) = (orig.data()[i], eroded.data()[i], ignore.data()[i]);
        assert!(e == 0 || e == o);
        let expect = if o != 0 {
            e == 0
        } else {
            near_fg((i / 32) as isize, (i % 32) as isize)
        };
        assert_eq!(band == 1, expect, "pixel {i}");
    }
    assert_eq!(eroded.count(), 2);
}

#[test]
fn gradcheck_passes_for_the_toy_model() {
    assert_eq!(vinseg(&["gradcheck", "--model", "toy", "--seed", "7"]), 0);
    assert_eq!(vinseg(&["gradcheck", "--model", "resnet50"]), 1);
}

fn distinct_colours(path: &Path) -> BTreeSet<[u8; 3]> {
    image::open(path)
        .unwrap()
        .to_rgb8()
        .pixels()
        .map(|px| px.0)
        .filter(|c| *c != [0, 0, 0])
        .collect()
}

#[test]
fn instances_colours_every_blob_differently() {
    let dir = tempdir().unwrap();
    let prob = three_blobs(&dir);
    let (color, labels) = (dir.path().join("c.png"), dir.path().join("l.png"));
    assert_eq!(
        vinseg(&[
            "instances",
            "--prob",
            p(&prob),
            "--out-color",
            p(&color),
            "--out-labels",
            p(&labels)
        ]),
        0
    );
    assert_eq!(distinct_colours(&color).len(), 3);
    assert_eq!(load_labels(&labels).unwrap().count(), 3);
}

#[test]
fn repeated_runs_write_identical_files() {
    let dir = tempdir().unwrap();
    let prob = three_blobs(&dir);
    let outs: Vec<Vec<u8>> = (0..2)
        .map(|i| {
            let c = dir.path().join(format!("c{i}.png"));
            assert_eq!(
                vinseg(&["instances", "--prob", p(&prob), "--out-color", p(&c)]),
                0
            );
            std::fs::read(&c).unwrap()
        })
        .collect();
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(vinseg(&["instances", "--no-such-flag"]), 1);
    assert_eq!(vinseg(&["no-such-command"]), 1);
    assert_eq!(vinseg(&[]), 1);
    let dir = tempdir().unwrap();
    let prob = three_blobs(&dir);
    let c = dir.path().join("c.png");
    assert_eq!(
        vinseg(&[
            "instances",
            "--prob",
            p(&prob),
            "--out-color",
            p(&c),
            "--connectivity",
            "6"
        ]),
        1
    );
}

#[test]
fn help_exits_cleanly_for_every_subcommand() {
    assert_eq!(vinseg(&["--help"]), 0);
    for sub in [
        "synth",
        "tile",
        "augment",
        "boundaries",
        "erode",
        "train",
        "predict",
        "instances",
        "eval-pixel",
        "eval-instance",
        "gradcheck",
        "ablate",
    ] {
        assert_eq!(vinseg(&[sub, "--help"]), 0, "{sub}");
    }
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempdir().unwrap();
    let missing = dir.path().join("missing.png");
    assert_eq!(
        vinseg(&["eval-instance", "--pred", p(&missing), "--gt", p(&missing)]),
        2
    );
    let prob = three_blobs(&dir);
    // an 8-bit map where a 16-bit instance map is required
    assert_eq!(
        vinseg(&["eval-instance", "--pred", p(&prob), "--gt", p(&prob)]),
        2
    );
}

#[test]
fn config_file_values_yield_to_explicit_flags() {
    let dir = tempdir().unwrap();
    let prob = three_blobs(&dir);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"threshold": 0.8, "connectivity": 8}"#).unwrap();
    let count = |extra: &[&str]| {
        let l = dir.path().join("l.png");
        let c = dir.path().join("c.png");
        let mut args = vec![
            "instances",
            "--prob",
            p(&prob),
            "--out-color",
            p(&c),
            "--out-labels",
            p(&l),
        ];
        args.extend_from_slice(extra);
        assert_eq!(vinseg(&args), 0);
        load_labels(&l).unwrap().count()
    };
    assert_eq!(count(&[]), 3);
    assert_eq!(count(&["--config", p(&cfg)]), 1);
    assert_eq!(count(&["--config", p(&cfg), "--threshold", "0.65"]), 2);
    assert_eq!(count(&["--threshold", "0.65", "--config", p(&cfg)]), 2);

    std::fs::write(&cfg, r#"{"threshold": {"nested": 1}}"#).unwrap();
    let c = dir.path().join("c.png");
    assert_eq!(
        vinseg(&[
            "instances",
            "--prob",
            p(&prob),
            "--out-color",
            p(&c),
            "--config",
            p(&cfg)
        ]),
        1
    );
    std::fs::write(&cfg, "not json").unwrap();
    assert_eq!(
        vinseg(&[
            "instances",
            "--prob",
            p(&prob),
            "--out-color",
            p(&c),
            "--config",
            p(&cfg)
        ]),
        1
    );
}

#[test]
fn synth_tile_augment_train_predict_chain() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(
        vinseg(&[
            "synth",
            "--out",
            p(&data),
            "--train",
            "6",
            "--test",
            "1",
            "--height",
            "64",
            "--width",
            "64",
            "--count",
            "4",
            "--touching-pairs",
            "1",
            "--seed",
            "3",
        ]),
        0
    );
    let manifest = data.join("manifest.json");
    assert!(manifest.exists());
    let image = data.join("images/test_0000.png");
    let labels = data.join("labels/test_0000.png");

    let tiles = dir.path().join("tiles");
    assert_eq!(
        vinseg(&[
            "tile",
            "--image",
            p(&image),
            "--labels",
            p(&labels),
            "--size",
            "32",
            "--stride",
            "16",
            "--out",
            p(&tiles)
        ]),
        0
    );
    assert_eq!(std::fs::read_dir(&tiles).unwrap().count(), 2 * 9);

    let aug = dir.path().join("aug");
    assert_eq!(
        vinseg(&[
            "augment",
            "--image",
            p(&image),
            "--labels",
            p(&labels),
            "--out",
            p(&aug)
        ]),
        0
    );
    assert_eq!(std::fs::read_dir(&aug).unwrap().count(), 2 * 4);
    assert_eq!(
        vinseg(&[
            "augment",
            "--image",
            p(&image),
            "--labels",
            p(&labels),
            "--out",
            p(&aug),
            "--mode",
            "diagonal"
        ]),
        1
    );

    let run_dir = dir.path().join("run");
    assert_eq!(
        vinseg(&[
            "train",
            "--manifest",
            p(&manifest),
            "--out",
            p(&run_dir),
            "--epochs",
            "2",
            "--widths",
            "4,4,6,8",
            "--blocks",
            "1,1,1",
            "--val-fraction",
            "0.2",
        ]),
        0
    );
    for f in ["model.ckpt", "train_log.jsonl", "loss_curve.svg"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(run_dir.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(std::fs::read_to_string(run_dir.join("loss_curve.svg"))
        .unwrap()
        .starts_with("<svg"));

    let (seg, bnd) = (dir.path().join("seg.png"), dir.path().join("bnd.png"));
    assert_eq!(
        vinseg(&[
            "predict",
            "--checkpoint",
            p(&run_dir.join("model.ckpt")),
            "--image",
            p(&image),
            "--patch",
            "32",
            "--overlap",
            "8",
            "--out-seg",
            p(&seg),
            "--out-boundary",
            p(&bnd),
        ]),
        0
    );
    let probe = image::open(&seg).unwrap();
    assert_eq!((probe.width(), probe.height()), (64, 64));
    let c = dir.path().join("c.png");
    assert_eq!(
        vinseg(&[
            "instances",
            "--prob",
            p(&seg),
            "--boundary",
            p(&bnd),
            "--boundary-subtraction",
            "true",
            "--out-color",
            p(&c)
        ]),
        0
    );
}
