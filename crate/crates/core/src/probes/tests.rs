use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::encoders::{Backbone, BackboneSource, BackboneSpec};
use crate::rng::SeedStream;
use crate::sim::{ProbeLabels, Reach, SimConfig, FREE_SPACE_CLASSES};

fn micro_cfg(scenes: [usize; 3], frames: [usize; 3]) -> ProbeDataConfig {
    let sim = SimConfig { image_size: 16, ..SimConfig::object_nav(6, 6, 4, 1) };
    ProbeDataConfig { sim, scenes, frames, seed: 5 }
}

fn backbone(source: BackboneSource) -> Backbone {
    let mut spec = BackboneSpec::stub("b", source, 12, 3);
    spec.image_size = 16;
    Backbone::new(&spec).unwrap()
}

fn informative() -> Backbone {
    backbone(BackboneSource::StubInformative { seed: 1, categories: 4 })
}

/// Labels drawn at random; features are a noisy +-1 copy of the presence labels.
fn separable(n: [usize; 3], k: usize, seed: u64) -> ProbeDataset {
    let mut rng = SeedStream::new(seed).rng();
    let total: usize = n.iter().sum();
    let mut features = Vec::new();
    let mut records = Vec::new();
    for i in 0..total {
        let presence: Vec<u8> = (0..k).map(|_| rng.gen_bool(0.3) as u8).collect();
        features.extend(presence.iter().map(|&p| (2.0 * p as f32 - 1.0) + rng.gen_range(-0.3..0.3)));
        let split = if i < n[0] {
            Split::Train
        } else if i < n[0] + n[1] {
            Split::Val
        } else {
            Split::Test
        };
        let labels = ProbeLabels {
            localization: vec![0; 9 * k],
            free_space: (i % FREE_SPACE_CLASSES) as u8,
            reachability: vec![Reach::Absent; k],
            presence,
        };
        records.push(ProbeRecord { split, labels, reach_mask: vec![0; k] });
    }
    let manifest = ProbeManifest {
        backbone: "synthetic".into(),
        backbone_hash: String::new(),
        pooling: Pooling::Average,
        dim: k,
        category_count: k,
        records: total,
        dtype: "f32-le".into(),
        config: micro_cfg([1, 1, 1], [1, 1, 1]),
    };
    let splits = SplitRanges {
        train: [0, n[0]],
        val: [n[0], n[0] + n[1]],
        test: [n[0] + n[1], total],
        scene_seeds: [vec![], vec![], vec![]],
    };
    ProbeDataset { manifest, splits, features, records }
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn regeneration_is_byte_identical() {
    let cfg = micro_cfg([2, 1, 1], [1, 1, 1]);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_probe_dataset(&cfg, &informative(), Pooling::Average, 1).unwrap().write(a.path()).unwrap();
    generate_probe_dataset(&cfg, &informative(), Pooling::Average, 3).unwrap().write(b.path()).unwrap();
    assert_eq!(dir_bytes(a.path()), dir_bytes(b.path()));
    let names: Vec<String> = dir_bytes(a.path()).into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, ["features.bin", "labels.bin", "manifest.json", "splits.json"]);
}

#[test]
fn full_config_has_published_record_counts() {
    let mut cfg = ProbeDataConfig::full(1);
    cfg.sim.image_size = 16;
    assert_eq!((cfg.scenes, cfg.frames), ([60, 15, 15], [100, 50, 50]));
    assert_eq!(cfg.sim.category_count, 52);
    let mut spec = BackboneSpec::stub("noise", BackboneSource::StubNoise { seed: 0 }, 4, 3);
    spec.image_size = 16;
    let ds = generate_probe_dataset(&cfg, &Backbone::new(&spec).unwrap(), Pooling::Average, 2).unwrap();
    assert_eq!(ds.indices(Split::Train).len(), 6000);
    assert_eq!(ds.indices(Split::Val).len(), 750);
    assert_eq!(ds.indices(Split::Test).len(), 750);
    let seeds = &ds.splits.scene_seeds;
    assert!(seeds[0].iter().all(|s| !seeds[1].contains(s) && !seeds[2].contains(s)));
}

#[test]
fn reachability_is_balanced_per_category_and_split() {
    let ds = generate_probe_dataset(&micro_cfg([6, 2, 2], [30, 20, 20]), &informative(), Pooling::Average, 1).unwrap();
    let mut kept = 0;
    for split in Split::ALL {
        for cat in 0..4 {
            let (mut pos, mut neg) = (0, 0);
            for r in &ds.records[ds.indices(split)] {
                if r.reach_mask[cat] == 1 {
                    match r.labels.reachability[cat] {
                        Reach::Reachable => pos += 1,
                        Reach::VisibleNotReachable => neg += 1,
                        Reach::Absent => panic!("absent category in the balanced set"),
                    }
                }
            }
            assert_eq!(pos, neg, "{split:?} category {cat}");
            kept += pos;
        }
    }
    assert!(kept > 0);
}

#[test]
fn too_many_frames_per_scene_is_an_error() {
    // A 6x6 room with 6 objects has at most 30 free cells, 36 poses each.
    let err = generate_probe_dataset(&micro_cfg([1, 1, 1], [30 * 36 + 1, 1, 1]), &informative(), Pooling::Average, 1);
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn pooling_must_fit_the_task() {
    let ds = separable([20, 5, 5], 3, 0);
    let cfg = ProbeTrainConfig::new(0);
    assert!(matches!(train_probe(ProbeTask::Localization, &ds, &cfg), Err(Error::Config(_))));
    let grid = generate_probe_dataset(&micro_cfg([1, 1, 1], [2, 2, 2]), &informative(), Pooling::Grid, 1).unwrap();
    assert_eq!(grid.manifest.dim, 12 * 9);
    assert!(matches!(train_probe(ProbeTask::Presence, &grid, &cfg), Err(Error::Config(_))));
    assert!(generate_probe_dataset(&micro_cfg([1, 1, 1], [1, 1, 1]), &informative(), Pooling::Attention, 1).is_err());
}

#[test]
fn presence_probe_fits_separable_features() {
    let ds = separable([2000, 200, 200], 6, 3);
    let cfg = ProbeTrainConfig { max_epochs: 200, ..ProbeTrainConfig::new(1) };
    let (model, summary) = train_probe(ProbeTask::Presence, &ds, &cfg).unwrap();
    assert!(summary.epochs <= 200);
    assert!(eval_probe(&model, &ds, Split::Train).unwrap() > 0.99);
    assert!(eval_probe(&model, &ds, Split::Test).unwrap() > 0.99);
}

#[test]
fn recipe_defaults() {
    let cfg = ProbeTrainConfig::new(0);
    assert_eq!((cfg.batch_size, cfg.lr, cfg.max_epochs, cfg.patience), (128, 0.001, 500, 20));
}

#[test]
fn localization_shares_one_kernel_across_cells() {
    let m = ProbeModel::new(ProbeTask::Localization, 2048 * 9, 52, 0).unwrap();
    let shapes: Vec<Vec<usize>> = m.params.ids().map(|id| m.params.shape(id).to_vec()).collect();
    assert_eq!(shapes, [vec![52, 2048], vec![52]]);
    assert_eq!(m.params.count(), 52 * 2048 + 52);
    let presence = ProbeModel::new(ProbeTask::Presence, 2048, 52, 0).unwrap();
    assert_eq!(presence.params.count(), 52 * 2048 + 52);
    assert_eq!(ProbeModel::new(ProbeTask::FreeSpace, 2048, 52, 0).unwrap().layer.out, 11);
}

#[test]
fn localization_cells_see_only_their_features() {
    let m = ProbeModel::new(ProbeTask::Localization, 4 * 9, 3, 2).unwrap();
    let mut x = vec![0.0; 36];
    for c in 0..4 {
        x[c * 9 + 5] = 1.0 + c as f64;
    }
    let z = m.logits(&x);
    let cell5 = m.layer.forward(&m.params, &[1.0, 2.0, 3.0, 4.0]);
    let empty = m.layer.forward(&m.params, &[0.0; 4]);
    for cell in 0..9 {
        let want = if cell == 5 { &cell5 } else { &empty };
        assert_eq!(&z[cell * 3..cell * 3 + 3], &want[..]);
    }
}

#[test]
fn free_space_probabilities_sum_to_one() {
    let m = ProbeModel::new(ProbeTask::FreeSpace, 5, 3, 0).unwrap();
    let p = m.probabilities(&[0.3, -1.0, 2.0, 0.0, 4.0]);
    assert_eq!(p.len(), 11);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn f1_and_accuracy_edge_cases() {
    let truth = [true, false, false, true, false];
    assert_eq!(micro_f1(&truth, &truth).unwrap(), 1.0);
    assert_eq!(accuracy(&truth, &truth).unwrap(), 1.0);
    assert_eq!(micro_f1(&[false; 5], &truth).unwrap(), 0.0);
    assert!(matches!(micro_f1(&[], &[]), Err(Error::Empty(_))));
    assert!(matches!(accuracy::<u8>(&[], &[]), Err(Error::Empty(_))));
    assert!(micro_f1(&[true], &[true, false]).is_err());
}

#[test]
fn f1_matches_confusion_table() {
    // TP 3, FP 2, FN 1, TN 4.
    let pred = [true, true, true, true, true, false, false, false, false, false];
    let truth = [true, true, true, false, false, true, false, false, false, false];
    let (tp, fp, fneg) = (3.0, 2.0, 1.0);
    assert!((micro_f1(&pred, &truth).unwrap() - 2.0 * tp / (2.0 * tp + fp + fneg)).abs() < 1e-15);
    assert!((accuracy(&pred, &truth).unwrap() - 0.7).abs() < 1e-15);
}

#[test]
fn empty_split_is_an_error() {
    let ds = separable([10, 5, 0], 3, 0);
    let m = ProbeModel::new(ProbeTask::Presence, 3, 3, 0).unwrap();
    assert!(matches!(eval_probe(&m, &ds, Split::Test), Err(Error::Empty(_))));
}

#[test]
fn bias_only_chance_on_balanced_reachability_is_one_half() {
    let ds = generate_probe_dataset(&micro_cfg([6, 2, 2], [30, 20, 20]), &informative(), Pooling::Average, 1).unwrap();
    assert_eq!(chance_score(ProbeTask::Reachability, &ds, Split::Train).unwrap(), 0.5);
    let fs = chance_score(ProbeTask::FreeSpace, &ds, Split::Train).unwrap();
    let mut counts = [0usize; FREE_SPACE_CLASSES];
    for r in &ds.records[ds.indices(Split::Train)] {
        counts[r.labels.free_space as usize] += 1;
    }
    assert_eq!(fs, *counts.iter().max().unwrap() as f64 / ds.indices(Split::Train).len() as f64);
}

#[test]
fn dataset_round_trips_and_training_leaves_files_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_probe_dataset(&micro_cfg([3, 1, 1], [10, 10, 10]), &informative(), Pooling::Average, 1).unwrap();
    ds.write(dir.path()).unwrap();
    let before = dir_bytes(dir.path());
    let read = ProbeDataset::read(dir.path()).unwrap();
    assert_eq!(read, ds);
    let cfg = ProbeTrainConfig { max_epochs: 5, ..ProbeTrainConfig::new(0) };
    for task in [ProbeTask::Presence, ProbeTask::FreeSpace, ProbeTask::Reachability] {
        train_probe(task, &read, &cfg).unwrap();
    }
    assert_eq!(read, ds);
    assert_eq!(dir_bytes(dir.path()), before);
}

#[test]
fn saved_probe_scores_identically() {
    let ds = separable([200, 50, 50], 4, 1);
    let cfg = ProbeTrainConfig { max_epochs: 10, ..ProbeTrainConfig::new(0) };
    let (m, summary) = train_probe(ProbeTask::Presence, &ds, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path(), &summary).unwrap();
    let (back, s2) = ProbeModel::load(dir.path()).unwrap();
    assert_eq!(back, m);
    assert_eq!(s2, summary);
    assert_eq!(eval_probe(&back, &ds, Split::Test).unwrap(), eval_probe(&m, &ds, Split::Test).unwrap());
}

#[test]
fn missing_dataset_file_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    separable([4, 2, 2], 3, 0).write(dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("labels.bin")).unwrap();
    match ProbeDataset::read(dir.path()) {
        Err(Error::MissingArtifact(p)) => assert!(p.ends_with("labels.bin")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn report_has_one_row_per_cell() {
    let rows: Vec<ProbeReportRow> = ProbeTask::ALL
        .iter()
        .flat_map(|&task| {
            ["inf", "rand"].map(|b| ProbeReportRow {
                task,
                pretraining: b.into(),
                pooling: if task == ProbeTask::Localization { Pooling::Grid } else { Pooling::Average },
                score: 0.5,
            })
        })
        .collect();
    let mut out = Vec::new();
    write_probe_report(&mut out, &rows).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 8);
    assert_eq!(lines[0], "task,pretraining,pooling,metric,score");
    assert_eq!(lines[3], "localization,inf,avg3x3,f1_micro,0.500000");
}

proptest! {
    #[test]
    fn free_space_decisions_survive_positive_logit_scaling(
        z in proptest::collection::vec(-5.0f64..5.0, FREE_SPACE_CLASSES),
        s in 0.01f64..100.0,
    ) {
        let scaled: Vec<f64> = z.iter().map(|v| v * s).collect();
        prop_assert_eq!(crate::agents::argmax(&z), crate::agents::argmax(&scaled));
    }

    #[test]
    fn f1_is_symmetric_and_bounded(bits in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..50)) {
        let (p, t): (Vec<bool>, Vec<bool>) = bits.into_iter().unzip();
        let f = micro_f1(&p, &t).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(f, micro_f1(&t, &p).unwrap());
    }
}

#[test]
fn names_parse_back() {
    for t in ProbeTask::ALL {
        assert_eq!(t.name().parse::<ProbeTask>().unwrap(), t);
    }
    for p in Pooling::ALL {
        assert_eq!(p.name().parse::<Pooling>().unwrap(), p);
        assert_eq!(serde_json::to_string(&p).unwrap(), format!("\"{}\"", p.name()));
    }
    assert!("avg5x5".parse::<Pooling>().is_err());
}
