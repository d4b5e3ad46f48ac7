use plausiscene::io::{load_dataset, load_report, load_scene, report_to_json, save_scene, write_dataset, write_text};
use plausiscene::synth::{generate_dataset, Split, SynthConfig};
use plausiscene::trainer::{evaluate, refine, train, LabeledGraph, RefineConfig, TrainConfig};
use plausiscene::{build_graph, Discriminator, Error};

fn small_config() -> SynthConfig {
    SynthConfig {
        count: 48,
        seed: 9,
        ..SynthConfig::default()
    }
}

fn labeled(data: &plausiscene::io::LoadedDataset, split: Split) -> Vec<LabeledGraph> {
    data.split(split)
        .map(|(_, s)| LabeledGraph::from_scene(s).unwrap())
        .collect()
}

#[test]
fn dataset_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let entries = generate_dataset(&cfg).unwrap();
    let hash = write_dataset(dir.path(), &cfg, &entries).unwrap();
    let data = load_dataset(dir.path()).unwrap();
    assert_eq!(data.info.manifest_sha256, hash);
    assert_eq!(data.scenes.len(), entries.len());
    for (loaded, entry) in data.scenes.iter().zip(&entries) {
        assert_eq!(loaded, &entry.scene);
        assert_eq!(build_graph(loaded).unwrap(), build_graph(&entry.scene).unwrap());
    }
}

#[test]
fn train_save_load_evaluate_refine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    write_dataset(dir.path(), &cfg, &generate_dataset(&cfg).unwrap()).unwrap();
    let data = load_dataset(dir.path()).unwrap();
    let (train_set, val_set, test_set) = (
        labeled(&data, Split::Train),
        labeled(&data, Split::Val),
        labeled(&data, Split::Test),
    );

    let train_cfg = TrainConfig {
        epochs: 3,
        hidden: 16,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let (disc, report) = train(&train_set, &val_set, &train_cfg).unwrap();
    assert!(disc.trained);
    assert!(report.epochs.iter().all(|e| e.train_loss.is_finite()));

    let weights = dir.path().join("weights.bin");
    disc.save(&weights).unwrap();
    let loaded = Discriminator::load(&weights).unwrap();
    assert_eq!(loaded.digest(), disc.digest());
    assert_eq!(
        evaluate(&loaded, &test_set).unwrap(),
        evaluate(&disc, &test_set).unwrap()
    );

    let report_path = dir.path().join("report.json");
    write_text(&report_path, &report_to_json(&report)).unwrap();
    assert_eq!(load_report(&report_path).unwrap(), report);

    let (_, scene) = data.split(Split::Test).find(|(r, _)| r.label == "implausible").unwrap();
    let out = refine(
        scene,
        &disc,
        &RefineConfig {
            steps: 5,
            ..RefineConfig::default()
        },
    )
    .unwrap();
    assert!(out.final_score >= out.initial_score);
    assert_eq!(out.scene.len(), scene.len());
    for (a, b) in out.scene.elements.iter().zip(&scene.elements) {
        assert_eq!(a.kind, b.kind);
        assert_eq!(a.bbox.half_extents, b.bbox.half_extents);
    }
    let refined_path = dir.path().join("refined.json");
    save_scene(&refined_path, &out.scene).unwrap();
    assert_eq!(load_scene(&refined_path).unwrap(), out.scene);
}

#[test]
fn untrained_discriminator_cannot_refine() {
    let cfg = small_config();
    let scene = generate_dataset(&cfg).unwrap().remove(0).scene;
    let disc = Discriminator::new(Default::default(), 0).unwrap();
    assert!(matches!(
        refine(&scene, &disc, &RefineConfig::default()),
        Err(Error::UntrainedDiscriminator)
    ));
}
