//! File formats: scene JSON, dataset directories, reports, trajectories,
//! metrics tables, graph dumps, and SVG training curves.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::MetricsRow;
use crate::scenegraph::{HumanPose, Label, Scene, SceneElement, SceneGraph, EDGE_DIST_DIM, EDGE_NORM_DIM};
use crate::synth::{AppliedCorruption, DatasetEntry, Split, SynthConfig, SYNTH_SCHEMA_VERSION};
use crate::trainer::{TrainReport, TrajectoryPoint};

pub const SCENE_SCHEMA_VERSION: u32 = 1;
pub const DATASET_SCHEMA_VERSION: u32 = 1;
pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const DATASET_FILE: &str = "dataset.json";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    schema_version: u32,
    elements: Vec<SceneElement>,
    label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pose: Option<HumanPose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    corruption: Option<AppliedCorruption>,
}

fn parse_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Reads `schema_version` before the full parse so mismatches are reported as such.
fn parse_versioned<T: DeserializeOwned>(text: &str, path: &Path, what: &str, expected: u32) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| parse_error(path, e))?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| parse_error(path, "missing schema_version"))?;
    if found != expected as u64 {
        return Err(Error::SchemaVersionMismatch {
            what: format!("{what} {}", path.display()),
            expected,
            found: found.min(u32::MAX as u64) as u32,
        });
    }
    serde_json::from_value(value).map_err(|e| parse_error(path, e))
}

/// Reads a synthesis config, rejecting unknown fields and other schema versions.
pub fn load_synth_config(path: &Path) -> Result<SynthConfig> {
    let cfg: SynthConfig = parse_versioned(&read_text(path)?, path, "synth config", SYNTH_SCHEMA_VERSION)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline. Floats use the shortest representation
/// that round-trips exactly.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory values serialize");
    s.push('\n');
    s
}

pub fn scene_to_json(scene: &Scene) -> String {
    to_json(&SceneFile {
        schema_version: SCENE_SCHEMA_VERSION,
        elements: scene.elements.clone(),
        label: scene.label,
        seed: scene.seed,
        pose: scene.pose,
        corruption: scene.corruption,
    })
}

pub fn scene_from_json(text: &str, path: &Path) -> Result<Scene> {
    let f: SceneFile = parse_versioned(text, path, "scene", SCENE_SCHEMA_VERSION)?;
    let scene = Scene {
        elements: f.elements,
        label: f.label,
        seed: f.seed,
        pose: f.pose,
        corruption: f.corruption,
    };
    scene.validate()?;
    Ok(scene)
}

pub fn save_scene(path: &Path, scene: &Scene) -> Result<()> {
    write_text(path, &scene_to_json(scene))
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    scene_from_json(&read_text(path)?, path)
}

/// One row of `manifest.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub label: String,
    pub seed: u64,
    pub corruption_kind: String,
    pub magnitude: Option<f64>,
    pub split: String,
}

impl ManifestRow {
    pub fn from_entry(e: &DatasetEntry) -> Self {
        let c = e.scene.corruption;
        Self {
            path: e.path.clone(),
            label: e.scene.label.as_str().to_string(),
            seed: e.seed,
            corruption_kind: c.map(|c| c.kind.as_str()).unwrap_or("none").to_string(),
            magnitude: c.map(|c| c.magnitude),
            split: e.split.as_str().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub schema_version: u32,
    pub count: usize,
    pub manifest_sha256: String,
    pub config: SynthConfig,
}

pub fn manifest_csv(rows: &[ManifestRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::BadConfig(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::BadConfig(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes scene files, `manifest.csv` and `dataset.json`; returns the manifest hash.
pub fn write_dataset(dir: &Path, cfg: &SynthConfig, entries: &[DatasetEntry]) -> Result<String> {
    fs::create_dir_all(dir.join("scenes")).map_err(|e| Error::io(dir, e))?;
    for e in entries {
        save_scene(&dir.join(&e.path), &e.scene)?;
    }
    let rows: Vec<ManifestRow> = entries.iter().map(ManifestRow::from_entry).collect();
    let manifest = manifest_csv(&rows)?;
    write_text(&dir.join(MANIFEST_FILE), &manifest)?;
    let hash = sha256_hex(manifest.as_bytes());
    let info = DatasetInfo {
        schema_version: DATASET_SCHEMA_VERSION,
        count: entries.len(),
        manifest_sha256: hash.clone(),
        config: cfg.clone(),
    };
    write_text(&dir.join(DATASET_FILE), &to_json(&info))?;
    Ok(hash)
}

pub fn read_dataset_info(dir: &Path) -> Result<DatasetInfo> {
    let path = dir.join(DATASET_FILE);
    parse_versioned(&read_text(&path)?, &path, "dataset", DATASET_SCHEMA_VERSION)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRow>> {
    let path = dir.join(MANIFEST_FILE);
    let mut r = csv::Reader::from_path(&path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(&path, io),
        other => parse_error(&path, format!("{other:?}")),
    })?;
    r.deserialize()
        .map(|row| row.map_err(|e| parse_error(&path, e)))
        .collect()
}

/// A dataset loaded from disk, scenes paired with their manifest rows.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub info: DatasetInfo,
    pub rows: Vec<ManifestRow>,
    pub scenes: Vec<Scene>,
}

impl LoadedDataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = (&ManifestRow, &Scene)> {
        self.rows
            .iter()
            .zip(&self.scenes)
            .filter(move |(r, _)| r.split == split.as_str())
    }
}

pub fn load_dataset(dir: &Path) -> Result<LoadedDataset> {
    let info = read_dataset_info(dir)?;
    let rows = read_manifest(dir)?;
    if rows.len() != info.count {
        return Err(Error::LengthMismatch(format!(
            "manifest lists {} scenes, dataset.json says {}",
            rows.len(),
            info.count
        )));
    }
    if let Some(r) = rows.iter().find(|r| Split::parse(&r.split).is_none()) {
        return Err(parse_error(
            &dir.join(MANIFEST_FILE),
            format!("unknown split '{}'", r.split),
        ));
    }
    let scenes = rows
        .iter()
        .map(|r| load_scene(&dir.join(&r.path)))
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedDataset { info, rows, scenes })
}

#[derive(Serialize, Deserialize)]
struct ReportFile {
    schema_version: u32,
    #[serde(flatten)]
    report: TrainReport,
}

pub fn report_to_json(report: &TrainReport) -> String {
    to_json(&ReportFile {
        schema_version: REPORT_SCHEMA_VERSION,
        report: report.clone(),
    })
}

pub fn load_report(path: &Path) -> Result<TrainReport> {
    let f: ReportFile = parse_versioned(&read_text(path)?, path, "report", REPORT_SCHEMA_VERSION)?;
    Ok(f.report)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `epoch,train_loss,train_accuracy,val_loss,val_accuracy`
pub fn report_csv(report: &TrainReport) -> String {
    let mut s = String::from("epoch,train_loss,train_accuracy,val_loss,val_accuracy\n");
    for e in &report.epochs {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            e.epoch,
            e.train_loss,
            e.train_accuracy,
            opt(e.val_loss),
            opt(e.val_accuracy)
        );
    }
    s
}

/// `step,score,penetration_volume,max_support_gap`
pub fn trajectory_csv(points: &[TrajectoryPoint]) -> String {
    let mut s = String::from("step,score,penetration_volume,max_support_gap\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            p.step,
            p.score,
            opt(p.penetration_volume),
            opt(p.max_support_gap)
        );
    }
    s
}

/// `scene_id,non_collision,contact,penetration_volume,max_support_gap,iou3d,iou2d`
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from("scene_id,non_collision,contact,penetration_volume,max_support_gap,iou3d,iou2d\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.scene_id,
            opt(r.non_collision),
            opt(r.contact),
            r.penetration_volume,
            r.max_support_gap,
            opt(r.iou3d),
            opt(r.iou2d)
        );
    }
    s
}

/// Node table: `node,kind,c0_x,c0_y,c0_z,…,c7_z`.
pub fn node_features_csv(g: &SceneGraph) -> String {
    let mut s = String::from("node,kind");
    for c in 0..8 {
        for axis in ["x", "y", "z"] {
            let _ = write!(s, ",c{c}_{axis}");
        }
    }
    s.push('\n');
    for i in 0..g.num_nodes() {
        let _ = write!(s, "{},{}", i, g.node_kinds[i].name());
        for v in g.node_features.row(i) {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// Edge table: `edge,src,dst,d0..d63,n0..n107`.
pub fn edge_features_csv(g: &SceneGraph) -> String {
    let mut s = String::from("edge,src,dst");
    for k in 0..EDGE_DIST_DIM {
        let _ = write!(s, ",d{k}");
    }
    for k in 0..EDGE_NORM_DIM {
        let _ = write!(s, ",n{k}");
    }
    s.push('\n');
    for (e, &(src, dst)) in g.edge_index.iter().enumerate() {
        let _ = write!(s, "{e},{src},{dst}");
        for v in g.edge_features.row(e) {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

fn polyline(points: &[(f64, f64)], x0: f64, x1: f64, y0: f64, y1: f64, rect: (f64, f64, f64, f64)) -> String {
    let (left, top, width, height) = rect;
    let sx = |x: f64| {
        left + if x1 > x0 {
            (x - x0) / (x1 - x0) * width
        } else {
            width / 2.0
        }
    };
    let sy = |y: f64| {
        top + height
            - if y1 > y0 {
                (y - y0) / (y1 - y0) * height
            } else {
                height / 2.0
            }
    };
    points
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Loss (left) and accuracy (right) curves per epoch as a standalone SVG.
pub fn training_curves_svg(report: &TrainReport) -> String {
    let (w, h) = (900.0, 360.0);
    let panels = [(60.0, 40.0, 360.0, 260.0), (500.0, 40.0, 360.0, 260.0)];
    let epochs: Vec<f64> = report.epochs.iter().map(|e| e.epoch as f64).collect();
    let (x0, x1) = (
        epochs.first().copied().unwrap_or(0.0),
        epochs.last().copied().unwrap_or(1.0),
    );
    let series = |f: &dyn Fn(&crate::trainer::EpochRecord) -> Option<f64>| -> Vec<(f64, f64)> {
        report
            .epochs
            .iter()
            .filter_map(|e| f(e).map(|v| (e.epoch as f64, v)))
            .collect()
    };
    let train_loss = series(&|e| Some(e.train_loss));
    let val_loss = series(&|e| e.val_loss);
    let train_acc = series(&|e| Some(e.train_accuracy));
    let val_acc = series(&|e| e.val_accuracy);
    let loss_max = train_loss
        .iter()
        .chain(&val_loss)
        .map(|p| p.1)
        .fold(0.0, f64::max)
        .max(1e-9);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let titles = [("loss", 0.0, loss_max), ("accuracy", 0.0, 1.0)];
    for (k, (title, lo, hi)) in titles.iter().enumerate() {
        let (l, t, pw, ph) = panels[k];
        let _ = writeln!(
            s,
            r##"<rect x="{l}" y="{t}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{title}</text>"#,
            l + pw / 2.0,
            t - 10.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{hi:.3}</text>"#,
            l - 4.0,
            t + 10.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{lo:.3}</text>"#,
            l - 4.0,
            t + ph
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#,
            l + pw / 2.0,
            t + ph + 30.0
        );
    }
    let lines = [
        (&train_loss, 0, 0.0, loss_max, "#1f77b4", "train"),
        (&val_loss, 0, 0.0, loss_max, "#ff7f0e", "val"),
        (&train_acc, 1, 0.0, 1.0, "#1f77b4", "train"),
        (&val_acc, 1, 0.0, 1.0, "#ff7f0e", "val"),
    ];
    for (pts, panel, lo, hi, color, name) in lines {
        if pts.is_empty() {
            continue;
        }
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"><title>{name}</title></polyline>"#,
            polyline(pts, x0, x1, lo, hi, panels[panel])
        );
    }
    let _ = writeln!(
        s,
        r##"<text x="60" y="345" fill="#1f77b4">train</text><text x="110" y="345" fill="#ff7f0e">val</text>"##
    );
    s.push_str("</svg>\n");
    s
}

/// Writes `<stem>.svg` next to `<stem>.csv`, given the SVG path.
pub fn write_plot(report: &TrainReport, svg_path: &Path) -> Result<PathBuf> {
    write_text(svg_path, &training_curves_svg(report))?;
    let csv_path = svg_path.with_extension("csv");
    write_text(&csv_path, &report_csv(report))?;
    Ok(csv_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, sample_scene};
    use crate::trainer::{EpochRecord, TrainConfig};

    #[test]
    fn scene_json_roundtrip_is_exact() {
        let cfg = SynthConfig::default();
        let scene = sample_scene(&cfg, 12).unwrap();
        let text = scene_to_json(&scene);
        let back = scene_from_json(&text, Path::new("mem")).unwrap();
        assert_eq!(back, scene);
        assert_eq!(scene_to_json(&back), text);
    }

    #[test]
    fn point_cloud_scene_roundtrips() {
        let cfg = SynthConfig {
            point_cloud: true,
            ..SynthConfig::default()
        };
        let scene = sample_scene(&cfg, 3).unwrap();
        let back = scene_from_json(&scene_to_json(&scene), Path::new("mem")).unwrap();
        assert_eq!(back, scene);
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let scene = sample_scene(&SynthConfig::default(), 1).unwrap();
        let text = scene_to_json(&scene).replacen("\"schema_version\": 1", "\"schema_version\": 2", 1);
        assert!(matches!(
            scene_from_json(&text, Path::new("x")),
            Err(Error::SchemaVersionMismatch {
                expected: 1,
                found: 2,
                ..
            })
        ));
        assert!(matches!(
            scene_from_json("{}", Path::new("x")),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn dataset_roundtrip_on_disk() {
        let cfg = SynthConfig {
            count: 6,
            seed: 4,
            ..SynthConfig::default()
        };
        let entries = generate_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let hash = write_dataset(dir.path(), &cfg, &entries).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.info.manifest_sha256, hash);
        assert_eq!(loaded.scenes.len(), 6);
        for (e, s) in entries.iter().zip(&loaded.scenes) {
            assert_eq!(&e.scene, s);
        }
        let header = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(header.starts_with("path,label,seed,corruption_kind,magnitude,split\n"));
    }

    #[test]
    fn report_roundtrip_and_plot() {
        let report = TrainReport {
            epochs: vec![
                EpochRecord {
                    epoch: 1,
                    train_loss: 0.7,
                    train_accuracy: 0.5,
                    val_loss: Some(0.69),
                    val_accuracy: Some(0.55),
                },
                EpochRecord {
                    epoch: 2,
                    train_loss: 0.5,
                    train_accuracy: 0.8,
                    val_loss: None,
                    val_accuracy: None,
                },
            ],
            best_epoch: 2,
            delta: 2.0,
            config: TrainConfig::default(),
            train_size: 10,
            val_size: 2,
            weights_path: Some("w.bin".into()),
            weights_sha256: None,
            wall_time_secs: 1.5,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        write_text(&path, &report_to_json(&report)).unwrap();
        assert_eq!(load_report(&path).unwrap(), report);
        let csv_path = write_plot(&report, &dir.path().join("curves.svg")).unwrap();
        let svg = fs::read_to_string(dir.path().join("curves.svg")).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("polyline"));
        assert_eq!(fs::read_to_string(csv_path).unwrap().lines().count(), 3);
    }
}
