//! Box-level physical plausibility and localization metrics.
//!
//! The floor acts as the half-space below its top plane. Human segments are
//! not tested against each other.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    boxes_intersect, iou2d_bev, iou3d, mc_overlap_volume, min_surface_distance, MonteCarlo, OrientedBox,
};
use crate::scenegraph::{BodySegment, HumanPose, NodeKind, ObjectClass, Scene};

/// Default contact threshold in meters.
pub const DEFAULT_TAU: f64 = 0.02;

/// Objects whose top is at most this far above an element's bottom still count as beneath it.
const SUPPORT_SLACK: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub mc: MonteCarlo,
    pub tau: f64,
    pub surface_samples: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            mc: MonteCarlo::default(),
            tau: DEFAULT_TAU,
            surface_samples: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    /// `None` when the scene has no human segments.
    pub non_collision: Option<f64>,
    pub contact: Option<f64>,
    pub penetration_volume: f64,
    pub max_support_gap: f64,
}

/// Elements that should rest on something: furniture, feet, and the pelvis of a seated human.
pub fn is_gravity_supported(scene: &Scene, index: usize) -> bool {
    match scene.elements[index].kind {
        NodeKind::Object(c) => c != ObjectClass::Floor,
        NodeKind::BodySegment(s) => s.is_foot() || (s == BodySegment::Pelvis && scene.pose == Some(HumanPose::Sitting)),
    }
}

fn footprints_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    let (alo, ahi) = a.footprint();
    let (blo, bhi) = b.footprint();
    alo[0] < bhi[0] && blo[0] < ahi[0] && alo[1] < bhi[1] && blo[1] < ahi[1]
}

/// Vertical clearance between the element's lowest point and the highest
/// surface beneath it (the floor, or any object under its footprint).
pub fn support_gap(scene: &Scene, index: usize) -> f64 {
    let el = &scene.elements[index].bbox;
    let bottom = el.min_z();
    let mut support = scene.floor_top();
    for (j, other) in scene.elements.iter().enumerate() {
        if j == index || !matches!(other.kind, NodeKind::Object(_)) || other.kind.is_floor() {
            continue;
        }
        let top = other.bbox.max_z();
        if top <= bottom + SUPPORT_SLACK && top > support && footprints_overlap(el, &other.bbox) {
            support = top;
        }
    }
    (bottom - support).max(0.0)
}

/// Largest support gap over gravity-supported elements (0 if there are none).
pub fn max_support_gap(scene: &Scene) -> f64 {
    (0..scene.len())
        .filter(|&i| is_gravity_supported(scene, i))
        .map(|i| support_gap(scene, i))
        .fold(0.0, f64::max)
}

/// Monte-Carlo volume of `b` lying below the plane `z = level`.
pub fn volume_below(b: &OrientedBox, level: f64, mc: &MonteCarlo) -> f64 {
    if b.min_z() >= level {
        return 0.0;
    }
    if b.max_z() <= level {
        return b.volume();
    }
    let samples = mc.samples.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
    let below = (0..samples).filter(|_| b.sample_interior(&mut rng).z < level).count();
    b.volume() * below as f64 / samples as f64
}

/// Overlap between element `i` and element `j`, treating the floor as a half-space.
pub fn pair_overlap(scene: &Scene, i: usize, j: usize, mc: &MonteCarlo) -> f64 {
    let (a, b) = (&scene.elements[i], &scene.elements[j]);
    if a.kind.is_floor() {
        return volume_below(&b.bbox, a.bbox.max_z(), mc);
    }
    if b.kind.is_floor() {
        return volume_below(&a.bbox, b.bbox.max_z(), mc);
    }
    mc_overlap_volume(&a.bbox, &b.bbox, mc.samples, mc.seed)
}

/// Total pairwise interpenetration volume, excluding human–human pairs.
pub fn penetration_volume(scene: &Scene, mc: &MonteCarlo) -> f64 {
    let mut total = 0.0;
    for i in 0..scene.len() {
        for j in i + 1..scene.len() {
            if scene.elements[i].kind.is_segment() && scene.elements[j].kind.is_segment() {
                continue;
            }
            total += pair_overlap(scene, i, j, mc);
        }
    }
    total
}

/// Volume-weighted fraction of human-segment samples that lie inside no object
/// and not below the floor top.
pub fn non_collision_score(scene: &Scene, samples: usize, seed: u64) -> Result<f64> {
    let segments: Vec<&OrientedBox> = scene
        .elements
        .iter()
        .filter(|e| e.kind.is_segment())
        .map(|e| &e.bbox)
        .collect();
    if segments.is_empty() {
        return Err(Error::NoHumanSegments);
    }
    let objects: Vec<&OrientedBox> = scene
        .elements
        .iter()
        .filter(|e| matches!(e.kind, NodeKind::Object(_)) && !e.kind.is_floor())
        .map(|e| &e.bbox)
        .collect();
    let floor_top = scene.floor().map(|f| f.bbox.max_z());
    let samples = samples.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut free, mut total) = (0.0, 0.0);
    for seg in segments {
        let hits = objects.iter().any(|o| boxes_intersect(seg, o, 0.0)) || floor_top.is_some_and(|z| seg.min_z() < z);
        let clear = if hits {
            (0..samples)
                .filter(|_| {
                    let p = seg.sample_interior(&mut rng);
                    floor_top.is_none_or(|z| p.z >= z) && !objects.iter().any(|o| o.contains(p, 0.0))
                })
                .count()
        } else {
            samples
        };
        free += seg.volume() * clear as f64 / samples as f64;
        total += seg.volume();
    }
    Ok(free / total)
}

/// 1 if any contact segment (feet, pelvis, hands) is within `tau` of the floor
/// or an object, else 0.
pub fn contact_score(scene: &Scene, tau: f64, surface_samples: usize) -> Result<f64> {
    if scene.segment_indices().next().is_none() {
        return Err(Error::NoHumanSegments);
    }
    let floor_top = scene.floor().map(|f| f.bbox.max_z());
    let within = |d: f64| d <= tau + 1e-9;
    for seg in scene.elements.iter() {
        let NodeKind::BodySegment(s) = seg.kind else { continue };
        if !s.is_contact() {
            continue;
        }
        if floor_top.is_some_and(|z| within((seg.bbox.min_z() - z).max(0.0))) {
            return Ok(1.0);
        }
        for obj in &scene.elements {
            if matches!(obj.kind, NodeKind::Object(_))
                && !obj.kind.is_floor()
                && within(min_surface_distance(&seg.bbox, &obj.bbox, surface_samples))
            {
                return Ok(1.0);
            }
        }
    }
    Ok(0.0)
}

pub fn scene_metrics(scene: &Scene, cfg: &MetricsConfig) -> SceneMetrics {
    let has_human = scene.segment_indices().next().is_some();
    SceneMetrics {
        non_collision: has_human.then(|| non_collision_score(scene, cfg.mc.samples, cfg.mc.seed).unwrap_or(1.0)),
        contact: has_human.then(|| contact_score(scene, cfg.tau, cfg.surface_samples).unwrap_or(0.0)),
        penetration_volume: penetration_volume(scene, &cfg.mc),
        max_support_gap: max_support_gap(scene),
    }
}

/// Mean IoU3D and BEV IoU over corresponding non-floor elements.
pub fn scene_iou(scene: &Scene, reference: &Scene, mc: &MonteCarlo) -> Result<(f64, f64)> {
    let pairs = matched_elements(scene, reference)?;
    if pairs.is_empty() {
        return Ok((1.0, 1.0));
    }
    let n = pairs.len() as f64;
    let (s3, s2) = pairs.iter().fold((0.0, 0.0), |(s3, s2), (a, b)| {
        (s3 + iou3d(a, b, mc), s2 + iou2d_bev(a, b))
    });
    Ok((s3 / n, s2 / n))
}

fn matched_elements<'a>(scene: &'a Scene, reference: &'a Scene) -> Result<Vec<(&'a OrientedBox, &'a OrientedBox)>> {
    if scene.len() != reference.len() {
        return Err(Error::LengthMismatch(format!(
            "scene has {} elements, reference has {}",
            scene.len(),
            reference.len()
        )));
    }
    let mut out = Vec::with_capacity(scene.len());
    for (i, (a, b)) in scene.elements.iter().zip(&reference.elements).enumerate() {
        if a.kind != b.kind {
            return Err(Error::LengthMismatch(format!(
                "element {i} is {} but the reference has {}",
                a.kind.name(),
                b.kind.name()
            )));
        }
        if !a.kind.is_floor() {
            out.push((&a.bbox, &b.bbox));
        }
    }
    Ok(out)
}

/// One CSV row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scene_id: String,
    pub non_collision: Option<f64>,
    pub contact: Option<f64>,
    pub penetration_volume: f64,
    pub max_support_gap: f64,
    pub iou3d: Option<f64>,
    pub iou2d: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIou {
    pub count: usize,
    pub iou3d: f64,
    pub iou2d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub count: usize,
    pub non_collision: Option<f64>,
    pub contact: Option<f64>,
    pub penetration_volume: f64,
    pub max_support_gap: f64,
    pub iou3d: Option<f64>,
    pub iou2d: Option<f64>,
    /// Per element kind; empty without references.
    pub per_class: BTreeMap<String, ClassIou>,
    pub rows: Vec<MetricsRow>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Aggregates scene metrics; IoU columns are filled only when `references`
/// is non-empty, with elements matched by index.
pub fn dataset_metrics(scenes: &[Scene], references: &[Scene], cfg: &MetricsConfig) -> Result<DatasetMetrics> {
    if !references.is_empty() && references.len() != scenes.len() {
        return Err(Error::LengthMismatch(format!(
            "{} scenes but {} references",
            scenes.len(),
            references.len()
        )));
    }
    let per_scene: Vec<(SceneMetrics, Option<(f64, f64)>, Vec<(String, f64, f64)>)> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let m = scene_metrics(s, cfg);
            if references.is_empty() {
                return Ok((m, None, Vec::new()));
            }
            let r = &references[i];
            let iou = scene_iou(s, r, &cfg.mc)?;
            let classes = s
                .elements
                .iter()
                .zip(&r.elements)
                .filter(|(a, _)| !a.kind.is_floor())
                .map(|(a, b)| {
                    (
                        a.kind.name().to_string(),
                        iou3d(&a.bbox, &b.bbox, &cfg.mc),
                        iou2d_bev(&a.bbox, &b.bbox),
                    )
                })
                .collect();
            Ok((m, Some(iou), classes))
        })
        .collect::<Result<_>>()?;

    let mut per_class: BTreeMap<String, (usize, f64, f64)> = BTreeMap::new();
    for (_, _, classes) in &per_scene {
        for (name, a, b) in classes {
            let e = per_class.entry(name.clone()).or_default();
            e.0 += 1;
            e.1 += a;
            e.2 += b;
        }
    }
    let rows: Vec<MetricsRow> = per_scene
        .iter()
        .enumerate()
        .map(|(i, (m, iou, _))| MetricsRow {
            scene_id: i.to_string(),
            non_collision: m.non_collision,
            contact: m.contact,
            penetration_volume: m.penetration_volume,
            max_support_gap: m.max_support_gap,
            iou3d: iou.map(|v| v.0),
            iou2d: iou.map(|v| v.1),
        })
        .collect();
    Ok(DatasetMetrics {
        count: rows.len(),
        non_collision: mean_of(rows.iter().filter_map(|r| r.non_collision)),
        contact: mean_of(rows.iter().filter_map(|r| r.contact)),
        penetration_volume: mean_of(rows.iter().map(|r| r.penetration_volume)).unwrap_or(0.0),
        max_support_gap: mean_of(rows.iter().map(|r| r.max_support_gap)).unwrap_or(0.0),
        iou3d: mean_of(rows.iter().filter_map(|r| r.iou3d)),
        iou2d: mean_of(rows.iter().filter_map(|r| r.iou2d)),
        per_class: per_class
            .into_iter()
            .map(|(k, (n, a, b))| {
                (
                    k,
                    ClassIou {
                        count: n,
                        iou3d: a / n as f64,
                        iou2d: b / n as f64,
                    },
                )
            })
            .collect(),
        rows,
    })
}
